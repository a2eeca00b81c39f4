//! Experiment harness: diversity pools, centroid similarity, the
//! rank-label negative control, stability studies and the end-to-end
//! pipeline.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    load_features, load_samples, synthetic_mixture, write_features, write_samples, Corpus,
    CorpusError, FeatureKind, FeatureMatrix, MixtureSpec,
};
use crate::diversity::{
    big_phi_inter, compute_centroids, global_slice, label_to_rank_window, per_domain_slice,
    quantile_partition, score_samples, CentroidSet, DiversityError, Provenance, ScoreKind,
};
use crate::probe::{
    save_checkpoint, train_domain_predictor, train_entropy_regressor, MlpParams, ProbeError,
    TrainConfig, TrainTrace,
};
use crate::pseudolabel::{
    build_probe_set, cluster, ClusterConfig, ClusterReport, ClusterResult, ProbeSet,
    ProbeSetConfig,
};
use crate::report::{digest_hex, fnv1a_ids, write_stable_json};
use crate::selection::{
    export_subset, overlap, predict_domains, score_pool, select, SelectionError, SelectionPolicy,
    SelectionReport, SelectionResult,
};
use crate::synthesis::{
    synthesize_all, DomainSpec, EndpointFeaturizer, EndpointGenerator, Featurizer, Generator,
    StubFeaturizer, StubGenerator, SynthesisConfig, SynthesisError, SynthesisOutcome, Transport,
};
use crate::vector;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Diversity(#[from] DiversityError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("need at least {needed} samples, found {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("{0}")]
    Invalid(String),
}

// ---------------------------------------------------------------- pools

/// A diversity pool: one percentile slice of one score kind.
///
/// `label` uses the table convention, so `(80, 100)` is the most diverse
/// fifth (lowest similarity) and `(0, 20)` the least diverse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kind: ScoreKind,
    pub label: (f64, f64),
    #[serde(default = "yes")]
    pub per_domain: bool,
}

fn yes() -> bool {
    true
}

/// Ids in the pool described by `spec`, with centroids computed from
/// `labels` (true or pseudo).
pub fn build_pool(
    features: &FeatureMatrix,
    labels: &[usize],
    n_domains: usize,
    spec: &PoolSpec,
) -> Result<Vec<String>, HarnessError> {
    let centroids = compute_centroids(features, labels, n_domains, None)?;
    let scores = score_samples(features, labels, &centroids, spec.kind)?;
    let (lo, hi) = label_to_rank_window(spec.label.0, spec.label.1)?;
    let slice = if spec.per_domain {
        per_domain_slice(&scores, lo, hi)?
    } else {
        global_slice(&scores, lo, hi)?
    };
    Ok(slice.ids)
}

/// Mean pairwise distance between the per-domain centroids of a pool.
pub fn pool_phi_inter(
    features: &FeatureMatrix,
    labels: &[usize],
    n_domains: usize,
    pool: &[String],
) -> Result<f64, HarnessError> {
    let keep: HashSet<&str> = pool.iter().map(String::as_str).collect();
    let pos: Vec<usize> = (0..features.len())
        .filter(|&i| keep.contains(features.ids()[i].as_str()))
        .collect();
    let sub = features.select(&pos);
    let sub_labels: Vec<usize> = pos.iter().map(|&i| labels[i]).collect();
    Ok(big_phi_inter(&compute_centroids(&sub, &sub_labels, n_domains, None)?)?)
}

// ---------------------------------------------------- centroid similarity

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CentroidSimilarity {
    /// `run<r>/<domain>` for every centroid, run-major.
    pub labels: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

/// Full cosine matrix over every centroid of every set.
pub fn centroid_similarity_report(sets: &[CentroidSet]) -> Result<CentroidSimilarity, HarnessError> {
    let dim = sets.first().map_or(0, CentroidSet::dim);
    let mut labels = Vec::new();
    let mut vecs: Vec<&[f64]> = Vec::new();
    for (r, s) in sets.iter().enumerate() {
        if s.dim() != dim {
            return Err(HarnessError::DimMismatch {
                expected: dim,
                found: s.dim(),
            });
        }
        for k in 0..s.k() {
            labels.push(format!("run{r}/{}", s.names()[k]));
            vecs.push(s.vector(k));
        }
    }
    let n = vecs.len();
    let mut matrix = vec![vec![0.0; n]; n];
    for i in 0..n {
        matrix[i][i] = 1.0;
        for j in i + 1..n {
            let c = vector::cosine(vecs[i], vecs[j]).expect("centroids are non-zero");
            matrix[i][j] = c;
            matrix[j][i] = c;
        }
    }
    Ok(CentroidSimilarity { labels, matrix })
}

/// `out[a][b][k]` = cosine between run `a` and run `b` centroids of domain `k`.
pub fn cross_run_similarity(sets: &[CentroidSet]) -> Result<Vec<Vec<Vec<f64>>>, HarnessError> {
    let k = sets.first().map_or(0, CentroidSet::k);
    if sets.iter().any(|s| s.k() != k) {
        return Err(HarnessError::Invalid("runs disagree on domain count".into()));
    }
    let dim = sets.first().map_or(0, CentroidSet::dim);
    if let Some(s) = sets.iter().find(|s| s.dim() != dim) {
        return Err(HarnessError::DimMismatch {
            expected: dim,
            found: s.dim(),
        });
    }
    let r = sets.len();
    let mut out = vec![vec![vec![0.0; k]; r]; r];
    for a in 0..r {
        out[a][a] = vec![1.0; k];
        for b in a + 1..r {
            for d in 0..k {
                let c = vector::cosine(sets[a].vector(d), sets[b].vector(d)).expect("non-zero");
                out[a][b][d] = c;
                out[b][a][d] = c;
            }
        }
    }
    Ok(out)
}

// ------------------------------------------------------ negative control

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    pub train: TrainConfig,
    pub holdout_frac: f64,
    pub split_seed: u64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            holdout_frac: 0.1,
            split_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ControlReport {
    pub samples: usize,
    pub quartile_sizes: Vec<usize>,
    pub holdout_accuracy: f64,
    pub train_accuracy: f64,
    pub trace: TrainTrace,
}

pub const QUARTILES: usize = 4;

/// Ascending-quartile label per row (ties by id).
pub fn quartile_labels(ids: &[String], scores: &[f64]) -> Result<Vec<usize>, HarnessError> {
    let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    let pos: std::collections::HashMap<&str, usize> =
        refs.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut labels = vec![0; ids.len()];
    for q in 0..QUARTILES {
        let lo = 100.0 * q as f64 / QUARTILES as f64;
        let hi = 100.0 * (q + 1) as f64 / QUARTILES as f64;
        for id in quantile_partition(&refs, scores, lo, hi)?.ids {
            labels[pos[id.as_str()]] = q;
        }
    }
    Ok(labels)
}

/// Train a classifier to predict each row's quartile of `scores`. Per-row
/// features carry no information about where a row sits in the population
/// ranking unless the ranking follows the feature geometry.
pub fn diversity_label_control(
    features: &FeatureMatrix,
    scores: &[f64],
    cfg: &ControlConfig,
) -> Result<ControlReport, HarnessError> {
    let n = features.len();
    if n < QUARTILES * QUARTILES {
        return Err(HarnessError::TooFewSamples {
            needed: QUARTILES * QUARTILES,
            found: n,
        });
    }
    if scores.len() != n {
        return Err(HarnessError::Invalid(format!("{} scores for {n} rows", scores.len())));
    }
    let labels = quartile_labels(features.ids(), scores)?;
    let mut quartile_sizes = vec![0; QUARTILES];
    for &l in &labels {
        quartile_sizes[l] += 1;
    }
    let probe = ProbeSet::from_labeled(
        features.ids().to_vec(),
        features.rows().map(<[f64]>::to_vec).collect(),
        labels,
        QUARTILES,
        cfg.holdout_frac,
        cfg.split_seed,
    );
    let (_, trace) = train_domain_predictor(&probe, &cfg.train)?;
    Ok(ControlReport {
        samples: n,
        quartile_sizes,
        holdout_accuracy: *trace.holdout_metric.last().unwrap_or(&f64::NAN),
        train_accuracy: trace.final_train_metric,
        trace,
    })
}

/// Scores whose quartiles coincide with the given domain labels when the
/// domains are equal-sized: the positive control.
pub fn aligned_scores(labels: &[usize]) -> Vec<f64> {
    labels.iter().map(|&l| l as f64).collect()
}

// -------------------------------------------------------------- pipeline

/// Where a generator or featurizer comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClientConfig {
    /// Deterministic offline stand-in. The stub featurizer needs reference
    /// means, taken from the mixture's true means or the corpus labels.
    Stub {
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_spread")]
        spread: f64,
    },
    Endpoint { transport: Transport },
}

fn default_spread() -> f64 {
    0.6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CentroidSource {
    Synthesize {
        /// Defaults to one generic description per domain name.
        #[serde(default)]
        domains: Option<Vec<DomainSpec>>,
        generator: ClientConfig,
        featurizer: ClientConfig,
        #[serde(default)]
        config: SynthesisConfig,
    },
    /// A saved centroid set (JSON).
    File { path: PathBuf },
    /// Means of the corpus's own domain labels.
    Labels,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum InputConfig {
    /// Generated Gaussian mixture; one feature matrix serves as both the
    /// embedding-layer and hidden-layer view.
    Mixture { spec: MixtureSpec },
    Files {
        corpus: PathBuf,
        embedding_features: PathBuf,
        /// Defaults to the embedding features.
        #[serde(default)]
        hidden_features: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub input: InputConfig,
    pub centroids: CentroidSource,
    pub cluster: ClusterConfig,
    pub probe_set: ProbeSetConfig,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub selection: SelectionPolicy,
    /// Write the selected records as JSONL.
    pub export: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: InputConfig::Mixture {
                spec: separable_mixture(0),
            },
            centroids: CentroidSource::Synthesize {
                domains: None,
                generator: ClientConfig::Stub {
                    seed: 0,
                    spread: default_spread(),
                },
                featurizer: ClientConfig::Stub {
                    seed: 0,
                    spread: default_spread(),
                },
                config: SynthesisConfig::default(),
            },
            cluster: ClusterConfig::default(),
            probe_set: ProbeSetConfig {
                m: 1000,
                ..ProbeSetConfig::default()
            },
            stage1: TrainConfig::default(),
            stage2: TrainConfig::regressor_default(),
            selection: SelectionPolicy::default(),
            export: true,
        }
    }
}

/// K=4, d=32, 500 per domain, separation 10, std 0.1.
pub fn separable_mixture(seed: u64) -> MixtureSpec {
    MixtureSpec {
        n_domains: 4,
        per_domain_count: 500,
        dim: 32,
        centroid_separation: 10.0,
        within_std: 0.1,
        rng_seed: seed,
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Override every probe-training seed (init and shuffle, both stages).
    pub fn with_probe_seed(mut self, seed: u64) -> Self {
        self.stage1.init_seed = seed;
        self.stage1.shuffle_seed = seed.wrapping_add(1);
        self.stage2.init_seed = seed.wrapping_add(2);
        self.stage2.shuffle_seed = seed.wrapping_add(3);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Input,
    Synthesis,
    Cluster,
    ProbeSet,
    Stage1,
    Stage2,
    Score,
    Select,
    Export,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Debug, Error)]
#[error("stage {stage} failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

impl PipelineError {
    fn at<E: std::error::Error + Send + Sync + 'static>(stage: Stage) -> impl FnOnce(E) -> Self {
        move |e| Self {
            stage,
            source: Box::new(e),
        }
    }

    /// Whether the root cause is a filesystem problem.
    pub fn is_io(&self) -> bool {
        let mut cur: Option<&(dyn std::error::Error + 'static)> = Some(self.source.as_ref());
        while let Some(e) = cur {
            if e.is::<std::io::Error>() {
                return true;
            }
            cur = e.source();
        }
        false
    }
}

#[derive(Debug, Error)]
#[error("{0}")]
struct Msg(String);

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PipelineSummary {
    pub corpus_size: usize,
    pub probe_size: usize,
    pub pool_size: usize,
    pub selected: usize,
    pub centroid_provenance: Provenance,
    pub cluster_iterations: usize,
    pub stage1_holdout_accuracy: f64,
    pub stage2_holdout_mse: f64,
    pub selection_digest: String,
    pub artifacts: Vec<String>,
}

pub struct PipelineOutcome {
    pub summary: PipelineSummary,
    pub centroids: CentroidSet,
    pub synthesis: Option<SynthesisOutcome>,
    pub clustering: ClusterResult,
    pub probe: ProbeSet,
    pub psi_dom: MlpParams,
    pub psi_div: MlpParams,
    pub stage1_trace: TrainTrace,
    pub stage2_trace: TrainTrace,
    pub selection: SelectionResult,
    pub corpus: Corpus,
    pub embedding: FeatureMatrix,
    pub hidden: FeatureMatrix,
}

/// Loaded corpus and feature views.
pub struct Inputs {
    pub corpus: Corpus,
    pub embedding: FeatureMatrix,
    pub hidden: FeatureMatrix,
    /// Reference means for the stub featurizer.
    pub stub_means: Option<Vec<Vec<f64>>>,
    pub names: Vec<String>,
}

/// Per-sample domain labels and the domain names, when every sample has a
/// domain.
pub fn labels_from_corpus(corpus: &Corpus) -> Option<(Vec<usize>, Vec<String>)> {
    let mut names: Vec<String> = corpus.domain_names.clone().unwrap_or_default();
    let mut labels = Vec::with_capacity(corpus.len());
    for s in corpus.samples() {
        let d = s.domain.as_ref()?;
        let k = match names.iter().position(|n| n == d) {
            Some(k) => k,
            None => {
                names.push(d.clone());
                names.len() - 1
            }
        };
        labels.push(k);
    }
    Some((labels, names))
}

pub fn load_inputs(cfg: &InputConfig) -> Result<Inputs, PipelineError> {
    let err = PipelineError::at(Stage::Input);
    match cfg {
        InputConfig::Mixture { spec } => {
            let m = synthetic_mixture(spec).map_err(err)?;
            let hidden = m.features.clone().with_kind(FeatureKind::HiddenLayer);
            Ok(Inputs {
                names: spec.domain_names(),
                stub_means: Some(spec.true_means()),
                corpus: m.corpus,
                embedding: m.features,
                hidden,
            })
        }
        InputConfig::Files {
            corpus,
            embedding_features,
            hidden_features,
        } => {
            let c = load_samples(corpus).map_err(PipelineError::at(Stage::Input))?;
            let emb = load_features(embedding_features, &c).map_err(PipelineError::at(Stage::Input))?;
            let hidden = match hidden_features {
                Some(p) => load_features(p, &c).map_err(PipelineError::at(Stage::Input))?,
                None => emb.clone().with_kind(FeatureKind::HiddenLayer),
            };
            let (stub_means, names) = match labels_from_corpus(&c) {
                Some((labels, names)) => {
                    let cs = compute_centroids(&emb, &labels, names.len(), Some(names.clone()))
                        .map_err(PipelineError::at(Stage::Input))?;
                    (Some(cs.vectors().to_vec()), names)
                }
                None => (None, c.domain_names.clone().unwrap_or_default()),
            };
            Ok(Inputs {
                corpus: c,
                embedding: emb,
                hidden,
                stub_means,
                names,
            })
        }
    }
}

fn make_generator(cfg: &ClientConfig, names: &[String]) -> Box<dyn Generator> {
    match cfg {
        ClientConfig::Stub { seed, .. } => Box::new(StubGenerator::new(names.to_vec(), *seed)),
        ClientConfig::Endpoint { transport } => Box::new(EndpointGenerator {
            transport: transport.clone(),
        }),
    }
}

fn make_featurizer(cfg: &ClientConfig, means: Option<&Vec<Vec<f64>>>) -> Result<Box<dyn Featurizer>, Msg> {
    match cfg {
        ClientConfig::Stub { seed, spread } => {
            let means = means.ok_or_else(|| {
                Msg("stub featurizer needs a mixture input or domain-labelled corpus".into())
            })?;
            Ok(Box::new(StubFeaturizer::new(means.clone(), *spread, *seed)))
        }
        ClientConfig::Endpoint { transport } => Ok(Box::new(EndpointFeaturizer {
            transport: transport.clone(),
        })),
    }
}

/// Generic domain specs for a list of names.
pub fn generic_domains(names: &[String]) -> Vec<DomainSpec> {
    names
        .iter()
        .map(|n| DomainSpec {
            name: n.clone(),
            description: format!("tasks drawn from the {n} portion of the pool"),
            math_like: false,
            tau: None,
            injected: Vec::new(),
        })
        .collect()
}

/// Run synthesis with the configured clients.
pub fn run_synthesis(
    domains: &[DomainSpec],
    generator: &ClientConfig,
    featurizer: &ClientConfig,
    stub_means: Option<&Vec<Vec<f64>>>,
    cfg: &SynthesisConfig,
) -> Result<SynthesisOutcome, PipelineError> {
    let names: Vec<String> = domains.iter().map(|d| d.name.clone()).collect();
    let mut g = make_generator(generator, &names);
    let mut f = make_featurizer(featurizer, stub_means).map_err(PipelineError::at(Stage::Synthesis))?;
    synthesize_all(domains, g.as_mut(), f.as_mut(), cfg).map_err(PipelineError::at(Stage::Synthesis))
}

/// Centroids from the configured source; synthesis also returns its report.
pub fn resolve_centroids(
    source: &CentroidSource,
    inputs: &Inputs,
) -> Result<(CentroidSet, Option<SynthesisOutcome>), PipelineError> {
    match source {
        CentroidSource::Synthesize {
            domains,
            generator,
            featurizer,
            config,
        } => {
            let domains = domains.clone().unwrap_or_else(|| generic_domains(&inputs.names));
            let out = run_synthesis(&domains, generator, featurizer, inputs.stub_means.as_ref(), config)?;
            Ok((out.centroids.clone(), Some(out)))
        }
        CentroidSource::File { path } => {
            let text = std::fs::read_to_string(path).map_err(PipelineError::at(Stage::Synthesis))?;
            let cs: CentroidSet = serde_json::from_str(&text).map_err(PipelineError::at(Stage::Synthesis))?;
            Ok((cs, None))
        }
        CentroidSource::Labels => {
            let (labels, names) = labels_from_corpus(&inputs.corpus)
                .ok_or_else(|| Msg("corpus has unlabelled samples".into()))
                .map_err(PipelineError::at(Stage::Synthesis))?;
            let cs = compute_centroids(&inputs.embedding, &labels, names.len(), Some(names))
                .map_err(PipelineError::at(Stage::Synthesis))?;
            Ok((cs, None))
        }
    }
}

struct Writer<'a> {
    dir: Option<&'a Path>,
    written: Vec<String>,
}

impl Writer<'_> {
    fn json<T: Serialize + ?Sized>(&mut self, stage: Stage, name: &str, v: &T) -> Result<(), PipelineError> {
        if let Some(d) = self.dir {
            write_stable_json(&d.join(name), v).map_err(PipelineError::at(stage))?;
            self.written.push(name.to_owned());
        }
        Ok(())
    }

    fn features(&mut self, name: &str, f: &FeatureMatrix) -> Result<(), PipelineError> {
        if let Some(d) = self.dir {
            write_features(f, &d.join(name)).map_err(PipelineError::at(Stage::Input))?;
            self.written.push(name.to_owned());
        }
        Ok(())
    }

    fn checkpoint(&mut self, stage: Stage, name: &str, p: &MlpParams, cfg: &TrainConfig) -> Result<(), PipelineError> {
        if let Some(d) = self.dir {
            save_checkpoint(p, Some(cfg), &d.join(name)).map_err(PipelineError::at(stage))?;
            self.written.push(name.to_owned());
        }
        Ok(())
    }
}

/// On-disk probe set: ids, pseudo-labels and split. Features come from the
/// hidden-layer feature file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSetFile {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub holdout_ids: Vec<String>,
    #[serde(default)]
    pub class_counts: Vec<usize>,
}

impl ProbeSetFile {
    pub fn new(probe: &ProbeSet) -> Self {
        let mut class_counts = vec![0; probe.n_classes];
        for &l in &probe.labels {
            class_counts[l] += 1;
        }
        Self {
            ids: probe.ids.clone(),
            labels: probe.labels.clone(),
            n_classes: probe.n_classes,
            holdout_ids: probe.holdout_ids.clone(),
            class_counts,
        }
    }

    /// Rebuild the probe set with rows looked up in `hidden`.
    pub fn load(&self, hidden: &FeatureMatrix) -> Result<ProbeSet, HarnessError> {
        if self.labels.len() != self.ids.len() {
            return Err(HarnessError::Invalid(format!(
                "{} labels for {} probe ids",
                self.labels.len(),
                self.ids.len()
            )));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(HarnessError::Invalid(format!("label {l} >= n_classes {}", self.n_classes)));
        }
        let pos: std::collections::HashMap<&str, usize> =
            hidden.ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let features = self
            .ids
            .iter()
            .map(|id| {
                pos.get(id.as_str())
                    .map(|&i| hidden.row(i).to_vec())
                    .ok_or_else(|| HarnessError::Invalid(format!("probe id {id:?} not in feature file")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ProbeSet {
            ids: self.ids.clone(),
            features,
            labels: self.labels.clone(),
            n_classes: self.n_classes,
            holdout_ids: self.holdout_ids.clone(),
        })
    }
}

/// One pool row of `scores.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    pub entropy: f64,
    /// Domain predicted by the classifier probe.
    pub domain: usize,
}

/// Synthesis (or loaded centroids), clustering, probe-set curation, both
/// probe stages, scoring, selection and export. With `out_dir` every stage
/// writes its artifact there.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: Option<&Path>) -> Result<PipelineOutcome, PipelineError> {
    if let Some(d) = out_dir {
        std::fs::create_dir_all(d).map_err(PipelineError::at(Stage::Input))?;
    }
    let mut w = Writer {
        dir: out_dir,
        written: Vec::new(),
    };
    let inputs = load_inputs(&cfg.input)?;
    if let (Some(d), InputConfig::Mixture { .. }) = (out_dir, &cfg.input) {
        write_samples(&inputs.corpus, &d.join("corpus.jsonl")).map_err(PipelineError::at(Stage::Input))?;
        w.written.push("corpus.jsonl".into());
    }
    w.features("embedding.feat", &inputs.embedding)?;
    w.features("hidden.feat", &inputs.hidden)?;

    let (centroids, synthesis) = resolve_centroids(&cfg.centroids, &inputs)?;
    if let Some(out) = &synthesis {
        w.json(Stage::Synthesis, "synthesis.json", out)?;
    }
    w.json(Stage::Synthesis, "centroids.json", &centroids)?;

    // pseudo-labels
    let clustering = cluster(&inputs.embedding, &centroids, &cfg.cluster).map_err(PipelineError::at(Stage::Cluster))?;
    w.json(
        Stage::Cluster,
        "cluster.json",
        &ClusterReport::new(inputs.embedding.ids(), &centroids, &clustering),
    )?;

    // probe set, carved out of the corpus; the rest is the selection pool
    let k = centroids.k();
    let probe = build_probe_set(&inputs.hidden, &clustering.assignments, k, &HashSet::new(), &cfg.probe_set)
        .map_err(PipelineError::at(Stage::ProbeSet))?;
    w.json(Stage::ProbeSet, "probe_set.json", &ProbeSetFile::new(&probe))?;

    // stage 1; parameters are kept at checkpoint precision so a reloaded
    // checkpoint reproduces everything downstream
    let (mut psi_dom, stage1_trace) =
        train_domain_predictor(&probe, &cfg.stage1).map_err(PipelineError::at(Stage::Stage1))?;
    psi_dom.round_to_f32();
    w.checkpoint(Stage::Stage1, "psi_dom.ckpt", &psi_dom, &cfg.stage1)?;
    w.json(Stage::Stage1, "stage1_trace.json", &stage1_trace)?;

    // stage 2
    let (mut psi_div, stage2_trace) =
        train_entropy_regressor(&probe, &psi_dom, &cfg.stage2).map_err(PipelineError::at(Stage::Stage2))?;
    psi_div.round_to_f32();
    w.checkpoint(Stage::Stage2, "psi_div.ckpt", &psi_div, &cfg.stage2)?;
    w.json(Stage::Stage2, "stage2_trace.json", &stage2_trace)?;

    // score the pool
    let in_probe: HashSet<&str> = probe.ids.iter().map(String::as_str).collect();
    let pool_pos: Vec<usize> = (0..inputs.hidden.len())
        .filter(|&i| !in_probe.contains(inputs.hidden.ids()[i].as_str()))
        .collect();
    let pool = inputs.hidden.select(&pool_pos);
    let scores = score_pool(&psi_div, &pool).map_err(PipelineError::at(Stage::Score))?;
    let domain_of = predict_domains(&psi_dom, &pool).map_err(PipelineError::at(Stage::Score))?;
    let rows: Vec<ScoreRow> = pool
        .ids()
        .iter()
        .zip(&scores)
        .zip(&domain_of)
        .map(|((id, &entropy), &domain)| ScoreRow {
            id: id.clone(),
            entropy,
            domain,
        })
        .collect();
    w.json(Stage::Score, "scores.json", &rows)?;

    // select
    let selection = select(pool.ids().to_vec(), scores, domain_of, k, &cfg.selection)
        .map_err(PipelineError::at(Stage::Select))?;
    w.json(Stage::Select, "selection.json", &SelectionReport::new(&selection))?;
    if let Some(d) = out_dir {
        let mut text = selection.chosen_ids.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        std::fs::write(d.join("selected_ids.txt"), text).map_err(PipelineError::at(Stage::Select))?;
        w.written.push("selected_ids.txt".into());
        if cfg.export {
            export_subset(&inputs.corpus, &selection.chosen_ids, &d.join("selected.jsonl"))
                .map_err(PipelineError::at(Stage::Export))?;
            w.written.push("selected.jsonl".into());
        }
    }

    let mut artifacts = w.written.clone();
    artifacts.push("summary.json".into());
    let summary = PipelineSummary {
        corpus_size: inputs.corpus.len(),
        probe_size: probe.len(),
        pool_size: pool.len(),
        selected: selection.chosen_ids.len(),
        centroid_provenance: centroids.provenance(),
        cluster_iterations: clustering.iterations_run,
        stage1_holdout_accuracy: *stage1_trace.holdout_metric.last().unwrap_or(&f64::NAN),
        stage2_holdout_mse: *stage2_trace.holdout_metric.last().unwrap_or(&f64::NAN),
        selection_digest: digest_hex(selection.digest()),
        artifacts,
    };
    w.json(Stage::Export, "summary.json", &summary)?;
    Ok(PipelineOutcome {
        summary,
        centroids,
        synthesis,
        clustering,
        probe,
        psi_dom,
        psi_div,
        stage1_trace,
        stage2_trace,
        selection,
        corpus: inputs.corpus,
        embedding: inputs.embedding,
        hidden: inputs.hidden,
    })
}

// ------------------------------------------------------------- stability

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairOverlap {
    pub a: usize,
    pub b: usize,
    pub overlap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    /// `[run_a][run_b][domain]` cosine between synthesized centroids.
    pub centroid_similarity: Vec<Vec<Vec<f64>>>,
    pub selection_overlaps: Vec<PairOverlap>,
    /// Per pipeline run: digest of the chosen id sequence.
    pub selection_digests: Vec<String>,
    /// Per pipeline run: digest of the pool scores.
    pub score_digests: Vec<String>,
}

impl StabilityReport {
    pub fn min_overlap(&self) -> f64 {
        self.selection_overlaps.iter().map(|p| p.overlap).fold(f64::INFINITY, f64::min)
    }

    /// Smallest same-domain cosine between two different runs.
    pub fn min_cross_run_similarity(&self) -> f64 {
        let mut m = f64::INFINITY;
        for (a, row) in self.centroid_similarity.iter().enumerate() {
            for (b, sims) in row.iter().enumerate() {
                if a != b {
                    m = sims.iter().copied().fold(m, f64::min);
                }
            }
        }
        m
    }
}

pub fn score_digest(scores: &[f64]) -> String {
    let text: Vec<String> = scores.iter().map(|s| format!("{s:.16e}")).collect();
    digest_hex(fnv1a_ids(&text))
}

/// Re-run synthesis under each seed (generator, featurizer and sampling
/// streams all reseeded) and the pipeline under each probe seed.
pub fn stability_study(
    base: &PipelineConfig,
    synthesis_seeds: &[u64],
    probe_seeds: &[u64],
) -> Result<StabilityReport, PipelineError> {
    let mut sets = Vec::new();
    if let CentroidSource::Synthesize {
        domains,
        generator,
        featurizer,
        config,
    } = &base.centroids
    {
        let inputs = load_inputs(&base.input)?;
        let domains = domains.clone().unwrap_or_else(|| generic_domains(&inputs.names));
        for &s in synthesis_seeds {
            let reseed = |c: &ClientConfig| match c {
                ClientConfig::Stub { spread, .. } => ClientConfig::Stub { seed: s, spread: *spread },
                other => other.clone(),
            };
            let cfg = SynthesisConfig {
                rng_seed: s,
                ..config.clone()
            };
            let out = run_synthesis(&domains, &reseed(generator), &reseed(featurizer), inputs.stub_means.as_ref(), &cfg)?;
            sets.push(out.centroids);
        }
    }
    let centroid_similarity = cross_run_similarity(&sets).map_err(PipelineError::at(Stage::Synthesis))?;
    let mut selections = Vec::new();
    let mut score_digests = Vec::new();
    for &s in probe_seeds {
        let out = run_pipeline(&base.clone().with_probe_seed(s), None)?;
        score_digests.push(score_digest(&out.selection.scores));
        selections.push(out.selection.chosen_ids);
    }
    let mut selection_overlaps = Vec::new();
    for a in 0..selections.len() {
        for b in a + 1..selections.len() {
            selection_overlaps.push(PairOverlap {
                a,
                b,
                overlap: overlap(&selections[a], &selections[b]).map_err(PipelineError::at(Stage::Select))?,
            });
        }
    }
    Ok(StabilityReport {
        centroid_similarity,
        selection_overlaps,
        selection_digests: selections.iter().map(|s| digest_hex(fnv1a_ids(s))).collect(),
        score_digests,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diversity::{default_names, QUINTILES};

    fn small_mixture() -> crate::corpus::Mixture {
        synthetic_mixture(&MixtureSpec {
            n_domains: 3,
            per_domain_count: 40,
            dim: 6,
            centroid_separation: 5.0,
            within_std: 0.5,
            rng_seed: 2,
        })
        .unwrap()
    }

    #[test]
    fn pools_partition_and_full_slice() {
        let m = small_mixture();
        let full = build_pool(&m.features, &m.labels, 3, &PoolSpec {
            kind: ScoreKind::Inter,
            label: (0.0, 100.0),
            per_domain: true,
        })
        .unwrap();
        assert_eq!(full.len(), 120);
        for kind in [ScoreKind::Inter, ScoreKind::Intra] {
            let mut all = Vec::new();
            for (lo, hi) in QUINTILES {
                all.extend(build_pool(&m.features, &m.labels, 3, &PoolSpec { kind, label: (lo, hi), per_domain: true }).unwrap());
            }
            let set: HashSet<&String> = all.iter().collect();
            assert_eq!(all.len(), 120);
            assert_eq!(set.len(), 120);
        }
    }

    #[test]
    fn similarity_matrix_shape() {
        let cs = CentroidSet::new(
            default_names(2),
            vec![vec![1.0, 0.0], vec![0.0, 2.0]],
            Provenance::Synthesized,
        )
        .unwrap();
        let r = centroid_similarity_report(&[cs.clone(), cs.clone()]).unwrap();
        assert_eq!(r.matrix.len(), 4);
        assert_eq!(r.matrix[0][1], 0.0);
        assert_eq!(r.matrix[0][2], 1.0);
        for i in 0..4 {
            assert_eq!(r.matrix[i][i], 1.0);
            for j in 0..4 {
                assert_eq!(r.matrix[i][j], r.matrix[j][i]);
            }
        }
        let other = CentroidSet::new(default_names(2), vec![vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 1.0]], Provenance::Synthesized)
            .unwrap();
        assert!(matches!(centroid_similarity_report(&[cs, other]), Err(HarnessError::DimMismatch { .. })));
    }

    #[test]
    fn quartiles_are_balanced() {
        let ids: Vec<String> = (0..10).map(|i| format!("i{i}")).collect();
        let scores: Vec<f64> = (0..10).map(|i| -(i as f64)).collect();
        let l = quartile_labels(&ids, &scores).unwrap();
        assert_eq!(l, vec![3, 3, 3, 2, 2, 1, 1, 1, 0, 0]);
    }

    #[test]
    fn control_rejects_tiny_input() {
        let m = small_mixture();
        let few = m.features.select(&[0, 1, 2]);
        assert!(matches!(
            diversity_label_control(&few, &[0.0, 1.0, 2.0], &ControlConfig::default()),
            Err(HarnessError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn config_roundtrips_through_json() {
        let cfg = PipelineConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(PipelineConfig::from_json(&text).unwrap(), cfg);
        let partial = PipelineConfig::from_json(r#"{"selection":{"variant":"top_fraction","frac":0.5}}"#).unwrap();
        assert_eq!(partial.selection, SelectionPolicy::TopFraction { frac: 0.5 });
        assert_eq!(partial.probe_set.m, 1000);
    }

    #[test]
    fn stage_errors_name_the_stage() {
        let cfg = PipelineConfig {
            probe_set: ProbeSetConfig {
                m: 1_000_000,
                ..Default::default()
            },
            ..PipelineConfig::default()
        };
        let err = run_pipeline(&cfg, None).err().expect("probe set too large");
        assert_eq!(err.stage, Stage::ProbeSet);
        assert!(err.to_string().starts_with("stage probe_set failed"));
        assert!(!err.is_io());
    }
}
