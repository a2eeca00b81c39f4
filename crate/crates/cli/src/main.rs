use std::collections::{HashMap, HashSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use divsel_core::corpus::{parse_samples, synthetic_mixture, Corpus, FeatureKind, FeatureMatrix, MixtureSpec};
use divsel_core::diversity::{
    compute_centroids, global_slice, label_to_rank_window, per_domain_slice, score_samples,
    CentroidSet, DiversityReport, ScoreKind, QUINTILES,
};
use divsel_core::harness::{
    aligned_scores, diversity_label_control, labels_from_corpus, load_inputs, pool_phi_inter,
    resolve_centroids, run_pipeline, stability_study, CentroidSource,
    ClientConfig, ControlConfig, Inputs, PipelineConfig, PipelineError, ProbeSetFile, ScoreRow,
    Stage,
};
use divsel_core::importance::{
    approx_error, brute_ratio, check_approximation, check_decomposition, density_ratio,
    deterministic_weight, load_instance, random_instance,
};
use divsel_core::probe::{
    parse_checkpoint, random_grad_check, save_checkpoint, train_domain_predictor,
    train_entropy_regressor, MlpParams,
};
use divsel_core::pseudolabel::{build_probe_set, cluster, ClusterReport};
use divsel_core::report::{to_stable_json, write_stable_json};
use divsel_core::selection::{export_subset, predict_domains, score_pool, select, SelectionPolicy, SelectionReport};
use divsel_core::synthesis::DomainSpec;

/// Diversity-driven data selection: synthesize domain centroids, pseudo-label,
/// train probe networks and keep the samples with the highest predicted
/// entropy.
#[derive(Parser, Debug)]
#[command(name = "divsel", version, about)]
struct Cli {
    /// JSON pipeline config (see README); defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override; what it reseeds depends on the subcommand.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "divsel-out")]
    out: PathBuf,
    /// Worker threads. Changes speed, never results.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Validate a samples file (and optional feature file) and write normalized copies.
    Ingest {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "embedding")]
        kind: LayerArg,
    },
    /// Generate a Gaussian mixture corpus with features.
    Mixture(MixtureArgs),
    #[command(subcommand)]
    Diversity(DiversityCmd),
    /// Synthesize domain centroids with the configured generator and featurizer.
    Synthesize {
        /// JSON list of domain specs; defaults to one generic spec per domain.
        #[arg(long)]
        domains: Option<PathBuf>,
    },
    /// Centroid-initialized k-means over embedding features.
    Cluster {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        centroids: PathBuf,
        /// Nearest-centroid assignment only, no Lloyd updates.
        #[arg(long)]
        freeze_centroids: bool,
    },
    #[command(subcommand)]
    Probe(ProbeCmd),
    /// Score a pool with the entropy regressor.
    Score {
        /// Hidden-layer features.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        psi_div: PathBuf,
        #[arg(long)]
        psi_dom: PathBuf,
        /// Drop these probe-set ids from the pool.
        #[arg(long)]
        probe_set: Option<PathBuf>,
    },
    /// Select from a scores file.
    Select {
        #[arg(long)]
        scores: PathBuf,
        /// Top fraction; overrides the configured policy.
        #[arg(long)]
        frac: Option<f64>,
        /// Number of domains (default: inferred from the policy or the scores).
        #[arg(long)]
        domains: Option<usize>,
        /// Export the chosen records from this samples file.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    #[command(subcommand)]
    Oracle(OracleCmd),
    #[command(subcommand)]
    Harness(HarnessCmd),
    #[command(subcommand)]
    Pipeline(PipelineCmd),
}

#[derive(Args, Debug)]
struct MixtureArgs {
    #[arg(long, default_value_t = 4)]
    domains: usize,
    #[arg(long, default_value_t = 500)]
    per_domain: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 10.0)]
    separation: f64,
    #[arg(long, default_value_t = 0.1)]
    std: f64,
}

#[derive(Args, Debug)]
struct FileInputs {
    #[arg(long)]
    samples: PathBuf,
    /// Embedding-layer features.
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_enum, default_value = "inter")]
    kind: KindArg,
}

#[derive(Subcommand, Debug)]
enum DiversityCmd {
    /// Per-sample scores and per-domain quintile slices.
    Score(FileInputs),
    /// One labelled slice, e.g. `--label 80-100` (most diverse fifth).
    Slice {
        #[command(flatten)]
        inputs: FileInputs,
        #[arg(long)]
        label: String,
        /// Rank over all samples instead of within each domain.
        #[arg(long)]
        global: bool,
    },
}

#[derive(Subcommand, Debug)]
enum ProbeCmd {
    /// Curate the probe set and train the domain classifier.
    TrainDom {
        /// Hidden-layer features.
        #[arg(long)]
        features: PathBuf,
        /// Cluster report from `divsel cluster`.
        #[arg(long)]
        cluster: PathBuf,
    },
    /// Train the entropy regressor against a frozen classifier.
    TrainDiv {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        probe_set: PathBuf,
        #[arg(long)]
        psi_dom: PathBuf,
    },
    /// Finite-difference check of both heads on random draws.
    GradCheck {
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 10)]
        draws: usize,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
    },
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// Toy instance JSON; without it, seeded random instances are checked.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    instances: usize,
}

#[derive(Subcommand, Debug)]
enum OracleCmd {
    /// Density ratio decomposition against the brute-force ratio.
    Prop1(OracleArgs),
    /// Deterministic-weight approximation error identity.
    Prop2(OracleArgs),
}

#[derive(Subcommand, Debug)]
enum HarnessCmd {
    /// Build a labelled diversity pool from the configured input.
    Pool {
        #[arg(long, value_enum, default_value = "inter")]
        kind: KindArg,
        #[arg(long)]
        label: String,
        #[arg(long)]
        global: bool,
    },
    /// Centroid similarity across synthesis seeds, selection overlap across probe seeds.
    Stability {
        #[arg(long, value_delimiter = ',', default_value = "0,1")]
        synthesis_seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "0,1")]
        probe_seeds: Vec<u64>,
    },
    /// Train a classifier on quartiles of inter-diversity (or, with --aligned, of the domain label).
    Control {
        #[arg(long)]
        aligned: bool,
    },
}

#[derive(Subcommand, Debug)]
enum PipelineCmd {
    /// Every stage end to end, artifacts in --out.
    Run,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Inter,
    Intra,
}

impl From<KindArg> for ScoreKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Inter => ScoreKind::Inter,
            KindArg::Intra => ScoreKind::Intra,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LayerArg {
    Embedding,
    Hidden,
}

// ------------------------------------------------------------------ errors

#[derive(Debug)]
enum Fail {
    Validation(String),
    Stage(String),
    Io(String),
}

impl Fail {
    fn code(&self) -> u8 {
        match self {
            Fail::Validation(_) => 2,
            Fail::Stage(_) => 3,
            Fail::Io(_) => 4,
        }
    }
}

impl Display for Fail {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Fail::Validation(m) => write!(f, "invalid input: {m}"),
            Fail::Stage(m) => write!(f, "{m}"),
            Fail::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

fn invalid(e: impl Display) -> Fail {
    Fail::Validation(e.to_string())
}

fn stage(e: impl Display) -> Fail {
    Fail::Stage(e.to_string())
}

impl From<PipelineError> for Fail {
    fn from(e: PipelineError) -> Self {
        if e.is_io() {
            Fail::Io(e.to_string())
        } else if e.stage == Stage::Input {
            Fail::Validation(e.to_string())
        } else {
            Fail::Stage(e.to_string())
        }
    }
}

type Result<T> = std::result::Result<T, Fail>;

// --------------------------------------------------------------------- io

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Fail::Io(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn read_corpus(path: &Path) -> Result<Corpus> {
    parse_samples(&read_text(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn read_features(path: &Path) -> Result<FeatureMatrix> {
    FeatureMatrix::from_bytes(&read(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn read_checkpoint(path: &Path) -> Result<MlpParams> {
    parse_checkpoint(&read(path)?)
        .map(|(p, _)| p)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))
}

struct Out<'a> {
    dir: &'a Path,
}

impl Out<'_> {
    fn path(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(self.dir).map_err(|e| Fail::Io(format!("{}: {e}", self.dir.display())))?;
        Ok(self.dir.join(name))
    }

    fn json<T: Serialize + ?Sized>(&self, name: &str, v: &T) -> Result<()> {
        let p = self.path(name)?;
        write_stable_json(&p, v).map_err(|e| Fail::Io(format!("{}: {e}", p.display())))
    }

    fn bytes(&self, name: &str, b: &[u8]) -> Result<()> {
        let p = self.path(name)?;
        std::fs::write(&p, b).map_err(|e| Fail::Io(format!("{}: {e}", p.display())))
    }
}

fn print<T: Serialize + ?Sized>(v: &T) -> Result<()> {
    println!("{}", to_stable_json(v).map_err(stage)?);
    Ok(())
}

// ------------------------------------------------------------------ helpers

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::from_json(&read_text(p)?).map_err(|e| invalid(format!("{}: {e}", p.display()))),
        None => Ok(PipelineConfig::default()),
    }
}

fn corpus_labels(corpus: &Corpus) -> Result<(Vec<usize>, Vec<String>)> {
    labels_from_corpus(corpus).ok_or_else(|| invalid("every sample needs a domain"))
}

/// `"80-100"` -> `(80, 100)`.
fn parse_label(s: &str) -> Result<(f64, f64)> {
    let s = s.trim().trim_start_matches('(').trim_end_matches(')');
    let (a, b) = s.split_once('-').ok_or_else(|| invalid(format!("label {s:?} is not X-Y")))?;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| invalid(format!("label {s:?}: {e}")));
    Ok((num(a)?, num(b)?))
}

fn labelled_inputs(samples: &Path, features: &Path) -> Result<(FeatureMatrix, Vec<usize>, Vec<String>)> {
    let corpus = read_corpus(samples)?;
    let feats = read_features(features)?.align_to(&corpus).map_err(invalid)?;
    let (labels, names) = corpus_labels(&corpus)?;
    Ok((feats, labels, names))
}

#[derive(Serialize)]
struct PoolReport {
    kind: ScoreKind,
    label: (f64, f64),
    rank_window: (f64, f64),
    per_domain: bool,
    size: usize,
    phi_inter: f64,
    corpus_phi_inter: f64,
    ids: Vec<String>,
}

fn pool_report(
    feats: &FeatureMatrix,
    labels: &[usize],
    k: usize,
    kind: ScoreKind,
    label: &str,
    global: bool,
) -> Result<PoolReport> {
    let label = parse_label(label)?;
    let window = label_to_rank_window(label.0, label.1).map_err(invalid)?;
    let centroids = compute_centroids(feats, labels, k, None).map_err(invalid)?;
    let scores = score_samples(feats, labels, &centroids, kind).map_err(stage)?;
    let slice = if global {
        global_slice(&scores, window.0, window.1)
    } else {
        per_domain_slice(&scores, window.0, window.1)
    }
    .map_err(invalid)?;
    let phi_inter = pool_phi_inter(feats, labels, k, &slice.ids).map_err(stage)?;
    let corpus_phi_inter = pool_phi_inter(feats, labels, k, feats.ids()).map_err(stage)?;
    Ok(PoolReport {
        kind,
        label,
        rank_window: window,
        per_domain: !global,
        size: slice.ids.len(),
        phi_inter,
        corpus_phi_inter,
        ids: slice.ids,
    })
}

#[derive(Deserialize)]
struct ClusterFile {
    ids: Vec<String>,
    assignments: Vec<usize>,
    final_centroids: CentroidSet,
}

// ----------------------------------------------------------------- commands

fn run(cli: Cli) -> Result<()> {
    let out = Out { dir: &cli.out };
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg = cfg.with_probe_seed(s);
    }
    let seed = cli.seed.unwrap_or(0);
    match cli.cmd {
        Cmd::Ingest { samples, features, kind } => {
            let corpus = read_corpus(&samples)?;
            out.bytes("samples.jsonl", corpus.to_jsonl().as_bytes())?;
            let mut dim = None;
            if let Some(f) = features {
                let kind = match kind {
                    LayerArg::Embedding => FeatureKind::EmbeddingLayer,
                    LayerArg::Hidden => FeatureKind::HiddenLayer,
                };
                let feats = read_features(&f)?.align_to(&corpus).map_err(invalid)?.with_kind(kind);
                let name = match kind {
                    FeatureKind::EmbeddingLayer => "embedding.feat",
                    FeatureKind::HiddenLayer => "hidden.feat",
                };
                out.bytes(name, &feats.to_bytes().map_err(invalid)?)?;
                dim = Some(feats.dim());
            }
            let domains: HashSet<&str> = corpus.samples().iter().filter_map(|s| s.domain.as_deref()).collect();
            print(&serde_json::json!({"samples": corpus.len(), "domains": domains.len(), "dim": dim}))
        }
        Cmd::Mixture(a) => {
            let spec = MixtureSpec {
                n_domains: a.domains,
                per_domain_count: a.per_domain,
                dim: a.dim,
                centroid_separation: a.separation,
                within_std: a.std,
                rng_seed: seed,
            };
            let m = synthetic_mixture(&spec).map_err(invalid)?;
            out.bytes("corpus.jsonl", m.corpus.to_jsonl().as_bytes())?;
            out.bytes("embedding.feat", &m.features.to_bytes().map_err(stage)?)?;
            out.json("mixture.json", &spec)?;
            print(&serde_json::json!({"samples": m.corpus.len(), "dim": spec.dim, "domains": spec.n_domains}))
        }
        Cmd::Diversity(DiversityCmd::Score(inp)) => {
            let (feats, labels, names) = labelled_inputs(&inp.samples, &inp.features)?;
            let centroids = compute_centroids(&feats, &labels, names.len(), Some(names)).map_err(invalid)?;
            let scores = score_samples(&feats, &labels, &centroids, inp.kind.into()).map_err(stage)?;
            let slices = QUINTILES
                .iter()
                .map(|&(lo, hi)| per_domain_slice(&scores, lo, hi))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(stage)?;
            out.json("diversity.json", &DiversityReport::new(&scores, &slices))?;
            print(&serde_json::json!({"samples": scores.len(), "slices": slices.len()}))
        }
        Cmd::Diversity(DiversityCmd::Slice { inputs, label, global }) => {
            let (feats, labels, names) = labelled_inputs(&inputs.samples, &inputs.features)?;
            let r = pool_report(&feats, &labels, names.len(), inputs.kind.into(), &label, global)?;
            out.json("slice.json", &r)?;
            print(&serde_json::json!({"size": r.size, "phi_inter": r.phi_inter}))
        }
        Cmd::Synthesize { domains } => {
            let CentroidSource::Synthesize {
                domains: cfg_domains,
                generator,
                featurizer,
                config,
            } = cfg.centroids
            else {
                return Err(invalid("config centroid source is not `synthesize`"));
            };
            let domains: Option<Vec<DomainSpec>> = match domains {
                Some(p) => Some(read_json(&p)?),
                None => cfg_domains,
            };
            let reseed = |c: ClientConfig| match (c, cli.seed) {
                (ClientConfig::Stub { spread, .. }, Some(s)) => ClientConfig::Stub { seed: s, spread },
                (c, _) => c,
            };
            let mut config = config;
            if let Some(s) = cli.seed {
                config.rng_seed = s;
            }
            let source = CentroidSource::Synthesize {
                domains,
                generator: reseed(generator),
                featurizer: reseed(featurizer),
                config,
            };
            let inputs: Inputs = load_inputs(&cfg.input)?;
            let (centroids, outcome) = resolve_centroids(&source, &inputs)?;
            out.json("synthesis.json", &outcome)?;
            out.json("centroids.json", &centroids)?;
            print(&serde_json::json!({"domains": centroids.k(), "dim": centroids.dim()}))
        }
        Cmd::Cluster {
            features,
            centroids,
            freeze_centroids,
        } => {
            let feats = read_features(&features)?;
            let init: CentroidSet = read_json(&centroids)?;
            let mut ccfg = cfg.cluster.clone();
            ccfg.freeze_centroids |= freeze_centroids;
            let r = cluster(&feats, &init, &ccfg).map_err(stage)?;
            let report = ClusterReport::new(feats.ids(), &init, &r);
            out.json("cluster.json", &report)?;
            print(&serde_json::json!({"iterations": r.iterations_run, "sizes": report.sizes}))
        }
        Cmd::Probe(ProbeCmd::TrainDom { features, cluster }) => {
            let hidden = read_features(&features)?;
            let c: ClusterFile = read_json(&cluster)?;
            if c.ids.len() != c.assignments.len() {
                return Err(invalid("cluster report ids and assignments differ in length"));
            }
            let by_id: HashMap<&str, usize> =
                c.ids.iter().map(String::as_str).zip(c.assignments.iter().copied()).collect();
            let assignments = hidden
                .ids()
                .iter()
                .map(|id| by_id.get(id.as_str()).copied().ok_or_else(|| invalid(format!("id {id:?} not clustered"))))
                .collect::<Result<Vec<_>>>()?;
            let k = c.final_centroids.k();
            let probe = build_probe_set(&hidden, &assignments, k, &HashSet::new(), &cfg.probe_set).map_err(stage)?;
            let (mut psi_dom, trace) = train_domain_predictor(&probe, &cfg.stage1).map_err(stage)?;
            psi_dom.round_to_f32();
            out.json("probe_set.json", &ProbeSetFile::new(&probe))?;
            save_checkpoint(&psi_dom, Some(&cfg.stage1), &out.path("psi_dom.ckpt")?).map_err(|e| Fail::Io(e.to_string()))?;
            out.json("stage1_trace.json", &trace)?;
            print(&serde_json::json!({"probe_size": probe.len(), "holdout_accuracy": trace.holdout_metric.last()}))
        }
        Cmd::Probe(ProbeCmd::TrainDiv {
            features,
            probe_set,
            psi_dom,
        }) => {
            let hidden = read_features(&features)?;
            let file: ProbeSetFile = read_json(&probe_set)?;
            let probe = file.load(&hidden).map_err(invalid)?;
            let psi_dom = read_checkpoint(&psi_dom)?;
            let (mut psi_div, trace) = train_entropy_regressor(&probe, &psi_dom, &cfg.stage2).map_err(stage)?;
            psi_div.round_to_f32();
            save_checkpoint(&psi_div, Some(&cfg.stage2), &out.path("psi_div.ckpt")?).map_err(|e| Fail::Io(e.to_string()))?;
            out.json("stage2_trace.json", &trace)?;
            print(&serde_json::json!({"holdout_mse": trace.holdout_metric.last()}))
        }
        Cmd::Probe(ProbeCmd::GradCheck { dim, draws, eps }) => {
            let r = random_grad_check(dim, draws, eps, seed).map_err(invalid)?;
            print(&r)?;
            if r.max() < 1e-4 {
                Ok(())
            } else {
                Err(stage(format!("max relative error {:e} >= 1e-4", r.max())))
            }
        }
        Cmd::Score {
            features,
            psi_div,
            psi_dom,
            probe_set,
        } => {
            let hidden = read_features(&features)?;
            let psi_div = read_checkpoint(&psi_div)?;
            let psi_dom = read_checkpoint(&psi_dom)?;
            let pool = match probe_set {
                Some(p) => {
                    let file: ProbeSetFile = read_json(&p)?;
                    let skip: HashSet<&str> = file.ids.iter().map(String::as_str).collect();
                    let keep: Vec<usize> =
                        (0..hidden.len()).filter(|&i| !skip.contains(hidden.ids()[i].as_str())).collect();
                    hidden.select(&keep)
                }
                None => hidden,
            };
            let scores = score_pool(&psi_div, &pool).map_err(invalid)?;
            let domains = predict_domains(&psi_dom, &pool).map_err(invalid)?;
            let rows: Vec<ScoreRow> = pool
                .ids()
                .iter()
                .zip(scores)
                .zip(domains)
                .map(|((id, entropy), domain)| ScoreRow {
                    id: id.clone(),
                    entropy,
                    domain,
                })
                .collect();
            out.json("scores.json", &rows)?;
            print(&serde_json::json!({"pool_size": rows.len()}))
        }
        Cmd::Select {
            scores,
            frac,
            domains,
            samples,
        } => {
            let rows: Vec<ScoreRow> = read_json(&scores)?;
            let policy = match frac {
                Some(frac) => SelectionPolicy::TopFraction { frac },
                None => cfg.selection.clone(),
            };
            let k = domains.unwrap_or_else(|| match &policy {
                SelectionPolicy::PerDomain { ratios } => ratios.len(),
                _ => rows.iter().map(|r| r.domain + 1).max().unwrap_or(1),
            });
            let ids = rows.iter().map(|r| r.id.clone()).collect();
            let values = rows.iter().map(|r| r.entropy).collect();
            let doms = rows.iter().map(|r| r.domain).collect();
            let result = select(ids, values, doms, k, &policy).map_err(invalid)?;
            let report = SelectionReport::new(&result);
            out.json("selection.json", &report)?;
            let mut text = result.chosen_ids.join("\n");
            if !text.is_empty() {
                text.push('\n');
            }
            out.bytes("selected_ids.txt", text.as_bytes())?;
            if let Some(s) = samples {
                let corpus = read_corpus(&s)?;
                export_subset(&corpus, &result.chosen_ids, &out.path("selected.jsonl")?).map_err(invalid)?;
            }
            print(&serde_json::json!({"selected": report.chosen_count, "digest": report.digest}))
        }
        Cmd::Oracle(cmd) => oracle(cmd, seed),
        Cmd::Harness(HarnessCmd::Pool { kind, label, global }) => {
            let inputs = load_inputs(&cfg.input)?;
            let (labels, names) = corpus_labels(&inputs.corpus)?;
            let r = pool_report(&inputs.embedding, &labels, names.len(), kind.into(), &label, global)?;
            out.json("pool.json", &r)?;
            print(&serde_json::json!({"size": r.size, "phi_inter": r.phi_inter, "corpus_phi_inter": r.corpus_phi_inter}))
        }
        Cmd::Harness(HarnessCmd::Stability {
            synthesis_seeds,
            probe_seeds,
        }) => {
            let r = stability_study(&cfg, &synthesis_seeds, &probe_seeds)?;
            out.json("stability.json", &r)?;
            print(&serde_json::json!({
                "min_selection_overlap": finite(r.min_overlap()),
                "min_cross_run_centroid_cosine": finite(r.min_cross_run_similarity()),
            }))
        }
        Cmd::Harness(HarnessCmd::Control { aligned }) => {
            let inputs = load_inputs(&cfg.input)?;
            let (labels, names) = corpus_labels(&inputs.corpus)?;
            let scores = if aligned {
                aligned_scores(&labels)
            } else {
                let centroids = compute_centroids(&inputs.embedding, &labels, names.len(), None).map_err(invalid)?;
                score_samples(&inputs.embedding, &labels, &centroids, ScoreKind::Inter)
                    .map_err(stage)?
                    .values
            };
            let ccfg = ControlConfig {
                train: cfg.stage1.clone(),
                holdout_frac: cfg.probe_set.holdout_frac,
                split_seed: seed,
            };
            let r = diversity_label_control(&inputs.hidden, &scores, &ccfg).map_err(stage)?;
            out.json("control.json", &r)?;
            print(&serde_json::json!({"holdout_accuracy": r.holdout_accuracy, "aligned": aligned}))
        }
        Cmd::Pipeline(PipelineCmd::Run) => {
            let o = run_pipeline(&cfg, Some(out.dir))?;
            print(&o.summary)
        }
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Serialize)]
struct RatioRow {
    x: String,
    p_x: f64,
    density_ratio: f64,
    brute_ratio: f64,
}

#[derive(Serialize)]
struct ErrorRow {
    x: String,
    density_ratio: f64,
    deterministic_weight: f64,
    approx_error: f64,
}

fn oracle(cmd: OracleCmd, seed: u64) -> Result<()> {
    let (prop1, args) = match cmd {
        OracleCmd::Prop1(a) => (true, a),
        OracleCmd::Prop2(a) => (false, a),
    };
    let instances = match &args.instance {
        Some(p) => {
            read(p)?; // surface a missing file as i/o
            vec![load_instance(p).map_err(invalid)?]
        }
        None => (0..args.instances as u64).map(|i| random_instance(seed.wrapping_add(i))).collect(),
    };
    if args.instance.is_some() {
        let (joint, w) = &instances[0];
        let rows: Vec<serde_json::Value> = joint
            .support()
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let d = density_ratio(joint, w, x)?;
                Ok(if prop1 {
                    serde_json::to_value(RatioRow {
                        x: x.clone(),
                        p_x: joint.p_x(i),
                        density_ratio: d,
                        brute_ratio: brute_ratio(joint, w, x)?,
                    })
                } else {
                    serde_json::to_value(ErrorRow {
                        x: x.clone(),
                        density_ratio: d,
                        deterministic_weight: deterministic_weight(joint, w, x)?,
                        approx_error: approx_error(joint, w, x)?,
                    })
                }
                .expect("plain struct"))
            })
            .collect::<std::result::Result<_, divsel_core::importance::ImportanceError>>()
            .map_err(stage)?;
        print(&rows)?;
    }
    if prop1 {
        let r = check_decomposition(&instances).map_err(stage)?;
        print(&r)?;
        if r.max_ratio_gap >= 1e-12 || r.max_normalization_gap >= 1e-12 {
            return Err(stage("decomposition check exceeded 1e-12"));
        }
    } else {
        let r = check_approximation(&instances).map_err(stage)?;
        print(&r)?;
        if r.max_identity_gap >= 1e-12 || r.max_one_hot_error != 0.0 || r.max_uniform_lambda_error != 0.0 {
            return Err(stage("approximation identity check failed"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("divsel: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("divsel: {e}");
            ExitCode::from(e.code())
        }
    }
}
