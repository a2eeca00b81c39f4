//! Samples, feature matrices and their on-disk formats.
//!
//! Samples live in JSONL (one record per line). Features live in a compact
//! little-endian binary file:
//!
//! ```text
//! magic  "DAARFT01"            8 bytes
//! dim    u32 LE
//! count  u64 LE
//! kind   u8  (0 = embedding layer, 1 = hidden layer)
//! pad    3 zero bytes
//! body   count * dim f32 LE, row-major
//! footer count * (u16 LE byte length, UTF-8 id), in row order
//! ```
//!
//! Values are held in memory as `f64` but are always rounded through `f32`
//! on construction, so writing a loaded matrix reproduces the file bytes.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FEATURE_MAGIC: &[u8; 8] = b"DAARFT01";
const HEADER_LEN: usize = 8 + 4 + 8 + 1 + 3;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("file contains no records")]
    EmptyFile,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("feature ids do not match corpus ids (missing {missing:?}, extra {extra:?})")]
    IdSetMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error("corrupt feature header: {0}")]
    CorruptHeader(String),
    #[error("feature file truncated: {0}")]
    Truncated(String),
    #[error("invalid feature row {id:?}: {reason}")]
    InvalidRow { id: String, reason: String },
    #[error("token list is empty")]
    EmptyTokenList,
    #[error("invalid mixture spec: {0}")]
    InvalidSpec(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One instruction-tuning record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub instruction: String,
    #[serde(default)]
    pub input: String,
    pub output: String,
    #[serde(default)]
    pub domain: Option<String>,
}

impl Sample {
    /// Text handed to a featurizer: the three fields joined by newlines.
    pub fn feature_text(&self) -> String {
        format!("{}\n{}\n{}", self.instruction, self.input, self.output)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Corpus {
    samples: Vec<Sample>,
    index: HashMap<String, usize>,
    pub domain_names: Option<Vec<String>>,
}

impl Corpus {
    pub fn new(samples: Vec<Sample>) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.id.is_empty() {
                return Err(CorpusError::MalformedRecord {
                    line: i + 1,
                    reason: "empty id".into(),
                });
            }
            if s.instruction.is_empty() {
                return Err(CorpusError::MalformedRecord {
                    line: i + 1,
                    reason: "empty instruction".into(),
                });
            }
            if index.insert(s.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(s.id.clone()));
            }
        }
        Ok(Self {
            samples,
            index,
            domain_names: None,
        })
    }

    pub fn with_domain_names(mut self, names: Vec<String>) -> Self {
        self.domain_names = Some(names);
        self
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.id.as_str())
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.position(id).map(|i| &self.samples[i])
    }

    /// Restrict to the given positions, keeping corpus order.
    pub fn subset(&self, keep: &[usize]) -> Corpus {
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        let samples = keep.iter().map(|&i| self.samples[i].clone()).collect();
        let mut c = Corpus::new(samples).expect("subset of a valid corpus is valid");
        c.domain_names = self.domain_names.clone();
        c
    }

    /// Serialize as JSONL, one record per line, LF endings.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("sample serializes"));
            out.push('\n');
        }
        out
    }
}

/// Parse JSONL text into a corpus. Lines are parsed in parallel; output
/// order always follows the input.
pub fn parse_samples(text: &str) -> Result<Corpus, CorpusError> {
    let lines: Vec<&str> = text.lines().collect();
    let lines = match lines.iter().rposition(|l| !l.trim().is_empty()) {
        Some(last) => &lines[..=last],
        None => return Err(CorpusError::EmptyFile),
    };
    let parsed: Vec<Result<Sample, CorpusError>> = lines
        .par_iter()
        .enumerate()
        .map(|(i, line)| {
            let s: Sample =
                serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            if s.id.is_empty() {
                return Err(CorpusError::MalformedRecord {
                    line: i + 1,
                    reason: "empty id".into(),
                });
            }
            if s.instruction.is_empty() {
                return Err(CorpusError::MalformedRecord {
                    line: i + 1,
                    reason: "empty instruction".into(),
                });
            }
            Ok(s)
        })
        .collect();
    let samples = parsed.into_iter().collect::<Result<Vec<_>, _>>()?;
    Corpus::new(samples)
}

pub fn load_samples(path: &Path) -> Result<Corpus, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_samples(&text)
}

pub fn write_samples(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    fs::write(path, corpus.to_jsonl()).map_err(io_err(path))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    EmbeddingLayer,
    HiddenLayer,
}

impl FeatureKind {
    fn code(self) -> u8 {
        match self {
            FeatureKind::EmbeddingLayer => 0,
            FeatureKind::HiddenLayer => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(FeatureKind::EmbeddingLayer),
            1 => Some(FeatureKind::HiddenLayer),
            _ => None,
        }
    }
}

/// Dense features, one row per sample id.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    kind: FeatureKind,
    ids: Vec<String>,
    data: Vec<f64>,
}

impl FeatureMatrix {
    /// Build a matrix from row-major data. Values are rounded to `f32`;
    /// rows must be finite and non-zero and ids unique.
    pub fn new(
        kind: FeatureKind,
        dim: usize,
        ids: Vec<String>,
        mut data: Vec<f64>,
    ) -> Result<Self, CorpusError> {
        if dim == 0 {
            return Err(CorpusError::InvalidSpec("feature dim must be positive".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(CorpusError::DimMismatch {
                expected: ids.len() * dim,
                found: data.len(),
            });
        }
        for v in data.iter_mut() {
            *v = f64::from(*v as f32);
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(CorpusError::DuplicateId(id.clone()));
            }
            let row = &data[i * dim..(i + 1) * dim];
            if row.iter().any(|v| !v.is_finite()) {
                return Err(CorpusError::InvalidRow {
                    id: id.clone(),
                    reason: "non-finite entry".into(),
                });
            }
            if row.iter().all(|v| *v == 0.0) {
                return Err(CorpusError::InvalidRow {
                    id: id.clone(),
                    reason: "all-zero row".into(),
                });
            }
        }
        Ok(Self {
            dim,
            kind,
            ids,
            data,
        })
    }

    pub fn from_rows(
        kind: FeatureKind,
        ids: Vec<String>,
        rows: &[Vec<f64>],
    ) -> Result<Self, CorpusError> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(CorpusError::DimMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(kind, dim, ids, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn with_kind(mut self, kind: FeatureKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn expect_dim(&self, dim: usize) -> Result<(), CorpusError> {
        if self.dim == dim {
            Ok(())
        } else {
            Err(CorpusError::DimMismatch {
                expected: dim,
                found: self.dim,
            })
        }
    }

    /// Rows at the given positions, in the given order.
    pub fn select(&self, positions: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(positions.len() * self.dim);
        let mut ids = Vec::with_capacity(positions.len());
        for &p in positions {
            data.extend_from_slice(self.row(p));
            ids.push(self.ids[p].clone());
        }
        FeatureMatrix {
            dim: self.dim,
            kind: self.kind,
            ids,
            data,
        }
    }

    /// Reorder rows to follow `corpus`, checking that the id sets agree.
    pub fn align_to(&self, corpus: &Corpus) -> Result<FeatureMatrix, CorpusError> {
        let mine: HashMap<&str, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let missing: Vec<String> = corpus
            .ids()
            .filter(|id| !mine.contains_key(id))
            .map(str::to_owned)
            .collect();
        let extra: Vec<String> = self
            .ids
            .iter()
            .filter(|id| corpus.position(id).is_none())
            .cloned()
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(CorpusError::IdSetMismatch { missing, extra });
        }
        let order: Vec<usize> = corpus.ids().map(|id| mine[id]).collect();
        Ok(self.select(&order))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CorpusError> {
        let dim = u32::try_from(self.dim)
            .map_err(|_| CorpusError::InvalidSpec("dim exceeds u32".into()))?;
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&dim.to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        out.push(self.kind.code());
        out.extend_from_slice(&[0, 0, 0]);
        for v in &self.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for id in &self.ids {
            let len = u16::try_from(id.len()).map_err(|_| CorpusError::InvalidRow {
                id: id.clone(),
                reason: "id longer than 65535 bytes".into(),
            })?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CorpusError> {
        if bytes.len() < HEADER_LEN {
            return Err(CorpusError::CorruptHeader("file shorter than header".into()));
        }
        if &bytes[..8] != FEATURE_MAGIC {
            return Err(CorpusError::CorruptHeader(format!(
                "bad magic {:?}",
                String::from_utf8_lossy(&bytes[..8])
            )));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let kind = FeatureKind::from_code(bytes[20])
            .ok_or_else(|| CorpusError::CorruptHeader(format!("unknown kind {}", bytes[20])))?;
        if bytes[21..24] != [0, 0, 0] {
            return Err(CorpusError::CorruptHeader("non-zero padding".into()));
        }
        if dim == 0 {
            return Err(CorpusError::CorruptHeader("dim is zero".into()));
        }
        let count = usize::try_from(count)
            .map_err(|_| CorpusError::CorruptHeader("count exceeds address space".into()))?;
        let body_len = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| CorpusError::CorruptHeader("count * dim overflows".into()))?;
        let body_end = HEADER_LEN
            .checked_add(body_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| CorpusError::Truncated("body shorter than count * dim".into()))?;
        let data: Vec<f64> = bytes[HEADER_LEN..body_end]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let mut ids = Vec::with_capacity(count);
        let mut pos = body_end;
        for _ in 0..count {
            if pos + 2 > bytes.len() {
                return Err(CorpusError::Truncated("id footer".into()));
            }
            let len = u16::from_le_bytes([bytes[pos], bytes[pos + 1]]) as usize;
            pos += 2;
            if pos + len > bytes.len() {
                return Err(CorpusError::Truncated("id footer".into()));
            }
            let id = std::str::from_utf8(&bytes[pos..pos + len])
                .map_err(|_| CorpusError::CorruptHeader("id is not UTF-8".into()))?;
            ids.push(id.to_owned());
            pos += len;
        }
        if pos != bytes.len() {
            return Err(CorpusError::CorruptHeader(format!(
                "{} trailing bytes after footer",
                bytes.len() - pos
            )));
        }
        Self::new(kind, dim, ids, data)
    }
}

/// Read a feature file as stored, in file row order.
pub fn read_features(path: &Path) -> Result<FeatureMatrix, CorpusError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    FeatureMatrix::from_bytes(&bytes)
}

/// Read a feature file and align its rows to `corpus` order.
pub fn load_features(path: &Path, corpus: &Corpus) -> Result<FeatureMatrix, CorpusError> {
    read_features(path)?.align_to(corpus)
}

pub fn write_features(features: &FeatureMatrix, path: &Path) -> Result<(), CorpusError> {
    let bytes = features.to_bytes()?;
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&bytes).map_err(io_err(path))
}

/// Average token vectors into one sample vector.
pub fn mean_pool(token_vectors: &[Vec<f64>]) -> Result<Vec<f64>, CorpusError> {
    let first = token_vectors.first().ok_or(CorpusError::EmptyTokenList)?;
    let dim = first.len();
    if let Some(bad) = token_vectors.iter().find(|v| v.len() != dim) {
        return Err(CorpusError::DimMismatch {
            expected: dim,
            found: bad.len(),
        });
    }
    Ok(crate::vector::mean_of(token_vectors.iter().map(Vec::as_slice), dim)
        .expect("non-empty"))
}

/// Isotropic Gaussian mixture used as a stand-in for a multi-domain pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub n_domains: usize,
    pub per_domain_count: usize,
    pub dim: usize,
    /// Euclidean distance between any two true means.
    pub centroid_separation: f64,
    pub within_std: f64,
    pub rng_seed: u64,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InvalidSpec(m.into()));
        if self.n_domains < 2 {
            return bad("n_domains must be at least 2");
        }
        if self.per_domain_count == 0 {
            return bad("per_domain_count must be positive");
        }
        if self.dim < self.n_domains {
            return bad("dim must be at least n_domains");
        }
        if !(self.centroid_separation > 0.0 && self.centroid_separation.is_finite()) {
            return bad("centroid_separation must be positive");
        }
        if !(self.within_std > 0.0 && self.within_std.is_finite()) {
            return bad("within_std must be positive");
        }
        Ok(())
    }

    pub fn domain_names(&self) -> Vec<String> {
        (0..self.n_domains).map(|k| format!("domain-{k}")).collect()
    }

    /// True means: `separation / sqrt(2)` along the first `K` axes, so every
    /// pair of means is exactly `separation` apart.
    pub fn true_means(&self) -> Vec<Vec<f64>> {
        let a = self.centroid_separation / std::f64::consts::SQRT_2;
        (0..self.n_domains)
            .map(|k| {
                let mut m = vec![0.0; self.dim];
                m[k] = a;
                m
            })
            .collect()
    }
}

/// Generated mixture: corpus, embedding-layer features and true domain labels.
#[derive(Clone, Debug)]
pub struct Mixture {
    pub corpus: Corpus,
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
}

pub fn synthetic_mixture(spec: &MixtureSpec) -> Result<Mixture, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let means = spec.true_means();
    let names = spec.domain_names();
    let n = spec.n_domains * spec.per_domain_count;
    let mut samples = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for (k, mean) in means.iter().enumerate() {
        for i in 0..spec.per_domain_count {
            let id = format!("d{k}-{i:06}");
            for m in mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(m + spec.within_std * z);
            }
            samples.push(Sample {
                id: id.clone(),
                instruction: format!("placeholder instruction {i} for {}", names[k]),
                input: String::new(),
                output: "placeholder output".into(),
                domain: Some(names[k].clone()),
            });
            ids.push(id);
            labels.push(k);
        }
    }
    let corpus = Corpus::new(samples)?.with_domain_names(names);
    let features = FeatureMatrix::new(FeatureKind::EmbeddingLayer, spec.dim, ids, data)?;
    Ok(Mixture {
        corpus,
        features,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str) -> Sample {
        Sample {
            id: id.into(),
            instruction: "do".into(),
            input: String::new(),
            output: "done".into(),
            domain: None,
        }
    }

    #[test]
    fn parses_in_file_order() {
        let text = r#"{"id":"c","instruction":"x","input":"","output":"y","domain":null}
{"id":"a","instruction":"x","input":"i","output":"y","domain":"math"}
{"id":"b","instruction":"x","input":"","output":"y","domain":null}
"#;
        let c = parse_samples(text).unwrap();
        assert_eq!(c.ids().collect::<Vec<_>>(), vec!["c", "a", "b"]);
        assert_eq!(c.samples()[1].domain.as_deref(), Some("math"));
        assert_eq!(c.to_jsonl(), text);
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = "{\"id\":\"a\",\"instruction\":\"x\",\"input\":\"\",\"output\":\"y\",\"domain\":null}\n\
                    {\"id\":\"a\",\"instruction\":\"z\",\"input\":\"\",\"output\":\"y\",\"domain\":null}\n";
        assert!(matches!(parse_samples(text), Err(CorpusError::DuplicateId(id)) if id == "a"));
    }

    #[test]
    fn missing_instruction_is_malformed() {
        let text = "{\"id\":\"a\",\"input\":\"\",\"output\":\"y\",\"domain\":null}\n";
        assert!(matches!(
            parse_samples(text),
            Err(CorpusError::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn empty_file_rejected() {
        assert!(matches!(parse_samples(""), Err(CorpusError::EmptyFile)));
        assert!(matches!(parse_samples("\n\n"), Err(CorpusError::EmptyFile)));
    }

    #[test]
    fn feature_file_matches_corpus() {
        let corpus = Corpus::new(vec![sample("a"), sample("b")]).unwrap();
        let fm = FeatureMatrix::new(
            FeatureKind::EmbeddingLayer,
            4,
            vec!["b".into(), "a".into()],
            vec![1., 2., 3., 4., 5., 6., 7., 8.],
        )
        .unwrap();
        let bytes = fm.to_bytes().unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 32 + 2 * 3);
        let back = FeatureMatrix::from_bytes(&bytes).unwrap();
        let aligned = back.align_to(&corpus).unwrap();
        assert_eq!(aligned.len(), 2);
        assert_eq!(aligned.dim(), 4);
        assert_eq!(aligned.row(0), &[5., 6., 7., 8.]);
        assert_eq!(aligned.ids(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn id_set_mismatch_lists_both_sides() {
        let corpus = Corpus::new(vec![sample("a"), sample("c")]).unwrap();
        let fm = FeatureMatrix::from_rows(
            FeatureKind::EmbeddingLayer,
            vec!["a".into(), "b".into()],
            &[vec![1.0], vec![2.0]],
        )
        .unwrap();
        match fm.align_to(&corpus) {
            Err(CorpusError::IdSetMismatch { missing, extra }) => {
                assert_eq!(missing, vec!["c"]);
                assert_eq!(extra, vec!["b"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_corrupt_header() {
        let fm = FeatureMatrix::from_rows(
            FeatureKind::HiddenLayer,
            vec!["a".into()],
            &[vec![1.0, 2.0]],
        )
        .unwrap();
        let mut bytes = fm.to_bytes().unwrap();
        bytes[..8].copy_from_slice(b"XXXXXX01");
        assert!(matches!(
            FeatureMatrix::from_bytes(&bytes),
            Err(CorpusError::CorruptHeader(_))
        ));
    }

    #[test]
    fn truncated_and_trailing_bytes_rejected() {
        let fm = FeatureMatrix::from_rows(
            FeatureKind::HiddenLayer,
            vec!["a".into()],
            &[vec![1.0, 2.0]],
        )
        .unwrap();
        let bytes = fm.to_bytes().unwrap();
        assert!(FeatureMatrix::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(FeatureMatrix::from_bytes(&longer).is_err());
    }

    #[test]
    fn zero_and_nonfinite_rows_rejected() {
        let zero = FeatureMatrix::from_rows(
            FeatureKind::EmbeddingLayer,
            vec!["a".into()],
            &[vec![0.0, 0.0]],
        );
        assert!(matches!(zero, Err(CorpusError::InvalidRow { .. })));
        let nan = FeatureMatrix::from_rows(
            FeatureKind::EmbeddingLayer,
            vec!["a".into()],
            &[vec![f64::NAN, 1.0]],
        );
        assert!(matches!(nan, Err(CorpusError::InvalidRow { .. })));
    }

    #[test]
    fn mean_pool_examples() {
        assert_eq!(
            mean_pool(&[vec![1.0, 1.0], vec![3.0, 3.0]]).unwrap(),
            vec![2.0, 2.0]
        );
        assert_eq!(mean_pool(&[vec![5.0, 0.0]]).unwrap(), vec![5.0, 0.0]);
        let sym = mean_pool(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
            vec![0.0, -1.0],
        ])
        .unwrap();
        assert_eq!(sym, vec![0.0, 0.0]);
        // the pooled zero vector cannot become a feature row
        assert!(FeatureMatrix::from_rows(FeatureKind::EmbeddingLayer, vec!["z".into()], &[sym])
            .is_err());
        assert!(matches!(mean_pool(&[]), Err(CorpusError::EmptyTokenList)));
    }

    fn spec() -> MixtureSpec {
        MixtureSpec {
            n_domains: 4,
            per_domain_count: 50,
            dim: 8,
            centroid_separation: 10.0,
            within_std: 0.1,
            rng_seed: 7,
        }
    }

    #[test]
    fn mixture_is_deterministic() {
        let a = synthetic_mixture(&spec()).unwrap();
        let b = synthetic_mixture(&spec()).unwrap();
        assert_eq!(a.features.to_bytes().unwrap(), b.features.to_bytes().unwrap());
        assert_eq!(a.corpus.to_jsonl(), b.corpus.to_jsonl());
        assert_eq!(a.labels, b.labels);
        let c = synthetic_mixture(&MixtureSpec { rng_seed: 8, ..spec() }).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn mixture_separable_by_nearest_true_mean() {
        let s = spec();
        let m = synthetic_mixture(&s).unwrap();
        let means = s.true_means();
        for (i, row) in m.features.rows().enumerate() {
            let d: Vec<f64> = means
                .iter()
                .map(|mu| crate::vector::squared_distance(row, mu))
                .collect();
            let nearest = d
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(nearest, m.labels[i]);
        }
        for (i, a) in means.iter().enumerate() {
            for b in &means[i + 1..] {
                assert!((crate::vector::distance(a, b) - 10.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mixture_rejects_bad_spec() {
        assert!(matches!(
            synthetic_mixture(&MixtureSpec { per_domain_count: 0, ..spec() }),
            Err(CorpusError::InvalidSpec(_))
        ));
        assert!(synthetic_mixture(&MixtureSpec { within_std: 0.0, ..spec() }).is_err());
        assert!(synthetic_mixture(&MixtureSpec { centroid_separation: -1.0, ..spec() }).is_err());
        assert!(synthetic_mixture(&MixtureSpec { dim: 3, ..spec() }).is_err());
    }
}
