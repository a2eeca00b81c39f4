//! Model-aware centroid synthesis.
//!
//! Phase 1 asks a generator for a handful of seed instruction pairs per
//! domain. Phase 2 grows the set one item per round: each round draws a
//! window of anchors from the current set, asks for a pair that differs from
//! them, and keeps the candidate only if its cosine similarity to every
//! compared item is strictly below the domain threshold `tau`. The domain
//! centroid is the mean feature vector of the final set.
//!
//! Generator responses are parsed with three case-insensitive markers:
//!
//! ```text
//! header  \binstruction\s*(\[\s*\d+\s*\]|\d+)?\s*:
//! input   \binput\s*(\[\s*\d+\s*\]|\d+)?\s*:
//! output  \boutput\s*(\[\s*\d+\s*\]|\d+)?\s*:
//! ```
//!
//! The text between two headers is one item. Field values are trimmed of
//! whitespace, `*`, a trailing comma, one pair of enclosing brackets and a
//! trailing list enumerator (`2.`). An item needs a non-empty instruction and
//! output; the input may be empty or absent.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::sync::OnceLock;
use std::time::Duration;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::diversity::{CentroidSet, DiversityError, Provenance};
use crate::vector::{self, VectorError};

pub const SEED_PROMPT: &str = include_str!("../assets/prompts/seed_generation.txt");
pub const AUGMENT_PROMPT: &str = include_str!("../assets/prompts/diversity_augmentation.txt");
pub const DEFAULT_DOMAINS_JSON: &str = include_str!("../assets/prompts/domain_descriptions.json");

pub const DEFAULT_TAU: f64 = 0.85;
pub const MATH_TAU: f64 = 0.9;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("generator unavailable: {0}")]
    GeneratorUnavailable(String),
    #[error("featurizer unavailable: {0}")]
    FeaturizerUnavailable(String),
    #[error("no parseable response after {0} attempts")]
    ParseExhausted(usize),
    #[error("attempt cap exceeded for domain {domain:?} at iteration {iteration}")]
    AttemptCapExceeded { domain: String, iteration: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("synthesized set is empty")]
    EmptySet,
    #[error("invalid synthesis config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Centroids(#[from] DiversityError),
}

impl From<VectorError> for SynthesisError {
    fn from(e: VectorError) -> Self {
        match e {
            VectorError::ZeroVector => SynthesisError::ZeroVector,
            VectorError::DimMismatch { expected, found } => {
                SynthesisError::DimMismatch { expected, found }
            }
        }
    }
}

/// Body of a generator call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRequest {
    pub prompt: String,
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    pub do_sample: bool,
}

/// Sampling parameters shared by every request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    pub do_sample: bool,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            max_new_tokens: 2048,
            temperature: 0.9,
            top_p: 0.95,
            do_sample: true,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(SynthesisError::InvalidConfig("top_p must be in (0, 1]".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(SynthesisError::InvalidConfig("temperature must be positive".into()));
        }
        Ok(())
    }

    pub fn request(&self, prompt: String) -> GeneratorRequest {
        GeneratorRequest {
            prompt,
            max_new_tokens: self.max_new_tokens,
            temperature: self.temperature,
            top_p: self.top_p,
            do_sample: self.do_sample,
        }
    }
}

pub trait Generator {
    fn generate(&mut self, request: &GeneratorRequest) -> Result<String, SynthesisError>;
}

pub trait Featurizer {
    fn featurize(&mut self, text: &str) -> Result<Vec<f64>, SynthesisError>;
}

impl<F: FnMut(&str) -> Result<Vec<f64>, SynthesisError>> Featurizer for F {
    fn featurize(&mut self, text: &str) -> Result<Vec<f64>, SynthesisError> {
        self(text)
    }
}

/// How to reach an external JSON endpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    /// Spawn `program args...` per call, write the request JSON to stdin and
    /// read the response JSON from stdout.
    Subprocess { program: String, args: Vec<String> },
    /// POST the request JSON to `url`.
    Http { url: String, timeout_secs: Option<u64> },
}

impl Transport {
    pub fn call(&self, request: &Value) -> Result<Value, String> {
        match self {
            Transport::Subprocess { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| format!("spawn {program}: {e}"))?;
                let body = serde_json::to_vec(request).map_err(|e| e.to_string())?;
                {
                    let mut stdin = child.stdin.take().expect("piped stdin");
                    stdin.write_all(&body).map_err(|e| e.to_string())?;
                    stdin.write_all(b"\n").map_err(|e| e.to_string())?;
                }
                let mut out = String::new();
                child
                    .stdout
                    .take()
                    .expect("piped stdout")
                    .read_to_string(&mut out)
                    .map_err(|e| e.to_string())?;
                let status = child.wait().map_err(|e| e.to_string())?;
                if !status.success() {
                    return Err(format!("{program} exited with {status}"));
                }
                serde_json::from_str(&out).map_err(|e| format!("bad response JSON: {e}"))
            }
            Transport::Http { url, timeout_secs } => {
                let agent: ureq::Agent = ureq::Agent::config_builder()
                    .timeout_global(Some(Duration::from_secs(timeout_secs.unwrap_or(600))))
                    .build()
                    .into();
                let mut resp = agent
                    .post(url.as_str())
                    .send_json(request)
                    .map_err(|e| e.to_string())?;
                resp.body_mut()
                    .read_json::<Value>()
                    .map_err(|e| format!("bad response JSON: {e}"))
            }
        }
    }
}

/// Generator over a [`Transport`]: `{"prompt",...}` → `{"text": string}`.
pub struct EndpointGenerator {
    pub transport: Transport,
}

impl Generator for EndpointGenerator {
    fn generate(&mut self, request: &GeneratorRequest) -> Result<String, SynthesisError> {
        let req = serde_json::to_value(request).expect("request serializes");
        let resp = self
            .transport
            .call(&req)
            .map_err(SynthesisError::GeneratorUnavailable)?;
        resp.get("text")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| SynthesisError::GeneratorUnavailable("response lacks \"text\"".into()))
    }
}

/// Featurizer over a [`Transport`]: `{"text": string}` → `{"vector": [number]}`.
pub struct EndpointFeaturizer {
    pub transport: Transport,
}

impl Featurizer for EndpointFeaturizer {
    fn featurize(&mut self, text: &str) -> Result<Vec<f64>, SynthesisError> {
        let resp = self
            .transport
            .call(&serde_json::json!({ "text": text }))
            .map_err(SynthesisError::FeaturizerUnavailable)?;
        serde_json::from_value::<Vec<f64>>(resp.get("vector").cloned().unwrap_or(Value::Null))
            .map_err(|e| SynthesisError::FeaturizerUnavailable(format!("bad vector: {e}")))
    }
}

/// One generated instruction pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthItem {
    pub instruction: String,
    #[serde(default)]
    pub input: String,
    pub output: String,
}

impl SynthItem {
    pub fn feature_text(&self) -> String {
        format!("{}\n{}\n{}", self.instruction, self.input, self.output)
    }

    fn counterexample(&self) -> String {
        format!(
            "Instruction: [{}], Input: [{}], Output: [{}]",
            self.instruction, self.input, self.output
        )
    }
}

/// A target domain to synthesize.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub description: String,
    /// Domains flagged math-like default to the stricter 0.9 threshold.
    #[serde(default)]
    pub math_like: bool,
    #[serde(default)]
    pub tau: Option<f64>,
    /// Optional items added to the seed set before augmentation.
    #[serde(default)]
    pub injected: Vec<SynthItem>,
}

impl DomainSpec {
    pub fn tau(&self) -> f64 {
        self.tau
            .unwrap_or(if self.math_like { MATH_TAU } else { DEFAULT_TAU })
    }
}

pub fn default_domains() -> Vec<DomainSpec> {
    serde_json::from_str(DEFAULT_DOMAINS_JSON).expect("bundled domain descriptions parse")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub seed_count: usize,
    pub window_size: usize,
    pub max_iterations: usize,
    pub max_attempts_per_accept: usize,
    pub rng_seed: u64,
    /// Compare candidates against the whole previous set instead of the
    /// anchor window.
    pub compare_full_set: bool,
    pub sampling: SamplingParams,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            seed_count: 5,
            window_size: 3,
            max_iterations: 30,
            max_attempts_per_accept: 1000,
            rng_seed: 0,
            compare_full_set: false,
            sampling: SamplingParams::default(),
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        if self.seed_count == 0 {
            return Err(SynthesisError::InvalidConfig("seed_count must be >= 1".into()));
        }
        if self.window_size == 0 {
            return Err(SynthesisError::InvalidConfig("window_size must be >= 1".into()));
        }
        if self.max_attempts_per_accept == 0 {
            return Err(SynthesisError::InvalidConfig(
                "max_attempts_per_accept must be >= 1".into(),
            ));
        }
        self.sampling.validate()
    }
}

/// Generated items for one domain with their feature rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesizedSet {
    pub domain: String,
    pub tau: f64,
    pub items: Vec<SynthItem>,
    pub feature_rows: Vec<Vec<f64>>,
    /// Items that came from phase 1 (seeds plus injected items).
    pub seed_len: usize,
    /// Generator calls spent on each accepted augmentation item.
    pub attempt_log: Vec<usize>,
    /// Max cosine against the compared set at the moment each item was kept.
    pub window_max_at_accept: Vec<f64>,
}

fn marker(word: &str) -> Regex {
    Regex::new(&format!(r"(?i)\b{word}\s*(?:\[\s*\d+\s*\]|\d+)?\s*:")).expect("static regex")
}

fn markers() -> &'static (Regex, Regex, Regex) {
    static M: OnceLock<(Regex, Regex, Regex)> = OnceLock::new();
    M.get_or_init(|| (marker("instruction"), marker("input"), marker("output")))
}

fn clean_field(raw: &str) -> String {
    static ENUM: OnceLock<Regex> = OnceLock::new();
    let enumerator = ENUM.get_or_init(|| Regex::new(r"\n\s*\d+[.)]\s*$").expect("static regex"));
    let trim = |s: &str| s.trim_matches(|c: char| c.is_whitespace() || c == '*').to_owned();
    let mut s = trim(raw);
    s = trim(&enumerator.replace(&s, ""));
    if let Some(stripped) = s.strip_suffix(',') {
        s = trim(stripped);
    }
    // template-style wrapper "[text]"; bare lists like "[3,1,2]" are kept
    if s.starts_with('[') && s.ends_with(']') && s.len() >= 2 {
        let inner = &s[1..s.len() - 1];
        if inner.trim().is_empty() || inner.chars().any(char::is_alphabetic) {
            s = trim(inner);
        }
    }
    s
}

/// Extract every well-formed instruction pair from a generator response.
pub fn parse_items(text: &str) -> Vec<SynthItem> {
    let (header, input, output) = markers();
    let heads: Vec<regex::Match> = header.find_iter(text).collect();
    let mut items = Vec::new();
    for (i, h) in heads.iter().enumerate() {
        let end = heads.get(i + 1).map_or(text.len(), |n| n.start());
        let seg = &text[h.end()..end];
        let Some(out) = output.find(seg) else { continue };
        let (instruction, input_text) = match input.find(&seg[..out.start()]) {
            Some(inp) => (&seg[..inp.start()], &seg[inp.end()..out.start()]),
            None => (&seg[..out.start()], ""),
        };
        let item = SynthItem {
            instruction: clean_field(instruction),
            input: clean_field(input_text),
            output: clean_field(&seg[out.end()..]),
        };
        if !item.instruction.is_empty() && !item.output.is_empty() {
            items.push(item);
        }
    }
    items
}

fn unselected(domain: &str, all: &[String]) -> String {
    all.iter()
        .filter(|n| n.as_str() != domain)
        .cloned()
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn render_seed_prompt(domain: &DomainSpec, all_names: &[String], seed_count: usize) -> String {
    SEED_PROMPT
        .replace("{selected_domain}", &domain.name)
        .replace("{domain_description}", &domain.description)
        .replace("{seed_count}", &seed_count.to_string())
        .replace("{unselected_domains}", &unselected(&domain.name, all_names))
}

pub fn render_augment_prompt(
    domain: &DomainSpec,
    all_names: &[String],
    anchors: &[&SynthItem],
) -> String {
    let examples = anchors
        .iter()
        .map(|a| a.counterexample())
        .collect::<Vec<_>>()
        .join("\n");
    AUGMENT_PROMPT
        .replace("{selected_domain}", &domain.name)
        .replace("{domain_description}", &domain.description)
        .replace("{unselected_domains}", &unselected(&domain.name, all_names))
        .replace("{counterexamples}", &examples)
}

/// Keep a candidate iff its maximum cosine to `existing` is strictly below
/// `tau`. Vacuously true for an empty set.
pub fn accept_candidate(
    candidate: &[f64],
    existing: &[&[f64]],
    tau: f64,
) -> Result<bool, SynthesisError> {
    Ok(max_cosine(candidate, existing)?.is_none_or(|m| m < tau))
}

fn max_cosine(candidate: &[f64], existing: &[&[f64]]) -> Result<Option<f64>, SynthesisError> {
    if vector::norm(candidate) == 0.0 {
        return Err(SynthesisError::ZeroVector);
    }
    let mut best: Option<f64> = None;
    for e in existing {
        let c = vector::cosine(candidate, e)?;
        best = Some(best.map_or(c, |b| b.max(c)));
    }
    Ok(best)
}

fn featurize_checked(
    featurizer: &mut dyn Featurizer,
    item: &SynthItem,
    dim: &mut Option<usize>,
) -> Result<Vec<f64>, SynthesisError> {
    let v = featurizer.featurize(&item.feature_text())?;
    match *dim {
        Some(d) if d != v.len() => {
            return Err(SynthesisError::DimMismatch {
                expected: d,
                found: v.len(),
            })
        }
        None => *dim = Some(v.len()),
        _ => {}
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(SynthesisError::FeaturizerUnavailable("non-finite feature".into()));
    }
    if v.iter().all(|x| *x == 0.0) {
        return Err(SynthesisError::ZeroVector);
    }
    Ok(v)
}

/// Phase 1: ask for `seed_count` pairs, retrying unparseable responses.
pub fn generate_seeds(
    domain: &DomainSpec,
    all_names: &[String],
    client: &mut dyn Generator,
    featurizer: &mut dyn Featurizer,
    cfg: &SynthesisConfig,
) -> Result<SynthesizedSet, SynthesisError> {
    cfg.validate()?;
    if domain.description.trim().is_empty() {
        return Err(SynthesisError::InvalidConfig(format!(
            "domain {:?} has an empty description",
            domain.name
        )));
    }
    let request = cfg
        .sampling
        .request(render_seed_prompt(domain, all_names, cfg.seed_count));
    let mut items = None;
    for _ in 0..cfg.max_attempts_per_accept {
        let parsed = parse_items(&client.generate(&request)?);
        if parsed.len() >= cfg.seed_count {
            items = Some(parsed.into_iter().take(cfg.seed_count).collect::<Vec<_>>());
            break;
        }
    }
    let mut items = items.ok_or(SynthesisError::ParseExhausted(cfg.max_attempts_per_accept))?;
    items.extend(domain.injected.iter().cloned());
    let mut dim = None;
    let feature_rows = items
        .iter()
        .map(|it| featurize_checked(featurizer, it, &mut dim))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SynthesizedSet {
        domain: domain.name.clone(),
        tau: domain.tau(),
        seed_len: items.len(),
        items,
        feature_rows,
        attempt_log: Vec::new(),
        window_max_at_accept: Vec::new(),
    })
}

/// Phase 2: grow the set for `max_iterations` rounds with rejection sampling
/// against a random anchor window drawn from the previous round's set.
pub fn augment(
    mut set: SynthesizedSet,
    domain: &DomainSpec,
    all_names: &[String],
    client: &mut dyn Generator,
    featurizer: &mut dyn Featurizer,
    cfg: &SynthesisConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SynthesizedSet, SynthesisError> {
    cfg.validate()?;
    if set.items.is_empty() {
        return Err(SynthesisError::EmptySet);
    }
    let tau = set.tau;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(SynthesisError::InvalidConfig(format!("tau {tau} outside (0, 1)")));
    }
    let mut dim = set.feature_rows.first().map(Vec::len);
    for iteration in 1..=cfg.max_iterations {
        let n_prev = set.items.len();
        let window = cfg.window_size.min(n_prev);
        let anchors: Vec<usize> = sample_indices(rng, n_prev, window).into_vec();
        let anchor_items: Vec<&SynthItem> = anchors.iter().map(|&i| &set.items[i]).collect();
        let request = cfg
            .sampling
            .request(render_augment_prompt(domain, all_names, &anchor_items));
        let compared: Vec<usize> = if cfg.compare_full_set {
            (0..n_prev).collect()
        } else {
            anchors.clone()
        };
        let mut accepted = None;
        for attempt in 1..=cfg.max_attempts_per_accept {
            let Some(item) = parse_items(&client.generate(&request)?).into_iter().next() else {
                continue;
            };
            let v = featurize_checked(featurizer, &item, &mut dim)?;
            let existing: Vec<&[f64]> = compared
                .iter()
                .map(|&i| set.feature_rows[i].as_slice())
                .collect();
            let m = max_cosine(&v, &existing)?;
            if m.is_none_or(|m| m < tau) {
                accepted = Some((item, v, attempt, m.unwrap_or(f64::NEG_INFINITY)));
                break;
            }
        }
        let (item, v, attempts, m) = accepted.ok_or_else(|| SynthesisError::AttemptCapExceeded {
            domain: domain.name.clone(),
            iteration,
        })?;
        set.items.push(item);
        set.feature_rows.push(v);
        set.attempt_log.push(attempts);
        set.window_max_at_accept.push(m);
    }
    Ok(set)
}

/// Arithmetic mean of the set's feature rows.
pub fn synth_centroid(set: &SynthesizedSet) -> Result<Vec<f64>, SynthesisError> {
    let dim = set.feature_rows.first().ok_or(SynthesisError::EmptySet)?.len();
    Ok(vector::mean_of(set.feature_rows.iter().map(Vec::as_slice), dim)
        .expect("non-empty"))
}

/// Largest pairwise cosine over the whole set.
pub fn full_set_max_cosine(set: &SynthesizedSet) -> Result<Option<f64>, SynthesisError> {
    let rows = &set.feature_rows;
    let mut best: Option<f64> = None;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let c = vector::cosine(&rows[i], &rows[j])?;
            best = Some(best.map_or(c, |b| b.max(c)));
        }
    }
    Ok(best)
}

/// Per-domain RNG stream derived from the run seed.
pub fn domain_rng(seed: u64, domain_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(domain_index as u64 + 1);
    rng
}

/// Both phases for one domain.
pub fn synthesize_domain(
    domain_index: usize,
    domains: &[DomainSpec],
    client: &mut dyn Generator,
    featurizer: &mut dyn Featurizer,
    cfg: &SynthesisConfig,
) -> Result<SynthesizedSet, SynthesisError> {
    let names: Vec<String> = domains.iter().map(|d| d.name.clone()).collect();
    let domain = &domains[domain_index];
    let seeds = generate_seeds(domain, &names, client, featurizer, cfg)?;
    let mut rng = domain_rng(cfg.rng_seed, domain_index);
    augment(seeds, domain, &names, client, featurizer, cfg, &mut rng)
}

#[derive(Clone, Debug, Serialize)]
pub struct DomainSynthesisReport {
    pub domain: String,
    pub tau: f64,
    pub items: usize,
    pub seed_items: usize,
    pub attempt_log: Vec<usize>,
    pub window_max_at_accept: Vec<f64>,
    pub full_set_max_cosine: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SynthesisOutcome {
    pub centroids: CentroidSet,
    pub domains: Vec<DomainSynthesisReport>,
    #[serde(skip)]
    pub sets: Vec<SynthesizedSet>,
}

/// Synthesize every domain in order and build the centroid set.
pub fn synthesize_all(
    domains: &[DomainSpec],
    client: &mut dyn Generator,
    featurizer: &mut dyn Featurizer,
    cfg: &SynthesisConfig,
) -> Result<SynthesisOutcome, SynthesisError> {
    let mut sets = Vec::with_capacity(domains.len());
    let mut centroids = Vec::with_capacity(domains.len());
    let mut reports = Vec::with_capacity(domains.len());
    for k in 0..domains.len() {
        let set = synthesize_domain(k, domains, client, featurizer, cfg)?;
        centroids.push(synth_centroid(&set)?);
        reports.push(DomainSynthesisReport {
            domain: set.domain.clone(),
            tau: set.tau,
            items: set.items.len(),
            seed_items: set.seed_len,
            attempt_log: set.attempt_log.clone(),
            window_max_at_accept: set.window_max_at_accept.clone(),
            full_set_max_cosine: full_set_max_cosine(&set)?,
        });
        sets.push(set);
    }
    let centroids = CentroidSet::new(
        domains.iter().map(|d| d.name.clone()).collect(),
        centroids,
        Provenance::Synthesized,
    )?;
    Ok(SynthesisOutcome {
        centroids,
        domains: reports,
        sets,
    })
}

/// Deterministic generator for tests and desk runs. Each item carries a
/// `#<domain index>:<nonce>` token that [`StubFeaturizer`] decodes.
pub struct StubGenerator {
    names: Vec<String>,
    rng: ChaCha8Rng,
}

impl StubGenerator {
    pub fn new(names: Vec<String>, seed: u64) -> Self {
        Self {
            names,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn domain_of(&self, prompt: &str) -> usize {
        // longest match first so "Math" does not shadow "Mathematics"
        let mut order: Vec<usize> = (0..self.names.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(self.names[i].len()));
        order
            .into_iter()
            .find(|&i| prompt.contains(&format!("expertise in {}.", self.names[i])))
            .unwrap_or(0)
    }
}

impl Generator for StubGenerator {
    fn generate(&mut self, request: &GeneratorRequest) -> Result<String, SynthesisError> {
        use rand::Rng;
        static COUNT: OnceLock<Regex> = OnceLock::new();
        let count_re =
            COUNT.get_or_init(|| Regex::new(r"Generate (\d+) different").expect("static regex"));
        let k = self.domain_of(&request.prompt);
        let n = count_re
            .captures(&request.prompt)
            .and_then(|c| c[1].parse::<usize>().ok())
            .unwrap_or(1);
        let name = &self.names[k];
        let mut out = String::new();
        for i in 1..=n {
            let nonce: u64 = self.rng.random();
            out.push_str(&format!(
                "Instruction {i}: [{name} task #{k}:{nonce:016x}], Input {i}: [], Output {i}: [{name} answer {nonce:016x}]\n"
            ));
        }
        Ok(out)
    }
}

/// Featurizer matching [`StubGenerator`]: a stub item of domain `k` maps to
/// `means[k] + spread * |means[k]| * u` with `u` a unit direction seeded by
/// the item nonce. Any other text maps to a standard normal vector seeded by
/// a hash of the text.
pub struct StubFeaturizer {
    means: Vec<Vec<f64>>,
    spread: f64,
    seed: u64,
}

impl StubFeaturizer {
    pub fn new(means: Vec<Vec<f64>>, spread: f64, seed: u64) -> Self {
        Self {
            means,
            spread,
            seed,
        }
    }

    fn gaussian(&self, seed: u64, dim: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

impl Featurizer for StubFeaturizer {
    fn featurize(&mut self, text: &str) -> Result<Vec<f64>, SynthesisError> {
        static TOKEN: OnceLock<Regex> = OnceLock::new();
        let token = TOKEN.get_or_init(|| Regex::new(r"#(\d+):([0-9a-f]{16})").expect("static regex"));
        let dim = self.means.first().map_or(0, Vec::len);
        if let Some(c) = token.captures(text) {
            let k: usize = c[1].parse().unwrap_or(usize::MAX);
            let nonce = u64::from_str_radix(&c[2], 16).unwrap_or(0);
            if let Some(mean) = self.means.get(k) {
                let u = self.gaussian(self.seed ^ nonce, dim);
                let un = vector::norm(&u);
                let scale = self.spread * vector::norm(mean) / un;
                return Ok(mean.iter().zip(&u).map(|(m, z)| m + scale * z).collect());
            }
        }
        let h = crate::report::fnv1a_ids(&[text]);
        Ok(self.gaussian(self.seed ^ h, dim))
    }
}
