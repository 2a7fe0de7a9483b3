//! Classifier targets (local model or remote HTTP endpoint) and the
//! corruption and attack campaigns that score them.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::attacks::{ffl_pgd_attack, fgsm_perturb, pgd_perturb, AttackConfig, AttackKind};
use crate::corruption::{apply_corruption, CorruptionSpec, Method};
use crate::dataset::Dataset;
use crate::defenses::{preprocess, PreprocessPipeline};
use crate::error::{Error, Result};
use crate::gate::{GateMode, GatePolicy};
use crate::image::{encode_png, Image};
use crate::metrics::QualityMetrics;
use crate::model::{encode_params, predict, LabelSet, ModelParams, Prediction};
use crate::report::{
    AttackRow, CleanRow, CorruptionRow, EvaluationReport, ReportMetadata, RowNote,
};
use crate::rng::derive_seed;

/// Black-box access to an image classifier.
pub trait Classifier: Send + Sync {
    /// Top-1 label and per-class scores. Counts as exactly one query.
    fn classify(&self, img: &Image) -> Result<Prediction>;
    fn query_count(&self) -> u64;
    fn describe(&self) -> TargetDescriptor;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetDescriptor {
    Local {
        classes: usize,
        /// FNV-1a of the encoded params, hex.
        params_digest: String,
        pipeline: Option<PreprocessPipeline>,
    },
    Remote {
        endpoint: String,
        timeout_ms: u64,
        max_retries: u32,
        rate_limit_qps: Option<f64>,
    },
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub struct LocalTarget {
    params: ModelParams,
    pipeline: Option<PreprocessPipeline>,
    queries: AtomicU64,
}

impl LocalTarget {
    pub fn new(params: ModelParams) -> Self {
        Self {
            params,
            pipeline: None,
            queries: AtomicU64::new(0),
        }
    }

    pub fn with_pipeline(params: ModelParams, pipeline: PreprocessPipeline) -> Result<Self> {
        pipeline.validate()?;
        Ok(Self {
            params,
            pipeline: Some(pipeline),
            queries: AtomicU64::new(0),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }
}

impl Classifier for LocalTarget {
    fn classify(&self, img: &Image) -> Result<Prediction> {
        self.queries.fetch_add(1, Ordering::SeqCst);
        match &self.pipeline {
            Some(p) => predict(&self.params, &preprocess(img, p)?),
            None => predict(&self.params, img),
        }
    }

    fn query_count(&self) -> u64 {
        self.queries.load(Ordering::SeqCst)
    }

    fn describe(&self) -> TargetDescriptor {
        TargetDescriptor::Local {
            classes: self.params.classes,
            params_digest: format!("{:016x}", fnv1a(&encode_params(&self.params))),
            pipeline: self.pipeline.clone(),
        }
    }
}

/// Where to find labels and scores in a vendor response. Paths are
/// dot-separated object keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResponseAdapter {
    pub image_field: String,
    pub top_k_field: String,
    pub labels_path: String,
    pub name_field: String,
    pub score_field: String,
}

impl Default for ResponseAdapter {
    fn default() -> Self {
        Self {
            image_field: "image_png_b64".into(),
            top_k_field: "top_k".into(),
            labels_path: "labels".into(),
            name_field: "name".into(),
            score_field: "score".into(),
        }
    }
}

fn lookup<'a>(v: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.')
        .filter(|s| !s.is_empty())
        .try_fold(v, |cur, key| cur.get(key))
}

impl ResponseAdapter {
    /// Validates a response body and maps it onto `labels`. Classes missing
    /// from the response get score 0; the rest are renormalized.
    pub fn parse(&self, body: &str, labels: &LabelSet) -> Result<Prediction> {
        let v: Value = serde_json::from_str(body)
            .map_err(|e| Error::Protocol(format!("response is not JSON: {e}")))?;
        let arr = lookup(&v, &self.labels_path)
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Protocol(format!("missing array at '{}'", self.labels_path)))?;
        let mut scores = vec![0.0; labels.len()];
        let mut matched = false;
        for (i, entry) in arr.iter().enumerate() {
            let name = lookup(entry, &self.name_field)
                .and_then(Value::as_str)
                .ok_or_else(|| Error::Protocol(format!("labels[{i}] has no string name")))?;
            let score = lookup(entry, &self.score_field)
                .and_then(Value::as_f64)
                .filter(|s| s.is_finite() && *s >= 0.0)
                .ok_or_else(|| {
                    Error::Protocol(format!("labels[{i}] has no non-negative numeric score"))
                })?;
            if let Some(k) = labels.index_of(name) {
                scores[k] = score;
                matched = true;
            }
        }
        if !matched {
            return Err(Error::Protocol("no known class in response".into()));
        }
        let total: f64 = scores.iter().sum();
        if total > 0.0 {
            scores.iter_mut().for_each(|s| *s /= total);
        }
        Ok(Prediction::from_scores(scores))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Sent verbatim, e.g. `"Authorization: Bearer xyz"`.
    #[serde(default)]
    pub auth_header: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// Upper bound on HTTP requests per second, retries included.
    #[serde(default)]
    pub rate_limit_qps: Option<f64>,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    pub classes: Vec<String>,
    #[serde(default)]
    pub adapter: ResponseAdapter,
}

fn default_timeout_ms() -> u64 {
    5000
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    20
}
fn default_top_k() -> usize {
    5
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, classes: &LabelSet) -> Self {
        Self {
            endpoint: endpoint.into(),
            auth_header: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            rate_limit_qps: None,
            top_k: default_top_k(),
            classes: classes.names.clone(),
            adapter: ResponseAdapter::default(),
        }
    }
}

pub struct RemoteTarget {
    cfg: RemoteConfig,
    labels: LabelSet,
    auth: Option<(String, String)>,
    agent: ureq::Agent,
    queries: AtomicU64,
    next_slot: Mutex<Option<Instant>>,
}

enum Attempt {
    Retry(String),
    Fatal(Error),
}

impl RemoteTarget {
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        if cfg.classes.is_empty() {
            return Err(Error::InvalidConfig(
                "remote target needs class names".into(),
            ));
        }
        if let Some(q) = cfg.rate_limit_qps {
            if !(q > 0.0 && q.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "rate limit must be > 0, got {q}"
                )));
            }
        }
        let auth = match &cfg.auth_header {
            Some(h) => {
                let (k, v) = h
                    .split_once(':')
                    .ok_or_else(|| Error::InvalidConfig(format!("auth header '{h}' lacks ':'")))?;
                Some((k.trim().to_string(), v.trim().to_string()))
            }
            None => None,
        };
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build();
        Ok(Self {
            labels: LabelSet {
                names: cfg.classes.clone(),
            },
            cfg,
            auth,
            agent,
            queries: AtomicU64::new(0),
            next_slot: Mutex::new(None),
        })
    }

    fn wait_for_slot(&self) {
        let Some(qps) = self.cfg.rate_limit_qps else {
            return;
        };
        let interval = Duration::from_secs_f64(1.0 / qps);
        let mut next = self.next_slot.lock().expect("rate limiter poisoned");
        let now = Instant::now();
        if let Some(t) = *next {
            if t > now {
                thread::sleep(t - now);
            }
        }
        *next = Some(Instant::now() + interval);
    }

    fn attempt(&self, body: &str) -> std::result::Result<Prediction, Attempt> {
        self.wait_for_slot();
        let mut req = self
            .agent
            .post(&self.cfg.endpoint)
            .set("Content-Type", "application/json");
        if let Some((k, v)) = &self.auth {
            req = req.set(k, v);
        }
        match req.send_string(body) {
            Ok(resp) => {
                let text = resp
                    .into_string()
                    .map_err(|e| Attempt::Retry(format!("reading body: {e}")))?;
                self.cfg
                    .adapter
                    .parse(&text, &self.labels)
                    .map_err(Attempt::Fatal)
            }
            Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => {
                Err(Attempt::Retry(format!("HTTP {code}")))
            }
            Err(ureq::Error::Status(code, _)) => {
                Err(Attempt::Fatal(Error::Protocol(format!("HTTP {code}"))))
            }
            Err(ureq::Error::Transport(t)) => Err(Attempt::Retry(t.to_string())),
        }
    }
}

impl Classifier for RemoteTarget {
    fn classify(&self, img: &Image) -> Result<Prediction> {
        self.queries.fetch_add(1, Ordering::SeqCst);
        let b64 = base64::engine::general_purpose::STANDARD.encode(encode_png(img)?);
        let mut body = serde_json::Map::new();
        body.insert(self.cfg.adapter.image_field.clone(), json!(b64));
        body.insert(self.cfg.adapter.top_k_field.clone(), json!(self.cfg.top_k));
        let body = Value::Object(body).to_string();
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(self.cfg.backoff_ms << (attempt - 1)));
            }
            match self.attempt(&body) {
                Ok(p) => return Ok(p),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => last = msg,
            }
        }
        Err(Error::Transport(format!(
            "{} failed after {} attempts: {last}",
            self.cfg.endpoint,
            self.cfg.max_retries + 1
        )))
    }

    fn query_count(&self) -> u64 {
        self.queries.load(Ordering::SeqCst)
    }

    fn describe(&self) -> TargetDescriptor {
        TargetDescriptor::Remote {
            endpoint: self.cfg.endpoint.clone(),
            timeout_ms: self.cfg.timeout_ms,
            max_retries: self.cfg.max_retries,
            rate_limit_qps: self.cfg.rate_limit_qps,
        }
    }
}

// ---------------------------------------------------------------------------
// Campaigns

/// One (method, strength) cell of a corruption campaign. `raw` overrides the
/// severity table with an explicit parameter value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionCell {
    pub method: Method,
    pub severity: u8,
    #[serde(default)]
    pub raw: Option<f64>,
}

fn item_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, i as u64)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

struct CleanPass {
    row: CleanRow,
    correct: Vec<bool>,
}

fn clean_pass(target: &dyn Classifier, dataset: &Dataset) -> Result<CleanPass> {
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("campaign dataset is empty".into()));
    }
    let before = target.query_count();
    let mut correct = vec![false; dataset.len()];
    let mut failures = 0usize;
    for (i, s) in dataset.items.iter().enumerate() {
        match target.classify(&s.image) {
            Ok(p) => correct[i] = p.label == s.label,
            Err(e) if e.is_transport() => failures += 1,
            Err(e) => return Err(e),
        }
    }
    let answered = dataset.len() - failures;
    let hits = correct.iter().filter(|&&c| c).count();
    if hits == 0 {
        return Err(Error::UndefinedRate(
            "target classifies no clean item correctly".into(),
        ));
    }
    Ok(CleanPass {
        row: CleanRow {
            n: dataset.len(),
            evaluated: answered,
            accuracy: hits as f64 / answered as f64,
            queries: target.query_count() - before,
            transport_failures: failures,
        },
        correct,
    })
}

fn metadata(target: &dyn Classifier, seed: u64, policy: &GatePolicy) -> ReportMetadata {
    ReportMetadata {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        policy: *policy,
        target: target.describe(),
        shadow_queries: 0,
        generated_unix_s: None,
    }
}

/// Corrupts every clean-correct item for every method and severity, gates
/// the result and classifies the survivors. Cells are sorted by method and
/// severity.
pub fn run_corruption_campaign(
    target: &dyn Classifier,
    dataset: &Dataset,
    methods: &[Method],
    severities: &[u8],
    policy: &GatePolicy,
    seed: u64,
) -> Result<EvaluationReport> {
    let cells: Vec<CorruptionCell> = methods
        .iter()
        .flat_map(|&method| {
            severities.iter().map(move |&severity| CorruptionCell {
                method,
                severity,
                raw: None,
            })
        })
        .collect();
    run_corruption_cells(target, dataset, &cells, policy, seed)
}

pub fn run_corruption_cells(
    target: &dyn Classifier,
    dataset: &Dataset,
    cells: &[CorruptionCell],
    policy: &GatePolicy,
    seed: u64,
) -> Result<EvaluationReport> {
    policy.validate()?;
    let mut cells = cells.to_vec();
    cells.sort_by(|a, b| {
        (a.method, a.severity).cmp(&(b.method, b.severity)).then(
            a.raw
                .partial_cmp(&b.raw)
                .unwrap_or(std::cmp::Ordering::Equal),
        )
    });
    let clean = clean_pass(target, dataset)?;
    let mut rows = Vec::with_capacity(cells.len());
    for cell in &cells {
        rows.push(corruption_row(
            target,
            dataset,
            &clean.correct,
            cell,
            policy,
            seed,
        )?);
    }
    let mut report = EvaluationReport {
        metadata: metadata(target, seed, policy),
        clean: Some(clean.row),
        corruption_rows: rows,
        attack_rows: Vec::new(),
        defense_rows: Vec::new(),
        total_queries: 0,
        partial: false,
    };
    report.finalize();
    Ok(report)
}

fn cell_spec(cell: &CorruptionCell, seed: u64) -> CorruptionSpec {
    match cell.raw {
        Some(v) => CorruptionSpec::with_raw(cell.method, v, seed),
        None => CorruptionSpec::new(cell.method, cell.severity, seed),
    }
}

fn corruption_row(
    target: &dyn Classifier,
    dataset: &Dataset,
    clean_correct: &[bool],
    cell: &CorruptionCell,
    policy: &GatePolicy,
    seed: u64,
) -> Result<CorruptionRow> {
    let before = target.query_count();
    let cell_seed = derive_seed(
        derive_seed(seed, 1000 + cell.method as u64),
        cell.severity as u64,
    );
    let template = cell_spec(cell, cell_seed);
    let param = template.resolve()?;
    let (mut n, mut passed, mut evaluated, mut correct, mut failures) = (0, 0, 0, 0, 0);
    let (mut psnrs, mut ssims) = (Vec::new(), Vec::new());
    for (i, s) in dataset.items.iter().enumerate() {
        if !clean_correct[i] {
            continue;
        }
        n += 1;
        let mut spec = template.clone();
        spec.seed = item_seed(cell_seed, i);
        let corrupted = apply_corruption(&s.image, &spec)?;
        let m = QualityMetrics::measure(&s.image, &corrupted)?;
        let admitted = policy.admits(&m);
        if admitted {
            passed += 1;
        }
        if !admitted && policy.mode == GateMode::Reject {
            continue;
        }
        psnrs.push(m.capped_psnr());
        ssims.push(m.ssim);
        match target.classify(&corrupted) {
            Ok(p) => {
                evaluated += 1;
                if p.label == s.label {
                    correct += 1;
                }
            }
            Err(e) if e.is_transport() => failures += 1,
            Err(e) => return Err(e),
        }
    }
    let accuracy = (evaluated > 0).then(|| correct as f64 / evaluated as f64);
    let note = if evaluated > 0 {
        (failures > 0).then_some(RowNote::Partial)
    } else if passed == 0 && policy.mode == GateMode::Reject {
        Some(RowNote::GateExhausted)
    } else {
        Some(RowNote::TransportFailed)
    };
    Ok(CorruptionRow {
        method: cell.method,
        category: cell.method.category(),
        severity: cell.severity,
        param,
        n,
        evaluated,
        accuracy,
        escape_rate: accuracy.map(|a| 1.0 - a),
        mean_psnr: mean(&psnrs),
        mean_ssim: mean(&ssims),
        gate_pass_fraction: passed as f64 / n as f64,
        queries: target.query_count() - before,
        transport_failures: failures,
        note,
    })
}

/// Crafts adversarial examples on `source` (the shadow, or the target's own
/// weights for a white-box run) for every clean-correct item and checks them
/// against `target`.
pub fn run_attack_campaign(
    target: &dyn Classifier,
    source: &ModelParams,
    dataset: &Dataset,
    cfgs: &[AttackConfig],
    policy: &GatePolicy,
) -> Result<EvaluationReport> {
    policy.validate()?;
    for c in cfgs {
        c.validate()?;
    }
    let clean = clean_pass(target, dataset)?;
    let mut rows = Vec::with_capacity(cfgs.len());
    for cfg in cfgs {
        rows.push(attack_row(
            target,
            source,
            dataset,
            &clean.correct,
            cfg,
            policy,
        )?);
    }
    rows.sort_by(|a, b| {
        (a.kind, a.steps)
            .cmp(&(b.kind, b.steps))
            .then(a.epsilon.total_cmp(&b.epsilon))
    });
    let seed = cfgs.first().map_or(0, |c| c.seed);
    let mut report = EvaluationReport {
        metadata: metadata(target, seed, policy),
        clean: Some(clean.row),
        corruption_rows: Vec::new(),
        attack_rows: rows,
        defense_rows: Vec::new(),
        total_queries: 0,
        partial: false,
    };
    report.finalize();
    Ok(report)
}

fn attack_row(
    target: &dyn Classifier,
    source: &ModelParams,
    dataset: &Dataset,
    clean_correct: &[bool],
    cfg: &AttackConfig,
    policy: &GatePolicy,
) -> Result<AttackRow> {
    let before = target.query_count();
    let (mut n, mut passed, mut evaluated, mut escaped, mut failures) = (0, 0, 0, 0, 0);
    let (mut psnrs, mut ssims) = (Vec::new(), Vec::new());
    let mut max_queries = 0u32;
    for (i, s) in dataset.items.iter().enumerate() {
        if !clean_correct[i] {
            continue;
        }
        n += 1;
        let mut c = cfg.clone();
        c.seed = item_seed(cfg.seed, i);
        let check = |adv: &Image| -> Result<Option<QualityMetrics>> {
            let m = QualityMetrics::measure(&s.image, adv)?;
            Ok((policy.admits(&m) || policy.mode == GateMode::Flag).then_some(m))
        };
        let outcome = match cfg.kind {
            AttackKind::FflPgd => {
                // The gate runs on the crafted candidates before any query.
                let m = check(&pgd_perturb(source, &s.image, s.label, &c, true)?.last)?;
                match m {
                    None => None,
                    Some(_) => Some(
                        ffl_pgd_attack(source, target, &s.image, s.label, &c)
                            .map(|r| (r.escaped, r.metrics, r.queries_used)),
                    ),
                }
            }
            AttackKind::Fgsm | AttackKind::Pgd => {
                let adv = if cfg.kind == AttackKind::Fgsm {
                    fgsm_perturb(source, &s.image, s.label, c.epsilon)?
                } else {
                    pgd_perturb(source, &s.image, s.label, &c, false)?.last
                };
                check(&adv)?.map(|m| target.classify(&adv).map(|p| (p.label != s.label, m, 1)))
            }
        };
        let Some(result) = outcome else { continue };
        passed += 1;
        match result {
            Ok((esc, m, q)) => {
                evaluated += 1;
                max_queries = max_queries.max(q);
                if esc {
                    escaped += 1;
                }
                psnrs.push(m.capped_psnr());
                ssims.push(m.ssim);
            }
            Err(e) if e.is_transport() => failures += 1,
            Err(e) => return Err(e),
        }
    }
    let rate = (evaluated > 0).then(|| escaped as f64 / evaluated as f64);
    let note = if evaluated > 0 {
        (failures > 0).then_some(RowNote::Partial)
    } else if passed == 0 {
        Some(RowNote::GateExhausted)
    } else {
        Some(RowNote::TransportFailed)
    };
    Ok(AttackRow {
        kind: cfg.kind,
        epsilon: cfg.epsilon,
        steps: cfg.steps,
        n,
        evaluated,
        escape_rate: rate,
        escape_stderr: rate.map(|p| (p * (1.0 - p) / evaluated as f64).sqrt()),
        mean_psnr: mean(&psnrs),
        mean_ssim: mean(&ssims),
        gate_pass_fraction: passed as f64 / n as f64,
        queries: target.query_count() - before,
        max_queries_per_item: max_queries,
        transport_failures: failures,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, shape_labels, Split};

    #[test]
    fn local_target_counts_every_call() {
        let t = LocalTarget::new(ModelParams::init(3, 1));
        let img = generate(1, Split::Test, 1).items[0].image.clone();
        let first = t.classify(&img).unwrap();
        for _ in 0..999 {
            assert_eq!(t.classify(&img).unwrap(), first);
        }
        assert_eq!(t.query_count(), 1000);
    }

    #[test]
    fn adapter_parses_and_renormalizes() {
        let labels = shape_labels();
        let a = ResponseAdapter::default();
        let p = a
            .parse(
                r#"{"labels":[{"name":"cross","score":0.6},{"name":"circle","score":0.2},{"name":"dog","score":0.9}]}"#,
                &labels,
            )
            .unwrap();
        assert_eq!(p.label, 2);
        assert!((p.scores[2] - 0.75).abs() < 1e-12);
        assert_eq!(p.scores[1], 0.0);
        for bad in [
            "not json",
            r#"{"labels":{}}"#,
            r#"{"labels":[{"name":"circle"}]}"#,
            r#"{"labels":[{"name":"circle","score":-1}]}"#,
            r#"{"labels":[{"name":"dog","score":1}]}"#,
        ] {
            assert!(
                matches!(a.parse(bad, &labels), Err(Error::Protocol(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn adapter_follows_nested_paths() {
        let a = ResponseAdapter {
            labels_path: "result.tags".into(),
            name_field: "tag.en".into(),
            score_field: "confidence".into(),
            ..ResponseAdapter::default()
        };
        let body = r#"{"result":{"tags":[{"tag":{"en":"triangle"},"confidence":42}]}}"#;
        let p = a.parse(body, &shape_labels()).unwrap();
        assert_eq!(p.label, 1);
        assert_eq!(p.scores, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn unreachable_remote_is_transport_error_counted_once() {
        let mut cfg = RemoteConfig::new("http://127.0.0.1:9/classify", &shape_labels());
        cfg.max_retries = 1;
        cfg.backoff_ms = 1;
        cfg.timeout_ms = 200;
        let t = RemoteTarget::new(cfg).unwrap();
        let img = Image::filled(32, 32, [1, 2, 3]);
        assert!(matches!(t.classify(&img), Err(Error::Transport(_))));
        assert_eq!(t.query_count(), 1);
    }

    #[test]
    fn zero_strength_cells_match_clean_accuracy() {
        let ds = generate(4, Split::Test, 24);
        let params = ModelParams::init(3, 5);
        let mut relabeled = ds.clone();
        for s in relabeled.items.iter_mut() {
            s.label = predict(&params, &s.image).unwrap().label;
        }
        let target = LocalTarget::new(params);
        let cells: Vec<CorruptionCell> = Method::ALL
            .iter()
            .map(|&m| CorruptionCell {
                method: m,
                severity: 0,
                raw: Some(m.param().identity),
            })
            .collect();
        let r =
            run_corruption_cells(&target, &relabeled, &cells, &GatePolicy::default(), 3).unwrap();
        assert_eq!(r.corruption_rows.len(), Method::ALL.len());
        for row in &r.corruption_rows {
            assert_eq!(row.accuracy, Some(1.0), "{:?}", row.method);
            assert_eq!(row.mean_psnr, Some(crate::metrics::PSNR_CAP_DB));
        }
        assert_eq!(r.total_queries, target.query_count());
    }

    #[test]
    fn impossible_gate_marks_cells_empty() {
        let ds = generate(4, Split::Test, 9);
        let params = ModelParams::init(3, 5);
        let mut relabeled = ds.clone();
        for s in relabeled.items.iter_mut() {
            s.label = predict(&params, &s.image).unwrap().label;
        }
        let target = LocalTarget::new(params);
        let policy = GatePolicy {
            min_psnr_db: 99.0,
            min_ssim: 1.0,
            mode: GateMode::Reject,
        };
        let r = run_corruption_campaign(
            &target,
            &relabeled,
            &[Method::GaussianNoise],
            &[5],
            &policy,
            0,
        )
        .unwrap();
        let row = &r.corruption_rows[0];
        assert_eq!(row.accuracy, None);
        assert_eq!(row.note, Some(RowNote::GateExhausted));
        assert_eq!(row.queries, 0);
    }
}
