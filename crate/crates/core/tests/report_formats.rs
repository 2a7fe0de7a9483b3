use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::OnceLock;

use serde_json::Value;

use robustkit::attacks::{AttackConfig, AttackKind};
use robustkit::corruption::Method;
use robustkit::dataset::{generate, shape_labels, Split};
use robustkit::defenses::toy_inference_pipeline;
use robustkit::gate::{GateMode, GatePolicy};
use robustkit::harness::{
    run_attack_campaign, run_corruption_campaign, LocalTarget, RemoteConfig, RemoteTarget,
};
use robustkit::mock::{FailurePlan, MockServer};
use robustkit::model::ModelParams;
use robustkit::report::{
    emit_report, render_csv, render_svg, DefenseRow, EvaluationReport, ReportFormat, CSV_HEADER,
};
use robustkit::training::{train, TrainConfig};

fn model() -> &'static ModelParams {
    static M: OnceLock<ModelParams> = OnceLock::new();
    M.get_or_init(|| {
        let cfg = TrainConfig {
            epochs: 3,
            seed: 5,
            ..TrainConfig::default()
        };
        train(&generate(5, Split::Train, 300), &cfg).unwrap().0
    })
}

/// Corruption, attack and defense rows against a local target, including a
/// gate-exhausted cell.
fn local_report() -> EvaluationReport {
    let target = LocalTarget::with_pipeline(model().clone(), toy_inference_pipeline()).unwrap();
    let test = generate(6, Split::Test, 30);
    let policy = GatePolicy::default();
    let mut report = run_corruption_campaign(
        &target,
        &test,
        &[
            Method::GaussianNoise,
            Method::GaussianBlur,
            Method::Brightness,
        ],
        &[1, 5],
        &policy,
        9,
    )
    .unwrap();
    let attacks = run_attack_campaign(
        &target,
        model(),
        &test,
        &[
            AttackConfig::new(AttackKind::FflPgd, 4.0).with_seed(2),
            AttackConfig::new(AttackKind::Pgd, 4.0).with_seed(2),
            AttackConfig::new(AttackKind::Fgsm, 2.0).with_seed(2),
            AttackConfig::new(AttackKind::Pgd, 2.0).with_seed(2),
        ],
        &policy,
    )
    .unwrap();
    report.attack_rows = attacks.attack_rows;
    report.defense_rows.push(DefenseRow {
        defense: "hardened".into(),
        method: Method::SaltPepper,
        severity: 0,
        param: 0.02,
        n: 30,
        undefended_rate: 0.6,
        defended_rate: 0.9,
    });
    report.metadata.generated_unix_s = Some(1_700_000_000);
    report.finalize();
    report
}

/// Remote target with injected failures, so rows carry notes.
fn remote_report() -> EvaluationReport {
    let plan = FailurePlan {
        persistent_fraction: 0.3,
        ..FailurePlan::default()
    };
    let server = MockServer::start(model().clone(), shape_labels(), plan).unwrap();
    let mut cfg = RemoteConfig::new(server.url(), &shape_labels());
    cfg.backoff_ms = 1;
    cfg.rate_limit_qps = Some(1000.0);
    let target = RemoteTarget::new(cfg).unwrap();
    let policy = GatePolicy {
        mode: GateMode::Flag,
        ..GatePolicy::default()
    };
    run_corruption_campaign(
        &target,
        &generate(7, Split::Test, 20),
        &[Method::Fog],
        &[3],
        &policy,
        1,
    )
    .unwrap()
}

fn reports() -> &'static (EvaluationReport, EvaluationReport) {
    static R: OnceLock<(EvaluationReport, EvaluationReport)> = OnceLock::new();
    R.get_or_init(|| (local_report(), remote_report()))
}

#[test]
fn json_round_trip_is_lossless() {
    for r in [&reports().0, &reports().1] {
        let text = r.to_json().unwrap();
        let back = EvaluationReport::from_json(&text).unwrap();
        assert_eq!(&back, r);
        assert_eq!(back.to_json().unwrap(), text);
    }
}

#[test]
fn csv_has_one_line_per_row_plus_header() {
    for r in [&reports().0, &reports().1] {
        let text = render_csv(r).unwrap();
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
        assert_eq!(header, CSV_HEADER);
        let rows: Vec<csv::StringRecord> = rdr.records().map(|x| x.unwrap()).collect();
        assert_eq!(rows.len(), r.row_count());
        assert!(rows.iter().all(|row| row.len() == CSV_HEADER.len()));
        assert_eq!(text.lines().count(), r.row_count() + 1);
    }
}

#[test]
fn svg_parses_with_one_group_per_method() {
    let r = &reports().0;
    let svg = render_svg(r);
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let groups: Vec<&str> = doc
        .descendants()
        .filter(|n| n.attribute("class") == Some("bar-group"))
        .map(|n| n.attribute("data-name").unwrap())
        .collect();
    let mut expected: Vec<String> = vec!["clean".into()];
    for row in &r.corruption_rows {
        if !expected.contains(&row.method.name().to_string()) {
            expected.push(row.method.name().to_string());
        }
    }
    for row in &r.attack_rows {
        if !expected.contains(&row.kind.to_string()) {
            expected.push(row.kind.to_string());
        }
    }
    expected.push("hardened:salt_pepper".into());
    assert_eq!(groups, expected);
    let unique: BTreeSet<&str> = groups.iter().copied().collect();
    assert_eq!(unique.len(), groups.len());
    let bars = doc.descendants().filter(|n| n.has_tag_name("rect")).count();
    assert_eq!(bars, r.row_count() + r.defense_rows.len());
}

#[test]
fn attack_rows_are_in_canonical_order() {
    let keys: Vec<(AttackKind, f64)> = reports()
        .0
        .attack_rows
        .iter()
        .map(|r| (r.kind, r.epsilon))
        .collect();
    assert_eq!(
        keys,
        vec![
            (AttackKind::Fgsm, 2.0),
            (AttackKind::Pgd, 2.0),
            (AttackKind::Pgd, 4.0),
            (AttackKind::FflPgd, 4.0)
        ]
    );
}

#[test]
fn emitted_files_match_renderers() {
    let dir = tempfile::tempdir().unwrap();
    let r = &reports().0;
    for f in [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Svg] {
        let path = dir.path().join(format!("r.{}", f.extension()));
        emit_report(r, f, &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            robustkit::report::render(r, f).unwrap()
        );
    }
}

#[test]
fn invalid_reports_are_rejected() {
    let mut r = reports().0.clone();
    r.corruption_rows[0].gate_pass_fraction = 1.5;
    assert!(EvaluationReport::from_json(&r.to_json().unwrap()).is_err());
    let mut r = reports().0.clone();
    r.attack_rows[0].n = 0;
    assert!(r.validate().is_err());
}

#[test]
fn accounting_matches_row_sums() {
    for r in [&reports().0, &reports().1] {
        let sum = r.clean.as_ref().map_or(0, |c| c.queries)
            + r.corruption_rows.iter().map(|x| x.queries).sum::<u64>()
            + r.attack_rows.iter().map(|x| x.queries).sum::<u64>();
        assert_eq!(r.total_queries, sum);
    }
    assert!(reports().1.partial);
}

fn json_type(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Paths whose contents follow another documented format.
const OPAQUE: [&str; 1] = ["metadata.target.pipeline"];

fn collect(v: &Value, path: &str, out: &mut BTreeSet<(String, &'static str)>) {
    out.insert((path.to_string(), json_type(v)));
    if OPAQUE.contains(&path) {
        return;
    }
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let p = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                collect(child, &p, out);
            }
        }
        Value::Array(a) => {
            for child in a {
                collect(child, &format!("{path}[]"), out);
            }
        }
        _ => {}
    }
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/report-schema.txt")
}

/// Parses `path: type|type` lines.
fn read_golden() -> Vec<(String, BTreeSet<String>)> {
    std::fs::read_to_string(golden_path())
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (p, t) = l.split_once(": ").unwrap();
            (p.to_string(), t.split('|').map(String::from).collect())
        })
        .collect()
}

#[test]
fn report_json_matches_golden_schema() {
    let mut seen = BTreeSet::new();
    for r in [&reports().0, &reports().1] {
        let v: Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        collect(&v, "", &mut seen);
    }
    seen.remove(&(String::new(), "object"));
    let golden = read_golden();
    let golden_paths: BTreeSet<&str> = golden.iter().map(|(p, _)| p.as_str()).collect();
    for (path, ty) in &seen {
        let allowed = golden
            .iter()
            .find(|(p, _)| p == path)
            .unwrap_or_else(|| panic!("field {path} is not in the golden schema"))
            .1
            .clone();
        assert!(
            allowed.contains(*ty),
            "{path} has type {ty}, allowed {allowed:?}"
        );
    }
    let seen_paths: BTreeSet<&str> = seen.iter().map(|(p, _)| p.as_str()).collect();
    let missing: Vec<&&str> = golden_paths.difference(&seen_paths).collect();
    assert!(
        missing.is_empty(),
        "golden fields never produced: {missing:?}"
    );
}

#[test]
fn schema_doc_lists_every_golden_field() {
    let doc = std::fs::read_to_string(
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs/report-schema.md"),
    )
    .unwrap();
    for (path, _) in read_golden()
        .into_iter()
        .filter(|(p, _)| !p.ends_with("[]"))
    {
        assert!(
            doc.contains(&format!("`{path}`")),
            "docs/report-schema.md lacks `{path}`"
        );
    }
}
