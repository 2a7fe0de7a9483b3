//! Checks that need a model trained on the bundled corpus. One model is
//! shared by every test in this file.

use std::sync::OnceLock;

use robustkit::attacks::{
    ffl_pgd_attack, low_feature_distance, pgd, train_shadow, AttackConfig, AttackKind,
};
use robustkit::corruption::{Category, CorruptionSpec, Method};
use robustkit::dataset::{bundled, Dataset};
use robustkit::defenses::{
    adversarially_train, detect, roc_auc, spatial_defense_rate, toy_inference_pipeline,
    train_detector, DetectorParams,
};
use robustkit::gate::{GateMode, GatePolicy};
use robustkit::harness::{run_attack_campaign, run_corruption_campaign, Classifier, LocalTarget};
use robustkit::model::{predict, ModelParams};
use robustkit::report::AttackRow;
use robustkit::training::{accuracy, train, TrainConfig};
use robustkit::Image;

fn data() -> &'static (Dataset, Dataset) {
    static D: OnceLock<(Dataset, Dataset)> = OnceLock::new();
    D.get_or_init(|| bundled(0))
}

fn eval_set() -> Dataset {
    data().1.head(150)
}

fn base() -> &'static ModelParams {
    static M: OnceLock<ModelParams> = OnceLock::new();
    M.get_or_init(|| train(&data().0, &TrainConfig::default()).unwrap().0)
}

fn shadow() -> &'static ModelParams {
    static M: OnceLock<ModelParams> = OnceLock::new();
    M.get_or_init(|| {
        let cfg = TrainConfig {
            seed: 1,
            ..TrainConfig::default()
        };
        train(&data().0, &cfg).unwrap().0
    })
}

fn white_box(cfgs: &[AttackConfig]) -> Vec<AttackRow> {
    let target = LocalTarget::new(base().clone());
    run_attack_campaign(&target, base(), &eval_set(), cfgs, &GatePolicy::default())
        .unwrap()
        .attack_rows
}

fn row(rows: &[AttackRow], kind: AttackKind, eps: f64) -> &AttackRow {
    rows.iter()
        .find(|r| r.kind == kind && r.epsilon == eps)
        .unwrap()
}

#[test]
fn trained_model_is_accurate() {
    let acc = accuracy(base(), &data().1).unwrap();
    assert!(acc >= 0.90, "test accuracy {acc}");
}

#[test]
fn white_box_attacks_escape() {
    let rows = white_box(&[
        AttackConfig::new(AttackKind::Fgsm, 8.0).with_seed(1),
        AttackConfig::new(AttackKind::Pgd, 8.0).with_seed(1),
    ]);
    let fgsm = row(&rows, AttackKind::Fgsm, 8.0).escape_rate.unwrap();
    let pgd = row(&rows, AttackKind::Pgd, 8.0).escape_rate.unwrap();
    assert!(fgsm >= 0.5, "fgsm {fgsm}");
    assert!(pgd >= 0.90, "pgd {pgd}");
    assert!(fgsm <= pgd, "fgsm {fgsm} above pgd {pgd}");
    let floor = GatePolicy::default().min_psnr_db;
    for r in &rows {
        assert_eq!(r.evaluated, r.n, "{:?} lost items to the gate", r.kind);
        assert!(r.mean_psnr.unwrap() >= floor);
    }
}

#[test]
fn escape_rate_grows_with_epsilon() {
    let eps = [1.0, 2.0, 4.0, 8.0];
    let cfgs: Vec<AttackConfig> = eps
        .iter()
        .map(|&e| AttackConfig::new(AttackKind::Pgd, e).with_seed(2))
        .collect();
    let rows = white_box(&cfgs);
    for w in rows.windows(2) {
        let (a, b) = (w[0].escape_rate.unwrap(), w[1].escape_rate.unwrap());
        let se = w[0].escape_stderr.unwrap().max(w[1].escape_stderr.unwrap());
        assert!(
            b >= a - se,
            "eps {} -> {}: {a} -> {b}",
            w[0].epsilon,
            w[1].epsilon
        );
    }
    assert!(rows[3].escape_rate.unwrap() > rows[0].escape_rate.unwrap());
}

#[test]
fn ffl_without_penalty_is_pgd() {
    let target = LocalTarget::new(base().clone());
    for (i, s) in data().1.head(20).items.iter().enumerate() {
        let mut cfg = AttackConfig::new(AttackKind::FflPgd, 8.0).with_seed(i as u64);
        cfg.lambda = 0.0;
        let ffl = ffl_pgd_attack(base(), &target, &s.image, s.label, &cfg).unwrap();
        cfg.kind = AttackKind::Pgd;
        let plain = pgd(base(), &s.image, s.label, &cfg).unwrap();
        if plain.escaped {
            assert_eq!(ffl.adversarial, plain.adversarial);
            assert!(ffl.escaped);
        }
    }
}

#[test]
fn ffl_keeps_low_features_closer_than_pgd() {
    let test = data().1.head(120);
    let target = LocalTarget::new(base().clone());
    // [attack][escaped on the shadow] -> (sum, count)
    let mut groups = [[(0.0, 0usize); 2]; 2];
    for (i, s) in test.items.iter().enumerate() {
        let seed = 100 + i as u64;
        let ffl_cfg = AttackConfig::new(AttackKind::FflPgd, 8.0).with_seed(seed);
        let mut pgd_cfg = ffl_cfg.clone();
        pgd_cfg.kind = AttackKind::Pgd;
        let outputs = [
            ffl_pgd_attack(shadow(), &target, &s.image, s.label, &ffl_cfg).unwrap(),
            pgd(shadow(), &s.image, s.label, &pgd_cfg).unwrap(),
        ];
        for (k, r) in outputs.iter().enumerate() {
            let escaped = predict(shadow(), r.image()).unwrap().label != s.label;
            let d = low_feature_distance(shadow(), &s.image, r.image()).unwrap();
            let g = &mut groups[k][escaped as usize];
            g.0 += d;
            g.1 += 1;
        }
    }
    assert!(test.len() >= 100);
    let mut compared = 0;
    for status in 0..2 {
        let (ffl, plain) = (groups[0][status], groups[1][status]);
        println!("escaped={status}: ffl {ffl:?} pgd {plain:?}");
        if ffl.1 == 0 || plain.1 == 0 {
            continue;
        }
        let (a, b) = (ffl.0 / ffl.1 as f64, plain.0 / plain.1 as f64);
        assert!(a <= b, "escaped={status}: ffl {a} vs pgd {b}");
        compared += 1;
    }
    assert!(compared >= 1);
}

#[test]
fn shadow_agrees_with_target_and_counts_queries() {
    let target = LocalTarget::new(base().clone());
    let pool = data().0.images();
    let budget = 600;
    let pool = &pool[..budget];
    let cfg = TrainConfig {
        seed: 7,
        ..TrainConfig::default()
    };
    let shadow = train_shadow(budget as u64, &target, pool, 3, &cfg).unwrap();
    assert_eq!(shadow.queries_used, budget as u64);
    assert_eq!(target.query_count(), budget as u64);
    assert!(shadow.agreement >= 0.85, "agreement {}", shadow.agreement);
}

#[test]
fn transfer_rows_respect_query_bound() {
    let target = LocalTarget::new(base().clone());
    let test = eval_set();
    let report = run_attack_campaign(
        &target,
        shadow(),
        &test,
        &[
            AttackConfig::new(AttackKind::Pgd, 8.0).with_seed(3),
            AttackConfig::new(AttackKind::FflPgd, 8.0).with_seed(3),
        ],
        &GatePolicy::default(),
    )
    .unwrap();
    for r in &report.attack_rows {
        assert!(r.max_queries_per_item <= 2);
        assert!(r.queries <= 2 * r.evaluated as u64);
        println!("transfer {} escape {:?}", r.kind, r.escape_rate);
    }
    let plain = row(&report.attack_rows, AttackKind::Pgd, 8.0);
    assert_eq!(plain.queries, plain.evaluated as u64);
    assert_eq!(report.total_queries, target.query_count());
}

#[test]
fn corruption_degrades_and_blur_hurts_most() {
    let target = LocalTarget::new(base().clone());
    let policy = GatePolicy {
        min_psnr_db: 0.0,
        min_ssim: 0.0,
        mode: GateMode::Flag,
    };
    let report =
        run_corruption_campaign(&target, &eval_set(), &Method::ALL, &[3, 4, 5], &policy, 2)
            .unwrap();
    let mut families: Vec<(Category, f64, usize)> = Vec::new();
    for r in &report.corruption_rows {
        let acc = r.accuracy.unwrap();
        if matches!(r.category, Category::Noise | Category::Blur) {
            assert!(
                acc < 1.0,
                "{} severity {} left accuracy at {acc}",
                r.method,
                r.severity
            );
        }
        match families.iter_mut().find(|f| f.0 == r.category) {
            Some(f) => {
                f.1 += 1.0 - acc;
                f.2 += 1;
            }
            None => families.push((r.category, 1.0 - acc, 1)),
        }
    }
    let drops: Vec<(Category, f64)> = families
        .iter()
        .map(|(c, s, k)| (*c, s / *k as f64))
        .collect();
    println!("{drops:?}");
    let blur = drops.iter().find(|d| d.0 == Category::Blur).unwrap().1;
    for (c, d) in &drops {
        assert!(
            *c == Category::Blur || *d < blur,
            "{c:?} drop {d} vs blur {blur}"
        );
    }

    let rotation: Vec<f64> = report
        .corruption_rows
        .iter()
        .filter(|r| r.method == Method::Rotation)
        .map(|r| 1.0 - r.accuracy.unwrap())
        .collect();
    let at_135 = report
        .corruption_rows
        .iter()
        .find(|r| r.method == Method::Rotation && r.param.abs() == 135.0)
        .map(|r| 1.0 - r.accuracy.unwrap())
        .unwrap();
    let peak = rotation.iter().cloned().fold(0.0, f64::max);
    assert!(
        at_135 >= peak - 0.1,
        "rotation drop at 135 {at_135} vs peak {peak}"
    );
}

fn pgd_escape(params: &ModelParams, test: &Dataset) -> f64 {
    let target = LocalTarget::new(params.clone());
    run_attack_campaign(
        &target,
        params,
        test,
        &[AttackConfig::new(AttackKind::Pgd, 8.0).with_seed(4)],
        &GatePolicy::default(),
    )
    .unwrap()
    .attack_rows[0]
        .escape_rate
        .unwrap()
}

#[test]
fn adversarial_training_lowers_escape_rate() {
    let test = data().1.head(100);
    let mut adv = AttackConfig::new(AttackKind::Pgd, 4.0);
    adv.steps = 5;
    adv.step_size = Some(1.5);
    let hardened = adversarially_train(&data().0, &adv, 12, 0).unwrap();
    let before = pgd_escape(base(), &test);
    let after = pgd_escape(&hardened, &test);
    let acc_before = accuracy(base(), &test).unwrap();
    let acc_after = accuracy(&hardened, &test).unwrap();
    println!("escape {before} -> {after}, accuracy {acc_before} -> {acc_after}");
    assert!(after < before);
    assert!(acc_after >= acc_before - 0.15);
}

#[test]
fn inference_pipeline_defends_against_salt_pepper() {
    let test = data().1.head(100);
    let spec = CorruptionSpec::new(Method::SaltPepper, 3, 5);
    let undefended = spatial_defense_rate(base(), &test, &spec, None).unwrap();
    let defended =
        spatial_defense_rate(base(), &test, &spec, Some(&toy_inference_pipeline())).unwrap();
    assert!(defended > undefended, "{defended} vs {undefended}");
}

fn adversarials(test: &Dataset, offset: u64) -> Vec<Image> {
    test.items
        .iter()
        .enumerate()
        .map(|(i, s)| {
            pgd(
                base(),
                &s.image,
                s.label,
                &AttackConfig::new(AttackKind::Pgd, 8.0).with_seed(offset + i as u64),
            )
            .unwrap()
            .adversarial
            .unwrap()
        })
        .collect()
}

struct DetectorData {
    train_clean: Vec<Image>,
    train_adv: Vec<Image>,
    test_clean: Vec<Image>,
    test_adv: Vec<Image>,
}

fn detector_data() -> &'static DetectorData {
    static D: OnceLock<DetectorData> = OnceLock::new();
    D.get_or_init(|| {
        let tr = data().0.head(300);
        let te = data().1.head(150);
        DetectorData {
            train_clean: tr.images(),
            train_adv: adversarials(&tr, 0),
            test_clean: te.images(),
            test_adv: adversarials(&te, 10_000),
        }
    })
}

fn held_out_auc(det: &DetectorParams, model: &dyn Classifier) -> (f64, f64, f64) {
    let d = detector_data();
    let score = |imgs: &[Image]| -> Vec<f64> {
        imgs.iter()
            .map(|x| detect(det, model, x).unwrap())
            .collect()
    };
    let pos = score(&d.test_adv);
    let neg = score(&d.test_clean);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (roc_auc(&pos, &neg).unwrap(), mean(&neg), mean(&pos))
}

#[test]
fn detector_separates_pgd_examples() {
    let target = LocalTarget::new(base().clone());
    let d = detector_data();
    let mut aucs = Vec::new();
    for seed in [0, 1, 2] {
        let det = train_detector(&target, &d.train_clean, &d.train_adv, seed).unwrap();
        let (auc, clean_mean, adv_mean) = held_out_auc(&det, &target);
        println!("seed {seed}: auc {auc:.3} clean {clean_mean:.3} adv {adv_mean:.3}");
        assert!(auc >= 0.80, "seed {seed}: auc {auc}");
        assert!(clean_mean < adv_mean);
        aucs.push(auc);
    }
    let spread = aucs.iter().cloned().fold(f64::MIN, f64::max)
        - aucs.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread <= 0.04, "auc spread {spread}");
    let again = train_detector(&target, &d.train_clean, &d.train_adv, 0).unwrap();
    assert_eq!(
        again,
        train_detector(&target, &d.train_clean, &d.train_adv, 0).unwrap()
    );
}
