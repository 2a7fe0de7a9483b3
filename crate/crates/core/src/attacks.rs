//! L-infinity gradient attacks: FGSM, PGD and the two-step FFL-PGD transfer
//! attack (shadow training, then crafting on the shadow with a loss that keeps
//! conv1 activations close to the original while pushing the prediction away).
//!
//! Attacks iterate in continuous pixel space and round once at emission. The
//! rounded image is clipped to the integer box
//! `[ceil(x - eps), floor(x + eps)] ∩ [0, 255]`, so the budget holds exactly on
//! the emitted 8-bit pixels.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::harness::Classifier;
use crate::image::Image;
use crate::metrics::QualityMetrics;
use crate::model::{
    forward, forward_continuous, loss_and_grad_continuous, predict, Loss, ModelParams, Prediction,
    INPUT_SIZE,
};
use crate::rng::{derive_seed, SplitMix64};
use crate::training::{train, TrainConfig};

pub const MAX_EPSILON: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fgsm,
    Pgd,
    FflPgd,
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
            AttackKind::FflPgd => "ffl_pgd",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// L-infinity budget in pixel units.
    pub epsilon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Per-step move; `epsilon / 8` when absent.
    #[serde(default)]
    pub step_size: Option<f64>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_true")]
    pub random_start: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_steps() -> usize {
    20
}

fn default_lambda() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

impl AttackConfig {
    pub fn new(kind: AttackKind, epsilon: f64) -> Self {
        Self {
            kind,
            epsilon,
            steps: default_steps(),
            step_size: None,
            lambda: default_lambda(),
            random_start: true,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn step(&self) -> f64 {
        self.step_size.unwrap_or(self.epsilon / 8.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_EPSILON).contains(&self.epsilon) {
            return Err(Error::InvalidConfig(format!(
                "epsilon {} outside [0, {MAX_EPSILON}]",
                self.epsilon
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be >= 1".into()));
        }
        let step = self.step();
        if !(step >= 0.0) || (self.epsilon > 0.0 && step == 0.0) {
            return Err(Error::InvalidConfig(format!(
                "step_size must be > 0, got {step}"
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialResult {
    #[serde(skip)]
    pub adversarial: Option<Image>,
    pub escaped: bool,
    pub prediction: Prediction,
    pub metrics: QualityMetrics,
    pub queries_used: u32,
}

impl AdversarialResult {
    pub fn image(&self) -> &Image {
        self.adversarial
            .as_ref()
            .expect("adversarial image present")
    }
}

fn check_image(img: &Image) -> Result<()> {
    if img.width() != INPUT_SIZE || img.height() != INPUT_SIZE {
        return Err(Error::Shape(format!(
            "attack input must be {INPUT_SIZE}x{INPUT_SIZE}, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// Clips `x` into the eps-ball around `orig` and the valid pixel range.
fn project(x: &mut [f64], orig: &[f64], eps: f64) {
    for (v, &o) in x.iter_mut().zip(orig) {
        *v = v.clamp(o - eps, o + eps).clamp(0.0, 255.0);
    }
}

/// Rounds a continuous iterate to 8-bit pixels inside the integer budget box.
pub fn emit(x: &[f64], orig: &Image, eps: f64) -> Image {
    let px = x
        .iter()
        .zip(orig.pixels())
        .map(|(&v, &o)| {
            let o = o as f64;
            let lo = (o - eps).ceil().max(0.0);
            let hi = (o + eps).floor().min(255.0);
            v.round().clamp(lo, hi) as u8
        })
        .collect();
    Image::new(orig.width(), orig.height(), px).expect("same geometry")
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Single signed-gradient step on cross-entropy.
pub fn fgsm_perturb(params: &ModelParams, img: &Image, label: usize, eps: f64) -> Result<Image> {
    check_image(img)?;
    let orig = img.to_f64();
    let g = loss_and_grad_continuous(params, &orig, label, Loss::CrossEntropy, false, true)?
        .input_grad
        .expect("input gradient requested");
    let mut x: Vec<f64> = orig
        .iter()
        .zip(&g)
        .map(|(o, gi)| o + eps * sign(*gi))
        .collect();
    project(&mut x, &orig, eps);
    Ok(emit(&x, img, eps))
}

/// Candidates produced by an iterative attack.
#[derive(Debug, Clone)]
pub struct PgdTrace {
    pub last: Image,
    /// Iterate with the highest source-model cross-entropy; `None` when that is
    /// the last iterate.
    pub best_intermediate: Option<Image>,
}

/// Projected gradient ascent. `ffl` switches the objective to
/// `CE - lambda * ||low(x) - low(img)||^2`.
pub fn pgd_perturb(
    params: &ModelParams,
    img: &Image,
    label: usize,
    cfg: &AttackConfig,
    ffl: bool,
) -> Result<PgdTrace> {
    check_image(img)?;
    cfg.validate()?;
    let eps = cfg.epsilon;
    let step = cfg.step();
    let orig = img.to_f64();
    let reference = if ffl {
        Some(forward(params, img)?.low_feature)
    } else {
        None
    };
    let loss = match &reference {
        Some(r) => Loss::Ffl {
            lambda: cfg.lambda,
            reference_low: r,
        },
        None => Loss::CrossEntropy,
    };
    let mut x = orig.clone();
    if cfg.random_start {
        let mut rng = SplitMix64::new(cfg.seed);
        for v in x.iter_mut() {
            *v += rng.uniform(-eps, eps);
        }
        project(&mut x, &orig, eps);
    }
    let ce_of = |x: &[f64]| -> Result<f64> {
        let out = forward_continuous(params, x)?;
        let p = out.prediction.scores[label].max(f64::MIN_POSITIVE);
        Ok(-p.ln())
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..cfg.steps {
        let lg = loss_and_grad_continuous(params, &x, label, loss, false, true)?;
        if ffl && best.as_ref().map_or(true, |(b, _)| lg.cross_entropy > *b) {
            best = Some((lg.cross_entropy, x.clone()));
        }
        let g = lg.input_grad.expect("input gradient requested");
        for (v, gi) in x.iter_mut().zip(&g) {
            *v += step * sign(*gi);
        }
        project(&mut x, &orig, eps);
    }
    let last = emit(&x, img, eps);
    let best_intermediate = match best {
        Some((ce, bx)) if ce > ce_of(&last.to_f64())? => {
            let cand = emit(&bx, img, eps);
            (cand != last).then_some(cand)
        }
        _ => None,
    };
    Ok(PgdTrace {
        last,
        best_intermediate,
    })
}

fn finish(
    img: &Image,
    adv: Image,
    pred: Prediction,
    label: usize,
    queries: u32,
) -> Result<AdversarialResult> {
    Ok(AdversarialResult {
        metrics: QualityMetrics::measure(img, &adv)?,
        escaped: pred.label != label,
        prediction: pred,
        adversarial: Some(adv),
        queries_used: queries,
    })
}

/// White-box FGSM evaluated on the same model.
pub fn fgsm(
    params: &ModelParams,
    img: &Image,
    label: usize,
    cfg: &AttackConfig,
) -> Result<AdversarialResult> {
    cfg.validate()?;
    let adv = fgsm_perturb(params, img, label, cfg.epsilon)?;
    let pred = predict(params, &adv)?;
    finish(img, adv, pred, label, 1)
}

/// White-box PGD evaluated on the same model.
pub fn pgd(
    params: &ModelParams,
    img: &Image,
    label: usize,
    cfg: &AttackConfig,
) -> Result<AdversarialResult> {
    let adv = pgd_perturb(params, img, label, cfg, false)?.last;
    let pred = predict(params, &adv)?;
    finish(img, adv, pred, label, 1)
}

/// Crafts on `source` with FGSM or PGD and checks the result with one query
/// to `target`.
pub fn transfer_attack(
    source: &ModelParams,
    target: &dyn Classifier,
    img: &Image,
    label: usize,
    cfg: &AttackConfig,
) -> Result<AdversarialResult> {
    let adv = match cfg.kind {
        AttackKind::Fgsm => {
            cfg.validate()?;
            fgsm_perturb(source, img, label, cfg.epsilon)?
        }
        AttackKind::Pgd => pgd_perturb(source, img, label, cfg, false)?.last,
        AttackKind::FflPgd => return ffl_pgd_attack(source, target, img, label, cfg),
    };
    let pred = target.classify(&adv)?;
    finish(img, adv, pred, label, 1)
}

/// Crafts on the shadow with the FFL objective, then queries the target with
/// the final iterate and, only if that did not escape, with the best
/// intermediate iterate. At most two queries.
pub fn ffl_pgd_attack(
    shadow: &ModelParams,
    target: &dyn Classifier,
    img: &Image,
    label: usize,
    cfg: &AttackConfig,
) -> Result<AdversarialResult> {
    let trace = pgd_perturb(shadow, img, label, cfg, true)?;
    let pred = target.classify(&trace.last)?;
    if pred.label != label {
        return finish(img, trace.last, pred, label, 1);
    }
    match trace.best_intermediate {
        Some(alt) => {
            let alt_pred = target.classify(&alt)?;
            if alt_pred.label != label {
                finish(img, alt, alt_pred, label, 2)
            } else {
                finish(img, trace.last, pred, label, 2)
            }
        }
        None => finish(img, trace.last, pred, label, 1),
    }
}

/// Squared L2 distance between the conv1 activations of two images.
pub fn low_feature_distance(params: &ModelParams, a: &Image, b: &Image) -> Result<f64> {
    let fa = forward(params, a)?.low_feature;
    let fb = forward(params, b)?.low_feature;
    Ok(fa.iter().zip(&fb).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Fraction of clean-correct items whose adversarial prediction escaped.
pub fn escape_rate(results: &[AdversarialResult], clean_correct: &[bool]) -> Result<f64> {
    if results.len() != clean_correct.len() {
        return Err(Error::Shape(format!(
            "{} results vs {} mask entries",
            results.len(),
            clean_correct.len()
        )));
    }
    let flags: Vec<bool> = results.iter().map(|r| r.escaped).collect();
    escape_rate_flags(&flags, clean_correct)
}

pub fn escape_rate_flags(escaped: &[bool], clean_correct: &[bool]) -> Result<f64> {
    let eligible = clean_correct.iter().filter(|&&c| c).count();
    if eligible == 0 {
        return Err(Error::UndefinedRate("no clean-correct items".into()));
    }
    let hits = escaped
        .iter()
        .zip(clean_correct)
        .filter(|(&e, &c)| e && c)
        .count();
    Ok(hits as f64 / eligible as f64)
}

#[derive(Debug, Clone)]
pub struct ShadowModel {
    pub params: ModelParams,
    pub queries_used: u64,
    /// Top-1 agreement with the target on the held-out fifth of the labeled
    /// images.
    pub agreement: f64,
}

/// Labels `unlabeled` through the target (one query per image, up to the
/// budget) and trains the toy architecture on the oracle labels. The last
/// fifth of the labeled images is held out for measuring agreement. Images
/// whose query fails in transport are dropped.
pub fn train_shadow(
    query_budget: u64,
    target: &dyn Classifier,
    unlabeled: &[Image],
    classes: usize,
    cfg: &TrainConfig,
) -> Result<ShadowModel> {
    let take = (query_budget as usize).min(unlabeled.len());
    let mut labeled = Vec::with_capacity(take);
    let mut last_failure = None;
    for img in &unlabeled[..take] {
        match target.classify(img) {
            Ok(pred) => labeled.push(Sample {
                image: img.clone(),
                label: pred.label,
            }),
            Err(e) if e.is_transport() => last_failure = Some(e),
            Err(e) => return Err(e),
        }
    }
    if labeled.is_empty() {
        if let Some(e) = last_failure {
            return Err(e);
        }
    }
    let queries_used = take as u64;
    let n = labeled.len();
    let holdout = if n >= 5 { n / 5 } else { 0 };
    let (fit, held) = labeled.split_at(n - holdout);
    let labels = crate::model::LabelSet {
        names: (0..classes).map(|i| format!("class_{i}")).collect(),
    };
    let params = if fit.is_empty() {
        ModelParams::init(classes, derive_seed(cfg.seed, 0))
    } else {
        let ds = Dataset {
            labels,
            split: crate::dataset::Split::Train,
            items: fit.to_vec(),
        };
        train(&ds, cfg)?.0
    };
    if take < unlabeled.len() {
        return Err(Error::PartialShadow {
            queries_used,
            params: Box::new(params),
        });
    }
    let agreement = if held.is_empty() {
        0.0
    } else {
        let mut agree = 0;
        for s in held {
            if predict(&params, &s.image)?.label == s.label {
                agree += 1;
            }
        }
        agree as f64 / held.len() as f64
    };
    Ok(ShadowModel {
        params,
        queries_used,
        agreement,
    })
}

/// Largest per-value deviation allowed for `eps` on 8-bit pixels.
pub fn integer_budget(eps: f64) -> u8 {
    eps.floor().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::LocalTarget;

    fn random_image(seed: u64) -> Image {
        let mut rng = SplitMix64::new(seed);
        let px = (0..32 * 32 * 3).map(|_| rng.below(256) as u8).collect();
        Image::new(32, 32, px).unwrap()
    }

    #[test]
    fn fgsm_zero_epsilon_is_identity() {
        let p = ModelParams::init(3, 1);
        let img = random_image(2);
        let r = fgsm(&p, &img, 0, &AttackConfig::new(AttackKind::Fgsm, 0.0)).unwrap();
        assert_eq!(r.image(), &img);
    }

    #[test]
    fn budget_holds_for_random_inputs() {
        let p = ModelParams::init(3, 3);
        for seed in 0..10 {
            let img = random_image(seed);
            for eps in [1.0, 2.5, 8.0] {
                let mut cfg = AttackConfig::new(AttackKind::Pgd, eps).with_seed(seed);
                cfg.steps = 5;
                let a = fgsm(&p, &img, 1, &cfg).unwrap();
                let b = pgd(&p, &img, 1, &cfg).unwrap();
                for r in [a, b] {
                    assert!(r.image().linf_distance(&img).unwrap() <= integer_budget(eps));
                }
            }
        }
    }

    #[test]
    fn single_step_pgd_equals_fgsm() {
        let p = ModelParams::init(3, 7);
        let img = random_image(8);
        let cfg = AttackConfig {
            kind: AttackKind::Pgd,
            epsilon: 8.0,
            steps: 1,
            step_size: Some(8.0),
            lambda: 0.1,
            random_start: false,
            seed: 0,
        };
        let a = pgd(&p, &img, 2, &cfg).unwrap();
        let b = fgsm(&p, &img, 2, &cfg).unwrap();
        assert_eq!(a.image(), b.image());
    }

    #[test]
    fn ffl_pgd_never_exceeds_two_queries() {
        let shadow = ModelParams::init(3, 10);
        let target = LocalTarget::new(ModelParams::init(3, 11));
        for seed in 0..8 {
            let img = random_image(100 + seed);
            let mut cfg = AttackConfig::new(AttackKind::FflPgd, 8.0).with_seed(seed);
            cfg.steps = 5;
            let before = target.query_count();
            let r = ffl_pgd_attack(&shadow, &target, &img, 0, &cfg).unwrap();
            assert!(r.queries_used <= 2);
            assert_eq!(target.query_count() - before, r.queries_used as u64);
        }
    }

    #[test]
    fn escape_rate_cases() {
        let mk = |escaped| AdversarialResult {
            adversarial: None,
            escaped,
            prediction: Prediction::from_scores(vec![1.0, 0.0]),
            metrics: QualityMetrics {
                psnr_db: 40.0,
                ssim: 0.9,
            },
            queries_used: 1,
        };
        let none = vec![mk(false), mk(false)];
        assert_eq!(escape_rate(&none, &[true, true]).unwrap(), 0.0);
        let all = vec![mk(true), mk(true)];
        assert_eq!(escape_rate(&all, &[true, true]).unwrap(), 1.0);
        // 4 eligible, 3 escaped; the ineligible escape is ignored.
        let mixed = vec![mk(true), mk(true), mk(false), mk(true), mk(true)];
        assert_eq!(
            escape_rate(&mixed, &[true, true, true, true, false]).unwrap(),
            0.75
        );
        assert!(matches!(
            escape_rate(&none, &[false, false]),
            Err(Error::UndefinedRate(_))
        ));
    }

    #[test]
    fn config_json_defaults() {
        let cfg: AttackConfig = serde_json::from_str(r#"{"kind":"pgd","epsilon":8}"#).unwrap();
        assert_eq!(cfg.steps, 20);
        assert_eq!(cfg.step(), 1.0);
        assert!(cfg.random_start);
        assert!(AttackConfig::new(AttackKind::Pgd, 65.0).validate().is_err());
    }

    #[test]
    fn zero_budget_shadow_is_partial() {
        let target = LocalTarget::new(ModelParams::init(3, 1));
        let imgs: Vec<Image> = (0..4).map(random_image).collect();
        let err = train_shadow(0, &target, &imgs, 3, &TrainConfig::default()).unwrap_err();
        match err {
            Error::PartialShadow { queries_used, .. } => assert_eq!(queries_used, 0),
            other => panic!("{other:?}"),
        }
        assert_eq!(target.query_count(), 0);
    }
}
