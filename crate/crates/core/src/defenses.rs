//! Input reconstruction, training augmentation, adversarial training and a
//! feature-squeezing adversarial-example detector.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::AttackConfig;
use crate::corruption::{apply_corruption, CorruptionSpec, Method};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::filters;
use crate::harness::Classifier;
use crate::image::{clamp_u8, Image};
use crate::model::{predict, write_f64s, ByteReader, ModelParams};
use crate::rng::{derive_seed, SplitMix64};
use crate::training::{train, train_from, TrainConfig};

/// Crop size of the reference training recipe, for 224-pixel targets.
pub const REFERENCE_CROP_SIZE: usize = 224;
/// Crop size used for the bundled 32x32 model.
pub const TOY_CROP_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Stage {
    MedianFilter {
        ksize: usize,
    },
    GaussianFilter {
        ksize: usize,
    },
    Grayscale,
    /// Linear stretch of all values so the darkest becomes 0 and the
    /// brightest 255.
    Autocontrast,
    /// Random crop of `min_scale..=1` of the area (aspect 3/4..4/3), resized
    /// to `size x size`.
    ResizeCrop {
        size: usize,
        #[serde(default = "default_min_scale")]
        min_scale: f64,
    },
    RandomRotation {
        min_deg: f64,
        max_deg: f64,
    },
    RandomHorizontalFlip {
        p: f64,
    },
    RandomGrayscale {
        p: f64,
    },
}

fn default_min_scale() -> f64 {
    0.5
}

impl Stage {
    pub fn is_random(&self) -> bool {
        matches!(
            self,
            Stage::ResizeCrop { .. }
                | Stage::RandomRotation { .. }
                | Stage::RandomHorizontalFlip { .. }
                | Stage::RandomGrayscale { .. }
        )
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPipeline(m));
        match *self {
            Stage::MedianFilter { ksize } | Stage::GaussianFilter { ksize } => {
                if ksize < 3 || ksize % 2 == 0 {
                    return bad(format!("ksize must be odd and >= 3, got {ksize}"));
                }
            }
            Stage::ResizeCrop { size, min_scale } => {
                if size == 0 || !(min_scale > 0.0 && min_scale <= 1.0) {
                    return bad(format!(
                        "bad resize_crop size {size} / min_scale {min_scale}"
                    ));
                }
            }
            Stage::RandomRotation { min_deg, max_deg } => {
                if !(min_deg <= max_deg) {
                    return bad(format!("rotation range ({min_deg}, {max_deg})"));
                }
            }
            Stage::RandomHorizontalFlip { p } | Stage::RandomGrayscale { p } => {
                if !(0.0..=1.0).contains(&p) {
                    return bad(format!("probability {p} outside [0, 1]"));
                }
            }
            Stage::Grayscale | Stage::Autocontrast => {}
        }
        Ok(())
    }

    fn apply(&self, img: &Image, rng: &mut SplitMix64) -> Image {
        match *self {
            Stage::MedianFilter { ksize } => filters::median_filter(img, ksize),
            Stage::GaussianFilter { ksize } => filters::gaussian_blur(img, ksize),
            Stage::Grayscale => filters::grayscale(img),
            Stage::Autocontrast => autocontrast(img),
            Stage::ResizeCrop { size, min_scale } => {
                let (w, h) = (img.width() as f64, img.height() as f64);
                let scale = rng.uniform(min_scale, 1.0);
                let log_ratio = rng.uniform((3.0f64 / 4.0).ln(), (4.0f64 / 3.0).ln());
                let area = scale * w * h;
                let cw = (area * log_ratio.exp()).sqrt().min(w);
                let ch = (area / log_ratio.exp()).sqrt().min(h);
                let x0 = rng.uniform(0.0, w - cw + f64::EPSILON).min(w - cw);
                let y0 = rng.uniform(0.0, h - ch + f64::EPSILON).min(h - ch);
                filters::resize_crop(img, x0, y0, cw, ch, size, size)
            }
            Stage::RandomRotation { min_deg, max_deg } => {
                filters::rotate(img, rng.uniform(min_deg, max_deg))
            }
            Stage::RandomHorizontalFlip { p } => {
                if rng.bernoulli(p) {
                    filters::hflip(img)
                } else {
                    img.clone()
                }
            }
            Stage::RandomGrayscale { p } => {
                if rng.bernoulli(p) {
                    filters::grayscale(img)
                } else {
                    img.clone()
                }
            }
        }
    }
}

pub fn autocontrast(img: &Image) -> Image {
    let lo = img.pixels().iter().copied().min().unwrap_or(0);
    let hi = img.pixels().iter().copied().max().unwrap_or(255);
    if hi <= lo {
        return img.clone();
    }
    let scale = 255.0 / (hi - lo) as f64;
    let px = img
        .pixels()
        .iter()
        .map(|&v| clamp_u8((v - lo) as f64 * scale))
        .collect();
    Image::new(img.width(), img.height(), px).expect("same geometry")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineMode {
    Inference,
    Training,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessPipeline {
    pub stages: Vec<Stage>,
    pub mode: PipelineMode,
    #[serde(default)]
    pub seed: u64,
}

impl PreprocessPipeline {
    pub fn empty() -> Self {
        Self {
            stages: Vec::new(),
            mode: PipelineMode::Inference,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.stages {
            s.validate()?;
            if self.mode == PipelineMode::Inference && s.is_random() {
                return Err(Error::InvalidPipeline(format!(
                    "random stage {s:?} in inference pipeline"
                )));
            }
        }
        Ok(())
    }

    /// Runs the stages in order with randomness drawn from `seed`.
    pub fn apply_seeded(&self, img: &Image, seed: u64) -> Result<Image> {
        self.validate()?;
        let mut rng = SplitMix64::new(seed);
        let mut out = img.clone();
        for s in &self.stages {
            out = s.apply(&out, &mut rng);
        }
        Ok(out)
    }
}

pub fn preprocess(img: &Image, pipeline: &PreprocessPipeline) -> Result<Image> {
    pipeline.apply_seeded(img, pipeline.seed)
}

/// Reference training recipe: random rotation (0, 360), random grayscale 0.5,
/// random horizontal flip 0.5, random resize-and-crop, Gaussian filter ksize
/// 29, median filter ksize 11. The crop size is the toy input size; the
/// reference value is [`REFERENCE_CROP_SIZE`].
pub fn default_training_pipeline() -> PreprocessPipeline {
    training_pipeline_for(TOY_CROP_SIZE)
}

pub fn training_pipeline_for(crop_size: usize) -> PreprocessPipeline {
    PreprocessPipeline {
        stages: vec![
            Stage::RandomRotation {
                min_deg: 0.0,
                max_deg: 360.0,
            },
            Stage::RandomGrayscale { p: 0.5 },
            Stage::RandomHorizontalFlip { p: 0.5 },
            Stage::ResizeCrop {
                size: crop_size,
                min_scale: default_min_scale(),
            },
            Stage::GaussianFilter { ksize: 29 },
            Stage::MedianFilter { ksize: 11 },
        ],
        mode: PipelineMode::Training,
        seed: 0,
    }
}

/// Reference input reconstruction: median filter ksize 11, then grayscale.
pub fn default_inference_pipeline() -> PreprocessPipeline {
    PreprocessPipeline {
        stages: vec![Stage::MedianFilter { ksize: 11 }, Stage::Grayscale],
        mode: PipelineMode::Inference,
        seed: 0,
    }
}

/// Rescales a filter size tuned for `from`-pixel images to `to` pixels,
/// rounding up to the next odd size of at least 3.
pub fn scale_ksize(ksize: usize, from: usize, to: usize) -> usize {
    let k = ((ksize * to) as f64 / from as f64).ceil() as usize;
    let k = k.max(3);
    if k % 2 == 0 {
        k + 1
    } else {
        k
    }
}

/// Reconstruction used by the bundled 32x32 model: the reference median
/// filter rescaled to the input size, grayscale, then a contrast stretch.
pub fn toy_inference_pipeline() -> PreprocessPipeline {
    PreprocessPipeline {
        stages: vec![
            Stage::MedianFilter {
                ksize: scale_ksize(11, REFERENCE_CROP_SIZE, TOY_CROP_SIZE),
            },
            Stage::Grayscale,
            Stage::Autocontrast,
        ],
        mode: PipelineMode::Inference,
        seed: 0,
    }
}

/// Reference training recipe with filter sizes rescaled to 32x32, followed by
/// [`toy_inference_pipeline`] so training sees what inference will see.
pub fn toy_training_pipeline() -> PreprocessPipeline {
    let mut p = training_pipeline_for(TOY_CROP_SIZE);
    for s in p.stages.iter_mut() {
        match s {
            Stage::GaussianFilter { ksize } | Stage::MedianFilter { ksize } => {
                *ksize = scale_ksize(*ksize, REFERENCE_CROP_SIZE, TOY_CROP_SIZE);
            }
            _ => {}
        }
    }
    p.stages.extend(toy_inference_pipeline().stages);
    p
}

/// Augmentation plus adversarial fine-tuning, and the reconstruction to
/// apply in front of the hardened model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HardeningRecipe {
    pub train: TrainConfig,
    pub inference: PreprocessPipeline,
}

impl Default for HardeningRecipe {
    fn default() -> Self {
        let mut pgd = AttackConfig::new(crate::attacks::AttackKind::Pgd, 2.0);
        pgd.steps = 5;
        pgd.step_size = Some(0.75);
        Self {
            train: TrainConfig {
                epochs: 6,
                lr: 0.01,
                augmentation: Some(toy_training_pipeline()),
                adversarial: Some(pgd),
                ..TrainConfig::default()
            },
            inference: toy_inference_pipeline(),
        }
    }
}

/// Fine-tunes `base` (or trains from scratch) with the recipe.
pub fn harden(
    base: Option<&ModelParams>,
    dataset: &Dataset,
    recipe: &HardeningRecipe,
) -> Result<ModelParams> {
    recipe.inference.validate()?;
    Ok(match base {
        Some(p) => train_from(p.clone(), dataset, &recipe.train)?.0,
        None => train(dataset, &recipe.train)?.0,
    })
}

/// Trains with every other minibatch sample replaced by a fresh PGD example.
pub fn adversarially_train(
    dataset: &Dataset,
    pgd_cfg: &AttackConfig,
    epochs: usize,
    seed: u64,
) -> Result<ModelParams> {
    let cfg = TrainConfig {
        epochs,
        seed,
        adversarial: Some(pgd_cfg.clone()),
        ..TrainConfig::default()
    };
    Ok(train(dataset, &cfg)?.0)
}

/// Accuracy under corruption among the items the (preprocessed) model gets
/// right on clean input. Item `i` is corrupted with seed
/// `derive_seed(corruption.seed, i)`.
pub fn spatial_defense_rate(
    params: &ModelParams,
    test: &Dataset,
    corruption: &CorruptionSpec,
    preprocessing: Option<&PreprocessPipeline>,
) -> Result<f64> {
    let classify = |img: &Image| -> Result<usize> {
        let input = match preprocessing {
            Some(p) => preprocess(img, p)?,
            None => img.clone(),
        };
        Ok(predict(params, &input)?.label)
    };
    let mut eligible = 0usize;
    let mut survived = 0usize;
    for (i, s) in test.items.iter().enumerate() {
        if classify(&s.image)? != s.label {
            continue;
        }
        eligible += 1;
        let mut spec = corruption.clone();
        spec.seed = derive_seed(corruption.seed, i as u64);
        let corrupted = apply_corruption(&s.image, &spec)?;
        if classify(&corrupted)? == s.label {
            survived += 1;
        }
    }
    if eligible == 0 {
        return Err(Error::UndefinedRate("no clean-correct items".into()));
    }
    Ok(survived as f64 / eligible as f64)
}

/// Walks the parameter from identity toward its severity-5 value in `steps`
/// equal increments and returns the first corruption that brings the
/// undefended rate to `trigger` or below, with that rate. Falls back to the
/// severity-5 value when no step triggers.
pub fn trigger_corruption(
    params: &ModelParams,
    test: &Dataset,
    method: Method,
    trigger: f64,
    steps: usize,
    seed: u64,
) -> Result<(CorruptionSpec, f64)> {
    if steps == 0 {
        return Err(Error::InvalidConfig(
            "trigger sweep needs at least one step".into(),
        ));
    }
    let def = method.param();
    let top = def.table[4];
    let mut last = None;
    for k in 1..=steps {
        let v = def.identity + (top - def.identity) * k as f64 / steps as f64;
        let spec = CorruptionSpec::with_raw(method, def.snap(v), seed);
        let rate = spatial_defense_rate(params, test, &spec, None)?;
        if rate <= trigger {
            return Ok((spec, rate));
        }
        last = Some((spec, rate));
    }
    Ok(last.expect("steps >= 1"))
}

// ---------------------------------------------------------------------------
// Detector

pub const DETECTOR_HIDDEN: [usize; 2] = [32, 16];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqueezeConfig {
    pub median_ksize: usize,
    pub bit_depth: u32,
}

impl Default for SqueezeConfig {
    fn default() -> Self {
        Self {
            median_ksize: 3,
            bit_depth: 4,
        }
    }
}

/// Feature squeezer plus a 2-hidden-layer MLP with a sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    pub squeeze: SqueezeConfig,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorTraining {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for DetectorTraining {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.05,
            batch_size: 16,
        }
    }
}

/// Score vectors of the model on the raw image, its median-filtered version
/// and its bit-depth-reduced version, concatenated.
pub fn squeeze_features(
    model: &dyn Classifier,
    img: &Image,
    cfg: &SqueezeConfig,
) -> Result<Vec<f64>> {
    let mut out = model.classify(img)?.scores;
    out.extend(
        model
            .classify(&filters::median_filter(img, cfg.median_ksize))?
            .scores,
    );
    out.extend(
        model
            .classify(&filters::reduce_bit_depth(img, cfg.bit_depth))?
            .scores,
    );
    Ok(out)
}

struct MlpPass {
    h1: Vec<f64>,
    h2: Vec<f64>,
    out: f64,
}

impl DetectorParams {
    fn inputs(&self) -> usize {
        self.feature_mean.len()
    }

    fn normalize(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    fn run(&self, x: &[f64]) -> MlpPass {
        let [n1, n2] = DETECTOR_HIDDEN;
        let dense = |w: &[f64], b: &[f64], inp: &[f64], n: usize| -> Vec<f64> {
            (0..n)
                .map(|j| {
                    let z = b[j]
                        + w[j * inp.len()..(j + 1) * inp.len()]
                            .iter()
                            .zip(inp)
                            .map(|(a, c)| a * c)
                            .sum::<f64>();
                    z.max(0.0)
                })
                .collect()
        };
        let h1 = dense(&self.w1, &self.b1, x, n1);
        let h2 = dense(&self.w2, &self.b2, &h1, n2);
        let z = self.b3[0] + self.w3.iter().zip(&h2).map(|(a, b)| a * b).sum::<f64>();
        MlpPass {
            h1,
            h2,
            out: sigmoid(z),
        }
    }

    pub fn probability_from_features(&self, features: &[f64]) -> f64 {
        self.run(&self.normalize(features)).out
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn train_detector(
    model: &dyn Classifier,
    clean: &[Image],
    adversarial: &[Image],
    seed: u64,
) -> Result<DetectorParams> {
    train_detector_with(
        model,
        clean,
        adversarial,
        seed,
        &SqueezeConfig::default(),
        &DetectorTraining::default(),
    )
}

pub fn train_detector_with(
    model: &dyn Classifier,
    clean: &[Image],
    adversarial: &[Image],
    seed: u64,
    squeeze: &SqueezeConfig,
    opts: &DetectorTraining,
) -> Result<DetectorParams> {
    if clean.is_empty() || adversarial.is_empty() {
        return Err(Error::Training {
            epoch: 0,
            message: "detector needs both clean and adversarial examples".into(),
        });
    }
    let mut feats = Vec::with_capacity(clean.len() + adversarial.len());
    for img in clean {
        feats.push((squeeze_features(model, img, squeeze)?, 0.0));
    }
    for img in adversarial {
        feats.push((squeeze_features(model, img, squeeze)?, 1.0));
    }
    Ok(fit_detector(&feats, squeeze.clone(), seed, opts))
}

/// Fits the MLP on precomputed `(features, target)` pairs with minibatch SGD
/// on binary cross-entropy. Each class is weighted by the inverse of its size.
pub fn fit_detector(
    data: &[(Vec<f64>, f64)],
    squeeze: SqueezeConfig,
    seed: u64,
    opts: &DetectorTraining,
) -> DetectorParams {
    let d = data[0].0.len();
    let n = data.len() as f64;
    let mut mean = vec![0.0; d];
    for (f, _) in data {
        mean.iter_mut().zip(f).for_each(|(m, v)| *m += v / n);
    }
    let mut std = vec![0.0; d];
    for (f, _) in data {
        std.iter_mut()
            .zip(f.iter().zip(&mean))
            .for_each(|(s, (v, m))| *s += (v - m) * (v - m) / n);
    }
    std.iter_mut().for_each(|s| *s = s.sqrt().max(1e-6));

    let [n1, n2] = DETECTOR_HIDDEN;
    let mut rng = SplitMix64::new(derive_seed(seed, 0));
    let mut he = |fan_in: usize, len: usize| -> Vec<f64> {
        let s = (2.0 / fan_in as f64).sqrt();
        (0..len).map(|_| s * rng.normal()).collect()
    };
    let mut det = DetectorParams {
        squeeze,
        feature_mean: mean,
        feature_std: std,
        w1: he(d, n1 * d),
        b1: vec![0.0; n1],
        w2: he(n1, n2 * n1),
        b2: vec![0.0; n2],
        w3: he(n2, n2),
        b3: vec![0.0],
    };
    let xs: Vec<(Vec<f64>, f64)> = data.iter().map(|(f, y)| (det.normalize(f), *y)).collect();
    let positives = xs.iter().filter(|(_, y)| *y > 0.5).count().max(1) as f64;
    let negatives = (xs.len() as f64 - positives).max(1.0);
    let weight = |y: f64| {
        if y > 0.5 {
            n / (2.0 * positives)
        } else {
            n / (2.0 * negatives)
        }
    };

    let mut order: Vec<usize> = (0..xs.len()).collect();
    for epoch in 0..opts.epochs {
        SplitMix64::new(derive_seed(seed, 1 + epoch as u64)).shuffle(&mut order);
        for batch in order.chunks(opts.batch_size.max(1)) {
            let mut g = DetectorGrad::zeros(d);
            for &i in batch {
                let (x, y) = &xs[i];
                det.backprop(x, *y, weight(*y), &mut g);
            }
            det.apply(&g, opts.lr / batch.len() as f64);
        }
    }
    det
}

struct DetectorGrad {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    w3: Vec<f64>,
    b3: Vec<f64>,
}

impl DetectorGrad {
    fn zeros(d: usize) -> Self {
        let [n1, n2] = DETECTOR_HIDDEN;
        Self {
            w1: vec![0.0; n1 * d],
            b1: vec![0.0; n1],
            w2: vec![0.0; n2 * n1],
            b2: vec![0.0; n2],
            w3: vec![0.0; n2],
            b3: vec![0.0],
        }
    }
}

impl DetectorParams {
    fn backprop(&self, x: &[f64], y: f64, weight: f64, g: &mut DetectorGrad) {
        let [n1, n2] = DETECTOR_HIDDEN;
        let d = self.inputs();
        let pass = self.run(x);
        let dz3 = weight * (pass.out - y);
        g.b3[0] += dz3;
        let mut dh2 = vec![0.0; n2];
        for j in 0..n2 {
            g.w3[j] += dz3 * pass.h2[j];
            dh2[j] = dz3 * self.w3[j];
        }
        let mut dh1 = vec![0.0; n1];
        for j in 0..n2 {
            if pass.h2[j] <= 0.0 {
                continue;
            }
            g.b2[j] += dh2[j];
            for i in 0..n1 {
                g.w2[j * n1 + i] += dh2[j] * pass.h1[i];
                dh1[i] += dh2[j] * self.w2[j * n1 + i];
            }
        }
        for j in 0..n1 {
            if pass.h1[j] <= 0.0 {
                continue;
            }
            g.b1[j] += dh1[j];
            for i in 0..d {
                g.w1[j * d + i] += dh1[j] * x[i];
            }
        }
    }

    fn apply(&mut self, g: &DetectorGrad, step: f64) {
        let upd = |w: &mut Vec<f64>, dw: &Vec<f64>| {
            w.iter_mut().zip(dw).for_each(|(a, b)| *a -= step * b);
        };
        upd(&mut self.w1, &g.w1);
        upd(&mut self.b1, &g.b1);
        upd(&mut self.w2, &g.w2);
        upd(&mut self.b2, &g.b2);
        upd(&mut self.w3, &g.w3);
        upd(&mut self.b3, &g.b3);
    }
}

/// Probability that `img` is adversarial; 0.5 is the decision threshold.
pub fn detect(detector: &DetectorParams, model: &dyn Classifier, img: &Image) -> Result<f64> {
    let f = squeeze_features(model, img, &detector.squeeze)?;
    if f.len() != detector.inputs() {
        return Err(Error::Shape(format!(
            "detector expects {} features, model produced {}",
            detector.inputs(),
            f.len()
        )));
    }
    Ok(detector.probability_from_features(&f))
}

/// Area under the ROC curve via the Mann-Whitney statistic (ties count 1/2).
pub fn roc_auc(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::UndefinedRate("AUC needs both classes".into()));
    }
    let mut wins = 0.0;
    for &p in positive {
        for &n in negative {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (positive.len() * negative.len()) as f64)
}

const DETECTOR_MAGIC: &[u8; 4] = b"RKDT";
pub const DETECTOR_VERSION: u32 = 1;

pub fn encode_detector(d: &DetectorParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(DETECTOR_MAGIC);
    out.extend_from_slice(&DETECTOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(d.squeeze.median_ksize as u32).to_le_bytes());
    out.extend_from_slice(&d.squeeze.bit_depth.to_le_bytes());
    out.extend_from_slice(&(d.inputs() as u32).to_le_bytes());
    for g in [
        &d.feature_mean,
        &d.feature_std,
        &d.w1,
        &d.b1,
        &d.w2,
        &d.b2,
        &d.w3,
        &d.b3,
    ] {
        write_f64s(&mut out, g);
    }
    out
}

pub fn decode_detector(bytes: &[u8]) -> Result<DetectorParams> {
    let mut r = ByteReader { bytes, pos: 0 };
    r.header(DETECTOR_MAGIC, DETECTOR_VERSION)?;
    let median_ksize = r.u32()? as usize;
    let bit_depth = r.u32()?;
    let d = r.u32()? as usize;
    if !(1..=8).contains(&bit_depth) || d == 0 {
        return Err(Error::Format(format!(
            "bad detector header: bits {bit_depth}, inputs {d}"
        )));
    }
    let [n1, n2] = DETECTOR_HIDDEN;
    let det = DetectorParams {
        squeeze: SqueezeConfig {
            median_ksize,
            bit_depth,
        },
        feature_mean: r.f64s(d)?,
        feature_std: r.f64s(d)?,
        w1: r.f64s(n1 * d)?,
        b1: r.f64s(n1)?,
        w2: r.f64s(n2 * n1)?,
        b2: r.f64s(n2)?,
        w3: r.f64s(n2)?,
        b3: r.f64s(1)?,
    };
    r.finish()?;
    Ok(det)
}

pub fn save_detector(d: &DetectorParams, path: &Path) -> Result<()> {
    fs::write(path, encode_detector(d)).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_detector(path: &Path) -> Result<DetectorParams> {
    let bytes = fs::read(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    decode_detector(&bytes)
}
