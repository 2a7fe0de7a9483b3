//! PSNR/SSIM acceptance gate and PSNR-targeted severity calibration.

use serde::{Deserialize, Serialize};

use crate::corruption::{apply_corruption, CorruptionSpec, Method};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{psnr, QualityMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    /// Failing images are dropped.
    Reject,
    /// Failing images are kept and counted.
    Flag,
}

/// Bounds a perturbed image must meet to count as visually acceptable. The
/// defaults are a policy choice and deliberately permissive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatePolicy {
    pub min_psnr_db: f64,
    pub min_ssim: f64,
    pub mode: GateMode,
}

impl Default for GatePolicy {
    fn default() -> Self {
        Self {
            min_psnr_db: 15.0,
            min_ssim: 0.30,
            mode: GateMode::Reject,
        }
    }
}

impl GatePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_psnr_db >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "min_psnr_db must be >= 0, got {}",
                self.min_psnr_db
            )));
        }
        if !(0.0..=1.0).contains(&self.min_ssim) {
            return Err(Error::InvalidConfig(format!(
                "min_ssim must be in [0, 1], got {}",
                self.min_ssim
            )));
        }
        Ok(())
    }

    pub fn admits(&self, m: &QualityMetrics) -> bool {
        m.psnr_db >= self.min_psnr_db && m.ssim >= self.min_ssim
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateVerdict {
    pub passed: bool,
    pub metrics: QualityMetrics,
}

pub fn gate(original: &Image, perturbed: &Image, policy: &GatePolicy) -> Result<GateVerdict> {
    let metrics = QualityMetrics::measure(original, perturbed)?;
    Ok(GateVerdict {
        passed: policy.admits(&metrics),
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub spec: CorruptionSpec,
    pub realized_psnr_db: f64,
    /// False when the target lies beyond the method's parameter range; `spec`
    /// is then the boundary spec closest to the target.
    pub reachable: bool,
}

pub const CALIBRATION_TOLERANCE_DB: f64 = 0.5;
const MAX_ITERATIONS: usize = 24;

/// Binary-searches the method's parameter so the corrupted image lands within
/// ±0.5 dB of `target_psnr_db`.
pub fn calibrate_severity(
    img: &Image,
    method: Method,
    target_psnr_db: f64,
    seed: u64,
) -> Result<Calibration> {
    let extreme = method
        .calibration_extreme()
        .ok_or_else(|| Error::UnsupportedCalibration(method.to_string()))?;
    let identity = method.param().identity;
    let at = |t: f64| identity + t * (extreme - identity);
    let measure = |t: f64| -> Result<(CorruptionSpec, f64)> {
        let spec = CorruptionSpec::with_raw(method, at(t), seed);
        let out = apply_corruption(img, &spec)?;
        Ok((spec, psnr(img, &out)?))
    };

    // PSNR is non-increasing in t.
    let (hi_spec, hi_psnr) = measure(1.0)?;
    if hi_psnr > target_psnr_db + CALIBRATION_TOLERANCE_DB {
        return Ok(Calibration {
            spec: hi_spec,
            realized_psnr_db: hi_psnr,
            reachable: false,
        });
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut best = (hi_spec, hi_psnr);
    for _ in 0..MAX_ITERATIONS {
        if (best.1 - target_psnr_db).abs() <= CALIBRATION_TOLERANCE_DB {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (spec, p) = measure(mid)?;
        if (p - target_psnr_db).abs() < (best.1 - target_psnr_db).abs() {
            best = (spec, p);
        }
        if p > target_psnr_db {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let reachable = (best.1 - target_psnr_db).abs() <= CALIBRATION_TOLERANCE_DB;
    Ok(Calibration {
        spec: best.0,
        realized_psnr_db: best.1,
        reachable,
    })
}
