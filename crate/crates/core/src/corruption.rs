//! Seeded spatial corruptions.
//!
//! Every method is driven by one scalar parameter. Severities 1..=5 map to the
//! table below; `raw_params` overrides it. Each parameter has an identity value
//! at which the method returns its input unchanged.
//!
//! | method | param | identity | severities 1..5 | range |
//! |---|---|---|---|---|
//! | gaussian_noise | sigma | 0 | 8 16 24 32 40 | 0..128 |
//! | salt_pepper | amount | 0 | 0.02 0.04 0.06 0.08 0.10 | 0..1 |
//! | uniform_noise | amplitude | 0 | 12 24 36 48 60 | 0..128 |
//! | brightness | delta | 0 | 25 50 75 100 125 | -255..255 |
//! | contrast | factor | 1 | 0.8 0.65 0.5 0.35 0.2 | 0..2 |
//! | rotation | angle (deg, sign from seed) | 0 | 22.5 45 90 135 180 | -360..360 |
//! | gaussian_blur | ksize | 1 | 5 11 17 23 29 | odd 1..63 |
//! | median_blur | ksize | 1 | 3 7 11 15 19 | odd 1..63 |
//! | average_blur | ksize | 1 | 3 5 7 9 11 | odd 1..63 |
//! | grayscale, monochrome_* , binarization | amount | 0 | 1 1 1 1 1 | 0..1 |
//! | occlusion | area | 0 | 0.05 0.10 0.15 0.20 0.25 | 0..1 |
//! | shake | length (px, angle from seed) | 1 | 3 5 7 9 11 | int 1..33 |
//! | rain | density | 0 | 0.01 0.02 0.03 0.04 0.05 | 0..0.5 |
//! | snow | density | 0 | 0.01 0.02 0.03 0.04 0.05 | 0..0.5 |
//! | frost | strength | 0 | 0.15 0.25 0.35 0.45 0.55 | 0..1 |
//! | fog | alpha | 0 | 0.15 0.25 0.35 0.45 0.55 | 0..1 |
//! | flare | intensity | 0 | 40 80 120 160 200 | 0..255 |
//!
//! Random draws come from [`SplitMix64`] seeded with `spec.seed`, so a spec
//! applied to the same image always yields the same bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters;
use crate::image::{clamp_u8, luma, Image, CHANNELS};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GaussianNoise,
    SaltPepper,
    UniformNoise,
    Brightness,
    Contrast,
    Rotation,
    GaussianBlur,
    MedianBlur,
    AverageBlur,
    Grayscale,
    MonochromeRed,
    MonochromeGreen,
    MonochromeBlue,
    Binarization,
    Occlusion,
    Shake,
    Rain,
    Snow,
    Frost,
    Fog,
    Flare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Noise,
    Photometric,
    Geometric,
    Blur,
    Color,
    Weather,
    Occlusion,
}

impl Method {
    pub const ALL: [Method; 21] = [
        Method::GaussianNoise,
        Method::SaltPepper,
        Method::UniformNoise,
        Method::Brightness,
        Method::Contrast,
        Method::Rotation,
        Method::GaussianBlur,
        Method::MedianBlur,
        Method::AverageBlur,
        Method::Grayscale,
        Method::MonochromeRed,
        Method::MonochromeGreen,
        Method::MonochromeBlue,
        Method::Binarization,
        Method::Occlusion,
        Method::Shake,
        Method::Rain,
        Method::Snow,
        Method::Frost,
        Method::Fog,
        Method::Flare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::GaussianNoise => "gaussian_noise",
            Method::SaltPepper => "salt_pepper",
            Method::UniformNoise => "uniform_noise",
            Method::Brightness => "brightness",
            Method::Contrast => "contrast",
            Method::Rotation => "rotation",
            Method::GaussianBlur => "gaussian_blur",
            Method::MedianBlur => "median_blur",
            Method::AverageBlur => "average_blur",
            Method::Grayscale => "grayscale",
            Method::MonochromeRed => "monochrome_red",
            Method::MonochromeGreen => "monochrome_green",
            Method::MonochromeBlue => "monochrome_blue",
            Method::Binarization => "binarization",
            Method::Occlusion => "occlusion",
            Method::Shake => "shake",
            Method::Rain => "rain",
            Method::Snow => "snow",
            Method::Frost => "frost",
            Method::Fog => "fog",
            Method::Flare => "flare",
        }
    }

    pub fn category(self) -> Category {
        use Method::*;
        match self {
            GaussianNoise | SaltPepper | UniformNoise => Category::Noise,
            Brightness | Contrast => Category::Photometric,
            Rotation => Category::Geometric,
            GaussianBlur | MedianBlur | AverageBlur | Shake => Category::Blur,
            Grayscale | MonochromeRed | MonochromeGreen | MonochromeBlue | Binarization => {
                Category::Color
            }
            Rain | Snow | Frost | Fog | Flare => Category::Weather,
            Occlusion => Category::Occlusion,
        }
    }

    pub fn param(self) -> ParamDef {
        use Method::*;
        let def = |name, identity, min, max, table, kind| ParamDef {
            name,
            identity,
            min,
            max,
            table,
            kind,
        };
        let amount = def("amount", 0.0, 0.0, 1.0, [1.0; 5], ParamKind::Continuous);
        match self {
            GaussianNoise => def(
                "sigma",
                0.0,
                0.0,
                128.0,
                [8.0, 16.0, 24.0, 32.0, 40.0],
                ParamKind::Continuous,
            ),
            SaltPepper => def(
                "amount",
                0.0,
                0.0,
                1.0,
                [0.02, 0.04, 0.06, 0.08, 0.10],
                ParamKind::Continuous,
            ),
            UniformNoise => def(
                "amplitude",
                0.0,
                0.0,
                128.0,
                [12.0, 24.0, 36.0, 48.0, 60.0],
                ParamKind::Continuous,
            ),
            Brightness => def(
                "delta",
                0.0,
                -255.0,
                255.0,
                [25.0, 50.0, 75.0, 100.0, 125.0],
                ParamKind::Continuous,
            ),
            Contrast => def(
                "factor",
                1.0,
                0.0,
                2.0,
                [0.8, 0.65, 0.5, 0.35, 0.2],
                ParamKind::Continuous,
            ),
            Rotation => def(
                "angle",
                0.0,
                -360.0,
                360.0,
                [22.5, 45.0, 90.0, 135.0, 180.0],
                ParamKind::SignedBySeed,
            ),
            GaussianBlur => def(
                "ksize",
                1.0,
                1.0,
                63.0,
                [5.0, 11.0, 17.0, 23.0, 29.0],
                ParamKind::OddInteger,
            ),
            MedianBlur => def(
                "ksize",
                1.0,
                1.0,
                63.0,
                [3.0, 7.0, 11.0, 15.0, 19.0],
                ParamKind::OddInteger,
            ),
            AverageBlur => def(
                "ksize",
                1.0,
                1.0,
                63.0,
                [3.0, 5.0, 7.0, 9.0, 11.0],
                ParamKind::OddInteger,
            ),
            Grayscale | MonochromeRed | MonochromeGreen | MonochromeBlue | Binarization => amount,
            Occlusion => def(
                "area",
                0.0,
                0.0,
                1.0,
                [0.05, 0.10, 0.15, 0.20, 0.25],
                ParamKind::Continuous,
            ),
            Shake => def(
                "length",
                1.0,
                1.0,
                33.0,
                [3.0, 5.0, 7.0, 9.0, 11.0],
                ParamKind::Integer,
            ),
            Rain | Snow => def(
                "density",
                0.0,
                0.0,
                0.5,
                [0.01, 0.02, 0.03, 0.04, 0.05],
                ParamKind::Continuous,
            ),
            Frost => def(
                "strength",
                0.0,
                0.0,
                1.0,
                [0.15, 0.25, 0.35, 0.45, 0.55],
                ParamKind::Continuous,
            ),
            Fog => def(
                "alpha",
                0.0,
                0.0,
                1.0,
                [0.15, 0.25, 0.35, 0.45, 0.55],
                ParamKind::Continuous,
            ),
            Flare => def(
                "intensity",
                0.0,
                0.0,
                255.0,
                [40.0, 80.0, 120.0, 160.0, 200.0],
                ParamKind::Continuous,
            ),
        }
    }

    /// Methods whose parameter moves PSNR monotonically for a fixed seed.
    pub fn calibration_extreme(self) -> Option<f64> {
        use Method::*;
        match self {
            GaussianNoise | UniformNoise => Some(128.0),
            SaltPepper => Some(1.0),
            Brightness => Some(255.0),
            Contrast => Some(0.0),
            Frost | Fog => Some(1.0),
            Flare => Some(255.0),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Continuous,
    OddInteger,
    Integer,
    /// Severity magnitude whose sign is drawn from the spec seed.
    SignedBySeed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamDef {
    pub name: &'static str,
    pub identity: f64,
    pub min: f64,
    pub max: f64,
    pub table: [f64; 5],
    pub kind: ParamKind,
}

impl ParamDef {
    /// Nearest admissible value for this parameter's kind.
    pub fn snap(&self, v: f64) -> f64 {
        let v = v.clamp(self.min, self.max);
        match self.kind {
            ParamKind::OddInteger => ((v.round() as i64) | 1) as f64,
            ParamKind::Integer => v.round(),
            _ => v,
        }
    }

    fn validate(&self, v: f64) -> Result<f64> {
        if !v.is_finite() || v < self.min || v > self.max {
            return Err(Error::InvalidSpec(format!(
                "{} = {v} outside [{}, {}]",
                self.name, self.min, self.max
            )));
        }
        let integral = v.fract() == 0.0;
        match self.kind {
            ParamKind::OddInteger if !integral || (v as i64) % 2 == 0 => Err(Error::InvalidSpec(
                format!("{} must be an odd integer, got {v}", self.name),
            )),
            ParamKind::Integer if !integral => Err(Error::InvalidSpec(format!(
                "{} must be an integer, got {v}",
                self.name
            ))),
            _ => Ok(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodDescriptor {
    pub name: &'static str,
    pub category: Category,
    pub min_severity: u8,
    pub max_severity: u8,
    pub param: &'static str,
    pub calibratable: bool,
}

pub fn list_methods() -> Vec<MethodDescriptor> {
    Method::ALL
        .iter()
        .map(|&m| MethodDescriptor {
            name: m.name(),
            category: m.category(),
            min_severity: 1,
            max_severity: 5,
            param: m.param().name,
            calibratable: m.calibration_extreme().is_some(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamValue {
    pub name: &'static str,
    pub value: f64,
    /// Applied with a seed-drawn sign (rotation).
    pub random_sign: bool,
}

pub fn severity_params(method: Method, severity: u8) -> ParamValue {
    let def = method.param();
    let idx = (severity.clamp(1, 5) - 1) as usize;
    ParamValue {
        name: def.name,
        value: def.table[idx],
        random_sign: def.kind == ParamKind::SignedBySeed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub method: Method,
    pub severity: u8,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_params: Option<BTreeMap<String, f64>>,
}

impl CorruptionSpec {
    pub fn new(method: Method, severity: u8, seed: u64) -> Self {
        Self {
            method,
            severity,
            seed,
            raw_params: None,
        }
    }

    pub fn with_raw(method: Method, value: f64, seed: u64) -> Self {
        let mut raw = BTreeMap::new();
        raw.insert(method.param().name.to_string(), value);
        Self {
            method,
            severity: 1,
            seed,
            raw_params: Some(raw),
        }
    }

    /// Spec whose parameter is the method's identity value.
    pub fn zero_strength(method: Method, seed: u64) -> Self {
        Self::with_raw(method, method.param().identity, seed)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        spec.resolve()?;
        Ok(spec)
    }

    /// Validates the spec and returns the effective parameter value. The
    /// random sign for rotation is not applied here.
    pub fn resolve(&self) -> Result<f64> {
        if !(1..=5).contains(&self.severity) {
            return Err(Error::InvalidSpec(format!(
                "severity {} outside 1..=5",
                self.severity
            )));
        }
        let def = self.method.param();
        let Some(raw) = &self.raw_params else {
            return Ok(def.table[self.severity as usize - 1]);
        };
        let mut value = def.table[self.severity as usize - 1];
        for (k, &v) in raw {
            if k != def.name {
                return Err(Error::InvalidSpec(format!(
                    "{} has no parameter {k:?} (expected {:?})",
                    self.method, def.name
                )));
            }
            value = def.validate(v)?;
        }
        Ok(value)
    }

    fn uses_raw(&self) -> bool {
        self.raw_params.as_ref().is_some_and(|m| !m.is_empty())
    }
}

pub fn apply_corruption(img: &Image, spec: &CorruptionSpec) -> Result<Image> {
    let value = spec.resolve()?;
    let mut rng = SplitMix64::new(spec.seed);
    let out = match spec.method {
        Method::GaussianNoise => additive(img, |r| value * r.normal(), &mut rng),
        Method::UniformNoise => additive(img, |r| value * r.uniform(-1.0, 1.0), &mut rng),
        Method::SaltPepper => salt_pepper(img, value, &mut rng),
        Method::Brightness => map_values(img, |v| v + value),
        Method::Contrast => contrast(img, value),
        Method::Rotation => {
            let angle = if spec.uses_raw() {
                value
            } else if rng.bernoulli(0.5) {
                value
            } else {
                -value
            };
            filters::rotate(img, angle)
        }
        Method::GaussianBlur => filters::gaussian_blur(img, value as usize),
        Method::MedianBlur => filters::median_filter(img, value as usize),
        Method::AverageBlur => filters::box_blur(img, value as usize),
        Method::Grayscale => blend_pointwise(img, value, |[r, g, b]| {
            let y = luma(r, g, b);
            [y, y, y]
        }),
        Method::MonochromeRed => blend_pointwise(img, value, |[r, _, _]| [r as f64, 0.0, 0.0]),
        Method::MonochromeGreen => blend_pointwise(img, value, |[_, g, _]| [0.0, g as f64, 0.0]),
        Method::MonochromeBlue => blend_pointwise(img, value, |[_, _, b]| [0.0, 0.0, b as f64]),
        Method::Binarization => blend_pointwise(img, value, |[r, g, b]| {
            let v = if luma(r, g, b) >= 128.0 { 255.0 } else { 0.0 };
            [v, v, v]
        }),
        Method::Occlusion => occlusion(img, value, &mut rng),
        Method::Shake => {
            let angle = rng.uniform(0.0, 180.0);
            filters::motion_blur(img, value as usize, angle)
        }
        Method::Rain => rain(img, value, &mut rng),
        Method::Snow => snow(img, value, &mut rng),
        Method::Frost => frost(img, value, &mut rng),
        Method::Fog => fog(img, value, &mut rng),
        Method::Flare => flare(img, value, &mut rng),
    };
    Ok(out)
}

fn map_values(img: &Image, f: impl Fn(f64) -> f64) -> Image {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        *p = clamp_u8(f(*p as f64));
    }
    out
}

fn additive(
    img: &Image,
    mut draw: impl FnMut(&mut SplitMix64) -> f64,
    rng: &mut SplitMix64,
) -> Image {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        *p = clamp_u8(*p as f64 + draw(rng));
    }
    out
}

fn salt_pepper(img: &Image, amount: f64, rng: &mut SplitMix64) -> Image {
    let mut out = img.clone();
    for p in out.pixels_mut().chunks_exact_mut(CHANNELS) {
        // Both draws always happen so the pattern for a seed is nested in amount.
        let hit = rng.next_f64() < amount;
        let salt = rng.bernoulli(0.5);
        if hit {
            p.fill(if salt { 255 } else { 0 });
        }
    }
    out
}

fn contrast(img: &Image, factor: f64) -> Image {
    let n = (img.width() * img.height()) as f64;
    let mut mean = [0.0; 3];
    for p in img.pixels().chunks_exact(CHANNELS) {
        for c in 0..3 {
            mean[c] += p[c] as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut out = img.clone();
    for p in out.pixels_mut().chunks_exact_mut(CHANNELS) {
        for c in 0..3 {
            p[c] = clamp_u8(mean[c] + factor * (p[c] as f64 - mean[c]));
        }
    }
    out
}

fn blend_pointwise(img: &Image, amount: f64, f: impl Fn([u8; 3]) -> [f64; 3]) -> Image {
    let mut out = img.clone();
    for p in out.pixels_mut().chunks_exact_mut(CHANNELS) {
        let target = f([p[0], p[1], p[2]]);
        for c in 0..3 {
            p[c] = clamp_u8((1.0 - amount) * p[c] as f64 + amount * target[c]);
        }
    }
    out
}

fn occlusion(img: &Image, area: f64, rng: &mut SplitMix64) -> Image {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let aspect = rng.uniform(0.5, 2.0);
    let fx = rng.next_f64();
    let fy = rng.next_f64();
    if area <= 0.0 {
        return img.clone();
    }
    let target = area * w * h;
    let rw = (target * aspect).sqrt().min(w);
    let rh = (target / rw).min(h);
    let rw = rw.round().max(1.0) as usize;
    let rh = rh.round().max(1.0) as usize;
    let x0 = (fx * (img.width() - rw) as f64).floor() as usize;
    let y0 = (fy * (img.height() - rh) as f64).floor() as usize;
    let mut out = img.clone();
    for y in y0..y0 + rh {
        for x in x0..x0 + rw {
            out.set(x, y, [0, 0, 0]);
        }
    }
    out
}

/// Blends each pixel toward `color` by the per-pixel weight in `mask`.
fn blend_mask(img: &Image, mask: &[f64], color: [f64; 3]) -> Image {
    let mut out = img.clone();
    for (p, &a) in out.pixels_mut().chunks_exact_mut(CHANNELS).zip(mask) {
        for c in 0..3 {
            p[c] = clamp_u8((1.0 - a) * p[c] as f64 + a * color[c]);
        }
    }
    out
}

fn rain(img: &Image, density: f64, rng: &mut SplitMix64) -> Image {
    let (w, h) = (img.width(), img.height());
    let slant = rng.uniform(-0.35, 0.35);
    let count = (density * (w * h) as f64).round() as usize;
    let length = 4.0 + 120.0 * density;
    let (dx, dy) = (slant.sin(), slant.cos());
    let mut mask = vec![0.0f64; w * h];
    for _ in 0..count {
        let sx = rng.uniform(0.0, w as f64);
        let sy = rng.uniform(-length, h as f64);
        let steps = (length * 2.0).ceil() as usize;
        for s in 0..=steps {
            let t = s as f64 * 0.5;
            let x = (sx + t * dx).floor();
            let y = (sy + t * dy).floor();
            if x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h {
                let m = &mut mask[y as usize * w + x as usize];
                *m = m.max(0.55);
            }
        }
    }
    let darkened = map_values(img, |v| v * (1.0 - 2.0 * density.min(0.25)));
    blend_mask(&darkened, &mask, [200.0, 200.0, 215.0])
}

fn snow(img: &Image, density: f64, rng: &mut SplitMix64) -> Image {
    let (w, h) = (img.width(), img.height());
    let count = (density * (w * h) as f64).round() as usize;
    let mut mask = vec![0.0f64; w * h];
    for _ in 0..count {
        let cx = rng.uniform(0.0, w as f64);
        let cy = rng.uniform(0.0, h as f64);
        let r = rng.uniform(0.6, 1.6);
        let reach = (r + 1.0).ceil() as isize;
        for oy in -reach..=reach {
            for ox in -reach..=reach {
                let x = cx.floor() as isize + ox;
                let y = cy.floor() as isize + oy;
                if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                    continue;
                }
                let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                let a = (1.0 - d / (r + 0.5)).clamp(0.0, 1.0);
                let m = &mut mask[y as usize * w + x as usize];
                *m = m.max(a);
            }
        }
    }
    let lift = (3.0 * density).min(1.0);
    let brightened = map_values(img, |v| v + (255.0 - v) * lift);
    blend_mask(&brightened, &mask, [255.0, 255.0, 255.0])
}

/// Smooth lattice noise in `[0, 1]` with the given cell size in pixels.
fn value_noise(w: usize, h: usize, cell: f64, rng: &mut SplitMix64) -> Vec<f64> {
    let gw = (w as f64 / cell).ceil() as usize + 2;
    let gh = (h as f64 / cell).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.next_f64()).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let gx = x as f64 / cell;
            let gy = y as f64 / cell;
            let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
            let (tx, ty) = (smooth(gx.fract()), smooth(gy.fract()));
            let at = |i: usize, j: usize| lattice[j * gw + i];
            let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
            let bot = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

fn frost(img: &Image, strength: f64, rng: &mut SplitMix64) -> Image {
    let (w, h) = (img.width(), img.height());
    let coarse = value_noise(w, h, 8.0, rng);
    let fine = value_noise(w, h, 2.0, rng);
    let mask: Vec<f64> = coarse
        .iter()
        .zip(&fine)
        .map(|(c, f)| strength * (0.65 * c + 0.35 * f))
        .collect();
    blend_mask(img, &mask, [215.0, 230.0, 250.0])
}

fn fog(img: &Image, alpha: f64, rng: &mut SplitMix64) -> Image {
    let (w, h) = (img.width(), img.height());
    let noise = value_noise(w, h, 12.0, rng);
    let mask: Vec<f64> = noise.iter().map(|n| alpha * (0.75 + 0.25 * n)).collect();
    blend_mask(img, &mask, [200.0, 200.0, 200.0])
}

fn flare(img: &Image, intensity: f64, rng: &mut SplitMix64) -> Image {
    let (w, h) = (img.width(), img.height());
    let cx = rng.uniform(0.0, w as f64);
    let cy = rng.uniform(0.0, h as f64);
    let radius = 0.35 * w.min(h) as f64;
    let tint = [1.0, 0.95, 0.8];
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
            let g = intensity * (-d2 / (2.0 * radius * radius)).exp();
            let i = (y * w + x) * CHANNELS;
            for c in 0..3 {
                let v = &mut out.pixels_mut()[i + c];
                *v = clamp_u8(*v as f64 + g * tint[c]);
            }
        }
    }
    out
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn any_method() -> impl Strategy<Value = Method> {
        (0..Method::ALL.len()).prop_map(|i| Method::ALL[i])
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn deterministic_and_dimension_preserving(
            method in any_method(),
            severity in 1u8..=5,
            seed in any::<u64>(),
            w in 4usize..24,
            h in 4usize..24,
            img_seed in any::<u64>(),
        ) {
            let mut rng = SplitMix64::new(img_seed);
            let px = (0..w * h * 3).map(|_| rng.below(256) as u8).collect();
            let img = Image::new(w, h, px).unwrap();
            let spec = CorruptionSpec::new(method, severity, seed);
            let a = apply_corruption(&img, &spec).unwrap();
            let b = apply_corruption(&img, &spec).unwrap();
            prop_assert!(a.same_dims(&img));
            prop_assert_eq!(a, b);
        }
    }
}
