//! Small CNN classifier with hand-written backpropagation.
//!
//! Architecture for a 32x32 RGB input scaled to `[0, 1]`:
//!
//! ```text
//! conv3x3(3->8, pad 1) + ReLU   <- low-level feature
//! maxpool 2x2
//! conv3x3(8->16, pad 1) + ReLU
//! maxpool 2x2
//! flatten (16*8*8) -> fc -> logits -> softmax
//! ```
//!
//! Tensors are channel-major (`[c][y][x]`); images are converted on entry.
//! Input gradients are reported per 8-bit pixel unit in the image's
//! interleaved layout.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};
use crate::rng::{derive_seed, SplitMix64};

pub const INPUT_SIZE: usize = 32;
pub const CONV1_OUT: usize = 8;
pub const CONV2_OUT: usize = 16;
const POOL1: usize = INPUT_SIZE / 2;
const POOL2: usize = INPUT_SIZE / 4;
pub const FC_IN: usize = CONV2_OUT * POOL2 * POOL2;
pub const LOW_FEATURE_LEN: usize = CONV1_OUT * INPUT_SIZE * INPUT_SIZE;
pub const INPUT_LEN: usize = INPUT_SIZE * INPUT_SIZE * CHANNELS;

/// Network weights. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub classes: usize,
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub fc_w: Vec<f64>,
    pub fc_b: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(classes: usize) -> Self {
        Self {
            classes,
            conv1_w: vec![0.0; CONV1_OUT * 3 * 9],
            conv1_b: vec![0.0; CONV1_OUT],
            conv2_w: vec![0.0; CONV2_OUT * CONV1_OUT * 9],
            conv2_b: vec![0.0; CONV2_OUT],
            fc_w: vec![0.0; classes * FC_IN],
            fc_b: vec![0.0; classes],
        }
    }

    /// He-normal weights, zero biases.
    pub fn init(classes: usize, seed: u64) -> Self {
        let mut p = Self::zeros(classes);
        let mut rng = SplitMix64::new(seed);
        let mut fill = |v: &mut [f64], fan_in: usize| {
            let std = (2.0 / fan_in as f64).sqrt();
            v.iter_mut().for_each(|w| *w = std * rng.normal());
        };
        fill(&mut p.conv1_w, 27);
        fill(&mut p.conv2_w, 72);
        fill(&mut p.fc_w, FC_IN);
        p
    }

    pub fn groups(&self) -> [&[f64]; 6] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.fc_w,
            &self.fc_b,
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc_w,
            &mut self.fc_b,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.groups()
            .iter()
            .all(|g| g.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (dst, src) in self.groups_mut().into_iter().zip(other.groups()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += scale * s);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.groups_mut() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Top-1 class (0-based) plus softmax scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: usize,
    pub scores: Vec<f64>,
}

impl Prediction {
    /// Argmax with lowest-index tie-break.
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let mut label = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[label] {
                label = i;
            }
        }
        Self { label, scores }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub names: Vec<String>,
}

impl LabelSet {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// conv1 post-ReLU activation, `[8][32][32]`.
    pub low_feature: Vec<f64>,
    /// Pre-softmax logits.
    pub logits: Vec<f64>,
    pub prediction: Prediction,
}

#[derive(Debug, Clone, Copy)]
pub enum Loss<'a> {
    CrossEntropy,
    /// `CE - lambda * ||low(x) - reference||^2`.
    Ffl {
        lambda: f64,
        reference_low: &'a [f64],
    },
}

#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    /// Cross-entropy part of `loss`.
    pub cross_entropy: f64,
    pub param_grad: Option<ModelParams>,
    /// d loss / d pixel, interleaved image layout, pixel units.
    pub input_grad: Option<Vec<f64>>,
}

struct Cache {
    x: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    p1: Vec<f64>,
    idx1: Vec<usize>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    p2: Vec<f64>,
    idx2: Vec<usize>,
    logits: Vec<f64>,
}

fn check_input(img: &Image) -> Result<()> {
    if img.width() != INPUT_SIZE || img.height() != INPUT_SIZE {
        return Err(Error::Shape(format!(
            "model expects {INPUT_SIZE}x{INPUT_SIZE}, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// Scale from pixel units to network input units (`[-1, 1]`).
const INPUT_SCALE: f64 = 1.0 / 127.5;

/// Interleaved pixel values (0..255) to channel-major `[-1, 1]`.
fn to_chw(pixels: &[f64]) -> Vec<f64> {
    let n = INPUT_SIZE * INPUT_SIZE;
    let mut out = vec![0.0; INPUT_LEN];
    for i in 0..n {
        for c in 0..CHANNELS {
            out[c * n + i] = pixels[i * CHANNELS + c] * INPUT_SCALE - 1.0;
        }
    }
    out
}

/// Output rows/cols that read a valid input position for kernel offset `k`.
fn valid_range(k: usize, size: usize) -> std::ops::Range<usize> {
    (1 - k.min(1))..(size + 1 - k).min(size)
}

fn conv3x3(input: &[f64], cin: usize, size: usize, w: &[f64], b: &[f64], cout: usize) -> Vec<f64> {
    let plane = size * size;
    let mut out = vec![0.0; cout * plane];
    for co in 0..cout {
        let o = &mut out[co * plane..(co + 1) * plane];
        o.iter_mut().for_each(|v| *v = b[co]);
        for ci in 0..cin {
            let inp = &input[ci * plane..(ci + 1) * plane];
            let k = &w[(co * cin + ci) * 9..][..9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wt = k[ky * 3 + kx];
                    // Output (y, x) reads input (y + ky - 1, x + kx - 1).
                    for oy in valid_range(ky, size) {
                        let iy = oy + ky - 1;
                        let orow = &mut o[oy * size..(oy + 1) * size];
                        let irow = &inp[iy * size..(iy + 1) * size];
                        for ox in valid_range(kx, size) {
                            orow[ox] += wt * irow[ox + kx - 1];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients and optionally the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    dout: &[f64],
    cin: usize,
    size: usize,
    w: &[f64],
    cout: usize,
    dw: Option<(&mut [f64], &mut [f64])>,
    din: Option<&mut [f64]>,
) {
    let plane = size * size;
    let range = |k: usize| valid_range(k, size);
    if let Some((dw, db)) = dw {
        for co in 0..cout {
            let d = &dout[co * plane..(co + 1) * plane];
            db[co] += d.iter().sum::<f64>();
            for ci in 0..cin {
                let inp = &input[ci * plane..(ci + 1) * plane];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let mut acc = 0.0;
                        for oy in range(ky) {
                            let iy = oy + ky - 1;
                            let drow = &d[oy * size..(oy + 1) * size];
                            let irow = &inp[iy * size..(iy + 1) * size];
                            for ox in range(kx) {
                                acc += drow[ox] * irow[ox + kx - 1];
                            }
                        }
                        dw[(co * cin + ci) * 9 + ky * 3 + kx] += acc;
                    }
                }
            }
        }
    }
    if let Some(din) = din {
        for co in 0..cout {
            let d = &dout[co * plane..(co + 1) * plane];
            for ci in 0..cin {
                let k = &w[(co * cin + ci) * 9..][..9];
                let dplane = &mut din[ci * plane..(ci + 1) * plane];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wt = k[ky * 3 + kx];
                        for oy in range(ky) {
                            let iy = oy + ky - 1;
                            let drow = &d[oy * size..(oy + 1) * size];
                            let irow = &mut dplane[iy * size..(iy + 1) * size];
                            for ox in range(kx) {
                                irow[ox + kx - 1] += wt * drow[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 max pool; records the flat source index of each maximum (first wins).
fn maxpool2(input: &[f64], channels: usize, size: usize) -> (Vec<f64>, Vec<usize>) {
    let half = size / 2;
    let mut out = vec![0.0; channels * half * half];
    let mut idx = vec![0; channels * half * half];
    for c in 0..channels {
        for y in 0..half {
            for x in 0..half {
                let mut best = c * size * size + (2 * y) * size + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = c * size * size + (2 * y + dy) * size + 2 * x + dx;
                    if input[j] > input[best] {
                        best = j;
                    }
                }
                let o = c * half * half + y * half + x;
                out[o] = input[best];
                idx[o] = best;
            }
        }
    }
    (out, idx)
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_softmax_at(logits: &[f64], i: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    logits[i] - lse
}

fn run(params: &ModelParams, pixels: &[f64]) -> Cache {
    let x = to_chw(pixels);
    let z1 = conv3x3(
        &x,
        3,
        INPUT_SIZE,
        &params.conv1_w,
        &params.conv1_b,
        CONV1_OUT,
    );
    let a1 = relu(&z1);
    let (p1, idx1) = maxpool2(&a1, CONV1_OUT, INPUT_SIZE);
    let z2 = conv3x3(
        &p1,
        CONV1_OUT,
        POOL1,
        &params.conv2_w,
        &params.conv2_b,
        CONV2_OUT,
    );
    let a2 = relu(&z2);
    let (p2, idx2) = maxpool2(&a2, CONV2_OUT, POOL1);
    let logits = (0..params.classes)
        .map(|k| {
            params.fc_b[k]
                + params.fc_w[k * FC_IN..(k + 1) * FC_IN]
                    .iter()
                    .zip(&p2)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
        })
        .collect();
    Cache {
        x,
        z1,
        a1,
        p1,
        idx1,
        z2,
        a2,
        p2,
        idx2,
        logits,
    }
}

fn check_finite(logits: &[f64]) -> Result<()> {
    if logits.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical("non-finite logits in forward pass".into()))
    }
}

pub fn forward(params: &ModelParams, img: &Image) -> Result<ForwardOutput> {
    check_input(img)?;
    forward_continuous(params, &img.to_f64())
}

/// Forward pass on continuous pixel values (interleaved, 0..255 scale).
pub fn forward_continuous(params: &ModelParams, pixels: &[f64]) -> Result<ForwardOutput> {
    if pixels.len() != INPUT_LEN {
        return Err(Error::Shape(format!(
            "expected {INPUT_LEN} input values, got {}",
            pixels.len()
        )));
    }
    let cache = run(params, pixels);
    check_finite(&cache.logits)?;
    let prediction = Prediction::from_scores(softmax(&cache.logits));
    Ok(ForwardOutput {
        low_feature: cache.a1,
        logits: cache.logits,
        prediction,
    })
}

pub fn predict(params: &ModelParams, img: &Image) -> Result<Prediction> {
    Ok(forward(params, img)?.prediction)
}

pub fn loss_and_grad(
    params: &ModelParams,
    img: &Image,
    label: usize,
    loss: Loss<'_>,
) -> Result<LossGrad> {
    check_input(img)?;
    loss_and_grad_continuous(params, &img.to_f64(), label, loss, true, true)
}

/// Loss and the requested gradients for continuous pixel input.
pub fn loss_and_grad_continuous(
    params: &ModelParams,
    pixels: &[f64],
    label: usize,
    loss: Loss<'_>,
    want_params: bool,
    want_input: bool,
) -> Result<LossGrad> {
    if pixels.len() != INPUT_LEN {
        return Err(Error::Shape(format!(
            "expected {INPUT_LEN} input values, got {}",
            pixels.len()
        )));
    }
    if label >= params.classes {
        return Err(Error::Shape(format!(
            "label {label} out of range for {} classes",
            params.classes
        )));
    }
    let c = run(params, pixels);
    check_finite(&c.logits)?;

    let cross_entropy = -log_softmax_at(&c.logits, label);
    let mut value = cross_entropy;
    let mut dlogits = softmax(&c.logits);
    dlogits[label] -= 1.0;

    let mut grad = want_params.then(|| ModelParams::zeros(params.classes));

    // fc
    let mut dp2 = vec![0.0; FC_IN];
    for (k, &dl) in dlogits.iter().enumerate() {
        let row = &params.fc_w[k * FC_IN..(k + 1) * FC_IN];
        dp2.iter_mut().zip(row).for_each(|(d, w)| *d += dl * w);
        if let Some(g) = grad.as_mut() {
            g.fc_b[k] += dl;
            g.fc_w[k * FC_IN..(k + 1) * FC_IN]
                .iter_mut()
                .zip(&c.p2)
                .for_each(|(gw, v)| *gw += dl * v);
        }
    }
    // pool2 + relu2
    let mut dz2 = vec![0.0; c.z2.len()];
    for (o, &src) in c.idx2.iter().enumerate() {
        if c.z2[src] > 0.0 {
            dz2[src] += dp2[o];
        }
    }
    debug_assert_eq!(c.a2.len(), dz2.len());
    // conv2
    let mut dp1 = vec![0.0; c.p1.len()];
    {
        let dw = grad
            .as_mut()
            .map(|g| (g.conv2_w.as_mut_slice(), g.conv2_b.as_mut_slice()));
        conv3x3_backward(
            &c.p1,
            &dz2,
            CONV1_OUT,
            POOL1,
            &params.conv2_w,
            CONV2_OUT,
            dw,
            Some(&mut dp1),
        );
    }
    // pool1
    let mut da1 = vec![0.0; c.a1.len()];
    for (o, &src) in c.idx1.iter().enumerate() {
        da1[src] += dp1[o];
    }
    // low-level feature penalty on a1
    if let Loss::Ffl {
        lambda,
        reference_low,
    } = loss
    {
        if reference_low.len() != LOW_FEATURE_LEN {
            return Err(Error::Shape(format!(
                "reference low feature has {} values, expected {LOW_FEATURE_LEN}",
                reference_low.len()
            )));
        }
        let mut dist = 0.0;
        for ((d, &a), &r) in da1.iter_mut().zip(&c.a1).zip(reference_low) {
            let diff = a - r;
            dist += diff * diff;
            *d -= 2.0 * lambda * diff;
        }
        value -= lambda * dist;
    }
    // relu1
    let dz1: Vec<f64> = da1
        .iter()
        .zip(&c.z1)
        .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
        .collect();
    let mut dx = want_input.then(|| vec![0.0; c.x.len()]);
    if want_params || want_input {
        let dw = grad
            .as_mut()
            .map(|g| (g.conv1_w.as_mut_slice(), g.conv1_b.as_mut_slice()));
        conv3x3_backward(
            &c.x,
            &dz1,
            3,
            INPUT_SIZE,
            &params.conv1_w,
            CONV1_OUT,
            dw,
            dx.as_deref_mut(),
        );
    }
    let input_grad = dx.map(|dx| {
        let n = INPUT_SIZE * INPUT_SIZE;
        let mut out = vec![0.0; INPUT_LEN];
        for i in 0..n {
            for ch in 0..CHANNELS {
                out[i * CHANNELS + ch] = dx[ch * n + i] * INPUT_SCALE;
            }
        }
        out
    });
    if !value.is_finite() {
        return Err(Error::Numerical(format!("loss is {value}")));
    }
    Ok(LossGrad {
        loss: value,
        cross_entropy,
        param_grad: grad,
        input_grad,
    })
}

// ---------------------------------------------------------------------------
// Params file: b"RKMP", u32 version, u32 classes, u32 input size, then every
// group as u32 length + little-endian f64 values.

const PARAMS_MAGIC: &[u8; 4] = b"RKMP";
pub const PARAMS_VERSION: u32 = 1;

pub fn encode_params(p: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PARAMS_MAGIC);
    out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.classes as u32).to_le_bytes());
    out.extend_from_slice(&(INPUT_SIZE as u32).to_le_bytes());
    for g in p.groups() {
        write_f64s(&mut out, g);
    }
    out
}

pub(crate) fn write_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) struct ByteReader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl ByteReader<'_> {
    pub fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, expected: usize) -> Result<Vec<f64>> {
        let n = self.u32()? as usize;
        if n != expected {
            return Err(Error::Format(format!(
                "group has {n} values, expected {expected}"
            )));
        }
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn header(&mut self, magic: &[u8; 4], version: u32) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let v = self.u32()?;
        if v != version {
            return Err(Error::Format(format!(
                "version mismatch: file {v}, supported {version}"
            )));
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = ByteReader { bytes, pos: 0 };
    r.header(PARAMS_MAGIC, PARAMS_VERSION)?;
    let classes = r.u32()? as usize;
    let size = r.u32()? as usize;
    if size != INPUT_SIZE || classes == 0 {
        return Err(Error::Format(format!(
            "unsupported geometry: {classes} classes, input {size}"
        )));
    }
    let shape = ModelParams::zeros(classes);
    let mut p = ModelParams::zeros(classes);
    for (dst, src) in p.groups_mut().into_iter().zip(shape.groups()) {
        *dst = r.f64s(src.len())?;
    }
    r.finish()?;
    if !p.is_finite() {
        return Err(Error::Format("non-finite weights".into()));
    }
    Ok(p)
}

pub fn save_params(p: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, encode_params(p)).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    decode_params(&bytes)
}

/// FNV-1a over pixels and label; orders samples independently of input order.
pub(crate) fn content_key(img: &Image, label: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in img.pixels().iter().chain(&(label as u64).to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    derive_seed(h, img.width() as u64)
}
