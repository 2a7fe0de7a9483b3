//! Brute-force references shared by the oracle and acceptance tests.
#![allow(dead_code)]

use robustkit::model::{
    forward_continuous, loss_and_grad_continuous, Loss, ModelParams, INPUT_LEN, INPUT_SIZE,
};
use robustkit::rng::SplitMix64;
use robustkit::Image;

pub fn random_image(rng: &mut SplitMix64, w: usize, h: usize) -> Image {
    let px = (0..w * h * 3).map(|_| rng.below(256) as u8).collect();
    Image::new(w, h, px).unwrap()
}

/// Pair that is related (so SSIM is not near zero) but not identical.
pub fn related_pair(rng: &mut SplitMix64, w: usize, h: usize) -> (Image, Image) {
    let a = random_image(rng, w, h);
    let amp = 1 + rng.below(80) as i32;
    let b: Vec<u8> = a
        .pixels()
        .iter()
        .map(|&p| (p as i32 + rng.below(2 * amp as u64 + 1) as i32 - amp).clamp(0, 255) as u8)
        .collect();
    (a.clone(), Image::new(w, h, b).unwrap())
}

pub fn oracle_psnr(a: &Image, b: &Image) -> f64 {
    let mut sum = 0.0;
    let mut n = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            let (p, q) = (a.get(x, y), b.get(x, y));
            for c in 0..3 {
                let d = p[c] as f64 - q[c] as f64;
                sum += d * d;
                n += 1.0;
            }
        }
    }
    let mse = sum / n;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64.powi(2) / mse).log10()
    }
}

pub fn oracle_luma(img: &Image, x: usize, y: usize) -> f64 {
    let [r, g, b] = img.get(x, y);
    0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64
}

/// Windowwise SSIM with a 2-D Gaussian kernel built directly.
pub fn oracle_ssim(a: &Image, b: &Image) -> f64 {
    const K: usize = 11;
    let sigma: f64 = 1.5;
    let mut kernel = [[0.0f64; K]; K];
    let mut total = 0.0;
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let dy = i as f64 - 5.0;
            let dx = j as f64 - 5.0;
            *v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut acc = 0.0;
    let mut count = 0.0;
    for oy in 0..=a.height() - K {
        for ox in 0..=a.width() - K {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..K {
                for j in 0..K {
                    let w = kernel[i][j] / total;
                    mx += w * oracle_luma(a, ox + j, oy + i);
                    my += w * oracle_luma(b, ox + j, oy + i);
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..K {
                for j in 0..K {
                    let w = kernel[i][j] / total;
                    let dx = oracle_luma(a, ox + j, oy + i) - mx;
                    let dy = oracle_luma(b, ox + j, oy + i) - my;
                    vx += w * dx * dx;
                    vy += w * dy * dy;
                    cov += w * dx * dy;
                }
            }
            acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1.0;
        }
    }
    acc / count
}

pub fn random_params(classes: usize, rng: &mut SplitMix64) -> ModelParams {
    let mut p = ModelParams::init(classes, rng.next_u64());
    for g in p.groups_mut() {
        for v in g.iter_mut() {
            *v += 0.05 * rng.normal();
        }
    }
    p
}

/// Nested-loop forward pass over `x` (row-major RGB pixel values):
/// zero-padded 3x3 convolutions, ReLU, 2x2 max pooling, dense layer.
pub struct OracleForward {
    pub low: Vec<f64>,
    pub logits: Vec<f64>,
    /// ReLU signs of both convolutions and the winning slot of every pooling
    /// window. The network is smooth wherever this stays fixed.
    pub pattern: Vec<u8>,
}

pub fn oracle_forward(p: &ModelParams, x: &[f64]) -> OracleForward {
    oracle_forward_frozen(p, x, None)
}

/// Like `oracle_forward`, but with `frozen` every ReLU and pooling window
/// follows the given pattern instead of the current values. The result is
/// then smooth in `p` and `x`, and agrees with the network on the piece
/// where that pattern holds.
pub fn oracle_forward_frozen(p: &ModelParams, x: &[f64], frozen: Option<&[u8]>) -> OracleForward {
    let s = INPUT_SIZE;
    let mut pattern = Vec::new();
    let choose = |pattern: &Vec<u8>, own: u8| frozen.map_or(own, |f| f[pattern.len()]);
    let input = |c: usize, y: usize, xx: usize| x[(y * s + xx) * 3 + c] / 127.5 - 1.0;
    let conv = |input: &dyn Fn(usize, usize, usize) -> f64,
                cin: usize,
                size: usize,
                w: &[f64],
                b: &[f64],
                cout: usize,
                pattern: &mut Vec<u8>|
     -> Vec<f64> {
        let mut out = vec![0.0; cout * size * size];
        for co in 0..cout {
            for y in 0..size {
                for xx in 0..size {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = y as isize + ky as isize - 1;
                                let ix = xx as isize + kx as isize - 1;
                                if iy < 0 || ix < 0 || iy >= size as isize || ix >= size as isize {
                                    continue;
                                }
                                acc += w[((co * cin + ci) * 3 + ky) * 3 + kx]
                                    * input(ci, iy as usize, ix as usize);
                            }
                        }
                    }
                    let on = choose(pattern, (acc > 0.0) as u8);
                    pattern.push(on);
                    out[(co * size + y) * size + xx] = if on == 1 { acc } else { 0.0 };
                }
            }
        }
        out
    };
    let pool = |v: &[f64], ch: usize, size: usize, pattern: &mut Vec<u8>| -> Vec<f64> {
        let h = size / 2;
        let mut out = vec![0.0; ch * h * h];
        for c in 0..ch {
            for y in 0..h {
                for xx in 0..h {
                    let at = |k: usize| v[(c * size + 2 * y + k / 2) * size + 2 * xx + k % 2];
                    let own = (1..4).fold(0, |b, k| if at(k) > at(b) { k } else { b });
                    let best = choose(pattern, own as u8);
                    pattern.push(best);
                    out[(c * h + y) * h + xx] = at(best as usize);
                }
            }
        }
        out
    };
    let a1 = conv(&input, 3, s, &p.conv1_w, &p.conv1_b, 8, &mut pattern);
    let p1 = pool(&a1, 8, s, &mut pattern);
    let half = s / 2;
    let p1_at = |c: usize, y: usize, xx: usize| p1[(c * half + y) * half + xx];
    let a2 = conv(&p1_at, 8, half, &p.conv2_w, &p.conv2_b, 16, &mut pattern);
    let p2 = pool(&a2, 16, half, &mut pattern);
    let logits = (0..p.classes)
        .map(|k| {
            let mut acc = p.fc_b[k];
            for (i, v) in p2.iter().enumerate() {
                acc += p.fc_w[k * p2.len() + i] * v;
            }
            acc
        })
        .collect();
    OracleForward {
        low: a1,
        logits,
        pattern,
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Cross-entropy minus `lambda` times the squared distance of the low
/// feature to `reference`, from `oracle_forward_frozen`.
pub fn oracle_loss(
    p: &ModelParams,
    x: &[f64],
    label: usize,
    penalty: Option<(f64, &[f64])>,
    frozen: Option<&[u8]>,
) -> f64 {
    let o = oracle_forward_frozen(p, x, frozen);
    let m = o.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + o.logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    let ce = lse - o.logits[label];
    match penalty {
        None => ce,
        Some((lambda, reference)) => {
            let dist: f64 = o
                .low
                .iter()
                .zip(reference)
                .map(|(a, r)| (a - r) * (a - r))
                .sum();
            ce - lambda * dist
        }
    }
}

pub fn loss_at(p: &ModelParams, x: &[f64], label: usize, loss: Loss<'_>) -> f64 {
    loss_and_grad_continuous(p, x, label, loss, false, false)
        .unwrap()
        .loss
}

/// Five-point central difference of `f` at 0.
fn five_point(h: f64, f: impl Fn(f64) -> f64) -> f64 {
    (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h)
}

pub struct GradientCheck {
    pub probes: usize,
    pub worst: f64,
    /// Description of the worst probe.
    pub worst_at: String,
}

/// Finite differences against the analytic gradient on 20 probes per
/// parameter group (or the whole group if smaller) and 100 input probes.
/// The differences are taken on the oracle loss with the activation pattern
/// of the base point frozen, so steps never straddle a ReLU or max-pool
/// switch.
pub fn check_gradients(ffl: bool, seed: u64) -> GradientCheck {
    let h = 1e-3;
    let mut rng = SplitMix64::new(seed);
    let p = random_params(3, &mut rng);
    let x: Vec<f64> = (0..INPUT_LEN).map(|_| rng.uniform(0.0, 255.0)).collect();
    let label = rng.below(3) as usize;
    let reference: Vec<f64> = {
        let other: Vec<f64> = x
            .iter()
            .map(|v| (v + rng.uniform(-8.0, 8.0)).clamp(0.0, 255.0))
            .collect();
        forward_continuous(&p, &other).unwrap().low_feature
    };
    let (loss, penalty) = if ffl {
        (
            Loss::Ffl {
                lambda: 0.1,
                reference_low: &reference,
            },
            Some((0.1, reference.as_slice())),
        )
    } else {
        (Loss::CrossEntropy, None)
    };
    let lg = loss_and_grad_continuous(&p, &x, label, loss, true, true).unwrap();
    let pg = lg.param_grad.unwrap();
    let ig = lg.input_grad.unwrap();

    let base = oracle_forward(&p, &x).pattern;
    let frozen = Some(base.as_slice());
    let mut out = GradientCheck {
        probes: 0,
        worst: 0.0,
        worst_at: String::new(),
    };
    let mut record = |an: f64, fd: f64, at: String| {
        out.probes += 1;
        let e = rel_err(an, fd);
        if e >= out.worst {
            out.worst = e;
            out.worst_at = format!("{at}: {an} vs {fd}");
        }
    };
    for group in 0..6 {
        let len = p.groups()[group].len();
        let mut order: Vec<usize> = (0..len).collect();
        rng.shuffle(&mut order);
        for &i in order.iter().take(20) {
            let fd = five_point(h, |d| {
                let mut q = p.clone();
                q.groups_mut()[group][i] += d;
                oracle_loss(&q, &x, label, penalty, frozen)
            });
            record(
                pg.groups()[group][i],
                fd,
                format!("group {group} index {i}"),
            );
        }
    }
    // Pixels enter the network as v / 127.5 - 1; step h in those units.
    let hp = h * 127.5;
    for _ in 0..100 {
        let i = rng.below(INPUT_LEN as u64) as usize;
        let fd = five_point(hp, |d| {
            let mut y = x.clone();
            y[i] += d;
            oracle_loss(&p, &y, label, penalty, frozen)
        });
        record(ig[i], fd, format!("input {i}"));
    }
    out
}
