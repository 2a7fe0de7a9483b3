//! Seeded synthetic shape dataset.
//!
//! Three classes (circle, triangle, cross) drawn on 32x32 textured
//! backgrounds. Item `i` of a split has label `i % 3` and is rendered from
//! `derive_seed(derive_seed(seed, split_stream), i)`, where `split_stream` is 1
//! for train and 2 for test. Rendering, in draw order:
//!
//! 1. background: two random colors blended along a random direction, plus
//!    value noise of amplitude 20 (cell 6 px) and per-value noise in [-6, 6];
//! 2. shape color: random RGB whose luma differs from the background mean by
//!    at least 70;
//! 3. shape: center jitter ±3 px around the middle, radius 8..12 px, random
//!    rotation; coverage is 4x4 supersampled and blended with the background;
//!    the fill carries its own per-value noise in [-8, 8].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{clamp_u8, load_image, luma, save_image, Image, ImageFormat};
use crate::model::{LabelSet, INPUT_SIZE};
use crate::rng::{derive_seed, SplitMix64};

pub const CLASS_NAMES: [&str; 3] = ["circle", "triangle", "cross"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub labels: LabelSet,
    pub split: Split,
    pub items: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.labels.len()
    }

    pub fn images(&self) -> Vec<Image> {
        self.items.iter().map(|s| s.image.clone()).collect()
    }

    /// First `n` items (or all if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        Dataset {
            labels: self.labels.clone(),
            split: self.split,
            items: self.items.iter().take(n).cloned().collect(),
        }
    }
}

pub fn shape_labels() -> LabelSet {
    LabelSet {
        names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
    }
}

pub fn generate(seed: u64, split: Split, count: usize) -> Dataset {
    let stream = match split {
        Split::Train => 1,
        Split::Test => 2,
    };
    let split_seed = derive_seed(seed, stream);
    let items = (0..count)
        .map(|i| {
            let label = i % CLASS_NAMES.len();
            Sample {
                image: render(label, derive_seed(split_seed, i as u64)),
                label,
            }
        })
        .collect();
    Dataset {
        labels: shape_labels(),
        split,
        items,
    }
}

/// The bundled corpus: 1500 train and 300 test images.
pub fn bundled(seed: u64) -> (Dataset, Dataset) {
    (
        generate(seed, Split::Train, 1500),
        generate(seed, Split::Test, 300),
    )
}

fn random_color(rng: &mut SplitMix64) -> [f64; 3] {
    [
        rng.uniform(0.0, 255.0),
        rng.uniform(0.0, 255.0),
        rng.uniform(0.0, 255.0),
    ]
}

fn render(label: usize, seed: u64) -> Image {
    let n = INPUT_SIZE;
    let mut rng = SplitMix64::new(seed);

    let c0 = random_color(&mut rng);
    let c1 = random_color(&mut rng);
    let dir = rng.uniform(0.0, std::f64::consts::TAU);
    let (dy, dx) = dir.sin_cos();
    let lattice_w = n / 6 + 2;
    let lattice: Vec<f64> = (0..lattice_w * lattice_w)
        .map(|_| rng.uniform(-1.0, 1.0))
        .collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut bg = vec![0.0; n * n * 3];
    for y in 0..n {
        for x in 0..n {
            let u = x as f64 / (n - 1) as f64 - 0.5;
            let v = y as f64 / (n - 1) as f64 - 0.5;
            let t = (u * dx + v * dy + 0.5).clamp(0.0, 1.0);
            let gx = x as f64 / 6.0;
            let gy = y as f64 / 6.0;
            let (ix, iy) = (gx as usize, gy as usize);
            let (tx, ty) = (smooth(gx.fract()), smooth(gy.fract()));
            let at = |i: usize, j: usize| lattice[j * lattice_w + i];
            let noise = (at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx) * (1.0 - ty)
                + (at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx) * ty;
            for c in 0..3 {
                bg[(y * n + x) * 3 + c] =
                    c0[c] * (1.0 - t) + c1[c] * t + 20.0 * noise + rng.uniform(-6.0, 6.0);
            }
        }
    }
    let bg_luma = {
        let s: [f64; 3] = (0..3)
            .map(|c| bg.iter().skip(c).step_by(3).sum::<f64>() / (n * n) as f64)
            .collect::<Vec<_>>()
            .try_into()
            .unwrap();
        luma(clamp_u8(s[0]), clamp_u8(s[1]), clamp_u8(s[2]))
    };
    let fg = loop {
        let c = random_color(&mut rng);
        if (luma(clamp_u8(c[0]), clamp_u8(c[1]), clamp_u8(c[2])) - bg_luma).abs() >= 70.0 {
            break c;
        }
    };

    let cx = n as f64 / 2.0 + rng.uniform(-3.0, 3.0);
    let cy = n as f64 / 2.0 + rng.uniform(-3.0, 3.0);
    let r = rng.uniform(8.0, 12.0);
    let theta = rng.uniform(0.0, std::f64::consts::TAU);
    let inside = |px: f64, py: f64| -> bool {
        let (s, c) = theta.sin_cos();
        let lx = (px - cx) * c + (py - cy) * s;
        let ly = -(px - cx) * s + (py - cy) * c;
        match label {
            0 => lx * lx + ly * ly <= r * r,
            1 => {
                // Equilateral triangle with circumradius 1.2 r.
                let rr = 1.2 * r;
                (0..3).all(|k| {
                    let a = std::f64::consts::TAU * k as f64 / 3.0 + std::f64::consts::PI / 6.0;
                    let (ny, nx) = a.sin_cos();
                    lx * nx + ly * ny <= rr / 2.0
                })
            }
            _ => {
                let half_w = (0.35 * r).max(3.0);
                (lx.abs() <= half_w && ly.abs() <= r) || (ly.abs() <= half_w && lx.abs() <= r)
            }
        }
    };
    let mut px = Vec::with_capacity(n * n * 3);
    for y in 0..n {
        for x in 0..n {
            let mut cover = 0.0;
            for sy in 0..4 {
                for sx in 0..4 {
                    if inside(
                        x as f64 + (sx as f64 + 0.5) / 4.0,
                        y as f64 + (sy as f64 + 0.5) / 4.0,
                    ) {
                        cover += 1.0 / 16.0;
                    }
                }
            }
            for c in 0..3 {
                let fill = fg[c] + rng.uniform(-8.0, 8.0);
                let v = bg[(y * n + x) * 3 + c] * (1.0 - cover) + fill * cover;
                px.push(clamp_u8(v));
            }
        }
    }
    Image::new(n, n, px).expect("fixed geometry")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelsFile {
    pub classes: Vec<String>,
    pub items: Vec<LabelEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelEntry {
    pub file: String,
    pub label: usize,
    pub split: Split,
}

/// Writes `<dir>/<split>/<index>.ppm` and `<dir>/labels.json`.
pub fn write_dataset(dir: &Path, splits: &[&Dataset]) -> Result<()> {
    let mut entries = Vec::new();
    let mut classes = Vec::new();
    for ds in splits {
        classes = ds.labels.names.clone();
        let sub = match ds.split {
            Split::Train => "train",
            Split::Test => "test",
        };
        let sub_dir = dir.join(sub);
        fs::create_dir_all(&sub_dir).map_err(|source| Error::Write {
            path: sub_dir.clone(),
            source,
        })?;
        for (i, s) in ds.items.iter().enumerate() {
            let file = format!("{sub}/{i:05}.ppm");
            save_image(&s.image, &dir.join(&file), ImageFormat::Ppm)?;
            entries.push(LabelEntry {
                file,
                label: s.label,
                split: ds.split,
            });
        }
    }
    let labels = LabelsFile {
        classes,
        items: entries,
    };
    let path = dir.join("labels.json");
    fs::write(&path, serde_json::to_vec_pretty(&labels)?)
        .map_err(|source| Error::Write { path, source })
}

pub fn read_dataset(dir: &Path, split: Split) -> Result<Dataset> {
    let path = dir.join("labels.json");
    let text = fs::read_to_string(&path).map_err(|source| Error::Read {
        path: path.clone(),
        source,
    })?;
    let file: LabelsFile = serde_json::from_str(&text)?;
    let labels = LabelSet {
        names: file.classes,
    };
    let mut items = Vec::new();
    for e in file.items.into_iter().filter(|e| e.split == split) {
        if e.label >= labels.len() {
            return Err(Error::InvalidConfig(format!(
                "label {} out of range in {}",
                e.label, e.file
            )));
        }
        let p = dir.join(&e.file);
        let fmt = ImageFormat::from_path(&p).unwrap_or(ImageFormat::Ppm);
        items.push(Sample {
            image: load_image(&p, fmt)?,
            label: e.label,
        });
    }
    Ok(Dataset {
        labels,
        split,
        items,
    })
}
