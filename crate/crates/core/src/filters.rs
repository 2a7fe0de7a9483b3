//! Deterministic spatial filters shared by corruptions and defenses.
//!
//! All filters work per channel with replicated borders and return images of
//! the input's dimensions.

use crate::image::{clamp_u8, luma, Image, CHANNELS};
use crate::metrics::gaussian_taps;

/// Sigma OpenCV derives from an odd kernel size when none is given.
pub fn sigma_for_ksize(ksize: usize) -> f64 {
    0.3 * ((ksize as f64 - 1.0) * 0.5 - 1.0) + 0.8
}

fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Separable correlation with a symmetric 1-D kernel, replicate border.
pub fn separable(img: &Image, taps: &[f64]) -> Image {
    let (w, h) = (img.width(), img.height());
    let r = (taps.len() / 2) as isize;
    let src = img.to_f64();
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                let mut acc = 0.0;
                for (i, t) in taps.iter().enumerate() {
                    let xx = clamp_index(x as isize + i as isize - r, w);
                    acc += t * src[(y * w + xx) * CHANNELS + c];
                }
                tmp[(y * w + x) * CHANNELS + c] = acc;
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                let mut acc = 0.0;
                for (i, t) in taps.iter().enumerate() {
                    let yy = clamp_index(y as isize + i as isize - r, h);
                    acc += t * tmp[(yy * w + x) * CHANNELS + c];
                }
                out[(y * w + x) * CHANNELS + c] = acc;
            }
        }
    }
    Image::from_f64(w, h, &out).expect("dimensions preserved")
}

pub fn gaussian_blur(img: &Image, ksize: usize) -> Image {
    if ksize <= 1 {
        return img.clone();
    }
    separable(img, &gaussian_taps(ksize, sigma_for_ksize(ksize)))
}

pub fn box_blur(img: &Image, ksize: usize) -> Image {
    if ksize <= 1 {
        return img.clone();
    }
    separable(img, &vec![1.0 / ksize as f64; ksize])
}

pub fn median_filter(img: &Image, ksize: usize) -> Image {
    if ksize <= 1 {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let r = (ksize / 2) as isize;
    let src = img.pixels();
    let mut out = vec![0u8; src.len()];
    let mut window = Vec::with_capacity(ksize * ksize);
    let mid = ksize * ksize / 2;
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                window.clear();
                for dy in -r..=r {
                    let yy = clamp_index(y as isize + dy, h);
                    for dx in -r..=r {
                        let xx = clamp_index(x as isize + dx, w);
                        window.push(src[(yy * w + xx) * CHANNELS + c]);
                    }
                }
                let (_, m, _) = window.select_nth_unstable(mid);
                out[(y * w + x) * CHANNELS + c] = *m;
            }
        }
    }
    Image::new(w, h, out).expect("dimensions preserved")
}

/// Averages `length` samples along a line through each pixel at `angle_deg`,
/// sampling with bilinear interpolation and replicated borders.
pub fn motion_blur(img: &Image, length: usize, angle_deg: f64) -> Image {
    if length <= 1 {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let (s, c) = angle_deg.to_radians().sin_cos();
    let src = img.to_f64();
    let half = (length as f64 - 1.0) / 2.0;
    let offsets: Vec<(f64, f64)> = (0..length)
        .map(|i| {
            let t = i as f64 - half;
            (t * c, t * s)
        })
        .collect();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for &(dx, dy) in &offsets {
                let px = sample_bilinear_replicate(&src, w, h, x as f64 + dx, y as f64 + dy);
                for ch in 0..3 {
                    acc[ch] += px[ch];
                }
            }
            for ch in 0..3 {
                out[(y * w + x) * CHANNELS + ch] = acc[ch] / length as f64;
            }
        }
    }
    Image::from_f64(w, h, &out).expect("dimensions preserved")
}

fn sample_bilinear_replicate(src: &[f64], w: usize, h: usize, x: f64, y: f64) -> [f64; 3] {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let p = |xx: usize, yy: usize| src[(yy * w + xx) * CHANNELS + c];
        let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
        let bot = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
        *o = top * (1.0 - fy) + bot * fy;
    }
    out
}

/// Samples with bilinear interpolation; taps outside the frame read black.
fn sample_bilinear_black(src: &[f64], w: usize, h: usize, x: f64, y: f64) -> [f64; 3] {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let mut out = [0.0; 3];
    let at = |xx: isize, yy: isize, c: usize| {
        if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
            0.0
        } else {
            src[(yy as usize * w + xx as usize) * CHANNELS + c]
        }
    };
    for (c, o) in out.iter_mut().enumerate() {
        let top = at(x0, y0, c) * (1.0 - fx) + at(x0 + 1, y0, c) * fx;
        let bot = at(x0, y0 + 1, c) * (1.0 - fx) + at(x0 + 1, y0 + 1, c) * fx;
        *o = top * (1.0 - fy) + bot * fy;
    }
    out
}

/// Rotates counter-clockwise about the image center. Pixels whose source lies
/// outside the frame become black; the output keeps the input dimensions.
pub fn rotate(img: &Image, angle_deg: f64) -> Image {
    let (w, h) = (img.width(), img.height());
    let (s, c) = angle_deg.to_radians().sin_cos();
    // Snap near-exact multiples of 90 degrees so identity rotations are exact.
    let snap = |v: f64| {
        if (v - v.round()).abs() < 1e-12 {
            v.round()
        } else {
            v
        }
    };
    let (s, c) = (snap(s), snap(c));
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let src = img.to_f64();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            // Inverse map: rotate the destination offset by -angle.
            let sx = c * dx - s * dy + cx;
            let sy = s * dx + c * dy + cy;
            let px = sample_bilinear_black(&src, w, h, sx, sy);
            out[(y * w + x) * CHANNELS..][..3].copy_from_slice(&px);
        }
    }
    Image::from_f64(w, h, &out).expect("dimensions preserved")
}

/// Bilinear resample of the crop `[x0, x0 + cw) x [y0, y0 + ch)` to `out_w x out_h`.
pub fn resize_crop(
    img: &Image,
    x0: f64,
    y0: f64,
    cw: f64,
    ch: f64,
    out_w: usize,
    out_h: usize,
) -> Image {
    let src = img.to_f64();
    let (w, h) = (img.width(), img.height());
    let mut out = vec![0.0; out_w * out_h * CHANNELS];
    for y in 0..out_h {
        for x in 0..out_w {
            let sx = x0 + (x as f64 + 0.5) * cw / out_w as f64 - 0.5;
            let sy = y0 + (y as f64 + 0.5) * ch / out_h as f64 - 0.5;
            let px = sample_bilinear_replicate(&src, w, h, sx, sy);
            out[(y * out_w + x) * CHANNELS..][..3].copy_from_slice(&px);
        }
    }
    Image::from_f64(out_w, out_h, &out).expect("positive output size")
}

pub fn hflip(img: &Image) -> Image {
    let (w, h) = (img.width(), img.height());
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, img.get(w - 1 - x, y));
        }
    }
    out
}

/// Writes rounded luma into all three channels.
pub fn grayscale(img: &Image) -> Image {
    let mut out = img.clone();
    for p in out.pixels_mut().chunks_exact_mut(CHANNELS) {
        let g = clamp_u8(luma(p[0], p[1], p[2]));
        p.fill(g);
    }
    out
}

/// Keeps the top `bits` bits of every value.
pub fn reduce_bit_depth(img: &Image, bits: u32) -> Image {
    let levels = ((1u32 << bits) - 1) as f64;
    let mut out = img.clone();
    for p in out.pixels_mut() {
        *p = clamp_u8((*p as f64 / 255.0 * levels).round() / levels * 255.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = SplitMix64::new(seed);
        let px = (0..w * h * 3).map(|_| rng.below(256) as u8).collect();
        Image::new(w, h, px).unwrap()
    }

    #[test]
    fn opencv_sigma_rule() {
        assert!((sigma_for_ksize(3) - 0.8).abs() < 1e-12);
        assert!((sigma_for_ksize(29) - 4.7).abs() < 1e-12);
    }

    #[test]
    fn blurs_preserve_constants() {
        let img = Image::filled(12, 9, [40, 90, 200]);
        assert_eq!(gaussian_blur(&img, 7), img);
        assert_eq!(box_blur(&img, 5), img);
        assert_eq!(median_filter(&img, 5), img);
        assert_eq!(motion_blur(&img, 7, 33.0), img);
    }

    #[test]
    fn median_removes_isolated_speck() {
        let mut img = Image::filled(7, 7, [100, 100, 100]);
        img.set(3, 3, [255, 255, 255]);
        assert_eq!(median_filter(&img, 3), Image::filled(7, 7, [100, 100, 100]));
    }

    #[test]
    fn rotation_identities() {
        let img = random_image(17, 11, 5);
        assert_eq!(rotate(&img, 0.0), img);
        let square = random_image(9, 9, 6);
        let quarter = rotate(&rotate(&rotate(&rotate(&square, 90.0), 90.0), 90.0), 90.0);
        assert_eq!(quarter, square);
    }

    #[test]
    fn hflip_involution() {
        let img = random_image(6, 4, 1);
        assert_eq!(hflip(&hflip(&img)), img);
    }

    #[test]
    fn full_crop_is_identity() {
        let img = random_image(8, 8, 2);
        assert_eq!(resize_crop(&img, 0.0, 0.0, 8.0, 8.0, 8, 8), img);
    }

    #[test]
    fn bit_depth_levels() {
        let img = random_image(8, 8, 3);
        let sq = reduce_bit_depth(&img, 4);
        let mut levels: Vec<u8> = sq.pixels().to_vec();
        levels.sort_unstable();
        levels.dedup();
        assert!(levels.len() <= 16);
        assert_eq!(reduce_bit_depth(&sq, 4), sq);
    }
}
