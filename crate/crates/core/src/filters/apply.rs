//! Per-pixel filter evaluation and vector-Jacobian products.
//!
//! Curve, trigonometric and HSV enhancements see the input clamped to [0,1];
//! interpolating filters blend the enhanced pixel with the unclamped input.
//! Derivatives at kinks are taken from the right.

use super::curve::{accumulate_segment_grad, eval_segments, slope_segments};
use super::{FilterAction, FilterKind, CURVE_SEGMENTS};
use crate::error::{Error, Result};
use crate::image::color::{argmax_argmin, clamp01, luminance, LUM_WEIGHTS};
use crate::image::LinearImage;
use crate::par::{self, PIXEL_CHUNK};

const CONTRAST_EPS: f64 = 1e-6;
const SATURATION_GAIN: f64 = 0.8;

/// Gradients returned by [`filter_vjp`].
#[derive(Clone, Debug, PartialEq)]
pub struct FilterGrad {
    /// Gradient with respect to the raw (tanh-range) parameters.
    pub raw: Vec<f64>,
    /// Gradient with respect to the input pixels, laid out like image data.
    pub input: Vec<f64>,
}

/// Action parameters unpacked into per-pixel constants.
enum Prepared<'a> {
    Exposure { scale: f64 },
    Gamma { g: f64 },
    WhiteBalance { w: [f64; 3] },
    Saturation { s: f64 },
    Contrast { s: f64 },
    BlackWhite { s: f64 },
    Tone { t: &'a [f64] },
    Color { t: &'a [f64] },
}

impl<'a> Prepared<'a> {
    fn new(action: &'a FilterAction) -> Self {
        let r = action.resolved();
        match action.kind() {
            FilterKind::Exposure => Prepared::Exposure { scale: r[0].exp2() },
            FilterKind::Gamma => Prepared::Gamma { g: r[0] },
            FilterKind::WhiteBalance => Prepared::WhiteBalance { w: [r[0], r[1], r[2]] },
            FilterKind::Saturation => Prepared::Saturation { s: r[0] },
            FilterKind::Contrast => Prepared::Contrast { s: r[0] },
            FilterKind::BlackWhite => Prepared::BlackWhite { s: r[0] },
            FilterKind::Tone => Prepared::Tone { t: r },
            FilterKind::Color => Prepared::Color { t: r },
        }
    }

    #[inline]
    fn forward(&self, p: [f64; 3]) -> [f64; 3] {
        match *self {
            Prepared::Exposure { scale } => [scale * p[0], scale * p[1], scale * p[2]],
            Prepared::Gamma { g } => p.map(|v| if v > 0.0 { v.powf(g) } else { 0.0 }),
            Prepared::WhiteBalance { w } => [w[0] * p[0], w[1] * p[1], w[2] * p[2]],
            Prepared::Saturation { s } => blend(p, saturation_enhance(clamp01(p)), s),
            Prepared::Contrast { s } => blend(p, contrast_enhance(clamp01(p)), s),
            Prepared::BlackWhite { s } => {
                let l = luminance(p);
                blend(p, [l, l, l], s)
            }
            Prepared::Tone { t } => clamp01(p).map(|v| eval_segments(t, v)),
            Prepared::Color { t } => {
                let q = clamp01(p);
                [
                    eval_segments(&t[..CURVE_SEGMENTS], q[0]),
                    eval_segments(&t[CURVE_SEGMENTS..2 * CURVE_SEGMENTS], q[1]),
                    eval_segments(&t[2 * CURVE_SEGMENTS..], q[2]),
                ]
            }
        }
    }

    /// Returns the input gradient and accumulates resolved-parameter gradients into `gres`.
    #[inline]
    fn vjp(&self, p: [f64; 3], up: [f64; 3], gres: &mut [f64]) -> [f64; 3] {
        match *self {
            Prepared::Exposure { scale } => {
                gres[0] += std::f64::consts::LN_2 * scale * dot(up, p);
                up.map(|u| u * scale)
            }
            Prepared::Gamma { g } => {
                let mut gi = [0.0; 3];
                for c in 0..3 {
                    if p[c] > 0.0 {
                        let pg = p[c].powf(g);
                        gres[0] += up[c] * pg * p[c].ln();
                        gi[c] = up[c] * g * pg / p[c];
                    }
                }
                gi
            }
            Prepared::WhiteBalance { w } => {
                for c in 0..3 {
                    gres[c] += up[c] * p[c];
                }
                [w[0] * up[0], w[1] * up[1], w[2] * up[2]]
            }
            Prepared::Saturation { s } => {
                let q = clamp01(p);
                let enh = saturation_enhance(q);
                gres[0] += dot(up, sub(enh, p));
                let scaled = up.map(|u| u * s);
                let gq = saturation_enhance_vjp(q, scaled);
                blend_input_grad(p, up, s, gq)
            }
            Prepared::Contrast { s } => {
                let q = clamp01(p);
                let enh = contrast_enhance(q);
                gres[0] += dot(up, sub(enh, p));
                let scaled = up.map(|u| u * s);
                let gq = contrast_enhance_vjp(q, scaled);
                blend_input_grad(p, up, s, gq)
            }
            Prepared::BlackWhite { s } => {
                let l = luminance(p);
                gres[0] += dot(up, sub([l, l, l], p));
                let total = s * (up[0] + up[1] + up[2]);
                [
                    (1.0 - s) * up[0] + total * LUM_WEIGHTS[0],
                    (1.0 - s) * up[1] + total * LUM_WEIGHTS[1],
                    (1.0 - s) * up[2] + total * LUM_WEIGHTS[2],
                ]
            }
            Prepared::Tone { t } => {
                let q = clamp01(p);
                let mut gi = [0.0; 3];
                for c in 0..3 {
                    accumulate_segment_grad(t, q[c], up[c], gres);
                    gi[c] = up[c] * slope_segments(t, p[c]);
                }
                gi
            }
            Prepared::Color { t } => {
                let q = clamp01(p);
                let mut gi = [0.0; 3];
                for c in 0..3 {
                    let range = c * CURVE_SEGMENTS..(c + 1) * CURVE_SEGMENTS;
                    accumulate_segment_grad(&t[range.clone()], q[c], up[c], &mut gres[range.clone()]);
                    gi[c] = up[c] * slope_segments(&t[range], p[c]);
                }
                gi
            }
        }
    }
}

#[inline]
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn blend(p: [f64; 3], enh: [f64; 3], s: f64) -> [f64; 3] {
    [
        (1.0 - s) * p[0] + s * enh[0],
        (1.0 - s) * p[1] + s * enh[1],
        (1.0 - s) * p[2] + s * enh[2],
    ]
}

/// `(1-s) * up` plus the enhancement gradient passed back through the clamp.
#[inline]
fn blend_input_grad(p: [f64; 3], up: [f64; 3], s: f64, gq: [f64; 3]) -> [f64; 3] {
    let mut gi = [0.0; 3];
    for c in 0..3 {
        let through_clamp = if (0.0..1.0).contains(&p[c]) { gq[c] } else { 0.0 };
        gi[c] = (1.0 - s) * up[c] + through_clamp;
    }
    gi
}

/// `q * EnhancedLum(Lum(q)) / Lum(q)` with `EnhancedLum(l) = (1 - cos(pi l)) / 2`.
#[inline]
fn contrast_enhance(q: [f64; 3]) -> [f64; 3] {
    let l = luminance(q);
    let ratio = 0.5 * (1.0 - (std::f64::consts::PI * l).cos()) / (l + CONTRAST_EPS);
    q.map(|v| v * ratio)
}

fn contrast_enhance_vjp(q: [f64; 3], up: [f64; 3]) -> [f64; 3] {
    use std::f64::consts::PI;
    let l = luminance(q);
    let denom = l + CONTRAST_EPS;
    let el = 0.5 * (1.0 - (PI * l).cos());
    let ratio = el / denom;
    let d_ratio = 0.5 * PI * (PI * l).sin() / denom - el / (denom * denom);
    let through_l = dot(up, q) * d_ratio;
    [
        up[0] * ratio + through_l * LUM_WEIGHTS[0],
        up[1] * ratio + through_l * LUM_WEIGHTS[1],
        up[2] * ratio + through_l * LUM_WEIGHTS[2],
    ]
}

/// `a(V) = 0.8 * (0.5 - |0.5 - V|)` and its right derivative.
#[inline]
fn sat_boost(v: f64) -> (f64, f64) {
    let a = SATURATION_GAIN * (0.5 - (0.5 - v).abs());
    let da = if v >= 0.5 { -SATURATION_GAIN } else { SATURATION_GAIN };
    (a, da)
}

/// HSV round trip with `S' = S + (1 - S) * a(V)`, hue and value kept.
///
/// For a chromatic pixel this reduces to `out_c = q_c - a * m/(V-m) * (V - q_c)`
/// with V the max and m the min channel. Achromatic pixels take hue 0.
#[inline]
fn saturation_enhance(q: [f64; 3]) -> [f64; 3] {
    let (hi, lo) = argmax_argmin(q);
    let v = q[hi];
    let m = q[lo];
    let (a, _) = sat_boost(v);
    let chroma = v - m;
    if chroma > 0.0 {
        let r = m / chroma;
        q.map(|qc| qc - a * r * (v - qc))
    } else {
        let low = v * (1.0 - a);
        [v, low, low]
    }
}

fn saturation_enhance_vjp(q: [f64; 3], up: [f64; 3]) -> [f64; 3] {
    let (hi, lo) = argmax_argmin(q);
    let v = q[hi];
    let m = q[lo];
    let (a, da) = sat_boost(v);
    let chroma = v - m;
    let mut g = [0.0; 3];
    if chroma > 0.0 {
        let r = m / chroma;
        let r_v = -m / (chroma * chroma);
        let r_m = v / (chroma * chroma);
        let mut g_v = 0.0;
        let mut g_m = 0.0;
        for c in 0..3 {
            let d = v - q[c];
            g[c] += up[c] * (1.0 + a * r);
            g_v += up[c] * (-da * r * d - a * r_v * d - a * r);
            g_m += up[c] * (-a * r_m * d);
        }
        g[hi] += g_v;
        g[lo] += g_m;
    } else {
        // Hue is treated as constant; only the value channel carries gradient.
        g[hi] = up[0] + (up[1] + up[2]) * ((1.0 - a) - v * da);
    }
    g
}

/// Applies `action` to every pixel. Output has the input's dimensions.
pub fn apply_filter(action: &FilterAction, image: &LinearImage) -> LinearImage {
    let prepared = Prepared::new(action);
    let mut out = image.data().to_vec();
    par::for_each_chunk_mut(&mut out, PIXEL_CHUNK * 3, |_, chunk| {
        for px in chunk.chunks_exact_mut(3) {
            let o = prepared.forward([px[0], px[1], px[2]]);
            px.copy_from_slice(&o);
        }
    });
    LinearImage::from_raw_unchecked(image.width(), image.height(), out)
}

/// Applies a sequence of actions in order.
pub fn apply_script<'a>(
    actions: impl IntoIterator<Item = &'a FilterAction>,
    image: &LinearImage,
) -> LinearImage {
    actions
        .into_iter()
        .fold(image.clone(), |img, a| apply_filter(a, &img))
}

/// Vector-Jacobian product of [`apply_filter`] with respect to the raw
/// parameters (through the range map) and the input pixels.
pub fn filter_vjp(action: &FilterAction, image: &LinearImage, upstream: &[f64]) -> Result<FilterGrad> {
    if upstream.len() != image.data().len() {
        return Err(Error::shape(image.data().len(), upstream.len()));
    }
    let prepared = Prepared::new(action);
    let arity = action.kind().arity();
    let mut input = upstream.to_vec();
    // Partial parameter sums per fixed-size chunk, reduced in chunk order.
    let partials = par::map_chunks_zip(image.data(), &mut input, PIXEL_CHUNK * 3, PIXEL_CHUNK * 3, |pix, grads| {
        let mut gres = vec![0.0; arity];
        for (p, g) in pix.chunks_exact(3).zip(grads.chunks_exact_mut(3)) {
            let gi = prepared.vjp([p[0], p[1], p[2]], [g[0], g[1], g[2]], &mut gres);
            g.copy_from_slice(&gi);
        }
        gres
    });
    let mut gres = vec![0.0; arity];
    for part in partials {
        for (a, b) in gres.iter_mut().zip(part) {
            *a += b;
        }
    }
    let raw = gres
        .iter()
        .zip(action.jacobian())
        .map(|(g, j)| g * j)
        .collect();
    Ok(FilterGrad { raw, input })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one(p: [f64; 3]) -> LinearImage {
        LinearImage::filled(1, 1, p)
    }

    #[test]
    fn exposure_doubles() {
        let a = FilterAction::new(FilterKind::Exposure, vec![1.0 / 3.5]).unwrap();
        let out = apply_filter(&a, &one([0.25; 3]));
        for v in out.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn black_white_full_strength() {
        let a = FilterAction::strength(FilterKind::BlackWhite, 0.999_999_999);
        let out = apply_filter(&a, &one([1.0, 0.0, 0.0]));
        for v in out.data() {
            assert!((v - 0.27).abs() < 1e-8);
        }
    }

    #[test]
    fn neutral_actions_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = LinearImage::from_fn(9, 7, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
        for k in FilterKind::ALL {
            let out = apply_filter(&FilterAction::neutral(k), &img);
            assert!(out.max_abs_diff(&img) < 1e-6, "{k}");
        }
    }

    #[test]
    fn saturation_enhance_matches_hsv_round_trip() {
        // Reference: explicit RGB -> HSV -> RGB with the boosted S.
        fn rgb_to_hsv(p: [f64; 3]) -> (f64, f64, f64) {
            let v = p[0].max(p[1]).max(p[2]);
            let m = p[0].min(p[1]).min(p[2]);
            let c = v - m;
            let h = if c == 0.0 {
                0.0
            } else if v == p[0] {
                ((p[1] - p[2]) / c).rem_euclid(6.0)
            } else if v == p[1] {
                (p[2] - p[0]) / c + 2.0
            } else {
                (p[0] - p[1]) / c + 4.0
            };
            let s = if v == 0.0 { 0.0 } else { c / v };
            (h, s, v)
        }
        fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
            let c = v * s;
            let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
            let (r, g, b) = match h as u32 {
                0 => (c, x, 0.0),
                1 => (x, c, 0.0),
                2 => (0.0, c, x),
                3 => (0.0, x, c),
                4 => (x, 0.0, c),
                _ => (c, 0.0, x),
            };
            let m = v - c;
            [r + m, g + m, b + m]
        }
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..500 {
            let q = [rng.gen(), rng.gen(), rng.gen()];
            let (h, s, v) = rgb_to_hsv(q);
            let boosted = s + (1.0 - s) * (0.5 - (0.5 - v).abs()) * 0.8;
            let expect = hsv_to_rgb(h, boosted, v);
            let got = saturation_enhance(q);
            for c in 0..3 {
                assert!((got[c] - expect[c]).abs() < 1e-12, "{q:?}: {got:?} vs {expect:?}");
            }
        }
        // Achromatic pixels take hue 0.
        let g = saturation_enhance([0.5; 3]);
        assert!((g[0] - 0.5).abs() < 1e-15 && (g[1] - 0.5 * 0.6).abs() < 1e-15);
    }

    #[test]
    fn white_balance_input_gradient_is_transpose() {
        let a = FilterAction::new(FilterKind::WhiteBalance, vec![1.0 - 1e-12, 0.0, 0.0]).unwrap();
        let img = one([0.3, 0.4, 0.5]);
        let g = filter_vjp(&a, &img, &[0.7, 0.2, -0.1]).unwrap();
        assert!((g.input[0] - 2.0 * 0.7).abs() < 1e-9);
        assert!((g.input[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn exposure_raw_gradient() {
        let a = FilterAction::neutral(FilterKind::Exposure);
        let g = filter_vjp(&a, &one([0.25; 3]), &[1.0; 3]).unwrap();
        let expect = 3.0 * 0.25 * std::f64::consts::LN_2 * 3.5;
        assert!((g.raw[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn vjp_rejects_mismatched_upstream() {
        let a = FilterAction::neutral(FilterKind::Gamma);
        assert!(filter_vjp(&a, &one([0.1; 3]), &[1.0; 6]).is_err());
    }

    #[test]
    fn large_image_reduction_is_order_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = LinearImage::from_fn(150, 90, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
        let up: Vec<f64> = (0..img.data().len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = FilterAction::new(FilterKind::Tone, (0..8).map(|i| 0.1 * i as f64 - 0.3).collect()).unwrap();
        let g1 = filter_vjp(&a, &img, &up).unwrap();
        let g2 = filter_vjp(&a, &img, &up).unwrap();
        assert_eq!(g1, g2);
    }
}
