//! Colour helpers: sRGB transfer, luminance and HSL saturation.

/// Luminance weights for (r, g, b). They sum to exactly 1.
pub const LUM_WEIGHTS: [f64; 3] = [0.27, 0.67, 0.06];

#[inline]
pub fn luminance(p: [f64; 3]) -> f64 {
    LUM_WEIGHTS[0] * p[0] + LUM_WEIGHTS[1] * p[1] + LUM_WEIGHTS[2] * p[2]
}

/// sRGB-encoded value in [0,1] to linear light.
pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// Linear value to sRGB encoding; input is clamped to [0,1].
pub fn linear_to_srgb(c: f64) -> f64 {
    let c = c.clamp(0.0, 1.0);
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

#[inline]
pub(crate) fn clamp01(p: [f64; 3]) -> [f64; 3] {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0), p[2].clamp(0.0, 1.0)]
}

/// Index of the first maximum and first minimum channel.
#[inline]
pub(crate) fn argmax_argmin(p: [f64; 3]) -> (usize, usize) {
    let mut hi = 0;
    let mut lo = 0;
    for c in 1..3 {
        if p[c] > p[hi] {
            hi = c;
        }
        if p[c] < p[lo] {
            lo = c;
        }
    }
    (hi, lo)
}

/// HSL saturation `(max-min)/(1-|max+min-1|)` of the clamped pixel, 0 when achromatic.
pub fn hsl_saturation(p: [f64; 3]) -> f64 {
    let q = clamp01(p);
    let (hi, lo) = argmax_argmin(q);
    let chroma = q[hi] - q[lo];
    if chroma <= 0.0 {
        return 0.0;
    }
    let denom = 1.0 - (q[hi] + q[lo] - 1.0).abs();
    if denom <= 0.0 {
        return 0.0;
    }
    (chroma / denom).min(1.0)
}

/// Gradient of [`hsl_saturation`] with respect to the unclamped pixel.
pub(crate) fn hsl_saturation_grad(p: [f64; 3]) -> [f64; 3] {
    let q = clamp01(p);
    let (hi, lo) = argmax_argmin(q);
    let mut g = [0.0; 3];
    let chroma = q[hi] - q[lo];
    if chroma <= 0.0 || hi == lo {
        return g;
    }
    let denom = 1.0 - (q[hi] + q[lo] - 1.0).abs();
    if denom <= 0.0 || chroma >= denom {
        return g;
    }
    // d|x|/dx taken from the right at 0.
    let s = if q[hi] + q[lo] - 1.0 >= 0.0 { 1.0 } else { -1.0 };
    let d2 = denom * denom;
    let d_hi = (denom + chroma * s) / d2;
    let d_lo = (-denom + chroma * s) / d2;
    if (0.0..1.0).contains(&p[hi]) {
        g[hi] += d_hi;
    }
    if (0.0..1.0).contains(&p[lo]) {
        g[lo] += d_lo;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lum_weights_sum_to_one() {
        assert_eq!(LUM_WEIGHTS.iter().sum::<f64>(), 1.0);
        assert!((luminance([0.3, 0.3, 0.3]) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn srgb_midgray() {
        // Direct evaluation of the sRGB EOTF at 128/255.
        let c: f64 = 128.0 / 255.0;
        let oracle = ((c + 0.055) / 1.055).powf(2.4);
        assert!((srgb_to_linear(c) - oracle).abs() < 1e-15);
        assert!((oracle - 0.2158).abs() < 1e-4);
        for i in 0..=255 {
            let v = i as f64 / 255.0;
            assert!((linear_to_srgb(srgb_to_linear(v)) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn saturation_extremes() {
        assert_eq!(hsl_saturation([1.0, 0.0, 0.0]), 1.0);
        assert_eq!(hsl_saturation([0.5, 0.5, 0.5]), 0.0);
        // (0.6, 0.2, 0.2): l = 0.4, s = 0.4 / 0.8
        assert!((hsl_saturation([0.6, 0.2, 0.2]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn saturation_gradient_matches_differences() {
        let p = [0.62, 0.31, 0.18];
        let g = hsl_saturation_grad(p);
        let h = 1e-6;
        for c in 0..3 {
            let mut a = p;
            let mut b = p;
            a[c] += h;
            b[c] -= h;
            let fd = (hsl_saturation(a) - hsl_saturation(b)) / (2.0 * h);
            assert!((fd - g[c]).abs() < 1e-6, "channel {c}: {fd} vs {}", g[c]);
        }
    }
}
