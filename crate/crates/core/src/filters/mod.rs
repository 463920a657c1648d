//! The eight global, per-pixel, differentiable retouching filters.

mod apply;
pub mod curve;
mod script;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use apply::{apply_filter, apply_script, filter_vjp, FilterGrad};
pub use curve::Curve;
pub use script::{EditScript, ScriptStep};

/// Segments per tone or colour curve.
pub const CURVE_SEGMENTS: usize = 8;
/// Exposure range in stops for raw = ±1.
pub const EXPOSURE_RANGE: f64 = 3.5;
/// Gamma exponent lies in [1/GAMMA_RANGE, GAMMA_RANGE].
pub const GAMMA_RANGE: f64 = 3.0;
/// White-balance gains lie in [1/WB_RANGE, WB_RANGE].
pub const WB_RANGE: f64 = 2.0;
/// Tone segment weights lie in [1/b, b]; slope ratio is bounded by 2.0/0.5.
pub const TONE_BOUND: f64 = 2.0;

/// Colour segment weights lie in [1/b, b] with b = sqrt(1.1/0.9), bounding the
/// slope ratio by 1.1/0.9.
pub fn color_bound() -> f64 {
    (1.1f64 / 0.9).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FilterKind {
    Exposure,
    Gamma,
    WhiteBalance,
    Saturation,
    Tone,
    Contrast,
    BlackWhite,
    Color,
}

impl FilterKind {
    pub const ALL: [FilterKind; 8] = [
        FilterKind::Exposure,
        FilterKind::Gamma,
        FilterKind::WhiteBalance,
        FilterKind::Saturation,
        FilterKind::Tone,
        FilterKind::Contrast,
        FilterKind::BlackWhite,
        FilterKind::Color,
    ];

    pub const COUNT: usize = 8;

    pub fn arity(self) -> usize {
        match self {
            FilterKind::Exposure
            | FilterKind::Gamma
            | FilterKind::Saturation
            | FilterKind::Contrast
            | FilterKind::BlackWhite => 1,
            FilterKind::WhiteBalance => 3,
            FilterKind::Tone => CURVE_SEGMENTS,
            FilterKind::Color => 3 * CURVE_SEGMENTS,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<FilterKind> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Exposure => "Exposure",
            FilterKind::Gamma => "Gamma",
            FilterKind::WhiteBalance => "WhiteBalance",
            FilterKind::Saturation => "Saturation",
            FilterKind::Tone => "Tone",
            FilterKind::Contrast => "Contrast",
            FilterKind::BlackWhite => "BlackWhite",
            FilterKind::Color => "Color",
        }
    }

    /// Short label used in probability tables.
    pub fn short_name(self) -> &'static str {
        match self {
            FilterKind::Exposure => "Expo.",
            FilterKind::Gamma => "Gam.",
            FilterKind::WhiteBalance => "W.B.",
            FilterKind::Saturation => "Satu.",
            FilterKind::Tone => "Tone",
            FilterKind::Contrast => "Cst.",
            FilterKind::BlackWhite => "BW",
            FilterKind::Color => "Color",
        }
    }

    pub fn from_name(name: &str) -> Option<FilterKind> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(name))
    }

    /// Offset of this kind's block in a concatenated parameter vector of all kinds.
    pub fn param_offset(self) -> usize {
        Self::ALL[..self.index()].iter().map(|k| k.arity()).sum()
    }

    /// Sum of arities over all kinds.
    pub fn total_arity() -> usize {
        Self::ALL.iter().map(|k| k.arity()).sum()
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A filter choice with its raw (tanh-range) parameters and the physical
/// parameters derived from them.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterAction {
    kind: FilterKind,
    raw: Vec<f64>,
    resolved: Vec<f64>,
    /// d resolved_j / d raw_j; every map is elementwise.
    jacobian: Vec<f64>,
}

impl FilterAction {
    pub fn new(kind: FilterKind, raw: Vec<f64>) -> Result<Self> {
        let (resolved, jacobian) = map_raw_params(kind, &raw)?;
        Ok(Self {
            kind,
            raw,
            resolved,
            jacobian,
        })
    }

    /// The identity action for `kind`.
    pub fn neutral(kind: FilterKind) -> Self {
        Self::new(kind, vec![0.0; kind.arity()]).expect("zero is in range")
    }

    pub fn exposure(stops: f64) -> Self {
        Self::new(FilterKind::Exposure, vec![stops / EXPOSURE_RANGE]).expect("exposure in range")
    }

    pub fn strength(kind: FilterKind, p: f64) -> Self {
        assert!(matches!(
            kind,
            FilterKind::Contrast | FilterKind::Saturation | FilterKind::BlackWhite
        ));
        Self::new(kind, vec![p]).expect("strength in range")
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    /// Physical parameters, flat: E, g, (W_r, W_g, W_b), p, tone t_0..t_7, or
    /// colour curves r, g, b segments in order.
    pub fn resolved(&self) -> &[f64] {
        &self.resolved
    }

    pub(crate) fn jacobian(&self) -> &[f64] {
        &self.jacobian
    }

    pub fn curves(&self) -> Vec<Curve> {
        match self.kind {
            FilterKind::Tone | FilterKind::Color => self
                .resolved
                .chunks(CURVE_SEGMENTS)
                .map(|c| Curve::new(c.to_vec()))
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Human-readable summary such as `Exposure +2.15` or `Gamma 1/0.77`.
    pub fn display(&self) -> String {
        let r = &self.resolved;
        match self.kind {
            FilterKind::Exposure => format!("Exposure {:+.2}", r[0]),
            // Shown as the display gamma 1/g; exponents below one read as "1/g".
            FilterKind::Gamma => {
                if r[0] < 1.0 {
                    format!("Gamma 1/{:.2}", r[0])
                } else {
                    format!("Gamma {:.2}", 1.0 / r[0])
                }
            }
            FilterKind::WhiteBalance => {
                format!("White Balance ({:.2}, {:.2}, {:.2})", r[0], r[1], r[2])
            }
            FilterKind::Saturation => format!("Saturation {:+.2}", r[0]),
            FilterKind::Contrast => format!("Contrast {:+.2}", r[0]),
            FilterKind::BlackWhite => format!("Black & White {:+.2}", r[0]),
            FilterKind::Tone => format!("Tone {}", fmt_curve(&self.curves()[0])),
            FilterKind::Color => {
                let c = self.curves();
                format!(
                    "Color R{} G{} B{}",
                    fmt_curve(&c[0]),
                    fmt_curve(&c[1]),
                    fmt_curve(&c[2])
                )
            }
        }
    }
}

fn fmt_curve(c: &Curve) -> String {
    let pts: Vec<String> = c.points()[1..c.len()]
        .iter()
        .map(|(_, y)| format!("{y:.2}"))
        .collect();
    format!("[{}]", pts.join(" "))
}

/// Maps raw parameters in (-1,1) to physical parameters, returning the
/// resolved values and their elementwise derivatives.
pub fn map_raw_params(kind: FilterKind, raw: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if raw.len() != kind.arity() {
        return Err(Error::Arity {
            kind: kind.name(),
            expected: kind.arity(),
            actual: raw.len(),
        });
    }
    if let Some(&value) = raw.iter().find(|v| !(v.abs() < 1.0)) {
        return Err(Error::RawRange { value });
    }
    let exp_map = |bound: f64| -> (Vec<f64>, Vec<f64>) {
        let ln = bound.ln();
        let vals: Vec<f64> = raw.iter().map(|r| (r * ln).exp()).collect();
        let d = vals.iter().map(|v| v * ln).collect();
        (vals, d)
    };
    Ok(match kind {
        FilterKind::Exposure => (vec![EXPOSURE_RANGE * raw[0]], vec![EXPOSURE_RANGE]),
        FilterKind::Gamma => exp_map(GAMMA_RANGE),
        FilterKind::WhiteBalance => exp_map(WB_RANGE),
        FilterKind::Saturation | FilterKind::Contrast | FilterKind::BlackWhite => {
            (vec![raw[0]], vec![1.0])
        }
        FilterKind::Tone => exp_map(TONE_BOUND),
        FilterKind::Color => exp_map(color_bound()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arities() {
        let a: Vec<usize> = FilterKind::ALL.iter().map(|k| k.arity()).collect();
        assert_eq!(a, vec![1, 1, 3, 1, 8, 1, 1, 24]);
        assert_eq!(FilterKind::total_arity(), 40);
        assert_eq!(FilterKind::Color.param_offset(), 16);
        for k in FilterKind::ALL {
            assert_eq!(FilterKind::from_index(k.index()), Some(k));
            assert_eq!(FilterKind::from_name(k.name()), Some(k));
        }
    }

    #[test]
    fn exposure_mapping() {
        let (r, _) = map_raw_params(FilterKind::Exposure, &[0.0]).unwrap();
        assert_eq!(r, vec![0.0]);
        // +2.15 stops inverts to raw 2.15/3.5 = 0.6143.
        let a = FilterAction::new(FilterKind::Exposure, vec![0.614]).unwrap();
        assert!((a.resolved()[0] - 2.15).abs() < 0.005);
        assert_eq!(a.display(), "Exposure +2.15");
    }

    #[test]
    fn gamma_mapping() {
        let a = FilterAction::new(FilterKind::Gamma, vec![-0.2377]).unwrap();
        assert!((a.resolved()[0] - 0.77).abs() < 0.001);
        assert_eq!(a.display(), "Gamma 1/0.77");
        let b = FilterAction::new(FilterKind::Gamma, vec![0.5]).unwrap();
        assert!((b.resolved()[0] - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ranges_and_errors() {
        let (wb, _) = map_raw_params(FilterKind::WhiteBalance, &[0.999, -0.999, 0.0]).unwrap();
        assert!(wb[0] < 2.0 && wb[1] > 0.5 && wb[2] == 1.0);
        let (tone, _) = map_raw_params(FilterKind::Tone, &[0.99; 8]).unwrap();
        assert!(tone.iter().all(|&t| t < 2.0 && t > 1.9));
        let (col, _) = map_raw_params(FilterKind::Color, &[-0.99; 24]).unwrap();
        assert!(col.iter().all(|&t| t > 1.0 / color_bound()));
        assert!(matches!(
            map_raw_params(FilterKind::Tone, &[0.0; 3]),
            Err(Error::Arity { expected: 8, actual: 3, .. })
        ));
        assert!(matches!(
            map_raw_params(FilterKind::Exposure, &[1.0]),
            Err(Error::RawRange { .. })
        ));
        assert!(map_raw_params(FilterKind::Exposure, &[f64::NAN]).is_err());
    }

    #[test]
    fn display_strings() {
        assert_eq!(FilterAction::strength(FilterKind::Contrast, -0.59).display(), "Contrast -0.59");
        let wb = FilterAction::neutral(FilterKind::WhiteBalance);
        assert_eq!(wb.display(), "White Balance (1.00, 1.00, 1.00)");
        assert!(FilterAction::neutral(FilterKind::Tone).display().starts_with("Tone [0.12 0.25"));
    }
}
