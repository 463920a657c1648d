//! Monotone piecewise-linear curves parameterised by positive segment weights.
//!
//! With segments `t_0..t_{L-1}` and prefix sums `T_k`, the curve passes through
//! `(k/L, T_k/T_L)` and evaluates as `f(x) = sum_i clip(L*x - i, 0, 1) * t_i / T_L`.

#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    segments: Vec<f64>,
}

impl Curve {
    /// Panics if `segments` is empty or contains a non-positive weight.
    pub fn new(segments: Vec<f64>) -> Self {
        assert!(!segments.is_empty(), "curve needs at least one segment");
        assert!(
            segments.iter().all(|&t| t > 0.0 && t.is_finite()),
            "curve segments must be positive"
        );
        Self { segments }
    }

    pub fn identity(len: usize) -> Self {
        Self::new(vec![1.0; len])
    }

    pub fn segments(&self) -> &[f64] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.segments.iter().sum()
    }

    /// Breakpoints `(k/L, T_k/T_L)` for `k = 0..=L`.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let l = self.len() as f64;
        let total = self.total();
        let mut acc = 0.0;
        let mut pts = vec![(0.0, 0.0)];
        for (k, t) in self.segments.iter().enumerate() {
            acc += t;
            pts.push(((k + 1) as f64 / l, acc / total));
        }
        pts
    }

    pub fn eval(&self, x: f64) -> f64 {
        eval_segments(&self.segments, x)
    }
}

#[inline]
fn coverage(l: f64, x: f64, i: usize) -> f64 {
    (l * x - i as f64).clamp(0.0, 1.0)
}

/// Evaluates the curve for `x` in [0,1].
#[inline]
pub(crate) fn eval_segments(t: &[f64], x: f64) -> f64 {
    let l = t.len() as f64;
    let mut num = 0.0;
    let mut total = 0.0;
    for (i, &ti) in t.iter().enumerate() {
        num += coverage(l, x, i) * ti;
        total += ti;
    }
    num / total
}

/// Slope of the curve at `x`, taken from the right at breakpoints and zero at `x >= 1`.
#[inline]
pub(crate) fn slope_segments(t: &[f64], x: f64) -> f64 {
    if !(0.0..1.0).contains(&x) {
        return 0.0;
    }
    let l = t.len();
    let k = ((x * l as f64).floor() as usize).min(l - 1);
    let total: f64 = t.iter().sum();
    l as f64 * t[k] / total
}

/// Accumulates `upstream * df(x)/dt_j` into `grad` for every segment.
#[inline]
pub(crate) fn accumulate_segment_grad(t: &[f64], x: f64, upstream: f64, grad: &mut [f64]) {
    let l = t.len() as f64;
    let total: f64 = t.iter().sum();
    let f = eval_segments(t, x);
    for (j, g) in grad.iter_mut().enumerate() {
        *g += upstream * (coverage(l, x, j) - f) / total;
    }
}
