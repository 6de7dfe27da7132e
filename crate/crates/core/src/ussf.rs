//! Unit-safe saturating functions.
//!
//! A USSF is a smooth, odd, strictly increasing map `f: R -> (-1, 1)` that
//! saturates at `±1` and whose slope moment `x² f'(x)` is bounded by a
//! constant `ε`. That bound caps the residual `g(x) = |x| - x f(x) ≤ ε`, which
//! is what lets the controllers and observers in this crate replace sign
//! functions with smooth saturations while keeping a finite Lyapunov residual.
//!
//! Everything here is pure; the certification routines only evaluate the
//! function and its derivative.

use std::f64::consts::{FRAC_2_PI, FRAC_2_SQRT_PI, LN_2};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Number of log-spaced points used by the coarse maximization scan.
pub const GRID_POINTS: usize = 10_000;
/// Bracket width at which golden-section refinement stops.
pub const GOLDEN_BRACKET: f64 = 1e-10;
/// Smallest positive abscissa of the log-spaced scan.
const GRID_FLOOR: f64 = 1e-6;
/// Abscissa beyond which outward continuation gives up.
const CONTINUATION_CEILING: f64 = 1e200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UssfError {
    #[error("non-finite argument {0}")]
    NonFinite(f64),
    #[error("exponent must be positive, got {0}")]
    NonPositiveExponent(f64),
    #[error("invalid certification parameter: {0}")]
    InvalidParameter(String),
    #[error("cannot certify `{kind}`: {reason}")]
    Certification { kind: String, reason: String },
    #[error("`{0}` is not a USSF (failed: {1})")]
    NotAdmitted(String, String),
    #[error("unknown USSF name `{0}` (expected tanh, atan, alg or erf)")]
    UnknownKind(String),
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A user-supplied saturating function together with its derivative.
#[derive(Clone)]
pub struct CustomUssf {
    name: String,
    value: ScalarFn,
    slope: ScalarFn,
}

impl CustomUssf {
    pub fn new<F, D>(name: impl Into<String>, value: F, slope: D) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            value: Arc::new(value),
            slope: Arc::new(slope),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl fmt::Debug for CustomUssf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomUssf").field("name", &self.name).finish()
    }
}

impl PartialEq for CustomUssf {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && Arc::ptr_eq(&self.value, &other.value)
    }
}

/// The USSF family members known to this crate.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum UssfKind {
    /// `tanh(x)`
    Tanh,
    /// `(2/π) arctan(x)`
    ScaledArctan,
    /// `x / sqrt(1 + x²)`
    #[default]
    AlgebraicSigmoid,
    /// `erf(x)`
    ErrorFunction,
    /// Anything else. Must pass [`verify_axioms`] before a controller accepts it.
    Custom(CustomUssf),
}

impl UssfKind {
    pub const BUILT_IN: [UssfKind; 4] = [
        UssfKind::Tanh,
        UssfKind::ScaledArctan,
        UssfKind::AlgebraicSigmoid,
        UssfKind::ErrorFunction,
    ];

    /// Short name used on the command line and in JSON.
    pub fn name(&self) -> &str {
        match self {
            UssfKind::Tanh => "tanh",
            UssfKind::ScaledArctan => "atan",
            UssfKind::AlgebraicSigmoid => "alg",
            UssfKind::ErrorFunction => "erf",
            UssfKind::Custom(c) => c.name(),
        }
    }

    pub fn is_custom(&self) -> bool {
        matches!(self, UssfKind::Custom(_))
    }

    /// `f(x)` without argument validation. Hot-path version of [`ussf_eval`].
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match self {
            UssfKind::Tanh => x.tanh(),
            UssfKind::ScaledArctan => FRAC_2_PI * x.atan(),
            UssfKind::AlgebraicSigmoid => {
                if x.abs() < 1e150 {
                    x / (1.0 + x * x).sqrt()
                } else {
                    x.signum()
                }
            }
            UssfKind::ErrorFunction => libm::erf(x),
            UssfKind::Custom(c) => (c.value)(x),
        }
    }

    /// `f'(x)` without argument validation. Hot-path version of [`ussf_deriv`].
    #[inline]
    pub fn slope(&self, x: f64) -> f64 {
        match self {
            UssfKind::Tanh => {
                let e = (-2.0 * x.abs()).exp();
                4.0 * e / ((1.0 + e) * (1.0 + e))
            }
            UssfKind::ScaledArctan => FRAC_2_PI / (1.0 + x * x),
            UssfKind::AlgebraicSigmoid => {
                if x.abs() < 1e100 {
                    let s2 = 1.0 + x * x;
                    1.0 / (s2 * s2.sqrt())
                } else {
                    let s = x.abs().recip();
                    s * s * s
                }
            }
            UssfKind::ErrorFunction => FRAC_2_SQRT_PI * (-x * x).exp(),
            UssfKind::Custom(c) => (c.slope)(x),
        }
    }

    /// `ln f'(x)`, finite wherever the slope is positive even if `f'(x)`
    /// itself underflows.
    pub fn log_slope(&self, x: f64) -> f64 {
        let a = x.abs();
        match self {
            UssfKind::Tanh => 2.0 * LN_2 - 2.0 * a - 2.0 * (-2.0 * a).exp().ln_1p(),
            UssfKind::ScaledArctan => FRAC_2_PI.ln() - ln_1p_sq(a),
            UssfKind::AlgebraicSigmoid => -1.5 * ln_1p_sq(a),
            UssfKind::ErrorFunction => FRAC_2_SQRT_PI.ln() - a * a,
            UssfKind::Custom(c) => (c.slope)(x).ln(),
        }
    }

    /// `1 - f(|x|)`, computed from an analytic complement where one exists.
    pub fn tail(&self, x: f64) -> f64 {
        let a = x.abs();
        match self {
            UssfKind::Tanh => 2.0 / ((2.0 * a).exp() + 1.0),
            UssfKind::ScaledArctan => {
                if a == 0.0 {
                    1.0
                } else {
                    FRAC_2_PI * (1.0 / a).atan()
                }
            }
            UssfKind::AlgebraicSigmoid => {
                let s = 1f64.hypot(a);
                1.0 / (s * (s + a))
            }
            UssfKind::ErrorFunction => libm::erfc(a),
            UssfKind::Custom(c) => 1.0 - (c.value)(a),
        }
    }

    /// `ln(1 - f(|x|))`; finite for built-ins at any finite `x`.
    pub fn log_tail(&self, x: f64) -> f64 {
        let a = x.abs();
        match self {
            UssfKind::Tanh => LN_2 - 2.0 * a - (-2.0 * a).exp().ln_1p(),
            UssfKind::ScaledArctan => self.tail(a).ln(),
            UssfKind::AlgebraicSigmoid => {
                let s = 1f64.hypot(a);
                -s.ln() - (s + a).ln()
            }
            UssfKind::ErrorFunction => {
                let t = libm::erfc(a);
                if t > 1e-290 {
                    t.ln()
                } else {
                    // erfc(x) ~ e^{-x²}/(x√π) · (1 - 1/(2x²) + 3/(4x⁴) - 15/(8x⁶))
                    let inv = 1.0 / (a * a);
                    let series = 1.0 - 0.5 * inv + 0.75 * inv * inv - 1.875 * inv * inv * inv;
                    -a * a - (a * std::f64::consts::PI.sqrt()).ln() + series.ln()
                }
            }
            UssfKind::Custom(_) => self.tail(a).ln(),
        }
    }

    /// Slope moment `x² f'(x)`, the quantity bounded by `ε`.
    pub fn slope_moment(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        if x.abs() < 1e100 {
            x * x * self.slope(x)
        } else {
            (2.0 * x.abs().ln() + self.log_slope(x)).exp()
        }
    }

    /// Residual `g(x) = |x| - x f(x) = |x| (1 - f(|x|))`.
    pub fn residual(&self, x: f64) -> f64 {
        let a = x.abs();
        if a == 0.0 {
            0.0
        } else {
            a * self.tail(a)
        }
    }
}

/// `ln(1 + a²)` without overflowing for huge `a`.
fn ln_1p_sq(a: f64) -> f64 {
    if a < 1e150 {
        (a * a).ln_1p()
    } else {
        2.0 * a.ln()
    }
}

impl fmt::Display for UssfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UssfKind {
    type Err = UssfError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tanh" => Ok(UssfKind::Tanh),
            "atan" | "arctan" | "scaled_arctan" => Ok(UssfKind::ScaledArctan),
            "alg" | "algebraic" | "algebraic_sigmoid" => Ok(UssfKind::AlgebraicSigmoid),
            "erf" | "error_function" => Ok(UssfKind::ErrorFunction),
            _ => Err(UssfError::UnknownKind(s.to_string())),
        }
    }
}

impl Serialize for UssfKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for UssfKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Checked `f(x)`.
pub fn ussf_eval(kind: &UssfKind, x: f64) -> Result<f64, UssfError> {
    if !x.is_finite() {
        return Err(UssfError::NonFinite(x));
    }
    Ok(kind.value(x))
}

/// Checked `f'(x)`.
pub fn ussf_deriv(kind: &UssfKind, x: f64) -> Result<f64, UssfError> {
    if !x.is_finite() {
        return Err(UssfError::NonFinite(x));
    }
    Ok(kind.slope(x))
}

/// `sign(x) |x|^a`. Real-valued for every real `x` and positive `a`.
pub fn signed_power(x: f64, a: f64) -> Result<f64, UssfError> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(UssfError::NonPositiveExponent(a));
    }
    Ok(spow(x, a))
}

/// Unchecked [`signed_power`].
#[inline]
pub fn spow(x: f64, a: f64) -> f64 {
    x.signum() * apow(x, a)
}

/// `|x|^a`, using integer powers when `a` is integral.
#[inline]
pub fn apow(x: f64, a: f64) -> f64 {
    let m = x.abs();
    if a.fract() == 0.0 && a <= 32.0 {
        m.powi(a as i32)
    } else {
        m.powf(a)
    }
}

/// Certified slope-limit and residual bounds for one USSF.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UssfCertificate {
    pub kind: UssfKind,
    /// Supremum of `x² f'(x)`.
    pub epsilon: f64,
    /// Abscissa of the maximum, or `None` when the supremum is only
    /// approached as `x -> ∞`.
    pub epsilon_at: Option<f64>,
    /// Supremum of `|x| - x f(x)`.
    pub m_bound: f64,
    pub grid_span: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Maximum {
    arg: Option<f64>,
    value: f64,
}

/// Log-spaced abscissae in `[lo, hi]`.
fn log_grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let (a, b) = (lo.ln(), hi.ln());
    let step = (b - a) / (n - 1) as f64;
    (0..n).map(move |i| if i + 1 == n { hi } else { (a + step * i as f64).exp() })
}

/// Golden-section search for the maximum of a unimodal function on `[a, b]`.
pub fn golden_section_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, width: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > width {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Coarse log-grid scan on `(0, span]` followed by golden-section refinement.
/// When the scan peaks on the outer edge the search continues outward by
/// decades until the function stops increasing.
fn maximize<F: Fn(f64) -> f64>(f: F, span: f64, label: &str, kind: &UssfKind) -> Result<Maximum, UssfError> {
    let fail = |reason: String| UssfError::Certification {
        kind: kind.name().to_string(),
        reason: format!("{label}: {reason}"),
    };
    let xs: Vec<f64> = log_grid(GRID_FLOOR, span, GRID_POINTS).collect();
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &x) in xs.iter().enumerate() {
        let v = f(x);
        if !v.is_finite() {
            return Err(fail(format!("non-finite value at x = {x}")));
        }
        if v > best_val {
            best = i;
            best_val = v;
        }
    }

    if best + 1 < xs.len() {
        let lo = if best == 0 { 0.0 } else { xs[best - 1] };
        let hi = xs[best + 1];
        let (x, v) = golden_section_max(&f, lo, hi, GOLDEN_BRACKET);
        return Ok(Maximum {
            arg: Some(x),
            value: v.max(best_val),
        });
    }

    let mut x = span;
    let mut prev = best_val;
    while x < CONTINUATION_CEILING {
        x *= 10.0;
        let v = f(x);
        if !v.is_finite() {
            return Err(fail(format!("non-finite value at x = {x}")));
        }
        if v <= prev * (1.0 + 1e-12) {
            if v < prev {
                // Peak lies between the last two decades.
                let (xa, va) = golden_section_max(&f, x / 100.0, x, GOLDEN_BRACKET * x);
                return Ok(Maximum {
                    arg: Some(xa),
                    value: va.max(prev),
                });
            }
            return Ok(Maximum {
                arg: None,
                value: v.max(prev),
            });
        }
        prev = v;
    }
    Err(fail("no maximum bracketed; the function keeps growing".into()))
}

/// Numerically certify `ε = sup x² f'(x)` and `M = sup |x| - x f(x)`.
pub fn certify_epsilon(kind: &UssfKind, grid_span: f64, tolerance: f64) -> Result<UssfCertificate, UssfError> {
    if !(grid_span >= 100.0) || !grid_span.is_finite() {
        return Err(UssfError::InvalidParameter(format!(
            "grid span must be at least 100, got {grid_span}"
        )));
    }
    if !(tolerance > 0.0 && tolerance < 1e-3) {
        return Err(UssfError::InvalidParameter(format!(
            "tolerance must lie in (0, 1e-3), got {tolerance}"
        )));
    }

    // Both functions are even, so the positive half-line suffices.
    let eps = maximize(|x| kind.slope_moment(x), grid_span, "x^2 f'(x)", kind)?;
    let m = maximize(|x| kind.residual(x), grid_span, "|x| - x f(x)", kind)?;

    if !(eps.value > 0.0) {
        return Err(UssfError::Certification {
            kind: kind.name().to_string(),
            reason: "slope moment is not positive".into(),
        });
    }
    if m.value > eps.value + tolerance {
        return Err(UssfError::Certification {
            kind: kind.name().to_string(),
            reason: format!("residual bound {} exceeds epsilon {}", m.value, eps.value),
        });
    }
    Ok(UssfCertificate {
        kind: kind.clone(),
        epsilon: eps.value,
        epsilon_at: eps.arg,
        m_bound: m.value.max(0.0),
        grid_span,
        tolerance,
    })
}

/// Outcome of [`verify_axioms`]. Smoothness can only be probed numerically, so
/// it is reported as agreement between `f'` and central differences of `f`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxiomReport {
    pub smoothness: bool,
    pub oddness: bool,
    pub monotonicity: bool,
    pub range: bool,
    pub saturation: bool,
    pub slope_limit: bool,
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
}

impl AxiomReport {
    pub fn all_pass(&self) -> bool {
        self.smoothness && self.oddness && self.monotonicity && self.range && self.saturation && self.slope_limit
    }
}

/// Symmetric log-spaced grid with `count` points on each side of zero, plus zero.
pub fn symmetric_log_grid(count: usize, span: f64) -> Vec<f64> {
    let pos: Vec<f64> = log_grid(GRID_FLOOR, span, count.max(2)).collect();
    let mut out = Vec::with_capacity(2 * pos.len() + 1);
    out.extend(pos.iter().rev().map(|x| -x));
    out.push(0.0);
    out.extend(pos);
    out
}

pub const ODDNESS_TOL: f64 = 1e-12;
pub const SATURATION_GAP: f64 = 1e-3;
const SLOPE_TOL: f64 = 1e-9;

/// Check the USSF axioms on a symmetric log-spaced grid.
///
/// `sample_count` is the total number of grid points; `span` the half-width.
/// Saturation is judged at `max(span, 10³)` from the exact tail, so it does not
/// depend on `f(x)` rounding to one.
pub fn verify_axioms(kind: &UssfKind, sample_count: usize, span: f64) -> AxiomReport {
    let grid = symmetric_log_grid(sample_count / 2, span);
    let mut failures = Vec::new();

    let mut oddness = true;
    let mut monotonicity = true;
    let mut range = true;
    let mut smoothness = true;
    for &x in &grid {
        let fx = kind.value(x);
        let fm = kind.value(-x);
        if !((fx + fm).abs() < ODDNESS_TOL) && oddness {
            oddness = false;
            failures.push(format!("oddness: |f({x}) + f({})| = {}", -x, (fx + fm).abs()));
        }
        let ls = kind.log_slope(x);
        if !(ls > f64::NEG_INFINITY) && monotonicity {
            monotonicity = false;
            failures.push(format!("monotonicity: f'({x}) is not positive"));
        }
        let in_range = if kind.is_custom() {
            1.0 - fx.abs() > 0.0
        } else {
            kind.log_tail(x).is_finite()
        };
        if (!in_range || !fx.is_finite()) && range {
            range = false;
            failures.push(format!("range: |f({x})| = {} is not below 1", fx.abs()));
        }
        if x.abs() <= 20.0 && smoothness {
            let h = 1e-6 * x.abs().max(1.0);
            let fd = (kind.value(x + h) - kind.value(x - h)) / (2.0 * h);
            let d = kind.slope(x);
            if !((fd - d).abs() <= 1e-6 * d.abs().max(1e-3)) {
                smoothness = false;
                failures.push(format!("smoothness: f'({x}) = {d} but central difference gives {fd}"));
            }
        }
    }

    let sat_at = span.max(1e3);
    let saturation = if kind.is_custom() {
        let gap = 1.0 - kind.value(sat_at).abs();
        let lower = 1.0 + kind.value(-sat_at);
        gap.is_finite() && (0.0..SATURATION_GAP).contains(&gap) && lower < SATURATION_GAP && lower >= 0.0
    } else {
        kind.log_tail(sat_at) < SATURATION_GAP.ln()
    };
    if !saturation {
        failures.push(format!("saturation: f({sat_at}) is not within {SATURATION_GAP} of 1"));
    }

    let (slope_limit, epsilon) = match certify_epsilon(kind, span.max(100.0), 1e-6) {
        Ok(cert) => {
            let bound = cert.epsilon + SLOPE_TOL;
            let ok = grid.iter().all(|&x| kind.slope_moment(x) <= bound);
            if !ok {
                failures.push(format!("slope limit: x^2 f'(x) exceeds certified {}", cert.epsilon));
            }
            (ok, Some(cert.epsilon))
        }
        Err(e) => {
            failures.push(format!("slope limit: {e}"));
            (false, None)
        }
    };

    AxiomReport {
        smoothness,
        oddness,
        monotonicity,
        range,
        saturation,
        slope_limit,
        epsilon,
        failures,
    }
}

/// Run [`verify_axioms`] on a custom function and wrap it as a [`UssfKind`] if
/// every axiom passes.
pub fn admit_custom(custom: CustomUssf) -> Result<UssfKind, UssfError> {
    let kind = UssfKind::Custom(custom);
    let report = verify_axioms(&kind, 10_000, 1e3);
    if report.all_pass() {
        Ok(kind)
    } else {
        Err(UssfError::NotAdmitted(kind.name().to_string(), report.failures.join("; ")))
    }
}
