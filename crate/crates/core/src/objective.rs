//! Concave per-subchannel utilities.
//!
//! Every family is stored in maximization form: MSE-type costs and the
//! amplify-and-forward relay cost are negated so that all solvers maximize
//! `sum_k f_k(p_k)`. Each utility exposes its value, its rate of increase
//! `f'(p)` and the inverse rate `g(mu)` that maps a water level back to a
//! power.
//!
//! The built-in families all have an analytic continuation below `p = 0`
//! down to a pole where the rate diverges. [`Utility::inverse_rate`] returns
//! the signed continued value there, which is what the index-based solvers
//! test against the lower bound.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roots::{bisect_decreasing, decreasing_root, RootOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    LogCapacity,
    InverseMse,
    AfRelay,
    SumLog,
    SumInverseMse,
    ClusterLogCapacity,
    Custom,
}

impl Family {
    pub const BUILT_IN: [Family; 6] = [
        Family::LogCapacity,
        Family::InverseMse,
        Family::AfRelay,
        Family::SumLog,
        Family::SumInverseMse,
        Family::ClusterLogCapacity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::LogCapacity => "log_capacity",
            Family::InverseMse => "inverse_mse",
            Family::AfRelay => "af_relay",
            Family::SumLog => "sum_log",
            Family::SumInverseMse => "sum_inverse_mse",
            Family::ClusterLogCapacity => "cluster_log_capacity",
            Family::Custom => "custom",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A user-supplied utility. `rate` must be the derivative of `eval` in `p`,
/// positive and strictly decreasing on `p >= 0`.
///
/// `cluster_power` is the total power of the enclosing group; utilities that
/// do not depend on it simply ignore the argument.
pub trait CustomUtility: fmt::Debug + Send + Sync {
    fn eval(&self, p: f64, cluster_power: f64) -> f64;
    fn rate(&self, p: f64, cluster_power: f64) -> f64;
}

/// One concave utility `f_k`, tagged by family.
///
/// Field names match the instance-file schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum SubchannelObjective {
    /// `w * ln(b + a p)`
    LogCapacity { w: f64, a: f64, b: f64 },
    /// `-w / (b + a p)`
    InverseMse { w: f64, a: f64, b: f64 },
    /// `-w * ln(1 - a b p / (1 + b p))` with `0 < a < 1`
    AfRelay { w: f64, a: f64, b: f64 },
    /// `sum_j w_j * ln(a c_j + b d_j p)`
    SumLog {
        w: Vec<f64>,
        a: f64,
        b: f64,
        c: Vec<f64>,
        d: Vec<f64>,
    },
    /// `-sum_j w_j / (a c_j + b d_j p)`
    SumInverseMse {
        w: Vec<f64>,
        a: f64,
        b: f64,
        c: Vec<f64>,
        d: Vec<f64>,
    },
    /// `w * ln(1 + a p / (sigma_e2 * P_cluster + sigma_n2))`
    ClusterLogCapacity {
        w: f64,
        a: f64,
        sigma_e2: f64,
        sigma_n2: f64,
    },
    #[serde(skip)]
    Custom(Arc<dyn CustomUtility>),
}

impl PartialEq for SubchannelObjective {
    fn eq(&self, other: &Self) -> bool {
        use SubchannelObjective::*;
        match (self, other) {
            (LogCapacity { w, a, b }, LogCapacity { w: w2, a: a2, b: b2 })
            | (InverseMse { w, a, b }, InverseMse { w: w2, a: a2, b: b2 })
            | (AfRelay { w, a, b }, AfRelay { w: w2, a: a2, b: b2 }) => w == w2 && a == a2 && b == b2,
            (
                SumLog { w, a, b, c, d },
                SumLog {
                    w: w2,
                    a: a2,
                    b: b2,
                    c: c2,
                    d: d2,
                },
            )
            | (
                SumInverseMse { w, a, b, c, d },
                SumInverseMse {
                    w: w2,
                    a: a2,
                    b: b2,
                    c: c2,
                    d: d2,
                },
            ) => w == w2 && a == a2 && b == b2 && c == c2 && d == d2,
            (
                ClusterLogCapacity { w, a, sigma_e2, sigma_n2 },
                ClusterLogCapacity {
                    w: w2,
                    a: a2,
                    sigma_e2: e2,
                    sigma_n2: n2,
                },
            ) => w == w2 && a == a2 && sigma_e2 == e2 && sigma_n2 == n2,
            (Custom(x), Custom(y)) => Arc::ptr_eq(x, y),
            _ => false,
        }
    }
}

/// Result of inverting the rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Demand {
    /// Signed power; negative values come from the analytic continuation
    /// and mean the water level is above `f'(0)`.
    Power(f64),
    /// The water level exceeds `f'(0)` and the family has no continuation
    /// below zero. Solvers treat this as "below the lower bound".
    BelowDomain,
}

impl Demand {
    /// The signed power, with `BelowDomain` mapped to `-inf`.
    pub fn signed(self) -> f64 {
        match self {
            Demand::Power(p) => p,
            Demand::BelowDomain => f64::NEG_INFINITY,
        }
    }
}

/// Families whose water level has a closed form over a homogeneous set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClosedForm {
    /// `g(mu) = w / mu - b / a`
    Log { w: f64, b_over_a: f64 },
    /// `g(mu) = sqrt(w / (a mu)) - b / a`
    Mse { sqrt_w_over_a: f64, b_over_a: f64 },
}

/// The solver-facing view of a concave utility.
pub trait Utility: fmt::Debug {
    fn family(&self) -> Family;

    /// `f(p)` on the admissible domain `p >= 0` (or `p > 0` when the rate
    /// diverges at zero).
    fn eval(&self, p: f64) -> Result<f64>;

    /// `f'(p)`; `+inf` at `p = 0` when the family's pole sits at zero.
    fn rate(&self, p: f64) -> Result<f64>;

    /// `g(mu)`, the power at which the rate equals `mu`.
    fn inverse_rate(&self, mu: f64) -> Result<Demand>;

    /// `f(p)` on the continued domain (below zero down to the pole).
    fn eval_extended(&self, p: f64) -> Option<f64>;

    /// `f''(p)` where known analytically.
    fn rate_slope(&self, p: f64) -> Option<f64>;

    fn closed_form(&self) -> Option<ClosedForm>;

    /// `lim_{p -> inf} f(p)`.
    fn supremum(&self) -> f64;
}

impl<U: Utility + ?Sized> Utility for &U {
    fn family(&self) -> Family {
        (**self).family()
    }
    fn eval(&self, p: f64) -> Result<f64> {
        (**self).eval(p)
    }
    fn rate(&self, p: f64) -> Result<f64> {
        (**self).rate(p)
    }
    fn inverse_rate(&self, mu: f64) -> Result<Demand> {
        (**self).inverse_rate(mu)
    }
    fn eval_extended(&self, p: f64) -> Option<f64> {
        (**self).eval_extended(p)
    }
    fn rate_slope(&self, p: f64) -> Option<f64> {
        (**self).rate_slope(p)
    }
    fn closed_form(&self) -> Option<ClosedForm> {
        (**self).closed_form()
    }
    fn supremum(&self) -> f64 {
        (**self).supremum()
    }
}

impl SubchannelObjective {
    pub fn log_capacity(w: f64, a: f64, b: f64) -> Result<Self> {
        let o = Self::LogCapacity { w, a, b };
        o.validate()?;
        Ok(o)
    }

    pub fn inverse_mse(w: f64, a: f64, b: f64) -> Result<Self> {
        let o = Self::InverseMse { w, a, b };
        o.validate()?;
        Ok(o)
    }

    pub fn af_relay(w: f64, a: f64, b: f64) -> Result<Self> {
        let o = Self::AfRelay { w, a, b };
        o.validate()?;
        Ok(o)
    }

    pub fn sum_log(w: Vec<f64>, a: f64, b: f64, c: Vec<f64>, d: Vec<f64>) -> Result<Self> {
        let o = Self::SumLog { w, a, b, c, d };
        o.validate()?;
        Ok(o)
    }

    pub fn sum_inverse_mse(w: Vec<f64>, a: f64, b: f64, c: Vec<f64>, d: Vec<f64>) -> Result<Self> {
        let o = Self::SumInverseMse { w, a, b, c, d };
        o.validate()?;
        Ok(o)
    }

    pub fn cluster_log_capacity(w: f64, a: f64, sigma_e2: f64, sigma_n2: f64) -> Result<Self> {
        let o = Self::ClusterLogCapacity { w, a, sigma_e2, sigma_n2 };
        o.validate()?;
        Ok(o)
    }

    pub fn custom(utility: impl CustomUtility + 'static) -> Self {
        Self::Custom(Arc::new(utility))
    }

    pub fn family(&self) -> Family {
        match self {
            Self::LogCapacity { .. } => Family::LogCapacity,
            Self::InverseMse { .. } => Family::InverseMse,
            Self::AfRelay { .. } => Family::AfRelay,
            Self::SumLog { .. } => Family::SumLog,
            Self::SumInverseMse { .. } => Family::SumInverseMse,
            Self::ClusterLogCapacity { .. } => Family::ClusterLogCapacity,
            Self::Custom(_) => Family::Custom,
        }
    }

    /// Whether the family is defined in terms of its group's total power.
    pub fn is_cluster_aware(&self) -> bool {
        matches!(self, Self::ClusterLogCapacity { .. })
    }

    /// Checks parameter ranges. Called by every problem constructor.
    pub fn validate(&self) -> Result<()> {
        let family = self.family();
        let bad = |reason: &str| {
            Err(Error::InvalidParameter {
                family,
                reason: reason.to_string(),
            })
        };
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match self {
            Self::LogCapacity { w, a, b } | Self::InverseMse { w, a, b } => {
                if !finite(&[*w, *a, *b]) {
                    return bad("parameters must be finite");
                }
                if *w <= 0.0 || *a <= 0.0 {
                    return bad("w and a must be positive");
                }
                if *b < 0.0 {
                    return bad("b must be nonnegative");
                }
            }
            Self::AfRelay { w, a, b } => {
                if !finite(&[*w, *a, *b]) {
                    return bad("parameters must be finite");
                }
                if *w <= 0.0 || *b <= 0.0 {
                    return bad("w and b must be positive");
                }
                if !(*a > 0.0 && *a < 1.0) {
                    return bad("a must lie strictly inside (0, 1)");
                }
            }
            Self::SumLog { w, a, b, c, d } | Self::SumInverseMse { w, a, b, c, d } => {
                if w.is_empty() || w.len() != c.len() || w.len() != d.len() {
                    return bad("w, c and d must be nonempty and of equal length");
                }
                if !finite(w) || !finite(c) || !finite(d) || !finite(&[*a, *b]) {
                    return bad("parameters must be finite");
                }
                if *a < 0.0 || *b < 0.0 || w.iter().chain(c).chain(d).any(|x| *x < 0.0) {
                    return bad("parameters must be nonnegative");
                }
                let mut curved = false;
                for j in 0..w.len() {
                    if w[j] == 0.0 {
                        continue;
                    }
                    let slope = b * d[j];
                    if slope > 0.0 {
                        curved = true;
                    } else if a * c[j] <= 0.0 {
                        return bad("a term with a*c_j = b*d_j = 0 has no finite value");
                    }
                }
                if !curved {
                    return bad("at least one term needs w_j * b * d_j > 0");
                }
            }
            Self::ClusterLogCapacity { w, a, sigma_e2, sigma_n2 } => {
                if !finite(&[*w, *a, *sigma_e2, *sigma_n2]) {
                    return bad("parameters must be finite");
                }
                if *w <= 0.0 || *a <= 0.0 || *sigma_n2 <= 0.0 {
                    return bad("w, a and sigma_n2 must be positive");
                }
                if *sigma_e2 < 0.0 {
                    return bad("sigma_e2 must be nonnegative");
                }
            }
            Self::Custom(_) => {}
        }
        Ok(())
    }

    /// Views the utility with its group's total power fixed at `cluster_power`.
    pub fn at_cluster_power(&self, cluster_power: f64) -> ClusterView<'_> {
        ClusterView {
            objective: self,
            cluster_power,
        }
    }

    /// Partial derivative of `f(p, P_cluster)` with respect to the cluster
    /// power at fixed `p`. Zero for families that ignore the cluster power.
    pub fn cluster_partial(&self, p: f64, cluster_power: f64) -> f64 {
        match self {
            Self::ClusterLogCapacity { w, a, sigma_e2, sigma_n2 } => {
                let s = sigma_e2 * cluster_power + sigma_n2;
                -w * sigma_e2 * a * p / (s * (s + a * p))
            }
            Self::Custom(u) => {
                let h = 1e-6 * (1.0 + cluster_power);
                if cluster_power >= h {
                    (u.eval(p, cluster_power + h) - u.eval(p, cluster_power - h)) / (2.0 * h)
                } else {
                    (u.eval(p, cluster_power + h) - u.eval(p, cluster_power)) / h
                }
            }
            _ => 0.0,
        }
    }

    fn kernel(&self, cluster_power: f64) -> Kernel<'_> {
        match self {
            Self::LogCapacity { w, a, b } => Kernel::Log {
                w: *w,
                a: *a,
                b: *b,
                offset: 0.0,
            },
            Self::InverseMse { w, a, b } => Kernel::Mse { w: *w, a: *a, b: *b },
            Self::AfRelay { w, a, b } => Kernel::Af { w: *w, a: *a, b: *b },
            Self::SumLog { w, a, b, c, d } => Kernel::SumLog(Terms { w, a: *a, b: *b, c, d }),
            Self::SumInverseMse { w, a, b, c, d } => Kernel::SumMse(Terms { w, a: *a, b: *b, c, d }),
            Self::ClusterLogCapacity { w, a, sigma_e2, sigma_n2 } => {
                let s = sigma_e2 * cluster_power + sigma_n2;
                Kernel::Log {
                    w: *w,
                    a: *a,
                    b: s,
                    offset: -w * s.ln(),
                }
            }
            Self::Custom(u) => Kernel::Custom {
                utility: u.as_ref(),
                cluster_power,
            },
        }
    }
}

/// A utility with its cluster power bound, usable wherever a [`Utility`] is.
#[derive(Debug, Clone, Copy)]
pub struct ClusterView<'a> {
    pub objective: &'a SubchannelObjective,
    pub cluster_power: f64,
}

macro_rules! delegate_to_kernel {
    ($ty:ty, $obj:ident, $pc:expr) => {
        impl Utility for $ty {
            fn family(&self) -> Family {
                let $obj = self;
                $obj.kernel_family()
            }
            fn eval(&self, p: f64) -> Result<f64> {
                let $obj = self;
                $obj.kernel_at($pc).eval(p)
            }
            fn rate(&self, p: f64) -> Result<f64> {
                let $obj = self;
                $obj.kernel_at($pc).rate(p)
            }
            fn inverse_rate(&self, mu: f64) -> Result<Demand> {
                let $obj = self;
                $obj.kernel_at($pc).inverse_rate(mu)
            }
            fn eval_extended(&self, p: f64) -> Option<f64> {
                let $obj = self;
                $obj.kernel_at($pc).eval_extended(p)
            }
            fn rate_slope(&self, p: f64) -> Option<f64> {
                let $obj = self;
                $obj.kernel_at($pc).slope(p)
            }
            fn closed_form(&self) -> Option<ClosedForm> {
                let $obj = self;
                $obj.kernel_at($pc).closed_form()
            }
            fn supremum(&self) -> f64 {
                let $obj = self;
                $obj.kernel_at($pc).supremum()
            }
        }
    };
}

trait KernelSource {
    fn kernel_at(&self, pc: f64) -> Kernel<'_>;
    fn kernel_family(&self) -> Family;
}

impl KernelSource for SubchannelObjective {
    fn kernel_at(&self, pc: f64) -> Kernel<'_> {
        self.kernel(pc)
    }
    fn kernel_family(&self) -> Family {
        self.family()
    }
}

impl KernelSource for ClusterView<'_> {
    fn kernel_at(&self, pc: f64) -> Kernel<'_> {
        self.objective.kernel(pc)
    }
    fn kernel_family(&self) -> Family {
        self.objective.family()
    }
}

// Used directly, cluster-aware families see a zero cluster power.
delegate_to_kernel!(SubchannelObjective, o, 0.0);
delegate_to_kernel!(ClusterView<'_>, o, o.cluster_power);

/// Generic inverse of a strictly decreasing rate on `[0, inf)` by bisection.
///
/// Returns `BelowDomain` when `mu` exceeds the rate at zero. The bracket
/// `[0, p_hi]` doubles `p_hi` until the rate drops below `mu`, and bisection
/// stops at width `1e-12 * (1 + p)` or 200 halvings.
pub fn bisect_inverse_rate<U: Utility + ?Sized>(utility: &U, mu: f64) -> Result<Demand> {
    let family = utility.family();
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::Domain { family, value: mu });
    }
    let r0 = utility.rate(0.0)?;
    if r0 < mu {
        return Ok(Demand::BelowDomain);
    }
    if r0 == mu {
        return Ok(Demand::Power(0.0));
    }
    let hi = grow_bracket(|p| utility.rate(p).map(|r| r < mu), family, mu)?;
    let mut failure = None;
    let root = bisect_decreasing(
        |p| match utility.rate(p) {
            Ok(r) => r - mu,
            Err(e) => {
                failure = Some(e);
                -1.0
            }
        },
        0.0,
        hi,
        1e-12,
        200,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(Demand::Power(root.x)),
    }
}

fn grow_bracket<F>(mut below: F, family: Family, mu: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<bool>,
{
    let mut hi = 1.0;
    while !below(hi)? {
        hi *= 2.0;
        if hi > 2f64.powi(60) {
            return Err(Error::InversionFailure { family, mu });
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, Copy)]
struct Terms<'a> {
    w: &'a [f64],
    a: f64,
    b: f64,
    c: &'a [f64],
    d: &'a [f64],
}

impl Terms<'_> {
    /// `(w_j, intercept a c_j, slope b d_j)` for every term with `w_j > 0`.
    fn iter(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.w.len())
            .filter(|&j| self.w[j] > 0.0)
            .map(|j| (self.w[j], self.a * self.c[j], self.b * self.d[j]))
    }

    fn pole(&self) -> f64 {
        self.iter()
            .filter(|&(_, _, s)| s > 0.0)
            .map(|(_, i, s)| -i / s)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Copy)]
enum Kernel<'a> {
    Log { w: f64, a: f64, b: f64, offset: f64 },
    Mse { w: f64, a: f64, b: f64 },
    Af { w: f64, a: f64, b: f64 },
    SumLog(Terms<'a>),
    SumMse(Terms<'a>),
    Custom { utility: &'a dyn CustomUtility, cluster_power: f64 },
}

impl Kernel<'_> {
    fn family(&self) -> Family {
        match self {
            Kernel::Log { .. } => Family::LogCapacity,
            Kernel::Mse { .. } => Family::InverseMse,
            Kernel::Af { .. } => Family::AfRelay,
            Kernel::SumLog(_) => Family::SumLog,
            Kernel::SumMse(_) => Family::SumInverseMse,
            Kernel::Custom { .. } => Family::Custom,
        }
    }

    /// Lower end of the continued domain; the rate diverges there.
    fn pole(&self) -> f64 {
        match *self {
            Kernel::Log { a, b, .. } | Kernel::Mse { a, b, .. } => -b / a,
            Kernel::Af { b, .. } => -1.0 / b,
            Kernel::SumLog(t) | Kernel::SumMse(t) => t.pole(),
            Kernel::Custom { .. } => 0.0,
        }
    }

    fn is_custom(&self) -> bool {
        matches!(self, Kernel::Custom { .. })
    }

    fn domain_error(&self, value: f64) -> Error {
        Error::Domain {
            family: self.family(),
            value,
        }
    }

    fn eval(&self, p: f64) -> Result<f64> {
        if !(p >= 0.0) || !p.is_finite() {
            return Err(self.domain_error(p));
        }
        if let Kernel::Custom { utility, cluster_power } = *self {
            let v = utility.eval(p, cluster_power);
            return if v.is_finite() { Ok(v) } else { Err(self.domain_error(p)) };
        }
        if p <= self.pole() {
            return Err(self.domain_error(p));
        }
        Ok(self.eval_ext(p))
    }

    fn rate(&self, p: f64) -> Result<f64> {
        if !(p >= 0.0) || !p.is_finite() {
            return Err(self.domain_error(p));
        }
        if let Kernel::Custom { utility, cluster_power } = *self {
            let r = utility.rate(p, cluster_power);
            return if r.is_finite() && r > 0.0 {
                Ok(r)
            } else {
                Err(self.domain_error(p))
            };
        }
        if p <= self.pole() {
            return Ok(f64::INFINITY);
        }
        Ok(self.rate_ext(p))
    }

    fn eval_extended(&self, p: f64) -> Option<f64> {
        if self.is_custom() {
            return self.eval(p).ok();
        }
        (p > self.pole() && p.is_finite()).then(|| self.eval_ext(p))
    }

    /// Closed-form value on the continued domain; caller checks `p > pole`.
    fn eval_ext(&self, p: f64) -> f64 {
        match *self {
            Kernel::Log { w, a, b, offset } => w * (b + a * p).ln() + offset,
            Kernel::Mse { w, a, b } => -w / (b + a * p),
            Kernel::Af { w, a, b } => w * (1.0 + b * p).ln() - w * (1.0 + (1.0 - a) * b * p).ln(),
            Kernel::SumLog(t) => t.iter().map(|(w, i, s)| w * (i + s * p).ln()).sum(),
            Kernel::SumMse(t) => -t.iter().map(|(w, i, s)| w / (i + s * p)).sum::<f64>(),
            Kernel::Custom { utility, cluster_power } => utility.eval(p, cluster_power),
        }
    }

    fn rate_ext(&self, p: f64) -> f64 {
        match *self {
            Kernel::Log { w, a, b, .. } => w * a / (b + a * p),
            Kernel::Mse { w, a, b } => {
                let s = b + a * p;
                w * a / (s * s)
            }
            Kernel::Af { w, a, b } => w * a * b / ((1.0 + b * p) * (1.0 + (1.0 - a) * b * p)),
            Kernel::SumLog(t) => t.iter().map(|(w, i, s)| w * s / (i + s * p)).sum(),
            Kernel::SumMse(t) => t
                .iter()
                .map(|(w, i, s)| {
                    let q = i + s * p;
                    w * s / (q * q)
                })
                .sum(),
            Kernel::Custom { utility, cluster_power } => utility.rate(p, cluster_power),
        }
    }

    fn slope(&self, p: f64) -> Option<f64> {
        if self.is_custom() || !(p > self.pole()) {
            return None;
        }
        Some(match *self {
            Kernel::Log { w, a, b, .. } => {
                let s = b + a * p;
                -w * a * a / (s * s)
            }
            Kernel::Mse { w, a, b } => {
                let s = b + a * p;
                -2.0 * w * a * a / (s * s * s)
            }
            Kernel::Af { w, a, b } => {
                let x = b * p;
                let c = 1.0 - a;
                let den = (1.0 + x) * (1.0 + c * x);
                -w * a * b * b * ((1.0 + c * x) + c * (1.0 + x)) / (den * den)
            }
            Kernel::SumLog(t) => -t
                .iter()
                .map(|(w, i, s)| {
                    let q = i + s * p;
                    w * s * s / (q * q)
                })
                .sum::<f64>(),
            Kernel::SumMse(t) => -t
                .iter()
                .map(|(w, i, s)| {
                    let q = i + s * p;
                    2.0 * w * s * s / (q * q * q)
                })
                .sum::<f64>(),
            Kernel::Custom { .. } => unreachable!(),
        })
    }

    fn closed_form(&self) -> Option<ClosedForm> {
        match *self {
            Kernel::Log { w, a, b, .. } => Some(ClosedForm::Log { w, b_over_a: b / a }),
            Kernel::Mse { w, a, b } => Some(ClosedForm::Mse {
                sqrt_w_over_a: (w / a).sqrt(),
                b_over_a: b / a,
            }),
            _ => None,
        }
    }

    fn supremum(&self) -> f64 {
        match *self {
            Kernel::Log { .. } | Kernel::SumLog(_) | Kernel::Custom { .. } => f64::INFINITY,
            Kernel::Mse { .. } => 0.0,
            Kernel::Af { w, a, .. } => -w * (1.0 - a).ln(),
            Kernel::SumMse(t) => -t.iter().filter(|&(_, _, s)| s == 0.0).map(|(w, i, _)| w / i).sum::<f64>(),
        }
    }

    fn inverse_rate(&self, mu: f64) -> Result<Demand> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(self.domain_error(mu));
        }
        Ok(match *self {
            Kernel::Log { w, a, b, .. } => Demand::Power(w / mu - b / a),
            Kernel::Mse { w, a, b } => Demand::Power((w / (a * mu)).sqrt() - b / a),
            Kernel::Af { w, a, b } => {
                let disc = (a * a + 4.0 * w * (1.0 - a) * a * b / mu).sqrt();
                Demand::Power((disc - (2.0 - a)) / (2.0 * (1.0 - a) * b))
            }
            Kernel::SumLog(_) | Kernel::SumMse(_) => Demand::Power(self.numeric_inverse(mu)?),
            Kernel::Custom { utility, cluster_power } => {
                let adapter = CustomAdapter { utility, cluster_power };
                bisect_inverse_rate(&adapter, mu)?
            }
        })
    }

    /// Safeguarded Newton on the continued rate over `(pole, inf)`.
    fn numeric_inverse(&self, mu: f64) -> Result<f64> {
        let pole = self.pole();
        let (lo, hi) = if pole < 0.0 && self.rate_ext(0.0) < mu {
            (pole, 0.0)
        } else {
            let hi = grow_bracket(|p| Ok(self.rate_ext(p) < mu), self.family(), mu)?;
            (pole.max(0.0), hi)
        };
        let root = decreasing_root(
            |p| (self.rate_ext(p) - mu, self.slope(p)),
            lo,
            hi,
            hi,
            RootOptions::default(),
        );
        Ok(root.x)
    }
}

/// Lets the generic bisection run on a custom kernel.
#[derive(Debug)]
struct CustomAdapter<'a> {
    utility: &'a dyn CustomUtility,
    cluster_power: f64,
}

impl Utility for CustomAdapter<'_> {
    fn family(&self) -> Family {
        Family::Custom
    }
    fn eval(&self, p: f64) -> Result<f64> {
        Kernel::Custom {
            utility: self.utility,
            cluster_power: self.cluster_power,
        }
        .eval(p)
    }
    fn rate(&self, p: f64) -> Result<f64> {
        Kernel::Custom {
            utility: self.utility,
            cluster_power: self.cluster_power,
        }
        .rate(p)
    }
    fn inverse_rate(&self, mu: f64) -> Result<Demand> {
        bisect_inverse_rate(self, mu)
    }
    fn eval_extended(&self, p: f64) -> Option<f64> {
        self.eval(p).ok()
    }
    fn rate_slope(&self, _: f64) -> Option<f64> {
        None
    }
    fn closed_form(&self) -> Option<ClosedForm> {
        None
    }
    fn supremum(&self) -> f64 {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_log() -> SubchannelObjective {
        SubchannelObjective::log_capacity(1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn eval_examples() {
        assert!((unit_log().eval(1.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        let mse = SubchannelObjective::inverse_mse(1.0, 1.0, 1.0).unwrap();
        assert_eq!(mse.eval(0.0).unwrap(), -1.0);
        let af = SubchannelObjective::af_relay(1.0, 0.5, 1.0).unwrap();
        // independent scalar route: -ln(1 - a b p / (1 + b p)) at a = 0.5, b = p = 1
        let direct = -(1.0f64 - 0.5 * 1.0 * 1.0 / (1.0 + 1.0)).ln();
        assert!((af.eval(1.0).unwrap() - direct).abs() < 1e-15);
        assert!((direct - 0.2877).abs() < 1e-4);
    }

    #[test]
    fn rate_examples() {
        assert_eq!(unit_log().rate(1.0).unwrap(), 0.5);
        let mse = SubchannelObjective::inverse_mse(1.0, 1.0, 1.0).unwrap();
        assert_eq!(mse.rate(0.0).unwrap(), 1.0);
    }

    #[test]
    fn inverse_rate_examples() {
        assert_eq!(unit_log().inverse_rate(0.5).unwrap(), Demand::Power(1.0));
        let mse = SubchannelObjective::inverse_mse(1.0, 1.0, 1.0).unwrap();
        assert_eq!(mse.inverse_rate(1.0).unwrap(), Demand::Power(0.0));
        let sum = SubchannelObjective::sum_log(vec![1.0, 1.0], 1.0, 1.0, vec![1.0, 2.0], vec![1.0, 1.0]).unwrap();
        let mu = sum.rate(0.9).unwrap();
        let p = sum.inverse_rate(mu).unwrap().signed();
        assert!((p - 0.9).abs() < 1e-8);
    }

    #[test]
    fn extrapolated_demand_is_signed() {
        let o = SubchannelObjective::log_capacity(1.0, 1.0, 3.0).unwrap();
        // rate(0) = 1/3; a higher level gives a negative continued power
        assert_eq!(o.inverse_rate(0.5).unwrap(), Demand::Power(-1.0));
        let s = SubchannelObjective::sum_inverse_mse(vec![1.0], 1.0, 1.0, vec![2.0], vec![1.0]).unwrap();
        let r0 = s.rate(0.0).unwrap();
        let p = s.inverse_rate(2.0 * r0).unwrap().signed();
        assert!(p < 0.0 && p > -2.0);
        assert!((s.eval_extended(p).is_some()));
    }

    #[test]
    fn zero_intercept_is_open_at_zero() {
        let o = SubchannelObjective::log_capacity(1.0, 2.0, 0.0).unwrap();
        assert!(matches!(o.eval(0.0), Err(Error::Domain { .. })));
        assert_eq!(o.rate(0.0).unwrap(), f64::INFINITY);
        assert!(o.inverse_rate(1e6).unwrap().signed() > 0.0);
    }

    #[test]
    fn negative_power_is_a_domain_error() {
        assert!(matches!(unit_log().eval(-0.1), Err(Error::Domain { .. })));
        assert!(matches!(unit_log().rate(f64::NAN), Err(Error::Domain { .. })));
        assert!(matches!(unit_log().inverse_rate(0.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(SubchannelObjective::af_relay(1.0, 1.0, 1.0).is_err());
        assert!(SubchannelObjective::af_relay(1.0, 0.0, 1.0).is_err());
        assert!(SubchannelObjective::log_capacity(1.0, 0.0, 1.0).is_err());
        assert!(SubchannelObjective::inverse_mse(f64::NAN, 1.0, 1.0).is_err());
        assert!(SubchannelObjective::sum_log(vec![1.0], 1.0, 1.0, vec![1.0, 2.0], vec![1.0]).is_err());
        assert!(SubchannelObjective::sum_log(vec![1.0], 1.0, 0.0, vec![1.0], vec![1.0]).is_err());
        assert!(SubchannelObjective::cluster_log_capacity(1.0, 1.0, 0.1, 0.0).is_err());
    }

    #[test]
    fn cluster_view_matches_shifted_log_capacity() {
        let o = SubchannelObjective::cluster_log_capacity(2.0, 3.0, 0.5, 1.0).unwrap();
        let pc = 4.0;
        let s = 0.5 * pc + 1.0;
        let v = o.at_cluster_power(pc);
        let p = 0.7;
        let expected = 2.0 * (1.0 + 3.0 * p / s).ln();
        assert!((v.eval(p).unwrap() - expected).abs() < 1e-14);
        assert!((v.rate(p).unwrap() - 2.0 * 3.0 / (s + 3.0 * p)).abs() < 1e-14);
        // partial in the cluster power against a central difference
        let h = 1e-6;
        let fd = (o.at_cluster_power(pc + h).eval(p).unwrap() - o.at_cluster_power(pc - h).eval(p).unwrap()) / (2.0 * h);
        assert!((o.cluster_partial(p, pc) - fd).abs() < 1e-8);
    }

    #[derive(Debug)]
    struct Sqrt;
    impl CustomUtility for Sqrt {
        fn eval(&self, p: f64, _: f64) -> f64 {
            (1.0 + p).sqrt()
        }
        fn rate(&self, p: f64, _: f64) -> f64 {
            0.5 / (1.0 + p).sqrt()
        }
    }

    #[test]
    fn custom_family_uses_bisection_and_marker() {
        let o = SubchannelObjective::custom(Sqrt);
        let p = o.inverse_rate(o.rate(3.0).unwrap()).unwrap().signed();
        assert!((p - 3.0).abs() < 1e-10);
        assert_eq!(o.inverse_rate(0.6).unwrap(), Demand::BelowDomain);
        assert!(o.closed_form().is_none());
        assert_eq!(o, o.clone());
    }

    #[test]
    fn serde_names_follow_schema() {
        let json = serde_json::to_string(&unit_log()).unwrap();
        assert_eq!(json, r#"{"family":"log_capacity","w":1.0,"a":1.0,"b":1.0}"#);
        let back: SubchannelObjective = serde_json::from_str(&json).unwrap();
        assert_eq!(back, unit_log());
        let unknown = r#"{"family":"log_capacity","w":1.0,"a":1.0,"b":1.0,"z":2}"#;
        assert!(serde_json::from_str::<SubchannelObjective>(unknown).is_err());
        let bad_family = r#"{"family":"log_capacityy","w":1.0,"a":1.0,"b":1.0}"#;
        assert!(serde_json::from_str::<SubchannelObjective>(bad_family).is_err());
    }
}
