//! Parametric univariate margins.
//!
//! Parameter vectors are ordered as follows:
//!
//! | family           | params                                  |
//! |------------------|-----------------------------------------|
//! | `normal`         | mean, sd                                |
//! | `lognormal`      | meanlog, sdlog                          |
//! | `logistic`       | location, scale                         |
//! | `loglogistic`    | shape, rate (scale = 1/rate)            |
//! | `gamma`          | shape, rate                             |
//! | `exponential`    | rate                                    |
//! | `cauchy`         | location, scale                         |
//! | `student_t`      | location, scale, df                     |
//! | `skew_normal`    | mean, sd, xi                            |
//! | `skew_student_t` | mean, sd, df, xi                        |
//!
//! The two skewed families use the Fernandez–Steel construction with the
//! mean/sd standardization of the R package `fGarch` (`snorm`, `sstd`): the
//! first two parameters are the mean and standard deviation of the
//! distribution and `xi > 0` is the scale factor between the two half-densities.

use crate::error::{Error, Result};
use crate::numeric::{self, nelder_mead, norm_cdf, norm_ln_pdf, norm_quantile, t_cdf, t_ln_pdf, t_quantile};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::{gamma_lr, ln_gamma};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

pub const DF_MIN: f64 = 2.05;
pub const DF_MAX: f64 = 300.0;
const XI_MIN: f64 = 0.02;
const XI_MAX: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalFamily {
    Normal,
    Lognormal,
    Logistic,
    Loglogistic,
    Gamma,
    Exponential,
    Cauchy,
    StudentT,
    SkewNormal,
    SkewStudentT,
}

impl MarginalFamily {
    pub const ALL: [MarginalFamily; 10] = [
        MarginalFamily::Normal,
        MarginalFamily::Lognormal,
        MarginalFamily::Logistic,
        MarginalFamily::Loglogistic,
        MarginalFamily::Gamma,
        MarginalFamily::Exponential,
        MarginalFamily::Cauchy,
        MarginalFamily::StudentT,
        MarginalFamily::SkewNormal,
        MarginalFamily::SkewStudentT,
    ];

    pub fn parameter_count(self) -> usize {
        match self {
            MarginalFamily::Exponential => 1,
            MarginalFamily::StudentT | MarginalFamily::SkewNormal => 3,
            MarginalFamily::SkewStudentT => 4,
            _ => 2,
        }
    }

    /// True for families supported on the positive half-line.
    pub fn positive_support(self) -> bool {
        matches!(
            self,
            MarginalFamily::Lognormal
                | MarginalFamily::Loglogistic
                | MarginalFamily::Gamma
                | MarginalFamily::Exponential
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            MarginalFamily::Normal => "normal",
            MarginalFamily::Lognormal => "lognormal",
            MarginalFamily::Logistic => "logistic",
            MarginalFamily::Loglogistic => "loglogistic",
            MarginalFamily::Gamma => "gamma",
            MarginalFamily::Exponential => "exponential",
            MarginalFamily::Cauchy => "cauchy",
            MarginalFamily::StudentT => "student_t",
            MarginalFamily::SkewNormal => "skew_normal",
            MarginalFamily::SkewStudentT => "skew_student_t",
        }
    }
}

impl fmt::Display for MarginalFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MarginalFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MarginalFamily::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown marginal family `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalModel {
    pub family: MarginalFamily,
    pub params: Vec<f64>,
}

/// Skewed distribution built from a symmetric unit-variance base density.
#[derive(Debug, Clone, Copy)]
struct FernandezSteel {
    mean: f64,
    sd: f64,
    xi: f64,
    /// location shift of the unstandardized skewed variable
    mu: f64,
    /// its standard deviation
    sigma: f64,
    ln_g: f64,
    base: Base,
}

#[derive(Debug, Clone, Copy)]
enum Base {
    Normal,
    /// Student t rescaled to unit variance; `scale = sqrt(df / (df - 2))`.
    UnitT { df: f64, scale: f64 },
}

impl Base {
    fn ln_pdf(self, z: f64) -> f64 {
        match self {
            Base::Normal => norm_ln_pdf(z),
            Base::UnitT { df, scale } => t_ln_pdf(z * scale, df) + scale.ln(),
        }
    }

    fn cdf(self, z: f64) -> f64 {
        match self {
            Base::Normal => norm_cdf(z),
            Base::UnitT { df, scale } => t_cdf(z * scale, df),
        }
    }

    fn quantile(self, p: f64) -> f64 {
        match self {
            Base::Normal => norm_quantile(p),
            Base::UnitT { df, scale } => t_quantile(p, df) / scale,
        }
    }

    /// `E|Z|` for the unit-variance base.
    fn abs_moment(self) -> f64 {
        match self {
            Base::Normal => (2.0 / PI).sqrt(),
            Base::UnitT { df, .. } => {
                2.0 * (df - 2.0).sqrt() / ((df - 1.0) * ln_beta(0.5, 0.5 * df).exp())
            }
        }
    }
}

impl FernandezSteel {
    fn new(mean: f64, sd: f64, xi: f64, base: Base) -> Self {
        let m1 = base.abs_moment();
        let mu = m1 * (xi - 1.0 / xi);
        let sigma = ((1.0 - m1 * m1) * (xi * xi + 1.0 / (xi * xi)) + 2.0 * m1 * m1 - 1.0).sqrt();
        let ln_g = (2.0 / (xi + 1.0 / xi)).ln();
        FernandezSteel { mean, sd, xi, mu, sigma, ln_g, base }
    }

    fn standardize(&self, x: f64) -> f64 {
        (x - self.mean) / self.sd * self.sigma + self.mu
    }

    fn ln_pdf(&self, x: f64) -> f64 {
        let y = self.standardize(x);
        let arg = if y < 0.0 { y * self.xi } else { y / self.xi };
        self.ln_g + self.base.ln_pdf(arg) + self.sigma.ln() - self.sd.ln()
    }

    fn cdf(&self, x: f64) -> f64 {
        let y = self.standardize(x);
        let g = self.ln_g.exp();
        if y < 0.0 {
            g / self.xi * self.base.cdf(y * self.xi)
        } else {
            1.0 - g * self.xi * self.base.cdf(-y / self.xi)
        }
    }

    fn quantile(&self, u: f64) -> f64 {
        let g = self.ln_g.exp();
        let split = 1.0 / (1.0 + self.xi * self.xi);
        let y = if u < split {
            self.base.quantile(u * self.xi / g) / self.xi
        } else {
            -self.xi * self.base.quantile((1.0 - u) / (g * self.xi))
        };
        self.mean + self.sd * (y - self.mu) / self.sigma
    }
}

/// A margin with its normalizing constants evaluated once.
#[derive(Debug, Clone, Copy)]
pub struct PreparedMargin {
    kind: Prepared,
}

#[derive(Debug, Clone, Copy)]
enum Prepared {
    Normal { mean: f64, sd: f64 },
    Lognormal { meanlog: f64, sdlog: f64 },
    Logistic { loc: f64, scale: f64 },
    Loglogistic { shape: f64, scale: f64 },
    Gamma { shape: f64, rate: f64, ln_norm: f64 },
    Exponential { rate: f64 },
    Cauchy { loc: f64, scale: f64 },
    StudentT { loc: f64, scale: f64, df: f64, ln_norm: f64 },
    Skew(FernandezSteel),
}

impl PreparedMargin {
    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        match self.kind {
            Prepared::Normal { mean, sd } => norm_ln_pdf((x - mean) / sd) - sd.ln(),
            Prepared::Lognormal { meanlog, sdlog } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let lx = x.ln();
                norm_ln_pdf((lx - meanlog) / sdlog) - sdlog.ln() - lx
            }
            Prepared::Logistic { loc, scale } => {
                let z = ((x - loc) / scale).abs();
                -z - scale.ln() - 2.0 * (-z).exp().ln_1p()
            }
            Prepared::Loglogistic { shape, scale } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let lz = (x / scale).ln();
                // ln(1 + e^{shape·lz}) without overflow
                let t = shape * lz;
                let softplus = if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
                shape.ln() - scale.ln() + (shape - 1.0) * lz - 2.0 * softplus
            }
            Prepared::Gamma { shape, rate, ln_norm } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                ln_norm + (shape - 1.0) * x.ln() - rate * x
            }
            Prepared::Exponential { rate } => {
                if x < 0.0 {
                    return f64::NEG_INFINITY;
                }
                rate.ln() - rate * x
            }
            Prepared::Cauchy { loc, scale } => {
                let z = (x - loc) / scale;
                -(PI * scale).ln() - (z * z).ln_1p()
            }
            Prepared::StudentT { loc, scale, df, ln_norm } => {
                let z = (x - loc) / scale;
                ln_norm - 0.5 * (df + 1.0) * (z * z / df).ln_1p()
            }
            Prepared::Skew(fs) => fs.ln_pdf(x),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        match self.kind {
            Prepared::Normal { mean, sd } => norm_cdf((x - mean) / sd),
            Prepared::Lognormal { meanlog, sdlog } => {
                if x <= 0.0 {
                    0.0
                } else {
                    norm_cdf((x.ln() - meanlog) / sdlog)
                }
            }
            Prepared::Logistic { loc, scale } => 1.0 / (1.0 + (-(x - loc) / scale).exp()),
            Prepared::Loglogistic { shape, scale } => {
                if x <= 0.0 {
                    0.0
                } else {
                    1.0 / (1.0 + (-shape * (x / scale).ln()).exp())
                }
            }
            Prepared::Gamma { shape, rate, .. } => {
                if x <= 0.0 {
                    0.0
                } else {
                    gamma_lr(shape, rate * x)
                }
            }
            Prepared::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            Prepared::Cauchy { loc, scale } => 0.5 + ((x - loc) / scale).atan() / PI,
            Prepared::StudentT { loc, scale, df, .. } => t_cdf((x - loc) / scale, df),
            Prepared::Skew(fs) => fs.cdf(x),
        }
    }

    /// Quantile for `u ∈ (0, 1)`; the caller validates the range.
    fn quantile_unchecked(&self, u: f64) -> f64 {
        match self.kind {
            Prepared::Normal { mean, sd } => mean + sd * norm_quantile(u),
            Prepared::Lognormal { meanlog, sdlog } => (meanlog + sdlog * norm_quantile(u)).exp(),
            Prepared::Logistic { loc, scale } => loc + scale * (u / (1.0 - u)).ln(),
            Prepared::Loglogistic { shape, scale } => scale * (u / (1.0 - u)).powf(1.0 / shape),
            Prepared::Gamma { shape, rate, .. } => gamma_quantile(shape, u) / rate,
            Prepared::Exponential { rate } => -(-u).ln_1p() / rate,
            Prepared::Cauchy { loc, scale } => loc + scale * (PI * (u - 0.5)).tan(),
            Prepared::StudentT { loc, scale, df, .. } => loc + scale * t_quantile(u, df),
            Prepared::Skew(fs) => fs.quantile(u),
        }
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::InvalidParameter(format!("quantile level {u} outside (0, 1)")));
        }
        Ok(self.quantile_unchecked(u))
    }
}

/// Unit-rate gamma quantile by safeguarded Newton iteration on the regularized
/// incomplete gamma function.
fn gamma_quantile(shape: f64, u: f64) -> f64 {
    // Wilson–Hilferty starting point
    let z = norm_quantile(u);
    let c = 1.0 / (9.0 * shape);
    let wh = shape * (1.0 - c + z * c.sqrt()).powi(3);
    let x0 = if wh > 0.0 { wh } else { (u * shape * ln_gamma(shape).exp()).powf(1.0 / shape) };
    let mut lo = 0.0;
    let mut hi = x0.max(1.0);
    while gamma_lr(shape, hi) < u {
        hi *= 2.0;
        if hi > 1e300 {
            break;
        }
    }
    let ln_norm = -ln_gamma(shape);
    numeric::invert_increasing(
        |x| if x <= 0.0 { 0.0 } else { gamma_lr(shape, x) },
        |x| if x <= 0.0 { 0.0 } else { (ln_norm + (shape - 1.0) * x.ln() - x).exp() },
        u,
        &mut lo,
        &mut hi,
        x0,
    )
}

impl MarginalModel {
    pub fn new(family: MarginalFamily, params: Vec<f64>) -> Result<Self> {
        let m = MarginalModel { family, params };
        m.validate()?;
        Ok(m)
    }

    pub fn normal(mean: f64, sd: f64) -> Self {
        MarginalModel { family: MarginalFamily::Normal, params: vec![mean, sd] }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let bad = |msg: &str| Err(Error::InvalidParameter(format!("{}: {msg} ({p:?})", self.family)));
        if p.len() != self.family.parameter_count() {
            return bad("wrong number of parameters");
        }
        if p.iter().any(|v| !v.is_finite()) {
            return bad("non-finite parameter");
        }
        match self.family {
            MarginalFamily::Exponential => {
                if p[0] <= 0.0 {
                    return bad("rate must be positive");
                }
            }
            MarginalFamily::Normal
            | MarginalFamily::Lognormal
            | MarginalFamily::Logistic
            | MarginalFamily::Cauchy => {
                if p[1] <= 0.0 {
                    return bad("scale must be positive");
                }
            }
            MarginalFamily::Loglogistic | MarginalFamily::Gamma => {
                if p[0] <= 0.0 || p[1] <= 0.0 {
                    return bad("shape and rate must be positive");
                }
            }
            MarginalFamily::StudentT => {
                if p[1] <= 0.0 || p[2] <= 0.0 {
                    return bad("scale and df must be positive");
                }
            }
            MarginalFamily::SkewNormal => {
                if p[1] <= 0.0 || p[2] <= 0.0 {
                    return bad("sd and xi must be positive");
                }
            }
            MarginalFamily::SkewStudentT => {
                if p[1] <= 0.0 || p[3] <= 0.0 || p[2] <= 2.0 {
                    return bad("sd and xi must be positive and df > 2");
                }
            }
        }
        Ok(())
    }

    pub fn prepare(&self) -> PreparedMargin {
        let p = &self.params;
        let kind = match self.family {
            MarginalFamily::Normal => Prepared::Normal { mean: p[0], sd: p[1] },
            MarginalFamily::Lognormal => Prepared::Lognormal { meanlog: p[0], sdlog: p[1] },
            MarginalFamily::Logistic => Prepared::Logistic { loc: p[0], scale: p[1] },
            MarginalFamily::Loglogistic => Prepared::Loglogistic { shape: p[0], scale: 1.0 / p[1] },
            MarginalFamily::Gamma => Prepared::Gamma {
                shape: p[0],
                rate: p[1],
                ln_norm: p[0] * p[1].ln() - ln_gamma(p[0]),
            },
            MarginalFamily::Exponential => Prepared::Exponential { rate: p[0] },
            MarginalFamily::Cauchy => Prepared::Cauchy { loc: p[0], scale: p[1] },
            MarginalFamily::StudentT => {
                let df = p[2];
                let ln_norm = ln_gamma(0.5 * (df + 1.0))
                    - ln_gamma(0.5 * df)
                    - 0.5 * (df * PI).ln()
                    - p[1].ln();
                Prepared::StudentT { loc: p[0], scale: p[1], df, ln_norm }
            }
            MarginalFamily::SkewNormal => Prepared::Skew(FernandezSteel::new(p[0], p[1], p[2], Base::Normal)),
            MarginalFamily::SkewStudentT => {
                let df = p[2];
                let base = Base::UnitT { df, scale: (df / (df - 2.0)).sqrt() };
                Prepared::Skew(FernandezSteel::new(p[0], p[1], p[3], base))
            }
        };
        PreparedMargin { kind }
    }

    /// Log-density; `-inf` outside the support.
    pub fn log_pdf(&self, x: f64) -> f64 {
        self.prepare().ln_pdf(x)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.prepare().cdf(x)
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        self.prepare().quantile(u)
    }

    pub fn parameter_count(&self) -> usize {
        self.family.parameter_count()
    }

    pub fn in_support(&self, x: f64) -> bool {
        x.is_finite() && (!self.family.positive_support() || x > 0.0)
    }

    /// Mean of the distribution where it exists (`None` for the Cauchy, and for
    /// the Student t or log-logistic when the tail is too heavy).
    pub fn mean(&self) -> Option<f64> {
        let p = &self.params;
        match self.family {
            MarginalFamily::Normal | MarginalFamily::Logistic => Some(p[0]),
            MarginalFamily::SkewNormal | MarginalFamily::SkewStudentT => Some(p[0]),
            MarginalFamily::Lognormal => Some((p[0] + 0.5 * p[1] * p[1]).exp()),
            MarginalFamily::Loglogistic => {
                let b = PI / p[0];
                (p[0] > 1.0).then(|| b / b.sin() / p[1])
            }
            MarginalFamily::Gamma => Some(p[0] / p[1]),
            MarginalFamily::Exponential => Some(1.0 / p[0]),
            MarginalFamily::Cauchy => None,
            MarginalFamily::StudentT => (p[2] > 1.0).then_some(p[0]),
        }
    }

    pub fn weighted_loglik(&self, xs: &[f64], w: &[f64]) -> f64 {
        let pm = self.prepare();
        xs.iter().zip(w).map(|(&x, &wi)| if wi == 0.0 { 0.0 } else { wi * pm.ln_pdf(x) }).sum()
    }
}

/// Options for [`fit_weighted`].
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iter: 500, rel_tol: 1e-8 }
    }
}

struct WeightedMoments {
    mean: f64,
    var: f64,
    skew: f64,
}

fn moments(xs: &[f64], w: &[f64]) -> WeightedMoments {
    let total: f64 = w.iter().sum();
    let mean = xs.iter().zip(w).map(|(x, wi)| x * wi).sum::<f64>() / total;
    let var = xs.iter().zip(w).map(|(x, wi)| wi * (x - mean).powi(2)).sum::<f64>() / total;
    let m3 = xs.iter().zip(w).map(|(x, wi)| wi * (x - mean).powi(3)).sum::<f64>() / total;
    let skew = if var > 0.0 { m3 / var.powf(1.5) } else { 0.0 };
    WeightedMoments { mean, var, skew }
}

fn weighted_quantile(xs: &[f64], w: &[f64], q: f64) -> f64 {
    let mut idx: Vec<usize> = (0..xs.len()).filter(|&i| w[i] > 0.0).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let total: f64 = idx.iter().map(|&i| w[i]).sum();
    let mut acc = 0.0;
    for &i in &idx {
        acc += w[i];
        if acc >= q * total {
            return xs[i];
        }
    }
    idx.last().map(|&i| xs[i]).unwrap_or(0.0)
}

// Bijections between the constrained parameter space and R^p.
fn to_bounded(x: f64, lo: f64, hi: f64) -> f64 {
    let t = ((x - lo) / (hi - lo)).clamp(1e-9, 1.0 - 1e-9);
    (t / (1.0 - t)).ln()
}

fn from_bounded(z: f64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) / (1.0 + (-z).exp())
}

fn encode(family: MarginalFamily, p: &[f64]) -> Vec<f64> {
    match family {
        MarginalFamily::Exponential => vec![p[0].ln()],
        MarginalFamily::Loglogistic | MarginalFamily::Gamma => vec![p[0].ln(), p[1].ln()],
        MarginalFamily::StudentT => vec![p[0], p[1].ln(), to_bounded(p[2], DF_MIN, DF_MAX)],
        MarginalFamily::SkewNormal => vec![p[0], p[1].ln(), to_bounded(p[2].ln(), XI_MIN.ln(), XI_MAX.ln())],
        MarginalFamily::SkewStudentT => vec![
            p[0],
            p[1].ln(),
            to_bounded(p[2], DF_MIN, DF_MAX),
            to_bounded(p[3].ln(), XI_MIN.ln(), XI_MAX.ln()),
        ],
        _ => vec![p[0], p[1].ln()],
    }
}

fn decode(family: MarginalFamily, z: &[f64]) -> Vec<f64> {
    match family {
        MarginalFamily::Exponential => vec![z[0].exp()],
        MarginalFamily::Loglogistic | MarginalFamily::Gamma => vec![z[0].exp(), z[1].exp()],
        MarginalFamily::StudentT => vec![z[0], z[1].exp(), from_bounded(z[2], DF_MIN, DF_MAX)],
        MarginalFamily::SkewNormal => vec![z[0], z[1].exp(), from_bounded(z[2], XI_MIN.ln(), XI_MAX.ln()).exp()],
        MarginalFamily::SkewStudentT => vec![
            z[0],
            z[1].exp(),
            from_bounded(z[2], DF_MIN, DF_MAX),
            from_bounded(z[3], XI_MIN.ln(), XI_MAX.ln()).exp(),
        ],
        _ => vec![z[0], z[1].exp()],
    }
}

fn check_inputs(family: MarginalFamily, xs: &[f64], w: &[f64]) -> Result<()> {
    if xs.len() != w.len() {
        return Err(Error::DimensionMismatch { expected: xs.len(), got: w.len() });
    }
    if w.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
    }
    if w.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidParameter("weights sum to zero".into()));
    }
    let outside = xs.iter().zip(w).any(|(&x, &wi)| {
        wi > 0.0 && (!x.is_finite() || (family.positive_support() && x <= 0.0))
    });
    if outside {
        return Err(Error::InvalidParameter(format!("data outside the support of {family}")));
    }
    Ok(())
}

/// Closed-form weighted MLE where one exists.
fn closed_form(family: MarginalFamily, xs: &[f64], w: &[f64]) -> Option<Vec<f64>> {
    match family {
        MarginalFamily::Normal => {
            let m = moments(xs, w);
            Some(vec![m.mean, m.var.sqrt()])
        }
        MarginalFamily::Lognormal => {
            let logs: Vec<f64> = xs.iter().map(|x| if *x > 0.0 { x.ln() } else { 0.0 }).collect();
            let m = moments(&logs, w);
            Some(vec![m.mean, m.var.sqrt()])
        }
        MarginalFamily::Exponential => {
            let m = moments(xs, w);
            Some(vec![1.0 / m.mean])
        }
        _ => None,
    }
}

/// Moment-matching starting points (several for the shape-heavy families).
fn initial_guesses(family: MarginalFamily, xs: &[f64], w: &[f64]) -> Vec<Vec<f64>> {
    let m = moments(xs, w);
    let sd = m.var.sqrt().max(1e-12);
    let xi_from_skew = if m.skew > 0.2 {
        1.5
    } else if m.skew < -0.2 {
        1.0 / 1.5
    } else {
        1.0
    };
    match family {
        MarginalFamily::Logistic => vec![vec![m.mean, sd * 3f64.sqrt() / PI]],
        MarginalFamily::Loglogistic => {
            let logs: Vec<f64> = xs.iter().map(|x| if *x > 0.0 { x.ln() } else { 0.0 }).collect();
            let lm = moments(&logs, w);
            let lsd = lm.var.sqrt().max(1e-12);
            vec![vec![PI / (lsd * 3f64.sqrt()), (-lm.mean).exp()]]
        }
        MarginalFamily::Gamma => vec![vec![m.mean * m.mean / m.var.max(1e-300), m.mean / m.var.max(1e-300)]],
        MarginalFamily::Cauchy => {
            let med = weighted_quantile(xs, w, 0.5);
            let iqr = weighted_quantile(xs, w, 0.75) - weighted_quantile(xs, w, 0.25);
            vec![vec![med, (0.5 * iqr).max(1e-6 * sd.max(1e-6))]]
        }
        MarginalFamily::StudentT => [4.0f64, 10.0, 30.0]
            .iter()
            .map(|&df| vec![m.mean, sd * ((df - 2.0) / df).sqrt(), df])
            .collect(),
        MarginalFamily::SkewNormal => [xi_from_skew, 0.7, 1.0, 1.4]
            .iter()
            .map(|&xi| vec![m.mean, sd, xi])
            .collect(),
        MarginalFamily::SkewStudentT => {
            let mut out = Vec::new();
            for &df in &[5.0, 20.0] {
                for &xi in &[xi_from_skew, 0.7, 1.4] {
                    out.push(vec![m.mean, sd, df, xi]);
                }
            }
            out
        }
        _ => closed_form(family, xs, w).into_iter().collect(),
    }
}

fn negative_loglik(family: MarginalFamily, params: &[f64], xs: &[f64], w: &[f64], scale: f64) -> f64 {
    let model = MarginalModel { family, params: params.to_vec() };
    if model.validate().is_err() {
        return f64::INFINITY;
    }
    let v = -model.weighted_loglik(xs, w) / scale;
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Weighted maximum likelihood fit of one family.
///
/// Non-closed-form families are fitted by Nelder–Mead in a reparameterized
/// space (logs of positive parameters, logit on bounded ones) started from
/// moment-matched guesses. If the optimizer exhausts its budget the error
/// carries the best parameters found.
pub fn fit_weighted(family: MarginalFamily, xs: &[f64], w: &[f64]) -> Result<MarginalModel> {
    fit_weighted_with(family, xs, w, None, FitOptions::default())
}

/// Like [`fit_weighted`], optionally starting from `start` in addition to the
/// moment-matched guesses.
pub fn fit_weighted_with(
    family: MarginalFamily,
    xs: &[f64],
    w: &[f64],
    start: Option<&[f64]>,
    opts: FitOptions,
) -> Result<MarginalModel> {
    check_inputs(family, xs, w)?;
    if let Some(p) = closed_form(family, xs, w) {
        return MarginalModel::new(family, p);
    }
    let total: f64 = w.iter().sum();
    let objective = |z: &[f64]| negative_loglik(family, &decode(family, z), xs, w, total);
    let mut starts = initial_guesses(family, xs, w);
    if let Some(s) = start {
        if s.len() == family.parameter_count() {
            starts.insert(0, s.to_vec());
        }
    }
    // pick the best starting point, then polish it
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in &starts {
        let z = encode(family, s);
        let v = objective(&z);
        if v.is_finite() && best.as_ref().is_none_or(|b| v < b.1) {
            best = Some((z, v));
        }
    }
    let (z0, _) = best.ok_or_else(|| Error::FitFailed {
        context: family.to_string(),
        reason: "no finite starting point".into(),
    })?;
    let min = nelder_mead(objective, &z0, 0.3, opts.max_iter, opts.rel_tol);
    let params = decode(family, &min.x);
    if !min.value.is_finite() {
        return Err(Error::FitFailed { context: family.to_string(), reason: "non-finite likelihood".into() });
    }
    if !min.converged {
        return Err(Error::NonConvergence { what: family.to_string(), best: params });
    }
    MarginalModel::new(family, params)
}

/// Weighted BIC `-2 Σ w_i log f(x_i) + p log(Σ w_i)`.
pub fn weighted_bic(model: &MarginalModel, xs: &[f64], w: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    -2.0 * model.weighted_loglik(xs, w) + model.parameter_count() as f64 * total.ln()
}

/// Fits each admissible candidate and returns the one with the smallest
/// weighted BIC. Families whose support excludes the data are skipped.
/// A candidate whose optimizer ran out of iterations competes with its best
/// parameters.
pub fn select_family(xs: &[f64], w: &[f64], candidates: &[MarginalFamily]) -> Result<MarginalModel> {
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("no candidate marginal families".into()));
    }
    let mut ordered = candidates.to_vec();
    ordered.sort();
    ordered.dedup();
    let mut best: Option<(MarginalModel, f64)> = None;
    let mut failures = Vec::new();
    for family in ordered {
        if check_inputs(family, xs, w).is_err() {
            continue;
        }
        let model = match fit_weighted(family, xs, w) {
            Ok(m) => m,
            Err(Error::NonConvergence { best, .. }) => match MarginalModel::new(family, best) {
                Ok(m) => m,
                Err(e) => {
                    failures.push(format!("{family}: {e}"));
                    continue;
                }
            },
            Err(e) => {
                failures.push(format!("{family}: {e}"));
                continue;
            }
        };
        let bic = weighted_bic(&model, xs, w);
        if !bic.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some((b, bb)) => {
                bic < *bb
                    || (bic == *bb && model.parameter_count() < b.parameter_count())
            }
        };
        if better {
            best = Some((model, bic));
        }
    }
    best.map(|b| b.0).ok_or_else(|| Error::FitFailed {
        context: "marginal family selection".into(),
        reason: if failures.is_empty() {
            "no candidate family admits the data".into()
        } else {
            failures.join("; ")
        },
    })
}
