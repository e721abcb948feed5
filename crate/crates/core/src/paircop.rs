//! Bivariate copula families.
//!
//! Conventions: `h2(u, v) = ∂C(u,v)/∂v = P(U ≤ u | V = v)` and
//! `h1(u, v) = ∂C(u,v)/∂u = P(V ≤ v | U = u)`. Rotations follow the usual
//! vine software conventions:
//!
//! * 90°:  `C(u,v) = v - C₀(1-u, v)`,  `c(u,v) = c₀(1-u, v)`
//! * 180°: `C(u,v) = u + v - 1 + C₀(1-u, 1-v)` (survival copula)
//! * 270°: `C(u,v) = u - C₀(u, 1-v)`,  `c(u,v) = c₀(u, 1-v)`
//!
//! Rotated families keep their base-family parameters (positive) and report a
//! signed Kendall's tau.
//!
//! Archimedean families are evaluated through their generator in log space,
//! which keeps the BB families finite close to the boundary of the unit square.

use crate::error::{Error, Result};
use crate::numeric::{
    self, brent_min, debye1, integrate, invert_increasing, nelder_mead, norm_cdf, norm_quantile,
    t_cdf, t_quantile, weighted_kendall_tau,
};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

/// Pseudo-observations are clipped to `[UCLIP, 1 - UCLIP]` before evaluation.
pub const UCLIP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CopulaFamily {
    Independence,
    Gaussian,
    StudentT,
    Clayton,
    Gumbel,
    Frank,
    Joe,
    Bb1,
    Bb8,
}

impl CopulaFamily {
    pub const ALL: [CopulaFamily; 9] = [
        CopulaFamily::Independence,
        CopulaFamily::Gaussian,
        CopulaFamily::StudentT,
        CopulaFamily::Clayton,
        CopulaFamily::Gumbel,
        CopulaFamily::Frank,
        CopulaFamily::Joe,
        CopulaFamily::Bb1,
        CopulaFamily::Bb8,
    ];

    pub fn parameter_count(self) -> usize {
        match self {
            CopulaFamily::Independence => 0,
            CopulaFamily::StudentT | CopulaFamily::Bb1 | CopulaFamily::Bb8 => 2,
            _ => 1,
        }
    }

    /// Families whose parameter alone cannot express negative dependence and
    /// therefore need 90°/270° rotations.
    pub fn needs_rotation(self) -> bool {
        matches!(
            self,
            CopulaFamily::Clayton | CopulaFamily::Gumbel | CopulaFamily::Joe | CopulaFamily::Bb1 | CopulaFamily::Bb8
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            CopulaFamily::Independence => "independence",
            CopulaFamily::Gaussian => "gaussian",
            CopulaFamily::StudentT => "student_t",
            CopulaFamily::Clayton => "clayton",
            CopulaFamily::Gumbel => "gumbel",
            CopulaFamily::Frank => "frank",
            CopulaFamily::Joe => "joe",
            CopulaFamily::Bb1 => "bb1",
            CopulaFamily::Bb8 => "bb8",
        }
    }

    /// Parameter box used by the optimizers, 1e-4 inside the admissible limits.
    fn bounds(self) -> [(f64, f64); 2] {
        match self {
            CopulaFamily::Independence => [(0.0, 0.0); 2],
            CopulaFamily::Gaussian => [(-0.9999, 0.9999), (0.0, 0.0)],
            CopulaFamily::StudentT => [(-0.9999, 0.9999), (2.0001, 50.0)],
            CopulaFamily::Clayton => [(1e-4, 28.0), (0.0, 0.0)],
            CopulaFamily::Gumbel | CopulaFamily::Joe => [(1.0001, 30.0), (0.0, 0.0)],
            CopulaFamily::Frank => [(-35.0, 35.0), (0.0, 0.0)],
            CopulaFamily::Bb1 => [(1e-4, 7.0), (1.0001, 7.0)],
            CopulaFamily::Bb8 => [(1.0001, 8.0), (1e-4, 1.0)],
        }
    }
}

impl fmt::Display for CopulaFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CopulaFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CopulaFamily::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown copula family `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Rotation {
    #[default]
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub fn degrees(self) -> u16 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }

    pub fn from_degrees(d: u16) -> Result<Self> {
        match d {
            0 => Ok(Rotation::R0),
            90 => Ok(Rotation::R90),
            180 => Ok(Rotation::R180),
            270 => Ok(Rotation::R270),
            _ => Err(Error::InvalidParameter(format!("rotation {d} is not one of 0/90/180/270"))),
        }
    }

    /// Rotation of the copula of `(V, U)` given the rotation of `(U, V)`.
    pub fn transposed(self) -> Self {
        match self {
            Rotation::R90 => Rotation::R270,
            Rotation::R270 => Rotation::R90,
            r => r,
        }
    }
}

impl Serialize for Rotation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u16(self.degrees())
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let deg = u16::deserialize(d)?;
        Rotation::from_degrees(deg).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DependenceSummary {
    pub tau: f64,
    pub upper_tail: f64,
    pub lower_tail: f64,
}

/// A parametric bivariate copula. `par2` is the degrees of freedom of the
/// t copula and the second parameter of BB1/BB8; it is zero otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "PairCopulaDoc", try_from = "PairCopulaDoc")]
pub struct PairCopula {
    pub family: CopulaFamily,
    pub rotation: Rotation,
    pub par: f64,
    pub par2: f64,
}

#[derive(Serialize, Deserialize)]
struct PairCopulaDoc {
    family: CopulaFamily,
    rotation: Rotation,
    par: f64,
    par2: f64,
    #[serde(default)]
    tau: f64,
}

impl From<PairCopula> for PairCopulaDoc {
    fn from(c: PairCopula) -> Self {
        PairCopulaDoc { family: c.family, rotation: c.rotation, par: c.par, par2: c.par2, tau: c.tau() }
    }
}

impl TryFrom<PairCopulaDoc> for PairCopula {
    type Error = Error;

    fn try_from(d: PairCopulaDoc) -> Result<Self> {
        PairCopula::new(d.family, d.rotation, d.par, d.par2)
    }
}

// ---------------------------------------------------------------------------
// Archimedean generators in log space.

#[derive(Debug, Clone, Copy)]
enum Generator {
    Clayton(f64),
    Gumbel(f64),
    Frank(f64),
    Joe(f64),
    Bb1(f64, f64),
    /// theta, delta, ln(eta) with eta = 1 - (1-delta)^theta
    Bb8(f64, f64, f64),
}

/// `ln(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(1 - e^x)` for `x < 0`.
fn ln1m_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// `ln(e^a + e^b)`.
fn lse2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl Generator {
    /// `ln φ(t)`.
    fn ln_phi(self, t: f64) -> f64 {
        let lt = t.ln();
        match self {
            Generator::Clayton(th) => ln_expm1(-th * lt) - th.ln(),
            Generator::Gumbel(th) => th * (-lt).ln(),
            Generator::Frank(th) => {
                // φ = -ln(1 + r) with r = -e^{-θt}·expm1(-θ(1-t))/expm1(-θ)
                let r = -(-th * t).exp() * (-th * (1.0 - t)).exp_m1() / (-th).exp_m1();
                (-r.ln_1p()).ln()
            }
            Generator::Joe(th) => {
                let ln_a = (-t).ln_1p();
                (-ln1m_exp(th * ln_a)).ln()
            }
            Generator::Bb1(th, de) => de * ln_expm1(-th * lt),
            Generator::Bb8(th, de, ln_eta) => {
                if de >= 1.0 {
                    return Generator::Joe(th).ln_phi(t);
                }
                // 1 - (1-A)/eta computed as B·expm1(θ·ln(a/(1-δ)))/eta
                let ln_b = th * (1.0 - de).ln();
                let lr = th * (de * (1.0 - t) / (1.0 - de)).ln_1p();
                let one_minus_r = (ln_b + ln_expm1(lr) - ln_eta).exp();
                (-(-one_minus_r).ln_1p()).ln()
            }
        }
    }

    /// `φ⁻¹(s)` given `ln s`.
    fn inverse(self, ln_s: f64) -> f64 {
        match self {
            Generator::Clayton(th) => (-softplus(th.ln() + ln_s) / th).exp(),
            Generator::Gumbel(th) => (-(ln_s / th).exp()).exp(),
            Generator::Frank(th) => {
                let s = ln_s.exp();
                -((-s).exp() * (-th).exp_m1()).ln_1p() / th
            }
            Generator::Joe(th) => {
                let s = ln_s.exp();
                -(ln1m_exp(-s) / th).exp_m1()
            }
            Generator::Bb1(th, de) => (-softplus(ln_s / de) / th).exp(),
            Generator::Bb8(th, de, ln_eta) => {
                if de >= 1.0 {
                    return Generator::Joe(th).inverse(ln_s);
                }
                let s = ln_s.exp();
                -((-(ln_eta - s).exp()).ln_1p() / th).exp_m1() / de
            }
        }
    }

    /// `ln(-φ'(t))`.
    fn ln_neg_dphi(self, t: f64) -> f64 {
        let lt = t.ln();
        match self {
            Generator::Clayton(th) => (-th - 1.0) * lt,
            Generator::Gumbel(th) => th.ln() + (th - 1.0) * (-lt).ln() - lt,
            Generator::Frank(th) => th.abs().ln() - (th * t).exp_m1().abs().ln(),
            Generator::Joe(th) => {
                let ln_a = (-t).ln_1p();
                th.ln() + (th - 1.0) * ln_a - ln1m_exp(th * ln_a)
            }
            Generator::Bb1(th, de) => {
                de.ln() + (de - 1.0) * ln_expm1(-th * lt) + th.ln() + (-th - 1.0) * lt
            }
            Generator::Bb8(th, de, _) => {
                let ln_a = (-de * t).ln_1p();
                th.ln() + de.ln() + (th - 1.0) * ln_a - ln1m_exp(th * ln_a)
            }
        }
    }

    /// `ln φ''(t)`.
    fn ln_d2phi(self, t: f64) -> f64 {
        let lt = t.ln();
        match self {
            Generator::Clayton(th) => (th + 1.0).ln() + (-th - 2.0) * lt,
            Generator::Gumbel(th) => {
                let l = -lt;
                th.ln() + (th - 2.0) * l.ln() + (th - 1.0 + l).ln() - 2.0 * lt
            }
            Generator::Frank(th) => 2.0 * th.abs().ln() + th * t - 2.0 * (th * t).exp_m1().abs().ln(),
            Generator::Joe(th) => {
                let ln_a = (-t).ln_1p();
                let big_a = (th * ln_a).exp();
                th.ln() + (th - 2.0) * ln_a + (th - 1.0 + big_a).ln() - 2.0 * ln1m_exp(th * ln_a)
            }
            Generator::Bb1(th, de) => {
                let ln_g = ln_expm1(-th * lt);
                let inner = (de - 1.0) * th * (-th * lt).exp() + (th + 1.0) * ln_g.exp();
                de.ln() + th.ln() + (de - 2.0) * ln_g + (-th - 2.0) * lt + inner.ln()
            }
            Generator::Bb8(th, de, _) => {
                let ln_a = (-de * t).ln_1p();
                let big_a = (th * ln_a).exp();
                th.ln() + 2.0 * de.ln() + (th - 2.0) * ln_a + (th - 1.0 + big_a).ln()
                    - 2.0 * ln1m_exp(th * ln_a)
            }
        }
    }

    fn cdf(self, u: f64, v: f64) -> f64 {
        self.inverse(lse2(self.ln_phi(u), self.ln_phi(v))).clamp(0.0, u.min(v))
    }

    /// `∂C/∂v` at `(u, v)`.
    fn h(self, u: f64, v: f64) -> f64 {
        let c = self.cdf(u, v).max(f64::MIN_POSITIVE);
        (self.ln_neg_dphi(v) - self.ln_neg_dphi(c)).exp().clamp(0.0, 1.0)
    }

    fn ln_density(self, u: f64, v: f64) -> f64 {
        let c = self.cdf(u, v).max(f64::MIN_POSITIVE);
        self.ln_d2phi(c) + self.ln_neg_dphi(u) + self.ln_neg_dphi(v) - 3.0 * self.ln_neg_dphi(c)
    }

    /// Kendall's tau by `1 + 4 ∫ φ/φ'`.
    fn tau_by_integral(self) -> f64 {
        let f = |t: f64| {
            if t <= 0.0 || t >= 1.0 {
                return 0.0;
            }
            -(self.ln_phi(t) - self.ln_neg_dphi(t)).exp()
        };
        1.0 + 4.0 * integrate(f, 0.0, 1.0, 1e-10)
    }
}

/// `ln(e^x - 1)` for `x > 0`.
fn ln_expm1(x: f64) -> f64 {
    if x > 30.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}

// ---------------------------------------------------------------------------

/// Unrotated copula with family-specific evaluation.
#[derive(Debug, Clone, Copy)]
enum Base {
    Independence,
    Gaussian { rho: f64 },
    StudentT { rho: f64, nu: f64, ln_norm: f64 },
    Archimedean(Generator),
}

impl Base {
    fn ln_density(self, u: f64, v: f64) -> f64 {
        match self {
            Base::Independence => 0.0,
            Base::Gaussian { rho } => {
                let x = norm_quantile(u);
                let y = norm_quantile(v);
                let r2 = 1.0 - rho * rho;
                -0.5 * r2.ln() - (rho * rho * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * r2)
            }
            Base::StudentT { rho, nu, ln_norm } => {
                let x = t_quantile(u, nu);
                let y = t_quantile(v, nu);
                t_copula_ln_density(x, y, rho, nu, ln_norm)
            }
            Base::Archimedean(g) => g.ln_density(u, v),
        }
    }

    /// `∂C₀/∂v` at `(u, v)`.
    fn h(self, u: f64, v: f64) -> f64 {
        match self {
            Base::Independence => u,
            Base::Gaussian { rho } => {
                norm_cdf((norm_quantile(u) - rho * norm_quantile(v)) / (1.0 - rho * rho).sqrt())
            }
            Base::StudentT { rho, nu, .. } => {
                let x = t_quantile(u, nu);
                let y = t_quantile(v, nu);
                let s = ((nu + y * y) * (1.0 - rho * rho) / (nu + 1.0)).sqrt();
                t_cdf((x - rho * y) / s, nu + 1.0)
            }
            Base::Archimedean(g) => g.h(u, v),
        }
    }

    /// Solves `h(u, v) = p` for `u`.
    fn h_inverse(self, p: f64, v: f64) -> f64 {
        match self {
            Base::Independence => p,
            Base::Gaussian { rho } => {
                norm_cdf(norm_quantile(p) * (1.0 - rho * rho).sqrt() + rho * norm_quantile(v))
            }
            Base::StudentT { rho, nu, .. } => {
                let y = t_quantile(v, nu);
                let s = ((nu + y * y) * (1.0 - rho * rho) / (nu + 1.0)).sqrt();
                t_cdf(t_quantile(p, nu + 1.0) * s + rho * y, nu)
            }
            Base::Archimedean(_) => {
                let (mut lo, mut hi) = (0.0, 1.0);
                let u = invert_increasing(
                    |u| if u <= 0.0 { 0.0 } else if u >= 1.0 { 1.0 } else { self.h(u, v) },
                    |u| {
                        if u <= 0.0 || u >= 1.0 {
                            0.0
                        } else {
                            self.ln_density(u, v).exp()
                        }
                    },
                    p,
                    &mut lo,
                    &mut hi,
                    p,
                );
                u.clamp(0.0, 1.0)
            }
        }
    }

    fn cdf(self, u: f64, v: f64) -> f64 {
        match self {
            Base::Independence => u * v,
            Base::Archimedean(g) => g.cdf(u, v),
            // elliptical families: integrate the conditional distribution along v
            _ => integrate(|t| self.h(u, clip(t)), 0.0, v, 1e-12),
        }
    }
}

fn t_copula_ln_density(x: f64, y: f64, rho: f64, nu: f64, ln_norm: f64) -> f64 {
    let r2 = 1.0 - rho * rho;
    ln_norm - 0.5 * r2.ln() - 0.5 * (nu + 2.0) * ((x * x + y * y - 2.0 * rho * x * y) / (nu * r2)).ln_1p()
        + 0.5 * (nu + 1.0) * ((x * x / nu).ln_1p() + (y * y / nu).ln_1p())
}

fn t_copula_norm(nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 2.0)) + ln_gamma(0.5 * nu) - 2.0 * ln_gamma(0.5 * (nu + 1.0))
}

fn clip(u: f64) -> f64 {
    u.clamp(UCLIP, 1.0 - UCLIP)
}

impl PairCopula {
    pub fn new(family: CopulaFamily, rotation: Rotation, par: f64, par2: f64) -> Result<Self> {
        let c = PairCopula { family, rotation, par, par2 };
        c.validate()?;
        Ok(c)
    }

    pub fn independence() -> Self {
        PairCopula { family: CopulaFamily::Independence, rotation: Rotation::R0, par: 0.0, par2: 0.0 }
    }

    pub fn gaussian(rho: f64) -> Self {
        PairCopula { family: CopulaFamily::Gaussian, rotation: Rotation::R0, par: rho, par2: 0.0 }
    }

    /// Checks the admissible parameter ranges.
    pub fn validate(&self) -> Result<()> {
        let (p, q) = (self.par, self.par2);
        let ok = p.is_finite()
            && q.is_finite()
            && match self.family {
                CopulaFamily::Independence => true,
                CopulaFamily::Gaussian => p > -1.0 && p < 1.0,
                CopulaFamily::StudentT => p > -1.0 && p < 1.0 && q > 2.0,
                CopulaFamily::Clayton => p > 0.0,
                CopulaFamily::Gumbel | CopulaFamily::Joe => p >= 1.0,
                CopulaFamily::Frank => p != 0.0,
                CopulaFamily::Bb1 => p > 0.0 && q >= 1.0,
                CopulaFamily::Bb8 => p >= 1.0 && q > 0.0 && q <= 1.0,
            };
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "{} parameters ({p}, {q}) outside the admissible range",
                self.family
            )));
        }
        if self.rotation != Rotation::R0 && !self.family.needs_rotation() && self.family != CopulaFamily::Independence {
            // symmetric families only exist unrotated (180° is the same copula,
            // negative dependence comes from the parameter sign)
            if self.rotation != Rotation::R180 {
                return Err(Error::InvalidParameter(format!(
                    "{} does not support {}° rotation",
                    self.family,
                    self.rotation.degrees()
                )));
            }
        }
        Ok(())
    }

    fn base(&self) -> Base {
        match self.family {
            CopulaFamily::Independence => Base::Independence,
            CopulaFamily::Gaussian => Base::Gaussian { rho: self.par },
            CopulaFamily::StudentT => {
                Base::StudentT { rho: self.par, nu: self.par2, ln_norm: t_copula_norm(self.par2) }
            }
            CopulaFamily::Clayton => Base::Archimedean(Generator::Clayton(self.par)),
            CopulaFamily::Gumbel => {
                if self.par <= 1.0 {
                    Base::Independence
                } else {
                    Base::Archimedean(Generator::Gumbel(self.par))
                }
            }
            CopulaFamily::Frank => Base::Archimedean(Generator::Frank(self.par)),
            CopulaFamily::Joe => {
                if self.par <= 1.0 {
                    Base::Independence
                } else {
                    Base::Archimedean(Generator::Joe(self.par))
                }
            }
            CopulaFamily::Bb1 => Base::Archimedean(Generator::Bb1(self.par, self.par2)),
            CopulaFamily::Bb8 => {
                let (th, de) = (self.par, self.par2);
                if th <= 1.0 {
                    Base::Independence
                } else {
                    let ln_eta = ln1m_exp(th * (-de).ln_1p());
                    Base::Archimedean(Generator::Bb8(th, de, ln_eta))
                }
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.family.parameter_count()
    }

    pub fn ln_density(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clip(u), clip(v));
        let b = self.base();
        match self.rotation {
            Rotation::R0 => b.ln_density(u, v),
            Rotation::R90 => b.ln_density(1.0 - u, v),
            Rotation::R180 => b.ln_density(1.0 - u, 1.0 - v),
            Rotation::R270 => b.ln_density(u, 1.0 - v),
        }
    }

    pub fn density(&self, u: f64, v: f64) -> f64 {
        self.ln_density(u, v).exp()
    }

    pub fn cdf(&self, u: f64, v: f64) -> f64 {
        if u <= 0.0 || v <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return v.min(1.0);
        }
        if v >= 1.0 {
            return u;
        }
        let b = self.base();
        let c = match self.rotation {
            Rotation::R0 => b.cdf(u, v),
            Rotation::R90 => v - b.cdf(1.0 - u, v),
            Rotation::R180 => u + v - 1.0 + b.cdf(1.0 - u, 1.0 - v),
            Rotation::R270 => u - b.cdf(u, 1.0 - v),
        };
        c.clamp(0.0, u.min(v))
    }

    /// `∂C(u,v)/∂v`, the distribution of the first argument given the second.
    pub fn h2(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clip(u), clip(v));
        let b = self.base();
        let h = match self.rotation {
            Rotation::R0 => b.h(u, v),
            Rotation::R90 => 1.0 - b.h(1.0 - u, v),
            Rotation::R180 => 1.0 - b.h(1.0 - u, 1.0 - v),
            Rotation::R270 => b.h(u, 1.0 - v),
        };
        h.clamp(0.0, 1.0)
    }

    /// `∂C(u,v)/∂u`, the distribution of the second argument given the first.
    pub fn h1(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clip(u), clip(v));
        let b = self.base();
        let h = match self.rotation {
            Rotation::R0 => b.h(v, u),
            Rotation::R90 => b.h(v, 1.0 - u),
            Rotation::R180 => 1.0 - b.h(1.0 - v, 1.0 - u),
            Rotation::R270 => 1.0 - b.h(1.0 - v, u),
        };
        h.clamp(0.0, 1.0)
    }

    /// Returns `u` with `h2(u, v) = p`.
    pub fn h2_inverse(&self, p: f64, v: f64) -> f64 {
        let v = clip(v);
        let b = self.base();
        let u = match self.rotation {
            Rotation::R0 => b.h_inverse(p, v),
            Rotation::R90 => 1.0 - b.h_inverse(1.0 - p, v),
            Rotation::R180 => 1.0 - b.h_inverse(1.0 - p, 1.0 - v),
            Rotation::R270 => b.h_inverse(p, 1.0 - v),
        };
        u.clamp(0.0, 1.0)
    }

    /// Returns `v` with `h1(u, v) = p`.
    pub fn h1_inverse(&self, p: f64, u: f64) -> f64 {
        let u = clip(u);
        let b = self.base();
        let v = match self.rotation {
            Rotation::R0 => b.h_inverse(p, u),
            Rotation::R90 => b.h_inverse(p, 1.0 - u),
            Rotation::R180 => 1.0 - b.h_inverse(1.0 - p, 1.0 - u),
            Rotation::R270 => 1.0 - b.h_inverse(1.0 - p, u),
        };
        v.clamp(0.0, 1.0)
    }

    /// h-function selected by the index of the conditioning argument.
    pub fn hfunc(&self, which: Conditioning, u: f64, v: f64) -> f64 {
        match which {
            Conditioning::First => self.h1(u, v),
            Conditioning::Second => self.h2(u, v),
        }
    }

    /// Inverse of [`PairCopula::hfunc`] in its free argument, given the
    /// conditioning value `cond`.
    pub fn hfunc_inverse(&self, which: Conditioning, p: f64, cond: f64) -> f64 {
        match which {
            Conditioning::First => self.h1_inverse(p, cond),
            Conditioning::Second => self.h2_inverse(p, cond),
        }
    }

    /// The copula of `(V, U)`.
    pub fn transposed(&self) -> Self {
        PairCopula { rotation: self.rotation.transposed(), ..*self }
    }

    fn base_tau(&self) -> f64 {
        let (p, q) = (self.par, self.par2);
        match self.family {
            CopulaFamily::Independence => 0.0,
            CopulaFamily::Gaussian | CopulaFamily::StudentT => 2.0 / PI * p.asin(),
            CopulaFamily::Clayton => p / (p + 2.0),
            CopulaFamily::Gumbel => 1.0 - 1.0 / p,
            CopulaFamily::Frank => 1.0 - 4.0 / p * (1.0 - debye1(p)),
            CopulaFamily::Joe => {
                if p <= 1.0 {
                    0.0
                } else if (p - 2.0).abs() > 1e-4 {
                    1.0 + 2.0 / (2.0 - p) * (digamma(2.0) - digamma(2.0 / p + 1.0))
                } else {
                    Generator::Joe(p).tau_by_integral()
                }
            }
            CopulaFamily::Bb1 => 1.0 - 2.0 / (q * (p + 2.0)),
            CopulaFamily::Bb8 => match self.base() {
                Base::Archimedean(g) => g.tau_by_integral(),
                _ => 0.0,
            },
        }
    }

    /// Kendall's tau, signed according to the rotation.
    pub fn tau(&self) -> f64 {
        let t = self.base_tau();
        match self.rotation {
            Rotation::R90 | Rotation::R270 => -t,
            _ => t,
        }
    }

    pub fn dependence(&self) -> DependenceSummary {
        let (p, q) = (self.par, self.par2);
        let (upper, lower) = match self.family {
            CopulaFamily::StudentT => {
                let l = 2.0 * t_cdf(-((q + 1.0) * (1.0 - p) / (1.0 + p)).sqrt(), q + 1.0);
                (l, l)
            }
            CopulaFamily::Clayton => (0.0, 2f64.powf(-1.0 / p)),
            CopulaFamily::Gumbel | CopulaFamily::Joe => (2.0 - 2f64.powf(1.0 / p), 0.0),
            CopulaFamily::Bb1 => (2.0 - 2f64.powf(1.0 / q), 2f64.powf(-1.0 / (p * q))),
            CopulaFamily::Bb8 => {
                if q >= 1.0 {
                    (2.0 - 2f64.powf(1.0 / p), 0.0)
                } else {
                    (0.0, 0.0)
                }
            }
            _ => (0.0, 0.0),
        };
        let (upper_tail, lower_tail) = match self.rotation {
            Rotation::R0 => (upper, lower),
            Rotation::R180 => (lower, upper),
            Rotation::R90 | Rotation::R270 => (0.0, 0.0),
        };
        DependenceSummary { tau: self.tau(), upper_tail, lower_tail }
    }

    /// Weighted log-likelihood `Σ w_i ln c(u_i, v_i)`.
    pub fn loglik(&self, us: &[f64], vs: &[f64], w: &[f64]) -> f64 {
        if self.family == CopulaFamily::Independence {
            return 0.0;
        }
        match self.base() {
            // avoid recomputing the t normalizing constant per point and reuse
            // the quantiles of both margins
            Base::StudentT { rho, nu, ln_norm } => {
                let mut s = 0.0;
                for ((&u, &v), &wi) in us.iter().zip(vs).zip(w) {
                    if wi == 0.0 {
                        continue;
                    }
                    let (mut u, mut v) = (clip(u), clip(v));
                    if self.rotation == Rotation::R180 {
                        u = 1.0 - u;
                        v = 1.0 - v;
                    }
                    let x = t_quantile(u, nu);
                    let y = t_quantile(v, nu);
                    s += wi * t_copula_ln_density(x, y, rho, nu, ln_norm);
                }
                s
            }
            _ => us
                .iter()
                .zip(vs)
                .zip(w)
                .map(|((&u, &v), &wi)| if wi == 0.0 { 0.0 } else { wi * self.ln_density(u, v) })
                .sum(),
        }
    }

    /// Draws one pair given two independent uniforms.
    pub fn sample_from(&self, w1: f64, w2: f64) -> (f64, f64) {
        (w1, self.h1_inverse(w2, w1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    /// `∂C/∂u`
    First,
    /// `∂C/∂v`
    Second,
}

// ---------------------------------------------------------------------------
// Fitting and selection.

/// Parameter of a one-parameter family with the given (positive part of) tau.
fn tau_inverse(family: CopulaFamily, tau: f64) -> f64 {
    let [(lo, hi), _] = family.bounds();
    let t = tau.clamp(-0.99, 0.99);
    let raw = match family {
        CopulaFamily::Gaussian | CopulaFamily::StudentT => (PI * t / 2.0).sin(),
        CopulaFamily::Clayton => 2.0 * t / (1.0 - t),
        CopulaFamily::Gumbel => 1.0 / (1.0 - t),
        CopulaFamily::Frank | CopulaFamily::Joe => {
            // tau is monotone in the parameter: bisect
            let f = |p: f64| PairCopula { family, rotation: Rotation::R0, par: p, par2: 0.0 }.base_tau();
            let (mut a, mut b) = (lo, hi);
            if family == CopulaFamily::Frank && t.abs() < 1e-6 {
                return 1e-3;
            }
            for _ in 0..100 {
                let m = 0.5 * (a + b);
                if f(m) < t {
                    a = m;
                } else {
                    b = m;
                }
            }
            0.5 * (a + b)
        }
        _ => 0.5 * (lo + hi),
    };
    raw.clamp(lo, hi)
}

fn to_unit(x: f64, lo: f64, hi: f64) -> f64 {
    let t = ((x - lo) / (hi - lo)).clamp(1e-10, 1.0 - 1e-10);
    (t / (1.0 - t)).ln()
}

fn from_unit(z: f64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) / (1.0 + (-z).exp())
}

/// Options for pair-copula fitting.
#[derive(Debug, Clone, Copy)]
pub struct CopulaFitOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl Default for CopulaFitOptions {
    fn default() -> Self {
        CopulaFitOptions { max_iter: 500, rel_tol: 1e-8 }
    }
}

fn check_pseudo_obs(us: &[f64], vs: &[f64], w: &[f64]) -> Result<()> {
    if us.len() != vs.len() || us.len() != w.len() {
        return Err(Error::DimensionMismatch { expected: us.len(), got: vs.len().min(w.len()) });
    }
    if us.iter().chain(vs).any(|x| !(*x >= 0.0 && *x <= 1.0)) {
        return Err(Error::InvalidParameter("pseudo-observations must lie in [0, 1]".into()));
    }
    if w.iter().any(|x| *x < 0.0 || !x.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidParameter("weights must be nonnegative with positive sum".into()));
    }
    Ok(())
}

/// Weighted maximum likelihood for one family/rotation.
pub fn fit_weighted(
    family: CopulaFamily,
    rotation: Rotation,
    us: &[f64],
    vs: &[f64],
    w: &[f64],
) -> Result<PairCopula> {
    fit_weighted_with(family, rotation, us, vs, w, None, CopulaFitOptions::default())
}

/// Weighted maximum likelihood, additionally trying `start` (e.g. the current
/// parameters inside an ECM iteration). The result never has a lower
/// likelihood than `start`.
pub fn fit_weighted_with(
    family: CopulaFamily,
    rotation: Rotation,
    us: &[f64],
    vs: &[f64],
    w: &[f64],
    start: Option<&PairCopula>,
    opts: CopulaFitOptions,
) -> Result<PairCopula> {
    check_pseudo_obs(us, vs, w)?;
    if family == CopulaFamily::Independence {
        return Ok(PairCopula::independence());
    }
    let total: f64 = w.iter().sum();
    let make = |p: f64, q: f64| PairCopula { family, rotation, par: p, par2: q };
    let nll = |c: &PairCopula| {
        let v = -c.loglik(us, vs, w) / total;
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    // tau of the unrotated data
    let tau_emp = weighted_kendall_tau(us, vs, w);
    let tau_base = match rotation {
        Rotation::R90 | Rotation::R270 => -tau_emp,
        _ => tau_emp,
    };
    let [(lo, hi), (lo2, hi2)] = family.bounds();
    let start = start.filter(|s| s.family == family && s.rotation == rotation && s.validate().is_ok());

    let best = match family.parameter_count() {
        _ if family == CopulaFamily::StudentT && rotation == Rotation::R0 => {
            let fitted = fit_student_t(us, vs, w, tau_base);
            match start {
                Some(s) if nll(s) < nll(&fitted) => *s,
                _ => fitted,
            }
        }
        1 => {
            let init = tau_inverse(family, if family == CopulaFamily::Gaussian || family == CopulaFamily::Frank {
                tau_base
            } else {
                tau_base.max(1e-3)
            });
            let mut cands = vec![make(init, 0.0)];
            if let Some(s) = start {
                cands.push(*s);
            }
            let (z, _) = brent_min(|z| nll(&make(from_unit(z, lo, hi), 0.0)), -23.0, 23.0, 1e-10, opts.max_iter);
            let mut p = from_unit(z, lo, hi);
            if family == CopulaFamily::Frank && p == 0.0 {
                p = 1e-6;
            }
            cands.push(make(p, 0.0));
            cands
                .into_iter()
                .min_by(|a, b| nll(a).total_cmp(&nll(b)))
                .expect("nonempty")
        }
        _ => {
            let mut starts: Vec<PairCopula> = Vec::new();
            match family {
                CopulaFamily::StudentT => {
                    let rho = (PI * tau_base / 2.0).sin().clamp(-0.98, 0.98);
                    for nu in [4.0, 8.0, 15.0, 30.0] {
                        starts.push(make(rho, nu));
                    }
                }
                CopulaFamily::Bb1 => {
                    let t = tau_base.clamp(0.02, 0.95);
                    for de in [1.05, 1.3, 1.7, 2.5] {
                        let th = (2.0 / (de * (1.0 - t)) - 2.0).clamp(0.05, 6.0);
                        starts.push(make(th, de));
                    }
                }
                _ => {
                    for th in [1.5, 2.5, 4.0, 6.0] {
                        for de in [0.4, 0.7, 0.95] {
                            starts.push(make(th, de));
                        }
                    }
                }
            }
            if let Some(s) = start {
                starts.insert(0, *s);
            }
            let first = starts
                .iter()
                .copied()
                .min_by(|a, b| nll(a).total_cmp(&nll(b)))
                .expect("nonempty");
            let encode = |c: &PairCopula| vec![to_unit(c.par, lo, hi), to_unit(c.par2, lo2, hi2)];
            let decode = |z: &[f64]| make(from_unit(z[0], lo, hi), from_unit(z[1], lo2, hi2));
            let min = nelder_mead(|z| nll(&decode(z)), &encode(&first), 0.5, opts.max_iter, opts.rel_tol);
            let fitted = decode(&min.x);
            if nll(&fitted) <= nll(&first) {
                fitted
            } else {
                first
            }
        }
    };
    if !nll(&best).is_finite() {
        return Err(Error::FitFailed {
            context: format!("{family} copula"),
            reason: "likelihood is not finite".into(),
        });
    }
    Ok(best)
}

/// Profile likelihood over the degrees of freedom; the quantile transforms
/// are computed once per trial value.
fn fit_student_t(us: &[f64], vs: &[f64], w: &[f64], tau: f64) -> PairCopula {
    let [(lo, hi), (lo2, hi2)] = CopulaFamily::StudentT.bounds();
    let keep: Vec<usize> = (0..us.len()).filter(|&i| w[i] > 0.0).collect();
    let ws: Vec<f64> = keep.iter().map(|&i| w[i]).collect();
    let total: f64 = ws.iter().sum();
    let profile = |nu: f64| -> (f64, f64) {
        let xs: Vec<f64> = keep.iter().map(|&i| t_quantile(clip(us[i]), nu)).collect();
        let ys: Vec<f64> = keep.iter().map(|&i| t_quantile(clip(vs[i]), nu)).collect();
        let ln_norm = t_copula_norm(nu);
        let nll = |rho: f64| {
            let s: f64 = xs
                .iter()
                .zip(&ys)
                .zip(&ws)
                .map(|((&x, &y), &wi)| wi * t_copula_ln_density(x, y, rho, nu, ln_norm))
                .sum();
            let v = -s / total;
            if v.is_finite() {
                v
            } else {
                f64::INFINITY
            }
        };
        let (z, f) = brent_min(|z| nll(from_unit(z, lo, hi)), -23.0, 23.0, 1e-10, 200);
        let rho = from_unit(z, lo, hi);
        // keep the tau-inversion value when the search lands on a worse point
        let rho0 = (PI * tau / 2.0).sin().clamp(lo, hi);
        if nll(rho0) < f {
            (rho0, nll(rho0))
        } else {
            (rho, f)
        }
    };
    let decode = |s: f64| (lo2 + s.exp()).min(hi2);
    let (s, _) = brent_min(|s| profile(decode(s)).1, (1e-4f64).ln(), (hi2 - lo2).ln(), 1e-6, 100);
    let nu = decode(s);
    let (rho, _) = profile(nu);
    PairCopula { family: CopulaFamily::StudentT, rotation: Rotation::R0, par: rho, par2: nu }
}

/// Outcome of the tau-based test of independence.
pub fn independence_test_statistic(us: &[f64], vs: &[f64], w: &[f64]) -> f64 {
    let tau = weighted_kendall_tau(us, vs, w);
    let n = numeric::effective_size(w);
    if n < 2.0 {
        return 0.0;
    }
    tau.abs() * (9.0 * n * (n - 1.0) / (2.0 * (2.0 * n + 5.0))).sqrt()
}

/// Selects the pair copula with the smallest AIC among `candidates`.
///
/// When independence is a candidate, the pair is declared independent if the
/// tau-based asymptotic test does not reject at the 5% level. Asymmetric
/// families are tried in the 0°/180° rotations for positive weighted tau and
/// 90°/270° otherwise.
pub fn select_family(us: &[f64], vs: &[f64], w: &[f64], candidates: &[CopulaFamily]) -> Result<PairCopula> {
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("no candidate copula families".into()));
    }
    check_pseudo_obs(us, vs, w)?;
    let mut families = candidates.to_vec();
    families.sort();
    families.dedup();
    if families.contains(&CopulaFamily::Independence) && independence_test_statistic(us, vs, w) < 1.96 {
        return Ok(PairCopula::independence());
    }
    let tau = weighted_kendall_tau(us, vs, w);
    let mut best: Option<(PairCopula, f64)> = None;
    let mut failures = Vec::new();
    for family in families {
        let rotations: &[Rotation] = if family.needs_rotation() {
            if tau >= 0.0 {
                &[Rotation::R0, Rotation::R180]
            } else {
                &[Rotation::R90, Rotation::R270]
            }
        } else {
            &[Rotation::R0]
        };
        for &rot in rotations {
            match fit_weighted(family, rot, us, vs, w) {
                Ok(c) => {
                    let aic = -2.0 * c.loglik(us, vs, w) + 2.0 * c.parameter_count() as f64;
                    if !aic.is_finite() {
                        continue;
                    }
                    let better = match &best {
                        None => true,
                        Some((b, ba)) => aic < *ba || (aic == *ba && c.parameter_count() < b.parameter_count()),
                    };
                    if better {
                        best = Some((c, aic));
                    }
                }
                Err(e) => failures.push(format!("{family}/{}: {e}", rot.degrees())),
            }
        }
    }
    best.map(|b| b.0).ok_or_else(|| Error::FitFailed {
        context: "pair-copula selection".into(),
        reason: failures.join("; "),
    })
}
