//! Numerical building blocks shared by the distribution, copula and mixture code:
//! normal and Student-t special functions, adaptive quadrature, bracketed
//! root finding, derivative-free minimizers and weighted rank statistics.

use statrs::function::beta::beta_reg;
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::{PI, SQRT_2};

/// `ln(sqrt(2π))`.
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

#[inline]
pub fn norm_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    norm_ln_pdf(x).exp()
}

#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal quantile. Returns the infinities at 0 and 1.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    // one Halley step against the exact cdf
    let e = norm_cdf(x) - p;
    let d = norm_pdf(x);
    if d > 0.0 && e.is_finite() {
        let u = e / d;
        x - u / (1.0 + 0.5 * x * u)
    } else {
        x
    }
}

pub fn t_ln_pdf(x: f64, nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln()
        - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()
}

pub fn t_pdf(x: f64, nu: f64) -> f64 {
    t_ln_pdf(x, nu).exp()
}

pub fn t_cdf(x: f64, nu: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    let tail = 0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + x * x));
    if x > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Lower-tail starting value for the t quantile (Hill's approximation),
/// `q < 0.5`.
fn t_quantile_start(q: f64, nu: f64) -> f64 {
    let p2 = 2.0 * q;
    if (nu - 2.0).abs() < 1e-12 {
        return -(2.0 / (p2 * (2.0 - p2)) - 2.0).sqrt();
    }
    let a = 1.0 / (nu - 0.5);
    let b = 48.0 / (a * a);
    let mut c = ((20700.0 * a / b - 98.0) * a - 16.0) * a + 96.36;
    let d = ((94.5 / (b + c) - 3.0) / b + 1.0) * (a * PI / 2.0).sqrt() * nu;
    let mut y = (d * p2).powf(2.0 / nu);
    if y > 0.05 + a {
        let x = norm_quantile(q);
        y = x * x;
        if nu < 5.0 {
            c += 0.3 * (nu - 4.5) * (x + 0.6);
        }
        c += (((0.05 * d * x - 5.0) * x - 7.0) * x - 2.0) * x + b;
        y = (((((0.4 * y + 6.3) * y + 36.0) * y + 94.5) / c - y - 3.0) / b + 1.0) * x;
        y = (a * y * y).exp_m1();
    } else {
        y = ((1.0 / (((nu + 6.0) / (nu * y) - 0.089 * d - 0.822) * (nu + 2.0) * 3.0) + 0.5 / (nu + 4.0)) * y - 1.0)
            * (nu + 1.0)
            / (nu + 2.0)
            + 1.0 / y;
    }
    -(nu * y).sqrt()
}

pub fn t_quantile(p: f64, nu: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p == 0.5 {
        return 0.0;
    }
    // exploit symmetry so the search always runs in the lower tail
    let (q, sign) = if p > 0.5 { (1.0 - p, 1.0) } else { (p, -1.0) };
    let ln_norm = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln();
    let pdf = |x: f64| (ln_norm - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()).exp();
    let mut x = t_quantile_start(q, nu);
    let mut done = false;
    if x.is_finite() && x < 0.0 {
        // Halley steps: once a step is below 1e-5 relative the cubic
        // convergence leaves an error far below rounding
        for _ in 0..6 {
            let r = (t_cdf(x, nu) - q) / pdf(x);
            let step = r / (1.0 + 0.5 * r * (nu + 1.0) * x / (nu + x * x));
            let next = x - step;
            if !next.is_finite() || next >= 0.0 {
                break;
            }
            x = next;
            if step.abs() <= 1e-5 * x.abs() {
                done = true;
                break;
            }
        }
    }
    if !done {
        let z = norm_quantile(q);
        let mut hi = 0.0;
        let mut lo = z.min(-1.0);
        while t_cdf(lo, nu) > q {
            lo *= 2.0;
            if lo < -1e300 {
                break;
            }
        }
        let start = z.max(lo);
        x = invert_increasing(|x| t_cdf(x, nu), pdf, q, &mut lo, &mut hi, start);
    }
    -sign * x
}

/// Solves `f(x) = target` for an increasing `f` inside the bracket `[lo, hi]`
/// using Newton steps with bisection fallback. `df` is the derivative of `f`.
/// The bracket is narrowed in place.
pub fn invert_increasing<F, D>(f: F, df: D, target: f64, lo: &mut f64, hi: &mut f64, x0: f64) -> f64
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let mut x = if x0 > *lo && x0 < *hi { x0 } else { 0.5 * (*lo + *hi) };
    for _ in 0..200 {
        let fx = f(x) - target;
        if fx == 0.0 {
            return x;
        }
        if fx > 0.0 {
            *hi = x;
        } else {
            *lo = x;
        }
        if (*hi - *lo).abs() <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        let d = df(x);
        let newton = x - fx / d;
        x = if d > 0.0 && d.is_finite() && newton > *lo && newton < *hi {
            newton
        } else {
            0.5 * (*lo + *hi)
        };
    }
    x
}

/// Numerically stable `ln(Σ exp(x_i))`.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Debye function of order one, `D1(x) = (1/x) ∫_0^x t/(e^t-1) dt`.
pub fn debye1(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    if x < 0.0 {
        return debye1(-x) - 0.5 * x;
    }
    let integral = integrate(
        |t| {
            if t == 0.0 {
                1.0
            } else {
                t / t.exp_m1()
            }
        },
        0.0,
        x,
        1e-13,
    );
    integral / x
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) quadrature of `f` over `[a, b]`.
/// Either limit may be infinite. `tol` is applied as both absolute and
/// relative tolerance on the total.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    if a > b {
        return -integrate(f, b, a, tol);
    }
    match (a.is_finite(), b.is_finite()) {
        (true, true) => integrate_finite(&f, a, b, tol),
        (true, false) => integrate_finite(
            &|t: f64| {
                let s = 1.0 - t;
                f(a + t / s) / (s * s)
            },
            0.0,
            1.0,
            tol,
        ),
        (false, true) => integrate_finite(
            &|t: f64| {
                let s = 1.0 - t;
                f(b - t / s) / (s * s)
            },
            0.0,
            1.0,
            tol,
        ),
        (false, false) => integrate_finite(
            &|t: f64| {
                let s = 1.0 - t * t;
                f(t / s) * (1.0 + t * t) / (s * s)
            },
            -1.0,
            1.0,
            tol,
        ),
    }
}

fn integrate_finite<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    // (error, lo, hi, value)
    let mut parts: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(64);
    let (v, e) = gk15(f, a, b);
    parts.push((e, a, b, v));
    for _ in 0..4000 {
        let total: f64 = parts.iter().map(|p| p.3).sum();
        let err: f64 = parts.iter().map(|p| p.0).sum();
        if err <= tol.max(tol * total.abs()) {
            break;
        }
        let worst = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .0.total_cmp(&y.1 .0))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (_, lo, hi, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            parts.push((0.0, lo, hi, gk15(f, lo, hi).0));
            continue;
        }
        let (v1, e1) = gk15(f, lo, mid);
        let (v2, e2) = gk15(f, mid, hi);
        parts.push((e1, lo, mid, v1));
        parts.push((e2, mid, hi, v2));
    }
    parts.iter().map(|p| p.3).sum()
}

/// Result of a derivative-free minimization.
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder–Mead simplex minimization. Non-finite objective values are treated
/// as `+inf`, so infeasible points are simply rejected.
pub fn nelder_mead<F>(f: F, x0: &[f64], step: f64, max_iter: usize, rel_tol: f64) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let n = x0.len();
    if n == 0 {
        return Minimum { x: Vec::new(), value: eval(x0), iterations: 0, converged: true };
    }
    let mut best = (x0.to_vec(), eval(x0));
    let mut used = 0;
    let mut converged = false;
    // one restart from the best vertex guards against premature collapse
    for round in 0..2 {
        let scale = if round == 0 { step } else { step * 0.25 };
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push(best.clone());
        for i in 0..n {
            let mut x = best.0.clone();
            x[i] += if x[i].abs() > 1.0 { scale * x[i].abs() } else { scale };
            let v = eval(&x);
            simplex.push((x, v));
        }
        converged = false;
        while used < max_iter {
            used += 1;
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let lo = simplex[0].1;
            let hi = simplex[n].1;
            if hi.is_finite() && (hi - lo).abs() <= rel_tol * (lo.abs() + hi.abs()) * 0.5 + 1e-14 {
                converged = true;
                break;
            }
            let mut centroid = vec![0.0; n];
            for (x, _) in &simplex[..n] {
                for (c, xi) in centroid.iter_mut().zip(x) {
                    *c += xi / n as f64;
                }
            }
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[n].0)
                    .map(|(c, w)| c + t * (w - c))
                    .collect()
            };
            let xr = along(-1.0);
            let fr = eval(&xr);
            if fr < simplex[0].1 {
                let xe = along(-2.0);
                let fe = eval(&xe);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let (xc, fc) = if fr < simplex[n].1 {
                    let xc = along(-0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                } else {
                    let xc = along(0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                };
                if fc < simplex[n].1.min(fr) {
                    simplex[n] = (xc, fc);
                } else {
                    let x_best = simplex[0].0.clone();
                    for vertex in simplex.iter_mut().skip(1) {
                        let x: Vec<f64> = x_best
                            .iter()
                            .zip(&vertex.0)
                            .map(|(b, v)| b + 0.5 * (v - b))
                            .collect();
                        let v = eval(&x);
                        *vertex = (x, v);
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if simplex[0].1 <= best.1 {
            best = simplex[0].clone();
        }
        if used >= max_iter {
            break;
        }
    }
    Minimum { x: best.0, value: best.1, iterations: used, converged }
}

/// Brent's bounded scalar minimizer on `[a, b]`.
pub fn brent_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64, max_iter: usize) -> (f64, f64) {
    let eval = |x: f64| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    const GOLD: f64 = 0.381_966_011_250_105_1;
    let mut x = a + GOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = eval(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..max_iter {
        let m = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else if d > 0.0 { x + tol1 } else { x - tol1 };
        let fu = eval(u);
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

struct Fenwick {
    tree: Vec<f64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick { tree: vec![0.0; n + 1] }
    }

    fn add(&mut self, idx: usize, w: f64) {
        let mut i = idx + 1;
        while i < self.tree.len() {
            self.tree[i] += w;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over positions `< idx`.
    fn prefix(&self, idx: usize) -> f64 {
        let mut i = idx;
        let mut s = 0.0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Weighted Kendall's tau,
/// `Σ_{i<j} w_i w_j sgn(x_i-x_j) sgn(y_i-y_j) / Σ_{i<j} w_i w_j`,
/// in `O(n log n)`. Tied pairs contribute zero to the numerator.
pub fn weighted_kendall_tau(x: &[f64], y: &[f64], w: &[f64]) -> f64 {
    let n = x.len();
    assert_eq!(n, y.len());
    assert_eq!(n, w.len());
    if n < 2 {
        return 0.0;
    }
    let mut by_y: Vec<usize> = (0..n).collect();
    by_y.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    let mut rank_y = vec![0usize; n];
    let mut r = 0;
    for (pos, &i) in by_y.iter().enumerate() {
        if pos > 0 && y[i] != y[by_y[pos - 1]] {
            r += 1;
        }
        rank_y[i] = r;
    }
    let n_ranks = r + 1;
    let mut by_x: Vec<usize> = (0..n).collect();
    by_x.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let mut fen = Fenwick::new(n_ranks);
    let mut inserted = 0.0;
    let mut balance = 0.0;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && x[by_x[end]] == x[by_x[start]] {
            end += 1;
        }
        for &i in &by_x[start..end] {
            let below = fen.prefix(rank_y[i]);
            let upto = fen.prefix(rank_y[i] + 1);
            let above = inserted - upto;
            balance += w[i] * (below - above);
        }
        for &i in &by_x[start..end] {
            fen.add(rank_y[i], w[i]);
            inserted += w[i];
        }
        start = end;
    }
    let sw: f64 = w.iter().sum();
    let sw2: f64 = w.iter().map(|v| v * v).sum();
    let pairs = 0.5 * (sw * sw - sw2);
    if pairs <= 0.0 {
        0.0
    } else {
        (balance / pairs).clamp(-1.0, 1.0)
    }
}

/// Effective sample size `(Σw)² / Σw²` of a weight vector.
pub fn effective_size(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

/// Expands a top-level seed and a subsystem label into an independent stream seed
/// (FNV-1a over the label, folded into the seed through SplitMix64).
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
