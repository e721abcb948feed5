//! Finite mixtures of vine distributions and their ECM fit.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{mean_sd, Dataset};
use crate::marginals::{self, FitOptions, MarginalFamily, MarginalModel};
use crate::numeric::{derive_seed, logsumexp};
use crate::paircop::{CopulaFamily, CopulaFitOptions};
use crate::vine::{self, VineDistribution, VineKind};
use crate::{Error, Result};

/// Smallest mixture weight kept by CM1.
pub const WEIGHT_FLOOR: f64 = 1e-6;
/// Responsibilities below this are set to zero.
pub const RESPONSIBILITY_CLIP: f64 = 1e-12;
/// A component whose responsibilities sum to less than this keeps its
/// parameters in CM2/CM3.
const MIN_COMPONENT_MASS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMethod {
    Kmeans,
    Gmm,
    Given,
}

impl std::fmt::Display for InitMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitMethod::Kmeans => "kmeans",
            InitMethod::Gmm => "gmm",
            InitMethod::Given => "given",
        })
    }
}

impl std::str::FromStr for InitMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kmeans" | "k-means" => Ok(InitMethod::Kmeans),
            "gmm" => Ok(InitMethod::Gmm),
            "given" => Ok(InitMethod::Given),
            other => Err(Error::InvalidParameter(format!("unknown initialization `{other}`"))),
        }
    }
}

/// Settings of one mixture fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub k: usize,
    pub init: InitMethod,
    pub seed: u64,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub vine_kind: VineKind,
    pub margin_families: Vec<MarginalFamily>,
    pub copula_families: Vec<CopulaFamily>,
    /// Restarts of the initial clustering.
    pub restarts: usize,
    /// Labels used when `init` is `given`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_labels: Option<Vec<usize>>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            k: 2,
            init: InitMethod::Kmeans,
            seed: 1,
            rel_tol: 1e-5,
            max_iter: 100,
            vine_kind: VineKind::Rvine,
            margin_families: MarginalFamily::ALL.to_vec(),
            copula_families: CopulaFamily::ALL.to_vec(),
            restarts: 20,
            initial_labels: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("K must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter("rel_tol must be positive".into()));
        }
        if self.margin_families.is_empty() || self.copula_families.is_empty() {
            return Err(Error::InvalidParameter("family sets must not be empty".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidParameter("at least one restart is needed".into()));
        }
        if self.init == InitMethod::Given && self.initial_labels.is_none() {
            return Err(Error::InvalidParameter("init `given` needs initial labels".into()));
        }
        Ok(())
    }
}

/// Posterior component probabilities, stored per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Responsibilities {
    /// `columns[k][i]` is the probability that zone `i` belongs to component `k`.
    pub columns: Vec<Vec<f64>>,
    /// Rows where every component had zero density and the row was set uniform.
    pub degenerate_rows: usize,
}

impl Responsibilities {
    pub fn one_hot(labels: &[usize], k: usize) -> Self {
        let mut columns = vec![vec![0.0; labels.len()]; k];
        for (i, &l) in labels.iter().enumerate() {
            columns[l][i] = 1.0;
        }
        Responsibilities { columns, degenerate_rows: 0 }
    }

    pub fn k(&self) -> usize {
        self.columns.len()
    }

    pub fn n(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Row-wise argmax, ties to the lowest component index.
    pub fn classify(&self) -> Vec<usize> {
        (0..self.n())
            .map(|i| {
                let mut best = 0;
                for k in 1..self.k() {
                    if self.columns[k][i] > self.columns[best][i] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    /// Writes `zone_id, r_1..r_K, label` (labels 1-based).
    pub fn write_csv<W: std::io::Write>(&self, zone_ids: &[String], writer: W) -> Result<()> {
        if zone_ids.len() != self.n() {
            return Err(Error::Misaligned(format!("{} zone ids for {} rows", zone_ids.len(), self.n())));
        }
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["zone_id".to_string()];
        header.extend((1..=self.k()).map(|k| format!("r_{k}")));
        header.push("label".into());
        w.write_record(&header)?;
        for (i, label) in self.classify().into_iter().enumerate() {
            let mut rec = vec![zone_ids[i].clone()];
            rec.extend(self.columns.iter().map(|c| c[i].to_string()));
            rec.push((label + 1).to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<output>", e))?;
        Ok(())
    }
}

/// Row argmax of a responsibility matrix.
pub fn classify(r: &Responsibilities) -> Vec<usize> {
    r.classify()
}

/// `Σ_k π_k g_k(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub weights: Vec<f64>,
    pub components: Vec<VineDistribution>,
}

impl MixtureModel {
    pub fn new(weights: Vec<f64>, components: Vec<VineDistribution>) -> Result<Self> {
        if weights.len() != components.len() || weights.is_empty() {
            return Err(Error::DimensionMismatch { expected: components.len(), got: weights.len() });
        }
        if weights.iter().any(|w| !(*w > 0.0 && *w < 1.0 + 1e-12)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("mixture weights {weights:?} are not a probability vector")));
        }
        let d = components[0].dimension();
        if let Some(c) = components.iter().find(|c| c.dimension() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: c.dimension() });
        }
        Ok(MixtureModel { weights, components })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dimension(&self) -> usize {
        self.components[0].dimension()
    }

    /// `(K − 1) + Σ_k (margin parameters + copula parameters)`.
    pub fn parameter_count(&self) -> usize {
        self.k() - 1 + self.components.iter().map(VineDistribution::parameter_count).sum::<usize>()
    }

    /// `log π_k + log g_k(x_i)` per component and row.
    fn log_joint(&self, data: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if data.len() != self.dimension() {
            return Err(Error::DimensionMismatch { expected: self.dimension(), got: data.len() });
        }
        self.components
            .par_iter()
            .zip(self.weights.par_iter())
            .map(|(c, w)| Ok(c.log_density_columns(data)?.into_iter().map(|l| w.ln() + l).collect()))
            .collect()
    }

    /// Observed-data log-likelihood of column-major data.
    pub fn loglik_columns(&self, data: &[Vec<f64>]) -> Result<f64> {
        let lj = self.log_joint(data)?;
        let n = data.first().map_or(0, Vec::len);
        let mut row = vec![0.0; self.k()];
        let mut total = 0.0;
        for i in 0..n {
            for (k, v) in row.iter_mut().enumerate() {
                *v = lj[k][i];
            }
            total += logsumexp(&row);
        }
        Ok(total)
    }

    pub fn loglik(&self, ds: &Dataset) -> Result<f64> {
        self.loglik_columns(&ds.columns)
    }

    /// `−2 ℓ + p log n`.
    pub fn bic(&self, ds: &Dataset) -> Result<f64> {
        Ok(bic_value(self.loglik(ds)?, self.parameter_count(), ds.n()))
    }

    /// Posterior membership probabilities.
    pub fn e_step_columns(&self, data: &[Vec<f64>]) -> Result<Responsibilities> {
        let lj = self.log_joint(data)?;
        let (k, n) = (self.k(), data.first().map_or(0, Vec::len));
        let mut columns = vec![vec![0.0; n]; k];
        let mut degenerate = 0;
        let mut row = vec![0.0; k];
        for i in 0..n {
            for (kk, v) in row.iter_mut().enumerate() {
                *v = lj[kk][i];
            }
            let lse = logsumexp(&row);
            if !lse.is_finite() {
                degenerate += 1;
                for c in columns.iter_mut() {
                    c[i] = 1.0 / k as f64;
                }
                continue;
            }
            let mut probs: Vec<f64> = row.iter().map(|l| (l - lse).exp()).collect();
            for p in probs.iter_mut() {
                if *p < RESPONSIBILITY_CLIP {
                    *p = 0.0;
                }
            }
            let s: f64 = probs.iter().sum();
            for (c, p) in columns.iter_mut().zip(probs) {
                c[i] = p / s;
            }
        }
        if degenerate > 0 {
            log::warn!("{degenerate} rows have zero density under every component");
        }
        Ok(Responsibilities { columns, degenerate_rows: degenerate })
    }

    pub fn e_step(&self, ds: &Dataset) -> Result<Responsibilities> {
        self.e_step_columns(&ds.columns)
    }
}

impl MixtureModel {
    /// Draws `counts[k]` rows from component `k`; returns column-major data
    /// and the generating labels.
    pub fn simulate(&self, counts: &[usize], seed: u64) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        if counts.len() != self.k() {
            return Err(Error::DimensionMismatch { expected: self.k(), got: counts.len() });
        }
        let mut columns = vec![Vec::with_capacity(counts.iter().sum()); self.dimension()];
        let mut labels = Vec::new();
        for (k, (c, &n)) in self.components.iter().zip(counts).enumerate() {
            let draw = c.simulate(n, derive_seed(seed, &format!("simulate/{k}")))?;
            for (col, part) in columns.iter_mut().zip(draw) {
                col.extend(part);
            }
            labels.extend(std::iter::repeat_n(k, n));
        }
        Ok((columns, labels))
    }
}

/// Component sizes of [`example_model`].
pub const EXAMPLE_COUNTS: [usize; 2] = [920, 1044];

/// Three skewed indicators in two components, each with pair copulas of
/// Kendall's tau at least 0.4.
pub fn example_model() -> MixtureModel {
    use crate::paircop::{PairCopula, Rotation};
    let pc = |f, p| PairCopula::new(f, Rotation::R0, p, 0.0).expect("valid example copula");
    let m = |f, p: &[f64]| MarginalModel::new(f, p.to_vec()).expect("valid example margin");
    let c1 = vine::VineCopula::from_edges(
        3,
        vec![
            vec![(0, 1, vec![], pc(CopulaFamily::Gumbel, 2.0)), (1, 2, vec![], pc(CopulaFamily::Clayton, 1.5))],
            vec![(0, 2, vec![1], pc(CopulaFamily::Frank, 4.5))],
        ],
    )
    .expect("valid example vine");
    let c2 = vine::VineCopula::from_edges(
        3,
        vec![
            vec![(0, 2, vec![], PairCopula::gaussian(0.81)), (2, 1, vec![], pc(CopulaFamily::Gumbel, 1.8))],
            vec![(0, 1, vec![2], pc(CopulaFamily::Clayton, 1.4))],
        ],
    )
    .expect("valid example vine");
    let g1 = VineDistribution::new(
        c1,
        vec![
            m(MarginalFamily::Loglogistic, &[6.47, 0.16]),
            m(MarginalFamily::Gamma, &[5.56, 0.49]),
            m(MarginalFamily::SkewStudentT, &[17.46, 4.27, 4.60, 1.85]),
        ],
    )
    .expect("valid example component");
    let g2 = VineDistribution::new(
        c2,
        vec![
            m(MarginalFamily::SkewNormal, &[3.26, 1.02, 1.15]),
            m(MarginalFamily::Gamma, &[6.22, 0.77]),
            m(MarginalFamily::Normal, &[9.12, 2.60]),
        ],
    )
    .expect("valid example component");
    let total = (EXAMPLE_COUNTS[0] + EXAMPLE_COUNTS[1]) as f64;
    MixtureModel::new(vec![EXAMPLE_COUNTS[0] as f64 / total, EXAMPLE_COUNTS[1] as f64 / total], vec![g1, g2])
        .expect("valid example mixture")
}

pub fn bic_value(loglik: f64, parameters: usize, n: usize) -> f64 {
    -2.0 * loglik + parameters as f64 * (n as f64).ln()
}

/// Free functions mirroring the model methods.
pub fn e_step(m: &MixtureModel, ds: &Dataset) -> Result<Responsibilities> {
    m.e_step(ds)
}

pub fn loglik(m: &MixtureModel, ds: &Dataset) -> Result<f64> {
    m.loglik(ds)
}

pub fn bic(m: &MixtureModel, ds: &Dataset) -> Result<f64> {
    m.bic(ds)
}

// ---------------------------------------------------------------------------
// Initial partitions.

fn standardized_rows(data: &[Vec<f64>], names: Option<&[String]>) -> Result<Vec<Vec<f64>>> {
    let n = data.first().map_or(0, Vec::len);
    let mut scaled = Vec::with_capacity(data.len());
    for (j, col) in data.iter().enumerate() {
        let (m, sd) = mean_sd(col);
        if !(sd > 0.0) {
            let name = names.map_or_else(|| format!("column {j}"), |n| n[j].clone());
            return Err(Error::ZeroVariance(name));
        }
        scaled.push(col.iter().map(|v| (v - m) / sd).collect::<Vec<f64>>());
    }
    Ok((0..n).map(|i| scaled.iter().map(|c| c[i]).collect()).collect())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// k-means++ seeding.
fn seed_centers(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut centers = vec![rows[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = n - 1;
            for (i, v) in d2.iter().enumerate() {
                acc += v;
                if acc > target {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.push(rows[pick].clone());
        for (v, r) in d2.iter_mut().zip(rows) {
            *v = v.min(sq_dist(r, centers.last().expect("nonempty")));
        }
    }
    centers
}

fn centroids(rows: &[Vec<f64>], labels: &[usize], k: usize) -> Option<Vec<Vec<f64>>> {
    let d = rows[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (r, &l) in rows.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(r) {
            *s += v;
        }
    }
    if counts.contains(&0) {
        return None;
    }
    Some(sums.into_iter().zip(counts).map(|(s, c)| s.into_iter().map(|v| v / c as f64).collect()).collect())
}

/// One k-means run; `None` when a cluster empties.
fn lloyd(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Option<(Vec<usize>, f64)> {
    let mut centers = seed_centers(rows, k, rng);
    let mut labels: Vec<usize> = rows.iter().map(|r| nearest(r, &centers).0).collect();
    for _ in 0..300 {
        centers = centroids(rows, &labels, k)?;
        let next: Vec<usize> = rows.iter().map(|r| nearest(r, &centers).0).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    let centers = centroids(rows, &labels, k)?;
    let sse = rows.iter().zip(&labels).map(|(r, &l)| sq_dist(r, &centers[l])).sum();
    Some((labels, sse))
}

/// Diagonal-covariance Gaussian mixture by EM; returns hard labels and the
/// log-likelihood, `None` when a cluster ends up empty.
fn diagonal_gmm(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Option<(Vec<usize>, f64)> {
    let (n, d) = (rows.len(), rows[0].len());
    let mut means = seed_centers(rows, k, rng);
    let mut vars = vec![vec![1.0; d]; k];
    let mut pis = vec![1.0 / k as f64; k];
    let mut resp = vec![vec![0.0; k]; n];
    let mut prev = f64::NEG_INFINITY;
    let mut ll = prev;
    for _ in 0..500 {
        ll = 0.0;
        for (i, r) in rows.iter().enumerate() {
            for c in 0..k {
                let mut l = pis[c].ln();
                for j in 0..d {
                    let z = r[j] - means[c][j];
                    l -= 0.5 * ((2.0 * std::f64::consts::PI * vars[c][j]).ln() + z * z / vars[c][j]);
                }
                resp[i][c] = l;
            }
            let lse = logsumexp(&resp[i]);
            ll += lse;
            for v in resp[i].iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        for c in 0..k {
            let nk: f64 = resp.iter().map(|r| r[c]).sum();
            if nk < 1e-8 {
                return None;
            }
            pis[c] = nk / n as f64;
            for j in 0..d {
                let m = resp.iter().zip(rows).map(|(r, x)| r[c] * x[j]).sum::<f64>() / nk;
                let v = resp.iter().zip(rows).map(|(r, x)| r[c] * (x[j] - m).powi(2)).sum::<f64>() / nk;
                means[c][j] = m;
                vars[c][j] = v.max(1e-6);
            }
        }
        if (ll - prev).abs() <= 1e-8 * ll.abs() {
            break;
        }
        prev = ll;
    }
    let labels: Vec<usize> = resp
        .iter()
        .map(|r| (0..k).fold(0, |b, c| if r[c] > r[b] { c } else { b }))
        .collect();
    let mut counts = vec![0; k];
    for &l in &labels {
        counts[l] += 1;
    }
    if counts.contains(&0) {
        return None;
    }
    Some((labels, ll))
}

/// Hard initial partition of the (standardized) data into `k` nonempty
/// clusters. k-means keeps the restart with the smallest within-cluster sum
/// of squares, GMM the one with the largest log-likelihood.
pub fn init_partition(data: &[Vec<f64>], k: usize, method: InitMethod, seed: u64, restarts: usize) -> Result<Vec<usize>> {
    let n = data.first().map_or(0, Vec::len);
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("cannot split {n} zones into {k} clusters")));
    }
    if k == 1 {
        return Ok(vec![0; n]);
    }
    if method == InitMethod::Given {
        return Err(Error::InvalidParameter("given partitions are supplied by the caller".into()));
    }
    let rows = standardized_rows(data, None)?;
    let key = derive_seed(seed, &format!("init/{method}/{k}"));
    // attempts run in batches so the outcome does not depend on thread count
    let mut found: Vec<(Vec<usize>, f64)> = Vec::new();
    let mut attempt = 0u64;
    while found.len() < restarts && attempt < 100 {
        let batch: Vec<u64> = (attempt..(attempt + restarts as u64).min(100)).collect();
        attempt += batch.len() as u64;
        let runs: Vec<Option<(Vec<usize>, f64)>> = batch
            .par_iter()
            .map(|&a| {
                let mut rng = ChaCha8Rng::seed_from_u64(key);
                rng.set_stream(a);
                match method {
                    InitMethod::Kmeans => lloyd(&rows, k, &mut rng),
                    _ => diagonal_gmm(&rows, k, &mut rng).map(|(l, ll)| (l, -ll)),
                }
            })
            .collect();
        found.extend(runs.into_iter().flatten());
    }
    found.truncate(restarts);
    found
        .into_iter()
        .reduce(|best, cur| if cur.1 < best.1 { cur } else { best })
        .map(|b| b.0)
        .ok_or_else(|| Error::Numeric(format!("no partition into {k} nonempty clusters after 100 attempts")))
}

fn check_labels(labels: &[usize], k: usize, n: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: labels.len() });
    }
    let mut counts = vec![0usize; k];
    for &l in labels {
        if l >= k {
            return Err(Error::InvalidParameter(format!("label {l} outside 0..{k}")));
        }
        counts[l] += 1;
    }
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidParameter(format!("initial cluster {c} is empty")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// CM steps.

/// `Σ_i w_i log g(x_i)`, skipping zero weights.
fn weighted_component_loglik(c: &VineDistribution, data: &[Vec<f64>], w: &[f64]) -> Result<f64> {
    let dens = c.log_density_columns(data)?;
    Ok(dens.iter().zip(w).map(|(l, wi)| if *wi == 0.0 { 0.0 } else { wi * l }).sum())
}

fn refit_margin(m: &MarginalModel, xs: &[f64], w: &[f64]) -> Result<MarginalModel> {
    match marginals::fit_weighted_with(m.family, xs, w, Some(&m.params), FitOptions::default()) {
        Ok(f) => Ok(f),
        Err(Error::NonConvergence { best, .. }) => MarginalModel::new(m.family, best),
        Err(e) => Err(e),
    }
}

/// CM2 and CM3 for one component. Each sub-step is kept only if it does not
/// lower the component's weighted log-likelihood.
fn update_component(
    comp: &VineDistribution,
    data: &[Vec<f64>],
    w: &[f64],
    names: &[String],
) -> Result<VineDistribution> {
    let q_old = weighted_component_loglik(comp, data, w)?;
    let margins: Vec<MarginalModel> = comp
        .margins
        .par_iter()
        .zip(data.par_iter())
        .enumerate()
        .map(|(j, (m, xs))| refit_margin(m, xs, w).map_err(|e| e.annotate(format!("variable `{}`", names[j]))))
        .collect::<Result<_>>()?;
    let mut cur = VineDistribution { copula: comp.copula.clone(), margins };
    let mut q = weighted_component_loglik(&cur, data, w)?;
    if !(q >= q_old) {
        // fall back to accepting margin updates one at a time
        cur = comp.clone();
        q = q_old;
        for j in 0..comp.dimension() {
            let candidate = refit_margin(&comp.margins[j], &data[j], w)?;
            let mut trial = cur.clone();
            trial.margins[j] = candidate;
            let qt = weighted_component_loglik(&trial, data, w)?;
            if qt > q {
                cur = trial;
                q = qt;
            }
        }
    }
    let u = cur.pit_columns(data);
    let mut copula = cur.copula.clone();
    copula.fit_parameters(&u, w, CopulaFitOptions::default()).map_err(|e| e.annotate("pair copulas"))?;
    if copula.weighted_loglik(&u, w)? >= cur.copula.weighted_loglik(&u, w)? {
        cur.copula = copula;
    }
    Ok(cur)
}

/// CM1: `π_k = Σ_i r_ik / n`, floored at [`WEIGHT_FLOOR`] and renormalized.
pub fn update_weights(r: &Responsibilities) -> Vec<f64> {
    let n = r.n() as f64;
    let mut pi: Vec<f64> = r.columns.iter().map(|c| (c.iter().sum::<f64>() / n).max(WEIGHT_FLOOR)).collect();
    let s: f64 = pi.iter().sum();
    for p in pi.iter_mut() {
        *p /= s;
    }
    pi
}

/// One round of conditional maximizations given responsibilities:
/// weights, then every component's margins, then its pair copulas (on the
/// probability integral transforms under the new margins).
pub fn cm_steps(m: &MixtureModel, ds: &Dataset, r: &Responsibilities) -> Result<MixtureModel> {
    cm_steps_columns(m, &ds.columns, &ds.names, r)
}

fn cm_steps_columns(m: &MixtureModel, data: &[Vec<f64>], names: &[String], r: &Responsibilities) -> Result<MixtureModel> {
    if r.k() != m.k() || r.n() != data.first().map_or(0, Vec::len) {
        return Err(Error::DimensionMismatch { expected: m.k(), got: r.k() });
    }
    let counts: Vec<f64> = r.columns.iter().map(|c| c.iter().sum()).collect();
    let q_pi = |pi: &[f64]| -> f64 { counts.iter().zip(pi).map(|(c, p)| if *c == 0.0 { 0.0 } else { c * p.ln() }).sum() };
    let mut weights = update_weights(r);
    if q_pi(&weights) < q_pi(&m.weights) {
        weights = m.weights.clone();
    }
    let components: Vec<VineDistribution> = m
        .components
        .par_iter()
        .zip(r.columns.par_iter())
        .enumerate()
        .map(|(k, (comp, w))| {
            if w.iter().sum::<f64>() < MIN_COMPONENT_MASS {
                return Ok(comp.clone());
            }
            update_component(comp, data, w, names).map_err(|e| e.annotate(format!("component {}", k + 1)))
        })
        .collect::<Result<_>>()?;
    Ok(MixtureModel { weights, components })
}

/// Selects margins, vine structure and pair-copula families for every
/// cluster of a hard partition (or any responsibilities).
fn select_components(
    data: &[Vec<f64>],
    names: &[String],
    r: &Responsibilities,
    config: &FitConfig,
) -> Result<MixtureModel> {
    let components: Vec<VineDistribution> = r
        .columns
        .par_iter()
        .enumerate()
        .map(|(k, w)| {
            let margins: Vec<MarginalModel> = data
                .iter()
                .enumerate()
                .map(|(j, xs)| {
                    marginals::select_family(xs, w, &config.margin_families)
                        .map_err(|e| e.annotate(format!("component {}, variable `{}`", k + 1, names[j])))
                })
                .collect::<Result<_>>()?;
            let dist = VineDistribution { copula: vine::VineCopula::independence(data.len()), margins };
            let u = dist.pit_columns(data);
            let copula = vine::select_structure(&u, w, config.vine_kind, &config.copula_families)
                .map_err(|e| e.annotate(format!("component {}", k + 1)))?;
            VineDistribution::new(copula, dist.margins)
        })
        .collect::<Result<_>>()?;
    MixtureModel::new(update_weights(r), components)
}

/// Per-iteration record of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FitTrace {
    /// Observed-data log-likelihood after model selection and after each
    /// ECM iteration.
    pub loglik: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
    /// Wall-clock seconds per iteration; not serialized so documents stay
    /// reproducible.
    #[serde(skip)]
    pub seconds: Vec<f64>,
    pub converged: bool,
    pub degenerate_rows: usize,
}

impl FitTrace {
    pub fn iterations(&self) -> usize {
        self.loglik.len().saturating_sub(1)
    }
}

/// Result of [`fit`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: MixtureModel,
    pub responsibilities: Responsibilities,
    pub trace: FitTrace,
    pub loglik: f64,
    pub bic: f64,
}

/// Fits a `K`-component vine mixture by ECM, starting from a hard partition.
/// Families and structures are selected once on the initial partition and
/// then held fixed.
pub fn fit(ds: &Dataset, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    ds.require_complete()?;
    let data = &ds.columns;
    let (n, d, k) = (ds.n(), ds.d(), config.k);
    if k > n {
        return Err(Error::InvalidParameter(format!("K = {k} exceeds the {n} zones")));
    }
    if n <= 10 * d * k {
        log::warn!("{n} zones for {k} components of dimension {d}; estimates may be unstable");
    }
    let labels = match config.init {
        InitMethod::Given => {
            let l = config.initial_labels.clone().expect("validated");
            check_labels(&l, k, n)?;
            l
        }
        m => init_partition(data, k, m, config.seed, config.restarts)?,
    };
    let started = Instant::now();
    let r0 = Responsibilities::one_hot(&labels, k);
    let mut model = select_components(data, &ds.names, &r0, config)?;
    let mut ll = model.loglik_columns(data)?;
    let mut trace = FitTrace {
        loglik: vec![ll],
        weights: vec![model.weights.clone()],
        seconds: vec![started.elapsed().as_secs_f64()],
        ..Default::default()
    };
    if !ll.is_finite() {
        return Err(Error::Numeric("log-likelihood of the initial model is not finite".into()));
    }
    for it in 1..=config.max_iter {
        let t0 = Instant::now();
        let r = model.e_step_columns(data)?;
        trace.degenerate_rows += r.degenerate_rows;
        let next = cm_steps_columns(&model, data, &ds.names, &r)?;
        let ll_next = next.loglik_columns(data)?;
        if !ll_next.is_finite() {
            return Err(Error::Numeric(format!("log-likelihood became non-finite at iteration {it}")));
        }
        if ll_next < ll - 1e-6 * ll.abs() {
            log::warn!("log-likelihood decreased at iteration {it}: {ll} -> {ll_next}");
        }
        model = next;
        trace.loglik.push(ll_next);
        trace.weights.push(model.weights.clone());
        trace.seconds.push(t0.elapsed().as_secs_f64());
        let change = (ll_next - ll).abs() / ll.abs().max(f64::MIN_POSITIVE);
        ll = ll_next;
        log::debug!("iteration {it}: loglik {ll:.6} (relative change {change:.3e})");
        if change < config.rel_tol {
            trace.converged = true;
            break;
        }
    }
    let responsibilities = model.e_step_columns(data)?;
    let bic = bic_value(ll, model.parameter_count(), n);
    Ok(FitResult { model, responsibilities, trace, loglik: ll, bic })
}

// ---------------------------------------------------------------------------
// Documents and agreement measures.

pub const MODEL_DOCUMENT_VERSION: u32 = 1;

/// Serialized fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub version: u32,
    pub variables: Vec<String>,
    pub weights: Vec<f64>,
    pub components: Vec<VineDistribution>,
    pub config: FitConfig,
    pub trace: FitTrace,
    pub loglik: f64,
    pub bic: f64,
    pub n: usize,
}

impl ModelDocument {
    pub fn new(ds: &Dataset, config: &FitConfig, fit: &FitResult) -> Self {
        ModelDocument {
            version: MODEL_DOCUMENT_VERSION,
            variables: ds.names.clone(),
            weights: fit.model.weights.clone(),
            components: fit.model.components.clone(),
            config: config.clone(),
            trace: fit.trace.clone(),
            loglik: fit.loglik,
            bic: fit.bic,
            n: ds.n(),
        }
    }

    pub fn model(&self) -> Result<MixtureModel> {
        if self.version != MODEL_DOCUMENT_VERSION {
            return Err(Error::Document(format!("unsupported model document version {}", self.version)));
        }
        MixtureModel::new(self.weights.clone(), self.components.clone())
    }
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings of different length");
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&v| c2(v)).sum();
    let rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(a.len() as u64);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        1.0
    } else {
        (index - expected) / (max - expected)
    }
}
