//! Choosing the number of components and leave-one-variable-out importance.

use std::collections::BTreeMap;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::mixture::{self, FitConfig, FitResult, InitMethod};
use crate::vine::VineKind;
use crate::{Error, Result};

pub const DEFAULT_CANDIDATES: [usize; 4] = [2, 4, 6, 10];
/// Hard cap on averaging rounds per search path.
pub const MAX_AVERAGING_ROUNDS: usize = 5;

/// Anything that can score a `(K, vine kind, init)` configuration by BIC.
pub trait BicOracle: Sync {
    fn bic(&self, k: usize, kind: VineKind, init: InitMethod) -> Result<f64>;
}

impl<F> BicOracle for F
where
    F: Fn(usize, VineKind, InitMethod) -> Result<f64> + Sync,
{
    fn bic(&self, k: usize, kind: VineKind, init: InitMethod) -> Result<f64> {
        self(k, kind, init)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub k: usize,
    pub vine_kind: VineKind,
    pub init: InitMethod,
    pub bic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragingStep {
    pub vine_kind: VineKind,
    pub init: InitMethod,
    pub best_pair: (usize, usize),
    pub average: f64,
    /// Values of K fitted because of this step; empty when the search stopped.
    pub fitted: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub k: usize,
    pub vine_kind: VineKind,
    pub init: InitMethod,
    pub bic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSearchReport {
    pub evaluated: Vec<Evaluation>,
    pub trajectory: Vec<AveragingStep>,
    pub chosen: Choice,
}

impl KSearchReport {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["k", "vine", "init", "bic", "error"])?;
        for e in &self.evaluated {
            w.write_record([
                e.k.to_string(),
                e.vine_kind.to_string(),
                e.init.to_string(),
                e.bic.map_or_else(String::new, |b| b.to_string()),
                e.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<output>", e))?;
        Ok(())
    }
}

fn search_path(
    oracle: &dyn BicOracle,
    candidates: &[usize],
    kind: VineKind,
    init: InitMethod,
) -> (Vec<Evaluation>, Vec<AveragingStep>) {
    let run = |ks: &[usize]| -> Vec<Evaluation> {
        ks.par_iter()
            .map(|&k| match oracle.bic(k, kind, init) {
                Ok(b) if b.is_finite() => Evaluation { k, vine_kind: kind, init, bic: Some(b), error: None },
                Ok(b) => Evaluation { k, vine_kind: kind, init, bic: None, error: Some(format!("BIC is {b}")) },
                Err(e) => {
                    log::warn!("K = {k} ({kind}, {init}) failed: {e}");
                    Evaluation { k, vine_kind: kind, init, bic: None, error: Some(e.to_string()) }
                }
            })
            .collect()
    };
    let mut ks = candidates.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut evaluated = run(&ks);
    let mut steps = Vec::new();
    for _ in 0..MAX_AVERAGING_ROUNDS {
        let mut ok: Vec<(f64, usize)> = evaluated.iter().filter_map(|e| e.bic.map(|b| (b, e.k))).collect();
        if ok.len() < 2 {
            break;
        }
        ok.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (k1, k2) = (ok[0].1, ok[1].1);
        let average = (k1 + k2) as f64 / 2.0;
        let targets = if (k1 + k2) % 2 == 0 {
            vec![(k1 + k2) / 2]
        } else {
            let lo = (k1 + k2) / 2;
            vec![lo, lo + 1]
        };
        let fresh: Vec<usize> = targets.into_iter().filter(|t| evaluated.iter().all(|e| e.k != *t)).collect();
        steps.push(AveragingStep { vine_kind: kind, init, best_pair: (k1, k2), average, fitted: fresh.clone() });
        if fresh.is_empty() {
            break;
        }
        evaluated.extend(run(&fresh));
    }
    (evaluated, steps)
}

/// Component-count search. For every vine kind and initialization, all
/// candidates are scored; then the two best values of K are averaged and the
/// average (or both neighbours of a half-integer average) is scored, until the
/// average was already seen. The overall smallest BIC wins; ties go to the
/// earlier configuration and the smaller K.
pub fn search_k_with(
    oracle: &dyn BicOracle,
    candidates: &[usize],
    kinds: &[VineKind],
    inits: &[InitMethod],
) -> Result<KSearchReport> {
    if candidates.is_empty() || kinds.is_empty() || inits.is_empty() {
        return Err(Error::InvalidParameter("search needs candidates, vine kinds and initializations".into()));
    }
    let combos: Vec<(VineKind, InitMethod)> =
        kinds.iter().flat_map(|k| inits.iter().map(move |i| (*k, *i))).collect();
    let paths: Vec<_> = combos.par_iter().map(|&(kind, init)| search_path(oracle, candidates, kind, init)).collect();
    let mut evaluated = Vec::new();
    let mut trajectory = Vec::new();
    for (e, s) in paths {
        evaluated.extend(e);
        trajectory.extend(s);
    }
    let chosen = evaluated
        .iter()
        .filter_map(|e| e.bic.map(|b| Choice { k: e.k, vine_kind: e.vine_kind, init: e.init, bic: b }))
        .reduce(|best, c| if c.bic < best.bic { c } else { best })
        .ok_or_else(|| Error::FitFailed { context: "component search".into(), reason: "every candidate fit failed".into() })?;
    Ok(KSearchReport { evaluated, trajectory, chosen })
}

/// Scores configurations by fitting mixtures, keeping every fit.
pub struct MixtureOracle<'a> {
    ds: &'a Dataset,
    base: FitConfig,
    fits: Mutex<BTreeMap<(usize, String, String), FitResult>>,
}

impl<'a> MixtureOracle<'a> {
    pub fn new(ds: &'a Dataset, base: FitConfig) -> Self {
        MixtureOracle { ds, base, fits: Mutex::new(BTreeMap::new()) }
    }

    pub fn config(&self, k: usize, kind: VineKind, init: InitMethod) -> FitConfig {
        FitConfig { k, vine_kind: kind, init, ..self.base.clone() }
    }

    pub fn take(&self, k: usize, kind: VineKind, init: InitMethod) -> Option<FitResult> {
        self.fits.lock().expect("fit cache").remove(&(k, kind.to_string(), init.to_string()))
    }
}

impl BicOracle for MixtureOracle<'_> {
    fn bic(&self, k: usize, kind: VineKind, init: InitMethod) -> Result<f64> {
        let res = mixture::fit(self.ds, &self.config(k, kind, init))?;
        let bic = res.bic;
        self.fits.lock().expect("fit cache").insert((k, kind.to_string(), init.to_string()), res);
        Ok(bic)
    }
}

/// Runs the component search on data and returns the chosen fit.
pub fn search_k(
    ds: &Dataset,
    base: &FitConfig,
    candidates: &[usize],
    kinds: &[VineKind],
    inits: &[InitMethod],
) -> Result<(FitResult, FitConfig, KSearchReport)> {
    let oracle = MixtureOracle::new(ds, base.clone());
    let report = search_k_with(&oracle, candidates, kinds, inits)?;
    let c = &report.chosen;
    let fit = oracle.take(c.k, c.vine_kind, c.init).expect("chosen fit is cached");
    Ok((fit, oracle.config(c.k, c.vine_kind, c.init), report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LovoRow {
    pub name: String,
    pub domain: String,
    pub bic_lovo: Option<f64>,
    pub delta_bic: Option<f64>,
    pub rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LovoReport {
    pub full_bic: f64,
    /// One row per indicator in dataset order.
    pub rows: Vec<LovoRow>,
}

impl LovoReport {
    /// Rows with a rank, most influential first.
    pub fn ranked(&self) -> Vec<&LovoRow> {
        let mut rows: Vec<&LovoRow> = self.rows.iter().filter(|r| r.rank.is_some()).collect();
        rows.sort_by_key(|r| r.rank);
        rows
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["domain", "indicator", "bic_lovo", "delta_bic", "rank", "error"])?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for r in self.ranked().into_iter().chain(self.rows.iter().filter(|r| r.rank.is_none())) {
            w.write_record([
                r.domain.clone(),
                r.name.clone(),
                opt(r.bic_lovo),
                opt(r.delta_bic),
                r.rank.map_or_else(String::new, |k| k.to_string()),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<output>", e))?;
        Ok(())
    }
}

impl std::fmt::Display for LovoReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<16} {:<28} {:>14} {:>12} {:>5}", "Domain", "Indicator", "BIC(LOVO)", "ΔBIC", "Rank")?;
        for r in self.ranked() {
            writeln!(
                f,
                "{:<16} {:<28} {:>14.2} {:>12.2} {:>5}",
                r.domain,
                r.name,
                r.bic_lovo.unwrap_or(f64::NAN),
                r.delta_bic.unwrap_or(f64::NAN),
                r.rank.unwrap_or(0)
            )?;
        }
        for r in self.rows.iter().filter(|r| r.rank.is_none()) {
            writeln!(f, "{:<16} {:<28} failed: {}", r.domain, r.name, r.error.as_deref().unwrap_or("?"))?;
        }
        Ok(())
    }
}

/// Assigns ranks 1.. by descending ΔBIC; ties keep dataset order.
fn assign_ranks(rows: &mut [LovoRow]) {
    let mut order: Vec<usize> = (0..rows.len()).filter(|&j| rows[j].delta_bic.is_some()).collect();
    order.sort_by(|&a, &b| rows[b].delta_bic.unwrap().total_cmp(&rows[a].delta_bic.unwrap()).then(a.cmp(&b)));
    for (rank, j) in order.into_iter().enumerate() {
        rows[j].rank = Some(rank + 1);
    }
}

/// Leave-one-variable-out importance with a known full-model BIC.
pub fn lovo_with_full(ds: &Dataset, config: &FitConfig, full_bic: f64) -> Result<LovoReport> {
    if ds.d() < 2 {
        return Err(Error::InvalidParameter("leave-one-variable-out needs at least two indicators".into()));
    }
    let mut rows: Vec<LovoRow> = (0..ds.d())
        .into_par_iter()
        .map(|j| {
            let reduced = ds.without_column(j);
            let (bic_lovo, error) = match mixture::fit(&reduced, config) {
                Ok(res) => (Some(res.bic), None),
                Err(e) => {
                    log::warn!("refit without `{}` failed: {e}", ds.names[j]);
                    (None, Some(e.to_string()))
                }
            };
            LovoRow {
                name: ds.names[j].clone(),
                domain: ds.domains[j].clone(),
                bic_lovo,
                delta_bic: bic_lovo.map(|b| b - full_bic),
                rank: None,
                error,
            }
        })
        .collect();
    assign_ranks(&mut rows);
    Ok(LovoReport { full_bic, rows })
}

/// Fits the full model with `config`, then refits once per dropped indicator.
pub fn lovo(ds: &Dataset, config: &FitConfig) -> Result<LovoReport> {
    let full = mixture::fit(ds, config)?;
    lovo_with_full(ds, config, full.bic)
}
