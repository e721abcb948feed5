//! Domain-score arithmetic of the Scottish Index of Multiple Deprivation.

use serde::{Deserialize, Serialize};

use crate::dataio::{mean_sd, Dataset};
use crate::ranking::competition_ranks;
use crate::{Error, Result};

/// Published domain weights in percent.
pub const DEFAULT_DOMAIN_WEIGHTS: [(&str, f64); 7] = [
    ("Income", 28.0),
    ("Employment", 28.0),
    ("Health", 14.0),
    ("Education", 14.0),
    ("Access", 9.0),
    ("Crime", 5.0),
    ("Housing", 2.0),
];

/// Share of the population counted by a rate domain.
pub fn rate_score(counts: &[f64], population: f64) -> Result<f64> {
    if !(population > 0.0) {
        return Err(Error::InvalidParameter(format!("population must be positive, got {population}")));
    }
    if let Some(c) = counts.iter().find(|c| !(**c >= 0.0)) {
        return Err(Error::InvalidParameter(format!("negative or missing count {c}")));
    }
    let total: f64 = counts.iter().sum();
    if total > population {
        log::warn!("counts sum to {total}, above the population {population}");
    }
    Ok(total / population)
}

/// `(rank − mean) / sd` with the sample standard deviation.
pub fn standardize_rank_vector(ranks: &[f64]) -> Result<Vec<f64>> {
    if ranks.len() < 2 {
        return Err(Error::InvalidParameter("at least two ranks are needed".into()));
    }
    let (mean, sd) = mean_sd(ranks);
    if !(sd > 0.0) {
        return Err(Error::ZeroVariance("rank vector".into()));
    }
    Ok(ranks.iter().map(|r| (r - mean) / sd).collect())
}

/// `Σ_j w_j z_j` for one zone, standardizing its own indicator ranks.
pub fn weighted_domain_score(ranks: &[f64], weights: &[f64]) -> Result<f64> {
    if ranks.len() != weights.len() {
        return Err(Error::DimensionMismatch { expected: ranks.len(), got: weights.len() });
    }
    check_weights(weights)?;
    let z = standardize_rank_vector(ranks)?;
    Ok(z.iter().zip(weights).map(|(z, w)| z * w).sum())
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !(0.0..=1.0).contains(w)) || weights.iter().sum::<f64>() > 1.0 + 1e-9 {
        return Err(Error::InvalidParameter(format!("weights {weights:?} must lie in [0, 1] and sum to at most 1")));
    }
    Ok(())
}

/// Direction along which ranks are standardized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    /// Each zone's ranks across the domain's indicators.
    WithinZone,
    /// Each indicator's ranks across all zones.
    #[default]
    WithinIndicator,
}

/// Weighted z-score domain for many zones; `ranks[j][i]` is indicator `j`
/// in zone `i`.
pub fn weighted_domain_scores(ranks: &[Vec<f64>], weights: &[f64], axis: Axis) -> Result<Vec<f64>> {
    if ranks.len() != weights.len() {
        return Err(Error::DimensionMismatch { expected: ranks.len(), got: weights.len() });
    }
    check_weights(weights)?;
    let n = ranks.first().map_or(0, Vec::len);
    if let Some(c) = ranks.iter().find(|c| c.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, got: c.len() });
    }
    match axis {
        Axis::WithinZone => (0..n)
            .map(|i| weighted_domain_score(&ranks.iter().map(|c| c[i]).collect::<Vec<_>>(), weights))
            .collect(),
        Axis::WithinIndicator => {
            let z: Vec<Vec<f64>> = ranks.iter().map(|c| standardize_rank_vector(c)).collect::<Result<_>>()?;
            Ok((0..n).map(|i| z.iter().zip(weights).map(|(c, w)| w * c[i]).sum()).collect())
        }
    }
}

/// Competition ranks with rank 1 for the highest (most deprived) score.
pub fn domain_rank(scores: &[f64]) -> Vec<usize> {
    competition_ranks(scores, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedIndicator {
    pub name: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DomainSpec {
    /// Summed counts over a population column.
    Rate { name: String, counts: Vec<String>, population: String },
    /// Weighted z-scores of indicator ranks.
    Weighted {
        name: String,
        indicators: Vec<WeightedIndicator>,
        #[serde(default)]
        axis: Axis,
    },
}

impl DomainSpec {
    pub fn name(&self) -> &str {
        match self {
            DomainSpec::Rate { name, .. } | DomainSpec::Weighted { name, .. } => name,
        }
    }
}

/// Domain definitions read by `simd-score`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainConfig {
    #[serde(default = "default_weights")]
    pub domain_weights: Vec<(String, f64)>,
    #[serde(rename = "domain")]
    pub domains: Vec<DomainSpec>,
}

fn default_weights() -> Vec<(String, f64)> {
    DEFAULT_DOMAIN_WEIGHTS.iter().map(|(n, w)| (n.to_string(), *w)).collect()
}

impl std::str::FromStr for DomainConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Document(format!("domain config: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainResult {
    pub name: String,
    pub scores: Vec<f64>,
    pub ranks: Vec<usize>,
}

/// Evaluates every configured domain on a table of raw columns.
pub fn score_domains(table: &Dataset, config: &DomainConfig) -> Result<Vec<DomainResult>> {
    let column = |name: &str| -> Result<&Vec<f64>> {
        table.column_index(name).map(|j| &table.columns[j])
    };
    config
        .domains
        .iter()
        .map(|spec| {
            let scores = match spec {
                DomainSpec::Rate { counts, population, .. } => {
                    let cols: Vec<&Vec<f64>> = counts.iter().map(|c| column(c)).collect::<Result<_>>()?;
                    let pop = column(population)?;
                    (0..table.n())
                        .map(|i| rate_score(&cols.iter().map(|c| c[i]).collect::<Vec<_>>(), pop[i]))
                        .collect::<Result<Vec<f64>>>()
                }
                DomainSpec::Weighted { indicators, axis, .. } => {
                    let ranks: Vec<Vec<f64>> = indicators.iter().map(|w| column(&w.name).cloned()).collect::<Result<_>>()?;
                    let weights: Vec<f64> = indicators.iter().map(|w| w.weight).collect();
                    weighted_domain_scores(&ranks, &weights, *axis)
                }
            }
            .map_err(|e| e.annotate(format!("domain `{}`", spec.name())))?;
            let ranks = domain_rank(&scores);
            Ok(DomainResult { name: spec.name().to_string(), scores, ranks })
        })
        .collect()
}

/// `zone_id, <domain>_score, <domain>_rank, ...`.
pub fn write_domain_csv<W: std::io::Write>(zone_ids: &[String], results: &[DomainResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["zone_id".to_string()];
    for r in results {
        header.push(format!("{}_score", r.name));
        header.push(format!("{}_rank", r.name));
    }
    w.write_record(&header)?;
    for (i, id) in zone_ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        for r in results {
            rec.push(r.scores[i].to_string());
            rec.push(r.ranks[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}
