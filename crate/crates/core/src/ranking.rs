//! Most-deprived cluster and the posterior-probability ranking of zones.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataio::{standardize_columns, Dataset};
use crate::mixture::Responsibilities;
use crate::numeric::weighted_kendall_tau;
use crate::{Error, Result};

/// Standardized indicators with signs chosen so that lower values always mean
/// more deprivation.
pub fn deprivation_scaled(ds: &Dataset) -> Result<Vec<Vec<f64>>> {
    if ds.orientation.len() != ds.d() {
        return Err(Error::DimensionMismatch { expected: ds.d(), got: ds.orientation.len() });
    }
    let (z, _) = standardize_columns(ds)?;
    Ok(z.columns
        .into_iter()
        .zip(&ds.orientation)
        .map(|(c, o)| c.into_iter().map(|v| -o.sign() * v).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeprivedClusterScore {
    /// `s_k = Σ_i Σ_p r_ik x_ip` per component.
    pub scores: Vec<f64>,
    /// Index of the smallest score.
    pub k_star: usize,
}

/// Scores every component against already scaled and oriented columns.
pub fn identify_deprived_cluster(r: &Responsibilities, scaled: &[Vec<f64>]) -> Result<DeprivedClusterScore> {
    let n = r.n();
    if let Some(c) = scaled.iter().find(|c| c.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, got: c.len() });
    }
    let row_sums: Vec<f64> = (0..n).map(|i| scaled.iter().map(|c| c[i]).sum()).collect();
    let scores: Vec<f64> = r.columns.iter().map(|rk| rk.iter().zip(&row_sums).map(|(a, b)| a * b).sum()).collect();
    let mut k_star = 0;
    for (k, s) in scores.iter().enumerate().skip(1) {
        if *s < scores[k_star] {
            k_star = k;
        } else if *s == scores[k_star] {
            log::info!("components {} and {} tie on the deprivation score", k_star + 1, k + 1);
        }
    }
    Ok(DeprivedClusterScore { scores, k_star })
}

/// Scales `ds` with [`deprivation_scaled`] and scores the components.
pub fn most_deprived_cluster(r: &Responsibilities, ds: &Dataset) -> Result<DeprivedClusterScore> {
    identify_deprived_cluster(r, &deprivation_scaled(ds)?)
}

/// Competition ranks ("1, 2, 2, 4") with rank 1 for the largest value.
/// Values within `tol` of their predecessor in sorted order share its rank.
pub fn competition_ranks(values: &[f64], tol: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; values.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = if pos > 0 && values[order[pos - 1]] - values[i] <= tol {
            ranks[order[pos - 1]]
        } else {
            pos + 1
        };
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedZone {
    pub zone_id: String,
    pub posterior: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeprivationRanking {
    pub k_star: usize,
    /// Zones in input order.
    pub zones: Vec<RankedZone>,
}

impl DeprivationRanking {
    pub fn ranks(&self) -> Vec<usize> {
        self.zones.iter().map(|z| z.rank).collect()
    }

    /// Zones whose posterior equals that of another zone.
    pub fn shared_rank_count(&self) -> usize {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for z in &self.zones {
            *counts.entry(z.rank).or_default() += 1;
        }
        self.zones.iter().filter(|z| counts[&z.rank] > 1).count()
    }

    /// `zone_id, posterior, rank`, most deprived first.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["zone_id", "posterior", "rank"])?;
        let mut sorted: Vec<&RankedZone> = self.zones.iter().collect();
        sorted.sort_by_key(|z| z.rank);
        for z in sorted {
            w.write_record([z.zone_id.clone(), z.posterior.to_string(), z.rank.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<output>", e))?;
        Ok(())
    }
}

/// Ranks zones by their posterior probability of belonging to `k_star`.
pub fn rank_zones(r: &Responsibilities, k_star: usize, zone_ids: &[String], tol: f64) -> Result<DeprivationRanking> {
    if k_star >= r.k() {
        return Err(Error::InvalidParameter(format!("component {k_star} outside 0..{}", r.k())));
    }
    if zone_ids.len() != r.n() {
        return Err(Error::Misaligned(format!("{} zone ids for {} rows", zone_ids.len(), r.n())));
    }
    let post = &r.columns[k_star];
    let ranks = competition_ranks(post, tol);
    let zones = zone_ids
        .iter()
        .zip(post)
        .zip(ranks)
        .map(|((id, p), rank)| RankedZone { zone_id: id.clone(), posterior: *p, rank })
        .collect();
    Ok(DeprivationRanking { k_star, zones })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankComparison {
    pub spearman: f64,
    pub kendall: f64,
    /// `(zone_id, rank a, rank b)` in the order of the first ranking.
    pub pairs: Vec<(String, f64, f64)>,
}

impl RankComparison {
    /// Long-format export: `zone_id, ranking, rank`.
    pub fn write_long_csv<W: std::io::Write>(&self, names: [&str; 2], writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["zone_id", "ranking", "rank"])?;
        for (id, a, b) in &self.pairs {
            w.write_record([id.as_str(), names[0], &a.to_string()])?;
            w.write_record([id.as_str(), names[1], &b.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<output>", e))?;
        Ok(())
    }
}

/// Average ranks (1 = smallest), ties sharing the mean position.
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            out[i] = avg;
        }
        start = end;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Spearman's rho (Pearson correlation of average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&average_ranks(a), &average_ranks(b))
}

fn tied_pairs(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    s.chunk_by(|a, b| a == b).map(|g| (g.len() * (g.len() - 1) / 2) as f64).sum()
}

/// Kendall's tau-b.
pub fn kendall(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let n0 = n * (n - 1.0) / 2.0;
    let balance = weighted_kendall_tau(a, b, &vec![1.0; a.len()]) * n0;
    let denom = ((n0 - tied_pairs(a)) * (n0 - tied_pairs(b))).sqrt();
    if denom > 0.0 {
        (balance / denom).clamp(-1.0, 1.0)
    } else {
        f64::NAN
    }
}

/// Compares two rankings keyed by zone id.
pub fn compare_rankings(a: &[(String, f64)], b: &[(String, f64)]) -> Result<RankComparison> {
    if a.len() != b.len() {
        return Err(Error::Misaligned(format!("rankings cover {} and {} zones", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::InvalidParameter("rank correlation needs at least two zones".into()));
    }
    let lookup: HashMap<&str, f64> = b.iter().map(|(id, r)| (id.as_str(), *r)).collect();
    if lookup.len() != b.len() {
        return Err(Error::Misaligned("duplicate zone ids in the second ranking".into()));
    }
    let mut pairs = Vec::with_capacity(a.len());
    for (id, ra) in a {
        let rb = lookup.get(id.as_str()).ok_or_else(|| Error::Misaligned(format!("zone `{id}` missing from the second ranking")))?;
        pairs.push((id.clone(), *ra, *rb));
    }
    let xa: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let xb: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    Ok(RankComparison { spearman: spearman(&xa, &xb), kendall: kendall(&xa, &xb), pairs })
}

/// Long-format cluster profile for boxplots:
/// `zone_id, cluster, indicator, value` with 1-based clusters.
pub fn write_cluster_profiles<W: std::io::Write>(ds: &Dataset, labels: &[usize], scaled: &[Vec<f64>], writer: W) -> Result<()> {
    if labels.len() != ds.n() {
        return Err(Error::Misaligned(format!("{} labels for {} zones", labels.len(), ds.n())));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["zone_id", "cluster", "indicator", "value"])?;
    for (i, id) in ds.zone_ids.iter().enumerate() {
        for (j, name) in ds.names.iter().enumerate() {
            w.write_record([id.clone(), (labels[i] + 1).to_string(), name.clone(), scaled[j][i].to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Orientation;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("z{i}")).collect()
    }

    #[test]
    fn competition_example() {
        assert_eq!(competition_ranks(&[0.9, 0.7, 0.7, 0.1], 0.0), vec![1, 2, 2, 4]);
        assert_eq!(competition_ranks(&[0.5], 0.0), vec![1]);
        assert_eq!(competition_ranks(&[0.9, 0.89, 0.5], 0.02), vec![1, 1, 3]);
    }

    #[test]
    fn rank_zones_uses_k_star_column() {
        let r = Responsibilities { columns: vec![vec![0.1, 0.3, 0.3, 0.9], vec![0.9, 0.7, 0.7, 0.1]], degenerate_rows: 0 };
        let ranking = rank_zones(&r, 1, &ids(4), 0.0).unwrap();
        assert_eq!(ranking.ranks(), vec![1, 2, 2, 4]);
        assert_eq!(ranking.shared_rank_count(), 2);
        let mut out = Vec::new();
        ranking.write_csv(&mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("zone_id,posterior,rank\nz0,0.9,1\n"));
        assert!(rank_zones(&r, 2, &ids(4), 0.0).is_err());
    }

    #[test]
    fn deprived_cluster_has_lower_oriented_values() {
        // rows 3..6 are more deprived on both indicators; the second is reverse oriented
        let cols = vec![vec![1.0, 2.0, 1.5, 8.0, 9.0, 7.0], vec![9.0, 8.0, 9.5, 1.0, 2.0, 1.5]];
        let mut ds = Dataset::from_columns(ids(6), vec!["a".into(), "b".into()], cols).unwrap();
        ds.orientation[1] = Orientation::LowerIsDeprived;
        let r = Responsibilities::one_hot(&[0, 0, 0, 1, 1, 1], 2);
        let s = most_deprived_cluster(&r, &ds).unwrap();
        assert_eq!(s.k_star, 1);
        // one-hot responsibilities reduce to cluster sums
        let x = deprivation_scaled(&ds).unwrap();
        let sum1: f64 = (3..6).map(|i| x[0][i] + x[1][i]).sum();
        assert!((s.scores[1] - sum1).abs() < 1e-12);
    }

    #[test]
    fn scores_match_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, d, k) = (57, 5, 3);
        let x: Vec<Vec<f64>> = (0..d).map(|_| (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect()).collect();
        let mut columns = vec![vec![0.0; n]; k];
        for i in 0..n {
            let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            for c in 0..k {
                columns[c][i] = raw[c] / s;
            }
        }
        let r = Responsibilities { columns, degenerate_rows: 0 };
        let got = identify_deprived_cluster(&r, &x).unwrap();
        for c in 0..k {
            let mut s = 0.0;
            for i in 0..n {
                for p in 0..d {
                    s += r.columns[c][i] * x[p][i];
                }
            }
            assert!((got.scores[c] - s).abs() < 1e-10);
        }
        // shifting one column moves every score by c times the cluster mass
        let mut shifted = x.clone();
        for v in shifted[2].iter_mut() {
            *v += 0.75;
        }
        let moved = identify_deprived_cluster(&r, &shifted).unwrap();
        for c in 0..k {
            let mass: f64 = r.columns[c].iter().sum();
            assert!((moved.scores[c] - got.scores[c] - 0.75 * mass).abs() < 1e-10);
        }
    }

    fn direct_spearman(a: &[f64], b: &[f64]) -> f64 {
        // distinct ranks: 1 - 6 Σ d² / (n (n² - 1))
        let n = a.len() as f64;
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        1.0 - 6.0 * d2 / (n * (n * n - 1.0))
    }

    #[test]
    fn rank_correlation_extremes_and_random() {
        let n = 1000;
        let a: Vec<f64> = (1..=n).map(|v| v as f64).collect();
        let rev: Vec<f64> = a.iter().rev().copied().collect();
        assert!((spearman(&a, &a) - 1.0).abs() < 1e-12);
        assert!((spearman(&a, &rev) + 1.0).abs() < 1e-12);
        assert!((kendall(&a, &rev) + 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = a.clone();
        p.shuffle(&mut rng);
        let s = spearman(&a, &p);
        assert!((s - direct_spearman(&a, &p)).abs() < 1e-10);
        assert!(s.abs() < 0.1);
    }

    fn tau_b_pairs(a: &[f64], b: &[f64]) -> f64 {
        let (mut s, mut ta, mut tb) = (0.0, 0.0, 0.0);
        let n = a.len();
        for i in 0..n {
            for j in i + 1..n {
                let sgn = |u: f64, v: f64| if u == v { 0.0 } else { (u - v).signum() };
                let (da, db) = (sgn(a[i], a[j]), sgn(b[i], b[j]));
                s += da * db;
                ta += da.abs();
                tb += db.abs();
            }
        }
        s / (ta * tb).sqrt()
    }

    #[test]
    fn kendall_handles_ties_as_tau_b() {
        let a = [1.0, 2.0, 2.0, 4.0, 5.0, 5.0, 5.0, 8.0];
        assert_eq!(kendall(&a, &a), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let x: Vec<f64> = (0..40).map(|_| rng.random_range(0..6) as f64).collect();
            let y: Vec<f64> = (0..40).map(|_| rng.random_range(0..4) as f64).collect();
            assert!((kendall(&x, &y) - tau_b_pairs(&x, &y)).abs() < 1e-12);
        }
    }

    #[test]
    fn comparison_aligns_by_zone() {
        let a: Vec<(String, f64)> = vec![("x".into(), 1.0), ("y".into(), 2.0), ("z".into(), 3.0)];
        let b: Vec<(String, f64)> = vec![("z".into(), 3.0), ("x".into(), 1.0), ("y".into(), 2.0)];
        let c = compare_rankings(&a, &b).unwrap();
        assert!((c.spearman - 1.0).abs() < 1e-12);
        let bad: Vec<(String, f64)> = vec![("w".into(), 3.0), ("x".into(), 1.0), ("y".into(), 2.0)];
        assert!(matches!(compare_rankings(&a, &bad), Err(Error::Misaligned(_))));
        let mut out = Vec::new();
        c.write_long_csv(["cluster", "simd"], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 7);
    }

    proptest! {
        #[test]
        fn ranks_survive_increasing_transforms(v in proptest::collection::vec(0.0f64..1.0, 1..60), a in 0.1f64..5.0, b in -3.0f64..3.0) {
            let base = competition_ranks(&v, 0.0);
            let cubic: Vec<f64> = v.iter().map(|x| a * x.powi(3) + b).collect();
            let logit: Vec<f64> = v.iter().map(|x| (x / (1.0 - x)).ln()).collect();
            prop_assert_eq!(&base, &competition_ranks(&logit, 0.0));
            // the affine cubic can merge values by rounding, so only check when it keeps distinctness
            let distinct = |x: &[f64]| { let mut s = x.to_vec(); s.sort_by(f64::total_cmp); s.dedup(); s.len() };
            if distinct(&cubic) == distinct(&v) {
                prop_assert_eq!(&base, &competition_ranks(&cubic, 0.0));
            }
        }

        #[test]
        fn competition_numbering_skips_by_multiplicity(v in proptest::collection::vec(0u8..6, 1..40)) {
            let x: Vec<f64> = v.iter().map(|&k| k as f64).collect();
            let ranks = competition_ranks(&x, 0.0);
            let mut counts = std::collections::BTreeMap::new();
            for r in &ranks { *counts.entry(*r).or_insert(0usize) += 1; }
            let keys: Vec<(usize, usize)> = counts.into_iter().collect();
            prop_assert_eq!(keys[0].0, 1);
            for w in keys.windows(2) {
                prop_assert_eq!(w[1].0, w[0].0 + w[0].1);
            }
        }
    }
}
