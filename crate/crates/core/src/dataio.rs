//! Indicator tables: loading, screening, missing-row removal and scaling.
//!
//! Missing cells are stored as `NaN` until [`drop_missing_rows`] removes the
//! affected zones.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Direction in which an indicator measures deprivation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    #[default]
    #[serde(alias = "higher")]
    HigherIsDeprived,
    #[serde(alias = "lower")]
    LowerIsDeprived,
}

impl Orientation {
    /// Multiplier that turns the indicator into "higher is more deprived".
    pub fn sign(self) -> f64 {
        match self {
            Orientation::HigherIsDeprived => 1.0,
            Orientation::LowerIsDeprived => -1.0,
        }
    }
}

/// Zones × indicators, stored column by column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub zone_ids: Vec<String>,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub orientation: Vec<Orientation>,
    pub domains: Vec<String>,
    /// For a count indicator, the rate indicator it duplicates.
    pub pair_with: Vec<Option<String>>,
    pub population: Option<Vec<f64>>,
}

impl Dataset {
    /// Builds a dataset with default metadata (higher is deprived, no
    /// domain, no pairs).
    pub fn from_columns(zone_ids: Vec<String>, names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        let d = names.len();
        let ds = Dataset {
            zone_ids,
            names,
            columns,
            orientation: vec![Orientation::HigherIsDeprived; d],
            domains: vec![String::new(); d],
            pair_with: vec![None; d],
            population: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = (self.zone_ids.len(), self.names.len());
        if self.columns.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: self.columns.len() });
        }
        for col in &self.columns {
            if col.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: col.len() });
            }
        }
        for meta in [self.orientation.len(), self.domains.len(), self.pair_with.len()] {
            if meta != d {
                return Err(Error::DimensionMismatch { expected: d, got: meta });
            }
        }
        if let Some(p) = &self.population {
            if p.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: p.len() });
            }
        }
        let mut seen = HashSet::new();
        for name in &self.names {
            if !seen.insert(name) {
                return Err(Error::Document(format!("indicator `{name}` appears twice")));
            }
        }
        let mut seen = HashSet::new();
        for z in &self.zone_ids {
            if !seen.insert(z) {
                return Err(Error::DuplicateZone(z.clone()));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.zone_ids.len()
    }

    pub fn d(&self) -> usize {
        self.names.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names.iter().position(|n| n == name).ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn has_missing(&self) -> bool {
        self.columns.iter().flatten().any(|v| v.is_nan())
    }

    /// Keeps the listed indicators, in the given order.
    pub fn select_columns(&self, idx: &[usize]) -> Dataset {
        Dataset {
            zone_ids: self.zone_ids.clone(),
            names: idx.iter().map(|&j| self.names[j].clone()).collect(),
            columns: idx.iter().map(|&j| self.columns[j].clone()).collect(),
            orientation: idx.iter().map(|&j| self.orientation[j]).collect(),
            domains: idx.iter().map(|&j| self.domains[j].clone()).collect(),
            pair_with: idx.iter().map(|&j| self.pair_with[j].clone()).collect(),
            population: self.population.clone(),
        }
    }

    /// Keeps the listed zones, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            zone_ids: idx.iter().map(|&i| self.zone_ids[i].clone()).collect(),
            columns: self.columns.iter().map(|c| idx.iter().map(|&i| c[i]).collect()).collect(),
            population: self.population.as_ref().map(|p| idx.iter().map(|&i| p[i]).collect()),
            ..self.clone()
        }
    }

    /// Copy of the dataset without indicator `j`.
    pub fn without_column(&self, j: usize) -> Dataset {
        let keep: Vec<usize> = (0..self.d()).filter(|&k| k != j).collect();
        self.select_columns(&keep)
    }

    /// Columns multiplied by their orientation sign, so larger values always
    /// mean more deprivation.
    pub fn oriented_columns(&self) -> Vec<Vec<f64>> {
        self.columns
            .iter()
            .zip(&self.orientation)
            .map(|(c, o)| c.iter().map(|v| v * o.sign()).collect())
            .collect()
    }

    /// Fails unless every cell is present.
    pub fn require_complete(&self) -> Result<()> {
        if self.n() == 0 || self.d() == 0 {
            return Err(Error::EmptyDataset);
        }
        if let Some(j) = self.columns.iter().position(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "indicator `{}` has missing values; remove incomplete zones first",
                self.names[j]
            )));
        }
        Ok(())
    }
}

/// Role of a column in the input table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    #[default]
    Indicator,
    ZoneId,
    Population,
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    #[serde(default)]
    pub role: Role,
    #[serde(default)]
    pub domain: Option<String>,
    #[serde(default)]
    pub orientation: Orientation,
    #[serde(default)]
    pub pair_with: Option<String>,
}

/// Column mapping for [`load_table`].
///
/// ```toml
/// sentinels = ["*"]
///
/// [columns.Data_Zone]
/// role = "zone_id"
///
/// [columns.Employment_rate]
/// domain = "Employment"
///
/// [columns.Employment_count]
/// domain = "Employment"
/// pair_with = "Employment_rate"
///
/// [columns.Attainment]
/// domain = "Education"
/// orientation = "lower"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    #[serde(default = "default_sentinels")]
    pub sentinels: Vec<String>,
    /// Use every unlisted column (other than the zone id) as an indicator.
    #[serde(default)]
    pub include_unlisted: bool,
    pub columns: BTreeMap<String, ColumnSpec>,
}

fn default_sentinels() -> Vec<String> {
    vec!["*".to_string()]
}

impl Schema {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    /// Schema taking the first column as zone id and every other column as
    /// an indicator.
    pub fn first_column_zone(zone_column: &str) -> Self {
        let mut columns = BTreeMap::new();
        columns.insert(zone_column.to_string(), ColumnSpec { role: Role::ZoneId, ..Default::default() });
        Schema { sentinels: default_sentinels(), include_unlisted: true, columns }
    }
}

impl FromStr for Schema {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let schema: Schema = toml::from_str(s).map_err(|e| Error::Document(format!("schema: {e}")))?;
        let zones = schema.columns.values().filter(|c| c.role == Role::ZoneId).count();
        if zones != 1 {
            return Err(Error::Document(format!("schema must name exactly one zone_id column, found {zones}")));
        }
        Ok(schema)
    }
}

fn parse_cell(raw: &str, sentinels: &[String], column: &str, row: usize) -> Result<f64> {
    let cell = raw.trim();
    if cell.is_empty() || sentinels.iter().any(|s| s == cell) {
        return Ok(f64::NAN);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::NonNumeric { column: column.to_string(), row, value: raw.to_string() }),
    }
}

/// Reads a CSV table (header row, comma separated) into a dataset.
/// Indicators keep the order of the file's header.
pub fn load_table(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_table(file, schema)
}

/// [`load_table`] over any reader.
pub fn read_table<R: std::io::Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::Headers).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    for name in schema.columns.keys() {
        if !headers.contains(name) {
            return Err(Error::MissingColumn(name.clone()));
        }
    }
    let spec_of = |h: &str| -> Option<ColumnSpec> {
        match schema.columns.get(h) {
            Some(s) => Some(s.clone()),
            None if schema.include_unlisted => Some(ColumnSpec::default()),
            None => None,
        }
    };
    let mut zone_col = None;
    let mut pop_col = None;
    let mut indicators: Vec<(usize, ColumnSpec)> = Vec::new();
    for (j, h) in headers.iter().enumerate() {
        match spec_of(h) {
            Some(s) if s.role == Role::ZoneId => zone_col = Some(j),
            Some(s) if s.role == Role::Population => pop_col = Some(j),
            Some(s) if s.role == Role::Indicator => indicators.push((j, s)),
            _ => {}
        }
    }
    let zone_col = zone_col.ok_or_else(|| Error::MissingColumn("zone_id".into()))?;

    let mut zone_ids = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); indicators.len()];
    let mut population = pop_col.map(|_| Vec::new());
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let zone = rec.get(zone_col).unwrap_or("").trim().to_string();
        if !seen.insert(zone.clone()) {
            return Err(Error::DuplicateZone(zone));
        }
        zone_ids.push(zone);
        for (slot, (j, _)) in columns.iter_mut().zip(&indicators) {
            slot.push(parse_cell(rec.get(*j).unwrap_or(""), &schema.sentinels, &headers[*j], row)?);
        }
        if let (Some(p), Some(j)) = (population.as_mut(), pop_col) {
            p.push(parse_cell(rec.get(j).unwrap_or(""), &schema.sentinels, &headers[j], row)?);
        }
    }
    let ds = Dataset {
        zone_ids,
        names: indicators.iter().map(|(j, _)| headers[*j].clone()).collect(),
        columns,
        orientation: indicators.iter().map(|(_, s)| s.orientation).collect(),
        domains: indicators.iter().map(|(_, s)| s.domain.clone().unwrap_or_default()).collect(),
        pair_with: indicators.iter().map(|(_, s)| s.pair_with.clone()).collect(),
        population,
    };
    for p in ds.pair_with.iter().flatten() {
        if !ds.names.contains(p) {
            return Err(Error::MissingColumn(p.clone()));
        }
    }
    ds.validate()?;
    Ok(ds)
}

/// Writes the dataset as CSV with a `zone_id` column first; missing cells
/// are written empty.
pub fn write_table<W: std::io::Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["zone_id".to_string()];
    header.extend(ds.names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut rec = vec![ds.zone_ids[i].clone()];
        rec.extend(ds.columns.iter().map(|c| if c[i].is_nan() { String::new() } else { c[i].to_string() }));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

/// Which member of a highly correlated rate/count pair to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PairPreference {
    #[default]
    KeepRate,
    KeepCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreeningRules {
    pub corr_threshold: f64,
    pub min_unique_frac: f64,
    pub max_zero_frac: f64,
    pub prefer: PairPreference,
}

impl Default for ScreeningRules {
    fn default() -> Self {
        ScreeningRules { corr_threshold: 0.9, min_unique_frac: 0.10, max_zero_frac: 0.10, prefer: PairPreference::KeepRate }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationDrop {
    pub kept: String,
    pub dropped: String,
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionDrop {
    pub name: String,
    pub fraction: f64,
}

/// Record of everything the preprocessing removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PreprocessReport {
    pub dropped_high_correlation: Vec<CorrelationDrop>,
    pub dropped_discrete: Vec<FractionDrop>,
    pub dropped_zero_inflated: Vec<FractionDrop>,
    pub rows_removed_missing: usize,
    pub n_before: usize,
    pub n_after: usize,
    pub d_before: usize,
    pub d_after: usize,
}

/// Pearson correlation over the rows where both values are present.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let pairs: Vec<(f64, f64)> = x.iter().zip(y).filter(|(a, b)| !a.is_nan() && !b.is_nan()).map(|(a, b)| (*a, *b)).collect();
    let n = pairs.len() as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Distinct observed values divided by the number of zones.
pub fn unique_fraction(col: &[f64]) -> f64 {
    if col.is_empty() {
        return 0.0;
    }
    let distinct: HashSet<u64> =
        col.iter().filter(|v| !v.is_nan()).map(|v| if *v == 0.0 { 0 } else { v.to_bits() }).collect();
    distinct.len() as f64 / col.len() as f64
}

/// Share of exact zeros among the observed values.
pub fn zero_fraction(col: &[f64]) -> f64 {
    let observed = col.iter().filter(|v| !v.is_nan()).count();
    if observed == 0 {
        return 0.0;
    }
    col.iter().filter(|v| **v == 0.0).count() as f64 / observed as f64
}

/// Applies the indicator screening rules: for each declared rate/count pair
/// with Pearson correlation at or above the threshold one member is
/// dropped, then indicators with too few distinct values or too many zeros.
/// An indicator appears in at most one drop list.
pub fn screen_indicators(ds: &Dataset, rules: &ScreeningRules) -> Result<(Dataset, PreprocessReport)> {
    if !(rules.corr_threshold > 0.0 && rules.corr_threshold <= 1.0) {
        return Err(Error::InvalidParameter(format!("correlation threshold {} outside (0, 1]", rules.corr_threshold)));
    }
    for f in [rules.min_unique_frac, rules.max_zero_frac] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::InvalidParameter(format!("fraction {f} outside [0, 1]")));
        }
    }
    let mut report = PreprocessReport { n_before: ds.n(), n_after: ds.n(), d_before: ds.d(), ..Default::default() };
    let mut dropped = vec![false; ds.d()];
    for (j, pair) in ds.pair_with.iter().enumerate() {
        let Some(rate_name) = pair else { continue };
        let r = ds.column_index(rate_name)?;
        if dropped[j] || dropped[r] {
            continue;
        }
        let corr = pearson(&ds.columns[j], &ds.columns[r]);
        if corr >= rules.corr_threshold {
            let (keep, drop) = match rules.prefer {
                PairPreference::KeepRate => (r, j),
                PairPreference::KeepCount => (j, r),
            };
            dropped[drop] = true;
            report.dropped_high_correlation.push(CorrelationDrop {
                kept: ds.names[keep].clone(),
                dropped: ds.names[drop].clone(),
                correlation: corr,
            });
        }
    }
    for j in 0..ds.d() {
        if dropped[j] {
            continue;
        }
        let uf = unique_fraction(&ds.columns[j]);
        if uf < rules.min_unique_frac {
            dropped[j] = true;
            report.dropped_discrete.push(FractionDrop { name: ds.names[j].clone(), fraction: uf });
            continue;
        }
        let zf = zero_fraction(&ds.columns[j]);
        if zf > rules.max_zero_frac {
            dropped[j] = true;
            report.dropped_zero_inflated.push(FractionDrop { name: ds.names[j].clone(), fraction: zf });
        }
    }
    let keep: Vec<usize> = (0..ds.d()).filter(|&j| !dropped[j]).collect();
    let mut out = ds.select_columns(&keep);
    // pairs pointing at a dropped column no longer mean anything
    for p in out.pair_with.iter_mut() {
        if p.as_ref().is_some_and(|name| !out.names.contains(name)) {
            *p = None;
        }
    }
    report.d_after = out.d();
    Ok((out, report))
}

/// Removes every zone with at least one missing indicator.
pub fn drop_missing_rows(ds: &Dataset) -> Result<(Dataset, usize)> {
    let keep: Vec<usize> = (0..ds.n()).filter(|&i| ds.columns.iter().all(|c| !c[i].is_nan())).collect();
    if keep.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let removed = ds.n() - keep.len();
    Ok((ds.select_rows(&keep), removed))
}

/// Sample mean and (n − 1) standard deviation of the observed values.
pub fn mean_sd(col: &[f64]) -> (f64, f64) {
    let obs: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
    let n = obs.len() as f64;
    let mean = obs.iter().sum::<f64>() / n;
    let var = obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Location and scale used to standardize one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub mean: f64,
    pub sd: f64,
}

/// Centres each column and divides by its sample standard deviation.
pub fn standardize_columns(ds: &Dataset) -> Result<(Dataset, Vec<Scaling>)> {
    let mut out = ds.clone();
    let mut scales = Vec::with_capacity(ds.d());
    for (j, col) in out.columns.iter_mut().enumerate() {
        let (mean, sd) = mean_sd(col);
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(Error::ZeroVariance(ds.names[j].clone()));
        }
        for v in col.iter_mut() {
            *v = (*v - mean) / sd;
        }
        scales.push(Scaling { mean, sd });
    }
    Ok((out, scales))
}

impl fmt::Display for PreprocessReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "zones: {} -> {} ({} removed for missing values)", self.n_before, self.n_after, self.rows_removed_missing)?;
        writeln!(f, "indicators: {} -> {}", self.d_before, self.d_after)?;
        for c in &self.dropped_high_correlation {
            writeln!(f, "  dropped {} (r = {:.3} with {})", c.dropped, c.correlation, c.kept)?;
        }
        for c in &self.dropped_discrete {
            writeln!(f, "  dropped {} ({:.1}% distinct values)", c.name, 100.0 * c.fraction)?;
        }
        for c in &self.dropped_zero_inflated {
            writeln!(f, "  dropped {} ({:.1}% zeros)", c.name, 100.0 * c.fraction)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SCHEMA: &str = r#"
sentinels = ["*", "NA"]

[columns.zone]
role = "zone_id"

[columns.a]
domain = "Health"

[columns.b]
domain = "Education"
orientation = "lower"

[columns.c]
pair_with = "a"

[columns.pop]
role = "population"
"#;

    fn zones(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("Z{i:03}")).collect()
    }

    #[test]
    fn loads_table_with_sentinels() {
        let csv = "zone,a,b,c,pop,extra\nZ1,1.5,2,3,100,x\nZ2,*,4,5,200,y\nZ3,2.5,,7,300,z\nZ4,3,8,NA,400,w\nZ5,4,9,10,500,v\n";
        let schema: Schema = SCHEMA.parse().unwrap();
        let ds = read_table(csv.as_bytes(), &schema).unwrap();
        assert_eq!((ds.n(), ds.d()), (5, 3));
        assert_eq!(ds.names, ["a", "b", "c"]);
        assert!(ds.columns[0][1].is_nan() && ds.columns[1][2].is_nan() && ds.columns[2][3].is_nan());
        assert_eq!(ds.columns[0][0], 1.5);
        assert_eq!(ds.orientation[1], Orientation::LowerIsDeprived);
        assert_eq!(ds.domains[0], "Health");
        assert_eq!(ds.pair_with[2].as_deref(), Some("a"));
        assert_eq!(ds.population.as_deref(), Some(&[100.0, 200.0, 300.0, 400.0, 500.0][..]));
        let (clean, removed) = drop_missing_rows(&ds).unwrap();
        assert_eq!((clean.n(), removed), (2, 3));
        assert_eq!(clean.zone_ids, ["Z1", "Z5"]);
    }

    #[test]
    fn rejects_bad_cells_and_duplicate_zones() {
        let schema: Schema = SCHEMA.parse().unwrap();
        let bad = "zone,a,b,c,pop\nZ1,1,2,oops,1\n";
        assert!(matches!(read_table(bad.as_bytes(), &schema), Err(Error::NonNumeric { row: 1, .. })));
        let dup = "zone,a,b,c,pop\nZ1,1,2,3,1\nZ1,1,2,3,1\n";
        assert!(matches!(read_table(dup.as_bytes(), &schema), Err(Error::DuplicateZone(_))));
        let missing = "zone,a,b,pop\nZ1,1,2,1\n";
        assert!(matches!(read_table(missing.as_bytes(), &schema), Err(Error::MissingColumn(_))));
        assert!(load_table("/nonexistent/file.csv", &schema).is_err());
    }

    #[test]
    fn unlisted_columns_become_indicators_on_request() {
        let schema = Schema::first_column_zone("id");
        let ds = read_table("id,x,y\nA,1,2\nB,3,4\n".as_bytes(), &schema).unwrap();
        assert_eq!(ds.names, ["x", "y"]);
    }

    #[test]
    fn missing_rows_removed_exactly() {
        let mut cols = vec![(0..10).map(f64::from).collect::<Vec<_>>(); 3];
        cols[0][2] = f64::NAN;
        cols[1][5] = f64::NAN;
        cols[2][9] = f64::NAN;
        let ds = Dataset::from_columns(zones(10), vec!["a".into(), "b".into(), "c".into()], cols).unwrap();
        let (clean, removed) = drop_missing_rows(&ds).unwrap();
        assert_eq!((clean.n(), removed), (7, 3));
        let (again, zero) = drop_missing_rows(&clean).unwrap();
        assert_eq!((again, zero), (clean, 0));
        let all = Dataset::from_columns(zones(2), vec!["a".into()], vec![vec![f64::NAN; 2]]).unwrap();
        assert_eq!(drop_missing_rows(&all).unwrap_err().to_string(), "empty dataset");
    }

    #[test]
    fn standardizes_with_sample_sd() {
        let ds = Dataset::from_columns(zones(3), vec!["a".into()], vec![vec![1.0, 2.0, 3.0]]).unwrap();
        let (s, scale) = standardize_columns(&ds).unwrap();
        assert_eq!(s.columns[0], vec![-1.0, 0.0, 1.0]);
        assert_eq!(scale[0], Scaling { mean: 2.0, sd: 1.0 });
        let (again, _) = standardize_columns(&s).unwrap();
        for (a, b) in again.columns[0].iter().zip(&s.columns[0]) {
            assert!((a - b).abs() < 1e-10);
        }
        let flat = Dataset::from_columns(zones(3), vec!["a".into()], vec![vec![4.0; 3]]).unwrap();
        assert!(matches!(standardize_columns(&flat), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn screening_rules() {
        let n = 50;
        let rate: Vec<f64> = (0..n).map(|i| 0.1 + 0.01 * i as f64).collect();
        let count: Vec<f64> = rate.iter().map(|r| 1000.0 * r + 3.0).collect();
        let other: Vec<f64> = (0..n).map(|i| ((i * 37) % 50) as f64 + 0.5).collect();
        let constant = vec![7.0; n];
        let zeros: Vec<f64> = (0..n).map(|i| if i % 5 == 0 { 0.0 } else { i as f64 }).collect();
        let mut ds = Dataset::from_columns(
            zones(n),
            ["rate", "count", "other", "constant", "zeros"].map(String::from).to_vec(),
            vec![rate, count, other, constant, zeros],
        )
        .unwrap();
        ds.pair_with[1] = Some("rate".into());
        let (out, rep) = screen_indicators(&ds, &ScreeningRules::default()).unwrap();
        assert_eq!(out.names, ["rate", "other"]);
        assert_eq!(rep.dropped_high_correlation.len(), 1);
        assert_eq!(rep.dropped_high_correlation[0].dropped, "count");
        assert_eq!(rep.dropped_discrete[0].name, "constant");
        assert_eq!(rep.dropped_zero_inflated[0].name, "zeros");
        assert!((rep.dropped_zero_inflated[0].fraction - 0.2).abs() < 1e-15);
        assert_eq!((rep.d_before, rep.d_after), (5, 2));
        let json = serde_json::to_string(&rep).unwrap();
        assert_eq!(serde_json::from_str::<PreprocessReport>(&json).unwrap(), rep);
    }

    #[test]
    fn orientation_flips_sign() {
        let mut ds = Dataset::from_columns(zones(2), vec!["a".into(), "b".into()], vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        ds.orientation[1] = Orientation::LowerIsDeprived;
        assert_eq!(ds.oriented_columns(), vec![vec![1.0, 2.0], vec![-3.0, -4.0]]);
    }

    fn column_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop_oneof![
            proptest::collection::vec(-100.0..100.0f64, n),
            proptest::collection::vec(prop_oneof![Just(0.0), 1.0..5.0f64], n),
            proptest::collection::vec((0..3i32).prop_map(f64::from), n),
        ]
    }

    proptest! {
        #[test]
        fn screening_is_order_independent(
            cols in proptest::collection::vec(column_strategy(40), 2..7),
            seed in any::<u64>(),
        ) {
            let d = cols.len();
            let names: Vec<String> = (0..d).map(|j| format!("v{j}")).collect();
            let mut ds = Dataset::from_columns(zones(40), names, cols).unwrap();
            if d > 2 {
                ds.pair_with[1] = Some("v0".into());
            }
            let mut perm: Vec<usize> = (0..d).collect();
            let mut s = seed;
            for i in (1..d).rev() {
                s = crate::numeric::splitmix64(s);
                perm.swap(i, (s % (i as u64 + 1)) as usize);
            }
            let (a, _) = screen_indicators(&ds, &ScreeningRules::default()).unwrap();
            let (b, _) = screen_indicators(&ds.select_columns(&perm), &ScreeningRules::default()).unwrap();
            let mut na = a.names.clone();
            let mut nb = b.names.clone();
            na.sort();
            nb.sort();
            prop_assert_eq!(na, nb);
        }

        #[test]
        fn standardized_moments(col in proptest::collection::vec(-1e3..1e3f64, 3..60)) {
            let n = col.len();
            prop_assume!(col.iter().any(|v| (v - col[0]).abs() > 1e-6));
            let ds = Dataset::from_columns(zones(n), vec!["x".into()], vec![col]).unwrap();
            let (s, _) = standardize_columns(&ds).unwrap();
            let (m, sd) = mean_sd(&s.columns[0]);
            prop_assert!(m.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        }

        #[test]
        fn dropping_missing_rows_is_idempotent(
            cells in proptest::collection::vec(prop_oneof![Just(f64::NAN), 0.0..1.0f64], 30),
        ) {
            let cols = vec![cells[..15].to_vec(), cells[15..].to_vec()];
            let ds = Dataset::from_columns(zones(15), vec!["a".into(), "b".into()], cols).unwrap();
            if let Ok((once, _)) = drop_missing_rows(&ds) {
                let (twice, removed) = drop_missing_rows(&once).unwrap();
                prop_assert_eq!(removed, 0);
                prop_assert_eq!(&twice.zone_ids, &once.zone_ids);
                prop_assert!(!once.has_missing());
            }
        }
    }
}
