//! Maneuver records, CSV ingestion, surrogate filters and the sign/shift
//! transforms that turn minima of a surrogate into maxima with a zero
//! collision boundary.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::prob::{Method, ProbEstimate};
use crate::stats::normal_quantile;
use crate::{Error, Result};

/// Surrogate safety measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    /// Time-to-collision with the opposing vehicle (head-on surrogate).
    Ttc,
    /// Time headway to the passed vehicle (rear-end surrogate).
    Thw,
}

impl Measure {
    pub fn as_str(&self) -> &'static str {
        match self {
            Measure::Ttc => "ttc",
            Measure::Thw => "thw",
        }
    }

    /// Collision type this measure stands in for.
    pub fn collision(&self) -> Collision {
        match self {
            Measure::Ttc => Collision::HeadOn,
            Measure::Thw => Collision::RearEnd,
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ttc" => Ok(Measure::Ttc),
            "thw" => Ok(Measure::Thw),
            other => Err(Error::Usage(format!("unknown measure `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Collision {
    #[default]
    None,
    HeadOn,
    RearEnd,
}

impl Collision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Collision::None => "none",
            Collision::HeadOn => "head_on",
            Collision::RearEnd => "rear_end",
        }
    }

    pub fn is_collision(&self) -> bool {
        !matches!(self, Collision::None)
    }
}

impl FromStr for Collision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "" | "none" | "0" | "no" => Ok(Collision::None),
            "head_on" | "headon" | "head-on" => Ok(Collision::HeadOn),
            "rear_end" | "rearend" | "rear-end" => Ok(Collision::RearEnd),
            other => Err(Error::Domain(format!("unknown collision tag `{other}`"))),
        }
    }
}

/// One completed passing maneuver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManeuverRecord {
    pub ttc: f64,
    pub thw: f64,
    /// Values aligned with [`ManeuverDataset::covariate_names`].
    pub covariates: Vec<f64>,
    pub collided: Collision,
}

impl ManeuverRecord {
    pub fn measure(&self, m: Measure) -> f64 {
        match m {
            Measure::Ttc => self.ttc,
            Measure::Thw => self.thw,
        }
    }
}

/// A filter step kept in the dataset log so the estimation set can be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterStep {
    pub measure: Measure,
    pub limit: f64,
}

/// Collision records set aside by filtering.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionCounts {
    pub head_on: usize,
    pub rear_end: usize,
}

impl CollisionCounts {
    pub fn of(&self, kind: Collision) -> usize {
        match kind {
            Collision::HeadOn => self.head_on,
            Collision::RearEnd => self.rear_end,
            Collision::None => 0,
        }
    }

    pub fn total(&self) -> usize {
        self.head_on + self.rear_end
    }

    fn bump(&mut self, kind: Collision) {
        match kind {
            Collision::HeadOn => self.head_on += 1,
            Collision::RearEnd => self.rear_end += 1,
            Collision::None => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManeuverDataset {
    pub covariate_names: Vec<String>,
    pub records: Vec<ManeuverRecord>,
    pub provenance: String,
    pub filter_log: Vec<FilterStep>,
    /// Collisions removed from the estimation set by the filters in `filter_log`.
    pub excluded_collisions: CollisionCounts,
}

/// Maps logical fields onto CSV header names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub ttc: String,
    pub thw: String,
    /// Column holding `none|head_on|rear_end`. When absent, a measure of `0`
    /// marks the matching collision.
    #[serde(default)]
    pub collision: Option<String>,
    /// Covariate name -> column. `None` takes every unmapped column.
    #[serde(default)]
    pub covariates: Option<BTreeMap<String, String>>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            ttc: "ttc".into(),
            thw: "thw".into(),
            collision: Some("collision".into()),
            covariates: None,
        }
    }
}

impl Schema {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

fn parse_cell(record: &csv::StringRecord, idx: usize, row: usize, column: &str) -> Result<f64> {
    let raw = record.get(idx).unwrap_or("").trim();
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            row,
            column: column.to_string(),
            value: raw.to_string(),
        })
}

/// Reads a maneuver table. Row indices in errors count data rows from 1.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<ManeuverDataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();

    let ttc_idx = column_index(&headers, &schema.ttc)?;
    let thw_idx = column_index(&headers, &schema.thw)?;
    let collision_idx = match &schema.collision {
        Some(name) => headers.iter().position(|h| h.trim() == name),
        None => None,
    };

    let covariates: Vec<(String, usize)> = match &schema.covariates {
        Some(map) => map
            .iter()
            .map(|(name, col)| Ok((name.clone(), column_index(&headers, col)?)))
            .collect::<Result<_>>()?,
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != ttc_idx && *i != thw_idx && Some(*i) != collision_idx)
            .map(|(i, h)| (h.trim().to_string(), i))
            .collect(),
    };
    let mut seen = std::collections::HashSet::new();
    for (name, _) in &covariates {
        if !seen.insert(name.as_str()) {
            return Err(Error::Domain(format!("duplicate covariate name `{name}`")));
        }
    }

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let ttc = parse_cell(&row, ttc_idx, row_no, &schema.ttc)?;
        let thw = parse_cell(&row, thw_idx, row_no, &schema.thw)?;
        let collided = match collision_idx {
            Some(idx) => row
                .get(idx)
                .unwrap_or("")
                .parse::<Collision>()
                .map_err(|_| Error::Parse {
                    row: row_no,
                    column: schema.collision.clone().unwrap_or_default(),
                    value: row.get(idx).unwrap_or("").to_string(),
                })?,
            None if ttc <= 0.0 => Collision::HeadOn,
            None if thw <= 0.0 => Collision::RearEnd,
            None => Collision::None,
        };
        if !collided.is_collision() && (ttc <= 0.0 || thw <= 0.0) {
            return Err(Error::Domain(format!(
                "data row {row_no}: non-collision maneuver needs positive ttc and thw"
            )));
        }
        let values = covariates
            .iter()
            .map(|(name, idx)| parse_cell(&row, *idx, row_no, name))
            .collect::<Result<Vec<_>>>()?;
        records.push(ManeuverRecord {
            ttc,
            thw,
            covariates: values,
            collided,
        });
    }

    Ok(ManeuverDataset {
        covariate_names: covariates.into_iter().map(|(n, _)| n).collect(),
        records,
        provenance: path.display().to_string(),
        filter_log: Vec::new(),
        excluded_collisions: CollisionCounts::default(),
    })
}

/// Writes the dataset using the default [`Schema`] layout.
pub fn write_csv(ds: &ManeuverDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["ttc".to_string(), "thw".to_string(), "collision".to_string()];
    header.extend(ds.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for r in &ds.records {
        let mut row = vec![
            format_value(r.ttc),
            format_value(r.thw),
            r.collided.as_str().to_string(),
        ];
        row.extend(r.covariates.iter().map(|v| format_value(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn format_value(v: f64) -> String {
    // shortest representation that round-trips
    format!("{v}")
}

impl ManeuverDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn collision_counts(&self) -> CollisionCounts {
        let mut c = CollisionCounts::default();
        for r in &self.records {
            c.bump(r.collided);
        }
        c
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    /// Measure values of the non-collision records, in record order.
    pub fn measure_series(&self, m: Measure) -> Series {
        Series::new(
            self.records
                .iter()
                .filter(|r| !r.collided.is_collision())
                .map(|r| r.measure(m))
                .collect(),
            m.as_str(),
        )
    }

    /// Named covariate columns aligned with [`Self::measure_series`].
    pub fn covariates(&self, names: &[String]) -> Result<Covariates> {
        let idx = names
            .iter()
            .map(|n| {
                self.covariate_index(n)
                    .ok_or_else(|| Error::MissingColumn(n.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let rows: Vec<&ManeuverRecord> = self
            .records
            .iter()
            .filter(|r| !r.collided.is_collision())
            .collect();
        let columns = idx
            .iter()
            .map(|&j| rows.iter().map(|r| r.covariates[j]).collect())
            .collect();
        Covariates::new(names.to_vec(), columns)
    }

    /// Re-applies `filter_log` to an unfiltered dataset.
    pub fn replay(original: &ManeuverDataset, log: &[FilterStep]) -> Result<ManeuverDataset> {
        log.iter()
            .try_fold(original.clone(), |ds, step| filter_threshold(&ds, step.measure, step.limit))
    }
}

/// Keeps non-collision records whose `measure` is strictly below `limit`.
/// Collision records leave the estimation set and are tallied in
/// `excluded_collisions`.
pub fn filter_threshold(ds: &ManeuverDataset, measure: Measure, limit: f64) -> Result<ManeuverDataset> {
    if !(limit > 0.0) || !limit.is_finite() {
        return Err(Error::Domain(format!("filter limit must be positive, got {limit}")));
    }
    let mut excluded = ds.excluded_collisions;
    let mut records = Vec::with_capacity(ds.records.len());
    for r in &ds.records {
        if r.collided.is_collision() {
            excluded.bump(r.collided);
        } else if r.measure(measure) < limit {
            records.push(r.clone());
        }
    }
    let step = FilterStep { measure, limit };
    let mut filter_log = ds.filter_log.clone();
    if !filter_log.contains(&step) {
        filter_log.push(step);
    }
    Ok(ManeuverDataset {
        covariate_names: ds.covariate_names.clone(),
        records,
        provenance: ds.provenance.clone(),
        filter_log,
        excluded_collisions: excluded,
    })
}

/// Joint estimation set for the bivariate model: maneuvers with both
/// measures below their limits, plus the collisions whose other measure was
/// below its limit (the empirical numerator).
#[derive(Debug, Clone)]
pub struct BivariateSet {
    pub ttc: Series,
    pub thw: Series,
    pub records: Vec<ManeuverRecord>,
    pub collisions: usize,
}

pub fn bivariate_set(ds: &ManeuverDataset, limit_ttc: f64, limit_thw: f64) -> Result<BivariateSet> {
    if !(limit_ttc > 0.0 && limit_thw > 0.0) {
        return Err(Error::Domain("filter limits must be positive".into()));
    }
    let mut collisions = 0;
    let mut records = Vec::new();
    for r in &ds.records {
        match r.collided {
            Collision::HeadOn if r.thw < limit_thw => collisions += 1,
            Collision::RearEnd if r.ttc < limit_ttc => collisions += 1,
            Collision::None if r.ttc < limit_ttc && r.thw < limit_thw => records.push(r.clone()),
            _ => {}
        }
    }
    Ok(BivariateSet {
        ttc: Series::new(records.iter().map(|r| r.ttc).collect(), "ttc"),
        thw: Series::new(records.iter().map(|r| r.thw).collect(), "thw"),
        records,
        collisions,
    })
}

impl BivariateSet {
    pub fn covariates(&self, names: &[String], all_names: &[String]) -> Result<Covariates> {
        let idx = names
            .iter()
            .map(|n| {
                all_names
                    .iter()
                    .position(|a| a == n)
                    .ok_or_else(|| Error::MissingColumn(n.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let columns = idx
            .iter()
            .map(|&j| self.records.iter().map(|r| r.covariates[j]).collect())
            .collect();
        Covariates::new(names.to_vec(), columns)
    }
}

/// A step in a series' transform history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Negate,
    /// `values + c`
    Shift(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub values: Vec<f64>,
    pub unit: String,
    pub transform_chain: Vec<Transform>,
}

impl Series {
    pub fn new(values: Vec<f64>, unit: impl Into<String>) -> Self {
        Self {
            values,
            unit: unit.into(),
            transform_chain: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> Option<f64> {
        self.values.iter().copied().reduce(f64::max)
    }

    pub fn min(&self) -> Option<f64> {
        self.values.iter().copied().reduce(f64::min)
    }

    /// Undoes the transform chain, newest first.
    pub fn invert_transforms(&self) -> Series {
        let mut values = self.values.clone();
        for t in self.transform_chain.iter().rev() {
            match *t {
                Transform::Negate => values.iter_mut().for_each(|v| *v = -*v),
                Transform::Shift(c) => values.iter_mut().for_each(|v| *v -= c),
            }
        }
        Series::new(values, self.unit.clone())
    }
}

pub fn negate(s: &Series) -> Series {
    let mut out = s.clone();
    out.values.iter_mut().for_each(|v| *v = -*v);
    out.transform_chain.push(Transform::Negate);
    out
}

/// Negates `s` and shifts it so its maximum is exactly `0`.
///
/// Returns the normalized series and the shift, i.e. the maximum of the
/// negated input; `normalized = negated - shift`.
pub fn normalize_to_sample_max(s: &Series) -> Result<(Series, f64)> {
    if s.is_empty() {
        return Err(Error::Domain("cannot normalize an empty series".into()));
    }
    let mut out = negate(s);
    let shift = out.max().expect("non-empty");
    out.values.iter_mut().for_each(|v| *v -= shift);
    out.transform_chain.push(Transform::Shift(-shift));
    Ok((out, shift))
}

/// `k / (n + k)` with a normal-approximation binomial interval. The interval is
/// reported unclamped.
pub fn empirical_collision_probability(k: usize, n: usize, level: f64) -> Result<ProbEstimate> {
    if k + n == 0 {
        return Err(Error::Domain("empirical probability needs k + n > 0".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("confidence level must be in (0,1), got {level}")));
    }
    let total = (k + n) as f64;
    let p = k as f64 / total;
    let z = normal_quantile(0.5 + level / 2.0);
    let half = z * (p * (1.0 - p) / total).sqrt();
    Ok(ProbEstimate {
        p,
        ci: (p - half, p + half),
        level,
        method: Method::Empirical,
        mc_size: 0,
        seed: None,
        rejected: 0,
        clamped: false,
    })
}

/// Named covariate columns, all of equal length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    rows: usize,
}

impl Covariates {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Usage("covariate names and columns differ in count".into()));
        }
        let rows = columns.first().map(Vec::len).unwrap_or(0);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Usage("covariate columns differ in length".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::Usage(format!("duplicate covariate `{dup}`")));
        }
        Ok(Self { names, columns, rows })
    }

    /// No covariates, `rows` observations.
    pub fn empty(rows: usize) -> Self {
        Self {
            names: Vec::new(),
            columns: Vec::new(),
            rows,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn select(&self, names: &[String]) -> Result<Covariates> {
        let columns = names
            .iter()
            .map(|n| {
                self.column(n)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| Error::MissingColumn(n.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Covariates::new(names.to_vec(), columns)?;
        out.rows = self.rows;
        Ok(out)
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::Usage(format!("duplicate covariate `{name}`")));
        }
        if values.len() != self.rows {
            return Err(Error::Usage("covariate column length mismatch".into()));
        }
        self.names.push(name);
        self.columns.push(values);
        Ok(())
    }

    /// Adds the product of two existing columns.
    pub fn push_product(&mut self, name: impl Into<String>, a: &str, b: &str) -> Result<()> {
        let ca = self.column(a).ok_or_else(|| Error::MissingColumn(a.into()))?;
        let cb = self.column(b).ok_or_else(|| Error::MissingColumn(b.into()))?;
        let prod = ca.iter().zip(cb).map(|(x, y)| x * y).collect();
        self.push(name, prod)
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }
}

/// Female driver aged 22-34: `(1 - gender) * [age_band == 1]`, with gender
/// coded 1 = male and age bands 1/2/3 for 22-34/35-49/50-70.
pub fn female_22_34(gender: &[f64], age_band: &[f64]) -> Vec<f64> {
    gender
        .iter()
        .zip(age_band)
        .map(|(g, a)| {
            let female = 1.0 - g;
            let young = if (*a - 1.0).abs() < 0.5 { 1.0 } else { 0.0 };
            female * young
        })
        .collect()
}
