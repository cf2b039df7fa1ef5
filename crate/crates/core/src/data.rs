//! Loading, transforming and standardizing quarterly panels, and building the
//! lagged design used by every equation.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stationarity transformation applied to a raw series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum TransformCode {
    /// 1: no transformation.
    Level,
    /// 2: year-on-year growth, 100 (log x_t - log x_{t-4}).
    YearOnYear,
    /// 3: quarter-on-quarter growth, 100 (log x_t - log x_{t-1}).
    QuarterGrowth,
    /// 4: quarter-on-quarter percentage change, 100 (x_t / x_{t-1} - 1).
    QuarterPercent,
}

impl TransformCode {
    /// Leading observations lost by the transformation.
    pub fn lag(self) -> usize {
        match self {
            TransformCode::Level => 0,
            TransformCode::YearOnYear => 4,
            TransformCode::QuarterGrowth | TransformCode::QuarterPercent => 1,
        }
    }
}

impl TryFrom<u8> for TransformCode {
    type Error = Error;

    fn try_from(code: u8) -> Result<Self> {
        match code {
            1 => Ok(TransformCode::Level),
            2 => Ok(TransformCode::YearOnYear),
            3 => Ok(TransformCode::QuarterGrowth),
            4 => Ok(TransformCode::QuarterPercent),
            other => Err(Error::Parse(format!("unknown transformation code {other}"))),
        }
    }
}

impl From<TransformCode> for u8 {
    fn from(code: TransformCode) -> u8 {
        match code {
            TransformCode::Level => 1,
            TransformCode::YearOnYear => 2,
            TransformCode::QuarterGrowth => 3,
            TransformCode::QuarterPercent => 4,
        }
    }
}

impl fmt::Display for TransformCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

/// Apply a stationarity transformation, dropping the undefined leading entries.
pub fn apply_transform(series: &[f64], code: TransformCode) -> Result<Vec<f64>> {
    let lag = code.lag();
    if lag == 0 {
        return Ok(series.to_vec());
    }
    if series.len() <= lag {
        return Err(Error::Length {
            needed: lag + 1,
            got: series.len(),
        });
    }
    match code {
        TransformCode::YearOnYear | TransformCode::QuarterGrowth => {
            if let Some(bad) = series.iter().find(|&&x| x <= 0.0 || !x.is_finite()) {
                return Err(Error::Domain(format!(
                    "log growth needs strictly positive values, found {bad}"
                )));
            }
            Ok(series
                .windows(lag + 1)
                .map(|w| 100.0 * (w[lag].ln() - w[0].ln()))
                .collect())
        }
        TransformCode::QuarterPercent => {
            if let Some(bad) = series[..series.len() - 1].iter().find(|&&x| x == 0.0) {
                return Err(Error::Domain(format!("percentage change from {bad}")));
            }
            Ok(series.windows(2).map(|w| 100.0 * (w[1] / w[0] - 1.0)).collect())
        }
        TransformCode::Level => unreachable!(),
    }
}

/// Location/scale pair used to map standardized values back to original units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub center: f64,
    pub scale: f64,
}

impl Scaling {
    pub const IDENTITY: Scaling = Scaling {
        center: 0.0,
        scale: 1.0,
    };

    #[inline]
    pub fn to_original(&self, z: f64) -> f64 {
        self.center + self.scale * z
    }

    #[inline]
    pub fn to_standard(&self, x: f64) -> f64 {
        (x - self.center) / self.scale
    }
}

/// Aligned multivariate quarterly panel (rows are quarters, columns variables).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesPanel {
    pub names: Vec<String>,
    pub dates: Vec<String>,
    pub values: DMatrix<f64>,
    pub transform_codes: Vec<TransformCode>,
    pub scaling: Option<Vec<Scaling>>,
}

impl TimeSeriesPanel {
    pub fn new(
        names: Vec<String>,
        dates: Vec<String>,
        values: DMatrix<f64>,
        transform_codes: Vec<TransformCode>,
    ) -> Result<Self> {
        let panel = TimeSeriesPanel {
            names,
            dates,
            values,
            transform_codes,
            scaling: None,
        };
        panel.validate()?;
        Ok(panel)
    }

    /// Panel with untransformed (code 1) columns, convenient for synthetic data.
    pub fn from_columns(names: Vec<String>, columns: &[Vec<f64>]) -> Result<Self> {
        let t = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != t) {
            return Err(Error::Parse("columns differ in length".into()));
        }
        let values = DMatrix::from_fn(t, columns.len(), |r, c| columns[c][r]);
        let dates = (0..t).map(|i| format!("t{i}")).collect();
        let codes = vec![TransformCode::Level; columns.len()];
        Self::new(names, dates, values, codes)
    }

    fn validate(&self) -> Result<()> {
        let (t, n) = self.values.shape();
        if self.names.len() != n || self.transform_codes.len() != n {
            return Err(Error::Parse(format!(
                "{} columns but {} names and {} transformation codes",
                n,
                self.names.len(),
                self.transform_codes.len()
            )));
        }
        if self.dates.len() != t {
            return Err(Error::Parse(format!("{} rows but {} dates", t, self.dates.len())));
        }
        if let Some(s) = &self.scaling {
            if s.len() != n {
                return Err(Error::Parse("scaling length mismatch".into()));
            }
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalDomain("panel values".into()));
        }
        Ok(())
    }

    pub fn n_obs(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }

    /// Apply each column's transformation and trim all columns to the common
    /// sample where every transformed value is defined.
    pub fn transformed(&self) -> Result<TimeSeriesPanel> {
        let trim = self.transform_codes.iter().map(|c| c.lag()).max().unwrap_or(0);
        let t = self.n_obs();
        if t <= trim {
            return Err(Error::Length {
                needed: trim + 1,
                got: t,
            });
        }
        let mut columns = Vec::with_capacity(self.n_vars());
        for (j, &code) in self.transform_codes.iter().enumerate() {
            let out = apply_transform(&self.column(j), code).map_err(|e| match e {
                Error::Domain(msg) => Error::Domain(format!("{}: {msg}", self.names[j])),
                other => other,
            })?;
            let skip = trim - code.lag();
            columns.push(out[skip..].to_vec());
        }
        let rows = t - trim;
        let values = DMatrix::from_fn(rows, columns.len(), |r, c| columns[c][r]);
        Ok(TimeSeriesPanel {
            names: self.names.clone(),
            dates: self.dates[trim..].to_vec(),
            values,
            transform_codes: self.transform_codes.clone(),
            scaling: None,
        })
    }

    /// Center each column and divide by its standard deviation (denominator T).
    pub fn standardize(&self) -> Result<TimeSeriesPanel> {
        let t = self.n_obs() as f64;
        let mut values = self.values.clone();
        let mut scaling = Vec::with_capacity(self.n_vars());
        for j in 0..self.n_vars() {
            let col = self.values.column(j);
            let mean = col.iter().sum::<f64>() / t;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t;
            let sd = var.sqrt();
            if !(sd > 1e-12 * mean.abs().max(1.0)) {
                return Err(Error::DegenerateScale(self.names[j].clone()));
            }
            values.column_mut(j).iter_mut().for_each(|x| *x = (*x - mean) / sd);
            let new = Scaling {
                center: mean,
                scale: sd,
            };
            // Compose with an existing standardization so original units stay reachable.
            let composed = match &self.scaling {
                Some(prev) => Scaling {
                    center: prev[j].to_original(mean),
                    scale: prev[j].scale * sd,
                },
                None => new,
            };
            scaling.push(composed);
        }
        Ok(TimeSeriesPanel {
            names: self.names.clone(),
            dates: self.dates.clone(),
            values,
            transform_codes: self.transform_codes.clone(),
            scaling: Some(scaling),
        })
    }

    /// Undo standardization; a panel without scaling is returned unchanged.
    pub fn destandardize(&self) -> TimeSeriesPanel {
        let mut out = self.clone();
        if let Some(scaling) = &self.scaling {
            for (j, s) in scaling.iter().enumerate() {
                out.values.column_mut(j).iter_mut().for_each(|x| *x = s.to_original(*x));
            }
        }
        out.scaling = None;
        out
    }

    pub fn scaling_or_identity(&self) -> Vec<Scaling> {
        self.scaling
            .clone()
            .unwrap_or_else(|| vec![Scaling::IDENTITY; self.n_vars()])
    }

    /// First `rows` observations.
    pub fn head(&self, rows: usize) -> TimeSeriesPanel {
        let rows = rows.min(self.n_obs());
        TimeSeriesPanel {
            names: self.names.clone(),
            dates: self.dates[..rows].to_vec(),
            values: self.values.rows(0, rows).into_owned(),
            transform_codes: self.transform_codes.clone(),
            scaling: self.scaling.clone(),
        }
    }

    /// Read a panel from CSV: header `date,NAME1,NAME2,...`, one quarter per row.
    pub fn read_csv<P: AsRef<Path>>(path: P, codes: &HashMap<String, TransformCode>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.len() < 2 {
            return Err(Error::Parse("CSV needs a date column and at least one series".into()));
        }
        let names: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
        let transform_codes = names
            .iter()
            .map(|name| {
                codes
                    .get(name)
                    .copied()
                    .ok_or_else(|| Error::Config(format!("no transformation code for `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut dates = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            dates.push(record.get(0).unwrap_or_default().to_owned());
            let row = record
                .iter()
                .skip(1)
                .enumerate()
                .map(|(j, field)| {
                    field.parse::<f64>().map_err(|_| {
                        Error::Parse(format!(
                            "row {} column `{}`: `{field}` is not a number",
                            line + 2,
                            names[j]
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if row.len() != names.len() {
                return Err(Error::Parse(format!("row {} has {} values", line + 2, row.len())));
            }
            rows.push(row);
        }
        let values = DMatrix::from_fn(rows.len(), names.len(), |r, c| rows[r][c]);
        Self::new(names, dates, values, transform_codes)
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header = vec!["date".to_owned()];
        header.extend(self.names.iter().cloned());
        writer.write_record(&header)?;
        for r in 0..self.n_obs() {
            let mut row = vec![self.dates[r].clone()];
            row.extend((0..self.n_vars()).map(|c| format!("{}", self.values[(r, c)])));
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Read the sidecar `mnemonic,code` file that assigns transformations.
pub fn read_transform_codes<P: AsRef<Path>>(path: P) -> Result<HashMap<String, TransformCode>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let name = record.get(0).unwrap_or_default().to_owned();
        let code: u8 = record
            .get(1)
            .unwrap_or_default()
            .parse()
            .map_err(|_| Error::Parse(format!("bad transformation code for `{name}`")))?;
        out.insert(name, TransformCode::try_from(code)?);
    }
    Ok(out)
}

/// Response matrix and lagged regressors for a VAR(p).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignPair {
    /// (T - p) x n responses.
    pub y: DMatrix<f64>,
    /// (T - p) x (n p) regressors; row t is (y_{t-1}', ..., y_{t-p}').
    pub x: DMatrix<f64>,
    pub lag_order: usize,
    pub n_vars: usize,
}

impl DesignPair {
    pub fn n_predictors(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.y.nrows()
    }

    /// Lag (1-based) carried by design column `q`.
    #[inline]
    pub fn lag_of_column(&self, q: usize) -> usize {
        lag_of_column(q, self.n_vars)
    }

    /// Variable (0-based) carried by design column `q`.
    #[inline]
    pub fn variable_of_column(&self, q: usize) -> usize {
        variable_of_column(q, self.n_vars)
    }
}

#[inline]
pub fn lag_of_column(q: usize, n_vars: usize) -> usize {
    q / n_vars + 1
}

#[inline]
pub fn variable_of_column(q: usize, n_vars: usize) -> usize {
    q % n_vars
}

/// Build `(Y, X)` for a VAR with `p` lags.
pub fn build_design(panel: &TimeSeriesPanel, p: usize) -> Result<DesignPair> {
    let (t, n) = panel.values.shape();
    if p == 0 {
        return Err(Error::Config("lag order must be positive".into()));
    }
    if t <= p {
        return Err(Error::InsufficientData(format!("{t} observations for {p} lags")));
    }
    let rows = t - p;
    let y = panel.values.rows(p, rows).into_owned();
    let x = DMatrix::from_fn(rows, n * p, |r, q| {
        let lag = lag_of_column(q, n);
        panel.values[(r + p - lag, variable_of_column(q, n))]
    });
    Ok(DesignPair {
        y,
        x,
        lag_order: p,
        n_vars: n,
    })
}

/// Regressor vector for the period after the last row of `recent`, whose rows
/// are consecutive observations in time order (at least `p` of them).
pub fn next_lag_vector(recent: &DMatrix<f64>, p: usize) -> Vec<f64> {
    let (t, n) = recent.shape();
    (0..n * p)
        .map(|q| recent[(t - lag_of_column(q, n), variable_of_column(q, n))])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn panel(cols: &[Vec<f64>]) -> TimeSeriesPanel {
        let names = (0..cols.len()).map(|i| format!("v{i}")).collect();
        TimeSeriesPanel::from_columns(names, cols).unwrap()
    }

    #[test]
    fn level_is_identity() {
        assert_eq!(apply_transform(&[1.0, 2.0, 3.0], TransformCode::Level).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn quarter_growth_is_log_difference() {
        let out = apply_transform(&[1.0, 0.01f64.exp()], TransformCode::QuarterGrowth).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quarter_percent_change() {
        let out = apply_transform(&[100.0, 102.0], TransformCode::QuarterPercent).unwrap();
        assert!((out[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn year_on_year_uses_fourth_lag() {
        let s = [1.0, 1.0, 1.0, 1.0, 2.0, 2.0];
        let out = apply_transform(&s, TransformCode::YearOnYear).unwrap();
        assert_eq!(out.len(), 2);
        assert!((out[0] - 100.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn transform_errors() {
        assert!(matches!(
            apply_transform(&[1.0, -1.0], TransformCode::QuarterGrowth),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            apply_transform(&[1.0, 0.0, 1.0, 1.0, 1.0], TransformCode::YearOnYear),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            apply_transform(&[1.0, 2.0, 3.0, 4.0], TransformCode::YearOnYear),
            Err(Error::Length { needed: 5, got: 4 })
        ));
        assert!(matches!(
            apply_transform(&[1.0], TransformCode::QuarterPercent),
            Err(Error::Length { .. })
        ));
    }

    #[test]
    fn panel_transform_trims_to_common_sample() {
        let mut p = panel(&[
            (1..=8).map(f64::from).collect(),
            (1..=8).map(f64::from).collect(),
        ]);
        p.transform_codes = vec![TransformCode::YearOnYear, TransformCode::QuarterGrowth];
        let t = p.transformed().unwrap();
        assert_eq!(t.n_obs(), 4);
        assert_eq!(t.dates[0], "t4");
        assert!((t.values[(0, 1)] - 100.0 * (5f64.ln() - 4f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn design_shapes() {
        let p = panel(&[vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![5.0, 4.0, 3.0, 2.0, 1.0]]);
        let d = build_design(&p, 2).unwrap();
        assert_eq!(d.y.shape(), (3, 2));
        assert_eq!(d.x.shape(), (3, 4));
        // row 0 predicts t=2: lag 1 is t=1, lag 2 is t=0
        assert_eq!(d.x.row(0).iter().copied().collect::<Vec<_>>(), vec![2.0, 4.0, 1.0, 5.0]);
    }

    #[test]
    fn design_lag_shift() {
        let p = panel(&[vec![1.0, 2.0, 3.0]]);
        let d = build_design(&p, 1).unwrap();
        assert_eq!(d.y.as_slice(), &[2.0, 3.0]);
        assert_eq!(d.x.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn thirteen_lags_of_two_variables() {
        let p = panel(&[(0..20).map(f64::from).collect(), (0..20).map(|i| f64::from(i * i)).collect()]);
        let d = build_design(&p, 13).unwrap();
        assert_eq!(d.n_predictors(), 26);
        assert!(matches!(build_design(&p, 20), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn standardize_two_points() {
        let s = panel(&[vec![0.0, 2.0]]).standardize().unwrap();
        assert_eq!(s.values.as_slice(), &[-1.0, 1.0]);
        assert_eq!(s.scaling.unwrap()[0], Scaling { center: 1.0, scale: 1.0 });
    }

    #[test]
    fn standardize_is_idempotent() {
        let once = panel(&[vec![0.3, 2.0, -1.0, 4.5]]).standardize().unwrap();
        let twice = once.standardize().unwrap();
        for (a, b) in once.values.iter().zip(twice.values.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let back = twice.destandardize();
        assert!((back.values[(3, 0)] - 4.5).abs() < 1e-12);
    }

    #[test]
    fn constant_column_rejected() {
        assert!(matches!(
            panel(&[vec![3.0, 3.0, 3.0]]).standardize(),
            Err(Error::DegenerateScale(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        std::fs::write(&path, "date,GDP,FFR\n2000Q1,100,5.0\n2000Q2,101,5.25\n2000Q3,103,5.5\n").unwrap();
        let codes: HashMap<_, _> = [("GDP".to_owned(), TransformCode::QuarterGrowth), ("FFR".to_owned(), TransformCode::Level)]
            .into_iter()
            .collect();
        let raw = TimeSeriesPanel::read_csv(&path, &codes).unwrap();
        let t = raw.transformed().unwrap();
        assert_eq!(t.dates, vec!["2000Q2", "2000Q3"]);
        let out = dir.path().join("out.csv");
        t.write_csv(&out).unwrap();
        let text = std::fs::read_to_string(out).unwrap();
        assert!(text.starts_with("date,GDP,FFR\n2000Q2,"));

        let missing: HashMap<String, TransformCode> = HashMap::new();
        assert!(matches!(TimeSeriesPanel::read_csv(&path, &missing), Err(Error::Config(_))));
    }

    #[test]
    fn next_lag_vector_matches_design_convention() {
        let p = panel(&[vec![1.0, 2.0, 3.0, 4.0], vec![10.0, 20.0, 30.0, 40.0]]);
        let x = next_lag_vector(&p.values, 2);
        assert_eq!(x, vec![4.0, 40.0, 3.0, 30.0]);
    }

    proptest! {
        #[test]
        fn design_columns_are_lagged_values(
            data in proptest::collection::vec(-5.0f64..5.0, 24),
            p in 1usize..5,
        ) {
            let n = 3;
            let t = data.len() / n;
            let cols: Vec<Vec<f64>> = (0..n).map(|j| (0..t).map(|r| data[r * n + j]).collect()).collect();
            let panel = panel(&cols);
            let d = build_design(&panel, p).unwrap();
            prop_assert_eq!(d.n_predictors(), n * p);
            for r in 0..d.n_rows() {
                for q in 0..d.n_predictors() {
                    let expected = panel.values[(r + p - d.lag_of_column(q), d.variable_of_column(q))];
                    prop_assert_eq!(d.x[(r, q)], expected);
                }
            }
            let again = build_design(&panel, p).unwrap();
            prop_assert_eq!(d, again);
        }

        #[test]
        fn standardize_round_trip(data in proptest::collection::vec(-1e3f64..1e3, 8..40)) {
            let spread = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - data.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assume!(spread > 1e-3);
            let p = panel(&[data.clone()]);
            let back = p.standardize().unwrap().destandardize();
            for (a, b) in back.values.iter().zip(data.iter()) {
                prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
            }
        }
    }
}
