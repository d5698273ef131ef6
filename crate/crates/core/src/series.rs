//! Time-series data model, CSV ingestion, imputation, normalization and
//! chronological splitting.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// A univariate series with per-point anomaly labels and imputation flags.
///
/// `labels` is always populated; when the source carried no label column it
/// is all zero and `has_labels` is false.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub timestamps: Vec<i64>,
    pub values: Vec<f64>,
    pub labels: Vec<u8>,
    pub filled: Vec<u8>,
    pub has_labels: bool,
}

impl TimeSeries {
    pub fn new(timestamps: Vec<i64>, values: Vec<f64>, labels: Option<Vec<u8>>) -> Result<Self> {
        let n = values.len();
        if timestamps.len() != n {
            return Err(Error::Argument(format!(
                "{} timestamps for {} values",
                timestamps.len(),
                n
            )));
        }
        let has_labels = labels.is_some();
        let labels = labels.unwrap_or_else(|| vec![0; n]);
        if labels.len() != n {
            return Err(Error::Argument(format!("{} labels for {} values", labels.len(), n)));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Data(format!("label {bad} is not binary")));
        }
        if let Some(w) = timestamps.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Data(format!(
                "timestamps not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(Self {
            timestamps,
            values,
            labels,
            filled: vec![0; n],
            has_labels,
        })
    }

    /// Series indexed 0..n with no labels.
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len();
        Self {
            timestamps: (0..n as i64).collect(),
            values,
            labels: vec![0; n],
            filled: vec![0; n],
            has_labels: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> TimeSeries {
        TimeSeries {
            timestamps: self.timestamps[range.clone()].to_vec(),
            values: self.values[range.clone()].to_vec(),
            labels: self.labels[range.clone()].to_vec(),
            filled: self.filled[range].to_vec(),
            has_labels: self.has_labels,
        }
    }

    /// Training mask: 1 marks a trustworthy normal target. Labelled anomalies
    /// (when labels are in use) and imputed points are 0.
    pub fn normal_mask(&self, use_labels: bool) -> Vec<u8> {
        (0..self.len())
            .map(|i| {
                let anomalous = use_labels && self.has_labels && self.labels[i] == 1;
                u8::from(!anomalous && self.filled[i] == 0)
            })
            .collect()
    }
}

/// Column names used when reading a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub timestamp_col: String,
    pub value_col: String,
    pub label_col: Option<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            timestamp_col: "timestamp".into(),
            value_col: "value".into(),
            label_col: Some("label".into()),
        }
    }
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<TimeSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Reads a headed CSV, sorts rows by timestamp and rejects duplicates.
///
/// A configured label column that is absent from the header is treated as
/// "no labels"; the timestamp and value columns are mandatory.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<TimeSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("cannot read header: {e}")))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let ts_idx = find(&schema.timestamp_col)
        .ok_or_else(|| Error::Schema(format!("missing column '{}'", schema.timestamp_col)))?;
    let val_idx = find(&schema.value_col)
        .ok_or_else(|| Error::Schema(format!("missing column '{}'", schema.value_col)))?;
    let label_idx = schema.label_col.as_deref().and_then(find);

    let mut rows: Vec<(i64, f64, u8)> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        // header is line 1
        let row = i + 2;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let ts = parse_timestamp(field(ts_idx)).ok_or_else(|| Error::Parse {
            row,
            message: format!("timestamp '{}' is not an integer", field(ts_idx)),
        })?;
        let value: f64 = field(val_idx).parse().map_err(|_| Error::Parse {
            row,
            message: format!("value '{}' is not numeric", field(val_idx)),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                row,
                message: format!("value '{}' is not finite", field(val_idx)),
            });
        }
        let label = match label_idx {
            Some(idx) => parse_label(field(idx)).ok_or_else(|| Error::Parse {
                row,
                message: format!("label '{}' is not 0 or 1", field(idx)),
            })?,
            None => 0,
        };
        rows.push((ts, value, label));
    }

    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Data(format!("duplicate timestamp {}", w[0].0)));
    }
    let timestamps = rows.iter().map(|r| r.0).collect();
    let values = rows.iter().map(|r| r.1).collect();
    let labels = label_idx.map(|_| rows.iter().map(|r| r.2).collect());
    TimeSeries::new(timestamps, values, labels)
}

fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    // tolerate "12.0"
    let f: f64 = s.parse().ok()?;
    (f.fract() == 0.0 && f.abs() < 9.0e15).then_some(f as i64)
}

fn parse_label(s: &str) -> Option<u8> {
    match s.parse::<f64>().ok()? {
        v if v == 0.0 => Some(0),
        v if v == 1.0 => Some(1),
        _ => None,
    }
}

pub const DEFAULT_MAX_GAP: i64 = 10;

/// Fills gaps of whole multiples of `interval` by linear interpolation.
/// Inserted points get `filled = 1` and label 0.
pub fn impute_missing(series: &TimeSeries, interval: i64, max_gap: i64) -> Result<TimeSeries> {
    if interval <= 0 {
        return Err(Error::Argument(format!("interval must be positive, got {interval}")));
    }
    if series.len() < 2 {
        return Err(Error::Argument("imputation needs at least 2 points".into()));
    }
    let mut out = TimeSeries {
        timestamps: Vec::with_capacity(series.len()),
        values: Vec::with_capacity(series.len()),
        labels: Vec::with_capacity(series.len()),
        filled: Vec::with_capacity(series.len()),
        has_labels: series.has_labels,
    };
    for i in 0..series.len() {
        if i > 0 {
            let (t0, t1) = (series.timestamps[i - 1], series.timestamps[i]);
            let delta = t1 - t0;
            if delta % interval != 0 {
                return Err(Error::Data(format!(
                    "timestamps {t0} -> {t1} are not aligned to interval {interval}"
                )));
            }
            let steps = delta / interval;
            if steps > max_gap {
                return Err(Error::Imputation(format!(
                    "gap of {steps} intervals after timestamp {t0} exceeds max gap {max_gap}"
                )));
            }
            let (v0, v1) = (series.values[i - 1], series.values[i]);
            for k in 1..steps {
                let frac = k as f64 / steps as f64;
                out.timestamps.push(t0 + k * interval);
                out.values.push(v0 + (v1 - v0) * frac);
                out.labels.push(0);
                out.filled.push(1);
            }
        }
        out.timestamps.push(series.timestamps[i]);
        out.values.push(series.values[i]);
        out.labels.push(series.labels[i]);
        out.filled.push(series.filled[i]);
    }
    Ok(out)
}

/// Smallest positive spacing between consecutive timestamps.
pub fn infer_interval(series: &TimeSeries) -> Option<i64> {
    series.timestamps.windows(2).map(|w| w[1] - w[0]).min()
}

/// z-score parameters; `std` is always strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    /// Population mean/std; a zero-variance series gets `std = 1`.
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("cannot normalize an empty series".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let std = if std > 1e-12 && std.is_finite() { std } else { 1.0 };
        Ok(Self { mean, std })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

pub fn normalize(series: &TimeSeries, stats: Option<NormStats>) -> Result<(TimeSeries, NormStats)> {
    if series.is_empty() {
        return Err(Error::Argument("cannot normalize an empty series".into()));
    }
    let stats = match stats {
        Some(s) if s.std > 0.0 && s.std.is_finite() && s.mean.is_finite() => s,
        Some(s) => return Err(Error::Argument(format!("invalid normalization stats {s:?}"))),
        None => NormStats::fit(&series.values)?,
    };
    let mut out = series.clone();
    out.values.iter_mut().for_each(|v| *v = stats.apply(*v));
    Ok((out, stats))
}

/// Chronological split fractions; the remainder after train and validation
/// is the test split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.35,
            val_fraction: 0.15,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |f: f64| f > 0.0 && f < 1.0;
        if !ok(self.train_fraction) || !ok(self.val_fraction) {
            return Err(Error::Argument(format!("split fractions must lie in (0,1): {self:?}")));
        }
        if self.train_fraction + self.val_fraction >= 1.0 {
            return Err(Error::Argument(format!(
                "train + val fractions must be < 1: {self:?}"
            )));
        }
        Ok(())
    }

    /// Boundary indices `(train_end, val_end)` for a series of length `n`.
    pub fn boundaries(&self, n: usize) -> (usize, usize) {
        let cut = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
        let a = cut(self.train_fraction).min(n);
        let b = cut(self.train_fraction + self.val_fraction).clamp(a, n);
        (a, b)
    }
}

/// Splits `series` into contiguous train/val/test pieces, each holding at
/// least `min_piece` points.
pub fn split(
    series: &TimeSeries,
    spec: &SplitSpec,
    min_piece: usize,
) -> Result<(TimeSeries, TimeSeries, TimeSeries)> {
    spec.validate()?;
    let n = series.len();
    let (a, b) = spec.boundaries(n);
    let shortest = a.min(b - a).min(n - b);
    if shortest < min_piece {
        let smallest_frac = spec
            .train_fraction
            .min(spec.val_fraction)
            .min(1.0 - spec.train_fraction - spec.val_fraction);
        let needed = (min_piece as f64 / smallest_frac).ceil() as usize;
        return Err(Error::Split(format!(
            "series of length {n} too short: every split needs {min_piece} points, \
             need roughly {needed} points in total"
        )));
    }
    Ok((series.slice(0..a), series.slice(a..b), series.slice(b..n)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> CsvSchema {
        CsvSchema {
            timestamp_col: "t".into(),
            value_col: "v".into(),
            label_col: Some("label".into()),
        }
    }

    #[test]
    fn reads_three_rows_without_labels() {
        let s = read_csv("t,v\n1,0.5\n2,0.7\n3,0.6".as_bytes(), &schema()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.values, vec![0.5, 0.7, 0.6]);
        assert!(!s.has_labels);
        assert_eq!(s.labels, vec![0, 0, 0]);
    }

    #[test]
    fn sorts_out_of_order_rows() {
        let s = read_csv("t,v\n1,0.5\n3,0.6\n2,0.7".as_bytes(), &schema()).unwrap();
        assert_eq!(s.timestamps, vec![1, 2, 3]);
        assert_eq!(s.values, vec![0.5, 0.7, 0.6]);
    }

    #[test]
    fn rejects_duplicate_timestamp() {
        let err = read_csv("t,v\n1,0.5\n2,0.7\n2,0.6".as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("duplicate timestamp 2")), "{err}");
    }

    #[test]
    fn missing_column_and_bad_value() {
        let err = read_csv("t,x\n1,0.5".as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
        let err = read_csv("t,v\n1,0.5\n2,abc".as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 3, .. }), "{err}");
    }

    #[test]
    fn reads_labels() {
        let s = read_csv("t,v,label\n1,0.5,0\n2,0.7,1".as_bytes(), &schema()).unwrap();
        assert!(s.has_labels);
        assert_eq!(s.labels, vec![0, 1]);
        let err = read_csv("t,v,label\n1,0.5,2".as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }));
    }

    #[test]
    fn imputes_midpoint() {
        let s = TimeSeries::new(vec![0, 1, 3], vec![0.0, 1.0, 3.0], None).unwrap();
        let out = impute_missing(&s, 1, DEFAULT_MAX_GAP).unwrap();
        assert_eq!(out.timestamps, vec![0, 1, 2, 3]);
        assert_eq!(out.values, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(out.filled, vec![0, 0, 1, 0]);
    }

    #[test]
    fn impute_without_gaps_is_identity() {
        let s = TimeSeries::new(vec![0, 5, 10], vec![1.0, 2.0, 4.0], Some(vec![0, 1, 0])).unwrap();
        let out = impute_missing(&s, 5, DEFAULT_MAX_GAP).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn impute_rejects_long_gap() {
        let s = TimeSeries::new(vec![0, 12], vec![0.0, 1.0], None).unwrap();
        assert!(matches!(impute_missing(&s, 1, 10), Err(Error::Imputation(_))));
        assert!(impute_missing(&s, 1, 12).is_ok());
    }

    #[test]
    fn normalize_population_std() {
        let s = TimeSeries::from_values(vec![2.0, 4.0, 6.0]);
        let (z, stats) = normalize(&s, None).unwrap();
        assert_eq!(stats.mean, 4.0);
        assert!((stats.std - (8.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((stats.std - 1.632993).abs() < 1e-6);
        let mean: f64 = z.values.iter().sum::<f64>() / 3.0;
        let var: f64 = z.values.iter().map(|v| v * v).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-15);
        assert!((var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_constant_and_supplied() {
        let (z, stats) = normalize(&TimeSeries::from_values(vec![5.0; 3]), None).unwrap();
        assert_eq!(z.values, vec![0.0; 3]);
        assert_eq!(stats, NormStats { mean: 5.0, std: 1.0 });
        let supplied = NormStats { mean: 5.0, std: 5.0 };
        let (z, _) = normalize(&TimeSeries::from_values(vec![0.0, 10.0]), Some(supplied)).unwrap();
        assert_eq!(z.values, vec![-1.0, 1.0]);
        assert!(normalize(&TimeSeries::from_values(vec![]), None).is_err());
    }

    #[test]
    fn split_lengths() {
        let s = TimeSeries::from_values((0..100).map(f64::from).collect());
        let (a, b, c) = split(&s, &SplitSpec::default(), 10).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (35, 15, 50));

        let s = TimeSeries::from_values(vec![0.0; 1000]);
        let spec = SplitSpec {
            train_fraction: 0.5,
            val_fraction: 0.25,
        };
        let (a, b, c) = split(&s, &spec, 10).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (500, 250, 250));

        let s = TimeSeries::from_values(vec![0.0; 20]);
        assert!(matches!(split(&s, &SplitSpec::default(), 241), Err(Error::Split(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn split_concatenates(n in 60usize..400, tf in 0.1f64..0.5, vf in 0.1f64..0.4) {
                let s = TimeSeries::from_values((0..n).map(|i| i as f64 * 0.5).collect());
                let spec = SplitSpec { train_fraction: tf, val_fraction: vf };
                let (a, b, c) = split(&s, &spec, 1).unwrap();
                let joined: Vec<f64> = a.values.iter().chain(&b.values).chain(&c.values).copied().collect();
                prop_assert_eq!(joined, s.values.clone());
                let ts: Vec<i64> = a.timestamps.iter().chain(&b.timestamps).chain(&c.timestamps).copied().collect();
                prop_assert_eq!(ts, s.timestamps);
            }

            #[test]
            fn normalize_inverts(values in proptest::collection::vec(-1e6f64..1e6, 1..64)) {
                let s = TimeSeries::from_values(values.clone());
                let (z, stats) = normalize(&s, None).unwrap();
                for (orig, zv) in values.iter().zip(&z.values) {
                    let back = stats.invert(*zv);
                    prop_assert!((back - orig).abs() <= 1e-12 * orig.abs().max(stats.std).max(1.0) * 16.0);
                }
            }

            #[test]
            fn pipeline_preserves_labels(gaps in proptest::collection::vec(1i64..4, 2..40), seed in 0u64..1000) {
                let mut ts = vec![0i64];
                for g in &gaps { ts.push(ts.last().unwrap() + g); }
                let labels: Vec<u8> = (0..ts.len()).map(|i| (i as u64 * 7 + seed).is_multiple_of(5) as u8).collect();
                let values: Vec<f64> = (0..ts.len()).map(|i| (i as f64).sin()).collect();
                let s = TimeSeries::new(ts.clone(), values, Some(labels.clone())).unwrap();
                let filled = impute_missing(&s, 1, 10).unwrap();
                let (normed, _) = normalize(&filled, None).unwrap();
                for (t, l) in ts.iter().zip(&labels) {
                    let idx = normed.timestamps.iter().position(|x| x == t).unwrap();
                    prop_assert_eq!(normed.labels[idx], *l);
                    prop_assert_eq!(normed.filled[idx], 0);
                }
            }
        }
    }
}
