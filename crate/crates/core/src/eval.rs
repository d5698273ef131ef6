//! Anomaly scores, adjusted F1 metrics and threshold sweeps.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Delay tolerance commonly used for a benchmark family.
pub fn dataset_delay(name: &str) -> Option<usize> {
    match name.to_ascii_lowercase().as_str() {
        "yahoo" => Some(3),
        "kpi" => Some(7),
        "wsd" => Some(40),
        "nab" => Some(150),
        _ => None,
    }
}

/// Mean of the squared standardized residuals over the available branches,
/// i.e. `½[((x-μ_s)/σ_s)² + ((x-μ_c)/σ_c)²]` when both are present.
pub fn point_score(x: f64, seasonal: Option<(f64, f64)>, contextual: Option<(f64, f64)>) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0;
    for (mu, sigma) in seasonal.into_iter().chain(contextual) {
        if !(sigma > 0.0) {
            return Err(Error::Numeric(format!("non-positive sigma {sigma}")));
        }
        let z = (x - mu) / sigma;
        sum += z * z;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Argument("score needs at least one forecast".into()));
    }
    Ok(sum / count as f64)
}

/// Per-point scores with the forecasts that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub timestamps: Vec<i64>,
    pub values: Vec<f64>,
    pub score: Vec<f64>,
    /// NaN where the branch is disabled.
    pub mu_s: Vec<f64>,
    pub sigma_s: Vec<f64>,
    pub mu_c: Vec<f64>,
    pub sigma_c: Vec<f64>,
    pub labels: Option<Vec<u8>>,
}

type Forecasts<'a> = Option<(&'a [f64], &'a [f64])>;

impl ScoreSeries {
    /// Scores every observed point against its aligned forecasts.
    pub fn from_forecasts(
        timestamps: Vec<i64>,
        values: Vec<f64>,
        seasonal: Forecasts,
        contextual: Forecasts,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let n = values.len();
        let covered = |f: &Forecasts, name: &str| -> Result<()> {
            match f {
                Some((m, s)) if m.len() != n || s.len() != n => Err(Error::Alignment(format!(
                    "{name} forecasts cover {} / {} of {n} points",
                    m.len(),
                    s.len()
                ))),
                _ => Ok(()),
            }
        };
        covered(&seasonal, "seasonal")?;
        covered(&contextual, "contextual")?;
        if timestamps.len() != n || labels.as_ref().is_some_and(|l| l.len() != n) {
            return Err(Error::Alignment("timestamps/labels do not match the values".into()));
        }
        let score = (0..n)
            .map(|i| {
                point_score(
                    values[i],
                    seasonal.map(|(m, s)| (m[i], s[i])),
                    contextual.map(|(m, s)| (m[i], s[i])),
                )
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(bad) = score.iter().find(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("non-finite anomaly score {bad}")));
        }
        let col = |f: Forecasts, k: usize| match f {
            Some(p) => if k == 0 { p.0.to_vec() } else { p.1.to_vec() },
            None => vec![f64::NAN; n],
        };
        Ok(Self {
            timestamps,
            values,
            score,
            mu_s: col(seasonal, 0),
            sigma_s: col(seasonal, 1),
            mu_c: col(contextual, 0),
            sigma_c: col(contextual, 1),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.score.len()
    }

    pub fn is_empty(&self) -> bool {
        self.score.is_empty()
    }

    /// CSV with columns `timestamp,value,score,mu_s,sigma_s,mu_c,sigma_c`
    /// and `label` when labels are known.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp,value,score,mu_s,sigma_s,mu_c,sigma_c");
        if self.labels.is_some() {
            out.push_str(",label");
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}",
                self.timestamps[i], self.values[i], self.score[i], self.mu_s[i], self.sigma_s[i], self.mu_c[i], self.sigma_c[i]
            ));
            if let Some(l) = &self.labels {
                out.push_str(&format!(",{}", l[i]));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Half-open `[start, end)` runs of ones.
pub fn segments(labels: &[u8]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &l) in labels.iter().enumerate() {
        match (l != 0, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, labels.len()));
    }
    out
}

fn check_aligned(pred: &[u8], labels: &[u8]) -> Result<()> {
    if pred.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} labels",
            pred.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// A labelled segment counts as fully detected if any point in it is
/// predicted.
pub fn point_adjust(pred: &[u8], labels: &[u8]) -> Result<Vec<u8>> {
    check_aligned(pred, labels)?;
    let mut out = pred.to_vec();
    for (s, e) in segments(labels) {
        let hit = pred[s..e].iter().any(|&p| p != 0);
        out[s..e].iter_mut().for_each(|p| *p = u8::from(hit));
    }
    Ok(out)
}

/// Like [`point_adjust`], but only predictions at indices `<= start + k`
/// count; a segment missed within that delay is cleared entirely.
pub fn delay_adjust(pred: &[u8], labels: &[u8], k: usize) -> Result<Vec<u8>> {
    check_aligned(pred, labels)?;
    let mut out = pred.to_vec();
    for (s, e) in segments(labels) {
        let limit = e.min(s.saturating_add(k).saturating_add(1));
        let hit = pred[s..limit].iter().any(|&p| p != 0);
        out[s..e].iter_mut().for_each(|p| *p = u8::from(hit));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(pred: &[u8], labels: &[u8]) -> Result<Self> {
        check_aligned(pred, labels)?;
        let mut c = Self::default();
        for (&p, &l) in pred.iter().zip(labels) {
            match (p != 0, l != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                _ => {}
            }
        }
        Ok(c)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// How predictions are credited against labelled segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adjustment {
    None,
    Point,
    Delay(usize),
}

/// Outcome of a threshold sweep. `threshold` is `+∞` when nothing is flagged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepResult {
    pub threshold: f64,
    pub confusion: Confusion,
    pub f1: f64,
}

/// Units that flip to "predicted" together as the threshold drops: a whole
/// segment (weighted by its length) or a single normal point.
struct Unit {
    key: f64,
    weight: usize,
    positive: bool,
}

fn units(scores: &[f64], labels: &[u8], adjust: Adjustment, out: &mut Vec<Unit>) -> usize {
    let mut positives = 0;
    for (s, e) in segments(labels) {
        positives += e - s;
        match adjust {
            Adjustment::None => out.extend(scores[s..e].iter().map(|&key| Unit {
                key,
                weight: 1,
                positive: true,
            })),
            Adjustment::Point | Adjustment::Delay(_) => {
                let limit = match adjust {
                    Adjustment::Delay(k) => e.min(s.saturating_add(k).saturating_add(1)),
                    _ => e,
                };
                let key = scores[s..limit].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                out.push(Unit {
                    key,
                    weight: e - s,
                    positive: true,
                });
            }
        }
    }
    out.extend(
        scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == 0)
            .map(|(&key, _)| Unit {
                key,
                weight: 1,
                positive: false,
            }),
    );
    positives
}

fn check_scores(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Alignment(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Numeric(format!("score {bad} is not a number")));
    }
    Ok(())
}

/// Best F1 over thresholds drawn from the distinct scores and `+∞`, with
/// `pred = score >= threshold`. Ties go to the higher threshold.
pub fn best_f1_sweep(scores: &[f64], labels: &[u8], adjust: Adjustment) -> Result<SweepResult> {
    best_f1_pooled(&[(scores, labels)], adjust)
}

/// [`best_f1_sweep`] over several series sharing one threshold. Segments
/// never span two series.
pub fn best_f1_pooled(series: &[(&[f64], &[u8])], adjust: Adjustment) -> Result<SweepResult> {
    let mut all = Vec::new();
    let mut positives = 0;
    for (s, l) in series {
        check_scores(s, l)?;
        positives += units(s, l, adjust, &mut all);
    }
    all.sort_by(|a, b| b.key.total_cmp(&a.key));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    let absorb = |i: &mut usize, tp: &mut usize, fp: &mut usize| {
        let key = all[*i].key;
        while *i < all.len() && all[*i].key == key {
            if all[*i].positive {
                *tp += all[*i].weight;
            } else {
                *fp += all[*i].weight;
            }
            *i += 1;
        }
        key
    };
    if all.first().is_some_and(|u| u.key == f64::INFINITY) {
        absorb(&mut i, &mut tp, &mut fp);
    }
    let confusion = |tp, fp| Confusion {
        tp,
        fp,
        fn_: positives - tp,
    };
    let c = confusion(tp, fp);
    let mut best = SweepResult {
        threshold: f64::INFINITY,
        confusion: c,
        f1: c.f1(),
    };
    while i < all.len() {
        let key = absorb(&mut i, &mut tp, &mut fp);
        let c = confusion(tp, fp);
        let f1 = c.f1();
        if f1 > best.f1 {
            best = SweepResult {
                threshold: key,
                confusion: c,
                f1,
            };
        }
    }
    Ok(best)
}

/// Point-adjusted and delay-adjusted sweeps for one labelled score series.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub best: SweepResult,
    pub delay: SweepResult,
    pub k: usize,
    pub points: usize,
    pub anomalies: usize,
    /// Set when the labels leave the metrics undefined.
    pub warning: Option<String>,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "points={} anomalies={}", self.points, self.anomalies)?;
        let line = |f: &mut fmt::Formatter<'_>, name: &str, r: &SweepResult| {
            writeln!(
                f,
                "{name}={:.6} precision={:.6} recall={:.6} threshold={}",
                r.f1,
                r.confusion.precision(),
                r.confusion.recall(),
                r.threshold
            )
        };
        line(f, "best_f1", &self.best)?;
        line(f, &format!("delay_f1_k{}", self.k), &self.delay)?;
        if let Some(w) = &self.warning {
            writeln!(f, "warning={w}")?;
        }
        Ok(())
    }
}

/// Evaluates pooled series after dropping `warmup` leading points of each.
pub fn evaluate(series: &[(&[f64], &[u8])], k: usize, warmup: usize) -> Result<EvalReport> {
    let trimmed: Vec<(&[f64], &[u8])> = series
        .iter()
        .map(|(s, l)| {
            check_scores(s, l)?;
            let w = warmup.min(s.len());
            Ok((&s[w..], &l[w..]))
        })
        .collect::<Result<_>>()?;
    let points = trimmed.iter().map(|(s, _)| s.len()).sum();
    let anomalies = trimmed
        .iter()
        .map(|(_, l)| l.iter().filter(|&&x| x != 0).count())
        .sum();
    let best = best_f1_pooled(&trimmed, Adjustment::Point)?;
    let delay = best_f1_pooled(&trimmed, Adjustment::Delay(k))?;
    let warning = (anomalies == 0).then(|| "no labelled anomalies; F1 reported as 0".to_string());
    Ok(EvalReport {
        best,
        delay,
        k,
        points,
        anomalies,
        warning,
    })
}

/// Reads `score` and `label` columns from a scored CSV.
pub fn read_scores(path: impl AsRef<Path>) -> Result<(Vec<f64>, Vec<u8>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("{}: missing column '{name}'", path.display())))
    };
    let (si, li) = (col("score")?, col("label")?);
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: row + 2,
            message: e.to_string(),
        })?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let s: f64 = field(si).parse().map_err(|_| Error::Parse {
            row: row + 2,
            message: format!("score '{}' is not a number", field(si)),
        })?;
        let l = match field(li) {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse {
                    row: row + 2,
                    message: format!("label '{other}' is not 0 or 1"),
                })
            }
        };
        scores.push(s);
        labels.push(l);
    }
    Ok((scores, labels))
}
