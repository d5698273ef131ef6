//! End-to-end glue: ingest, preprocess, train and score.

use std::io::Write;
use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::config::{Config, ScoreSplit};
use crate::error::{Error, Result};
use crate::eval::ScoreSeries;
use crate::model::CsModel;
use crate::series::{impute_missing, infer_interval, ingest_csv, split, NormStats, TimeSeries};
use crate::spectral::{context_inputs, seasonal_inputs, SeriesView, WindowBatch};
use crate::trainer::{build_dataset, threads_from_env, train, TrainReport};
use crate::wavelet::{default_level, denoise, mad_sigma, WaveletBasis};

/// Rows per inference batch.
const SCORE_BATCH: usize = 512;

/// Reads a CSV with the configured schema and fills short gaps.
pub fn load_series(path: impl AsRef<Path>, config: &Config) -> Result<TimeSeries> {
    let raw = ingest_csv(path, &config.schema)?;
    let interval = infer_interval(&raw).unwrap_or(1);
    impute_missing(&raw, interval, config.max_gap)
}

/// Wavelet-denoised copy of `values`, or the values themselves when
/// denoising is disabled.
pub fn denoise_values(values: &[f64], config: &Config) -> Result<Vec<f64>> {
    if !config.denoise {
        return Ok(values.to_vec());
    }
    let level = config.wavelet_level.unwrap_or_else(|| default_level(values.len()));
    denoise(values, &WaveletBasis::new(config.wavelet), level)
}

/// Normalized values, their denoised counterpart and the normal-point mask
/// for one contiguous piece.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSplit {
    pub values: Vec<f64>,
    pub denoised: Vec<f64>,
    pub mask: Vec<u8>,
}

impl PreparedSplit {
    pub fn view(&self) -> Result<SeriesView<'_>> {
        SeriesView::new(&self.values, &self.mask, &self.denoised)
    }
}

pub fn prepare_split(piece: &TimeSeries, norm: &NormStats, config: &Config) -> Result<PreparedSplit> {
    let values: Vec<f64> = piece.values.iter().map(|v| norm.apply(*v)).collect();
    let denoised = denoise_values(&values, config)?;
    let mut mask = piece.normal_mask(config.use_labels);
    if let Some(c) = config.self_mask {
        let resid: Vec<f64> = values.iter().zip(&denoised).map(|(x, d)| x - d).collect();
        let sigma = mad_sigma(&resid)?;
        for (m, r) in mask.iter_mut().zip(&resid) {
            if r.abs() > c * sigma {
                *m = 0;
            }
        }
    }
    Ok(PreparedSplit {
        values,
        denoised,
        mask,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
}

/// Splits, normalizes with train statistics, denoises, trains and packages
/// the best model. The test split is never read.
pub fn train_on_series(series: &TimeSeries, config: &Config, log: &mut dyn Write) -> Result<TrainOutcome> {
    config.validate()?;
    let model_config = config.model_config()?;
    let mut train_config = config.train_config()?;
    train_config.threads = threads_from_env()?;
    let (train_piece, val_piece, _) = split(series, &config.split, model_config.total_window + 1)?;
    let norm = NormStats::fit(&train_piece.values)?;
    let train_prep = prepare_split(&train_piece, &norm, config)?;
    let val_prep = prepare_split(&val_piece, &norm, config)?;
    let train_set = build_dataset(&train_prep.view()?, &model_config)?;
    let val_set = build_dataset(&val_prep.view()?, &model_config)?;
    let mut model = CsModel::init(model_config, config.seed)?;
    let report = train(&mut model, &train_set, &val_set, &train_config, log)?;
    let mut stored = config.clone();
    stored.data_path = None;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: stored,
            norm,
            model,
        },
        report,
    })
}

/// Loads `data.path` and trains on it.
pub fn train_from_config(config: &Config, log: &mut dyn Write) -> Result<TrainOutcome> {
    let path = config
        .data_path
        .as_ref()
        .ok_or_else(|| Error::Config("data.path is not set".into()))?;
    let series = load_series(path, config)?;
    train_on_series(&series, config, log)
}

/// First index that receives a score.
pub fn score_start(ckpt: &Checkpoint, n: usize, which: ScoreSplit) -> usize {
    let total = ckpt.model.config.total_window;
    match which {
        ScoreSplit::All => total,
        ScoreSplit::Test => ckpt.config.split.boundaries(n).1.max(total),
    }
}

/// Scores `series` from [`score_start`] onwards. Seasonal forecasts are
/// issued at multiples of `w_s`, so a point's seasonal forecast does not
/// depend on where scoring starts; contextual forecasts are issued every
/// point. Forecasts are reported in the series' own units.
pub fn score_series(ckpt: &Checkpoint, series: &TimeSeries, which: ScoreSplit) -> Result<ScoreSeries> {
    let cfg = &ckpt.model.config;
    let n = series.len();
    let start = score_start(ckpt, n, which);
    if start >= n {
        return Err(Error::Data(format!(
            "series of length {n} has nothing to score after the first {start} points"
        )));
    }
    let norm = ckpt.norm;
    let z: Vec<f64> = series.values.iter().map(|v| norm.apply(*v)).collect();
    let len = n - start;

    let seasonal = if ckpt.model.seasonal.is_some() {
        let w = cfg.seasonal_window;
        let first = start / w * w;
        let origins: Vec<usize> = (first..n).step_by(w).collect();
        let inputs = origins
            .iter()
            .map(|&o| seasonal_inputs(&z, w, cfg.total_window, o))
            .collect::<Result<Vec<WindowBatch>>>()?;
        let (mut mu, mut sigma) = (Vec::with_capacity(len), Vec::with_capacity(len));
        for chunk in inputs.chunks(SCORE_BATCH) {
            let refs: Vec<&WindowBatch> = chunk.iter().collect();
            for f in ckpt.model.predict_seasonal(&refs)? {
                mu.extend(f.mu.iter().copied());
                sigma.extend(f.sigma());
            }
        }
        let skip = start - first;
        mu.drain(..skip);
        sigma.drain(..skip);
        mu.truncate(len);
        sigma.truncate(len);
        Some((mu, sigma))
    } else {
        None
    };

    let contextual = if ckpt.model.contextual.is_some() {
        let (mut mu, mut sigma) = (Vec::with_capacity(len), Vec::with_capacity(len));
        for lo in (start..n).step_by(SCORE_BATCH) {
            let hi = (lo + SCORE_BATCH).min(n);
            let inputs = (lo..hi)
                .map(|t| context_inputs(&z, cfg.context_window, cfg.context_stride, cfg.context_history, t))
                .collect::<Result<Vec<WindowBatch>>>()?;
            let refs: Vec<&WindowBatch> = inputs.iter().collect();
            for f in ckpt.model.predict_contextual(&refs)? {
                mu.push(f.mu[0]);
                sigma.push(f.sigma()[0]);
            }
        }
        Some((mu, sigma))
    } else {
        None
    };

    let zs = &z[start..];
    let scored = ScoreSeries::from_forecasts(
        series.timestamps[start..].to_vec(),
        zs.to_vec(),
        seasonal.as_ref().map(|(m, s)| (m.as_slice(), s.as_slice())),
        contextual.as_ref().map(|(m, s)| (m.as_slice(), s.as_slice())),
        series.has_labels.then(|| series.labels[start..].to_vec()),
    )?;
    let unscale = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| norm.invert(*x)).collect() };
    let rescale = |v: &[f64]| -> Vec<f64> { v.iter().map(|s| s * norm.std).collect() };
    Ok(ScoreSeries {
        values: series.values[start..].to_vec(),
        mu_s: unscale(&scored.mu_s),
        sigma_s: rescale(&scored.sigma_s),
        mu_c: unscale(&scored.mu_c),
        sigma_c: rescale(&scored.sigma_c),
        ..scored
    })
}
