//! Seeded synthetic series with labelled point and slow-rise anomalies.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Point,
    SlowRise,
    Mixed,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point" => Ok(Self::Point),
            "slow_rise" => Ok(Self::SlowRise),
            "mixed" => Ok(Self::Mixed),
            other => Err(Error::Argument(format!(
                "unknown synth kind '{other}' (expected point, slow_rise or mixed)"
            ))),
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Point => "point",
            Self::SlowRise => "slow_rise",
            Self::Mixed => "mixed",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub length: usize,
    pub seed: u64,
    /// Period of the fast sinusoid; the slow one has three times this period.
    pub season: usize,
    /// Shortest allowed series, normally twice the model's total window.
    pub min_length: usize,
    pub noise_sigma: f64,
    pub amplitudes: (f64, f64),
    /// Probability that a point carries a spike.
    pub point_rate: f64,
    /// One slow-rise segment per this many seasons.
    pub seasons_per_rise: usize,
}

impl SynthConfig {
    pub fn new(kind: SynthKind, length: usize, seed: u64, season: usize) -> Self {
        Self {
            kind,
            length,
            seed,
            season,
            min_length: 10 * season,
            noise_sigma: 0.05,
            amplitudes: (1.0, 0.5),
            point_rate: 0.005,
            seasons_per_rise: 30,
        }
    }

    pub fn signal_amplitude(&self) -> f64 {
        self.amplitudes.0.abs() + self.amplitudes.1.abs()
    }
}

/// Noise-free base signal at `t`.
pub fn base_signal(config: &SynthConfig, t: usize) -> f64 {
    let w = config.season as f64;
    let t = t as f64;
    config.amplitudes.0 * (2.0 * PI * t / w).sin() + config.amplitudes.1 * (2.0 * PI * t / (3.0 * w)).sin()
}

pub fn generate(config: &SynthConfig) -> Result<TimeSeries> {
    let (n, w) = (config.length, config.season);
    if w < 2 {
        return Err(Error::Argument(format!("season {w} must be at least 2")));
    }
    if n < config.min_length {
        return Err(Error::Argument(format!(
            "length {n} is below the minimum {} for season {w}",
            config.min_length
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_sigma)
        .map_err(|e| Error::Argument(format!("noise sigma {}: {e}", config.noise_sigma)))?;
    let clean: Vec<f64> = (0..n).map(|t| base_signal(config, t)).collect();
    let mut values: Vec<f64> = clean.iter().map(|c| c + noise.sample(&mut rng)).collect();
    let mut labels = vec![0u8; n];

    if matches!(config.kind, SynthKind::SlowRise | SynthKind::Mixed) {
        let slot = w * config.seasons_per_rise.max(3);
        let count = (n / slot).max(1);
        let slot = n / count;
        let peak = 3.0 * config.signal_amplitude();
        for k in 0..count {
            let len = rng.random_range(w..=2 * w);
            // keep a season of margin on either side of the slot
            let lo = k * slot + w;
            let hi = ((k + 1) * slot).saturating_sub(len + w).max(lo);
            let start = rng.random_range(lo..=hi);
            for j in 0..len.min(n - start) {
                values[start + j] += peak * (j + 1) as f64 / len as f64;
                labels[start + j] = 1;
            }
        }
    }

    if matches!(config.kind, SynthKind::Point | SynthKind::Mixed) {
        for t in 0..n {
            let hit = rng.random_bool(config.point_rate);
            let height = rng.random_range(4.0..=8.0) * config.noise_sigma;
            let isolated = labels[t] == 0
                && (t == 0 || labels[t - 1] == 0)
                && (t + 1 == n || labels[t + 1] == 0);
            if hit && isolated {
                values[t] = clean[t] + height;
                labels[t] = 1;
            }
        }
    }

    TimeSeries::new((0..n as i64).collect(), values, Some(labels))
}

/// Writes `timestamp,value,label` rows with shortest round-trip floats.
pub fn write_csv(series: &TimeSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(["timestamp", "value", "label"]).map_err(io)?;
    for i in 0..series.len() {
        w.write_record([
            series.timestamps[i].to_string(),
            series.values[i].to_string(),
            series.labels[i].to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
