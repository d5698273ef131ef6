//! Flat `key = value` configuration with `#` comments.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::series::{CsvSchema, SplitSpec, DEFAULT_MAX_GAP};
use crate::trainer::TrainConfig;
use crate::wavelet::WaveletKind;

/// Which part of a series `score` covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreSplit {
    Test,
    All,
}

impl FromStr for ScoreSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test" => Ok(Self::Test),
            "all" => Ok(Self::All),
            other => Err(Error::Config(format!("score.split must be 'test' or 'all', got '{other}'"))),
        }
    }
}

impl std::fmt::Display for ScoreSplit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Test => "test",
            Self::All => "all",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub schema: CsvSchema,
    pub data_path: Option<PathBuf>,
    pub max_gap: i64,
    pub split: SplitSpec,
    pub wavelet: WaveletKind,
    /// `None` picks a level from the series length.
    pub wavelet_level: Option<usize>,
    pub denoise: bool,
    pub use_labels: bool,
    /// Also mask points whose denoising residual exceeds this many robust
    /// standard deviations.
    pub self_mask: Option<f64>,
    pub seasonal_window: usize,
    pub total_window: usize,
    pub context_window: usize,
    pub context_stride: Option<usize>,
    pub context_history: Option<usize>,
    pub d_model: usize,
    pub sigma_min: f64,
    pub use_seasonal: bool,
    pub use_contextual: bool,
    pub use_covariate: bool,
    pub train: TrainConfig,
    pub seed: u64,
    pub eval_k: usize,
    pub eval_warmup: usize,
    pub score_split: ScoreSplit,
}

impl Default for Config {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            schema: CsvSchema::default(),
            data_path: None,
            max_gap: DEFAULT_MAX_GAP,
            split: SplitSpec::default(),
            wavelet: WaveletKind::Db4,
            wavelet_level: None,
            denoise: true,
            use_labels: true,
            self_mask: None,
            seasonal_window: m.seasonal_window,
            total_window: m.total_window,
            context_window: m.context_window,
            context_stride: None,
            context_history: None,
            d_model: m.d_model,
            sigma_min: m.sigma_min,
            use_seasonal: true,
            use_contextual: true,
            use_covariate: true,
            train: TrainConfig::default(),
            seed: 0,
            eval_k: 7,
            eval_warmup: 0,
            score_split: ScoreSplit::Test,
        }
    }
}

/// Every accepted key, in the order [`Config::to_pairs`] writes them.
pub const KEYS: &[&str] = &[
    "csv.timestamp_col",
    "csv.value_col",
    "csv.label_col",
    "data.path",
    "data.max_gap",
    "split.train",
    "split.val",
    "wavelet.basis",
    "wavelet.level",
    "preprocess.denoise",
    "mask.use_labels",
    "mask.self_threshold",
    "model.seasonal_window",
    "model.total_window",
    "model.context_window",
    "model.context_stride",
    "model.context_history",
    "model.d_model",
    "model.sigma_min",
    "model.seasonal",
    "model.contextual",
    "model.covariate",
    "train.batch_size",
    "train.max_epochs",
    "train.patience",
    "train.lr",
    "train.clip_norm",
    "seed",
    "eval.k",
    "eval.warmup",
    "score.split",
];

/// Keys that change how a series is turned into model inputs. A checkpoint
/// can only score data prepared with the same values.
pub const PREPROCESSING_KEYS: &[&str] = &[
    "csv.timestamp_col",
    "csv.value_col",
    "csv.label_col",
    "data.max_gap",
    "model.seasonal_window",
    "model.total_window",
    "model.context_window",
    "model.context_stride",
    "model.context_history",
    "model.d_model",
    "model.sigma_min",
    "model.seasonal",
    "model.contextual",
    "model.covariate",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got '{value}'"))),
    }
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    match value {
        "" | "auto" | "none" | "off" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn show<T: ToString>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or_else(|| none.to_string(), T::to_string)
}

impl Config {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_str(text)?;
        Ok(c)
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value', got '{line}'", i + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Reads a config file. A relative `data.path` is resolved against the
    /// file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::parse_str(&text)?;
        if let (Some(p), Some(dir)) = (&c.data_path, path.parent()) {
            if p.is_relative() {
                c.data_path = Some(dir.join(p));
            }
        }
        Ok(c)
    }

    /// Sets one key. Unknown keys are rejected by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim_matches('"');
        match key {
            "csv.timestamp_col" => self.schema.timestamp_col = value.to_string(),
            "csv.value_col" => self.schema.value_col = value.to_string(),
            "csv.label_col" => self.schema.label_col = optional(key, value)?,
            "data.path" => self.data_path = optional(key, value)?,
            "data.max_gap" => self.max_gap = parse(key, value)?,
            "split.train" => self.split.train_fraction = parse(key, value)?,
            "split.val" => self.split.val_fraction = parse(key, value)?,
            "wavelet.basis" => self.wavelet = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "wavelet.level" => self.wavelet_level = optional(key, value)?,
            "preprocess.denoise" => self.denoise = parse_bool(key, value)?,
            "mask.use_labels" => self.use_labels = parse_bool(key, value)?,
            "mask.self_threshold" => self.self_mask = optional(key, value)?,
            "model.seasonal_window" => self.seasonal_window = parse(key, value)?,
            "model.total_window" => self.total_window = parse(key, value)?,
            "model.context_window" => self.context_window = parse(key, value)?,
            "model.context_stride" => self.context_stride = optional(key, value)?,
            "model.context_history" => self.context_history = optional(key, value)?,
            "model.d_model" => self.d_model = parse(key, value)?,
            "model.sigma_min" => self.sigma_min = parse(key, value)?,
            "model.seasonal" => self.use_seasonal = parse_bool(key, value)?,
            "model.contextual" => self.use_contextual = parse_bool(key, value)?,
            "model.covariate" => self.use_covariate = parse_bool(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.max_epochs" => self.train.max_epochs = parse(key, value)?,
            "train.patience" => self.train.patience = parse(key, value)?,
            "train.lr" => self.train.adam.lr = parse(key, value)?,
            "train.clip_norm" => self.train.clip_norm = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "eval.k" => self.eval_k = parse(key, value)?,
            "eval.warmup" => self.eval_warmup = parse(key, value)?,
            "score.split" => self.score_split = value.parse()?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key=value` overrides, e.g. from repeated `--set` flags.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{o}' is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "csv.timestamp_col" => self.schema.timestamp_col.clone(),
            "csv.value_col" => self.schema.value_col.clone(),
            "csv.label_col" => show(&self.schema.label_col, "none"),
            "data.path" => show(&self.data_path.as_ref().map(|p| p.display()), "none"),
            "data.max_gap" => self.max_gap.to_string(),
            "split.train" => self.split.train_fraction.to_string(),
            "split.val" => self.split.val_fraction.to_string(),
            "wavelet.basis" => self.wavelet.to_string(),
            "wavelet.level" => show(&self.wavelet_level, "auto"),
            "preprocess.denoise" => self.denoise.to_string(),
            "mask.use_labels" => self.use_labels.to_string(),
            "mask.self_threshold" => show(&self.self_mask, "off"),
            "model.seasonal_window" => self.seasonal_window.to_string(),
            "model.total_window" => self.total_window.to_string(),
            "model.context_window" => self.context_window.to_string(),
            "model.context_stride" => show(&self.context_stride, "auto"),
            "model.context_history" => show(&self.context_history, "auto"),
            "model.d_model" => self.d_model.to_string(),
            "model.sigma_min" => self.sigma_min.to_string(),
            "model.seasonal" => self.use_seasonal.to_string(),
            "model.contextual" => self.use_contextual.to_string(),
            "model.covariate" => self.use_covariate.to_string(),
            "train.batch_size" => self.train.batch_size.to_string(),
            "train.max_epochs" => self.train.max_epochs.to_string(),
            "train.patience" => self.train.patience.to_string(),
            "train.lr" => self.train.adam.lr.to_string(),
            "train.clip_norm" => self.train.clip_norm.to_string(),
            "seed" => self.seed.to_string(),
            "eval.k" => self.eval_k.to_string(),
            "eval.warmup" => self.eval_warmup.to_string(),
            "score.split" => self.score_split.to_string(),
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        })
    }

    /// Every key with its current value, in [`KEYS`] order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        KEYS.iter()
            .map(|k| (k.to_string(), self.get(k).expect("listed keys are known")))
            .collect()
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut m = ModelConfig::new(self.seasonal_window, self.total_window, self.context_window, self.d_model);
        if let Some(s) = self.context_stride {
            m.context_stride = s;
        }
        if let Some(h) = self.context_history {
            m.context_history = h;
        }
        m.sigma_min = self.sigma_min;
        m.use_seasonal = self.use_seasonal;
        m.use_contextual = self.use_contextual;
        m.use_covariate = self.use_covariate;
        m.validate()?;
        Ok(m)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut t = self.train.clone();
        t.seed = self.seed;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config()?;
        self.train_config()?;
        self.split.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.max_gap < 1 {
            return Err(Error::Config(format!("data.max_gap {} must be positive", self.max_gap)));
        }
        if let Some(c) = self.self_mask {
            if !(c > 0.0) {
                return Err(Error::Config(format!("mask.self_threshold {c} must be positive")));
            }
        }
        Ok(())
    }

    /// Preprocessing keys whose values differ between `self` and `other`,
    /// as `key: mine vs theirs` strings.
    pub fn preprocessing_differences(&self, other: &Config) -> Vec<String> {
        PREPROCESSING_KEYS
            .iter()
            .filter_map(|k| {
                let (a, b) = (self.get(k).ok()?, other.get(k).ok()?);
                (a != b).then(|| format!("{k}: {a} vs {b}"))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let text = "# demo\nmodel.seasonal_window = 32  # shorter season\nmodel.total_window=160\n\nseed = 9\ncsv.label_col = none\n";
        let mut c = Config::parse_str(text).unwrap();
        assert_eq!(c.seasonal_window, 32);
        assert_eq!(c.total_window, 160);
        assert_eq!(c.seed, 9);
        assert_eq!(c.schema.label_col, None);
        c.apply_overrides(&["seed=3", "model.covariate = false"]).unwrap();
        assert_eq!(c.seed, 3);
        assert!(!c.use_covariate);
        let m = c.model_config().unwrap();
        assert_eq!((m.context_stride, m.context_history), (2, 32));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = Config::parse_str("lr_rate = 0.1").unwrap_err();
        assert!(err.to_string().contains("lr_rate"));
        assert_eq!(err.exit_code(), 1);
        assert!(Config::parse_str("seed 3").is_err());
        assert!(Config::parse_str("model.seasonal = maybe").is_err());
    }

    #[test]
    fn pairs_round_trip() {
        let mut c = Config::default();
        c.apply_overrides(&["train.lr=0.0005", "wavelet.level=2", "model.sigma_min=1e-4", "score.split=all"])
            .unwrap();
        let mut back = Config::default();
        for (k, v) in c.to_pairs() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(back, c);
        assert_eq!(c.to_pairs().len(), KEYS.len());
    }

    #[test]
    fn defaults_follow_the_reference_settings() {
        let c = Config::default();
        assert_eq!((c.train.batch_size, c.train.max_epochs, c.d_model), (512, 30, 256));
        assert_eq!((c.seasonal_window, c.total_window, c.context_window), (48, 240, 4));
        c.validate().unwrap();
    }

    #[test]
    fn preprocessing_diff_lists_fields() {
        let a = Config::default();
        let mut b = a.clone();
        b.seasonal_window = 24;
        b.train.batch_size = 8;
        let d = a.preprocessing_differences(&b);
        assert_eq!(d, vec!["model.seasonal_window: 48 vs 24".to_string()]);
    }

    #[test]
    fn relative_data_path_resolves_against_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.conf");
        std::fs::write(&p, "data.path = series.csv\n").unwrap();
        let c = Config::from_file(&p).unwrap();
        assert_eq!(c.data_path.unwrap(), dir.path().join("series.csv"));
        assert!(matches!(Config::from_file(dir.path().join("nope.conf")), Err(Error::Io { .. })));
    }
}
