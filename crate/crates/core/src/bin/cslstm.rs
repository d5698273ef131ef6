use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cslstm::checkpoint::Checkpoint;
use cslstm::config::{Config, ScoreSplit};
use cslstm::eval::{dataset_delay, evaluate, read_scores};
use cslstm::pipeline::{denoise_values, load_series, score_series, train_from_config};
use cslstm::synth::{generate, write_csv, SynthConfig, SynthKind};
use cslstm::wavelet::WaveletKind;
use cslstm::Error;

#[derive(Parser)]
#[command(name = "cslstm", version, about = "Seasonal/contextual LSTM anomaly detection for univariate series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Config, Error> {
        let mut c = match &self.config {
            Some(p) => Config::from_file(p)?,
            None => Config::default(),
        };
        c.apply_overrides(&self.set)?;
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Wavelet-denoise a series: writes timestamp,raw,denoised.
    Denoise {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        basis: Option<WaveletKind>,
        #[arg(long)]
        level: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a model on `data.path` (or --data) and write a checkpoint.
    Train {
        #[arg(long = "out-ckpt")]
        out_ckpt: PathBuf,
        /// Training CSV; overrides data.path.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also append the epoch log to this file.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        disable_seasonal: bool,
        #[arg(long)]
        disable_contextual: bool,
        #[arg(long)]
        disable_covariate: bool,
        #[arg(long)]
        disable_denoise: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score a series with a trained checkpoint.
    Score {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `test` scores the points after the validation split, `all` every
        /// point with full history.
        #[arg(long)]
        split: Option<ScoreSplit>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Best F1 and delay F1 of one or more labelled score files.
    Eval {
        #[arg(long = "in", required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Delay budget; overrides --dataset and eval.k.
        #[arg(long)]
        k: Option<usize>,
        /// Use the customary delay budget of a benchmark (yahoo, kpi, wsd, nab).
        #[arg(long)]
        dataset: Option<String>,
        /// Leading points of each file to ignore.
        #[arg(long)]
        warmup: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate a labelled synthetic series.
    Synth {
        #[arg(long)]
        kind: SynthKind,
        #[arg(long = "len")]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Fast period; defaults to model.seasonal_window.
        #[arg(long)]
        season: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::Denoise { .. } => "denoise",
            Command::Train { .. } => "train",
            Command::Score { .. } => "score",
            Command::Eval { .. } => "eval",
            Command::Synth { .. } => "synth",
        }
    }
}

fn create(path: &Path) -> Result<File, Error> {
    File::create(path).map_err(|e| Error::io(path, e))
}

/// Writes each line to stderr and, optionally, to a file.
struct Tee(Option<File>);

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        io::stderr().write_all(buf)?;
        if let Some(f) = &mut self.0 {
            f.write_all(buf)?;
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        if let Some(f) = &mut self.0 {
            f.flush()?;
        }
        io::stderr().flush()
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Denoise {
            input,
            out,
            basis,
            level,
            cfg,
        } => {
            let mut c = cfg.load()?;
            if let Some(b) = basis {
                c.wavelet = b;
            }
            if level.is_some() {
                c.wavelet_level = level;
            }
            c.denoise = true;
            let series = load_series(&input, &c)?;
            let den = denoise_values(&series.values, &c)?;
            let mut w = csv::Writer::from_writer(create(&out)?);
            let err = |e: csv::Error| Error::io(&out, e.into());
            w.write_record(["timestamp", "raw", "denoised"]).map_err(err)?;
            for i in 0..series.len() {
                w.write_record([
                    series.timestamps[i].to_string(),
                    series.values[i].to_string(),
                    den[i].to_string(),
                ])
                .map_err(err)?;
            }
            w.flush().map_err(|e| Error::io(&out, e))
        }
        Command::Train {
            out_ckpt,
            data,
            seed,
            log,
            disable_seasonal,
            disable_contextual,
            disable_covariate,
            disable_denoise,
            cfg,
        } => {
            let mut c = cfg.load()?;
            if let Some(d) = data {
                c.data_path = Some(d);
            }
            if let Some(s) = seed {
                c.seed = s;
            }
            c.use_seasonal &= !disable_seasonal;
            c.use_contextual &= !disable_contextual;
            c.use_covariate &= !disable_covariate;
            c.denoise &= !disable_denoise;
            let file = match &log {
                Some(p) => Some(create(p)?),
                None => None,
            };
            let outcome = train_from_config(&c, &mut Tee(file))?;
            outcome.checkpoint.save(&out_ckpt)?;
            eprintln!(
                "best_epoch={} best_val_loss={} initial_val_loss={}",
                outcome.report.best_epoch, outcome.report.best_val_loss, outcome.report.initial_val_loss
            );
            Ok(())
        }
        Command::Score {
            ckpt,
            input,
            out,
            split,
            cfg,
        } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            if cfg.config.is_some() || !cfg.set.is_empty() {
                let c = cfg.load()?;
                let diff = ckpt.config.preprocessing_differences(&c);
                if !diff.is_empty() {
                    return Err(Error::Compatibility(format!(
                        "checkpoint vs config differ in: {}",
                        diff.join("; ")
                    )));
                }
            }
            let which = split.unwrap_or(ckpt.config.score_split);
            let series = load_series(&input, &ckpt.config)?;
            score_series(&ckpt, &series, which)?.write_csv(&out)
        }
        Command::Eval {
            input,
            k,
            dataset,
            warmup,
            cfg,
        } => {
            let c = cfg.load()?;
            let from_dataset = match dataset {
                Some(name) => Some(
                    dataset_delay(&name)
                        .ok_or_else(|| Error::Argument(format!("unknown dataset '{name}'")))?,
                ),
                None => None,
            };
            let k = k.or(from_dataset).unwrap_or(c.eval_k);
            let warmup = warmup.unwrap_or(c.eval_warmup);
            let loaded = input.iter().map(read_scores).collect::<Result<Vec<_>, _>>()?;
            let series: Vec<(&[f64], &[u8])> = loaded.iter().map(|(s, l)| (s.as_slice(), l.as_slice())).collect();
            if series.len() == 1 {
                print!("{}", evaluate(&series, k, warmup)?);
            } else {
                for (path, one) in input.iter().zip(&series) {
                    println!("[{}]", path.display());
                    print!("{}", evaluate(std::slice::from_ref(one), k, warmup)?);
                }
                println!("[aggregate]");
                print!("{}", evaluate(&series, k, warmup)?);
            }
            Ok(())
        }
        Command::Synth {
            kind,
            length,
            seed,
            out,
            season,
            cfg,
        } => {
            let c = cfg.load()?;
            let mut sc = SynthConfig::new(kind, length, seed, season.unwrap_or(c.seasonal_window));
            sc.min_length = 2 * c.total_window;
            write_csv(&generate(&sc)?, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let stage = cli.command.stage();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cslstm {stage}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
