//! Mini-batch training with early stopping on validation loss.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::{CsModel, ModelConfig, Sample};
use crate::nn::{clip_grad_norm, AdamConfig, AdamState, Binding};
use crate::spectral::{extract_context, extract_seasonal, SeriesView};

/// Rows per gradient shard. Fixed so that results do not depend on the
/// thread count.
pub const SHARD_SIZE: usize = 32;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "CSLSTM_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub clip_norm: f64,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            max_epochs: 30,
            patience: 5,
            seed: 0,
            adam: AdamConfig::default(),
            clip_norm: 5.0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.threads == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs and threads must be positive".into(),
            ));
        }
        if !(self.adam.lr > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::Config("learning rate and clip norm must be positive".into()));
        }
        Ok(())
    }
}

/// Reads [`THREADS_ENV`], defaulting to 1.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={v} is not a positive integer"))),
        Err(_) => Ok(1),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// One sample per `t ∈ [total, n - w_s]`.
pub fn build_dataset(view: &SeriesView, config: &ModelConfig) -> Result<Dataset> {
    config.validate()?;
    let n = view.len();
    let (w, total) = (config.seasonal_window, config.total_window);
    if n < total + w {
        return Err(Error::Dataset(format!(
            "series of length {n} is shorter than total window + seasonal window = {}",
            total + w
        )));
    }
    let samples = (total..=n - w)
        .map(|t| {
            Ok(Sample {
                t,
                seasonal: if config.use_seasonal {
                    Some(extract_seasonal(view, w, total, t)?)
                } else {
                    None
                },
                contextual: if config.use_contextual {
                    Some(extract_context(
                        view,
                        config.context_window,
                        config.context_stride,
                        config.context_history,
                        t,
                    )?)
                } else {
                    None
                },
            })
        })
        .collect::<Result<_>>()?;
    Ok(Dataset { samples })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub initial_val_loss: f64,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

/// Loss and summed gradients for one batch, split into fixed shards.
pub fn batch_gradients(model: &CsModel, batch: &[&Sample], threads: usize) -> Result<(f64, Vec<Tensor>)> {
    let shards: Vec<&[&Sample]> = batch.chunks(SHARD_SIZE).collect();
    let divisor = batch.len();
    let run = |shard: &[&Sample]| -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let (params, loss, _) = model.record_loss(&mut tape, Binding::Trainable, shard, divisor)?;
        tape.backward(loss)?;
        let grads = params
            .iter()
            .map(|p| tape.grad(*p).unwrap_or_else(|| Tensor::zeros(tape.shape(*p))))
            .collect();
        Ok((tape.value(loss).item(), grads))
    };
    let results: Vec<Result<(f64, Vec<Tensor>)>> = if threads <= 1 || shards.len() <= 1 {
        shards.iter().map(|s| run(s)).collect()
    } else {
        let mut slots: Vec<Option<Result<(f64, Vec<Tensor>)>>> = (0..shards.len()).map(|_| None).collect();
        let workers = threads.min(shards.len());
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|k| {
                    let shards = &shards;
                    let run = &run;
                    scope.spawn(move || {
                        (k..shards.len())
                            .step_by(workers)
                            .map(|i| (i, run(shards[i])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("gradient worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("every shard computed")).collect()
    };
    let mut total = 0.0;
    let mut sum: Option<Vec<Tensor>> = None;
    for r in results {
        let (loss, grads) = r?;
        total += loss;
        match &mut sum {
            None => sum = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
                }
            }
        }
    }
    Ok((total, sum.unwrap_or_default()))
}

/// Mean loss over a dataset, forward only.
pub fn dataset_loss(model: &CsModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty dataset".into()));
    }
    let refs: Vec<&Sample> = data.samples.iter().collect();
    let mut total = 0.0;
    for chunk in refs.chunks(256) {
        let mut tape = Tape::new();
        let (_, _, parts) = model.record_loss(&mut tape, Binding::Frozen, chunk, refs.len())?;
        total += parts.total;
    }
    if !total.is_finite() {
        return Err(Error::Numeric(format!("validation loss is {total}")));
    }
    Ok(total)
}

/// Trains `model` in place and leaves it at the best validation checkpoint.
pub fn train(
    model: &mut CsModel,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainConfig,
    log: &mut dyn Write,
) -> Result<TrainReport> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = AdamState::new(config.adam, &model.parameters());
    let initial_val_loss = dataset_loss(model, val_set)?;
    let mut best = (initial_val_loss, 0usize, model.clone());
    let mut history = Vec::new();
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train_set.samples[i]).collect();
            let (loss, mut grads) = batch_gradients(model, &batch, config.threads)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("training loss is {loss} in epoch {epoch}")));
            }
            clip_grad_norm(&mut grads, config.clip_norm);
            adam.update(&mut model.parameters_mut(), &grads)?;
            weighted += loss * batch.len() as f64;
        }
        let train_loss = weighted / train_set.len() as f64;
        let val_loss = dataset_loss(model, val_set)?;
        let secs = start.elapsed().as_secs_f64();
        writeln!(log, "epoch={epoch} train_loss={train_loss} val_loss={val_loss} secs={secs:.3}")
            .map_err(|e| Error::io("<log>", e))?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            secs,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, model.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let (best_val_loss, best_epoch, best_model) = best;
    *model = best_model;
    Ok(TrainReport {
        initial_val_loss,
        best_val_loss,
        best_epoch,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ModelConfig {
        let mut c = ModelConfig::new(8, 16, 4, 6);
        c.context_history = 8;
        c
    }

    fn periodic(n: usize) -> (Vec<f64>, Vec<u8>) {
        let x = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * i as f64 / 8.0).sin())
            .collect();
        (x, vec![1; n])
    }

    #[test]
    fn dataset_bounds() {
        let c = config();
        let (x, m) = periodic(24);
        let view = SeriesView::new(&x, &m, &x).unwrap();
        let d = build_dataset(&view, &c).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.samples[0].t, 16);
        let short = SeriesView::new(&x[..23], &m[..23], &x[..23]).unwrap();
        assert!(matches!(build_dataset(&short, &c), Err(Error::Dataset(_))));
        let (x, m) = periodic(100);
        let view = SeriesView::new(&x, &m, &x).unwrap();
        let d = build_dataset(&view, &c).unwrap();
        assert_eq!(d.len(), 100 - 16 - 8 + 1);
        assert_eq!(d.samples.last().unwrap().t, 92);
    }

    #[test]
    fn thread_count_does_not_change_gradients() {
        let c = config();
        let model = CsModel::init(c.clone(), 2).unwrap();
        let (x, m) = periodic(200);
        let view = SeriesView::new(&x, &m, &x).unwrap();
        let d = build_dataset(&view, &c).unwrap();
        let batch: Vec<&Sample> = d.samples.iter().take(100).collect();
        let (l1, g1) = batch_gradients(&model, &batch, 1).unwrap();
        let (l3, g3) = batch_gradients(&model, &batch, 3).unwrap();
        assert_eq!(l1.to_bits(), l3.to_bits());
        assert_eq!(g1, g3);
    }

    #[test]
    fn periodic_signal_trains_and_is_reproducible() {
        let c = config();
        let (x, m) = periodic(300);
        let view = SeriesView::new(&x, &m, &x).unwrap();
        let all = build_dataset(&view, &c).unwrap();
        let (tr, va) = all.samples.split_at(200);
        let tr = Dataset { samples: tr.to_vec() };
        let va = Dataset { samples: va.to_vec() };
        let tc = TrainConfig {
            batch_size: 16,
            max_epochs: 4,
            seed: 5,
            adam: AdamConfig { lr: 1e-2, ..AdamConfig::default() },
            ..TrainConfig::default()
        };
        let run = || {
            let mut model = CsModel::init(c.clone(), 1).unwrap();
            let mut log = Vec::new();
            let rep = train(&mut model, &tr, &va, &tc, &mut log).unwrap();
            (model, rep, String::from_utf8(log).unwrap())
        };
        let (m1, r1, log) = run();
        let (m2, r2, _) = run();
        assert_eq!(m1, m2);
        assert_eq!(r1.best_val_loss, r2.best_val_loss);
        assert!(r1.best_val_loss < r1.initial_val_loss);
        let first = log.lines().next().unwrap();
        assert!(first.starts_with("epoch=1 train_loss="));
        assert!(first.contains(" val_loss=") && first.contains(" secs="));
    }

    #[test]
    fn early_stopping_respects_patience() {
        let c = config();
        let (x, m) = periodic(120);
        let view = SeriesView::new(&x, &m, &x).unwrap();
        let all = build_dataset(&view, &c).unwrap();
        let tr = Dataset { samples: all.samples[..40].to_vec() };
        let va = Dataset { samples: all.samples[40..].to_vec() };
        let tc = TrainConfig {
            batch_size: 8,
            max_epochs: 50,
            patience: 1,
            // a huge step makes validation loss worsen quickly
            adam: AdamConfig { lr: 0.5, ..AdamConfig::default() },
            ..TrainConfig::default()
        };
        let mut model = CsModel::init(c, 1).unwrap();
        let rep = train(&mut model, &tr, &va, &tc, &mut std::io::sink()).unwrap();
        assert!(rep.history.len() < 50);
        assert!(rep.history.len() <= rep.best_epoch + 1);
        assert_eq!(crate::trainer::dataset_loss(&model, &va).unwrap(), rep.best_val_loss);
    }

    #[test]
    fn rejects_zero_threads() {
        assert!(TrainConfig { threads: 0, ..TrainConfig::default() }.validate().is_err());
    }
}
