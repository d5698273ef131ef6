//! Seasonal and contextual forecasting branches with Gaussian outputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{bind, Binding, Linear, LinearVars, LstmParams, LstmState, LstmVars, LSTM_PARAM_NAMES};
use crate::spectral::{context_window_count, irfft_basis, WindowBatch};

pub const DEFAULT_SIGMA_MIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub seasonal_window: usize,
    pub total_window: usize,
    pub context_window: usize,
    pub context_stride: usize,
    pub context_history: usize,
    pub d_model: usize,
    pub sigma_min: f64,
    pub use_seasonal: bool,
    pub use_contextual: bool,
    /// Feed raw window values alongside the spectrum.
    pub use_covariate: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(48, 240, 4, 256)
    }
}

impl ModelConfig {
    /// Stride defaults to `w_c / 2`, context history to `w_s`.
    pub fn new(seasonal_window: usize, total_window: usize, context_window: usize, d_model: usize) -> Self {
        Self {
            seasonal_window,
            total_window,
            context_window,
            context_stride: (context_window / 2).max(1),
            context_history: seasonal_window,
            d_model,
            sigma_min: DEFAULT_SIGMA_MIN,
            use_seasonal: true,
            use_contextual: true,
            use_covariate: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.seasonal_window;
        if w < 2 || !w.is_multiple_of(2) {
            return Err(Error::Config(format!("seasonal window {w} must be even and >= 2")));
        }
        if self.total_window < 2 * w || !self.total_window.is_multiple_of(w) {
            return Err(Error::Config(format!(
                "total window {} must be a multiple (at least 2x) of the seasonal window {w}",
                self.total_window
            )));
        }
        context_window_count(self.context_window, self.context_stride, self.context_history)
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.context_history > self.total_window {
            return Err(Error::Config(format!(
                "context history {} exceeds the total window {}",
                self.context_history, self.total_window
            )));
        }
        if self.d_model == 0 {
            return Err(Error::Config("d_model must be positive".into()));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min.is_finite()) {
            return Err(Error::Config(format!("sigma_min {} must be positive", self.sigma_min)));
        }
        if !self.use_seasonal && !self.use_contextual {
            return Err(Error::Config("at least one branch must be enabled".into()));
        }
        Ok(())
    }

    pub fn num_seasonal_windows(&self) -> usize {
        self.total_window / self.seasonal_window
    }

    pub fn num_context_windows(&self) -> usize {
        (self.context_history - self.context_window) / self.context_stride + 1
    }

    fn feature_dim(&self, window: usize) -> usize {
        if self.use_covariate {
            2 * window
        } else {
            window
        }
    }

    pub fn log_var_floor(&self) -> f64 {
        2.0 * self.sigma_min.ln()
    }
}

/// Per-point Gaussian forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianForecast {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl GaussianForecast {
    pub fn sigma(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| (0.5 * lv).exp()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalParams {
    pub lstm: LstmParams,
    /// Emits the packed spectrum of the next window.
    pub mean_head: Linear,
    /// Emits per-point log-variance.
    pub var_head: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextParams {
    pub lstm: LstmParams,
    /// Emits `(μ, log σ²)`.
    pub head: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsModel {
    pub config: ModelConfig,
    pub seasonal: Option<SeasonalParams>,
    pub contextual: Option<ContextParams>,
}

/// One training or scoring sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: usize,
    pub seasonal: Option<WindowBatch>,
    pub contextual: Option<WindowBatch>,
}

#[derive(Debug, Clone, Copy)]
pub struct BranchOutput {
    pub mu: Var,
    pub log_var: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    pub seasonal: Option<BranchOutput>,
    pub contextual: Option<BranchOutput>,
}

/// Per-branch losses; `total` is exactly `seasonal + contextual`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub seasonal: f64,
    pub contextual: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(seasonal: f64, contextual: f64) -> Self {
        Self {
            seasonal,
            contextual,
            total: seasonal + contextual,
        }
    }
}

struct BoundBranches {
    seasonal: Option<(LstmVars, LinearVars, LinearVars, Var)>,
    contextual: Option<(LstmVars, LinearVars)>,
}

impl CsModel {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let w = config.seasonal_window;
        let seasonal = config.use_seasonal.then(|| SeasonalParams {
            lstm: LstmParams::init(config.feature_dim(w), d, &mut rng),
            mean_head: Linear::init(d, w, 1.0, &mut rng),
            var_head: Linear::init(d, w, 1.0, &mut rng),
        });
        let contextual = config.use_contextual.then(|| ContextParams {
            lstm: LstmParams::init(config.feature_dim(config.context_window), d, &mut rng),
            head: Linear::init(d, 2, 1.0, &mut rng),
        });
        Ok(Self {
            config,
            seasonal,
            contextual,
        })
    }

    /// Parameters in a fixed order with dotted names.
    pub fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(s) = &self.seasonal {
            for (n, t) in LSTM_PARAM_NAMES.iter().zip(s.lstm.tensors()) {
                out.push((format!("seasonal.lstm.{n}"), t));
            }
            out.push(("seasonal.mean_head.weight".into(), &s.mean_head.weight));
            out.push(("seasonal.mean_head.bias".into(), &s.mean_head.bias));
            out.push(("seasonal.var_head.weight".into(), &s.var_head.weight));
            out.push(("seasonal.var_head.bias".into(), &s.var_head.bias));
        }
        if let Some(c) = &self.contextual {
            for (n, t) in LSTM_PARAM_NAMES.iter().zip(c.lstm.tensors()) {
                out.push((format!("contextual.lstm.{n}"), t));
            }
            out.push(("contextual.head.weight".into(), &c.head.weight));
            out.push(("contextual.head.bias".into(), &c.head.bias));
        }
        out
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.named_parameters().into_iter().map(|(_, t)| t).collect()
    }

    /// Same order as [`CsModel::parameters`].
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        if let Some(s) = &mut self.seasonal {
            out.extend(s.lstm.tensors_mut());
            out.extend(s.mean_head.tensors_mut());
            out.extend(s.var_head.tensors_mut());
        }
        if let Some(c) = &mut self.contextual {
            out.extend(c.lstm.tensors_mut());
            out.extend(c.head.tensors_mut());
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|t| t.numel()).sum()
    }

    fn bind_branches(&self, tape: &mut Tape, binding: Binding) -> Result<(Vec<Var>, BoundBranches)> {
        let vars = bind(tape, &self.parameters(), binding)?;
        let mut rest = vars.as_slice();
        let mut bound = BoundBranches {
            seasonal: None,
            contextual: None,
        };
        if self.seasonal.is_some() {
            let lstm = LstmVars::from_vars(tape, &rest[..8])?;
            let mean = LinearVars::from_vars(tape, rest[8], rest[9])?;
            let var = LinearVars::from_vars(tape, rest[10], rest[11])?;
            let w = self.config.seasonal_window;
            let scale = (w as f64).sqrt();
            let basis: Vec<f64> = irfft_basis(w)?.into_iter().map(|b| b * scale).collect();
            let basis = tape.constant(Tensor::matrix(w, w, basis)?);
            bound.seasonal = Some((lstm, mean, var, basis));
            rest = &rest[12..];
        }
        if self.contextual.is_some() {
            let lstm = LstmVars::from_vars(tape, &rest[..8])?;
            let head = LinearVars::from_vars(tape, rest[8], rest[9])?;
            bound.contextual = Some((lstm, head));
        }
        Ok((vars, bound))
    }

    /// Step-major LSTM inputs for a batch: one `[batch × feature]` tensor per
    /// window. Spectra are scaled by `1/√w`.
    pub fn branch_inputs(&self, samples: &[&WindowBatch]) -> Result<Vec<Tensor>> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Argument("empty batch".into()))?;
        let (steps, w) = (first.num_windows, first.window);
        let feat = self.config.feature_dim(w);
        let inv = 1.0 / (w as f64).sqrt();
        let mut out = Vec::with_capacity(steps);
        for j in 0..steps {
            let mut data = Vec::with_capacity(samples.len() * feat);
            for s in samples {
                if s.num_windows != steps || s.window != w {
                    return Err(Error::Shape(format!(
                        "batch mixes window geometries: {}x{} vs {}x{}",
                        s.num_windows, s.window, steps, w
                    )));
                }
                let row = s.row(j);
                data.extend(row[..w].iter().map(|v| v * inv));
                if self.config.use_covariate {
                    data.extend_from_slice(&row[w..]);
                }
            }
            out.push(Tensor::matrix(samples.len(), feat, data)?);
        }
        Ok(out)
    }

    fn check_geometry(&self, b: &WindowBatch, seasonal: bool) -> Result<()> {
        let c = &self.config;
        let (n, w) = if seasonal {
            (c.num_seasonal_windows(), c.seasonal_window)
        } else {
            (c.num_context_windows(), c.context_window)
        };
        if b.num_windows != n || b.window != w {
            return Err(Error::Shape(format!(
                "{} sample has {} windows of {}, model expects {n} of {w}",
                if seasonal { "seasonal" } else { "contextual" },
                b.num_windows,
                b.window
            )));
        }
        Ok(())
    }

    /// Records both enabled branches for a batch and returns the bound
    /// parameter variables alongside the outputs.
    pub fn forward(
        &self,
        tape: &mut Tape,
        binding: Binding,
        seasonal: Option<&[Tensor]>,
        contextual: Option<&[Tensor]>,
    ) -> Result<(Vec<Var>, ForwardOutput)> {
        let (params, bound) = self.bind_branches(tape, binding)?;
        let floor = self.config.log_var_floor();
        let mut out = ForwardOutput {
            seasonal: None,
            contextual: None,
        };
        if let (Some((lstm, mean, var, basis)), Some(steps)) = (&bound.seasonal, seasonal) {
            let h = run_lstm(tape, lstm, steps)?;
            let spectrum = mean.forward(tape, h)?;
            let mu = tape.matmul(spectrum, *basis)?;
            let lv = var.forward(tape, h)?;
            let log_var = tape.clamp_min(lv, floor);
            out.seasonal = Some(BranchOutput { mu, log_var });
        }
        if let (Some((lstm, head)), Some(steps)) = (&bound.contextual, contextual) {
            let h = run_lstm(tape, lstm, steps)?;
            let y = head.forward(tape, h)?;
            let mu = tape.slice(y, 1, 0, 1)?;
            let lv = tape.slice(y, 1, 1, 1)?;
            let log_var = tape.clamp_min(lv, floor);
            out.contextual = Some(BranchOutput { mu, log_var });
        }
        Ok((params, out))
    }

    /// Seasonal forecast for the window following `sample`'s history.
    pub fn s_branch_forward(&self, sample: &WindowBatch) -> Result<GaussianForecast> {
        self.predict_seasonal(&[sample])?
            .pop()
            .ok_or_else(|| Error::Argument("empty batch".into()))
    }

    /// Contextual forecast for the point following `sample`'s history.
    pub fn c_branch_forward(&self, sample: &WindowBatch) -> Result<GaussianForecast> {
        self.predict_contextual(&[sample])?
            .pop()
            .ok_or_else(|| Error::Argument("empty batch".into()))
    }

    pub fn predict_seasonal(&self, samples: &[&WindowBatch]) -> Result<Vec<GaussianForecast>> {
        if self.seasonal.is_none() {
            return Err(Error::Argument("seasonal branch is disabled".into()));
        }
        for s in samples {
            self.check_geometry(s, true)?;
        }
        let inputs = self.branch_inputs(samples)?;
        let mut tape = Tape::new();
        let (_, out) = self.forward(&mut tape, Binding::Frozen, Some(&inputs), None)?;
        let b = out.seasonal.expect("seasonal branch bound");
        Ok(split_rows(&tape, b))
    }

    pub fn predict_contextual(&self, samples: &[&WindowBatch]) -> Result<Vec<GaussianForecast>> {
        if self.contextual.is_none() {
            return Err(Error::Argument("contextual branch is disabled".into()));
        }
        for s in samples {
            self.check_geometry(s, false)?;
        }
        let inputs = self.branch_inputs(samples)?;
        let mut tape = Tape::new();
        let (_, out) = self.forward(&mut tape, Binding::Frozen, None, Some(&inputs))?;
        let b = out.contextual.expect("contextual branch bound");
        Ok(split_rows(&tape, b))
    }

    /// Records the masked NLL of `samples` on `tape`. Each branch term is a
    /// sum over this batch divided by `divisor × points per target`, so
    /// shards of one batch can share the batch-wide normalization.
    pub fn record_loss(
        &self,
        tape: &mut Tape,
        binding: Binding,
        samples: &[&Sample],
        divisor: usize,
    ) -> Result<(Vec<Var>, Var, LossBreakdown)> {
        if samples.is_empty() || divisor == 0 {
            return Err(Error::Argument("loss needs a non-empty batch".into()));
        }
        let seasonal: Vec<&WindowBatch> = match self.seasonal {
            Some(_) => samples
                .iter()
                .map(|s| s.seasonal.as_ref().ok_or_else(|| missing("seasonal", s.t)))
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };
        let contextual: Vec<&WindowBatch> = match self.contextual {
            Some(_) => samples
                .iter()
                .map(|s| s.contextual.as_ref().ok_or_else(|| missing("contextual", s.t)))
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };
        for s in &seasonal {
            self.check_geometry(s, true)?;
        }
        for c in &contextual {
            self.check_geometry(c, false)?;
        }
        let s_in = if seasonal.is_empty() { None } else { Some(self.branch_inputs(&seasonal)?) };
        let c_in = if contextual.is_empty() { None } else { Some(self.branch_inputs(&contextual)?) };
        let (params, out) = self.forward(tape, binding, s_in.as_deref(), c_in.as_deref())?;
        let floor = self.config.log_var_floor();
        let mut terms = Vec::new();
        let (mut ls, mut lc) = (0.0, 0.0);
        if let Some(b) = out.seasonal {
            let w = self.config.seasonal_window;
            let v = branch_nll(tape, b, &seasonal, floor, (divisor * w) as f64)?;
            ls = tape.value(v).item();
            terms.push(v);
        }
        if let Some(b) = out.contextual {
            let v = branch_nll(tape, b, &contextual, floor, divisor as f64)?;
            lc = tape.value(v).item();
            terms.push(v);
        }
        let loss = match terms.as_slice() {
            [a] => *a,
            [a, b] => tape.add(*a, *b)?,
            _ => unreachable!("at least one branch is enabled"),
        };
        Ok((params, loss, LossBreakdown::new(ls, lc)))
    }

    /// Mean masked NLL of `samples` without gradient bookkeeping.
    pub fn evaluate_loss(&self, samples: &[&Sample]) -> Result<LossBreakdown> {
        let mut tape = Tape::new();
        let (_, _, parts) = self.record_loss(&mut tape, Binding::Frozen, samples, samples.len())?;
        Ok(parts)
    }
}

fn missing(branch: &str, t: usize) -> Error {
    Error::Dataset(format!("sample at t={t} has no {branch} windows"))
}

fn run_lstm(tape: &mut Tape, lstm: &LstmVars, steps: &[Tensor]) -> Result<Var> {
    let batch = steps
        .first()
        .ok_or_else(|| Error::Argument("empty input sequence".into()))?
        .shape()[0];
    let seq: Vec<Var> = steps.iter().map(|s| tape.constant(s.clone())).collect();
    let init = LstmState::zeros(tape, batch, lstm.hidden_dim());
    let (_, last) = crate::nn::lstm_unroll(tape, lstm, init, &seq)?;
    Ok(last.h)
}

fn split_rows(tape: &Tape, b: BranchOutput) -> Vec<GaussianForecast> {
    let mu = tape.value(b.mu);
    let lv = tape.value(b.log_var);
    let cols = mu.shape()[1];
    mu.data()
        .chunks(cols)
        .zip(lv.data().chunks(cols))
        .map(|(m, l)| GaussianForecast {
            mu: m.to_vec(),
            log_var: l.to_vec(),
        })
        .collect()
}

fn branch_nll(tape: &mut Tape, b: BranchOutput, samples: &[&WindowBatch], floor: f64, divisor: f64) -> Result<Var> {
    let mut target = Vec::new();
    for s in samples {
        target.extend(hybrid_target(&s.target, &s.target_denoised, &s.target_mask)?);
    }
    let shape = tape.shape(b.mu).to_vec();
    let target = tape.constant(Tensor::new(shape, target)?);
    let sum = nll_sum(tape, b.mu, b.log_var, target, floor)?;
    Ok(tape.scale(sum, 1.0 / divisor))
}

/// `Σ [lv + (target - μ)² e^{-lv}]` with `lv` clamped from below at `floor`.
pub fn nll_sum(tape: &mut Tape, mu: Var, log_var: Var, target: Var, floor: f64) -> Result<Var> {
    let lv = tape.clamp_min(log_var, floor);
    let r = tape.sub(target, mu)?;
    let r2 = tape.square(r);
    let neg = tape.scale(lv, -1.0);
    let prec = tape.exp(neg);
    let fit = tape.mul(r2, prec)?;
    let terms = tape.add(lv, fit)?;
    Ok(tape.sum(terms))
}

/// `x` where the mask marks a normal point, the denoised value elsewhere.
pub fn hybrid_target(x: &[f64], x_hat: &[f64], mask: &[u8]) -> Result<Vec<f64>> {
    if x.len() != x_hat.len() || x.len() != mask.len() {
        return Err(Error::Shape(format!(
            "target arrays differ in length: {} / {} / {}",
            x.len(),
            x_hat.len(),
            mask.len()
        )));
    }
    Ok(x.iter()
        .zip(x_hat)
        .zip(mask)
        .map(|((x, xh), m)| if *m != 0 { *x } else { *xh })
        .collect())
}

/// Mean Gaussian NLL against the hybrid target, variance floored at
/// `sigma_min²`.
pub fn masked_nll(mu: &[f64], log_var: &[f64], x: &[f64], x_hat: &[f64], mask: &[u8], sigma_min: f64) -> Result<f64> {
    let target = hybrid_target(x, x_hat, mask)?;
    if mu.len() != target.len() || log_var.len() != target.len() || target.is_empty() {
        return Err(Error::Shape(format!(
            "forecast length {} / {} does not match target length {}",
            mu.len(),
            log_var.len(),
            target.len()
        )));
    }
    let floor = 2.0 * sigma_min.ln();
    let sum: f64 = mu
        .iter()
        .zip(log_var)
        .zip(&target)
        .map(|((m, lv), y)| {
            let lv = lv.max(floor);
            let r = y - m;
            lv + r * r * (-lv).exp()
        })
        .sum();
    Ok(sum / target.len() as f64)
}

/// Minimizers of [`masked_nll`]: `μ* = hybrid` and, for the residual of the
/// supplied `mu`, `σ* = max(|hybrid - μ|, sigma_min)`.
pub fn loss_optima_oracle(
    x: &[f64],
    x_hat: &[f64],
    mask: &[u8],
    mu: &[f64],
    sigma_min: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let target = hybrid_target(x, x_hat, mask)?;
    if mu.len() != target.len() {
        return Err(Error::Shape(format!("mu length {} vs target {}", mu.len(), target.len())));
    }
    let sigma = target
        .iter()
        .zip(mu)
        .map(|(y, m)| (y - m).abs().max(sigma_min))
        .collect();
    Ok((target, sigma))
}

/// `L_s + L_c` for one seasonal and one contextual forecast.
pub fn total_loss(
    seasonal: (&GaussianForecast, &WindowBatch),
    contextual: (&GaussianForecast, &WindowBatch),
    sigma_min: f64,
) -> Result<LossBreakdown> {
    let nll = |f: &GaussianForecast, b: &WindowBatch| {
        masked_nll(&f.mu, &f.log_var, &b.target, &b.target_denoised, &b.target_mask, sigma_min)
    };
    Ok(LossBreakdown::new(nll(seasonal.0, seasonal.1)?, nll(contextual.0, contextual.1)?))
}
