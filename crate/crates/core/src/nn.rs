//! LSTM cell, dense layers, parameter initialization and Adam.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// How parameter tensors are placed on a tape.
#[derive(Debug, Clone, Copy)]
pub enum Binding {
    /// One trainable leaf per tensor.
    Trainable,
    /// Constants: inference without gradient bookkeeping.
    Frozen,
    /// Slices of a single flat vector, in parameter order. Used for
    /// finite-difference checks over every parameter at once.
    Flat(Var),
}

/// Places `tensors` on `tape` according to `binding`.
pub fn bind(tape: &mut Tape, tensors: &[&Tensor], binding: Binding) -> Result<Vec<Var>> {
    match binding {
        Binding::Trainable => Ok(tensors.iter().map(|t| tape.param((*t).clone())).collect()),
        Binding::Frozen => Ok(tensors.iter().map(|t| tape.constant((*t).clone())).collect()),
        Binding::Flat(flat) => {
            let total: usize = tensors.iter().map(|t| t.numel()).sum();
            if tape.shape(flat) != [total] {
                return Err(Error::Shape(format!(
                    "flat parameter vector has shape {:?}, expected [{total}]",
                    tape.shape(flat)
                )));
            }
            let mut offset = 0;
            let mut vars = Vec::with_capacity(tensors.len());
            for t in tensors {
                let piece = tape.slice(flat, 0, offset, t.numel())?;
                vars.push(tape.reshape(piece, t.shape())?);
                offset += t.numel();
            }
            Ok(vars)
        }
    }
}

/// Concatenates parameter tensors into one vector (same order as [`bind`]).
pub fn flatten(tensors: &[&Tensor]) -> Tensor {
    Tensor::vector(tensors.iter().flat_map(|t| t.data().iter().copied()).collect())
}

/// Gate weights are `[hidden × (hidden + input)]` acting on `[h, x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_f: Tensor,
    pub w_i: Tensor,
    pub w_c: Tensor,
    pub w_o: Tensor,
    pub b_f: Tensor,
    pub b_i: Tensor,
    pub b_c: Tensor,
    pub b_o: Tensor,
}

pub const LSTM_PARAM_NAMES: [&str; 8] = ["w_f", "w_i", "w_c", "w_o", "b_f", "b_i", "b_c", "b_o"];

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = || Tensor::zeros(&[hidden_dim, hidden_dim + input_dim]);
        let b = || Tensor::zeros(&[hidden_dim]);
        Self {
            w_f: w(),
            w_i: w(),
            w_c: w(),
            w_o: w(),
            b_f: b(),
            b_i: b(),
            b_c: b(),
            b_o: b(),
        }
    }

    /// Weights ~ U(-1/√hidden, 1/√hidden); forget bias 1, other biases 0.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let mut p = Self::zeros(input_dim, hidden_dim);
        for w in [&mut p.w_f, &mut p.w_i, &mut p.w_c, &mut p.w_o] {
            w.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        }
        p.b_f.data_mut().iter_mut().for_each(|v| *v = 1.0);
        p
    }

    pub fn hidden_dim(&self) -> usize {
        self.b_f.numel()
    }

    pub fn input_dim(&self) -> usize {
        self.w_f.shape()[1] - self.hidden_dim()
    }

    pub fn tensors(&self) -> [&Tensor; 8] {
        [&self.w_f, &self.w_i, &self.w_c, &self.w_o, &self.b_f, &self.b_i, &self.b_c, &self.b_o]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.w_f,
            &mut self.w_i,
            &mut self.w_c,
            &mut self.w_o,
            &mut self.b_f,
            &mut self.b_i,
            &mut self.b_c,
            &mut self.b_o,
        ]
    }

    pub fn bind(&self, tape: &mut Tape, binding: Binding) -> Result<LstmVars> {
        let vars = bind(tape, &self.tensors(), binding)?;
        LstmVars::from_vars(tape, &vars)
    }
}

/// Seeded initialization of a standalone LSTM.
pub fn init_params(input_dim: usize, hidden_dim: usize, seed: u64) -> LstmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LstmParams::init(input_dim, hidden_dim, &mut rng)
}

/// LSTM parameters placed on a tape, with pre-transposed gate weights.
#[derive(Debug, Clone)]
pub struct LstmVars {
    weights_t: [Var; 4],
    biases: [Var; 4],
    hidden: usize,
    input: usize,
}

impl LstmVars {
    /// `vars` in [`LSTM_PARAM_NAMES`] order.
    pub fn from_vars(tape: &mut Tape, vars: &[Var]) -> Result<Self> {
        if vars.len() != 8 {
            return Err(Error::Shape(format!("LSTM needs 8 parameter tensors, got {}", vars.len())));
        }
        let hidden = tape.shape(vars[4])[0];
        let ws = tape.shape(vars[0]).to_vec();
        if ws.len() != 2 || ws[0] != hidden || ws[1] < hidden {
            return Err(Error::Shape(format!("gate weight shape {ws:?} does not match hidden {hidden}")));
        }
        for v in &vars[1..4] {
            if tape.shape(*v) != ws.as_slice() {
                return Err(Error::Shape(format!(
                    "gate weights differ in shape: {ws:?} vs {:?}",
                    tape.shape(*v)
                )));
            }
        }
        for v in &vars[4..8] {
            if tape.shape(*v) != [hidden] {
                return Err(Error::Shape(format!(
                    "gate bias shape {:?} does not match hidden {hidden}",
                    tape.shape(*v)
                )));
            }
        }
        let mut weights_t = [vars[0]; 4];
        for (slot, v) in weights_t.iter_mut().zip(&vars[..4]) {
            *slot = tape.transpose(*v)?;
        }
        Ok(Self {
            weights_t,
            biases: [vars[4], vars[5], vars[6], vars[7]],
            hidden,
            input: ws[1] - hidden,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }
}

/// Hidden and cell state, each `[batch × hidden]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(tape: &mut Tape, batch: usize, hidden: usize) -> Self {
        let h = tape.constant(Tensor::zeros(&[batch, hidden]));
        let c = tape.constant(Tensor::zeros(&[batch, hidden]));
        Self { h, c }
    }
}

/// One step for a batch of inputs `x: [batch × input]`:
///
/// ```text
/// f = σ(W_f·[h,x] + b_f)   i = σ(W_i·[h,x] + b_i)   C̃ = tanh(W_c·[h,x] + b_c)
/// C' = f⊙C + i⊙C̃          o = σ(W_o·[h,x] + b_o)   h' = o⊙tanh(C')
/// ```
pub fn lstm_step(tape: &mut Tape, p: &LstmVars, state: &LstmState, x: Var) -> Result<LstmState> {
    let xs = tape.shape(x).to_vec();
    let hs = tape.shape(state.h).to_vec();
    if xs.len() != 2 || xs[1] != p.input || hs != [xs[0], p.hidden] {
        return Err(Error::Shape(format!(
            "lstm_step: input {xs:?} / state {hs:?} incompatible with input dim {} hidden dim {}",
            p.input, p.hidden
        )));
    }
    let hx = tape.concat(&[state.h, x], 1)?;
    let gate = |tape: &mut Tape, k: usize| -> Result<Var> {
        let z = tape.matmul(hx, p.weights_t[k])?;
        tape.add_row(z, p.biases[k])
    };
    let zf = gate(tape, 0)?;
    let zi = gate(tape, 1)?;
    let zc = gate(tape, 2)?;
    let zo = gate(tape, 3)?;
    let f = tape.sigmoid(zf);
    let i = tape.sigmoid(zi);
    let cand = tape.tanh(zc);
    let o = tape.sigmoid(zo);
    let keep = tape.mul(f, state.c)?;
    let write = tape.mul(i, cand)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok(LstmState { h, c })
}

/// Applies [`lstm_step`] over `sequence` and returns every hidden state plus
/// the final state.
pub fn lstm_unroll(
    tape: &mut Tape,
    p: &LstmVars,
    init: LstmState,
    sequence: &[Var],
) -> Result<(Vec<Var>, LstmState)> {
    if sequence.is_empty() {
        return Err(Error::Argument("lstm_unroll needs a non-empty sequence".into()));
    }
    let mut state = init;
    let mut outputs = Vec::with_capacity(sequence.len());
    for &x in sequence {
        state = lstm_step(tape, p, &state, x)?;
        outputs.push(state.h);
    }
    Ok((outputs, state))
}

/// Affine map `y = x·Wᵀ + b` with `W: [out × in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
        }
    }

    /// Weights ~ U(-1/√in, 1/√in) scaled by `gain`, zero bias.
    pub fn init(input: usize, output: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let bound = gain / (input as f64).sqrt();
        let mut l = Self::zeros(input, output);
        l.weight.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        l
    }

    pub fn tensors(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    weight_t: Var,
    bias: Var,
}

impl LinearVars {
    pub fn from_vars(tape: &mut Tape, weight: Var, bias: Var) -> Result<Self> {
        Ok(Self {
            weight_t: tape.transpose(weight)?,
            bias,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = tape.matmul(x, self.weight_t)?;
        tape.add_row(y, self.bias)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    /// Bias-corrected Adam update. Fails without touching anything if a
    /// gradient is non-finite or misaligned.
    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam: {} params, {} grads, state for {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.numel() != self.m[i].len() {
                return Err(Error::Shape(format!(
                    "adam: parameter {i} has shape {:?}, gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            if let Some(bad) = g.data().iter().find(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient {bad} for parameter {i}")));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grads
            .iter_mut()
            .for_each(|g| g.data_mut().iter_mut().for_each(|x| *x *= s));
    }
    norm
}
