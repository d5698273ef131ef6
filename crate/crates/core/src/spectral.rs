//! Real-input FFT with a lossless `w`-real packing, plus the seasonal
//! (non-overlapping) and contextual (overlapping) window extractors.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Complex {
    re: f64,
    im: f64,
}

impl Complex {
    const ZERO: Complex = Complex { re: 0.0, im: 0.0 };

    fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    fn cis(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new(c, s)
    }

    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }

    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.im + o.im)
    }
}

fn smallest_factor(n: usize) -> usize {
    if n.is_multiple_of(4) {
        return 4;
    }
    let mut p = 2;
    while p * p <= n {
        if n.is_multiple_of(p) {
            return p;
        }
        p += 1;
    }
    n
}

/// Recursive mixed-radix decimation-in-time transform. `sign` is -1 for the
/// forward transform and +1 for the (unscaled) inverse.
fn fft_in(input: &[Complex], stride: usize, n: usize, sign: f64, out: &mut [Complex]) {
    if n == 1 {
        out[0] = input[0];
        return;
    }
    let p = smallest_factor(n);
    let m = n / p;
    // sub-transforms of the p decimated sequences, stored contiguously
    let mut subs = vec![Complex::ZERO; n];
    for r in 0..p {
        fft_in(&input[r * stride..], stride * p, m, sign, &mut subs[r * m..(r + 1) * m]);
    }
    let base = sign * 2.0 * PI / n as f64;
    for (k, slot) in out.iter_mut().enumerate().take(n) {
        let km = k % m;
        let mut acc = subs[km];
        for r in 1..p {
            let tw = Complex::cis(base * ((r * k) % n) as f64);
            acc = acc.add(subs[r * m + km].mul(tw));
        }
        *slot = acc;
    }
}

fn fft(input: &[Complex], sign: f64) -> Vec<Complex> {
    let mut out = vec![Complex::ZERO; input.len()];
    if !input.is_empty() {
        fft_in(input, 1, input.len(), sign, &mut out);
    }
    out
}

/// Packed spectrum of a real window of even length `w`:
/// `[Re X0, Re X1, Im X1, ..., Re X(w/2-1), Im X(w/2-1), Re X(w/2)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumPacked {
    pub coeffs: Vec<f64>,
}

impl SpectrumPacked {
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `Σ_k |X_k|²` over the full (Hermitian) spectrum.
    pub fn energy(&self) -> f64 {
        let w = self.coeffs.len();
        let c = &self.coeffs;
        let edges = c[0] * c[0] + c[w - 1] * c[w - 1];
        edges + 2.0 * c[1..w - 1].iter().map(|v| v * v).sum::<f64>()
    }
}

fn check_even(w: usize) -> Result<()> {
    if w < 2 || !w.is_multiple_of(2) {
        return Err(Error::Argument(format!("window length must be even and >= 2, got {w}")));
    }
    Ok(())
}

/// Unnormalized forward transform of a real window.
pub fn rfft(window: &[f64]) -> Result<SpectrumPacked> {
    let w = window.len();
    check_even(w)?;
    let input: Vec<Complex> = window.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let spec = fft(&input, -1.0);
    let mut coeffs = Vec::with_capacity(w);
    coeffs.push(spec[0].re);
    for x in &spec[1..w / 2] {
        coeffs.push(x.re);
        coeffs.push(x.im);
    }
    coeffs.push(spec[w / 2].re);
    Ok(SpectrumPacked { coeffs })
}

/// Inverse of [`rfft`], including the `1/w` scaling.
pub fn irfft(spectrum: &SpectrumPacked, w: usize) -> Result<Vec<f64>> {
    check_even(w)?;
    if spectrum.len() != w {
        return Err(Error::Argument(format!(
            "packed spectrum has {} reals, expected {w}",
            spectrum.len()
        )));
    }
    let c = &spectrum.coeffs;
    let mut full = vec![Complex::ZERO; w];
    full[0] = Complex::new(c[0], 0.0);
    full[w / 2] = Complex::new(c[w - 1], 0.0);
    for k in 1..w / 2 {
        let x = Complex::new(c[2 * k - 1], c[2 * k]);
        full[k] = x;
        full[w - k] = Complex::new(x.re, -x.im);
    }
    let scale = 1.0 / w as f64;
    Ok(fft(&full, 1.0).into_iter().map(|x| x.re * scale).collect())
}

/// Row-major `w × w` matrix `B` with `irfft(s) = s · B` for packed `s`.
pub fn irfft_basis(w: usize) -> Result<Vec<f64>> {
    check_even(w)?;
    let mut basis = Vec::with_capacity(w * w);
    let mut unit = vec![0.0; w];
    for j in 0..w {
        unit[j] = 1.0;
        basis.extend(irfft(&SpectrumPacked { coeffs: unit.clone() }, w)?);
        unit[j] = 0.0;
    }
    Ok(basis)
}

/// Parallel arrays a window extractor reads from.
#[derive(Debug, Clone, Copy)]
pub struct SeriesView<'a> {
    pub values: &'a [f64],
    pub mask: &'a [u8],
    pub denoised: &'a [f64],
}

impl<'a> SeriesView<'a> {
    pub fn new(values: &'a [f64], mask: &'a [u8], denoised: &'a [f64]) -> Result<Self> {
        if mask.len() != values.len() || denoised.len() != values.len() {
            return Err(Error::Shape(format!(
                "series arrays differ in length: values {}, mask {}, denoised {}",
                values.len(),
                mask.len(),
                denoised.len()
            )));
        }
        Ok(Self {
            values,
            mask,
            denoised,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One sample: per-window features `[spectrum ‖ raw]` plus aligned targets.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    /// Row-major `num_windows × feature_dim`.
    pub inputs: Vec<f64>,
    /// Row-major `num_windows × window` raw values.
    pub covariates: Vec<f64>,
    pub num_windows: usize,
    pub window: usize,
    pub target: Vec<f64>,
    pub target_mask: Vec<u8>,
    pub target_denoised: Vec<f64>,
}

impl WindowBatch {
    pub fn feature_dim(&self) -> usize {
        2 * self.window
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.feature_dim();
        &self.inputs[i * d..(i + 1) * d]
    }
}

fn window_features(values: &[f64], starts: impl Iterator<Item = usize>, w: usize) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let mut inputs = Vec::new();
    let mut covariates = Vec::new();
    let mut count = 0;
    for s in starts {
        let raw = &values[s..s + w];
        inputs.extend(rfft(raw)?.coeffs);
        inputs.extend_from_slice(raw);
        covariates.extend_from_slice(raw);
        count += 1;
    }
    Ok((inputs, covariates, count))
}

fn check_seasonal(w_s: usize, total: usize) -> Result<usize> {
    check_even(w_s)?;
    if total == 0 || !total.is_multiple_of(w_s) {
        return Err(Error::Argument(format!(
            "total history {total} is not a multiple of the seasonal window {w_s}"
        )));
    }
    Ok(total / w_s)
}

/// Features of the `total / w_s` non-overlapping windows ending at `t - 1`.
/// Targets are left empty; use [`extract_seasonal`] for training samples.
pub fn seasonal_inputs(values: &[f64], w_s: usize, total: usize, t: usize) -> Result<WindowBatch> {
    let n_s = check_seasonal(w_s, total)?;
    if t < total || t > values.len() {
        return Err(Error::Argument(format!(
            "seasonal sample at t={t} needs {total} points of history within a series of length {}",
            values.len()
        )));
    }
    let start = t - total;
    let (inputs, covariates, count) =
        window_features(values, (0..n_s).map(|j| start + j * w_s), w_s)?;
    Ok(WindowBatch {
        inputs,
        covariates,
        num_windows: count,
        window: w_s,
        target: Vec::new(),
        target_mask: Vec::new(),
        target_denoised: Vec::new(),
    })
}

/// Seasonal training sample at `t`: history `[t - total, t)` cut into
/// `total / w_s` windows, target `[t, t + w_s)`.
pub fn extract_seasonal(view: &SeriesView, w_s: usize, total: usize, t: usize) -> Result<WindowBatch> {
    if t + w_s > view.len() || t < total {
        return Err(Error::Argument(format!(
            "seasonal sample at t={t} out of range: needs [{}, {}) within length {}",
            t as i64 - total as i64,
            t + w_s,
            view.len()
        )));
    }
    let mut batch = seasonal_inputs(view.values, w_s, total, t)?;
    batch.target = view.values[t..t + w_s].to_vec();
    batch.target_mask = view.mask[t..t + w_s].to_vec();
    batch.target_denoised = view.denoised[t..t + w_s].to_vec();
    Ok(batch)
}

/// Checks the overlapping-window geometry and returns the window count.
pub fn context_window_count(w_c: usize, stride: usize, history: usize) -> Result<usize> {
    check_even(w_c)?;
    if stride == 0 || stride >= w_c {
        return Err(Error::Argument(format!(
            "context stride {stride} must satisfy 1 <= stride < window {w_c}"
        )));
    }
    if history < w_c || !(history - w_c).is_multiple_of(stride) {
        return Err(Error::Argument(format!(
            "context history {history} must be >= {w_c} with (history - window) divisible by stride {stride}"
        )));
    }
    Ok((history - w_c) / stride + 1)
}

pub fn context_inputs(values: &[f64], w_c: usize, stride: usize, history: usize, t: usize) -> Result<WindowBatch> {
    let count = context_window_count(w_c, stride, history)?;
    if t < history || t > values.len() {
        return Err(Error::Argument(format!(
            "context sample at t={t} needs {history} points of history within a series of length {}",
            values.len()
        )));
    }
    let start = t - history;
    let (inputs, covariates, num_windows) =
        window_features(values, (0..count).map(|j| start + j * stride), w_c)?;
    Ok(WindowBatch {
        inputs,
        covariates,
        num_windows,
        window: w_c,
        target: Vec::new(),
        target_mask: Vec::new(),
        target_denoised: Vec::new(),
    })
}

/// Contextual sample at `t`: overlapping windows over `[t - history, t)`,
/// target the single point `x_t`.
pub fn extract_context(
    view: &SeriesView,
    w_c: usize,
    stride: usize,
    history: usize,
    t: usize,
) -> Result<WindowBatch> {
    if t >= view.len() {
        return Err(Error::Argument(format!(
            "context target t={t} beyond series of length {}",
            view.len()
        )));
    }
    let mut batch = context_inputs(view.values, w_c, stride, history, t)?;
    batch.target = vec![view.values[t]];
    batch.target_mask = vec![view.mask[t]];
    batch.target_denoised = vec![view.denoised[t]];
    Ok(batch)
}
