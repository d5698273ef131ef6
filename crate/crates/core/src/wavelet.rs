//! Discrete wavelet transform with half-point symmetric boundary extension,
//! MAD noise estimation and universal soft-threshold denoising.
//!
//! Filters use the orthonormal convention (low-pass taps sum to √2 and have
//! unit energy), so a transform with zeroed details keeps constants exact and
//! energy bookkeeping on the coefficients is meaningful.

use std::str::FromStr;

use crate::error::{Error, Result};

/// Φ⁻¹(0.75): the median of |Z| for Z ~ N(0,1).
pub const MAD_NORMAL_QUANTILE: f64 = 0.674_489_750_196_081_7;

const DB4_REC_LO: [f64; 8] = [
    0.230_377_813_308_855_23,
    0.714_846_570_552_541_5,
    0.630_880_767_929_590_4,
    -0.027_983_769_416_983_85,
    -0.187_034_811_718_881_14,
    0.030_841_381_835_986_965,
    0.032_883_011_666_982_945,
    -0.010_597_401_784_997_278,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveletKind {
    Haar,
    Db4,
}

impl FromStr for WaveletKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "haar" | "db1" => Ok(WaveletKind::Haar),
            "db4" => Ok(WaveletKind::Db4),
            other => Err(Error::Argument(format!("unknown wavelet basis '{other}'"))),
        }
    }
}

impl std::fmt::Display for WaveletKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WaveletKind::Haar => "haar",
            WaveletKind::Db4 => "db4",
        })
    }
}

/// Analysis and synthesis filter pairs of an orthogonal wavelet.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBasis {
    pub kind: WaveletKind,
    pub dec_lo: Vec<f64>,
    pub dec_hi: Vec<f64>,
    pub rec_lo: Vec<f64>,
    pub rec_hi: Vec<f64>,
}

impl WaveletBasis {
    pub fn new(kind: WaveletKind) -> Self {
        let rec_lo: Vec<f64> = match kind {
            WaveletKind::Haar => vec![std::f64::consts::FRAC_1_SQRT_2; 2],
            WaveletKind::Db4 => DB4_REC_LO.to_vec(),
        };
        let f = rec_lo.len();
        // quadrature mirror: rec_hi[k] = (-1)^k rec_lo[F-1-k]
        let rec_hi: Vec<f64> = (0..f)
            .map(|k| if k % 2 == 0 { rec_lo[f - 1 - k] } else { -rec_lo[f - 1 - k] })
            .collect();
        let dec_lo = rec_lo.iter().rev().copied().collect();
        let dec_hi = rec_hi.iter().rev().copied().collect();
        Self {
            kind,
            dec_lo,
            dec_hi,
            rec_lo,
            rec_hi,
        }
    }

    pub fn haar() -> Self {
        Self::new(WaveletKind::Haar)
    }

    pub fn db4() -> Self {
        Self::new(WaveletKind::Db4)
    }

    pub fn filter_len(&self) -> usize {
        self.rec_lo.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryMode {
    Symmetric,
}

/// Output of [`wavedec`]. `details[0]` is the coarsest band (level L) and
/// the last entry is the finest (level 1).
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletDecomposition {
    pub approx: Vec<f64>,
    pub details: Vec<Vec<f64>>,
    pub level: usize,
    pub original_length: usize,
    pub boundary_mode: BoundaryMode,
}

impl WaveletDecomposition {
    /// Detail band at decomposition level `i` (1 = finest).
    pub fn detail(&self, i: usize) -> &[f64] {
        &self.details[self.level - i]
    }

    pub fn detail_mut(&mut self, i: usize) -> &mut Vec<f64> {
        let idx = self.level - i;
        &mut self.details[idx]
    }
}

/// Maps any integer index onto `0..n` by half-point symmetric reflection.
fn reflect(idx: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = idx.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

fn band_len(n: usize, filter_len: usize) -> usize {
    (n + filter_len - 1) / 2
}

/// Signal length at the input of each level: `[n, n_1, ..., n_L]`.
fn length_chain(n: usize, filter_len: usize, level: usize) -> Vec<usize> {
    let mut chain = vec![n];
    for _ in 0..level {
        let last = *chain.last().unwrap();
        chain.push(band_len(last, filter_len));
    }
    chain
}

fn dwt_single(x: &[f64], basis: &WaveletBasis) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let f = basis.filter_len();
    let out_len = band_len(n, f);
    let mut approx = Vec::with_capacity(out_len);
    let mut detail = Vec::with_capacity(out_len);
    for o in 0..out_len {
        let centre = (2 * o + 1) as isize;
        let (mut a, mut d) = (0.0, 0.0);
        for j in 0..f {
            let v = x[reflect(centre - j as isize, n)];
            a += basis.dec_lo[j] * v;
            d += basis.dec_hi[j] * v;
        }
        approx.push(a);
        detail.push(d);
    }
    (approx, detail)
}

fn idwt_single(approx: &[f64], detail: &[f64], basis: &WaveletBasis, out_len: usize) -> Vec<f64> {
    let f = basis.filter_len();
    let mut out = vec![0.0; out_len];
    for (n, slot) in out.iter_mut().enumerate() {
        // x[n] = sum_k a[k] rec_lo[n + F - 2 - 2k] + d[k] rec_hi[n + F - 2 - 2k]
        let shifted = n + f - 2;
        let k_min = (shifted + 1).saturating_sub(f).div_ceil(2);
        let k_max = (shifted / 2).min(approx.len() - 1);
        let mut acc = 0.0;
        for k in k_min..=k_max {
            let tap = shifted - 2 * k;
            acc += approx[k] * basis.rec_lo[tap] + detail[k] * basis.rec_hi[tap];
        }
        *slot = acc;
    }
    out
}

pub fn max_level(n: usize) -> usize {
    if n < 2 {
        0
    } else {
        (usize::BITS - 1 - n.leading_zeros()) as usize
    }
}

/// `min(3, floor(log2 n))`. Level-wise MAD thresholds treat a band that is
/// dominated by signal as noise, so the coarsest detail band must stay below
/// the seasonal periods of interest (band 4 already spans periods 16..32).
pub fn default_level(n: usize) -> usize {
    max_level(n).min(3)
}

pub fn wavedec(signal: &[f64], basis: &WaveletBasis, level: usize) -> Result<WaveletDecomposition> {
    let n = signal.len();
    if n < 2 {
        return Err(Error::Argument(format!("signal of length {n} is too short to decompose")));
    }
    let max = max_level(n);
    if level == 0 || level > max {
        return Err(Error::Argument(format!(
            "decomposition level {level} outside 1..={max} for length {n}"
        )));
    }
    let mut approx = signal.to_vec();
    let mut details = Vec::with_capacity(level);
    for _ in 0..level {
        let (a, d) = dwt_single(&approx, basis);
        details.push(d);
        approx = a;
    }
    details.reverse();
    Ok(WaveletDecomposition {
        approx,
        details,
        level,
        original_length: n,
        boundary_mode: BoundaryMode::Symmetric,
    })
}

pub fn waverec(decomp: &WaveletDecomposition, basis: &WaveletBasis) -> Result<Vec<f64>> {
    if decomp.details.len() != decomp.level || decomp.level == 0 {
        return Err(Error::Corruption(format!(
            "{} detail bands for level {}",
            decomp.details.len(),
            decomp.level
        )));
    }
    let chain = length_chain(decomp.original_length, basis.filter_len(), decomp.level);
    if decomp.approx.len() != chain[decomp.level] {
        return Err(Error::Corruption(format!(
            "approximation band has {} coefficients, expected {}",
            decomp.approx.len(),
            chain[decomp.level]
        )));
    }
    let mut approx = decomp.approx.clone();
    for lvl in (1..=decomp.level).rev() {
        let detail = decomp.detail(lvl);
        if detail.len() != chain[lvl] {
            return Err(Error::Corruption(format!(
                "detail band {lvl} has {} coefficients, expected {}",
                detail.len(),
                chain[lvl]
            )));
        }
        approx = idwt_single(&approx, detail, basis, chain[lvl - 1]);
    }
    Ok(approx)
}

/// Median of `values`; even lengths average the two central order statistics.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Argument("median of empty input".into()));
    }
    let mut v = values.to_vec();
    let n = v.len();
    let mid = n / 2;
    let (_, &mut upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        return Ok(upper);
    }
    let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(0.5 * (lower + upper))
}

/// Robust noise level: `median(|c|) / Φ⁻¹(0.75)`.
pub fn mad_sigma(coeffs: &[f64]) -> Result<f64> {
    if coeffs.is_empty() {
        return Err(Error::Argument("mad_sigma of empty input".into()));
    }
    let abs: Vec<f64> = coeffs.iter().map(|c| c.abs()).collect();
    Ok(median(&abs)? / MAD_NORMAL_QUANTILE)
}

/// `sigma * sqrt(2 ln n)`.
pub fn universal_threshold(sigma: f64, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::Argument(format!("universal threshold needs n >= 2, got {n}")));
    }
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::Argument(format!("invalid sigma {sigma}")));
    }
    Ok(sigma * (2.0 * (n as f64).ln()).sqrt())
}

pub fn soft_threshold(coeffs: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if lambda < 0.0 || lambda.is_nan() {
        return Err(Error::Argument(format!("threshold must be non-negative, got {lambda}")));
    }
    Ok(coeffs.iter().map(|&c| shrink(c, lambda)).collect())
}

#[inline]
fn shrink(c: f64, lambda: f64) -> f64 {
    let m = c.abs() - lambda;
    if m > 0.0 {
        m.copysign(c)
    } else {
        0.0
    }
}

/// Thresholds every detail band of `decomp` in place with its own
/// level-wise universal threshold. Returns the thresholds, finest first.
pub fn threshold_details(decomp: &mut WaveletDecomposition) -> Result<Vec<f64>> {
    let n = decomp.original_length;
    let mut lambdas = Vec::with_capacity(decomp.level);
    for lvl in 1..=decomp.level {
        let sigma = mad_sigma(decomp.detail(lvl))?;
        let lambda = universal_threshold(sigma, n)?;
        for c in decomp.detail_mut(lvl).iter_mut() {
            *c = shrink(*c, lambda);
        }
        lambdas.push(lambda);
    }
    Ok(lambdas)
}

/// Removes the noise component: decompose, soft-threshold each detail band
/// with `λ_i = σ_i √(2 ln n)`, reconstruct. The approximation band is kept.
pub fn denoise(signal: &[f64], basis: &WaveletBasis, level: usize) -> Result<Vec<f64>> {
    let mut decomp = wavedec(signal, basis, level)?;
    threshold_details(&mut decomp)?;
    waverec(&decomp, basis)
}
