//! Closed-form momentum results for a periodic sparse gradient signal and the
//! simulators that check them.
//!
//! The signal emits `C` every `N` steps and `u` otherwise (`t >= 1`). Plain
//! momentum `m_t = beta m_{t-1} + g_t` has the closed form
//! `m_{kN} = S_k (u beta B_{N-1} + C)`, where `B_x = (beta^x - 1)/(beta - 1)`
//! and `S_k = sum_{j<k} beta^{jN}`. With a length-`L` gradient queue boosting
//! each gradient, repeated `u` values are damped and the sparse `C` amplified,
//! which lowers the `|C/u|` ratio needed for the momentum to follow `C`.
//!
//! The batch-composition helpers model a batch of `p` monotonous and `q`
//! sparse samples, the error of its mean against the sparse expectation and
//! the boost magnitude `zeta` that restores it.

use crate::error::{Error, Result};
use crate::queue::{BoostConfig, GradQueue};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseSignalSpec {
    /// Sparse amplitude.
    pub c: f64,
    /// Monotonous amplitude.
    pub u: f64,
    /// Sparse period.
    pub n: usize,
}

impl SparseSignalSpec {
    pub fn new(c: f64, u: f64, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidConfig(format!(
                "sparse period must be >= 3, got {n}"
            )));
        }
        Ok(Self { c, u, n })
    }

    pub fn at(&self, t: usize) -> f64 {
        sparse_signal(t, self)
    }
}

pub fn sparse_signal(t: usize, spec: &SparseSignalSpec) -> f64 {
    if t.is_multiple_of(spec.n) {
        spec.c
    } else {
        spec.u
    }
}

/// `(beta^x - 1) / (beta - 1)`, i.e. `1 + beta + ... + beta^(x-1)`.
pub fn geometric_sum(beta: f64, x: usize) -> f64 {
    if (beta - 1.0).abs() < f64::EPSILON {
        return x as f64;
    }
    (beta.powi(x as i32) - 1.0) / (beta - 1.0)
}

/// `sum_{j=0}^{k-1} beta^(jN)`.
pub fn periodic_sum(beta: f64, n: usize, k: usize) -> f64 {
    geometric_sum(beta.powi(n as i32), k)
}

/// Plain momentum driven by the sparse signal; element `i` is `m_{i+1}`.
pub fn simulate_momentum(spec: &SparseSignalSpec, beta: f64, steps: usize) -> Vec<f64> {
    let mut m = 0.0;
    (1..=steps)
        .map(|t| {
            m = beta * m + spec.at(t);
            m
        })
        .collect()
}

/// Momentum at step `kN`.
pub fn lemma1_closed(spec: &SparseSignalSpec, beta: f64, k: usize) -> f64 {
    periodic_sum(beta, spec.n, k) * (spec.u * beta * geometric_sum(beta, spec.n - 1) + spec.c)
}

/// Lower bound on `|C/u|` for plain momentum at `kN` to carry the sign of `C`
/// when `uC < 0`: `beta * B_{N-1}`.
pub fn threshold_plain(n: usize, beta: f64) -> f64 {
    beta * geometric_sum(beta, n - 1)
}

/// `beta * B_N`, one index higher than [`threshold_plain`]. Reproduces the
/// commonly quoted values 2.44 (N=3) and 5.51 (N=9) at `beta = 0.9`.
pub fn threshold_plain_shifted(n: usize, beta: f64) -> f64 {
    beta * geometric_sum(beta, n)
}

/// Boost scale of a repeated value in a full queue of `l - 1` copies of it and
/// one distinct value: `max(1/sqrt(l-1), 1/rho)`.
pub fn lemma2_phi(l: usize, rho: f64) -> Result<f64> {
    if l < 2 {
        return Err(Error::Regime(format!(
            "queue length {l} has no repeated value"
        )));
    }
    Ok((1.0 / ((l - 1) as f64).sqrt()).max(1.0 / rho))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaParams {
    pub beta: f64,
    pub rho: f64,
    /// Queue length.
    pub l: usize,
    /// Period index.
    pub k: usize,
}

impl LemmaParams {
    fn check(&self, n: usize) -> Result<()> {
        if self.l + 1 >= n {
            return Err(Error::Regime(format!(
                "queue length {} must be below N-1 = {}",
                self.l,
                n - 1
            )));
        }
        if self.l == 1 {
            return Err(Error::Regime("queue length 1 carries no statistics".into()));
        }
        if self.rho < 1.0 {
            return Err(Error::Regime(format!("rho must be >= 1, got {}", self.rho)));
        }
        Ok(())
    }

    /// Scale for the `l` steps after a sparse event (zero when `l = 0`, where
    /// it never applies).
    fn phi(&self) -> f64 {
        if self.l == 0 {
            0.0
        } else {
            lemma2_phi(self.l, self.rho).expect("l >= 2 checked")
        }
    }
}

/// `beta^(N-1-L) B_L + B_{N-1-L} / rho`: the first period, where the warm-up
/// steps pass through unboosted.
pub fn gamma0(n: usize, params: &LemmaParams) -> Result<f64> {
    params.check(n)?;
    let rest = n - 1 - params.l;
    Ok(
        params.beta.powi(rest as i32) * geometric_sum(params.beta, params.l)
            + geometric_sum(params.beta, rest) / params.rho,
    )
}

/// `phi beta^(N-1-L) B_L + B_{N-1-L} / rho`: later periods, where the steps
/// right after a sparse event see it in the queue.
pub fn gamma(n: usize, params: &LemmaParams) -> Result<f64> {
    params.check(n)?;
    let rest = n - 1 - params.l;
    Ok(
        params.phi() * params.beta.powi(rest as i32) * geometric_sum(params.beta, params.l)
            + geometric_sum(params.beta, rest) / params.rho,
    )
}

/// Boosted momentum at step `kN`.
pub fn lemma3_closed(spec: &SparseSignalSpec, params: &LemmaParams) -> Result<f64> {
    if params.k == 0 {
        return Err(Error::Regime("period index must be >= 1".into()));
    }
    let (u, c, n) = (spec.u, spec.c, spec.n);
    let (beta, rho, k) = (params.beta, params.rho, params.k);
    let g0 = gamma0(n, params)?;
    let g = gamma(n, params)?;
    Ok(beta.powi((n * (k - 1)) as i32) * (u * beta * g0 + rho * c)
        + periodic_sum(beta, n, k - 1) * (u * beta * g + rho * c))
}

/// Whether [`lemma3_closed`] describes the real operator: the queue saturates
/// between sparse events and the sparse value stands out from the constant
/// history, so it is clamped to `rho`.
pub fn lemma3_regime(
    spec: &SparseSignalSpec,
    params: &LemmaParams,
    cfg: &BoostConfig,
) -> Result<()> {
    params.check(spec.n)?;
    if (spec.c - spec.u).abs() <= cfg.sigma_floor {
        return Err(Error::Regime(
            "sparse value indistinguishable from u".into(),
        ));
    }
    Ok(())
}

/// Lower bound on `|C/u|` for boosted momentum at `kN` to follow `C`:
/// `beta * gamma0 / rho`.
pub fn threshold_boosted(n: usize, params: &LemmaParams) -> Result<f64> {
    Ok(params.beta * gamma0(n, params)? / params.rho)
}

/// Boosted momentum with per-step scales fixed by the closed-form derivation:
/// identity for `t <= L`, `rho` on sparse steps, `phi` for the `L` steps after
/// every sparse event but the first period's, `1/rho` otherwise.
pub fn simulate_gq_momentum_convention(
    spec: &SparseSignalSpec,
    params: &LemmaParams,
    steps: usize,
) -> Result<Vec<f64>> {
    params.check(spec.n)?;
    let n = spec.n;
    let phi = params.phi();
    let mut m = 0.0;
    Ok((1..=steps)
        .map(|t| {
            let since = t % n;
            let scale = if since == 0 {
                params.rho
            } else if t > n && since <= params.l {
                phi
            } else if t <= params.l {
                1.0
            } else {
                1.0 / params.rho
            };
            m = params.beta * m + scale * spec.at(t);
            m
        })
        .collect())
}

/// Boosted momentum with a real queue of capacity `L` and the real operator.
pub fn simulate_gq_momentum(
    spec: &SparseSignalSpec,
    params: &LemmaParams,
    steps: usize,
) -> Result<Vec<f64>> {
    let cfg = BoostConfig::with_rho(params.rho)?;
    let mut queue = GradQueue::new(params.l)?;
    let mut m = 0.0;
    let mut out = Vec::with_capacity(steps);
    for t in 1..=steps {
        let g = spec.at(t);
        let b = queue.boost(&[g], &cfg)?[0];
        m = params.beta * m + b;
        queue.push(&[g])?;
        out.push(m);
    }
    Ok(out)
}

/// For a `|C/u|` ratio, whether momentum follows `C` at every `kN`, `k <= periods`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignSweepRow {
    pub ratio: f64,
    pub plain_follows_c: bool,
    pub boosted_follows_c: bool,
}

/// Runs `u = -1, C = ratio` through plain momentum and the real boosted
/// momentum for each ratio.
pub fn sign_sweep(
    n: usize,
    params: &LemmaParams,
    ratios: &[f64],
    periods: usize,
) -> Result<Vec<SignSweepRow>> {
    let steps = n * periods;
    ratios
        .iter()
        .map(|&ratio| {
            let spec = SparseSignalSpec::new(ratio, -1.0, n)?;
            let follows = |traj: &[f64]| (1..=periods).all(|k| traj[k * n - 1] > 0.0);
            let plain = simulate_momentum(&spec, params.beta, steps);
            let boosted = simulate_gq_momentum(&spec, params, steps)?;
            Ok(SignSweepRow {
                ratio,
                plain_follows_c: follows(&plain),
                boosted_follows_c: follows(&boosted),
            })
        })
        .collect()
}

/// A batch of `p` monotonous and `q` sparse samples with the given mean
/// gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchCompositionCase {
    pub b: usize,
    pub p: usize,
    pub q: usize,
    pub eq_q: f64,
    pub eq_p: f64,
}

impl BatchCompositionCase {
    pub fn new(p: usize, q: usize, eq_q: f64, eq_p: f64) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidConfig("sparse count q must be >= 1".into()));
        }
        Ok(Self {
            b: p + q,
            p,
            q,
            eq_q,
            eq_p,
        })
    }

    /// Plain batch mean `(q E(g^q) + p E(g^p)) / B`.
    pub fn batch_mean(&self) -> f64 {
        (self.q as f64 * self.eq_q + self.p as f64 * self.eq_p) / self.b as f64
    }

    /// Batch mean with sparse samples amplified by `rho` and monotonous ones
    /// damped by `1/rho`.
    pub fn boosted_batch_mean(&self, rho: f64) -> f64 {
        (self.q as f64 * rho * self.eq_q + self.p as f64 * self.eq_p / rho) / self.b as f64
    }

    /// `B^2 E(g^q)^2 - 4 q E(g^q) p E(g^p)`.
    pub fn discriminant(&self) -> f64 {
        let b = self.b as f64;
        b * b * self.eq_q * self.eq_q - 4.0 * self.q as f64 * self.eq_q * self.p as f64 * self.eq_p
    }
}

/// Larger root of `zeta^2 q E(g^q) - zeta B E(g^q) + p E(g^p) = 0`: the boost
/// at which the boosted batch mean equals `E(g^q)`.
pub fn zeta(case: &BatchCompositionCase) -> Result<f64> {
    if case.eq_q == 0.0 {
        return Err(Error::InvalidConfig("E(g^q) must be nonzero".into()));
    }
    let disc = case.discriminant();
    if disc < 0.0 {
        return Err(Error::NegativeDiscriminant(disc));
    }
    // dividing through by E(g^q)^2 keeps the larger root for either sign
    let b = case.b as f64;
    let q = case.q as f64;
    let reduced = b * b - 4.0 * q * case.p as f64 * (case.eq_p / case.eq_q);
    Ok((b + reduced.max(0.0).sqrt()) / (2.0 * q))
}

/// Residual of the zeta quadratic at `z`.
pub fn zeta_residual(case: &BatchCompositionCase, z: f64) -> f64 {
    z * z * case.q as f64 * case.eq_q - z * case.b as f64 * case.eq_q + case.p as f64 * case.eq_p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCase {
    /// Sparse component dominates; the batch mean tracks `E(g^q)`.
    SparsePreserved = 1,
    /// Opposing components cancel exactly; the batch mean is zero.
    Cancelled = 2,
    /// Monotonous component dominates; the batch mean tracks `E(g^p)`.
    SparseSuppressed = 3,
}

impl ErrorCase {
    pub fn label(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchError {
    pub batch_mean: f64,
    /// `|E(g^q) - E(g^b)|`.
    pub error: f64,
    pub case: ErrorCase,
}

/// Relative tolerance for the cancellation case's ratio equality.
pub const CANCEL_TOLERANCE: f64 = 1e-9;

pub fn batch_error_case(case: &BatchCompositionCase) -> BatchError {
    let batch_mean = case.batch_mean();
    let error = (case.eq_q - batch_mean).abs();
    let label = if case.p == 0 || case.eq_p == 0.0 || case.eq_q * case.eq_p > 0.0 {
        ErrorCase::SparsePreserved
    } else {
        let ratio = (case.eq_q / case.eq_p).abs();
        let target = case.p as f64 / case.q as f64;
        if (ratio - target).abs() <= CANCEL_TOLERANCE * target {
            ErrorCase::Cancelled
        } else if ratio > target {
            ErrorCase::SparsePreserved
        } else {
            ErrorCase::SparseSuppressed
        }
    };
    BatchError {
        batch_mean,
        error,
        case: label,
    }
}
