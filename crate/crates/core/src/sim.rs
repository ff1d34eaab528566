//! Sample paths of a continuous Itô semimartingale whose volatility is
//! itself a continuous Itô semimartingale, plus the increment series every
//! statistic in the crate consumes.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default lower bound on |σ| along a simulated path.
pub const DEFAULT_VOL_FLOOR: f64 = 1e-8;

/// Minimum number of observations an ingested path must carry (order-2
/// kernels need at least three increments' worth of grid points minus one).
pub const MIN_OBSERVATIONS: usize = 3;

const STREAM_W: u64 = 0;
const STREAM_V: u64 = 1;
const STREAM_BRIDGE_W: u64 = 2;
const STREAM_BRIDGE_V: u64 = 3;

pub type DriftFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
pub type VolCoefFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type ScheduleFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Coefficients and initial state of the pair (X, σ).
///
/// `X_t = x0 + ∫ drift(s, X_s, σ_s) ds + ∫ σ_s dW_s` and
/// `σ_t = vol0 + ∫ vol_drift ds + ∫ vol_vol_w dW_s + ∫ vol_vol_v dV_s`
/// with V a Brownian motion independent of W. When `vol_schedule` is set, σ
/// is the deterministic function it describes and the vol coefficients are
/// ignored; this is how piecewise-constant regimes are expressed.
#[derive(Clone)]
pub struct ProcessSpec {
    pub x0: f64,
    pub drift: DriftFn,
    pub vol0: f64,
    pub vol_drift: VolCoefFn,
    pub vol_vol_w: VolCoefFn,
    pub vol_vol_v: VolCoefFn,
    pub vol_schedule: Option<ScheduleFn>,
    pub horizon: f64,
    pub vol_floor: f64,
    /// Internal Euler steps per observation interval (a power of two).
    pub substeps: usize,
}

impl fmt::Debug for ProcessSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProcessSpec")
            .field("x0", &self.x0)
            .field("vol0", &self.vol0)
            .field("deterministic_vol", &self.vol_schedule.is_some())
            .field("horizon", &self.horizon)
            .field("vol_floor", &self.vol_floor)
            .field("substeps", &self.substeps)
            .finish_non_exhaustive()
    }
}

fn zero2() -> VolCoefFn {
    Arc::new(|_, _| 0.0)
}

impl ProcessSpec {
    /// Driftless X with constant volatility `sigma` on [0, 1].
    pub fn constant(sigma: f64) -> Self {
        Self {
            x0: 0.0,
            drift: Arc::new(|_, _, _| 0.0),
            vol0: sigma,
            vol_drift: zero2(),
            vol_vol_w: zero2(),
            vol_vol_v: zero2(),
            vol_schedule: None,
            horizon: 1.0,
            vol_floor: DEFAULT_VOL_FLOOR,
            substeps: 1,
        }
    }

    /// σ equal to `sigmas[k]` on `[breaks[k-1], breaks[k])`.
    pub fn piecewise_constant(breaks: &[f64], sigmas: &[f64]) -> Result<Self> {
        if sigmas.len() != breaks.len() + 1 {
            return Err(Error::BadParam(format!(
                "piecewise volatility needs {} sigmas for {} breaks",
                breaks.len() + 1,
                breaks.len()
            )));
        }
        if breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::BadParam("breaks must be strictly increasing".into()));
        }
        let breaks = breaks.to_vec();
        let sigmas = sigmas.to_vec();
        let vol0 = sigmas[0];
        let schedule: ScheduleFn = Arc::new(move |t| {
            let k = breaks.partition_point(|&b| b <= t);
            sigmas[k]
        });
        let mut spec = Self::constant(vol0);
        spec.vol_schedule = Some(schedule);
        Ok(spec)
    }

    /// Geometric volatility `dσ = ξ σ (ρ dW + √(1-ρ²) dV)`.
    pub fn gbm_vol(sigma0: f64, xi: f64, rho: f64) -> Self {
        let rho_v = (1.0 - rho * rho).max(0.0).sqrt();
        let mut spec = Self::constant(sigma0);
        spec.vol_vol_w = Arc::new(move |_, s| xi * rho * s);
        spec.vol_vol_v = Arc::new(move |_, s| xi * rho_v * s);
        spec
    }

    /// Mean-reverting volatility `dσ = κ(θ − σ) dt + ξ (ρ dW + √(1-ρ²) dV)`.
    pub fn ou_vol(sigma0: f64, kappa: f64, theta: f64, xi: f64, rho: f64) -> Self {
        let rho_v = (1.0 - rho * rho).max(0.0).sqrt();
        let mut spec = Self::constant(sigma0);
        spec.vol_drift = Arc::new(move |_, s| kappa * (theta - s));
        spec.vol_vol_w = Arc::new(move |_, _| xi * rho);
        spec.vol_vol_v = Arc::new(move |_, _| xi * rho_v);
        spec
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_constant_drift(mut self, a: f64) -> Self {
        self.drift = Arc::new(move |_, _, _| a);
        self
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps;
        self
    }

    pub fn with_x0(mut self, x0: f64) -> Self {
        self.x0 = x0;
        self
    }

    fn sigma_at(&self, t: f64) -> f64 {
        match &self.vol_schedule {
            Some(f) => f(t),
            None => self.vol0,
        }
    }
}

/// Observations `X_{i/n}`, `i = 0..=⌊nT⌋`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    pub n: usize,
    pub grid: Vec<f64>,
    pub x_values: Vec<f64>,
    /// σ at the grid points; absent for ingested data.
    pub sigma_values: Option<Vec<f64>>,
    /// Brownian increments `W_{i/n} − W_{(i−1)/n}`; absent for ingested data.
    pub dw: Option<Vec<f64>>,
    pub seed: Option<u64>,
}

impl SamplePath {
    pub fn len(&self) -> usize {
        self.x_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_values.is_empty()
    }

    /// Number of increments ⌊nT⌋.
    pub fn increment_count(&self) -> usize {
        self.x_values.len().saturating_sub(1)
    }

    pub fn horizon(&self) -> f64 {
        self.increment_count() as f64 / self.n as f64
    }

    pub fn is_simulated(&self) -> bool {
        self.sigma_values.is_some() && self.dw.is_some()
    }
}

/// Increments of a path, raw and scaled by √n, plus the first-order
/// approximants `α_j = √n σ_{(j−1)/n} Δ_j W` when available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementSeries {
    pub n: usize,
    pub raw: Vec<f64>,
    pub scaled: Vec<f64>,
    pub alpha: Option<Vec<f64>>,
    pub seed: Option<u64>,
}

impl IncrementSeries {
    /// Build a series directly from scaled increments `√n Δ_i X`.
    pub fn from_scaled(n: usize, scaled: Vec<f64>) -> Self {
        let root = (n as f64).sqrt();
        let raw = scaled.iter().map(|v| v / root).collect();
        Self { n, raw, scaled, alpha: None, seed: None }
    }

    pub fn len(&self) -> usize {
        self.scaled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scaled.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.scaled.len() as f64 / self.n as f64
    }

    pub fn source_label(&self) -> String {
        match self.seed {
            Some(s) => format!("seed:{s}"),
            None => "ingested".to_string(),
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Split a Brownian increment over `dt` into `parts` (a power of two) finer
/// increments by repeated midpoint bridging. The coarse increment is kept.
fn bridge(total: f64, dt: f64, parts: usize, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
    out.clear();
    out.push(total);
    let mut len = dt;
    while out.len() < parts {
        let mut next = Vec::with_capacity(out.len() * 2);
        let sd = 0.5 * len.sqrt();
        for &seg in out.iter() {
            let left = 0.5 * seg + sd * gaussian(rng);
            next.push(left);
            next.push(seg - left);
        }
        *out = next;
        len *= 0.5;
    }
}

/// Euler–Maruyama on the grid `{i/n}` (optionally refined by `substeps`).
///
/// σ is advanced with the same W-variates as X and independent V-variates;
/// X uses σ at the left endpoint of each step. The coarse W and V increments
/// come from dedicated ChaCha streams of `seed`, so they do not depend on the
/// substep count.
pub fn simulate_path(spec: &ProcessSpec, n: usize, seed: u64) -> Result<SamplePath> {
    if n < 2 {
        return Err(Error::BadParam(format!("n must be at least 2, got {n}")));
    }
    if !(spec.horizon > 0.0) || !spec.horizon.is_finite() {
        return Err(Error::BadParam(format!("horizon must be positive, got {}", spec.horizon)));
    }
    if spec.substeps == 0 || !spec.substeps.is_power_of_two() {
        return Err(Error::BadParam(format!("substeps must be a power of two, got {}", spec.substeps)));
    }
    let steps = (n as f64 * spec.horizon + 1e-9).floor() as usize;
    let dt = 1.0 / n as f64;
    let sub = spec.substeps;
    let h = dt / sub as f64;
    let sqrt_dt = dt.sqrt();

    let mut rng_w = stream(seed, STREAM_W);
    let mut rng_v = stream(seed, STREAM_V);
    let mut rng_bw = stream(seed, STREAM_BRIDGE_W);
    let mut rng_bv = stream(seed, STREAM_BRIDGE_V);

    let mut grid = Vec::with_capacity(steps + 1);
    let mut xs = Vec::with_capacity(steps + 1);
    let mut sigmas = Vec::with_capacity(steps + 1);
    let mut dws = Vec::with_capacity(steps);

    let mut x = spec.x0;
    let mut sig = spec.sigma_at(0.0);
    check_state(0.0, x, sig, spec.vol_floor)?;
    grid.push(0.0);
    xs.push(x);
    sigmas.push(sig);

    let mut fine_w = Vec::with_capacity(sub);
    let mut fine_v = Vec::with_capacity(sub);
    for i in 1..=steps {
        let dw = sqrt_dt * gaussian(&mut rng_w);
        let dv = sqrt_dt * gaussian(&mut rng_v);
        if sub > 1 {
            bridge(dw, dt, sub, &mut rng_bw, &mut fine_w);
            bridge(dv, dt, sub, &mut rng_bv, &mut fine_v);
        } else {
            fine_w.clear();
            fine_w.push(dw);
            fine_v.clear();
            fine_v.push(dv);
        }
        let t0 = (i - 1) as f64 * dt;
        for k in 0..sub {
            let t = t0 + k as f64 * h;
            let next_sig = match &spec.vol_schedule {
                Some(f) => f(t + h),
                None => {
                    sig + (spec.vol_drift)(t, sig) * h
                        + (spec.vol_vol_w)(t, sig) * fine_w[k]
                        + (spec.vol_vol_v)(t, sig) * fine_v[k]
                }
            };
            x += (spec.drift)(t, x, sig) * h + sig * fine_w[k];
            // a continuous volatility that changes sign must pass through zero
            if spec.vol_schedule.is_none() && next_sig.signum() != sig.signum() {
                return Err(Error::VolVanished { time: t + h, floor: spec.vol_floor });
            }
            sig = next_sig;
            check_state(t + h, x, sig, spec.vol_floor)?;
        }
        grid.push(i as f64 * dt);
        xs.push(x);
        sigmas.push(sig);
        dws.push(dw);
    }

    Ok(SamplePath { n, grid, x_values: xs, sigma_values: Some(sigmas), dw: Some(dws), seed: Some(seed) })
}

fn check_state(time: f64, x: f64, sig: f64, floor: f64) -> Result<()> {
    if !x.is_finite() || !sig.is_finite() {
        return Err(Error::NonFinite { time });
    }
    if sig.abs() < floor {
        return Err(Error::VolVanished { time, floor });
    }
    Ok(())
}

/// Increments of `path`; `with_alpha` also derives `α_j = √n σ_{(j−1)/n} Δ_j W`.
pub fn increments(path: &SamplePath, with_alpha: bool) -> Result<IncrementSeries> {
    let root = (path.n as f64).sqrt();
    let raw: Vec<f64> = path.x_values.windows(2).map(|w| w[1] - w[0]).collect();
    let scaled = raw.iter().map(|d| root * d).collect();
    let alpha = if with_alpha {
        match (&path.sigma_values, &path.dw) {
            (Some(sig), Some(dw)) => Some(dw.iter().zip(sig).map(|(w, s)| root * s * w).collect()),
            _ => return Err(Error::AlphaUnavailable),
        }
    } else {
        None
    };
    Ok(IncrementSeries { n: path.n, raw, scaled, alpha, seed: path.seed })
}

/// Relative tolerance on the spacing of ingested observation times.
pub const GRID_TOLERANCE: f64 = 1e-6;

/// Wrap externally observed `(time, value)` rows as a path sampled at
/// frequency `declared_n`.
pub fn ingest_path(rows: &[(f64, f64)], declared_n: usize) -> Result<SamplePath> {
    if rows.len() < MIN_OBSERVATIONS {
        return Err(Error::TooShort { got: rows.len(), need: MIN_OBSERVATIONS });
    }
    if declared_n == 0 {
        return Err(Error::IrregularGrid("missing sampling frequency".into()));
    }
    let step = 1.0 / declared_n as f64;
    for (k, w) in rows.windows(2).enumerate() {
        let dt = w[1].0 - w[0].0;
        if !(dt > 0.0) {
            return Err(Error::IrregularGrid(format!("times not increasing at row {}", k + 1)));
        }
        if ((dt - step) / step).abs() > GRID_TOLERANCE {
            return Err(Error::IrregularGrid(format!("spacing {dt} at row {} differs from 1/n = {step}", k + 1)));
        }
    }
    if let Some((t, v)) = rows.iter().find(|(t, v)| !t.is_finite() || !v.is_finite()) {
        return Err(Error::BadParam(format!("non-finite observation ({t}, {v})")));
    }
    Ok(SamplePath {
        n: declared_n,
        grid: rows.iter().map(|r| r.0).collect(),
        x_values: rows.iter().map(|r| r.1).collect(),
        sigma_values: None,
        dw: None,
        seed: None,
    })
}

fn default_rho() -> f64 {
    1.0
}

/// Closed vocabulary of named models addressable from configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Constant {
        sigma: f64,
        #[serde(default)]
        drift: f64,
    },
    PiecewiseConstant {
        breaks: Vec<f64>,
        sigmas: Vec<f64>,
        #[serde(default)]
        drift: f64,
    },
    GbmVol {
        sigma0: f64,
        xi: f64,
        #[serde(default = "default_rho")]
        rho: f64,
        #[serde(default)]
        drift: f64,
    },
    OuVol {
        sigma0: f64,
        kappa: f64,
        theta: f64,
        xi: f64,
        #[serde(default = "default_rho")]
        rho: f64,
        #[serde(default)]
        drift: f64,
    },
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Constant { .. } => "constant",
            ModelSpec::PiecewiseConstant { .. } => "piecewise_constant",
            ModelSpec::GbmVol { .. } => "gbm_vol",
            ModelSpec::OuVol { .. } => "ou_vol",
        }
    }

    pub fn process(&self, horizon: f64) -> Result<ProcessSpec> {
        let (spec, drift) = match self {
            ModelSpec::Constant { sigma, drift } => (ProcessSpec::constant(*sigma), *drift),
            ModelSpec::PiecewiseConstant { breaks, sigmas, drift } => {
                (ProcessSpec::piecewise_constant(breaks, sigmas)?, *drift)
            }
            ModelSpec::GbmVol { sigma0, xi, rho, drift } => (ProcessSpec::gbm_vol(*sigma0, *xi, *rho), *drift),
            ModelSpec::OuVol { sigma0, kappa, theta, xi, rho, drift } => {
                (ProcessSpec::ou_vol(*sigma0, *kappa, *theta, *xi, *rho), *drift)
            }
        };
        if let ModelSpec::GbmVol { rho, .. } | ModelSpec::OuVol { rho, .. } = self {
            if !(-1.0..=1.0).contains(rho) {
                return Err(Error::BadParam(format!("rho must lie in [-1, 1], got {rho}")));
            }
        }
        let spec = spec.with_horizon(horizon);
        Ok(if drift != 0.0 { spec.with_constant_drift(drift) } else { spec })
    }

    /// Deterministic volatility function, when the model has one.
    pub fn deterministic_sigma(&self) -> Option<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
        match self {
            ModelSpec::Constant { sigma, .. } => {
                let s = *sigma;
                Some(Box::new(move |_| s))
            }
            ModelSpec::PiecewiseConstant { breaks, sigmas, .. } => {
                let (b, s) = (breaks.clone(), sigmas.clone());
                Some(Box::new(move |t| s[b.partition_point(|&x| x <= t)]))
            }
            _ => None,
        }
    }
}
