//! Estimators of the conditional variance of the U-statistic limit, the
//! analytic variance for known volatility, and the feasible standardized
//! statistic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{combinations, make_g1, make_g2, Kernel, Smoothness};
use crate::limit::{limit_u, multisets, QuadratureRule, VolatilityPath};
use crate::sim::IncrementSeries;
use crate::summation::{pairwise_sum, PairwiseAccumulator};
use crate::ustat::{binomial, row_stats, tuple_sum, u_statistic, EngineConfig, EvaluationWindow};

/// Relative floor applied to `V₁ⁿ − V₂ⁿ`.
pub const VARIANCE_FLOOR: f64 = 1e-6;
/// Cap on kernel evaluations in [`analytic_variance`].
pub const ANALYTIC_BUDGET: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub v1: f64,
    pub v2: f64,
    /// `V₁ⁿ − V₂ⁿ`, floored to stay positive.
    pub v: f64,
    pub floored: bool,
    pub t: f64,
    pub n: usize,
}

impl VarianceEstimate {
    pub fn from_parts(v1: f64, v2: f64, t: f64, n: usize) -> Self {
        let (v, floored) = floor_variance(v1, v2);
        Self { v1, v2, v, floored, t, n }
    }
}

/// `max(V₁ − V₂, ε V₁)`, and never below the smallest positive float.
pub fn floor_variance(v1: f64, v2: f64) -> (f64, bool) {
    let raw = v1 - v2;
    let floor = (VARIANCE_FLOOR * v1).max(f64::MIN_POSITIVE);
    if raw.is_finite() && raw >= floor {
        (raw, false)
    } else {
        (floor, true)
    }
}

/// Sums behind the order-2 variance estimators for a family of kernels.
///
/// `g1[i*K+j]` is `Σ_{a<b<c} G̃₁^{ij}` and `g2[i*K+j]` is
/// `Σ_{j'} Σ_{a<b} G̃₂^{ij}(x_{j'}, x_{j'+1}; x_a, x_b)`.
pub(crate) struct PairSums {
    pub h: Vec<f64>,
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
}

pub(crate) fn pair_sums(kernels: &[&Kernel], x: &[f64]) -> PairSums {
    let st = row_stats(kernels, x);
    let k = st.k;
    let m = x.len();
    let h = st.lower.iter().map(|l| pairwise_sum(l)).collect();
    let mut g1 = vec![0.0; k * k];
    let mut g2 = vec![0.0; k * k];
    let mut buf = Vec::with_capacity(m);
    for i in 0..k {
        for j in 0..k {
            let ij = i * k + j;
            buf.clear();
            buf.extend((0..m).map(|p| st.row[i][p] * st.row[j][p] - st.sq[ij][p]));
            g1[ij] = pairwise_sum(&buf) / 6.0;
            buf.clear();
            buf.extend((0..m.saturating_sub(1)).map(|p| {
                let left = st.row[i][p] + st.diag[i][p];
                let right = st.row[j][p + 1] + st.diag[j][p + 1];
                0.5 * (left * right - st.cross[ij][p])
            }));
            g2[ij] = pairwise_sum(&buf);
        }
    }
    PairSums { h, g1, g2 }
}

fn variance_window(h: &Kernel, series: &IncrementSeries, window: &EvaluationWindow) -> Result<usize> {
    if window.d != h.order() {
        return Err(Error::BadParam(format!("window order {} does not match kernel order {}", window.d, h.order())));
    }
    let need = 2 * h.order() - 1;
    let m = window.upper();
    if m < need {
        return Err(Error::WindowTooShort { available: m, order: need });
    }
    if m > series.len() {
        return Err(Error::BadParam(format!("window needs {m} increments, series has {}", series.len())));
    }
    Ok(m)
}

/// Unnormalized `Σ_{𝐢} Σ_{j=1}^{m−1} G̃₂(x_j, x_{j+1}; x_𝐢)` by enumeration.
fn g2_sum_enumerated(h: &Kernel, x: &[f64], cfg: &EngineConfig) -> Result<f64> {
    let d = h.order();
    let m = x.len();
    if d >= 2 && m > cfg.max_enumeration_n && !cfg.allow_large {
        return Err(Error::EnumerationGuard { order: 2 * d - 2, m, max_n: cfg.max_enumeration_n });
    }
    let g2 = make_g2(h)?;
    let tuples = combinations(m, 2 * d - 2);
    let parts: Vec<f64> = (0..m.saturating_sub(1))
        .into_par_iter()
        .map(|j| {
            let mut acc = PairwiseAccumulator::new();
            let mut y = vec![0.0; 2 * d - 2];
            for tup in &tuples {
                for (slot, &i) in tup.iter().enumerate() {
                    y[slot] = x[i];
                }
                acc.push(g2.eval([x[j], x[j + 1]], &y));
            }
            acc.sum()
        })
        .collect();
    Ok(pairwise_sum(&parts))
}

/// `V₁ⁿ = d² U(G̃₁)ₜⁿ`, the U-statistic of order 2d − 1 of the symmetrized product kernel.
///
/// `window` is the window of the statistic itself (order d); it must hold at
/// least 2d − 1 increments.
pub fn v1n(h: &Kernel, series: &IncrementSeries, window: &EvaluationWindow) -> Result<f64> {
    v1n_with(h, series, window, &EngineConfig::default())
}

pub fn v1n_with(h: &Kernel, series: &IncrementSeries, window: &EvaluationWindow, cfg: &EngineConfig) -> Result<f64> {
    let m = variance_window(h, series, window)?;
    let d = h.order();
    let x = &series.scaled[..m];
    let sum = if d == 2 { pair_sums(&[h], x).g1[0] } else { tuple_sum(&make_g1(h)?, x, cfg)? };
    Ok((d * d) as f64 * sum / binomial(window.n, 2 * d - 1))
}

/// `V₂ⁿ = (d²/n) C(n, 2d−2)⁻¹ Σ_{𝐢} Σ_{j=1}^{⌊nt⌋−1} G̃₂(√nΔ_j X, √nΔ_{j+1} X; √nΔ_𝐢 X)`.
pub fn v2n(h: &Kernel, series: &IncrementSeries, window: &EvaluationWindow) -> Result<f64> {
    v2n_with(h, series, window, &EngineConfig::default())
}

pub fn v2n_with(h: &Kernel, series: &IncrementSeries, window: &EvaluationWindow, cfg: &EngineConfig) -> Result<f64> {
    let m = variance_window(h, series, window)?;
    let d = h.order();
    let x = &series.scaled[..m];
    let sum = if d == 2 { pair_sums(&[h], x).g2[0] } else { g2_sum_enumerated(h, x, cfg)? };
    let n = window.n;
    Ok((d * d) as f64 / n as f64 * sum / binomial(n, 2 * d - 2))
}

/// Both estimators and the floored difference, sharing one pass for d = 2.
pub fn variance_estimate(h: &Kernel, series: &IncrementSeries, window: &EvaluationWindow) -> Result<VarianceEstimate> {
    variance_estimate_with(h, series, window, &EngineConfig::default())
}

pub fn variance_estimate_with(
    h: &Kernel,
    series: &IncrementSeries,
    window: &EvaluationWindow,
    cfg: &EngineConfig,
) -> Result<VarianceEstimate> {
    let d = h.order();
    let (v1, v2) = if d == 2 {
        let m = variance_window(h, series, window)?;
        let s = pair_sums(&[h], &series.scaled[..m]);
        let n = window.n;
        (4.0 * s.g1[0] / binomial(n, 3), 4.0 / n as f64 * s.g2[0] / binomial(n, 2))
    } else {
        (v1n_with(h, series, window, cfg)?, v2n_with(h, series, window, cfg)?)
    };
    Ok(VarianceEstimate::from_parts(v1, v2, window.t, window.n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticVariance {
    pub v1: f64,
    pub v2: f64,
    pub v: f64,
}

/// Tensor expectation `E H(x, σ₁U₁, …, σ_kU_k)` over the trailing coordinates.
fn inner_expectation(h: &Kernel, x: f64, sigmas: &[f64], rule: &QuadratureRule, args: &mut [f64]) -> f64 {
    args[0] = x;
    let k = sigmas.len();
    if k == 0 {
        return h.eval(args);
    }
    let m = rule.len();
    let mut idx = vec![0usize; k];
    let mut acc = PairwiseAccumulator::new();
    loop {
        let mut w = 1.0;
        for (slot, &i) in idx.iter().enumerate() {
            args[slot + 1] = sigmas[slot] * rule.nodes[i];
            w *= rule.weights[i];
        }
        acc.push(w * h.eval(args));
        let mut s = k;
        loop {
            if s == 0 {
                return acc.sum();
            }
            s -= 1;
            idx[s] += 1;
            if idx[s] < m {
                break;
            }
            idx[s] = 0;
        }
    }
}

/// The variance `V_t` of the mixed normal limit for a known volatility path.
///
/// With `g(x) = ∫_{[0,t]^{d−1}} E H(x, σ_{s₂}U₂, …, σ_{s_d}U_d) ds`, the two
/// terms are `V₁ = d² ∫₀ᵗ E g(σ_q U)² dq` and `V₂ = d² ∫₀ᵗ (E g(σ_q U))² dq`.
/// These are the integrals of ρ(G̃₁) and of the Gaussian x-integral of G₂,
/// rearranged so that each only needs a (d − 1)-dimensional quadrature.
/// Piecewise-smooth kernels converge slowly in the node count.
pub fn analytic_variance(h: &Kernel, vol: &VolatilityPath, t: f64, rule: &QuadratureRule) -> Result<AnalyticVariance> {
    if !(t >= 0.0) || t > vol.horizon() * (1.0 + 1e-12) {
        return Err(Error::BadParam(format!("t = {t} outside [0, {}]", vol.horizon())));
    }
    let atoms = vol.atoms(0.0, t);
    if atoms.is_empty() {
        return Ok(AnalyticVariance { v1: 0.0, v2: 0.0, v: 0.0 });
    }
    let d = h.order();
    let m = rule.len();
    let inner = multisets(atoms.len(), d - 1);
    let cost = atoms.len() as f64 * m as f64 * inner.len() as f64 * (m as f64).powi(d as i32 - 1);
    if cost > ANALYTIC_BUDGET {
        return Err(Error::QuadratureBudget { points: cost as u128, budget: ANALYTIC_BUDGET as u128 });
    }
    let inner: Vec<(Vec<f64>, f64)> = inner
        .into_iter()
        .map(|(idx, count)| {
            let sig = idx.iter().map(|&i| atoms[i].0).collect();
            let w = count * idx.iter().map(|&i| atoms[i].1).product::<f64>();
            (sig, w)
        })
        .collect();
    let per_q: Vec<(f64, f64)> = atoms
        .par_iter()
        .map(|&(sq, wq)| {
            let mut args = vec![0.0; d];
            let mut sq_terms = Vec::with_capacity(m);
            let mut lin_terms = Vec::with_capacity(m);
            for (u, omega) in rule.nodes.iter().zip(&rule.weights) {
                let parts: Vec<f64> =
                    inner.iter().map(|(sig, w)| w * inner_expectation(h, sq * u, sig, rule, &mut args)).collect();
                let g = pairwise_sum(&parts);
                sq_terms.push(omega * g * g);
                lin_terms.push(omega * g);
            }
            let e = pairwise_sum(&lin_terms);
            (wq * pairwise_sum(&sq_terms), wq * e * e)
        })
        .collect();
    let dd = (d * d) as f64;
    let v1 = dd * pairwise_sum(&per_q.iter().map(|p| p.0).collect::<Vec<_>>());
    let v2 = dd * pairwise_sum(&per_q.iter().map(|p| p.1).collect::<Vec<_>>());
    Ok(AnalyticVariance { v1, v2, v: v1 - v2 })
}

/// Where the centering `U(H)_t` of the standardized statistic comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum LimitSource {
    /// A hypothesized or otherwise known value.
    Value(f64),
    /// Computed from a volatility path.
    Volatility(VolatilityPath, QuadratureRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardized {
    pub statistic: f64,
    pub estimate: f64,
    pub limit: f64,
    pub variance: VarianceEstimate,
}

impl Standardized {
    pub fn floored(&self) -> bool {
        self.variance.floored
    }
}

pub(crate) fn check_clt_kernel(h: &Kernel) -> Result<()> {
    if !h.is_even() {
        return Err(Error::NotEven(h.name().to_string()));
    }
    if h.smoothness() < Smoothness::C1Piecewise {
        return Err(Error::NotSmooth(h.name().to_string()));
    }
    Ok(())
}

/// `√n (U(H)ₜⁿ − U(H)ₜ) / √Vₜⁿ`.
pub fn standardized_statistic(
    h: &Kernel,
    series: &IncrementSeries,
    window: &EvaluationWindow,
    limit: &LimitSource,
) -> Result<Standardized> {
    check_clt_kernel(h)?;
    let limit = match limit {
        LimitSource::Value(v) => *v,
        LimitSource::Volatility(vol, rule) => limit_u(h, vol, window.t, rule)?,
    };
    let estimate = u_statistic(h, series, window)?;
    let variance = variance_estimate(h, series, window)?;
    let statistic = (window.n as f64).sqrt() * (estimate - limit) / variance.v.sqrt();
    Ok(Standardized { statistic, estimate, limit, variance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{abs_power, gini_even, sum_of_squares};

    fn series(xs: &[f64]) -> IncrementSeries {
        IncrementSeries::from_scaled(xs.len(), xs.to_vec())
    }

    #[test]
    fn floor_policy() {
        assert_eq!(floor_variance(5.0, 2.0), (3.0, false));
        let (v, f) = floor_variance(5.0, 6.0);
        assert!(f && (v - 5e-6).abs() < 1e-20);
        let (v, f) = floor_variance(0.0, 0.0);
        assert!(f && v > 0.0);
    }

    #[test]
    fn constant_increments_v2n() {
        let s = series(&[1.0; 6]);
        let w = EvaluationWindow::new(1.0, 6, 2).unwrap();
        let v2 = v2n(&sum_of_squares(), &s, &w).unwrap();
        assert!((v2 - 40.0 / 3.0).abs() < 1e-12);
        let est = variance_estimate(&sum_of_squares(), &s, &w).unwrap();
        assert!((est.v1 - 16.0).abs() < 1e-12);
        assert_eq!(est.v2, v2);
        assert!(!est.floored);
    }

    #[test]
    fn zero_increments_floor() {
        let s = series(&[0.0; 8]);
        let w = EvaluationWindow::new(1.0, 8, 2).unwrap();
        assert_eq!(v1n(&sum_of_squares(), &s, &w).unwrap(), 0.0);
        let est = variance_estimate(&sum_of_squares(), &s, &w).unwrap();
        assert!(est.floored && est.v > 0.0);
    }

    #[test]
    fn window_needs_three_increments() {
        let s = series(&[1.0, 2.0]);
        let w = EvaluationWindow::new(1.0, 2, 2).unwrap();
        assert!(matches!(v1n(&sum_of_squares(), &s, &w), Err(Error::WindowTooShort { order: 3, .. })));
    }

    #[test]
    fn order_one_kernel_enumerates() {
        let h = crate::kernel::Kernel::new(
            "sq",
            1,
            std::sync::Arc::new(|x: &[f64]| x[0] * x[0]),
            crate::kernel::KernelClaims {
                symmetric: true,
                even_each_coordinate: true,
                growth_degree: 2.0,
                smoothness: Smoothness::C1,
                homogeneity: Some(2.0),
            },
        )
        .unwrap();
        let xs = [1.0, 2.0, 3.0];
        let s = series(&xs);
        let w = EvaluationWindow::new(1.0, 3, 1).unwrap();
        assert!((v1n(&h, &s, &w).unwrap() - (1.0 + 16.0 + 81.0) / 3.0).abs() < 1e-12);
        assert!((v2n(&h, &s, &w).unwrap() - (4.0 + 36.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn analytic_variance_sum_of_squares() {
        let rule = QuadratureRule::default();
        let one = VolatilityPath::constant(1.0, 1.0).unwrap();
        let av = analytic_variance(&sum_of_squares(), &one, 1.0, &rule).unwrap();
        // g(x) = x² + 1: V₁ = 4 E(U² + 1)², V₂ = 4 (E(U² + 1))²
        assert!((av.v1 - 24.0).abs() < 1e-10);
        assert!((av.v2 - 16.0).abs() < 1e-10);
        assert!((av.v - 8.0).abs() < 1e-10);
        let two = VolatilityPath::constant(2.0, 1.0).unwrap();
        let av2 = analytic_variance(&sum_of_squares(), &two, 1.0, &rule).unwrap();
        assert!((av2.v - 16.0 * av.v).abs() < 1e-9);
        let zero = analytic_variance(&sum_of_squares(), &one, 0.0, &rule).unwrap();
        assert_eq!(zero.v, 0.0);
    }

    #[test]
    fn analytic_variance_constant_kernel_vanishes() {
        let h = crate::kernel::Kernel::new(
            "one",
            2,
            std::sync::Arc::new(|_: &[f64]| 1.0),
            crate::kernel::KernelClaims {
                symmetric: true,
                even_each_coordinate: true,
                growth_degree: 0.0,
                smoothness: Smoothness::C1,
                homogeneity: Some(0.0),
            },
        )
        .unwrap();
        let vol = VolatilityPath::piecewise(&[0.3], &[1.0, 2.5], 1.0).unwrap();
        let av = analytic_variance(&h, &vol, 0.8, &QuadratureRule::default()).unwrap();
        assert!(av.v.abs() < 1e-12);
    }

    #[test]
    fn standardized_checks_kernel() {
        let s = series(&[1.0, -0.5, 0.2, 0.8]);
        let w = EvaluationWindow::new(1.0, 4, 2).unwrap();
        let odd = crate::kernel::Kernel::new(
            "odd",
            2,
            std::sync::Arc::new(|x: &[f64]| x[0] + x[1]),
            crate::kernel::KernelClaims {
                symmetric: true,
                even_each_coordinate: false,
                growth_degree: 1.0,
                smoothness: Smoothness::C1,
                homogeneity: Some(1.0),
            },
        )
        .unwrap();
        assert!(matches!(standardized_statistic(&odd, &s, &w, &LimitSource::Value(0.0)), Err(Error::NotEven(_))));
        let h = abs_power(0.5).unwrap();
        assert_eq!(h.smoothness(), Smoothness::C0);
        assert!(matches!(standardized_statistic(&h, &s, &w, &LimitSource::Value(0.0)), Err(Error::NotSmooth(_))));
        let u = u_statistic(&gini_even(), &s, &w).unwrap();
        let z = standardized_statistic(&gini_even(), &s, &w, &LimitSource::Value(u)).unwrap();
        assert_eq!(z.statistic, 0.0);
    }
}
