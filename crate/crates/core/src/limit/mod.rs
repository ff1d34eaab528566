//! Theoretical limits: Gaussian functionals, the expectation functional ρ,
//! and the time integrals that the U-statistics, the empirical distribution
//! function and the Wilcoxon statistic converge to.

mod quadrature;

pub use quadrature::{McFallback, QuadratureRule, DEFAULT_NODES};

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_2_PI, PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Kernel, Smoothness};
use crate::sim::{SamplePath, DEFAULT_VOL_FLOOR};
use crate::summation::{pairwise_sum, PairwiseAccumulator};

/// Cap on tensor-product quadrature points.
pub const QUADRATURE_BUDGET: u128 = 10_000_000;
/// Refinement tolerance for piecewise-smooth kernels.
pub const REFINEMENT_TOLERANCE: f64 = 1e-6;

/// Standard normal distribution function.
pub fn std_normal_cdf(u: f64) -> f64 {
    0.5 * libm::erfc(-u / SQRT_2)
}

/// Standard normal density.
pub fn std_normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

/// Standard normal quantile, p ∈ (0, 1).
pub fn std_normal_quantile(p: f64) -> f64 {
    let mut u = -SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p);
    // the series inverse is good to ~1e-9; Newton on the accurate cdf finishes it
    for _ in 0..2 {
        let pdf = std_normal_pdf(u);
        if !u.is_finite() || pdf == 0.0 {
            break;
        }
        u -= (std_normal_cdf(u) - p) / pdf;
    }
    u
}

/// Φ_z(x): distribution function of N(0, z²). For z = 0 this is the Dirac
/// measure at the origin, i.e. a unit step at 0.
pub fn gaussian_cdf(z: f64, x: f64) -> f64 {
    if z == 0.0 {
        if x >= 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        std_normal_cdf(x / z.abs())
    }
}

/// φ_z(x): density of N(0, z²). The degenerate z = 0 case has no density;
/// it returns +∞ at the origin and 0 elsewhere.
pub fn gaussian_density(z: f64, x: f64) -> f64 {
    if z == 0.0 {
        if x == 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        std_normal_pdf(x / z.abs()) / z.abs()
    }
}

/// Φ̄_z(x) = E[V 1{zV ≤ x}], V ~ N(0, 1).
pub fn phi_bar(z: f64, x: f64) -> f64 {
    if z > 0.0 {
        -std_normal_pdf(x / z)
    } else if z < 0.0 {
        std_normal_pdf(x / z)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolSource {
    Simulated,
    Analytic,
}

/// A càdlàg step volatility: `σ_s = values[k]` on `[knots[k], knots[k+1])`.
///
/// Time integrals over such a path are left-endpoint Riemann sums when the
/// knots are the observation grid, and exact for piecewise-constant models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilityPath {
    knots: Vec<f64>,
    values: Vec<f64>,
    pub source: VolSource,
}

impl VolatilityPath {
    pub fn new(knots: Vec<f64>, values: Vec<f64>, source: VolSource) -> Result<Self> {
        if knots.len() != values.len() + 1 || values.is_empty() {
            return Err(Error::BadParam("volatility path needs one more knot than values".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) || knots[0] != 0.0 {
            return Err(Error::BadParam("volatility knots must start at 0 and increase".into()));
        }
        for (k, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { time: knots[k] });
            }
            if v.abs() < DEFAULT_VOL_FLOOR {
                return Err(Error::VolVanished { time: knots[k], floor: DEFAULT_VOL_FLOOR });
            }
        }
        Ok(Self { knots, values, source })
    }

    /// σ at the left endpoints of a simulated path's observation cells.
    pub fn from_path(path: &SamplePath) -> Result<Self> {
        let sig = path.sigma_values.as_ref().ok_or(Error::VolatilityUnavailable)?;
        let cells = path.increment_count();
        let dt = 1.0 / path.n as f64;
        let knots = (0..=cells).map(|k| k as f64 * dt).collect();
        Self::new(knots, sig[..cells].to_vec(), VolSource::Simulated)
    }

    pub fn constant(sigma: f64, horizon: f64) -> Result<Self> {
        Self::new(vec![0.0, horizon], vec![sigma], VolSource::Analytic)
    }

    /// `sigmas[k]` on `[breaks[k−1], breaks[k])`, ending at `horizon`.
    pub fn piecewise(breaks: &[f64], sigmas: &[f64], horizon: f64) -> Result<Self> {
        if sigmas.len() != breaks.len() + 1 {
            return Err(Error::BadParam("piecewise volatility needs one more sigma than breaks".into()));
        }
        let mut knots = vec![0.0];
        knots.extend_from_slice(breaks);
        knots.push(horizon);
        Self::new(knots, sigmas.to_vec(), VolSource::Analytic)
    }

    /// Sample a deterministic σ(t) at the left endpoints of the grid `{k/n}`.
    pub fn from_fn(f: impl Fn(f64) -> f64, n: usize, horizon: f64) -> Result<Self> {
        let cells = (n as f64 * horizon + 1e-9).floor() as usize;
        let dt = 1.0 / n as f64;
        let knots = (0..=cells).map(|k| k as f64 * dt).collect();
        let values = (0..cells).map(|k| f(k as f64 * dt)).collect();
        Self::new(knots, values, VolSource::Analytic)
    }

    pub fn horizon(&self) -> f64 {
        *self.knots.last().expect("nonempty knots")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Distinct values of σ on `[a, b)` with the time they occupy.
    pub fn atoms(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        let mut merged: BTreeMap<u64, f64> = BTreeMap::new();
        for (k, &v) in self.values.iter().enumerate() {
            let lo = self.knots[k].max(a);
            let hi = self.knots[k + 1].min(b);
            if hi > lo {
                *merged.entry(v.to_bits()).or_insert(0.0) += hi - lo;
            }
        }
        merged.into_iter().map(|(bits, w)| (f64::from_bits(bits), w)).collect()
    }

    fn check_t(&self, t: f64) -> Result<()> {
        if !(t >= 0.0) || t > self.horizon() * (1.0 + 1e-12) {
            return Err(Error::BadParam(format!("t = {t} outside [0, {}]", self.horizon())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoMethod {
    Quadrature,
    Refined,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoEstimate {
    pub value: f64,
    /// Present for Monte Carlo estimates.
    pub std_error: Option<f64>,
    pub method: RhoMethod,
}

fn tensor_quadrature(f: &(dyn Fn(&[f64]) -> f64 + Sync), sigmas: &[f64], rule: &QuadratureRule) -> Result<f64> {
    let d = sigmas.len();
    let m = rule.len();
    let points = (m as u128).pow(d as u32);
    if points > QUADRATURE_BUDGET {
        return Err(Error::QuadratureBudget { points, budget: QUADRATURE_BUDGET });
    }
    let partials: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|first| {
            let mut idx = vec![0usize; d.saturating_sub(1)];
            let mut x = vec![0.0; d];
            x[0] = sigmas[0] * rule.nodes[first];
            let mut acc = PairwiseAccumulator::new();
            loop {
                let mut w = rule.weights[first];
                for (k, &i) in idx.iter().enumerate() {
                    x[k + 1] = sigmas[k + 1] * rule.nodes[i];
                    w *= rule.weights[i];
                }
                acc.push(w * f(&x));
                // odometer over the remaining coordinates
                let mut k = idx.len();
                loop {
                    if k == 0 {
                        return acc.sum();
                    }
                    k -= 1;
                    idx[k] += 1;
                    if idx[k] < m {
                        break;
                    }
                    idx[k] = 0;
                }
            }
        })
        .collect();
    Ok(pairwise_sum(&partials))
}

fn monte_carlo_rho(h: &Kernel, sigmas: &[f64], fb: &McFallback) -> RhoEstimate {
    let d = sigmas.len();
    let pairs = (fb.samples / 2).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(fb.seed);
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut vals = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        for k in 0..d {
            let u: f64 = rng.sample(StandardNormal);
            x[k] = sigmas[k] * u;
            y[k] = -x[k];
        }
        vals.push(0.5 * (h.eval(&x) + h.eval(&y)));
    }
    let mean = pairwise_sum(&vals) / pairs as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (pairs - 1) as f64;
    RhoEstimate { value: mean, std_error: Some((var / pairs as f64).sqrt()), method: RhoMethod::MonteCarlo }
}

/// ρ_σ(H) = E H(σ₁U₁, …, σ_dU_d) by tensor-product Gauss–Hermite quadrature.
///
/// Piecewise-smooth kernels are re-integrated on a rule with twice the nodes;
/// if the two disagree by more than [`REFINEMENT_TOLERANCE`] the Monte Carlo
/// fallback of `rule` is used, and without one the call fails.
pub fn rho(h: &Kernel, sigmas: &[f64], rule: &QuadratureRule) -> Result<RhoEstimate> {
    if sigmas.len() != h.order() {
        return Err(Error::BadParam(format!(
            "kernel of order {} needs {} sigmas, got {}",
            h.order(),
            h.order(),
            sigmas.len()
        )));
    }
    if sigmas.iter().any(|&s| s == 0.0 || !s.is_finite()) {
        return Err(Error::BadParam("rho needs finite nonzero sigmas".into()));
    }
    let f = |x: &[f64]| h.eval(x);
    let coarse = tensor_quadrature(&f, sigmas, rule)?;
    if h.smoothness() != Smoothness::C1Piecewise {
        return Ok(RhoEstimate { value: coarse, std_error: None, method: RhoMethod::Quadrature });
    }
    let fine_rule = QuadratureRule::gauss_hermite(2 * rule.len());
    let refined = match tensor_quadrature(&f, sigmas, &fine_rule) {
        Ok(v) => Some(v),
        Err(Error::QuadratureBudget { .. }) => None,
        Err(e) => return Err(e),
    };
    let difference = refined.map_or(f64::INFINITY, |v| (v - coarse).abs());
    if difference < REFINEMENT_TOLERANCE {
        return Ok(RhoEstimate {
            value: refined.expect("finite difference implies a refined value"),
            std_error: None,
            method: RhoMethod::Refined,
        });
    }
    match &rule.mc_fallback {
        Some(fb) => Ok(monte_carlo_rho(h, sigmas, fb)),
        None => Err(Error::NonConvergent { difference, tolerance: REFINEMENT_TOLERANCE }),
    }
}

/// ρ through the kernel's closed form when it has one, else by quadrature.
pub(crate) fn rho_value(h: &Kernel, sigmas: &[f64], rule: &QuadratureRule) -> Result<f64> {
    match h.closed_form_rho() {
        Some(f) => Ok(f(sigmas)),
        None => Ok(rho(h, sigmas, rule)?.value),
    }
}

/// Multisets of size d drawn from 0..k, as nondecreasing index vectors,
/// together with the number of distinct orderings of each.
pub(crate) fn multisets(k: usize, d: usize) -> Vec<(Vec<usize>, f64)> {
    let mut out = Vec::new();
    let mut idx = vec![0usize; d];
    let fact = |n: usize| (1..=n).map(|v| v as f64).product::<f64>();
    loop {
        let mut orderings = fact(d);
        let mut run = 1;
        for w in idx.windows(2) {
            if w[0] == w[1] {
                run += 1;
            } else {
                orderings /= fact(run);
                run = 1;
            }
        }
        orderings /= fact(run);
        out.push((idx.clone(), orderings));
        let mut i = d;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] + 1 < k {
                idx[i] += 1;
                for j in i + 1..d {
                    idx[j] = idx[i];
                }
                break;
            }
        }
    }
}

/// U(H)_t = ∫_{[0,t]^d} ρ_{σ_s}(H) ds.
///
/// ρ is symmetric in its σ arguments for symmetric H, so the d-fold sum runs
/// over multisets of distinct σ values only.
pub fn limit_u(h: &Kernel, vol: &VolatilityPath, t: f64, rule: &QuadratureRule) -> Result<f64> {
    vol.check_t(t)?;
    let atoms = vol.atoms(0.0, t);
    if atoms.is_empty() {
        return Ok(0.0);
    }
    let d = h.order();
    let combos = multisets(atoms.len(), d);
    let terms: Result<Vec<f64>> = combos
        .par_iter()
        .map(|(idx, count)| {
            let sig: Vec<f64> = idx.iter().map(|&i| atoms[i].0).collect();
            let w: f64 = idx.iter().map(|&i| atoms[i].1).product();
            Ok(count * w * rho_value(h, &sig, rule)?)
        })
        .collect();
    Ok(pairwise_sum(&terms?))
}

/// F(t, x) = ∫₀ᵗ Φ_{σ_s}(x) ds.
pub fn limit_cdf(vol: &VolatilityPath, t: f64, x: f64) -> Result<f64> {
    vol.check_t(t)?;
    let terms: Vec<f64> = vol.atoms(0.0, t).iter().map(|(s, w)| w * gaussian_cdf(*s, x)).collect();
    Ok(pairwise_sum(&terms))
}

/// WL_t = ∫₀ᵗ ∫_t^T (1 − (2/π) arctan|σ_{s₁}/σ_{s₂}|) ds₂ ds₁.
pub fn wilcoxon_limit(vol: &VolatilityPath, t: f64) -> Result<f64> {
    vol.check_t(t)?;
    if !(t > 0.0 && t < vol.horizon()) {
        return Err(Error::BadParam(format!("wilcoxon limit needs 0 < t < {}", vol.horizon())));
    }
    let left = vol.atoms(0.0, t);
    let right = vol.atoms(t, vol.horizon());
    let mut terms = Vec::with_capacity(left.len() * right.len());
    for (s1, w1) in &left {
        for (s2, w2) in &right {
            terms.push(w1 * w2 * (1.0 - FRAC_2_PI * (s1 / s2).abs().atan()));
        }
    }
    Ok(pairwise_sum(&terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{gini_even, lp_power, sum_of_squares};

    const PHI0: f64 = 0.398_942_280_401_432_7;

    #[test]
    fn gaussian_examples() {
        assert_eq!(gaussian_cdf(2.0, 0.0), 0.5);
        assert!((gaussian_density(1.0, 0.0) - PHI0).abs() < 1e-15);
        for x in [-2.0, -0.3, 0.0, 0.7, 3.1] {
            assert_eq!(gaussian_cdf(-1.0, x), gaussian_cdf(1.0, x));
            assert_eq!(gaussian_density(-1.5, x), gaussian_density(1.5, x));
        }
        assert_eq!(gaussian_cdf(0.0, -1e-300), 0.0);
        assert_eq!(gaussian_cdf(0.0, 0.0), 1.0);
        let c = std_normal_cdf(1.0);
        assert!((c - 0.841_344_746_068_542_9).abs() < 1e-15, "{c:.20}");
    }

    #[test]
    fn quantile_inverts_cdf() {
        for p in [1e-6, 0.01, 0.025, 0.3, 0.5, 0.95, 0.999] {
            assert!((std_normal_cdf(std_normal_quantile(p)) - p).abs() < 1e-13 * p.max(1e-3) * 1e3);
        }
        assert!((std_normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-14);
    }

    #[test]
    fn phi_bar_values() {
        assert!((phi_bar(1.0, 0.0) + PHI0).abs() < 1e-15);
        assert!((phi_bar(-1.0, 0.0) - PHI0).abs() < 1e-15);
        assert!(phi_bar(1.0, 40.0).abs() < 1e-300);
        assert!(phi_bar(1.0, -40.0).abs() < 1e-300);
        assert_eq!(phi_bar(0.0, 1.0), 0.0);
    }

    #[test]
    fn rho_closed_forms() {
        let rule = QuadratureRule::default();
        let r = rho(&sum_of_squares(), &[1.0, 1.0], &rule).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12);
        assert_eq!(r.method, RhoMethod::Quadrature);
        let r = rho(&lp_power(2.0).unwrap(), &[1.0, 1.0], &rule).unwrap();
        assert!((r.value - 12.0).abs() < 1e-9);
        let g = rho(&gini_even(), &[1.0, 1.0], &rule).unwrap();
        let exact = 2.0 / PI.sqrt();
        let se = g.std_error.unwrap_or(1e-6);
        assert!((g.value - exact).abs() < 4.0 * se, "{g:?}");
    }

    #[test]
    fn rho_rejects_zero_sigma_and_budget() {
        let rule = QuadratureRule::default();
        assert!(rho(&sum_of_squares(), &[0.0, 1.0], &rule).is_err());
        assert!(rho(&sum_of_squares(), &[1.0], &rule).is_err());
        let big = QuadratureRule::gauss_hermite(4000);
        assert!(matches!(rho(&sum_of_squares(), &[1.0, 1.0], &big), Err(Error::QuadratureBudget { .. })));
    }

    #[test]
    fn gini_without_fallback_does_not_converge() {
        let rule = QuadratureRule::gauss_hermite(16).without_fallback();
        assert!(matches!(rho(&gini_even(), &[1.0, 2.0], &rule), Err(Error::NonConvergent { .. })));
    }

    #[test]
    fn limit_u_examples() {
        let rule = QuadratureRule::default();
        let one = VolatilityPath::constant(1.0, 1.0).unwrap();
        assert!((limit_u(&sum_of_squares(), &one, 1.0, &rule).unwrap() - 2.0).abs() < 1e-12);
        let md = limit_u(&gini_even(), &one, 1.0, &rule).unwrap();
        assert!((md - 2.0 / PI.sqrt()).abs() < 1e-12);
        let pw = VolatilityPath::piecewise(&[0.5], &[1.0, 2.0], 1.0).unwrap();
        assert!((limit_u(&sum_of_squares(), &pw, 1.0, &rule).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(limit_u(&sum_of_squares(), &pw, 0.0, &rule).unwrap(), 0.0);
        assert!(limit_u(&sum_of_squares(), &pw, 1.5, &rule).is_err());
    }

    #[test]
    fn limit_u_multiset_reduction_matches_full_grid() {
        let rule = QuadratureRule::default();
        let h = lp_power(1.5).unwrap();
        let vol = VolatilityPath::piecewise(&[0.2, 0.7], &[1.0, 0.5, 2.0], 1.0).unwrap();
        let atoms = vol.atoms(0.0, 0.9);
        let mut full = 0.0;
        for a in &atoms {
            for b in &atoms {
                full += a.1 * b.1 * h.closed_form_rho().unwrap()(&[a.0, b.0]);
            }
        }
        let fast = limit_u(&h, &vol, 0.9, &rule).unwrap();
        assert!((fast - full).abs() < 1e-9 * full, "{fast} {full}");
    }

    #[test]
    fn limit_cdf_examples() {
        let two = VolatilityPath::constant(2.0, 1.0).unwrap();
        assert!((limit_cdf(&two, 1.0, 2.0).unwrap() - 0.841_344_7).abs() < 1e-7);
        let pw = VolatilityPath::piecewise(&[0.4], &[0.5, 3.0], 1.0).unwrap();
        assert!((limit_cdf(&pw, 0.8, 0.0).unwrap() - 0.4).abs() < 1e-15);
        assert!((limit_cdf(&pw, 0.8, 1e6).unwrap() - 0.8).abs() < 1e-12);
        let mut prev = 0.0;
        for k in 0..50 {
            let x = -3.0 + 0.12 * k as f64;
            let v = limit_cdf(&pw, 1.0, x).unwrap();
            assert!(v >= prev);
            prev = v;
            let sym = v + limit_cdf(&pw, 1.0, -x).unwrap();
            assert!((sym - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn wilcoxon_limit_examples() {
        let one = VolatilityPath::constant(1.0, 1.0).unwrap();
        assert!((wilcoxon_limit(&one, 0.5).unwrap() - 0.125).abs() < 1e-12);
        assert!((wilcoxon_limit(&one, 0.3).unwrap() - 0.105).abs() < 1e-12);
        let jump = VolatilityPath::piecewise(&[0.5], &[1.0, 1e3], 1.0).unwrap();
        let v = wilcoxon_limit(&jump, 0.5).unwrap();
        let expected = 0.25 * (1.0 - FRAC_2_PI * 1e-3f64.atan());
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.24984).abs() < 1e-5);
        assert!(wilcoxon_limit(&one, 0.0).is_err());
        assert!(wilcoxon_limit(&one, 1.0).is_err());
    }

    #[test]
    fn volatility_path_validation() {
        assert!(VolatilityPath::constant(0.0, 1.0).is_err());
        assert!(VolatilityPath::constant(f64::NAN, 1.0).is_err());
        assert!(VolatilityPath::piecewise(&[0.5], &[1.0], 1.0).is_err());
        let grid = VolatilityPath::from_fn(|t| 1.0 + t, 4, 1.0).unwrap();
        assert_eq!(grid.values(), &[1.0, 1.25, 1.5, 1.75]);
        let atoms = grid.atoms(0.0, 0.6);
        assert_eq!(atoms.len(), 3);
        assert!((atoms.iter().map(|a| a.1).sum::<f64>() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn multiset_counts() {
        let ms = multisets(3, 2);
        assert_eq!(ms.len(), 6);
        let total: f64 = ms.iter().map(|m| m.1).sum();
        assert_eq!(total, 9.0);
        let total3: f64 = multisets(4, 3).iter().map(|m| m.1).sum();
        assert_eq!(total3, 64.0);
    }
}
