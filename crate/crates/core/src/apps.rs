//! Applications: the Gini mean difference with confidence intervals, the
//! Lᵖ test for constant volatility, and the Wilcoxon change-point statistic.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{abs_moment, gini_even, lp_power, sum_of_squares};
use crate::limit::{limit_u, std_normal_cdf, std_normal_quantile, QuadratureRule, VolatilityPath};
use crate::sim::IncrementSeries;
use crate::ustat::{binomial, u_statistic, EvaluationWindow};
use crate::varest::{pair_sums, variance_estimate, VARIANCE_FLOOR};

/// Default boundary trim for the Wilcoxon argsup.
pub const DEFAULT_DELTA: f64 = 0.05;
/// Default level.
pub const DEFAULT_GAMMA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Reject,
    FailToReject,
    EstimateOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportInputs {
    pub n: usize,
    pub t: f64,
    pub kernel: String,
    /// `seed:<u64>` for simulated data, `ingested` or a file name otherwise.
    pub source: String,
}

/// Theoretical value of the estimated quantity, available for simulated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleBlock {
    pub quantity: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub procedure: String,
    pub statistic: f64,
    pub std_error: Option<f64>,
    pub p_value: Option<f64>,
    pub decision: Decision,
    pub gamma: f64,
    pub confidence_interval: Option<[f64; 2]>,
    pub warnings: Vec<String>,
    pub inputs: ReportInputs,
    pub oracle: Option<OracleBlock>,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::BadParam(format!("level must lie in (0, 1), got {gamma}")));
    }
    Ok(())
}

fn check_unit_horizon(series: &IncrementSeries) -> Result<()> {
    let h = series.horizon();
    if (h - 1.0).abs() > 1e-9 {
        return Err(Error::HorizonNotUnit(h));
    }
    Ok(())
}

const FLOORED_WARNING: &str = "variance estimate was floored; V1 - V2 was not positive";

/// Gini mean difference `U(H̄)ₜⁿ` with a two-sided (1 − γ) confidence interval
/// from the feasible central limit theorem.
pub fn gini(
    series: &IncrementSeries,
    window: &EvaluationWindow,
    vol: Option<&VolatilityPath>,
    gamma: f64,
) -> Result<TestReport> {
    check_gamma(gamma)?;
    let h = gini_even();
    let statistic = u_statistic(&h, series, window)?;
    let var = variance_estimate(&h, series, window)?;
    let se = (var.v / window.n as f64).sqrt();
    let c = std_normal_quantile(1.0 - gamma / 2.0);
    let mut warnings = Vec::new();
    if var.floored {
        warnings.push(FLOORED_WARNING.to_string());
    }
    let oracle = match vol {
        Some(v) => {
            Some(OracleBlock { quantity: "MD_t".into(), value: limit_u(&h, v, window.t, &QuadratureRule::default())? })
        }
        None => None,
    };
    Ok(TestReport {
        procedure: "gini".into(),
        statistic,
        std_error: Some(se),
        p_value: None,
        decision: Decision::EstimateOnly,
        gamma,
        confidence_interval: Some([statistic - c * se, statistic + c * se]),
        warnings,
        inputs: ReportInputs { n: window.n, t: window.t, kernel: h.name().into(), source: series.source_label() },
        oracle,
    })
}

/// `r(x, y) = 1 − m₂ₚ yᵖ / x`.
pub fn lp_r(x: f64, y: f64, p: f64) -> f64 {
    1.0 - abs_moment(2.0 * p) * y.powf(p) / x
}

/// `∇r(x, y) = (m₂ₚ yᵖ / x², −p m₂ₚ yᵖ⁻¹ / x)`.
pub fn lp_grad_r(x: f64, y: f64, p: f64) -> [f64; 2] {
    let m = abs_moment(2.0 * p);
    [m * y.powf(p) / (x * x), -p * m * y.powf(p - 1.0) / x]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpTestState {
    pub p: f64,
    pub u1: f64,
    pub u2: f64,
    pub m2p: f64,
    pub mn2: f64,
    pub grad_r: [f64; 2],
    /// Symmetric part of the estimated covariance matrix.
    pub vn: [[f64; 2]; 2],
    pub vn2: f64,
    pub floored: bool,
}

/// Test of constant volatility on [0, 1] based on the gap between the
/// Lᵖ and L¹ norms of `σ²_{s₁} + σ²_{s₂}`.
///
/// Rejects when `Sₙ = √n 𝓜ₙ² / √vₙ²` exceeds the standard normal
/// (1 − γ)-quantile; the p-value is `1 − Φ(Sₙ)`.
pub fn lp_test(series: &IncrementSeries, p: f64, gamma: f64) -> Result<(TestReport, LpTestState)> {
    check_gamma(gamma)?;
    check_unit_horizon(series)?;
    let h1 = lp_power(p)?;
    let h2 = sum_of_squares();
    let n = series.n;
    if n < 3 {
        return Err(Error::WindowTooShort { available: n, order: 3 });
    }
    let s = pair_sums(&[&h1, &h2], &series.scaled);
    let c2 = binomial(n, 2);
    let c3 = binomial(n, 3);
    let u1 = s.h[0] / c2;
    let u2 = s.h[1] / c2;
    if !(u1 > 0.0) {
        return Err(Error::DegenerateDenominator(format!("U(H1) = {u1}")));
    }
    let mut raw = [[0.0; 2]; 2];
    for (i, row) in raw.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let ij = i * 2 + j;
            *v = 4.0 * s.g1[ij] / c3 - 4.0 / n as f64 * s.g2[ij] / c2;
        }
    }
    // the adjacent-pair term is not symmetric in (i, j) at finite n; the
    // quadratic form only sees the symmetric part
    let off = 0.5 * (raw[0][1] + raw[1][0]);
    let vn = [[raw[0][0], off], [off, raw[1][1]]];
    let m2p = abs_moment(2.0 * p);
    let mn2 = lp_r(u1, u2, p);
    let g = lp_grad_r(u1, u2, p);
    let q = g[0] * g[0] * vn[0][0] + 2.0 * g[0] * g[1] * vn[0][1] + g[1] * g[1] * vn[1][1];
    let scale = g[0] * g[0] * vn[0][0].abs() + 2.0 * (g[0] * g[1] * vn[0][1]).abs() + g[1] * g[1] * vn[1][1].abs();
    let floor = (VARIANCE_FLOOR * scale).max(f64::MIN_POSITIVE);
    let (vn2, floored) = if q.is_finite() && q >= floor { (q, false) } else { (floor, true) };
    let stat = (n as f64).sqrt() * mn2 / vn2.sqrt();
    let p_value = 1.0 - std_normal_cdf(stat);
    let reject = stat > std_normal_quantile(1.0 - gamma);
    let mut warnings = Vec::new();
    if floored {
        warnings.push("delta-method variance was floored; it was not positive".to_string());
    }
    let state = LpTestState { p, u1, u2, m2p, mn2, grad_r: g, vn, vn2, floored };
    let report = TestReport {
        procedure: "lp_test".into(),
        statistic: stat,
        std_error: Some((vn2 / n as f64).sqrt()),
        p_value: Some(p_value.clamp(0.0, 1.0)),
        decision: if reject { Decision::Reject } else { Decision::FailToReject },
        gamma,
        confidence_interval: None,
        warnings,
        inputs: ReportInputs { n, t: 1.0, kernel: h1.name().into(), source: series.source_label() },
        oracle: None,
    };
    Ok((report, state))
}

/// Binary indexed tree of counts.
struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self { tree: vec![0; n + 1] }
    }

    fn add(&mut self, i: usize) {
        let mut i = i + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks `< end`.
    fn prefix(&self, end: usize) -> u64 {
        let mut i = end;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// `n² WLₖ` for every split `k = 0..=n`, as exact integer counts.
///
/// Moving index k+1 from the right block to the left removes its pairs with
/// the left block and adds its pairs with what remains on the right.
fn wilcoxon_counts(increments: &[f64]) -> Vec<u64> {
    let a: Vec<f64> = increments.iter().map(|v| v.abs()).collect();
    let n = a.len();
    let mut sorted = a.clone();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let rank: Vec<usize> = a.iter().map(|v| sorted.partition_point(|s| s.total_cmp(v).is_lt())).collect();
    // ge[r] = #{all j : rank_j ≥ r}
    let mut ge = vec![0u64; sorted.len() + 1];
    for &r in &rank {
        ge[r] += 1;
    }
    for r in (0..sorted.len()).rev() {
        ge[r] += ge[r + 1];
    }
    let mut left = Fenwick::new(sorted.len());
    let mut counts = Vec::with_capacity(n + 1);
    let mut c: u64 = 0;
    counts.push(0);
    for (k, &r) in rank.iter().enumerate() {
        // left block is 0..k, element k moves over
        let lost = left.prefix(r + 1);
        left.add(r);
        let left_lt = left.prefix(r);
        let left_ge = (k as u64 + 1) - left_lt;
        let gained = ge[r] - left_ge;
        c = c + gained - lost;
        counts.push(c);
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonState {
    /// `t = k/n` for `k = 0..=n`.
    pub times: Vec<f64>,
    pub wl_path: Vec<f64>,
    pub sup_stat: f64,
    pub t_hat: f64,
    pub delta: f64,
}

fn wilcoxon_state(raw: &[f64], n: usize, delta: f64) -> Result<WilcoxonState> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::BadParam(format!("delta must lie in (0, 1/2), got {delta}")));
    }
    let nn = (n as f64) * (n as f64);
    let counts = wilcoxon_counts(raw);
    let times: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
    let wl_path: Vec<f64> = counts.iter().map(|&c| c as f64 / nn).collect();
    let lo = (delta * n as f64 - 1e-9).ceil() as usize;
    let hi = ((1.0 - delta) * n as f64 + 1e-9).floor() as usize;
    if lo > hi {
        return Err(Error::TooShort { got: n, need: (1.0 / (1.0 - 2.0 * delta)).ceil() as usize });
    }
    let mut best = (f64::NEG_INFINITY, lo);
    for k in lo..=hi {
        let t = times[k];
        let dev = (wl_path[k] - 0.5 * t * (1.0 - t)).abs();
        if dev > best.0 {
            best = (dev, k);
        }
    }
    let t_hat = times[best.1];
    Ok(WilcoxonState { times, wl_path, sup_stat: best.0, t_hat, delta })
}

/// Wilcoxon change-point statistic on [0, 1] from raw increments.
///
/// The report's statistic is `sup_{t∈[δ,1−δ]} |WLₜⁿ − t(1−t)/2|`; no p-value
/// is attached (see [`wilcoxon_permutation_p_value`] for a heuristic one).
/// With a volatility path the oracle block carries `WL` at `t̂ₙ`.
pub fn wilcoxon(
    series: &IncrementSeries,
    delta: f64,
    vol: Option<&VolatilityPath>,
) -> Result<(TestReport, WilcoxonState)> {
    check_unit_horizon(series)?;
    if series.len() < 2 {
        return Err(Error::TooShort { got: series.len(), need: 2 });
    }
    let state = wilcoxon_state(&series.raw, series.n, delta)?;
    let oracle = match vol {
        Some(v) if state.t_hat > 0.0 && state.t_hat < 1.0 => {
            Some(OracleBlock { quantity: "WL_t_hat".into(), value: crate::limit::wilcoxon_limit(v, state.t_hat)? })
        }
        _ => None,
    };
    let report = TestReport {
        procedure: "wilcoxon".into(),
        statistic: state.sup_stat,
        std_error: None,
        p_value: None,
        decision: Decision::EstimateOnly,
        gamma: DEFAULT_GAMMA,
        confidence_interval: None,
        warnings: Vec::new(),
        inputs: ReportInputs { n: series.n, t: state.t_hat, kernel: "wilcoxon".into(), source: series.source_label() },
        oracle,
    };
    Ok((report, state))
}

/// Heuristic p-value: the share of `b` random permutations of the increments
/// whose sup-statistic is at least the observed one, as `(1 + #) / (1 + b)`.
///
/// Permuting destroys any break but also any smooth time variation of σ, so
/// this calibrates against exchangeable increments, not against the
/// constant-volatility null in general.
pub fn wilcoxon_permutation_p_value(series: &IncrementSeries, delta: f64, b: usize, seed: u64) -> Result<f64> {
    check_unit_horizon(series)?;
    let observed = wilcoxon_state(&series.raw, series.n, delta)?.sup_stat;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = series.raw.clone();
    let mut hits = 0usize;
    for _ in 0..b {
        work.shuffle(&mut rng);
        if wilcoxon_state(&work, series.n, delta)?.sup_stat >= observed {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (1 + b) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_counts(a: &[f64]) -> Vec<u64> {
        (0..=a.len())
            .map(|k| {
                let mut c = 0;
                for i in 0..k {
                    for j in k..a.len() {
                        if a[i].abs() <= a[j].abs() {
                            c += 1;
                        }
                    }
                }
                c
            })
            .collect()
    }

    #[test]
    fn fenwick_counts_match_naive_with_ties() {
        let a = [0.5, -1.0, 0.5, 2.0, -0.5, 0.0, 1.0, 1.0, -2.0];
        assert_eq!(wilcoxon_counts(&a), naive_counts(&a));
    }

    #[test]
    fn two_point_example() {
        let s = IncrementSeries { n: 2, raw: vec![1.0, 2.0], scaled: vec![1.0, 2.0], alpha: None, seed: None };
        let st = wilcoxon_state(&s.raw, 2, 0.25).unwrap();
        assert_eq!(st.wl_path, vec![0.0, 0.25, 0.0]);
    }

    #[test]
    fn wilcoxon_requires_unit_horizon() {
        let s = IncrementSeries::from_scaled(10, vec![1.0; 5]);
        assert!(matches!(wilcoxon(&s, 0.05, None), Err(Error::HorizonNotUnit(_))));
        assert!(matches!(lp_test(&s, 2.0, 0.05), Err(Error::HorizonNotUnit(_))));
    }

    #[test]
    fn gradient_values() {
        let g = lp_grad_r(2.0, 3.0, 2.0);
        // m₄ = 3
        assert!((g[0] - 3.0 * 9.0 / 4.0).abs() < 1e-12);
        assert!((g[1] + 2.0 * 3.0 * 3.0 / 2.0).abs() < 1e-12);
        assert!((lp_r(27.0, 3.0, 2.0) - 0.0).abs() < 1e-12);
    }

    #[test]
    fn lp_test_degenerate_input() {
        let s = IncrementSeries::from_scaled(5, vec![0.0; 5]);
        assert!(matches!(lp_test(&s, 2.0, 0.05), Err(Error::DegenerateDenominator(_))));
    }

    #[test]
    fn gini_zero_increments() {
        let s = IncrementSeries::from_scaled(6, vec![0.0; 6]);
        let w = EvaluationWindow::new(1.0, 6, 2).unwrap();
        let r = gini(&s, &w, None, 0.05).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.decision, Decision::EstimateOnly);
    }

    #[test]
    fn report_field_names_are_stable() {
        let s = IncrementSeries::from_scaled(6, vec![1.0, -0.5, 0.3, 2.0, -1.1, 0.7]);
        let w = EvaluationWindow::new(1.0, 6, 2).unwrap();
        let r = gini(&s, &w, None, 0.05).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for key in [
            "statistic",
            "std_error",
            "p_value",
            "decision",
            "gamma",
            "warnings",
            "inputs",
            "oracle",
            "confidence_interval",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["decision"], "estimate_only");
    }

    #[test]
    fn permutation_p_value_in_unit_interval() {
        let raw: Vec<f64> = (0..60).map(|i| if i < 30 { 0.1 } else { 1.0 } * (1.0 + (i % 7) as f64)).collect();
        let s = IncrementSeries { n: 60, scaled: raw.clone(), raw, alpha: None, seed: None };
        let p = wilcoxon_permutation_p_value(&s, 0.05, 99, 1).unwrap();
        assert!(p > 0.0 && p <= 1.0);
        assert!(p < 0.05);
    }
}
