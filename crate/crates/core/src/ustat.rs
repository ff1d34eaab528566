//! U-statistics of scaled increments, and the empirical distribution function
//! and empirical process of the α approximants.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::limit::gaussian_cdf;
use crate::limit::phi_bar;
use crate::sim::IncrementSeries;
use crate::summation::{compensated_prefix_sums, pairwise_sum, PairwiseAccumulator};

/// Rows handled by one parallel task in the order-2 engine.
const ROW_BLOCK: usize = 32;
/// Default cap on the number of increments for enumeration at order ≥ 3.
pub const DEFAULT_MAX_ENUMERATION_N: usize = 3000;

/// `⌊n t⌋`, tolerant of `t` computed as `k / n` in floating point.
pub fn grid_index(n: usize, t: f64) -> usize {
    (n as f64 * t + 1e-9).floor() as usize
}

/// Binomial coefficient as a float; exact up to 2⁵³.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut c = 1.0f64;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c.round()
}

/// The index set `{1 ≤ i₁ < … < i_d ≤ ⌊nt⌋}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationWindow {
    pub t: f64,
    pub n: usize,
    pub d: usize,
}

impl EvaluationWindow {
    pub fn new(t: f64, n: usize, d: usize) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) || n == 0 || d == 0 {
            return Err(Error::BadParam(format!("invalid window t = {t}, n = {n}, d = {d}")));
        }
        let w = Self { t, n, d };
        if w.upper() < d {
            return Err(Error::WindowTooShort { available: w.upper(), order: d });
        }
        Ok(w)
    }

    /// `⌊nt⌋`.
    pub fn upper(&self) -> usize {
        grid_index(self.n, self.t)
    }

    fn check(&self, h_order: usize, len: usize) -> Result<usize> {
        if h_order != self.d {
            return Err(Error::BadParam(format!("window order {} does not match kernel order {h_order}", self.d)));
        }
        let m = self.upper();
        if m < self.d {
            return Err(Error::WindowTooShort { available: m, order: self.d });
        }
        if m > len {
            return Err(Error::BadParam(format!("window needs {m} increments, series has {len}")));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub max_enumeration_n: usize,
    /// Lift the enumeration guard.
    pub allow_large: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { max_enumeration_n: DEFAULT_MAX_ENUMERATION_N, allow_large: false }
    }
}

impl EngineConfig {
    fn guard(&self, order: usize, m: usize) -> Result<()> {
        if order >= 3 && m > self.max_enumeration_n && !self.allow_large {
            return Err(Error::EnumerationGuard { order, m, max_n: self.max_enumeration_n });
        }
        Ok(())
    }
}

/// Per-row sums over the kernel matrix `H(x_k, x_a)` of one or more order-2
/// kernels, from which U-statistics and their variance estimators follow.
///
/// Products are indexed `i * K + j` for kernels `i`, `j`.
#[derive(Debug, Clone, Default)]
pub(crate) struct RowStats {
    pub k: usize,
    /// `Σ_{a<k} H_i(x_k, x_a)`
    pub lower: Vec<Vec<f64>>,
    /// `Σ_{a≠k} H_i(x_k, x_a)`
    pub row: Vec<Vec<f64>>,
    /// `H_i(x_k, x_k)`
    pub diag: Vec<Vec<f64>>,
    /// `Σ_{a≠k} H_i(x_k, x_a) H_j(x_k, x_a)`
    pub sq: Vec<Vec<f64>>,
    /// `Σ_a H_i(x_k, x_a) H_j(x_{k+1}, x_a)`, for k < m − 1
    pub cross: Vec<Vec<f64>>,
}

fn sum_excluding(v: &[f64], k: usize) -> f64 {
    pairwise_sum(&v[..k]) + pairwise_sum(&v[k + 1..])
}

/// Lower-triangle row sums only.
pub(crate) fn lower_row_sums(h: &Kernel, x: &[f64]) -> Vec<f64> {
    let m = x.len();
    let blocks: Vec<Vec<f64>> = (0..m.div_ceil(ROW_BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut buf = Vec::with_capacity(m);
            (b * ROW_BLOCK..((b + 1) * ROW_BLOCK).min(m))
                .map(|k| {
                    buf.clear();
                    buf.extend(x[..k].iter().map(|&xa| h.eval2(x[k], xa)));
                    pairwise_sum(&buf)
                })
                .collect()
        })
        .collect();
    blocks.concat()
}

/// Full row pass for order-2 kernels: O(K² m²) work, parallel over row blocks.
pub(crate) fn row_stats(kernels: &[&Kernel], x: &[f64]) -> RowStats {
    let kn = kernels.len();
    let m = x.len();
    let eval_row = |k: usize, out: &mut Vec<Vec<f64>>| {
        for (i, h) in kernels.iter().enumerate() {
            out[i].clear();
            out[i].extend(x.iter().map(|&xa| h.eval2(x[k], xa)));
        }
    };
    struct Block {
        lower: Vec<Vec<f64>>,
        row: Vec<Vec<f64>>,
        diag: Vec<Vec<f64>>,
        sq: Vec<Vec<f64>>,
        cross: Vec<Vec<f64>>,
    }
    let blocks: Vec<Block> = (0..m.div_ceil(ROW_BLOCK))
        .into_par_iter()
        .map(|b| {
            let start = b * ROW_BLOCK;
            let end = ((b + 1) * ROW_BLOCK).min(m);
            let mut out = Block {
                lower: vec![Vec::new(); kn],
                row: vec![Vec::new(); kn],
                diag: vec![Vec::new(); kn],
                sq: vec![Vec::new(); kn * kn],
                cross: vec![Vec::new(); kn * kn],
            };
            let mut cur = vec![Vec::with_capacity(m); kn];
            let mut next = vec![Vec::with_capacity(m); kn];
            let mut prod = Vec::with_capacity(m);
            eval_row(start, &mut cur);
            for k in start..end {
                for i in 0..kn {
                    out.lower[i].push(pairwise_sum(&cur[i][..k]));
                    out.row[i].push(sum_excluding(&cur[i], k));
                    out.diag[i].push(cur[i][k]);
                    for j in 0..kn {
                        prod.clear();
                        prod.extend(cur[i].iter().zip(&cur[j]).map(|(a, b)| a * b));
                        out.sq[i * kn + j].push(sum_excluding(&prod, k));
                    }
                }
                if k + 1 < m {
                    eval_row(k + 1, &mut next);
                    for (i, ci) in cur.iter().enumerate() {
                        for (j, nj) in next.iter().enumerate() {
                            prod.clear();
                            prod.extend(ci.iter().zip(nj).map(|(a, b)| a * b));
                            out.cross[i * kn + j].push(pairwise_sum(&prod));
                        }
                    }
                    std::mem::swap(&mut cur, &mut next);
                }
            }
            out
        })
        .collect();
    let mut stats = RowStats {
        k: kn,
        lower: vec![Vec::with_capacity(m); kn],
        row: vec![Vec::with_capacity(m); kn],
        diag: vec![Vec::with_capacity(m); kn],
        sq: vec![Vec::with_capacity(m); kn * kn],
        cross: vec![Vec::with_capacity(m); kn * kn],
    };
    for b in blocks {
        for i in 0..kn {
            stats.lower[i].extend(&b.lower[i]);
            stats.row[i].extend(&b.row[i]);
            stats.diag[i].extend(&b.diag[i]);
        }
        for ij in 0..kn * kn {
            stats.sq[ij].extend(&b.sq[ij]);
            stats.cross[ij].extend(&b.cross[ij]);
        }
    }
    stats
}

/// Σ over strictly increasing index tuples of length `d` drawn from `0..m`
/// whose last index is exactly `last`, of `H(x_tuple)`.
fn sum_ending_at(h: &Kernel, x: &[f64], last: usize) -> f64 {
    let d = h.order();
    let mut acc = PairwiseAccumulator::new();
    let mut args = vec![0.0; d];
    args[d - 1] = x[last];
    if d == 1 {
        return h.eval(&args);
    }
    let r = d - 1;
    if last < r {
        return 0.0;
    }
    let mut idx: Vec<usize> = (0..r).collect();
    loop {
        for (slot, &i) in idx.iter().enumerate() {
            args[slot] = x[i];
        }
        acc.push(h.eval(&args));
        let mut i = r;
        loop {
            if i == 0 {
                return acc.sum();
            }
            i -= 1;
            if idx[i] < last - r + i {
                idx[i] += 1;
                for j in i + 1..r {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Unnormalized sums `Σ_{i₁<…<i_d=j} H` for each j in `0..x.len()`.
fn increments_by_last_index(h: &Kernel, x: &[f64], cfg: &EngineConfig) -> Result<Vec<f64>> {
    let m = x.len();
    match h.order() {
        1 => Ok(x.iter().map(|&v| h.eval(&[v])).collect()),
        2 => Ok(lower_row_sums(h, x)),
        d => {
            cfg.guard(d, m)?;
            Ok((0..m).into_par_iter().map(|j| sum_ending_at(h, x, j)).collect())
        }
    }
}

/// Unnormalized sum over all increasing d-tuples of `x`.
pub(crate) fn tuple_sum(h: &Kernel, x: &[f64], cfg: &EngineConfig) -> Result<f64> {
    Ok(pairwise_sum(&increments_by_last_index(h, x, cfg)?))
}

/// `U(H)_t^n = C(n, d)⁻¹ Σ_{i₁<…<i_d≤⌊nt⌋} H(√n Δ_{i₁}X, …, √n Δ_{i_d}X)`.
pub fn u_statistic(h: &Kernel, series: &IncrementSeries, window: &EvaluationWindow) -> Result<f64> {
    u_statistic_with(h, series, window, &EngineConfig::default())
}

pub fn u_statistic_with(
    h: &Kernel,
    series: &IncrementSeries,
    window: &EvaluationWindow,
    cfg: &EngineConfig,
) -> Result<f64> {
    let m = window.check(h.order(), series.len())?;
    Ok(tuple_sum(h, &series.scaled[..m], cfg)? / binomial(window.n, window.d))
}

/// `t ↦ U(H)_t^n` on the grid points `d/n, …, ⌊nT⌋/n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UPath {
    pub n: usize,
    pub d: usize,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl UPath {
    /// Value at grid time `t`, or `None` before the first admissible index.
    pub fn at(&self, t: f64) -> Option<f64> {
        let m = grid_index(self.n, t);
        m.checked_sub(self.d).and_then(|i| self.values.get(i).copied())
    }
}

pub fn u_statistic_path(h: &Kernel, series: &IncrementSeries) -> Result<UPath> {
    u_statistic_path_with(h, series, &EngineConfig::default())
}

pub fn u_statistic_path_with(h: &Kernel, series: &IncrementSeries, cfg: &EngineConfig) -> Result<UPath> {
    let d = h.order();
    let m = series.len();
    if m < d {
        return Err(Error::WindowTooShort { available: m, order: d });
    }
    let gains = increments_by_last_index(h, &series.scaled, cfg)?;
    let cumulative = compensated_prefix_sums(&gains);
    let norm = binomial(series.n, d);
    let times = (d..=m).map(|k| k as f64 / series.n as f64).collect();
    let values = cumulative[d - 1..].iter().map(|s| s / norm).collect();
    Ok(UPath { n: series.n, d, times, values })
}

fn window_len(series: &IncrementSeries, t: f64) -> Result<usize> {
    if !(t >= 0.0) {
        return Err(Error::BadParam(format!("t = {t} must be nonnegative")));
    }
    let m = grid_index(series.n, t);
    if m > series.len() {
        return Err(Error::BadParam(format!("t = {t} needs {m} increments, series has {}", series.len())));
    }
    Ok(m)
}

/// `F_n(t, x) = n⁻¹ #{j ≤ ⌊nt⌋ : α_j ≤ x}`.
///
/// With `use_alpha = false` the scaled increments stand in for α, which is
/// the only option for ingested data.
pub fn empirical_cdf(series: &IncrementSeries, use_alpha: bool, t: f64, x: f64) -> Result<f64> {
    let m = window_len(series, t)?;
    let src = if use_alpha { series.alpha.as_deref().ok_or(Error::AlphaUnavailable)? } else { &series.scaled };
    let count = src[..m].iter().filter(|&&a| a <= x).count();
    Ok(count as f64 / series.n as f64)
}

fn alpha_and_sigma<'a>(series: &'a IncrementSeries, sigma_values: &[f64], m: usize) -> Result<&'a [f64]> {
    let alpha = series.alpha.as_deref().ok_or(Error::AlphaUnavailable)?;
    if sigma_values.len() < m {
        return Err(Error::BadParam(format!("need {m} volatility values, got {}", sigma_values.len())));
    }
    Ok(alpha)
}

/// `𝔾_n(t, x) = n^{-1/2} Σ_{j≤⌊nt⌋} (1{α_j ≤ x} − Φ_{σ_{(j−1)/n}}(x))`.
///
/// `sigma_values[j − 1]` is σ at the left end of increment j.
pub fn empirical_process(series: &IncrementSeries, sigma_values: &[f64], t: f64, x: f64) -> Result<f64> {
    let m = window_len(series, t)?;
    let alpha = alpha_and_sigma(series, sigma_values, m)?;
    let terms: Vec<f64> =
        alpha[..m].iter().zip(sigma_values).map(|(&a, &s)| f64::from(u8::from(a <= x)) - gaussian_cdf(s, x)).collect();
    Ok(pairwise_sum(&terms) / (series.n as f64).sqrt())
}

/// `Σ_{j≤⌊nt⌋} Φ̄_{σ_{(j−1)/n}}(x) Δ_j W`, the part of 𝔾_n driven by W.
///
/// Subtracting it from 𝔾_n leaves the component whose conditional law given
/// the path of σ and W is the centered Gaussian limit.
pub fn empirical_process_drift(series: &IncrementSeries, sigma_values: &[f64], t: f64, x: f64) -> Result<f64> {
    let m = window_len(series, t)?;
    let alpha = alpha_and_sigma(series, sigma_values, m)?;
    let root = (series.n as f64).sqrt();
    let terms: Vec<f64> = alpha[..m].iter().zip(sigma_values).map(|(&a, &s)| phi_bar(s, x) * a / (root * s)).collect();
    Ok(pairwise_sum(&terms))
}

/// `F_n` tabulated on a (t, x) grid; `values[i][k]` belongs to `(t_grid[i], x_grid[k])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalField {
    pub t_grid: Vec<f64>,
    pub x_grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

pub fn empirical_field(
    series: &IncrementSeries,
    use_alpha: bool,
    t_grid: &[f64],
    x_grid: &[f64],
) -> Result<EmpiricalField> {
    if t_grid.windows(2).any(|w| w[1] <= w[0]) || x_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::BadParam("field grids must be increasing".into()));
    }
    let values = t_grid
        .iter()
        .map(|&t| x_grid.iter().map(|&x| empirical_cdf(series, use_alpha, t, x)).collect())
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(EmpiricalField { t_grid: t_grid.to_vec(), x_grid: x_grid.to_vec(), values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{gini_even, sum_of_squares, KernelClaims, Smoothness};
    use std::sync::Arc;

    fn constant_one(order: usize) -> Kernel {
        Kernel::new(
            "one",
            order,
            Arc::new(|_: &[f64]| 1.0),
            KernelClaims {
                symmetric: true,
                even_each_coordinate: true,
                growth_degree: 0.0,
                smoothness: Smoothness::C1,
                homogeneity: Some(0.0),
            },
        )
        .unwrap()
    }

    fn series(xs: &[f64]) -> IncrementSeries {
        IncrementSeries::from_scaled(xs.len(), xs.to_vec())
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), 10.0);
        assert_eq!(binomial(4000, 3), 10_658_668_000.0);
        assert_eq!(binomial(3, 4), 0.0);
        assert_eq!(binomial(7, 0), 1.0);
    }

    #[test]
    fn sum_of_squares_example() {
        let s = series(&[1.0, 2.0]);
        let w = EvaluationWindow::new(1.0, 2, 2).unwrap();
        assert_eq!(u_statistic(&sum_of_squares(), &s, &w).unwrap(), 5.0);
    }

    #[test]
    fn constant_kernel_counts_tuples() {
        let xs: Vec<f64> = (0..9).map(|i| i as f64 * 0.3 - 1.0).collect();
        let s = series(&xs);
        for d in 1..=4 {
            let w = EvaluationWindow::new(1.0, 9, d).unwrap();
            assert!((u_statistic(&constant_one(d), &s, &w).unwrap() - 1.0).abs() < 1e-15);
        }
        // normalizer stays C(n, d) for t < T
        let w = EvaluationWindow::new(5.0 / 9.0, 9, 2).unwrap();
        let v = u_statistic(&constant_one(2), &s, &w).unwrap();
        assert!((v - 10.0 / 36.0).abs() < 1e-15);
    }

    #[test]
    fn window_errors() {
        assert!(matches!(EvaluationWindow::new(0.1, 10, 2), Err(Error::WindowTooShort { .. })));
        let s = series(&[1.0, 2.0, 3.0]);
        let w = EvaluationWindow::new(1.0, 4, 2).unwrap();
        assert!(u_statistic(&sum_of_squares(), &s, &w).is_err());
        let w = EvaluationWindow::new(1.0, 3, 3).unwrap();
        assert!(u_statistic(&sum_of_squares(), &s, &w).is_err());
    }

    #[test]
    fn guard_blocks_large_enumeration() {
        let xs = vec![0.5; 40];
        let s = series(&xs);
        let w = EvaluationWindow::new(1.0, 40, 3).unwrap();
        let tight = EngineConfig { max_enumeration_n: 20, allow_large: false };
        assert!(matches!(u_statistic_with(&constant_one(3), &s, &w, &tight), Err(Error::EnumerationGuard { .. })));
        let lifted = EngineConfig { allow_large: true, ..tight };
        assert!((u_statistic_with(&constant_one(3), &s, &w, &lifted).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn path_ends_at_full_statistic() {
        let xs: Vec<f64> = (0..300).map(|i| ((i * 7919) % 613) as f64 / 200.0 - 1.5).collect();
        let s = series(&xs);
        let h = gini_even();
        let path = u_statistic_path(&h, &s).unwrap();
        assert_eq!(path.values.len(), 299);
        let full = u_statistic(&h, &s, &EvaluationWindow::new(1.0, 300, 2).unwrap()).unwrap();
        assert!((path.values.last().unwrap() - full).abs() < 1e-10 * full);
        assert!(path.values.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(path.at(1.0 / 300.0), None);
        assert_eq!(path.at(2.0 / 300.0), Some(path.values[0]));
    }

    #[test]
    fn row_stats_agree_with_direct_sums() {
        let xs = [0.3, -1.2, 2.0, 0.7, -0.4, 1.1];
        let h = sum_of_squares();
        let g = gini_even();
        let st = row_stats(&[&h, &g], &xs);
        for k in 0..xs.len() {
            let mut row = 0.0;
            let mut lower = 0.0;
            let mut sq = 0.0;
            for a in 0..xs.len() {
                if a != k {
                    row += g.eval(&[xs[k], xs[a]]);
                    sq += h.eval(&[xs[k], xs[a]]) * g.eval(&[xs[k], xs[a]]);
                }
                if a < k {
                    lower += g.eval(&[xs[k], xs[a]]);
                }
            }
            assert!((st.row[1][k] - row).abs() < 1e-12);
            assert!((st.lower[1][k] - lower).abs() < 1e-12);
            assert!((st.sq[1][k] - sq).abs() < 1e-12);
            assert!((st.sq[2][k] - sq).abs() < 1e-12);
            if k + 1 < xs.len() {
                let cross: f64 = xs.iter().map(|&a| h.eval(&[xs[k], a]) * g.eval(&[xs[k + 1], a])).sum();
                assert!((st.cross[1][k] - cross).abs() < 1e-12);
            }
        }
        assert_eq!(st.cross[0].len(), xs.len() - 1);
    }

    #[test]
    fn cdf_bounds() {
        let s = series(&[-1.0, 0.5, 2.0, 0.0]);
        assert_eq!(empirical_cdf(&s, false, 1.0, 10.0).unwrap(), 1.0);
        assert_eq!(empirical_cdf(&s, false, 0.5, 10.0).unwrap(), 0.5);
        assert_eq!(empirical_cdf(&s, false, 1.0, -5.0).unwrap(), 0.0);
        assert_eq!(empirical_cdf(&s, false, 1.0, 0.0).unwrap(), 0.5);
        assert_eq!(empirical_cdf(&s, true, 1.0, 0.0), Err(Error::AlphaUnavailable));
    }

    #[test]
    fn process_single_increment() {
        let mut s = series(&[0.3, 0.1, 0.2, 0.4]);
        s.alpha = Some(vec![0.3, 0.1, 0.2, 0.4]);
        let sig = [1.0; 4];
        let v = empirical_process(&s, &sig, 0.25, 0.0).unwrap();
        assert!((v + 0.5 / 2.0).abs() < 1e-15);
        assert!(empirical_process(&s, &sig, 1.0, -1e9).unwrap().abs() < 1e-15);
        assert!(empirical_process(&s, &sig[..2], 1.0, 0.0).is_err());
        let drift = empirical_process_drift(&s, &sig, 0.25, 0.0).unwrap();
        assert!((drift + crate::limit::std_normal_pdf(0.0) * 0.3 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn field_monotone_in_x() {
        let xs: Vec<f64> = (0..50).map(|i| ((i * 37) % 17) as f64 - 8.0).collect();
        let s = series(&xs);
        let f = empirical_field(&s, false, &[0.2, 0.6, 1.0], &[-5.0, -1.0, 0.0, 3.0]).unwrap();
        for row in &f.values {
            assert!(row.windows(2).all(|w| w[1] >= w[0]));
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
