//! Replicated Monte Carlo experiments over simulated paths.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::apps::{gini, lp_test, wilcoxon, Decision, DEFAULT_DELTA, DEFAULT_GAMMA};
use crate::error::{Error, Result};
use crate::kernel::{builtin, Kernel, KernelSpec};
use crate::limit::{limit_cdf, limit_u, std_normal_cdf, QuadratureRule, VolatilityPath};
use crate::sim::{increments, simulate_path, ModelSpec, SamplePath};
use crate::summation::{mean, pairwise_sum};
use crate::ustat::{empirical_cdf, empirical_process, empirical_process_drift, u_statistic, EvaluationWindow};
use crate::varest::{standardized_statistic, LimitSource};

/// Default ceiling on `M × max(n)²` kernel evaluations.
pub const DEFAULT_BUDGET: f64 = 1e10;
/// Fewest samples for which a KS distance is reported.
pub const MIN_KS_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// `U(H)ₜⁿ − U(H)ₜ`.
    Lln,
    /// The standardized statistic.
    FeasibleClt,
    /// `Sₙ` of the Lᵖ test, summarized by rejection frequency.
    Level,
    Power,
    /// Wilcoxon `t̂ₙ`, with the sup-statistic as auxiliary value.
    Changepoint,
    /// `Fₙ(t, x) − F(t, x)`.
    FnDiag,
    /// `𝔾ₙ(t, x)` minus its W-driven part; the raw value is auxiliary.
    GnDiag,
    /// Gini estimate minus `MD_t`, flagged when the interval covers `MD_t`.
    GiniCoverage,
}

fn default_t() -> f64 {
    1.0
}
fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_substeps() -> usize {
    1
}
fn default_budget() -> f64 {
    DEFAULT_BUDGET
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub ks_max: Option<f64>,
    pub median_abs_max: Option<f64>,
    pub rejection_min: Option<f64>,
    pub rejection_max: Option<f64>,
    pub coverage_min: Option<f64>,
    pub coverage_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub model: ModelSpec,
    #[serde(flatten)]
    pub kernel: KernelSpec,
    pub n: Vec<usize>,
    pub replications: usize,
    pub seed_base: u64,
    pub target: Target,
    #[serde(default = "default_t")]
    pub t: f64,
    #[serde(default)]
    pub x: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default = "default_budget")]
    pub budget: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl Experiment {
    pub fn new(
        model: ModelSpec,
        kernel: KernelSpec,
        n: Vec<usize>,
        replications: usize,
        seed_base: u64,
        target: Target,
    ) -> Self {
        Self {
            model,
            kernel,
            n,
            replications,
            seed_base,
            target,
            t: default_t(),
            x: 0.0,
            gamma: default_gamma(),
            delta: default_delta(),
            substeps: default_substeps(),
            budget: default_budget(),
            tolerances: Tolerances::default(),
        }
    }

    fn validate(&self, order: usize) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::BadParam("replications must be at least 1".into()));
        }
        if self.n.is_empty() {
            return Err(Error::BadParam("n list is empty".into()));
        }
        if let Some(&bad) = self.n.iter().find(|&&n| n < 2 * order) {
            return Err(Error::BadParam(format!("n = {bad} is below 2d = {}", 2 * order)));
        }
        let max_n = *self.n.iter().max().expect("nonempty") as f64;
        let needed = self.replications as f64 * max_n * max_n;
        if needed > self.budget {
            return Err(Error::BudgetExceeded { needed, ceiling: self.budget });
        }
        Ok(())
    }

    /// Seed of replication `r`.
    pub fn seed(&self, r: usize) -> u64 {
        self.seed_base.wrapping_add(r as u64)
    }
}

/// The volatility path of a model with deterministic σ, exactly.
pub fn analytic_volatility(model: &ModelSpec, horizon: f64) -> Option<Result<VolatilityPath>> {
    match model {
        ModelSpec::Constant { sigma, .. } => Some(VolatilityPath::constant(*sigma, horizon)),
        ModelSpec::PiecewiseConstant { breaks, sigmas, .. } => {
            let inside: Vec<f64> = breaks.iter().copied().filter(|&b| b < horizon).collect();
            Some(VolatilityPath::piecewise(&inside, &sigmas[..=inside.len()], horizon))
        }
        _ => None,
    }
}

/// Volatility for limits along one simulated path: exact when σ is
/// deterministic, the path's own left-endpoint values otherwise.
pub fn path_volatility(model: &ModelSpec, path: &SamplePath) -> Result<VolatilityPath> {
    match analytic_volatility(model, path.horizon()) {
        Some(v) => v,
        None => VolatilityPath::from_path(path),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub seed: u64,
    pub value: f64,
    pub aux: Option<f64>,
    /// Rejection, coverage or variance-floor flag, depending on the target.
    pub flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub variance: f64,
    pub median: f64,
    pub median_abs: f64,
    pub median_aux: Option<f64>,
    pub ks_distance: Option<f64>,
    pub rejection_frequency: Option<f64>,
    pub coverage: Option<f64>,
    pub floored_frequency: Option<f64>,
    pub passed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NResult {
    pub n: usize,
    pub summary: Summary,
    pub replications: Vec<Replication>,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub experiment: Experiment,
    pub results: Vec<NResult>,
    pub seeds: [u64; 2],
    pub warnings: Vec<String>,
    pub runtime_seconds: f64,
}

impl McReport {
    /// JSON with the runtime zeroed, identical across runs and thread counts.
    pub fn stable_json(&self) -> String {
        let mut copy = self.clone();
        copy.runtime_seconds = 0.0;
        serde_json::to_string_pretty(&copy).expect("report serializes")
    }
}

/// Kolmogorov–Smirnov distance of the samples from N(0, 1).
pub fn ks_distance(samples: &[f64]) -> Result<f64> {
    let m = samples.len();
    if m < MIN_KS_SAMPLES {
        return Err(Error::TooFewSamples { got: m, need: MIN_KS_SAMPLES });
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let mf = m as f64;
    let mut d = 0.0f64;
    for (i, &x) in s.iter().enumerate() {
        let f = std_normal_cdf(x);
        d = d.max((i + 1) as f64 / mf - f).max(f - i as f64 / mf);
    }
    Ok(d)
}

fn median(sorted: &[f64]) -> f64 {
    let m = sorted.len();
    if m == 0 {
        return f64::NAN;
    }
    if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    }
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn summarize(exp: &Experiment, reps: &[Replication], warnings: &mut Vec<String>, n: usize) -> Summary {
    let values: Vec<f64> = reps.iter().map(|r| r.value).collect();
    let count = values.len();
    let mu = mean(&values);
    let variance = if count > 1 {
        pairwise_sum(&values.iter().map(|v| (v - mu) * (v - mu)).collect::<Vec<_>>()) / (count - 1) as f64
    } else {
        f64::NAN
    };
    let med = median(&sorted(values.clone()));
    let median_abs = median(&sorted(values.iter().map(|v| v.abs()).collect()));
    let aux: Vec<f64> = reps.iter().filter_map(|r| r.aux).collect();
    let median_aux = (!aux.is_empty()).then(|| median(&sorted(aux)));
    let flag_freq = (count > 0).then(|| reps.iter().filter(|r| r.flag).count() as f64 / count as f64);
    let ks_distance = match exp.target {
        Target::FeasibleClt => match ks_distance(&values) {
            Ok(d) => Some(d),
            Err(_) => {
                warnings.push(format!("n = {n}: KS distance undefined with {count} samples"));
                None
            }
        },
        _ => None,
    };
    let (rejection_frequency, coverage, floored_frequency) = match exp.target {
        Target::Level | Target::Power => (flag_freq, None, None),
        Target::GiniCoverage => (None, flag_freq, None),
        Target::FeasibleClt => (None, None, flag_freq),
        _ => (None, None, None),
    };
    let tol = &exp.tolerances;
    let checks: Vec<bool> = [
        tol.ks_max.map(|m| ks_distance.is_some_and(|d| d < m)),
        tol.median_abs_max.map(|m| median_abs < m),
        tol.rejection_min.map(|m| rejection_frequency.is_some_and(|r| r >= m)),
        tol.rejection_max.map(|m| rejection_frequency.is_some_and(|r| r <= m)),
        tol.coverage_min.map(|m| coverage.is_some_and(|c| c >= m)),
        tol.coverage_max.map(|m| coverage.is_some_and(|c| c <= m)),
    ]
    .into_iter()
    .flatten()
    .collect();
    let passed = (!checks.is_empty()).then(|| checks.iter().all(|&c| c));
    Summary {
        count,
        mean: mu,
        std_dev: variance.sqrt(),
        variance,
        median: med,
        median_abs,
        median_aux,
        ks_distance,
        rejection_frequency,
        coverage,
        floored_frequency,
        passed,
    }
}

fn replicate(exp: &Experiment, kernel: &Kernel, n: usize, seed: u64) -> Result<Replication> {
    let spec = exp.model.process(1.0)?.with_substeps(exp.substeps);
    let path = simulate_path(&spec, n, seed)?;
    let needs_alpha = matches!(exp.target, Target::FnDiag | Target::GnDiag);
    let series = increments(&path, needs_alpha)?;
    let rule = QuadratureRule::default();
    let rep = |value: f64, aux: Option<f64>, flag: bool| Replication { seed, value, aux, flag };
    match exp.target {
        Target::Lln => {
            let w = EvaluationWindow::new(exp.t, n, kernel.order())?;
            let vol = path_volatility(&exp.model, &path)?;
            let u = u_statistic(kernel, &series, &w)?;
            Ok(rep(u - limit_u(kernel, &vol, exp.t, &rule)?, Some(u), false))
        }
        Target::FeasibleClt => {
            let w = EvaluationWindow::new(exp.t, n, kernel.order())?;
            let vol = path_volatility(&exp.model, &path)?;
            let z = standardized_statistic(kernel, &series, &w, &LimitSource::Volatility(vol, rule))?;
            Ok(rep(z.statistic, Some(z.variance.v), z.floored()))
        }
        Target::Level | Target::Power => {
            let p = exp.kernel.p.unwrap_or(2.0);
            let (report, state) = lp_test(&series, p, exp.gamma)?;
            Ok(rep(report.statistic, Some(state.mn2), report.decision == Decision::Reject))
        }
        Target::Changepoint => {
            let (_, state) = wilcoxon(&series, exp.delta, None)?;
            Ok(rep(state.t_hat, Some(state.sup_stat), false))
        }
        Target::FnDiag => {
            let vol = path_volatility(&exp.model, &path)?;
            let f = empirical_cdf(&series, true, exp.t, exp.x)?;
            Ok(rep(f - limit_cdf(&vol, exp.t, exp.x)?, Some(f), false))
        }
        Target::GnDiag => {
            let sig = path.sigma_values.as_deref().ok_or(Error::VolatilityUnavailable)?;
            let g = empirical_process(&series, sig, exp.t, exp.x)?;
            let drift = empirical_process_drift(&series, sig, exp.t, exp.x)?;
            Ok(rep(g - drift, Some(g), false))
        }
        Target::GiniCoverage => {
            let w = EvaluationWindow::new(exp.t, n, 2)?;
            let vol = path_volatility(&exp.model, &path)?;
            let report = gini(&series, &w, Some(&vol), exp.gamma)?;
            let md = report.oracle.as_ref().map(|o| o.value).expect("oracle requested");
            let [lo, hi] = report.confidence_interval.expect("gini reports an interval");
            Ok(rep(report.statistic - md, report.std_error, lo <= md && md <= hi))
        }
    }
}

/// Run every replication for every n. Replications run in parallel; results
/// are collected in replication order, so the report does not depend on the
/// number of worker threads.
pub fn run(exp: &Experiment) -> Result<McReport> {
    let start = Instant::now();
    let kernel = match exp.target {
        Target::GiniCoverage => crate::kernel::gini_even(),
        Target::Level | Target::Power => crate::kernel::lp_power(exp.kernel.p.unwrap_or(2.0))?,
        _ => builtin(&exp.kernel)?,
    };
    exp.validate(kernel.order())?;
    let mut warnings = Vec::new();
    let mut results = Vec::with_capacity(exp.n.len());
    for &n in &exp.n {
        let outcomes: Vec<std::result::Result<Replication, Failure>> = (0..exp.replications)
            .into_par_iter()
            .map(|r| {
                let seed = exp.seed(r);
                replicate(exp, &kernel, n, seed).map_err(|e| Failure { seed, error: e.to_string() })
            })
            .collect();
        let mut reps = Vec::with_capacity(outcomes.len());
        let mut failures = Vec::new();
        for o in outcomes {
            match o {
                Ok(r) => reps.push(r),
                Err(f) => failures.push(f),
            }
        }
        if !failures.is_empty() {
            warnings.push(format!("n = {n}: {} replications failed", failures.len()));
        }
        let summary = summarize(exp, &reps, &mut warnings, n);
        results.push(NResult { n, summary, replications: reps, failures });
    }
    Ok(McReport {
        experiment: exp.clone(),
        results,
        seeds: [exp.seed(0), exp.seed(exp.replications - 1)],
        warnings,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Per-replication values as CSV: `n,seed,value,aux,flag`.
pub fn write_samples_csv<W: Write>(report: &McReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "n,seed,value,aux,flag")?;
    for res in &report.results {
        for r in &res.replications {
            let aux = r.aux.map(|a| format!("{a:.17e}")).unwrap_or_default();
            writeln!(out, "{},{},{:.17e},{},{}", res.n, r.seed, r.value, aux, r.flag)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limit::std_normal_quantile;

    #[test]
    fn ks_on_plotting_positions() {
        let m = 200;
        let s: Vec<f64> = (1..=m).map(|i| std_normal_quantile((i as f64 - 0.5) / m as f64)).collect();
        assert!((ks_distance(&s).unwrap() - 0.5 / m as f64).abs() < 1e-12);
        assert!((ks_distance(&[0.0; 30]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(ks_distance(&[0.0; 19]), Err(Error::TooFewSamples { got: 19, need: 20 })));
    }

    #[test]
    fn budget_guard() {
        let mut exp = Experiment::new(
            ModelSpec::Constant { sigma: 1.0, drift: 0.0 },
            KernelSpec::named("sum_of_squares"),
            vec![100_000],
            2,
            0,
            Target::Lln,
        );
        assert!(matches!(run(&exp), Err(Error::BudgetExceeded { .. })));
        exp.n = vec![3];
        assert!(matches!(run(&exp), Err(Error::BadParam(_))));
    }

    #[test]
    fn single_replication_flags_ks() {
        let exp = Experiment::new(
            ModelSpec::Constant { sigma: 1.0, drift: 0.0 },
            KernelSpec::named("sum_of_squares"),
            vec![50],
            1,
            7,
            Target::FeasibleClt,
        );
        let rep = run(&exp).unwrap();
        assert_eq!(rep.results[0].replications.len(), 1);
        assert!(rep.results[0].summary.ks_distance.is_none());
        assert_eq!(rep.warnings.len(), 1);
        assert_eq!(rep.seeds, [7, 7]);
    }

    #[test]
    fn analytic_volatility_truncates_breaks() {
        let m = ModelSpec::PiecewiseConstant { breaks: vec![0.3, 0.8], sigmas: vec![1.0, 2.0, 3.0], drift: 0.0 };
        let v = analytic_volatility(&m, 0.5).unwrap().unwrap();
        assert_eq!(v.values(), &[1.0, 2.0]);
        assert!(analytic_volatility(&ModelSpec::GbmVol { sigma0: 1.0, xi: 0.1, rho: 1.0, drift: 0.0 }, 1.0).is_none());
    }
}
