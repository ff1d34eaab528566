use std::path::Path;

use hfu_core::apps::{self, gini, lp_test, wilcoxon, Decision, OracleBlock, ReportInputs, TestReport};
use hfu_core::kernel::{builtin, KernelSpec};
use hfu_core::limit::{limit_cdf, limit_u, std_normal_quantile, wilcoxon_limit, QuadratureRule, VolatilityPath};
use hfu_core::mc::{self, analytic_volatility, path_volatility, write_samples_csv, Experiment};
use hfu_core::sim::{increments, ingest_path, simulate_path, IncrementSeries, ModelSpec, SamplePath};
use hfu_core::ustat::{u_statistic, EvaluationWindow};
use hfu_core::varest::{analytic_variance, variance_estimate, AnalyticVariance};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{read_toml, Command, McArgs, RunConfig, Stat};
use crate::{csvio, CliError};

pub fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Simulate(a) => simulate(&RunConfig::resolve(&a, "simulate")?),
        Command::Analyze(a) => analyze(&RunConfig::resolve(&a, "analyze")?),
        Command::Mc(a) => run_mc(&a),
        Command::Limits(a) => limits(&RunConfig::resolve(&a, "limits")?),
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("output serializes");
    match out {
        Some(p) => std::fs::write(p, text + "\n")
            .map_err(|e| CliError::compute("Io", format!("cannot write {}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn need_model(cfg: &RunConfig) -> Result<&ModelSpec, CliError> {
    cfg.model.as_ref().ok_or_else(|| CliError::config("Config", "a model is required (--model or [model])".into()))
}

fn need_n(cfg: &RunConfig) -> Result<usize, CliError> {
    cfg.n.ok_or_else(|| CliError::config("IrregularGrid", "missing sampling frequency --n".into()))
}

fn simulated(cfg: &RunConfig) -> Result<(SamplePath, &ModelSpec), CliError> {
    let model = need_model(cfg)?;
    let n = need_n(cfg)?;
    let spec = model.process(cfg.horizon)?.with_substeps(cfg.substeps);
    Ok((simulate_path(&spec, n, cfg.seed)?, model))
}

#[derive(Serialize)]
struct SimulateOutput<'a> {
    model: &'a ModelSpec,
    n: usize,
    horizon: f64,
    seed: u64,
    substeps: usize,
    observations: usize,
    x_final: f64,
    realized_variance: f64,
    /// `∫σ²` by left-endpoint sums on the grid.
    integrated_variance: f64,
    csv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<&'a SamplePath>,
}

fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let (path, model) = simulated(cfg)?;
    if let Some(out) = &cfg.emit_csv {
        csvio::write_path(&path, out)?;
    }
    let dt = 1.0 / path.n as f64;
    let sig = path.sigma_values.as_deref().unwrap_or(&[]);
    let cells = path.increment_count().min(sig.len());
    let out = SimulateOutput {
        model,
        n: path.n,
        horizon: path.horizon(),
        seed: cfg.seed,
        substeps: cfg.substeps,
        observations: path.len(),
        x_final: *path.x_values.last().expect("nonempty path"),
        realized_variance: path.x_values.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum(),
        integrated_variance: sig[..cells].iter().map(|s| s * s * dt).sum(),
        csv: cfg.emit_csv.as_ref().map(|p| p.display().to_string()),
        path: cfg.full.then_some(&path),
    };
    emit(&out, cfg.output.as_deref())
}

struct Data {
    series: IncrementSeries,
    vol: Option<VolatilityPath>,
    label: String,
}

fn load(cfg: &RunConfig) -> Result<Data, CliError> {
    if let Some(input) = &cfg.input {
        let rows = csvio::read_rows(input)?;
        let path = ingest_path(&rows, cfg.n.unwrap_or(0))?;
        let label = input.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_else(|| "ingested".into());
        return Ok(Data { series: increments(&path, false)?, vol: None, label });
    }
    if cfg.model.is_none() {
        return Err(CliError::config("Config", "analyze needs --input or a model to simulate".into()));
    }
    let (path, model) = simulated(cfg)?;
    let vol = path_volatility(model, &path)?;
    let series = increments(&path, false)?;
    let label = series.source_label();
    Ok(Data { series, vol: Some(vol), label })
}

#[derive(Serialize)]
struct AnalyzeOutput {
    #[serde(flatten)]
    report: TestReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    details: Option<Value>,
}

fn kernel_spec(cfg: &RunConfig) -> Result<KernelSpec, CliError> {
    let name = cfg.kernel.clone().ok_or_else(|| CliError::config("Config", "--kernel is required".into()))?;
    Ok(KernelSpec { name, p: cfg.p, r: cfg.r })
}

fn u_report(cfg: &RunConfig, data: &Data) -> Result<AnalyzeOutput, CliError> {
    let h = builtin(&kernel_spec(cfg)?)?;
    let n = data.series.n;
    let w = EvaluationWindow::new(cfg.t, n, h.order())?;
    let statistic = u_statistic(&h, &data.series, &w)?;
    let mut warnings = Vec::new();
    let mut se = None;
    if h.is_even() {
        let v = variance_estimate(&h, &data.series, &w)?;
        if v.floored {
            warnings.push("variance estimate was floored; V1 - V2 was not positive".into());
        }
        se = Some((v.v / n as f64).sqrt());
    } else {
        warnings.push(format!("kernel `{}` is not even; no standard error", h.name()));
    }
    let oracle = match &data.vol {
        Some(v) => {
            Some(OracleBlock { quantity: "U_t".into(), value: limit_u(&h, v, cfg.t, &QuadratureRule::default())? })
        }
        None => None,
    };
    let details = match (se, &oracle) {
        (Some(se), Some(o)) => Some(json!({ "z": (statistic - o.value) / se })),
        _ => None,
    };
    let c = std_normal_quantile(1.0 - cfg.gamma / 2.0);
    Ok(AnalyzeOutput {
        report: TestReport {
            procedure: "u_statistic".into(),
            statistic,
            std_error: se,
            p_value: None,
            decision: Decision::EstimateOnly,
            gamma: cfg.gamma,
            confidence_interval: se.map(|s| [statistic - c * s, statistic + c * s]),
            warnings,
            inputs: ReportInputs { n, t: cfg.t, kernel: h.name().into(), source: data.label.clone() },
            oracle,
        },
        details,
    })
}

fn variance_report(cfg: &RunConfig, data: &Data) -> Result<AnalyzeOutput, CliError> {
    let h = builtin(&kernel_spec(cfg)?)?;
    let n = data.series.n;
    let w = EvaluationWindow::new(cfg.t, n, h.order())?;
    let v = variance_estimate(&h, &data.series, &w)?;
    let oracle = match &data.vol {
        Some(vol) => Some(OracleBlock {
            quantity: "V_t".into(),
            value: analytic_variance(&h, vol, cfg.t, &QuadratureRule::default())?.v,
        }),
        None => None,
    };
    let mut warnings = Vec::new();
    if v.floored {
        warnings.push("variance estimate was floored; V1 - V2 was not positive".into());
    }
    Ok(AnalyzeOutput {
        report: TestReport {
            procedure: "variance".into(),
            statistic: v.v,
            std_error: None,
            p_value: None,
            decision: Decision::EstimateOnly,
            gamma: cfg.gamma,
            confidence_interval: None,
            warnings,
            inputs: ReportInputs { n, t: cfg.t, kernel: h.name().into(), source: data.label.clone() },
            oracle,
        },
        details: Some(serde_json::to_value(v).expect("serializes")),
    })
}

fn analyze(cfg: &RunConfig) -> Result<(), CliError> {
    let stat = cfg.stat.ok_or_else(|| CliError::config("Config", "--stat is required".into()))?;
    let data = load(cfg)?;
    let mut out = match stat {
        Stat::U => u_report(cfg, &data)?,
        Stat::Variance => variance_report(cfg, &data)?,
        Stat::Gini => {
            let w = EvaluationWindow::new(cfg.t, data.series.n, 2)?;
            AnalyzeOutput { report: gini(&data.series, &w, data.vol.as_ref(), cfg.gamma)?, details: None }
        }
        Stat::Lp => {
            let (report, state) = lp_test(&data.series, cfg.p.unwrap_or(2.0), cfg.gamma)?;
            AnalyzeOutput { report, details: Some(serde_json::to_value(state).expect("serializes")) }
        }
        Stat::Wilcoxon => {
            let (mut report, state) = wilcoxon(&data.series, cfg.delta, data.vol.as_ref())?;
            if let Some(b) = cfg.permutations {
                report.p_value = Some(apps::wilcoxon_permutation_p_value(&data.series, cfg.delta, b, cfg.seed)?);
                report
                    .warnings
                    .push("p-value from permuting increments; heuristic under time-varying volatility".into());
            }
            let mut details = json!({ "t_hat": state.t_hat, "sup_stat": state.sup_stat, "delta": state.delta });
            if cfg.full {
                details["times"] = json!(state.times);
                details["wl_path"] = json!(state.wl_path);
            }
            AnalyzeOutput { report, details: Some(details) }
        }
    };
    out.report.inputs.source = data.label;
    emit(&out, cfg.output.as_deref())
}

fn run_mc(args: &McArgs) -> Result<(), CliError> {
    let mut exp: Experiment = read_toml(&args.config)?;
    if let Some(s) = args.seed_base {
        exp.seed_base = s;
    }
    if let Some(m) = args.replications {
        exp.replications = m;
    }
    let report = mc::run(&exp)?;
    if let Some(p) = &args.samples_csv {
        let file = std::fs::File::create(p)
            .map_err(|e| CliError::compute("Io", format!("cannot write {}: {e}", p.display())))?;
        write_samples_csv(&report, std::io::BufWriter::new(file))
            .map_err(|e| CliError::compute("Io", format!("cannot write {}: {e}", p.display())))?;
    }
    emit(&report, args.output.as_deref())
}

#[derive(Serialize)]
struct LimitsOutput<'a> {
    model: &'a ModelSpec,
    /// `analytic` for deterministic σ, `seed:<s>` when read off a simulated path.
    volatility: String,
    t: f64,
    kernel: String,
    limit_u: f64,
    analytic_variance: Option<AnalyticVariance>,
    wilcoxon_limit: Option<f64>,
    x: f64,
    limit_cdf: f64,
}

fn limits(cfg: &RunConfig) -> Result<(), CliError> {
    let model = need_model(cfg)?;
    let (vol, source) = match analytic_volatility(model, cfg.horizon) {
        Some(v) => (v?, "analytic".to_string()),
        None => {
            let (path, _) = simulated(cfg)?;
            (VolatilityPath::from_path(&path)?, format!("seed:{}", cfg.seed))
        }
    };
    let spec = match &cfg.kernel {
        Some(_) => kernel_spec(cfg)?,
        None => KernelSpec::named("sum_of_squares"),
    };
    let h = builtin(&spec)?;
    let rule = QuadratureRule::default();
    let unit = (vol.horizon() - 1.0).abs() < 1e-12;
    let out = LimitsOutput {
        model,
        volatility: source,
        t: cfg.t,
        kernel: h.name().into(),
        limit_u: limit_u(&h, &vol, cfg.t, &rule)?,
        analytic_variance: if h.is_even() { Some(analytic_variance(&h, &vol, cfg.t, &rule)?) } else { None },
        wilcoxon_limit: if unit && cfg.t > 0.0 && cfg.t < 1.0 { Some(wilcoxon_limit(&vol, cfg.t)?) } else { None },
        x: cfg.x,
        limit_cdf: limit_cdf(&vol, cfg.t, cfg.x)?,
    };
    emit(&out, cfg.output.as_deref())
}
