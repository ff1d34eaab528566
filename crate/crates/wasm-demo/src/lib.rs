//! Browser bindings for three operations of `hfu-core`. Each returns a JSON
//! string; the page in `www/` parses and plots it.

use hfu_core::apps::{gini, wilcoxon};
use hfu_core::kernel::gini_even;
use hfu_core::limit::{limit_cdf, limit_u, wilcoxon_limit, QuadratureRule, VolatilityPath};
use hfu_core::mc::path_volatility;
use hfu_core::sim::{increments, simulate_path, ModelSpec, SamplePath};
use hfu_core::ustat::EvaluationWindow;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Points kept per plotted curve.
const PLOT_POINTS: usize = 400;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn stride(len: usize) -> usize {
    len.div_ceil(PLOT_POINTS).max(1)
}

fn thin(xs: &[f64]) -> Vec<f64> {
    let s = stride(xs.len());
    let mut out: Vec<f64> = xs.iter().step_by(s).copied().collect();
    if !(xs.len() - 1).is_multiple_of(s) {
        out.push(*xs.last().expect("nonempty"));
    }
    out
}

fn simulate(model: &ModelSpec, n: usize, seed: u64) -> Result<SamplePath, String> {
    let spec = model.process(1.0).map_err(err)?;
    simulate_path(&spec, n, seed).map_err(err)
}

fn parse_model(model_json: &str) -> Result<ModelSpec, String> {
    serde_json::from_str(model_json).map_err(|e| format!("model: {e}"))
}

/// Wilcoxon change point on a path whose σ jumps at `break_at`.
pub fn change_point(
    n: usize,
    break_at: f64,
    sigma_before: f64,
    sigma_after: f64,
    seed: u64,
    delta: f64,
) -> Result<Value, String> {
    let model = if break_at > 0.0 && break_at < 1.0 {
        ModelSpec::PiecewiseConstant { breaks: vec![break_at], sigmas: vec![sigma_before, sigma_after], drift: 0.0 }
    } else {
        ModelSpec::Constant { sigma: sigma_before, drift: 0.0 }
    };
    let path = simulate(&model, n, seed)?;
    let vol = path_volatility(&model, &path).map_err(err)?;
    let series = increments(&path, false).map_err(err)?;
    let (report, state) = wilcoxon(&series, delta, Some(&vol)).map_err(err)?;
    let times = thin(&state.times);
    let limit: Vec<f64> = times
        .iter()
        .map(|&t| if t > 0.0 && t < 1.0 { wilcoxon_limit(&vol, t).unwrap_or(f64::NAN) } else { 0.0 })
        .collect();
    let h0_curve: Vec<f64> = times.iter().map(|t| 0.5 * t * (1.0 - t)).collect();
    Ok(json!({
        "times": times,
        "wl_path": thin(&state.wl_path),
        "limit": limit,
        "null_curve": h0_curve,
        "x": thin(&path.x_values),
        "t_hat": state.t_hat,
        "sup_stat": state.sup_stat,
        "report": report,
    }))
}

/// Gini mean difference on `[0, t]` with its confidence interval and the
/// theoretical value for the simulated volatility.
pub fn gini_interval(model_json: &str, n: usize, seed: u64, t: f64, gamma: f64) -> Result<Value, String> {
    let model = parse_model(model_json)?;
    let path = simulate(&model, n, seed)?;
    let vol = path_volatility(&model, &path).map_err(err)?;
    let series = increments(&path, false).map_err(err)?;
    let window = EvaluationWindow::new(t, n, 2).map_err(err)?;
    let report = gini(&series, &window, Some(&vol), gamma).map_err(err)?;
    Ok(json!({ "report": report, "sigma": thin(vol.values()), "x": thin(&path.x_values) }))
}

/// Limits along `t ∈ [0, 1]`: the Gini mean difference `MD_t`, the Wilcoxon
/// curve `WL_t` and `F(t, x)`.
pub fn limit_curves(model_json: &str, n: usize, seed: u64, x: f64, points: usize) -> Result<Value, String> {
    let model = parse_model(model_json)?;
    let vol = match hfu_core::mc::analytic_volatility(&model, 1.0) {
        Some(v) => v.map_err(err)?,
        None => VolatilityPath::from_path(&simulate(&model, n, seed)?).map_err(err)?,
    };
    let points = points.clamp(2, 200);
    let h = gini_even();
    let rule = QuadratureRule::default();
    let mut out = json!({ "t": [], "md": [], "wl": [], "cdf": [] });
    for k in 0..=points {
        let t = k as f64 / points as f64;
        let wl = if t > 0.0 && t < 1.0 { wilcoxon_limit(&vol, t).map_err(err)? } else { 0.0 };
        out["t"].as_array_mut().expect("array").push(t.into());
        out["md"].as_array_mut().expect("array").push(limit_u(&h, &vol, t, &rule).map_err(err)?.into());
        out["wl"].as_array_mut().expect("array").push(wl.into());
        out["cdf"].as_array_mut().expect("array").push(limit_cdf(&vol, t, x).map_err(err)?.into());
    }
    out["sigma"] = json!(thin(vol.values()));
    Ok(out)
}

fn to_js(v: Result<Value, String>) -> Result<String, JsError> {
    v.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = changePoint)]
pub fn change_point_js(
    n: u32,
    break_at: f64,
    sigma_before: f64,
    sigma_after: f64,
    seed: u32,
    delta: f64,
) -> Result<String, JsError> {
    to_js(change_point(n as usize, break_at, sigma_before, sigma_after, seed as u64, delta))
}

#[wasm_bindgen(js_name = giniInterval)]
pub fn gini_interval_js(model_json: &str, n: u32, seed: u32, t: f64, gamma: f64) -> Result<String, JsError> {
    to_js(gini_interval(model_json, n as usize, seed as u64, t, gamma))
}

#[wasm_bindgen(js_name = limitCurves)]
pub fn limit_curves_js(model_json: &str, n: u32, seed: u32, x: f64, points: u32) -> Result<String, JsError> {
    to_js(limit_curves(model_json, n as usize, seed as u64, x, points as usize))
}
