//! WebAssembly bindings for the demo page in `www/`. Each export takes plain
//! numbers and returns a JSON string; the `*_json` functions behind them are
//! ordinary Rust and are what the tests exercise.

use maxloc::argmax::scan_tilted;
use maxloc::estimate::{estimate_m_curve, par_replicates, McEstimate};
use maxloc::{scan_max, DriftFn, ProcessSpec, SeedSpec, TiltKind};
use serde_json::json;
use wasm_bindgen::prelude::*;

const MAX_STEPS: usize = 1 << 16;
const MAX_REPLICATES: usize = 200_000;

fn process(kind: &str, extent: f64, n_steps: usize) -> Result<ProcessSpec, String> {
    if n_steps == 0 || n_steps > MAX_STEPS {
        return Err(format!("n_steps must lie in 1..={MAX_STEPS}"));
    }
    let spec = match kind {
        "brownian" => ProcessSpec::brownian(extent, n_steps),
        "brownian_minus_parabola" => ProcessSpec::brownian_minus_parabola(extent, n_steps),
        "ou_minus_parabola" => {
            ProcessSpec::ou_minus_parabola(extent, 1.0, std::f64::consts::SQRT_2, n_steps)
        }
        "flat" => ProcessSpec::deterministic(DriftFn::Zero, 0.0, extent, n_steps),
        other => return Err(format!("unknown process {other:?}")),
    };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

fn check_reps(n_rep: usize) -> Result<(), String> {
    if (2..=MAX_REPLICATES).contains(&n_rep) {
        Ok(())
    } else {
        Err(format!("n_rep must lie in 2..={MAX_REPLICATES}"))
    }
}

/// One path `X + a z` with its maximum and extreme maximizers.
pub fn sample_path_json(
    kind: &str,
    extent: f64,
    n_steps: usize,
    tilt: f64,
    seed: u64,
) -> Result<String, String> {
    let spec = process(kind, extent, n_steps)?;
    let grid = spec.validate().map_err(|e| e.to_string())?;
    let r = spec
        .sample_on(&grid, &SeedSpec::new(seed, 0))
        .map_err(|e| e.to_string())?;
    let times = grid.nodes();
    let m = scan_tilted(&r.path, &times, tilt);
    let values: Vec<f64> = r
        .path
        .values()
        .iter()
        .zip(&times)
        .map(|(x, z)| x + tilt * z)
        .collect();
    Ok(json!({
        "times": times,
        "values": values,
        "max": m.max,
        "z1": m.z1,
        "z2": m.z2,
    })
    .to_string())
}

/// `m(a) = E max(X + a z)` on `n_points` values of `a` in `[-a_max, a_max]`,
/// with the paired increments `m(a) - m(0)`.
pub fn m_curve_json(
    kind: &str,
    extent: f64,
    n_steps: usize,
    a_max: f64,
    n_points: usize,
    n_rep: usize,
    seed: u64,
) -> Result<String, String> {
    let spec = process(kind, extent, n_steps)?;
    check_reps(n_rep)?;
    if !(a_max > 0.0 && a_max.is_finite()) || !(1..=50).contains(&n_points) {
        return Err("need a_max > 0 and 1 <= n_points <= 50".into());
    }
    let mut a: Vec<f64> = (-(n_points as i64)..=n_points as i64)
        .map(|j| a_max * j as f64 / n_points as f64)
        .collect();
    a[n_points] = 0.0;
    let curve =
        estimate_m_curve(&spec, &TiltKind::Linear, &a, n_rep, seed).map_err(|e| e.to_string())?;
    let increments = (0..a.len())
        .map(|j| curve.increment(j))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Ok(json!({
        "a": a,
        "mean": curve.estimates.iter().map(|e| e.mean).collect::<Vec<_>>(),
        "stderr": curve.estimates.iter().map(|e| e.stderr).collect::<Vec<_>>(),
        "increment": increments.iter().map(|e| e.mean).collect::<Vec<_>>(),
        "increment_stderr": increments.iter().map(|e| e.stderr).collect::<Vec<_>>(),
    })
    .to_string())
}

/// Histogram of the leftmost maximizer, with `E Z`, `E Z^2` and `E M / 3`.
pub fn argmax_histogram_json(
    kind: &str,
    extent: f64,
    n_steps: usize,
    n_rep: usize,
    bins: usize,
    seed: u64,
) -> Result<String, String> {
    let spec = process(kind, extent, n_steps)?;
    check_reps(n_rep)?;
    if !(1..=400).contains(&bins) {
        return Err("bins must lie in 1..=400".into());
    }
    let grid = spec.validate().map_err(|e| e.to_string())?;
    let rows = par_replicates(n_rep, |k| {
        let r = spec.sample_on(&grid, &SeedSpec::new(seed, k))?;
        let m = scan_max(&r.path);
        Ok((m.z1, m.max))
    })
    .map_err(|e| e.to_string())?;
    let (lo, hi) = (grid.t_start(), grid.t_end());
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for (z, _) in &rows {
        let b = (((z - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let est = |f: &dyn Fn(&(f64, f64)) -> f64| {
        let v: Vec<f64> = rows.iter().map(f).collect();
        McEstimate::from_samples(&v).map_err(|e| e.to_string())
    };
    let ez = est(&|r| r.0)?;
    let ez2 = est(&|r| r.0 * r.0)?;
    let em3 = est(&|r| r.1 / 3.0)?;
    Ok(json!({
        "edges": (0..=bins).map(|j| lo + j as f64 * width).collect::<Vec<_>>(),
        "counts": counts,
        "mean_argmax": [ez.mean, ez.stderr],
        "mean_argmax_sq": [ez2.mean, ez2.stderr],
        "mean_max_over_3": [em3.mean, em3.stderr],
    })
    .to_string())
}

fn to_js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn sample_path(
    kind: &str,
    extent: f64,
    n_steps: u32,
    tilt: f64,
    seed: u32,
) -> Result<String, JsValue> {
    to_js(sample_path_json(
        kind,
        extent,
        n_steps as usize,
        tilt,
        seed as u64,
    ))
}

#[wasm_bindgen]
pub fn m_curve(
    kind: &str,
    extent: f64,
    n_steps: u32,
    a_max: f64,
    n_points: u32,
    n_rep: u32,
    seed: u32,
) -> Result<String, JsValue> {
    to_js(m_curve_json(
        kind,
        extent,
        n_steps as usize,
        a_max,
        n_points as usize,
        n_rep as usize,
        seed as u64,
    ))
}

#[wasm_bindgen]
pub fn argmax_histogram(
    kind: &str,
    extent: f64,
    n_steps: u32,
    n_rep: u32,
    bins: u32,
    seed: u32,
) -> Result<String, JsValue> {
    to_js(argmax_histogram_json(
        kind,
        extent,
        n_steps as usize,
        n_rep as usize,
        bins as usize,
        seed as u64,
    ))
}
