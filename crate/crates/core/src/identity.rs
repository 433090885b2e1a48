//! Named checks of the identities relating the location of the maximum to
//! the maximum itself. Each check is a pure function of its parameters and
//! [`RunSettings`], and yields one or more [`IdentityReport`]s.
//!
//! Statistical checks pair `lhs` and `rhs` on the same replicate and take the
//! standard error of the per-replicate difference. Pathwise checks compare
//! every replicate at roundoff tolerance and carry no statistical slack.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::argmax::{directional_derivatives, refine_argmax, scan_max, scan_slice};
use crate::drift::DriftFn;
use crate::error::{invalid, Error, Result};
use crate::estimate::{
    choose_truncation, cov_contributions, estimate_cov, par_replicates, HFunction, McEstimate,
    ReplicateTable, TruncationReport, TRUNCATION_MIN_EXCEEDANCES,
};
use crate::grid::TimeGrid;
use crate::process::{
    brownian_on, grid_primitive, sample_ou_stationary, stochastic_integral, ProcessKind,
    ProcessSpec, SamplePath,
};
use crate::rng::SeedSpec;

pub const DEFAULT_THRESHOLD: f64 = 3.0;
pub const PATHWISE_REL_TOL: f64 = 1e-9;
pub const EXACT_TOL: f64 = 1e-12;

/// Replicate count, master seed and z threshold shared by every check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub n_rep: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl RunSettings {
    pub fn new(n_rep: usize, seed: u64) -> Self {
        Self {
            n_rep,
            seed,
            threshold: DEFAULT_THRESHOLD,
        }
    }

    pub fn with_threshold(self, threshold: f64) -> Self {
        Self { threshold, ..self }
    }

    fn validate(&self, min_rep: usize) -> Result<()> {
        if self.n_rep < min_rep {
            return invalid(format!(
                "need at least {min_rep} replicates, got {}",
                self.n_rep
            ));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return invalid(format!(
                "threshold must be positive, got {}",
                self.threshold
            ));
        }
        Ok(())
    }

    fn seed(&self, k: u64) -> SeedSpec {
        SeedSpec::new(self.seed, k)
    }
}

/// How `pass` is decided.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CheckMode {
    /// `|diff| <= threshold * diff_stderr + bias_budget`.
    ZScore,
    /// Every replicate agrees to `tolerance` (relative).
    Pathwise { tolerance: f64 },
    /// Deterministic values agree with their targets to `tolerance`.
    Exact { tolerance: f64 },
    /// `lhs < rhs`.
    StrictlyLess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub process: Option<ProcessSpec>,
    pub n_steps: usize,
    /// Half width of two-sided domains, end time of one-sided ones.
    pub extent: f64,
    pub n_rep: usize,
    pub seed: u64,
    pub truncation: Option<TruncationReport>,
}

impl ReportMetadata {
    fn for_spec(spec: &ProcessSpec, rs: &RunSettings) -> Self {
        Self {
            process: Some(spec.clone()),
            n_steps: spec.n_steps,
            extent: spec.extent(),
            n_rep: rs.n_rep,
            seed: rs.seed,
            truncation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub name: String,
    pub lhs: McEstimate,
    pub rhs: McEstimate,
    pub diff: f64,
    pub diff_stderr: f64,
    /// `diff / diff_stderr`; absent when the paired differences are all equal.
    pub z_score: Option<f64>,
    pub threshold: f64,
    /// Allowance for discretization bias added to the z-score interval.
    pub bias_budget: f64,
    #[serde(flatten)]
    pub mode: CheckMode,
    pub pass: bool,
    pub metadata: ReportMetadata,
    pub extras: BTreeMap<String, f64>,
    /// Per-replicate columns behind the estimates.
    #[serde(skip)]
    pub replicates: Option<ReplicateTable>,
}

impl IdentityReport {
    /// Statistical report from paired per-replicate differences.
    fn paired(
        name: &str,
        lhs: McEstimate,
        rhs: McEstimate,
        diffs: &[f64],
        bias_budget: f64,
        rs: &RunSettings,
        metadata: ReportMetadata,
    ) -> Result<Self> {
        let d = McEstimate::from_samples(diffs)?;
        let diff = lhs.mean - rhs.mean;
        let z_score = (d.stderr > 0.0).then(|| diff / d.stderr);
        let pass = diff.abs() <= rs.threshold * d.stderr + bias_budget;
        Ok(Self {
            name: name.into(),
            lhs,
            rhs,
            diff,
            diff_stderr: d.stderr,
            z_score,
            threshold: rs.threshold,
            bias_budget,
            mode: CheckMode::ZScore,
            pass,
            metadata,
            extras: BTreeMap::new(),
            replicates: None,
        })
    }

    /// Report whose verdict was decided outside the z-score rule.
    fn decided(
        name: &str,
        lhs: McEstimate,
        rhs: McEstimate,
        mode: CheckMode,
        pass: bool,
        rs: &RunSettings,
        metadata: ReportMetadata,
    ) -> Self {
        Self {
            name: name.into(),
            lhs,
            rhs,
            diff: lhs.mean - rhs.mean,
            diff_stderr: 0.0,
            z_score: None,
            threshold: rs.threshold,
            bias_budget: 0.0,
            mode,
            pass,
            metadata,
            extras: BTreeMap::new(),
            replicates: None,
        }
    }

    fn extra(mut self, key: &str, value: f64) -> Self {
        self.extras.insert(key.into(), value);
        self
    }

    fn with_replicates(mut self, table: ReplicateTable) -> Self {
        self.replicates = Some(table);
        self
    }
}

fn columns<const K: usize>(rows: Vec<[f64; K]>) -> [Vec<f64>; K] {
    std::array::from_fn(|c| rows.iter().map(|r| r[c]).collect())
}

fn table(named: &[(&str, &[f64])]) -> ReplicateTable {
    let mut t = ReplicateTable::default();
    for (name, col) in named {
        t.push_column(*name, col.to_vec());
    }
    t
}

fn mean(x: &[f64]) -> f64 {
    McEstimate::from_samples(x).map_or(f64::NAN, |e| e.mean)
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn require_one_sided_bm(spec: &ProcessSpec) -> Result<()> {
    match spec.kind {
        ProcessKind::BrownianMotion { .. } | ProcessKind::BrownianWithDrift { .. } => Ok(()),
        _ => Err(Error::Unsupported(
            "this check needs Brownian motion (optionally with drift) on [0, t]".into(),
        )),
    }
}

/// `E Z = Cov(M, B(t))` for `X = B + f` on `[0, t]`.
pub fn check_cov_identity(spec: &ProcessSpec, rs: &RunSettings) -> Result<IdentityReport> {
    rs.validate(2)?;
    require_one_sided_bm(spec)?;
    let grid = spec.validate()?;
    let rows = par_replicates(rs.n_rep, |k| {
        let r = spec.sample_on(&grid, &rs.seed(k))?;
        let m = scan_max(&r.path);
        Ok([m.z1, m.max, r.end_noise(), m.gap()])
    })?;
    let [z, mx, bt, gap] = columns(rows);
    let contrib = cov_contributions(&mx, &bt);
    let diffs: Vec<f64> = z.iter().zip(&contrib).map(|(a, b)| a - b).collect();
    let report = IdentityReport::paired(
        "cov_identity",
        McEstimate::from_samples(&z)?,
        estimate_cov(&mx, &bt)?,
        &diffs,
        0.0,
        rs,
        ReportMetadata::for_spec(spec, rs),
    )?;
    Ok(report
        .extra("mean_argmax_gap", mean(&gap))
        .with_replicates(table(&[
            ("argmax", &z),
            ("max", &mx),
            ("end_value", &bt),
            ("cov_contribution", &contrib),
        ])))
}

/// Pilot and target of the truncation search for parabola-penalized
/// processes. The spec's half width serves as the pilot half width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationParams {
    pub tail_target: f64,
    /// Pilot paths; defaults to the fewest that resolve `tail_target`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot_n: Option<usize>,
}

impl TruncationParams {
    pub fn new(tail_target: f64) -> Self {
        Self {
            tail_target,
            pilot_n: None,
        }
    }

    fn pilot_n(&self) -> usize {
        self.pilot_n.unwrap_or_else(|| {
            let p = self.tail_target;
            ((TRUNCATION_MIN_EXCEEDANCES * (1.0 - p) / p).ceil() as usize).max(1000)
        })
    }

    /// Runs the pilot on `pilot` and returns the spec at the chosen half width.
    pub fn apply(&self, pilot: &ProcessSpec, seed: u64) -> Result<(ProcessSpec, TruncationReport)> {
        let report = choose_truncation(pilot, self.tail_target, self.pilot_n(), seed)?;
        Ok((pilot.with_extent(report.half_width), report))
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoSidedParams {
    pub process: ProcessSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<TruncationParams>,
    /// Also run at twice the half width and compare (parabola case only).
    #[serde(default = "default_true")]
    pub stability: bool,
}

/// `E Z+ = Cov(M, B(T))` for two-sided Brownian motion, with or without the
/// parabola. With the parabola and `stability`, the identity is evaluated on
/// `[-T, T]` and `[-2T, 2T]` of the same paths, and the two covariances are
/// compared.
pub fn check_twosided_identity(
    p: &TwoSidedParams,
    rs: &RunSettings,
) -> Result<Vec<IdentityReport>> {
    rs.validate(2)?;
    let parabola =
        match p.process.kind {
            ProcessKind::TwoSidedBrownianMotion { .. } => false,
            ProcessKind::BrownianMinusParabola { .. } => true,
            _ => return Err(Error::Unsupported(
                "two-sided identity needs two-sided Brownian motion, optionally minus a parabola"
                    .into(),
            )),
        };
    let (spec, truncation) = match &p.truncation {
        Some(t) => {
            let (s, r) = t.apply(&p.process, rs.seed)?;
            (s, Some(r))
        }
        None => (p.process.clone(), None),
    };
    let grid = spec.validate()?;
    let mut meta = ReportMetadata::for_spec(&spec, rs);
    meta.truncation = truncation;

    if !(parabola && p.stability) {
        let rows = par_replicates(rs.n_rep, |k| {
            let r = spec.sample_on(&grid, &rs.seed(k))?;
            let m = scan_max(&r.path);
            Ok([m.z1.max(0.0), m.max, r.end_noise(), m.z1])
        })?;
        let [zp, mx, bt, z] = columns(rows);
        let contrib = cov_contributions(&mx, &bt);
        let diffs: Vec<f64> = zp.iter().zip(&contrib).map(|(a, b)| a - b).collect();
        let abs: Vec<f64> = z.iter().map(|v| v.abs()).collect();
        let (ez, ezp, eabs) = (mean(&z), mean(&zp), mean(&abs));
        let report = IdentityReport::paired(
            "twosided_identity",
            McEstimate::from_samples(&zp)?,
            estimate_cov(&mx, &bt)?,
            &diffs,
            0.0,
            rs,
            meta,
        )?
        .extra("argmax_mean", ez)
        .extra("argmax_abs_mean", eabs)
        .extra("crosscheck_residual", ez - (2.0 * ezp - eabs))
        .with_replicates(table(&[
            ("argmax_plus", &zp),
            ("max", &mx),
            ("end_value", &bt),
            ("cov_contribution", &contrib),
        ]));
        return Ok(vec![report]);
    }

    // The wide grid has the same spacing, so its middle half is the narrow grid.
    let n = spec.n_steps;
    let t = spec.extent();
    let wide = spec.with_extent(2.0 * t).with_steps(2 * n);
    let wide_grid = wide.validate()?;
    let (lo, hi) = (n / 2, n / 2 + n);
    let rows = par_replicates(rs.n_rep, |k| {
        let r = wide.sample_on(&wide_grid, &rs.seed(k))?;
        let noise = r.noise.as_ref().expect("Brownian noise");
        let (max_t, i1, _) = scan_slice(r.path.values()[lo..=hi].iter().copied());
        let m = scan_max(&r.path);
        Ok([
            grid.node(i1).max(0.0),
            max_t,
            noise.values()[hi],
            m.z1.max(0.0),
            m.max,
            noise.last(),
        ])
    })?;
    let [zp_t, mx_t, b_t, zp_w, mx_w, b_w] = columns(rows);
    let c_t = cov_contributions(&mx_t, &b_t);
    let c_w = cov_contributions(&mx_w, &b_w);
    let cov_t = estimate_cov(&mx_t, &b_t)?;
    let cov_w = estimate_cov(&mx_w, &b_w)?;
    let sub = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x - y).collect() };

    let narrow = IdentityReport::paired(
        "twosided_identity_T",
        McEstimate::from_samples(&zp_t)?,
        cov_t,
        &sub(&zp_t, &c_t),
        0.0,
        rs,
        meta.clone(),
    )?
    .with_replicates(table(&[
        ("argmax_plus", &zp_t),
        ("max", &mx_t),
        ("end_value", &b_t),
        ("cov_contribution", &c_t),
    ]));
    let mut wide_meta = ReportMetadata::for_spec(&wide, rs);
    wide_meta.truncation = meta.truncation.clone();
    let wide_report = IdentityReport::paired(
        "twosided_identity_2T",
        McEstimate::from_samples(&zp_w)?,
        cov_w,
        &sub(&zp_w, &c_w),
        0.0,
        rs,
        wide_meta,
    )?
    .with_replicates(table(&[
        ("argmax_plus", &zp_w),
        ("max", &mx_w),
        ("end_value", &b_w),
        ("cov_contribution", &c_w),
    ]));
    let stability = IdentityReport::paired(
        "twosided_stability",
        cov_t,
        cov_w,
        &sub(&c_t, &c_w),
        0.0,
        rs,
        meta,
    )?
    .extra("argmax_plus_mean_T", mean(&zp_t))
    .extra("argmax_plus_mean_2T", mean(&zp_w));
    Ok(vec![narrow, wide_report, stability])
}

fn default_curvature() -> f64 {
    1.0
}

fn default_tail_target() -> f64 {
    1e-3
}

fn default_refine_levels() -> u32 {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChernoffParams {
    /// Half width of the truncation pilot.
    pub pilot_half_width: f64,
    pub n_steps: usize,
    /// `gamma` in `B(z) - gamma z^2`.
    #[serde(default = "default_curvature")]
    pub curvature: f64,
    #[serde(default = "default_tail_target")]
    pub tail_target: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot_n: Option<usize>,
    /// Extra resolutions `2n, 4n, ...` used for the bias budget; 0 disables.
    #[serde(default = "default_refine_levels")]
    pub refine_levels: u32,
}

/// `E Z = 0` and `E Z^2 = E M / (3 gamma)` for `B(z) - gamma z^2`.
///
/// Returns the mean report, the second-moment report and, with at least two
/// refinement levels, a report asserting that the paired discrepancy moves
/// less from `2n` to `4n` than from `n` to `2n`. The second-moment bias
/// budget extrapolates the `n -> 2n` move under a `sqrt(dt)` error law.
pub fn check_chernoff(p: &ChernoffParams, rs: &RunSettings) -> Result<Vec<IdentityReport>> {
    rs.validate(2)?;
    let pilot = ProcessSpec::new(
        ProcessKind::BrownianMinusParabola {
            half_width: p.pilot_half_width,
            curvature: p.curvature,
        },
        p.n_steps,
    );
    pilot.validate()?;
    let truncation = TruncationParams {
        tail_target: p.tail_target,
        pilot_n: p.pilot_n,
    };
    let (spec, trunc) = truncation.apply(&pilot, rs.seed)?;
    let grid = spec.validate()?;
    let gamma = p.curvature;
    let levels = p.refine_levels;

    // per replicate: z, M at n, then z, M at each refinement level
    let rows = par_replicates(rs.n_rep, |k| {
        let seed = rs.seed(k);
        let r = spec.sample_on(&grid, &seed)?;
        let m = scan_max(&r.path);
        let mut row = Vec::with_capacity(2 * (levels as usize + 1));
        row.extend([m.z1, m.max]);
        for l in 1..=levels {
            let f = refine_argmax(&spec, &r, &m, l, &seed)?;
            row.extend([f.z1, f.max]);
        }
        Ok(row)
    })?;
    let col = |c: usize| -> Vec<f64> { rows.iter().map(|r| r[c]).collect() };
    let discrepancy = |z: &[f64], m: &[f64]| -> Vec<f64> {
        z.iter()
            .zip(m)
            .map(|(z, m)| z * z - m / (3.0 * gamma))
            .collect()
    };
    let (z, mx) = (col(0), col(1));
    let mut meta = ReportMetadata::for_spec(&spec, rs);
    meta.truncation = Some(trunc);

    let mean_report = IdentityReport::paired(
        "chernoff_mean",
        McEstimate::from_samples(&z)?,
        McEstimate::exact(0.0),
        &z,
        0.0,
        rs,
        meta.clone(),
    )?;

    let d: Vec<f64> = (0..=levels as usize)
        .map(|l| mean(&discrepancy(&col(2 * l), &col(2 * l + 1))))
        .collect();
    let delta1 = if levels >= 1 { d[1] - d[0] } else { 0.0 };
    let budget = delta1.abs() / (1.0 - std::f64::consts::FRAC_1_SQRT_2);
    let z2: Vec<f64> = z.iter().map(|v| v * v).collect();
    let m3: Vec<f64> = mx.iter().map(|v| v / (3.0 * gamma)).collect();
    let mut second = IdentityReport::paired(
        "chernoff_second_moment",
        McEstimate::from_samples(&z2)?,
        McEstimate::from_samples(&m3)?,
        &discrepancy(&z, &mx),
        budget,
        rs,
        meta.clone(),
    )?;
    for (l, v) in d.iter().enumerate() {
        second = second.extra(&format!("discrepancy_n{}", 1u64 << l), *v);
    }
    let mut table_cols: Vec<(String, Vec<f64>)> = Vec::new();
    for l in 0..=levels as usize {
        let scale = 1u64 << l;
        table_cols.push((format!("argmax_n{scale}"), col(2 * l)));
        table_cols.push((format!("max_n{scale}"), col(2 * l + 1)));
    }
    let mut t = ReplicateTable::default();
    for (name, c) in table_cols {
        t.push_column(name, c);
    }
    let mut out = vec![mean_report, second.with_replicates(t)];

    if levels >= 2 {
        let delta2 = d[2] - d[1];
        let shrink = IdentityReport::decided(
            "chernoff_refinement_gap",
            McEstimate::exact(delta2.abs()),
            McEstimate::exact(delta1.abs()),
            CheckMode::StrictlyLess,
            delta2.abs() < delta1.abs(),
            rs,
            meta,
        )
        .extra("delta_n_to_2n", delta1)
        .extra("delta_2n_to_4n", delta2);
        out.push(shrink);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingParams {
    pub gamma: f64,
    pub gamma1: f64,
    /// Half width of the `gamma1` domain; the `gamma` domain is its image.
    pub half_width: f64,
    pub n_steps: usize,
}

/// Pathwise scaling: from `B` build `B'(x) = c^{1/2} B(x / c)` with
/// `c = (gamma1 / gamma)^{2/3}`; then the maximum of `B' - gamma x^2` is
/// `(gamma1 / gamma)^{1/3}` times that of `B - gamma1 z^2` and its maximizer
/// is `c` times the other's.
pub fn check_scaling(p: &ScalingParams, rs: &RunSettings) -> Result<Vec<IdentityReport>> {
    rs.validate(1)?;
    for (name, v) in [("gamma", p.gamma), ("gamma1", p.gamma1)] {
        if !(v > 0.0 && v.is_finite()) {
            return invalid(format!("{name} must be positive, got {v}"));
        }
    }
    let base = ProcessSpec::new(
        ProcessKind::BrownianMinusParabola {
            half_width: p.half_width,
            curvature: p.gamma1,
        },
        p.n_steps,
    );
    let grid1 = base.validate()?;
    let r = (p.gamma1 / p.gamma).cbrt();
    let c = r * r;
    let grid2 = TimeGrid::two_sided(c * p.half_width, p.n_steps)?;
    let x1 = grid1.nodes();
    let x2 = grid2.nodes();
    let scale = grid2.length();
    if let Some(i) = (0..x1.len()).find(|&i| (x2[i] - c * x1[i]).abs() > EXACT_TOL * scale) {
        return Err(Error::InvalidGrid(format!(
            "rescaled node {i} misses its image: {} vs {}",
            x2[i],
            c * x1[i]
        )));
    }
    let rows = par_replicates(rs.n_rep, |k| {
        let real = base.sample_on(&grid1, &rs.seed(k))?;
        let b = real.noise.as_ref().expect("Brownian noise").values();
        let m1 = scan_max(&real.path);
        let (max2, i2, _) = scan_slice(b.iter().zip(&x2).map(|(bv, x)| r * bv - p.gamma * x * x));
        let z2 = x2[i2];
        Ok([m1.max, max2, m1.z1, z2])
    })?;
    let [m1, m2, v1, v2] = columns(rows);
    let m_fail = m1
        .iter()
        .zip(&m2)
        .filter(|(a, b)| !rel_close(**b, r * **a, PATHWISE_REL_TOL))
        .count();
    let v_fail = v1
        .iter()
        .zip(&v2)
        .filter(|(a, b)| !rel_close(**b, c * **a, PATHWISE_REL_TOL))
        .count();
    let max_rel = |x: &[f64], y: &[f64], f: f64| {
        x.iter()
            .zip(y)
            .map(|(a, b)| {
                let d = (b - f * a).abs();
                if d == 0.0 {
                    0.0
                } else {
                    d / b.abs().max((f * a).abs())
                }
            })
            .fold(0.0, f64::max)
    };
    let scaled = |x: &[f64], f: f64| -> Vec<f64> { x.iter().map(|v| f * v).collect() };
    let mode = CheckMode::Pathwise {
        tolerance: PATHWISE_REL_TOL,
    };
    let meta = ReportMetadata::for_spec(&base, rs);
    let max_report = IdentityReport::decided(
        "scaling_max",
        McEstimate::from_samples(&m2)?,
        McEstimate::from_samples(&scaled(&m1, r))?,
        mode,
        m_fail == 0,
        rs,
        meta.clone(),
    )
    .extra("ratio", r)
    .extra("paths_failed", m_fail as f64)
    .extra("max_rel_error", max_rel(&m1, &m2, r))
    .with_replicates(table(&[("max_gamma1", &m1), ("max_gamma", &m2)]));
    let argmax_report = IdentityReport::decided(
        "scaling_argmax",
        McEstimate::from_samples(&v2)?,
        McEstimate::from_samples(&scaled(&v1, c))?,
        mode,
        v_fail == 0,
        rs,
        meta,
    )
    .extra("ratio", c)
    .extra("paths_failed", v_fail as f64)
    .extra("max_rel_error", max_rel(&v1, &v2, c))
    .with_replicates(table(&[("argmax_gamma1", &v1), ("argmax_gamma", &v2)]));
    Ok(vec![max_report, argmax_report])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftParams {
    pub beta: f64,
    pub process: ProcessSpec,
}

/// Shifting the parabola's vertex to `beta`.
///
/// Brownian case: with `Bbar(x) = B(x + beta) - B(beta)`, the maximum over
/// `[beta - T, beta + T]` of `B(z) - g (z - beta)^2` equals the maximum over
/// `[-T, T]` of `Bbar(x) - g x^2` plus `B(beta)`, and the maximizers differ by
/// `beta`; checked per path. OU case: the stationary noise makes the shifted
/// and unshifted maximum (and centred maximizer) equal in law; checked by
/// paired means on the same paths.
pub fn check_shift_invariance(p: &ShiftParams, rs: &RunSettings) -> Result<Vec<IdentityReport>> {
    rs.validate(2)?;
    let grid = p.process.validate()?;
    let (gamma, ou) = match p.process.kind {
        ProcessKind::BrownianMinusParabola { curvature, .. } => (curvature, None),
        ProcessKind::OuMinusParabola { theta, sigma, .. } => (1.0, Some((theta, sigma))),
        _ => {
            return Err(Error::Unsupported(
                "shift invariance needs Brownian or OU noise minus a parabola".into(),
            ))
        }
    };
    let n = p.process.n_steps;
    let dt = grid.dt();
    let steps = p.beta / dt;
    let s = steps.round();
    if !p.beta.is_finite() || (steps - s).abs() > 1e-9 * s.abs().max(1.0) {
        return invalid(format!("beta = {} is not a multiple of dt = {dt}", p.beta));
    }
    let s = s as i64;
    let pad = s.unsigned_abs() as usize;
    let half = n / 2;
    let wide = TimeGrid::two_sided((half + pad) as f64 * dt, n + 2 * pad)?;
    let origin = (half + pad) as i64;
    let shifted = (origin + s) as usize;
    let parabola: Vec<f64> = (0..=n)
        .map(|j| {
            let x = (j as f64 - half as f64) * dt;
            gamma * x * x
        })
        .collect();
    let window = |v: &[f64], centre: usize| -> Vec<f64> {
        v[centre - half..=centre + half]
            .iter()
            .zip(&parabola)
            .map(|(a, q)| a - q)
            .collect()
    };
    let offset = |i: usize| (i as f64 - half as f64) * dt;
    let meta = ReportMetadata::for_spec(&p.process, rs);

    if let Some((theta, sigma)) = ou {
        let rows = par_replicates(rs.n_rep, |k| {
            let a = sample_ou_stationary(wide, theta, sigma, &rs.seed(k))?;
            let (m_b, i_b, _) = scan_slice(window(a.values(), shifted));
            let (m_0, i_0, _) = scan_slice(window(a.values(), origin as usize));
            Ok([m_b, m_0, offset(i_b), offset(i_0)])
        })?;
        let [m_b, m_0, z_b, z_0] = columns(rows);
        let sub =
            |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x - y).collect() };
        let max_report = IdentityReport::paired(
            "shift_max",
            McEstimate::from_samples(&m_b)?,
            McEstimate::from_samples(&m_0)?,
            &sub(&m_b, &m_0),
            0.0,
            rs,
            meta.clone(),
        )?
        .extra("beta", p.beta)
        .with_replicates(table(&[("max_shifted", &m_b), ("max_centred", &m_0)]));
        let argmax_report = IdentityReport::paired(
            "shift_argmax",
            McEstimate::from_samples(&z_b)?,
            McEstimate::from_samples(&z_0)?,
            &sub(&z_b, &z_0),
            0.0,
            rs,
            meta,
        )?
        .extra("beta", p.beta)
        .with_replicates(table(&[("argmax_shifted", &z_b), ("argmax_centred", &z_0)]));
        return Ok(vec![max_report, argmax_report]);
    }

    let rows = par_replicates(rs.n_rep, |k| {
        let b = brownian_on(wide, &rs.seed(k))?;
        let v = b.values();
        let b_beta = v[shifted];
        let (m_b, i1_b, i2_b) = scan_slice(window(v, shifted));
        let bar: Vec<f64> = v.iter().map(|x| x - b_beta).collect();
        let (m_bar, i1_bar, i2_bar) = scan_slice(window(&bar, shifted));
        let same_index = (i1_b == i1_bar && i2_b == i2_bar) as u8 as f64;
        Ok([
            m_b,
            m_bar + b_beta,
            offset(i1_b),
            offset(i1_bar),
            same_index,
        ])
    })?;
    let [m_b, m_bar, z_b, z_bar, same] = columns(rows);
    let m_fail = m_b
        .iter()
        .zip(&m_bar)
        .filter(|(a, b)| !rel_close(**a, **b, PATHWISE_REL_TOL))
        .count();
    let z_fail = same.iter().filter(|&&v| v == 0.0).count();
    let mode = CheckMode::Pathwise {
        tolerance: PATHWISE_REL_TOL,
    };
    let max_report = IdentityReport::decided(
        "shift_max",
        McEstimate::from_samples(&m_b)?,
        McEstimate::from_samples(&m_bar)?,
        mode,
        m_fail == 0,
        rs,
        meta.clone(),
    )
    .extra("beta", p.beta)
    .extra("paths_failed", m_fail as f64)
    .with_replicates(table(&[("max_shifted", &m_b), ("max_recentred", &m_bar)]));
    let argmax_report = IdentityReport::decided(
        "shift_argmax",
        McEstimate::from_samples(&z_b)?,
        McEstimate::from_samples(&z_bar)?,
        mode,
        z_fail == 0,
        rs,
        meta,
    )
    .extra("beta", p.beta)
    .extra("paths_failed", z_fail as f64)
    .with_replicates(table(&[
        ("argmax_shifted", &z_b),
        ("argmax_recentred", &z_bar),
    ]));
    Ok(vec![max_report, argmax_report])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationaryParams {
    pub theta: f64,
    pub sigma: f64,
    /// Half width of the truncation pilot.
    pub pilot_half_width: f64,
    pub n_steps: usize,
    #[serde(default = "default_tail_target")]
    pub tail_target: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot_n: Option<usize>,
}

/// `E Z = 0` for stationary OU noise minus `z^2`. The pilot's empirical tail
/// curve `P(|Z| > u)` is attached to the metadata as evidence of the
/// integrability the identity assumes.
pub fn check_stationary_mean(p: &StationaryParams, rs: &RunSettings) -> Result<IdentityReport> {
    rs.validate(2)?;
    let pilot = ProcessSpec::ou_minus_parabola(p.pilot_half_width, p.theta, p.sigma, p.n_steps);
    pilot.validate()?;
    let truncation = TruncationParams {
        tail_target: p.tail_target,
        pilot_n: p.pilot_n,
    };
    let (spec, trunc) = truncation.apply(&pilot, rs.seed)?;
    let grid = spec.validate()?;
    let rows = par_replicates(rs.n_rep, |k| {
        let r = spec.sample_on(&grid, &rs.seed(k))?;
        let m = scan_max(&r.path);
        Ok([m.z1, m.gap()])
    })?;
    let [z, gap] = columns(rows);
    let tail_integral = trunc.tail_integral;
    let mut meta = ReportMetadata::for_spec(&spec, rs);
    meta.truncation = Some(trunc);
    Ok(IdentityReport::paired(
        "stationary_mean",
        McEstimate::from_samples(&z)?,
        McEstimate::exact(0.0),
        &z,
        0.0,
        rs,
        meta,
    )?
    .extra("mean_argmax_gap", mean(&gap))
    .extra("tail_integral", tail_integral)
    .with_replicates(table(&[("argmax", &z), ("argmax_gap", &gap)])))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameronMartinParams {
    pub process: ProcessSpec,
    pub phi: DriftFn,
}

/// `E psi(Z) = E[M int phi dB]` with `psi` the left-point grid primitive of
/// `phi`. The right side is estimated as `Cov(M, int phi dB)`, which has the
/// same expectation because the integral is centred.
pub fn check_cameron_martin(p: &CameronMartinParams, rs: &RunSettings) -> Result<IdentityReport> {
    rs.validate(2)?;
    require_one_sided_bm(&p.process)?;
    let grid = p.process.validate()?;
    p.phi.check_on(&grid)?;
    let psi = grid_primitive(&grid, &p.phi);
    if psi.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::NonMonotone(format!(
            "primitive of {:?} decreases: phi takes negative values on the grid",
            p.phi
        )));
    }
    let rows = par_replicates(rs.n_rep, |k| {
        let r = p.process.sample_on(&grid, &rs.seed(k))?;
        let m = scan_max(&r.path);
        let b = r.noise.as_ref().expect("Brownian noise");
        Ok([psi[m.idx1], m.max, stochastic_integral(b, &p.phi)])
    })?;
    let [ps, mx, integral] = columns(rows);
    let contrib = cov_contributions(&mx, &integral);
    let diffs: Vec<f64> = ps.iter().zip(&contrib).map(|(a, b)| a - b).collect();
    Ok(IdentityReport::paired(
        "cameron_martin",
        McEstimate::from_samples(&ps)?,
        estimate_cov(&mx, &integral)?,
        &diffs,
        0.0,
        rs,
        ReportMetadata::for_spec(&p.process, rs),
    )?
    .with_replicates(table(&[
        ("psi_of_argmax", &ps),
        ("max", &mx),
        ("stoch_integral", &integral),
        ("cov_contribution", &contrib),
    ])))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainRuleParams {
    pub process: ProcessSpec,
    pub h: HFunction,
}

/// `E[H'(M) Z] = E[H(M) B(t)]`, the right side estimated as
/// `Cov(H(M), B(t))`.
pub fn check_chain_rule(p: &ChainRuleParams, rs: &RunSettings) -> Result<IdentityReport> {
    rs.validate(2)?;
    require_one_sided_bm(&p.process)?;
    let grid = p.process.validate()?;
    let rows = par_replicates(rs.n_rep, |k| {
        let r = p.process.sample_on(&grid, &rs.seed(k))?;
        let m = scan_max(&r.path);
        Ok([
            p.h.derivative(m.max) * m.z1,
            p.h.value(m.max),
            r.end_noise(),
        ])
    })?;
    let [lhs, hm, bt] = columns(rows);
    let contrib = cov_contributions(&hm, &bt);
    let diffs: Vec<f64> = lhs.iter().zip(&contrib).map(|(a, b)| a - b).collect();
    Ok(IdentityReport::paired(
        "chain_rule",
        McEstimate::from_samples(&lhs)?,
        estimate_cov(&hm, &bt)?,
        &diffs,
        0.0,
        rs,
        ReportMetadata::for_spec(&p.process, rs),
    )?
    .with_replicates(table(&[
        ("h_prime_of_max_times_argmax", &lhs),
        ("h_of_max", &hm),
        ("end_value", &bt),
        ("cov_contribution", &contrib),
    ])))
}

fn default_flat_steps() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NondiffParams {
    pub t_end: f64,
    pub a_sequence: Vec<f64>,
    #[serde(default = "default_flat_steps")]
    pub n_steps: usize,
}

/// The flat path on `[0, t]` has `m(a) = a t` for `a > 0` and `0` for
/// `a <= 0`: right derivative `t`, left derivative `0`. `lhs` is the right
/// limit, `rhs` the left one; passes iff both match exactly and differ.
pub fn check_nondiff_flat(p: &NondiffParams, rs: &RunSettings) -> Result<IdentityReport> {
    let spec = ProcessSpec::deterministic(DriftFn::Zero, 0.0, p.t_end, p.n_steps);
    let grid = spec.validate()?;
    let d = directional_derivatives(&SamplePath::zeros(grid), &p.a_sequence)?;
    // + 0.0 turns the -0.0 of a zero left quotient into 0.0
    let (right, left) = (d.right_limit_est + 0.0, d.left_limit_est + 0.0);
    let pass = (right - p.t_end).abs() <= EXACT_TOL && left.abs() <= EXACT_TOL && right != left;
    let mut meta = ReportMetadata::for_spec(&spec, rs);
    meta.n_rep = 1;
    Ok(IdentityReport::decided(
        "nondiff_flat",
        McEstimate::exact(right),
        McEstimate::exact(left),
        CheckMode::Exact {
            tolerance: EXACT_TOL,
        },
        pass,
        rs,
        meta,
    )
    .extra("expected_right", p.t_end)
    .extra("expected_left", 0.0))
}

/// Differentiability of `a -> M(h + a z)` at `0` read off the one-sided
/// difference quotients at the smallest `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Differentiable { derivative: f64 },
    Kinked { left: f64, right: f64 },
}

pub fn differentiability_verdict(h: &SamplePath, a_sequence: &[f64], tol: f64) -> Result<Verdict> {
    let d = directional_derivatives(h, a_sequence)?;
    Ok(if d.is_kinked(tol) {
        Verdict::Kinked {
            left: d.left_limit_est,
            right: d.right_limit_est,
        }
    } else {
        Verdict::Differentiable {
            derivative: 0.5 * (d.left_limit_est + d.right_limit_est),
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSetEstimate {
    pub epsilon: f64,
    /// `dt * #{i : x_i >= M - epsilon}`.
    pub measure: McEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub n_steps: usize,
    /// `Z2 - Z1`.
    pub gap: McEstimate,
    pub level_sets: Vec<LevelSetEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapDiagnostic {
    pub process: ProcessSpec,
    pub rows: Vec<GapRow>,
}

/// Size of the near-maximal set across resolutions. Shrinking measures and
/// vanishing `Z2 - Z1` under refinement are evidence for a unique
/// maximizer; there is no pass/fail threshold.
pub fn uniqueness_gap_diagnostic(
    spec: &ProcessSpec,
    n_steps: &[usize],
    epsilons: &[f64],
    n_rep: usize,
    seed: u64,
) -> Result<GapDiagnostic> {
    if n_steps.len() < 2 {
        return invalid("need at least two resolutions");
    }
    if n_steps.windows(2).any(|w| w[0] >= w[1]) {
        return invalid("resolutions must increase");
    }
    if epsilons.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
        return invalid("epsilons must be nonnegative");
    }
    if n_rep == 0 {
        return invalid("n_rep must be positive");
    }
    let mut rows = Vec::with_capacity(n_steps.len());
    for &n in n_steps {
        let s = spec.with_steps(n);
        let grid = s.validate()?;
        let dt = grid.dt();
        let per_rep = par_replicates(n_rep, |k| {
            let r = s.sample_on(&grid, &SeedSpec::new(seed, k))?;
            let m = scan_max(&r.path);
            let mut row = vec![m.gap()];
            for &eps in epsilons {
                let level = m.max - eps;
                let count = r.path.values().iter().filter(|&&v| v >= level).count();
                row.push(count as f64 * dt);
            }
            Ok(row)
        })?;
        let col = |c: usize| -> Vec<f64> { per_rep.iter().map(|r| r[c]).collect() };
        let level_sets = epsilons
            .iter()
            .enumerate()
            .map(|(j, &epsilon)| {
                Ok(LevelSetEstimate {
                    epsilon,
                    measure: McEstimate::from_samples(&col(j + 1))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(GapRow {
            n_steps: n,
            gap: McEstimate::from_samples(&col(0))?,
            level_sets,
        });
    }
    Ok(GapDiagnostic {
        process: spec.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rs(n: usize) -> RunSettings {
        RunSettings::new(n, 77)
    }

    #[test]
    fn cov_identity_small_run_passes_and_is_reproducible() {
        let spec = ProcessSpec::brownian(1.0, 256);
        let a = check_cov_identity(&spec, &rs(4000)).unwrap();
        let b = check_cov_identity(&spec, &rs(4000)).unwrap();
        assert_eq!(a, b);
        assert!(a.pass, "{a:?}");
        assert!((a.diff - (a.lhs.mean - a.rhs.mean)).abs() < 1e-15);
        // paired differencing is much tighter than the independent sum
        assert!(a.diff_stderr < a.lhs.stderr.hypot(a.rhs.stderr));
    }

    #[test]
    fn rejects_wrong_process_kinds() {
        let two = ProcessSpec::two_sided(1.0, 16);
        assert!(matches!(
            check_cov_identity(&two, &rs(10)),
            Err(Error::Unsupported(_))
        ));
        let bm = ProcessSpec::brownian(1.0, 16);
        let p = TwoSidedParams {
            process: bm,
            truncation: None,
            stability: false,
        };
        assert!(check_twosided_identity(&p, &rs(10)).is_err());
    }

    #[test]
    fn cameron_martin_with_unit_phi_matches_cov_identity() {
        let spec = ProcessSpec::brownian(1.0, 128);
        let cm = check_cameron_martin(
            &CameronMartinParams {
                process: spec.clone(),
                phi: DriftFn::Constant { value: 1.0 },
            },
            &rs(500),
        )
        .unwrap();
        let cov = check_cov_identity(&spec, &rs(500)).unwrap();
        assert!((cm.lhs.mean - cov.lhs.mean).abs() < 1e-12);
        assert!((cm.rhs.mean - cov.rhs.mean).abs() < 1e-12);
    }

    #[test]
    fn cameron_martin_rejects_negative_phi() {
        let p = CameronMartinParams {
            process: ProcessSpec::brownian(1.0, 16),
            phi: DriftFn::Linear { slope: -1.0 },
        };
        assert!(matches!(
            check_cameron_martin(&p, &rs(10)),
            Err(Error::NonMonotone(_))
        ));
    }

    #[test]
    fn empty_indicator_gives_zero_on_both_sides() {
        let p = CameronMartinParams {
            process: ProcessSpec::brownian(1.0, 64),
            phi: DriftFn::Indicator { lo: 0.0, hi: 0.0 },
        };
        let r = check_cameron_martin(&p, &rs(50)).unwrap();
        assert_eq!((r.lhs.mean, r.rhs.mean), (0.0, 0.0));
        assert!(r.pass);
    }

    #[test]
    fn constant_h_gives_zero() {
        let p = ChainRuleParams {
            process: ProcessSpec::brownian(1.0, 64),
            h: HFunction::Constant { value: 2.5 },
        };
        let r = check_chain_rule(&p, &rs(50)).unwrap();
        assert_eq!(r.lhs.mean, 0.0);
        assert_eq!(r.rhs.mean, 0.0);
        assert!(r.pass && r.z_score.is_none());
    }

    #[test]
    fn identity_h_reduces_to_cov_identity() {
        let spec = ProcessSpec::brownian(1.0, 64);
        let ch = check_chain_rule(
            &ChainRuleParams {
                process: spec.clone(),
                h: HFunction::Identity,
            },
            &rs(300),
        )
        .unwrap();
        let cov = check_cov_identity(&spec, &rs(300)).unwrap();
        assert_eq!(ch.lhs, cov.lhs);
        assert_eq!(ch.rhs, cov.rhs);
    }

    #[test]
    fn nondiff_flat_examples() {
        for t in [1.0, 2.0] {
            let p = NondiffParams {
                t_end: t,
                a_sequence: vec![0.1, 0.01, 0.001],
                n_steps: 64,
            };
            let r = check_nondiff_flat(&p, &rs(1)).unwrap();
            assert_eq!(r.lhs.mean, t);
            assert_eq!(r.rhs.mean, 0.0);
            assert!(r.pass);
        }
    }

    #[test]
    fn triangle_is_differentiable() {
        let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let f = DriftFn::piecewise_linear(vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 0.0]).unwrap();
        let h = SamplePath::from_fn(grid, &f).unwrap();
        match differentiability_verdict(&h, &[0.1, 0.01], 1e-12).unwrap() {
            Verdict::Differentiable { derivative } => assert!((derivative - 0.5).abs() < 1e-12),
            v => panic!("{v:?}"),
        }
        let flat = SamplePath::zeros(grid);
        assert_eq!(
            differentiability_verdict(&flat, &[0.1, 0.01], 1e-12).unwrap(),
            Verdict::Kinked {
                left: 0.0,
                right: 1.0
            }
        );
    }

    #[test]
    fn scaling_identity_map_is_exact() {
        let p = ScalingParams {
            gamma: 2.0,
            gamma1: 2.0,
            half_width: 2.0,
            n_steps: 256,
        };
        let reports = check_scaling(&p, &rs(50)).unwrap();
        for r in &reports {
            assert!(r.pass);
            assert_eq!(r.extras["max_rel_error"], 0.0);
        }
    }

    #[test]
    fn scaling_eight_to_one() {
        let p = ScalingParams {
            gamma: 8.0,
            gamma1: 1.0,
            half_width: 3.0,
            n_steps: 1024,
        };
        let reports = check_scaling(&p, &rs(100)).unwrap();
        assert_eq!(reports[0].extras["ratio"], 0.5);
        assert_eq!(reports[1].extras["ratio"], 0.25);
        assert!(reports.iter().all(|r| r.pass), "{reports:?}");
    }

    #[test]
    fn shift_zero_is_exact() {
        for process in [
            ProcessSpec::brownian_minus_parabola(2.0, 256),
            ProcessSpec::ou_minus_parabola(2.0, 1.0, 2f64.sqrt(), 256),
        ] {
            let p = ShiftParams { beta: 0.0, process };
            for r in check_shift_invariance(&p, &rs(20)).unwrap() {
                assert!(r.pass, "{r:?}");
                assert_eq!(r.diff, 0.0);
            }
        }
    }

    #[test]
    fn shift_must_be_grid_aligned() {
        let p = ShiftParams {
            beta: 0.3,
            process: ProcessSpec::brownian_minus_parabola(2.0, 16),
        };
        assert!(check_shift_invariance(&p, &rs(10)).is_err());
    }

    #[test]
    fn brownian_shift_is_pathwise() {
        let p = ShiftParams {
            beta: 0.5,
            process: ProcessSpec::brownian_minus_parabola(2.0, 512),
        };
        let reports = check_shift_invariance(&p, &rs(200)).unwrap();
        assert!(reports.iter().all(|r| r.pass), "{reports:?}");
    }

    #[test]
    fn twosided_without_parabola_crosscheck() {
        let p = TwoSidedParams {
            process: ProcessSpec::two_sided(1.0, 64),
            truncation: None,
            stability: true,
        };
        let r = check_twosided_identity(&p, &rs(2000)).unwrap();
        assert_eq!(r.len(), 1);
        assert!(r[0].extras["crosscheck_residual"].abs() < 1e-12);
        assert!(r[0].pass, "{:?}", r[0]);
    }

    #[test]
    fn gap_diagnostic_flat_is_full_interval() {
        let spec = ProcessSpec::deterministic(DriftFn::Zero, 0.0, 2.0, 8);
        let d = uniqueness_gap_diagnostic(&spec, &[8, 16, 32], &[0.0], 3, 1).unwrap();
        for row in &d.rows {
            assert_eq!(row.gap.mean, 2.0);
        }
        assert!(uniqueness_gap_diagnostic(&spec, &[8], &[0.0], 3, 1).is_err());
    }

    #[test]
    fn report_json_shape() {
        let spec = ProcessSpec::brownian(1.0, 16);
        let r = check_cov_identity(&spec, &rs(10)).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["mode"], "z_score");
        assert_eq!(v["metadata"]["process"]["process"], "brownian_motion");
        let back: IdentityReport = serde_json::from_value(v).unwrap();
        assert_eq!(back.lhs, r.lhs);
    }
}
