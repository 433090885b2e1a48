//! Sampled paths of the processes under study and the deterministic
//! transforms (drift, tilt) applied to them.
//!
//! Brownian noise is anchored at the origin node: increments to the right of
//! the origin come from one substream and increments to the left from
//! another, both indexed by their distance from the origin. Widening a
//! two-sided interval at fixed spacing therefore reuses the inner segment
//! exactly. Finer grids are obtained from coarser ones by midpoint
//! (Brownian-bridge) fill-in, with draws keyed by level and cell offset, so
//! nested grids agree bit-for-bit at shared nodes.

use serde::{Deserialize, Serialize};

use crate::drift::{DriftFn, TiltSpec};
use crate::error::{invalid, Error, Result};
use crate::grid::TimeGrid;
use crate::rng::{SeedSpec, Substream};

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    grid: TimeGrid,
    values: Vec<f64>,
    origin_index: usize,
}

impl SamplePath {
    pub fn new(grid: TimeGrid, values: Vec<f64>, origin_index: usize) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: grid.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!("path value at node {i} is not finite"));
        }
        if origin_index > grid.n_steps() {
            return invalid(format!("origin index {origin_index} is off the grid"));
        }
        Ok(Self {
            grid,
            values,
            origin_index,
        })
    }

    /// Deterministic path `f(z_i)`.
    pub fn from_fn(grid: TimeGrid, f: &DriftFn) -> Result<Self> {
        f.check_on(&grid)?;
        let origin = grid.origin_index().unwrap_or(0);
        Self::new(grid, f.eval_on(&grid), origin)
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        let origin = grid.origin_index().unwrap_or(0);
        Self {
            grid,
            values: vec![0.0; grid.len()],
            origin_index: origin,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn origin_index(&self) -> usize {
        self.origin_index
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn value_at(&self, z: f64) -> Option<f64> {
        self.grid.index_of(z).map(|i| self.values[i])
    }
}

fn require_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        invalid(format!("{name} must be positive and finite, got {v}"))
    }
}

fn default_curvature() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "process", rename_all = "snake_case")]
pub enum ProcessKind {
    BrownianMotion {
        t_end: f64,
    },
    TwoSidedBrownianMotion {
        half_width: f64,
    },
    BrownianWithDrift {
        t_end: f64,
        drift: DriftFn,
    },
    /// `B(z) - curvature * z^2` on `[-half_width, half_width]`.
    BrownianMinusParabola {
        half_width: f64,
        #[serde(default = "default_curvature")]
        curvature: f64,
    },
    /// Stationary OU minus `z^2` on `[-half_width, half_width]`.
    OuMinusParabola {
        half_width: f64,
        theta: f64,
        sigma: f64,
    },
    Deterministic {
        drift: DriftFn,
        t_start: f64,
        t_end: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    #[serde(flatten)]
    pub kind: ProcessKind,
    pub n_steps: usize,
}

/// One replicate: the observed path `X` and the noise that drove it
/// (`B` for Brownian variants, `A` for OU, absent for deterministic specs).
#[derive(Debug, Clone)]
pub struct Realization {
    pub path: SamplePath,
    pub noise: Option<SamplePath>,
}

impl Realization {
    /// Driving noise at the right end of the grid, `0` without noise.
    pub fn end_noise(&self) -> f64 {
        self.noise.as_ref().map_or(0.0, |n| n.last())
    }
}

impl ProcessSpec {
    pub fn new(kind: ProcessKind, n_steps: usize) -> Self {
        Self { kind, n_steps }
    }

    pub fn brownian(t_end: f64, n_steps: usize) -> Self {
        Self::new(ProcessKind::BrownianMotion { t_end }, n_steps)
    }

    pub fn brownian_with_drift(t_end: f64, drift: DriftFn, n_steps: usize) -> Self {
        Self::new(ProcessKind::BrownianWithDrift { t_end, drift }, n_steps)
    }

    pub fn two_sided(half_width: f64, n_steps: usize) -> Self {
        Self::new(ProcessKind::TwoSidedBrownianMotion { half_width }, n_steps)
    }

    pub fn brownian_minus_parabola(half_width: f64, n_steps: usize) -> Self {
        Self::new(
            ProcessKind::BrownianMinusParabola {
                half_width,
                curvature: 1.0,
            },
            n_steps,
        )
    }

    pub fn ou_minus_parabola(half_width: f64, theta: f64, sigma: f64, n_steps: usize) -> Self {
        Self::new(
            ProcessKind::OuMinusParabola {
                half_width,
                theta,
                sigma,
            },
            n_steps,
        )
    }

    pub fn deterministic(drift: DriftFn, t_start: f64, t_end: f64, n_steps: usize) -> Self {
        Self::new(
            ProcessKind::Deterministic {
                drift,
                t_start,
                t_end,
            },
            n_steps,
        )
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        match &self.kind {
            ProcessKind::BrownianMotion { t_end }
            | ProcessKind::BrownianWithDrift { t_end, .. } => {
                require_positive("t_end", *t_end)?;
                TimeGrid::new(0.0, *t_end, self.n_steps)
            }
            ProcessKind::TwoSidedBrownianMotion { half_width }
            | ProcessKind::BrownianMinusParabola { half_width, .. }
            | ProcessKind::OuMinusParabola { half_width, .. } => {
                require_positive("half_width", *half_width)?;
                TimeGrid::two_sided(*half_width, self.n_steps)
            }
            ProcessKind::Deterministic { t_start, t_end, .. } => {
                TimeGrid::new(*t_start, *t_end, self.n_steps)
            }
        }
    }

    pub fn validate(&self) -> Result<TimeGrid> {
        let grid = self.grid()?;
        match &self.kind {
            ProcessKind::BrownianMinusParabola { curvature, .. } => {
                require_positive("curvature", *curvature)?
            }
            ProcessKind::OuMinusParabola { theta, sigma, .. } => {
                require_positive("theta", *theta)?;
                require_positive("sigma", *sigma)?;
            }
            ProcessKind::BrownianWithDrift { drift, .. }
            | ProcessKind::Deterministic { drift, .. } => drift.check_on(&grid)?,
            _ => {}
        }
        Ok(grid)
    }

    /// Deterministic part of `X`.
    pub fn drift(&self) -> DriftFn {
        match &self.kind {
            ProcessKind::BrownianMotion { .. } | ProcessKind::TwoSidedBrownianMotion { .. } => {
                DriftFn::Zero
            }
            ProcessKind::BrownianWithDrift { drift, .. }
            | ProcessKind::Deterministic { drift, .. } => drift.clone(),
            ProcessKind::BrownianMinusParabola { curvature, .. } => {
                if *curvature == 1.0 {
                    DriftFn::NegParabola
                } else {
                    DriftFn::Parabola {
                        coef: -curvature,
                        center: 0.0,
                    }
                }
            }
            ProcessKind::OuMinusParabola { .. } => DriftFn::NegParabola,
        }
    }

    /// Whether the noise is Brownian, so midpoint bridge refinement applies.
    pub fn is_brownian(&self) -> bool {
        matches!(
            self.kind,
            ProcessKind::BrownianMotion { .. }
                | ProcessKind::TwoSidedBrownianMotion { .. }
                | ProcessKind::BrownianWithDrift { .. }
                | ProcessKind::BrownianMinusParabola { .. }
        )
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self.kind, ProcessKind::Deterministic { .. })
    }

    /// Same process on a grid with `n_steps` steps.
    pub fn with_steps(&self, n_steps: usize) -> Self {
        Self {
            kind: self.kind.clone(),
            n_steps,
        }
    }

    /// Same process with a new half width (two-sided kinds) or end time.
    pub fn with_extent(&self, extent: f64) -> Self {
        let mut kind = self.kind.clone();
        match &mut kind {
            ProcessKind::TwoSidedBrownianMotion { half_width }
            | ProcessKind::BrownianMinusParabola { half_width, .. }
            | ProcessKind::OuMinusParabola { half_width, .. } => *half_width = extent,
            ProcessKind::BrownianMotion { t_end }
            | ProcessKind::BrownianWithDrift { t_end, .. }
            | ProcessKind::Deterministic { t_end, .. } => *t_end = extent,
        }
        Self {
            kind,
            n_steps: self.n_steps,
        }
    }

    pub fn extent(&self) -> f64 {
        match &self.kind {
            ProcessKind::TwoSidedBrownianMotion { half_width }
            | ProcessKind::BrownianMinusParabola { half_width, .. }
            | ProcessKind::OuMinusParabola { half_width, .. } => *half_width,
            ProcessKind::BrownianMotion { t_end }
            | ProcessKind::BrownianWithDrift { t_end, .. }
            | ProcessKind::Deterministic { t_end, .. } => *t_end,
        }
    }

    pub fn sample(&self, seed: &SeedSpec) -> Result<Realization> {
        let grid = self.validate()?;
        self.sample_on(&grid, seed)
    }

    /// Like [`sample`](Self::sample) with an already validated grid.
    pub fn sample_on(&self, grid: &TimeGrid, seed: &SeedSpec) -> Result<Realization> {
        let noise = match &self.kind {
            ProcessKind::Deterministic { .. } => None,
            ProcessKind::OuMinusParabola { theta, sigma, .. } => {
                Some(sample_ou_stationary(*grid, *theta, *sigma, seed)?)
            }
            _ => Some(brownian_on(*grid, seed)?),
        };
        let drift = self.drift();
        let path = match &noise {
            Some(n) if drift.is_zero() => n.clone(),
            Some(n) => add_drift(n.clone(), &drift),
            None => SamplePath::from_fn(*grid, &drift)?,
        };
        Ok(Realization { path, noise })
    }
}

/// Standard Brownian motion on `[0, t_end]`.
pub fn sample_bm(grid: TimeGrid, seed: &SeedSpec) -> Result<SamplePath> {
    if grid.t_start() != 0.0 {
        return Err(Error::InvalidGrid(format!(
            "Brownian motion starts at 0, grid starts at {}",
            grid.t_start()
        )));
    }
    brownian_on(grid, seed)
}

/// Two-sided Brownian motion on `[-half_width, half_width]`, zero at the
/// middle node.
pub fn sample_two_sided_bm(half_width: f64, n_steps: usize, seed: &SeedSpec) -> Result<SamplePath> {
    brownian_on(TimeGrid::two_sided(half_width, n_steps)?, seed)
}

/// Brownian motion pinned to zero at the grid's origin node.
pub fn brownian_on(grid: TimeGrid, seed: &SeedSpec) -> Result<SamplePath> {
    let k = grid
        .origin_index()
        .ok_or_else(|| Error::InvalidGrid("Brownian paths need z = 0 to be a grid node".into()))?;
    let n = grid.n_steps();
    let sd = grid.dt().sqrt();
    let mut values = vec![0.0; n + 1];

    let mut right = seed.stream(Substream::Right);
    right.seek(0);
    for i in k..n {
        values[i + 1] = values[i] + sd * right.next();
    }
    let mut left = seed.stream(Substream::Left);
    left.seek(0);
    for i in (0..k).rev() {
        values[i] = values[i + 1] + sd * left.next();
    }
    SamplePath::new(grid, values, k)
}

/// Stationary Ornstein-Uhlenbeck path `dA = -theta A dz + sigma dW`, sampled
/// with the exact autoregressive transition. The stationary draw sits at the
/// origin node (node 0 if the grid has no origin) and the path is extended
/// forward and backward from there; the process is reversible, so both
/// directions use the same transition.
pub fn sample_ou_stationary(
    grid: TimeGrid,
    theta: f64,
    sigma: f64,
    seed: &SeedSpec,
) -> Result<SamplePath> {
    require_positive("theta", theta)?;
    require_positive("sigma", sigma)?;
    let k = grid.origin_index().unwrap_or(0);
    let n = grid.n_steps();
    let var = sigma * sigma / (2.0 * theta);
    let rho = (-theta * grid.dt()).exp();
    let innovation_sd = (var * -(-2.0 * theta * grid.dt()).exp_m1()).sqrt();

    let mut values = vec![0.0; n + 1];
    let mut right = seed.stream(Substream::OuRight);
    right.seek(0);
    values[k] = var.sqrt() * right.next();
    for i in k..n {
        values[i + 1] = rho * values[i] + innovation_sd * right.next();
    }
    let mut left = seed.stream(Substream::OuLeft);
    left.seek(0);
    for i in (0..k).rev() {
        values[i] = rho * values[i + 1] + innovation_sd * left.next();
    }
    SamplePath::new(grid, values, k)
}

pub fn add_drift(path: SamplePath, f: &DriftFn) -> SamplePath {
    if f.is_zero() {
        return path;
    }
    let SamplePath {
        grid,
        mut values,
        origin_index,
    } = path;
    for (v, z) in values.iter_mut().zip(grid.nodes()) {
        *v += f.eval(z);
    }
    SamplePath {
        grid,
        values,
        origin_index,
    }
}

/// `X^a(z) = X(z) + a g(z)` for the tilt shape `g`.
pub fn apply_tilt(path: SamplePath, tilt: &TiltSpec) -> Result<SamplePath> {
    tilt.kind.check_on(&path.grid)?;
    if tilt.a == 0.0 {
        return Ok(path);
    }
    let SamplePath {
        grid,
        mut values,
        origin_index,
    } = path;
    for (v, z) in values.iter_mut().zip(grid.nodes()) {
        *v += tilt.a * tilt.kind.shape(z);
    }
    Ok(SamplePath {
        grid,
        values,
        origin_index,
    })
}

/// Left-point Ito sum `sum_i phi(z_i) (B(z_{i+1}) - B(z_i))` over the
/// nonnegative part of the grid (from the origin node to the right end).
pub fn stochastic_integral(bm_path: &SamplePath, phi: &DriftFn) -> f64 {
    let grid = bm_path.grid();
    let v = bm_path.values();
    (bm_path.origin_index()..grid.n_steps())
        .map(|i| phi.eval(grid.node(i)) * (v[i + 1] - v[i]))
        .sum()
}

/// Grid primitive `psi(z_k) = sum_{origin <= i < k} phi(z_i) dt` of `phi`,
/// the tilt shape whose Cameron-Martin derivative is the left-point integral
/// of `phi`. Nodes left of the origin get `0`.
pub fn grid_primitive(grid: &TimeGrid, phi: &DriftFn) -> Vec<f64> {
    let k = grid.origin_index().unwrap_or(0);
    let dt = grid.dt();
    let mut out = vec![0.0; grid.len()];
    for i in k..grid.n_steps() {
        out[i + 1] = out[i] + phi.eval(grid.node(i)) * dt;
    }
    out
}

/// Refine Brownian noise on the node range `[lo, hi]` by `levels` dyadic
/// midpoint levels. Returns the values on the refined nodes
/// `lo * 2^levels ..= hi * 2^levels` of `path.grid().refined(levels)`.
///
/// Midpoint draws are keyed by `(level, cell offset from the origin)`, so a
/// windowed refinement reproduces exactly the values of a full one.
pub fn bridge_refine(
    path: &SamplePath,
    lo: usize,
    hi: usize,
    levels: u32,
    seed: &SeedSpec,
) -> Vec<f64> {
    assert!(lo <= hi && hi <= path.grid().n_steps());
    let mut cur: Vec<f64> = path.values()[lo..=hi].to_vec();
    let mut h = path.grid().dt();
    let mut cell0 = lo as i64 - path.origin_index() as i64;
    for level in 1..=levels {
        let cells = cur.len() - 1;
        let mut next = vec![0.0; 2 * cells + 1];
        for (i, v) in cur.iter().enumerate() {
            next[2 * i] = *v;
        }
        let sd = (h / 4.0).sqrt();
        // cells right of the origin ascend their substream, cells left of it
        // ascend theirs walking leftwards
        let first_right = (-cell0).clamp(0, cells as i64) as usize;
        let mut right = seed.stream(Substream::BridgeRight(level));
        if first_right < cells {
            right.seek((cell0 + first_right as i64) as u64);
            for i in first_right..cells {
                next[2 * i + 1] = 0.5 * (cur[i] + cur[i + 1]) + sd * right.next();
            }
        }
        if first_right > 0 {
            let mut left = seed.stream(Substream::BridgeLeft(level));
            left.seek((-(cell0 + first_right as i64 - 1) - 1) as u64);
            for i in (0..first_right).rev() {
                next[2 * i + 1] = 0.5 * (cur[i] + cur[i + 1]) + sd * left.next();
            }
        }
        cur = next;
        h *= 0.5;
        cell0 *= 2;
    }
    cur
}

/// Full refinement of a Brownian path to `2^levels` times as many steps.
pub fn refine_path(path: &SamplePath, levels: u32, seed: &SeedSpec) -> SamplePath {
    let grid = path.grid().refined(levels);
    let values = bridge_refine(path, 0, path.grid().n_steps(), levels, seed);
    SamplePath {
        grid,
        values,
        origin_index: path.origin_index() << levels,
    }
}
