//! Maximum and leftmost/rightmost maximizer of a sampled path, the
//! directional derivatives of the max functional under a linear tilt, and
//! the deterministic inequalities that trap them.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::TimeGrid;
use crate::process::{bridge_refine, ProcessSpec, Realization, SamplePath};
use crate::rng::SeedSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxResult {
    pub max: f64,
    /// Leftmost node attaining `max`.
    pub z1: f64,
    /// Rightmost node attaining `max`.
    pub z2: f64,
    pub idx1: usize,
    pub idx2: usize,
}

impl MaxResult {
    fn from_indices(grid: &TimeGrid, max: f64, idx1: usize, idx2: usize) -> Self {
        Self {
            max,
            z1: grid.node(idx1),
            z2: grid.node(idx2),
            idx1,
            idx2,
        }
    }

    pub fn gap(&self) -> f64 {
        self.z2 - self.z1
    }
}

/// Single pass over `values` returning `(max, first index, last index)`.
/// Ties are exact floating-point equality.
#[inline]
pub fn scan_slice(values: impl IntoIterator<Item = f64>) -> (f64, usize, usize) {
    let mut best = f64::NEG_INFINITY;
    let (mut first, mut last) = (0, 0);
    for (i, v) in values.into_iter().enumerate() {
        if v > best {
            best = v;
            first = i;
            last = i;
        } else if v == best {
            last = i;
        }
    }
    (best, first, last)
}

pub fn scan_max(path: &SamplePath) -> MaxResult {
    let (max, i1, i2) = scan_slice(path.values().iter().copied());
    MaxResult::from_indices(path.grid(), max, i1, i2)
}

/// Maximum of `x_i + a g_i` without materializing the tilted path.
pub fn scan_tilted(path: &SamplePath, shape: &[f64], a: f64) -> MaxResult {
    debug_assert_eq!(shape.len(), path.values().len());
    let (max, i1, i2) = scan_slice(path.values().iter().zip(shape).map(|(x, g)| x + a * g));
    MaxResult::from_indices(path.grid(), max, i1, i2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalDerivativeReport {
    pub a_sequence: Vec<f64>,
    /// `(M(h^{-a}) - M(h)) / (-a)` for each `a`.
    pub left_quotients: Vec<f64>,
    /// `(M(h^{a}) - M(h)) / a` for each `a`.
    pub right_quotients: Vec<f64>,
    pub left_limit_est: f64,
    pub right_limit_est: f64,
    pub z1: f64,
    pub z2: f64,
    pub span: f64,
}

impl DirectionalDerivativeReport {
    /// Right quotients in `[z1, z2 + span]`, left quotients in
    /// `[z1 - span, z2]`.
    pub fn trapping_holds(&self, slack: f64) -> bool {
        let right_ok = self
            .right_quotients
            .iter()
            .all(|&q| q >= self.z1 - slack && q <= self.z2 + self.span + slack);
        let left_ok = self
            .left_quotients
            .iter()
            .all(|&q| q >= self.z1 - self.span - slack && q <= self.z2 + slack);
        right_ok && left_ok
    }

    /// One-sided limits differ, i.e. the max functional has a kink.
    pub fn is_kinked(&self, tol: f64) -> bool {
        (self.right_limit_est - self.left_limit_est).abs() > tol
    }
}

pub fn directional_derivatives(
    h: &SamplePath,
    a_sequence: &[f64],
) -> Result<DirectionalDerivativeReport> {
    if a_sequence.is_empty() {
        return invalid("a_sequence is empty");
    }
    if a_sequence.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
        return invalid("a_sequence must be positive");
    }
    if a_sequence.windows(2).any(|w| !(w[0] > w[1])) {
        return invalid("a_sequence must be strictly decreasing");
    }
    let base = scan_max(h);
    let shape = h.grid().nodes();
    let quotient = |a: f64| (scan_tilted(h, &shape, a).max - base.max) / a;
    let right_quotients: Vec<f64> = a_sequence.iter().map(|&a| quotient(a)).collect();
    let left_quotients: Vec<f64> = a_sequence.iter().map(|&a| quotient(-a)).collect();
    Ok(DirectionalDerivativeReport {
        a_sequence: a_sequence.to_vec(),
        left_limit_est: *left_quotients.last().unwrap(),
        right_limit_est: *right_quotients.last().unwrap(),
        left_quotients,
        right_quotients,
        z1: base.z1,
        z2: base.z2,
        span: h.grid().length(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inequality {
    /// `0 <= (M^a - M) - a Z_i`
    LowerBound,
    /// `(M^a - M) - a Z_i <= a (Z_i^a - Z_i)`
    UpperBound,
    /// `Z_i^a <= Z_i` for `a < 0`, `Z_i^a >= Z_i` for `a > 0`
    Monotone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundViolation {
    pub inequality: Inequality,
    /// 1 for the leftmost maximizer, 2 for the rightmost.
    pub which: u8,
    pub lhs: f64,
    pub rhs: f64,
    pub idx: usize,
    pub idx_tilted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub a: f64,
    pub violations: Vec<BoundViolation>,
}

impl BoundsReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub const BOUNDS_REL_SLACK: f64 = 1e-9;

/// Verifies the sandwich `0 <= (M^a - M) - a Z_i <= a (Z_i^a - Z_i)` and the
/// argmax monotonicity for `i = 1, 2` under the tilt `h + a z`.
pub fn pathwise_bounds_check(path: &SamplePath, a: f64) -> Result<BoundsReport> {
    if a == 0.0 || !a.is_finite() {
        return invalid("tilt magnitude must be nonzero and finite");
    }
    let nodes = path.grid().nodes();
    let base = scan_max(path);
    let tilted = scan_tilted(path, &nodes, a);
    let zmax = path.grid().t_start().abs().max(path.grid().t_end().abs());
    let slack = BOUNDS_REL_SLACK
        * 1f64
            .max(base.max.abs())
            .max(tilted.max.abs())
            .max(a.abs() * zmax);

    let mut violations = Vec::new();
    let dm = tilted.max - base.max;
    for (which, z, za, idx, idx_a) in [
        (1u8, base.z1, tilted.z1, base.idx1, tilted.idx1),
        (2u8, base.z2, tilted.z2, base.idx2, tilted.idx2),
    ] {
        let mid = dm - a * z;
        let upper = a * (za - z);
        let mut push = |inequality, lhs, rhs| {
            violations.push(BoundViolation {
                inequality,
                which,
                lhs,
                rhs,
                idx,
                idx_tilted: idx_a,
            })
        };
        if mid < -slack {
            push(Inequality::LowerBound, 0.0, mid);
        }
        if mid > upper + slack {
            push(Inequality::UpperBound, mid, upper);
        }
        let monotone = if a < 0.0 { za <= z } else { za >= z };
        if !monotone {
            push(Inequality::Monotone, za, z);
        }
    }
    Ok(BoundsReport { a, violations })
}

/// Bridge-refined maximum of a Brownian-based realization.
///
/// Each level halves the spacing by midpoint fill-in. Only cells that could
/// host a point above the coarse maximum are refined: a cell is skipped when
/// both endpoints sit more than `6 sqrt(dt)` (plus the drift's variation
/// across the cell) below the coarse maximum, which a Brownian bridge
/// overshoots with probability below `exp(-72)`. The result coincides with a
/// full refinement outside events of that probability, and `max` never
/// decreases in `levels`. Indices refer to `grid.refined(levels)`.
pub fn refine_argmax(
    spec: &ProcessSpec,
    realization: &Realization,
    coarse: &MaxResult,
    levels: u32,
    seed: &SeedSpec,
) -> Result<MaxResult> {
    if levels == 0 {
        return Ok(*coarse);
    }
    if !spec.is_brownian() {
        return Err(Error::Unsupported(
            "bridge refinement needs Brownian noise (not OU or deterministic paths)".into(),
        ));
    }
    let noise = realization
        .noise
        .as_ref()
        .ok_or_else(|| Error::Unsupported("realization carries no noise path".into()))?;
    let grid = *noise.grid();
    let drift = spec.drift();
    let x = realization.path.values();
    let b = noise.values();
    let n = grid.n_steps();
    let margin = 6.0 * grid.dt().sqrt();
    let threshold = coarse.max - margin;

    // Cells [i, i+1] that might contain a refined node above the coarse max.
    let nodes = grid.nodes();
    let candidate = |i: usize| {
        let noise_top = b[i].max(b[i + 1]);
        let f_top = if drift.is_zero() {
            0.0
        } else {
            let mid = 0.5 * (nodes[i] + nodes[i + 1]);
            (x[i] - b[i]).max(x[i + 1] - b[i + 1]).max(drift.eval(mid))
        };
        noise_top + f_top >= threshold
    };

    let mut windows: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        if candidate(i) {
            match windows.last_mut() {
                Some((_, hi)) if *hi == i => *hi = i + 1,
                _ => windows.push((i, i + 1)),
            }
        }
    }

    let fine = grid.refined(levels);
    let scale = 1usize << levels;
    let mut best = f64::NEG_INFINITY;
    let (mut first, mut last) = (0usize, 0usize);
    for (lo, hi) in windows {
        let seg = bridge_refine(noise, lo, hi, levels, seed);
        for (j, bv) in seg.iter().enumerate() {
            let idx = lo * scale + j;
            let v = if drift.is_zero() {
                *bv
            } else {
                bv + drift.eval(fine.node(idx))
            };
            if v > best {
                best = v;
                first = idx;
                last = idx;
            } else if v == best {
                last = idx;
            }
        }
    }
    debug_assert!(best >= coarse.max);
    Ok(MaxResult::from_indices(&fine, best, first, last))
}
