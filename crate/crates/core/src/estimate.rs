//! Replicate orchestration and the Monte Carlo estimators built on it:
//! scalar functionals, common-random-number curves `a -> E M^a`, difference
//! quotients, covariances and the truncation pilot.
//!
//! Replicate `k` always draws from stream `(master_seed, k)`. Replicates run
//! on the ambient rayon pool but are collected in index order and reduced
//! sequentially, so every estimate is independent of the worker count.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::argmax::{scan_max, scan_tilted, MaxResult};
use crate::drift::{DriftFn, TiltKind};
use crate::error::{invalid, Error, Result};
use crate::process::{stochastic_integral, ProcessKind, ProcessSpec, Realization, SamplePath};
use crate::rng::SeedSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl McEstimate {
    /// Sample mean and `sd / sqrt(n)` (zero stderr for a single sample).
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::Insufficient("no samples".into()));
        }
        // shifted by the first sample: exact for constant samples
        let shift = samples[0];
        let mean = shift + samples.iter().map(|x| x - shift).sum::<f64>() / n as f64;
        let stderr = if n < 2 {
            0.0
        } else {
            let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
            (ss / (n - 1) as f64 / n as f64).sqrt()
        };
        Ok(Self { mean, stderr, n })
    }

    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            stderr: 0.0,
            n: 1,
        }
    }

    /// Difference of two estimates from independent samples.
    pub fn minus_independent(&self, other: &McEstimate) -> (f64, f64) {
        (self.mean - other.mean, self.stderr.hypot(other.stderr))
    }
}

/// Smooth function `H` with explicit derivative, for `E H'(M) Z = E H(M) B(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "h", rename_all = "snake_case")]
pub enum HFunction {
    Identity,
    Square,
    Constant {
        value: f64,
    },
    /// `exp(-rate * x)`
    DampedExp {
        rate: f64,
    },
}

impl HFunction {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            HFunction::Identity => x,
            HFunction::Square => x * x,
            HFunction::Constant { value } => value,
            HFunction::DampedExp { rate } => (-rate * x).exp(),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            HFunction::Identity => 1.0,
            HFunction::Square => 2.0 * x,
            HFunction::Constant { .. } => 0.0,
            HFunction::DampedExp { rate } => -rate * (-rate * x).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositePart {
    /// `H(M)`
    Value,
    /// `H'(M) Z`
    DerivativeTimesArgmax,
    /// `H(M) B(t)`
    ValueTimesEnd,
}

/// Scalar functional of one replicate. `Z` is the leftmost maximizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "functional", rename_all = "snake_case")]
pub enum FunctionalId {
    Max,
    ArgmaxLeft,
    ArgmaxRight,
    /// `Z2 - Z1`
    ArgmaxGap,
    /// Driving noise at the right end, `B(t)`.
    EndValue,
    /// `max(Z, 0)`
    ArgmaxPlus,
    ArgmaxSquared,
    /// Left-point integral of `phi` against the driving noise.
    StochIntegral {
        phi: DriftFn,
    },
    Composite {
        h: HFunction,
        part: CompositePart,
    },
}

impl FunctionalId {
    pub fn name(&self) -> String {
        match self {
            FunctionalId::Max => "max".into(),
            FunctionalId::ArgmaxLeft => "argmax_left".into(),
            FunctionalId::ArgmaxRight => "argmax_right".into(),
            FunctionalId::ArgmaxGap => "argmax_gap".into(),
            FunctionalId::EndValue => "end_value".into(),
            FunctionalId::ArgmaxPlus => "argmax_plus".into(),
            FunctionalId::ArgmaxSquared => "argmax_squared".into(),
            FunctionalId::StochIntegral { .. } => "stoch_integral".into(),
            FunctionalId::Composite { part, .. } => match part {
                CompositePart::Value => "h_of_max".into(),
                CompositePart::DerivativeTimesArgmax => "h_prime_of_max_times_argmax".into(),
                CompositePart::ValueTimesEnd => "h_of_max_times_end".into(),
            },
        }
    }

    pub fn eval(&self, r: &Realization, m: &MaxResult) -> f64 {
        match self {
            FunctionalId::Max => m.max,
            FunctionalId::ArgmaxLeft => m.z1,
            FunctionalId::ArgmaxRight => m.z2,
            FunctionalId::ArgmaxGap => m.z2 - m.z1,
            FunctionalId::EndValue => r.end_noise(),
            FunctionalId::ArgmaxPlus => m.z1.max(0.0),
            FunctionalId::ArgmaxSquared => m.z1 * m.z1,
            FunctionalId::StochIntegral { phi } => r
                .noise
                .as_ref()
                .map_or(0.0, |b| stochastic_integral(b, phi)),
            FunctionalId::Composite { h, part } => match part {
                CompositePart::Value => h.value(m.max),
                CompositePart::DerivativeTimesArgmax => h.derivative(m.max) * m.z1,
                CompositePart::ValueTimesEnd => h.value(m.max) * r.end_noise(),
            },
        }
    }
}

/// Per-replicate values, one column per named quantity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplicateTable {
    pub columns: Vec<String>,
    /// `values[c][k]` is column `c` of replicate `k`.
    pub values: Vec<Vec<f64>>,
}

impl ReplicateTable {
    pub fn push_column(&mut self, name: impl Into<String>, values: Vec<f64>) {
        self.columns.push(name.into());
        self.values.push(values);
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .position(|c| c == name)
            .map(|i| self.values[i].as_slice())
    }

    pub fn n_rep(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Long format `replicate,functional,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["replicate", "functional", "value"])?;
        for k in 0..self.n_rep() {
            for (name, col) in self.columns.iter().zip(&self.values) {
                w.write_record([k.to_string(), name.clone(), col[k].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `f` for replicates `0..n_rep` on the ambient rayon pool, returning
/// results in replicate order.
pub fn par_replicates<T, F>(n_rep: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..n_rep as u64).into_par_iter().map(f).collect()
}

#[derive(Debug, Clone)]
pub struct ReplicateRun {
    pub functionals: Vec<FunctionalId>,
    pub estimates: Vec<McEstimate>,
    pub table: ReplicateTable,
}

pub fn run_replicates(
    spec: &ProcessSpec,
    functionals: &[FunctionalId],
    n_rep: usize,
    master_seed: u64,
) -> Result<ReplicateRun> {
    if n_rep < 2 {
        return invalid(format!("need at least 2 replicates, got {n_rep}"));
    }
    let grid = spec.validate()?;
    let rows = par_replicates(n_rep, |k| {
        let r = spec.sample_on(&grid, &SeedSpec::new(master_seed, k))?;
        let m = scan_max(&r.path);
        Ok(functionals
            .iter()
            .map(|f| f.eval(&r, &m))
            .collect::<Vec<_>>())
    })?;
    let mut table = ReplicateTable::default();
    let mut estimates = Vec::with_capacity(functionals.len());
    for (j, f) in functionals.iter().enumerate() {
        let col: Vec<f64> = rows.iter().map(|row| row[j]).collect();
        estimates.push(McEstimate::from_samples(&col)?);
        table.push_column(f.name(), col);
    }
    Ok(ReplicateRun {
        functionals: functionals.to_vec(),
        estimates,
        table,
    })
}

/// `a -> E Y(X^a)` estimated with common random numbers: replicate `k`
/// reuses one driving path for every `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCurve {
    pub tilt: TiltKind,
    pub a_values: Vec<f64>,
    pub estimates: Vec<McEstimate>,
    pub n_rep: usize,
    /// `values[j][k]`: functional at `a_values[j]` on replicate `k`.
    #[serde(skip)]
    pub values: Vec<Vec<f64>>,
    /// Maximizers `(Z1^a, Z2^a)` per `a` and replicate (max curves only).
    #[serde(skip)]
    pub maximizers: Option<Vec<Vec<(f64, f64)>>>,
}

impl MCurve {
    pub fn zero_index(&self) -> usize {
        self.a_values
            .iter()
            .position(|&a| a == 0.0)
            .expect("curves always contain a = 0")
    }

    pub fn index_of(&self, a: f64) -> Option<usize> {
        self.a_values.iter().position(|&x| x == a)
    }

    /// `m(a) - m(0)` with the paired (CRN) standard error.
    pub fn increment(&self, j: usize) -> Result<McEstimate> {
        let z = self.zero_index();
        let d: Vec<f64> = self.values[j]
            .iter()
            .zip(&self.values[z])
            .map(|(x, y)| x - y)
            .collect();
        McEstimate::from_samples(&d)
    }

    /// Counts replicates whose difference quotient escapes the pathwise
    /// sandwich `g(Z_i) <= q <= g(Z_i^a)` (`a > 0`, reversed for `a < 0`),
    /// `i = 1, 2`, where `g` is the tilt shape.
    pub fn trapping_violations(&self, rel_slack: f64) -> usize {
        let Some(zs) = &self.maximizers else {
            return 0;
        };
        let z = self.zero_index();
        let g = |x: f64| self.tilt.shape(x);
        let mut count = 0;
        for (j, &a) in self.a_values.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for k in 0..self.n_rep {
                let q = (self.values[j][k] - self.values[z][k]) / a;
                let (z1, z2) = zs[z][k];
                let (z1a, z2a) = zs[j][k];
                let base = g(z1).max(g(z2));
                let base_lo = g(z1).min(g(z2));
                let tilted_hi = g(z1a).max(g(z2a));
                let tilted_lo = g(z1a).min(g(z2a));
                let slack = rel_slack * (1.0 + q.abs()) + 1e-12 / a.abs();
                let ok = if a > 0.0 {
                    q >= base - slack && q <= tilted_lo + slack
                } else {
                    q <= base_lo + slack && q >= tilted_hi - slack
                };
                if !ok {
                    count += 1;
                }
            }
        }
        count
    }
}

fn check_a_values(a_values: &[f64]) -> Result<()> {
    if !a_values.contains(&0.0) {
        return invalid("a_values must include 0");
    }
    if a_values.iter().any(|a| !a.is_finite()) {
        return invalid("a_values must be finite");
    }
    Ok(())
}

/// `m(a) = E M(X + a g)` for each `a`, with common random numbers.
pub fn estimate_m_curve(
    spec: &ProcessSpec,
    tilt: &TiltKind,
    a_values: &[f64],
    n_rep: usize,
    master_seed: u64,
) -> Result<MCurve> {
    check_a_values(a_values)?;
    if n_rep == 0 {
        return invalid("n_rep must be positive");
    }
    let grid = spec.validate()?;
    tilt.check_on(&grid)?;
    let shape = tilt.shape_on(&grid);
    // deterministic paths give the same value on every replicate
    let n_eff = if spec.is_deterministic() { 1 } else { n_rep };
    let rows = par_replicates(n_eff, |k| {
        let r = spec.sample_on(&grid, &SeedSpec::new(master_seed, k))?;
        Ok(a_values
            .iter()
            .map(|&a| scan_tilted(&r.path, &shape, a))
            .collect::<Vec<_>>())
    })?;
    let mut values = Vec::with_capacity(a_values.len());
    let mut maximizers = Vec::with_capacity(a_values.len());
    for j in 0..a_values.len() {
        let mut col: Vec<f64> = rows.iter().map(|row| row[j].max).collect();
        let mut zs: Vec<(f64, f64)> = rows.iter().map(|row| (row[j].z1, row[j].z2)).collect();
        if n_eff < n_rep {
            col = vec![col[0]; n_rep];
            zs = vec![zs[0]; n_rep];
        }
        values.push(col);
        maximizers.push(zs);
    }
    let estimates = values
        .iter()
        .map(|col| McEstimate::from_samples(col))
        .collect::<Result<Vec<_>>>()?;
    Ok(MCurve {
        tilt: tilt.clone(),
        a_values: a_values.to_vec(),
        estimates,
        n_rep,
        values,
        maximizers: Some(maximizers),
    })
}

fn tilt_path(path: &SamplePath, shape: &[f64], a: f64) -> SamplePath {
    let values = path
        .values()
        .iter()
        .zip(shape)
        .map(|(x, g)| x + a * g)
        .collect();
    SamplePath::new(*path.grid(), values, path.origin_index()).expect("tilt keeps paths finite")
}

/// `y(a) = E Y(B^a)` for an arbitrary functional, tilting both the observed
/// path and the driving noise by `a g`.
pub fn estimate_functional_curve(
    spec: &ProcessSpec,
    tilt: &TiltKind,
    a_values: &[f64],
    functional: &FunctionalId,
    n_rep: usize,
    master_seed: u64,
) -> Result<MCurve> {
    check_a_values(a_values)?;
    let grid = spec.validate()?;
    tilt.check_on(&grid)?;
    let shape = tilt.shape_on(&grid);
    let rows = par_replicates(n_rep, |k| {
        let r = spec.sample_on(&grid, &SeedSpec::new(master_seed, k))?;
        Ok(a_values
            .iter()
            .map(|&a| {
                let tilted = Realization {
                    path: tilt_path(&r.path, &shape, a),
                    noise: r.noise.as_ref().map(|b| tilt_path(b, &shape, a)),
                };
                let m = scan_max(&tilted.path);
                functional.eval(&tilted, &m)
            })
            .collect::<Vec<_>>())
    })?;
    let values: Vec<Vec<f64>> = (0..a_values.len())
        .map(|j| rows.iter().map(|row| row[j]).collect())
        .collect();
    let estimates = values
        .iter()
        .map(|col| McEstimate::from_samples(col))
        .collect::<Result<Vec<_>>>()?;
    Ok(MCurve {
        tilt: tilt.clone(),
        a_values: a_values.to_vec(),
        estimates,
        n_rep,
        values,
        maximizers: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Central,
}

/// Offsets used by a difference quotient.
fn nearest_offsets(curve: &MCurve) -> (Option<usize>, Option<usize>) {
    let mut left: Option<usize> = None;
    let mut right: Option<usize> = None;
    for (j, &a) in curve.a_values.iter().enumerate() {
        if a > 0.0 && right.is_none_or(|r| a < curve.a_values[r]) {
            right = Some(j);
        }
        if a < 0.0 && left.is_none_or(|l| a > curve.a_values[l]) {
            left = Some(j);
        }
    }
    (left, right)
}

/// Per-replicate difference quotient at the offset closest to zero on the
/// requested side, averaged over replicates.
pub fn fd_derivative(curve: &MCurve, side: Side) -> Result<McEstimate> {
    let z = curve.zero_index();
    let (left, right) = nearest_offsets(curve);
    let missing = |s: &str| invalid(format!("curve has no offset on the {s} of 0"));
    let (hi, lo) = match side {
        Side::Right => (right.map_or_else(|| missing("right"), Ok)?, z),
        Side::Left => (z, left.map_or_else(|| missing("left"), Ok)?),
        Side::Central => (
            right.map_or_else(|| missing("right"), Ok)?,
            left.map_or_else(|| missing("left"), Ok)?,
        ),
    };
    let h = curve.a_values[hi] - curve.a_values[lo];
    let q: Vec<f64> = curve.values[hi]
        .iter()
        .zip(&curve.values[lo])
        .map(|(x, y)| (x - y) / h)
        .collect();
    McEstimate::from_samples(&q)
}

/// Unbiased sample covariance. The standard error comes from batch means
/// over `floor(sqrt(n))` batches; with fewer than two batches it falls back
/// to the spread of the centred products.
pub fn estimate_cov(x: &[f64], y: &[f64]) -> Result<McEstimate> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Insufficient(format!(
            "covariance needs at least 2 pairs, got {n}"
        )));
    }
    let cov = sample_cov(x, y);
    let batches = (n as f64).sqrt().floor() as usize;
    let stderr = if batches >= 2 && n / batches >= 2 {
        let size = n / batches;
        let per_batch: Vec<f64> = (0..batches)
            .map(|b| {
                let r = b * size..(b + 1) * size;
                sample_cov(&x[r.clone()], &y[r])
            })
            .collect();
        McEstimate::from_samples(&per_batch)?.stderr
    } else {
        let mx = x.iter().sum::<f64>() / n as f64;
        let my = y.iter().sum::<f64>() / n as f64;
        let prods: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
        McEstimate::from_samples(&prods)?.stderr
    };
    Ok(McEstimate {
        mean: cov,
        stderr,
        n,
    })
}

pub(crate) fn sample_cov(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / (n - 1.0)
}

/// Per-replicate contributions `(x_k - mean x)(y_k - mean y) n / (n - 1)`,
/// whose average is the unbiased covariance.
pub fn cov_contributions(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let c = n / (n - 1.0);
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my) * c)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    /// Chosen half width: smallest `u` on the pilot u-grid whose empirical
    /// tail is at most `tail_target`.
    pub half_width: f64,
    pub tail_target: f64,
    pub pilot_half_width: f64,
    pub pilot_n: usize,
    pub u_grid: Vec<f64>,
    /// Empirical `P(argmax not inside [-u, u])` on `u_grid`.
    pub tail: Vec<f64>,
    /// Trapezoidal integral of the tail curve over the pilot interval.
    pub tail_integral: f64,
    /// Fraction of pilot paths maximized at the pilot boundary.
    pub boundary_fraction: f64,
}

pub const TRUNCATION_U_POINTS: usize = 200;
/// Minimum expected number of pilot exceedances at the target level.
pub const TRUNCATION_MIN_EXCEEDANCES: f64 = 10.0;

/// Picks a finite half width for a parabola-penalized process from a pilot
/// run at the spec's own (generous) half width.
pub fn choose_truncation(
    spec: &ProcessSpec,
    tail_target: f64,
    pilot_n: usize,
    master_seed: u64,
) -> Result<TruncationReport> {
    if !matches!(
        spec.kind,
        ProcessKind::BrownianMinusParabola { .. } | ProcessKind::OuMinusParabola { .. }
    ) {
        return Err(Error::Unsupported(
            "truncation applies to parabola-penalized two-sided processes".into(),
        ));
    }
    if !(tail_target > 0.0 && tail_target < 1.0) {
        return invalid(format!("tail_target must lie in (0, 1), got {tail_target}"));
    }
    let resolvable = TRUNCATION_MIN_EXCEEDANCES * (1.0 - tail_target) / tail_target;
    if (pilot_n as f64) < resolvable {
        return Err(Error::Insufficient(format!(
            "pilot of {pilot_n} paths cannot resolve a tail of {tail_target}; need at least {}",
            resolvable.ceil()
        )));
    }
    let grid = spec.validate()?;
    let t0 = spec.extent();
    let seed = SeedSpec::derived(master_seed, 0x7A11);
    let extremes = par_replicates(pilot_n, |k| {
        let r = spec.sample_on(&grid, &SeedSpec::new(seed, k))?;
        let m = scan_max(&r.path);
        Ok((-m.z1).max(m.z2))
    })?;

    let at_boundary = extremes.iter().filter(|&&e| e >= t0).count();
    let boundary_fraction = at_boundary as f64 / pilot_n as f64;
    if boundary_fraction > 0.1 * tail_target {
        return invalid(format!(
            "pilot half width {t0} is too narrow: {:.3e} of paths peak at its boundary",
            boundary_fraction
        ));
    }

    let mut sorted = extremes;
    sorted.sort_by(f64::total_cmp);
    let du = t0 / TRUNCATION_U_POINTS as f64;
    let u_grid: Vec<f64> = (0..=TRUNCATION_U_POINTS).map(|j| j as f64 * du).collect();
    let tail: Vec<f64> = u_grid
        .iter()
        .map(|&u| {
            let inside = sorted.partition_point(|&e| e <= u);
            (pilot_n - inside) as f64 / pilot_n as f64
        })
        .collect();
    let tail_integral = tail.windows(2).map(|w| 0.5 * (w[0] + w[1]) * du).sum();
    let j = tail
        .iter()
        .position(|&p| p <= tail_target)
        .expect("tail vanishes at the pilot boundary");
    Ok(TruncationReport {
        half_width: u_grid[j],
        tail_target,
        pilot_half_width: t0,
        pilot_n,
        u_grid,
        tail,
        tail_integral,
        boundary_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::NormalStream;

    #[test]
    fn mc_estimate_basics() {
        let e = McEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(e.mean, 2.5);
        assert!((e.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert!(McEstimate::from_samples(&[]).is_err());
        assert_eq!(McEstimate::from_samples(&[7.0]).unwrap().stderr, 0.0);
    }

    #[test]
    fn cov_of_normal_with_itself_is_one() {
        let mut s = NormalStream::new(5, 5, 5);
        let x: Vec<f64> = (0..10_000).map(|_| s.next()).collect();
        let c = estimate_cov(&x, &x).unwrap();
        assert!((c.mean - 1.0).abs() <= 3.0 * c.stderr, "{c:?}");
    }

    #[test]
    fn cov_of_independent_normals_is_zero() {
        let mut s = NormalStream::new(5, 6, 5);
        let x: Vec<f64> = (0..10_000).map(|_| s.next()).collect();
        let y: Vec<f64> = (0..10_000).map(|_| s.next()).collect();
        let c = estimate_cov(&x, &y).unwrap();
        assert!(c.mean.abs() <= 3.0 * c.stderr, "{c:?}");
    }

    #[test]
    fn cov_errors() {
        assert!(matches!(
            estimate_cov(&[1.0, 2.0], &[1.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(estimate_cov(&[1.0], &[1.0]).is_err());
        let tiny = estimate_cov(&[1.0, 2.0, 4.0], &[0.0, 1.0, 1.0]).unwrap();
        assert!(tiny.stderr.is_finite());
    }

    #[test]
    fn cov_contributions_average_to_cov() {
        let x = [1.0, 2.0, 5.0, 3.0];
        let y = [0.5, -1.0, 2.0, 4.0];
        let c: f64 = cov_contributions(&x, &y).iter().sum::<f64>() / 4.0;
        assert!((c - sample_cov(&x, &y)).abs() < 1e-14);
    }

    #[test]
    fn end_value_mean_is_zero() {
        let spec = ProcessSpec::brownian(1.0, 16);
        let run = run_replicates(&spec, &[FunctionalId::EndValue], 10_000, 1).unwrap();
        let e = run.estimates[0];
        assert!(e.mean.abs() <= 3.0 * e.stderr);
    }

    #[test]
    fn flat_deterministic_maximizers() {
        let spec = ProcessSpec::deterministic(DriftFn::Zero, 0.0, 1.0, 8);
        let run = run_replicates(
            &spec,
            &[FunctionalId::ArgmaxLeft, FunctionalId::ArgmaxRight],
            4,
            1,
        )
        .unwrap();
        assert_eq!(run.estimates[0].mean, 0.0);
        assert_eq!(run.estimates[1].mean, 1.0);
        assert_eq!(run.estimates[1].stderr, 0.0);
    }

    #[test]
    fn replicate_runs_are_reproducible() {
        let spec = ProcessSpec::brownian(1.0, 64);
        let f = [FunctionalId::Max, FunctionalId::ArgmaxLeft];
        let a = run_replicates(&spec, &f, 50, 9).unwrap();
        let b = run_replicates(&spec, &f, 50, 9).unwrap();
        assert_eq!(a.table, b.table);
        assert_eq!(a.estimates, b.estimates);
        assert!(run_replicates(&spec, &f, 1, 9).is_err());
    }

    #[test]
    fn flat_m_curve_is_exact() {
        let spec = ProcessSpec::deterministic(DriftFn::Zero, 0.0, 1.0, 10);
        let a = [-0.5, -0.1, 0.0, 0.1, 0.5];
        let c = estimate_m_curve(&spec, &TiltKind::Linear, &a, 20, 3).unwrap();
        for (e, &a) in c.estimates.iter().zip(&a) {
            assert_eq!(e.mean, a.max(0.0));
            assert_eq!(e.stderr, 0.0);
        }
        let right = fd_derivative(&c, Side::Right).unwrap();
        let left = fd_derivative(&c, Side::Left).unwrap();
        assert!((right.mean - 1.0).abs() < 1e-12);
        assert_eq!(left.mean, 0.0);
        assert_eq!(c.trapping_violations(1e-9), 0);
    }

    #[test]
    fn m_curve_requires_zero() {
        let spec = ProcessSpec::brownian(1.0, 8);
        assert!(estimate_m_curve(&spec, &TiltKind::Linear, &[0.1], 4, 1).is_err());
    }

    #[test]
    fn fd_side_must_exist() {
        let spec = ProcessSpec::brownian(1.0, 8);
        let c = estimate_m_curve(&spec, &TiltKind::Linear, &[0.0, 0.1], 4, 1).unwrap();
        assert!(fd_derivative(&c, Side::Left).is_err());
        assert!(fd_derivative(&c, Side::Central).is_err());
        assert!(fd_derivative(&c, Side::Right).is_ok());
    }

    #[test]
    fn crn_trapping_on_brownian_curve() {
        let spec = ProcessSpec::brownian(1.0, 256);
        let a = [-0.1, -0.01, 0.0, 0.01, 0.1];
        let c = estimate_m_curve(&spec, &TiltKind::Linear, &a, 200, 8).unwrap();
        assert_eq!(c.trapping_violations(1e-9), 0);
        let l = fd_derivative(&c, Side::Left).unwrap();
        let r = fd_derivative(&c, Side::Right).unwrap();
        assert!(l.mean <= r.mean + 3.0 * (l.stderr + r.stderr));
    }

    #[test]
    fn end_value_functional_derivative_matches_variance() {
        // y(a) = E (B(t) + a t) so every quotient equals t = Cov(B(t), B(t))
        let spec = ProcessSpec::brownian(2.0, 32);
        let c = estimate_functional_curve(
            &spec,
            &TiltKind::Linear,
            &[0.0, 0.05],
            &FunctionalId::EndValue,
            50,
            4,
        )
        .unwrap();
        let d = fd_derivative(&c, Side::Right).unwrap();
        assert!((d.mean - 2.0).abs() < 1e-9);
    }

    #[test]
    fn truncation_argument_checks() {
        let bm = ProcessSpec::brownian(1.0, 8);
        assert!(choose_truncation(&bm, 0.1, 1000, 1).is_err());
        let spec = ProcessSpec::brownian_minus_parabola(3.0, 256);
        assert!(choose_truncation(&spec, 0.0, 1000, 1).is_err());
        assert!(choose_truncation(&spec, 1.0, 1000, 1).is_err());
        assert!(matches!(
            choose_truncation(&spec, 1e-3, 100, 1),
            Err(Error::Insufficient(_))
        ));
        let narrow = ProcessSpec::brownian_minus_parabola(0.3, 64);
        assert!(choose_truncation(&narrow, 0.1, 1000, 1).is_err());
    }

    #[test]
    fn vacuous_tail_target_gives_tiny_half_width() {
        let spec = ProcessSpec::brownian_minus_parabola(3.0, 512);
        let r = choose_truncation(&spec, 0.999, 20_000, 2).unwrap();
        assert!(
            r.half_width <= 2.0 * 3.0 / TRUNCATION_U_POINTS as f64,
            "{}",
            r.half_width
        );
        assert!(r.tail.windows(2).all(|w| w[0] >= w[1]));
    }
}
