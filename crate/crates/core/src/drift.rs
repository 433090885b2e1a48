//! Deterministic functions of time: drifts, tilt shapes and integrands.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::TimeGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fn", rename_all = "snake_case")]
pub enum DriftFn {
    Zero,
    Constant {
        value: f64,
    },
    Linear {
        slope: f64,
    },
    /// `-z^2`.
    NegParabola,
    /// `coef * (z - center)^2`.
    Parabola {
        coef: f64,
        center: f64,
    },
    /// `sum_k coeffs[k] * z^k`.
    Polynomial {
        coeffs: Vec<f64>,
    },
    /// Linear interpolation through `(knots[i], values[i])`.
    PiecewiseLinear {
        knots: Vec<f64>,
        values: Vec<f64>,
    },
    /// `1` on `[lo, hi)`, `0` elsewhere.
    Indicator {
        lo: f64,
        hi: f64,
    },
}

impl DriftFn {
    pub fn piecewise_linear(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let f = DriftFn::PiecewiseLinear { knots, values };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DriftFn::PiecewiseLinear { knots, values } => {
                if knots.len() != values.len() {
                    return Err(Error::LengthMismatch {
                        left: knots.len(),
                        right: values.len(),
                    });
                }
                if knots.len() < 2 {
                    return invalid("piecewise_linear needs at least two knots");
                }
                if knots.windows(2).any(|w| !(w[0] < w[1])) {
                    return invalid("piecewise_linear knots must be strictly increasing");
                }
                if knots.iter().chain(values).any(|v| !v.is_finite()) {
                    return invalid("piecewise_linear knots and values must be finite");
                }
            }
            DriftFn::Indicator { lo, hi } if lo > hi => {
                return invalid(format!("indicator interval [{lo}, {hi}) is reversed"))
            }
            _ => {}
        }
        Ok(())
    }

    /// Checks that the function can be evaluated on every node of `grid`.
    pub fn check_on(&self, grid: &TimeGrid) -> Result<()> {
        self.validate()?;
        if let DriftFn::PiecewiseLinear { knots, .. } = self {
            let (first, last) = (knots[0], knots[knots.len() - 1]);
            let tol = 1e-12 * grid.length();
            if first > grid.t_start() + tol || last < grid.t_end() - tol {
                return invalid(format!(
                    "piecewise_linear knots [{first}, {last}] do not span [{}, {}]",
                    grid.t_start(),
                    grid.t_end()
                ));
            }
        }
        Ok(())
    }

    pub fn eval(&self, z: f64) -> f64 {
        match self {
            DriftFn::Zero => 0.0,
            DriftFn::Constant { value } => *value,
            DriftFn::Linear { slope } => slope * z,
            DriftFn::NegParabola => -(z * z),
            DriftFn::Parabola { coef, center } => {
                let d = z - center;
                coef * d * d
            }
            DriftFn::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * z + c),
            DriftFn::PiecewiseLinear { knots, values } => interpolate(knots, values, z),
            DriftFn::Indicator { lo, hi } => {
                if *lo <= z && z < *hi {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn eval_on(&self, grid: &TimeGrid) -> Vec<f64> {
        grid.nodes().into_iter().map(|z| self.eval(z)).collect()
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, DriftFn::Zero)
    }

    /// Nondecreasing at the nodes of `grid` (exact comparison).
    pub fn is_nondecreasing_on(&self, grid: &TimeGrid) -> bool {
        self.eval_on(grid).windows(2).all(|w| w[0] <= w[1])
    }
}

fn interpolate(knots: &[f64], values: &[f64], z: f64) -> f64 {
    let last = knots.len() - 1;
    if z <= knots[0] {
        return values[0];
    }
    if z >= knots[last] {
        return values[last];
    }
    // first knot strictly greater than z
    let hi = knots.partition_point(|&k| k <= z);
    let lo = hi - 1;
    if z == knots[lo] {
        return values[lo];
    }
    let w = (z - knots[lo]) / (knots[hi] - knots[lo]);
    values[lo] + w * (values[hi] - values[lo])
}

/// Shape `g(z)` of a tilt `a * g(z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TiltKind {
    /// `g(z) = z`
    Linear,
    /// `g(z) = max(z, 0)`
    PositivePart,
    /// `g(z) = z^2`
    Quadratic,
    /// `g(z) = psi(z)` for a nondecreasing `psi`.
    Psi { psi: DriftFn },
}

impl TiltKind {
    #[inline]
    pub fn shape(&self, z: f64) -> f64 {
        match self {
            TiltKind::Linear => z,
            TiltKind::PositivePart => z.max(0.0),
            TiltKind::Quadratic => z * z,
            TiltKind::Psi { psi } => psi.eval(z),
        }
    }

    pub fn shape_on(&self, grid: &TimeGrid) -> Vec<f64> {
        grid.nodes().into_iter().map(|z| self.shape(z)).collect()
    }

    pub fn check_on(&self, grid: &TimeGrid) -> Result<()> {
        if let TiltKind::Psi { psi } = self {
            psi.check_on(grid)?;
            if !psi.is_nondecreasing_on(grid) {
                return Err(Error::NonMonotone(format!(
                    "tilt shape {psi:?} decreases somewhere on the grid"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltSpec {
    #[serde(flatten)]
    pub kind: TiltKind,
    pub a: f64,
}

impl TiltSpec {
    pub fn linear(a: f64) -> Self {
        Self {
            kind: TiltKind::Linear,
            a,
        }
    }

    pub fn positive_part(a: f64) -> Self {
        Self {
            kind: TiltKind::PositivePart,
            a,
        }
    }

    pub fn quadratic(a: f64) -> Self {
        Self {
            kind: TiltKind::Quadratic,
            a,
        }
    }

    pub fn psi(a: f64, psi: DriftFn) -> Self {
        Self {
            kind: TiltKind::Psi { psi },
            a,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_evaluate() {
        assert_eq!(DriftFn::Zero.eval(3.0), 0.0);
        assert_eq!(DriftFn::Linear { slope: 2.0 }.eval(1.5), 3.0);
        assert_eq!(DriftFn::NegParabola.eval(-2.0), -4.0);
        let p = DriftFn::Parabola {
            coef: -1.0,
            center: 0.3,
        };
        assert!((p.eval(0.5) + 0.04).abs() < 1e-15);
        let poly = DriftFn::Polynomial {
            coeffs: vec![1.0, 0.0, 2.0],
        };
        assert_eq!(poly.eval(2.0), 9.0);
        let ind = DriftFn::Indicator { lo: 0.0, hi: 0.0 };
        assert_eq!(ind.eval(0.0), 0.0);
    }

    #[test]
    fn piecewise_linear_interpolates() {
        let f = DriftFn::piecewise_linear(vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(f.eval(0.5), 1.0);
        assert_eq!(f.eval(0.25), 0.5);
        assert_eq!(f.eval(0.75), 0.5);
        assert_eq!(f.eval(1.0), 0.0);
    }

    #[test]
    fn piecewise_linear_validation() {
        assert!(DriftFn::piecewise_linear(vec![0.0, 0.0, 1.0], vec![0.0; 3]).is_err());
        assert!(DriftFn::piecewise_linear(vec![0.0, 1.0], vec![0.0]).is_err());
        let f = DriftFn::piecewise_linear(vec![0.2, 1.0], vec![0.0, 1.0]).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        assert!(f.check_on(&grid).is_err());
    }

    #[test]
    fn psi_tilt_requires_monotone() {
        let grid = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let bad = TiltKind::Psi {
            psi: DriftFn::NegParabola,
        };
        assert!(matches!(bad.check_on(&grid), Err(Error::NonMonotone(_))));
        let good = TiltKind::Psi {
            psi: DriftFn::Polynomial {
                coeffs: vec![0.0, 0.0, 1.0],
            },
        };
        assert!(good.check_on(&grid).is_ok());
    }

    #[test]
    fn tilt_serializes_flat() {
        let t = TiltSpec::positive_part(0.5);
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"{"kind":"positive_part","a":0.5}"#);
        let back: TiltSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }
}
