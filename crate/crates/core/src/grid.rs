use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `t_start = z_0 < z_1 < ... < z_n = t_end`.
///
/// When `0` is a node, node times are computed as integer offsets from it,
/// so mirrored nodes of a two-sided grid are exact negatives of each other.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_start: f64,
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite()) {
            return Err(Error::InvalidGrid("endpoints must be finite".into()));
        }
        if t_start >= t_end {
            return Err(Error::InvalidGrid(format!(
                "t_start ({t_start}) must be below t_end ({t_end})"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidGrid("n_steps must be at least 1".into()));
        }
        Ok(Self {
            t_start,
            t_end,
            n_steps,
        })
    }

    /// `[-half_width, half_width]` with the origin at node `n_steps / 2`.
    pub fn two_sided(half_width: f64, n_steps: usize) -> Result<Self> {
        if !n_steps.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!(
                "two-sided grids need an even step count, got {n_steps}"
            )));
        }
        if !(half_width > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "half width must be positive, got {half_width}"
            )));
        }
        Self::new(-half_width, half_width, n_steps)
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn length(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn dt(&self) -> f64 {
        self.length() / self.n_steps as f64
    }

    /// Index of the node at `z = 0`, if there is one.
    pub fn origin_index(&self) -> Option<usize> {
        if self.t_start == 0.0 {
            return Some(0);
        }
        if self.t_start > 0.0 || self.t_end < 0.0 {
            return None;
        }
        let k = -self.t_start / self.dt();
        let rounded = k.round();
        if (k - rounded).abs() <= 1e-9 * k.max(1.0) {
            Some(rounded as usize)
        } else {
            None
        }
    }

    pub fn node(&self, i: usize) -> f64 {
        debug_assert!(i <= self.n_steps);
        if i == 0 {
            return self.t_start;
        }
        if i == self.n_steps {
            return self.t_end;
        }
        match self.origin_index() {
            Some(k) => (i as f64 - k as f64) * self.dt(),
            None => self.t_start + i as f64 * self.dt(),
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        let dt = self.dt();
        let origin = self.origin_index();
        (0..=self.n_steps)
            .map(|i| {
                if i == 0 {
                    self.t_start
                } else if i == self.n_steps {
                    self.t_end
                } else {
                    match origin {
                        Some(k) => (i as f64 - k as f64) * dt,
                        None => self.t_start + i as f64 * dt,
                    }
                }
            })
            .collect()
    }

    /// Same span, `2^levels` times as many steps.
    pub fn refined(&self, levels: u32) -> Self {
        Self {
            n_steps: self.n_steps << levels,
            ..*self
        }
    }

    /// Index of the node at `z`, if `z` lies on the grid (up to roundoff).
    pub fn index_of(&self, z: f64) -> Option<usize> {
        let k = (z - self.t_start) / self.dt();
        let rounded = k.round();
        if rounded < 0.0 || rounded > self.n_steps as f64 {
            return None;
        }
        ((k - rounded).abs() <= 1e-9 * k.abs().max(1.0)).then_some(rounded as usize)
    }
}
