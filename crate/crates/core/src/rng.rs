//! Reproducible, random-access normal streams.
//!
//! Every replicate draws its noise from ChaCha8 keyed by `(master_seed,
//! substream)` with the replicate index as the ChaCha stream id. Variate `j`
//! of a stream always sits at the same ChaCha position, so it can be reached
//! by seeking instead of replaying. This is what lets a windowed bridge
//! refinement reproduce the exact values of a full refinement.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

/// Identifies the noise of one replicate: a pure function of
/// `(master_seed, replicate)`, independent of execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub replicate: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, replicate: u64) -> Self {
        Self {
            master_seed,
            replicate,
        }
    }

    /// Seed for an auxiliary run (pilot studies etc.) that must not share
    /// noise with the main run.
    pub fn derived(master_seed: u64, tag: u64) -> u64 {
        splitmix64(master_seed ^ splitmix64(tag.wrapping_add(0x5EED)))
    }

    pub fn stream(&self, substream: Substream) -> NormalStream {
        NormalStream::new(self.master_seed, substream.tag(), self.replicate)
    }
}

/// Disjoint noise sources used by the samplers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Substream {
    /// Increments for `z >= 0`.
    Right,
    /// Increments for `z < 0`, walking away from the origin.
    Left,
    /// Stationary start and innovations of an Ornstein-Uhlenbeck path.
    OuRight,
    OuLeft,
    /// Midpoint draws of dyadic refinement level `l >= 1`.
    BridgeRight(u32),
    BridgeLeft(u32),
}

impl Substream {
    fn tag(self) -> u64 {
        match self {
            Substream::Right => 1,
            Substream::Left => 2,
            Substream::OuRight => 3,
            Substream::OuLeft => 4,
            Substream::BridgeRight(level) => 0x1_0000 + level as u64,
            Substream::BridgeLeft(level) => 0x2_0000 + level as u64,
        }
    }
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 256-layer ziggurat for the standard normal.
struct Ziggurat {
    /// Layer right edges; `x[0]` is the width of the base strip that also
    /// carries the tail beyond `x[1] = R`, `x[256] = 0`.
    x: [f64; 257],
    /// `f(x[i])` with `f(x) = exp(-x^2 / 2)`.
    f: [f64; 257],
}

const ZIG_R: f64 = 3.654_152_885_361_009;
const ZIG_V: f64 = 0.004_928_673_233_99;

fn gauss_kernel(x: f64) -> f64 {
    (-0.5 * x * x).exp()
}

fn ziggurat() -> &'static Ziggurat {
    static TABLE: OnceLock<Ziggurat> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut x = [0.0; 257];
        let mut f = [0.0; 257];
        x[0] = ZIG_V / gauss_kernel(ZIG_R);
        x[1] = ZIG_R;
        for i in 1..255 {
            x[i + 1] = (-2.0 * (ZIG_V / x[i] + gauss_kernel(x[i])).ln()).sqrt();
        }
        x[256] = 0.0;
        for i in 0..257 {
            f[i] = gauss_kernel(x[i]);
        }
        Ziggurat { x, f }
    })
}

const INV_2_53: f64 = 1.0 / (1u64 << 53) as f64;

#[inline]
fn unit_open(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * INV_2_53
}

/// Standard normal variates addressed by index.
///
/// Variate `j` is decided by the `j`-th `u64` of the ChaCha stream whenever
/// the first ziggurat trial accepts (about 99% of draws); rejected trials
/// continue on a SplitMix64 sequence keyed by `(stream, j)`. Either way the
/// position of variate `j` in the ChaCha stream is fixed.
#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha8Rng,
    key: u64,
    next_index: u64,
}

impl NormalStream {
    pub fn new(master_seed: u64, substream: u64, stream_id: u64) -> Self {
        let mut key = [0u8; 32];
        let mut state = master_seed ^ splitmix64(substream);
        for chunk in key.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream_id);
        Self {
            rng,
            key: splitmix64(state ^ stream_id.rotate_left(32)),
            next_index: 0,
        }
    }

    /// Position the stream so that the next call to [`next`](Self::next)
    /// returns variate `index`.
    pub fn seek(&mut self, index: u64) {
        if index != self.next_index {
            self.rng.set_word_pos(index as u128 * 2);
            self.next_index = index;
        }
    }

    #[inline]
    pub fn next(&mut self) -> f64 {
        let j = self.next_index;
        self.next_index += 1;
        let bits = self.rng.next_u64();
        let zig = ziggurat();
        let i = (bits & 0xFF) as usize;
        let u = 2.0 * unit_open(bits) - 1.0;
        let x = u * zig.x[i];
        if x.abs() < zig.x[i + 1] {
            return x;
        }
        self.slow_path(j, i, u)
    }

    #[cold]
    fn slow_path(&self, j: u64, mut i: usize, mut u: f64) -> f64 {
        let zig = ziggurat();
        let mut state = self.key ^ splitmix64(j);
        let mut draw = || {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            splitmix64(state)
        };
        loop {
            if i == 0 {
                // tail beyond R
                loop {
                    let x = -unit_open(draw()).ln() / ZIG_R;
                    let y = -unit_open(draw()).ln();
                    if 2.0 * y > x * x {
                        return if u < 0.0 { -(ZIG_R + x) } else { ZIG_R + x };
                    }
                }
            }
            let x = u * zig.x[i];
            let v = unit_open(draw());
            if zig.f[i + 1] + v * (zig.f[i] - zig.f[i + 1]) < gauss_kernel(x) {
                return x;
            }
            let bits = draw();
            i = (bits & 0xFF) as usize;
            u = 2.0 * unit_open(bits) - 1.0;
            let x = u * zig.x[i];
            if x.abs() < zig.x[i + 1] {
                return x;
            }
        }
    }

    /// Variate number `index`, leaving the stream positioned after it.
    pub fn at(&mut self, index: u64) -> f64 {
        self.seek(index);
        self.next()
    }

    pub fn fill(&mut self, start: u64, out: &mut [f64]) {
        self.seek(start);
        for v in out.iter_mut() {
            *v = self.next();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seek_matches_sequential() {
        let mut seq = NormalStream::new(42, 7, 3);
        let values: Vec<f64> = (0..33).map(|_| seq.next()).collect();
        let mut ra = NormalStream::new(42, 7, 3);
        for i in [17u64, 0, 32, 5, 6, 1, 31] {
            assert_eq!(
                ra.at(i).to_bits(),
                values[i as usize].to_bits(),
                "index {i}"
            );
        }
    }

    #[test]
    fn streams_differ() {
        let a = NormalStream::new(1, 1, 0).at(0);
        let b = NormalStream::new(1, 1, 1).at(0);
        let c = NormalStream::new(1, 2, 0).at(0);
        let d = NormalStream::new(2, 1, 0).at(0);
        assert!(a != b && a != c && a != d && b != c);
    }

    #[test]
    fn moments_are_standard_normal() {
        let mut s = NormalStream::new(9, 1, 0);
        let n = 200_000;
        let (mut m1, mut m2, mut m4) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let z = s.next();
            m1 += z;
            m2 += z * z;
            m4 += z * z * z * z;
        }
        let n = n as f64;
        assert!((m1 / n).abs() < 4.0 / n.sqrt());
        assert!((m2 / n - 1.0).abs() < 4.0 * 2f64.sqrt() / n.sqrt());
        assert!((m4 / n - 3.0).abs() < 4.0 * 96f64.sqrt() / n.sqrt());
    }

    #[test]
    fn ziggurat_table_is_sane() {
        let z = ziggurat();
        assert!(z.x[0] > z.x[1]);
        assert!(z.x.windows(2).skip(1).all(|w| w[0] > w[1]));
        assert!(z.x[255] > 0.0 && z.x[255] < 0.3, "{}", z.x[255]);
    }

    fn normal_cdf(x: f64) -> f64 {
        // Abramowitz-Stegun 7.1.26 on erf, |error| < 1.5e-7
        let t = 1.0 / (1.0 + 0.327_591_1 * x.abs() / std::f64::consts::SQRT_2);
        let poly = t
            * (0.254_829_592
                + t * (-0.284_496_736
                    + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
        let erf = 1.0 - poly * (-0.5 * x * x).exp();
        if x >= 0.0 {
            0.5 * (1.0 + erf)
        } else {
            0.5 * (1.0 - erf)
        }
    }

    #[test]
    fn kolmogorov_smirnov_against_normal() {
        let mut s = NormalStream::new(11, 3, 2);
        let n = 100_000;
        let mut v: Vec<f64> = (0..n).map(|_| s.next()).collect();
        v.sort_by(f64::total_cmp);
        let d = v
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = normal_cdf(x);
                (c - i as f64 / n as f64)
                    .abs()
                    .max(((i + 1) as f64 / n as f64 - c).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value 1.63 / sqrt(n)
        assert!(d < 1.63 / (n as f64).sqrt(), "KS distance {d}");
    }

    #[test]
    fn tail_frequency() {
        let mut s = NormalStream::new(12, 3, 2);
        let n = 400_000;
        let beyond = (0..n).filter(|_| s.next().abs() > 3.0).count() as f64;
        let p = 0.002_699_796;
        let expect = p * n as f64;
        assert!(
            (beyond - expect).abs() < 4.0 * expect.sqrt(),
            "{beyond} vs {expect}"
        );
    }
}
