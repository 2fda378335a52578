//! Counter-based Brownian increments.
//!
//! Every finest-level increment of pedestrian `k` in ensemble member `e` is a
//! pure function of `(seed, e, k, index)`: the ChaCha stream number encodes
//! `(e, k)` and the word position encodes the index. Coarser increments are
//! pairwise sums of finest ones in binary-tree order, so two adjacent
//! increments at level `n + 1` add up bit-exactly to the covering increment at
//! level `n`.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::geometry::Vec2;

/// Stream bit that separates auxiliary uniforms from the Gaussian stream.
const AUX_BIT: u64 = 1 << 31;

fn stream_id(member: u64, ped: u64) -> u64 {
    debug_assert!(member < (1 << 32) && ped < AUX_BIT);
    (member << 32) | ped
}

/// Uniform in `(0, 1]` from the top 53 bits.
fn open_unit(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in `[0, 1)` from the top 53 bits.
fn closed_unit(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Two independent standard normals from two raw words (Box–Muller).
fn normal_pair(a: u64, b: u64) -> Vec2 {
    let r = (-2.0 * open_unit(a).ln()).sqrt();
    let theta = std::f64::consts::TAU * closed_unit(b);
    Vec2::new(r * theta.cos(), r * theta.sin())
}

/// Sum of `xs` by recursive halving.
fn tree_sum(xs: &[Vec2]) -> Vec2 {
    match xs.len() {
        0 => Vec2::ZERO,
        1 => xs[0],
        n => tree_sum(&xs[..n / 2]) + tree_sum(&xs[n / 2..]),
    }
}

/// Brownian motion on `[0, horizon]` sampled on the dyadic grid of
/// `2^finest_level` steps.
#[derive(Clone, Debug)]
pub struct BrownianSource {
    seed: u64,
    horizon: f64,
    finest_level: u32,
    base: ChaCha8Rng,
}

impl BrownianSource {
    pub fn new(seed: u64, horizon: f64, finest_level: u32) -> Self {
        Self {
            seed,
            horizon,
            finest_level,
            base: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn finest_level(&self) -> u32 {
        self.finest_level
    }

    fn finest_scale(&self) -> f64 {
        (self.horizon / (1u64 << self.finest_level) as f64).sqrt()
    }

    fn rng_at(&self, stream: u64, word: u128) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream(stream);
        rng.set_word_pos(word);
        rng
    }

    /// Finest-level increments `first .. first + count` of one pedestrian.
    fn finest(&self, member: u64, ped: u64, first: u64, count: usize) -> Vec<Vec2> {
        let mut rng = self.rng_at(stream_id(member, ped), first as u128 * 4);
        let scale = self.finest_scale();
        (0..count)
            .map(|_| {
                let (a, b) = (rng.next_u64(), rng.next_u64());
                normal_pair(a, b) * scale
            })
            .collect()
    }

    /// Increment over step `step` of the level-`level` grid.
    pub fn increment(&self, member: u64, ped: u64, level: u32, step: u64) -> Vec2 {
        assert!(level <= self.finest_level, "level above the finest level");
        let per = 1usize << (self.finest_level - level);
        tree_sum(&self.finest(member, ped, step * per as u64, per))
    }

    /// Sequential reader of one pedestrian's increments at `level`.
    pub fn stream(&self, member: u64, ped: u64, level: u32) -> IncrementStream {
        assert!(level <= self.finest_level, "level above the finest level");
        IncrementStream {
            rng: self.rng_at(stream_id(member, ped), 0),
            per: 1usize << (self.finest_level - level),
            scale: self.finest_scale(),
            buf: Vec::new(),
        }
    }

    /// Uniform in `(0, 1]` attached to `(member, ped, level, step)`, from a
    /// stream disjoint from the Gaussian one.
    pub fn aux_uniform(&self, member: u64, ped: u64, level: u32, step: u64) -> f64 {
        let word = ((level as u128) << 40 | step as u128) * 2;
        let mut rng = self.rng_at(stream_id(member, ped) | AUX_BIT, word);
        open_unit(rng.next_u64())
    }

    /// Standard normal vector attached to `(member, tag)`, independent of the
    /// Brownian increments; used for random perturbation directions.
    pub fn aux_normal(&self, member: u64, tag: u64, index: u64) -> Vec2 {
        let word = ((1u128 << 60) | (tag as u128) << 32 | index as u128) * 4;
        let mut rng = self.rng_at(stream_id(member, 0) | AUX_BIT, word);
        let (a, b) = (rng.next_u64(), rng.next_u64());
        normal_pair(a, b)
    }
}

pub struct IncrementStream {
    rng: ChaCha8Rng,
    per: usize,
    scale: f64,
    buf: Vec<Vec2>,
}

impl IncrementStream {
    pub fn next_increment(&mut self) -> Vec2 {
        self.buf.clear();
        for _ in 0..self.per {
            let (a, b) = (self.rng.next_u64(), self.rng.next_u64());
            self.buf.push(normal_pair(a, b) * self.scale);
        }
        tree_sum(&self.buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coupling_is_exact() {
        let src = BrownianSource::new(7, 1.0, 12);
        for level in 0..12 {
            for step in [0u64, 1, 5] {
                if step >= 1 << level {
                    continue;
                }
                let coarse = src.increment(3, 2, level, step);
                let a = src.increment(3, 2, level + 1, 2 * step);
                let b = src.increment(3, 2, level + 1, 2 * step + 1);
                assert_eq!(a + b, coarse);
            }
        }
    }

    #[test]
    fn stream_matches_random_access() {
        let src = BrownianSource::new(11, 2.0, 10);
        let mut s = src.stream(4, 1, 7);
        for step in 0..128 {
            assert_eq!(s.next_increment(), src.increment(4, 1, 7, step));
        }
    }

    #[test]
    fn moments() {
        let (horizon, level) = (1.0, 10);
        let src = BrownianSource::new(2024, horizon, level);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sq = 0.0;
        let members = n / 1024 / 2 + 1;
        let mut count = 0usize;
        'outer: for m in 0..members as u64 {
            for ped in 0..2 {
                let mut s = src.stream(m, ped, level);
                for _ in 0..1024 {
                    let d = s.next_increment();
                    for x in [d.x, d.y] {
                        sum += x;
                        sq += x * x;
                        count += 1;
                    }
                    if count >= n {
                        break 'outer;
                    }
                }
            }
        }
        let dt = horizon / 1024.0;
        let mean = sum / count as f64;
        let var = sq / count as f64 - mean * mean;
        let se = (dt / count as f64).sqrt();
        assert!(mean.abs() <= 4.0 * se, "mean {mean}");
        assert!((var / dt - 1.0).abs() <= 0.01, "var {var}");
    }

    #[test]
    fn streams_are_distinct() {
        let src = BrownianSource::new(1, 1.0, 4);
        let a = src.increment(0, 0, 4, 0);
        assert_ne!(a, src.increment(1, 0, 4, 0));
        assert_ne!(a, src.increment(0, 1, 4, 0));
        assert_ne!(a, BrownianSource::new(2, 1.0, 4).increment(0, 0, 4, 0));
        let u = src.aux_uniform(0, 0, 4, 0);
        assert!(u > 0.0 && u <= 1.0);
    }
}
