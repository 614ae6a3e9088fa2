//! Deterministic low-discrepancy point sets.
//!
//! Multistart solvers and sampled inequality probes draw from a Halton
//! sequence shifted by a seed-derived Cranley–Patterson rotation, so the same
//! seed always yields the same points.

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::grid::BoxDomain;

/// Default seed used across the crate when callers don't supply one.
pub const DEFAULT_SEED: u64 = 42;

const PRIMES: [u64; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Rotated Halton sequence in the unit cube.
#[derive(Debug, Clone)]
pub struct Halton {
    dim: usize,
    shift: Vec<f64>,
    index: u64,
}

impl Halton {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift = (0..dim)
            .map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
            .collect();
        Halton { dim, shift, index: 1 }
    }

    pub fn next_unit(&mut self) -> Vec<f64> {
        let i = self.index;
        self.index += 1;
        (0..self.dim)
            .map(|d| {
                let base = PRIMES[d % PRIMES.len()] + 2 * (d / PRIMES.len()) as u64 * 97;
                let u = radical_inverse(i, base) + self.shift[d];
                u - libm::floor(u)
            })
            .collect()
    }

    /// Next point mapped affinely into `domain`.
    pub fn next_in(&mut self, domain: &BoxDomain) -> Vec<f64> {
        let u = self.next_unit();
        u.iter()
            .enumerate()
            .map(|(i, t)| domain.lo()[i] + t * (domain.hi()[i] - domain.lo()[i]))
            .collect()
    }
}

/// `count` starting points in `domain`: the box center first, then Halton points.
pub fn starts(domain: &BoxDomain, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return out;
    }
    out.push(domain.center());
    let mut h = Halton::new(domain.dim(), seed);
    while out.len() < count {
        out.push(h.next_in(domain));
    }
    out
}

/// Deterministic unit directions in ℝⁿ.
///
/// n = 1 gives ±1, n = 2 evenly spaced angles, n = 3 the Fibonacci sphere,
/// higher dimensions normalized Halton points of the cube `[-1, 1]ⁿ`.
pub fn sphere_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    match dim {
        0 => Vec::new(),
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|k| {
                let t = 2.0 * core::f64::consts::PI * k as f64 / count as f64;
                vec![libm::cos(t), libm::sin(t)]
            })
            .collect(),
        3 => {
            let golden = core::f64::consts::PI * (3.0 - libm::sqrt(5.0));
            (0..count)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                    let r = libm::sqrt((1.0 - z * z).max(0.0));
                    let phi = golden * k as f64;
                    vec![r * libm::cos(phi), r * libm::sin(phi), z]
                })
                .collect()
        }
        _ => {
            let mut h = Halton::new(dim, DEFAULT_SEED);
            let mut out = Vec::with_capacity(count);
            while out.len() < count {
                let v: Vec<f64> = h.next_unit().iter().map(|u| 2.0 * u - 1.0).collect();
                let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
                if norm > 1e-3 {
                    out.push(v.iter().map(|x| x / norm).collect());
                }
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_is_reproducible_and_in_range() {
        let mut a = Halton::new(3, 7);
        let mut b = Halton::new(3, 7);
        for _ in 0..100 {
            let p = a.next_unit();
            assert_eq!(p, b.next_unit());
            assert!(p.iter().all(|u| (0.0..1.0).contains(u)));
        }
        let mut c = Halton::new(3, 8);
        assert_ne!(Halton::new(3, 7).next_unit(), c.next_unit());
    }

    #[test]
    fn directions_are_unit() {
        for dim in 1..6 {
            for d in sphere_directions(dim, 64 * dim) {
                let n: f64 = d.iter().map(|x| x * x).sum();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }
}
