//! Deterministic quasi-random point sets.
//!
//! Halton sequences with a Cranley-Patterson shift drawn from a seeded
//! ChaCha generator, so every sample cloud is reproducible from a seed.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PRIMES: [u32; 24] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89];

fn radical_inverse(mut index: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut factor = inv;
    let mut value = 0.0;
    while index > 0 {
        value += (index % b) as f64 * factor;
        index /= b;
        factor *= inv;
    }
    value
}

/// Shifted Halton sequence in `[0, 1)^dim`.
#[derive(Debug, Clone)]
pub struct QuasiRandom {
    shift: Vec<f64>,
    index: u64,
}

impl QuasiRandom {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim <= PRIMES.len(), "quasi-random dimension {dim} too large");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift = (0..dim).map(|_| rng.random::<f64>()).collect();
        Self { shift, index: 0 }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        self.index += 1;
        self.shift
            .iter()
            .zip(PRIMES.iter())
            .map(|(&s, &p)| {
                let v = radical_inverse(self.index, p) + s;
                v - v.floor()
            })
            .collect()
    }
}

/// `count` points in the closed ball `B(center, radius)`, by rejection from the cube.
pub fn ball_points(center: &DVector<f64>, radius: f64, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let n = center.len();
    let mut seq = QuasiRandom::new(n, seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u = seq.next_point();
        let v = DVector::from_iterator(n, u.iter().map(|&c| 2.0 * c - 1.0));
        if v.norm() <= 1.0 {
            out.push(center + v * radius);
        }
    }
    out
}

/// `count` points in the box `prod [-a_i, a_i]`.
pub fn box_points(half_widths: &[f64], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut seq = QuasiRandom::new(half_widths.len(), seed);
    (0..count).map(|_| seq.next_point().iter().zip(half_widths).map(|(&c, &a)| (2.0 * c - 1.0) * a).collect()).collect()
}

/// Mixes a base seed with a stream label so independent sample sets do not overlap.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radical_inverse_base_two() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(2, 2), 0.25);
        assert_eq!(radical_inverse(3, 2), 0.75);
    }

    #[test]
    fn ball_points_stay_inside_and_repeat() {
        let c = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let a = ball_points(&c, 0.3, 100, 7);
        let b = ball_points(&c, 0.3, 100, 7);
        assert_eq!(a, b);
        assert!(a.iter().all(|p| (p - &c).norm() <= 0.3 + 1e-15));
        assert_ne!(a, ball_points(&c, 0.3, 100, 8));
    }

    #[test]
    fn box_points_respect_bounds() {
        let pts = box_points(&[0.1, 2.0], 50, 1);
        assert!(pts.iter().all(|p| p[0].abs() <= 0.1 && p[1].abs() <= 2.0));
    }
}
