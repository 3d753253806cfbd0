//! Seeded sampling domains shared by the probabilistic checks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Axis-aligned box in R^n.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxDomain {
    /// Panics if bounds are inconsistent or non-finite.
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> BoxDomain {
        assert_eq!(lo.len(), hi.len(), "box bounds must have equal dimension");
        for (l, h) in lo.iter().zip(&hi) {
            assert!(
                l.is_finite() && h.is_finite() && l <= h,
                "invalid box bounds [{l}, {h}]"
            );
        }
        BoxDomain { lo, hi }
    }

    /// `[-half, half]^dim`.
    pub fn symmetric(half: f64, dim: usize) -> BoxDomain {
        BoxDomain::new(vec![-half; dim], vec![half; dim])
    }

    /// `[center_i - radius, center_i + radius]` in every coordinate.
    pub fn centered(center: &[f64], radius: f64) -> BoxDomain {
        let lo = center.iter().map(|c| c - radius).collect();
        let hi = center.iter().map(|c| c + radius).collect();
        BoxDomain::new(lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (h - l))
            .collect()
    }

    /// One uniform sample.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| if l == h { *l } else { rng.gen_range(*l..*h) })
            .collect()
    }
}

/// The deterministic RNG used by every sampling check in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Sup norm of a point.
pub fn inf_norm(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Euclidean norm of a point.
pub fn euclid_norm(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}
