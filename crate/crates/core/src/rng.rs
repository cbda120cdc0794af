//! Seeded, index-addressable random streams.
//!
//! Every random draw in the crate comes from a [`Stream`]. Child streams are
//! derived from a parent key and an index, so work split across threads
//! consumes the same numbers no matter how it is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// A 64-bit stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Stream(u64);

impl Stream {
    pub const fn new(seed: u64) -> Self {
        Stream(seed)
    }

    pub const fn key(self) -> u64 {
        self.0
    }

    /// Derives the `index`-th child stream.
    pub fn child(self, index: u64) -> Stream {
        Stream(splitmix64(splitmix64(self.0) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03)))
    }

    /// Derives a child along a path of indices.
    pub fn path(self, indices: &[u64]) -> Stream {
        indices.iter().fold(self, |s, &i| s.child(i))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws a vector with i.i.d. N(0, sigma^2) coordinates.
pub fn gaussian_vector<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize, sigma: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..dim).map(|_| sigma * normal.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn children_are_distinct_and_reproducible() {
        let root = Stream::new(42);
        assert_eq!(root.child(3), root.child(3));
        assert_ne!(root.child(3), root.child(4));
        assert_ne!(root.child(0), root);
        assert_eq!(root.path(&[1, 2]), root.child(1).child(2));
        assert_ne!(root.path(&[1, 2]), root.path(&[2, 1]));

        let a: u64 = root.child(9).rng().random();
        let b: u64 = root.child(9).rng().random();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = Stream::new(7).rng();
        let v = gaussian_vector(&mut rng, 20_000, 2.0);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 0.05, "{mean}");
        assert!((var - 4.0).abs() < 0.15, "{var}");
    }
}
