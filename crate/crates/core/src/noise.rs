//! Sampling of the objective-perturbation noise matrix.
//!
//! Each column is an independent vector whose direction is uniform on the
//! sphere in `R^d` and whose length follows the Erlang(d, β) law
//! `γ(x) = x^{d-1} e^{-βx} β^d / (d-1)!`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Generator used for every seeded stream in the crate.
pub const RNG_ALGORITHM: &str = "ChaCha20 (rand_chacha), 64-bit seed, one stream per sampled matrix";
/// How standard normal variates are produced.
pub const NORMAL_METHOD: &str = "ziggurat (rand_distr::StandardNormal)";
/// How the Erlang radius is produced.
pub const RADIUS_METHOD: &str = "sum of d exponentials, -ln(U)/beta with U uniform on (0, 1]";

/// Seeded child stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One Erlang(d, β) draw, as the sum of `d` independent Exp(β) draws.
pub fn sample_radius<R: Rng + ?Sized>(d: usize, beta: f64, rng: &mut R) -> f64 {
    assert!(d >= 1, "dimension must be at least 1");
    assert!(beta > 0.0, "rate must be positive");
    let mut total = 0.0;
    for _ in 0..d {
        let u: f64 = 1.0 - rng.random::<f64>();
        total -= u.ln();
    }
    total / beta
}

/// Uniform direction on the unit sphere in `R^d`.
pub fn sample_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let u = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = u.norm();
        if norm > 0.0 {
            return u / norm;
        }
    }
}

/// A noise column: the radius is drawn first, then the direction.
pub fn sample_noise_column<R: Rng + ?Sized>(d: usize, beta: f64, rng: &mut R) -> (DVector<f64>, f64) {
    let radius = sample_radius(d, beta, rng);
    (sample_direction(d, rng) * radius, radius)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseMatrix {
    /// `d × c`.
    #[serde(with = "crate::artifact::matrix_serde")]
    pub b: DMatrix<f64>,
    pub radii: Vec<f64>,
    pub seed: u64,
    pub stream: u64,
}

/// Samples the `d × c` noise matrix from stream `stream` of `seed`.
///
/// `beta = None` is the zero-sensitivity case and yields the zero matrix.
pub fn sample_noise_matrix(d: usize, c: usize, beta: Option<f64>, seed: u64, stream: u64) -> NoiseMatrix {
    let mut b = DMatrix::zeros(d, c);
    let mut radii = vec![0.0; c];
    if let Some(beta) = beta {
        let mut rng = stream_rng(seed, stream);
        for j in 0..c {
            let (col, r) = sample_noise_column(d, beta, &mut rng);
            b.set_column(j, &col);
            radii[j] = r;
        }
    }
    NoiseMatrix { b, radii, seed, stream }
}
