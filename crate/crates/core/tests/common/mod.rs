#![allow(dead_code)]

use bayeshield_core::{Activation, EmbeddingMap, LabeledDataset, Layer};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform points in `[-scale, scale]^d` with every class present.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize, scale: f64) -> LabeledDataset {
    let points = Array2::from_shape_fn((n, d), |_| rng.random_range(-scale..scale));
    let labels = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
    LabeledDataset::new(points, labels, k).unwrap()
}

pub fn tanh_net(rng: &mut ChaCha8Rng, d_in: usize, hidden: usize, d_out: usize) -> EmbeddingMap {
    let w1 = Array2::from_shape_fn((hidden, d_in), |_| rng.random_range(-1.0..1.0));
    let b1 = Array1::from_shape_fn(hidden, |_| rng.random_range(-0.5..0.5));
    let w2 = Array2::from_shape_fn((d_out, hidden), |_| rng.random_range(-1.0..1.0));
    let b2 = Array1::from_shape_fn(d_out, |_| rng.random_range(-0.5..0.5));
    EmbeddingMap::new(vec![
        Layer::new(w1, b1, Activation::Tanh).unwrap(),
        Layer::new(w2, b2, Activation::Tanh).unwrap(),
    ])
    .unwrap()
}

/// `max |a - b| / max(max |b|, floor)`.
pub fn relative_error(analytic: &Array2<f64>, reference: &Array2<f64>, floor: f64) -> f64 {
    let diff = analytic.iter().zip(reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = reference.iter().map(|v| v.abs()).fold(0.0, f64::max).max(floor);
    diff / scale
}

/// Smallest gap between the top two posteriors over all rows.
pub fn min_argmax_margin(posteriors: &Array2<f64>) -> f64 {
    posteriors
        .rows()
        .into_iter()
        .map(|row| {
            let mut v: Vec<f64> = row.to_vec();
            v.sort_by(|a, b| b.total_cmp(a));
            if v.len() < 2 {
                f64::INFINITY
            } else {
                v[0] - v[1]
            }
        })
        .fold(f64::INFINITY, f64::min)
}
