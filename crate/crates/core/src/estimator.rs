//! Leave-one-out kernel posteriors and the fixed-sample Bayes-error estimate
//!
//! For every sample `i` the posterior of class `c` is the kernel-weighted
//! share of class `c` among all *other* samples:
//!
//! ```text
//! p(c | x_i) = sum_{j != i} [y_j = c] s(x_j, x_i) / sum_{k != i} s(x_k, x_i)
//! ```
//!
//! and the Bayes error is estimated as `1 - mean_i max_c p(c | x_i)`.
//!
//! Rows are reduced in ascending index order, one row per task, so the output
//! is bit-identical for any rayon thread count.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::types::{LabeledDataset, PosteriorMatrix, SimilarityKernel};

/// `exp(-|a - b|^2 / (2 sigma^2))`.
pub fn gaussian_similarity(a: &[f64], b: &[f64], sigma: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), actual: b.len() });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return invalid("similarity arguments must be finite");
    }
    let kernel = SimilarityKernel::gaussian(sigma)?;
    Ok(kernel.eval(ArrayView1::from(a), ArrayView1::from(b)))
}

/// Per-row kernel sums shared by the estimator and the gradient code.
#[derive(Debug, Clone)]
pub(crate) struct KernelSums {
    /// `sum_{k != i} s(x_k, x_i)`
    pub denom: Vec<f64>,
    /// `sum_{j != i, y_j = c} s(x_j, x_i)`, `n x K`
    pub class_sums: Array2<f64>,
    /// Full similarity matrix with a zero diagonal, when requested.
    pub sims: Option<Array2<f64>>,
}

impl KernelSums {
    pub fn compute(
        points: ArrayView2<'_, f64>,
        labels: &[usize],
        num_classes: usize,
        kernel: &SimilarityKernel,
        keep_matrix: bool,
    ) -> Self {
        let n = points.nrows();
        let rows: Vec<(f64, Vec<f64>, Option<Vec<f64>>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let xi = points.row(i);
                let mut denom = 0.0;
                let mut per_class = vec![0.0; num_classes];
                let mut sim_row = keep_matrix.then(|| vec![0.0; n]);
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let s = kernel.eval(points.row(j), xi);
                    denom += s;
                    per_class[labels[j]] += s;
                    if let Some(r) = sim_row.as_mut() {
                        r[j] = s;
                    }
                }
                (denom, per_class, sim_row)
            })
            .collect();

        let mut denom = Vec::with_capacity(n);
        let mut class_sums = Array2::zeros((n, num_classes));
        let mut sims = keep_matrix.then(|| Array2::zeros((n, n)));
        for (i, (d, per_class, sim_row)) in rows.into_iter().enumerate() {
            denom.push(d);
            for (c, v) in per_class.into_iter().enumerate() {
                class_sums[[i, c]] = v;
            }
            if let (Some(m), Some(r)) = (sims.as_mut(), sim_row) {
                for (j, v) in r.into_iter().enumerate() {
                    m[[i, j]] = v;
                }
            }
        }
        Self { denom, class_sums, sims }
    }

    /// Posterior matrix and the rows that fell back to uniform.
    pub fn posteriors(&self) -> (Array2<f64>, Vec<usize>) {
        let (n, k) = self.class_sums.dim();
        let mut values = Array2::zeros((n, k));
        let mut fallback = Vec::new();
        for i in 0..n {
            let d = self.denom[i];
            if d > 0.0 {
                for c in 0..k {
                    values[[i, c]] = self.class_sums[[i, c]] / d;
                }
            } else {
                fallback.push(i);
                values.row_mut(i).fill(1.0 / k as f64);
            }
        }
        (values, fallback)
    }
}

/// Leave-one-out posteriors plus the rows whose kernel denominator underflowed.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    pub matrix: PosteriorMatrix,
    /// Rows replaced by the uniform distribution because `sum_{k != i} s(x_k, x_i)` was 0.
    pub fallback_rows: Vec<usize>,
}

impl Posteriors {
    pub fn has_fallback(&self) -> bool {
        !self.fallback_rows.is_empty()
    }
}

pub fn estimate_posteriors(data: &LabeledDataset, kernel: &SimilarityKernel) -> Posteriors {
    let sums = KernelSums::compute(data.points().view(), data.labels(), data.num_classes(), kernel, false);
    let (values, fallback_rows) = sums.posteriors();
    let matrix = PosteriorMatrix::new(values).expect("kernel posteriors are row-stochastic by construction");
    Posteriors { matrix, fallback_rows }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BayesErrorEstimate {
    pub value: f64,
    pub per_sample_max_posterior: Vec<f64>,
    /// Propagated from the posterior step.
    pub fallback_rows: Vec<usize>,
}

impl BayesErrorEstimate {
    fn from_posteriors(posteriors: &Posteriors) -> Self {
        let per_sample_max_posterior: Vec<f64> = posteriors
            .matrix
            .values()
            .rows()
            .into_iter()
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let n = per_sample_max_posterior.len() as f64;
        let value = 1.0 - per_sample_max_posterior.iter().sum::<f64>() / n;
        Self { value, per_sample_max_posterior, fallback_rows: posteriors.fallback_rows.clone() }
    }
}

pub fn estimate_bayes_error(data: &LabeledDataset, kernel: &SimilarityKernel) -> BayesErrorEstimate {
    BayesErrorEstimate::from_posteriors(&estimate_posteriors(data, kernel))
}

/// Exact-match frequency posterior at `query`.
///
/// Only defined when some sample equals `query` bit for bit, which almost never
/// happens for continuous features; it is kept as a contrast to the kernel estimate.
pub fn naive_posterior(data: &LabeledDataset, query: &[f64]) -> Result<Vec<f64>> {
    if query.len() != data.dim() {
        return Err(Error::DimensionMismatch { expected: data.dim(), actual: query.len() });
    }
    let mut counts = vec![0usize; data.num_classes()];
    let mut total = 0usize;
    for (row, &y) in data.points().rows().into_iter().zip(data.labels()) {
        if row.iter().zip(query).all(|(a, b)| a == b) {
            counts[y] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::UndefinedPosterior);
    }
    Ok(counts.into_iter().map(|c| c as f64 / total as f64).collect())
}

/// Median of all `n (n - 1) / 2` pairwise Euclidean distances.
pub fn median_heuristic_bandwidth(data: &LabeledDataset) -> Result<f64> {
    median_pairwise_distance(data.points().view())
}

pub(crate) fn median_pairwise_distance(points: ArrayView2<'_, f64>) -> Result<f64> {
    let n = points.nrows();
    if n < 2 {
        return invalid("median heuristic needs at least two points");
    }
    let mut dists: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let xi = points.row(i);
            (i + 1..n).map(move |j| {
                let xj = points.row(j);
                xi.iter().zip(xj.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            })
        })
        .collect();
    let m = dists.len();
    let upper = {
        let (_, v, _) = dists.select_nth_unstable_by(m / 2, f64::total_cmp);
        *v
    };
    let median = if m % 2 == 1 {
        upper
    } else {
        let lower = dists[..m / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    if median <= 0.0 {
        return invalid("median pairwise distance is zero (too many identical points); bandwidth would be 0");
    }
    Ok(median)
}

/// Data-driven bandwidth selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthRule {
    /// Median pairwise distance.
    #[default]
    Median,
    /// Median pairwise distance times `n^(-1/(d+4))`, the rate that balances the
    /// squared-bandwidth bias against the `1/sqrt(n sigma^d)` variance term.
    RateScaledMedian,
}

impl BandwidthRule {
    pub fn name(self) -> &'static str {
        match self {
            BandwidthRule::Median => "median",
            BandwidthRule::RateScaledMedian => "rate-scaled-median",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(BandwidthRule::Median),
            "rate-scaled-median" => Ok(BandwidthRule::RateScaledMedian),
            other => invalid(format!("unknown bandwidth heuristic {other:?}")),
        }
    }

    /// Bandwidth for the given points (rows are samples).
    pub fn select(self, points: ArrayView2<'_, f64>) -> Result<f64> {
        let median = median_pairwise_distance(points)?;
        Ok(match self {
            BandwidthRule::Median => median,
            BandwidthRule::RateScaledMedian => {
                let (n, d) = points.dim();
                median * (n as f64).powf(-1.0 / (d as f64 + 4.0))
            }
        })
    }
}
