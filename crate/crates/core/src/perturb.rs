//! Bayes-error maximization by projected gradient ascent.
//!
//! The objective is the leave-one-out estimate
//! `beta(x') = 1 - (1/n) sum_i q_i` with `q_i = p(c_i* | x'_i)` and `c_i*` the
//! row's argmax class, held fixed while differentiating. With
//! `w_ij = ([y_j = c_i*] - q_i) s_ij / (D_i sigma^2)` and `D_i = sum_{k != i} s_ik`,
//! every point appears both as a query center (its own row) and as a neighbor
//! (every other row), which collapses to
//!
//! ```text
//! d beta / d x_m = (1/n) sum_{j != m} (w_mj + w_jm) (x_m - x_j)
//! ```
//!
//! Ascent steps are taken on `beta` directly; this is the same as descending on
//! the mean max-posterior.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::embed::EmbeddingMap;
use crate::error::{invalid, Error, Result};
use crate::estimator::{estimate_bayes_error, KernelSums};
use crate::types::{
    LabeledDataset, NormOrder, PerturbationConstraint, PgaConfig, PgaDiagnostic, PgaResult, SimilarityKernel, TieBreak,
};

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    /// Current Bayes-error estimate (restricted to included rows, if any were excluded).
    pub objective: f64,
    /// `d objective / d x_m`, one row per sample, in the original input space.
    pub gradients: Array2<f64>,
    /// Class used to linearize `max_c` in every row.
    pub argmax_classes: Vec<usize>,
    /// Rows on the uniform fallback; they contribute no gradient.
    pub fallback_rows: Vec<usize>,
}

/// Objective and analytic gradient of the Bayes-error estimate.
pub fn objective_and_gradient(data: &LabeledDataset, kernel: &SimilarityKernel, tie_break: TieBreak) -> GradientReport {
    gradient_in_space(data.points().view(), data.labels(), data.num_classes(), kernel, tie_break, &[])
}

/// General form: similarities through an optional embedding, and an optional set
/// of rows whose terms are dropped from the objective. The restricted objective is
/// `(1/n) sum_{i not excluded} (1 - q_i)`.
pub fn objective_and_gradient_with(
    data: &LabeledDataset,
    kernel: &SimilarityKernel,
    tie_break: TieBreak,
    embedding: Option<&EmbeddingMap>,
    excluded_rows: &[usize],
) -> Result<GradientReport> {
    if let Some(&bad) = excluded_rows.iter().find(|&&i| i >= data.len()) {
        return invalid(format!("excluded row {bad} is out of range for {} samples", data.len()));
    }
    match embedding {
        None => Ok(gradient_in_space(
            data.points().view(),
            data.labels(),
            data.num_classes(),
            kernel,
            tie_break,
            excluded_rows,
        )),
        Some(m) => {
            let embedded = m.embed_points(data.points().view())?;
            let mut report =
                gradient_in_space(embedded.view(), data.labels(), data.num_classes(), kernel, tie_break, excluded_rows);
            report.gradients = pull_back(m, data.points().view(), report.gradients.view());
            Ok(report)
        }
    }
}

/// Bayes-error estimate, evaluated through the embedding when one is given.
pub fn bayes_error_through(
    data: &LabeledDataset,
    kernel: &SimilarityKernel,
    embedding: Option<&EmbeddingMap>,
) -> Result<crate::estimator::BayesErrorEstimate> {
    match embedding {
        None => Ok(estimate_bayes_error(data, kernel)),
        Some(m) => {
            let embedded = data.with_features(m.embed_points(data.points().view())?)?;
            Ok(estimate_bayes_error(&embedded, kernel))
        }
    }
}

fn pull_back(m: &EmbeddingMap, inputs: ArrayView2<'_, f64>, grads: ArrayView2<'_, f64>) -> Array2<f64> {
    let rows: Vec<_> = (0..inputs.nrows()).into_par_iter().map(|i| m.backward(inputs.row(i), grads.row(i))).collect();
    let mut out = Array2::zeros((inputs.nrows(), m.input_dim()));
    for (i, r) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&r);
    }
    out
}

fn gradient_in_space(
    points: ArrayView2<'_, f64>,
    labels: &[usize],
    num_classes: usize,
    kernel: &SimilarityKernel,
    tie_break: TieBreak,
    excluded_rows: &[usize],
) -> GradientReport {
    let (n, d) = points.dim();
    let sums = KernelSums::compute(points, labels, num_classes, kernel, true);
    let sims = sums.sims.as_ref().expect("similarity matrix requested");
    let (post, fallback_rows) = sums.posteriors();

    let mut included = vec![true; n];
    for &i in excluded_rows {
        included[i] = false;
    }
    let argmax_classes: Vec<usize> = post.axis_iter(Axis(0)).map(|r| tie_break.argmax(r)).collect();
    let q: Vec<f64> = (0..n).map(|i| post[[i, argmax_classes[i]]]).collect();

    let n_included = included.iter().filter(|&&b| b).count();
    let q_sum: f64 = (0..n).filter(|&i| included[i]).map(|i| q[i]).sum();
    let objective = n_included as f64 / n as f64 - q_sum / n as f64;

    let inv_sigma2 = 1.0 / (kernel.bandwidth() * kernel.bandwidth());
    let weights: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let denom = sums.denom[i];
            if !included[i] || denom <= 0.0 {
                return vec![0.0; n];
            }
            let c = argmax_classes[i];
            (0..n)
                .map(|j| {
                    if j == i {
                        0.0
                    } else {
                        let indicator = if labels[j] == c { 1.0 } else { 0.0 };
                        (indicator - q[i]) * sims[[i, j]] / denom * inv_sigma2
                    }
                })
                .collect()
        })
        .collect();

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|m| {
            let mut g = vec![0.0; d];
            let xm = points.row(m);
            for (j, w_mj) in weights[m].iter().enumerate() {
                if j == m {
                    continue;
                }
                let w = w_mj + weights[j][m];
                if w == 0.0 {
                    continue;
                }
                for (k, (a, b)) in xm.iter().zip(points.row(j).iter()).enumerate() {
                    g[k] += w * (a - b);
                }
            }
            g.iter().map(|v| v / n as f64).collect()
        })
        .collect();
    let mut gradients = Array2::zeros((n, d));
    for (i, r) in rows.into_iter().enumerate() {
        for (k, v) in r.into_iter().enumerate() {
            gradients[[i, k]] = v;
        }
    }

    GradientReport { objective, gradients, argmax_classes, fallback_rows }
}

/// Euclidean norm, computed with scaling so it does not overflow.
pub fn l2_norm(v: &[f64]) -> f64 {
    let scale = linf_norm(v);
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale * v.iter().map(|x| (x / scale) * (x / scale)).sum::<f64>().sqrt()
}

pub fn linf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn norm_of(v: &[f64], order: NormOrder) -> f64 {
    match order {
        NormOrder::L2 => l2_norm(v),
        NormOrder::Linf => linf_norm(v),
    }
}

/// Euclidean projection of `delta` onto the `p`-ball of radius `eps`.
pub fn project(delta: &[f64], constraint: &PerturbationConstraint) -> Result<Vec<f64>> {
    if delta.iter().any(|v| !v.is_finite()) {
        return invalid("cannot project a non-finite perturbation");
    }
    let mut out = delta.to_vec();
    project_in_place(&mut out, constraint.norm(), constraint.radius());
    Ok(out)
}

pub(crate) fn project_in_place(delta: &mut [f64], norm: NormOrder, eps: f64) {
    match norm {
        NormOrder::Linf => {
            for v in delta.iter_mut() {
                *v = (-eps).max(v.min(eps));
            }
        }
        NormOrder::L2 => {
            let len = l2_norm(delta);
            if len <= eps {
                return;
            }
            let original: Vec<f64> = delta.to_vec();
            let mut factor = eps / len;
            loop {
                for (o, v) in delta.iter_mut().zip(&original) {
                    *o = v * factor;
                }
                // Rounding can leave the rescaled vector an ulp outside the ball;
                // shrink until it is inside so a second projection is a no-op.
                if l2_norm(delta) <= eps {
                    break;
                }
                factor *= 1.0 - f64::EPSILON;
            }
        }
    }
}

/// Projected gradient ascent on the Bayes-error estimate.
pub fn pga_maximize(
    data: &LabeledDataset,
    kernel: &SimilarityKernel,
    constraint: &PerturbationConstraint,
    config: &PgaConfig,
    embedding: Option<&EmbeddingMap>,
) -> Result<PgaResult> {
    pga_maximize_observed(data, kernel, constraint, config, embedding, |_, _| {})
}

/// [`pga_maximize`] with a callback receiving `(iteration, deltas)` after every update.
pub fn pga_maximize_observed(
    data: &LabeledDataset,
    kernel: &SimilarityKernel,
    constraint: &PerturbationConstraint,
    config: &PgaConfig,
    embedding: Option<&EmbeddingMap>,
    mut observer: impl FnMut(usize, &Array2<f64>),
) -> Result<PgaResult> {
    config.validate()?;
    constraint.check_against(data.len())?;
    if let Some(m) = embedding {
        if m.input_dim() != data.dim() {
            return Err(Error::DimensionMismatch { expected: data.dim(), actual: m.input_dim() });
        }
    }

    let original = data.points();
    let (n, d) = original.dim();
    let eps = constraint.radius();
    let eta = config.step_size;

    let mut current = original.clone();
    let mut deltas = Array2::<f64>::zeros((n, d));
    let mut objectives = Vec::with_capacity(config.max_iterations + 1);
    let mut diagnostics = Vec::new();
    let mut candidate = vec![0.0; d];

    for t in 0..config.max_iterations {
        let state = data.with_points(current.clone())?;
        let report = objective_and_gradient_with(&state, kernel, config.tie_break, embedding, &[])?;
        if !report.fallback_rows.is_empty() {
            diagnostics.push(PgaDiagnostic::UniformFallback { iteration: t, rows: report.fallback_rows.clone() });
        }
        record_objective(&mut objectives, &mut diagnostics, report.objective, t, config);

        for i in 0..n {
            // Frozen rows never take a step, so their deltas stay exactly zero.
            if constraint.is_frozen(i) {
                continue;
            }
            for k in 0..d {
                candidate[k] = current[[i, k]] + eta * report.gradients[[i, k]] - original[[i, k]];
            }
            project_in_place(&mut candidate, constraint.norm(), eps);
            for k in 0..d {
                deltas[[i, k]] = candidate[k];
                current[[i, k]] = original[[i, k]] + candidate[k];
            }
        }
        observer(t + 1, &deltas);
    }

    let perturbed = data.with_points(current)?;
    let final_estimate = bayes_error_through(&perturbed, kernel, embedding)?;
    if !final_estimate.fallback_rows.is_empty() {
        diagnostics.push(PgaDiagnostic::UniformFallback {
            iteration: config.max_iterations,
            rows: final_estimate.fallback_rows.clone(),
        });
    }
    record_objective(&mut objectives, &mut diagnostics, final_estimate.value, config.max_iterations, config);

    let trace = if config.record_trace || objectives.len() <= 2 {
        objectives
    } else {
        vec![objectives[0], objectives[objectives.len() - 1]]
    };
    Ok(PgaResult { perturbed, deltas, trace, diagnostics })
}

fn record_objective(
    objectives: &mut Vec<f64>,
    diagnostics: &mut Vec<PgaDiagnostic>,
    value: f64,
    iteration: usize,
    config: &PgaConfig,
) {
    if let Some(&prev) = objectives.last() {
        if value < prev - config.monotonicity_slack {
            diagnostics.push(PgaDiagnostic::StepSizeTooLarge {
                iteration,
                decrease: prev - value,
                step_size: config.step_size,
            });
        }
    }
    objectives.push(value);
}
