//! Domain types shared by the estimator, the perturbation engine and the
//! generators. Every constructor validates its invariants; once built, values
//! are immutable.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// `n` points in `d`-dimensional feature space with dense class labels `0..K`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    points: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(points: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let (n, d) = points.dim();
        if n < 2 {
            return invalid(format!("a dataset needs at least 2 samples, got {n}"));
        }
        if d < 1 {
            return invalid("a dataset needs at least one feature column");
        }
        if num_classes < 1 {
            return invalid("number of classes must be positive");
        }
        if labels.len() != n {
            return invalid(format!("{} labels for {n} points", labels.len()));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return invalid(format!("label {y} of sample {i} is outside [0, {num_classes})"));
        }
        if let Some(((i, j), v)) = points.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return invalid(format!("feature {j} of sample {i} is not finite ({v})"));
        }
        Ok(Self { points, labels, num_classes })
    }

    /// Builds a dataset with `K = max label + 1`.
    pub fn with_inferred_classes(points: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        let k = labels.iter().max().map_or(1, |m| m + 1);
        Self::new(points, labels, k)
    }

    /// Same labels and class count, new feature matrix.
    pub fn with_points(&self, points: Array2<f64>) -> Result<Self> {
        if points.dim() != self.points.dim() {
            return invalid(format!(
                "replacement points have shape {:?}, expected {:?}",
                points.dim(),
                self.points.dim()
            ));
        }
        Self::new(points, self.labels.clone(), self.num_classes)
    }

    /// Same labels and class count over a feature matrix of any width, e.g. embedded points.
    pub fn with_features(&self, points: Array2<f64>) -> Result<Self> {
        if points.nrows() != self.len() {
            return invalid(format!("{} feature rows for {} samples", points.nrows(), self.len()));
        }
        Self::new(points, self.labels.clone(), self.num_classes)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Gaussian,
}

/// Symmetric similarity `s(a, b)`; for the Gaussian kind
/// `exp(-|a - b|^2 / (2 sigma^2))`, bounded in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityKernel {
    kind: KernelKind,
    bandwidth: f64,
}

impl SimilarityKernel {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return invalid(format!("kernel bandwidth must be positive and finite, got {bandwidth}"));
        }
        Ok(Self { kind: KernelKind::Gaussian, bandwidth })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Unchecked evaluation; callers guarantee equal lengths and finite input.
    #[inline]
    pub(crate) fn eval(&self, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
        let sq: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
        match self.kind {
            KernelKind::Gaussian => (-sq / (2.0 * self.bandwidth * self.bandwidth)).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormOrder {
    L2,
    Linf,
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormOrder::L2 => "l2",
            NormOrder::Linf => "linf",
        })
    }
}

impl FromStr for NormOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(NormOrder::L2),
            "linf" => Ok(NormOrder::Linf),
            other => invalid(format!("unknown norm order {other:?} (expected l2 or linf)")),
        }
    }
}

/// Per-sample budget `|delta_i|_p <= eps`, with frozen samples pinned to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationConstraint {
    norm: NormOrder,
    radius: f64,
    frozen: BTreeSet<usize>,
}

impl PerturbationConstraint {
    pub fn new(norm: NormOrder, radius: f64, frozen: BTreeSet<usize>) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return invalid(format!("perturbation radius must be positive and finite, got {radius}"));
        }
        Ok(Self { norm, radius, frozen })
    }

    pub fn unfrozen(norm: NormOrder, radius: f64) -> Result<Self> {
        Self::new(norm, radius, BTreeSet::new())
    }

    pub fn norm(&self) -> NormOrder {
        self.norm
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn frozen(&self) -> &BTreeSet<usize> {
        &self.frozen
    }

    pub fn is_frozen(&self, i: usize) -> bool {
        self.frozen.contains(&i)
    }

    /// Checks the frozen set against a dataset of `n` samples.
    pub fn check_against(&self, n: usize) -> Result<()> {
        if let Some(&bad) = self.frozen.iter().find(|&&i| i >= n) {
            return invalid(format!("frozen index {bad} is out of range for {n} samples"));
        }
        if self.frozen.len() == n {
            return invalid("every sample is frozen; nothing to perturb");
        }
        Ok(())
    }
}

/// Row-stochastic `n x K` matrix of posterior estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    values: Array2<f64>,
}

impl PosteriorMatrix {
    pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(values: Array2<f64>) -> Result<Self> {
        for (i, row) in values.rows().into_iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return invalid(format!("posterior row {i} has entry {v} outside [0, 1]"));
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > Self::ROW_SUM_TOLERANCE {
                return invalid(format!("posterior row {i} sums to {sum}"));
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowestClassIndex,
}

impl TieBreak {
    /// Index of the maximum entry under this policy.
    pub fn argmax(self, row: ArrayView1<'_, f64>) -> usize {
        match self {
            TieBreak::LowestClassIndex => {
                let mut best = 0;
                for (c, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            }
        }
    }
}

/// Projected-gradient-ascent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgaConfig {
    pub step_size: f64,
    pub max_iterations: usize,
    pub tie_break: TieBreak,
    /// When false the trace holds only the initial and final estimates.
    pub record_trace: bool,
    /// Per-step decrease of the objective tolerated before a step-size diagnostic is raised.
    pub monotonicity_slack: f64,
}

impl PgaConfig {
    pub const DEFAULT_ITERATIONS: usize = 100;
    pub const DEFAULT_SLACK: f64 = 1e-9;

    pub fn new(step_size: f64, max_iterations: usize) -> Result<Self> {
        let cfg = Self {
            step_size,
            max_iterations,
            tie_break: TieBreak::LowestClassIndex,
            record_trace: true,
            monotonicity_slack: Self::DEFAULT_SLACK,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Default step `0.1 * eps * n`: the mean objective's gradient scales as `1/n`,
    /// so this is a step of `0.1 * eps` on the summed objective.
    pub fn default_step(radius: f64, n: usize) -> f64 {
        0.1 * radius * n as f64
    }

    pub fn with_defaults(radius: f64, n: usize) -> Result<Self> {
        Self::new(Self::default_step(radius, n), Self::DEFAULT_ITERATIONS)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return invalid(format!("step size must be positive and finite, got {}", self.step_size));
        }
        if !(self.monotonicity_slack.is_finite() && self.monotonicity_slack >= 0.0) {
            return invalid("monotonicity slack must be non-negative and finite");
        }
        Ok(())
    }
}

/// Non-fatal events observed during a PGA run.
#[derive(Debug, Clone, PartialEq)]
pub enum PgaDiagnostic {
    /// The objective fell by more than the configured slack between two iterates.
    /// Monotone ascent is only guaranteed for `eta` in `(0, 2/kappa)`, with kappa the
    /// Lipschitz constant of the gradient, so a drop suggests the step is too large.
    StepSizeTooLarge { iteration: usize, decrease: f64, step_size: f64 },
    /// Some posterior rows fell back to the uniform distribution (kernel underflow).
    UniformFallback { iteration: usize, rows: Vec<usize> },
}

impl fmt::Display for PgaDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PgaDiagnostic::StepSizeTooLarge { iteration, decrease, step_size } => write!(
                f,
                "step size too large: objective decreased by {decrease:.3e} at iteration {iteration} \
                 (eta = {step_size}); ascent is guaranteed only for eta in (0, 2/kappa)"
            ),
            PgaDiagnostic::UniformFallback { iteration, rows } => write!(
                f,
                "iteration {iteration}: {} posterior row(s) underflowed and used the uniform fallback",
                rows.len()
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgaResult {
    pub perturbed: LabeledDataset,
    /// `perturbed.points = original.points + deltas`, exactly.
    pub deltas: Array2<f64>,
    /// Bayes-error estimates; index 0 is the unperturbed data.
    pub trace: Vec<f64>,
    pub diagnostics: Vec<PgaDiagnostic>,
}

impl PgaResult {
    pub fn initial(&self) -> f64 {
        self.trace[0]
    }

    pub fn last(&self) -> f64 {
        *self.trace.last().expect("trace always holds the initial estimate")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dataset_rejects_invalid_input() {
        assert!(LabeledDataset::new(array![[0.0]], vec![0], 1).is_err());
        assert!(LabeledDataset::new(Array2::zeros((3, 0)), vec![0, 0, 0], 1).is_err());
        assert!(LabeledDataset::new(array![[0.0], [1.0]], vec![0, 2], 2).is_err());
        assert!(LabeledDataset::new(array![[0.0], [f64::NAN]], vec![0, 1], 2).is_err());
        assert!(LabeledDataset::new(array![[0.0], [f64::INFINITY]], vec![0, 1], 2).is_err());
        assert!(LabeledDataset::new(array![[0.0], [1.0]], vec![0], 2).is_err());
        assert!(LabeledDataset::new(array![[0.0], [1.0]], vec![0, 0], 0).is_err());
    }

    #[test]
    fn inferred_class_count() {
        let ds = LabeledDataset::with_inferred_classes(array![[0.0], [1.0], [2.0]], vec![0, 2, 2]).unwrap();
        assert_eq!(ds.num_classes(), 3);
        assert_eq!(ds.class_counts(), vec![1, 0, 2]);
    }

    #[test]
    fn kernel_and_constraint_validation() {
        assert!(SimilarityKernel::gaussian(0.0).is_err());
        assert!(SimilarityKernel::gaussian(-1.0).is_err());
        assert!(SimilarityKernel::gaussian(f64::NAN).is_err());
        assert!(PerturbationConstraint::unfrozen(NormOrder::L2, 0.0).is_err());
        let c = PerturbationConstraint::new(NormOrder::Linf, 0.1, [0, 1].into()).unwrap();
        assert!(c.check_against(2).is_err());
        assert!(c.check_against(3).is_ok());
        let c = PerturbationConstraint::new(NormOrder::Linf, 0.1, [5].into()).unwrap();
        assert!(c.check_against(3).is_err());
    }

    #[test]
    fn posterior_matrix_validation() {
        assert!(PosteriorMatrix::new(array![[0.5, 0.5], [1.0, 0.0]]).is_ok());
        assert!(PosteriorMatrix::new(array![[0.5, 0.6]]).is_err());
        assert!(PosteriorMatrix::new(array![[1.2, -0.2]]).is_err());
    }

    #[test]
    fn tie_break_picks_lowest_index() {
        assert_eq!(TieBreak::LowestClassIndex.argmax(array![0.5, 0.5].view()), 0);
        assert_eq!(TieBreak::LowestClassIndex.argmax(array![0.2, 0.4, 0.4].view()), 1);
        assert_eq!(TieBreak::LowestClassIndex.argmax(array![1.0].view()), 0);
    }

    #[test]
    fn pga_config_validation() {
        assert!(PgaConfig::new(0.0, 10).is_err());
        assert!(PgaConfig::new(1.0, 0).is_ok());
        assert_eq!(PgaConfig::default_step(0.25, 200), 5.0);
        assert!("l3".parse::<NormOrder>().is_err());
        assert_eq!("linf".parse::<NormOrder>().unwrap(), NormOrder::Linf);
    }
}
