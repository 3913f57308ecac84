//! Synthetic datasets with known ground truth, and the finite-difference
//! gradient oracle.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(seed)`; Gaussian noise
//! is drawn with `rand_distr::StandardNormal`. Both are portable, so a seed
//! reproduces the same dataset on every platform and thread count.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::embed::EmbeddingMap;
use crate::error::{invalid, Result};
use crate::perturb::bayes_error_through;
use crate::types::{LabeledDataset, SimilarityKernel};

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Normal distribution truncated to `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormal {
    pub mean: f64,
    pub std_dev: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncatedNormal {
    fn validate(&self) -> Result<()> {
        let all_finite = [self.mean, self.std_dev, self.lower, self.upper].iter().all(|v| v.is_finite());
        if !all_finite {
            return invalid("truncated normal parameters must be finite");
        }
        if self.std_dev <= 0.0 {
            return invalid(format!("standard deviation must be positive, got {}", self.std_dev));
        }
        if self.lower >= self.upper {
            return invalid(format!("empty truncation interval [{}, {}]", self.lower, self.upper));
        }
        if self.mass_bounds().1 - self.mass_bounds().0 <= 0.0 {
            return invalid("truncation interval carries no probability mass");
        }
        Ok(())
    }

    fn standard() -> Normal {
        Normal::standard()
    }

    /// Standard-normal CDF at the two truncation points.
    fn mass_bounds(&self) -> (f64, f64) {
        let n = Self::standard();
        (n.cdf((self.lower - self.mean) / self.std_dev), n.cdf((self.upper - self.mean) / self.std_dev))
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.lower || x > self.upper {
            return 0.0;
        }
        let (lo, hi) = self.mass_bounds();
        let z = (x - self.mean) / self.std_dev;
        (-0.5 * z * z).exp() / (self.std_dev * (2.0 * std::f64::consts::PI).sqrt() * (hi - lo))
    }

    /// Inverse-CDF sample from a uniform draw `u` in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let (lo, hi) = self.mass_bounds();
        let p = lo + u * (hi - lo);
        let x = self.mean + self.std_dev * Self::standard().inverse_cdf(p);
        x.clamp(self.lower, self.upper)
    }
}

/// Two-class mixture of truncated normals on the real line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormalPairSpec {
    pub classes: [TruncatedNormal; 2],
    pub priors: [f64; 2],
}

impl TruncatedNormalPairSpec {
    /// Unit-variance normals at 0 and 1.9975, each truncated to two standard
    /// deviations around its mean, equal priors. Bayes error 0.1427.
    pub fn canonical() -> Self {
        const SHIFT: f64 = 1.9975;
        Self {
            classes: [
                TruncatedNormal { mean: 0.0, std_dev: 1.0, lower: -2.0, upper: 2.0 },
                TruncatedNormal { mean: SHIFT, std_dev: 1.0, lower: SHIFT - 2.0, upper: SHIFT + 2.0 },
            ],
            priors: [0.5, 0.5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.classes {
            c.validate()?;
        }
        let [p0, p1] = self.priors;
        if !(p0.is_finite() && p1.is_finite()) || p0 < 0.0 || p1 < 0.0 {
            return invalid("class priors must be finite and non-negative");
        }
        if (p0 + p1 - 1.0).abs() > 1e-12 {
            return invalid(format!("class priors sum to {}, not 1", p0 + p1));
        }
        Ok(())
    }

    /// Same distribution with class indices exchanged.
    pub fn swapped(&self) -> Self {
        Self { classes: [self.classes[1], self.classes[0]], priors: [self.priors[1], self.priors[0]] }
    }

    fn weighted_min(&self, x: f64) -> f64 {
        (self.priors[0] * self.classes[0].pdf(x)).min(self.priors[1] * self.classes[1].pdf(x))
    }

    fn weighted_diff(&self, x: f64) -> f64 {
        self.priors[0] * self.classes[0].pdf(x) - self.priors[1] * self.classes[1].pdf(x)
    }
}

/// `integral of min(pi_0 f_0, pi_1 f_1)` by composite Simpson quadrature.
///
/// The integrand is split at the truncation points and at every crossing of the
/// two weighted densities (located by bisection on a grid), so each piece is
/// smooth and Simpson converges at its full order.
pub fn analytic_bayes_error(spec: &TruncatedNormalPairSpec, quadrature_points: usize) -> Result<f64> {
    spec.validate()?;
    if quadrature_points < 2 {
        return invalid("need at least 2 quadrature points");
    }
    let lo = spec.classes[0].lower.min(spec.classes[1].lower);
    let hi = spec.classes[0].upper.max(spec.classes[1].upper);

    let mut breaks = vec![lo, hi];
    for c in &spec.classes {
        breaks.push(c.lower);
        breaks.push(c.upper);
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let mut cuts = Vec::new();
    for seg in breaks.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        cuts.push(a);
        // Scan strictly inside the segment; the densities jump at its ends.
        let cells = quadrature_points.max(16);
        let h = (b - a) / cells as f64;
        let inner = |k: usize| a + h * k as f64;
        let mut prev_x = a + 0.5 * h * 1e-6;
        let mut prev = spec.weighted_diff(prev_x);
        for k in 1..=cells {
            let x = if k == cells { b - 0.5 * h * 1e-6 } else { inner(k) };
            let v = spec.weighted_diff(x);
            if v == 0.0 {
                if prev != 0.0 {
                    cuts.push(x);
                }
            } else if prev != 0.0 && (prev < 0.0) != (v < 0.0) {
                cuts.push(bisect(|t| spec.weighted_diff(t), prev_x, x));
            }
            prev_x = x;
            prev = v;
        }
    }
    cuts.push(hi);

    let span = hi - lo;
    let mut total = 0.0;
    for seg in cuts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        if b <= a {
            continue;
        }
        let mut m = ((quadrature_points as f64 * (b - a) / span).ceil() as usize).max(2);
        if m % 2 == 1 {
            m += 1;
        }
        total += simpson_open_ends(|x| spec.weighted_min(x), a, b, m);
    }
    Ok(total)
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let fa_neg = f(a) < 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid == a || mid == b {
            break;
        }
        if (f(mid) < 0.0) == fa_neg {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Simpson's rule with the endpoints evaluated as one-sided limits, so a
/// density that jumps exactly at a truncation point is sampled from inside.
fn simpson_open_ends(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let nudge = (b - a) * 1e-13;
    let mut sum = f(a + nudge) + f(b - nudge);
    for k in 1..m {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + h * k as f64);
    }
    sum * h / 3.0
}

/// Draws each label from the priors, then the feature by inverse CDF.
pub fn sample_truncated_normal_pair(spec: &TruncatedNormalPairSpec, n: usize, seed: u64) -> Result<LabeledDataset> {
    spec.validate()?;
    if n < 2 {
        return invalid(format!("sample size must be at least 2, got {n}"));
    }
    let mut rng = rng_from_seed(seed);
    let mut points = Array2::zeros((n, 1));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = if rng.random::<f64>() < spec.priors[0] { 0 } else { 1 };
        points[[i, 0]] = spec.classes[class].quantile(rng.random::<f64>());
        labels.push(class);
    }
    LabeledDataset::new(points, labels, 2)
}

/// Two interleaving half circles: class 0 is the upper unit half circle at the
/// origin, class 1 the lower one centered at `(1, 0.5)`. Angles are evenly
/// spaced over `[0, pi]`, class 0 rows first, then isotropic Gaussian noise.
pub fn generate_moons(n: usize, noise: f64, seed: u64) -> Result<LabeledDataset> {
    if n < 2 || n % 2 == 1 {
        return invalid(format!("moons needs an even sample size of at least 2, got {n}"));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return invalid(format!("noise must be non-negative, got {noise}"));
    }
    let half = n / 2;
    let angle = |k: usize| {
        if half == 1 {
            0.0
        } else {
            std::f64::consts::PI * k as f64 / (half - 1) as f64
        }
    };
    let mut points = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for k in 0..half {
        let t = angle(k);
        points[[k, 0]] = t.cos();
        points[[k, 1]] = t.sin();
        labels.push(0);
    }
    for k in 0..half {
        let t = angle(k);
        points[[half + k, 0]] = 1.0 - t.cos();
        points[[half + k, 1]] = 0.5 - t.sin();
        labels.push(1);
    }
    if noise > 0.0 {
        let mut rng = rng_from_seed(seed);
        for v in points.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += noise * z;
        }
    }
    LabeledDataset::new(points, labels, 2)
}

/// Central differences of the Bayes-error estimate with respect to every coordinate.
pub fn finite_difference_gradient(
    data: &LabeledDataset,
    kernel: &SimilarityKernel,
    embedding: Option<&EmbeddingMap>,
    h: f64,
) -> Result<Array2<f64>> {
    finite_difference_gradient_excluding(data, kernel, embedding, h, &[])
}

/// Central differences of `(1/n) sum_{i not excluded} (1 - max_c p(c | x_i))`.
pub fn finite_difference_gradient_excluding(
    data: &LabeledDataset,
    kernel: &SimilarityKernel,
    embedding: Option<&EmbeddingMap>,
    h: f64,
    excluded_rows: &[usize],
) -> Result<Array2<f64>> {
    if !(h.is_finite() && h > 0.0) {
        return invalid(format!("finite-difference step must be positive, got {h}"));
    }
    let n = data.len();
    if let Some(&bad) = excluded_rows.iter().find(|&&i| i >= n) {
        return invalid(format!("excluded row {bad} is out of range for {n} samples"));
    }
    let mut included = vec![true; n];
    for &i in excluded_rows {
        included[i] = false;
    }
    let objective = |points: Array2<f64>| -> Result<f64> {
        let est = bayes_error_through(&data.with_points(points)?, kernel, embedding)?;
        let kept: f64 =
            est.per_sample_max_posterior.iter().zip(&included).filter(|(_, &keep)| keep).map(|(m, _)| 1.0 - m).sum();
        Ok(kept / n as f64)
    };

    let mut grad = Array2::zeros((n, data.dim()));
    for i in 0..n {
        for k in 0..data.dim() {
            let mut plus = data.points().clone();
            plus[[i, k]] += h;
            let mut minus = data.points().clone();
            minus[[i, k]] -= h;
            grad[[i, k]] = (objective(plus)? - objective(minus)?) / (2.0 * h);
        }
    }
    Ok(grad)
}
