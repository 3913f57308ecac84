//! Subcommand implementations.
//!
//! Every subcommand is described by a serializable config. Running a config
//! yields an [`Execution`]: printable summary lines, a JSON results tree and the
//! contents of every output file. The same path serves fresh runs and replays,
//! so a replay is a re-execution of the recorded config.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use bayeshield_core::{
    analytic_bayes_error, bayes_error_through, estimate_posteriors, finite_difference_gradient_excluding,
    generate_moons, objective_and_gradient_with, pga_maximize, sample_truncated_normal_pair, BandwidthRule,
    EmbeddingMap, LabeledDataset, NormOrder, PerturbationConstraint, PgaConfig, PgaDiagnostic, SimilarityKernel,
    TieBreak, TruncatedNormalPairSpec,
};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};
use crate::io;

/// Quadrature points for the analytic truncated-normal error.
pub const QUADRATURE_POINTS: usize = 20_000;
/// Gradient checks above this relative error fail with exit code 1.
pub const GRADCHECK_THRESHOLD: f64 = 1e-4;

/// A file consumed by a run, pinned by content hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRef {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRef {
    pub fn of(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::user(format!("cannot read {}: {e}", path.display())))?;
        Ok(Self { path: path.to_path_buf(), sha256: io::sha256_hex(&bytes) })
    }

    /// Reads the file, failing if it no longer matches the recorded hash.
    fn read_verified(&self) -> CliResult<String> {
        let text = io::read_text(&self.path)?;
        let actual = io::sha256_hex(text.as_bytes());
        if actual != self.sha256 {
            return Err(CliError::user(format!(
                "{} has changed since it was recorded (sha256 {actual}, expected {})",
                self.path.display(),
                self.sha256
            )));
        }
        Ok(text)
    }

    fn dataset(&self) -> CliResult<LabeledDataset> {
        io::parse_dataset(&self.read_verified()?, &self.path.display().to_string())
    }

    fn embedding(&self) -> CliResult<EmbeddingMap> {
        EmbeddingMap::from_json(&self.read_verified()?)
            .map_err(|e| CliError::user(format!("{}: {e}", self.path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// Fixed bandwidth; when absent the heuristic picks one.
    pub sigma: Option<f64>,
    pub sigma_heuristic: BandwidthRule,
    pub embedding: Option<FileRef>,
}

impl KernelConfig {
    pub fn heuristic(rule: BandwidthRule) -> Self {
        Self { sigma: None, sigma_heuristic: rule, embedding: None }
    }

    fn resolve(&self, data: &LabeledDataset) -> CliResult<(SimilarityKernel, Option<EmbeddingMap>)> {
        let embedding = self.embedding.as_ref().map(FileRef::embedding).transpose()?;
        let sigma = match self.sigma {
            Some(s) => s,
            None => match &embedding {
                Some(m) => self.sigma_heuristic.select(m.embed_points(data.points().view())?.view())?,
                None => self.sigma_heuristic.select(data.points().view())?,
            },
        };
        Ok((SimilarityKernel::gaussian(sigma)?, embedding))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub data: FileRef,
    pub kernel: KernelConfig,
    /// Optional posterior matrix CSV (`p0..p(K-1)`).
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgaOptions {
    pub eps: f64,
    pub norm: NormOrder,
    /// Step size; `None` means `0.1 * eps * n`.
    pub eta: Option<f64>,
    pub iters: usize,
}

impl PgaOptions {
    fn resolve(&self, data: &LabeledDataset, frozen: &[usize]) -> CliResult<(PerturbationConstraint, PgaConfig)> {
        let frozen: BTreeSet<usize> = frozen.iter().copied().collect();
        let constraint = PerturbationConstraint::new(self.norm, self.eps, frozen)?;
        constraint.check_against(data.len())?;
        let eta = self.eta.unwrap_or_else(|| PgaConfig::default_step(self.eps, data.len()));
        Ok((constraint, PgaConfig::new(eta, self.iters)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbConfig {
    pub data: FileRef,
    pub kernel: KernelConfig,
    pub pga: PgaOptions,
    /// Source of the frozen indices, for the record; the indices themselves are in `frozen`.
    pub frozen_file: Option<FileRef>,
    pub frozen: Vec<usize>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    pub data: FileRef,
    pub kernel: KernelConfig,
    pub h: f64,
    /// Rows whose two largest posteriors differ by at most this are treated as ties.
    pub tie_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GenConfig {
    Moons { n: usize, noise: f64, seed: u64, out: PathBuf },
    Truncnorm { n: usize, seed: u64, out: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DemoConfig {
    Truncnorm { n: usize, seed: u64, sigma_heuristic: BandwidthRule, out_dir: PathBuf },
    Moons { n: usize, noise: f64, seed: u64, sigma_heuristic: BandwidthRule, pga: PgaOptions, out_dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum CommandConfig {
    Estimate(EstimateConfig),
    Perturb(PerturbConfig),
    Gradcheck(GradcheckConfig),
    Gen(GenConfig),
    Demo(DemoConfig),
}

impl CommandConfig {
    pub fn name(&self) -> &'static str {
        match self {
            CommandConfig::Estimate(_) => "estimate",
            CommandConfig::Perturb(_) => "perturb",
            CommandConfig::Gradcheck(_) => "gradcheck",
            CommandConfig::Gen(_) => "gen",
            CommandConfig::Demo(_) => "demo",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OutputFile {
    pub role: String,
    pub path: PathBuf,
    pub contents: String,
}

#[derive(Debug, Clone)]
pub struct Execution {
    /// Lines for stdout.
    pub summary: Vec<String>,
    pub results: Value,
    pub outputs: Vec<OutputFile>,
    pub warnings: Vec<String>,
    /// Set when the run completed but its check failed (exit code 1).
    pub failure: Option<String>,
}

impl Execution {
    fn new(results: Value) -> Self {
        Self { summary: Vec::new(), results, outputs: Vec::new(), warnings: Vec::new(), failure: None }
    }

    fn output(&mut self, role: &str, path: PathBuf, contents: String) {
        self.outputs.push(OutputFile { role: role.to_string(), path, contents });
    }
}

pub fn execute(config: &CommandConfig) -> CliResult<Execution> {
    match config {
        CommandConfig::Estimate(c) => run_estimate(c),
        CommandConfig::Perturb(c) => run_perturb(c),
        CommandConfig::Gradcheck(c) => run_gradcheck(c),
        CommandConfig::Gen(c) => run_gen(c),
        CommandConfig::Demo(c) => run_demo(c),
    }
}

fn fallback_warning(rows: &[usize]) -> Option<String> {
    (!rows.is_empty()).then(|| {
        format!("{} posterior row(s) had no similarity mass and used the uniform fallback: {rows:?}", rows.len())
    })
}

fn run_estimate(c: &EstimateConfig) -> CliResult<Execution> {
    let data = c.data.dataset()?;
    let (kernel, embedding) = c.kernel.resolve(&data)?;
    let features = match &embedding {
        Some(m) => data.with_features(m.embed_points(data.points().view())?)?,
        None => data.clone(),
    };
    let est = bayes_error_through(&data, &kernel, embedding.as_ref())?;

    let mut ex = Execution::new(json!({
        "n": data.len(),
        "dim": data.dim(),
        "num_classes": data.num_classes(),
        "sigma": kernel.bandwidth(),
        "bayes_error": est.value,
        "per_sample_max_posterior": est.per_sample_max_posterior,
        "fallback_rows": est.fallback_rows,
    }));
    ex.summary.push(format!("sigma {:.6}", kernel.bandwidth()));
    ex.summary.push(format!("bayes_error {:.6}", est.value));
    ex.summary.push("sample max_posterior".into());
    for (i, m) in est.per_sample_max_posterior.iter().enumerate() {
        ex.summary.push(format!("{i} {m:.6}"));
    }
    ex.warnings.extend(fallback_warning(&est.fallback_rows));
    if let Some(out) = &c.out {
        let post = estimate_posteriors(&features, &kernel);
        ex.output("posteriors", out.clone(), io::format_matrix(post.matrix.values(), "p"));
    }
    Ok(ex)
}

fn diagnostics_to_warnings(diags: &[PgaDiagnostic]) -> Vec<String> {
    diags.iter().map(|d| d.to_string()).collect()
}

struct PerturbRun {
    data: LabeledDataset,
    result: bayeshield_core::PgaResult,
    sigma: f64,
    eta: f64,
}

fn perturb_dataset(
    data: LabeledDataset,
    kernel_cfg: &KernelConfig,
    pga: &PgaOptions,
    frozen: &[usize],
) -> CliResult<PerturbRun> {
    let (kernel, embedding) = kernel_cfg.resolve(&data)?;
    let (constraint, config) = pga.resolve(&data, frozen)?;
    let result = pga_maximize(&data, &kernel, &constraint, &config, embedding.as_ref())?;
    Ok(PerturbRun { data, result, sigma: kernel.bandwidth(), eta: config.step_size })
}

fn perturb_results(run: &PerturbRun, frozen: &[usize]) -> Value {
    let r = &run.result;
    json!({
        "n": run.data.len(),
        "dim": run.data.dim(),
        "num_classes": run.data.num_classes(),
        "sigma": run.sigma,
        "eta": run.eta,
        "frozen_count": frozen.len(),
        "initial_bayes_error": r.initial(),
        "final_bayes_error": r.last(),
        "lift": r.last() / r.initial(),
        "trace": r.trace,
        "step_size_warnings": r.diagnostics.iter().filter(|d| matches!(d, PgaDiagnostic::StepSizeTooLarge { .. })).count(),
    })
}

fn perturb_summary(run: &PerturbRun) -> Vec<String> {
    let r = &run.result;
    vec![
        format!("sigma {:.6}", run.sigma),
        format!("eta {:.6}", run.eta),
        format!("bayes_error before {:.6}", r.initial()),
        format!("bayes_error after {:.6}", r.last()),
        format!("lift {:.6}", r.last() / r.initial()),
    ]
}

fn run_perturb(c: &PerturbConfig) -> CliResult<Execution> {
    if let Some(f) = &c.frozen_file {
        let listed = io::parse_frozen(&f.read_verified()?, &f.path.display().to_string())?;
        if listed.into_iter().collect::<Vec<_>>() != c.frozen {
            return Err(CliError::user(format!("{} does not match the recorded frozen indices", f.path.display())));
        }
    }
    let run = perturb_dataset(c.data.dataset()?, &c.kernel, &c.pga, &c.frozen)?;
    let mut ex = Execution::new(perturb_results(&run, &c.frozen));
    ex.summary = perturb_summary(&run);
    ex.warnings = diagnostics_to_warnings(&run.result.diagnostics);
    ex.output("perturbed", c.out.clone(), io::format_dataset(&run.result.perturbed));
    ex.output("deltas", io::sibling_path(&c.out, "deltas"), io::format_matrix(&run.result.deltas, "f"));
    ex.output("trace", io::sibling_path(&c.out, "trace"), io::format_trace(&run.result.trace));
    Ok(ex)
}

/// Rows whose two largest posteriors are within `tol`.
fn tied_rows(posteriors: &Array2<f64>, tol: f64) -> Vec<usize> {
    posteriors
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(_, row)| {
            let mut v = row.to_vec();
            v.sort_by(|a, b| b.total_cmp(a));
            v.len() >= 2 && v[0] - v[1] <= tol
        })
        .map(|(i, _)| i)
        .collect()
}

fn run_gradcheck(c: &GradcheckConfig) -> CliResult<Execution> {
    if !(c.h.is_finite() && c.h > 0.0) {
        return Err(CliError::user(format!("--h must be positive, got {}", c.h)));
    }
    if !(c.tie_tolerance.is_finite() && c.tie_tolerance >= 0.0) {
        return Err(CliError::user(format!("--tie-tol must be non-negative, got {}", c.tie_tolerance)));
    }
    let data = c.data.dataset()?;
    let (kernel, embedding) = c.kernel.resolve(&data)?;
    let features = match &embedding {
        Some(m) => data.with_features(m.embed_points(data.points().view())?)?,
        None => data.clone(),
    };
    let ties = tied_rows(estimate_posteriors(&features, &kernel).matrix.values(), c.tie_tolerance);
    let analytic = objective_and_gradient_with(&data, &kernel, TieBreak::LowestClassIndex, embedding.as_ref(), &ties)?;
    let fd = finite_difference_gradient_excluding(&data, &kernel, embedding.as_ref(), c.h, &ties)?;

    let max_abs = analytic.gradients.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = fd.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let max_rel = if max_abs == 0.0 { 0.0 } else { max_abs / scale.max(f64::MIN_POSITIVE) };

    let mut ex = Execution::new(json!({
        "n": data.len(),
        "dim": data.dim(),
        "sigma": kernel.bandwidth(),
        "objective": analytic.objective,
        "max_abs_error": max_abs,
        "max_relative_error": max_rel,
        "threshold": GRADCHECK_THRESHOLD,
        "tied_rows": ties,
        "fallback_rows": analytic.fallback_rows,
    }));
    ex.summary.push(format!("sigma {:.6}", kernel.bandwidth()));
    if !ties.is_empty() {
        let msg = format!("argmax ties in rows {ties:?}; their terms are excluded from the comparison");
        ex.summary.push(msg.clone());
        ex.warnings.push(msg);
    }
    ex.warnings.extend(fallback_warning(&analytic.fallback_rows));
    ex.summary.push(format!("max_abs_error {max_abs:.6e}"));
    ex.summary.push(format!("max_relative_error {max_rel:.6e}"));
    if max_rel > GRADCHECK_THRESHOLD {
        ex.failure = Some(format!("max relative error {max_rel:.3e} exceeds {GRADCHECK_THRESHOLD:e}"));
    }
    Ok(ex)
}

fn run_gen(c: &GenConfig) -> CliResult<Execution> {
    let (data, out) = match c {
        GenConfig::Moons { n, noise, seed, out } => (generate_moons(*n, *noise, *seed)?, out),
        GenConfig::Truncnorm { n, seed, out } => {
            (sample_truncated_normal_pair(&TruncatedNormalPairSpec::canonical(), *n, *seed)?, out)
        }
    };
    let mut ex = Execution::new(json!({
        "n": data.len(),
        "dim": data.dim(),
        "class_counts": data.class_counts(),
    }));
    ex.summary.push(format!("wrote {} samples to {}", data.len(), out.display()));
    ex.output("dataset", out.clone(), io::format_dataset(&data));
    Ok(ex)
}

fn run_demo(c: &DemoConfig) -> CliResult<Execution> {
    match c {
        DemoConfig::Truncnorm { n, seed, sigma_heuristic, out_dir } => {
            let spec = TruncatedNormalPairSpec::canonical();
            let analytic = analytic_bayes_error(&spec, QUADRATURE_POINTS)?;
            let data = sample_truncated_normal_pair(&spec, *n, *seed)?;
            let (kernel, _) = KernelConfig::heuristic(*sigma_heuristic).resolve(&data)?;
            let est = bayes_error_through(&data, &kernel, None)?;
            let err = (est.value - analytic).abs();
            let mut ex = Execution::new(json!({
                "n": n,
                "analytic_bayes_error": analytic,
                "sigma": kernel.bandwidth(),
                "estimated_bayes_error": est.value,
                "absolute_error": err,
            }));
            ex.summary.push(format!("analytic bayes_error {analytic:.6} (reference 0.1427)"));
            ex.summary.push(format!("sigma {:.6} ({})", kernel.bandwidth(), sigma_heuristic.name()));
            ex.summary.push(format!("estimated bayes_error {:.6} (reference 0.1426)", est.value));
            ex.summary.push(format!("absolute error {err:.6}"));
            ex.warnings.extend(fallback_warning(&est.fallback_rows));
            ex.output("dataset", out_dir.join("truncnorm.csv"), io::format_dataset(&data));
            Ok(ex)
        }
        DemoConfig::Moons { n, noise, seed, sigma_heuristic, pga, out_dir } => {
            let data = generate_moons(*n, *noise, *seed)?;
            let run = perturb_dataset(data, &KernelConfig::heuristic(*sigma_heuristic), pga, &[])?;
            let mut ex = Execution::new(perturb_results(&run, &[]));
            ex.summary = perturb_summary(&run);
            ex.summary.push("reference: 0.1434 -> 0.1888 at eps 0.25".into());
            ex.warnings = diagnostics_to_warnings(&run.result.diagnostics);
            ex.output("before", out_dir.join("moons.before.csv"), io::format_dataset(&run.data));
            ex.output("after", out_dir.join("moons.after.csv"), io::format_dataset(&run.result.perturbed));
            ex.output("deltas", out_dir.join("moons.deltas.csv"), io::format_matrix(&run.result.deltas, "f"));
            ex.output("trace", out_dir.join("moons.trace.csv"), io::format_trace(&run.result.trace));
            Ok(ex)
        }
    }
}
