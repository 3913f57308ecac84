//! File formats.
//!
//! Dataset CSV, canonical form:
//!
//! ```text
//! # k=2
//! f0,f1,label
//! 0.5,-1,0
//! ```
//!
//! The `# k=` line is optional on input (K defaults to max label + 1) and always
//! written on output. Floats are written in Rust's shortest round-trip form, so
//! reading and rewriting a canonical file reproduces it byte for byte.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use bayeshield_core::LabeledDataset;
use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::user(format!("cannot read {}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::user(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::user(format!("cannot write {}: {e}", path.display())))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn parse_dataset(text: &str, source: &str) -> CliResult<LabeledDataset> {
    let err = |line: usize, col: Option<usize>, msg: String| {
        let at = match col {
            Some(c) => format!("{source}:{line}:{c}"),
            None => format!("{source}:{line}"),
        };
        CliError::user(format!("{at}: {msg}"))
    };

    let mut body = text;
    let mut line_offset = 0;
    let mut declared_k = None;
    if let Some(rest) = text.strip_prefix('#') {
        let (first, remainder) = rest.split_once('\n').unwrap_or((rest, ""));
        let first = first.trim_end_matches('\r').trim();
        let k = first
            .strip_prefix("k=")
            .and_then(|v| v.trim().parse::<usize>().ok())
            .ok_or_else(|| err(1, None, format!("expected `# k=<classes>`, found `#{first}`")))?;
        declared_k = Some(k);
        body = remainder;
        line_offset = 1;
    }

    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let headers = reader.headers().map_err(|e| err(line_offset + 1, None, format!("unreadable header: {e}")))?.clone();
    let d = headers.len().saturating_sub(1);
    if d == 0 {
        return Err(err(line_offset + 1, None, "header needs at least one feature column and `label`".into()));
    }
    for (c, name) in headers.iter().enumerate() {
        let expected = if c == d { "label".to_string() } else { format!("f{c}") };
        if name.trim() != expected {
            return Err(err(line_offset + 1, Some(c + 1), format!("expected column `{expected}`, found `{name}`")));
        }
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize + line_offset).unwrap_or(0);
            err(line, None, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0) + line_offset;
        for (c, field) in record.iter().enumerate() {
            let field = field.trim();
            if c == d {
                let y: usize = field
                    .parse()
                    .map_err(|_| err(line, Some(c + 1), format!("label `{field}` is not a non-negative integer")))?;
                labels.push(y);
            } else {
                let v: f64 = field.parse().map_err(|_| err(line, Some(c + 1), format!("`{field}` is not a number")))?;
                if !v.is_finite() {
                    return Err(err(line, Some(c + 1), format!("`{field}` is not finite")));
                }
                values.push(v);
            }
        }
        if let Some(k) = declared_k {
            if let Some(&y) = labels.last().filter(|&&y| y >= k) {
                return Err(err(line, Some(d + 1), format!("label {y} is not below the declared k={k}")));
            }
        }
    }
    let n = labels.len();
    let points = Array2::from_shape_vec((n, d), values).map_err(|e| CliError::internal(e.to_string()))?;
    let k = declared_k.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    LabeledDataset::new(points, labels, k).map_err(|e| CliError::user(format!("{source}: {e}")))
}

pub fn read_dataset(path: &Path) -> CliResult<(LabeledDataset, String)> {
    let text = read_text(path)?;
    let data = parse_dataset(&text, &path.display().to_string())?;
    Ok((data, sha256_hex(text.as_bytes())))
}

fn header(prefix: &str, count: usize) -> String {
    (0..count).map(|c| format!("{prefix}{c}")).collect::<Vec<_>>().join(",")
}

fn push_row(out: &mut String, values: impl Iterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(',');
        }
        first = false;
        write!(out, "{v}").unwrap();
    }
}

pub fn format_dataset(data: &LabeledDataset) -> String {
    let mut out = format!("# k={}\n{},label\n", data.num_classes(), header("f", data.dim()));
    for (row, y) in data.points().rows().into_iter().zip(data.labels()) {
        push_row(&mut out, row.iter().copied());
        writeln!(out, ",{y}").unwrap();
    }
    out
}

/// Matrix with columns `<prefix>0 .. <prefix>(m-1)`.
pub fn format_matrix(values: &Array2<f64>, prefix: &str) -> String {
    let mut out = header(prefix, values.ncols());
    out.push('\n');
    for row in values.rows() {
        push_row(&mut out, row.iter().copied());
        out.push('\n');
    }
    out
}

pub fn format_trace(trace: &[f64]) -> String {
    let mut out = String::from("iter,bayes_error\n");
    for (t, v) in trace.iter().enumerate() {
        writeln!(out, "{t},{v}").unwrap();
    }
    out
}

/// Parses a trace CSV back into its values.
pub fn parse_trace(text: &str) -> CliResult<Vec<f64>> {
    let mut lines = text.lines();
    if lines.next() != Some("iter,bayes_error") {
        return Err(CliError::user("trace CSV must start with `iter,bayes_error`"));
    }
    lines
        .enumerate()
        .map(|(t, line)| {
            let (iter, v) =
                line.split_once(',').ok_or_else(|| CliError::user(format!("trace line {}: missing value", t + 2)))?;
            if iter.parse::<usize>().ok() != Some(t) {
                return Err(CliError::user(format!("trace line {}: expected iteration {t}", t + 2)));
            }
            v.parse().map_err(|_| CliError::user(format!("trace line {}: `{v}` is not a number", t + 2)))
        })
        .collect()
}

/// One sample index per line; blank lines and `#` comments are skipped.
pub fn parse_frozen(text: &str, source: &str) -> CliResult<BTreeSet<usize>> {
    let mut out = BTreeSet::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let idx = line
            .parse()
            .map_err(|_| CliError::user(format!("{source}:{}:1: `{line}` is not a sample index", k + 1)))?;
        out.insert(idx);
    }
    Ok(out)
}

/// Output file next to `base`: `run.csv` + `deltas` gives `run.deltas.csv`.
pub fn sibling_path(base: &Path, tag: &str) -> std::path::PathBuf {
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    base.with_file_name(format!("{stem}.{tag}.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_round_trip() {
        let text = "# k=3\nf0,f1,label\n0.5,-1,0\n0.00000000000000000001,3.141592653589793,2\n-0,7,1\n";
        let data = parse_dataset(text, "t").unwrap();
        assert_eq!(data.num_classes(), 3);
        assert_eq!(format_dataset(&data), text);
        // Exponent notation is accepted and rewritten in canonical form.
        let loose = parse_dataset("# k=3\nf0,f1,label\n0.5,-1,0\n1e-20,3.141592653589793,2\n-0,7,1\n", "t").unwrap();
        assert_eq!(format_dataset(&loose), text);
    }

    #[test]
    fn class_count_is_inferred_without_comment() {
        let data = parse_dataset("f0,label\n1,0\n2,3\n", "t").unwrap();
        assert_eq!(data.num_classes(), 4);
    }

    #[test]
    fn errors_carry_line_and_column() {
        let e = parse_dataset("# k=2\nf0,f1,label\n1,2,0\n1,x,1\n", "d.csv").unwrap_err();
        assert!(e.to_string().contains("d.csv:4:2"), "{e}");
        let e = parse_dataset("f0,label\n1,0\n1,-1\n", "d.csv").unwrap_err();
        assert!(e.to_string().contains("d.csv:3:2"), "{e}");
        let e = parse_dataset("f0,g,label\n", "d.csv").unwrap_err();
        assert!(e.to_string().contains("d.csv:1:2"), "{e}");
        let e = parse_dataset("# k=2\nf0,label\n1,0\n1,2\n", "d.csv").unwrap_err();
        assert!(e.to_string().contains("d.csv:4:2"), "{e}");
        let e = parse_dataset("f0,label\n1,0\n1,inf\n", "d.csv").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = parse_dataset("f0,label\n1,0\n2\n", "d.csv").unwrap_err();
        assert!(e.to_string().contains("d.csv:3"), "{e}");
    }

    #[test]
    fn trace_round_trip() {
        let trace = vec![0.125, 0.2, 1.0 / 3.0];
        assert_eq!(parse_trace(&format_trace(&trace)).unwrap(), trace);
    }

    #[test]
    fn frozen_file() {
        let set = parse_frozen("3\n\n# skip\n1\n3\n", "f").unwrap();
        assert_eq!(set.into_iter().collect::<Vec<_>>(), vec![1, 3]);
        assert!(parse_frozen("1\n-2\n", "f").is_err());
    }

    #[test]
    fn sibling_names() {
        assert_eq!(sibling_path(Path::new("out/run.csv"), "trace"), Path::new("out/run.trace.csv"));
    }
}
