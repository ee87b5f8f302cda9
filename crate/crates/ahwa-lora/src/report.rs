//! CSV and markdown emitters plus the artifact manifest.
//!
//! Numbers are written with Rust's shortest round-trip float formatting,
//! UTF-8, Unix newlines. Every artifact a run produces is recorded in
//! `manifest.json` with a content digest, so byte-level reproducibility is
//! checkable from the manifest alone.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::perf::SweepRow;
use crate::train::DriftRow;
use crate::util::digest_bytes;
use crate::Result;

/// Shortest round-trip decimal for a float.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Collects artifacts under one output directory and writes a digest
/// manifest at the end.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    entries: Vec<(String, u64, usize)>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(ArtifactWriter { dir: dir.to_path_buf(), entries: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Write one artifact and record its digest.
    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents)?;
        self.entries.push((name.to_string(), digest_bytes(contents), contents.len()));
        Ok(path)
    }

    /// Write `manifest.json` listing every artifact with its fnv64 digest.
    pub fn finish(mut self) -> Result<Vec<PathBuf>> {
        let mut listed: Vec<serde_json::Value> = Vec::new();
        self.entries.sort_by(|a, b| a.0.cmp(&b.0));
        for (name, digest, bytes) in &self.entries {
            listed.push(serde_json::json!({
                "file": name,
                "fnv64": format!("{digest:016x}"),
                "bytes": bytes,
            }));
        }
        let manifest = serde_json::to_string_pretty(&serde_json::Value::Array(listed))?;
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, manifest.as_bytes())?;
        let mut out: Vec<PathBuf> =
            self.entries.iter().map(|(n, _, _)| self.dir.join(n)).collect();
        out.push(path);
        Ok(out)
    }
}

/// Drift table CSV: `time_label,seconds,metric_mean,metric_std,trials,gdc,seed`.
pub fn csv_drift(rows: &[DriftRow]) -> String {
    let mut s = String::from("time_label,seconds,metric_mean,metric_std,trials,gdc,seed\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.label,
            fmt_f64(r.seconds),
            fmt_f64(r.metric_mean),
            fmt_f64(r.metric_std),
            r.trials,
            r.gdc,
            r.seed
        );
    }
    s
}

/// One-row-per-(shape, integration time) sweep CSV.
pub fn csv_sweep(rows: &[SweepRow]) -> String {
    let mut s = String::from(
        "m,n,t_int_ns,best_t,pmca_aimc_ratio,tcdm_bytes,overhead_factor,tcdm_spill,total_ns\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.m,
            r.n,
            fmt_f64(r.t_int_ns),
            r.best_t,
            fmt_f64(r.ratio),
            r.tcdm_bytes,
            fmt_f64(r.overhead_factor),
            r.tcdm_spill,
            fmt_f64(r.total_ns)
        );
    }
    s
}

/// Generic CSV from a header and stringified rows.
pub fn csv_table(header: &str, rows: &[Vec<String>]) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for row in rows {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Markdown drift table shaped like the published score-after-drift tables:
/// one column per evaluation time.
pub fn markdown_drift_table(title: &str, rows: &[DriftRow]) -> String {
    let mut s = format!("## {title}\n\n");
    let labels: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
    let _ = writeln!(s, "| metric | {} |", labels.join(" | "));
    let _ = writeln!(s, "|---|{}|", labels.iter().map(|_| "---").collect::<Vec<_>>().join("|"));
    let means: Vec<String> = rows.iter().map(|r| format!("{:.4}", r.metric_mean)).collect();
    let _ = writeln!(s, "| accuracy (mean) | {} |", means.join(" | "));
    let stds: Vec<String> = rows.iter().map(|r| format!("{:.4}", r.metric_std)).collect();
    let _ = writeln!(s, "| accuracy (std) | {} |", stds.join(" | "));
    s
}

/// Cell-wise CSV comparison: numeric cells compare within a relative
/// tolerance, everything else must match exactly.
pub fn csv_close(actual: &str, expected: &str, rel_tol: f64) -> std::result::Result<(), String> {
    let a_lines: Vec<&str> = actual.trim_end().lines().collect();
    let e_lines: Vec<&str> = expected.trim_end().lines().collect();
    if a_lines.len() != e_lines.len() {
        return Err(format!("{} lines vs {} lines", a_lines.len(), e_lines.len()));
    }
    for (ln, (al, el)) in a_lines.iter().zip(&e_lines).enumerate() {
        let a_cells: Vec<&str> = al.split(',').collect();
        let e_cells: Vec<&str> = el.split(',').collect();
        if a_cells.len() != e_cells.len() {
            return Err(format!("line {}: cell count differs", ln + 1));
        }
        for (ci, (ac, ec)) in a_cells.iter().zip(&e_cells).enumerate() {
            match (ac.parse::<f64>(), ec.parse::<f64>()) {
                (Ok(av), Ok(ev)) => {
                    let denom = ev.abs().max(1e-12);
                    if (av - ev).abs() / denom > rel_tol {
                        return Err(format!(
                            "line {}, cell {}: {av} vs {ev} beyond rel tol {rel_tol}",
                            ln + 1,
                            ci + 1
                        ));
                    }
                }
                _ => {
                    if ac != ec {
                        return Err(format!("line {}, cell {}: '{ac}' != '{ec}'", ln + 1, ci + 1));
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(label: &str, mean: f64) -> DriftRow {
        DriftRow {
            label: label.into(),
            seconds: 20.0,
            metric_mean: mean,
            metric_std: 0.01,
            trials: 10,
            gdc: true,
            seed: 0,
        }
    }

    #[test]
    fn empty_sweep_is_header_only() {
        let csv = csv_sweep(&[]);
        assert_eq!(csv.lines().count(), 1);
        assert!(csv.starts_with("m,n,"));
    }

    #[test]
    fn drift_csv_has_exactly_the_configured_time_columns() {
        let rows: Vec<DriftRow> =
            ["0s", "1h", "1d", "1w", "1m", "1y", "10y"].iter().map(|l| row(l, 0.9)).collect();
        let csv = csv_drift(&rows);
        assert_eq!(csv.lines().count(), 8); // header + 7
        let md = markdown_drift_table("drift", &rows);
        let header = md.lines().nth(2).unwrap();
        assert_eq!(header.matches('|').count(), 9); // metric + 7 times + 2 edges
    }

    #[test]
    fn tolerant_diff_accepts_small_numeric_drift_and_rejects_text_changes() {
        let a = "x,y\n1.00,foo\n";
        let b = "x,y\n1.05,foo\n";
        assert!(csv_close(a, b, 0.10).is_ok());
        assert!(csv_close(a, b, 0.01).is_err());
        let c = "x,y\n1.00,bar\n";
        assert!(csv_close(a, c, 0.10).is_err());
    }

    #[test]
    fn artifact_writer_produces_digest_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ArtifactWriter::new(dir.path()).unwrap();
        w.write("a.csv", b"x\n1\n").unwrap();
        w.write("b.csv", b"y\n2\n").unwrap();
        let files = w.finish().unwrap();
        assert_eq!(files.len(), 3);
        let manifest = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&manifest).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 2);
        assert!(manifest.contains("fnv64"));
    }
}
