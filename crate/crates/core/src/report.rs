//! Result files. Floats are written in Rust's shortest round-trip form so
//! every file is a pure function of the computed values.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{OutputFormat, RunConfig};
use crate::error::{Error, Result};
use crate::experiments::{ModelComparison, OracleRow, RunResult, SweepReport};
use crate::observables::ObservableRecord;

pub const SERIES_HEADER: &str = "t,norm2,mean_x,mean_p,dpdt,f_boundary,f_potential,transmitted";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Creates `dir` and proves it writable before any computation starts.
pub fn preflight(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let probe = dir.join(".chanphase-write-test");
    fs::write(&probe, b"").map_err(io_err(&probe))?;
    fs::remove_file(&probe).map_err(io_err(&probe))
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// The series as CSV text, absent forces as empty cells.
pub fn series_csv(series: &[ObservableRecord]) -> String {
    let mut out = String::with_capacity(64 * (series.len() + 1));
    out.push_str(SERIES_HEADER);
    out.push('\n');
    for r in series {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            num(r.t),
            num(r.norm2),
            num(r.mean_x),
            num(r.mean_p),
            num(r.dpdt),
            opt(r.f_boundary),
            opt(r.f_potential),
            num(r.transmitted)
        );
    }
    out
}

/// Parses [`series_csv`] output back into records.
pub fn parse_series_csv(text: &str) -> Result<Vec<ObservableRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(SERIES_HEADER) {
        return Err(Error::invalid("series CSV header mismatch"));
    }
    lines
        .enumerate()
        .map(|(n, line)| {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 8 {
                return Err(Error::invalid(format!("row {}: expected 8 cells, got {}", n + 1, cells.len())));
            }
            let f = |k: usize| -> Result<f64> {
                cells[k]
                    .parse()
                    .map_err(|_| Error::invalid(format!("row {}: bad number `{}`", n + 1, cells[k])))
            };
            let o = |k: usize| -> Result<Option<f64>> { if cells[k].is_empty() { Ok(None) } else { f(k).map(Some) } };
            Ok(ObservableRecord {
                t: f(0)?,
                norm2: f(1)?,
                mean_x: f(2)?,
                mean_p: f(3)?,
                dpdt: f(4)?,
                f_boundary: o(5)?,
                f_potential: o(6)?,
                transmitted: f(7)?,
            })
        })
        .collect()
}

/// SHA-256 of the config text, hex encoded.
pub fn config_hash(text: &str) -> String {
    format!("{:x}", Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: String,
    pub config_sha256: String,
    pub wall_clock_seconds: f64,
    pub files: Vec<String>,
}

/// Where and how to write.
#[derive(Debug, Clone)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub formats: Vec<OutputFormat>,
    /// Text the run was configured from, hashed into the manifest.
    pub config_text: String,
}

impl OutputSpec {
    pub fn new(dir: impl Into<PathBuf>, formats: &[OutputFormat], config_text: impl Into<String>) -> Self {
        Self {
            dir: dir.into(),
            formats: formats.to_vec(),
            config_text: config_text.into(),
        }
    }

    fn wants(&self, f: OutputFormat) -> bool {
        self.formats.contains(&f)
    }
}

struct Writer<'a> {
    spec: &'a OutputSpec,
    files: Vec<String>,
}

impl Writer<'_> {
    fn put(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.spec.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&path, contents).map_err(io_err(&path))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("results serialise");
        text.push('\n');
        self.put(name, &text)
    }

    fn finish(mut self, experiment: &str, elapsed: Duration) -> Result<Vec<String>> {
        let manifest = Manifest {
            tool: "chanphase",
            version: env!("CARGO_PKG_VERSION"),
            experiment: experiment.into(),
            config_sha256: config_hash(&self.spec.config_text),
            wall_clock_seconds: elapsed.as_secs_f64(),
            files: self.files.clone(),
        };
        self.json("manifest.json", &manifest)?;
        Ok(self.files)
    }
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    experiment: &'a str,
    config: &'a RunConfig,
    #[serde(flatten)]
    result: &'a T,
}

/// `series.csv`, `summary.json` and `manifest.json` for one run.
pub fn emit_run(result: &RunResult, kind: &str, spec: &OutputSpec, elapsed: Duration) -> Result<Vec<String>> {
    let mut w = Writer {
        spec,
        files: Vec::new(),
    };
    if spec.wants(OutputFormat::Csv) {
        w.put("series.csv", &series_csv(&result.series))?;
    }
    if spec.wants(OutputFormat::Json) {
        w.json("summary.json", result)?;
    }
    w.finish(kind, elapsed)
}

pub const SWEEP_HEADER: &str = "axis,p,ell,a,energy,delta_phi_sim,delta_phi_principal,delta_phi_exact_mode,\
delta_phi_approx,delta_phi_oracle_1d,overlap_magnitude,p_plateau,p_exit,ehrenfest_residual,nx,x0,error";

pub fn sweep_csv(report: &SweepReport) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in report.tables.iter().flat_map(|t| &t.rows) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.axis.name(),
            num(r.p),
            num(r.ell),
            num(r.a),
            num(r.energy),
            opt(r.delta_phi_sim),
            opt(r.delta_phi_principal),
            num(r.delta_phi_exact_mode),
            num(r.delta_phi_approx),
            num(r.delta_phi_oracle_1d),
            opt(r.overlap_magnitude),
            opt(r.p_plateau),
            opt(r.p_exit),
            opt(r.ehrenfest_residual),
            r.nx,
            num(r.x0),
            csv_text(r.error.as_deref().unwrap_or(""))
        );
    }
    out
}

fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `sweep.csv`, per-member series under `series/`, `summary.json` and
/// `manifest.json`.
pub fn emit_sweep(report: &SweepReport, config: &RunConfig, spec: &OutputSpec, elapsed: Duration) -> Result<Vec<String>> {
    let mut w = Writer {
        spec,
        files: Vec::new(),
    };
    if spec.wants(OutputFormat::Csv) {
        w.put("sweep.csv", &sweep_csv(report))?;
        for t in &report.tables {
            for (k, r) in t.rows.iter().enumerate() {
                if !r.series.is_empty() {
                    w.put(&format!("series/{}-{k}.csv", t.axis.name()), &series_csv(&r.series))?;
                }
            }
        }
    }
    if spec.wants(OutputFormat::Json) {
        w.json(
            "summary.json",
            &Summary {
                experiment: "sweep",
                config,
                result: report,
            },
        )?;
    }
    w.finish("sweep", elapsed)
}

pub const COMPARISON_HEADER: &str =
    "label,model,delta_phi_sim,p_plateau,entry_impulse,exit_impulse,net_impulse,ehrenfest_residual,peak_force,\
entry_quarter,entry_three_quarter,transmitted_final,error";

pub fn comparison_csv(cmp: &ModelComparison) -> String {
    let mut out = String::from(COMPARISON_HEADER);
    out.push('\n');
    for r in &cmp.rows {
        let [q1, q3] = r.window_sensitivity.map_or([None, None], |[a, b]| [Some(a), Some(b)]);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            csv_text(&r.label),
            r.model.name(),
            opt(r.delta_phi_sim),
            opt(r.p_plateau),
            opt(r.entry_impulse),
            opt(r.exit_impulse),
            opt(r.net_impulse),
            opt(r.ehrenfest_residual),
            opt(r.peak_force),
            opt(q1),
            opt(q3),
            opt(r.transmitted_final),
            csv_text(r.error.as_deref().unwrap_or(""))
        );
    }
    out
}

/// `comparison.csv`, per-model series under `series/`, `summary.json` and
/// `manifest.json`.
pub fn emit_comparison(
    cmp: &ModelComparison,
    config: &RunConfig,
    spec: &OutputSpec,
    elapsed: Duration,
) -> Result<Vec<String>> {
    let mut w = Writer {
        spec,
        files: Vec::new(),
    };
    if spec.wants(OutputFormat::Csv) {
        w.put("comparison.csv", &comparison_csv(cmp))?;
        for (k, r) in cmp.rows.iter().enumerate() {
            if !r.series.is_empty() {
                w.put(&format!("series/model-{k}.csv"), &series_csv(&r.series))?;
            }
        }
    }
    if spec.wants(OutputFormat::Json) {
        w.json(
            "summary.json",
            &Summary {
                experiment: "model-compare",
                config,
                result: cmp,
            },
        )?;
    }
    w.finish("model-compare", elapsed)
}

/// Fixed-width table of oracle values for a terminal.
pub fn oracle_text(rows: &[OracleRow]) -> String {
    let mut out = format!(
        "{:>10} {:>10} {:>10} {:>12} {:>12} {:>12} {:>12} {:>12}\n",
        "p", "a", "ell", "p'_exact", "p'_approx", "dphi_exact", "dphi_approx", "dphi_1d"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>10} {:>10} {:>10} {:>12.6} {:>12.6} {:>12.5} {:>12.5} {:>12.5}",
            r.p,
            r.a,
            r.ell,
            r.p_reduced_exact,
            r.p_reduced_approx,
            r.delta_phi_exact_mode,
            r.delta_phi_approx,
            r.delta_phi_oracle_1d
        );
    }
    out
}

pub const ORACLE_HEADER: &str = "p,a,ell,p_reduced_exact,p_reduced_approx,delta_phi_exact_mode,delta_phi_approx,delta_phi_oracle_1d";

pub fn oracle_csv(rows: &[OracleRow]) -> String {
    let mut out = String::from(ORACLE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            num(r.p),
            num(r.a),
            num(r.ell),
            num(r.p_reduced_exact),
            num(r.p_reduced_approx),
            num(r.delta_phi_exact_mode),
            num(r.delta_phi_approx),
            num(r.delta_phi_oracle_1d)
        );
    }
    out
}

pub fn emit_oracle(rows: &[OracleRow], spec: &OutputSpec, elapsed: Duration) -> Result<Vec<String>> {
    let mut w = Writer {
        spec,
        files: Vec::new(),
    };
    if spec.wants(OutputFormat::Csv) {
        w.put("oracle.csv", &oracle_csv(rows))?;
    }
    if spec.wants(OutputFormat::Json) {
        w.json("summary.json", &rows)?;
    }
    w.finish("oracle", elapsed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(t: f64, fb: Option<f64>) -> ObservableRecord {
        ObservableRecord {
            t,
            norm2: 1.0,
            mean_x: 0.1 + t,
            mean_p: -1e-17,
            dpdt: 3.0e-300,
            f_boundary: fb,
            f_potential: None,
            transmitted: 0.0,
        }
    }

    #[test]
    fn header_and_empty_cells() {
        let text = series_csv(&[record(0.0, Some(-0.25)), record(0.5, None)]);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,norm2,mean_x,mean_p,dpdt,f_boundary,f_potential,transmitted"));
        assert_eq!(lines.next(), Some("0.0,1.0,0.1,-1e-17,3e-300,-0.25,,0.0"));
        assert_eq!(lines.next(), Some("0.5,1.0,0.6,-1e-17,3e-300,,,0.0"));
    }

    proptest! {
        #[test]
        fn csv_round_trips(values in prop::collection::vec((any::<f64>(), prop::option::of(any::<f64>())), 0..20)) {
            let finite: Vec<ObservableRecord> = values
                .iter()
                .filter(|(t, f)| t.is_finite() && f.is_none_or(|f| f.is_finite()))
                .map(|&(t, f)| ObservableRecord { transmitted: t.abs() % 1.0, ..record(t, f) })
                .collect();
            let back = parse_series_csv(&series_csv(&finite)).unwrap();
            prop_assert_eq!(back, finite);
        }
    }

    #[test]
    fn preflight_rejects_unwritable_target() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain-file");
        fs::write(&file, b"x").unwrap();
        let err = preflight(&file.join("sub")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err:?}");
        preflight(&dir.path().join("fresh/nested")).unwrap();
        assert!(dir.path().join("fresh/nested").is_dir());
        assert_eq!(fs::read_dir(dir.path().join("fresh/nested")).unwrap().count(), 0);
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(config_hash("{}"), config_hash("{}"));
        assert_ne!(config_hash("{}"), config_hash("{ }"));
        assert_eq!(config_hash("").len(), 64);
    }

    #[test]
    fn csv_text_quotes_commas() {
        assert_eq!(csv_text("a,b"), "\"a,b\"");
        assert_eq!(csv_text("plain"), "plain");
    }
}
