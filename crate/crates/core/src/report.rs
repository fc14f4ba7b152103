//! Run outputs: error evaluation against a reference, CSV tables, field
//! dumps and the hashed run manifest.
//!
//! Column contracts:
//! - `records.csv`: `n,t,loss,residual,constraint,epochs,stop`, one row per timestamp from 0.
//! - `errors.csv`: `n,t,rel_l2,residual,epochs`, rows `n = 1..N_t` then a `total` row.
//! - `field.dat`: gnuplot blocks, one per timestamp, lines `t x [y] pred ref`.
//! - `diagnostics.jsonl`: one JSON object per timestamp, wall-clock included.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::ErrorReport;
use crate::network::ParameterVector;
use crate::oracle::ReferenceTrajectory;
use crate::training::{TimestampRecord, TrainConfig, TrajectorySolution};

/// Compares the evolved field of every timestamp `n >= 1` with the reference at its grid points.
pub fn evaluate(sol: &TrajectorySolution, reference: &ReferenceTrajectory) -> Result<ErrorReport> {
    if reference.times.len() != sol.params.len() {
        return Err(Error::ShapeError { expected: sol.params.len(), got: reference.times.len() });
    }
    let field = sol.model.problem.operator.evolved_field();
    let pred = sol.trajectory(field, &reference.points)?;
    let reference_rows = reference.trajectory(field.min(reference.fields - 1));
    let residual = sol.records[1..].iter().map(|r| r.residual).collect();
    let epochs = sol.records[1..].iter().map(|r| r.epochs).collect();
    ErrorReport::new(&pred, &reference_rows, residual, epochs)
}

pub fn records_csv(records: &[TimestampRecord], tau: f64) -> String {
    let mut s = String::from("n,t,loss,residual,constraint,epochs,stop\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{:.6},{:.9e},{:.9e},{:.9e},{},{}",
            r.n,
            r.n as f64 * tau,
            r.loss,
            r.residual,
            r.constraint,
            r.epochs,
            r.stop
        );
    }
    s
}

pub fn diagnostics_jsonl(records: &[TimestampRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("records serialize") + "\n").collect()
}

/// Predicted and reference evolved field on every `stride`-th reference point.
pub fn field_dump(sol: &TrajectorySolution, reference: &ReferenceTrajectory, stride: usize) -> Result<String> {
    let sub = reference.subsample(stride.max(1));
    let field = sol.model.problem.operator.evolved_field();
    let mut s = String::from("# t x");
    s.push_str(if sub.dim == 2 { " y pred ref\n" } else { " pred ref\n" });
    for (n, &t) in sub.times.iter().enumerate() {
        let pred = sol.sample(n, &sub.points)?.swap_remove(field);
        let refv = sub.snapshot(n, field.min(sub.fields - 1));
        for i in 0..sub.n_points() {
            let _ = write!(s, "{t:.6}");
            for c in sub.point(i) {
                let _ = write!(s, " {c:.6}");
            }
            let _ = writeln!(s, " {:.9e} {:.9e}", pred[i], refv[i]);
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn version() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Everything needed to re-execute a run and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub out_dir: String,
    /// Relative path to sha256 of every artifact.
    pub files: BTreeMap<String, String>,
    pub config: TrainConfig,
}

impl RunManifest {
    pub const FILE: &'static str = "manifest.toml";

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(Self::FILE))?;
        toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))
    }

    /// Names of listed files whose content no longer matches its hash.
    pub fn verify(&self, dir: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|(name, hash)| fs::read(dir.join(name)).map(|b| sha256_hex(&b) != **hash).unwrap_or(true))
            .map(|(name, _)| name.clone())
            .collect()
    }
}

/// Writes artifacts into one directory and records their hashes.
#[derive(Debug)]
pub struct RunWriter {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl RunWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: BTreeMap::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Writes the manifest listing everything written so far.
    pub fn finish(self, config: &TrainConfig) -> Result<RunManifest> {
        let manifest = RunManifest {
            version: version(),
            seed: config.seed,
            out_dir: self.dir.display().to_string(),
            files: self.files,
            config: config.clone(),
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(self.dir.join(RunManifest::FILE), text)?;
        Ok(manifest)
    }
}

pub fn write_checkpoint(w: &mut RunWriter, n: usize, theta: &ParameterVector) -> Result<()> {
    let mut buf = Vec::new();
    theta.write_to(&mut buf)?;
    w.write(&format!("checkpoints/theta_{n:04}.bin"), &buf)
}

/// Writes config, records and, given a reference, errors and field dumps.
pub fn write_solution(
    w: &mut RunWriter,
    sol: &TrajectorySolution,
    reference: Option<&ReferenceTrajectory>,
) -> Result<Option<ErrorReport>> {
    w.write("config.toml", sol.config.to_toml().as_bytes())?;
    w.write("records.csv", records_csv(&sol.records, sol.tau()).as_bytes())?;
    w.write("diagnostics.jsonl", diagnostics_jsonl(&sol.records).as_bytes())?;
    let Some(reference) = reference else {
        return Ok(None);
    };
    let report = evaluate(sol, reference)?;
    w.write("errors.csv", report.to_csv(sol.tau()).as_bytes())?;
    let stride = if reference.dim == 2 { 4 } else { (reference.n_points() / 128).max(1) };
    w.write("field.dat", field_dump(sol, reference, stride)?.as_bytes())?;
    Ok(Some(report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::reference;
    use crate::pdes::benchmark;
    use crate::presets::{preset, Preset};
    use crate::training::run;

    fn tiny() -> TrainConfig {
        let mut c = preset("heat_test", Preset::Desk).unwrap();
        c.net.width = 8;
        c.net.depth = 2;
        c.n_t = 2;
        c.n_r = 16;
        c.max_iters_initial = 20;
        c.max_iters = 5;
        c.oracle.grid_fd = 32;
        c
    }

    #[test]
    fn solution_outputs_are_listed_and_verify() {
        let c = tiny();
        let p = benchmark("heat_test").unwrap();
        let sol = run(&p, &c, |_, _| {}).unwrap();
        let r = reference(&p, c.n_t, &c.oracle).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut w = RunWriter::create(dir.path()).unwrap();
        for (n, th) in sol.params.iter().enumerate() {
            write_checkpoint(&mut w, n, th).unwrap();
        }
        let report = write_solution(&mut w, &sol, Some(&r)).unwrap().unwrap();
        assert!(report.relative_l2.is_finite());
        assert_eq!(report.per_step.len(), 2);
        let m = w.finish(&c).unwrap();
        assert!(m.files.contains_key("errors.csv") && m.files.contains_key("checkpoints/theta_0002.bin"));
        let back = RunManifest::load(dir.path()).unwrap();
        assert_eq!(back, m);
        assert!(back.verify(dir.path()).is_empty());
        fs::write(dir.path().join("records.csv"), "tampered").unwrap();
        assert_eq!(back.verify(dir.path()), vec!["records.csv".to_string()]);
    }

    #[test]
    fn records_csv_has_no_wall_clock() {
        let c = tiny();
        let sol = run(&benchmark("heat_test").unwrap(), &c, |_, _| {}).unwrap();
        let csv = records_csv(&sol.records, sol.tau());
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("n,t,loss,residual,constraint,epochs,stop\n"));
        assert!(diagnostics_jsonl(&sol.records).contains("seconds"));
    }
}
