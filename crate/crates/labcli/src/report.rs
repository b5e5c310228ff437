//! Artifact serialization and writing. All files go through `write_all`, one
//! at a time.

use std::path::{Path, PathBuf};

use serde::Serialize;

use srlab::geodesics::Trajectory;
use srlab::SrError;

use crate::runner::VerdictBundle;

pub struct Artifact {
    pub name: String,
    pub contents: String,
}

impl Artifact {
    pub fn csv(name: &str, header: &[&str], rows: Vec<Vec<f64>>) -> Self {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory write");
        for r in rows {
            w.write_record(r.iter().map(|v| format!("{:?}", v)))
                .expect("in-memory write");
        }
        Artifact {
            name: name.into(),
            contents: String::from_utf8(w.into_inner().expect("flush")).expect("utf8"),
        }
    }

    pub fn json<T: Serialize>(name: &str, value: &T) -> Self {
        Artifact {
            name: name.into(),
            contents: serde_json::to_string_pretty(value).expect("serializable"),
        }
    }

    pub fn trajectory_csv(name: &str, t: &Trajectory) -> Self {
        let mut buf = Vec::new();
        srlab::io::write_trajectory_csv(t, &mut buf).expect("in-memory write");
        Artifact {
            name: name.into(),
            contents: String::from_utf8(buf).expect("utf8"),
        }
    }

    pub fn trajectory_json(name: &str, t: &Trajectory) -> Option<Self> {
        srlab::io::trajectory_to_json(t).ok().map(|contents| Artifact {
            name: name.into(),
            contents,
        })
    }
}

pub fn bundle_json(b: &VerdictBundle) -> String {
    serde_json::to_string_pretty(b).expect("serializable")
}

pub fn bundle_csv(b: &VerdictBundle) -> Artifact {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["name", "anchor", "measured", "expected", "tolerance", "status", "note"])
        .expect("in-memory write");
    for r in &b.records {
        let status = serde_json::to_value(r.status).expect("serializable");
        w.write_record([
            r.name.clone(),
            r.anchor.to_string(),
            r.measured.map(|v| format!("{:?}", v)).unwrap_or_default(),
            r.expected.clone(),
            r.tolerance.map(|v| format!("{:?}", v)).unwrap_or_default(),
            status.as_str().unwrap_or_default().to_string(),
            r.note.clone().unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    Artifact {
        name: "verdicts.csv".into(),
        contents: String::from_utf8(w.into_inner().expect("flush")).expect("utf8"),
    }
}

/// Writes `bundle.json`, `verdicts.csv` and the artifacts into `dir`; returns
/// the bundle path.
pub fn write_all(dir: &Path, b: &VerdictBundle, artifacts: &[Artifact]) -> srlab::Result<PathBuf> {
    let io = |e: std::io::Error| SrError::Io(format!("{}: {}", dir.display(), e));
    std::fs::create_dir_all(dir).map_err(io)?;
    for a in artifacts.iter().chain(std::iter::once(&bundle_csv(b))) {
        std::fs::write(dir.join(&a.name), &a.contents).map_err(io)?;
    }
    let path = dir.join("bundle.json");
    std::fs::write(&path, bundle_json(b)).map_err(io)?;
    Ok(path)
}

pub fn summary_table(b: &VerdictBundle) -> String {
    let mut s = String::new();
    for r in &b.records {
        let status = format!("{:?}", r.status).to_uppercase();
        let measured = r.measured.map(|v| format!("{:.6e}", v)).unwrap_or_else(|| "-".into());
        s.push_str(&format!("{:<8} {:<48} {:>14}  expected {}\n", status, r.name, measured, r.expected));
        if let (crate::runner::Status::Error | crate::runner::Status::Skipped, Some(n)) = (r.status, &r.note) {
            s.push_str(&format!("         {}\n", n));
        }
    }
    let [p, f, sk, e] = b.counts();
    s.push_str(&format!("{} pass, {} fail, {} skipped, {} error\n", p, f, sk, e));
    s
}
