//! Run manifests and CSV/JSON artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub parameters: BTreeMap<String, String>,
    pub tool_version: String,
    pub outputs: Vec<String>,
    pub wall_time: f64,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub argv: Vec<String>,
}

/// Collects the artifacts written during one run.
pub struct Sink {
    dir: PathBuf,
    pub outputs: Vec<String>,
}

/// Scientific notation with 17 significant digits.
pub fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

impl Sink {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.outputs.push(p.display().to_string());
        p
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        let text = serde_json::to_string_pretty(value)?;
        fs::write(&p, text + "\n").with_context(|| format!("cannot write {}", p.display()))
    }

    /// Writes a CSV whose rows are already formatted.
    pub fn csv<I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let p = self.path(name);
        let mut w = csv::Writer::from_path(&p).with_context(|| format!("cannot write {}", p.display()))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn manifest(&self, m: &RunManifest) -> Result<PathBuf> {
        let p = self.dir.join(format!("{}.manifest.json", m.command));
        fs::write(&p, serde_json::to_string_pretty(m)? + "\n")
            .with_context(|| format!("cannot write {}", p.display()))?;
        Ok(p)
    }
}
