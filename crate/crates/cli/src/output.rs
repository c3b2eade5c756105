use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct OutDir {
    root: PathBuf,
    pub written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn note(&mut self, name: &str) {
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        fs::write(self.root.join(name), text + "\n").with_context(|| format!("writing {name}"))?;
        self.note(name);
        Ok(())
    }

    pub fn csv(&mut self, name: &str, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let mut w = csv::Writer::from_path(self.root.join(name)).with_context(|| format!("writing {name}"))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush()?;
        self.note(name);
        Ok(())
    }
}

pub fn names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}
