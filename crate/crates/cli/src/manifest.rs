use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Config file path, or `None` for the bundled default.
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
    /// Artifact paths relative to `out`.
    pub artifacts: Vec<PathBuf>,
    pub timings: Vec<Timing>,
}

/// Collects artifacts and stage timings for one command.
pub struct Run {
    pub out: PathBuf,
    artifacts: Vec<PathBuf>,
    timings: Vec<Timing>,
}

impl Run {
    pub fn new(out: &Path) -> Result<Self> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self { out: out.to_path_buf(), artifacts: Vec::new(), timings: Vec::new() })
    }

    /// Path for a new artifact under `out`, with parent directories created.
    pub fn artifact(&mut self, rel: impl AsRef<Path>) -> Result<PathBuf> {
        let rel = rel.as_ref().to_path_buf();
        let full = self.out.join(&rel);
        if let Some(parent) = full.parent() {
            std::fs::create_dir_all(parent)?;
        }
        if !self.artifacts.contains(&rel) {
            self.artifacts.push(rel);
        }
        Ok(full)
    }

    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let v = f()?;
        self.timings.push(Timing { stage: stage.into(), seconds: t.elapsed().as_secs_f64() });
        Ok(v)
    }

    /// Checks every artifact and writes `<out>/<command>.manifest.json`.
    pub fn finish(self, command: &str, config: Option<&Path>, seed: u64) -> Result<PathBuf> {
        for a in &self.artifacts {
            let meta = std::fs::metadata(self.out.join(a)).with_context(|| format!("artifact {} missing", a.display()))?;
            if meta.len() == 0 {
                bail!("artifact {} is empty", a.display());
            }
        }
        let m = RunManifest {
            command: command.into(),
            config: config.map(Path::to_path_buf),
            seed,
            out: self.out.clone(),
            artifacts: self.artifacts,
            timings: self.timings,
        };
        let path = self.out.join(format!("{command}.manifest.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(path)
    }
}
