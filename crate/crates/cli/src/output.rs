use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Files produced by one subcommand, held in memory until every step has
/// succeeded and then written atomically.
#[derive(Debug, Default)]
pub struct Artifacts {
    run_id: String,
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn new(run_id: &str) -> Self {
        Self { run_id: run_id.to_string(), files: Vec::new() }
    }

    /// File name `{run_id}_{artifact}.{ext}`.
    pub fn name(&self, artifact: &str, ext: &str) -> String {
        format!("{}_{artifact}.{ext}", self.run_id)
    }

    pub fn text(&mut self, artifact: &str, ext: &str, content: String) {
        let name = self.name(artifact, ext);
        self.files.push((name, content.into_bytes()));
    }

    pub fn json<T: Serialize>(&mut self, artifact: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::runtime(format!("cannot serialize {artifact}: {e}")))?;
        text.push('\n');
        self.text(artifact, "json", text);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Writes every file through a temporary sibling and a rename.
    pub fn commit(&self, dir: &Path) -> CliResult<Vec<PathBuf>> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
        self.files
            .iter()
            .map(|(name, bytes)| {
                let target = dir.join(name);
                let tmp = dir.join(format!(".{name}.tmp"));
                let write = || -> std::io::Result<()> {
                    let mut f = fs::File::create(&tmp)?;
                    f.write_all(bytes)?;
                    f.sync_all()?;
                    fs::rename(&tmp, &target)
                };
                write().map_err(|e| {
                    let _ = fs::remove_file(&tmp);
                    CliError::runtime(format!("cannot write {}: {e}", target.display()))
                })?;
                Ok(target)
            })
            .collect()
    }
}
