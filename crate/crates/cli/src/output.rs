use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use crate::ResolvedConfig;

/// Collects the files a command writes under its output directory so the
/// manifest can list them.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Path of `name` inside the directory, recorded as an output.
    pub fn file(&mut self, name: &str) -> anyhow::Result<PathBuf> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        self.written.push(name.to_string());
        Ok(path)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let path = self.file(name)?;
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush().with_context(|| format!("writing {}", path.display()))
    }

    /// Writes `manifest.json`: the resolved configuration and the list of
    /// outputs. It carries no timestamps, so identical runs produce
    /// identical files.
    pub fn finish(mut self, config: &ResolvedConfig) -> anyhow::Result<()> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            config: &'a ResolvedConfig,
            outputs: &'a [String],
        }
        let outputs = std::mem::take(&mut self.written);
        self.json(
            "manifest.json",
            &Manifest {
                config,
                outputs: &outputs,
            },
        )
    }
}
