//! File layout of an experiment output directory.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    /// `split` is `train` or `validation`.
    pub fn dataset(&self, group: usize, split: &str, ext: &str) -> PathBuf {
        self.root.join("data").join(format!("group{group}_{split}.{ext}"))
    }

    pub fn reference(&self) -> PathBuf {
        self.root.join("reference").join("reference.json")
    }

    pub fn reference_dir(&self) -> PathBuf {
        self.root.join("reference")
    }

    pub fn run_dir(&self, noise_dim: usize, seed: u64) -> PathBuf {
        self.root.join("runs").join(format!("d{noise_dim}-s{seed}"))
    }

    pub fn checkpoint(&self, noise_dim: usize, seed: u64) -> PathBuf {
        self.run_dir(noise_dim, seed).join("state.bin")
    }

    pub fn metrics(&self, stem: &str) -> PathBuf {
        self.root.join("metrics").join(format!("{stem}.csv"))
    }

    pub fn plot(&self, stem: &str) -> PathBuf {
        self.root.join("plots").join(format!("{stem}.svg"))
    }

    /// Path relative to the root, with `/` separators.
    pub fn relative(&self, path: &Path) -> String {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        rel.components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/")
    }
}

/// Writes through a temporary sibling and renames, so readers never see a partial file.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut out = BufWriter::new(fs::File::create(&tmp)?);
        fill(&mut out)?;
        out.flush()?;
    }
    fs::rename(&tmp, path)
}
