//! Artifact staging: files are written to a hidden staging directory and only
//! moved into the output directory, together with a manifest, on success.

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

pub struct Stage {
    out: PathBuf,
    dir: PathBuf,
    files: Vec<String>,
    committed: bool,
}

impl Stage {
    pub fn new(out: &Path, command: &str) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let dir = out.join(format!(".staging-{command}"));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { out: out.to_path_buf(), dir, files: Vec::new(), committed: false })
    }

    pub fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let mut w = self.create(name)?;
        w.write_all(contents.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    /// Writes the manifest and moves every staged file into the output directory.
    pub fn commit(mut self, command: &str, config_hash: &str, seed: u64) -> Result<Vec<PathBuf>> {
        let mut manifest = String::new();
        manifest.push_str(&format!("command = {command}\n"));
        manifest.push_str(&format!("config_sha256 = {config_hash}\n"));
        manifest.push_str(&format!("seed = {seed}\n"));
        manifest.push_str(&format!("version = {VERSION}\n"));
        let mut names = self.files.clone();
        names.sort();
        for name in &names {
            let bytes = fs::read(self.dir.join(name))?;
            manifest.push_str(&format!("file.{name} = {}\n", hex::encode(Sha256::digest(&bytes))));
        }
        let manifest_name = format!("manifest-{command}.txt");
        self.write(&manifest_name, &manifest)?;
        let mut moved = Vec::new();
        for name in &self.files {
            let dest = self.out.join(name);
            fs::rename(self.dir.join(name), &dest)
                .with_context(|| format!("moving {name} into {}", self.out.display()))?;
            moved.push(dest);
        }
        fs::remove_dir_all(&self.dir)?;
        self.committed = true;
        Ok(moved)
    }
}

impl Drop for Stage {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

/// Comma-joined CSV row of `Display`-formatted values.
#[macro_export]
macro_rules! row {
    ($w:expr, $($x:expr),+ $(,)?) => {{
        let cells: Vec<String> = vec![$(format!("{}", $x)),+];
        writeln!($w, "{}", cells.join(","))
    }};
}
