use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

const CACHE_MAGIC: &[u8; 8] = b"SQSCACHE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance of one run: what was computed, with which seeds, and what it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub version: String,
    pub deterministic: bool,
    pub threads: usize,
    pub wall_time_secs: f64,
    pub seeds: Vec<(String, u64)>,
    pub files: Vec<FileDigest>,
    pub warnings: Vec<String>,
}

/// Output directory handle collecting digests for the manifest.
#[derive(Debug)]
pub struct RunContext {
    out: PathBuf,
    pub deterministic: bool,
    pub use_cache: bool,
    command: String,
    config_hash: String,
    started: Instant,
    seeds: Vec<(String, u64)>,
    files: Vec<FileDigest>,
    warnings: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunContext {
    pub fn new(out: &Path, command: &str, config_hash: &str, deterministic: bool) -> Result<Self> {
        fs::create_dir_all(out)?;
        Ok(RunContext {
            out: out.to_path_buf(),
            deterministic,
            use_cache: true,
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            started: Instant::now(),
            seeds: Vec::new(),
            files: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn record_seed(&mut self, stage: &str, seed: u64) {
        self.seeds.push((stage.to_string(), seed));
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        eprintln!("warning: {msg}");
        self.warnings.push(msg);
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Writes a file and records its digest.
    pub fn write_file(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.out.join(name);
        fs::write(&path, contents)?;
        self.files.push(FileDigest {
            path: name.to_string(),
            sha256: sha256_hex(contents.as_bytes()),
        });
        Ok(path)
    }

    /// CSV with a leading config_hash column on every row.
    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let mut text = format!("config_hash,{}\n", header.join(","));
        for row in rows {
            text.push_str(&self.config_hash);
            for cell in row {
                text.push(',');
                text.push_str(cell);
            }
            text.push('\n');
        }
        self.write_file(name, &text)
    }

    fn cache_path(&self, key: &str) -> PathBuf {
        self.out.join("cache").join(format!("{key}.bin"))
    }

    /// Cached f64 array of exactly `len` values, if present and intact.
    pub fn load_cached(&self, key: &str, len: usize) -> Option<Vec<f64>> {
        if !self.use_cache {
            return None;
        }
        let bytes = fs::read(self.cache_path(key)).ok()?;
        if bytes.len() != 16 + 8 * len || &bytes[..8] != CACHE_MAGIC {
            return None;
        }
        if u64::from_le_bytes(bytes[8..16].try_into().ok()?) != len as u64 {
            return None;
        }
        Some(
            bytes[16..]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    }

    pub fn store_cached(&self, key: &str, values: &[f64]) -> Result<()> {
        if !self.use_cache {
            return Ok(());
        }
        let path = self.cache_path(key);
        fs::create_dir_all(path.parent().unwrap())?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(CACHE_MAGIC)?;
        f.write_all(&(values.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(values.len() * 8);
        values.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        f.write_all(&buf)?;
        drop(f);
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn finish(self) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: self.command,
            config_hash: self.config_hash,
            version: env!("CARGO_PKG_VERSION").to_string(),
            deterministic: self.deterministic,
            threads: rayon::current_num_threads(),
            wall_time_secs: self.started.elapsed().as_secs_f64(),
            seeds: self.seeds,
            files: self.files,
            warnings: self.warnings,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(self.out.join("manifest.json"), text)?;
        Ok(manifest)
    }
}

/// Cache key from the config hash and a stage label.
pub fn cache_key(config_hash: &str, stage: &str) -> String {
    sha256_hex(format!("{config_hash}/{stage}").as_bytes())[..32].to_string()
}

/// Shortest round-trip representation, so identical values give identical bytes.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}
