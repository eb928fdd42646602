//! Report envelopes and atomic file writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use vdeval_core::report::Conventions;
use vdeval_core::{Error, Result};

use crate::config::RunConfig;

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config_hash: String,
    conventions_fingerprint: String,
    conventions: &'a Conventions,
    config: &'a RunConfig,
    result: &'a T,
}

/// Output sink for one command run.
pub struct Reporter<'a> {
    pub command: &'static str,
    pub config: &'a RunConfig,
    pub conventions: Conventions,
    pub dir: PathBuf,
}

impl<'a> Reporter<'a> {
    pub fn new(command: &'static str, config: &'a RunConfig, conventions: Conventions) -> Result<Self> {
        Ok(Reporter {
            command,
            config,
            conventions,
            dir: config.out_dir()?.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `result` wrapped with config hash, seed and conventions fingerprint.
    pub fn json<T: Serialize>(&mut self, name: &str, result: &T) -> Result<()> {
        let env = Envelope {
            tool: "vdeval",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            seed: self.config.seed(),
            config_hash: self.config.hash(),
            conventions_fingerprint: self.conventions.fingerprint(),
            conventions: &self.conventions,
            config: self.config,
            result,
        };
        let mut text = serde_json::to_string_pretty(&env).map_err(|e| Error::Numeric(e.to_string()))?;
        text.push('\n');
        self.raw(name, text.as_bytes())
    }

    /// Writes CSV rows; the first two lines are `#`-comments carrying the config hash and fingerprint.
    pub fn csv<R: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = R>) -> Result<()> {
        let mut buf = format!(
            "# config_hash={} seed={}\n# conventions_fingerprint={}\n",
            self.config.hash(),
            self.config.seed(),
            self.conventions.fingerprint()
        )
        .into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            for r in rows {
                w.serialize(r).map_err(|e| Error::Numeric(e.to_string()))?;
            }
            w.flush().map_err(|e| Error::io(self.path(name), e))?;
        }
        self.raw(name, &buf)
    }

    pub fn raw(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        write_atomic(&path, bytes)?;
        log::info!("wrote {}", path.display());
        Ok(())
    }
}
