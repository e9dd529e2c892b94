use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Command;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to rerun a command: the fully resolved arguments
/// (flags, environment overrides and defaults), plus digests of what went in
/// and came out.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: Command,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, String>,
    pub out_dir: PathBuf,
    /// Relative path to SHA-256, every file under `out_dir` except the manifest.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(config: &Command, out_dir: &Path) -> CliResult<Self> {
        let mut inputs = BTreeMap::new();
        for path in config.inputs() {
            inputs.insert(path.display().to_string(), file_digest(&path)?);
        }
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            seed: config.seed(),
            inputs,
            out_dir: out_dir.to_path_buf(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("malformed manifest {}: {e}", path.display())))
    }

    pub fn write(&self) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(tputfl_core::Error::from)?;
        fs::write(self.out_dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    pub fn record_outputs(&mut self) -> CliResult<()> {
        let mut outputs = BTreeMap::new();
        collect_digests(&self.out_dir, &self.out_dir, &mut outputs)?;
        outputs.remove(MANIFEST_FILE);
        self.outputs = outputs;
        Ok(())
    }
}

pub fn file_digest(path: &Path) -> CliResult<String> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn collect_digests(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> CliResult<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_digests(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).unwrap_or(&path);
            // forward slashes keep manifests portable
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            out.insert(key, file_digest(&path)?);
        }
    }
    Ok(())
}
