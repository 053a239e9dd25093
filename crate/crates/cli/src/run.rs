//! Run configuration, input hashing and error classification.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Exit code 1 (non-convergence) or 2 (validation).
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{message}")]
    NotConverged { message: String, summary: Value },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::NotConverged { .. } => 1,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }
}

impl From<gramspai::Error> for CliError {
    fn from(e: gramspai::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(format!("json: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Validation(format!("csv: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Process-wide settings shared by every command.
#[derive(Debug, Clone)]
pub struct Context {
    pub out_dir: PathBuf,
    pub threads: usize,
}

impl Default for Context {
    fn default() -> Self {
        Context {
            out_dir: PathBuf::from("."),
            threads: 1,
        }
    }
}

impl Context {
    /// Relative output paths are placed under `out_dir`.
    pub fn output(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.out_dir.join(path)
        }
    }

    pub fn prepare(&self, path: &Path) -> CliResult<PathBuf> {
        let out = self.output(path);
        if let Some(parent) = out.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

/// SHA-256 of a file, including its `.json` sidecar when one exists.
pub fn hash_input(path: &Path) -> CliResult<InputHash> {
    let bytes = fs::read(path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    let sidecar = gramspai::sparse::mm::sidecar_path(path);
    if sidecar != path {
        if let Ok(extra) = fs::read(&sidecar) {
            h.update(&extra);
        }
    }
    Ok(InputHash {
        path: path.display().to_string(),
        sha256: hex::encode(h.finalize()),
    })
}

/// Everything needed to rerun a command; embedded in every output.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub params: Value,
    pub seed: Option<u64>,
    pub threads: usize,
    pub inputs: Vec<InputHash>,
}

impl RunConfig {
    pub fn new<P: Serialize>(
        command: &'static str,
        params: &P,
        seed: Option<u64>,
        ctx: &Context,
        inputs: &[&Path],
    ) -> CliResult<Self> {
        Ok(RunConfig {
            tool: "gramspai",
            version: env!("CARGO_PKG_VERSION"),
            command,
            params: serde_json::to_value(params)?,
            seed,
            threads: ctx.threads,
            inputs: inputs.iter().map(|p| hash_input(p)).collect::<CliResult<_>>()?,
        })
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("plain data")
    }

    /// `# run: {...}` comment line placed at the top of CSV outputs.
    pub fn csv_comment(&self) -> String {
        format!("# run: {}\n", serde_json::to_string(self).expect("plain data"))
    }
}

/// Writes a CSV whose first line is the run comment.
pub fn write_csv<F>(path: &Path, run: &RunConfig, body: F) -> CliResult<()>
where
    F: FnOnce(&mut Vec<u8>) -> CliResult<()>,
{
    let mut buf = run.csv_comment().into_bytes();
    body(&mut buf)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}
