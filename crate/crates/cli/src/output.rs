//! Output files.
//!
//! Every CSV starts with a `# schema: <name>/v<N>` line followed by an
//! RFC-4180 header row. JSON documents open with a `schema` key, except
//! model checkpoints, which carry `format` and `version`. Numbers are
//! written in shortest round-trip form, so files are byte-identical across
//! reruns with the same seed. Wall-clock time only appears in `timing.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const BUILD_ID: &str = env!("SUMO_BUILD_ID");

pub fn schema(name: &str) -> String {
    format!("{name}/v{SCHEMA_VERSION}")
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

#[derive(Debug, Clone)]
pub struct OutputDir {
    path: PathBuf,
}

impl OutputDir {
    pub fn create(path: &Path) -> Result<Self> {
        fs::create_dir_all(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self { path: path.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let path = self.file(name);
        fs::write(&path, text).map_err(|e| CliError::io(path, e))
    }

    pub fn write_csv<I>(&self, name: &str, schema_name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let path = self.file(name);
        let mut buf = format!("# schema: {}\n", schema(schema_name)).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let csv_err = |e: csv::Error| CliError::BadInput {
                path: path.clone(),
                message: e.to_string(),
            };
            w.write_record(header).map_err(csv_err)?;
            for row in rows {
                w.write_record(&row).map_err(csv_err)?;
            }
            w.flush().map_err(|e| CliError::io(&path, e))?;
        }
        fs::write(&path, buf).map_err(|e| CliError::io(path, e))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::BadInput {
            path: self.file(name),
            message: e.to_string(),
        })?;
        text.push('\n');
        self.write_text(name, &text)
    }
}

/// The `summary.json` envelope.
#[derive(Debug, Serialize)]
pub struct Summary<'a, R: Serialize> {
    pub schema: String,
    pub experiment: &'static str,
    pub build_id: &'static str,
    pub config: &'a ExperimentConfig,
    pub results: &'a R,
}

#[derive(Debug, Serialize)]
struct Timing {
    schema: String,
    elapsed_seconds: f64,
}

/// Writes `config.toml`, `summary.json` and `timing.json`.
pub fn finish<R: Serialize>(out: &OutputDir, cfg: &ExperimentConfig, results: &R, elapsed: Duration) -> Result<()> {
    out.write_text("config.toml", &format!("# schema: {}\n{}", schema("config"), cfg.to_toml()?))?;
    out.write_json(
        "summary.json",
        &Summary {
            schema: schema("summary"),
            experiment: cfg.name(),
            build_id: BUILD_ID,
            config: cfg,
            results,
        },
    )?;
    out.write_json(
        "timing.json",
        &Timing {
            schema: schema("timing"),
            elapsed_seconds: elapsed.as_secs_f64(),
        },
    )
}
