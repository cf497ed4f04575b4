//! Output directory with a shared metadata block for every text artifact.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use torusflow::flow::TrajectoryRecord;
use torusflow::io::{write_diagnostics_csv, write_table, write_trajectory_csv, Checkpoint};

use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub struct Output {
    dir: PathBuf,
    command: &'static str,
    config_hash: String,
    written: Vec<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Output {
        path: path.display().to_string(),
        source,
    }
}

fn core_err(path: &Path, e: torusflow::Error) -> CliError {
    match e {
        torusflow::Error::Io(source) => CliError::Output {
            path: path.display().to_string(),
            source,
        },
        other => CliError::Solver {
            stage: "output",
            source: other,
        },
    }
}

impl Output {
    pub fn create(dir: &Path, command: &'static str, config_hash: String) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Self {
            dir: dir.to_owned(),
            command,
            config_hash,
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Files written so far, relative to the output directory.
    pub fn written(&self) -> &[String] {
        &self.written
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_owned());
        self.dir.join(name)
    }

    pub fn meta_lines(&self) -> Vec<String> {
        vec![
            format!("torusflow {VERSION}"),
            format!("command {}", self.command),
            format!("config_sha256 {}", self.config_hash),
        ]
    }

    pub fn meta_json(&self) -> Value {
        json!({
            "artifact": "torusflow",
            "version": VERSION,
            "command": self.command,
            "config_sha256": self.config_hash,
        })
    }

    pub fn trajectory(&mut self, name: &str, records: &[TrajectoryRecord<f64>]) -> Result<(), CliError> {
        let meta = self.meta_lines();
        let path = self.path(name);
        let file = File::create(&path).map_err(io_err(&path))?;
        write_trajectory_csv(BufWriter::new(file), records, &meta).map_err(|e| core_err(&path, e))
    }

    pub fn diagnostics(&mut self, name: &str, records: &[TrajectoryRecord<f64>]) -> Result<(), CliError> {
        let meta = self.meta_lines();
        let path = self.path(name);
        let file = File::create(&path).map_err(io_err(&path))?;
        write_diagnostics_csv(BufWriter::new(file), records, &meta).map_err(|e| core_err(&path, e))
    }

    pub fn table(&mut self, name: &str, columns: &[&str], rows: &[Vec<f64>]) -> Result<(), CliError> {
        let meta = self.meta_lines();
        let path = self.path(name);
        let file = File::create(&path).map_err(io_err(&path))?;
        write_table(BufWriter::new(file), columns, rows, &meta).map_err(|e| core_err(&path, e))
    }

    /// Writes `{"meta": …, …body}`.
    pub fn json(&mut self, name: &str, body: Value) -> Result<(), CliError> {
        let mut doc = json!({ "meta": self.meta_json() });
        if let (Value::Object(doc), Value::Object(body)) = (&mut doc, body) {
            doc.extend(body);
        }
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(&doc).expect("json value serializes");
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))
    }

    pub fn text(&mut self, name: &str, content: &str) -> Result<(), CliError> {
        let path = self.path(name);
        fs::write(&path, content).map_err(io_err(&path))
    }

    pub fn checkpoint(&mut self, name: &str, cp: &Checkpoint) -> Result<(), CliError> {
        let path = self.path(name);
        cp.save(&path).map_err(|e| core_err(&path, e))
    }
}
