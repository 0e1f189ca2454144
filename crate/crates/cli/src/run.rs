use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::config_hash;
use crate::error::{io_err, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Pass,
    Fail,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskStatus {
    pub task: String,
    pub state: TaskState,
    pub detail: String,
}

/// Record of one command invocation. The only file with timestamps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub command: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub reports: Vec<String>,
    pub tasks: Vec<TaskStatus>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Result of a command: its configuration hash and the tasks whose contract failed.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub config_hash: String,
    pub failures: Vec<TaskStatus>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Output directory of one command. Writes are serialized through it.
pub struct RunDir {
    dir: PathBuf,
    command: String,
    config_hash: String,
    config: serde_json::Value,
    started: u64,
    reports: Vec<String>,
    tasks: Vec<TaskStatus>,
}

impl RunDir {
    pub fn create<T: Serialize>(dir: &Path, command: &str, config: &T) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            config_hash: config_hash(command, config)?,
            config: serde_json::to_value(config)?,
            started: unix_now(),
            reports: Vec::new(),
            tasks: Vec::new(),
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    fn create_file(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        self.reports.push(name.to_string());
        Ok(BufWriter::new(File::create(&path).map_err(io_err(&path))?))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = self.create_file(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))
    }

    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, records: &[T]) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = self.create_file(name)?;
        for r in records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w).map_err(io_err(&path))?;
        }
        w.flush().map_err(io_err(path))
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_writer(self.create_file(name)?);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(io_err(self.dir.join(name)))
    }

    /// Streams arbitrary content, e.g. a field snapshot.
    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> plaplab::Result<()>) -> Result<()> {
        let mut w = self.create_file(name)?;
        f(&mut w)?;
        w.flush().map_err(io_err(self.dir.join(name)))
    }

    pub fn task(&mut self, task: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.tasks.push(TaskStatus {
            task: task.into(),
            state: if pass { TaskState::Pass } else { TaskState::Fail },
            detail: detail.into(),
        });
    }

    pub fn task_error(&mut self, task: impl Into<String>, err: impl std::fmt::Display) {
        self.tasks.push(TaskStatus {
            task: task.into(),
            state: TaskState::Error,
            detail: err.to_string(),
        });
    }

    pub fn finish(mut self) -> Result<Outcome> {
        let manifest = RunManifest {
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.clone(),
            config_hash: self.config_hash.clone(),
            config: self.config.clone(),
            started_unix: self.started,
            finished_unix: unix_now(),
            reports: std::mem::take(&mut self.reports),
            tasks: self.tasks.clone(),
        };
        let path = self.dir.join(MANIFEST);
        let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        writeln!(w).and_then(|_| w.flush()).map_err(io_err(&path))?;
        Ok(Outcome {
            config_hash: self.config_hash,
            failures: self.tasks.into_iter().filter(|t| t.state != TaskState::Pass).collect(),
        })
    }
}

/// Runs `f` on a pool of `jobs` threads (`None`: rayon's default).
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| crate::error::config_err(format!("cannot start {n} worker threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
