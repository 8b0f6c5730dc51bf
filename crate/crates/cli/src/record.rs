//! JSONL experiment records.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Serialize)]
pub struct Assertion {
    pub name: String,
    pub measured: Value,
    pub bound: Value,
    pub holds: bool,
    /// Short label of the bound being checked.
    pub tag: String,
}

impl Assertion {
    pub fn new(
        name: &str,
        measured: impl Serialize,
        bound: impl Serialize,
        holds: bool,
        tag: &str,
    ) -> Self {
        Self {
            name: name.into(),
            measured: to_value(measured),
            bound: to_value(bound),
            holds,
            tag: tag.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub mallows_lab: &'static str,
    pub mallows_core: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentRecord {
    pub command: String,
    pub config: Value,
    pub seed: u64,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub results: Value,
    pub assertions: Vec<Assertion>,
    pub versions: Versions,
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn to_value(v: impl Serialize) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

impl ExperimentRecord {
    pub fn new(command: &str, config: impl Serialize, seed: u64, started: u128) -> Self {
        Self {
            command: command.into(),
            config: to_value(config),
            seed,
            started_unix_ms: started,
            finished_unix_ms: started,
            results: Value::Null,
            assertions: Vec::new(),
            versions: Versions {
                mallows_lab: env!("CARGO_PKG_VERSION"),
                mallows_core: mallows_core::VERSION,
            },
        }
    }

    pub fn all_hold(&self) -> bool {
        self.assertions.iter().all(|a| a.holds)
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    /// Appends the record to `path`, or prints it to stdout (stderr when
    /// stdout carries data).
    pub fn emit(&mut self, path: Option<&Path>, stdout_busy: bool) -> std::io::Result<()> {
        self.finished_unix_ms = now_ms();
        let line = self.to_line();
        match path {
            Some(p) => {
                let mut f = OpenOptions::new().create(true).append(true).open(p)?;
                writeln!(f, "{line}")
            }
            None if stdout_busy => writeln!(std::io::stderr().lock(), "{line}"),
            None => writeln!(std::io::stdout().lock(), "{line}"),
        }
    }
}
