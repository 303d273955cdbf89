//! JSON run manifest written next to every command's outputs.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::error::Result;
use crate::io::write_json;

#[derive(Debug, Serialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub threads: usize,
    pub timings: Vec<Timing>,
    pub outputs: Vec<String>,
    #[serde(skip)]
    clock: Option<Instant>,
}

impl Manifest {
    pub fn new<T: Serialize>(command: &str, config: &T, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            seed,
            threads: rayon::current_num_threads(),
            timings: Vec::new(),
            outputs: Vec::new(),
            clock: Some(Instant::now()),
        }
    }

    /// Records the time since the previous mark.
    pub fn mark(&mut self, stage: &str) {
        let now = Instant::now();
        let start = self.clock.replace(now).unwrap_or(now);
        self.timings.push(Timing {
            stage: stage.to_string(),
            seconds: (now - start).as_secs_f64(),
        });
    }

    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.output("manifest.json");
        write_json(&dir.join("manifest.json"), &self)
    }
}
