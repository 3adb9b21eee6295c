use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Aborted,
}

#[derive(Debug, Clone, Serialize)]
pub struct PromptRecord {
    pub style_text: String,
    pub source_text: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timings {
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub elapsed_secs: Option<f64>,
}

/// Everything needed to re-run a job: resolved config, prompt, inputs and
/// backend identity, plus what came out of it.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub status: RunStatus,
    pub backend: String,
    pub seed: u64,
    pub ablation: Option<String>,
    pub prompt: PromptRecord,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Resolved config in its file syntax.
    pub config: String,
    pub timings: Timings,
    pub iterations_completed: usize,
    pub final_loss: Option<f64>,
    pub error: Option<String>,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn start(
        run_id: &str,
        command: &str,
        backend: String,
        config: &textstyle::TrainConfig,
        prompt: &textstyle::StylePrompt,
        inputs: Vec<PathBuf>,
        ablation: Option<textstyle::Ablation>,
    ) -> Self {
        Self {
            run_id: run_id.to_string(),
            command: command.to_string(),
            status: RunStatus::Running,
            backend,
            seed: config.seed,
            ablation: ablation.map(|a| a.as_str().to_string()),
            prompt: PromptRecord {
                style_text: prompt.style_text().to_string(),
                source_text: prompt.source_text().to_string(),
            },
            inputs,
            outputs: Vec::new(),
            config: config.to_config_string(),
            timings: Timings {
                started_unix: now(),
                finished_unix: None,
                elapsed_secs: None,
            },
            iterations_completed: 0,
            final_loss: None,
            error: None,
        }
    }

    pub fn finish(&mut self, status: RunStatus) {
        let end = now();
        self.status = status;
        self.timings.finished_unix = Some(end);
        self.timings.elapsed_secs = Some(end - self.timings.started_unix);
    }

    /// Writes via a temporary file and a rename, so readers never see a
    /// half-written manifest.
    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&tmp, json).with_context(|| format!("writing {}", tmp.display()))?;
        std::fs::rename(&tmp, dir.join(MANIFEST_FILE)).context("publishing manifest")?;
        Ok(())
    }
}
