//! Run directories: `<outdir>/<experiment>/<label>/` with `report.json`,
//! `report.txt`, `reports.csv` and the experiment's own files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::experiments::Outcome;

/// Creates the run directory. An existing one is only reused with `force`.
pub fn prepare_dir(outdir: &Path, experiment: &str, label: &str, force: bool) -> anyhow::Result<PathBuf> {
    let dir = outdir.join(experiment).join(label);
    if dir.exists() {
        if !force {
            bail!("{} already exists; pass --force to overwrite", dir.display());
        }
        fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

pub fn report_json(config: &ExperimentConfig, outcome: &Outcome) -> serde_json::Value {
    json!({
        "experiment": outcome.experiment,
        "passed": outcome.passed(),
        "config": config,
        "info": outcome.info,
        "reports": outcome.reports,
    })
}

pub fn write_outcome(dir: &Path, config: &ExperimentConfig, outcome: &Outcome) -> anyhow::Result<()> {
    let json = serde_json::to_string_pretty(&report_json(config, outcome))?;
    fs::write(dir.join("report.json"), json + "\n")?;
    fs::write(dir.join("report.txt"), outcome.text())?;
    fs::write(dir.join("reports.csv"), outcome.reports_csv())?;
    for (name, contents) in &outcome.files {
        fs::write(dir.join(name), contents)?;
    }
    Ok(())
}
