//! The `key=value` training configuration file: model keys are handled by
//! the core config, trainer keys here; anything else is rejected with its
//! line number. `#` starts a comment, blank lines are ignored.

use std::path::Path;

use anyhow::{bail, Context, Result};
use tfman_core::image::DegradationKind;
use tfman_core::net::TfmanConfig;
use tfman_core::train::{ScheduleSpec, Task};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: TfmanConfig,
    pub schedule: ScheduleSpec,
    pub degradation: DegradationKind,
    /// Write a checkpoint every this many epochs (and at the end).
    pub checkpoint_interval: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: TfmanConfig::default(),
            schedule: ScheduleSpec::for_task(Task::Bi),
            degradation: DegradationKind::Bi,
            checkpoint_interval: 100,
        }
    }
}

impl RunConfig {
    /// Trainer-side keys; model keys are routed to [`TfmanConfig`].
    fn apply_trainer_kv(&mut self, key: &str, value: &str) -> Result<bool> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| anyhow::anyhow!("invalid value '{value}' for key '{key}'"))
        }
        match key {
            "task" => {
                self.schedule = match value {
                    "bi" => ScheduleSpec::for_task(Task::Bi),
                    "bd_dn" => ScheduleSpec::for_task(Task::BdDn),
                    other => bail!("unknown task '{other}' (expected bi or bd_dn)"),
                }
            }
            "degradation" => {
                self.degradation = DegradationKind::parse(value)?;
            }
            "epochs" => self.schedule.total_epochs = parse(key, value)?,
            "iterations_per_epoch" => self.schedule.iterations_per_epoch = parse(key, value)?,
            "batch_size" => self.schedule.batch_size = parse(key, value)?,
            "patch_size" => self.schedule.patch_size = parse(key, value)?,
            "base_lr" => self.schedule.base_lr = parse(key, value)?,
            "milestones" => {
                let mut ms = Vec::new();
                for part in value.split(',').filter(|p| !p.trim().is_empty()) {
                    ms.push(parse::<usize>(key, part.trim())?);
                }
                self.schedule.milestones = ms;
            }
            "checkpoint_interval" => self.checkpoint_interval = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(
                    "{}:{}: expected key=value, got '{raw}'",
                    path.display(),
                    lineno + 1
                );
            };
            let (key, value) = (key.trim(), value.trim());
            let handled = cfg
                .model
                .apply_kv(key, value)
                .map_err(anyhow::Error::from)
                .and_then(|h| {
                    if h {
                        Ok(true)
                    } else {
                        cfg.apply_trainer_kv(key, value)
                    }
                })
                .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
            if !handled {
                bail!("{}:{}: unknown key '{key}'", path.display(), lineno + 1);
            }
        }
        cfg.model.validate()?;
        cfg.schedule.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_mixed_model_and_trainer_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg");
        std::fs::write(
            &path,
            "scale=3\nrecurrences=2\nchannels=16\nnonlocal_channels=16\nca_reduced=4\n\
             task=bd_dn\ndegradation=bd\nepochs=7\nbatch_size=4\npatch_size=24\n",
        )
        .unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.model.scale, 3);
        assert_eq!(cfg.model.recurrences, 2);
        assert_eq!(cfg.schedule.total_epochs, 7);
        assert_eq!(cfg.schedule.batch_size, 4);
        assert_eq!(cfg.degradation, DegradationKind::Bd);
        // bd_dn milestones came along with the task.
        assert_eq!(cfg.schedule.milestones[0], 2000);
    }

    #[test]
    fn unknown_key_reports_the_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg");
        std::fs::write(&path, "scale=2\n\nnope=1\n").unwrap();
        let err = RunConfig::from_file(&path).unwrap_err().to_string();
        assert!(err.contains(":3"), "{err}");
        assert!(err.contains("nope"), "{err}");
    }
}
