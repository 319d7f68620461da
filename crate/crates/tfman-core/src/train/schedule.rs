use crate::error::{Error, Result};

/// Which published training task's milestone list to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Trained from scratch: halved at 5000, 8500, 10500, 11500, 12500,
    /// 13500 over 15000 epochs.
    Bi,
    /// Fine-tuned from the pretrained BI model: halved at 2000, 3500, 4500,
    /// 5500, 6500, 7500 over 8500 epochs.
    BdDn,
}

/// Training recipe: learning-rate schedule plus batch geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSpec {
    pub base_lr: f64,
    /// Epochs at which the learning rate halves; strictly increasing.
    pub milestones: Vec<usize>,
    pub total_epochs: usize,
    pub iterations_per_epoch: usize,
    pub batch_size: usize,
    pub patch_size: usize,
}

impl ScheduleSpec {
    pub fn for_task(task: Task) -> Self {
        let (milestones, total_epochs) = match task {
            Task::Bi => (vec![5000, 8500, 10500, 11500, 12500, 13500], 15000),
            Task::BdDn => (vec![2000, 3500, 4500, 5500, 6500, 7500], 8500),
        };
        ScheduleSpec {
            base_lr: 1e-4,
            milestones,
            total_epochs,
            iterations_per_epoch: 50,
            batch_size: 16,
            patch_size: 48,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config("milestones must be strictly increasing"));
        }
        if self.batch_size == 0 || self.iterations_per_epoch == 0 || self.patch_size == 0 {
            return Err(Error::config("schedule extents must be >= 1"));
        }
        Ok(())
    }

    /// Learning rate at `epoch`: the base rate halved once per passed
    /// milestone.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let halvings = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base_lr * 0.5f64.powi(halvings as i32)
    }
}

/// Learning rate of the published recipe for `task` at `epoch`.
pub fn lr_at(epoch: usize, task: Task) -> f64 {
    ScheduleSpec::for_task(task).lr_at(epoch)
}
