use crate::error::{Error, Result};

pub const STAGES: usize = 4;
pub const DEFAULT_STAGE_LENGTH: usize = 5;
pub const DEFAULT_STAGE_LRS: [f64; STAGES] = [1e-3, 3e-4, 1e-4, 3e-5];

/// Four stages of equal length, each with a strictly smaller learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct StageSchedule {
    stage_length: usize,
    stage_lrs: [f64; STAGES],
}

impl Default for StageSchedule {
    fn default() -> Self {
        StageSchedule {
            stage_length: DEFAULT_STAGE_LENGTH,
            stage_lrs: DEFAULT_STAGE_LRS,
        }
    }
}

impl StageSchedule {
    pub fn new(stage_length: usize, stage_lrs: &[f64]) -> Result<Self> {
        if stage_length == 0 {
            return Err(Error::config("stage length must be at least one epoch"));
        }
        let lrs: [f64; STAGES] = stage_lrs.try_into().map_err(|_| {
            Error::config(format!(
                "expected {STAGES} stage learning rates, got {}",
                stage_lrs.len()
            ))
        })?;
        if lrs.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return Err(Error::config(format!("learning rates must be positive: {lrs:?}")));
        }
        if lrs.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::config(format!(
                "stage learning rates must strictly decrease: {lrs:?}"
            )));
        }
        Ok(StageSchedule {
            stage_length,
            stage_lrs: lrs,
        })
    }

    pub fn stage_length(&self) -> usize {
        self.stage_length
    }

    pub fn stage_lrs(&self) -> &[f64; STAGES] {
        &self.stage_lrs
    }

    pub fn epochs(&self) -> usize {
        self.stage_length * STAGES
    }

    pub fn stage_for_epoch(&self, epoch: usize) -> Result<usize> {
        if epoch >= self.epochs() {
            return Err(Error::config(format!(
                "epoch {epoch} outside the {}-epoch schedule",
                self.epochs()
            )));
        }
        Ok(epoch / self.stage_length)
    }

    pub fn lr_for_epoch(&self, epoch: usize) -> Result<f64> {
        Ok(self.stage_lrs[self.stage_for_epoch(epoch)?])
    }

    pub fn lr_for_stage(&self, stage: usize) -> f64 {
        self.stage_lrs[stage.min(STAGES - 1)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries() {
        let s = StageSchedule::default();
        assert_eq!(s.epochs(), 20);
        assert_eq!(s.lr_for_epoch(0).unwrap(), s.stage_lrs()[0]);
        assert_eq!(s.lr_for_epoch(4).unwrap(), s.stage_lrs()[0]);
        assert_eq!(s.lr_for_epoch(5).unwrap(), s.stage_lrs()[1]);
        assert_eq!(s.lr_for_epoch(19).unwrap(), s.stage_lrs()[3]);
        assert!(s.lr_for_epoch(20).is_err());
    }

    #[test]
    fn changes_exactly_three_times() {
        let s = StageSchedule::default();
        let changes: Vec<usize> = (1..20)
            .filter(|&e| s.lr_for_epoch(e).unwrap() != s.lr_for_epoch(e - 1).unwrap())
            .collect();
        assert_eq!(changes, vec![5, 10, 15]);
        assert!(changes
            .iter()
            .all(|&e| s.lr_for_epoch(e).unwrap() < s.lr_for_epoch(e - 1).unwrap()));
    }

    #[test]
    fn validation() {
        assert!(StageSchedule::new(5, &[1e-3, 1e-4, 1e-5]).is_err());
        assert!(StageSchedule::new(5, &[1e-3, 1e-3, 1e-4, 1e-5]).is_err());
        assert!(StageSchedule::new(0, &DEFAULT_STAGE_LRS).is_err());
        assert!(StageSchedule::new(5, &[1e-3, 1e-4, 1e-5, 0.0]).is_err());
        assert!(StageSchedule::new(2, &[0.1, 0.05, 0.01, 0.001]).is_ok());
    }
}
