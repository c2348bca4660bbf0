use crate::error::{Error, Result};

/// Step-down schedule: the rate is halved twice, at evenly spaced points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub total_epochs: usize,
}

impl LrSchedule {
    pub const HALVINGS: u32 = 2;

    pub fn new(initial_lr: f64, total_epochs: usize) -> Self {
        LrSchedule {
            initial_lr,
            total_epochs,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.total_epochs {
            return Err(Error::invalid(format!(
                "epoch {epoch} outside schedule of {} epochs",
                self.total_epochs
            )));
        }
        let segment = (epoch * (Self::HALVINGS as usize + 1) / self.total_epochs) as i32;
        Ok(self.initial_lr * 0.5f64.powi(segment))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirds() {
        let s = LrSchedule::new(5e-4, 200);
        assert_eq!(s.lr_at(0).unwrap(), 5e-4);
        assert_eq!(s.lr_at(66).unwrap(), 5e-4);
        assert_eq!(s.lr_at(67).unwrap(), 2.5e-4);
        assert_eq!(s.lr_at(100).unwrap(), 2.5e-4);
        assert_eq!(s.lr_at(199).unwrap(), 1.25e-4);
        assert!(s.lr_at(200).is_err());
        let one = LrSchedule::new(1.0, 1);
        assert_eq!(one.lr_at(0).unwrap(), 1.0);
    }
}
