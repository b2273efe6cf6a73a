//! Learning-rate schedules.
//!
//! Newbob keeps the rate fixed until the epoch-to-epoch gain in held-out
//! accuracy drops below `halve_threshold`; from then on it halves the rate
//! every epoch and stops once the gain drops below `stop_threshold`.
//!
//! The exponential schedule interpolates geometrically from `lr_init` to
//! `lr_init · final_ratio` as training progress runs from 0 to 1.

use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScheduleKind {
    Newbob,
    #[default]
    Exponential,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::Newbob => "newbob",
            ScheduleKind::Exponential => "exponential",
        })
    }
}

impl FromStr for ScheduleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "newbob" => Ok(ScheduleKind::Newbob),
            "exponential" => Ok(ScheduleKind::Exponential),
            other => Err(format!("expected `newbob` or `exponential`, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub lr_init: f64,
    /// Rate currently in force for Newbob.
    pub lr: f64,
    pub halve_threshold: f64,
    pub stop_threshold: f64,
    pub halving_active: bool,
    pub final_ratio: f64,
    pub planned_epochs: usize,
}

pub const DEFAULT_LR: f64 = 0.32;
pub const DEFAULT_EPOCHS: usize = 15;

impl LrSchedule {
    pub fn new(kind: ScheduleKind, lr_init: f64, planned_epochs: usize) -> Self {
        assert!(
            lr_init > 0.0 && lr_init.is_finite(),
            "lr_init must be positive"
        );
        LrSchedule {
            kind,
            lr_init,
            lr: lr_init,
            halve_threshold: 0.005,
            stop_threshold: 0.001,
            halving_active: false,
            final_ratio: 0.01,
            planned_epochs,
        }
    }

    pub fn newbob(lr_init: f64) -> Self {
        LrSchedule::new(ScheduleKind::Newbob, lr_init, DEFAULT_EPOCHS)
    }

    pub fn exponential(lr_init: f64, planned_epochs: usize) -> Self {
        LrSchedule::new(ScheduleKind::Exponential, lr_init, planned_epochs)
    }

    /// Rate to use at `progress`, the completed fraction of planned training.
    pub fn lr_at(&self, progress: f64) -> f64 {
        match self.kind {
            ScheduleKind::Newbob => self.lr,
            ScheduleKind::Exponential => exponential_lr(self, progress),
        }
    }

    /// Newbob update after an epoch. Returns the rate for the next epoch and
    /// whether training should stop.
    pub fn newbob_next(&mut self, prev_cv_acc: f64, cv_acc: f64) -> (f64, bool) {
        let improvement = cv_acc - prev_cv_acc;
        if self.halving_active && improvement < self.stop_threshold {
            return (self.lr, true);
        }
        if improvement < self.halve_threshold {
            self.halving_active = true;
        }
        if self.halving_active {
            self.lr *= 0.5;
        }
        (self.lr, false)
    }

    /// Epoch-boundary hook; only Newbob reacts. Returns `true` to stop.
    pub fn end_epoch(&mut self, prev_cv_acc: f64, cv_acc: f64) -> bool {
        match self.kind {
            ScheduleKind::Newbob => self.newbob_next(prev_cv_acc, cv_acc).1,
            ScheduleKind::Exponential => false,
        }
    }
}

/// `lr_init · final_ratio^progress`, with progress clamped to `[0, 1]`.
pub fn exponential_lr(sched: &LrSchedule, progress: f64) -> f64 {
    let p = progress.clamp(0.0, 1.0);
    sched.lr_init * sched.final_ratio.powf(p)
}

pub fn scale_lr_for_workers(lr_init: f64, workers: usize) -> f64 {
    assert!(workers >= 1, "at least one worker");
    lr_init * workers as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn newbob_keeps_rate_on_good_improvement() {
        let mut s = LrSchedule::newbob(0.32);
        assert_eq!(s.newbob_next(0.50, 0.52), (0.32, false));
        assert!(!s.halving_active);
    }

    #[test]
    fn newbob_halves_below_half_percent() {
        let mut s = LrSchedule::newbob(0.32);
        let (lr, stop) = s.newbob_next(0.600, 0.604);
        assert_eq!(lr, 0.16);
        assert!(!stop);
        assert!(s.halving_active);
        // Sticky: a large gain afterwards still halves.
        assert_eq!(s.newbob_next(0.604, 0.65), (0.08, false));
    }

    #[test]
    fn newbob_stops_below_tenth_percent_when_halving() {
        let mut s = LrSchedule::newbob(0.32);
        s.halving_active = true;
        let (_, stop) = s.newbob_next(0.7000, 0.7005);
        assert!(stop);
    }

    #[test]
    fn newbob_does_not_stop_before_halving() {
        let mut s = LrSchedule::newbob(0.32);
        assert_eq!(s.newbob_next(0.7, 0.7), (0.16, false));
    }

    #[test]
    fn exponential_endpoints() {
        let s = LrSchedule::exponential(0.32, 15);
        assert_eq!(exponential_lr(&s, 0.0), 0.32);
        assert!((exponential_lr(&s, 1.0) - 0.0032).abs() < 1e-15);
        assert!((exponential_lr(&s, 0.5) - 0.032).abs() < 1e-15);
    }

    #[test]
    fn worker_scaling() {
        assert_eq!(scale_lr_for_workers(0.32, 1), 0.32);
        assert_eq!(scale_lr_for_workers(0.32, 16), 5.12);
        assert_eq!(scale_lr_for_workers(0.32, 32), 10.24);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn newbob_never_increases(accs in proptest::collection::vec(0.0f64..1.0, 1..30)) {
                let mut s = LrSchedule::newbob(0.32);
                let mut prev_acc = 0.0;
                let mut prev_lr = s.lr;
                for a in accs {
                    let (lr, stop) = s.newbob_next(prev_acc, a);
                    prop_assert!(lr > 0.0 && lr <= prev_lr);
                    if stop { break; }
                    prev_lr = lr;
                    prev_acc = a;
                }
            }

            #[test]
            fn exponential_strictly_decreasing(a in 0.0f64..1.0, b in 0.0f64..1.0) {
                prop_assume!((a - b).abs() > 1e-9);
                let s = LrSchedule::exponential(0.32, 15);
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                prop_assert!(exponential_lr(&s, lo) > exponential_lr(&s, hi));
                prop_assert!(exponential_lr(&s, hi) > 0.0);
            }
        }
    }
}
