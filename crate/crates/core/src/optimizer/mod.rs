//! Parameter updates: plain SGD, Kronecker-factored natural-gradient
//! preconditioning, and learning-rate schedules.

mod natural;
mod schedule;
mod sgd;

use std::fmt;
use std::str::FromStr;

pub use natural::{
    kronecker_solve, ng_precondition, ng_update_state, LayerFactors, NgConfig, NgState,
    LAMBDA_FLOOR,
};
pub use schedule::{
    exponential_lr, scale_lr_for_workers, LrSchedule, ScheduleKind, DEFAULT_EPOCHS, DEFAULT_LR,
};
pub use sgd::{apply_sgd, sgd_step};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    Sgd,
    #[default]
    NaturalGradient,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::NaturalGradient => "ngsgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "ngsgd" => Ok(OptimizerKind::NaturalGradient),
            other => Err(format!("expected `sgd` or `ngsgd`, got `{other}`")),
        }
    }
}
