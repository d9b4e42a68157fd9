//! Metrics, evaluation protocols, ablations and human-eval tooling.

pub mod ablations;
pub mod human;
pub mod metrics;
pub mod protocols;
pub mod report;

pub use metrics::{
    median, mse, psnr, psnr_from_mse, region_mse, summarize, PDist, Summary, PSNR_CAP,
};
pub use protocols::{
    difficulty_split, eval_autoregressive, eval_teacher_forced, step_metrics, AutoregressiveReport,
    Difficulty, EvalSet, TeacherForcedReport, EVAL_MIN_INDEX,
};
pub use report::{MetricReport, Table};
