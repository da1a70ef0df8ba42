//! Convergence-study orchestration: experiment configuration, the built-in
//! test-case registry, the per-level pipeline and report emission.

pub mod config;
pub mod report;
pub mod study;
pub mod testcases;

pub use config::{ConfigError, EmitFormat, ExperimentConfig, ReferenceKind};
pub use report::emit_report;
pub use study::{fit_rate, run_study, LevelRow, RateFit, StudyError, StudyReport};
pub use testcases::{test_case, TestCase, TEST_CASE_IDS};
