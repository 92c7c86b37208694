//! Verification harness shared by the test suites and the `selfcheck` command.

pub mod cases;
pub mod compose;
pub mod gradcheck;
pub mod suites;

pub use gradcheck::{check, GradCheck, GradReport};
