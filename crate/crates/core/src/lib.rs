//! Weakly supervised teacher–student segmentation on sparse pixel annotations.
//!
//! A student network learns from sparse ground truth during warm-up, then from
//! a mix of ground truth and confidence-filtered pseudo-labels produced by an
//! EMA teacher. Everything runs on a small reverse-mode autograd engine over
//! `f64` tensors.

pub mod autograd;
pub mod backbone;
pub mod cli;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod schedules;
pub mod teacher_student;

pub use error::{Error, Result};
