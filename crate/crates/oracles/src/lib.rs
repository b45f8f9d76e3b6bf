//! Slow, direct reference implementations. Each one is written against the
//! defining formulas, not against detkit's code paths, so the tests that
//! compare the two are meaningful.

#![allow(clippy::needless_range_loop)]

pub mod ap;
pub mod fixtures;
pub mod nms;
pub mod swin;
