//! Differential dynamic programming for systems on Lie groups, specialised to
//! rigid-body attitude dynamics on `SO(3) × ℝ³`.

pub mod bench;
pub mod cost;
pub mod ddp;
pub mod model;
pub mod so3;
