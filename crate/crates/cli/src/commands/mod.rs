pub mod baseline;
pub mod eval;
pub mod predict;
pub mod report;
pub mod synth;
pub mod train;
