pub mod ablate;
pub mod assimilate;
pub mod eval;
pub mod gradcheck;
pub mod synth;
pub mod train;
