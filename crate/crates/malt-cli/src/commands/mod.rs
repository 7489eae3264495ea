pub mod ablate;
pub mod eval;
pub mod gendata;
pub mod gradcheck;
pub mod stream;
pub mod train;
