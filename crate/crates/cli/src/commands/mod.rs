pub mod ablate;
pub mod encode;
pub mod eval;
pub mod oracle;
pub mod shuffle;
pub mod train;
