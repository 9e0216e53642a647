pub mod ablate;
pub mod forward;
pub mod gradcheck;
pub mod report;
pub mod train;
