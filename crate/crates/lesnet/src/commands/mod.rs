//! One module per pipeline stage: dns → extract → train → les → report.

pub mod dns;
pub mod extract;
pub mod les;
pub mod report;
pub mod train;
