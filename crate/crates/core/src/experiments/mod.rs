//! Everything around a run: configuration, the experiment driver, the
//! output record, named presets, and post-run diagnostics.

pub mod config;
pub mod diagnostics;
pub mod presets;
pub mod record;
pub mod run;
