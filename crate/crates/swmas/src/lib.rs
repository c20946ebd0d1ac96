//! File formats, reports and experiment drivers around [`swmas_core`].
//!
//! The `swmas` binary exposes these as subcommands.

pub mod experiments;
pub mod format;
pub mod report;
