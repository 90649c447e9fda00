//! Command-line front end: per-CPU cache models, the leakage table, and the
//! subcommands wrapping the `flushleak` analyses.

pub mod app;
pub mod config;
pub mod table;

pub use app::{run, CliError, Outcome};
pub use config::{bundled_configs, load_config_dir, load_cpu_config, parse_cpu_config, CpuConfig};
pub use table::{compute_table, write_table_csv, TableRow};
