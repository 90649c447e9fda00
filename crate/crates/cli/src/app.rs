//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flushleak::attack::{analyze_detection_with, DEFAULT_SEQUENCE_CAP};
use flushleak::distinguish::{
    best_adaptive_tree, best_preset_sequence, default_alphabet, find_reset_sequence,
    synchronized_state,
};
use flushleak::flush::{flush_refill_map, FlushBehavior, FlushKind, RefillOrder};
use flushleak::leakage::{mutual_information, Prior};
use flushleak::policy::{enumerate_control_states, format_blocks, parse_blocks, state_space_size};
use flushleak::script::{self, Overrides};
use flushleak::{Error, Execution, PolicyConfig, PolicyKind};

use crate::config::{bundled_configs, load_config_dir};
use crate::table::{compute_table, write_table_csv};

#[derive(Debug, Parser)]
#[command(
    name = "flushleak",
    version,
    about = "Cache replacement state leakage across flushes"
)]
pub struct Cli {
    /// Run data-parallel loops on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct PolicyArgs {
    /// plru, qlru_h00_m1_r2_u1 (alias qlru) or opaque.
    #[arg(long, default_value = "plru")]
    pub policy: PolicyKind,
    #[arg(long, default_value_t = 8)]
    pub assoc: usize,
}

impl PolicyArgs {
    fn config(&self) -> Result<PolicyConfig, CliError> {
        Ok(PolicyConfig::new(self.policy, self.assoc)?)
    }
}

#[derive(Debug, Args)]
pub struct ChannelArgs {
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long, default_value = "wbinvd")]
    pub flush_kind: FlushKind,
    /// Whether the flush keeps the control state.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub preserve: bool,
    /// default, asc, desc, or an explicit block list such as "I7 I6 I5 I4".
    #[arg(long, default_value = "default")]
    pub refill: RefillOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Preset,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate an access-pattern script and print the observed trace.
    Run {
        script: PathBuf,
        #[arg(long)]
        policy: Option<PolicyKind>,
        #[arg(long)]
        assoc: Option<usize>,
        /// preserve or reset.
        #[arg(long)]
        flush: Option<FlushBehavior>,
        #[arg(long)]
        verbose: bool,
    },
    /// Mutual information of the flush/refill channel, as JSON.
    Leakage {
        #[command(flatten)]
        channel: ChannelArgs,
    },
    /// The flush/refill channel as `initial,final` CSV.
    Map {
        #[command(flatten)]
        channel: ChannelArgs,
        /// Output file; standard output if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Best preset probe sequence or adaptive probing tree.
    Distinguish {
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, value_enum, default_value = "preset")]
        mode: Mode,
        #[arg(long)]
        max_len: usize,
        /// Number of blocks outside the set's content available to probes.
        #[arg(long, default_value_t = 1)]
        fresh: usize,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Find or verify a hit-only reset sequence.
    Reset {
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, requires = "max_len", conflicts_with = "verify")]
        find: bool,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long, required_unless_present = "find")]
        verify: Option<String>,
    },
    /// Detection accuracy of flush-resistant Prime+Probe over all victims.
    Attack {
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long)]
        victim_blocks: usize,
        #[arg(long)]
        max_accesses: usize,
        #[arg(long)]
        invalidate_before: bool,
    },
    /// Leakage of every cache level of every CPU config, as CSV.
    Table {
        /// Directory of CPU JSON configs; the bundled set if omitted.
        #[arg(long)]
        configs: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count (and optionally list) the valid control states.
    Enumerate {
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long)]
        list: bool,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Analysis(String),
    #[error("internal error: {0}")]
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Analysis(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Invariant(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Invariant(_) => CliError::Invariant(e.to_string()),
            Error::StateSpaceTooLarge { .. }
            | Error::SearchCapExceeded { .. }
            | Error::OracleMismatch
            | Error::QueryBudgetExhausted(_) => CliError::Analysis(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Whether the command's answer was positive; a negative answer (a sequence
/// that does not reset, no sequence found) exits with status 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Negative,
}

/// Parses `args` (including the program name) and runs the command, writing
/// results to `out` and diagnostics to `err`. Returns the exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match execute(&cli, out, err) {
        Ok(Outcome::Success) => 0,
        Ok(Outcome::Negative) => 1,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<Outcome, CliError> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match &cli.command {
        Command::Run {
            script: path,
            policy,
            assoc,
            flush,
            verbose,
        } => {
            let bytes = fs::read(path).map_err(|e| io_err(format!("{}: {e}", path.display())))?;
            let program = script::parse_bytes(&bytes)
                .map_err(|e| CliError::Usage(format!("{}:{e}", path.display())))?;
            let overrides = Overrides {
                policy: *policy,
                assoc: *assoc,
                flush: *flush,
            };
            let eval = script::evaluate(&program, &overrides)?;
            for w in &eval.warnings {
                writeln!(err, "warning: {w}").map_err(io_err)?;
            }
            if *verbose {
                writeln!(
                    out,
                    "policy: {} assoc {} flush {}",
                    eval.policy.kind(),
                    eval.policy.assoc(),
                    eval.behavior
                )
                .map_err(io_err)?;
                writeln!(out, "final: {}", eval.final_state).map_err(io_err)?;
            }
            writeln!(out, "{}", eval.trace()).map_err(io_err)?;
        }
        Command::Leakage { channel } => {
            let map = build_map(channel)?;
            let report = mutual_information(&map, &Prior::Uniform)?;
            writeln!(out, "{}", report.to_json()).map_err(io_err)?;
        }
        Command::Map { channel, out: path } => {
            let map = build_map(channel)?;
            match path {
                Some(p) => {
                    let file =
                        fs::File::create(p).map_err(|e| io_err(format!("{}: {e}", p.display())))?;
                    map.write_csv(file)?;
                }
                None => map.write_csv(&mut *out)?,
            }
        }
        Command::Distinguish {
            policy,
            mode,
            max_len,
            fresh,
            format,
        } => {
            let p = policy.config()?;
            let content = p.canonical_content();
            let states = enumerate_control_states(p)?;
            let alphabet = default_alphabet(&content, *fresh);
            match mode {
                Mode::Preset => {
                    let (seq, part) =
                        best_preset_sequence(p, &content, &states, &alphabet, *max_len)?;
                    if *format == Format::Json {
                        let v = serde_json::json!({
                            "sequence": format_blocks(&seq),
                            "cells": part.len(),
                            "partition": part,
                        });
                        writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("json"))
                            .map_err(io_err)?;
                    } else {
                        writeln!(out, "sequence: {}", format_blocks(&seq)).map_err(io_err)?;
                        writeln!(out, "cells: {}", part.len()).map_err(io_err)?;
                        for cell in &part.cells {
                            let states: Vec<String> =
                                cell.states.iter().map(ToString::to_string).collect();
                            writeln!(
                                out,
                                "  {} -> {{{}}}",
                                flushleak::policy::format_trace(&cell.trace),
                                states.join(" ")
                            )
                            .map_err(io_err)?;
                        }
                    }
                }
                Mode::Adaptive => {
                    let tree = best_adaptive_tree(p, &content, &states, &alphabet, *max_len)?;
                    if *format == Format::Json {
                        writeln!(out, "{}", tree.to_json()).map_err(io_err)?;
                    } else {
                        write!(out, "{}", tree.render_text()).map_err(io_err)?;
                        writeln!(out, "leaves: {}", tree.leaf_count()).map_err(io_err)?;
                    }
                }
            }
        }
        Command::Reset {
            policy,
            find,
            max_len,
            verify,
        } => {
            let p = policy.config()?;
            let content = p.canonical_content();
            if *find {
                let max_len = max_len.expect("clap enforces --max-len");
                return match find_reset_sequence(p, &content, max_len)? {
                    Some(seq) => {
                        let end = synchronized_state(p, &content, &seq)?.ok_or_else(|| {
                            CliError::Invariant("found sequence does not synchronize".into())
                        })?;
                        writeln!(out, "sequence: {}", format_blocks(&seq)).map_err(io_err)?;
                        writeln!(out, "state: {end}").map_err(io_err)?;
                        Ok(Outcome::Success)
                    }
                    None => {
                        writeln!(out, "no reset sequence of length <= {max_len}")
                            .map_err(io_err)?;
                        Ok(Outcome::Negative)
                    }
                };
            }
            let text = verify.as_deref().expect("clap enforces --verify");
            let seq = parse_blocks(text).map_err(CliError::Usage)?;
            return match synchronized_state(p, &content, &seq)? {
                Some(end) => {
                    writeln!(out, "reset: true").map_err(io_err)?;
                    writeln!(out, "state: {end}").map_err(io_err)?;
                    Ok(Outcome::Success)
                }
                None => {
                    writeln!(out, "reset: false").map_err(io_err)?;
                    Ok(Outcome::Negative)
                }
            };
        }
        Command::Attack {
            policy,
            victim_blocks,
            max_accesses,
            invalidate_before,
        } => {
            let report = analyze_detection_with(
                policy.config()?,
                *victim_blocks,
                *max_accesses,
                *invalidate_before,
                DEFAULT_SEQUENCE_CAP,
                exec,
            )?;
            report.write_csv(&mut *out)?;
        }
        Command::Table { configs, out: path } => {
            let cfgs = match configs {
                Some(dir) => load_config_dir(dir).map_err(|e| CliError::Usage(e.to_string()))?,
                None => bundled_configs(),
            };
            let rows = compute_table(&cfgs, exec)?;
            match path {
                Some(p) => {
                    let file =
                        fs::File::create(p).map_err(|e| io_err(format!("{}: {e}", p.display())))?;
                    write_table_csv(&rows, file).map_err(io_err)?;
                }
                None => write_table_csv(&rows, &mut *out).map_err(io_err)?,
            }
        }
        Command::Enumerate { policy, list } => {
            let p = policy.config()?;
            let states = enumerate_control_states(p)?;
            writeln!(out, "states: {}", states.len()).map_err(io_err)?;
            if states.len() as u128 != state_space_size(p) && p.kind() == PolicyKind::Plru {
                return Err(CliError::Invariant("PLRU enumeration is incomplete".into()));
            }
            if *list {
                for s in &states {
                    writeln!(out, "{s}").map_err(io_err)?;
                }
            }
        }
    }
    Ok(Outcome::Success)
}

fn build_map(args: &ChannelArgs) -> Result<flushleak::flush::ChannelMap, CliError> {
    let p = args.policy.config()?;
    Ok(flush_refill_map(
        p,
        args.flush_kind,
        FlushBehavior::from_preserves(args.preserve),
        &args.refill.blocks(p),
    )?)
}
