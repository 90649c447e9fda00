//! A tiny language for access patterns.
//!
//! ```text
//! # comment
//! @policy=plru @assoc=8 @flush=preserve
//! I0? I1? I2 wbinvd clflush I1 flushcmd victim?
//! ```
//!
//! Tokens are whitespace separated. A trailing `?` records the access's
//! outcome. `I<digits>` names block `<digits>`; any other alphanumeric name
//! is interned to a block of its own, numbered from 2^31 in order of first
//! appearance.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::error::Result;
use crate::flush::{clflush, flush, FlushBehavior, FlushKind};
use crate::policy::{AccessOutcome, BlockId, CacheSetState, PolicyConfig, PolicyKind};

const NAMED_BASE: u32 = 1 << 31;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Ident(String);

impl Ident {
    pub fn new(name: &str) -> Option<Ident> {
        valid_ident(name).then(|| Ident(name.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Block number for `I<digits>` names.
    pub fn numbered(&self) -> Option<u32> {
        numbered(&self.0)
    }
}

impl fmt::Display for Ident {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn numbered(name: &str) -> Option<u32> {
    let digits = name.strip_prefix('I')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse::<u32>().ok().filter(|&n| n < NAMED_BASE)
}

const KEYWORDS: [&str; 3] = ["wbinvd", "flushcmd", "clflush"];

fn valid_ident(name: &str) -> bool {
    !name.is_empty()
        && name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
        && !KEYWORDS.contains(&name)
        && (numbered(name).is_some() || !looks_numbered(name))
}

/// `I` followed only by digits, whether or not the number fits.
fn looks_numbered(name: &str) -> bool {
    name.strip_prefix('I')
        .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pragma {
    Policy(PolicyKind),
    Assoc(usize),
    Flush(FlushBehavior),
}

impl fmt::Display for Pragma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pragma::Policy(k) => write!(f, "@policy={}", k.name()),
            Pragma::Assoc(n) => write!(f, "@assoc={n}"),
            Pragma::Flush(b) => write!(
                f,
                "@flush={}",
                if b.preserves() { "preserve" } else { "reset" }
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Statement {
    Access { block: Ident, observed: bool },
    Wbinvd,
    FlushCmd,
    Clflush(Ident),
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statement::Access { block, observed } => {
                write!(f, "{block}{}", if *observed { "?" } else { "" })
            }
            Statement::Wbinvd => f.write_str("wbinvd"),
            Statement::FlushCmd => f.write_str("flushcmd"),
            Statement::Clflush(b) => write!(f, "clflush {b}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Program {
    pub pragmas: Vec<Pragma>,
    pub statements: Vec<Statement>,
}

impl Program {
    pub fn observed_count(&self) -> usize {
        self.statements
            .iter()
            .filter(|s| matches!(s, Statement::Access { observed: true, .. }))
            .count()
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    /// Byte offset of the offending token.
    pub offset: usize,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

struct Token<'a> {
    text: &'a str,
    offset: usize,
}

fn tokenize(src: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    let mut in_comment = false;
    for (i, c) in src.char_indices() {
        if in_comment {
            in_comment = c != '\n';
            continue;
        }
        if c.is_whitespace() || c == '#' {
            if let Some(s) = start.take() {
                out.push(Token {
                    text: &src[s..i],
                    offset: s,
                });
            }
            in_comment = c == '#';
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: &src[s..],
            offset: s,
        });
    }
    out
}

fn error_at(src: &str, offset: usize, message: String) -> ParseError {
    let before = &src[..offset];
    let line = before.matches('\n').count() + 1;
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    ParseError {
        offset,
        line,
        column: src[line_start..offset].chars().count() + 1,
        message,
    }
}

pub fn parse(src: &str) -> std::result::Result<Program, ParseError> {
    let tokens = tokenize(src);
    let err = |t: &Token, msg: String| error_at(src, t.offset, msg);
    let mut program = Program::default();
    let mut i = 0;
    while i < tokens.len() {
        let tok = &tokens[i];
        if let Some(body) = tok.text.strip_prefix('@') {
            if !program.statements.is_empty() {
                return Err(err(tok, "pragmas must precede all statements".into()));
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| err(tok, format!("expected @key=value, found `{}`", tok.text)))?;
            let pragma =
                match key {
                    "policy" => Pragma::Policy(
                        value
                            .parse()
                            .map_err(|_| err(tok, format!("unknown policy `{value}`")))?,
                    ),
                    "assoc" => Pragma::Assoc(value.parse().map_err(|_| {
                        err(tok, format!("assoc must be an integer, found `{value}`"))
                    })?),
                    "flush" => Pragma::Flush(value.parse().map_err(|_| {
                        err(
                            tok,
                            format!("flush must be preserve or reset, found `{value}`"),
                        )
                    })?),
                    _ => return Err(err(tok, format!("unknown pragma `{key}`"))),
                };
            program.pragmas.push(pragma);
            i += 1;
            continue;
        }
        let stmt = match tok.text {
            "wbinvd" => Statement::Wbinvd,
            "flushcmd" => Statement::FlushCmd,
            "clflush" => {
                let operand = tokens
                    .get(i + 1)
                    .ok_or_else(|| err(tok, "clflush needs a block operand".into()))?;
                let id = Ident::new(operand.text).ok_or_else(|| {
                    err(
                        operand,
                        format!("clflush operand `{}` is not a block", operand.text),
                    )
                })?;
                i += 1;
                Statement::Clflush(id)
            }
            text => {
                let (name, observed) = match text.strip_suffix('?') {
                    Some(n) => (n, true),
                    None => (text, false),
                };
                let block = Ident::new(name)
                    .ok_or_else(|| err(tok, format!("unexpected token `{text}`")))?;
                Statement::Access { block, observed }
            }
        };
        program.statements.push(stmt);
        i += 1;
    }
    Ok(program)
}

/// Like [`parse`], for input that may not be UTF-8.
pub fn parse_bytes(bytes: &[u8]) -> std::result::Result<Program, ParseError> {
    match std::str::from_utf8(bytes) {
        Ok(s) => parse(s),
        Err(e) => {
            let valid = e.valid_up_to();
            let src = std::str::from_utf8(&bytes[..valid]).expect("prefix is valid");
            Err(error_at(src, valid, "invalid UTF-8".into()))
        }
    }
}

/// Canonical text: one pragma per line, then the statements on one line.
pub fn render(program: &Program) -> String {
    let mut out = String::new();
    for p in &program.pragmas {
        out.push_str(&p.to_string());
        out.push('\n');
    }
    let stmts: Vec<String> = program.statements.iter().map(ToString::to_string).collect();
    out.push_str(&stmts.join(" "));
    if !stmts.is_empty() {
        out.push('\n');
    }
    out
}

/// Settings that take precedence over the program's pragmas.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Overrides {
    pub policy: Option<PolicyKind>,
    pub assoc: Option<usize>,
    pub flush: Option<FlushBehavior>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Evaluation {
    pub policy: PolicyConfig,
    pub behavior: FlushBehavior,
    /// Outcomes of the observed accesses, in program order.
    pub outcomes: Vec<AccessOutcome>,
    pub final_state: CacheSetState,
    pub warnings: Vec<String>,
}

impl Evaluation {
    pub fn trace(&self) -> String {
        crate::policy::format_trace(&self.outcomes)
    }
}

fn resolve_block<'a>(names: &mut HashMap<&'a str, BlockId>, id: &'a Ident) -> BlockId {
    if let Some(n) = id.numbered() {
        return BlockId(n);
    }
    let next = BlockId(NAMED_BASE + names.len() as u32);
    *names.entry(id.as_str()).or_insert(next)
}

pub fn evaluate(program: &Program, overrides: &Overrides) -> Result<Evaluation> {
    let mut kind = PolicyKind::Plru;
    let mut assoc = 8;
    let mut behavior = FlushBehavior::PreservesControl;
    for p in &program.pragmas {
        match *p {
            Pragma::Policy(k) => kind = k,
            Pragma::Assoc(n) => assoc = n,
            Pragma::Flush(b) => behavior = b,
        }
    }
    let kind = overrides.policy.unwrap_or(kind);
    let assoc = overrides.assoc.unwrap_or(assoc);
    let behavior = overrides.flush.unwrap_or(behavior);
    let policy = PolicyConfig::new(kind, assoc)?;

    let mut names: HashMap<&str, BlockId> = HashMap::new();

    let mut warnings = Vec::new();
    let mut state = CacheSetState::new_empty(policy);
    let mut outcomes = Vec::new();
    for stmt in &program.statements {
        match stmt {
            Statement::Access { block, observed } => {
                let o = state.access_mut(resolve_block(&mut names, block));
                if *observed {
                    outcomes.push(o);
                }
            }
            Statement::Wbinvd => state = flush(&state, FlushKind::Wbinvd, behavior),
            Statement::FlushCmd => {
                if kind != PolicyKind::Plru && warnings.is_empty() {
                    warnings.push(format!(
                        "flushcmd is an L1 command; applying it to a {} set anyway",
                        kind.name()
                    ));
                }
                state = flush(&state, FlushKind::FlushCmd, behavior);
            }
            Statement::Clflush(block) => state = clflush(&state, resolve_block(&mut names, block)),
        }
    }
    Ok(Evaluation {
        policy,
        behavior,
        outcomes,
        final_state: state,
        warnings,
    })
}
