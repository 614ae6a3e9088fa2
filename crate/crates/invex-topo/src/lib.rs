//! Command-line front end for `invex-topo-core`: configs, reports and CSV
//! artifacts.

pub mod artifacts;
pub mod commands;
pub mod game_doc;
pub mod params;
pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::Value;
use sha2::{Digest, Sha256};

pub use params::{Command, List, Params};
pub use report::{CheckVerdict, Report};

/// Exit codes of the binary.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const FAIL: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const INCONCLUSIVE: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        exit::USAGE
    }
}

pub(crate) fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Reads `--config` (if any) and lays the explicitly given flags over it.
pub fn merge_config(command: Command, cli: Params) -> Result<Params, CliError> {
    let Some(path) = cli.config.clone() else {
        let mut p = cli;
        p.command = Some(command);
        return Ok(p);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    let file: Params = serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    if let Some(c) = file.command {
        if c != command {
            return Err(usage(format!("config {}: command is `{}` but `{}` was invoked", path.display(), c.name(), command.name())));
        }
    }
    let mut base = serde_json::to_value(&file).map_err(|e| usage(e.to_string()))?;
    let over = serde_json::to_value(&cli).map_err(|e| usage(e.to_string()))?;
    if let (Value::Object(b), Value::Object(o)) = (&mut base, over) {
        for (k, v) in o {
            if !v.is_null() {
                b.insert(k, v);
            }
        }
    }
    let mut merged: Params = serde_json::from_value(base).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    merged.command = Some(command);
    Ok(merged)
}

fn check_finite(p: &Params) -> Result<(), CliError> {
    let scalars = [
        ("level", p.level),
        ("alpha", p.alpha),
        ("mu", p.mu),
        ("f-star", p.f_star),
        ("mu1", p.mu1),
        ("mu2", p.mu2),
        ("eps-excl", p.eps_excl),
        ("slack", p.slack),
        ("beta", p.beta),
        ("eta", p.eta),
        ("set-tol", p.set_tol),
        ("tol-grad", p.tol_grad),
        ("tol-val", p.tol_val),
        ("tol", p.tol),
        ("stop-eps", p.stop_eps),
        ("nash-tol", p.nash_tol),
    ];
    for (name, v) in scalars {
        if let Some(x) = v {
            if !x.is_finite() {
                return Err(usage(format!("field `{name}`: {x} is not finite")));
            }
        }
    }
    let lists = [
        ("box", &p.domain),
        ("center", &p.center),
        ("radii", &p.radii),
        ("x0", &p.x0),
        ("x1", &p.x1),
        ("base", &p.base),
        ("deltas", &p.deltas),
        ("k-box", &p.k_box),
    ];
    for (name, v) in lists {
        if let Some(List(xs)) = v {
            if let Some(x) = xs.iter().find(|x| !x.is_finite()) {
                return Err(usage(format!("field `{name}`: {x} is not finite")));
            }
        }
    }
    Ok(())
}

/// Rejects fields the command does not read, fills defaults and inlines a
/// game file. The result is what gets hashed and echoed.
pub fn normalize(command: Command, mut p: Params) -> Result<Params, CliError> {
    check_finite(&p)?;
    let value = serde_json::to_value(&p).map_err(|e| usage(e.to_string()))?;
    if let Value::Object(map) = &value {
        for key in map.keys() {
            if !params::COMMON_FIELDS.contains(&key.as_str()) && !command.fields().contains(&key.as_str()) {
                return Err(usage(format!("field `{key}` is not used by `{}`", command.name())));
            }
        }
    }
    if let Some(g) = &p.game {
        p.game = Some(game_doc::GameSource::Inline(g.load()?));
    }
    commands::fill_defaults(command, &mut p)?;
    Ok(p)
}

/// Hex SHA-256 of the normalized config without the output directory.
pub fn config_hash(p: &Params) -> String {
    let mut q = p.clone();
    q.out = None;
    q.config = None;
    let bytes = serde_json::to_vec(&q).expect("params serialize");
    hex::encode(Sha256::digest(&bytes))
}

pub struct Outcome {
    pub report: Report,
    pub exit_code: i32,
    pub report_path: PathBuf,
}

/// Runs one analysis and writes its report and artifacts.
pub fn execute(command: Command, params: Params) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let params = normalize(command, params)?;
    let out = params.out.clone().unwrap_or_else(|| PathBuf::from("invex-topo-out"));
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let mut ctx = commands::Ctx::new(params.clone(), out.clone());
    commands::run(command, &mut ctx)?;
    let mut report = ctx.finish(command, config_hash(&params));
    report.timings.total_ms = start.elapsed().as_secs_f64() * 1e3;
    let path = out.join("report.json");
    write_json(&path, &report)?;
    let exit_code = report.exit_code;
    Ok(Outcome { report, exit_code, report_path: path })
}

fn write_json(path: &Path, report: &Report) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(report).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
