//! CSV artifacts. Coordinates are columns `x0, x1, ...`; masks are 0/1.

use std::path::Path;

use invex_topo_core::certify::FlowTrace;
use invex_topo_core::games::RationalizabilityTrace;
use invex_topo_core::grid::{ComponentLabeling, Lattice};
use invex_topo_core::minimax::SolutionClassification;
use invex_topo_core::mountain_pass::PassResult;

use crate::CliError;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn io(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

fn coord_header(prefix: &[&str], dim: usize, suffix: &[&str]) -> Vec<String> {
    prefix
        .iter()
        .map(|s| s.to_string())
        .chain((0..dim).map(|i| format!("x{i}")))
        .chain(suffix.iter().map(|s| s.to_string()))
        .collect()
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

/// `node, x.., value, label` for every grid node; label −1 outside the set.
pub fn write_labeling(path: &Path, lattice: &Lattice, labeling: &ComponentLabeling) -> Result<(), CliError> {
    let grid = &lattice.grid;
    let mut w = writer(path)?;
    w.write_record(coord_header(&["node"], grid.dim(), &["value", "label"])).map_err(io)?;
    let mut p = vec![0.0; grid.dim()];
    for node in 0..grid.len() {
        grid.coord_into(node, &mut p);
        let mut row = vec![node.to_string()];
        row.extend(p.iter().map(|x| num(*x)));
        row.push(num(lattice.values[node]));
        row.push(labeling.labels[node].map_or("-1".to_string(), |l| l.to_string()));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// `node, x.., e, mlow, mup` for nodes in at least one solution mask.
pub fn write_solution_masks(path: &Path, c: &SolutionClassification) -> Result<(), CliError> {
    let grid = &c.grid;
    let mut w = writer(path)?;
    w.write_record(coord_header(&["node"], grid.dim(), &["e", "mlow", "mup"])).map_err(io)?;
    for node in 0..grid.len() {
        let flags = [c.e_mask.bits[node], c.mlow_mask.bits[node], c.mup_mask.bits[node]];
        if !flags.iter().any(|b| *b) {
            continue;
        }
        let mut row = vec![node.to_string()];
        row.extend(grid.coord(node).iter().map(|x| num(*x)));
        row.extend(flags.iter().map(|b| u8::from(*b).to_string()));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// `iteration, node, x.., value`; iteration is empty for the final path.
pub fn write_pass(path: &Path, r: &PassResult, dim: usize, values: &[f64]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(coord_header(&["iteration", "node"], dim, &["value"])).map_err(io)?;
    for row in &r.trace {
        let mut rec = vec![row.iteration.to_string(), row.node.to_string()];
        rec.extend(row.x.iter().map(|x| num(*x)));
        rec.push(num(row.value));
        w.write_record(&rec).map_err(io)?;
    }
    for (k, (x, v)) in r.path.iter().zip(values).enumerate() {
        let mut rec = vec![String::new(), k.to_string()];
        rec.extend(x.iter().map(|x| num(*x)));
        rec.push(num(*v));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// `t, x.., f`.
pub fn write_flow(path: &Path, trace: &FlowTrace, dim: usize) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((0..dim).map(|i| format!("x{i}")));
    header.push("f".into());
    w.write_record(&header).map_err(io)?;
    for s in &trace.samples {
        let mut rec = vec![num(s.t)];
        rec.extend(s.x.iter().map(|x| num(*x)));
        rec.push(num(s.f));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// `k, player, node, a.., member` for every node of every player grid.
pub fn write_trace(path: &Path, trace: &RationalizabilityTrace) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let max_dim = trace.steps[0].set.masks.iter().map(|m| m.grid.dim()).max().unwrap_or(1);
    let mut header = vec!["k".to_string(), "player".into(), "node".into()];
    header.extend((0..max_dim).map(|i| format!("a{i}")));
    header.push("member".into());
    w.write_record(&header).map_err(io)?;
    for step in &trace.steps {
        for (i, m) in step.set.masks.iter().enumerate() {
            for node in 0..m.grid.len() {
                let mut rec = vec![step.k.to_string(), i.to_string(), node.to_string()];
                let p = m.grid.coord(node);
                rec.extend((0..max_dim).map(|a| p.get(a).map_or(String::new(), |x| num(*x))));
                rec.push(u8::from(m.bits[node]).to_string());
                w.write_record(&rec).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

/// One row per point: `x..` plus named extra columns.
pub fn write_points(path: &Path, dim: usize, extra: &[&str], rows: &[(Vec<f64>, Vec<f64>)]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(coord_header(&[], dim, extra)).map_err(io)?;
    for (x, e) in rows {
        let rec: Vec<String> = x.iter().chain(e).map(|v| num(*v)).collect();
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(io)
}
