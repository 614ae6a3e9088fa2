//! Numerical certificates for invexity, increasing at infinity, α-PL,
//! two-sided PL and growth, plus the PL gradient flow.
//!
//! Every grid check reduces to a minimum of a ratio over the non-excluded
//! nodes. Ties in the worst ratio go to the lexicographically smallest
//! witness, so the same grid and parameters always give the same
//! certificate.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::Serialize;
use thiserror::Error;

use crate::expr::{ExprError, ScalarField};
use crate::grid::{distance_field, BoxDomain, CellMask, GridError, RegularGrid};
use crate::minimax::MinimaxProblem;
use crate::optimize::{self, block_optimum, levenberg_marquardt, projected_descent, Sense};
use crate::seq;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertifyError {
    #[error("non-finite value {value} at {point:?}")]
    NonFinite { point: Vec<f64>, value: f64 },
    #[error("invalid parameter {name} = {value}: {message}")]
    BadParameter { name: &'static str, value: f64, message: &'static str },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("minima mask is empty")]
    EmptyMinima,
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn is_pass(self) -> bool {
        self == Verdict::Pass
    }
}

/// Outcome of one quantified check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub condition: String,
    pub params: BTreeMap<String, f64>,
    pub verdict: Verdict,
    /// Smallest observed ratio (largest gap for invexity); `None` when nothing was checked.
    pub worst_ratio: Option<f64>,
    pub witness: Option<Vec<f64>>,
    pub samples_checked: usize,
    pub grid: Option<RegularGrid>,
}

impl Certificate {
    fn new(condition: &str, params: &[(&str, f64)], grid: Option<&RegularGrid>) -> Self {
        Certificate {
            condition: condition.to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            verdict: Verdict::Inconclusive,
            worst_ratio: None,
            witness: None,
            samples_checked: 0,
            grid: grid.cloned(),
        }
    }

    /// Records a sample; keeps the smallest ratio, ties to the smaller point.
    fn observe(&mut self, ratio: f64, point: &[f64]) {
        self.samples_checked += 1;
        let better = match (self.worst_ratio, &self.witness) {
            (None, _) => true,
            (Some(w), Some(p)) => ratio < w || (ratio == w && lex_less(point, p)),
            (Some(w), None) => ratio < w,
        };
        if better {
            self.worst_ratio = Some(ratio);
            self.witness = Some(point.to_vec());
        }
    }

    /// Pass iff the worst ratio is at least `threshold - slack`.
    fn settle_min(mut self, threshold: f64, slack: f64) -> Self {
        self.verdict = match self.worst_ratio {
            None => Verdict::Inconclusive,
            Some(r) if r >= threshold - slack => Verdict::Pass,
            Some(_) => Verdict::Fail,
        };
        self
    }
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Multistart settings shared by the solvers in this module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Multistart {
    pub starts: usize,
    pub iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for Multistart {
    fn default() -> Self {
        Multistart { starts: 64, iters: 2000, tol: 1e-10, seed: seq::DEFAULT_SEED }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinimumEstimate {
    pub f_star: f64,
    pub argmin: Vec<Vec<f64>>,
    /// Some argmin point lies on the box boundary.
    pub boundary: bool,
}

/// Multistart projected descent over `domain`.
///
/// `argmin` holds the terminals within `tol · (1 + |f*|)` of `f*`, clustered at
/// radius `1e-3 · diam(domain)`.
pub fn estimate_minimum(field: &ScalarField, domain: &BoxDomain, ms: &Multistart) -> Result<MinimumEstimate, CertifyError> {
    if ms.starts == 0 {
        return Err(CertifyError::BadParameter { name: "starts", value: 0.0, message: "need at least one start" });
    }
    if field.dim() != domain.dim() {
        return Err(CertifyError::DimensionMismatch { expected: domain.dim(), got: field.dim() });
    }
    let mut terminals = Vec::with_capacity(ms.starts);
    for s in seq::starts(domain, ms.starts, ms.seed) {
        let r = projected_descent(field, &s, domain, ms.iters, ms.tol)?;
        if !r.value.is_finite() {
            return Err(CertifyError::NonFinite { point: r.x, value: r.value });
        }
        terminals.push(r);
    }
    let f_star = terminals.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
    let band = ms.tol.max(1e-9) * (1.0 + libm::fabs(f_star));
    let mut close: Vec<Vec<f64>> = terminals.into_iter().filter(|r| r.value <= f_star + band).map(|r| r.x).collect();
    close.sort_by(|a, b| if lex_less(a, b) { core::cmp::Ordering::Less } else { core::cmp::Ordering::Greater });
    let kept = optimize::cluster(&close, 1e-3 * domain.diameter());
    let argmin: Vec<Vec<f64>> = kept.into_iter().map(|i| close[i].clone()).collect();
    let boundary = argmin.iter().any(|p| domain.on_boundary(p, 1e-9));
    Ok(MinimumEstimate { f_star, argmin, boundary })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryPoint {
    pub point: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryPointSet {
    pub points: Vec<StationaryPoint>,
    pub radius: f64,
}

/// Levenberg–Marquardt on `∇f = 0` from every start; keeps points with
/// `‖∇f‖ ≤ tol_grad`, clustered at radius `1e-3 · diam(domain)`.
pub fn find_stationary_points(
    field: &ScalarField,
    domain: &BoxDomain,
    ms: &Multistart,
    tol_grad: f64,
) -> Result<StationaryPointSet, CertifyError> {
    if field.dim() != domain.dim() {
        return Err(CertifyError::DimensionMismatch { expected: domain.dim(), got: field.dim() });
    }
    let mut found: Vec<StationaryPoint> = Vec::new();
    let residual = |x: &[f64], out: &mut [f64]| field.value_grad(x, out).map(|_| ());
    for s in seq::starts(domain, ms.starts, ms.seed) {
        let r = levenberg_marquardt(residual, &s, domain, 200, tol_grad * 1e-3)?;
        if r.residual_norm <= tol_grad {
            let value = field.value(&r.x)?;
            found.push(StationaryPoint { point: r.x, value, grad_norm: r.residual_norm });
        }
    }
    let radius = 1e-3 * domain.diameter();
    let pts: Vec<Vec<f64>> = found.iter().map(|p| p.point.clone()).collect();
    let kept = optimize::cluster(&pts, radius);
    let points = kept.into_iter().map(|i| found[i].clone()).collect();
    Ok(StationaryPointSet { points, radius })
}

/// Every found stationary point must have value within `tol_val` of the
/// estimated minimum. `worst_ratio` is the largest gap `f(x) − f*`.
pub fn invexity_verdict(
    field: &ScalarField,
    domain: &BoxDomain,
    ms: &Multistart,
    tol_grad: f64,
    tol_val: f64,
) -> Result<Certificate, CertifyError> {
    let min = estimate_minimum(field, domain, ms)?;
    let stat = find_stationary_points(field, domain, ms, tol_grad)?;
    let f_star = stat.points.iter().map(|p| p.value).fold(min.f_star, f64::min);
    let mut cert = Certificate::new("invexity", &[("tol_grad", tol_grad), ("tol_val", tol_val), ("f_star", f_star)], None);
    // observe() keeps the minimum, so feed negated gaps
    for p in &stat.points {
        cert.observe(-(p.value - f_star), &p.point);
    }
    cert.worst_ratio = cert.worst_ratio.map(|r| -r);
    cert.verdict = match cert.worst_ratio {
        None => Verdict::Inconclusive,
        Some(g) if g <= tol_val => Verdict::Pass,
        Some(_) => Verdict::Fail,
    };
    Ok(cert)
}

/// Exclusion and tolerance knobs for the grid checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    /// Nodes whose gap is at most this are skipped; `None` means `1e-9 · (1 + |f*|)`.
    pub eps_excl: Option<f64>,
    /// A ratio passes when it is at least the threshold minus `slack`.
    pub slack: f64,
    /// Starts for the per-slice inner solves (besides the best slice node).
    pub inner_starts: usize,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { eps_excl: None, slack: 1e-9, inner_starts: 8, seed: seq::DEFAULT_SEED }
    }
}

impl CheckOptions {
    fn eps(&self, f_star: f64) -> f64 {
        self.eps_excl.unwrap_or(1e-9 * (1.0 + libm::fabs(f_star)))
    }
}

/// Node values, gradients and per-slice optima for one block of a grid.
struct BlockScan {
    values: Vec<f64>,
    grads: Vec<Vec<f64>>,
    /// Joint node ids per slice, ordered by their block-local flat index.
    slices: Vec<Vec<usize>>,
    optima: Vec<f64>,
    block_grid: RegularGrid,
}

fn block_grid(grid: &RegularGrid, range: &Range<usize>) -> Result<RegularGrid, GridError> {
    let d = grid.domain();
    let bx = BoxDomain::new(d.lo()[range.clone()].to_vec(), d.hi()[range.clone()].to_vec())?;
    RegularGrid::new(bx, grid.resolution()[range.clone()].to_vec())
}

fn scan_block(
    field: &ScalarField,
    grid: &RegularGrid,
    range: Range<usize>,
    block_box: &BoxDomain,
    sense: Sense,
    opts: &CheckOptions,
) -> Result<BlockScan, CertifyError> {
    let n = grid.dim();
    if field.dim() != n {
        return Err(CertifyError::DimensionMismatch { expected: n, got: field.dim() });
    }
    let bgrid = block_grid(grid, &range)?;
    let mut values = Vec::with_capacity(grid.len());
    let mut grads = Vec::with_capacity(grid.len());
    let mut p = vec![0.0; n];
    for node in 0..grid.len() {
        grid.coord_into(node, &mut p);
        let mut g = vec![0.0; n];
        let v = field.value_grad(&p, &mut g)?;
        if !v.is_finite() {
            return Err(CertifyError::NonFinite { point: p.clone(), value: v });
        }
        values.push(v);
        grads.push(g);
    }
    // slice key: flat index over the non-block axes
    let res = grid.resolution();
    let key_of = |node: usize| {
        let idx = grid.multi_index(node);
        let mut key = 0usize;
        let mut stride = 1usize;
        let mut local = 0usize;
        let mut lstride = 1usize;
        for (a, i) in idx.iter().enumerate() {
            if range.contains(&a) {
                local += i * lstride;
                lstride *= res[a];
            } else {
                key += i * stride;
                stride *= res[a];
            }
        }
        (key, local)
    };
    let slice_len = bgrid.len();
    let n_slices = grid.len() / slice_len;
    let mut slices = vec![vec![0usize; slice_len]; n_slices];
    for node in 0..grid.len() {
        let (k, l) = key_of(node);
        slices[k][l] = node;
    }
    let extra = seq::starts(block_box, opts.inner_starts, opts.seed);
    let mut optima = Vec::with_capacity(n_slices);
    for nodes in &slices {
        let mut best = nodes[0];
        for &nd in nodes {
            if sense.better(values[nd], values[best]) {
                best = nd;
            }
        }
        let base = grid.coord(best);
        let mut starts = vec![base[range.clone()].to_vec()];
        starts.extend(extra.iter().cloned());
        let (v, _) = block_optimum(field, &base, range.clone(), block_box, sense, &starts, 500)?;
        let node_best = values[best];
        optima.push(if v.is_finite() && sense.better(v, node_best) { v } else { node_best });
    }
    Ok(BlockScan { values, grads, slices, optima, block_grid: bgrid })
}

fn block_norm_sq(g: &[f64], range: &Range<usize>) -> f64 {
    g[range.clone()].iter().map(|v| v * v).sum()
}

/// `‖∇_B f‖^α` from the squared block norm, exact for α = 2.
fn grad_power(norm_sq: f64, alpha: f64) -> f64 {
    if alpha == 2.0 {
        norm_sq
    } else {
        libm::pow(norm_sq, 0.5 * alpha)
    }
}

fn check_positive(name: &'static str, value: f64) -> Result<(), CertifyError> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(CertifyError::BadParameter { name, value, message: "must be positive and finite" });
    }
    Ok(())
}

fn block_pl_generic(
    condition: &str,
    field: &ScalarField,
    grid: &RegularGrid,
    range: Range<usize>,
    block_box: &BoxDomain,
    sense: Sense,
    alpha: f64,
    threshold: f64,
    params: &[(&str, f64)],
    opts: &CheckOptions,
) -> Result<Certificate, CertifyError> {
    check_positive("alpha", alpha)?;
    let scan = scan_block(field, grid, range.clone(), block_box, sense, opts)?;
    let mut cert = Certificate::new(condition, params, Some(grid));
    for (nodes, opt) in scan.slices.iter().zip(&scan.optima) {
        let eps = opts.eps(*opt);
        for &nd in nodes {
            let gap = match sense {
                Sense::Min => scan.values[nd] - opt,
                Sense::Max => opt - scan.values[nd],
            };
            if gap <= eps {
                continue;
            }
            let lhs = grad_power(block_norm_sq(&scan.grads[nd], &range), alpha);
            cert.observe(lhs / gap, &grid.coord(nd));
        }
    }
    Ok(cert.settle_min(threshold, opts.slack))
}

/// α-PL on the whole grid: `‖∇f‖^α ≥ μ (f − f*)`.
///
/// `f_star` defaults to the smaller of the grid minimum and a multistart
/// estimate over the grid box.
pub fn check_alpha_pl(
    field: &ScalarField,
    grid: &RegularGrid,
    alpha: f64,
    mu: f64,
    f_star: Option<f64>,
    opts: &CheckOptions,
) -> Result<Certificate, CertifyError> {
    check_positive("alpha", alpha)?;
    check_positive("mu", mu)?;
    let n = grid.dim();
    let f_star = match f_star {
        Some(f) => f,
        None => {
            let scan = scan_block(field, grid, 0..n, grid.domain(), Sense::Min, opts)?;
            scan.optima[0]
        }
    };
    let mut cert = Certificate::new("alpha_pl", &[("alpha", alpha), ("mu", mu), ("f_star", f_star)], Some(grid));
    let eps = opts.eps(f_star);
    let mut p = vec![0.0; n];
    let mut g = vec![0.0; n];
    for node in 0..grid.len() {
        grid.coord_into(node, &mut p);
        let v = field.value_grad(&p, &mut g)?;
        if !v.is_finite() {
            return Err(CertifyError::NonFinite { point: p.clone(), value: v });
        }
        let gap = v - f_star;
        if gap <= eps {
            continue;
        }
        let lhs = grad_power(g.iter().map(|x| x * x).sum(), alpha);
        cert.observe(lhs / gap, &p);
    }
    Ok(cert.settle_min(mu, opts.slack))
}

/// α-PL for one block of coordinates: `‖∇_B f‖^α ≥ μ · gap`, where the gap is
/// `f − min_B f` (`Sense::Min`) or `max_B f − f` (`Sense::Max`) over the
/// block's part of the grid box, the other coordinates held fixed.
pub fn check_block_alpha_pl(
    field: &ScalarField,
    grid: &RegularGrid,
    block: Range<usize>,
    sense: Sense,
    alpha: f64,
    mu: f64,
    opts: &CheckOptions,
) -> Result<Certificate, CertifyError> {
    check_positive("mu", mu)?;
    let bbox = block_grid(grid, &block)?.domain().clone();
    let name = match sense {
        Sense::Min => "block_alpha_pl_min",
        Sense::Max => "block_alpha_pl_max",
    };
    let params = [("alpha", alpha), ("mu", mu), ("block_start", block.start as f64), ("block_end", block.end as f64)];
    block_pl_generic(name, field, grid, block, &bbox, sense, alpha, mu, &params, opts)
}

/// Two-sided PL with the factor-2 convention:
/// `‖∇_x f‖² ≥ 2μ₁ (f − min_x f)` and `‖∇_y f‖² ≥ 2μ₂ (max_y f − f)`.
///
/// Worst ratios are reported as `‖∇‖² / gap` and compared against `2μ`.
pub fn check_two_sided_pl(
    problem: &MinimaxProblem,
    grid: &RegularGrid,
    mu1: f64,
    mu2: f64,
    opts: &CheckOptions,
) -> Result<(Certificate, Certificate), CertifyError> {
    check_positive("mu1", mu1)?;
    check_positive("mu2", mu2)?;
    if grid.dim() != problem.dim() {
        return Err(CertifyError::DimensionMismatch { expected: problem.dim(), got: grid.dim() });
    }
    let x = block_pl_generic(
        "two_sided_pl_x",
        &problem.field,
        grid,
        problem.x_range(),
        &problem.x_box,
        Sense::Min,
        2.0,
        2.0 * mu1,
        &[("mu1", mu1)],
        opts,
    )?;
    let y = block_pl_generic(
        "two_sided_pl_y",
        &problem.field,
        grid,
        problem.y_range(),
        &problem.y_box,
        Sense::Max,
        2.0,
        2.0 * mu2,
        &[("mu2", mu2)],
        opts,
    )?;
    Ok((x, y))
}

/// Growth `f − f* ≥ η d(x, P)^β` with `P` the set nodes of `minima`.
/// Nodes of `P` itself are skipped.
pub fn check_growth(
    field: &ScalarField,
    grid: &RegularGrid,
    beta: f64,
    eta: f64,
    minima: &CellMask,
    f_star: f64,
    opts: &CheckOptions,
) -> Result<Certificate, CertifyError> {
    check_positive("beta", beta)?;
    check_positive("eta", eta)?;
    if minima.grid != *grid {
        return Err(CertifyError::DimensionMismatch { expected: grid.len(), got: minima.grid.len() });
    }
    let dist = distance_field(minima).map_err(|_| CertifyError::EmptyMinima)?;
    let mut cert = Certificate::new("growth", &[("beta", beta), ("eta", eta), ("f_star", f_star)], Some(grid));
    let mut p = vec![0.0; grid.dim()];
    for node in 0..grid.len() {
        let d = dist[node];
        if d == 0.0 {
            continue;
        }
        grid.coord_into(node, &mut p);
        let v = field.value(&p)?;
        cert.observe((v - f_star) / pow_beta(d, beta), &p);
    }
    Ok(cert.settle_min(eta, opts.slack))
}

fn pow_beta(d: f64, beta: f64) -> f64 {
    if beta == 2.0 {
        d * d
    } else {
        libm::pow(d, beta)
    }
}

/// Block growth: `gap ≥ η d_B(x, P_B)^β`, where `P_B` is the set of slice
/// nodes whose gap is at most `set_tol · (1 + |optimum|)` and `d_B` is measured
/// within the slice.
pub fn check_block_growth(
    field: &ScalarField,
    grid: &RegularGrid,
    block: Range<usize>,
    sense: Sense,
    beta: f64,
    eta: f64,
    set_tol: f64,
    opts: &CheckOptions,
) -> Result<Certificate, CertifyError> {
    check_positive("beta", beta)?;
    check_positive("eta", eta)?;
    let bbox = block_grid(grid, &block)?.domain().clone();
    let scan = scan_block(field, grid, block.clone(), &bbox, sense, opts)?;
    let name = match sense {
        Sense::Min => "block_growth_min",
        Sense::Max => "block_growth_max",
    };
    let mut cert = Certificate::new(
        name,
        &[("beta", beta), ("eta", eta), ("block_start", block.start as f64), ("block_end", block.end as f64)],
        Some(grid),
    );
    for (nodes, opt) in scan.slices.iter().zip(&scan.optima) {
        let gaps: Vec<f64> = nodes
            .iter()
            .map(|&nd| match sense {
                Sense::Min => scan.values[nd] - opt,
                Sense::Max => opt - scan.values[nd],
            })
            .collect();
        let band = set_tol * (1.0 + libm::fabs(*opt));
        let mask = CellMask { grid: scan.block_grid.clone(), bits: gaps.iter().map(|g| *g <= band).collect() };
        let dist = distance_field(&mask).map_err(|_| CertifyError::EmptyMinima)?;
        for (l, &nd) in nodes.iter().enumerate() {
            if mask.bits[l] {
                continue;
            }
            cert.observe(gaps[l] / pow_beta(dist[l], beta), &grid.coord(nd));
        }
    }
    Ok(cert.settle_min(eta, opts.slack))
}

/// Shell minima of `f` on spheres around `center`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfinityVerdict {
    pub level: f64,
    pub radii: Vec<f64>,
    pub shell_minima: Vec<f64>,
    pub witnesses: Vec<Vec<f64>>,
    /// Index of the first radius whose shell minimum exceeds the level.
    pub first_above: Option<usize>,
    pub verdict: Verdict,
}

/// Samples `directions` (at least `64 n`) unit vectors per radius and polishes
/// the best one by descent along the sphere.
///
/// Pass iff some shell minimum exceeds `level` and from there on every shell
/// minimum exceeds it and the minima are nondecreasing.
pub fn check_increasing_at_infinity(
    field: &ScalarField,
    center: &[f64],
    radii: &[f64],
    level: f64,
    directions: usize,
) -> Result<InfinityVerdict, CertifyError> {
    let n = field.dim();
    if center.len() != n {
        return Err(CertifyError::DimensionMismatch { expected: n, got: center.len() });
    }
    if radii.len() < 3 {
        return Err(CertifyError::BadParameter { name: "radii", value: radii.len() as f64, message: "need at least three radii" });
    }
    if radii.windows(2).any(|w| !(w[0] < w[1])) || !(radii[0] > 0.0) {
        return Err(CertifyError::BadParameter { name: "radii", value: radii[0], message: "must be positive and increasing" });
    }
    let dirs = seq::sphere_directions(n, directions.max(64 * n));
    let mut shell_minima = Vec::with_capacity(radii.len());
    let mut witnesses = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut best = (f64::INFINITY, dirs[0].clone());
        for d in &dirs {
            let p: Vec<f64> = center.iter().zip(d).map(|(c, u)| c + r * u).collect();
            let v = field.value(&p)?;
            if v < best.0 {
                best = (v, d.clone());
            }
        }
        let (v, u) = polish_on_sphere(field, center, r, best.1, best.0)?;
        shell_minima.push(v);
        witnesses.push(center.iter().zip(&u).map(|(c, x)| c + r * x).collect());
    }
    let first_above = shell_minima.iter().position(|m| *m > level);
    let verdict = match first_above {
        None => Verdict::Fail,
        Some(k) => {
            let tail = &shell_minima[k..];
            if tail.iter().all(|m| *m > level) && tail.windows(2).all(|w| w[1] >= w[0]) {
                Verdict::Pass
            } else {
                Verdict::Fail
            }
        }
    };
    Ok(InfinityVerdict { level, radii: radii.to_vec(), shell_minima, witnesses, first_above, verdict })
}

fn polish_on_sphere(field: &ScalarField, center: &[f64], r: f64, mut u: Vec<f64>, mut fv: f64) -> Result<(f64, Vec<f64>), CertifyError> {
    let n = u.len();
    let mut g = vec![0.0; n];
    let mut t = 0.1;
    let point = |u: &[f64]| -> Vec<f64> { center.iter().zip(u).map(|(c, x)| c + r * x).collect() };
    for _ in 0..200 {
        field.value_grad(&point(&u), &mut g)?;
        // tangential gradient with respect to u
        let radial: f64 = g.iter().zip(&u).map(|(a, b)| a * b).sum();
        let tg: Vec<f64> = g.iter().zip(&u).map(|(a, b)| r * (a - radial * b)).collect();
        let tn = optimize::norm(&tg);
        if tn < 1e-14 {
            break;
        }
        let mut moved = false;
        while t > 1e-16 {
            let mut cand: Vec<f64> = u.iter().zip(&tg).map(|(a, b)| a - t * b).collect();
            let cn = optimize::norm(&cand);
            cand.iter_mut().for_each(|x| *x /= cn);
            let cv = field.value(&point(&cand))?;
            if cv < fv - 1e-4 * t * tn * tn {
                u = cand;
                fv = cv;
                moved = true;
                t *= 2.0;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok((fv, u))
}

/// `((α−1)/α)^{α/(α−1)} μ^{1/(α−1)}`.
pub fn pl_growth_constant(alpha: f64, mu: f64) -> Result<f64, CertifyError> {
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(CertifyError::BadParameter { name: "alpha", value: alpha, message: "must exceed 1" });
    }
    check_positive("mu", mu)?;
    let q = (alpha - 1.0) / alpha;
    Ok(libm::pow(q, alpha / (alpha - 1.0)) * libm::pow(mu, 1.0 / (alpha - 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    /// Stop once `f − f* ≤ stop_eps`.
    pub stop_eps: f64,
    pub rtol: f64,
    pub atol: f64,
    pub h0: f64,
    pub max_steps: usize,
    /// PL constant for the time bound, if known.
    pub mu: Option<f64>,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions { stop_eps: 1e-12, rtol: 1e-9, atol: 1e-12, h0: 1e-3, max_steps: 200_000, mu: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowTrace {
    pub samples: Vec<FlowSample>,
    pub terminal_time: f64,
    pub terminal_point: Vec<f64>,
    pub converged: bool,
    /// `g(x0) (α/(α−1))² μ^{−2/α}` when `mu` was given.
    pub time_bound: Option<f64>,
    pub within_bound: Option<bool>,
}

/// Integrates `dx/dt = −∇g`, `g = (f − f*)^{(α−1)/α}`, with an adaptive
/// Bogacki–Shampine pair. A step is accepted only if its error estimate is
/// within tolerance and it strictly decreases `f`.
pub fn pl_gradient_flow(
    field: &ScalarField,
    x0: &[f64],
    alpha: f64,
    f_star: f64,
    opts: &FlowOptions,
) -> Result<FlowTrace, CertifyError> {
    if !(alpha > 1.0) {
        return Err(CertifyError::BadParameter { name: "alpha", value: alpha, message: "must exceed 1" });
    }
    if x0.len() != field.dim() {
        return Err(CertifyError::DimensionMismatch { expected: field.dim(), got: x0.len() });
    }
    let q = (alpha - 1.0) / alpha;
    let f0 = field.value(x0)?;
    if !f0.is_finite() {
        return Err(CertifyError::NonFinite { point: x0.to_vec(), value: f0 });
    }
    let g0 = libm::pow((f0 - f_star).max(0.0), q);
    let time_bound = opts.mu.map(|mu| g0 / (q * q) * libm::pow(mu, -2.0 / alpha));
    if f0 - f_star <= opts.stop_eps {
        return Ok(FlowTrace {
            samples: Vec::new(),
            terminal_time: 0.0,
            terminal_point: x0.to_vec(),
            converged: true,
            time_bound,
            within_bound: time_bound.map(|_| true),
        });
    }
    let n = x0.len();
    let rhs = |x: &[f64], out: &mut [f64]| -> Result<f64, CertifyError> {
        let v = field.value_grad(x, out)?;
        let gap = v - f_star;
        if !(gap > 0.0) {
            out.iter_mut().for_each(|o| *o = 0.0);
            return Ok(v);
        }
        let scale = -q * libm::pow(gap, -1.0 / alpha);
        out.iter_mut().for_each(|o| *o *= scale);
        Ok(v)
    };
    let mut x = x0.to_vec();
    let mut fx = f0;
    let mut t = 0.0;
    let mut h = opts.h0;
    let mut k1 = vec![0.0; n];
    rhs(&x, &mut k1)?;
    let (mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut samples = vec![FlowSample { t, x: x.clone(), f: fx }];
    let mut converged = false;
    for _ in 0..opts.max_steps {
        if h < 1e-15 {
            break;
        }
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        rhs(&tmp, &mut k2)?;
        for i in 0..n {
            tmp[i] = x[i] + 0.75 * h * k2[i];
        }
        rhs(&tmp, &mut k3)?;
        let xn: Vec<f64> = (0..n).map(|i| x[i] + h * (2.0 * k1[i] + 3.0 * k2[i] + 4.0 * k3[i]) / 9.0).collect();
        let fn_ = rhs(&xn, &mut k4)?;
        let mut err: f64 = 0.0;
        for i in 0..n {
            let low = x[i] + h * (7.0 * k1[i] / 24.0 + k2[i] / 4.0 + k3[i] / 3.0 + k4[i] / 8.0);
            let sc = opts.atol + opts.rtol * libm::fabs(xn[i]).max(libm::fabs(x[i]));
            err = err.max(libm::fabs(xn[i] - low) / sc);
        }
        if err <= 1.0 && fn_.is_finite() && fn_ < fx {
            t += h;
            x = xn;
            fx = fn_;
            core::mem::swap(&mut k1, &mut k4);
            samples.push(FlowSample { t, x: x.clone(), f: fx });
            if fx - f_star <= opts.stop_eps {
                converged = true;
                break;
            }
            let grow = if err > 0.0 { 0.9 * libm::pow(err, -1.0 / 3.0) } else { 5.0 };
            h *= grow.clamp(0.2, 5.0);
        } else {
            let shrink = if err.is_finite() && err > 1.0 { 0.9 * libm::pow(err, -1.0 / 3.0) } else { 0.5 };
            h *= shrink.clamp(0.1, 0.5);
        }
    }
    let within_bound = time_bound.map(|b| t <= b);
    Ok(FlowTrace { samples, terminal_time: t, terminal_point: x, converged, time_bound, within_bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::builtin;
    use crate::grid::{level_mask, sample, Direction};

    fn square(lo: f64, hi: f64) -> BoxDomain {
        BoxDomain::cube(2, lo, hi).unwrap()
    }

    #[test]
    fn minimum_of_quadratic() {
        let f = builtin("quadratic").unwrap();
        let m = estimate_minimum(&f, &square(-2.0, 2.0), &Multistart::default()).unwrap();
        assert_eq!(m.f_star, 0.0);
        assert_eq!(m.argmin.len(), 1);
        assert!(optimize::norm(&m.argmin[0]) < 1e-6);
        assert!(!m.boundary);
    }

    #[test]
    fn minimum_of_fig3_x_slice() {
        let f = builtin("fig3_twosided_pl").unwrap();
        let slice = optimize::Slice::new(&f, &[0.0, 0.0], 0..1, 1.0);
        let d = BoxDomain::cube(1, -3.0, 3.0).unwrap();
        let mut best = f64::INFINITY;
        for s in seq::starts(&d, 16, 42) {
            best = best.min(projected_descent(&slice, &s, &d, 500, 1e-12).unwrap().value);
        }
        assert_eq!(best, 0.0);
        // oracle: the slice vanishes exactly on [-1, 1]
        for k in 0..=20 {
            let x = -1.0 + 0.1 * k as f64;
            assert_eq!(f.value(&[x, 0.0]).unwrap(), 0.0);
        }
    }

    #[test]
    fn minimum_of_appb_sits_on_boundary() {
        let f = builtin("appB_exp").unwrap();
        let m = estimate_minimum(&f, &square(-3.0, 3.0), &Multistart::default()).unwrap();
        // dense scan oracle
        let lat = sample(&f, &RegularGrid::uniform(square(-3.0, 3.0), 301).unwrap()).unwrap();
        let scan = lat.values.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((m.f_star - scan).abs() < 1e-9 && (m.f_star + 4.0).abs() < 1e-9);
        assert!(m.boundary);
    }

    #[test]
    fn stationary_points_of_doublewell() {
        let f = builtin("doublewell").unwrap();
        let s = find_stationary_points(&f, &square(-2.0, 2.0), &Multistart::default(), 1e-6).unwrap();
        let mut xs: Vec<f64> = s.points.iter().map(|p| libm::round(p.point[0] * 1e6) / 1e6).collect();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs, vec![-1.0, 0.0, 1.0]);
        assert!(s.points.iter().all(|p| p.grad_norm <= 1e-6 && p.point[1].abs() < 1e-6));
    }

    #[test]
    fn stationary_points_of_fig1_lie_on_bands() {
        let f = builtin("fig1_invex").unwrap();
        let s = find_stationary_points(&f, &square(-3.0, 3.0), &Multistart::default(), 1e-6).unwrap();
        assert!(!s.points.is_empty());
        for p in &s.points {
            assert!((p.point[1].abs() - 1.0).abs() < 1e-6, "{:?}", p.point);
            assert!(p.value.abs() < 1e-12);
        }
    }

    #[test]
    fn invexity_verdicts() {
        let ms = Multistart::default();
        let fig1 = invexity_verdict(&builtin("fig1_invex").unwrap(), &square(-3.0, 3.0), &ms, 1e-6, 1e-6).unwrap();
        assert_eq!(fig1.verdict, Verdict::Pass);
        let dw = invexity_verdict(&builtin("doublewell").unwrap(), &square(-2.0, 2.0), &ms, 1e-6, 1e-6).unwrap();
        assert_eq!(dw.verdict, Verdict::Fail);
        assert!((dw.worst_ratio.unwrap() - 1.0).abs() < 1e-9);
        assert!(optimize::norm(dw.witness.as_ref().unwrap()) < 1e-6);
        let q = invexity_verdict(&builtin("quadratic").unwrap(), &square(-2.0, 2.0), &ms, 1e-6, 1e-6).unwrap();
        assert_eq!(q.verdict, Verdict::Pass);
    }

    #[test]
    fn alpha_pl_on_quadratic() {
        let f = builtin("quadratic").unwrap();
        let grid = RegularGrid::uniform(square(-2.0, 2.0), 41).unwrap();
        let c = check_alpha_pl(&f, &grid, 2.0, 4.0, None, &CheckOptions::default()).unwrap();
        assert_eq!(c.verdict, Verdict::Pass);
        assert_eq!(c.worst_ratio, Some(4.0));
        assert_eq!(c.samples_checked, 41 * 41 - 1);
        let c = check_alpha_pl(&f, &grid, 2.0, 4.1, None, &CheckOptions::default()).unwrap();
        assert_eq!(c.verdict, Verdict::Fail);
        assert!(check_alpha_pl(&f, &grid, 2.0, -1.0, None, &CheckOptions::default()).is_err());
    }

    #[test]
    fn alpha_pl_on_appb_slice() {
        // f(x, 2) = a² e^{-1} - 1 with a = max(|x| - 1, 0): ratio 4a²e^{-2} / (a² e^{-1}) = 4/e
        let f = ScalarField::parse("max(abs(x0)-1,0)^2*exp(-max(abs(2)-1,0)^2) - max(abs(2)-1,0)^2", 1).unwrap();
        let grid = RegularGrid::uniform(BoxDomain::cube(1, -2.0, 2.0).unwrap(), 201).unwrap();
        let four_e = 4.0 / core::f64::consts::E;
        let c = check_alpha_pl(&f, &grid, 2.0, four_e, None, &CheckOptions::default()).unwrap();
        assert_eq!(c.verdict, Verdict::Pass);
        assert!((c.worst_ratio.unwrap() - four_e).abs() < 1e-9);
        let c = check_alpha_pl(&f, &grid, 2.0, 2.0 * four_e, None, &CheckOptions::default()).unwrap();
        assert_eq!(c.verdict, Verdict::Fail);
    }

    #[test]
    fn inconclusive_when_everything_is_excluded() {
        let f = ScalarField::parse("0*x0", 1).unwrap();
        let grid = RegularGrid::uniform(BoxDomain::cube(1, -1.0, 1.0).unwrap(), 11).unwrap();
        let c = check_alpha_pl(&f, &grid, 2.0, 1.0, None, &CheckOptions::default()).unwrap();
        assert_eq!(c.verdict, Verdict::Inconclusive);
        assert_eq!(c.samples_checked, 0);
    }

    fn fig3_problem() -> MinimaxProblem {
        MinimaxProblem::from_joint_box(builtin("fig3_twosided_pl").unwrap(), 1, &square(-3.0, 3.0)).unwrap()
    }

    #[test]
    fn two_sided_pl_fig3() {
        let p = fig3_problem();
        let grid = RegularGrid::uniform(p.joint_box(), 101).unwrap();
        let (x, y) = check_two_sided_pl(&p, &grid, 1.0 / 32.0, 1.0 / 7.0, &CheckOptions::default()).unwrap();
        assert_eq!(x.verdict, Verdict::Pass);
        assert_eq!(y.verdict, Verdict::Pass);
        let (x, _) = check_two_sided_pl(&p, &grid, 0.5, 1.0 / 7.0, &CheckOptions::default()).unwrap();
        assert_eq!(x.verdict, Verdict::Fail);
        let w = x.witness.unwrap();
        assert!(w.iter().all(|v| v.is_finite()));
        // the violation sits where sin² of the y-excess is near one
        let b = w[1].abs() - 1.0;
        assert!(libm::sin(b).powi(2) > 0.5, "{w:?}");
    }

    #[test]
    fn growth_on_quadratic_is_tight() {
        let f = builtin("quadratic").unwrap();
        let grid = RegularGrid::uniform(square(-2.0, 2.0), 41).unwrap();
        let minima = level_mask(&sample(&f, &grid).unwrap(), 1e-12, Direction::Sub);
        let c = check_growth(&f, &grid, 2.0, 1.0, &minima, 0.0, &CheckOptions::default()).unwrap();
        assert_eq!(c.verdict, Verdict::Pass);
        assert!((c.worst_ratio.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(check_growth(&f, &grid, 2.0, 1.0, &CellMask::empty(&grid), 0.0, &CheckOptions::default()), Err(CertifyError::EmptyMinima));
    }

    #[test]
    fn appb_block_constants() {
        let f = builtin("appB_exp").unwrap();
        let grid = RegularGrid::uniform(square(-2.0, 2.0), 101).unwrap();
        let o = CheckOptions::default();
        let e = core::f64::consts::E;
        let x = check_block_alpha_pl(&f, &grid, 0..1, Sense::Min, 2.0, 4.0 / e, &o).unwrap();
        assert_eq!(x.verdict, Verdict::Pass);
        assert!((x.worst_ratio.unwrap() - 4.0 / e).abs() < 1e-9);
        let y = check_block_alpha_pl(&f, &grid, 1..2, Sense::Max, 2.0, 1.0, &o).unwrap();
        assert_eq!(y.verdict, Verdict::Pass);
        let gx = check_block_growth(&f, &grid, 0..1, Sense::Min, 2.0, 1.0 / e, 1e-12, &o).unwrap();
        assert_eq!(gx.verdict, Verdict::Pass);
        assert!((gx.worst_ratio.unwrap() - 1.0 / e).abs() < 1e-9);
        let gy = check_block_growth(&f, &grid, 1..2, Sense::Max, 2.0, 1.0, 1e-12, &o).unwrap();
        assert_eq!(gy.verdict, Verdict::Pass);
        // the growth constant implied by α-PL
        let eta = pl_growth_constant(2.0, 4.0 / e).unwrap();
        assert!((eta - 1.0 / e).abs() < 1e-15);
    }

    #[test]
    fn increasing_at_infinity() {
        let q = check_increasing_at_infinity(&builtin("quadratic").unwrap(), &[0.0, 0.0], &[1.0, 2.0, 4.0], 0.5, 128).unwrap();
        assert_eq!(q.verdict, Verdict::Pass);
        for (m, want) in q.shell_minima.iter().zip([1.0, 4.0, 16.0]) {
            assert!((m - want).abs() < 1e-9);
        }
        let f1 = check_increasing_at_infinity(&builtin("fig1_invex").unwrap(), &[0.0, 0.0], &[3.0, 6.0, 12.0], 0.1, 128).unwrap();
        assert_eq!(f1.verdict, Verdict::Fail);
        assert!(f1.shell_minima.iter().all(|m| *m < 1e-6));
        let dw = check_increasing_at_infinity(&builtin("doublewell").unwrap(), &[0.0, 0.0], &[2.0, 4.0, 8.0], 1.0, 128).unwrap();
        assert_eq!(dw.verdict, Verdict::Pass);
        // oracle: on the radius-2 circle f = t² - 3t + 5 with t = x², minimum 2.75
        assert!((dw.shell_minima[0] - 2.75).abs() < 1e-9);
        assert!(check_increasing_at_infinity(&builtin("quadratic").unwrap(), &[0.0, 0.0], &[1.0, 2.0], 0.5, 128).is_err());
    }

    #[test]
    fn growth_constant_closed_form() {
        assert_eq!(pl_growth_constant(2.0, 4.0).unwrap(), 1.0);
        assert_eq!(pl_growth_constant(2.0, 1.0).unwrap(), 0.25);
        let want = libm::pow(2.0 / 3.0, 1.5);
        assert!((pl_growth_constant(3.0, 1.0).unwrap() - want).abs() < 1e-15);
        assert!(pl_growth_constant(1.0, 1.0).is_err());
    }

    #[test]
    fn flow_on_quadratic_is_unit_speed() {
        let f = builtin("quadratic").unwrap();
        let opts = FlowOptions { mu: Some(4.0), ..FlowOptions::default() };
        let tr = pl_gradient_flow(&f, &[1.0, 0.0], 2.0, 0.0, &opts).unwrap();
        assert!(tr.converged);
        assert!((tr.terminal_time - (1.0 - libm::sqrt(opts.stop_eps))).abs() < 1e-6);
        assert_eq!(tr.time_bound, Some(1.0));
        assert_eq!(tr.within_bound, Some(true));
        assert!(optimize::norm(&tr.terminal_point) < 1e-5);
        assert!(tr.samples.windows(2).all(|w| w[1].f < w[0].f));
        let at_min = pl_gradient_flow(&f, &[0.0, 0.0], 2.0, 0.0, &opts).unwrap();
        assert!(at_min.samples.is_empty() && at_min.terminal_time == 0.0);
    }

    #[test]
    fn certificates_are_reproducible() {
        let f = builtin("fig3_twosided_pl").unwrap();
        let grid = RegularGrid::uniform(square(-3.0, 3.0), 41).unwrap();
        let a = check_alpha_pl(&f, &grid, 2.0, 0.01, None, &CheckOptions::default()).unwrap();
        let b = check_alpha_pl(&f, &grid, 2.0, 0.01, None, &CheckOptions::default()).unwrap();
        assert_eq!(a, b);
    }
}
