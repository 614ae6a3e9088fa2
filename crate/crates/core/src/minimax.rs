//! Minimax problems `min_x max_y f(x, y)`: primal/dual functions, best
//! responses, solution-set classification, product structure and
//! interchangeability checks, gradient descent-ascent, and inner-modulus
//! estimates.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::Serialize;
use thiserror::Error;

use crate::certify::Multistart;
use crate::expr::{ExprError, ScalarField};
use crate::grid::{connected_components, sample, BoxDomain, CellMask, GridError, RegularGrid};
use crate::optimize::{block_optimum, dist, norm, Sense};
use crate::seq;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MinimaxError {
    #[error("split ({nx}, {ny}) does not match field dimension {dim}")]
    BadSplit { nx: usize, ny: usize, dim: usize },
    #[error("{block} box has dimension {got}, expected {expected}")]
    BoxDimension { block: &'static str, expected: usize, got: usize },
    #[error("point lies outside the {block} box")]
    OutsideBox { block: &'static str },
    #[error("best-response set is empty at probe {probe:?}")]
    EmptyBestResponse { probe: Vec<f64> },
    #[error("inner solve diverged at {point:?}")]
    InnerSolve { point: Vec<f64> },
    #[error("invalid parameter {name}: {message}")]
    BadParameter { name: &'static str, message: String },
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// `f(x, y)` with `x` the first `nx` coordinates and `y` the last `ny`.
#[derive(Debug, Clone)]
pub struct MinimaxProblem {
    pub field: ScalarField,
    pub nx: usize,
    pub ny: usize,
    pub x_box: BoxDomain,
    pub y_box: BoxDomain,
}

impl MinimaxProblem {
    pub fn new(field: ScalarField, nx: usize, ny: usize, x_box: BoxDomain, y_box: BoxDomain) -> Result<Self, MinimaxError> {
        if nx == 0 || ny == 0 || nx + ny != field.dim() {
            return Err(MinimaxError::BadSplit { nx, ny, dim: field.dim() });
        }
        if x_box.dim() != nx {
            return Err(MinimaxError::BoxDimension { block: "x", expected: nx, got: x_box.dim() });
        }
        if y_box.dim() != ny {
            return Err(MinimaxError::BoxDimension { block: "y", expected: ny, got: y_box.dim() });
        }
        Ok(MinimaxProblem { field, nx, ny, x_box, y_box })
    }

    /// Splits a joint box: the first `nx` axes go to `x`.
    pub fn from_joint_box(field: ScalarField, nx: usize, joint: &BoxDomain) -> Result<Self, MinimaxError> {
        let n = field.dim();
        if joint.dim() != n || nx == 0 || nx >= n {
            return Err(MinimaxError::BadSplit { nx, ny: n.saturating_sub(nx), dim: n });
        }
        let x_box = BoxDomain::new(joint.lo()[..nx].to_vec(), joint.hi()[..nx].to_vec())?;
        let y_box = BoxDomain::new(joint.lo()[nx..].to_vec(), joint.hi()[nx..].to_vec())?;
        Self::new(field, nx, n - nx, x_box, y_box)
    }

    pub fn dim(&self) -> usize {
        self.nx + self.ny
    }

    pub fn x_range(&self) -> Range<usize> {
        0..self.nx
    }

    pub fn y_range(&self) -> Range<usize> {
        self.nx..self.nx + self.ny
    }

    pub fn joint_box(&self) -> BoxDomain {
        self.x_box.product(&self.y_box)
    }

    pub fn join(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        p[..self.nx].copy_from_slice(x);
        p[self.nx..].copy_from_slice(y);
        p
    }
}

/// Which block a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    X,
    Y,
}

/// Which of the two value functions to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueSide {
    /// `F(x) = max_y f(x, y)`
    Primal,
    /// `G(y) = min_x f(x, y)`
    Dual,
}

/// `F(x)` or `G(y)` by multistart descent over the other block's box.
pub fn primal_dual_value(problem: &MinimaxProblem, point: &[f64], side: ValueSide, ms: &Multistart) -> Result<f64, MinimaxError> {
    let (own_box, other_box, own_name, free, sense) = match side {
        ValueSide::Primal => (&problem.x_box, &problem.y_box, "x", problem.y_range(), Sense::Max),
        ValueSide::Dual => (&problem.y_box, &problem.x_box, "y", problem.x_range(), Sense::Min),
    };
    if point.len() != own_box.dim() || !own_box.contains(point) {
        return Err(MinimaxError::OutsideBox { block: own_name });
    }
    let base = match side {
        ValueSide::Primal => problem.join(point, &other_box.center()),
        ValueSide::Dual => problem.join(&other_box.center(), point),
    };
    let starts = seq::starts(other_box, ms.starts, ms.seed);
    let (v, _) = block_optimum(&problem.field, &base, free, other_box, sense, &starts, ms.iters)?;
    if !v.is_finite() {
        return Err(MinimaxError::InnerSolve { point: point.to_vec() });
    }
    Ok(v)
}

/// Grid approximation of a best-response set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestResponse {
    /// Node indices of the responding block's grid.
    pub nodes: Vec<usize>,
    pub points: Vec<Vec<f64>>,
    /// Slice optimum (grid optimum polished by descent).
    pub optimum: f64,
    /// Polished optimizer, which need not be a node.
    pub polished: Vec<f64>,
    /// Value of each returned node.
    pub values: Vec<f64>,
    pub tol: f64,
}

/// `BR_x(y) = argmin_x f(x, y)` (side X, `fixed = y`) or
/// `BR_y(x) = argmax_y f(x, y)` (side Y, `fixed = x`): every node of `grid`
/// within `tol` of the best node value. The polished optimizer is returned
/// alongside for distance queries.
pub fn best_response_set(
    problem: &MinimaxProblem,
    side: Side,
    fixed: &[f64],
    grid: &RegularGrid,
    tol: f64,
) -> Result<BestResponse, MinimaxError> {
    let (free, sense, bbox, fixed_box, fixed_name) = match side {
        Side::X => (problem.x_range(), Sense::Min, &problem.x_box, &problem.y_box, "y"),
        Side::Y => (problem.y_range(), Sense::Max, &problem.y_box, &problem.x_box, "x"),
    };
    if fixed.len() != fixed_box.dim() || !fixed_box.contains(fixed) {
        return Err(MinimaxError::OutsideBox { block: fixed_name });
    }
    if grid.dim() != bbox.dim() {
        return Err(MinimaxError::BoxDimension { block: fixed_name, expected: bbox.dim(), got: grid.dim() });
    }
    let join = |own: &[f64]| match side {
        Side::X => problem.join(own, fixed),
        Side::Y => problem.join(fixed, own),
    };
    let mut values = Vec::with_capacity(grid.len());
    let mut q = vec![0.0; grid.dim()];
    let mut best = 0usize;
    for node in 0..grid.len() {
        grid.coord_into(node, &mut q);
        let v = problem.field.value(&join(&q))?;
        if sense.better(v, values.get(best).copied().unwrap_or(v)) || node == 0 {
            best = node;
        }
        values.push(v);
    }
    let start = grid.coord(best);
    let base = join(&start);
    let (mut optimum, mut polished) = block_optimum(&problem.field, &base, free, grid.domain(), sense, core::slice::from_ref(&start), 500)?;
    if !optimum.is_finite() || sense.better(values[best], optimum) {
        optimum = values[best];
        polished = start;
    }
    // measured from the best node so the set is never empty
    let node_best = values[best];
    let nodes: Vec<usize> = (0..grid.len())
        .filter(|&i| match sense {
            Sense::Min => values[i] <= node_best + tol,
            Sense::Max => values[i] >= node_best - tol,
        })
        .collect();
    let points = nodes.iter().map(|&i| grid.coord(i)).collect();
    let values = nodes.iter().map(|&i| values[i]).collect();
    Ok(BestResponse { nodes, points, optimum, polished, values, tol })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyOptions {
    pub tol_val: f64,
    /// When set, saddle candidates must also have `‖∇f‖ ≤ tol_grad`
    /// unless they lie on the box boundary.
    pub tol_grad: Option<f64>,
    pub deviations: usize,
    pub seed: u64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions { tol_val: 1e-6, tol_grad: None, deviations: 32, seed: seq::DEFAULT_SEED }
    }
}

/// Grid approximations of the solution sets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionClassification {
    #[serde(skip)]
    pub grid: RegularGrid,
    #[serde(skip)]
    pub x_grid: RegularGrid,
    #[serde(skip)]
    pub y_grid: RegularGrid,
    /// Joint-grid masks.
    #[serde(skip)]
    pub e_mask: CellMask,
    #[serde(skip)]
    pub mlow_mask: CellMask,
    #[serde(skip)]
    pub mup_mask: CellMask,
    /// Block-grid masks.
    #[serde(skip)]
    pub x_mask: CellMask,
    #[serde(skip)]
    pub y_mask: CellMask,
    /// `F` at every x node and `G` at every y node.
    #[serde(skip)]
    pub primal: Vec<f64>,
    #[serde(skip)]
    pub dual: Vec<f64>,
    pub e_points: Vec<Vec<f64>>,
    pub mlow_points: Vec<Vec<f64>>,
    pub mup_points: Vec<Vec<f64>>,
    pub x_points: Vec<Vec<f64>>,
    pub y_points: Vec<Vec<f64>>,
    pub e_components: usize,
    pub mlow_components: usize,
    pub mup_components: usize,
    pub minimax_value: f64,
    pub maximin_value: f64,
    /// Some optimum of `F` or `G` sits on the box boundary.
    pub boundary_attained: bool,
    pub tol_val: f64,
    pub inconclusive: bool,
}

fn block_grids(problem: &MinimaxProblem, grid: &RegularGrid) -> Result<(RegularGrid, RegularGrid), MinimaxError> {
    if grid.dim() != problem.dim() {
        return Err(MinimaxError::BoxDimension { block: "joint", expected: problem.dim(), got: grid.dim() });
    }
    let res = grid.resolution();
    let d = grid.domain();
    let xb = BoxDomain::new(d.lo()[..problem.nx].to_vec(), d.hi()[..problem.nx].to_vec())?;
    let yb = BoxDomain::new(d.lo()[problem.nx..].to_vec(), d.hi()[problem.nx..].to_vec())?;
    Ok((RegularGrid::new(xb, res[..problem.nx].to_vec())?, RegularGrid::new(yb, res[problem.nx..].to_vec())?))
}

/// Classifies the saddle, minimax and maximin sets on `grid` (a product of an
/// x-grid and a y-grid, x axes first).
///
/// `F` and `G` are taken per node as the best slice node polished by descent.
/// Saddle candidates are tested against `deviations` fixed probes per block.
pub fn classify_solutions(problem: &MinimaxProblem, grid: &RegularGrid, opts: &ClassifyOptions) -> Result<SolutionClassification, MinimaxError> {
    let (xg, yg) = block_grids(problem, grid)?;
    let (nxl, nyl) = (xg.len(), yg.len());
    let lat = sample(&problem.field, grid)?;
    let v = |ix: usize, iy: usize| lat.values[ix + nxl * iy];
    let tol = opts.tol_val;

    let mut primal = Vec::with_capacity(nxl);
    for ix in 0..nxl {
        let iy = (0..nyl).fold(0, |b, j| if v(ix, j) > v(ix, b) { j } else { b });
        let base = grid.coord(ix + nxl * iy);
        let start = base[problem.y_range()].to_vec();
        let (p, _) = block_optimum(&problem.field, &base, problem.y_range(), yg.domain(), Sense::Max, &[start], 500)?;
        primal.push(if p.is_finite() { p.max(v(ix, iy)) } else { v(ix, iy) });
    }
    let mut dual = Vec::with_capacity(nyl);
    for iy in 0..nyl {
        let ix = (0..nxl).fold(0, |b, i| if v(i, iy) < v(b, iy) { i } else { b });
        let base = grid.coord(ix + nxl * iy);
        let start = base[problem.x_range()].to_vec();
        let (g, _) = block_optimum(&problem.field, &base, problem.x_range(), xg.domain(), Sense::Min, &[start], 500)?;
        dual.push(if g.is_finite() { g.min(v(ix, iy)) } else { v(ix, iy) });
    }
    let minimax_value = primal.iter().copied().fold(f64::INFINITY, f64::min);
    let maximin_value = dual.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let x_mask = CellMask { grid: xg.clone(), bits: primal.iter().map(|f| *f <= minimax_value + tol).collect() };
    let y_mask = CellMask { grid: yg.clone(), bits: dual.iter().map(|g| *g >= maximin_value - tol).collect() };

    let mut mlow = CellMask::empty(grid);
    let mut mup = CellMask::empty(grid);
    for iy in 0..nyl {
        for ix in 0..nxl {
            let node = ix + nxl * iy;
            mlow.bits[node] = x_mask.bits[ix] && v(ix, iy) >= primal[ix] - tol;
            mup.bits[node] = y_mask.bits[iy] && v(ix, iy) <= dual[iy] + tol;
        }
    }
    let probes_x = seq::starts(&problem.x_box, opts.deviations, opts.seed);
    let probes_y = seq::starts(&problem.y_box, opts.deviations, opts.seed ^ 0x9e37_79b9);
    let both = mlow.and(&mup);
    let mut e_mask = CellMask::empty(grid);
    let joint = problem.joint_box();
    for node in both.nodes() {
        let p = grid.coord(node);
        if let Some(tg) = opts.tol_grad {
            if !joint.on_boundary(&p, 1e-12) && norm(&problem.field.gradient(&p)?) > tg {
                continue;
            }
        }
        e_mask.bits[node] = is_saddle_against(problem, &p, &probes_x, &probes_y, tol)?;
    }
    let boundary_attained = x_mask.touches_boundary() || y_mask.touches_boundary();
    let inconclusive = x_mask.is_empty() || y_mask.is_empty();
    let pts = |m: &CellMask| m.nodes().map(|n| m.grid.coord(n)).collect::<Vec<_>>();
    Ok(SolutionClassification {
        e_points: pts(&e_mask),
        mlow_points: pts(&mlow),
        mup_points: pts(&mup),
        x_points: pts(&x_mask),
        y_points: pts(&y_mask),
        e_components: connected_components(&e_mask).count,
        mlow_components: connected_components(&mlow).count,
        mup_components: connected_components(&mup).count,
        grid: grid.clone(),
        x_grid: xg,
        y_grid: yg,
        e_mask,
        mlow_mask: mlow,
        mup_mask: mup,
        x_mask,
        y_mask,
        primal,
        dual,
        minimax_value,
        maximin_value,
        boundary_attained,
        tol_val: tol,
        inconclusive,
    })
}

/// `f(x, y′) − tol ≤ f(x, y) ≤ f(x′, y) + tol` for every probe `x′`, `y′`.
fn is_saddle_against(problem: &MinimaxProblem, p: &[f64], probes_x: &[Vec<f64>], probes_y: &[Vec<f64>], tol: f64) -> Result<bool, MinimaxError> {
    let f = &problem.field;
    let v = f.value(p)?;
    let (x, y) = (&p[problem.x_range()], &p[problem.y_range()]);
    for xp in probes_x {
        if f.value(&problem.join(xp, y))? < v - tol {
            return Ok(false);
        }
    }
    for yp in probes_y {
        if f.value(&problem.join(x, yp))? > v + tol {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureVerdict {
    pub pass: bool,
    /// First offending pair, if any.
    pub witness: Option<Vec<f64>>,
    pub pairs_checked: usize,
}

/// Every pair of X × Y must be a saddle within `tol` (checked against the
/// grid values of `F` and `G`), and the E mask must equal X × Y.
pub fn product_structure_check(problem: &MinimaxProblem, c: &SolutionClassification, tol: f64) -> Result<StructureVerdict, MinimaxError> {
    let nxl = c.x_grid.len();
    let mut pairs = 0;
    for iy in c.y_mask.nodes() {
        for ix in c.x_mask.nodes() {
            pairs += 1;
            let node = ix + nxl * iy;
            let p = c.grid.coord(node);
            let v = problem.field.value(&p)?;
            let saddle = v >= c.primal[ix] - tol && v <= c.dual[iy] + tol;
            if !saddle || !c.e_mask.bits[node] {
                return Ok(StructureVerdict { pass: false, witness: Some(p), pairs_checked: pairs });
            }
        }
    }
    let product = c.e_mask.count() == c.x_mask.count() * c.y_mask.count();
    let witness = if product { None } else { c.e_points.first().cloned() };
    Ok(StructureVerdict { pass: product && pairs > 0, witness, pairs_checked: pairs })
}

/// True iff the set nodes of `mask` on a product grid (first `split` axes
/// form the first factor) equal the product of their two projections.
pub fn is_product_set(mask: &CellMask, split: usize) -> bool {
    let grid = &mask.grid;
    let first_len: usize = grid.resolution()[..split].iter().product();
    let second_len = grid.len() / first_len;
    let mut a = vec![false; first_len];
    let mut b = vec![false; second_len];
    for n in mask.nodes() {
        let (i, j) = grid.split_node(n, first_len);
        a[i] = true;
        b[j] = true;
    }
    (0..grid.len()).all(|n| {
        let (i, j) = grid.split_node(n, first_len);
        mask.bits[n] == (a[i] && b[j])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterchangeVerdict {
    pub pass: bool,
    /// Values at (x1,y1), (x2,y2), (x1,y2), (x2,y1).
    pub values: [f64; 4],
    pub saddles: [bool; 4],
}

/// Given two saddles, the mixed pairs must be saddles with the same value.
/// Saddle tests use multistart values of `F` and `G`.
pub fn interchangeability_check(
    problem: &MinimaxProblem,
    s1: &[f64],
    s2: &[f64],
    tol: f64,
    ms: &Multistart,
) -> Result<InterchangeVerdict, MinimaxError> {
    let (x1, y1) = (&s1[problem.x_range()], &s1[problem.y_range()]);
    let (x2, y2) = (&s2[problem.x_range()], &s2[problem.y_range()]);
    let pts = [problem.join(x1, y1), problem.join(x2, y2), problem.join(x1, y2), problem.join(x2, y1)];
    let mut values = [0.0; 4];
    let mut saddles = [false; 4];
    for (k, p) in pts.iter().enumerate() {
        values[k] = problem.field.value(p)?;
        let big_f = primal_dual_value(problem, &p[problem.x_range()], ValueSide::Primal, ms)?;
        let big_g = primal_dual_value(problem, &p[problem.y_range()], ValueSide::Dual, ms)?;
        saddles[k] = values[k] >= big_f - tol && values[k] <= big_g + tol;
    }
    let agree = values.iter().all(|v| libm::fabs(v - values[0]) <= tol);
    Ok(InterchangeVerdict { pass: agree && saddles.iter().all(|s| *s), values, saddles })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GdaResult {
    pub trajectory: Vec<Vec<f64>>,
    pub terminal: Vec<f64>,
    pub converged: bool,
    pub diverged: bool,
    /// `‖(x, y)‖` never decreased along the run (rotation or expansion).
    pub norm_nondecreasing: bool,
    pub iterations: usize,
}

/// Simultaneous gradient descent-ascent. Converged when `‖∇f‖ ≤ tol`;
/// diverged when an iterate leaves the joint box scaled 10× about its center.
pub fn gda(
    problem: &MinimaxProblem,
    x0: &[f64],
    y0: &[f64],
    step_x: f64,
    step_y: f64,
    iters: usize,
    tol: f64,
) -> Result<GdaResult, MinimaxError> {
    if !(step_x > 0.0) || !(step_y > 0.0) {
        return Err(MinimaxError::BadParameter { name: "step", message: "steps must be positive".into() });
    }
    let joint = problem.joint_box();
    let c = joint.center();
    let wide = BoxDomain::new(
        joint.lo().iter().zip(&c).map(|(l, m)| m + 10.0 * (l - m)).collect(),
        joint.hi().iter().zip(&c).map(|(h, m)| m + 10.0 * (h - m)).collect(),
    )?;
    let mut z = problem.join(x0, y0);
    let mut g = vec![0.0; z.len()];
    let mut trajectory = vec![z.clone()];
    let mut converged = false;
    let mut diverged = false;
    let mut norm_nondecreasing = true;
    let mut iterations = 0;
    for it in 0..iters {
        problem.field.value_grad(&z, &mut g)?;
        if norm(&g) <= tol {
            converged = true;
            break;
        }
        iterations = it + 1;
        let before = norm(&z);
        for i in problem.x_range() {
            z[i] -= step_x * g[i];
        }
        for i in problem.y_range() {
            z[i] += step_y * g[i];
        }
        if norm(&z) < before {
            norm_nondecreasing = false;
        }
        trajectory.push(z.clone());
        if !wide.contains(&z) {
            diverged = true;
            break;
        }
    }
    Ok(GdaResult { terminal: z, trajectory, converged, diverged, norm_nondecreasing, iterations })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModulusMode {
    Lipschitz,
    Hoelder,
    Eb,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModulusEstimate {
    pub mode: ModulusMode,
    pub kappa: f64,
    pub alpha_hat: Option<f64>,
    pub deltas: Vec<f64>,
    /// Largest distance observed per delta (per sample in EB mode).
    pub distances: Vec<f64>,
    pub fit_residual: Option<f64>,
    pub samples: usize,
}

/// Distance to the polished optimizer and to the nodes that are within `tol`
/// of the polished optimum (not merely of the best node).
fn dist_to_response(p: &[f64], br: &BestResponse) -> f64 {
    br.points
        .iter()
        .zip(&br.values)
        .filter(|(_, v)| libm::fabs(*v - br.optimum) <= br.tol)
        .map(|(q, _)| q)
        .chain(core::iter::once(&br.polished))
        .map(|q| dist(p, q))
        .fold(f64::INFINITY, f64::min)
}

/// Inner-modulus estimates of a best-response map around `base`.
///
/// `side` names the responding block: `Side::Y` studies `x ↦ BR_y(x)`,
/// `Side::X` studies `y ↦ BR_x(y)`. `grid` discretizes the responding block.
/// Lipschitz and Hölder modes probe `base ± δ e_i` along every axis of the
/// perturbed block; EB mode scans the responding block's grid nodes within
/// `max δ` of the base response.
pub fn estimate_inner_modulus(
    problem: &MinimaxProblem,
    side: Side,
    base: &[f64],
    deltas: &[f64],
    grid: &RegularGrid,
    mode: ModulusMode,
    tol: f64,
) -> Result<ModulusEstimate, MinimaxError> {
    if deltas.is_empty() || deltas.iter().any(|d| !(*d > 0.0)) || deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(MinimaxError::BadParameter { name: "deltas", message: "need positive, strictly decreasing deltas".into() });
    }
    if mode == ModulusMode::Hoelder && deltas.len() < 4 {
        return Err(MinimaxError::BadParameter { name: "deltas", message: "Hölder fit needs at least four deltas".into() });
    }
    let (own, other, other_box) = match side {
        Side::Y => (problem.y_range(), problem.x_range(), &problem.x_box),
        Side::X => (problem.x_range(), problem.y_range(), &problem.y_box),
    };
    let bar_other = &base[other.clone()];
    let bar_own = &base[own.clone()];
    let br0 = best_response_set(problem, side, bar_other, grid, tol)?;
    if br0.points.is_empty() {
        return Err(MinimaxError::EmptyBestResponse { probe: bar_other.to_vec() });
    }
    match mode {
        ModulusMode::Lipschitz | ModulusMode::Hoelder => {
            let mut distances = Vec::with_capacity(deltas.len());
            let mut kappa: f64 = 0.0;
            let mut samples = 0;
            for &d in deltas {
                let mut worst: f64 = 0.0;
                for axis in 0..bar_other.len() {
                    for s in [1.0, -1.0] {
                        let mut probe = bar_other.to_vec();
                        probe[axis] += s * d;
                        if !other_box.contains(&probe) {
                            continue;
                        }
                        let br = best_response_set(problem, side, &probe, grid, tol)?;
                        if br.points.is_empty() {
                            return Err(MinimaxError::EmptyBestResponse { probe });
                        }
                        samples += 1;
                        worst = worst.max(dist_to_response(bar_own, &br));
                    }
                }
                kappa = kappa.max(worst / d);
                distances.push(worst);
            }
            if mode == ModulusMode::Lipschitz {
                return Ok(ModulusEstimate { mode, kappa, alpha_hat: None, deltas: deltas.to_vec(), distances, fit_residual: None, samples });
            }
            let (k, a, r) = loglog_fit(deltas, &distances);
            Ok(ModulusEstimate { mode, kappa: k, alpha_hat: a, deltas: deltas.to_vec(), distances, fit_residual: r, samples })
        }
        ModulusMode::Eb => {
            let radius = deltas[0];
            let mut nu: f64 = 0.0;
            let mut distances = Vec::new();
            let mut q = vec![0.0; grid.dim()];
            let mut g = vec![0.0; problem.dim()];
            for node in 0..grid.len() {
                grid.coord_into(node, &mut q);
                if dist(&q, bar_own) > radius {
                    continue;
                }
                let d = dist_to_response(&q, &br0);
                if d == 0.0 {
                    continue;
                }
                let p = match side {
                    Side::Y => problem.join(bar_other, &q),
                    Side::X => problem.join(&q, bar_other),
                };
                problem.field.value_grad(&p, &mut g)?;
                let gn = norm(&g[own.clone()]);
                if gn == 0.0 {
                    nu = f64::INFINITY;
                } else {
                    nu = nu.max(d / gn);
                }
                distances.push(d);
            }
            let samples = distances.len();
            Ok(ModulusEstimate { mode, kappa: nu, alpha_hat: None, deltas: deltas.to_vec(), distances, fit_residual: None, samples })
        }
    }
}

/// Least squares `log d = log κ + α log δ` over the positive distances.
fn loglog_fit(deltas: &[f64], distances: &[f64]) -> (f64, Option<f64>, Option<f64>) {
    let pts: Vec<(f64, f64)> = deltas
        .iter()
        .zip(distances)
        .filter(|(_, d)| **d > 0.0)
        .map(|(x, d)| (libm::log(*x), libm::log(*d)))
        .collect();
    if pts.len() < 2 {
        return (0.0, None, None);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let alpha = sxy / sxx;
    let c = my - alpha * mx;
    let res = libm::sqrt(pts.iter().map(|p| { let r = p.1 - c - alpha * p.0; r * r }).sum::<f64>() / n);
    (libm::exp(c), Some(alpha), Some(res))
}
