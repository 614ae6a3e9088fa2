//! Mountain-pass search between two points by the string method with a
//! climbing image, and the sublevel separation premise.

use alloc::vec;
use alloc::vec::Vec;

use serde::Serialize;
use thiserror::Error;

use crate::expr::{ExprError, ScalarField};
use crate::grid::{cell_level_mask, connected_components, BoxDomain, Direction, GridError, RegularGrid};
use crate::optimize::{dist, levenberg_marquardt, norm};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PassError {
    #[error("string needs at least 3 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("endpoints must have dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value at endpoint {0}")]
    NonFiniteEndpoint(usize),
    #[error("endpoint {index} has value {value} above the level {level}")]
    AboveLevel { index: usize, value: f64, level: f64 },
    #[error("endpoint {0} lies outside the grid box")]
    OutsideBox(usize),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassOptions {
    pub nodes: usize,
    pub iters: usize,
    pub tol: f64,
    /// Relaxation step; `None` means `1e-2 · ‖x1 − x0‖`.
    pub step: Option<f64>,
    /// Optional clamp box for fields that are not increasing at infinity.
    pub domain: Option<BoxDomain>,
    /// Record the whole path every this many iterations (0 = never).
    pub record_every: usize,
}

impl Default for PassOptions {
    fn default() -> Self {
        PassOptions { nodes: 33, iters: 5000, tol: 1e-6, step: None, domain: None, record_every: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PassStatus {
    Converged,
    NoPass,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub node: usize,
    pub x: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassResult {
    pub status: PassStatus,
    pub pass_point: Vec<f64>,
    pub pass_value: f64,
    pub grad_norm: f64,
    pub converged: bool,
    pub no_pass: bool,
    pub boundary_hit: bool,
    pub iterations: usize,
    /// Highest interior value after each iteration.
    pub max_history: Vec<f64>,
    pub trace: Vec<TraceRow>,
    /// Final path.
    pub path: Vec<Vec<f64>>,
}

/// Runs the string method from the straight segment `x0 → x1`.
///
/// Each iteration moves interior nodes along the gradient component
/// orthogonal to the local tangent and then redistributes them at equal arc
/// length. Once the string settles, the highest node climbs along the tangent
/// while descending orthogonally, and Levenberg–Marquardt on `∇f` polishes it.
pub fn find_mountain_pass(field: &ScalarField, x0: &[f64], x1: &[f64], opts: &PassOptions) -> Result<PassResult, PassError> {
    let n = field.dim();
    let m = opts.nodes;
    if m < 3 {
        return Err(PassError::TooFewNodes(m));
    }
    for x in [x0, x1] {
        if x.len() != n {
            return Err(PassError::DimensionMismatch { expected: n, got: x.len() });
        }
    }
    let f0 = field.value(x0)?;
    let f1 = field.value(x1)?;
    if !f0.is_finite() {
        return Err(PassError::NonFiniteEndpoint(0));
    }
    if !f1.is_finite() {
        return Err(PassError::NonFiniteEndpoint(1));
    }
    let f_end = f0.max(f1);
    let no_pass_band = 1e-8 * (1.0 + libm::fabs(f_end));
    let step = opts.step.unwrap_or(1e-2 * dist(x0, x1)).max(1e-12);

    let mut path: Vec<Vec<f64>> = (0..m)
        .map(|k| {
            let t = k as f64 / (m - 1) as f64;
            x0.iter().zip(x1).map(|(a, b)| a + t * (b - a)).collect()
        })
        .collect();
    let mut values: Vec<f64> = Vec::with_capacity(m);
    for p in &path {
        values.push(field.value(p)?);
    }
    let mut boundary_hit = false;
    let mut trace = Vec::new();
    let mut max_history = Vec::new();
    let mut g = vec![0.0; n];
    let mut iterations = 0;
    let record = |trace: &mut Vec<TraceRow>, it: usize, path: &[Vec<f64>], values: &[f64]| {
        for (k, (p, v)) in path.iter().zip(values).enumerate() {
            trace.push(TraceRow { iteration: it, node: k, x: p.clone(), value: *v });
        }
    };
    if opts.record_every > 0 {
        record(&mut trace, 0, &path, &values);
    }
    for it in 1..=opts.iters {
        iterations = it;
        let mut moved: f64 = 0.0;
        let old = path.clone();
        for k in 1..m - 1 {
            let tau = tangent(&old[k - 1], &old[k + 1]);
            field.value_grad(&old[k], &mut g)?;
            let gt: f64 = g.iter().zip(&tau).map(|(a, b)| a * b).sum();
            for i in 0..n {
                path[k][i] -= step * (g[i] - gt * tau[i]);
            }
            if let Some(d) = &opts.domain {
                let before = path[k].clone();
                d.clamp(&mut path[k]);
                boundary_hit |= before != path[k];
            }
        }
        reparameterize(&mut path);
        for k in 1..m - 1 {
            moved = moved.max(dist(&path[k], &old[k]));
            values[k] = field.value(&path[k])?;
        }
        let top = values[1..m - 1].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max_history.push(top);
        if opts.record_every > 0 && it % opts.record_every == 0 {
            record(&mut trace, it, &path, &values);
        }
        if moved <= 1e-3 * opts.tol * step {
            break;
        }
    }

    let (kmax, top) = values[1..m - 1]
        .iter()
        .enumerate()
        .fold((1, f64::NEG_INFINITY), |(bk, bv), (i, v)| if *v > bv { (i + 1, *v) } else { (bk, bv) });
    if top <= f_end + no_pass_band {
        let p = path[kmax].clone();
        let gn = norm(&field.gradient(&p)?);
        return Ok(PassResult {
            status: PassStatus::NoPass,
            pass_point: p,
            pass_value: top,
            grad_norm: gn,
            converged: false,
            no_pass: true,
            boundary_hit,
            iterations,
            max_history,
            trace,
            path,
        });
    }

    // climbing image
    let tau = tangent(&path[kmax - 1], &path[kmax + 1]);
    let mut x = path[kmax].clone();
    let mut h = step;
    for _ in 0..opts.iters {
        field.value_grad(&x, &mut g)?;
        if norm(&g) <= opts.tol * 1e-2 {
            break;
        }
        let gt: f64 = g.iter().zip(&tau).map(|(a, b)| a * b).sum();
        let dir: Vec<f64> = (0..n).map(|i| -(g[i] - 2.0 * gt * tau[i])).collect();
        let cand: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + h * d).collect();
        let cand_g = field.gradient(&cand)?;
        if norm(&cand_g) < norm(&g) {
            x = cand;
            h = (h * 1.2).min(10.0 * step);
        } else {
            h *= 0.5;
            if h < 1e-14 {
                break;
            }
        }
    }
    let clamp_box = opts.domain.clone().unwrap_or_else(|| {
        let r = 10.0 * (1.0 + dist(x0, x1));
        BoxDomain::new(x.iter().map(|v| v - r).collect(), x.iter().map(|v| v + r).collect()).expect("finite box")
    });
    let lm = levenberg_marquardt(|p, out| field.value_grad(p, out).map(|_| ()), &x, &clamp_box, 200, opts.tol * 1e-4)?;
    let spacing = dist(x0, x1) / (m - 1) as f64;
    if lm.residual_norm < norm(&field.gradient(&x)?) && dist(&lm.x, &path[kmax]) <= 2.0 * spacing {
        x = lm.x;
    }
    if let Some(d) = &opts.domain {
        boundary_hit |= d.on_boundary(&x, 1e-12);
    }
    let pass_value = field.value(&x)?;
    let grad_norm = norm(&field.gradient(&x)?);
    let converged = grad_norm <= opts.tol;
    Ok(PassResult {
        status: if converged { PassStatus::Converged } else { PassStatus::Inconclusive },
        pass_point: x,
        pass_value,
        grad_norm,
        converged,
        no_pass: false,
        boundary_hit,
        iterations,
        max_history,
        trace,
        path,
    })
}

fn tangent(a: &[f64], b: &[f64]) -> Vec<f64> {
    let d: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
    let l = norm(&d);
    if l == 0.0 {
        return d;
    }
    d.into_iter().map(|v| v / l).collect()
}

/// Redistributes the nodes at equal arc length along the polyline.
fn reparameterize(path: &mut [Vec<f64>]) {
    let m = path.len();
    let mut cum = vec![0.0; m];
    for k in 1..m {
        cum[k] = cum[k - 1] + dist(&path[k], &path[k - 1]);
    }
    let total = cum[m - 1];
    if total == 0.0 {
        return;
    }
    let old = path.to_vec();
    let mut seg = 0;
    for (k, node) in path.iter_mut().enumerate().take(m - 1).skip(1) {
        let s = total * k as f64 / (m - 1) as f64;
        while seg + 1 < m - 1 && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
        for (i, v) in node.iter_mut().enumerate() {
            *v = old[seg][i] + t * (old[seg + 1][i] - old[seg][i]);
        }
    }
}

/// True iff `x0` and `x1` fall in different components of the sublevel mask
/// `f ≤ c` on `grid` (cell-minimum sampling).
pub fn verify_separation(field: &ScalarField, grid: &RegularGrid, x0: &[f64], x1: &[f64], c: f64) -> Result<bool, PassError> {
    for (index, x) in [x0, x1].into_iter().enumerate() {
        if x.len() != grid.dim() {
            return Err(PassError::DimensionMismatch { expected: grid.dim(), got: x.len() });
        }
        if !grid.domain().contains(x) {
            return Err(PassError::OutsideBox(index));
        }
        let value = field.value(x)?;
        if !(value <= c) {
            return Err(PassError::AboveLevel { index, value, level: c });
        }
    }
    let mask = cell_level_mask(field, grid, c, Direction::Sub)?;
    let labels = connected_components(&mask);
    let a = labels.labels[grid.nearest_node(x0)?];
    let b = labels.labels[grid.nearest_node(x1)?];
    Ok(a != b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::builtin;

    #[test]
    fn doublewell_pass() {
        let f = builtin("doublewell").unwrap();
        let r = find_mountain_pass(&f, &[-1.0, 0.0], &[1.0, 0.0], &PassOptions::default()).unwrap();
        assert_eq!(r.status, PassStatus::Converged);
        assert!(norm(&r.pass_point) < 1e-6);
        assert!((r.pass_value - 1.0).abs() < 1e-9);
        assert!(r.grad_norm <= 1e-6);
    }

    #[test]
    fn doublewell_pass_from_bent_start() {
        // endpoints off the axis: the string has to relax before climbing
        let f = builtin("doublewell").unwrap();
        let r = find_mountain_pass(&f, &[-1.0, 0.5], &[1.0, -0.5], &PassOptions::default()).unwrap();
        assert!(r.converged, "{:?}", r.pass_point);
        assert!(norm(&r.pass_point) < 1e-6);
        assert!(r.max_history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn swapping_endpoints_gives_same_value() {
        let f = builtin("doublewell").unwrap();
        let a = find_mountain_pass(&f, &[-1.0, 0.3], &[1.0, 0.0], &PassOptions::default()).unwrap();
        let b = find_mountain_pass(&f, &[1.0, 0.0], &[-1.0, 0.3], &PassOptions::default()).unwrap();
        assert!((a.pass_value - b.pass_value).abs() < 1e-6);
    }

    #[test]
    fn convex_has_no_pass() {
        let f = builtin("quadratic").unwrap();
        let r = find_mountain_pass(&f, &[-1.0, 0.0], &[1.0, 0.0], &PassOptions::default()).unwrap();
        assert!(r.no_pass && !r.converged);
        assert!(r.pass_value <= 1.0 + 1e-8);
    }

    #[test]
    fn fig3_slice_has_no_pass() {
        let f = builtin("fig3_twosided_pl").unwrap();
        let r = find_mountain_pass(&f, &[-2.0, 0.0], &[2.0, 0.0], &PassOptions::default()).unwrap();
        assert!(r.no_pass);
        // grid-path oracle: along y = 0 the field is max(|x|-1, 0)², at most 1 on [-2, 2]
        for k in 0..=200 {
            let x = -2.0 + 0.02 * k as f64;
            assert!(f.value(&[x, 0.0]).unwrap() <= 1.0);
        }
    }

    #[test]
    fn trace_records_path() {
        let f = builtin("doublewell").unwrap();
        let opts = PassOptions { nodes: 5, iters: 4, record_every: 2, ..PassOptions::default() };
        let r = find_mountain_pass(&f, &[-1.0, 0.5], &[1.0, 0.0], &opts).unwrap();
        assert_eq!(r.trace.len(), 5 * (1 + r.iterations / 2));
        assert!(find_mountain_pass(&f, &[-1.0, 0.0], &[1.0, 0.0], &PassOptions { nodes: 2, ..PassOptions::default() }).is_err());
    }

    #[test]
    fn separation() {
        let grid = RegularGrid::uniform(BoxDomain::cube(2, -3.0, 3.0).unwrap(), 201).unwrap();
        let fig1 = builtin("fig1_invex").unwrap();
        assert!(verify_separation(&fig1, &grid, &[0.0, -1.0], &[0.0, 1.0], 1e-6).unwrap());
        let dw = builtin("doublewell").unwrap();
        assert!(verify_separation(&dw, &grid, &[-1.0, 0.0], &[1.0, 0.0], 0.5).unwrap());
        assert!(!verify_separation(&dw, &grid, &[-1.0, 0.0], &[1.0, 0.0], 2.0).unwrap());
        assert!(matches!(
            verify_separation(&dw, &grid, &[0.0, 0.0], &[1.0, 0.0], 0.5),
            Err(PassError::AboveLevel { index: 0, .. })
        ));
        assert_eq!(verify_separation(&dw, &grid, &[5.0, 0.0], &[1.0, 0.0], 0.5), Err(PassError::OutsideBox(0)));
    }
}
