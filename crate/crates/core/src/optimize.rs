//! Local solvers shared by the certificate, minimax and game modules.
//!
//! * [`projected_descent`]: box-projected gradient descent with Armijo
//!   backtracking (c = 1e-4, step halving) from a Barzilai–Borwein trial step.
//! * [`levenberg_marquardt`]: damped Gauss–Newton on a residual map with a
//!   central-difference Jacobian; used to drive `∇f` (or a game's
//!   pseudo-gradient) to zero.

use alloc::vec;
use alloc::vec::Vec;

use crate::expr::{ExprError, ScalarField};
use crate::grid::BoxDomain;
use crate::linalg;

const ARMIJO_C: f64 = 1e-4;

/// Something that can be minimized with first-order information.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<f64, ExprError>;
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, ExprError>;
}

impl Objective for ScalarField {
    fn dim(&self) -> usize {
        ScalarField::dim(self)
    }

    fn value(&self, x: &[f64]) -> Result<f64, ExprError> {
        ScalarField::value(self, x)
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, ExprError> {
        ScalarField::value_grad(self, x, grad)
    }
}

/// `sign · f` restricted to the coordinates `free`, all others held at `base`.
///
/// With `sign = -1` minimizing the slice maximizes `f` over the block.
#[derive(Debug, Clone)]
pub struct Slice<'a> {
    field: &'a ScalarField,
    base: Vec<f64>,
    free: core::ops::Range<usize>,
    sign: f64,
}

impl<'a> Slice<'a> {
    pub fn new(field: &'a ScalarField, base: &[f64], free: core::ops::Range<usize>, sign: f64) -> Self {
        Slice { field, base: base.to_vec(), free, sign }
    }

    fn full(&self, x: &[f64]) -> Vec<f64> {
        let mut p = self.base.clone();
        p[self.free.clone()].copy_from_slice(x);
        p
    }
}

impl Objective for Slice<'_> {
    fn dim(&self) -> usize {
        self.free.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64, ExprError> {
        Ok(self.sign * self.field.value(&self.full(x))?)
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, ExprError> {
        let p = self.full(x);
        let mut g = vec![0.0; p.len()];
        let v = self.field.value_grad(&p, &mut g)?;
        for (o, gi) in grad.iter_mut().zip(&g[self.free.clone()]) {
            *o = self.sign * gi;
        }
        Ok(self.sign * v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Projected gradient descent on `domain` from `x0`.
///
/// Stops when the projected step is below `tol · (1 + ‖x‖∞)` or after
/// `iters` iterations. Non-finite values are reported as domain errors by the
/// objective itself; a NaN value from an otherwise valid expression stops
/// the run with `converged = false`.
pub fn projected_descent<O: Objective + ?Sized>(
    obj: &O,
    x0: &[f64],
    domain: &BoxDomain,
    iters: usize,
    tol: f64,
) -> Result<DescentResult, ExprError> {
    let n = obj.dim();
    let mut x = x0.to_vec();
    domain.clamp(&mut x);
    let mut g = vec![0.0; n];
    let mut fx = obj.value_grad(&x, &mut g)?;
    let mut t: f64 = 1.0;
    let mut trial = vec![0.0; n];
    for it in 0..iters {
        if !fx.is_finite() {
            return Ok(DescentResult { x, value: fx, iterations: it, converged: false });
        }
        let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(libm::fabs(*v)));
        // zero projected gradient: first-order stationary on the box
        let mut pg: f64 = 0.0;
        for i in 0..n {
            let moved = (x[i] - g[i]).clamp(domain.lo()[i], domain.hi()[i]) - x[i];
            pg = pg.max(libm::fabs(moved));
        }
        if pg <= tol * 1e-3 * scale {
            return Ok(DescentResult { x, value: fx, iterations: it, converged: true });
        }
        t = t.min(1e6);
        let accepted = loop {
            let mut dec = 0.0;
            for i in 0..n {
                trial[i] = (x[i] - t * g[i]).clamp(domain.lo()[i], domain.hi()[i]);
                dec += g[i] * (trial[i] - x[i]);
            }
            let ft = obj.value(&trial)?;
            if ft.is_finite() && ft <= fx + ARMIJO_C * dec {
                break Some(ft);
            }
            t *= 0.5;
            if t < 1e-20 {
                break None;
            }
        };
        let Some(ft) = accepted else {
            return Ok(DescentResult { x, value: fx, iterations: it, converged: true });
        };
        let step = x.iter().zip(&trial).fold(0.0f64, |m, (a, b)| m.max(libm::fabs(a - b)));
        let prev = fx;
        let g_old = g.clone();
        fx = obj.value_grad(&trial, &mut g)?;
        debug_assert!(fx == ft || !fx.is_finite() || libm::fabs(fx - ft) <= 1e-12 * (1.0 + libm::fabs(ft)));
        let (mut ss, mut sy) = (0.0, 0.0);
        for i in 0..n {
            let s = trial[i] - x[i];
            ss += s * s;
            sy += s * (g[i] - g_old[i]);
        }
        t = if sy > 0.0 { ss / sy } else { 2.0 * t };
        x.copy_from_slice(&trial);
        if step <= tol * scale && libm::fabs(prev - fx) <= tol * (1.0 + libm::fabs(fx)) {
            return Ok(DescentResult { x, value: fx, iterations: it + 1, converged: true });
        }
    }
    Ok(DescentResult { x, value: fx, iterations: iters, converged: false })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmResult {
    pub x: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Levenberg–Marquardt on `residual(x) = 0` with `dim(residual) = dim(x)`,
/// iterates clamped to `domain`. `residual` writes into its second argument.
pub fn levenberg_marquardt(
    mut residual: impl FnMut(&[f64], &mut [f64]) -> Result<(), ExprError>,
    x0: &[f64],
    domain: &BoxDomain,
    iters: usize,
    tol: f64,
) -> Result<LmResult, ExprError> {
    let n = x0.len();
    let norm = |r: &[f64]| libm::sqrt(r.iter().map(|v| v * v).sum());
    let mut x = x0.to_vec();
    domain.clamp(&mut x);
    let mut r = vec![0.0; n];
    residual(&x, &mut r)?;
    let mut rn = norm(&r);
    let mut lambda = 1e-3;
    let mut jac = vec![0.0; n * n];
    let (mut rp, mut rm) = (vec![0.0; n], vec![0.0; n]);
    let mut xt = vec![0.0; n];
    let mut rt = vec![0.0; n];
    for it in 0..iters {
        if rn <= tol || !rn.is_finite() {
            return Ok(LmResult { x, residual_norm: rn, iterations: it });
        }
        for j in 0..n {
            let h = 1e-6 * (1.0 + libm::fabs(x[j]));
            xt.copy_from_slice(&x);
            xt[j] = x[j] + h;
            residual(&xt, &mut rp)?;
            xt[j] = x[j] - h;
            residual(&xt, &mut rm)?;
            for i in 0..n {
                jac[i * n + j] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        // normal equations (JᵀJ + λ diag(JᵀJ) + λ I) δ = -Jᵀ r
        let mut jtj = vec![0.0; n * n];
        let mut jtr = vec![0.0; n];
        for a in 0..n {
            for b in 0..n {
                jtj[a * n + b] = (0..n).map(|i| jac[i * n + a] * jac[i * n + b]).sum();
            }
            jtr[a] = -(0..n).map(|i| jac[i * n + a] * r[i]).sum::<f64>();
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut m = jtj.clone();
            for a in 0..n {
                m[a * n + a] += lambda * (jtj[a * n + a] + 1.0);
            }
            let Some(delta) = linalg::solve(m, jtr.clone()) else {
                lambda *= 10.0;
                continue;
            };
            for i in 0..n {
                xt[i] = x[i] + delta[i];
            }
            domain.clamp(&mut xt);
            residual(&xt, &mut rt)?;
            let rtn = norm(&rt);
            if rtn < rn {
                x.copy_from_slice(&xt);
                r.copy_from_slice(&rt);
                rn = rtn;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            return Ok(LmResult { x, residual_norm: rn, iterations: it + 1 });
        }
    }
    Ok(LmResult { x, residual_norm: rn, iterations: iters })
}

/// Whether a block is minimized or maximized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Min,
    Max,
}

impl Sense {
    pub fn sign(self) -> f64 {
        match self {
            Sense::Min => 1.0,
            Sense::Max => -1.0,
        }
    }

    /// True when `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Sense::Min => a < b,
            Sense::Max => a > b,
        }
    }
}

/// Optimum of `f` over the coordinates `free` (ranging over `block_box`) with
/// the rest held at `base`, by projected descent from each of `starts`.
/// Returns the optimal value and the block coordinates attaining it.
pub fn block_optimum(
    field: &ScalarField,
    base: &[f64],
    free: core::ops::Range<usize>,
    block_box: &BoxDomain,
    sense: Sense,
    starts: &[Vec<f64>],
    iters: usize,
) -> Result<(f64, Vec<f64>), ExprError> {
    let slice = Slice::new(field, base, free.clone(), sense.sign());
    let mut best: Option<(f64, Vec<f64>)> = None;
    for s in starts {
        let r = projected_descent(&slice, s, block_box, iters, 1e-13)?;
        let v = sense.sign() * r.value;
        if !v.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|(b, _)| sense.better(v, *b)) {
            best = Some((v, r.x));
        }
    }
    Ok(best.unwrap_or_else(|| (f64::NAN, base[free].to_vec())))
}

/// Euclidean distance.
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(a.iter().map(|x| x * x).sum())
}

/// Greedy clustering: keeps a point when it is at least `radius` away from
/// every point kept so far. Returns indices of the kept points.
pub fn cluster(points: &[Vec<f64>], radius: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if kept.iter().all(|&k| dist(&points[k], p) >= radius) {
            kept.push(i);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::builtin;

    #[test]
    fn descent_finds_quadratic_minimum() {
        let f = builtin("quadratic").unwrap();
        let d = BoxDomain::cube(2, -2.0, 2.0).unwrap();
        let r = projected_descent(&f, &[1.5, -1.2], &d, 500, 1e-12).unwrap();
        assert!(r.converged);
        assert!(norm(&r.x) < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn descent_respects_box() {
        let f = ScalarField::parse("x0", 1).unwrap();
        let d = BoxDomain::cube(1, 0.5, 3.0).unwrap();
        let r = projected_descent(&f, &[2.0], &d, 100, 1e-12).unwrap();
        assert_eq!(r.x, vec![0.5]);
    }

    #[test]
    fn slice_maximizes_block() {
        let f = ScalarField::parse("x0^2 - (x1 - 0.3)^2", 2).unwrap();
        let s = Slice::new(&f, &[1.0, 0.0], 1..2, -1.0);
        let d = BoxDomain::cube(1, -1.0, 1.0).unwrap();
        let r = projected_descent(&s, &[-0.8], &d, 500, 1e-14).unwrap();
        assert!((r.x[0] - 0.3).abs() < 1e-6);
        assert!((-r.value - 1.0).abs() < 1e-10);
    }

    #[test]
    fn lm_finds_saddle_of_doublewell() {
        let f = builtin("doublewell").unwrap();
        let d = BoxDomain::cube(2, -2.0, 2.0).unwrap();
        let r = levenberg_marquardt(
            |x, out| f.value_grad(x, out).map(|_| ()),
            &[0.2, 0.1],
            &d,
            100,
            1e-12,
        )
        .unwrap();
        assert!(r.residual_norm <= 1e-10);
        assert!(norm(&r.x) < 1e-8);
    }

    #[test]
    fn clustering() {
        let pts = vec![vec![0.0], vec![0.0005], vec![1.0], vec![1.0002]];
        assert_eq!(cluster(&pts, 1e-3), vec![0, 2]);
    }
}
