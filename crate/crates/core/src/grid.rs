//! Lattice discretization of boxes, level-set masks and component labeling.
//!
//! Nodes are ordered with axis 0 varying fastest. Masks are node based and
//! components use face (von Neumann) adjacency: `2n` neighbours, never
//! diagonals, so a one-node barrier always separates.
//!
//! Level sets thinner than the spacing (a minimum set that is a line between
//! two node rows) vanish under plain node sampling, so level verdicts sample
//! the extreme of `f` over each node's cell instead: a node is in `f ≤ c`
//! when its cell meets the sublevel set.

use alloc::vec;
use alloc::vec::Vec;

use serde::Serialize;
use thiserror::Error;

use crate::expr::{ExprError, ScalarField};
use crate::optimize::{projected_descent, Slice};

const CELL_ITERS: usize = 60;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("box needs lo < hi on every axis (axis {axis}: {lo} .. {hi})")]
    BadBox { axis: usize, lo: f64, hi: f64 },
    #[error("box bounds have {lo} and {hi} coordinates")]
    BoundsLength { lo: usize, hi: usize },
    #[error("resolution must have one entry ≥ 2 per axis, got {got:?} for dimension {dim}")]
    BadResolution { got: Vec<usize>, dim: usize },
    #[error("resolution list must hold at least two strictly increasing entries")]
    BadResolutionList,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("evaluation failed at node {node}: {source}")]
    Eval { node: usize, source: ExprError },
    #[error("mask is empty")]
    EmptyMask,
    #[error("point lies outside the grid box")]
    OutsideBox,
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxDomain {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, GridError> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(GridError::BoundsLength { lo: lo.len(), hi: hi.len() });
        }
        for (axis, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l < h) || !l.is_finite() || !h.is_finite() {
                return Err(GridError::BadBox { axis, lo: *l, hi: *h });
            }
        }
        Ok(BoxDomain { lo, hi })
    }

    /// The cube `[lo, hi]ⁿ`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self, GridError> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    /// Parses the flat `lo0,hi0,lo1,hi1,...` layout used on the command line.
    pub fn from_pairs(pairs: &[f64]) -> Result<Self, GridError> {
        if pairs.is_empty() || !pairs.len().is_multiple_of(2) {
            return Err(GridError::BoundsLength { lo: pairs.len() / 2, hi: pairs.len().div_ceil(2) });
        }
        let lo = pairs.iter().step_by(2).copied().collect();
        let hi = pairs.iter().skip(1).step_by(2).copied().collect();
        Self::new(lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn diameter(&self) -> f64 {
        libm::sqrt(self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l) * (h - l)).sum())
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim() && p.iter().enumerate().all(|(i, x)| *x >= self.lo[i] && *x <= self.hi[i])
    }

    pub fn clamp(&self, p: &mut [f64]) {
        for (i, x) in p.iter_mut().enumerate() {
            *x = x.clamp(self.lo[i], self.hi[i]);
        }
    }

    /// True when `p` lies within `tol` (relative to the side length) of a face.
    pub fn on_boundary(&self, p: &[f64], tol: f64) -> bool {
        p.iter().enumerate().any(|(i, x)| {
            let w = self.hi[i] - self.lo[i];
            *x - self.lo[i] <= tol * w || self.hi[i] - *x <= tol * w
        })
    }

    /// Cartesian product `self × other`.
    pub fn product(&self, other: &BoxDomain) -> BoxDomain {
        let mut lo = self.lo.clone();
        lo.extend_from_slice(&other.lo);
        let mut hi = self.hi.clone();
        hi.extend_from_slice(&other.hi);
        BoxDomain { lo, hi }
    }
}

/// Regular lattice over a box with `resolution[i] ≥ 2` nodes per axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularGrid {
    domain: BoxDomain,
    resolution: Vec<usize>,
    #[serde(skip)]
    strides: Vec<usize>,
}

impl RegularGrid {
    pub fn new(domain: BoxDomain, resolution: Vec<usize>) -> Result<Self, GridError> {
        if resolution.len() != domain.dim() || resolution.iter().any(|r| *r < 2) {
            return Err(GridError::BadResolution { got: resolution, dim: domain.dim() });
        }
        let mut strides = Vec::with_capacity(resolution.len());
        let mut s = 1usize;
        for r in &resolution {
            strides.push(s);
            s = s.saturating_mul(*r);
        }
        Ok(RegularGrid { domain, resolution, strides })
    }

    /// Same node count `r` on every axis.
    pub fn uniform(domain: BoxDomain, r: usize) -> Result<Self, GridError> {
        let dim = domain.dim();
        Self::new(domain, vec![r; dim])
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn dim(&self) -> usize {
        self.resolution.len()
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.domain.hi[axis] - self.domain.lo[axis]) / (self.resolution[axis] - 1) as f64
    }

    pub fn max_spacing(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).fold(0.0, f64::max)
    }

    pub fn axis_coord(&self, axis: usize, i: usize) -> f64 {
        let r = self.resolution[axis];
        if i + 1 == r {
            return self.domain.hi[axis];
        }
        let (lo, hi) = (self.domain.lo[axis], self.domain.hi[axis]);
        lo + (hi - lo) * i as f64 / (r - 1) as f64
    }

    pub fn multi_index(&self, mut node: usize) -> Vec<usize> {
        self.resolution
            .iter()
            .map(|r| {
                let i = node % r;
                node /= r;
                i
            })
            .collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn coord(&self, node: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.coord_into(node, &mut out);
        out
    }

    pub fn coord_into(&self, mut node: usize, out: &mut [f64]) {
        for (axis, r) in self.resolution.iter().enumerate() {
            out[axis] = self.axis_coord(axis, node % r);
            node /= r;
        }
    }

    /// Index of the node along `axis` nearest to coordinate `x` (clamped).
    pub fn nearest_axis_index(&self, axis: usize, x: f64) -> usize {
        let t = (x - self.domain.lo[axis]) / self.spacing(axis);
        let i = libm::round(t);
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(self.resolution[axis] - 1)
        }
    }

    /// Nearest node to `p`; `p` must lie in the box.
    pub fn nearest_node(&self, p: &[f64]) -> Result<usize, GridError> {
        if p.len() != self.dim() {
            return Err(GridError::DimensionMismatch { expected: self.dim(), got: p.len() });
        }
        if !self.domain.contains(p) {
            return Err(GridError::OutsideBox);
        }
        let idx: Vec<usize> = (0..self.dim()).map(|a| self.nearest_axis_index(a, p[a])).collect();
        Ok(self.flat_index(&idx))
    }

    /// Calls `f(neighbor)` for each face neighbour of `node`.
    pub fn for_each_neighbor(&self, node: usize, mut f: impl FnMut(usize)) {
        let mut rem = node;
        for (axis, r) in self.resolution.iter().enumerate() {
            let i = rem % r;
            rem /= r;
            let s = self.strides[axis];
            if i > 0 {
                f(node - s);
            }
            if i + 1 < *r {
                f(node + s);
            }
        }
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        let mut rem = node;
        self.resolution.iter().any(|r| {
            let i = rem % r;
            rem /= r;
            i == 0 || i + 1 == *r
        })
    }

    /// The cell of `node`: the node ± half a spacing per axis, cut to the box.
    pub fn cell(&self, node: usize) -> BoxDomain {
        let p = self.coord(node);
        let lo = (0..self.dim())
            .map(|a| (p[a] - 0.5 * self.spacing(a)).max(self.domain.lo[a]))
            .collect();
        let hi = (0..self.dim())
            .map(|a| (p[a] + 0.5 * self.spacing(a)).min(self.domain.hi[a]))
            .collect();
        BoxDomain { lo, hi }
    }

    /// Product lattice `self × other`; axes of `self` come first.
    pub fn product(&self, other: &RegularGrid) -> RegularGrid {
        let mut res = self.resolution.clone();
        res.extend_from_slice(&other.resolution);
        RegularGrid::new(self.domain.product(&other.domain), res).expect("product of valid grids")
    }

    /// Splits a node of a product grid into its factor indices.
    pub fn split_node(&self, node: usize, first_len: usize) -> (usize, usize) {
        (node % first_len, node / first_len)
    }
}

/// Field values at every node of a grid.
#[derive(Debug, Clone)]
pub struct Lattice {
    pub grid: RegularGrid,
    pub values: Vec<f64>,
}

/// Evaluates `field` at every node.
pub fn sample(field: &ScalarField, grid: &RegularGrid) -> Result<Lattice, GridError> {
    if field.dim() != grid.dim() {
        return Err(GridError::DimensionMismatch { expected: grid.dim(), got: field.dim() });
    }
    let mut p = vec![0.0; grid.dim()];
    let mut values = Vec::with_capacity(grid.len());
    for node in 0..grid.len() {
        grid.coord_into(node, &mut p);
        values.push(field.value(&p).map_err(|source| GridError::Eval { node, source })?);
    }
    Ok(Lattice { grid: grid.clone(), values })
}

/// Minimum (`Sub`) or maximum (`Super`) of `field` over every node's cell,
/// by projected descent started at the node.
pub fn sample_cells(field: &ScalarField, grid: &RegularGrid, direction: Direction) -> Result<Lattice, GridError> {
    if field.dim() != grid.dim() {
        return Err(GridError::DimensionMismatch { expected: grid.dim(), got: field.dim() });
    }
    let sign = match direction {
        Direction::Sub => 1.0,
        Direction::Super => -1.0,
    };
    let n = grid.dim();
    let mut p = vec![0.0; n];
    let mut values = Vec::with_capacity(grid.len());
    for node in 0..grid.len() {
        grid.coord_into(node, &mut p);
        let obj = Slice::new(field, &p, 0..n, sign);
        let r = projected_descent(&obj, &p, &grid.cell(node), CELL_ITERS, 1e-13)
            .map_err(|source| GridError::Eval { node, source })?;
        let at_node = field.value(&p).map_err(|source| GridError::Eval { node, source })?;
        let v = sign * r.value;
        values.push(match direction {
            Direction::Sub => v.min(at_node),
            Direction::Super => v.max(at_node),
        });
    }
    Ok(Lattice { grid: grid.clone(), values })
}

/// Nodes whose cell meets `f ≤ c` (or `f ≥ c`).
pub fn cell_level_mask(field: &ScalarField, grid: &RegularGrid, c: f64, direction: Direction) -> Result<CellMask, GridError> {
    Ok(level_mask(&sample_cells(field, grid, direction)?, c, direction))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `f ≤ c`
    Sub,
    /// `f ≥ c`
    Super,
}

/// Boolean membership per node.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMask {
    pub grid: RegularGrid,
    pub bits: Vec<bool>,
}

impl CellMask {
    pub fn empty(grid: &RegularGrid) -> Self {
        CellMask { grid: grid.clone(), bits: vec![false; grid.len()] }
    }

    pub fn full(grid: &RegularGrid) -> Self {
        CellMask { grid: grid.clone(), bits: vec![true; grid.len()] }
    }

    pub fn from_fn(grid: &RegularGrid, mut f: impl FnMut(usize, &[f64]) -> bool) -> Self {
        let mut p = vec![0.0; grid.dim()];
        let bits = (0..grid.len())
            .map(|node| {
                grid.coord_into(node, &mut p);
                f(node, &p)
            })
            .collect();
        CellMask { grid: grid.clone(), bits }
    }

    /// Nodes inside `[lo - ε, hi + ε]` with ε a tiny fraction of the spacing.
    pub fn from_box(grid: &RegularGrid, region: &BoxDomain) -> Self {
        let eps: Vec<f64> = (0..grid.dim()).map(|a| 1e-9 * grid.spacing(a)).collect();
        Self::from_fn(grid, |_, p| {
            p.iter()
                .enumerate()
                .all(|(i, x)| *x >= region.lo()[i] - eps[i] && *x <= region.hi()[i] + eps[i])
        })
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i)
    }

    pub fn touches_boundary(&self) -> bool {
        self.nodes().any(|n| self.grid.is_boundary_node(n))
    }

    /// Node-wise `self ⊆ other`.
    pub fn is_subset_of(&self, other: &CellMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    pub fn and(&self, other: &CellMask) -> CellMask {
        CellMask {
            grid: self.grid.clone(),
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn or(&self, other: &CellMask) -> CellMask {
        CellMask {
            grid: self.grid.clone(),
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect(),
        }
    }

    /// Coordinate-wise bounding box of the set nodes.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let dim = self.grid.dim();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        let mut p = vec![0.0; dim];
        let mut any = false;
        for n in self.nodes() {
            any = true;
            self.grid.coord_into(n, &mut p);
            for i in 0..dim {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        any.then_some((lo, hi))
    }
}

/// Bit set iff value ≤ c (sub) or ≥ c (super).
pub fn level_mask(lattice: &Lattice, c: f64, direction: Direction) -> CellMask {
    let bits = lattice
        .values
        .iter()
        .map(|v| match direction {
            Direction::Sub => *v <= c,
            Direction::Super => *v >= c,
        })
        .collect();
    CellMask { grid: lattice.grid.clone(), bits }
}

// https://en.wikipedia.org/wiki/Disjoint-set_data_structure
#[derive(Debug)]
pub(crate) struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    pub(crate) fn new(size: usize) -> Self {
        DisjointSet { parent: (0..size).collect(), rank: vec![0; size] }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    pub(crate) fn unite(&mut self, x: usize, y: usize) {
        let (a, b) = (self.find(x), self.find(y));
        if a == b {
            return;
        }
        match self.rank[a].cmp(&self.rank[b]) {
            core::cmp::Ordering::Less => self.parent[a] = b,
            core::cmp::Ordering::Greater => self.parent[b] = a,
            core::cmp::Ordering::Equal => {
                self.parent[b] = a;
                self.rank[a] += 1;
            }
        }
    }
}

/// Component labels for the set nodes of a mask.
#[derive(Debug, Clone)]
pub struct ComponentLabeling {
    pub mask: CellMask,
    /// `Some(label)` for set nodes, labels `0..count` in order of first node.
    pub labels: Vec<Option<usize>>,
    pub count: usize,
    pub sizes: Vec<usize>,
    /// Per component: does it touch the box boundary.
    pub touches_boundary: Vec<bool>,
}

impl ComponentLabeling {
    pub fn any_touches_boundary(&self) -> bool {
        self.touches_boundary.iter().any(|b| *b)
    }

    /// Nodes of one component.
    pub fn component_nodes(&self, label: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(label))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Union-find labeling over face adjacency.
pub fn connected_components(mask: &CellMask) -> ComponentLabeling {
    let grid = &mask.grid;
    let mut ds = DisjointSet::new(grid.len());
    for node in mask.nodes() {
        // only look forward: each edge is visited once
        grid.for_each_neighbor(node, |nb| {
            if nb > node && mask.bits[nb] {
                ds.unite(node, nb);
            }
        });
    }
    let mut root_label: Vec<Option<usize>> = vec![None; grid.len()];
    let mut labels = vec![None; grid.len()];
    let mut sizes = Vec::new();
    let mut touches = Vec::new();
    for node in mask.nodes() {
        let root = ds.find(node);
        let label = match root_label[root] {
            Some(l) => l,
            None => {
                let l = sizes.len();
                root_label[root] = Some(l);
                sizes.push(0);
                touches.push(false);
                l
            }
        };
        labels[node] = Some(label);
        sizes[label] += 1;
        if grid.is_boundary_node(node) {
            touches[label] = true;
        }
    }
    ComponentLabeling { mask: mask.clone(), labels, count: sizes.len(), sizes, touches_boundary: touches }
}

/// Component counts across a refinement sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConnectednessVerdict {
    pub resolutions: Vec<usize>,
    pub counts: Vec<usize>,
    pub stable: bool,
    /// Some component touched the window boundary at some resolution.
    pub boundary_touched: bool,
}

/// Sublevel set `f ≤ c` labeled at each resolution (same count on every axis),
/// using cell-minimum sampling.
pub fn connectedness_verdict(
    field: &ScalarField,
    domain: &BoxDomain,
    c: f64,
    resolutions: &[usize],
) -> Result<ConnectednessVerdict, GridError> {
    connectedness_verdict_with(domain, resolutions, |grid| cell_level_mask(field, grid, c, Direction::Sub))
}

/// Refinement verdict for an arbitrary mask builder.
pub fn connectedness_verdict_with(
    domain: &BoxDomain,
    resolutions: &[usize],
    mut build: impl FnMut(&RegularGrid) -> Result<CellMask, GridError>,
) -> Result<ConnectednessVerdict, GridError> {
    if resolutions.len() < 2 || resolutions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(GridError::BadResolutionList);
    }
    let mut counts = Vec::with_capacity(resolutions.len());
    let mut boundary_touched = false;
    for r in resolutions {
        let grid = RegularGrid::uniform(domain.clone(), *r)?;
        let labeling = connected_components(&build(&grid)?);
        boundary_touched |= labeling.any_touches_boundary();
        counts.push(labeling.count);
    }
    let stable = counts.windows(2).all(|w| w[0] == w[1]);
    Ok(ConnectednessVerdict { resolutions: resolutions.to_vec(), counts, stable, boundary_touched })
}

/// Euclidean distance from `p` to the nearest set node.
pub fn distance_to_set(p: &[f64], mask: &CellMask) -> Result<f64, GridError> {
    let grid = &mask.grid;
    if p.len() != grid.dim() {
        return Err(GridError::DimensionMismatch { expected: grid.dim(), got: p.len() });
    }
    let mut q = vec![0.0; grid.dim()];
    let mut best = f64::INFINITY;
    for node in mask.nodes() {
        grid.coord_into(node, &mut q);
        let d2: f64 = p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
        best = best.min(d2);
    }
    if best.is_infinite() {
        return Err(GridError::EmptyMask);
    }
    Ok(libm::sqrt(best))
}

/// Exact Euclidean distance from every node to the nearest set node
/// (separable lower-envelope transform, one pass per axis).
pub fn distance_field(mask: &CellMask) -> Result<Vec<f64>, GridError> {
    if mask.is_empty() {
        return Err(GridError::EmptyMask);
    }
    let grid = &mask.grid;
    let mut d2: Vec<f64> = mask.bits.iter().map(|b| if *b { 0.0 } else { f64::INFINITY }).collect();
    let res = grid.resolution().to_vec();
    let mut line = Vec::new();
    let mut out = Vec::new();
    for axis in 0..grid.dim() {
        let h = grid.spacing(axis);
        let r = res[axis];
        let stride = grid.strides[axis];
        for base in 0..grid.len() {
            // line starts are the nodes whose index on `axis` is 0
            if !(base / stride).is_multiple_of(r) {
                continue;
            }
            line.clear();
            line.extend((0..r).map(|i| d2[base + i * stride]));
            out.clear();
            out.resize(r, f64::INFINITY);
            lower_envelope(&line, h, &mut out);
            for i in 0..r {
                d2[base + i * stride] = out[i];
            }
        }
    }
    Ok(d2.into_iter().map(libm::sqrt).collect())
}

fn lower_envelope(f: &[f64], h: f64, out: &mut [f64]) {
    let n = f.len();
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    let pos = |q: usize| q as f64 * h;
    for q in 0..n {
        if f[q].is_infinite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
                    if s <= *z.last().unwrap_or(&f64::NEG_INFINITY) {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let x = pos(q);
        while k + 1 < v.len() && z[k + 1] < x {
            k += 1;
        }
        let dx = x - pos(v[k]);
        *o = dx * dx + f[v[k]];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::builtin;

    fn square(lo: f64, hi: f64) -> BoxDomain {
        BoxDomain::cube(2, lo, hi).unwrap()
    }

    #[test]
    fn quadratic_sample_3x3() {
        let grid = RegularGrid::uniform(square(-1.0, 1.0), 3).unwrap();
        let lat = sample(&builtin("quadratic").unwrap(), &grid).unwrap();
        assert_eq!(lat.values, vec![2.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn grid_geometry() {
        let grid = RegularGrid::new(BoxDomain::new(vec![0.0, -1.0], vec![1.0, 1.0]).unwrap(), vec![3, 5]).unwrap();
        assert_eq!(grid.len(), 15);
        assert_eq!(grid.coord(grid.flat_index(&[2, 4])), vec![1.0, 1.0]);
        assert_eq!(grid.multi_index(7), vec![1, 2]);
        assert_eq!(grid.nearest_node(&[0.74, 0.1]).unwrap(), grid.flat_index(&[1, 2]));
        assert_eq!(grid.nearest_node(&[2.0, 0.0]), Err(GridError::OutsideBox));
        let mut nb = Vec::new();
        grid.for_each_neighbor(0, |n| nb.push(n));
        assert_eq!(nb, vec![1, 3]);
        assert!(RegularGrid::new(square(0.0, 1.0), vec![1, 3]).is_err());
        assert!(BoxDomain::new(vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn level_masks() {
        let grid = RegularGrid::uniform(square(-1.0, 1.0), 21).unwrap();
        let lat = sample(&builtin("quadratic").unwrap(), &grid).unwrap();
        let m = level_mask(&lat, 0.5, Direction::Sub);
        assert!(m.bits[grid.nearest_node(&[0.0, 0.0]).unwrap()]);
        assert!(!m.bits[grid.nearest_node(&[1.0, 1.0]).unwrap()]);
        assert!(level_mask(&lat, f64::INFINITY, Direction::Sub).bits.iter().all(|b| *b));
        let sup = level_mask(&lat, 1.5, Direction::Super);
        assert!(sup.bits[0] && !sup.bits[grid.nearest_node(&[0.0, 0.0]).unwrap()]);
    }

    #[test]
    fn components_of_simple_masks() {
        let grid = RegularGrid::uniform(square(0.0, 1.0), 5).unwrap();
        let empty = CellMask::empty(&grid);
        assert_eq!(connected_components(&empty).count, 0);
        // diagonal touching nodes are separate
        let mut m = CellMask::empty(&grid);
        m.bits[grid.flat_index(&[1, 1])] = true;
        m.bits[grid.flat_index(&[2, 2])] = true;
        let l = connected_components(&m);
        assert_eq!(l.count, 2);
        assert_eq!(l.sizes, vec![1, 1]);
        m.bits[grid.flat_index(&[2, 1])] = true;
        assert_eq!(connected_components(&m).count, 1);
    }

    #[test]
    fn fig1_sublevel_components() {
        let f = builtin("fig1_invex").unwrap();
        let grid = RegularGrid::uniform(square(-3.0, 3.0), 201).unwrap();
        // y = ±1 falls between node rows here, so node values alone miss the minima
        let nodes = sample(&f, &grid).unwrap();
        assert!(level_mask(&nodes, 1e-6, Direction::Sub).is_empty());
        let lat = sample_cells(&f, &grid, Direction::Sub).unwrap();
        let minima = level_mask(&lat, 1e-6, Direction::Sub);
        let l = connected_components(&minima);
        assert_eq!(l.count, 2);
        // each band is one full row of cells, the one straddling y = ±1
        assert_eq!(l.sizes, vec![201, 201]);
        let (lo, hi) = minima.bounding_box().unwrap();
        assert!((lo[1] + 1.0).abs() <= grid.spacing(1) && (hi[1] - 1.0).abs() <= grid.spacing(1));
        let wide = level_mask(&lat, 0.1, Direction::Sub);
        assert_eq!(connected_components(&wide).count, 1);
        let min = lat.values.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(min.abs() < 1e-12, "{min}");
        // oracle: a cell row contains a zero iff it straddles y = ±1
        for node in minima.nodes() {
            let cell = grid.cell(node);
            assert!((cell.lo()[1]..=cell.hi()[1]).contains(&1.0) || (cell.lo()[1]..=cell.hi()[1]).contains(&-1.0));
        }
    }

    #[test]
    fn cell_sampling_brackets_node_values() {
        let f = builtin("doublewell").unwrap();
        let grid = RegularGrid::uniform(square(-2.0, 2.0), 21).unwrap();
        let at = sample(&f, &grid).unwrap();
        let lo = sample_cells(&f, &grid, Direction::Sub).unwrap();
        let hi = sample_cells(&f, &grid, Direction::Super).unwrap();
        for i in 0..grid.len() {
            assert!(lo.values[i] <= at.values[i] && at.values[i] <= hi.values[i]);
        }
        // the cell of (1,0) contains the minimum
        assert!(lo.values[grid.nearest_node(&[1.0, 0.0]).unwrap()].abs() < 1e-12);
        assert_eq!(grid.cell(0).lo(), &[-2.0, -2.0]);
        assert!((grid.cell(0).hi()[0] + 1.9).abs() < 1e-15);
    }

    #[test]
    fn fig1_verdict_across_resolutions() {
        let f = builtin("fig1_invex").unwrap();
        let v = connectedness_verdict(&f, &square(-3.0, 3.0), 1e-6, &[101, 201, 401]).unwrap();
        assert_eq!(v.counts, vec![2, 2, 2]);
        assert!(v.stable && v.boundary_touched);
    }

    #[test]
    fn verdict_requires_increasing_resolutions() {
        let f = builtin("quadratic").unwrap();
        let d = square(-2.0, 2.0);
        assert_eq!(connectedness_verdict(&f, &d, 1.0, &[51]), Err(GridError::BadResolutionList));
        assert_eq!(connectedness_verdict(&f, &d, 1.0, &[51, 51]), Err(GridError::BadResolutionList));
        let v = connectedness_verdict(&f, &d, 1.0, &[51, 101, 201]).unwrap();
        assert_eq!(v.counts, vec![1, 1, 1]);
        assert!(v.stable && !v.boundary_touched);
    }

    #[test]
    fn distances() {
        let grid = RegularGrid::uniform(square(-2.0, 2.0), 5).unwrap();
        let mut m = CellMask::empty(&grid);
        m.bits[grid.nearest_node(&[0.0, 0.0]).unwrap()] = true;
        assert_eq!(distance_to_set(&[2.0, 0.0], &m).unwrap(), 2.0);
        assert_eq!(distance_to_set(&[0.0, 0.0], &m).unwrap(), 0.0);
        assert_eq!(distance_to_set(&[0.0, 0.0], &CellMask::empty(&grid)), Err(GridError::EmptyMask));
        let df = distance_field(&m).unwrap();
        assert_eq!(df[grid.nearest_node(&[2.0, 2.0]).unwrap()], libm::sqrt(8.0));
    }

    #[test]
    fn appb_plateau_distance() {
        let f = builtin("appB_exp").unwrap();
        let grid = RegularGrid::uniform(square(-3.0, 3.0), 201).unwrap();
        // stationary plateau: the gradient vanishes exactly on [-1,1]^2
        let m = CellMask::from_fn(&grid, |_, p| {
            f.gradient(p).unwrap().iter().all(|g| libm::fabs(*g) <= 1e-12)
        });
        let (lo, hi) = m.bounding_box().unwrap();
        assert!((lo[0] + 1.0).abs() < 0.031 && (hi[1] - 1.0).abs() < 0.031);
        let d = distance_to_set(&[1.5, 0.0], &m).unwrap();
        assert!((d - 0.5).abs() <= grid.spacing(0));
    }
}
