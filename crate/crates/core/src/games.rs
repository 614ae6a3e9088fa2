//! Continuous n-player games on per-player grids: best responses, the joint
//! best-response operator λ, rationalizability traces, strategic
//! compactness, Nash detection and potential consistency.
//!
//! Best-response tolerances are relative: a node is a best response when its
//! utility is within `tol · (max − min)` of the slice maximum, the range
//! taken over the player's grid with the opponents fixed.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::Serialize;
use thiserror::Error;

use crate::expr::{ExprError, ScalarField};
use crate::grid::{connected_components, BoxDomain, CellMask, GridError, RegularGrid};
use crate::optimize::levenberg_marquardt;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GameError {
    #[error("game needs at least one player")]
    NoPlayers,
    #[error("{players} players but {utilities} utilities")]
    UtilityCount { players: usize, utilities: usize },
    #[error("utility {index} has dimension {got}, joint dimension is {expected}")]
    UtilityDimension { index: usize, expected: usize, got: usize },
    #[error("potential has dimension {got}, joint dimension is {expected}")]
    PotentialDimension { expected: usize, got: usize },
    #[error("player {player}: {message}")]
    Player { player: usize, message: String },
    #[error("set is empty")]
    EmptySet,
    #[error("enumeration needs {needed} slice solves, budget is {budget}")]
    Budget { needed: u64, budget: u64 },
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlayerSpec {
    pub dim: usize,
    #[serde(rename = "box")]
    pub domain: BoxDomain,
}

/// Players with box action sets and utilities over the joint action space.
#[derive(Debug, Clone)]
pub struct GameSpec {
    pub players: Vec<PlayerSpec>,
    pub utilities: Vec<ScalarField>,
    pub potential: Option<ScalarField>,
    offsets: Vec<usize>,
}

impl GameSpec {
    pub fn new(players: Vec<PlayerSpec>, utilities: Vec<ScalarField>, potential: Option<ScalarField>) -> Result<Self, GameError> {
        if players.is_empty() {
            return Err(GameError::NoPlayers);
        }
        if players.len() != utilities.len() {
            return Err(GameError::UtilityCount { players: players.len(), utilities: utilities.len() });
        }
        let mut offsets = Vec::with_capacity(players.len() + 1);
        let mut total = 0;
        for (player, p) in players.iter().enumerate() {
            if p.dim == 0 || p.domain.dim() != p.dim {
                return Err(GameError::Player { player, message: alloc::format!("box has dimension {} but dim is {}", p.domain.dim(), p.dim) });
            }
            offsets.push(total);
            total += p.dim;
        }
        offsets.push(total);
        for (index, u) in utilities.iter().enumerate() {
            if u.dim() != total {
                return Err(GameError::UtilityDimension { index, expected: total, got: u.dim() });
            }
        }
        if let Some(p) = &potential {
            if p.dim() != total {
                return Err(GameError::PotentialDimension { expected: total, got: p.dim() });
            }
        }
        Ok(GameSpec { players, utilities, potential, offsets })
    }

    pub fn n_players(&self) -> usize {
        self.players.len()
    }

    pub fn joint_dim(&self) -> usize {
        self.offsets[self.players.len()]
    }

    /// Coordinates of player `i` in a joint action.
    pub fn range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn joint_box(&self) -> BoxDomain {
        let mut it = self.players.iter();
        let first = it.next().expect("at least one player").domain.clone();
        it.fold(first, |acc, p| acc.product(&p.domain))
    }
}

/// Per-player grid over a player box whose nodes include the corners of `inner`:
/// `nodes_inside` nodes span `inner` on each axis and the spacing is continued
/// outward as far as the player box allows.
pub fn aligned_grid(player_box: &BoxDomain, inner: &BoxDomain, nodes_inside: usize) -> Result<RegularGrid, GridError> {
    if player_box.dim() != inner.dim() {
        return Err(GridError::DimensionMismatch { expected: player_box.dim(), got: inner.dim() });
    }
    if nodes_inside < 2 {
        return Err(GridError::BadResolution { got: vec![nodes_inside], dim: inner.dim() });
    }
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    let mut res = Vec::new();
    for a in 0..inner.dim() {
        let (l, h) = (inner.lo()[a], inner.hi()[a]);
        if l < player_box.lo()[a] || h > player_box.hi()[a] {
            return Err(GridError::OutsideBox);
        }
        let step = (h - l) / (nodes_inside - 1) as f64;
        let below = libm::floor((l - player_box.lo()[a]) / step + 1e-9) as usize;
        let above = libm::floor((player_box.hi()[a] - h) / step + 1e-9) as usize;
        lo.push(l - below as f64 * step);
        hi.push(h + above as f64 * step);
        res.push(nodes_inside + below + above);
    }
    RegularGrid::new(BoxDomain::new(lo, hi)?, res)
}

/// Product set `∏ mask_i` over per-player grids.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGridSet {
    pub masks: Vec<CellMask>,
}

impl JointGridSet {
    pub fn full(grids: &[RegularGrid]) -> Self {
        JointGridSet { masks: grids.iter().map(CellMask::full).collect() }
    }

    /// Per-player nodes inside the matching factor of `region`.
    pub fn from_box(grids: &[RegularGrid], region: &[BoxDomain]) -> Self {
        JointGridSet { masks: grids.iter().zip(region).map(|(g, b)| CellMask::from_box(g, b)).collect() }
    }

    /// The single joint node nearest to `point` (split per player).
    pub fn singleton(grids: &[RegularGrid], point: &[f64]) -> Result<Self, GridError> {
        let mut off = 0;
        let mut masks = Vec::with_capacity(grids.len());
        for g in grids {
            let mut m = CellMask::empty(g);
            m.bits[g.nearest_node(&point[off..off + g.dim()])?] = true;
            off += g.dim();
            masks.push(m);
        }
        Ok(JointGridSet { masks })
    }

    pub fn grids(&self) -> Vec<RegularGrid> {
        self.masks.iter().map(|m| m.grid.clone()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.iter().any(|m| m.is_empty())
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.masks.iter().map(|m| m.count()).collect()
    }

    pub fn component_counts(&self) -> Vec<usize> {
        self.masks.iter().map(|m| connected_components(m).count).collect()
    }

    pub fn is_subset_of(&self, other: &JointGridSet) -> bool {
        self.masks.iter().zip(&other.masks).all(|(a, b)| a.is_subset_of(b))
    }

    /// True when each player's factor of `point` is within `slack` (per axis)
    /// of some set node.
    pub fn contains_near(&self, point: &[f64], slack: f64) -> bool {
        let mut off = 0;
        self.masks.iter().all(|m| {
            let g = &m.grid;
            let q = &point[off..off + g.dim()];
            off += g.dim();
            m.nodes().any(|n| g.coord(n).iter().zip(q).all(|(a, b)| libm::fabs(a - b) <= slack))
        })
    }
}

/// Utility of player `i` at every node of `grid_i`, opponents at `profile`.
fn slice_values(game: &GameSpec, i: usize, profile: &[f64], grid_i: &RegularGrid) -> Result<Vec<f64>, GameError> {
    let r = game.range(i);
    let mut p = profile.to_vec();
    let mut q = vec![0.0; grid_i.dim()];
    let mut out = Vec::with_capacity(grid_i.len());
    for node in 0..grid_i.len() {
        grid_i.coord_into(node, &mut q);
        p[r.clone()].copy_from_slice(&q);
        out.push(game.utilities[i].value(&p)?);
    }
    Ok(out)
}

/// Nodes within `tol · range` of the maximum.
fn argmax_nodes(values: &[f64], tol: f64) -> Vec<usize> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let band = tol * (max - min);
    (0..values.len()).filter(|&k| values[k] >= max - band).collect()
}

/// Nodes of `grid_i` that are best responses of player `i` to the opponents
/// in `profile` (a joint action; player `i`'s own coordinates are ignored).
pub fn player_best_response(game: &GameSpec, i: usize, profile: &[f64], grid_i: &RegularGrid, tol: f64) -> Result<Vec<usize>, GameError> {
    if profile.len() != game.joint_dim() {
        return Err(GameError::Player { player: i, message: alloc::format!("profile has {} coordinates", profile.len()) });
    }
    for j in 0..game.n_players() {
        if j != i && !game.players[j].domain.contains(&profile[game.range(j)]) {
            return Err(GameError::Player { player: j, message: "opponent action outside its box".into() });
        }
    }
    Ok(argmax_nodes(&slice_values(game, i, profile, grid_i)?, tol))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaOptions {
    /// Maximum number of slice solves per application.
    pub budget: u64,
    /// Enumerate only every k-th opponent profile when the budget would be
    /// exceeded (result flagged approximate); `false` refuses instead.
    pub subsample: bool,
    /// Bisection depth between adjacent opponent profiles.
    pub bisect_depth: u32,
}

impl Default for LambdaOptions {
    fn default() -> Self {
        LambdaOptions { budget: 20_000_000, subsample: false, bisect_depth: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaResult {
    pub set: JointGridSet,
    pub solves: u64,
    pub approximate: bool,
}

fn touches(grid: &RegularGrid, a: &[usize], b: &[usize]) -> bool {
    for &x in a {
        for &y in b {
            if x == y {
                return true;
            }
            let mut adj = false;
            grid.for_each_neighbor(x, |n| adj |= n == y);
            if adj {
                return true;
            }
        }
    }
    false
}

/// `λ(S) = ∏ᵢ ⋃_{a ∈ S} BRᵢ(a₋ᵢ)`.
///
/// Besides every opponent profile of `S`, the segment between each pair of
/// face-adjacent profiles is bisected until consecutive best-response sets
/// touch on the player grid (or the depth runs out), so a steep response map
/// does not leave gaps between image nodes.
pub fn lambda_operator(game: &GameSpec, s: &JointGridSet, tol: f64, opts: &LambdaOptions) -> Result<LambdaResult, GameError> {
    let n = game.n_players();
    if s.masks.len() != n {
        return Err(GameError::UtilityCount { players: s.masks.len(), utilities: n });
    }
    if s.is_empty() {
        return Err(GameError::EmptySet);
    }
    let lists: Vec<Vec<usize>> = s.masks.iter().map(|m| m.nodes().collect()).collect();
    let mut total: u64 = 0;
    for i in 0..n {
        let profiles: u64 = (0..n).filter(|&j| j != i).map(|j| lists[j].len() as u64).product();
        total = total.saturating_add(profiles);
    }
    let mut stride = 1u64;
    let mut approximate = false;
    if total > opts.budget {
        if !opts.subsample {
            return Err(GameError::Budget { needed: total, budget: opts.budget });
        }
        stride = total.div_ceil(opts.budget);
        approximate = true;
    }
    let mut solves = 0u64;
    let mut masks = Vec::with_capacity(n);
    let center = game.joint_box().center();
    for i in 0..n {
        let gi = &s.masks[i].grid;
        let opp: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let mut out = CellMask::empty(gi);
        // mixed-radix walk over the opponents' node lists
        let count: u64 = opp.iter().map(|&j| lists[j].len() as u64).product();
        let profile_of = |digits: &[usize]| {
            let mut p = center.clone();
            for (k, &j) in opp.iter().enumerate() {
                let g = &s.masks[j].grid;
                p[game.range(j)].copy_from_slice(&g.coord(digits[k]));
            }
            p
        };
        let mut cache: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
        let mut digits = vec![0usize; opp.len()];
        for idx in 0..count {
            let mut rem = idx;
            for (k, &j) in opp.iter().enumerate() {
                let len = lists[j].len() as u64;
                digits[k] = lists[j][(rem % len) as usize];
                rem /= len;
            }
            if idx % stride != 0 {
                continue;
            }
            let br = argmax_nodes(&slice_values(game, i, &profile_of(&digits), gi)?, tol);
            solves += 1;
            for &b in &br {
                out.bits[b] = true;
            }
            cache.insert(digits.clone(), br);
        }
        if opts.bisect_depth > 0 {
            let keys: Vec<Vec<usize>> = cache.keys().cloned().collect();
            for key in &keys {
                for (k, &j) in opp.iter().enumerate() {
                    let g = &s.masks[j].grid;
                    let mut nbs = Vec::new();
                    g.for_each_neighbor(key[k], |nb| nbs.push(nb));
                    for nb in nbs {
                        if nb < key[k] || !s.masks[j].bits[nb] {
                            continue;
                        }
                        let mut other = key.clone();
                        other[k] = nb;
                        let Some(b_other) = cache.get(&other) else { continue };
                        let a = profile_of(key);
                        let b = profile_of(&other);
                        bisect(game, i, gi, tol, &a, &b, &cache[key], b_other, opts.bisect_depth, &mut out, &mut solves)?;
                    }
                }
            }
        }
        masks.push(out);
    }
    Ok(LambdaResult { set: JointGridSet { masks }, solves, approximate })
}

#[allow(clippy::too_many_arguments)]
fn bisect(
    game: &GameSpec,
    i: usize,
    gi: &RegularGrid,
    tol: f64,
    a: &[f64],
    b: &[f64],
    br_a: &[usize],
    br_b: &[usize],
    depth: u32,
    out: &mut CellMask,
    solves: &mut u64,
) -> Result<(), GameError> {
    if depth == 0 || touches(gi, br_a, br_b) {
        return Ok(());
    }
    let m: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
    let br_m = argmax_nodes(&slice_values(game, i, &m, gi)?, tol);
    *solves += 1;
    for &k in &br_m {
        out.bits[k] = true;
    }
    bisect(game, i, gi, tol, a, &m, br_a, &br_m, depth - 1, out, solves)?;
    bisect(game, i, gi, tol, &m, b, &br_m, br_b, depth - 1, out, solves)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStep {
    pub k: usize,
    #[serde(skip)]
    pub set: JointGridSet,
    pub component_counts: Vec<usize>,
    pub sizes: Vec<usize>,
    /// Per-player bounding boxes of the set.
    pub bounds: Vec<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RationalizabilityTrace {
    pub steps: Vec<TraceStep>,
    pub fixed_point_reached: bool,
    /// The budget ran out mid-trace; the steps so far are kept.
    pub budget_exceeded: bool,
    pub approximate: bool,
}

impl RationalizabilityTrace {
    pub fn last(&self) -> &JointGridSet {
        &self.steps.last().expect("trace holds the start set").set
    }

    /// `λ^{k+1} ⊆ λ^k` for all recorded steps.
    pub fn is_nested(&self) -> bool {
        self.steps.windows(2).all(|w| w[1].set.is_subset_of(&w[0].set))
    }
}

fn step_of(k: usize, set: JointGridSet) -> TraceStep {
    let bounds = set.masks.iter().map(|m| m.bounding_box().unwrap_or_default()).collect();
    TraceStep { k, component_counts: set.component_counts(), sizes: set.sizes(), bounds, set }
}

/// Applies λ up to `max_k` times from `s0`; stops at the first exact repeat.
pub fn iterate_rationalizable(
    game: &GameSpec,
    s0: &JointGridSet,
    max_k: usize,
    tol: f64,
    opts: &LambdaOptions,
) -> Result<RationalizabilityTrace, GameError> {
    if max_k == 0 {
        return Err(GameError::Player { player: 0, message: "max_k must be at least 1".into() });
    }
    let mut steps = vec![step_of(0, s0.clone())];
    let mut fixed = false;
    let mut budget_exceeded = false;
    let mut approximate = false;
    for k in 1..=max_k {
        let prev = &steps[k - 1].set;
        let next = match lambda_operator(game, prev, tol, opts) {
            Ok(r) => r,
            Err(GameError::Budget { .. }) => {
                budget_exceeded = true;
                break;
            }
            Err(e) => return Err(e),
        };
        approximate |= next.approximate;
        let same = next.set == *prev;
        steps.push(step_of(k, next.set));
        if same {
            fixed = true;
            break;
        }
    }
    Ok(RationalizabilityTrace { steps, fixed_point_reached: fixed, budget_exceeded, approximate })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompactnessVerdict {
    pub pass: bool,
    /// Largest per-axis distance from a node of λ(K) to the nearest node of K.
    pub max_excess: f64,
    pub witness: Option<Vec<f64>>,
}

/// Pass iff every node of λ(K) lies within one grid spacing (per axis) of K.
pub fn strategic_compactness_check(game: &GameSpec, k: &JointGridSet, tol: f64, opts: &LambdaOptions) -> Result<CompactnessVerdict, GameError> {
    let image = lambda_operator(game, k, tol, opts)?;
    let mut max_excess: f64 = 0.0;
    let mut witness = None;
    let mut pass = true;
    for (img, base) in image.set.masks.iter().zip(&k.masks) {
        let g = &img.grid;
        let base_pts: Vec<Vec<f64>> = base.nodes().map(|n| g.coord(n)).collect();
        for n in img.nodes() {
            let p = g.coord(n);
            let mut best = f64::INFINITY;
            for q in &base_pts {
                let d = p.iter().zip(q).fold(0.0f64, |m, (a, b)| m.max(libm::fabs(a - b)));
                best = best.min(d);
            }
            if best > max_excess {
                max_excess = best;
            }
            if best > g.max_spacing() * (1.0 + 1e-9) && pass {
                pass = false;
                witness = Some(p);
            }
        }
    }
    Ok(CompactnessVerdict { pass, max_excess, witness })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NashComponent {
    pub nodes: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Best node, or the Levenberg–Marquardt solve of the players' own
    /// gradients started there when `polished`.
    pub representative: Vec<f64>,
    pub polished: bool,
    /// Mask components folded into this one.
    pub merged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NashResult {
    #[serde(skip)]
    pub grid: RegularGrid,
    #[serde(skip)]
    pub mask: CellMask,
    /// All nodes passing the relative best-response test.
    pub points: Vec<Vec<f64>>,
    /// Face-connected components of `mask`.
    pub mask_components: usize,
    /// Confirmed equilibria, mask components with the same polished point merged.
    pub components: Vec<NashComponent>,
    /// Components resting on a box face with some player's own gradient
    /// pointing out of the box: equilibria of the truncated game only.
    pub truncated: Vec<NashComponent>,
    /// Components whose polish did not reach a verified equilibrium.
    pub unconfirmed: Vec<NashComponent>,
    pub tol: f64,
}

/// Nash detection on the product of per-player grids.
///
/// A joint node is kept when every player's action is a best response within
/// `tol` relative to that player's slice utility range. Each face-connected
/// component is then either set aside as a box-truncation artifact, or
/// polished from its best node and confirmed when the polished point passes
/// the same slice test; confirmed components polishing to the same point
/// (within one spacing) are one equilibrium.
pub fn find_nash(game: &GameSpec, grids: &[RegularGrid], tol: f64) -> Result<NashResult, GameError> {
    let n = game.n_players();
    if grids.len() != n {
        return Err(GameError::UtilityCount { players: grids.len(), utilities: n });
    }
    let mut joint = grids[0].clone();
    for g in &grids[1..] {
        joint = joint.product(g);
    }
    let mut mask = CellMask::full(&joint);
    let mut gaps = vec![0.0f64; joint.len()];
    // strides of each player's block inside the joint flat index
    let lens: Vec<usize> = grids.iter().map(|g| g.len()).collect();
    for i in 0..n {
        let inner: usize = lens[..i].iter().product();
        let li = lens[i];
        let outer = joint.len() / (inner * li);
        let mut br = vec![false; joint.len()];
        for o in 0..outer {
            for a in 0..inner {
                let first = a + inner * li * o;
                let profile = joint.coord(first);
                let vals = slice_values(game, i, &profile, &grids[i])?;
                let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let range = max - min;
                for (k, v) in vals.iter().enumerate() {
                    let node = first + inner * k;
                    br[node] = *v >= max - tol * range;
                    let rel = if range > 0.0 { (max - v) / range } else { 0.0 };
                    gaps[node] = gaps[node].max(rel);
                }
            }
        }
        for (m, b) in mask.bits.iter_mut().zip(&br) {
            *m &= *b;
        }
    }
    let labels = connected_components(&mask);
    let h = joint.max_spacing();
    let mut components: Vec<(NashComponent, f64)> = Vec::new();
    let mut truncated = Vec::new();
    let mut unconfirmed = Vec::new();
    for c in 0..labels.count {
        let nodes = labels.component_nodes(c);
        let best = *nodes
            .iter()
            .min_by(|a, b| gaps[**a].total_cmp(&gaps[**b]).then(a.cmp(b)))
            .expect("components are non-empty");
        let mut lo = vec![f64::INFINITY; joint.dim()];
        let mut hi = vec![f64::NEG_INFINITY; joint.dim()];
        let mut all_truncated = true;
        for &nd in &nodes {
            let p = joint.coord(nd);
            for (k, x) in p.iter().enumerate() {
                lo[k] = lo[k].min(*x);
                hi[k] = hi[k].max(*x);
            }
            all_truncated &= pushes_outward(game, &joint, &p)?;
        }
        let start = joint.coord(best);
        let mut comp = NashComponent { nodes: nodes.len(), lo, hi, representative: start.clone(), polished: false, merged: 1 };
        if all_truncated {
            truncated.push(comp);
            continue;
        }
        match polish_nash(game, &joint, grids, &start, tol)? {
            Some((x, res)) => {
                comp.representative = x;
                comp.polished = true;
                let same = components.iter_mut().find(|(o, _)| {
                    o.representative.iter().zip(&comp.representative).all(|(a, b)| libm::fabs(a - b) <= h)
                });
                match same {
                    Some((o, ores)) => {
                        for k in 0..o.lo.len() {
                            o.lo[k] = o.lo[k].min(comp.lo[k]);
                            o.hi[k] = o.hi[k].max(comp.hi[k]);
                        }
                        o.nodes += comp.nodes;
                        o.merged += 1;
                        if res < *ores {
                            o.representative = comp.representative;
                            *ores = res;
                        }
                    }
                    None => components.push((comp, res)),
                }
            }
            None => unconfirmed.push(comp),
        }
    }
    let points = mask.nodes().map(|n| joint.coord(n)).collect();
    Ok(NashResult {
        grid: joint,
        mask,
        points,
        mask_components: labels.count,
        components: components.into_iter().map(|(c, _)| c).collect(),
        truncated,
        unconfirmed,
        tol,
    })
}

/// Some player sits on a face of its box with its own gradient pointing out.
fn pushes_outward(game: &GameSpec, joint: &RegularGrid, p: &[f64]) -> Result<bool, GameError> {
    let dom = joint.domain();
    let mut g = vec![0.0; p.len()];
    for i in 0..game.n_players() {
        game.utilities[i].value_grad(p, &mut g)?;
        for k in game.range(i) {
            let eps = 1e-9 * joint.spacing(k);
            if (p[k] >= dom.hi()[k] - eps && g[k] > 0.0) || (p[k] <= dom.lo()[k] + eps && g[k] < 0.0) {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

fn own_gradients(game: &GameSpec, x: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
    let mut g = vec![0.0; x.len()];
    for i in 0..game.n_players() {
        game.utilities[i].value_grad(x, &mut g)?;
        for k in game.range(i) {
            out[k] = g[k];
        }
    }
    Ok(())
}

/// Polished equilibrium and its residual, if the solve converges to an
/// interior point that passes the relative slice test on the player grids.
fn polish_nash(game: &GameSpec, joint: &RegularGrid, grids: &[RegularGrid], start: &[f64], tol: f64) -> Result<Option<(Vec<f64>, f64)>, GameError> {
    let r = levenberg_marquardt(|x: &[f64], out: &mut [f64]| own_gradients(game, x, out), start, joint.domain(), 200, 1e-12)?;
    if !(r.residual_norm <= 1e-8) || pushes_outward(game, joint, &r.x)? {
        return Ok(None);
    }
    for i in 0..game.n_players() {
        let here = game.utilities[i].value(&r.x)?;
        let vals = slice_values(game, i, &r.x, &grids[i])?;
        let max = vals.iter().copied().fold(here, f64::max);
        let min = vals.iter().copied().fold(here, f64::min);
        if here < max - tol * (max - min) {
            return Ok(None);
        }
    }
    Ok(Some((r.x, r.residual_norm)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialVerdict {
    pub pass: bool,
    pub max_abs_diff: f64,
    pub witness: Option<Vec<f64>>,
    pub nodes_checked: usize,
}

/// `∂P/∂aᵢ = ∂uᵢ/∂aᵢ` within `tol` at every node of the joint `grid`.
pub fn potential_consistency_check(game: &GameSpec, potential: &ScalarField, grid: &RegularGrid, tol: f64) -> Result<PotentialVerdict, GameError> {
    let d = game.joint_dim();
    if potential.dim() != d {
        return Err(GameError::PotentialDimension { expected: d, got: potential.dim() });
    }
    if grid.dim() != d {
        return Err(GameError::Grid(GridError::DimensionMismatch { expected: d, got: grid.dim() }));
    }
    let mut p = vec![0.0; d];
    let mut gp = vec![0.0; d];
    let mut gu = vec![0.0; d];
    let mut max_abs_diff: f64 = 0.0;
    let mut witness = None;
    for node in 0..grid.len() {
        grid.coord_into(node, &mut p);
        potential.value_grad(&p, &mut gp)?;
        for i in 0..game.n_players() {
            game.utilities[i].value_grad(&p, &mut gu)?;
            for k in game.range(i) {
                let diff = libm::fabs(gp[k] - gu[k]);
                if diff > max_abs_diff || diff.is_nan() {
                    max_abs_diff = if diff.is_nan() { f64::INFINITY } else { diff };
                    witness = Some(p.clone());
                }
            }
        }
    }
    let pass = max_abs_diff <= tol;
    Ok(PotentialVerdict { pass, max_abs_diff, witness: if pass { None } else { witness }, nodes_checked: grid.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::builtin;

    const SQRT3: f64 = 1.732_050_807_568_877_2;

    fn line(lo: f64, hi: f64) -> BoxDomain {
        BoxDomain::cube(1, lo, hi).unwrap()
    }

    fn fig4(lo: f64, hi: f64) -> GameSpec {
        let players = vec![PlayerSpec { dim: 1, domain: line(lo, hi) }, PlayerSpec { dim: 1, domain: line(lo, hi) }];
        GameSpec::new(players, vec![builtin("fig4_u1").unwrap(), builtin("fig4_u2").unwrap()], None).unwrap()
    }

    fn single(text: &str) -> GameSpec {
        let players = vec![PlayerSpec { dim: 1, domain: line(-2.0, 2.0) }];
        GameSpec::new(players, vec![ScalarField::parse(text, 1).unwrap()], None).unwrap()
    }

    fn grid(lo: f64, hi: f64, r: usize) -> RegularGrid {
        RegularGrid::uniform(line(lo, hi), r).unwrap()
    }

    /// Nearest node of the 1-d grid scan maximizing `u` over the grid.
    fn scan_argmax(u: impl Fn(f64) -> f64, g: &RegularGrid) -> f64 {
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 0..g.len() {
            let x = g.axis_coord(0, k);
            if u(x) > best.0 {
                best = (u(x), x);
            }
        }
        best.1
    }

    #[test]
    fn spec_validation() {
        let u = builtin("fig4_u1").unwrap();
        assert!(GameSpec::new(vec![], vec![], None).is_err());
        let p = PlayerSpec { dim: 1, domain: line(-1.0, 1.0) };
        assert!(matches!(GameSpec::new(vec![p.clone()], vec![u.clone()], None), Err(GameError::UtilityDimension { .. })));
        assert!(GameSpec::new(vec![p.clone(), p.clone()], vec![u.clone()], None).is_err());
        let g = GameSpec::new(vec![p.clone(), p], vec![u.clone(), u], None).unwrap();
        assert_eq!(g.range(1), 1..2);
        assert_eq!(g.joint_dim(), 2);
    }

    #[test]
    fn aligned_grid_hits_inner_corners() {
        let g = aligned_grid(&line(-2.5, 2.5), &line(-SQRT3, SQRT3), 61).unwrap();
        let has = |x: f64| (0..g.len()).any(|k| (g.axis_coord(0, k) - x).abs() < 1e-12);
        assert!(has(-SQRT3) && has(SQRT3));
        assert!(g.domain().lo()[0] >= -2.5 && g.domain().hi()[0] <= 2.5);
        assert!(g.domain().hi()[0] > 2.4);
    }

    #[test]
    fn best_responses_match_scan() {
        let game = fig4(-2.0, 2.0);
        let g = grid(-2.0, 2.0, 81);
        let br = player_best_response(&game, 0, &[0.0, 1.0], &g, 1e-9).unwrap();
        let want = scan_argmax(|a1| -0.5 * a1 * a1 + a1, &g);
        assert_eq!(br.len(), 1);
        assert_eq!(g.axis_coord(0, br[0]), want);
        assert!((want - 1.0).abs() < 1e-12);
        let br = player_best_response(&game, 1, &[0.0, 0.0], &g, 1e-9).unwrap();
        assert_eq!(br.iter().map(|&k| g.axis_coord(0, k)).collect::<Vec<_>>(), vec![0.0]);
        let flat = single("0*x0 + 3");
        assert_eq!(player_best_response(&flat, 0, &[0.0], &g, 1e-9).unwrap().len(), 81);
    }

    #[test]
    fn lambda_of_origin() {
        let game = fig4(-2.0, 2.0);
        let grids = vec![grid(-2.0, 2.0, 41), grid(-2.0, 2.0, 41)];
        let s = JointGridSet::singleton(&grids, &[0.0, 0.0]).unwrap();
        let r = lambda_operator(&game, &s, 1e-9, &LambdaOptions::default()).unwrap();
        assert_eq!(r.set, s);
        assert!(!r.approximate);
    }

    #[test]
    fn lambda_of_k_is_k() {
        let game = fig4(-2.5, 2.5);
        let k = line(-SQRT3, SQRT3);
        let g = aligned_grid(&line(-2.5, 2.5), &k, 61).unwrap();
        let grids = vec![g.clone(), g.clone()];
        let kset = JointGridSet::from_box(&grids, &[k.clone(), k.clone()]);
        let r = lambda_operator(&game, &kset, 1e-9, &LambdaOptions::default()).unwrap();
        // brute-force range of a³ − 2a over K, and the identity for player one
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for j in 0..=100_000 {
            let a = -SQRT3 + 2.0 * SQRT3 * j as f64 / 100_000.0;
            let v = a * a * a - 2.0 * a;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        assert!((lo + SQRT3).abs() < 1e-9 && (hi - SQRT3).abs() < 1e-9);
        for m in &r.set.masks {
            let (blo, bhi) = m.bounding_box().unwrap();
            assert!((blo[0] - lo).abs() <= g.spacing(0) && (bhi[0] - hi).abs() <= g.spacing(0));
            assert_eq!(connected_components(m).count, 1);
        }
        assert_eq!(r.set, kset);
    }

    #[test]
    fn single_player_lambda_is_argmax() {
        let game = single("-(x0 - 0.5)^2");
        let g = vec![grid(-2.0, 2.0, 41)];
        let s = JointGridSet::singleton(&g, &[-2.0]).unwrap();
        let r = lambda_operator(&game, &s, 1e-9, &LambdaOptions::default()).unwrap();
        assert_eq!(r.set.masks[0].nodes().map(|n| g[0].axis_coord(0, n)).collect::<Vec<_>>(), vec![0.5]);
        let t = iterate_rationalizable(&game, &JointGridSet::full(&g), 5, 1e-9, &LambdaOptions::default()).unwrap();
        assert!(t.fixed_point_reached);
        assert_eq!(t.steps.len(), 3);
        assert_eq!(t.steps[1].set, t.steps[2].set);
    }

    #[test]
    fn budget_guard() {
        let game = fig4(-2.0, 2.0);
        let grids = vec![grid(-2.0, 2.0, 41), grid(-2.0, 2.0, 41)];
        let full = JointGridSet::full(&grids);
        let tight = LambdaOptions { budget: 10, ..LambdaOptions::default() };
        assert_eq!(lambda_operator(&game, &full, 1e-9, &tight), Err(GameError::Budget { needed: 82, budget: 10 }));
        let sub = LambdaOptions { budget: 10, subsample: true, bisect_depth: 0 };
        let r = lambda_operator(&game, &full, 1e-9, &sub).unwrap();
        assert!(r.approximate);
        let t = iterate_rationalizable(&game, &full, 3, 1e-9, &tight).unwrap();
        assert!(t.budget_exceeded && t.steps.len() == 1);
    }

    #[test]
    fn rationalizable_from_k() {
        let game = fig4(-2.5, 2.5);
        let k = line(-SQRT3, SQRT3);
        let g = aligned_grid(&line(-2.5, 2.5), &k, 61).unwrap();
        let grids = vec![g.clone(), g];
        let kset = JointGridSet::from_box(&grids, &[k.clone(), k]);
        let t = iterate_rationalizable(&game, &kset, 10, 1e-9, &LambdaOptions::default()).unwrap();
        assert!(t.fixed_point_reached);
        assert_eq!(t.steps.len(), 2);
        assert_eq!(t.last(), &kset);
        assert!(t.is_nested());
        assert_eq!(t.steps[1].component_counts, vec![1, 1]);
    }

    #[test]
    fn rationalizable_from_wide_box_expands() {
        // BR₂(2) = 4 lies outside [-2, 2], so the set grows to the action box
        let game = fig4(-2.5, 2.5);
        let grids = vec![grid(-2.5, 2.5, 51), grid(-2.5, 2.5, 51)];
        let s0 = JointGridSet::from_box(&grids, &[line(-2.0, 2.0), line(-2.0, 2.0)]);
        let t = iterate_rationalizable(&game, &s0, 5, 1e-9, &LambdaOptions::default()).unwrap();
        assert!(t.fixed_point_reached);
        assert_eq!(t.last(), &JointGridSet::full(&grids));
    }

    #[test]
    fn compactness() {
        let game = fig4(-2.5, 2.5);
        let pb = line(-2.5, 2.5);
        for (half, want) in [(SQRT3, true), (1.0, false)] {
            let k = line(-half, half);
            let g = aligned_grid(&pb, &k, 61).unwrap();
            let kset = JointGridSet::from_box(&[g.clone(), g.clone()], &[k.clone(), k]);
            let v = strategic_compactness_check(&game, &kset, 1e-9, &LambdaOptions::default()).unwrap();
            assert_eq!(v.pass, want, "half-width {half}");
            if !want {
                // max |a³ − 2a| on [-1, 1] is at a = ±√(2/3)
                let peak = 2.0 * libm::sqrt(2.0 / 3.0) - libm::pow(2.0 / 3.0, 1.5);
                assert!((v.max_excess - (peak - 1.0)).abs() <= g.spacing(0));
            }
        }
        let s = single("-(x0 - 0.5)^2");
        let g = vec![grid(-2.0, 2.0, 41)];
        let k = JointGridSet::from_box(&g, &[line(0.0, 1.0)]);
        assert!(strategic_compactness_check(&s, &k, 1e-9, &LambdaOptions::default()).unwrap().pass);
    }

    #[test]
    fn nash_of_fig4() {
        let game = fig4(-2.5, 2.5);
        let g = grid(-2.5, 2.5, 101);
        let r = find_nash(&game, &[g.clone(), g], 1e-3).unwrap();
        assert_eq!(r.components.len(), 3);
        // BR₂ is clipped at ±2.5 there while a³ − 2a still points outward
        assert_eq!(r.truncated.len(), 2);
        assert!(r.truncated.iter().all(|c| c.representative[0].abs() == 2.5));
        let mut reps: Vec<Vec<f64>> = r.components.iter().map(|c| c.representative.clone()).collect();
        reps.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let want = [[-SQRT3, -SQRT3], [0.0, 0.0], [SQRT3, SQRT3]];
        for (got, w) in reps.iter().zip(want) {
            assert!(libm::fabs(got[0] - w[0]) < 0.05 && libm::fabs(got[1] - w[1]) < 0.05, "{got:?}");
        }
    }

    fn econ_game() -> (GameSpec, ScalarField) {
        let players = vec![PlayerSpec { dim: 1, domain: line(-2.0, 2.0) }, PlayerSpec { dim: 1, domain: line(-2.0, 2.0) }];
        let u1 = ScalarField::parse("-(x0 + x1)^2 - x0^2", 2).unwrap();
        let u2 = ScalarField::parse("-(x0 + x1)^2 - x1^2", 2).unwrap();
        let p = ScalarField::parse("-(x0 + x1)^2 - x0^2 - x1^2", 2).unwrap();
        (GameSpec::new(players, vec![u1, u2], Some(p.clone())).unwrap(), p)
    }

    #[test]
    fn potential_game() {
        let (game, p) = econ_game();
        let g = grid(-2.0, 2.0, 41);
        let joint = g.product(&g);
        let v = potential_consistency_check(&game, &p, &joint, 0.0).unwrap();
        assert!(v.pass && v.max_abs_diff == 0.0);
        let nash = find_nash(&game, &[g.clone(), g.clone()], 1e-3).unwrap();
        assert_eq!(nash.components.len(), 1);
        // dense scan oracle for argmax P
        let mut best = (f64::NEG_INFINITY, vec![]);
        for n in 0..joint.len() {
            let q = joint.coord(n);
            let v = p.value(&q).unwrap();
            if v > best.0 {
                best = (v, q);
            }
        }
        for q in &nash.points {
            assert!(q.iter().zip(&best.1).all(|(a, b)| libm::fabs(a - b) <= g.spacing(0) * (1.0 + 1e-9)));
        }
        for (a, b) in nash.components[0].representative.iter().zip(&best.1) {
            assert!(libm::fabs(a - b) <= g.spacing(0));
        }
        let fig = fig4(-2.0, 2.0);
        let cand = ScalarField::parse("-0.5*x0^2 - 0.5*x1^2 + x0*x1", 2).unwrap();
        let v = potential_consistency_check(&fig, &cand, &joint, 1e-9).unwrap();
        assert!(!v.pass && v.witness.is_some());
        let s = single("-(x0 - 0.5)^2");
        let u = s.utilities[0].clone();
        assert!(potential_consistency_check(&s, &u, &grid(-2.0, 2.0, 11), 0.0).unwrap().pass);
    }

    #[test]
    fn single_player_nash_is_argmax() {
        let s = single("-(x0 - 0.5)^2");
        let g = grid(-2.0, 2.0, 41);
        let r = find_nash(&s, &[g], 1e-9).unwrap();
        assert_eq!(r.points, vec![vec![0.5]]);
    }
}
