//! One function per subcommand. Each records named checks on a [`Ctx`].

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::PathBuf;
use std::time::Instant;

use invex_topo_core::certify::{
    check_alpha_pl, check_block_alpha_pl, check_block_growth, check_growth, check_increasing_at_infinity, check_two_sided_pl,
    estimate_minimum, find_stationary_points, invexity_verdict, pl_gradient_flow, CheckOptions, FlowOptions, Multistart,
};
use invex_topo_core::expr::{builtin, ScalarField, BUILTINS};
use invex_topo_core::games::{
    aligned_grid, find_nash, iterate_rationalizable, potential_consistency_check, strategic_compactness_check, GameSpec, JointGridSet,
    LambdaOptions,
};
use invex_topo_core::grid::{connected_components, connectedness_verdict_with, level_mask, sample, sample_cells, BoxDomain, CellMask, Direction, RegularGrid};
use invex_topo_core::minimax::{
    classify_solutions, estimate_inner_modulus, interchangeability_check, product_structure_check, ClassifyOptions, ModulusMode,
    Side,
};
use invex_topo_core::mountain_pass::{find_mountain_pass, verify_separation, PassOptions, PassStatus};
use invex_topo_core::optimize::Sense;
use invex_topo_core::MinimaxProblem;
use serde::Serialize;
use serde_json::{json, Value};

use crate::artifacts;
use crate::game_doc::{builtin_game, GameDoc, GameSource};
use crate::params::{Command, List, Params};
use crate::report::{Check, CheckVerdict, Expectation, FunctionInfo, Report, Timings, SCHEMA_VERSION};
use crate::{exit, usage, CliError};

const DEFAULT_SEED: u64 = 42;

fn err(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn field_dim(p: &Params) -> Option<usize> {
    match (&p.builtin, &p.expr) {
        (Some(name), None) => BUILTINS.iter().find(|b| b.name == name).map(|b| b.dim),
        (None, Some(_)) => p.dim,
        _ => None,
    }
}

fn set<T>(slot: &mut Option<T>, value: T) {
    if slot.is_none() {
        *slot = Some(value);
    }
}

/// Fills every default the command reads so the echoed config is complete.
pub fn fill_defaults(command: Command, p: &mut Params) -> Result<(), CliError> {
    set(&mut p.seed, DEFAULT_SEED);
    let dim = field_dim(p);
    match command {
        Command::Sublevel => {
            set(&mut p.res, List(vec![101, 201, 401]));
            set(&mut p.superlevel, false);
        }
        Command::CertifyPl => {
            set(&mut p.res, List(vec![101]));
            set(&mut p.two_sided, false);
            set(&mut p.slack, 1e-9);
            if p.two_sided == Some(true) {
                if let Some(d) = dim {
                    set(&mut p.nx, d / 2);
                }
            } else {
                set(&mut p.alpha, 2.0);
                if p.block.is_some() {
                    set(&mut p.sense, "min".into());
                }
            }
        }
        Command::CertifyGrowth => {
            set(&mut p.res, List(vec![101]));
            set(&mut p.beta, 2.0);
            set(&mut p.set_tol, 1e-9);
            set(&mut p.slack, 1e-9);
            if p.block.is_some() {
                set(&mut p.sense, "min".into());
            }
        }
        Command::CertifyInvex => {
            set(&mut p.tol_grad, 1e-6);
            set(&mut p.tol_val, 1e-6);
            set(&mut p.starts, 64);
        }
        Command::IncreasingAtInfinity => {
            if let Some(d) = dim {
                set(&mut p.center, List(vec![0.0; d]));
                set(&mut p.directions, 256.max(64 * d));
            }
            set(&mut p.radii, List(vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0]));
        }
        Command::MountainPass => {
            set(&mut p.nodes, 33);
            set(&mut p.iters, 5000);
            set(&mut p.tol, 1e-6);
            set(&mut p.record_every, 0);
            if p.level.is_some() {
                set(&mut p.res, List(vec![201]));
            }
        }
        Command::PlFlow => {
            set(&mut p.alpha, 2.0);
            set(&mut p.stop_eps, 1e-12);
            set(&mut p.max_steps, 200_000);
        }
        Command::MinimaxClassify => {
            set(&mut p.res, List(vec![101]));
            set(&mut p.tol_val, 1e-6);
            if let Some(d) = dim {
                set(&mut p.nx, d / 2);
            }
        }
        Command::MinimaxModulus => {
            set(&mut p.res, List(vec![201]));
            set(&mut p.side, "y".into());
            set(&mut p.mode, "lipschitz".into());
            set(&mut p.tol, 1e-9);
            set(&mut p.deltas, List(vec![0.2, 0.1, 0.05, 0.02, 0.01, 0.005]));
            if let Some(d) = dim {
                set(&mut p.nx, d / 2);
                set(&mut p.base, List(vec![0.0; d]));
            }
        }
        Command::GameNash => {
            set(&mut p.res, List(vec![101]));
            set(&mut p.tol, 1e-3);
        }
        Command::GameRationalize => {
            set(&mut p.res, List(vec![61]));
            set(&mut p.max_k, 20);
            set(&mut p.tol, 1e-9);
            let d = LambdaOptions::default();
            set(&mut p.budget, d.budget);
            set(&mut p.subsample, d.subsample);
            set(&mut p.bisect_depth, d.bisect_depth);
        }
        Command::GamePotential => {
            set(&mut p.res, List(vec![41]));
            set(&mut p.tol, 1e-9);
            set(&mut p.nash_tol, 1e-3);
        }
    }
    if let Some(e) = &p.expect {
        let ok = if command == Command::Sublevel {
            e.split(',').all(|s| s.trim().parse::<usize>().is_ok())
        } else {
            matches!(e.as_str(), "pass" | "fail" | "inconclusive")
        };
        if !ok {
            return Err(usage(format!("field `expect`: `{e}` is not valid for `{}`", command.name())));
        }
    }
    Ok(())
}

pub struct Ctx {
    pub p: Params,
    pub out: PathBuf,
    function: Option<FunctionInfo>,
    game: Option<GameDoc>,
    checks: Vec<Check>,
    artifacts: Vec<String>,
    timings: BTreeMap<String, f64>,
    observed_counts: Option<Vec<usize>>,
    clock: Instant,
}

impl Ctx {
    pub fn new(p: Params, out: PathBuf) -> Self {
        Ctx {
            p,
            out,
            function: None,
            game: None,
            checks: Vec::new(),
            artifacts: Vec::new(),
            timings: BTreeMap::new(),
            observed_counts: None,
            clock: Instant::now(),
        }
    }

    fn check(&mut self, name: &str, verdict: CheckVerdict, result: impl Serialize) -> Result<(), CliError> {
        let result = serde_json::to_value(result).map_err(err)?;
        self.timings.insert(name.to_string(), self.clock.elapsed().as_secs_f64() * 1e3);
        self.clock = Instant::now();
        self.checks.push(Check { name: name.to_string(), verdict, result });
        Ok(())
    }

    fn artifact(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.out.join(name)
    }

    fn field(&mut self) -> Result<ScalarField, CliError> {
        let p = &self.p;
        let (f, info) = match (&p.builtin, &p.expr) {
            (Some(name), None) => {
                let f = builtin(name).map_err(err)?;
                if let Some(d) = p.dim {
                    if d != f.dim() {
                        return Err(usage(format!("field `dim`: builtin `{name}` has dimension {}", f.dim())));
                    }
                }
                let info = FunctionInfo { source: "builtin", name: Some(name.clone()), expression: f.source().to_string(), dim: f.dim() };
                (f, info)
            }
            (None, Some(text)) => {
                let dim = p.dim.ok_or_else(|| usage("field `dim` is required with `expr`"))?;
                let f = ScalarField::parse(text, dim).map_err(|e| usage(format!("field `expr`: {e}")))?;
                (f, FunctionInfo { source: "expr", name: None, expression: text.clone(), dim })
            }
            (Some(_), Some(_)) => return Err(usage("give exactly one of `builtin` and `expr`, not both")),
            (None, None) => return Err(usage("a function is required: `builtin` or `expr`")),
        };
        self.function = Some(info);
        Ok(f)
    }

    fn game(&mut self) -> Result<(GameDoc, GameSpec), CliError> {
        let doc = match (&self.p.game, &self.p.game_builtin) {
            (Some(GameSource::Inline(doc)), None) => doc.clone(),
            (Some(src @ GameSource::Path(_)), None) => src.load()?,
            (None, Some(name)) => builtin_game(name)?,
            (Some(_), Some(_)) => return Err(usage("give exactly one of `game` and `game-builtin`")),
            (None, None) => return Err(usage("a game is required: `game` or `game-builtin`")),
        };
        let spec = doc.to_spec()?;
        self.game = Some(doc.clone());
        Ok((doc, spec))
    }

    fn ms(&self) -> Multistart {
        Multistart { seed: self.p.seed.unwrap_or(DEFAULT_SEED), ..Multistart::default() }
    }

    fn check_options(&self) -> CheckOptions {
        CheckOptions {
            eps_excl: self.p.eps_excl,
            slack: self.p.slack.unwrap_or(1e-9),
            seed: self.p.seed.unwrap_or(DEFAULT_SEED),
            ..CheckOptions::default()
        }
    }

    pub fn finish(self, command: Command, config_hash: String) -> Report {
        let verdict = CheckVerdict::combine(self.checks.iter().map(|c| c.verdict));
        let expectation = self.p.expect.as_ref().map(|e| {
            if let Some(counts) = &self.observed_counts {
                let want: Vec<usize> = e.split(',').map(|s| s.trim().parse().expect("validated")).collect();
                let matched = if want.len() == 1 { counts.iter().all(|c| *c == want[0]) } else { *counts == want };
                let observed = counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
                Expectation { expected: e.clone(), observed, matched }
            } else {
                Expectation { expected: e.clone(), observed: verdict.as_str().into(), matched: e == verdict.as_str() }
            }
        });
        let exit_code = match (&expectation, verdict) {
            (Some(x), _) => {
                if x.matched {
                    exit::PASS
                } else {
                    exit::FAIL
                }
            }
            (None, CheckVerdict::Pass) => exit::PASS,
            (None, CheckVerdict::Fail) => exit::FAIL,
            (None, CheckVerdict::Inconclusive) => exit::INCONCLUSIVE,
        };
        let mut config = serde_json::to_value(&self.p).expect("params serialize");
        if let Value::Object(m) = &mut config {
            m.remove("out");
        }
        Report {
            schema_version: SCHEMA_VERSION,
            toolkit_version: env!("CARGO_PKG_VERSION"),
            command: command.name().into(),
            config,
            config_hash,
            function: self.function,
            game: self.game,
            checks: self.checks,
            verdict,
            expectation,
            artifacts: self.artifacts,
            exit_code,
            timings: Timings { total_ms: 0.0, checks_ms: self.timings },
        }
    }
}

fn domain(p: &Params, dim: usize) -> Result<BoxDomain, CliError> {
    let List(pairs) = p.domain.as_ref().ok_or_else(|| usage("field `box` is required"))?;
    let b = BoxDomain::from_pairs(pairs).map_err(|e| usage(format!("field `box`: {e}")))?;
    if b.dim() != dim {
        return Err(usage(format!("field `box`: {} axes for a {dim}-dimensional function", b.dim())));
    }
    Ok(b)
}

fn single_res(p: &Params) -> Result<usize, CliError> {
    match p.res.as_ref().map(|r| r.0.as_slice()) {
        Some([r]) => Ok(*r),
        _ => Err(usage("field `res`: expected a single resolution")),
    }
}

fn grid(b: &BoxDomain, r: usize) -> Result<RegularGrid, CliError> {
    RegularGrid::uniform(b.clone(), r).map_err(|e| usage(format!("field `res`: {e}")))
}

fn need<T: Clone>(v: &Option<T>, name: &str) -> Result<T, CliError> {
    v.clone().ok_or_else(|| usage(format!("field `{name}` is required")))
}

fn point(v: &Option<List<f64>>, name: &str, dim: usize) -> Result<Vec<f64>, CliError> {
    let List(x) = need(v, name)?;
    if x.len() != dim {
        return Err(usage(format!("field `{name}`: {} coordinates, expected {dim}", x.len())));
    }
    Ok(x)
}

fn block(p: &Params, dim: usize) -> Result<Option<(Range<usize>, Sense)>, CliError> {
    let Some(text) = &p.block else { return Ok(None) };
    let bad = || usage(format!("field `block`: `{text}` is not `start:end` within 0..{dim}"));
    let (a, b) = text.split_once(':').ok_or_else(bad)?;
    let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if a >= b || b > dim {
        return Err(bad());
    }
    let sense = match p.sense.as_deref() {
        Some("min") | None => Sense::Min,
        Some("max") => Sense::Max,
        Some(other) => return Err(usage(format!("field `sense`: `{other}` is not min or max"))),
    };
    Ok(Some((a..b, sense)))
}

pub fn run(command: Command, ctx: &mut Ctx) -> Result<(), CliError> {
    match command {
        Command::Sublevel => sublevel(ctx),
        Command::CertifyPl => certify_pl(ctx),
        Command::CertifyGrowth => certify_growth(ctx),
        Command::CertifyInvex => certify_invex(ctx),
        Command::IncreasingAtInfinity => increasing(ctx),
        Command::MountainPass => mountain_pass(ctx),
        Command::PlFlow => pl_flow(ctx),
        Command::MinimaxClassify => minimax_classify(ctx),
        Command::MinimaxModulus => minimax_modulus(ctx),
        Command::GameNash => game_nash(ctx),
        Command::GameRationalize => game_rationalize(ctx),
        Command::GamePotential => game_potential(ctx),
    }
}

fn sublevel(ctx: &mut Ctx) -> Result<(), CliError> {
    let f = ctx.field()?;
    let b = domain(&ctx.p, f.dim())?;
    let c = need(&ctx.p.level, "level")?;
    let res = need(&ctx.p.res, "res")?.0;
    let dir = if ctx.p.superlevel == Some(true) { Direction::Super } else { Direction::Sub };
    let mut finest = None;
    let verdict = connectedness_verdict_with(&b, &res, |g| {
        let lattice = sample_cells(&f, g, dir)?;
        let mask = level_mask(&lattice, c, dir);
        finest = Some(lattice);
        Ok(mask)
    });
    let verdict = match verdict {
        Ok(v) => v,
        Err(e) => return Err(usage(format!("field `res`: {e}"))),
    };
    let lattice = finest.expect("at least two resolutions");
    let labeling = connected_components(&level_mask(&lattice, c, dir));
    artifacts::write_labeling(&ctx.artifact("components.csv"), &lattice, &labeling)?;
    ctx.observed_counts = Some(verdict.counts.clone());
    let v = if verdict.stable { CheckVerdict::Pass } else { CheckVerdict::Inconclusive };
    let result = json!({
        "direction": dir,
        "level": c,
        "verdict": verdict,
        "finest": { "resolution": lattice.grid.resolution(), "sizes": labeling.sizes, "touches_boundary": labeling.touches_boundary },
    });
    ctx.check("connectedness", v, result)
}

fn certify_pl(ctx: &mut Ctx) -> Result<(), CliError> {
    let f = ctx.field()?;
    let b = domain(&ctx.p, f.dim())?;
    let g = grid(&b, single_res(&ctx.p)?)?;
    let opts = ctx.check_options();
    if ctx.p.two_sided == Some(true) {
        if ctx.p.block.is_some() || ctx.p.mu.is_some() {
            return Err(usage("`two-sided` takes `mu1` and `mu2`, not `mu` or `block`"));
        }
        let nx = need(&ctx.p.nx, "nx")?;
        let problem = MinimaxProblem::from_joint_box(f, nx, &b).map_err(err)?;
        let (c1, c2) = check_two_sided_pl(&problem, &g, need(&ctx.p.mu1, "mu1")?, need(&ctx.p.mu2, "mu2")?, &opts).map_err(err)?;
        ctx.check("two_sided_pl_x", CheckVerdict::from_core(c1.verdict), &c1)?;
        return ctx.check("two_sided_pl_y", CheckVerdict::from_core(c2.verdict), &c2);
    }
    let alpha = need(&ctx.p.alpha, "alpha")?;
    let mu = need(&ctx.p.mu, "mu")?;
    let cert = match block(&ctx.p, f.dim())? {
        Some((range, sense)) => {
            if ctx.p.f_star.is_some() {
                return Err(usage("`f-star` does not apply to block checks"));
            }
            check_block_alpha_pl(&f, &g, range, sense, alpha, mu, &opts).map_err(err)?
        }
        None => check_alpha_pl(&f, &g, alpha, mu, ctx.p.f_star, &opts).map_err(err)?,
    };
    ctx.check("alpha_pl", CheckVerdict::from_core(cert.verdict), &cert)
}

fn certify_growth(ctx: &mut Ctx) -> Result<(), CliError> {
    let f = ctx.field()?;
    let b = domain(&ctx.p, f.dim())?;
    let g = grid(&b, single_res(&ctx.p)?)?;
    let opts = ctx.check_options();
    let beta = need(&ctx.p.beta, "beta")?;
    let eta = need(&ctx.p.eta, "eta")?;
    let set_tol = need(&ctx.p.set_tol, "set-tol")?;
    if let Some((range, sense)) = block(&ctx.p, f.dim())? {
        let cert = check_block_growth(&f, &g, range, sense, beta, eta, set_tol, &opts).map_err(err)?;
        return ctx.check("block_growth", CheckVerdict::from_core(cert.verdict), &cert);
    }
    let lattice = sample(&f, &g).map_err(err)?;
    let grid_min = lattice.values.iter().copied().fold(f64::INFINITY, f64::min);
    let f_star = match ctx.p.f_star {
        Some(v) => v,
        None => estimate_minimum(&f, &b, &ctx.ms()).map_err(err)?.f_star.min(grid_min),
    };
    let minima = CellMask::from_fn(&g, |n, _| lattice.values[n] <= f_star + set_tol);
    if minima.is_empty() {
        let result = json!({ "f_star": f_star, "grid_min": grid_min, "reason": "no grid node within set-tol of the minimum" });
        return ctx.check("growth", CheckVerdict::Inconclusive, result);
    }
    let cert = check_growth(&f, &g, beta, eta, &minima, f_star, &opts).map_err(err)?;
    let result = json!({ "f_star": f_star, "minima_nodes": minima.count(), "certificate": cert });
    ctx.check("growth", CheckVerdict::from_core(cert.verdict), result)
}

fn certify_invex(ctx: &mut Ctx) -> Result<(), CliError> {
    let f = ctx.field()?;
    let b = domain(&ctx.p, f.dim())?;
    let ms = Multistart { starts: need(&ctx.p.starts, "starts")?, ..ctx.ms() };
    let tol_grad = need(&ctx.p.tol_grad, "tol-grad")?;
    let cert = invexity_verdict(&f, &b, &ms, tol_grad, need(&ctx.p.tol_val, "tol-val")?).map_err(err)?;
    let points = find_stationary_points(&f, &b, &ms, tol_grad).map_err(err)?;
    let rows: Vec<_> = points.points.iter().map(|s| (s.point.clone(), vec![s.value, s.grad_norm])).collect();
    artifacts::write_points(&ctx.artifact("stationary_points.csv"), f.dim(), &["value", "grad_norm"], &rows)?;
    let result = json!({ "certificate": cert, "stationary_points": points });
    ctx.check("invexity", CheckVerdict::from_core(cert.verdict), result)
}

fn increasing(ctx: &mut Ctx) -> Result<(), CliError> {
    let f = ctx.field()?;
    let center = point(&ctx.p.center, "center", f.dim())?;
    let radii = need(&ctx.p.radii, "radii")?.0;
    let v = check_increasing_at_infinity(&f, &center, &radii, need(&ctx.p.level, "level")?, need(&ctx.p.directions, "directions")?)
        .map_err(err)?;
    ctx.check("increasing_at_infinity", CheckVerdict::from_core(v.verdict), &v)
}

fn mountain_pass(ctx: &mut Ctx) -> Result<(), CliError> {
    let f = ctx.field()?;
    let x0 = point(&ctx.p.x0, "x0", f.dim())?;
    let x1 = point(&ctx.p.x1, "x1", f.dim())?;
    let b = if ctx.p.domain.is_some() { Some(domain(&ctx.p, f.dim())?) } else { None };
    let opts = PassOptions {
        nodes: need(&ctx.p.nodes, "nodes")?,
        iters: need(&ctx.p.iters, "iters")?,
        tol: need(&ctx.p.tol, "tol")?,
        domain: b.clone(),
        record_every: need(&ctx.p.record_every, "record-every")?,
        ..PassOptions::default()
    };
    let r = find_mountain_pass(&f, &x0, &x1, &opts).map_err(err)?;
    let values = r.path.iter().map(|x| f.value(x)).collect::<Result<Vec<_>, _>>().map_err(err)?;
    artifacts::write_pass(&ctx.artifact("path.csv"), &r, f.dim(), &values)?;
    let v = match r.status {
        PassStatus::Converged => CheckVerdict::Pass,
        PassStatus::NoPass => CheckVerdict::Fail,
        PassStatus::Inconclusive => CheckVerdict::Inconclusive,
    };
    let mut summary = serde_json::to_value(&r).map_err(err)?;
    if let Value::Object(m) = &mut summary {
        m.remove("trace");
        m.remove("path");
        m.remove("max_history");
    }
    ctx.check("mountain_pass", v, summary)?;
    if let Some(c) = ctx.p.level {
        let b = b.ok_or_else(|| usage("field `box` is required with `level`"))?;
        let g = grid(&b, single_res(&ctx.p)?)?;
        let separated = verify_separation(&f, &g, &x0, &x1, c).map_err(err)?;
        let sv = if separated { CheckVerdict::Pass } else { CheckVerdict::Fail };
        ctx.check("separation", sv, json!({ "level": c, "separated": separated }))?;
        let conclusion = match (separated, r.status) {
            (true, PassStatus::Converged) if r.pass_value > c => CheckVerdict::Pass,
            (true, PassStatus::Converged) => CheckVerdict::Fail,
            _ => CheckVerdict::Inconclusive,
        };
        ctx.check("pass_above_level", conclusion, json!({ "level": c, "pass_value": r.pass_value }))?;
    }
    Ok(())
}

fn pl_flow(ctx: &mut Ctx) -> Result<(), CliError> {
    let f = ctx.field()?;
    let x0 = point(&ctx.p.x0, "x0", f.dim())?;
    let f_star = match ctx.p.f_star {
        Some(v) => v,
        None => {
            let b = domain(&ctx.p, f.dim()).map_err(|_| usage("field `f-star` or `box` is required"))?;
            estimate_minimum(&f, &b, &ctx.ms()).map_err(err)?.f_star
        }
    };
    let opts = FlowOptions {
        stop_eps: need(&ctx.p.stop_eps, "stop-eps")?,
        max_steps: need(&ctx.p.max_steps, "max-steps")?,
        mu: ctx.p.mu,
        ..FlowOptions::default()
    };
    let t = pl_gradient_flow(&f, &x0, need(&ctx.p.alpha, "alpha")?, f_star, &opts).map_err(err)?;
    artifacts::write_flow(&ctx.artifact("flow.csv"), &t, f.dim())?;
    let v = match (t.converged, t.within_bound) {
        (false, _) => CheckVerdict::Inconclusive,
        (true, Some(false)) => CheckVerdict::Fail,
        (true, _) => CheckVerdict::Pass,
    };
    let result = json!({
        "f_star": f_star,
        "terminal_time": t.terminal_time,
        "terminal_point": t.terminal_point,
        "converged": t.converged,
        "time_bound": t.time_bound,
        "within_bound": t.within_bound,
        "samples": t.samples.len(),
    });
    ctx.check("pl_flow", v, result)
}

fn problem(ctx: &mut Ctx) -> Result<(MinimaxProblem, BoxDomain), CliError> {
    let f = ctx.field()?;
    let b = domain(&ctx.p, f.dim())?;
    let nx = need(&ctx.p.nx, "nx")?;
    Ok((MinimaxProblem::from_joint_box(f, nx, &b).map_err(|e| usage(format!("field `nx`: {e}")))?, b))
}

fn minimax_classify(ctx: &mut Ctx) -> Result<(), CliError> {
    let (problem, b) = problem(ctx)?;
    let g = grid(&b, single_res(&ctx.p)?)?;
    let tol = need(&ctx.p.tol_val, "tol-val")?;
    let opts = ClassifyOptions { tol_val: tol, tol_grad: ctx.p.tol_grad, seed: ctx.p.seed.unwrap_or(DEFAULT_SEED), ..ClassifyOptions::default() };
    let c = classify_solutions(&problem, &g, &opts).map_err(err)?;
    artifacts::write_solution_masks(&ctx.artifact("solution_masks.csv"), &c)?;
    let gap = (c.minimax_value - c.maximin_value).abs();
    let cv = if c.inconclusive {
        CheckVerdict::Inconclusive
    } else if !c.e_points.is_empty() && gap <= tol {
        CheckVerdict::Pass
    } else {
        CheckVerdict::Fail
    };
    let e_box = c.e_mask.bounding_box();
    let result = json!({
        "classification": c,
        "e_bounding_box": e_box,
        "value_gap": gap,
        "x_components": connected_components(&c.x_mask).count,
        "y_components": connected_components(&c.y_mask).count,
    });
    ctx.check("classification", cv, result)?;
    let s = product_structure_check(&problem, &c, tol).map_err(err)?;
    ctx.check("product_structure", if s.pass { CheckVerdict::Pass } else { CheckVerdict::Fail }, &s)?;
    // lexicographic extremes of E as the two saddles to swap
    let lo = c.e_points.iter().min_by(|a, b| lex(a, b));
    let hi = c.e_points.iter().max_by(|a, b| lex(a, b));
    match (lo, hi) {
        (Some(s1), Some(s2)) if s1 != s2 => {
            let v = interchangeability_check(&problem, s1, s2, tol, &ctx.ms()).map_err(err)?;
            ctx.check("interchangeability", if v.pass { CheckVerdict::Pass } else { CheckVerdict::Fail }, &v)
        }
        (Some(_), Some(_)) => ctx.check("interchangeability", CheckVerdict::Pass, json!({ "reason": "unique saddle point" })),
        _ => ctx.check("interchangeability", CheckVerdict::Inconclusive, json!({ "reason": "no saddle point" })),
    }
}

fn lex(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
}

fn minimax_modulus(ctx: &mut Ctx) -> Result<(), CliError> {
    let (problem, _) = problem(ctx)?;
    let side = match ctx.p.side.as_deref() {
        Some("x") => Side::X,
        Some("y") | None => Side::Y,
        Some(other) => return Err(usage(format!("field `side`: `{other}` is not x or y"))),
    };
    let mode = match ctx.p.mode.as_deref() {
        Some("lipschitz") | None => ModulusMode::Lipschitz,
        Some("hoelder") => ModulusMode::Hoelder,
        Some("eb") => ModulusMode::Eb,
        Some(other) => return Err(usage(format!("field `mode`: `{other}` is not lipschitz, hoelder or eb"))),
    };
    let base = point(&ctx.p.base, "base", problem.dim())?;
    let respond = match side {
        Side::X => problem.x_box.clone(),
        Side::Y => problem.y_box.clone(),
    };
    let g = grid(&respond, single_res(&ctx.p)?)?;
    let deltas = need(&ctx.p.deltas, "deltas")?.0;
    let m = estimate_inner_modulus(&problem, side, &base, &deltas, &g, mode, need(&ctx.p.tol, "tol")?).map_err(err)?;
    let v = if m.kappa.is_finite() { CheckVerdict::Pass } else { CheckVerdict::Inconclusive };
    ctx.check("modulus", v, &m)
}

fn player_grids(spec: &GameSpec, r: usize) -> Result<Vec<RegularGrid>, CliError> {
    spec.players.iter().map(|p| grid(&p.domain, r)).collect()
}

fn game_nash(ctx: &mut Ctx) -> Result<(), CliError> {
    let (_, spec) = ctx.game()?;
    let grids = player_grids(&spec, single_res(&ctx.p)?)?;
    let r = find_nash(&spec, &grids, need(&ctx.p.tol, "tol")?).map_err(err)?;
    let rows: Vec<_> = r.points.iter().map(|x| (x.clone(), vec![])).collect();
    artifacts::write_points(&ctx.artifact("nash_points.csv"), spec.joint_dim(), &[], &rows)?;
    let v = if r.components.is_empty() { CheckVerdict::Inconclusive } else { CheckVerdict::Pass };
    let result = json!({ "component_count": r.components.len(), "nash": r });
    ctx.check("nash", v, result)
}

fn game_rationalize(ctx: &mut Ctx) -> Result<(), CliError> {
    let (_, spec) = ctx.game()?;
    let List(k) = need(&ctx.p.k_box, "k-box")?;
    let kbox = BoxDomain::from_pairs(&k).map_err(|e| usage(format!("field `k-box`: {e}")))?;
    if kbox.dim() != spec.joint_dim() {
        return Err(usage(format!("field `k-box`: {} axes, joint action has {}", kbox.dim(), spec.joint_dim())));
    }
    let r = single_res(&ctx.p)?;
    let mut grids = Vec::new();
    let mut factors = Vec::new();
    for i in 0..spec.n_players() {
        let range = spec.range(i);
        let factor = BoxDomain::new(kbox.lo()[range.clone()].to_vec(), kbox.hi()[range].to_vec()).map_err(err)?;
        grids.push(aligned_grid(&spec.players[i].domain, &factor, r).map_err(|e| usage(format!("field `k-box`: {e}")))?);
        factors.push(factor);
    }
    let kset = JointGridSet::from_box(&grids, &factors);
    let opts = LambdaOptions {
        budget: need(&ctx.p.budget, "budget")?,
        subsample: need(&ctx.p.subsample, "subsample")?,
        bisect_depth: need(&ctx.p.bisect_depth, "bisect-depth")?,
    };
    let tol = need(&ctx.p.tol, "tol")?;
    let compact = strategic_compactness_check(&spec, &kset, tol, &opts).map_err(err)?;
    ctx.check("strategic_compactness", if compact.pass { CheckVerdict::Pass } else { CheckVerdict::Fail }, &compact)?;
    let trace = iterate_rationalizable(&spec, &kset, need(&ctx.p.max_k, "max-k")?, tol, &opts).map_err(err)?;
    artifacts::write_trace(&ctx.artifact("trace.csv"), &trace)?;
    let v = if trace.fixed_point_reached && !trace.approximate {
        CheckVerdict::Pass
    } else {
        CheckVerdict::Inconclusive
    };
    let last = trace.steps.last().expect("trace holds the start set");
    let result = json!({
        "fixed_point_reached": trace.fixed_point_reached,
        "budget_exceeded": trace.budget_exceeded,
        "approximate": trace.approximate,
        "nested": trace.is_nested(),
        "final_component_counts": last.component_counts,
        "final_bounds": last.bounds,
        "steps": trace.steps,
    });
    ctx.check("rationalizable", v, result)
}

fn game_potential(ctx: &mut Ctx) -> Result<(), CliError> {
    let (doc, spec) = ctx.game()?;
    let text = ctx.p.potential.clone().or(doc.potential).ok_or_else(|| usage("field `potential` is required (or in the game)"))?;
    let pot = ScalarField::parse(&text, spec.joint_dim()).map_err(|e| usage(format!("field `potential`: {e}")))?;
    let grids = player_grids(&spec, single_res(&ctx.p)?)?;
    let mut joint = grids[0].clone();
    for g in &grids[1..] {
        joint = joint.product(g);
    }
    let v = potential_consistency_check(&spec, &pot, &joint, need(&ctx.p.tol, "tol")?).map_err(err)?;
    ctx.check("potential_consistency", if v.pass { CheckVerdict::Pass } else { CheckVerdict::Fail }, json!({ "potential": text, "verdict": v }))?;
    // Nash set against the grid argmax of the potential
    let nash = find_nash(&spec, &grids, need(&ctx.p.nash_tol, "nash-tol")?).map_err(err)?;
    let lattice = sample(&pot, &joint).map_err(err)?;
    let best = lattice.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let argmax: Vec<Vec<f64>> = (0..joint.len()).filter(|n| lattice.values[*n] == best).map(|n| joint.coord(n)).collect();
    let h: Vec<f64> = (0..joint.dim()).map(|a| joint.spacing(a) * (1.0 + 1e-9)).collect();
    let near = |p: &[f64], q: &[f64]| p.iter().zip(q).zip(&h).all(|((a, b), s)| (a - b).abs() <= *s);
    let matches = nash.components.len() == 1
        && nash.points.iter().all(|p| argmax.iter().any(|q| near(p, q)))
        && argmax.iter().all(|q| nash.points.iter().any(|p| near(p, q)));
    let mv = if !v.pass { CheckVerdict::Inconclusive } else if matches { CheckVerdict::Pass } else { CheckVerdict::Fail };
    ctx.check("nash_is_argmax_potential", mv, json!({ "argmax": argmax, "potential_max": best, "nash": nash }))
}
