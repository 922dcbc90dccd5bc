//! Task execution. Each task yields a CSV body, optional binary side files
//! and a list of bounded checks.

use std::fmt::Write as _;

use cqm_core::falg::{special_bracket, special_bracket_expr};
use cqm_core::geometry::{validate_geometry, ValidationSampling};
use cqm_core::phase::{build_gamma, build_omega, integrate_newton, poincare_cartan_split, write_trajectory_csv};
use cqm_core::quantum::{check_support, commutator_check, quantum_operator, QuantumOperator};
use cqm_core::solver::{
    evolve_with, expectation, inner_product, normalize, spectrum, write_field_dump, EvolutionConfig,
};
use cqm_core::{GeometryBundle, PhasePoint, SpecialQuadratic, WaveFunction, C64};
use serde::Serialize;

use crate::output::num;
use crate::scenario::{Scenario, StateSpec, Task, TaskBody};

/// Bounds applied by the checks of each task kind.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tolerances {
    pub structure: f64,
    pub closure: f64,
    pub bracket: f64,
    pub hermiticity: f64,
    pub commutator: f64,
    pub norm: f64,
    pub eigen_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Tight bounds for exact symbolic quantities and smooth solutions.
    Strict,
    /// Bounds sized for discretisation error on moderate grids.
    Grid,
}

impl Profile {
    pub fn tolerances(self) -> Tolerances {
        match self {
            Profile::Strict => Tolerances {
                structure: 1e-8,
                closure: 1e-6,
                bracket: 1e-8,
                hermiticity: 1e-8,
                commutator: 1e-6,
                norm: 1e-10,
                eigen_residual: 1e-8,
            },
            Profile::Grid => Tolerances {
                structure: 1e-6,
                closure: 1e-6,
                bracket: 1e-8,
                hermiticity: 1e-8,
                commutator: 1e-3,
                norm: 1e-8,
                eigen_residual: 1e-6,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `value <= bound`.
    fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Check {
        Check {
            name: name.into(),
            value,
            bound,
            pass: value <= bound,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct TaskOutput {
    pub csv: String,
    /// Extra files as `(suffix, bytes)`.
    pub side_files: Vec<(String, Vec<u8>)>,
    pub checks: Vec<Check>,
}

pub struct Context<'a> {
    pub scenario: &'a Scenario,
    pub k: f64,
    pub tolerances: Tolerances,
}

impl Context<'_> {
    fn bundle(&self) -> &GeometryBundle {
        &self.scenario.bundle
    }

    fn function(&self, name: &str) -> &SpecialQuadratic {
        &self.scenario.functions[name]
    }
}

pub fn run_task(ctx: &Context, task: &Task) -> Result<TaskOutput, String> {
    let bound = |default: f64| task.tolerance.unwrap_or(default);
    let tol = ctx.tolerances;
    match &task.body {
        TaskBody::Validate => validate(ctx, bound(tol.structure), bound(tol.closure)),
        TaskBody::Trajectory { x0, v0, t0, t_end, steps } => trajectory(ctx, x0, v0, *t0, *t_end, *steps),
        TaskBody::Brackets { pairs, points } => brackets(ctx, pairs, *points, bound(tol.bracket)),
        TaskBody::Operators { functions, states } => operators(ctx, functions, states, bound(tol.hermiticity)),
        TaskBody::Evolve {
            state,
            t_start,
            t_end,
            steps,
            dump_every,
        } => {
            let steps = steps.unwrap_or_else(|| {
                ((t_end - t_start) / ctx.bundle().chart.time_step).round().max(1.0) as usize
            });
            evolve(ctx, state, *t_start, *t_end, steps, *dump_every, bound(tol.norm))
        }
        TaskBody::Spectrum { modes, function } => {
            spectrum_task(ctx, function.as_deref().unwrap_or("H0"), *modes, bound(tol.eigen_residual))
        }
        TaskBody::Commutators {
            pairs,
            state,
            t,
            time_stencil,
        } => commutators(ctx, pairs, state, *t, *time_stencil, bound(tol.commutator)),
    }
}

fn velocity_samples(n: usize) -> Vec<Vec<f64>> {
    vec![vec![0.0; n], [0.3, -0.2, 0.1][..n].to_vec()]
}

fn sample_points(bundle: &GeometryBundle) -> Vec<PhasePoint> {
    let n = bundle.n();
    let mut out = Vec::new();
    for (t, x) in ValidationSampling::default().points(&bundle.chart) {
        for v in velocity_samples(n) {
            out.push(PhasePoint::new(t, x.clone(), v));
        }
    }
    out
}

fn validate(ctx: &Context, structure: f64, closure: f64) -> Result<TaskOutput, String> {
    let b = ctx.bundle();
    let r = validate_geometry(b);
    let mut checks = vec![
        Check::at_most("metric_symmetry", r.metric_symmetry, structure),
        Check::at_most("metric_compatibility", r.metric_compatibility, structure),
        Check::at_most("curvature_symmetry", r.curvature_symmetry, structure),
        Check::at_most("em_antisymmetry", r.em_antisymmetry, structure),
        Check::at_most("em_closedness", r.em_closedness, structure),
        Check::at_most("torsion", r.torsion, structure),
        Check::at_most("total_composition", r.total_composition, structure),
        Check {
            name: "min_metric_eigenvalue".into(),
            value: r.min_metric_eigenvalue,
            bound: 0.0,
            pass: r.min_metric_eigenvalue > 0.0,
        },
    ];
    let omega = build_omega(b);
    let points = sample_points(b);
    let closure_res = points.iter().map(|p| omega.closure_residual(p)).fold(0.0, f64::max);
    checks.push(Check::at_most("omega_closure", closure_res, closure));
    let rank = points.iter().map(|p| omega.rank(p)).min().unwrap_or(0);
    let defect = (2 * b.n()).abs_diff(rank) as f64;
    checks.push(Check::at_most("omega_rank_defect", defect, 0.0));
    let mut csv = String::from("name,value,bound,pass\n");
    for c in &checks {
        writeln!(csv, "{},{},{},{}", c.name, num(c.value), num(c.bound), c.pass).unwrap();
    }
    writeln!(csv, "curvature_symmetry_alt,{},,", num(r.curvature_symmetry_alt)).unwrap();
    Ok(TaskOutput {
        csv,
        checks,
        ..Default::default()
    })
}

fn trajectory(ctx: &Context, x0: &[f64], v0: &[f64], t0: f64, t_end: f64, steps: usize) -> Result<TaskOutput, String> {
    let b = ctx.bundle();
    let gamma = build_gamma(b);
    let start = PhasePoint::new(t0, x0.to_vec(), v0.to_vec());
    let traj = integrate_newton(&gamma, &start, t_end, steps).map_err(|e| e.to_string())?;
    let mut buf = Vec::new();
    write_trajectory_csv(&mut buf, &traj, &poincare_cartan_split(b)).map_err(|e| e.to_string())?;
    Ok(TaskOutput {
        csv: String::from_utf8(buf).map_err(|e| e.to_string())?,
        ..Default::default()
    })
}

fn brackets(ctx: &Context, pairs: &[[String; 2]], points: usize, bound: f64) -> Result<TaskOutput, String> {
    let b = ctx.bundle();
    let n = b.n();
    let all = sample_points(b);
    let stride = (all.len() / points).max(1);
    let samples: Vec<&PhasePoint> = all.iter().step_by(stride).take(points).collect();
    let mut csv = String::from("f,g,t");
    for i in 1..=n {
        write!(csv, ",x{i}").unwrap();
    }
    for i in 1..=n {
        write!(csv, ",v{i}").unwrap();
    }
    csv.push_str(",bracket,antisymmetry,closes\n");
    let mut checks = Vec::new();
    for [fname, gname] in pairs {
        let (f, g) = (ctx.function(fname), ctx.function(gname));
        let (fg, gf) = (special_bracket_expr(f, g, b), special_bracket_expr(g, f, b));
        let closes = special_bracket(f, g, b).is_ok();
        let mut worst: f64 = 0.0;
        for p in &samples {
            let vars = p.vars();
            let (a, c) = (fg.eval(&vars), gf.eval(&vars));
            let anti = (a + c).abs();
            worst = worst.max(anti);
            write!(csv, "{fname},{gname},{}", num(p.t)).unwrap();
            for v in p.x.iter().chain(&p.v) {
                write!(csv, ",{}", num(*v)).unwrap();
            }
            writeln!(csv, ",{},{},{}", num(a), num(anti), closes).unwrap();
        }
        checks.push(Check::at_most(format!("antisymmetry:{fname},{gname}"), worst, bound));
        checks.push(Check {
            name: format!("closure:{fname},{gname}"),
            value: if closes { 0.0 } else { 1.0 },
            bound: 0.0,
            pass: closes,
        });
    }
    Ok(TaskOutput {
        csv,
        checks,
        ..Default::default()
    })
}

/// Normalised Gaussian packet `exp(-|x-c|²/2w² + i k·x)` at time `t`.
pub fn packet(bundle: &GeometryBundle, spec: &StateSpec, t: f64) -> Result<WaveFunction, String> {
    let grid = bundle.grid().map_err(|e| e.to_string())?;
    let n = bundle.n();
    let zero = vec![0.0; n];
    let k = spec.momentum.as_deref().unwrap_or(&zero);
    let psi = WaveFunction::from_fn(&grid, t, |x| {
        let (mut r2, mut phase) = (0.0, 0.0);
        for i in 0..n {
            let d = x[i] - spec.centre[i];
            r2 += d * d;
            phase += k[i] * x[i];
        }
        C64::from_polar((-r2 / (2.0 * spec.width * spec.width)).exp(), phase)
    });
    let psi = normalize(&psi, bundle).map_err(|e| e.to_string())?;
    check_support(&psi, bundle).map_err(|e| e.to_string())?;
    Ok(psi)
}

fn operators(ctx: &Context, names: &[String], states: &[StateSpec], bound: f64) -> Result<TaskOutput, String> {
    let b = ctx.bundle();
    let psis = states
        .iter()
        .map(|s| packet(b, s, 0.0))
        .collect::<Result<Vec<_>, _>>()?;
    let mut csv = String::from("operator,state,kind,value\n");
    let mut checks = Vec::new();
    for name in names {
        let op = quantum_operator(ctx.function(name), b, ctx.k, 0.0).map_err(|e| e.to_string())?;
        let applied = psis
            .iter()
            .map(|p| op.apply(p).map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        for (s, psi) in psis.iter().enumerate() {
            let e = expectation(&op, psi, b).map_err(|e| e.to_string())?;
            writeln!(csv, "{name},{s},expectation,{}", num(e.value)).unwrap();
            writeln!(csv, "{name},{s},imaginary,{}", num(e.imaginary)).unwrap();
        }
        let mut defect: f64 = 0.0;
        for (a, fa) in psis.iter().zip(&applied) {
            for (c, fc) in psis.iter().zip(&applied) {
                let l = inner_product(fa, c, b).map_err(|e| e.to_string())?;
                let r = inner_product(a, fc, b).map_err(|e| e.to_string())?;
                defect = defect.max((l - r).norm());
            }
        }
        writeln!(csv, "{name},all,hermiticity,{}", num(defect)).unwrap();
        checks.push(Check::at_most(format!("hermiticity:{name}"), defect, bound));
    }
    Ok(TaskOutput {
        csv,
        checks,
        ..Default::default()
    })
}

struct Observables {
    x: Vec<QuantumOperator>,
    x2: Vec<QuantumOperator>,
    p: Vec<QuantumOperator>,
    h: QuantumOperator,
}

impl Observables {
    fn build(ctx: &Context, t: f64) -> Result<Observables, String> {
        let b = ctx.bundle();
        let n = b.n();
        let op = |f: &SpecialQuadratic| quantum_operator(f, b, ctx.k, t).map_err(|e| e.to_string());
        Ok(Observables {
            x: (0..n).map(|i| op(&SpecialQuadratic::coordinate(n, i))).collect::<Result<_, _>>()?,
            x2: (0..n)
                .map(|i| op(&SpecialQuadratic::spacetime(n, cqm_core::Expr::x(i).square())))
                .collect::<Result<_, _>>()?,
            p: (0..n).map(|i| op(&SpecialQuadratic::momentum(b, i))).collect::<Result<_, _>>()?,
            h: op(&SpecialQuadratic::hamiltonian(b))?,
        })
    }
}

fn evolve(
    ctx: &Context,
    state: &StateSpec,
    t_start: f64,
    t_end: f64,
    steps: usize,
    dump_every: Option<usize>,
    bound: f64,
) -> Result<TaskOutput, String> {
    let b = ctx.bundle();
    let n = b.n();
    let psi0 = packet(b, state, t_start)?;
    let config = EvolutionConfig::new(t_start, t_end, steps);
    let time_dependent = b.is_time_dependent();
    let mut obs = Observables::build(ctx, t_start)?;
    let mut csv = String::from("step,t,norm");
    for i in 1..=n {
        write!(csv, ",x{i}").unwrap();
    }
    for i in 1..=n {
        write!(csv, ",p{i}").unwrap();
    }
    csv.push_str(",H,width\n");
    let mut side_files = Vec::new();
    let mut drift: f64 = 0.0;
    let mut failure: Option<String> = None;
    let mut row = |step: usize, psi: &WaveFunction, csv: &mut String| -> Result<(), String> {
        let err = |e: cqm_core::solver::SolverError| e.to_string();
        let norm = inner_product(psi, psi, b).map_err(err)?.re;
        drift = drift.max((norm - 1.0).abs());
        if time_dependent && step > 0 {
            obs = Observables::build(ctx, psi.t)?;
        }
        let ev = |op: &QuantumOperator| expectation(op, psi, b).map(|e| e.value).map_err(err);
        let xs = obs.x.iter().map(ev).collect::<Result<Vec<_>, _>>()?;
        let ps = obs.p.iter().map(ev).collect::<Result<Vec<_>, _>>()?;
        let mut var = 0.0;
        for (op, x) in obs.x2.iter().zip(&xs) {
            var += ev(op)? - x * x;
        }
        write!(csv, "{step},{},{}", num(psi.t), num(norm)).unwrap();
        for v in xs.iter().chain(&ps) {
            write!(csv, ",{}", num(*v)).unwrap();
        }
        writeln!(csv, ",{},{}", num(ev(&obs.h)?), num(var.max(0.0).sqrt())).unwrap();
        Ok(())
    };
    evolve_with(&psi0, b, ctx.k, &config, |step, psi| {
        if failure.is_some() {
            return;
        }
        if let Err(e) = row(step, psi, &mut csv) {
            failure = Some(e);
            return;
        }
        if let Some(every) = dump_every {
            if step % every == 0 {
                let mut bytes = Vec::new();
                write_field_dump(&mut bytes, psi).expect("writing to memory cannot fail");
                side_files.push((format!("field_{step:06}.bin"), bytes));
            }
        }
    })
    .map_err(|e| e.to_string())?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(TaskOutput {
        csv,
        side_files,
        checks: vec![Check::at_most("norm_drift", drift, bound)],
    })
}

fn spectrum_task(ctx: &Context, name: &str, modes: usize, bound: f64) -> Result<TaskOutput, String> {
    let res = spectrum(ctx.function(name), ctx.bundle(), ctx.k, modes).map_err(|e| e.to_string())?;
    let mut csv = String::from("mode,eigenvalue,residual\n");
    for (m, (e, r)) in res.eigenvalues.iter().zip(&res.residuals).enumerate() {
        writeln!(csv, "{m},{},{}", num(*e), num(*r)).unwrap();
    }
    let worst = res.residuals.iter().copied().fold(0.0, f64::max);
    Ok(TaskOutput {
        csv,
        checks: vec![Check::at_most(format!("eigen_residual:{name}"), worst, bound)],
        ..Default::default()
    })
}

fn commutators(
    ctx: &Context,
    pairs: &[[String; 2]],
    state: &StateSpec,
    t: f64,
    stencil: f64,
    bound: f64,
) -> Result<TaskOutput, String> {
    let b = ctx.bundle();
    let psi = packet(b, state, t)?;
    let family = |_: f64| psi.values.clone();
    let mut csv = String::from("f,g,residual,obstruction_included,obstruction_norm,margin\n");
    let mut checks = Vec::new();
    for [fname, gname] in pairs {
        let rep = commutator_check(ctx.function(fname), ctx.function(gname), &family, t, b, ctx.k, stencil)
            .map_err(|e| e.to_string())?;
        writeln!(
            csv,
            "{fname},{gname},{},{},{},{}",
            num(rep.residual),
            rep.obstruction_included,
            num(rep.obstruction_norm),
            rep.margin
        )
        .unwrap();
        checks.push(Check::at_most(format!("commutator:{fname},{gname}"), rep.residual, bound));
    }
    Ok(TaskOutput {
        csv,
        checks,
        ..Default::default()
    })
}
