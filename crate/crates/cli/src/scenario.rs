//! Scenario files: parsing, schema checks and assembly of the geometry.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use cqm_core::geometry::{EMField, SpacetimeConnection};
use cqm_core::units::{rescale_em, rescale_metric, Tagged};
use cqm_core::{DimTag, Expr, FibredChart, GeometryBundle, ScaledScalar, SpacelikeMetric, SpecialQuadratic, Var};
use num_rational::Rational32;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub k_factor: Option<f64>,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub constants: ConstantsSpec,
    pub chart: ChartSpec,
    #[serde(default)]
    pub geometry: GeometrySpec,
    #[serde(default)]
    pub functions: BTreeMap<String, FunctionSpec>,
    #[serde(default)]
    pub tasks: Vec<TaskSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantSpec {
    pub value: f64,
    /// Exponents of time, length and mass, e.g. `["-1", "3/2", "1/2"]`.
    pub tag: [String; 3],
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSpec {
    pub m: Option<ConstantSpec>,
    pub hbar: Option<ConstantSpec>,
    pub q: Option<ConstantSpec>,
}

fn default_time_step() -> f64 {
    0.01
}

fn default_order() -> usize {
    2
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSpec {
    pub extent: Vec<[f64; 2]>,
    pub points: Vec<usize>,
    #[serde(default = "default_time_step")]
    pub time_step: f64,
    #[serde(default = "default_order")]
    pub fd_order: usize,
}

/// Additive correction to one gravitational connection coefficient
/// `K_λ^h_μ`; `lam` and `mu` run over `0..=n` with 0 for time, `h` over `1..=n`.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionOverride {
    pub lam: usize,
    pub h: usize,
    pub mu: usize,
    pub value: String,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    /// Row-major `g_ij` in length² units; defaults to the identity.
    pub metric: Option<Vec<String>>,
    /// `A_λ` in rescaled chart units; defaults to zero.
    pub potential: Option<Vec<String>>,
    /// Row-major `f_λμ` before rescaling by `q/ħ`; defaults to `dA`.
    pub em: Option<Vec<String>>,
    #[serde(default)]
    pub connection: Vec<ConnectionOverride>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionSpec {
    Hamiltonian,
    Momentum { axis: usize },
    Coordinate { axis: usize },
    Spacetime { base: String },
    Special {
        #[serde(default)]
        f0: Option<String>,
        #[serde(default)]
        fi: Option<Vec<String>>,
        #[serde(default)]
        base: Option<String>,
    },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    pub centre: Vec<f64>,
    pub width: f64,
    #[serde(default)]
    pub momentum: Option<Vec<f64>>,
}

fn default_points() -> usize {
    5
}

fn default_stencil() -> f64 {
    1e-3
}

#[derive(Clone, Debug, Deserialize)]
pub struct TaskSpec {
    pub id: Option<String>,
    pub tolerance: Option<f64>,
    #[serde(flatten)]
    pub body: TaskBody,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskBody {
    Validate,
    Trajectory {
        x0: Vec<f64>,
        v0: Vec<f64>,
        #[serde(default)]
        t0: f64,
        t_end: f64,
        steps: usize,
    },
    Brackets {
        pairs: Vec<[String; 2]>,
        #[serde(default = "default_points")]
        points: usize,
    },
    Operators {
        functions: Vec<String>,
        states: Vec<StateSpec>,
    },
    Evolve {
        state: StateSpec,
        #[serde(default)]
        t_start: f64,
        t_end: f64,
        steps: Option<usize>,
        dump_every: Option<usize>,
    },
    Spectrum {
        modes: usize,
        function: Option<String>,
    },
    Commutators {
        pairs: Vec<[String; 2]>,
        state: StateSpec,
        #[serde(default)]
        t: f64,
        #[serde(default = "default_stencil")]
        time_stencil: f64,
    },
}

impl TaskBody {
    pub fn kind(&self) -> &'static str {
        match self {
            TaskBody::Validate => "validate",
            TaskBody::Trajectory { .. } => "trajectory",
            TaskBody::Brackets { .. } => "brackets",
            TaskBody::Operators { .. } => "operators",
            TaskBody::Evolve { .. } => "evolve",
            TaskBody::Spectrum { .. } => "spectrum",
            TaskBody::Commutators { .. } => "commutators",
        }
    }
}

/// A task with its resolved identifier.
#[derive(Clone, Debug)]
pub struct Task {
    pub id: String,
    pub tolerance: Option<f64>,
    pub body: TaskBody,
}

/// Everything needed to execute the tasks.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub bundle: GeometryBundle,
    pub functions: BTreeMap<String, SpecialQuadratic>,
    pub tasks: Vec<Task>,
    pub k_factor: f64,
    pub output_dir: Option<PathBuf>,
    pub m_over_hbar: f64,
    pub q_over_hbar: f64,
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn line_column(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Parse a scenario; syntax errors carry line and column, type errors the
/// offending location as well.
pub fn parse_scenario(src: &str) -> Result<ScenarioFile, CliError> {
    toml::from_str(src).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_column(src, s.start));
        CliError::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })
}

fn expr(path: &str, src: &str, n: usize, allow_velocity: bool) -> Result<Expr, CliError> {
    let e = Expr::parse(src).map_err(|err| schema(path, err.to_string()))?;
    for axis in n..3 {
        if e.depends_on(Var::x(axis)) || e.depends_on(Var::v(axis)) {
            return Err(schema(path, format!("uses coordinate {} beyond dimension {n}", axis + 1)));
        }
    }
    if !allow_velocity && (0..3).any(|i| e.depends_on(Var::v(i))) {
        return Err(schema(path, "may depend on t and x only"));
    }
    Ok(e)
}

fn exprs(path: &str, src: &[String], len: usize, n: usize) -> Result<Vec<Expr>, CliError> {
    if src.len() != len {
        return Err(schema(path, format!("expected {len} entries, found {}", src.len())));
    }
    src.iter()
        .enumerate()
        .map(|(k, s)| expr(&format!("{path}[{k}]"), s, n, false))
        .collect()
}

fn constant(path: &str, spec: &Option<ConstantSpec>, default: ScaledScalar) -> Result<ScaledScalar, CliError> {
    let Some(spec) = spec else { return Ok(default) };
    let mut exps = [Rational32::from_integer(0); 3];
    for (k, s) in spec.tag.iter().enumerate() {
        exps[k] = Rational32::from_str(s.trim())
            .map_err(|_| schema(format!("{path}.tag[{k}]"), format!("`{s}` is not a rational exponent")))?;
    }
    Ok(ScaledScalar::new(spec.value, DimTag::new(exps[0], exps[1], exps[2])))
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

pub fn builtin_functions(bundle: &GeometryBundle) -> BTreeMap<String, SpecialQuadratic> {
    let n = bundle.n();
    let mut out = BTreeMap::new();
    out.insert("H0".to_string(), SpecialQuadratic::hamiltonian(bundle));
    for j in 0..n {
        out.insert(format!("x{}", j + 1), SpecialQuadratic::coordinate(n, j));
        out.insert(format!("P{}", j + 1), SpecialQuadratic::momentum(bundle, j));
    }
    out
}

fn check_state(path: &str, s: &StateSpec, n: usize) -> Result<(), CliError> {
    if s.centre.len() != n {
        return Err(schema(format!("{path}.centre"), format!("needs {n} entries")));
    }
    if let Some(k) = &s.momentum {
        if k.len() != n {
            return Err(schema(format!("{path}.momentum"), format!("needs {n} entries")));
        }
    }
    if !(s.width > 0.0) {
        return Err(schema(format!("{path}.width"), "must be positive"));
    }
    Ok(())
}

fn check_names(path: &str, names: &[&String], known: &BTreeMap<String, SpecialQuadratic>) -> Result<(), CliError> {
    for (k, name) in names.iter().enumerate() {
        if !known.contains_key(*name) {
            return Err(schema(format!("{path}[{k}]"), format!("undefined function `{name}`")));
        }
    }
    Ok(())
}

impl ScenarioFile {
    /// Schema checks and assembly into runnable form.
    pub fn build(&self) -> Result<Scenario, CliError> {
        let c = &self.chart;
        let n = c.extent.len();
        if !(1..=3).contains(&n) {
            return Err(schema("chart.extent", "needs between 1 and 3 axes"));
        }
        let extent: Vec<(f64, f64)> = c.extent.iter().map(|e| (e[0], e[1])).collect();
        let chart = FibredChart::new(extent, c.points.clone(), c.time_step)
            .and_then(|ch| ch.with_order(c.fd_order))
            .map_err(|e| schema("chart", e.to_string()))?;

        let m = constant("constants.m", &self.constants.m, ScaledScalar::new(1.0, DimTag::MASS))?;
        let hbar = constant("constants.hbar", &self.constants.hbar, ScaledScalar::new(1.0, DimTag::planck()))?;
        let q = constant("constants.q", &self.constants.q, ScaledScalar::new(1.0, DimTag::charge()))?;

        let g = &self.geometry;
        let metric_src = match &g.metric {
            Some(m) => exprs("geometry.metric", m, n * n, n)?,
            None => SpacelikeMetric::flat(n).components().to_vec(),
        };
        let scaled = rescale_metric(&Tagged::new(metric_src, DimTag::metric()), m, hbar)
            .map_err(|e| schema("constants", e.to_string()))?;
        let metric = SpacelikeMetric::new(n, scaled.field).map_err(|e| schema("geometry.metric", e.to_string()))?;
        let potential = match &g.potential {
            Some(a) => exprs("geometry.potential", a, n + 1, n)?,
            None => vec![Expr::zero(); n + 1],
        };
        let em = match &g.em {
            Some(f) => {
                let raw = exprs("geometry.em", f, (n + 1) * (n + 1), n)?;
                let scaled = rescale_em(&Tagged::new(raw, DimTag::em_field()), q, hbar)
                    .map_err(|e| schema("constants", e.to_string()))?;
                EMField::from_components(n, scaled.field).map_err(|e| schema("geometry.em", e.to_string()))?
            }
            None => EMField::from_potential(&potential),
        };
        let mut grav = SpacetimeConnection::levi_civita(&metric);
        for (k, o) in g.connection.iter().enumerate() {
            let path = format!("geometry.connection[{k}]");
            if o.lam > n || o.mu > n || o.h == 0 || o.h > n {
                return Err(schema(&path, format!("index out of range for dimension {n}")));
            }
            let value = expr(&format!("{path}.value"), &o.value, n, false)?;
            let current = grav.get(o.lam, o.h - 1, o.mu).clone();
            grav.set(o.lam, o.h - 1, o.mu, current + value);
        }
        let bundle = GeometryBundle::new(chart, metric, grav, em, potential).map_err(|e| schema("geometry", e.to_string()))?;

        let mut functions = builtin_functions(&bundle);
        for (name, spec) in &self.functions {
            let path = format!("functions.{name}");
            if functions.contains_key(name) {
                return Err(schema(&path, format!("`{name}` is a built-in function")));
            }
            if !valid_id(name) {
                return Err(schema(&path, "names may use letters, digits, `_` and `-`"));
            }
            let axis = |a: usize| -> Result<usize, CliError> {
                if a == 0 || a > n {
                    Err(schema(format!("{path}.axis"), format!("must lie in 1..={n}")))
                } else {
                    Ok(a - 1)
                }
            };
            let f = match spec {
                FunctionSpec::Hamiltonian => SpecialQuadratic::hamiltonian(&bundle),
                FunctionSpec::Momentum { axis: a } => SpecialQuadratic::momentum(&bundle, axis(*a)?),
                FunctionSpec::Coordinate { axis: a } => SpecialQuadratic::coordinate(n, axis(*a)?),
                FunctionSpec::Spacetime { base } => {
                    SpecialQuadratic::spacetime(n, expr(&format!("{path}.base"), base, n, false)?)
                }
                FunctionSpec::Special { f0, fi, base } => {
                    let f0 = f0.as_deref().map_or(Ok(Expr::zero()), |s| expr(&format!("{path}.f0"), s, n, false))?;
                    let fi = match fi {
                        Some(v) => exprs(&format!("{path}.fi"), v, n, n)?,
                        None => vec![Expr::zero(); n],
                    };
                    let base = base.as_deref().map_or(Ok(Expr::zero()), |s| expr(&format!("{path}.base"), s, n, false))?;
                    SpecialQuadratic::new(f0, fi, base)
                }
            };
            functions.insert(name.clone(), f);
        }

        let mut tasks = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for (k, t) in self.tasks.iter().enumerate() {
            let path = format!("tasks[{k}]");
            let id = t.id.clone().unwrap_or_else(|| format!("{}{}", t.body.kind(), k + 1));
            if !valid_id(&id) {
                return Err(schema(format!("{path}.id"), "ids may use letters, digits, `_` and `-`"));
            }
            if !seen.insert(id.clone()) {
                return Err(schema(format!("{path}.id"), format!("duplicate task id `{id}`")));
            }
            if let Some(tol) = t.tolerance {
                if !(tol > 0.0) {
                    return Err(schema(format!("{path}.tolerance"), "must be positive"));
                }
            }
            match &t.body {
                TaskBody::Validate => {}
                TaskBody::Trajectory { x0, v0, t0, t_end, steps } => {
                    if x0.len() != n || v0.len() != n {
                        return Err(schema(&path, format!("x0 and v0 need {n} entries")));
                    }
                    if *steps == 0 || !(t_end > t0) {
                        return Err(schema(&path, "needs steps >= 1 and t_end > t0"));
                    }
                }
                TaskBody::Brackets { pairs, points } => {
                    let names: Vec<&String> = pairs.iter().flatten().collect();
                    check_names(&format!("{path}.pairs"), &names, &functions)?;
                    if *points == 0 {
                        return Err(schema(format!("{path}.points"), "must be at least 1"));
                    }
                }
                TaskBody::Operators { functions: names, states } => {
                    let names: Vec<&String> = names.iter().collect();
                    check_names(&format!("{path}.functions"), &names, &functions)?;
                    if states.is_empty() {
                        return Err(schema(format!("{path}.states"), "needs at least one state"));
                    }
                    for (s, st) in states.iter().enumerate() {
                        check_state(&format!("{path}.states[{s}]"), st, n)?;
                    }
                }
                TaskBody::Evolve { state, t_start, t_end, steps, dump_every } => {
                    check_state(&format!("{path}.state"), state, n)?;
                    if !(t_end > t_start) {
                        return Err(schema(&path, "needs t_end > t_start"));
                    }
                    if *steps == Some(0) || *dump_every == Some(0) {
                        return Err(schema(&path, "steps and dump_every must be at least 1"));
                    }
                }
                TaskBody::Spectrum { modes, function } => {
                    if *modes == 0 {
                        return Err(schema(format!("{path}.modes"), "must be at least 1"));
                    }
                    if let Some(f) = function {
                        check_names(&format!("{path}.function"), &[f], &functions)?;
                    }
                }
                TaskBody::Commutators { pairs, state, time_stencil, .. } => {
                    let names: Vec<&String> = pairs.iter().flatten().collect();
                    check_names(&format!("{path}.pairs"), &names, &functions)?;
                    check_state(&format!("{path}.state"), state, n)?;
                    if !(*time_stencil > 0.0) {
                        return Err(schema(format!("{path}.time_stencil"), "must be positive"));
                    }
                }
            }
            tasks.push(Task {
                id,
                tolerance: t.tolerance,
                body: t.body.clone(),
            });
        }
        Ok(Scenario {
            bundle,
            functions,
            tasks,
            k_factor: self.k_factor.unwrap_or(0.0),
            output_dir: self.output_dir.clone(),
            m_over_hbar: (m / hbar).value,
            q_over_hbar: (q / hbar).value,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[chart]
extent = [[-1.0, 1.0]]
points = [16]
"#;

    #[test]
    fn minimal_scenario_has_defaults() {
        let s = parse_scenario(MINIMAL).unwrap().build().unwrap();
        assert_eq!(s.k_factor, 0.0);
        assert_eq!((s.m_over_hbar, s.q_over_hbar), (1.0, 1.0));
        assert!(s.functions.contains_key("H0") && s.functions.contains_key("P1"));
        assert!(s.tasks.is_empty());
    }

    #[test]
    fn parse_errors_report_position() {
        let err = parse_scenario("[chart]\nextent = [[-1.0, 1.0]\npoints = [16]\n").unwrap_err();
        match err {
            CliError::Parse { line, .. } => assert!(line >= 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn metric_is_rescaled_by_mass_over_hbar() {
        let src = format!("{MINIMAL}\n[constants]\nm = {{ value = 2.0, tag = [\"0\", \"0\", \"1\"] }}\n");
        let s = parse_scenario(&src).unwrap().build().unwrap();
        assert_eq!(s.bundle.metric.g(0, 0).as_const(), Some(2.0));
        let bad = format!("{MINIMAL}\n[constants]\nm = {{ value = 2.0, tag = [\"0\", \"1\", \"0\"] }}\n");
        assert!(matches!(parse_scenario(&bad).unwrap().build(), Err(CliError::Schema { .. })));
    }

    #[test]
    fn undefined_function_names_the_identifier() {
        let src = format!("{MINIMAL}\n[[tasks]]\nkind = \"brackets\"\npairs = [[\"H0\", \"Q7\"]]\n");
        match parse_scenario(&src).unwrap().build() {
            Err(CliError::Schema { path, message }) => {
                assert_eq!(path, "tasks[0].pairs[1]");
                assert!(message.contains("Q7"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn expressions_respect_the_dimension() {
        let src = format!("{MINIMAL}\n[geometry]\npotential = [\"x2\", \"0\"]\n");
        match parse_scenario(&src).unwrap().build() {
            Err(CliError::Schema { path, .. }) => assert_eq!(path, "geometry.potential[0]"),
            other => panic!("{other:?}"),
        }
    }
}
