//! The TOML run configuration: schema, validation and translation into
//! library objects. Everything here runs before any computation starts.

use serde::Deserialize;
use stochline::driver::{parse_driver_formulas, smooth_driver, uniform_mesh, FbmSpec};
use stochline::lab::LabTolerances;
use stochline::nondeg::BoxRegion;
use stochline::reconstruct::{Cleanliness, RouteOptions};
use stochline::{Expression, FrameOptions, GridSpec, OneForm, SolverOptions, VarNames, VectorField, ZeroTolerances};

/// A configuration problem, located by the dotted path of the offending key.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config error at `{path}`: {message}")]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl SchemaError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        SchemaError { path: path.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub driver: Option<DriverConfig>,
    pub form: Option<FormConfig>,
    pub forms: Option<Vec<FormConfig>>,
    #[serde(default)]
    pub frame: FrameConfig,
    pub criterion: Option<CriterionConfig>,
    pub mc: Option<McConfig>,
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// State dimension; inferred from the fields when absent.
    pub n: Option<usize>,
    /// Number of driving fields; inferred when absent.
    pub d: Option<usize>,
    /// Coordinate names; defaults to `x, y, z` / `x1..xn`.
    pub variables: Option<Vec<String>>,
    /// One list of component strings per driving field.
    pub fields: Vec<Vec<String>>,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriverConfig {
    #[serde(alias = "H")]
    pub hurst: f64,
    #[serde(alias = "T")]
    pub horizon: f64,
    pub steps: usize,
    pub substeps: usize,
    pub seed: u64,
    /// Deterministic driver `w(t)`, one formula in `t` per field.
    pub formulas: Option<Vec<String>>,
}

impl Default for DriverConfig {
    fn default() -> Self {
        DriverConfig { hurst: 0.5, horizon: 1.0, steps: 1024, substeps: 4, seed: 0, formulas: None }
    }
}

/// A one-form, given directly or by a constructor.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FormConfig {
    Components { components: Vec<String> },
    Exact { f: String },
    Step2 { c1: String, c2: String },
    General { seeds: Vec<String> },
    EllipticBump { lower: Vec<f64>, upper: Vec<f64> },
    Sard {
        #[serde(default = "zero_string")]
        f: String,
        #[serde(default = "zero_string")]
        g: String,
        lambdas: Option<Vec<f64>>,
        #[serde(default = "default_sard_side")]
        side: usize,
    },
}

fn zero_string() -> String {
    "0".into()
}

fn default_sard_side() -> usize {
    12
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameConfig {
    pub max_step: usize,
    pub rank_tol: f64,
    pub base_point: Option<Vec<f64>>,
}

impl Default for FrameConfig {
    fn default() -> Self {
        let d = FrameOptions::default();
        FrameConfig { max_step: d.max_step, rank_tol: d.rank_tol, base_point: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    Elliptic,
    General,
    Step2,
    Heisenberg,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionConfig {
    pub kind: CriterionKind,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    /// Half-width of the cube `[-half, half]ⁿ` when no bounds are given.
    #[serde(default = "one")]
    pub half: f64,
    #[serde(default = "default_side")]
    pub side: usize,
    #[serde(default)]
    pub tolerances: ZeroTolerances,
    /// Coefficients `c₁(x, y)`, `c₂(x, y)` for the Heisenberg test.
    pub c1: Option<String>,
    pub c2: Option<String>,
}

fn one() -> f64 {
    1.0
}

fn default_side() -> usize {
    24
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub replicates: u64,
    /// Compute kernel sup-norms.
    pub kernel: bool,
    pub atom_tol: f64,
    pub kernel_tol: f64,
    /// Largest kernel-vanishing rate that still counts as non-degenerate.
    pub max_vanishing_rate: f64,
    /// Boxes the path must enter in order.
    pub event: Vec<BoxRegion>,
    /// Run the iterated integral of `df_1, …, df_m` instead of the forms.
    pub exact_functions: Option<Vec<String>>,
}

impl Default for McConfig {
    fn default() -> Self {
        let t = LabTolerances::default();
        McConfig {
            replicates: 10_000,
            kernel: true,
            atom_tol: t.atom_tol,
            kernel_tol: t.kernel_tol,
            max_vanishing_rate: 0.01,
            event: Vec::new(),
            exact_functions: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    Elliptic,
    Step2,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub epsilon: f64,
    pub delta: f64,
    #[serde(default = "elliptic_regime")]
    pub regime: RegimeKind,
    /// Step-two regime: `f`, `g` of the λ-selection polynomial.
    pub f: Option<String>,
    pub g: Option<String>,
    pub lambdas: Option<Vec<f64>>,
    pub sard_side: Option<usize>,
    #[serde(default)]
    pub clean: Cleanliness,
    #[serde(default)]
    pub search: RouteOptions,
    /// Brownian replicates when the driver has no formulas.
    #[serde(default = "one_replicate")]
    pub replicates: u64,
}

fn elliptic_regime() -> RegimeKind {
    RegimeKind::Elliptic
}

fn one_replicate() -> u64 {
    1
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: Option<String>,
}

/// Parse and validate a configuration document.
pub fn parse_config(text: &str) -> Result<Prepared, SchemaError> {
    let de = toml::Deserializer::parse(text).map_err(|e| SchemaError::new(".", toml_message(&e, text)))?;
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        SchemaError::new(path, toml_message(&inner, text))
    })?;
    Prepared::new(config)
}

fn toml_message(e: &toml::de::Error, text: &str) -> String {
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            format!("{} (line {line})", e.message().trim_end())
        }
        None => e.message().trim_end().to_string(),
    }
}

/// A validated configuration with every DSL string parsed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub names: VarNames,
    pub fields: Vec<VectorField>,
    pub x0: Vec<f64>,
    pub forms: Vec<FormPlan>,
    pub driver_formulas: Option<Vec<Expression>>,
    pub exact_functions: Option<Vec<Expression>>,
    pub heisenberg_coefficients: Option<(Expression, Expression)>,
    pub sard_fg: Option<(Expression, Expression)>,
}

/// A form ready to be built once the system is known.
#[derive(Debug, Clone)]
pub enum FormPlan {
    Components(OneForm),
    Exact(Expression),
    Step2 { c1: Expression, c2: Expression },
    General { seeds: Vec<Expression> },
    EllipticBump(BoxRegion),
    Sard { f: Expression, g: Expression, lambdas: Option<Vec<f64>>, side: usize },
}

fn parse_expr(src: &str, names: &VarNames, n: usize, path: &str) -> Result<Expression, SchemaError> {
    let e = Expression::parse_with(src, names).map_err(|err| SchemaError::new(path, format!("`{src}`: {err}")))?;
    if e.arity() > n {
        return Err(SchemaError::new(path, format!("`{src}` uses coordinate {} but n = {n}", e.arity())));
    }
    Ok(e)
}

fn check_box(lower: &[f64], upper: &[f64], n: usize, path: &str) -> Result<(), SchemaError> {
    if lower.len() != n || upper.len() != n {
        return Err(SchemaError::new(path, format!("bounds need {n} entries each")));
    }
    if lower.iter().zip(upper).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
        return Err(SchemaError::new(path, "need finite lower < upper on every axis"));
    }
    Ok(())
}

impl Prepared {
    fn new(config: RunConfig) -> Result<Self, SchemaError> {
        let sys = &config.system;
        if sys.fields.is_empty() {
            return Err(SchemaError::new("system.fields", "at least one field is required"));
        }
        let n = sys.fields[0].len();
        if n == 0 {
            return Err(SchemaError::new("system.fields[0]", "a field needs at least one component"));
        }
        if let Some(k) = sys.fields.iter().position(|f| f.len() != n) {
            return Err(SchemaError::new(format!("system.fields[{k}]"), format!("expected {n} components like the first field")));
        }
        if sys.n.is_some_and(|v| v != n) {
            return Err(SchemaError::new("system.n", format!("fields have {n} components")));
        }
        if sys.d.is_some_and(|v| v != sys.fields.len()) {
            return Err(SchemaError::new("system.d", format!("{} fields are given", sys.fields.len())));
        }
        if sys.x0.len() != n || sys.x0.iter().any(|v| !v.is_finite()) {
            return Err(SchemaError::new("system.x0", format!("need {n} finite entries")));
        }
        let names = match &sys.variables {
            None => VarNames::Default,
            Some(v) if v.len() == n => VarNames::custom(v),
            Some(_) => return Err(SchemaError::new("system.variables", format!("need {n} names"))),
        };
        let mut fields = Vec::with_capacity(sys.fields.len());
        for (a, comps) in sys.fields.iter().enumerate() {
            let parsed = comps
                .iter()
                .enumerate()
                .map(|(i, s)| parse_expr(s, &names, n, &format!("system.fields[{a}][{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
            fields.push(VectorField::new(parsed));
        }
        let d = fields.len();

        let form_configs: Vec<(String, &FormConfig)> = match (&config.form, &config.forms) {
            (Some(_), Some(_)) => return Err(SchemaError::new("forms", "give either [form] or [[forms]], not both")),
            (Some(f), None) => vec![("form".to_string(), f)],
            (None, Some(list)) => list.iter().enumerate().map(|(k, f)| (format!("forms[{k}]"), f)).collect(),
            (None, None) => Vec::new(),
        };
        let mut forms = Vec::with_capacity(form_configs.len());
        for (path, fc) in form_configs {
            forms.push(plan_form(fc, &names, n, d, &path)?);
        }

        let mut driver_formulas = None;
        if let Some(dc) = &config.driver {
            let probe = FbmSpec { hurst: dc.hurst, horizon: dc.horizon, steps: dc.steps, seed: dc.seed, dim: d };
            if let Err(e) = probe.validate() {
                return Err(SchemaError::new("driver", e.to_string()));
            }
            if dc.substeps == 0 {
                return Err(SchemaError::new("driver.substeps", "must be at least 1"));
            }
            if let Some(fs) = &dc.formulas {
                if fs.len() != d {
                    return Err(SchemaError::new("driver.formulas", format!("need one formula per field ({d})")));
                }
                let parsed = parse_driver_formulas(fs).map_err(|e| SchemaError::new("driver.formulas", e.to_string()))?;
                smooth_driver(&parsed, uniform_mesh(dc.horizon, dc.steps)).map_err(|e| SchemaError::new("driver.formulas", e.to_string()))?;
                driver_formulas = Some(parsed);
            }
        }

        if let Some(fc) = &config.frame.base_point {
            if fc.len() != n {
                return Err(SchemaError::new("frame.base_point", format!("need {n} entries")));
            }
        }

        let mut heisenberg_coefficients = None;
        if let Some(cc) = &config.criterion {
            let dim = if cc.kind == CriterionKind::Heisenberg { 2 } else { n };
            match (&cc.lower, &cc.upper) {
                (Some(lo), Some(hi)) => check_box(lo, hi, dim, "criterion.lower")?,
                (None, None) => {
                    if !(cc.half > 0.0 && cc.half.is_finite()) {
                        return Err(SchemaError::new("criterion.half", "must be positive"));
                    }
                }
                _ => return Err(SchemaError::new("criterion.lower", "give both lower and upper, or neither")),
            }
            if cc.side == 0 {
                return Err(SchemaError::new("criterion.side", "must be at least 1"));
            }
            if cc.kind == CriterionKind::Heisenberg {
                let names2 = VarNames::Default;
                let get = |key: &str, v: &Option<String>| -> Result<Expression, SchemaError> {
                    let src = v.as_deref().ok_or_else(|| SchemaError::new(format!("criterion.{key}"), "required for kind = \"heisenberg\""))?;
                    parse_expr(src, &names2, 2, &format!("criterion.{key}"))
                };
                heisenberg_coefficients = Some((get("c1", &cc.c1)?, get("c2", &cc.c2)?));
            } else if cc.c1.is_some() || cc.c2.is_some() {
                return Err(SchemaError::new("criterion.c1", "only used with kind = \"heisenberg\""));
            }
            if cc.kind == CriterionKind::Step2 && (n != 3 || d != 2) {
                return Err(SchemaError::new("criterion.kind", "the step-two test needs n = 3 and two fields"));
            }
        }

        let mut exact_functions = None;
        if let Some(mc) = &config.mc {
            if mc.replicates == 0 {
                return Err(SchemaError::new("mc.replicates", "must be at least 1"));
            }
            for (k, r) in mc.event.iter().enumerate() {
                check_box(&r.lower, &r.upper, n, &format!("mc.event[{k}]"))?;
            }
            if !(mc.atom_tol >= 0.0) || !(mc.kernel_tol >= 0.0) {
                return Err(SchemaError::new("mc", "tolerances must be non-negative"));
            }
            if let Some(fs) = &mc.exact_functions {
                if fs.is_empty() {
                    return Err(SchemaError::new("mc.exact_functions", "give at least one function"));
                }
                let parsed = fs
                    .iter()
                    .enumerate()
                    .map(|(k, s)| parse_expr(s, &names, n, &format!("mc.exact_functions[{k}]")))
                    .collect::<Result<Vec<_>, _>>()?;
                exact_functions = Some(parsed);
            }
        }

        let mut sard_fg = None;
        if let Some(g) = &config.grid {
            check_box(&g.lower, &g.upper, n, "grid.lower")?;
            if !(g.epsilon > g.delta && g.delta > 0.0) {
                return Err(SchemaError::new("grid.epsilon", "need epsilon > delta > 0"));
            }
            if g.replicates == 0 {
                return Err(SchemaError::new("grid.replicates", "must be at least 1"));
            }
            match g.regime {
                RegimeKind::Step2 => {
                    if n != 3 || d != 2 {
                        return Err(SchemaError::new("grid.regime", "the step-two regime needs n = 3 and two fields"));
                    }
                    let f = parse_expr(g.f.as_deref().unwrap_or("0"), &names, n, "grid.f")?;
                    let gg = parse_expr(g.g.as_deref().unwrap_or("0"), &names, n, "grid.g")?;
                    sard_fg = Some((f, gg));
                }
                RegimeKind::Elliptic => {
                    if g.f.is_some() || g.g.is_some() || g.lambdas.is_some() || g.sard_side.is_some() {
                        return Err(SchemaError::new("grid.regime", "f, g, lambdas and sard_side belong to the step-two regime"));
                    }
                }
            }
        }

        Ok(Prepared {
            x0: sys.x0.clone(),
            config,
            names,
            fields,
            forms,
            driver_formulas,
            exact_functions,
            heisenberg_coefficients,
            sard_fg,
        })
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn n_drivers(&self) -> usize {
        self.fields.len()
    }

    pub fn frame_options(&self) -> FrameOptions {
        FrameOptions { max_step: self.config.frame.max_step, rank_tol: self.config.frame.rank_tol, ..FrameOptions::default() }
    }

    pub fn frame_base(&self) -> Vec<f64> {
        self.config.frame.base_point.clone().unwrap_or_else(|| self.x0.clone())
    }

    pub fn driver(&self, section_for: &str) -> Result<&DriverConfig, SchemaError> {
        self.config.driver.as_ref().ok_or_else(|| SchemaError::new("driver", format!("section required by `{section_for}`")))
    }

    pub fn solver(&self, driver: &DriverConfig, jacobian: bool) -> SolverOptions {
        SolverOptions { substeps: driver.substeps, jacobian, ..SolverOptions::default() }
    }

    /// The criterion grid: explicit bounds or the cube `[-half, half]`.
    pub fn criterion_grid(&self, cc: &CriterionConfig) -> GridSpec {
        let dim = if cc.kind == CriterionKind::Heisenberg { 2 } else { self.dim() };
        match (&cc.lower, &cc.upper) {
            (Some(lo), Some(hi)) => GridSpec::new(lo.clone(), hi.clone(), cc.side),
            _ => GridSpec::cube(dim, cc.half, cc.side),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        self.config.driver.as_ref().map(|d| d.seed)
    }
}

fn plan_form(fc: &FormConfig, names: &VarNames, n: usize, d: usize, path: &str) -> Result<FormPlan, SchemaError> {
    Ok(match fc {
        FormConfig::Components { components } => {
            if components.len() != n {
                return Err(SchemaError::new(format!("{path}.components"), format!("need {n} components")));
            }
            let cs = components
                .iter()
                .enumerate()
                .map(|(i, s)| parse_expr(s, names, n, &format!("{path}.components[{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
            FormPlan::Components(OneForm::new(cs))
        }
        FormConfig::Exact { f } => FormPlan::Exact(parse_expr(f, names, n, &format!("{path}.f"))?),
        FormConfig::Step2 { c1, c2 } => {
            if n != 3 || d != 2 {
                return Err(SchemaError::new(format!("{path}.kind"), "the step-two constructor needs n = 3 and two fields"));
            }
            FormPlan::Step2 { c1: parse_expr(c1, names, n, &format!("{path}.c1"))?, c2: parse_expr(c2, names, n, &format!("{path}.c2"))? }
        }
        FormConfig::General { seeds } => {
            if seeds.len() != d {
                return Err(SchemaError::new(format!("{path}.seeds"), format!("need one seed per field ({d})")));
            }
            let seeds = seeds
                .iter()
                .enumerate()
                .map(|(i, s)| parse_expr(s, names, n, &format!("{path}.seeds[{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
            FormPlan::General { seeds }
        }
        FormConfig::EllipticBump { lower, upper } => {
            check_box(lower, upper, n, &format!("{path}.lower"))?;
            if n < 2 {
                return Err(SchemaError::new(format!("{path}.kind"), "the elliptic bump needs n ≥ 2"));
            }
            FormPlan::EllipticBump(BoxRegion::new(lower.clone(), upper.clone()))
        }
        FormConfig::Sard { f, g, lambdas, side } => {
            if n != 3 || d != 2 {
                return Err(SchemaError::new(format!("{path}.kind"), "the λ-selection needs n = 3 and two fields"));
            }
            if let Some(ls) = lambdas {
                if ls.is_empty() || ls.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                    return Err(SchemaError::new(format!("{path}.lambdas"), "candidates must be positive and finite"));
                }
            }
            if *side == 0 {
                return Err(SchemaError::new(format!("{path}.side"), "must be at least 1"));
            }
            FormPlan::Sard {
                f: parse_expr(f, names, n, &format!("{path}.f"))?,
                g: parse_expr(g, names, n, &format!("{path}.g"))?,
                lambdas: lambdas.clone(),
                side: *side,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEIS: &str = r#"
[system]
fields = [["1", "0", "-y"], ["0", "1", "x"]]
x0 = [0.0, 0.0, 0.0]
"#;

    #[test]
    fn minimal_config_parses() {
        let p = parse_config(HEIS).unwrap();
        assert_eq!(p.dim(), 3);
        assert_eq!(p.n_drivers(), 2);
        assert!(p.forms.is_empty());
    }

    #[test]
    fn missing_system_is_reported() {
        let err = parse_config("[driver]\nsteps = 8\n").unwrap_err();
        assert!(err.message.contains("system"), "{err}");
    }

    #[test]
    fn unknown_keys_are_located() {
        let err = parse_config(&format!("{HEIS}\n[driver]\nsteps = 8\nsped = 3\n")).unwrap_err();
        assert_eq!(err.path, "driver.sped");
        assert!(err.message.contains("unknown field"), "{err}");
        let err = parse_config(&format!("{HEIS}\n[form]\nkind = \"exact\"\nf = \"x\"\nextra = 1\n")).unwrap_err();
        assert!(err.path.starts_with("form") && err.message.contains("extra"), "{err}");
        let err = parse_config(&format!("{HEIS}\n[criterion]\nkind = \"general\"\n[criterion.tolerances]\npoint_tl = 1\n")).unwrap_err();
        assert_eq!(err.path, "criterion.tolerances.point_tl");
    }

    #[test]
    fn bad_expressions_name_their_key() {
        let bad = HEIS.replace("\"-y\"", "\"-y +* 2\"");
        let err = parse_config(&bad).unwrap_err();
        assert_eq!(err.path, "system.fields[0][2]");
        let err = parse_config(&format!("{HEIS}\n[[forms]]\nkind = \"exact\"\nf = \"x\"\n[[forms]]\nkind = \"exact\"\nf = \"w\"\n")).unwrap_err();
        assert_eq!(err.path, "forms[1].f");
        let err = parse_config(&format!("{HEIS}\n[form]\nkind = \"components\"\ncomponents = [\"x4\", \"0\", \"0\"]\n")).unwrap_err();
        assert_eq!(err.path, "form.components[0]");
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let err = parse_config("[system]\nfields = [[\"1\", \"0\"], [\"0\"]]\nx0 = [0.0, 0.0]\n").unwrap_err();
        assert_eq!(err.path, "system.fields[1]");
        let err = parse_config("[system]\nfields = [[\"1\"]]\nx0 = [0.0, 0.0]\n").unwrap_err();
        assert_eq!(err.path, "system.x0");
        let err = parse_config(&format!("{HEIS}\n[driver]\nH = 1.5\n")).unwrap_err();
        assert_eq!(err.path, "driver");
    }

    #[test]
    fn aliases_and_custom_names() {
        let text = "[system]\nvariables = [\"u\", \"v\"]\nfields = [[\"1\", \"u\"]]\nx0 = [0.0, 1.0]\n[driver]\nH = 0.75\nT = 2.0\nsteps = 16\n";
        let p = parse_config(text).unwrap();
        let dc = p.config.driver.as_ref().unwrap();
        assert_eq!((dc.hurst, dc.horizon, dc.steps, dc.substeps), (0.75, 2.0, 16, 4));
        assert_eq!(p.fields[0].component(1).eval(&[3.0, 0.0]).unwrap(), 3.0);
    }
}
