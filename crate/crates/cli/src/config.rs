//! Scenario configuration: a TOML document walked by hand so that every
//! problem (unknown key, wrong type, violated invariant) is reported at once.

use std::fmt;

use gld_core::hdg::NewtonConfig;
use gld_core::mesh::{EdgeSet, Side};
use gld_core::model::{ComponentParams, MaterialParams, Property, VACUUM_PERMITTIVITY};
use gld_core::stepper::EnergyCheck;
use toml::{Table, Value};

use crate::signal::BiasSignal;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioKind {
    ConvergenceTime,
    ConvergenceSpace,
    EnergyStability,
    Hysteresis,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::ConvergenceTime,
        ScenarioKind::ConvergenceSpace,
        ScenarioKind::EnergyStability,
        ScenarioKind::Hysteresis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::ConvergenceTime => "convergence_time",
            ScenarioKind::ConvergenceSpace => "convergence_space",
            ScenarioKind::EnergyStability => "energy_stability",
            ScenarioKind::Hysteresis => "hysteresis",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Manufactured-solution scenarios on the unit square.
    pub fn is_convergence(self) -> bool {
        matches!(self, ScenarioKind::ConvergenceTime | ScenarioKind::ConvergenceSpace)
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeshConfig {
    /// Domain extent in meters.
    pub width: f64,
    pub height: f64,
    pub nx: usize,
    pub ny: usize,
    /// Rows of a convergence study (uniform refinements or time-step halvings).
    pub levels: usize,
    pub adaptive: bool,
    /// Share of cells flagged per adaptive refinement.
    pub fraction: f64,
    /// Refine after every `refine_every`-th step (and the initial state).
    pub refine_every: usize,
    /// Cells at this refinement level are no longer split.
    pub max_level: u32,
    pub dirichlet: EdgeSet,
    pub neumann: EdgeSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscretizationConfig {
    pub degree: usize,
    /// Final time in seconds.
    pub final_time: f64,
    pub steps: usize,
    pub newton: NewtonConfig,
    pub energy_check: EnergyCheck,
}

/// Landau coefficients of the manufactured problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ManufacturedConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialPolarization {
    Zero,
    Uniform([f64; 2]),
    /// `value` for `x1 <= position`, `-value` beyond it.
    Split {
        value: [f64; 2],
        position: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub directory: String,
    /// Times (seconds) at which VTK snapshots are written; the nearest step is used.
    pub vtk_times: Vec<f64>,
    /// Write a snapshot every this many steps (0 disables).
    pub vtk_every: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub mesh: MeshConfig,
    pub discretization: DiscretizationConfig,
    /// SI material constants.
    pub material: MaterialParams,
    pub manufactured: ManufacturedConfig,
    pub initial: InitialPolarization,
    pub signal: BiasSignal,
    /// Side carrying the bias; the other Dirichlet sides are grounded.
    pub bias_side: Side,
    pub output: OutputConfig,
}

/// Every problem found in a configuration document.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} configuration error(s):", self.0.len())?;
        for e in &self.0 {
            write!(f, "\n  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

/// Default viscosity of the monolayer presets, in ohm meters.
pub const MONOLAYER_VISCOSITY: f64 = 20.0;

impl ScenarioConfig {
    /// Defaults of a scenario before any document is applied.
    pub fn defaults(kind: ScenarioKind) -> Self {
        let monolayer_mesh = MeshConfig {
            width: 80e-9,
            height: 40e-9,
            nx: 16,
            ny: 8,
            levels: 1,
            adaptive: false,
            fraction: 0.01,
            refine_every: 5,
            max_level: 3,
            dirichlet: EdgeSet::TOP | EdgeSet::BOTTOM,
            neumann: EdgeSet::LEFT | EdgeSet::RIGHT,
        };
        let unit_mesh = MeshConfig {
            width: 1.0,
            height: 1.0,
            nx: 4,
            ny: 4,
            levels: 4,
            ..monolayer_mesh.clone()
        };
        let newton = NewtonConfig::default();
        let ms = gld_core::verification::ManufacturedSolution::default();
        let base = ScenarioConfig {
            scenario: kind,
            mesh: monolayer_mesh,
            discretization: DiscretizationConfig {
                degree: 2,
                final_time: 160e-9,
                steps: 1000,
                newton,
                energy_check: EnergyCheck::default(),
            },
            material: MaterialParams::monolayer(MONOLAYER_VISCOSITY),
            manufactured: ManufacturedConfig {
                alpha: ms.alpha,
                beta: ms.beta,
                gamma: ms.gamma,
            },
            initial: InitialPolarization::Split {
                value: [0.1, 0.1],
                position: 40e-9,
            },
            signal: BiasSignal::zero(),
            bias_side: Side::Top,
            output: OutputConfig {
                directory: format!("output/{}", kind.name()),
                vtk_times: Vec::new(),
                vtk_every: 0,
            },
        };
        match kind {
            ScenarioKind::ConvergenceTime => ScenarioConfig {
                mesh: MeshConfig {
                    nx: 32,
                    ny: 32,
                    ..unit_mesh
                },
                discretization: DiscretizationConfig {
                    degree: 1,
                    final_time: 0.1,
                    steps: 1,
                    ..base.discretization.clone()
                },
                ..base
            },
            ScenarioKind::ConvergenceSpace => ScenarioConfig {
                mesh: unit_mesh,
                discretization: DiscretizationConfig {
                    degree: 1,
                    final_time: 0.1,
                    steps: 1,
                    ..base.discretization.clone()
                },
                ..base
            },
            ScenarioKind::EnergyStability => ScenarioConfig {
                output: OutputConfig {
                    vtk_times: vec![80e-9, 160e-9],
                    ..base.output.clone()
                },
                ..base
            },
            ScenarioKind::Hysteresis => ScenarioConfig {
                mesh: MeshConfig {
                    adaptive: true,
                    max_level: 1,
                    ..base.mesh.clone()
                },
                discretization: DiscretizationConfig {
                    degree: 1,
                    final_time: 120e-9,
                    steps: 750,
                    energy_check: EnergyCheck {
                        enabled: false,
                        ..EnergyCheck::default()
                    },
                    ..base.discretization.clone()
                },
                signal: BiasSignal::triangle(),
                ..base
            },
        }
    }

    pub fn time_step(&self) -> f64 {
        self.discretization.final_time / self.discretization.steps as f64
    }
}

struct Walker {
    errors: Vec<String>,
}

impl Walker {
    fn table<'a>(&mut self, parent: &'a Table, key: &str, path: &str) -> Option<&'a Table> {
        match parent.get(key) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(other) => {
                self.errors
                    .push(format!("{path}: expected a table, found {}", other.type_str()));
                None
            }
        }
    }

    fn unknown(&mut self, t: &Table, allowed: &[&str], path: &str) {
        for k in t.keys() {
            if !allowed.contains(&k.as_str()) {
                let full = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                self.errors.push(format!("{full}: unknown key"));
            }
        }
    }

    fn float(&mut self, t: &Table, key: &str, path: &str, target: &mut f64) {
        match t.get(key) {
            None => {}
            Some(Value::Float(v)) => *target = *v,
            Some(Value::Integer(v)) => *target = *v as f64,
            Some(other) => self
                .errors
                .push(format!("{path}.{key}: expected a number, found {}", other.type_str())),
        }
    }

    fn uint(&mut self, t: &Table, key: &str, path: &str, target: &mut usize) {
        match t.get(key) {
            None => {}
            Some(Value::Integer(v)) if *v >= 0 => *target = *v as usize,
            Some(Value::Integer(v)) => self.errors.push(format!("{path}.{key}: must be nonnegative, got {v}")),
            Some(other) => self
                .errors
                .push(format!("{path}.{key}: expected an integer, found {}", other.type_str())),
        }
    }

    fn boolean(&mut self, t: &Table, key: &str, path: &str, target: &mut bool) {
        match t.get(key) {
            None => {}
            Some(Value::Boolean(v)) => *target = *v,
            Some(other) => self
                .errors
                .push(format!("{path}.{key}: expected a boolean, found {}", other.type_str())),
        }
    }

    fn string<'a>(&mut self, t: &'a Table, key: &str, path: &str) -> Option<&'a str> {
        match t.get(key) {
            None => None,
            Some(Value::String(s)) => Some(s),
            Some(other) => {
                self.errors
                    .push(format!("{path}.{key}: expected a string, found {}", other.type_str()));
                None
            }
        }
    }

    fn floats(&mut self, t: &Table, key: &str, path: &str) -> Option<Vec<f64>> {
        let arr = match t.get(key) {
            None => return None,
            Some(Value::Array(a)) => a,
            Some(other) => {
                self.errors
                    .push(format!("{path}.{key}: expected an array, found {}", other.type_str()));
                return None;
            }
        };
        let mut out = Vec::with_capacity(arr.len());
        for (i, v) in arr.iter().enumerate() {
            match v {
                Value::Float(x) => out.push(*x),
                Value::Integer(x) => out.push(*x as f64),
                other => {
                    self.errors.push(format!(
                        "{path}.{key}[{i}]: expected a number, found {}",
                        other.type_str()
                    ));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn pair(&mut self, t: &Table, key: &str, path: &str, target: &mut [f64; 2]) {
        match t.get(key) {
            Some(Value::Float(_)) | Some(Value::Integer(_)) => {
                let mut v = 0.0;
                self.float(t, key, path, &mut v);
                *target = [v, v];
            }
            Some(_) => {
                if let Some(v) = self.floats(t, key, path) {
                    if v.len() == 2 {
                        *target = [v[0], v[1]];
                    } else {
                        self.errors.push(format!(
                            "{path}.{key}: expected a number or two numbers, got {}",
                            v.len()
                        ));
                    }
                }
            }
            None => {}
        }
    }

    fn edges(&mut self, t: &Table, key: &str, path: &str, target: &mut EdgeSet) {
        let arr = match t.get(key) {
            None => return,
            Some(Value::Array(a)) => a,
            Some(other) => {
                self.errors.push(format!(
                    "{path}.{key}: expected an array of side names, found {}",
                    other.type_str()
                ));
                return;
            }
        };
        let mut set = EdgeSet::NONE;
        for v in arr {
            match v.as_str().and_then(parse_side) {
                Some(s) => set = set | EdgeSet::of(s),
                None => self
                    .errors
                    .push(format!("{path}.{key}: {v} is not one of left, right, bottom, top")),
            }
        }
        *target = set;
    }
}

fn parse_side(s: &str) -> Option<Side> {
    Side::ALL.into_iter().find(|side| side.name() == s)
}

fn parse_property(s: &str) -> Option<Property> {
    match s {
        "ferroelectric" => Some(Property::Ferroelectric),
        "dielectric" => Some(Property::Dielectric),
        _ => None,
    }
}

const COMPONENT_KEYS: [&str; 6] = ["alpha", "beta", "gamma", "g", "rho_v", "property"];

fn read_component(w: &mut Walker, t: &Table, path: &str, c: &mut ComponentParams) {
    w.float(t, "alpha", path, &mut c.alpha);
    w.float(t, "beta", path, &mut c.beta);
    w.float(t, "gamma", path, &mut c.gamma);
    w.float(t, "g", path, &mut c.g);
    w.float(t, "rho_v", path, &mut c.rho_v);
    if let Some(p) = w.string(t, "property", path) {
        match parse_property(p) {
            Some(p) => c.property = p,
            None => w.errors.push(format!(
                "{path}.property: expected ferroelectric or dielectric, got {p:?}"
            )),
        }
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigErrors> {
    let root: Table = toml::from_str(text).map_err(|e| ConfigErrors(vec![format!("syntax: {}", e.message())]))?;
    let mut w = Walker { errors: Vec::new() };
    w.unknown(
        &root,
        &[
            "scenario",
            "mesh",
            "discretization",
            "material",
            "manufactured",
            "initial",
            "signal",
            "output",
        ],
        "",
    );
    let kind = match root.get("scenario") {
        None => ScenarioKind::EnergyStability,
        Some(Value::String(s)) => ScenarioKind::parse(s).unwrap_or_else(|| {
            w.errors.push(format!(
                "scenario: {s:?} is not one of convergence_time, convergence_space, energy_stability, hysteresis"
            ));
            ScenarioKind::EnergyStability
        }),
        Some(other) => {
            w.errors
                .push(format!("scenario: expected a string, found {}", other.type_str()));
            ScenarioKind::EnergyStability
        }
    };
    let mut cfg = ScenarioConfig::defaults(kind);

    if let Some(t) = w.table(&root, "mesh", "mesh") {
        let p = "mesh";
        w.unknown(
            t,
            &[
                "width",
                "height",
                "nx",
                "ny",
                "levels",
                "adaptive",
                "fraction",
                "refine_every",
                "max_level",
                "dirichlet",
                "neumann",
            ],
            p,
        );
        let m = &mut cfg.mesh;
        w.float(t, "width", p, &mut m.width);
        w.float(t, "height", p, &mut m.height);
        w.uint(t, "nx", p, &mut m.nx);
        w.uint(t, "ny", p, &mut m.ny);
        w.uint(t, "levels", p, &mut m.levels);
        w.boolean(t, "adaptive", p, &mut m.adaptive);
        w.float(t, "fraction", p, &mut m.fraction);
        w.uint(t, "refine_every", p, &mut m.refine_every);
        let mut ml = m.max_level as usize;
        w.uint(t, "max_level", p, &mut ml);
        m.max_level = ml.min(u32::MAX as usize) as u32;
        w.edges(t, "dirichlet", p, &mut m.dirichlet);
        w.edges(t, "neumann", p, &mut m.neumann);
    }

    if let Some(t) = w.table(&root, "discretization", "discretization") {
        let p = "discretization";
        w.unknown(t, &["degree", "final_time", "steps", "newton", "energy_check"], p);
        let d = &mut cfg.discretization;
        w.uint(t, "degree", p, &mut d.degree);
        w.float(t, "final_time", p, &mut d.final_time);
        w.uint(t, "steps", p, &mut d.steps);
        if let Some(n) = w.table(t, "newton", "discretization.newton") {
            let p = "discretization.newton";
            w.unknown(n, &["abs_tol", "rel_tol", "max_iter", "max_halvings"], p);
            w.float(n, "abs_tol", p, &mut d.newton.abs_tol);
            w.float(n, "rel_tol", p, &mut d.newton.rel_tol);
            w.uint(n, "max_iter", p, &mut d.newton.max_iter);
            w.uint(n, "max_halvings", p, &mut d.newton.max_halvings);
        }
        if let Some(e) = w.table(t, "energy_check", "discretization.energy_check") {
            let p = "discretization.energy_check";
            w.unknown(e, &["enabled", "tolerance"], p);
            w.boolean(e, "enabled", p, &mut d.energy_check.enabled);
            w.float(e, "tolerance", p, &mut d.energy_check.tolerance);
        }
    }

    if let Some(t) = w.table(&root, "material", "material") {
        let p = "material";
        let mut allowed = vec!["epsilon_r", "epsilon", "component1", "component2"];
        allowed.extend(COMPONENT_KEYS);
        w.unknown(t, &allowed, p);
        let mat = &mut cfg.material;
        if t.contains_key("epsilon_r") && t.contains_key("epsilon") {
            w.errors
                .push("material: give either epsilon_r or epsilon, not both".into());
        }
        let mut eps_r = mat.epsilon / VACUUM_PERMITTIVITY;
        w.float(t, "epsilon_r", p, &mut eps_r);
        mat.epsilon = eps_r * VACUUM_PERMITTIVITY;
        w.float(t, "epsilon", p, &mut mat.epsilon);
        for c in mat.components.iter_mut() {
            read_component(&mut w, t, p, c);
        }
        for (i, key) in ["component1", "component2"].into_iter().enumerate() {
            let path = format!("material.{key}");
            if let Some(ct) = w.table(t, key, &path) {
                w.unknown(ct, &COMPONENT_KEYS, &path);
                read_component(&mut w, ct, &path, &mut mat.components[i]);
            }
        }
    }

    if let Some(t) = w.table(&root, "manufactured", "manufactured") {
        let p = "manufactured";
        w.unknown(t, &["alpha", "beta", "gamma"], p);
        w.float(t, "alpha", p, &mut cfg.manufactured.alpha);
        w.float(t, "beta", p, &mut cfg.manufactured.beta);
        w.float(t, "gamma", p, &mut cfg.manufactured.gamma);
    }

    if let Some(t) = w.table(&root, "initial", "initial") {
        let p = "initial";
        w.unknown(t, &["kind", "value", "position"], p);
        let mut value = match cfg.initial {
            InitialPolarization::Uniform(v) | InitialPolarization::Split { value: v, .. } => v,
            InitialPolarization::Zero => [0.1, 0.1],
        };
        w.pair(t, "value", p, &mut value);
        let mut position = match cfg.initial {
            InitialPolarization::Split { position, .. } => position,
            _ => 0.5 * cfg.mesh.width,
        };
        w.float(t, "position", p, &mut position);
        let kind = w.string(t, "kind", p).unwrap_or(match cfg.initial {
            InitialPolarization::Zero => "zero",
            InitialPolarization::Uniform(_) => "uniform",
            InitialPolarization::Split { .. } => "split",
        });
        cfg.initial = match kind {
            "zero" => InitialPolarization::Zero,
            "uniform" => InitialPolarization::Uniform(value),
            "split" => InitialPolarization::Split { value, position },
            other => {
                w.errors
                    .push(format!("initial.kind: expected zero, uniform or split, got {other:?}"));
                cfg.initial
            }
        };
    }

    if let Some(t) = w.table(&root, "signal", "signal") {
        let p = "signal";
        w.unknown(t, &["times", "values", "periodic", "side"], p);
        let times = w.floats(t, "times", p);
        let values = w.floats(t, "values", p);
        let mut periodic = cfg.signal.periodic;
        w.boolean(t, "periodic", p, &mut periodic);
        match (times, values) {
            (Some(ts), Some(vs)) => match BiasSignal::new(ts, vs, periodic) {
                Ok(s) => cfg.signal = s,
                Err(e) => w.errors.push(format!("signal: {e}")),
            },
            (None, None) => cfg.signal.periodic = periodic,
            _ => w.errors.push("signal: times and values must be given together".into()),
        }
        if let Some(s) = w.string(t, "side", p) {
            match parse_side(s) {
                Some(side) => cfg.bias_side = side,
                None => w
                    .errors
                    .push(format!("signal.side: {s:?} is not one of left, right, bottom, top")),
            }
        }
    }

    if let Some(t) = w.table(&root, "output", "output") {
        let p = "output";
        w.unknown(t, &["directory", "vtk_times", "vtk_every"], p);
        if let Some(d) = w.string(t, "directory", p) {
            cfg.output.directory = d.to_string();
        }
        if let Some(v) = w.floats(t, "vtk_times", p) {
            cfg.output.vtk_times = v;
        }
        w.uint(t, "vtk_every", p, &mut cfg.output.vtk_every);
    }

    validate_into(&cfg, &mut w.errors);
    if w.errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigErrors(w.errors))
    }
}

/// Checks the invariants of a configuration built in code.
pub fn validate(cfg: &ScenarioConfig) -> Result<(), ConfigErrors> {
    let mut errs = Vec::new();
    validate_into(cfg, &mut errs);
    if errs.is_empty() {
        Ok(())
    } else {
        Err(ConfigErrors(errs))
    }
}

fn validate_into(cfg: &ScenarioConfig, errs: &mut Vec<String>) {
    let m = &cfg.mesh;
    let positive = |v: f64| v > 0.0 && v.is_finite();
    if !positive(m.width) {
        errs.push(format!("mesh.width: must be positive, got {}", m.width));
    }
    if !positive(m.height) {
        errs.push(format!("mesh.height: must be positive, got {}", m.height));
    }
    if m.nx == 0 {
        errs.push("mesh.nx: must be at least 1".into());
    }
    if m.ny == 0 {
        errs.push("mesh.ny: must be at least 1".into());
    }
    if m.levels == 0 {
        errs.push("mesh.levels: must be at least 1".into());
    }
    if !(m.fraction > 0.0 && m.fraction <= 1.0) {
        errs.push(format!("mesh.fraction: must lie in (0, 1], got {}", m.fraction));
    }
    if m.adaptive && m.refine_every == 0 {
        errs.push("mesh.refine_every: must be at least 1".into());
    }
    if m.max_level > gld_core::mesh::MAX_LEVEL {
        errs.push(format!(
            "mesh.max_level: must be at most {}, got {}",
            gld_core::mesh::MAX_LEVEL,
            m.max_level
        ));
    }
    if m.dirichlet.intersects(m.neumann) {
        errs.push("mesh.dirichlet and mesh.neumann: a side appears in both".into());
    }
    if (m.dirichlet | m.neumann) != EdgeSet::ALL {
        errs.push("mesh.dirichlet and mesh.neumann: together they must list all four sides".into());
    }
    if m.dirichlet == EdgeSet::NONE {
        errs.push("mesh.dirichlet: at least one side must carry a Dirichlet condition".into());
    }

    let d = &cfg.discretization;
    if !(1..=3).contains(&d.degree) {
        errs.push(format!("discretization.degree: must be 1, 2 or 3, got {}", d.degree));
    }
    if !positive(d.final_time) {
        errs.push(format!(
            "discretization.final_time: must be positive, got {}",
            d.final_time
        ));
    }
    if d.steps == 0 {
        errs.push("discretization.steps: must be at least 1".into());
    }
    if !(positive(d.newton.abs_tol) && positive(d.newton.rel_tol)) {
        errs.push("discretization.newton: tolerances must be positive".into());
    }
    if d.newton.max_iter == 0 {
        errs.push("discretization.newton.max_iter: must be at least 1".into());
    }
    if d.energy_check.enabled && !positive(d.energy_check.tolerance) {
        errs.push("discretization.energy_check.tolerance: must be positive".into());
    }

    if cfg.scenario.is_convergence() {
        let ms = &cfg.manufactured;
        if ![ms.alpha, ms.beta, ms.gamma].iter().all(|v| v.is_finite()) {
            errs.push("manufactured: coefficients must be finite".into());
        }
    } else {
        if let Err(e) = cfg.material.validate() {
            errs.push(format!("material: {e}"));
        }
        if !m.dirichlet.contains(cfg.bias_side) && !cfg.signal.is_zero() {
            errs.push(format!("signal.side: {} is not a Dirichlet side", cfg.bias_side.name()));
        }
    }
    for (i, t) in cfg.output.vtk_times.iter().enumerate() {
        if !(t.is_finite() && *t >= 0.0) {
            errs.push(format!("output.vtk_times[{i}]: must be a nonnegative time, got {t}"));
        }
    }
    if cfg.output.directory.is_empty() {
        errs.push("output.directory: must not be empty".into());
    }
}
