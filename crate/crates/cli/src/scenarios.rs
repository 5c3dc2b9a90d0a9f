//! The four packaged scenarios: manufactured convergence in time and space,
//! energy stability and the monolayer hysteresis loop.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use gld_core::hdg::{HdgSystem, ProblemData, StateFields};
use gld_core::mesh::{build_rectangle_mesh, refine_uniform, Mesh, Side};
use gld_core::model::{MaterialParams, Scaling};
use gld_core::stepper::{
    complete_initial, energy_identity, project_initial, run, EnergyRecord, StepObserver, Stepper, TimeLoopConfig,
};
use gld_core::verification::{
    kelly_estimate, l2_error, select_refinement, ConvergenceRow, ConvergenceTable, ManufacturedSolution, RefinementKind,
};
use gld_core::GldError;

use crate::config::{InitialPolarization, ScenarioConfig, ScenarioKind};
use crate::output::{csv_string, write_atomic, write_vtk};
use crate::signal::{bias_at, BiasSignal};
use crate::CliError;

/// Number of states at which the two energy evaluations are compared.
pub const IDENTITY_SAMPLES: usize = 20;

/// One row of the hysteresis output, in SI units (charge per unit depth).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DisplacementRow {
    pub step: usize,
    pub time: f64,
    pub bias: f64,
    pub d_top: f64,
    pub d_bottom: f64,
}

/// Everything a scenario produced.
#[derive(Clone, Debug, Default)]
pub struct ScenarioReport {
    pub files: Vec<PathBuf>,
    pub table: Option<ConvergenceTable>,
    /// Energy records of the last time loop, in nondimensional units.
    pub energy: Vec<EnergyRecord>,
    /// Relative gaps between the two energy evaluations at sampled steps.
    pub identity_gaps: Vec<(usize, f64)>,
    /// Largest interior transmission residual at sampled steps (first,
    /// middle and last step of every time loop).
    pub transmission: Vec<(usize, f64)>,
    pub displacement: Vec<DisplacementRow>,
    pub final_cells: usize,
}

impl ScenarioReport {
    pub fn max_transmission(&self) -> f64 {
        self.transmission.iter().map(|t| t.1).fold(0.0, f64::max)
    }

    pub fn max_identity_gap(&self) -> f64 {
        self.identity_gaps.iter().map(|t| t.1).fold(0.0, f64::max)
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport, CliError> {
    crate::config::validate(cfg).map_err(CliError::Config)?;
    match cfg.scenario {
        ScenarioKind::ConvergenceTime | ScenarioKind::ConvergenceSpace => convergence(cfg),
        ScenarioKind::EnergyStability => energy_stability(cfg),
        ScenarioKind::Hysteresis => hysteresis(cfg),
    }
}

fn output_path(cfg: &ScenarioConfig, name: &str) -> PathBuf {
    Path::new(&cfg.output.directory).join(name)
}

fn base_mesh(cfg: &ScenarioConfig, length: f64) -> Result<Mesh, CliError> {
    let m = &cfg.mesh;
    Ok(build_rectangle_mesh(
        m.width / length,
        m.height / length,
        m.nx,
        m.ny,
        m.dirichlet,
        m.neumann,
    )?)
}

fn loop_config(cfg: &ScenarioConfig, final_time: f64, steps: usize) -> TimeLoopConfig {
    let mut lc = TimeLoopConfig::new(final_time, steps);
    lc.newton = cfg.discretization.newton;
    lc.energy_check = cfg.discretization.energy_check;
    lc
}

/// Steps at which the transmission residual is sampled.
fn transmission_steps(steps: usize) -> [usize; 3] {
    [1, steps.div_ceil(2), steps]
}

/// Records the transmission residual at the first, middle and last steps.
struct Probe {
    steps: [usize; 3],
    transmission: Vec<(usize, f64)>,
}

impl Probe {
    fn new(steps: usize) -> Self {
        Self {
            steps: transmission_steps(steps),
            transmission: Vec::new(),
        }
    }

    fn observe(&mut self, system: &HdgSystem, state: &StateFields, step: usize) -> gld_core::Result<()> {
        if self.steps.contains(&step) && !self.transmission.iter().any(|t| t.0 == step) {
            let r = system.max_interior_transmission_residual(state)?;
            self.transmission.push((step, r));
        }
        Ok(())
    }
}

impl StepObserver for Probe {
    fn observe(&mut self, system: &HdgSystem, state: &StateFields, record: &EnergyRecord) -> gld_core::Result<()> {
        Probe::observe(self, system, state, record.step)
    }
}

fn convergence(cfg: &ScenarioConfig) -> Result<ScenarioReport, CliError> {
    let mc = cfg.manufactured;
    let ms = ManufacturedSolution {
        alpha: mc.alpha,
        beta: mc.beta,
        gamma: mc.gamma,
    };
    let params = ms.solver_params();
    let k = cfg.discretization.degree;
    let t_final = cfg.discretization.final_time;
    let (kind, step_factor) = match cfg.scenario {
        ScenarioKind::ConvergenceSpace => (RefinementKind::Space, 1usize << (k + 1)),
        _ => (RefinementKind::Time, 2),
    };
    let mut table = ConvergenceTable::new(kind);
    let mut report = ScenarioReport::default();
    let mut mesh = base_mesh(cfg, 1.0)?;
    let mut steps = cfg.discretization.steps;
    for level in 0..cfg.mesh.levels {
        if level > 0 {
            steps *= step_factor;
            if kind == RefinementKind::Space {
                mesh = refine_uniform(&mesh);
            }
        }
        let mesh_arc = Arc::new(mesh.clone());
        let lc = TimeLoopConfig {
            energy_check: gld_core::stepper::EnergyCheck {
                enabled: false,
                ..cfg.discretization.energy_check
            },
            ..loop_config(cfg, t_final, steps)
        };
        let init = project_initial(&mesh, k, &|x| {
            gld_core::verification::ExactSolution::polarization(&ms, 0.0, x)
        });
        let init = complete_initial(mesh_arc.clone(), &params, &init, 0.0, &ms, &lc.newton)?;
        let mut probe = Probe::new(steps);
        let out = run(&lc, mesh_arc.clone(), &params, init, &ms, &mut probe)?;
        let dofs = Stepper::new(mesh_arc, &params, k, lc.dt())?.system().num_total_dofs();
        let errors = l2_error(&mesh, &out.state, &ms, t_final);
        table.rows.push(ConvergenceRow {
            level,
            h: mesh.max_cell_size(),
            tau: lc.dt(),
            dofs,
            errors,
        });
        report.transmission.extend(probe.transmission);
        report.energy = out.records;
        report.final_cells = mesh.num_cells();
    }
    let path = output_path(cfg, "convergence.csv");
    write_atomic(&path, &table.to_csv())?;
    report.files.push(path);
    report.table = Some(table);
    Ok(report)
}

/// Physical setup shared by the monolayer scenarios.
struct Physical {
    scaling: Scaling,
    params: MaterialParams,
    mesh: Arc<Mesh>,
}

fn physical(cfg: &ScenarioConfig) -> Result<Physical, CliError> {
    let m = &cfg.mesh;
    let length = (m.width * m.width + m.height * m.height).sqrt();
    let scaling = Scaling::new(length, cfg.discretization.final_time, cfg.material.epsilon);
    let params = scaling.nondimensionalize(&cfg.material);
    let mesh = Arc::new(base_mesh(cfg, length)?);
    Ok(Physical { scaling, params, mesh })
}

/// Contact bias on one Dirichlet side, every other Dirichlet side grounded.
pub struct ContactBias {
    pub signal: BiasSignal,
    pub side: Side,
    pub scaling: Scaling,
    /// Nondimensional domain extent.
    pub extent: [f64; 2],
}

impl ContactBias {
    fn on_side(&self, x: [f64; 2]) -> bool {
        let tol = 1e-9 * self.extent[0].max(self.extent[1]);
        match self.side {
            Side::Left => x[0] <= tol,
            Side::Right => x[0] >= self.extent[0] - tol,
            Side::Bottom => x[1] <= tol,
            Side::Top => x[1] >= self.extent[1] - tol,
        }
    }
}

impl ProblemData for ContactBias {
    fn dirichlet_potential(&self, t: f64, x: [f64; 2]) -> f64 {
        if self.on_side(x) {
            bias_at(&self.signal, t * self.scaling.time) / self.scaling.potential()
        } else {
            0.0
        }
    }
}

fn initial_state(cfg: &ScenarioConfig, ph: &Physical, data: &dyn ProblemData) -> Result<StateFields, CliError> {
    let length = ph.scaling.length;
    let p0 = ph.scaling.polarization;
    let init = cfg.initial;
    let f = move |x: [f64; 2]| -> [f64; 2] {
        match init {
            InitialPolarization::Zero => [0.0, 0.0],
            InitialPolarization::Uniform(v) => [v[0] / p0, v[1] / p0],
            InitialPolarization::Split { value, position } => {
                if x[0] * length <= position {
                    [value[0] / p0, value[1] / p0]
                } else {
                    [-value[0] / p0, -value[1] / p0]
                }
            }
        }
    };
    let state = project_initial(&ph.mesh, cfg.discretization.degree, &f);
    Ok(complete_initial(
        ph.mesh.clone(),
        &ph.params,
        &state,
        0.0,
        data,
        &cfg.discretization.newton,
    )?)
}

fn contact_bias(cfg: &ScenarioConfig, ph: &Physical) -> ContactBias {
    ContactBias {
        signal: cfg.signal.clone(),
        side: cfg.bias_side,
        scaling: ph.scaling,
        extent: [ph.mesh.width(), ph.mesh.height()],
    }
}

/// Step closest to each requested time (seconds).
fn snapshot_steps(times: &[f64], every: usize, steps: usize, final_time: f64) -> Vec<usize> {
    let dt = final_time / steps as f64;
    let mut out: Vec<usize> = times.iter().map(|t| ((t / dt).round() as usize).min(steps)).collect();
    if every > 0 {
        out.extend((0..=steps).step_by(every));
    }
    out.sort_unstable();
    out.dedup();
    out
}

struct EnergyObserver<'a> {
    probe: Probe,
    identity_steps: Vec<usize>,
    identity_gaps: Vec<(usize, f64)>,
    snapshots: Vec<usize>,
    files: Vec<PathBuf>,
    cfg: &'a ScenarioConfig,
    scaling: Scaling,
    data: &'a dyn ProblemData,
}

fn snapshot(
    cfg: &ScenarioConfig,
    system: &HdgSystem,
    state: &StateFields,
    scaling: &Scaling,
) -> gld_core::Result<PathBuf> {
    let path = output_path(cfg, &format!("fields_{:06}.vtk", state.step));
    write_vtk(system.mesh(), state, scaling, &path).map_err(GldError::from)?;
    Ok(path)
}

impl StepObserver for EnergyObserver<'_> {
    fn observe(&mut self, system: &HdgSystem, state: &StateFields, record: &EnergyRecord) -> gld_core::Result<()> {
        self.probe.observe(system, state, record.step)?;
        if self.identity_steps.contains(&record.step) {
            let id = energy_identity(system, state, self.data);
            self.identity_gaps.push((record.step, id.relative_gap()));
        }
        if self.snapshots.contains(&record.step) {
            self.files.push(snapshot(self.cfg, system, state, &self.scaling)?);
        }
        Ok(())
    }
}

/// `count` steps spread evenly over `1..=steps`.
fn sample_steps(steps: usize, count: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (1..=count).map(|i| (i * steps).div_ceil(count)).collect();
    out.dedup();
    out
}

fn energy_stability(cfg: &ScenarioConfig) -> Result<ScenarioReport, CliError> {
    let ph = physical(cfg)?;
    let data = contact_bias(cfg, &ph);
    let steps = cfg.discretization.steps;
    let init = initial_state(cfg, &ph, &data)?;
    let lc = loop_config(cfg, 1.0, steps);
    let mut obs = EnergyObserver {
        probe: Probe::new(steps),
        identity_steps: sample_steps(steps, IDENTITY_SAMPLES),
        identity_gaps: Vec::new(),
        snapshots: snapshot_steps(
            &cfg.output.vtk_times,
            cfg.output.vtk_every,
            steps,
            cfg.discretization.final_time,
        ),
        files: Vec::new(),
        cfg,
        scaling: ph.scaling,
        data: &data,
    };
    let out = run(&lc, ph.mesh.clone(), &ph.params, init, &data, &mut obs)?;
    let sc = ph.scaling;
    let rows: Vec<Vec<f64>> = out
        .records
        .iter()
        .map(|r| {
            vec![
                r.step as f64,
                r.time * sc.time,
                r.energy * sc.energy_density(),
                r.total * sc.energy_density() * sc.length * sc.length,
                r.newton_iterations as f64,
                r.newton_residual,
            ]
        })
        .collect();
    let path = output_path(cfg, "energy.csv");
    write_atomic(
        &path,
        &csv_string(
            &[
                "step",
                "time",
                "energy_density",
                "energy_per_depth",
                "newton_iterations",
                "newton_residual",
            ],
            &rows,
        ),
    )?;
    let mut files = obs.files;
    files.push(path);
    Ok(ScenarioReport {
        files,
        identity_gaps: obs.identity_gaps,
        transmission: obs.probe.transmission,
        final_cells: out.mesh.num_cells(),
        energy: out.records,
        ..ScenarioReport::default()
    })
}

struct HysteresisObserver<'a> {
    probe: Probe,
    cfg: &'a ScenarioConfig,
    scaling: Scaling,
    rows: Vec<DisplacementRow>,
    snapshots: Vec<usize>,
    files: Vec<PathBuf>,
}

impl StepObserver for HysteresisObserver<'_> {
    fn refine(&mut self, step: usize, system: &HdgSystem, state: &StateFields) -> Option<Vec<usize>> {
        let m = &self.cfg.mesh;
        if !m.adaptive || !step.is_multiple_of(m.refine_every) {
            return None;
        }
        let mesh = system.mesh();
        let eta = kelly_estimate(mesh, state);
        let flags = select_refinement(&eta, m.fraction)
            .into_iter()
            .filter(|&c| mesh.cell(c).level < m.max_level)
            .collect();
        Some(flags)
    }

    fn observe(&mut self, system: &HdgSystem, state: &StateFields, record: &EnergyRecord) -> gld_core::Result<()> {
        self.probe.observe(system, state, record.step)?;
        let sc = self.scaling;
        // Boundary integrals are nondimensional charge per length; rescale by P0 L0.
        let to_si = sc.polarization * sc.length;
        let time = record.time * sc.time;
        self.rows.push(DisplacementRow {
            step: record.step,
            time,
            bias: bias_at(&self.cfg.signal, time),
            d_top: system.boundary_displacement(state, Side::Top) * to_si,
            d_bottom: system.boundary_displacement(state, Side::Bottom) * to_si,
        });
        if self.snapshots.contains(&record.step) {
            self.files.push(snapshot(self.cfg, system, state, &sc)?);
        }
        Ok(())
    }
}

fn hysteresis(cfg: &ScenarioConfig) -> Result<ScenarioReport, CliError> {
    let ph = physical(cfg)?;
    let data = contact_bias(cfg, &ph);
    let steps = cfg.discretization.steps;
    let init = initial_state(cfg, &ph, &data)?;
    let lc = loop_config(cfg, 1.0, steps);
    let mut obs = HysteresisObserver {
        probe: Probe::new(steps),
        cfg,
        scaling: ph.scaling,
        rows: Vec::new(),
        snapshots: snapshot_steps(
            &cfg.output.vtk_times,
            cfg.output.vtk_every,
            steps,
            cfg.discretization.final_time,
        ),
        files: Vec::new(),
    };
    let out = run(&lc, ph.mesh.clone(), &ph.params, init, &data, &mut obs)?;
    let dt = cfg.time_step();
    let rows = &obs.rows;
    let d_rows: Vec<Vec<f64>> = rows[1..]
        .iter()
        .map(|r| vec![r.step as f64, r.time, r.bias, r.d_top, r.d_bottom])
        .collect();
    let current: Vec<Vec<f64>> = rows
        .windows(2)
        .map(|w| {
            vec![
                w[1].step as f64,
                w[1].time,
                (w[1].d_top - w[0].d_top) / dt,
                (w[1].d_bottom - w[0].d_bottom) / dt,
            ]
        })
        .collect();
    let d_path = output_path(cfg, "displacement.csv");
    write_atomic(
        &d_path,
        &csv_string(&["step", "time", "bias", "D_top", "D_bottom"], &d_rows),
    )?;
    let c_path = output_path(cfg, "current.csv");
    write_atomic(
        &c_path,
        &csv_string(&["step", "time", "current_top", "current_bottom"], &current),
    )?;
    let mut files = obs.files;
    files.push(d_path);
    files.push(c_path);
    Ok(ScenarioReport {
        files,
        transmission: obs.probe.transmission,
        displacement: obs.rows,
        final_cells: out.mesh.num_cells(),
        energy: out.records,
        ..ScenarioReport::default()
    })
}

/// Loop-shape measures of a displacement series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopSummary {
    pub height: f64,
    /// `|D(start) - D(end)| / height`.
    pub closure: f64,
    pub sign_changes: usize,
}

/// Measures the loop traced by `D_top` between the rows at `start` and
/// `end` seconds (nearest rows), using the rows from `start` onward for the
/// loop height and the whole series for sign changes.
pub fn loop_summary(rows: &[DisplacementRow], start: f64, end: f64) -> Option<LoopSummary> {
    let nearest = |t: f64| {
        rows.iter()
            .enumerate()
            .min_by(|a, b| (a.1.time - t).abs().total_cmp(&(b.1.time - t).abs()))
            .map(|(i, _)| i)
    };
    let (i0, i1) = (nearest(start)?, nearest(end)?);
    let (lo, hi) = rows[i0..=i1].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, r| {
        (a.0.min(r.d_top), a.1.max(r.d_top))
    });
    let height = hi - lo;
    let mut sign_changes = 0;
    let mut last = 0.0f64;
    for r in rows {
        if r.d_top != 0.0 {
            if last != 0.0 && r.d_top.signum() != last.signum() {
                sign_changes += 1;
            }
            last = r.d_top;
        }
    }
    Some(LoopSummary {
        height,
        closure: (rows[i0].d_top - rows[i1].d_top).abs() / height,
        sign_changes,
    })
}
