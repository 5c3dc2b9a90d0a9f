//! Time loop of the convex-split scheme with energy monitoring and
//! adaptive refinement hooks.

use std::sync::Arc;

use crate::error::{GldError, Result};
use crate::hdg::{
    field_p, set_stabilization, HdgSystem, Mode, NewtonConfig, ProblemData, StateFields, NUM_CELL_FIELDS,
    NUM_TRACE_FIELDS, TRACE_P1,
};
use crate::linalg::{dot, DenseLu, DenseMatrix};
use crate::mesh::{refine_adaptive, CellOrigin, Mesh, Side};
use crate::model::MaterialParams;
use crate::polybasis::{gauss_legendre, tensor_quadrature, CellBasis};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyCheck {
    pub enabled: bool,
    pub tolerance: f64,
}

impl Default for EnergyCheck {
    fn default() -> Self {
        Self {
            enabled: true,
            tolerance: 1e-10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeLoopConfig {
    pub final_time: f64,
    pub step_count: usize,
    pub newton: NewtonConfig,
    pub energy_check: EnergyCheck,
}

impl TimeLoopConfig {
    pub fn new(final_time: f64, step_count: usize) -> Self {
        Self {
            final_time,
            step_count,
            newton: NewtonConfig::default(),
            energy_check: EnergyCheck::default(),
        }
    }

    pub fn dt(&self) -> f64 {
        self.final_time / self.step_count as f64
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.final_time > 0.0 && self.final_time.is_finite()) {
            errs.push(format!("final time must be positive, got {}", self.final_time));
        }
        if self.step_count == 0 {
            errs.push("step count must be at least 1".to_string());
        }
        let n = &self.newton;
        if !(n.abs_tol > 0.0 && n.rel_tol > 0.0) {
            errs.push("newton tolerances must be positive".to_string());
        }
        if n.max_iter == 0 {
            errs.push("newton max_iter must be at least 1".to_string());
        }
        if self.energy_check.enabled && !(self.energy_check.tolerance > 0.0) {
            errs.push("energy tolerance must be positive".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(GldError::Config(errs.join("; ")))
        }
    }
}

/// One row of the energy time series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyRecord {
    pub step: usize,
    pub time: f64,
    /// Domain-averaged energy density `d_h`.
    pub energy: f64,
    /// `d_h` times the domain area.
    pub total: f64,
    pub newton_iterations: usize,
    pub newton_residual: f64,
}

/// Cellwise L2 projection of `p0` onto the polarization fields; the
/// polarization traces get the facet L2 projection. Other fields are zero.
pub fn project_initial(mesh: &Mesh, degree: usize, p0: &dyn Fn([f64; 2]) -> [f64; 2]) -> StateFields {
    let mut state = StateFields::zeros(mesh, degree);
    let basis = CellBasis::new(degree);
    let n = basis.dim();
    let rule = tensor_quadrature(&gauss_legendre(3 * degree + 2));
    let tab: Vec<Vec<f64>> = rule.points.iter().map(|p| basis.eval(*p).0).collect();
    let mut mass = DenseMatrix::zeros(n, n);
    for (q, w) in rule.weights.iter().enumerate() {
        for a in 0..n {
            for b in 0..n {
                mass[(a, b)] += w * tab[q][a] * tab[q][b];
            }
        }
    }
    let lu = DenseLu::factor(&mass).expect("reference mass is SPD");
    for c in 0..mesh.num_cells() {
        let mut rhs = [vec![0.0; n], vec![0.0; n]];
        for (q, w) in rule.weights.iter().enumerate() {
            let val = p0(mesh.map_to_cell(c, rule.points[q]));
            for i in 0..2 {
                for a in 0..n {
                    rhs[i][a] += w * val[i] * tab[q][a];
                }
            }
        }
        for (i, r) in rhs.iter().enumerate() {
            state.cell_field_mut(c, field_p(i)).copy_from_slice(&lu.solve(r));
        }
    }
    let line = gauss_legendre(degree + 2);
    let fb = crate::polybasis::FacetBasis::new(degree);
    let m = fb.dim();
    let mut fmass = DenseMatrix::zeros(m, m);
    let ftab: Vec<Vec<f64>> = line.points.iter().map(|p| fb.eval(p[0]).0).collect();
    for (q, w) in line.weights.iter().enumerate() {
        for a in 0..m {
            for b in 0..m {
                fmass[(a, b)] += w * ftab[q][a] * ftab[q][b];
            }
        }
    }
    let flu = DenseLu::factor(&fmass).expect("facet mass is SPD");
    for f in 0..mesh.num_facets() {
        let mut rhs = [vec![0.0; m], vec![0.0; m]];
        for (q, w) in line.weights.iter().enumerate() {
            let val = p0(mesh.map_to_facet(f, line.points[q][0]));
            for i in 0..2 {
                for a in 0..m {
                    rhs[i][a] += w * val[i] * ftab[q][a];
                }
            }
        }
        for (i, r) in rhs.iter().enumerate() {
            state.trace_field_mut(f, TRACE_P1 + i).copy_from_slice(&flu.solve(r));
        }
    }
    state
}

/// Fills in `V`, `E`, `U` and the traces consistent with the polarization
/// of `state` by a solve with the polarization held fixed.
pub fn complete_initial(
    mesh: Arc<Mesh>,
    params: &MaterialParams,
    state: &StateFields,
    t: f64,
    data: &dyn ProblemData,
    newton: &NewtonConfig,
) -> Result<StateFields> {
    let stab = set_stabilization(params, &mesh);
    let sys = HdgSystem::new(mesh, *params, state.degree, stab, Mode::FrozenPolarization)?;
    let (mut out, _) = sys.solve(state, state.clone(), t, data, newton, state.step)?;
    out.step = state.step;
    out.time = t;
    Ok(out)
}

/// `d_h = 1/|Omega| int eps/2 |E|^2 + F(P) + sum_i 1/(2 g_i) |U_i|^2`.
pub fn discrete_energy(system: &HdgSystem, state: &StateFields) -> f64 {
    let forms = system.energy_forms(state, state.time, &crate::hdg::ZeroData);
    (forms.field + forms.landau + forms.gradient) / system.mesh().area()
}

/// The energy of a state evaluated two ways: from the polarization-only
/// functional and from the component-wise potential/polarization form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyIdentity {
    pub from_polarization: f64,
    pub componentwise: f64,
}

impl EnergyIdentity {
    pub fn relative_gap(&self) -> f64 {
        let scale = self
            .from_polarization
            .abs()
            .max(self.componentwise.abs())
            .max(f64::MIN_POSITIVE);
        (self.from_polarization - self.componentwise).abs() / scale
    }
}

pub fn energy_identity(system: &HdgSystem, state: &StateFields, data: &dyn ProblemData) -> EnergyIdentity {
    let f = system.energy_forms(state, state.time, data);
    EnergyIdentity {
        from_polarization: f.field + f.stabilization + f.landau + f.gradient,
        componentwise: f.charge_work + f.polarization_work - (f.field + f.stabilization) + f.landau + f.gradient,
    }
}

/// Maps `state` from `old` onto `new`, a refinement of it. Children get the
/// parent polynomial (exact, hence the L2 projection); traces get the mean of
/// the adjacent cell values projected onto each facet.
pub fn transfer_state(old: &Mesh, new: &Mesh, state: &StateFields) -> Result<StateFields> {
    if new.origin().len() != new.num_cells() {
        return Err(GldError::Dimension("refined mesh has no origin map".into()));
    }
    let k = state.degree;
    let basis = CellBasis::new(k);
    let n = basis.dim();
    let mut out = StateFields::zeros(new, k);
    out.step = state.step;
    out.time = state.time;
    let nodes = basis.nodes();
    for c in 0..new.num_cells() {
        match new.origin()[c] {
            CellOrigin::Unchanged(id) => {
                if id >= old.num_cells() {
                    return Err(GldError::Dimension(format!("origin cell {id} out of range")));
                }
                out.cell_block_mut(c).copy_from_slice(state.cell_block(id));
            }
            CellOrigin::Child { parent, quadrant } => {
                if parent >= old.num_cells() {
                    return Err(GldError::Dimension(format!("origin cell {parent} out of range")));
                }
                let q = [(quadrant % 2) as f64, (quadrant / 2) as f64];
                let src = state.cell_block(parent);
                let dst = out.cell_block_mut(c);
                for (a, xi) in nodes.iter().enumerate() {
                    let px = [0.5 * (xi[0] + 2.0 * q[0] - 1.0), 0.5 * (xi[1] + 2.0 * q[1] - 1.0)];
                    let (v, _) = basis.eval(px);
                    for fld in 0..NUM_CELL_FIELDS {
                        dst[fld * n + a] = dot(&v, &src[fld * n..(fld + 1) * n]);
                    }
                }
            }
        }
    }
    average_traces(new, &mut out);
    Ok(out)
}

fn average_traces(mesh: &Mesh, state: &mut StateFields) {
    let k = state.degree;
    let basis = CellBasis::new(k);
    let n = basis.dim();
    let fb = crate::polybasis::FacetBasis::new(k);
    let m = fb.dim();
    let line = gauss_legendre(k + 2);
    let ftab: Vec<Vec<f64>> = line.points.iter().map(|p| fb.eval(p[0]).0).collect();
    let mut fmass = DenseMatrix::zeros(m, m);
    for (q, w) in line.weights.iter().enumerate() {
        for a in 0..m {
            for b in 0..m {
                fmass[(a, b)] += w * ftab[q][a] * ftab[q][b];
            }
        }
    }
    let flu = DenseLu::factor(&fmass).expect("facet mass is SPD");
    let mut sums = vec![0.0; mesh.num_facets() * NUM_TRACE_FIELDS * m];
    let mut counts = vec![0usize; mesh.num_facets()];
    for c in 0..mesh.num_cells() {
        let block = state.cell_block(c).to_vec();
        for cf in mesh.cell_facets(c) {
            counts[cf.facet] += 1;
            for (q, w) in line.weights.iter().enumerate() {
                let t = cf.sub[0] + 0.5 * (line.points[q][0] + 1.0) * (cf.sub[1] - cf.sub[0]);
                let xi = match cf.side {
                    Side::Left => [-1.0, t],
                    Side::Right => [1.0, t],
                    Side::Bottom => [t, -1.0],
                    Side::Top => [t, 1.0],
                };
                let (v, _) = basis.eval(xi);
                for tr in 0..NUM_TRACE_FIELDS {
                    // trace order V, P1, P2 matches cell fields 0, 1, 2
                    let val = dot(&v, &block[tr * n..(tr + 1) * n]);
                    let base = (cf.facet * NUM_TRACE_FIELDS + tr) * m;
                    for a in 0..m {
                        sums[base + a] += w * val * ftab[q][a];
                    }
                }
            }
        }
    }
    for f in 0..mesh.num_facets() {
        let scale = 1.0 / counts[f].max(1) as f64;
        for tr in 0..NUM_TRACE_FIELDS {
            let base = (f * NUM_TRACE_FIELDS + tr) * m;
            let rhs: Vec<f64> = sums[base..base + m].iter().map(|s| s * scale).collect();
            state.trace_field_mut(f, tr).copy_from_slice(&flu.solve(&rhs));
        }
    }
}

/// Callbacks invoked by [`run`].
pub trait StepObserver {
    /// Cells to refine after the state of step `step` (zero for the initial
    /// state) has been accepted; `None` keeps the mesh. Not called after the
    /// last step.
    fn refine(&mut self, _step: usize, _system: &HdgSystem, _state: &StateFields) -> Option<Vec<usize>> {
        None
    }

    /// Called with every accepted state, including the initial one.
    fn observe(&mut self, _system: &HdgSystem, _state: &StateFields, _record: &EnergyRecord) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct NoObserver;

impl StepObserver for NoObserver {}

#[derive(Debug)]
pub struct RunOutput {
    pub mesh: Arc<Mesh>,
    pub state: StateFields,
    pub records: Vec<EnergyRecord>,
}

/// Semi-implicit time stepper bound to one mesh.
pub struct Stepper {
    system: HdgSystem,
}

impl Stepper {
    pub fn new(mesh: Arc<Mesh>, params: &MaterialParams, degree: usize, dt: f64) -> Result<Self> {
        let stab = set_stabilization(params, &mesh);
        Ok(Self {
            system: HdgSystem::new(mesh, *params, degree, stab, Mode::TimeStep { dt })?,
        })
    }

    pub fn system(&self) -> &HdgSystem {
        &self.system
    }

    /// One step from `previous` to time `t`, starting Newton from `previous`.
    pub fn step(
        &self,
        previous: &StateFields,
        t: f64,
        data: &dyn ProblemData,
        newton: &NewtonConfig,
    ) -> Result<(StateFields, crate::hdg::NewtonReport)> {
        self.system
            .solve(previous, previous.clone(), t, data, newton, previous.step + 1)
    }
}

/// Runs `config.step_count` steps from `initial` (a complete state at time
/// zero on `mesh`).
pub fn run(
    config: &TimeLoopConfig,
    mesh: Arc<Mesh>,
    params: &MaterialParams,
    initial: StateFields,
    data: &dyn ProblemData,
    observer: &mut dyn StepObserver,
) -> Result<RunOutput> {
    config.validate()?;
    let dt = config.dt();
    let mut stepper = Stepper::new(mesh.clone(), params, initial.degree, dt)?;
    let mut mesh = mesh;
    let mut state = initial;
    let area = mesh.area();
    let d0 = discrete_energy(stepper.system(), &state);
    let first = EnergyRecord {
        step: state.step,
        time: state.time,
        energy: d0,
        total: d0 * area,
        newton_iterations: 0,
        newton_residual: 0.0,
    };
    observer.observe(stepper.system(), &state, &first)?;
    let mut records = vec![first];
    let mut previous_energy = d0;
    for n in 1..=config.step_count {
        if let Some(flags) = observer.refine(n - 1, stepper.system(), &state) {
            if !flags.is_empty() {
                let refined = Arc::new(refine_adaptive(&mesh, &flags));
                state = transfer_state(&mesh, &refined, &state)?;
                mesh = refined;
                stepper = Stepper::new(mesh.clone(), params, state.degree, dt)?;
            }
        }
        let t = n as f64 * dt;
        let (next, report) = stepper.step(&state, t, data, &config.newton)?;
        state = next;
        state.step = n;
        state.time = t;
        let d = discrete_energy(stepper.system(), &state);
        if !d.is_finite() {
            return Err(GldError::Divergence { step: n });
        }
        let tol = config.energy_check.tolerance * (1.0 + d0.abs());
        if config.energy_check.enabled && d > previous_energy + tol {
            return Err(GldError::StabilityViolation {
                step: n,
                previous: previous_energy,
                current: d,
                tolerance: tol,
            });
        }
        previous_energy = d;
        let rec = EnergyRecord {
            step: n,
            time: t,
            energy: d,
            total: d * area,
            newton_iterations: report.iterations,
            newton_residual: report.residual,
        };
        observer.observe(stepper.system(), &state, &rec)?;
        records.push(rec);
    }
    Ok(RunOutput { mesh, state, records })
}
