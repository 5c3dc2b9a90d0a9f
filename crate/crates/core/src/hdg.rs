//! Hybridizable DG discretization of the coupled Poisson / polarization system.
//!
//! Per cell the unknowns are the primal fields `V, P1, P2` and the fluxes
//! `E1, E2, U11, U12, U21, U22` (with `U_ij = -g_i d_j P_i`), all in the
//! tensor-product space of degree `k`. Each facet carries the traces
//! `V^, P^1, P^2`. Cell unknowns are eliminated cell by cell; the global
//! system lives on the free trace unknowns only: `V^` everywhere except
//! Dirichlet facets and `P^` on interior facets.
//!
//! Local ordering of the cell vector is `V, P1, P2, E1, E2, U11, U12, U21,
//! U22`, each block of length `(k+1)^2`. The trace vector of a cell follows
//! `Mesh::cell_facets` with `V^, P^1, P^2` per facet.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use crate::error::{GldError, Result};
use crate::linalg::{dot, DenseLu, DenseMatrix, SparseMatrix, SparseSymbolic};
use crate::mesh::{BoundaryMarker, Mesh, Side};
use crate::model::{split, MaterialParams, SplitCoefficients};
use crate::polybasis::{gauss_legendre, tensor_quadrature, CellBasis, FacetBasis};

pub const FIELD_V: usize = 0;
pub const FIELD_P1: usize = 1;
pub const FIELD_P2: usize = 2;
pub const FIELD_E1: usize = 3;
pub const FIELD_E2: usize = 4;
pub const FIELD_U11: usize = 5;
pub const NUM_CELL_FIELDS: usize = 9;
pub const TRACE_V: usize = 0;
pub const TRACE_P1: usize = 1;
pub const NUM_TRACE_FIELDS: usize = 3;

#[inline]
pub fn field_p(i: usize) -> usize {
    FIELD_P1 + i
}

#[inline]
pub fn field_e(j: usize) -> usize {
    FIELD_E1 + j
}

#[inline]
pub fn field_u(i: usize, j: usize) -> usize {
    FIELD_U11 + 2 * i + j
}

/// Penalty parameters of the numerical fluxes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stabilization {
    pub tau_v: f64,
    pub tau_p: f64,
}

/// `tau_V = eps / diam(domain)`, `tau_P = 1 / diam(domain)`.
pub fn set_stabilization(params: &MaterialParams, mesh: &Mesh) -> Stabilization {
    let d = mesh.diameter();
    Stabilization {
        tau_v: params.epsilon / d,
        tau_p: 1.0 / d,
    }
}

/// Normal displacement flux `(eps E^ + P^).nu = (eps E + P^).nu + tau_V (V - V^)`.
pub fn numerical_flux_poisson(eps_e_dot_nu: f64, p_hat_dot_nu: f64, v: f64, v_hat: f64, tau_v: f64) -> f64 {
    eps_e_dot_nu + p_hat_dot_nu + tau_v * (v - v_hat)
}

/// Normal gradient flux `U^.nu = U.nu + tau_P (P - P^)`.
pub fn numerical_flux_polarization(u_dot_nu: f64, p: f64, p_hat: f64, tau_p: f64) -> f64 {
    u_dot_nu + tau_p * (p - p_hat)
}

/// Source and boundary data, in the solver's (dimensionless) units.
pub trait ProblemData {
    fn charge(&self, _t: f64, _x: [f64; 2]) -> f64 {
        0.0
    }
    /// Right-hand side of the polarization equation.
    fn forcing(&self, _t: f64, _x: [f64; 2]) -> [f64; 2] {
        [0.0; 2]
    }
    fn dirichlet_potential(&self, _t: f64, _x: [f64; 2]) -> f64 {
        0.0
    }
    /// Polarization trace on the domain boundary.
    fn boundary_polarization(&self, _t: f64, _x: [f64; 2]) -> [f64; 2] {
        [0.0; 2]
    }
}

/// Zero charge, zero forcing, grounded contacts, vanishing boundary polarization.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroData;

impl ProblemData for ZeroData {}

/// Discrete fields at one time level.
#[derive(Clone, Debug, PartialEq)]
pub struct StateFields {
    pub degree: usize,
    pub cell_dofs: usize,
    pub facet_dofs: usize,
    pub cells: Vec<f64>,
    pub traces: Vec<f64>,
    pub step: usize,
    pub time: f64,
}

impl StateFields {
    pub fn zeros(mesh: &Mesh, degree: usize) -> Self {
        let n = (degree + 1) * (degree + 1);
        let m = degree + 1;
        Self {
            degree,
            cell_dofs: n,
            facet_dofs: m,
            cells: vec![0.0; mesh.num_cells() * NUM_CELL_FIELDS * n],
            traces: vec![0.0; mesh.num_facets() * NUM_TRACE_FIELDS * m],
            step: 0,
            time: 0.0,
        }
    }

    #[inline]
    pub fn cell_block(&self, c: usize) -> &[f64] {
        let len = NUM_CELL_FIELDS * self.cell_dofs;
        &self.cells[c * len..(c + 1) * len]
    }

    #[inline]
    pub fn cell_block_mut(&mut self, c: usize) -> &mut [f64] {
        let len = NUM_CELL_FIELDS * self.cell_dofs;
        &mut self.cells[c * len..(c + 1) * len]
    }

    #[inline]
    pub fn cell_field(&self, c: usize, field: usize) -> &[f64] {
        let n = self.cell_dofs;
        &self.cell_block(c)[field * n..(field + 1) * n]
    }

    #[inline]
    pub fn cell_field_mut(&mut self, c: usize, field: usize) -> &mut [f64] {
        let n = self.cell_dofs;
        &mut self.cell_block_mut(c)[field * n..(field + 1) * n]
    }

    #[inline]
    pub fn trace_block(&self, f: usize) -> &[f64] {
        let len = NUM_TRACE_FIELDS * self.facet_dofs;
        &self.traces[f * len..(f + 1) * len]
    }

    #[inline]
    pub fn trace_field(&self, f: usize, field: usize) -> &[f64] {
        let m = self.facet_dofs;
        &self.trace_block(f)[field * m..(field + 1) * m]
    }

    #[inline]
    pub fn trace_field_mut(&mut self, f: usize, field: usize) -> &mut [f64] {
        let m = self.facet_dofs;
        let len = NUM_TRACE_FIELDS * m;
        &mut self.traces[f * len + field * m..f * len + (field + 1) * m]
    }

    pub fn is_finite(&self) -> bool {
        self.cells.iter().chain(&self.traces).all(|v| v.is_finite())
    }
}

/// Dense local problem `A x + B lam = f`, `C x + D lam = g` for one cell.
#[derive(Clone, Debug)]
pub struct LocalBlock {
    pub a: DenseMatrix,
    pub b: DenseMatrix,
    pub c: DenseMatrix,
    pub d: DenseMatrix,
    pub rhs_cell: Vec<f64>,
    pub rhs_trace: Vec<f64>,
}

/// Trace-only Schur complement of a local block plus what is needed to
/// recover the cell unknowns.
#[derive(Clone, Debug)]
pub struct Condensed {
    pub schur: DenseMatrix,
    pub rhs: Vec<f64>,
    a_lu: DenseLu,
    b: DenseMatrix,
    f: Vec<f64>,
}

impl Condensed {
    /// Cell unknowns for given traces: `x = A^{-1} (f - B lam)`.
    pub fn recover(&self, lam: &[f64]) -> Vec<f64> {
        let bl = self.b.matvec(lam);
        let r: Vec<f64> = self.f.iter().zip(&bl).map(|(f, b)| f - b).collect();
        self.a_lu.solve(&r)
    }
}

/// Generic dense static condensation: `S = D - C A^{-1} B`, `r = g - C A^{-1} f`.
pub fn condense(local: &LocalBlock) -> Result<Condensed> {
    let a_lu = DenseLu::factor(&local.a)?;
    let ainv_b = a_lu.solve_matrix(&local.b);
    let ainv_f = a_lu.solve(&local.rhs_cell);
    let mut schur = local.d.clone();
    schur.sub_assign(&local.c.matmul(&ainv_b));
    let cf = local.c.matvec(&ainv_f);
    let rhs = local.rhs_trace.iter().zip(&cf).map(|(g, c)| g - c).collect();
    Ok(Condensed {
        schur,
        rhs,
        a_lu,
        b: local.b.clone(),
        f: local.rhs_cell.clone(),
    })
}

/// Which equation drives the polarization rows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    /// One semi-implicit step of length `dt`.
    TimeStep { dt: f64 },
    /// `P` is prescribed (L2 projection rows); the remaining fields are the
    /// discrete response to it.
    FrozenPolarization,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-11,
            rel_tol: 1e-10,
            max_iter: 30,
            max_halvings: 5,
        }
    }
}

/// Outcome of one nonlinear solve.
#[derive(Clone, Debug, PartialEq)]
pub struct NewtonReport {
    /// Number of residual evaluations that were checked against the tolerance.
    pub iterations: usize,
    pub residual: f64,
    pub initial_residual: f64,
    pub history: Vec<f64>,
}

/// Global index of every trace slot, `None` for prescribed boundary values.
#[derive(Clone, Debug)]
pub struct DofMap {
    pub global: Vec<Option<usize>>,
    pub n_free: usize,
}

impl DofMap {
    pub fn new(mesh: &Mesh, facet_dofs: usize) -> Self {
        let m = facet_dofs;
        let mut global = Vec::with_capacity(mesh.num_facets() * NUM_TRACE_FIELDS * m);
        let mut next = 0;
        for f in mesh.facets() {
            for field in 0..NUM_TRACE_FIELDS {
                let free = if field == TRACE_V {
                    !matches!(f.boundary, Some((_, BoundaryMarker::DirichletV)))
                } else {
                    f.interior
                };
                for _ in 0..m {
                    if free {
                        global.push(Some(next));
                        next += 1;
                    } else {
                        global.push(None);
                    }
                }
            }
        }
        Self { global, n_free: next }
    }
}

/// Basis values (and physical-independent reference gradients) at quadrature points.
#[derive(Clone, Debug)]
struct Tabulation {
    points: Vec<[f64; 2]>,
    weights: Vec<f64>,
    values: Vec<Vec<f64>>,
    grads: Vec<Vec<[f64; 2]>>,
}

impl Tabulation {
    fn new(basis: &CellBasis, npts: usize) -> Self {
        let rule = tensor_quadrature(&gauss_legendre(npts));
        let mut values = Vec::with_capacity(rule.len());
        let mut grads = Vec::with_capacity(rule.len());
        for p in &rule.points {
            let (v, g) = basis.eval(*p);
            values.push(v);
            grads.push(g);
        }
        Self {
            points: rule.points,
            weights: rule.weights,
            values,
            grads,
        }
    }
}

/// Matrices shared by all cells with the same size and facet layout.
#[derive(Debug)]
struct ShapeData {
    a_lin: DenseMatrix,
    b: DenseMatrix,
    c: DenseMatrix,
    d: DenseMatrix,
    mass: DenseMatrix,
    /// `App - Apf Aff^{-1} Afp` without the nonlinear contribution.
    s_lin: DenseMatrix,
    apf_affinv: DenseMatrix,
    afp: DenseMatrix,
    aff_inv: DenseMatrix,
    b_tilde_p: DenseMatrix,
    c_tilde_p: DenseMatrix,
    d_tilde: DenseMatrix,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct ShapeKey {
    level: u32,
    facets_per_side: [u8; 4],
}

/// Per-cell data kept between the Schur assembly and the recovery.
struct CellSolve {
    s_lu: DenseLu,
    /// `A^{-1} r` for the current cell residual `r`.
    ainv_r: Vec<f64>,
}

/// Discrete operator for one mesh, degree, material and mode.
pub struct HdgSystem {
    mesh: Arc<Mesh>,
    params: MaterialParams,
    split: SplitCoefficients,
    degree: usize,
    n: usize,
    m: usize,
    stab: Stabilization,
    mode: Mode,
    basis: CellBasis,
    facet_basis: FacetBasis,
    lin: Tabulation,
    nonlin: Tabulation,
    facet_rule: (Vec<f64>, Vec<f64>),
    shapes: Vec<ShapeData>,
    cell_shape: Vec<usize>,
    dofs: DofMap,
    pattern: SparseMatrix,
    /// For every cell, the value position of each (row, col) pair of its
    /// local trace slots in `pattern` (`usize::MAX` when constrained).
    positions: Vec<Vec<usize>>,
    symbolic: OnceLock<SparseSymbolic>,
}

impl HdgSystem {
    pub fn new(
        mesh: Arc<Mesh>,
        params: MaterialParams,
        degree: usize,
        stab: Stabilization,
        mode: Mode,
    ) -> Result<Self> {
        params.validate_numerics()?;
        if degree > 3 {
            return Err(GldError::Config(format!(
                "polynomial degree must be at most 3, got {degree}"
            )));
        }
        if let Mode::TimeStep { dt } = mode {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(GldError::Config(format!("time step must be positive, got {dt}")));
            }
        }
        let basis = CellBasis::new(degree);
        let facet_basis = FacetBasis::new(degree);
        let n = basis.dim();
        let m = facet_basis.dim();
        let lin = Tabulation::new(&basis, degree + 2);
        let nonlin = Tabulation::new(&basis, 3 * degree + 1);
        let fr = gauss_legendre(degree + 2);
        let facet_rule = (fr.points.iter().map(|p| p[0]).collect(), fr.weights.clone());
        let dofs = DofMap::new(&mesh, m);
        let mut sys = Self {
            split: split(&params),
            mesh,
            params,
            degree,
            n,
            m,
            stab,
            mode,
            basis,
            facet_basis,
            lin,
            nonlin,
            facet_rule,
            shapes: Vec::new(),
            cell_shape: Vec::new(),
            dofs,
            pattern: SparseMatrix::identity(0),
            positions: Vec::new(),
            symbolic: OnceLock::new(),
        };
        let mut index: HashMap<ShapeKey, usize> = HashMap::new();
        for c in 0..sys.mesh.num_cells() {
            let key = sys.shape_key(c);
            let id = match index.get(&key) {
                Some(&id) => id,
                None => {
                    let data = sys.build_shape(c)?;
                    sys.shapes.push(data);
                    index.insert(key, sys.shapes.len() - 1);
                    sys.shapes.len() - 1
                }
            };
            sys.cell_shape.push(id);
        }
        sys.build_pattern()?;
        Ok(sys)
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn params(&self) -> &MaterialParams {
        &self.params
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn stabilization(&self) -> Stabilization {
        self.stab
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn dof_map(&self) -> &DofMap {
        &self.dofs
    }

    pub fn cell_basis(&self) -> &CellBasis {
        &self.basis
    }

    pub fn facet_basis(&self) -> &FacetBasis {
        &self.facet_basis
    }

    /// Number of global (condensed) unknowns.
    pub fn num_skeleton_dofs(&self) -> usize {
        self.dofs.n_free
    }

    /// Total number of discrete unknowns, cells and all trace slots.
    pub fn num_total_dofs(&self) -> usize {
        self.mesh.num_cells() * NUM_CELL_FIELDS * self.n + self.mesh.num_facets() * NUM_TRACE_FIELDS * self.m
    }

    fn local_trace_len(&self, c: usize) -> usize {
        self.mesh.cell_facets(c).len() * NUM_TRACE_FIELDS * self.m
    }

    fn shape_key(&self, c: usize) -> ShapeKey {
        let mut counts = [0u8; 4];
        for cf in self.mesh.cell_facets(c) {
            counts[cf.side as usize] += 1;
        }
        ShapeKey {
            level: self.mesh.cell(c).level,
            facets_per_side: counts,
        }
    }

    fn build_shape(&self, c: usize) -> Result<ShapeData> {
        let n = self.n;
        let m = self.m;
        let h = self.mesh.cell_size(c);
        let jac = 0.25 * h[0] * h[1];
        let inv = [2.0 / h[0], 2.0 / h[1]];
        let eps = self.params.epsilon;
        let Stabilization { tau_v, tau_p } = self.stab;

        let mut mass = DenseMatrix::zeros(n, n);
        let mut grad = [DenseMatrix::zeros(n, n), DenseMatrix::zeros(n, n)];
        for q in 0..self.lin.weights.len() {
            let w = self.lin.weights[q] * jac;
            let v = &self.lin.values[q];
            let g = &self.lin.grads[q];
            for a in 0..n {
                for b in 0..n {
                    mass[(a, b)] += w * v[a] * v[b];
                    for j in 0..2 {
                        grad[j][(a, b)] += w * g[a][j] * inv[j] * v[b];
                    }
                }
            }
        }

        // whole-side boundary masses
        let (fpts, fwts) = &self.facet_rule;
        let side_point = |side: Side, t: f64| -> [f64; 2] {
            match side {
                Side::Left => [-1.0, t],
                Side::Right => [1.0, t],
                Side::Bottom => [t, -1.0],
                Side::Top => [t, 1.0],
            }
        };
        let side_len = |side: Side| h[1 - side.normal_axis()];
        let mut sum_bf = DenseMatrix::zeros(n, n);
        let mut nu_bf = [DenseMatrix::zeros(n, n), DenseMatrix::zeros(n, n)];
        for side in Side::ALL {
            let ds = 0.5 * side_len(side);
            let mut bf = DenseMatrix::zeros(n, n);
            for (t, w) in fpts.iter().zip(fwts) {
                let (v, _) = self.basis.eval(side_point(side, *t));
                for a in 0..n {
                    for b in 0..n {
                        bf[(a, b)] += w * ds * v[a] * v[b];
                    }
                }
            }
            sum_bf.add_block(0, 0, &bf, 1.0);
            nu_bf[side.normal_axis()].add_block(0, 0, &bf, side.normal_sign());
        }

        let blk = |field: usize| field * n;
        let size = NUM_CELL_FIELDS * n;
        let mut a = DenseMatrix::zeros(size, size);
        for j in 0..2 {
            // flux definition E_j = -d_j V
            a.add_block(blk(field_e(j)), blk(field_e(j)), &mass, 1.0);
            a.add_block(blk(field_e(j)), blk(FIELD_V), &grad[j], -1.0);
            // Gauss law
            a.add_block(blk(FIELD_V), blk(field_e(j)), &grad[j], -eps);
            a.add_block(blk(FIELD_V), blk(field_e(j)), &nu_bf[j], eps);
            a.add_block(blk(FIELD_V), blk(field_p(j)), &grad[j], -1.0);
        }
        a.add_block(blk(FIELD_V), blk(FIELD_V), &sum_bf, tau_v);
        for i in 0..2 {
            let comp = &self.params.components[i];
            for j in 0..2 {
                a.add_block(blk(field_u(i, j)), blk(field_u(i, j)), &mass, 1.0);
                a.add_block(blk(field_u(i, j)), blk(field_p(i)), &grad[j], -comp.g);
            }
            match self.mode {
                Mode::TimeStep { dt } => {
                    a.add_block(blk(field_p(i)), blk(field_p(i)), &mass, comp.rho_v / dt);
                    a.add_block(blk(field_p(i)), blk(field_p(i)), &sum_bf, tau_p);
                    a.add_block(blk(field_p(i)), blk(field_e(i)), &mass, -1.0);
                    for j in 0..2 {
                        a.add_block(blk(field_p(i)), blk(field_u(i, j)), &grad[j], -1.0);
                        a.add_block(blk(field_p(i)), blk(field_u(i, j)), &nu_bf[j], 1.0);
                    }
                }
                Mode::FrozenPolarization => {
                    a.add_block(blk(field_p(i)), blk(field_p(i)), &mass, 1.0);
                }
            }
        }

        let cfs = self.mesh.cell_facets(c);
        let nt = cfs.len() * NUM_TRACE_FIELDS * m;
        let mut b = DenseMatrix::zeros(size, nt);
        let mut cm = DenseMatrix::zeros(nt, size);
        let mut d = DenseMatrix::zeros(nt, nt);
        for (lf, cf) in cfs.iter().enumerate() {
            let nu = cf.side.outward_normal();
            let flen = 0.5 * (cf.sub[1] - cf.sub[0]) * side_len(cf.side);
            let ds = 0.5 * flen;
            let mut tf = DenseMatrix::zeros(n, m);
            let mut ff = DenseMatrix::zeros(m, m);
            for (s, w) in fpts.iter().zip(fwts) {
                let t = cf.sub[0] + 0.5 * (s + 1.0) * (cf.sub[1] - cf.sub[0]);
                let (v, _) = self.basis.eval(side_point(cf.side, t));
                let (xi, _) = self.facet_basis.eval(*s);
                for a_ in 0..n {
                    for b_ in 0..m {
                        tf[(a_, b_)] += w * ds * v[a_] * xi[b_];
                    }
                }
                for a_ in 0..m {
                    for b_ in 0..m {
                        ff[(a_, b_)] += w * ds * xi[a_] * xi[b_];
                    }
                }
            }
            let tcol = |field: usize| lf * NUM_TRACE_FIELDS * m + field * m;
            for j in 0..2 {
                if nu[j] == 0.0 {
                    continue;
                }
                b.add_block(blk(field_e(j)), tcol(TRACE_V), &tf, nu[j]);
                b.add_block(blk(FIELD_V), tcol(TRACE_P1 + j), &tf, nu[j]);
                cm.add_block_transposed(tcol(TRACE_V), blk(field_e(j)), &tf, eps * nu[j]);
                d.add_block(tcol(TRACE_V), tcol(TRACE_P1 + j), &ff, nu[j]);
                for i in 0..2 {
                    let g = self.params.components[i].g;
                    b.add_block(blk(field_u(i, j)), tcol(TRACE_P1 + i), &tf, g * nu[j]);
                    cm.add_block_transposed(tcol(TRACE_P1 + i), blk(field_u(i, j)), &tf, nu[j]);
                }
            }
            b.add_block(blk(FIELD_V), tcol(TRACE_V), &tf, -tau_v);
            cm.add_block_transposed(tcol(TRACE_V), blk(FIELD_V), &tf, tau_v);
            d.add_block(tcol(TRACE_V), tcol(TRACE_V), &ff, -tau_v);
            for i in 0..2 {
                if let Mode::TimeStep { .. } = self.mode {
                    b.add_block(blk(field_p(i)), tcol(TRACE_P1 + i), &tf, -tau_p);
                }
                cm.add_block_transposed(tcol(TRACE_P1 + i), blk(field_p(i)), &tf, tau_p);
                d.add_block(tcol(TRACE_P1 + i), tcol(TRACE_P1 + i), &ff, -tau_p);
            }
        }

        // block elimination of the flux unknowns
        let np = 3 * n;
        let nf = 6 * n;
        let app = a.block(0, 0, np, np);
        let apf = a.block(0, np, np, nf);
        let afp = a.block(np, 0, nf, np);
        let aff = a.block(np, np, nf, nf);
        let aff_inv = DenseLu::factor(&aff)
            .map_err(|e| GldError::Assembly {
                cell: c,
                source: Box::new(e),
            })?
            .inverse();
        let apf_affinv = apf.matmul(&aff_inv);
        let mut s_lin = app;
        s_lin.sub_assign(&apf_affinv.matmul(&afp));
        let bp = b.block(0, 0, np, nt);
        let bf = b.block(np, 0, nf, nt);
        let cp = cm.block(0, 0, nt, np);
        let cf = cm.block(0, np, nt, nf);
        let mut b_tilde_p = bp;
        b_tilde_p.sub_assign(&apf_affinv.matmul(&bf));
        let cf_affinv = cf.matmul(&aff_inv);
        let mut c_tilde_p = cp;
        c_tilde_p.sub_assign(&cf_affinv.matmul(&afp));
        let mut d_tilde = d.clone();
        d_tilde.sub_assign(&cf_affinv.matmul(&bf));

        Ok(ShapeData {
            a_lin: a,
            b,
            c: cm,
            d,
            mass,
            s_lin,
            apf_affinv,
            afp,
            aff_inv,
            b_tilde_p,
            c_tilde_p,
            d_tilde,
        })
    }

    fn build_pattern(&mut self) -> Result<()> {
        let mut trip = Vec::new();
        let mut locals = Vec::with_capacity(self.mesh.num_cells());
        for c in 0..self.mesh.num_cells() {
            let g = self.local_globals(c);
            for gi in g.iter().flatten() {
                for gj in g.iter().flatten() {
                    trip.push((*gi, *gj, 0.0));
                }
            }
            locals.push(g);
        }
        let nfree = self.dofs.n_free;
        self.pattern = SparseMatrix::from_triplets(nfree, nfree, &trip)?;
        self.positions = locals
            .iter()
            .map(|g| {
                let mut pos = Vec::with_capacity(g.len() * g.len());
                for gi in g {
                    for gj in g {
                        pos.push(match (gi, gj) {
                            (Some(i), Some(j)) => self.pattern.position(*i, *j).expect("pattern entry"),
                            _ => usize::MAX,
                        });
                    }
                }
                pos
            })
            .collect();
        Ok(())
    }

    /// Global index of each local trace slot of cell `c`.
    pub fn local_globals(&self, c: usize) -> Vec<Option<usize>> {
        let per = NUM_TRACE_FIELDS * self.m;
        let mut out = Vec::with_capacity(self.local_trace_len(c));
        for cf in self.mesh.cell_facets(c) {
            out.extend_from_slice(&self.dofs.global[cf.facet * per..(cf.facet + 1) * per]);
        }
        out
    }

    fn gather_traces(&self, c: usize, state: &StateFields) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.local_trace_len(c));
        for cf in self.mesh.cell_facets(c) {
            out.extend_from_slice(state.trace_block(cf.facet));
        }
        out
    }

    fn check_state(&self, state: &StateFields) -> Result<()> {
        if state.degree != self.degree
            || state.cells.len() != self.mesh.num_cells() * NUM_CELL_FIELDS * self.n
            || state.traces.len() != self.mesh.num_facets() * NUM_TRACE_FIELDS * self.m
        {
            return Err(GldError::Dimension("state does not match the discretization".into()));
        }
        Ok(())
    }

    /// L2 projection of a scalar function onto the facet basis.
    pub fn project_on_facet(&self, f: usize, func: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        let m = self.m;
        let (pts, wts) = &self.facet_rule;
        let mut mass = DenseMatrix::zeros(m, m);
        let mut rhs = vec![0.0; m];
        for (s, w) in pts.iter().zip(wts) {
            let (xi, _) = self.facet_basis.eval(*s);
            let val = func(self.mesh.map_to_facet(f, *s));
            for a in 0..m {
                rhs[a] += w * val * xi[a];
                for b in 0..m {
                    mass[(a, b)] += w * xi[a] * xi[b];
                }
            }
        }
        DenseLu::factor(&mass).expect("facet mass is SPD").solve(&rhs)
    }

    /// Writes the prescribed trace values (Dirichlet potential, boundary
    /// polarization) at time `t` into `state`.
    pub fn apply_boundary_data(&self, state: &mut StateFields, t: f64, data: &dyn ProblemData) {
        for (f, facet) in self.mesh.facets().iter().enumerate() {
            let Some((_, marker)) = facet.boundary else { continue };
            if marker == BoundaryMarker::DirichletV {
                let v = self.project_on_facet(f, |x| data.dirichlet_potential(t, x));
                state.trace_field_mut(f, TRACE_V).copy_from_slice(&v);
            }
            for i in 0..2 {
                let p = self.project_on_facet(f, |x| data.boundary_polarization(t, x)[i]);
                state.trace_field_mut(f, TRACE_P1 + i).copy_from_slice(&p);
            }
        }
    }

    /// Cell right-hand sides `f_K`, fixed during one nonlinear solve.
    /// In time-step mode `reference` is the previous state; in frozen mode it
    /// holds the prescribed polarization.
    fn cell_rhs(&self, reference: &StateFields, t: f64, data: &dyn ProblemData) -> Vec<Vec<f64>> {
        let n = self.n;
        (0..self.mesh.num_cells())
            .map(|c| {
                let shape = &self.shapes[self.cell_shape[c]];
                let jac = 0.25 * self.mesh.cell_area(c);
                let mut f = vec![0.0; NUM_CELL_FIELDS * n];
                let tab = &self.nonlin;
                let p_old: [&[f64]; 2] = [reference.cell_field(c, FIELD_P1), reference.cell_field(c, FIELD_P2)];
                for q in 0..tab.weights.len() {
                    let w = tab.weights[q] * jac;
                    let v = &tab.values[q];
                    let x = self.mesh.map_to_cell(c, tab.points[q]);
                    let rho = data.charge(t, x);
                    for a in 0..n {
                        f[FIELD_V * n + a] += w * rho * v[a];
                    }
                    if let Mode::TimeStep { .. } = self.mode {
                        let g = data.forcing(t, x);
                        for i in 0..2 {
                            let p = dot(v, p_old[i]);
                            let val = self.split.minus[i].derivative(p) + g[i];
                            for a in 0..n {
                                f[field_p(i) * n + a] += w * val * v[a];
                            }
                        }
                    }
                }
                for i in 0..2 {
                    let scale = match self.mode {
                        Mode::TimeStep { dt } => self.params.components[i].rho_v / dt,
                        Mode::FrozenPolarization => 1.0,
                    };
                    if scale != 0.0 {
                        let mp = shape.mass.matvec(p_old[i]);
                        for a in 0..n {
                            f[field_p(i) * n + a] += scale * mp[a];
                        }
                    }
                }
                f
            })
            .collect()
    }

    /// Nonlinear term `(DF+(P_i), phi)` and, if requested, its Jacobian
    /// blocks `(F+''(P_i) phi, phi)`.
    fn nonlinear_terms(&self, c: usize, x: &[f64], with_jacobian: bool) -> ([Vec<f64>; 2], Option<[DenseMatrix; 2]>) {
        let n = self.n;
        let jac = 0.25 * self.mesh.cell_area(c);
        let mut res = [vec![0.0; n], vec![0.0; n]];
        let mut jm = if with_jacobian {
            Some([DenseMatrix::zeros(n, n), DenseMatrix::zeros(n, n)])
        } else {
            None
        };
        if self.mode == Mode::FrozenPolarization {
            return (res, jm);
        }
        let tab = &self.nonlin;
        for i in 0..2 {
            let part = self.split.plus[i];
            if part.alpha == 0.0 && part.beta == 0.0 && part.gamma == 0.0 {
                continue;
            }
            let coef = &x[field_p(i) * n..(field_p(i) + 1) * n];
            for q in 0..tab.weights.len() {
                let w = tab.weights[q] * jac;
                let v = &tab.values[q];
                let p = dot(v, coef);
                let d1 = w * part.derivative(p);
                for a in 0..n {
                    res[i][a] += d1 * v[a];
                }
                if let Some(jm) = jm.as_mut() {
                    let d2 = w * part.second_derivative(p);
                    for a in 0..n {
                        let da = d2 * v[a];
                        let row = jm[i].row_mut(a);
                        for b in 0..n {
                            row[b] += da * v[b];
                        }
                    }
                }
            }
        }
        (res, jm)
    }

    /// Cell residual `A_lin x + N(P) + B lam - f`.
    fn cell_residual(&self, c: usize, x: &[f64], lam: &[f64], f: &[f64]) -> Vec<f64> {
        let shape = &self.shapes[self.cell_shape[c]];
        let mut r = shape.a_lin.matvec(x);
        shape.b.matvec_add(lam, &mut r);
        let (nl, _) = self.nonlinear_terms(c, x, false);
        let n = self.n;
        for i in 0..2 {
            for a in 0..n {
                r[field_p(i) * n + a] += nl[i][a];
            }
        }
        for (ri, fi) in r.iter_mut().zip(f) {
            *ri -= fi;
        }
        r
    }

    /// Full residual: per-cell residuals and the assembled free trace rows.
    fn residual(&self, state: &StateFields, rhs: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>, f64) {
        let mut cell_res = Vec::with_capacity(self.mesh.num_cells());
        let mut trace_res = vec![0.0; self.dofs.n_free];
        let mut sq = 0.0;
        for c in 0..self.mesh.num_cells() {
            let shape = &self.shapes[self.cell_shape[c]];
            let x = state.cell_block(c);
            let lam = self.gather_traces(c, state);
            let r = self.cell_residual(c, x, &lam, &rhs[c]);
            sq += r.iter().map(|v| v * v).sum::<f64>();
            cell_res.push(r);
            let mut g = shape.c.matvec(x);
            shape.d.matvec_add(&lam, &mut g);
            for (gi, val) in self.local_globals(c).iter().zip(&g) {
                if let Some(gi) = gi {
                    trace_res[*gi] += val;
                }
            }
        }
        sq += trace_res.iter().map(|v| v * v).sum::<f64>();
        (cell_res, trace_res, sq.sqrt())
    }

    /// Solves `A y = v` for one cell through the primal Schur complement.
    fn apply_ainv(&self, shape: &ShapeData, s_lu: &DenseLu, v: &[f64]) -> Vec<f64> {
        let np = 3 * self.n;
        let (vp, vf) = v.split_at(np);
        let mut rp = vp.to_vec();
        let t = shape.apf_affinv.matvec(vf);
        for (r, t) in rp.iter_mut().zip(&t) {
            *r -= t;
        }
        let xp = s_lu.solve(&rp);
        let afp_x = shape.afp.matvec(&xp);
        let rf: Vec<f64> = vf.iter().zip(&afp_x).map(|(a, b)| a - b).collect();
        let xf = shape.aff_inv.matvec(&rf);
        let mut out = xp;
        out.extend(xf);
        out
    }

    fn primal_schur(&self, c: usize, x: &[f64]) -> Result<DenseLu> {
        let shape = &self.shapes[self.cell_shape[c]];
        let (_, jm) = self.nonlinear_terms(c, x, true);
        let mut s = shape.s_lin.clone();
        let n = self.n;
        if let Some(jm) = jm {
            for i in 0..2 {
                s.add_block(field_p(i) * n, field_p(i) * n, &jm[i], 1.0);
            }
        }
        DenseLu::factor(&s).map_err(|e| GldError::Assembly {
            cell: c,
            source: Box::new(e),
        })
    }

    /// Linearized local problem of cell `c` at `state`, in Newton-correction
    /// form: `A dx + B dlam = -r_cell`, `C dx + D dlam = -(C x + D lam)`.
    pub fn local_block(
        &self,
        c: usize,
        state: &StateFields,
        reference: &StateFields,
        t: f64,
        data: &dyn ProblemData,
    ) -> Result<LocalBlock> {
        self.check_state(state)?;
        self.check_state(reference)?;
        let shape = &self.shapes[self.cell_shape[c]];
        let rhs = self.cell_rhs_single(c, reference, t, data);
        let x = state.cell_block(c);
        let lam = self.gather_traces(c, state);
        let r = self.cell_residual(c, x, &lam, &rhs);
        let (_, jm) = self.nonlinear_terms(c, x, true);
        let mut a = shape.a_lin.clone();
        let n = self.n;
        if let Some(jm) = jm {
            for i in 0..2 {
                a.add_block(field_p(i) * n, field_p(i) * n, &jm[i], 1.0);
            }
        }
        let mut g = shape.c.matvec(x);
        shape.d.matvec_add(&lam, &mut g);
        Ok(LocalBlock {
            a,
            b: shape.b.clone(),
            c: shape.c.clone(),
            d: shape.d.clone(),
            rhs_cell: r.iter().map(|v| -v).collect(),
            rhs_trace: g.iter().map(|v| -v).collect(),
        })
    }

    fn cell_rhs_single(&self, c: usize, reference: &StateFields, t: f64, data: &dyn ProblemData) -> Vec<f64> {
        // cheap enough for the oracle paths; the solver uses `cell_rhs`
        self.cell_rhs(reference, t, data).swap_remove(c)
    }

    /// The fast condensed Schur complement of cell `c` linearized at `state`
    /// (exposed for cross-checking against `condense`).
    pub fn condensed_schur(&self, c: usize, state: &StateFields) -> Result<DenseMatrix> {
        let shape = &self.shapes[self.cell_shape[c]];
        let s_lu = self.primal_schur(c, state.cell_block(c))?;
        let y = s_lu.solve_matrix(&shape.b_tilde_p);
        let mut schur = shape.d_tilde.clone();
        schur.sub_assign(&shape.c_tilde_p.matmul(&y));
        Ok(schur)
    }

    fn symbolic(&self) -> Result<&SparseSymbolic> {
        if let Some(s) = self.symbolic.get() {
            return Ok(s);
        }
        let s = SparseSymbolic::analyze(&self.pattern)?;
        Ok(self.symbolic.get_or_init(|| s))
    }

    /// One Newton correction at `state` given cell residuals.
    fn newton_direction(
        &self,
        state: &StateFields,
        cell_res: &[Vec<f64>],
        trace_res: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let ncell = self.mesh.num_cells();
        let mut mat = self.pattern.clone();
        let mut rhs: Vec<f64> = trace_res.iter().map(|v| -v).collect();
        let mut solves = Vec::with_capacity(ncell);
        for c in 0..ncell {
            let shape = &self.shapes[self.cell_shape[c]];
            let s_lu = self.primal_schur(c, state.cell_block(c))?;
            let ainv_r = self.apply_ainv(shape, &s_lu, &cell_res[c]);
            let y = s_lu.solve_matrix(&shape.b_tilde_p);
            let mut schur = shape.d_tilde.clone();
            schur.sub_assign(&shape.c_tilde_p.matmul(&y));
            let c_ainv_r = shape.c.matvec(&ainv_r);
            let globals = self.local_globals(c);
            let nt = globals.len();
            let pos = &self.positions[c];
            let vals = mat.values_mut();
            for i in 0..nt {
                if globals[i].is_none() {
                    continue;
                }
                let row = schur.row(i);
                for j in 0..nt {
                    let p = pos[i * nt + j];
                    if p != usize::MAX {
                        vals[p] += row[j];
                    }
                }
            }
            for (gi, v) in globals.iter().zip(&c_ainv_r) {
                if let Some(gi) = gi {
                    rhs[*gi] += v;
                }
            }
            solves.push(CellSolve { s_lu, ainv_r });
        }
        let dlam_free = if self.dofs.n_free > 0 {
            self.symbolic()?.factor(&mat)?.solve(&rhs)?
        } else {
            Vec::new()
        };
        // recovery: dx = -A^{-1} (r + B dlam)
        let nb = NUM_CELL_FIELDS * self.n;
        let mut dx = vec![0.0; ncell * nb];
        for c in 0..ncell {
            let shape = &self.shapes[self.cell_shape[c]];
            let dlam: Vec<f64> = self
                .local_globals(c)
                .iter()
                .map(|g| g.map_or(0.0, |g| dlam_free[g]))
                .collect();
            let bd = shape.b.matvec(&dlam);
            let corr = self.apply_ainv(shape, &solves[c].s_lu, &bd);
            for ((d, y), z) in dx[c * nb..(c + 1) * nb].iter_mut().zip(&solves[c].ainv_r).zip(&corr) {
                *d = -y - z;
            }
        }
        Ok((dx, dlam_free))
    }

    fn apply_update(&self, state: &mut StateFields, dx: &[f64], dlam: &[f64], step: f64) {
        for (x, d) in state.cells.iter_mut().zip(dx) {
            *x += step * d;
        }
        for (slot, g) in self.dofs.global.iter().enumerate() {
            if let Some(g) = g {
                state.traces[slot] += step * dlam[*g];
            }
        }
    }

    /// Solves the nonlinear system for one time level starting from `guess`.
    ///
    /// In time-step mode `reference` is the previous time level; in frozen
    /// mode it provides the prescribed polarization. Boundary trace values
    /// are overwritten with the data at time `t`.
    pub fn solve(
        &self,
        reference: &StateFields,
        guess: StateFields,
        t: f64,
        data: &dyn ProblemData,
        newton: &NewtonConfig,
        step_index: usize,
    ) -> Result<(StateFields, NewtonReport)> {
        self.check_state(reference)?;
        self.check_state(&guess)?;
        let mut state = guess;
        self.apply_boundary_data(&mut state, t, data);
        state.time = t;
        state.step = step_index;
        let rhs = self.cell_rhs(reference, t, data);
        let (mut cell_res, mut trace_res, mut norm) = self.residual(&state, &rhs);
        let initial = norm;
        let mut history = vec![norm];
        let mut iterations = 1;
        loop {
            if !norm.is_finite() {
                return Err(GldError::Divergence { step: step_index });
            }
            if norm <= newton.abs_tol + newton.rel_tol * initial {
                return Ok((
                    state,
                    NewtonReport {
                        iterations,
                        residual: norm,
                        initial_residual: initial,
                        history,
                    },
                ));
            }
            if iterations >= newton.max_iter {
                return Err(GldError::NonConvergence {
                    step: step_index,
                    iterations,
                    residual: norm,
                });
            }
            let (dx, dlam) = self.newton_direction(&state, &cell_res, &trace_res)?;
            let mut step = 1.0;
            let mut best: Option<(StateFields, Vec<Vec<f64>>, Vec<f64>, f64)> = None;
            for _ in 0..=newton.max_halvings {
                let mut trial = state.clone();
                self.apply_update(&mut trial, &dx, &dlam, step);
                let (cr, tr, nr) = self.residual(&trial, &rhs);
                let better = nr.is_finite() && best.as_ref().is_none_or(|b| nr < b.3);
                if better {
                    best = Some((trial, cr, tr, nr));
                }
                if nr.is_finite() && nr <= norm {
                    break;
                }
                step *= 0.5;
            }
            let Some((s, cr, tr, nr)) = best else {
                return Err(GldError::Divergence { step: step_index });
            };
            state = s;
            cell_res = cr;
            trace_res = tr;
            norm = nr;
            history.push(norm);
            iterations += 1;
        }
    }

    /// Assembled free trace-row residuals (transmission conditions) of a state.
    pub fn transmission_residual(&self, state: &StateFields) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let mut trace_res = vec![0.0; self.dofs.n_free];
        for c in 0..self.mesh.num_cells() {
            let shape = &self.shapes[self.cell_shape[c]];
            let lam = self.gather_traces(c, state);
            let mut g = shape.c.matvec(state.cell_block(c));
            shape.d.matvec_add(&lam, &mut g);
            for (gi, val) in self.local_globals(c).iter().zip(&g) {
                if let Some(gi) = gi {
                    trace_res[*gi] += val;
                }
            }
        }
        Ok(trace_res)
    }

    /// Largest transmission residual over the interior facets.
    pub fn max_interior_transmission_residual(&self, state: &StateFields) -> Result<f64> {
        let r = self.transmission_residual(state)?;
        let per = NUM_TRACE_FIELDS * self.m;
        let mut worst: f64 = 0.0;
        for (slot, g) in self.dofs.global.iter().enumerate() {
            if let Some(g) = g {
                if self.mesh.facet(slot / per).interior {
                    worst = worst.max(r[*g].abs());
                }
            }
        }
        Ok(worst)
    }

    /// Norm of the cell residuals of a state (local equations given its traces).
    pub fn local_residual_norm(
        &self,
        state: &StateFields,
        reference: &StateFields,
        t: f64,
        data: &dyn ProblemData,
    ) -> Result<f64> {
        self.check_state(state)?;
        let rhs = self.cell_rhs(reference, t, data);
        let mut sq = 0.0;
        for c in 0..self.mesh.num_cells() {
            let lam = self.gather_traces(c, state);
            let r = self.cell_residual(c, state.cell_block(c), &lam, &rhs[c]);
            sq += r.iter().map(|v| v * v).sum::<f64>();
        }
        Ok(sq.sqrt())
    }

    /// Global sparse skeleton matrix of the linearization at `state`
    /// (for determinism checks and debugging dumps).
    pub fn skeleton_matrix(&self, state: &StateFields) -> Result<SparseMatrix> {
        self.check_state(state)?;
        let mut mat = self.pattern.clone();
        for c in 0..self.mesh.num_cells() {
            let schur = self.condensed_schur(c, state)?;
            let globals = self.local_globals(c);
            let nt = globals.len();
            let pos = &self.positions[c];
            let vals = mat.values_mut();
            for i in 0..nt {
                for j in 0..nt {
                    let p = pos[i * nt + j];
                    if p != usize::MAX {
                        vals[p] += schur[(i, j)];
                    }
                }
            }
        }
        Ok(mat)
    }

    /// Normal displacement flux `(eps E^ + P^).nu` integrated over the boundary
    /// facets of one domain side, with the outward normal of the domain.
    pub fn boundary_displacement(&self, state: &StateFields, side: Side) -> f64 {
        let eps = self.params.epsilon;
        let tau_v = self.stab.tau_v;
        let (pts, wts) = &self.facet_rule;
        let mut total = 0.0;
        for (f, facet) in self.mesh.facets().iter().enumerate() {
            if facet.boundary.map(|b| b.0) != Some(side) {
                continue;
            }
            let c = facet.cells[0];
            let cf = self
                .mesh
                .cell_facets(c)
                .iter()
                .find(|cf| cf.facet == f)
                .expect("facet of its cell");
            let nu = side.outward_normal();
            let ds = 0.5 * facet.length;
            for (s, w) in pts.iter().zip(wts) {
                let t = cf.sub[0] + 0.5 * (s + 1.0) * (cf.sub[1] - cf.sub[0]);
                let xi_cell = match side {
                    Side::Left => [-1.0, t],
                    Side::Right => [1.0, t],
                    Side::Bottom => [t, -1.0],
                    Side::Top => [t, 1.0],
                };
                let (v, _) = self.basis.eval(xi_cell);
                let (xi, _) = self.facet_basis.eval(*s);
                let e_nu =
                    nu[0] * dot(&v, state.cell_field(c, FIELD_E1)) + nu[1] * dot(&v, state.cell_field(c, FIELD_E2));
                let ph_nu = nu[0] * dot(&xi, state.trace_field(f, TRACE_P1))
                    + nu[1] * dot(&xi, state.trace_field(f, TRACE_P1 + 1));
                let vv = dot(&v, state.cell_field(c, FIELD_V));
                let vh = dot(&xi, state.trace_field(f, TRACE_V));
                total += w * ds * numerical_flux_poisson(eps * e_nu, ph_nu, vv, vh, tau_v);
            }
        }
        total
    }
}

/// Volume and skeleton integrals entering the two discrete energy expressions.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyForms {
    /// `eps/2 ||E||^2`
    pub field: f64,
    /// `tau_V/2 sum_K ||V - V^||^2 on dK`
    pub stabilization: f64,
    /// `tau_P/2 sum_K ||P - P^||^2 on dK`
    pub polarization_stabilization: f64,
    /// `(rho, V)`
    pub charge_work: f64,
    /// `(P, grad_h V) - sum_K <P^.nu, V - V^> on dK`
    pub polarization_work: f64,
    /// `int F(P)`
    pub landau: f64,
    /// `sum_i 1/(2 g_i) ||U_i||^2` over components with `g_i > 0`
    pub gradient: f64,
}

impl HdgSystem {
    /// Evaluates the energy integrals of a state. Volume terms use the
    /// high-order rule.
    pub fn energy_forms(&self, state: &StateFields, t: f64, data: &dyn ProblemData) -> EnergyForms {
        let n = self.n;
        let eps = self.params.epsilon;
        let tab = &self.nonlin;
        let mut out = EnergyForms::default();
        let grads: Vec<Vec<[f64; 2]>> = tab.points.iter().map(|p| self.basis.eval(*p).1).collect();
        for c in 0..self.mesh.num_cells() {
            let h = self.mesh.cell_size(c);
            let jac = 0.25 * h[0] * h[1];
            let x = state.cell_block(c);
            let fld = |f: usize| &x[f * n..(f + 1) * n];
            for q in 0..tab.weights.len() {
                let w = tab.weights[q] * jac;
                let v = &tab.values[q];
                let e = [dot(v, fld(FIELD_E1)), dot(v, fld(FIELD_E2))];
                out.field += w * 0.5 * eps * (e[0] * e[0] + e[1] * e[1]);
                let vv = dot(v, fld(FIELD_V));
                let mut grad_v = [0.0; 2];
                for a in 0..n {
                    grad_v[0] += grads[q][a][0] * 2.0 / h[0] * fld(FIELD_V)[a];
                    grad_v[1] += grads[q][a][1] * 2.0 / h[1] * fld(FIELD_V)[a];
                }
                out.charge_work += w * data.charge(t, self.mesh.map_to_cell(c, tab.points[q])) * vv;
                for i in 0..2 {
                    let comp = &self.params.components[i];
                    let p = dot(v, fld(field_p(i)));
                    out.polarization_work += w * p * grad_v[i];
                    out.landau += w * (p * p * (comp.alpha + p * p * (comp.beta + p * p * comp.gamma)));
                    if comp.g > 0.0 {
                        let u = [dot(v, fld(field_u(i, 0))), dot(v, fld(field_u(i, 1)))];
                        out.gradient += w * (u[0] * u[0] + u[1] * u[1]) / (2.0 * comp.g);
                    }
                }
            }
            let (pts, wts) = &self.facet_rule;
            let side_len = |side: Side| h[1 - side.normal_axis()];
            for cf in self.mesh.cell_facets(c) {
                let nu = cf.side.outward_normal();
                let ds = 0.25 * (cf.sub[1] - cf.sub[0]) * side_len(cf.side);
                for (s, w) in pts.iter().zip(wts) {
                    let tt = cf.sub[0] + 0.5 * (s + 1.0) * (cf.sub[1] - cf.sub[0]);
                    let xi_cell = match cf.side {
                        Side::Left => [-1.0, tt],
                        Side::Right => [1.0, tt],
                        Side::Bottom => [tt, -1.0],
                        Side::Top => [tt, 1.0],
                    };
                    let (v, _) = self.basis.eval(xi_cell);
                    let (xi, _) = self.facet_basis.eval(*s);
                    let jump = dot(&v, fld(FIELD_V)) - dot(&xi, state.trace_field(cf.facet, TRACE_V));
                    let ph_nu = nu[0] * dot(&xi, state.trace_field(cf.facet, TRACE_P1))
                        + nu[1] * dot(&xi, state.trace_field(cf.facet, TRACE_P1 + 1));
                    out.stabilization += w * ds * 0.5 * self.stab.tau_v * jump * jump;
                    for i in 0..2 {
                        let pj = dot(&v, fld(field_p(i))) - dot(&xi, state.trace_field(cf.facet, TRACE_P1 + i));
                        out.polarization_stabilization += w * ds * 0.5 * self.stab.tau_p * pj * pj;
                    }
                    out.polarization_work -= w * ds * ph_nu * jump;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_rectangle_mesh, refine_adaptive, EdgeSet};

    fn unit_params() -> MaterialParams {
        MaterialParams::isotropic_ferroelectric(1.0, 1.0, 0.0, 0.0, 1.0, 1.0)
    }

    fn mesh(nx: usize, ny: usize) -> Arc<Mesh> {
        Arc::new(
            build_rectangle_mesh(
                1.0,
                1.0,
                nx,
                ny,
                EdgeSet::TOP | EdgeSet::BOTTOM,
                EdgeSet::LEFT | EdgeSet::RIGHT,
            )
            .unwrap(),
        )
    }

    #[test]
    fn stabilization_values() {
        let m = mesh(1, 1);
        let s = set_stabilization(&unit_params(), &m);
        assert!((s.tau_v - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!((s.tau_p - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        let mut p2 = unit_params();
        p2.epsilon = 2.0;
        let s2 = set_stabilization(&p2, &m);
        assert!((s2.tau_v - 2.0 * s.tau_v).abs() < 1e-15 && s2.tau_p == s.tau_p);
        let slab = build_rectangle_mesh(
            80e-9,
            40e-9,
            2,
            1,
            EdgeSet::TOP | EdgeSet::BOTTOM,
            EdgeSet::LEFT | EdgeSet::RIGHT,
        )
        .unwrap();
        assert!((slab.diameter() - 80e-9f64.hypot(40e-9)).abs() < 1e-22);
    }

    #[test]
    fn flux_consistency() {
        assert_eq!(numerical_flux_poisson(1.5, 0.5, 2.0, 2.0, 7.0), 2.0);
        assert_eq!(numerical_flux_polarization(0.25, 3.0, 3.0, 9.0), 0.25);
        let a = numerical_flux_poisson(1.0, 2.0, 3.0, 4.0, 0.5);
        let b = numerical_flux_poisson(2.0, 4.0, 6.0, 8.0, 0.5);
        assert!((2.0 * a - b).abs() < 1e-15);
    }

    #[test]
    fn condense_trivial_blocks() {
        let local = LocalBlock {
            a: DenseMatrix::identity(2),
            b: DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]),
            c: DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]),
            d: DenseMatrix::from_rows(&[vec![10.0, 0.0], vec![0.0, 10.0]]),
            rhs_cell: vec![1.0, 1.0],
            rhs_trace: vec![0.0, 0.0],
        };
        let cd = condense(&local).unwrap();
        assert_eq!(cd.schur, DenseMatrix::from_rows(&[vec![9.0, -2.0], vec![-3.0, 6.0]]));
        let zero_c = LocalBlock {
            c: DenseMatrix::zeros(2, 2),
            ..local.clone()
        };
        assert_eq!(condense(&zero_c).unwrap().schur, local.d);
        let singular = LocalBlock {
            a: DenseMatrix::zeros(2, 2),
            ..local
        };
        assert!(condense(&singular).is_err());
    }

    fn fast_matches_generic(sys: &HdgSystem, state: &StateFields) {
        for c in 0..sys.mesh().num_cells() {
            let lb = sys.local_block(c, state, state, 0.0, &ZeroData).unwrap();
            let generic = condense(&lb).unwrap().schur;
            let fast = sys.condensed_schur(c, state).unwrap();
            let scale = generic.norm_inf();
            for i in 0..generic.rows() {
                for j in 0..generic.cols() {
                    assert!(
                        (generic[(i, j)] - fast[(i, j)]).abs() <= 1e-12 * scale,
                        "cell {c} ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn fast_condensation_matches_dense_condensation() {
        let params = MaterialParams::isotropic_ferroelectric(1.0, -0.5, 0.05, 0.002, 1.0, 1.0);
        for k in 1..=2 {
            let m = Arc::new(refine_adaptive(&mesh(2, 2), &[0]));
            let stab = set_stabilization(&params, &m);
            let sys = HdgSystem::new(m.clone(), params, k, stab, Mode::TimeStep { dt: 0.1 }).unwrap();
            let mut st = StateFields::zeros(&m, k);
            for (i, v) in st.cells.iter_mut().enumerate() {
                *v = ((i as f64) * 0.37).sin();
            }
            fast_matches_generic(&sys, &st);
        }
    }

    #[test]
    fn zero_data_gives_zero_in_one_iteration() {
        let m = mesh(2, 2);
        let params = unit_params();
        let sys = HdgSystem::new(
            m.clone(),
            params,
            1,
            set_stabilization(&params, &m),
            Mode::TimeStep { dt: 0.1 },
        )
        .unwrap();
        let z = StateFields::zeros(&m, 1);
        let (s, rep) = sys
            .solve(&z, z.clone(), 0.1, &ZeroData, &NewtonConfig::default(), 1)
            .unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(s.cells.iter().chain(&s.traces).all(|v| *v == 0.0));
    }

    struct ConstantBias(f64);
    impl ProblemData for ConstantBias {
        fn dirichlet_potential(&self, _t: f64, _x: [f64; 2]) -> f64 {
            self.0
        }
    }

    #[test]
    fn constant_potential_patch() {
        // with P frozen at zero, a constant contact potential gives V = c, E = 0
        let m = mesh(3, 2);
        let params = unit_params();
        let sys = HdgSystem::new(
            m.clone(),
            params,
            2,
            set_stabilization(&params, &m),
            Mode::FrozenPolarization,
        )
        .unwrap();
        let z = StateFields::zeros(&m, 2);
        let (s, _) = sys
            .solve(&z, z.clone(), 0.0, &ConstantBias(0.7), &NewtonConfig::default(), 0)
            .unwrap();
        for c in 0..m.num_cells() {
            assert!(s.cell_field(c, FIELD_V).iter().all(|v| (v - 0.7).abs() < 1e-12));
            assert!(s.cell_field(c, FIELD_E1).iter().all(|v| v.abs() < 1e-12));
            assert!(s.cell_field(c, FIELD_E2).iter().all(|v| v.abs() < 1e-12));
        }
    }
}
