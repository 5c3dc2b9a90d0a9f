//! Manufactured solutions, error norms, convergence tables, the Kelly
//! indicator and a dense monolithic reference solver.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{GldError, Result};
use crate::hdg::{
    field_e, field_p, field_u, HdgSystem, NewtonConfig, NewtonReport, ProblemData, StateFields, FIELD_E1, FIELD_E2,
    FIELD_V, NUM_CELL_FIELDS,
};
use crate::linalg::{dot, DenseLu, DenseMatrix};
use crate::mesh::{Mesh, Side};
use crate::model::{ComponentParams, MaterialParams};
use crate::polybasis::{gauss_legendre, tensor_quadrature, CellBasis};

/// Closed-form fields for error measurement.
pub trait ExactSolution {
    fn potential(&self, t: f64, x: [f64; 2]) -> f64;
    fn field(&self, t: f64, x: [f64; 2]) -> [f64; 2];
    fn polarization(&self, t: f64, x: [f64; 2]) -> [f64; 2];
    /// `U_ij = -g_i d_j P_i`, row-major.
    fn gradient_flux(&self, t: f64, x: [f64; 2]) -> [f64; 4];
}

/// Unit-square solution `V = e^{-2 pi^2 t} sin(pi x1) sin(pi x2)`,
/// `P = grad V`, `E = -P`, with unit permittivity, viscosity and gradient
/// coefficient.
///
/// The forcing is built from the operator
/// `d_t P - Lap P - DF(P) + grad V = G` with the Landau coefficients
/// `(alpha, beta, gamma)` stored here. The solver's own equation carries
/// `+DF`, so it runs with the negated coefficients (`solver_params`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ManufacturedSolution {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ManufacturedSolution {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: -0.05,
            gamma: -0.002,
        }
    }
}

impl ManufacturedSolution {
    #[inline]
    fn decay(t: f64) -> f64 {
        (-2.0 * PI * PI * t).exp()
    }

    /// Material constants for the solver's sign convention.
    pub fn solver_params(&self) -> MaterialParams {
        let c = ComponentParams::ferroelectric(-self.alpha, -self.beta, -self.gamma, 1.0, 1.0);
        MaterialParams {
            epsilon: 1.0,
            components: [c, c],
        }
    }

    fn d_f(&self, p: f64) -> f64 {
        2.0 * self.alpha * p + 4.0 * self.beta * p.powi(3) + 6.0 * self.gamma * p.powi(5)
    }

    /// `d_t P`
    pub fn time_derivative(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        let p = self.polarization(t, x);
        [-2.0 * PI * PI * p[0], -2.0 * PI * PI * p[1]]
    }

    /// `Lap P`, differentiated by hand.
    pub fn laplacian(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        let e = Self::decay(t);
        let (s1, c1) = (PI * x[0]).sin_cos();
        let (s2, c2) = (PI * x[1]).sin_cos();
        let pi3 = PI * PI * PI;
        [-2.0 * e * pi3 * c1 * s2, -2.0 * e * pi3 * s1 * c2]
    }

    /// `grad V`
    pub fn potential_gradient(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        let e = Self::decay(t);
        let (s1, c1) = (PI * x[0]).sin_cos();
        let (s2, c2) = (PI * x[1]).sin_cos();
        [e * PI * c1 * s2, e * PI * s1 * c2]
    }

    pub fn forcing(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        let dt = self.time_derivative(t, x);
        let lap = self.laplacian(t, x);
        let gv = self.potential_gradient(t, x);
        let p = self.polarization(t, x);
        [
            dt[0] - lap[0] - self.d_f(p[0]) + gv[0],
            dt[1] - lap[1] - self.d_f(p[1]) + gv[1],
        ]
    }
}

impl ExactSolution for ManufacturedSolution {
    fn potential(&self, t: f64, x: [f64; 2]) -> f64 {
        Self::decay(t) * (PI * x[0]).sin() * (PI * x[1]).sin()
    }

    fn field(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        let p = self.polarization(t, x);
        [-p[0], -p[1]]
    }

    fn polarization(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        self.potential_gradient(t, x)
    }

    fn gradient_flux(&self, t: f64, x: [f64; 2]) -> [f64; 4] {
        let e = Self::decay(t);
        let (s1, c1) = (PI * x[0]).sin_cos();
        let (s2, c2) = (PI * x[1]).sin_cos();
        let pi2 = PI * PI;
        [
            e * pi2 * s1 * s2,
            -e * pi2 * c1 * c2,
            -e * pi2 * c1 * c2,
            e * pi2 * s1 * s2,
        ]
    }
}

impl ProblemData for ManufacturedSolution {
    fn forcing(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        ManufacturedSolution::forcing(self, t, x)
    }

    fn dirichlet_potential(&self, t: f64, x: [f64; 2]) -> f64 {
        self.potential(t, x)
    }

    fn boundary_polarization(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        self.polarization(t, x)
    }
}

/// L2 errors of the four field groups.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FieldErrors {
    pub v: f64,
    pub e: f64,
    pub p: f64,
    pub u: f64,
}

impl FieldErrors {
    pub fn as_array(&self) -> [f64; 4] {
        [self.v, self.e, self.p, self.u]
    }
}

/// `sqrt(sum_K int_K |u_h - u|^2)` for V, E, P and U.
pub fn l2_error(mesh: &Mesh, state: &StateFields, exact: &dyn ExactSolution, t: f64) -> FieldErrors {
    let k = state.degree;
    let basis = CellBasis::new(k);
    let rule = tensor_quadrature(&gauss_legendre(3 * k + 2));
    let tab: Vec<Vec<f64>> = rule.points.iter().map(|p| basis.eval(*p).0).collect();
    let mut sq = [0.0; 4];
    for c in 0..mesh.num_cells() {
        let jac = 0.25 * mesh.cell_area(c);
        for (q, w) in rule.weights.iter().enumerate() {
            let x = mesh.map_to_cell(c, rule.points[q]);
            let v = &tab[q];
            let val = |f: usize| dot(v, state.cell_field(c, f));
            let ww = w * jac;
            sq[0] += ww * (val(FIELD_V) - exact.potential(t, x)).powi(2);
            let e = exact.field(t, x);
            let p = exact.polarization(t, x);
            let u = exact.gradient_flux(t, x);
            for j in 0..2 {
                sq[1] += ww * (val(field_e(j)) - e[j]).powi(2);
                sq[2] += ww * (val(field_p(j)) - p[j]).powi(2);
                for i in 0..2 {
                    sq[3] += ww * (val(field_u(i, j)) - u[2 * i + j]).powi(2);
                }
            }
        }
    }
    FieldErrors {
        v: sq[0].sqrt(),
        e: sq[1].sqrt(),
        p: sq[2].sqrt(),
        u: sq[3].sqrt(),
    }
}

/// Which discretization parameter varies along a convergence table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefinementKind {
    Space,
    Time,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub level: usize,
    pub h: f64,
    pub tau: f64,
    pub dofs: usize,
    pub errors: FieldErrors,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceTable {
    pub kind: RefinementKind,
    pub rows: Vec<ConvergenceRow>,
}

/// `log(e1/e2) / log(r)`; `None` when either error is at round-off level.
pub fn observed_order(e1: f64, e2: f64, ratio: f64) -> Option<f64> {
    if e1 <= 1e-13 || e2 <= 1e-13 || !(ratio > 1.0) {
        return None;
    }
    Some((e1 / e2).ln() / ratio.ln())
}

/// Least-squares slope of `log e` against `log x`.
pub fn least_squares_order(xs: &[f64], errs: &[f64]) -> Option<f64> {
    if xs.len() < 2 || xs.len() != errs.len() || errs.iter().any(|e| *e <= 1e-13) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let le: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let me = le.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&le).map(|(x, e)| (x - mx) * (e - me)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    Some(sxy / sxx)
}

impl ConvergenceTable {
    pub fn new(kind: RefinementKind) -> Self {
        Self { kind, rows: Vec::new() }
    }

    fn parameter(&self, row: &ConvergenceRow) -> f64 {
        match self.kind {
            RefinementKind::Space => row.h,
            RefinementKind::Time => row.tau,
        }
    }

    /// Orders between row `i-1` and row `i` (none for the first row).
    pub fn orders(&self) -> Vec<[Option<f64>; 4]> {
        let mut out = vec![[None; 4]];
        for w in self.rows.windows(2) {
            let ratio = self.parameter(&w[0]) / self.parameter(&w[1]);
            let a = w[0].errors.as_array();
            let b = w[1].errors.as_array();
            out.push(std::array::from_fn(|f| observed_order(a[f], b[f], ratio)));
        }
        out.truncate(self.rows.len());
        out
    }

    /// Least-squares orders over all rows, per field.
    pub fn fitted_orders(&self) -> [Option<f64>; 4] {
        let xs: Vec<f64> = self.rows.iter().map(|r| self.parameter(r)).collect();
        std::array::from_fn(|f| {
            let es: Vec<f64> = self.rows.iter().map(|r| r.errors.as_array()[f]).collect();
            least_squares_order(&xs, &es)
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,h,tau,dofs,err_V,err_E,err_P,err_U,ord_V,ord_E,ord_P,ord_U\n");
        for (row, ord) in self.rows.iter().zip(self.orders()) {
            let e = row.errors.as_array();
            let _ = write!(
                s,
                "{},{:.10e},{:.10e},{},{:.10e},{:.10e},{:.10e},{:.10e}",
                row.level, row.h, row.tau, row.dofs, e[0], e[1], e[2], e[3]
            );
            for o in ord {
                match o {
                    Some(v) => {
                        let _ = write!(s, ",{v:.4}");
                    }
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Kelly indicator `eta_K^2 = sum_F diam(K)/24 int_F [grad V . nu]^2` with
/// `grad V = -E`. Boundary facets contribute nothing.
pub fn kelly_estimate(mesh: &Mesh, state: &StateFields) -> Vec<f64> {
    let k = state.degree;
    let basis = CellBasis::new(k);
    let rule = gauss_legendre(k + 2);
    let mut eta2 = vec![0.0; mesh.num_cells()];
    let side_point = |side: Side, t: f64| match side {
        Side::Left => [-1.0, t],
        Side::Right => [1.0, t],
        Side::Bottom => [t, -1.0],
        Side::Top => [t, 1.0],
    };
    for (f, facet) in mesh.facets().iter().enumerate() {
        if !facet.interior {
            continue;
        }
        let axis = facet.axis;
        let e_field = if axis == 0 { FIELD_E1 } else { FIELD_E2 };
        let mut integral = 0.0;
        let locate = |c: usize| {
            *mesh
                .cell_facets(c)
                .iter()
                .find(|cf| cf.facet == f)
                .expect("facet of its cell")
        };
        let [a, b] = facet.cells;
        let (ca, cb) = (locate(a), locate(b));
        for (s, w) in rule.points.iter().zip(&rule.weights) {
            let eval = |c: usize, cf: crate::mesh::CellFacet| {
                let t = cf.sub[0] + 0.5 * (s[0] + 1.0) * (cf.sub[1] - cf.sub[0]);
                let (v, _) = basis.eval(side_point(cf.side, t));
                dot(&v, state.cell_field(c, e_field))
            };
            // [grad V . nu] = -(E_a - E_b) . nu with nu pointing from a to b
            let jump = -(eval(a, ca) - eval(b, cb));
            integral += w * 0.5 * facet.length * jump * jump;
        }
        eta2[a] += mesh.cell_diameter(a) / 24.0 * integral;
        eta2[b] += mesh.cell_diameter(b) / 24.0 * integral;
    }
    eta2.into_iter().map(f64::sqrt).collect()
}

/// The `ceil(fraction * n)` cells with the largest indicator; ties go to the
/// lower cell id.
pub fn select_refinement(eta: &[f64], fraction: f64) -> Vec<usize> {
    if eta.is_empty() || !(fraction > 0.0) {
        return Vec::new();
    }
    let count = ((fraction.min(1.0) * eta.len() as f64).ceil() as usize).min(eta.len());
    let mut ids: Vec<usize> = (0..eta.len()).collect();
    ids.sort_by(|&i, &j| eta[j].total_cmp(&eta[i]).then(i.cmp(&j)));
    ids.truncate(count);
    ids.sort_unstable();
    ids
}

/// Largest mesh accepted by the dense monolithic solver.
pub const ORACLE_CELL_LIMIT: usize = 64;

/// Solves the same nonlinear system as `HdgSystem::solve` by Newton's method
/// on the full uncondensed unknown vector (all cell fields plus free traces)
/// with dense LU.
pub fn monolithic_oracle(
    system: &HdgSystem,
    reference: &StateFields,
    guess: StateFields,
    t: f64,
    data: &dyn ProblemData,
    newton: &NewtonConfig,
) -> Result<(StateFields, NewtonReport)> {
    let mesh = system.mesh().clone();
    let ncell = mesh.num_cells();
    if ncell > ORACLE_CELL_LIMIT {
        return Err(GldError::TooLarge {
            cells: ncell,
            limit: ORACLE_CELL_LIMIT,
        });
    }
    let nb = NUM_CELL_FIELDS * system.cell_basis().dim();
    let nfree = system.num_skeleton_dofs();
    let total = ncell * nb + nfree;
    let mut state = guess;
    system.apply_boundary_data(&mut state, t, data);
    state.time = t;

    let assemble = |state: &StateFields| -> Result<(DenseMatrix, Vec<f64>)> {
        let mut jac = DenseMatrix::zeros(total, total);
        let mut rhs = vec![0.0; total];
        for c in 0..ncell {
            let lb = system.local_block(c, state, reference, t, data)?;
            let globals = system.local_globals(c);
            let off = c * nb;
            jac.add_block(off, off, &lb.a, 1.0);
            rhs[off..off + nb].copy_from_slice(&lb.rhs_cell);
            for (lj, gj) in globals.iter().enumerate() {
                let Some(gj) = gj else { continue };
                for r in 0..nb {
                    jac[(off + r, ncell * nb + gj)] += lb.b[(r, lj)];
                }
            }
            for (li, gi) in globals.iter().enumerate() {
                let Some(gi) = gi else { continue };
                let row = ncell * nb + gi;
                rhs[row] += lb.rhs_trace[li];
                for col in 0..nb {
                    jac[(row, off + col)] += lb.c[(li, col)];
                }
                for (lj, gj) in globals.iter().enumerate() {
                    if let Some(gj) = gj {
                        jac[(row, ncell * nb + gj)] += lb.d[(li, lj)];
                    }
                }
            }
        }
        Ok((jac, rhs))
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();

    let (mut jac, mut rhs) = assemble(&state)?;
    let mut res = norm(&rhs);
    let initial = res;
    let mut history = vec![res];
    let mut iterations = 1;
    loop {
        if !res.is_finite() {
            return Err(GldError::Divergence { step: state.step });
        }
        if res <= newton.abs_tol + newton.rel_tol * initial {
            return Ok((
                state,
                NewtonReport {
                    iterations,
                    residual: res,
                    initial_residual: initial,
                    history,
                },
            ));
        }
        if iterations >= newton.max_iter {
            return Err(GldError::NonConvergence {
                step: state.step,
                iterations,
                residual: res,
            });
        }
        let delta = DenseLu::factor(&jac)?.solve(&rhs);
        let mut step = 1.0;
        let mut best: Option<(StateFields, DenseMatrix, Vec<f64>, f64)> = None;
        for _ in 0..=newton.max_halvings {
            let mut trial = state.clone();
            for (x, d) in trial.cells.iter_mut().zip(&delta[..ncell * nb]) {
                *x += step * d;
            }
            for (slot, g) in system.dof_map().global.iter().enumerate() {
                if let Some(g) = g {
                    trial.traces[slot] += step * delta[ncell * nb + g];
                }
            }
            let (j2, r2) = assemble(&trial)?;
            let n2 = norm(&r2);
            if n2.is_finite() && best.as_ref().is_none_or(|b| n2 < b.3) {
                best = Some((trial, j2, r2, n2));
            }
            if n2.is_finite() && n2 <= res {
                break;
            }
            step *= 0.5;
        }
        let Some((s, j2, r2, n2)) = best else {
            return Err(GldError::Divergence { step: state.step });
        };
        state = s;
        jac = j2;
        rhs = r2;
        res = n2;
        history.push(res);
        iterations += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_of_simple_sequences() {
        assert!((observed_order(1.0, 0.25, 2.0).unwrap() - 2.0).abs() < 1e-15);
        assert!((observed_order(1.0, 0.5, 2.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(observed_order(1.0, 0.0, 2.0), None);
        let xs = [1.0, 0.5, 0.25];
        let es = [3.0, 0.75, 0.1875];
        assert!((least_squares_order(&xs, &es).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn refinement_selection() {
        assert_eq!(select_refinement(&[1.0, 2.0, 3.0], 1.0), vec![0, 1, 2]);
        let eta: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
        let chosen = select_refinement(&eta, 0.01);
        assert_eq!(chosen.len(), 1);
        assert_eq!(eta[chosen[0]], 99.0);
        assert_eq!(select_refinement(&[5.0, 5.0, 5.0, 5.0], 0.25), vec![0]);
    }

    #[test]
    fn forcing_decays_and_gauss_law_holds() {
        let ms = ManufacturedSolution::default();
        let g = ms.forcing(50.0, [0.3, 0.6]);
        assert!(g[0].abs() < 1e-100 && g[1].abs() < 1e-100);
        // div(-grad V + P) = 0 because P = grad V; check with central differences
        let h = 1e-5;
        let mut seed = 1u64;
        for _ in 0..50 {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let x = [
                (seed >> 11) as f64 / (1u64 << 53) as f64,
                ((seed >> 7) % 1000) as f64 / 1000.0,
            ];
            let d = |x: [f64; 2]| {
                let p = ms.polarization(0.01, x);
                let gv = ms.potential_gradient(0.01, x);
                [p[0] - gv[0], p[1] - gv[1]]
            };
            let div = (d([x[0] + h, x[1]])[0] - d([x[0] - h, x[1]])[0]) / (2.0 * h)
                + (d([x[0], x[1] + h])[1] - d([x[0], x[1] - h])[1]) / (2.0 * h);
            assert!(div.abs() < 1e-10);
        }
    }
}
