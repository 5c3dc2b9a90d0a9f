use std::sync::Arc;

use gld_core::hdg::{
    field_e, field_p, set_stabilization, HdgSystem, Mode, NewtonConfig, ProblemData, StateFields, ZeroData, FIELD_V,
    NUM_CELL_FIELDS,
};
use gld_core::linalg::dot;
use gld_core::mesh::{build_rectangle_mesh, refine_adaptive, refine_uniform, EdgeSet, Mesh};
use gld_core::model::{MaterialParams, Scaling};
use gld_core::polybasis::CellBasis;
use gld_core::stepper::{complete_initial, project_initial, run, NoObserver, Stepper, TimeLoopConfig};
use gld_core::verification::{kelly_estimate, l2_error, monolithic_oracle, ExactSolution, ManufacturedSolution};

fn unit_mesh(nx: usize, ny: usize) -> Mesh {
    build_rectangle_mesh(
        1.0,
        1.0,
        nx,
        ny,
        EdgeSet::TOP | EdgeSet::BOTTOM,
        EdgeSet::LEFT | EdgeSet::RIGHT,
    )
    .unwrap()
}

fn manufactured_start(mesh: &Arc<Mesh>, k: usize) -> (ManufacturedSolution, MaterialParams, StateFields) {
    let ms = ManufacturedSolution::default();
    let params = ms.solver_params();
    let init = project_initial(mesh, k, &|x| ms.polarization(0.0, x));
    let init = complete_initial(mesh.clone(), &params, &init, 0.0, &ms, &NewtonConfig::default()).unwrap();
    (ms, params, init)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Largest difference per cell field, relative to that field's magnitude.
fn field_gaps(mesh: &Mesh, a: &StateFields, b: &StateFields) -> Vec<f64> {
    (0..NUM_CELL_FIELDS)
        .map(|f| {
            let mut diff: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for c in 0..mesh.num_cells() {
                for (x, y) in a.cell_field(c, f).iter().zip(b.cell_field(c, f)) {
                    diff = diff.max((x - y).abs());
                    scale = scale.max(x.abs());
                }
            }
            diff / scale.max(1e-300)
        })
        .collect()
}

#[test]
fn condensed_solve_matches_monolithic_oracle() {
    let meshes = [
        unit_mesh(2, 2),
        refine_adaptive(&unit_mesh(2, 2), &[0]),
        unit_mesh(4, 4),
    ];
    assert_eq!(meshes[1].num_cells(), 7);
    for mesh in meshes {
        let mesh = Arc::new(mesh);
        for k in 1..=2 {
            let (ms, params, init) = manufactured_start(&mesh, k);
            let sys = HdgSystem::new(
                mesh.clone(),
                params,
                k,
                set_stabilization(&params, &mesh),
                Mode::TimeStep { dt: 0.05 },
            )
            .unwrap();
            let newton = NewtonConfig::default();
            let (fast, _) = sys.solve(&init, init.clone(), 0.05, &ms, &newton, 1).unwrap();
            let (dense, _) = monolithic_oracle(&sys, &init, init.clone(), 0.05, &ms, &newton).unwrap();
            let gaps = field_gaps(&mesh, &fast, &dense);
            assert!(
                gaps.iter().all(|g| *g <= 1e-10),
                "cells {} k {k}: {gaps:?}",
                mesh.num_cells()
            );
            let trace_gap = fast
                .traces
                .iter()
                .zip(&dense.traces)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(trace_gap <= 1e-10 * max_abs(&dense.traces));
        }
    }
}

#[test]
fn oracle_of_zero_data_is_zero() {
    let mesh = Arc::new(unit_mesh(2, 2));
    let params = MaterialParams::isotropic_ferroelectric(1.0, -1.0, 1.0, 1.0, 1.0, 1.0);
    let sys = HdgSystem::new(
        mesh.clone(),
        params,
        1,
        set_stabilization(&params, &mesh),
        Mode::TimeStep { dt: 0.1 },
    )
    .unwrap();
    let z = StateFields::zeros(&mesh, 1);
    let (s, _) = monolithic_oracle(&sys, &z, z.clone(), 0.1, &ZeroData, &NewtonConfig::default()).unwrap();
    assert!(s.cells.iter().all(|v| *v == 0.0));
}

#[test]
fn linear_regime_converges_in_two_iterations() {
    let mesh = Arc::new(unit_mesh(3, 3));
    let params = MaterialParams::isotropic_ferroelectric(1.0, 0.7, 0.0, 0.0, 0.5, 2.0);
    let ms = ManufacturedSolution::default();
    for k in 1..=3 {
        let init = project_initial(&mesh, k, &|x| ms.polarization(0.0, x));
        let sys = HdgSystem::new(
            mesh.clone(),
            params,
            k,
            set_stabilization(&params, &mesh),
            Mode::TimeStep { dt: 0.1 },
        )
        .unwrap();
        let mut guess = init.clone();
        for (i, v) in guess.cells.iter_mut().enumerate() {
            *v += (i as f64 * 0.61).cos();
        }
        let (_, rep) = sys.solve(&init, guess, 0.1, &ms, &NewtonConfig::default(), 1).unwrap();
        assert!(rep.iterations <= 2, "k {k}: {rep:?}");
        assert!(rep.residual < 1e-11);
    }
}

#[test]
fn newton_converges_quadratically() {
    let si = MaterialParams::monolayer(20.0);
    let sc = Scaling::new(80e-9f64.hypot(40e-9), 160e-9, si.epsilon);
    let params = sc.nondimensionalize(&si);
    let w = 80e-9 / sc.length;
    let mesh = Arc::new(
        build_rectangle_mesh(
            w,
            40e-9 / sc.length,
            8,
            4,
            EdgeSet::TOP | EdgeSet::BOTTOM,
            EdgeSet::LEFT | EdgeSet::RIGHT,
        )
        .unwrap(),
    );
    let init = project_initial(&mesh, 2, &|x| if x[0] <= 0.5 * w { [0.3, 0.3] } else { [-0.3, -0.3] });
    let newton = NewtonConfig {
        abs_tol: 1e-14,
        rel_tol: 1e-14,
        ..NewtonConfig::default()
    };
    let init = complete_initial(mesh.clone(), &params, &init, 0.0, &ZeroData, &newton).unwrap();
    let stepper = Stepper::new(mesh, &params, 2, 0.05).unwrap();
    let (_, rep) = stepper.step(&init, 0.05, &ZeroData, &newton).unwrap();
    let h = &rep.history;
    assert!(h.len() >= 3, "{h:?}");
    let mut checked = 0;
    for pair in h.windows(2) {
        if pair[0] < 1e-3 && pair[1] > 1e-12 {
            assert!(pair[1] <= 10.0 * pair[0] * pair[0], "{h:?}");
            checked += 1;
        }
    }
    assert!(checked >= 1, "{h:?}");
}

#[test]
fn transmission_holds_after_solve() {
    let mesh = Arc::new(refine_adaptive(&unit_mesh(3, 3), &[4]));
    for k in 1..=2 {
        let (ms, params, init) = manufactured_start(&mesh, k);
        let stepper = Stepper::new(mesh.clone(), &params, k, 0.02).unwrap();
        let (s, _) = stepper.step(&init, 0.02, &ms, &NewtonConfig::default()).unwrap();
        assert!(stepper.system().max_interior_transmission_residual(&s).unwrap() <= 1e-10);
    }
}

/// Linear potential `c x2` with `P = 0` held by the forcing `grad V`.
struct LinearPatch(f64);

impl ProblemData for LinearPatch {
    fn forcing(&self, _t: f64, _x: [f64; 2]) -> [f64; 2] {
        [0.0, self.0]
    }
    fn dirichlet_potential(&self, _t: f64, x: [f64; 2]) -> f64 {
        self.0 * x[1]
    }
}

fn value_at(state: &StateFields, basis: &CellBasis, c: usize, f: usize, xi: [f64; 2]) -> f64 {
    dot(&basis.eval(xi).0, state.cell_field(c, f))
}

#[test]
fn linear_potential_patch_test() {
    let params = MaterialParams::isotropic_ferroelectric(1.0, 0.8, -0.3, 0.2, 1.0, 1.0);
    let mesh = Arc::new(refine_adaptive(&unit_mesh(3, 2), &[2]));
    let data = LinearPatch(0.6);
    for k in 1..=3 {
        let basis = CellBasis::new(k);
        let z = StateFields::zeros(&mesh, k);
        let stepper = Stepper::new(mesh.clone(), &params, k, 0.1).unwrap();
        let (s, _) = stepper.step(&z, 0.1, &data, &NewtonConfig::default()).unwrap();
        for c in 0..mesh.num_cells() {
            for xi in [[-0.9, 0.3], [0.5, -0.5], [1.0, 1.0]] {
                let x = mesh.map_to_cell(c, xi);
                assert!((value_at(&s, &basis, c, FIELD_V, xi) - 0.6 * x[1]).abs() < 1e-11);
                assert!(value_at(&s, &basis, c, field_e(0), xi).abs() < 1e-11);
                assert!((value_at(&s, &basis, c, field_e(1), xi) + 0.6).abs() < 1e-11);
                assert!(value_at(&s, &basis, c, field_p(0), xi).abs() < 1e-11);
                assert!(value_at(&s, &basis, c, field_p(1), xi).abs() < 1e-11);
            }
        }
        let eta = kelly_estimate(&mesh, &s);
        assert!(eta.iter().all(|e| *e <= 1e-12));
    }
}

struct TopBias(f64, f64);

impl ProblemData for TopBias {
    fn dirichlet_potential(&self, _t: f64, x: [f64; 2]) -> f64 {
        if x[1] > 0.5 * self.1 {
            self.0
        } else {
            0.0
        }
    }
}

#[test]
fn mirror_symmetric_data_gives_mirror_symmetric_fields() {
    let si = MaterialParams::monolayer(20.0);
    let sc = Scaling::new(80e-9f64.hypot(40e-9), 160e-9, si.epsilon);
    let params = sc.nondimensionalize(&si);
    let (w, h) = (80e-9 / sc.length, 40e-9 / sc.length);
    let mesh = Arc::new(
        build_rectangle_mesh(
            w,
            h,
            8,
            4,
            EdgeSet::TOP | EdgeSet::BOTTOM,
            EdgeSet::LEFT | EdgeSet::RIGHT,
        )
        .unwrap(),
    );
    let data = TopBias(0.02, h);
    let k = 2;
    let init = project_initial(&mesh, k, &|x| [0.1 * (0.5 * w - x[0]).signum(), 0.05]);
    let init = complete_initial(mesh.clone(), &params, &init, 0.0, &data, &NewtonConfig::default()).unwrap();
    let out = run(
        &TimeLoopConfig::new(0.01, 3),
        mesh.clone(),
        &params,
        init,
        &data,
        &mut NoObserver,
    )
    .unwrap();
    let s = out.state;
    let basis = CellBasis::new(k);
    let center = |c: usize| mesh.cell_center(c);
    let vmax = max_abs(&s.cells);
    for c in 0..mesh.num_cells() {
        let x = center(c);
        let m = (0..mesh.num_cells())
            .find(|&d| (center(d)[0] - (w - x[0])).abs() < 1e-12 && (center(d)[1] - x[1]).abs() < 1e-12)
            .unwrap();
        for xi in [[-0.5, 0.2], [0.9, -0.7]] {
            let mirrored = [-xi[0], xi[1]];
            let v = value_at(&s, &basis, c, FIELD_V, xi);
            let vm = value_at(&s, &basis, m, FIELD_V, mirrored);
            assert!((v - vm).abs() <= 1e-9 * vmax);
            let p = value_at(&s, &basis, c, field_p(0), xi);
            let pm = value_at(&s, &basis, m, field_p(0), mirrored);
            assert!((p + pm).abs() <= 1e-9 * vmax);
            let q = value_at(&s, &basis, c, field_p(1), xi);
            let qm = value_at(&s, &basis, m, field_p(1), mirrored);
            assert!((q - qm).abs() <= 1e-9 * vmax);
        }
    }
}

#[test]
fn forcing_matches_symbolic_values() {
    let ms = ManufacturedSolution::default();
    let g = ms.forcing(0.0, [0.25, 0.25]);
    assert!((g[0] - 0.889_914_298_801_976).abs() < 1e-13);
    assert!((g[1] - 0.889_914_298_801_976).abs() < 1e-13);
    let g = ms.forcing(0.05, [0.3, 0.7]);
    assert!((g[0] - 0.035_165_626_838_988_603).abs() < 1e-14);
    assert!((g[1] + 0.035_165_626_838_988_603).abs() < 1e-14);
}

#[test]
fn manufactured_derivatives_match_finite_differences() {
    let ms = ManufacturedSolution::default();
    let h = 1e-4;
    for i in 0..20 {
        let x = [
            0.05 + 0.9 * ((i * 7) % 20) as f64 / 20.0,
            0.05 + 0.9 * ((i * 13) % 20) as f64 / 20.0,
        ];
        let t = 0.01 * i as f64;
        let lap = ms.laplacian(t, x);
        let p = |x: [f64; 2]| ms.polarization(t, x);
        for comp in 0..2 {
            let fd = (p([x[0] + h, x[1]])[comp]
                + p([x[0] - h, x[1]])[comp]
                + p([x[0], x[1] + h])[comp]
                + p([x[0], x[1] - h])[comp]
                - 4.0 * p(x)[comp])
                / (h * h);
            assert!(
                (fd - lap[comp]).abs() < 1e-5 * (1.0 + lap[comp].abs()),
                "{fd} {}",
                lap[comp]
            );
            let dt = (ms.polarization(t + h, x)[comp] - ms.polarization(t - h, x)[comp]) / (2.0 * h);
            assert!((dt - ms.time_derivative(t, x)[comp]).abs() < 1e-5 * (1.0 + dt.abs()));
        }
        let u = ms.gradient_flux(t, x);
        for comp in 0..2 {
            for j in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[j] += h;
                xm[j] += -h;
                let fd = -(p(xp)[comp] - p(xm)[comp]) / (2.0 * h);
                assert!((fd - u[2 * comp + j]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }
}

#[test]
fn zero_state_error_is_half() {
    let mesh = unit_mesh(4, 4);
    let z = StateFields::zeros(&mesh, 2);
    let e = l2_error(&mesh, &z, &ManufacturedSolution::default(), 0.0);
    assert!((e.v - 0.5).abs() < 1e-12);
    // P and E have the same magnitude
    assert!((e.e - e.p).abs() < 1e-12);
}

fn manufactured_step_errors(n: usize, k: usize, steps: usize) -> (gld_core::verification::FieldErrors, f64) {
    let mesh = Arc::new(unit_mesh(n, n));
    let (ms, params, init) = manufactured_start(&mesh, k);
    let mut cfg = TimeLoopConfig::new(0.1, steps);
    cfg.energy_check.enabled = false;
    let out = run(&cfg, mesh.clone(), &params, init, &ms, &mut NoObserver).unwrap();
    let eta: f64 = kelly_estimate(&mesh, &out.state)
        .iter()
        .map(|e| e * e)
        .sum::<f64>()
        .sqrt();
    (l2_error(&mesh, &out.state, &ms, 0.1), eta)
}

#[test]
fn manufactured_errors_decrease_under_refinement() {
    let (coarse, eta_c) = manufactured_step_errors(4, 1, 1);
    let (fine, eta_f) = manufactured_step_errors(8, 1, 4);
    for (c, f) in coarse.as_array().iter().zip(fine.as_array()) {
        assert!(f < *c, "{coarse:?} {fine:?}");
    }
    assert!(eta_f < eta_c);
    let ratio = fine.e / fine.p;
    assert!((0.5..=2.0).contains(&ratio));
}

#[test]
fn uniform_refinement_of_oracle_mesh_is_consistent() {
    let m = unit_mesh(2, 2);
    let r = refine_uniform(&m);
    assert_eq!(refine_adaptive(&m, &[0, 1, 2, 3]).num_cells(), r.num_cells());
    let single = unit_mesh(1, 1);
    let z = StateFields::zeros(&single, 1);
    assert_eq!(kelly_estimate(&single, &z), vec![0.0]);
}
