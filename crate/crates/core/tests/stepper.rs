use std::sync::Arc;

use gld_core::hdg::{field_p, set_stabilization, HdgSystem, Mode, StateFields, ZeroData};
use gld_core::linalg::dot;
use gld_core::mesh::{build_rectangle_mesh, refine_adaptive, EdgeSet, Mesh};
use gld_core::model::{landau_F, MaterialParams, Scaling};
use gld_core::polybasis::{gauss_legendre, tensor_quadrature, CellBasis};
use gld_core::stepper::{
    complete_initial, discrete_energy, energy_identity, project_initial, run, transfer_state, EnergyRecord, NoObserver,
    StepObserver, TimeLoopConfig,
};
use gld_core::GldError;

struct Monolayer {
    params: MaterialParams,
    mesh: Arc<Mesh>,
    width: f64,
}

fn monolayer(nx: usize, ny: usize) -> Monolayer {
    let si = MaterialParams::monolayer(20.0);
    let sc = Scaling::new(80e-9f64.hypot(40e-9), 160e-9, si.epsilon);
    let (w, h) = (80e-9 / sc.length, 40e-9 / sc.length);
    Monolayer {
        params: sc.nondimensionalize(&si),
        mesh: Arc::new(
            build_rectangle_mesh(
                w,
                h,
                nx,
                ny,
                EdgeSet::TOP | EdgeSet::BOTTOM,
                EdgeSet::LEFT | EdgeSet::RIGHT,
            )
            .unwrap(),
        ),
        width: w,
    }
}

fn split_initial(m: &Monolayer, k: usize, value: f64) -> StateFields {
    let half = 0.5 * m.width;
    let s = project_initial(&m.mesh, k, &|x| {
        if x[0] <= half {
            [value, value]
        } else {
            [-value, -value]
        }
    });
    complete_initial(m.mesh.clone(), &m.params, &s, 0.0, &ZeroData, &Default::default()).unwrap()
}

fn cell_mean(s: &StateFields, c: usize, f: usize) -> f64 {
    let basis = CellBasis::new(s.degree);
    let rule = tensor_quadrature(&gauss_legendre(s.degree + 2));
    rule.points
        .iter()
        .zip(&rule.weights)
        .map(|(p, w)| w * dot(&basis.eval(*p).0, s.cell_field(c, f)))
        .sum::<f64>()
        / 4.0
}

#[test]
fn zero_initial_state_has_flat_zero_energy() {
    let m = monolayer(4, 2);
    let z = split_initial(&m, 1, 0.0);
    let out = run(
        &TimeLoopConfig::new(0.1, 5),
        m.mesh.clone(),
        &m.params,
        z,
        &ZeroData,
        &mut NoObserver,
    )
    .unwrap();
    assert_eq!(out.records.len(), 6);
    assert!(out.records.iter().all(|r| r.energy == 0.0));
}

#[test]
fn split_initial_data_has_expected_cell_means() {
    let m = monolayer(8, 4);
    let s = project_initial(&m.mesh, 2, &|x| {
        if x[0] <= 0.5 * m.width {
            [0.1, 0.1]
        } else {
            [-0.1, -0.1]
        }
    });
    for c in 0..m.mesh.num_cells() {
        let x = m.mesh.cell_center(c)[0];
        let expect = if x < 0.5 * m.width { 0.1 } else { -0.1 };
        for i in 0..2 {
            assert!((cell_mean(&s, c, field_p(i)) - expect).abs() < 1e-13);
        }
    }
}

#[test]
fn constant_polarization_energy_is_landau_density() {
    let m = monolayer(4, 2);
    let sys = HdgSystem::new(
        m.mesh.clone(),
        m.params,
        2,
        set_stabilization(&m.params, &m.mesh),
        Mode::TimeStep { dt: 0.1 },
    )
    .unwrap();
    let s = project_initial(&m.mesh, 2, &|_| [0.2, 0.0]);
    let d = discrete_energy(&sys, &s);
    let f = landau_F(&m.params, 0, 0.2);
    assert!((d - f).abs() < 1e-12 * f.abs());
    assert_eq!(discrete_energy(&sys, &StateFields::zeros(&m.mesh, 2)), 0.0);
}

struct Identity {
    worst: f64,
    samples: usize,
}

impl StepObserver for Identity {
    fn observe(&mut self, system: &HdgSystem, state: &StateFields, _record: &EnergyRecord) -> gld_core::Result<()> {
        self.worst = self.worst.max(energy_identity(system, state, &ZeroData).relative_gap());
        self.samples += 1;
        Ok(())
    }
}

#[test]
fn short_monolayer_run_is_stable_and_satisfies_identity() {
    let m = monolayer(8, 4);
    let init = split_initial(&m, 2, 0.1);
    let mut obs = Identity { worst: 0.0, samples: 0 };
    let out = run(
        &TimeLoopConfig::new(0.02, 20),
        m.mesh.clone(),
        &m.params,
        init,
        &ZeroData,
        &mut obs,
    )
    .unwrap();
    assert_eq!(obs.samples, 21);
    assert!(obs.worst < 1e-9, "{}", obs.worst);
    let d0 = out.records[0].energy;
    for w in out.records.windows(2) {
        assert!(w[1].energy <= w[0].energy + 1e-10 * (1.0 + d0.abs()));
    }
    assert!(out.records.last().unwrap().energy < d0);
}

#[test]
fn runs_are_deterministic() {
    let m = monolayer(4, 2);
    let go = || {
        let init = split_initial(&m, 1, 0.1);
        run(
            &TimeLoopConfig::new(0.05, 4),
            m.mesh.clone(),
            &m.params,
            init,
            &ZeroData,
            &mut NoObserver,
        )
        .unwrap()
    };
    let (a, b) = (go(), go());
    assert_eq!(a.records, b.records);
    assert_eq!(a.state, b.state);
}

#[test]
fn single_step_run() {
    let m = monolayer(2, 1);
    let init = split_initial(&m, 1, 0.1);
    let out = run(
        &TimeLoopConfig::new(0.01, 1),
        m.mesh.clone(),
        &m.params,
        init,
        &ZeroData,
        &mut NoObserver,
    )
    .unwrap();
    assert_eq!(out.records.len(), 2);
    assert_eq!(out.state.step, 1);
    assert!((out.state.time - 0.01).abs() < 1e-15);
}

#[test]
fn steady_state_is_preserved() {
    // deep double well, so the relaxed state keeps a nonzero polarization
    let params = MaterialParams::isotropic_ferroelectric(1.0, -1.0, 1.0, 0.0, 0.01, 1.0);
    let mesh = Arc::new(
        build_rectangle_mesh(
            1.0,
            0.5,
            4,
            2,
            EdgeSet::TOP | EdgeSet::BOTTOM,
            EdgeSet::LEFT | EdgeSet::RIGHT,
        )
        .unwrap(),
    );
    let init = project_initial(&mesh, 1, &|x| if x[0] <= 0.5 { [0.7, 0.1] } else { [-0.7, -0.1] });
    let init = complete_initial(mesh.clone(), &params, &init, 0.0, &ZeroData, &Default::default()).unwrap();
    let mut relax = TimeLoopConfig::new(400.0, 400);
    relax.energy_check.enabled = false;
    let settled = run(&relax, mesh.clone(), &params, init, &ZeroData, &mut NoObserver)
        .unwrap()
        .state;
    let mut start = settled.clone();
    start.step = 0;
    start.time = 0.0;
    let out = run(
        &TimeLoopConfig::new(0.01, 10),
        mesh.clone(),
        &params,
        start.clone(),
        &ZeroData,
        &mut NoObserver,
    )
    .unwrap();
    let norm = |s: &StateFields| -> f64 {
        (0..mesh.num_cells())
            .flat_map(|c| (0..2).flat_map(move |i| s.cell_field(c, field_p(i)).to_vec()))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    };
    let (a, b) = (norm(&start), norm(&out.state));
    assert!(a > 0.1, "{a}");
    assert!((a - b).abs() <= 1e-8 * a, "{a} {b}");
}

#[test]
fn energy_check_reports_violations() {
    // a forcing that pumps energy in must trip the check
    struct Pump;
    impl gld_core::hdg::ProblemData for Pump {
        fn forcing(&self, t: f64, _x: [f64; 2]) -> [f64; 2] {
            [10.0 * t, 0.0]
        }
    }
    let m = monolayer(2, 1);
    let init = split_initial(&m, 1, 0.0);
    let err = run(
        &TimeLoopConfig::new(0.5, 5),
        m.mesh.clone(),
        &m.params,
        init,
        &Pump,
        &mut NoObserver,
    )
    .unwrap_err();
    assert!(matches!(err, GldError::StabilityViolation { .. }), "{err}");
}

#[test]
fn transfer_preserves_cell_means() {
    let m = monolayer(4, 2);
    let s = split_initial(&m, 2, 0.1);
    let fine = refine_adaptive(&m.mesh, &[1, 6]);
    let t = transfer_state(&m.mesh, &fine, &s).unwrap();
    let total = |mesh: &Mesh, st: &StateFields| -> f64 {
        (0..mesh.num_cells())
            .map(|c| mesh.cell_area(c) * cell_mean(st, c, field_p(0)))
            .sum()
    };
    assert!((total(&m.mesh, &s) - total(&fine, &t)).abs() < 1e-14);
}
