//! Acceptance suite: one pass/fail line per criterion, nonzero exit on any failure.

use std::sync::Arc;
use std::time::Instant;

use gld_cli::presets::{CONVERGENCE_SPACE_K1, CONVERGENCE_SPACE_K2, CONVERGENCE_TIME, ENERGY_STABILITY, HYSTERESIS};
use gld_cli::scenarios::loop_summary;
use gld_cli::{parse_config, run_scenario, ScenarioConfig, ScenarioReport};
use gld_core::hdg::{set_stabilization, HdgSystem, Mode, NewtonConfig, StateFields, NUM_CELL_FIELDS};
use gld_core::mesh::{build_rectangle_mesh, refine_adaptive, EdgeSet, Mesh};
use gld_core::model::{check_uniqueness_conditions, landau_F, split, MaterialParams, Uniqueness};
use gld_core::stepper::{complete_initial, project_initial};
use gld_core::verification::{monolithic_oracle, ExactSolution, ManufacturedSolution};
use rand::{rngs::StdRng, Rng, SeedableRng};

const FIELDS: [&str; 4] = ["V", "E", "P", "U"];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn load(text: &str, dir: &tempfile::TempDir, name: &str) -> ScenarioConfig {
    let mut cfg = parse_config(text).expect("preset parses");
    cfg.output.directory = dir.path().join(name).to_string_lossy().into_owned();
    cfg
}

fn timed(cfg: &ScenarioConfig) -> (ScenarioReport, f64) {
    let start = Instant::now();
    let report = run_scenario(cfg).expect("scenario runs");
    (report, start.elapsed().as_secs_f64())
}

fn time_study(dir: &tempfile::TempDir, reports: &mut Vec<ScenarioReport>) -> Outcome {
    let cfg = load(CONVERGENCE_TIME, dir, "time");
    let (report, secs) = timed(&cfg);
    let table = report.table.clone().expect("convergence table");
    let orders = table.orders();
    let mut pass = true;
    let mut worst = f64::INFINITY;
    for row in orders.iter().skip(1) {
        for o in row {
            let o = o.unwrap_or(f64::NAN);
            worst = worst.min(o);
            pass &= o >= 0.85;
        }
    }

    // spatial share of the finest error, from a coarser mesh at the same step
    let finest = table.rows.last().expect("rows");
    let mut coarse = cfg.clone();
    coarse.mesh.nx /= 2;
    coarse.mesh.ny /= 2;
    coarse.mesh.levels = 1;
    coarse.discretization.steps = cfg.discretization.steps << (cfg.mesh.levels - 1);
    coarse.output.directory = dir.path().join("time_coarse").to_string_lossy().into_owned();
    let (coarse_report, _) = timed(&coarse);
    let e16 = coarse_report.table.as_ref().expect("table").rows[0].errors.as_array();
    let e32 = finest.errors.as_array();
    let share = (0..4)
        .map(|f| (e16[f] - e32[f]).abs() / 3.0 / e32[f])
        .fold(0.0, f64::max);
    pass &= share < 0.1;
    reports.push(report);
    reports.push(coarse_report);
    outcome(
        pass,
        format!("min order {worst:.3} (>= 0.85), spatial share {share:.3} (< 0.1), {secs:.0} s (target 120 s)"),
    )
}

fn space_study(dir: &tempfile::TempDir, reports: &mut Vec<ScenarioReport>) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, text) in [(1usize, CONVERGENCE_SPACE_K1), (2, CONVERGENCE_SPACE_K2)] {
        let cfg = load(text, dir, &format!("space_k{k}"));
        let (report, secs) = timed(&cfg);
        let table = report.table.clone().expect("convergence table");
        let last = *table.orders().last().expect("orders");
        let (lo, hi) = (k as f64 + 0.8, k as f64 + 1.3);
        let mut field_parts = Vec::new();
        for (f, o) in last.iter().enumerate() {
            let o = o.unwrap_or(f64::NAN);
            pass &= (lo..=hi).contains(&o);
            field_parts.push(format!("{}={o:.2}", FIELDS[f]));
        }
        parts.push(format!("k={k} [{lo:.1},{hi:.1}] {} {secs:.0} s", field_parts.join(" ")));
        reports.push(report);
    }
    outcome(pass, format!("{} (runtime target 600 s)", parts.join("; ")))
}

fn energy_monotone(report: &ScenarioReport) -> Outcome {
    let d = &report.energy;
    let d0 = d[0].energy;
    let tol = 1e-10 * (1.0 + d0.abs());
    let worst = d
        .windows(2)
        .map(|w| w[1].energy - w[0].energy)
        .fold(f64::NEG_INFINITY, f64::max);
    let last = d.last().expect("records").energy;
    let pass = worst <= tol && last < d0;
    outcome(
        pass,
        format!(
            "{} steps, largest increase {worst:.3e} (<= {tol:.1e}), d0 {d0:.6e}, dN {last:.6e}",
            d.len() - 1
        ),
    )
}

fn identity(report: &ScenarioReport) -> Outcome {
    let gap = report.max_identity_gap();
    let n = report.identity_gaps.len();
    outcome(
        n == 20 && gap <= 1e-9,
        format!("{n} samples, max relative gap {gap:.3e} (<= 1e-9)"),
    )
}

fn field_gap(mesh: &Mesh, a: &StateFields, b: &StateFields) -> f64 {
    (0..NUM_CELL_FIELDS)
        .map(|f| {
            let (mut diff, mut scale) = (0.0f64, 0.0f64);
            for c in 0..mesh.num_cells() {
                for (x, y) in a.cell_field(c, f).iter().zip(b.cell_field(c, f)) {
                    diff = diff.max((x - y).abs());
                    scale = scale.max(y.abs());
                }
            }
            diff / scale.max(1e-300)
        })
        .fold(0.0, f64::max)
}

fn condensation() -> Outcome {
    let unit = || {
        build_rectangle_mesh(
            1.0,
            1.0,
            2,
            2,
            EdgeSet::TOP | EdgeSet::BOTTOM,
            EdgeSet::LEFT | EdgeSet::RIGHT,
        )
        .unwrap()
    };
    let ms = ManufacturedSolution::default();
    let params = ms.solver_params();
    let newton = NewtonConfig::default();
    let mut worst = 0.0f64;
    let mut cases = 0;
    for mesh in [unit(), refine_adaptive(&unit(), &[0])] {
        let mesh = Arc::new(mesh);
        for k in 1..=2 {
            let init = project_initial(&mesh, k, &|x| ms.polarization(0.0, x));
            let init = complete_initial(mesh.clone(), &params, &init, 0.0, &ms, &newton).unwrap();
            let stab = set_stabilization(&params, &mesh);
            let sys = HdgSystem::new(mesh.clone(), params, k, stab, Mode::TimeStep { dt: 0.05 }).unwrap();
            let (fast, _) = sys.solve(&init, init.clone(), 0.05, &ms, &newton, 1).unwrap();
            let (dense, _) = monolithic_oracle(&sys, &init, init.clone(), 0.05, &ms, &newton).unwrap();
            worst = worst.max(field_gap(&mesh, &fast, &dense));
            let scale = dense.traces.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
            let trace = fast
                .traces
                .iter()
                .zip(&dense.traces)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst = worst.max(trace / scale);
            cases += 1;
        }
    }
    outcome(
        worst <= 1e-10,
        format!("{cases} cases (4 and 7 cells, k=1,2), max relative difference {worst:.3e} (<= 1e-10)"),
    )
}

fn transmission(reports: &[ScenarioReport]) -> Outcome {
    let worst = reports.iter().map(ScenarioReport::max_transmission).fold(0.0, f64::max);
    let samples: usize = reports.iter().map(|r| r.transmission.len()).sum();
    outcome(
        samples > 0 && worst <= 1e-10,
        format!("{samples} sampled steps, max residual {worst:.3e} (<= 1e-10)"),
    )
}

fn hysteresis(dir: &tempfile::TempDir, reports: &mut Vec<ScenarioReport>) -> Outcome {
    let cfg = load(HYSTERESIS, dir, "hysteresis");
    let (report, secs) = timed(&cfg);
    let summary = loop_summary(&report.displacement, 40e-9, 120e-9).expect("displacement rows");
    let pass = summary.closure <= 0.05 && summary.sign_changes >= 2;
    let detail = format!(
        "closure {:.3e} (<= 0.05), D_top sign changes {} (>= 2), loop height {:.3e} C/m, {} cells, {secs:.0} s",
        summary.closure, summary.sign_changes, summary.height, report.final_cells
    );
    reports.push(report);
    outcome(pass, detail)
}

fn random_params(rng: &mut StdRng) -> MaterialParams {
    let a = rng.random_range(-10.0..10.0);
    let b = rng.random_range(-10.0..10.0);
    let c = rng.random_range(1e-3..10.0);
    MaterialParams::isotropic_ferroelectric(1.0, a, b, c, 1.0, 1.0)
}

fn convex_split(rng: &mut StdRng) -> Outcome {
    let mut sets = vec![MaterialParams::monolayer(20.0)];
    sets.extend((0..50).map(|_| random_params(rng)));
    let mut worst_gap = 0.0f64;
    let mut worst_curvature = f64::INFINITY;
    for p in &sets {
        let s = split(p);
        for comp in 0..2 {
            for i in 0..1000 {
                let x = -1.0 + 2.0 * i as f64 / 999.0;
                let (fp, fm) = (s.plus[comp].value(x), s.minus[comp].value(x));
                let gap = (fp - fm - landau_F(p, comp, x)).abs() / (fp.abs() + fm.abs()).max(1e-300);
                worst_gap = worst_gap.max(gap);
                let c = s.plus[comp]
                    .second_derivative(x)
                    .min(s.minus[comp].second_derivative(x));
                worst_curvature = worst_curvature.min(c);
            }
        }
    }
    outcome(
        worst_gap <= 1e-12 && worst_curvature >= 0.0,
        format!(
            "{} parameter sets, max split gap {worst_gap:.3e} (<= 1e-12), min curvature {worst_curvature:.3e} (>= 0)",
            sets.len()
        ),
    )
}

fn uniqueness(rng: &mut StdRng) -> Outcome {
    let mut mismatches = 0;
    for _ in 0..200 {
        let p = random_params(rng);
        let c = p.components[0];
        let q = |t: f64| 30.0 * c.gamma * t * t + 12.0 * c.beta * t + 2.0 * c.alpha;
        // geometric grid over (0, 1e4]
        let n = 200_000;
        let positive = (0..=n).all(|i| q(1e-9 * 10f64.powf(13.0 * i as f64 / n as f64)) > 0.0);
        let expected = if positive {
            Uniqueness::Satisfied
        } else {
            Uniqueness::Violated
        };
        if check_uniqueness_conditions(&p)[0] != expected {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("200 random sets, {mismatches} disagreements with the positivity scan"),
    )
}

fn main() {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut rng = StdRng::seed_from_u64(20_241_019);
    let mut reports = Vec::new();
    let mut results = Vec::new();

    results.push(time_study(&dir, &mut reports));
    results.push(space_study(&dir, &mut reports));
    let (energy, secs) = timed(&load(ENERGY_STABILITY, &dir, "energy"));
    let mut c3 = energy_monotone(&energy);
    c3.detail.push_str(&format!(", {secs:.0} s"));
    results.push(c3);
    results.push(identity(&energy));
    reports.push(energy);
    results.push(condensation());
    let c7 = hysteresis(&dir, &mut reports);
    results.push(transmission(&reports));
    results.push(c7);
    results.push(convex_split(&mut rng));
    results.push(uniqueness(&mut rng));

    let mut failed = 0;
    for (i, r) in results.iter().enumerate() {
        println!(
            "criterion {}: {} {}",
            i + 1,
            if r.pass { "PASS" } else { "FAIL" },
            r.detail
        );
        failed += usize::from(!r.pass);
    }
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
