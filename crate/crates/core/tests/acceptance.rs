//! Acceptance run: one PASS/FAIL line per criterion, at full resolution.
//!
//! Takes over an hour on a single core. Exits non-zero on a failed
//! criterion only when `ACCEPTANCE_STRICT` is set.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use micromixer::flow::{
    flux_through_plane, mean_velocity, solve_steady, DuctProfile, FlowConditions, VelocityField,
};
use micromixer::geometry::{period_planes, voxelize, CellKind, Variant, VoxelGrid};
use micromixer::io::{parse_config, run_pipeline, RunConfig, Stage};
use micromixer::report::read_report_csv;
use micromixer::topology::{analyze_slices, find_critical_points, CriticalKind, SliceField, SlicePlane};
use micromixer::tracer::{
    advect_with, interpolate_velocity, mixing_index, rk4_step, seed_inlet, ParticleEnsemble, Status,
    TracerSettings,
};
use micromixer::transport::{fret_profile, solve_transport, Species, SpeciesFields};

const H: f64 = 5.0;
const N_PARTICLES: usize = 14_000;

struct Sheet {
    results: Vec<(usize, bool)>,
}

impl Sheet {
    fn record(&mut self, id: usize, name: &str, pass: bool, detail: String) {
        println!("{} C{id} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.results.push((id, pass));
    }
}

struct Run {
    variant: Variant,
    field: VelocityField,
    flow_seconds: f64,
    species: SpeciesFields,
    /// Default step, then half of it.
    tracks: [ParticleEnsemble; 2],
    mixing: [Vec<f64>; 2],
}

fn config(variant: Variant) -> RunConfig {
    parse_config(&format!("{{variant: '{}', flow_rate_per_inlet: 5}}", variant.name())).unwrap()
}

fn simulate(variant: Variant) -> Run {
    let cfg = config(variant);
    let grid = Arc::new(voxelize(&cfg.mixer(), H).unwrap());
    let start = Instant::now();
    let field = solve_steady(grid, &cfg.flow_conditions(), &cfg.solver_settings()).unwrap();
    let flow_seconds = start.elapsed().as_secs_f64();
    let species = solve_transport(&field, &cfg.transport_params()).unwrap();
    let planes = period_planes(&cfg.mixer());
    let base = cfg.tracer_settings();
    let track = |cfl: f64| {
        let seeded = seed_inlet(&field.grid, N_PARTICLES).unwrap();
        advect_with(&field, seeded, &planes, &TracerSettings { cfl, ..base.clone() }).unwrap()
    };
    let tracks = [track(base.cfl), track(0.5 * base.cfl)];
    let mixing = tracks.each_ref().map(|t| {
        t.snapshots
            .iter()
            .map(|s| mixing_index(s.points(), &cfg.bins()).unwrap())
            .collect()
    });
    println!(
        "  {}: flow {:.0} s ({} iterations), transport {} sweeps",
        variant.name(),
        flow_seconds,
        field.iterations,
        species.sweeps
    );
    Run {
        variant,
        field,
        flow_seconds,
        species,
        tracks,
        mixing,
    }
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
}

fn fret(run: &Run, theta: f64) -> Vec<f64> {
    let planes = period_planes(&config(run.variant).mixer());
    fret_profile(&run.species, &planes, theta).unwrap().into_iter().map(|r| r.2).collect()
}

fn duct_oracle(sheet: &mut Sheet, plain: &Run) {
    let cfg = config(Variant::Plain);
    let m = cfg.mixer();
    let g = &plain.field.grid;
    let cond = cfg.flow_conditions();
    let duct = DuctProfile::new(m.channel_width, m.channel_height, cond.total_flow_rate() * 1e18, 100);
    let peak = duct.velocity(0.5 * m.channel_width, 0.5 * m.channel_height) * 1e-6;
    let j = g.plane_index(0.5 * m.channel_length).unwrap();
    let mut worst = 0.0f64;
    for k in 0..g.dims[2] {
        for i in 0..g.dims[0] {
            let c = g.index(i, j, k);
            if g.is_fluid(c) {
                let p = g.center(i, j, k);
                let want = duct.velocity(p[0], p[2]) * 1e-6;
                worst = worst.max((plain.field.u[c][1] - want).abs() / peak);
            }
        }
    }
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    sheet.record(
        1,
        "duct oracle",
        worst <= 0.03 && plain.flow_seconds <= 600.0,
        format!(
            "max |u - u_series| / u_peak at mid-length = {worst:.2e} (<= 3e-2); solve {:.0} s on {cores} core(s) (<= 600 s)",
            plain.flow_seconds
        ),
    );
}

fn conservation(sheet: &mut Sheet, run: &Run) {
    let cfg = config(run.variant);
    let m = cfg.mixer();
    let cond = cfg.flow_conditions();
    let q = cond.total_flow_rate();
    let g = &run.field.grid;
    let worst_plane = (0..20)
        .map(|n| {
            let y = H + n as f64 * (m.channel_length - 2.0 * H) / 19.0;
            (flux_through_plane(&run.field, y).unwrap() / q - 1.0).abs()
        })
        .fold(0.0, f64::max);
    let h = g.h * 1e-6;
    let scale = mean_velocity(&cond, &m) / h;
    let central = run.field.divergence().into_iter().flatten().map(f64::abs).fold(0.0, f64::max) / scale;
    let faces = run.field.face_fluxes();
    let link = (0..g.len())
        .filter(|&c| g.is_fluid(c))
        .map(|c| {
            let (i, j, k) = g.coords(c);
            faces.net_outflow(g.dims, i, j, k).abs() / h.powi(3)
        })
        .fold(0.0, f64::max)
        / scale;
    let params = cfg.transport_params();
    let inflow = 0.5 * q * params.c_a0;
    let ny = g.dims[1];
    let worst_scalar = (0..20)
        .map(|n| {
            let jf = n * ny / 19;
            let f = run.species.plane_flux(&faces, Species::A, jf) + run.species.plane_flux(&faces, Species::P, jf);
            (f / inflow - 1.0).abs()
        })
        .fold(0.0, f64::max);
    sheet.record(
        2,
        "conservation",
        worst_plane <= 5e-3 && central <= 1e-3 && worst_scalar <= 1e-2,
        format!(
            "{}: plane flux defect {worst_plane:.2e} (<= 5e-3); central-difference divergence {central:.2e} U/h (<= 1e-3; link-flux divergence {link:.2e} U/h); conserved-scalar flux defect {worst_scalar:.2e} (<= 1e-2)",
            run.variant.name()
        ),
    );
}

fn stokes_reversibility(sheet: &mut Sheet) {
    let cfg = config(Variant::Cdm);
    let grid = Arc::new(voxelize(&cfg.mixer(), 10.0).unwrap());
    let forward = FlowConditions {
        stokes_mode: true,
        ..cfg.flow_conditions()
    };
    let backward = FlowConditions {
        flow_rate_per_inlet: -forward.flow_rate_per_inlet,
        ..forward.clone()
    };
    let settings = cfg.solver_settings();
    let a = solve_steady(grid.clone(), &forward, &settings).unwrap();
    let b = solve_steady(grid, &backward, &settings).unwrap();
    let worst = a
        .u
        .iter()
        .zip(&b.u)
        .flat_map(|(p, q)| (0..3).map(move |d| (p[d] + q[d]).abs()))
        .fold(0.0, f64::max)
        / mean_velocity(&forward, &cfg.mixer());
    sheet.record(
        3,
        "Stokes reversibility",
        worst <= 1e-9,
        format!("CDM h = 10 um: max |u(Q) + u(-Q)| = {worst:.2e} U_mean (<= 1e-9)"),
    );
}

fn orbit_drift() -> f64 {
    let grid = Arc::new(VoxelGrid::from_cells(
        5.0,
        [40, 4, 40],
        [0.0; 3],
        vec![CellKind::Fluid; 40 * 4 * 40],
    ));
    let omega = 2.0 * PI;
    let u = (0..grid.len())
        .map(|c| {
            let (i, j, k) = grid.coords(c);
            let p = grid.center(i, j, k);
            [-omega * (p[2] - 100.0) * 1e-6, 0.0, omega * (p[0] - 100.0) * 1e-6]
        })
        .collect();
    let field = VelocityField::from_cell_velocities(grid, u);
    let mut p = [160.0, 10.0, 100.0];
    for _ in 0..200 {
        p = rk4_step(p, 1.0 / 200.0, |q| {
            let u = interpolate_velocity(&field, q).unwrap();
            [u[0] * 1e6, u[1] * 1e6, u[2] * 1e6]
        });
    }
    ((p[0] - 100.0).hypot(p[2] - 100.0) - 60.0).abs() / 60.0
}

fn tracer_properties(sheet: &mut Sheet, runs: &[Run]) {
    let plain = runs.iter().find(|r| r.variant == Variant::Plain).unwrap();
    let worst_plain = plain.mixing[0].iter().cloned().fold(0.0, f64::max);
    let conserved = runs.iter().flat_map(|r| &r.tracks).all(|t| {
        t.count(Status::Active) == 0
            && t.count(Status::Exited) + t.count(Status::Stalled) == N_PARTICLES
            && t.snapshots.iter().all(|s| s.crossings.len() <= N_PARTICLES)
    });
    let dt_change = |r: &Run| {
        r.mixing[0]
            .iter()
            .zip(&r.mixing[1])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let drift = orbit_drift();
    let chaotic: Vec<String> = runs
        .iter()
        .filter(|r| r.variant != Variant::Plain)
        .map(|r| format!("{} {:.1e}", r.variant.name(), dt_change(r)))
        .collect();
    sheet.record(
        4,
        "tracer properties",
        worst_plain <= 0.02 && conserved && dt_change(plain) < 1e-3 && drift < 1e-6,
        format!(
            "PLAIN max mixing index {worst_plain:.4} (<= 0.02); particle conservation {}; dt halving changes PLAIN mixing index by {:.1e} (< 1e-3; chaotic variants for reference: {}); RK4 orbit drift {drift:.1e} per revolution (< 1e-6)",
            if conserved { "exact" } else { "violated" },
            dt_change(plain),
            chaotic.join(", ")
        ),
    );
}

fn synthetic_oracles() -> (usize, usize) {
    let plane = SlicePlane {
        y: 0.0,
        slant_deg: 0.0,
        pivot_x: 0.0,
    };
    type Linear = fn(f64, f64) -> [f64; 2];
    let cases: [(Linear, CriticalKind); 7] = [
        (|x, z| [x, -z], CriticalKind::Saddle),
        (|x, z| [x, z], CriticalKind::NodeSource),
        (|x, z| [-x, -0.5 * z], CriticalKind::NodeSink),
        (|x, z| [-z, x], CriticalKind::Center),
        (|x, z| [z, -x], CriticalKind::Center),
        (|x, z| [0.2 * x - z, x + 0.2 * z], CriticalKind::FocusCcw),
        (|x, z| [-0.2 * x + z, -x - 0.2 * z], CriticalKind::FocusCw),
    ];
    let mut agree = 0;
    for (f, want) in cases {
        let s = SliceField::from_fn(plane, 5.0, [41, 15], [0.0, 0.0], |x, z| {
            let v = f(x - 101.0, z - 36.0);
            Some([v[0] * 1e-3, v[1] * 1e-3])
        });
        let pts = find_critical_points(&s);
        let hit = pts.len() == 1 && pts[0].kind == want && (pts[0].x - 101.0).hypot(pts[0].z - 36.0) < 1e-6;
        agree += usize::from(hit);
    }
    (agree, cases.len())
}

fn topology(sheet: &mut Sheet, cdm: &Run) {
    let cfg = config(Variant::Cdm);
    let apexes = cfg.mixer().barrier_apexes();
    let planes: Vec<SlicePlane> = cfg
        .slice_planes()
        .into_iter()
        .filter(|p| apexes.iter().any(|&(y, x)| p.y == y && p.pivot_x == x))
        .collect();
    let analyses = analyze_slices(&cdm.field, &planes, cfg.vortex_threshold).unwrap();
    let best = analyses.iter().filter_map(|a| a.saddle_between_pair()).fold(None, |m: Option<f64>, r| {
        Some(m.map_or(r, |m| m.max(r)))
    });
    let saddles = analyses
        .iter()
        .filter(|a| a.points.iter().any(|p| p.kind == CriticalKind::Saddle))
        .count();
    let with_pair = analyses.iter().filter(|a| a.vortices.len() >= 2).count();
    let (agree, total) = synthetic_oracles();
    sheet.record(
        5,
        "topology",
        best.is_some_and(|r| r >= 1.2) && agree == total,
        format!(
            "{} apex cross-sections: {saddles} with a saddle, {with_pair} with >= 2 vortices, best saddle-between-pair size ratio {} (>= 1.2); synthetic oracles {agree}/{total}",
            analyses.len(),
            best.map_or("none".into(), |r| format!("{r:.2}"))
        ),
    );
}

fn helical_motion(sheet: &mut Sheet, runs: &[Run]) {
    let mut signs = Vec::new();
    let mut detail = Vec::new();
    for r in runs.iter().filter(|r| r.variant != Variant::Plain) {
        for (n, t) in r.tracks.iter().enumerate() {
            let rot: Vec<f64> = (0..4).map(|k| t.mean_rotation(k, k + 1).unwrap_or(0.0)).collect();
            signs.extend(rot.iter().map(|v| v.signum()));
            detail.push(format!("{} run {} [{}] rad", r.variant.name(), n + 1, fmt(&rot)));
        }
    }
    let single = !signs.is_empty() && signs.iter().all(|&s| s != 0.0 && s == signs[0]);
    sheet.record(
        6,
        "helical motion",
        single,
        format!("mean rotation per period over periods 1-5: {}", detail.join("; ")),
    );
}

fn ordering(sheet: &mut Sheet, runs: &[Run], theta: f64) {
    let by = |v: Variant| runs.iter().find(|r| r.variant == v).unwrap();
    let (c, s, p) = (by(Variant::Cdm), by(Variant::Sgm), by(Variant::Plain));
    let (fc, fs, fp) = (fret(c, theta), fret(s, theta), fret(p, theta));
    let ordered = |a: &[f64], b: &[f64], c: &[f64]| (1..a.len()).all(|k| a[k] > b[k] && b[k] > c[k]);
    let fret_ok = ordered(&fc, &fs, &fp);
    let mix_ok = ordered(&c.mixing[0], &s.mixing[0], &p.mixing[0]);
    sheet.record(
        7,
        "mixing ordering",
        fret_ok && mix_ok,
        format!(
            "FRET (theta {theta}) CDM [{}] SGM [{}] PLAIN [{}] strictly ordered from period 2: {fret_ok}; mixing index CDM [{}] SGM [{}] PLAIN [{}] ordered: {mix_ok}",
            fmt(&fc),
            fmt(&fs),
            fmt(&fp),
            fmt(&c.mixing[0]),
            fmt(&s.mixing[0]),
            fmt(&p.mixing[0])
        ),
    );
}

fn reference_targets(sheet: &mut Sheet, runs: &[Run], theta: f64) {
    let by = |v: Variant| runs.iter().find(|r| r.variant == v).unwrap();
    let (fc, fs) = (fret(by(Variant::Cdm), theta), fret(by(Variant::Sgm), theta));
    let crossing = fc.iter().position(|&f| f >= 0.8);
    let ratio = crossing.map(|k| fc[k] / fs[k]);
    let pass = fc[5] >= 0.7 && fc[9] >= 0.8 && ratio.is_some_and(|r| r >= 2.0);
    sheet.record(
        8,
        "reference targets (soft)",
        pass,
        format!(
            "CDM FRET period 6 = {:.3} (>= 0.7), period 10 = {:.3} (>= 0.8); CDM/SGM at crossing period {} = {} (>= 2.0)",
            fc[5],
            fc[9],
            crossing.map_or("none".into(), |k| (k + 1).to_string()),
            ratio.map_or("n/a".into(), |r| format!("{r:.2}"))
        ),
    );
    println!("  FRET sensitivity to theta at the default diffusivity:");
    for th in [0.1, 0.3, 0.5, 0.7, 0.9] {
        for r in runs {
            println!("    theta {th:.1} {:5} [{}]", r.variant.name(), fmt(&fret(r, th)));
        }
    }
}

fn small(threads: usize) -> RunConfig {
    let mut cfg = config(Variant::Cdm);
    cfg.h_um = 10.0;
    cfg.threads = Some(threads);
    cfg
}

fn determinism_and_desk_scale(sheet: &mut Sheet) {
    let dir = tempfile::tempdir().unwrap();
    let run = |cfg: &RunConfig, name: &str| {
        let start = Instant::now();
        let m = run_pipeline(cfg, Stage::All, &dir.path().join(name), false).unwrap();
        (m, start.elapsed().as_secs_f64())
    };
    let (a, fast_seconds) = run(&small(1), "a");
    let (b, _) = run(&small(1), "b");
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).max(4);
    let (c, _) = run(&small(threads), "c");
    let identical = a.artifacts == b.artifacts;
    let read = |m: &micromixer::io::Manifest| {
        read_report_csv(std::fs::File::open(m.dir.join("report.csv")).unwrap())
            .unwrap()
            .remove(0)
            .1
    };
    let worst = read(&a)
        .iter()
        .zip(&read(&c))
        .flat_map(|(p, q)| [(p.mixing_index, q.mixing_index), (p.fret_factor, q.fret_factor)])
        .map(|(x, y)| if x == y { 0.0 } else { (x - y).abs() / x.abs().max(y.abs()) })
        .fold(0.0, f64::max);
    sheet.record(
        9,
        "determinism",
        identical && worst <= 1e-10,
        format!(
            "single-thread reruns byte-identical over {} artifacts: {identical}; 1 vs {threads} threads metric difference {worst:.1e} (<= 1e-10)",
            a.artifacts.len()
        ),
    );

    let start = Instant::now();
    let full = config(Variant::Cdm);
    run_pipeline(&full, Stage::All, &dir.path().join("full"), false).unwrap();
    let full_seconds = start.elapsed().as_secs_f64();
    sheet.record(
        10,
        "desk scale",
        full_seconds <= 3600.0 && fast_seconds <= 300.0,
        format!("full CDM pipeline at h = 5 um {full_seconds:.0} s (<= 3600); h = 10 um fast mode {fast_seconds:.0} s (<= 300)"),
    );
}

fn main() {
    let mut sheet = Sheet { results: Vec::new() };
    let start = Instant::now();
    println!("acceptance: solving PLAIN, SGM and CDM at h = {H} um");
    let runs: Vec<Run> = [Variant::Plain, Variant::Sgm, Variant::Cdm].into_iter().map(simulate).collect();
    let by = |v: Variant| runs.iter().find(|r| r.variant == v).unwrap();
    let theta = config(Variant::Cdm).fret_threshold;

    duct_oracle(&mut sheet, by(Variant::Plain));
    conservation(&mut sheet, by(Variant::Cdm));
    stokes_reversibility(&mut sheet);
    tracer_properties(&mut sheet, &runs);
    topology(&mut sheet, by(Variant::Cdm));
    helical_motion(&mut sheet, &runs);
    ordering(&mut sheet, &runs, theta);
    reference_targets(&mut sheet, &runs, theta);
    drop(runs);
    determinism_and_desk_scale(&mut sheet);

    sheet.results.sort();
    let passed = sheet.results.iter().filter(|r| r.1).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.0} s",
        sheet.results.len(),
        start.elapsed().as_secs_f64()
    );
    if passed < sheet.results.len() && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
