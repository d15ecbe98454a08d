use std::sync::Arc;

use micromixer::flow::{flux_through_plane, mean_velocity, solve_steady, DuctProfile, FlowConditions, SolverSettings};
use micromixer::geometry::{voxelize, MixerConfig, Variant, VoxelGrid};
use micromixer::transport::{solve_transport, Species, TransportParams};

fn short(variant: Variant, periods: usize) -> MixerConfig {
    MixerConfig {
        channel_length: 100.0 + 800.0 * periods as f64,
        n_periods: periods,
        ..MixerConfig::with_variant(variant)
    }
}

fn grid(cfg: &MixerConfig, h: f64) -> Arc<VoxelGrid> {
    Arc::new(voxelize(cfg, h).unwrap())
}

#[test]
fn short_duct_matches_series_solution() {
    let cfg = MixerConfig {
        channel_length: 600.0,
        n_periods: 0,
        ..MixerConfig::with_variant(Variant::Plain)
    };
    let g = grid(&cfg, 5.0);
    let cond = FlowConditions::from_ul_per_min(5.0);
    let field = solve_steady(g.clone(), &cond, &SolverSettings::default()).unwrap();
    let duct = DuctProfile::new(200e-6, 70e-6, cond.total_flow_rate(), 100);
    let peak = duct.velocity(100e-6, 35e-6);
    let j = g.plane_index(300.0).unwrap();
    let mut worst = 0.0f64;
    for k in 0..g.dims[2] {
        for i in 0..g.dims[0] {
            let c = g.index(i, j, k);
            let p = g.center(i, j, k);
            let want = duct.velocity(p[0] * 1e-6, p[2] * 1e-6);
            worst = worst.max((field.u[c][1] - want).abs() / peak);
        }
    }
    assert!(worst <= 0.03, "worst relative error {worst}");
}

#[test]
fn flux_is_uniform_and_cells_conserve_mass() {
    let cfg = short(Variant::Cdm, 1);
    let g = grid(&cfg, 10.0);
    let cond = FlowConditions::from_ul_per_min(5.0);
    let field = solve_steady(g.clone(), &cond, &SolverSettings::default()).unwrap();
    let q = cond.total_flow_rate();
    for n in 0..20 {
        let y = 20.0 + n as f64 * 860.0 / 19.0;
        let f = flux_through_plane(&field, y).unwrap();
        assert!((f / q - 1.0).abs() <= 5e-3, "plane y = {y}: flux ratio {}", f / q);
    }
    // Per-cell divergence of the link fluxes handed to transport.
    let h = g.h * 1e-6;
    let bound = 1e-3 * mean_velocity(&cond, &cfg) / h;
    let faces = field.face_flux.as_ref().unwrap();
    let mut worst = 0.0f64;
    for c in 0..g.len() {
        if g.is_fluid(c) {
            let (i, j, k) = g.coords(c);
            worst = worst.max(faces.net_outflow(g.dims, i, j, k).abs() / h.powi(3));
        }
    }
    assert!(worst <= bound, "divergence {worst:e} exceeds {bound:e}");
}

#[test]
fn stokes_flow_reverses_with_the_inlet_flux() {
    let cfg = short(Variant::Cdm, 1);
    let g = grid(&cfg, 10.0);
    let forward = FlowConditions {
        stokes_mode: true,
        ..FlowConditions::from_ul_per_min(5.0)
    };
    let backward = FlowConditions {
        flow_rate_per_inlet: -forward.flow_rate_per_inlet,
        ..forward.clone()
    };
    let settings = SolverSettings::default();
    let a = solve_steady(g.clone(), &forward, &settings).unwrap();
    let b = solve_steady(g.clone(), &backward, &settings).unwrap();
    let u = mean_velocity(&forward, &cfg);
    let worst = a
        .u
        .iter()
        .zip(&b.u)
        .flat_map(|(p, q)| (0..3).map(move |d| (p[d] + q[d]).abs()))
        .fold(0.0, f64::max);
    assert!(worst <= 1e-9 * u, "max |u(Q) + u(-Q)| = {worst:e}");
}

#[test]
fn conserved_scalar_flux_is_uniform() {
    let cfg = short(Variant::Sgm, 1);
    let g = grid(&cfg, 10.0);
    let cond = FlowConditions::from_ul_per_min(5.0);
    let field = solve_steady(g.clone(), &cond, &SolverSettings::default()).unwrap();
    let params = TransportParams::default();
    let s = solve_transport(&field, &params).unwrap();
    let faces = field.face_fluxes();
    let inflow = 0.5 * cond.total_flow_rate() * params.c_a0;
    for jf in (0..=g.dims[1]).step_by(4) {
        let f = s.plane_flux(&faces, Species::A, jf) + s.plane_flux(&faces, Species::P, jf);
        assert!((f / inflow - 1.0).abs() <= 0.01, "face {jf}: ratio {}", f / inflow);
    }
}
