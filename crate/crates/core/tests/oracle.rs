//! The time-domain oracle against the effective model.

use std::f64::consts::PI;

use headerr::model::{MeanFields, ModelContext, SimulationConfig, ZeemanMode};
use headerr::oracle::{demodulate, integrate_full, mixed_ground, relax_full, FullModel, OracleOptions};
use headerr::reduction::{effective_liouvillian, steady_state};
use headerr::response::{find_precession_frequency, Geometry};
use headerr::spin::CMat;
use headerr::superop::vec;
use num_complex::Complex64 as C64;

#[test]
fn closed_system_conserves_fz() {
    let mut c = SimulationConfig::rb85_default();
    c.pump.rabi = 0.0;
    c.rates.gamma_mix = 0.0;
    c.rates.gamma_q = 0.0;
    c.rates.gamma_sd = 0.0;
    c.rates.gamma_se = 0.0;
    c.field.b1 = 0.0;
    c.zeeman = ZeemanMode::Exact;
    let model = FullModel::new(&c, OracleOptions::default()).unwrap();
    let ctx = ModelContext::new(&c.species).unwrap();
    let fz = ctx.ops.fz.matrix();
    let mut rho = CMat::zeros((24, 24));
    // |a, m = 3>, the stretched state
    rho[[6, 6]] = C64::new(1.0, 0.0);
    let ev = |r: &CMat| (fz * &r.t()).sum().re;
    let out = model.evolve(&rho, 0.0, 1e-3, 0.0).unwrap();
    assert!((ev(&out) - 3.0).abs() < 1e-9);
    // a superposition precesses but keeps <F_z>
    let mut sup = CMat::zeros((24, 24));
    for (i, j) in [(5, 5), (6, 6), (5, 6), (6, 5)] {
        sup[[i, j]] = C64::new(0.5, 0.0);
    }
    let out = model.evolve(&sup, 0.0, 3.3e-5, 0.0).unwrap();
    assert!((ev(&out) - 2.5).abs() < 1e-9);
    assert!((out[[5, 6]] - C64::new(0.5, 0.0)).norm() > 1e-3);
}

#[test]
fn undriven_relaxation_matches_effective_populations() {
    let c = SimulationConfig::rb85_default();
    let rho = relax_full(&c, 10.0 / c.rates.gamma_sd).unwrap();
    let ctx = ModelContext::new(&c.species).unwrap();
    let eff = effective_liouvillian(&ctx, &c).unwrap();
    let p = steady_state(&eff, &c).unwrap().basis_populations();
    let n = p.len();
    let ground: f64 = (0..n).map(|i| rho[[i, i]].re).sum();
    for i in 0..n {
        let q = rho[[i, i]].re / ground;
        assert!((q - p[i]).abs() <= 0.01 * p[i], "level {i}: {q} vs {}", p[i]);
    }
}

#[test]
fn pumping_rate_into_stretched_state() {
    // initial rate out of the unpolarised state, effective vs full
    let mut c = SimulationConfig::rb85_default();
    c.field.b1 = 0.0;
    let ctx = ModelContext::new(&c.species).unwrap();
    let eff = effective_liouvillian(&ctx, &c).unwrap();
    let n = eff.ground_dim();
    let mut mixed = CMat::zeros((n, n));
    for i in 0..n {
        mixed[[i, i]] = C64::new(1.0 / n as f64, 0.0);
    }
    let stretched = 6;
    let rate_eff = eff.matrix(&MeanFields::default()).dot(&vec(&mixed))[stretched * n + stretched].re;

    let model = FullModel::new(&c, OracleOptions::default()).unwrap();
    let t = 5e-7;
    let out = model.evolve(&mixed_ground(&model), 0.0, t, 0.0).unwrap();
    let rate_full = (out[[stretched, stretched]].re - 1.0 / n as f64) / t;
    assert!(rate_eff > 0.0);
    assert!((rate_full / rate_eff - 1.0).abs() < 0.05, "{rate_full} vs {rate_eff}");
}

#[test]
fn driven_trace_is_physical_and_crosses_zero_at_the_effective_frequency() {
    let mut c = SimulationConfig::rb85_default();
    c.field.b1 = c.field.b0 * 1e-5;
    let w0 = find_precession_frequency(&c, Geometry::Parallel).unwrap().omega0;
    let period = 2.0 * PI / w0;
    let trace = integrate_full(&c, w0, 20.0 * period).unwrap();
    let dt = trace.time[1] - trace.time[0];
    assert!(trace.time.windows(2).all(|w| ((w[1] - w[0]) - dt).abs() < 1e-12 * period));
    assert!(trace.max_trace_error < 1e-8);
    assert!(trace.min_eigenvalue > -1e-8);
    let d = demodulate(&trace, w0).unwrap();
    // at the effective crossing the in-phase part is a small fraction of
    // the full response
    let amp = d.parallel.in_phase.hypot(d.parallel.out_of_phase);
    assert!(d.parallel.in_phase.abs() < 0.01 * amp, "{d:?}");
}
