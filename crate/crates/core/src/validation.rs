//! The invariant and oracle suite shared by the acceptance tests and the
//! `validate` subcommand. Each check reports its measured value against its
//! bound instead of panicking, so a run always produces a full report.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    default_theta_grid, derived_frequencies, dual_helicity_average, flattening_angle, flattening_threshold,
    heading_error_curve, HeadingCurve, Pairing,
};
use crate::constants::{hz_to_rad, rad_to_hz};
use crate::error::Result;
use crate::model::{mu_eff, DriveForm, EffectToggles, Helicity, SimulationConfig};
use crate::oracle::{oracle_precession_frequency, spacing_residual, FullModel, OracleOptions};
use crate::response::{find_precession_frequency, Geometry};

/// One row of the validation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    /// The quantity compared against `bound` (worst case over the check).
    pub measured: f64,
    pub bound: f64,
    pub unit: String,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:>2} {}: {:.4e} {} (bound {:.4e}){}{}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.measured,
            self.unit,
            self.bound,
            if self.detail.is_empty() { "" } else { "; " },
            self.detail
        )
    }
}

fn check(id: u32, name: &str, measured: f64, bound: f64, unit: &str, passed: bool, detail: String) -> Check {
    Check {
        id,
        name: name.to_string(),
        passed,
        measured,
        bound,
        unit: unit.to_string(),
        detail,
    }
}

fn errored(id: u32, name: &str, e: crate::Error) -> Check {
    check(id, name, f64::NAN, f64::NAN, "", false, format!("error: {e}"))
}

fn w0_hz(config: &SimulationConfig, geometry: Geometry) -> Result<f64> {
    Ok(rad_to_hz(find_precession_frequency(config, geometry)?.omega0))
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

const GEOMETRIES: [Geometry; 2] = [Geometry::Parallel, Geometry::Perpendicular];

/// Tolerance of the exact symmetry checks, Hz.
pub const SYMMETRY_TOL_HZ: f64 = 2e-3;

/// `omega_NuZ` and `omega_rev` at the configured field.
pub fn derived_frequency_check(config: &SimulationConfig) -> Check {
    let name = "derived frequencies";
    let d = derived_frequencies(&config.species, 55e-6);
    let e_nuz = (d.omega_nuz / 226.0 - 1.0).abs();
    let e_rev = (d.omega_rev / 22.0 - 1.0).abs();
    let passed = e_nuz <= 0.01 && e_rev <= 0.05;
    check(
        1,
        name,
        e_nuz.max(e_rev / 5.0),
        0.01,
        "rel",
        passed,
        format!("omega_NuZ = {:.2} Hz, omega_rev = {:.2} Hz at 55 uT", d.omega_nuz, d.omega_rev),
    )
}

pub fn parity_check(config: &SimulationConfig) -> Check {
    let name = "theta parity";
    let run = || -> Result<f64> {
        let cases: Vec<(f64, Geometry)> = [10.0f64, 40.0, 70.0]
            .iter()
            .flat_map(|&t| GEOMETRIES.map(|g| (t.to_radians(), g)))
            .collect();
        let d = cases
            .par_iter()
            .map(|&(t, g)| Ok(w0_hz(&config.with_theta(t), g)? - w0_hz(&config.with_theta(-t), g)?))
            .collect::<Result<Vec<f64>>>()?;
        Ok(max_abs(d))
    };
    match run() {
        Ok(m) => check(2, name, m, SYMMETRY_TOL_HZ, "Hz", m <= SYMMETRY_TOL_HZ, String::new()),
        Err(e) => errored(2, name, e),
    }
}

pub fn inversion_check(config: &SimulationConfig) -> Check {
    let name = "helicity/field inversion";
    let run = || -> Result<f64> {
        let cases: Vec<(f64, Geometry)> = [0.0f64, 30.0, 60.0]
            .iter()
            .flat_map(|&t| GEOMETRIES.map(|g| (t.to_radians(), g)))
            .collect();
        let d = cases
            .par_iter()
            .map(|&(t, g)| {
                let base = config.with_theta(t).with_helicity(Helicity::Plus);
                let mut flipped = base.clone();
                flipped.field.b0 = -flipped.field.b0;
                Ok(w0_hz(&base.with_helicity(Helicity::Minus), g)? - w0_hz(&flipped, g)?)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(max_abs(d))
    };
    match run() {
        Ok(m) => check(3, name, m, SYMMETRY_TOL_HZ, "Hz", m <= SYMMETRY_TOL_HZ, String::new()),
        Err(e) => errored(3, name, e),
    }
}

fn helicity_curves(config: &SimulationConfig, grid: &[f64], geometry: Geometry) -> Result<[HeadingCurve; 2]> {
    Ok([
        heading_error_curve(&config.with_helicity(Helicity::Plus), grid, geometry)?,
        heading_error_curve(&config.with_helicity(Helicity::Minus), grid, geometry)?,
    ])
}

pub fn nuz_only_check(config: &SimulationConfig) -> Check {
    let name = "NuZ-only helicity equality";
    let grid: Vec<f64> = [0.0f64, 20.0, 40.0, 60.0, 80.0].iter().map(|d| d.to_radians()).collect();
    let c = config.with_toggles(EffectToggles::NUZ_ONLY);
    let run = || -> Result<f64> {
        let mut worst = 0.0f64;
        for g in GEOMETRIES {
            let [p, m] = helicity_curves(&c, &grid, g)?;
            worst = worst.max(max_abs(p.omega0.iter().zip(&m.omega0).map(|(a, b)| a - b)));
        }
        Ok(worst)
    };
    match run() {
        Ok(m) => check(4, name, m, SYMMETRY_TOL_HZ, "Hz", m <= SYMMETRY_TOL_HZ, String::new()),
        Err(e) => errored(4, name, e),
    }
}

/// Worst `|w0+ + w0- - 2 w_L|` over the default grid and both geometries, Hz.
pub fn nuz_off_residual(config: &SimulationConfig) -> Result<f64> {
    let c = config.with_toggles(EffectToggles {
        nlz: true,
        ls: true,
        nuz: false,
    });
    let wl = derived_frequencies(&c.species, c.field.b0).omega_l;
    let grid = default_theta_grid();
    let mut worst = 0.0f64;
    for g in GEOMETRIES {
        let [p, m] = helicity_curves(&c, &grid, g)?;
        worst = worst.max(max_abs(p.omega0.iter().zip(&m.omega0).map(|(a, b)| a + b - 2.0 * wl)));
    }
    Ok(worst)
}

pub fn nuz_off_check(config: &SimulationConfig) -> Check {
    let name = "NuZ-off helicity symmetry";
    let bound = 0.05;
    let mut secular = config.clone();
    secular.numerics.drive_form = DriveForm::CoRotating;
    match (nuz_off_residual(config), nuz_off_residual(&secular)) {
        (Ok(m), Ok(s)) => check(
            5,
            name,
            m,
            bound,
            "Hz",
            m <= bound,
            format!("co-rotating (secular) response gives {s:.2e} Hz"),
        ),
        (Err(e), _) | (_, Err(e)) => errored(5, name, e),
    }
}

/// Worst `|(w0+ + w0-)/2 - w0(NuZ only)|` over the default grid, Hz.
pub fn decomposition_residual(config: &SimulationConfig) -> Result<(f64, f64)> {
    let grid = default_theta_grid();
    let nuz = config.with_toggles(EffectToggles::NUZ_ONLY);
    let mut worst = 0.0f64;
    let mut worst_theta = 0.0;
    for g in GEOMETRIES {
        let [p, m] = helicity_curves(config, &grid, g)?;
        let only = heading_error_curve(&nuz, &grid, g)?;
        for k in 0..grid.len() {
            let d = (0.5 * (p.omega0[k] + m.omega0[k]) - only.omega0[k]).abs();
            if d > worst {
                worst = d;
                worst_theta = grid[k].to_degrees();
            }
        }
    }
    Ok((worst, worst_theta))
}

pub fn decomposition_check(config: &SimulationConfig) -> Check {
    let name = "dual-helicity average equals NuZ-only curve";
    let bound = 0.1;
    match decomposition_residual(config) {
        Ok((m, t)) => check(6, name, m, bound, "Hz", m <= bound, format!("worst at {t:.0} deg")),
        Err(e) => errored(6, name, e),
    }
}

/// Fields of the cubic-scaling fit, tesla.
pub const BREIT_RABI_FIELDS: [f64; 4] = [10e-6, 30e-6, 55e-6, 80e-6];

/// Least-squares coefficient `C` of `residual = C (mu_eff B0)^3 / Delta_S^2`
/// and the log-log slope between the extreme fields.
pub fn breit_rabi_fit(config: &SimulationConfig) -> Result<(f64, f64)> {
    let sp = &config.species;
    let ds = hz_to_rad(sp.delta_s_hz);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut pts = Vec::new();
    for &b in &BREIT_RABI_FIELDS {
        let r = spacing_residual(sp, b)?;
        let x = (mu_eff(sp) * b).powi(3) / (ds * ds);
        num += r * x;
        den += x * x;
        pts.push((b, r));
    }
    let (b_lo, r_lo) = pts[0];
    let (b_hi, r_hi) = pts[pts.len() - 1];
    Ok((num / den, (r_hi / r_lo).ln() / (b_hi / b_lo).ln()))
}

pub fn breit_rabi_check(config: &SimulationConfig) -> Check {
    let name = "second-order Zeeman vs Breit-Rabi";
    let bound = 10.0;
    match breit_rabi_fit(config) {
        Ok((c, slope)) => check(
            7,
            name,
            c,
            bound,
            "C",
            c <= bound && (slope - 3.0).abs() < 0.05,
            format!("log-log slope {slope:.3}"),
        ),
        Err(e) => errored(7, name, e),
    }
}

/// The curated oracle configurations: (tilt deg, helicity, geometry, detuning GHz).
pub const ORACLE_CASES: [(f64, Helicity, Geometry, f64); 3] = [
    (0.0, Helicity::Plus, Geometry::Parallel, 0.0),
    (60.0, Helicity::Minus, Geometry::Perpendicular, 0.0),
    (80.0, Helicity::Plus, Geometry::Parallel, 2.0),
];

/// `(effective, oracle)` precession frequencies in Hz for one case. The
/// oracle runs with a weaker RF field so it stays in the linear regime.
pub fn oracle_comparison(config: &SimulationConfig, case: (f64, Helicity, Geometry, f64)) -> Result<(f64, f64)> {
    let (t, h, g, det) = case;
    let mut c = config.with_theta(t.to_radians()).with_helicity(h);
    c.pump.detuning = hz_to_rad(det * 1e9);
    c.field.b1 = c.field.b0.abs() * 1e-5;
    let eff = find_precession_frequency(&c, g)?.omega0;
    let model = FullModel::new(&c, OracleOptions::default())?;
    let ora = oracle_precession_frequency(&model, g, eff)?;
    Ok((rad_to_hz(eff), rad_to_hz(ora)))
}

pub fn oracle_check(config: &SimulationConfig) -> Check {
    let name = "time-domain oracle equivalence";
    let wl = derived_frequencies(&config.species, config.field.b0).omega_l;
    let mut worst_ratio = 0.0f64;
    let mut parts = Vec::new();
    for case in ORACLE_CASES {
        match oracle_comparison(config, case) {
            Ok((e, o)) => {
                let tol = 0.5f64.max(0.05 * (e - wl).abs());
                worst_ratio = worst_ratio.max((e - o).abs() / tol);
                parts.push(format!("{:.0} deg: {:+.3} Hz (tol {:.2})", case.0, o - e, tol));
            }
            Err(e) => return errored(8, name, e),
        }
    }
    check(8, name, worst_ratio, 1.0, "x tol", worst_ratio <= 1.0, parts.join(", "))
}

pub fn linear_regime_check(config: &SimulationConfig) -> Check {
    let name = "linear response in B1";
    let bound = config.numerics.root_tol_hz;
    let run = || -> Result<f64> {
        let c = config.with_theta(40f64.to_radians());
        let mut strong = c.clone();
        strong.field.b1 *= 10.0;
        let mut worst = 0.0f64;
        for g in GEOMETRIES {
            worst = worst.max((w0_hz(&c, g)? - w0_hz(&strong, g)?).abs());
        }
        Ok(worst)
    };
    match run() {
        Ok(m) => check(9, name, m, bound, "Hz", m <= bound, String::new()),
        Err(e) => errored(9, name, e),
    }
}

fn strictly_monotone(v: &[f64], increasing: bool) -> bool {
    v.windows(2).all(|w| if increasing { w[1] > w[0] } else { w[1] < w[0] })
}

pub fn structure_check(config: &SimulationConfig) -> Check {
    let name = "heading-error sign and ordering";
    let grid = default_theta_grid();
    let wl = derived_frequencies(&config.species, config.field.b0).omega_l;
    let run = || -> Result<(usize, Vec<String>)> {
        let mut violations = Vec::new();
        for g in GEOMETRIES {
            let [p, m] = helicity_curves(config, &grid, g)?;
            let tag = g.as_str();
            if p.omega0.iter().chain(&m.omega0).any(|&w| w >= wl) {
                violations.push(format!("{tag}: w0 >= w_L"));
            }
            if p.omega0.iter().zip(&m.omega0).any(|(a, b)| a >= b) {
                violations.push(format!("{tag}: w0+ >= w0-"));
            }
            if !strictly_monotone(&p.omega0, true) {
                violations.push(format!("{tag}: w0+ not increasing"));
            }
            if !strictly_monotone(&m.omega0, false) {
                violations.push(format!("{tag}: w0- not decreasing"));
            }
        }
        Ok((violations.len(), violations))
    };
    match run() {
        Ok((n, v)) => check(10, name, n as f64, 0.0, "violations", n == 0, v.join(", ")),
        Err(e) => errored(10, name, e),
    }
}

/// Detunings of the dual-helicity checks, GHz.
pub const DUAL_DETUNINGS_GHZ: [f64; 3] = [0.0, 2.0, 4.0];

/// Per detuning: `[same-probe residual at full tilt per geometry]` and the
/// largest orthogonal-probe residual over the grid, Hz.
pub fn dual_residuals(config: &SimulationConfig) -> Result<Vec<([f64; 2], f64)>> {
    let grid = default_theta_grid();
    DUAL_DETUNINGS_GHZ
        .iter()
        .map(|&det| {
            let mut c = config.clone();
            c.pump.detuning = hz_to_rad(det * 1e9);
            let same = dual_helicity_average(&c, &grid, Pairing::SameProbe)?;
            let orth = dual_helicity_average(&c, &grid, Pairing::OrthogonalProbe)?;
            let tilt = |d: &crate::analysis::DualCurve| d.residual.last().copied().unwrap_or(f64::NAN).abs();
            Ok((
                [tilt(&same[0]), tilt(&same[1])],
                orth[0].max_abs_residual().max(orth[1].max_abs_residual()),
            ))
        })
        .collect()
}

pub fn same_probe_check(rows: &Result<Vec<([f64; 2], f64)>>) -> Check {
    let name = "same-probe dual residual at full tilt";
    let rows = match rows {
        Ok(r) => r,
        Err(e) => return check(11, name, f64::NAN, f64::NAN, "", false, format!("error: {e}")),
    };
    let mut ok = true;
    let mut worst = 0.0f64;
    let mut text = Vec::new();
    for k in 0..2 {
        let v: Vec<f64> = rows.iter().map(|r| r.0[k]).collect();
        ok &= v.iter().all(|&x| (5.0..=60.0).contains(&x));
        ok &= strictly_monotone(&v, true) || strictly_monotone(&v, false);
        worst = worst.max(max_abs(v.iter().copied()));
        text.push(format!(
            "{}: {}",
            GEOMETRIES[k].as_str(),
            v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join("/")
        ));
    }
    check(11, name, worst, 60.0, "Hz", ok, format!("{} Hz for 0/2/4 GHz, band 5-60", text.join(", ")))
}

pub fn orthogonal_probe_check(rows: &Result<Vec<([f64; 2], f64)>>) -> Check {
    let name = "orthogonal-probe dual residual";
    match rows {
        Ok(r) => {
            let m = max_abs(r.iter().map(|x| x.1));
            let per: Vec<String> = r.iter().map(|x| format!("{:.3}", x.1)).collect();
            check(12, name, m, 1.0, "Hz", m < 1.0, format!("{} Hz for 0/2/4 GHz", per.join("/")))
        }
        Err(e) => check(12, name, f64::NAN, f64::NAN, "", false, format!("error: {e}")),
    }
}

/// Threshold that the flattening check compares against, tesla.
pub const FLATTENING_REFERENCE: f64 = 8.2e-9;

pub fn auxfield_check(config: &SimulationConfig) -> Check {
    let name = "auxiliary-field flattening";
    let g = Geometry::Parallel;
    let run = || -> Result<(f64, f64, Vec<f64>)> {
        let th = flattening_threshold(config, g)?;
        let below = flattening_angle(config, 0.5 * th, g)?;
        let above = [1.25, 2.0, 3.0, 4.0]
            .iter()
            .map(|k| flattening_angle(config, k * th, g))
            .collect::<Result<Vec<f64>>>()?;
        Ok((th, below, above))
    };
    match run() {
        Ok((th, below, above)) => {
            let in_range = th >= 0.5 * FLATTENING_REFERENCE && th <= 2.0 * FLATTENING_REFERENCE;
            let ok = in_range && below == 0.0 && above[0] > 0.0 && strictly_monotone(&above, true);
            check(
                13,
                name,
                th * 1e9,
                FLATTENING_REFERENCE * 1e9,
                "nT",
                ok,
                format!(
                    "theta0 = {:.2} deg at half threshold, {} deg at 1.25/2/3/4x",
                    below.to_degrees(),
                    above.iter().map(|a| format!("{:.2}", a.to_degrees())).collect::<Vec<_>>().join("/")
                ),
            )
        }
        Err(e) => errored(13, name, e),
    }
}

/// Run every check against `config`.
pub fn run_suite(config: &SimulationConfig) -> Vec<Check> {
    let dual = dual_residuals(config);
    vec![
        derived_frequency_check(config),
        parity_check(config),
        inversion_check(config),
        nuz_only_check(config),
        nuz_off_check(config),
        decomposition_check(config),
        breit_rabi_check(config),
        oracle_check(config),
        linear_regime_check(config),
        structure_check(config),
        same_probe_check(&dual),
        orthogonal_probe_check(&dual),
        auxfield_check(config),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_line_format() {
        let c = check(4, "x", 1e-3, 2e-3, "Hz", true, String::new());
        assert!(c.to_string().starts_with("PASS  4 x: 1.0000e-3 Hz"));
        let c = check(12, "y", 2.0, 1.0, "Hz", false, "note".into());
        assert!(c.to_string().starts_with("FAIL 12 y") && c.to_string().ends_with("; note"));
    }

    #[test]
    fn monotonicity_is_strict() {
        assert!(strictly_monotone(&[1.0, 2.0, 3.0], true));
        assert!(!strictly_monotone(&[1.0, 1.0, 3.0], true));
        assert!(strictly_monotone(&[3.0, 2.0], false));
    }
}
