//! Heading-error curves, the effect decomposition, the three suppression
//! schemes and a few closed-form cross-checks.

use std::f64::consts::PI;

use log::warn;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::*;
use crate::error::{Error, Result};
use crate::model::{mu_eff, EffectToggles, Helicity, ModelContext, SimulationConfig, ZeemanMode};
use crate::reduction::light_kernel;
use crate::response::{prepare_with_kernel, Geometry, ResponseProblem};
use crate::spin::{AlkaliSpecies, CMat, HyperfineBasis, Sector};

/// Characteristic frequencies of the ground-state Zeeman spectrum, Hz
/// (`mu_eff` in Hz/T).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedFrequencies {
    pub mu_eff: f64,
    pub omega_l: f64,
    pub omega_rev: f64,
    pub omega_nuz: f64,
}

pub fn derived_frequencies(species: &AlkaliSpecies, b0: f64) -> DerivedFrequencies {
    let mu = rad_to_hz(mu_eff(species));
    let omega_l = mu * b0.abs();
    DerivedFrequencies {
        mu_eff: mu,
        omega_l,
        omega_rev: omega_l * omega_l / species.delta_s_hz,
        omega_nuz: species.g_i * MU_N_HZ_PER_T * b0.abs(),
    }
}

/// Extracted precession frequency over a tilt grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadingCurve {
    /// rad
    pub theta: Vec<f64>,
    /// Hz
    pub omega0: Vec<f64>,
    /// `omega0` at zero tilt from the same run, Hz.
    pub reference: f64,
    pub fingerprint: String,
    /// Fingerprint of the configuration with helicity and tilt normalized;
    /// two curves may be paired only if these agree.
    pub pairing_key: String,
    pub geometry: Geometry,
    pub helicity: Helicity,
}

impl HeadingCurve {
    /// `omega0(theta) - omega0(0)`, Hz.
    pub fn heading_error(&self) -> Vec<f64> {
        self.omega0.iter().map(|w| w - self.reference).collect()
    }

    /// `omega0` at a grid angle; off-grid requests are refused.
    pub fn at(&self, theta: f64) -> Result<f64> {
        self.theta
            .iter()
            .position(|t| (t - theta).abs() < 1e-9)
            .map(|i| self.omega0[i])
            .ok_or(Error::GridMiss {
                theta_deg: theta.to_degrees(),
            })
    }
}

/// Stable content hash of a configuration.
pub fn fingerprint(config: &SimulationConfig) -> String {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_string(config).expect("configuration serializes");
    let digest = Sha256::digest(format!("{}\n{}", env!("CARGO_PKG_VERSION"), json).as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn pairing_key(config: &SimulationConfig) -> String {
    let mut c = config.with_helicity(Helicity::Plus).with_theta(0.0);
    c.field.ba = 0.0;
    fingerprint(&c)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    for w in grid.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::config("theta grid", format!("{:?}", grid), "strictly increasing"));
        }
    }
    if let Some(t) = grid.iter().find(|t| !(t.abs() <= PI / 2.0 + 1e-12)) {
        return Err(Error::config("theta grid", t.to_degrees(), "|theta| <= 90 deg"));
    }
    Ok(())
}

/// Default tilt grid, 0 to 80 degrees in 5 degree steps.
pub fn default_theta_grid() -> Vec<f64> {
    (0..=16).map(|k| (5.0 * k as f64).to_radians()).collect()
}

/// Grid with zero tilt guaranteed present; returns the index of zero.
fn with_reference(grid: &[f64]) -> (Vec<f64>, usize) {
    if let Some(i) = grid.iter().position(|t| t.abs() < 1e-12) {
        return (grid.to_vec(), i);
    }
    let mut g = grid.to_vec();
    g.push(0.0);
    g.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let i = g.iter().position(|t| *t == 0.0).unwrap();
    (g, i)
}

/// Run `f` on a response problem at each tilt, reusing the light kernel for
/// every variant the closure asks for.
fn per_angle<T, F>(config: &SimulationConfig, grid: &[f64], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&ModelContext, &SimulationConfig, &CMat) -> Result<T> + Sync,
{
    config.validate()?;
    let ctx = ModelContext::new(&config.species)?;
    grid.par_iter()
        .map(|&theta| {
            let c = config.with_theta(theta);
            let run = || -> Result<T> {
                let kernel = light_kernel(&ctx, &c)?;
                f(&ctx, &c, &kernel)
            };
            run().map_err(|e| Error::at_angle(theta, e))
        })
        .collect()
}

fn omega0_hz(p: &ResponseProblem, g: Geometry) -> Result<f64> {
    Ok(rad_to_hz(p.find(g)?.omega0))
}

/// `omega0(theta)` on a grid for one geometry.
pub fn heading_error_curve(config: &SimulationConfig, grid: &[f64], geometry: Geometry) -> Result<HeadingCurve> {
    check_grid(grid)?;
    let (full, zero) = with_reference(grid);
    let values = per_angle(config, &full, |ctx, c, k| omega0_hz(&prepare_with_kernel(ctx, c, k)?, geometry))?;
    Ok(assemble_curve(config, &full, values, zero, grid, geometry))
}

fn assemble_curve(
    config: &SimulationConfig,
    full: &[f64],
    values: Vec<f64>,
    zero: usize,
    grid: &[f64],
    geometry: Geometry,
) -> HeadingCurve {
    let reference = values[zero];
    let keep: Vec<usize> = full
        .iter()
        .enumerate()
        .filter(|(_, t)| grid.iter().any(|g| (*g - **t).abs() < 1e-12))
        .map(|(i, _)| i)
        .collect();
    HeadingCurve {
        theta: keep.iter().map(|&i| full[i]).collect(),
        omega0: keep.iter().map(|&i| values[i]).collect(),
        reference,
        fingerprint: fingerprint(config),
        pairing_key: pairing_key(config),
        geometry,
        helicity: config.pump.helicity,
    }
}

/// Curves for both geometries from a single pass.
pub fn heading_error_curves(config: &SimulationConfig, grid: &[f64]) -> Result<[HeadingCurve; 2]> {
    check_grid(grid)?;
    let (full, zero) = with_reference(grid);
    let values = per_angle(config, &full, |ctx, c, k| {
        let p = prepare_with_kernel(ctx, c, k)?;
        Ok((omega0_hz(&p, Geometry::Parallel)?, omega0_hz(&p, Geometry::Perpendicular)?))
    })?;
    let (par, perp): (Vec<f64>, Vec<f64>) = values.into_iter().unzip();
    Ok([
        assemble_curve(config, &full, par, zero, grid, Geometry::Parallel),
        assemble_curve(config, &full, perp, zero, grid, Geometry::Perpendicular),
    ])
}

/// `omega0 - omega_L` (Hz) with one effect at a time and with all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectCurves {
    pub nlz: Vec<f64>,
    pub ls: Vec<f64>,
    pub nuz: Vec<f64>,
    pub total: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub theta: Vec<f64>,
    pub geometry: Geometry,
    /// Hz
    pub omega_l: f64,
    pub plus: EffectCurves,
    pub minus: EffectCurves,
}

impl Decomposition {
    pub fn curves(&self, h: Helicity) -> &EffectCurves {
        match h {
            Helicity::Plus => &self.plus,
            Helicity::Minus => &self.minus,
        }
    }
}

/// Contributions of the nonlinear Zeeman effect, the light shift and the
/// nuclear Zeeman effect, for both helicities.
pub fn effect_decomposition(config: &SimulationConfig, grid: &[f64], geometry: Geometry) -> Result<Decomposition> {
    if config.zeeman != ZeemanMode::Perturbative {
        return Err(Error::config("zeeman.mode", "exact", "decomposition needs the perturbative spectrum"));
    }
    check_grid(grid)?;
    let wl = derived_frequencies(&config.species, config.field.b0).omega_l;
    let toggles = [
        EffectToggles::NLZ_ONLY,
        EffectToggles::LS_ONLY,
        EffectToggles::NUZ_ONLY,
        EffectToggles::ALL,
    ];
    let mut out = Vec::new();
    for h in [Helicity::Plus, Helicity::Minus] {
        let base = config.with_helicity(h);
        let rows = per_angle(&base, grid, |ctx, c, k| {
            toggles
                .iter()
                .map(|t| omega0_hz(&prepare_with_kernel(ctx, &c.with_toggles(*t), k)?, geometry).map(|w| w - wl))
                .collect::<Result<Vec<f64>>>()
        })?;
        let col = |j: usize| rows.iter().map(|r| r[j]).collect::<Vec<f64>>();
        out.push(EffectCurves {
            nlz: col(0),
            ls: col(1),
            nuz: col(2),
            total: col(3),
        });
    }
    let minus = out.pop().unwrap();
    let plus = out.pop().unwrap();
    Ok(Decomposition {
        theta: grid.to_vec(),
        geometry,
        omega_l: wl,
        plus,
        minus,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Both helicities read out with the same probe.
    SameProbe,
    /// sigma+ with one probe, sigma- with the other.
    OrthogonalProbe,
}

/// Pointwise dual-helicity average re-referenced to zero tilt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCurve {
    pub theta: Vec<f64>,
    /// `(omega0_A + omega0_B) / 2`, Hz
    pub average: Vec<f64>,
    /// `average - average(0)`, Hz
    pub residual: Vec<f64>,
    pub first: (Helicity, Geometry),
    pub second: (Helicity, Geometry),
}

impl DualCurve {
    pub fn max_abs_residual(&self) -> f64 {
        self.residual.iter().fold(0.0f64, |m, r| m.max(r.abs()))
    }
}

/// Average two curves according to a pairing rule.
pub fn pair_curves(a: &HeadingCurve, b: &HeadingCurve, pairing: Pairing) -> Result<DualCurve> {
    if a.pairing_key != b.pairing_key {
        return Err(Error::PairingMismatch("configurations differ beyond helicity and probe".into()));
    }
    if a.helicity == b.helicity {
        return Err(Error::PairingMismatch("both curves have the same helicity".into()));
    }
    let same = a.geometry == b.geometry;
    match pairing {
        Pairing::SameProbe if !same => return Err(Error::PairingMismatch("same-probe pairing needs equal geometries".into())),
        Pairing::OrthogonalProbe if same => {
            return Err(Error::PairingMismatch("orthogonal pairing needs different geometries".into()))
        }
        _ => {}
    }
    if a.theta.len() != b.theta.len() || a.theta.iter().zip(&b.theta).any(|(x, y)| (x - y).abs() > 1e-12) {
        return Err(Error::PairingMismatch("tilt grids differ".into()));
    }
    let average: Vec<f64> = a.omega0.iter().zip(&b.omega0).map(|(x, y)| 0.5 * (x + y)).collect();
    let reference = 0.5 * (a.reference + b.reference);
    Ok(DualCurve {
        theta: a.theta.clone(),
        residual: average.iter().map(|v| v - reference).collect(),
        average,
        first: (a.helicity, a.geometry),
        second: (b.helicity, b.geometry),
    })
}

/// Both pairs of a pairing rule: (parallel, parallel) and
/// (perpendicular, perpendicular) for the same probe; (parallel+,
/// perpendicular-) and its mirror (perpendicular+, parallel-) otherwise.
pub fn dual_helicity_average(config: &SimulationConfig, grid: &[f64], pairing: Pairing) -> Result<[DualCurve; 2]> {
    let [pp, pq] = heading_error_curves(&config.with_helicity(Helicity::Plus), grid)?;
    let [mp, mq] = heading_error_curves(&config.with_helicity(Helicity::Minus), grid)?;
    Ok(match pairing {
        Pairing::SameProbe => [pair_curves(&pp, &mp, pairing)?, pair_curves(&pq, &mq, pairing)?],
        Pairing::OrthogonalProbe => [pair_curves(&pp, &mq, pairing)?, pair_curves(&pq, &mp, pairing)?],
    })
}

/// `[w+(t1) - w+(t2)] + [w-(t1) - w-(t2)]`, Hz; zero for symmetric heading errors.
pub fn asymmetry_metric(plus: &HeadingCurve, minus: &HeadingCurve, theta1: f64, theta2: f64) -> Result<f64> {
    if theta1 == theta2 {
        plus.at(theta1)?;
        minus.at(theta1)?;
        return Ok(0.0);
    }
    Ok((plus.at(theta1)? - plus.at(theta2)?) + (minus.at(theta1)? - minus.at(theta2)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxFieldResult {
    /// Tesla
    pub ba: Vec<f64>,
    /// One curve per auxiliary field, absolute `omega0` in Hz.
    pub curves: Vec<HeadingCurve>,
    /// Largest `|omega0(theta, Ba) - omega0(theta, 0) - sign mu_eff Ba cos(theta)|` per field, Hz.
    pub max_deviation: Vec<f64>,
}

/// Exact curves with the auxiliary field on, plus the deviation from the
/// cosine approximation.
pub fn auxiliary_field_curve(
    config: &SimulationConfig,
    ba_list: &[f64],
    grid: &[f64],
    geometry: Geometry,
) -> Result<AuxFieldResult> {
    check_grid(grid)?;
    for &ba in ba_list {
        let mut c = config.clone();
        c.field.ba = ba;
        c.field.validate()?;
    }
    let (full, zero) = with_reference(grid);
    let mut fields = vec![0.0];
    fields.extend_from_slice(ba_list);
    let rows = per_angle(config, &full, |ctx, c, k| {
        fields
            .iter()
            .map(|&ba| {
                let mut cc = c.clone();
                cc.field.ba = ba;
                omega0_hz(&prepare_with_kernel(ctx, &cc, k)?, geometry)
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let mu = rad_to_hz(mu_eff(&config.species));
    let sign = config.pump.helicity.sign();
    let mut curves = Vec::new();
    let mut max_deviation = Vec::new();
    for (j, &ba) in ba_list.iter().enumerate() {
        let vals: Vec<f64> = rows.iter().map(|r| r[j + 1]).collect();
        let dev = full
            .iter()
            .zip(&rows)
            .map(|(t, r)| (r[j + 1] - r[0] - sign * mu * ba * t.cos()).abs())
            .fold(0.0f64, f64::max);
        let mut c = config.clone();
        c.field.ba = ba;
        curves.push(assemble_curve(&c, &full, vals, zero, grid, geometry));
        max_deviation.push(dev);
    }
    Ok(AuxFieldResult {
        ba: ba_list.to_vec(),
        curves,
        max_deviation,
    })
}

/// Step of the central difference used for `d omega0 / d theta`.
pub const FLATTENING_STEP_DEG: f64 = 0.5;

fn scan_angles_deg() -> Vec<f64> {
    let mut v = vec![1.0];
    v.extend((1..=16).map(|k| 5.0 * k as f64));
    v
}

/// Angle at which `d omega0 / d theta` vanishes, or zero when the
/// derivative keeps one sign.
pub fn flattening_angle(config: &SimulationConfig, ba: f64, geometry: Geometry) -> Result<f64> {
    let mut c = config.clone();
    c.field.ba = ba;
    // derivative differences are tiny, so the root has to be much tighter
    c.numerics.root_tol_hz = c.numerics.root_tol_hz.min(1e-5);
    c.validate()?;
    let ctx = ModelContext::new(&c.species)?;
    let h = FLATTENING_STEP_DEG.to_radians();
    let deriv = |theta: f64| -> Result<f64> {
        let w = |t: f64| -> Result<f64> {
            let ct = c.with_theta(t);
            let k = light_kernel(&ctx, &ct)?;
            omega0_hz(&prepare_with_kernel(&ctx, &ct, &k)?, geometry)
        };
        Ok((w(theta + h)? - w(theta - h)?) / (2.0 * h))
    };
    let angles: Vec<f64> = scan_angles_deg().into_iter().map(f64::to_radians).collect();
    let d: Vec<f64> = angles
        .par_iter()
        .map(|&t| deriv(t).map_err(|e| Error::at_angle(t, e)))
        .collect::<Result<_>>()?;
    let mut roots = Vec::new();
    for k in 0..angles.len() - 1 {
        if d[k] == 0.0 {
            roots.push(angles[k]);
        } else if d[k] * d[k + 1] < 0.0 {
            let (mut a, mut b, mut da) = (angles[k], angles[k + 1], d[k]);
            while b - a > 1e-3f64.to_radians() {
                let m = 0.5 * (a + b);
                let dm = deriv(m)?;
                if (dm > 0.0) == (da > 0.0) {
                    a = m;
                    da = dm;
                } else {
                    b = m;
                }
            }
            roots.push(0.5 * (a + b));
        }
    }
    if roots.len() > 1 {
        warn!("{} interior flattening angles; returning the smallest", roots.len());
    }
    Ok(roots.first().copied().unwrap_or(0.0))
}

/// Curvature `d^2 omega0 / d theta^2` at zero tilt, Hz/rad^2, from the even
/// difference `2 (omega0(h) - omega0(0)) / h^2`.
pub fn curvature_at_zero(config: &SimulationConfig, geometry: Geometry) -> Result<f64> {
    let mut c = config.clone();
    c.numerics.root_tol_hz = c.numerics.root_tol_hz.min(1e-6);
    c.validate()?;
    let ctx = ModelContext::new(&c.species)?;
    let h = 1f64.to_radians();
    let w = |t: f64| -> Result<f64> {
        let ct = c.with_theta(t);
        let k = light_kernel(&ctx, &ct)?;
        omega0_hz(&prepare_with_kernel(&ctx, &ct, &k)?, geometry)
    };
    Ok(2.0 * (w(h)? - w(0.0)?) / (h * h))
}

/// Smallest auxiliary field at which the curvature at zero tilt changes
/// sign, i.e. where the flattening angle leaves zero. Tesla.
pub fn flattening_threshold(config: &SimulationConfig, geometry: Geometry) -> Result<f64> {
    let mut c = config.clone();
    c.numerics.root_tol_hz = c.numerics.root_tol_hz.min(1e-6);
    c.validate()?;
    let ctx = ModelContext::new(&c.species)?;
    let h = 1f64.to_radians();
    let c0 = c.with_theta(0.0);
    let ch = c.with_theta(h);
    let k0 = light_kernel(&ctx, &c0)?;
    let kh = light_kernel(&ctx, &ch)?;
    let curvature = |ba: f64| -> Result<f64> {
        let mut a = c0.clone();
        a.field.ba = ba;
        let mut b = ch.clone();
        b.field.ba = ba;
        let w0 = omega0_hz(&prepare_with_kernel(&ctx, &a, &k0)?, geometry)?;
        let wh = omega0_hz(&prepare_with_kernel(&ctx, &b, &kh)?, geometry)?;
        Ok(2.0 * (wh - w0) / (h * h))
    };
    let sign = c.pump.helicity.sign();
    let c_zero = curvature(0.0)?;
    // the cosine term lowers the curvature by mu_eff Ba for sigma+
    let mu = rad_to_hz(mu_eff(&c.species));
    let guess = (sign * c_zero / mu).max(0.0);
    let limit = 0.99e-2 * c.field.b0.abs();
    if guess == 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, (2.0 * guess).min(limit));
    while (curvature(hi)? > 0.0) == (c_zero > 0.0) {
        if hi >= limit {
            return Err(Error::config("field.Ba", hi, "threshold below 1e-2 |B0|"));
        }
        lo = hi;
        hi = (2.0 * hi).min(limit);
    }
    while hi - lo > 1e-4 * guess {
        let m = 0.5 * (lo + hi);
        if (curvature(m)? > 0.0) == (c_zero > 0.0) {
            lo = m;
        } else {
            hi = m;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Tilt tolerance that keeps the heading error below a target field error,
/// `delta_theta = delta_B mu_eff / |d omega0 / d theta|`. Radians.
pub fn angle_tolerance(species: &AlkaliSpecies, target_field: f64, dwdtheta_hz_per_rad: f64) -> f64 {
    target_field * rad_to_hz(mu_eff(species)) / dwdtheta_hz_per_rad.abs()
}

/// `<S_z>` of the spin-temperature approximation.
pub fn spin_temperature_sz(r_op: f64, gamma_rel: f64, theta: f64) -> Result<f64> {
    if !(r_op >= 0.0 && gamma_rel >= 0.0) || (r_op == 0.0 && gamma_rel == 0.0) {
        return Err(Error::config(
            "R_op, Gamma_rel",
            format!("{r_op}, {gamma_rel}"),
            "non-negative and not both zero",
        ));
    }
    let c = theta.cos();
    let den = r_op * ((c + 1.0).powi(2) + (c - 1.0).powi(2)) + 2.0 * gamma_rel;
    Ok(2.0 * r_op * c / den)
}

#[derive(Debug, Clone)]
pub struct SpinTemperature {
    pub sz: f64,
    pub beta: f64,
    /// `exp(beta F_z) / Tr` on the ground sector, diagonal in the basis order.
    pub populations: Vec<f64>,
}

pub fn spin_temperature_polarization(
    basis: &HyperfineBasis,
    r_op: f64,
    gamma_rel: f64,
    theta: f64,
) -> Result<SpinTemperature> {
    let sz = spin_temperature_sz(r_op, gamma_rel, theta)?;
    if (sz.abs() - 0.5).abs() < 1e-15 {
        return Err(Error::InfiniteSpinTemperature(sz));
    }
    let beta = ((1.0 + 2.0 * sz) / (1.0 - 2.0 * sz)).ln();
    let w: Vec<f64> = basis
        .labels()
        .iter()
        .filter(|l| l.sector == Sector::S)
        .map(|l| (beta * l.m()).exp())
        .collect();
    let z: f64 = w.iter().sum();
    Ok(SpinTemperature {
        sz,
        beta,
        populations: w.into_iter().map(|x| x / z).collect(),
    })
}

/// Split of a signal into its a- and b-manifold parts near the a-manifold zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldSplit {
    /// Zero of the a-manifold part, rad/s.
    pub omega_a: f64,
    /// Slope of the a-manifold part there, per rad/s.
    pub slope_a: f64,
    /// b-manifold part at `omega_a`.
    pub s_b: f64,
    /// Shift estimate `-s_b / (slope_a + slope_b)`, rad/s.
    pub shift: f64,
}

/// Contribution of each ground hyperfine manifold to a probe signal at one
/// drive frequency: `(S^a, S^b)`.
pub fn manifold_signals(p: &ResponseProblem, geometry: Geometry, omega: f64) -> Result<(f64, f64)> {
    let x = p.rho1(omega)?;
    let n = p.eff.ground_dim();
    let labels = &p.eff.basis().labels()[..n];
    let g = p.eff.ground_spin();
    let op = match geometry {
        Geometry::Parallel => crate::model::drive_operator(g, p.theta, p.numerics.drive_form),
        Geometry::Perpendicular => g.sy.clone(),
    };
    let mut sa = C64::new(0.0, 0.0);
    let mut sb = C64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            if labels[i].manifold != labels[j].manifold {
                continue;
            }
            let v = op[[j, i]] * x[i * n + j];
            if labels[i].manifold == crate::spin::Manifold::A {
                sa += v;
            } else {
                sb += v;
            }
        }
    }
    let pick = |z: C64| match geometry {
        Geometry::Parallel => 2.0 * z.re,
        Geometry::Perpendicular => 2.0 * z.im,
    };
    Ok((pick(sa), pick(sb)))
}

/// Linearize `S^a` and `S^b` around the a-manifold zero crossing.
pub fn manifold_split(p: &ResponseProblem, geometry: Geometry) -> Result<ManifoldSplit> {
    let w0 = p.find(geometry)?.omega0;
    let d = p.width.max(1.0) * 1e-3;
    let mut a = w0 - 10.0 * p.width;
    let mut b = w0 + 10.0 * p.width;
    let fa = |w: f64| manifold_signals(p, geometry, w).map(|s| s.0);
    let mut sa = fa(a)?;
    if sa * fa(b)? > 0.0 {
        return Err(Error::NoZeroCrossing {
            geometry: format!("{} a-manifold", geometry.as_str()),
            lo_hz: rad_to_hz(a),
            hi_hz: rad_to_hz(b),
            trace: vec![],
        });
    }
    while b - a > hz_to_rad(1e-4) {
        let m = 0.5 * (a + b);
        let sm = fa(m)?;
        if (sm > 0.0) == (sa > 0.0) {
            a = m;
            sa = sm;
        } else {
            b = m;
        }
    }
    let wa = 0.5 * (a + b);
    let (pa, pb) = manifold_signals(p, geometry, wa + d)?;
    let (ma, mb) = manifold_signals(p, geometry, wa - d)?;
    let (_, s_b) = manifold_signals(p, geometry, wa)?;
    let slope_a = (pa - ma) / (2.0 * d);
    let slope_b = (pb - mb) / (2.0 * d);
    Ok(ManifoldSplit {
        omega_a: wa,
        slope_a,
        s_b,
        shift: -s_b / (slope_a + slope_b),
    })
}
