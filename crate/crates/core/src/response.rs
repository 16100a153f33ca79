//! Linear response of the pumped ground state to the RF drive and the
//! zero-crossing search that defines the precession frequency.
//!
//! With `rho = rho0 + rho1(+) e^{i w t} + rho1(-) e^{-i w t}` the first-order
//! state solves `(L_eff -+ i w) rho1(+-) + L1 rho0 = 0`, where `L_eff` also
//! carries the spin-exchange feedback of `<S_+-(rho1)>` onto `rho0`.

use std::sync::Arc;

use ndarray::Array1;
use ndarray_linalg::{Eig, Inverse, Solve};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::constants::hz_to_rad;
use crate::error::{Error, Result};
use crate::model::{drive_operator, driving_superop, DriveForm, ModelContext, SimulationConfig, Superoperator};
use crate::reduction::{effective_from_kernel, light_kernel, steady_state, EffectiveLiouvillian, SteadyState};
use crate::spin::{CMat, HyperfineBasis, Manifold, Sector};
use crate::superop::{vec, CVec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    /// Probe along the RF field; in-phase zero crossing.
    Parallel,
    /// Probe perpendicular to the RF field and pump; out-of-phase zero crossing.
    Perpendicular,
}

impl Geometry {
    pub fn as_str(self) -> &'static str {
        match self {
            Geometry::Parallel => "parallel",
            Geometry::Perpendicular => "perpendicular",
        }
    }

    pub fn other(self) -> Self {
        match self {
            Geometry::Parallel => Geometry::Perpendicular,
            Geometry::Perpendicular => Geometry::Parallel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `rho1(+)`, oscillating as `e^{+i w t}`.
    Plus,
    /// `rho1(-) = rho1(+)^dagger`.
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponsePoint {
    pub omega: f64,
    pub s_parallel: f64,
    pub s_perpendicular: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecessionResult {
    /// rad/s
    pub omega0: f64,
    pub geometry: Geometry,
    pub bracket: (f64, f64),
    /// `|signal(omega0)|`
    pub residual: f64,
}

/// `Tr(A rho)` as a row functional on `vec(rho)`.
fn trace_functional(a: &CMat) -> CVec {
    vec(&a.t().to_owned())
}

/// Spin-exchange feedback of the first-order mean fields,
/// `2 gamma_SE [Tr(S_+ rho1) X_- + Tr(S_- rho1) X_+]`, folded into `L_eff`.
fn feedback_matrix(eff: &EffectiveLiouvillian, rho0: &CMat) -> CMat {
    let ss = eff.ss_parts();
    let g = eff.ground_spin();
    let k = 2.0 * eff.gamma_se();
    let v0 = vec(rho0);
    let x_minus = ss.mplus.dot(&v0);
    let x_plus = ss.mminus.dot(&v0);
    let r_plus = trace_functional(&g.sp);
    let r_minus = trace_functional(&g.sm);
    let n2 = v0.len();
    CMat::from_shape_fn((n2, n2), |(i, j)| k * (x_minus[i] * r_plus[j] + x_plus[i] * r_minus[j]))
}

/// Solve for `rho1` on the requested branch.
pub fn first_order_state(
    eff: &EffectiveLiouvillian,
    l1: &Superoperator,
    rho0: &SteadyState,
    omega: f64,
    branch: Branch,
) -> Result<CVec> {
    let n2 = eff.ground_dim().pow(2);
    if l1.matrix().nrows() != n2 {
        return Err(Error::BasisMismatch {
            expected: n2,
            found: l1.matrix().nrows(),
        });
    }
    let mut a = eff.matrix(&rho0.mean_fields) + feedback_matrix(eff, &rho0.rho);
    let shift = match branch {
        Branch::Plus => C64::new(0.0, -omega),
        Branch::Minus => C64::new(0.0, omega),
    };
    for i in 0..n2 {
        a[[i, i]] += shift;
    }
    let b = l1.matrix().dot(&vec(&rho0.rho)).mapv(|z| -z);
    Ok(a.solve_into(b)?)
}

/// `2 Re Tr(O rho1(+))` with `O` the drive operator.
pub fn signal_parallel(eff: &EffectiveLiouvillian, rho1: &CVec, theta: f64, form: DriveForm) -> f64 {
    let o = drive_operator(eff.ground_spin(), theta, form);
    2.0 * trace_functional(&o).dot(rho1).re
}

/// `2 Im Tr(S_y rho1(+))`.
pub fn signal_perpendicular(eff: &EffectiveLiouvillian, rho1: &CVec) -> f64 {
    2.0 * trace_functional(&eff.ground_spin().sy).dot(rho1).im
}

/// Branch-aware perpendicular signal, `-+ 2 Im Tr(S_y rho1(+-))`. Both
/// branches give the same number.
pub fn signal_perpendicular_branch(eff: &EffectiveLiouvillian, rho1: &CVec, branch: Branch) -> f64 {
    let v = 2.0 * trace_functional(&eff.ground_spin().sy).dot(rho1).im;
    match branch {
        Branch::Plus => v,
        Branch::Minus => -v,
    }
}

/// Everything needed to evaluate the response at many frequencies.
#[derive(Debug, Clone)]
pub struct ResponseProblem {
    pub eff: EffectiveLiouvillian,
    pub steady: SteadyState,
    system: CMat,
    rhs: CVec,
    probe_parallel: CVec,
    probe_perpendicular: CVec,
    spectral: Option<Spectral>,
    pub omega_l: f64,
    pub omega_nuz: f64,
    /// Rough magnetic-resonance half width, rad/s.
    pub width: f64,
    pub theta: f64,
    pub numerics: crate::model::Numerics,
}

/// `A = V diag(lambda) V^-1`, with the probes and the source pre-projected.
#[derive(Debug, Clone)]
struct Spectral {
    lambda: Array1<C64>,
    par: Array1<C64>,
    perp: Array1<C64>,
}

impl ResponseProblem {
    pub fn new(ctx: &ModelContext, config: &SimulationConfig, eff: EffectiveLiouvillian) -> Result<Self> {
        let steady = steady_state(&eff, config)?;
        let theta = config.field.theta;
        let form = config.numerics.drive_form;
        let l1 = driving_superop(&ctx.basis, &ctx.ops, config.field.b1, theta, form);
        let mut system = eff.matrix(&steady.mean_fields) + feedback_matrix(&eff, &steady.rho);
        let mut rhs = l1.matrix().dot(&vec(&steady.rho)).mapv(|z| -z);
        if form == DriveForm::CoRotating {
            secular_projection(&mut system, &mut rhs, &eff);
        }
        let probe_parallel = trace_functional(&drive_operator(eff.ground_spin(), theta, form));
        let probe_perpendicular = trace_functional(&eff.ground_spin().sy);
        let df = crate::analysis::derived_frequencies(&config.species, config.field.b0);
        let width = resonance_width(&system, &ctx.basis);
        let mut p = ResponseProblem {
            eff,
            steady,
            system,
            rhs,
            probe_parallel,
            probe_perpendicular,
            spectral: None,
            omega_l: hz_to_rad(df.omega_l),
            omega_nuz: hz_to_rad(df.omega_nuz),
            width,
            theta,
            numerics: config.numerics,
        };
        p.spectral = p.decompose().ok();
        Ok(p)
    }

    fn decompose(&self) -> Result<Spectral> {
        let (lambda, v) = self.system.eig()?;
        let vinv = v.inv()?;
        let c = vinv.dot(&self.rhs);
        let par = self.probe_parallel.dot(&v) * &c;
        let perp = self.probe_perpendicular.dot(&v) * &c;
        Ok(Spectral { lambda, par, perp })
    }

    /// `rho1(+)` at drive frequency `omega` by a dense solve.
    pub fn rho1(&self, omega: f64) -> Result<CVec> {
        let mut a = self.system.clone();
        for i in 0..a.nrows() {
            a[[i, i]] -= C64::new(0.0, omega);
        }
        Ok(a.solve_into(self.rhs.clone())?)
    }

    pub fn point(&self, omega: f64) -> Result<ResponsePoint> {
        let x = self.rho1(omega)?;
        Ok(ResponsePoint {
            omega,
            s_parallel: 2.0 * self.probe_parallel.dot(&x).re,
            s_perpendicular: 2.0 * self.probe_perpendicular.dot(&x).im,
        })
    }

    /// Exact signal by a dense solve.
    pub fn signal(&self, geometry: Geometry, omega: f64) -> Result<f64> {
        let p = self.point(omega)?;
        Ok(match geometry {
            Geometry::Parallel => p.s_parallel,
            Geometry::Perpendicular => p.s_perpendicular,
        })
    }

    /// Signal from the eigen-decomposition; cheap, used for scanning.
    fn signal_fast(&self, geometry: Geometry, omega: f64) -> Result<f64> {
        let Some(sp) = &self.spectral else {
            return self.signal(geometry, omega);
        };
        let w = C64::new(0.0, omega);
        let mut s = C64::new(0.0, 0.0);
        let coef = match geometry {
            Geometry::Parallel => &sp.par,
            Geometry::Perpendicular => &sp.perp,
        };
        for (l, c) in sp.lambda.iter().zip(coef) {
            s += c / (l - w);
        }
        Ok(match geometry {
            Geometry::Parallel => 2.0 * s.re,
            Geometry::Perpendicular => 2.0 * s.im,
        })
    }

    /// Half-width of the search window around the Larmor frequency.
    pub fn window(&self) -> f64 {
        (20.0 * self.omega_nuz).max(50.0 * self.width).min(self.omega_l / 2.0)
    }

    pub fn find(&self, geometry: Geometry) -> Result<PrecessionResult> {
        let w = self.window();
        let (lo, hi) = (self.omega_l - w, self.omega_l + w);
        let n = self.numerics.scan_points;
        let grid: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();

        let mut trace = Vec::with_capacity(n);
        for &om in &grid {
            trace.push((om, self.signal_fast(geometry, om)?));
        }
        let mut bracket = self.select_crossing(geometry, &trace, lo, hi);
        if let Ok((a, b)) = bracket {
            let (sa, sb) = (self.signal(geometry, a)?, self.signal(geometry, b)?);
            if sa * sb > 0.0 {
                bracket = Err(Error::Linalg("spectral scan disagrees with direct solve".into()));
            }
        }
        let (mut a, mut b) = match bracket {
            Ok(x) => x,
            Err(Error::Linalg(_)) => {
                // fall back to direct solves everywhere
                trace.clear();
                for &om in &grid {
                    trace.push((om, self.signal(geometry, om)?));
                }
                self.select_crossing(geometry, &trace, lo, hi)?
            }
            Err(e) => return Err(e),
        };

        let tol = hz_to_rad(self.numerics.root_tol_hz);
        let mut sa = self.signal(geometry, a)?;
        while b - a > tol {
            let m = 0.5 * (a + b);
            let sm = self.signal(geometry, m)?;
            if sm == 0.0 {
                a = m;
                b = m;
                break;
            }
            if (sm > 0.0) == (sa > 0.0) {
                a = m;
                sa = sm;
            } else {
                b = m;
            }
        }
        let omega0 = 0.5 * (a + b);
        Ok(PrecessionResult {
            omega0,
            geometry,
            bracket: (lo, hi),
            residual: self.signal(geometry, omega0)?.abs(),
        })
    }

    fn select_crossing(&self, geometry: Geometry, trace: &[(f64, f64)], lo: f64, hi: f64) -> Result<(f64, f64)> {
        let first = trace.first().map(|p| p.1).unwrap_or(0.0);
        let last = trace.last().map(|p| p.1).unwrap_or(0.0);
        let slope = (last - first).signum();
        let mut best: Option<(f64, (f64, f64))> = None;
        let mut tie: Option<f64> = None;
        for win in trace.windows(2) {
            let ((x0, y0), (x1, y1)) = (win[0], win[1]);
            let crosses = (y0 <= 0.0 && y1 > 0.0) || (y0 >= 0.0 && y1 < 0.0);
            if !crosses || (y1 - y0).signum() != slope {
                continue;
            }
            let mid = 0.5 * (x0 + x1);
            let dist = (mid - self.omega_l).abs();
            match best {
                Some((d, _)) if (d - dist).abs() <= 1e-9 * self.omega_l => tie = Some(mid),
                Some((d, _)) if d <= dist => {}
                _ => {
                    best = Some((dist, (x0, x1)));
                    tie = None;
                }
            }
        }
        match (best, tie) {
            (Some((_, (a, b))), Some(t)) => Err(Error::AmbiguousCrossing(
                crate::constants::rad_to_hz(0.5 * (a + b)),
                crate::constants::rad_to_hz(t),
            )),
            (Some((_, br)), None) => Ok(br),
            (None, _) => Err(Error::NoZeroCrossing {
                geometry: geometry.as_str().into(),
                lo_hz: crate::constants::rad_to_hz(lo),
                hi_hz: crate::constants::rad_to_hz(hi),
                trace: trace.to_vec(),
            }),
        }
    }
}

/// Restrict the response to the co-rotating Zeeman coherences: `rho[i, j]`
/// within one manifold with `|dm| = 1` and `E_j > E_i`, the elements that
/// oscillate as `e^{+i w t}`. Everything else is decoupled and left at zero.
fn secular_projection(system: &mut CMat, rhs: &mut CVec, eff: &EffectiveLiouvillian) {
    let n = eff.ground_dim();
    let labels = &eff.basis().labels()[..n];
    let h = &eff.ground_hamiltonian;
    let keep: Vec<bool> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            let (a, b) = (&labels[i], &labels[j]);
            a.manifold == b.manifold && (a.two_m - b.two_m).abs() == 2 && h[[j, j]].re > h[[i, i]].re
        })
        .collect();
    let zero = C64::new(0.0, 0.0);
    for r in 0..n * n {
        for c in 0..n * n {
            if !(keep[r] && keep[c]) {
                system[[r, c]] = if r == c { C64::new(1.0, 0.0) } else { zero };
            }
        }
        if !keep[r] {
            rhs[r] = zero;
        }
    }
}

/// Largest decay rate among adjacent a-manifold Zeeman coherences.
fn resonance_width(system: &CMat, basis: &Arc<HyperfineBasis>) -> f64 {
    let n = basis.sector_dim();
    let mut w: f64 = 0.0;
    for (i, l) in basis.labels()[..n].iter().enumerate() {
        if l.sector == Sector::S && l.manifold == Manifold::A && i + 1 < n {
            if basis.labels()[i + 1].manifold == Manifold::A {
                let k = i * n + i + 1;
                w = w.max(-system[[k, k]].re);
            }
        }
    }
    w
}

/// Build the response problem for one configuration, reusing a light kernel.
pub fn prepare_with_kernel(ctx: &ModelContext, config: &SimulationConfig, kernel: &CMat) -> Result<ResponseProblem> {
    config.validate()?;
    let eff = effective_from_kernel(ctx, config, kernel)?;
    ResponseProblem::new(ctx, config, eff)
}

pub fn prepare(ctx: &ModelContext, config: &SimulationConfig) -> Result<ResponseProblem> {
    config.validate()?;
    let kernel = light_kernel(ctx, config)?;
    prepare_with_kernel(ctx, config, &kernel)
}

/// Run the whole pipeline for one configuration and geometry.
pub fn find_precession_frequency(config: &SimulationConfig, geometry: Geometry) -> Result<PrecessionResult> {
    let ctx = ModelContext::new(&config.species)?;
    prepare(&ctx, config)?.find(geometry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::AlkaliSpecies;
    use approx::assert_relative_eq;

    fn setup(theta: f64) -> (ModelContext, SimulationConfig, ResponseProblem) {
        let ctx = ModelContext::new(&AlkaliSpecies::rb85()).unwrap();
        let cfg = SimulationConfig::rb85_default().with_theta(theta);
        let p = prepare(&ctx, &cfg).unwrap();
        (ctx, cfg, p)
    }

    #[test]
    fn zero_drive_gives_zero_response() {
        let (ctx, cfg, p) = setup(0.3);
        let l1 = driving_superop(&ctx.basis, &ctx.ops, 0.0, 0.3, cfg.numerics.drive_form);
        let x = first_order_state(&p.eff, &l1, &p.steady, p.omega_l, Branch::Plus).unwrap();
        assert!(x.iter().all(|z| z.norm() == 0.0));
        assert_eq!(signal_perpendicular(&p.eff, &x), 0.0);
    }

    #[test]
    fn response_is_linear_and_branches_are_adjoint() {
        let (ctx, cfg, p) = setup(0.3);
        let b1 = cfg.field.b1;
        let l1 = driving_superop(&ctx.basis, &ctx.ops, b1, 0.3, DriveForm::Full);
        let l2 = driving_superop(&ctx.basis, &ctx.ops, 2.0 * b1, 0.3, DriveForm::Full);
        let w = p.omega_l * 1.0001;
        let x1 = first_order_state(&p.eff, &l1, &p.steady, w, Branch::Plus).unwrap();
        let x2 = first_order_state(&p.eff, &l2, &p.steady, w, Branch::Plus).unwrap();
        let scale = x1.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        for (a, b) in x1.iter().zip(&x2) {
            assert!((b - a * 2.0).norm() < 1e-9 * scale);
        }
        let xm = first_order_state(&p.eff, &l1, &p.steady, w, Branch::Minus).unwrap();
        let n = 12;
        for i in 0..n {
            for j in 0..n {
                assert!((xm[i * n + j] - x1[j * n + i].conj()).norm() < 1e-9 * scale);
            }
        }
        let sy = trace_functional(&p.eff.ground_spin().sy);
        assert!((sy.dot(&x1) - sy.dot(&xm).conj()).norm() < 1e-9 * scale);
        assert_relative_eq!(
            signal_perpendicular_branch(&p.eff, &x1, Branch::Plus),
            signal_perpendicular_branch(&p.eff, &xm, Branch::Minus),
            max_relative = 1e-8
        );
        let lneg = driving_superop(&ctx.basis, &ctx.ops, -b1, 0.3, DriveForm::Full);
        let xn = first_order_state(&p.eff, &lneg, &p.steady, w, Branch::Plus).unwrap();
        assert_relative_eq!(
            signal_parallel(&p.eff, &xn, 0.3, DriveForm::Full),
            -signal_parallel(&p.eff, &x1, 0.3, DriveForm::Full),
            max_relative = 1e-9
        );
    }

    #[test]
    fn spectral_and_direct_signals_agree() {
        let (_, _, p) = setup(0.5);
        for k in [-3.0, -1.0, 0.0, 0.5, 2.0] {
            let w = p.omega_l + k * p.width;
            for g in [Geometry::Parallel, Geometry::Perpendicular] {
                let a = p.signal(g, w).unwrap();
                let b = p.signal_fast(g, w).unwrap();
                assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()), "{g:?} {a} {b}");
            }
        }
    }

    #[test]
    fn precession_below_larmor_at_defaults() {
        let (_, _, p) = setup(0.0);
        for g in [Geometry::Parallel, Geometry::Perpendicular] {
            let r = p.find(g).unwrap();
            assert!(r.omega0 < p.omega_l, "{g:?}");
            assert!(r.omega0 > r.bracket.0 && r.omega0 < r.bracket.1);
        }
    }
}
