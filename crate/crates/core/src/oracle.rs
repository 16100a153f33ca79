//! Brute-force checks that share nothing with the reduction path except the
//! full-space generator: time-domain integration of the master equation with
//! the explicit `cos(w t)` drive, and exact diagonalisation of the ground
//! Zeeman Hamiltonian.
//!
//! The integrator is an exponential Runge-Kutta scheme (Cox-Matthews ETDRK4)
//! in the eigenbasis of the static generator. The static part is the full
//! `L0` plus the spin-exchange mean field linearised about the undriven
//! steady state, so the optical and hyperfine time scales are handled exactly
//! and the explicit part only carries the drive and the quadratic remainder
//! of the mean field. The periodic steady state is found by Newton-GMRES
//! shooting over one drive period.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eig, Eigh, Inverse, Solve, UPLO};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::constants::{hz_to_rad, MU_B, MU_N};
use crate::error::{Error, Result};
use crate::model::{assemble_l0, drive_operator, mu_eff, MeanFields, ModelContext, SimulationConfig, SsParts};
use crate::response::Geometry;
use crate::spin::{AlkaliSpecies, CMat, GroundSpin, Label, Manifold, Sector};
use crate::superop::{trace_vector, unvec, vec, CVec};

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    /// Relative tolerance of the step controller.
    pub rtol: f64,
    /// Smallest number of steps per drive period tried by the controller.
    pub min_steps_per_period: usize,
    /// The controller gives up (stiffness error) beyond this.
    pub max_steps_per_period: usize,
    /// Periods recorded after the transient.
    pub record_periods: usize,
    /// Newton stops when the periodicity defect falls below this.
    pub shooting_tol: f64,
    pub max_newton: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            rtol: 1e-9,
            min_steps_per_period: 16,
            max_steps_per_period: 1 << 14,
            record_periods: 20,
            shooting_tol: 1e-11,
            max_newton: 8,
        }
    }
}

/// Expectation values sampled on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeTrace {
    /// s
    pub time: Vec<f64>,
    pub sx: Vec<f64>,
    pub sy: Vec<f64>,
    pub sz: Vec<f64>,
    pub fz: Vec<f64>,
    /// The parallel-probe operator (the one the RF couples to).
    pub parallel: Vec<f64>,
    /// `max |Tr rho - 1|` over the samples.
    pub max_trace_error: f64,
    /// Smallest eigenvalue of `rho` over the samples.
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Quadrature {
    pub in_phase: f64,
    pub out_of_phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Demodulated {
    pub sx: Quadrature,
    pub sy: Quadrature,
    pub sz: Quadrature,
    pub fz: Quadrature,
    pub parallel: Quadrature,
}

impl Demodulated {
    /// The quadrature whose zero crossing defines `w0` for a geometry.
    pub fn signal(&self, geometry: Geometry) -> f64 {
        match geometry {
            Geometry::Parallel => self.parallel.in_phase,
            Geometry::Perpendicular => self.sy.out_of_phase,
        }
    }
}

/// Lock-in projection onto `cos(w t)` and `sin(w t)` over the largest whole
/// number of periods at the end of the trace.
pub fn demodulate(trace: &TimeTrace, drive_omega: f64) -> Result<Demodulated> {
    let n = trace.time.len();
    if n < 2 || !(drive_omega > 0.0) {
        return Err(Error::InsufficientPeriods(0.0));
    }
    let dt = trace.time[1] - trace.time[0];
    let period = 2.0 * PI / drive_omega;
    let covered = n as f64 * dt / period;
    if covered + 1e-9 < 20.0 {
        return Err(Error::InsufficientPeriods(covered));
    }
    let whole = (covered + 1e-9).floor();
    let m = ((whole * period / dt).round() as usize).min(n);
    let start = n - m;
    let project = |x: &[f64]| {
        let (mut c, mut s) = (0.0, 0.0);
        for k in start..n {
            let ph = drive_omega * trace.time[k];
            c += x[k] * ph.cos();
            s += x[k] * ph.sin();
        }
        Quadrature {
            in_phase: 2.0 * c / m as f64,
            out_of_phase: 2.0 * s / m as f64,
        }
    };
    Ok(Demodulated {
        sx: project(&trace.sx),
        sy: project(&trace.sy),
        sz: project(&trace.sz),
        fz: project(&trace.fz),
        parallel: project(&trace.parallel),
    })
}

/// ETDRK4 weights for one step size, per eigenmode.
struct EtdCoeffs {
    h: f64,
    e: Array1<C64>,
    e2: Array1<C64>,
    q: Array1<C64>,
    f1: Array1<C64>,
    f2: Array1<C64>,
    f3: Array1<C64>,
}

impl EtdCoeffs {
    fn new(lambda: &Array1<C64>, h: f64) -> Self {
        const M: usize = 32;
        let n = lambda.len();
        let mut out = EtdCoeffs {
            h,
            e: Array1::zeros(n),
            e2: Array1::zeros(n),
            q: Array1::zeros(n),
            f1: Array1::zeros(n),
            f2: Array1::zeros(n),
            f3: Array1::zeros(n),
        };
        let direct = |z: C64| {
            let ez = z.exp();
            let z3 = z * z * z;
            (
                ((z * 0.5).exp() - 1.0) / z,
                (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3,
                (2.0 + z + ez * (z - 2.0)) / z3,
                (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3,
            )
        };
        for k in 0..n {
            let c = lambda[k] * h;
            let (q, f1, f2, f3) = if c.norm() < 1.0 {
                // contour average around c avoids the cancellation near 0
                let mut acc = (C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0));
                for j in 0..M {
                    let r = c + C64::from_polar(1.0, PI * (j as f64 + 0.5) / M as f64 * 2.0);
                    let d = direct(r);
                    acc.0 += d.0;
                    acc.1 += d.1;
                    acc.2 += d.2;
                    acc.3 += d.3;
                }
                let m = M as f64;
                (acc.0 / m, acc.1 / m, acc.2 / m, acc.3 / m)
            } else {
                direct(c)
            };
            out.e[k] = c.exp();
            out.e2[k] = (c * 0.5).exp();
            out.q[k] = q * h;
            out.f1[k] = f1 * h;
            out.f2[k] = f2 * h;
            out.f3[k] = f3 * h;
        }
        out
    }
}

/// The full-space master equation, ready for time stepping.
pub struct FullModel {
    d: usize,
    omega_scale: f64,
    /// Eigenvalues of the static generator.
    lambda: Array1<C64>,
    v: CMat,
    v_inv: CMat,
    /// Drive Hamiltonian amplitude, `g_S mu_B B1 O`.
    h_drive: CMat,
    s: GroundSpin,
    gamma_se: f64,
    rho_ref: CMat,
    fz: CMat,
    parallel: CMat,
    /// Index of the conserved trace mode.
    trace_mode: usize,
    pub options: OracleOptions,
}

impl FullModel {
    /// Builds the model without checking the rate bounds, so closed-system
    /// configurations are allowed.
    pub fn new(config: &SimulationConfig, options: OracleOptions) -> Result<Self> {
        let ctx = ModelContext::new(&config.species)?;
        let d = ctx.basis.dim();
        let s = ctx.ops.ground_electron_embedded();
        let parts = SsParts::new(&s);
        let gamma_se = config.rates.gamma_se;

        let l_bare = assemble_l0(&ctx, config, &MeanFields::default())?.into_matrix();
        let rho_ref = if gamma_se != 0.0 {
            undriven_steady_state(&l_bare, &parts, &s, gamma_se, d)?
        } else {
            CMat::zeros((d, d))
        };
        let l = &l_bare + &mean_field_jacobian(&parts, &s, gamma_se, &rho_ref, d, true);

        let r = &config.rates;
        let closed = [r.gamma_mix, r.gamma_q, r.gamma_sd, r.gamma_se].iter().all(|&g| g == 0.0);
        let (mut lambda, mut v, mut v_inv) = if closed {
            hamiltonian_eigenbasis(&ctx.hamiltonians(config)?.total())?
        } else {
            let (lambda, v) = l.eig()?;
            let v_inv = v.inv()?;
            (lambda, v, v_inv)
        };
        let recon = v.dot(&CMat::from_diag(&lambda)).dot(&v_inv) - &l;
        let scale = l.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        let err = recon.iter().fold(0.0f64, |m, z| m.max(z.norm())) / scale.max(1.0);
        if err > 1e-9 {
            return Err(Error::Stiffness(format!(
                "eigendecomposition of the static generator is ill-conditioned (relative residual {err:.2e})"
            )));
        }
        let trace_mode = (0..lambda.len())
            .min_by(|&a, &b| lambda[a].norm().total_cmp(&lambda[b].norm()))
            .expect("nonempty spectrum");
        if !closed {
            // Round-off of order eps |L| / |lambda| gives the slow modes a
            // spurious trace, and the trace eigenvalue a spurious decay; both
            // leak trace over long runs.
            lambda[trace_mode] = C64::new(0.0, 0.0);
            let tv = trace_vector(d);
            let v0 = v.column(trace_mode).to_owned();
            let t0: C64 = tv.dot(&v0);
            for k in 0..lambda.len() {
                if k != trace_mode {
                    let tk: C64 = tv.dot(&v.column(k));
                    let fix = v0.mapv(|z| z * (tk / t0));
                    let mut col = v.column_mut(k);
                    col -= &fix;
                }
            }
            v_inv = v.inv()?;
        }

        let o = drive_operator(&s, config.field.theta, config.numerics.drive_form);
        let h_drive = o.mapv(|z| z * config.species.g_s * MU_B * config.field.b1);
        let omega_scale = lambda.iter().fold(0.0f64, |m, z| m.max(z.re.abs()));
        Ok(FullModel {
            d,
            omega_scale,
            lambda,
            v,
            v_inv,
            h_drive,
            s,
            gamma_se,
            rho_ref,
            fz: ctx.ops.fz.matrix().clone(),
            parallel: o,
            trace_mode,
            options,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Largest relaxation rate of the static generator, s^-1.
    pub fn fastest_rate(&self) -> f64 {
        self.omega_scale
    }

    /// Undriven steady state the mean field is linearised about (zero when
    /// there is no spin exchange).
    pub fn reference_state(&self) -> &CMat {
        &self.rho_ref
    }

    fn to_coords(&self, rho: &CMat) -> Array1<C64> {
        self.v_inv.dot(&vec(rho))
    }

    fn to_state(&self, y: &Array1<C64>) -> CMat {
        unvec(&self.v.dot(y), self.d)
    }

    /// Explicit part: the drive and the quadratic mean-field remainder.
    fn explicit(&self, y: &Array1<C64>, t: f64, omega: f64) -> Array1<C64> {
        let rho = self.to_state(y);
        let mut n = CMat::zeros((self.d, self.d));
        if omega > 0.0 {
            let h = self.h_drive.mapv(|z| z * (omega * t).cos());
            n = (h.dot(&rho) - rho.dot(&h)).mapv(|z| -I * z);
        }
        if self.gamma_se != 0.0 {
            let tr: C64 = rho.diag().sum();
            let delta = &rho - &self.rho_ref.mapv(|z| z * tr);
            n = n + mean_field_op(&self.s, &delta).mapv(|z| z * (2.0 * self.gamma_se));
        }
        self.v_inv.dot(&vec(&n))
    }

    fn etd_step(&self, c: &EtdCoeffs, y: &Array1<C64>, t: f64, omega: f64) -> Array1<C64> {
        let h = c.h;
        let nu = self.explicit(y, t, omega);
        let a = &c.e2 * y + &c.q * &nu;
        let na = self.explicit(&a, t + 0.5 * h, omega);
        let b = &c.e2 * y + &c.q * &na;
        let nb = self.explicit(&b, t + 0.5 * h, omega);
        let cc = &c.e2 * &a + &c.q * &(nb.mapv(|z| z * 2.0) - &nu);
        let nc = self.explicit(&cc, t + h, omega);
        &c.e * y + &c.f1 * &nu + &(&c.f2 * &(&na + &nb)).mapv(|z| z * 2.0) + &c.f3 * &nc
    }

    fn rel_err(&self, a: &Array1<C64>, b: &Array1<C64>) -> f64 {
        let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).norm()));
        let size = a.iter().fold(0.0f64, |m, x| m.max(x.norm()));
        diff / 15.0 / size.max(1e-300)
    }

    /// Free evolution from `rho0` over `duration`, adaptive step doubling.
    pub fn evolve(&self, rho0: &CMat, t0: f64, duration: f64, omega: f64) -> Result<CMat> {
        let mut y = self.to_coords(rho0);
        let mut t = t0;
        let end = t0 + duration;
        let mut h = if omega > 0.0 {
            2.0 * PI / omega / self.options.min_steps_per_period as f64
        } else {
            duration.min(1e-6)
        };
        let h_min = duration * 1e-12;
        while t < end - 1e-15 * end.abs().max(1.0) {
            h = h.min(end - t);
            if omega > 0.0 {
                h = h.min(2.0 * PI / omega / self.options.min_steps_per_period as f64);
            }
            let full = self.etd_step(&EtdCoeffs::new(&self.lambda, h), &y, t, omega);
            let half = EtdCoeffs::new(&self.lambda, 0.5 * h);
            let mid = self.etd_step(&half, &y, t, omega);
            let two = self.etd_step(&half, &mid, t + 0.5 * h, omega);
            let err = self.rel_err(&two, &full);
            if err <= self.options.rtol {
                y = two;
                t += h;
                h *= (0.9 * (1.0 / err.max(1e-30)).powf(0.2)).clamp(0.2, 4.0);
            } else {
                h *= (0.9 * (1.0 / err).powf(0.2)).clamp(0.1, 0.9);
                if h < h_min {
                    return Err(Error::Stiffness(format!("step {h:.3e} s at t = {t:.3e} s")));
                }
            }
        }
        Ok(self.to_state(&y))
    }

    /// Step count per period that meets the tolerance over one period
    /// started from `y`, by repeated step doubling.
    fn calibrate(&self, y: &Array1<C64>, omega: f64) -> Result<usize> {
        let period = 2.0 * PI / omega;
        let mut k = self.options.min_steps_per_period.max(1);
        let mut coarse = self.period_map(y, omega, &EtdCoeffs::new(&self.lambda, period / k as f64), k);
        while 2 * k <= self.options.max_steps_per_period {
            let fine = self.period_map(y, omega, &EtdCoeffs::new(&self.lambda, period / (2 * k) as f64), 2 * k);
            if self.rel_err(&fine, &coarse) <= self.options.rtol {
                return Ok(2 * k);
            }
            k *= 2;
            coarse = fine;
        }
        Err(Error::Stiffness(format!(
            "more than {} steps per drive period needed",
            self.options.max_steps_per_period
        )))
    }

    fn period_map(&self, y: &Array1<C64>, omega: f64, c: &EtdCoeffs, k: usize) -> Array1<C64> {
        let mut y = y.clone();
        for j in 0..k {
            y = self.etd_step(c, &y, j as f64 * c.h, omega);
        }
        y
    }

    /// Periodic steady state at drive frequency `omega`, sampled at `t = 0`
    /// (mod the period), and the step count used.
    pub fn periodic_orbit(&self, omega: f64, guess: Option<&CMat>) -> Result<(CMat, usize)> {
        if !(omega > 0.0) {
            return Err(Error::config("drive_omega", omega, "> 0"));
        }
        let period = 2.0 * PI / omega;
        let start = guess.cloned().unwrap_or_else(|| self.rho_ref.clone());
        let mut y = self.to_coords(&start);
        let k = self.calibrate(&y, omega)?;
        let c = EtdCoeffs::new(&self.lambda, period / k as f64);
        let precond: Array1<C64> = self
            .lambda
            .iter()
            .enumerate()
            .map(|(j, l)| {
                if j == self.trace_mode {
                    C64::new(0.0, 0.0)
                } else {
                    1.0 / ((l * period).exp() - 1.0)
                }
            })
            .collect();
        let mut last = f64::INFINITY;
        for _ in 0..self.options.max_newton {
            let phi = self.period_map(&y, omega, &c, k);
            let f = &phi - &y;
            let fnorm = f.iter().fold(0.0f64, |m, z| m.max(z.norm()));
            let ynorm = y.iter().fold(0.0f64, |m, z| m.max(z.norm()));
            // the defect stalls at the round-off floor of the period map
            let stalled = fnorm > 0.5 * last && fnorm <= 1e-3 * self.options.shooting_tol.sqrt() * ynorm;
            if fnorm <= self.options.shooting_tol * ynorm || stalled {
                return Ok((self.to_state(&y), k));
            }
            last = fnorm;
            let tm = self.trace_mode;
            let apply = |u: &Array1<C64>| -> Array1<C64> {
                let w = &precond * u;
                let wn = w.iter().fold(0.0f64, |m, z| m.max(z.norm()));
                let mut out = if wn == 0.0 {
                    Array1::zeros(u.len())
                } else {
                    let eps = 1e-7 * ynorm.max(1.0) / wn;
                    let shifted = &y + &w.mapv(|z| z * eps);
                    (&self.period_map(&shifted, omega, &c, k) - &phi).mapv(|z| z / eps) - &w
                };
                out[tm] += u[tm];
                out
            };
            let mut rhs = f.mapv(|z| -z);
            rhs[tm] = C64::new(0.0, 0.0);
            let u = gmres(apply, &rhs, 1e-10, 200)?;
            y = &y + &(&precond * &u);
        }
        Err(Error::NonConvergence {
            iterations: self.options.max_newton,
            residual: last,
        })
    }

    /// Samples `periods` drive periods starting from `rho` at `t = 0`, with
    /// `k` samples per period.
    pub fn record(&self, rho: &CMat, omega: f64, k: usize, periods: usize) -> Result<TimeTrace> {
        let period = 2.0 * PI / omega;
        let c = EtdCoeffs::new(&self.lambda, period / k as f64);
        let mut y = self.to_coords(rho);
        let mut trace = TimeTrace {
            time: Vec::with_capacity(k * periods),
            sx: vec![],
            sy: vec![],
            sz: vec![],
            fz: vec![],
            parallel: vec![],
            max_trace_error: 0.0,
            min_eigenvalue: f64::INFINITY,
        };
        for j in 0..k * periods {
            let t = j as f64 * c.h;
            let rho = self.to_state(&y);
            self.sample(&mut trace, t, &rho)?;
            y = self.etd_step(&c, &y, t, omega);
        }
        Ok(trace)
    }

    fn sample(&self, trace: &mut TimeTrace, t: f64, rho: &CMat) -> Result<()> {
        let ex = |a: &CMat| (a * &rho.t()).sum().re;
        trace.time.push(t);
        trace.sx.push(ex(&self.s.sx));
        trace.sy.push(ex(&self.s.sy));
        trace.sz.push(ex(&self.s.sz));
        trace.fz.push(ex(&self.fz));
        trace.parallel.push(ex(&self.parallel));
        let tr: C64 = rho.diag().sum();
        trace.max_trace_error = trace.max_trace_error.max((tr - 1.0).norm());
        let herm = (rho + &crate::spin::dagger(rho)).mapv(|z| z * 0.5);
        let (w, _) = herm.eigh(UPLO::Lower)?;
        trace.min_eigenvalue = trace.min_eigenvalue.min(w[0]);
        Ok(())
    }
}

/// Unitary eigenbasis of `-i[H, .]` built from the eigenvectors of `H`; exact
/// degeneracies make the general eigensolver ill-conditioned here.
fn hamiltonian_eigenbasis(h: &CMat) -> Result<(Array1<C64>, CMat, CMat)> {
    let d = h.nrows();
    let (w, u) = h.eigh(UPLO::Lower)?;
    let uc = u.mapv(|z| z.conj());
    let mut v = CMat::zeros((d * d, d * d));
    let mut lambda = Array1::zeros(d * d);
    for i in 0..d {
        for j in 0..d {
            let col = i * d + j;
            lambda[col] = C64::new(0.0, -(w[i] - w[j]));
            for a in 0..d {
                for b in 0..d {
                    v[[a * d + b, col]] = u[[a, i]] * uc[[b, j]];
                }
            }
        }
    }
    let v_inv = crate::spin::dagger(&v);
    Ok((lambda, v, v_inv))
}

/// `sum_k <S_k>(rho) M_k(rho)` for the three spin-exchange mean-field pieces,
/// in operator form.
fn mean_field_op(s: &GroundSpin, rho: &CMat) -> CMat {
    let ex = |a: &CMat| (a * &rho.t()).sum();
    let (mz, mp, mm) = (ex(&s.sz), ex(&s.sp), ex(&s.sm));
    let sand = |a: &CMat, b: &CMat| a.dot(rho).dot(b);
    let anti = |x: &CMat| x.dot(rho) + rho.dot(x);
    let term_z = sand(&s.sp, &s.sm) - sand(&s.sm, &s.sp) + anti(&s.sz);
    let term_p = sand(&s.sm, &s.sz) - sand(&s.sz, &s.sm) + anti(&s.sm).mapv(|z| z * 0.5);
    let term_m = sand(&s.sz, &s.sp) - sand(&s.sp, &s.sz) + anti(&s.sp).mapv(|z| z * 0.5);
    term_z.mapv(|z| z * mz) + term_p.mapv(|z| z * mp) + term_m.mapv(|z| z * mm)
}

/// Superoperator of the mean-field term linearised about `rho_ref`. With
/// `affine` set the constant part is folded in through the trace, so that
/// the remainder is exactly quadratic in `rho - Tr(rho) rho_ref`.
fn mean_field_jacobian(parts: &SsParts, s: &GroundSpin, gamma_se: f64, rho_ref: &CMat, d: usize, affine: bool) -> CMat {
    let n = d * d;
    let mut j = CMat::zeros((n, n));
    if gamma_se == 0.0 {
        return j;
    }
    let r = vec(rho_ref);
    let tr_vec = trace_vector(d);
    for (op, sup) in [(&s.sz, &parts.mz), (&s.sp, &parts.mplus), (&s.sm, &parts.mminus)] {
        let t = vec(&op.t().to_owned());
        let m_ref: C64 = t.dot(&r);
        let mr: CVec = sup.dot(&r);
        j = j + sup.mapv(|z| z * m_ref);
        let outer = outer(&mr, &t);
        j = j + outer;
        if affine {
            j = j - self::outer(&mr, &tr_vec).mapv(|z| z * m_ref);
        }
    }
    j.mapv(|z| z * (2.0 * gamma_se))
}

fn outer(a: &CVec, b: &CVec) -> CMat {
    let n = a.len();
    let m = b.len();
    Array2::from_shape_fn((n, m), |(i, k)| a[i] * b[k])
}

/// Undriven full-space steady state with the nonlinear mean field, by
/// Newton iteration on `L0 rho + 2 gamma_SE sum <S_k> M_k rho = 0`.
fn undriven_steady_state(l_bare: &CMat, parts: &SsParts, s: &GroundSpin, gamma_se: f64, d: usize) -> Result<CMat> {
    let tr_vec = trace_vector(d);
    let constrained = |mut a: CMat, mut b: CVec, rhs0: C64| -> Result<CVec> {
        a.row_mut(0).assign(&tr_vec);
        b[0] = rhs0;
        Ok(a.solve_into(b)?)
    };
    let mut e0 = CVec::zeros(d * d);
    e0[0] = C64::new(1.0, 0.0);
    let mut r = constrained(l_bare.clone(), e0, C64::new(1.0, 0.0))?;
    for it in 0..50 {
        let rho = unvec(&r, d);
        let f = l_bare.dot(&r) + vec(&mean_field_op(s, &rho)).mapv(|z| z * (2.0 * gamma_se));
        let fnorm = f.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        let scale = l_bare.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        if fnorm < 1e-15 * scale && it > 0 {
            let rho = unvec(&r, d);
            return Ok((&rho + &crate::spin::dagger(&rho)).mapv(|z| z * 0.5));
        }
        let j = l_bare + &mean_field_jacobian(parts, s, gamma_se, &rho, d, false);
        let delta = constrained(j, f.mapv(|z| -z), C64::new(0.0, 0.0))?;
        let step = delta.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        r = &r + &delta;
        if step < 1e-14 {
            let rho = unvec(&r, d);
            return Ok((&rho + &crate::spin::dagger(&rho)).mapv(|z| z * 0.5));
        }
    }
    Err(Error::NonConvergence {
        iterations: 50,
        residual: f64::NAN,
    })
}

/// Restarted-free GMRES with Givens rotations.
fn gmres(apply: impl Fn(&Array1<C64>) -> Array1<C64>, b: &Array1<C64>, tol: f64, max_iter: usize) -> Result<Array1<C64>> {
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(Array1::zeros(n));
    }
    let mut basis: Vec<Array1<C64>> = vec![b.mapv(|z| z / bnorm)];
    let mut h: Vec<Vec<C64>> = Vec::new();
    let mut cs: Vec<(f64, C64)> = Vec::new();
    let mut g = vec![C64::new(bnorm, 0.0)];
    for k in 0..max_iter.min(n) {
        let mut w = apply(&basis[k]);
        let mut col = vec![C64::new(0.0, 0.0); k + 2];
        for (i, q) in basis.iter().enumerate() {
            let hij: C64 = q.iter().zip(w.iter()).map(|(a, b)| a.conj() * b).sum();
            col[i] = hij;
            w = &w - &q.mapv(|z| z * hij);
        }
        let wn = norm2(&w);
        col[k + 1] = C64::new(wn, 0.0);
        for (i, &(c, sn)) in cs.iter().enumerate() {
            let (a, b) = (col[i], col[i + 1]);
            col[i] = a * c + sn * b;
            col[i + 1] = -sn.conj() * a + b * c;
        }
        let (a, b) = (col[k], col[k + 1]);
        let r = (a.norm_sqr() + b.norm_sqr()).sqrt();
        let (c, sn) = if a.norm() == 0.0 {
            (0.0, C64::new(1.0, 0.0))
        } else {
            let c = a.norm() / r;
            (c, (a / a.norm()) * b.conj() / r)
        };
        col[k] = a * c + sn * b;
        col[k + 1] = C64::new(0.0, 0.0);
        cs.push((c, sn));
        let gk = g[k];
        g[k] = gk * c;
        g.push(-sn.conj() * gk);
        h.push(col);
        let resid = g[k + 1].norm();
        if resid <= tol * bnorm || wn == 0.0 || k + 1 == max_iter.min(n) {
            let m = k + 1;
            let mut yv = vec![C64::new(0.0, 0.0); m];
            for i in (0..m).rev() {
                let mut acc = g[i];
                for j in i + 1..m {
                    acc -= h[j][i] * yv[j];
                }
                yv[i] = acc / h[i][i];
            }
            let mut x = Array1::zeros(n);
            for (i, q) in basis.iter().take(m).enumerate() {
                x = x + q.mapv(|z| z * yv[i]);
            }
            if resid > tol * bnorm && wn != 0.0 {
                log::warn!("gmres stopped at residual {:.2e}", resid / bnorm);
            }
            return Ok(x);
        }
        basis.push(w.mapv(|z| z / wn));
    }
    unreachable!("loop returns on its last iteration")
}

fn norm2(v: &Array1<C64>) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Drive at `drive_omega` from the periodic steady state and record
/// `duration` (rounded up to whole periods, at least the configured count).
pub fn integrate_full(config: &SimulationConfig, drive_omega: f64, duration: f64) -> Result<TimeTrace> {
    config.validate()?;
    let model = FullModel::new(config, OracleOptions::default())?;
    let period = 2.0 * PI / drive_omega;
    let (rho, k) = model.periodic_orbit(drive_omega, None)?;
    let periods = ((duration / period).ceil() as usize).max(model.options.record_periods);
    model.record(&rho, drive_omega, k, periods)
}

/// Undriven evolution of the maximally mixed ground state over `duration`.
pub fn relax_full(config: &SimulationConfig, duration: f64) -> Result<CMat> {
    let mut cfg = config.clone();
    cfg.field.b1 = 0.0;
    let model = FullModel::new(&cfg, OracleOptions::default())?;
    model.evolve(&mixed_ground(&model), 0.0, duration, 0.0)
}

/// Maximally mixed ground state on the full space.
pub fn mixed_ground(model: &FullModel) -> CMat {
    let n = model.d / 2;
    let mut rho = CMat::zeros((model.d, model.d));
    for i in 0..n {
        rho[[i, i]] = C64::new(1.0 / n as f64, 0.0);
    }
    rho
}

/// Demodulated response at one drive frequency.
pub fn response_at(model: &FullModel, omega: f64, guess: Option<&CMat>) -> Result<(Demodulated, CMat)> {
    let (rho, k) = model.periodic_orbit(omega, guess)?;
    let trace = model.record(&rho, omega, k, model.options.record_periods)?;
    if trace.max_trace_error > 1e-8 || trace.min_eigenvalue < -1e-8 {
        return Err(Error::Stiffness(format!(
            "state left the physical set (trace error {:.2e}, min eigenvalue {:.2e})",
            trace.max_trace_error, trace.min_eigenvalue
        )));
    }
    Ok((demodulate(&trace, omega)?, rho))
}

/// Oracle precession frequency (rad/s) by secant iteration on the
/// demodulated signal, started from `guess` (rad/s).
pub fn oracle_precession_frequency(model: &FullModel, geometry: Geometry, guess: f64) -> Result<f64> {
    let dw = hz_to_rad(2.0);
    let (mut w0, mut w1) = (guess - dw, guess + dw);
    let (d0, r0) = response_at(model, w0, None)?;
    let (d1, mut rho) = response_at(model, w1, Some(&r0))?;
    let (mut f0, mut f1) = (d0.signal(geometry), d1.signal(geometry));
    for _ in 0..12 {
        if f1 == f0 {
            break;
        }
        let w2 = w1 - f1 * (w1 - w0) / (f1 - f0);
        if (w2 - w1).abs() < hz_to_rad(1e-3) {
            return Ok(w2);
        }
        let (d2, r2) = response_at(model, w2, Some(&rho))?;
        rho = r2;
        (w0, f0) = (w1, f1);
        (w1, f1) = (w2, d2.signal(geometry));
    }
    if (w1 - w0).abs() < hz_to_rad(1e-2) {
        return Ok(w1);
    }
    Err(Error::NonConvergence {
        iterations: 12,
        residual: f1.abs(),
    })
}

/// One ground level of the exact Zeeman spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeemanLevel {
    pub label: Label,
    /// rad/s, with the b manifold at zero field set to zero.
    pub energy: f64,
}

/// Exact ground-state spectrum of `H_HF + g_S mu_B B S_z - g_I mu_N B I_z`.
/// `F_z` is conserved, so each `m` block is at most 2x2; the upper root of a
/// block continues to the `a` level. Returned in basis order.
pub fn exact_zeeman_spectrum(species: &AlkaliSpecies, b0: f64) -> Result<Vec<ZeemanLevel>> {
    species.validate()?;
    let ds = hz_to_rad(species.delta_s_hz);
    let x = (species.g_s * MU_B + species.g_i * MU_N) * b0.abs() / ds;
    if x >= 1.0 {
        return Err(Error::LabelingAmbiguity(x));
    }
    let ctx = ModelContext::new(species)?;
    let n = ctx.basis.sector_dim();
    let labels = &ctx.basis.labels()[..n];
    let sz = ctx.ops.sz.ground_block();
    let iz = ctx.ops.iz.ground_block();
    let mut h = sz.mapv(|z| z * species.g_s * MU_B * b0) - iz.mapv(|z| z * species.g_i * MU_N * b0);
    for (i, l) in labels.iter().enumerate() {
        if l.manifold == Manifold::A {
            h[[i, i]] += ds;
        }
    }
    let mut out: Vec<ZeemanLevel> = labels.iter().map(|&label| ZeemanLevel { label, energy: 0.0 }).collect();
    let mut two_ms: Vec<i32> = labels.iter().map(|l| l.two_m).collect();
    two_ms.sort_unstable();
    two_ms.dedup();
    for tm in two_ms {
        let idx: Vec<usize> = (0..n).filter(|&i| labels[i].two_m == tm).collect();
        let block = Array2::from_shape_fn((idx.len(), idx.len()), |(p, q)| h[[idx[p], idx[q]]]);
        let (w, _) = block.eigh(UPLO::Lower)?;
        if idx.len() == 1 {
            out[idx[0]].energy = w[0];
            continue;
        }
        for &i in &idx {
            out[i].energy = match labels[i].manifold {
                Manifold::A => w[1],
                Manifold::B => w[0],
            };
        }
    }
    Ok(out)
}

/// Largest deviation (rad/s) between exact and second-order adjacent-level
/// spacings within each ground manifold.
pub fn spacing_residual(species: &AlkaliSpecies, b0: f64) -> Result<f64> {
    let levels = exact_zeeman_spectrum(species, b0)?;
    let mu = mu_eff(species);
    let w_rev = (mu * b0).powi(2) / hz_to_rad(species.delta_s_hz);
    let gi = species.g_i * MU_N;
    let second_order = |l: &Label| {
        let sgn = if l.manifold == Manifold::A { 1.0 } else { -1.0 };
        let m = l.m();
        (sgn * mu - gi) * b0 * m - sgn * w_rev * m * m
    };
    let mut worst = 0.0f64;
    for pair in levels.windows(2) {
        let (p, q) = (&pair[0], &pair[1]);
        if p.label.manifold != q.label.manifold || p.label.sector != Sector::S {
            continue;
        }
        let exact = q.energy - p.energy;
        let approx = second_order(&q.label) - second_order(&p.label);
        worst = worst.max((exact - approx).abs());
    }
    Ok(worst)
}
