//! Adiabatic elimination of the excited sector and the self-consistent
//! steady state of the resulting ground-state generator.
//!
//! With `L0` the pump-free part and `L1 = -i[H_LA, .]` the light coupling,
//! the effective generator on the ground superspace is
//!
//! ```text
//! L_eff = P L0 P + P L0 Q (Q L0 Q)^-1 Q L1 Q (Q L0 Q)^-1 Q L1 P
//!                - P L1 Q (Q L0 Q)^-1 Q L1 P
//! ```
//!
//! The excited-sector propagator `(Q L0 Q)^-1` is built from the
//! field-independent pieces only (hyperfine structure, excited-state mixing,
//! quenching and the linear spin-relaxation term). Zeeman, auxiliary-field
//! and mean-field terms are slow on the optical scale and enter through
//! `P L0 P` alone, which keeps the second-order part independent of `B0`.

use std::sync::Arc;

use log::warn;
use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, FactorizeInto, Solve, UPLO};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    dissipator_pp, dissipator_sp, EffectToggles, MeanFields, ModelContext, SimulationConfig, SsParts,
};
use crate::spin::{dagger, max_abs, CMat, GroundSpin, HyperfineBasis};
use crate::superop::{commutator, vec};

/// Superspace index sets of the ground-ground block (`P`) and its complement (`Q`).
#[derive(Debug, Clone)]
pub struct Projectors {
    /// Full-superspace indices of ground-ground coherences, in ground-superspace order.
    pub p: Vec<usize>,
    pub q: Vec<usize>,
    full_dim: usize,
}

impl Projectors {
    /// Dense projector onto the ground-ground block of the full superspace.
    pub fn p_matrix(&self) -> CMat {
        let d2 = self.full_dim * self.full_dim;
        let mut m = CMat::zeros((d2, d2));
        for &k in &self.p {
            m[[k, k]] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn q_matrix(&self) -> CMat {
        let d2 = self.full_dim * self.full_dim;
        CMat::from_diag_elem(d2, C64::new(1.0, 0.0)) - self.p_matrix()
    }
}

pub fn projectors(basis: &HyperfineBasis) -> Projectors {
    let d = basis.dim();
    let n = basis.sector_dim();
    let mut p = Vec::with_capacity(n * n);
    let mut q = Vec::with_capacity(d * d - n * n);
    for i in 0..d {
        for j in 0..d {
            if i < n && j < n {
                p.push(i * d + j);
            } else {
                q.push(i * d + j);
            }
        }
    }
    Projectors { p, q, full_dim: d }
}

fn block(m: &CMat, rows: &[usize], cols: &[usize]) -> CMat {
    Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| m[[rows[i], cols[j]]])
}

/// Ground-superspace generator after eliminating the excited sector.
#[derive(Debug, Clone)]
pub struct EffectiveLiouvillian {
    basis: Arc<HyperfineBasis>,
    /// `P L0 P` without the mean-field part of spin exchange.
    pub first_order: CMat,
    /// Dissipative second-order part (optical pumping).
    pub pumping: CMat,
    /// Coherent second-order part (light shift).
    pub light_shift: CMat,
    pub ls: bool,
    ss: SsParts,
    gamma_se: f64,
    ground: GroundSpin,
    /// Ground Hamiltonian without the light shift, rad/s.
    pub ground_hamiltonian: CMat,
}

impl EffectiveLiouvillian {
    pub fn basis(&self) -> &Arc<HyperfineBasis> {
        &self.basis
    }

    pub fn ground_spin(&self) -> &GroundSpin {
        &self.ground
    }

    pub fn ss_parts(&self) -> &SsParts {
        &self.ss
    }

    pub fn gamma_se(&self) -> f64 {
        self.gamma_se
    }

    /// Second-order part actually in use.
    pub fn second_order(&self) -> CMat {
        if self.ls {
            &self.pumping + &self.light_shift
        } else {
            self.pumping.clone()
        }
    }

    /// Generator with the mean fields frozen at `mf`.
    pub fn matrix(&self, mf: &MeanFields) -> CMat {
        let mut m = &self.first_order + &self.pumping;
        if self.ls {
            m = m + &self.light_shift;
        }
        m + self.ss.mean_field_part(self.gamma_se, mf)
    }

    pub fn ground_dim(&self) -> usize {
        self.basis.sector_dim()
    }
}

/// Second-order light coupling; depends on the pump and rates but not on the fields.
pub fn light_kernel(ctx: &ModelContext, config: &SimulationConfig) -> Result<CMat> {
    let basis = &ctx.basis;
    let h = ctx.hamiltonians(config)?;
    let r = &config.rates;
    let proj = projectors(basis);

    let ss = SsParts::new(&ctx.ops.ground_electron_embedded());
    let l0 = commutator(h.hf.matrix())
        + dissipator_pp(basis, &ctx.ops, r.gamma_mix).matrix()
        + dissipator_sp(basis, &ctx.dipoles, r.gamma_q).matrix()
        + ss.linear.mapv(|z| z * (r.gamma_sd + r.gamma_se));
    let l1 = commutator(h.light.matrix());

    let qq = block(&l0, &proj.q, &proj.q);
    let lu = qq.factorize_into().map_err(|_| Error::DegenerateElimination)?;
    let q_l1_p = block(&l1, &proj.q, &proj.p);
    let q_l1_q = block(&l1, &proj.q, &proj.q);
    let p_l1_q = block(&l1, &proj.p, &proj.q);
    let p_l0_q = block(&l0, &proj.p, &proj.q);

    let solve_cols = |rhs: &CMat| -> Result<CMat> {
        let mut out = CMat::zeros(rhs.dim());
        for (j, col) in rhs.columns().into_iter().enumerate() {
            let x = lu.solve(&col.to_owned()).map_err(|_| Error::DegenerateElimination)?;
            if x.iter().any(|z| !z.is_finite()) {
                return Err(Error::DegenerateElimination);
            }
            out.column_mut(j).assign(&x);
        }
        Ok(out)
    };
    let y1 = solve_cols(&q_l1_p)?;
    let y2 = solve_cols(&q_l1_q.dot(&y1))?;
    Ok(p_l0_q.dot(&y2) - p_l1_q.dot(&y1))
}

/// Eliminate the excited sector for one configuration.
pub fn effective_liouvillian(ctx: &ModelContext, config: &SimulationConfig) -> Result<EffectiveLiouvillian> {
    let kernel = light_kernel(ctx, config)?;
    effective_from_kernel(ctx, config, &kernel)
}

/// Assemble the effective generator around a precomputed light kernel.
pub fn effective_from_kernel(
    ctx: &ModelContext,
    config: &SimulationConfig,
    kernel: &CMat,
) -> Result<EffectiveLiouvillian> {
    let basis = &ctx.basis;
    let n = basis.sector_dim();
    if kernel.dim() != (n * n, n * n) {
        return Err(Error::BasisMismatch {
            expected: n * n,
            found: kernel.nrows(),
        });
    }
    let h = ctx.hamiltonians(config)?;
    let full = h.hf.matrix() + h.zeeman.matrix() + h.aux.matrix();
    let hg = full.slice(ndarray::s![..n, ..n]).to_owned();
    let ground = ctx.ops.ground_electron();
    let ss = SsParts::new(&ground);
    let r = &config.rates;
    let first_order = commutator(&hg) + ss.linear.mapv(|z| z * (r.gamma_sd + r.gamma_se));

    // Every Hamiltonian is real in this basis and every dissipator is a real
    // superoperator, so the coherent second-order part is the imaginary one.
    let pumping = kernel.mapv(|z| C64::new(z.re, 0.0));
    let light_shift = kernel.mapv(|z| C64::new(0.0, z.im));

    Ok(EffectiveLiouvillian {
        basis: basis.clone(),
        first_order,
        pumping,
        light_shift,
        ls: config.toggles.ls,
        ss,
        gamma_se: r.gamma_se,
        ground,
        ground_hamiltonian: hg,
    })
}

/// Toggle-aware rebuild without recomputing the kernel.
pub fn with_toggles(eff: &EffectiveLiouvillian, toggles: EffectToggles) -> EffectiveLiouvillian {
    let mut e = eff.clone();
    e.ls = toggles.ls;
    e
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteadyState {
    /// Populations of the eigenstates in `eigenbasis` (columns).
    pub populations: Vec<f64>,
    #[serde(skip)]
    pub eigenbasis: CMat,
    /// Ground-sector density matrix.
    #[serde(skip)]
    pub rho: CMat,
    pub mean_fields: MeanFields,
    pub iterations: usize,
    pub residual: f64,
}

impl SteadyState {
    /// Population of each coupled basis state `|F m>`.
    pub fn basis_populations(&self) -> Vec<f64> {
        self.rho.diag().iter().map(|z| z.re).collect()
    }
}

/// `<S_z>` of the spin-temperature state for given pumping and relaxation,
/// used as the starting guess.
fn initial_polarization(eff: &EffectiveLiouvillian, config: &SimulationConfig) -> f64 {
    let n = eff.ground_dim();
    let mut depletion = 0.0;
    for i in 0..n {
        depletion += -eff.pumping[[i * n + i, i * n + i]].re;
    }
    let r_op = 2.0 * depletion / n as f64;
    let g_rel = 2.0 * config.rates.gamma_sd;
    let theta = config.field.theta;
    let sz = crate::analysis::spin_temperature_sz(r_op, g_rel, theta).unwrap_or(0.0);
    config.pump.helicity.sign() * sz.clamp(-0.49, 0.49)
}

fn clip_populations(p: &mut [f64]) -> Result<()> {
    for (i, v) in p.iter_mut().enumerate() {
        if *v < -1e-12 {
            return Err(Error::NegativePopulation { index: i, value: *v });
        }
        if *v < 0.0 {
            warn!("clamping population {i} from {v:e} to 0");
            *v = 0.0;
        }
    }
    let total: f64 = p.iter().sum();
    for v in p.iter_mut() {
        *v /= total;
    }
    Ok(())
}

/// Rate matrix between the columns of `u` under `l`: entry `(i, j)` is the
/// rate at which population of state `j` feeds state `i`.
fn population_rates(l: &CMat, u: &CMat) -> Array2<f64> {
    let n = u.nrows();
    let mut a = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let col = u.column(j).to_owned();
        let pj = outer(&col, &col);
        let out = l.dot(&vec(&pj));
        for i in 0..n {
            let ui = u.column(i);
            let mut s = C64::new(0.0, 0.0);
            for r in 0..n {
                for c in 0..n {
                    s += ui[r].conj() * out[r * n + c] * ui[c];
                }
            }
            a[[i, j]] = s.re;
        }
    }
    a
}

fn outer(a: &Array1<C64>, b: &Array1<C64>) -> CMat {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j].conj())
}

/// Eigenbasis of the static ground Hamiltonian, or the identity when it is
/// already diagonal.
fn quantization_basis(hg: &CMat) -> Result<CMat> {
    let n = hg.nrows();
    let off = hg - &CMat::from_diag(&hg.diag().to_owned());
    if max_abs(&off) == 0.0 {
        return Ok(CMat::from_diag_elem(n, C64::new(1.0, 0.0)));
    }
    let (_, v) = hg.eigh(UPLO::Upper)?;
    Ok(v)
}

/// Self-consistent steady state in the diagonal approximation (default) or
/// from the full ground-superspace null vector.
pub fn steady_state(eff: &EffectiveLiouvillian, config: &SimulationConfig) -> Result<SteadyState> {
    let num = &config.numerics;
    if num.full_steady_state {
        return steady_state_full(eff, config);
    }
    let n = eff.ground_dim();
    let u = quantization_basis(&eff.ground_hamiltonian)?;

    // start from the spin-temperature distribution along the field
    let sz0 = initial_polarization(eff, config);
    let beta = ((1.0 + 2.0 * sz0) / (1.0 - 2.0 * sz0)).ln();
    let fz = ground_fz_expectations(eff, &u);
    let mut p: Vec<f64> = fz.iter().map(|m| (beta * m).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);

    let mut last_change = f64::INFINITY;
    for it in 1..=num.max_iter {
        let rho = rho_from(&u, &p);
        let mf = MeanFields::from_state(&eff.ground, &rho);
        mf.validate()?;
        let l = eff.matrix(&mf);
        let mut a = population_rates(&l, &u);
        for j in 0..n {
            a[[0, j]] = 1.0;
        }
        let mut rhs = Array1::<f64>::zeros(n);
        rhs[0] = 1.0;
        let target = a.solve_into(rhs)?;
        let change = target
            .iter()
            .zip(&p)
            .fold(0.0f64, |m, (t, q)| m.max((t - q).abs()));
        for (q, t) in p.iter_mut().zip(target.iter()) {
            *q += num.damping * (t - *q);
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        last_change = change;
        if change < num.steady_tol {
            let mut pop = target.to_vec();
            clip_populations(&mut pop)?;
            let rho = rho_from(&u, &pop);
            let mean_fields = MeanFields::from_state(&eff.ground, &rho);
            return Ok(SteadyState {
                populations: pop,
                eigenbasis: u,
                rho,
                mean_fields,
                iterations: it,
                residual: change,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: num.max_iter,
        residual: last_change,
    })
}

fn ground_fz_expectations(eff: &EffectiveLiouvillian, u: &CMat) -> Vec<f64> {
    // F_z restricted to the ground sector, read back from the basis labels
    let labels = &eff.basis.labels()[..eff.ground_dim()];
    let fz = CMat::from_diag(&Array1::from_iter(labels.iter().map(|l| C64::new(l.m(), 0.0))));
    (0..u.ncols())
        .map(|j| {
            let c = u.column(j);
            let mut s = C64::new(0.0, 0.0);
            for r in 0..u.nrows() {
                s += c[r].conj() * fz[[r, r]] * c[r];
            }
            s.re
        })
        .collect()
}

fn rho_from(u: &CMat, p: &[f64]) -> CMat {
    let d = CMat::from_diag(&Array1::from_iter(p.iter().map(|&x| C64::new(x, 0.0))));
    u.dot(&d).dot(&dagger(u))
}

fn steady_state_full(eff: &EffectiveLiouvillian, config: &SimulationConfig) -> Result<SteadyState> {
    let num = &config.numerics;
    let n = eff.ground_dim();
    let mut rho = CMat::from_diag_elem(n, C64::new(1.0 / n as f64, 0.0));
    let mut last_change = f64::INFINITY;
    for it in 1..=num.max_iter {
        let mf = MeanFields::from_state(&eff.ground, &rho);
        mf.validate()?;
        let mut l = eff.matrix(&mf);
        for j in 0..n * n {
            l[[0, j]] = C64::new(0.0, 0.0);
        }
        for i in 0..n {
            l[[0, i * n + i]] = C64::new(1.0, 0.0);
        }
        let mut rhs = Array1::<C64>::zeros(n * n);
        rhs[0] = C64::new(1.0, 0.0);
        let x = l.solve_into(rhs)?;
        let target = crate::superop::unvec(&x, n);
        let target = (&target + &dagger(&target)).mapv(|z| z * 0.5);
        let change = (0..n).fold(0.0f64, |m, i| m.max((target[[i, i]] - rho[[i, i]]).norm()));
        let coh = max_abs(&(&target - &rho));
        rho = &rho + &(&target - &rho).mapv(|z| z * num.damping);
        last_change = change.max(coh);
        if last_change < num.steady_tol {
            let (vals, vecs) = target.eigh(UPLO::Upper)?;
            let mut pop = vals.to_vec();
            clip_populations(&mut pop)?;
            let mean_fields = MeanFields::from_state(&eff.ground, &target);
            return Ok(SteadyState {
                populations: pop,
                eigenbasis: vecs,
                rho: target,
                mean_fields,
                iterations: it,
                residual: last_change,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: num.max_iter,
        residual: last_change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Helicity, RateConfig};
    use crate::spin::{AlkaliSpecies, Manifold, Sector};
    use crate::superop::trace_vector;
    use approx::assert_abs_diff_eq;

    fn ctx() -> ModelContext {
        ModelContext::new(&AlkaliSpecies::rb85()).unwrap()
    }

    #[test]
    fn projectors_partition() {
        let c = ctx();
        let pr = projectors(&c.basis);
        assert_eq!(pr.p.len(), 144);
        assert_eq!(pr.p.len() + pr.q.len(), 576);
        let p = pr.p_matrix();
        let q = pr.q_matrix();
        assert!(max_abs(&(p.dot(&p) - &p)) == 0.0);
        assert!(max_abs(&p.dot(&q)) == 0.0);
        let mut rho = CMat::zeros((24, 24));
        rho[[0, 3]] = C64::new(1.0, 2.0);
        let v = vec(&rho);
        assert_eq!(p.dot(&v), v);
    }

    #[test]
    fn light_coupling_has_no_pp_block() {
        let c = ctx();
        let cfg = SimulationConfig::rb85_default().with_theta(0.5);
        let h = c.hamiltonians(&cfg).unwrap();
        let l1 = commutator(h.light.matrix());
        let pr = projectors(&c.basis);
        assert_eq!(max_abs(&block(&l1, &pr.p, &pr.p)), 0.0);
        let drive = crate::model::driving_superop(&c.basis, &c.ops, 1e-9, 0.5, crate::model::DriveForm::Full);
        assert!(max_abs(drive.matrix()) > 0.0);
    }

    #[test]
    fn kernel_scales_quadratically_and_preserves_trace() {
        let c = ctx();
        let cfg = SimulationConfig::rb85_default().with_theta(0.3);
        let k1 = light_kernel(&c, &cfg).unwrap();
        let mut cfg2 = cfg.clone();
        cfg2.pump.rabi *= 3.0;
        let k3 = light_kernel(&c, &cfg2).unwrap();
        assert!(max_abs(&(&k3 - &k1.mapv(|z| z * 9.0))) / max_abs(&k3) < 1e-9);
        let t = trace_vector(12);
        let eff = effective_from_kernel(&c, &cfg, &k1).unwrap();
        let scale = max_abs(&eff.pumping);
        let row = t.dot(&eff.pumping);
        assert!(row.iter().all(|z| z.norm() / scale < 1e-10));
        let row = t.dot(&eff.matrix(&MeanFields::default()));
        assert!(row.iter().all(|z| z.norm() / scale < 1e-10));
    }

    #[test]
    fn zero_pump_reduces_to_first_order() {
        let c = ctx();
        let mut cfg = SimulationConfig::rb85_default();
        cfg.pump.rabi = 1e-300;
        let eff = effective_liouvillian(&c, &cfg).unwrap();
        assert!(max_abs(&eff.second_order()) == 0.0);
    }

    #[test]
    fn unpumped_state_is_fully_mixed() {
        let c = ctx();
        let mut cfg = SimulationConfig::rb85_default();
        cfg.pump.rabi = 1e-300;
        let eff = effective_liouvillian(&c, &cfg).unwrap();
        let ss = steady_state(&eff, &cfg).unwrap();
        for p in &ss.populations {
            assert_abs_diff_eq!(*p, 1.0 / 12.0, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(ss.mean_fields.sz, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn helicity_sets_polarization_sign() {
        let c = ctx();
        let cfg = SimulationConfig::rb85_default();
        let plus = steady_state(&effective_liouvillian(&c, &cfg).unwrap(), &cfg).unwrap();
        let cfgm = cfg.with_helicity(Helicity::Minus);
        let minus = steady_state(&effective_liouvillian(&c, &cfgm).unwrap(), &cfgm).unwrap();
        let fz = |s: &SteadyState| -> f64 {
            c.basis.labels()[..12]
                .iter()
                .zip(s.basis_populations())
                .map(|(l, p)| l.m() * p)
                .sum()
        };
        assert!(fz(&plus) > 0.1, "{}", fz(&plus));
        assert_abs_diff_eq!(fz(&plus), -fz(&minus), epsilon = 1e-8);
        let total: f64 = plus.populations.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn resonant_pumping_empties_b_manifold() {
        let c = ctx();
        let pa = |det_hz: f64| {
            let mut cfg = SimulationConfig::rb85_default();
            cfg.pump.detuning = crate::constants::hz_to_rad(det_hz);
            let ss = steady_state(&effective_liouvillian(&c, &cfg).unwrap(), &cfg).unwrap();
            c.basis.labels()[..12]
                .iter()
                .zip(ss.basis_populations())
                .filter(|(l, _)| l.sector == Sector::S && l.manifold == Manifold::A)
                .map(|(_, p)| p)
                .sum::<f64>()
        };
        assert!(pa(0.0) > pa(4e9));
    }

    #[test]
    fn damping_independence_and_full_solver_agreement() {
        let c = ctx();
        let mut cfg = SimulationConfig::rb85_default().with_theta(0.6);
        let eff = effective_liouvillian(&c, &cfg).unwrap();
        cfg.numerics.damping = 0.3;
        let a = steady_state(&eff, &cfg).unwrap();
        cfg.numerics.damping = 0.7;
        let b = steady_state(&eff, &cfg).unwrap();
        for (x, y) in a.populations.iter().zip(&b.populations) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-8);
        }
        cfg.numerics.full_steady_state = true;
        let f = steady_state(&eff, &cfg).unwrap();
        let (pa, pf) = (a.basis_populations(), f.basis_populations());
        for (x, y) in pa.iter().zip(&pf) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-3);
        }
    }

    #[test]
    fn light_shift_leaves_populations_alone_at_zero_tilt() {
        let c = ctx();
        let cfg = SimulationConfig::rb85_default();
        let eff = effective_liouvillian(&c, &cfg).unwrap();
        let with = steady_state(&eff, &cfg).unwrap();
        let off = with_toggles(&eff, EffectToggles::NLZ_ONLY);
        let without = steady_state(&off, &cfg).unwrap();
        for (x, y) in with.populations.iter().zip(&without.populations) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-6);
        }
    }

    #[test]
    fn singular_q_block_is_reported() {
        let c = ctx();
        let mut cfg = SimulationConfig::rb85_default();
        cfg.rates = RateConfig {
            gamma_mix: 0.0,
            gamma_q: 0.0,
            gamma_sd: 0.0,
            gamma_se: 0.0,
        };
        cfg.pump.detuning = 0.0;
        assert!(matches!(light_kernel(&c, &cfg), Err(Error::DegenerateElimination)));
    }
}
