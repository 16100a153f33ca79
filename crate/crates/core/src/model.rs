//! Configuration types, Hamiltonians, the RF drive and the three dissipators
//! of the master equation, assembled into the zero-order Liouvillian.
//!
//! Geometry: the static field `B0` points along `z`; the pump axis lies in the
//! `xz` plane at angle `theta` from `z`; the RF field is perpendicular to the
//! pump, along `x cos(theta) - z sin(theta)`.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::s;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::constants::*;
use crate::error::{Error, Result};
use crate::spin::{
    build_basis, dipole_jump_operators, spin_operators, AlkaliSpecies, CMat, DipoleSet, GroundSpin,
    HyperfineBasis, LabeledOperator, Manifold, Sector, SpinOperatorSet,
};
use crate::superop::{anticommutator, commutator, lindblad, sandwich, Space};

pub use crate::superop::Superoperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Helicity {
    #[serde(alias = "sigma+", alias = "+")]
    Plus,
    #[serde(alias = "sigma-", alias = "-")]
    Minus,
}

impl Helicity {
    pub fn sign(self) -> f64 {
        match self {
            Helicity::Plus => 1.0,
            Helicity::Minus => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Helicity::Plus => Helicity::Minus,
            Helicity::Minus => Helicity::Plus,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Helicity::Plus => "plus",
            Helicity::Minus => "minus",
        }
    }
}

/// Static, RF and auxiliary fields (tesla) and the tilt angle (rad).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// Signed; a negative value is the field-inverted geometry.
    pub b0: f64,
    pub b1: f64,
    /// Auxiliary field along the pump axis, parallel for sigma+ and
    /// antiparallel for sigma-.
    pub ba: f64,
    pub theta: f64,
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.b0.is_finite() && self.b0 != 0.0) {
            return Err(Error::config("field.B0", self.b0, "B0 != 0"));
        }
        if !(self.b1.abs() / self.b0.abs() < 1e-2) {
            return Err(Error::config("field.B1", self.b1, "|B1|/|B0| < 1e-2"));
        }
        if !(self.ba >= 0.0) {
            return Err(Error::config("field.Ba", self.ba, "Ba >= 0"));
        }
        if !(self.ba / self.b0.abs() < 1e-2) {
            return Err(Error::config("field.Ba", self.ba, "Ba/|B0| < 1e-2"));
        }
        // Negative tilts are allowed here so the parity theorem can be exercised.
        if !(self.theta.abs() <= PI / 2.0 + 1e-12) {
            return Err(Error::config("field.theta", self.theta, "|theta| <= pi/2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpConfig {
    /// Rabi frequency, rad/s.
    pub rabi: f64,
    /// Detuning from the `a_S -> a_P` line, rad/s.
    pub detuning: f64,
    pub helicity: Helicity,
}

impl PumpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rabi > 0.0 && self.rabi.is_finite()) {
            return Err(Error::config("pump.rabi", self.rabi, "rabi > 0"));
        }
        if !self.detuning.is_finite() {
            return Err(Error::config("pump.detuning", self.detuning, "finite"));
        }
        Ok(())
    }

    /// Rabi frequency of a flat-top beam of the given power (W) and diameter
    /// (m): `Omega = E0 <1/2||d||1/2> / (2 sqrt 3)` with `E0 = sqrt(2 I / (c eps0))`.
    pub fn rabi_from_power(species: &AlkaliSpecies, power_w: f64, diameter_m: f64) -> f64 {
        let area = PI * (diameter_m / 2.0).powi(2);
        let intensity = power_w / area;
        let e0 = (2.0 * intensity / (SPEED_OF_LIGHT * EPSILON_0)).sqrt();
        let dipole = species.d1_dipole_ea0 * ELEMENTARY_CHARGE * BOHR_RADIUS;
        e0 * dipole / (2.0 * 3f64.sqrt() * HBAR)
    }
}

/// Relaxation rates of the master equation, rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConfig {
    pub gamma_mix: f64,
    pub gamma_q: f64,
    pub gamma_sd: f64,
    pub gamma_se: f64,
}

/// Vapor-cell conditions used to derive default rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellConditions {
    pub temperature_c: f64,
    /// N2 buffer-gas pressure at cell temperature, Torr.
    pub buffer_torr: f64,
    /// Cell edge length, m.
    pub length_m: f64,
}

impl Default for CellConditions {
    fn default() -> Self {
        CellConditions {
            temperature_c: 90.0,
            buffer_torr: 700.0,
            length_m: 4e-3,
        }
    }
}

/// Saturated vapor pressure (Pa) over the liquid metal.
pub fn vapor_pressure_pa(species: &AlkaliSpecies, temperature_k: f64) -> f64 {
    let t = temperature_k;
    let log10_torr = if species.name.to_ascii_lowercase().starts_with("cs") {
        8.22127 - 4006.048 / t - 0.00060194 * t - 0.19623 * t.log10()
    } else {
        15.88253 - 4529.635 / t + 0.00058663 * t - 2.99138 * t.log10()
    };
    10f64.powf(log10_torr) * TORR
}

fn mean_relative_speed(temperature_k: f64, m1_amu: f64, m2_amu: f64) -> f64 {
    let mu = m1_amu * m2_amu / (m1_amu + m2_amu) * ATOMIC_MASS_UNIT;
    (8.0 * BOLTZMANN * temperature_k / (PI * mu)).sqrt()
}

const N2_MASS_AMU: f64 = 28.0134;
/// Alkali-N2 quenching cross-section, m^2.
const SIGMA_QUENCH: f64 = 5.8e-19;
/// D1 pressure broadening by N2, FWHM in Hz per amagat.
const D1_BROADENING_HZ_PER_AMG: f64 = 17.8e9;
/// Alkali-alkali spin-exchange cross-section, m^2.
const SIGMA_SE: f64 = 1.9e-18;
/// Alkali-alkali and alkali-N2 spin-destruction cross-sections, m^2.
const SIGMA_SD_SELF: f64 = 9e-22;
const SIGMA_SD_N2: f64 = 1e-26;
/// Alkali-N2 diffusion constant at 273 K and 1 amagat, m^2/s.
const DIFFUSION_D0: f64 = 0.159e-4;

impl RateConfig {
    /// Rates from gas-kinetic estimates for a cubic cell.
    ///
    /// The excited-state coherence decays at `2 Gamma_Q + 3/4 gamma_Mix`,
    /// which is matched to the pressure-broadened half width; population
    /// quenching runs at `4 Gamma_Q`. Electron-spin relaxation in the
    /// ground-state dissipator runs at `2 gamma`, so `gamma = R / 2`.
    pub fn from_cell(species: &AlkaliSpecies, cell: &CellConditions) -> Self {
        let t = cell.temperature_c + 273.15;
        let n_alkali = vapor_pressure_pa(species, t) / (BOLTZMANN * t);
        let n_n2 = cell.buffer_torr * TORR / (BOLTZMANN * t);

        let v_n2 = mean_relative_speed(t, species.mass_amu, N2_MASS_AMU);
        let v_self = mean_relative_speed(t, species.mass_amu, species.mass_amu);

        let r_quench = n_n2 * SIGMA_QUENCH * v_n2;
        let gamma_q = r_quench / 4.0;
        let fwhm_hz = D1_BROADENING_HZ_PER_AMG * n_n2 / AMAGAT;
        let gamma_mix = ((PI * fwhm_hz - 2.0 * gamma_q) / 0.75).max(0.0);

        let r_se = n_alkali * SIGMA_SE * v_self;
        let diffusion = DIFFUSION_D0 * (AMAGAT / n_n2) * (t / 273.15).sqrt();
        let r_sd = n_alkali * SIGMA_SD_SELF * v_self
            + n_n2 * SIGMA_SD_N2 * v_n2
            + 3.0 * PI * PI * diffusion / cell.length_m.powi(2);

        RateConfig {
            gamma_mix,
            gamma_q,
            gamma_sd: r_sd / 2.0,
            gamma_se: r_se / 2.0,
        }
    }

    pub fn validate(&self, rabi: f64) -> Result<()> {
        for (k, v) in [
            ("rates.gamma_mix", self.gamma_mix),
            ("rates.gamma_q", self.gamma_q),
            ("rates.gamma_sd", self.gamma_sd),
            ("rates.gamma_se", self.gamma_se),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(k, v, ">= 0"));
            }
        }
        if !(self.gamma_q + self.gamma_mix >= 10.0 * rabi) {
            return Err(Error::config(
                "rates.gamma_q + rates.gamma_mix",
                self.gamma_q + self.gamma_mix,
                "gamma_q + gamma_mix >= 10 rabi",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectToggles {
    pub nlz: bool,
    pub nuz: bool,
    pub ls: bool,
}

impl EffectToggles {
    pub const ALL: EffectToggles = EffectToggles {
        nlz: true,
        nuz: true,
        ls: true,
    };
    pub const NLZ_ONLY: EffectToggles = EffectToggles {
        nlz: true,
        nuz: false,
        ls: false,
    };
    pub const LS_ONLY: EffectToggles = EffectToggles {
        nlz: false,
        nuz: false,
        ls: true,
    };
    pub const NUZ_ONLY: EffectToggles = EffectToggles {
        nlz: false,
        nuz: true,
        ls: false,
    };
}

impl Default for EffectToggles {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZeemanMode {
    /// `g_S mu_B B S_z - g_I mu_N B I_z` on both sectors.
    Exact,
    /// Second-order diagonal ground-state spectrum with separable effects.
    Perturbative,
}

/// Which drive and parallel-probe operator to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriveForm {
    /// `S_x cos(theta) - S_z sin(theta)`
    Full,
    /// `S_x cos(theta)`
    Rwa,
    /// `S_x cos(theta)`, with the source of the linear response restricted to
    /// the co-rotating Zeeman coherences. Drops the counter-rotating tail.
    #[serde(rename = "corotating")]
    CoRotating,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Numerics {
    /// Bisection stops when the bracket is narrower than this, Hz.
    pub root_tol_hz: f64,
    pub scan_points: usize,
    pub damping: f64,
    pub steady_tol: f64,
    pub max_iter: usize,
    /// Solve the full ground-superspace null vector instead of the
    /// diagonal population equations.
    pub full_steady_state: bool,
    pub drive_form: DriveForm,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            root_tol_hz: 1e-3,
            scan_points: 201,
            damping: 0.5,
            steady_tol: 1e-10,
            max_iter: 10_000,
            full_steady_state: false,
            drive_form: DriveForm::Full,
        }
    }
}

/// Everything a single pipeline run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub species: AlkaliSpecies,
    pub field: FieldConfig,
    pub pump: PumpConfig,
    pub rates: RateConfig,
    pub toggles: EffectToggles,
    pub zeeman: ZeemanMode,
    pub numerics: Numerics,
}

/// Beam diameter that sets the default pumping strength, m. The beam fills
/// the 4 mm cell; this is the one knob tuned against the flattening threshold.
pub const DEFAULT_BEAM_DIAMETER: f64 = 4e-3;
/// Default pump power, W.
pub const DEFAULT_PUMP_POWER: f64 = 50e-6;

impl SimulationConfig {
    /// 85Rb at 55 uT, resonant sigma+ pump, rates of a 90 C cell with
    /// 700 Torr N2.
    pub fn rb85_default() -> Self {
        let species = AlkaliSpecies::rb85();
        let rates = RateConfig::from_cell(&species, &CellConditions::default());
        let rabi = PumpConfig::rabi_from_power(&species, DEFAULT_PUMP_POWER, DEFAULT_BEAM_DIAMETER);
        SimulationConfig {
            species,
            field: FieldConfig {
                b0: 55e-6,
                b1: 55e-6 * 1e-4,
                ba: 0.0,
                theta: 0.0,
            },
            pump: PumpConfig {
                rabi,
                detuning: 0.0,
                helicity: Helicity::Plus,
            },
            rates,
            toggles: EffectToggles::ALL,
            zeeman: ZeemanMode::Perturbative,
            numerics: Numerics::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.species.validate()?;
        self.field.validate()?;
        self.pump.validate()?;
        self.rates.validate(self.pump.rabi)?;
        if self.zeeman == ZeemanMode::Exact && !self.toggles.nlz {
            return Err(Error::config(
                "toggles.nlz",
                false,
                "the exact Zeeman Hamiltonian always contains the nonlinear Zeeman effect",
            ));
        }
        if self.zeeman == ZeemanMode::Perturbative {
            check_perturbative(&self.species, self.field.b0)?;
        }
        let n = &self.numerics;
        if !(n.root_tol_hz > 0.0) {
            return Err(Error::config("numerics.root_tol_hz", n.root_tol_hz, "> 0"));
        }
        if n.scan_points < 3 {
            return Err(Error::config("numerics.scan_points", n.scan_points, ">= 3"));
        }
        if !(n.damping > 0.0 && n.damping <= 1.0) {
            return Err(Error::config("numerics.damping", n.damping, "0 < damping <= 1"));
        }
        if !(n.steady_tol > 0.0) {
            return Err(Error::config("numerics.steady_tol", n.steady_tol, "> 0"));
        }
        Ok(())
    }

    pub fn with_theta(&self, theta: f64) -> Self {
        let mut c = self.clone();
        c.field.theta = theta;
        c
    }

    pub fn with_helicity(&self, helicity: Helicity) -> Self {
        let mut c = self.clone();
        c.pump.helicity = helicity;
        c
    }

    pub fn with_toggles(&self, toggles: EffectToggles) -> Self {
        let mut c = self.clone();
        c.toggles = toggles;
        c
    }
}

/// `mu_eff = (g_S mu_B + g_I mu_N) / (2I + 1)`, rad s^-1 T^-1.
pub fn mu_eff(species: &AlkaliSpecies) -> f64 {
    (species.g_s * MU_B + species.g_i * MU_N) / (species.two_i as f64 + 1.0)
}

fn check_perturbative(species: &AlkaliSpecies, b0: f64) -> Result<()> {
    let ratio = (mu_eff(species) * b0).abs() / hz_to_rad(species.delta_s_hz);
    if ratio > 0.05 {
        return Err(Error::PerturbativeValidity { ratio });
    }
    Ok(())
}

/// Diagonal hyperfine Hamiltonian in the frame rotating with the pump.
pub fn hamiltonian_hf(basis: &Arc<HyperfineBasis>, detuning: f64) -> LabeledOperator {
    let sp = basis.species();
    let ds = hz_to_rad(sp.delta_s_hz);
    let dp = hz_to_rad(sp.delta_p_hz);
    let diag: Vec<C64> = basis
        .labels()
        .iter()
        .map(|l| {
            let e = match (l.sector, l.manifold) {
                (Sector::S, Manifold::A) => ds,
                (Sector::S, Manifold::B) => 0.0,
                (Sector::P, Manifold::A) => detuning,
                (Sector::P, Manifold::B) => detuning - dp,
            };
            C64::new(e, 0.0)
        })
        .collect();
    LabeledOperator::new(basis.clone(), CMat::from_diag(&ndarray::Array1::from(diag)))
        .expect("dimension from basis")
}

/// Zeeman Hamiltonian for a field `b_z` along z.
pub fn hamiltonian_zeeman(
    basis: &Arc<HyperfineBasis>,
    ops: &SpinOperatorSet,
    b_z: f64,
    mode: ZeemanMode,
    toggles: EffectToggles,
) -> Result<LabeledOperator> {
    let sp = basis.species();
    match mode {
        ZeemanMode::Exact => {
            let gi = if toggles.nuz { sp.g_i } else { 0.0 };
            let m = ops.sz.matrix().mapv(|z| z * sp.g_s * MU_B * b_z)
                - ops.iz.matrix().mapv(|z| z * gi * MU_N * b_z);
            LabeledOperator::new(basis.clone(), m)
        }
        ZeemanMode::Perturbative => {
            check_perturbative(sp, b_z)?;
            let mu = mu_eff(sp);
            let w_rev = (mu * b_z).powi(2) / hz_to_rad(sp.delta_s_hz);
            let nuz = if toggles.nuz { sp.g_i * MU_N } else { 0.0 };
            let nlz = if toggles.nlz { w_rev } else { 0.0 };
            let mut m = CMat::zeros((basis.dim(), basis.dim()));
            for (i, l) in basis.labels().iter().enumerate() {
                if l.sector != Sector::S {
                    continue;
                }
                let sgn = match l.manifold {
                    Manifold::A => 1.0,
                    Manifold::B => -1.0,
                };
                let mm = l.m();
                m[[i, i]] = C64::new((sgn * mu - nuz) * b_z * mm - sgn * nlz * mm * mm, 0.0);
            }
            LabeledOperator::new(basis.clone(), m)
        }
    }
}

/// Pump coupling in the rotating-wave approximation.
///
/// sigma- is the image of sigma+ under a pi rotation about `y` (with a sign
/// flip on the excited sector): the `A_+`/`A_-` coefficients swap and the
/// `A_0` term changes sign. Keeping the `A_0` sign instead would pump at
/// `-theta` while the drive stays at `+theta`.
pub fn hamiltonian_light(
    basis: &Arc<HyperfineBasis>,
    dipoles: &DipoleSet,
    pump: &PumpConfig,
    theta: f64,
) -> LabeledOperator {
    let (c, s) = (theta.cos(), theta.sin());
    let (cp, cm, c0) = match pump.helicity {
        Helicity::Plus => (c + 1.0, c - 1.0, s),
        Helicity::Minus => (c - 1.0, c + 1.0, -s),
    };
    let w = -pump.rabi;
    let v = dipoles.ap.matrix().mapv(|z| z * (w * cp))
        + dipoles.am.matrix().mapv(|z| z * (w * cm))
        + (dipoles.a0p.matrix() + dipoles.a0m.matrix()).mapv(|z| z * (w * c0));
    let h = &v + &crate::spin::dagger(&v);
    LabeledOperator::new(basis.clone(), h).expect("dimension from basis")
}

/// Ground-only copy of a full-space operator.
fn ground_only(basis: &HyperfineBasis, m: &CMat) -> CMat {
    let n = basis.sector_dim();
    let mut out = CMat::zeros(m.dim());
    out.slice_mut(s![..n, ..n]).assign(&m.slice(s![..n, ..n]));
    out
}

/// Auxiliary field along the pump axis, signed by helicity. Follows the
/// sector coverage of the Zeeman mode.
pub fn hamiltonian_aux(
    basis: &Arc<HyperfineBasis>,
    ops: &SpinOperatorSet,
    ba: f64,
    theta: f64,
    helicity: Helicity,
    mode: ZeemanMode,
) -> LabeledOperator {
    let sp = basis.species();
    let b = helicity.sign() * ba;
    let (c, s) = (theta.cos(), theta.sin());
    let elec = (ops.sx.matrix().mapv(|z| z * s) + ops.sz.matrix().mapv(|z| z * c)).mapv(|z| z * sp.g_s * MU_B * b);
    let nuc = (ops.ix.matrix().mapv(|z| z * s) + ops.iz.matrix().mapv(|z| z * c)).mapv(|z| z * sp.g_i * MU_N * b);
    let mut h = elec - nuc;
    if mode == ZeemanMode::Perturbative {
        h = ground_only(basis, &h);
    }
    LabeledOperator::new(basis.clone(), h).expect("dimension from basis")
}

/// The operator the RF field couples to and the parallel probe reads out.
pub fn drive_operator(ground: &GroundSpin, theta: f64, form: DriveForm) -> CMat {
    match form {
        DriveForm::Full => &ground.sx.mapv(|z| z * theta.cos()) - &ground.sz.mapv(|z| z * theta.sin()),
        DriveForm::Rwa | DriveForm::CoRotating => ground.sx.mapv(|z| z * theta.cos()),
    }
}

/// Time-independent drive `-i g_S mu_B B1 [O, .]` on the ground superspace.
pub fn driving_superop(
    basis: &Arc<HyperfineBasis>,
    ops: &SpinOperatorSet,
    b1: f64,
    theta: f64,
    form: DriveForm,
) -> Superoperator {
    let o = drive_operator(&ops.ground_electron(), theta, form);
    let h = o.mapv(|z| z * basis.species().g_s * MU_B * b1);
    Superoperator::new(basis.clone(), Space::Ground, commutator(&h)).expect("ground dimension")
}

/// `gamma_Mix (2 J.rho J - {rho, J.J})` with `J` the excited-state angular momentum.
pub fn dissipator_pp(basis: &Arc<HyperfineBasis>, ops: &SpinOperatorSet, gamma_mix: f64) -> Superoperator {
    let m = ops
        .jp
        .iter()
        .map(|j| lindblad(j.matrix(), gamma_mix))
        .reduce(|a, b| a + b)
        .expect("three components");
    Superoperator::new(basis.clone(), Space::Full, m).expect("full dimension")
}

/// Quenching `Gamma_Q sum_j (2 A_j rho A_j^dagger - {rho, A_j^dagger A_j})`.
pub fn dissipator_sp(basis: &Arc<HyperfineBasis>, dipoles: &DipoleSet, gamma_q: f64) -> Superoperator {
    let m = dipoles
        .all()
        .iter()
        .map(|a| lindblad(a.matrix(), gamma_q))
        .reduce(|a, b| a + b)
        .expect("four channels");
    Superoperator::new(basis.clone(), Space::Full, m).expect("full dimension")
}

/// Ground-state electron-spin mean fields. `<S_->` is the conjugate of `<S_+>`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanFields {
    pub sz: f64,
    pub sp: C64,
}

impl MeanFields {
    pub fn validate(&self) -> Result<()> {
        if !(self.sz.abs() <= 0.5 + 1e-12) {
            return Err(Error::InvalidMeanField(self.sz));
        }
        Ok(())
    }

    pub fn sm(&self) -> C64 {
        self.sp.conj()
    }

    pub fn from_state(ground: &GroundSpin, rho: &CMat) -> Self {
        let tr = |a: &CMat| -> C64 { (a * &rho.t()).sum() };
        MeanFields {
            sz: tr(&ground.sz).re,
            sp: tr(&ground.sp),
        }
    }
}

/// The pieces of the spin-exchange/destruction dissipator, so callers can
/// rebuild it cheaply as the mean fields change.
#[derive(Debug, Clone)]
pub struct SsParts {
    /// `2 S.rho S - {rho, S.S}` (multiply by `gamma_SD + gamma_SE`).
    pub linear: CMat,
    /// `S_+ rho S_- - S_- rho S_+ + {rho, S_z}` (multiply by `2 gamma_SE <S_z>`).
    pub mz: CMat,
    /// `S_- rho S_z - S_z rho S_- + {rho, S_-}/2` (multiply by `2 gamma_SE <S_+>`).
    pub mplus: CMat,
    /// `S_z rho S_+ - S_+ rho S_z + {rho, S_+}/2` (multiply by `2 gamma_SE <S_->`).
    pub mminus: CMat,
}

impl SsParts {
    pub fn new(s: &GroundSpin) -> Self {
        let linear = lindblad(&s.sx, 1.0) + lindblad(&s.sy, 1.0) + lindblad(&s.sz, 1.0);
        let mz = sandwich(&s.sp, &s.sm) - sandwich(&s.sm, &s.sp) + anticommutator(&s.sz);
        let mplus = sandwich(&s.sm, &s.sz) - sandwich(&s.sz, &s.sm) + anticommutator(&s.sm).mapv(|z| z * 0.5);
        let mminus = sandwich(&s.sz, &s.sp) - sandwich(&s.sp, &s.sz) + anticommutator(&s.sp).mapv(|z| z * 0.5);
        SsParts {
            linear,
            mz,
            mplus,
            mminus,
        }
    }

    pub fn mean_field_part(&self, gamma_se: f64, mf: &MeanFields) -> CMat {
        let k = 2.0 * gamma_se;
        self.mz.mapv(|z| z * (k * mf.sz))
            + self.mplus.mapv(|z| z * (k * mf.sp))
            + self.mminus.mapv(|z| z * (k * mf.sm()))
    }

    pub fn assemble(&self, gamma_sd: f64, gamma_se: f64, mf: &MeanFields) -> CMat {
        self.linear.mapv(|z| z * (gamma_sd + gamma_se)) + self.mean_field_part(gamma_se, mf)
    }
}

/// Spin destruction plus mean-field spin exchange acting on ground atoms.
/// On the full space the electron spin is restricted to the ground sector.
pub fn dissipator_ss(
    basis: &Arc<HyperfineBasis>,
    ops: &SpinOperatorSet,
    space: Space,
    gamma_sd: f64,
    gamma_se: f64,
    mf: &MeanFields,
) -> Result<Superoperator> {
    mf.validate()?;
    let s = match space {
        Space::Full => ops.ground_electron_embedded(),
        Space::Ground => ops.ground_electron(),
    };
    let m = SsParts::new(&s).assemble(gamma_sd, gamma_se, mf);
    Superoperator::new(basis.clone(), space, m)
}

/// Operators shared by every assembly for one species.
#[derive(Debug, Clone)]
pub struct ModelContext {
    pub basis: Arc<HyperfineBasis>,
    pub ops: SpinOperatorSet,
    pub dipoles: DipoleSet,
}

impl ModelContext {
    pub fn new(species: &AlkaliSpecies) -> Result<Self> {
        let basis = build_basis(species)?;
        let ops = spin_operators(&basis);
        let dipoles = dipole_jump_operators(&basis);
        Ok(ModelContext { basis, ops, dipoles })
    }

    /// Static Hamiltonian pieces of a configuration.
    pub fn hamiltonians(&self, config: &SimulationConfig) -> Result<Hamiltonians> {
        let f = &config.field;
        Ok(Hamiltonians {
            hf: hamiltonian_hf(&self.basis, config.pump.detuning),
            zeeman: hamiltonian_zeeman(&self.basis, &self.ops, f.b0, config.zeeman, config.toggles)?,
            light: hamiltonian_light(&self.basis, &self.dipoles, &config.pump, f.theta),
            aux: hamiltonian_aux(&self.basis, &self.ops, f.ba, f.theta, config.pump.helicity, config.zeeman),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Hamiltonians {
    pub hf: LabeledOperator,
    pub zeeman: LabeledOperator,
    pub light: LabeledOperator,
    pub aux: LabeledOperator,
}

impl Hamiltonians {
    pub fn total(&self) -> CMat {
        self.hf.matrix() + self.zeeman.matrix() + self.light.matrix() + self.aux.matrix()
    }
}

/// `L0 = -i[H_HF + H_B + H_LA + H_aux, .] + L_PP + L_SP + L_SS` on the full space.
pub fn assemble_l0(ctx: &ModelContext, config: &SimulationConfig, mf: &MeanFields) -> Result<Superoperator> {
    if *ctx.basis.species() != config.species {
        return Err(Error::BasisMismatch {
            expected: 4 * (config.species.two_i as usize + 1),
            found: ctx.basis.dim(),
        });
    }
    let h = ctx.hamiltonians(config)?;
    let r = &config.rates;
    let mut l = Superoperator::new(ctx.basis.clone(), Space::Full, commutator(&h.total()))?;
    l = l.add(&dissipator_pp(&ctx.basis, &ctx.ops, r.gamma_mix))?;
    l = l.add(&dissipator_sp(&ctx.basis, &ctx.dipoles, r.gamma_q))?;
    l = l.add(&dissipator_ss(&ctx.basis, &ctx.ops, Space::Full, r.gamma_sd, r.gamma_se, mf)?)?;
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{dagger, max_abs};
    use crate::superop::{trace_vector, unvec, vec};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx() -> ModelContext {
        ModelContext::new(&AlkaliSpecies::rb85()).unwrap()
    }

    fn random_state(d: usize, support: std::ops::Range<usize>, rng: &mut impl Rng) -> CMat {
        let mut a = CMat::zeros((d, d));
        for i in support.clone() {
            for j in support.clone() {
                a[[i, j]] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        let rho = a.dot(&dagger(&a));
        let tr: C64 = rho.diag().sum();
        rho.mapv(|z| z / tr)
    }

    fn trace(m: &CMat) -> C64 {
        m.diag().sum()
    }

    #[test]
    fn hf_levels() {
        let c = ctx();
        let h = hamiltonian_hf(&c.basis, 0.0);
        let sp = c.basis.species();
        for (i, l) in c.basis.labels().iter().enumerate() {
            let e = h.matrix()[[i, i]].re;
            match (l.sector, l.manifold) {
                (Sector::S, Manifold::B) | (Sector::P, Manifold::A) => assert_eq!(e, 0.0),
                (Sector::P, Manifold::B) => assert_relative_eq!(e, -hz_to_rad(sp.delta_p_hz)),
                (Sector::S, Manifold::A) => assert_relative_eq!(rad_to_hz(e), 3.0357e9, max_relative = 1e-4),
            }
        }
    }

    #[test]
    fn zeeman_zero_field_and_m0() {
        let c = ctx();
        let z = hamiltonian_zeeman(&c.basis, &c.ops, 0.0, ZeemanMode::Exact, EffectToggles::ALL).unwrap();
        assert_eq!(max_abs(z.matrix()), 0.0);
        let p = hamiltonian_zeeman(&c.basis, &c.ops, 55e-6, ZeemanMode::Perturbative, EffectToggles::ALL).unwrap();
        for (i, l) in c.basis.labels().iter().enumerate() {
            if l.two_m == 0 {
                assert_eq!(p.matrix()[[i, i]].re, 0.0);
            }
        }
    }

    #[test]
    fn perturbative_spacing_at_55ut() {
        let c = ctx();
        let p = hamiltonian_zeeman(&c.basis, &c.ops, 55e-6, ZeemanMode::Perturbative, EffectToggles::ALL).unwrap();
        let mu = mu_eff(c.basis.species());
        let wl = mu * 55e-6;
        let w_nuz = c.basis.species().g_i * MU_N * 55e-6;
        let w_rev = wl * wl / hz_to_rad(c.basis.species().delta_s_hz);
        assert_relative_eq!(rad_to_hz(w_nuz), 226.0, max_relative = 0.01);
        assert_relative_eq!(rad_to_hz(w_rev), 22.0, max_relative = 0.05);
        for two_m in (-6..6).step_by(2) {
            let i = c.basis.index_of(&crate::spin::Label::new(Sector::S, Manifold::A, two_m)).unwrap();
            let spacing = p.matrix()[[i + 1, i + 1]].re - p.matrix()[[i, i]].re;
            let m = two_m as f64 / 2.0;
            assert_relative_eq!(spacing, wl - w_nuz - (2.0 * m + 1.0) * w_rev, max_relative = 1e-12);
        }
    }

    #[test]
    fn perturbative_validity_bound() {
        let c = ctx();
        let r = hamiltonian_zeeman(&c.basis, &c.ops, 0.05, ZeemanMode::Perturbative, EffectToggles::ALL);
        assert!(matches!(r, Err(Error::PerturbativeValidity { .. })));
    }

    #[test]
    fn light_coupling_structure() {
        let c = ctx();
        let pump = PumpConfig {
            rabi: 1.0,
            detuning: 0.0,
            helicity: Helicity::Plus,
        };
        let h = hamiltonian_light(&c.basis, &c.dipoles, &pump, 0.0);
        assert!(h.is_hermitian());
        let expect = c.dipoles.ap.matrix().mapv(|z| z * -2.0);
        let expect = &expect + &dagger(&expect);
        assert!(max_abs(&(h.matrix() - &expect)) < 1e-14);
        let h = hamiltonian_light(&c.basis, &c.dipoles, &pump, PI / 2.0);
        let v = c.dipoles.ap.matrix().mapv(|z| -z) + c.dipoles.am.matrix().mapv(|z| z)
            - c.dipoles.a0p.matrix()
            - c.dipoles.a0m.matrix();
        assert!(max_abs(&(h.matrix() - &(&v + &dagger(&v)))) < 1e-12);
    }

    #[test]
    fn drive_kills_identity_and_vanishes_at_zero_b1() {
        let c = ctx();
        let l = driving_superop(&c.basis, &c.ops, 1e-9, 0.3, DriveForm::Full);
        let out = l.matrix().dot(&trace_vector(12));
        assert!(out.iter().all(|z| z.norm() < 1e-12));
        let l0 = driving_superop(&c.basis, &c.ops, 0.0, 0.3, DriveForm::Full);
        assert_eq!(max_abs(l0.matrix()), 0.0);
    }

    #[test]
    fn dissipators_are_trace_preserving() {
        let c = ctx();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pp = dissipator_pp(&c.basis, &c.ops, 1.3);
        let sp = dissipator_sp(&c.basis, &c.dipoles, 0.7);
        for _ in 0..20 {
            let rho = random_state(24, 0..24, &mut rng);
            let mf = MeanFields {
                sz: rng.gen_range(-0.5..0.5),
                sp: C64::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)),
            };
            let ss = dissipator_ss(&c.basis, &c.ops, Space::Full, 0.4, 0.9, &mf).unwrap();
            for l in [&pp, &sp, &ss] {
                assert!(trace(&l.apply(&rho)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn quenching_decay_coefficient_is_four() {
        let c = ctx();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let gq = 0.37;
        let sp = dissipator_sp(&c.basis, &c.dipoles, gq);
        for _ in 0..5 {
            let rho = random_state(24, 12..24, &mut rng);
            let d = sp.apply(&rho);
            let dp: C64 = (12..24).map(|i| d[[i, i]]).sum();
            let p: C64 = (12..24).map(|i| rho[[i, i]]).sum();
            assert_relative_eq!(dp.re / p.re, -4.0 * gq, max_relative = 1e-12);
        }
    }

    #[test]
    fn sector_supports() {
        let c = ctx();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let rho_s = random_state(24, 0..12, &mut rng);
        assert!(max_abs(&dissipator_pp(&c.basis, &c.ops, 1.0).apply(&rho_s)) < 1e-14);
        assert!(max_abs(&dissipator_sp(&c.basis, &c.dipoles, 1.0).apply(&rho_s)) < 1e-14);
        let mixed_p = {
            let mut m = CMat::zeros((24, 24));
            for i in 12..24 {
                m[[i, i]] = C64::new(1.0 / 12.0, 0.0);
            }
            m
        };
        assert!(max_abs(&dissipator_pp(&c.basis, &c.ops, 1.0).apply(&mixed_p)) < 1e-14);
        let mixed_s = unvec(&vec(&CMat::from_diag_elem(12, C64::new(1.0 / 12.0, 0.0))), 12);
        let ss = dissipator_ss(&c.basis, &c.ops, Space::Ground, 1.0, 2.0, &MeanFields::default()).unwrap();
        assert!(max_abs(&ss.apply(&mixed_s)) < 1e-14);
    }

    #[test]
    fn pure_destruction_ignores_mean_fields() {
        let c = ctx();
        let a = dissipator_ss(&c.basis, &c.ops, Space::Ground, 1.0, 0.0, &MeanFields::default()).unwrap();
        let mf = MeanFields {
            sz: 0.4,
            sp: C64::new(0.1, 0.05),
        };
        let b = dissipator_ss(&c.basis, &c.ops, Space::Ground, 1.0, 0.0, &mf).unwrap();
        assert_eq!(max_abs(&(a.matrix() - b.matrix())), 0.0);
        let bad = MeanFields {
            sz: 0.6,
            sp: C64::new(0.0, 0.0),
        };
        assert!(matches!(
            dissipator_ss(&c.basis, &c.ops, Space::Ground, 1.0, 1.0, &bad),
            Err(Error::InvalidMeanField(_))
        ));
    }

    #[test]
    fn closed_system_spectrum_is_imaginary() {
        let c = ctx();
        let mut cfg = SimulationConfig::rb85_default();
        cfg.rates = RateConfig {
            gamma_mix: 0.0,
            gamma_q: 0.0,
            gamma_sd: 0.0,
            gamma_se: 0.0,
        };
        cfg.pump.rabi = 1e-300;
        cfg.zeeman = ZeemanMode::Exact;
        let l = assemble_l0(&c, &cfg, &MeanFields::default()).unwrap();
        // -i[H, .] with real H is purely imaginary entrywise
        assert!(l.matrix().iter().all(|z| z.re.abs() < 1e-9));
    }

    #[test]
    fn assembled_generator_preserves_trace_and_hermiticity() {
        let c = ctx();
        let mut cfg = SimulationConfig::rb85_default().with_theta(0.4);
        cfg.field.ba = 1e-8;
        let mf = MeanFields {
            sz: 0.2,
            sp: C64::new(0.01, -0.02),
        };
        let l = assemble_l0(&c, &cfg, &mf).unwrap();
        assert!(l.trace_residual() < 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let rho = random_state(24, 0..24, &mut rng);
        let d = l.apply(&rho);
        let scale = max_abs(&d);
        assert!(max_abs(&(&d - &dagger(&d))) / scale < 1e-10);
    }

    #[test]
    fn zero_aux_is_bit_exact() {
        let c = ctx();
        let cfg = SimulationConfig::rb85_default().with_theta(0.3);
        let a = assemble_l0(&c, &cfg, &MeanFields::default()).unwrap();
        let h = c.hamiltonians(&cfg).unwrap();
        assert_eq!(max_abs(h.aux.matrix()), 0.0);
        let b = assemble_l0(&c, &cfg, &MeanFields::default()).unwrap();
        assert_eq!(a.matrix(), b.matrix());
    }

    #[test]
    fn default_rates_are_in_expected_ranges() {
        let sp = AlkaliSpecies::rb85();
        let r = RateConfig::from_cell(&sp, &CellConditions::default());
        assert!(r.gamma_q > 1e9 && r.gamma_q < 3e9, "{r:?}");
        assert!(r.gamma_mix > 2e10 && r.gamma_mix < 1e11, "{r:?}");
        assert!(r.gamma_se > 500.0 && r.gamma_se < 2000.0, "{r:?}");
        assert!(r.gamma_sd > 30.0 && r.gamma_sd < 200.0, "{r:?}");
        let rabi = PumpConfig::rabi_from_power(&sp, 50e-6, 2e-3);
        assert_relative_eq!(rabi, 7.6e6, max_relative = 0.05);
    }

    #[test]
    fn config_validation() {
        let mut c = SimulationConfig::rb85_default();
        assert!(c.validate().is_ok());
        c.field.b1 = c.field.b0;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig { .. })));
        let mut c = SimulationConfig::rb85_default();
        c.rates.gamma_q = 0.0;
        c.rates.gamma_mix = 1.0;
        assert!(c.validate().is_err());
    }
}
