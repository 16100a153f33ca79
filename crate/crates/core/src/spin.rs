//! Coupled hyperfine basis of the D1 line and the angular-momentum and dipole
//! jump operators expressed in it.
//!
//! Both the ground (S) and excited (P) sectors carry an electronic
//! angular momentum 1/2 coupled to the nuclear spin `I`, so each sector spans
//! the manifolds `F = a = I + 1/2` and `F = b = I - 1/2`. Operators are built
//! in the uncoupled product basis `|m_J> (x) |m_I>` and recoupled with
//! Clebsch-Gordan coefficients (Condon-Shortley phases, electron first).
//!
//! Half-integer quantum numbers are stored doubled (`two_f`, `two_m`) so that
//! labels never pass through floating point.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use ndarray::{s, Array2};
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CMat = Array2<C64>;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Atomic data fixing the basis and the magnetic couplings.
///
/// `g_i` is the nuclear g-factor in nuclear magnetons, taken positive when the
/// nuclear moment is parallel to the spin. With that sign the ground-state
/// Zeeman coupling reads `g_s mu_B B S_z - g_i mu_N B I_z`, which is what puts
/// the `a`-manifold precession at `omega_L - omega_NuZ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlkaliSpecies {
    pub name: String,
    /// Twice the nuclear spin.
    pub two_i: u32,
    pub g_s: f64,
    pub g_i: f64,
    /// Ground-state hyperfine splitting, Hz.
    pub delta_s_hz: f64,
    /// Excited (P1/2) hyperfine splitting, Hz.
    pub delta_p_hz: f64,
    /// Reduced D1 dipole matrix element `<J=1/2||er||J'=1/2>` in units of e a0.
    pub d1_dipole_ea0: f64,
    /// Atomic mass in atomic mass units.
    pub mass_amu: f64,
}

impl AlkaliSpecies {
    pub fn rb85() -> Self {
        AlkaliSpecies {
            name: "Rb85".into(),
            two_i: 5,
            g_s: 2.002_319_304_362_2,
            // -0.000 293 640 mu_B expressed in nuclear magnetons
            g_i: 0.000_293_640 * 1_836.152_673_43,
            delta_s_hz: 3.035_732_439e9,
            delta_p_hz: 361.58e6,
            d1_dipole_ea0: 2.9931,
            mass_amu: 84.911_789_738,
        }
    }

    pub fn rb87() -> Self {
        AlkaliSpecies {
            name: "Rb87".into(),
            two_i: 3,
            g_s: 2.002_319_304_362_2,
            g_i: 0.000_995_141_4 * 1_836.152_673_43,
            delta_s_hz: 6.834_682_610_904e9,
            delta_p_hz: 814.5e6,
            d1_dipole_ea0: 2.9931,
            mass_amu: 86.909_180_527,
        }
    }

    pub fn cs133() -> Self {
        AlkaliSpecies {
            name: "Cs133".into(),
            two_i: 7,
            g_s: 2.002_319_304_362_2,
            g_i: 0.000_398_853_95 * 1_836.152_673_43,
            delta_s_hz: 9.192_631_770e9,
            delta_p_hz: 1_167.68e6,
            d1_dipole_ea0: 4.5010,
            mass_amu: 132.905_451_961,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "rb85" | "85rb" => Some(Self::rb85()),
            "rb87" | "87rb" => Some(Self::rb87()),
            "cs133" | "cs" | "133cs" => Some(Self::cs133()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![1, 2, 3, 5, 7].contains(&self.two_i) {
            return Err(Error::InvalidSpecies(format!(
                "nuclear spin {}/2 not in {{1/2, 1, 3/2, 5/2, 7/2}}",
                self.two_i
            )));
        }
        if !(self.delta_s_hz > self.delta_p_hz && self.delta_p_hz > 0.0) {
            return Err(Error::InvalidSpecies(format!(
                "need delta_S > delta_P > 0, got {} and {}",
                self.delta_s_hz, self.delta_p_hz
            )));
        }
        if !(self.g_s.is_finite() && self.g_i.is_finite()) {
            return Err(Error::InvalidSpecies("non-finite g-factor".into()));
        }
        Ok(())
    }

    pub fn nuclear_spin(&self) -> f64 {
        self.two_i as f64 / 2.0
    }

    /// Dimension of one sector, `2(2I+1)`.
    pub fn sector_dim(&self) -> usize {
        2 * (self.two_i as usize + 1)
    }

    /// Twice the total angular momentum of a hyperfine manifold.
    pub fn two_f(&self, manifold: Manifold) -> i32 {
        match manifold {
            Manifold::A => self.two_i as i32 + 1,
            Manifold::B => self.two_i as i32 - 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sector {
    /// Ground state 2S1/2.
    S,
    /// Excited state 2P1/2.
    P,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Manifold {
    /// F = I + 1/2
    A,
    /// F = I - 1/2
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Label {
    pub sector: Sector,
    pub manifold: Manifold,
    pub two_m: i32,
}

impl Label {
    pub fn new(sector: Sector, manifold: Manifold, two_m: i32) -> Self {
        Label { sector, manifold, two_m }
    }

    pub fn m(&self) -> f64 {
        self.two_m as f64 / 2.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let man = match self.manifold {
            Manifold::A => 'a',
            Manifold::B => 'b',
        };
        if self.two_m % 2 == 0 {
            write!(f, "|{} {}>_{:?}", man, self.two_m / 2, self.sector)
        } else {
            write!(f, "|{} {}/2>_{:?}", man, self.two_m, self.sector)
        }
    }
}

/// Ordered hyperfine labels: S before P, `a` before `b`, `m` ascending.
#[derive(Debug, Clone)]
pub struct HyperfineBasis {
    species: AlkaliSpecies,
    labels: Vec<Label>,
    index: HashMap<Label, usize>,
}

impl PartialEq for HyperfineBasis {
    fn eq(&self, other: &Self) -> bool {
        self.species == other.species && self.labels == other.labels
    }
}

impl HyperfineBasis {
    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn species(&self) -> &AlkaliSpecies {
        &self.species
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    /// Dimension of one sector; the ground sector occupies `0..sector_dim()`.
    pub fn sector_dim(&self) -> usize {
        self.labels.len() / 2
    }

    pub fn index_of(&self, label: &Label) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn sector_range(&self, sector: Sector) -> std::ops::Range<usize> {
        let n = self.sector_dim();
        match sector {
            Sector::S => 0..n,
            Sector::P => n..2 * n,
        }
    }
}

/// Enumerate both hyperfine manifolds of the S and P sectors.
pub fn build_basis(species: &AlkaliSpecies) -> Result<Arc<HyperfineBasis>> {
    species.validate()?;
    let mut labels = Vec::with_capacity(2 * species.sector_dim());
    for sector in [Sector::S, Sector::P] {
        for manifold in [Manifold::A, Manifold::B] {
            let two_f = species.two_f(manifold);
            for two_m in (-two_f..=two_f).step_by(2) {
                labels.push(Label::new(sector, manifold, two_m));
            }
        }
    }
    let index = labels.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    Ok(Arc::new(HyperfineBasis {
        species: species.clone(),
        labels,
        index,
    }))
}

/// A dense operator tied to the basis it is expressed in.
#[derive(Debug, Clone)]
pub struct LabeledOperator {
    basis: Arc<HyperfineBasis>,
    matrix: CMat,
}

impl LabeledOperator {
    pub fn new(basis: Arc<HyperfineBasis>, matrix: CMat) -> Result<Self> {
        let d = basis.dim();
        if matrix.dim() != (d, d) {
            return Err(Error::BasisMismatch {
                expected: d,
                found: matrix.nrows(),
            });
        }
        Ok(LabeledOperator { basis, matrix })
    }

    pub fn zeros(basis: Arc<HyperfineBasis>) -> Self {
        let d = basis.dim();
        LabeledOperator {
            basis,
            matrix: CMat::zeros((d, d)),
        }
    }

    pub fn basis(&self) -> &Arc<HyperfineBasis> {
        &self.basis
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }

    pub fn dagger(&self) -> Self {
        LabeledOperator {
            basis: self.basis.clone(),
            matrix: dagger(&self.matrix),
        }
    }

    /// Largest entry of `A - A^dagger`.
    pub fn hermiticity_residual(&self) -> f64 {
        max_abs(&(&self.matrix - &dagger(&self.matrix)))
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermiticity_residual() < 1e-12
    }

    /// Ground-sector block.
    pub fn ground_block(&self) -> CMat {
        let r = self.basis.sector_range(Sector::S);
        self.matrix.slice(s![r.clone(), r]).to_owned()
    }
}

/// Electron, nuclear and total angular momentum in the coupled basis.
///
/// The electronic operators act on the ground sector as `S` and on the excited
/// sector as `J^P`; both are spin-1/2 so they share one set of matrices.
#[derive(Debug, Clone)]
pub struct SpinOperatorSet {
    pub sx: LabeledOperator,
    pub sy: LabeledOperator,
    pub sz: LabeledOperator,
    pub sp: LabeledOperator,
    pub sm: LabeledOperator,
    pub ix: LabeledOperator,
    pub iy: LabeledOperator,
    pub iz: LabeledOperator,
    pub fz: LabeledOperator,
    pub fy: LabeledOperator,
    /// Excited-sector electronic angular momentum `(J_x, J_y, J_z)`.
    pub jp: [LabeledOperator; 3],
}

impl SpinOperatorSet {
    /// Ground-sector blocks of `(S_x, S_y, S_z, S_+, S_-)`.
    pub fn ground_electron(&self) -> GroundSpin {
        GroundSpin {
            sx: self.sx.ground_block(),
            sy: self.sy.ground_block(),
            sz: self.sz.ground_block(),
            sp: self.sp.ground_block(),
            sm: self.sm.ground_block(),
        }
    }

    /// Electron spin restricted to the ground sector but embedded in the full
    /// space (zero on the excited sector).
    pub fn ground_electron_embedded(&self) -> GroundSpin {
        let n = self.sx.basis().sector_dim();
        let cut = |op: &LabeledOperator| {
            let mut m = op.matrix().clone();
            m.slice_mut(s![n.., ..]).fill(ZERO);
            m.slice_mut(s![.., n..]).fill(ZERO);
            m
        };
        GroundSpin {
            sx: cut(&self.sx),
            sy: cut(&self.sy),
            sz: cut(&self.sz),
            sp: cut(&self.sp),
            sm: cut(&self.sm),
        }
    }
}

/// Electron spin components on whatever space the dissipators act on.
#[derive(Debug, Clone)]
pub struct GroundSpin {
    pub sx: CMat,
    pub sy: CMat,
    pub sz: CMat,
    pub sp: CMat,
    pub sm: CMat,
}

/// Ground <- excited jump operators of the D1 line.
///
/// `a0p = |+>_S <+|_P`, `a0m = |->_S <-|_P`, `ap = |->_S <+|_P`,
/// `am = |+>_S <-|_P`, each tensored with the nuclear identity.
#[derive(Debug, Clone)]
pub struct DipoleSet {
    pub a0p: LabeledOperator,
    pub a0m: LabeledOperator,
    pub ap: LabeledOperator,
    pub am: LabeledOperator,
}

impl DipoleSet {
    pub fn all(&self) -> [&LabeledOperator; 4] {
        [&self.a0p, &self.a0m, &self.ap, &self.am]
    }
}

fn factorial(n: i32) -> f64 {
    debug_assert!(n >= 0);
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Clebsch-Gordan coefficient `<j1 m1; j2 m2 | J M>` with every argument
/// doubled. Racah's closed form, evaluated with integer bookkeeping.
pub fn clebsch_gordan(two_j1: i32, two_m1: i32, two_j2: i32, two_m2: i32, two_j: i32, two_mm: i32) -> f64 {
    if two_m1 + two_m2 != two_mm {
        return 0.0;
    }
    if two_m1.abs() > two_j1 || two_m2.abs() > two_j2 || two_mm.abs() > two_j {
        return 0.0;
    }
    if two_j < (two_j1 - two_j2).abs() || two_j > two_j1 + two_j2 {
        return 0.0;
    }
    if (two_j1 + two_j2 + two_j) % 2 != 0 || (two_j1 + two_m1) % 2 != 0 || (two_j2 + two_m2) % 2 != 0 {
        return 0.0;
    }
    let h = |x: i32| -> i32 {
        debug_assert!(x % 2 == 0);
        x / 2
    };
    let a = h(two_j1 + two_j2 - two_j);
    let b = h(two_j1 - two_m1);
    let c = h(two_j2 + two_m2);
    let d = h(two_j - two_j2 + two_m1);
    let e = h(two_j - two_j1 - two_m2);
    let pre = ((two_j + 1) as f64 * factorial(h(two_j + two_j1 - two_j2)) * factorial(h(two_j - two_j1 + two_j2))
        * factorial(a)
        / factorial(h(two_j1 + two_j2 + two_j) + 1))
    .sqrt()
        * (factorial(h(two_j + two_mm))
            * factorial(h(two_j - two_mm))
            * factorial(b)
            * factorial(h(two_j1 + two_m1))
            * factorial(h(two_j2 - two_m2))
            * factorial(c))
        .sqrt();
    let kmin = 0.max(-d).max(-e);
    let kmax = a.min(b).min(c);
    let mut sum = 0.0;
    for k in kmin..=kmax {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign
            / (factorial(k)
                * factorial(a - k)
                * factorial(b - k)
                * factorial(c - k)
                * factorial(d + k)
                * factorial(e + k));
    }
    pre * sum
}

/// Spin-j matrices `(J_x, J_y, J_z)` in the `m` ascending basis.
pub fn spin_matrices(two_j: u32) -> [CMat; 3] {
    let n = two_j as usize + 1;
    let j = two_j as f64 / 2.0;
    let mut jp = CMat::zeros((n, n));
    let mut jz = CMat::zeros((n, n));
    for k in 0..n {
        let m = -j + k as f64;
        jz[[k, k]] = C64::new(m, 0.0);
        if k + 1 < n {
            // <m+1|J_+|m>
            jp[[k + 1, k]] = C64::new((j * (j + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
        }
    }
    let jm = dagger(&jp);
    let jx = (&jp + &jm).mapv(|z| z * 0.5);
    let jy = (&jp - &jm).mapv(|z| z * C64::new(0.0, -0.5));
    [jx, jy, jz]
}

/// Orthogonal matrix taking uncoupled `|m_J, m_I>` amplitudes (index
/// `mj * (2I+1) + mi`, both ascending) to coupled `|F m>` amplitudes in the
/// sector ordering of [`build_basis`].
pub fn recoupling_matrix(two_i: u32) -> Array2<f64> {
    let ni = two_i as usize + 1;
    let n = 2 * ni;
    let mut u = Array2::<f64>::zeros((n, n));
    let mut row = 0;
    for two_f in [two_i as i32 + 1, two_i as i32 - 1] {
        for two_m in (-two_f..=two_f).step_by(2) {
            for (jx, two_mj) in [-1, 1].into_iter().enumerate() {
                for ix in 0..ni {
                    let two_mi = -(two_i as i32) + 2 * ix as i32;
                    u[[row, jx * ni + ix]] = clebsch_gordan(1, two_mj, two_i as i32, two_mi, two_f, two_m);
                }
            }
            row += 1;
        }
    }
    u
}

pub(crate) fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = CMat::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let x = a[[i, j]];
            if x == ZERO {
                continue;
            }
            out.slice_mut(s![i * br..(i + 1) * br, j * bc..(j + 1) * bc])
                .zip_mut_with(b, |o, &y| *o = x * y);
        }
    }
    out
}

pub(crate) fn eye(n: usize) -> CMat {
    CMat::from_diag_elem(n, ONE)
}

pub fn dagger(a: &CMat) -> CMat {
    a.t().mapv(|z| z.conj())
}

pub(crate) fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

pub(crate) fn real(a: &Array2<f64>) -> CMat {
    a.mapv(|x| C64::new(x, 0.0))
}

/// Carry a sector-local operator (uncoupled basis) into the full coupled basis
/// on both sectors.
fn both_sectors(u: &CMat, local: &CMat) -> CMat {
    let n = u.nrows();
    let block = u.dot(local).dot(&u.t());
    let mut full = CMat::zeros((2 * n, 2 * n));
    full.slice_mut(s![..n, ..n]).assign(&block);
    full.slice_mut(s![n.., n..]).assign(&block);
    full
}

/// Electron and nuclear spin operators in the coupled basis.
pub fn spin_operators(basis: &Arc<HyperfineBasis>) -> SpinOperatorSet {
    let two_i = basis.species().two_i;
    let ni = two_i as usize + 1;
    let u = real(&recoupling_matrix(two_i));
    let [ex, ey, ez] = spin_matrices(1);
    let [nx, ny, nz] = spin_matrices(two_i);
    let id_e = eye(2);
    let id_n = eye(ni);

    let lift = |m: CMat| LabeledOperator {
        basis: basis.clone(),
        matrix: m,
    };
    let elec = |op: &CMat| both_sectors(&u, &kron(op, &id_n));
    let nuc = |op: &CMat| both_sectors(&u, &kron(&id_e, op));

    let sx = elec(&ex);
    let sy = elec(&ey);
    let sz = elec(&ez);
    let sp = &sx + &sy.mapv(|z| z * C64::i());
    let sm = &sx - &sy.mapv(|z| z * C64::i());
    let ix = nuc(&nx);
    let iy = nuc(&ny);
    let iz = nuc(&nz);
    let fz = &sz + &iz;
    let fy = &sy + &iy;

    let n = basis.sector_dim();
    let excited_only = |m: &CMat| {
        let mut out = CMat::zeros(m.dim());
        out.slice_mut(s![n.., n..]).assign(&m.slice(s![n.., n..]));
        out
    };
    let jp = [
        lift(excited_only(&sx)),
        lift(excited_only(&sy)),
        lift(excited_only(&sz)),
    ];

    SpinOperatorSet {
        sx: lift(sx),
        sy: lift(sy),
        sz: lift(sz),
        sp: lift(sp),
        sm: lift(sm),
        ix: lift(ix),
        iy: lift(iy),
        iz: lift(iz),
        fz: lift(fz),
        fy: lift(fy),
        jp,
    }
}

/// The four ground <- excited jump operators.
pub fn dipole_jump_operators(basis: &Arc<HyperfineBasis>) -> DipoleSet {
    let two_i = basis.species().two_i;
    let ni = two_i as usize + 1;
    let n = basis.sector_dim();
    let u = real(&recoupling_matrix(two_i));
    let id_n = eye(ni);
    // fine-state index 0 = m_J -1/2 ("-"), 1 = +1/2 ("+")
    let jump = |to: usize, from: usize| {
        let mut e = CMat::zeros((2, 2));
        e[[to, from]] = ONE;
        let block = u.dot(&kron(&e, &id_n)).dot(&u.t());
        let mut full = CMat::zeros((2 * n, 2 * n));
        full.slice_mut(s![..n, n..]).assign(&block);
        LabeledOperator {
            basis: basis.clone(),
            matrix: full,
        }
    };
    DipoleSet {
        a0p: jump(1, 1),
        a0m: jump(0, 0),
        ap: jump(0, 1),
        am: jump(1, 0),
    }
}

/// `exp(-i angle G)` for a Hermitian generator `G`.
pub fn rotation(generator: &CMat, angle: f64) -> Result<CMat> {
    let (vals, vecs) = generator.eigh(UPLO::Upper)?;
    let phases = CMat::from_diag(&vals.mapv(|v| C64::from_polar(1.0, -angle * v)));
    Ok(vecs.dot(&phases).dot(&dagger(&vecs)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rb85() -> Arc<HyperfineBasis> {
        build_basis(&AlkaliSpecies::rb85()).unwrap()
    }

    #[test]
    fn basis_dimensions() {
        let b = rb85();
        assert_eq!(b.dim(), 24);
        let ground_a = b
            .labels()
            .iter()
            .filter(|l| l.sector == Sector::S && l.manifold == Manifold::A)
            .count();
        let ground_b = b
            .labels()
            .iter()
            .filter(|l| l.sector == Sector::S && l.manifold == Manifold::B)
            .count();
        assert_eq!((ground_a, ground_b), (7, 5));
        assert_eq!(b.index_of(&Label::new(Sector::S, Manifold::A, -6)), Some(0));
        assert_eq!(build_basis(&AlkaliSpecies::rb87()).unwrap().dim(), 16);
    }

    #[test]
    fn index_map_is_bijective() {
        let b = build_basis(&AlkaliSpecies::cs133()).unwrap();
        for (i, l) in b.labels().iter().enumerate() {
            assert_eq!(b.index_of(l), Some(i));
        }
    }

    #[test]
    fn invalid_species_rejected() {
        let mut sp = AlkaliSpecies::rb85();
        sp.two_i = 9;
        assert!(build_basis(&sp).is_err());
        let mut sp = AlkaliSpecies::rb85();
        sp.delta_p_hz = 2.0 * sp.delta_s_hz;
        assert!(sp.validate().is_err());
    }

    #[test]
    fn clebsch_gordan_known_values() {
        // <1/2 1/2; 1/2 -1/2 | 1 0> = 1/sqrt2, <1/2 1/2; 1/2 -1/2 | 0 0> = 1/sqrt2
        assert_abs_diff_eq!(clebsch_gordan(1, 1, 1, -1, 2, 0), 0.5f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(clebsch_gordan(1, 1, 1, -1, 0, 0), 0.5f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(clebsch_gordan(1, -1, 1, 1, 0, 0), -(0.5f64.sqrt()), epsilon = 1e-14);
        // stretched
        assert_abs_diff_eq!(clebsch_gordan(1, 1, 5, 5, 6, 6), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn recoupling_is_orthogonal() {
        for two_i in [1, 2, 3, 5, 7] {
            let u = recoupling_matrix(two_i);
            let prod = u.dot(&u.t());
            let id = Array2::<f64>::eye(u.nrows());
            let err = (&prod - &id).iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(err < 1e-12, "I = {two_i}/2: {err}");
        }
    }

    #[test]
    fn fz_diagonal_with_eigenvalue_m() {
        let b = rb85();
        let ops = spin_operators(&b);
        for (i, l) in b.labels().iter().enumerate() {
            assert_abs_diff_eq!(ops.fz.matrix()[[i, i]].re, l.m(), epsilon = 1e-12);
        }
        let off = &ops.fz.matrix().clone() - &CMat::from_diag(&ops.fz.matrix().diag().to_owned());
        assert!(max_abs(&off) < 1e-12);
    }

    #[test]
    fn su2_algebra_and_casimir() {
        let b = rb85();
        let ops = spin_operators(&b);
        let sx = ops.sx.matrix();
        let sy = ops.sy.matrix();
        let sz = ops.sz.matrix();
        let comm = sx.dot(sy) - sy.dot(sx) - sz.mapv(|z| z * C64::i());
        assert!(max_abs(&comm) < 1e-12);
        let s2 = sx.dot(sx) + sy.dot(sy) + sz.dot(sz);
        assert!(max_abs(&(s2 - eye(24).mapv(|z| z * 0.75))) < 1e-12);
        let tr: C64 = sz.diag().sum();
        assert!(tr.norm() < 1e-12);
        assert!(max_abs(&(ops.sp.matrix() - &dagger(ops.sm.matrix()))) < 1e-14);
        for op in [&ops.sx, &ops.sy, &ops.sz, &ops.ix, &ops.iy, &ops.iz, &ops.fz] {
            assert!(op.is_hermitian());
        }
    }

    #[test]
    fn stretched_state_is_pure_spin_up() {
        let b = rb85();
        let ops = spin_operators(&b);
        let k = b.index_of(&Label::new(Sector::S, Manifold::A, 6)).unwrap();
        assert_abs_diff_eq!(ops.sz.matrix()[[k, k]].re, 0.5, epsilon = 1e-14);
    }

    #[test]
    fn jump_operators_are_sector_off_diagonal() {
        let b = rb85();
        let d = dipole_jump_operators(&b);
        let n = b.sector_dim();
        let mut sum = CMat::zeros((2 * n, 2 * n));
        for a in d.all() {
            let m = a.matrix();
            assert!(max_abs(&m.slice(s![..n, ..n]).to_owned()) == 0.0);
            assert!(max_abs(&m.slice(s![n.., n..]).to_owned()) == 0.0);
            assert!(max_abs(&m.slice(s![n.., ..n]).to_owned()) == 0.0);
            sum = sum + dagger(m).dot(m);
        }
        // Each excited fine state is reached by two channels.
        let mut expect = CMat::zeros((2 * n, 2 * n));
        for i in n..2 * n {
            expect[[i, i]] = C64::new(2.0, 0.0);
        }
        assert!(max_abs(&(sum - expect)) < 1e-12);
    }

    #[test]
    fn rotation_by_pi_about_y_flips_m() {
        let b = rb85();
        let ops = spin_operators(&b);
        let r = rotation(ops.fy.matrix(), std::f64::consts::PI).unwrap();
        for (i, l) in b.labels().iter().enumerate() {
            let j = b
                .index_of(&Label::new(l.sector, l.manifold, -l.two_m))
                .unwrap();
            let two_f = b.species().two_f(l.manifold);
            let sign = if ((two_f - l.two_m) / 2) % 2 == 0 { 1.0 } else { -1.0 };
            assert_abs_diff_eq!(r[[j, i]].re, sign, epsilon = 1e-10);
            assert_abs_diff_eq!(r[[j, i]].im, 0.0, epsilon = 1e-10);
        }
    }
}
