//! Physical constants (CODATA 2018) and unit helpers.
//!
//! Energies are carried as angular frequencies (rad/s) everywhere inside the
//! library; only I/O converts to ordinary frequency.

use std::f64::consts::PI;

/// Bohr magneton over Planck's constant, Hz/T.
pub const MU_B_HZ_PER_T: f64 = 13.996_244_936e9;
/// Nuclear magneton over Planck's constant, Hz/T.
pub const MU_N_HZ_PER_T: f64 = 7.622_593_229_1e6;

pub const BOLTZMANN: f64 = 1.380_649e-23;
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
pub const HBAR: f64 = 1.054_571_817e-34;
pub const PLANCK: f64 = 6.626_070_15e-34;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
pub const BOHR_RADIUS: f64 = 5.291_772_109_03e-11;
pub const TORR: f64 = 133.322_368_421;
/// Loschmidt number (one amagat), m^-3.
pub const AMAGAT: f64 = 2.686_780_111e25;

/// Bohr magneton in rad s^-1 T^-1.
pub const MU_B: f64 = 2.0 * PI * MU_B_HZ_PER_T;
/// Nuclear magneton in rad s^-1 T^-1.
pub const MU_N: f64 = 2.0 * PI * MU_N_HZ_PER_T;

#[inline]
pub fn hz_to_rad(f: f64) -> f64 {
    2.0 * PI * f
}

#[inline]
pub fn rad_to_hz(w: f64) -> f64 {
    w / (2.0 * PI)
}
