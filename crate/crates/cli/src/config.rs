//! TOML run configuration.
//!
//! Physical quantities are either a bare number in SI units or a string with
//! a unit suffix, e.g. `B0 = "55 uT"` or `power = "50 uW"`. Angles are in
//! degrees. Detunings are in Hz (or kHz, MHz, GHz) and converted to rad/s.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use headerr::analysis::Pairing;
use headerr::constants::hz_to_rad;
use headerr::model::{
    CellConditions, DriveForm, EffectToggles, FieldConfig, Helicity, Numerics, PumpConfig, RateConfig, SimulationConfig,
    ZeemanMode, DEFAULT_BEAM_DIAMETER, DEFAULT_PUMP_POWER,
};
use headerr::response::Geometry;
use headerr::spin::AlkaliSpecies;
use serde::Deserialize;

/// Name of the configuration shipped with the binary.
pub const BUNDLED_NAME: &str = "rb85_55uT";
pub const BUNDLED: &str = include_str!("../configs/rb85_55uT.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Field,
    Power,
    Length,
    Frequency,
}

impl Unit {
    /// Decimal exponent of a suffix.
    fn exponent(self, suffix: &str) -> Option<i32> {
        let e = match (self, suffix) {
            (_, "") => 0,
            (Unit::Field, "T") => 0,
            (Unit::Field, "mT") => -3,
            (Unit::Field, "uT" | "µT" | "μT") => -6,
            (Unit::Field, "nT") => -9,
            (Unit::Field, "pT") => -12,
            (Unit::Power, "W") => 0,
            (Unit::Power, "mW") => -3,
            (Unit::Power, "uW" | "µW" | "μW") => -6,
            (Unit::Power, "nW") => -9,
            (Unit::Length, "m") => 0,
            (Unit::Length, "cm") => -2,
            (Unit::Length, "mm") => -3,
            (Unit::Length, "um" | "µm" | "μm") => -6,
            (Unit::Frequency, "Hz") => 0,
            (Unit::Frequency, "kHz") => 3,
            (Unit::Frequency, "MHz") => 6,
            (Unit::Frequency, "GHz") => 9,
            _ => return None,
        };
        Some(e)
    }
}

/// Parse `"55 uT"`, `"55uT"` or `"5.5e-5"` into SI units.
pub fn parse_quantity(text: &str, unit: Unit) -> Result<f64> {
    let t = text.trim();
    // longest prefix that reads as a number; the rest is the unit
    let (value, suffix) = (1..=t.len())
        .rev()
        .filter(|&i| t.is_char_boundary(i))
        .find_map(|i| t[..i].trim().parse::<f64>().ok().map(|v| (v, t[i..].trim())))
        .ok_or_else(|| anyhow!("not a number: {text:?}"))?;
    if !value.is_finite() {
        bail!("not a finite number: {text:?}");
    }
    let e = unit
        .exponent(suffix)
        .ok_or_else(|| anyhow!("unknown unit {suffix:?} in {text:?}"))?;
    // dividing by an exact power of ten keeps "55 uT" == 55e-6
    let p = 10f64.powi(e.abs());
    Ok(if e < 0 { value / p } else { value * p })
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Quantity {
    Number(f64),
    Text(String),
}

impl Quantity {
    pub fn si(&self, key: &str, unit: Unit) -> Result<f64> {
        match self {
            Quantity::Number(v) => Ok(*v),
            Quantity::Text(s) => parse_quantity(s, unit).with_context(|| format!("key {key}")),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum AngleGrid {
    List(Vec<f64>),
    Range(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    species: String,
    field: RawField,
    #[serde(default)]
    pump: RawPump,
    #[serde(default)]
    cell: RawCell,
    #[serde(default)]
    rates: RawRates,
    #[serde(default)]
    model: RawModel,
    #[serde(default)]
    numerics: RawNumerics,
    #[serde(default)]
    grid: RawGrid,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawField {
    #[serde(rename = "B0")]
    b0: Quantity,
    #[serde(rename = "B1")]
    b1: Option<Quantity>,
    #[serde(rename = "Ba")]
    ba: Option<Quantity>,
    theta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPump {
    power: Option<Quantity>,
    beam_diameter: Option<Quantity>,
    /// rad/s, instead of power
    rabi: Option<f64>,
    detuning: Option<Quantity>,
    helicity: Option<Helicity>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCell {
    temperature_c: Option<f64>,
    buffer_torr: Option<f64>,
    length: Option<Quantity>,
}

/// Overrides of the cell-derived rates, s^-1.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRates {
    gamma_mix: Option<f64>,
    gamma_q: Option<f64>,
    gamma_sd: Option<f64>,
    gamma_se: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    zeeman: Option<ZeemanMode>,
    nlz: Option<bool>,
    nuz: Option<bool>,
    ls: Option<bool>,
    drive_form: Option<DriveForm>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNumerics {
    root_tol_hz: Option<f64>,
    scan_points: Option<usize>,
    damping: Option<f64>,
    steady_tol: Option<f64>,
    max_iter: Option<usize>,
    full_steady_state: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    theta: Option<AngleGrid>,
    geometry: Option<Vec<Geometry>>,
    pairing: Option<Vec<Pairing>>,
    #[serde(rename = "Ba")]
    ba: Option<Vec<Quantity>>,
}

/// A validated configuration plus the run-level choices around it.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sim: SimulationConfig,
    /// Set when the pump strength came from a power; needed to sweep it.
    pub pump_power: Option<f64>,
    pub beam_diameter: f64,
    /// Degrees, ascending.
    pub theta_deg: Vec<f64>,
    pub geometries: Vec<Geometry>,
    pub pairings: Vec<Pairing>,
    /// Auxiliary fields for `auxfield`, tesla.
    pub ba_list: Vec<f64>,
}

/// Default auxiliary fields, nT.
const DEFAULT_BA_NT: [f64; 6] = [4.0, 8.0, 12.0, 16.0, 24.0, 32.0];

pub fn check_theta_deg(key: &str, theta: f64) -> Result<()> {
    if !(0.0..=90.0).contains(&theta) {
        bail!("{key} = {theta} violates 0 <= theta <= 90 deg (negative tilts follow from parity)");
    }
    Ok(())
}

/// Expand `start:stop:step`, inclusive of `stop` up to rounding. A stop
/// below the start gives an empty list.
pub fn expand_range(key: &str, spec: &str, unit: Option<Unit>) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        bail!("{key}: expected start:stop:step, got {spec:?}");
    }
    let num = |s: &str| match unit {
        Some(u) => parse_quantity(s, u),
        None => s.trim().parse::<f64>().map_err(|_| anyhow!("not a number: {s:?}")),
    };
    let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
    if !(step > 0.0) {
        bail!("{key}: step must be positive, got {step}");
    }
    if stop < start {
        return Ok(Vec::new());
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    if n > 100_000 {
        bail!("{key}: {n} points exceed the limit of 100000");
    }
    Ok((0..n).map(|k| start + k as f64 * step).collect())
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text)?;
    let species = AlkaliSpecies::by_name(&raw.species)
        .ok_or_else(|| anyhow!("species = {:?} is not one of rb85, rb87, cs133", raw.species))?;

    let b0 = raw.field.b0.si("field.B0", Unit::Field)?;
    let b1 = match &raw.field.b1 {
        Some(q) => q.si("field.B1", Unit::Field)?,
        None => 1e-4 * b0,
    };
    let ba = match &raw.field.ba {
        Some(q) => q.si("field.Ba", Unit::Field)?,
        None => 0.0,
    };
    let theta = raw.field.theta.unwrap_or(0.0);
    check_theta_deg("field.theta", theta)?;

    let beam_diameter = match &raw.pump.beam_diameter {
        Some(q) => q.si("pump.beam_diameter", Unit::Length)?,
        None => DEFAULT_BEAM_DIAMETER,
    };
    if !(beam_diameter > 0.0) {
        bail!("pump.beam_diameter = {beam_diameter} violates beam_diameter > 0");
    }
    let (rabi, pump_power) = match (&raw.pump.power, raw.pump.rabi) {
        (Some(_), Some(_)) => bail!("pump.power and pump.rabi are mutually exclusive"),
        (None, Some(r)) => (r, None),
        (p, None) => {
            let p = match p {
                Some(q) => q.si("pump.power", Unit::Power)?,
                None => DEFAULT_PUMP_POWER,
            };
            if !(p > 0.0) {
                bail!("pump.power = {p} violates power > 0");
            }
            (PumpConfig::rabi_from_power(&species, p, beam_diameter), Some(p))
        }
    };
    let detuning = match &raw.pump.detuning {
        Some(q) => hz_to_rad(q.si("pump.detuning", Unit::Frequency)?),
        None => 0.0,
    };

    let defaults = CellConditions::default();
    let cell = CellConditions {
        temperature_c: raw.cell.temperature_c.unwrap_or(defaults.temperature_c),
        buffer_torr: raw.cell.buffer_torr.unwrap_or(defaults.buffer_torr),
        length_m: match &raw.cell.length {
            Some(q) => q.si("cell.length", Unit::Length)?,
            None => defaults.length_m,
        },
    };
    if !(cell.buffer_torr > 0.0 && cell.length_m > 0.0 && cell.temperature_c > -273.15) {
        bail!("cell: need buffer_torr > 0, length > 0 and temperature_c > -273.15");
    }
    let mut rates = RateConfig::from_cell(&species, &cell);
    rates.gamma_mix = raw.rates.gamma_mix.unwrap_or(rates.gamma_mix);
    rates.gamma_q = raw.rates.gamma_q.unwrap_or(rates.gamma_q);
    rates.gamma_sd = raw.rates.gamma_sd.unwrap_or(rates.gamma_sd);
    rates.gamma_se = raw.rates.gamma_se.unwrap_or(rates.gamma_se);

    let nd = Numerics::default();
    let n = &raw.numerics;
    let numerics = Numerics {
        root_tol_hz: n.root_tol_hz.unwrap_or(nd.root_tol_hz),
        scan_points: n.scan_points.unwrap_or(nd.scan_points),
        damping: n.damping.unwrap_or(nd.damping),
        steady_tol: n.steady_tol.unwrap_or(nd.steady_tol),
        max_iter: n.max_iter.unwrap_or(nd.max_iter),
        full_steady_state: n.full_steady_state.unwrap_or(nd.full_steady_state),
        drive_form: raw.model.drive_form.unwrap_or(nd.drive_form),
    };
    let all = EffectToggles::ALL;
    let sim = SimulationConfig {
        species,
        field: FieldConfig {
            b0,
            b1,
            ba,
            theta: theta.to_radians(),
        },
        pump: PumpConfig {
            rabi,
            detuning,
            helicity: raw.pump.helicity.unwrap_or(Helicity::Plus),
        },
        rates,
        toggles: EffectToggles {
            nlz: raw.model.nlz.unwrap_or(all.nlz),
            nuz: raw.model.nuz.unwrap_or(all.nuz),
            ls: raw.model.ls.unwrap_or(all.ls),
        },
        zeeman: raw.model.zeeman.unwrap_or(ZeemanMode::Perturbative),
        numerics,
    };
    sim.validate().map_err(|e| anyhow!("{e}"))?;

    let theta_deg = match &raw.grid.theta {
        None => (0..=16).map(|k| 5.0 * k as f64).collect(),
        Some(AngleGrid::List(v)) => v.clone(),
        Some(AngleGrid::Range(s)) => expand_range("grid.theta", s, None)?,
    };
    check_theta_grid("grid.theta", &theta_deg)?;

    let ba_list = match &raw.grid.ba {
        None => DEFAULT_BA_NT.iter().map(|b| b / 1e9).collect(),
        Some(v) => v.iter().map(|q| q.si("grid.Ba", Unit::Field)).collect::<Result<Vec<f64>>>()?,
    };

    Ok(RunConfig {
        sim,
        pump_power,
        beam_diameter,
        theta_deg,
        geometries: nonempty("grid.geometry", raw.grid.geometry, vec![Geometry::Parallel, Geometry::Perpendicular])?,
        pairings: nonempty("grid.pairing", raw.grid.pairing, vec![Pairing::SameProbe, Pairing::OrthogonalProbe])?,
        ba_list,
    })
}

pub fn check_theta_grid(key: &str, grid: &[f64]) -> Result<()> {
    for &t in grid {
        check_theta_deg(key, t)?;
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        bail!("{key} must be strictly increasing");
    }
    Ok(())
}

fn nonempty<T>(key: &str, v: Option<Vec<T>>, default: Vec<T>) -> Result<Vec<T>> {
    match v {
        None => Ok(default),
        Some(v) if v.is_empty() => bail!("{key} must not be empty"),
        Some(v) => Ok(v),
    }
}

/// Read a configuration file. The bundled name resolves to the shipped
/// configuration when no such file exists.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(_) if !path.exists() && path.file_stem().is_some_and(|s| s == BUNDLED_NAME) => BUNDLED.to_string(),
        Err(e) => return Err(e).with_context(|| format!("reading {}", path.display())),
    };
    parse_config_str(&text).with_context(|| format!("in {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantities() {
        assert_eq!(parse_quantity("55 uT", Unit::Field).unwrap(), 55e-6);
        assert_eq!(parse_quantity("5.5e-5", Unit::Field).unwrap(), 5.5e-5);
        assert_eq!(parse_quantity("2e3nT", Unit::Field).unwrap(), 2e-6);
        assert_eq!(parse_quantity("-2 GHz", Unit::Frequency).unwrap(), -2e9);
        assert!(parse_quantity("3 furlongs", Unit::Length).is_err());
        assert!(parse_quantity("5 uW", Unit::Field).is_err());
    }

    #[test]
    fn ranges_are_inclusive() {
        assert_eq!(expand_range("t", "0:80:5", None).unwrap().len(), 17);
        assert_eq!(expand_range("t", "0:1:0.1", None).unwrap().len(), 11);
        assert!(expand_range("t", "5:0:1", None).unwrap().is_empty());
        assert!(expand_range("t", "0:1:0", None).is_err());
        assert_eq!(expand_range("b", "1uT:3uT:1uT", Some(Unit::Field)).unwrap()[2], 3e-6);
    }

    #[test]
    fn bundled_matches_the_library_default() {
        let rc = parse_config_str(BUNDLED).unwrap();
        let d = SimulationConfig::rb85_default();
        assert_eq!(rc.sim.field, d.field);
        assert_eq!(rc.sim.pump, d.pump);
        assert_eq!(rc.sim.rates, d.rates);
        assert_eq!(rc.theta_deg.len(), 17);
    }
}
