//! `--sweep key=start:stop:step` axes and their expansion into run points.

use std::str::FromStr;

use anyhow::{anyhow, bail, Result};
use headerr::constants::hz_to_rad;
use headerr::model::{Helicity, PumpConfig, SimulationConfig};
use headerr::response::Geometry;

use crate::config::{check_theta_grid, expand_range, parse_quantity, RunConfig, Unit};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Theta,
    Detuning,
    B0,
    Ba,
    PumpPower,
    Helicity,
    Geometry,
}

impl Axis {
    pub const ALL: [Axis; 7] = [
        Axis::Theta,
        Axis::Detuning,
        Axis::B0,
        Axis::Ba,
        Axis::PumpPower,
        Axis::Helicity,
        Axis::Geometry,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Axis::Theta => "theta",
            Axis::Detuning => "detuning",
            Axis::B0 => "B0",
            Axis::Ba => "Ba",
            Axis::PumpPower => "pump_power",
            Axis::Helicity => "helicity",
            Axis::Geometry => "geometry",
        }
    }

    /// Output column for numeric axes other than the tilt.
    pub fn column(self) -> Option<(&'static str, &'static str)> {
        match self {
            Axis::Detuning => Some(("detuning_hz", "Hz")),
            Axis::B0 => Some(("B0_T", "T")),
            Axis::Ba => Some(("Ba_T", "T")),
            Axis::PumpPower => Some(("pump_power_W", "W")),
            _ => None,
        }
    }

    fn unit(self) -> Option<Unit> {
        match self {
            Axis::Detuning => Some(Unit::Frequency),
            Axis::B0 | Axis::Ba => Some(Unit::Field),
            Axis::PumpPower => Some(Unit::Power),
            _ => None,
        }
    }
}

impl FromStr for Axis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL.into_iter().find(|a| a.key() == s).ok_or_else(|| {
            let keys: Vec<&str> = Axis::ALL.iter().map(|a| a.key()).collect();
            anyhow!("unknown sweep axis {s:?}; expected one of {}", keys.join(", "))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Values {
    /// SI units; degrees for the tilt.
    Numbers(Vec<f64>),
    Helicities(Vec<Helicity>),
    Geometries(Vec<Geometry>),
}

impl Values {
    pub fn len(&self) -> usize {
        match self {
            Values::Numbers(v) => v.len(),
            Values::Helicities(v) => v.len(),
            Values::Geometries(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub axis: Axis,
    pub values: Values,
    /// The text as given, for the manifest.
    pub spec: String,
}

fn parse_list<T>(key: &str, text: &str, f: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| f(s.trim()).ok_or_else(|| anyhow!("{key}: cannot read {s:?}")))
        .collect()
}

impl FromStr for Sweep {
    type Err = anyhow::Error;

    /// `key=start:stop:step` for numeric axes, `key=a,b,...` for any axis.
    fn from_str(s: &str) -> Result<Self> {
        let (key, rest) = s.split_once('=').ok_or_else(|| anyhow!("sweep {s:?}: expected key=values"))?;
        let axis: Axis = key.trim().parse()?;
        let rest = rest.trim();
        let values = match axis {
            Axis::Helicity => Values::Helicities(parse_list(key, rest, |v| match v {
                "plus" | "+" | "sigma+" => Some(Helicity::Plus),
                "minus" | "-" | "sigma-" => Some(Helicity::Minus),
                _ => None,
            })?),
            Axis::Geometry => Values::Geometries(parse_list(key, rest, |v| match v {
                "parallel" => Some(Geometry::Parallel),
                "perpendicular" => Some(Geometry::Perpendicular),
                _ => None,
            })?),
            _ if rest.contains(':') => Values::Numbers(expand_range(axis.key(), rest, axis.unit())?),
            _ => Values::Numbers(parse_list(key, rest, |v| match axis.unit() {
                Some(u) => parse_quantity(v, u).ok(),
                None => v.parse().ok(),
            })?),
        };
        if let (Axis::Theta, Values::Numbers(t)) = (axis, &values) {
            check_theta_grid("sweep theta", t)?;
        }
        Ok(Sweep {
            axis,
            values,
            spec: s.to_string(),
        })
    }
}

/// Reject sweeps over the same axis twice.
pub fn check_unique(sweeps: &[Sweep]) -> Result<()> {
    for (i, a) in sweeps.iter().enumerate() {
        if sweeps[..i].iter().any(|b| b.axis == a.axis) {
            bail!("axis {} is swept twice", a.axis.key());
        }
    }
    Ok(())
}

/// One configuration to run, with the swept values that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub sim: SimulationConfig,
    /// Numeric axis values in SI units, in sweep order.
    pub axes: Vec<f64>,
}

/// The swept axes that become columns of their own, in sweep order.
pub fn point_axes(sweeps: &[Sweep]) -> Vec<Axis> {
    sweeps.iter().map(|s| s.axis).filter(|a| a.column().is_some()).collect()
}

/// Cartesian product of the numeric and helicity axes, first axis slowest.
/// The tilt and geometry axes are handled by the commands.
pub fn expand_points(run: &RunConfig, sweeps: &[Sweep]) -> Result<Vec<Point>> {
    let mut points = vec![Point {
        sim: run.sim.clone(),
        axes: Vec::new(),
    }];
    for s in sweeps {
        let mut next = Vec::new();
        for p in &points {
            match &s.values {
                Values::Numbers(v) if s.axis.column().is_some() => {
                    for &x in v {
                        let mut q = p.clone();
                        apply(run, &mut q.sim, s.axis, x)?;
                        q.axes.push(x);
                        next.push(q);
                    }
                }
                Values::Helicities(v) => {
                    for &h in v {
                        next.push(Point {
                            sim: p.sim.with_helicity(h),
                            axes: p.axes.clone(),
                        });
                    }
                }
                _ => next.push(p.clone()),
            }
        }
        points = next;
    }
    Ok(points)
}

fn apply(run: &RunConfig, sim: &mut SimulationConfig, axis: Axis, x: f64) -> Result<()> {
    match axis {
        Axis::Detuning => sim.pump.detuning = hz_to_rad(x),
        Axis::B0 => sim.field.b0 = x,
        Axis::Ba => sim.field.ba = x,
        Axis::PumpPower => {
            if run.pump_power.is_none() {
                bail!("pump_power can only be swept when the pump is given by power, not rabi");
            }
            sim.pump.rabi = PumpConfig::rabi_from_power(&sim.species, x, run.beam_diameter);
        }
        _ => unreachable!("not a point axis"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_config_str, BUNDLED};

    #[test]
    fn parses_axes() {
        let s: Sweep = "detuning=-2GHz:2GHz:1GHz".parse().unwrap();
        assert_eq!(s.values, Values::Numbers(vec![-2e9, -1e9, 0.0, 1e9, 2e9]));
        let s: Sweep = "helicity=plus,minus".parse().unwrap();
        assert_eq!(s.values.len(), 2);
        let s: Sweep = "B0=10uT,55uT".parse().unwrap();
        assert_eq!(s.values, Values::Numbers(vec![10e-6, 55e-6]));
        assert!("theta=-10:10:5".parse::<Sweep>().is_err());
        assert!("gamma=1:2:1".parse::<Sweep>().is_err());
    }

    #[test]
    fn product_order() {
        let run = parse_config_str(BUNDLED).unwrap();
        let sweeps: Vec<Sweep> = ["B0=10uT,20uT", "helicity=plus,minus", "Ba=0:2nT:1nT"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect();
        let pts = expand_points(&run, &sweeps).unwrap();
        assert_eq!(pts.len(), 12);
        assert_eq!(pts[0].axes, vec![10e-6, 0.0]);
        assert_eq!(pts[3].sim.pump.helicity, Helicity::Minus);
        assert_eq!(pts[11].axes, vec![20e-6, 2e-9]);
        assert_eq!(point_axes(&sweeps), vec![Axis::B0, Axis::Ba]);
    }
}
