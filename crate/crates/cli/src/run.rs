//! Subcommands: expand the sweep into independent jobs, run them on the
//! worker pool and collect rows in grid order.

use anyhow::{bail, Result};
use clap::ValueEnum;
use headerr::analysis::{
    auxiliary_field_curve, dual_helicity_average, effect_decomposition, fingerprint, flattening_angle,
    flattening_threshold, heading_error_curve, Pairing,
};
use headerr::model::{Helicity, SimulationConfig};
use headerr::response::Geometry;
use headerr::validation::run_suite;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::output::{Cell, Column, Table};
use crate::sweep::{expand_points, point_axes, Axis, Point, Sweep, Values};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Heading,
    Decompose,
    Dual,
    Auxfield,
    Validate,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Heading => "heading",
            Command::Decompose => "decompose",
            Command::Dual => "dual",
            Command::Auxfield => "auxfield",
            Command::Validate => "validate",
        }
    }

    fn allows(self, axis: Axis) -> bool {
        match self {
            Command::Heading => true,
            Command::Decompose => axis != Axis::Helicity,
            Command::Dual => !matches!(axis, Axis::Helicity | Axis::Geometry),
            Command::Auxfield => true,
            Command::Validate => false,
        }
    }
}

/// Hash of everything that determines the output table.
pub fn run_fingerprint(cmd: Command, run: &RunConfig, sweeps: &[Sweep]) -> String {
    let mut h = Sha256::new();
    h.update(fingerprint(&run.sim));
    h.update(cmd.as_str());
    h.update(format!(
        "{:?}{:?}{:?}{:?}{:?}{:?}",
        run.theta_deg, run.geometries, run.pairings, run.ba_list, run.pump_power, run.beam_diameter
    ));
    for s in sweeps {
        h.update(&s.spec);
    }
    hex::encode(&h.finalize()[..8])
}

fn pairing_name(p: Pairing) -> &'static str {
    match p {
        Pairing::SameProbe => "same_probe",
        Pairing::OrthogonalProbe => "orthogonal_probe",
    }
}

/// Column layout: the fixed leading columns, the numeric sweep axes, the
/// command's own columns and finally the failure message.
struct Layout {
    axes: Vec<Axis>,
    extras: Vec<Column>,
}

impl Layout {
    fn table(&self) -> Table {
        let mut cols = vec![
            Column::new("theta_deg", Some("deg")),
            Column::new("omega0_hz", Some("Hz")),
            Column::new("heading_error_hz", Some("Hz")),
            Column::new("geometry", None),
            Column::new("helicity", None),
        ];
        cols.extend(self.axes.iter().map(|a| {
            let (name, unit) = a.column().expect("numeric axis");
            Column::new(name, Some(unit))
        }));
        cols.extend(self.extras.iter().cloned());
        cols.push(Column::new("failure", None));
        Table::new(cols)
    }
}

/// One output row before the axis values are attached.
struct Row {
    theta: Option<f64>,
    omega0: Option<f64>,
    heading_error: Option<f64>,
    geometry: String,
    helicity: String,
    extras: Vec<Cell>,
    failure: String,
}

impl Row {
    fn failed(geometry: &str, helicity: &str, extras: Vec<Cell>, err: impl std::fmt::Display) -> Row {
        Row {
            theta: None,
            omega0: None,
            heading_error: None,
            geometry: geometry.into(),
            helicity: helicity.into(),
            extras,
            failure: format!("{err}"),
        }
    }

    fn cells(self, axes: &[f64]) -> Vec<Cell> {
        let mut v = vec![
            Cell::opt(self.theta),
            Cell::opt(self.omega0),
            Cell::opt(self.heading_error),
            Cell::Text(self.geometry),
            Cell::Text(self.helicity),
        ];
        v.extend(axes.iter().map(|&x| Cell::Num(x)));
        v.extend(self.extras);
        v.push(Cell::Text(self.failure));
        v
    }
}

fn theta_grid(run: &RunConfig, sweeps: &[Sweep]) -> Vec<f64> {
    sweeps
        .iter()
        .find_map(|s| match (&s.axis, &s.values) {
            (Axis::Theta, Values::Numbers(v)) => Some(v.clone()),
            _ => None,
        })
        .unwrap_or_else(|| run.theta_deg.clone())
}

fn geometries(run: &RunConfig, sweeps: &[Sweep]) -> Vec<Geometry> {
    sweeps
        .iter()
        .find_map(|s| match &s.values {
            Values::Geometries(g) => Some(g.clone()),
            _ => None,
        })
        .unwrap_or_else(|| run.geometries.clone())
}

/// Run jobs in parallel; rows come back in job order.
fn collect<J: Sync>(points: &[Point], jobs: &[J], per: usize, f: impl Fn(&SimulationConfig, &J) -> Vec<Row> + Sync) -> Vec<Vec<Cell>> {
    let work: Vec<(usize, usize)> = (0..points.len()).flat_map(|p| (0..per).map(move |j| (p, j))).collect();
    work.par_iter()
        .map(|&(p, j)| {
            f(&points[p].sim, &jobs[j])
                .into_iter()
                .map(|r| r.cells(&points[p].axes))
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

pub fn execute(cmd: Command, run: &RunConfig, sweeps: &[Sweep]) -> Result<Table> {
    for s in sweeps {
        if !cmd.allows(s.axis) {
            bail!("{} cannot sweep {}", cmd.as_str(), s.axis.key());
        }
    }
    crate::sweep::check_unique(sweeps)?;
    if cmd == Command::Validate {
        return Ok(validate(&run.sim));
    }

    // for auxfield the auxiliary field is the curve family, not a point axis
    let (ba_list, point_sweeps): (Vec<f64>, Vec<Sweep>) = if cmd == Command::Auxfield {
        let ba = sweeps.iter().find_map(|s| match (&s.axis, &s.values) {
            (Axis::Ba, Values::Numbers(v)) => Some(v.clone()),
            _ => None,
        });
        (
            ba.unwrap_or_else(|| run.ba_list.clone()),
            sweeps.iter().filter(|s| s.axis != Axis::Ba).cloned().collect(),
        )
    } else {
        (run.ba_list.clone(), sweeps.to_vec())
    };

    let grid_deg = theta_grid(run, sweeps);
    let points = if grid_deg.is_empty() {
        Vec::new()
    } else {
        expand_points(run, &point_sweeps)?
    };
    let grid: Vec<f64> = grid_deg.iter().map(|t| t.to_radians()).collect();
    let axes = point_axes(&point_sweeps);
    let geoms = geometries(run, sweeps);

    let (layout, rows) = match cmd {
        Command::Heading => (
            Layout { axes, extras: vec![] },
            collect(&points, &geoms, geoms.len(), |sim, &g| heading(sim, &grid, g)),
        ),
        Command::Decompose => {
            let extras = ["nlz_hz", "ls_hz", "nuz_hz", "total_hz"]
                .iter()
                .map(|n| Column::new(n, Some("Hz")))
                .collect();
            // the heading error needs the zero-tilt reference on the grid
            let mut g = grid.clone();
            if g.first().is_some_and(|t| *t > 0.0) {
                g.insert(0, 0.0);
            }
            (
                Layout { axes, extras },
                collect(&points, &geoms, geoms.len(), |sim, &geo| decompose(sim, &g, geo)),
            )
        }
        Command::Dual => (
            Layout {
                axes,
                extras: vec![Column::new("pairing", None), Column::new("kind", None)],
            },
            collect(&points, &run.pairings, run.pairings.len(), |sim, &p| dual(sim, &grid, p)),
        ),
        Command::Auxfield => (
            Layout {
                axes,
                extras: vec![
                    Column::new("kind", None),
                    Column::new("Ba_T", Some("T")),
                    Column::new("theta0_deg", Some("deg")),
                    Column::new("max_deviation_hz", Some("Hz")),
                    Column::new("threshold_T", Some("T")),
                ],
            },
            collect(&points, &geoms, geoms.len(), |sim, &g| auxfield(sim, &ba_list, &grid, g)),
        ),
        Command::Validate => unreachable!(),
    };
    let mut table = layout.table();
    for r in rows {
        table.push(r);
    }
    Ok(table)
}

/// Rows whose failure column is set.
pub fn failures(table: &Table) -> usize {
    let Some(i) = table.index("failure").or_else(|| table.index("status")) else {
        return 0;
    };
    table
        .rows
        .iter()
        .filter(|r| match &r[i] {
            Cell::Text(s) => !s.is_empty() && s != "PASS",
            _ => false,
        })
        .count()
}

fn heading(sim: &SimulationConfig, grid: &[f64], g: Geometry) -> Vec<Row> {
    let h = sim.pump.helicity.as_str();
    match heading_error_curve(sim, grid, g) {
        Ok(c) => c
            .theta
            .iter()
            .zip(&c.omega0)
            .zip(c.heading_error())
            .map(|((t, w), e)| Row {
                theta: Some(t.to_degrees()),
                omega0: Some(*w),
                heading_error: Some(e),
                geometry: g.as_str().into(),
                helicity: h.into(),
                extras: vec![],
                failure: String::new(),
            })
            .collect(),
        Err(e) => vec![Row::failed(g.as_str(), h, vec![], e)],
    }
}

fn decompose(sim: &SimulationConfig, grid: &[f64], g: Geometry) -> Vec<Row> {
    let d = match effect_decomposition(sim, grid, g) {
        Ok(d) => d,
        Err(e) => {
            return [Helicity::Plus, Helicity::Minus]
                .iter()
                .map(|h| Row::failed(g.as_str(), h.as_str(), vec![Cell::Empty; 4], &e))
                .collect()
        }
    };
    let zero = d.theta.iter().position(|t| *t == 0.0).expect("grid holds zero");
    let mut rows = Vec::new();
    for h in [Helicity::Plus, Helicity::Minus] {
        let c = d.curves(h);
        for (i, t) in d.theta.iter().enumerate() {
            rows.push(Row {
                theta: Some(t.to_degrees()),
                omega0: Some(d.omega_l + c.total[i]),
                heading_error: Some(c.total[i] - c.total[zero]),
                geometry: g.as_str().into(),
                helicity: h.as_str().into(),
                extras: [c.nlz[i], c.ls[i], c.nuz[i], c.total[i]].map(Cell::Num).to_vec(),
                failure: String::new(),
            });
        }
    }
    rows
}

fn dual(sim: &SimulationConfig, grid: &[f64], p: Pairing) -> Vec<Row> {
    let name = pairing_name(p);
    let tag = |kind: &str| vec![Cell::text(name), Cell::text(kind)];
    let curves = match dual_helicity_average(sim, grid, p) {
        Ok(c) => c,
        Err(e) => return vec![Row::failed("", "", tag("curve"), e)],
    };
    let mut rows = Vec::new();
    for c in &curves {
        for i in 0..c.theta.len() {
            rows.push(Row {
                theta: Some(c.theta[i].to_degrees()),
                omega0: Some(c.average[i]),
                heading_error: Some(c.residual[i]),
                geometry: format!("{}/{}", c.first.1.as_str(), c.second.1.as_str()),
                helicity: format!("{}/{}", c.first.0.as_str(), c.second.0.as_str()),
                extras: tag("curve"),
                failure: String::new(),
            });
        }
    }
    rows.push(Row {
        theta: None,
        omega0: None,
        heading_error: Some(curves.iter().map(|c| c.max_abs_residual()).fold(0.0, f64::max)),
        geometry: "all".into(),
        helicity: "plus/minus".into(),
        extras: tag("max_abs_residual"),
        failure: String::new(),
    });
    rows
}

fn auxfield(sim: &SimulationConfig, ba_list: &[f64], grid: &[f64], g: Geometry) -> Vec<Row> {
    let h = sim.pump.helicity.as_str();
    let extras = |kind: &str, ba: Option<f64>, theta0: Option<f64>, dev: Option<f64>, thr: Option<f64>| {
        vec![Cell::text(kind), Cell::opt(ba), Cell::opt(theta0), Cell::opt(dev), Cell::opt(thr)]
    };
    let mut rows = Vec::new();
    let deviations = match auxiliary_field_curve(sim, ba_list, grid, g) {
        Ok(res) => {
            for (ba, c) in res.ba.iter().zip(&res.curves) {
                for ((t, w), e) in c.theta.iter().zip(&c.omega0).zip(c.heading_error()) {
                    rows.push(Row {
                        theta: Some(t.to_degrees()),
                        omega0: Some(*w),
                        heading_error: Some(e),
                        geometry: g.as_str().into(),
                        helicity: h.into(),
                        extras: extras("curve", Some(*ba), None, None, None),
                        failure: String::new(),
                    });
                }
            }
            res.max_deviation.iter().map(|d| Some(*d)).collect()
        }
        Err(e) => {
            rows.push(Row::failed(g.as_str(), h, extras("curve", None, None, None, None), e));
            vec![None; ba_list.len()]
        }
    };
    let angles: Vec<_> = ba_list.par_iter().map(|&ba| flattening_angle(sim, ba, g)).collect();
    for ((ba, a), dev) in ba_list.iter().zip(angles).zip(deviations) {
        rows.push(match a {
            Ok(a) => Row {
                theta: None,
                omega0: None,
                heading_error: None,
                geometry: g.as_str().into(),
                helicity: h.into(),
                extras: extras("theta0", Some(*ba), Some(a.to_degrees()), dev, None),
                failure: String::new(),
            },
            Err(e) => Row::failed(g.as_str(), h, extras("theta0", Some(*ba), None, dev, None), e),
        });
    }
    rows.push(match flattening_threshold(sim, g) {
        Ok(t) => Row {
            theta: None,
            omega0: None,
            heading_error: None,
            geometry: g.as_str().into(),
            helicity: h.into(),
            extras: extras("threshold", None, None, None, Some(t)),
            failure: String::new(),
        },
        Err(e) => Row::failed(g.as_str(), h, extras("threshold", None, None, None, None), e),
    });
    rows
}

fn validate(sim: &SimulationConfig) -> Table {
    let mut t = Table::new(vec![
        Column::new("id", None),
        Column::new("name", None),
        Column::new("status", None),
        Column::new("measured", None),
        Column::new("bound", None),
        Column::new("unit", None),
        Column::new("detail", None),
    ]);
    for c in run_suite(sim) {
        t.push(vec![
            Cell::Int(c.id.into()),
            Cell::Text(c.name),
            Cell::text(if c.passed { "PASS" } else { "FAIL" }),
            Cell::Num(c.measured),
            Cell::Num(c.bound),
            Cell::Text(c.unit),
            Cell::Text(c.detail),
        ]);
    }
    t
}
