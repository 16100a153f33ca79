//! Configuration parsing and the command pipeline through the library API.

use headerr::constants::hz_to_rad;
use headerr::model::{Helicity, SimulationConfig};
use headerr_cli::config::{parse_config, parse_config_str, BUNDLED};
use headerr_cli::output::{to_json, Cell, RunManifest};
use headerr_cli::run::{execute, failures, run_fingerprint, Command};
use headerr_cli::sweep::Sweep;

fn sweeps(specs: &[&str]) -> Vec<Sweep> {
    specs.iter().map(|s| s.parse().unwrap()).collect()
}

#[test]
fn bundled_config_is_the_reference_point() {
    let rc = parse_config(std::path::Path::new("rb85_55uT")).unwrap();
    assert_eq!(rc.sim.field.b0, 55e-6);
    assert_eq!(rc.sim.pump.detuning, 0.0);
    assert_eq!(rc.sim.pump.helicity, Helicity::Plus);
    assert_eq!(rc.sim, SimulationConfig::rb85_default());
}

#[test]
fn units_are_converted() {
    let text = BUNDLED
        .replace("B0 = \"55 uT\"", "B0 = 3.0e-5")
        .replace("detuning = \"0 GHz\"", "detuning = \"-1.5 GHz\"")
        .replace("helicity = \"plus\"", "helicity = \"minus\"")
        .replace("theta = 0.0 ", "theta = 30.0");
    let rc = parse_config_str(&text).unwrap();
    assert_eq!(rc.sim.field.b0, 3.0e-5);
    assert_eq!(rc.sim.pump.detuning, hz_to_rad(-1.5e9));
    assert_eq!(rc.sim.pump.helicity, Helicity::Minus);
    assert!((rc.sim.field.theta - 30f64.to_radians()).abs() < 1e-15);
}

#[test]
fn invariants_are_checked_at_parse_time() {
    for (from, to, key) in [
        ("Ba = \"0 nT\"", "Ba = \"1 uT\"", "field.Ba"),
        ("power = \"50 uW\"", "power = \"-1 uW\"", "pump.power"),
        ("species = \"rb85\"", "species = \"k39\"", "species"),
        ("[grid]", "[numerics]\nscan_points = 2\n\n[grid]", "scan_points"),
        ("theta = \"0:80:5\"", "theta = \"0:100:5\"", "grid.theta"),
    ] {
        let err = parse_config_str(&BUNDLED.replace(from, to)).unwrap_err();
        assert!(format!("{err:#}").contains(key), "{key}: {err:#}");
    }
}

#[test]
fn json_round_trip_preserves_numbers() {
    let rc = parse_config_str(BUNDLED).unwrap();
    let sw = sweeps(&["theta=0:30:15", "geometry=parallel,perpendicular"]);
    let table = execute(Command::Heading, &rc, &sw).unwrap();
    assert_eq!(failures(&table), 0);
    let manifest = RunManifest {
        fingerprint: run_fingerprint(Command::Heading, &rc, &sw),
        subcommand: "heading".into(),
        sweep_axes: vec!["theta".into(), "geometry".into()],
        outputs: vec![],
        wall_time_s: 0.0,
        version: "test".into(),
    };
    let text = serde_json::to_string(&to_json(&table, &manifest)).unwrap();
    let back: serde_json::Value = serde_json::from_str(&text).unwrap();
    let rows = back["rows"].as_array().unwrap();
    assert_eq!(rows.len(), table.rows.len());
    for (r, orig) in rows.iter().zip(&table.rows) {
        for (c, cell) in table.columns.iter().zip(orig) {
            if let Cell::Num(x) = cell {
                assert_eq!(r[&c.name].as_f64().unwrap().to_bits(), x.to_bits(), "{}", c.name);
            }
        }
    }
    assert_eq!(back["fingerprint"], manifest.fingerprint);
}

#[test]
fn fingerprint_follows_the_inputs() {
    let rc = parse_config_str(BUNDLED).unwrap();
    let a = run_fingerprint(Command::Heading, &rc, &[]);
    assert_eq!(a, run_fingerprint(Command::Heading, &rc.clone(), &[]));
    assert_ne!(a, run_fingerprint(Command::Dual, &rc, &[]));
    assert_ne!(a, run_fingerprint(Command::Heading, &rc, &sweeps(&["theta=0:10:5"])));
}

#[test]
fn decomposition_table_holds_both_helicities() {
    let rc = parse_config_str(BUNDLED).unwrap();
    let table = execute(Command::Decompose, &rc, &sweeps(&["theta=30,60", "geometry=parallel"])).unwrap();
    assert_eq!(failures(&table), 0);
    // the zero-tilt reference is added to the grid
    assert_eq!(table.rows.len(), 6);
    let he = table.index("heading_error_hz").unwrap();
    let hel = table.index("helicity").unwrap();
    assert_eq!(table.rows[0][he], Cell::Num(0.0));
    assert_eq!(table.rows[3][hel], Cell::text("minus"));
    let names: Vec<&str> = table.columns.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(&names[5..], ["nlz_hz", "ls_hz", "nuz_hz", "total_hz", "failure"]);
}

#[test]
fn auxfield_table_has_curves_angles_and_threshold() {
    let rc = parse_config_str(BUNDLED).unwrap();
    let table = execute(
        Command::Auxfield,
        &rc,
        &sweeps(&["theta=0:80:40", "geometry=parallel", "Ba=20nT"]),
    )
    .unwrap();
    assert_eq!(failures(&table), 0);
    let kind = table.index("kind").unwrap();
    let kinds: Vec<String> = table
        .rows
        .iter()
        .map(|r| match &r[kind] {
            Cell::Text(s) => s.clone(),
            _ => panic!(),
        })
        .collect();
    assert_eq!(kinds, ["curve", "curve", "curve", "theta0", "threshold"]);
    let Cell::Num(theta0) = table.rows[3][table.index("theta0_deg").unwrap()] else {
        panic!()
    };
    assert!(theta0 > 30.0 && theta0 < 80.0, "{theta0}");
    let Cell::Num(thr) = table.rows[4][table.index("threshold_T").unwrap()] else {
        panic!()
    };
    assert!(thr > 2e-9 && thr < 20e-9, "{thr}");
}
