//! The `headerr` binary end to end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn headerr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_headerr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn bundled() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/rb85_55uT.toml")
}

/// The bundled configuration with one line replaced.
fn variant(dir: &TempDir, from: &str, to: &str) -> PathBuf {
    let text = fs::read_to_string(bundled()).unwrap();
    assert!(text.contains(from), "{from}");
    let p = dir.path().join("variant.toml");
    fs::write(&p, text.replacen(from, to, 1)).unwrap();
    p
}

fn data_lines(csv: &str) -> Vec<&str> {
    csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

#[test]
fn rejects_b1_equal_to_b0() {
    let dir = TempDir::new().unwrap();
    let p = variant(&dir, "# B1 defaults to 1e-4 B0", "B1 = \"55 uT\"");
    let o = headerr(&["heading", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("field.B1") && e.contains("1e-2"), "{e}");
}

#[test]
fn rejects_negative_tilt() {
    let dir = TempDir::new().unwrap();
    let p = variant(&dir, "theta = 0.0", "theta = -10.0");
    let o = headerr(&["heading", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("field.theta = -10"), "{}", stderr(&o));
    let o = headerr(&["heading", "--config", "rb85_55uT", "--sweep", "theta=-10:10:10"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn rejects_unknown_and_missing_keys() {
    let dir = TempDir::new().unwrap();
    let p = variant(&dir, "[pump]", "[pump]\nwavelength = 795e-9");
    let o = headerr(&["heading", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("wavelength"), "{}", stderr(&o));

    let p = variant(&dir, "B0 = \"55 uT\"", "");
    let o = headerr(&["heading", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("B0"), "{}", stderr(&o));

    let o = headerr(&["heading", "--config", "/nonexistent/run.toml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn empty_sweep_gives_header_only_csv() {
    let o = headerr(&["heading", "--config", "rb85_55uT", "--sweep", "theta=10:0:5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    let lines: Vec<&str> = s.lines().collect();
    assert_eq!(lines.len(), 2, "{s}");
    assert!(lines[0].starts_with("# headerr ") && lines[0].contains("fingerprint="));
    assert_eq!(lines[1], "theta_deg,omega0_hz,heading_error_hz,geometry,helicity,failure");
}

#[test]
fn single_zero_tilt_is_one_zero_row() {
    let o = headerr(&[
        "heading",
        "--config",
        "rb85_55uT",
        "--sweep",
        "theta=0:0:1",
        "--sweep",
        "geometry=parallel",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    let rows = data_lines(&s);
    assert_eq!(rows.len(), 1, "{s}");
    let f: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(f[0], "0");
    assert_eq!(f[2], "0");
    assert_eq!(f[3], "parallel");
    assert_eq!(f[4], "plus");
}

#[test]
fn sweep_axes_follow_the_fixed_columns() {
    let o = headerr(&[
        "heading",
        "--config",
        "rb85_55uT",
        "--sweep",
        "theta=0,40",
        "--sweep",
        "detuning=-1GHz,1GHz",
        "--sweep",
        "geometry=perpendicular",
        "--sweep",
        "helicity=plus,minus",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    assert_eq!(
        s.lines().nth(1).unwrap(),
        "theta_deg,omega0_hz,heading_error_hz,geometry,helicity,detuning_hz,failure"
    );
    let rows = data_lines(&s);
    assert_eq!(rows.len(), 8);
    // detuning is the slower axis, helicity the faster
    assert!(rows[0].contains("plus,-1.00000e9") || rows[0].contains("plus,-1000000000"), "{}", rows[0]);
    assert!(rows[2].contains(",minus,"), "{}", rows[2]);
    assert!(rows[7].contains(",minus,"), "{}", rows[7]);
}

#[test]
fn partial_failures_exit_with_two() {
    // Ba = 1 uT breaks Ba/B0 < 1e-2 for the second point only
    let o = headerr(&[
        "heading",
        "--config",
        "rb85_55uT",
        "--sweep",
        "theta=0,30",
        "--sweep",
        "geometry=parallel",
        "--sweep",
        "Ba=0,1uT",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let s = stdout(&o);
    let rows = data_lines(&s);
    assert_eq!(rows.len(), 3, "{s}");
    assert!(rows[0].ends_with(','));
    assert!(rows[2].contains("field.Ba"), "{}", rows[2]);
}

#[test]
fn incompatible_sweeps_are_fatal() {
    for (cmd, spec) in [("validate", "theta=0:10:5"), ("dual", "helicity=plus"), ("decompose", "helicity=minus")] {
        let o = headerr(&[cmd, "--config", "rb85_55uT", "--sweep", spec]);
        assert_eq!(o.status.code(), Some(1), "{cmd} {spec}");
    }
    let o = headerr(&["heading", "--config", "rb85_55uT", "--sweep", "gamma=1:2:1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = headerr(&[
            "heading",
            "--config",
            "rb85_55uT",
            "--sweep",
            "theta=0:60:20",
            "--threads",
            threads,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        out
    };
    let a = run("a.csv", "1");
    let b = run("b.csv", "4");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["subcommand"], "heading");
    assert_eq!(m["sweep_axes"][0], "theta");
    assert!(m["wall_time_s"].as_f64().unwrap() > 0.0);
    let fp = m["fingerprint"].as_str().unwrap();
    assert!(fs::read_to_string(&a).unwrap().lines().next().unwrap().ends_with(fp));
}

#[test]
fn json_output_carries_units() {
    let o = headerr(&[
        "heading",
        "--config",
        "rb85_55uT",
        "--format",
        "json",
        "--sweep",
        "theta=0,20",
        "--sweep",
        "geometry=parallel",
        "--sweep",
        "pump_power=20uW,50uW",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["units"]["omega0_hz"], "Hz");
    assert_eq!(v["units"]["pump_power_W"], "W");
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0]["pump_power_W"].as_f64().unwrap(), 20e-6);
    // a weaker pump gives a smaller light shift at tilt
    assert_ne!(rows[1]["omega0_hz"], rows[3]["omega0_hz"]);
}

#[test]
fn dual_orthogonal_summary_is_below_one_hertz() {
    let o = headerr(&["dual", "--config", "rb85_55uT"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    let summary: Vec<&str> = data_lines(&s).into_iter().filter(|l| l.contains("max_abs_residual")).collect();
    assert_eq!(summary.len(), 2, "{s}");
    let value = |l: &str| l.split(',').nth(2).unwrap().parse::<f64>().unwrap();
    let same = summary.iter().find(|l| l.contains("same_probe")).unwrap();
    let orth = summary.iter().find(|l| l.contains("orthogonal_probe")).unwrap();
    assert!(value(orth) < 1.0, "{orth}");
    assert!(value(same) > 5.0, "{same}");
}
