//! Tables and their CSV/JSON encodings.

use std::io::Write;

use anyhow::Result;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Empty,
}

impl Cell {
    pub fn opt(v: Option<f64>) -> Cell {
        v.map_or(Cell::Empty, Cell::Num)
    }

    pub fn text(s: impl Into<String>) -> Cell {
        Cell::Text(s.into())
    }

    fn csv(&self) -> String {
        match self {
            Cell::Num(x) => sig6(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(x) => serde_json::Number::from_f64(*x).map_or(Value::Null, Value::Number),
            Cell::Int(i) => Value::from(*i),
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Empty => Value::Null,
        }
    }
}

/// Six significant digits, fixed-point where that stays short.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let e = x.abs().log10().floor() as i32;
    if (-4..15).contains(&e) {
        let s = format!("{:.*}", (5 - e).max(0) as usize, x);
        // rounding can carry into a new digit, e.g. 9.999996 -> 10.00000
        let digits = s.chars().filter(|c| c.is_ascii_digit()).skip_while(|&c| c == '0').count();
        if digits > 6 && s.contains('.') {
            return s[..s.len() - 1].trim_end_matches('.').to_string();
        }
        s
    } else {
        format!("{x:.5e}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub unit: Option<String>,
}

impl Column {
    pub fn new(name: &str, unit: Option<&str>) -> Self {
        Column {
            name: name.into(),
            unit: unit.map(Into::into),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: Vec<Column>) -> Self {
        Table {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

/// Provenance of one run. Only the wall time varies between repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub fingerprint: String,
    pub subcommand: String,
    pub sweep_axes: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
    pub version: String,
}

pub fn write_csv(table: &Table, manifest: &RunManifest, out: impl Write) -> Result<()> {
    let mut out = out;
    writeln!(
        out,
        "# headerr {} {} fingerprint={}",
        manifest.version, manifest.subcommand, manifest.fingerprint
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(table.columns.iter().map(|c| c.name.as_str()))?;
    for row in &table.rows {
        w.write_record(row.iter().map(Cell::csv))?;
    }
    w.flush()?;
    Ok(())
}

/// The JSON document, without the wall time so that it is reproducible.
pub fn to_json(table: &Table, manifest: &RunManifest) -> Value {
    let units: Map<String, Value> = table
        .columns
        .iter()
        .map(|c| (c.name.clone(), c.unit.clone().map_or(Value::Null, Value::String)))
        .collect();
    let rows: Vec<Value> = table
        .rows
        .iter()
        .map(|r| Value::Object(table.columns.iter().zip(r).map(|(c, v)| (c.name.clone(), v.json())).collect()))
        .collect();
    serde_json::json!({
        "fingerprint": manifest.fingerprint,
        "subcommand": manifest.subcommand,
        "version": manifest.version,
        "sweep_axes": manifest.sweep_axes,
        "columns": table.columns.iter().map(|c| c.name.clone()).collect::<Vec<_>>(),
        "units": units,
        "rows": rows,
    })
}

pub fn write_json(table: &Table, manifest: &RunManifest, mut out: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, &to_json(table, manifest))?;
    writeln!(out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(256585.0412), "256585");
        assert_eq!(sig6(11.523456), "11.5235");
        assert_eq!(sig6(-0.0412345678), "-0.0412346");
        assert_eq!(sig6(9.9999996), "10.0000");
        assert_eq!(sig6(5.5e-9), "5.50000e-9");
        assert_eq!(sig6(0.0), "0");
    }

    #[test]
    fn csv_quotes_text() {
        let mut t = Table::new(vec![Column::new("a", None), Column::new("b", None)]);
        t.push(vec![Cell::Num(1.0), Cell::text("x, y")]);
        let m = RunManifest {
            fingerprint: "f".into(),
            subcommand: "heading".into(),
            sweep_axes: vec![],
            outputs: vec![],
            wall_time_s: 0.0,
            version: "0".into(),
        };
        let mut buf = Vec::new();
        write_csv(&t, &m, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().nth(2).unwrap(), "1.00000,\"x, y\"");
    }
}
