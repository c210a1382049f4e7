//! CSV series, final-snapshot sidecars and JSON reports.
//!
//! Floats are written with 17 significant digits so that reading them back
//! reproduces the binary value exactly.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::integrator::TrajectoryRecord;
use crate::measure::Ensemble;

fn push_float(line: &mut String, x: f64) {
    write!(line, "{x:.16e}").expect("writing to a String");
}

/// Series CSV: header `t,lambda,mass,E_<name>...`, one row per recorded time.
pub fn series_csv(record: &TrajectoryRecord) -> String {
    let mut out = String::from("t,lambda,mass");
    for s in &record.lyapunov_series {
        out.push_str(",E_");
        out.push_str(&s.name);
    }
    out.push('\n');
    for i in 0..record.len() {
        push_float(&mut out, record.times[i]);
        for v in [record.lambda_series[i], record.mass_series[i]]
            .into_iter()
            .chain(record.lyapunov_series.iter().map(|s| s.values[i]))
        {
            out.push(',');
            push_float(&mut out, v);
        }
        out.push('\n');
    }
    out
}

/// Snapshot CSV with header `atom_index,value,weight`.
pub fn snapshot_csv(e: &Ensemble) -> String {
    let mut out = String::from("atom_index,value,weight\n");
    for (i, a) in e.atoms().iter().enumerate() {
        write!(out, "{i},").expect("writing to a String");
        push_float(&mut out, a.value());
        out.push(',');
        push_float(&mut out, a.weight());
        out.push('\n');
    }
    out
}

/// Path of the final-snapshot sidecar for a series CSV at `path`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".final.csv");
    PathBuf::from(s)
}

/// Writes the series to `path` and the last snapshot to `<path>.final.csv`.
pub fn emit_csv(record: &TrajectoryRecord, path: &Path) -> io::Result<()> {
    fs::write(path, series_csv(record))?;
    fs::write(sidecar_path(path), snapshot_csv(record.last()))
}

/// A parsed CSV: header names and column-major data.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.header
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

pub fn parse_csv(text: &str) -> io::Result<CsvTable> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| invalid("empty CSV".into()))?
        .split(',')
        .map(str::to_owned)
        .collect();
    let mut columns = vec![Vec::new(); header.len()];
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(invalid(format!(
                "row {row}: {} fields, expected {}",
                fields.len(),
                header.len()
            )));
        }
        for (col, f) in columns.iter_mut().zip(fields) {
            col.push(
                f.parse::<f64>()
                    .map_err(|e| invalid(format!("row {row}: {f:?}: {e}")))?,
            );
        }
    }
    Ok(CsvTable { header, columns })
}

pub fn read_csv(path: &Path) -> io::Result<CsvTable> {
    parse_csv(&fs::read_to_string(path)?)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> io::Result<()> {
    fs::write(path, to_json(value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{evolve, StepControl};
    use crate::analysis::{LyapunovCatalog, LyapunovSpec};
    use crate::measure::{build_ensemble, Hypothesis, InitialDatumSpec};

    fn run(pairs: &[(f64, f64)], hyp: Hypothesis) -> TrajectoryRecord {
        let e = build_ensemble(&InitialDatumSpec::Atoms(pairs.to_vec())).unwrap();
        let specs: Vec<_> = LyapunovCatalog::STANDARD
            .iter()
            .map(|&c| LyapunovSpec::from_catalog(c, hyp))
            .collect();
        let ctrl = StepControl {
            t_max: 3.0,
            ..StepControl::default()
        };
        evolve(&e, &ctrl, &specs).unwrap()
    }

    #[test]
    fn equilibrium_columns_are_constant() {
        let r = run(&[(2.0, 1.0)], Hypothesis::H1);
        let t = parse_csv(&series_csv(&r)).unwrap();
        assert_eq!(
            t.header,
            ["t", "lambda", "mass", "E_linear", "E_square", "E_quartic", "E_exp"]
        );
        assert_eq!(t.rows(), r.len());
        for name in ["lambda", "mass", "E_square"] {
            let c = t.column(name).unwrap();
            assert!(c.iter().all(|v| *v == c[0]));
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let r = run(&[(1.5, 0.5), (3.0, 0.5)], Hypothesis::H1);
        let text = series_csv(&r);
        assert!(!text.contains('\r'));
        let t = parse_csv(&text).unwrap();
        assert_eq!(t.rows(), r.times.len());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(t.column("t").unwrap()), bits(&r.times));
        assert_eq!(bits(t.column("lambda").unwrap()), bits(&r.lambda_series));
        assert_eq!(bits(t.column("mass").unwrap()), bits(&r.mass_series));
        assert_eq!(
            bits(t.column("E_exp").unwrap()),
            bits(r.lyapunov("exp").unwrap())
        );

        let snap = parse_csv(&snapshot_csv(r.last())).unwrap();
        assert_eq!(snap.header, ["atom_index", "value", "weight"]);
        let values: Vec<f64> = r.last().values().collect();
        assert_eq!(bits(snap.column("value").unwrap()), bits(&values));
    }

    #[test]
    fn sidecar_appends_suffix() {
        assert_eq!(
            sidecar_path(Path::new("out/a.csv")),
            PathBuf::from("out/a.csv.final.csv")
        );
    }

    #[test]
    fn malformed_rows_are_rejected() {
        assert!(parse_csv("a,b\n1,2\n3\n").is_err());
        assert!(parse_csv("a\nx\n").is_err());
        assert!(parse_csv("").is_err());
    }
}
