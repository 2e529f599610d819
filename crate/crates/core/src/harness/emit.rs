//! Result files: coverage tables, histogram bins, generic record lists and
//! the `manifest.json` sidecar.

use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::coverage::{CoverageRow, HistogramRecord};
use crate::error::{Error, Result};

pub const COVERAGE_HEADER: &str = "method,noise,cp_all,cp_T,cp_Tc,al_all,al_T,al_Tc,reps";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("unknown format {other:?}; expected csv or json"))),
        }
    }
}

/// Header plus one line per row, rates and lengths to 4 decimals.
pub fn write_coverage_csv<W: Write>(rows: &[CoverageRow], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(COVERAGE_HEADER.split(','))?;
    for r in rows {
        let f = |v: f64| format!("{v:.4}");
        w.write_record([
            r.method.clone(),
            r.noise.clone(),
            f(r.cp_all),
            f(r.cp_t),
            f(r.cp_tc),
            f(r.al_all),
            f(r.al_t),
            f(r.al_tc),
            r.reps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses [`write_coverage_csv`] output. The file does not record attempted
/// replications, so `attempted` is set to `reps`.
pub fn read_coverage_csv<R: Read>(reader: R) -> Result<Vec<CoverageRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != COVERAGE_HEADER {
        return Err(Error::Format(format!("unexpected coverage header {:?}", header.join(","))));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| Error::Format(format!("column {i}: {e}")));
        let reps = rec[8].parse::<usize>().map_err(|e| Error::Format(format!("reps: {e}")))?;
        rows.push(CoverageRow {
            method: rec[0].to_string(),
            noise: rec[1].to_string(),
            cp_all: num(2)?,
            cp_t: num(3)?,
            cp_tc: num(4)?,
            al_all: num(5)?,
            al_t: num(6)?,
            al_tc: num(7)?,
            reps,
            attempted: reps,
        });
    }
    Ok(rows)
}

/// One line per bin: `method,noise,j,lo,hi,count`.
pub fn write_histogram_csv<W: Write>(records: &[HistogramRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "noise", "j", "lo", "hi", "count"])?;
    for rec in records {
        for (b, count) in rec.counts.iter().enumerate() {
            w.write_record([
                rec.method.clone(),
                rec.noise.clone(),
                rec.j.to_string(),
                rec.edges[b].to_string(),
                rec.edges[b + 1].to_string(),
                count.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Flat records as CSV (one line each, headers from field names) or as a
/// pretty JSON array.
pub fn write_records<T: Serialize, W: Write>(records: &[T], format: Format, mut writer: W) -> Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(writer);
            for r in records {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut writer, records)?;
            writer.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Coverage rows in either format.
pub fn write_coverage<W: Write>(rows: &[CoverageRow], format: Format, writer: W) -> Result<()> {
    match format {
        Format::Csv => write_coverage_csv(rows, writer),
        Format::Json => write_records(rows, Format::Json, writer),
    }
}

/// Histograms in either format. JSON keeps the replication values too.
pub fn write_histograms<W: Write>(records: &[HistogramRecord], format: Format, writer: W) -> Result<()> {
    match format {
        Format::Csv => write_histogram_csv(records, writer),
        Format::Json => write_records(records, Format::Json, writer),
    }
}

/// Hex SHA-256 of the JSON form of `value`.
pub fn content_hash<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(serde_json::to_vec(value)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Provenance written next to every result set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    /// Hex SHA-256 of the canonical JSON of the inputs.
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config_hash: String, seed: u64, outputs: Vec<String>) -> Self {
        Manifest { command: command.into(), config_hash, seed, version: env!("CARGO_PKG_VERSION").into(), outputs }
    }
}

/// Writes `dir/manifest.json`.
pub fn write_manifest(dir: impl AsRef<Path>, manifest: &Manifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    std::fs::write(dir.as_ref().join("manifest.json"), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(cp: f64, al: f64) -> CoverageRow {
        CoverageRow {
            method: "PLAD + CQ".into(),
            noise: "gaussian".into(),
            cp_all: cp,
            cp_t: 0.9,
            cp_tc: cp,
            al_all: al,
            al_t: 0.31,
            al_tc: al,
            reps: 100,
            attempted: 100,
        }
    }

    #[test]
    fn one_row_gives_two_lines() {
        let mut buf = Vec::new();
        write_coverage_csv(&[row(0.93824, 0.33651)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, format!("{COVERAGE_HEADER}\nPLAD + CQ,gaussian,0.9382,0.9000,0.9382,0.3365,0.3100,0.3365,100\n"));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let rows = vec![row(0.1 + 0.2, 1.0 / 3.0)];
        let mut buf = Vec::new();
        write_coverage(&rows, Format::Json, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\"cp_T\"") && text.contains("\"al_Tc\""));
        let back: Vec<CoverageRow> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn bad_header_is_a_format_error() {
        let err = read_coverage_csv("method,noise\nx,y\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn formats_parse() {
        assert_eq!("csv".parse::<Format>().unwrap(), Format::Csv);
        assert_eq!("json".parse::<Format>().unwrap(), Format::Json);
        assert!("xml".parse::<Format>().is_err());
    }

    #[test]
    fn manifest_file() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::new("coverage", "ab".repeat(32), 9, vec!["coverage.csv".into()]);
        write_manifest(dir.path(), &m).unwrap();
        let back: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.version, env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn histogram_csv_has_one_line_per_bin() {
        let rec = HistogramRecord {
            method: "PLAD + CQ".into(),
            noise: "gaussian".into(),
            j: 2,
            truth: 1.0,
            values: vec![0.9, 1.1],
            edges: vec![0.9, 1.0, 1.1],
            counts: vec![1, 1],
            mean: 1.0,
            std_error: 0.1,
        };
        let mut buf = Vec::new();
        write_histogram_csv(&[rec], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    proptest! {
        // The CSV stores 4 decimals: parsing then re-emitting is a fixed point.
        #[test]
        fn csv_reemission_is_stable(cp in 0.0f64..=1.0, al in 0.0f64..50.0, reps in 1usize..500) {
            let mut r = row(cp, al);
            r.reps = reps;
            r.attempted = reps;
            let mut first = Vec::new();
            write_coverage_csv(&[r.clone()], &mut first).unwrap();
            let parsed = read_coverage_csv(first.as_slice()).unwrap();
            prop_assert_eq!(parsed.len(), 1);
            prop_assert!((parsed[0].cp_all - cp).abs() <= 5e-5 + 1e-12);
            prop_assert_eq!(parsed[0].reps, reps);
            let mut second = Vec::new();
            write_coverage_csv(&parsed, &mut second).unwrap();
            prop_assert_eq!(first, second);
        }
    }
}
