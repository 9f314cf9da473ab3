//! Record and table serialization.
//!
//! Per-sample records are JSON lines; summaries are CSV with a header row. Floats
//! are written in shortest round-trip form, so re-reading a file reproduces every
//! value bit for bit.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{mean_se, EnsembleRecord, GibbsEstimate, Spectrum};
use crate::local_time::InteractionReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

pub fn write_jsonl<'a, T, W>(mut out: W, items: impl IntoIterator<Item = &'a T>) -> Result<()>
where
    T: Serialize + 'a,
    W: Write,
{
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Blank lines are skipped; a malformed line is reported with its 1-based number.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(input: R) -> Result<Vec<T>> {
    let mut items = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(
            serde_json::from_str(&line).map_err(|source| Error::Record { line: i + 1, source })?,
        );
    }
    Ok(items)
}

pub fn read_records(path: &std::path::Path) -> Result<Vec<EnsembleRecord>> {
    let file = std::fs::File::open(path)?;
    let mut records: Vec<EnsembleRecord> = read_jsonl(std::io::BufReader::new(file))?;
    if records.is_empty() {
        return Err(Error::Empty("record file"));
    }
    records.sort_by_key(|r| r.sample_index);
    Ok(records)
}

/// Writes flat rows either as CSV with a header or as JSON lines.
pub fn write_table<'a, T, W>(out: W, format: Format, rows: impl IntoIterator<Item = &'a T>) -> Result<()>
where
    T: Serialize + 'a,
    W: Write,
{
    match format {
        Format::Jsonl => write_jsonl(out, rows),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for row in rows {
                w.serialize(row)?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

pub fn read_csv<T: DeserializeOwned, R: std::io::Read>(input: R) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// One record without the shell arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub sample_index: u64,
    pub h: f64,
    pub h_tilde: f64,
    pub diff_spectral: f64,
    pub diff_closed_form: f64,
    pub d_bound: f64,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl From<&EnsembleRecord> for EnergyRow {
    fn from(r: &EnsembleRecord) -> Self {
        Self {
            sample_index: r.sample_index,
            h: r.h,
            h_tilde: r.h_tilde,
            diff_spectral: r.diff_spectral,
            diff_closed_form: r.diff_closed_form,
            d_bound: r.d_bound,
            dx: r.displacement[0],
            dy: r.displacement[1],
            dz: r.displacement[2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub quantity: String,
    pub n: usize,
    pub mean: f64,
    pub se: f64,
}

/// Mean and standard error of `H`, `H~`, and both forms of `H~ - H`.
pub fn energy_summary(records: &[EnsembleRecord]) -> Vec<SummaryRow> {
    let cols: [(&str, fn(&EnsembleRecord) -> f64); 4] = [
        ("h", |r| r.h),
        ("h_tilde", |r| r.h_tilde),
        ("diff_spectral", |r| r.diff_spectral),
        ("diff_closed_form", |r| r.diff_closed_form),
    ];
    cols.iter()
        .map(|(name, f)| {
            let v: Vec<f64> = records.iter().map(f).collect();
            let (mean, se) = mean_se(&v);
            SummaryRow {
                quantity: name.to_string(),
                n: v.len(),
                mean,
                se,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsRow {
    pub beta: f64,
    pub z: f64,
    pub log_z: f64,
    pub se: f64,
    pub ess: f64,
    pub flag_heavy_tail: bool,
    pub z_tilde: f64,
    pub log_z_tilde: f64,
}

impl GibbsRow {
    pub fn new(z: &GibbsEstimate, z_tilde: &GibbsEstimate) -> Self {
        Self {
            beta: z.beta,
            z: z.z,
            log_z: z.log_z,
            se: z.standard_error,
            ess: z.effective_sample_size,
            flag_heavy_tail: z.flag_heavy_tail,
            z_tilde: z_tilde.z,
            log_z_tilde: z_tilde.log_z,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub beta: f64,
    pub q: f64,
    pub e: f64,
    pub e_tilde: f64,
    pub ess: f64,
    pub unreliable: bool,
}

pub fn spectrum_rows(s: &Spectrum) -> Vec<SpectrumRow> {
    (0..s.q.len())
        .map(|i| SpectrumRow {
            beta: s.beta,
            q: s.q[i],
            e: s.e[i],
            e_tilde: s.e_tilde[i],
            ess: s.effective_sample_size,
            unreliable: s.unreliable,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractRow {
    pub pair: u64,
    /// `tanaka_rosen` or `mollified`.
    pub estimator: String,
    pub ito_double: f64,
    pub collision_local_time: f64,
    pub boundary: f64,
    pub total: f64,
    pub excluded_pairs: usize,
}

impl InteractRow {
    pub fn new(pair: u64, estimator: &str, r: &InteractionReport) -> Self {
        Self {
            pair,
            estimator: estimator.to_string(),
            ito_double: r.ito_double,
            collision_local_time: r.collision_local_time,
            boundary: r.boundary,
            total: r.total,
            excluded_pairs: r.excluded_pairs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(i: u64, h: f64) -> EnsembleRecord {
        EnsembleRecord {
            sample_index: i,
            h,
            h_tilde: h * 1.5 + 1e-17,
            diff_spectral: h * 0.5,
            diff_closed_form: h / 3.0,
            displacement: [0.1, -1.0 / 7.0, 2e-300],
            d_bound: 1.0 / (8.0 * std::f64::consts::PI),
            shells: vec![h, 0.0, 5e-324],
            shells_tilde: vec![h, 1e300, f64::MIN_POSITIVE],
        }
    }

    proptest! {
        #[test]
        fn jsonl_round_trip_is_exact(hs in prop::collection::vec(0.0f64..1e6, 1..20)) {
            let recs: Vec<_> = hs.iter().enumerate().map(|(i, h)| record(i as u64, *h)).collect();
            let mut buf = Vec::new();
            write_jsonl(&mut buf, &recs).unwrap();
            let back: Vec<EnsembleRecord> = read_jsonl(&buf[..]).unwrap();
            prop_assert_eq!(back, recs);
        }

        #[test]
        fn csv_round_trip_is_exact(hs in prop::collection::vec(0.0f64..1e6, 1..20)) {
            let rows: Vec<EnergyRow> =
                hs.iter().enumerate().map(|(i, h)| EnergyRow::from(&record(i as u64, *h))).collect();
            let mut buf = Vec::new();
            write_table(&mut buf, Format::Csv, &rows).unwrap();
            let back: Vec<EnergyRow> = read_csv(&buf[..]).unwrap();
            prop_assert_eq!(back, rows);
        }
    }

    #[test]
    fn bad_line_is_located() {
        let text = "{\"a\":1}\n\nnot json\n";
        let err = read_jsonl::<serde_json::Value, _>(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Record { line: 3, .. }), "{err}");
    }

    #[test]
    fn summary_has_one_row_per_quantity() {
        let recs = vec![record(0, 1.0), record(1, 3.0)];
        let s = energy_summary(&recs);
        assert_eq!(s.len(), 4);
        assert_eq!(s[0].mean, 2.0);
        assert_eq!(s[0].se, 1.0);
    }
}
