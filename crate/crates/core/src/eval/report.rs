//! Per-image result rows, per-cell aggregates, CSV and JSON output.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::metrics::finite_mean_std;

pub const CSV_HEADER: &str = "id,mode,alpha,perturb,psnr_db,ssim,seed,ms";
const AGGREGATE_TOL: f64 = 1e-9;

/// Non-finite floats travel through JSON as the strings `"inf"`, `"-inf"`, `"nan"`.
mod lenient_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Num(*v).serialize(s)
        } else {
            Repr::Text(super::fmt_f64(*v)).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub id: usize,
    pub mode: String,
    pub alpha: f64,
    pub perturb: bool,
    #[serde(with = "lenient_f64")]
    pub psnr_db: f64,
    #[serde(with = "lenient_f64")]
    pub ssim: f64,
    pub seed: u64,
    pub ms: u64,
}

impl ReportRow {
    /// Rows whose sampling produced non-finite values carry NaN metrics.
    pub fn flagged(&self) -> bool {
        self.psnr_db.is_nan() || self.ssim.is_nan()
    }

    pub fn cell(&self) -> CellKey {
        CellKey { mode: self.mode.clone(), alpha: self.alpha, perturb: self.perturb }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub mode: String,
    pub alpha: f64,
    pub perturb: bool,
}

impl CellKey {
    pub fn label(&self) -> String {
        format!("{}_a{}_{}", self.mode, self.alpha, if self.perturb { "pert" } else { "nopert" })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate {
    #[serde(flatten)]
    pub cell: CellKey,
    pub n: usize,
    pub flagged: usize,
    #[serde(with = "lenient_f64")]
    pub psnr_mean: f64,
    #[serde(with = "lenient_f64")]
    pub psnr_std: f64,
    #[serde(with = "lenient_f64")]
    pub ssim_mean: f64,
    #[serde(with = "lenient_f64")]
    pub ssim_std: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<CellAggregate>,
}

impl ExperimentReport {
    pub fn from_rows(rows: Vec<ReportRow>) -> Self {
        let aggregates = aggregate(&rows);
        Self { rows, aggregates }
    }

    pub fn cell(&self, mode: &str, alpha: f64, perturb: bool) -> Option<&CellAggregate> {
        self.aggregates.iter().find(|a| a.cell.mode == mode && a.cell.alpha == alpha && a.cell.perturb == perturb)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.id,
                r.mode,
                r.alpha,
                r.perturb,
                fmt_f64(r.psnr_db),
                fmt_f64(r.ssim),
                r.seed,
                r.ms
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Invalid("report CSV header mismatch".into()));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Invalid(format!("report CSV line {}: {line:?}", i + 2));
            if f.len() != 8 {
                return Err(bad());
            }
            rows.push(ReportRow {
                id: f[0].parse().map_err(|_| bad())?,
                mode: f[1].to_string(),
                alpha: f[2].parse().map_err(|_| bad())?,
                perturb: f[3].parse().map_err(|_| bad())?,
                psnr_db: f[4].parse().map_err(|_| bad())?,
                ssim: f[5].parse().map_err(|_| bad())?,
                seed: f[6].parse().map_err(|_| bad())?,
                ms: f[7].parse().map_err(|_| bad())?,
            });
        }
        Ok(Self::from_rows(rows))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report rows always serialise")
    }

    /// Parse a JSON report and check its aggregates against the rows.
    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text).map_err(|e| Error::Invalid(format!("report JSON: {e}")))?;
        r.verify_aggregates()?;
        Ok(r)
    }

    pub fn verify_aggregates(&self) -> Result<()> {
        let fresh = aggregate(&self.rows);
        if fresh.len() != self.aggregates.len() {
            return Err(Error::Invalid("aggregate cell count differs from rows".into()));
        }
        for (a, b) in fresh.iter().zip(&self.aggregates) {
            let close = |x: f64, y: f64| (x.is_nan() && y.is_nan()) || x == y || (x - y).abs() <= AGGREGATE_TOL;
            let ok = a.cell == b.cell
                && a.n == b.n
                && a.flagged == b.flagged
                && close(a.psnr_mean, b.psnr_mean)
                && close(a.psnr_std, b.psnr_std)
                && close(a.ssim_mean, b.ssim_mean)
                && close(a.ssim_std, b.ssim_std);
            if !ok {
                return Err(Error::Invalid(format!("aggregate for {} does not match its rows", b.cell.label())));
            }
        }
        Ok(())
    }

    /// Human-readable per-cell summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for a in &self.aggregates {
            let _ = writeln!(
                s,
                "{:<32} n={:<3} psnr {:>7.3} ± {:<6.3} ssim {:.4} ± {:.4}{}",
                a.cell.label(),
                a.n,
                a.psnr_mean,
                a.psnr_std,
                a.ssim_mean,
                a.ssim_std,
                if a.flagged > 0 { format!(" ({} flagged)", a.flagged) } else { String::new() }
            );
        }
        s
    }
}

/// Aggregates in first-appearance order of each cell.
pub fn aggregate(rows: &[ReportRow]) -> Vec<CellAggregate> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        let key = r.cell().label();
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .iter()
        .map(|k| {
            let g = &groups[k];
            let ok: Vec<&&ReportRow> = g.iter().filter(|r| !r.flagged()).collect();
            let psnr: Vec<f64> = ok.iter().map(|r| r.psnr_db).collect();
            let ssim: Vec<f64> = ok.iter().map(|r| r.ssim).collect();
            let (pm, ps) = finite_mean_std(&psnr).unwrap_or((f64::NAN, f64::NAN));
            let (sm, ss) = finite_mean_std(&ssim).unwrap_or((f64::NAN, f64::NAN));
            CellAggregate {
                cell: g[0].cell(),
                n: g.len(),
                flagged: g.len() - ok.len(),
                psnr_mean: pm,
                psnr_std: ps,
                ssim_mean: sm,
                ssim_std: ss,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<ReportRow> {
        let mk = |id, alpha, psnr| ReportRow {
            id,
            mode: "implicit".into(),
            alpha,
            perturb: true,
            psnr_db: psnr,
            ssim: 0.5,
            seed: 7,
            ms: 0,
        };
        vec![mk(0, 0.3, 20.0), mk(1, 0.3, 22.0), mk(0, 1.0, f64::INFINITY), mk(1, 1.0, f64::NAN)]
    }

    #[test]
    fn aggregates_skip_flagged_and_infinite() {
        let r = ExperimentReport::from_rows(rows());
        let a = r.cell("implicit", 0.3, true).unwrap();
        assert_eq!(a.psnr_mean, 21.0);
        let b = r.cell("implicit", 1.0, true).unwrap();
        assert_eq!(b.flagged, 1);
        assert!(b.psnr_mean.is_nan());
    }

    #[test]
    fn csv_and_json_round_trip() {
        let r = ExperimentReport::from_rows(rows());
        let csv = r.to_csv();
        assert!(csv.starts_with("id,mode,alpha,perturb,psnr_db,ssim,seed,ms\n"));
        let back = ExperimentReport::from_csv(&csv).unwrap();
        assert_eq!(back.to_csv(), csv);
        let js = ExperimentReport::from_json(&r.to_json()).unwrap();
        assert_eq!(js.to_csv(), csv);
    }

    #[test]
    fn tampered_aggregate_is_rejected() {
        let mut r = ExperimentReport::from_rows(rows());
        r.aggregates[0].psnr_mean += 1e-6;
        assert!(ExperimentReport::from_json(&r.to_json()).is_err());
    }
}
