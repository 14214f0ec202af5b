//! Report rows, their CSV form and per-method summaries.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const REPORT_HEADER: [&str; 7] = [
    "trial", "method", "coverage", "avg_size", "alpha", "beta", "seed",
];

/// One `(trial, method)` outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub trial: usize,
    pub method: String,
    pub coverage: f64,
    pub avg_size: f64,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
}

pub fn write_report<W: Write>(writer: W, rows: &[ReportRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(REPORT_HEADER)?;
    for r in rows {
        out.write_record([
            r.trial.to_string(),
            r.method.clone(),
            r.coverage.to_string(),
            r.avg_size.to_string(),
            r.alpha.to_string(),
            r.beta.to_string(),
            r.seed.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_report<R: Read>(reader: R) -> Result<Vec<ReportRow>> {
    let mut input = csv::Reader::from_reader(reader);
    if input.headers()?.iter().ne(REPORT_HEADER) {
        return Err(Error::Io("unexpected report header".into()));
    }
    let bad = |what: &str| Error::Io(format!("bad {what} in report"));
    input
        .records()
        .map(|rec| {
            let rec = rec?;
            let field = |i: usize| rec.get(i).ok_or_else(|| bad(REPORT_HEADER[i]));
            Ok(ReportRow {
                trial: field(0)?.parse().map_err(|_| bad("trial"))?,
                method: field(1)?.to_string(),
                coverage: field(2)?.parse().map_err(|_| bad("coverage"))?,
                avg_size: field(3)?.parse().map_err(|_| bad("avg_size"))?,
                alpha: field(4)?.parse().map_err(|_| bad("alpha"))?,
                beta: field(5)?.parse().map_err(|_| bad("beta"))?,
                seed: field(6)?.parse().map_err(|_| bad("seed"))?,
            })
        })
        .collect()
}

/// Mean and Monte Carlo standard error of coverage and size for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub beta: f64,
    pub trials: usize,
    pub mean_coverage: f64,
    pub se_coverage: f64,
    pub mean_size: f64,
    pub se_size: f64,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Summaries grouped by `(method, beta)`, in order of first appearance.
pub fn summarize(rows: &[ReportRow]) -> Vec<MethodSummary> {
    let mut order: Vec<(String, u64)> = Vec::new();
    let mut groups: BTreeMap<(String, u64), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let key = (r.method.clone(), r.beta.to_bits());
        let entry = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (Vec::new(), Vec::new())
        });
        entry.0.push(r.coverage);
        entry.1.push(r.avg_size);
    }
    order
        .into_iter()
        .map(|key| {
            let (cov, size) = &groups[&key];
            let (mean_coverage, se_coverage) = mean_and_se(cov);
            let (mean_size, se_size) = mean_and_se(size);
            MethodSummary {
                method: key.0,
                beta: f64::from_bits(key.1),
                trials: cov.len(),
                mean_coverage,
                se_coverage,
                mean_size,
                se_size,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(trial: usize, method: &str, coverage: f64) -> ReportRow {
        ReportRow {
            trial,
            method: method.into(),
            coverage,
            avg_size: 2.0 * coverage,
            alpha: 0.1,
            beta: 0.005,
            seed: 3,
        }
    }

    #[test]
    fn header_is_exact() {
        let mut buf = Vec::new();
        write_report(&mut buf, &[row(0, "pcp", 0.9)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "trial,method,coverage,avg_size,alpha,beta,seed"
        );
        assert_eq!(text.lines().nth(1).unwrap(), "0,pcp,0.9,1.8,0.1,0.005,3");
    }

    #[test]
    fn round_trip() {
        let rows = vec![
            row(0, "pcp", 0.91),
            row(0, "naive_cp_clean", 0.85),
            row(1, "pcp", 0.125),
        ];
        let mut buf = Vec::new();
        write_report(&mut buf, &rows).unwrap();
        assert_eq!(read_report(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn summaries_group_by_method() {
        let s = summarize(&[row(0, "pcp", 0.8), row(0, "cp", 0.5), row(1, "pcp", 1.0)]);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].method, "pcp");
        assert!((s[0].mean_coverage - 0.9).abs() < 1e-12);
        assert!((s[0].se_coverage - 0.1).abs() < 1e-12);
        assert_eq!(s[1].trials, 1);
    }
}
