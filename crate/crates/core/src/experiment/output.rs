use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::{RunReport, CONVERGENCE_BAND};
use crate::error::Result;

/// Bumped whenever a CSV column is added, removed or reordered.
pub const SCHEMA_VERSION: u32 = 1;

pub const FLOWS_HEADER: &str = "iteration,flow,offered_pps,rate_pps,oracle_pps,gap";
pub const LINKS_HEADER: &str = "iteration,link,lambda_pps,successes,drops,s_bar_us,service_rate_pps,residual_pps,t_bar_us,r_allocate_pps,r_max_pps,delta_pps,slack_pps,truncated";

pub(crate) fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:.6}")
    }
}

pub(crate) fn write_rows<W: Write>(
    out: W,
    header: &str,
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header.split(','))?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_flows_csv<W: Write>(report: &RunReport, out: W) -> Result<()> {
    let rows = report.iterations.iter().flat_map(|it| {
        report.flows.iter().enumerate().map(move |(f, id)| {
            let (oracle, gap) = match &report.oracle {
                Some(o) => (num(o[f]), num((it.rates[f] - o[f]).abs() / o[f])),
                None => (String::new(), String::new()),
            };
            vec![
                it.iteration.to_string(),
                id.clone(),
                num(it.offered[f]),
                num(it.rates[f]),
                oracle,
                gap,
            ]
        })
    });
    write_rows(out, FLOWS_HEADER, rows)
}

pub fn write_links_csv<W: Write>(report: &RunReport, out: W) -> Result<()> {
    let rows = report.iterations.iter().flat_map(|it| {
        report.links.iter().zip(&it.links).map(move |(name, l)| {
            vec![
                it.iteration.to_string(),
                name.clone(),
                num(l.lambda),
                l.successes.to_string(),
                l.drops.to_string(),
                num(l.s_bar),
                num(l.service_rate),
                num(l.residual),
                num(l.t_bar),
                num(l.r_allocate),
                num(l.r_max),
                num(l.delta),
                num(l.slack),
                u8::from(it.truncated).to_string(),
            ]
        })
    });
    write_rows(out, LINKS_HEADER, rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub iterations: usize,
    pub flows: Vec<String>,
    pub final_rates: Vec<f64>,
    pub oracle_rates: Option<Vec<f64>>,
    pub band: f64,
    pub iterations_to_band: Option<usize>,
    pub final_gap: Option<f64>,
    pub max_gap_after_band: Option<f64>,
    pub constraint_violations: usize,
    pub truncated_iterations: usize,
    pub wall_clock_s: f64,
}

impl Summary {
    pub fn of(report: &RunReport) -> Self {
        let c = report.convergence.as_ref();
        Self {
            schema_version: SCHEMA_VERSION,
            iterations: report.iterations.len(),
            flows: report.flows.clone(),
            final_rates: report.final_rates().to_vec(),
            oracle_rates: report.oracle.clone(),
            band: CONVERGENCE_BAND,
            iterations_to_band: c.and_then(|c| c.iterations_to_band),
            final_gap: c.map(|c| c.final_gap),
            max_gap_after_band: c.and_then(|c| c.max_gap_after),
            constraint_violations: report.constraint_violations(),
            truncated_iterations: report.truncated_iterations(),
            wall_clock_s: report.wall_clock_s,
        }
    }
}

/// Writes flows.csv, links.csv and summary.json into `dir`.
pub fn write_report(report: &RunReport, dir: &Path) -> Result<Summary> {
    std::fs::create_dir_all(dir)?;
    write_flows_csv(report, std::fs::File::create(dir.join("flows.csv"))?)?;
    write_links_csv(report, std::fs::File::create(dir.join("links.csv"))?)?;
    let summary = Summary::of(report);
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{IterationRecord, LinkRecord};

    fn tiny() -> RunReport {
        let link = LinkRecord {
            lambda: 10.0,
            successes: 5,
            drops: 0,
            s_bar: 1200.5,
            service_rate: 833.0,
            residual: 823.0,
            t_bar: 744.727273,
            r_allocate: 400.0,
            r_max: f64::INFINITY,
            delta: 390.0,
            slack: f64::NAN,
        };
        RunReport {
            flows: vec!["a,b".into()],
            links: vec!["1->2".into()],
            iterations: vec![IterationRecord {
                iteration: 1,
                offered: vec![10.0],
                rates: vec![400.0],
                links: vec![link],
                truncated: false,
                duration_us: 1000,
                constraint_holds: true,
                violations: vec![],
            }],
            oracle: Some(vec![500.0]),
            convergence: None,
            wall_clock_s: 0.0,
        }
    }

    #[test]
    fn flows_golden() {
        let mut out = Vec::new();
        write_flows_csv(&tiny(), &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "iteration,flow,offered_pps,rate_pps,oracle_pps,gap\n1,\"a,b\",10.000000,400.000000,500.000000,0.200000\n"
        );
    }

    #[test]
    fn links_golden() {
        let mut out = Vec::new();
        write_links_csv(&tiny(), &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            format!(
                "{LINKS_HEADER}\n1,1->2,10.000000,5,0,1200.500000,833.000000,823.000000,744.727273,400.000000,inf,390.000000,nan,0\n"
            )
        );
    }
}
