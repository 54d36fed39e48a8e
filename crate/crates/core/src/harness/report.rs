use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::fd::RoundReport;
use crate::frd::ExchangeReport;
use crate::{Error, Result};

pub const METRICS_HEADER: [&str; 6] = ["round", "worker", "loss", "accuracy", "uplink_bytes", "downlink_bytes"];
pub const EXCHANGE_HEADER: [&str; 5] = ["exchange", "agent", "rolling_score", "uplink_bytes", "downlink_bytes"];
pub const RESIDUAL_HEADER: [&str; 3] = ["round", "worker", "residual"];

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn writer<W: Write>(w: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(w);
    out.write_record(header)?;
    Ok(out)
}

pub fn write_metrics<W: Write>(w: W, reports: &[RoundReport]) -> Result<()> {
    let mut out = writer(w, &METRICS_HEADER)?;
    for r in reports {
        for wr in &r.workers {
            out.write_record([
                r.round.to_string(),
                wr.worker.to_string(),
                fmt_f64(wr.loss),
                fmt_f64(wr.accuracy),
                wr.uplink_bytes.to_string(),
                wr.downlink_bytes.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_exchanges<W: Write>(w: W, reports: &[ExchangeReport]) -> Result<()> {
    let mut out = writer(w, &EXCHANGE_HEADER)?;
    for r in reports {
        out.write_record([
            r.exchange.to_string(),
            r.agent.to_string(),
            fmt_f64(r.rolling_score),
            r.uplink_bytes.to_string(),
            r.downlink_bytes.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Rows of `(round, worker, residual)`.
pub fn write_residuals<W: Write>(w: W, rows: &[(usize, usize, f64)]) -> Result<()> {
    let mut out = writer(w, &RESIDUAL_HEADER)?;
    for &(r, c, v) in rows {
        out.write_record([r.to_string(), c.to_string(), fmt_f64(v)])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    pub worker: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
}

/// Reads a metrics CSV, rejecting any other header.
pub fn read_metrics<R: Read>(r: R) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(Error::Schema(format!(
            "expected columns {}, found {}",
            METRICS_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let rows: Vec<MetricsRow> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    if let Some(bad) = rows.iter().find(|r| !(0.0..=1.0).contains(&r.accuracy)) {
        return Err(Error::Schema(format!("accuracy out of [0, 1] at round {} worker {}", bad.round, bad.worker)));
    }
    Ok(rows)
}

/// Per-round view of a metrics file.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundSummary {
    pub round: usize,
    pub mean_accuracy: f64,
    /// Uplink plus downlink bytes over all workers up to and including this round.
    pub cumulative_bytes: u64,
}

pub fn summarize(rows: &[MetricsRow]) -> Vec<RoundSummary> {
    let mut rounds: Vec<usize> = rows.iter().map(|r| r.round).collect();
    rounds.sort_unstable();
    rounds.dedup();
    let mut total = 0u64;
    rounds
        .into_iter()
        .map(|round| {
            let in_round: Vec<&MetricsRow> = rows.iter().filter(|r| r.round == round).collect();
            total += in_round.iter().map(|r| r.uplink_bytes + r.downlink_bytes).sum::<u64>();
            let acc = in_round.iter().map(|r| r.accuracy).sum::<f64>() / in_round.len() as f64;
            RoundSummary { round, mean_accuracy: acc, cumulative_bytes: total }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundDelta {
    pub round: usize,
    /// `b − a`.
    pub accuracy_delta: f64,
    /// `b − a`.
    pub bytes_delta: i128,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdRatio {
    pub threshold: f64,
    pub bytes_a: Option<u64>,
    pub bytes_b: Option<u64>,
}

impl ThresholdRatio {
    /// `bytes_b / bytes_a`; undefined unless both runs reach the threshold.
    pub fn ratio(&self) -> Option<f64> {
        match (self.bytes_a, self.bytes_b) {
            (Some(a), Some(b)) if a > 0 => Some(b as f64 / a as f64),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub deltas: Vec<RoundDelta>,
    pub thresholds: Vec<ThresholdRatio>,
}

pub const DEFAULT_THRESHOLDS: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

fn bytes_to_reach(summary: &[RoundSummary], threshold: f64) -> Option<u64> {
    summary.iter().find(|s| s.mean_accuracy >= threshold).map(|s| s.cumulative_bytes)
}

/// Round-by-round deltas over the rounds both reports share, and the cost of
/// reaching each accuracy threshold.
pub fn compare(a: &[MetricsRow], b: &[MetricsRow], thresholds: &[f64]) -> Comparison {
    let sa = summarize(a);
    let sb = summarize(b);
    let deltas = sa
        .iter()
        .filter_map(|x| {
            sb.iter().find(|y| y.round == x.round).map(|y| RoundDelta {
                round: x.round,
                accuracy_delta: y.mean_accuracy - x.mean_accuracy,
                bytes_delta: y.cumulative_bytes as i128 - x.cumulative_bytes as i128,
            })
        })
        .collect();
    let thresholds = thresholds
        .iter()
        .map(|&t| ThresholdRatio {
            threshold: t,
            bytes_a: bytes_to_reach(&sa, t),
            bytes_b: bytes_to_reach(&sb, t),
        })
        .collect();
    Comparison { deltas, thresholds }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>6} {:>14} {:>16}", "round", "d_accuracy", "d_cum_bytes")?;
        for d in &self.deltas {
            writeln!(f, "{:>6} {:>14.6} {:>16}", d.round, d.accuracy_delta, d.bytes_delta)?;
        }
        writeln!(f)?;
        writeln!(f, "{:>9} {:>14} {:>14} {:>10}", "accuracy", "bytes_a", "bytes_b", "b/a")?;
        let opt = |v: Option<u64>| v.map_or("-".to_string(), |b| b.to_string());
        for t in &self.thresholds {
            let ratio = t.ratio().map_or("undefined".to_string(), |r| format!("{r:.4}"));
            writeln!(f, "{:>9.2} {:>14} {:>14} {:>10}", t.threshold, opt(t.bytes_a), opt(t.bytes_b), ratio)?;
        }
        Ok(())
    }
}
