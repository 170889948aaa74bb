//! One row per aggregation tick, written as CSV.
//!
//! Columns: `time_s, round, rho_1..rho_C, global_train_loss, global_val_acc,
//! subnet_acc_1..subnet_acc_C, A_dagger, B_dagger, min_gamma, bytes_up_cum,
//! bytes_down_cum, aggregator, seed`. Metrics not computed on a tick are
//! written as `NaN`.

use std::io::{Read, Write};
use std::path::Path;

use crate::diagnostics::AccuracyTrace;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub time_s: f64,
    pub round: u64,
    pub densities: Vec<f64>,
    pub global_train_loss: f64,
    pub global_val_acc: f64,
    pub subnet_acc: Vec<f64>,
    pub a_dagger: f64,
    pub b_dagger: f64,
    pub min_gamma: u32,
    pub bytes_up_cum: u64,
    pub bytes_down_cum: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub n_clients: usize,
    pub aggregator: String,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn new(n_clients: usize, aggregator: &str, seed: u64) -> Self {
        MetricsLog {
            n_clients,
            aggregator: aggregator.to_string(),
            seed,
            rows: Vec::new(),
        }
    }

    pub fn header(n_clients: usize) -> Vec<String> {
        let mut h = vec!["time_s".to_string(), "round".to_string()];
        h.extend((1..=n_clients).map(|i| format!("rho_{i}")));
        h.push("global_train_loss".into());
        h.push("global_val_acc".into());
        h.extend((1..=n_clients).map(|i| format!("subnet_acc_{i}")));
        for c in [
            "A_dagger",
            "B_dagger",
            "min_gamma",
            "bytes_up_cum",
            "bytes_down_cum",
            "aggregator",
            "seed",
        ] {
            h.push(c.into());
        }
        h
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::header(self.n_clients))?;
        for r in &self.rows {
            let mut rec = vec![r.time_s.to_string(), r.round.to_string()];
            rec.extend(r.densities.iter().map(f64::to_string));
            rec.push(r.global_train_loss.to_string());
            rec.push(r.global_val_acc.to_string());
            rec.extend(r.subnet_acc.iter().map(f64::to_string));
            rec.push(r.a_dagger.to_string());
            rec.push(r.b_dagger.to_string());
            rec.push(r.min_gamma.to_string());
            rec.push(r.bytes_up_cum.to_string());
            rec.push(r.bytes_down_cum.to_string());
            rec.push(self.aggregator.clone());
            rec.push(self.seed.to_string());
            w.write_record(rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// `(time_s, global_val_acc)` for every evaluated tick.
    pub fn accuracy_trace(&self) -> Result<AccuracyTrace> {
        AccuracyTrace::new(
            self.rows
                .iter()
                .filter(|r| r.global_val_acc.is_finite())
                .map(|r| (r.time_s, r.global_val_acc))
                .collect(),
        )
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }
}

/// Reads the `time_s` and `global_val_acc` columns of a metrics CSV.
pub fn read_accuracy_trace<R: Read>(reader: R) -> Result<AccuracyTrace> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("metrics file has no `{name}` column")))
    };
    let (t_col, a_col) = (col("time_s")?, col("global_val_acc")?);
    let mut samples = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Format(format!("bad number `{}`", &rec[i])))
        };
        let acc = parse(a_col)?;
        if acc.is_finite() {
            samples.push((parse(t_col)?, acc));
        }
    }
    AccuracyTrace::new(samples)
}

pub fn load_accuracy_trace(path: &Path) -> Result<AccuracyTrace> {
    read_accuracy_trace(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64, acc: f64) -> MetricsRow {
        MetricsRow {
            time_s: t,
            round: 1,
            densities: vec![1.0, 0.5],
            global_train_loss: 2.3,
            global_val_acc: acc,
            subnet_acc: vec![0.1, f64::NAN],
            a_dagger: 1.5,
            b_dagger: 1.25,
            min_gamma: 1,
            bytes_up_cum: 10,
            bytes_down_cum: 20,
        }
    }

    #[test]
    fn header_layout() {
        let h = MetricsLog::header(2);
        assert_eq!(h[..4], ["time_s", "round", "rho_1", "rho_2"]);
        assert_eq!(h.last().unwrap(), "seed");
        assert_eq!(h.len(), 2 + 2 + 2 + 2 + 7);
    }

    #[test]
    fn trace_round_trip_skips_unevaluated() {
        let mut log = MetricsLog::new(2, "MA", 3);
        log.rows = vec![row(0.0, 0.1), row(2.5, f64::NAN), row(5.0, 0.3)];
        let csv = log.to_csv_string();
        assert!(csv.lines().nth(1).unwrap().ends_with(",MA,3"));
        let trace = read_accuracy_trace(csv.as_bytes()).unwrap();
        assert_eq!(trace.samples(), &[(0.0, 0.1), (5.0, 0.3)]);
        assert_eq!(trace, log.accuracy_trace().unwrap());
    }
}
