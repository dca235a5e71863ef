//! Metrics rows and the CSV stream, one file per seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;

pub const CSV_HEADER: &str = "step,episode,mean_return,mean_ep_len,epsilon,agent_loss,critic_loss,mean_r_int,mean_v,tree_count,max_depth,deceive_rate";

/// One evaluation-interval summary. Returns and episode lengths come from
/// greedy evaluation; losses and forest statistics summarize the training
/// rollouts since the previous row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub episode: u64,
    pub mean_return: f64,
    pub mean_ep_len: f64,
    pub epsilon: f64,
    pub agent_loss: f64,
    pub critic_loss: f64,
    pub mean_r_int: f64,
    pub mean_v: f64,
    /// Mean tree count over training steps in the interval.
    pub tree_count: f64,
    /// Maximum forest depth seen in the interval.
    pub max_depth: f64,
    pub deceive_rate: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.step,
            self.episode,
            self.mean_return,
            self.mean_ep_len,
            self.epsilon,
            self.agent_loss,
            self.critic_loss,
            self.mean_r_int,
            self.mean_v,
            self.tree_count,
            self.max_depth,
            self.deceive_rate
        )
    }

    pub fn parse(line: &str) -> Result<MetricsRow> {
        let f: Vec<&str> = line.split(',').collect();
        let err = || crate::error::Error::Config(format!("bad metrics row `{line}`"));
        if f.len() != 12 {
            return Err(err());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err());
        Ok(MetricsRow {
            step: f[0].parse().map_err(|_| err())?,
            episode: f[1].parse().map_err(|_| err())?,
            mean_return: num(f[2])?,
            mean_ep_len: num(f[3])?,
            epsilon: num(f[4])?,
            agent_loss: num(f[5])?,
            critic_loss: num(f[6])?,
            mean_r_int: num(f[7])?,
            mean_v: num(f[8])?,
            tree_count: num(f[9])?,
            max_depth: num(f[10])?,
            deceive_rate: num(f[11])?,
        })
    }
}

pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{CSV_HEADER}")?;
        Ok(MetricsWriter { out })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.out, "{}", row.to_csv())?;
        self.out.flush()?;
        Ok(())
    }
}

/// Loads the rows of a metrics CSV (skipping the header).
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)?;
    text.lines().skip(1).map(MetricsRow::parse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_round_trips_through_csv() {
        let row = MetricsRow {
            step: 1000,
            episode: 42,
            mean_return: 7.25,
            mean_ep_len: 50.0,
            epsilon: 0.5,
            agent_loss: 0.125,
            critic_loss: 0.0625,
            mean_r_int: -0.5,
            mean_v: 1.5,
            tree_count: 2.0,
            max_depth: 2.0,
            deceive_rate: 0.0,
        };
        let parsed = MetricsRow::parse(&row.to_csv()).unwrap();
        assert_eq!(parsed, row);
    }

    #[test]
    fn header_has_twelve_fields() {
        assert_eq!(CSV_HEADER.split(',').count(), 12);
    }
}
