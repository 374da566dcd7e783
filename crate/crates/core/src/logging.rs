//! Per-epoch run logs in CSV or JSON Lines.
//!
//! Field order is fixed: `epoch, stage, best_base_fitness,
//! best_combined_fitness, validation_accuracy, V_t, epsilon, queries_used,
//! wall_ms`. Missing values are empty in CSV and `null` in JSONL. Every record
//! is flushed as soon as it is written, so an interrupted run leaves only
//! complete lines behind.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::controller::Stage;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "epoch,stage,best_base_fitness,best_combined_fitness,validation_accuracy,V_t,epsilon,queries_used,wall_ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub stage: Stage,
    pub best_base_fitness: Option<f64>,
    pub best_combined_fitness: Option<f64>,
    pub validation_accuracy: Option<f64>,
    #[serde(rename = "V_t")]
    pub v_t: Option<f64>,
    pub epsilon: Option<f64>,
    pub queries_used: u64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogFormat {
    #[default]
    Csv,
    Jsonl,
}

impl LogFormat {
    pub fn extension(self) -> &'static str {
        match self {
            LogFormat::Csv => "csv",
            LogFormat::Jsonl => "jsonl",
        }
    }
}

impl fmt::Display for LogFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

impl FromStr for LogFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(LogFormat::Csv),
            "jsonl" => Ok(LogFormat::Jsonl),
            other => Err(Error::InvalidParameter(format!(
                "log format must be csv or jsonl, got {other:?}"
            ))),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EpochRecord {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.stage,
            opt(self.best_base_fitness),
            opt(self.best_combined_fitness),
            opt(self.validation_accuracy),
            opt(self.v_t),
            opt(self.epsilon),
            self.queries_used,
            self.wall_ms
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("records always serialize")
    }

    pub fn parse_csv(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        let bad = |what: &str| Error::InvalidParameter(format!("bad {what} in log line {line:?}"));
        if fields.len() != 9 {
            return Err(bad("field count"));
        }
        let real = |i: usize, what: &str| -> Result<Option<f64>> {
            if fields[i].is_empty() {
                Ok(None)
            } else {
                fields[i].parse().map(Some).map_err(|_| bad(what))
            }
        };
        Ok(Self {
            epoch: fields[0].parse().map_err(|_| bad("epoch"))?,
            stage: fields[1].parse()?,
            best_base_fitness: real(2, "best_base_fitness")?,
            best_combined_fitness: real(3, "best_combined_fitness")?,
            validation_accuracy: real(4, "validation_accuracy")?,
            v_t: real(5, "V_t")?,
            epsilon: real(6, "epsilon")?,
            queries_used: fields[7].parse().map_err(|_| bad("queries_used"))?,
            wall_ms: fields[8].parse().map_err(|_| bad("wall_ms"))?,
        })
    }

    pub fn parse_json(line: &str) -> Result<Self> {
        serde_json::from_str(line)
            .map_err(|e| Error::InvalidParameter(format!("bad log line {line:?}: {e}")))
    }
}

/// Append-only log file that flushes after every record.
#[derive(Debug)]
pub struct LogSink {
    path: PathBuf,
    file: File,
    format: LogFormat,
}

impl LogSink {
    /// Creates (truncating) the file; CSV logs start with the header line.
    pub fn create(path: &Path, format: LogFormat) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut sink = Self {
            path: path.to_path_buf(),
            file,
            format,
        };
        if format == LogFormat::Csv {
            sink.write_line(CSV_HEADER)?;
        }
        Ok(sink)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn write_line(&mut self, line: &str) -> Result<()> {
        let mut buf = String::with_capacity(line.len() + 1);
        buf.push_str(line);
        buf.push('\n');
        self.file
            .write_all(buf.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn log_epoch(&mut self, record: &EpochRecord) -> Result<()> {
        let line = match self.format {
            LogFormat::Csv => record.to_csv(),
            LogFormat::Jsonl => record.to_json(),
        };
        self.write_line(&line)
    }
}

/// Reads a log written by [`LogSink`] back into records.
pub fn read_log(path: &Path, format: LogFormat) -> Result<Vec<EpochRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    if format == LogFormat::Csv {
        match lines.next() {
            Some(Ok(h)) if h == CSV_HEADER => {}
            Some(Err(e)) => return Err(Error::io(path, e)),
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "{} does not start with the CSV header",
                    path.display()
                )))
            }
        }
    }
    lines
        .map(|l| {
            let l = l.map_err(|e| Error::io(path, e))?;
            match format {
                LogFormat::Csv => EpochRecord::parse_csv(&l),
                LogFormat::Jsonl => EpochRecord::parse_json(&l),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(epoch: u64) -> EpochRecord {
        EpochRecord {
            epoch,
            stage: Stage::Exploration,
            best_base_fitness: Some(0.1 * epoch as f64),
            best_combined_fitness: Some(-0.3333333333333333),
            validation_accuracy: None,
            v_t: Some(1e-7),
            epsilon: None,
            queries_used: 17,
            wall_ms: 0,
        }
    }

    #[test]
    fn csv_and_json_round_trip() {
        let r = record(3);
        assert_eq!(EpochRecord::parse_csv(&r.to_csv()).unwrap(), r);
        assert_eq!(EpochRecord::parse_json(&r.to_json()).unwrap(), r);
        assert!(r.to_json().contains("\"V_t\":1e-7"));
        assert!(r.to_json().contains("\"validation_accuracy\":null"));
    }

    #[test]
    fn ten_epochs_ten_lines() {
        let dir = tempfile::tempdir().unwrap();
        for format in [LogFormat::Csv, LogFormat::Jsonl] {
            let path = dir.path().join(format!("log.{format}"));
            let mut sink = LogSink::create(&path, format).unwrap();
            for e in 1..=10 {
                sink.log_epoch(&record(e)).unwrap();
            }
            drop(sink);
            let text = std::fs::read_to_string(&path).unwrap();
            let extra = usize::from(format == LogFormat::Csv);
            assert_eq!(text.lines().count(), 10 + extra);
            let back = read_log(&path, format).unwrap();
            assert_eq!(back, (1..=10).map(record).collect::<Vec<_>>());
        }
    }

    #[test]
    fn lines_are_complete_after_each_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let mut sink = LogSink::create(&path, LogFormat::Csv).unwrap();
        for e in 1..=4 {
            sink.log_epoch(&record(e)).unwrap();
            // Read while the sink is still open, as after a crash.
            let back = read_log(&path, LogFormat::Csv).unwrap();
            assert_eq!(back.len() as u64, e);
            assert!(std::fs::read_to_string(&path).unwrap().ends_with('\n'));
        }
    }

    #[test]
    fn unwritable_path_names_path() {
        let err = LogSink::create(Path::new("/nonexistent-dir/x/log.csv"), LogFormat::Csv)
            .unwrap_err()
            .to_string();
        assert!(err.contains("/nonexistent-dir/x/log.csv"), "{err}");
    }
}
