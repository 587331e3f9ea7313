use std::path::Path;

use crate::error::{Error, Result};
use crate::sim::{History, IterationRecord};

pub const CSV_HEADER: &str =
    "iteration,scheme,train_loss,test_accuracy,cum_bytes,cum_rounds,wall_seconds";

/// Floats are written with 17 significant digits so a parse-back
/// recovers them exactly.
fn fmt_f64(value: f64) -> String {
    format!("{value:.16e}")
}

pub fn history_to_csv(history: &History) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &history.records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.iteration,
            r.scheme,
            fmt_f64(r.train_loss),
            fmt_f64(r.test_accuracy),
            r.cum_bytes,
            r.cum_rounds,
            fmt_f64(r.wall_seconds),
        ));
    }
    out
}

pub fn export_csv(history: &History, path: &Path) -> Result<()> {
    std::fs::write(path, history_to_csv(history))?;
    Ok(())
}

pub fn parse_csv(text: &str) -> Result<History> {
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == CSV_HEADER => {}
        other => {
            return Err(Error::Config(format!(
                "unexpected CSV header: {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Config(format!(
                "line {}: expected 7 fields, found {}",
                lineno + 2,
                fields.len()
            )));
        }
        let parse_err = |field: &str| Error::Config(format!("line {}: bad {field}", lineno + 2));
        records.push(IterationRecord {
            iteration: fields[0].parse().map_err(|_| parse_err("iteration"))?,
            scheme: fields[1].to_string(),
            train_loss: fields[2].parse().map_err(|_| parse_err("train_loss"))?,
            test_accuracy: fields[3].parse().map_err(|_| parse_err("test_accuracy"))?,
            cum_bytes: fields[4].parse().map_err(|_| parse_err("cum_bytes"))?,
            cum_rounds: fields[5].parse().map_err(|_| parse_err("cum_rounds"))?,
            wall_seconds: fields[6].parse().map_err(|_| parse_err("wall_seconds"))?,
        });
    }
    Ok(History { records })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_history() -> History {
        History {
            records: vec![
                IterationRecord {
                    iteration: 1,
                    scheme: "fedtan".into(),
                    train_loss: 2.302585092994045,
                    test_accuracy: 0.1,
                    cum_bytes: 12345,
                    cum_rounds: 4,
                    wall_seconds: 0.0,
                },
                IterationRecord {
                    iteration: 2,
                    scheme: "fedtan".into(),
                    train_loss: 1.0 / 3.0,
                    test_accuracy: 0.97512,
                    cum_bytes: 24690,
                    cum_rounds: 8,
                    wall_seconds: 0.0,
                },
            ],
        }
    }

    #[test]
    fn empty_history_is_header_only() {
        let csv = history_to_csv(&History::default());
        assert_eq!(csv, format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn round_trip_recovers_values_exactly() {
        let history = sample_history();
        let parsed = parse_csv(&history_to_csv(&history)).unwrap();
        assert_eq!(parsed, history);
    }

    #[test]
    fn formatting_is_deterministic() {
        let a = history_to_csv(&sample_history());
        let b = history_to_csv(&sample_history());
        assert_eq!(a, b);
    }
}
