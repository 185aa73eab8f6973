use std::io::Write;

use serde::{Deserialize, Serialize};

use super::RlError;

/// One metrics record; emitted whenever an episode finishes. Loss columns
/// hold the latest values and are empty before the first update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// Environment steps taken so far (inner steps, not agent ticks).
    pub step: u64,
    pub episodic_return: Option<f64>,
    pub actor_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub entropy_coef: Option<f64>,
}

pub fn write_metrics<W: Write>(out: W, rows: &[MetricsRow]) -> Result<(), RlError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["step", "episodic_return", "actor_loss", "critic_loss", "entropy_coef"])
        .map_err(|e| RlError::Io(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| RlError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| RlError::Io(e.to_string()))
}

pub fn read_metrics<R: std::io::Read>(input: R) -> Result<Vec<MetricsRow>, RlError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| RlError::Io(e.to_string()))
}

/// Mean episodic return over the last `n` finished episodes.
pub fn final_return(rows: &[MetricsRow], n: usize) -> Option<f64> {
    let tail: Vec<f64> = rows.iter().filter_map(|r| r.episodic_return).rev().take(n).collect();
    (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_keeps_empty_cells() {
        let rows = vec![
            MetricsRow { step: 3, episodic_return: Some(1.5), actor_loss: None, critic_loss: None, entropy_coef: None },
            MetricsRow { step: 9, episodic_return: Some(-0.25), actor_loss: Some(0.1), critic_loss: Some(2.0), entropy_coef: Some(0.5) },
        ];
        let mut buf = Vec::new();
        write_metrics(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("step,episodic_return,actor_loss,critic_loss,entropy_coef\n3,1.5,,,\n"));
        assert_eq!(read_metrics(buf.as_slice()).unwrap(), rows);
        assert_eq!(final_return(&rows, 1), Some(-0.25));
    }

    #[test]
    fn empty_series_still_has_header() {
        let mut buf = Vec::new();
        write_metrics(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }
}
