use serde::{Deserialize, Serialize};

pub const CURVES_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc,wall_time_s";

/// Metrics of one completed epoch. Epochs are numbered from 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub wall_time_s: f64,
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            self.train_accuracy,
            self.val_loss,
            self.val_accuracy,
            self.wall_time_s
        )
    }

    /// The human-readable progress line printed per epoch.
    pub fn summary(&self) -> String {
        format!(
            "epoch {} train_loss={:.6} train_acc={:.4} val_loss={:.6} val_acc={:.4} time={:.1}s",
            self.epoch,
            self.train_loss,
            self.train_accuracy,
            self.val_loss,
            self.val_accuracy,
            self.wall_time_s
        )
    }
}

/// Header plus one row per epoch; floats use shortest round-trip form.
pub fn curves_csv(logs: &[EpochLog]) -> String {
    let mut s = String::from(CURVES_HEADER);
    s.push('\n');
    for l in logs {
        s.push_str(&l.csv_row());
        s.push('\n');
    }
    s
}

pub fn parse_curves(text: &str) -> Result<Vec<EpochLog>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(CURVES_HEADER) {
        return Err("missing curves.csv header".into());
    }
    lines
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(format!("row {}: expected 6 fields", i + 1));
            }
            let num = |j: usize| {
                f[j].parse::<f64>()
                    .map_err(|e| format!("row {} field {}: {e}", i + 1, j + 1))
            };
            Ok(EpochLog {
                epoch: f[0].parse().map_err(|e| format!("row {}: {e}", i + 1))?,
                train_loss: num(1)?,
                train_accuracy: num(2)?,
                val_loss: num(3)?,
                val_accuracy: num(4)?,
                wall_time_s: num(5)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let logs = vec![
            EpochLog {
                epoch: 1,
                train_loss: 1.3862943611198906,
                train_accuracy: 0.25,
                val_loss: 0.1 + 0.2,
                val_accuracy: 1.0 / 3.0,
                wall_time_s: 0.0,
            },
            EpochLog {
                epoch: 2,
                train_loss: 1e-300,
                train_accuracy: 1.0,
                val_loss: 12345.678,
                val_accuracy: 0.0,
                wall_time_s: 2.5,
            },
        ];
        let text = curves_csv(&logs);
        assert!(text.starts_with("epoch,train_loss,train_acc,val_loss,val_acc,wall_time_s\n"));
        assert_eq!(parse_curves(&text).unwrap(), logs);
        assert_eq!(curves_csv(&[]), format!("{CURVES_HEADER}\n"));
    }
}
