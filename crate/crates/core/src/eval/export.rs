use std::fs;
use std::path::{Path, PathBuf};

use super::metrics::{class_names, ConfusionMatrix, MetricsReport};
use super::EvalError;
use crate::train::{curves_csv, EpochLog};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExportedFiles {
    pub metrics: PathBuf,
    pub confusion: PathBuf,
    pub curves: PathBuf,
}

/// Header row of class names, then one row per true class.
pub fn render_confusion_csv(cm: &ConfusionMatrix) -> String {
    let names = class_names(cm.k());
    let mut s = format!("true\\pred,{}\n", names.join(","));
    for (name, row) in names.iter().zip(cm.rows()) {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        s.push_str(&format!("{name},{}\n", cells.join(",")));
    }
    s
}

fn write(path: &Path, text: &str) -> Result<(), EvalError> {
    fs::write(path, text).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))
}

/// Writes `metrics.json`, `confusion.csv` and `curves.csv` into `out_dir`.
pub fn export_report(
    report: &MetricsReport,
    cm: &ConfusionMatrix,
    curves: &[EpochLog],
    out_dir: &Path,
) -> Result<ExportedFiles, EvalError> {
    fs::create_dir_all(out_dir)
        .map_err(|e| EvalError::Io(format!("{}: {e}", out_dir.display())))?;
    let files = ExportedFiles {
        metrics: out_dir.join("metrics.json"),
        confusion: out_dir.join("confusion.csv"),
        curves: out_dir.join("curves.csv"),
    };
    let mut json = serde_json::to_string_pretty(report).expect("report serialises");
    json.push('\n');
    write(&files.metrics, &json)?;
    write(&files.confusion, &render_confusion_csv(cm))?;
    write(&files.curves, &curves_csv(curves))?;
    Ok(files)
}

pub fn read_metrics(path: &Path) -> Result<MetricsReport, EvalError> {
    let text =
        fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{build_confusion, macro_report};

    fn fixture() -> ConfusionMatrix {
        let preds = [0, 1, 2, 3, 1, 1, 0, 2, 3, 3, 2];
        let truths = [0, 1, 2, 3, 0, 1, 0, 3, 3, 2, 2];
        build_confusion(&preds, &truths, 4).unwrap()
    }

    #[test]
    fn export_round_trips_and_is_consistent() {
        let dir = tempfile::tempdir().unwrap();
        let cm = fixture();
        let report = macro_report(&cm).unwrap();
        let files = export_report(&report, &cm, &[], dir.path()).unwrap();
        assert_eq!(read_metrics(&files.metrics).unwrap(), report);

        let csv = fs::read_to_string(&files.confusion).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "true\\pred,no_tumor,glioma,meningioma,pituitary");
        for (line, m) in lines.zip(&report.per_class) {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells[0], m.class);
            let sum: u64 = cells[1..].iter().map(|c| c.parse::<u64>().unwrap()).sum();
            assert_eq!(sum, m.support);
        }
    }

    #[test]
    fn export_is_byte_stable() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cm = fixture();
        let report = macro_report(&cm).unwrap();
        let fa = export_report(&report, &cm, &[], a.path()).unwrap();
        let fb = export_report(&report, &cm, &[], b.path()).unwrap();
        for (x, y) in [(fa.metrics, fb.metrics), (fa.confusion, fb.confusion), (fa.curves, fb.curves)] {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
    }
}
