use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use super::ClassLabel;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountCheck {
    pub label: ClassLabel,
    pub expected: usize,
    pub actual: usize,
    /// actual − expected
    pub delta: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub title: String,
    pub entries: Vec<CountCheck>,
}

impl ValidationReport {
    pub fn compare(
        title: &str,
        expected: &BTreeMap<ClassLabel, usize>,
        actual: &BTreeMap<ClassLabel, usize>,
    ) -> Self {
        let entries = ClassLabel::ALL
            .into_iter()
            .map(|label| {
                let e = expected.get(&label).copied().unwrap_or(0);
                let a = actual.get(&label).copied().unwrap_or(0);
                CountCheck {
                    label,
                    expected: e,
                    actual: a,
                    delta: a as i64 - e as i64,
                }
            })
            .collect();
        ValidationReport {
            title: title.to_string(),
            entries,
        }
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.delta == 0)
    }

    pub fn delta(&self, label: ClassLabel) -> i64 {
        self.entries
            .iter()
            .find(|e| e.label == label)
            .map_or(0, |e| e.delta)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[{}]", self.title);
        let _ = writeln!(s, "{:<12} {:>9} {:>9} {:>7}", "class", "expected", "actual", "delta");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{:<12} {:>9} {:>9} {:>+7}",
                e.label.name(),
                e.expected,
                e.actual,
                e.delta
            );
        }
        let _ = writeln!(s, "result: {}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }
}

/// Per-class comparison of the manifest's counts against `expected`.
/// Classes missing from `expected` are expected to be absent.
pub fn validate_counts(
    manifest: &DatasetManifest,
    expected: &BTreeMap<ClassLabel, usize>,
) -> ValidationReport {
    ValidationReport::compare("class counts", expected, manifest.class_counts())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::tests::record;

    fn manifest_with(sizes: [usize; 4]) -> DatasetManifest {
        let records = ClassLabel::ALL
            .into_iter()
            .zip(sizes)
            .flat_map(|(c, n)| (0..n).map(move |i| record(&format!("{}{i}", c.name()), "s", c)))
            .collect();
        DatasetManifest::from_records(records).unwrap()
    }

    fn expect(v: [usize; 4]) -> BTreeMap<ClassLabel, usize> {
        ClassLabel::ALL.into_iter().zip(v).collect()
    }

    #[test]
    fn empty_against_zeros_passes() {
        let r = validate_counts(&DatasetManifest::empty(), &expect([0; 4]));
        assert!(r.passed());
        assert!(validate_counts(&DatasetManifest::empty(), &BTreeMap::new()).passed());
    }

    #[test]
    fn row_sums_pass_even_when_caption_total_differs() {
        let m = manifest_with([558, 487, 493, 563]);
        assert_eq!(m.len(), 2101);
        assert!(validate_counts(&m, &expect([558, 487, 493, 563])).passed());
    }

    #[test]
    fn deltas_are_signed_and_rendered() {
        let m = manifest_with([3, 2, 1, 0]);
        let r = validate_counts(&m, &expect([3, 3, 0, 0]));
        assert!(!r.passed());
        assert_eq!(r.delta(ClassLabel::Glioma), -1);
        assert_eq!(r.delta(ClassLabel::Meningioma), 1);
        let text = r.render();
        assert!(text.contains("glioma"));
        assert!(text.contains("-1"));
        assert!(text.trim_end().ends_with("FAIL"));
    }
}
