/// Worst-case disagreement between an implementation and an oracle.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OracleReport {
    pub max_abs: f64,
    pub max_rel: f64,
    /// Labels of entries whose relative error exceeded the tolerance.
    pub failing: Vec<String>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.failing.is_empty()
    }

    pub fn merge(&mut self, other: OracleReport) {
        self.max_abs = self.max_abs.max(other.max_abs);
        self.max_rel = self.max_rel.max(other.max_rel);
        self.failing.extend(other.failing);
    }
}

/// Compares `actual` with `expected` entrywise. The relative error of an entry
/// is `|a - e| / max(|e|, floor)`, so entries far below `floor` are judged on
/// absolute error.
pub fn compare(label: &str, actual: &[f64], expected: &[f64], floor: f64, rel_tol: f64) -> OracleReport {
    let mut report = OracleReport::default();
    if actual.len() != expected.len() {
        report.failing.push(format!("{label}: length {} vs {}", actual.len(), expected.len()));
        report.max_abs = f64::INFINITY;
        report.max_rel = f64::INFINITY;
        return report;
    }
    for (k, (a, e)) in actual.iter().zip(expected).enumerate() {
        let abs = (a - e).abs();
        let rel = abs / e.abs().max(floor);
        let abs = if abs.is_nan() { f64::INFINITY } else { abs };
        let rel = if rel.is_nan() { f64::INFINITY } else { rel };
        report.max_abs = report.max_abs.max(abs);
        report.max_rel = report.max_rel.max(rel);
        if rel > rel_tol {
            report.failing.push(format!("{label}[{k}]: {a} vs {e}"));
        }
    }
    report
}
