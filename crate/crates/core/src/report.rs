use std::collections::BTreeMap;

use serde::Serialize;

/// One evaluated point of an inequality check: the check passes at this
/// point when `margin >= -tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckPoint {
    pub at: f64,
    pub margin: f64,
    pub tolerance: f64,
}

impl CheckPoint {
    pub fn new(at: f64, margin: f64, tolerance: f64) -> Self {
        CheckPoint { at, margin, tolerance }
    }

    pub fn holds(&self) -> bool {
        self.margin >= -self.tolerance
    }
}

/// Machine-readable verdict for one verified inequality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub name: String,
    pub constants: BTreeMap<String, f64>,
    pub points: Vec<CheckPoint>,
    pub notes: Vec<String>,
    pub pass: bool,
}

impl BoundReport {
    pub fn new(name: impl Into<String>) -> Self {
        BoundReport { name: name.into(), constants: BTreeMap::new(), points: Vec::new(), notes: Vec::new(), pass: true }
    }

    pub fn constant(mut self, key: &str, value: f64) -> Self {
        self.constants.insert(key.to_string(), value);
        self
    }

    pub fn set_constant(&mut self, key: &str, value: f64) {
        self.constants.insert(key.to_string(), value);
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn push(&mut self, point: CheckPoint) {
        self.pass &= point.holds();
        self.points.push(point);
    }

    /// Forces a failing verdict for a condition that is not a point margin.
    pub fn fail(&mut self, why: impl Into<String>) {
        self.pass = false;
        self.notes.push(why.into());
    }

    pub fn violations(&self) -> usize {
        self.points.iter().filter(|p| !p.holds()).count()
    }

    pub fn worst_margin(&self) -> Option<f64> {
        self.points.iter().map(|p| p.margin).reduce(f64::min)
    }

    /// Worst margin measured in units of the per-point tolerance.
    pub fn worst_scaled_margin(&self) -> Option<f64> {
        self.points
            .iter()
            .map(|p| if p.tolerance > 0.0 { p.margin / p.tolerance } else { p.margin.signum() * f64::INFINITY })
            .reduce(f64::min)
    }

    pub fn summary(&self) -> String {
        format!(
            "{} {}: {} points, {} violations, worst margin {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.points.len(),
            self.violations(),
            self.worst_margin().map_or("n/a".to_string(), |m| format!("{m:.6e}")),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_follows_margins() {
        let mut r = BoundReport::new("demo");
        r.push(CheckPoint::new(0.0, 0.5, 0.0));
        r.push(CheckPoint::new(1.0, -0.1, 0.2));
        assert!(r.pass);
        r.push(CheckPoint::new(2.0, -0.3, 0.2));
        assert!(!r.pass);
        assert_eq!(r.violations(), 1);
        assert_eq!(r.worst_margin(), Some(-0.3));
    }

    #[test]
    fn fail_overrides() {
        let mut r = BoundReport::new("x");
        r.fail("infeasible");
        assert!(!r.pass);
        assert!(r.summary().starts_with("FAIL x"));
    }
}
