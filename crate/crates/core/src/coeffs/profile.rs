use serde::Serialize;

use super::{ExprError, Expression};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanRange {
    pub lo: f64,
    pub hi: f64,
}

impl ScanRange {
    pub fn new(lo: f64, hi: f64) -> Self {
        ScanRange { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Grid-scan bounds of a coefficient and its derivative.
///
/// `lower`/`upper`/`derivative_sup` are estimates from evaluating on
/// `scan_points` equispaced points of `scan_range`; they are not certified
/// global bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientProfile {
    #[serde(serialize_with = "display_expr")]
    pub expr: Expression,
    #[serde(serialize_with = "display_expr")]
    pub derivative: Expression,
    pub lower: f64,
    pub upper: f64,
    pub derivative_sup: f64,
    pub scan_range: ScanRange,
    pub scan_points: usize,
}

fn display_expr<S: serde::Serializer>(e: &Expression, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(e)
}

impl CoefficientProfile {
    pub fn eval(&self, x: f64) -> Result<f64, ExprError> {
        self.expr.eval(x)
    }

    pub fn eval_derivative(&self, x: f64) -> Result<f64, ExprError> {
        self.derivative.eval(x)
    }

    /// sup |f| over the scan.
    pub fn sup_abs(&self) -> f64 {
        self.lower.abs().max(self.upper.abs())
    }

    pub fn note(&self) -> &'static str {
        "bounds are grid-scan estimates, not proofs"
    }
}

pub(crate) fn scan_points(range: ScanRange, points: usize) -> impl Iterator<Item = f64> {
    let step = (range.hi - range.lo) / (points - 1) as f64;
    (0..points).map(move |i| if i + 1 == points { range.hi } else { range.lo + step * i as f64 })
}

pub fn profile(expr: &Expression, range: ScanRange, points: usize) -> Result<CoefficientProfile, ExprError> {
    if points < 2 {
        return Err(ExprError::InvalidScan(format!("need at least 2 points, got {points}")));
    }
    if !(range.lo.is_finite() && range.hi.is_finite() && range.lo < range.hi) {
        return Err(ExprError::InvalidScan(format!("bad range [{}, {}]", range.lo, range.hi)));
    }
    let derivative = expr.differentiate();
    let mut lower = f64::INFINITY;
    let mut upper = f64::NEG_INFINITY;
    let mut derivative_sup = 0.0f64;
    for x in scan_points(range, points) {
        let v = expr.eval(x)?;
        lower = lower.min(v);
        upper = upper.max(v);
        derivative_sup = derivative_sup.max(derivative.eval(x)?.abs());
    }
    Ok(CoefficientProfile {
        expr: expr.clone(),
        derivative,
        lower,
        upper,
        derivative_sup,
        scan_range: range,
        scan_points: points,
    })
}
