//! Forward operators for the inverse problems driven by the flows: a generic
//! linear map, the pseudolinear heat-source map, and a Darcy-flow
//! permeability map, together with the Karhunen-Loeve priors used to draw
//! truths and initial ensembles.

pub mod darcy;
pub mod heat1d;
pub mod kl;
pub mod linear;
pub mod pseudo;

use nalgebra::DVector;

use crate::constraints::BoxBounds;
use crate::error::Result;

/// Componentwise bounds derived from a known truth: each side is pulled
/// inward by `slack` times its magnitude, so the truth itself sits close to
/// (or outside) the boundary and the constraint is informative.
///
/// `lower = min u + slack |min u|`, `upper = max u - slack |max u|`.
pub fn make_box_from_truth(truth: &DVector<f64>, slack: f64) -> Result<BoxBounds> {
    let lo = truth.min();
    let hi = truth.max();
    let a = lo + slack * lo.abs();
    let b = hi - slack * hi.abs();
    // BoxBounds rejects a >= b, which covers constant truths and oversized
    // slack values.
    BoxBounds::uniform(truth.nrows(), a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_from_truth_pulls_inward() {
        let truth = DVector::from_vec(vec![-2.0, 0.5, 3.0]);
        let b = make_box_from_truth(&truth, 0.3).unwrap();
        assert!((b.lower[0] + 1.4).abs() < 1e-14);
        assert!((b.upper[0] - 2.1).abs() < 1e-14);
        assert_eq!(b.indices.len(), 3);
    }

    #[test]
    fn box_from_truth_rejects_crossing_bounds() {
        // bounds cross once slack exceeds the spread
        let truth = DVector::from_vec(vec![-1.0, 1.0]);
        assert!(make_box_from_truth(&truth, 1.2).is_err());
        let constant = DVector::from_element(3, 2.0);
        assert!(make_box_from_truth(&constant, 0.3).is_err());
    }
}
