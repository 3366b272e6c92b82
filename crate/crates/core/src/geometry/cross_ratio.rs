use crate::{Error, Result};

/// Cross-ratio of four collinear points given by their signed positions along
/// the common line: `((a − c)(b − d)) / ((a − d)(b − c))`.
///
/// The value is unchanged by any projective map of the line, which is what
/// lets a bead stick be recognized in a single projection.
pub fn cross_ratio(a: f64, b: f64, c: f64, d: f64) -> Result<f64> {
    const TOL: f64 = 1e-12;
    let ad = a - d;
    let bc = b - c;
    if ad.abs() < TOL || bc.abs() < TOL {
        return Err(Error::DegenerateQuadruple);
    }
    Ok(((a - c) * (b - d)) / (ad * bc))
}
