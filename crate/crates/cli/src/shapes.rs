//! Obstacle specifications on the command line.

use std::path::Path;

use ddm_core::geometry::{FourierCurve, ParametricShape};
use ddm_core::{Error, Result};

/// Parse `disk`, `circle:R`, `pear`, `rounded-square` or
/// `fourier:q0,a1,b1,...`.
pub fn parse_shape(spec: &str, n_lambda: usize, s: f64) -> Result<ParametricShape> {
    let bad = || Error::Config(format!("unknown shape '{spec}'; try disk, circle:R, pear, rounded-square or fourier:q0,a1,b1,..."));
    let (name, arg) = match spec.split_once(':') {
        Some((n, a)) => (n.trim(), Some(a.trim())),
        None => (spec.trim(), None),
    };
    match (name, arg) {
        ("disk", None) => Ok(ParametricShape::unit_disk()),
        ("circle", Some(r)) => {
            let r: f64 = r.parse().map_err(|_| bad())?;
            if !(r > 0.0 && r.is_finite()) {
                return Err(bad());
            }
            Ok(FourierCurve::circle(r, n_lambda, s).into())
        }
        ("pear", None) => Ok(ParametricShape::Pear),
        ("rounded-square", None) => Ok(ParametricShape::RoundedSquare),
        ("fourier", Some(list)) => {
            let q = list.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?;
            Ok(FourierCurve::from_slice(&q, s).map_err(|e| Error::Config(format!("{spec}: {e}")))?.into())
        }
        _ => Err(bad()),
    }
}

/// A recovered curve: a Fourier-type shape spec, or a JSON result file with a
/// `coefficients` array. Relative file paths resolve against `base`.
pub fn parse_recovered(spec: &str, base: &Path, n_lambda: usize, s: f64) -> Result<FourierCurve> {
    if Path::new(spec).extension().is_some_and(|e| e == "json") {
        let path = base.join(spec);
        let text = std::fs::read_to_string(&path)?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{spec}: {e}")))?;
        let q: Vec<f64> = value
            .get("coefficients")
            .and_then(|c| serde_json::from_value(c.clone()).ok())
            .ok_or_else(|| Error::Format(format!("{spec} has no coefficients array")))?;
        return FourierCurve::from_slice(&q, s);
    }
    match parse_shape(spec, n_lambda, s)? {
        ParametricShape::Fourier { curve } => Ok(curve),
        other => Err(Error::Config(format!("{} is not a Fourier curve", other.name()))),
    }
}
