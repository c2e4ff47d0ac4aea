//! Scatter of repeated line-centre fits with the fit noise removed.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stability {
    /// Sample standard deviation of the centres.
    pub raw_std: f64,
    /// `√(raw² − σ_fit²)`, or 0 when the scatter is within the fit noise.
    pub excess_std: f64,
    /// Set when the raw scatter does not exceed the fit noise.
    pub within_fit_noise: bool,
}

pub fn stability_statistics(centers: &[f64], fit_sigma: f64) -> Result<Stability> {
    if centers.len() < 3 {
        return Err(Error::Domain(format!(
            "need at least 3 centres, got {}",
            centers.len()
        )));
    }
    if !(fit_sigma >= 0.0) {
        return Err(Error::Domain(format!(
            "fit sigma must be >= 0, got {fit_sigma}"
        )));
    }
    let n = centers.len() as f64;
    let mean = centers.iter().sum::<f64>() / n;
    let raw_std = (centers.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(excess(raw_std, fit_sigma))
}

/// Quadrature subtraction of `fit_sigma` from an already measured scatter.
pub fn excess(raw_std: f64, fit_sigma: f64) -> Stability {
    let within = raw_std <= fit_sigma;
    Stability {
        raw_std,
        excess_std: if within {
            0.0
        } else {
            (raw_std * raw_std - fit_sigma * fit_sigma).sqrt()
        },
        within_fit_noise: within,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_subtraction() {
        assert!((excess(9.0, 6.0).excess_std - 6.708).abs() < 1e-3);
        let s = excess(6.0, 6.0);
        assert_eq!(s.excess_std, 0.0);
        assert!(s.within_fit_noise);
        assert_eq!(excess(9.0, 0.0).excess_std, 9.0);
        let s = stability_statistics(&[1.0, 2.0, 3.0], 0.0).unwrap();
        assert_eq!(s.raw_std, 1.0);
        assert!(stability_statistics(&[1.0, 2.0], 0.0).is_err());
    }
}
