//! Spectrum of normal operators with a certified Hausdorff radius.
//!
//! For normal `H`, `rho_H(lambda) = d(lambda, Spec H)`. Evaluating
//! `rho~(lambda, tau/4)` on a grid of covering radius `tau/4` inside `B_M(0)`
//! and keeping the points with `rho~ < tau/2` yields a set within `tau` of
//! the spectrum.

use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::covering_grid;
use crate::lower_norm::rho_tilde;
use crate::operator::{cutoff_length, trim, OperatorSpec};

/// Certificate of one accepted grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptedPoint {
    pub lambda: Complex64,
    /// `rho~(lambda, tau/4)`, below `tau/2`.
    pub rho_tilde: f64,
    /// Scale `L` of the uneven sections that produced it.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumDiagnostics {
    /// Distinct section scales used, ascending.
    pub scales: Vec<f64>,
    pub grid_size: usize,
    pub grid_spacing: f64,
    pub wall_time_secs: f64,
    /// Trimming length and certified trimming error, if the input was trimmed.
    pub trim: Option<(f64, f64)>,
}

/// A finite set within `hausdorff_radius` of the spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumApprox {
    pub operator: String,
    pub tau: f64,
    pub points: Vec<AcceptedPoint>,
    pub hausdorff_radius: f64,
    pub diagnostics: SpectrumDiagnostics,
}

impl SpectrumApprox {
    pub fn lambdas(&self) -> Vec<Complex64> {
        self.points.iter().map(|p| p.lambda).collect()
    }
}

pub(crate) fn distinct_sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup();
    v
}

/// Grid points with `rho~(lambda, tau/4) < tau/2`, within `tau` of `Spec H`.
pub fn approx_spectrum(op: &OperatorSpec, tau: f64, exec: Execution) -> Result<SpectrumApprox> {
    if !op.normal {
        return Err(Error::NotNormal(format!("{} must be declared normal for spectrum approximation", op.id)));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
    }
    let start = Instant::now();
    let spacing = tau * 2f64.sqrt() / 4.0;
    let grid = covering_grid(op.norm_bound.max(tau / 4.0), spacing)?;
    let lambdas = grid.points();
    let evals = exec.try_map(&lambdas, |&z| rho_tilde(op, z, tau / 4.0))?;
    let scales = distinct_sorted(evals.iter().map(|r| r.l_used).collect());
    let points = evals
        .into_iter()
        .filter(|r| r.value < tau / 2.0)
        .map(|r| AcceptedPoint { lambda: r.lambda, rho_tilde: r.value, scale: r.l_used })
        .collect();
    Ok(SpectrumApprox {
        operator: op.id.clone(),
        tau,
        points,
        hausdorff_radius: tau,
        diagnostics: SpectrumDiagnostics {
            scales,
            grid_size: lambdas.len(),
            grid_spacing: spacing,
            wall_time_secs: start.elapsed().as_secs_f64(),
            trim: None,
        },
    })
}

/// Spectrum within `2^-k`: trim so that `||H - G^m|| <= 2^-(k+1)`, then
/// approximate `Spec G^m` to `2^-(k+1)`.
pub fn spectrum_with_error(op: &OperatorSpec, k: u32, exec: Execution) -> Result<SpectrumApprox> {
    if k > 30 {
        return Err(Error::InvalidInput(format!("k = {k} is beyond any practical resolution")));
    }
    let tau = 0.5f64.powi(k as i32 + 1);
    let m = cutoff_length(op, tau)?;
    let trimmed = trim(op, m)?;
    if trimmed.delta_trim > tau {
        return Err(Error::Uncertifiable(format!("trimming error {} exceeds {tau}", trimmed.delta_trim)));
    }
    let mut out = approx_spectrum(&trimmed.op, tau, exec)?;
    out.operator = op.id.clone();
    out.hausdorff_radius = 2.0 * tau;
    out.diagnostics.trim = Some((m, trimmed.delta_trim));
    Ok(out)
}
