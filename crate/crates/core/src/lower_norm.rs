//! Lower norm `rho_H(lambda) = inf ||(H - lambda) psi||` and its certified
//! approximations: `eps_{L,lambda}` from above, the gap bound from below, and
//! `rho~(lambda, tau)` with `|rho - rho~| <= tau`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{norm_shift_bound, OperatorSpec};
use crate::section::CertifiedValue;

/// Share of the `rho~` budget spent on the scale choice; the rest absorbs
/// the width of the singular-value interval.
const SCALE_SHARE: f64 = 0.9;
const WIDTH_SHARE: f64 = 0.1;

/// `eps_{L,lambda}`: minimum over the catalog of the smallest singular value
/// of the uneven sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonL {
    pub l: f64,
    pub lambda: Complex64,
    pub value: CertifiedValue,
    pub witness_patch: usize,
    pub patches: usize,
}

pub fn epsilon_l(op: &OperatorSpec, l: f64, lambda: Complex64, width: f64) -> Result<EpsilonL> {
    let m = op.finite_range()?;
    if !(l > m) {
        return Err(Error::Precondition(format!("scale L = {l} must exceed the range m = {m}")));
    }
    if !(width > 0.0) {
        return Err(Error::InvalidInput(format!("interval width must be positive, got {width}")));
    }
    let sections = op.section_catalog(l)?;
    if !sections.complete {
        return Err(Error::Catalog(format!("catalog of {} at L = {l} is not certified complete", op.id)));
    }
    if sections.kernels.is_empty() {
        return Err(Error::Catalog(format!("catalog of {} at L = {l} is empty", op.id)));
    }
    let mut best: Option<(CertifiedValue, usize)> = None;
    let mut lo = f64::INFINITY;
    for k in &sections.kernels {
        let v = k.smallest_singular_interval(lambda, width);
        lo = lo.min(v.lo);
        if best.as_ref().is_none_or(|b| v.hi < b.0.hi) {
            best = Some((v, k.patch_id));
        }
    }
    let (mut value, witness_patch) = best.unwrap();
    value.lo = lo;
    value.note = format!("min over {} patches at L = {l}: {}", sections.kernels.len(), value.note);
    Ok(EpsilonL { l, lambda, value, witness_patch, patches: sections.kernels.len() })
}

/// `delta_L = n / floor(L/m)`.
pub fn delta_l(n: usize, m: f64, l: f64) -> Result<f64> {
    if !(m > 0.0) || n == 0 {
        return Err(Error::InvalidInput("delta_L needs n >= 1 and m > 0".into()));
    }
    if !(l > m) {
        return Err(Error::Precondition(format!("delta_L needs L > m, got L = {l}, m = {m}")));
    }
    Ok(n as f64 / (l / m).floor())
}

/// `eps.lo * sqrt(1 - delta_L) - M_shift * sqrt(delta_L)`, a lower bound on
/// `rho_H(lambda)`; may be negative.
pub fn gap_lower_bound(eps: &EpsilonL, m_shift: f64, n: usize, m: f64) -> Result<f64> {
    let d = delta_l(n, m, eps.l)?;
    if d >= 1.0 {
        return Err(Error::Precondition(format!("delta_L = {d} >= 1 at L = {}; the bound is vacuous", eps.l)));
    }
    Ok(eps.value.lo * (1.0 - d).sqrt() - m_shift * d.sqrt())
}

/// `f(eps, delta) = eps (1 - sqrt(1 - delta)) + M sqrt(delta)`.
pub fn gap_excess(eps: f64, delta: f64, m_shift: f64) -> f64 {
    eps * (1.0 - (1.0 - delta).sqrt()) + m_shift * delta.sqrt()
}

/// `max(L0, m ceil(n / delta')) + m`.
pub fn scale_for_delta(n: usize, m: f64, l0: f64, delta_prime: f64) -> f64 {
    l0.max(m * (n as f64 / delta_prime).ceil()) + m
}

/// Outcome of the scale selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleChoice {
    pub l: f64,
    pub l0: f64,
    #[serde(with = "crate::serde_ext::float")]
    pub eps0: f64,
    pub delta_prime: f64,
    pub m_shift: f64,
}

/// Scale `L` at which `eps_{L,lambda}` is within `tau` of `rho_H(lambda)`.
pub fn choose_l(op: &OperatorSpec, lambda: Complex64, tau: f64) -> Result<ScaleChoice> {
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
    }
    let m = op.finite_range()?;
    let l0 = m + 1.0;
    let eps0 = epsilon_l(op, l0, lambda, tau * WIDTH_SHARE)?.value.hi;
    let m_shift = norm_shift_bound(op, lambda);
    let mut delta = 0.5f64;
    while gap_excess(eps0, delta, m_shift) >= tau {
        delta *= 0.5;
        if delta < 1e-300 {
            return Err(Error::Uncertifiable(format!("no scale reaches tau = {tau}")));
        }
    }
    Ok(ScaleChoice { l: scale_for_delta(op.n, m, l0, delta), l0, eps0, delta_prime: delta, m_shift })
}

/// `rho~(lambda, tau)` with the certificate `|rho_H(lambda) - value| <= tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoTilde {
    pub lambda: Complex64,
    pub tau: f64,
    #[serde(with = "crate::serde_ext::float")]
    pub value: f64,
    pub l_used: f64,
    pub eps: EpsilonL,
    pub choice: ScaleChoice,
}

pub fn rho_tilde(op: &OperatorSpec, lambda: Complex64, tau: f64) -> Result<RhoTilde> {
    let choice = choose_l(op, lambda, SCALE_SHARE * tau)?;
    let eps = epsilon_l(op, choice.l, lambda, WIDTH_SHARE * tau)?;
    Ok(RhoTilde { lambda, tau, value: eps.value.hi.max(0.0), l_used: choice.l, eps, choice })
}

/// Both bounds at a fixed scale: `gap <= rho_H(lambda) <= eps.value.hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleBounds {
    pub eps: EpsilonL,
    #[serde(with = "crate::serde_ext::float")]
    pub gap: f64,
}

pub fn bounds_at_scale(op: &OperatorSpec, lambda: Complex64, l: f64, width: f64) -> Result<ScaleBounds> {
    let m = op.finite_range()?;
    let eps = epsilon_l(op, l, lambda, width)?;
    let gap = gap_lower_bound(&eps, norm_shift_bound(op, lambda), op.n, m)?;
    Ok(ScaleBounds { eps, gap })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_examples() {
        assert!((delta_l(1, 1.0, 10.0).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(delta_l(2, 3.0, 7.0).unwrap(), 1.0);
        assert!(delta_l(1, 1.0, 1.0).is_err());
    }

    fn fake_eps(lo: f64, l: f64) -> EpsilonL {
        EpsilonL {
            l,
            lambda: Complex64::new(0.0, 0.0),
            value: CertifiedValue { lo, hi: lo, width: 0.0, note: String::new() },
            witness_patch: 0,
            patches: 1,
        }
    }

    #[test]
    fn gap_examples() {
        let g = gap_lower_bound(&fake_eps(1.0, 100.0), 5.0, 1, 1.0).unwrap();
        assert!((g - (0.99f64.sqrt() - 0.5)).abs() < 1e-15);
        assert!((g - 0.49499).abs() < 1e-5);
        assert!(gap_lower_bound(&fake_eps(0.0, 100.0), 5.0, 1, 1.0).unwrap() <= 0.0);
        assert!(gap_lower_bound(&fake_eps(1.0, 7.0), 5.0, 2, 3.0).is_err());
    }

    #[test]
    fn excess_and_scale_examples() {
        assert!((gap_excess(4.0, 0.01, 4.0) - 0.42005).abs() < 1e-4);
        assert_eq!(scale_for_delta(1, 1.0, 2.0, 0.01), 101.0);
        let mut d = 0.5;
        while gap_excess(4.0, d, 4.0) >= 1.0 {
            d *= 0.5;
        }
        assert_eq!(d, 1.0 / 32.0);
        assert_eq!(scale_for_delta(1, 1.0, 2.0, d), 33.0);
    }
}
