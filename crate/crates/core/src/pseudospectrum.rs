//! ε-pseudospectrum `Spec_eps(H) = {z : rho_H(z) <= eps}` with a certified
//! Hausdorff radius, for operators that need not be normal.
//!
//! Each grid point is classified as
//! - `S`: certainly inside (`rho~ < eps - tau`),
//! - `R`: certainly outside (`rho~ > eps + 2 tau`),
//! - `U`: undecided.
//!
//! The outer loop refines `tau` until every undecided point lies close to `S`.

use std::collections::{HashMap, HashSet};
use std::sync::Mutex;
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{covering_grid, hausdorff_distance, LatticeGrid};
use crate::lower_norm::{bounds_at_scale, rho_tilde};
use crate::operator::{cutoff_length, trim, OperatorSpec};
use crate::spectrum::distinct_sorted;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Class {
    S,
    U,
    R,
}

/// How a classification was decided.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ClassMethod {
    /// `rho~(lambda, tau)` with the scale chosen per point.
    RhoTilde { tau: f64 },
    /// Both bounds at one fixed scale: `S` if `eps_L.hi < eps`, `R` if the gap
    /// bound exceeds `eps`.
    FixedScale { l: f64, width: f64 },
}

/// Certified bounds at one grid point: `lower <= rho_H(lambda) <= upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointBounds {
    #[serde(with = "crate::serde_ext::float")]
    pub lower: f64,
    #[serde(with = "crate::serde_ext::float")]
    pub upper: f64,
    #[serde(with = "crate::serde_ext::float")]
    pub value: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SruClassification {
    pub epsilon: f64,
    pub method: ClassMethod,
    pub grid: LatticeGrid,
    pub bounds: Vec<PointBounds>,
    pub classes: Vec<Class>,
}

impl SruClassification {
    pub fn indices(&self, c: Class) -> Vec<usize> {
        (0..self.classes.len()).filter(|&i| self.classes[i] == c).collect()
    }

    pub fn points(&self, c: Class) -> Vec<Complex64> {
        self.indices(c).into_iter().map(|i| self.grid.point(i)).collect()
    }

    pub fn count(&self, c: Class) -> usize {
        self.classes.iter().filter(|&&x| x == c).count()
    }

    /// Largest Euclidean distance from a `U` point to the nearest `S` point
    /// (`+inf` if `S` is empty and `U` is not).
    pub fn max_undecided_distance(&self) -> f64 {
        let s: HashSet<(i64, i64)> = self.indices(Class::S).into_iter().map(|i| self.grid.indices[i]).collect();
        let h = self.grid.spacing;
        let mut worst: f64 = 0.0;
        for i in self.indices(Class::U) {
            let (a, b) = self.grid.indices[i];
            let mut best = f64::INFINITY;
            let mut r = 0i64;
            while (r as f64 - 1.0) * h < best && !s.is_empty() {
                for da in -r..=r {
                    for db in -r..=r {
                        if da.abs().max(db.abs()) != r || !s.contains(&(a + da, b + db)) {
                            continue;
                        }
                        best = best.min(h * ((da * da + db * db) as f64).sqrt());
                    }
                }
                r += 1;
            }
            worst = worst.max(best);
        }
        worst
    }
}

/// Memo of `rho~` values keyed by `(lambda, tau)`, shared across iterations.
#[derive(Debug, Default)]
pub struct RhoCache {
    map: Mutex<HashMap<(u64, u64, u64), (f64, f64)>>,
}

impl RhoCache {
    fn get_or(&self, op: &OperatorSpec, z: Complex64, tau: f64) -> Result<(f64, f64)> {
        let key = (z.re.to_bits(), z.im.to_bits(), tau.to_bits());
        if let Some(v) = self.map.lock().unwrap().get(&key) {
            return Ok(*v);
        }
        let r = rho_tilde(op, z, tau)?;
        let v = (r.value, r.l_used);
        self.map.lock().unwrap().insert(key, v);
        Ok(v)
    }
}

fn classify_with(op: &OperatorSpec, epsilon: f64, tau: f64, exec: Execution, cache: &RhoCache) -> Result<SruClassification> {
    if !(epsilon > 0.0) || !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon and tau must be positive, got {epsilon}, {tau}")));
    }
    let grid = covering_grid(op.norm_bound + epsilon, tau * 2f64.sqrt())?;
    let pts = grid.points();
    let vals = exec.try_map(&pts, |&z| cache.get_or(op, z, tau))?;
    let bounds: Vec<PointBounds> = vals
        .iter()
        .map(|&(v, l)| PointBounds { lower: (v - tau).max(0.0), upper: v + tau, value: v, scale: l })
        .collect();
    let classes = vals
        .iter()
        .map(|&(v, _)| {
            if v < epsilon - tau {
                Class::S
            } else if v > epsilon + 2.0 * tau {
                Class::R
            } else {
                Class::U
            }
        })
        .collect();
    Ok(SruClassification { epsilon, method: ClassMethod::RhoTilde { tau }, grid, bounds, classes })
}

/// S/R/U classification of `tau sqrt(2) Z^2 ∩ B_{M+eps}(0)`.
pub fn classify_grid(op: &OperatorSpec, epsilon: f64, tau: f64, exec: Execution) -> Result<SruClassification> {
    classify_with(op, epsilon, tau, exec, &RhoCache::default())
}

/// Classification at one fixed section scale `l` on the grid of the given
/// spacing over `B_{M+eps}(0)`; `S` points carry `eps_L.hi < eps`, `R` points
/// carry a gap bound above `eps`.
pub fn classify_fixed_scale(op: &OperatorSpec, epsilon: f64, l: f64, spacing: f64, width: f64, exec: Execution) -> Result<SruClassification> {
    if !(epsilon > 0.0) || !(width > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon and width must be positive, got {epsilon}, {width}")));
    }
    let grid = covering_grid(op.norm_bound + epsilon, spacing)?;
    let pts = grid.points();
    let found = exec.try_map(&pts, |&z| bounds_at_scale(op, z, l, width))?;
    let mut bounds = Vec::with_capacity(found.len());
    let mut classes = Vec::with_capacity(found.len());
    for b in found {
        let upper = b.eps.value.hi;
        classes.push(if upper < epsilon {
            Class::S
        } else if b.gap > epsilon {
            Class::R
        } else {
            Class::U
        });
        bounds.push(PointBounds { lower: b.gap.max(0.0), upper, value: upper, scale: l });
    }
    Ok(SruClassification { epsilon, method: ClassMethod::FixedScale { l, width }, grid, bounds, classes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub j: usize,
    pub tau: f64,
    pub grid_size: usize,
    pub s: usize,
    pub u: usize,
    pub r: usize,
    #[serde(with = "crate::serde_ext::float")]
    pub max_undecided_distance: f64,
    pub scales: Vec<f64>,
    pub terminated: bool,
    pub wall_time_secs: f64,
}

/// `S_tau` at termination, within `hausdorff_radius` of `Spec_eps(H)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudospectrumApprox {
    pub operator: String,
    pub epsilon: f64,
    pub points: Vec<Complex64>,
    pub hausdorff_radius: f64,
    pub trace: Vec<IterationTrace>,
    pub classification: SruClassification,
    /// Trimming length and certified error of the operator actually used.
    pub trim: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoOptions {
    pub max_iter: usize,
    pub exec: Execution,
}

impl Default for PseudoOptions {
    fn default() -> Self {
        PseudoOptions { max_iter: 20, exec: Execution::default() }
    }
}

fn approx_with(op: &OperatorSpec, epsilon: f64, delta: f64, opts: PseudoOptions, cache: &RhoCache) -> Result<PseudospectrumApprox> {
    if !(epsilon > 0.0) || !(delta > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon and delta must be positive, got {epsilon}, {delta}")));
    }
    if opts.max_iter == 0 {
        return Err(Error::InvalidInput("max_iter must be at least 1".into()));
    }
    let mut trace = Vec::new();
    for j in 1..=opts.max_iter {
        let start = Instant::now();
        let tau = delta / 2f64.powi(j as i32);
        let cls = classify_with(op, epsilon, tau, opts.exec, cache)?;
        let dist = cls.max_undecided_distance();
        let done = dist < delta - tau;
        trace.push(IterationTrace {
            j,
            tau,
            grid_size: cls.grid.len(),
            s: cls.count(Class::S),
            u: cls.count(Class::U),
            r: cls.count(Class::R),
            max_undecided_distance: dist,
            scales: distinct_sorted(cls.bounds.iter().map(|b| b.scale).collect()),
            terminated: done,
            wall_time_secs: start.elapsed().as_secs_f64(),
        });
        if done {
            return Ok(PseudospectrumApprox {
                operator: op.id.clone(),
                epsilon,
                points: cls.points(Class::S),
                hausdorff_radius: delta,
                trace,
                classification: cls,
                trim: None,
            });
        }
    }
    let last = trace.last().map(|t| t.max_undecided_distance).unwrap_or(f64::INFINITY);
    Err(Error::IterationCap {
        cap: opts.max_iter,
        detail: format!("undecided points still {last:.4} away from S at tau = {:.3e}", delta / 2f64.powi(opts.max_iter as i32)),
    })
}

/// Refine `tau = delta / 2^j` until every undecided point is within
/// `delta - tau` of `S_tau`; returns `S_tau` with radius `delta`.
pub fn approx_pseudospectrum(op: &OperatorSpec, epsilon: f64, delta: f64, opts: PseudoOptions) -> Result<PseudospectrumApprox> {
    approx_with(op, epsilon, delta, opts, &RhoCache::default())
}

/// Pseudospectrum of a short-range operator: for `tau = 1, 1/2, ...` below
/// `eps`, trim to `||H - G|| <= tau`, bracket between `Spec_{eps-tau}(G)` and
/// `Spec_{eps+tau}(G)` each to `delta/6`, and stop once the brackets are
/// within `delta/2` of each other.
pub fn pseudospectrum_short_range(op: &OperatorSpec, epsilon: f64, delta: f64, opts: PseudoOptions) -> Result<PseudospectrumApprox> {
    if !(epsilon > 0.0) || !(delta > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon and delta must be positive, got {epsilon}, {delta}")));
    }
    let mut last = String::from("no admissible tau below epsilon");
    let mut attempts = 0usize;
    for i in 0..64 {
        let tau = 0.5f64.powi(i);
        if tau >= epsilon {
            continue;
        }
        attempts += 1;
        if attempts > opts.max_iter {
            break;
        }
        let m = cutoff_length(op, tau)?;
        let trimmed = trim(op, m)?;
        if trimmed.delta_trim > tau {
            return Err(Error::Uncertifiable(format!("trimming error {} exceeds {tau}", trimmed.delta_trim)));
        }
        let cache = RhoCache::default();
        let a = approx_with(&trimmed.op, epsilon - tau, delta / 6.0, opts, &cache)?;
        let b = approx_with(&trimmed.op, epsilon + tau, delta / 6.0, opts, &cache)?;
        let gap = if a.points.is_empty() || b.points.is_empty() {
            f64::INFINITY
        } else {
            hausdorff_distance(&a.points, &b.points)?
        };
        if gap <= delta / 2.0 {
            return Ok(PseudospectrumApprox {
                operator: op.id.clone(),
                epsilon,
                hausdorff_radius: delta,
                trim: Some((m, trimmed.delta_trim)),
                ..a
            });
        }
        last = format!("brackets at tau = {tau} are {gap:.4} apart");
    }
    Err(Error::IterationCap { cap: opts.max_iter, detail: last })
}
