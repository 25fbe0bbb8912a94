//! Model zoo on `Z^n` with complete patch enumerators and validation oracles.
//!
//! Every model is a tight-binding operator `H = onsite + V(x) + hopping`.
//! A catalog at scale `R` is produced by combining
//! - all *frames*: the shapes `B_R(x) ∩ Z^n` (and `B_L(x) ∩ Z^n`) as the
//!   centre `x` ranges over R^n, found from the breakpoints of the fractional
//!   part of `x` on each axis, and
//! - all *environments*: the distinct local contents of the potential
//!   (lattice shifts for periodic models, hull parameters for irrational
//!   rotations, all words for Bernoulli models).
//!
//! Duplicates under translation and diagonal gauge are removed by
//! [`CatalogBuilder`].

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{strictly_inside, BOUNDARY_TOL};
use crate::operator::{
    schur_norm_bound, CatalogBuilder, CatalogRequest, Decay, OperatorParts, OperatorSpec, Patch, PatchCatalog, PatchOracle,
    PointCloud, Range, SparseMatrix,
};

/// A real or complex number in model files: `1.5` or `[1.0, 1.0]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Real(f64),
    Complex([f64; 2]),
}

impl Scalar {
    pub fn value(self) -> Complex64 {
        match self {
            Scalar::Real(x) => Complex64::new(x, 0.0),
            Scalar::Complex([re, im]) => Complex64::new(re, im),
        }
    }
}

impl From<f64> for Scalar {
    fn from(x: f64) -> Self {
        Scalar::Real(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelKind {
    /// `2n - sum of nearest neighbours` on `Z^n`.
    FreeLaplacian {
        #[serde(default = "one")]
        dimension: usize,
    },
    /// 1D Schrödinger operator with periodic potential `V(k) = potential[k mod p]`.
    Periodic { potential: Vec<Scalar> },
    /// Multiplication by the periodic sequence `values` on `Z` (no hopping).
    Diagonal { values: Vec<Scalar> },
    /// 1D Schrödinger operator with `V(k) = amplitude * 1({alpha k} < 1/alpha)`.
    CutProject { alpha: f64, amplitude: Scalar },
    /// 1D Schrödinger operator with `V(k) = amplitude * 1(alpha k < 1/alpha)`.
    Jump { alpha: f64, amplitude: Scalar },
    /// Magnetic Laplacian on `Z^2` with flux `p/q` per plaquette, Landau gauge
    /// anchored at column `gauge_origin`.
    Hofstadter {
        p: i64,
        q: i64,
        #[serde(default)]
        gauge_origin: i64,
    },
    /// 1D Schrödinger operator with `V(k) in {values[0], values[1]}`. Catalogs
    /// list every word; sections use the periodic realization of `word`.
    Bernoulli {
        values: [Scalar; 2],
        #[serde(default)]
        word: Option<Vec<u8>>,
    },
    /// 1D operator with `H_{x,x+d} = amplitude d^{-exponent}` and
    /// `H_{x+d,x} = asymmetry * amplitude d^{-exponent}` for `d >= 1`.
    PowerLaw {
        amplitude: f64,
        exponent: f64,
        #[serde(default = "unit")]
        asymmetry: f64,
    },
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

/// A model file. `onsite` defaults to `2n` for Schrödinger-type kinds and to 0
/// for `diagonal` and `power-law`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub onsite: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<Decay>,
}

impl ModelDef {
    pub fn new(kind: ModelKind) -> Self {
        ModelDef { name: None, kind, onsite: None, norm_bound: None, decay: None }
    }

    pub fn with_onsite(mut self, v: impl Into<Scalar>) -> Self {
        self.onsite = Some(v.into());
        self
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = Some(name.to_string());
        self
    }

    pub fn dimension(&self) -> usize {
        match &self.kind {
            ModelKind::FreeLaplacian { dimension } => *dimension,
            ModelKind::Hofstadter { .. } => 2,
            _ => 1,
        }
    }

    fn default_onsite(&self) -> Complex64 {
        match self.kind {
            ModelKind::Diagonal { .. } | ModelKind::PowerLaw { .. } => Complex64::new(0.0, 0.0),
            _ => Complex64::new(2.0 * self.dimension() as f64, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(Error::InvalidInput(s));
        match &self.kind {
            ModelKind::FreeLaplacian { dimension } if !(1..=3).contains(dimension) => {
                return Err(Error::Unsupported(format!("free-laplacian in dimension {dimension}")))
            }
            ModelKind::Periodic { potential } if potential.is_empty() || potential.len() > 4096 => {
                return bad("periodic potential needs 1..=4096 values".into())
            }
            ModelKind::Diagonal { values } if values.is_empty() || values.len() > 4096 => {
                return bad("diagonal model needs 1..=4096 values".into())
            }
            ModelKind::CutProject { alpha, .. } if !(*alpha > 1.0 && alpha.is_finite()) => {
                return bad(format!("cut-project needs alpha > 1, got {alpha}"))
            }
            ModelKind::Jump { alpha, .. } if !(*alpha > 0.0 && alpha.is_finite()) => {
                return bad(format!("jump needs alpha > 0, got {alpha}"))
            }
            ModelKind::Hofstadter { p, q, .. } => {
                if *q < 1 || *q > 4096 {
                    return bad(format!("hofstadter flux denominator must be in 1..=4096, got {q}"));
                }
                if gcd(p.unsigned_abs(), q.unsigned_abs()) != 1 {
                    return bad(format!("hofstadter flux {p}/{q} is not in lowest terms"));
                }
            }
            ModelKind::Bernoulli { word: Some(w), .. } if w.is_empty() || w.iter().any(|&b| b > 1) => {
                return bad("bernoulli word must be a nonempty list of 0/1".into())
            }
            ModelKind::PowerLaw { amplitude, exponent, asymmetry } => {
                if !(*exponent > 1.0) {
                    return bad(format!("power-law exponent must exceed 1, got {exponent}"));
                }
                if !(amplitude.is_finite() && asymmetry.is_finite()) {
                    return bad("power-law amplitude and asymmetry must be finite".into());
                }
            }
            _ => {}
        }
        if let Some(m) = self.norm_bound {
            if !(m >= 0.0 && m.is_finite()) {
                return bad(format!("norm_bound must be finite and nonnegative, got {m}"));
            }
        }
        Ok(())
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Named models shipped with the crate.
pub fn builtin(name: &str) -> Option<ModelDef> {
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    let d = match name {
        "free1d" => ModelDef::new(ModelKind::FreeLaplacian { dimension: 1 }),
        "free2d" => ModelDef::new(ModelKind::FreeLaplacian { dimension: 2 }),
        "period2" => ModelDef::new(ModelKind::Periodic { potential: vec![0.0.into(), 2.0.into()] }),
        "fig1" => ModelDef::new(ModelKind::CutProject { alpha: 1.66, amplitude: Scalar::Complex([1.0, 1.0]) }).with_onsite(0.0),
        "jump" => ModelDef::new(ModelKind::Jump { alpha: 1.66, amplitude: Scalar::Complex([1.0, 1.0]) }).with_onsite(0.0),
        "fibonacci" => ModelDef::new(ModelKind::CutProject { alpha: golden, amplitude: 1.0.into() }),
        "hofstadter" => ModelDef::new(ModelKind::Hofstadter { p: 1, q: 3, gauge_origin: 0 }),
        "diag03" => ModelDef::new(ModelKind::Diagonal { values: vec![0.0.into(), 3.0.into()] }),
        "bernoulli" => ModelDef::new(ModelKind::Bernoulli { values: [0.0.into(), 1.0.into()], word: None }),
        "powerlaw" => ModelDef::new(ModelKind::PowerLaw { amplitude: 1.0, exponent: 3.0, asymmetry: 1.0 }),
        _ => return None,
    };
    Some(d.named(name))
}

pub const BUILTIN_NAMES: &[&str] =
    &["free1d", "free2d", "period2", "fig1", "jump", "fibonacci", "hofstadter", "diag03", "bernoulli", "powerlaw"];

/// `p/q` with `q <= 10^6` and `|alpha - p/q| <= 1e-15 alpha`, if any.
pub fn rational_approximation(alpha: f64) -> Option<(i64, i64)> {
    let (mut h0, mut h1) = (0i128, 1i128);
    let (mut k0, mut k1) = (1i128, 0i128);
    let mut x = alpha;
    for _ in 0..64 {
        let a = x.floor();
        if a.abs() > 1e12 {
            return None;
        }
        let ai = a as i128;
        let (h2, k2) = (ai * h1 + h0, ai * k1 + k0);
        if k2 > 1_000_000 {
            return None;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        if (alpha - h1 as f64 / k1 as f64).abs() <= 1e-15 * alpha.abs() {
            return Some((h1 as i64, k1 as i64));
        }
        let frac = x - a;
        if frac <= 0.0 {
            return None;
        }
        x = 1.0 / frac;
    }
    None
}

#[derive(Debug, Clone)]
enum Potential {
    Zero,
    Periodic(Vec<Complex64>),
    RationalCut { p: i128, q: i128, amp: Complex64 },
    IrrationalCut { alpha: f64, beta: f64, amp: Complex64 },
    Jump { alpha: f64, amp: Complex64 },
    Bernoulli { values: [Complex64; 2], word: Vec<u8> },
}

#[derive(Debug, Clone, Copy)]
enum Hopping {
    None,
    Nearest,
    Magnetic { p: i64, q: i64, x0: i64 },
    PowerLaw { amp: f64, s: f64, asym: f64 },
}

/// Local content of the potential. `Shift(b)` is the global realization seen
/// from base site `b`; the others only occur inside catalogs.
#[derive(Debug, Clone)]
enum Env {
    Shift(Vec<i64>),
    Hull(f64),
    Word { lo: i64, bits: Vec<u8> },
}

#[derive(Debug)]
struct Lattice {
    n: usize,
    onsite: Complex64,
    pot: Potential,
    hop: Hopping,
    special_sites: OnceLock<Vec<i64>>,
}

/// One axis of a frame: rows `rel in [lo, hi]`, columns `[clo, chi]` (if any),
/// for a centre with fractional part `phi`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Frame1 {
    phi: f64,
    lo: i64,
    hi: i64,
    cols: Option<(i64, i64)>,
}

fn ball_interval(phi: f64, r: f64) -> Option<(i64, i64)> {
    let a = (phi - r).floor() as i64 - 1;
    let b = (phi + r).ceil() as i64 + 1;
    let inside: Vec<i64> = (a..=b).filter(|&k| strictly_inside((k as f64 - phi).abs(), r)).collect();
    Some((*inside.first()?, *inside.last()?))
}

fn frames_1d(outer: f64, inner: Option<f64>) -> Vec<Frame1> {
    let frac = |x: f64| x.rem_euclid(1.0);
    let mut bps = vec![0.0, frac(outer), frac(-outer)];
    if let Some(l) = inner {
        bps.push(frac(l));
        bps.push(frac(-l));
    }
    bps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    bps.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let mut cands = bps.clone();
    for i in 0..bps.len() {
        let next = if i + 1 < bps.len() { bps[i + 1] } else { bps[0] + 1.0 };
        cands.push(frac(0.5 * (bps[i] + next)));
    }
    let mut out: Vec<Frame1> = Vec::new();
    for phi in cands {
        let Some((lo, hi)) = ball_interval(phi, outer) else { continue };
        let cols = inner.and_then(|l| ball_interval(phi, l));
        if inner.is_some() && cols.is_none() {
            continue;
        }
        let shape = |f: &Frame1| (f.hi - f.lo, f.cols.map(|(a, b)| (a - f.lo, b - f.lo)));
        let fr = Frame1 { phi, lo, hi, cols };
        if !out.iter().any(|g| shape(g) == shape(&fr)) {
            out.push(fr);
        }
    }
    out
}

const COINCIDENCE_RANGE: i64 = 1_000_000;
/// Hull breakpoints closer than this are one breakpoint; matches the coincidence tolerance.
const HULL_MERGE_TOL: f64 = 1e-9;
/// Candidate patches times points per patch; bounds both time and memory.
const MAX_CATALOG_WORK: f64 = 5e7;

impl Lattice {
    fn from_def(def: &ModelDef) -> Result<Self> {
        def.validate()?;
        let onsite = def.onsite.map_or(def.default_onsite(), Scalar::value);
        let c = |v: &Vec<Scalar>| v.iter().map(|s| s.value()).collect::<Vec<_>>();
        let (pot, hop) = match &def.kind {
            ModelKind::FreeLaplacian { .. } => (Potential::Zero, Hopping::Nearest),
            ModelKind::Periodic { potential } => (Potential::Periodic(c(potential)), Hopping::Nearest),
            ModelKind::Diagonal { values } => (Potential::Periodic(c(values)), Hopping::None),
            ModelKind::CutProject { alpha, amplitude } => {
                let pot = match rational_approximation(*alpha) {
                    Some((p, q)) => Potential::RationalCut { p: p as i128, q: q as i128, amp: amplitude.value() },
                    None => Potential::IrrationalCut { alpha: *alpha, beta: 1.0 / alpha, amp: amplitude.value() },
                };
                (pot, Hopping::Nearest)
            }
            ModelKind::Jump { alpha, amplitude } => (Potential::Jump { alpha: *alpha, amp: amplitude.value() }, Hopping::Nearest),
            ModelKind::Hofstadter { p, q, gauge_origin } => {
                (Potential::Zero, Hopping::Magnetic { p: *p, q: *q, x0: *gauge_origin })
            }
            ModelKind::Bernoulli { values, word } => (
                Potential::Bernoulli { values: [values[0].value(), values[1].value()], word: word.clone().unwrap_or_else(|| vec![0]) },
                Hopping::Nearest,
            ),
            ModelKind::PowerLaw { amplitude, exponent, asymmetry } => {
                (Potential::Zero, Hopping::PowerLaw { amp: *amplitude, s: *exponent, asym: *asymmetry })
            }
        };
        Ok(Lattice { n: def.dimension(), onsite, pot, hop, special_sites: OnceLock::new() })
    }

    fn range(&self) -> Range {
        match self.hop {
            Hopping::PowerLaw { amp, s, asym } => {
                Range { finite: None, decay: Some(Decay { c: amp.abs() * asym.abs().max(1.0), eps: s - 1.0 }) }
            }
            _ => Range { finite: Some(1.0), decay: None },
        }
    }

    fn hermitian(&self) -> bool {
        let real_pot = match &self.pot {
            Potential::Zero => true,
            Potential::Periodic(v) => v.iter().all(|z| z.im == 0.0),
            Potential::RationalCut { amp, .. } | Potential::IrrationalCut { amp, .. } | Potential::Jump { amp, .. } => amp.im == 0.0,
            Potential::Bernoulli { values, .. } => values.iter().all(|z| z.im == 0.0),
        };
        let sym_hop = !matches!(self.hop, Hopping::PowerLaw { asym, .. } if asym != 1.0);
        real_pot && sym_hop && self.onsite.im == 0.0
    }

    fn normal(&self) -> bool {
        self.hermitian() || matches!(self.hop, Hopping::None)
    }

    fn potential(&self, env: &Env, rel: &[i64]) -> Complex64 {
        let zero = Complex64::new(0.0, 0.0);
        let abs0 = |b: &Vec<i64>| b[0] + rel[0];
        match (&self.pot, env) {
            (Potential::Zero, _) => zero,
            (Potential::Periodic(v), Env::Shift(b)) => v[abs0(b).rem_euclid(v.len() as i64) as usize],
            (Potential::RationalCut { p, q, amp }, Env::Shift(b)) => {
                let t = (abs0(b) as i128 * p).rem_euclid(*q);
                if t * p < q * q {
                    *amp
                } else {
                    zero
                }
            }
            (Potential::IrrationalCut { alpha, beta, amp }, env) => {
                let f = match env {
                    Env::Shift(b) => (abs0(b) as f64 * alpha).rem_euclid(1.0),
                    Env::Hull(theta) => (theta + rel[0] as f64 * alpha).rem_euclid(1.0),
                    Env::Word { .. } => unreachable!("words only occur for bernoulli models"),
                };
                if f < *beta {
                    *amp
                } else {
                    zero
                }
            }
            (Potential::Jump { alpha, amp }, Env::Shift(b)) => {
                if (abs0(b) as f64) * alpha < 1.0 / alpha {
                    *amp
                } else {
                    zero
                }
            }
            (Potential::Bernoulli { values, word }, Env::Shift(b)) => {
                values[word[abs0(b).rem_euclid(word.len() as i64) as usize] as usize]
            }
            (Potential::Bernoulli { values, .. }, Env::Word { lo, bits }) => values[bits[(rel[0] - lo) as usize] as usize],
            _ => unreachable!("environment does not match the potential"),
        }
    }

    /// Matrix element `H_{xy}` for sites `x`, `y` relative to the environment.
    fn entry(&self, env: &Env, x: &[i64], y: &[i64], cutoff: Option<f64>) -> Complex64 {
        let zero = Complex64::new(0.0, 0.0);
        let d = x.iter().zip(y).map(|(a, b)| (a - b).abs()).max().unwrap_or(0);
        if let Some(c) = cutoff {
            if d as f64 > c + BOUNDARY_TOL {
                return zero;
            }
        }
        if d == 0 {
            return self.onsite + self.potential(env, x);
        }
        let l1: i64 = x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
        match self.hop {
            Hopping::None => zero,
            Hopping::Nearest if l1 == 1 => Complex64::new(-1.0, 0.0),
            Hopping::Magnetic { p, q, x0 } if l1 == 1 => {
                if x[1] == y[1] {
                    return Complex64::new(-1.0, 0.0);
                }
                let base = match env {
                    Env::Shift(b) => b[0],
                    _ => 0,
                };
                let col = base + x[0] - x0;
                let t = (p as i128 * col as i128).rem_euclid(q as i128) as f64;
                let angle = 2.0 * PI * t / q as f64;
                let ph = Complex64::new(angle.cos(), angle.sin());
                if x[1] == y[1] + 1 {
                    -ph
                } else {
                    -ph.conj()
                }
            }
            Hopping::PowerLaw { amp, s, asym } => {
                let mag = amp * (d as f64).powf(-s);
                Complex64::new(if y[0] > x[0] { mag } else { asym * mag }, 0.0)
            }
            _ => zero,
        }
    }

    /// Offsets `y - x` that may carry a nonzero entry inside a window of the given extent.
    fn stencil(&self, extent: i64, cutoff: Option<f64>) -> Vec<Vec<i64>> {
        let mut out = vec![vec![0i64; self.n]];
        match self.hop {
            Hopping::None => {}
            Hopping::Nearest | Hopping::Magnetic { .. } => {
                for a in 0..self.n {
                    for s in [-1i64, 1] {
                        let mut v = vec![0i64; self.n];
                        v[a] = s;
                        out.push(v);
                    }
                }
            }
            Hopping::PowerLaw { .. } => {
                let r = cutoff.map_or(extent, |c| (c + BOUNDARY_TOL).floor() as i64).min(extent);
                for d in 1..=r {
                    out.push(vec![-d]);
                    out.push(vec![d]);
                }
            }
        }
        out
    }

    /// Integers where a rotation orbit hits a discontinuity of the indicator
    /// up to 1e-9; windows through them are enumerated explicitly.
    fn special_sites(&self) -> &[i64] {
        self.special_sites.get_or_init(|| {
            let mut out = vec![0i64];
            if let Potential::IrrationalCut { alpha, beta, .. } = self.pot {
                for k in -COINCIDENCE_RANGE..=COINCIDENCE_RANGE {
                    let f = (k as f64 * alpha).rem_euclid(1.0);
                    if k != 0 && (f.min(1.0 - f) < 1e-9 || (f - beta).abs() < 1e-9) {
                        out.push(k);
                    }
                }
            }
            out
        })
    }

    /// Environments realizing every local content on relative sites `[-k, k]`.
    fn environments(&self, k: i64) -> Result<Vec<Env>> {
        let shifts = |range: std::ops::Range<i64>| -> Vec<Env> {
            range
                .map(|a| {
                    let mut b = vec![0i64; self.n];
                    b[0] = a;
                    Env::Shift(b)
                })
                .collect()
        };
        Ok(match (&self.pot, self.hop) {
            (_, Hopping::Magnetic { q, .. }) => shifts(0..q),
            (Potential::Zero, _) => shifts(0..1),
            (Potential::Periodic(v), _) => shifts(0..v.len() as i64),
            (Potential::RationalCut { q, .. }, _) => shifts(0..*q as i64),
            (Potential::Jump { .. }, _) => shifts(-2 * k - 2..2 * k + 3),
            (Potential::IrrationalCut { alpha, beta, .. }, _) => {
                let mut bps: Vec<f64> = Vec::new();
                for r in -k..=k {
                    bps.push((-(r as f64) * alpha).rem_euclid(1.0));
                    bps.push((beta - r as f64 * alpha).rem_euclid(1.0));
                }
                bps.sort_by(|a, b| a.partial_cmp(b).unwrap());
                // coincident breakpoints split by rounding would leave slivers whose
                // midpoints realize no window; the coincidences themselves are anchored below
                bps.dedup_by(|b, a| *b - *a < HULL_MERGE_TOL);
                if bps.len() > 1 && bps[0] + 1.0 - bps[bps.len() - 1] < HULL_MERGE_TOL {
                    bps.pop();
                }
                let mut envs: Vec<Env> = (0..bps.len())
                    .map(|i| {
                        let next = if i + 1 < bps.len() { bps[i + 1] } else { bps[0] + 1.0 };
                        Env::Hull((0.5 * (bps[i] + next)).rem_euclid(1.0))
                    })
                    .collect();
                let mut bases = BTreeSet::new();
                for &s in self.special_sites() {
                    for r in -k - 1..=k + 1 {
                        bases.insert(s - r);
                    }
                }
                envs.extend(bases.into_iter().map(|b| Env::Shift(vec![b])));
                envs
            }
            (Potential::Bernoulli { .. }, _) => {
                let w = (2 * k + 1) as u32;
                if w > 18 {
                    return Err(Error::Unsupported(format!(
                        "bernoulli catalog over {w} sites would list 2^{w} words"
                    )));
                }
                (0..1u64 << w)
                    .map(|mask| Env::Word { lo: -k, bits: (0..w).map(|i| ((mask >> i) & 1) as u8).collect() })
                    .collect()
            }
        })
    }

    /// Patch for a product frame and environment.
    fn patch(&self, frames: &[Frame1], env: &Env, base: &[i64], cutoff: Option<f64>) -> Result<Patch> {
        let n = self.n;
        let dims: Vec<i64> = frames.iter().map(|f| f.hi - f.lo + 1).collect();
        let total: i64 = dims.iter().product();
        let mut strides = vec![1i64; n];
        for a in (0..n.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * dims[a + 1];
        }
        let rel_of = |idx: i64| -> Vec<i64> { (0..n).map(|a| frames[a].lo + (idx / strides[a]) % dims[a]).collect() };
        let mut coords = Vec::with_capacity(total as usize * n);
        let mut columns = Vec::new();
        let with_cols = frames.iter().all(|f| f.cols.is_some());
        for idx in 0..total {
            let rel = rel_of(idx);
            for a in 0..n {
                coords.push(rel[a] as f64 - frames[a].phi);
            }
            if with_cols && (0..n).all(|a| {
                let (c0, c1) = frames[a].cols.unwrap();
                rel[a] >= c0 && rel[a] <= c1
            }) {
                columns.push(idx as usize);
            }
        }
        let extent = dims.iter().copied().max().unwrap_or(1);
        let stencil = self.stencil(extent, cutoff);
        let mut trip = Vec::with_capacity(total as usize * stencil.len());
        for idx in 0..total {
            let x = rel_of(idx);
            for off in &stencil {
                let y: Vec<i64> = x.iter().zip(off).map(|(a, b)| a + b).collect();
                if (0..n).any(|a| y[a] < frames[a].lo || y[a] > frames[a].hi) {
                    continue;
                }
                let v = self.entry(env, &x, &y, cutoff);
                if v != Complex64::new(0.0, 0.0) {
                    let j: i64 = (0..n).map(|a| (y[a] - frames[a].lo) * strides[a]).sum();
                    trip.push((idx as usize, j as usize, v));
                }
            }
        }
        let matrix = SparseMatrix::from_triplets(total as usize, trip)?;
        let center = (0..n).map(|a| base[a] as f64 + frames[a].phi).collect();
        Patch::new(center, PointCloud::new(n, coords)?, matrix, with_cols.then_some(columns))
    }

    fn build_catalog(&self, req: &CatalogRequest) -> Result<PatchCatalog> {
        if !(req.outer > 0.0) {
            return Err(Error::InvalidInput(format!("catalog scale must be positive, got {}", req.outer)));
        }
        if let Some(l) = req.inner {
            if !(l > 0.0 && l <= req.outer) {
                return Err(Error::InvalidInput(format!("inner scale {l} must lie in (0, {}]", req.outer)));
            }
        }
        if matches!(self.hop, Hopping::PowerLaw { .. }) && req.cutoff.is_none() && req.outer > 2048.0 {
            return Err(Error::Unsupported("untrimmed power-law catalogs are limited to scale 2048".into()));
        }
        let axis = frames_1d(req.outer, req.inner);
        let k = req.outer.ceil() as i64 + 1;
        let envs = self.environments(k)?;
        let mut products: Vec<Vec<Frame1>> = vec![Vec::new()];
        for _ in 0..self.n {
            products = products
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |f| {
                        let mut q = p.clone();
                        q.push(*f);
                        q
                    })
                })
                .collect();
        }
        let points = (2.0 * req.outer + 1.0).powi(self.n as i32);
        let work = points * (envs.len() * products.len()) as f64;
        if work > MAX_CATALOG_WORK {
            return Err(Error::Uncertifiable(format!(
                "catalog at scale {} needs {} candidate patches of ~{points} points",
                req.outer,
                envs.len() * products.len()
            )));
        }
        let mut builder = CatalogBuilder::new(req);
        for frames in &products {
            for env in &envs {
                let base = match env {
                    Env::Shift(b) => b.clone(),
                    _ => vec![0; self.n],
                };
                builder.insert(self.patch(frames, env, &base, req.cutoff)?);
            }
        }
        Ok(builder.finish())
    }

    /// Patch of the global realization around a real centre.
    fn realized_patch(&self, center: &[f64], req: &CatalogRequest) -> Result<Patch> {
        if center.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, found: center.len() });
        }
        let mut frames = Vec::with_capacity(self.n);
        let mut base = Vec::with_capacity(self.n);
        for &x in center {
            let b = x.floor();
            let phi = x - b;
            let (lo, hi) = ball_interval(phi, req.outer).ok_or_else(|| Error::InvalidInput("empty ball".into()))?;
            let cols = match req.inner {
                Some(l) => Some(ball_interval(phi, l).ok_or_else(|| Error::InvalidInput("empty inner ball".into()))?),
                None => None,
            };
            frames.push(Frame1 { phi, lo, hi, cols });
            base.push(b as i64);
        }
        self.patch(&frames, &Env::Shift(base.clone()), &base, req.cutoff)
    }
}

#[derive(Debug)]
struct LatticeOracle(Arc<Lattice>);

impl PatchOracle for LatticeOracle {
    fn dimension(&self) -> usize {
        self.0.n
    }

    fn catalog(&self, req: &CatalogRequest) -> Result<PatchCatalog> {
        self.0.build_catalog(req)
    }
}

/// A validated model with access to its global realization.
#[derive(Debug, Clone)]
pub struct Model {
    pub def: ModelDef,
    lattice: Arc<Lattice>,
    op: OperatorSpec,
}

impl Model {
    pub fn new(def: ModelDef) -> Result<Self> {
        let lattice = Arc::new(Lattice::from_def(&def)?);
        let range = lattice.range();
        let oracle: Arc<dyn PatchOracle> = Arc::new(LatticeOracle(lattice.clone()));
        let id = def.name.clone().unwrap_or_else(|| describe(&def));
        let parts = OperatorParts {
            id,
            separation: 1.0,
            range: Range { finite: range.finite, decay: def.decay.or(range.decay) },
            norm_bound: 0.0,
            normal: lattice.normal(),
            hermitian: lattice.hermitian(),
        };
        let provisional = OperatorSpec::new(parts, oracle)?;
        let probe = match range.finite {
            Some(m) => 3.0 * m,
            None => 64.0,
        };
        let schur = schur_norm_bound(&provisional, probe)?;
        let norm = match def.norm_bound {
            Some(m) if m + 1e-12 < schur => {
                return Err(Error::InvalidInput(format!("norm_bound {m} is below the Schur bound {schur}")));
            }
            Some(m) => m,
            None => schur,
        };
        provisional.clear_caches();
        Ok(Model { def, lattice, op: provisional.with_norm_bound(norm) })
    }

    pub fn operator(&self) -> &OperatorSpec {
        &self.op
    }

    /// Patch `(B_outer(x) ∩ Z^n, H)` of the global realization at centre `x`.
    pub fn realized_patch(&self, center: &[f64], req: &CatalogRequest) -> Result<Patch> {
        self.lattice.realized_patch(center, req)
    }

    /// Dense `H` on the box `offset + [0, size)^n`, sites in lexicographic order.
    pub fn sample_section(&self, size: usize, offset: &[i64]) -> Result<DMatrix<Complex64>> {
        let n = self.lattice.n;
        if size == 0 {
            return Err(Error::InvalidInput("section size must be at least 1".into()));
        }
        if offset.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: offset.len() });
        }
        let total = size.pow(n as u32);
        let site = |idx: usize| -> Vec<i64> {
            let mut v = vec![0i64; n];
            let mut r = idx;
            for a in (0..n).rev() {
                v[a] = offset[a] + (r % size) as i64;
                r /= size;
            }
            v
        };
        let env = Env::Shift(vec![0; n]);
        Ok(DMatrix::from_fn(total, total, |i, j| self.lattice.entry(&env, &site(i), &site(j), None)))
    }

    /// Number of distinct potential windows of length `w`, from the enumerator.
    pub fn potential_window_classes(&self, w: usize) -> Result<usize> {
        if self.lattice.n != 1 {
            return Err(Error::Unsupported("window classes are defined for 1D models".into()));
        }
        let k = w as i64;
        let envs = self.lattice.environments(k)?;
        let mut set = BTreeSet::new();
        for e in &envs {
            let win: Vec<(u64, u64)> = (0..k)
                .map(|r| {
                    let v = self.lattice.potential(e, &[r]);
                    (v.re.to_bits(), v.im.to_bits())
                })
                .collect();
            set.insert(win);
        }
        Ok(set.len())
    }

    /// Potential of the global realization at site `k` (1D models).
    pub fn potential_at(&self, k: i64) -> Complex64 {
        let mut b = vec![0i64; self.lattice.n];
        b[0] = k;
        self.lattice.potential(&Env::Shift(b), &vec![0; self.lattice.n])
    }
}

fn describe(def: &ModelDef) -> String {
    match &def.kind {
        ModelKind::FreeLaplacian { dimension } => format!("free-laplacian(n={dimension})"),
        ModelKind::Periodic { potential } => format!("periodic(p={})", potential.len()),
        ModelKind::Diagonal { values } => format!("diagonal(p={})", values.len()),
        ModelKind::CutProject { alpha, .. } => format!("cut-project(alpha={alpha})"),
        ModelKind::Jump { alpha, .. } => format!("jump(alpha={alpha})"),
        ModelKind::Hofstadter { p, q, .. } => format!("hofstadter({p}/{q})"),
        ModelKind::Bernoulli { .. } => "bernoulli".into(),
        ModelKind::PowerLaw { exponent, .. } => format!("power-law(s={exponent})"),
    }
}

/// Operator of a model definition.
pub fn build_model(def: &ModelDef) -> Result<OperatorSpec> {
    Ok(Model::new(def.clone())?.op)
}

/// Dense finite section of a model, see [`Model::sample_section`].
pub fn sample_section(def: &ModelDef, size: usize, offset: &[i64]) -> Result<DMatrix<Complex64>> {
    Model::new(def.clone())?.sample_section(size, offset)
}

/// A connected piece of an oracle spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Band {
    /// The real interval `[lo, hi]` shifted by `offset`.
    Interval { lo: f64, hi: f64, offset: Complex64 },
    Point(Complex64),
}

impl Band {
    pub fn distance(&self, z: Complex64) -> f64 {
        match *self {
            Band::Interval { lo, hi, offset } => {
                let w = z - offset;
                let x = w.re.clamp(lo, hi);
                (Complex64::new(x, 0.0) - w).norm()
            }
            Band::Point(p) => (z - p).norm(),
        }
    }
}

/// Exact spectrum of an oracle model, with a dense sample of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpectrum {
    pub bands: Vec<Band>,
    pub points: Vec<Complex64>,
    /// Hausdorff distance between `points` and the spectrum is at most this.
    pub resolution: f64,
}

impl OracleSpectrum {
    /// `d(lambda, Spec(H))`.
    pub fn distance(&self, z: Complex64) -> f64 {
        self.bands.iter().map(|b| b.distance(z)).fold(f64::INFINITY, f64::min)
    }
}

fn hermitian_eigenvalues(m: DMatrix<Complex64>) -> Vec<f64> {
    let mut e: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| a.partial_cmp(b).unwrap());
    e
}

/// Bloch matrix of a 1D periodic Jacobi operator at quasimomentum `k`.
pub fn periodic_bloch_matrix(onsite: Complex64, potential: &[Complex64], k: f64) -> DMatrix<Complex64> {
    let p = potential.len();
    let mut h = DMatrix::from_fn(p, p, |i, j| if i == j { onsite + potential[i] } else { Complex64::new(0.0, 0.0) });
    let e = Complex64::new(k.cos(), k.sin());
    for i in 0..p {
        let j = (i + 1) % p;
        let w = if j == 0 { e } else { Complex64::new(1.0, 0.0) };
        h[(i, j)] -= w;
        h[(j, i)] -= w.conj();
    }
    h
}

/// Magnetic Bloch matrix of the Hofstadter model, `x` across a cell of width `q`,
/// with Bloch phase `theta_x` across the cell and `k_y` along the columns.
pub fn hofstadter_bloch_matrix(onsite: f64, p: i64, q: i64, x0: i64, theta_x: f64, k_y: f64) -> DMatrix<Complex64> {
    let qu = q as usize;
    let mut h = DMatrix::from_element(qu, qu, Complex64::new(0.0, 0.0));
    for x in 0..qu {
        let t = (p as i128 * (x as i128 - x0 as i128)).rem_euclid(q as i128) as f64;
        h[(x, x)] = Complex64::new(onsite - 2.0 * (k_y + 2.0 * PI * t / q as f64).cos(), 0.0);
    }
    let e = Complex64::new(theta_x.cos(), theta_x.sin());
    for x in 0..qu {
        let y = (x + 1) % qu;
        let w = if y == 0 { e } else { Complex64::new(1.0, 0.0) };
        h[(x, y)] -= w;
        h[(y, x)] -= w.conj();
    }
    h
}

/// Exact spectrum of oracle models (free, real periodic, diagonal, Hofstadter).
pub fn oracle_spectrum(def: &ModelDef, resolution: f64) -> Result<OracleSpectrum> {
    if !(resolution > 0.0) {
        return Err(Error::InvalidInput(format!("resolution must be positive, got {resolution}")));
    }
    def.validate()?;
    let onsite = def.onsite.map_or(def.default_onsite(), Scalar::value);
    let bands: Vec<Band> = match &def.kind {
        ModelKind::FreeLaplacian { dimension } => {
            let w = 2.0 * *dimension as f64;
            vec![Band::Interval { lo: -w, hi: w, offset: onsite }]
        }
        ModelKind::Diagonal { values } => {
            let mut pts: Vec<Complex64> = values.iter().map(|v| v.value() + onsite).collect();
            pts.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
            pts.dedup();
            pts.into_iter().map(Band::Point).collect()
        }
        ModelKind::Periodic { potential } => {
            let v: Vec<Complex64> = potential.iter().map(|s| s.value()).collect();
            if onsite.im != 0.0 || v.iter().any(|z| z.im != 0.0) {
                return Err(Error::Unsupported("oracle spectrum needs a real periodic potential".into()));
            }
            let a = hermitian_eigenvalues(periodic_bloch_matrix(onsite, &v, 0.0));
            let b = hermitian_eigenvalues(periodic_bloch_matrix(onsite, &v, PI));
            a.iter().zip(&b).map(|(x, y)| Band::Interval { lo: x.min(*y), hi: x.max(*y), offset: Complex64::new(0.0, 0.0) }).collect()
        }
        ModelKind::Hofstadter { p, q, gauge_origin } => {
            if onsite.im != 0.0 {
                return Err(Error::Unsupported("oracle spectrum needs a real onsite term".into()));
            }
            let a = hermitian_eigenvalues(hofstadter_bloch_matrix(onsite.re, *p, *q, *gauge_origin, 0.0, 0.0));
            let b = hermitian_eigenvalues(hofstadter_bloch_matrix(onsite.re, *p, *q, *gauge_origin, PI, PI / *q as f64));
            a.iter().zip(&b).map(|(x, y)| Band::Interval { lo: x.min(*y), hi: x.max(*y), offset: Complex64::new(0.0, 0.0) }).collect()
        }
        _ => return Err(Error::Unsupported(format!("no oracle spectrum for {}", describe(def)))),
    };
    let mut points = Vec::new();
    for b in &bands {
        match *b {
            Band::Interval { lo, hi, offset } => {
                let steps = ((hi - lo) / resolution).ceil().max(1.0) as usize;
                for i in 0..=steps {
                    points.push(offset + Complex64::new(lo + (hi - lo) * i as f64 / steps as f64, 0.0));
                }
            }
            Band::Point(z) => points.push(z),
        }
    }
    Ok(OracleSpectrum { bands, points, resolution })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn sample_section_examples() {
        let free = sample_section(&builtin("free1d").unwrap(), 3, &[0]).unwrap();
        let expect = [[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(free[(i, j)], c(expect[i][j]));
            }
        }
        let def = ModelDef::new(ModelKind::Periodic { potential: vec![0.0.into(), 3.0.into()] });
        let s = sample_section(&def, 2, &[0]).unwrap();
        assert_eq!((s[(0, 0)], s[(0, 1)], s[(1, 0)], s[(1, 1)]), (c(2.0), c(-1.0), c(-1.0), c(5.0)));
    }

    #[test]
    fn class_counts() {
        for l in [1.5, 4.0, 7.3, 16.0] {
            let op = build_model(&builtin("free1d").unwrap()).unwrap();
            let cat = op.fresh_catalog(l, None).unwrap();
            // an open window of length 2L holds floor(2L) or ceil(2L) sites, one shape each
            assert_eq!(cat.patches.len(), 2, "free at L={l}");
            let p2 = build_model(&builtin("period2").unwrap()).unwrap();
            assert_eq!(p2.fresh_catalog(l, None).unwrap().patches.len(), 4, "period2 at L={l}");
        }
    }

    #[test]
    fn rational_detection() {
        assert_eq!(rational_approximation(1.66), Some((83, 50)));
        assert_eq!(rational_approximation(2.0), Some((2, 1)));
        assert_eq!(rational_approximation((1.0 + 5f64.sqrt()) / 2.0), None);
        assert_eq!(rational_approximation(2f64.sqrt()), None);
    }

    #[test]
    fn fig1_potential_has_period_fifty() {
        let m = Model::new(builtin("fig1").unwrap()).unwrap();
        for k in -200..200 {
            assert_eq!(m.potential_at(k), m.potential_at(k + 50));
            let frac = (1.66 * k as f64).rem_euclid(1.0);
            if (frac - 1.0 / 1.66).abs() > 1e-9 && frac.min(1.0 - frac) > 1e-9 {
                let lit = if frac < 1.0 / 1.66 { Complex64::new(1.0, 1.0) } else { c(0.0) };
                assert_eq!(m.potential_at(k), lit, "k = {k}");
            }
        }
    }

    #[test]
    fn normality_flags() {
        assert!(build_model(&builtin("free1d").unwrap()).unwrap().hermitian);
        assert!(build_model(&builtin("diag03").unwrap()).unwrap().normal);
        assert!(!build_model(&builtin("fig1").unwrap()).unwrap().normal);
    }

    #[test]
    fn norm_bounds() {
        assert_eq!(build_model(&builtin("free1d").unwrap()).unwrap().norm_bound, 4.0);
        assert_eq!(build_model(&builtin("period2").unwrap()).unwrap().norm_bound, 6.0);
        assert_eq!(build_model(&builtin("free2d").unwrap()).unwrap().norm_bound, 8.0);
        let mut low = builtin("free1d").unwrap();
        low.norm_bound = Some(3.0);
        assert!(build_model(&low).is_err());
    }

    #[test]
    fn model_definition_roundtrip() {
        let v = serde_json::json!({"kind": "cut-project", "alpha": 1.66, "amplitude": [1.0, 1.0], "onsite": 0.0});
        let def: ModelDef = serde_json::from_value(v).unwrap();
        assert_eq!(def.kind, ModelKind::CutProject { alpha: 1.66, amplitude: Scalar::Complex([1.0, 1.0]) });
        assert_eq!(def.onsite, Some(Scalar::Real(0.0)));
        let back: ModelDef = serde_json::from_str(&serde_json::to_string(&def).unwrap()).unwrap();
        assert_eq!(back, def);
    }
}
