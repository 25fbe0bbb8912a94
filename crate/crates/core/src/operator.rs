//! Operators of finite local complexity, seen through their patch catalogs.
//!
//! An operator is never stored as a matrix. It is an oracle that, for a
//! requested scale, lists every class of local patch `(B_R(x) ∩ Γ, H|_{B_R(x)})`
//! up to translation and diagonal unitary gauge. Everything downstream
//! (norm bounds, uneven sections, lower norms) is computed from catalogs.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BOUNDARY_TOL;

/// Entrywise tolerance when comparing canonical local matrices.
pub const EQUIV_TOL: f64 = 1e-10;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SparseTriplets", try_from = "SparseTriplets")]
pub struct SparseMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex64>,
}

/// Serialized form: row-major `[row, col, re, im]` entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SparseTriplets {
    dim: usize,
    entries: Vec<(usize, usize, f64, f64)>,
}

impl From<SparseMatrix> for SparseTriplets {
    fn from(m: SparseMatrix) -> Self {
        let entries = m.iter().map(|(i, j, v)| (i, j, v.re, v.im)).collect();
        SparseTriplets { dim: m.dim, entries }
    }
}

impl TryFrom<SparseTriplets> for SparseMatrix {
    type Error = String;
    fn try_from(t: SparseTriplets) -> std::result::Result<Self, String> {
        let trip = t.entries.into_iter().map(|(i, j, re, im)| (i, j, Complex64::new(re, im))).collect();
        SparseMatrix::from_triplets(t.dim, trip).map_err(|e| e.to_string())
    }
}

impl SparseMatrix {
    /// Builds from `(row, col, value)`; duplicates are summed, exact zeros dropped.
    pub fn from_triplets(dim: usize, mut trip: Vec<(usize, usize, Complex64)>) -> Result<Self> {
        if let Some(&(i, j, _)) = trip.iter().find(|&&(i, j, _)| i >= dim || j >= dim) {
            return Err(Error::InvalidInput(format!("entry ({i},{j}) outside a {dim}x{dim} matrix")));
        }
        trip.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(trip.len());
        let mut vals: Vec<Complex64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in trip {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            last = Some((i, j));
            cols.push(j);
            vals.push(v);
            row_ptr[i + 1] += 1;
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut m = SparseMatrix { dim, row_ptr, cols, vals };
        m.drop_zeros();
        Ok(m)
    }

    fn drop_zeros(&mut self) {
        if self.vals.iter().all(|v| *v != Complex64::new(0.0, 0.0)) {
            return;
        }
        let mut row_ptr = vec![0usize; self.dim + 1];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for i in 0..self.dim {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.vals[k] != Complex64::new(0.0, 0.0) {
                    cols.push(self.cols[k]);
                    vals.push(self.vals[k]);
                }
            }
            row_ptr[i + 1] = cols.len();
        }
        *self = SparseMatrix { dim: self.dim, row_ptr, cols, vals };
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    /// Row-major `(row, col, value)` iterator.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        (0..self.dim).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn transpose(&self) -> SparseMatrix {
        let trip = self.iter().map(|(i, j, v)| (j, i, v)).collect();
        SparseMatrix::from_triplets(self.dim, trip).expect("transpose stays in range")
    }

    /// `diag(conj(phase)) * self * diag(phase)`.
    pub fn gauge(&self, phase: &[Complex64]) -> SparseMatrix {
        let mut out = self.clone();
        for i in 0..self.dim {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out.vals[k] = phase[i].conj() * self.vals[k] * phase[self.cols[k]];
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        let mut d = vec![vec![Complex64::new(0.0, 0.0); self.dim]; self.dim];
        for (i, j, v) in self.iter() {
            d[i][j] = v;
        }
        d
    }
}

/// Removes the gauge freedom `H -> U H U*` with `U` diagonal unitary.
///
/// A breadth-first sweep over the sparsity graph, visiting vertices in index
/// order and rooting each component at its smallest index with phase 1, picks
/// the phases that make every tree edge real positive. Two matrices related by
/// a diagonal unitary conjugation have identical canonical forms.
pub fn canonicalize_gauge(m: &SparseMatrix) -> SparseMatrix {
    let n = m.dim();
    let t = m.transpose();
    let one = Complex64::new(1.0, 0.0);
    let mut phase: Vec<Option<Complex64>> = vec![None; n];
    let mut queue = std::collections::VecDeque::new();
    for root in 0..n {
        if phase[root].is_some() {
            continue;
        }
        phase[root] = Some(one);
        queue.push_back(root);
        while let Some(u) = queue.pop_front() {
            let pu = phase[u].unwrap();
            let mut nbrs: Vec<usize> = m.row(u).map(|(v, _)| v).chain(t.row(u).map(|(v, _)| v)).collect();
            nbrs.sort_unstable();
            nbrs.dedup();
            for v in nbrs {
                if phase[v].is_some() {
                    continue;
                }
                let h_uv = m.get(u, v);
                let pv = if h_uv.norm() > 0.0 {
                    pu * h_uv.conj() / h_uv.norm()
                } else {
                    let h_vu = m.get(v, u);
                    pu * h_vu / h_vu.norm()
                };
                phase[v] = Some(pv);
                queue.push_back(v);
            }
        }
    }
    let phase: Vec<Complex64> = phase.into_iter().map(|p| p.unwrap_or(one)).collect();
    m.gauge(&phase)
}

/// Flat storage of points of R^n, ordered lexicographically by coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl From<PointCloud> for Vec<Vec<f64>> {
    fn from(p: PointCloud) -> Self {
        (0..p.len()).map(|i| p.point(i).to_vec()).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for PointCloud {
    type Error = String;
    fn try_from(v: Vec<Vec<f64>>) -> std::result::Result<Self, String> {
        let dim = v.first().map_or(0, Vec::len);
        if v.iter().any(|p| p.len() != dim) {
            return Err("points of mixed dimension".into());
        }
        Ok(PointCloud { dim, coords: v.into_iter().flatten().collect() })
    }
}

impl PointCloud {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(Error::InvalidInput("coordinate count is not a multiple of the dimension".into()));
        }
        Ok(PointCloud { dim, coords })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.coords.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Largest max-norm of a point.
    pub fn radius(&self) -> f64 {
        self.coords.iter().fold(0.0, |a, x| a.max(x.abs()))
    }
}

/// One class of local patch: the recentred point cloud `B_R(x) ∩ Γ - x`, the
/// canonical local matrix on it, and (for section catalogs) which points form
/// the inner ball `B_L(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub id: usize,
    pub center: Vec<f64>,
    pub points: PointCloud,
    pub matrix: SparseMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<usize>>,
}

impl Patch {
    /// Canonicalizes `matrix` before storing it.
    pub fn new(center: Vec<f64>, points: PointCloud, matrix: SparseMatrix, columns: Option<Vec<usize>>) -> Result<Self> {
        if matrix.dim() != points.len() {
            return Err(Error::DimensionMismatch { expected: points.len(), found: matrix.dim() });
        }
        if let Some(c) = &columns {
            if c.windows(2).any(|w| w[0] >= w[1]) || c.last().is_some_and(|&j| j >= points.len()) {
                return Err(Error::InvalidInput("patch columns must be increasing point indices".into()));
            }
        }
        Ok(Patch { id: 0, center, points, matrix: canonicalize_gauge(&matrix), columns })
    }

    fn key(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let q = |x: f64| (x * 1e8).round() as i64;
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.points.len().hash(&mut h);
        if !self.points.is_empty() {
            let origin = self.points.point(0).to_vec();
            for i in 0..self.points.len() {
                for (x, o) in self.points.point(i).iter().zip(&origin) {
                    q(x - o).hash(&mut h);
                }
            }
        }
        self.columns.hash(&mut h);
        for (i, j, v) in self.matrix.iter() {
            (i, j, q(v.re), q(v.im)).hash(&mut h);
        }
        h.finish()
    }

    /// Translation plus gauge equivalence, assuming both matrices are canonical.
    pub fn equivalent(&self, other: &Patch) -> bool {
        if self.points.len() != other.points.len() || self.points.dim() != other.points.dim() {
            return false;
        }
        if self.columns != other.columns || self.matrix.nnz() != other.matrix.nnz() {
            return false;
        }
        if !self.points.is_empty() {
            let (o1, o2) = (self.points.point(0), other.points.point(0));
            for i in 0..self.points.len() {
                let (p, q) = (self.points.point(i), other.points.point(i));
                for k in 0..p.len() {
                    if ((p[k] - o1[k]) - (q[k] - o2[k])).abs() > 1e-9 {
                        return false;
                    }
                }
            }
        }
        self.matrix
            .iter()
            .zip(other.matrix.iter())
            .all(|((i, j, a), (k, l, b))| i == k && j == l && (a - b).norm() <= EQUIV_TOL * (1.0 + a.norm()))
    }
}

/// What scale a catalog is requested at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CatalogRequest {
    /// Patches are `B_outer(x) ∩ Γ`.
    pub outer: f64,
    /// If set, patches also record the points of `B_inner(x)`.
    pub inner: Option<f64>,
    /// If set, entries with `d(x, y) > cutoff` are zeroed.
    pub cutoff: Option<f64>,
}

impl CatalogRequest {
    pub fn plain(outer: f64) -> Self {
        CatalogRequest { outer, inner: None, cutoff: None }
    }

    fn key(&self) -> (u64, u64, u64) {
        (
            self.outer.to_bits(),
            self.inner.map_or(u64::MAX, f64::to_bits),
            self.cutoff.map_or(u64::MAX, f64::to_bits),
        )
    }
}

/// The finite list of patch classes at one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchCatalog {
    pub scale: f64,
    #[serde(default)]
    pub inner: Option<f64>,
    #[serde(default)]
    pub cutoff: Option<f64>,
    /// Whether the producer guarantees every class is listed.
    pub complete: bool,
    pub patches: Vec<Patch>,
}

impl PatchCatalog {
    pub fn find_equivalent(&self, p: &Patch) -> Option<usize> {
        let probe = Patch { matrix: canonicalize_gauge(&p.matrix), ..p.clone() };
        self.patches.iter().position(|q| q.equivalent(&probe))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Collects patches, dropping those equivalent to one already present.
#[derive(Debug)]
pub struct CatalogBuilder {
    catalog: PatchCatalog,
    buckets: HashMap<u64, Vec<usize>>,
}

impl CatalogBuilder {
    pub fn new(req: &CatalogRequest) -> Self {
        CatalogBuilder {
            catalog: PatchCatalog { scale: req.outer, inner: req.inner, cutoff: req.cutoff, complete: true, patches: Vec::new() },
            buckets: HashMap::new(),
        }
    }

    /// Returns true if the patch was new.
    pub fn insert(&mut self, mut p: Patch) -> bool {
        let key = p.key();
        let bucket = self.buckets.entry(key).or_default();
        if bucket.iter().any(|&k| self.catalog.patches[k].equivalent(&p)) {
            return false;
        }
        p.id = self.catalog.patches.len();
        bucket.push(p.id);
        self.catalog.patches.push(p);
        true
    }

    pub fn len(&self) -> usize {
        self.catalog.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.catalog.patches.is_empty()
    }

    pub fn finish(self) -> PatchCatalog {
        self.catalog
    }
}

/// Source of patch catalogs for one operator.
pub trait PatchOracle: Send + Sync + fmt::Debug {
    fn dimension(&self) -> usize;
    fn catalog(&self, req: &CatalogRequest) -> Result<PatchCatalog>;
}

/// Off-diagonal decay `|H_xy| <= C d(x,y)^{-(n+eps)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decay {
    pub c: f64,
    pub eps: f64,
}

/// Range metadata. At least one of the two fields is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub finite: Option<f64>,
    pub decay: Option<Decay>,
}

/// An operator of finite local complexity.
#[derive(Clone)]
pub struct OperatorSpec {
    pub id: String,
    pub n: usize,
    /// Separation of the underlying point set.
    pub separation: f64,
    pub range: Range,
    /// Upper bound on the operator norm.
    pub norm_bound: f64,
    pub normal: bool,
    pub hermitian: bool,
    cutoff: Option<f64>,
    oracle: Arc<dyn PatchOracle>,
    cache: Arc<Mutex<HashMap<(u64, u64, u64), Arc<PatchCatalog>>>>,
    sections: Arc<Mutex<HashMap<(u64, u64, u64), Arc<crate::section::SectionCatalog>>>>,
}

impl fmt::Debug for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorSpec")
            .field("id", &self.id)
            .field("n", &self.n)
            .field("range", &self.range)
            .field("norm_bound", &self.norm_bound)
            .field("normal", &self.normal)
            .finish()
    }
}

pub struct OperatorParts {
    pub id: String,
    pub separation: f64,
    pub range: Range,
    pub norm_bound: f64,
    pub normal: bool,
    pub hermitian: bool,
}

impl OperatorSpec {
    pub fn new(parts: OperatorParts, oracle: Arc<dyn PatchOracle>) -> Result<Self> {
        let OperatorParts { id, separation, range, norm_bound, normal, hermitian } = parts;
        if !(separation > 0.0) {
            return Err(Error::InvalidInput("point set separation must be positive".into()));
        }
        if range.finite.is_none() && range.decay.is_none() {
            return Err(Error::InvalidInput("operator needs a finite range or decay constants".into()));
        }
        if let Some(m) = range.finite {
            if !(m > 0.0) {
                return Err(Error::InvalidInput(format!("range must be positive, got {m}")));
            }
        }
        if let Some(d) = range.decay {
            if !(d.c >= 0.0 && d.eps > 0.0) {
                return Err(Error::InvalidInput("decay constants need C >= 0 and eps > 0".into()));
            }
        }
        if !(norm_bound >= 0.0 && norm_bound.is_finite()) {
            return Err(Error::InvalidInput(format!("norm bound must be finite and nonnegative, got {norm_bound}")));
        }
        Ok(OperatorSpec {
            id,
            n: oracle.dimension(),
            separation,
            range,
            norm_bound,
            normal: normal || hermitian,
            hermitian,
            cutoff: None,
            oracle,
            cache: Arc::default(),
            sections: Arc::default(),
        })
    }

    /// Same operator with a different norm bound (fresh caches are not needed).
    pub fn with_norm_bound(mut self, m: f64) -> Self {
        self.norm_bound = m;
        self
    }

    pub fn cutoff(&self) -> Option<f64> {
        self.cutoff
    }

    /// Finite range, or an error naming what the caller needs.
    pub fn finite_range(&self) -> Result<f64> {
        self.range.finite.ok_or_else(|| {
            Error::Precondition(format!("operator {} is not finite range; trim it first", self.id))
        })
    }

    /// Memoized catalog. The trimming cutoff of this operator is applied.
    pub fn catalog(&self, outer: f64, inner: Option<f64>) -> Result<Arc<PatchCatalog>> {
        let req = CatalogRequest { outer, inner, cutoff: self.cutoff };
        if let Some(c) = self.cache.lock().unwrap().get(&req.key()) {
            return Ok(c.clone());
        }
        let built = Arc::new(self.oracle.catalog(&req)?);
        Ok(self.cache.lock().unwrap().entry(req.key()).or_insert(built).clone())
    }

    /// Uncached catalog, used by tests and exporters.
    pub fn fresh_catalog(&self, outer: f64, inner: Option<f64>) -> Result<PatchCatalog> {
        self.oracle.catalog(&CatalogRequest { outer, inner, cutoff: self.cutoff })
    }

    /// Memoized section kernels for `rows = B_{L+m}`, `cols = B_L`.
    pub(crate) fn section_catalog(&self, l: f64) -> Result<Arc<crate::section::SectionCatalog>> {
        let m = self.finite_range()?;
        let req = CatalogRequest { outer: l + m, inner: Some(l), cutoff: self.cutoff };
        if let Some(c) = self.sections.lock().unwrap().get(&req.key()) {
            return Ok(c.clone());
        }
        let catalog = self.oracle.catalog(&req)?;
        let built = Arc::new(crate::section::SectionCatalog::build(&catalog, m)?);
        Ok(self.sections.lock().unwrap().entry(req.key()).or_insert(built).clone())
    }

    /// Drops memoized catalogs and kernels.
    pub fn clear_caches(&self) {
        self.cache.lock().unwrap().clear();
        self.sections.lock().unwrap().clear();
    }
}

/// `G^m` with its certified distance `delta_trim >= ||H - G^m||`.
#[derive(Debug, Clone)]
pub struct TrimmedOperator {
    pub base: OperatorSpec,
    pub m: f64,
    pub delta_trim: f64,
    pub op: OperatorSpec,
}

/// `C_2 = n^{(n+eps)/2} (l/2)^{-n} (2 pi)^{n-1} 4^eps / eps`.
///
/// Points of a set with separation `l` have disjoint max-norm balls of radius
/// `l/2`, so the lattice sum over `d(x,y) > m` is at most `(l/2)^{-n}` times the
/// integral of `d^{-(n+eps)}` over `|y| > m/2` (doubling the radius absorbs the
/// ball around each point). Bounding the max-norm by the Euclidean norm costs
/// `n^{(n+eps)/2}`, and the radial integral with the sphere area bounded by
/// `(2 pi)^{n-1} r^{n-1}` gives `(2 pi)^{n-1} (m/2)^{-eps} / eps`.
pub fn decay_tail_constant(n: usize, eps: f64, l: f64) -> Result<f64> {
    if n == 0 || !(eps > 0.0) || !(l > 0.0) {
        return Err(Error::InvalidInput("decay constant needs n >= 1, eps > 0, l > 0".into()));
    }
    let nf = n as f64;
    Ok(nf.powf((nf + eps) / 2.0) * (l / 2.0).powf(-nf) * (2.0 * std::f64::consts::PI).powf(nf - 1.0) * 4f64.powf(eps) / eps)
}

fn trim_error(op: &OperatorSpec, m: f64) -> Result<f64> {
    if op.range.finite.is_some_and(|m0| m >= m0) {
        return Ok(0.0);
    }
    match op.range.decay {
        Some(d) => Ok(d.c * decay_tail_constant(op.n, d.eps, op.separation)? * m.powf(-d.eps)),
        None => Err(Error::Uncertifiable(format!(
            "operator {} has no decay constants; cannot bound the trimming error at m = {m}",
            op.id
        ))),
    }
}

/// Zero every entry with `d(x,y) > m`.
pub fn trim(op: &OperatorSpec, m: f64) -> Result<TrimmedOperator> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::InvalidInput(format!("trim length must be positive, got {m}")));
    }
    let delta_trim = trim_error(op, m)?;
    let unchanged = op.range.finite.is_some_and(|m0| m >= m0);
    let mut t = op.clone();
    t.cache = Arc::default();
    t.sections = Arc::default();
    if !unchanged {
        t.id = format!("{}|trim({m})", op.id);
        t.cutoff = Some(op.cutoff.map_or(m, |c| c.min(m)));
        t.range.finite = Some(m);
        t.norm_bound = op.norm_bound + delta_trim;
        t.normal = op.hermitian;
    }
    Ok(TrimmedOperator { base: op.clone(), m, delta_trim, op: t })
}

/// `sqrt(max row sum * max column sum)` over interior sites of every patch at
/// scale `l_probe`, plus the decay tail when the operator is not finite range.
pub fn schur_norm_bound(op: &OperatorSpec, l_probe: f64) -> Result<f64> {
    let (reach, tail) = match op.range.finite {
        Some(m) => (m, 0.0),
        None => {
            let r = l_probe / 2.0;
            (r, trim_error(op, r)?)
        }
    };
    if l_probe <= reach + BOUNDARY_TOL {
        return Err(Error::Precondition(format!(
            "probe scale {l_probe} does not exceed the range {reach}; row sums would be incomplete"
        )));
    }
    let catalog = match op.range.finite {
        Some(_) => op.catalog(l_probe, None)?,
        None => Arc::new(trim(op, reach)?.op.fresh_catalog(l_probe, None)?),
    };
    let interior = l_probe - reach - BOUNDARY_TOL;
    let (mut rmax, mut cmax) = (0.0f64, 0.0f64);
    for p in &catalog.patches {
        let k = p.points.len();
        let (mut rows, mut cols) = (vec![0.0; k], vec![0.0; k]);
        for (i, j, v) in p.matrix.iter() {
            rows[i] += v.norm();
            cols[j] += v.norm();
        }
        for i in 0..k {
            let r = p.points.point(i).iter().fold(0.0f64, |a, x| a.max(x.abs()));
            if r < interior {
                rmax = rmax.max(rows[i]);
                cmax = cmax.max(cols[i]);
            }
        }
    }
    Ok((rmax * cmax).sqrt() + tail)
}

/// Smallest power of two `m >= (C C_2 / delta)^{1/eps}`; a finite-range
/// operator returns its declared range.
pub fn cutoff_length(op: &OperatorSpec, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidInput(format!("cutoff tolerance must be positive, got {delta}")));
    }
    if let Some(m) = op.range.finite {
        return Ok(m);
    }
    let d = op.range.decay.ok_or_else(|| Error::Uncertifiable("no decay constants".into()))?;
    let target = (d.c * decay_tail_constant(op.n, d.eps, op.separation)? / delta).powf(1.0 / d.eps);
    Ok(power_of_two_at_least(target))
}

pub(crate) fn power_of_two_at_least(x: f64) -> f64 {
    let mut p = 1.0f64;
    while p < x {
        p *= 2.0;
    }
    while p / 2.0 >= x && p > f64::MIN_POSITIVE {
        p /= 2.0;
    }
    p
}

/// `M + |lambda| >= ||H - lambda||`.
pub fn norm_shift_bound(op: &OperatorSpec, lambda: Complex64) -> f64 {
    op.norm_bound + lambda.norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn sparse_roundtrip_and_lookup() {
        let m = SparseMatrix::from_triplets(3, vec![(2, 0, c(1.0, 2.0)), (0, 1, c(-1.0, 0.0)), (0, 1, c(0.5, 0.0)), (1, 1, c(0.0, 0.0))]).unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 1), c(-0.5, 0.0));
        assert_eq!(m.get(1, 1), c(0.0, 0.0));
        let s = serde_json::to_string(&m).unwrap();
        let back: SparseMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(SparseMatrix::from_triplets(2, vec![(2, 0, c(1.0, 0.0))]).is_err());
    }

    #[test]
    fn canonical_form_removes_diagonal_phases() {
        let m = SparseMatrix::from_triplets(
            3,
            vec![
                (0, 1, c(0.0, 1.0)),
                (1, 0, c(0.0, -1.0)),
                (1, 2, c(-1.0, 0.0)),
                (2, 1, c(-1.0, 0.0)),
                (2, 0, c(0.3, 0.4)),
                (0, 0, c(2.0, 0.0)),
            ],
        )
        .unwrap();
        let phases = [c(0.6, 0.8), c(0.0, 1.0), c(-1.0, 0.0)];
        let a = canonicalize_gauge(&m);
        let b = canonicalize_gauge(&m.gauge(&phases));
        for ((_, _, x), (_, _, y)) in a.iter().zip(b.iter()) {
            assert!((x - y).norm() < 1e-14);
        }
        assert!((a.get(0, 1).im).abs() < 1e-15 && a.get(0, 1).re > 0.0);
    }

    #[test]
    fn decay_constant_examples() {
        assert!((decay_tail_constant(1, 1.0, 1.0).unwrap() - 8.0).abs() < 1e-12);
        assert!((decay_tail_constant(1, 2.0, 1.0).unwrap() - 16.0).abs() < 1e-12);
        for m in [5.0f64, 10.0, 50.0] {
            let mut s = 0.0;
            for k in (m as i64 + 1)..2_000_000 {
                s += 2.0 / (k as f64 * k as f64);
            }
            assert!(s <= decay_tail_constant(1, 1.0, 1.0).unwrap() / m, "m={m}: {s}");
        }
        // decreasing in eps while eps < 1 / ln(4 sqrt 2)
        let mut prev = f64::INFINITY;
        for k in 1..12 {
            let v = decay_tail_constant(2, 0.05 * k as f64, 1.0).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn power_of_two_rounding() {
        assert_eq!(power_of_two_at_least(8.0), 8.0);
        assert_eq!(power_of_two_at_least(80.0), 128.0);
        assert_eq!(power_of_two_at_least(0.3), 0.5);
        assert_eq!(power_of_two_at_least(1.0), 1.0);
    }
}
