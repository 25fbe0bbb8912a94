//! Uneven sections `Q = 1_{B_{L+m}(x)} (H - lambda) 1_{B_L(x)}` and certified
//! enclosures of their smallest singular value.
//!
//! The test `t < s_min(Q)` is decided by a Cholesky (LDL*) factorization of the
//! Gram matrix `Q*Q - t^2`, which is banded when columns are ordered
//! lexicographically. The λ-independent parts of the Gram matrix are cached per
//! patch in a [`SectionKernel`], so a λ-sweep only regenerates band rows.
//!
//! Periodic patches are stored compressed: once a band row repeats with period
//! `p`, only one period is kept. The factorization then detects the point where
//! its rolling state repeats bit for bit and jumps to the end, which yields
//! exactly the pivots a full pass would produce.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BOUNDARY_TOL;
use crate::operator::{OperatorSpec, Patch, PatchCatalog};

/// Relative tolerance of the hermitian check in [`is_positive_definite`].
pub const HERMITIAN_TOL: f64 = 1e-10;

const MAX_PERIOD: usize = 512;
/// Largest `ncols * (band + 1)` a kernel may allocate.
const MAX_BAND_ENTRIES: usize = 1 << 25;
const SKIP_MULTIPLES: usize = 4;
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// A real quantity known to lie in `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedValue {
    #[serde(with = "crate::serde_ext::float")]
    pub lo: f64,
    #[serde(with = "crate::serde_ext::float")]
    pub hi: f64,
    /// Requested width; `hi - lo` does not exceed it unless `note` says so.
    pub width: f64,
    pub note: String,
}

impl CertifiedValue {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Dense view of an uneven section.
#[derive(Debug, Clone)]
pub struct UnevenSection {
    pub l: f64,
    pub m: f64,
    pub lambda: Complex64,
    pub center: Vec<f64>,
    /// Recentred row points `B_{L+m}(x) ∩ Γ - x`.
    pub rows: Vec<Vec<f64>>,
    /// Index into `rows` of each column point `B_L(x) ∩ Γ`.
    pub cols: Vec<usize>,
    /// `H` restricted to rows × cols, as `(row, col, value)`.
    h_entries: Vec<(usize, usize, Complex64)>,
}

impl UnevenSection {
    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.cols.len()
    }

    /// Entry `(H - lambda)_{y z}`.
    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        let mut d = vec![vec![ZERO; self.ncols()]; self.nrows()];
        for &(r, c, v) in &self.h_entries {
            d[r][c] += v;
        }
        for (c, &r) in self.cols.iter().enumerate() {
            d[r][c] -= self.lambda;
        }
        d
    }

    /// `(H - lambda) v` for `v` supported on the columns.
    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![ZERO; self.nrows()];
        for &(r, c, h) in &self.h_entries {
            out[r] += h * v[c];
        }
        for (c, &r) in self.cols.iter().enumerate() {
            out[r] -= self.lambda * v[c];
        }
        out
    }

    fn kernel(&self) -> Result<SectionKernel> {
        SectionKernel::build(0, self.nrows(), &self.cols, &self.h_entries)
    }
}

/// Uneven section of `op` at scale `l` built from `catalog.patches[id]`.
pub fn build_uneven_section(op: &OperatorSpec, catalog: &PatchCatalog, id: usize, l: f64, lambda: Complex64) -> Result<UnevenSection> {
    let m = op.finite_range()?;
    if !(l > 0.0) {
        return Err(Error::InvalidInput(format!("section scale must be positive, got {l}")));
    }
    if catalog.scale < l + m - BOUNDARY_TOL {
        return Err(Error::Precondition(format!(
            "patch scale {} is smaller than L + m = {}; rows would be missing",
            catalog.scale,
            l + m
        )));
    }
    let patch = catalog.patches.get(id).ok_or_else(|| Error::InvalidInput(format!("no patch {id}")))?;
    let radius = |i: usize| patch.points.point(i).iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let row_idx: Vec<usize> = (0..patch.points.len()).filter(|&i| radius(i) < l + m - BOUNDARY_TOL).collect();
    let mut pos = vec![usize::MAX; patch.points.len()];
    for (k, &i) in row_idx.iter().enumerate() {
        pos[i] = k;
    }
    let col_pts: Vec<usize> = (0..patch.points.len()).filter(|&i| radius(i) < l - BOUNDARY_TOL).collect();
    let mut col_of = vec![usize::MAX; patch.points.len()];
    for (k, &i) in col_pts.iter().enumerate() {
        col_of[i] = k;
    }
    let mut h_entries = Vec::new();
    for (i, j, v) in patch.matrix.iter() {
        if pos[i] != usize::MAX && col_of[j] != usize::MAX {
            h_entries.push((pos[i], col_of[j], v));
        }
    }
    Ok(UnevenSection {
        l,
        m,
        lambda,
        center: patch.center.clone(),
        rows: row_idx.iter().map(|&i| patch.points.point(i).to_vec()).collect(),
        cols: col_pts.iter().map(|&i| pos[i]).collect(),
        h_entries,
    })
}

/// λ-independent band data of `Q_H* Q_H` and `B = H|_{cols × cols}` for one patch.
///
/// The Gram matrix at λ is `A - λ B* - conj(λ) B + |λ|^2 I`; row `j` stores the
/// lower band entries `(j, j-k)` for `k = 0..=band`.
#[derive(Debug, Clone)]
pub struct SectionKernel {
    pub patch_id: usize,
    pub nrows: usize,
    pub ncols: usize,
    pub band: usize,
    a: Vec<Complex64>,
    b_low: Vec<Complex64>,
    b_up: Vec<Complex64>,
    period: Option<usize>,
}

impl SectionKernel {
    /// `entries` are `(row, col, H value)`; `col_rows[c]` is the row of column `c`'s site.
    pub(crate) fn build(patch_id: usize, nrows: usize, col_rows: &[usize], entries: &[(usize, usize, Complex64)]) -> Result<Self> {
        let ncols = col_rows.len();
        let mut by_row: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); nrows];
        for &(r, c, v) in entries {
            by_row[r].push((c, v));
        }
        let mut col_of_row = vec![usize::MAX; nrows];
        for (c, &r) in col_rows.iter().enumerate() {
            col_of_row[r] = c;
        }
        let mut band = 0usize;
        for row in by_row.iter_mut() {
            row.sort_by_key(|e| e.0);
            if let (Some(f), Some(l)) = (row.first(), row.last()) {
                band = band.max(l.0 - f.0);
            }
        }
        for (c, &r) in col_rows.iter().enumerate() {
            for &(c2, _) in &by_row[r] {
                band = band.max(c.abs_diff(c2));
            }
        }
        let w = band + 1;
        if ncols.saturating_mul(w) > MAX_BAND_ENTRIES {
            return Err(Error::Uncertifiable(format!(
                "section with {ncols} columns and bandwidth {band} exceeds {MAX_BAND_ENTRIES} stored entries"
            )));
        }
        let mut a = vec![ZERO; ncols * w];
        let mut b_low = vec![ZERO; ncols * w];
        let mut b_up = vec![ZERO; ncols * w];
        for row in &by_row {
            for (ia, &(ja, va)) in row.iter().enumerate() {
                for &(jb, vb) in &row[..=ia] {
                    a[ja * w + (ja - jb)] += va.conj() * vb;
                }
            }
        }
        for (c, &r) in col_rows.iter().enumerate() {
            for &(c2, v) in &by_row[r] {
                // the diagonal lands in both so that it contributes -2 Re(conj(λ) B_jj)
                if c2 <= c {
                    b_low[c * w + (c - c2)] = v;
                }
                if c2 >= c {
                    b_up[c2 * w + (c2 - c)] = v;
                }
            }
        }
        let mut k = SectionKernel { patch_id, nrows, ncols, band, a, b_low, b_up, period: None };
        k.compress();
        Ok(k)
    }

    fn rows_equal(&self, i: usize, j: usize) -> bool {
        let w = self.band + 1;
        let same = |v: &[Complex64]| {
            v[i * w..(i + 1) * w]
                .iter()
                .zip(&v[j * w..(j + 1) * w])
                .all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits())
        };
        same(&self.a) && same(&self.b_low) && same(&self.b_up)
    }

    /// Finds the smallest `p` with `row(j) == row(j - p)` for all `j >= band + p`
    /// and keeps only rows `0..band + p`.
    fn compress(&mut self) {
        let n = self.ncols;
        let b = self.band;
        for p in 1..=MAX_PERIOD {
            if b + 2 * p > n {
                break;
            }
            if (b + p..n).all(|j| self.rows_equal(j, j - p)) {
                let keep = (b + p) * (b + 1);
                self.a.truncate(keep);
                self.b_low.truncate(keep);
                self.b_up.truncate(keep);
                self.period = Some(p);
                return;
            }
        }
    }

    pub fn period(&self) -> Option<usize> {
        self.period
    }

    /// Number of distinct band rows held in memory.
    pub fn stored_rows(&self) -> usize {
        self.a.len() / (self.band + 1)
    }

    #[inline]
    fn slot(&self, j: usize) -> usize {
        match self.period {
            Some(p) if j >= self.band + p => self.band + (j - self.band) % p,
            _ => j,
        }
    }

    #[inline]
    fn gram_row(&self, j: usize, lambda: Complex64, shift: f64, out: &mut [Complex64]) {
        let w = self.band + 1;
        let s = self.slot(j) * w;
        let lc = lambda.conj();
        for k in 0..w {
            out[k] = self.a[s + k] - lambda * self.b_up[s + k].conj() - lc * self.b_low[s + k];
        }
        out[0] = Complex64::new(out[0].re + lambda.norm_sqr() - shift, 0.0);
    }

    /// `(min, max)` of the Gram diagonal over all columns.
    fn diag_range(&self, lambda: Complex64) -> (f64, f64) {
        let mut row = vec![ZERO; self.band + 1];
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for j in 0..self.stored_rows().min(self.ncols) {
            self.gram_row(j, lambda, 0.0, &mut row);
            lo = lo.min(row[0].re);
            hi = hi.max(row[0].re);
        }
        (lo.max(0.0), hi)
    }

    /// Does the LDL* factorization of `G(λ) - shift` keep every pivot above `floor`?
    pub fn gram_pd(&self, lambda: Complex64, shift: f64, floor: f64) -> bool {
        ldl_check(self.ncols, self.band, self.period, floor, |j, out| self.gram_row(j, lambda, shift, out))
    }

    /// Certified enclosure of the smallest singular value of `Q(λ)`.
    pub fn smallest_singular_interval(&self, lambda: Complex64, width: f64) -> CertifiedValue {
        if self.ncols == 0 {
            return CertifiedValue { lo: f64::INFINITY, hi: f64::INFINITY, width, note: "empty section".into() };
        }
        let (dmin, dmax) = self.diag_range(lambda);
        let floor = pivot_floor(self.ncols, dmax);
        bisect(dmin.sqrt(), floor, width, |t2| self.gram_pd(lambda, t2, floor))
    }

    /// Full LDL* factors of `G(λ) - shift`, or `None` if a pivot is not positive.
    fn factor(&self, lambda: Complex64, shift: f64) -> Option<(Vec<Complex64>, Vec<f64>)> {
        let (n, b) = (self.ncols, self.band);
        let mut l = vec![ZERO; n * (b + 1)];
        let mut d = vec![0.0; n];
        let mut g = vec![ZERO; b + 1];
        for j in 0..n {
            self.gram_row(j, lambda, shift, &mut g);
            let lo = j.saturating_sub(b);
            for c in lo..j {
                let mut s = g[j - c];
                let plo = lo.max(c.saturating_sub(b));
                for p in plo..c {
                    s -= l[j * (b + 1) + (j - p)] * l[c * (b + 1) + (c - p)].conj() * d[p];
                }
                l[j * (b + 1) + (j - c)] = s / d[c];
            }
            let mut piv = g[0].re;
            for p in lo..j {
                piv -= l[j * (b + 1) + (j - p)].norm_sqr() * d[p];
            }
            if !(piv > 0.0) {
                return None;
            }
            d[j] = piv;
        }
        Some((l, d))
    }

    /// Inverse iteration for the right singular vector of `Q(λ)` belonging to
    /// the smallest singular value, shifted by `sigma^2 < s_min^2`.
    pub fn smallest_singular_vector(&self, lambda: Complex64, sigma: f64, iters: usize) -> Option<Vec<Complex64>> {
        let (n, b) = (self.ncols, self.band);
        let (l, d) = self.factor(lambda, sigma * sigma)?;
        let mut v: Vec<Complex64> = (0..n).map(|j| Complex64::new(1.0 + (j % 7) as f64 * 0.1, (j % 3) as f64 * 0.05)).collect();
        for _ in 0..iters {
            for j in 0..n {
                let mut s = v[j];
                for p in j.saturating_sub(b)..j {
                    s -= l[j * (b + 1) + (j - p)] * v[p];
                }
                v[j] = s;
            }
            for j in 0..n {
                v[j] /= d[j];
            }
            for j in (0..n).rev() {
                let mut s = v[j];
                for r in (j + 1)..n.min(j + b + 1) {
                    s -= l[r * (b + 1) + (r - j)].conj() * v[r];
                }
                v[j] = s;
            }
            let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                return None;
            }
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Some(v)
    }
}

/// `dim * eps * max_diagonal`.
pub fn pivot_floor(dim: usize, max_diag: f64) -> f64 {
    dim as f64 * f64::EPSILON * max_diag.abs()
}

/// Rolling LDL* check on a banded hermitian matrix given row by row as lower
/// band entries. With `period = Some(p)`, rows `j >= band + p` must repeat with
/// period `p`; the factorization then stops early once its state repeats.
fn ldl_check(n: usize, b: usize, period: Option<usize>, floor: f64, mut row: impl FnMut(usize, &mut [Complex64])) -> bool {
    let w = b.max(1);
    let cap = match period {
        Some(p) => b + SKIP_MULTIPLES * p + 1,
        None => b + 1,
    };
    let mut l = vec![ZERO; cap * w];
    let mut d = vec![0.0f64; cap];
    let mut g = vec![ZERO; b + 1];
    let mut skipped = period.is_none();
    let mut j = 0usize;
    while j < n {
        row(j, &mut g);
        let sj = j % cap;
        let lo = j.saturating_sub(b);
        for c in lo..j {
            let sc = c % cap;
            let mut s = g[j - c];
            let plo = lo.max(c.saturating_sub(b));
            for p in plo..c {
                s -= l[sj * w + (j - p - 1)] * l[sc * w + (c - p - 1)].conj() * d[p % cap];
            }
            l[sj * w + (j - c - 1)] = s / d[sc];
        }
        let mut piv = g[0].re;
        for p in lo..j {
            piv -= l[sj * w + (j - p - 1)].norm_sqr() * d[p % cap];
        }
        if !(piv > floor) {
            return false;
        }
        d[sj] = piv;
        if !skipped {
            let p = period.unwrap();
            for k in 1..=SKIP_MULTIPLES {
                let q = k * p;
                if j < 2 * b + q || j + 1 >= n {
                    break;
                }
                if state_repeats(&l, &d, cap, w, b, j, q) {
                    let jumps = (n - 1 - j) / q;
                    if jumps > 0 {
                        let target = j + jumps * q;
                        let moved: Vec<(Vec<Complex64>, f64)> = (0..b.max(1))
                            .map(|s| {
                                let src = (j - s) % cap;
                                (l[src * w..(src + 1) * w].to_vec(), d[src])
                            })
                            .collect();
                        for (s, (lrow, dv)) in moved.into_iter().enumerate() {
                            let dst = (target - s) % cap;
                            l[dst * w..(dst + 1) * w].copy_from_slice(&lrow);
                            d[dst] = dv;
                        }
                        j = target;
                    }
                    skipped = true;
                    break;
                }
            }
        }
        j += 1;
    }
    true
}

/// Are rows `j-b+1..=j` of the factor bitwise equal to rows `j-q-b+1..=j-q`?
fn state_repeats(l: &[Complex64], d: &[f64], cap: usize, w: usize, b: usize, j: usize, q: usize) -> bool {
    let depth = b.max(1);
    for s in 0..depth {
        let (x, y) = ((j - s) % cap, (j - q - s) % cap);
        if d[x].to_bits() != d[y].to_bits() {
            return false;
        }
    }
    for s in 0..depth {
        let (x, y) = ((j - s) % cap, (j - q - s) % cap);
        let same = l[x * w..(x + 1) * w]
            .iter()
            .zip(&l[y * w..(y + 1) * w])
            .all(|(u, v)| u.re.to_bits() == v.re.to_bits() && u.im.to_bits() == v.im.to_bits());
        if !same {
            return false;
        }
    }
    true
}

/// Bisection on `t` for the predicate `pd(t^2) <=> t < s_min` up to the floor.
///
/// `upper` must be an upper bound on `s_min` (any column norm is one). A pass
/// at `t` certifies `s_min^2 >= t^2 - floor`; a failure certifies
/// `s_min^2 <= t^2 + 2 floor`.
fn bisect(upper: f64, floor: f64, width: f64, mut pd: impl FnMut(f64) -> bool) -> CertifiedValue {
    let note = format!("Cholesky bisection on Q*Q - t^2, pivot floor {floor:.3e}");
    if upper <= 0.0 {
        return CertifiedValue { lo: 0.0, hi: 0.0, width, note: "zero column".into() };
    }
    let report_lo = |t: f64| (t * t - floor).max(0.0).sqrt();
    let report_hi = |t: f64| (t * t + 2.0 * floor).sqrt();
    let mut t_lo = 0.0f64;
    let mut t_hi = upper * (1.0 + 1e-6) + 1e-12;
    let mut guard = 0;
    while pd(t_hi * t_hi) {
        t_lo = t_hi;
        t_hi *= 2.0;
        guard += 1;
        if guard > 60 {
            return CertifiedValue { lo: report_lo(t_lo), hi: f64::INFINITY, width, note: format!("{note}; no failing shift found") };
        }
    }
    for _ in 0..200 {
        if report_hi(t_hi) - report_lo(t_lo) <= width {
            break;
        }
        let mid = 0.5 * (t_lo + t_hi);
        if mid <= t_lo || mid >= t_hi {
            break;
        }
        if pd(mid * mid) {
            t_lo = mid;
        } else {
            t_hi = mid;
        }
    }
    let (lo, hi) = (report_lo(t_lo), report_hi(t_hi));
    let note = if hi - lo > width { format!("{note}; width {:.3e} not reached", hi - lo) } else { note };
    CertifiedValue { lo, hi, width, note }
}

/// Certified smallest singular value of an uneven section.
pub fn smallest_singular_interval(q: &UnevenSection, width: f64) -> Result<CertifiedValue> {
    if !(width > 0.0) {
        return Err(Error::InvalidInput(format!("interval width must be positive, got {width}")));
    }
    if q.ncols() == 0 {
        return Err(Error::InvalidInput("section has no columns".into()));
    }
    Ok(q.kernel()?.smallest_singular_interval(q.lambda, width))
}

/// Unit vector `v` on the columns approximately minimizing `||Q v||`, together
/// with the certified interval used to pick the shift.
pub fn quasimode(q: &UnevenSection, width: f64, iters: usize) -> Result<(CertifiedValue, Vec<Complex64>)> {
    let k = q.kernel()?;
    let iv = k.smallest_singular_interval(q.lambda, width);
    let sigma = (iv.lo - width).max(0.0);
    let mut shift = sigma;
    for _ in 0..8 {
        if let Some(v) = k.smallest_singular_vector(q.lambda, shift, iters) {
            return Ok((iv, v));
        }
        shift *= 0.5;
    }
    Err(Error::Uncertifiable("inverse iteration could not factor the shifted Gram matrix".into()))
}

/// Cholesky test with pivot floor `dim * eps * max_diag` after hermitian symmetrization.
pub fn is_positive_definite(a: &[Vec<Complex64>]) -> Result<bool> {
    let n = a.len();
    if a.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidInput("matrix is not square".into()));
    }
    if n == 0 {
        return Ok(true);
    }
    let scale = a.iter().flatten().fold(0.0f64, |m, z| m.max(z.norm()));
    let mut dev = 0.0f64;
    for i in 0..n {
        for j in 0..=i {
            dev = dev.max((a[i][j] - a[j][i].conj()).norm());
        }
    }
    if dev > HERMITIAN_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidInput(format!("matrix is not hermitian (deviation {dev:.3e})")));
    }
    let max_diag = (0..n).map(|i| a[i][i].re).fold(f64::NEG_INFINITY, f64::max);
    if !(max_diag > 0.0) {
        return Ok(false);
    }
    let floor = pivot_floor(n, max_diag);
    Ok(ldl_check(n, n - 1, None, floor, |j, out| {
        for k in 0..n {
            out[k] = if k <= j { 0.5 * (a[j][j - k] + a[j - k][j].conj()) } else { ZERO };
        }
    }))
}

/// Kernels for every patch of a section catalog.
#[derive(Debug)]
pub struct SectionCatalog {
    pub outer: f64,
    pub inner: f64,
    pub complete: bool,
    pub kernels: Vec<SectionKernel>,
}

impl SectionCatalog {
    pub(crate) fn build(catalog: &PatchCatalog, _m: f64) -> Result<Self> {
        let inner = catalog.inner.ok_or_else(|| Error::Catalog("section catalog without inner scale".into()))?;
        let kernels = catalog.patches.iter().map(kernel_from_patch).collect::<Result<Vec<_>>>()?;
        Ok(SectionCatalog { outer: catalog.scale, inner, complete: catalog.complete, kernels })
    }
}

fn kernel_from_patch(p: &Patch) -> Result<SectionKernel> {
    let cols = p.columns.as_ref().ok_or_else(|| Error::Catalog(format!("patch {} lacks inner columns", p.id)))?;
    let mut col_of = vec![usize::MAX; p.points.len()];
    for (k, &i) in cols.iter().enumerate() {
        col_of[i] = k;
    }
    let entries: Vec<(usize, usize, Complex64)> =
        p.matrix.iter().filter(|&(_, j, _)| col_of[j] != usize::MAX).map(|(i, j, v)| (i, col_of[j], v)).collect();
    SectionKernel::build(p.id, p.points.len(), cols, &entries)
}
