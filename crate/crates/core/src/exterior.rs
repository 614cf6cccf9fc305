//! Exterior powers of a derivation module: k-vectors over a fixed basis, determinant
//! pairings with k-forms `dπ_1 ∧ … ∧ dπ_k`, norm bounds, wedge products and the
//! representation of k-currents by k-vector fields.

use std::cmp::Ordering;
use std::sync::Arc;

use crate::currents::Current;
use crate::derivations::{factorial, Derivation, Pseudodual};
use crate::error::{Error, Result};
use crate::space::{lip_constant, FnDict, MetricSpace};

/// Determinant that is exactly alternating in its columns: columns are first sorted
/// lexicographically (tracking the permutation sign) and the sorted matrix is expanded by
/// Laplace along the first column. Repeated columns give exactly 0.
///
/// `cols[j][i]` is the entry in row `i`, column `j`.
pub fn canonical_det(cols: &[Vec<f64>]) -> f64 {
    let k = cols.len();
    if k == 0 {
        return 1.0;
    }
    let mut order: Vec<usize> = (0..k).collect();
    let cmp = |a: &Vec<f64>, b: &Vec<f64>| -> Ordering {
        for (x, y) in a.iter().zip(b) {
            match x.total_cmp(y) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        Ordering::Equal
    };
    order.sort_by(|&a, &b| cmp(&cols[a], &cols[b]));
    for w in order.windows(2) {
        if cmp(&cols[w[0]], &cols[w[1]]) == Ordering::Equal {
            return 0.0;
        }
    }
    let sign = permutation_sign(&order);
    let sorted: Vec<&[f64]> = order.iter().map(|&j| cols[j].as_slice()).collect();
    let rows: Vec<usize> = (0..k).collect();
    sign * laplace(&sorted, &rows, 0)
}

fn permutation_sign(p: &[usize]) -> f64 {
    let mut seen = vec![false; p.len()];
    let mut sign = 1.0;
    for start in 0..p.len() {
        if seen[start] {
            continue;
        }
        let mut len = 0;
        let mut i = start;
        while !seen[i] {
            seen[i] = true;
            i = p[i];
            len += 1;
        }
        if len % 2 == 0 {
            sign = -sign;
        }
    }
    sign
}

/// Laplace expansion of the minor on `rows` × `cols[col..]`, along column `col`.
fn laplace(cols: &[&[f64]], rows: &[usize], col: usize) -> f64 {
    if rows.len() == 1 {
        return cols[col][rows[0]];
    }
    let mut total = 0.0;
    let mut sub = Vec::with_capacity(rows.len() - 1);
    for (pos, &r) in rows.iter().enumerate() {
        let a = cols[col][r];
        if a == 0.0 {
            continue;
        }
        sub.clear();
        sub.extend(rows.iter().copied().filter(|&q| q != r));
        let minor = laplace(cols, &sub, col + 1);
        total += if pos % 2 == 0 { a * minor } else { -a * minor };
    }
    total
}

/// Increasing k-tuples of `0..n`.
pub fn increasing_tuples(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// A k-vector field `Σ_a λ_a D_{a_1} ∧ … ∧ D_{a_k}` over increasing tuples `a` of a shared
/// derivation basis.
#[derive(Debug, Clone)]
pub struct KVector {
    pub basis: Arc<[Derivation]>,
    pub k: usize,
    pub tuples: Vec<Vec<usize>>,
    /// `coeffs[t][x]`: coefficient of `tuples[t]` at point `x`.
    pub coeffs: Vec<Vec<f64>>,
}

impl KVector {
    pub fn new(basis: Arc<[Derivation]>, k: usize, tuples: Vec<Vec<usize>>, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        let n_basis = basis.len();
        let n = basis.first().map_or(0, |d| d.n());
        if tuples.len() != coeffs.len() {
            return Err(Error::LengthMismatch { expected: tuples.len(), got: coeffs.len() });
        }
        for t in &tuples {
            if t.len() != k {
                return Err(Error::ArityMismatch { expected: k, got: t.len() });
            }
            if t.windows(2).any(|w| w[0] >= w[1]) || t.iter().any(|&i| i >= n_basis) {
                return Err(Error::InvalidArgument(format!("tuple {t:?} is not increasing in 0..{n_basis}")));
            }
        }
        for c in &coeffs {
            if c.len() != n {
                return Err(Error::LengthMismatch { expected: n, got: c.len() });
            }
        }
        for d in basis.iter() {
            if d.n() != n {
                return Err(Error::InvalidArgument("basis derivations live on different spaces".into()));
            }
        }
        Ok(KVector { basis, k, tuples, coeffs })
    }

    /// `λ D_{a_1} ∧ … ∧ D_{a_k}` for a single increasing tuple.
    pub fn simple(basis: Arc<[Derivation]>, tuple: Vec<usize>, lambda: Vec<f64>) -> Result<Self> {
        let k = tuple.len();
        KVector::new(basis, k, vec![tuple], vec![lambda])
    }

    pub fn zero(basis: Arc<[Derivation]>, k: usize) -> Self {
        KVector { basis, k, tuples: Vec::new(), coeffs: Vec::new() }
    }

    pub fn n_points(&self) -> usize {
        self.basis.first().map_or(0, |d| d.n())
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn mu(&self) -> &[f64] {
        self.basis.first().map_or(&[], |d| d.mu())
    }

    pub fn scale(&self, c: f64) -> KVector {
        let mut out = self.clone();
        out.coeffs.iter_mut().flatten().for_each(|v| *v *= c);
        out
    }

    pub fn module_scale(&self, lambda: &[f64]) -> KVector {
        let mut out = self.clone();
        for c in out.coeffs.iter_mut() {
            for (v, l) in c.iter_mut().zip(lambda) {
                *v *= l;
            }
        }
        out
    }

    /// Coefficient of `tuple` (increasing) at `x`; 0 if absent.
    pub fn coeff(&self, tuple: &[usize], x: usize) -> f64 {
        self.tuples.iter().zip(&self.coeffs).filter(|(t, _)| t.as_slice() == tuple).map(|(_, c)| c[x]).sum()
    }

    /// Merges repeated tuples and drops identically zero ones; tuples end up sorted.
    pub fn canonical(&self) -> KVector {
        let mut tuples: Vec<Vec<usize>> = self.tuples.clone();
        tuples.sort();
        tuples.dedup();
        let n = self.n_points();
        let mut coeffs = Vec::new();
        let mut kept = Vec::new();
        for t in tuples {
            let c: Vec<f64> = (0..n).map(|x| self.coeff(&t, x)).collect();
            if c.iter().any(|&v| v != 0.0) {
                kept.push(t);
                coeffs.push(c);
            }
        }
        KVector { basis: self.basis.clone(), k: self.k, tuples: kept, coeffs }
    }

    pub fn add(&self, other: &KVector) -> Result<KVector> {
        if !Arc::ptr_eq(&self.basis, &other.basis) && self.basis.len() != other.basis.len() {
            return Err(Error::InvalidArgument("k-vectors over different bases".into()));
        }
        if self.k != other.k {
            return Err(Error::ArityMismatch { expected: self.k, got: other.k });
        }
        let mut out = self.clone();
        out.tuples.extend(other.tuples.iter().cloned());
        out.coeffs.extend(other.coeffs.iter().cloned());
        Ok(out.canonical())
    }

    /// `D_b π_j(x)` for every basis element `b` appearing in some tuple.
    pub(crate) fn actions(&self, pis: &[&[f64]]) -> Result<Vec<Option<Vec<Vec<f64>>>>> {
        let mut used = vec![false; self.basis.len()];
        for t in &self.tuples {
            for &b in t {
                used[b] = true;
            }
        }
        used.iter()
            .enumerate()
            .map(|(b, &u)| {
                if u {
                    pis.iter().map(|p| self.basis[b].apply(p)).collect::<Result<Vec<_>>>().map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect()
    }
}

/// Determinant `det(D_{a_i} π_j(x))` from precomputed actions.
pub(crate) fn tuple_det(actions: &[Option<Vec<Vec<f64>>>], tuple: &[usize], x: usize) -> f64 {
    let k = tuple.len();
    let cols: Vec<Vec<f64>> = (0..k)
        .map(|j| tuple.iter().map(|&b| actions[b].as_ref().expect("used basis")[j][x]).collect())
        .collect();
    canonical_det(&cols)
}

/// `⟨ξ, dπ_1 ∧ … ∧ dπ_k⟩(x) = Σ_a λ_a(x) det(D_{a_i} π_j(x))`.
pub fn pairing(xi: &KVector, pis: &[&[f64]]) -> Result<Vec<f64>> {
    if pis.len() != xi.k {
        return Err(Error::ArityMismatch { expected: xi.k, got: pis.len() });
    }
    let n = xi.n_points();
    for p in pis {
        if p.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: p.len() });
        }
    }
    let actions = xi.actions(pis)?;
    Ok((0..n)
        .map(|x| {
            xi.tuples
                .iter()
                .zip(&xi.coeffs)
                .filter(|(_, c)| c[x] != 0.0)
                .map(|(t, c)| c[x] * tuple_det(&actions, t, x))
                .sum()
        })
        .collect())
}

/// Certified per-point interval for a local norm.
#[derive(Debug, Clone, PartialEq)]
pub struct NormInterval {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Local norm bounds of a k-vector.
///
/// The upper bound is `Σ_a |λ_a| Π_i |D_{a_i}|_loc`. The lower bound divides
/// `|⟨ξ, dπ⟩|` for each probe `π` by `c(π)`, the largest `|det|` of `k` molecule vectors
/// `((π_j(q) − π_j(p))/d(p, q))_j` over pairs `p ≠ q`; this is the constant with which
/// `|⟨ξ, dπ⟩| ≤ c(π) |ξ|_loc` holds for the pairing of k-vectors of derivations.
pub fn local_norm_bounds(xi: &KVector, space: &MetricSpace, probes: &[Vec<Vec<f64>>]) -> Result<NormInterval> {
    let n = xi.n_points();
    let ln: Vec<Vec<f64>> = xi.basis.iter().map(|d| d.local_norm(space)).collect::<Result<_>>()?;
    let mut upper = vec![0.0f64; n];
    for (t, c) in xi.tuples.iter().zip(&xi.coeffs) {
        for x in 0..n {
            if c[x] != 0.0 {
                upper[x] += c[x].abs() * t.iter().map(|&b| ln[b][x]).product::<f64>();
            }
        }
    }
    let mut lower = vec![0.0f64; n];
    for probe in probes {
        let pis: Vec<&[f64]> = probe.iter().map(|p| p.as_slice()).collect();
        let c = molecule_constant(&pis, space);
        if c == 0.0 {
            continue;
        }
        let v = pairing(xi, &pis)?;
        for x in 0..n {
            lower[x] = lower[x].max(v[x].abs() / c);
        }
    }
    for x in 0..n {
        lower[x] = lower[x].min(upper[x]);
    }
    Ok(NormInterval { lower, upper })
}

/// Largest `|det|` of `k` molecule vectors of `π` (exact for `k ≤ 2` or few pairs,
/// otherwise the Hadamard bound).
pub fn molecule_constant(pis: &[&[f64]], space: &MetricSpace) -> f64 {
    let k = pis.len();
    let n = space.len();
    let mut mols: Vec<Vec<f64>> = Vec::new();
    for p in 0..n {
        for q in (p + 1)..n {
            let d = space.dist(p, q);
            let v: Vec<f64> = pis.iter().map(|f| (f[q] - f[p]) / d).collect();
            if v.iter().any(|&c| c != 0.0) && !mols.contains(&v) {
                mols.push(v);
            }
        }
    }
    if k == 0 {
        return 1.0;
    }
    if k == 1 {
        return mols.iter().map(|v| v[0].abs()).fold(0.0, f64::max);
    }
    let combos = binomial(mols.len(), k);
    if k == 2 || combos <= 20_000.0 {
        let mut best: f64 = 0.0;
        for t in increasing_tuples(mols.len(), k) {
            let cols: Vec<Vec<f64>> = t.iter().map(|&i| mols[i].clone()).collect();
            best = best.max(canonical_det(&cols).abs());
        }
        return best;
    }
    let max_norm = mols.iter().map(|v| v.iter().map(|c| c * c).sum::<f64>().sqrt()).fold(0.0, f64::max);
    max_norm.powi(k as i32)
}

#[derive(Debug, Clone)]
pub struct WedgeReport {
    pub product: KVector,
    /// Set when `k + l` exceeds the basis size.
    pub note: Option<String>,
    /// `max_x upper(ω1 ∧ ω2)(x)` and `max_x upper(ω1)(x) · max_x upper(ω2)(x)`.
    pub product_norm: f64,
    pub factor_norms: f64,
    pub norm_ok: bool,
}

/// Sign of the shuffle merging increasing `a` and `b`, or `None` when they share an index.
fn shuffle_sign(a: &[usize], b: &[usize]) -> Option<(f64, Vec<usize>)> {
    let mut merged: Vec<usize> = a.iter().chain(b).copied().collect();
    let mut inversions = 0usize;
    for &i in a {
        for &j in b {
            if i == j {
                return None;
            }
            if i > j {
                inversions += 1;
            }
        }
    }
    merged.sort_unstable();
    Some((if inversions % 2 == 0 { 1.0 } else { -1.0 }, merged))
}

/// `ω1 ∧ ω2` over a shared basis.
pub fn wedge(w1: &KVector, w2: &KVector, space: &MetricSpace) -> Result<WedgeReport> {
    if w1.basis.len() != w2.basis.len() || !Arc::ptr_eq(&w1.basis, &w2.basis) && w1.basis[..] != w2.basis[..] {
        return Err(Error::InvalidArgument("wedge needs a shared basis".into()));
    }
    let k = w1.k + w2.k;
    let n = w1.n_points();
    if k > w1.dim() {
        return Ok(WedgeReport {
            product: KVector::zero(w1.basis.clone(), k),
            note: Some(format!("degree {k} exceeds the basis size {}", w1.dim())),
            product_norm: 0.0,
            factor_norms: 0.0,
            norm_ok: true,
        });
    }
    let mut tuples = Vec::new();
    let mut coeffs = Vec::new();
    for (a, ca) in w1.tuples.iter().zip(&w1.coeffs) {
        for (b, cb) in w2.tuples.iter().zip(&w2.coeffs) {
            if let Some((sign, merged)) = shuffle_sign(a, b) {
                tuples.push(merged);
                coeffs.push((0..n).map(|x| sign * ca[x] * cb[x]).collect());
            }
        }
    }
    let product = KVector { basis: w1.basis.clone(), k, tuples, coeffs }.canonical();
    let none: [Vec<Vec<f64>>; 0] = [];
    let up = |v: &KVector| -> Result<f64> {
        Ok(local_norm_bounds(v, space, &none)?.upper.into_iter().fold(0.0, f64::max))
    };
    let product_norm = up(&product)?;
    let factor_norms = up(w1)? * up(w2)?;
    Ok(WedgeReport {
        product,
        note: None,
        product_norm,
        factor_norms,
        norm_ok: product_norm <= factor_norms * (1.0 + 1e-12) + 1e-15,
    })
}

#[derive(Debug, Clone)]
pub struct BanachBound {
    pub bound: f64,
    /// Largest probe discrepancy between the decomposition and the target.
    pub probe_defect: f64,
    /// The decomposition pairs to zero on every probe and was cancelled.
    pub cancelled: bool,
    /// Best shear parameter found by the optional local search (`None` if not run).
    pub shear: Option<f64>,
}

/// Upper bound `Σ_i |c_i| Π_j ‖D_{i_j}‖` on the projective norm of the target.
///
/// Every term `(c, [D_1, …, D_k])` stands for `c D_1 ∧ … ∧ D_k`. The decomposition is first
/// checked against `target` on the probe forms. Terms are then put in canonical form
/// (factors sorted, equal terms merged, repeated factors dropped); if all probes give 0
/// the bound is 0. With `improve`, two-term decompositions are sheared
/// `(D_1 + tD_2) ∧ D_2` to reduce the bound.
pub fn banach_norm_upper(
    terms: &[(f64, Vec<Derivation>)],
    target: &KVector,
    space: &MetricSpace,
    probes: &[Vec<Vec<f64>>],
    improve: bool,
) -> Result<BanachBound> {
    let k = target.k;
    for (_, t) in terms {
        if t.len() != k {
            return Err(Error::ArityMismatch { expected: k, got: t.len() });
        }
    }
    let n = target.n_points();
    let mut probe_defect: f64 = 0.0;
    let mut all_zero = true;
    for probe in probes {
        let pis: Vec<&[f64]> = probe.iter().map(|p| p.as_slice()).collect();
        let want = pairing(target, &pis)?;
        let mut got = vec![0.0; n];
        for (c, ds) in terms {
            let v = simple_pairing(ds, &pis)?;
            for x in 0..n {
                got[x] += c * v[x];
            }
        }
        for x in 0..n {
            probe_defect = probe_defect.max((got[x] - want[x]).abs());
            if got[x].abs() > 1e-12 {
                all_zero = false;
            }
        }
    }
    if probe_defect > 1e-9 {
        return Err(Error::InvalidArgument(format!("decomposition differs from the target on probes by {probe_defect}")));
    }
    if all_zero {
        return Ok(BanachBound { bound: 0.0, probe_defect, cancelled: true, shear: None });
    }
    let norms: Vec<Vec<f64>> = terms
        .iter()
        .map(|(_, ds)| ds.iter().map(|d| d.norm(space)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let mut bound: f64 = terms.iter().zip(&norms).map(|((c, _), ns)| c.abs() * ns.iter().product::<f64>()).sum();
    let mut shear = None;
    if improve && k == 2 && terms.len() == 1 {
        let (c, ds) = &terms[0];
        let mut best_t = 0.0;
        for step in -40..=40 {
            let t = step as f64 / 20.0;
            let sheared = ds[0].add(&ds[1].scale(t))?;
            let b = c.abs() * sheared.norm(space)? * norms[0][1];
            if b < bound - 1e-12 {
                bound = b;
                best_t = t;
            }
        }
        shear = Some(best_t);
    }
    Ok(BanachBound { bound, probe_defect, cancelled: false, shear })
}

/// `det(D_i π_j)` for an explicit list of derivations.
pub fn simple_pairing(ds: &[Derivation], pis: &[&[f64]]) -> Result<Vec<f64>> {
    if ds.len() != pis.len() {
        return Err(Error::ArityMismatch { expected: ds.len(), got: pis.len() });
    }
    let acts: Vec<Vec<Vec<f64>>> =
        ds.iter().map(|d| pis.iter().map(|p| d.apply(p)).collect::<Result<Vec<_>>>()).collect::<Result<_>>()?;
    let n = ds.first().map_or(pis.first().map_or(0, |p| p.len()), |d| d.n());
    Ok((0..n)
        .map(|x| {
            let cols: Vec<Vec<f64>> = (0..pis.len()).map(|j| (0..ds.len()).map(|i| acts[i][j][x]).collect()).collect();
            canonical_det(&cols)
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct Representation {
    /// `ω_T` over the global basis `Σ_α χ_{V_α} D_{α,i}`.
    pub omega: KVector,
    /// Mass measure used as the reference (`‖T‖` lower estimate, raised where needed).
    pub mass: Vec<f64>,
    /// `λ_{α,a}` per piece, indexed like `omega.tuples`.
    pub piece_lambdas: Vec<Vec<Vec<f64>>>,
    pub max_lambda: f64,
    /// Largest discrepancy between `T` and `∫ f ⟨ω_T, dπ⟩ d‖T‖` over dictionary tuples.
    pub reconstruction_error: f64,
    pub omega_norm: f64,
    /// `C(N)^k binom(N, k)` with `C(N) = N! 2^N`.
    pub norm_bound: f64,
    pub excluded: Vec<usize>,
}

/// Represents a k-current as `∫ f ⟨ω_T, dπ⟩ d‖T‖` over the pseudodual bases.
///
/// On each piece `V_α` with pseudodual functions `g_{α,j}`, the coefficient of the tuple `a`
/// at `x` is `T(χ_x, g_{a_1}, …, g_{a_k}) / m(x)`, where `m(x)` is the larger of the mass
/// lower bound at `x` and `max_a |T(χ_x, g_a)|`. Points with `m(x) = 0` are excluded.
pub fn represent_current(
    t: &Current,
    pd: &Pseudodual,
    space: &MetricSpace,
    dict: &FnDict,
    mass_lower: &[f64],
) -> Result<Representation> {
    let k = t.k();
    let n = space.len();
    let big_n = pd.pieces.first().map_or(0, |p| p.derivations.len());
    if mass_lower.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: mass_lower.len() });
    }
    if k > big_n {
        return Err(Error::ArityMismatch { expected: big_n, got: k });
    }
    let tuples = increasing_tuples(big_n, k);
    // Global basis: Σ_α χ_{V_α} D_{α,i}.
    let basis: Vec<Derivation> = (0..big_n)
        .map(|i| {
            let chis: Vec<Vec<f64>> = pd
                .pieces
                .iter()
                .map(|p| (0..n).map(|x| if p.set.contains(&x) { 1.0 } else { 0.0 }).collect())
                .collect();
            let terms: Vec<(&[f64], &Derivation)> =
                pd.pieces.iter().zip(&chis).map(|(p, c)| (c.as_slice(), &p.derivations[i])).collect();
            Derivation::combine(&terms)
        })
        .collect::<Result<_>>()?;
    let basis: Arc<[Derivation]> = basis.into();

    let mut values = vec![vec![0.0; n]; tuples.len()];
    let mut piece_lambdas = Vec::with_capacity(pd.pieces.len());
    for piece in &pd.pieces {
        let mut lam = vec![vec![0.0; n]; tuples.len()];
        for (ti, tuple) in tuples.iter().enumerate() {
            let gs: Vec<&[f64]> = tuple.iter().map(|&j| piece.g_values[j].as_slice()).collect();
            let dens = t.density(&gs)?;
            for &x in &piece.set {
                values[ti][x] = dens[x];
                lam[ti][x] = dens[x];
            }
        }
        piece_lambdas.push(lam);
    }
    let mut mass = mass_lower.to_vec();
    for x in 0..n {
        for v in &values {
            mass[x] = mass[x].max(v[x].abs());
        }
    }
    let covered: Vec<bool> = (0..n).map(|x| pd.pieces.iter().any(|p| p.set.contains(&x))).collect();
    let excluded: Vec<usize> = (0..n).filter(|&x| mass[x] == 0.0 || !covered[x]).collect();
    let mut coeffs = vec![vec![0.0; n]; tuples.len()];
    for (ti, v) in values.iter().enumerate() {
        for x in 0..n {
            if mass[x] > 0.0 && covered[x] {
                coeffs[ti][x] = v[x] / mass[x];
            }
        }
    }
    for lam in piece_lambdas.iter_mut() {
        for l in lam.iter_mut() {
            for x in 0..n {
                l[x] = if mass[x] > 0.0 { l[x] / mass[x] } else { 0.0 };
            }
        }
    }
    let max_lambda = coeffs.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let omega = KVector { basis: basis.clone(), k, tuples, coeffs };

    // Reconstruction against direct evaluation on all dictionary tuples.
    let mut err: f64 = 0.0;
    let dict_tuples = if k == 0 { vec![vec![]] } else { increasing_tuples(dict.len(), k) };
    for f in &dict.fns {
        for dt in &dict_tuples {
            let pis: Vec<&[f64]> = dt.iter().map(|&i| dict.fns[i].values.as_slice()).collect();
            let direct = t.evaluate(&f.values, &pis)?;
            let pair = pairing(&omega, &pis)?;
            let rebuilt: f64 = (0..n).map(|x| f.values[x] * pair[x] * mass[x]).sum();
            err = err.max((direct - rebuilt).abs());
        }
    }
    let cn = factorial(big_n) * 2f64.powi(big_n as i32);
    let none: [Vec<Vec<f64>>; 0] = [];
    let omega_norm = local_norm_bounds(&omega, space, &none)?.upper.into_iter().fold(0.0, f64::max);
    Ok(Representation {
        omega,
        mass,
        piece_lambdas,
        max_lambda,
        reconstruction_error: err,
        omega_norm,
        norm_bound: cn.powi(k as i32) * binomial(big_n, k),
        excluded,
    })
}

/// Normalizes a function to be 1-Lipschitz (unchanged if already so or constant).
pub fn unit_lipschitz(values: &[f64], space: &MetricSpace) -> Result<Vec<f64>> {
    let l = lip_constant(values, space)?;
    Ok(if l > 1.0 { values.iter().map(|v| v / l).collect() } else { values.to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::currents::{mass_estimate, MassConfig};
    use crate::derivations::pseudodual_basis;
    use crate::fixtures::{self, Fixture};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn xy_basis(g: &Fixture) -> Arc<[Derivation]> {
        vec![fixtures::grid_dx(g), fixtures::grid_dy(g)].into()
    }

    fn block(n: usize) -> Vec<usize> {
        (0..n * n).filter(|p| p % n != n - 1 && p / n != n - 1).collect()
    }

    fn dict_probes(dict: &FnDict, k: usize) -> Vec<Vec<Vec<f64>>> {
        increasing_tuples(dict.len(), k)
            .into_iter()
            .map(|t| t.iter().map(|&i| dict.fns[i].values.clone()).collect())
            .collect()
    }

    #[test]
    fn determinant_helpers() {
        assert_eq!(canonical_det(&[vec![1.0, 0.0], vec![0.0, 1.0]]), 1.0);
        assert_eq!(canonical_det(&[vec![0.0, 1.0], vec![1.0, 0.0]]), -1.0);
        let m = vec![vec![2.0, 1.0, 0.0], vec![1.0, 3.0, 1.0], vec![0.0, 1.0, 4.0]];
        assert!((canonical_det(&m) - 18.0).abs() < 1e-12);
        assert_eq!(increasing_tuples(4, 2).len(), 6);
        assert_eq!(binomial(5, 2), 10.0);
    }

    #[test]
    fn pairing_examples() {
        let g = fixtures::grid(4);
        let xi = KVector::simple(xy_basis(&g), vec![0, 1], vec![1.0; 16]).unwrap();
        let (x, y) = (g.space.coordinate(0).unwrap(), g.space.coordinate(1).unwrap());
        let p = pairing(&xi, &[&x, &y]).unwrap();
        let q = pairing(&xi, &[&y, &x]).unwrap();
        let r = pairing(&xi, &[&x, &x]).unwrap();
        let b = block(4);
        for z in 0..16 {
            let want = if b.contains(&z) { 1.0 } else { 0.0 };
            assert!((p[z] - want).abs() < 1e-12);
            assert!((q[z] + want).abs() < 1e-12);
            assert_eq!(r[z], 0.0);
        }
        assert!(matches!(pairing(&xi, &[&x]), Err(Error::ArityMismatch { .. })));
    }

    #[test]
    fn norm_bound_examples() {
        let g = fixtures::grid(4);
        let (x, y) = (g.space.coordinate(0).unwrap(), g.space.coordinate(1).unwrap());
        let xi = KVector::simple(xy_basis(&g), vec![0, 1], vec![1.0; 16]).unwrap();
        let probes = vec![vec![x.clone(), y.clone()]];
        let iv = local_norm_bounds(&xi, &g.space, &probes).unwrap();
        for z in block(4) {
            assert!((iv.lower[z] - 1.0).abs() < 1e-12 && (iv.upper[z] - 1.0).abs() < 1e-12);
        }
        let zero = KVector::zero(xy_basis(&g), 2);
        let iz = local_norm_bounds(&zero, &g.space, &probes).unwrap();
        assert!(iz.lower.iter().chain(&iz.upper).all(|&v| v == 0.0));
        let i3 = local_norm_bounds(&xi.scale(3.0), &g.space, &probes).unwrap();
        for z in 0..16 {
            assert!((i3.lower[z] - 3.0 * iv.lower[z]).abs() < 1e-12);
            assert!((i3.upper[z] - 3.0 * iv.upper[z]).abs() < 1e-12);
        }
    }

    #[test]
    fn wedge_examples() {
        let g = fixtures::grid(4);
        let basis = xy_basis(&g);
        let ones = vec![1.0; 16];
        let dx = KVector::simple(basis.clone(), vec![0], ones.clone()).unwrap();
        let dy = KVector::simple(basis.clone(), vec![1], ones.clone()).unwrap();
        let w = wedge(&dx, &dy, &g.space).unwrap();
        assert_eq!(w.product.tuples, vec![vec![0, 1]]);
        assert_eq!(w.product.coeffs[0], ones);
        assert!(w.norm_ok);
        let yx = wedge(&dy, &dx, &g.space).unwrap();
        assert!(yx.product.coeffs[0].iter().all(|&v| v == -1.0));
        assert!(wedge(&dx, &dx, &g.space).unwrap().product.tuples.is_empty());
        // (D_1 + D_2) ∧ D_2 = D_1 ∧ D_2.
        let sum = dx.add(&dy).unwrap();
        let w2 = wedge(&sum, &dy, &g.space).unwrap();
        assert_eq!(w2.product.tuples, vec![vec![0, 1]]);
        assert_eq!(w2.product.coeffs[0], ones);
        let over = wedge(&w.product, &dx, &g.space).unwrap();
        assert!(over.note.is_some() && over.product.tuples.is_empty());
    }

    #[test]
    fn banach_examples() {
        let g = fixtures::grid(4);
        let dict = fixtures::dictionary(&g.space);
        let probes = dict_probes(&dict, 2);
        let (dx, dy) = (fixtures::grid_dx(&g), fixtures::grid_dy(&g));
        let xi = KVector::simple(xy_basis(&g), vec![0, 1], vec![1.0; 16]).unwrap();
        let b = banach_norm_upper(&[(1.0, vec![dx.clone(), dy.clone()])], &xi, &g.space, &probes, false).unwrap();
        assert!((b.bound - 1.0).abs() < 1e-9);

        let zero = KVector::zero(xy_basis(&g), 2);
        let redundant = [(1.0, vec![dx.clone(), dy.clone()]), (1.0, vec![dy.clone(), dx.clone()])];
        let bz = banach_norm_upper(&redundant, &zero, &g.space, &probes, false).unwrap();
        assert!(bz.cancelled && bz.bound == 0.0);
        assert!(banach_norm_upper(&redundant, &xi, &g.space, &probes, false).is_err());

        // (D_x + D_y) ∧ D_y presents D_x ∧ D_y; the shear search should match a fine scan.
        let skew = dx.add(&dy).unwrap();
        let bs = banach_norm_upper(&[(1.0, vec![skew.clone(), dy.clone()])], &xi, &g.space, &probes, true).unwrap();
        let ny = dy.norm(&g.space).unwrap();
        let oracle = (-2000..=2000)
            .map(|s| skew.add(&dy.scale(s as f64 / 1000.0)).unwrap().norm(&g.space).unwrap() * ny)
            .fold(f64::INFINITY, f64::min);
        assert!(bs.bound >= oracle - 1e-9 && bs.bound <= oracle + 0.05 * ny * ny + 1e-9);
        assert_eq!(bs.shear, Some(-1.0));
    }

    #[test]
    fn represent_examples() {
        let g = fixtures::grid(4);
        let dict = fixtures::dictionary(&g.space);
        let pd = pseudodual_basis(&[fixtures::grid_dx(&g), fixtures::grid_dy(&g)], &dict, 0.5, &g.space, None).unwrap();
        for c in [1.0, 2.0] {
            let xi = KVector::simple(xy_basis(&g), vec![0, 1], vec![c; 16]).unwrap();
            let t = Current::precurrent(xi, g.mu.weights.clone()).unwrap();
            let m = mass_estimate(&t, &g.space, &dict, MassConfig::default()).unwrap();
            let rep = represent_current(&t, &pd, &g.space, &dict, &m.lower).unwrap();
            assert!(rep.reconstruction_error < 1e-9);
            assert!(rep.max_lambda <= 1.0 + 1e-9);
            for z in block(4) {
                let lam = rep.omega.coeff(&[0, 1], z);
                assert!((lam * rep.mass[z] - c * g.mu.weights[z]).abs() < 1e-12);
            }
            assert!(rep.omega_norm <= rep.norm_bound);
        }
        let zero = Current::zero(2, 16);
        let rep = represent_current(&zero, &pd, &g.space, &dict, &[0.0; 16]).unwrap();
        assert_eq!(rep.max_lambda, 0.0);
        assert_eq!(rep.excluded.len(), 16);
    }

    fn random_basis(g: &Fixture, big_n: usize, seed: u64) -> Arc<[Derivation]> {
        (0..big_n).map(|i| fixtures::random_derivation(&g.space, &g.mu, 3, seed.wrapping_mul(31).wrapping_add(i as u64))).collect::<Vec<_>>().into()
    }

    fn random_kvector(basis: Arc<[Derivation]>, k: usize, rng: &mut ChaCha8Rng) -> KVector {
        let n = basis[0].n();
        let tuples = increasing_tuples(basis.len(), k);
        let coeffs = tuples.iter().map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        KVector::new(basis, k, tuples, coeffs).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn pairing_is_alternating_and_bounded(seed in any::<u64>(), k in 1usize..=3) {
            let g = fixtures::grid(3);
            let dict = fixtures::dictionary(&g.space);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xi = random_kvector(random_basis(&g, 3, seed), k, &mut rng);
            let idx: Vec<usize> = (0..k).map(|_| rng.random_range(0..dict.len())).collect();
            let mut pis: Vec<Vec<f64>> = idx.iter().map(|&i| dict.fns[i].values.clone()).collect();
            let args: Vec<&[f64]> = pis.iter().map(|p| p.as_slice()).collect();
            let v = pairing(&xi, &args).unwrap();
            let upper = local_norm_bounds(&xi, &g.space, &[]).unwrap().upper;
            let glips: f64 = idx.iter().map(|&i| dict.fns[i].glip).product();
            for x in 0..9 {
                prop_assert!(v[x].abs() <= factorial(k) * upper[x] * glips * (1.0 + 1e-12) + 1e-12);
            }
            if k >= 2 {
                let j = rng.random_range(0..k - 1);
                pis.swap(j, j + 1);
                let args: Vec<&[f64]> = pis.iter().map(|p| p.as_slice()).collect();
                let w = pairing(&xi, &args).unwrap();
                for x in 0..9 {
                    prop_assert_eq!(w[x], -v[x]);
                }
            }
            let lam: Vec<f64> = (0..9).map(|_| rng.random_range(-2.0..2.0)).collect();
            let args: Vec<&[f64]> = pis.iter().map(|p| p.as_slice()).collect();
            let s = pairing(&xi.module_scale(&lam), &args).unwrap();
            let base = pairing(&xi, &args).unwrap();
            for x in 0..9 {
                prop_assert!((s[x] - lam[x] * base[x]).abs() < 1e-12);
            }
        }

        #[test]
        fn wedge_norm_inequality(seed in any::<u64>(), big_n in 2usize..=4, k in 1usize..=2, l in 1usize..=2) {
            prop_assume!(k + l <= big_n);
            let g = fixtures::grid(3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let basis = random_basis(&g, big_n, seed);
            let w1 = random_kvector(basis.clone(), k, &mut rng);
            let w2 = random_kvector(basis, l, &mut rng);
            let r = wedge(&w1, &w2, &g.space).unwrap();
            prop_assert!(r.norm_ok);
            prop_assert_eq!(r.product.k, k + l);
        }

        #[test]
        fn representation_round_trip(seed in any::<u64>()) {
            let g = fixtures::grid(3);
            let dict = fixtures::dictionary(&g.space);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pd = pseudodual_basis(&[fixtures::grid_dx(&g), fixtures::grid_dy(&g)], &dict, 0.5, &g.space, None).unwrap();
            let xi = random_kvector(xy_basis(&g), 2, &mut rng);
            let t = Current::precurrent(xi, g.mu.weights.clone()).unwrap();
            let m = mass_estimate(&t, &g.space, &dict, MassConfig::default()).unwrap();
            let rep = represent_current(&t, &pd, &g.space, &dict, &m.lower).unwrap();
            prop_assert!(rep.reconstruction_error < 1e-9);
            prop_assert!(rep.max_lambda <= 1.0 + 1e-9);
            let again = Current::precurrent(rep.omega.clone(), rep.mass.clone()).unwrap();
            let rep2 = represent_current(&again, &pd, &g.space, &dict, &rep.mass).unwrap();
            for (a, b) in rep.omega.coeffs.iter().zip(&rep2.omega.coeffs) {
                for x in 0..9 {
                    prop_assert!((a[x] - b[x]).abs() < 1e-10);
                }
            }
        }
    }
}
