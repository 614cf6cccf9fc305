//! Derivations induced by weighted fragment carriers.
//!
//! A carrier entry `(γ, P, ν)` acts on `f` at `x` by `P Σ (f∘γ)'(e) ν(e) / μ(x)` over the
//! edges `e` of `γ` that start at `x`. The carrier is compiled into a sparse table
//! `C_xy = Σ P ν / (Δt μ(x))` so that `Df(x) = m(x) Σ_y C_xy (f(y) − f(x))`, where `m` is a
//! pointwise multiplier used for module scaling. Constants are annihilated exactly.

use crate::error::{Error, Result};
use crate::fragments::Fragment;
use crate::lp;
use crate::space::{FnDict, MetricSpace};

/// Densities below this fraction of the largest contribution at a point count as cancelled.
const CANCEL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CarrierEntry {
    pub fragment: Fragment,
    /// Fragment weight `P(γ) ≥ 0`.
    pub weight: f64,
    /// Signed density per consecutive domain pair.
    pub nu: Vec<f64>,
}

impl CarrierEntry {
    pub fn new(fragment: Fragment, weight: f64, nu: Vec<f64>) -> Result<Self> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::InvalidArgument("fragment weight must be a nonnegative real".into()));
        }
        fragment.check_nu(&nu)?;
        Ok(CarrierEntry { fragment, weight, nu })
    }

    /// Unit weight and Lebesgue density on every edge.
    pub fn lebesgue(fragment: Fragment) -> Self {
        let nu = fragment.default_nu();
        CarrierEntry { fragment, weight: 1.0, nu }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Derivation {
    mu: Vec<f64>,
    carrier: Vec<CarrierEntry>,
    mult: Vec<f64>,
    table: Vec<Vec<(usize, f64)>>,
}

fn build_table(mu: &[f64], carrier: &[CarrierEntry]) -> Result<Vec<Vec<(usize, f64)>>> {
    let n = mu.len();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut scale = vec![0.0f64; n];
    for entry in carrier {
        entry.fragment.check_in_len(n)?;
        for i in entry.fragment.edges() {
            let v = entry.weight * entry.nu[i];
            if v == 0.0 || entry.fragment.is_degenerate(i) {
                continue;
            }
            let x = entry.fragment.trace[i];
            let y = entry.fragment.trace[i + 1];
            let c = v / entry.fragment.dt(i);
            scale[x] = scale[x].max(c.abs());
            match rows[x].iter_mut().find(|(z, _)| *z == y) {
                Some(e) => e.1 += c,
                None => rows[x].push((y, c)),
            }
        }
    }
    for x in 0..n {
        let tol = CANCEL_TOL * scale[x];
        rows[x].retain(|&(_, c)| c.abs() > tol);
        if rows[x].is_empty() {
            continue;
        }
        if mu[x] == 0.0 {
            return Err(Error::CarrierMeasureMismatch { point: x });
        }
        for e in rows[x].iter_mut() {
            e.1 /= mu[x];
        }
        rows[x].sort_by_key(|e| e.0);
    }
    Ok(rows)
}

impl Fragment {
    pub(crate) fn check_in_len(&self, n: usize) -> Result<()> {
        match self.trace.iter().find(|&&p| p >= n) {
            Some(&p) => Err(Error::InvalidArgument(format!("trace point {p} outside the space"))),
            None => Ok(()),
        }
    }
}

impl Derivation {
    pub fn new(mu: Vec<f64>, carrier: Vec<CarrierEntry>) -> Result<Self> {
        for e in &carrier {
            e.fragment.check_nu(&e.nu)?;
        }
        let table = build_table(&mu, &carrier)?;
        let n = mu.len();
        Ok(Derivation { mu, carrier, mult: vec![1.0; n], table })
    }

    pub fn zero(mu: Vec<f64>) -> Self {
        let n = mu.len();
        Derivation { mu, carrier: Vec::new(), mult: vec![1.0; n], table: vec![Vec::new(); n] }
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn carrier(&self) -> &[CarrierEntry] {
        &self.carrier
    }

    pub fn mult(&self) -> &[f64] {
        &self.mult
    }

    /// Carrier with the multiplier folded into the densities at left endpoints.
    pub fn effective_carrier(&self) -> Vec<CarrierEntry> {
        self.carrier
            .iter()
            .map(|e| {
                let nu = e
                    .nu
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| if v == 0.0 { 0.0 } else { v * self.mult[e.fragment.trace[i]] })
                    .collect();
                CarrierEntry { fragment: e.fragment.clone(), weight: e.weight, nu }
            })
            .collect()
    }

    /// Row of the compiled table at `x`, multiplier included.
    pub fn row(&self, x: usize) -> Vec<(usize, f64)> {
        let m = self.mult[x];
        if m == 0.0 {
            return Vec::new();
        }
        self.table[x].iter().map(|&(y, c)| (y, m * c)).collect()
    }

    pub fn is_zero(&self) -> bool {
        (0..self.n()).all(|x| self.mult[x] == 0.0 || self.table[x].is_empty())
    }

    /// Points where the table row is nonzero.
    pub fn support(&self) -> Vec<usize> {
        (0..self.n()).filter(|&x| self.mult[x] != 0.0 && !self.table[x].is_empty()).collect()
    }

    /// `Df` at every point.
    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.n() {
            return Err(Error::LengthMismatch { expected: self.n(), got: f.len() });
        }
        Ok((0..self.n()).map(|x| self.apply_at(f, x)).collect())
    }

    #[inline]
    pub fn apply_at(&self, f: &[f64], x: usize) -> f64 {
        let m = self.mult[x];
        if m == 0.0 {
            return 0.0;
        }
        m * self.table[x].iter().map(|&(y, c)| c * (f[y] - f[x])).sum::<f64>()
    }

    /// `Σ_y C_xy f(y) (g(y) − g(x))`: the one-sided product term with `f` sampled at the
    /// right endpoint, so that `D(fg) = right_sampled(f, g) + g Df` exactly.
    pub fn apply_right_sampled(&self, f: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.n() || g.len() != self.n() {
            return Err(Error::LengthMismatch { expected: self.n(), got: f.len().min(g.len()) });
        }
        Ok((0..self.n())
            .map(|x| self.mult[x] * self.table[x].iter().map(|&(y, c)| c * f[y] * (g[y] - g[x])).sum::<f64>())
            .collect())
    }

    /// Pointwise bound on `|D(fg) − f Dg − g Df|` for `f`, `g` with the given Lipschitz
    /// constants: `lip f · lip g · Σ_e |P ν| md_e d_e / μ(x)` over edges starting at `x`.
    pub fn leibniz_bound(&self, space: &MetricSpace, lip_f: f64, lip_g: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for e in &self.carrier {
            for i in e.fragment.edges() {
                let x = e.fragment.trace[i];
                if self.mu[x] == 0.0 || e.nu[i] == 0.0 {
                    continue;
                }
                let d = space.dist(x, e.fragment.trace[i + 1]);
                let md = d / e.fragment.dt(i);
                out[x] += (e.weight * e.nu[i] * self.mult[x]).abs() * md * d / self.mu[x];
            }
        }
        out.iter_mut().for_each(|v| *v *= lip_f * lip_g);
        out
    }

    /// Largest edge speed and largest edge time gap over the carrier.
    pub fn carrier_speed_and_step(&self, space: &MetricSpace) -> (f64, f64) {
        let mut speed: f64 = 0.0;
        let mut step: f64 = 0.0;
        for e in &self.carrier {
            speed = speed.max(e.fragment.max_edge_speed(space));
            step = step.max(e.fragment.h_max());
        }
        (speed, step)
    }

    /// Local norm against an arbitrary (pseudo)metric.
    pub fn local_norm_with(&self, dist: impl Fn(usize, usize) -> f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n()];
        for x in 0..self.n() {
            if self.mult[x] == 0.0 || self.table[x].is_empty() {
                continue;
            }
            let (v, _) = lp::max_lipschitz_pairing(x, &self.table[x], &dist)?;
            out[x] = self.mult[x].abs() * v;
        }
        Ok(out)
    }

    /// `|D|_loc(x)`: the largest `Dg(x)` over 1-Lipschitz `g`, one LP per point.
    pub fn local_norm(&self, space: &MetricSpace) -> Result<Vec<f64>> {
        self.check_space(space)?;
        self.local_norm_with(|p, q| space.dist(p, q))
    }

    /// `‖D‖ = max_x |D|_loc(x)`.
    pub fn norm(&self, space: &MetricSpace) -> Result<f64> {
        Ok(self.local_norm(space)?.into_iter().fold(0.0, f64::max))
    }

    fn check_space(&self, space: &MetricSpace) -> Result<()> {
        if space.len() != self.n() {
            return Err(Error::LengthMismatch { expected: self.n(), got: space.len() });
        }
        Ok(())
    }

    /// `λD`: the multiplier is scaled pointwise, leaving the carrier untouched.
    pub fn module_scale(&self, lambda: &[f64]) -> Result<Derivation> {
        if lambda.len() != self.n() {
            return Err(Error::LengthMismatch { expected: self.n(), got: lambda.len() });
        }
        if lambda.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidArgument("unbounded module coefficient".into()));
        }
        let mut out = self.clone();
        for (m, l) in out.mult.iter_mut().zip(lambda) {
            *m *= l;
        }
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> Derivation {
        self.module_scale(&vec![c; self.n()]).expect("finite scalar")
    }

    /// `D / |D|_loc` where the local norm is positive, 0 elsewhere.
    pub fn normalize(&self, space: &MetricSpace) -> Result<Derivation> {
        let ln = self.local_norm(space)?;
        let lambda: Vec<f64> = ln.iter().map(|&v| if v > 1e-14 { 1.0 / v } else { 0.0 }).collect();
        self.module_scale(&lambda)
    }

    /// `Σ_k c_k D_k` with pointwise coefficients; all terms must share the measure.
    pub fn combine(terms: &[(&[f64], &Derivation)]) -> Result<Derivation> {
        let first = terms.first().ok_or(Error::EmptySet("linear combination"))?.1;
        let mu = first.mu.clone();
        let mut carrier = Vec::new();
        for (coeff, d) in terms {
            if d.mu != mu {
                return Err(Error::InvalidArgument("derivations live on different measures".into()));
            }
            if coeff.len() != mu.len() {
                return Err(Error::LengthMismatch { expected: mu.len(), got: coeff.len() });
            }
            for e in &d.carrier {
                let nu: Vec<f64> = e
                    .nu
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let x = e.fragment.trace[i];
                        if v == 0.0 { 0.0 } else { v * coeff[x] * d.mult[x] }
                    })
                    .collect();
                if nu.iter().any(|&v| v != 0.0) {
                    carrier.push(CarrierEntry { fragment: e.fragment.clone(), weight: e.weight, nu });
                }
            }
        }
        Derivation::new(mu, carrier)
    }

    pub fn add(&self, other: &Derivation) -> Result<Derivation> {
        let one = vec![1.0; self.n()];
        Derivation::combine(&[(&one, self), (&one, other)])
    }

    pub fn sub(&self, other: &Derivation) -> Result<Derivation> {
        let one = vec![1.0; self.n()];
        let minus = vec![-1.0; self.n()];
        Derivation::combine(&[(&one, self), (&minus, other)])
    }

    /// Largest absolute table difference; two derivations with distance 0 act identically.
    pub fn table_distance(&self, other: &Derivation) -> f64 {
        let mut worst: f64 = 0.0;
        for x in 0..self.n().max(other.n()) {
            let a = if x < self.n() { self.row(x) } else { Vec::new() };
            let b = if x < other.n() { other.row(x) } else { Vec::new() };
            let mut merged: Vec<(usize, f64)> = a;
            for (y, c) in b {
                match merged.iter_mut().find(|e| e.0 == y) {
                    Some(e) => e.1 -= c,
                    None => merged.push((y, -c)),
                }
            }
            for (_, c) in merged {
                worst = worst.max(c.abs());
            }
        }
        worst
    }

    /// Pushforward along a point map `F: X → Y`. Traces are composed with `F`, weights and
    /// densities kept, and the measure pushed forward. Edges collapsed by `F` are dropped.
    pub fn pushforward(
        &self,
        map: &[usize],
        source: &MetricSpace,
        target: &MetricSpace,
        max_lip: Option<f64>,
    ) -> Result<(Derivation, Vec<f64>)> {
        self.check_space(source)?;
        if map.len() != source.len() {
            return Err(Error::LengthMismatch { expected: source.len(), got: map.len() });
        }
        if let Some(&p) = map.iter().find(|&&p| p >= target.len()) {
            return Err(Error::InvalidArgument(format!("image point {p} outside the target")));
        }
        if let Some(bound) = max_lip {
            for p in 0..source.len() {
                for q in (p + 1)..source.len() {
                    let quotient = target.dist(map[p], map[q]) / source.dist(p, q);
                    if quotient > bound * (1.0 + 1e-12) {
                        return Err(Error::NotLipschitz { p, q, quotient, bound });
                    }
                }
            }
        }
        let mut mu_y = vec![0.0; target.len()];
        for (x, &m) in self.mu.iter().enumerate() {
            mu_y[map[x]] += m;
        }
        let carrier = self
            .effective_carrier()
            .into_iter()
            .map(|e| {
                let trace: Vec<usize> = e.fragment.trace.iter().map(|&p| map[p]).collect();
                let fragment = Fragment { domain: e.fragment.domain.clone(), trace, max_gap: e.fragment.max_gap };
                let nu = e
                    .nu
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| if fragment.is_degenerate(i) { 0.0 } else { v })
                    .collect();
                CarrierEntry { fragment, weight: e.weight, nu }
            })
            .collect();
        Ok((Derivation::new(mu_y.clone(), carrier)?, mu_y))
    }
}

/// `Σ_l ∂g/∂y^l(ψ(x)) Dψ_l(x)`.
pub fn chain_rule(
    d: &Derivation,
    grad: impl Fn(&[f64]) -> Vec<f64>,
    psis: &[&[f64]],
) -> Result<Vec<f64>> {
    let dpsi: Vec<Vec<f64>> = psis.iter().map(|p| d.apply(p)).collect::<Result<_>>()?;
    let mut out = vec![0.0; d.n()];
    let mut y = vec![0.0; psis.len()];
    for x in 0..d.n() {
        for (l, p) in psis.iter().enumerate() {
            y[l] = p[x];
        }
        let g = grad(&y);
        if g.len() != psis.len() {
            return Err(Error::ArityMismatch { expected: psis.len(), got: g.len() });
        }
        out[x] = g.iter().zip(&dpsi).map(|(gl, dl)| gl * dl[x]).sum();
    }
    Ok(out)
}

/// A signed dictionary entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignedEntry {
    pub index: usize,
    pub negated: bool,
}

impl SignedEntry {
    pub fn values(&self, dict: &FnDict) -> Vec<f64> {
        let v = &dict.fns[self.index].values;
        if self.negated { v.iter().map(|x| -x).collect() } else { v.clone() }
    }

    pub fn name(&self, dict: &FnDict) -> String {
        let n = &dict.names[self.index];
        if self.negated { format!("-{n}") } else { n.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct PseudodualPiece {
    pub set: Vec<usize>,
    pub g: Vec<SignedEntry>,
    pub g_values: Vec<Vec<f64>>,
    /// `D_{α,i}` supported on `set`.
    pub derivations: Vec<Derivation>,
    /// Per point of `set`, the upper triangular matrix `M_ij = D̃_i g_j`.
    pub triangular: Vec<Vec<Vec<f64>>>,
    pub min_diagonal: f64,
    pub min_det: f64,
    pub max_det: f64,
}

#[derive(Debug, Clone)]
pub struct Pseudodual {
    pub pieces: Vec<PseudodualPiece>,
    pub eps: f64,
    /// `k! (1 − ε)^{−k}`.
    pub norm_bound: f64,
    /// Largest `|D_{α,i} g_{α,j} − δ_ij|` on the pieces.
    pub duality_defect: f64,
    /// Largest table residual of `χ_V D_i − Σ_j (D_i g_j) D_{α,j}`.
    pub span_residual: f64,
    /// Largest `|D_i g_j|` used as a span coefficient.
    pub max_span_coefficient: f64,
    /// Largest global norm among the output derivations.
    pub max_norm: f64,
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Finds a partition `{V_α}`, signed dictionary entries `g_{α,j}` and derivations
/// `D_{α,i}` in the span of the inputs with `D_{α,i} g_{α,j} = δ_ij` on `V_α`.
///
/// The construction is a pointwise Gram–Schmidt sweep: at level `l` the running derivation
/// is made to annihilate `g_1, …, g_{l−1}`, normalized, and `g_l` is chosen greedily to
/// maximize the measure of `{D̃_l g_l ≥ 1 − ε}`.
pub fn pseudodual_basis(
    ds: &[Derivation],
    dict: &FnDict,
    eps: f64,
    space: &MetricSpace,
    support: Option<&[usize]>,
) -> Result<Pseudodual> {
    let k = ds.len();
    if k == 0 {
        return Err(Error::EmptySet("derivation list"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument("ε must lie in (0, 1)".into()));
    }
    let n = space.len();
    let mu = ds[0].mu.clone();
    for d in ds {
        d.check_space(space)?;
        if d.mu != mu {
            return Err(Error::InvalidArgument("derivations live on different measures".into()));
        }
    }
    let norms: Vec<Vec<f64>> = ds.iter().map(|d| d.local_norm(space)).collect::<Result<_>>()?;
    let mut pool: Vec<usize> = match support {
        Some(s) => s.iter().copied().filter(|&x| mu[x] > 0.0).collect(),
        None => (0..n).filter(|&x| mu[x] > 0.0 && norms.iter().all(|ln| ln[x] > 0.0)).collect(),
    };
    let candidates: Vec<SignedEntry> = (1..dict.len())
        .flat_map(|i| [SignedEntry { index: i, negated: false }, SignedEntry { index: i, negated: true }])
        .collect();
    let cand_values: Vec<Vec<f64>> = candidates.iter().map(|c| c.values(dict)).collect();
    let one = vec![1.0; n];

    let mut pieces = Vec::new();
    while !pool.is_empty() {
        let mut region = pool.clone();
        let mut tilde: Vec<Derivation> = Vec::with_capacity(k);
        let mut chosen: Vec<usize> = Vec::with_capacity(k);
        for l in 0..k {
            // Running derivation annihilating the previously chosen functions.
            let mut running = ds[l].clone();
            for j in 0..l {
                let num = running.apply(&cand_values[chosen[j]])?;
                let den = tilde[j].apply(&cand_values[chosen[j]])?;
                let coeff: Vec<f64> = (0..n)
                    .map(|x| if region.contains(&x) && den[x] != 0.0 { -num[x] / den[x] } else { 0.0 })
                    .collect();
                running = Derivation::combine(&[(&one, &running), (&coeff, &tilde[j])])?;
            }
            let ln = running.local_norm(space)?;
            let scale: Vec<f64> = (0..n)
                .map(|x| {
                    if region.contains(&x) && ln[x] > 1e-9 * norms[l][x].max(f64::MIN_POSITIVE) {
                        1.0 / ln[x]
                    } else {
                        0.0
                    }
                })
                .collect();
            let normalized = running.module_scale(&scale)?;
            let mut best: Option<(usize, f64, Vec<usize>)> = None;
            for (ci, values) in cand_values.iter().enumerate() {
                let dg = normalized.apply(values)?;
                let w: Vec<usize> = region.iter().copied().filter(|&x| dg[x] >= 1.0 - eps).collect();
                let mass: f64 = w.iter().map(|&x| mu[x]).sum();
                if mass > 0.0 && best.as_ref().is_none_or(|b| mass > b.1) {
                    best = Some((ci, mass, w));
                }
            }
            let Some((ci, _, w)) = best else {
                return Err(Error::DependentDerivations { points: region });
            };
            region = w;
            chosen.push(ci);
            tilde.push(normalized);
        }

        // Upper triangular M_ij = D̃_i g_j on the piece; invert pointwise.
        let dg: Vec<Vec<Vec<f64>>> = tilde
            .iter()
            .map(|t| chosen.iter().map(|&c| t.apply(&cand_values[c])).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        let mut inv_coeff = vec![vec![vec![0.0; n]; k]; k];
        let mut triangular = Vec::with_capacity(region.len());
        let (mut min_diag, mut min_det, mut max_det) = (f64::INFINITY, f64::INFINITY, 0.0f64);
        for &x in &region {
            let m: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| dg[i][j][x]).collect()).collect();
            let det: f64 = (0..k).map(|i| m[i][i]).product();
            min_det = min_det.min(det);
            max_det = max_det.max(det);
            min_diag = (0..k).map(|i| m[i][i]).fold(min_diag, f64::min);
            let inv = invert_upper(&m);
            for i in 0..k {
                for j in 0..k {
                    inv_coeff[i][j][x] = inv[i][j];
                }
            }
            triangular.push(m);
        }
        // D_{α,i} g_l = Σ_j (M⁻¹)_{ij} M_{jl}; with M_{jl} = D̃_j g_l that is M⁻¹ M = I.
        // The rows of M are indexed by derivations and columns by functions, so
        // D_{α,i} = Σ_j (M⁻¹)_{ij} D̃_j pairs as (M⁻¹ M)_{il}.
        let derivations: Vec<Derivation> = (0..k)
            .map(|i| {
                let terms: Vec<(&[f64], &Derivation)> =
                    (0..k).map(|j| (inv_coeff[i][j].as_slice(), &tilde[j])).collect();
                Derivation::combine(&terms)
            })
            .collect::<Result<_>>()?;
        pool.retain(|x| !region.contains(x));
        pieces.push(PseudodualPiece {
            set: region,
            g: chosen.iter().map(|&c| candidates[c]).collect(),
            g_values: chosen.iter().map(|&c| cand_values[c].clone()).collect(),
            derivations,
            triangular,
            min_diagonal: min_diag,
            min_det,
            max_det,
        });
    }

    let mut duality_defect: f64 = 0.0;
    let mut span_residual: f64 = 0.0;
    let mut max_coeff: f64 = 0.0;
    let mut max_norm: f64 = 0.0;
    for piece in &pieces {
        let chi: Vec<f64> = (0..n).map(|x| if piece.set.contains(&x) { 1.0 } else { 0.0 }).collect();
        for (i, d) in piece.derivations.iter().enumerate() {
            max_norm = max_norm.max(d.norm(space)?);
            for (j, g) in piece.g_values.iter().enumerate() {
                let v = d.apply(g)?;
                let target = if i == j { 1.0 } else { 0.0 };
                for &x in &piece.set {
                    duality_defect = duality_defect.max((v[x] - target).abs());
                }
            }
        }
        for d in ds {
            let coeffs: Vec<Vec<f64>> = piece
                .g_values
                .iter()
                .map(|g| d.apply(g).map(|v| v.iter().zip(&chi).map(|(a, c)| -a * c).collect()))
                .collect::<Result<_>>()?;
            for c in &coeffs {
                max_coeff = max_coeff.max(c.iter().fold(0.0, |m, v| m.max(v.abs())));
            }
            let mut terms: Vec<(&[f64], &Derivation)> = vec![(&chi, d)];
            for (j, c) in coeffs.iter().enumerate() {
                terms.push((c, &piece.derivations[j]));
            }
            let residual = Derivation::combine(&terms)?;
            span_residual = span_residual.max(residual.table_distance(&Derivation::zero(mu.clone())));
        }
    }
    Ok(Pseudodual {
        pieces,
        eps,
        norm_bound: factorial(k) * (1.0 - eps).powi(-(k as i32)),
        duality_defect,
        span_residual,
        max_span_coefficient: max_coeff,
        max_norm,
    })
}

/// Inverse of an upper triangular matrix with nonzero diagonal.
fn invert_upper(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = m.len();
    let mut inv = vec![vec![0.0; k]; k];
    for i in (0..k).rev() {
        inv[i][i] = 1.0 / m[i][i];
        for j in (i + 1)..k {
            let s: f64 = ((i + 1)..=j).map(|l| m[i][l] * inv[l][j]).sum();
            inv[i][j] = -s / m[i][i];
        }
    }
    inv
}
