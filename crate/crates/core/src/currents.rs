//! Metric functionals on finite spaces: evaluation, boundary, restriction, mass estimates,
//! the correspondence between 1-currents and derivations, normality and flow decomposition.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::derivations::{factorial, CarrierEntry, Derivation};
use crate::error::{Error, Result};
use crate::exterior::{canonical_det, increasing_tuples, tuple_det, KVector};
use crate::fragments::Fragment;
use crate::lp;
use crate::space::{macshane_extend, FnDict, MetricSpace};

/// Relative size of a row sum below which a 1-current counts as local at a point.
const LOCALITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct FragmentTerm {
    pub fragment: Fragment,
    pub nu: Vec<f64>,
    pub weight: f64,
}

impl FragmentTerm {
    /// `w [γ]` with the default (Lebesgue) fragment measure.
    pub fn unit(fragment: Fragment, weight: f64) -> Self {
        let nu = fragment.default_nu();
        FragmentTerm { fragment, nu, weight }
    }
}

#[derive(Debug, Clone)]
pub enum Current {
    Zero { k: usize, n: usize },
    /// `Σ w [γ]_ν`, a 1-current.
    FragmentSum { n: usize, terms: Vec<FragmentTerm> },
    /// `∫ f ⟨ξ, dπ_1 ∧ … ∧ dπ_k⟩ dμ`.
    Precurrent { xi: KVector, mu: Vec<f64> },
    /// General bilinear 1-functional `Σ_x f(x) Σ_y a_xy π(y)`; locality is not enforced.
    Bilinear { table: Vec<Vec<(usize, f64)>> },
    /// The 0-functional `f ↦ Σ w f`.
    PointMeasure { weights: Vec<f64> },
    Boundary(Box<Current>),
    /// `T ↾ (ψ dσ_1 ∧ … ∧ dσ_l)`.
    Restriction { inner: Box<Current>, psi: Vec<f64>, sigmas: Vec<Vec<f64>> },
    Sum(Vec<(f64, Current)>),
}

impl Current {
    pub fn zero(k: usize, n: usize) -> Self {
        Current::Zero { k, n }
    }

    /// `[γ]` with the default fragment measure.
    pub fn curve(fragment: Fragment, n: usize) -> Result<Self> {
        Self::fragments(n, vec![FragmentTerm::unit(fragment, 1.0)])
    }

    pub fn fragments(n: usize, terms: Vec<FragmentTerm>) -> Result<Self> {
        for t in &terms {
            t.fragment.check_in_len(n)?;
            t.fragment.check_nu(&t.nu)?;
            if !t.weight.is_finite() {
                return Err(Error::InvalidArgument("non-finite fragment weight".into()));
            }
        }
        Ok(Current::FragmentSum { n, terms })
    }

    pub fn precurrent(xi: KVector, mu: Vec<f64>) -> Result<Self> {
        if mu.len() != xi.n_points() {
            return Err(Error::LengthMismatch { expected: xi.n_points(), got: mu.len() });
        }
        Ok(Current::Precurrent { xi, mu })
    }

    pub fn k(&self) -> usize {
        match self {
            Current::Zero { k, .. } => *k,
            Current::FragmentSum { .. } | Current::Bilinear { .. } => 1,
            Current::Precurrent { xi, .. } => xi.k,
            Current::PointMeasure { .. } => 0,
            Current::Boundary(inner) => inner.k().saturating_sub(1),
            Current::Restriction { inner, sigmas, .. } => inner.k() - sigmas.len(),
            Current::Sum(terms) => terms.first().map_or(0, |t| t.1.k()),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Current::Zero { n, .. } | Current::FragmentSum { n, .. } => *n,
            Current::Precurrent { mu, .. } => mu.len(),
            Current::Bilinear { table } => table.len(),
            Current::PointMeasure { weights } => weights.len(),
            Current::Boundary(inner) => inner.n(),
            Current::Restriction { inner, .. } => inner.n(),
            Current::Sum(terms) => terms.first().map_or(0, |t| t.1.n()),
        }
    }

    pub fn scale(&self, c: f64) -> Current {
        match self {
            Current::Zero { .. } => self.clone(),
            Current::FragmentSum { n, terms } => Current::FragmentSum {
                n: *n,
                terms: terms.iter().map(|t| FragmentTerm { weight: c * t.weight, ..t.clone() }).collect(),
            },
            Current::Precurrent { xi, mu } => Current::Precurrent { xi: xi.scale(c), mu: mu.clone() },
            Current::PointMeasure { weights } => Current::PointMeasure { weights: weights.iter().map(|w| c * w).collect() },
            _ => Current::Sum(vec![(c, self.clone())]),
        }
    }

    pub fn sub(&self, other: &Current) -> Result<Current> {
        if self.k() != other.k() {
            return Err(Error::ArityMismatch { expected: self.k(), got: other.k() });
        }
        Ok(Current::Sum(vec![(1.0, self.clone()), (-1.0, other.clone())]))
    }

    fn check_args(&self, f: &[f64], pis: &[&[f64]]) -> Result<()> {
        if pis.len() != self.k() {
            return Err(Error::ArityMismatch { expected: self.k(), got: pis.len() });
        }
        let n = self.n();
        for v in std::iter::once(&f).chain(pis.iter()) {
            if v.len() != n {
                return Err(Error::LengthMismatch { expected: n, got: v.len() });
            }
        }
        Ok(())
    }

    /// `T(f, π_1, …, π_k)`.
    pub fn evaluate(&self, f: &[f64], pis: &[&[f64]]) -> Result<f64> {
        self.check_args(f, pis)?;
        self.eval_unchecked(f, pis)
    }

    fn eval_unchecked(&self, f: &[f64], pis: &[&[f64]]) -> Result<f64> {
        Ok(match self {
            Current::Zero { .. } => 0.0,
            Current::FragmentSum { terms, .. } => {
                terms.iter().map(|t| t.weight * t.fragment.pair(&t.nu, f, pis[0])).sum()
            }
            Current::Precurrent { xi, mu } => {
                let actions = xi.actions(pis)?;
                let mut total = 0.0;
                for x in 0..mu.len() {
                    if f[x] == 0.0 || mu[x] == 0.0 {
                        continue;
                    }
                    let s: f64 = xi
                        .tuples
                        .iter()
                        .zip(&xi.coeffs)
                        .filter(|(_, c)| c[x] != 0.0)
                        .map(|(t, c)| c[x] * tuple_det(&actions, t, x))
                        .sum();
                    total += f[x] * mu[x] * s;
                }
                total
            }
            Current::Bilinear { table } => table
                .iter()
                .enumerate()
                .map(|(x, row)| f[x] * row.iter().map(|&(y, a)| a * pis[0][y]).sum::<f64>())
                .sum(),
            Current::PointMeasure { weights } => weights.iter().zip(f).map(|(w, v)| w * v).sum(),
            Current::Boundary(inner) => {
                let one = vec![1.0; f.len()];
                let mut args: Vec<&[f64]> = vec![f];
                args.extend_from_slice(pis);
                inner.eval_unchecked(&one, &args)?
            }
            Current::Restriction { inner, psi, sigmas } => {
                let fpsi: Vec<f64> = f.iter().zip(psi).map(|(a, b)| a * b).collect();
                let mut args: Vec<&[f64]> = sigmas.iter().map(|s| s.as_slice()).collect();
                args.extend_from_slice(pis);
                inner.eval_unchecked(&fpsi, &args)?
            }
            Current::Sum(terms) => {
                let mut total = 0.0;
                for (c, t) in terms {
                    total += c * t.eval_unchecked(f, pis)?;
                }
                total
            }
        })
    }

    /// `T(χ_z, π)` for every point `z`.
    pub fn density(&self, pis: &[&[f64]]) -> Result<Vec<f64>> {
        let n = self.n();
        let one = vec![1.0; n];
        self.check_args(&one, pis)?;
        self.density_unchecked(pis)
    }

    fn density_unchecked(&self, pis: &[&[f64]]) -> Result<Vec<f64>> {
        let n = self.n();
        Ok(match self {
            Current::Zero { .. } => vec![0.0; n],
            Current::FragmentSum { terms, .. } => {
                let mut out = vec![0.0; n];
                for t in terms {
                    for i in t.fragment.edges() {
                        if t.nu[i] != 0.0 {
                            out[t.fragment.trace[i]] += t.weight * t.fragment.edge_derivative(pis[0], i) * t.nu[i];
                        }
                    }
                }
                out
            }
            Current::Precurrent { xi, mu } => {
                let actions = xi.actions(pis)?;
                (0..n)
                    .map(|x| {
                        if mu[x] == 0.0 {
                            return 0.0;
                        }
                        mu[x] * xi
                            .tuples
                            .iter()
                            .zip(&xi.coeffs)
                            .filter(|(_, c)| c[x] != 0.0)
                            .map(|(t, c)| c[x] * tuple_det(&actions, t, x))
                            .sum::<f64>()
                    })
                    .collect()
            }
            Current::Bilinear { table } => {
                table.iter().map(|row| row.iter().map(|&(y, a)| a * pis[0][y]).sum()).collect()
            }
            Current::PointMeasure { weights } => weights.clone(),
            Current::Restriction { inner, psi, sigmas } => {
                let mut args: Vec<&[f64]> = sigmas.iter().map(|s| s.as_slice()).collect();
                args.extend_from_slice(pis);
                let d = inner.density_unchecked(&args)?;
                d.iter().zip(psi).map(|(a, b)| a * b).collect()
            }
            Current::Sum(terms) => {
                let mut out = vec![0.0; n];
                for (c, t) in terms {
                    for (o, v) in out.iter_mut().zip(t.density_unchecked(pis)?) {
                        *o += c * v;
                    }
                }
                out
            }
            Current::Boundary(_) => {
                let mut out = vec![0.0; n];
                let mut chi = vec![0.0; n];
                for z in 0..n {
                    chi[z] = 1.0;
                    out[z] = self.eval_unchecked(&chi, pis)?;
                    chi[z] = 0.0;
                }
                out
            }
        })
    }

    /// Coefficients `a` with `T(f, prefix…, π) = Σ_z a_z π(z)` for every `π`.
    pub fn linear_in_last(&self, f: &[f64], prefix: &[&[f64]]) -> Result<Vec<f64>> {
        let k = self.k();
        if k == 0 || prefix.len() + 1 != k {
            return Err(Error::ArityMismatch { expected: k, got: prefix.len() + 1 });
        }
        let n = self.n();
        let mut a = vec![0.0; n];
        self.linear_into(f, prefix, 1.0, &mut a)?;
        Ok(a)
    }

    fn linear_into(&self, f: &[f64], prefix: &[&[f64]], scale: f64, a: &mut [f64]) -> Result<()> {
        match self {
            Current::Zero { .. } => {}
            Current::FragmentSum { terms, .. } => {
                for t in terms {
                    for i in t.fragment.edges() {
                        let (x, y) = (t.fragment.trace[i], t.fragment.trace[i + 1]);
                        let c = scale * t.weight * t.nu[i] * f[x] / t.fragment.dt(i);
                        if c != 0.0 {
                            a[y] += c;
                            a[x] -= c;
                        }
                    }
                }
            }
            Current::Precurrent { xi, mu } => {
                let k = xi.k;
                let actions = xi.actions(prefix)?;
                for x in 0..mu.len() {
                    if f[x] == 0.0 || mu[x] == 0.0 {
                        continue;
                    }
                    for (t, c) in xi.tuples.iter().zip(&xi.coeffs) {
                        if c[x] == 0.0 {
                            continue;
                        }
                        let w = scale * f[x] * mu[x] * c[x];
                        for i in 0..k {
                            // Minor without row i, columns = prefix functions.
                            let rows: Vec<usize> = t.iter().enumerate().filter(|(r, _)| *r != i).map(|(_, &b)| b).collect();
                            let minor = tuple_det(&actions, &rows, x);
                            let sign = if (i + k - 1) % 2 == 0 { 1.0 } else { -1.0 };
                            let cof = w * sign * minor;
                            if cof == 0.0 {
                                continue;
                            }
                            for (y, cy) in xi.basis[t[i]].row(x) {
                                a[y] += cof * cy;
                                a[x] -= cof * cy;
                            }
                        }
                    }
                }
            }
            Current::Bilinear { table } => {
                for (x, row) in table.iter().enumerate() {
                    if f[x] != 0.0 {
                        for &(y, c) in row {
                            a[y] += scale * f[x] * c;
                        }
                    }
                }
            }
            Current::PointMeasure { .. } => return Err(Error::ArityMismatch { expected: 0, got: 1 }),
            Current::Boundary(inner) => {
                let one = vec![1.0; f.len()];
                let mut args: Vec<&[f64]> = vec![f];
                args.extend_from_slice(prefix);
                inner.linear_into(&one, &args, scale, a)?;
            }
            Current::Restriction { inner, psi, sigmas } => {
                let fpsi: Vec<f64> = f.iter().zip(psi).map(|(u, v)| u * v).collect();
                let mut args: Vec<&[f64]> = sigmas.iter().map(|s| s.as_slice()).collect();
                args.extend_from_slice(prefix);
                inner.linear_into(&fpsi, &args, scale, a)?;
            }
            Current::Sum(terms) => {
                for (c, t) in terms {
                    t.linear_into(f, prefix, scale * c, a)?;
                }
            }
        }
        Ok(())
    }

    /// `∂T(f, π_1, …, π_{k−1}) = T(1, f, π_1, …, π_{k−1})`; the boundary of a 0-current is 0.
    pub fn boundary(&self) -> Current {
        let n = self.n();
        match self {
            Current::Zero { k, .. } => Current::Zero { k: k.saturating_sub(1), n },
            _ if self.k() == 0 => Current::Zero { k: 0, n },
            _ if self.k() == 1 => {
                let one = vec![1.0; n];
                match self.linear_in_last(&one, &[]) {
                    Ok(weights) => Current::PointMeasure { weights },
                    Err(_) => Current::Boundary(Box::new(self.clone())),
                }
            }
            _ => Current::Boundary(Box::new(self.clone())),
        }
    }

    /// `T ↾ (ψ dσ_1 ∧ … ∧ dσ_l)`, a `(k − l)`-current.
    pub fn restrict(&self, psi: &[f64], sigmas: &[&[f64]]) -> Result<Current> {
        let k = self.k();
        let l = sigmas.len();
        let n = self.n();
        if l > k {
            return Err(Error::ArityMismatch { expected: k, got: l });
        }
        if psi.len() != n || sigmas.iter().any(|s| s.len() != n) {
            return Err(Error::LengthMismatch { expected: n, got: psi.len() });
        }
        Ok(match self {
            Current::Zero { .. } => Current::Zero { k: k - l, n },
            Current::FragmentSum { terms, .. } if l == 0 => Current::FragmentSum {
                n,
                terms: terms
                    .iter()
                    .map(|t| FragmentTerm {
                        fragment: t.fragment.clone(),
                        nu: t.nu.iter().enumerate().map(|(i, &v)| v * psi[t.fragment.trace[i]]).collect(),
                        weight: t.weight,
                    })
                    .collect(),
            },
            Current::FragmentSum { .. } => Current::PointMeasure {
                weights: self.density(sigmas)?.iter().zip(psi).map(|(d, p)| d * p).collect(),
            },
            Current::Precurrent { xi, mu } => Current::Precurrent { xi: restrict_kvector(xi, psi, sigmas)?, mu: mu.clone() },
            _ => Current::Restriction {
                inner: Box::new(self.clone()),
                psi: psi.to_vec(),
                sigmas: sigmas.iter().map(|s| s.to_vec()).collect(),
            },
        })
    }

    /// Points whose values of the last function can influence the density at `x`
    /// (always including `x`).
    pub fn stencil(&self) -> Vec<Vec<usize>> {
        let n = self.n();
        let mut out: Vec<Vec<usize>> = (0..n).map(|x| vec![x]).collect();
        let add = |out: &mut Vec<Vec<usize>>, x: usize, y: usize| {
            if !out[x].contains(&y) {
                out[x].push(y);
            }
        };
        match self {
            Current::Zero { .. } | Current::PointMeasure { .. } => {}
            Current::FragmentSum { terms, .. } => {
                for t in terms {
                    for i in t.fragment.edges() {
                        add(&mut out, t.fragment.trace[i], t.fragment.trace[i + 1]);
                    }
                }
            }
            Current::Precurrent { xi, .. } => {
                for d in xi.basis.iter() {
                    for x in 0..n {
                        for (y, _) in d.row(x) {
                            add(&mut out, x, y);
                        }
                    }
                }
            }
            Current::Bilinear { table } => {
                for (x, row) in table.iter().enumerate() {
                    for &(y, _) in row {
                        add(&mut out, x, y);
                    }
                }
            }
            Current::Restriction { inner, .. } => out = inner.stencil(),
            Current::Sum(terms) => {
                for (_, t) in terms {
                    for (x, s) in t.stencil().into_iter().enumerate() {
                        for y in s {
                            add(&mut out, x, y);
                        }
                    }
                }
            }
            Current::Boundary(inner) => {
                let s = inner.stencil();
                for (xp, sx) in s.iter().enumerate() {
                    for &x in sx {
                        for &y in sx {
                            add(&mut out, x, y);
                        }
                        add(&mut out, x, xp);
                    }
                }
            }
        }
        out
    }

    /// `A ∪` the stencils of the points of `A`.
    pub fn reach(&self, set: &[usize]) -> Vec<usize> {
        let s = self.stencil();
        let mut out: Vec<usize> = set.to_vec();
        for &x in set {
            for &y in &s[x] {
                if !out.contains(&y) {
                    out.push(y);
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Laplace expansion of `ξ ↾ (ψ dσ_1 ∧ … ∧ dσ_l)` into a `(k − l)`-vector.
fn restrict_kvector(xi: &KVector, psi: &[f64], sigmas: &[&[f64]]) -> Result<KVector> {
    let k = xi.k;
    let l = sigmas.len();
    let n = xi.n_points();
    let actions = xi.actions(sigmas)?;
    let mut tuples = Vec::new();
    let mut coeffs = Vec::new();
    for (t, c) in xi.tuples.iter().zip(&xi.coeffs) {
        for rows in increasing_tuples(k, l) {
            let rest: Vec<usize> = (0..k).filter(|r| !rows.contains(r)).map(|r| t[r]).collect();
            let chosen: Vec<usize> = rows.iter().map(|&r| t[r]).collect();
            let parity: usize = rows.iter().map(|r| r + 1).sum::<usize>() + l * (l + 1) / 2;
            let sign = if parity % 2 == 0 { 1.0 } else { -1.0 };
            let col: Vec<f64> = (0..n)
                .map(|x| {
                    if c[x] == 0.0 || psi[x] == 0.0 {
                        0.0
                    } else {
                        sign * c[x] * psi[x] * tuple_det(&actions, &chosen, x)
                    }
                })
                .collect();
            tuples.push(rest);
            coeffs.push(col);
        }
    }
    Ok(KVector { basis: xi.basis.clone(), k: k - l, tuples, coeffs }.canonical())
}

/// `‖T‖` as a certified interval, with witnesses.
#[derive(Debug, Clone)]
pub struct MassEstimate {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub witnesses: Vec<Witness>,
    pub lower_total: f64,
    pub upper_total: f64,
    /// `upper_total − lower_total`.
    pub gap: f64,
    /// Upper mass outside the sets of efficient witnesses.
    pub uncovered_upper: f64,
    pub eta: f64,
}

#[derive(Debug, Clone)]
pub struct Witness {
    pub set: Vec<usize>,
    pub names: Vec<String>,
    pub tuple: Vec<Vec<f64>>,
    /// `|T(χ_B, π)|`.
    pub value: f64,
    pub lower_mass: f64,
    pub upper_mass: f64,
    /// `value > η · lower(B)`.
    pub efficient: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct MassConfig {
    pub eta: f64,
    /// Rounds of coordinate LP ascent for `k ≥ 2` lower bounds.
    pub ascent_rounds: usize,
}

impl Default for MassConfig {
    fn default() -> Self {
        MassConfig { eta: 0.9, ascent_rounds: 2 }
    }
}

/// Structural pointwise upper bound of `‖T‖`; infinite where none is known.
pub fn structural_upper(t: &Current, space: &MetricSpace) -> Result<Vec<f64>> {
    let n = t.n();
    Ok(match t {
        Current::Zero { .. } => vec![0.0; n],
        Current::FragmentSum { terms, .. } => {
            let mut out = vec![0.0; n];
            for term in terms {
                for i in term.fragment.edges() {
                    out[term.fragment.trace[i]] +=
                        (term.weight * term.nu[i]).abs() * term.fragment.edge_speed(space, i);
                }
            }
            out
        }
        Current::Precurrent { xi, mu } => {
            let ln: Vec<Vec<f64>> = xi.basis.iter().map(|d| d.local_norm(space)).collect::<Result<_>>()?;
            let kf = factorial(xi.k);
            (0..n)
                .map(|x| {
                    kf * mu[x]
                        * xi.tuples
                            .iter()
                            .zip(&xi.coeffs)
                            .map(|(tp, c)| c[x].abs() * tp.iter().map(|&b| ln[b][x]).product::<f64>())
                            .sum::<f64>()
                })
                .collect()
        }
        Current::PointMeasure { weights } => weights.iter().map(|w| w.abs()).collect(),
        Current::Sum(terms) => {
            let mut out = vec![0.0; n];
            for (c, term) in terms {
                for (o, v) in out.iter_mut().zip(structural_upper(term, space)?) {
                    *o += c.abs() * v;
                }
            }
            out
        }
        Current::Restriction { inner, psi, sigmas } => {
            let sup = psi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let lips: f64 = sigmas
                .iter()
                .map(|s| crate::space::lip_constant(s, space))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .product();
            structural_upper(inner, space)?.into_iter().map(|v| sup * lips * v).collect()
        }
        Current::Boundary(inner) => match inner.as_ref() {
            Current::Precurrent { xi, mu } => boundary_cofactor_bound(xi, mu, space)?,
            _ => vec![f64::INFINITY; n],
        },
        Current::Bilinear { .. } => vec![f64::INFINITY; n],
    })
}

/// Upper mass of `∂T_ξ` by cofactor expansion along the slot that receives `f`.
fn boundary_cofactor_bound(xi: &KVector, mu: &[f64], space: &MetricSpace) -> Result<Vec<f64>> {
    let n = mu.len();
    let k = xi.k;
    let ln: Vec<Vec<f64>> = xi.basis.iter().map(|d| d.local_norm(space)).collect::<Result<_>>()?;
    let kf = factorial(k.saturating_sub(1));
    let mut out = vec![0.0; n];
    for x in 0..n {
        if mu[x] == 0.0 {
            continue;
        }
        for (t, c) in xi.tuples.iter().zip(&xi.coeffs) {
            if c[x] == 0.0 {
                continue;
            }
            for i in 0..k {
                let rest: f64 = (0..k).filter(|&r| r != i).map(|r| ln[t[r]][x]).product();
                let w = mu[x] * c[x].abs() * kf * rest;
                for (y, cy) in xi.basis[t[i]].row(x) {
                    out[y] += w * cy.abs();
                    out[x] += w * cy.abs();
                }
            }
        }
    }
    Ok(out)
}

/// Lower and upper bounds of the mass measure with witnesses.
///
/// For `k = 1` the mass at each point is the Kantorovich–Rubinstein norm of the coefficient
/// vector of `T(χ_z, ·)`, computed exactly by one LP per point; it is infinite where the
/// coefficients do not sum to 0 (the functional is not local there). For `k ≥ 2` the upper
/// bound is structural and the lower bound comes from dictionary k-tuples improved by
/// coordinate LP ascent.
pub fn mass_estimate(t: &Current, space: &MetricSpace, dict: &FnDict, cfg: MassConfig) -> Result<MassEstimate> {
    if !(cfg.eta > 0.0 && cfg.eta < 1.0) {
        return Err(Error::InvalidArgument("η must lie in (0, 1)".into()));
    }
    let n = t.n();
    if space.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: space.len() });
    }
    let k = t.k();
    let mut lower = vec![0.0; n];
    let mut upper = structural_upper(t, space)?;
    // best[z] = (key, names, tuple values, signed value)
    let mut best: Vec<Option<(String, Vec<String>, Vec<Vec<f64>>, f64)>> = vec![None; n];

    if k == 0 {
        let d = t.density(&[])?;
        for z in 0..n {
            lower[z] = d[z].abs();
            upper[z] = d[z].abs();
            if d[z] != 0.0 {
                best[z] = Some((format!("chi:{}", d[z] > 0.0), vec![], vec![], d[z]));
            }
        }
    } else {
        let unit: Vec<(String, Vec<f64>)> = dict
            .fns
            .iter()
            .zip(&dict.names)
            .skip(1)
            .filter(|(f, _)| f.glip > 0.0)
            .map(|(f, name)| (name.clone(), f.values.iter().map(|v| v / f.glip).collect()))
            .collect();
        for combo in increasing_tuples(unit.len(), k) {
            let pis: Vec<&[f64]> = combo.iter().map(|&i| unit[i].1.as_slice()).collect();
            let d = t.density(&pis)?;
            for z in 0..n {
                if d[z].abs() > lower[z] {
                    lower[z] = d[z].abs();
                    let key = format!("{combo:?}:{}", d[z] > 0.0);
                    let names = combo.iter().map(|&i| unit[i].0.clone()).collect();
                    let values = pis.iter().map(|p| p.to_vec()).collect();
                    best[z] = Some((key, names, values, d[z]));
                }
            }
        }
        if k == 1 {
            let one_point = |z: usize| -> Vec<f64> {
                let mut chi = vec![0.0; n];
                chi[z] = 1.0;
                chi
            };
            for z in 0..n {
                let a = t.linear_in_last(&one_point(z), &[])?;
                let sum: f64 = a.iter().sum();
                let abs: f64 = a.iter().map(|v| v.abs()).sum();
                if abs == 0.0 {
                    upper[z] = 0.0;
                    continue;
                }
                if sum.abs() > LOCALITY_TOL * abs {
                    upper[z] = f64::INFINITY;
                    continue;
                }
                let coeffs: Vec<(usize, f64)> =
                    a.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(y, &v)| (y, v)).collect();
                let (value, sol) = lp::max_lipschitz_pairing(z, &coeffs, |p, q| space.dist(p, q))?;
                upper[z] = upper[z].min(value);
                if value > lower[z] * (1.0 + 1e-12) + 1e-15 {
                    let set: Vec<usize> = sol.iter().map(|s| s.0).collect();
                    let vals: Vec<f64> = sol.iter().map(|s| s.1).collect();
                    let ext = macshane_extend(&set, &vals, space)?;
                    let pi = if ext.glip > 1.0 { ext.scaled(1.0 / ext.glip).values } else { ext.values };
                    let achieved: f64 = a.iter().zip(&pi).map(|(c, p)| c * p).sum();
                    lower[z] = achieved.abs().min(value);
                    best[z] = Some((format!("lp{z}"), vec![format!("lp{z}")], vec![pi], achieved));
                }
                upper[z] = upper[z].max(lower[z]);
            }
        } else {
            for z in 0..n {
                let Some((_, _, start, _)) = best[z].clone() else { continue };
                let mut tuple = start;
                let mut chi = vec![0.0; n];
                chi[z] = 1.0;
                let mut improved = false;
                let mut current = lower[z];
                for _ in 0..cfg.ascent_rounds {
                    for j in 0..k {
                        let prefix: Vec<&[f64]> =
                            (0..k).filter(|&i| i != j).map(|i| tuple[i].as_slice()).collect();
                        let a = t.linear_in_last(&chi, &prefix)?;
                        let coeffs: Vec<(usize, f64)> =
                            a.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(y, &v)| (y, v)).collect();
                        let (value, sol) = lp::max_lipschitz_pairing(z, &coeffs, |p, q| space.dist(p, q))?;
                        if value > current * (1.0 + 1e-9) {
                            let set: Vec<usize> = sol.iter().map(|s| s.0).collect();
                            let vals: Vec<f64> = sol.iter().map(|s| s.1).collect();
                            let ext = macshane_extend(&set, &vals, space)?;
                            let pi = if ext.glip > 1.0 { ext.scaled(1.0 / ext.glip).values } else { ext.values };
                            tuple[j] = pi;
                            let args: Vec<&[f64]> = tuple.iter().map(|p| p.as_slice()).collect();
                            let v = t.evaluate(&chi, &args)?.abs();
                            if v > current {
                                current = v;
                                improved = true;
                            }
                        }
                    }
                }
                if improved {
                    let args: Vec<&[f64]> = tuple.iter().map(|p| p.as_slice()).collect();
                    let v = t.evaluate(&chi, &args)?;
                    lower[z] = v.abs();
                    let names = (0..k).map(|j| format!("ascent{z}_{j}")).collect();
                    best[z] = Some((format!("ascent{z}"), names, tuple, v));
                }
            }
        }
    }
    for z in 0..n {
        if upper[z] < lower[z] {
            upper[z] = lower[z];
        }
    }

    // Group points by witness key and sign.
    let mut witnesses: Vec<Witness> = Vec::new();
    let mut keys: Vec<String> = Vec::new();
    for z in 0..n {
        let Some((key, names, tuple, _)) = &best[z] else { continue };
        if lower[z] == 0.0 {
            continue;
        }
        match keys.iter().position(|q| q == key) {
            Some(i) => witnesses[i].set.push(z),
            None => {
                keys.push(key.clone());
                witnesses.push(Witness {
                    set: vec![z],
                    names: names.clone(),
                    tuple: tuple.clone(),
                    value: 0.0,
                    lower_mass: 0.0,
                    upper_mass: 0.0,
                    efficient: false,
                });
            }
        }
    }
    let mut uncovered = 0.0;
    let mut in_witness = vec![false; n];
    for w in witnesses.iter_mut() {
        let mut chi = vec![0.0; n];
        for &z in &w.set {
            chi[z] = 1.0;
            in_witness[z] = true;
        }
        let args: Vec<&[f64]> = w.tuple.iter().map(|p| p.as_slice()).collect();
        w.value = t.evaluate(&chi, &args)?.abs();
        w.lower_mass = w.set.iter().map(|&z| lower[z]).sum();
        w.upper_mass = w.set.iter().map(|&z| upper[z]).sum();
        w.efficient = w.value > cfg.eta * w.lower_mass;
        if !w.efficient {
            uncovered += w.upper_mass;
        }
    }
    for z in 0..n {
        if !in_witness[z] {
            uncovered += upper[z];
        }
    }
    let lower_total: f64 = lower.iter().sum();
    let upper_total: f64 = upper.iter().sum();
    Ok(MassEstimate {
        lower,
        upper,
        witnesses,
        lower_total,
        upper_total,
        gap: upper_total - lower_total,
        uncovered_upper: uncovered,
        eta: cfg.eta,
    })
}

/// Exact mass measure of a 1-current (one LP per point).
pub fn mass_k1(t: &Current, space: &MetricSpace) -> Result<Vec<f64>> {
    if t.k() != 1 {
        return Err(Error::ArityMismatch { expected: 1, got: t.k() });
    }
    let n = t.n();
    let mut out = vec![0.0; n];
    let mut chi = vec![0.0; n];
    for z in 0..n {
        chi[z] = 1.0;
        let a = t.linear_in_last(&chi, &[])?;
        chi[z] = 0.0;
        let sum: f64 = a.iter().sum();
        let abs: f64 = a.iter().map(|v| v.abs()).sum();
        if abs == 0.0 {
            continue;
        }
        if sum.abs() > LOCALITY_TOL * abs {
            out[z] = f64::INFINITY;
            continue;
        }
        let coeffs: Vec<(usize, f64)> = a.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(y, &v)| (y, v)).collect();
        out[z] = lp::max_lipschitz_pairing(z, &coeffs, |p, q| space.dist(p, q))?.0;
    }
    Ok(out)
}

/// `(D_T, ‖T‖)` with `T(f, π) = Σ f D_T π ‖T‖`; `D_T` is expressed on `μ_ref`.
pub fn der_of_current(t: &Current, mu_ref: &[f64], space: &MetricSpace) -> Result<(Derivation, Vec<f64>)> {
    let Current::FragmentSum { n, terms } = t else {
        return Err(Error::UnsupportedForm("a fragment-sum 1-current"));
    };
    if mu_ref.len() != *n {
        return Err(Error::LengthMismatch { expected: *n, got: mu_ref.len() });
    }
    let mass = mass_k1(t, space)?;
    for (x, &m) in mass.iter().enumerate() {
        if m > 0.0 && mu_ref[x] == 0.0 {
            return Err(Error::CarrierMeasureMismatch { point: x });
        }
        if !m.is_finite() {
            return Err(Error::InvalidArgument(format!("current is not local at point {x}")));
        }
    }
    let carrier = terms
        .iter()
        .map(|term| {
            let nu = term
                .nu
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let x = term.fragment.trace[i];
                    if v == 0.0 || mass[x] == 0.0 {
                        0.0
                    } else {
                        term.weight.signum() * v * mu_ref[x] / mass[x]
                    }
                })
                .collect();
            CarrierEntry { fragment: term.fragment.clone(), weight: term.weight.abs(), nu }
        })
        .collect();
    Ok((Derivation::new(mu_ref.to_vec(), carrier)?, mass))
}

/// `T_D(f, π) = ∫ f Dπ dμ` as a fragment sum.
pub fn curr_of_derivation(d: &Derivation, mu: &[f64]) -> Result<Current> {
    let n = d.n();
    if mu.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: mu.len() });
    }
    let dm = d.mu();
    let terms = d
        .carrier()
        .iter()
        .map(|e| {
            let nu = e
                .nu
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let x = e.fragment.trace[i];
                    if v == 0.0 || dm[x] == 0.0 { 0.0 } else { v * d.mult()[x] * mu[x] / dm[x] }
                })
                .collect();
            FragmentTerm { fragment: e.fragment.clone(), nu, weight: e.weight }
        })
        .collect();
    Ok(Current::FragmentSum { n, terms })
}

/// `‖T‖(X) + ‖∂T‖(X)` from upper mass bounds (exact for 1-currents).
pub fn normal_norm(t: &Current, space: &MetricSpace, dict: &FnDict) -> Result<f64> {
    if t.k() == 0 {
        return Err(Error::ArityMismatch { expected: 1, got: 0 });
    }
    let cfg = MassConfig::default();
    let m = mass_estimate(t, space, dict, cfg)?.upper_total;
    let b = mass_estimate(&t.boundary(), space, dict, cfg)?.upper_total;
    Ok(m + b)
}

#[derive(Debug, Clone)]
pub struct NormalReport {
    pub axioms: AxiomReport,
    pub axioms_ok: bool,
    pub boundary_mass_upper: f64,
    pub below_threshold: bool,
    pub normal: bool,
}

/// Normality check of a precurrent: the axiom harness runs first; then the boundary's
/// upper mass bound is reported and compared with `threshold`.
pub fn is_normal(
    t: &Current,
    space: &MetricSpace,
    dict: &FnDict,
    trials: usize,
    rng: &mut ChaCha8Rng,
    threshold: f64,
) -> Result<NormalReport> {
    let axioms = check_axioms(t, trials, dict, rng)?;
    let axioms_ok = axioms.max_violation() <= 1e-9;
    if !axioms_ok {
        return Ok(NormalReport { axioms, axioms_ok, boundary_mass_upper: f64::NAN, below_threshold: false, normal: false });
    }
    let b = t.boundary();
    let bound = mass_estimate(&b, space, dict, MassConfig::default())?.upper_total;
    let below = bound <= threshold;
    Ok(NormalReport { axioms, axioms_ok, boundary_mass_upper: bound, below_threshold: below, normal: bound.is_finite() && below })
}

#[derive(Debug, Clone, Default)]
pub struct AxiomReport {
    pub trials: usize,
    pub multilinearity: f64,
    pub antisymmetry: f64,
    pub locality: f64,
    pub continuity: &'static str,
}

impl AxiomReport {
    pub fn max_violation(&self) -> f64 {
        self.multilinearity.max(self.antisymmetry).max(self.locality)
    }
}

/// Randomized check of multilinearity, antisymmetry under adjacent swaps and locality.
///
/// Locality is tested in its one-step discrete form: `f` is supported on a random set `A`
/// and one `π_j` is constant on `A` together with every point the functional reads from `A`.
pub fn check_axioms(t: &Current, trials: usize, dict: &FnDict, rng: &mut ChaCha8Rng) -> Result<AxiomReport> {
    let n = t.n();
    let k = t.k();
    let m = dict.len();
    let mut report = AxiomReport {
        trials,
        continuity: "not represented: pointwise bounded convergence is eventually constant on finite spaces",
        ..Default::default()
    };
    let pick = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let i = rng.random_range(0..m);
        let c = rng.random_range(-2.0..2.0);
        dict.fns[i].values.iter().map(|v| c * v).collect()
    };
    let rel = |v: f64, scale: f64| v.abs() / (1.0 + scale.abs());
    for _ in 0..trials {
        let f = pick(rng);
        let mut pis: Vec<Vec<f64>> = (0..k).map(|_| pick(rng)).collect();
        let eval = |f: &[f64], pis: &[Vec<f64>]| -> Result<f64> {
            let args: Vec<&[f64]> = pis.iter().map(|p| p.as_slice()).collect();
            t.evaluate(f, &args)
        };
        // Multilinearity in a random slot.
        let slot = rng.random_range(0..=k);
        let (u, v) = (pick(rng), pick(rng));
        let (alpha, beta) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let comb: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + beta * b).collect();
        let value_with = |w: &[f64]| -> Result<f64> {
            if slot == 0 {
                eval(w, &pis)
            } else {
                let mut p = pis.clone();
                p[slot - 1] = w.to_vec();
                eval(&f, &p)
            }
        };
        let lhs = value_with(&comb)?;
        let (tu, tv) = (value_with(&u)?, value_with(&v)?);
        report.multilinearity = report
            .multilinearity
            .max(rel(lhs - alpha * tu - beta * tv, lhs.abs() + (alpha * tu).abs() + (beta * tv).abs()));
        // Adjacent swaps.
        if k >= 2 {
            let i = rng.random_range(0..k - 1);
            let a = eval(&f, &pis)?;
            pis.swap(i, i + 1);
            let b = eval(&f, &pis)?;
            pis.swap(i, i + 1);
            report.antisymmetry = report.antisymmetry.max(rel(a + b, a.abs()));
        }
        // Locality.
        if k >= 1 && n > 0 {
            let size = rng.random_range(1..=n.div_ceil(3));
            let mut set: Vec<usize> = (0..size).map(|_| rng.random_range(0..n)).collect();
            set.sort_unstable();
            set.dedup();
            let mut fa = vec![0.0; n];
            for &x in &set {
                fa[x] = rng.random_range(-2.0..2.0);
            }
            let j = rng.random_range(0..k);
            let c = rng.random_range(-1.0..1.0);
            for y in t.reach(&set) {
                pis[j][y] = c;
            }
            let v = eval(&fa, &pis)?;
            report.locality = report.locality.max(rel(v, 0.0));
        }
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct FlowDecomposition {
    /// Unit-speed path or cycle fragments with signed weights.
    pub paths: Vec<(Fragment, f64)>,
    pub residual: f64,
    /// `Σ |w_i| mass([γ_i])`.
    pub path_mass: f64,
    /// Exact `‖N‖(X)`.
    pub mass: f64,
    pub cycles: usize,
}

/// Decomposes a 1-current into weighted simple paths and cycles.
///
/// The current is read as a directed edge flow: the coefficient of `π(y)` in `T(χ_x, π)` is
/// the flow on `x → y`. Positive and negative parts are decomposed separately (cycles are
/// cancelled first, then paths are peeled from sources), so `N = Σ w_i [γ_i]` up to rounding.
pub fn flow_decompose(t: &Current, space: &MetricSpace, tol: f64) -> Result<FlowDecomposition> {
    if t.k() != 1 {
        return Err(Error::ArityMismatch { expected: 1, got: t.k() });
    }
    let n = t.n();
    let mut pos: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut neg: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut chi = vec![0.0; n];
    let mut scale: f64 = 0.0;
    for x in 0..n {
        chi[x] = 1.0;
        let a = t.linear_in_last(&chi, &[])?;
        chi[x] = 0.0;
        let sum: f64 = a.iter().sum();
        let abs: f64 = a.iter().map(|v| v.abs()).sum();
        if abs > 0.0 && sum.abs() > LOCALITY_TOL * abs {
            return Err(Error::InvalidArgument(format!("current is not local at point {x}")));
        }
        for (y, &v) in a.iter().enumerate() {
            if y == x || v == 0.0 {
                continue;
            }
            scale = scale.max(v.abs());
            if v > 0.0 {
                pos[x].push((y, v));
            } else {
                neg[x].push((y, -v));
            }
        }
    }
    let drop = 1e-14 * scale;
    let mut paths = Vec::new();
    let mut residual = 0.0;
    let mut cycles = 0;
    for (graph, sign) in [(&mut pos, 1.0), (&mut neg, -1.0)] {
        let (found, res, cyc) = decompose_graph(graph, drop);
        residual += res;
        cycles += cyc;
        for (trace, w) in found {
            let mut domain = vec![0.0];
            for win in trace.windows(2) {
                domain.push(domain.last().unwrap() + space.dist(win[0], win[1]));
            }
            let frag = Fragment::new(domain, trace)?;
            paths.push((frag, sign * w));
        }
    }
    let path_mass: f64 = paths.iter().map(|(f, w)| w.abs() * (f.domain[f.len() - 1] - f.domain[0])).sum();
    let mass: f64 = mass_k1(t, space)?.iter().sum();
    if residual > tol {
        return Err(Error::Residual { residual, tol });
    }
    Ok(FlowDecomposition { paths, residual, path_mass, mass, cycles })
}

/// Cycle cancellation then path peeling on a nonnegative edge flow.
fn decompose_graph(g: &mut [Vec<(usize, f64)>], drop: f64) -> (Vec<(Vec<usize>, f64)>, f64, usize) {
    let n = g.len();
    let mut out = Vec::new();
    let mut residual = 0.0;
    let prune = |g: &mut [Vec<(usize, f64)>], residual: &mut f64| {
        for row in g.iter_mut() {
            row.retain(|&(_, w)| {
                if w <= drop {
                    *residual += w.max(0.0);
                    false
                } else {
                    true
                }
            });
        }
    };
    prune(g, &mut residual);
    let mut n_cycles = 0;
    // Cycles.
    loop {
        let Some(cycle) = find_cycle(g) else { break };
        let w = cycle
            .windows(2)
            .map(|e| g[e[0]].iter().find(|q| q.0 == e[1]).unwrap().1)
            .fold(f64::INFINITY, f64::min);
        for e in cycle.windows(2) {
            let entry = g[e[0]].iter_mut().find(|q| q.0 == e[1]).unwrap();
            entry.1 -= w;
            if entry.1 <= drop {
                entry.1 = 0.0;
            }
        }
        for e in cycle.windows(2) {
            let row = &mut g[e[0]];
            row.retain(|q| q.1 > 0.0);
        }
        out.push((cycle, w));
        n_cycles += 1;
        prune(g, &mut residual);
    }
    // Paths from sources of the remaining acyclic flow.
    loop {
        let mut indeg = vec![0usize; n];
        for row in g.iter() {
            for &(y, _) in row {
                indeg[y] += 1;
            }
        }
        let Some(start) = (0..n).find(|&x| indeg[x] == 0 && !g[x].is_empty()) else { break };
        let mut path = vec![start];
        let mut x = start;
        while let Some(&(y, _)) = g[x].first() {
            path.push(y);
            x = y;
        }
        let w = path
            .windows(2)
            .map(|e| g[e[0]].iter().find(|q| q.0 == e[1]).unwrap().1)
            .fold(f64::INFINITY, f64::min);
        for e in path.windows(2) {
            let entry = g[e[0]].iter_mut().find(|q| q.0 == e[1]).unwrap();
            entry.1 -= w;
        }
        for e in path.windows(2) {
            g[e[0]].retain(|q| q.1 > drop || {
                residual += q.1.max(0.0);
                false
            });
        }
        out.push((path, w));
    }
    for row in g.iter() {
        for &(_, w) in row {
            residual += w;
        }
    }
    (out, residual, n_cycles)
}

/// A directed cycle as a closed vertex list, by iterative DFS.
fn find_cycle(g: &[Vec<(usize, f64)>]) -> Option<Vec<usize>> {
    let n = g.len();
    let mut color = vec![0u8; n];
    let mut parent = vec![usize::MAX; n];
    for root in 0..n {
        if color[root] != 0 {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        color[root] = 1;
        while let Some(&mut (x, ref mut next)) = stack.last_mut() {
            if *next < g[x].len() {
                let y = g[x][*next].0;
                *next += 1;
                match color[y] {
                    0 => {
                        color[y] = 1;
                        parent[y] = x;
                        stack.push((y, 0));
                    }
                    1 => {
                        let mut cycle = vec![y];
                        let mut z = x;
                        while z != y {
                            cycle.push(z);
                            z = parent[z];
                        }
                        cycle.push(y);
                        cycle.reverse();
                        return Some(cycle);
                    }
                    _ => {}
                }
            } else {
                color[x] = 2;
                stack.pop();
            }
        }
    }
    None
}

/// Canonical determinant re-exported for callers that build pairings by hand.
pub fn det(cols: &[Vec<f64>]) -> f64 {
    canonical_det(cols)
}
