//! Alberti representations of measures on finite spaces: validation, restriction, gluing,
//! direction and speed checks, LP construction with splitting, cone refinement and the
//! pipeline from currents to representations.

use microlp::{ComparisonOp, OptimizationDirection, Problem};

use crate::currents::{mass_estimate, structural_upper, Current, MassConfig};
use crate::derivations::{CarrierEntry, Derivation};
use crate::error::{Error, Result};
use crate::exterior::canonical_det;
use crate::fragments::Fragment;
use crate::lp;
use crate::space::{dst_delta_alpha, lip_constant, Cone, ConeField, FnDict, MetricSpace};

/// `𝒜 = (P, ν)`: fragments with probability weights and nonnegative edge measures.
#[derive(Debug, Clone, PartialEq)]
pub struct AlbertiRep {
    pub fragments: Vec<Fragment>,
    pub p: Vec<f64>,
    pub nu: Vec<Vec<f64>>,
    pub notes: Vec<String>,
}

impl AlbertiRep {
    pub fn new(fragments: Vec<Fragment>, p: Vec<f64>, nu: Vec<Vec<f64>>) -> Result<Self> {
        if p.len() != fragments.len() {
            return Err(Error::LengthMismatch { expected: fragments.len(), got: p.len() });
        }
        if nu.len() != fragments.len() {
            return Err(Error::LengthMismatch { expected: fragments.len(), got: nu.len() });
        }
        for (f, v) in fragments.iter().zip(&nu) {
            if v.len() != f.n_pairs() {
                return Err(Error::LengthMismatch { expected: f.n_pairs(), got: v.len() });
            }
        }
        Ok(AlbertiRep { fragments, p, nu, notes: Vec::new() })
    }

    pub fn empty() -> Self {
        AlbertiRep { fragments: Vec::new(), p: Vec::new(), nu: Vec::new(), notes: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }

    /// Builds a representation from edge masses `m_e = P ν_e`, normalizing `P` to a
    /// probability. Fragments without mass are dropped.
    pub fn from_edge_masses(fragments: Vec<Fragment>, masses: Vec<Vec<f64>>) -> Result<Self> {
        let totals: Vec<f64> = masses.iter().map(|m| m.iter().sum()).collect();
        let total: f64 = totals.iter().sum();
        let mut rep = AlbertiRep::empty();
        if total <= 0.0 {
            return Ok(rep);
        }
        for ((f, m), t) in fragments.into_iter().zip(masses).zip(totals) {
            if t <= 0.0 {
                continue;
            }
            if m.len() != f.n_pairs() {
                return Err(Error::LengthMismatch { expected: f.n_pairs(), got: m.len() });
            }
            let p = t / total;
            rep.nu.push(m.iter().map(|v| v / p).collect());
            rep.p.push(p);
            rep.fragments.push(f);
        }
        Ok(rep)
    }

    /// `Σ_γ P(γ) ν_γ` pushed to points through left endpoints.
    pub fn pushforward(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for ((f, p), nu) in self.fragments.iter().zip(&self.p).zip(&self.nu) {
            f.push_nu_into(nu, *p, &mut out);
        }
        out
    }

    /// Edges `(fragment, pair index)` carrying positive mass.
    fn charged_edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.fragments.iter().enumerate().flat_map(move |(j, f)| {
            f.edges().filter_map(move |i| {
                let m = self.p[j] * self.nu[j][i];
                (m != 0.0).then_some((j, i, m))
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// `max_x |Σ P ν_γ(x) − μ(x)|`.
    pub max_defect: f64,
    pub decomposition_ok: bool,
    /// Pairs with negative density or density on degenerate edges or non-edges.
    pub ac_violations: Vec<(usize, usize)>,
    pub p_sum: f64,
    pub p_ok: bool,
    pub ok: bool,
}

/// Checks `μ = ∫ ν_γ dP`, absolute continuity of each `ν_γ` and the normalization of `P`.
pub fn validate(rep: &AlbertiRep, mu: &[f64], tol: f64) -> ValidationReport {
    let n = mu.len();
    let push = rep.pushforward(n);
    let max_defect = push.iter().zip(mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut ac_violations = Vec::new();
    for (j, (f, nu)) in rep.fragments.iter().zip(&rep.nu).enumerate() {
        for (i, &v) in nu.iter().enumerate() {
            if v < 0.0 || (v != 0.0 && (!f.is_edge(i) || f.is_degenerate(i))) || f.trace.iter().any(|&p| p >= n) {
                ac_violations.push((j, i));
            }
        }
    }
    let p_sum: f64 = rep.p.iter().sum();
    let p_ok = rep.p.iter().all(|&p| p >= 0.0) && (rep.is_empty() || (p_sum - 1.0).abs() <= 1e-12);
    let decomposition_ok = max_defect <= tol;
    ValidationReport {
        max_defect,
        decomposition_ok,
        ok: decomposition_ok && ac_violations.is_empty() && p_ok,
        ac_violations,
        p_sum,
        p_ok,
    }
}

/// `𝒜↾U = (P, ν↾U)`: edge densities are zeroed where the left endpoint is outside `U`.
pub fn restrict(rep: &AlbertiRep, set: &[usize]) -> AlbertiRep {
    let nu = rep
        .fragments
        .iter()
        .zip(&rep.nu)
        .map(|(f, nu)| nu.iter().enumerate().map(|(i, &v)| if set.contains(&f.trace[i]) { v } else { 0.0 }).collect())
        .collect();
    AlbertiRep { fragments: rep.fragments.clone(), p: rep.p.clone(), nu, notes: rep.notes.clone() }
}

/// Glues representations of `μ↾U_α` over a disjoint partition into one representation of
/// `μ`. Each piece's weights are rescaled by `μ(U_α)/μ(X)` and densities by the inverse.
pub fn glue(reps: &[AlbertiRep], partition: &[Vec<usize>], mu: &[f64]) -> Result<AlbertiRep> {
    if reps.len() != partition.len() {
        return Err(Error::LengthMismatch { expected: partition.len(), got: reps.len() });
    }
    let n = mu.len();
    let mut owner = vec![usize::MAX; n];
    for (a, piece) in partition.iter().enumerate() {
        for &x in piece {
            if x >= n {
                return Err(Error::InvalidArgument(format!("partition point {x} outside the space")));
            }
            if owner[x] != usize::MAX {
                return Err(Error::OverlappingPartition(x));
            }
            owner[x] = a;
        }
    }
    let total: f64 = mu.iter().sum();
    let mut out = AlbertiRep::empty();
    if total <= 0.0 {
        return Ok(out);
    }
    for (rep, piece) in reps.iter().zip(partition) {
        let mass: f64 = piece.iter().map(|&x| mu[x]).sum();
        if piece.is_empty() || mass == 0.0 || rep.is_empty() {
            continue;
        }
        let c = mass / total;
        let r = restrict(rep, piece);
        for ((f, p), nu) in r.fragments.into_iter().zip(r.p).zip(r.nu) {
            out.p.push(p * c);
            out.nu.push(nu.into_iter().map(|v| v / c).collect());
            out.fragments.push(f);
        }
        out.notes.extend(rep.notes.iter().cloned());
    }
    Ok(out)
}

/// `F = (f_1, …, f_k)` and a cone per point in `ℝ^k`.
#[derive(Debug, Clone)]
pub struct DirectionSpec {
    pub f: Vec<Vec<f64>>,
    pub cone: ConeField,
}

impl DirectionSpec {
    pub fn new(f: Vec<Vec<f64>>, cone: ConeField) -> Result<Self> {
        if cone.dim() != f.len() {
            return Err(Error::ArityMismatch { expected: cone.dim(), got: f.len() });
        }
        Ok(DirectionSpec { f, cone })
    }

    pub fn constant(f: Vec<Vec<f64>>, cone: Cone) -> Result<Self> {
        let n = f.first().map_or(0, |v| v.len());
        Self::new(f, ConeField::constant(cone, n))
    }

    /// `(F∘γ)'` on pair `i` lies in the cone at its left endpoint.
    pub fn admits(&self, frag: &Fragment, i: usize) -> bool {
        let x = frag.trace[i];
        let v: Vec<f64> = self.f.iter().map(|f| frag.edge_derivative(f, i)).collect();
        self.cone.cones[x].contains(&v).unwrap_or(false)
    }
}

/// `(g∘γ)' ≥ σ md γ` (strict: `>`).
#[derive(Debug, Clone)]
pub struct SpeedSpec {
    pub g: Vec<f64>,
    pub sigma: Vec<f64>,
    pub strict: bool,
}

impl SpeedSpec {
    pub fn new(g: Vec<f64>, sigma: Vec<f64>, strict: bool) -> Result<Self> {
        if g.len() != sigma.len() {
            return Err(Error::LengthMismatch { expected: g.len(), got: sigma.len() });
        }
        if sigma.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::InvalidArgument("speed threshold must be nonnegative".into()));
        }
        Ok(SpeedSpec { g, sigma, strict })
    }

    pub fn uniform(g: Vec<f64>, sigma: f64, strict: bool) -> Result<Self> {
        let n = g.len();
        Self::new(g, vec![sigma; n], strict)
    }

    pub fn admits(&self, frag: &Fragment, i: usize, space: &MetricSpace) -> bool {
        let x = frag.trace[i];
        let lhs = frag.edge_derivative(&self.g, i);
        let rhs = self.sigma[x] * frag.edge_speed(space, i);
        if self.strict { lhs > rhs } else { lhs >= rhs }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    /// `P ν`-mass fraction of edges passing the test (1 for an empty representation).
    pub fraction: f64,
    pub failing: Vec<(usize, usize)>,
    pub certified: bool,
}

fn mass_fraction(rep: &AlbertiRep, pass: impl Fn(&Fragment, usize) -> bool) -> CheckReport {
    let (mut total, mut good) = (0.0, 0.0);
    let mut failing = Vec::new();
    for (j, i, m) in rep.charged_edges() {
        total += m.abs();
        if pass(&rep.fragments[j], i) {
            good += m.abs();
        } else {
            failing.push((j, i));
        }
    }
    let fraction = if total == 0.0 { 1.0 } else { good / total };
    CheckReport { fraction, certified: failing.is_empty(), failing }
}

pub fn check_direction(rep: &AlbertiRep, spec: &DirectionSpec) -> CheckReport {
    mass_fraction(rep, |f, i| spec.admits(f, i))
}

pub fn check_speed(rep: &AlbertiRep, spec: &SpeedSpec, space: &MetricSpace) -> CheckReport {
    mass_fraction(rep, |f, i| spec.admits(f, i, space))
}

/// Exhaustive certificate that no admissible edge of the family starts in `set`.
#[derive(Debug, Clone, PartialEq)]
pub struct NullCertificate {
    pub set: Vec<usize>,
    pub family_size: usize,
    /// Per family fragment, the image length of admissible edges starting in `set`.
    pub residuals: Vec<f64>,
    pub exhaustive: bool,
}

impl NullCertificate {
    pub fn holds(&self) -> bool {
        self.exhaustive && self.residuals.iter().all(|&r| r == 0.0)
    }

    pub fn covers(&self, set: &[usize]) -> bool {
        self.holds() && set.iter().all(|x| self.set.contains(x))
    }
}

fn admissible(
    frag: &Fragment,
    i: usize,
    space: &MetricSpace,
    direction: Option<&DirectionSpec>,
    speed: Option<&SpeedSpec>,
) -> bool {
    frag.is_edge(i)
        && !frag.is_degenerate(i)
        && direction.is_none_or(|d| d.admits(frag, i))
        && speed.is_none_or(|s| s.admits(frag, i, space))
}

/// Checks exhaustively that every family fragment meets `set` only in null image length.
pub fn certify_null(
    set: &[usize],
    family: &[Fragment],
    space: &MetricSpace,
    direction: Option<&DirectionSpec>,
    speed: Option<&SpeedSpec>,
) -> NullCertificate {
    let residuals = family
        .iter()
        .map(|f| {
            f.edges()
                .filter(|&i| set.contains(&f.trace[i]) && admissible(f, i, space, direction, speed))
                .map(|i| space.dist(f.trace[i], f.trace[i + 1]))
                .sum()
        })
        .collect();
    NullCertificate { set: set.to_vec(), family_size: family.len(), residuals, exhaustive: true }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub a: Vec<usize>,
    pub rep: AlbertiRep,
    pub s: Vec<usize>,
    pub certificate: NullCertificate,
    /// `μ(A)`.
    pub covered: f64,
}

/// Splits `B = A ∪ S` with `μ↾A` represented on admissible family edges and `S` null.
///
/// Stage one maximizes the covered mass subject to `Σ_{e at x} m_e ≤ μ(x)`; points that are
/// not fully covered are removed from `A` and the LP is rerun until stable. Stage two keeps
/// the coverage and maximizes the total speed quotient `Σ m_e (g∘γ)'/md`, which prefers the
/// fastest admissible edges.
pub fn rainwater_split(
    mu: &[f64],
    b: &[usize],
    family: &[Fragment],
    space: &MetricSpace,
    direction: Option<&DirectionSpec>,
    speed: Option<&SpeedSpec>,
) -> Result<Split> {
    let n = mu.len();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for (j, f) in family.iter().enumerate() {
        f.check_in_len(n)?;
        for i in 0..f.n_pairs() {
            if b.contains(&f.trace[i]) && admissible(f, i, space, direction, speed) {
                edges.push((j, i));
            }
        }
    }
    let mut a: Vec<usize> = b.iter().copied().filter(|&x| edges.iter().any(|&(j, i)| family[j].trace[i] == x)).collect();
    a.sort_unstable();
    a.dedup();
    let mut masses: Vec<f64>;
    loop {
        let active: Vec<(usize, usize)> =
            edges.iter().copied().filter(|&(j, i)| a.contains(&family[j].trace[i])).collect();
        masses = solve_split(mu, &a, &active, family, space, speed)?;
        let mut got = vec![0.0; n];
        for (&(j, i), m) in active.iter().zip(&masses) {
            got[family[j].trace[i]] += m;
        }
        let before = a.len();
        a.retain(|&x| (got[x] - mu[x]).abs() <= 1e-9 * mu[x].max(1e-300));
        if a.len() == before {
            let mut per_frag: Vec<Vec<f64>> = family.iter().map(|f| vec![0.0; f.n_pairs()]).collect();
            for (&(j, i), m) in active.iter().zip(&masses) {
                per_frag[j][i] += m.max(0.0);
            }
            // Edges at points of A reproduce μ exactly; clean LP rounding.
            for x in &a {
                let row: Vec<(usize, usize)> = active.iter().copied().filter(|&(j, i)| family[j].trace[i] == *x).collect();
                let s: f64 = row.iter().map(|&(j, i)| per_frag[j][i]).sum();
                if s > 0.0 {
                    for (j, i) in row {
                        per_frag[j][i] *= mu[*x] / s;
                    }
                }
            }
            let rep = AlbertiRep::from_edge_masses(family.to_vec(), per_frag)?;
            let s: Vec<usize> = b.iter().copied().filter(|x| !a.contains(x)).collect();
            let certificate = certify_null(&s, family, space, direction, speed);
            let covered = a.iter().map(|&x| mu[x]).sum();
            return Ok(Split { a, rep, s, certificate, covered });
        }
    }
}

fn solve_split(
    mu: &[f64],
    a: &[usize],
    edges: &[(usize, usize)],
    family: &[Fragment],
    space: &MetricSpace,
    speed: Option<&SpeedSpec>,
) -> Result<Vec<f64>> {
    if edges.is_empty() {
        return Ok(Vec::new());
    }
    let quotient = |(j, i): (usize, usize)| -> f64 {
        let f = &family[j];
        let md = f.edge_speed(space, i);
        match speed {
            Some(s) if md > 0.0 => f.edge_derivative(&s.g, i) / md,
            _ => md,
        }
    };
    let build = |stage_two: Option<f64>| {
        let mut pr = Problem::new(OptimizationDirection::Maximize);
        let vars: Vec<_> = edges
            .iter()
            .map(|&e| {
                let x = family[e.0].trace[e.1];
                let obj = if stage_two.is_some() { quotient(e) } else { 1.0 };
                pr.add_var(obj, (0.0, mu[x]))
            })
            .collect();
        for &x in a {
            let row: Vec<_> = edges
                .iter()
                .zip(&vars)
                .filter(|((j, i), _)| family[*j].trace[*i] == x)
                .map(|(_, &v)| (v, 1.0))
                .collect();
            pr.add_constraint(row, ComparisonOp::Le, mu[x]);
        }
        if let Some(opt) = stage_two {
            let all: Vec<_> = vars.iter().map(|&v| (v, 1.0)).collect();
            pr.add_constraint(all, ComparisonOp::Ge, opt * (1.0 - 1e-12));
        }
        (pr, vars)
    };
    let (p1, _) = build(None);
    let opt = lp::solve(&p1)?.objective();
    let (p2, vars) = build(Some(opt));
    let sol = lp::solve(&p2)?;
    Ok(vars.iter().map(|&v| sol.var_value(v)).collect())
}

/// Representation of `μ` by the family, or a coverage gap above `tol`.
pub fn construct_by_lp(
    mu: &[f64],
    family: &[Fragment],
    space: &MetricSpace,
    direction: Option<&DirectionSpec>,
    speed: Option<&SpeedSpec>,
    tol: f64,
) -> Result<AlbertiRep> {
    let support: Vec<usize> = (0..mu.len()).filter(|&x| mu[x] > 0.0).collect();
    let split = rainwater_split(mu, &support, family, space, direction, speed)?;
    let gap: f64 = split.s.iter().map(|&x| mu[x]).sum();
    if gap > tol {
        return Err(Error::CoverageGap { mass: gap, points: split.s });
    }
    Ok(split.rep)
}

/// Splits each fragment into pieces that are `(1, 1 + ε)`-biLipschitz after unit
/// reparametrization; a piece ends before the first point violating the lower bound.
pub fn bilipschitz_refine(frag: &Fragment, space: &MetricSpace, eps: f64) -> Result<Vec<Fragment>> {
    let mut out = Vec::new();
    for (piece, _) in frag.restrict_edges_to_set(&frag.trace) {
        let mut start = 0;
        let len = piece.len();
        while start + 1 < len {
            let mut end = start + 1;
            'grow: while end + 1 < len {
                let cand = end + 1;
                let sub = sub_fragment(&piece, start, cand);
                let unit = sub.reparametrize_unit(space)?;
                for p in 0..unit.len() {
                    for q in (p + 1)..unit.len() {
                        let dt = unit.domain[q] - unit.domain[p];
                        if space.dist(unit.trace[p], unit.trace[q]) * (1.0 + eps) < dt - 1e-12 {
                            break 'grow;
                        }
                    }
                }
                end = cand;
            }
            let sub = sub_fragment(&piece, start, end);
            if !(0..sub.n_pairs()).all(|i| sub.is_degenerate(i)) {
                out.push(sub.reparametrize_unit(space)?);
            }
            start = end;
        }
    }
    Ok(out)
}

fn sub_fragment(f: &Fragment, a: usize, b: usize) -> Fragment {
    Fragment::new(f.domain[a..=b].to_vec(), f.trace[a..=b].to_vec()).expect("sub-fragment of a valid fragment")
}

/// Derivation `D_𝒜 f(x) = Σ P ν (f∘γ)' / μ(x)` with the representation as carrier.
#[derive(Debug, Clone)]
pub struct RepDerivation {
    pub derivation: Derivation,
    pub max_local_norm: f64,
    pub norm_ok: bool,
}

pub fn derivation_of(rep: &AlbertiRep, space: &MetricSpace, c: f64) -> Result<RepDerivation> {
    let n = space.len();
    let report = validate(rep, &rep.pushforward(n), 0.0);
    if !report.ac_violations.is_empty() || !report.p_ok {
        return Err(Error::InvalidRepresentation(format!(
            "{} absolute-continuity violations, P sums to {}",
            report.ac_violations.len(),
            report.p_sum
        )));
    }
    let mu = rep.pushforward(n);
    let carrier = rep
        .fragments
        .iter()
        .zip(&rep.p)
        .zip(&rep.nu)
        .map(|((f, &p), nu)| CarrierEntry::new(f.clone(), p, nu.clone()))
        .collect::<Result<Vec<_>>>()?;
    let derivation = Derivation::new(mu, carrier)?;
    let max_local_norm = derivation.local_norm(space)?.into_iter().fold(0.0, f64::max);
    Ok(RepDerivation { derivation, max_local_norm, norm_ok: max_local_norm <= c + 1e-9 })
}

/// `D F(x) ∈ C(x)` at every point of `support`.
pub fn derivation_in_cone(d: &Derivation, f: &[Vec<f64>], cone: &ConeField, support: &[usize]) -> Result<bool> {
    let acts: Vec<Vec<f64>> = f.iter().map(|g| d.apply(g)).collect::<Result<_>>()?;
    for &x in support {
        let v: Vec<f64> = acts.iter().map(|a| a[x]).collect();
        if !cone.cones[x].contains(&v)? {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone)]
pub struct ConeRefinement {
    pub rep: AlbertiRep,
    /// `σ / (|D_w|loc + 1 − σ)` per point.
    pub speed_bound: Vec<f64>,
    pub direction: CheckReport,
    pub speed: CheckReport,
    pub uncovered: Vec<usize>,
}

/// Representation of `μ↾V` in the `g`-direction of `Cone(w, α)` with `⟨w, g⟩`-speed at least
/// `σ/(|D_w|loc + 1 − σ)`, built on the carrier fragments of `D_w = Σ w_i D_i` and `extra`.
#[allow(clippy::too_many_arguments)]
pub fn cone_refine(
    mu: &[f64],
    v: &[usize],
    ds: &[Derivation],
    g: &[Vec<f64>],
    w: &[f64],
    alpha: f64,
    sigma: f64,
    extra: &[Fragment],
    space: &MetricSpace,
    tol: f64,
) -> Result<ConeRefinement> {
    let k = ds.len();
    if g.len() != k || w.len() != k {
        return Err(Error::ArityMismatch { expected: k, got: g.len().min(w.len()) });
    }
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::InvalidArgument("σ must lie in (0, 1)".into()));
    }
    let n = mu.len();
    let mut defect: f64 = 0.0;
    for (i, d) in ds.iter().enumerate() {
        for (j, gj) in g.iter().enumerate() {
            let a = d.apply(gj)?;
            for &x in v {
                defect = defect.max((a[x] - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
    }
    if defect > 1e-9 {
        return Err(Error::PseudodualPrecondition(defect));
    }
    let consts: Vec<Vec<f64>> = w.iter().map(|&c| vec![c; n]).collect();
    let terms: Vec<(&[f64], &Derivation)> = consts.iter().map(|c| c.as_slice()).zip(ds.iter()).collect();
    let dw = Derivation::combine(&terms)?;
    let ln = dw.local_norm(space)?;
    let speed_bound: Vec<f64> = ln.iter().map(|l| sigma / (l + 1.0 - sigma)).collect();
    let mut family: Vec<Fragment> = dw.effective_carrier().into_iter().map(|e| e.fragment).collect();
    for d in ds {
        family.extend(d.carrier().iter().map(|e| e.fragment.clone()));
    }
    family.extend(extra.iter().cloned());
    let cone = Cone::new(w.to_vec(), alpha)?;
    let dir = DirectionSpec::constant(g.to_vec(), cone)?;
    let wg: Vec<f64> = (0..n).map(|x| (0..k).map(|i| w[i] * g[i][x]).sum()).collect();
    let spd = SpeedSpec::new(wg, speed_bound.clone(), false)?;
    let mu_v: Vec<f64> = (0..n).map(|x| if v.contains(&x) { mu[x] } else { 0.0 }).collect();
    let support: Vec<usize> = v.iter().copied().filter(|&x| mu[x] > 0.0).collect();
    let split = rainwater_split(&mu_v, &support, &family, space, Some(&dir), Some(&spd))?;
    let gap: f64 = split.s.iter().map(|&x| mu[x]).sum();
    if gap > tol {
        return Err(Error::CoverageGap { mass: gap, points: split.s });
    }
    let direction = check_direction(&split.rep, &dir);
    let speed = check_speed(&split.rep, &spd, space);
    Ok(ConeRefinement { rep: split.rep, speed_bound, direction, speed, uncovered: split.s })
}

#[derive(Debug, Clone)]
pub struct ConeNullBound {
    /// `|T(χ_K, π)|`.
    pub value: f64,
    /// `|T(χ_K, h, π_2, …)|` with the cone majorant `h` in place of `π_1`.
    pub majorant_value: f64,
    /// `|T(χ_K, π_1 − h, π_2, …)|`: the price of the finite net.
    pub resolution_slack: f64,
    /// `Σ_{x∈K} Σ_y |a_xy| d(x, y)` for the coefficients of `T(χ_K, π_2, …, ·)`.
    pub edge_mass: f64,
    /// `cot α Σ_{x∈K} Σ_y |a_xy| Σ_i |⟨u_i, π(x) − π(y)⟩|`.
    pub transverse: f64,
    /// `δ · edge_mass + transverse + resolution_slack`, an upper bound of `value`.
    pub bound: f64,
    /// `‖T‖.upper(K) Π_{j≥2} glip(π_j)`.
    pub mass_upper: f64,
    /// `value ≤ δ mass_upper + resolution_slack`.
    pub within_delta_mass: bool,
}

/// Finite-scale version of the cone estimate on a null set `K`.
///
/// The majorant `h(x) = min_{a∈K} (π_1(a) + d_{δ,α}(x, a))` is 1-Lipschitz for `d_{δ,α}`
/// and agrees with `π_1` on `K` up to the net resolution. Writing `T(χ_K, h, π_2, …)` as a
/// linear form `Σ a_xy (h(y) − h(x))` bounds it by `δ` times the edge mass plus the
/// transverse term.
#[allow(clippy::too_many_arguments)]
pub fn cone_null_estimate(
    t: &Current,
    k_set: &[usize],
    pis: &[&[f64]],
    delta: f64,
    alpha: f64,
    certificate: Option<&NullCertificate>,
    space: &MetricSpace,
    dict: &FnDict,
) -> Result<ConeNullBound> {
    let n = t.n();
    if pis.len() != t.k() || pis.is_empty() {
        return Err(Error::ArityMismatch { expected: t.k(), got: pis.len() });
    }
    if k_set.is_empty() {
        return Ok(ConeNullBound {
            value: 0.0,
            majorant_value: 0.0,
            resolution_slack: 0.0,
            edge_mass: 0.0,
            transverse: 0.0,
            bound: 0.0,
            mass_upper: 0.0,
            within_delta_mass: true,
        });
    }
    match certificate {
        Some(c) if c.covers(k_set) => {}
        _ => return Err(Error::MissingCertificate),
    }
    let k = pis.len();
    let mut e1 = vec![0.0; k];
    e1[0] = 1.0;
    let dd = dst_delta_alpha(pis, &e1, delta, alpha, space)?;
    let h: Vec<f64> = (0..n)
        .map(|x| k_set.iter().map(|&a| pis[0][a] + dd[x][a]).fold(f64::INFINITY, f64::min))
        .collect();
    let mut chi = vec![0.0; n];
    for &x in k_set {
        chi[x] = 1.0;
    }
    let value = t.evaluate(&chi, pis)?.abs();
    let mut args: Vec<&[f64]> = pis.to_vec();
    args[0] = &h;
    let majorant_value = t.evaluate(&chi, &args)?.abs();
    let diff: Vec<f64> = pis[0].iter().zip(&h).map(|(a, b)| a - b).collect();
    args[0] = &diff;
    let resolution_slack = t.evaluate(&chi, &args)?.abs();

    // Coefficients of the first slot: move it last with the alternating sign.
    let prefix: Vec<&[f64]> = pis[1..].to_vec();
    let sign = if (k - 1) % 2 == 0 { 1.0 } else { -1.0 };
    let cot = 1.0 / alpha.tan();
    let us = crate::space::orthonormal_complement(&e1);
    let (mut edge_mass, mut transverse) = (0.0, 0.0);
    for &x in k_set {
        let mut cx = vec![0.0; n];
        cx[x] = 1.0;
        let a = t.linear_in_last(&cx, &prefix)?;
        for (y, &c) in a.iter().enumerate() {
            if y == x || c == 0.0 {
                continue;
            }
            let c = (sign * c).abs();
            edge_mass += c * space.dist(x, y);
            let tr: f64 = us
                .iter()
                .map(|u| u.iter().zip(pis).map(|(ui, p)| ui * (p[x] - p[y])).sum::<f64>().abs())
                .sum();
            transverse += c * cot * tr;
        }
    }
    let upper = structural_upper(t, space)?;
    let glips: f64 = pis[1..].iter().map(|p| lip_constant(p, space)).collect::<Result<Vec<_>>>()?.into_iter().product();
    let mass_upper = k_set.iter().map(|&x| upper[x]).sum::<f64>() * glips;
    let _ = dict;
    let bound = delta * edge_mass + transverse + resolution_slack;
    Ok(ConeNullBound {
        value,
        majorant_value,
        resolution_slack,
        edge_mass,
        transverse,
        bound,
        mass_upper,
        within_delta_mass: value <= delta * mass_upper + resolution_slack + 1e-12,
    })
}

#[derive(Debug, Clone)]
pub struct AlbertiPiece {
    pub set: Vec<usize>,
    pub names: Vec<String>,
    pub pi: Vec<Vec<f64>>,
    /// `‖T‖.lower(B_j)` for the witness set and after each direction peel.
    pub peel_masses: Vec<f64>,
    /// `Π_{i≤k} (η − iδ) ‖T‖.lower(B_j)`.
    pub peel_bound: f64,
    pub peel_ok: bool,
    /// One representation per requested cone.
    pub reps: Vec<AlbertiRep>,
    pub direction_fractions: Vec<f64>,
    /// `min_x |det(D_i π_j(x))|` over the piece, for the axis representations.
    pub independence: f64,
}

#[derive(Debug, Clone)]
pub struct AlbertiDecomposition {
    pub pieces: Vec<AlbertiPiece>,
    pub mass: Vec<f64>,
    /// `‖T‖.upper(X ∖ ∪ V_j)`.
    pub coverage_defect: f64,
    /// Per requested cone, the glued representation of `‖T‖↾∪V_j`.
    pub glued: Vec<AlbertiRep>,
    pub rounds: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub eta: f64,
    pub delta: f64,
    /// biLipschitz slack applied to the family.
    pub eps: f64,
    pub tol: f64,
    pub max_rounds: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { eta: 0.9, delta: 0.2, eps: 0.1, tol: 1e-9, max_rounds: 4 }
    }
}

/// Decomposes `‖T‖` into pieces `V_j` with Alberti representations in the `π^j`-direction of
/// each requested cone.
///
/// Efficient witnesses `(B_j, π^j)` come from [`mass_estimate`] over dictionary tuples; each `B_j` is peeled by
/// splitting along `e_1, …, e_k` with speed at least `δ`, and the surviving set `V_j` is
/// represented once per cone. Uncovered mass is re-examined for up to `max_rounds` rounds.
pub fn current_to_alberti(
    t: &Current,
    cones: &[Cone],
    family: &[Fragment],
    space: &MetricSpace,
    dict: &FnDict,
    cfg: &PipelineConfig,
) -> Result<AlbertiDecomposition> {
    let k = t.k();
    let n = t.n();
    if k == 0 {
        return Err(Error::ArityMismatch { expected: 1, got: 0 });
    }
    if !(cfg.delta > 0.0 && cfg.delta < cfg.eta / k as f64) {
        return Err(Error::InvalidArgument("δ must lie in (0, η/k)".into()));
    }
    for c in cones {
        if c.axis.len() != k {
            return Err(Error::ArityMismatch { expected: k, got: c.axis.len() });
        }
    }
    // Dictionary witnesses only: the maps π^j must be shared by whole pieces.
    let mass_cfg = MassConfig { eta: cfg.eta, ascent_rounds: 0 };
    let first = mass_estimate(t, space, dict, mass_cfg)?;
    if first.lower_total == 0.0 {
        return Err(Error::ZeroCurrent);
    }
    let mass = first.upper.clone();
    let lower = first.lower.clone();
    let mut refined = Vec::new();
    for f in family {
        refined.extend(bilipschitz_refine(f, space, cfg.eps)?);
    }
    let c_peel: f64 = (1..=k).map(|i| cfg.eta - i as f64 * cfg.delta).product();
    let mut remaining: Vec<usize> = (0..n).filter(|&x| mass[x] > 0.0).collect();
    let mut pieces: Vec<AlbertiPiece> = Vec::new();
    let mut estimate = first;
    let mut rounds = 0;
    while rounds < cfg.max_rounds && !remaining.is_empty() {
        rounds += 1;
        let mut progressed = false;
        for wit in estimate.witnesses.iter().filter(|w| w.efficient && w.value > 0.0) {
            let b: Vec<usize> = wit.set.iter().copied().filter(|x| remaining.contains(x)).collect();
            if b.is_empty() {
                continue;
            }
            let pi = wit.tuple.clone();
            let mut current = b.clone();
            let mut peel_masses = vec![b.iter().map(|&x| lower[x]).sum()];
            for i in 0..k {
                let mut axis = vec![0.0; k];
                axis[i] = 1.0;
                let dir = DirectionSpec::constant(pi.clone(), Cone::new(axis, std::f64::consts::FRAC_PI_4)?)?;
                let spd = SpeedSpec::uniform(pi[i].clone(), cfg.delta, false)?;
                let split = rainwater_split(&mass, &current, &refined, space, Some(&dir), Some(&spd))?;
                current = split.a;
                peel_masses.push(current.iter().map(|&x| lower[x]).sum());
            }
            if current.is_empty() {
                continue;
            }
            let mut reps = Vec::new();
            let mut fractions = Vec::new();
            for cone in cones {
                let dir = DirectionSpec::constant(pi.clone(), cone.clone())?;
                let split = rainwater_split(&mass, &current, &refined, space, Some(&dir), None)?;
                let mut rep = split.rep;
                rep.notes.push(format!("cone axis {:?}, opening {}", cone.axis, cone.alpha));
                fractions.push(check_direction(&rep, &dir).fraction);
                let covered: Vec<usize> = split.a;
                if covered.len() < current.len() {
                    current.retain(|x| covered.contains(x));
                }
                reps.push(rep);
            }
            let independence = axis_independence(&mass, &current, &pi, &refined, space)?;
            remaining.retain(|x| !current.contains(x));
            let peel_bound = c_peel * peel_masses[0];
            pieces.push(AlbertiPiece {
                peel_ok: peel_masses[k] >= peel_bound - 1e-12,
                set: current,
                names: wit.names.clone(),
                pi,
                peel_masses,
                peel_bound,
                reps,
                direction_fractions: fractions,
                independence,
            });
            progressed = true;
        }
        if !progressed || remaining.is_empty() {
            break;
        }
        let mut chi = vec![0.0; n];
        for &x in &remaining {
            chi[x] = 1.0;
        }
        estimate = mass_estimate(&t.restrict(&chi, &[])?, space, dict, mass_cfg)?;
        if estimate.lower_total == 0.0 {
            break;
        }
    }
    let coverage_defect = remaining.iter().map(|&x| mass[x]).sum();
    let partition: Vec<Vec<usize>> = pieces.iter().map(|p| p.set.clone()).collect();
    let mut covered_mass = vec![0.0; n];
    for set in &partition {
        for &x in set {
            covered_mass[x] = mass[x];
        }
    }
    let glued = (0..cones.len())
        .map(|c| {
            let reps: Vec<AlbertiRep> = pieces.iter().map(|p| p.reps[c].clone()).collect();
            glue(&reps, &partition, &covered_mass)
        })
        .collect::<Result<_>>()?;
    Ok(AlbertiDecomposition { pieces, mass, coverage_defect, glued, rounds })
}

/// `min_x |det(D_i π_j(x))|` for the derivations of the axis representations on `set`.
fn axis_independence(
    mass: &[f64],
    set: &[usize],
    pi: &[Vec<f64>],
    family: &[Fragment],
    space: &MetricSpace,
) -> Result<f64> {
    let k = pi.len();
    let mut ds = Vec::with_capacity(k);
    for i in 0..k {
        let mut axis = vec![0.0; k];
        axis[i] = 1.0;
        let dir = DirectionSpec::constant(pi.to_vec(), Cone::new(axis, std::f64::consts::FRAC_PI_4)?)?;
        let split = rainwater_split(mass, set, family, space, Some(&dir), None)?;
        if split.rep.is_empty() {
            return Ok(0.0);
        }
        ds.push(derivation_of(&split.rep, space, f64::INFINITY)?.derivation);
    }
    let acts: Vec<Vec<Vec<f64>>> =
        ds.iter().map(|d| pi.iter().map(|p| d.apply(p)).collect::<Result<Vec<_>>>()).collect::<Result<_>>()?;
    let mut best = f64::INFINITY;
    for &x in set {
        let cols: Vec<Vec<f64>> = (0..k).map(|j| (0..k).map(|i| acts[i][j][x]).collect()).collect();
        best = best.min(canonical_det(&cols).abs());
    }
    Ok(if best.is_finite() { best } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::currents::FragmentTerm;
    use crate::exterior::KVector;
    use crate::fixtures::{self, Fixture};
    use std::f64::consts::FRAC_PI_4;
    use std::sync::Arc;

    fn seg_rep() -> AlbertiRep {
        AlbertiRep::new(vec![fixtures::seg_fragment()], vec![1.0], vec![vec![0.5, 0.5]]).unwrap()
    }

    fn axis_family(g: &Fixture) -> Vec<Fragment> {
        let mut fam: Vec<Fragment> = fixtures::grid_dx(g).carrier().iter().map(|e| e.fragment.clone()).collect();
        fam.extend(fixtures::grid_dy(g).carrier().iter().map(|e| e.fragment.clone()));
        fam
    }

    fn block(n: usize) -> Vec<usize> {
        (0..n * n).filter(|p| p % n != n - 1 && p / n != n - 1).collect()
    }

    fn masked(mu: &[f64], set: &[usize]) -> Vec<f64> {
        (0..mu.len()).map(|x| if set.contains(&x) { mu[x] } else { 0.0 }).collect()
    }

    fn xy(g: &Fixture) -> Vec<Vec<f64>> {
        vec![g.space.coordinate(0).unwrap(), g.space.coordinate(1).unwrap()]
    }

    #[test]
    fn validate_examples() {
        let seg = fixtures::seg();
        let r = validate(&seg_rep(), &seg.mu.weights, 1e-12);
        assert!(r.ok && r.max_defect == 0.0);

        let space = MetricSpace::line(&[0.0, 1.0]).unwrap();
        let stall = Fragment::new(vec![0.0, 0.5, 1.5], vec![0, 0, 1]).unwrap();
        let bad = AlbertiRep::new(vec![stall], vec![1.0], vec![vec![0.2, 1.0]]).unwrap();
        let r = validate(&bad, &[1.2, 0.0], 1e-12);
        let _ = space;
        assert_eq!(r.ac_violations, vec![(0, 0)]);
        assert!(!r.ok);

        let mut short = seg_rep();
        short.p = vec![0.9];
        let r = validate(&short, &[0.45, 0.45, 0.0], 1e-12);
        assert!(r.decomposition_ok && !r.p_ok && !r.ok);
    }

    #[test]
    fn restrict_and_glue() {
        let seg = fixtures::seg();
        let all = restrict(&seg_rep(), &[0, 1, 2]);
        assert_eq!(all, seg_rep());
        assert_eq!(restrict(&seg_rep(), &[]).pushforward(3), vec![0.0; 3]);
        let b = restrict(&seg_rep(), &[1]);
        assert_eq!(b.pushforward(3), vec![0.0, 0.5, 0.0]);
        assert!(validate(&b, &seg.mu.restrict(&[1]).weights, 1e-15).decomposition_ok);

        let one = glue(&[seg_rep()], &[vec![0, 1, 2]], &seg.mu.weights).unwrap();
        assert_eq!(one.pushforward(3), seg_rep().pushforward(3));
        assert_eq!(one.p, vec![1.0]);

        let ab = Fragment::new(vec![0.0, 0.5], vec![0, 1]).unwrap();
        let bc = Fragment::new(vec![0.5, 1.0], vec![1, 2]).unwrap();
        let r1 = AlbertiRep::from_edge_masses(vec![ab], vec![vec![0.5]]).unwrap();
        let r2 = AlbertiRep::from_edge_masses(vec![bc], vec![vec![0.5]]).unwrap();
        let parts = vec![vec![0], vec![1, 2], vec![]];
        let glued = glue(&[r1.clone(), r2.clone(), AlbertiRep::empty()], &parts, &seg.mu.weights).unwrap();
        assert!(validate(&glued, &seg.mu.weights, 1e-15).ok);
        let x = vec![seg.space.coordinate(0).unwrap()];
        let dir = DirectionSpec::constant(x, Cone::new(vec![1.0], FRAC_PI_4).unwrap()).unwrap();
        for (piece, rep) in parts.iter().zip([&r1, &r2]) {
            let back = restrict(&glued, piece);
            assert_eq!(back.pushforward(3), rep.pushforward(3));
            assert!(check_direction(&back, &dir).certified);
        }
        assert!(matches!(
            glue(&[r1, r2], &[vec![0, 1], vec![1, 2]], &seg.mu.weights),
            Err(Error::OverlappingPartition(1))
        ));
    }

    #[test]
    fn direction_and_speed_checks() {
        let g = fixtures::grid(4);
        let cols: Vec<usize> = (0..16).filter(|p| p % 4 != 3).collect();
        let mu = masked(&g.mu.weights, &cols);
        let fam: Vec<Fragment> = fixtures::grid_dx(&g).carrier().iter().map(|e| e.fragment.clone()).collect();
        let rep = construct_by_lp(&mu, &fam, &g.space, None, None, 1e-12).unwrap();
        assert!(validate(&rep, &mu, 1e-12).ok);
        let e1 = DirectionSpec::constant(xy(&g), Cone::new(vec![1.0, 0.0], FRAC_PI_4).unwrap()).unwrap();
        let e2 = DirectionSpec::constant(xy(&g), Cone::new(vec![0.0, 1.0], FRAC_PI_4).unwrap()).unwrap();
        assert_eq!(check_direction(&rep, &e1).fraction, 1.0);
        assert_eq!(check_direction(&rep, &e2).fraction, 0.0);
        assert_eq!(check_direction(&AlbertiRep::empty(), &e2).fraction, 1.0);

        let x = g.space.coordinate(0).unwrap();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!(check_speed(&rep, &SpeedSpec::uniform(x.clone(), 0.9, false).unwrap(), &g.space).certified);
        assert!(check_speed(&rep, &SpeedSpec::uniform(x, 0.0, false).unwrap(), &g.space).certified);
        assert_eq!(check_speed(&rep, &SpeedSpec::uniform(neg, 0.5, false).unwrap(), &g.space).fraction, 0.0);
    }

    #[test]
    fn rainwater_examples() {
        let seg = fixtures::seg();
        let split = rainwater_split(&seg.mu.weights, &[0, 1, 2], &[fixtures::seg_fragment()], &seg.space, None, None).unwrap();
        assert_eq!((split.a.clone(), split.s.clone()), (vec![0, 1], vec![2]));
        assert!(split.certificate.holds());
        assert!(validate(&split.rep, &seg.mu.weights, 1e-12).ok);

        let none = rainwater_split(&seg.mu.weights, &[0, 1, 2], &[], &seg.space, None, None).unwrap();
        assert!(none.a.is_empty() && none.s == vec![0, 1, 2] && none.rep.is_empty());

        let g = fixtures::grid(3);
        let fam: Vec<Fragment> = fixtures::grid_dx(&g).carrier().iter().map(|e| e.fragment.clone()).collect();
        let split = rainwater_split(&g.mu.weights, &[0, 2, 4], &fam, &g.space, None, None).unwrap();
        assert_eq!(split.s, vec![2]);
        assert!(split.certificate.covers(&[2]));
    }

    #[test]
    fn null_sets_match_lp_feasibility() {
        // S meets the support of μ exactly when the LP construction fails.
        let g = fixtures::grid(4);
        let fam = axis_family(&g);
        let e1 = DirectionSpec::constant(xy(&g), Cone::new(vec![1.0, 0.0], FRAC_PI_4).unwrap()).unwrap();
        for set in [block(4), (0..16).collect::<Vec<_>>()] {
            let mu = masked(&g.mu.weights, &set);
            let split = rainwater_split(&mu, &set, &fam, &g.space, Some(&e1), None).unwrap();
            let s_charged = split.s.iter().any(|&x| mu[x] > 0.0);
            let built = construct_by_lp(&mu, &fam, &g.space, Some(&e1), None, 0.0);
            assert_eq!(s_charged, built.is_err());
        }
    }

    #[test]
    fn cone_refine_examples() {
        let g = fixtures::grid(4);
        let ds = [fixtures::grid_dx(&g), fixtures::grid_dy(&g)];
        let v = block(4);
        let r = cone_refine(&g.mu.weights, &v, &ds, &xy(&g), &[1.0, 0.0], FRAC_PI_4, 0.9, &[], &g.space, 1e-12).unwrap();
        for &x in &v {
            assert!((r.speed_bound[x] - 0.9 / 1.1).abs() < 1e-9);
        }
        assert!(r.direction.certified && r.speed.certified);
        assert!(validate(&r.rep, &masked(&g.mu.weights, &v), 1e-12).ok);

        let h = 1.0 / 3.0;
        let diagonals: Vec<Fragment> = v
            .iter()
            .map(|&p| Fragment::uniform(vec![p, p + 5], h * 2f64.sqrt()).unwrap())
            .collect();
        let w = [1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()];
        let r = cone_refine(&g.mu.weights, &v, &ds, &xy(&g), &w, FRAC_PI_4, 0.9, &diagonals, &g.space, 1e-12).unwrap();
        assert!(r.direction.certified && r.speed.certified);
        assert!(r.rep.fragments.iter().all(|f| f.trace[1] == f.trace[0] + 5));

        let r = cone_refine(&g.mu.weights, &v, &ds, &xy(&g), &[1.0, 0.0], FRAC_PI_4, 1e-6, &[], &g.space, 1e-12).unwrap();
        assert!(r.speed_bound.iter().all(|&s| s < 1e-5));
        let off_block: Vec<usize> = (0..16).collect();
        assert!(matches!(
            cone_refine(&g.mu.weights, &off_block, &ds, &xy(&g), &[1.0, 0.0], FRAC_PI_4, 0.9, &[], &g.space, 1e-12),
            Err(Error::PseudodualPrecondition(_))
        ));
    }

    #[test]
    fn cone_null_examples() {
        let g = fixtures::grid(4);
        let dict = fixtures::dictionary(&g.space);
        let column = Fragment::uniform(vec![0, 4, 8, 12], 1.0 / 3.0).unwrap();
        let t = Current::curve(column.clone(), 16).unwrap();
        let x = g.space.coordinate(0).unwrap();
        let dir = DirectionSpec::constant(vec![x.clone()], Cone::new(vec![1.0], FRAC_PI_4).unwrap()).unwrap();
        let delta = 0.3;
        let spd = SpeedSpec::uniform(x.clone(), delta, false).unwrap();
        let k = vec![0, 4, 8];
        let mu: Vec<f64> = (0..16).map(|p| if k.contains(&p) { 1.0 / 3.0 } else { 0.0 }).collect();
        let split = rainwater_split(&mu, &k, &[column], &g.space, Some(&dir), Some(&spd)).unwrap();
        assert_eq!(split.s, k);
        let b = cone_null_estimate(&t, &k, &[&x], delta, FRAC_PI_4, Some(&split.certificate), &g.space, &dict).unwrap();
        assert_eq!(b.value, 0.0);
        assert!(b.within_delta_mass);
        assert!((b.edge_mass - 1.0).abs() < 1e-12 && b.transverse == 0.0);
        assert!((b.bound - delta * b.edge_mass - b.resolution_slack).abs() < 1e-12);
        assert!(b.value <= b.bound);
        let b1 = cone_null_estimate(&t, &k, &[&x], 1.0, FRAC_PI_4, Some(&split.certificate), &g.space, &dict).unwrap();
        assert!(b1.value <= b1.mass_upper);
        let empty = cone_null_estimate(&t, &[], &[&x], delta, FRAC_PI_4, None, &g.space, &dict).unwrap();
        assert_eq!(empty.bound, 0.0);
        assert!(matches!(
            cone_null_estimate(&t, &k, &[&x], delta, FRAC_PI_4, None, &g.space, &dict),
            Err(Error::MissingCertificate)
        ));
    }

    #[test]
    fn bilipschitz_pieces() {
        let seg = fixtures::seg();
        let back = Fragment::new(vec![0.0, 1.0, 2.0], vec![0, 2, 1]).unwrap();
        let pieces = bilipschitz_refine(&back, &seg.space, 0.1).unwrap();
        assert_eq!(pieces.len(), 2);
        let straight = bilipschitz_refine(&fixtures::seg_fragment().scale_time(3.0), &seg.space, 0.1).unwrap();
        assert_eq!(straight.len(), 1);
        assert!((straight[0].domain[2] - straight[0].domain[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn derivation_of_examples() {
        let g = fixtures::grid(4);
        let cols: Vec<usize> = (0..16).filter(|p| p % 4 != 3).collect();
        let mu = masked(&g.mu.weights, &cols);
        let fam: Vec<Fragment> = fixtures::grid_dx(&g).carrier().iter().map(|e| e.fragment.clone()).collect();
        let rep = construct_by_lp(&mu, &fam, &g.space, None, None, 1e-12).unwrap();
        let d = derivation_of(&rep, &g.space, 1.0).unwrap();
        assert!(d.norm_ok);
        let dx = fixtures::grid_dx(&g);
        for f in xy(&g) {
            let (a, b) = (d.derivation.apply(&f).unwrap(), dx.apply(&f).unwrap());
            assert!(a.iter().zip(&b).all(|(u, v)| (u - v).abs() < 1e-12));
        }
        let cone = ConeField::constant(Cone::new(vec![1.0, 0.0], FRAC_PI_4).unwrap(), 16);
        assert!(derivation_in_cone(&d.derivation, &xy(&g), &cone, &cols).unwrap());
        let z = derivation_of(&AlbertiRep::empty(), &g.space, 1.0).unwrap();
        assert!(z.derivation.is_zero());
    }

    #[test]
    fn pipeline_examples() {
        let g = fixtures::grid(4);
        let dict = fixtures::coordinate_dictionary(&g.space);
        let basis: Arc<[Derivation]> = vec![fixtures::grid_dx(&g), fixtures::grid_dy(&g)].into();
        let t = Current::precurrent(KVector::simple(basis, vec![0, 1], vec![1.0; 16]).unwrap(), g.mu.weights.clone()).unwrap();
        let th: f64 = 0.3;
        let cones = vec![
            Cone::new(vec![1.0, 0.0], FRAC_PI_4).unwrap(),
            Cone::new(vec![0.0, 1.0], FRAC_PI_4).unwrap(),
            Cone::new(vec![th.cos(), th.sin()], FRAC_PI_4).unwrap(),
        ];
        let dec = current_to_alberti(&t, &cones, &axis_family(&g), &g.space, &dict, &PipelineConfig::default()).unwrap();
        assert!(dec.coverage_defect <= 1e-9);
        assert_eq!(dec.pieces.len(), 1);
        let piece = &dec.pieces[0];
        assert_eq!(piece.names, vec!["x".to_string(), "y".to_string()]);
        assert_eq!(piece.set, block(4));
        assert!(piece.direction_fractions.iter().all(|&f| f == 1.0));
        assert!(piece.peel_ok);
        assert!(piece.independence > 0.5);
        for rep in &dec.glued {
            assert!(validate(rep, &masked(&dec.mass, &block(4)), 1e-12).ok);
        }

        // With anchor distances the middle point's best tuple admits no axis-cone edge.
        let full = fixtures::dictionary(&g.space);
        let dec = current_to_alberti(&t, &cones, &axis_family(&g), &g.space, &full, &PipelineConfig::default()).unwrap();
        assert!((dec.coverage_defect - dec.mass[8]).abs() < 1e-12);

        let seg = fixtures::seg();
        let sd = fixtures::dictionary(&seg.space);
        let st = Current::curve(fixtures::seg_fragment(), 3).unwrap();
        let cone = [Cone::new(vec![1.0], FRAC_PI_4).unwrap()];
        let dec = current_to_alberti(&st, &cone, &[fixtures::seg_fragment()], &seg.space, &sd, &PipelineConfig::default()).unwrap();
        assert_eq!(dec.pieces.len(), 1);
        assert_eq!(dec.glued[0].fragments, vec![fixtures::seg_fragment()]);

        let zero = Current::fragments(3, vec![FragmentTerm::unit(fixtures::seg_fragment(), 0.0)]).unwrap();
        assert!(matches!(
            current_to_alberti(&zero, &cone, &[], &seg.space, &sd, &PipelineConfig::default()),
            Err(Error::ZeroCurrent)
        ));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        #[test]
        fn glue_of_restrictions_reproduces_pushforward(seed in 0u64..1000, cut in 1usize..15) {
            use rand::{Rng, SeedableRng};
            let g = fixtures::grid(4);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let fam = axis_family(&g);
            let masses: Vec<Vec<f64>> = fam.iter().map(|f| (0..f.n_pairs()).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
            let rep = AlbertiRep::from_edge_masses(fam, masses).unwrap();
            let mu = rep.pushforward(16);
            let parts = vec![(0..cut).collect::<Vec<_>>(), (cut..16).collect()];
            let pieces: Vec<AlbertiRep> = parts.iter().map(|u| restrict(&rep, u)).collect();
            let glued = glue(&pieces, &parts, &mu).unwrap();
            let back = glued.pushforward(16);
            for x in 0..16 {
                proptest::prop_assert!((back[x] - mu[x]).abs() <= 1e-12 * mu[x].max(1.0));
            }
        }

        #[test]
        fn rainwater_certificate_is_exhaustive(mask in 1u32..(1 << 16), theta in 0.0f64..6.28) {
            let g = fixtures::grid(4);
            let b: Vec<usize> = (0..16).filter(|x| mask & (1 << x) != 0).collect();
            let mu = masked(&g.mu.weights, &b);
            let dir = DirectionSpec::constant(xy(&g), Cone::new(vec![theta.cos(), theta.sin()], FRAC_PI_4).unwrap()).unwrap();
            let split = rainwater_split(&mu, &b, &axis_family(&g), &g.space, Some(&dir), None).unwrap();
            proptest::prop_assert!(split.certificate.exhaustive);
            proptest::prop_assert!(split.certificate.holds());
            proptest::prop_assert!(validate(&split.rep, &masked(&mu, &split.a), 1e-9).decomposition_ok);
        }
    }
}
