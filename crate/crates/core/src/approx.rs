//! Normal forms of Alberti representations, normal derivations, vector-field directions
//! and approximation of 1-currents by normal currents.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::alberti::{derivation_of, validate, AlbertiRep, DirectionSpec, SpeedSpec};
use crate::currents::{flow_decompose, is_normal, mass_k1, Current, FragmentTerm};
use crate::derivations::Derivation;
use crate::error::{Error, Result};
use crate::fragments::{fill_fragment, FillMode, Fragment};
use crate::lp;
use crate::space::{lip_constant, FnDict, MetricSpace};

/// Representation whose fragments are filled curves on `[0, 1]` with `ν = h · Leb`.
#[derive(Debug, Clone)]
pub struct NormalForm {
    pub rep: AlbertiRep,
    /// The input space, extended by virtual points when filling in `Virtual` mode.
    pub space: MetricSpace,
    pub mu: Vec<f64>,
    /// `h` per curve edge; zero on filled gaps.
    pub density: Vec<Vec<f64>>,
    /// Indices of the original pairs that were gaps, per fragment.
    pub filled_gaps: Vec<Vec<usize>>,
    /// For virtual points, the gap endpoints and the interpolation parameter.
    pub origin: Vec<Option<(usize, usize, f64)>>,
    /// Smallest and largest edge speed of each curve.
    pub speeds: Vec<(f64, f64)>,
    /// Each curve's speed ratio is at least `σ / glip(g)`, filled gaps included.
    pub speed_ok: bool,
}

impl NormalForm {
    /// Extends a function on the input space to the filled space, linearly along gaps.
    pub fn extend(&self, f: &[f64]) -> Vec<f64> {
        self.origin
            .iter()
            .enumerate()
            .map(|(x, o)| match *o {
                None => f[x],
                Some((p, q, s)) => (1.0 - s) * f[p] + s * f[q],
            })
            .collect()
    }
}

/// Fills every gap of every fragment affinely and rescales time to `[0, 1]`, keeping each
/// edge's measure. Gap directions are certified from the gap endpoints, which is exact for
/// functions linear in the coordinates.
pub fn curves_normal_form(
    rep: &AlbertiRep,
    space: &MetricSpace,
    direction: Option<&DirectionSpec>,
    speed: Option<&SpeedSpec>,
    mode: FillMode,
) -> Result<NormalForm> {
    if space.coords().is_none() {
        return Err(Error::MissingCoords);
    }
    let n = space.len();
    for f in &rep.fragments {
        f.check_in(space)?;
    }
    let report = validate(rep, &rep.pushforward(n), 0.0);
    if !report.ac_violations.is_empty() {
        return Err(Error::InvalidRepresentation(format!(
            "{} absolute-continuity violations",
            report.ac_violations.len()
        )));
    }
    let ratio_floor = match speed {
        Some(s) => {
            let glip = lip_constant(&s.g, space)?;
            let sigma = s.sigma.iter().copied().fold(f64::INFINITY, f64::min);
            if glip > 0.0 { sigma / glip } else { 0.0 }
        }
        None => 0.0,
    };
    let mut out_space = space.clone();
    let mut origin: Vec<Option<(usize, usize, f64)>> = vec![None; n];
    let mut fragments = Vec::with_capacity(rep.fragments.len());
    let mut nus = Vec::with_capacity(rep.fragments.len());
    let mut density = Vec::with_capacity(rep.fragments.len());
    let mut filled_gaps = Vec::with_capacity(rep.fragments.len());
    let mut speeds = Vec::with_capacity(rep.fragments.len());
    let mut speed_ok = true;
    for (j, (frag, nu)) in rep.fragments.iter().zip(&rep.nu).enumerate() {
        let gaps: Vec<usize> = (0..frag.n_pairs()).filter(|&i| !frag.is_edge(i)).collect();
        for &i in &gaps {
            let (p, q) = (frag.trace[i], frag.trace[i + 1]);
            if let Some(d) = direction {
                let v: Vec<f64> = d.f.iter().map(|f| f[q] - f[p]).collect();
                if !d.cone.cones[p].contains(&v)? {
                    return Err(Error::DirectionLost { fragment: j, gap: i });
                }
            }
            if let Some(s) = speed {
                let rise = s.g[q] - s.g[p];
                let need = s.sigma[p] * space.dist(p, q);
                if rise < need || (s.strict && rise == need) {
                    speed_ok = false;
                }
            }
        }
        let before = out_space.len();
        let filled = fill_fragment(frag, &out_space, frag.max_gap, mode)?;
        out_space = filled.space;
        origin.resize(out_space.len(), None);
        let curve_nu_len = filled.curve.n_pairs();
        let mut new_nu = vec![0.0; curve_nu_len];
        for i in 0..frag.n_pairs() {
            let (a, b) = (filled.index_map[i], filled.index_map[i + 1]);
            if filled.inserted[i] == 0 {
                if frag.is_edge(i) {
                    new_nu[a] = nu[i];
                }
                continue;
            }
            let (u, v) = (frag.domain[i], frag.domain[i + 1]);
            for c in (a + 1)..b {
                let pt = filled.curve.trace[c];
                if pt >= before && origin[pt].is_none() {
                    let s = (filled.curve.domain[c] - u) / (v - u);
                    origin[pt] = Some((frag.trace[i], frag.trace[i + 1], s));
                }
            }
        }
        let curve = filled.curve.to_unit_interval();
        let h: Vec<f64> = (0..curve.n_pairs()).map(|e| new_nu[e] / curve.dt(e)).collect();
        let md: Vec<f64> = (0..curve.n_pairs()).map(|e| curve.edge_speed(&out_space, e)).collect();
        let lo = md.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = md.iter().copied().fold(0.0, f64::max);
        if speed.is_some() && curve.n_pairs() > 0 && lo < ratio_floor * hi * (1.0 - 1e-12) {
            speed_ok = false;
        }
        speeds.push(if curve.n_pairs() == 0 { (0.0, 0.0) } else { (lo, hi) });
        fragments.push(curve);
        nus.push(new_nu);
        density.push(h);
        filled_gaps.push(gaps);
    }
    let mut out = AlbertiRep::new(fragments, rep.p.clone(), nus)?;
    out.notes = rep.notes.clone();
    out.notes.push("curves normal form".into());
    let mu = out.pushforward(out_space.len());
    Ok(NormalForm { rep: out, space: out_space, mu, density, filled_gaps, origin, speeds, speed_ok })
}

/// `D = λ D_N` with `N = Σ P [γ]` built from a representation in curves normal form.
#[derive(Debug, Clone)]
pub struct NormalDerivation {
    pub derivation: Derivation,
    pub n: Current,
    /// `λ(x) = D f(x) μ(x) / N(χ_x, f)`, the same for every dictionary `f`.
    pub lambda: Vec<f64>,
    /// `‖∂N‖(X)`.
    pub boundary_tv: f64,
    /// `Σ P` over open curves, doubled.
    pub open_boundary: f64,
    pub residual: f64,
    pub normal: bool,
}

/// `Σ |w|` of the point masses of `∂T` for a 1-current.
pub fn boundary_total_variation(t: &Current) -> Result<f64> {
    let n = t.n();
    let b = t.boundary();
    let mut total = 0.0;
    let mut chi = vec![0.0; n];
    for x in 0..n {
        chi[x] = 1.0;
        total += b.evaluate(&chi, &[])?.abs();
        chi[x] = 0.0;
    }
    Ok(total)
}

pub fn normal_derivation_from_rep(
    rep: &AlbertiRep,
    space: &MetricSpace,
    dict: &FnDict,
    tol: f64,
) -> Result<NormalDerivation> {
    let n = space.len();
    let terms: Vec<FragmentTerm> =
        rep.fragments.iter().zip(&rep.p).map(|(f, &p)| FragmentTerm::unit(f.clone(), p)).collect();
    let current = Current::fragments(n, terms)?;
    let derivation = derivation_of(rep, space, f64::INFINITY)?.derivation;
    let mu = rep.pushforward(n);
    let mut lambda = vec![0.0; n];
    let mut chi = vec![0.0; n];
    for x in 0..n {
        if mu[x] == 0.0 {
            continue;
        }
        chi[x] = 1.0;
        let coeffs = current.linear_in_last(&chi, &[])?;
        chi[x] = 0.0;
        let mut ratios = Vec::new();
        for f in dict.fns.iter().skip(1) {
            let a = derivation.apply_at(&f.values, x) * mu[x];
            let b: f64 = coeffs.iter().zip(&f.values).map(|(c, v)| c * v).sum();
            let scale = a.abs().max(b.abs()).max(1e-300);
            if b.abs() <= tol * scale.max(1.0) {
                if a.abs() > tol {
                    return Err(Error::RatioInconsistent { point: x, spread: f64::INFINITY });
                }
                continue;
            }
            ratios.push(a / b);
        }
        if ratios.is_empty() {
            continue;
        }
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo > tol * hi.abs().max(1.0) {
            return Err(Error::RatioInconsistent { point: x, spread: hi - lo });
        }
        if lo < -tol {
            return Err(Error::RatioInconsistent { point: x, spread: -lo });
        }
        lambda[x] = (0.5 * (lo + hi)).max(0.0);
    }
    let boundary_tv = boundary_total_variation(&current)?;
    let open_boundary: f64 = rep
        .fragments
        .iter()
        .zip(&rep.p)
        .filter(|(f, _)| f.trace.first() != f.trace.last())
        .map(|(_, p)| 2.0 * p)
        .sum();
    let residual = flow_decompose(&current, space, tol)?.residual;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let normal = is_normal(&current, space, dict, 8, &mut rng, boundary_tv + 1e-9)?.normal;
    Ok(NormalDerivation { derivation, n: current, lambda, boundary_tv, open_boundary, residual, normal })
}

/// An edge where `(F∘γ)'` is not a positive multiple of `DF`.
#[derive(Debug, Clone, PartialEq)]
pub struct FailEdge {
    pub path: usize,
    pub edge: usize,
    pub point: usize,
    /// Separating coordinate test `(i, s)`: `s (F_i∘γ)' > 0 ≥ s DF_i`. `None` when
    /// `(F∘γ)' = 0`.
    pub test: Option<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct VectorfieldRep {
    pub rep: AlbertiRep,
    pub measure: Vec<f64>,
    /// Points where `DF = 0`.
    pub null_set: Vec<usize>,
    /// Curve pieces before the direction test, unit-Lipschitz.
    pub pieces: Vec<Fragment>,
    /// `(F∘γ)' / DF` along each edge of each piece (zero on failing edges).
    pub lambda: Vec<Vec<f64>>,
    pub fail_mass: f64,
    pub fail_edges: Vec<FailEdge>,
    pub certified: bool,
}

impl VectorfieldRep {
    pub fn certify(self, tol: f64) -> Result<Self> {
        if self.fail_mass > tol {
            return Err(Error::FailMass { mass: self.fail_mass, tol });
        }
        Ok(self)
    }
}

/// Decomposes the normal current of `nd` into paths and keeps the edges moving in the
/// direction of `DF`. Edges failing by more than `angle_tol` make up the fail mass.
pub fn vectorfield_direction_rep(
    nd: &NormalDerivation,
    f: &[Vec<f64>],
    space: &MetricSpace,
    tol: f64,
    angle_tol: f64,
) -> Result<VectorfieldRep> {
    let n = space.len();
    if f.is_empty() {
        return Err(Error::ArityMismatch { expected: 1, got: 0 });
    }
    let dec = flow_decompose(&nd.n, space, tol)?;
    if dec.residual > tol {
        return Err(Error::Residual { residual: dec.residual, tol });
    }
    let cols = f.iter().map(|fi| nd.derivation.apply(fi)).collect::<Result<Vec<_>>>()?;
    let df: Vec<Vec<f64>> = (0..n).map(|x| cols.iter().map(|c| c[x]).collect()).collect();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let null_set: Vec<usize> = (0..n).filter(|&x| norm(&df[x]) <= tol).collect();
    let keep: Vec<usize> = (0..n).filter(|x| !null_set.contains(x)).collect();
    let mut pieces = Vec::new();
    let mut masses = Vec::new();
    let mut lambda = Vec::new();
    let mut fail_edges = Vec::new();
    let mut fail_mass = 0.0;
    for (path, w) in &dec.paths {
        let oriented = if *w < 0.0 { path.reversed() } else { path.clone() };
        for (piece, _) in oriented.restrict_edges_to_set(&keep) {
            let Ok(unit) = piece.reparametrize_unit(space) else { continue };
            let idx = pieces.len();
            let mut m = vec![0.0; unit.n_pairs()];
            let mut lam = vec![0.0; unit.n_pairs()];
            for e in unit.edges() {
                let x = unit.trace[e];
                let mass = w.abs() * piece.dt(e);
                let v: Vec<f64> = f.iter().map(|fi| unit.edge_derivative(fi, e)).collect();
                let (nv, nd_) = (norm(&v), norm(&df[x]));
                let dot: f64 = v.iter().zip(&df[x]).map(|(a, b)| a * b).sum();
                let angle = if nv > 0.0 { (dot / (nv * nd_)).clamp(-1.0, 1.0).acos() } else { f64::INFINITY };
                if angle <= angle_tol {
                    m[e] = mass;
                    lam[e] = dot / (nd_ * nd_);
                } else {
                    fail_mass += mass;
                    let test = if nv == 0.0 {
                        None
                    } else {
                        (0..f.len())
                            .map(|i| (i, v[i] / nv - df[x][i] / nd_))
                            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                            .map(|(i, d)| (i, d.signum()))
                    };
                    fail_edges.push(FailEdge { path: idx, edge: e, point: x, test });
                }
            }
            pieces.push(unit);
            masses.push(m);
            lambda.push(lam);
        }
    }
    let rep = AlbertiRep::from_edge_masses(pieces.clone(), masses)?;
    let measure = rep.pushforward(n);
    // `from_edge_masses` drops massless pieces; keep `lambda` aligned with `pieces`.
    Ok(VectorfieldRep { rep, measure, null_set, pieces, lambda, fail_mass, certified: fail_mass <= tol, fail_edges })
}

#[derive(Debug, Clone)]
pub struct ApproxConfig {
    /// Tents with `2^(base_level + i)` intervals per axis at step `i`.
    pub base_level: usize,
    pub max_iter: usize,
    /// Target for the last error.
    pub eps: f64,
    /// Optional Lipschitz cap on the fitted density.
    pub lip_cap: Option<f64>,
    /// Filled positions must lie this close to existing points.
    pub snap_tol: f64,
    pub seed: u64,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        ApproxConfig { base_level: 1, max_iter: 3, eps: 1e-3, lip_cap: None, snap_tol: 1e-9, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct ApproxStep {
    pub level: usize,
    pub intervals: usize,
    /// `Σ |w| ∫ |h − g∘γ| dt`.
    pub fit_residual: f64,
    /// `Σ |w| Σ_e d(γ_e, γ_{e+1}) |h_e − g(γ_e)|`, an upper bound of `‖T − N_n‖(X)`.
    pub error: f64,
    pub g: Vec<f64>,
    pub current: Current,
    pub boundary_tv: f64,
    pub normal: bool,
}

#[derive(Debug, Clone)]
pub struct NormalApproxReport {
    pub steps: Vec<ApproxStep>,
    pub errors: Vec<f64>,
    pub mass: f64,
    /// The filled curves carrying every `N_n`, and the gaps filled in each.
    pub curves: Vec<Fragment>,
    pub filled_gaps: Vec<Vec<usize>>,
    pub target: f64,
    pub reached: bool,
}

impl NormalApproxReport {
    pub fn final_error(&self) -> f64 {
        self.errors.last().copied().unwrap_or(0.0)
    }

    pub fn check(&self) -> Result<()> {
        if !self.reached {
            return Err(Error::FitFailed { achieved: self.final_error(), target: self.target });
        }
        Ok(())
    }
}

struct FitRow {
    point: usize,
    target: f64,
    /// Weight in the L¹ fit (`Σ |w| d` over edges) and in the curve-time residual (`Σ |w| dt`).
    weight: f64,
    time: f64,
}

/// Approximates `T = Σ w [γ]_ν` by `N_n = Σ w [γ̄]_{g_n Leb}` where `γ̄` fills the gaps of `γ`
/// and `g_n` is an L¹ fit of the density `h = dν/dt` over multilinear tents of increasing
/// resolution.
pub fn approximate_by_normal(
    t: &Current,
    space: &MetricSpace,
    dict: &FnDict,
    cfg: &ApproxConfig,
) -> Result<NormalApproxReport> {
    let n = space.len();
    let empty = |mass: f64| NormalApproxReport {
        steps: Vec::new(),
        errors: Vec::new(),
        mass,
        curves: Vec::new(),
        filled_gaps: Vec::new(),
        target: cfg.eps,
        reached: true,
    };
    let terms = match t {
        Current::Zero { k: 1, .. } => return Ok(empty(0.0)),
        Current::FragmentSum { terms, .. } => terms,
        _ => return Err(Error::UnsupportedForm("a fragment-sum 1-current")),
    };
    if t.n() != n {
        return Err(Error::LengthMismatch { expected: n, got: t.n() });
    }
    let coords = space.coords().ok_or(Error::MissingCoords)?;
    let mass: f64 = mass_k1(t, space)?.iter().sum();
    if !mass.is_finite() {
        return Err(Error::InvalidArgument("current is not local".into()));
    }
    let live: Vec<&FragmentTerm> = terms.iter().filter(|s| s.weight != 0.0 && s.nu.iter().any(|&v| v != 0.0)).collect();
    if live.is_empty() {
        return Ok(empty(mass));
    }
    let mut curves = Vec::new();
    let mut filled_gaps = Vec::new();
    let mut weights = Vec::new();
    let mut rows: Vec<FitRow> = Vec::new();
    for term in &live {
        let frag = &term.fragment;
        let filled = fill_fragment(frag, space, frag.max_gap, FillMode::Snap { tol: cfg.snap_tol })?;
        let curve = filled.curve;
        let mut h = vec![0.0; curve.n_pairs()];
        for i in 0..frag.n_pairs() {
            if filled.inserted[i] == 0 && frag.is_edge(i) {
                let e = filled.index_map[i];
                h[e] = term.nu[i] / curve.dt(e);
            }
        }
        for e in 0..curve.n_pairs() {
            let d = space.dist(curve.trace[e], curve.trace[e + 1]);
            rows.push(FitRow {
                point: curve.trace[e],
                target: h[e],
                weight: term.weight.abs() * d,
                time: term.weight.abs() * curve.dt(e),
            });
        }
        filled_gaps.push((0..frag.n_pairs()).filter(|&i| !frag.is_edge(i)).collect());
        curves.push(curve);
        weights.push(term.weight);
    }
    let dim = coords[0].len();
    let lo: Vec<f64> = (0..dim).map(|a| coords.iter().map(|c| c[a]).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..dim).map(|a| coords.iter().map(|c| c[a]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let mut steps: Vec<ApproxStep> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for it in 0..cfg.max_iter {
        let level = cfg.base_level + it;
        let intervals = 1usize << level;
        let basis = TentBasis::new(&lo, &hi, intervals)?;
        let g = fit_density(&rows, &basis, coords, space, cfg.lip_cap)?;
        let (error, fit_residual) = rows.iter().fold((0.0, 0.0), |(e, r), row| {
            let dev = (row.target - g[row.point]).abs();
            (e + row.weight * dev, r + row.time * dev)
        });
        let nterms: Vec<FragmentTerm> = curves
            .iter()
            .zip(&weights)
            .map(|(c, &w)| {
                let nu = (0..c.n_pairs()).map(|e| g[c.trace[e]] * c.dt(e)).collect();
                FragmentTerm { fragment: c.clone(), nu, weight: w }
            })
            .collect();
        let current = Current::fragments(n, nterms)?;
        let boundary_tv = boundary_total_variation(&current)?;
        let normal = is_normal(&current, space, dict, 8, &mut rng, boundary_tv + 1e-9)?.normal;
        let done = error <= 1e-12;
        steps.push(ApproxStep { level, intervals, fit_residual, error, g, current, boundary_tv, normal });
        if done {
            break;
        }
    }
    let errors: Vec<f64> = steps.iter().map(|s| s.error).collect();
    let reached = errors.last().is_some_and(|&e| e <= cfg.eps);
    Ok(NormalApproxReport { steps, errors, mass, curves, filled_gaps, target: cfg.eps, reached })
}

/// Multilinear tents on a regular grid over a bounding box.
struct TentBasis {
    lo: Vec<f64>,
    width: Vec<f64>,
    intervals: usize,
}

impl TentBasis {
    fn new(lo: &[f64], hi: &[f64], intervals: usize) -> Result<Self> {
        let count = (intervals + 1).checked_pow(lo.len() as u32).unwrap_or(usize::MAX);
        if count > 1 << 16 {
            return Err(Error::InvalidArgument(format!("{count} tent functions exceed the limit")));
        }
        let width = lo.iter().zip(hi).map(|(a, b)| if b > a { (b - a) / intervals as f64 } else { 1.0 }).collect();
        Ok(TentBasis { lo: lo.to_vec(), width, intervals })
    }

    fn count(&self) -> usize {
        (self.intervals + 1).pow(self.lo.len() as u32)
    }

    /// Nonzero `(node, value)` pairs at a position.
    fn eval(&self, pos: &[f64]) -> Vec<(usize, f64)> {
        let mut out = vec![(0usize, 1.0f64)];
        let mut stride = 1;
        for a in 0..self.lo.len() {
            let u = ((pos[a] - self.lo[a]) / self.width[a]).clamp(0.0, self.intervals as f64);
            let k = (u.floor() as usize).min(self.intervals.saturating_sub(1));
            let s = u - k as f64;
            let mut next = Vec::with_capacity(out.len() * 2);
            for &(node, v) in &out {
                if 1.0 - s != 0.0 {
                    next.push((node + k * stride, v * (1.0 - s)));
                }
                if s != 0.0 {
                    next.push((node + (k + 1) * stride, v * s));
                }
            }
            out = next;
            stride *= self.intervals + 1;
        }
        out
    }

    /// Pairs of nodes adjacent along one axis, with their spacing.
    fn neighbours(&self) -> Vec<(usize, usize, f64)> {
        let m = self.intervals + 1;
        let mut out = Vec::new();
        for node in 0..self.count() {
            let mut stride = 1;
            for a in 0..self.lo.len() {
                if (node / stride) % m + 1 < m {
                    out.push((node, node + stride, self.width[a]));
                }
                stride *= m;
            }
        }
        out
    }
}

/// Least-absolute-deviation fit `min Σ w |h − g(x)|` over the tent span.
fn fit_density(
    rows: &[FitRow],
    basis: &TentBasis,
    coords: &[Vec<f64>],
    space: &MetricSpace,
    lip_cap: Option<f64>,
) -> Result<Vec<f64>> {
    let mut grouped: Vec<(usize, f64, f64)> = Vec::new();
    for r in rows.iter().filter(|r| r.weight > 0.0) {
        match grouped.iter_mut().find(|(p, h, _)| *p == r.point && *h == r.target) {
            Some(g) => g.2 += r.weight,
            None => grouped.push((r.point, r.target, r.weight)),
        }
    }
    let mut pr = Problem::new(OptimizationDirection::Minimize);
    let count = basis.count();
    let vars: Vec<_> = (0..count).map(|_| pr.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY))).collect();
    for &(p, h, w) in &grouped {
        let r = pr.add_var(w, (0.0, f64::INFINITY));
        let phi = basis.eval(&coords[p]);
        let mut up: Vec<_> = phi.iter().map(|&(b, v)| (vars[b], v)).collect();
        up.push((r, -1.0));
        pr.add_constraint(up, ComparisonOp::Le, h);
        let mut down: Vec<_> = phi.iter().map(|&(b, v)| (vars[b], v)).collect();
        down.push((r, 1.0));
        pr.add_constraint(down, ComparisonOp::Ge, h);
    }
    if let Some(cap) = lip_cap {
        for (a, b, wdt) in basis.neighbours() {
            pr.add_constraint([(vars[a], 1.0), (vars[b], -1.0)], ComparisonOp::Le, cap * wdt);
            pr.add_constraint([(vars[a], -1.0), (vars[b], 1.0)], ComparisonOp::Le, cap * wdt);
        }
    }
    let sol = lp::solve(&pr)?;
    let c: Vec<f64> = vars.iter().map(|&v| sol.var_value(v)).collect();
    Ok((0..space.len()).map(|x| basis.eval(&coords[x]).iter().map(|&(b, v)| c[b] * v).sum()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::space::Cone;
    use std::f64::consts::FRAC_PI_4;

    fn line(m: usize) -> MetricSpace {
        let xs: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
        MetricSpace::line(&xs).unwrap()
    }

    fn line_dict(space: &MetricSpace) -> FnDict {
        FnDict::normalized(space, 0, vec![("x".into(), space.coordinate(0).unwrap())]).unwrap()
    }

    fn x_dir(space: &MetricSpace) -> DirectionSpec {
        DirectionSpec::constant(vec![space.coordinate(0).unwrap()], Cone::new(vec![1.0], FRAC_PI_4).unwrap()).unwrap()
    }

    /// `0, 1/4, ·, 3/4, 1` on the five-point line: a hole at the middle point.
    fn holed() -> Fragment {
        Fragment::new(vec![0.0, 0.25, 0.75, 1.0], vec![0, 1, 3, 4]).unwrap().with_max_gap(0.25)
    }

    #[test]
    fn normal_form_examples() {
        let seg = fixtures::seg();
        let rep = AlbertiRep::new(vec![fixtures::seg_fragment()], vec![1.0], vec![vec![0.5, 0.5]]).unwrap();
        let nf = curves_normal_form(&rep, &seg.space, Some(&x_dir(&seg.space)), None, FillMode::Virtual).unwrap();
        assert_eq!(nf.rep.fragments[0].trace, vec![0, 1, 2]);
        assert_eq!(nf.rep.fragments[0].domain, vec![0.0, 0.5, 1.0]);
        assert_eq!(nf.mu, rep.pushforward(3));
        assert_eq!(nf.density[0], vec![1.0, 1.0]);

        let space = line(4);
        let rep = AlbertiRep::new(vec![holed()], vec![1.0], vec![vec![0.25, 0.0, 0.25]]).unwrap();
        let nf = curves_normal_form(&rep, &space, Some(&x_dir(&space)), None, FillMode::Snap { tol: 1e-12 }).unwrap();
        assert_eq!(nf.rep.fragments[0].trace, vec![0, 1, 2, 3, 4]);
        assert_eq!(nf.filled_gaps, vec![vec![1]]);
        assert_eq!(nf.density[0], vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(nf.mu, rep.pushforward(5));

        let nf = curves_normal_form(&rep, &line(2), None, None, FillMode::Virtual);
        assert!(nf.is_err());
        let pts = MetricSpace::line(&[0.0, 0.25, 0.75, 1.0]).unwrap();
        let rep = AlbertiRep::new(vec![Fragment::new(vec![0.0, 0.25, 0.75, 1.0], vec![0, 1, 2, 3]).unwrap().with_max_gap(0.25)], vec![1.0], vec![vec![0.25, 0.0, 0.25]]).unwrap();
        let nf = curves_normal_form(&rep, &pts, None, None, FillMode::Virtual).unwrap();
        assert_eq!(nf.space.len(), 5);
        assert_eq!(nf.origin[4], Some((1, 2, 0.5)));
        assert_eq!(nf.extend(&pts.coordinate(0).unwrap())[4], 0.5);
        assert_eq!(nf.mu[..4], rep.pushforward(4)[..]);
    }

    #[test]
    fn reversed_gap_loses_direction() {
        let space = line(4);
        let back = Fragment::new(vec![0.0, 0.25, 0.75], vec![2, 3, 1]).unwrap().with_max_gap(0.25);
        let rep = AlbertiRep::new(vec![back], vec![1.0], vec![vec![0.25, 0.0]]).unwrap();
        assert!(matches!(
            curves_normal_form(&rep, &space, Some(&x_dir(&space)), None, FillMode::Snap { tol: 1e-12 }),
            Err(Error::DirectionLost { fragment: 0, gap: 1 })
        ));
    }

    #[test]
    fn speed_ratio_is_certified() {
        let space = line(4);
        let x = space.coordinate(0).unwrap();
        let rep = AlbertiRep::new(vec![holed()], vec![1.0], vec![vec![0.25, 0.0, 0.25]]).unwrap();
        let spd = SpeedSpec::uniform(x.clone(), 0.5, false).unwrap();
        let nf = curves_normal_form(&rep, &space, None, Some(&spd), FillMode::Snap { tol: 1e-12 }).unwrap();
        assert!(nf.speed_ok);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let bad = SpeedSpec::uniform(neg, 0.5, false).unwrap();
        assert!(!curves_normal_form(&rep, &space, None, Some(&bad), FillMode::Snap { tol: 1e-12 }).unwrap().speed_ok);
    }

    #[test]
    fn normal_derivation_examples() {
        let seg = fixtures::seg();
        let dict = fixtures::dictionary(&seg.space);
        let unit = AlbertiRep::new(vec![fixtures::seg_fragment()], vec![1.0], vec![vec![0.5, 0.5]]).unwrap();
        let nd = normal_derivation_from_rep(&unit, &seg.space, &dict, 1e-9).unwrap();
        assert_eq!(nd.lambda, vec![1.0, 1.0, 0.0]);
        assert!(nd.normal);
        assert_eq!(nd.boundary_tv, 2.0);
        assert_eq!(nd.open_boundary, 2.0);
        assert!(nd.residual <= 1e-12);

        let half = AlbertiRep::new(vec![fixtures::seg_fragment()], vec![1.0], vec![vec![1.0, 0.5]]).unwrap();
        let nd = normal_derivation_from_rep(&half, &seg.space, &dict, 1e-9).unwrap();
        assert!((nd.lambda[0] - 2.0).abs() < 1e-12 && (nd.lambda[1] - 1.0).abs() < 1e-12);

        let back = fixtures::seg_fragment().reversed();
        let opposed = AlbertiRep::new(vec![fixtures::seg_fragment(), back], vec![0.5, 0.5], vec![vec![0.5, 0.5], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(
            normal_derivation_from_rep(&opposed, &seg.space, &dict, 1e-9),
            Err(Error::RatioInconsistent { point: 1, .. })
        ));
    }

    #[test]
    fn vectorfield_examples() {
        let g = fixtures::grid(3);
        let dict = fixtures::dictionary(&g.space);
        let x = g.space.coordinate(0).unwrap();
        let y = g.space.coordinate(1).unwrap();
        let rows: Vec<Fragment> = (0..3).map(|r| Fragment::uniform(vec![3 * r, 3 * r + 1, 3 * r + 2], 0.5).unwrap()).collect();
        let masses = rows.iter().map(|_| vec![0.25, 0.25]).collect();
        let rep = AlbertiRep::from_edge_masses(rows.clone(), masses).unwrap();
        let nd = normal_derivation_from_rep(&rep, &g.space, &dict, 1e-9).unwrap();
        let one = vectorfield_direction_rep(&nd, &[x.clone()], &g.space, 1e-9, 1e-9).unwrap();
        assert!(one.certified && one.fail_mass == 0.0);
        assert!(one.lambda.iter().flatten().filter(|&&l| l != 0.0).all(|&l| (l - 1.0).abs() < 1e-12));
        let two = vectorfield_direction_rep(&nd, &[x.clone(), y.clone()], &g.space, 1e-9, 1e-9).unwrap();
        assert!(two.certified);
        assert_eq!(two.null_set, vec![2, 5, 8]);

        let column = Fragment::uniform(vec![0, 3, 6], 0.5).unwrap();
        let mut mixed = nd.clone();
        let mut terms = vec![FragmentTerm::unit(column, 1.0)];
        if let Current::FragmentSum { terms: t, .. } = &nd.n {
            terms.extend(t.iter().cloned());
        }
        mixed.n = Current::fragments(9, terms).unwrap();
        let fail = vectorfield_direction_rep(&mixed, &[x, y], &g.space, 1e-9, 1e-9).unwrap();
        assert!(!fail.certified && fail.fail_mass > 0.0);
        assert!(fail.fail_edges.iter().all(|e| e.test == Some((1, 1.0))));
        assert!(matches!(fail.certify(1e-9), Err(Error::FailMass { .. })));
    }

    fn step_current(space: &MetricSpace, m: usize, density: impl Fn(f64) -> f64) -> Current {
        let frag = Fragment::uniform((0..=m).collect(), 1.0 / m as f64).unwrap();
        let nu = (0..m).map(|i| density(i as f64 / m as f64) / m as f64).collect();
        Current::fragments(space.len(), vec![FragmentTerm { fragment: frag, nu, weight: 1.0 }]).unwrap()
    }

    #[test]
    fn approximation_examples() {
        let space = line(16);
        let dict = line_dict(&space);
        let t = Current::curve(Fragment::uniform((0..=16).collect(), 1.0 / 16.0).unwrap(), 17).unwrap();
        let r = approximate_by_normal(&t, &space, &dict, &ApproxConfig::default()).unwrap();
        assert_eq!(r.errors.len(), 1);
        assert!(r.errors[0] <= 1e-12 && r.reached && r.steps[0].normal);

        let z = approximate_by_normal(&Current::zero(1, 17), &space, &dict, &ApproxConfig::default()).unwrap();
        assert!(z.steps.is_empty() && z.final_error() == 0.0);

        let t = step_current(&space, 16, |x| if x < 0.5 { 1.0 } else { 2.0 });
        let cfg = ApproxConfig { base_level: 2, max_iter: 3, ..ApproxConfig::default() };
        let r = approximate_by_normal(&t, &space, &dict, &cfg).unwrap();
        assert_eq!(r.errors.len(), 3);
        assert!(r.errors.windows(2).all(|w| w[1] < w[0]));
        assert!(r.final_error() <= 1e-9 && r.reached);
        assert!(r.steps.iter().all(|s| s.normal));
        // Mass-norm contract on every dictionary pair.
        for s in &r.steps {
            let diff = t.sub(&s.current).unwrap();
            for f in &dict.fns {
                for p in &dict.fns {
                    let v = diff.evaluate(&f.values, &[&p.values]).unwrap().abs();
                    let sup = f.values.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                    assert!(v <= s.error * p.glip * sup + 1e-12);
                }
            }
        }
        let short = ApproxConfig { base_level: 1, max_iter: 1, ..cfg };
        let r = approximate_by_normal(&t, &space, &dict, &short).unwrap();
        assert!(!r.reached && matches!(r.check(), Err(Error::FitFailed { .. })));
    }

    #[test]
    fn holes_are_filled_before_fitting() {
        let space = line(4);
        let dict = line_dict(&space);
        let t = Current::fragments(5, vec![FragmentTerm { fragment: holed(), nu: vec![0.25, 0.0, 0.25], weight: 1.0 }]).unwrap();
        let r = approximate_by_normal(&t, &space, &dict, &ApproxConfig { base_level: 2, max_iter: 1, ..ApproxConfig::default() }).unwrap();
        assert_eq!(r.curves[0].trace, vec![0, 1, 2, 3, 4]);
        assert_eq!(r.filled_gaps, vec![vec![1]]);
        assert!(r.final_error() <= 1e-12);
        // No edge starts at the last point, so g is free there.
        assert_eq!(r.steps[0].g[..4], [1.0, 0.0, 0.0, 1.0]);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]

        #[test]
        fn errors_do_not_increase(jump in 1usize..16, a in 0.1f64..3.0, b in 0.1f64..3.0) {
            let space = line(16);
            let dict = line_dict(&space);
            let t = step_current(&space, 16, |x| if x < jump as f64 / 16.0 { a } else { b });
            let cfg = ApproxConfig { base_level: 1, max_iter: 4, ..ApproxConfig::default() };
            let r = approximate_by_normal(&t, &space, &dict, &cfg).unwrap();
            for w in r.errors.windows(2) {
                proptest::prop_assert!(w[1] <= w[0] + 1e-9);
            }
            proptest::prop_assert!(r.final_error() <= 1e-9);
        }

        #[test]
        fn normal_form_keeps_pushforward(seed in 0u64..300) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let space = line(8);
            let keep: Vec<usize> = (0..=8).filter(|&i| i == 0 || i == 8 || rng.random_bool(0.6)).collect();
            let frag = Fragment::new(keep.iter().map(|&i| i as f64 / 8.0).collect(), keep.clone()).unwrap().with_max_gap(0.125 + 1e-12);
            let nu: Vec<f64> = (0..frag.n_pairs()).map(|i| if frag.is_edge(i) { rng.random_range(0.0..1.0) } else { 0.0 }).collect();
            let rep = AlbertiRep::new(vec![frag], vec![1.0], vec![nu]).unwrap();
            let nf = curves_normal_form(&rep, &space, Some(&x_dir(&space)), None, FillMode::Snap { tol: 1e-9 }).unwrap();
            proptest::prop_assert_eq!(nf.mu, rep.pushforward(9));
            proptest::prop_assert_eq!(nf.rep.fragments[0].trace.clone(), (0..=8).collect::<Vec<_>>());
        }
    }
}
