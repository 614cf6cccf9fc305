//! Strict-convexity renorming `d_ε = d + εΨ` built from a generating sequence `{ψ_n}`,
//! the local-norm identity `|D|_ε = |D|_loc + ε‖DΦ‖` and parallelism witnesses.

use std::f64::consts::PI;

use crate::derivations::Derivation;
use crate::error::{Error, Result};
use crate::space::{validate_metric, FnDict, MetricReport, MetricSpace};

/// `ψ_1 ≡ 1, ψ_2, ψ_3, …` truncated at level `m`. Entries beyond the stored functions are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratingSet {
    pub names: Vec<String>,
    pub psi: Vec<Vec<f64>>,
    pub basepoint: usize,
    pub m: usize,
}

impl GeneratingSet {
    /// The Lipschitz constants are not checked here; [`renorm_distance`] detects entries that
    /// are not 1-Lipschitz through the sandwich.
    pub fn new(names: Vec<String>, psi: Vec<Vec<f64>>, basepoint: usize, m: usize) -> Result<Self> {
        if names.len() != psi.len() {
            return Err(Error::LengthMismatch { expected: names.len(), got: psi.len() });
        }
        if m == 0 {
            return Err(Error::InvalidArgument("truncation level must be at least 1".into()));
        }
        let first = psi.first().ok_or(Error::EmptySet("generating set"))?;
        let n = first.len();
        if basepoint >= n {
            return Err(Error::InvalidArgument(format!("basepoint {basepoint} outside the space")));
        }
        if first.iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidArgument("ψ_1 must be the constant 1".into()));
        }
        for (name, f) in names.iter().zip(&psi).skip(1) {
            if f.len() != n {
                return Err(Error::LengthMismatch { expected: n, got: f.len() });
            }
            if f[basepoint] != 0.0 {
                return Err(Error::InvalidArgument(format!("{name} does not vanish at the basepoint")));
            }
        }
        Ok(GeneratingSet { names, psi, basepoint, m })
    }

    pub fn from_dict(dict: &FnDict, m: usize) -> Result<Self> {
        GeneratingSet::new(
            dict.names.clone(),
            dict.fns.iter().map(|f| f.values.clone()).collect(),
            dict.basepoint,
            m,
        )
    }

    /// Constant, coordinates, then `d(·, p) − d(b, p)` for every point `p ≠ b`.
    pub fn distance_functions(space: &MetricSpace, basepoint: usize, m: usize) -> Result<Self> {
        let n = space.len();
        let mut names = vec!["one".to_string()];
        let mut psi = vec![vec![1.0; n]];
        if let Some(dim) = space.dim() {
            for a in 0..dim {
                let c = space.coordinate(a)?;
                let b = c[basepoint];
                names.push(format!("coord{a}"));
                psi.push(c.iter().map(|v| v - b).collect());
            }
        }
        for p in (0..n).filter(|&p| p != basepoint) {
            names.push(format!("dist_{}", space.ids()[p]));
            psi.push((0..n).map(|x| space.dist(x, p) - space.dist(basepoint, p)).collect());
        }
        GeneratingSet::new(names, psi, basepoint, m)
    }

    pub fn n_points(&self) -> usize {
        self.psi[0].len()
    }

    /// Stored functions taking part in the truncation.
    pub fn active(&self) -> &[Vec<f64>] {
        &self.psi[..self.m.min(self.psi.len())]
    }
}

/// `Σ_{n ≤ m} 1/n²`.
pub fn basel_partial(m: usize) -> f64 {
    (1..=m).map(|n| 1.0 / (n * n) as f64).sum()
}

/// `(Σ_{n > m} 1/n²)^{1/2}`, clamped at zero against rounding.
pub fn basel_tail(m: usize) -> f64 {
    (PI * PI / 6.0 - basel_partial(m)).max(0.0).sqrt()
}

/// `Ψ_M(x, y) = (Σ_{n ≤ M} (ψ_n(x) − ψ_n(y))² / n²)^{1/2}`.
pub fn psi_pseudometric(gen: &GeneratingSet) -> Vec<Vec<f64>> {
    let n = gen.n_points();
    let active = gen.active();
    let mut out = vec![vec![0.0; n]; n];
    for x in 0..n {
        for y in (x + 1)..n {
            let s: f64 = active
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    let d = (f[x] - f[y]) / (i + 1) as f64;
                    d * d
                })
                .sum();
            out[x][y] = s.sqrt();
            out[y][x] = out[x][y];
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct RenormedSpace {
    pub space: MetricSpace,
    pub gen: GeneratingSet,
    pub eps: f64,
    pub m: usize,
    pub psi: Vec<Vec<f64>>,
    pub d_eps: Vec<Vec<f64>>,
    /// `d ≤ d_ε ≤ (1 + ε π/√6) d` entrywise.
    pub sandwich_ok: bool,
    pub metric: MetricReport,
}

impl RenormedSpace {
    pub fn dist(&self, x: usize, y: usize) -> f64 {
        self.d_eps[x][y]
    }
}

/// `d_ε = d + εΨ_M`. Fails when `Ψ_M` exceeds `(Σ_{2≤n≤M} 1/n²)^{1/2} d` somewhere, which
/// no family of 1-Lipschitz `ψ_n` can do.
pub fn renorm_distance(space: &MetricSpace, gen: &GeneratingSet, eps: f64) -> Result<RenormedSpace> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument("ε must be a nonnegative number".into()));
    }
    let n = space.len();
    if gen.n_points() != n {
        return Err(Error::LengthMismatch { expected: n, got: gen.n_points() });
    }
    let psi = psi_pseudometric(gen);
    let c_m = (basel_partial(gen.m) - 1.0).max(0.0).sqrt();
    for x in 0..n {
        for y in (x + 1)..n {
            if psi[x][y] > c_m * space.dist(x, y) * (1.0 + 1e-12) {
                return Err(Error::SandwichViolation { i: x, j: y });
            }
        }
    }
    let d_eps: Vec<Vec<f64>> =
        (0..n).map(|x| (0..n).map(|y| space.dist(x, y) + eps * psi[x][y]).collect()).collect();
    let top = 1.0 + eps * PI / 6f64.sqrt();
    let sandwich_ok = (0..n).all(|x| {
        (0..n).all(|y| {
            let d = space.dist(x, y);
            d <= d_eps[x][y] && d_eps[x][y] <= top * d
        })
    });
    let metric = validate_metric(&d_eps);
    Ok(RenormedSpace { space: space.clone(), gen: gen.clone(), eps, m: gen.m, psi, d_eps, sandwich_ok, metric })
}

/// `DΦ_M(x) = (Dψ_n(x)/n)_{n ≤ M}` at every point, with its `l²` norm.
#[derive(Debug, Clone, PartialEq)]
pub struct DPhi {
    pub components: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
}

pub fn dphi(d: &Derivation, gen: &GeneratingSet) -> Result<DPhi> {
    let n = d.n();
    if gen.n_points() != n {
        return Err(Error::LengthMismatch { expected: n, got: gen.n_points() });
    }
    let mut components = vec![vec![0.0; gen.m]; n];
    for (i, f) in gen.active().iter().enumerate() {
        let df = d.apply(f)?;
        for x in 0..n {
            components[x][i] = df[x] / (i + 1) as f64;
        }
    }
    let norms = components.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    Ok(DPhi { components, norms })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenormedNorm {
    /// LP local norm against `d_ε`.
    pub value: Vec<f64>,
    pub local: Vec<f64>,
    pub phi_norm: Vec<f64>,
    /// `|D|_loc + ε‖DΦ_M‖`.
    pub predicted: Vec<f64>,
    pub gap: Vec<f64>,
    /// `ε (Σ_{n>M} (2‖D‖/n)²)^{1/2}`.
    pub slack: f64,
    pub identity_ok: bool,
}

pub fn renormed_local_norm(d: &Derivation, xe: &RenormedSpace) -> Result<RenormedNorm> {
    let value = d.local_norm_with(|p, q| xe.dist(p, q))?;
    let local = d.local_norm(&xe.space)?;
    let phi = dphi(d, &xe.gen)?;
    let norm = local.iter().copied().fold(0.0, f64::max);
    let predicted: Vec<f64> = local.iter().zip(&phi.norms).map(|(l, p)| l + xe.eps * p).collect();
    let gap: Vec<f64> = value.iter().zip(&predicted).map(|(v, p)| (v - p).abs()).collect();
    let slack = xe.eps * 2.0 * norm * basel_tail(xe.m);
    let scale = norm.max(1.0);
    let identity_ok = gap.iter().all(|&g| g <= slack + 1e-9 * scale);
    Ok(RenormedNorm { value, local, phi_norm: phi.norms, predicted, gap, slack, identity_ok })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Convexity {
    /// `χ_{V1} D1 = λ1 D2` and `χ_{V2} D2 = λ2 D1`; both ratios vanish off their sets.
    Parallel { v1: Vec<usize>, v2: Vec<usize>, lambda1: Vec<f64>, lambda2: Vec<f64> },
    /// Points of `U` where `|D1 + D2|_ε < |D1|_ε + |D2|_ε`.
    NotAdditive { violating: Vec<usize> },
}

/// Additivity is tested in identity form: both `|·|_loc` and `‖·Φ_M‖` must be additive at
/// every point of `u`, within `tol` relative to the sum.
pub fn strict_convexity_witness(
    d1: &Derivation,
    d2: &Derivation,
    u: &[usize],
    xe: &RenormedSpace,
    tol: f64,
) -> Result<Convexity> {
    let n = d1.n();
    if d2.n() != n {
        return Err(Error::LengthMismatch { expected: n, got: d2.n() });
    }
    if let Some(&x) = u.iter().find(|&&x| x >= n) {
        return Err(Error::InvalidArgument(format!("point {x} outside the space")));
    }
    let sum = d1.add(d2)?;
    let (p1, p2, ps) = (dphi(d1, &xe.gen)?, dphi(d2, &xe.gen)?, dphi(&sum, &xe.gen)?);
    let (l1, l2, ls) = (d1.local_norm(&xe.space)?, d2.local_norm(&xe.space)?, sum.local_norm(&xe.space)?);
    let violating: Vec<usize> = u
        .iter()
        .copied()
        .filter(|&x| {
            let phi_sum = p1.norms[x] + p2.norms[x];
            let loc_sum = l1[x] + l2[x];
            ps.norms[x] < phi_sum - tol * phi_sum.max(1e-300) || ls[x] < loc_sum - tol * loc_sum.max(1e-300)
        })
        .collect();
    if !violating.is_empty() {
        return Ok(Convexity::NotAdditive { violating });
    }
    let (mut v1, mut v2) = (Vec::new(), Vec::new());
    let (mut lambda1, mut lambda2) = (vec![0.0; n], vec![0.0; n]);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    for &x in u {
        let (a, b) = (&p1.components[x], &p2.components[x]);
        if p1.norms[x] <= p2.norms[x] {
            if p2.norms[x] > 0.0 {
                lambda1[x] = dot(a, b) / (p2.norms[x] * p2.norms[x]);
            }
            v1.push(x);
        } else {
            lambda2[x] = dot(b, a) / (p1.norms[x] * p1.norms[x]);
            v2.push(x);
        }
    }
    // Soundness on every stored ψ_n, including those beyond the truncation.
    let chi = |set: &[usize]| -> Vec<f64> { (0..n).map(|x| if set.contains(&x) { 1.0 } else { 0.0 }).collect() };
    let checks = [
        (d1.module_scale(&chi(&v1))?, d2.module_scale(&lambda1)?),
        (d2.module_scale(&chi(&v2))?, d1.module_scale(&lambda2)?),
    ];
    let mut defect: f64 = 0.0;
    for f in &xe.gen.psi {
        for (lhs, rhs) in &checks {
            let (a, b) = (lhs.apply(f)?, rhs.apply(f)?);
            defect = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(defect, f64::max);
        }
    }
    let scale = l1.iter().chain(&l2).copied().fold(1.0, f64::max);
    if defect > tol * scale {
        return Err(Error::WitnessDefect(defect));
    }
    Ok(Convexity::Parallel { v1, v2, lambda1, lambda2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derivations::CarrierEntry;
    use crate::fixtures;
    use crate::fragments::Fragment;

    fn seg_gen(values: Vec<f64>, m: usize) -> GeneratingSet {
        GeneratingSet::new(vec!["one".into(), "x".into()], vec![vec![1.0; 3], values], 0, m).unwrap()
    }

    fn x_carrier() -> Derivation {
        let seg = fixtures::seg();
        Derivation::new(seg.mu.weights.clone(), vec![CarrierEntry::lebesgue(fixtures::seg_fragment())]).unwrap()
    }

    #[test]
    fn psi_examples() {
        let g = seg_gen(vec![0.0, 0.5, 1.0], 2);
        let psi = psi_pseudometric(&g);
        assert_eq!(psi[0][2], 0.5);
        assert_eq!(psi[1][1], 0.0);
        assert!(psi_pseudometric(&seg_gen(vec![0.0, 0.5, 1.0], 1)).iter().flatten().all(|&v| v == 0.0));
        let grid = fixtures::grid(3);
        let mut last = vec![vec![0.0; 9]; 9];
        for m in 1..12 {
            let p = psi_pseudometric(&GeneratingSet::distance_functions(&grid.space, 0, m).unwrap());
            for x in 0..9 {
                for y in 0..9 {
                    assert!(p[x][y] >= last[x][y]);
                    assert!(p[x][y] <= PI / 6f64.sqrt() * grid.space.dist(x, y) + 1e-15);
                }
            }
            last = p;
        }
    }

    #[test]
    fn renorm_examples() {
        let seg = fixtures::seg();
        let g = seg_gen(vec![0.0, 0.5, 1.0], 2);
        let r = renorm_distance(&seg.space, &g, 0.1).unwrap();
        assert!((r.d_eps[0][2] - 1.05).abs() < 1e-15);
        assert!(r.sandwich_ok && r.metric.is_ok());
        let r0 = renorm_distance(&seg.space, &g, 0.0).unwrap();
        assert_eq!(r0.d_eps, seg.space.dist_matrix());
        assert!(matches!(
            renorm_distance(&seg.space, &seg_gen(vec![0.0, 1.0, 2.0], 2), 0.1),
            Err(Error::SandwichViolation { i: 0, j: 1 })
        ));
        assert!(renorm_distance(&seg.space, &g, -1.0).is_err());
    }

    #[test]
    fn dphi_examples() {
        let g = seg_gen(vec![0.0, 0.5, 1.0], 2);
        let d = x_carrier();
        let p = dphi(&d, &g).unwrap();
        assert_eq!(p.components[0], vec![0.0, 0.5]);
        assert_eq!(p.norms[0], 0.5);
        assert_eq!(p.norms[2], 0.0);
        let z = dphi(&Derivation::zero(vec![0.5, 0.5, 0.0]), &g).unwrap();
        assert!(z.norms.iter().all(|&v| v == 0.0));
        let p3 = dphi(&d.scale(3.0), &g).unwrap();
        assert_eq!(p3.components[1], vec![0.0, 1.5]);
    }

    #[test]
    fn local_norm_identity_examples() {
        let seg = fixtures::seg();
        let g = seg_gen(vec![0.0, 0.5, 1.0], 2);
        let d = x_carrier();
        for eps in [0.0, 0.1, 1.0] {
            let xe = renorm_distance(&seg.space, &g, eps).unwrap();
            let r = renormed_local_norm(&d, &xe).unwrap();
            // A single neighbour with coefficient 2 at distance 1/2 + εΨ(a, b) = 1/2 + ε/4.
            assert!((r.value[0] - (1.0 + 0.5 * eps)).abs() < 1e-12);
            assert!(r.identity_ok);
            if eps == 0.0 {
                assert_eq!(r.value, d.local_norm(&seg.space).unwrap());
            }
        }
        let xe = renorm_distance(&seg.space, &g, 0.3).unwrap();
        let z = renormed_local_norm(&Derivation::zero(vec![0.5, 0.5, 0.0]), &xe).unwrap();
        assert!(z.value.iter().chain(&z.predicted).all(|&v| v == 0.0));
    }

    #[test]
    fn truncation_is_monotone() {
        let grid = fixtures::grid(3);
        let d = fixtures::grid_dx(&grid).add(&fixtures::grid_dy(&grid)).unwrap();
        let mut last = vec![0.0; 9];
        for m in [1, 2, 4, 8, 12] {
            let gen = GeneratingSet::distance_functions(&grid.space, 0, m).unwrap();
            let xe = renorm_distance(&grid.space, &gen, 0.2).unwrap();
            let r = renormed_local_norm(&d, &xe).unwrap();
            for x in 0..9 {
                assert!(r.value[x] >= last[x] - 1e-12);
                assert!(r.value[x] >= r.predicted[x] - 1e-9);
            }
            last = r.value;
        }
    }

    #[test]
    fn witness_examples() {
        let grid = fixtures::grid(3);
        let gen = GeneratingSet::distance_functions(&grid.space, 0, 12).unwrap();
        let xe = renorm_distance(&grid.space, &gen, 0.1).unwrap();
        let dx = fixtures::grid_dx(&grid);
        let u: Vec<usize> = (0..9).collect();
        match strict_convexity_witness(&dx, &dx.scale(2.0), &u, &xe, 1e-9).unwrap() {
            Convexity::Parallel { v1, v2, lambda1, .. } => {
                assert_eq!(v1, u);
                assert!(v2.is_empty());
                for x in dx.support() {
                    assert!((lambda1[x] - 0.5).abs() < 1e-12);
                }
                assert_eq!(lambda1[2], 0.0);
            }
            other => panic!("expected a witness, got {other:?}"),
        }
        let dy = fixtures::grid_dy(&grid);
        match strict_convexity_witness(&dx, &dy, &u, &xe, 1e-9).unwrap() {
            Convexity::NotAdditive { violating } => assert_eq!(violating, vec![0, 1, 3, 4]),
            other => panic!("expected NotAdditive, got {other:?}"),
        }
        match strict_convexity_witness(&dx, &dx.scale(-1.0), &u, &xe, 1e-9).unwrap() {
            Convexity::NotAdditive { violating } => assert_eq!(violating, dx.support()),
            other => panic!("expected NotAdditive, got {other:?}"),
        }
    }

    #[test]
    fn truncation_too_short_is_detected() {
        // Two derivations that agree on ψ_1, ψ_2 but differ on ψ_3.
        let space = MetricSpace::line(&[0.0, 1.0, 2.0]).unwrap();
        let mu = vec![1.0, 0.0, 0.0];
        let right = Derivation::new(mu.clone(), vec![CarrierEntry::lebesgue(Fragment::new(vec![0.0, 1.0], vec![0, 1]).unwrap())]).unwrap();
        let far = Derivation::new(mu, vec![CarrierEntry::new(Fragment::new(vec![0.0, 2.0], vec![0, 2]).unwrap(), 1.0, vec![1.0]).unwrap()]).unwrap();
        let names = vec!["one".into(), "x".into(), "bump".into()];
        let psi = vec![vec![1.0; 3], vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 0.0]];
        let gen = GeneratingSet::new(names, psi, 0, 2).unwrap();
        let xe = renorm_distance(&space, &gen, 0.1).unwrap();
        assert!(matches!(
            strict_convexity_witness(&right, &far, &[0], &xe, 1e-9),
            Err(Error::WitnessDefect(_))
        ));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        #[test]
        fn sandwich_holds(seed in 0u64..500, m in 1usize..20, eps in 0.0f64..3.0) {
            let grid = fixtures::grid(3);
            let base = (seed % 9) as usize;
            let gen = GeneratingSet::distance_functions(&grid.space, base, m).unwrap();
            let xe = renorm_distance(&grid.space, &gen, eps).unwrap();
            proptest::prop_assert!(xe.sandwich_ok);
            proptest::prop_assert!(xe.metric.is_ok());
        }

        #[test]
        fn witnesses_are_sound(c in 0.1f64..6.0, seed in 0u64..200) {
            let grid = fixtures::grid(3);
            let gen = GeneratingSet::distance_functions(&grid.space, 0, 12).unwrap();
            let xe = renorm_distance(&grid.space, &gen, 0.1).unwrap();
            let d = fixtures::random_derivation(&grid.space, &grid.mu, 3, seed);
            let u: Vec<usize> = (0..9).collect();
            let parallel = matches!(strict_convexity_witness(&d, &d.scale(c), &u, &xe, 1e-9), Ok(Convexity::Parallel { .. }));
            proptest::prop_assert!(parallel);
        }
    }
}
