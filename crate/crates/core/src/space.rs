//! Finite metric measure spaces, Lipschitz functions, cones and the `d_{δ,α}` distances.

use crate::error::{Error, Result};

/// Absolute tolerance used when comparing a distance matrix against coordinates.
pub const COORD_TOL: f64 = 1e-12;

/// A finite metric space stored as a dense distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSpace {
    ids: Vec<String>,
    dist: Vec<f64>,
    coords: Option<Vec<Vec<f64>>>,
}

/// First axiom violation found by [`validate_metric`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricReport {
    Ok,
    NotSquare { row: usize },
    Diagonal { i: usize },
    Symmetry { i: usize, j: usize },
    Positivity { i: usize, j: usize },
    Triangle { i: usize, j: usize, k: usize },
}

impl MetricReport {
    pub fn is_ok(&self) -> bool {
        matches!(self, MetricReport::Ok)
    }
}

/// Checks the metric axioms in the order symmetry, zero diagonal, positivity, triangle.
///
/// `strict = false` checks a pseudometric (zero off-diagonal entries allowed).
/// Negative or non-finite entries are reported as positivity violations.
pub fn validate_metric_with(dist: &[Vec<f64>], strict: bool) -> MetricReport {
    let n = dist.len();
    for (i, row) in dist.iter().enumerate() {
        if row.len() != n {
            return MetricReport::NotSquare { row: i };
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if dist[i][j] != dist[j][i] {
                return MetricReport::Symmetry { i, j };
            }
        }
    }
    for i in 0..n {
        if dist[i][i] != 0.0 {
            return MetricReport::Diagonal { i };
        }
    }
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = dist[i][j];
            let bad = !d.is_finite() || d < 0.0 || (strict && d == 0.0);
            if bad {
                return MetricReport::Positivity { i, j };
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if dist[i][k] > dist[i][j] + dist[j][k] {
                    return MetricReport::Triangle { i, j, k };
                }
            }
        }
    }
    MetricReport::Ok
}

/// Metric validation (strict positivity off the diagonal).
pub fn validate_metric(dist: &[Vec<f64>]) -> MetricReport {
    validate_metric_with(dist, true)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl MetricSpace {
    /// Builds a space from an embedding; distances are Euclidean.
    pub fn from_coords(ids: Vec<String>, coords: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != coords.len() {
            return Err(Error::LengthMismatch { expected: ids.len(), got: coords.len() });
        }
        if let Some(first) = coords.first() {
            let dim = first.len();
            if let Some(bad) = coords.iter().find(|c| c.len() != dim) {
                return Err(Error::LengthMismatch { expected: dim, got: bad.len() });
            }
        }
        let n = ids.len();
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = euclid(&coords[i], &coords[j]);
                if d == 0.0 {
                    return Err(Error::InvalidMetric(format!("points {i} and {j} coincide")));
                }
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        Ok(MetricSpace { ids, dist, coords: Some(coords) })
    }

    /// Builds a space from an abstract distance matrix, checking all axioms.
    pub fn from_dist(ids: Vec<String>, dist: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != dist.len() {
            return Err(Error::LengthMismatch { expected: ids.len(), got: dist.len() });
        }
        let report = validate_metric(&dist);
        if !report.is_ok() {
            return Err(Error::InvalidMetric(format!("{report:?}")));
        }
        Ok(MetricSpace { ids, dist: dist.concat(), coords: None })
    }

    /// Builds a space from a matrix and coordinates, requiring agreement within [`COORD_TOL`].
    pub fn from_dist_and_coords(
        ids: Vec<String>,
        dist: Vec<Vec<f64>>,
        coords: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let mut space = Self::from_dist(ids, dist)?;
        if coords.len() != space.len() {
            return Err(Error::LengthMismatch { expected: space.len(), got: coords.len() });
        }
        for i in 0..space.len() {
            for j in 0..space.len() {
                if (space.dist(i, j) - euclid(&coords[i], &coords[j])).abs() > COORD_TOL {
                    return Err(Error::InvalidMetric(format!(
                        "distance ({i}, {j}) disagrees with coordinates"
                    )));
                }
            }
        }
        space.coords = Some(coords);
        Ok(space)
    }

    /// Points on the real line, ids `p0, p1, ...`.
    pub fn line(xs: &[f64]) -> Result<Self> {
        let ids = (0..xs.len()).map(|i| format!("p{i}")).collect();
        Self::from_coords(ids, xs.iter().map(|&x| vec![x]).collect())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.ids.len() + j]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|s| s == id)
    }

    pub fn coords(&self) -> Option<&[Vec<f64>]> {
        self.coords.as_deref()
    }

    pub fn dim(&self) -> Option<usize> {
        self.coords.as_ref().and_then(|c| c.first().map(|v| v.len()))
    }

    pub fn dist_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        (0..n).map(|i| self.dist[i * n..(i + 1) * n].to_vec()).collect()
    }

    /// Coordinate `axis` as a function on the points.
    pub fn coordinate(&self, axis: usize) -> Result<Vec<f64>> {
        let coords = self.coords.as_ref().ok_or(Error::MissingCoords)?;
        coords
            .iter()
            .map(|c| c.get(axis).copied().ok_or(Error::InvalidArgument(format!("no axis {axis}"))))
            .collect()
    }

    /// Same points with a different (validated) distance matrix; coordinates are dropped.
    pub fn with_dist(&self, dist: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_dist(self.ids.clone(), dist)
    }

    /// Appends a point given by coordinates; returns its index.
    pub fn push_point(&mut self, id: String, coord: Vec<f64>) -> Result<usize> {
        let coords = self.coords.as_ref().ok_or(Error::MissingCoords)?;
        if coord.len() != coords[0].len() {
            return Err(Error::LengthMismatch { expected: coords[0].len(), got: coord.len() });
        }
        let n = self.len();
        let mut dist = vec![0.0; (n + 1) * (n + 1)];
        for i in 0..n {
            for j in 0..n {
                dist[i * (n + 1) + j] = self.dist(i, j);
            }
            let d = euclid(&coords[i], &coord);
            if d == 0.0 {
                return Err(Error::InvalidMetric(format!("new point coincides with {i}")));
            }
            dist[i * (n + 1) + n] = d;
            dist[n * (n + 1) + i] = d;
        }
        self.dist = dist;
        self.ids.push(id);
        self.coords.as_mut().unwrap().push(coord);
        Ok(n)
    }
}

/// A nonnegative measure given by point weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    pub weights: Vec<f64>,
}

impl Measure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(format!("weight {i} is not a nonnegative real")));
        }
        Ok(Measure { weights })
    }

    pub fn zero(n: usize) -> Self {
        Measure { weights: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.weights[i] > 0.0).collect()
    }

    pub fn of(&self, set: &[usize]) -> f64 {
        set.iter().map(|&i| self.weights[i]).sum()
    }

    /// `μ↾U`: weights zeroed off `set`.
    pub fn restrict(&self, set: &[usize]) -> Measure {
        let mut weights = vec![0.0; self.len()];
        for &i in set {
            weights[i] = self.weights[i];
        }
        Measure { weights }
    }
}

/// Largest difference quotient of `values` over distinct pairs.
pub fn lip_constant(values: &[f64], space: &MetricSpace) -> Result<f64> {
    if values.len() != space.len() {
        return Err(Error::LengthMismatch { expected: space.len(), got: values.len() });
    }
    Ok(lip_on(values, space, &(0..space.len()).collect::<Vec<_>>()))
}

/// Largest difference quotient over pairs drawn from `set`.
pub fn lip_on(values: &[f64], space: &MetricSpace, set: &[usize]) -> f64 {
    let mut best: f64 = 0.0;
    for (a, &i) in set.iter().enumerate() {
        for &j in &set[a + 1..] {
            let q = (values[i] - values[j]).abs() / space.dist(i, j);
            best = best.max(q);
        }
    }
    best
}

/// A function on the points with cached Lipschitz constant and sup norm.
#[derive(Debug, Clone, PartialEq)]
pub struct LipFn {
    pub values: Vec<f64>,
    pub glip: f64,
    pub sup: f64,
}

impl LipFn {
    pub fn new(values: Vec<f64>, space: &MetricSpace) -> Result<Self> {
        let glip = lip_constant(&values, space)?;
        let sup = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(LipFn { values, glip, sup })
    }

    pub fn constant(c: f64, space: &MetricSpace) -> Self {
        LipFn { values: vec![c; space.len()], glip: 0.0, sup: c.abs() }
    }

    /// The norm `max(sup, glip)` of the Lipschitz algebra.
    pub fn norm(&self) -> f64 {
        self.sup.max(self.glip)
    }

    pub fn scaled(&self, c: f64) -> LipFn {
        LipFn {
            values: self.values.iter().map(|v| c * v).collect(),
            glip: c.abs() * self.glip,
            sup: c.abs() * self.sup,
        }
    }
}

/// McShane extension of `f` given on `set`: `min_s f(s) + L d(·, s)` with `L = lip(f|S)`,
/// truncated to `[-sup|f|, sup|f|]`.
pub fn macshane_extend(set: &[usize], f: &[f64], space: &MetricSpace) -> Result<LipFn> {
    if set.is_empty() {
        return Err(Error::EmptySet("extension domain"));
    }
    if set.len() != f.len() {
        return Err(Error::LengthMismatch { expected: set.len(), got: f.len() });
    }
    let mut full = vec![0.0; space.len()];
    for (&s, &v) in set.iter().zip(f) {
        full[s] = v;
    }
    let l = lip_on(&full, space, set);
    let bound = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut values = vec![0.0; space.len()];
    for (x, value) in values.iter_mut().enumerate() {
        let m = set
            .iter()
            .zip(f)
            .map(|(&s, &v)| if s == x { v } else { v + l * space.dist(x, s) })
            .fold(f64::INFINITY, f64::min);
        *value = m.clamp(-bound, bound);
    }
    for (&s, &v) in set.iter().zip(f) {
        values[s] = v;
    }
    LipFn::new(values, space)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Open cone `{u : tan α ⟨w, u⟩ > |u − ⟨w, u⟩ w|}` around the unit axis `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cone {
    pub axis: Vec<f64>,
    pub alpha: f64,
}

impl Cone {
    pub fn new(axis: Vec<f64>, alpha: f64) -> Result<Self> {
        if axis.is_empty() {
            return Err(Error::InvalidArgument("zero-dimensional cone".into()));
        }
        if (norm2(&axis) - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument("cone axis is not a unit vector".into()));
        }
        if !(alpha > 0.0 && alpha < std::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidArgument("cone opening must lie in (0, π/2)".into()));
        }
        Ok(Cone { axis, alpha })
    }

    pub fn contains(&self, u: &[f64]) -> Result<bool> {
        cone_contains(&self.axis, self.alpha, u)
    }
}

/// Membership of `u` in the open cone of axis `w` and opening `alpha`.
pub fn cone_contains(w: &[f64], alpha: f64, u: &[f64]) -> Result<bool> {
    if w.is_empty() || u.is_empty() {
        return Err(Error::InvalidArgument("zero-dimensional input".into()));
    }
    if w.len() != u.len() {
        return Err(Error::LengthMismatch { expected: w.len(), got: u.len() });
    }
    let along = dot(w, u);
    let perp: f64 = u
        .iter()
        .zip(w)
        .map(|(ui, wi)| {
            let r = ui - along * wi;
            r * r
        })
        .sum::<f64>()
        .sqrt();
    Ok(alpha.tan() * along > perp)
}

/// A cone per point.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeField {
    pub cones: Vec<Cone>,
}

impl ConeField {
    pub fn constant(cone: Cone, n: usize) -> Self {
        ConeField { cones: vec![cone; n] }
    }

    pub fn dim(&self) -> usize {
        self.cones.first().map_or(0, |c| c.axis.len())
    }
}

/// Orthonormal basis of `w^⊥` obtained by Gram–Schmidt on the standard basis with the
/// coordinate of largest `|w_j|` (lowest index on ties) left out.
pub fn orthonormal_complement(w: &[f64]) -> Vec<Vec<f64>> {
    let k = w.len();
    let mut drop = 0;
    for j in 1..k {
        if w[j].abs() > w[drop].abs() {
            drop = j;
        }
    }
    let wn = norm2(w);
    let mut basis: Vec<Vec<f64>> = vec![w.iter().map(|x| x / wn).collect()];
    for j in (0..k).filter(|&j| j != drop) {
        let mut v = vec![0.0; k];
        v[j] = 1.0;
        for b in &basis {
            let c = dot(&v, b);
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= c * bi;
            }
        }
        let n = norm2(&v);
        basis.push(v.into_iter().map(|x| x / n).collect());
    }
    basis.remove(0);
    basis
}

/// `d_{δ,α}(x, y) = δ d(x, y) + cot α Σ_i |⟨u_i, F(x) − F(y)⟩|` with `{u_i}` from
/// [`orthonormal_complement`].
pub fn dst_delta_alpha(
    f: &[&[f64]],
    w: &[f64],
    delta: f64,
    alpha: f64,
    space: &MetricSpace,
) -> Result<Vec<Vec<f64>>> {
    if delta <= 0.0 {
        return Err(Error::InvalidArgument("δ must be positive".into()));
    }
    if !(alpha > 0.0 && alpha < std::f64::consts::FRAC_PI_2) {
        return Err(Error::InvalidArgument("α must lie in (0, π/2)".into()));
    }
    if f.len() != w.len() {
        return Err(Error::ArityMismatch { expected: w.len(), got: f.len() });
    }
    for comp in f {
        if comp.len() != space.len() {
            return Err(Error::LengthMismatch { expected: space.len(), got: comp.len() });
        }
    }
    let us = orthonormal_complement(w);
    let cot = 1.0 / alpha.tan();
    let n = space.len();
    let proj: Vec<Vec<f64>> = (0..n)
        .map(|x| us.iter().map(|u| u.iter().zip(f).map(|(ui, fi)| ui * fi[x]).sum()).collect())
        .collect();
    let mut out = vec![vec![0.0; n]; n];
    for x in 0..n {
        for y in (x + 1)..n {
            let s: f64 = proj[x].iter().zip(&proj[y]).map(|(a, b)| (a - b).abs()).sum();
            let d = delta * space.dist(x, y) + cot * s;
            out[x][y] = d;
            out[y][x] = d;
        }
    }
    Ok(out)
}

/// A named list of functions whose first entry is the constant `1` and whose other
/// entries are 1-Lipschitz and vanish at `basepoint`.
#[derive(Debug, Clone, PartialEq)]
pub struct FnDict {
    pub names: Vec<String>,
    pub fns: Vec<LipFn>,
    pub basepoint: usize,
}

impl FnDict {
    pub fn new(names: Vec<String>, fns: Vec<LipFn>, basepoint: usize) -> Result<Self> {
        if names.len() != fns.len() {
            return Err(Error::LengthMismatch { expected: names.len(), got: fns.len() });
        }
        let first = fns.first().ok_or(Error::EmptySet("dictionary"))?;
        if first.values.iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidArgument("first dictionary entry must be the constant 1".into()));
        }
        for (name, f) in names.iter().zip(&fns).skip(1) {
            if f.glip > 1.0 + 1e-12 {
                return Err(Error::InvalidArgument(format!("{name} is not 1-Lipschitz")));
            }
            if f.values.get(basepoint).copied().unwrap_or(f64::NAN) != 0.0 {
                return Err(Error::InvalidArgument(format!("{name} does not vanish at the basepoint")));
            }
        }
        Ok(FnDict { names, fns, basepoint })
    }

    /// Builds the dictionary `1, f_1 − f_1(b), ...` scaling each entry down to be 1-Lipschitz.
    pub fn normalized(
        space: &MetricSpace,
        basepoint: usize,
        entries: Vec<(String, Vec<f64>)>,
    ) -> Result<Self> {
        let mut names = vec!["one".to_string()];
        let mut fns = vec![LipFn::constant(1.0, space)];
        for (name, values) in entries {
            let b = values[basepoint];
            let shifted: Vec<f64> = values.iter().map(|v| v - b).collect();
            let f = LipFn::new(shifted, space)?;
            let f = if f.glip > 1.0 { f.scaled(1.0 / f.glip) } else { f };
            let mut f = f;
            f.values[basepoint] = 0.0;
            names.push(name);
            fns.push(f);
        }
        FnDict::new(names, fns, basepoint)
    }

    pub fn len(&self) -> usize {
        self.fns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fns.is_empty()
    }
}
