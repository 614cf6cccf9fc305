//! Discrete fragments and curves.
//!
//! A fragment is a partial path: a strictly increasing list of times and the point visited
//! at each time. Consecutive domain pairs whose gap does not exceed `max_gap` are *edges*;
//! derivatives and fragment measures live on edges, with mass assigned to the left endpoint.

use crate::error::{Error, Result};
use crate::space::MetricSpace;

#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub domain: Vec<f64>,
    pub trace: Vec<usize>,
    /// Consecutive times further apart than this are not joined by an edge.
    pub max_gap: f64,
}

impl Fragment {
    pub fn new(domain: Vec<f64>, trace: Vec<usize>) -> Result<Self> {
        if domain.is_empty() {
            return Err(Error::EmptySet("fragment domain"));
        }
        if domain.len() != trace.len() {
            return Err(Error::LengthMismatch { expected: domain.len(), got: trace.len() });
        }
        if domain.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("non-finite time".into()));
        }
        if let Some(w) = domain.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "domain not strictly increasing at {} >= {}",
                w[0], w[1]
            )));
        }
        Ok(Fragment { domain, trace, max_gap: f64::INFINITY })
    }

    /// Path visiting `trace` at times `0, step, 2·step, ...`.
    pub fn uniform(trace: Vec<usize>, step: f64) -> Result<Self> {
        let domain = (0..trace.len()).map(|i| i as f64 * step).collect();
        Self::new(domain, trace)
    }

    pub fn with_max_gap(mut self, max_gap: f64) -> Self {
        self.max_gap = max_gap;
        self
    }

    /// Checks that every trace entry is a point of `space`.
    pub fn check_in(&self, space: &MetricSpace) -> Result<()> {
        match self.trace.iter().find(|&&p| p >= space.len()) {
            Some(&p) => Err(Error::InvalidArgument(format!("trace point {p} outside the space"))),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.domain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domain.is_empty()
    }

    /// Number of consecutive domain pairs (the length of a fragment measure).
    pub fn n_pairs(&self) -> usize {
        self.domain.len() - 1
    }

    #[inline]
    pub fn dt(&self, i: usize) -> f64 {
        self.domain[i + 1] - self.domain[i]
    }

    #[inline]
    pub fn is_edge(&self, i: usize) -> bool {
        self.dt(i) <= self.max_gap
    }

    /// Indices `i` of the edges `(t_i, t_{i+1})`.
    pub fn edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_pairs()).filter(move |&i| self.is_edge(i))
    }

    /// Maximal edge-connected index ranges `[start, end]` (inclusive); isolated points
    /// form runs of length one.
    pub fn runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut start = 0;
        for i in 0..self.n_pairs() {
            if !self.is_edge(i) {
                runs.push((start, i));
                start = i + 1;
            }
        }
        runs.push((start, self.len() - 1));
        runs
    }

    pub fn index_of(&self, t: f64) -> Result<usize> {
        self.domain.iter().position(|&s| s == t).ok_or(Error::NotInDomain(t))
    }

    /// Speed `d(γ(t_i), γ(t_{i+1})) / (t_{i+1} − t_i)` of edge `i`.
    #[inline]
    pub fn edge_speed(&self, space: &MetricSpace, i: usize) -> f64 {
        space.dist(self.trace[i], self.trace[i + 1]) / self.dt(i)
    }

    pub fn is_degenerate(&self, i: usize) -> bool {
        self.trace[i] == self.trace[i + 1]
    }

    /// Lipschitz constant over all pairs of domain times.
    pub fn lip(&self, space: &MetricSpace) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                let q = space.dist(self.trace[i], self.trace[j]) / (self.domain[j] - self.domain[i]);
                best = best.max(q);
            }
        }
        best
    }

    /// Largest edge speed.
    pub fn max_edge_speed(&self, space: &MetricSpace) -> f64 {
        self.edges().map(|i| self.edge_speed(space, i)).fold(0.0, f64::max)
    }

    /// Largest edge time gap.
    pub fn h_max(&self) -> f64 {
        self.edges().map(|i| self.dt(i)).fold(0.0, f64::max)
    }

    /// Metric differential at domain time `t`: the largest adjacent edge speed,
    /// 0 at isolated points.
    pub fn metric_differential(&self, space: &MetricSpace, t: f64) -> Result<f64> {
        let i = self.index_of(t)?;
        Ok(self.md_at(space, i))
    }

    pub fn md_at(&self, space: &MetricSpace, i: usize) -> f64 {
        let mut md: f64 = 0.0;
        if i > 0 && self.is_edge(i - 1) {
            md = md.max(self.edge_speed(space, i - 1));
        }
        if i + 1 < self.len() && self.is_edge(i) {
            md = md.max(self.edge_speed(space, i));
        }
        md
    }

    /// Difference quotient of `f ∘ γ` on the edge `(s, t)`.
    pub fn pullback_derivative(&self, f: &[f64], s: f64, t: f64) -> Result<f64> {
        let i = self.index_of(s)?;
        let j = self.index_of(t)?;
        if j != i + 1 || !self.is_edge(i) {
            return Err(Error::NotAdjacent(s, t));
        }
        Ok(self.edge_derivative(f, i))
    }

    #[inline]
    pub fn edge_derivative(&self, f: &[f64], i: usize) -> f64 {
        (f[self.trace[i + 1]] - f[self.trace[i]]) / self.dt(i)
    }

    /// Default fragment measure: Lebesgue measure of each edge, 0 on non-edges.
    pub fn default_nu(&self) -> Vec<f64> {
        (0..self.n_pairs()).map(|i| if self.is_edge(i) { self.dt(i) } else { 0.0 }).collect()
    }

    /// Checks a fragment measure: one finite entry per consecutive pair, zero on non-edges
    /// and on degenerate edges.
    pub fn check_nu(&self, nu: &[f64]) -> Result<()> {
        if nu.len() != self.n_pairs() {
            return Err(Error::LengthMismatch { expected: self.n_pairs(), got: nu.len() });
        }
        for (i, &v) in nu.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite density on pair {i}")));
            }
            if v != 0.0 && !self.is_edge(i) {
                return Err(Error::InvalidArgument(format!("density on non-edge pair {i}")));
            }
            if v != 0.0 && self.is_degenerate(i) {
                return Err(Error::InvalidArgument(format!("density on degenerate edge {i}")));
            }
        }
        Ok(())
    }

    /// `Σ_edges f(γ(t_i)) (π∘γ)'(e) ν(e)`: the left-endpoint sampled pairing of `[γ]_ν`.
    pub fn pair(&self, nu: &[f64], f: &[f64], pi: &[f64]) -> f64 {
        self.edges()
            .filter(|&i| nu[i] != 0.0)
            .map(|i| f[self.trace[i]] * self.edge_derivative(pi, i) * nu[i])
            .sum()
    }

    /// Pushforward of `ν` to points via left endpoints, scaled by `scale`.
    pub fn push_nu_into(&self, nu: &[f64], scale: f64, out: &mut [f64]) {
        for i in self.edges() {
            out[self.trace[i]] += scale * nu[i];
        }
    }

    /// Domain restricted to the times mapped into `set`.
    pub fn restrict_to_set(&self, set: &[usize]) -> Result<Fragment> {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| set.contains(&self.trace[i])).collect();
        if keep.is_empty() {
            return Err(Error::EmptySet("fragment restriction"));
        }
        Ok(Fragment {
            domain: keep.iter().map(|&i| self.domain[i]).collect(),
            trace: keep.iter().map(|&i| self.trace[i]).collect(),
            max_gap: self.max_gap,
        })
    }

    /// Fragment measure carried over to [`Fragment::restrict_to_set`]: a surviving pair keeps
    /// its density when both endpoints survive and were consecutive, otherwise 0.
    pub fn restrict_nu_to_set(&self, nu: &[f64], set: &[usize]) -> Vec<f64> {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| set.contains(&self.trace[i])).collect();
        keep.windows(2).map(|w| if w[1] == w[0] + 1 { nu[w[0]] } else { 0.0 }).collect()
    }

    /// Splits the fragment into the maximal runs of edges whose left endpoint lies in `set`.
    /// Each piece is returned with the original pair indices it covers.
    pub fn restrict_edges_to_set(&self, set: &[usize]) -> Vec<(Fragment, Vec<usize>)> {
        let mut out = Vec::new();
        let mut current: Vec<usize> = Vec::new();
        let flush = |current: &mut Vec<usize>, out: &mut Vec<(Fragment, Vec<usize>)>| {
            if current.is_empty() {
                return;
            }
            let first = current[0];
            let last = *current.last().unwrap();
            let frag = Fragment {
                domain: self.domain[first..=last + 1].to_vec(),
                trace: self.trace[first..=last + 1].to_vec(),
                max_gap: self.max_gap,
            };
            out.push((frag, std::mem::take(current)));
        };
        for i in 0..self.n_pairs() {
            if self.is_edge(i) && set.contains(&self.trace[i]) {
                current.push(i);
            } else {
                flush(&mut current, &mut out);
            }
        }
        flush(&mut current, &mut out);
        out
    }

    /// The same trace with time scaled by `lip(γ)`, hence 1-Lipschitz.
    pub fn reparametrize_unit(&self, space: &MetricSpace) -> Result<Fragment> {
        let l = self.lip(space);
        if l == 0.0 {
            return Err(Error::ConstantFragment);
        }
        Ok(self.scale_time(l))
    }

    /// Affine time change `t ↦ a·t` with `a > 0`.
    pub fn scale_time(&self, a: f64) -> Fragment {
        Fragment {
            domain: self.domain.iter().map(|t| a * t).collect(),
            trace: self.trace.clone(),
            max_gap: self.max_gap * a,
        }
    }

    /// Affine time change onto `[0, 1]` (a single point is placed at 0).
    pub fn to_unit_interval(&self) -> Fragment {
        let t0 = self.domain[0];
        let span = self.domain[self.len() - 1] - t0;
        if span == 0.0 {
            return Fragment { domain: vec![0.0], trace: self.trace.clone(), max_gap: self.max_gap };
        }
        Fragment {
            domain: self.domain.iter().map(|t| (t - t0) / span).collect(),
            trace: self.trace.clone(),
            max_gap: self.max_gap / span,
        }
    }

    /// Reversed path on the reflected domain `−t`.
    pub fn reversed(&self) -> Fragment {
        Fragment {
            domain: self.domain.iter().rev().map(|t| -t).collect(),
            trace: self.trace.iter().rev().copied().collect(),
            max_gap: self.max_gap,
        }
    }
}

/// Hausdorff distance between the graphs `{(t, γ(t))}` in the metric `max(|Δt|, d)`.
pub fn fragment_distance(g1: &Fragment, g2: &Fragment, space: &MetricSpace) -> f64 {
    let graph_dist = |a: &Fragment, i: usize, b: &Fragment, j: usize| {
        (a.domain[i] - b.domain[j]).abs().max(space.dist(a.trace[i], b.trace[j]))
    };
    let one_sided = |a: &Fragment, b: &Fragment| {
        (0..a.len())
            .map(|i| (0..b.len()).map(|j| graph_dist(a, i, b, j)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    one_sided(g1, g2).max(one_sided(g2, g1))
}

/// Where the points of a filled gap come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FillMode {
    /// Snap each interpolated position to the nearest existing point; fail if it is farther
    /// than `tol`.
    Snap { tol: f64 },
    /// Append the interpolated positions to a copy of the space as new points.
    Virtual,
}

#[derive(Debug, Clone)]
pub struct Filled {
    pub curve: Fragment,
    /// The space the curve lives in (a copy extended by virtual points in `Virtual` mode).
    pub space: MetricSpace,
    /// Curve index of each original domain index.
    pub index_map: Vec<usize>,
    /// Number of interior points inserted in each original consecutive pair.
    pub inserted: Vec<usize>,
}

/// Interpolated positions this close to an existing point reuse it.
const COINCIDE_TOL: f64 = 1e-12;

fn nearest(coords: &[Vec<f64>], pos: &[f64]) -> (usize, f64) {
    coords
        .iter()
        .enumerate()
        .map(|(j, c)| (j, c.iter().zip(pos).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc })
}

/// Fills every gap affinely in coordinates, subdividing the gap `(u, v)` into
/// `⌈(v − u)/h⌉` equal time steps.
pub fn fill_fragment(gamma: &Fragment, space: &MetricSpace, h: f64, mode: FillMode) -> Result<Filled> {
    if space.coords().is_none() {
        return Err(Error::MissingCoords);
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("fill step must be positive".into()));
    }
    gamma.check_in(space)?;
    let mut out_space = space.clone();
    let mut domain = vec![gamma.domain[0]];
    let mut trace = vec![gamma.trace[0]];
    let mut index_map = vec![0];
    let mut inserted = Vec::with_capacity(gamma.n_pairs());
    for i in 0..gamma.n_pairs() {
        let (u, v) = (gamma.domain[i], gamma.domain[i + 1]);
        let parts = (((v - u) / h) - 1e-9).ceil().max(1.0) as usize;
        let (p, q) = (gamma.trace[i], gamma.trace[i + 1]);
        for k in 1..parts {
            let s = k as f64 / parts as f64;
            let t = u + (v - u) * s;
            let cp = &space.coords().unwrap()[p];
            let cq = &space.coords().unwrap()[q];
            let pos: Vec<f64> = cp.iter().zip(cq).map(|(a, b)| (1.0 - s) * a + s * b).collect();
            let (best, dist) = nearest(out_space.coords().unwrap(), &pos);
            let point = match mode {
                FillMode::Snap { tol } => {
                    if dist > tol {
                        return Err(Error::InvalidArgument(format!(
                            "no point within {tol} of the filled position at time {t}"
                        )));
                    }
                    best
                }
                FillMode::Virtual if dist <= COINCIDE_TOL => best,
                FillMode::Virtual => {
                    let id = format!("virtual{}", out_space.len());
                    out_space.push_point(id, pos)?
                }
            };
            domain.push(t);
            trace.push(point);
        }
        inserted.push(parts - 1);
        domain.push(v);
        trace.push(q);
        index_map.push(domain.len() - 1);
    }
    let curve = Fragment::new(domain, trace)?;
    Ok(Filled { curve, space: out_space, index_map, inserted })
}
