//! Small reference spaces and derivations used by tests, examples and the CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::derivations::{CarrierEntry, Derivation};
use crate::fragments::Fragment;
use crate::space::{FnDict, Measure, MetricSpace};

#[derive(Debug, Clone)]
pub struct Fixture {
    pub space: MetricSpace,
    pub mu: Measure,
}

/// Points `a, b, c` at `0, 0.5, 1` with `μ = (0.5, 0.5, 0)`.
pub fn seg() -> Fixture {
    let space = MetricSpace::from_coords(
        vec!["a".into(), "b".into(), "c".into()],
        vec![vec![0.0], vec![0.5], vec![1.0]],
    )
    .expect("distinct points");
    Fixture { space, mu: Measure { weights: vec![0.5, 0.5, 0.0] } }
}

/// The unit-speed fragment `a → b → c` on [`seg`].
pub fn seg_fragment() -> Fragment {
    Fragment::new(vec![0.0, 0.5, 1.0], vec![0, 1, 2]).expect("valid fragment")
}

/// `n × n` grid on `[0, 1]²`, row-major (`index = row·n + col`), spacing `h = 1/(n − 1)`
/// and `μ = h²` at every point.
pub fn grid(n: usize) -> Fixture {
    grid_nd(n, 2)
}

/// `n^dim` grid on `[0, 1]^dim` with the first axis varying fastest and `μ = h^dim`.
pub fn grid_nd(n: usize, dim: usize) -> Fixture {
    assert!(n >= 2, "grid needs two points per axis");
    let h = 1.0 / (n - 1) as f64;
    let total = n.pow(dim as u32);
    let mut ids = Vec::with_capacity(total);
    let mut coords = Vec::with_capacity(total);
    for p in 0..total {
        let mut rest = p;
        let mut c = Vec::with_capacity(dim);
        for _ in 0..dim {
            c.push((rest % n) as f64 * h);
            rest /= n;
        }
        ids.push(format!("g{p}"));
        coords.push(c);
    }
    let space = MetricSpace::from_coords(ids, coords).expect("distinct grid points");
    Fixture { space, mu: Measure { weights: vec![h.powi(dim as i32); total] } }
}

fn grid_side(fx: &Fixture) -> (usize, usize, f64) {
    let dim = fx.space.dim().expect("grid has coordinates");
    let n = (fx.space.len() as f64).powf(1.0 / dim as f64).round() as usize;
    (n, dim, 1.0 / (n - 1) as f64)
}

/// Forward difference along `axis`: one unit-speed line per grid line, `P = 1`,
/// `ν = μ(left endpoint)`. It vanishes on the last layer of the axis.
pub fn grid_axis_derivation(fx: &Fixture, axis: usize) -> Derivation {
    let (n, dim, h) = grid_side(fx);
    let stride = n.pow(axis as u32);
    let mut carrier = Vec::new();
    for start in 0..fx.space.len() {
        if (start / stride) % n != 0 {
            continue;
        }
        let trace: Vec<usize> = (0..n).map(|i| start + i * stride).collect();
        let frag = Fragment::uniform(trace.clone(), h).expect("grid line");
        let nu = (0..n - 1).map(|i| fx.mu.weights[trace[i]]).collect();
        carrier.push(CarrierEntry::new(frag, 1.0, nu).expect("grid carrier"));
    }
    let _ = dim;
    Derivation::new(fx.mu.weights.clone(), carrier).expect("grid derivation")
}

pub fn grid_dx(fx: &Fixture) -> Derivation {
    grid_axis_derivation(fx, 0)
}

pub fn grid_dy(fx: &Fixture) -> Derivation {
    grid_axis_derivation(fx, 1)
}

/// Dictionary `1, coordinates, |x_1 − x_2|/√2 (dim ≥ 2), distances to a few points`,
/// shifted to vanish at point 0 and scaled to be 1-Lipschitz.
pub fn dictionary(space: &MetricSpace) -> FnDict {
    build_dictionary(space, true)
}

/// Constant, coordinates and `diag` only. Distance functions to points of the space have
/// forward slope 1 along every axis at their own anchor, which inflates discrete mass there.
pub fn coordinate_dictionary(space: &MetricSpace) -> FnDict {
    build_dictionary(space, false)
}

fn build_dictionary(space: &MetricSpace, anchors_on: bool) -> FnDict {
    let mut entries = Vec::new();
    let axes = ["x", "y", "z", "w"];
    if let Some(dim) = space.dim() {
        for a in 0..dim {
            let name = axes.get(a).map_or(format!("x{a}"), |s| s.to_string());
            entries.push((name, space.coordinate(a).expect("axis")));
        }
        if dim >= 2 {
            let (x, y) = (space.coordinate(0).unwrap(), space.coordinate(1).unwrap());
            entries.push((
                "diag".to_string(),
                x.iter().zip(&y).map(|(a, b)| (a - b).abs() / 2f64.sqrt()).collect(),
            ));
        }
    }
    let n = space.len();
    let mut anchors = if anchors_on { vec![n - 1, n / 2] } else { Vec::new() };
    anchors.dedup();
    for p in anchors {
        if p == 0 {
            continue;
        }
        entries.push((format!("dist_{}", space.ids()[p]), (0..n).map(|x| space.dist(x, p)).collect()));
    }
    FnDict::normalized(space, 0, entries).expect("dictionary")
}

/// Random carrier-based derivation with `n_frag` short fragments whose left endpoints carry
/// positive measure. Densities are signed.
pub fn random_derivation(space: &MetricSpace, mu: &Measure, n_frag: usize, seed: u64) -> Derivation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let carrier = (0..n_frag).map(|_| random_carrier_entry(space, mu, &mut rng, true)).collect();
    Derivation::new(mu.weights.clone(), carrier).expect("random derivation")
}

/// Random fragment of 2 to 4 points with speed in `[0.5, 2]`, all points except the last
/// drawn from the support of `mu`.
pub fn random_carrier_entry(space: &MetricSpace, mu: &Measure, rng: &mut ChaCha8Rng, signed: bool) -> CarrierEntry {
    let support = mu.support();
    let n = space.len();
    let len = rng.random_range(2..=4usize);
    let mut trace = vec![support[rng.random_range(0..support.len())]];
    while trace.len() < len {
        let last = *trace.last().unwrap();
        let pool: &[usize] = if trace.len() + 1 < len { &support } else { &[] };
        let next = if pool.is_empty() {
            let mut p = rng.random_range(0..n);
            while p == last {
                p = rng.random_range(0..n);
            }
            p
        } else {
            let mut p = pool[rng.random_range(0..pool.len())];
            if p == last {
                p = if pool.len() > 1 { pool[(pool.iter().position(|&q| q == p).unwrap() + 1) % pool.len()] } else { p };
            }
            p
        };
        if next == last {
            break;
        }
        trace.push(next);
    }
    if trace.len() < 2 {
        let last = trace[0];
        trace.push((last + 1) % n);
    }
    let mut domain = vec![0.0];
    for w in trace.windows(2) {
        let speed = rng.random_range(0.5..2.0);
        let t = domain.last().unwrap() + space.dist(w[0], w[1]) / speed;
        domain.push(t);
    }
    let fragment = Fragment::new(domain, trace).expect("increasing times");
    let nu: Vec<f64> = (0..fragment.n_pairs())
        .map(|i| {
            let s: f64 = if signed && rng.random_bool(0.3) { -1.0 } else { 1.0 };
            s * rng.random_range(0.2..1.0) * fragment.dt(i)
        })
        .collect();
    let weight = rng.random_range(0.2..1.0);
    CarrierEntry::new(fragment, weight, nu).expect("random carrier")
}
