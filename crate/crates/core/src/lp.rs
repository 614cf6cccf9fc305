//! Thin layer over `microlp` for the small linear programs used throughout the crate.

use microlp::{ComparisonOp, OptimizationDirection, Problem, Solution};

use crate::error::{Error, Result};

pub(crate) fn solve(problem: &Problem) -> Result<Solution> {
    let outcome = problem.solve().map_err(|e| Error::Lp(format!("{e:?}")))?;
    outcome
        .into_solution()
        .map_err(|_| Error::Lp("solve interrupted before a feasible point was found".into()))
}

/// Optimum of `max Σ c_y π(y)` over functions that are 1-Lipschitz for `dist` on the
/// support `{anchor} ∪ {y}`, with `π(anchor) = 0`.
///
/// Returns the value and the optimal `π` on the support (anchor first).
/// Restricting to the support loses nothing: a 1-Lipschitz function on a subset
/// extends to the whole space with the same constant.
pub fn max_lipschitz_pairing(
    anchor: usize,
    coeffs: &[(usize, f64)],
    dist: impl Fn(usize, usize) -> f64,
) -> Result<(f64, Vec<(usize, f64)>)> {
    let mut support: Vec<(usize, f64)> = Vec::new();
    for &(y, c) in coeffs {
        if y == anchor || c == 0.0 {
            continue;
        }
        match support.iter_mut().find(|(z, _)| *z == y) {
            Some(entry) => entry.1 += c,
            None => support.push((y, c)),
        }
    }
    support.retain(|&(_, c)| c != 0.0);
    if support.is_empty() {
        return Ok((0.0, vec![(anchor, 0.0)]));
    }
    if support.len() == 1 {
        let (y, c) = support[0];
        let d = dist(anchor, y);
        let v = c.signum() * d;
        return Ok((c.abs() * d, vec![(anchor, 0.0), (y, v)]));
    }
    let mut problem = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = support
        .iter()
        .map(|&(y, c)| {
            let d = dist(anchor, y);
            problem.add_var(c, (-d, d))
        })
        .collect();
    for i in 0..support.len() {
        for j in (i + 1)..support.len() {
            let d = dist(support[i].0, support[j].0);
            problem.add_constraint([(vars[i], 1.0), (vars[j], -1.0)], ComparisonOp::Le, d);
            problem.add_constraint([(vars[i], -1.0), (vars[j], 1.0)], ComparisonOp::Le, d);
        }
    }
    let sol = solve(&problem)?;
    let mut values = vec![(anchor, 0.0)];
    let mut value = 0.0;
    for (k, &(y, c)) in support.iter().enumerate() {
        let v = sol.var_value(vars[k]);
        value += c * v;
        values.push((y, v));
    }
    Ok((value.max(sol.objective()).max(0.0), values))
}
