use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParetoError {
    #[error("point {index} has {found} objectives, expected {expected}")]
    Dimension { index: usize, expected: usize, found: usize },
    #[error("point {index} has a non-finite objective")]
    NonFinite { index: usize },
}

/// A decision point and its objective vector (all minimized).
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoPoint<T> {
    pub objectives: Vec<f64>,
    pub payload: T,
}

impl<T> ParetoPoint<T> {
    pub fn new(objectives: Vec<f64>, payload: T) -> Self {
        ParetoPoint { objectives, payload }
    }
}

/// `a` is no worse than `b` everywhere and strictly better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        strict |= x < y;
    }
    strict
}

fn check(objectives: &[&[f64]]) -> Result<usize, ParetoError> {
    let m = objectives.first().map_or(0, |o| o.len());
    for (index, o) in objectives.iter().enumerate() {
        if o.len() != m {
            return Err(ParetoError::Dimension { index, expected: m, found: o.len() });
        }
        if o.iter().any(|x| !x.is_finite()) {
            return Err(ParetoError::NonFinite { index });
        }
    }
    Ok(m)
}

/// Marks the non-dominated vectors.
pub fn pareto_mask(objectives: &[&[f64]]) -> Result<Vec<bool>, ParetoError> {
    let m = check(objectives)?;
    let n = objectives.len();
    if m != 2 {
        return Ok((0..n).map(|i| !objectives.iter().any(|o| dominates(o, objectives[i]))).collect());
    }
    // Sort by (f1, f2); within a group of equal f1 only the smallest f2 can
    // survive, and it does iff it beats every earlier group's best f2.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        objectives[a][0].total_cmp(&objectives[b][0]).then(objectives[a][1].total_cmp(&objectives[b][1]))
    });
    let mut keep = vec![false; n];
    let mut best_prev = f64::INFINITY;
    let mut g = 0;
    while g < n {
        let f1 = objectives[order[g]][0];
        let group_min = objectives[order[g]][1];
        let mut end = g;
        while end < n && objectives[order[end]][0] == f1 {
            let i = order[end];
            keep[i] = objectives[i][1] == group_min && group_min < best_prev;
            end += 1;
        }
        best_prev = best_prev.min(group_min);
        g = end;
    }
    Ok(keep)
}

/// The non-dominated points, in input order. Identical objective vectors do
/// not dominate each other and are all kept.
pub fn pareto_set<T: Clone>(points: &[ParetoPoint<T>]) -> Result<Vec<ParetoPoint<T>>, ParetoError> {
    let objs: Vec<&[f64]> = points.iter().map(|p| p.objectives.as_slice()).collect();
    let mask = pareto_mask(&objs)?;
    Ok(points.iter().zip(mask).filter(|(_, k)| *k).map(|(p, _)| p.clone()).collect())
}

/// Objective vectors of the Pareto set, ascending by the first objective.
pub fn pareto_front<T: Clone>(points: &[ParetoPoint<T>]) -> Result<Vec<Vec<f64>>, ParetoError> {
    let mut front: Vec<Vec<f64>> = pareto_set(points)?.into_iter().map(|p| p.objectives).collect();
    front.sort_by(|a, b| {
        a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(front)
}
