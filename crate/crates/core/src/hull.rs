//! Small convex-hull routines over finite point sets.
//!
//! Both routines enumerate supports of Carathéodory size (at most `d + 1`
//! points in dimension `d`) in size-then-lexicographic order, so results are
//! deterministic and the first feasible support wins ties.

use nalgebra::{DMatrix, DVector};

/// Convex weights over `points` reproducing `target` within `tol` (sup norm),
/// supported on at most `d + 1` points. `None` when `target` is outside the hull.
pub fn caratheodory_weights(points: &[Vec<f64>], target: &[f64], tol: f64) -> Option<Vec<(usize, f64)>> {
    let d = target.len();
    let max_support = (d + 1).min(points.len());
    for size in 1..=max_support {
        let mut found = None;
        for_each_subset(points.len(), size, |subset| {
            if let Some(w) = solve_affine(points, subset, target) {
                if w.iter().all(|&x| x >= -tol) {
                    let w = clip_normalize(&w);
                    let recon = combine(points, subset, &w);
                    let err = sup_dist(&recon, target);
                    if err <= tol {
                        found = Some(subset.iter().copied().zip(w).collect());
                        return true;
                    }
                }
            }
            false
        });
        if found.is_some() {
            return found;
        }
    }
    None
}

/// Euclidean projection of `target` onto the convex hull of `points`.
/// Returns the support weights and the projected point.
pub fn project_onto_hull(points: &[Vec<f64>], target: &[f64]) -> (Vec<(usize, f64)>, Vec<f64>) {
    assert!(!points.is_empty(), "projection onto an empty hull");
    let d = target.len();
    let max_support = (d + 1).min(points.len());
    let mut best: Option<(f64, Vec<(usize, f64)>, Vec<f64>)> = None;
    for size in 1..=max_support {
        for_each_subset(points.len(), size, |subset| {
            let w = match solve_affine_projection(points, subset, target) {
                Some(w) => w,
                None => return false,
            };
            if w.iter().any(|&x| x < -1e-12) {
                return false;
            }
            let w = clip_normalize(&w);
            let p = combine(points, subset, &w);
            let dist = euclid(&p, target);
            let better = match &best {
                None => true,
                Some((bd, _, _)) => dist < bd - 1e-15,
            };
            if better {
                best = Some((dist, subset.iter().copied().zip(w).collect(), p));
            }
            false
        });
    }
    let (_, w, p) = best.expect("single points always yield a feasible support");
    (w, p)
}

fn for_each_subset(n: usize, size: usize, mut f: impl FnMut(&[usize]) -> bool) {
    if size == 0 || size > n {
        return;
    }
    let mut idx: Vec<usize> = (0..size).collect();
    loop {
        if f(&idx) {
            return;
        }
        let Some(i) = (0..size).rev().find(|&i| idx[i] < i + n - size) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..size {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Solves `[P_S; 1] w = [target; 1]` in the least-squares sense.
fn solve_affine(points: &[Vec<f64>], subset: &[usize], target: &[f64]) -> Option<Vec<f64>> {
    let d = target.len();
    let s = subset.len();
    let mut a = DMatrix::<f64>::zeros(d + 1, s);
    for (c, &p) in subset.iter().enumerate() {
        for r in 0..d {
            a[(r, c)] = points[p][r];
        }
        a[(d, c)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(d + 1);
    for r in 0..d {
        b[r] = target[r];
    }
    b[d] = 1.0;
    let svd = a.svd(true, true);
    let x = svd.solve(&b, 1e-13).ok()?;
    Some(x.iter().copied().collect())
}

/// Weights of the projection of `target` onto the affine hull of the subset.
fn solve_affine_projection(points: &[Vec<f64>], subset: &[usize], target: &[f64]) -> Option<Vec<f64>> {
    let d = target.len();
    let s = subset.len();
    let base = &points[subset[0]];
    if s == 1 {
        return Some(vec![1.0]);
    }
    let mut dm = DMatrix::<f64>::zeros(d, s - 1);
    for (c, &p) in subset[1..].iter().enumerate() {
        for r in 0..d {
            dm[(r, c)] = points[p][r] - base[r];
        }
    }
    let rhs = DVector::from_iterator(d, (0..d).map(|r| target[r] - base[r]));
    let svd = dm.svd(true, true);
    // affinely dependent subsets are covered by their smaller sub-supports
    let smax = svd.singular_values.max();
    if svd.singular_values.iter().any(|&sv| sv <= 1e-12 * smax.max(1.0)) {
        return None;
    }
    let z = svd.solve(&rhs, 0.0).ok()?;
    let mut w = Vec::with_capacity(s);
    w.push(1.0 - z.sum());
    w.extend(z.iter().copied());
    Some(w)
}

fn clip_normalize(w: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = w.iter().map(|&x| x.max(0.0)).collect();
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        out.iter_mut().for_each(|x| *x /= total);
    }
    out
}

fn combine(points: &[Vec<f64>], subset: &[usize], w: &[f64]) -> Vec<f64> {
    let d = points[subset[0]].len();
    let mut out = vec![0.0; d];
    for (&p, &wt) in subset.iter().zip(w) {
        for r in 0..d {
            out[r] += wt * points[p][r];
        }
    }
    out
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}
