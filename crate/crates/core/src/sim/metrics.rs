//! Error metrics for trajectories, surfaces and responses.

use nalgebra::{DMatrix, DVector};

use crate::basis::WorkingGrid;
use crate::error::{check_len, FgamError, Result};

/// Root mean integrated squared error between trajectories on `grid`
/// (rows are subjects).
pub fn rmise_x(truth: &DMatrix<f64>, est: &DMatrix<f64>, grid: &WorkingGrid) -> Result<f64> {
    check_len("trajectory grid", grid.len(), truth.ncols())?;
    check_len("estimated trajectory grid", grid.len(), est.ncols())?;
    check_len("trajectory count", truth.nrows(), est.nrows())?;
    if truth.nrows() == 0 {
        return Err(FgamError::invalid("no trajectories to compare"));
    }
    let mut sq = vec![0.0; grid.len()];
    let mut total = 0.0;
    for i in 0..truth.nrows() {
        for (t, s) in sq.iter_mut().enumerate() {
            *s = (truth[(i, t)] - est[(i, t)]).powi(2);
        }
        total += grid.integrate(&sq);
    }
    Ok((total / truth.nrows() as f64).sqrt())
}

/// Root mean squared error.
pub fn rmse_y(y: &DVector<f64>, yhat: &DVector<f64>) -> Result<f64> {
    check_len("predictions", y.len(), yhat.len())?;
    if y.is_empty() {
        return Err(FgamError::invalid("no responses to compare"));
    }
    Ok(((y - yhat).norm_squared() / y.len() as f64).sqrt())
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull by the monotone chain, counter-clockwise without repeats.
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut p: Vec<(f64, f64)> = points.iter().copied().filter(|(a, b)| a.is_finite() && b.is_finite()).collect();
    p.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &q in &p {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], q) <= 0.0 {
            lower.pop();
        }
        lower.push(q);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &q in p.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], q) <= 0.0 {
            upper.pop();
        }
        upper.push(q);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Whether `p` lies in the closed convex polygon `hull` (counter-clockwise).
pub fn in_hull(hull: &[(f64, f64)], p: (f64, f64)) -> bool {
    if hull.len() < 3 {
        return false;
    }
    let scale = hull.iter().fold(1.0f64, |m, q| m.max(q.0.abs()).max(q.1.abs()));
    let tol = 1e-12 * scale * scale;
    (0..hull.len()).all(|k| cross(hull[k], hull[(k + 1) % hull.len()], p) >= -tol)
}

/// Rectangular evaluation grid for surfaces with a hull mask.
#[derive(Debug, Clone)]
pub struct SurfaceGrid {
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
    /// `mask[a * ts.len() + b]` for `(xs[a], ts[b])`.
    pub mask: Vec<bool>,
}

impl SurfaceGrid {
    /// `size × size` points over the range of the `(x, t)` cloud, masked to
    /// its convex hull.
    pub fn from_points(points: &[(f64, f64)], size: usize) -> Result<Self> {
        let hull = convex_hull(points);
        if hull.len() < 3 {
            return Err(FgamError::invalid("convex hull of the trajectories is empty"));
        }
        let (mut x0, mut x1, mut t0, mut t1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, t) in &hull {
            x0 = x0.min(x);
            x1 = x1.max(x);
            t0 = t0.min(t);
            t1 = t1.max(t);
        }
        let lin = |a: f64, b: f64| -> Vec<f64> {
            (0..size)
                .map(|k| if size == 1 { 0.5 * (a + b) } else { a + (b - a) * k as f64 / (size - 1) as f64 })
                .collect()
        };
        let xs = lin(x0, x1);
        let ts = lin(t0, t1);
        let mask = xs.iter().flat_map(|&x| ts.iter().map(move |&t| (x, t))).map(|p| in_hull(&hull, p)).collect();
        Ok(SurfaceGrid { xs, ts, mask })
    }

    /// `(X_i(t), t)` pairs from trajectories on a grid.
    pub fn trajectory_points(trajectories: &DMatrix<f64>, grid: &WorkingGrid) -> Vec<(f64, f64)> {
        let mut pts = Vec::with_capacity(trajectories.len());
        for i in 0..trajectories.nrows() {
            for (g, &t) in grid.points().iter().enumerate() {
                pts.push((trajectories[(i, g)], t));
            }
        }
        pts
    }

    /// Values of `f` on the grid, rows indexing `x`.
    pub fn evaluate(&self, f: impl Fn(f64, f64) -> f64) -> DMatrix<f64> {
        DMatrix::from_fn(self.xs.len(), self.ts.len(), |a, b| f(self.xs[a], self.ts[b]))
    }
}

/// Root mean squared difference over the masked cells.
pub fn rise_f(truth: &DMatrix<f64>, est: &DMatrix<f64>, mask: &[bool]) -> Result<f64> {
    check_len("surface rows", truth.nrows(), est.nrows())?;
    check_len("surface columns", truth.ncols(), est.ncols())?;
    check_len("surface mask", truth.len(), mask.len())?;
    let nt = truth.ncols();
    let mut s = 0.0;
    let mut count = 0usize;
    for (p, &m) in mask.iter().enumerate() {
        if m {
            let (a, b) = (p / nt, p % nt);
            s += (truth[(a, b)] - est[(a, b)]).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        return Err(FgamError::invalid("surface mask selects no cells"));
    }
    Ok((s / count as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        let a = DVector::from_vec(vec![0.0, 0.0]);
        let b = DVector::from_vec(vec![3.0, 4.0]);
        assert!((rmse_y(&a, &b).unwrap() - (12.5f64).sqrt()).abs() < 1e-14);
        assert_eq!(rmse_y(&a, &a).unwrap(), 0.0);
        assert!(rmse_y(&DVector::zeros(0), &DVector::zeros(0)).is_err());
    }

    #[test]
    fn constant_offset_trajectory_error() {
        let g = WorkingGrid::uniform(0.0, 1.0, 50).unwrap();
        let x = DMatrix::from_fn(5, 50, |i, t| (i + t) as f64 * 0.1);
        let y = x.add_scalar(1.0);
        assert!((rmise_x(&x, &y, &g).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(rmise_x(&x, &x, &g).unwrap(), 0.0);
    }

    #[test]
    fn hull_of_square_with_interior_points() {
        let pts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.5, 0.5), (0.2, 0.7)];
        let h = convex_hull(&pts);
        assert_eq!(h.len(), 4);
        assert!(in_hull(&h, (0.5, 0.5)));
        assert!(in_hull(&h, (1.0, 0.5)));
        assert!(!in_hull(&h, (1.01, 0.5)));
    }

    #[test]
    fn rise_ignores_cells_outside_mask() {
        let t = DMatrix::from_element(2, 2, 1.0);
        let mut e = t.clone();
        e[(0, 0)] += 2.0;
        e[(1, 1)] += 100.0;
        let mask = [true, true, true, false];
        assert!((rise_f(&t, &e, &mask).unwrap() - (4.0f64 / 3.0).sqrt()).abs() < 1e-14);
        assert!(rise_f(&t, &e, &[false; 4]).is_err());
    }
}
