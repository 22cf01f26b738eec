//! Simplicial, diagonal-dominance and full-rank certification.
//!
//! Distances to convex hulls are computed with Wolfe's min-norm-point
//! method on the shifted point set `{p_j - x}`: the minimum-norm point of
//! that polytope is `y* - x` for the closest hull point `y*`, and the
//! barycentric weights of the final corral certify it.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Default absolute tolerance on hull distance.
pub const SIMPLICIAL_TOL: f64 = 1e-9;

/// Relative Wolfe gap at which the solver stops.
pub const GAP_TOL: f64 = 1e-10;

/// Corral weights below this are treated as leaving the corral.
const WEIGHT_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HullDistance {
    pub distance: f64,
    /// Convex weights over the input points achieving `distance`.
    pub weights: Vec<f64>,
}

/// Euclidean distance from `x` to the convex hull of `points`.
pub fn dist_to_hull(x: &[f64], points: &[&[f64]]) -> Result<HullDistance> {
    if points.is_empty() {
        return Err(Error::InvalidInput("convex hull of no points".into()));
    }
    let dim = x.len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Dimension("points and x differ in dimension".into()));
    }
    let shifted = DMatrix::from_fn(dim, points.len(), |r, c| points[c][r] - x[r]);
    let weights = min_norm_point(&shifted)?;
    let y = &shifted * DVector::from_column_slice(&weights);
    Ok(HullDistance {
        distance: y.norm(),
        weights,
    })
}

/// Minimum-norm point of the convex hull of the columns of `q`, returned as
/// convex weights over the columns.
pub fn min_norm_point(q: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (dim, n) = q.shape();
    let norms: Vec<f64> = q.column_iter().map(|c| c.norm_squared()).collect();
    let scale = norms.iter().cloned().fold(0.0, f64::max);
    let start = argmin(&norms);
    let mut weights = vec![0.0; n];
    if scale == 0.0 || n == 1 {
        weights[start] = 1.0;
        return Ok(weights);
    }

    let cap = (10 * dim.max(1) * n).max(100);
    let mut corral = vec![start];
    let mut lambda = vec![1.0];
    let mut y = q.column(start).into_owned();
    let mut iterations = 0usize;
    let mut gap: f64;

    loop {
        let yy = y.norm_squared();
        if yy <= f64::EPSILON * f64::EPSILON * scale {
            break;
        }
        let dots: Vec<f64> = q.column_iter().map(|c| c.dot(&y)).collect();
        let entering = argmin(&dots);
        gap = yy - dots[entering];
        if gap <= GAP_TOL * scale || corral.contains(&entering) {
            break;
        }
        corral.push(entering);
        lambda.push(0.0);

        loop {
            iterations += 1;
            if iterations > cap {
                return Err(Error::SolverFailure { iterations, gap });
            }
            let mu = affine_minimizer(q, &corral);
            if mu.iter().all(|&m| m > WEIGHT_FLOOR) {
                lambda = mu;
                break;
            }
            // Step from lambda toward mu until the first weight hits zero.
            let theta = lambda
                .iter()
                .zip(&mu)
                .filter(|(_, &m)| m <= WEIGHT_FLOOR)
                .map(|(&l, &m)| if l - m > 0.0 { l / (l - m) } else { 0.0 })
                .fold(1.0, f64::min);
            for (l, &m) in lambda.iter_mut().zip(&mu) {
                *l = (1.0 - theta) * *l + theta * m;
            }
            let mut keep = lambda.iter().map(|&l| l > WEIGHT_FLOOR).collect::<Vec<_>>();
            if keep.iter().all(|&k| k) {
                // Rounding left every weight positive; drop the smallest.
                let drop = argmin(&lambda);
                keep[drop] = false;
            }
            let mut idx = 0;
            corral.retain(|_| {
                idx += 1;
                keep[idx - 1]
            });
            let mut idx = 0;
            lambda.retain(|_| {
                idx += 1;
                keep[idx - 1]
            });
            let total: f64 = lambda.iter().sum();
            lambda.iter_mut().for_each(|l| *l /= total);
            if corral.len() == 1 {
                lambda = vec![1.0];
                break;
            }
        }
        y = combine(q, &corral, &lambda);
    }

    for (&c, &l) in corral.iter().zip(&lambda) {
        weights[c] = l;
    }
    Ok(weights)
}

fn combine(q: &DMatrix<f64>, corral: &[usize], lambda: &[f64]) -> DVector<f64> {
    let mut y = DVector::zeros(q.nrows());
    for (&c, &l) in corral.iter().zip(lambda) {
        y.axpy(l, &q.column(c), 1.0);
    }
    y
}

/// Weights `mu` (summing to one) minimizing `|Q_S mu|` over the affine hull
/// of the corral, from the KKT system `[G 1; 1^T 0] [mu; nu] = [0; 1]`.
fn affine_minimizer(q: &DMatrix<f64>, corral: &[usize]) -> Vec<f64> {
    let s = corral.len();
    let mut kkt = DMatrix::zeros(s + 1, s + 1);
    for a in 0..s {
        for b in a..s {
            let g = q.column(corral[a]).dot(&q.column(corral[b]));
            kkt[(a, b)] = g;
            kkt[(b, a)] = g;
        }
        kkt[(a, s)] = 1.0;
        kkt[(s, a)] = 1.0;
    }
    let mut rhs = DVector::zeros(s + 1);
    rhs[s] = 1.0;
    let sol = match kkt.clone().lu().solve(&rhs) {
        Some(sol) if sol.iter().all(|v| v.is_finite()) => sol,
        _ => {
            let svd = kkt.svd(true, true);
            let eps = svd.singular_values.max() * 1e-13;
            svd.solve(&rhs, eps).expect("u and v were computed")
        }
    };
    sol.rows(0, s).iter().copied().collect()
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimplicialReport {
    pub is_simplicial: bool,
    /// Smallest distance of a row to the hull of the remaining rows.
    pub gamma_hat: f64,
    /// Row attaining `gamma_hat`, reported when the matrix is not simplicial.
    pub violating_row: Option<usize>,
    /// Convex weights over all rows (zero at the violating row) reproducing
    /// its closest hull point.
    pub certificate: Option<Vec<f64>>,
}

/// Per-row distance of row `i` of `a` to the hull of the other rows.
pub fn row_hull_distance(a: &DMatrix<f64>, i: usize) -> Result<HullDistance> {
    let rows: Vec<Vec<f64>> = a.row_iter().map(|r| r.iter().copied().collect()).collect();
    let others: Vec<&[f64]> = rows
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, r)| r.as_slice())
        .collect();
    let hd = dist_to_hull(&rows[i], &others)?;
    let mut weights = hd.weights.clone();
    weights.insert(i, 0.0);
    Ok(HullDistance {
        distance: hd.distance,
        weights,
    })
}

pub fn is_simplicial(a: &DMatrix<f64>, tol: f64) -> Result<SimplicialReport> {
    if a.nrows() < 2 {
        return Err(Error::Dimension("simplicial test needs at least 2 rows".into()));
    }
    let per_row: Vec<HullDistance> = (0..a.nrows())
        .into_par_iter()
        .map(|i| row_hull_distance(a, i))
        .collect::<Result<_>>()?;
    let mut worst = 0;
    for (i, hd) in per_row.iter().enumerate() {
        if hd.distance < per_row[worst].distance {
            worst = i;
        }
    }
    let gamma_hat = per_row[worst].distance;
    let simplicial = gamma_hat > tol;
    Ok(SimplicialReport {
        is_simplicial: simplicial,
        gamma_hat,
        violating_row: (!simplicial).then_some(worst),
        certificate: (!simplicial).then(|| per_row[worst].weights.clone()),
    })
}

/// Strict diagonal dominance in the sense `A_ii - A_ij > 0` for all `i != j`.
pub fn is_diag_dominant(a: &DMatrix<f64>) -> bool {
    assert!(a.is_square(), "diagonal dominance needs a square matrix");
    let k = a.nrows();
    (0..k).all(|i| (0..k).all(|j| i == j || a[(i, i)] - a[(i, j)] > 0.0))
}

/// `sigma_min > tol * sigma_max`.
pub fn is_full_rank(a: &DMatrix<f64>, tol: f64) -> bool {
    assert!(a.is_square(), "rank test needs a square matrix");
    if a.nrows() == 0 {
        return false;
    }
    let sv = a.singular_values();
    sv.min() > tol * sv.max()
}

/// Combined report printed by the `check` command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub simplicial: bool,
    pub gamma: f64,
    pub diag_dominant: bool,
    pub full_rank: bool,
    pub violating_row: Option<usize>,
}

pub fn check_conditions(a: &DMatrix<f64>, tol: f64) -> Result<ConditionReport> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("matrix is {:?}, expected square", a.shape())));
    }
    let s = is_simplicial(a, tol)?;
    Ok(ConditionReport {
        simplicial: s.is_simplicial,
        gamma: s.gamma_hat,
        diag_dominant: is_diag_dominant(a),
        full_rank: is_full_rank(a, tol),
        violating_row: s.violating_row,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn vertex_to_opposite_edge() {
        let hd = dist_to_hull(&[1.0, 0.0, 0.0], &[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]).unwrap();
        assert_abs_diff_eq!(hd.distance, 1.5f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(hd.weights[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(hd.weights[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn interior_point_has_zero_distance() {
        let hd = dist_to_hull(&[0.5, 0.0], &[&[0.0, 0.0], &[1.0, 0.0]]).unwrap();
        assert!(hd.distance < 1e-12);
    }

    #[test]
    fn nearest_vertex() {
        let hd = dist_to_hull(&[2.0, 0.0], &[&[0.0, 0.0], &[1.0, 0.0]]).unwrap();
        assert_abs_diff_eq!(hd.distance, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hd.weights[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_point_set_is_rejected() {
        assert!(dist_to_hull(&[1.0], &[]).is_err());
    }

    #[test]
    fn identity_is_simplicial() {
        let r = is_simplicial(&DMatrix::identity(3, 3), SIMPLICIAL_TOL).unwrap();
        assert!(r.is_simplicial);
        assert_abs_diff_eq!(r.gamma_hat, 1.5f64.sqrt(), epsilon = 1e-12);
        assert_eq!(r.violating_row, None);
    }

    #[test]
    fn identical_rows_are_not_simplicial() {
        let r = is_simplicial(&DMatrix::from_element(2, 2, 1.0), SIMPLICIAL_TOL).unwrap();
        assert!(!r.is_simplicial);
        assert_eq!(r.gamma_hat, 0.0);
    }

    #[test]
    fn midpoint_row_is_reported_with_certificate() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.5, 0.5]);
        let r = is_simplicial(&a, SIMPLICIAL_TOL).unwrap();
        assert!(!r.is_simplicial);
        assert_eq!(r.violating_row, Some(2));
        let cert = r.certificate.unwrap();
        assert_abs_diff_eq!(cert[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(cert[1], 0.5, epsilon = 1e-12);
        assert_eq!(cert[2], 0.0);
    }

    #[test]
    fn diag_dominance_examples() {
        assert!(is_diag_dominant(&DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])));
        assert!(!is_diag_dominant(&DMatrix::from_element(2, 2, 1.0)));
        assert!(is_diag_dominant(&DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0])));
    }

    #[test]
    fn full_rank_examples() {
        assert!(is_full_rank(&DMatrix::identity(4, 4), 1e-9));
        assert!(!is_full_rank(&DMatrix::from_element(3, 3, 1.0), 1e-9));
        let near = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 + 1e-12]);
        assert!(!is_full_rank(&near, 1e-6));
    }

    #[test]
    fn solver_handles_many_coplanar_points() {
        // 40 points on a circle in the z = 1 plane; the closest hull point to
        // the origin is the disk center.
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|t| {
                let a = t as f64 * std::f64::consts::TAU / 40.0;
                vec![a.cos(), a.sin(), 1.0]
            })
            .collect();
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let hd = dist_to_hull(&[0.0, 0.0, 0.0], &refs).unwrap();
        assert_abs_diff_eq!(hd.distance, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(hd.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    /// Brute force on a segment: minimize over a fine grid of `t`.
    fn segment_distance(x: &[f64], p: &[f64], q: &[f64]) -> f64 {
        (0..=100_000)
            .map(|s| {
                let t = s as f64 / 100_000.0;
                x.iter()
                    .zip(p.iter().zip(q))
                    .map(|(xi, (pi, qi))| (xi - (t * pi + (1.0 - t) * qi)).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn rotation(angles: (f64, f64, f64)) -> DMatrix<f64> {
        let (a, b, c) = angles;
        let rx = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, a.cos(), -a.sin(), 0.0, a.sin(), a.cos()]);
        let ry = DMatrix::from_row_slice(3, 3, &[b.cos(), 0.0, b.sin(), 0.0, 1.0, 0.0, -b.sin(), 0.0, b.cos()]);
        let rz = DMatrix::from_row_slice(3, 3, &[c.cos(), -c.sin(), 0.0, c.sin(), c.cos(), 0.0, 0.0, 0.0, 1.0]);
        rz * ry * rx
    }

    proptest! {
        #[test]
        fn matches_brute_force_on_segments(
            x in prop::collection::vec(-2.0f64..2.0, 3),
            p in prop::collection::vec(-2.0f64..2.0, 3),
            q in prop::collection::vec(-2.0f64..2.0, 3),
        ) {
            let hd = dist_to_hull(&x, &[&p, &q]).unwrap();
            let brute = segment_distance(&x, &p, &q);
            prop_assert!((hd.distance - brute).abs() < 1e-4);
            prop_assert!(hd.distance <= brute + 1e-12);
        }

        #[test]
        fn member_point_has_zero_distance(
            pts in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 2..8),
            pick in 0usize..8,
        ) {
            let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
            let x = pts[pick % pts.len()].clone();
            let hd = dist_to_hull(&x, &refs).unwrap();
            prop_assert!(hd.distance < 1e-12);
        }

        #[test]
        fn rotation_invariant(
            pts in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..7),
            x in prop::collection::vec(-2.0f64..2.0, 3),
            angles in (0.0f64..6.3, 0.0f64..6.3, 0.0f64..6.3),
        ) {
            let rot = rotation(angles);
            let apply = |v: &[f64]| -> Vec<f64> {
                (&rot * DVector::from_column_slice(v)).iter().copied().collect()
            };
            let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
            let rpts: Vec<Vec<f64>> = pts.iter().map(|p| apply(p)).collect();
            let rrefs: Vec<&[f64]> = rpts.iter().map(Vec::as_slice).collect();
            let d0 = dist_to_hull(&x, &refs).unwrap().distance;
            let d1 = dist_to_hull(&apply(&x), &rrefs).unwrap().distance;
            prop_assert!((d0 - d1).abs() < 1e-8);
        }

        #[test]
        fn weights_are_convex_and_reproduce_distance(
            pts in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 5), 1..12),
            x in prop::collection::vec(-2.0f64..2.0, 5),
        ) {
            let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
            let hd = dist_to_hull(&x, &refs).unwrap();
            prop_assert!(hd.weights.iter().all(|&w| w >= 0.0));
            prop_assert!((hd.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // no hull vertex is closer than the reported point
            for p in &pts {
                let d: f64 = p.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                prop_assert!(hd.distance <= d + 1e-9);
            }
        }
    }
}
