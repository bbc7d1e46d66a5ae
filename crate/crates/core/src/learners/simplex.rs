//! Least squares over the probability simplex (stacking metalearner).

use nalgebra::{DMatrix, DVector};

/// Mean squared error of `Z w` against `y`; `z[k]` is column `k`.
pub fn stacked_risk(z: &[Vec<f64>], y: &[f64], weights: &[f64]) -> f64 {
    let n = y.len();
    (0..n)
        .map(|i| {
            let pred: f64 = z.iter().zip(weights).map(|(col, w)| w * col[i]).sum();
            (y[i] - pred).powi(2)
        })
        .sum::<f64>()
        / n as f64
}

/// Minimizes `mean((y - Z w)^2)` subject to `w >= 0`, `sum(w) = 1` with a
/// primal active-set method started at the best single column. Columns enter
/// only on a strictly negative multiplier, so duplicated or redundant
/// candidates stay at zero and earlier columns win ties.
pub fn simplex_least_squares(z: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = z.len();
    assert!(k > 0, "no candidate columns");
    let n = y.len() as f64;
    let vertex_risks: Vec<f64> = (0..k)
        .map(|j| y.iter().zip(&z[j]).map(|(t, p)| (t - p).powi(2)).sum::<f64>() / n)
        .collect();
    let best = argmin_first(&vertex_risks);
    let mut vertex = vec![0.0; k];
    vertex[best] = 1.0;
    if k == 1 {
        return vertex;
    }

    let mut q = DMatrix::<f64>::zeros(k, k);
    let mut c = DVector::<f64>::zeros(k);
    for a in 0..k {
        c[a] = z[a].iter().zip(y).map(|(p, t)| p * t).sum::<f64>() / n;
        for b in a..k {
            let v = z[a].iter().zip(&z[b]).map(|(p, r)| p * r).sum::<f64>() / n;
            q[(a, b)] = v;
            q[(b, a)] = v;
        }
    }
    let scale = (0..k).map(|j| q[(j, j)]).fold(1e-300, f64::max);
    let tol = 1e-13 * scale;

    let mut alpha = vertex.clone();
    let mut free = vec![best];
    for _ in 0..(50 * k) {
        let (x, lambda) = solve_equality_qp(&q, &c, &free);
        if x.iter().all(|&v| v > 0.0) {
            for (&i, &v) in free.iter().zip(&x) {
                alpha[i] = v;
            }
            let qa = &q * DVector::from_column_slice(&alpha);
            let entering = (0..k)
                .filter(|i| !free.contains(i))
                .map(|i| (i, qa[i] - c[i] + lambda))
                .filter(|&(_, mu)| mu < -tol)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match entering {
                Some((i, _)) => free.push(i),
                None => break,
            }
        } else {
            // walk toward the subproblem solution until a weight hits zero
            let mut t = 1.0;
            for (&i, &v) in free.iter().zip(&x) {
                if v <= 0.0 {
                    let denom = alpha[i] - v;
                    if denom > 0.0 {
                        t = f64::min(t, alpha[i] / denom);
                    }
                }
            }
            for (&i, &v) in free.iter().zip(&x) {
                alpha[i] += t * (v - alpha[i]);
            }
            free.retain(|&i| {
                if alpha[i] <= 1e-15 {
                    alpha[i] = 0.0;
                    false
                } else {
                    true
                }
            });
            if free.is_empty() {
                alpha = vertex.clone();
                free.push(best);
            }
        }
    }

    for v in alpha.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let total: f64 = alpha.iter().sum();
    alpha.iter_mut().for_each(|v| *v /= total);
    if stacked_risk(z, y, &alpha) > vertex_risks[best] {
        return vertex;
    }
    alpha
}

/// Minimizer of `0.5 x'Qx - c'x` over `free` coordinates with `sum(x) = 1`;
/// returns the coordinates and the multiplier of the sum constraint.
fn solve_equality_qp(q: &DMatrix<f64>, c: &DVector<f64>, free: &[usize]) -> (Vec<f64>, f64) {
    let m = free.len();
    let mut kkt = DMatrix::<f64>::zeros(m + 1, m + 1);
    let mut rhs = DVector::<f64>::zeros(m + 1);
    for (r, &i) in free.iter().enumerate() {
        for (s, &j) in free.iter().enumerate() {
            kkt[(r, s)] = q[(i, j)];
        }
        kkt[(r, m)] = 1.0;
        kkt[(m, r)] = 1.0;
        rhs[r] = c[i];
    }
    rhs[m] = 1.0;
    let sol = match kkt.clone().lu().solve(&rhs) {
        Some(s) if s.iter().all(|v| v.is_finite()) => s,
        _ => kkt
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .unwrap_or_else(|_| DVector::from_element(m + 1, 1.0 / m as f64)),
    };
    (sol.iter().take(m).copied().collect(), sol[m])
}

fn argmin_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_column_gets_full_weight() {
        assert_eq!(simplex_least_squares(&[vec![1.0, 2.0]], &[0.0, 0.0]), vec![1.0]);
    }

    #[test]
    fn recovers_interior_mixture() {
        let a: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.11).cos()).collect();
        let y: Vec<f64> = a.iter().zip(&b).map(|(x, z)| 0.3 * x + 0.7 * z).collect();
        let w = simplex_least_squares(&[a, b], &y);
        assert!((w[0] - 0.3).abs() < 1e-9 && (w[1] - 0.7).abs() < 1e-9, "{w:?}");
    }

    #[test]
    fn duplicate_columns_stay_sparse() {
        let a: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y = a.clone();
        let w = simplex_least_squares(&[a.clone(), a.clone(), vec![0.0; 20]], &y);
        assert_eq!(w, vec![1.0, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn weights_on_simplex_and_beat_every_vertex(
            cols in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 30), 1..6),
            y in prop::collection::vec(-3.0f64..3.0, 30),
        ) {
            let w = simplex_least_squares(&cols, &y);
            prop_assert!(w.iter().all(|&v| v >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            let risk = stacked_risk(&cols, &y, &w);
            for j in 0..cols.len() {
                let mut e = vec![0.0; cols.len()];
                e[j] = 1.0;
                prop_assert!(risk <= stacked_risk(&cols, &y, &e) + 1e-10);
            }
        }

        #[test]
        fn matches_dense_grid_search_for_three_columns(
            cols in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 12), 3),
            y in prop::collection::vec(-2.0f64..2.0, 12),
        ) {
            let w = simplex_least_squares(&cols, &y);
            let risk = stacked_risk(&cols, &y, &w);
            let steps = 60;
            for i in 0..=steps {
                for j in 0..=(steps - i) {
                    let a = i as f64 / steps as f64;
                    let b = j as f64 / steps as f64;
                    let g = [a, b, 1.0 - a - b];
                    prop_assert!(risk <= stacked_risk(&cols, &y, &g) + 1e-10);
                }
            }
        }
    }
}
