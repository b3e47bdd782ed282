//! Slow reference maximizers that only evaluate `φ`. Used to cross-check
//! [`super::project`]; nothing in the solvers calls them.

use thiserror::Error;

use crate::regularizer::Regularizer;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("grid resolution must be at least 2, got {0}")]
    Resolution(usize),
    #[error("Q row is empty")]
    Empty,
}

const GRID_MAX_ACTIONS: usize = 4;
const PG_ITERATIONS: usize = 100_000;

/// Approximate maximizer of `Σ π(Q + λφ(π))` over the simplex.
///
/// Up to four actions: exhaustive search on the barycentric grid with step
/// `1/resolution`, followed by repeated local grid searches with shrinking
/// step around the incumbent. More actions: projected-gradient ascent with
/// step `1/(t + 10)`.
pub fn brute_force_project(
    reg: &Regularizer,
    q: &[f64],
    lambda: f64,
    resolution: usize,
) -> Result<Vec<f64>, OracleError> {
    if resolution < 2 {
        return Err(OracleError::Resolution(resolution));
    }
    if q.is_empty() {
        return Err(OracleError::Empty);
    }
    if q.len() == 1 {
        return Ok(vec![1.0]);
    }
    if q.len() <= GRID_MAX_ACTIONS {
        Ok(grid_search(reg, q, lambda, resolution))
    } else {
        Ok(projected_gradient(reg, q, lambda))
    }
}

fn objective(reg: &Regularizer, q: &[f64], lambda: f64, pi: &[f64]) -> f64 {
    q.iter()
        .zip(pi)
        .map(|(&qa, &p)| if p > 0.0 { p * (qa + lambda * reg.phi_raw(p.min(1.0))) } else { 0.0 })
        .sum()
}

/// Points `base + step * k` with `k ∈ [-m, m]^(n-1)` (last coordinate implied)
/// that stay on the simplex; returns the best one.
fn local_search(reg: &Regularizer, q: &[f64], lambda: f64, base: &[f64], step: f64, m: i64) -> (Vec<f64>, f64) {
    let n = q.len();
    let free = n - 1;
    let mut best = base.to_vec();
    let mut best_val = objective(reg, q, lambda, base);
    let mut k = vec![-m; free];
    let mut cand = vec![0.0; n];
    loop {
        let mut ok = true;
        let mut partial = 0.0;
        for i in 0..free {
            let v = base[i] + step * k[i] as f64;
            if v < -1e-15 {
                ok = false;
                break;
            }
            cand[i] = v.max(0.0);
            partial += cand[i];
        }
        if ok && partial <= 1.0 + 1e-15 {
            cand[free] = (1.0 - partial).max(0.0);
            let val = objective(reg, q, lambda, &cand);
            if val > best_val {
                best_val = val;
                best.copy_from_slice(&cand);
            }
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == free {
                return (best, best_val);
            }
            k[i] += 1;
            if k[i] <= m {
                break;
            }
            k[i] = -m;
            i += 1;
        }
    }
}

fn grid_search(reg: &Regularizer, q: &[f64], lambda: f64, resolution: usize) -> Vec<f64> {
    let n = q.len();
    let step = 1.0 / resolution as f64;
    // whole-simplex pass: a local search around the centroid-free corner
    // with radius `resolution` covers every barycentric grid point
    let mut corner = vec![0.0; n];
    corner[n - 1] = 1.0;
    let (mut best, _) = local_search(reg, q, lambda, &corner, step, resolution as i64);
    let mut h = step;
    while h > 1e-10 {
        let (b, _) = local_search(reg, q, lambda, &best, h / 4.0, 6);
        best = b;
        h /= 4.0;
    }
    best
}

fn projected_gradient(reg: &Regularizer, q: &[f64], lambda: f64) -> Vec<f64> {
    let n = q.len();
    let mut pi = vec![1.0 / n as f64; n];
    let mut best = pi.clone();
    let mut best_val = objective(reg, q, lambda, &pi);
    let mut grad = vec![0.0; n];
    for t in 0..PG_ITERATIONS {
        for a in 0..n {
            let x = pi[a].clamp(1e-12, 1.0 - 1e-12);
            grad[a] = q[a] + lambda * reg.f_prime_interval(x).0;
        }
        let step = 1.0 / (t as f64 + 10.0);
        for a in 0..n {
            pi[a] += step * grad[a];
        }
        simplex_projection(&mut pi);
        let val = objective(reg, q, lambda, &pi);
        if val > best_val {
            best_val = val;
            best.copy_from_slice(&pi);
        }
    }
    best
}

/// Euclidean projection onto the probability simplex (sort-based).
pub(crate) fn simplex_projection(v: &mut [f64]) {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i as f64 + 1.0);
        if ui - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn tsallis_grid() {
        let t = Regularizer::tsallis(0.5, 2.0).unwrap();
        let p = brute_force_project(&t, &[1.0, 0.5], 1.0, 2000).unwrap();
        assert!(close(&p, &[0.75, 0.25], 1e-3), "{p:?}");
    }

    #[test]
    fn shannon_grid() {
        let p = brute_force_project(&Regularizer::shannon(), &[1.0, 0.0], 1.0, 2000).unwrap();
        assert!(close(&p, &[0.7310585786300049, 0.2689414213699951], 1e-3), "{p:?}");
    }

    #[test]
    fn symmetric_rows() {
        for (_, reg) in Regularizer::presets() {
            let p = brute_force_project(&reg, &[0.2, 0.2, 0.2], 0.5, 30).unwrap();
            assert!(close(&p, &[1.0 / 3.0; 3], 1.0 / 30.0), "{p:?}");
        }
    }

    #[test]
    fn projected_gradient_on_many_actions() {
        let t = Regularizer::tsallis(0.5, 2.0).unwrap();
        let q = [1.0, 0.5, 0.2, 0.9, -0.3];
        let p = brute_force_project(&t, &q, 1.0, 10).unwrap();
        let exact = crate::projection::project(&t, &q, 1.0).unwrap();
        assert!(close(&p, &exact.pi, 1e-3), "{p:?} vs {:?}", exact.pi);
    }

    #[test]
    fn simplex_projection_examples() {
        let mut v = [0.5, 0.5];
        simplex_projection(&mut v);
        assert_eq!(v, [0.5, 0.5]);
        let mut v = [2.0, 0.0];
        simplex_projection(&mut v);
        assert_eq!(v, [1.0, 0.0]);
        let mut v = [0.0, 0.0, 0.0];
        simplex_projection(&mut v);
        assert!(close(&v, &[1.0 / 3.0; 3], 1e-15));
    }

    #[test]
    fn rejects_small_resolution() {
        assert_eq!(
            brute_force_project(&Regularizer::shannon(), &[0.0, 1.0], 1.0, 1),
            Err(OracleError::Resolution(1))
        );
    }
}
