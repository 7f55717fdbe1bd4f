//! Compact Nelder-Mead simplex minimizer.
//!
//! The feasibility searches in this crate minimize max-of-eigenvalue
//! objectives over at most a handful of parameters, where a
//! derivative-free simplex search is entirely adequate. Standard
//! reflection/expansion/contraction/shrink coefficients (1, 2, 0.5,
//! 0.5).

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_iters: usize,
    /// Stop when the simplex collapses below this diameter.
    pub x_tol: f64,
    /// Stop when the objective spread across the simplex is below this.
    pub f_tol: f64,
    /// Initial per-coordinate offset used to build the simplex.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { max_iters: 4000, x_tol: 1e-14, f_tol: 1e-15, initial_step: 0.1 }
    }
}

/// Minimizes `f` from `x0`, returning the best point and value seen.
pub fn nelder_mead<F>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    assert!(n >= 1, "need at least one parameter");
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += if p[i].abs() > 1e-12 { opts.initial_step * p[i].abs() } else { opts.initial_step };
        let v = f(&p);
        simplex.push((p, v));
    }

    for _ in 0..opts.max_iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(p, _)| {
                p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if (worst - best).abs() <= opts.f_tol && diameter <= opts.x_tol {
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; n];
        for (p, _) in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(p) {
                *c += x / n as f64;
            }
        }

        let lerp = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let reflected = lerp(1.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = lerp(2.0);
            let fe = f(&expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let contracted = if fr < simplex[n].1 { lerp(0.5) } else { lerp(-0.5) };
            let fc = f(&contracted);
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (contracted, fc);
            } else {
                // Shrink toward the best vertex.
                let best_point = simplex[0].0.clone();
                for (p, v) in simplex.iter_mut().skip(1) {
                    for (x, b) in p.iter_mut().zip(&best_point) {
                        *x = b + 0.5 * (*x - b);
                    }
                    *v = f(p);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic_bowl() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2) + 5.0;
        let (x, v) = nelder_mead(f, &[0.0, 0.0], &NelderMeadOptions::default());
        assert!((x[0] - 3.0).abs() < 1e-6 && (x[1] + 1.0).abs() < 1e-6);
        assert!((v - 5.0).abs() < 1e-10);
    }

    #[test]
    fn minimizes_nonsmooth_max() {
        // Max of affine pieces, minimum value 0.5 at x = 0.5.
        let f = |x: &[f64]| (x[0] - 1.0).abs().max(x[0].abs());
        let (x, v) = nelder_mead(f, &[7.0], &NelderMeadOptions::default());
        assert!((x[0] - 0.5).abs() < 1e-6);
        assert!((v - 0.5).abs() < 1e-8);
    }

    #[test]
    fn rosenbrock_reaches_valley() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = NelderMeadOptions { max_iters: 20_000, ..Default::default() };
        let (x, v) = nelder_mead(f, &[-1.2, 1.0], &opts);
        assert!(v < 1e-8, "f = {v} at {x:?}");
    }
}
