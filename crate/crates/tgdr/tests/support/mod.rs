//! Independent reference implementations used to verify the library: a
//! Newton-Raphson multinomial logistic fit, a central-difference
//! differentiator, and a from-scratch binary thresholded path. None of them
//! call into the library's fitting code.

#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Central-difference gradient of `f` at `at`.
pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, at: &[f64], h: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(at.len());
    let mut point = at.to_vec();
    for i in 0..at.len() {
        point[i] = at[i] + h;
        let up = f(&point);
        point[i] = at[i] - h;
        let down = f(&point);
        point[i] = at[i];
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Multinomial log-likelihood with reference class `classes`, parameters
/// flattened contrast-major as [intercept, beta_1..beta_d] per contrast.
pub fn multinomial_ll(
    theta: &[f64],
    features: &Array2<f64>,
    labels: &[usize],
    classes: usize,
) -> f64 {
    let d = features.ncols();
    let contrasts = classes - 1;
    let mut ll = 0.0;
    for (j, x) in features.rows().into_iter().enumerate() {
        let mut etas = Vec::with_capacity(contrasts);
        for k in 0..contrasts {
            let base = k * (d + 1);
            let mut eta = theta[base];
            for i in 0..d {
                eta += theta[base + 1 + i] * x[i];
            }
            etas.push(eta);
        }
        let m = etas.iter().cloned().fold(0.0f64, f64::max);
        let denom = (-m).exp() + etas.iter().map(|&e| (e - m).exp()).sum::<f64>();
        let lse = m + denom.ln();
        let y = labels[j];
        ll += if y < classes { etas[y - 1] } else { 0.0 } - lse;
    }
    ll
}

/// A converged Newton-Raphson multinomial fit.
pub struct NewtonFit {
    /// Flattened parameters, same layout as [`multinomial_ll`].
    pub theta: Vec<f64>,
    pub log_likelihood: f64,
}

/// Fits multinomial logistic regression by damped Newton-Raphson. Returns
/// `None` when the iteration fails to converge or walks off toward a
/// separable solution.
pub fn newton_multinomial_mle(
    features: &Array2<f64>,
    labels: &[usize],
    classes: usize,
    max_iter: usize,
    tol: f64,
) -> Option<NewtonFit> {
    let d = features.ncols();
    let contrasts = classes - 1;
    let p = contrasts * (d + 1);
    let mut theta = vec![0.0; p];
    let mut ll = multinomial_ll(&theta, features, labels, classes);
    for _ in 0..max_iter {
        let mut grad = vec![0.0; p];
        let mut hess = nalgebra::DMatrix::<f64>::zeros(p, p);
        for (j, x) in features.rows().into_iter().enumerate() {
            let mut probs = Vec::with_capacity(contrasts);
            let mut etas = Vec::with_capacity(contrasts);
            for k in 0..contrasts {
                let base = k * (d + 1);
                let mut eta = theta[base];
                for i in 0..d {
                    eta += theta[base + 1 + i] * x[i];
                }
                etas.push(eta);
            }
            let m = etas.iter().cloned().fold(0.0f64, f64::max);
            let denom = (-m).exp() + etas.iter().map(|&e| (e - m).exp()).sum::<f64>();
            for k in 0..contrasts {
                probs.push((etas[k] - m).exp() / denom);
            }
            let y = labels[j];
            let aug = |c: usize| if c == 0 { 1.0 } else { x[c - 1] };
            for k in 0..contrasts {
                let resid = if y == k + 1 { 1.0 } else { 0.0 } - probs[k];
                for c in 0..=d {
                    grad[k * (d + 1) + c] += resid * aug(c);
                }
            }
            for k in 0..contrasts {
                for l in 0..contrasts {
                    let w = if k == l {
                        probs[k] * (1.0 - probs[k])
                    } else {
                        -probs[k] * probs[l]
                    };
                    for c in 0..=d {
                        for e in 0..=d {
                            hess[(k * (d + 1) + c, l * (d + 1) + e)] -=
                                w * aug(c) * aug(e);
                        }
                    }
                }
            }
        }
        let max_grad = grad.iter().fold(0.0f64, |m, &g| m.max(g.abs()));
        if max_grad < tol {
            return Some(NewtonFit {
                theta,
                log_likelihood: ll,
            });
        }
        let rhs = nalgebra::DVector::from_iterator(p, grad.iter().map(|&g| -g));
        let delta = hess.lu().solve(&rhs)?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate: Vec<f64> = theta
                .iter()
                .enumerate()
                .map(|(i, &t)| t + scale * delta[i])
                .collect();
            let candidate_ll = multinomial_ll(&candidate, features, labels, classes);
            if candidate_ll >= ll - 1e-12 {
                theta = candidate;
                ll = candidate_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return None;
        }
        if theta.iter().any(|t| t.abs() > 50.0) {
            return None;
        }
    }
    None
}

/// Every state of a from-scratch binary thresholded descent: step index,
/// intercept, coefficients. Labels use 1 for the event class and 2 for the
/// reference.
pub struct BinaryPath {
    pub steps: Vec<(usize, f64, Vec<f64>)>,
}

pub fn binary_tgdr_path(
    features: &Array2<f64>,
    labels: &[usize],
    tau: f64,
    delta_v: f64,
    steps: usize,
) -> BinaryPath {
    let n = features.nrows();
    let d = features.ncols();
    let mut intercept = 0.0f64;
    let mut beta = vec![0.0f64; d];
    let mut recorded = vec![(0usize, intercept, beta.clone())];
    for step in 0..steps {
        let mut g0 = 0.0f64;
        let mut g = vec![0.0f64; d];
        for j in 0..n {
            let mut eta = intercept;
            for i in 0..d {
                eta += beta[i] * features[(j, i)];
            }
            eta = eta.clamp(-700.0, 700.0);
            let p = if eta >= 0.0 {
                1.0 / (1.0 + (-eta).exp())
            } else {
                eta.exp() / (1.0 + eta.exp())
            };
            let y = if labels[j] == 1 { 1.0 } else { 0.0 };
            let r = p - y;
            g0 += r;
            for i in 0..d {
                g[i] += r * features[(j, i)];
            }
        }
        let max_abs = g.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        intercept -= delta_v * g0;
        for i in 0..d {
            if g[i].abs() >= tau * max_abs {
                beta[i] -= delta_v * g[i];
            }
        }
        recorded.push((step + 1, intercept, beta.clone()));
    }
    BinaryPath { steps: recorded }
}

/// Random dataset whose labels actually depend on the first features, so
/// gradients and paths are nondegenerate.
pub fn random_dataset(
    rng: &mut ChaCha8Rng,
    n: usize,
    d: usize,
    classes: usize,
    studies: usize,
) -> tgdr::ExpressionDataset {
    let mut features = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    let mut study_ids = Vec::with_capacity(n);
    for j in 0..n {
        for i in 0..d {
            features[(j, i)] = rng.random::<f64>() * 2.0 - 1.0;
        }
        let mut weights = Vec::with_capacity(classes);
        for k in 0..classes - 1 {
            let lean = 1.5 * features[(j, k % d)]
                - 0.8 * features[(j, (k + 1) % d)]
                + 0.2 * (k as f64);
            weights.push(lean.exp());
        }
        weights.push(1.0);
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut label = classes;
        for (k, w) in weights.iter().enumerate() {
            if u < *w {
                label = k + 1;
                break;
            }
            u -= w;
        }
        labels.push(label);
        study_ids.push(j % studies + 1);
    }
    tgdr::ExpressionDataset::new(
        features,
        labels,
        classes,
        study_ids,
        studies,
        (1..=d).map(|i| format!("F{i}")).collect(),
    )
    .expect("random dataset construction")
}

/// Keeps drawing until every study contains every class.
pub fn random_dataset_full_cells(
    rng: &mut ChaCha8Rng,
    n: usize,
    d: usize,
    classes: usize,
    studies: usize,
) -> tgdr::ExpressionDataset {
    for _ in 0..100 {
        let data = random_dataset(rng, n, d, classes, studies);
        if data.require_full_cells().is_ok() {
            return data;
        }
    }
    panic!("could not draw a dataset with full study-class cells");
}
