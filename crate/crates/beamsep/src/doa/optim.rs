//! Nelder-Mead simplex minimization, derivative-free.

/// Outcome of a simplex run.
#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

pub struct NelderMead {
    pub max_evaluations: usize,
    /// Simplex edge-length tolerance in parameter units.
    pub x_tolerance: f64,
    /// Initial simplex step per parameter.
    pub initial_step: f64,
}

impl NelderMead {
    pub fn minimize<F: FnMut(&[f64]) -> f64>(&self, x0: &[f64], mut f: F) -> MinimizeResult {
        let n = x0.len();
        let mut evals = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
            *evals += 1;
            let v = f(x);
            if v.is_finite() {
                v
            } else {
                f64::INFINITY
            }
        };

        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        let v0 = eval(x0, &mut evals);
        simplex.push((x0.to_vec(), v0));
        for i in 0..n {
            let mut x = x0.to_vec();
            x[i] += self.initial_step;
            let v = eval(&x, &mut evals);
            simplex.push((x, v));
        }

        let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
        let mut converged = false;
        while evals < self.max_evaluations {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            // spread of the simplex in parameter space
            let spread = simplex[1..]
                .iter()
                .flat_map(|(x, _)| {
                    x.iter()
                        .zip(&simplex[0].0)
                        .map(|(a, b)| (a - b).abs())
                })
                .fold(0.0f64, f64::max);
            if spread < self.x_tolerance {
                converged = true;
                break;
            }

            let centroid: Vec<f64> = (0..n)
                .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
                .collect();
            let worst = simplex[n].clone();

            let reflect: Vec<f64> = (0..n)
                .map(|j| centroid[j] + alpha * (centroid[j] - worst.0[j]))
                .collect();
            let fr = eval(&reflect, &mut evals);

            if fr < simplex[0].1 {
                let expand: Vec<f64> = (0..n)
                    .map(|j| centroid[j] + gamma * (reflect[j] - centroid[j]))
                    .collect();
                let fe = eval(&expand, &mut evals);
                simplex[n] = if fe < fr { (expand, fe) } else { (reflect, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (reflect, fr);
            } else {
                let contract: Vec<f64> = (0..n)
                    .map(|j| centroid[j] + rho * (worst.0[j] - centroid[j]))
                    .collect();
                let fc = eval(&contract, &mut evals);
                if fc < worst.1 {
                    simplex[n] = (contract, fc);
                } else {
                    // shrink toward the best vertex
                    let best = simplex[0].0.clone();
                    for v in simplex.iter_mut().skip(1) {
                        for j in 0..n {
                            v.0[j] = best[j] + sigma * (v.0[j] - best[j]);
                        }
                        v.1 = eval(&v.0, &mut evals);
                    }
                }
            }
        }

        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        MinimizeResult {
            x: simplex[0].0.clone(),
            value: simplex[0].1,
            evaluations: evals,
            converged,
        }
    }
}
