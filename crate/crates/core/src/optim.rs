//! Optimizers: adaptive-moment gradient descent for training and a
//! limited-memory quasi-Newton method for optimization-based stylization.

/// Adaptive-moment optimizer over a fixed list of parameter tensors.
/// State is allocated lazily on the first step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update. `params` and `grads` must stay index-aligned and
    /// shape-stable across calls.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(
            params.len(),
            grads.len(),
            "param/grad tensor count mismatch"
        );
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.len(), g.len(), "param/grad length mismatch");
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Options for [`lbfgs`].
#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub max_iters: usize,
    /// Number of curvature pairs kept for the two-loop recursion.
    pub history: usize,
    /// Stop when the gradient infinity-norm falls below this.
    pub tol_grad: f64,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    /// Step shrink factor during backtracking.
    pub shrink: f64,
    pub max_line_search: usize,
    /// Doubling attempts when the full step already satisfies Armijo.
    pub max_expansions: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            history: 10,
            tol_grad: 1e-10,
            c1: 1e-4,
            shrink: 0.5,
            max_line_search: 20,
            max_expansions: 12,
        }
    }
}

/// Result of an L-BFGS run. `history` holds the objective after every
/// accepted step (starting with the initial value) and is non-increasing.
#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub history: Vec<f64>,
    pub converged: bool,
}

/// Limited-memory BFGS with two-loop recursion and Armijo backtracking.
/// `objective` writes the gradient into its second argument and returns the
/// value. A non-finite objective aborts with the best point so far.
pub fn lbfgs<F>(x0: Vec<f64>, opts: &LbfgsOptions, mut objective: F) -> LbfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = objective(&x, &mut g);
    let mut history = vec![f];
    if !f.is_finite() {
        return LbfgsResult {
            x,
            value: f,
            history,
            converged: false,
        };
    }

    let mut s_list: Vec<Vec<f64>> = Vec::new();
    let mut y_list: Vec<Vec<f64>> = Vec::new();
    let mut rho_list: Vec<f64> = Vec::new();

    for iter in 0..opts.max_iters {
        let gnorm = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if gnorm <= opts.tol_grad {
            return LbfgsResult {
                x,
                value: f,
                history,
                converged: true,
            };
        }

        // Two-loop recursion for the search direction -H * g.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let m = s_list.len();
        let mut alphas = vec![0.0; m];
        for i in (0..m).rev() {
            let a = rho_list[i] * dot(&s_list[i], &d);
            alphas[i] = a;
            axpy(&mut d, -a, &y_list[i]);
        }
        if m > 0 {
            let last = m - 1;
            let gamma = dot(&s_list[last], &y_list[last]) / dot(&y_list[last], &y_list[last]);
            if gamma.is_finite() && gamma > 0.0 {
                d.iter_mut().for_each(|v| *v *= gamma);
            }
        }
        for i in 0..m {
            let b = rho_list[i] * dot(&y_list[i], &d);
            axpy(&mut d, alphas[i] - b, &s_list[i]);
        }

        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            // Curvature information went stale; fall back to steepest descent.
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
            s_list.clear();
            y_list.clear();
            rho_list.clear();
        }

        // Armijo backtracking. The first iteration starts with a conservative
        // step scaled to the gradient.
        let mut step = if iter == 0 && m == 0 {
            (1.0 / gnorm).min(1.0)
        } else {
            1.0
        };
        let mut accepted = false;
        let mut x_new = vec![0.0; n];
        let mut g_new = vec![0.0; n];
        let mut f_new = f;
        let mut first_trial = true;
        for _ in 0..opts.max_line_search {
            x_new.copy_from_slice(&x);
            axpy(&mut x_new, step, &d);
            f_new = objective(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= f + opts.c1 * step * slope {
                accepted = true;
                break;
            }
            first_trial = false;
            step *= opts.shrink;
        }
        if !accepted {
            return LbfgsResult {
                x,
                value: f,
                history,
                converged: false,
            };
        }
        // When the full step already satisfied Armijo the curvature model may
        // be underestimating the feasible step; expand while the sufficient
        // decrease keeps improving.
        if first_trial {
            let mut x_try = vec![0.0; n];
            let mut g_try = vec![0.0; n];
            for _ in 0..opts.max_expansions {
                let step_try = step * 2.0;
                x_try.copy_from_slice(&x);
                axpy(&mut x_try, step_try, &d);
                let f_try = objective(&x_try, &mut g_try);
                if f_try.is_finite()
                    && f_try <= f + opts.c1 * step_try * slope
                    && f_try < f_new
                {
                    step = step_try;
                    f_new = f_try;
                    x_new.copy_from_slice(&x_try);
                    g_new.copy_from_slice(&g_try);
                } else {
                    break;
                }
            }
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if s_list.len() == opts.history {
                s_list.remove(0);
                y_list.remove(0);
                rho_list.remove(0);
            }
            rho_list.push(1.0 / sy);
            s_list.push(s);
            y_list.push(y);
        }

        x = x_new;
        g = g_new;
        f = f_new;
        history.push(f);
    }

    LbfgsResult {
        x,
        value: f,
        history,
        converged: false,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = vec![5.0, -3.0];
        let mut adam = Adam::new(0.1);
        for _ in 0..500 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            let mut params: Vec<&mut [f64]> = vec![&mut x];
            adam.step(&mut params, &[&g]);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-3), "x = {x:?}");
    }

    #[test]
    fn lbfgs_solves_rosenbrock() {
        let res = lbfgs(vec![-1.2, 1.0], &LbfgsOptions::default(), |x, g| {
            let (a, b) = (x[0], x[1]);
            g[0] = -400.0 * (b - a * a) * a - 2.0 * (1.0 - a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        });
        assert!(res.value < 1e-10, "value = {}", res.value);
        assert!((res.x[0] - 1.0).abs() < 1e-4 && (res.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn lbfgs_history_is_non_increasing() {
        let res = lbfgs(vec![3.0, 4.0, -2.0], &LbfgsOptions::default(), |x, g| {
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi = 4.0 * xi.powi(3);
            }
            x.iter().map(|v| v.powi(4)).sum()
        });
        for pair in res.history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-15);
        }
    }

    #[test]
    fn lbfgs_zero_gradient_terminates_immediately() {
        let res = lbfgs(vec![0.0, 0.0], &LbfgsOptions::default(), |x, g| {
            g.copy_from_slice(&x.iter().map(|v| 2.0 * v).collect::<Vec<_>>());
            x.iter().map(|v| v * v).sum()
        });
        assert!(res.converged);
        assert_eq!(res.history, vec![0.0]);
    }
}
