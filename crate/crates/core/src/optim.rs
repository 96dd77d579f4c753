//! Unconstrained minimizers used by the fitting routines: BFGS with a
//! backtracking Armijo line search, and a Nelder–Mead simplex for restarts
//! after a line-search breakdown.

/// Outcome of a minimization run.
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub status: Status,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    LineSearchFailed,
    MaxIterations,
    /// The objective could not be evaluated at the start point.
    BadStart,
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimize with BFGS. `f` returns `None` where the objective is undefined;
/// the line search treats that as `+∞`. Convergence: `‖∇f‖₂ ≤ tol·(1+|f|)`.
pub fn bfgs<F>(f: F, x0: &[f64], tol: f64, max_iters: usize) -> Minimum
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut gx) = match f(&x) {
        Some(v) if v.0.is_finite() && v.1.iter().all(|g| g.is_finite()) => v,
        _ => {
            return Minimum {
                x,
                value: f64::INFINITY,
                gradient: vec![f64::NAN; n],
                iterations: 0,
                status: Status::BadStart,
            }
        }
    };
    // inverse Hessian approximation, row-major
    let mut h = identity(n);
    let mut first_step = true;

    for iter in 0..max_iters {
        if norm(&gx) <= tol * (1.0 + fx.abs()) {
            return Minimum {
                x,
                value: fx,
                gradient: gx,
                iterations: iter,
                status: Status::Converged,
            };
        }
        let mut d = mat_vec(&h, &gx);
        d.iter_mut().for_each(|v| *v = -*v);
        let mut slope = dot(&gx, &d);
        if !(slope < 0.0) {
            h = identity(n);
            d = gx.iter().map(|g| -g).collect();
            slope = dot(&gx, &d);
        }
        // cap the first step so a poorly scaled gradient cannot jump far
        let mut t = if first_step {
            (1.0 / norm(&d)).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            if let Some((ft, gt)) = f(&trial) {
                if ft.is_finite() && gt.iter().all(|g| g.is_finite()) && ft <= fx + 1e-4 * t * slope
                {
                    accepted = Some((trial, ft, gt));
                    break;
                }
                if ft.is_finite() {
                    // safeguarded quadratic interpolation
                    let denom = 2.0 * (ft - fx - slope * t);
                    let t_new = if denom > 0.0 {
                        -slope * t * t / denom
                    } else {
                        0.5 * t
                    };
                    t = t_new.clamp(0.1 * t, 0.5 * t);
                    continue;
                }
            }
            t *= 0.25;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            return Minimum {
                x,
                value: fx,
                gradient: gx,
                iterations: iter,
                status: Status::LineSearchFailed,
            };
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if first_step {
                let scale = sy / dot(&y, &y);
                h = identity(n);
                h.iter_mut().for_each(|v| *v *= scale);
                first_step = false;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
        x = x_new;
        fx = f_new;
        gx = g_new;
    }
    let status = if norm(&gx) <= tol * (1.0 + fx.abs()) {
        Status::Converged
    } else {
        Status::MaxIterations
    };
    Minimum {
        x,
        value: fx,
        gradient: gx,
        iterations: max_iters,
        status,
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| dot(&m[i * n..(i + 1) * n], v)).collect()
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] +=
                (1.0 + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

/// Nelder–Mead simplex minimization with initial simplex steps
/// `step · max(1, |x0_i|)`. Returns the best vertex.
pub fn nelder_mead<F>(f: F, x0: &[f64], step: f64, max_evals: usize, ftol: f64) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> Option<f64>,
{
    let n = x0.len();
    let eval = |x: &[f64]| f(x).filter(|v| v.is_finite()).unwrap_or(f64::INFINITY);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step * x0[i].abs().max(1.0);
        let fv = eval(&v);
        simplex.push((v, fv));
    }
    let mut evals = n + 1;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if (worst - best).abs() <= ftol * (1.0 + best.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|p| p.0[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = eval(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe);
            evals += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(0.5);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = eval(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for p in simplex.iter_mut().skip(1) {
                    let v: Vec<f64> =
                        p.0.iter()
                            .zip(&x_best)
                            .map(|(a, b)| b + 0.5 * (a - b))
                            .collect();
                    p.1 = eval(&v);
                    p.0 = v;
                }
                evals += n;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}
