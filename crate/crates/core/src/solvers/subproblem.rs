//! Trust-region subproblems `min g'p + ½p'Hp` subject to `‖p‖ ≤ Δ`.

use nalgebra::{DMatrix, DVector};

use crate::model::min_symmetric_eigenvalue;

/// Below this smallest-eigenvalue estimate the Hessian is treated as
/// singular and the dogleg gives way to Steihaug–CG.
pub const DOGLEG_MIN_EIGENVALUE: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct Step {
    pub direction: DVector<f64>,
    pub on_boundary: bool,
}

/// `−(g'p + ½p'Hp)`, the decrease promised by the quadratic model.
pub fn model_reduction(g: &DVector<f64>, h: &DMatrix<f64>, p: &DVector<f64>) -> f64 {
    -(g.dot(p) + 0.5 * p.dot(&(h * p)))
}

/// Minimizer of the model along `−g` inside the region.
pub fn cauchy_step(g: &DVector<f64>, h: &DMatrix<f64>, radius: f64) -> Step {
    let gnorm = g.norm();
    let curvature = g.dot(&(h * g));
    // Distance travelled along −g/‖g‖.
    let length = if curvature <= 0.0 {
        radius
    } else {
        radius.min(gnorm.powi(3) / curvature)
    };
    if gnorm == 0.0 || !length.is_finite() {
        return Step {
            direction: DVector::zeros(g.len()),
            on_boundary: false,
        };
    }
    Step {
        direction: g * (-length / gnorm),
        on_boundary: length == radius,
    }
}

/// Model decrease at the Cauchy point.
pub fn cauchy_reduction(g: &DVector<f64>, h: &DMatrix<f64>, radius: f64) -> f64 {
    model_reduction(g, h, &cauchy_step(g, h, radius).direction)
}

/// Smallest `τ ≥ 0` with `‖z + τd‖ = Δ`, for `‖z‖ ≤ Δ`.
fn to_boundary(z: &DVector<f64>, d: &DVector<f64>, radius: f64) -> f64 {
    let dd = d.norm_squared();
    let zd = z.dot(d);
    let zz = z.norm_squared();
    let disc = (zd * zd + dd * (radius * radius - zz)).max(0.0);
    (-zd + disc.sqrt()) / dd
}

/// Powell's dogleg. Returns `None` when `H` is not numerically positive
/// definite.
pub fn dogleg_step(g: &DVector<f64>, h: &DMatrix<f64>, radius: f64) -> Option<Step> {
    let newton = -h.clone().cholesky()?.solve(g);
    if !newton.iter().all(|v| v.is_finite()) {
        return None;
    }
    if newton.norm() <= radius {
        return Some(Step {
            direction: newton,
            on_boundary: false,
        });
    }
    let gnorm = g.norm();
    let curvature = g.dot(&(h * g));
    let cauchy = g * (-gnorm * gnorm / curvature);
    if cauchy.norm() >= radius {
        return Some(Step {
            direction: g * (-radius / gnorm),
            on_boundary: true,
        });
    }
    let leg = &newton - &cauchy;
    let tau = to_boundary(&cauchy, &leg, radius);
    Some(Step {
        direction: cauchy + leg * tau,
        on_boundary: true,
    })
}

/// Steihaug's truncated conjugate gradient. Handles indefinite and
/// singular `H` by running to the boundary along non-positive curvature.
pub fn steihaug_step(g: &DVector<f64>, h: &DMatrix<f64>, radius: f64) -> Step {
    let n = g.len();
    let gnorm = g.norm();
    let mut z = DVector::zeros(n);
    if gnorm == 0.0 {
        return Step {
            direction: z,
            on_boundary: false,
        };
    }
    // Forcing term min(½, ‖g‖) gives quadratic local convergence.
    let tol = gnorm * gnorm.min(0.5);
    let mut r = g.clone();
    let mut d = -g;
    for _ in 0..2 * n + 2 {
        let hd = h * &d;
        let curvature = d.dot(&hd);
        if curvature <= 0.0 {
            let tau = to_boundary(&z, &d, radius);
            return Step {
                direction: z + d * tau,
                on_boundary: true,
            };
        }
        let rr = r.norm_squared();
        let alpha = rr / curvature;
        let next = &z + &d * alpha;
        if next.norm() >= radius {
            let tau = to_boundary(&z, &d, radius);
            return Step {
                direction: z + d * tau,
                on_boundary: true,
            };
        }
        z = next;
        r += hd * alpha;
        if r.norm() <= tol {
            break;
        }
        let beta = r.norm_squared() / rr;
        d = -&r + d * beta;
    }
    Step {
        direction: z,
        on_boundary: false,
    }
}

/// Dogleg when `H` is safely positive definite, Steihaug–CG otherwise.
///
/// On badly conditioned `H` rounding can leave either step short of the
/// Cauchy decrease; the Cauchy point is returned in that case.
pub fn trust_region_step(g: &DVector<f64>, h: &DMatrix<f64>, radius: f64) -> Step {
    let step = if min_symmetric_eigenvalue(h) >= DOGLEG_MIN_EIGENVALUE {
        dogleg_step(g, h, radius).unwrap_or_else(|| steihaug_step(g, h, radius))
    } else {
        steihaug_step(g, h, radius)
    };
    let cauchy = cauchy_step(g, h, radius);
    if model_reduction(g, h, &step.direction) < model_reduction(g, h, &cauchy.direction) {
        cauchy
    } else {
        step
    }
}

/// Levenberg–Marquardt step for the Gauss–Newton model `½‖r + Jp‖²`:
/// `p = −(J'J + λI)⁻¹J'r` with the smallest `λ ≥ λ_min` that keeps
/// `‖p‖ ≤ Δ`.
pub fn levenberg_step(jac: &DMatrix<f64>, residual: &DVector<f64>, radius: f64, lambda_min: f64) -> Step {
    let grad = jac.transpose() * residual;
    let normal = jac.transpose() * jac;
    let eig = normal.symmetric_eigen();
    let mu = eig.eigenvalues.map(|v| v.max(0.0));
    let coef = eig.eigenvectors.transpose() * &grad;
    let step_norm = |lambda: f64| {
        coef.iter()
            .zip(mu.iter())
            .map(|(c, m)| (c / (m + lambda)).powi(2))
            .sum::<f64>()
            .sqrt()
    };

    let mut lambda = lambda_min;
    let mut on_boundary = false;
    if step_norm(lambda_min) > radius {
        on_boundary = true;
        let mut lo = lambda_min;
        // ‖p(λ)‖ ≤ ‖J'r‖/λ, so this bracket is feasible.
        let mut hi = (grad.norm() / radius).max(lambda_min * 2.0);
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if step_norm(mid) > radius {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi / lo - 1.0 < 1e-12 {
                break;
            }
        }
        lambda = hi;
    }
    let scaled = DVector::from_iterator(coef.len(), coef.iter().zip(mu.iter()).map(|(c, m)| -c / (m + lambda)));
    Step {
        direction: &eig.eigenvectors * scaled,
        on_boundary,
    }
}
