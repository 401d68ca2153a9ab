use nalgebra::DVector;

use super::subproblem::levenberg_step;
use super::{
    check_problem, radius_floor, update_radius, EvalCounts, InversionResult, Method, Progress, SolverConfig, Status,
};
use crate::error::Result;
use crate::model::{DemandModel, MeanUtility, ShareVector};

/// Trust region on `½‖σ(x) − σ*‖²` with a Gauss–Newton model and
/// Levenberg–Marquardt damping floored at `regularization_floor`. Uses no
/// welfare information, so it can stall where the share Jacobian is singular.
pub fn residual_trust_region_invert<M: DemandModel + ?Sized>(
    model: &M,
    sigma_star: &ShareVector,
    x0: &MeanUtility,
    cfg: &SolverConfig,
) -> Result<InversionResult> {
    check_problem(model, sigma_star, x0, cfg)?;
    let tick = |c: &mut EvalCounts| {
        c.shares += 1;
        c.jacobian += 1;
    };
    let target = sigma_star.as_vector();

    let mut x = x0.as_vector().clone();
    let ev = model.evaluate(x0, true)?;
    let mut residual: DVector<f64> = ev.shares.as_vector() - target;
    let mut jac = ev.jacobian.expect("requested");
    let mut counts = EvalCounts::default();
    tick(&mut counts);
    let mut progress = Progress::start(Method::ResidualTrustRegion, &x, residual.amax(), counts);
    let mut radius = cfg.initial_radius.min(cfg.radius_max);

    let status = loop {
        if progress.best_error() <= cfg.gradient_tolerance {
            break Status::Converged;
        }
        if progress.iterations >= cfg.max_iterations {
            break Status::MaxIterations;
        }
        if radius < radius_floor(&x) {
            break Status::Stalled;
        }
        let step = levenberg_step(&jac, &residual, radius, cfg.regularization_floor);
        let p = &step.direction;
        let jp = &jac * p;
        let predicted = -(residual.dot(&jp) + 0.5 * jp.norm_squared());
        if !(predicted > 0.0) {
            // J'r vanishes: a stationary point of the merit function.
            break Status::Stalled;
        }

        let trial = &x + p;
        let Ok(trial_point) = MeanUtility::from_vector(trial.clone()) else {
            radius = cfg.shrink_factor * radius.min(p.norm());
            continue;
        };
        let ev = model.evaluate(&trial_point, true)?;
        tick(&mut counts);
        progress.counts = counts;
        let trial_residual = ev.shares.as_vector() - target;

        let actual = 0.5 * (residual.norm_squared() - trial_residual.norm_squared());
        let rho = actual / predicted;
        radius = update_radius(cfg, radius, p.norm(), rho, step.on_boundary);

        if rho >= cfg.accept_ratio {
            x = trial;
            residual = trial_residual;
            jac = ev.jacobian.expect("requested");
            progress.accept(&x, residual.amax());
        }
    };
    Ok(progress.finish(status))
}
