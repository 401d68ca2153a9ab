use super::subproblem::{cauchy_reduction, model_reduction, trust_region_step};
use super::{
    check_problem, radius_floor, update_radius, EvalCounts, InversionResult, Method, Progress, SolverConfig, Status,
};
use crate::error::Result;
use crate::model::{convex_objective, DemandModel, MeanUtility, ShareVector};

/// Predicted reductions below this fraction of `1 + |f|` are swamped by
/// rounding in `f(x) − f(x + p)`; the actual reduction is then taken from
/// the trapezoid rule on the exact gradients, `−½(g + g₊)'p`.
const CANCELLATION_GUARD: f64 = 1e-10;

/// Trust-region Newton on `f(x) = U(x) − x'σ*` with gradient `σ(x) − σ*`
/// and the share Jacobian as Hessian. Each trial point costs one combined
/// welfare, share and Jacobian evaluation.
pub fn convex_trust_region_invert<M: DemandModel + ?Sized>(
    model: &M,
    sigma_star: &ShareVector,
    x0: &MeanUtility,
    cfg: &SolverConfig,
) -> Result<InversionResult> {
    check_problem(model, sigma_star, x0, cfg)?;
    let tick = |c: &mut EvalCounts| {
        c.welfare += 1;
        c.shares += 1;
        c.jacobian += 1;
    };

    let mut x = x0.as_vector().clone();
    let mut obj = convex_objective(model, sigma_star, x0, true)?;
    let mut counts = EvalCounts::default();
    tick(&mut counts);
    let mut progress = Progress::start(Method::ConvexTrustRegion, &x, obj.residual_norm(), counts);
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
        let hessian = obj.hessian.as_ref().expect("requested");
        let step = trust_region_step(&obj.gradient, hessian, radius);
        let p = &step.direction;
        let predicted = model_reduction(&obj.gradient, hessian, p);
        debug_assert!(
            predicted >= cauchy_reduction(&obj.gradient, hessian, radius),
            "subproblem step worse than the Cauchy point"
        );
        if !(predicted > 0.0) {
            break Status::Stalled;
        }

        let trial = &x + p;
        let Ok(trial_point) = MeanUtility::from_vector(trial.clone()) else {
            radius = cfg.shrink_factor * radius.min(p.norm());
            continue;
        };
        let candidate = convex_objective(model, sigma_star, &trial_point, true)?;
        tick(&mut counts);
        progress.counts = counts;

        let actual = if predicted < CANCELLATION_GUARD * (1.0 + obj.value.abs()) {
            -0.5 * (&obj.gradient + &candidate.gradient).dot(p)
        } else {
            obj.value - candidate.value
        };
        let rho = actual / predicted;
        radius = update_radius(cfg, radius, p.norm(), rho, step.on_boundary);

        if rho >= cfg.accept_ratio {
            x = trial;
            obj = candidate;
            progress.accept(&x, obj.residual_norm());
        }
    };
    Ok(progress.finish(status))
}
