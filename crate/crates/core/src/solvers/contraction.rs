use nalgebra::DVector;

use super::{check_problem, EvalCounts, InversionResult, Method, Progress, SolverConfig, Status};
use crate::error::{Error, Result};
use crate::model::{DemandModel, MeanUtility, ShareVector};

/// BLP contraction `x ← x + log σ* − log σ(x)`, one share evaluation per
/// iteration. The target must be strictly interior.
pub fn contraction_invert<M: DemandModel + ?Sized>(
    model: &M,
    sigma_star: &ShareVector,
    x0: &MeanUtility,
    cfg: &SolverConfig,
) -> Result<InversionResult> {
    check_problem(model, sigma_star, x0, cfg)?;
    if let Some(index) = sigma_star.first_zero() {
        return Err(Error::UnsupportedTarget(format!(
            "coordinate {index} of the target is zero; the contraction takes its logarithm"
        )));
    }
    if sigma_star.as_vector().sum() >= 1.0 {
        return Err(Error::UnsupportedTarget(
            "target leaves no outside share; the contraction needs Σσ* < 1".into(),
        ));
    }
    let log_target = sigma_star.as_vector().map(f64::ln);

    let mut x = x0.as_vector().clone();
    let mut shares = model.evaluate(x0, false)?.shares.as_vector().clone();
    let mut counts = EvalCounts {
        shares: 1,
        ..EvalCounts::default()
    };
    let residual = |s: &DVector<f64>| (s - sigma_star.as_vector()).amax();
    let mut progress = Progress::start(Method::Contraction, &x, residual(&shares), counts);

    let status = loop {
        if progress.best_error() <= cfg.gradient_tolerance {
            break Status::Converged;
        }
        if progress.iterations >= cfg.max_iterations {
            break Status::MaxIterations;
        }
        if shares.iter().any(|&s| s <= 0.0) {
            break Status::Diverged;
        }
        x += &log_target - shares.map(f64::ln);
        let Ok(point) = MeanUtility::from_vector(x.clone()) else {
            break Status::Diverged;
        };
        shares = model.evaluate(&point, false)?.shares.as_vector().clone();
        counts.shares += 1;
        progress.counts = counts;
        progress.accept(&x, residual(&shares));
    };
    Ok(progress.finish(status))
}
