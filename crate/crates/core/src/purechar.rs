//! Pure characteristics demand.
//!
//! There is no additive logit shock. For consumer `i` every product's utility
//! is a line in the scalar coefficient `t = ν⁽¹⁾ ~ N(0, 1)`:
//! `x_j + z_j⁽⁻¹⁾'ν_i⁽⁻¹⁾ + z_j⁽¹⁾·t`, and the outside option is the zero
//! line. Shares are normal masses of the intervals each product owns on the
//! upper envelope, welfare is the normal moment of the envelope, and the
//! Jacobian collects the density flux through each breakpoint.

use nalgebra::{DMatrix, DVector};

use crate::envelope::{crossing, hull_segments, sweep_sorted, Line, Owner};
use crate::error::{Error, Result};
use crate::logit::check_finite;
use crate::model::{DemandModel, MeanUtility, ModelEvaluation, ShareVector};
use crate::normal;
use crate::par;
use crate::rng::{self, Stream};

#[derive(Clone, Debug)]
pub struct PureCharMarket {
    /// `J × M`; column 0 holds the slopes `z_j⁽¹⁾`.
    z: DMatrix<f64>,
    /// `n × (M − 1)` draws of the simulated coefficients.
    nu_rest: DMatrix<f64>,
    beta: DVector<f64>,
    /// `z_j⁽⁻¹⁾'ν_i⁽⁻¹⁾`, row-major `n × J`.
    offsets: Vec<f64>,
    /// Products and the outside option ordered by `(slope, owner)`.
    order: Vec<Owner>,
}

impl PureCharMarket {
    pub fn new(z: DMatrix<f64>, nu_rest: DMatrix<f64>, beta: DVector<f64>) -> Result<Self> {
        let (products, dim) = z.shape();
        if products == 0 {
            return Err(Error::invalid("pure characteristics market needs J ≥ 1"));
        }
        if dim < 2 {
            return Err(Error::invalid(format!(
                "pure characteristics market needs M ≥ 2 attributes, got {dim}"
            )));
        }
        if nu_rest.nrows() == 0 {
            return Err(Error::invalid("pure characteristics market needs n ≥ 1 consumer draws"));
        }
        if nu_rest.ncols() != dim - 1 {
            return Err(Error::dimension("consumer draws (columns)", dim - 1, nu_rest.ncols()));
        }
        if beta.len() != dim {
            return Err(Error::dimension("beta", dim, beta.len()));
        }
        if beta[0] != 1.0 {
            return Err(Error::invalid(format!(
                "the first taste coefficient is normalized to 1, got {}",
                beta[0]
            )));
        }
        check_finite("attributes z", z.as_slice())?;
        check_finite("consumer draws nu", nu_rest.as_slice())?;
        check_finite("beta", beta.as_slice())?;

        let rest = z.columns(1, dim - 1);
        let product = &nu_rest * rest.transpose();
        let offsets = (0..product.nrows())
            .flat_map(|i| (0..products).map(move |j| (i, j)))
            .map(|(i, j)| product[(i, j)])
            .collect();

        let slope = |o: &Owner| match *o {
            Owner::Product(j) => z[(j, 0)],
            Owner::Outside => 0.0,
        };
        let mut order: Vec<Owner> = (0..products).map(Owner::Product).chain([Owner::Outside]).collect();
        order.sort_by(|p, q| slope(p).total_cmp(&slope(q)).then(p.cmp(q)));

        Ok(Self {
            z,
            nu_rest,
            beta,
            offsets,
            order,
        })
    }

    pub fn attributes(&self) -> usize {
        self.z.ncols()
    }

    pub fn consumers(&self) -> usize {
        self.nu_rest.nrows()
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn nu_rest(&self) -> &DMatrix<f64> {
        &self.nu_rest
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn slope(&self, j: usize) -> f64 {
        self.z[(j, 0)]
    }

    /// `z_j⁽⁻¹⁾'ν_i⁽⁻¹⁾` for consumer `i`.
    pub fn offset_row(&self, i: usize) -> &[f64] {
        let j = self.z.nrows();
        &self.offsets[i * j..(i + 1) * j]
    }

    pub fn true_mean_utility(&self) -> MeanUtility {
        MeanUtility::from_vector(&self.z * &self.beta).expect("finite by construction")
    }

    /// Consumer `i`'s lines at mean utilities `x`, in sweep order.
    fn consumer_lines<'a>(&'a self, x: &'a [f64], i: usize) -> impl Iterator<Item = Line> + 'a {
        let offsets = self.offset_row(i);
        self.order.iter().map(move |&owner| match owner {
            Owner::Product(j) => Line::new(owner, x[j] + offsets[j], self.z[(j, 0)]),
            Owner::Outside => Line::new(owner, 0.0, 0.0),
        })
    }
}

/// Normal tails at a breakpoint, each taken from the side that keeps it precise.
#[derive(Clone, Copy)]
struct Tails {
    cdf: f64,
    sf: f64,
    pdf: f64,
}

impl Tails {
    fn at(t: f64) -> Self {
        if t >= 0.0 {
            let sf = normal::sf(t);
            Tails {
                cdf: 1.0 - sf,
                sf,
                pdf: normal::pdf(t),
            }
        } else {
            let cdf = normal::cdf(t);
            Tails {
                cdf,
                sf: 1.0 - cdf,
                pdf: normal::pdf(t),
            }
        }
    }
}

fn segment_mass(lower: f64, upper: f64, lo: Tails, hi: Tails) -> f64 {
    if upper <= lower {
        0.0
    } else if lower >= 0.0 {
        lo.sf - hi.sf
    } else if upper <= 0.0 {
        hi.cdf - lo.cdf
    } else {
        1.0 - lo.cdf - hi.sf
    }
}

struct Partial {
    welfare: f64,
    outside: f64,
    shares: Vec<f64>,
    /// Row-major `J × J`, upper triangle only.
    jac: Vec<f64>,
}

impl Partial {
    fn absorb(&mut self, other: Partial) {
        self.welfare += other.welfare;
        self.outside += other.outside;
        for (a, b) in self.shares.iter_mut().zip(other.shares) {
            *a += b;
        }
        for (a, b) in self.jac.iter_mut().zip(other.jac) {
            *a += b;
        }
    }
}

impl DemandModel for PureCharMarket {
    fn products(&self) -> usize {
        self.z.nrows()
    }

    fn evaluate(&self, x: &MeanUtility, want_jacobian: bool) -> Result<ModelEvaluation> {
        self.check_dimension(x)?;
        let products = self.products();
        let n = self.consumers();
        let x = x.as_slice();

        let chunk = |range: std::ops::Range<usize>| {
            let mut part = Partial {
                welfare: 0.0,
                outside: 0.0,
                shares: vec![0.0; products],
                jac: if want_jacobian {
                    vec![0.0; products * products]
                } else {
                    Vec::new()
                },
            };
            let mut hull = Vec::with_capacity(products + 1);
            for i in range {
                sweep_sorted(self.consumer_lines(x, i), &mut hull);
                let mut lo = Tails::at(f64::NEG_INFINITY);
                for seg in hull_segments(&hull) {
                    let hi = Tails::at(seg.upper);
                    let mass = segment_mass(seg.lower, seg.upper, lo, hi);
                    part.welfare += seg.intercept * mass + seg.slope * (lo.pdf - hi.pdf);
                    match seg.owner {
                        Owner::Product(j) => part.shares[j] += mass,
                        Owner::Outside => part.outside += mass,
                    }
                    lo = hi;
                }
                if want_jacobian {
                    for pair in hull.windows(2) {
                        let (left, right) = (&pair[0], &pair[1]);
                        let w = normal::pdf(crossing(left, right)) / (right.slope - left.slope);
                        match (left.owner, right.owner) {
                            (Owner::Product(p), Owner::Product(q)) => {
                                part.jac[p * products + p] += w;
                                part.jac[q * products + q] += w;
                                let (a, b) = if p < q { (p, q) } else { (q, p) };
                                part.jac[a * products + b] -= w;
                            }
                            (Owner::Product(p), Owner::Outside) | (Owner::Outside, Owner::Product(p)) => {
                                part.jac[p * products + p] += w;
                            }
                            (Owner::Outside, Owner::Outside) => {}
                        }
                    }
                }
            }
            part
        };
        let total = par::ordered_chunk_fold(n, par::CHUNK, chunk, Partial::absorb).expect("n ≥ 1 by construction");

        let scale = 1.0 / n as f64;
        let shares = DVector::from_iterator(products, total.shares.iter().map(|s| s * scale));
        let jacobian = want_jacobian.then(|| {
            DMatrix::from_fn(products, products, |j, k| {
                let (lo, hi) = if j <= k { (j, k) } else { (k, j) };
                total.jac[lo * products + hi] * scale
            })
        });
        Ok(ModelEvaluation {
            welfare: total.welfare * scale,
            shares: ShareVector::from_model(shares),
            outside_share: total.outside * scale,
            jacobian,
        })
    }
}

#[derive(Clone, Debug)]
pub struct PureCharInstance {
    pub market: PureCharMarket,
    pub x_star: MeanUtility,
    pub sigma_star: ShareVector,
}

/// Draws `β⁽⁻¹⁾ ~ U[0,1]^{M−1}` (with `β⁽¹⁾ = 1`), `z_j ~ N(0, I_M)` and
/// `ν_i⁽⁻¹⁾ ~ N(0, I_{M−1})`; sets `x* = zβ`, `σ* = σ(x*)`. Degenerate
/// targets with zero or near-zero shares are kept as drawn.
pub fn make_purechar_instance(products: usize, dim: usize, consumers: usize, seed: u64) -> Result<PureCharInstance> {
    if products == 0 || consumers == 0 {
        return Err(Error::invalid("J and n must be at least 1"));
    }
    if dim < 2 {
        return Err(Error::invalid(format!(
            "pure characteristics model needs M ≥ 2, got {dim}"
        )));
    }
    let mut beta = vec![1.0];
    beta.extend(rng::uniform_vec(&mut rng::stream(seed, Stream::Beta), dim - 1));
    let z = rng::normal_matrix(&mut rng::stream(seed, Stream::Attributes), products, dim);
    let nu_rest = rng::normal_matrix(&mut rng::stream(seed, Stream::Draws), consumers, dim - 1);
    let market = PureCharMarket::new(z, nu_rest, DVector::from_vec(beta))?;
    let x_star = market.true_mean_utility();
    let sigma_star = market.evaluate(&x_star, false)?.shares;
    Ok(PureCharInstance {
        market,
        x_star,
        sigma_star,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{asymmetry, finite_difference_gradient, min_symmetric_eigenvalue};
    use approx::assert_abs_diff_eq;

    fn single_product(slope: f64, offset_coef: f64) -> PureCharMarket {
        PureCharMarket::new(
            DMatrix::from_row_slice(1, 2, &[slope, offset_coef]),
            DMatrix::from_row_slice(2, 1, &[0.7, -1.3]),
            DVector::from_vec(vec![1.0, 0.5]),
        )
        .unwrap()
    }

    #[test]
    fn unit_slope_at_origin() {
        let m = single_product(1.0, 0.0);
        let ev = m.evaluate(&MeanUtility::zeros(1), true).unwrap();
        let phi0 = 0.398_942_280_401_432_7;
        assert_abs_diff_eq!(ev.shares.as_slice()[0], 0.5, epsilon = 1e-16);
        assert_abs_diff_eq!(ev.welfare, phi0, epsilon = 1e-15);
        assert_abs_diff_eq!(ev.jacobian.unwrap()[(0, 0)], phi0, epsilon = 1e-15);
        assert_abs_diff_eq!(ev.outside_share, 0.5, epsilon = 1e-16);
    }

    #[test]
    fn far_left_product_is_absent() {
        let m = single_product(1.0, 0.0);
        let ev = m.evaluate(&MeanUtility::new(vec![-40.0]).unwrap(), true).unwrap();
        assert_eq!(ev.shares.as_slice()[0], 0.0);
        assert!(ev.jacobian.unwrap()[(0, 0)] < 1e-300);
        assert_eq!(ev.outside_share, 1.0);
    }

    #[test]
    fn requires_two_attributes() {
        let err = PureCharMarket::new(DMatrix::zeros(2, 1), DMatrix::zeros(3, 0), DVector::from_vec(vec![1.0]));
        assert!(err.is_err());
        assert!(make_purechar_instance(3, 1, 10, 0).is_err());
        let bad_beta = PureCharMarket::new(
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 1),
            DVector::from_vec(vec![0.5, 0.5]),
        );
        assert!(bad_beta.is_err());
    }

    #[test]
    fn single_consumer_single_product_closed_form() {
        for seed in 0..10 {
            let inst = make_purechar_instance(1, 2, 1, seed).unwrap();
            let m = &inst.market;
            let c = inst.x_star.as_slice()[0] + m.z()[(0, 1)] * m.nu_rest()[(0, 0)];
            let b = m.z()[(0, 0)];
            let expected = normal::cdf(c / b.abs());
            assert_abs_diff_eq!(inst.sigma_star.as_slice()[0], expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn shares_and_outside_partition_unity() {
        let inst = make_purechar_instance(10, 5, 300, 9).unwrap();
        for shift in [-3.0, 0.0, 2.5] {
            let x: Vec<f64> = inst.x_star.as_slice().iter().map(|v| v + shift).collect();
            let ev = inst.market.evaluate(&MeanUtility::new(x).unwrap(), true).unwrap();
            let total = ev.shares.as_vector().sum() + ev.outside_share;
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-14);
            assert!(ev.welfare >= 0.0);
            let jac = ev.jacobian.unwrap();
            assert!(asymmetry(&jac) <= 1e-10);
            assert!(min_symmetric_eigenvalue(&jac) >= -1e-8);
            for j in 0..10 {
                assert!(jac.row(j).sum() >= -1e-15);
            }
        }
    }

    #[test]
    fn jacobian_matches_share_differences() {
        let inst = make_purechar_instance(5, 3, 30, 21).unwrap();
        let x = inst.x_star.as_vector().map(|v| v + 0.1);
        let ev = inst
            .market
            .evaluate(&MeanUtility::from_vector(x.clone()).unwrap(), true)
            .unwrap();
        let jac = ev.jacobian.unwrap();
        let h = 1e-5;
        for k in 0..5 {
            let mut up = x.clone();
            up[k] += h;
            let mut down = x.clone();
            down[k] -= h;
            let su = inst
                .market
                .evaluate(&MeanUtility::from_vector(up).unwrap(), false)
                .unwrap()
                .shares;
            let sd = inst
                .market
                .evaluate(&MeanUtility::from_vector(down).unwrap(), false)
                .unwrap()
                .shares;
            for j in 0..5 {
                let fd = (su.as_slice()[j] - sd.as_slice()[j]) / (2.0 * h);
                assert_abs_diff_eq!(jac[(j, k)], fd, epsilon = 1e-5);
            }
        }
        let fd = finite_difference_gradient(&inst.market, &MeanUtility::from_vector(x).unwrap(), 1e-5).unwrap();
        assert!((fd - ev.shares.as_vector()).amax() <= 1e-7);
    }

    #[test]
    fn generation_is_deterministic_and_normalized() {
        let a = make_purechar_instance(10, 5, 100, 4).unwrap();
        let b = make_purechar_instance(10, 5, 100, 4).unwrap();
        assert_eq!(a.sigma_star, b.sigma_star);
        assert_eq!(a.market.z(), b.market.z());
        assert_eq!(a.market.beta()[0], 1.0);
        assert!(a.market.beta().iter().skip(1).all(|&v| (0.0..1.0).contains(&v)));
    }
}
