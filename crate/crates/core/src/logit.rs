//! Random-coefficients logit.
//!
//! Consumer `i` has utility `x_j + z_j'ν_i + ε_ij` for product `j` with
//! i.i.d. Gumbel `ε`, and the outside option has utility `ε_i0`. Averaging
//! over the `n` simulated `ν_i` gives closed forms for welfare, shares and
//! the share Jacobian.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{DemandModel, MeanUtility, ModelEvaluation, ShareVector, EULER_GAMMA};
use crate::par;
use crate::rng::{self, Stream};

#[derive(Clone, Debug)]
pub struct LogitMarket {
    z: DMatrix<f64>,
    nu: DMatrix<f64>,
    beta: DVector<f64>,
    /// `z_q'ν_i`, row-major `n × J`.
    taste: Vec<f64>,
}

impl LogitMarket {
    /// `z` is `J × M`, `nu` is `n × M`, `beta` has length `M`.
    pub fn new(z: DMatrix<f64>, nu: DMatrix<f64>, beta: DVector<f64>) -> Result<Self> {
        let (products, dim) = z.shape();
        if products == 0 || dim == 0 {
            return Err(Error::invalid("logit market needs J ≥ 1 and M ≥ 1"));
        }
        if nu.nrows() == 0 {
            return Err(Error::invalid("logit market needs n ≥ 1 consumer draws"));
        }
        if nu.ncols() != dim {
            return Err(Error::dimension("consumer draws (columns)", dim, nu.ncols()));
        }
        if beta.len() != dim {
            return Err(Error::dimension("beta", dim, beta.len()));
        }
        check_finite("attributes z", z.as_slice())?;
        check_finite("consumer draws nu", nu.as_slice())?;
        check_finite("beta", beta.as_slice())?;

        let product = &nu * z.transpose();
        let taste = (0..product.nrows())
            .flat_map(|i| (0..products).map(move |q| (i, q)))
            .map(|(i, q)| product[(i, q)])
            .collect();
        Ok(Self { z, nu, beta, taste })
    }

    pub fn attributes(&self) -> usize {
        self.z.ncols()
    }

    pub fn consumers(&self) -> usize {
        self.nu.nrows()
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn nu(&self) -> &DMatrix<f64> {
        &self.nu
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    /// `x* = zβ`.
    pub fn true_mean_utility(&self) -> MeanUtility {
        MeanUtility::from_vector(&self.z * &self.beta).expect("finite by construction")
    }

    /// `z_q'ν_i` for consumer `i`.
    pub fn taste_row(&self, i: usize) -> &[f64] {
        let j = self.z.nrows();
        &self.taste[i * j..(i + 1) * j]
    }
}

pub(crate) fn check_finite(what: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}

/// Choice probabilities of one consumer with utilities `v` and the outside
/// option at zero, computed after subtracting `shift` from every exponent.
/// Any `shift ≥ max(0, max v)` is overflow-safe. Returns
/// `(log(1 + Σ exp v), outside probability)`.
pub fn consumer_choice(v: &[f64], shift: f64, probs: &mut [f64]) -> (f64, f64) {
    let outside = (-shift).exp();
    let mut denom = outside;
    for (p, &u) in probs.iter_mut().zip(v) {
        *p = (u - shift).exp();
        denom += *p;
    }
    for p in probs.iter_mut() {
        *p /= denom;
    }
    (shift + denom.ln(), outside / denom)
}

struct Partial {
    welfare: f64,
    outside: f64,
    shares: Vec<f64>,
    /// Row-major `J × J`; only the upper triangle is filled.
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

impl DemandModel for LogitMarket {
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
            let mut v = vec![0.0; products];
            let mut probs = vec![0.0; products];
            for i in range {
                let mut shift = 0.0_f64;
                for ((vq, &xq), &tq) in v.iter_mut().zip(x).zip(self.taste_row(i)) {
                    *vq = xq + tq;
                    shift = shift.max(*vq);
                }
                let (log_sum, outside) = consumer_choice(&v, shift, &mut probs);
                part.welfare += log_sum;
                part.outside += outside;
                for (s, &p) in part.shares.iter_mut().zip(&probs) {
                    *s += p;
                }
                if want_jacobian {
                    for j in 0..products {
                        let pj = probs[j];
                        if pj == 0.0 {
                            continue;
                        }
                        let row = &mut part.jac[j * products..(j + 1) * products];
                        row[j] += pj * (1.0 - pj);
                        for k in j + 1..products {
                            row[k] -= pj * probs[k];
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
            welfare: total.welfare * scale + EULER_GAMMA,
            shares: ShareVector::from_model(shares),
            outside_share: total.outside * scale,
            jacobian,
        })
    }
}

/// A generated market together with its true mean utilities and shares.
#[derive(Clone, Debug)]
pub struct LogitInstance {
    pub market: LogitMarket,
    pub x_star: MeanUtility,
    pub sigma_star: ShareVector,
}

/// Draws `β ~ U[0,1]^M`, `z_j ~ N(0, I_M)`, `ν_i ~ N(0, I_M)` from seeded
/// streams and sets `x* = zβ`, `σ* = σ(x*)`.
pub fn make_logit_instance(products: usize, dim: usize, consumers: usize, seed: u64) -> Result<LogitInstance> {
    if products == 0 || dim == 0 || consumers == 0 {
        return Err(Error::invalid("J, M and n must all be at least 1"));
    }
    let beta = DVector::from_vec(rng::uniform_vec(&mut rng::stream(seed, Stream::Beta), dim));
    let z = rng::normal_matrix(&mut rng::stream(seed, Stream::Attributes), products, dim);
    let nu = rng::normal_matrix(&mut rng::stream(seed, Stream::Draws), consumers, dim);
    let market = LogitMarket::new(z, nu, beta)?;
    let x_star = market.true_mean_utility();
    let sigma_star = market.evaluate(&x_star, false)?.shares;
    Ok(LogitInstance {
        market,
        x_star,
        sigma_star,
    })
}
