//! Conjugate updates over the pairwise tensor: the Pólya-Gamma auxiliary ω
//! driven by the frozen prior model, and the diagonal Gaussian posterior
//! over ψ with reparameterized sampling.
//!
//! ω is a function of the prior model's ψ only, never of the fine-tuned
//! parameters; fixing it that way keeps each optimization step a single
//! conjugate update instead of a Gibbs alternation. The posterior over the
//! fine-tuned ψ is elementwise Gaussian with
//!
//! ```text
//! variance = 1/(α/2 + ω)          mean = variance · (α/2·ψ_θ + κ)
//! ```
//!
//! where the α/2 reflects the variance doubling of a difference of two
//! independent logits under the precision-α prior.

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::ove::{PairwiseRole, PairwiseTensor};
use crate::pg::{pg_mean, sample_pg, TruncationPolicy};
use crate::rng::RngState;
use crate::scalar::Scalar;

/// Precision α of the Gaussian prior over logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorPrecision<F>(F);

impl<F: Scalar> PriorPrecision<F> {
    pub fn new(alpha: F) -> Result<Self> {
        if alpha <= F::zero() || !alpha.is_finite() {
            return Err(Error::Parameter(format!(
                "prior precision must be positive and finite, got {alpha}"
            )));
        }
        Ok(Self(alpha))
    }

    pub fn alpha(&self) -> F {
        self.0
    }
}

/// Diagonal Gaussian over the fine-tuned pairwise tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGaussian<F> {
    mean: Array3<F>,
    variance: Array3<F>,
}

impl<F: Scalar> PosteriorGaussian<F> {
    pub fn mean(&self) -> &Array3<F> {
        &self.mean
    }

    pub fn variance(&self) -> &Array3<F> {
        &self.variance
    }
}

/// How ω is produced from the prior ψ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaMode {
    /// Elementwise posterior mean `tanh(ψ/2)/(2ψ)` (¼ at ψ = 0); the
    /// default, deterministic and cheap.
    Mean,
    /// Elementwise draw from PG(1, ψ).
    Sample,
}

/// The ω update from the frozen prior model's pairwise differences.
pub fn omega_update<F: Scalar>(
    psi_prior: &PairwiseTensor<F>,
    mode: OmegaMode,
    policy: &TruncationPolicy,
    state: &RngState,
) -> Result<PairwiseTensor<F>> {
    if psi_prior.role() != PairwiseRole::Psi {
        return Err(Error::Input(format!(
            "omega update expects a psi tensor, got {:?}",
            psi_prior.role()
        )));
    }
    let values = match mode {
        OmegaMode::Mean => {
            let mut out = psi_prior.values().clone();
            for v in out.iter_mut() {
                *v = pg_mean(F::one(), *v)?;
            }
            out
        }
        OmegaMode::Sample => sample_pg(F::one(), psi_prior.values(), policy, state)?,
    };
    Ok(PairwiseTensor::new(values, PairwiseRole::Omega))
}

/// Elementwise conjugate posterior parameters over the fine-tuned ψ.
pub fn posterior_params<F: Scalar>(
    psi_theta: &PairwiseTensor<F>,
    omega: &PairwiseTensor<F>,
    kappa: &PairwiseTensor<F>,
    alpha: PriorPrecision<F>,
) -> Result<PosteriorGaussian<F>> {
    let shape = psi_theta.values().raw_dim();
    if omega.values().raw_dim() != shape || kappa.values().raw_dim() != shape {
        return Err(Error::Input(format!(
            "shape mismatch: psi {:?}, omega {:?}, kappa {:?}",
            psi_theta.values().shape(),
            omega.values().shape(),
            kappa.values().shape()
        )));
    }
    let half_alpha = alpha.alpha() / F::two();
    let mut mean = Array3::zeros(shape);
    let mut variance = Array3::zeros(shape);
    for (((m, v), (&psi, &w)), &k) in mean
        .iter_mut()
        .zip(variance.iter_mut())
        .zip(psi_theta.values().iter().zip(omega.values().iter()))
        .zip(kappa.values().iter())
    {
        let var = F::one() / (half_alpha + w);
        *v = var;
        *m = var * (half_alpha * psi + k);
    }
    Ok(PosteriorGaussian { mean, variance })
}

/// Reparameterized draw: `ψ_draw = mean + √variance ⊙ ε`, ε standard
/// normal. The noise is returned so gradients can flow through the mean
/// with the draw's randomness held fixed.
pub fn sample_psi<F: Scalar>(
    post: &PosteriorGaussian<F>,
    state: &RngState,
) -> (PairwiseTensor<F>, Array3<F>) {
    let mut rng = state.rng();
    let mut noise = Array3::zeros(post.mean.raw_dim());
    for e in noise.iter_mut() {
        *e = F::draw_standard_normal(&mut rng);
    }
    let draw = reparameterize(post, &noise);
    (draw, noise)
}

/// Apply fixed noise to the posterior: the deterministic half of
/// [`sample_psi`], shared with the gradient path.
pub fn reparameterize<F: Scalar>(
    post: &PosteriorGaussian<F>,
    noise: &Array3<F>,
) -> PairwiseTensor<F> {
    let mut values = Array3::zeros(post.mean.raw_dim());
    for ((out, (&m, &v)), &e) in values
        .iter_mut()
        .zip(post.mean.iter().zip(post.variance.iter()))
        .zip(noise.iter())
    {
        *out = m + v.sqrt() * e;
    }
    PairwiseTensor::new(values, PairwiseRole::Psi)
}
