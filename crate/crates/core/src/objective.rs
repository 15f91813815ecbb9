//! The training objective: chain-averaged OVE negative log-likelihood plus
//! the β-weighted KL penalty ‖μ_θ − μ‖², with analytic gradients with
//! respect to the fine-tuned logits.
//!
//! Three objective modes share the loop so comparisons isolate the
//! objective itself:
//!
//! - `softmax`   — plain cross-entropy on μ_θ;
//! - `ove`       — OVE negative log-likelihood on μ_θ, no augmentation;
//! - `ove_pg`    — the full path: ω from the frozen prior, conjugate
//!   posterior over ψ, M reparameterized draws, OVE nll per draw.
//!
//! All modes add the same β‖μ_θ − μ‖² penalty. Gradients reach θ only
//! through the posterior mean (the variance is θ-independent), i.e.
//! ∂ψ_draw/∂ψ_θ = variance·α/2 elementwise, then
//! `∂ψ_θ[n,i,j]/∂μ_θ[n,k] = δ_ik − δ_jk` scatters back to logits.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ove::{build_kappa, build_psi, Logits, OneHotLabels, PairwiseTensor, softmax_probability};
use crate::pg::TruncationPolicy;
use crate::posterior::{omega_update, posterior_params, reparameterize, OmegaMode, PriorPrecision};
use crate::rng::{tags, RngState};
use crate::scalar::Scalar;

/// Which loss drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    Softmax,
    Ove,
    OvePg,
}

impl std::fmt::Display for ObjectiveMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ObjectiveMode::Softmax => "softmax",
            ObjectiveMode::Ove => "ove",
            ObjectiveMode::OvePg => "ove_pg",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ObjectiveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Self::Softmax),
            "ove" => Ok(Self::Ove),
            "ove_pg" => Ok(Self::OvePg),
            other => Err(Error::Parameter(format!(
                "unknown objective '{other}' (softmax|ove|ove_pg)"
            ))),
        }
    }
}

/// Hyperparameters of one objective evaluation.
#[derive(Debug, Clone, Copy)]
pub struct ElboConfig<F> {
    pub alpha: PriorPrecision<F>,
    pub beta: F,
    pub chains: usize,
    pub omega_mode: OmegaMode,
    pub truncation: TruncationPolicy,
    /// Diagnostic multiplier on the likelihood term; 1 for training.
    pub nll_weight: F,
    /// Diagnostic switch forcing ε = 0 in the reparameterized draw.
    pub zero_noise: bool,
}

impl<F: Scalar> ElboConfig<F> {
    pub fn new(alpha: F, beta: F, chains: usize, omega_mode: OmegaMode) -> Result<Self> {
        if beta < F::zero() || !beta.is_finite() {
            return Err(Error::Parameter(format!("beta must be nonnegative, got {beta}")));
        }
        if chains < 1 {
            return Err(Error::Parameter("need at least one chain".into()));
        }
        Ok(Self {
            alpha: PriorPrecision::new(alpha)?,
            beta,
            chains,
            omega_mode,
            truncation: TruncationPolicy::default(),
            nll_weight: F::one(),
            zero_noise: false,
        })
    }
}

/// Loss components of one objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown<F> {
    pub nll: F,
    pub kl: F,
    pub total: F,
    pub per_chain_nll: Vec<F>,
}

/// ∂total/∂μ_θ.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGradient<F> {
    values: Array2<F>,
}

impl<F: Scalar> LogitGradient<F> {
    /// Wrap an externally computed ∂loss/∂logits (custom losses, tests).
    pub fn new(values: Array2<F>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &Array2<F> {
        &self.values
    }

    pub fn into_values(self) -> Array2<F> {
        self.values
    }
}

/// OVE negative log-likelihood of a (possibly sampled) pairwise tensor:
/// per-sample mean of `−Σ_c y[n,c]·Σ_{j≠c} log σ(ψ[n,c,j])`, diagonal terms
/// excluded.
pub fn nll_loss<F: Scalar>(psi_draw: &PairwiseTensor<F>, labels: &OneHotLabels) -> Result<F> {
    let (n, c) = (psi_draw.samples(), psi_draw.classes());
    if labels.samples() != n || labels.classes() != c {
        return Err(Error::Input(format!(
            "psi is {n}x{c}x{c} but labels are {}x{}",
            labels.samples(),
            labels.classes()
        )));
    }
    let v = psi_draw.values();
    let mut total = F::zero();
    for (s, &class) in labels.class_indices().iter().enumerate() {
        for j in 0..c {
            if j != class {
                total -= v[(s, class, j)].log_sigmoid();
            }
        }
    }
    Ok(total / F::real(n as f64))
}

/// β·Σ(μ_θ − μ)², summed over all n×C entries.
pub fn kl_penalty<F: Scalar>(mu_theta: &Logits<F>, mu: &Logits<F>, beta: F) -> Result<F> {
    if mu_theta.values().raw_dim() != mu.values().raw_dim() {
        return Err(Error::Input(format!(
            "logit shapes differ: {:?} vs {:?}",
            mu_theta.values().shape(),
            mu.values().shape()
        )));
    }
    if beta < F::zero() || !beta.is_finite() {
        return Err(Error::Parameter(format!("beta must be nonnegative, got {beta}")));
    }
    let mut acc = F::zero();
    for (&a, &b) in mu_theta.values().iter().zip(mu.values().iter()) {
        let d = a - b;
        acc += d * d;
    }
    Ok(beta * acc)
}

/// Scatter a per-comparison loss derivative back onto logits through
/// ∂ψ[n,i,j]/∂μ[n,k] = δ_ik − δ_jk.
#[inline]
fn scatter_pair<F: Scalar>(grad: &mut Array2<F>, s: usize, i: usize, j: usize, d: F) {
    grad[(s, i)] += d;
    grad[(s, j)] -= d;
}

/// The full OVE-PG objective: for each of M chains draw ω (or fix its
/// mean), form the conjugate posterior over ψ, draw reparameterized
/// samples with chain-specific noise, and accumulate the OVE nll; average
/// over chains and add the KL penalty.
///
/// The returned gradient is exact for the stochasticity realized in this
/// call (ω and ε fixed), which is what the frozen-noise finite-difference
/// oracle checks.
pub fn elbo_step<F: Scalar>(
    mu_theta: &Logits<F>,
    mu: &Logits<F>,
    labels: &OneHotLabels,
    cfg: &ElboConfig<F>,
    state: &RngState,
) -> Result<(LossBreakdown<F>, LogitGradient<F>)> {
    if cfg.chains < 1 {
        return Err(Error::Parameter("need at least one chain".into()));
    }
    check_shapes(mu_theta, mu, labels)?;
    let (n, c) = (mu_theta.samples(), mu_theta.classes());
    let n_f = F::real(n as f64);

    let psi_prior = build_psi(mu);
    let psi_theta = build_psi(mu_theta);
    let kappa = build_kappa(labels);
    let half_alpha = cfg.alpha.alpha() / F::two();

    // Mean-mode ω is chain-independent; compute it once.
    let shared_omega = match cfg.omega_mode {
        OmegaMode::Mean => Some(omega_update(
            &psi_prior,
            OmegaMode::Mean,
            &cfg.truncation,
            state,
        )?),
        OmegaMode::Sample => None,
    };

    let class_of = labels.class_indices();
    let mut per_chain_nll = Vec::with_capacity(cfg.chains);
    let mut grad_nll: Array2<F> = Array2::zeros((n, c));

    for m in 0..cfg.chains {
        let omega = match &shared_omega {
            Some(w) => w.clone(),
            None => omega_update(
                &psi_prior,
                OmegaMode::Sample,
                &cfg.truncation,
                &state.substream(&[tags::CHAIN_OMEGA, m as u64]),
            )?,
        };
        let post = posterior_params(&psi_theta, &omega, &kappa, cfg.alpha)?;
        let noise = if cfg.zero_noise {
            Array3::zeros((n, c, c))
        } else {
            let mut rng = state.substream(&[tags::CHAIN_NOISE, m as u64]).rng();
            let mut e = Array3::zeros((n, c, c));
            for v in e.iter_mut() {
                *v = F::draw_standard_normal(&mut rng);
            }
            e
        };
        let psi_draw = reparameterize(&post, &noise);

        per_chain_nll.push(cfg.nll_weight * nll_loss(&psi_draw, labels)?);

        // d nll / d psi_draw[s,class,j] = −(1/n)·σ(−ψ_draw), then through
        // the θ-dependent posterior mean: × variance·α/2.
        let draw = psi_draw.values();
        let var = post.variance();
        for s in 0..n {
            let class = class_of[s];
            for j in 0..c {
                if j != class {
                    let d = -cfg.nll_weight / n_f
                        * (-draw[(s, class, j)]).sigmoid()
                        * var[(s, class, j)]
                        * half_alpha;
                    scatter_pair(&mut grad_nll, s, class, j, d);
                }
            }
        }
    }

    finish_step(mu_theta, mu, cfg, per_chain_nll, grad_nll)
}

/// Evaluate the configured objective mode. `softmax` and `ove` reuse the
/// same KL penalty and gradient plumbing so the mode is the only variable.
pub fn objective_step<F: Scalar>(
    mode: ObjectiveMode,
    mu_theta: &Logits<F>,
    mu: &Logits<F>,
    labels: &OneHotLabels,
    cfg: &ElboConfig<F>,
    state: &RngState,
) -> Result<(LossBreakdown<F>, LogitGradient<F>)> {
    match mode {
        ObjectiveMode::OvePg => elbo_step(mu_theta, mu, labels, cfg, state),
        ObjectiveMode::Ove => {
            check_shapes(mu_theta, mu, labels)?;
            let (n, c) = (mu_theta.samples(), mu_theta.classes());
            let n_f = F::real(n as f64);
            let psi_theta = build_psi(mu_theta);
            let nll = cfg.nll_weight * nll_loss(&psi_theta, labels)?;
            let mut grad_nll: Array2<F> = Array2::zeros((n, c));
            let v = psi_theta.values();
            for (s, &class) in labels.class_indices().iter().enumerate() {
                for j in 0..c {
                    if j != class {
                        let d = -cfg.nll_weight / n_f * (-v[(s, class, j)]).sigmoid();
                        scatter_pair(&mut grad_nll, s, class, j, d);
                    }
                }
            }
            finish_step(mu_theta, mu, cfg, vec![nll], grad_nll)
        }
        ObjectiveMode::Softmax => {
            check_shapes(mu_theta, mu, labels)?;
            let (n, c) = (mu_theta.samples(), mu_theta.classes());
            let n_f = F::real(n as f64);
            let probs = softmax_probability(mu_theta);
            let mut nll = F::zero();
            let mut grad_nll: Array2<F> = Array2::zeros((n, c));
            for (s, &class) in labels.class_indices().iter().enumerate() {
                nll -= probs[(s, class)].max(F::min_positive_value()).ln();
                for j in 0..c {
                    let y = if j == class { F::one() } else { F::zero() };
                    grad_nll[(s, j)] = cfg.nll_weight * (probs[(s, j)] - y) / n_f;
                }
            }
            nll = cfg.nll_weight * nll / n_f;
            finish_step(mu_theta, mu, cfg, vec![nll], grad_nll)
        }
    }
}

fn check_shapes<F: Scalar>(
    mu_theta: &Logits<F>,
    mu: &Logits<F>,
    labels: &OneHotLabels,
) -> Result<()> {
    if mu_theta.values().raw_dim() != mu.values().raw_dim() {
        return Err(Error::Input(format!(
            "tuned/prior logit shapes differ: {:?} vs {:?}",
            mu_theta.values().shape(),
            mu.values().shape()
        )));
    }
    if labels.samples() != mu_theta.samples() || labels.classes() != mu_theta.classes() {
        return Err(Error::Input(format!(
            "labels {}x{} do not match logits {}x{}",
            labels.samples(),
            labels.classes(),
            mu_theta.samples(),
            mu_theta.classes()
        )));
    }
    Ok(())
}

fn finish_step<F: Scalar>(
    mu_theta: &Logits<F>,
    mu: &Logits<F>,
    cfg: &ElboConfig<F>,
    per_chain_nll: Vec<F>,
    mut grad: Array2<F>,
) -> Result<(LossBreakdown<F>, LogitGradient<F>)> {
    let chains = F::real(per_chain_nll.len() as f64);
    let nll = per_chain_nll.iter().copied().sum::<F>() / chains;
    for g in grad.iter_mut() {
        *g /= chains;
    }
    let kl = kl_penalty(mu_theta, mu, cfg.beta)?;
    let two_beta = F::two() * cfg.beta;
    for ((g, &t), &p) in grad
        .iter_mut()
        .zip(mu_theta.values().iter())
        .zip(mu.values().iter())
    {
        *g += two_beta * (t - p);
    }
    let total = nll + kl;
    if !total.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss: nll={nll} kl={kl}")));
    }
    Ok((
        LossBreakdown {
            nll,
            kl,
            total,
            per_chain_nll,
        },
        LogitGradient { values: grad },
    ))
}
