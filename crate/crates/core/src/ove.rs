//! One-vs-each machinery: the comparison tensor `A`, pairwise difference
//! tensors ψ and κ, OVE scores/probabilities, and the softmax baseline.
//!
//! The OVE approximation bounds each softmax class probability from below
//! by the product of sigmoids of pairwise logit differences,
//! `∏_{j≠c} σ(f_c − f_j)`. All runtime paths compute the pairwise tensor
//! implicitly as `ψ[n,i,j] = f[n,i] − f[n,j]`; the explicit `C×C×C`
//! comparison tensor with entries `A[i,j,k] = δ_ik − δ_jk` exists for tests
//! and the CLI inspector, where contracting it against logits must
//! reproduce the implicit path exactly.

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Class scores of a model over a batch: `n × C`, rows are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits<F> {
    values: Array2<F>,
}

impl<F: Scalar> Logits<F> {
    pub fn new(values: Array2<F>) -> Result<Self> {
        if values.ncols() < 2 {
            return Err(Error::Input(format!(
                "logits need at least 2 classes, got {}",
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite logit".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<F> {
        &self.values
    }

    pub fn samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn classes(&self) -> usize {
        self.values.ncols()
    }
}

/// One-hot labels over a batch: `n × C` in {0,1}, each row summing to 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OneHotLabels {
    values: Array2<u8>,
}

impl OneHotLabels {
    /// Validate an explicit 0/1 matrix.
    pub fn new(values: Array2<u8>) -> Result<Self> {
        for (n, row) in values.rows().into_iter().enumerate() {
            let mut ones = 0usize;
            for &v in row {
                match v {
                    0 => {}
                    1 => ones += 1,
                    other => {
                        return Err(Error::Input(format!(
                            "label row {n} contains {other}, not 0/1"
                        )))
                    }
                }
            }
            if ones != 1 {
                return Err(Error::Input(format!(
                    "label row {n} has {ones} ones, expected exactly 1"
                )));
            }
        }
        Ok(Self { values })
    }

    /// Build from class indices.
    pub fn from_classes(classes: &[usize], class_count: usize) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::Input("need at least 2 classes".into()));
        }
        let mut values = Array2::zeros((classes.len(), class_count));
        for (n, &c) in classes.iter().enumerate() {
            if c >= class_count {
                return Err(Error::LabelOutOfRange {
                    item: n,
                    label: c,
                    classes: class_count,
                });
            }
            values[(n, c)] = 1;
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<u8> {
        &self.values
    }

    pub fn samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn classes(&self) -> usize {
        self.values.ncols()
    }

    /// Class index per sample.
    pub fn class_indices(&self) -> Vec<usize> {
        self.values
            .rows()
            .into_iter()
            .map(|row| row.iter().position(|&v| v == 1).expect("validated one-hot"))
            .collect()
    }
}

/// What an `n × C × C` pairwise tensor holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairwiseRole {
    /// Pairwise logit differences (or posterior draws over them).
    Psi,
    /// Pairwise label differences, entries in {−1, 0, 1}.
    Kappa,
    /// Pólya-Gamma draws or means, strictly positive.
    Omega,
}

/// An `n × C × C` tensor over all ordered class pairs per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseTensor<F> {
    values: Array3<F>,
    role: PairwiseRole,
}

impl<F: Scalar> PairwiseTensor<F> {
    /// Wrap values under a role without validation; posterior ψ draws are
    /// ψ-role but not antisymmetric, so strict checks live in [`Self::validate`].
    pub fn new(values: Array3<F>, role: PairwiseRole) -> Self {
        Self { values, role }
    }

    pub fn values(&self) -> &Array3<F> {
        &self.values
    }

    pub fn role(&self) -> PairwiseRole {
        self.role
    }

    pub fn samples(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.values.shape()[1]
    }

    /// Check the role invariant on constructed-from-inputs tensors:
    /// ψ/κ antisymmetric with zero diagonal (κ additionally in {−1,0,1}),
    /// ω strictly positive.
    pub fn validate(&self) -> Result<()> {
        let (n, c, c2) = (
            self.values.shape()[0],
            self.values.shape()[1],
            self.values.shape()[2],
        );
        if c != c2 {
            return Err(Error::Input(format!("pairwise tensor not square: {c}×{c2}")));
        }
        for s in 0..n {
            for i in 0..c {
                for j in 0..c {
                    let v = self.values[(s, i, j)];
                    match self.role {
                        PairwiseRole::Psi | PairwiseRole::Kappa => {
                            if i == j && v != F::zero() {
                                return Err(Error::Input(format!(
                                    "nonzero diagonal at ({s},{i},{j})"
                                )));
                            }
                            if (v + self.values[(s, j, i)]).abs() > F::epsilon() {
                                return Err(Error::Input(format!(
                                    "not antisymmetric at ({s},{i},{j})"
                                )));
                            }
                            if self.role == PairwiseRole::Kappa
                                && v != F::zero()
                                && v != F::one()
                                && v != -F::one()
                            {
                                return Err(Error::Input(format!(
                                    "kappa entry {v} not in {{-1,0,1}}"
                                )));
                            }
                        }
                        PairwiseRole::Omega => {
                            if v.is_nan() || v <= F::zero() {
                                return Err(Error::Input(format!(
                                    "omega entry {v} not positive at ({s},{i},{j})"
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// The `C × C × C` comparison tensor, `A[i,j,k] = δ_ik − δ_jk`: block `i`
/// is the matrix `1_C e_iᵀ − I`. Materialized only for tests and the CLI
/// inspector; runtime paths contract it implicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct ATensor<F> {
    values: Array3<F>,
}

impl<F: Scalar> ATensor<F> {
    pub fn values(&self) -> &Array3<F> {
        &self.values
    }

    /// Contract against logits: `Σ_k A[i,j,k]·f[n,k]`, the explicit route
    /// that [`build_psi`] computes implicitly.
    pub fn contract(&self, logits: &Logits<F>) -> PairwiseTensor<F> {
        let c = self.values.shape()[0];
        let n = logits.samples();
        let f = logits.values();
        let mut out = Array3::zeros((n, c, c));
        for s in 0..n {
            for i in 0..c {
                for j in 0..c {
                    let mut acc = F::zero();
                    for k in 0..c {
                        acc += self.values[(i, j, k)] * f[(s, k)];
                    }
                    out[(s, i, j)] = acc;
                }
            }
        }
        PairwiseTensor::new(out, PairwiseRole::Psi)
    }

    /// Contract against shifted labels: `Σ_k A[i,j,k]·(y[n,k] − ½)`.
    pub fn contract_labels(&self, labels: &OneHotLabels) -> PairwiseTensor<F> {
        let c = self.values.shape()[0];
        let n = labels.samples();
        let y = labels.values();
        let mut out = Array3::zeros((n, c, c));
        for s in 0..n {
            for i in 0..c {
                for j in 0..c {
                    let mut acc = F::zero();
                    for k in 0..c {
                        let shifted = F::real(y[(s, k)] as f64) - F::half();
                        acc += self.values[(i, j, k)] * shifted;
                    }
                    out[(s, i, j)] = acc;
                }
            }
        }
        PairwiseTensor::new(out, PairwiseRole::Kappa)
    }
}

/// Materialize the comparison tensor for `classes` classes.
pub fn build_a_tensor<F: Scalar>(classes: usize) -> Result<ATensor<F>> {
    if classes < 2 {
        return Err(Error::Parameter(format!(
            "comparison tensor needs C >= 2, got {classes}"
        )));
    }
    let mut values = Array3::zeros((classes, classes, classes));
    for i in 0..classes {
        for j in 0..classes {
            for k in 0..classes {
                let d_ik = if i == k { F::one() } else { F::zero() };
                let d_jk = if j == k { F::one() } else { F::zero() };
                values[(i, j, k)] = d_ik - d_jk;
            }
        }
    }
    Ok(ATensor { values })
}

/// All pairwise logit differences: `ψ[n,i,j] = f[n,i] − f[n,j]`.
pub fn build_psi<F: Scalar>(logits: &Logits<F>) -> PairwiseTensor<F> {
    let (n, c) = (logits.samples(), logits.classes());
    let f = logits.values();
    let mut values = Array3::zeros((n, c, c));
    for s in 0..n {
        for i in 0..c {
            for j in 0..c {
                values[(s, i, j)] = f[(s, i)] - f[(s, j)];
            }
        }
    }
    PairwiseTensor::new(values, PairwiseRole::Psi)
}

/// Pairwise label differences: `κ[n,i,j] = y[n,i] − y[n,j]`. The `(y − ½)`
/// offsets of the contraction form cancel, leaving entries in {−1, 0, 1}.
pub fn build_kappa<F: Scalar>(labels: &OneHotLabels) -> PairwiseTensor<F> {
    let (n, c) = (labels.samples(), labels.classes());
    let y = labels.values();
    let mut values = Array3::zeros((n, c, c));
    for s in 0..n {
        for i in 0..c {
            for j in 0..c {
                values[(s, i, j)] = F::real(y[(s, i)] as f64) - F::real(y[(s, j)] as f64);
            }
        }
    }
    PairwiseTensor::new(values, PairwiseRole::Kappa)
}

/// Per-class OVE log scores: `score[n,c] = Σ_{j≠c} log σ(ψ[n,c,j])`, via
/// the stable identity `log σ(x) = −softplus(−x)`.
///
/// The diagonal σ(0) factors are class-independent constants; pass
/// `include_diagonal` to add the `−ln 2` per class that reproduces the
/// printed product form.
pub fn ove_log_scores<F: Scalar>(psi: &PairwiseTensor<F>, include_diagonal: bool) -> Array2<F> {
    let (n, c) = (psi.samples(), psi.classes());
    let v = psi.values();
    let mut scores = Array2::zeros((n, c));
    for s in 0..n {
        for i in 0..c {
            let mut acc = F::zero();
            for j in 0..c {
                if j != i {
                    acc += v[(s, i, j)].log_sigmoid();
                }
            }
            if include_diagonal {
                acc -= F::ln_2();
            }
            scores[(s, i)] = acc;
        }
    }
    scores
}

/// OVE probability of `class` per sample: `∏_{j≠class} σ(f_class − f_j)`.
/// A lower bound on the softmax probability, tight at C = 2.
pub fn ove_probability<F: Scalar>(logits: &Logits<F>, class: usize) -> Result<Array1<F>> {
    let c = logits.classes();
    if class >= c {
        return Err(Error::Index(format!("class {class} out of range 0..{c}")));
    }
    let f = logits.values();
    let mut out = Array1::zeros(logits.samples());
    for s in 0..logits.samples() {
        let mut log_p = F::zero();
        for j in 0..c {
            if j != class {
                log_p += (f[(s, class)] - f[(s, j)]).log_sigmoid();
            }
        }
        out[s] = log_p.exp();
    }
    Ok(out)
}

/// Row-wise softmax probabilities, max-shifted for stability.
pub fn softmax_probability<F: Scalar>(logits: &Logits<F>) -> Array2<F> {
    let (n, c) = (logits.samples(), logits.classes());
    let f = logits.values();
    let mut out = Array2::zeros((n, c));
    for s in 0..n {
        let row_max = (0..c).fold(F::neg_infinity(), |m, j| m.max(f[(s, j)]));
        let mut z = F::zero();
        for j in 0..c {
            let e = (f[(s, j)] - row_max).exp();
            out[(s, j)] = e;
            z += e;
        }
        for j in 0..c {
            out[(s, j)] /= z;
        }
    }
    out
}
