//! Training objectives on time-major latent batches.
//!
//! Sequences of latents are laid out as `[T, N, D]`: time, batch, latent
//! dimension. Each function returns a scalar [`Var`].

use jepa_nn::{jacobian_frobenius_sq, NnError, Tensor, Var};

use crate::config::LossWeights;
use crate::error::{JepaError, Result};

fn dims3(x: &Var, op: &'static str) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [t, n, d] => Ok((t, n, d)),
        ref s => Err(JepaError::Nn(NnError::Dimension(format!("{op}: expected [T, N, D], got {s:?}")))),
    }
}

fn need_batch(n: usize, op: &'static str) -> Result<()> {
    if n < 2 {
        return Err(JepaError::Nn(NnError::BatchTooSmall { op, min: 2, got: n }));
    }
    Ok(())
}

/// Batch-centered slice `t` as `[N, D]`.
fn centered(s: &Var, t: usize, n: usize, d: usize) -> Result<Var> {
    let x = s.slice_outer(t, 1)?.reshape(&[n, d])?;
    let mean = x.sum_mid()?.scale(1.0 / n as f64);
    Ok(x.sub(&mean.broadcast_mid(&[n, d])?)?)
}

fn mean_of(terms: Vec<Var>) -> Result<Var> {
    let k = terms.len() as f64;
    let mut it = terms.into_iter();
    let first = it.next().ok_or_else(|| JepaError::Numeric("mean of no terms".into()))?;
    let total = it.try_fold(first, |acc, t| acc.add(&t))?;
    Ok(total.scale(1.0 / k))
}

/// Mean over `(t, d)` of `1 / (sqrt(var + eps1) + eps2)`, with the unbiased
/// batch variance.
pub fn variance_loss(s: &Var, eps1: f64, eps2: f64) -> Result<Var> {
    let (t, n, d) = dims3(s, "variance_loss")?;
    need_batch(n, "variance_loss")?;
    let terms = (0..t)
        .map(|k| -> Result<Var> {
            let xc = centered(s, k, n, d)?;
            let var = xc.square().sum_mid()?.scale(1.0 / (n - 1) as f64);
            Ok(var.add_scalar(eps1).sqrt().add_scalar(eps2).recip().sum())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_of(terms)?.scale(1.0 / d as f64))
}

/// Squared off-diagonal entries of the batch covariance, scaled by `1/D`
/// and averaged over time.
pub fn covariance_loss(s: &Var) -> Result<Var> {
    let (t, n, d) = dims3(s, "covariance_loss")?;
    need_batch(n, "covariance_loss")?;
    let off_diag = Tensor::from_fn(&[d, d], |i| if i / d == i % d { 0.0 } else { 1.0 });
    let terms = (0..t)
        .map(|k| -> Result<Var> {
            let xc = centered(s, k, n, d)?;
            let cov = xc.matmul_t(&xc, true, false)?.scale(1.0 / (n - 1) as f64);
            Ok(cov.square().mul_const(&off_diag)?.sum().scale(1.0 / d as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    mean_of(terms)
}

/// Mean over `(t, n)` of the squared L2 distance between targets and
/// predictions.
pub fn invariance_loss(target: &Var, predicted: &Var) -> Result<Var> {
    let (t, n, _) = dims3(target, "invariance_loss")?;
    if target.shape() != predicted.shape() {
        return Err(JepaError::Nn(NnError::Dimension(format!(
            "invariance_loss: {:?} vs {:?}",
            target.shape(),
            predicted.shape()
        ))));
    }
    Ok(target.sub(predicted)?.square().sum().scale(1.0 / (t * n) as f64))
}

/// Mean squared Frobenius norm of the Jacobian of `encoder` at each sample of
/// `windows` (`[M, ...]`). Differentiable in the encoder parameters when
/// `create_graph` is set.
pub fn contractive_loss(
    encoder: impl FnOnce(&Var) -> jepa_nn::Result<Var>,
    windows: &Tensor,
    create_graph: bool,
) -> Result<Var> {
    let m = windows.shape().first().copied().unwrap_or(0);
    if m == 0 {
        return Err(JepaError::Nn(NnError::Dimension("contractive_loss: empty window batch".into())));
    }
    Ok(jacobian_frobenius_sq(encoder, windows, create_graph)?.scale(1.0 / m as f64))
}

/// Elementwise hinge `max(0, |Δp| - L |Δs|)` over consecutive time steps of
/// predictor outputs `p` and their input states `s`, both `[T, N, D]` with
/// `T ≥ 2`, averaged over all `(T-1) N D` elements.
pub fn lipschitz_loss(p: &Var, s: &Var, l: f64) -> Result<Var> {
    let (t, _, _) = dims3(s, "lipschitz_loss")?;
    if p.shape() != s.shape() {
        return Err(JepaError::Nn(NnError::Dimension(format!("lipschitz_loss: {:?} vs {:?}", p.shape(), s.shape()))));
    }
    if t < 2 {
        return Err(JepaError::Config(format!("lipschitz_loss needs at least 2 time steps, got {t}")));
    }
    if !(l > 0.0) {
        return Err(JepaError::Config(format!("Lipschitz constant must be positive, got {l}")));
    }
    let diff = |x: &Var| -> Result<Var> { Ok(x.slice_outer(1, t - 1)?.sub(&x.slice_outer(0, t - 1)?)?.abs()) };
    let hinge = diff(p)?.sub(&diff(s)?.scale(l))?.relu();
    Ok(hinge.mean())
}

/// Per-term values of the latent objective. `contractive` is `None` when its
/// weight is zero and the term was skipped.
#[derive(Clone, Debug)]
pub struct LatentTerms {
    pub variance: Var,
    pub covariance: Var,
    pub invariance: Var,
    pub contractive: Option<Var>,
    pub lipschitz: Var,
}

impl LatentTerms {
    /// `λ1 Lv + λ2 Lc + λ3 Li + λ4 Lg + λ5 LL`.
    pub fn total(&self, weights: &LossWeights) -> Result<Var> {
        weights.validate()?;
        let [l1, l2, l3, l4, l5] = weights.latent();
        let mut total = self.variance.scale(l1);
        total = total.add(&self.covariance.scale(l2))?;
        total = total.add(&self.invariance.scale(l3))?;
        match &self.contractive {
            Some(g) => total = total.add(&g.scale(l4))?,
            None if l4 != 0.0 => {
                return Err(JepaError::Config("contractive term missing while lambda4 is non-zero".into()))
            }
            None => {}
        }
        Ok(total.add(&self.lipschitz.scale(l5))?)
    }

    /// `(name, value)` pairs, `None` for skipped terms.
    pub fn values(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("variance", Some(self.variance.value().item())),
            ("covariance", Some(self.covariance.value().item())),
            ("invariance", Some(self.invariance.value().item())),
            ("contractive", self.contractive.as_ref().map(|g| g.value().item())),
            ("lipschitz", Some(self.lipschitz.value().item())),
        ]
    }
}

fn frames2(x: &Var, op: &'static str) -> Result<(usize, usize)> {
    let shape = x.shape();
    if shape.is_empty() {
        return Err(JepaError::Nn(NnError::Dimension(format!("{op}: scalar input"))));
    }
    Ok((shape[0], shape[1..].iter().product()))
}

/// Mean over frames of the squared L2 distance between flattened images.
pub fn reconstruction_mse(target: &Var, decoded: &Var) -> Result<Var> {
    let (m, _) = frames2(target, "reconstruction_mse")?;
    Ok(target.sub(decoded)?.square().sum().scale(1.0 / m as f64))
}

/// Mean over frames of `1 - cos(o, õ)` with `eps` added to the norm product.
pub fn reconstruction_cosine(target: &Var, decoded: &Var, eps: f64) -> Result<Var> {
    let (m, p) = frames2(target, "reconstruction_cosine")?;
    if target.shape() != decoded.shape() {
        return Err(JepaError::Nn(NnError::Dimension(format!(
            "reconstruction_cosine: {:?} vs {:?}",
            target.shape(),
            decoded.shape()
        ))));
    }
    let rows = |x: &Var| x.reshape(&[1, m, p]);
    let dot = rows(&target.mul(decoded)?)?.sum_mid()?;
    let norm_t = rows(&target.square())?.sum_mid()?.sqrt();
    let norm_d = rows(&decoded.square())?.sum_mid()?.sqrt();
    let cos = dot.div(&norm_t.mul(&norm_d)?.add_scalar(eps))?;
    Ok(cos.neg().add_scalar(1.0).mean())
}

/// `λ6 mse + λ7 cosine`.
pub fn reconstruction_loss(target: &Var, decoded: &Var, weights: &LossWeights) -> Result<(Var, f64, f64)> {
    weights.validate()?;
    let mse = reconstruction_mse(target, decoded)?;
    let cos = reconstruction_cosine(target, decoded, weights.eps)?;
    let (mv, cv) = (mse.value().item(), cos.value().item());
    Ok((mse.scale(weights.lambda6).add(&cos.scale(weights.lambda7))?, mv, cv))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(shape: &[usize], data: Vec<f64>) -> Var {
        Var::constant(Tensor::new(shape, data).unwrap())
    }

    #[test]
    fn identical_embeddings_hit_the_variance_ceiling() {
        let s = c(&[4, 8, 6], vec![0.3; 4 * 8 * 6]);
        let v = variance_loss(&s, 1e-4, 1e-4).unwrap().value().item();
        assert!((v - 1.0 / (0.01 + 1e-4)).abs() < 1e-9, "{v}");
    }

    #[test]
    fn two_point_variance() {
        let s = c(&[1, 2, 1], vec![0.0, 2.0]);
        let v = variance_loss(&s, 1e-4, 1e-4).unwrap().value().item();
        let want = 1.0 / ((2.0f64 + 1e-4).sqrt() + 1e-4);
        assert!((v - want).abs() < 1e-12);
        assert!((v - 0.707039).abs() < 1e-6);
    }

    #[test]
    fn variance_needs_two_samples() {
        let s = c(&[1, 1, 3], vec![0.0; 3]);
        assert!(matches!(
            variance_loss(&s, 1e-4, 1e-4),
            Err(JepaError::Nn(NnError::BatchTooSmall { .. }))
        ));
        assert!(covariance_loss(&s).is_err());
    }

    #[test]
    fn covariance_hand_case() {
        let s = c(&[1, 2, 2], vec![1.0, 1.0, -1.0, -1.0]);
        assert!((covariance_loss(&s).unwrap().value().item() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn unit_offset_invariance() {
        let a = c(&[3, 5, 6], vec![0.2; 90]);
        let b = c(&[3, 5, 6], vec![1.2; 90]);
        assert!((invariance_loss(&a, &b).unwrap().value().item() - 6.0).abs() < 1e-12);
        assert_eq!(invariance_loss(&a, &a).unwrap().value().item(), 0.0);
    }

    #[test]
    fn hinge_scalar_case() {
        let p = c(&[2, 1, 1], vec![0.0, 2.0]);
        let s = c(&[2, 1, 1], vec![0.0, 1.0]);
        assert!((lipschitz_loss(&p, &s, 1.0).unwrap().value().item() - 1.0).abs() < 1e-12);
        assert_eq!(lipschitz_loss(&p, &s, 2.0).unwrap().value().item(), 0.0);
    }

    #[test]
    fn cosine_cases() {
        let o = c(&[1, 4], vec![1.0, 2.0, 0.0, 0.0]);
        let orth = c(&[1, 4], vec![0.0, 0.0, 3.0, 1.0]);
        let cos = |a: &Var, b: &Var| reconstruction_cosine(a, b, 1e-8).unwrap().value().item();
        assert!(cos(&o, &o.scale(3.0)).abs() < 1e-8);
        assert!((cos(&o, &orth) - 1.0).abs() < 1e-12);
        assert!((cos(&o, &o.neg()) - 2.0).abs() < 1e-8);
    }

    #[test]
    fn mse_of_ones_against_zeros() {
        let ones = c(&[2, 64, 64], vec![1.0; 2 * 4096]);
        let zeros = c(&[2, 64, 64], vec![0.0; 2 * 4096]);
        assert_eq!(reconstruction_mse(&ones, &zeros).unwrap().value().item(), 4096.0);
    }

    #[test]
    fn total_is_linear_in_weights() {
        let terms = LatentTerms {
            variance: Var::constant(Tensor::scalar(2.0)),
            covariance: Var::constant(Tensor::scalar(3.0)),
            invariance: Var::constant(Tensor::scalar(5.0)),
            contractive: Some(Var::constant(Tensor::scalar(7.0))),
            lipschitz: Var::constant(Tensor::scalar(11.0)),
        };
        let w = LossWeights::default();
        let base = terms.total(&w).unwrap().value().item();
        let doubled = terms.total(&LossWeights { lambda1: 2.0 * w.lambda1, ..w.clone() }).unwrap().value().item();
        assert!((doubled - base - 2.0).abs() < 1e-12);
        let zero = LossWeights { lambda1: 0.0, lambda2: 0.0, lambda3: 0.0, lambda4: 0.0, lambda5: 0.0, ..w.clone() };
        assert_eq!(terms.total(&zero).unwrap().value().item(), 0.0);
        let neg = LossWeights { lambda2: -1.0, ..w };
        assert!(matches!(terms.total(&neg), Err(JepaError::Config(_))));
    }
}
