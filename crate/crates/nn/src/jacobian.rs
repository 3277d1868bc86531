//! Squared Frobenius norm of an input-output Jacobian.

use crate::error::{dim_err, Result};
use crate::tensor::Tensor;
use crate::var::{grad, Var};

/// `Σ_n ‖∂f(x)[n] / ∂x[n]‖²_F` for a map `f` from `x[N, ...]` to `[N, D]`
/// whose rows depend only on their own input sample.
///
/// Uses one reverse pass per output coordinate. With `create_graph` the
/// result can be differentiated with respect to the parameters inside `f`.
pub fn jacobian_frobenius_sq(
    f: impl FnOnce(&Var) -> Result<Var>,
    input: &Tensor,
    create_graph: bool,
) -> Result<Var> {
    let x = Var::leaf(input.clone());
    let y = f(&x)?;
    let (rows, dims) = match y.shape() {
        &[d] => (1, d),
        &[n, d] => (n, d),
        s => return dim_err(format!("jacobian_frobenius_sq: output must be [N, D], got {s:?}")),
    };
    let mut total: Option<Var> = None;
    for d in 0..dims {
        let selector = Tensor::from_fn(y.shape(), |i| if i % dims == d { 1.0 } else { 0.0 });
        let coord = y.mul_const(&selector)?.sum();
        let g = grad(&coord, std::slice::from_ref(&x), create_graph)?.remove(0);
        let sq = g.square().sum();
        total = Some(match total {
            Some(t) => t.add(&sq)?,
            None => sq,
        });
    }
    debug_assert!(rows >= 1);
    Ok(total.expect("at least one output coordinate"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_gives_weight_norm() {
        let w = Var::constant(Tensor::from_fn(&[3, 5], |i| (i as f64 * 0.37).sin()));
        let x = Tensor::from_fn(&[2, 5], |i| i as f64 * 0.1);
        let j = jacobian_frobenius_sq(|x| x.matmul_t(&w, false, true), &x, false).unwrap();
        // two samples, each contributes ‖W‖²_F
        let want = 2.0 * w.value().sq_norm();
        assert!((j.value().item() - want).abs() < 1e-12);
    }

    #[test]
    fn constant_map_gives_zero() {
        let c = Var::constant(Tensor::ones(&[1, 4]));
        let x = Tensor::ones(&[1, 3]);
        let j = jacobian_frobenius_sq(|x| c.add(&x.sum().scale(0.0).expand(&[1, 4])?), &x, false).unwrap();
        assert_eq!(j.value().item(), 0.0);
    }
}
