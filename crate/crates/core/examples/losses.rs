//! Hand-checkable values of every latent and reconstruction loss term.
//!
//! ```text
//! cargo run --example losses
//! ```

use jepa_nn::{Tensor, Var};
use ode_jepa::losses::{covariance_loss, invariance_loss, lipschitz_loss, reconstruction_cosine, variance_loss};

fn c(shape: &[usize], data: Vec<f64>) -> Var {
    Var::constant(Tensor::new(shape, data).expect("shape matches data"))
}

fn main() -> ode_jepa::Result<()> {
    // Identical embeddings: every std is sqrt(eps1), so each term is 1 / (0.01 + 1e-4).
    let same = c(&[4, 8, 6], vec![0.3; 4 * 8 * 6]);
    println!("variance, collapsed batch      = {:.4}  (expect 99.0099)", variance_loss(&same, 1e-4, 1e-4)?.value().item());

    // Two samples {0, 2}: unbiased variance 2.
    let pair = c(&[1, 2, 1], vec![0.0, 2.0]);
    println!("variance, samples {{0, 2}}        = {:.6}  (expect 0.707039)", variance_loss(&pair, 1e-4, 1e-4)?.value().item());

    // Perfectly correlated pair of dims: off-diagonal covariance 2, squared twice, over D = 2.
    let corr = c(&[1, 2, 2], vec![1.0, 1.0, -1.0, -1.0]);
    println!("covariance, correlated dims     = {:.4}  (expect 4)", covariance_loss(&corr)?.value().item());

    // Unit offset in all 6 dims.
    let a = c(&[3, 5, 6], vec![0.2; 90]);
    let b = c(&[3, 5, 6], vec![1.2; 90]);
    println!("invariance, unit offset         = {:.4}  (expect 6)", invariance_loss(&a, &b)?.value().item());

    // |dp| = 2 against L |ds| = 1.
    let p = c(&[2, 1, 1], vec![0.0, 2.0]);
    let s = c(&[2, 1, 1], vec![0.0, 1.0]);
    println!("lipschitz hinge, L = 1          = {:.4}  (expect 1)", lipschitz_loss(&p, &s, 1.0)?.value().item());

    let o = c(&[1, 4], vec![1.0, 2.0, 0.0, 0.0]);
    let orth = c(&[1, 4], vec![0.0, 0.0, 3.0, 1.0]);
    for (name, other, want) in [("parallel", o.scale(3.0), 0.0), ("orthogonal", orth, 1.0), ("opposite", o.neg(), 2.0)] {
        let v = reconstruction_cosine(&o, &other, 1e-8)?.value().item();
        println!("cosine, {name:<10}              = {v:.4}  (expect {want})");
    }
    Ok(())
}
