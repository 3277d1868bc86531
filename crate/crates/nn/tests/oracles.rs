//! Forward primitives against direct-loop oracles and algebraic identities.

mod common;

use common::{random_tensor, rng};
use jepa_nn::functional;
use jepa_nn::{Tensor, Var};
use proptest::prelude::*;

fn c(t: Tensor) -> Var {
    Var::constant(t)
}

#[test]
fn affine_map_matches_dense_loops() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let (n, i, o) = (5, 7, 4);
        let x = random_tensor(&[n, i], &mut r, 1.0);
        let w = random_tensor(&[o, i], &mut r, 1.0);
        let b = random_tensor(&[o], &mut r, 1.0);
        let y = functional::affine_map(&c(x.clone()), &c(w.clone()), &c(b.clone())).unwrap();
        for row in 0..n {
            for col in 0..o {
                let want: f64 = b.data()[col]
                    + (0..i).map(|k| w.data()[col * i + k] * x.data()[row * i + k]).sum::<f64>();
                assert!((y.value().data()[row * o + col] - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn unit_kernels_are_identities() {
    let mut r = rng(3);
    let x = random_tensor(&[2, 1, 5, 4], &mut r, 1.0);
    let one = c(Tensor::ones(&[1, 1, 1, 1]));
    let y = functional::conv2d(&c(x.clone()), &one, 1, 0).unwrap();
    assert_eq!(y.value(), &x);
    let y = functional::conv_transpose2d(&c(x.clone()), &one, 1, 0, 0).unwrap();
    assert_eq!(y.value(), &x);
}

#[test]
fn averaging_kernel_on_constant_image() {
    let x = c(Tensor::full(&[1, 1, 6, 6], 2.5));
    let k = c(Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0));
    let y = functional::conv2d(&x, &k, 1, 1).unwrap();
    for r in 1..5 {
        for col in 1..5 {
            assert!((y.value().data()[r * 6 + col] - 2.5).abs() < 1e-12);
        }
    }
}

#[test]
fn stride_two_upsampling_shape() {
    let x = c(Tensor::ones(&[1, 1, 2, 2]));
    let k = c(Tensor::ones(&[1, 1, 2, 2]));
    let y = functional::conv_transpose2d(&x, &k, 2, 0, 0).unwrap();
    assert_eq!(y.shape(), &[1, 1, 4, 4]);
}

#[test]
fn conv_shape_errors() {
    let x = c(Tensor::ones(&[1, 1, 2, 2]));
    assert!(functional::conv2d(&x, &c(Tensor::ones(&[1, 1, 3, 3])), 1, 0).is_err());
    assert!(functional::conv_transpose2d(&x, &c(Tensor::ones(&[2, 1, 3, 3])), 1, 0, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    /// <conv2d(a), b> = <a, conv_transpose2d(b)> with tied kernels.
    #[test]
    fn transpose_is_adjoint(seed in 0u64..10_000, stride in 1usize..3, pad in 0usize..2, k in 1usize..4,
                            h in 4usize..9) {
        let w = h;
        let mut r = rng(seed);
        let a = random_tensor(&[2, 3, h, w], &mut r, 1.0);
        let kern = random_tensor(&[4, 3, k, k], &mut r, 1.0);
        let y = functional::conv2d(&c(a.clone()), &c(kern.clone()), stride, pad).unwrap();
        let b = random_tensor(y.shape(), &mut r, 1.0);
        let geom = jepa_nn::kernels::ConvGeom::forward(a.shape(), kern.shape(), stride, pad).unwrap();
        let out_pad = (h + 2 * pad - k) % stride;
        let back = functional::conv_transpose2d(&c(b.clone()), &c(kern), stride, pad, out_pad).unwrap();
        prop_assert_eq!(back.shape(), &geom.input_shape()[..]);
        let lhs = y.value().dot(&b).unwrap();
        let rhs = a.dot(back.value()).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn sigmoid_symmetry(x in -50.0f64..50.0) {
        prop_assert!((jepa_nn::var::sigmoid(x) + jepa_nn::var::sigmoid(-x) - 1.0).abs() < 1e-12);
    }
}
