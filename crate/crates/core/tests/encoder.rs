//! Observation encoder behaviour in eval mode: bounded outputs, batch
//! independence, and agreement between its Jacobian and small perturbations.

mod common;

use jepa_nn::{grad, no_grad, Ctx, ParameterSet, RngState, Tensor, Var};
use ode_jepa::encoders::ObservationEncoder;
use ode_jepa::ModelConfig;
use rand::Rng;

fn setup(seed: u64) -> (ObservationEncoder, ParameterSet) {
    let cfg = ModelConfig { image_size: 16, encoder_channels: vec![3, 4], ..ModelConfig::default() };
    let enc = ObservationEncoder::new(&cfg).unwrap();
    let ps = enc.init(&mut RngState::new(seed));
    (enc, ps)
}

fn windows(n: usize, seed: u64) -> Tensor {
    let mut stream = RngState::new(seed).next_stream();
    Tensor::from_fn(&[n, 4, 16, 16], |_| stream.random::<f64>())
}

#[test]
fn latents_are_bounded_and_batch_independent() {
    let (enc, ps) = setup(1);
    let vars = ps.bind(false);
    let x = windows(5, 2);
    let all = enc.forward(&mut Ctx::eval(&vars, ps.buffers()), &Var::constant(x.clone())).unwrap();
    assert!(all.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
    let one = enc.forward(&mut Ctx::eval(&vars, ps.buffers()), &Var::constant(x.slice_outer(2, 1).unwrap())).unwrap();
    assert_eq!(one.value().data(), &all.value().data()[12..18]);
}

#[test]
fn small_perturbations_follow_the_jacobian() {
    for seed in 0..5 {
        let (enc, ps) = setup(10 + seed);
        let vars = ps.bind(false);
        let x = windows(1, 20 + seed);
        let v = windows(1, 30 + seed).map(|t| t - 0.5);
        let eps = 1e-6;

        let xv = Var::leaf(x.clone());
        let s = enc.forward(&mut Ctx::eval(&vars, ps.buffers()), &xv).unwrap();
        let moved = no_grad(|| {
            let shifted = x.zip_map(&v, |a, b| a + eps * b).unwrap();
            enc.forward(&mut Ctx::eval(&vars, ps.buffers()), &Var::constant(shifted)).unwrap()
        });
        for d in 0..6 {
            let g = grad(&s.slice_cols(d, 1).unwrap().sum(), &[xv.clone()], false).unwrap();
            let predicted: f64 = g[0].value().data().iter().zip(v.data()).map(|(a, b)| a * b).sum();
            let observed = (moved.value().data()[d] - s.value().data()[d]) / eps;
            let rel = (predicted - observed).abs() / predicted.abs().max(1e-6);
            assert!(rel < 1e-3, "seed {seed} dim {d}: J·v {predicted:.6e} vs difference {observed:.6e}");
        }
    }
}


#[test]
fn contractive_term_matches_finite_difference_jacobian() {
    for seed in 0..3 {
        let (value, fd) = common::contractive_against_finite_differences(seed);
        assert!((value - fd).abs() / fd < 1e-3, "seed {seed}: {value:.6e} vs {fd:.6e}");
    }
}
