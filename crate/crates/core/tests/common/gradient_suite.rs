//! Finite-difference gradient checks of every loss term, the latent rollout
//! and the full objectives, in float64 on networks under 5k parameters.
//! Each check covers one seed and reports its largest relative error.

use jepa_nn::{Ctx, ParameterSet, RngState, Tensor, Var};
use ode_jepa::losses;
use ode_jepa::model::{Architecture, BundleMeta, ModelBundle};
use ode_jepa::training::phase1_objective;
use ode_jepa::windows::SampleBatch;
use ode_jepa::{Integrator, LossWeights, ModelConfig, TrainingConfig};
use rand::Rng;

use super::{check_gradients, check_parameter_gradients, random_tensor, rng};

pub const TOL: f64 = 1e-4;

pub type Check = fn(u64) -> Result<f64, String>;

/// Every check with its name.
pub const CHECKS: [(&str, Check); 7] = [
    ("variance+covariance+invariance", variance_covariance_invariance),
    ("lipschitz", lipschitz_hinge),
    ("reconstruction terms", reconstruction_terms),
    ("contractive (second order)", contractive_through_encoder),
    ("rollout chain, rk4 and euler", rollout_chain),
    ("full latent objective", full_latent_objective),
    ("reconstruction through decoder", reconstruction_through_decoder),
];

/// Every network here stays well under 5k scalars.
pub fn probe_model(integrator: Integrator) -> ModelConfig {
    ModelConfig {
        latent_dim: 3,
        image_size: 8,
        encoder_channels: vec![2, 3, 2],
        action_hidden: 4,
        action_blocks: 2,
        predictor_hidden: 5,
        dropout: 0.0,
        integrator,
        ..ModelConfig::default()
    }
}

fn meta() -> BundleMeta {
    BundleMeta { dt: 0.1, action_mean: 0.0, action_std: 1.0, seed: 0, decoder_trained: false }
}

/// A bundle with the zero-initialized predictor output moved off zero.
pub fn bundle(cfg: &ModelConfig, seed: u64) -> ModelBundle {
    let mut init = RngState::new(seed);
    let mut b = ModelBundle::init(cfg, meta(), &mut init).unwrap();
    let mut stream = init.next_stream();
    for (_, p) in b.predictor.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v += stream.random_range(-0.3..0.3));
    }
    for set in [&b.encoder, &b.action_encoder, &b.predictor, &b.decoder] {
        assert!(set.num_scalars() < 5000);
    }
    b
}

pub fn variance_covariance_invariance(seed: u64) -> Result<f64, String> {
    let mut r = rng(seed);
    let s = random_tensor(&[3, 5, 4], &mut r, 1.0);
    let t = random_tensor(&[3, 5, 4], &mut r, 1.0);
    let f = |x: &[Var]| {
        let v = losses::variance_loss(&x[0], 1e-4, 1e-4).unwrap();
        let c = losses::covariance_loss(&x[0]).unwrap();
        let i = losses::invariance_loss(&x[1], &x[0]).unwrap();
        v.add(&c.scale(0.7)).unwrap().add(&i.scale(1.3)).unwrap()
    };
    check_gradients("variance+covariance+invariance", &f, &[s, t], TOL)
}

pub fn lipschitz_hinge(seed: u64) -> Result<f64, String> {
    let mut r = rng(100 + seed);
    let p = random_tensor(&[3, 4, 3], &mut r, 1.0);
    let s = random_tensor(&[3, 4, 3], &mut r, 0.6);
    let f = |x: &[Var]| losses::lipschitz_loss(&x[0], &x[1], 1.0).unwrap();
    check_gradients("lipschitz", &f, &[p, s], TOL)
}

pub fn reconstruction_terms(seed: u64) -> Result<f64, String> {
    let mut r = rng(200 + seed);
    let target = random_tensor(&[3, 4, 4], &mut r, 1.0);
    let decoded = random_tensor(&[3, 4, 4], &mut r, 1.0);
    let weights = LossWeights::default();
    let f = |x: &[Var]| losses::reconstruction_loss(&x[0], &x[1], &weights).unwrap().0;
    check_gradients("reconstruction", &f, &[target, decoded], TOL)
}

fn as_nn(e: ode_jepa::JepaError) -> jepa_nn::NnError {
    match e {
        ode_jepa::JepaError::Nn(e) => e,
        other => jepa_nn::NnError::Contract(other.to_string()),
    }
}

pub fn contractive_through_encoder(seed: u64) -> Result<f64, String> {
    let cfg = probe_model(Integrator::Rk4);
    let arch = Architecture::new(&cfg).unwrap();
    let b = bundle(&cfg, 300 + seed);
    let mut r = rng(300 + seed);
    let windows = Tensor::from_fn(&[2, 4, 8, 8], |_| r.random::<f64>());
    let f = |sets: &[ParameterSet]| {
        let vars = sets[0].bind(true);
        let encoder = |o: &Var| arch.encoder.forward(&mut Ctx::eval(&vars, sets[0].buffers()), o).map_err(as_nn);
        let g = losses::contractive_loss(encoder, &windows, true).unwrap();
        (g, vec![vars])
    };
    check_parameter_gradients("contractive", &[b.encoder.clone()], &f, TOL)
}

pub fn rollout_chain(seed: u64) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for integrator in [Integrator::Rk4, Integrator::Euler] {
        let cfg = probe_model(integrator);
        let arch = Architecture::new(&cfg).unwrap();
        let b = bundle(&cfg, 400 + seed);
        let mut r = rng(400 + seed);
        let s0 = Var::constant(Tensor::from_fn(&[4, 3], |_| r.random::<f64>()));
        let actions = Var::constant(random_tensor(&[3 * 4, 1], &mut r, 1.5));
        let target = Var::constant(Tensor::from_fn(&[4, 3], |_| r.random::<f64>()));
        let f = |sets: &[ParameterSet]| {
            let (act, pred) = (sets[0].bind(true), sets[1].bind(true));
            let z = arch.action_encoder.forward(&mut Ctx::eval(&act, sets[0].buffers()), &actions).unwrap();
            let zs: Vec<Var> = (0..3).map(|j| z.slice_outer(j * 4, 4).unwrap()).collect();
            let out = arch.dynamics.rollout(&Ctx::eval(&pred, sets[1].buffers()), &s0, &zs, 0.1).unwrap();
            let last = out.last().unwrap().sub(&target).unwrap();
            (last.square().sum(), vec![act, pred])
        };
        let e = check_parameter_gradients("rollout", &[b.action_encoder.clone(), b.predictor.clone()], &f, TOL)?;
        worst = worst.max(e);
    }
    Ok(worst)
}

pub fn full_latent_objective(seed: u64) -> Result<f64, String> {
    let cfg = probe_model(Integrator::Rk4);
    let arch = Architecture::new(&cfg).unwrap();
    let tcfg = TrainingConfig {
        model: cfg.clone(),
        weights: LossWeights { contractive_subsample: 2, ..LossWeights::default() },
        ..TrainingConfig::default()
    };
    let b = bundle(&cfg, 500 + seed);
    let mut r = rng(500 + seed);
    let n = 3;
    let batch = SampleBatch {
        anchors: (0..n).collect(),
        windows: Tensor::from_fn(&[5 * n, 4, 8, 8], |_| r.random::<f64>()),
        actions: random_tensor(&[3 * n, 1], &mut r, 1.5),
    };
    let f = |sets: &[ParameterSet]| {
        let mut moved = b.clone();
        moved.encoder = sets[0].clone();
        moved.action_encoder = sets[1].clone();
        moved.predictor = sets[2].clone();
        let g = phase1_objective(&arch, &mut moved, &batch, &tcfg, Some(&mut RngState::new(seed))).unwrap();
        let total = g.terms.total(&tcfg.weights).unwrap();
        (total, vec![g.encoder, g.action_encoder, g.predictor])
    };
    let sets = [b.encoder.clone(), b.action_encoder.clone(), b.predictor.clone()];
    check_parameter_gradients("latent objective", &sets, &f, TOL)
}

pub fn reconstruction_through_decoder(seed: u64) -> Result<f64, String> {
    let cfg = probe_model(Integrator::Rk4);
    let arch = Architecture::new(&cfg).unwrap();
    let weights = LossWeights::default();
    let b = bundle(&cfg, 600 + seed);
    let mut r = rng(600 + seed);
    let s = Var::constant(Tensor::from_fn(&[3, 3], |_| r.random::<f64>()));
    let target = Var::constant(Tensor::from_fn(&[3, 8, 8], |_| r.random::<f64>()));
    let f = |sets: &[ParameterSet]| {
        let vars = sets[0].bind(true);
        let mut buffers = sets[0].buffers().clone();
        let mut state = RngState::new(seed);
        let out = arch.decoder.forward(&mut Ctx::train(&vars, &mut buffers, &mut state), &s).unwrap();
        (losses::reconstruction_loss(&target, &out, &weights).unwrap().0, vec![vars])
    };
    check_parameter_gradients("reconstruction", &[b.decoder.clone()], &f, TOL)
}
