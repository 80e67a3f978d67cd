//! Maximum-likelihood training by analysis by synthesis.
//!
//! Each iteration draws a batch of observed clouds, synthesizes an equally
//! sized batch with Langevin dynamics from the current model, and moves the
//! parameters along
//!
//! ```text
//! Δθ = mean_i ∂f(X_i)/∂θ − mean_i ∂f(X̃_i)/∂θ
//! ```
//!
//! At a fixed point the two mean feature gradients coincide (moment
//! matching); the norm of `Δθ` is logged as the convergence diagnostic.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cloud::{common_size, PointCloud};
use crate::error::{Error, Result};
use crate::net::{BnMode, EnergyNet, NetConfig, ParamSet};
use crate::sampler::{init_chains, run_chain, ChainState, InitScheme, NoiseStream, SamplerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(Error::config(format!("unknown optimizer {s:?} (adam|sgd)"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Rescale `Δθ` to at most this norm; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub sampler: SamplerConfig,
    pub seed: u64,
    /// Iterations between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            net: NetConfig::desk(),
            batch_size: 16,
            epochs: 100,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            grad_clip: Some(100.0),
            sampler: SamplerConfig::default(),
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.sampler.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be > 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("Adam decays must lie in [0, 1)"));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(Error::config("grad_clip must be > 0"));
        }
        Ok(())
    }

    pub fn iterations_per_epoch(&self, dataset_len: usize) -> usize {
        (dataset_len / self.batch_size).max(1)
    }
}

/// One training iteration's diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainRecord {
    pub iteration: usize,
    /// Mean `f` over the observed batch.
    pub f_obs: f64,
    /// Mean `f` over the synthesized batch.
    pub f_syn: f64,
    /// Value function `f_obs − f_syn`.
    pub value: f64,
    /// Norm of the observed-batch mean parameter gradient.
    pub grad_norm: f64,
    /// Norm of `Δθ`, the moment-matching residual.
    pub residual: f64,
}

impl TrainRecord {
    pub fn relative_residual(&self) -> f64 {
        self.residual / self.grad_norm
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "iteration,f_obs,f_syn,V,grad_norm,residual";

    pub fn csv_row(r: &TrainRecord) -> String {
        format!("{},{},{},{},{},{}", r.iteration, r.f_obs, r.f_syn, r.value, r.grad_norm, r.residual)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.records {
            s.push_str(&Self::csv_row(r));
            s.push('\n');
        }
        s
    }
}

/// Components of the analysis-by-synthesis gradient.
#[derive(Clone, Debug)]
pub struct MleGradient {
    /// `Δθ`, the ascent direction.
    pub delta: ParamSet,
    pub observed: ParamSet,
    pub synthesized: ParamSet,
    pub f_obs: f64,
    pub f_syn: f64,
}

fn check_batches(observed: &[PointCloud], synthesized: &[PointCloud]) -> Result<()> {
    if observed.is_empty() || synthesized.is_empty() {
        return Err(Error::contract("observed and synthesized batches must be non-empty"));
    }
    if observed.len() != synthesized.len() {
        return Err(Error::contract(format!(
            "batch sizes differ: {} observed vs {} synthesized",
            observed.len(),
            synthesized.len()
        )));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `Δθ` for one observed and one synthesized batch.
///
/// Both passes use eval-mode normalization, i.e. the same function `f`
/// that Langevin dynamics samples from. Running statistics are refreshed
/// from observed data by the training loop before this is called.
pub fn mle_gradient(net: &EnergyNet, observed: &[PointCloud], synthesized: &[PointCloud]) -> Result<MleGradient> {
    check_batches(observed, synthesized)?;
    let (e_obs, g_obs) = net.grad_params(observed, BnMode::Eval)?;
    let (e_syn, g_syn) = net.grad_params(synthesized, BnMode::Eval)?;
    Ok(MleGradient {
        delta: g_obs.sub(&g_syn)?,
        observed: g_obs,
        synthesized: g_syn,
        f_obs: mean(&e_obs),
        f_syn: mean(&e_syn),
    })
}

/// `V = mean f(observed) − mean f(synthesized)`.
pub fn value_function(net: &EnergyNet, observed: &[PointCloud], synthesized: &[PointCloud]) -> Result<f64> {
    if observed.is_empty() || synthesized.is_empty() {
        return Err(Error::contract("value function needs non-empty batches"));
    }
    let f_obs = net.energy_forward(observed, BnMode::Eval)?;
    let f_syn = net.energy_forward(synthesized, BnMode::Eval)?;
    Ok(mean(&f_obs) - mean(&f_syn))
}

/// Norm of `Δθ`.
pub fn moment_residual(net: &EnergyNet, observed: &[PointCloud], synthesized: &[PointCloud]) -> Result<f64> {
    Ok(mle_gradient(net, observed, synthesized)?.delta.norm())
}

/// Gradient-ascent optimizer state.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    first: Option<ParamSet>,
    second: Option<ParamSet>,
    steps: i32,
}

impl Optimizer {
    pub fn new(config: &TrainConfig) -> Self {
        Optimizer {
            kind: config.optimizer,
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.adam_epsilon,
            first: None,
            second: None,
            steps: 0,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Sgd,
            learning_rate,
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 0.0,
            first: None,
            second: None,
            steps: 0,
        }
    }

    /// Moves the parameters of `net` uphill along `grad`.
    pub fn ascent_step(&mut self, net: &mut EnergyNet, grad: &ParamSet) {
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in net.params_mut().into_iter().zip(grad.tensors()) {
                    for (v, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *v += self.learning_rate * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                let first = self.first.get_or_insert_with(|| ParamSet::zeros_like(grad));
                let second = self.second.get_or_insert_with(|| ParamSet::zeros_like(grad));
                let c1 = 1.0 - self.beta1.powi(self.steps);
                let c2 = 1.0 - self.beta2.powi(self.steps);
                let params = net.params_mut();
                let moments = first.tensors_mut().iter_mut().zip(second.tensors_mut());
                for ((p, g), (m, v)) in params.into_iter().zip(grad.tensors()).zip(moments) {
                    let (pd, gd) = (p.data_mut(), g.data());
                    for (((x, &d), mi), vi) in pd.iter_mut().zip(gd).zip(m.data_mut()).zip(v.data_mut()) {
                        *mi = self.beta1 * *mi + (1.0 - self.beta1) * d;
                        *vi = self.beta2 * *vi + (1.0 - self.beta2) * d * d;
                        *x += self.learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + self.epsilon);
                    }
                }
            }
        }
    }
}

/// Trains a fresh network on `data` and returns it with the per-iteration log.
pub fn train(data: &[PointCloud], config: &TrainConfig) -> Result<(EnergyNet, TrainLog)> {
    train_with_hook(data, config, |_, _, _| Ok(()))
}

/// As [`train`], calling `hook` after every completed iteration with the
/// updated network. A hook error aborts training.
pub fn train_with_hook<F>(data: &[PointCloud], config: &TrainConfig, mut hook: F) -> Result<(EnergyNet, TrainLog)>
where
    F: FnMut(usize, &EnergyNet, &TrainRecord) -> Result<()>,
{
    config.validate()?;
    let m = common_size(data)?;
    if config.batch_size > data.len() {
        return Err(Error::config(format!(
            "batch_size {} exceeds dataset size {}",
            config.batch_size,
            data.len()
        )));
    }
    let streams = SeedStreams::new(config.seed);
    let mut net = EnergyNet::new(config.net.clone(), streams.seed(0))?;
    let mut log = TrainLog::default();
    if config.epochs == 0 {
        return Ok((net, log));
    }

    let mut shuffle_rng = streams.rng(1);
    let mut chain_rng = streams.rng(2);
    let noise = NoiseStream::new(streams.seed(3));
    let mut bank = match config.sampler.init_scheme {
        InitScheme::Persistent => Some(ChainState::from_noise(&mut chain_rng, data.len(), m)?),
        _ => None,
    };
    let mut optimizer = Optimizer::new(config);
    let per_epoch = config.iterations_per_epoch(data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut iteration = 0;

    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks_exact(config.batch_size).take(per_epoch) {
            let observed: Vec<PointCloud> = chunk.iter().map(|&i| data[i].clone()).collect();
            net.update_running_stats(&observed)?;

            let init = init_chains(
                config.sampler.init_scheme,
                observed.len(),
                m,
                Some(data),
                bank.as_mut(),
                config.sampler.refresh_prob,
                &mut chain_rng,
            )?;
            let run = run_chain(&net, &init, &config.sampler, &noise.fork(iteration as u64))
                .map_err(|e| at_iteration(e, iteration))?;
            let grad = mle_gradient(&net, &observed, &run.clouds)?;

            let record = TrainRecord {
                iteration,
                f_obs: grad.f_obs,
                f_syn: grad.f_syn,
                value: grad.f_obs - grad.f_syn,
                grad_norm: grad.observed.norm(),
                residual: grad.delta.norm(),
            };
            if ![record.f_obs, record.f_syn, record.grad_norm, record.residual].iter().all(|v| v.is_finite()) {
                return Err(Error::Divergence {
                    context: format!("iteration {iteration}"),
                    message: "non-finite energies or gradients".into(),
                });
            }

            let mut delta = grad.delta;
            if let Some(clip) = config.grad_clip {
                if record.residual > clip {
                    delta.scale(clip / record.residual);
                }
            }
            optimizer.ascent_step(&mut net, &delta);
            if let Some(bank) = bank.as_mut() {
                bank.store(run.clouds, config.sampler.num_steps as u64)?;
            }
            log.records.push(record);
            hook(iteration, &net, &record)?;
            iteration += 1;
        }
    }
    Ok((net, log))
}

fn at_iteration(e: Error, iteration: usize) -> Error {
    match e {
        Error::Divergence { context, message } => {
            Error::Divergence { context: format!("iteration {iteration}, {context}"), message }
        }
        other => other,
    }
}

/// Independent named random streams derived from one seed.
#[derive(Clone, Copy, Debug)]
pub struct SeedStreams {
    seed: u64,
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        SeedStreams { seed }
    }

    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    pub fn seed(&self, stream: u64) -> u64 {
        use rand::RngCore;
        self.rng(stream).next_u64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::noise_clouds;

    fn mini() -> NetConfig {
        NetConfig { encoder_widths: vec![8, 16], head_widths: vec![8, 1], use_batch_norm_encoder: true }
    }

    fn setup(seed: u64) -> (EnergyNet, Vec<PointCloud>, Vec<PointCloud>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = noise_clouds(&mut rng, 4, 16);
        let syn: Vec<PointCloud> = noise_clouds(&mut rng, 4, 16)
            .into_iter()
            .map(|c| PointCloud::from_flat(&c.flat().iter().map(|v| 1.5 * v + 0.3).collect::<Vec<_>>()).unwrap())
            .collect();
        let mut net = EnergyNet::new(mini(), seed).unwrap();
        net.update_running_stats(&obs).unwrap();
        (net, obs, syn)
    }

    #[test]
    fn identical_batches_give_zero_gradient() {
        let (net, obs, _) = setup(1);
        let g = mle_gradient(&net, &obs, &obs).unwrap();
        assert!(g.delta.values().all(|v| v == 0.0));
        assert_eq!(moment_residual(&net, &obs, &obs).unwrap(), 0.0);
        assert_eq!(value_function(&net, &obs, &obs).unwrap(), 0.0);
    }

    #[test]
    fn gradient_decomposes() {
        let (net, obs, syn) = setup(2);
        let g = mle_gradient(&net, &obs, &syn).unwrap();
        let (_, a) = net.grad_params(&obs, BnMode::Eval).unwrap();
        let (_, b) = net.grad_params(&syn, BnMode::Eval).unwrap();
        assert_eq!(g.delta, a.sub(&b).unwrap());
        assert_eq!(moment_residual(&net, &obs, &syn).unwrap(), g.delta.norm());
        assert!(g.delta.norm() > 1e-12);
    }

    #[test]
    fn value_function_is_antisymmetric() {
        let (net, obs, syn) = setup(3);
        let v = value_function(&net, &obs, &syn).unwrap();
        assert_eq!(v, -value_function(&net, &syn, &obs).unwrap());
        let f_obs = net.energy_forward(&obs, BnMode::Eval).unwrap();
        let f_syn = net.energy_forward(&syn, BnMode::Eval).unwrap();
        assert_eq!(v, mean(&f_obs) - mean(&f_syn));
    }

    #[test]
    fn batch_contracts() {
        let (net, obs, syn) = setup(4);
        assert!(matches!(mle_gradient(&net, &obs, &syn[..3]), Err(Error::Contract(_))));
        assert!(matches!(mle_gradient(&net, &[], &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn small_ascent_step_increases_objective() {
        let (mut net, obs, syn) = setup(5);
        let before = value_function(&net, &obs, &syn).unwrap();
        let g = mle_gradient(&net, &obs, &syn).unwrap();
        Optimizer::sgd(1e-4).ascent_step(&mut net, &g.delta);
        assert!(value_function(&net, &obs, &syn).unwrap() > before);
    }

    #[test]
    fn zero_epochs_returns_initial_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = noise_clouds(&mut rng, 4, 8);
        let cfg = TrainConfig { net: mini(), epochs: 0, batch_size: 2, seed: 11, ..Default::default() };
        let (net, log) = train(&data, &cfg).unwrap();
        assert!(log.records.is_empty());
        assert_eq!(net, EnergyNet::new(mini(), SeedStreams::new(11).seed(0)).unwrap());
    }

    #[test]
    fn training_is_reproducible_for_every_scheme() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = noise_clouds(&mut rng, 6, 8);
        for scheme in [InitScheme::Noise, InitScheme::Persistent, InitScheme::Data] {
            let cfg = TrainConfig {
                net: mini(),
                epochs: 2,
                batch_size: 3,
                seed: 3,
                sampler: SamplerConfig { num_steps: 4, step_size: 0.1, init_scheme: scheme, ..Default::default() },
                ..Default::default()
            };
            let (a, la) = train(&data, &cfg).unwrap();
            let (b, lb) = train(&data, &cfg).unwrap();
            assert_eq!(a, b);
            assert_eq!(la, lb);
            assert_eq!(la.records.len(), 4);
            assert!(la.to_csv().starts_with(TrainLog::CSV_HEADER));
        }
    }

    #[test]
    fn oversized_batch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = noise_clouds(&mut rng, 2, 8);
        let cfg = TrainConfig { net: mini(), batch_size: 3, ..Default::default() };
        assert!(matches!(train(&data, &cfg), Err(Error::Config(_))));
    }
}
