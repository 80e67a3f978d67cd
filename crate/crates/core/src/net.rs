//! The permutation-invariant energy network.
//!
//! Every point passes through a shared encoder MLP (linear, batch norm,
//! ReLU per layer). Point features are average-pooled into one global
//! feature, and a head MLP maps it to the scalar negative energy `f(X)`.
//! The last head layer is purely affine so energies can take any sign.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cloud::{common_size, PointCloud};
use crate::energy::{Coords, EnergyFunction};
use crate::error::{Error, Result};
use crate::tensor::{NodeId, RunningStats, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetConfig {
    /// Output channels of each per-point encoder layer.
    pub encoder_widths: Vec<usize>,
    /// Output channels of each head layer; the last must be 1.
    pub head_widths: Vec<usize>,
    pub use_batch_norm_encoder: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig::desk()
    }
}

impl NetConfig {
    /// Small configuration that trains in minutes on a CPU.
    pub fn desk() -> Self {
        NetConfig {
            encoder_widths: vec![32, 64, 128],
            head_widths: vec![64, 32, 1],
            use_batch_norm_encoder: true,
        }
    }

    /// The full-size architecture: a 1024-channel point encoder and a
    /// 512-256-40-1 head.
    pub fn full_scale() -> Self {
        NetConfig {
            encoder_widths: vec![64, 64, 64, 128, 1024],
            head_widths: vec![512, 256, 40, 1],
            use_batch_norm_encoder: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_widths.is_empty() || self.head_widths.is_empty() {
            return Err(Error::config("encoder and head need at least one layer"));
        }
        if self.encoder_widths.iter().chain(&self.head_widths).any(|&w| w == 0) {
            return Err(Error::config("layer widths must be >= 1"));
        }
        if self.head_widths.last() != Some(&1) {
            return Err(Error::config("the last head width must be 1 (scalar energy)"));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        *self.encoder_widths.last().expect("validated config")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pool {
    Mean,
    Max,
}

pub use crate::tensor::BnMode;

#[derive(Clone, Debug, PartialEq)]
struct Linear {
    weight: Tensor,
    bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
struct Norm {
    gamma: Tensor,
    beta: Tensor,
    running: RunningStats,
}

/// A flat, canonically ordered collection of parameter-shaped tensors:
/// gradients, optimizer moments, or the parameters themselves.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        ParamSet { tensors }
    }

    pub fn zeros_like(other: &ParamSet) -> Self {
        ParamSet { tensors: other.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect() }
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors.iter().flat_map(|t| t.data().iter().copied())
    }

    pub fn norm(&self) -> f64 {
        self.tensors.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &ParamSet) -> f64 {
        self.values().zip(other.values()).map(|(a, b)| a * b).sum()
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &ParamSet) -> Result<ParamSet> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }

    fn zip_with(&self, other: &ParamSet, f: impl Fn(f64, f64) -> f64) -> Result<ParamSet> {
        if self.tensors.len() != other.tensors.len()
            || self.tensors.iter().zip(&other.tensors).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::shape("parameter sets differ in structure"));
        }
        let tensors = self
            .tensors
            .iter()
            .zip(&other.tensors)
            .map(|(a, b)| {
                let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
                Tensor::new(a.shape().to_vec(), data).expect("same shape")
            })
            .collect();
        Ok(ParamSet { tensors })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyNet {
    config: NetConfig,
    encoder: Vec<Linear>,
    norms: Vec<Norm>,
    head: Vec<Linear>,
}

/// Node handles from one recorded forward pass.
struct Recorded {
    input: NodeId,
    params: Vec<NodeId>,
    energies: NodeId,
    /// Post-activation outputs of each encoder layer, `[B·M × C]`.
    encoder_outputs: Vec<NodeId>,
    batch_stats: Vec<(Vec<f64>, Vec<f64>)>,
}

impl EnergyNet {
    /// Uniform `±1/sqrt(fan_in)` weights, zero biases, unit gammas.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut linear = |fan_in: usize, fan_out: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let w = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
            Linear {
                weight: Tensor::matrix(fan_in, fan_out, w).expect("shape"),
                bias: Tensor::zeros(&[fan_out]),
            }
        };
        let mut encoder = Vec::new();
        let mut norms = Vec::new();
        let mut fan_in = 3;
        for &w in &config.encoder_widths {
            encoder.push(linear(fan_in, w));
            if config.use_batch_norm_encoder {
                norms.push(Norm {
                    gamma: Tensor::full(&[w], 1.0),
                    beta: Tensor::zeros(&[w]),
                    running: RunningStats::new(w),
                });
            }
            fan_in = w;
        }
        let mut head = Vec::new();
        for &w in &config.head_widths {
            head.push(linear(fan_in, w));
            fan_in = w;
        }
        Ok(EnergyNet { config, encoder, norms, head })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// Parameter names in canonical order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.encoder.len() {
            names.push(format!("encoder.{i}.weight"));
            names.push(format!("encoder.{i}.bias"));
            if !self.norms.is_empty() {
                names.push(format!("encoder.{i}.bn.gamma"));
                names.push(format!("encoder.{i}.bn.beta"));
            }
        }
        for i in 0..self.head.len() {
            names.push(format!("head.{i}.weight"));
            names.push(format!("head.{i}.bias"));
        }
        names
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for (i, lin) in self.encoder.iter().enumerate() {
            out.push(&lin.weight);
            out.push(&lin.bias);
            if let Some(n) = self.norms.get(i) {
                out.push(&n.gamma);
                out.push(&n.beta);
            }
        }
        for lin in &self.head {
            out.push(&lin.weight);
            out.push(&lin.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        let mut norms = self.norms.iter_mut();
        for lin in &mut self.encoder {
            out.push(&mut lin.weight);
            out.push(&mut lin.bias);
            if let Some(n) = norms.next() {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        for lin in &mut self.head {
            out.push(&mut lin.weight);
            out.push(&mut lin.bias);
        }
        out
    }

    pub fn param_set(&self) -> ParamSet {
        ParamSet::new(self.params().into_iter().cloned().collect())
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Running statistics of each encoder normalization layer.
    pub fn running_stats(&self) -> Vec<&RunningStats> {
        self.norms.iter().map(|n| &n.running).collect()
    }

    pub(crate) fn set_running_stats(&mut self, layer: usize, stats: RunningStats) -> Result<()> {
        let norm = self
            .norms
            .get_mut(layer)
            .ok_or(Error::Index { index: layer, len: self.encoder.len() })?;
        if stats.channels() != norm.running.channels() {
            return Err(Error::shape(format!("running stats for layer {layer} have wrong width")));
        }
        norm.running = stats;
        Ok(())
    }

    /// Whether eval-mode evaluation is possible.
    pub fn is_calibrated(&self) -> bool {
        self.norms.iter().all(|n| n.running.is_populated())
    }

    /// Runs a train-mode forward pass on `batch` and folds its per-layer
    /// statistics into the running estimates. Parameters are untouched.
    pub fn update_running_stats(&mut self, batch: &[PointCloud]) -> Result<()> {
        if self.norms.is_empty() {
            return Ok(());
        }
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, batch, BnMode::Train, false, false)?;
        for (norm, (mean, var)) in self.norms.iter_mut().zip(rec.batch_stats) {
            norm.running.update(&mean, &var);
        }
        Ok(())
    }

    /// Negative energy `f(X)` of every cloud in `batch`.
    pub fn energy_forward(&self, batch: &[PointCloud], mode: BnMode) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, batch, mode, false, false)?;
        Ok(tape.value(rec.energies).data().to_vec())
    }

    /// Gradient of the batch-mean energy with respect to every parameter,
    /// alongside the per-cloud energies.
    pub fn grad_params(&self, batch: &[PointCloud], mode: BnMode) -> Result<(Vec<f64>, ParamSet)> {
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, batch, mode, true, false)?;
        let root = tape.mean(rec.energies);
        let mut grads = tape.backward(root)?;
        let energies = tape.value(rec.energies).data().to_vec();
        let tensors = rec.params.iter().map(|&id| grads.take(id)).collect();
        Ok((energies, ParamSet::new(tensors)))
    }

    /// Per-cloud coordinate gradients `∂f(X_i)/∂X_i` in eval mode.
    pub fn grad_input(&self, batch: &[PointCloud]) -> Result<(Vec<f64>, Vec<Coords>)> {
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, batch, BnMode::Eval, false, true)?;
        // Eval mode decouples clouds, so the gradient of the summed energy
        // splits into each cloud's own gradient.
        let root = tape.sum(rec.energies);
        let grads = tape.backward(root)?;
        let energies = tape.value(rec.energies).data().to_vec();
        let flat = grads.wrt(rec.input);
        let m = batch[0].len();
        let per_cloud = flat
            .data()
            .chunks_exact(3 * m)
            .map(|c| c.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect())
            .collect();
        Ok((energies, per_cloud))
    }

    /// Post-activation outputs `[M × C]` of encoder layer `layer`, eval mode.
    pub fn point_features(&self, cloud: &PointCloud, layer: usize) -> Result<Tensor> {
        if layer >= self.encoder.len() {
            return Err(Error::Index { index: layer, len: self.encoder.len() });
        }
        let mut tape = Tape::new();
        let rec = self.record_encoder(&mut tape, std::slice::from_ref(cloud), BnMode::Eval, false)?;
        Ok(tape.value(rec.encoder_outputs[layer]).clone())
    }

    /// Pooled final-layer encoder features of one cloud, eval mode.
    pub fn global_feature(&self, cloud: &PointCloud, pool: Pool) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let rec = self.record_encoder(&mut tape, std::slice::from_ref(cloud), BnMode::Eval, false)?;
        let last = *rec.encoder_outputs.last().expect("non-empty encoder");
        let c = self.config.feature_dim();
        let x = tape.reshape(last, &[1, cloud.len(), c])?;
        let pooled = match pool {
            Pool::Mean => tape.mean_points(x)?,
            Pool::Max => tape.max_points(x)?,
        };
        Ok(tape.value(pooled).data().to_vec())
    }

    fn record_encoder(
        &self,
        tape: &mut Tape,
        batch: &[PointCloud],
        mode: BnMode,
        param_grads: bool,
    ) -> Result<Recorded> {
        self.record_inner(tape, batch, mode, param_grads, false, false)
    }

    fn record(
        &self,
        tape: &mut Tape,
        batch: &[PointCloud],
        mode: BnMode,
        param_grads: bool,
        input_grad: bool,
    ) -> Result<Recorded> {
        self.record_inner(tape, batch, mode, param_grads, input_grad, true)
    }

    fn record_inner(
        &self,
        tape: &mut Tape,
        batch: &[PointCloud],
        mode: BnMode,
        param_grads: bool,
        input_grad: bool,
        with_head: bool,
    ) -> Result<Recorded> {
        let m = common_size(batch)?;
        let b = batch.len();
        if mode == BnMode::Eval && !self.is_calibrated() {
            return Err(Error::State(
                "eval-mode forward needs populated batch-norm running statistics".into(),
            ));
        }
        let mut coords = Vec::with_capacity(b * m * 3);
        for cloud in batch {
            coords.extend_from_slice(cloud.flat());
        }
        let input = tape.leaf(Tensor::matrix(b * m, 3, coords)?, input_grad);

        let mut params = Vec::new();
        let mut encoder_outputs = Vec::new();
        let mut batch_stats = Vec::new();
        let mut x = input;
        for (i, lin) in self.encoder.iter().enumerate() {
            let w = tape.leaf(lin.weight.clone(), param_grads);
            let bias = tape.leaf(lin.bias.clone(), param_grads);
            params.extend([w, bias]);
            x = tape.matmul(x, w)?;
            x = tape.add_bias(x, bias)?;
            if let Some(norm) = self.norms.get(i) {
                let gamma = tape.leaf(norm.gamma.clone(), param_grads);
                let beta = tape.leaf(norm.beta.clone(), param_grads);
                params.extend([gamma, beta]);
                x = match mode {
                    BnMode::Train => {
                        let (y, mean, var) = tape.batch_norm_train(x, gamma, beta)?;
                        batch_stats.push((mean, var));
                        y
                    }
                    BnMode::Eval => tape.batch_norm_eval(x, gamma, beta, &norm.running)?,
                };
            }
            x = tape.relu(x);
            encoder_outputs.push(x);
        }
        if !with_head {
            return Ok(Recorded { input, params, energies: x, encoder_outputs, batch_stats });
        }

        let c = self.config.feature_dim();
        let x3 = tape.reshape(x, &[b, m, c])?;
        let mut h = tape.mean_points(x3)?;
        let last = self.head.len() - 1;
        for (i, lin) in self.head.iter().enumerate() {
            let w = tape.leaf(lin.weight.clone(), param_grads);
            let bias = tape.leaf(lin.bias.clone(), param_grads);
            params.extend([w, bias]);
            h = tape.matmul(h, w)?;
            h = tape.add_bias(h, bias)?;
            if i < last {
                h = tape.relu(h);
            }
        }
        Ok(Recorded { input, params, energies: h, encoder_outputs, batch_stats })
    }
}

/// In eval mode the network is built from affine maps, ReLUs and pooling,
/// so `f` is piecewise linear in the coordinates: its input gradient is
/// piecewise constant and the Hessian vanishes almost everywhere.
impl EnergyFunction for EnergyNet {
    fn energies(&self, batch: &[PointCloud]) -> Result<Vec<f64>> {
        self.energy_forward(batch, BnMode::Eval)
    }

    fn energies_and_grads(&self, batch: &[PointCloud]) -> Result<(Vec<f64>, Vec<Coords>)> {
        self.grad_input(batch)
    }

    fn hessian_vector(&self, batch: &[PointCloud], v: &[Coords]) -> Result<Vec<Coords>> {
        common_size(batch)?;
        Ok(v.iter().map(|c| vec![[0.0; 3]; c.len()]).collect())
    }
}
