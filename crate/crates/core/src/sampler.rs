//! Langevin-dynamics MCMC over point-cloud space.
//!
//! One step moves every chain by
//! `X ← X + (δ²/2)·∂f/∂X + noise_scale·δ·U`, `U ~ N(0, I)`.
//! A fixed number `K` of such steps started from Gaussian noise is the
//! short-run generator; with `noise_scale = 0` it is a deterministic map
//! of its initial state.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cloud::{common_size, PointCloud};
use crate::energy::{Coords, EnergyFunction};
use crate::error::{Error, Result};

/// Where each sampling round starts its chains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    /// Fresh Gaussian white noise every round (short-run MCMC).
    Noise,
    /// Continue from the chains left by the previous round.
    Persistent,
    /// Start from observed examples (contrastive divergence).
    Data,
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(InitScheme::Noise),
            "persistent" => Ok(InitScheme::Persistent),
            "data" => Ok(InitScheme::Data),
            _ => Err(Error::config(format!("unknown init scheme {s:?} (noise|persistent|data)"))),
        }
    }
}

impl std::fmt::Display for InitScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitScheme::Noise => "noise",
            InitScheme::Persistent => "persistent",
            InitScheme::Data => "data",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    /// Langevin step size δ.
    pub step_size: f64,
    /// Number of steps K.
    pub num_steps: usize,
    /// Multiplier on the injected noise; 0 disables it.
    pub noise_scale: f64,
    pub init_scheme: InitScheme,
    /// Optional symmetric bound coordinates are clamped to after each step.
    pub clamp_bound: Option<f64>,
    /// Probability that a persistent chain is restarted from noise.
    pub refresh_prob: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            step_size: 0.01,
            num_steps: 64,
            noise_scale: 1.0,
            init_scheme: InitScheme::Noise,
            clamp_bound: None,
            refresh_prob: 0.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::config(format!("step size must be > 0, got {}", self.step_size)));
        }
        if self.num_steps == 0 {
            return Err(Error::config("number of Langevin steps must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.noise_scale) {
            return Err(Error::config(format!("noise scale must be in [0, 1], got {}", self.noise_scale)));
        }
        if !(0.0..=1.0).contains(&self.refresh_prob) {
            return Err(Error::config("refresh probability must be in [0, 1]"));
        }
        if matches!(self.clamp_bound, Some(b) if !(b > 0.0)) {
            return Err(Error::config("clamp bound must be > 0"));
        }
        Ok(())
    }

    /// The same dynamics with the injected noise switched off.
    pub fn noise_free(&self) -> SamplerConfig {
        SamplerConfig { noise_scale: 0.0, ..self.clone() }
    }
}

/// Counter-based Gaussian noise: the draw for `(chain, step)` depends only
/// on the stream key and those two indices, never on call order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseStream {
    key: [u8; 32],
}

/// Word offset used when deriving child keys, far beyond any noise draw.
const FORK_WORD_POS: u128 = 1 << 66;

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut key);
        NoiseStream { key }
    }

    /// An independent stream identified by `label`.
    pub fn fork(&self, label: u64) -> Self {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(label);
        rng.set_word_pos(FORK_WORD_POS);
        let mut key = [0u8; 32];
        rng.fill_bytes(&mut key);
        NoiseStream { key }
    }

    /// A generator positioned at the start of the `(chain, step)` block.
    pub fn rng(&self, chain: u32, step: u32) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(((chain as u64) << 32) | step as u64);
        rng
    }

    pub fn normals(&self, chain: u32, step: u32, n: usize) -> Vec<f64> {
        let mut rng = self.rng(chain, step);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Per-point standard normal vectors for one chain at one step.
    pub fn coords(&self, chain: u32, step: u32, m: usize) -> Coords {
        let flat = self.normals(chain, step, 3 * m);
        flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    /// Mean of `f` over the chains before the step.
    pub mean_energy: f64,
    /// Mean Frobenius norm of the coordinate gradients.
    pub mean_grad_norm: f64,
}

/// One Langevin step with caller-supplied standard normal noise.
pub fn langevin_step_with_noise<E: EnergyFunction + ?Sized>(
    energy: &E,
    batch: &[PointCloud],
    step_size: f64,
    noise_scale: f64,
    noise: &[Coords],
    clamp_bound: Option<f64>,
) -> Result<(Vec<PointCloud>, StepStats)> {
    if !(step_size > 0.0) {
        return Err(Error::contract("Langevin step size must be > 0"));
    }
    let m = common_size(batch)?;
    if noise.len() != batch.len() || noise.iter().any(|n| n.len() != m) {
        return Err(Error::shape("noise does not match the batch"));
    }
    let (energies, grads) = energy.energies_and_grads(batch)?;
    let drift = 0.5 * step_size * step_size;
    let diffusion = noise_scale * step_size;
    let mut out = Vec::with_capacity(batch.len());
    let mut grad_norm_sum = 0.0;
    for (i, ((cloud, grad), u)) in batch.iter().zip(&grads).zip(noise).enumerate() {
        let mut norm_sq = 0.0;
        let mut points = Vec::with_capacity(m);
        for ((p, g), n) in cloud.points().iter().zip(grad).zip(u) {
            let mut q = [0.0; 3];
            for d in 0..3 {
                norm_sq += g[d] * g[d];
                q[d] = p[d] + drift * g[d] + diffusion * n[d];
                if let Some(b) = clamp_bound {
                    q[d] = q[d].clamp(-b, b);
                }
            }
            points.push(q);
        }
        if !norm_sq.is_finite() || !energies[i].is_finite() {
            return Err(Error::Divergence {
                context: format!("chain {i}"),
                message: "non-finite energy gradient".into(),
            });
        }
        let cloud = PointCloud::new(points).map_err(|_| Error::Divergence {
            context: format!("chain {i}"),
            message: "non-finite coordinates after update".into(),
        })?;
        out.push(cloud);
        grad_norm_sum += norm_sq.sqrt();
    }
    let n = batch.len() as f64;
    let stats = StepStats {
        mean_energy: energies.iter().sum::<f64>() / n,
        mean_grad_norm: grad_norm_sum / n,
    };
    Ok((out, stats))
}

/// One Langevin step drawing chain `i`'s noise from `(i, step)` of `noise`.
pub fn langevin_step<E: EnergyFunction + ?Sized>(
    energy: &E,
    batch: &[PointCloud],
    step_size: f64,
    noise_scale: f64,
    noise: &NoiseStream,
    step: u32,
) -> Result<(Vec<PointCloud>, StepStats)> {
    let u = draw_noise(batch, noise_scale, noise, step)?;
    langevin_step_with_noise(energy, batch, step_size, noise_scale, &u, None)
}

fn draw_noise(batch: &[PointCloud], noise_scale: f64, noise: &NoiseStream, step: u32) -> Result<Vec<Coords>> {
    let m = common_size(batch)?;
    Ok((0..batch.len())
        .map(|i| {
            if noise_scale == 0.0 {
                vec![[0.0; 3]; m]
            } else {
                noise.coords(i as u32, step, m)
            }
        })
        .collect())
}

/// Final chain states and per-step diagnostics.
#[derive(Clone, Debug)]
pub struct ChainRun {
    pub clouds: Vec<PointCloud>,
    pub diagnostics: Vec<StepStats>,
}

impl ChainRun {
    /// Diagnostics as CSV: `step,mean_energy,mean_grad_norm`.
    pub fn diagnostics_csv(&self) -> String {
        let mut s = String::from("step,mean_energy,mean_grad_norm\n");
        for (i, d) in self.diagnostics.iter().enumerate() {
            s.push_str(&format!("{i},{},{}\n", d.mean_energy, d.mean_grad_norm));
        }
        s
    }
}

/// `K` Langevin steps from `init`.
pub fn run_chain<E: EnergyFunction + ?Sized>(
    energy: &E,
    init: &[PointCloud],
    config: &SamplerConfig,
    noise: &NoiseStream,
) -> Result<ChainRun> {
    config.validate()?;
    let mut clouds = init.to_vec();
    let mut diagnostics = Vec::with_capacity(config.num_steps);
    for step in 0..config.num_steps {
        let u = draw_noise(&clouds, config.noise_scale, noise, step as u32)?;
        let (next, stats) = langevin_step_with_noise(
            energy,
            &clouds,
            config.step_size,
            config.noise_scale,
            &u,
            config.clamp_bound,
        )
        .map_err(|e| match e {
            Error::Divergence { context, message } => {
                Error::Divergence { context: format!("step {step}, {context}"), message }
            }
            other => other,
        })?;
        clouds = next;
        diagnostics.push(stats);
    }
    Ok(ChainRun { clouds, diagnostics })
}

/// The short-run generator `M(Z, ξ)`; with `noise_disabled` it is the
/// deterministic map `M(Z)`.
pub fn short_run_generate<E: EnergyFunction + ?Sized>(
    energy: &E,
    z: &[PointCloud],
    config: &SamplerConfig,
    noise: &NoiseStream,
    noise_disabled: bool,
) -> Result<ChainRun> {
    if noise_disabled {
        run_chain(energy, z, &config.noise_free(), noise)
    } else {
        run_chain(energy, z, config, noise)
    }
}

/// `count` clouds of `m` i.i.d. standard normal points.
pub fn noise_clouds<R: Rng + ?Sized>(rng: &mut R, count: usize, m: usize) -> Vec<PointCloud> {
    (0..count)
        .map(|_| {
            let pts = (0..m)
                .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)])
                .collect();
            PointCloud::new(pts).expect("finite normals")
        })
        .collect()
}

/// A bank of persistent chains carried across sampling rounds.
#[derive(Clone, Debug)]
pub struct ChainState {
    clouds: Vec<PointCloud>,
    ages: Vec<u64>,
    drawn: Vec<usize>,
}

impl ChainState {
    pub fn new(clouds: Vec<PointCloud>) -> Result<Self> {
        if clouds.is_empty() {
            return Err(Error::config("persistent chain bank must be non-empty"));
        }
        let n = clouds.len();
        Ok(ChainState { clouds, ages: vec![0; n], drawn: Vec::new() })
    }

    pub fn from_noise<R: Rng + ?Sized>(rng: &mut R, size: usize, m: usize) -> Result<Self> {
        ChainState::new(noise_clouds(rng, size, m))
    }

    pub fn clouds(&self) -> &[PointCloud] {
        &self.clouds
    }

    pub fn ages(&self) -> &[u64] {
        &self.ages
    }

    /// Writes advanced chains back to the slots last handed out.
    pub fn store(&mut self, clouds: Vec<PointCloud>, steps: u64) -> Result<()> {
        if clouds.len() != self.drawn.len() {
            return Err(Error::contract("store() needs one cloud per drawn chain"));
        }
        for (&slot, cloud) in self.drawn.iter().zip(clouds) {
            self.clouds[slot] = cloud;
            self.ages[slot] += steps;
        }
        self.drawn.clear();
        Ok(())
    }
}

/// Starting states for one sampling round of `b` chains of `m` points.
pub fn init_chains<R: Rng + ?Sized>(
    scheme: InitScheme,
    b: usize,
    m: usize,
    data: Option<&[PointCloud]>,
    state: Option<&mut ChainState>,
    refresh_prob: f64,
    rng: &mut R,
) -> Result<Vec<PointCloud>> {
    match scheme {
        InitScheme::Noise => Ok(noise_clouds(rng, b, m)),
        InitScheme::Data => {
            let data = data
                .filter(|d| !d.is_empty())
                .ok_or_else(|| Error::config("data-initialized chains need a training set"))?;
            Ok((0..b).map(|_| data[rng.random_range(0..data.len())].clone()).collect())
        }
        InitScheme::Persistent => {
            let state = state.ok_or_else(|| Error::config("persistent chains need a chain bank"))?;
            if state.clouds.len() < b {
                return Err(Error::config(format!(
                    "chain bank holds {} chains, {b} requested",
                    state.clouds.len()
                )));
            }
            let drawn = rand::seq::index::sample(rng, state.clouds.len(), b).into_vec();
            let mut out = Vec::with_capacity(b);
            for &slot in &drawn {
                if refresh_prob > 0.0 && rng.random::<f64>() < refresh_prob {
                    state.clouds[slot] = noise_clouds(rng, 1, m).remove(0);
                    state.ages[slot] = 0;
                }
                out.push(state.clouds[slot].clone());
            }
            state.drawn = drawn;
            Ok(out)
        }
    }
}
