//! Checkpoint metadata the commands rely on: the point count, the sampler
//! the model was trained with, and the data normalization.

use std::path::Path;

use pointebm::data::{AxisAffine, Normalization};
use pointebm::{load_checkpoint, Checkpoint, EnergyNet, InitScheme, PointCloud, SamplerConfig};

use crate::CliError;

pub struct Model {
    pub net: EnergyNet,
    pub num_points: usize,
    pub sampler: SamplerConfig,
    /// Pooled normalization of the training data; `None` after per-cloud
    /// normalization, in which case clouds are normalized individually.
    pub affine: Option<AxisAffine>,
}

fn triple(v: [f64; 3]) -> String {
    format!("{},{},{}", v[0], v[1], v[2])
}

fn parse_triple(s: &str) -> Option<[f64; 3]> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse().ok()).collect::<Option<_>>()?;
    v.try_into().ok()
}

pub fn checkpoint(net: EnergyNet, num_points: usize, sampler: &SamplerConfig, norm: Option<&Normalization>) -> Checkpoint {
    let mut ckpt = Checkpoint::new(net)
        .with("num_points", num_points)
        .with("step_size", sampler.step_size)
        .with("num_steps", sampler.num_steps)
        .with("noise_scale", sampler.noise_scale)
        .with("clamp_bound", sampler.clamp_bound.map_or("none".to_string(), |b| b.to_string()));
    match norm {
        Some(Normalization::Pooled(a)) => {
            ckpt = ckpt.with("normalization", "pooled").with("norm_mean", triple(a.mean)).with("norm_scale", triple(a.scale))
        }
        Some(Normalization::PerCloud(_)) => ckpt = ckpt.with("normalization", "per-cloud"),
        None => ckpt = ckpt.with("normalization", "none"),
    }
    ckpt
}

pub fn load(path: &Path) -> Result<Model, CliError> {
    let ckpt = load_checkpoint(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let missing = |key: &str| CliError::Data(format!("{}: checkpoint lacks `{key}`", path.display()));
    let get = |key: &str| ckpt.get(key).ok_or_else(|| missing(key));
    let num = |key: &str| -> Result<f64, CliError> {
        get(key)?.parse().map_err(|_| CliError::Data(format!("{}: bad `{key}`", path.display())))
    };
    let sampler = SamplerConfig {
        step_size: num("step_size")?,
        num_steps: num("num_steps")? as usize,
        noise_scale: num("noise_scale")?,
        init_scheme: InitScheme::Noise,
        clamp_bound: match get("clamp_bound")? {
            "none" => None,
            _ => Some(num("clamp_bound")?),
        },
        refresh_prob: 0.0,
    };
    let affine = match get("normalization")? {
        "pooled" => {
            let mean = parse_triple(get("norm_mean")?).ok_or_else(|| missing("norm_mean"))?;
            let scale = parse_triple(get("norm_scale")?).ok_or_else(|| missing("norm_scale"))?;
            Some(AxisAffine { mean, scale })
        }
        _ => None,
    };
    Ok(Model { num_points: num("num_points")? as usize, sampler, affine, net: ckpt.net })
}

impl Model {
    /// Maps a cloud in data coordinates into the model's space.
    pub fn to_model(&self, cloud: &PointCloud) -> Result<PointCloud, CliError> {
        match self.affine {
            Some(a) => Ok(a.apply(cloud)),
            None => Ok(AxisAffine::fit([cloud])?.apply(cloud)),
        }
    }

    /// Maps a model-space cloud back to data coordinates where a pooled
    /// normalization is known.
    pub fn to_data(&self, cloud: &PointCloud) -> PointCloud {
        match self.affine {
            Some(a) => a.invert(cloud),
            None => cloud.clone(),
        }
    }
}
