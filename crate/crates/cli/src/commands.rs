use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use pointebm::classify::{
    accuracy, classify as predict, extract_features, robustness_curve, train_linear_classifier, CorruptionKind,
    FeatureSet,
};
use pointebm::data::{
    load_cloud, load_manifest, normalize, normalize_per_cloud, resample, save_cloud, synth_shape, Dataset,
    ManifestEntry, ShapeKind,
};
use pointebm::generator::{interpolate as interpolate_frames, reconstruct_many, ReconConfig};
use pointebm::metrics::{chamfer, emd_detailed, evaluate as evaluate_sets, DEFAULT_JSD_RESOLUTION, EMD_EXACT_THRESHOLD};
use pointebm::net::NetConfig;
use pointebm::sampler::{noise_clouds, short_run_generate};
use pointebm::trainer::{train_with_hook, OptimizerKind, TrainLog};
use pointebm::{save_checkpoint, NoiseStream, PointCloud, SamplerConfig, TrainConfig};
use rand::RngCore;

use crate::model::{self, Model};
use crate::run::{fnv1a, io_err, Run};
use crate::settings::Settings;
use crate::{CliError, Common};

type Defaults = Vec<(&'static str, String)>;

fn s(v: impl ToString) -> String {
    v.to_string()
}

fn opt(v: Option<impl ToString>) -> Option<String> {
    v.map(|v| v.to_string())
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn resolve(common: &Common, mut defaults: Defaults, mut flags: Vec<(&'static str, Option<String>)>) -> Result<Settings, CliError> {
    defaults.push(("seed", s(0)));
    flags.push(("seed", opt(common.seed)));
    Settings::resolve(defaults, common.config.as_deref(), flags)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CloudFormat {
    Ply,
    Xyz,
}

impl std::str::FromStr for CloudFormat {
    type Err = String;

    fn from_str(v: &str) -> Result<Self, String> {
        match v {
            "ply" => Ok(CloudFormat::Ply),
            "xyz" => Ok(CloudFormat::Xyz),
            _ => Err(format!("unknown format {v:?} (ply|xyz)")),
        }
    }
}

impl CloudFormat {
    fn ext(self) -> &'static str {
        match self {
            CloudFormat::Ply => "ply",
            CloudFormat::Xyz => "xyz",
        }
    }
}

fn write_cloud(run: &mut Run, name: &str, cloud: &PointCloud) -> Result<(), CliError> {
    let path = run.artifact(name);
    save_cloud(&path, cloud).map_err(CliError::from)
}

fn sampler_defaults(d: &mut Defaults, base: &SamplerConfig) {
    d.push(("step_size", s(base.step_size)));
    d.push(("num_steps", s(base.num_steps)));
    d.push(("noise_scale", s(base.noise_scale)));
}

fn sampler_from(settings: &Settings, base: &SamplerConfig) -> Result<SamplerConfig, CliError> {
    let cfg = sampler_fields(settings, base)?;
    cfg.validate()?;
    Ok(cfg)
}

fn sampler_fields(settings: &Settings, base: &SamplerConfig) -> Result<SamplerConfig, CliError> {
    Ok(SamplerConfig {
        step_size: settings.get("step_size")?,
        num_steps: settings.get("num_steps")?,
        noise_scale: settings.get("noise_scale")?,
        ..base.clone()
    })
}

/// Sampler flags that default to the values stored in the checkpoint.
#[derive(Args, Clone)]
pub struct SamplerFlags {
    /// Langevin steps K (default: as trained).
    #[arg(long)]
    num_steps: Option<usize>,
    /// Langevin step size δ (default: as trained).
    #[arg(long)]
    step_size: Option<f64>,
    /// Multiplier on the injected noise, in [0, 1] (default: as trained).
    #[arg(long)]
    noise_scale: Option<f64>,
}

impl SamplerFlags {
    fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("num_steps", opt(self.num_steps)),
            ("step_size", opt(self.step_size)),
            ("noise_scale", opt(self.noise_scale)),
        ]
    }
}

/// Settings for a command that loads a checkpoint: inherited sampler
/// values start out as `checkpoint` and are materialized after loading.
fn resolve_with_model(
    common: &Common,
    checkpoint: &Path,
    mut defaults: Defaults,
    flags: Vec<(&'static str, Option<String>)>,
) -> Result<(Settings, Model), CliError> {
    for key in ["num_steps", "step_size", "noise_scale"] {
        defaults.push((key, s("checkpoint")));
    }
    let mut settings = resolve(common, defaults, flags)?;
    let model = model::load(checkpoint)?;
    let inherited = [
        ("num_steps", s(model.sampler.num_steps)),
        ("step_size", s(model.sampler.step_size)),
        ("noise_scale", s(model.sampler.noise_scale)),
    ];
    for (key, value) in inherited {
        if settings.raw(key) == "checkpoint" {
            settings.set(key, value);
        }
    }
    Ok((settings, model))
}

// ---------------------------------------------------------------- train

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Manifest of training clouds (path<TAB>label per line).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// adam or sgd.
    #[arg(long)]
    optimizer: Option<String>,
    /// Points per cloud after resampling.
    #[arg(long)]
    num_points: Option<usize>,
    /// pooled or per-cloud.
    #[arg(long)]
    normalization: Option<String>,
    /// Chain initialization: noise, persistent or data.
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    num_steps: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    noise_scale: Option<f64>,
    /// Iterations between intermediate checkpoints; 0 disables them.
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

fn train_defaults() -> Defaults {
    let base = TrainConfig::default();
    let mut d = vec![
        ("num_points", s(pointebm::data::DEFAULT_NUM_POINTS)),
        ("normalization", s("pooled")),
        ("encoder_widths", join(&base.net.encoder_widths)),
        ("head_widths", join(&base.net.head_widths)),
        ("batch_norm", s(base.net.use_batch_norm_encoder)),
        ("batch_size", s(base.batch_size)),
        ("epochs", s(base.epochs)),
        ("optimizer", s(base.optimizer)),
        ("learning_rate", s(base.learning_rate)),
        ("beta1", s(base.beta1)),
        ("beta2", s(base.beta2)),
        ("adam_epsilon", s(base.adam_epsilon)),
        ("grad_clip", base.grad_clip.map_or(s("none"), s)),
        ("init_scheme", s(base.sampler.init_scheme)),
        ("clamp_bound", base.sampler.clamp_bound.map_or(s("none"), s)),
        ("refresh_prob", s(base.sampler.refresh_prob)),
        ("checkpoint_every", s(base.checkpoint_every)),
    ];
    sampler_defaults(&mut d, &base.sampler);
    d
}

fn train_config(settings: &Settings, seed: u64) -> Result<TrainConfig, CliError> {
    let base = TrainConfig::default();
    let sampler = SamplerConfig {
        init_scheme: settings.get::<pointebm::InitScheme>("init_scheme")?,
        clamp_bound: settings.get_opt("clamp_bound")?,
        refresh_prob: settings.get("refresh_prob")?,
        ..sampler_fields(settings, &base.sampler)?
    };
    let cfg = TrainConfig {
        net: NetConfig {
            encoder_widths: settings.get_list("encoder_widths")?,
            head_widths: settings.get_list("head_widths")?,
            use_batch_norm_encoder: settings.get("batch_norm")?,
        },
        batch_size: settings.get("batch_size")?,
        epochs: settings.get("epochs")?,
        optimizer: settings.get::<OptimizerKind>("optimizer")?,
        learning_rate: settings.get("learning_rate")?,
        beta1: settings.get("beta1")?,
        beta2: settings.get("beta2")?,
        adam_epsilon: settings.get("adam_epsilon")?,
        grad_clip: settings.get_opt("grad_clip")?,
        sampler,
        seed,
        checkpoint_every: settings.get("checkpoint_every")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_dataset(run: &Run, manifest: &Path, num_points: usize) -> Result<Dataset, CliError> {
    let mut rng = run.rng("data");
    Dataset::load(manifest, Some(num_points), &mut rng).map_err(|e| match e {
        pointebm::Error::Contract(m) | pointebm::Error::Shape(m) => CliError::Data(m),
        other => other.into(),
    })
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let flags = vec![
        ("epochs", opt(a.epochs)),
        ("batch_size", opt(a.batch_size)),
        ("learning_rate", opt(a.learning_rate)),
        ("optimizer", a.optimizer.clone()),
        ("num_points", opt(a.num_points)),
        ("normalization", a.normalization.clone()),
        ("init_scheme", a.init.clone()),
        ("num_steps", opt(a.num_steps)),
        ("step_size", opt(a.step_size)),
        ("noise_scale", opt(a.noise_scale)),
        ("checkpoint_every", opt(a.checkpoint_every)),
    ];
    let settings = resolve(&a.common, train_defaults(), flags)?;
    let seed: u64 = settings.get("seed")?;
    let cfg = train_config(&settings, crate::run::stream_rng(seed, "train").next_u64())?;
    let num_points: usize = settings.get("num_points")?;
    let per_cloud = match settings.raw("normalization") {
        "pooled" => false,
        "per-cloud" => true,
        other => return Err(CliError::Usage(format!("invalid value {other:?} for `normalization` (pooled|per-cloud)"))),
    };

    let mut run = Run::start("train", &a.common.out, a.common.force, settings)?;
    let raw = load_dataset(&run, &a.data, num_points)?;
    let dataset = if per_cloud { normalize_per_cloud(&raw)? } else { normalize(&raw)? };

    let log_path = run.artifact("train_log.csv");
    let mut log = BufWriter::new(File::create(&log_path).map_err(io_err(&log_path))?);
    writeln!(log, "{}", TrainLog::CSV_HEADER).map_err(io_err(&log_path))?;
    if cfg.checkpoint_every > 0 {
        fs::create_dir_all(run.dir().join("checkpoints")).map_err(io_err(run.dir()))?;
    }
    let mut saved = Vec::new();
    let result = train_with_hook(&dataset.clouds, &cfg, |iteration, net, record| {
        writeln!(log, "{}", TrainLog::csv_row(record))?;
        if cfg.checkpoint_every > 0 && (iteration + 1) % cfg.checkpoint_every == 0 {
            let name = format!("checkpoints/ckpt_{:06}.ckpt", iteration + 1);
            let ckpt = model::checkpoint(net.clone(), num_points, &cfg.sampler, dataset.normalization.as_ref());
            save_checkpoint(&run.dir().join(&name), &ckpt)?;
            saved.push(name);
        }
        Ok(())
    });
    log.flush().map_err(io_err(&log_path))?;
    drop(log);
    for name in saved {
        run.artifact(&name);
    }
    let (net, train_log) = result?;

    let ckpt = model::checkpoint(net, num_points, &cfg.sampler, dataset.normalization.as_ref());
    let path = run.artifact("model.ckpt");
    save_checkpoint(&path, &ckpt)?;
    run.note("iterations", train_log.records.len());
    run.note("train_seed", cfg.seed);
    println!("trained {} iterations on {} clouds -> {}", train_log.records.len(), dataset.len(), path.display());
    run.finish()
}

// --------------------------------------------------------------- sample

#[derive(Args)]
pub struct SampleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    count: Option<usize>,
    #[command(flatten)]
    sampler: SamplerFlags,
    /// ply or xyz.
    #[arg(long)]
    format: Option<String>,
}

/// The latents behind `sample_0000`, `sample_0001`, … for a seed.
fn latents(run: &Run, count: usize, m: usize) -> Vec<PointCloud> {
    noise_clouds(&mut run.rng("sample"), count, m)
}

pub fn sample(a: SampleArgs) -> Result<(), CliError> {
    let mut flags = a.sampler.flags();
    flags.push(("count", opt(a.count)));
    flags.push(("format", a.format.clone()));
    let defaults = vec![("count", s(16)), ("format", s("ply"))];
    let (settings, model) = resolve_with_model(&a.common, &a.checkpoint, defaults, flags)?;
    let count: usize = settings.get("count")?;
    let format: CloudFormat = settings.get("format")?;
    let sampler = sampler_from(&settings, &model.sampler)?;

    let mut run = Run::start("sample", &a.common.out, a.common.force, settings)?;
    if count > 0 {
        let z = latents(&run, count, model.num_points);
        let noise = NoiseStream::new(run.stream_seed("sample-noise"));
        let clouds = short_run_generate(&model.net, &z, &sampler, &noise, false)?.clouds;
        for (i, c) in clouds.iter().enumerate() {
            write_cloud(&mut run, &format!("sample_{i:04}.{}", format.ext()), &model.to_data(c))?;
        }
    }
    println!("wrote {count} samples to {}", run.dir().display());
    run.finish()
}

// ---------------------------------------------------------- reconstruct

#[derive(Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Target cloud files.
    targets: Vec<PathBuf>,
    /// Manifest listing further targets.
    #[arg(long)]
    targets_manifest: Option<PathBuf>,
    #[arg(long)]
    recon_steps: Option<usize>,
    #[arg(long)]
    recon_step_size: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[command(flatten)]
    sampler: SamplerFlags,
    /// ply or xyz.
    #[arg(long)]
    format: Option<String>,
}

pub fn reconstruct(a: ReconstructArgs) -> Result<(), CliError> {
    let base = ReconConfig::default();
    let mut flags = a.sampler.flags();
    flags.extend([
        ("recon_steps", opt(a.recon_steps)),
        ("recon_step_size", opt(a.recon_step_size)),
        ("restarts", opt(a.restarts)),
        ("format", a.format.clone()),
    ]);
    let defaults = vec![
        ("recon_steps", s(base.recon_steps)),
        ("recon_step_size", s(base.recon_step_size)),
        ("restarts", s(base.restarts)),
        ("format", s("ply")),
    ];
    let mut targets = a.targets.clone();
    if let Some(m) = &a.targets_manifest {
        targets.extend(load_manifest(m)?.into_iter().map(|e| e.path));
    }
    if targets.is_empty() {
        return Err(CliError::Usage("no reconstruction targets given".into()));
    }
    let (settings, model) = resolve_with_model(&a.common, &a.checkpoint, defaults, flags)?;
    let recon = ReconConfig {
        recon_steps: settings.get("recon_steps")?,
        recon_step_size: settings.get("recon_step_size")?,
        restarts: settings.get("restarts")?,
    };
    recon.validate()?;
    let format: CloudFormat = settings.get("format")?;
    let sampler = sampler_from(&settings, &model.sampler)?;

    let mut run = Run::start("reconstruct", &a.common.out, a.common.force, settings)?;
    let mut resample_rng = run.rng("data");
    let mut normalized = Vec::with_capacity(targets.len());
    for path in &targets {
        let cloud = load_cloud(path)?;
        let cloud = if cloud.len() == model.num_points {
            cloud
        } else {
            eprintln!(
                "warning: {} has {} points; resampling to {}",
                path.display(),
                cloud.len(),
                model.num_points
            );
            resample(&cloud, model.num_points, &mut resample_rng)?
        };
        normalized.push(model.to_model(&cloud)?);
    }
    let results = reconstruct_many(&model.net, &normalized, &sampler, &recon, &mut run.rng("recon"))?;

    let mut csv = String::from("index,target,loss,initial_loss,cd,initial_cd,emd\n");
    for (i, (r, (target, path))) in results.iter().zip(normalized.iter().zip(&targets)).enumerate() {
        let cd = chamfer(&r.output, target)?;
        let cd0 = chamfer(&r.initial_output, target)?;
        let emd = emd_detailed(&r.output, target)?.cost;
        csv.push_str(&format!("{i},{},{},{},{cd},{cd0},{emd}\n", path.display(), r.loss, r.initial_loss));
        write_cloud(&mut run, &format!("recon_{i:04}.{}", format.ext()), &model.to_data(&r.output))?;
    }
    run.write("reconstruction.csv", csv)?;
    println!("reconstructed {} targets into {}", results.len(), run.dir().display());
    run.finish()
}

// ---------------------------------------------------------- interpolate

#[derive(Args)]
pub struct InterpolateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Number of frames, endpoints included.
    #[arg(long)]
    steps: Option<usize>,
    #[command(flatten)]
    sampler: SamplerFlags,
    /// ply or xyz.
    #[arg(long)]
    format: Option<String>,
}

pub fn interpolate(a: InterpolateArgs) -> Result<(), CliError> {
    let mut flags = a.sampler.flags();
    flags.extend([("steps", opt(a.steps)), ("format", a.format.clone())]);
    let defaults = vec![("steps", s(8)), ("format", s("ply"))];
    let (settings, model) = resolve_with_model(&a.common, &a.checkpoint, defaults, flags)?;
    let steps: usize = settings.get("steps")?;
    if steps < 2 {
        return Err(CliError::Usage(format!("interpolation needs at least 2 steps, got {steps}")));
    }
    let format: CloudFormat = settings.get("format")?;
    let sampler = sampler_from(&settings, &model.sampler)?;

    let mut run = Run::start("interpolate", &a.common.out, a.common.force, settings)?;
    let z = latents(&run, 2, model.num_points);
    let frames = interpolate_frames(&model.net, &z[0], &z[1], steps, &sampler)?;
    for (i, f) in frames.iter().enumerate() {
        write_cloud(&mut run, &format!("frame_{i:02}.{}", format.ext()), &model.to_data(f))?;
    }
    println!("wrote {steps} frames to {}", run.dir().display());
    run.finish()
}

// ------------------------------------------------------------- evaluate

#[derive(Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    /// Directory of generated clouds.
    #[arg(long)]
    gen: PathBuf,
    /// Directory of reference clouds.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Voxels per axis for the JSD histogram.
    #[arg(long)]
    jsd_resolution: Option<usize>,
}

/// Every `.ply`/`.xyz` file in `dir`, sorted by file name.
fn load_dir(dir: &Path) -> Result<Vec<PointCloud>, CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("ply" | "xyz")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Usage(format!("{} contains no .ply or .xyz clouds", dir.display())));
    }
    paths.iter().map(|p| load_cloud(p).map_err(CliError::from)).collect()
}

pub fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let settings = resolve(
        &a.common,
        vec![("jsd_resolution", s(DEFAULT_JSD_RESOLUTION))],
        vec![("jsd_resolution", opt(a.jsd_resolution))],
    )?;
    let resolution: usize = settings.get("jsd_resolution")?;
    let gen = load_dir(&a.gen)?;
    let reference = load_dir(&a.reference)?;

    let mut run = Run::start("evaluate", &a.common.out, a.common.force, settings)?;
    let report = evaluate_sets(&gen, &reference, resolution)?;
    run.write("metrics.csv", report.to_csv())?;
    run.write("metrics.txt", report.to_text())?;
    let solver = if report.emd_exact {
        "exact assignment".to_string()
    } else {
        format!("auction approximation (clouds above {EMD_EXACT_THRESHOLD} points)")
    };
    run.note("emd_solver", solver);
    print!("{}", report.to_text());
    run.finish()
}

// --------------------------------------------------- classify / features

#[derive(Args)]
pub struct ClassifyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled manifest; split 80/20 into train and test by a hash of file names.
    #[arg(long)]
    data: PathBuf,
    /// Regularization weight of the linear SVM.
    #[arg(long)]
    reg: Option<f64>,
    #[arg(long)]
    svm_epochs: Option<usize>,
    /// Robustness sweep `kind:level,level,…` (kind: missing, added, perturb); repeatable.
    #[arg(long)]
    corrupt: Vec<String>,
}

#[derive(Args)]
pub struct FeaturesArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

/// Clouds of a manifest brought to the model's size and space.
fn model_dataset(run: &Run, model: &Model, manifest: &Path) -> Result<Dataset, CliError> {
    let mut ds = load_dataset(run, manifest, model.num_points)?;
    ds.clouds = ds.clouds.iter().map(|c| model.to_model(c)).collect::<Result<_, _>>()?;
    Ok(ds)
}

fn file_name(name: &str) -> &str {
    Path::new(name).file_name().and_then(|n| n.to_str()).unwrap_or(name)
}

/// Deterministic 80/20 split on a hash of the file name, independent of
/// the manifest order and of where the files live.
fn is_test(name: &str) -> bool {
    fnv1a(file_name(name).as_bytes()).is_multiple_of(5)
}

fn parse_corruption(spec: &str) -> Result<(CorruptionKind, Vec<f64>), CliError> {
    let bad = || CliError::Usage(format!("invalid --corrupt {spec:?}; expected kind:level[,level…]"));
    let (kind, levels) = spec.split_once(':').ok_or_else(bad)?;
    let kind: CorruptionKind = kind.parse()?;
    let levels = levels.split(',').map(|l| l.trim().parse().map_err(|_| bad())).collect::<Result<Vec<f64>, _>>()?;
    Ok((kind, levels))
}

pub fn classify(a: ClassifyArgs) -> Result<(), CliError> {
    let defaults = vec![("reg", s(1e-3)), ("svm_epochs", s(200)), ("corrupt", s(""))];
    let flags = vec![
        ("reg", opt(a.reg)),
        ("svm_epochs", opt(a.svm_epochs)),
        ("corrupt", (!a.corrupt.is_empty()).then(|| a.corrupt.join(";"))),
    ];
    let (settings, model) = resolve_with_model(&a.common, &a.checkpoint, defaults, flags)?;
    let reg: f64 = settings.get("reg")?;
    let epochs: usize = settings.get("svm_epochs")?;
    let sweeps = settings
        .raw("corrupt")
        .split(';')
        .filter(|c| !c.is_empty())
        .map(parse_corruption)
        .collect::<Result<Vec<_>, _>>()?;

    let mut run = Run::start("classify", &a.common.out, a.common.force, settings)?;
    let ds = model_dataset(&run, &model, &a.data)?;
    let classes = ds.classes();
    if classes.len() < 2 {
        return Err(CliError::Usage(format!("classification needs at least 2 labels, found {}", classes.len())));
    }
    let label_of = |l: &String| classes.binary_search(l).expect("label from dataset");
    let (mut train_idx, mut test_idx) = (Vec::new(), Vec::new());
    for (i, name) in ds.names.iter().enumerate() {
        if is_test(name) { test_idx.push(i) } else { train_idx.push(i) }
    }
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(CliError::Usage("the 80/20 split left the train or test set empty; add more clouds".into()));
    }
    let pick = |idx: &[usize]| -> (Vec<PointCloud>, Vec<usize>) {
        (idx.iter().map(|&i| ds.clouds[i].clone()).collect(), idx.iter().map(|&i| label_of(&ds.labels[i])).collect())
    };
    let (train_clouds, train_labels) = pick(&train_idx);
    let (test_clouds, test_labels) = pick(&test_idx);

    let train_set = FeatureSet::new(extract_features(&model.net, &train_clouds)?, train_labels)?;
    let classifier = train_linear_classifier(&train_set, reg, epochs)?;
    let predicted = predict(&classifier, &extract_features(&model.net, &test_clouds)?)?;
    let clean = accuracy(&predicted, &test_labels);

    let mut report = String::from("class,n_test,correct,accuracy\n");
    for (c, name) in classes.iter().enumerate() {
        let n = test_labels.iter().filter(|&&l| l == c).count();
        let correct = test_labels.iter().zip(&predicted).filter(|&(&l, &p)| l == c && p == c).count();
        let acc = if n == 0 { f64::NAN } else { correct as f64 / n as f64 };
        report.push_str(&format!("{name},{n},{correct},{acc}\n"));
    }
    let correct = predicted.iter().zip(&test_labels).filter(|(p, l)| p == l).count();
    report.push_str(&format!("all,{},{correct},{clean}\n", test_labels.len()));
    run.write("classify.csv", report)?;

    let corrupt_seed = run.stream_seed("corrupt");
    for (kind, levels) in sweeps {
        let curve = robustness_curve(&model.net, &classifier, &test_clouds, &test_labels, kind, &levels, corrupt_seed)?;
        let mut csv = String::from("level,accuracy\n");
        for (level, acc) in curve {
            csv.push_str(&format!("{level},{acc}\n"));
        }
        run.write(&format!("robustness_{kind}.csv"), csv)?;
    }
    run.note("train_clouds", train_idx.len());
    run.note("test_clouds", test_idx.len());
    println!("test accuracy {clean:.4} ({correct}/{})", test_labels.len());
    run.finish()
}

pub fn features(a: FeaturesArgs) -> Result<(), CliError> {
    let (settings, model) = resolve_with_model(&a.common, &a.checkpoint, Vec::new(), Vec::new())?;
    let mut run = Run::start("features", &a.common.out, a.common.force, settings)?;
    let ds = model_dataset(&run, &model, &a.data)?;
    let feats = extract_features(&model.net, &ds.clouds)?;
    let dim = feats.first().map_or(0, Vec::len);
    let mut csv = String::from("name,label");
    for j in 0..dim {
        csv.push_str(&format!(",f{j}"));
    }
    csv.push('\n');
    for ((name, label), f) in ds.names.iter().zip(&ds.labels).zip(&feats) {
        csv.push_str(file_name(name));
        csv.push(',');
        csv.push_str(label);
        for v in f {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    run.write("features.csv", csv)?;
    println!("wrote {} feature rows of width {dim}", feats.len());
    run.finish()
}

// ----------------------------------------------------------- synth-data

#[derive(Args)]
pub struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// sphere, box, torus or plane.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    num_points: Option<usize>,
    /// Standard deviation of Gaussian jitter added to every coordinate.
    #[arg(long)]
    noise: Option<f64>,
    /// ply or xyz.
    #[arg(long)]
    format: Option<String>,
}

pub fn synth_data(a: SynthArgs) -> Result<(), CliError> {
    let defaults = vec![
        ("kind", s("sphere")),
        ("count", s(64)),
        ("num_points", s(pointebm::data::DEFAULT_NUM_POINTS)),
        ("noise", s(0)),
        ("format", s("xyz")),
    ];
    let flags = vec![
        ("kind", a.kind.clone()),
        ("count", opt(a.count)),
        ("num_points", opt(a.num_points)),
        ("noise", opt(a.noise)),
        ("format", a.format.clone()),
    ];
    let settings = resolve(&a.common, defaults, flags)?;
    let kind: ShapeKind = settings.raw("kind").parse()?;
    let count: usize = settings.get("count")?;
    let m: usize = settings.get("num_points")?;
    let noise: f64 = settings.get("noise")?;
    let format: CloudFormat = settings.get("format")?;
    if m == 0 || noise.is_nan() || noise < 0.0 {
        return Err(CliError::Usage("num_points must be >= 1 and noise >= 0".into()));
    }

    let mut run = Run::start("synth-data", &a.common.out, a.common.force, settings)?;
    let mut rng = run.rng("data");
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let cloud = synth_shape(kind, m, noise, &mut rng)?;
        let name = format!("{kind}_{i:04}.{}", format.ext());
        write_cloud(&mut run, &name, &cloud)?;
        entries.push(ManifestEntry { path: run.dir().join(&name), label: kind.to_string() });
    }
    let manifest = pointebm::data::format_manifest(&entries, run.dir());
    run.write("manifest.tsv", manifest)?;
    println!("wrote {count} {kind} clouds to {}", run.dir().display());
    run.finish()
}
