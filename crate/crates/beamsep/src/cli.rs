//! Command-line surface: dataset simulation, separation, evaluation.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::doa::{doa_fit, srp_phat, srp_top_pair, separate, DoaFitOptions, DoaGrid, DoaPair};
use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, Doa};
use crate::losses::LossSpec;
use crate::metrics::evaluate_scene;
use crate::postmask::PostmaskParams;
use crate::roomsim::{make_scene, ArrayPose, DrawSpec, RoomSpec, SceneMeta, SceneSpec, SnrSpec};
use crate::wav::{read_wav, write_wav, write_wav_mono};
use crate::wola::{stft, StftSpec};

#[derive(Parser)]
#[command(name = "beamsep", about = "Multichannel two-speaker separation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a dataset of simulated scenes from a recipe.
    Simulate(SimulateArgs),
    /// Separate a multichannel mixture into two sources.
    Separate(SeparateArgs),
    /// Score separated outputs against a dataset manifest.
    Eval(EvalArgs),
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Dataset recipe, JSON.
    #[arg(long)]
    pub recipe: PathBuf,
    /// Output directory for WAVs and the manifest.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of scenes.
    #[arg(long)]
    pub count: usize,
    /// Master seed; every scene derives its own stream.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: rayon's choice).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum DoaMode {
    Oracle,
    Srp,
    Fit,
}

#[derive(Args)]
pub struct SeparateArgs {
    /// Multichannel mixture WAV.
    pub input: PathBuf,
    /// Microphone geometry JSON (default: built-in 7-mic circular array).
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// Pipeline configuration JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// How source directions are obtained.
    #[arg(long, value_enum)]
    pub doa: DoaMode,
    /// Oracle azimuth of source 1, degrees.
    #[arg(long)]
    pub az1: Option<f64>,
    /// Oracle elevation of source 1, degrees.
    #[arg(long, default_value_t = 0.0)]
    pub el1: f64,
    /// Oracle azimuth of source 2, degrees.
    #[arg(long)]
    pub az2: Option<f64>,
    /// Oracle elevation of source 2, degrees.
    #[arg(long, default_value_t = 0.0)]
    pub el2: f64,
    /// Apply the ratio post-mask to the beamformer outputs.
    #[arg(long)]
    pub postmask: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reference-channel target WAVs, required in fit mode.
    #[arg(long, num_args = 2)]
    pub targets: Option<Vec<PathBuf>>,
    /// Output directory (default: alongside the input).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Dataset manifest (one JSON object per line).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding `<scene_id>_src1.wav` / `<scene_id>_src2.wav`.
    #[arg(long)]
    pub separated: PathBuf,
    /// CSV output path (default: stdout).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Separation pipeline knobs; every field has a default so `{}` is a
/// valid config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub stft: StftSpec,
    pub loss: LossSpec,
    pub postmask: PostmaskParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stft: StftSpec::default_16k(),
            loss: LossSpec::cmse(1.0),
            postmask: PostmaskParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.loss.validate()?;
        Ok(cfg)
    }
}

fn default_duration() -> f64 {
    10.0
}

fn default_sample_rate() -> f64 {
    16000.0
}

fn default_distance() -> [f64; 2] {
    [2.0, 4.0]
}

fn default_separation() -> f64 {
    30.0
}

fn default_ratio() -> DrawSpec {
    DrawSpec::Draw
}

fn default_snr() -> SnrSpec {
    SnrSpec::Infinite
}

fn default_level() -> DrawSpec {
    DrawSpec::Fixed(-28.0)
}

/// Dataset recipe: room, randomization ranges, draw specifications, and
/// the dry-speech corpus location.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecipe {
    /// Directory of mono WAV files at `sample_rate`.
    pub speech_dir: PathBuf,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    pub room: RoomSpec,
    /// Fixed array center; default is the room center at 1.5 m height.
    #[serde(default)]
    pub array_center: Option<[f64; 3]>,
    /// Min/max source distance from the array, meters.
    #[serde(default = "default_distance")]
    pub source_distance_m: [f64; 2],
    #[serde(default = "default_separation")]
    pub min_azimuth_separation_deg: f64,
    #[serde(default = "default_ratio")]
    pub mixing_ratio_db: DrawSpec,
    #[serde(default = "default_snr")]
    pub snr_db: SnrSpec,
    #[serde(default = "default_level")]
    pub level_db: DrawSpec,
}

/// One manifest line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub scene_id: String,
    pub mixture: String,
    pub targets: [String; 2],
    pub sample_rate: u32,
    pub reference_channel: usize,
    pub room: RoomSpec,
    pub array: ArrayPose,
    pub sources: [[f64; 3]; 2],
    pub meta: SceneMeta,
}

/// Per-scene seed stream: splitmix64 finalizer over (master, index).
fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn list_speech(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::WavFormat(format!(
            "no WAV files in {}; expected a flat directory of mono speech WAVs \
             at the recipe sample rate",
            dir.display()
        )));
    }
    Ok(files)
}

/// Load a mono dry signal, tiled or cropped to `len` samples starting at
/// `offset` (offset applies only when the file is long enough).
fn load_dry(path: &Path, expect_fs: f64, len: usize, offset: usize) -> Result<Vec<f64>> {
    let (data, fs) = read_wav(path)?;
    if fs as f64 != expect_fs {
        return Err(Error::WavFormat(format!(
            "{}: sample rate {fs}, recipe wants {expect_fs}",
            path.display()
        )));
    }
    if data.nrows() != 1 {
        return Err(Error::WavFormat(format!(
            "{}: expected mono, got {} channels",
            path.display(),
            data.nrows()
        )));
    }
    let src = data.row(0);
    if src.iter().all(|v| *v == 0.0) {
        return Err(Error::NoSignal);
    }
    let n = src.len();
    let start = if n > len { offset % (n - len + 1) } else { 0 };
    Ok((0..len).map(|i| src[(start + i) % n]).collect())
}

struct ScenePlan {
    spec: SceneSpec,
    dry_paths: [PathBuf; 2],
    dry_offsets: [usize; 2],
}

/// Deterministic per-scene layout: speech picks, array pose, source
/// placement. Independent of thread scheduling.
fn plan_scene(
    recipe: &DatasetRecipe,
    speech: &[PathBuf],
    master_seed: u64,
    index: usize,
) -> Result<ScenePlan> {
    let scene_seed = derive_seed(master_seed, index as u64);
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(scene_seed, u64::MAX));

    let i1 = rng.gen_range(0..speech.len());
    let i2 = if speech.len() > 1 {
        let mut j = rng.gen_range(0..speech.len() - 1);
        if j >= i1 {
            j += 1;
        }
        j
    } else {
        i1
    };
    let offsets = [rng.gen::<u32>() as usize, rng.gen::<u32>() as usize];

    let dims = recipe.room.dimensions;
    let center = recipe.array_center.unwrap_or([
        dims[0] / 2.0,
        dims[1] / 2.0,
        (dims[2] / 2.0).min(1.5),
    ]);
    let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);

    let [dmin, dmax] = recipe.source_distance_m;
    if !(0.0 < dmin && dmin <= dmax) {
        return Err(Error::InvalidParameter(
            "source_distance_m must satisfy 0 < min <= max".into(),
        ));
    }
    let min_sep = recipe.min_azimuth_separation_deg.to_radians();
    let margin = 0.1;
    let place = |az: f64, d: f64| -> [f64; 3] {
        let w = yaw + az;
        [center[0] + d * w.cos(), center[1] + d * w.sin(), center[2]]
    };
    let fits = |p: [f64; 3]| {
        p.iter()
            .zip(dims.iter())
            .all(|(v, lim)| *v >= margin && *v <= lim - margin)
    };
    let mut sources = None;
    for _ in 0..200 {
        let az1 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let az2 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        if crate::geometry::wrap_angle(az1 - az2).abs() < min_sep {
            continue;
        }
        let d1 = rng.gen_range(dmin..=dmax);
        let d2 = rng.gen_range(dmin..=dmax);
        let p1 = place(az1, d1);
        let p2 = place(az2, d2);
        if fits(p1) && fits(p2) {
            sources = Some([p1, p2]);
            break;
        }
    }
    let sources = sources.ok_or_else(|| {
        Error::InvalidParameter(
            "could not place sources inside the room; check room dimensions \
             against source_distance_m"
                .into(),
        )
    })?;

    Ok(ScenePlan {
        spec: SceneSpec {
            room: recipe.room,
            array: ArrayPose { center, yaw },
            sources,
            mixing_ratio_db: recipe.mixing_ratio_db,
            snr_db: recipe.snr_db,
            level_db: recipe.level_db,
            seed: scene_seed,
        },
        dry_paths: [speech[i1].clone(), speech[i2].clone()],
        dry_offsets: offsets,
    })
}

fn run_one_scene(
    recipe: &DatasetRecipe,
    speech: &[PathBuf],
    geom: &ArrayGeometry,
    out_dir: &Path,
    master_seed: u64,
    index: usize,
) -> Result<ManifestRecord> {
    let plan = plan_scene(recipe, speech, master_seed, index)?;
    let len = (recipe.duration_s * recipe.sample_rate).round() as usize;
    let d1 = load_dry(&plan.dry_paths[0], recipe.sample_rate, len, plan.dry_offsets[0])?;
    let d2 = load_dry(&plan.dry_paths[1], recipe.sample_rate, len, plan.dry_offsets[1])?;
    let bundle = make_scene(&plan.spec, geom, [&d1, &d2], recipe.sample_rate)?;

    let id = format!("scene_{index:04}");
    let fs = recipe.sample_rate as u32;
    let mix_name = format!("{id}_mix.wav");
    let tgt_names = [format!("{id}_tgt1.wav"), format!("{id}_tgt2.wav")];
    write_wav(&out_dir.join(&mix_name), &bundle.mixture, fs)?;
    write_wav_mono(&out_dir.join(&tgt_names[0]), &bundle.targets[0], fs)?;
    write_wav_mono(&out_dir.join(&tgt_names[1]), &bundle.targets[1], fs)?;

    Ok(ManifestRecord {
        scene_id: id,
        mixture: mix_name,
        targets: tgt_names,
        sample_rate: fs,
        reference_channel: geom.reference_index,
        room: plan.spec.room,
        array: plan.spec.array,
        sources: plan.spec.sources,
        meta: bundle.meta,
    })
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let recipe: DatasetRecipe =
        serde_json::from_str(&fs::read_to_string(&args.recipe)?)?;
    fs::create_dir_all(&args.out_dir)?;
    let manifest_path = args.out_dir.join("manifest.jsonl");
    if args.count == 0 {
        fs::write(&manifest_path, "")?;
        return Ok(());
    }
    let speech = list_speech(&recipe.speech_dir)?;
    let geom = ArrayGeometry::default_circular();

    let run = || -> Result<Vec<ManifestRecord>> {
        use rayon::prelude::*;
        (0..args.count)
            .into_par_iter()
            .map(|i| run_one_scene(&recipe, &speech, &geom, &args.out_dir, args.seed, i))
            .collect()
    };
    let records = match args.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .install(run),
        None => run(),
    }?;

    let mut out = fs::File::create(&manifest_path)?;
    for r in &records {
        writeln!(out, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

/// Sidecar written next to the separated outputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct SeparationSidecar {
    pub mode: String,
    /// [az, el] per source, degrees.
    pub doas_deg: [[f64; 2]; 2],
    pub postmask: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluations: Option<usize>,
}

pub fn cmd_separate(args: &SeparateArgs) -> Result<()> {
    let geom = match &args.geometry {
        Some(p) => ArrayGeometry::from_json_file(p)?,
        None => ArrayGeometry::default_circular(),
    };
    let config = match &args.config {
        Some(p) => PipelineConfig::from_json_file(p)?,
        None => PipelineConfig::default(),
    };
    let (mixture, fs) = read_wav(&args.input)?;
    if mixture.nrows() != geom.num_channels() {
        return Err(Error::WavFormat(format!(
            "{} channels in {}, geometry has {}",
            mixture.nrows(),
            args.input.display(),
            geom.num_channels()
        )));
    }
    if fs as f64 != config.stft.sample_rate {
        return Err(Error::WavFormat(format!(
            "sample rate {fs} does not match configured {}",
            config.stft.sample_rate
        )));
    }

    let mut sidecar_loss = None;
    let mut sidecar_evals = None;
    let (pair, mode) = match args.doa {
        DoaMode::Oracle => {
            let (az1, az2) = match (args.az1, args.az2) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::InvalidParameter(
                        "--doa oracle requires --az1 and --az2".into(),
                    ))
                }
            };
            (
                DoaPair::new(
                    Doa::from_degrees(az1, args.el1)?,
                    Doa::from_degrees(az2, args.el2)?,
                ),
                "oracle",
            )
        }
        DoaMode::Srp => {
            let spect = stft(mixture.view(), &config.stft)?;
            let ranked = srp_phat(&spect, &geom, &DoaGrid::default())?;
            (srp_top_pair(&ranked, 20.0)?, "srp")
        }
        DoaMode::Fit => {
            let target_paths = args.targets.as_deref().ok_or_else(|| {
                Error::InvalidParameter("--doa fit requires --targets <t1> <t2>".into())
            })?;
            let mut targets = Vec::with_capacity(2);
            for p in target_paths {
                let (t, tfs) = read_wav(p)?;
                if tfs != fs || t.nrows() != 1 {
                    return Err(Error::WavFormat(format!(
                        "target {} must be mono at {fs} Hz",
                        p.display()
                    )));
                }
                targets.push(stft(t.view(), &config.stft)?);
            }
            let spect = stft(mixture.view(), &config.stft)?;
            let ranked = srp_phat(&spect, &geom, &DoaGrid::default())?;
            let init = srp_top_pair(&ranked, 20.0)?;
            let fit = doa_fit(
                &spect,
                [&targets[0], &targets[1]],
                &config.loss,
                &init,
                &geom,
                &DoaFitOptions::default(),
            )?;
            sidecar_loss = Some(fit.loss);
            sidecar_evals = Some(fit.evaluations);
            (fit.doas, "fit")
        }
    };

    let outputs = separate(
        mixture.view(),
        &pair,
        &geom,
        &config.stft,
        args.postmask.then_some(&config.postmask),
    )?;

    let out_dir = args
        .out_dir
        .clone()
        .unwrap_or_else(|| args.input.parent().unwrap_or(Path::new(".")).to_path_buf());
    fs::create_dir_all(&out_dir)?;
    let stem = args
        .input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("output")
        .to_string();
    write_wav_mono(&out_dir.join(format!("{stem}_src1.wav")), &outputs[0], fs)?;
    write_wav_mono(&out_dir.join(format!("{stem}_src2.wav")), &outputs[1], fs)?;
    let sidecar = SeparationSidecar {
        mode: mode.into(),
        doas_deg: [
            [pair.doa_1.azimuth_deg(), pair.doa_1.elevation_deg()],
            [pair.doa_2.azimuth_deg(), pair.doa_2.elevation_deg()],
        ],
        postmask: args.postmask,
        loss: sidecar_loss,
        evaluations: sidecar_evals,
    };
    fs::write(
        out_dir.join(format!("{stem}_doa.json")),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(())
}

pub const EVAL_CSV_HEADER: &str = "scene_id,status,si_sdr_1,si_sdr_2,sir_1,sir_2,\
delta_si_sdr_1,delta_si_sdr_2,delta_sir_1,delta_sir_2";

fn eval_one(record: &ManifestRecord, base: &Path, separated: &Path) -> Result<crate::metrics::EvalReport> {
    let (mix, _) = read_wav(&base.join(&record.mixture))?;
    let (t1, _) = read_wav(&base.join(&record.targets[0]))?;
    let (t2, _) = read_wav(&base.join(&record.targets[1]))?;
    let (s1, _) = read_wav(&separated.join(format!("{}_src1.wav", record.scene_id)))?;
    let (s2, _) = read_wav(&separated.join(format!("{}_src2.wav", record.scene_id)))?;
    let mix_ref = mix.row(record.reference_channel).to_vec();
    let n = mix_ref
        .len()
        .min(t1.ncols())
        .min(t2.ncols())
        .min(s1.ncols())
        .min(s2.ncols());
    let report = evaluate_scene(
        [&s1.row(0).to_vec()[..n], &s2.row(0).to_vec()[..n]],
        [&t1.row(0).to_vec()[..n], &t2.row(0).to_vec()[..n]],
        &mix_ref[..n],
    )?;
    let json_path = separated.join(format!("{}_eval.json", record.scene_id));
    fs::write(json_path, serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let base = args
        .manifest
        .parent()
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let mut rows = vec![EVAL_CSV_HEADER.to_string()];
    let mut sums = [0.0f64; 8];
    let mut ok = 0usize;
    for line in fs::read_to_string(&args.manifest)?.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(line)?;
        match eval_one(&record, &base, &args.separated) {
            Ok(r) => {
                let vals = [
                    r.si_sdr_db[0],
                    r.si_sdr_db[1],
                    r.sir_db[0],
                    r.sir_db[1],
                    r.delta_si_sdr_db[0],
                    r.delta_si_sdr_db[1],
                    r.delta_sir_db[0],
                    r.delta_sir_db[1],
                ];
                for (s, v) in sums.iter_mut().zip(vals.iter()) {
                    *s += v;
                }
                ok += 1;
                rows.push(format!(
                    "{},ok,{}",
                    record.scene_id,
                    vals.map(|v| format!("{v:.4}")).join(",")
                ));
            }
            Err(e) => {
                eprintln!("scene {} failed: {e}", record.scene_id);
                rows.push(format!("{},failed,,,,,,,,", record.scene_id));
            }
        }
    }
    if ok > 0 {
        rows.push(format!(
            "mean,ok,{}",
            sums.map(|s| format!("{:.4}", s / ok as f64)).join(",")
        ));
    }
    let csv = rows.join("\n") + "\n";
    match &args.csv {
        Some(p) => fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Separate(a) => cmd_separate(a),
        Command::Eval(a) => cmd_eval(a),
    }
}
