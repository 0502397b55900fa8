//! Batch front end for the road pothole detection pipeline.
//!
//! Subcommands cover the full loop: `synth` emits labelled synthetic scenes,
//! `transform` fits the road model and flattens disparity images, `detect`
//! segments depressions in the flattened images, `eval` scores masks against
//! ground truth, and `vdisp`, `attn-demo`, `losses` expose the remaining
//! library surfaces for inspection.
//!
//! Every command is deterministic under fixed seeds and flags: inputs are
//! processed in lexicographic stem order, `--jobs N` changes wall time but
//! not a single output byte (results are gathered and written in input
//! order), and all numeric CSV output carries 17 significant digits so reruns
//! diff exactly. Exit codes: 0 success, 1 any per-item failure, 2 usage
//! error.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use pothole_core::attention::{
    cam_forward, dam_affinities, dam_forward, pam_forward, AttentionScheme, LevelParams,
};
use pothole_core::adaptation::{cycle_loss, full_objective, gan_loss, ImageBatch, ProbBatch};
use pothole_core::detect::segment;
use pothole_core::io::{full_precision, read_gray, write_gray8, RawRaster};
use pothole_core::metrics::{
    confusion, fsc_iou, mean_metrics, per_image_csv_row, summary_csv_row, PER_IMAGE_CSV_HEADER,
    SUMMARY_CSV_HEADER,
};
use pothole_core::synth::{generate, generate_rgb_standin, random_scene, DepthProfile, SceneRanges, SceneSpec};
use pothole_core::transform::fit_and_transform;
use pothole_core::{
    load_disparity, rng, save_disparity, v_disparity, LabelMask, RoadFit, RoadModel, SolverConfig,
    Tensor4,
};

const MODELS_CSV_HEADER: &str = "image,phi,varkappa,kappa,lambda,cost,method";

/// Offset added to a scene's seed to key its RGB stand-in texture, so the
/// texture stream never replays the scene's own noise stream.
const TEXTURE_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

// ── argument parsing ───────────────────────────────────────────────────────

#[derive(Parser)]
#[command(
    name = "pothole",
    about = "Road pothole detection: disparity transformation, segmentation, evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the road model to each disparity image and write the flattened result
    Transform(TransformArgs),
    /// Emit the v-disparity histogram of one disparity image as PGM + CSV
    Vdisp(VdispArgs),
    /// Segment flattened disparity images into pothole masks
    Detect(DetectArgs),
    /// Score predicted masks against ground-truth masks
    Eval(EvalArgs),
    /// Generate labelled synthetic scenes (rgb/, disp/, label/ triplets)
    Synth(SynthArgs),
    /// Run an attention scheme on seeded tensors and report invariant checks
    AttnDemo(AttnDemoArgs),
    /// Evaluate adaptation losses on probability CSVs / raster batches
    Losses(LossesArgs),
}

#[derive(Args)]
struct TransformArgs {
    /// Disparity image or directory of .png/.pgm images
    input: PathBuf,
    /// Output directory (flattened images, .model sidecars, models.csv)
    #[arg(long)]
    out: PathBuf,
    /// Disparity units per raw intensity step, e.g. `1/256` or `0.03125`
    #[arg(long, value_parser = parse_scale, default_value = "1/256")]
    scale: f64,
    /// Coarse scan resolution for the angle search
    #[arg(long, default_value_t = 1024, value_parser = parse_grid)]
    grid_size: usize,
    /// Bracket width at which the angle search stops (radians)
    #[arg(long, default_value_t = 1e-10, value_parser = parse_positive)]
    tol: f64,
    /// Solve the angle stationarity condition in closed form
    #[arg(long)]
    closed_form: bool,
    /// Refit once on below-plane outlier-filtered pixels
    #[arg(long)]
    robust_refit: bool,
    #[arg(long, default_value_t = 1, value_parser = parse_jobs)]
    jobs: usize,
}

#[derive(Args)]
struct VdispArgs {
    /// Disparity image
    input: PathBuf,
    /// Output stem: writes <out>.pgm and <out>.csv
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_scale, default_value = "1/256")]
    scale: f64,
    /// Histogram bin width in disparity units
    #[arg(long, default_value_t = 1.0, value_parser = parse_positive)]
    bin_width: f64,
}

#[derive(Args)]
struct DetectArgs {
    /// Flattened disparity image or directory; a `<stem>.model` sidecar next
    /// to an image supplies its road model (identity model otherwise)
    input: PathBuf,
    /// Output directory for mask images
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_scale, default_value = "1/256")]
    scale: f64,
    /// Drop connected components smaller than this many pixels
    #[arg(long, default_value_t = 50, value_parser = parse_min_area)]
    min_area: usize,
    #[arg(long, default_value_t = 1, value_parser = parse_jobs)]
    jobs: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of predicted masks
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth masks; its stems drive the pairing
    #[arg(long)]
    gt: PathBuf,
    /// Per-image CSV path; the mean summary lands next to it as
    /// `<stem>-summary.csv`
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Dataset root; scenes land in <out>/<split>/{rgb,disp,label}/
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "training")]
    split: String,
    /// Scene description file, one `key=value ...` line per scene
    #[arg(long, conflicts_with_all = ["count", "seed", "width", "height", "varkappa",
        "kappa", "phi_limit", "potholes", "axes", "depth", "profile", "noise_sigma",
        "invalid_fraction"])]
    spec: Option<PathBuf>,
    /// Number of randomly drawn scenes
    #[arg(long, required_unless_present = "spec", requires = "seed",
        value_parser = clap::value_parser!(u16).range(1..=999))]
    count: Option<u16>,
    /// Master seed for the scene draws
    #[arg(long, requires = "count")]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_dim)]
    width: Option<usize>,
    #[arg(long, value_parser = parse_dim)]
    height: Option<usize>,
    /// Road scale range LO:HI
    #[arg(long, value_parser = parse_range)]
    varkappa: Option<(f64, f64)>,
    /// Road offset range LO:HI
    #[arg(long, value_parser = parse_range)]
    kappa: Option<(f64, f64)>,
    /// Hard cap on |angle| in radians
    #[arg(long, value_parser = parse_positive)]
    phi_limit: Option<f64>,
    /// Pothole count range LO:HI (inclusive)
    #[arg(long, value_parser = parse_count_range)]
    potholes: Option<(usize, usize)>,
    /// Pothole semi-axis range LO:HI in pixels
    #[arg(long, value_parser = parse_range)]
    axes: Option<(f64, f64)>,
    /// Pothole depth range LO:HI in disparity units
    #[arg(long, value_parser = parse_range)]
    depth: Option<(f64, f64)>,
    /// Depression profile: flat | paraboloid
    #[arg(long, value_parser = parse_profile)]
    profile: Option<DepthProfile>,
    #[arg(long, value_parser = parse_nonnegative)]
    noise_sigma: Option<f64>,
    #[arg(long, value_parser = parse_fraction)]
    invalid_fraction: Option<f64>,
    /// Default 1/32 (not 1/256): the default scene ranges reach disparities
    /// near 1300, which only fit 16 bits at the coarser step
    #[arg(long, value_parser = parse_scale, default_value = "1/32")]
    scale: f64,
    #[arg(long, default_value_t = 1, value_parser = parse_jobs)]
    jobs: usize,
}

#[derive(Args)]
struct AttnDemoArgs {
    /// Comma-separated per-level modules, e.g. `pam,cam,cam,cam,dam`
    #[arg(long, default_value = "pam,cam,cam,cam,dam", value_parser = parse_scheme)]
    scheme: AttentionScheme,
    /// Tensor shape N,C,H,W shared by every level
    #[arg(long, default_value = "1,8,8,8", value_parser = parse_dims)]
    dims: (usize, usize, usize, usize),
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
#[group(required = true, multiple = true)]
struct LossesArgs {
    /// CSV of discriminator outputs on real samples (one probability per line)
    #[arg(long, requires = "d_fake")]
    d_real: Option<PathBuf>,
    /// CSV of discriminator outputs on generated samples
    #[arg(long, requires = "d_real")]
    d_fake: Option<PathBuf>,
    /// Directory of original rasters for the reconstruction loss
    #[arg(long, requires = "reconstructed")]
    original: Option<PathBuf>,
    /// Directory of reconstructed rasters, paired with --original in stem order
    #[arg(long, requires = "original")]
    reconstructed: Option<PathBuf>,
    /// Six comma-separated loss terms to sum into the full objective
    #[arg(long, value_parser = parse_terms)]
    terms: Option<[f64; 6]>,
}

fn parse_scale(s: &str) -> std::result::Result<f64, String> {
    let v = match s.split_once('/') {
        Some((num, den)) => {
            let n: f64 = num.trim().parse().map_err(|_| format!("bad scale `{s}`"))?;
            let d: f64 = den.trim().parse().map_err(|_| format!("bad scale `{s}`"))?;
            n / d
        }
        None => s.trim().parse().map_err(|_| format!("bad scale `{s}`"))?,
    };
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("scale must be positive and finite, got `{s}`"))
    }
}

fn parse_positive(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("expected a positive real, got `{s}`")),
    }
}

fn parse_nonnegative(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err(format!("expected a non-negative real, got `{s}`")),
    }
}

fn parse_fraction(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if (0.0..1.0).contains(&v) => Ok(v),
        _ => Err(format!("expected a fraction in [0, 1), got `{s}`")),
    }
}

fn parse_jobs(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(format!("jobs must be at least 1, got `{s}`")),
    }
}

fn parse_grid(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 16 => Ok(v),
        _ => Err(format!("grid size must be at least 16, got `{s}`")),
    }
}

fn parse_min_area(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(format!("min area must be at least 1, got `{s}`")),
    }
}

fn parse_dim(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 2 => Ok(v),
        _ => Err(format!("frame dimensions must be at least 2, got `{s}`")),
    }
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("expected LO:HI, got `{s}`"))?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad range `{s}`"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad range `{s}`"))?;
    if lo.is_finite() && hi.is_finite() && lo <= hi {
        Ok((lo, hi))
    } else {
        Err(format!("range must be finite with LO <= HI, got `{s}`"))
    }
}

fn parse_count_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("expected LO:HI, got `{s}`"))?;
    let lo: usize = lo.trim().parse().map_err(|_| format!("bad range `{s}`"))?;
    let hi: usize = hi.trim().parse().map_err(|_| format!("bad range `{s}`"))?;
    if lo <= hi {
        Ok((lo, hi))
    } else {
        Err(format!("range must have LO <= HI, got `{s}`"))
    }
}

fn parse_profile(s: &str) -> std::result::Result<DepthProfile, String> {
    DepthProfile::parse(s).map_err(|e| e.to_string())
}

fn parse_scheme(s: &str) -> std::result::Result<AttentionScheme, String> {
    AttentionScheme::parse(s).map_err(|e| e.to_string())
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize, usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err(format!("expected N,C,H,W, got `{s}`"));
    }
    let mut d = [0usize; 4];
    for (slot, part) in d.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| format!("bad dimensions `{s}`"))?;
        if *slot == 0 {
            return Err(format!("dimensions must be positive, got `{s}`"));
        }
    }
    Ok((d[0], d[1], d[2], d[3]))
}

fn parse_terms(s: &str) -> std::result::Result<[f64; 6], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 6 {
        return Err(format!("expected six comma-separated terms, got `{s}`"));
    }
    let mut t = [0.0f64; 6];
    for (slot, part) in t.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| format!("bad loss term in `{s}`"))?;
    }
    Ok(t)
}

// ── shared plumbing ────────────────────────────────────────────────────────

fn is_raster(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .is_some_and(|e| e == "png" || e == "pgm")
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned())
}

/// A single file, or every `.png`/`.pgm` directly inside a directory, in
/// lexicographic filename order.
fn list_rasters(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        bail!("{}: not a file or directory", path.display());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(path).with_context(|| path.display().to_string())? {
        let p = entry?.path();
        if p.is_file() && is_raster(&p) {
            out.push(p);
        }
    }
    out.sort_by_key(|p| p.file_name().map(|n| n.to_os_string()));
    if out.is_empty() {
        bail!("{}: no .png or .pgm files", path.display());
    }
    Ok(out)
}

fn run_pool<T, F>(jobs: usize, work: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    Ok(pool.install(work))
}

/// Print collected per-item errors in input order and fold them into an exit
/// code (1 when anything failed).
fn drain_failures(command: &str, failures: &[(String, anyhow::Error)]) -> i32 {
    for (stem, err) in failures {
        eprintln!("{command}: {stem}: {err:#}");
    }
    i32::from(!failures.is_empty())
}

// ── transform ──────────────────────────────────────────────────────────────

fn model_csv_row(stem: &str, fit: &RoadFit) -> String {
    format!(
        "{stem},{},{},{},{},{},{}",
        full_precision(fit.model.phi),
        full_precision(fit.model.varkappa),
        full_precision(fit.model.kappa),
        full_precision(fit.model.lambda),
        full_precision(fit.solution.cost),
        fit.solution.method.as_str()
    )
}

fn cmd_transform(a: &TransformArgs) -> Result<i32> {
    let inputs = list_rasters(&a.input)?;
    fs::create_dir_all(&a.out).with_context(|| a.out.display().to_string())?;
    let cfg = SolverConfig {
        grid_size: a.grid_size,
        tol: a.tol,
        closed_form: a.closed_form,
        robust_refit: a.robust_refit,
    };
    let out = &a.out;
    let scale = a.scale;
    let results: Vec<(String, Result<RoadFit>)> = run_pool(a.jobs, || {
        inputs
            .par_iter()
            .map(|path| {
                let stem = stem_of(path);
                let fit = (|| {
                    let img = load_disparity(path, scale)?;
                    let (fit, flat) = fit_and_transform(&img, &cfg)?;
                    save_disparity(&out.join(format!("{stem}.png")), &flat, scale)?;
                    fs::write(out.join(format!("{stem}.model")), fit.to_sidecar())?;
                    Ok(fit)
                })();
                (stem, fit)
            })
            .collect()
    })?;

    let mut csv = String::from(MODELS_CSV_HEADER);
    csv.push('\n');
    let mut failures = Vec::new();
    for (stem, fit) in results {
        match fit {
            Ok(fit) => {
                csv.push_str(&model_csv_row(&stem, &fit));
                csv.push('\n');
            }
            Err(err) => failures.push((stem, err)),
        }
    }
    fs::write(out.join("models.csv"), csv)?;
    Ok(drain_failures("transform", &failures))
}

// ── vdisp ──────────────────────────────────────────────────────────────────

fn cmd_vdisp(a: &VdispArgs) -> Result<i32> {
    let img = load_disparity(&a.input, a.scale)
        .with_context(|| a.input.display().to_string())?;
    let hist = v_disparity(&img, a.bin_width)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    }
    hist.write_pgm(&a.out.with_extension("pgm"))?;
    fs::write(a.out.with_extension("csv"), hist.to_csv())?;
    Ok(0)
}

// ── detect ─────────────────────────────────────────────────────────────────

/// Model used when an image arrives without a `.model` sidecar: segmentation
/// only consults the model for provenance, so the identity placeholder is
/// enough.
fn identity_model() -> RoadModel {
    RoadModel {
        phi: 0.0,
        varkappa: 1.0,
        kappa: 0.0,
        lambda: 0.0,
    }
}

fn cmd_detect(a: &DetectArgs) -> Result<i32> {
    let inputs = list_rasters(&a.input)?;
    fs::create_dir_all(&a.out).with_context(|| a.out.display().to_string())?;
    let out = &a.out;
    let (scale, min_area) = (a.scale, a.min_area);
    let results: Vec<(String, Result<()>)> = run_pool(a.jobs, || {
        inputs
            .par_iter()
            .map(|path| {
                let stem = stem_of(path);
                let r = (|| {
                    let img = load_disparity(path, scale)?;
                    let sidecar = path.with_extension("model");
                    let model = if sidecar.is_file() {
                        RoadFit::from_sidecar(&fs::read_to_string(&sidecar)?)?.model
                    } else {
                        identity_model()
                    };
                    let mask = segment(&img, &model, min_area)?;
                    mask.save(&out.join(format!("{stem}.png")))?;
                    Ok(())
                })();
                (stem, r)
            })
            .collect()
    })?;

    let failures: Vec<(String, anyhow::Error)> = results
        .into_iter()
        .filter_map(|(stem, r)| r.err().map(|e| (stem, e)))
        .collect();
    Ok(drain_failures("detect", &failures))
}

// ── eval ───────────────────────────────────────────────────────────────────

fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    let gt_files = list_rasters(&a.gt)?;
    let mut rows = vec![PER_IMAGE_CSV_HEADER.to_string()];
    let mut per_image = Vec::new();
    let mut failures = Vec::new();
    for gt_path in &gt_files {
        let stem = stem_of(gt_path);
        let scored = (|| {
            let pred_path = ["png", "pgm"]
                .iter()
                .map(|ext| a.pred.join(format!("{stem}.{ext}")))
                .find(|p| p.is_file())
                .ok_or_else(|| anyhow!("no prediction in {}", a.pred.display()))?;
            let pred = LabelMask::load(&pred_path)?;
            let gt = LabelMask::load(gt_path)?;
            let counts = confusion(&pred, &gt)?;
            Ok::<_, anyhow::Error>((counts, fsc_iou(&counts)))
        })();
        match scored {
            Ok((counts, m)) => {
                rows.push(per_image_csv_row(&stem, &counts, &m));
                per_image.push(m);
            }
            Err(err) => failures.push((stem, err)),
        }
    }

    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    }
    fs::write(&a.out, rows.join("\n") + "\n")?;
    if !per_image.is_empty() {
        let (mfsc, miou) = mean_metrics(&per_image)?;
        let summary_path = a
            .out
            .with_file_name(format!("{}-summary.csv", stem_of(&a.out)));
        let summary = format!(
            "{SUMMARY_CSV_HEADER}\n{}\n",
            summary_csv_row(mfsc, miou, per_image.len())
        );
        fs::write(summary_path, summary)?;
        println!("mFsc={} mIoU={} n={}", full_precision(mfsc), full_precision(miou), per_image.len());
    }
    Ok(drain_failures("eval", &failures))
}

// ── synth ──────────────────────────────────────────────────────────────────

fn scene_specs(a: &SynthArgs) -> Result<Vec<SceneSpec>> {
    if let Some(spec_path) = &a.spec {
        let text =
            fs::read_to_string(spec_path).with_context(|| spec_path.display().to_string())?;
        let mut specs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let spec = SceneSpec::parse_line(line)
                .with_context(|| format!("{}:{}", spec_path.display(), i + 1))?;
            specs.push(spec);
        }
        if specs.is_empty() {
            bail!("{}: no scene lines", spec_path.display());
        }
        return Ok(specs);
    }

    let mut ranges = SceneRanges::default();
    if let Some(v) = a.width {
        ranges.width = v;
    }
    if let Some(v) = a.height {
        ranges.height = v;
    }
    if let Some(v) = a.varkappa {
        ranges.varkappa = v;
    }
    if let Some(v) = a.kappa {
        ranges.kappa = v;
    }
    if let Some(v) = a.phi_limit {
        ranges.phi_limit = v;
    }
    if let Some(v) = a.potholes {
        ranges.pothole_count = v;
    }
    if let Some(v) = a.axes {
        ranges.semi_axis = v;
    }
    if let Some(v) = a.depth {
        ranges.depth = v;
    }
    if let Some(v) = a.profile {
        ranges.profile = v;
    }
    if let Some(v) = a.noise_sigma {
        ranges.noise_sigma = v;
    }
    if let Some(v) = a.invalid_fraction {
        ranges.invalid_fraction = v;
    }
    let mut master = rng::seeded(a.seed.expect("clap enforces --seed with --count"));
    (0..a.count.expect("clap enforces --count"))
        .map(|i| random_scene(&ranges, &mut master).with_context(|| format!("scene {i}")))
        .collect()
}

fn cmd_synth(a: &SynthArgs) -> Result<i32> {
    let specs = scene_specs(a)?;
    let split_dir = a.out.join(&a.split);
    for sub in ["rgb", "disp", "label"] {
        fs::create_dir_all(split_dir.join(sub))?;
    }

    let scale = a.scale;
    let dir = &split_dir;
    let results: Vec<(String, Result<()>)> = run_pool(a.jobs, || {
        specs
            .par_iter()
            .enumerate()
            .map(|(i, spec)| {
                let stem = format!("scene_{i:03}");
                let r = (|| {
                    let (disp, label, _model) = generate(spec)?;
                    let rgb = generate_rgb_standin(
                        &disp,
                        &label,
                        spec.seed.wrapping_add(TEXTURE_SEED_OFFSET),
                    )?;
                    save_disparity(&dir.join("disp").join(format!("{stem}.png")), &disp, scale)?;
                    label.save(&dir.join("label").join(format!("{stem}.png")))?;
                    match rgb {
                        RawRaster::Gray8 {
                            width,
                            height,
                            data,
                        } => write_gray8(
                            &dir.join("rgb").join(format!("{stem}.png")),
                            width,
                            height,
                            &data,
                        )?,
                        RawRaster::Gray16 { .. } => bail!("stand-in texture should be 8-bit"),
                    }
                    Ok(())
                })();
                (stem, r)
            })
            .collect()
    })?;

    let mut listing = String::new();
    for spec in &specs {
        listing.push_str(&spec.to_line());
        listing.push('\n');
    }
    fs::write(split_dir.join("scenes.txt"), listing)?;

    let failures: Vec<(String, anyhow::Error)> = results
        .into_iter()
        .filter_map(|(stem, r)| r.err().map(|e| (stem, e)))
        .collect();
    Ok(drain_failures("synth", &failures))
}

// ── attn-demo ──────────────────────────────────────────────────────────────

/// One seeded feature map per level followed by that level's parameters, all
/// from a single stream, so the whole demo is a function of `--seed`.
fn demo_inputs(
    scheme: &AttentionScheme,
    dims: (usize, usize, usize, usize),
    seed: u64,
) -> Result<(Vec<Tensor4>, Vec<LevelParams>)> {
    let (n, c, h, w) = dims;
    let mut master = rng::seeded(seed);
    let mut features = Vec::new();
    let mut params = Vec::new();
    for &kind in &scheme.levels {
        let data: Vec<f64> = (0..n * c * h * w)
            .map(|_| rng::uniform_in(&mut master, -1.0, 1.0))
            .collect();
        features.push(Tensor4::from_vec(n, c, h, w, data)?);
        params.push(LevelParams::seeded_for(kind, c, &mut master)?);
    }
    Ok((features, params))
}

fn max_abs(t: &Tensor4) -> f64 {
    t.data().iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn cmd_attn_demo(a: &AttnDemoArgs) -> Result<i32> {
    let (features, params) = demo_inputs(&a.scheme, a.dims, a.seed)?;
    let (n, c, h, w) = a.dims;
    println!(
        "scheme {} on {n}x{c}x{h}x{w}, seed {}",
        a.scheme.to_string_compact(),
        a.seed
    );
    let mut all_ok = true;
    for (i, ((x, &kind), p)) in features.iter().zip(&a.scheme.levels).zip(&params).enumerate() {
        let started = Instant::now();
        let y = match p {
            LevelParams::None => x.clone(),
            LevelParams::Cam(cp) => cam_forward(x, cp)?,
            LevelParams::Pam(pp) => pam_forward(x, pp)?,
            LevelParams::Dam(dp) => dam_forward(x, dp)?,
        };
        let elapsed = started.elapsed();
        let mut checks = Vec::new();
        let mut ok = y.shape() == x.shape();
        checks.push(format!("shape {}", if ok { "ok" } else { "CHANGED" }));
        match p {
            LevelParams::None => {
                let identical = y.data() == x.data();
                ok &= identical;
                checks.push(format!("identity {}", if identical { "ok" } else { "BROKEN" }));
            }
            LevelParams::Cam(_) | LevelParams::Pam(_) => {
                let bounded = y
                    .data()
                    .iter()
                    .zip(x.data())
                    .all(|(yo, xi)| yo.abs() <= xi.abs());
                ok &= bounded;
                checks.push(format!(
                    "|out| <= |in| {}",
                    if bounded { "ok" } else { "VIOLATED" }
                ));
            }
            LevelParams::Dam(dp) => {
                let mut row_err = 0.0f64;
                for item in 0..n {
                    let (pos, chan) = dam_affinities(x, dp, item)?;
                    for row in pos.iter().chain(&chan) {
                        let sum: f64 = row.iter().sum();
                        row_err = row_err.max((sum - 1.0).abs());
                    }
                }
                let rows_ok = row_err <= 1e-6;
                ok &= rows_ok;
                checks.push(format!(
                    "affinity rows sum to 1 {}",
                    if rows_ok { "ok" } else { "VIOLATED" }
                ));
                let finite = y.data().iter().all(|v| v.is_finite());
                ok &= finite;
                checks.push(format!("finite {}", if finite { "ok" } else { "VIOLATED" }));
            }
        }
        checks.push(format!(
            "peak |out| {}",
            full_precision(max_abs(&y))
        ));
        all_ok &= ok;
        println!("level {}: {:4}  {}", i + 1, kind.as_str(), checks.join("  "));
        eprintln!("level {}: {:4}  {:.3} ms", i + 1, kind.as_str(), elapsed.as_secs_f64() * 1e3);
    }
    println!(
        "{}",
        if all_ok {
            "all checks passed"
        } else {
            "CHECKS FAILED"
        }
    );
    Ok(i32::from(!all_ok))
}

// ── losses ─────────────────────────────────────────────────────────────────

fn read_prob_csv(path: &Path) -> Result<ProbBatch> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let mut values = Vec::new();
    for token in text.split(|ch: char| ch.is_whitespace() || ch == ',') {
        if token.is_empty() {
            continue;
        }
        values.push(
            token
                .parse::<f64>()
                .with_context(|| format!("{}: bad probability `{token}`", path.display()))?,
        );
    }
    Ok(ProbBatch::new(values).with_context(|| path.display().to_string())?)
}

fn read_raster_batch(dir: &Path) -> Result<ImageBatch> {
    let files = list_rasters(dir)?;
    let mut shape = None;
    let mut items = Vec::new();
    for path in &files {
        let raster = read_gray(path).with_context(|| path.display().to_string())?;
        let (w, h) = raster.dimensions();
        let values: Vec<f64> = match raster {
            RawRaster::Gray8 { data, .. } => data.iter().map(|&b| f64::from(b)).collect(),
            RawRaster::Gray16 { data, .. } => data.iter().map(|&b| f64::from(b)).collect(),
        };
        if shape.is_none() {
            shape = Some((w, h));
        }
        if shape != Some((w, h)) {
            bail!("{}: size differs from the first image", path.display());
        }
        items.push(values);
    }
    let (w, h) = shape.expect("list_rasters rejects empty directories");
    Ok(ImageBatch::new(w, h, items)?)
}

fn cmd_losses(a: &LossesArgs) -> Result<i32> {
    if let (Some(real), Some(fake)) = (&a.d_real, &a.d_fake) {
        let loss = gan_loss(&read_prob_csv(real)?, &read_prob_csv(fake)?);
        println!("gan_loss={}", full_precision(loss));
    }
    if let (Some(orig), Some(rec)) = (&a.original, &a.reconstructed) {
        let loss = cycle_loss(&read_raster_batch(orig)?, &read_raster_batch(rec)?)?;
        println!("cycle_loss={}", full_precision(loss));
    }
    if let Some(terms) = &a.terms {
        println!("full_objective={}", full_precision(full_objective(terms)?));
    }
    Ok(0)
}

// ── entry ──────────────────────────────────────────────────────────────────

fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Transform(a) => cmd_transform(a),
        Command::Vdisp(a) => cmd_vdisp(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::AttnDemo(a) => cmd_attn_demo(a),
        Command::Losses(a) => cmd_losses(a),
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            1
        }
    };
    std::process::exit(code);
}
