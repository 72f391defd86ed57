//! `tubemosaic` command line: each stage reads and writes the documented
//! on-disk formats, and `full` chains them in one process.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tubemosaic::config::{parse_provider_list, PipelineConfig, RadialMapping, StitchMethod};
use tubemosaic::io;
use tubemosaic::metrics::MetricsReport;
use tubemosaic::pipeline::{
    self, compare_reference, load_unfolded, match_stage, pair_metrics, read_stitch_params, run_full,
    stitch_unfolded, write_match_artifacts, write_stitch_artifacts, write_unfold_artifacts,
};
use tubemosaic::synth::{render_sequence, GroundTruthRecord, MotionSpec, SynthScene};

const CONFIG_FILE: &str = "config.json";
const GROUND_TRUTH_FILE: &str = "groundtruth.json";
const STRIP_FILE: &str = "groundtruth_strip.png";

#[derive(Parser)]
#[command(name = "tubemosaic", version, about = "Unfold and stitch tubular endoscopy frames into a panorama")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Locate depth centres and unwrap each frame's annulus.
    Unfold {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the configured match providers on unfolded frames.
    Match {
        #[arg(long)]
        unfolded: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Pool, estimate offsets and composite from unfolded frames.
    Stitch {
        #[arg(long)]
        unfolded: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score a panorama against a reference and/or pairs against stitch params.
    Eval {
        #[arg(long)]
        panorama: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        /// A `.stitch.json` file; needs `--unfolded`.
        #[arg(long, requires = "unfolded")]
        pairs_from: Option<PathBuf>,
        #[arg(long)]
        unfolded: Option<PathBuf>,
        /// Output file.
        #[arg(long, default_value = "metrics.json")]
        out: PathBuf,
    },
    /// Render a synthetic tube sequence with ground truth.
    Synth(SynthArgs),
    /// Unfold and stitch in one process.
    Full {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reference image for RMSE/SSIM, e.g. a synthetic ground-truth strip.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MappingArg {
    Linear,
    Perspective,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Dwho,
    SingleProvider,
}

/// Overrides applied on top of `--config` (or the defaults).
#[derive(Args, Default)]
struct ConfigArgs {
    /// JSON config document; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    r_inner: Option<f64>,
    #[arg(long)]
    margin: Option<u32>,
    #[arg(long)]
    focal_length: Option<f64>,
    #[arg(long)]
    unwrap_width: Option<u32>,
    #[arg(long)]
    unwrap_height: Option<u32>,
    #[arg(long, value_enum)]
    radial_mapping: Option<MappingArg>,
    #[arg(long)]
    horizontal_threshold: Option<f64>,
    #[arg(long)]
    max_panorama_width: Option<u32>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    dwho_gain: Option<f64>,
    #[arg(long)]
    density_bins: Option<usize>,
    #[arg(long, value_enum)]
    stitch_method: Option<MethodArg>,
    #[arg(long)]
    depth_fallback: Option<bool>,
    /// Comma separated, e.g. `orb,dog,import:/data/loftr`.
    #[arg(long)]
    providers: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    inlier_threshold: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = io::read_text(path)?;
                PipelineConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field { c.$field = v; }
            )*};
        }
        set!(r_inner, margin, focal_length, unwrap_width, unwrap_height, horizontal_threshold);
        set!(epsilon, dwho_gain, density_bins, depth_fallback, seed);
        if let Some(w) = self.max_panorama_width {
            c.max_panorama_width = Some(w);
        }
        if let Some(m) = self.radial_mapping {
            c.radial_mapping = match m {
                MappingArg::Linear => RadialMapping::Linear,
                MappingArg::Perspective => RadialMapping::Perspective,
            };
        }
        if let Some(m) = self.stitch_method {
            c.stitch_method = match m {
                MethodArg::Dwho => StitchMethod::Dwho,
                MethodArg::SingleProvider => StitchMethod::SingleProvider,
            };
        }
        if let Some(p) = &self.providers {
            c.providers = parse_provider_list(p)?;
        }
        if let Some(t) = self.inlier_threshold {
            c.msac.inlier_threshold = t;
        }
        if let Some(n) = self.max_iterations {
            c.msac.max_iterations = n;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    frames: usize,
    /// Per-pair vertical motion range in unfolded pixels.
    #[arg(long, default_value_t = 8.0)]
    dy_min: f64,
    #[arg(long, default_value_t = 16.0)]
    dy_max: f64,
    /// Per-pair twist range in unfolded pixels.
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    dx_min: f64,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    dx_max: f64,
    /// Additive Gaussian noise, gray levels.
    #[arg(long, default_value_t = 2.0)]
    noise: f64,
    /// Amplitude of a sinusoidal lateral camera offset, pixels.
    #[arg(long, default_value_t = 0.0)]
    offset_amplitude: f64,
    #[arg(long, default_value_t = 12.0)]
    offset_period: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn write_config(dir: &Path, config: &PipelineConfig) -> Result<()> {
    io::ensure_dir(dir)?;
    io::write_json(&dir.join(CONFIG_FILE), config)?;
    Ok(())
}

fn unfold(frames: &Path, out: &Path, config: &PipelineConfig) -> Result<()> {
    let seq = io::load_sequence(frames, config)?;
    if seq.len() < 2 {
        bail!("need at least 2 frames, found {} in {}", seq.len(), frames.display());
    }
    let unfolded = pipeline::unfold_stage(&seq, config)?;
    write_unfold_artifacts(out, &seq, &unfolded)?;
    write_config(out, config)?;
    log::info!("unfolded {} frames into {}", seq.len(), out.display());
    Ok(())
}

fn match_only(unfolded: &Path, out: &Path, config: &PipelineConfig) -> Result<()> {
    let (ids, images, track) = load_unfolded(unfolded)?;
    if ids.len() < 2 {
        bail!("need at least 2 frames, found {} in {}", ids.len(), unfolded.display());
    }
    let pairs = match_stage(&images, &ids, &track, config)?;
    let written = write_match_artifacts(out, &pairs)?;
    write_config(out, config)?;
    log::info!("wrote {} match files to {}", written.len(), out.display());
    Ok(())
}

fn stitch(unfolded: &Path, out: &Path, config: &PipelineConfig) -> Result<()> {
    let (ids, images, track) = load_unfolded(unfolded)?;
    let run = stitch_unfolded(&images, &ids, &track, config)?;
    write_stitch_artifacts(out, &run)?;
    write_config(out, config)?;
    report(run.report.bridged, &run.metrics, out);
    Ok(())
}

fn report(bridged: usize, metrics: &MetricsReport, out: &Path) {
    log::info!(
        "panorama written to {} (mean pair SSIM {:.4}, {bridged} bridged pairs)",
        out.join(pipeline::PANORAMA_FILE).display(),
        metrics.mean_ssim.unwrap_or(f64::NAN),
    );
}

fn eval(
    panorama: Option<&Path>,
    reference: Option<&Path>,
    pairs_from: Option<&Path>,
    unfolded: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let mut metrics = MetricsReport::default();
    if let (Some(params), Some(dir)) = (pairs_from, unfolded) {
        let params = read_stitch_params(params)?;
        let (_, images, _) = load_unfolded(dir)?;
        metrics = pair_metrics(&images, &params)?;
    }
    match (panorama, reference) {
        (Some(p), Some(r)) => {
            compare_reference(&mut metrics, &io::read_rgb(p)?, &io::read_rgb(r)?)?;
        }
        (None, None) if pairs_from.is_none() => {
            bail!("nothing to evaluate: pass --panorama with --reference, or --pairs-from with --unfolded")
        }
        (None, None) => {}
        _ => bail!("--panorama and --reference must be given together"),
    }
    io::write_json(out, &metrics)?;
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    if args.frames < 1 {
        bail!("--frames must be at least 1");
    }
    let motion = MotionSpec::random(
        args.frames,
        (args.dy_min, args.dy_max),
        (args.dx_min, args.dx_max),
        args.seed,
    )
    .with_sinusoidal_offset(args.offset_amplitude, args.offset_period);
    let scene = SynthScene::from_motion(&motion, args.noise, args.seed)?;
    let (seq, gt) = render_sequence(&scene, args.seed)?;
    io::save_sequence(&args.out, &seq)?;
    io::write_rgb(&args.out.join(STRIP_FILE), &gt.strip)?;
    let record = GroundTruthRecord {
        centers: gt.centers,
        dy: gt.dy,
        dx: gt.dx,
        strip: STRIP_FILE.into(),
    };
    io::write_json(&args.out.join(GROUND_TRUTH_FILE), &record)?;
    write_config(&args.out, &scene.pipeline_config())?;
    log::info!("rendered {} frames into {}", seq.len(), args.out.display());
    Ok(())
}

fn full(frames: &Path, out: &Path, reference: Option<&Path>, config: &PipelineConfig) -> Result<()> {
    let seq = io::load_sequence(frames, config)?;
    let mut run = run_full(&seq, config)?;
    if let Some(r) = reference {
        let r = io::read_rgb(r)?;
        compare_reference(&mut run.stitch.metrics, &run.stitch.panorama.image, &r)?;
    }
    write_unfold_artifacts(&out.join("unfolded"), &seq, &run.unfold)?;
    write_stitch_artifacts(out, &run.stitch)?;
    write_config(out, config)?;
    report(run.stitch.report.bridged, &run.stitch.metrics, out);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Unfold { frames, out, config } => unfold(&frames, &out, &config.resolve()?),
        Command::Match { unfolded, out, config } => match_only(&unfolded, &out, &config.resolve()?),
        Command::Stitch { unfolded, out, config } => stitch(&unfolded, &out, &config.resolve()?),
        Command::Eval {
            panorama,
            reference,
            pairs_from,
            unfolded,
            out,
        } => eval(
            panorama.as_deref(),
            reference.as_deref(),
            pairs_from.as_deref(),
            unfolded.as_deref(),
            &out,
        ),
        Command::Synth(args) => synth(&args),
        Command::Full {
            frames,
            out,
            reference,
            config,
        } => full(&frames, &out, reference.as_deref(), &config.resolve()?),
    }
}
