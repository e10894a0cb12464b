//! `cinemagraph` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cinemagraph::euler::{euler_backward, euler_forward};
use cinemagraph::flowsynth::{flow_to_mask, hint_for_phrase, quadrant_for_angle, synth_flow, DEFAULT_TAU};
use cinemagraph::io::{read_atns, read_flo, read_image, read_mask, write_flo, write_image, write_mask};
use cinemagraph::maskgen::{
    average_attention, kmeans_cluster, labels_to_masks, pca_visualize, select_clusters, single_step_affinity,
    spectral_cluster, AffinityKind, DEFAULT_CLUSTERS, DEFAULT_FROM_STEP, DEFAULT_OVERLAP, FINE_STRUCTURE_OVERLAP,
};
use cinemagraph::pipeline::{write_loop, DEFAULT_FPS};
use cinemagraph::viz::colorize_flow;
use cinemagraph::{BinaryMask, Error, FlowField, LoopConfig, OutputFormat, Preset};

#[derive(Parser, Debug)]
#[command(name = "cinemagraph", version, about = "Seamless looping animation from a single image and a flow field")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Playback rate for GIF output.
    #[arg(long, global = true, default_value_t = DEFAULT_FPS)]
    fps: u32,
    /// Worker threads: a positive integer or `auto`.
    #[arg(long, global = true, default_value = "auto", value_parser = parse_threads)]
    threads: Threads,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy)]
enum Threads {
    Auto,
    Fixed(usize),
}

fn parse_threads(s: &str) -> Result<Threads, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(Threads::Auto);
    }
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(Threads::Fixed(n)),
        _ => Err(format!("expected a positive integer or `auto`, got `{s}`")),
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a looping animation.
    Animate(AnimateArgs),
    /// Integrate a flow field for a number of Euler steps.
    Integrate(IntegrateArgs),
    /// Build a motion mask from an attention stack and a guide mask.
    Mask(MaskArgs),
    /// Synthesize a constant flow inside a mask from a direction.
    SynthFlow(SynthFlowArgs),
    /// Threshold flow magnitude into a mask.
    FlowMask(FlowMaskArgs),
    /// Render a flow field as a color-wheel image.
    Colorize(ColorizeArgs),
    /// Render the leading principal components of the averaged attention.
    PcaViz(PcaVizArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Real,
    Artistic,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Png,
    Gif,
}

#[derive(Args, Debug)]
struct AnimateArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    flow: PathBuf,
    /// Motion mask; everything moves when omitted.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Loop length N; N + 1 frames are written.
    #[arg(long, conflicts_with = "preset")]
    frames: Option<usize>,
    /// 60 frames for `real`, 120 for `artistic`.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Output format; inferred from `--out` when omitted (`.gif` or a directory of PNGs).
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct IntegrateArgs {
    #[arg(long)]
    flow: PathBuf,
    #[arg(short = 'n', long = "steps")]
    steps: usize,
    /// Integrate the reversed flow instead.
    #[arg(long)]
    backward: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Spectral,
    Kmeans,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AffinityArg {
    Attention,
    Cosine,
}

#[derive(Args, Debug)]
struct MaskArgs {
    #[arg(long)]
    attn: PathBuf,
    /// Coarse object mask; also fixes the output resolution.
    #[arg(long)]
    guide: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CLUSTERS)]
    clusters: usize,
    /// Minimum fraction of a cluster inside the guide.
    #[arg(long, default_value_t = DEFAULT_OVERLAP, conflicts_with = "fine")]
    overlap: f64,
    /// Stricter overlap for thin structures.
    #[arg(long)]
    fine: bool,
    /// First timestep id included in the average.
    #[arg(long, default_value_t = DEFAULT_FROM_STEP, conflicts_with = "single_step")]
    from_step: u32,
    /// Use one timestep only instead of the average.
    #[arg(long)]
    single_step: Option<u32>,
    #[arg(long, value_enum, default_value = "spectral")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "attention")]
    affinity: AffinityArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("dir").required(true).args(["direction", "theta_deg"])))]
struct SynthFlowArgs {
    #[arg(long)]
    mask: PathBuf,
    /// Direction phrase such as "left to right" or "upwards".
    #[arg(long)]
    direction: Option<String>,
    /// Angle in degrees, counterclockwise from +x with y pointing up.
    #[arg(long, allow_hyphen_values = true)]
    theta_deg: Option<f64>,
    /// Pixels per frame.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Use the center of the phrase's arc instead of sampling.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FlowMaskArgs {
    #[arg(long)]
    flow: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ColorizeArgs {
    #[arg(long)]
    flow: PathBuf,
    /// Magnitude rendered at full saturation; the field's maximum when omitted.
    #[arg(long)]
    max_magnitude: Option<f32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PcaVizArgs {
    #[arg(long)]
    attn: PathBuf,
    #[arg(long, default_value_t = DEFAULT_FROM_STEP)]
    from_step: u32,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidInput(_) => 2,
        Error::Numerical(_) => 4,
        Error::DimensionMismatch(_) | Error::Format(_) | Error::Io(_) | Error::Image(_) | Error::Gif(_) => 3,
    }
}

fn load_flow(path: &Path) -> Result<FlowField, Error> {
    let flow = read_flo(path)?;
    flow.check_magnitude_bound()?;
    Ok(flow)
}

fn animate(cli: &Cli, a: &AnimateArgs) -> Result<(), Error> {
    let image = read_image(&a.image)?;
    let flow = load_flow(&a.flow)?;
    let mask = match &a.mask {
        Some(p) => read_mask(p)?,
        None => BinaryMask::filled(image.width(), image.height(), true),
    };
    let frames = match (a.frames, a.preset) {
        (Some(n), _) => n,
        (None, Some(PresetArg::Artistic)) => Preset::Artistic.frames(),
        (None, Some(PresetArg::Real)) | (None, None) => Preset::Real.frames(),
    };
    let format = match a.format {
        Some(FormatArg::Gif) => OutputFormat::Gif,
        Some(FormatArg::Png) => OutputFormat::PngSequence,
        None if a.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("gif")) => OutputFormat::Gif,
        None => OutputFormat::PngSequence,
    };
    let cfg = LoopConfig::new(frames, cli.fps, format)?;
    write_loop(&image, &flow, &mask, &cfg, &a.out)
}

fn integrate(a: &IntegrateArgs) -> Result<(), Error> {
    let flow = load_flow(&a.flow)?;
    let out = if a.backward {
        euler_backward(&flow, a.steps)
    } else {
        euler_forward(&flow, a.steps)
    };
    write_flo(&out, &a.out)
}

fn mask(cli: &Cli, a: &MaskArgs) -> Result<(), Error> {
    let stack = read_atns(&a.attn)?;
    let guide = read_mask(&a.guide)?;
    let affinity = match a.single_step {
        Some(step) => single_step_affinity(&stack, step)?,
        None => average_attention(&stack, a.from_step)?,
    };
    let affinity = match a.affinity {
        AffinityArg::Attention => AffinityKind::Attention,
        AffinityArg::Cosine => AffinityKind::CosineRows,
    }
    .apply(affinity);
    let labels = match a.method {
        MethodArg::Spectral => spectral_cluster(&affinity, a.clusters, cli.seed)?,
        MethodArg::Kmeans => kmeans_cluster(&affinity, a.clusters, cli.seed)?,
    };
    let masks = labels_to_masks(&labels, stack.grid_h(), stack.grid_w(), guide.height(), guide.width())?;
    let threshold = if a.fine { FINE_STRUCTURE_OVERLAP } else { a.overlap };
    write_mask(&select_clusters(&masks, &guide, threshold)?, &a.out)
}

fn synth(cli: &Cli, a: &SynthFlowArgs) -> Result<(), Error> {
    let mask = read_mask(&a.mask)?;
    let theta = match (&a.direction, a.theta_deg) {
        (Some(phrase), None) => {
            let hint = hint_for_phrase(phrase, cli.seed, a.deterministic)?;
            eprintln!(
                "direction \"{}\" -> quadrant {}, theta {:.2} deg",
                hint.phrase,
                hint.quadrant_index,
                hint.angle_theta.to_degrees()
            );
            hint.angle_theta
        }
        (None, Some(deg)) if deg.is_finite() => {
            let theta = deg.to_radians();
            eprintln!("theta {deg} deg lies in quadrant {}", quadrant_for_angle(theta));
            theta
        }
        _ => return Err(Error::InvalidInput("give exactly one finite --direction or --theta-deg".into())),
    };
    write_flo(&synth_flow(&mask, theta, a.speed)?, &a.out)
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Animate(a) => animate(cli, a),
        Command::Integrate(a) => integrate(a),
        Command::Mask(a) => mask(cli, a),
        Command::SynthFlow(a) => synth(cli, a),
        Command::FlowMask(a) => write_mask(&flow_to_mask(&load_flow(&a.flow)?, a.tau)?, &a.out),
        Command::Colorize(a) => {
            if a.max_magnitude.is_some_and(|m| !(m > 0.0 && m.is_finite())) {
                return Err(Error::InvalidInput("--max-magnitude must be positive".into()));
            }
            write_image(&colorize_flow(&read_flo(&a.flow)?, a.max_magnitude), &a.out)
        }
        Command::PcaViz(a) => {
            let stack = read_atns(&a.attn)?;
            let affinity = average_attention(&stack, a.from_step)?;
            write_image(&pca_visualize(&affinity, stack.grid_h(), stack.grid_w())?, &a.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Threads::Fixed(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
