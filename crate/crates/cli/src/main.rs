use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;
use vesselunits::fixtures::{self, Fixture};
use vesselunits::imageio::{load_grayscale, save_grayscale16, SoftSegmentation};
use vesselunits::kernel::{cache_path, min_radius, KernelParams};
use vesselunits::pipeline::{run_image, KernelCache, ParamOverrides};
use vesselunits::render::{kernel_preview_png, write_patch_artifacts};
use vesselunits::report::Manifest;
use vesselunits_cli::config::RunConfig;
use vesselunits_cli::server::{router, AppState};

/// Names the directory `run` writes to when neither `--out` nor the config
/// does.
const OUT_DIR_ENV: &str = "VESSELUNITS_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "vesselunits-out";

#[derive(Parser)]
#[command(name = "vesselunits", version, about = "Group retinal vessel pixels into individual vessels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster every junction patch of an image and write a manifest plus
    /// per-patch overlays.
    Run(RunArgs),
    /// Estimate one connectivity kernel.
    #[command(allow_negative_numbers = true)]
    Kernel(KernelArgs),
    /// Serve the HTTP API over one image pair.
    Serve(ServeArgs),
    /// Write a synthetic image pair.
    Fixture(FixtureArgs),
}

/// Parameter flags; each one overrides the config's `[defaults]`.
#[derive(Args, Default)]
struct ParamFlags {
    /// Path length in steps (default: a third of the patch size).
    #[arg(long = "H")]
    h: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    tau: Option<u32>,
    #[arg(long)]
    min_size: Option<usize>,
    /// Monte-Carlo paths per kernel.
    #[arg(long = "n")]
    n_paths: Option<usize>,
    #[arg(long)]
    n_theta: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ParamFlags {
    fn overrides(&self) -> ParamOverrides {
        ParamOverrides {
            h: self.h,
            sigma: self.sigma,
            sigma2: self.sigma2,
            epsilon: self.epsilon,
            tau: self.tau,
            min_size: self.min_size,
            n_paths: self.n_paths,
            n_theta: self.n_theta,
            delta_s: None,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Enhanced grayscale image (PNG or PGM).
    #[arg(long)]
    image: Option<PathBuf>,
    /// Soft segmentation of the same size.
    #[arg(long)]
    seg: Option<PathBuf>,
    /// Output directory; falls back to the config's `out`, then to
    /// $VESSELUNITS_OUT_DIR, then to ./vesselunits-out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for persisted kernels.
    #[arg(long)]
    kernel_cache: Option<PathBuf>,
    #[command(flatten)]
    params: ParamFlags,
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long = "H", default_value_t = 7)]
    h: usize,
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    #[arg(long = "n", default_value_t = 100_000)]
    n_paths: usize,
    #[arg(long, default_value_t = 24)]
    n_theta: usize,
    #[arg(long, default_value_t = 1.0)]
    delta_s: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Store the kernel in this directory, reusing it if already there.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Write the largest-bin projection as a PNG.
    #[arg(long)]
    png: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    scale: usize,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    seg: Option<PathBuf>,
    #[arg(long)]
    kernel_cache: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    #[arg(long, default_value_t = 8080)]
    port: u16,
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureKind {
    /// Two bars crossing at 40 degrees.
    X,
    /// A crossing, a branch and a plain stretch of vessel.
    CrossingAndBranch,
    /// A bar interrupted by a 3 px gap.
    Gap,
    /// Two parallel bars of different darkness.
    Parallel,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(value_enum)]
    kind: FixtureKind,
    /// Directory receiving image.png and seg.png.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Kernel(a) => cmd_kernel(a).map(|_| ExitCode::SUCCESS),
        Command::Serve(a) => cmd_serve(a).map(|_| ExitCode::SUCCESS),
        Command::Fixture(a) => cmd_fixture(a).map(|_| ExitCode::SUCCESS),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}

/// Config file (if any) with command-line paths and flags laid over it.
fn resolve_config(
    config: Option<&Path>,
    image: Option<PathBuf>,
    seg: Option<PathBuf>,
    kernel_cache: Option<PathBuf>,
    flags: &ParamFlags,
) -> Result<RunConfig> {
    let mut c = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    c.image = image.or(c.image);
    c.seg = seg.or(c.seg);
    c.kernel_cache = kernel_cache.or(c.kernel_cache);
    c.params.defaults = flags.overrides().apply(&c.params.defaults);
    c.validate()?;
    Ok(c)
}

fn load_pair(image: &Path, seg: &Path) -> Result<(vesselunits::imageio::Image2D, SoftSegmentation)> {
    let img = load_grayscale(image)?.image;
    let seg = SoftSegmentation::paired_with(load_grayscale(seg)?.image, &img)
        .context("the segmentation must match the image size")?;
    Ok((img, seg))
}

fn cmd_run(a: RunArgs) -> Result<ExitCode> {
    let out_flag = a.out.clone();
    let c = resolve_config(a.config.as_deref(), a.image, a.seg, a.kernel_cache, &a.params)?;
    let (image, seg) = c.inputs()?;
    let (img, soft) = load_pair(image, seg)?;
    let out = out_flag
        .or(c.out.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let cache = KernelCache::new(c.kernel_cache.clone());
    let started = Instant::now();
    let run = run_image(&img, &soft, &c.params, &cache)?;

    let mut artifacts = std::collections::BTreeMap::new();
    for outcome in &run.patches {
        if let Some(result) = &outcome.result {
            artifacts.insert(outcome.spec.id, write_patch_artifacts(&out, &img, result)?);
        }
    }
    let manifest = Manifest::new(
        image.display().to_string(),
        seg.display().to_string(),
        c.params.defaults,
        c.params.overrides.clone(),
        &run,
        |id| artifacts.remove(&id).unwrap_or_default(),
    );
    let manifest_path = out.join("manifest.json");
    std::fs::write(&manifest_path, manifest.to_json()).with_context(|| format!("writing {}", manifest_path.display()))?;

    for p in &manifest.patches {
        match &p.summary {
            Some(s) => println!("patch {:>3}  {}x{}  clusters {}  noise {}", p.id, s.rect.width, s.rect.height, s.n_clusters, s.n_noise),
            None => println!("patch {:>3}  failed", p.id),
        }
    }
    println!(
        "{} patches, {} junctions in {:.1}s; manifest at {}",
        manifest.patches.len(),
        manifest.junctions.len(),
        started.elapsed().as_secs_f64(),
        manifest_path.display()
    );

    let failed: Vec<_> = manifest.failed().collect();
    if failed.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    eprintln!("{} of {} patches failed:", failed.len(), manifest.patches.len());
    for p in failed {
        eprintln!("  patch {}: {}", p.id, p.error.as_deref().unwrap_or_default());
    }
    Ok(ExitCode::from(1))
}

fn cmd_kernel(a: KernelArgs) -> Result<()> {
    let params = KernelParams {
        h: a.h,
        n_paths: a.n_paths,
        sigma: a.sigma,
        delta_s: a.delta_s,
        n_theta: a.n_theta,
        grid_radius: min_radius(a.h, a.delta_s),
        seed: a.seed,
    };
    params.validate()?;
    let started = Instant::now();
    let cache = KernelCache::new(a.cache.clone());
    let grid = cache.get(params)?;
    let seconds = started.elapsed().as_secs_f64();
    if let Some(png) = &a.png {
        if a.scale == 0 {
            bail!("--scale must be at least 1");
        }
        std::fs::write(png, kernel_preview_png(&grid, a.scale)?).with_context(|| format!("writing {}", png.display()))?;
    }
    let summary = serde_json::json!({
        "params": params,
        "cache_key": params.cache_key(),
        "cache_file": a.cache.as_deref().map(|d| cache_path(d, &params)),
        "side": grid.side(),
        "n_directed": grid.n_directed(),
        "total_mass": grid.total_mass(),
        "seconds": seconds,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let c = resolve_config(a.config.as_deref(), a.image, a.seg, a.kernel_cache, &ParamFlags::default())?;
    let (image, seg) = c.inputs()?;
    let (img, soft) = load_pair(image, seg)?;
    let state = AppState::new(img, soft, c.params, KernelCache::new(c.kernel_cache))?;
    let n = state.patches.len();
    let app = router(Arc::new(state));
    let addr = SocketAddr::new(a.host, a.port);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        eprintln!("serving {n} patches on http://{}", listener.local_addr()?);
        axum::serve(listener, app).await?;
        Ok(())
    })
}

fn cmd_fixture(a: FixtureArgs) -> Result<()> {
    let f: Fixture = match a.kind {
        FixtureKind::X => fixtures::x_fixture(51),
        FixtureKind::CrossingAndBranch => fixtures::crossing_and_branch(),
        FixtureKind::Gap => fixtures::broken_bar(61, 3, 0.3),
        FixtureKind::Parallel => fixtures::parallel_bars(97, 7, [0.3, 0.7]),
    };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_grayscale16(&f.image, a.out.join("image.png"))?;
    save_grayscale16(f.seg.image(), a.out.join("seg.png"))?;
    println!("wrote {}x{} fixture to {}", f.width(), f.height(), a.out.display());
    Ok(())
}
