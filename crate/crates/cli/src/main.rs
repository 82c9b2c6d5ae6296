use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use tissuesplat::evalio::{
    evaluate, generate_synthetic, load_dataset, read_intrinsics, read_trajectory, save_png, write_intrinsics,
    SyntheticSpec, INTRINSICS_FILE,
};
use tissuesplat::pipeline::{
    read_map, run_dataset, write_outputs, Preset, SlamConfig, Snapshot, SnapshotHub, MAP_FILE, TRAJECTORY_FILE,
};
use tissuesplat::rasterizer::{render, RenderOptions};
use tissuesplat::{CameraModel, GaussianMap, Pose};
use tissuesplat_server::{serve, ServerConfig};

/// Working precision of the command-line tools.
type S = f32;

#[derive(Parser)]
#[command(
    name = "tissuesplat",
    version,
    about = "Dense RGB-D SLAM with isotropic Gaussian splatting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct a dataset; writes trajectory.txt, map.bin, timing.json
    /// and intrinsics.txt into OUT.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        /// TOML config; a `preset` key picks the base preset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Preset used when no config file is given.
        #[arg(long, default_value = "H")]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a saved map at a camera-to-world pose into a PNG.
    Render {
        #[arg(long)]
        map: PathBuf,
        /// tx ty tz qx qy qz qw
        #[arg(long, num_args = 7, allow_negative_numbers = true, value_names = ["TX", "TY", "TZ", "QX", "QY", "QZ", "QW"])]
        pose: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Intrinsics file; defaults to intrinsics.txt next to the map.
        #[arg(long)]
        intrinsics: Option<PathBuf>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
    },
    /// Score a run directory against a dataset with ground truth.
    Eval {
        /// Directory written by `run`.
        #[arg(long)]
        out: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        gt: PathBuf,
        /// Evaluate every n-th frame.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Serve live novel views over WebSocket, either while reconstructing
    /// a dataset or for a saved map.
    Serve {
        #[arg(long)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Saved map; intrinsics.txt is read from the same directory.
        #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
        map: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, requires = "dataset")]
        config: Option<PathBuf>,
        #[arg(long, default_value = "H")]
        preset: Preset,
        /// Where to write the run outputs when reconstructing.
        #[arg(long, requires = "dataset")]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1920)]
        max_width: usize,
        #[arg(long, default_value_t = 1080)]
        max_height: usize,
    },
    /// Write a synthetic tube fly-through dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// TOML file with generator settings; omitted fields take defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Overrides the frame count.
        #[arg(long)]
        frames: Option<usize>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            dataset,
            config,
            preset,
            out,
        } => cmd_run(&dataset, &load_config(config.as_deref(), preset)?, &out),
        Command::Render {
            map,
            pose,
            out,
            intrinsics,
            width,
            height,
        } => cmd_render(&map, &pose, &out, intrinsics.as_deref(), width, height),
        Command::Eval { out, gt, stride } => cmd_eval(&out, &gt, stride),
        Command::Serve {
            port,
            host,
            map,
            dataset,
            config,
            preset,
            out,
            max_width,
            max_height,
        } => {
            let server_cfg = ServerConfig {
                max_width,
                max_height,
                ..ServerConfig::default()
            };
            let listener =
                TcpListener::bind((host.as_str(), port)).with_context(|| format!("binding {host}:{port}"))?;
            eprintln!("serving on ws://{}", listener.local_addr()?);
            match (map, dataset) {
                (Some(map), _) => serve_map(listener, &map, server_cfg),
                (None, Some(dataset)) => {
                    let cfg = load_config(config.as_deref(), preset)?;
                    serve_run(listener, &dataset, &cfg, out.as_deref(), server_cfg)
                }
                (None, None) => unreachable!("clap requires one of --map and --dataset"),
            }
        }
        Command::Synth { out, spec, frames } => cmd_synth(&out, spec.as_deref(), frames),
    }
}

fn load_config(path: Option<&Path>, preset: Preset) -> Result<SlamConfig> {
    Ok(match path {
        Some(p) => SlamConfig::load(p)?,
        None => SlamConfig::preset(preset),
    })
}

fn cmd_run(dataset: &Path, cfg: &SlamConfig, out: &Path) -> Result<()> {
    let state = run_dataset::<S>(dataset, cfg, None)?;
    finish_run(&state, dataset, out)
}

fn finish_run(state: &tissuesplat::SlamState<S>, dataset: &Path, out: &Path) -> Result<()> {
    write_outputs(state, out)?;
    let (_, depth_scale) = read_intrinsics::<S>(&dataset.join(INTRINSICS_FILE))?;
    write_intrinsics(&out.join(INTRINSICS_FILE), &state.camera, depth_scale)?;
    eprintln!(
        "{} frames, {} Gaussians, {} untrackable",
        state.frames_processed(),
        state.map.len(),
        state.untrackable.len()
    );
    print!("{}", state.timing_report().to_table());
    Ok(())
}

fn intrinsics_beside(map: &Path) -> PathBuf {
    map.parent().unwrap_or(Path::new(".")).join(INTRINSICS_FILE)
}

fn cmd_render(
    map: &Path,
    pose: &[f64],
    out: &Path,
    intrinsics: Option<&Path>,
    width: Option<usize>,
    height: Option<usize>,
) -> Result<()> {
    let gaussians = read_map::<S>(map)?;
    let intr = intrinsics.map_or_else(|| intrinsics_beside(map), Path::to_path_buf);
    let (mut camera, _) = read_intrinsics::<S>(&intr)?;
    if width.is_some() || height.is_some() {
        camera = camera.resized(width.unwrap_or(camera.width), height.unwrap_or(camera.height));
    }
    let pose = parse_pose(pose)?;
    let rendered = render(&gaussians, &pose, &camera, &RenderOptions::default())?;
    save_png(out, &rendered.color)?;
    Ok(())
}

fn parse_pose(v: &[f64]) -> Result<Pose<S>> {
    let arr: [f64; 7] = v.try_into().context("pose needs 7 numbers")?;
    let norm = arr[3..].iter().map(|q| q * q).sum::<f64>().sqrt();
    if !(norm > 0.0) || arr.iter().any(|x| !x.is_finite()) {
        bail!("pose must be finite with a non-zero quaternion");
    }
    Ok(Pose::from_tum(arr.map(|x| x as S)).renormalized())
}

fn cmd_eval(out: &Path, gt: &Path, stride: usize) -> Result<()> {
    let dataset = load_dataset::<S>(gt)?;
    let map = read_map::<S>(&out.join(MAP_FILE))?;
    let poses = read_trajectory::<S>(&out.join(TRAJECTORY_FILE))?;
    let trajectory: Vec<Pose<S>> = poses.into_iter().map(|(_, p)| p).collect();
    let report = evaluate(
        &map,
        &trajectory,
        &dataset,
        stride,
        SlamConfig::default().tracking.delta,
    )?;
    print!("{}", report.to_table());
    let path = out.join("metrics.json");
    std::fs::write(&path, report.to_json()).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn serve_map(listener: TcpListener, map: &Path, cfg: ServerConfig) -> Result<()> {
    let gaussians = read_map::<S>(map)?;
    let (camera, _) = read_intrinsics::<S>(&intrinsics_beside(map))?;
    let hub = SnapshotHub::for_saved_map(gaussians, Pose::identity(), camera);
    serve(listener, hub, cfg)?;
    Ok(())
}

fn serve_run(
    listener: TcpListener,
    dataset: &Path,
    cfg: &SlamConfig,
    out: Option<&Path>,
    server_cfg: ServerConfig,
) -> Result<()> {
    let (camera, _) = read_intrinsics::<S>(&dataset.join(INTRINSICS_FILE))?;
    let hub = SnapshotHub::new(Snapshot {
        frame_index: 0,
        map: Arc::new(GaussianMap::new()),
        pose: Pose::identity(),
        camera: camera as CameraModel<S>,
    });
    let server_hub = Arc::clone(&hub);
    std::thread::spawn(move || serve(listener, server_hub, server_cfg));
    let state = run_dataset::<S>(dataset, cfg, Some(hub))?;
    if let Some(out) = out {
        finish_run(&state, dataset, out)?;
    }
    eprintln!("reconstruction finished; still serving (Ctrl-C to stop)");
    loop {
        std::thread::park();
    }
}

fn cmd_synth(out: &Path, spec: Option<&Path>, frames: Option<usize>) -> Result<()> {
    let mut spec: SyntheticSpec = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(n) = frames {
        spec.frames = n;
    }
    let data = generate_synthetic(&spec, out)?;
    eprintln!("wrote {} frames to {}", data.len(), out.display());
    Ok(())
}
