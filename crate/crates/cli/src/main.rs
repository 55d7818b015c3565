use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pwi_core::aberration::sample_profile;
use pwi_core::beamform::{das_all, DasTensor};
use pwi_core::bench::{run_bench, BenchReport};
use pwi_core::compound::{cpc_all, select_subset};
use pwi_core::config::SystemConfig;
use pwi_core::dataio::{
    acquire, blob_bmode, cube_from_blob, cube_to_blob, emit_dataset, read_blob, read_pgm, tensor_from_blob, write_blob,
    write_pgm, DatasetConfig, TensorBlob,
};
use pwi_core::metrics::{evaluate, lesion_rois, Domain, MetricsReport, RoiSpec};
use pwi_core::rfsim::{make_phantom, PhantomGeometry, PhantomKind};
use pwi_core::svdbf::svd_beamform;

#[derive(Parser, Debug)]
#[command(name = "pwi", version, about = "Plane-wave ultrasound simulation, beamforming and compounding")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// key=value system configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate channel data of a synthetic phantom.
    Simulate(SimulateArgs),
    /// Delay-and-sum every plane wave with a perturbed speed of sound.
    Beamform(BeamformArgs),
    /// Coherent plane-wave compounding of a DAS tensor.
    Compound(CompoundArgs),
    /// Patch-wise rank-1 SVD compounding of a DAS tensor.
    Svdbf(SvdbfArgs),
    /// Envelope detection and log compression to an 8-bit PGM.
    Bmode(BmodeArgs),
    /// Contrast metrics of a B-mode image between two regions.
    Metrics(MetricsArgs),
    /// Write a training dataset of input/target tensor pairs.
    Dataset(DatasetArgs),
    /// Time CPC against SVD compounding.
    Bench(BenchArgs),
    /// Run every stage and write both B-modes and their metrics.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug, Clone)]
struct SimulateArgs {
    #[arg(long, default_value = "hypoechoic")]
    phantom: PhantomKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct BeamformArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Half-width of the uniform speed-of-sound perturbation, m/s.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Seed of the perturbation draw.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the sampled speed-of-sound profile (L x K).
    #[arg(long)]
    profile_out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct CompoundArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Number of plane waves to compound (default: all).
    #[arg(long)]
    pw: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct SvdbfArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    pw: Option<usize>,
    /// Patch size as ROWSxCOLS.
    #[arg(long, value_parser = parse_dims, default_value = "32x32")]
    patch: (usize, usize),
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct BmodeArgs {
    /// Real compounded image or complex IQ image.
    #[arg(long = "in")]
    input: PathBuf,
    /// Dynamic range in dB (default: from the configuration).
    #[arg(long)]
    dr: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct MetricsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Dynamic range the PGM was written with.
    #[arg(long)]
    dr: Option<f64>,
    /// Lesion region in pixel units (default: the phantom lesion).
    #[arg(long)]
    roi_a: Option<RoiSpec>,
    /// Background region in pixel units (default: beside the phantom lesion).
    #[arg(long)]
    roi_b: Option<RoiSpec>,
    /// Intensity domain the statistics are computed in: db or linear.
    #[arg(long, default_value = "db")]
    domain: Domain,
}

#[derive(Args, Debug, Clone)]
struct DatasetArgs {
    #[arg(long)]
    scenes: usize,
    /// Plane-wave counts of the stored input subsets.
    #[arg(long, value_delimiter = ',', default_values_t = [31, 25, 15])]
    pw: Vec<usize>,
    /// Seed of the first scene; scene i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct BenchArgs {
    #[arg(long, default_value_t = 31)]
    pw: usize,
    /// Image grid as ROWSxCOLS.
    #[arg(long, value_parser = parse_dims, default_value = "1024x192")]
    grid: (usize, usize),
    #[arg(long, default_value_t = 3)]
    reps: usize,
}

#[derive(Args, Debug, Clone)]
struct PipelineArgs {
    #[arg(long, default_value = "hypoechoic")]
    phantom: PhantomKind,
    /// Seed of both the phantom and the perturbation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long)]
    pw: Option<usize>,
    #[arg(long, value_parser = parse_dims, default_value = "32x32")]
    patch: (usize, usize),
    #[arg(long)]
    dr: Option<f64>,
    #[arg(long, default_value = "db")]
    domain: Domain,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
    let n = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{s:?}: {e}"));
    match (n(a)?, n(b)?) {
        (0, _) | (_, 0) => Err(format!("{s:?}: dimensions must be positive")),
        dims => Ok(dims),
    }
}

fn load_config(path: Option<&Path>) -> Result<SystemConfig> {
    match path {
        Some(p) => SystemConfig::from_file(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(SystemConfig::default()),
    }
}

fn subset_tensor(tensor: DasTensor, pw: Option<usize>) -> Result<DasTensor> {
    let k_full = tensor.dim().2;
    match pw {
        None => Ok(tensor),
        Some(k) if k == k_full => Ok(tensor),
        Some(k) => Ok(tensor.select(&select_subset(k_full, k)?)?),
    }
}

fn simulate(args: &SimulateArgs, sys: &SystemConfig) -> Result<()> {
    let phantom = make_phantom(args.phantom, args.seed, &PhantomGeometry::fitted(sys))?;
    let cube = acquire(&phantom, sys)?;
    write_blob(&args.out, &cube_to_blob(&cube)?)?;
    Ok(())
}

fn beamform(args: &BeamformArgs, sys: &SystemConfig) -> Result<()> {
    let cube = cube_from_blob(&read_blob(&args.input)?, sys)?;
    let profile = sample_profile(
        sys.imaging.assumed_sos,
        args.sigma,
        sys.imaging.num_scanlines,
        cube.num_planewaves(),
        args.seed,
    )?;
    if let Some(p) = &args.profile_out {
        write_blob(p, &TensorBlob::from_f64(&profile.sos)?)?;
    }
    let tensor = das_all(&cube, &profile, &sys.apodization, &sys.imaging)?;
    write_blob(&args.out, &TensorBlob::from_f64(&tensor.data)?)?;
    Ok(())
}

fn compound(args: &CompoundArgs, sys: &SystemConfig) -> Result<()> {
    let tensor = subset_tensor(tensor_from_blob(&read_blob(&args.input)?, sys)?, args.pw)?;
    let img = cpc_all(&tensor)?;
    write_blob(&args.out, &TensorBlob::from_f64(&img.v)?)?;
    Ok(())
}

fn svdbf(args: &SvdbfArgs, sys: &SystemConfig) -> Result<()> {
    let tensor = subset_tensor(tensor_from_blob(&read_blob(&args.input)?, sys)?, args.pw)?;
    let start = Instant::now();
    let img = svd_beamform(&tensor, args.patch)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    eprintln!(
        "svdbf: {} patches ({} fallback), K={}, {wall_ms:.3} ms",
        img.patches,
        img.fallback_patches,
        tensor.dim().2
    );
    write_blob(&args.out, &TensorBlob::from_complex(&img.iq)?)?;
    Ok(())
}

fn bmode_cmd(args: &BmodeArgs, sys: &SystemConfig) -> Result<()> {
    let dr = args.dr.unwrap_or(sys.imaging.dynamic_range);
    let img = blob_bmode(&read_blob(&args.input)?, dr)?;
    write_pgm(&args.out, &img)?;
    Ok(())
}

fn metrics_report(args: &MetricsArgs, sys: &SystemConfig) -> Result<MetricsReport> {
    let dr = args.dr.unwrap_or(sys.imaging.dynamic_range);
    let img = read_pgm(&args.input, dr)?;
    let (lesion, background) = lesion_rois(&PhantomGeometry::fitted(sys), sys);
    let ra = args.roi_a.unwrap_or(lesion);
    let rb = args.roi_b.unwrap_or(background);
    Ok(evaluate(&img, &ra, &rb, args.domain)?)
}

fn metrics_row(r: &MetricsReport) -> String {
    format!("{},{},{}", r.cr, r.cnr, r.gcnr)
}

fn metrics(args: &MetricsArgs, sys: &SystemConfig) -> Result<()> {
    let report = metrics_report(args, sys)?;
    println!("cr_db,cnr,gcnr");
    println!("{}", metrics_row(&report));
    Ok(())
}

fn dataset(args: &DatasetArgs, sys: &SystemConfig) -> Result<()> {
    if args.scenes == 0 {
        bail!("--scenes must be at least 1");
    }
    let cfg = DatasetConfig {
        system: sys.clone(),
        geometry: PhantomGeometry::fitted(sys),
        subset_sizes: args.pw.clone(),
        ..DatasetConfig::default()
    };
    let seeds: Vec<u64> = (0..args.scenes as u64).map(|i| args.seed.wrapping_add(i)).collect();
    let manifest = emit_dataset(args.scenes, &args.out, &seeds, &cfg)?;
    eprintln!("wrote {} records to {}", manifest.records.len(), args.out.display());
    Ok(())
}

fn bench(args: &BenchArgs, threads: usize) -> Result<()> {
    let (rows, cols) = args.grid;
    let reports = run_bench(args.pw, rows, cols, args.reps, threads)?;
    println!("{}", BenchReport::CSV_HEADER);
    for r in reports {
        println!("{r}");
    }
    Ok(())
}

fn pipeline(args: &PipelineArgs, sys: &SystemConfig) -> Result<()> {
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let path = |name: &str| args.out.join(name);
    simulate(
        &SimulateArgs { phantom: args.phantom, seed: args.seed, out: path("cube.utb") },
        sys,
    )?;
    beamform(
        &BeamformArgs {
            input: path("cube.utb"),
            sigma: args.sigma,
            seed: args.seed,
            out: path("das.utb"),
            profile_out: None,
        },
        sys,
    )?;
    compound(&CompoundArgs { input: path("das.utb"), pw: args.pw, out: path("cpc.utb") }, sys)?;
    svdbf(
        &SvdbfArgs { input: path("das.utb"), pw: args.pw, patch: args.patch, out: path("svd.utb") },
        sys,
    )?;
    let mut csv = String::from("image,cr_db,cnr,gcnr\n");
    for name in ["cpc", "svd"] {
        let pgm = path(&format!("{name}.pgm"));
        bmode_cmd(
            &BmodeArgs { input: path(&format!("{name}.utb")), dr: args.dr, out: pgm.clone() },
            sys,
        )?;
        let report = metrics_report(
            &MetricsArgs { input: pgm, dr: args.dr, roi_a: None, roi_b: None, domain: args.domain },
            sys,
        )?;
        csv.push_str(&format!("{name},{}\n", metrics_row(&report)));
    }
    let out = path("metrics.csv");
    fs::write(&out, csv).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads.unwrap_or_else(rayon::current_num_threads);
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the thread pool")?;
    }
    let sys = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Simulate(a) => simulate(a, &sys),
        Command::Beamform(a) => beamform(a, &sys),
        Command::Compound(a) => compound(a, &sys),
        Command::Svdbf(a) => svdbf(a, &sys),
        Command::Bmode(a) => bmode_cmd(a, &sys),
        Command::Metrics(a) => metrics(a, &sys),
        Command::Dataset(a) => dataset(a, &sys),
        Command::Bench(a) => bench(a, threads),
        Command::Pipeline(a) => pipeline(a, &sys),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pwi: {e:#}");
            ExitCode::FAILURE
        }
    }
}
