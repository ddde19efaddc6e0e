//! Command-line harness: synthetic data generation, layer and network
//! benchmarking, oracle verification and density profiling.
//!
//! Exit codes: 0 success, 1 usage error, 2 verification failure,
//! 3 resource/capacity error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use voxelconv::coords::{normalize_coords, pack, quantize, PackSpec, PackedCoord};
use voxelconv::features::{compute, ComputeOptions, DataflowPlan, FeatureMatrix, WeightTensor};
use voxelconv::io::{self, EngineConfig, PointCloud};
use voxelconv::kmap::{
    build_kmap_bruteforce, build_kmap_bsearch, build_kmap_zdelta, downsample, enumerate_offsets,
    group_offsets, l1_norm_max, post_process, KernelMap, SearchStats,
};
use voxelconv::network::{
    analyze_density, index_network, plan_network, run_network, DensityProfile, IndexingMode,
    NetworkSpec, RunOptions, RunReport, Tuner, REPORT_SCHEMA_VERSION,
};
use voxelconv::oracle::eval_eq2_direct;
use voxelconv::synth;
use voxelconv::timing;

#[derive(Parser)]
#[command(
    name = "voxelconv",
    version,
    about = "Sparse convolution engine for voxelized point clouds"
)]
struct Cli {
    /// Worker thread count (default: hardware parallelism, or the
    /// VOXELCONV_THREADS environment variable).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic point cloud file.
    GenSynthetic(GenArgs),
    /// Benchmark one sparse convolution layer on a cloud.
    BenchLayer(BenchLayerArgs),
    /// Benchmark a whole network spec end to end.
    BenchNetwork(BenchNetworkArgs),
    /// Kernel-map column density by offset L1 norm.
    ProfileDensity(ProfileArgs),
}

#[derive(Args)]
struct GenArgs {
    /// plane | wall | sphere | random
    #[arg(long)]
    kind: synth::SyntheticKind,
    /// Side length in voxels (plane, wall).
    #[arg(long, default_value_t = 64)]
    size: u32,
    /// Shell radius in voxels (sphere).
    #[arg(long, default_value_t = 16.0)]
    radius: f32,
    /// Point count (random).
    #[arg(long, default_value_t = 10_000)]
    count: usize,
    /// Cube extent in meters (random).
    #[arg(long, default_value_t = 100.0)]
    extent: f32,
    /// Feature channels to attach (seeded).
    #[arg(long, default_value_t = 0)]
    channels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Write the binary format instead of text.
    #[arg(long)]
    binary: bool,
}

#[derive(Args)]
struct BenchLayerArgs {
    #[arg(long)]
    cloud: PathBuf,
    /// Layer shape as `C_in,C_out,K`.
    #[arg(long)]
    layer: String,
    /// Layer stride (1 = submanifold, 2 = downsampling).
    #[arg(long, default_value_t = 1)]
    stride: u32,
    /// Input stride (power of two); the cloud is pre-downsampled to this
    /// lattice to mimic a mid-network layer.
    #[arg(long = "s-p", default_value_t = 1)]
    s_p: u32,
    /// os | ws | hybrid | auto
    #[arg(long, default_value = "os")]
    dataflow: String,
    /// Hybrid L1-norm threshold; only valid with --dataflow hybrid.
    #[arg(long)]
    t: Option<u32>,
    /// zdelta | bsearch | both
    #[arg(long, default_value = "zdelta")]
    builder: String,
    /// Cross-check the kernel map and features against brute force.
    #[arg(long)]
    verify: bool,
    /// Deterministic (row-partitioned) accumulation instead of the
    /// contended lock-free mode.
    #[arg(long)]
    deterministic: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write a kernel-map text dump (zdelta build).
    #[arg(long)]
    dump_kmap: Option<PathBuf>,
    /// Print a human-readable table as well.
    #[arg(long)]
    human: bool,
}

#[derive(Args)]
struct BenchNetworkArgs {
    #[arg(long)]
    cloud: PathBuf,
    /// Network spec file: one `K s_l c_in c_out policy` line per layer.
    #[arg(long)]
    network: PathBuf,
    /// sequential | network-wide | both
    #[arg(long, default_value = "both")]
    mode: String,
    #[arg(long)]
    verify: bool,
    #[arg(long)]
    deterministic: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    human: bool,
}

#[derive(Args)]
struct ProfileArgs {
    /// One or more cloud files.
    #[arg(long, required = true, num_args = 1..)]
    cloud: Vec<PathBuf>,
    #[arg(long, default_value_t = 5)]
    k: u32,
    /// Write `cloud,l1,density` rows.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    human: bool,
}

enum CliError {
    Usage(String),
    Verification(String),
    Resource(String),
}

impl From<voxelconv::Error> for CliError {
    fn from(e: voxelconv::Error) -> Self {
        use voxelconv::Error::*;
        match e {
            MemoryCap { .. }
            | AxisOverflow { .. }
            | MarginTooSmall { .. }
            | MaskDepthTooLarge { .. } => CliError::Resource(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("VOXELCONV_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        });
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    let result = match cli.command {
        Command::GenSynthetic(args) => cmd_gen_synthetic(args),
        Command::BenchLayer(args) => cmd_bench_layer(args, threads),
        Command::BenchNetwork(args) => cmd_bench_network(args, threads),
        Command::ProfileDensity(args) => cmd_profile_density(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Resource(msg)) => {
            eprintln!("resource limit: {msg}");
            ExitCode::from(3)
        }
    }
}

fn cmd_gen_synthetic(args: GenArgs) -> Result<(), CliError> {
    let points = match args.kind {
        synth::SyntheticKind::Plane => synth::plane(args.size),
        synth::SyntheticKind::Wall => synth::wall(args.size),
        synth::SyntheticKind::Sphere => {
            if args.radius <= 1.0 {
                return Err(CliError::Usage("sphere radius must exceed 1".into()));
            }
            synth::sphere(args.radius)
        }
        synth::SyntheticKind::Random => synth::random(args.count, args.extent, args.seed),
    };
    let features = FeatureMatrix::seeded(points.len(), args.channels, args.seed ^ 0xf00d);
    let cloud = PointCloud::new(points, features)?;
    if args.binary {
        io::write_cloud_binary(&cloud, &args.out)?;
    } else {
        io::write_cloud_text(&cloud, &args.out)?;
    }
    eprintln!(
        "wrote {} points to {}",
        cloud.points.len(),
        args.out.display()
    );
    Ok(())
}

struct PreparedCloud {
    packed: Vec<PackedCoord>,
    features: FeatureMatrix,
    spec: PackSpec,
    raw_points: usize,
}

/// Voxelize, merge features, normalize against the pack spec, pack and
/// sort. Missing features (0 channels) are synthesized from the seed so
/// benchmarks always have data to convolve.
fn prepare_cloud(
    cloud: &PointCloud,
    config: &EngineConfig,
    required_margin: u32,
    c_in: usize,
    seed: u64,
) -> Result<PreparedCloud, CliError> {
    let q = quantize(&cloud.points, &config.grid)?;
    if q.coords.is_empty() {
        return Err(CliError::Usage("no voxels (empty cloud)".into()));
    }
    let features = if cloud.features.channels == c_in {
        cloud
            .features
            .average_by_groups(&q.point_to_voxel, q.coords.len())
    } else if cloud.features.channels == 0 {
        FeatureMatrix::seeded(q.coords.len(), c_in, seed ^ 0x5eed)
    } else {
        return Err(CliError::Usage(format!(
            "cloud has {} feature channels but the layer expects {c_in}; regenerate with \
             --channels {c_in} or drop the features",
            cloud.features.channels
        )));
    };
    let spec = config.pack_spec(required_margin)?;
    let (norm, _origin) = normalize_coords(&q.coords, &spec)?;
    let packed_unsorted: Vec<PackedCoord> = norm
        .iter()
        .map(|v| pack(v, &spec))
        .collect::<voxelconv::Result<_>>()?;
    let (packed, perm) = voxelconv::kmap::sort_packed(&packed_unsorted);
    let features = features.permuted(&perm);
    Ok(PreparedCloud {
        packed,
        features,
        spec,
        raw_points: cloud.points.len(),
    })
}

#[derive(Serialize)]
struct CloudInfo {
    path: String,
    points: usize,
    voxels: usize,
}

#[derive(Serialize)]
struct LayerInfo {
    k: u32,
    s_l: u32,
    s_p: u32,
    c_in: usize,
    c_out: usize,
}

#[derive(Serialize)]
struct BuilderRun {
    builder: String,
    dataflow: String,
    t_selected: u32,
    kdense: usize,
    ksparse: usize,
    map_build_ns: u64,
    post_ns: u64,
    feature_ns: u64,
    bsearch_count: u64,
    probe_count: u64,
    map_checksum: String,
    map_bytes: usize,
    n_out: usize,
    verified: Option<bool>,
}

#[derive(Serialize)]
struct LayerBenchReport {
    schema_version: u32,
    command: String,
    seed: u64,
    threads: usize,
    cloud: CloudInfo,
    layer: LayerInfo,
    runs: Vec<BuilderRun>,
    density: DensityProfile,
}

fn worst_rel(a: &[f32], b: &[f32]) -> f32 {
    let scale = a.iter().chain(b.iter()).fold(0.0f32, |m, v| m.max(v.abs()));
    let floor = 1e-5 * scale.max(1e-3);
    let mut worst = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        let d = (x - y).abs();
        if d > floor {
            worst = worst.max(d / x.abs().max(y.abs()));
        }
    }
    worst
}

fn parse_layer_triple(s: &str) -> Result<(usize, usize, u32), CliError> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::Usage(format!(
            "--layer expects `C_in,C_out,K`, got `{s}`"
        )));
    }
    let parse = |v: &str| -> Result<usize, CliError> {
        v.trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("`{v}` is not an integer")))
    };
    Ok((parse(parts[0])?, parse(parts[1])?, parse(parts[2])? as u32))
}

fn load_config(path: &Option<PathBuf>) -> Result<EngineConfig, CliError> {
    Ok(match path {
        Some(p) => io::read_engine_config(p)?,
        None => EngineConfig::default(),
    })
}

fn emit_report<T: Serialize>(report: &T, path: &Option<PathBuf>) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| CliError::Usage(format!("report serialization: {e}")))?;
    match path {
        Some(p) => std::fs::write(p, json.as_bytes())
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_bench_layer(args: BenchLayerArgs, threads: usize) -> Result<(), CliError> {
    let (c_in, c_out, k) = parse_layer_triple(&args.layer)?;
    if k == 0 || k.is_multiple_of(2) {
        return Err(CliError::Usage(format!("kernel size {k} must be odd")));
    }
    if args.stride != 1 && args.stride != 2 {
        return Err(CliError::Usage("--stride must be 1 or 2".into()));
    }
    if !args.s_p.is_power_of_two() {
        return Err(CliError::Usage("--s-p must be a power of two".into()));
    }
    if args.t.is_some() && args.dataflow != "hybrid" {
        return Err(CliError::Usage(
            "--t is only valid with --dataflow hybrid".into(),
        ));
    }
    let config = load_config(&args.config)?;
    let cloud = io::read_cloud(&args.cloud)?;

    let s_p = args.s_p;
    let reach = (k - 1) / 2 * s_p;
    let s_q = s_p * args.stride;
    let required_margin = if args.stride == 1 {
        reach
    } else {
        reach.div_ceil(s_q) * s_q
    };
    let prepared = prepare_cloud(&cloud, &config, required_margin.max(1), c_in, args.seed)?;
    let spec = prepared.spec;

    // mimic a mid-network layer: restrict inputs to the s_p lattice
    let depth = s_p.trailing_zeros();
    let (inputs, features) = if depth == 0 {
        (prepared.packed, prepared.features)
    } else {
        let inputs = downsample(&prepared.packed, &spec, depth)?;
        let f = FeatureMatrix::seeded(inputs.len(), c_in, args.seed ^ 0x5eed);
        (inputs, f)
    };
    let outputs = if args.stride == 1 {
        inputs.clone()
    } else {
        downsample(&inputs, &spec, depth + 1)?
    };

    let offsets = enumerate_offsets(k, s_p)?;
    let groups = group_offsets(&offsets, k);
    let max = l1_norm_max(k, s_p);
    let t = match args.dataflow.as_str() {
        "os" => max + 1,
        "ws" => 0,
        "hybrid" => args
            .t
            .ok_or_else(|| CliError::Usage("--dataflow hybrid requires --t".into()))?,
        "auto" => {
            let mut tuner = Tuner::new();
            let layer = voxelconv::network::NetworkLayer {
                spec: voxelconv::network::LayerSpec {
                    k,
                    s_l: args.stride,
                    c_in,
                    c_out,
                    policy: voxelconv::network::DataflowPolicy::Auto,
                },
                layer_id: 0,
                m: depth,
                s_p,
                s_q,
            };
            tuner.threshold_for(&layer, std::slice::from_ref(&inputs), &spec, args.seed)?
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown dataflow `{other}` (os|ws|hybrid|auto)"
            )))
        }
    };
    let plan = DataflowPlan::from_threshold(&offsets, s_p, t)?;
    let weights = WeightTensor::seeded(offsets.len(), c_in, c_out, args.seed ^ 0x0ff5e7);
    let opts = if args.deterministic {
        ComputeOptions::default()
    } else {
        ComputeOptions::benchmark()
    };

    let builders: Vec<&str> = match args.builder.as_str() {
        "zdelta" => vec!["zdelta"],
        "bsearch" => vec!["bsearch"],
        "both" => vec!["zdelta", "bsearch"],
        other => {
            return Err(CliError::Usage(format!(
                "unknown builder `{other}` (zdelta|bsearch|both)"
            )))
        }
    };

    let mut runs = Vec::new();
    let mut zdelta_map: Option<KernelMap> = None;
    for builder in builders {
        let build = |stats_out: &mut SearchStats| -> Result<KernelMap, CliError> {
            let (map, stats) = if builder == "zdelta" {
                build_kmap_zdelta(&inputs, &outputs, &offsets, &groups, &spec, &plan)?
            } else {
                build_kmap_bsearch(&inputs, &outputs, &offsets, &spec, &plan)?
            };
            *stats_out = stats;
            Ok(map)
        };
        // one warm-up plus five timed runs; report per-phase medians
        let mut stats = SearchStats::default();
        let _ = post_process(build(&mut stats)?, &plan)?;
        let mut build_ns = Vec::new();
        let mut post_ns = Vec::new();
        let mut feature_ns = Vec::new();
        let mut final_map = None;
        for _ in 0..timing::TIMED_RUNS {
            let (raw, b) = timing::time_once(|| build(&mut stats));
            let raw = raw?;
            let (map, p) = timing::time_once(|| post_process(raw, &plan));
            let map = map?;
            let (out, f) = timing::time_once(|| compute(&map, &features, &weights, &opts));
            let _ = out?;
            build_ns.push(b);
            post_ns.push(p);
            feature_ns.push(f);
            final_map = Some(map);
        }
        build_ns.sort_unstable();
        post_ns.sort_unstable();
        feature_ns.sort_unstable();
        let mid = (timing::TIMED_RUNS - 1) / 2;
        let map = final_map.unwrap();

        let verified = if args.verify {
            let truth = build_kmap_bruteforce(&inputs, &outputs, &offsets, &spec)?;
            let maps_ok = map.same_mappings(&truth);
            let inputs_tri: Vec<_> = inputs
                .iter()
                .map(|p| voxelconv::coords::unpack(*p, &spec))
                .collect();
            let outputs_tri: Vec<_> = outputs
                .iter()
                .map(|p| voxelconv::coords::unpack(*p, &spec))
                .collect();
            let reference =
                eval_eq2_direct(&inputs_tri, &outputs_tri, &offsets, &features, &weights)?;
            let engine = compute(&map, &features, &weights, &opts)?;
            let rel = worst_rel(&engine.data, &reference.data);
            let feats_ok = rel <= 1e-4;
            if !maps_ok || !feats_ok {
                return Err(CliError::Verification(format!(
                    "{builder}: kernel map {} brute force, features rel err {rel:.2e}",
                    if maps_ok { "matches" } else { "differs from" }
                )));
            }
            Some(true)
        } else {
            None
        };

        runs.push(BuilderRun {
            builder: builder.to_string(),
            dataflow: args.dataflow.clone(),
            t_selected: t,
            kdense: plan.k_dense(),
            ksparse: plan.k_sparse(),
            map_build_ns: build_ns[mid],
            post_ns: post_ns[mid],
            feature_ns: feature_ns[mid],
            bsearch_count: stats.binary_search_count,
            probe_count: stats.probe_count,
            map_checksum: format!("{:016x}", map.checksum()),
            map_bytes: map.heap_bytes(),
            n_out: map.n_out,
            verified,
        });
        if builder == "zdelta" {
            zdelta_map = Some(map);
        }
    }

    let zdelta_map = match zdelta_map {
        Some(m) => m,
        None => build_kmap_zdelta(&inputs, &outputs, &offsets, &groups, &spec, &plan)?.0,
    };
    let density = analyze_density(&zdelta_map.counts, k, s_p, outputs.len())?;

    if let Some(path) = &args.dump_kmap {
        std::fs::write(path, zdelta_map.dump(&offsets))
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    }

    let report = LayerBenchReport {
        schema_version: REPORT_SCHEMA_VERSION,
        command: "bench-layer".into(),
        seed: args.seed,
        threads,
        cloud: CloudInfo {
            path: args.cloud.display().to_string(),
            points: prepared.raw_points,
            voxels: inputs.len(),
        },
        layer: LayerInfo {
            k,
            s_l: args.stride,
            s_p,
            c_in,
            c_out,
        },
        runs,
        density,
    };
    if args.human {
        print_layer_table(&report);
    }
    emit_report(&report, &args.report)
}

fn print_layer_table(report: &LayerBenchReport) {
    eprintln!(
        "layer C_in={} C_out={} K={} s_l={} s_p={} on {} voxels",
        report.layer.c_in,
        report.layer.c_out,
        report.layer.k,
        report.layer.s_l,
        report.layer.s_p,
        report.cloud.voxels
    );
    eprintln!(
        "{:<8} {:>12} {:>10} {:>12} {:>14} {:>12}",
        "builder", "build_ms", "post_ms", "feature_ms", "bsearches", "probes"
    );
    for run in &report.runs {
        eprintln!(
            "{:<8} {:>12.3} {:>10.3} {:>12.3} {:>14} {:>12}",
            run.builder,
            run.map_build_ns as f64 / 1e6,
            run.post_ns as f64 / 1e6,
            run.feature_ns as f64 / 1e6,
            run.bsearch_count,
            run.probe_count
        );
    }
    eprintln!("density by L1 norm:");
    for row in &report.density.by_l1 {
        eprintln!(
            "  l1={:<3} offsets={:<4} density={:.4}",
            row.l1, row.offsets, row.density
        );
    }
}

#[derive(Serialize)]
struct NetworkBenchReport {
    schema_version: u32,
    command: String,
    seed: u64,
    threads: usize,
    cloud: CloudInfo,
    layers: usize,
    modes: Vec<RunReport>,
    checksums_match: Option<bool>,
    indexing_ratio: Option<f64>,
}

fn cmd_bench_network(args: BenchNetworkArgs, threads: usize) -> Result<(), CliError> {
    let config = load_config(&args.config)?;
    let cloud = io::read_cloud(&args.cloud)?;
    let layer_specs = io::read_network_spec(&args.network)?;
    if layer_specs.is_empty() {
        return Err(CliError::Usage("network spec has no layers".into()));
    }
    let net = NetworkSpec::from_layers(layer_specs)?;
    let c_in = net.layers[0].spec.c_in;
    let prepared = prepare_cloud(&cloud, &config, net.required_margin(), c_in, args.seed)?;
    let spec = prepared.spec;
    let v0 = prepared.packed;
    let f0 = prepared.features;

    let plans = plan_network(&net, &v0, &spec, args.seed)?;
    let weights: Vec<WeightTensor> = net
        .layers
        .iter()
        .map(|l| {
            WeightTensor::seeded(
                (l.spec.k * l.spec.k * l.spec.k) as usize,
                l.spec.c_in,
                l.spec.c_out,
                args.seed ^ (0xbeef + l.layer_id as u64),
            )
        })
        .collect();

    if args.verify {
        let indexed = index_network(&net, &v0, &spec, &plans, IndexingMode::NetworkWide)?;
        for (layer, built) in net.layers.iter().zip(&indexed.layers) {
            let offsets = enumerate_offsets(layer.spec.k, layer.s_p)?;
            let truth = build_kmap_bruteforce(
                &indexed.levels[layer.m as usize],
                &indexed.levels[layer.m_out() as usize],
                &offsets,
                &spec,
            )?;
            if !built.map.same_mappings(&truth) {
                return Err(CliError::Verification(format!(
                    "layer {} kernel map differs from brute force",
                    layer.layer_id
                )));
            }
        }
    }

    let modes: Vec<IndexingMode> = match args.mode.as_str() {
        "sequential" => vec![IndexingMode::Sequential],
        "network-wide" => vec![IndexingMode::NetworkWide],
        "both" => vec![IndexingMode::Sequential, IndexingMode::NetworkWide],
        other => {
            return Err(CliError::Usage(format!(
                "unknown mode `{other}` (sequential|network-wide|both)"
            )))
        }
    };
    let compute_opts = if args.deterministic {
        ComputeOptions::default()
    } else {
        ComputeOptions::benchmark()
    };
    let mut reports = Vec::new();
    for mode in &modes {
        let opts = RunOptions {
            mode: *mode,
            compute: compute_opts,
            seed: args.seed,
        };
        let (_, report) = run_network(&net, &v0, &f0, &weights, &spec, &plans, &opts)?;
        reports.push(report);
    }
    let checksums_match = (reports.len() == 2).then(|| {
        reports[0]
            .layers
            .iter()
            .zip(&reports[1].layers)
            .all(|(a, b)| a.map_checksum == b.map_checksum)
    });
    if checksums_match == Some(false) {
        return Err(CliError::Verification(
            "kernel map checksums differ between indexing modes".into(),
        ));
    }
    let indexing_ratio = (reports.len() == 2)
        .then(|| reports[1].indexing_wall_ns as f64 / reports[0].indexing_wall_ns.max(1) as f64);
    let report = NetworkBenchReport {
        schema_version: REPORT_SCHEMA_VERSION,
        command: "bench-network".into(),
        seed: args.seed,
        threads,
        cloud: CloudInfo {
            path: args.cloud.display().to_string(),
            points: prepared.raw_points,
            voxels: v0.len(),
        },
        layers: net.layers.len(),
        modes: reports,
        checksums_match,
        indexing_ratio,
    };
    if args.human {
        for mode in &report.modes {
            eprintln!(
                "{}: indexing {:.3}ms, features {:.3}ms, maps {:.1} MiB",
                mode.mode,
                mode.indexing_wall_ns as f64 / 1e6,
                mode.feature_total_ns as f64 / 1e6,
                mode.total_map_bytes as f64 / (1 << 20) as f64
            );
        }
        if let Some(ratio) = report.indexing_ratio {
            eprintln!("network-wide / sequential indexing: {ratio:.3}");
        }
    }
    emit_report(&report, &args.report)
}

#[derive(Serialize)]
struct DensityReport {
    schema_version: u32,
    command: String,
    k: u32,
    clouds: Vec<CloudDensity>,
}

#[derive(Serialize)]
struct CloudDensity {
    path: String,
    voxels: usize,
    profile: DensityProfile,
}

fn cmd_profile_density(args: ProfileArgs) -> Result<(), CliError> {
    if args.k == 0 || args.k.is_multiple_of(2) {
        return Err(CliError::Usage(format!(
            "kernel size {} must be odd",
            args.k
        )));
    }
    let config = load_config(&args.config)?;
    let mut clouds = Vec::new();
    let mut csv = String::from("cloud,l1,density\n");
    for path in &args.cloud {
        let cloud = io::read_cloud(path)?;
        let prepared = prepare_cloud(&cloud, &config, (args.k - 1) / 2, 1, 0)?;
        let spec = prepared.spec;
        let packed = prepared.packed;
        let offsets = enumerate_offsets(args.k, 1)?;
        let groups = group_offsets(&offsets, args.k);
        let plan = DataflowPlan::full_weight_stationary(&offsets, 1)?;
        let (map, _) = build_kmap_zdelta(&packed, &packed, &offsets, &groups, &spec, &plan)?;
        let profile = analyze_density(&map.counts, args.k, 1, packed.len())?;
        for row in &profile.by_l1 {
            csv.push_str(&format!("{},{},{}\n", path.display(), row.l1, row.density));
        }
        if args.human {
            eprintln!("{} ({} voxels):", path.display(), packed.len());
            for row in &profile.by_l1 {
                eprintln!(
                    "  l1={:<3} offsets={:<4} density={:.4}",
                    row.l1, row.offsets, row.density
                );
            }
        }
        clouds.push(CloudDensity {
            path: path.display().to_string(),
            voxels: packed.len(),
            profile,
        });
    }
    if let Some(path) = &args.csv {
        std::fs::write(path, csv.as_bytes())
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    }
    let report = DensityReport {
        schema_version: REPORT_SCHEMA_VERSION,
        command: "profile-density".into(),
        k: args.k,
        clouds,
    };
    emit_report(&report, &args.report)
}
