use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use affordance_core::agglomerate::{agglomerate, AgglomeratedDescriptor, AgglomerationMode};
use affordance_core::cloud::{read_cloud, write_cloud, CloudFormat, PointCloud, SpatialIndex};
use affordance_core::config::PipelineConfig;
use affordance_core::container::{load_descriptor, manifest, save_descriptor, DescriptorFile};
use affordance_core::detect::{
    benchmark, detect_scene, overlay_cloud, sample_test_points, test_point_count, write_detections_csv, Pipeline,
    TestPoints,
};
use affordance_core::eval::{
    fit_bradley_terry, icp_score, precision_recall, read_judgments, read_predictions, Source,
};
use affordance_core::saliency::{
    backproject, fallback_saliency, load_saliency, optimize_descriptor, single_variant, write_saliency,
    FallbackStatus, Keep,
};
use affordance_core::tensor::{build_descriptor, AffordanceDescriptor, InteractionExample, SamplingScheme};
use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use nalgebra::{Isometry3, Vector3};

/// Multi-affordance detection on 3D pointclouds.
#[derive(Parser, Debug)]
#[command(name = "affordance", version)]
struct Cli {
    /// TOML pipeline config; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a single-affordance descriptor from an object/scene pair
    Build(BuildArgs),
    /// Merge single descriptors into one agglomerated descriptor
    Agglomerate(AgglomerateArgs),
    /// Prune a descriptor to the cells salient points project onto
    SaliencyApply(SaliencyArgs),
    /// Detect affordances at sampled points of a scene
    Detect(DetectArgs),
    /// Time agglomerated against sequential single-descriptor queries
    Bench(BenchArgs),
    /// Precision/recall of predictions against reference predictions
    EvalPr(EvalPrArgs),
    /// Fit a Bradley-Terry ranking to pairwise judgments
    EvalBt(EvalBtArgs),
    /// Align a candidate cloud to a template with ICP
    EvalIcp(EvalIcpArgs),
}

#[derive(Args, Debug)]
struct BuildArgs {
    /// query object cloud
    #[arg(long)]
    object: PathBuf,
    /// scene patch cloud
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    affordance_id: u32,
    #[arg(long)]
    label: String,
    /// object pose in the scene as tx,ty,tz,rx,ry,rz (meters, axis-angle radians)
    #[arg(long, value_parser = parse_floats::<6>, allow_hyphen_values = true)]
    pose: Option<[f64; 6]>,
    /// descriptor anchor as x,y,z; defaults to the scene point nearest the placed object's centroid
    #[arg(long, value_parser = parse_floats::<3>, allow_hyphen_values = true)]
    anchor: Option<[f64; 3]>,
    #[arg(long)]
    keypoints: Option<usize>,
    #[arg(long)]
    scheme: Option<SamplingScheme>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct AgglomerateArgs {
    /// single descriptor files
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    cell_size_m: Option<f64>,
    #[arg(long)]
    mode: Option<AgglomerationMode>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct SaliencyArgs {
    /// one agglomerated descriptor, or single descriptors with --per-affordance
    #[arg(long = "descriptor", required = true)]
    descriptors: Vec<PathBuf>,
    /// salient-point file
    #[arg(long, conflicts_with = "fallback_scene")]
    saliency: Option<PathBuf>,
    /// derive salient points from detections on these scenes instead
    #[arg(long)]
    fallback_scene: Vec<PathBuf>,
    /// also write the fallback salient points here
    #[arg(long)]
    export_saliency: Option<PathBuf>,
    #[arg(long, conflicts_with_all = ["keep_fraction", "keep_mass"])]
    keep_count: Option<usize>,
    #[arg(long, conflicts_with = "keep_mass")]
    keep_fraction: Option<f64>,
    #[arg(long)]
    keep_mass: Option<f64>,
    #[arg(long)]
    weighted: bool,
    #[arg(long)]
    per_affordance: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct SamplingArgs {
    /// number of test points
    #[arg(long, conflicts_with = "density")]
    test_points: Option<usize>,
    /// test points per square meter of scene footprint
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[arg(long)]
    descriptor: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    pipeline: Option<PipelineArg>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    search_half_width_m: Option<f64>,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// also write the top detections' objects, posed, as one cloud
    #[arg(long)]
    overlay: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    overlay_limit: usize,
    /// CSV output; stdout if omitted
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
enum PipelineArg {
    Agglomeration,
    Saliency,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// agglomerated descriptor
    #[arg(long)]
    descriptor: PathBuf,
    /// the single descriptors it was built from
    #[arg(long = "single", required = true)]
    singles: Vec<PathBuf>,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 100)]
    test_points: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalPrArgs {
    /// predictions CSV (detect output works)
    #[arg(long)]
    pred: PathBuf,
    /// reference predictions CSV
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    match_radius_m: Option<f64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalBtArgs {
    /// CSV with option_a, option_b, winner
    #[arg(long)]
    judgments: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalIcpArgs {
    #[arg(long)]
    template: PathBuf,
    #[arg(long)]
    candidate: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn parse_floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected {N} comma-separated numbers, got {}", v.len()))
}

enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(msg.into()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failure::Usage(e))) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Ok(Err(Failure::Data(e))) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(_) => {
            eprintln!("internal error");
            ExitCode::from(3)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            PipelineConfig::from_toml(&text).map_err(|e| usage(format!("{}: {e}", p.display())))
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let mut config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Build(a) => build(&mut config, a),
        Command::Agglomerate(a) => agglomerate_cmd(&mut config, a),
        Command::SaliencyApply(a) => saliency_apply(&mut config, a),
        Command::Detect(a) => detect(&mut config, a),
        Command::Bench(a) => bench(&mut config, a),
        Command::EvalPr(a) => eval_pr(&mut config, a),
        Command::EvalBt(a) => eval_bt(&config, a),
        Command::EvalIcp(a) => eval_icp(&config, a),
    }
}

/// Resolved config plus the command that produced an artifact.
fn provenance(command: &str, config: &PipelineConfig) -> String {
    format!("# affordance {} {command}\n{}", env!("CARGO_PKG_VERSION"), config.to_toml())
}

fn checked(config: &PipelineConfig) -> Outcome {
    config.validate().map_err(|e| usage(e.to_string()))
}

fn cloud(path: &Path) -> Result<PointCloud, Failure> {
    Ok(read_cloud(path).with_context(|| format!("reading {}", path.display()))?)
}

fn descriptor_file(path: &Path) -> Result<DescriptorFile, Failure> {
    Ok(load_descriptor(path).with_context(|| format!("reading {}", path.display()))?.0)
}

fn single(path: &Path) -> Result<AffordanceDescriptor, Failure> {
    match descriptor_file(path)? {
        DescriptorFile::Single(d) => Ok(d),
        DescriptorFile::Agglomerated(_) => Err(usage(format!("{} is not a single descriptor", path.display()))),
    }
}

/// Any descriptor as an agglomerated one; singles are wrapped cell per keypoint.
fn any_agglomerated(path: &Path) -> Result<AgglomeratedDescriptor, Failure> {
    Ok(match descriptor_file(path)? {
        DescriptorFile::Single(d) => AgglomeratedDescriptor::from_single(&d),
        DescriptorFile::Agglomerated(a) => a,
    })
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn comment(out: &mut dyn Write, text: &str) -> io::Result<()> {
    for line in text.lines() {
        writeln!(out, "# {}", line.trim_start_matches("# "))?;
    }
    Ok(())
}

fn scene_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| "scene".into(), |s| s.to_string_lossy().into_owned())
}

fn build(config: &mut PipelineConfig, a: BuildArgs) -> Outcome {
    if let Some(n) = a.keypoints {
        config.build.keypoints_per_orientation = n;
    }
    if let Some(s) = a.scheme {
        config.build.sampling_scheme = s;
    }
    if let Some(s) = a.seed {
        config.build.seed = s;
    }
    checked(config)?;
    let pose = a.pose.map_or(Isometry3::identity(), |p| {
        Isometry3::new(Vector3::new(p[0], p[1], p[2]), Vector3::new(p[3], p[4], p[5]))
    });
    let mut example = InteractionExample::new(a.affordance_id, a.label, cloud(&a.object)?, cloud(&a.scene)?, pose);
    if let Some(p) = a.anchor {
        example = example.with_anchor(Vector3::from(p));
    }
    let out = build_descriptor(&example, &config.build_params())?;
    if out.bisector_shortfall {
        log::warn!("bisector returned fewer samples than requested");
    }
    let n = out.descriptor.keypoints.len();
    save_descriptor(&a.output, &DescriptorFile::Single(out.descriptor), &provenance("build", config))?;
    println!("descriptor: {n} keypoints ({} tensor samples)", out.tensor_size);
    Ok(())
}

fn agglomerate_cmd(config: &mut PipelineConfig, a: AgglomerateArgs) -> Outcome {
    if let Some(e) = a.cell_size_m {
        config.agglomerate.cell_size_m = e;
    }
    if let Some(m) = a.mode {
        config.agglomerate.mode = m;
    }
    checked(config)?;
    let singles = a.inputs.iter().map(|p| single(p)).collect::<Result<Vec<_>, _>>()?;
    let agg = agglomerate(&singles, config.agglomerate.cell_size_m, config.agglomerate.mode)?;
    save_descriptor(&a.output, &DescriptorFile::Agglomerated(agg.clone()), &provenance("agglomerate", config))?;
    print!("{}", manifest(&agg));
    Ok(())
}

fn saliency_apply(config: &mut PipelineConfig, a: SaliencyArgs) -> Outcome {
    if let Some(n) = a.keep_count {
        config.saliency.keep = Keep::Count(n);
    }
    if let Some(f) = a.keep_fraction {
        config.saliency.keep = Keep::Fraction(f);
    }
    if let Some(f) = a.keep_mass {
        config.saliency.keep = Keep::Mass(f);
    }
    config.saliency.weighted |= a.weighted;
    config.saliency.per_affordance |= a.per_affordance;
    checked(config)?;
    if a.saliency.is_none() && a.fallback_scene.is_empty() {
        return Err(usage("give --saliency or at least one --fallback-scene"));
    }
    let (singles, agg) = if config.saliency.per_affordance {
        let singles = a.descriptors.iter().map(|p| single(p)).collect::<Result<Vec<_>, _>>()?;
        let agg = agglomerate(&singles, config.agglomerate.cell_size_m, config.agglomerate.mode)?;
        (singles, agg)
    } else {
        let [path] = a.descriptors.as_slice() else {
            return Err(usage("without --per-affordance, give exactly one --descriptor"));
        };
        (Vec::new(), any_agglomerated(path)?)
    };
    let records = match &a.saliency {
        Some(path) => {
            let loaded = load_saliency(path, &agg.affordance_ids())?;
            if !loaded.rejected.is_empty() {
                eprintln!("{} saliency records rejected", loaded.rejected.len());
            }
            loaded.records
        }
        None => {
            let detector = config.detector_config();
            let mut records = Vec::new();
            for path in &a.fallback_scene {
                let scene = cloud(path)?;
                let index = SpatialIndex::from_cloud(&scene);
                let ids = sample_test_points(&scene, test_point_count(&scene, detector.test_points), detector.seed);
                let name = scene_name(path);
                let f = fallback_saliency(
                    &name,
                    &index,
                    &agg,
                    &ids,
                    detector.threshold,
                    config.saliency.fallback_top_fraction,
                );
                match f.status {
                    FallbackStatus::Found => records.push(f.record),
                    FallbackStatus::NoDetections => eprintln!("{name}: no detections, no salient points"),
                }
            }
            if let Some(p) = &a.export_saliency {
                write_saliency(output(Some(p))?, &records)?;
            }
            records
        }
    };
    if records.iter().all(|r| r.points.is_empty()) {
        return Err(Failure::Data(anyhow!("no salient points to project")));
    }
    let optimized = if config.saliency.per_affordance {
        single_variant(
            &singles,
            &records,
            config.saliency.keep,
            config.agglomerate.cell_size_m,
            config.agglomerate.mode,
        )?
    } else {
        let tally = backproject(&records, &agg, config.saliency.weighted);
        optimize_descriptor(&agg, &tally, config.saliency.keep)?
    };
    println!(
        "{} records; cells {} -> {}; keypoints {} -> {}",
        records.len(),
        agg.cells.len(),
        optimized.cells.len(),
        agg.keypoint_count(),
        optimized.keypoint_count()
    );
    save_descriptor(&a.output, &DescriptorFile::Agglomerated(optimized), &provenance("saliency-apply", config))?;
    Ok(())
}

fn apply_sampling(config: &mut PipelineConfig, s: &SamplingArgs) {
    if let Some(n) = s.test_points {
        config.detect.test_points = TestPoints::Count(n);
    }
    if let Some(d) = s.density {
        config.detect.test_points = TestPoints::PerSquareMeter(d);
    }
    if let Some(seed) = s.seed {
        config.detect.seed = seed;
    }
}

fn detect(config: &mut PipelineConfig, a: DetectArgs) -> Outcome {
    if let Some(p) = a.pipeline {
        config.detect.pipeline = match p {
            PipelineArg::Agglomeration => Pipeline::Agglomeration,
            PipelineArg::Saliency => Pipeline::Saliency,
        };
    }
    if a.threshold.is_some() {
        config.detect.threshold = a.threshold;
    }
    if a.search_half_width_m.is_some() {
        config.detect.search_half_width_m = a.search_half_width_m;
    }
    apply_sampling(config, &a.sampling);
    checked(config)?;
    let agg = any_agglomerated(&a.descriptor)?;
    let scene = cloud(&a.scene)?;
    let detections = detect_scene(&scene, &agg, &config.detector_config());
    let mut out = output(a.output.as_deref())?;
    write_detections_csv(&mut out, &scene_name(&a.scene), &detections, &agg, &provenance("detect", config))?;
    out.flush()?;
    if let Some(p) = &a.overlay {
        let format = match CloudFormat::detect(p) {
            Ok(f) => f,
            Err(_) if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pcd")) => CloudFormat::PcdAscii,
            Err(_) => CloudFormat::PlyBinaryLe,
        };
        write_cloud(&overlay_cloud(&detections, &agg, a.overlay_limit), p, format)?;
    }
    if a.output.is_some() {
        eprintln!("{} detections", detections.len());
    }
    Ok(())
}

fn bench(config: &mut PipelineConfig, a: BenchArgs) -> Outcome {
    if let Some(s) = a.seed {
        config.detect.seed = s;
    }
    config.detect.test_points = TestPoints::Count(a.test_points);
    checked(config)?;
    let agg = any_agglomerated(&a.descriptor)?;
    let singles = a.singles.iter().map(|p| single(p)).collect::<Result<Vec<_>, _>>()?;
    let scene = cloud(&a.scene)?;
    let index = SpatialIndex::from_cloud(&scene);
    let ids = sample_test_points(&scene, a.test_points, config.detect.seed);
    let report = benchmark(&index, &ids, &agg, &singles)?;
    let mut out = output(a.output.as_deref())?;
    comment(&mut out, &provenance("bench", config))?;
    write!(out, "{}", report.to_text())?;
    out.flush()?;
    Ok(())
}

fn eval_pr(config: &mut PipelineConfig, a: EvalPrArgs) -> Outcome {
    if a.match_radius_m.is_some() {
        config.eval.match_radius_m = a.match_radius_m;
    }
    checked(config)?;
    let open = |p: &Path| fs::File::open(p).with_context(|| format!("reading {}", p.display()));
    let pred = read_predictions(open(&a.pred)?, "scene", Source::Multi)?;
    let truth = read_predictions(open(&a.truth)?, "scene", Source::SingleBaseline)?;
    let curve = precision_recall(&pred, &truth, config.match_radius())?;
    let mut out = output(a.output.as_deref())?;
    comment(&mut out, &provenance("eval-pr", config))?;
    writeln!(out, "# auc = {:.6}", curve.auc)?;
    curve.write_csv(&mut out)?;
    if a.output.is_some() {
        println!("AUC {:.6} over {} thresholds", curve.auc, curve.points.len());
    }
    Ok(())
}

fn eval_bt(config: &PipelineConfig, a: EvalBtArgs) -> Outcome {
    checked(config)?;
    let file = fs::File::open(&a.judgments).with_context(|| format!("reading {}", a.judgments.display()))?;
    let judgments = read_judgments(file)?;
    let ranking = fit_bradley_terry(&judgments, config.eval.bt_tolerance, config.eval.bt_max_iterations)?;
    let mut out = output(a.output.as_deref())?;
    comment(&mut out, &provenance("eval-bt", config))?;
    writeln!(
        out,
        "# log_likelihood = {:.6}, iterations = {}, converged = {}, regularized = {}, components = {}",
        ranking.log_likelihood,
        ranking.iterations,
        ranking.converged,
        ranking.regularized,
        ranking.components.len()
    )?;
    ranking.write_csv(&mut out)?;
    Ok(())
}

fn eval_icp(config: &PipelineConfig, a: EvalIcpArgs) -> Outcome {
    checked(config)?;
    let r = icp_score(&cloud(&a.template)?, &cloud(&a.candidate)?, &config.icp_params())?;
    let t = r.transform.translation.vector;
    let axis = r.transform.rotation.scaled_axis();
    let report = serde_json::json!({
        "translation_m": [t.x, t.y, t.z],
        "rotation_axis_angle_rad": [axis.x, axis.y, axis.z],
        "residual_m": r.residual,
        "score": r.score,
        "iterations": r.iterations,
        "converged": r.converged,
        "config": provenance("eval-icp", config),
    });
    let mut out = output(a.output.as_deref())?;
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(())
}
