use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use synthtumor_core::benchgrid::{build_grid, evaluate_grid, Dimension, GridManifest, GridOptions, GridScan, LevelScheme};
use synthtumor_core::metrics::{detect, DEFAULT_MIN_OVERLAP, seg_scores, summarize_detection, DetectionReport, DetectionSummary, SegScores};
use synthtumor_core::rng::stream;
use synthtumor_core::vessels::{estimate_parenchyma_stats, segment_vessels};
use synthtumor_core::volgrid::{load_labels, load_scalar, save_labels, save_nifti, TUMOR};
use synthtumor_core::{Error, GenConfig, PresetName, ScanContext, TumorSpec};
use synthtumor_server::{AppState, BundleKey, ServerConfig};

#[derive(Parser)]
#[command(name = "synthtumor", version, about = "Procedural liver tumor synthesis for CT volumes")]
struct Cli {
    /// Generator config (TOML). Defaults to the built-in settings.
    #[arg(long, global = true, env = "SYNTHTUMOR_CONFIG")]
    config: Option<PathBuf>,

    /// Turn off mass effect and capsule, as used for training data.
    #[arg(long, global = true)]
    training: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment hepatic vessels inside a liver mask.
    Vessels {
        #[arg(long)]
        ct: PathBuf,
        #[arg(long)]
        liver: PathBuf,
        /// Output vessel mask (0/1 labels).
        #[arg(long)]
        out: PathBuf,
    },
    /// Implant synthetic tumors into a healthy scan.
    Synth(SynthArgs),
    /// Out-of-distribution benchmark grid.
    #[command(subcommand)]
    Grid(GridCommand),
    /// Score predicted label volumes against ground truth.
    Eval {
        /// Ground-truth label file, or directory of them.
        #[arg(long)]
        gt: PathBuf,
        /// Prediction file, or directory with matching file names.
        #[arg(long)]
        pred: PathBuf,
        /// Write the JSON report here as well as to stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Surface tolerance in mm.
        #[arg(long, default_value_t = 2.0)]
        tolerance: f64,
        /// Overlap fraction for a tumor to count as detected.
        #[arg(long, default_value_t = DEFAULT_MIN_OVERLAP)]
        overlap: f64,
    },
    /// Write an anonymized, shuffled reader-study bundle into a server data directory.
    TuringExport {
        /// JSON listing `real` and `synthetic` CT paths, a bundle `name` and a `seed`.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Preview cache budget in MiB.
        #[arg(long, default_value_t = 512)]
        preview_budget_mb: usize,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    ct: PathBuf,
    #[arg(long)]
    liver: PathBuf,
    #[arg(long, default_value = "mix")]
    preset: PresetName,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON list of tumor specs to implant instead of sampling a preset.
    #[arg(long, conflicts_with = "preset")]
    spec: Option<PathBuf>,
    #[arg(long)]
    out_ct: PathBuf,
    #[arg(long)]
    out_label: PathBuf,
    #[arg(long)]
    provenance: Option<PathBuf>,
}

#[derive(Subcommand)]
enum GridCommand {
    /// Generate every variant and the manifest.
    Build {
        /// Directory of CT volumes `<id>.nii[.gz]`.
        #[arg(long)]
        scans: PathBuf,
        /// Directory of liver masks with the same file names.
        #[arg(long)]
        livers: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Levels::Five)]
        levels: Levels,
        /// Subset of dimensions, comma separated.
        #[arg(long, value_delimiter = ',', value_enum)]
        dims: Option<Vec<DimArg>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads; 0 uses all cores.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Score predictions named `<variant id>.nii[.gz]`.
    Eval {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Levels {
    /// μ−2σ … μ+2σ.
    #[value(name = "5")]
    Five,
    /// μ±σ, μ±2σ, μ±3σ.
    #[value(name = "3")]
    Three,
}

#[derive(Clone, Copy, ValueEnum)]
enum DimArg {
    Shape,
    Size,
    Texture,
    Intensity,
    Location,
}

impl From<DimArg> for Dimension {
    fn from(d: DimArg) -> Self {
        match d {
            DimArg::Shape => Dimension::Shape,
            DimArg::Size => Dimension::Size,
            DimArg::Texture => Dimension::Texture,
            DimArg::Intensity => Dimension::Intensity,
            DimArg::Location => Dimension::Location,
        }
    }
}

/// Failure with a machine-readable kind.
struct Failure {
    kind: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { kind: e.kind(), message: e.to_string() }
    }
}

fn fail(kind: &'static str, message: impl Into<String>) -> Failure {
    Failure { kind, message: message.into() }
}

type CliResult<T = ()> = Result<T, Failure>;

fn resolve_config(cli: &Cli) -> CliResult<GenConfig> {
    let mut cfg = match &cli.config {
        Some(path) => GenConfig::load(path)?,
        None => GenConfig::default(),
    };
    if cli.training {
        cfg.mass_effect = false;
        cfg.capsule = false;
    }
    Ok(cfg)
}

fn announce(cfg: &GenConfig, seed: Option<u64>) {
    eprintln!("# resolved config");
    eprint!("{}", cfg.to_toml_string());
    match seed {
        Some(s) => eprintln!("# seed = {s}"),
        None => eprintln!("# seed = none"),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| fail("io", format!("io error on {}: {e}", path.display())))
}

fn ensure_parent(path: &Path) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| fail("io", format!("io error on {}: {e}", dir.display())))?;
    }
    Ok(())
}

fn nifti_stem(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    name.strip_suffix(".nii.gz").or_else(|| name.strip_suffix(".nii")).map(str::to_string)
}

fn nifti_files(dir: &Path) -> CliResult<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| fail("io", format!("io error on {}: {e}", dir.display())))?;
    let mut out = BTreeMap::new();
    for e in entries {
        let path = e.map_err(|e| fail("io", e.to_string()))?.path();
        if let Some(stem) = nifti_stem(&path) {
            out.insert(stem, path);
        }
    }
    Ok(out)
}

fn cmd_vessels(cfg: &GenConfig, ct: &Path, liver: &Path, out: &Path) -> CliResult {
    announce(cfg, None);
    let ct = load_scalar(ct)?;
    let liver = load_labels(liver)?;
    let stats = estimate_parenchyma_stats(&ct, &liver, cfg)?;
    let vessels = segment_vessels(&ct, &liver, &stats, cfg)?;
    ensure_parent(out)?;
    save_labels(&vessels.map(u8::from), out)?;
    let summary = serde_json::json!({ "stats": stats, "vessel_voxels": vessels.count_true() });
    println!("{}", serde_json::to_string_pretty(&summary).unwrap());
    Ok(())
}

fn cmd_synth(cfg: &GenConfig, a: &SynthArgs) -> CliResult {
    announce(cfg, Some(a.seed));
    let ct = load_scalar(&a.ct)?;
    let liver = load_labels(&a.liver)?;
    let id = nifti_stem(&a.ct).unwrap_or_else(|| "scan".into());
    let ctx = ScanContext::prepare(ct, liver, cfg)?.with_scan_id(id);
    let out = match &a.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| fail("io", format!("io error on {}: {e}", path.display())))?;
            let specs: Vec<TumorSpec> = serde_json::from_str(&text).map_err(|e| fail("format", format!("{}: {e}", path.display())))?;
            ctx.synthesize_with_spec(&specs, a.seed)?
        }
        None => ctx.synthesize(a.preset, a.seed)?,
    };
    ensure_parent(&a.out_ct)?;
    ensure_parent(&a.out_label)?;
    save_nifti(&out.ct, &a.out_ct)?;
    save_labels(&out.labels, &a.out_label)?;
    if let Some(p) = &a.provenance {
        ensure_parent(p)?;
        write_json(p, &out.provenance)?;
    }
    log::info!("{} tumors implanted, {} skipped", out.provenance.tumors.len(), out.provenance.skipped.len());
    Ok(())
}

fn cmd_grid(cfg: &GenConfig, cmd: &GridCommand) -> CliResult {
    match cmd {
        GridCommand::Build { scans, livers, out, levels, dims, seed, jobs } => {
            announce(cfg, Some(*seed));
            let livers = nifti_files(livers)?;
            let mut inputs = Vec::new();
            for (id, ct_path) in nifti_files(scans)? {
                let liver_path = livers.get(&id).ok_or_else(|| fail("argument", format!("no liver mask for scan {id}")))?;
                inputs.push(GridScan { ct: load_scalar(&ct_path)?, liver: load_labels(liver_path)?, id });
            }
            if inputs.is_empty() {
                return Err(fail("argument", format!("no NIfTI scans in {}", scans.display())));
            }
            let opts = GridOptions {
                scheme: match levels {
                    Levels::Five => LevelScheme::Graded5,
                    Levels::Three => LevelScheme::ThreeLevel,
                },
                dimensions: dims.as_ref().map_or(Dimension::ALL.to_vec(), |d| d.iter().map(|&x| x.into()).collect()),
                seed: *seed,
                jobs: *jobs,
            };
            let m = build_grid(&inputs, cfg, &opts, Some(out))?;
            eprintln!("{} variants over {} scans written to {}", m.variants().count(), m.scans.len(), out.display());
            Ok(())
        }
        GridCommand::Eval { grid, pred, report } => {
            announce(cfg, None);
            let m = GridManifest::load(grid.join("manifest.json"))?;
            let e = evaluate_grid(&m, grid, pred)?;
            print!("{}", e.to_table());
            if let Some(p) = report {
                ensure_parent(p)?;
                write_json(p, &e)?;
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct EvalCase {
    case: String,
    scores: SegScores,
    detection: DetectionReport,
}

#[derive(Serialize)]
struct EvalReport {
    cases: Vec<EvalCase>,
    mean_dsc: f64,
    mean_nsd: f64,
    detection: DetectionSummary,
}

fn cmd_eval(cfg: &GenConfig, gt: &Path, pred: &Path, report: Option<&Path>, tolerance: f64, overlap: f64) -> CliResult {
    announce(cfg, None);
    let pairs: Vec<(String, PathBuf, PathBuf)> = if gt.is_dir() {
        let preds = nifti_files(pred)?;
        let gts = nifti_files(gt)?;
        let missing: Vec<&String> = gts.keys().filter(|k| !preds.contains_key(*k)).collect();
        if !missing.is_empty() {
            let names: Vec<&str> = missing.iter().map(|s| s.as_str()).collect();
            return Err(fail("evaluation", format!("missing predictions for {}", names.join(", "))));
        }
        gts.into_iter().map(|(k, g)| (k.clone(), g, preds[&k].clone())).collect()
    } else {
        vec![(nifti_stem(gt).unwrap_or_default(), gt.to_path_buf(), pred.to_path_buf())]
    };
    let mut cases = Vec::new();
    for (case, g, p) in pairs {
        let (g, p) = (load_labels(&g)?, load_labels(&p)?);
        let scores = seg_scores(&g.mask_of(TUMOR), &p.mask_of(TUMOR), tolerance)?;
        let detection = detect(&g, &p, overlap)?;
        cases.push(EvalCase { case, scores, detection });
    }
    let n = cases.len() as f64;
    let reports: Vec<DetectionReport> = cases.iter().map(|c| c.detection.clone()).collect();
    let r = EvalReport {
        mean_dsc: cases.iter().map(|c| c.scores.dsc).sum::<f64>() / n,
        mean_nsd: cases.iter().map(|c| c.scores.nsd).sum::<f64>() / n,
        detection: summarize_detection(&reports),
        cases,
    };
    println!("{}", serde_json::to_string_pretty(&r).unwrap());
    if let Some(p) = report {
        ensure_parent(p)?;
        write_json(p, &r)?;
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportManifest {
    name: String,
    #[serde(default)]
    seed: u64,
    real: Vec<PathBuf>,
    synthetic: Vec<PathBuf>,
}

fn cmd_turing_export(cfg: &GenConfig, manifest: &Path, out_dir: &Path) -> CliResult {
    let text = std::fs::read_to_string(manifest).map_err(|e| fail("io", format!("io error on {}: {e}", manifest.display())))?;
    let m: ExportManifest = serde_json::from_str(&text).map_err(|e| fail("format", format!("{}: {e}", manifest.display())))?;
    announce(cfg, Some(m.seed));
    if m.name.is_empty() || !m.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(fail("argument", format!("bundle name {:?} must be alphanumeric, '-' or '_'", m.name)));
    }
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut items: Vec<(PathBuf, synthtumor_server::session::Truth)> = m
        .real
        .iter()
        .map(|p| (base.join(p), synthtumor_server::session::Truth::Real))
        .chain(m.synthetic.iter().map(|p| (base.join(p), synthtumor_server::session::Truth::Synthetic)))
        .collect();
    items.shuffle(&mut stream(m.seed, 0));

    let scans_dir = out_dir.join("scans");
    let bundles_dir = out_dir.join("bundles");
    for d in [&scans_dir, &bundles_dir] {
        std::fs::create_dir_all(d).map_err(|e| fail("io", format!("io error on {}: {e}", d.display())))?;
    }
    let mut key = Vec::new();
    for (i, (path, truth)) in items.iter().enumerate() {
        let id = format!("{}-{:03}", m.name, i + 1);
        // Re-encoding keeps only geometry and voxels, dropping any
        // identifying header text.
        let ct = load_scalar(path)?;
        save_nifti(&ct, scans_dir.join(format!("{id}.nii.gz")))?;
        key.push(synthtumor_server::session::SessionScan { scan_id: id, truth: *truth });
    }
    write_json(&bundles_dir.join(format!("{}.json", m.name)), &BundleKey { scans: key })?;
    eprintln!("{} scans exported as bundle {}", items.len(), m.name);
    Ok(())
}

fn cmd_serve(cfg: &GenConfig, host: &str, port: u16, data_dir: &Path, budget_mb: usize) -> CliResult {
    announce(cfg, None);
    let addr: SocketAddr = format!("{host}:{port}").parse().map_err(|e| fail("argument", format!("bad address {host}:{port}: {e}")))?;
    if !data_dir.is_dir() {
        return Err(fail("io", format!("io error on {}: not a directory", data_dir.display())));
    }
    let state = AppState::open(ServerConfig {
        data_dir: data_dir.to_path_buf(),
        preview_budget_bytes: budget_mb << 20,
        gen: cfg.clone(),
    })
    .map_err(|e| fail("server", e.to_string()))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| fail("io", e.to_string()))?;
    rt.block_on(synthtumor_server::serve(addr, state)).map_err(|e| fail("io", format!("{addr}: {e}")))
}

fn run(cli: &Cli) -> CliResult {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Vessels { ct, liver, out } => cmd_vessels(&cfg, ct, liver, out),
        Command::Synth(a) => cmd_synth(&cfg, a),
        Command::Grid(g) => cmd_grid(&cfg, g),
        Command::Eval { gt, pred, report, tolerance, overlap } => cmd_eval(&cfg, gt, pred, report.as_deref(), *tolerance, *overlap),
        Command::TuringExport { manifest, out_dir } => cmd_turing_export(&cfg, manifest, out_dir),
        Command::Serve { port, data_dir, host, preview_budget_mb } => cmd_serve(&cfg, host, *port, data_dir, *preview_budget_mb),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}: {}", f.kind, f.message.replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
