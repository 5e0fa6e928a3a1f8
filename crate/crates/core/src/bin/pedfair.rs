//! `pedfair` command-line interface.
//!
//! Exit codes: 0 success, 1 `report-diff` found differences, 2 usage error,
//! 3 input could not be loaded, 4 invalid configuration or input, 5 output
//! could not be written.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pedfair::corpus::{self, AttributeKey};
use pedfair::darkness::{self, DarknessFactor};
use pedfair::matcher::IouThreshold;
use pedfair::model::{AttributePredicate, BodySize, Gender, GroupSpec, Lighting, PersonAttributes};
use pedfair::report::{self, CurationStep, GroupFamily, RunConfig};
use pedfair::synthgen::{self, DegradationConfig, GroupModifier, PedestrianProfile, Scenario};
use pedfair::{Error, ErrorKind};
use serde::{Deserialize, Serialize};

const EXIT_DIFFERENT: u8 = 1;
const EXIT_LOAD: u8 = 3;
const EXIT_VALIDATION: u8 = 4;
const EXIT_IO: u8 = 5;

#[derive(Parser)]
#[command(
    name = "pedfair",
    version,
    about = "Fairness audits for pedestrian detectors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Match detections, compute per-group metrics and disparities.
    Evaluate(EvaluateArgs),
    /// Apply curation steps to a ground-truth file.
    Curate(CurateArgs),
    /// Write ambient-darkness variants of a corpus and its images.
    Darken(DarkenArgs),
    /// Generate a synthetic corpus with degraded detections.
    Synth(SynthArgs),
    /// Compare two evaluation reports.
    ReportDiff(DiffArgs),
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    det: Option<PathBuf>,
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for report.json, report.txt and plot.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated IoU thresholds, e.g. 0.5,0.75.
    #[arg(long, value_delimiter = ',')]
    iou_ladder: Option<Vec<f64>>,
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args)]
struct CurateArgs {
    #[arg(long)]
    gt: PathBuf,
    /// Destination ground-truth file.
    #[arg(long)]
    out: PathBuf,
    /// Run configuration whose `curation` steps are applied.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Keep only images whose annotations agree on this attribute.
    #[arg(long)]
    single_attribute: Option<AttributeKey>,
    /// Comma-separated lighting values to keep.
    #[arg(long, value_delimiter = ',')]
    lighting: Option<Vec<String>>,
    /// Images to sample per attribute value.
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long, default_value = "skin_tone")]
    subsample_attribute: AttributeKey,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DarkenArgs {
    #[arg(long)]
    gt: PathBuf,
    /// Directory holding the images named in the ground truth.
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated factors; defaults to 0.0, 0.1, ..., 1.0.
    #[arg(long, value_delimiter = ',')]
    factors: Option<Vec<f64>>,
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic run description (JSON with `degradation` and `scenario`).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DiffArgs {
    left: PathBuf,
    right: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    tolerance: f64,
}

#[derive(Serialize, Deserialize)]
struct SynthConfig {
    degradation: DegradationConfig,
    scenario: Scenario,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Evaluate(args) => evaluate(args),
        Command::Curate(args) => curate(args),
        Command::Darken(args) => darken(args),
        Command::Synth(args) => synth(args),
        Command::ReportDiff(args) => report_diff(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Load => EXIT_LOAD,
                ErrorKind::Validation => EXIT_VALIDATION,
                ErrorKind::Io => EXIT_IO,
            })
        }
    }
}

fn required(path: Option<PathBuf>, flag: &str) -> pedfair::Result<PathBuf> {
    path.ok_or_else(|| Error::Config(format!("missing {flag}")))
}

fn evaluate(args: EvaluateArgs) -> pedfair::Result<u8> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(gt) = args.gt {
        config.ground_truth = Some(gt);
    }
    if let Some(det) = args.det {
        config.detections = Some(det);
    }
    if let Some(out) = args.out {
        config.output = Some(out);
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(epsilon) = args.epsilon {
        config.epsilon = epsilon;
    }
    if let Some(ladder) = args.iou_ladder {
        config.iou_ladder = ladder
            .into_iter()
            .map(IouThreshold::new)
            .collect::<pedfair::Result<_>>()?;
        if !config.iou_ladder.contains(&config.reporting_threshold) {
            config.reporting_threshold = config.iou_ladder[0];
        }
    }
    let gt = required(config.ground_truth.clone(), "--gt")?;
    let det = required(config.detections.clone(), "--det")?;
    let out = required(config.output.clone(), "--out")?;
    config.validate()?;

    let loaded = corpus::load(&gt, &det)?;
    let report = report::evaluate(
        &config,
        &loaded.corpus,
        &loaded.detections,
        loaded.diagnostics,
    )?;
    report::write_report(&report, &out)?;
    print!("{}", report::render_text(&report));
    Ok(0)
}

fn parse_lighting(values: &[String]) -> pedfair::Result<BTreeSet<Lighting>> {
    values
        .iter()
        .map(|v| {
            serde_json::from_value(serde_json::Value::String(v.clone()))
                .map_err(|_| Error::Config(format!("unknown lighting `{v}`")))
        })
        .collect()
}

fn curate(args: CurateArgs) -> pedfair::Result<u8> {
    let (config_steps, config_seed) = match &args.config {
        Some(path) => {
            let c = RunConfig::load(path)?;
            (c.curation, c.seed)
        }
        None => (Vec::new(), 0),
    };
    let mut steps = config_steps;
    if let Some(attribute) = args.single_attribute {
        steps.push(CurationStep::SingleAttribute { attribute });
    }
    if let Some(values) = &args.lighting {
        steps.push(CurationStep::Lighting {
            allowed: parse_lighting(values)?,
        });
    }
    if let Some(n) = args.subsample {
        steps.push(CurationStep::Subsample {
            attribute: args.subsample_attribute,
            n,
        });
    }
    if steps.is_empty() {
        return Err(Error::Config("no curation steps given".into()));
    }
    let (corpus, _) = corpus::load_ground_truth(&args.gt)?;
    let curated = report::curate(&corpus, &steps, args.seed.unwrap_or(config_seed))?;
    eprintln!(
        "kept {} of {} images ({} excluded)",
        curated.image_count(),
        corpus.image_count(),
        corpus.image_count() - curated.image_count()
    );
    for step in curated.provenance.iter().skip(corpus.provenance.len()) {
        eprintln!("  {step}");
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    corpus::write_ground_truth(&curated, &args.out)?;
    Ok(0)
}

fn darken(args: DarkenArgs) -> pedfair::Result<u8> {
    let factors = match args.factors {
        Some(values) => values
            .into_iter()
            .map(DarknessFactor::new)
            .collect::<pedfair::Result<Vec<_>>>()?,
        None => darkness::default_ladder(),
    };
    let (corpus, _) = corpus::load_ground_truth(&args.gt)?;
    let corpus = darkness::load_pixels(&corpus, &args.images)?;
    std::fs::create_dir_all(&args.out)?;
    for (factor, dark) in darkness::darkness_sweep(&corpus, &factors)? {
        darkness::save_pixels(&dark, &args.out)?;
        let gt_path = args.out.join(format!("gt{}.json", factor.file_suffix()));
        corpus::write_ground_truth(&dark, &gt_path)?;
        eprintln!("wrote {}", gt_path.display());
    }
    Ok(0)
}

fn person(gender: Gender, body_size: BodySize) -> PersonAttributes {
    PersonAttributes {
        gender,
        body_size,
        ..Default::default()
    }
}

/// Fog sweep over six pedestrian types, with gender and body-size gaps that
/// shrink as fog thickens.
fn default_synth_config() -> SynthConfig {
    let mut profiles = Vec::new();
    for gender in [Gender::Female, Gender::Male] {
        for body_size in [BodySize::Small, BodySize::Medium, BodySize::Large] {
            profiles.push(PedestrianProfile {
                name: format!("{gender:?}-{body_size:?}").to_lowercase(),
                attributes: person(gender, body_size),
                weight: 1.0,
            });
        }
    }
    let modifier = |spec: GroupSpec, conf: f64, miss: f64| GroupModifier {
        spec,
        confidence_multiplier: conf,
        miss_multiplier: miss,
        convergence: 1.0,
    };
    SynthConfig {
        degradation: DegradationConfig {
            base_confidence: 0.95,
            fog_decay: 0.6,
            distance_decay: 300.0,
            miss_base: 0.05,
            miss_fog_slope: 0.3,
            miss_distance: 0.05,
            hallucination_rate: 0.2,
            confidence_noise_sd: 0.03,
            localization_noise: 0.03,
            localization_fog_slope: 0.05,
            group_modifiers: vec![
                modifier(
                    GroupSpec::attribute("female", AttributePredicate::gender(Gender::Female)),
                    0.95,
                    1.3,
                ),
                modifier(
                    GroupSpec::attribute("small", AttributePredicate::body_size(BodySize::Small)),
                    0.9,
                    1.6,
                ),
            ],
            ..Default::default()
        },
        scenario: Scenario::new(1000, profiles, synthgen::fog_ladder()),
    }
}

fn synth(args: SynthArgs) -> pedfair::Result<u8> {
    let config: SynthConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Load {
                path: path.clone(),
                message: e.to_string(),
            })?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => default_synth_config(),
    };
    let run = synthgen::generate(&config.degradation, &config.scenario, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    corpus::write_ground_truth(&run.corpus, &args.out.join("gt.json"))?;
    corpus::write_detections(&run.detections, &args.out.join("det.json"))?;
    write_json(&args.out.join("synth_config.json"), &config)?;
    write_json(&args.out.join("run_config.json"), &synth_run_config())?;
    eprintln!(
        "wrote {} images, {} annotations, {} detections to {}",
        run.corpus.image_count(),
        run.corpus.annotations.len(),
        run.detections.len(),
        args.out.display()
    );
    Ok(0)
}

/// Evaluation config matching the default synthetic population.
fn synth_run_config() -> RunConfig {
    let gender = |g: Gender| {
        GroupSpec::attribute(
            format!("{g:?}").to_lowercase(),
            AttributePredicate::gender(g),
        )
    };
    let size = |b: BodySize| {
        GroupSpec::attribute(
            format!("{b:?}").to_lowercase(),
            AttributePredicate::body_size(b),
        )
    };
    let sizes = [BodySize::Small, BodySize::Medium, BodySize::Large];
    let genders = [Gender::Female, Gender::Male];
    RunConfig {
        families: vec![
            GroupFamily {
                name: "gender".into(),
                groups: genders.iter().map(|&g| gender(g)).collect(),
                members: sizes.iter().map(|&b| size(b)).collect(),
            },
            GroupFamily {
                name: "body_size".into(),
                groups: sizes.iter().map(|&b| size(b)).collect(),
                members: genders.iter().map(|&g| gender(g)).collect(),
            },
        ],
        ..RunConfig::default()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> pedfair::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn report_diff(args: DiffArgs) -> pedfair::Result<u8> {
    let left = report::read_report(&args.left)?;
    let right = report::read_report(&args.right)?;
    let mut code = 0;
    for (path, r) in [(&args.left, &left), (&args.right, &right)] {
        if report::recompute_disparities(r)? != r.disparities {
            println!(
                "{}: disparities do not match its own group values",
                path.display()
            );
            code = EXIT_DIFFERENT;
        }
    }
    let diffs = report::diff_reports(&left, &right, args.tolerance);
    for d in &diffs {
        let show = |v: Option<f64>| v.map_or_else(|| "undefined".to_owned(), |v| v.to_string());
        println!("{}: {} -> {}", d.key, show(d.left), show(d.right));
    }
    if diffs.is_empty() && code == 0 {
        println!("reports match");
        Ok(0)
    } else {
        Ok(EXIT_DIFFERENT)
    }
}
