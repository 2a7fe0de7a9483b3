use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use robustkit::attacks::{pgd, train_shadow, AttackConfig, AttackKind};
use robustkit::corruption::{apply_corruption, CorruptionSpec, Method};
use robustkit::dataset::{self, read_dataset, write_dataset, Split};
use robustkit::defenses::{
    detect, harden, roc_auc, save_detector, spatial_defense_rate, train_detector,
    trigger_corruption, HardeningRecipe, PreprocessPipeline,
};
use robustkit::gate::{gate, GateMode, GatePolicy};
use robustkit::harness::{
    run_attack_campaign, run_corruption_campaign, Classifier, LocalTarget, RemoteConfig,
    RemoteTarget,
};
use robustkit::image::{load_image, save_image, ImageFormat};
use robustkit::mock::{FailurePlan, MockServer};
use robustkit::model::{load_params, save_params, ModelParams};
use robustkit::report::{emit_report, DefenseRow, EvaluationReport, ReportFormat};
use robustkit::training::{accuracy, train, TrainConfig};
use robustkit::Image;

const EXIT_PARTIAL: u8 = 2;

#[derive(Parser)]
#[command(
    name = "robustkit",
    version,
    about = "Robustness evaluation and hardening for image classifiers"
)]
struct Cli {
    /// Master seed; every stage derives its own seed from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic shape dataset.
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// Train the toy classifier on a dataset directory.
    Train(DataArgs),
    /// Corrupt one image.
    Corrupt(CorruptArgs),
    /// Corruption campaign against the configured target.
    Evaluate(TargetArgs),
    /// Attack campaign against the configured target.
    Attack(AttackArgs),
    /// Harden a model and compare defense rates.
    Defend(TargetArgs),
    /// Train and score the adversarial-example detector.
    Detect(TargetArgs),
    /// Re-render a JSON report.
    Report(ReportArgs),
    /// Serve a model over HTTP with the default wire protocol.
    ServeMock(ServeArgs),
}

#[derive(Subcommand)]
enum DatasetAction {
    Gen {
        #[arg(long, default_value_t = 1500)]
        train: usize,
        #[arg(long, default_value_t = 300)]
        test: usize,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory (default: <out-dir>/dataset).
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct TargetArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Model params (default: <out-dir>/model.rkmp).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Remote endpoint; overrides the config target.
    #[arg(long)]
    remote: Option<String>,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    target: TargetArgs,
    /// Shadow params for transfer attacks.
    #[arg(long)]
    shadow: Option<PathBuf>,
    /// Label this many test images through the target and train a shadow.
    #[arg(long)]
    shadow_budget: Option<u64>,
}

#[derive(Args)]
struct CorruptArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    method: String,
    #[arg(long, default_value_t = 3)]
    severity: u8,
    /// Explicit parameter value instead of the severity table.
    #[arg(long)]
    raw: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
    Svg,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Svg => ReportFormat::Svg,
        }
    }
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    /// Fraction of images that always fail with HTTP 503.
    #[arg(long, default_value_t = 0.0)]
    fail_fraction: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TargetConfig {
    #[default]
    Local,
    LocalWith {
        pipeline: PreprocessPipeline,
    },
    Remote(RemoteConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct CorruptionSection {
    methods: Vec<Method>,
    severities: Vec<u8>,
}

impl Default for CorruptionSection {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            severities: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct DefenseSection {
    methods: Vec<Method>,
    /// Undefended rate at or below which a parameter counts as calibrated.
    trigger_rate: f64,
    steps: usize,
}

impl Default for DefenseSection {
    fn default() -> Self {
        Self {
            methods: vec![
                Method::GaussianNoise,
                Method::Rotation,
                Method::SaltPepper,
                Method::MonochromeRed,
                Method::MonochromeGreen,
                Method::MonochromeBlue,
                Method::Grayscale,
            ],
            trigger_rate: 0.70,
            steps: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct DetectorSection {
    train_items: usize,
    attack: AttackConfig,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            train_items: 300,
            attack: AttackConfig::new(AttackKind::Pgd, 8.0),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct Config {
    gate: GatePolicy,
    train: TrainConfig,
    hardening: HardeningRecipe,
    attacks: Vec<AttackConfig>,
    corruption: CorruptionSection,
    defense: DefenseSection,
    detector: DetectorSection,
    target: TargetConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            gate: GatePolicy::default(),
            train: TrainConfig::default(),
            hardening: HardeningRecipe::default(),
            attacks: [1.0, 2.0, 4.0, 8.0]
                .into_iter()
                .flat_map(|e| {
                    [
                        AttackConfig::new(AttackKind::Pgd, e),
                        AttackConfig::new(AttackKind::FflPgd, e),
                    ]
                })
                .collect(),
            corruption: CorruptionSection::default(),
            defense: DefenseSection::default(),
            detector: DetectorSection::default(),
            target: TargetConfig::default(),
        }
    }
}

struct Ctx {
    seed: u64,
    out: PathBuf,
    cfg: Config,
}

impl Ctx {
    fn data_dir(&self, arg: &Option<PathBuf>) -> PathBuf {
        arg.clone().unwrap_or_else(|| self.out.join("dataset"))
    }

    fn model_path(&self, arg: &Option<PathBuf>) -> PathBuf {
        arg.clone().unwrap_or_else(|| self.out.join("model.rkmp"))
    }

    fn target(&self, args: &TargetArgs, classes: &[String]) -> Result<Box<dyn Classifier>> {
        if let Some(url) = &args.remote {
            let labels = robustkit::model::LabelSet {
                names: classes.to_vec(),
            };
            let mut cfg = match &self.cfg.target {
                TargetConfig::Remote(r) => r.clone(),
                _ => RemoteConfig::new(url.clone(), &labels),
            };
            cfg.endpoint = url.clone();
            return Ok(Box::new(RemoteTarget::new(cfg)?));
        }
        Ok(match &self.cfg.target {
            TargetConfig::Remote(r) => Box::new(RemoteTarget::new(r.clone())?),
            TargetConfig::Local => Box::new(LocalTarget::new(self.load_model(&args.model)?)),
            TargetConfig::LocalWith { pipeline } => Box::new(LocalTarget::with_pipeline(
                self.load_model(&args.model)?,
                pipeline.clone(),
            )?),
        })
    }

    fn load_model(&self, arg: &Option<PathBuf>) -> Result<ModelParams> {
        let path = self.model_path(arg);
        load_params(&path).with_context(|| format!("loading model {}", path.display()))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.out.join(name);
        fs::write(&path, serde_json::to_string_pretty(value)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    fn emit(&self, stem: &str, report: &mut EvaluationReport) -> Result<ExitCode> {
        report.metadata.generated_unix_s = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs());
        for f in [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Svg] {
            let path = self.out.join(format!("{stem}.{}", f.extension()));
            emit_report(report, f, &path)?;
        }
        println!(
            "{stem}: {} rows, {} queries{} -> {}",
            report.row_count(),
            report.total_queries,
            if report.partial { " (partial)" } else { "" },
            self.out.join(format!("{stem}.json")).display()
        );
        Ok(if report.partial {
            ExitCode::from(EXIT_PARTIAL)
        } else {
            ExitCode::SUCCESS
        })
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<Config> {
    match path {
        None => Ok(Config::default()),
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn parse_method(name: &str) -> Result<Method> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .with_context(|| format!("unknown corruption method {name:?}"))
}

fn format_for(path: &Path) -> ImageFormat {
    ImageFormat::from_path(path).unwrap_or(ImageFormat::Png)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = load_config(&cli.config)?;
    fs::create_dir_all(&cli.out_dir)
        .with_context(|| format!("creating {}", cli.out_dir.display()))?;
    let ctx = Ctx {
        seed: cli.seed,
        out: cli.out_dir,
        cfg,
    };
    match cli.command {
        Command::Dataset {
            action: DatasetAction::Gen { train, test },
        } => {
            let dir = ctx.out.join("dataset");
            let tr = dataset::generate(ctx.seed, Split::Train, train);
            let te = dataset::generate(ctx.seed, Split::Test, test);
            write_dataset(&dir, &[&tr, &te])?;
            println!("dataset: {train} train, {test} test -> {}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train(args) => cmd_train(&ctx, &args),
        Command::Corrupt(args) => cmd_corrupt(&ctx, &args),
        Command::Evaluate(args) => cmd_evaluate(&ctx, &args),
        Command::Attack(args) => cmd_attack(&ctx, &args),
        Command::Defend(args) => cmd_defend(&ctx, &args),
        Command::Detect(args) => cmd_detect(&ctx, &args),
        Command::Report(args) => {
            let text = fs::read_to_string(&args.input)
                .with_context(|| format!("reading {}", args.input.display()))?;
            let report = EvaluationReport::from_json(&text)?;
            let format = ReportFormat::from(args.format);
            let out = args
                .output
                .unwrap_or_else(|| args.input.with_extension(format.extension()));
            emit_report(&report, format, &out)?;
            println!("report -> {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::ServeMock(args) => {
            let params = ctx.load_model(&args.model)?;
            let plan = FailurePlan {
                persistent_fraction: args.fail_fraction,
                ..FailurePlan::default()
            };
            let server = MockServer::bind(&args.addr, params, dataset::shape_labels(), plan)?;
            println!("serving {}", server.url());
            server.join();
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cmd_train(ctx: &Ctx, args: &DataArgs) -> Result<ExitCode> {
    let dir = ctx.data_dir(&args.data);
    let ds = read_dataset(&dir, Split::Train)?;
    let test = read_dataset(&dir, Split::Test)?;
    let cfg = TrainConfig {
        seed: ctx.seed,
        ..ctx.cfg.train.clone()
    };
    let (params, log) = train(&ds, &cfg)?;
    let path = ctx.out.join("model.rkmp");
    save_params(&params, &path)?;
    ctx.write_json("training_log.json", &log)?;
    let acc = if test.is_empty() {
        None
    } else {
        Some(accuracy(&params, &test)?)
    };
    println!(
        "train: {} epochs, test accuracy {} -> {}",
        log.epochs.len(),
        acc.map_or("n/a".into(), |a| format!("{a:.4}")),
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_corrupt(ctx: &Ctx, args: &CorruptArgs) -> Result<ExitCode> {
    let img = load_image(&args.input, format_for(&args.input))?;
    let method = parse_method(&args.method)?;
    let spec = match args.raw {
        Some(v) => CorruptionSpec::with_raw(method, v, ctx.seed),
        None => CorruptionSpec::new(method, args.severity, ctx.seed),
    };
    let out = apply_corruption(&img, &spec)?;
    let verdict = gate(&img, &out, &ctx.cfg.gate)?;
    println!(
        "corrupt: {} psnr {} ssim {:.4} gate {}",
        method,
        verdict.metrics.psnr_db,
        verdict.metrics.ssim,
        if verdict.passed { "pass" } else { "fail" }
    );
    if !verdict.passed && ctx.cfg.gate.mode == GateMode::Reject {
        bail!("rejected by gate; nothing written");
    }
    save_image(&out, &args.output, format_for(&args.output))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_evaluate(ctx: &Ctx, args: &TargetArgs) -> Result<ExitCode> {
    let test = read_dataset(&ctx.data_dir(&args.data), Split::Test)?;
    let target = ctx.target(args, &test.labels.names)?;
    let c = &ctx.cfg.corruption;
    let mut report = run_corruption_campaign(
        target.as_ref(),
        &test,
        &c.methods,
        &c.severities,
        &ctx.cfg.gate,
        ctx.seed,
    )?;
    ctx.emit("evaluate", &mut report)
}

fn cmd_attack(ctx: &Ctx, args: &AttackArgs) -> Result<ExitCode> {
    let dir = ctx.data_dir(&args.target.data);
    let test = read_dataset(&dir, Split::Test)?;
    let target = ctx.target(&args.target, &test.labels.names)?;
    let mut shadow_queries = 0;
    let source = if let Some(p) = &args.shadow {
        load_params(p).with_context(|| format!("loading shadow {}", p.display()))?
    } else if let Some(budget) = args.shadow_budget {
        let mut pool = read_dataset(&dir, Split::Train)?.images();
        pool.truncate(budget as usize);
        let cfg = TrainConfig {
            seed: robustkit::rng::derive_seed(ctx.seed, 17),
            ..ctx.cfg.train.clone()
        };
        let shadow = train_shadow(budget, target.as_ref(), &pool, test.classes(), &cfg)?;
        shadow_queries = shadow.queries_used;
        save_params(&shadow.params, &ctx.out.join("shadow.rkmp"))?;
        println!(
            "shadow: {} queries, agreement {:.4}",
            shadow.queries_used, shadow.agreement
        );
        shadow.params
    } else if args.target.remote.is_none() && !matches!(ctx.cfg.target, TargetConfig::Remote(_)) {
        ctx.load_model(&args.target.model)?
    } else {
        bail!("remote targets need --shadow or --shadow-budget");
    };
    let cfgs: Vec<AttackConfig> = ctx
        .cfg
        .attacks
        .iter()
        .map(|c| AttackConfig {
            seed: robustkit::rng::derive_seed(ctx.seed, c.seed),
            ..c.clone()
        })
        .collect();
    let mut report = run_attack_campaign(target.as_ref(), &source, &test, &cfgs, &ctx.cfg.gate)?;
    report.metadata.seed = ctx.seed;
    report.metadata.shadow_queries = shadow_queries;
    ctx.emit("attack", &mut report)
}

fn cmd_defend(ctx: &Ctx, args: &TargetArgs) -> Result<ExitCode> {
    let dir = ctx.data_dir(&args.data);
    let train_ds = read_dataset(&dir, Split::Train)?;
    let test = read_dataset(&dir, Split::Test)?;
    let base = ctx.load_model(&args.model)?;
    let mut recipe = ctx.cfg.hardening.clone();
    recipe.train.seed = ctx.seed;
    let hardened = harden(Some(&base), &train_ds, &recipe)?;
    save_params(&hardened, &ctx.out.join("hardened.rkmp"))?;
    let mut rows = Vec::new();
    for &m in &ctx.cfg.defense.methods {
        let d = &ctx.cfg.defense;
        let (spec, undefended) =
            trigger_corruption(&base, &test, m, d.trigger_rate, d.steps, ctx.seed)?;
        let defended = spatial_defense_rate(&hardened, &test, &spec, Some(&recipe.inference))?;
        rows.push(DefenseRow {
            defense: "hardened".into(),
            method: m,
            severity: 0,
            param: spec.resolve()?,
            n: test.len(),
            undefended_rate: undefended,
            defended_rate: defended,
        });
    }
    let target = LocalTarget::with_pipeline(hardened, recipe.inference.clone())?;
    let mut report = EvaluationReport {
        metadata: robustkit::report::ReportMetadata {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: ctx.seed,
            policy: ctx.cfg.gate,
            target: target.describe(),
            shadow_queries: 0,
            generated_unix_s: None,
        },
        clean: None,
        corruption_rows: Vec::new(),
        attack_rows: Vec::new(),
        defense_rows: rows,
        total_queries: 0,
        partial: false,
    };
    report.finalize();
    ctx.emit("defend", &mut report)
}

#[derive(Serialize)]
struct DetectorSummary {
    auc: f64,
    clean_items: usize,
    adversarial_items: usize,
    flagged_clean: usize,
    flagged_adversarial: usize,
}

fn cmd_detect(ctx: &Ctx, args: &TargetArgs) -> Result<ExitCode> {
    let dir = ctx.data_dir(&args.data);
    let train_ds = read_dataset(&dir, Split::Train)?.head(ctx.cfg.detector.train_items);
    let test = read_dataset(&dir, Split::Test)?;
    let params = ctx.load_model(&args.model)?;
    let target = LocalTarget::new(params.clone());
    let craft = |ds: &dataset::Dataset, stream: u64| -> Result<Vec<Image>> {
        let base = robustkit::rng::derive_seed(ctx.seed, stream);
        ds.items
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let cfg = AttackConfig {
                    seed: robustkit::rng::derive_seed(base, i as u64),
                    ..ctx.cfg.detector.attack.clone()
                };
                Ok(pgd(&params, &s.image, s.label, &cfg)?
                    .adversarial
                    .expect("attack output"))
            })
            .collect()
    };
    let det = train_detector(&target, &train_ds.images(), &craft(&train_ds, 1)?, ctx.seed)?;
    save_detector(&det, &ctx.out.join("detector.rkdt"))?;
    let score = |imgs: &[Image]| -> Result<Vec<f64>> {
        imgs.iter().map(|i| Ok(detect(&det, &target, i)?)).collect()
    };
    let neg = score(&test.images())?;
    let pos = score(&craft(&test, 2)?)?;
    let summary = DetectorSummary {
        auc: roc_auc(&pos, &neg)?,
        clean_items: neg.len(),
        adversarial_items: pos.len(),
        flagged_clean: neg.iter().filter(|&&p| p >= 0.5).count(),
        flagged_adversarial: pos.iter().filter(|&&p| p >= 0.5).count(),
    };
    let path = ctx.write_json("detect.json", &summary)?;
    println!("detect: AUC {:.4} -> {}", summary.auc, path.display());
    Ok(ExitCode::SUCCESS)
}
