//! `greenred`: command-line front end for the green-red watermark pipeline.
//!
//! Subcommands cover the full loop: `gen-data` builds the synthetic
//! environment, `recommend` serves clean or watermarked lists, `verify`
//! tests a log for ownership, `attack` distills a student from logged
//! lists and verifies both sides, and `sweep` measures utility and
//! detection across one parameter. Exit codes are stable: 0 for success
//! (and for "owned" on verify), 1 for "not owned", 2 for any error.
//!
//! The secret key is only ever accepted through `--key` and is never
//! echoed into any artifact or onto any output stream.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use greenred_core::config::RunConfig;
use greenred_core::io;
use greenred_core::metrics::{agreement_at_k, ndcg_at_k, recall_at_k};
use greenred_core::partition::{derive_projection, semantic_coordinates, SecretKey};
use greenred_core::sandbox::{
    calibrate, gen_catalog, gen_interactions, recommend, serve_all, train_student, InteractionLog,
    SyntheticCatalog, TeacherScorer, WatermarkContext,
};
use greenred_core::verifier::{verify_with_null_rate, RecommendationList, VerificationReport};

#[derive(Parser)]
#[command(
    name = "greenred",
    version,
    about = "Keyed green-red watermarking for sequential recommenders"
)]
struct Cli {
    /// JSON run config; defaults apply when absent.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the master seed of the config.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Overrides the output directory of the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generates the synthetic catalog and interaction log.
    GenData,
    /// Serves a Top-K list for every user, optionally watermarked.
    Recommend(RecommendArgs),
    /// Verifies ownership of a recommendation log.
    Verify(VerifyArgs),
    /// Trains an imitation student on logged lists and verifies both sides.
    Attack(AttackArgs),
    /// Measures utility and detection metrics across one parameter.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RecommendArgs {
    /// Watermark injection on or off.
    #[arg(long, value_enum, default_value_t = Switch::On)]
    watermark: Switch,
    /// Calibrate the global strength on validation batches before serving.
    #[arg(long)]
    calibrate: bool,
    /// Secret watermark key, decimal or 0x-prefixed hex. Required when
    /// watermarking.
    #[arg(long, value_name = "KEY")]
    key: Option<String>,
    /// Output path; defaults to recs_watermarked.jsonl or recs_clean.jsonl
    /// under the output directory.
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct VerifyArgs {
    /// Recommendation log to verify.
    #[arg(long, value_name = "PATH")]
    lists: PathBuf,
    /// Secret watermark key, decimal or 0x-prefixed hex.
    #[arg(long, value_name = "KEY")]
    key: String,
    /// Embeddings file (binary or CSV); defaults to the catalog under the
    /// output directory.
    #[arg(long, value_name = "PATH")]
    embeddings: Option<PathBuf>,
    /// Replaces the analytic null rate with an empirical one.
    #[arg(long, value_name = "RATE")]
    null_rate: Option<f64>,
    /// Overrides the ownership decision threshold on the z-score.
    #[arg(long, value_name = "Z")]
    threshold: Option<f64>,
    /// Report path; defaults to report.json under the output directory.
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct AttackArgs {
    /// Teacher log the student learns from; defaults to the watermarked
    /// log under the output directory.
    #[arg(long, value_name = "PATH")]
    lists: Option<PathBuf>,
    /// Secret watermark key used to verify both teacher and student.
    #[arg(long, value_name = "KEY")]
    key: String,
}

#[derive(Args)]
struct SweepArgs {
    /// Parameter to sweep.
    #[arg(long, value_enum)]
    param: SweepParam,
    /// Comma-separated values to sweep over.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Calibrate the global strength at every swept value.
    #[arg(long)]
    calibrate: bool,
    /// Secret watermark key.
    #[arg(long, value_name = "KEY")]
    key: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParam {
    #[value(name = "k_cand")]
    KCand,
    #[value(name = "delta_base")]
    DeltaBase,
    #[value(name = "gamma")]
    Gamma,
    #[value(name = "omega")]
    Omega,
    #[value(name = "tau")]
    Tau,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            Self::KCand => "k_cand",
            Self::DeltaBase => "delta_base",
            Self::Gamma => "gamma",
            Self::Omega => "omega",
            Self::Tau => "tau",
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run() -> anyhow::Result<u8> {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::GenData => cmd_gen_data(&load_config(&cli)?),
        Cmd::Recommend(args) => cmd_recommend(&load_config(&cli)?, args),
        Cmd::Verify(args) => cmd_verify(&cli, args),
        Cmd::Attack(args) => cmd_attack(&load_config(&cli)?, args),
        Cmd::Sweep(args) => cmd_sweep(&load_config(&cli)?, args),
    }
}

fn parse_key(text: &str) -> anyhow::Result<SecretKey> {
    let t = text.trim();
    let parsed = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => t.parse(),
    };
    parsed
        .map(SecretKey)
        .with_context(|| format!("key {t:?} is not a decimal or 0x-prefixed hex u64"))
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    Ok(apply_overrides(cfg, cli))
}

fn apply_overrides(mut cfg: RunConfig, cli: &Cli) -> RunConfig {
    if let Some(seed) = cli.seed {
        cfg.rng_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg
}

fn load_environment(cfg: &RunConfig) -> anyhow::Result<(SyntheticCatalog, InteractionLog)> {
    let bin = cfg.catalog_bin_path();
    if !bin.exists() {
        bail!("{} not found; run gen-data first", bin.display());
    }
    let (catalog, _) = io::read_catalog(&bin, &cfg.catalog_sidecar_path())?;
    let (_, log) = io::read_interactions_jsonl(&cfg.interactions_path())?;
    Ok((catalog, log))
}

fn watermark_context(
    cfg: &RunConfig,
    catalog: &SyntheticCatalog,
    key: SecretKey,
) -> anyhow::Result<WatermarkContext> {
    let mut ctx = WatermarkContext::new(&catalog.embeddings, key, cfg.partition(), cfg.injector())?;
    ctx.ctrl = cfg.controller()?;
    Ok(ctx)
}

fn cmd_gen_data(cfg: &RunConfig) -> anyhow::Result<u8> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let catalog = gen_catalog(
        cfg.n_items,
        cfg.dim,
        cfg.n_clusters,
        cfg.spread,
        cfg.catalog_seed(),
    )?;
    let log = gen_interactions(
        &catalog,
        cfg.n_users,
        cfg.seq_len,
        cfg.p_stay,
        cfg.interactions_seed(),
    )?;
    io::write_catalog(
        &cfg.catalog_bin_path(),
        &cfg.catalog_sidecar_path(),
        &catalog,
        cfg.catalog_seed(),
        cfg.echo(),
    )?;
    io::write_interactions_jsonl(&cfg.interactions_path(), &json!({"config": cfg.echo()}), &log)?;
    println!(
        "catalog: {} items, dim {}, {} clusters -> {}",
        catalog.n_items(),
        catalog.dim(),
        catalog.n_clusters(),
        cfg.catalog_bin_path().display()
    );
    println!(
        "interactions: {} users x {} steps -> {}",
        log.n_users(),
        cfg.seq_len,
        cfg.interactions_path().display()
    );
    Ok(0)
}

fn cmd_recommend(cfg: &RunConfig, args: &RecommendArgs) -> anyhow::Result<u8> {
    let (catalog, log) = load_environment(cfg)?;
    let teacher = TeacherScorer::new(&catalog, cfg.rho, cfg.lambda_pop)?;
    let watermarked = args.watermark == Switch::On;
    let mut header = serde_json::Map::new();
    header.insert("config".into(), cfg.echo());
    header.insert(
        "watermark".into(),
        json!(if watermarked { "on" } else { "off" }),
    );
    let ctx = if watermarked {
        let key_text = args
            .key
            .as_deref()
            .context("--key is required when the watermark is on")?;
        let mut ctx = watermark_context(cfg, &catalog, parse_key(key_text)?)?;
        if args.calibrate {
            let (ctrl, _) = calibrate(&teacher, &log, &ctx, cfg.calib_batches, cfg.calib_batch_size)?;
            ctx.ctrl = ctrl;
        }
        header.insert("calibrated".into(), json!(args.calibrate));
        header.insert("alpha_global".into(), json!(ctx.ctrl.alpha_global));
        Some(ctx)
    } else {
        None
    };
    let lists = serve_all(&teacher, &log, cfg.top_k, ctx.as_ref())?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = args
        .output
        .clone()
        .unwrap_or_else(|| cfg.recommendations_path(watermarked));
    io::write_lists_jsonl(&path, &serde_json::Value::Object(header), &lists)?;
    println!(
        "served {} lists of {} -> {}",
        lists.len(),
        cfg.top_k,
        path.display()
    );
    if let Some(ctx) = &ctx {
        println!("alpha_global = {}", ctx.ctrl.alpha_global);
    }
    Ok(0)
}

/// Pulls the echoed config out of a log header so a verify run can proceed
/// from artifacts alone.
fn config_from_header(header: Option<&serde_json::Value>) -> anyhow::Result<Option<RunConfig>> {
    let Some(embedded) = header.and_then(|h| h.get("config")) else {
        return Ok(None);
    };
    let cfg: RunConfig = serde_json::from_value(embedded.clone())
        .context("parsing the config echoed in the log header")?;
    cfg.validate()?;
    Ok(Some(cfg))
}

fn cmd_verify(cli: &Cli, args: &VerifyArgs) -> anyhow::Result<u8> {
    let (header, lists) = io::read_lists_jsonl(&args.lists)
        .with_context(|| format!("reading {}", args.lists.display()))?;
    let cfg = match &cli.config {
        Some(_) => load_config(cli)?,
        None => match config_from_header(header.as_ref())? {
            Some(cfg) => apply_overrides(cfg, cli),
            None => apply_overrides(RunConfig::default(), cli),
        },
    };
    let report = verify_lists(&cfg, &lists, &args.key, args.embeddings.as_deref(), args.null_rate, args.threshold)?;
    let doc = io::report_document(&report, cfg.echo());
    println!("{}", serde_json::to_string_pretty(&doc)?);
    let report_path = args.report.clone().unwrap_or_else(|| cfg.report_path());
    if let Some(parent) = report_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    io::write_json_pretty(&report_path, &doc)?;
    Ok(if report.owned { 0 } else { 1 })
}

fn verify_lists(
    cfg: &RunConfig,
    lists: &[RecommendationList],
    key_text: &str,
    embeddings: Option<&Path>,
    null_rate: Option<f64>,
    threshold: Option<f64>,
) -> anyhow::Result<VerificationReport> {
    let emb_path = embeddings
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.catalog_bin_path());
    let embeddings = io::read_embeddings(&emb_path)
        .with_context(|| format!("reading embeddings {}", emb_path.display()))?;
    let key = parse_key(key_text)?;
    let projection = derive_projection(key, embeddings.dim())?;
    let coords = semantic_coordinates(&embeddings, &projection)?;
    let report = verify_with_null_rate(
        lists,
        key,
        &coords,
        &cfg.partition(),
        threshold.unwrap_or(cfg.z_threshold),
        null_rate,
    )?;
    Ok(report)
}

/// Reconstructs the serving setup a log was produced under from its header:
/// watermark on or off, and the frozen global strength.
fn serving_context_from_header(
    cfg: &RunConfig,
    catalog: &SyntheticCatalog,
    key: SecretKey,
    header: Option<&serde_json::Value>,
) -> anyhow::Result<Option<WatermarkContext>> {
    let watermarked = header
        .and_then(|h| h.get("watermark"))
        .and_then(|w| w.as_str())
        == Some("on");
    if !watermarked {
        return Ok(None);
    }
    let mut ctx = watermark_context(cfg, catalog, key)?;
    if let Some(alpha) = header
        .and_then(|h| h.get("alpha_global"))
        .and_then(|a| a.as_f64())
    {
        ctx.ctrl.alpha_global = alpha;
    }
    Ok(Some(ctx))
}

fn cmd_attack(cfg: &RunConfig, args: &AttackArgs) -> anyhow::Result<u8> {
    let lists_path = args
        .lists
        .clone()
        .unwrap_or_else(|| cfg.recommendations_path(true));
    let (header, teacher_lists) = io::read_lists_jsonl(&lists_path)
        .with_context(|| format!("reading {}", lists_path.display()))?;
    if teacher_lists.is_empty() {
        bail!("{} holds no recommendation lists", lists_path.display());
    }
    let (catalog, log) = load_environment(cfg)?;
    let key = parse_key(&args.key)?;

    // The attacker distills from a bounded slice of the query transcript:
    // the logged answers of the first `attack_queries` users (0 = all).
    let budget = match cfg.attack_queries {
        0 => teacher_lists.len(),
        q => q.min(teacher_lists.len()),
    };
    let student = train_student(&teacher_lists[..budget], catalog.n_items(), cfg.smoothing)?;

    // Fidelity and leakage are then measured one step past the transcript:
    // both models answer each user's full recorded sequence, so the student
    // meets contexts it never queried and has to generalize.
    let teacher = TeacherScorer::new(&catalog, cfg.rho, cfg.lambda_pop)?;
    let ctx = serving_context_from_header(cfg, &catalog, key, header.as_ref())?;
    let mut teacher_next = Vec::with_capacity(log.n_users());
    let mut student_next = Vec::with_capacity(log.n_users());
    for (u, seq) in log.sequences.iter().enumerate() {
        teacher_next.push(recommend(&teacher, u as u64, seq, cfg.top_k, ctx.as_ref())?);
        student_next.push(recommend(&student, u as u64, seq, cfg.top_k, None)?);
    }
    let agreement = agreement_at_k(&teacher_next, &student_next, cfg.eval_k)?;

    let projection = derive_projection(key, catalog.dim())?;
    let coords = semantic_coordinates(&catalog.embeddings, &projection)?;
    let pcfg = cfg.partition();
    let teacher_report =
        verify_with_null_rate(&teacher_lists, key, &coords, &pcfg, cfg.z_threshold, None)?;
    let student_report =
        verify_with_null_rate(&student_next, key, &coords, &pcfg, cfg.z_threshold, None)?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    let student_path = cfg.student_lists_path();
    let student_header = json!({
        "config": cfg.echo(),
        "student_of": lists_path.display().to_string(),
    });
    io::write_lists_jsonl(&student_path, &student_header, &student_next)?;
    let teacher_next_path = cfg.out_dir.join("teacher_next.jsonl");
    let teacher_next_header = json!({
        "config": cfg.echo(),
        "continuation_of": lists_path.display().to_string(),
    });
    io::write_lists_jsonl(&teacher_next_path, &teacher_next_header, &teacher_next)?;
    let doc = json!({
        "config": cfg.echo(),
        "teacher_lists": lists_path.display().to_string(),
        "student_lists": student_path.display().to_string(),
        "train_queries": budget,
        "agreement_at_k": {"k": cfg.eval_k, "value": agreement},
        "teacher_report": teacher_report,
        "student_report": student_report,
    });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    io::write_json_pretty(&cfg.attack_report_path(), &doc)?;
    Ok(0)
}

fn cmd_sweep(cfg: &RunConfig, args: &SweepArgs) -> anyhow::Result<u8> {
    let (catalog, log) = load_environment(cfg)?;
    let key = parse_key(&args.key)?;
    let targets = log.held_out_targets();
    let mut rows = Vec::with_capacity(args.values.len());
    for &value in &args.values {
        let mut swept = cfg.clone();
        match args.param {
            SweepParam::KCand => {
                if value.fract() != 0.0 || value < 1.0 || value > u32::MAX as f64 {
                    bail!("k_cand values must be positive integers, got {value}");
                }
                swept.k_cand = value as usize;
            }
            SweepParam::DeltaBase => swept.delta_base = value,
            SweepParam::Gamma => swept.gamma = value,
            SweepParam::Omega => swept.omega = value,
            SweepParam::Tau => swept.tau = value,
        }
        swept
            .validate()
            .with_context(|| format!("{} = {value}", args.param.name()))?;
        let teacher = TeacherScorer::new(&catalog, swept.rho, swept.lambda_pop)?;
        let mut ctx = watermark_context(&swept, &catalog, key)?;
        if args.calibrate {
            let (ctrl, _) = calibrate(
                &teacher,
                &log,
                &ctx,
                swept.calib_batches,
                swept.calib_batch_size,
            )?;
            ctx.ctrl = ctrl;
        }
        let lists = serve_all(&teacher, &log, swept.top_k, Some(&ctx))?;
        let recall = recall_at_k(&lists, &targets, swept.eval_k)?;
        let ndcg = ndcg_at_k(&lists, &targets, swept.eval_k)?;
        let report = verify_with_null_rate(
            &lists,
            key,
            &ctx.coords,
            &swept.partition(),
            swept.z_threshold,
            None,
        )?;
        println!(
            "{} = {value}: recall@{} {:.4}, ndcg@{} {:.4}, green rate {:.4}, z {:.2}",
            args.param.name(),
            swept.eval_k,
            recall,
            swept.eval_k,
            ndcg,
            report.empirical_rate,
            report.z_score
        );
        rows.push(io::SweepRow {
            value,
            recall,
            ndcg,
            green_rate: report.empirical_rate,
            z_score: report.z_score,
        });
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.sweep_path(args.param.name());
    io::write_sweep_csv(&path, &cfg.echo(), cfg.eval_k, &rows)?;
    println!("wrote {}", path.display());
    Ok(0)
}
