//! End-to-end behavior of the sandbox pipeline on a small environment:
//! watermarked lists verify under the true key and not under others, the
//! whole pipeline replays bitwise, and detection strength grows with the
//! injection strength.

use greenred_core::config::RunConfig;
use greenred_core::injector::InjectorConfig;
use greenred_core::partition::{
    derive_projection, semantic_coordinates, PartitionConfig, SecretKey,
};
use greenred_core::sandbox::{
    calibrate, gen_catalog, gen_interactions, serve_all, train_student, TeacherScorer,
    WatermarkContext,
};
use greenred_core::verifier::{count_green, verify, z_score};

struct SmallRun {
    cfg: RunConfig,
}

impl SmallRun {
    fn new() -> Self {
        let cfg = RunConfig {
            n_items: 400,
            dim: 16,
            n_clusters: 4,
            n_users: 300,
            seq_len: 12,
            k_cand: 60,
            calib_batches: 120,
            calib_batch_size: 25,
            ..RunConfig::default()
        };
        cfg.validate().unwrap();
        Self { cfg }
    }

    fn environment(&self) -> (greenred_core::sandbox::SyntheticCatalog, greenred_core::sandbox::InteractionLog) {
        let catalog = gen_catalog(
            self.cfg.n_items,
            self.cfg.dim,
            self.cfg.n_clusters,
            self.cfg.spread,
            self.cfg.catalog_seed(),
        )
        .unwrap();
        let log = gen_interactions(
            &catalog,
            self.cfg.n_users,
            self.cfg.seq_len,
            self.cfg.p_stay,
            self.cfg.interactions_seed(),
        )
        .unwrap();
        (catalog, log)
    }
}

#[test]
fn watermark_verifies_under_the_true_key_only() {
    let run = SmallRun::new();
    let cfg = &run.cfg;
    let (catalog, log) = run.environment();
    let teacher = TeacherScorer::new(&catalog, cfg.rho, cfg.lambda_pop).unwrap();
    let key = SecretKey(0x00C0_FFEE);

    let mut ctx =
        WatermarkContext::new(&catalog.embeddings, key, cfg.partition(), cfg.injector()).unwrap();
    ctx.ctrl = cfg.controller().unwrap();
    let (ctrl, _) = calibrate(&teacher, &log, &ctx, cfg.calib_batches, cfg.calib_batch_size).unwrap();
    ctx.ctrl = ctrl;

    let watermarked = serve_all(&teacher, &log, cfg.top_k, Some(&ctx)).unwrap();
    let clean = serve_all(&teacher, &log, cfg.top_k, None).unwrap();

    let report = verify(&watermarked, key, &ctx.coords, &ctx.pcfg, cfg.z_threshold).unwrap();
    assert!(report.owned, "true key failed on watermarked lists: z = {}", report.z_score);
    assert!(report.z_score > 10.0);
    assert_eq!(report.total, cfg.n_users * cfg.top_k);

    let clean_report = verify(&clean, key, &ctx.coords, &ctx.pcfg, cfg.z_threshold).unwrap();
    assert!(
        !clean_report.owned,
        "clean lists claimed as owned: z = {}",
        clean_report.z_score
    );
    assert!(clean_report.z_score.abs() < 4.0);

    // A wrong key re-derives its own projection; the watermark written
    // under another key should not light it up.
    let wrong = SecretKey(0xBAD0_BAD0_BAD0_BAD0);
    let wrong_coords = semantic_coordinates(
        &catalog.embeddings,
        &derive_projection(wrong, catalog.dim()).unwrap(),
    )
    .unwrap();
    let wrong_report = verify(&watermarked, wrong, &wrong_coords, &ctx.pcfg, cfg.z_threshold).unwrap();
    assert!(
        !wrong_report.owned,
        "wrong key claimed ownership: z = {}",
        wrong_report.z_score
    );

    // The watermark lifts the green rate well clear of the clean baseline.
    let (wm_green, wm_total) = count_green(&watermarked, key, &ctx.coords, &ctx.pcfg).unwrap();
    let (cl_green, cl_total) = count_green(&clean, key, &ctx.coords, &ctx.pcfg).unwrap();
    let lift = wm_green as f64 / wm_total as f64 - cl_green as f64 / cl_total as f64;
    assert!(lift >= 0.10, "green-rate lift {lift}");
}

#[test]
fn pipeline_replays_bitwise() {
    let run = SmallRun::new();
    let cfg = &run.cfg;
    let key = SecretKey(31_337);

    let serve_once = || {
        let (catalog, log) = run.environment();
        let teacher = TeacherScorer::new(&catalog, cfg.rho, cfg.lambda_pop).unwrap();
        let mut ctx = WatermarkContext::new(&catalog.embeddings, key, cfg.partition(), cfg.injector())
            .unwrap();
        ctx.ctrl = cfg.controller().unwrap();
        let (ctrl, trace) =
            calibrate(&teacher, &log, &ctx, cfg.calib_batches, cfg.calib_batch_size).unwrap();
        ctx.ctrl = ctrl;
        let lists = serve_all(&teacher, &log, cfg.top_k, Some(&ctx)).unwrap();
        (catalog, log, trace, lists)
    };

    let (catalog_a, log_a, trace_a, lists_a) = serve_once();
    let (catalog_b, log_b, trace_b, lists_b) = serve_once();
    assert_eq!(catalog_a.embeddings.values(), catalog_b.embeddings.values());
    assert_eq!(log_a.sequences, log_b.sequences);
    assert_eq!(trace_a, trace_b);
    assert_eq!(lists_a, lists_b);
}

#[test]
fn green_hit_rate_grows_with_global_strength() {
    let run = SmallRun::new();
    let cfg = &run.cfg;
    let (catalog, log) = run.environment();
    let teacher = TeacherScorer::new(&catalog, cfg.rho, cfg.lambda_pop).unwrap();
    let key = SecretKey(0xFACE_0FF5);
    let icfg = InjectorConfig {
        delta_max: 5.0,
        ..cfg.injector()
    };
    let pcfg: PartitionConfig = cfg.partition();

    let mut previous = f64::NEG_INFINITY;
    for alpha in [0.05, 0.5, 1.5, 3.0] {
        let mut ctx = WatermarkContext::new(&catalog.embeddings, key, pcfg, icfg).unwrap();
        ctx.ctrl.alpha_global = alpha;
        let lists = serve_all(&teacher, &log, cfg.top_k, Some(&ctx)).unwrap();
        let (green, total) = count_green(&lists, key, &ctx.coords, &pcfg).unwrap();
        let rate = green as f64 / total as f64;
        assert!(
            rate >= previous,
            "rate {rate} at alpha {alpha} dropped below {previous}"
        );
        previous = rate;
    }
    // The strongest setting must be meaningfully separated from the
    // weakest, otherwise the sweep is vacuous.
    assert!(previous > 0.45, "strongest setting only reached {previous}");
}

#[test]
fn student_distillation_transfers_the_watermark() {
    let run = SmallRun::new();
    let cfg = &run.cfg;
    let (catalog, log) = run.environment();
    let teacher = TeacherScorer::new(&catalog, cfg.rho, cfg.lambda_pop).unwrap();
    let key = SecretKey(0xDEAD_10CC);

    let mut ctx =
        WatermarkContext::new(&catalog.embeddings, key, cfg.partition(), cfg.injector()).unwrap();
    ctx.ctrl = cfg.controller().unwrap();
    let (ctrl, _) = calibrate(&teacher, &log, &ctx, cfg.calib_batches, cfg.calib_batch_size).unwrap();
    ctx.ctrl = ctrl;

    let watermarked = serve_all(&teacher, &log, cfg.top_k, Some(&ctx)).unwrap();
    let student = train_student(&watermarked, catalog.n_items(), cfg.smoothing).unwrap();
    let student_lists = serve_all(&student, &log, cfg.top_k, None).unwrap();
    let (green, total) = count_green(&student_lists, key, &ctx.coords, &ctx.pcfg).unwrap();
    let null = report_null(&ctx.pcfg);
    let z = z_score(green, total, null).unwrap();
    assert!(z > 4.0, "student of the watermarked teacher scored z = {z}");
}

fn report_null(pcfg: &PartitionConfig) -> f64 {
    greenred_core::partition::effective_density(pcfg.gamma, pcfg.omega).unwrap()
}
