//! One PASS/FAIL line per acceptance criterion, printed past the test
//! harness capture. Criteria 1 to 3 and 5 reuse the seed-0 model trained for
//! criterion 4.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Instant;

use flowsteer::experiment::{
    evaluate, overhead, reconstruction_methods, run_verification, train_model, ExperimentConfig, Method, Reference,
    VerifySettings,
};
use flowsteer::metrics::{kernel_mmd, psnr, ssim};
use flowsteer::rng::{standard_normal, stream, Stream};
use flowsteer::surrogate::verify_propositions;
use flowsteer::{CorrectorConfig, CorrectorKind, PromptId, Tensor, TimeGrid, VelocityField};
use rand::Rng;

fn report(n: usize, pass: bool, detail: &str) -> bool {
    let line = format!("criterion {n}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    pass
}

fn config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.set("seed", &seed.to_string()).unwrap();
    cfg
}

fn analytic_field(k: usize, rng: &mut impl Rng, d: usize) -> VelocityField {
    if k.is_multiple_of(2) {
        let a = standard_normal(rng, &[d, d]).scale(0.5 / (d as f64).sqrt());
        let b = standard_normal(rng, &[d]);
        let offset = standard_normal(rng, &[d]).scale(0.3);
        VelocityField::affine_with_edit_offset(a, b, offset).unwrap()
    } else {
        VelocityField::constant(standard_normal(rng, &[d]))
    }
}

fn criterion_1(trained: &VelocityField) -> bool {
    let start = Instant::now();
    let grid = TimeGrid::uniform(20).unwrap();
    let mut rng = stream(101, Stream::Verify);
    let (mut minimizer, mut update, mut contraction): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut count = 0;
    for k in 0..200 {
        let owned;
        let field = if k < 100 {
            owned = analytic_field(k, &mut rng, 16);
            &owned
        } else {
            trained
        };
        let d = field.dim();
        let z = standard_normal(&mut rng, &[d]);
        let x = Tensor::vector((0..d).map(|_| rng.gen::<f64>()).collect());
        let i = rng.gen_range(0..grid.steps());
        let alpha: f64 = rng.gen();
        let r = verify_propositions(field, &z, &x, &grid, i, alpha, &mut rng).unwrap();
        minimizer = minimizer.max(r.minimizer_value);
        update = update.max(r.update_residual);
        contraction = contraction.max(r.contraction_residual);
        count += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = minimizer < 1e-18 && update < 1e-10 && contraction < 1e-9 && secs < 10.0;
    report(
        1,
        pass,
        &format!(
            "{count} instances (100 analytic, 100 trained): max L(Z*) {minimizer:.2e}, \
             update {update:.2e}, contraction {contraction:.2e}, {secs:.2}s"
        ),
    )
}

fn criteria_2_and_3(trained: &VelocityField) -> (bool, bool) {
    let settings = |seed| VerifySettings {
        seed,
        instances: 100,
        grid_n: 20,
        prompt: PromptId::EditTextRemoval,
    };
    let start = Instant::now();
    let analytic = run_verification(None, &settings(102)).unwrap();
    let learned = run_verification(Some(trained), &settings(103)).unwrap();
    let secs = start.elapsed().as_secs_f64();

    let exact: Vec<f64> = analytic
        .entries
        .iter()
        .filter_map(|e| e.exact_gradient_residual)
        .collect();
    let max_exact = exact.iter().copied().fold(0.0, f64::max);
    let bound_holds = learned.entries.iter().filter(|e| e.gradient.holds).count();
    let pass2 = !exact.is_empty()
        && max_exact < 1e-10
        && learned.entries.len() >= 50
        && bound_holds == learned.entries.len()
        && secs < 60.0;
    let c2 = report(
        2,
        pass2,
        &format!(
            "affine exact residual max {max_exact:.2e} over {} instances; trained bound holds on {bound_holds}/{}; {secs:.2}s",
            exact.len(),
            learned.entries.len()
        ),
    );

    let worst = analytic
        .max_decomposition_residual
        .max(learned.max_decomposition_residual);
    let tested = analytic.entries.len() + learned.entries.len();
    let c3 = report(
        3,
        worst < 1e-12,
        &format!("max decomposition residual {worst:.2e} over {tested} instances"),
    );
    (c2, c3)
}

struct SeedResult {
    recon_none: f64,
    recon_corrected: f64,
    region_none: f64,
    region_empty: f64,
    region_edit: f64,
    full_empty: f64,
    full_straight: f64,
}

fn seed_result(field: &VelocityField, cfg: &ExperimentConfig) -> SeedResult {
    let recon = evaluate(field, cfg, &reconstruction_methods(cfg), Reference::Input).unwrap();
    let prompt = cfg.task.prompt();
    let edit = |kind: CorrectorKind| Method::new(kind.as_str(), prompt, corrector(cfg, kind));
    let methods = [
        edit(CorrectorKind::None),
        edit(CorrectorKind::EmptyPrompt),
        edit(CorrectorKind::EditPrompt),
        edit(CorrectorKind::StraightPath),
    ];
    let eds = evaluate(field, cfg, &methods, Reference::GroundTruth).unwrap();
    SeedResult {
        recon_none: recon[0].mean_psnr_full(),
        recon_corrected: recon[1].mean_psnr_full(),
        region_none: eds[0].mean_psnr_region(),
        region_empty: eds[1].mean_psnr_region(),
        region_edit: eds[2].mean_psnr_region(),
        full_empty: eds[1].mean_psnr_full(),
        full_straight: eds[3].mean_psnr_full(),
    }
}

fn corrector(cfg: &ExperimentConfig, kind: CorrectorKind) -> CorrectorConfig {
    if kind == CorrectorKind::None {
        CorrectorConfig::baseline()
    } else {
        CorrectorConfig {
            kind,
            ..cfg.corrector.clone()
        }
    }
}

fn criterion_4(seed0: &VelocityField, seed0_train_secs: f64) -> bool {
    let start = Instant::now();
    let mut results = Vec::new();
    for seed in 0..4u64 {
        let cfg = config(seed);
        assert_eq!(cfg.eval_size, 64);
        let owned;
        let field = if seed == 0 {
            seed0
        } else {
            owned = train_model(&cfg).unwrap().0;
            &owned
        };
        let r = seed_result(field, &cfg);
        let mut out = std::io::stdout().lock();
        writeln!(
            out,
            "  seed {seed}: recon {:.4} -> {:.4}; region none {:.4}, empty {:.4}, edit {:.4}; full empty {:.4}, straight {:.4}",
            r.recon_none, r.recon_corrected, r.region_none, r.region_empty, r.region_edit, r.full_empty, r.full_straight
        )
        .unwrap();
        results.push(r);
    }
    let secs = start.elapsed().as_secs_f64() + seed0_train_secs;
    let count = |f: fn(&SeedResult) -> bool| results.iter().filter(|r| f(r)).count();
    let a = count(|r| r.recon_corrected > r.recon_none);
    let b = count(|r| r.region_empty > r.region_none);
    let c = count(|r| r.region_empty >= r.region_edit);
    let d = count(|r| r.full_empty >= r.full_straight);
    let pass = [a, b, c, d].iter().all(|&n| n >= 3) && secs < 900.0;
    report(
        4,
        pass,
        &format!("seeds holding (a) {a}/4, (b) {b}/4, (c) {c}/4, (d) {d}/4; {secs:.1}s including training"),
    )
}

fn criterion_5(field: &VelocityField) -> bool {
    let mut details = Vec::new();
    let mut pass = true;
    for m in [0, 1, 3, 9, 19] {
        let mut cfg = config(0);
        cfg.corrector.m = m;
        let r = overhead(field, &cfg).unwrap();
        let d = field.dim();
        let ok = r.exact
            && r.extra_dual_slots == m
            && r.extra_blends == m
            && r.corrected.blend_flops - r.baseline.blend_flops == 3 * d * m
            && r.baseline.prompt_slots == 20
            && r.corrected.forward_slots() == 20 + m;
        pass &= ok;
        details.push(format!(
            "M={m}: {} slots, {} blends",
            r.corrected.forward_slots(),
            r.corrected.blends
        ));
    }
    report(5, pass, &details.join("; "))
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn cli_run(out: &Path) -> bool {
    let small = [
        "--size",
        "16",
        "--eval-size",
        "3",
        "--steps",
        "40",
        "--batch-size",
        "8",
        "--hidden",
        "24",
    ];
    let ckpt = out.join("model.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    let commands: [&[&str]; 7] = [
        &["train"],
        &["reconstruct", "--checkpoint", ckpt],
        &["edit-eval", "--checkpoint", ckpt, "--record-states"],
        &["sweep", "--checkpoint", ckpt],
        &["overhead", "--checkpoint", ckpt],
        &["verify", "--checkpoint", ckpt, "--instances", "10"],
        &["gen-data"],
    ];
    commands.iter().all(|args| {
        Command::new(env!("CARGO_BIN_EXE_flowsteer"))
            .args(*args)
            .args(small)
            .arg("--out")
            .arg(out)
            .stdout(Stdio::null())
            .status()
            .map(|s| s.success())
            .unwrap_or(false)
    })
}

fn criterion_6() -> bool {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    if !(cli_run(&a) && cli_run(&b)) {
        return report(6, false, "a CLI command failed");
    }
    let (ta, tb) = (tree(&a), tree(&b));
    let differing: Vec<String> = ta
        .iter()
        .filter(|(p, bytes)| tb.get(*p) != Some(bytes))
        .map(|(p, _)| p.display().to_string())
        .collect();
    let pass = differing.is_empty() && ta.len() == tb.len();
    report(
        6,
        pass,
        &format!(
            "{} output files compared, {} differ {:?}",
            ta.len(),
            differing.len(),
            differing
        ),
    )
}

fn criterion_7() -> bool {
    let mut rng = stream(107, Stream::Verify);
    let image = |rng: &mut rand_chacha::ChaCha8Rng| {
        Tensor::new(vec![20, 20], (0..400).map(|_| rng.gen::<f64>()).collect()).unwrap()
    };
    let mut ssim_err: f64 = 0.0;
    for _ in 0..5 {
        let a = image(&mut rng);
        let b = a.zip_map(&image(&mut rng), |x, n| 0.6 * x + 0.4 * n).unwrap();
        ssim_err = ssim_err.max((ssim(&a, &b, None).unwrap() - common::ssim_direct(&a, &b, None)).abs());
    }
    let xs: Vec<Tensor> = (0..8).map(|_| standard_normal(&mut rng, &[10])).collect();
    let ys: Vec<Tensor> = (0..8)
        .map(|_| standard_normal(&mut rng, &[10]).map(|v| 0.8 * v + 0.3))
        .collect();
    let mmd_err = (kernel_mmd(&xs, &ys).unwrap() - common::mmd_double_loop(&xs, &ys)).abs();

    let zero = Tensor::zeros(&[8, 8]);
    let psnr_exact = psnr(&zero, &zero, None).unwrap() == f64::INFINITY
        && (psnr(&zero, &Tensor::full(&[8, 8], 0.1), None).unwrap() - 20.0).abs() < 1e-12
        && psnr(&zero, &Tensor::full(&[8, 8], 0.5), None).unwrap() == 10.0 * 4f64.log10()
        && psnr(&zero, &Tensor::full(&[8, 8], 1.0), None).unwrap() == 0.0;
    let pass = ssim_err < 1e-6 && mmd_err < 1e-10 && psnr_exact;
    report(
        7,
        pass,
        &format!("SSIM error {ssim_err:.2e}, MMD error {mmd_err:.2e}, PSNR closed forms exact: {psnr_exact}"),
    )
}

#[test]
fn acceptance() {
    let start = Instant::now();
    let seed0 = train_model(&config(0)).unwrap().0;
    let seed0_train_secs = start.elapsed().as_secs_f64();
    let c1 = criterion_1(&seed0);
    let (c2, c3) = criteria_2_and_3(&seed0);
    let c4 = criterion_4(&seed0, seed0_train_secs);
    let c5 = criterion_5(&seed0);
    let c6 = criterion_6();
    let c7 = criterion_7();
    assert!(c1 && c2 && c3 && c4 && c5 && c6 && c7, "see the FAIL lines above");
}
