use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &[(&str, &str)] = &[
    ("--size", "16"),
    ("--eval-size", "2"),
    ("--steps", "30"),
    ("--batch-size", "8"),
    ("--hidden", "16"),
];

fn flowsteer(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowsteer"))
        .args(args)
        .args(
            SMALL
                .iter()
                .filter(|(flag, _)| !args.contains(flag))
                .flat_map(|(f, v)| [f, v]),
        )
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) -> String {
    let o = flowsteer(args, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
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

/// Runs train and every evaluation command into `out`.
fn full_run(out: &Path) {
    ok(&["train"], out);
    let ckpt = out.join("model.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    for cmd in ["reconstruct", "edit-eval", "sweep", "overhead"] {
        ok(&[cmd, "--checkpoint", ckpt], out);
    }
    ok(
        &["edit-eval", "--checkpoint", ckpt, "--record-states"],
        &out.join("states"),
    );
    ok(&["verify", "--instances", "10"], out);
    ok(&["gen-data"], out);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    full_run(&a);
    full_run(&b);
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.len() > 20);
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (path, bytes) in &ta {
        assert!(bytes == &tb[path], "{} differs", path.display());
    }
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

#[test]
fn row_counts_and_overhead() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&["train"], out);
    let ckpt = out.join("model.ckpt");
    let ckpt = ckpt.to_str().unwrap();

    ok(&["reconstruct", "--checkpoint", ckpt], out);
    assert_eq!(lines(&out.join("reconstruct_samples.csv")).len(), 1 + 2 * 2);
    assert_eq!(lines(&out.join("reconstruct_summary.csv")).len(), 1 + 2);

    ok(&["edit-eval", "--checkpoint", ckpt], out);
    let summary = lines(&out.join("edit_eval_summary.csv"));
    let methods: Vec<&str> = summary[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        methods,
        [
            "none",
            "empty-prompt",
            "edit-prompt",
            "straight-path",
            "flowchef",
            "noise-inversion"
        ]
    );
    assert!(out.join("trajectories/empty-prompt.json").exists());

    ok(&["sweep", "--checkpoint", ckpt], out);
    assert_eq!(lines(&out.join("sweep.csv")).len(), 1 + 8);
    assert!(fs::read_to_string(out.join("sweep.svg")).unwrap().starts_with("<svg"));

    let report: serde_json::Value = serde_json::from_str(&ok(&["overhead", "--checkpoint", ckpt], out)).unwrap();
    assert_eq!(report["baseline"]["prompt_slots"], 20);
    assert_eq!(
        report["corrected"]["prompt_slots"].as_u64().unwrap() + report["corrected"]["empty_slots"].as_u64().unwrap(),
        23
    );
    assert_eq!(report["extra_dual_slots"], 3);
    assert_eq!(report["extra_blends"], 3);
    assert_eq!(report["corrected"]["blend_flops"], 3 * 256 * 3);
    assert_eq!(report["exact"], true);

    let report: serde_json::Value =
        serde_json::from_str(&ok(&["overhead", "--checkpoint", ckpt, "--m", "0"], out)).unwrap();
    assert_eq!(report["baseline"], report["corrected"]);
}

#[test]
fn zero_steps_writes_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["train", "--steps", "0"], &a);
    ok(&["train", "--steps", "0", "--learning-rate", "0.5"], &b);
    assert_eq!(
        fs::read(a.join("model.ckpt")).unwrap(),
        fs::read(b.join("model.ckpt")).unwrap()
    );
    assert_eq!(lines(&a.join("train_loss.csv")), ["step,loss"]);
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();

    let o = flowsteer(&["train", "--learning-rate", "1e300"], out);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    let o = flowsteer(&["reconstruct"], out);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));

    let o = flowsteer(&["reconstruct", "--checkpoint", "/nonexistent/model.ckpt"], out);
    assert_eq!(o.status.code(), Some(1));

    let o = flowsteer(&["sweep", "--m", "20"], out);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("must be below"));

    let o = flowsteer(&["edit-eval", "--corrector", "bogus"], out);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# verify settings\ninstances = 7\nseed = 9\n").unwrap();
    let text = ok(
        &["verify", "--config", cfg.to_str().unwrap(), "--instances", "5"],
        dir.path(),
    );
    assert!(text.starts_with("5 instances"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["entries"].as_array().unwrap().len(), 5);
    assert_eq!(report["passed"], true);
}

#[test]
fn verify_on_trained_checkpoint_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&["train"], out);
    let ckpt = out.join("model.ckpt");
    let o = flowsteer(
        &["verify", "--checkpoint", ckpt.to_str().unwrap(), "--instances", "12"],
        out,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
