use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--num_train", "120", "--num_dev", "30", "--num_test", "40", "--vocab_per_lang", "20",
    "--embed_dim", "8", "--num_heads", "2", "--mlp_hidden", "16", "--num_layers", "1",
    "--max_steps", "40", "--eval_interval", "10", "--measurer_max_steps", "30",
];

fn pcs(cmd: &str, dir: &Path, extra: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_pcs"))
        .arg(cmd)
        .arg("--data_dir")
        .arg(dir.join("data"))
        .arg("--out_dir")
        .arg(dir.join("runs"))
        .args(TINY)
        .args(extra)
        .env("RUST_LOG", "info")
        .output()
        .unwrap();
    out
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn synth_is_deterministic_and_complete() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(pcs("synth", a.path(), &["--num_languages", "3"]));
    ok(pcs("synth", b.path(), &["--num_languages", "3"]));
    let files = listing(&a.path().join("data"));
    assert_eq!(files, listing(&b.path().join("data")));
    let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    for expected in ["train.tsv", "dev.tsv", "manifest.json"] {
        assert!(names.contains(&expected), "{names:?}");
    }
    let dicts = names.iter().filter(|n| n.starts_with("dict.")).count();
    let target_tests = names.iter().filter(|n| n.starts_with("test.") && **n != "test.en.tsv").count();
    assert_eq!((dicts, target_tests), (2, 2), "{names:?}");

    let c = tempfile::tempdir().unwrap();
    ok(pcs("synth", c.path(), &["--num_languages", "3", "--seed", "2"]));
    assert_ne!(files, listing(&c.path().join("data")));
}

#[test]
fn config_errors_exit_with_code_2() {
    let d = tempfile::tempdir().unwrap();
    let out = pcs("synth", d.path(), &["--no_such_key", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
    let out = pcs("train", d.path(), &["--delta", "0.3"]);
    assert_eq!(out.status.code(), Some(2));

    let cfg = d.path().join("bad.cfg");
    fs::write(&cfg, "mode = sideways\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pcs"))
        .args(["train", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn export_without_checkpoint_fails_clearly() {
    let d = tempfile::tempdir().unwrap();
    ok(pcs("synth", d.path(), &[]));
    let missing = d.path().join("nowhere.ckpt");
    let out = pcs("export", d.path(), &["--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.ckpt"));
    let out = pcs("export", d.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn measure_train_eval_export_pipeline() {
    let d = tempfile::tempdir().unwrap();
    let runs = d.path().join("runs");
    ok(pcs("synth", d.path(), &[]));

    ok(pcs("measure", d.path(), &["--seeds", "1"]));
    let profiles = runs.join("measurer/seed1/profiles-lrp-abs_sum.train.jsonl");
    let first = fs::read(&profiles).unwrap();
    let again = ok(pcs("measure", d.path(), &["--seeds", "1"]));
    assert!(String::from_utf8_lossy(&again.stderr).contains("reusing"));
    assert_eq!(fs::read(&profiles).unwrap(), first);
    ok(pcs("measure", d.path(), &["--seeds", "1", "--measurer", "gradient"]));
    assert!(runs.join("measurer/seed1/profiles-gradient-abs_sum.train.jsonl").is_file());

    ok(pcs("train", d.path(), &["--mode", "pcs", "--seeds", "1,2", "--dump_stages", "true"]));
    for seed in [1, 2] {
        let dir = runs.join(format!("pcs/seed{seed}"));
        assert!(dir.join("metrics.csv").is_file());
        assert!(dir.join("trace.jsonl").is_file());
        assert!(dir.join("final.ckpt").is_file());
        let stage1 = fs::read_to_string(dir.join("stages/stage1.tsv")).unwrap();
        assert_eq!(stage1.lines().count(), 120);
    }
    let curve = fs::read_to_string(runs.join("pcs/curve.csv")).unwrap();
    assert!(curve.starts_with("step,mean,std,runs\n"));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(runs.join("pcs/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["mode"], "pcs");
    assert!(manifest["version"].is_string());

    let metrics = fs::read(runs.join("pcs/seed1/metrics.csv")).unwrap();
    ok(pcs("train", d.path(), &["--mode", "pcs", "--seeds", "1"]));
    assert_eq!(fs::read(runs.join("pcs/seed1/metrics.csv")).unwrap(), metrics);

    ok(pcs("train", d.path(), &["--mode", "no_cs", "--seeds", "1"]));
    let no_cs = fs::read_to_string(runs.join("no_cs/seed1/metrics.csv")).unwrap();
    assert!(no_cs.lines().skip(1).all(|l| l.split(',').nth(2) == Some("0")));

    let eval = ok(pcs("eval", d.path(), &["--target_langs", "de,fr"]));
    let table = String::from_utf8_lossy(&eval.stdout);
    let header = table.lines().next().unwrap();
    assert!(header.contains("de") && header.contains("fr") && header.contains("Avg"), "{table}");
    assert_eq!(table.lines().count(), 4, "{table}");
    let csv = fs::read_to_string(runs.join("eval.csv")).unwrap();
    assert!(csv.starts_with("model,acc_de,acc_fr,avg\n"));

    let ckpt = runs.join("pcs/seed1/final.ckpt");
    ok(pcs("export", d.path(), &["--checkpoint", ckpt.to_str().unwrap(), "--seeds", "1,2"]));
    let export = runs.join("export");
    let emb = fs::read_to_string(export.join("embeddings.csv")).unwrap();
    assert_eq!(emb.lines().count(), 1 + 40 * 3);
    assert!(emb.lines().all(|l| l.split(',').count() == 9));
    let sim = fs::read_to_string(export.join("similarity.csv")).unwrap();
    assert!(sim.starts_with("source,target,known,cosine\n"));
    let curve = fs::read_to_string(export.join("curve-pcs.csv")).unwrap();
    assert!(curve.lines().nth(1).unwrap().ends_with(",2"));
}

#[test]
fn ablate_runs_every_mode() {
    let d = tempfile::tempdir().unwrap();
    ok(pcs("synth", d.path(), &[]));
    ok(pcs("ablate", d.path(), &["--seeds", "1", "--max_steps", "20"]));
    let table = fs::read_to_string(d.path().join("runs/ablation.csv")).unwrap();
    let modes: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        modes,
        ["pcs", "no_cl", "ratio_cl", "grad_cl", "anti_cl", "tgt_only", "no_scheduler", "no_cs"]
    );
    let header = |m: &str| {
        fs::read_to_string(d.path().join(format!("runs/{m}/seed1/metrics.csv")))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string()
    };
    assert!(modes.iter().all(|m| header(m) == header("pcs")));
}
