use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
synth.base_classes = 6
synth.val_classes = 2
synth.novel_classes = 5
synth.per_class = 30
ssl.batch_size = 32
ssl.queue_size = 64
ssl.epochs = 3
ssl.hidden_dims = 16
ssl.emb_dim = 8
sup.epochs = 3
sup.hidden_dims = 16
sup.emb_dim = 8
eval.episodes = 20
eval.queries = 5
";

fn fslab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fslab"))
        .args(args)
        .output()
        .expect("spawn fslab")
}

fn ok(args: &[&str]) -> String {
    let out = fslab(args);
    assert!(
        out.status.success(),
        "fslab {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

struct Run {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

/// synth → train fsl and ubc-tfsl → embed both → fuse → eval.
fn pipeline() -> Run {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let cfg = p(&root, "small.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    ok(&["synth", "--config", &cfg, "--seed", "3", "--out", &p(&root, "d")]);
    for setting in ["fsl", "ubc-tfsl"] {
        ok(&[
            "train",
            "--data",
            &p(&root, "d"),
            "--setting",
            setting,
            "--config",
            &cfg,
            "--seed",
            "3",
            "--out",
            &p(&root, &format!("{setting}.fslm")),
        ]);
        ok(&[
            "embed",
            "--model",
            &p(&root, &format!("{setting}.fslm")),
            "--data",
            &p(&root, "d"),
            "--out",
            &p(&root, &format!("{setting}.fslf")),
        ]);
    }
    ok(&[
        "fuse",
        "--a",
        &p(&root, "fsl.fslf"),
        "--b",
        &p(&root, "ubc-tfsl.fslf"),
        "--out",
        &p(&root, "combined.fslf"),
    ]);
    let summary = ok(&[
        "eval",
        "--features",
        &p(&root, "combined.fslf"),
        "--meta",
        &p(&root, "d.meta.csv"),
        "--config",
        &cfg,
        "--shots",
        "1",
        "--seed",
        "3",
        "--out",
        &p(&root, "report.json"),
    ]);
    std::fs::write(root.join("summary.txt"), summary).unwrap();
    Run { _dir: dir, root }
}

#[test]
fn full_chain_writes_every_artifact() {
    let run = pipeline();
    let r = &run.root;
    for f in [
        "d.meta.csv",
        "d.fslf",
        "d.config.txt",
        "fsl.fslm",
        "fsl.fslm.loss.csv",
        "fsl.fslm.config.txt",
        "ubc-tfsl.fslm",
        "ubc-tfsl.fslf",
        "combined.fslf",
        "report.json",
    ] {
        assert!(r.join(f).exists(), "missing {f}");
    }
    let meta = std::fs::read_to_string(r.join("d.meta.csv")).unwrap();
    assert!(meta.starts_with("id,label,split\n"));
    assert_eq!(meta.lines().count(), 1 + (6 + 2 + 5) * 30);
    let trace = std::fs::read_to_string(r.join("ubc-tfsl.fslm.loss.csv")).unwrap();
    assert!(trace.starts_with("step,epoch,lr,loss\n"));

    let echo = std::fs::read_to_string(r.join("fsl.fslm.config.txt")).unwrap();
    assert!(echo.contains("seed=3\n") && echo.contains("ssl.emb_dim=8\n"));

    let summary = std::fs::read_to_string(r.join("summary.txt")).unwrap();
    let acc = summary.trim().rsplit(' ').next().unwrap();
    let (mean, ci) = acc.split_once('±').expect("NN.NN±C.CC");
    assert_eq!(mean.split_once('.').unwrap().1.len(), 2);
    assert_eq!(ci.split_once('.').unwrap().1.len(), 2);

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(r.join("report.json")).unwrap()).unwrap();
    for key in [
        "ways",
        "shots",
        "queries",
        "episodes",
        "seed",
        "mean_acc",
        "ci95",
        "per_episode_acc",
        "feature_file",
        "probe_config",
        "config",
    ] {
        assert!(report.get(key).is_some(), "report lacks {key}");
    }
    assert_eq!(report["per_episode_acc"].as_array().unwrap().len(), 20);
    assert_eq!(report["config"]["eval.queries"], "5");
    assert_eq!(report["summary"].as_str().unwrap(), acc);
}

#[test]
fn chain_is_bit_reproducible() {
    let a = pipeline();
    let b = pipeline();
    for f in ["d.fslf", "d.meta.csv", "fsl.fslm", "ubc-tfsl.fslm", "combined.fslf", "fsl.fslm.loss.csv"] {
        assert_eq!(
            std::fs::read(a.root.join(f)).unwrap(),
            std::fs::read(b.root.join(f)).unwrap(),
            "{f} differs"
        );
    }
    let ra: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.root.join("report.json")).unwrap()).unwrap();
    let mut rb: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(b.root.join("report.json")).unwrap()).unwrap();
    rb["feature_file"] = ra["feature_file"].clone();
    assert_eq!(ra, rb);
}

#[test]
fn curve_reports_each_shot_count() {
    let run = pipeline();
    let out = ok(&[
        "curve",
        "--features",
        &p(&run.root, "fsl.fslf"),
        "--meta",
        &p(&run.root, "d.meta.csv"),
        "--shots-list",
        "1,5,20",
        "--episodes",
        "10",
        "--queries",
        "5",
        "--out",
        &p(&run.root, "curve.json"),
    ]);
    assert_eq!(out.lines().count(), 3);
    assert!(out.contains("5-way 20-shot: "));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.root.join("curve.json")).unwrap()).unwrap();
    let shots: Vec<u64> = v["reports"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["shots"].as_u64().unwrap())
        .collect();
    assert_eq!(shots, [1, 5, 20]);
}

#[test]
fn penultimate_layer_is_selectable() {
    let run = pipeline();
    let out = ok(&[
        "embed",
        "--model",
        &p(&run.root, "fsl.fslm"),
        "--data",
        &p(&run.root, "d"),
        "--layer",
        "penultimate",
        "--out",
        &p(&run.root, "pen.fslf"),
    ]);
    assert!(out.contains("x 8 features"), "{out}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = p(root, "small.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    ok(&["synth", "--config", &cfg, "--out", &p(root, "d")]);

    let tfsl = fslab(&["train", "--data", &p(root, "d"), "--setting", "tfsl", "--out", &p(root, "m")]);
    assert_eq!(tfsl.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&tfsl.stderr).contains("TFSL"));
    assert!(!root.join("m").exists());

    assert_eq!(fslab(&["eval", "--bogus"]).status.code(), Some(1));
    assert_eq!(fslab(&[]).status.code(), Some(1));
    assert_eq!(fslab(&["--help"]).status.code(), Some(0));
    let bad_key = fslab(&["synth", "--set", "ssl.nope=1", "--out", &p(root, "x")]);
    assert_eq!(bad_key.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_key.stderr).contains("ssl.nope"));
    let bad_setting = fslab(&["train", "--data", &p(root, "d"), "--setting", "semi", "--out", &p(root, "m")]);
    assert_ne!(bad_setting.status.code(), Some(0));

    let missing = fslab(&["eval", "--features", &p(root, "nope.fslf"), "--meta", &p(root, "d.meta.csv")]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.fslf"));

    std::fs::write(root.join("junk.fslf"), b"XXXX0000").unwrap();
    let junk = fslab(&["eval", "--features", &p(root, "junk.fslf"), "--meta", &p(root, "d.meta.csv")]);
    assert_eq!(junk.status.code(), Some(2));

    // only 5 novel classes: a 6-way episode cannot be drawn
    let wide = fslab(&[
        "eval",
        "--features",
        &p(root, "d.fslf"),
        "--meta",
        &p(root, "d.meta.csv"),
        "--ways",
        "6",
        "--episodes",
        "3",
    ]);
    assert_eq!(wide.status.code(), Some(2));

    let diverge = fslab(&[
        "train",
        "--data",
        &p(root, "d"),
        "--setting",
        "fsl",
        "--config",
        &cfg,
        "--set",
        "sup.lr=1e300",
        "--out",
        &p(root, "big.fslm"),
    ]);
    assert_eq!(diverge.status.code(), Some(3), "{}", String::from_utf8_lossy(&diverge.stderr));
}

/// Reverses the label column within each split; split membership is untouched.
fn poison_labels(meta: &Path) {
    let text = std::fs::read_to_string(meta).unwrap();
    let mut lines: Vec<Vec<String>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    for split in ["base", "val", "novel"] {
        let idx: Vec<usize> = (0..lines.len()).filter(|&i| lines[i][2] == split).collect();
        let labels: Vec<String> = idx.iter().rev().map(|&i| lines[i][1].clone()).collect();
        for (&i, l) in idx.iter().zip(labels) {
            lines[i][1] = l;
        }
    }
    let mut out = String::from("id,label,split\n");
    for l in lines {
        out += &l.join(",");
        out.push('\n');
    }
    assert_ne!(out, text);
    std::fs::write(meta, out).unwrap();
}

#[test]
fn unlabeled_settings_ignore_poisoned_labels() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = p(root, "small.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    ok(&["synth", "--config", &cfg, "--out", &p(root, "clean")]);
    ok(&["synth", "--config", &cfg, "--out", &p(root, "dirty")]);
    poison_labels(&root.join("dirty.meta.csv"));

    for setting in ["ubc-fsl", "ubc-tfsl", "fsl"] {
        let mut models = Vec::new();
        for data in ["clean", "dirty"] {
            let model = p(root, &format!("{data}-{setting}.fslm"));
            ok(&[
                "train",
                "--data",
                &p(root, data),
                "--setting",
                setting,
                "--config",
                &cfg,
                "--out",
                &model,
            ]);
            models.push(std::fs::read(&model).unwrap());
        }
        if setting == "fsl" {
            assert_ne!(models[0], models[1], "supervised training must see the labels");
        } else {
            assert_eq!(models[0], models[1], "{setting} depends on labels");
        }
    }
}
