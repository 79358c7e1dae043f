use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::CommandFactory;
use vispgan::synthcorpus::{CorpusConfig, SplitCounts};
use vispgan::VideoClip;
use vispgan_cli::{Cli, RunManifest};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vispgan"));
    c.env_remove("VISPGAN_DATA_DIR").env("RUST_LOG", "warn");
    c
}

fn run(data: &Path, args: &[&str]) -> Output {
    bin()
        .env("VISPGAN_DATA_DIR", data)
        .args(args)
        .output()
        .unwrap()
}

#[track_caller]
fn ok(data: &Path, args: &[&str]) {
    let out = run(data, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn every_flag_is_documented() {
    let cmd = Cli::command();
    let mut checked = 0;
    for sub in cmd.get_subcommands() {
        let mut sub = sub.clone();
        let help = sub.render_long_help().to_string();
        for arg in sub.get_arguments() {
            let Some(long) = arg.get_long() else { continue };
            if long == "help" {
                continue;
            }
            assert!(
                arg.get_help().is_some(),
                "{} --{long} has no help text",
                sub.get_name()
            );
            assert!(
                help.contains(&format!("--{long}")),
                "{} help omits --{long}",
                sub.get_name()
            );
            checked += 1;
        }
    }
    let names: Vec<&str> = cmd.get_subcommands().map(|s| s.get_name()).collect();
    assert_eq!(
        names,
        [
            "make-corpus",
            "pretrain-cls",
            "train",
            "train-aux",
            "generate",
            "evaluate",
            "blend",
            "plot"
        ]
    );
    assert!(checked > 40);
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let help = run(dir.path(), &["train", "--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("--stop-after-epochs"));
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        run(dir.path(), &["train", "--bogus"]).status.code(),
        Some(1)
    );
    let missing = run(dir.path(), &["pretrain-cls"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error"));
    let bad_mode = run(dir.path(), &["train", "--mode", "pix2pix"]);
    assert_eq!(bad_mode.status.code(), Some(1));
}

fn tiny_corpus_config(path: &Path) {
    let mut cfg = CorpusConfig::desk();
    cfg.words = ["bad", "idea", "lit"].map(String::from).to_vec();
    cfg.counts = SplitCounts {
        train_per_word: 8,
        gan_fraction: 0.5,
        val_per_word: 2,
        test_per_word: 4,
    };
    fs::write(path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
}

fn manifest(path: PathBuf) -> RunManifest {
    RunManifest::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn full_pipeline_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let cfg = tmp.path().join("corpus.json");
    tiny_corpus_config(&cfg);
    let cfg_s = cfg.to_str().unwrap();

    ok(&data, &["make-corpus", "--config", cfg_s, "--seed", "3"]);
    let m = manifest(data.join("corpus/run_manifest.json"));
    assert_eq!(m.command, "make-corpus");
    assert_eq!(m.seeds["corpus"], 3);
    assert_eq!(m.config["seed"], 3, "flag overrides the config file");
    assert_eq!(m.input_hash.len(), 64);
    assert_eq!(
        run(&data, &["make-corpus", "--config", cfg_s])
            .status
            .code(),
        Some(1)
    );

    ok(&data, &["pretrain-cls", "--epochs", "2"]);
    ok(&data, &["train-aux", "--epochs", "2"]);
    assert!(data.join("classifier.vsck.manifest.json").exists());
    assert!(data.join("aux.metrics.csv").exists());

    let fast = ["--epochs", "2", "--batch-size", "4", "--n-critic", "1"];
    let mut args = vec!["train", "--mode", "stargan3d"];
    args.extend(fast);
    ok(&data, &args);
    let header = fs::read_to_string(data.join("gan-stargan3d/metrics.csv")).unwrap();
    let header = header.lines().next().unwrap();
    assert!(!header.contains("insp"), "{header}");

    // interrupted then resumed run matches its own bookkeeping
    let mut args = vec!["train", "--mode", "vispgan", "--stop-after-epochs", "1"];
    args.extend(fast);
    ok(&data, &args);
    assert_eq!(
        run(&data, &args).status.code(),
        Some(1),
        "refuses to overwrite a run"
    );
    ok(&data, &["train", "--mode", "vispgan", "--resume"]);
    let m = manifest(data.join("gan-vispgan/run_manifest.json"));
    assert_eq!(m.summary["epochs_done"], 2);
    assert_eq!(m.summary["generator_steps"], 6);
    let metrics = fs::read_to_string(data.join("gan-vispgan/metrics.csv")).unwrap();
    assert!(metrics.lines().next().unwrap().contains("insp_real"));
    assert_eq!(metrics.lines().count(), 1 + 6);

    // generate from a test clip
    let test_clip = fs::read_dir(data.join("corpus"))
        .unwrap()
        .flat_map(|e| walk(e.unwrap().path()))
        .find(|p| {
            p.to_string_lossy().contains("test") && p.extension().is_some_and(|x| x == "vsgc")
        })
        .expect("a test clip");
    let fake = tmp.path().join("fake.vsgc");
    let frames = tmp.path().join("frames");
    ok(
        &data,
        &[
            "generate",
            "--input",
            test_clip.to_str().unwrap(),
            "--word",
            "idea",
            "--out",
            fake.to_str().unwrap(),
            "--export",
            frames.to_str().unwrap(),
            "--aux",
            data.join("aux.vsck").to_str().unwrap(),
        ],
    );
    let clip = vispgan::vsgc::read_clip(&fake).unwrap();
    assert_eq!(clip.dims(), [8, 16, 16, 3]);
    assert_eq!(fs::read_dir(&frames).unwrap().count(), 8);
    assert!(
        manifest(tmp.path().join("fake.vsgc.manifest.json")).summary["aux_prediction"].is_string()
    );
    let unknown = run(
        &data,
        &[
            "generate",
            "--input",
            test_clip.to_str().unwrap(),
            "--word",
            "zebra",
            "--out",
            fake.to_str().unwrap(),
        ],
    );
    assert_eq!(unknown.status.code(), Some(1));
    let in_place = run(
        &data,
        &[
            "generate",
            "--input",
            fake.to_str().unwrap(),
            "--word",
            "lit",
            "--out",
            fake.to_str().unwrap(),
        ],
    );
    assert_eq!(in_place.status.code(), Some(1));

    // evaluation is byte-identical on rerun and covers both modes
    let r1 = tmp.path().join("r1.json");
    let r2 = tmp.path().join("r2.json");
    for r in [&r1, &r2] {
        ok(
            &data,
            &[
                "evaluate",
                "--per-target",
                "4",
                "--out",
                r.to_str().unwrap(),
            ],
        );
    }
    let (b1, b2) = (fs::read(&r1).unwrap(), fs::read(&r2).unwrap());
    assert_eq!(b1, b2);
    let report: serde_json::Value = serde_json::from_slice(&b1).unwrap();
    assert_eq!(report["models"].as_array().unwrap().len(), 2);
    assert!(report["ablation"]["vispgan_at_least_stargan3d"].is_boolean());

    // blending
    let regions = tmp.path().join("regions.json");
    fs::write(&regions, r#"{"0": [2, 3, 8, 9], "5": [0, 0, 16, 16]}"#).unwrap();
    let blended = tmp.path().join("blended.vsgc");
    ok(
        &data,
        &[
            "blend",
            "--original",
            test_clip.to_str().unwrap(),
            "--generated",
            fake.to_str().unwrap(),
            "--regions",
            regions.to_str().unwrap(),
            "--out",
            blended.to_str().unwrap(),
        ],
    );
    let original: VideoClip = vispgan::vsgc::read_clip(&test_clip).unwrap();
    let out = vispgan::vsgc::read_clip(&blended).unwrap();
    assert_eq!(out.frame(1), original.frame(1));
    assert_ne!(out.frame(0), original.frame(0));
    fs::write(&regions, r#"{"0": [10, 10, 8, 8]}"#).unwrap();
    let outside = run(
        &data,
        &[
            "blend",
            "--original",
            test_clip.to_str().unwrap(),
            "--generated",
            fake.to_str().unwrap(),
            "--regions",
            regions.to_str().unwrap(),
            "--out",
            blended.to_str().unwrap(),
        ],
    );
    assert_eq!(outside.status.code(), Some(1));

    // plots
    let csv = data.join("gan-vispgan/metrics.csv");
    for dir in ["p1", "p2"] {
        let d = tmp.path().join(dir);
        ok(
            &data,
            &[
                "plot",
                "--metrics",
                csv.to_str().unwrap(),
                "--report",
                r1.to_str().unwrap(),
                "--out-dir",
                d.to_str().unwrap(),
            ],
        );
    }
    for name in [
        "d_loss.svg",
        "g_loss.svg",
        "insp_fake.svg",
        "evaluation.svg",
    ] {
        let a = fs::read(tmp.path().join("p1").join(name)).unwrap();
        assert_eq!(
            a,
            fs::read(tmp.path().join("p2").join(name)).unwrap(),
            "{name}"
        );
    }
    let missing = run(
        &data,
        &[
            "plot",
            "--metrics",
            csv.to_str().unwrap(),
            "--columns",
            "d_loss,nonexistent",
        ],
    );
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nonexistent"));
}

fn walk(p: PathBuf) -> Vec<PathBuf> {
    if p.is_dir() {
        fs::read_dir(&p)
            .unwrap()
            .flat_map(|e| walk(e.unwrap().path()))
            .collect()
    } else {
        vec![p]
    }
}
