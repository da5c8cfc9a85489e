use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splitjscc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn tiny_config(dir: &Path, extra: &str) -> String {
    let text = format!(
        r#"{{
  "dataset": {{ "kind": "synthetic", "class_count": 2, "train_per_class": 24, "test_per_class": 8 }},
  "backbone": {{
    "block_widths": [[64, 2], [128, 2], [256, 3], [512, 3], [512, 3]],
    "classifier_dims": [512, 512, 2], "num_classes": 2, "width_scale": 0.0625
  }},
  "pruning_ratio": 0.25,
  "c_enc": 2,
  "snr_db_list": [0, 20],
  "pipeline": {{
    "phase1": {{ "epochs": 1, "schedule": {{ "base": 0.01, "milestones": [], "gamma": 0.1 }} }},
    "phase2": {{ "target_ratio": 0.0, "n_remove": 512, "finetune_epochs": 1, "finetune_lr": 0.001, "saliency_batches": 1, "min_filters": 1 }},
    "phase3": {{ "epochs": 1, "lr": 0.01 }},
    "phase4": {{ "epochs": 1, "lr": 0.001 }},
    "batch_size": 16, "augment": null, "eval_each_epoch": false
  }},
  "seed": 3,
  "output_dir": "{}"{extra}
}}"#,
        dir.join("out").display()
    );
    let p = dir.join("cfg.json");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn flops_needs_no_data() {
    let o = bin(&["flops", "--split", "2", "--ratio", "0.5", "--c-enc", "32"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.starts_with("layer,flops\n"));
    assert!(out.contains("device_total,25167872\n"));
    assert!(out.contains("bandwidth,512\n"));
    let o = bin(&["flops", "--split", "5", "--c-enc", "8", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["bandwidth"], 8);
}

#[test]
fn config_errors_exit_1() {
    assert_eq!(code(&bin(&["flops", "--split", "6"])), 1);
    assert_eq!(code(&bin(&["eval", "--config", "/nonexistent/cfg.json"])), 1);
    // default dataset path is absent
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&bin(&["eval", "--out", dir.path().to_str().unwrap()])), 1);
    assert_eq!(code(&bin(&["flops", "--ratio", "1.5"])), 1);
    assert_eq!(code(&bin(&["bogus"])), 1);
    assert_eq!(code(&bin(&["--help"])), 0);
}

#[test]
fn eval_then_frontier() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let o = bin(&["eval", "--config", &cfg, "--seed", "5", "--snr-db", "-5,10,20"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("split,ratio,c_enc,bandwidth,snr_db,accuracy,device_flops,baseline_accuracy,seed"));
    // flags override the file's seed and SNR list
    assert!(lines[1].starts_with("2,0.25,2,32,-5.0,"));
    assert_eq!(lines[1].split(',').nth(8), Some("5"));

    let o = bin(&["frontier", "--config", &cfg, "--format", "json"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v.is_array());
    assert!(dir.path().join("out/frontier.json").is_file());
    assert!(dir.path().join("out/frontier_plot.csv").is_file());
}

#[test]
fn staged_subcommands_resume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let o = bin(&["pretrain", "--config", &cfg]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("trained pretrain-"));
    let o = bin(&["e2e", "--config", &cfg, "--resume"]);
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(!out.contains("pretrain-"), "{out}");
    assert!(out.contains("trained e2e-"));
    let o = bin(&["e2e", "--config", &cfg, "--resume"]);
    assert!(!String::from_utf8(o.stdout).unwrap().contains("trained"));
}

#[test]
fn partial_sweep_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), r#", "sweep": { "splits": [2], "ratios": [0.0], "c_encs": [2, 5000] }"#);
    let o = bin(&["sweep", "--config", &cfg]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 3);
}

#[test]
fn runtime_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    std::fs::create_dir_all(dir.path().join("out")).unwrap();
    std::fs::write(dir.path().join("out/results.csv"), "split,ratio\nnot,a row\n").unwrap();
    assert_eq!(code(&bin(&["frontier", "--config", &cfg])), 2);
}
