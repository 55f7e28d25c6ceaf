use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn actgad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_actgad"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config() -> Value {
    json!({
        "data": {
            "kind": "synthetic",
            "source": {"nodes": 120, "dim": 8, "anomaly_ratio": 0.1},
            "target": {"nodes": 100, "dim": 6, "anomaly_ratio": 0.1},
            "communities": 3,
            "p_intra": 0.15,
            "p_inter": 0.01,
            "community_decay": 0.8,
            "anomaly_group_size": 3,
            "structural_edges": 4,
            "attribute_shift": 2.0,
            "signature_jitter": 0.5,
            "benign_fraction": 0.05,
            "benign_shift": 1.0,
            "feature_noise": 0.5,
            "domain_shift": 1.0,
            "seed": 3
        },
        "train": {
            "source_epochs": 2,
            "align_epochs": 2,
            "refit_epochs": 2,
            "source_layers": [16, 16, 8],
            "target_layers": [8, 8, 8],
            "sampler": {"batch_size": 32},
            "forest": {"n_trees": 20, "subsample": 64},
            "monitor_nodes": 32
        },
        "seeds": [0, 1]
    })
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn init_writes_a_loadable_template() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("t.json");
    let o = actgad(&["init", p.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = read_json(&p);
    assert_eq!(v["seeds"], json!([0, 1, 2, 3, 4]));
    assert_eq!(v["train"]["alpha"], json!(2.5));
    assert_eq!(v["data"]["kind"], json!("synthetic"));
}

#[test]
fn generate_writes_six_files_and_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), &tiny_config());
    let a = d.path().join("a");
    let b = d.path().join("b");
    for out in [&a, &b] {
        let o = actgad(&["generate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut files = vec![];
    for dom in ["source", "target"] {
        for f in fs::read_dir(a.join(dom)).unwrap() {
            files.push(PathBuf::from(dom).join(f.unwrap().file_name()));
        }
    }
    assert_eq!(files.len(), 6);
    files.push(PathBuf::from("manifest.json"));
    for f in &files {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{}", f.display());
    }
}

#[test]
fn invalid_anomaly_ratio_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    let mut c = tiny_config();
    c["data"]["source"]["anomaly_ratio"] = json!(0.3);
    let cfg = write_config(d.path(), &c);
    let o = actgad(&["generate", "--config", cfg.to_str().unwrap(), "--out", d.path().join("g").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("anomaly ratio"));
}

#[test]
fn align_without_pretrain_names_the_missing_stage() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), &tiny_config());
    let out = d.path().join("run");
    let o = actgad(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--stage", "align"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("pretrain"), "{}", stderr(&o));
}

#[test]
fn staged_run_then_sweep_and_export() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), &tiny_config());
    let out = d.path().join("run");
    let base = ["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    for stage in ["pretrain", "align", "selflabel"] {
        let mut args = vec!["run", "--stage", stage];
        args.extend(base);
        let o = actgad(&args);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    let summary = read_json(&out.join("metrics.json"));
    for v in ["con_only", "dom_only", "joint", "eta_s", "act_if", "full"] {
        let m = &summary[v];
        assert_eq!(m["runs"].as_array().unwrap().len(), 2, "{v}");
        assert!(m["auc_roc"]["mean"].is_number() && m["auc_roc"]["std"].is_number());
        assert!(m["auc_pr"]["mean"].is_number() && m["auc_pr"]["std"].is_number());
    }
    assert!(out.join("seed-1/checkpoints/selflabel.bin").exists());
    assert!(out.join("seed-0/scores-full.csv").exists());

    let mut args = vec!["sweep-alpha", "--alphas", "2.0,2.25,2.5,2.75,3.0,50"];
    args.extend(base);
    let o = actgad(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("alpha_sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows[5].starts_with("50,") && rows[5].ends_with("degenerate"), "{}", rows[5]);

    let mut args = vec!["export-embeddings", "--seed", "1"];
    args.extend(base);
    assert!(actgad(&args).status.success());
    let path = out.join("seed-1/embeddings-align.csv");
    let first = fs::read(&path).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 4 + 8);
    assert_eq!(lines.clone().count(), 120 + 100);
    assert_eq!(lines.clone().filter(|l| l.contains(",source,")).count(), 120);
    assert!(lines.all(|l| l.split(',').count() == header.len()));
    assert!(actgad(&args).status.success());
    assert_eq!(fs::read(&path).unwrap(), first);
}

#[test]
fn contrastive_only_variant_records_no_sinkhorn_time() {
    let d = tempfile::tempdir().unwrap();
    let mut c = tiny_config();
    c["seeds"] = json!([0]);
    let cfg = write_config(d.path(), &c);
    let out = d.path().join("run");
    let base = ["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    let mut args = vec!["run", "--variant", "con_only"];
    args.extend(base);
    let o = actgad(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = read_json(&out.join("run_manifest.json"));
    assert_eq!(m["variants"], json!(["con_only"]));
    assert!(m["timings"][0].get("sinkhorn_seconds").is_none());

    let mut args = vec!["run", "--variant", "joint"];
    args.extend(base);
    assert!(actgad(&args).status.success());
    let m = read_json(&out.join("run_manifest.json"));
    assert!(m["timings"][0]["sinkhorn_seconds"]["joint"].is_number());
}

#[test]
fn unknown_variant_is_rejected_by_the_parser() {
    let o = actgad(&["run", "--variant", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_seed_list_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    let mut c = tiny_config();
    c["seeds"] = json!([]);
    let cfg = write_config(d.path(), &c);
    let o = actgad(&["run", "--config", cfg.to_str().unwrap(), "--out", d.path().join("r").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}
