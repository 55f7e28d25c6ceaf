use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use actgad::diffcore::Tensor2D;
use actgad::eval::MetricsReport;
use actgad::graph::{generate_cd_pair, write_cd_pair, AttributedGraph};
use actgad::pipeline::{
    embed_graph, run_seed, summarize, sweep_alpha as sweep, AlignMode, AlignTrace, RunStore, ScoreVector,
    SeedOutcome, Stage, Variant,
};
use actgad::{Error, Result};
use serde::Serialize;

use crate::config::{DataSource, RunConfig};
use crate::Common;

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(s) = &common.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

pub fn init(path: &Path) -> Result<()> {
    write_json(path, &RunConfig::default())?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

pub fn generate(common: &Common) -> Result<()> {
    let cfg = resolve(common)?;
    let DataSource::Synthetic(g) = &cfg.data else {
        return Err(Error::Config("generate needs a synthetic data section".into()));
    };
    let pair = generate_cd_pair(g)?;
    write_cd_pair(g, &pair, &cfg.out)?;
    eprintln!(
        "wrote {} ({} source nodes, {} target nodes)",
        cfg.out.display(),
        pair.source.node_count(),
        pair.target.node_count()
    );
    Ok(())
}

#[derive(Serialize)]
struct SeedTiming {
    seed: u64,
    seconds: f64,
    /// Seconds inside Sinkhorn solves, per alignment mode that ran them.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    sinkhorn_seconds: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    version: &'static str,
    stage: Stage,
    variants: Vec<&'static str>,
    seeds: &'a [u64],
    config: &'a RunConfig,
    timings: Vec<SeedTiming>,
}

#[derive(Serialize)]
struct Traces<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    pretrain: Option<&'a actgad::pipeline::PretrainTrace>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    align: BTreeMap<&'a str, AlignTrace>,
    #[serde(skip_serializing_if = "Option::is_none")]
    refit: Option<&'a actgad::pipeline::RefitTrace>,
}

fn scores_csv(s: &ScoreVector) -> String {
    let mut out = String::from("node_id,score\n");
    for (id, v) in s.node_ids.iter().zip(&s.scores) {
        writeln!(out, "{id},{v}").unwrap();
    }
    out
}

fn write_seed(dir: &Path, o: &SeedOutcome) -> Result<()> {
    if !o.metrics.is_empty() {
        write_json(&dir.join("metrics.json"), &o.metrics)?;
    }
    for (name, s) in &o.scores {
        write(&dir.join(format!("scores-{name}.csv")), &scores_csv(s))?;
    }
    let traces = Traces {
        pretrain: o.pretrain.as_ref(),
        // wall-clock fields go to the run manifest only
        align: o
            .align
            .iter()
            .map(|(k, t)| {
                (
                    k.as_str(),
                    AlignTrace {
                        sinkhorn_seconds: None,
                        ..t.clone()
                    },
                )
            })
            .collect(),
        refit: o.refit.as_ref(),
    };
    write_json(&dir.join("traces.json"), &traces)
}

fn metrics_table(summary: &BTreeMap<String, actgad::eval::RunSummary>) -> String {
    let mut out = format!("{:<10} {:>13} {:>13} {:>5}\n", "variant", "auc_roc", "auc_pr", "runs");
    for v in Variant::ALL {
        if let Some(s) = summary.get(v.as_str()) {
            let (roc, pr) = s.formatted();
            writeln!(out, "{:<10} {:>13} {:>13} {:>5}", v.as_str(), roc, pr, s.runs.len()).unwrap();
        }
    }
    out
}

pub fn run(common: &Common, stage: Stage, variants: &[Variant]) -> Result<()> {
    let cfg = resolve(common)?;
    let (g_s, g_t) = cfg.load_pair()?;
    let mut outcomes = Vec::with_capacity(cfg.seeds.len());
    let mut timings = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let store = RunStore::new(&cfg.out, seed);
        let start = Instant::now();
        let (o, _) = run_seed(&g_s, &g_t, &cfg.train.with_seed(seed), variants, stage, Some(&store))?;
        let seconds = start.elapsed().as_secs_f64();
        write_seed(store.seed_dir(), &o)?;
        eprintln!("seed {seed}: done in {seconds:.1}s");
        timings.push(SeedTiming {
            seed,
            seconds,
            sinkhorn_seconds: o
                .align
                .iter()
                .filter_map(|(k, t)| t.sinkhorn_seconds.map(|s| (k.clone(), s)))
                .collect(),
        });
        outcomes.push(o);
    }

    if outcomes.iter().any(|o| !o.metrics.is_empty()) {
        let summary = summarize(&outcomes)?;
        write_json(&cfg.out.join("metrics.json"), &summary)?;
        let table = metrics_table(&summary);
        write(&cfg.out.join("metrics.txt"), &table)?;
        print!("{table}");
    }
    let mut names: Vec<&'static str> = variants.iter().map(|v| v.as_str()).collect();
    names.dedup();
    write_json(
        &cfg.out.join("run_manifest.json"),
        &RunManifest {
            version: env!("CARGO_PKG_VERSION"),
            stage,
            variants: names,
            seeds: &cfg.seeds,
            config: &cfg,
            timings,
        },
    )
}

#[derive(Default)]
struct AlphaAggregate {
    roc: Vec<f64>,
    pr: Vec<f64>,
    degenerate: usize,
}

pub fn sweep_alpha(common: &Common, alphas: Option<&[f64]>) -> Result<()> {
    let cfg = resolve(common)?;
    let alphas = alphas.unwrap_or(&cfg.alphas);
    if alphas.is_empty() {
        return Err(Error::Config("alpha list must not be empty".into()));
    }
    let (_, g_t) = cfg.load_pair()?;
    let mut per_seed = String::from("seed,alpha,auc_roc,auc_pr,status\n");
    let mut agg: Vec<AlphaAggregate> = alphas.iter().map(|_| AlphaAggregate::default()).collect();
    for &seed in &cfg.seeds {
        let store = RunStore::new(&cfg.out, seed);
        let source = store.load_pretrain()?;
        let aligned = store.load_align(AlignMode::Joint)?;
        let rows = sweep(&g_t, &aligned.encoder, &source.head, &cfg.train.with_seed(seed), alphas)?;
        for (row, a) in rows.iter().zip(&mut agg) {
            match row.metrics {
                Some(MetricsReport { auc_roc, auc_pr, .. }) => {
                    writeln!(per_seed, "{seed},{},{auc_roc},{auc_pr},ok", row.alpha).unwrap();
                    a.roc.push(auc_roc);
                    a.pr.push(auc_pr);
                }
                None => {
                    writeln!(per_seed, "{seed},{},,,degenerate", row.alpha).unwrap();
                    a.degenerate += 1;
                }
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut table = String::from("alpha,auc_roc,auc_pr,status\n");
    for (&alpha, a) in alphas.iter().zip(&agg) {
        if a.roc.is_empty() {
            writeln!(table, "{alpha},,,degenerate").unwrap();
        } else {
            let status = if a.degenerate > 0 { "partial" } else { "ok" };
            writeln!(table, "{alpha},{},{},{status}", mean(&a.roc), mean(&a.pr)).unwrap();
        }
    }
    write(&cfg.out.join("alpha_sweep.csv"), &table)?;
    write(&cfg.out.join("alpha_sweep_seeds.csv"), &per_seed)?;
    print!("{table}");
    Ok(())
}

fn embedding_rows(out: &mut String, g: &AttributedGraph, z: &Tensor2D, stage: &str) {
    let labels = g.evaluation_labels();
    for v in 0..g.node_count() {
        let label = labels.map_or(String::new(), |l| l[v].to_string());
        write!(out, "{v},{},{label},{stage}", g.domain().as_str()).unwrap();
        for x in z.row(v) {
            write!(out, ",{x}").unwrap();
        }
        out.push('\n');
    }
}

pub fn export_embeddings(common: &Common, selflabel: bool, seed: Option<u64>) -> Result<()> {
    let cfg = resolve(common)?;
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let (g_s, g_t) = cfg.load_pair()?;
    let store = RunStore::new(&cfg.out, seed);
    let source = store.load_pretrain()?;
    let (target, stage) = if selflabel {
        (store.load_selflabel()?.0, "selflabel")
    } else {
        (store.load_align(AlignMode::Joint)?, "align")
    };
    let train = cfg.train.with_seed(seed);
    let zs = embed_graph(&source.encoder, &g_s, &train, "export/source")?;
    let zt = embed_graph(&target.encoder, &g_t, &train, "export/target")?;
    let mut out = String::from("node_id,domain,label,stage");
    for j in 0..zt.cols() {
        write!(out, ",z{j}").unwrap();
    }
    out.push('\n');
    embedding_rows(&mut out, &g_s, &zs, "pretrain");
    embedding_rows(&mut out, &g_t, &zt, stage);
    let path: PathBuf = store.seed_dir().join(format!("embeddings-{stage}.csv"));
    write(&path, &out)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}
