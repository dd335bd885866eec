use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::Serialize;

use lightpath::distill::{distill as run_distill, new_student, write_distill_log, DistillConfig, Softening};
use lightpath::downstream::{embed_dataset, eval_task, write_report, EvalConfig, GbrConfig, Task};
use lightpath::encoder::{EncoderConfig, EncoderModel};
use lightpath::graph::io::{load_dataset, load_network, save_dataset, save_network};
use lightpath::graph::{
    generate_grid_network, generate_synthetic_paths, ranking_candidates, spatial_edge_embeddings, synth_travel_time,
    PathDataset, PathRecord, TRAVEL_TIME_SIGMA,
};
use lightpath::numerics::AdamWConfig;
use lightpath::profile::{
    count_flops, count_params, memory_estimate, reference_config, scalability_report, write_scalability_csv,
    CostReport, TABLE5_GAMMAS, TABLE5_LENGTHS,
};
use lightpath::rng::derive_seed;
use lightpath::ssl::{load_pretrained, pretrain as run_pretrain, save_pretrained, write_pretrain_log};
use lightpath::ssl::{DualEncoder, PositivePairing, PretrainConfig, RelationHead, ViewConfig};
use lightpath::Error;

use crate::settings::Settings;
use crate::{DistillArgs, EmbedArgs, EvalArgs, GenerateArgs, PretrainArgs, ProfileArgs};

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(Error::Config(msg.into()))
}

fn create(file: &FsPath) -> Result<BufWriter<File>> {
    if let Some(dir) = file.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(Error::from)?;
    }
    let f = File::create(file).map_err(Error::from).with_context(|| format!("creating {}", file.display()))?;
    Ok(BufWriter::new(f))
}

fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| config_error(format!("grid `{}` is not ROWSxCOLS", s)))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| config_error(format!("grid `{}` is not ROWSxCOLS", s)));
    Ok((parse(r)?, parse(c)?))
}

fn parse_pairing(s: &str) -> Result<PositivePairing> {
    match s {
        "same_view" => Ok(PositivePairing::SameView),
        "cross_view" => Ok(PositivePairing::CrossView),
        other => Err(config_error(format!("unknown pairing `{}`", other))),
    }
}

fn parse_softening(s: &str) -> Result<Softening> {
    match s {
        "exp" => Ok(Softening::Exp),
        "softmax" => Ok(Softening::Softmax),
        other => Err(config_error(format!("unknown softening `{}`", other))),
    }
}

fn adamw(s: &Settings, beta1: Option<f64>, beta2: Option<f64>, wd: Option<f64>) -> Result<AdamWConfig> {
    let d = AdamWConfig::default();
    Ok(AdamWConfig {
        beta1: s.get(beta1, "beta1", d.beta1)?,
        beta2: s.get(beta2, "beta2", d.beta2)?,
        weight_decay: s.get(wd, "weight_decay", d.weight_decay)?,
        ..d
    })
}

/// An encoder checkpoint, or the main encoder of a pretraining checkpoint.
fn load_encoder(file: &FsPath) -> Result<EncoderModel<f64>> {
    match EncoderModel::load(file) {
        Ok(m) => Ok(m),
        Err(Error::Io(e)) => Err(anyhow!(Error::Io(e))).with_context(|| format!("reading {}", file.display())),
        Err(first) => match load_pretrained::<f64>(file) {
            Ok((dual, _)) => Ok(dual.main),
            Err(_) => Err(anyhow!(first)).with_context(|| format!("reading {}", file.display())),
        },
    }
}

pub fn generate(s: &Settings, a: GenerateArgs) -> Result<()> {
    let (rows, cols) = parse_grid(&s.get(a.grid, "grid", "30x30".to_string())?)?;
    let n_paths: usize = s.get(a.paths, "paths", 5000)?;
    let length: usize = s.get(a.length, "length", 100)?;
    let repeats: usize = s.get(a.repeats, "repeats", 10)?;
    let train = s.get(a.train, "train", 0.8)?;
    let val = s.get(a.val, "val", 0.1)?;
    let ranking: usize = s.get(a.ranking, "ranking", 0)?;
    let out_dir: PathBuf = s.get(a.out_dir, "out_dir", PathBuf::from("."))?;
    let seed = s.seed(a.seed)?;
    if repeats == 0 || n_paths == 0 || n_paths % repeats != 0 {
        return Err(config_error(format!(
            "paths ({}) must be a positive multiple of repeats ({})",
            n_paths, repeats
        )));
    }

    let net = generate_grid_network(rows, cols, derive_seed(seed, "network"))?;
    let mut ds = generate_synthetic_paths(&net, n_paths / repeats, length, repeats, derive_seed(seed, "paths"))?;
    for r in ds.records_mut() {
        let noise = derive_seed(seed, &format!("travel-time-{}", r.id));
        r.travel_time = Some(synth_travel_time(&net, &r.path, TRAVEL_TIME_SIGMA, noise)?);
    }
    ds.assign_splits(train, val, derive_seed(seed, "splits"))?;
    std::fs::create_dir_all(&out_dir).map_err(Error::from)?;
    save_network(&net, out_dir.join("network.csv"))?;
    save_dataset(&ds, out_dir.join("paths.tsv"))?;

    if ranking > 0 {
        let mut records = Vec::new();
        for r in ds.records() {
            let cands = ranking_candidates(&net, &r.path, ranking, derive_seed(seed, &format!("ranking-{}", r.id)))?;
            for (path, score) in cands {
                records.push(PathRecord {
                    id: records.len() as u64,
                    path,
                    travel_time: None,
                    rank: Some(score),
                    split: r.split,
                });
            }
        }
        save_dataset(&PathDataset::new(records)?, out_dir.join("ranking.tsv"))?;
    }
    println!(
        "generated {} vertices, {} edges, {} paths of length {} in {}",
        net.num_vertices(),
        net.num_edges(),
        ds.len(),
        length,
        out_dir.display()
    );
    Ok(())
}

pub fn pretrain(s: &Settings, a: PretrainArgs) -> Result<()> {
    let network: PathBuf = s.require(a.network, "network")?;
    let dataset: PathBuf = s.require(a.dataset, "dataset")?;
    let out: PathBuf = s.require(a.out, "out")?;
    let log: Option<PathBuf> = s.opt(a.log, "log")?;
    let seed = s.seed(a.seed)?;

    let net = load_network(&network)?;
    let ds = load_dataset(&dataset, Some(&net))?;
    let max_len = s.get(a.max_len, "max_len", ds.max_path_len().max(2))?;
    if max_len < ds.max_path_len() {
        return Err(config_error(format!("max_len {} is shorter than the longest path ({})", max_len, ds.max_path_len())));
    }
    let mut config = EncoderConfig::new(net.vocab_size(), max_len);
    config.layers = s.get(a.layers, "layers", config.layers)?;
    config.heads = s.get(a.heads, "heads", config.heads)?;
    config.d_model = s.get(a.d_model, "d_model", config.d_model)?;
    config.d_ff = s.get(a.d_ff, "d_ff", 2 * config.d_model)?;
    config.dec_layers = s.get(a.dec_layers, "dec_layers", config.dec_layers)?;
    config.validate()?;

    let defaults = PretrainConfig::default();
    let train = PretrainConfig {
        views: ViewConfig {
            gamma1: s.get(a.gamma1, "gamma1", defaults.views.gamma1)?,
            gamma2: s.get(a.gamma2, "gamma2", defaults.views.gamma2)?,
        },
        lr: s.get(a.lr, "lr", defaults.lr)?,
        adamw: adamw(s, a.beta1, a.beta2, a.weight_decay)?,
        epochs: s.get(a.epochs, "epochs", defaults.epochs)?,
        warmup_epochs: s.get(a.warmup, "warmup", defaults.warmup_epochs)?,
        batch_size: s.get(a.batch, "batch", defaults.batch_size)?,
        pairing: parse_pairing(&s.get(a.pairing, "pairing", "same_view".to_string())?)?,
    };
    train.validate()?;
    let momentum = s.get(a.momentum, "momentum", 0.99)?;

    let mut model = EncoderModel::<f64>::new(config.clone(), derive_seed(seed, "encoder"))?;
    match s.get(a.embeddings, "embeddings", "spatial".to_string())?.as_str() {
        "spatial" => model.import_edge_embeddings(spatial_edge_embeddings(&net, config.d_model, derive_seed(seed, "embeddings"))?)?,
        "random" => {}
        other => return Err(config_error(format!("unknown embeddings `{}`", other))),
    }
    let mut dual = DualEncoder::new(model, momentum)?;
    let mut head = RelationHead::new(config.d_model, derive_seed(seed, "head"))?;
    let paths: Vec<_> = ds.paths().cloned().collect();
    let history = run_pretrain(&mut dual, &mut head, &paths, &train, seed, |_| {})?;

    save_pretrained(&out, &dual, &head)?;
    if let Some(log) = log {
        let mut w = create(&log)?;
        write_pretrain_log(&mut w, &history)?;
        w.flush().map_err(Error::from)?;
    }
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        println!("pretrained {} epochs: total loss {} -> {}", history.len(), first.total, last.total);
    }
    Ok(())
}

pub fn distill(s: &Settings, a: DistillArgs) -> Result<()> {
    let teacher_file: PathBuf = s.require(a.teacher, "teacher")?;
    let dataset: PathBuf = s.require(a.dataset, "dataset")?;
    let out: PathBuf = s.require(a.out, "out")?;
    let log: Option<PathBuf> = s.opt(a.log, "log")?;
    let seed = s.seed(a.seed)?;

    let teacher = load_encoder(&teacher_file)?;
    let ds = load_dataset(&dataset, None)?;
    let d = DistillConfig::default();
    let config = DistillConfig {
        alpha: s.get(a.alpha, "alpha", d.alpha)?,
        temperature: s.get(a.temperature, "temperature", d.temperature)?,
        softening: parse_softening(&s.get(a.softening, "softening", "exp".to_string())?)?,
        gamma: s.get(a.gamma, "gamma", d.gamma)?,
        student_layers: s.get(a.student_layers, "student_layers", d.student_layers)?,
        student_heads: s.get(a.student_heads, "student_heads", d.student_heads)?,
        lr: s.get(a.lr, "lr", d.lr)?,
        adamw: adamw(s, a.beta1, a.beta2, a.weight_decay)?,
        epochs: s.get(a.epochs, "epochs", d.epochs)?,
        warmup_epochs: s.get(a.warmup, "warmup", d.warmup_epochs)?,
        batch_size: s.get(a.batch, "batch", d.batch_size)?,
    };
    config.validate()?;
    let mut student = new_student(&teacher, &config, derive_seed(seed, "student"))?;
    let paths: Vec<_> = ds.paths().cloned().collect();
    let history = run_distill(&teacher, &mut student, &paths, &config, seed)?;

    student.save(&out)?;
    if let Some(log) = log {
        let mut w = create(&log)?;
        write_distill_log(&mut w, &history)?;
        w.flush().map_err(Error::from)?;
    }
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        println!("distilled {} epochs: glkd {} -> {}", history.len(), first.glkd, last.glkd);
    }
    Ok(())
}

pub fn embed(s: &Settings, a: EmbedArgs) -> Result<()> {
    let checkpoint: PathBuf = s.require(a.checkpoint, "checkpoint")?;
    let dataset: PathBuf = s.require(a.dataset, "dataset")?;
    let out: PathBuf = s.require(a.out, "out")?;
    let gamma_eval = s.get(a.gamma_eval, "gamma_eval", 0.0)?;
    let seed = if gamma_eval == 0.0 { s.opt(a.seed, "seed")?.unwrap_or(0) } else { s.seed(a.seed)? };

    let encoder = load_encoder(&checkpoint)?;
    let ds = load_dataset(&dataset, None)?;
    let paths: Vec<_> = ds.paths().cloned().collect();
    let prs = embed_dataset(&encoder, &paths, gamma_eval, seed)?;
    let d = encoder.config().d_model;
    let mut w = create(&out)?;
    let header: Vec<String> = (0..d).map(|i| format!("d{}", i)).collect();
    writeln!(w, "path_id,{}", header.join(",")).map_err(Error::from)?;
    for (r, row) in ds.records().iter().zip(prs.data().chunks(d)) {
        let values: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(w, "{},{}", r.id, values.join(",")).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    println!("embedded {} paths into {} dimensions", ds.len(), d);
    Ok(())
}

pub fn eval(s: &Settings, a: EvalArgs) -> Result<()> {
    let checkpoint: PathBuf = s.require(a.checkpoint, "checkpoint")?;
    let dataset: PathBuf = s.require(a.dataset, "dataset")?;
    let task: Task = s.get(a.task, "task", "travel_time".to_string())?.parse()?;
    let out: Option<PathBuf> = s.opt(a.out, "out")?;
    let g = GbrConfig::default();
    let config = EvalConfig {
        gbr: GbrConfig {
            n_trees: s.get(a.trees, "trees", g.n_trees)?,
            max_depth: s.get(a.depth, "depth", g.max_depth)?,
            learning_rate: s.get(a.nu, "nu", g.learning_rate)?,
        },
        gamma_eval: s.get(a.gamma_eval, "gamma_eval", 0.0)?,
    };
    let seed = if config.gamma_eval == 0.0 { s.opt(a.seed, "seed")?.unwrap_or(0) } else { s.seed(a.seed)? };

    let encoder = load_encoder(&checkpoint)?;
    let ds = load_dataset(&dataset, None)?;
    let report = eval_task(&encoder, &ds, task, &config, seed)?;
    match out {
        Some(file) => {
            let mut w = create(&file)?;
            write_report(&mut w, &report)?;
            w.flush().map_err(Error::from)?;
        }
        None => write_report(&mut std::io::stdout().lock(), &report)?,
    }
    Ok(())
}

#[derive(Serialize)]
struct SingleProfile {
    n: usize,
    gamma: f64,
    batch: usize,
    params: CostReport,
    flops: CostReport,
    memory: CostReport,
}

pub fn profile(s: &Settings, a: ProfileArgs) -> Result<()> {
    let n: usize = s.get(a.n, "n", 200)?;
    let max_len = if a.table5 { *TABLE5_LENGTHS.iter().max().unwrap() } else { n.max(2) };
    let mut config = reference_config(s.get(a.vocab, "vocab", 10_000)?, max_len);
    config.layers = s.get(a.layers, "layers", config.layers)?;
    config.heads = s.get(a.heads, "heads", config.heads)?;
    config.d_model = s.get(a.d_model, "d_model", config.d_model)?;
    config.d_ff = s.get(a.d_ff, "d_ff", config.d_ff)?;
    config.dec_layers = s.get(a.dec_layers, "dec_layers", config.dec_layers)?;
    config.validate()?;
    let batch: usize = s.get(a.batch, "batch", 1)?;
    let with_decoder = !a.encoder_only;

    if a.table5 {
        let cells = scalability_report(&config, &TABLE5_LENGTHS, &TABLE5_GAMMAS, batch, with_decoder)?;
        match &a.out {
            Some(file) => {
                let mut w = create(file)?;
                write_scalability_csv(&mut w, &cells)?;
                w.flush().map_err(Error::from)?;
            }
            None => write_scalability_csv(&mut std::io::stdout().lock(), &cells)?,
        }
        if let Some(file) = &a.json {
            let mut w = create(file)?;
            serde_json::to_writer_pretty(&mut w, &cells).map_err(Error::from)?;
            writeln!(w).map_err(Error::from)?;
        }
        return Ok(());
    }

    let gamma = s.get(a.gamma, "gamma", 0.0)?;
    let report = SingleProfile {
        n,
        gamma,
        batch,
        params: count_params(&config, false)?,
        flops: count_flops(&config, n, gamma, with_decoder)?,
        memory: memory_estimate(&config, n, gamma, batch, with_decoder)?,
    };
    let text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    match a.json.or(a.out) {
        Some(file) => {
            let mut w = create(&file)?;
            writeln!(w, "{}", text).map_err(Error::from)?;
        }
        None => println!("{}", text),
    }
    Ok(())
}
