//! Subcommand implementations. All numbers come from library calls; this
//! module only wires files, seeds and manifests together.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use cactus_kit_core::data::{
    generate_selfsup_sample, generate_synthetic_benchmark, id_clusters, ingest_llm_outputs, load_entity_sets,
    load_samples, load_universe, read_records, split_samples, write_records, write_samples, RawOutput, SelfSupConfig,
    SetRecord, Split, SyntheticConfig, DATASET_FORMAT, LLM_RAW_FORMAT,
};
use cactus_kit_core::encoder::{count_attention_logits, AttentionMode, Checkpoint, SetEncoder};
use cactus_kit_core::entity::{Entity, EntitySet};
use cactus_kit_core::seed::derive_seed;
use cactus_kit_core::train::{
    evaluate, finetune, predict, pretrain, run_ablation, sweep, universe_from_samples, AblationConfig,
};
use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::manifest::{manifest_path, sidecar, FileRecord, RunManifest};

/// Bad flags or inputs detected by the driver itself.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// 2 for usage and validation errors, 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<cactus_kit_core::Error>() {
            return if err.is_validation() { 2 } else { 1 };
        }
        if let Some(err) = cause.downcast_ref::<std::io::Error>() {
            if err.kind() == std::io::ErrorKind::NotFound {
                return 2;
            }
        }
    }
    1
}

/// What a finished command reports for its manifest.
struct Outcome {
    config: serde_json::Value,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<PathBuf>,
    /// Deterministic outputs; the first one names the manifest.
    outputs: Vec<PathBuf>,
}

fn seeds(root: u64, names: &[&str]) -> BTreeMap<String, u64> {
    let mut m = BTreeMap::from([("root".to_string(), root)]);
    for n in names {
        m.insert(n.to_string(), derive_seed(root, n));
    }
    m
}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<ExitCode> {
    if let Command::Rerun(a) = &cli.command {
        return rerun(&a.manifest);
    }
    let start = Instant::now();
    let name = command_name(&cli.command);
    let outcome = execute(cli.command)?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: name.to_string(),
        argv,
        config: outcome.config,
        seeds: outcome.seeds,
        inputs: outcome
            .inputs
            .iter()
            .map(|p| FileRecord::of(p))
            .collect::<Result<_>>()?,
        outputs: outcome
            .outputs
            .iter()
            .map(|p| FileRecord::of(p))
            .collect::<Result<_>>()?,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    manifest.write(&manifest_path(&outcome.outputs[0]))?;
    Ok(ExitCode::SUCCESS)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Gen(_) => "gen",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Predict(_) => "predict",
        Command::BenchAttention(_) => "bench-attention",
        Command::IngestLlm(_) => "ingest-llm",
        Command::Ablate(_) => "ablate",
        Command::Rerun(_) => "rerun",
    }
}

fn execute(command: Command) -> Result<Outcome> {
    match command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict_cmd(a),
        Command::BenchAttention(a) => bench(a),
        Command::IngestLlm(a) => ingest(a),
        Command::Ablate(a) => ablate(a),
        Command::Rerun(_) => bail!(usage("rerun cannot be nested")),
    }
}

/// Re-executes the command recorded in a manifest and compares output hashes.
fn rerun(path: &Path) -> Result<ExitCode> {
    let manifest = RunManifest::read(path)?;
    let cli = Cli::try_parse_from(std::iter::once("cactus-kit".to_string()).chain(manifest.argv.iter().cloned()))
        .map_err(|e| usage(format!("manifest argv does not parse: {e}")))?;
    if matches!(cli.command, Command::Rerun(_)) {
        bail!(usage("manifest records a rerun"));
    }
    for input in &manifest.inputs {
        let now = FileRecord::of(&input.path)?;
        if now.sha256 != input.sha256 {
            bail!(usage(format!(
                "input {} changed since the recorded run",
                input.path.display()
            )));
        }
    }
    let outcome = execute(cli.command)?;
    let mut identical = true;
    for recorded in &manifest.outputs {
        let now = FileRecord::of(&recorded.path)?;
        let same = now.sha256 == recorded.sha256;
        identical &= same;
        println!(
            "{} {}",
            if same { "identical" } else { "DIFFERS  " },
            recorded.path.display()
        );
    }
    if outcome.outputs.len() != manifest.outputs.len() {
        println!(
            "output count changed: {} recorded, {} now",
            manifest.outputs.len(),
            outcome.outputs.len()
        );
        identical = false;
    }
    Ok(if identical {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn gen(a: GenArgs) -> Result<Outcome> {
    if a.synthetic {
        let cfg = SyntheticConfig {
            n_topics: a.topics,
            words_per_topic: a.words_per_topic,
            homonyms_per_pair: a.homonyms_per_pair,
            homonym_rate: a.homonym_rate,
            noise_words: a.noise_words,
            noise_rate: a.noise_rate,
            topics_per_family: a.topics_per_family,
            fine_set_rate: a.fine_set_rate,
            sets: a.sets,
            test_sets: a.test_sets,
            valid_sets: a.valid_sets,
            ..SyntheticConfig::default()
        };
        let seeds = seeds(a.seed, &["synthetic"]);
        let mut rng = ChaCha8Rng::seed_from_u64(seeds["synthetic"]);
        let samples = generate_synthetic_benchmark(&cfg, &mut rng)?;
        write_samples(&a.out, &samples)?;
        println!("wrote {} synthetic sets to {}", samples.len(), a.out.display());
        return Ok(Outcome {
            config: json!({ "kind": "synthetic", "synthetic": cfg }),
            seeds,
            inputs: vec![],
            outputs: vec![a.out],
        });
    }
    let universe_path = a.universe.ok_or_else(|| usage("--selfsup needs --universe"))?;
    let universe = load_universe(&universe_path)?;
    let cfg = SelfSupConfig::default();
    let seeds = seeds(a.seed, &["selfsup"]);
    let mut rng = ChaCha8Rng::seed_from_u64(seeds["selfsup"]);
    let samples = (0..a.samples)
        .map(|i| {
            generate_selfsup_sample(&format!("selfsup-{i:06}"), &universe, &cfg, &mut rng).map(|s| (s.sample, None))
        })
        .collect::<cactus_kit_core::Result<Vec<_>>>()?;
    write_samples(&a.out, &samples)?;
    println!("wrote {} self-supervised samples to {}", samples.len(), a.out.display());
    Ok(Outcome {
        config: json!({ "kind": "selfsup", "samples": a.samples, "selfsup": cfg }),
        seeds,
        inputs: vec![universe_path],
        outputs: vec![a.out],
    })
}

fn load_splits(data: &DataArgs, split_seed: u64) -> Result<cactus_kit_core::data::Splits> {
    let mut splits = split_samples(load_samples(&data.data)?, &data.split_spec(split_seed))?;
    if let Some(limit) = data.train_limit {
        splits.train.truncate(limit);
    }
    Ok(splits)
}

fn train(a: TrainArgs) -> Result<Outcome> {
    let seeds = seeds(a.seed, &["init", "train", "split"]);
    let enc_cfg = a.model.config(seeds["init"]);
    let cfg = a.training.config(seeds["train"]);
    cfg.validate()?;
    let splits = load_splits(&a.data, seeds["split"])?;
    let selfsup = SelfSupConfig::default();
    let mut inputs = vec![a.data.data.clone()];
    let mut log_rows = Vec::new();

    let mut ck = Checkpoint::new(SetEncoder::new(enc_cfg.clone())?);
    if a.pretrain {
        let universe: Vec<Entity> = match &a.universe {
            Some(p) => {
                inputs.push(p.clone());
                load_universe(p)?
            }
            None => universe_from_samples(&splits.train),
        };
        let report = pretrain(&mut ck, &universe, &selfsup, &cfg)?;
        for (b, l) in report.batch_losses.iter().enumerate() {
            log_rows.push(json!({ "phase": "pretrain", "batch": b, "loss": l }));
        }
    }
    let result = finetune(&ck, &splits.train, &splits.valid, &cfg)?;
    for r in &result.history {
        log_rows.push(json!({ "phase": "finetune", "record": r }));
        println!(
            "epoch {:>3}  loss {:.5}  threshold {:+.1}  valid AMI {:.4}  score {:.4}",
            r.epoch, r.train_loss, r.threshold, r.validation.ami, r.score
        );
    }
    result.best.save(&a.out)?;
    let log_path = sidecar(&a.out, "log.jsonl");
    write_jsonl(&log_path, &log_rows)?;
    println!(
        "best epoch {} at threshold {:+.1}; checkpoint {}",
        result.best.meta.epoch.unwrap_or(0),
        result.best.meta.threshold.unwrap_or(0.0),
        a.out.display()
    );
    Ok(Outcome {
        config: json!({
            "encoder": enc_cfg,
            "train": cfg,
            "pretrain": a.pretrain,
            "selfsup": selfsup,
            "split": a.data.split_spec(seeds["split"]),
            "train_limit": a.data.train_limit,
            "train_sets": splits.train.len(),
            "valid_sets": splits.valid.len(),
        }),
        seeds,
        inputs,
        outputs: vec![a.out, log_path],
    })
}

fn eval(a: EvalArgs) -> Result<Outcome> {
    let seeds = seeds(a.seed, &["split"]);
    let ck = Checkpoint::load(&a.checkpoint)?;
    let splits = load_splits(&a.data, seeds["split"])?;
    let split: Split = a.split.into();
    let samples = splits.get(split);
    if samples.is_empty() {
        bail!(usage(format!(
            "split `{split:?}` of {} is empty",
            a.data.data.display()
        )));
    }
    let mut rows = Vec::new();
    let config;
    if a.sweep {
        let outcome = sweep(&ck.encoder, samples, a.criterion.into(), a.eval_batch_size)?;
        println!("threshold      NMI      AMI       RI      ARI       F1    score");
        for r in &outcome.result.rows {
            let m = &r.means;
            println!(
                "{:>+9.1} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                r.threshold, m.nmi, m.ami, m.ri, m.ari, m.f1, r.score
            );
            rows.push(json!({ "kind": "threshold", "threshold": r.threshold, "means": m, "score": r.score }));
        }
        rows.push(json!({
            "kind": "best",
            "threshold": outcome.result.best_threshold,
            "score": outcome.result.best_score,
            "failed": outcome.failed,
        }));
        println!("best threshold {:+.1}", outcome.result.best_threshold);
        config = json!({ "split": split, "sweep": true, "criterion": cactus_kit_core::agglomerative::SelectionCriterion::from(a.criterion) });
    } else {
        let threshold = a
            .threshold
            .or(ck.meta.threshold)
            .ok_or_else(|| usage("checkpoint stores no threshold; pass --threshold or --sweep"))?;
        let mut record = evaluate(&ck.encoder, samples, threshold, a.eval_batch_size)?;
        record.epoch = ck.meta.epoch;
        for s in &record.sets {
            rows.push(json!({ "kind": "set", "set_id": s.set_id, "scores": s.scores }));
        }
        rows.push(json!({
            "kind": "summary",
            "threshold": record.threshold,
            "epoch": record.epoch,
            "sets": record.sets.len(),
            "means": record.means,
            "failed": record.failed,
        }));
        let m = &record.means;
        println!(
            "{} sets at threshold {:+.1}: NMI {:.4}  AMI {:.4}  RI {:.4}  ARI {:.4}  F1 {:.4}  ({} failed)",
            record.sets.len(),
            threshold,
            m.nmi,
            m.ami,
            m.ri,
            m.ari,
            m.f1,
            record.failed.len()
        );
        config = json!({ "split": split, "threshold": threshold });
    }
    write_jsonl(&a.out, &rows)?;
    let mut config = config;
    config["split_spec"] = json!(a.data.split_spec(seeds["split"]));
    Ok(Outcome {
        config,
        seeds,
        inputs: vec![a.checkpoint, a.data.data],
        outputs: vec![a.out],
    })
}

fn predict_cmd(a: PredictArgs) -> Result<Outcome> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let threshold = a
        .threshold
        .or(ck.meta.threshold)
        .ok_or_else(|| usage("checkpoint stores no threshold; pass --threshold"))?;
    if !(-1.0..=1.0).contains(&threshold) {
        bail!(usage(format!("threshold {threshold} outside [-1, 1]")));
    }
    let mut sets = load_entity_sets(&a.data)?;
    sets.sort_by(|x, y| x.set_id.cmp(&y.set_id));
    let records = sets
        .par_iter()
        .map(|set| {
            let clustering = predict(&ck.encoder, set, threshold)?;
            Ok(SetRecord {
                set_id: set.set_id.clone(),
                entities: set.entities.clone(),
                clusters: Some(id_clusters(set, &clustering)),
                split: None,
            })
        })
        .collect::<cactus_kit_core::Result<Vec<_>>>()?;
    write_records(&a.out, DATASET_FORMAT, &records)?;
    println!(
        "clustered {} sets at threshold {:+.1} into {}",
        records.len(),
        threshold,
        a.out.display()
    );
    Ok(Outcome {
        config: json!({ "threshold": threshold }),
        seeds: BTreeMap::new(),
        inputs: vec![a.checkpoint, a.data],
        outputs: vec![a.out],
    })
}

/// A set of `n` entities with `l` distinct random words each.
fn bench_set(n: usize, l: usize, rng: &mut ChaCha8Rng) -> Result<EntitySet> {
    let texts: Vec<String> = (0..n)
        .map(|_| {
            (0..l)
                .map(|_| format!("w{}", rng.gen::<u32>()))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    Ok(EntitySet::from_texts(format!("bench-{n}x{l}"), &texts)?)
}

#[derive(Serialize)]
struct BenchRow {
    n: usize,
    l: usize,
    mode: AttentionMode,
    /// Closed-form logits per layer and head.
    logits: usize,
    /// Logits counted during the forward pass, per layer and head.
    measured_logits: usize,
    buffer_bytes: usize,
    peak_layer_bytes: usize,
}

fn bench(a: BenchArgs) -> Result<Outcome> {
    if a.entities.is_empty() || a.lengths.is_empty() || a.modes.is_empty() {
        bail!(usage("--n, --l and --modes must be nonempty"));
    }
    if a.entities.contains(&0) || a.lengths.contains(&0) {
        bail!(usage("entity counts and lengths must be positive"));
    }
    let seeds = seeds(a.seed, &["init", "bench"]);
    let base = SetEncoder::new(a.model.config(seeds["init"]))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds["bench"]);
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    println!("    N    L  mode       logits  buffer_bytes   median_ms");
    for &n in &a.entities {
        for &l in &a.lengths {
            let set = bench_set(n, l, &mut rng)?;
            for &mode in &a.modes {
                let encoder = base.with_mode(mode);
                let mut secs = Vec::new();
                let mut stats = None;
                for _ in 0..a.repeats.max(1) {
                    let t = Instant::now();
                    let (_, s) = encoder.encode_set_with_stats(&set)?;
                    secs.push(t.elapsed().as_secs_f64());
                    stats = Some(s);
                }
                let stats = stats.unwrap();
                secs.sort_by(f64::total_cmp);
                let median = secs[secs.len() / 2];
                let row = BenchRow {
                    n,
                    l,
                    mode,
                    logits: count_attention_logits(&vec![l; n], mode),
                    measured_logits: stats.logits_per_head / a.model.layers,
                    buffer_bytes: stats.buffer_bytes,
                    peak_layer_bytes: stats.peak_layer_bytes,
                };
                println!(
                    "{:>5} {:>4}  {:<9} {:>7} {:>13} {:>11.3}",
                    n,
                    l,
                    mode.as_str(),
                    row.logits,
                    row.buffer_bytes,
                    median * 1e3
                );
                timings.push(json!({ "n": n, "l": l, "mode": mode, "median_secs": median, "repeats": secs.len() }));
                rows.push(row);
            }
        }
    }
    write_jsonl(&a.out, &rows)?;
    // wall-clock varies between runs, so it lives outside the hashed table
    write_jsonl(&sidecar(&a.out, "timing.jsonl"), &timings)?;
    Ok(Outcome {
        config: json!({
            "n": a.entities,
            "l": a.lengths,
            "modes": a.modes,
            "encoder": base.config(),
            "repeats": a.repeats,
        }),
        seeds,
        inputs: vec![],
        outputs: vec![a.out],
    })
}

fn ingest(a: IngestArgs) -> Result<Outcome> {
    let (_, raw) = read_records::<RawOutput>(&a.raw, &[LLM_RAW_FORMAT])?;
    let raw: Vec<RawOutput> = raw.into_iter().map(|(_, r)| r).collect();
    let sets = load_entity_sets(&a.sets)?;
    let (mut samples, report) = ingest_llm_outputs(&raw, &sets);
    samples.sort_by(|x, y| x.set_id().cmp(y.set_id()));
    let samples: Vec<_> = samples.into_iter().map(|s| (s, None)).collect();
    write_samples(&a.out, &samples)?;
    let report_path = sidecar(&a.out, "report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("writing {}", report_path.display()))?;
    println!(
        "{} records: {} accepted, {} empty, {} unparseable, {} unknown sets; reject rate {:.2}%, mean drop rate {:.2}%",
        report.records,
        report.accepted,
        report.rejected_empty,
        report.rejected_unparseable,
        report.unknown_sets,
        report.reject_rate_pct,
        report.mean_drop_rate_pct
    );
    Ok(Outcome {
        config: json!({ "parser_version": report.parser_version }),
        seeds: BTreeMap::new(),
        inputs: vec![a.raw, a.sets],
        outputs: vec![a.out, report_path],
    })
}

fn ablate(a: AblateArgs) -> Result<Outcome> {
    let seeds = seeds(a.seed, &["init", "train", "split"]);
    let splits = load_splits(&a.data, seeds["split"])?;
    let cfg = AblationConfig {
        modes: a.modes.clone(),
        losses: a.losses.clone(),
        pretrain: a.pretrain_options.iter().map(|t| *t == Toggle::On).collect(),
        encoder: a.model.config(seeds["init"]),
        train: a.training.config(seeds["train"]),
        selfsup: SelfSupConfig::default(),
    };
    cfg.train.validate()?;
    let rows = run_ablation(&cfg, &splits)?;
    println!("mode       loss          pretrain  threshold  epoch      AMI      ARI      NMI");
    for r in &rows {
        println!(
            "{:<10} {:<13} {:<9} {:>+9.1} {:>6} {:>8.4} {:>8.4} {:>8.4}",
            r.mode.as_str(),
            r.loss.to_string(),
            if r.pretrain { "on" } else { "off" },
            r.threshold,
            r.best_epoch,
            r.test.ami,
            r.test.ari,
            r.test.nmi
        );
    }
    write_jsonl(&a.out, &rows)?;
    Ok(Outcome {
        config: json!({ "ablation": cfg, "split": a.data.split_spec(seeds["split"]), "train_limit": a.data.train_limit }),
        seeds,
        inputs: vec![a.data.data],
        outputs: vec![a.out],
    })
}
