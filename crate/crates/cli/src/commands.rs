use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use clozemem::corpus::{
    anonymize, cap_candidates, filter_seen, generate_synthetic, load_embeddings, read_canonical,
    read_cbt, read_marked_jsonl, write_canonical, ClozeInstance, Dataset, EmbeddingTable,
    EntityMap, FieldMap, Vocabulary,
};
use clozemem::evaluation::{compare_runs, evaluate, write_predictions, EvalReport, Prediction};
use clozemem::models::{
    baseline_maxfreq, baseline_random, baseline_simwindow, build_vocab, MemNet, ModelConfig,
    Output, Variant,
};
use clozemem::training::{grid_search, train_with, Checkpoint, EpochReport, GridRow};
use serde::Serialize;
use serde_json::json;

use crate::config::{set, write_json, RunConfig};
use crate::{
    usage, BaselineArgs, BaselineKind, Common, EvalArgs, GridArgs, InputFormat, PrepareArgs,
    SynthArgs, TrainArgs, Transform,
};

fn out_dir(common: &Common) -> Result<PathBuf> {
    fs::create_dir_all(&common.out_dir)
        .with_context(|| format!("creating {}", common.out_dir.display()))?;
    Ok(common.out_dir.clone())
}

fn resolved(out: &Path, command: &str, body: serde_json::Value) -> Result<()> {
    let mut v = json!({ "command": command });
    if let (Some(dst), serde_json::Value::Object(src)) = (v.as_object_mut(), body) {
        dst.extend(src);
    }
    write_json(out.join("resolved_config.json"), &v)
}

fn existing(path: &Path, flag: &str) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{flag} {}: no such file", path.display())));
    }
    Ok(())
}

fn read_split(path: &Path, flag: &str) -> Result<Dataset> {
    existing(path, flag)?;
    read_canonical(path).with_context(|| format!("reading {}", path.display()))
}

fn value_name(v: impl ValueEnum) -> String {
    v.to_possible_value()
        .map(|p| p.get_name().to_string())
        .unwrap_or_default()
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut run = RunConfig::load(&a.common)?;
    let s = &mut run.synthetic;
    set(&mut s.train_size, a.train_size);
    set(&mut s.dev_size, a.dev_size);
    set(&mut s.test_size, a.test_size);
    set(&mut s.vocab_size, a.vocab_size);
    set(&mut s.entity_pool_size, a.entity_pool_size);
    set(&mut s.entities_per_passage, a.entities_per_passage);
    set(&mut s.distractor_windows, a.distractor_windows);
    set(&mut s.overlap, a.overlap);
    set(&mut s.unseen_rate, a.unseen_rate);
    set(&mut s.noise_rate, a.noise_rate);
    set(&mut s.query_answer_correlation, a.query_answer_correlation);
    let corpus = generate_synthetic(&run.synthetic)?;
    let out = out_dir(&a.common)?;
    write_canonical(&corpus.train, out.join("train.jsonl"))?;
    write_canonical(&corpus.dev, out.join("dev.jsonl"))?;
    write_canonical(&corpus.test, out.join("test.jsonl"))?;
    write_json(out.join("metadata.json"), &corpus.metadata)?;
    corpus.embeddings.write(out.join("embeddings.txt"))?;
    resolved(
        &out,
        "synth",
        json!({ "seed": run.seed, "synthetic": run.synthetic }),
    )?;
    println!(
        "wrote {} train / {} dev / {} test instances ({} unseen test answers) to {}",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        corpus.metadata.test.unseen_count,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TransformLog {
    transform: String,
    before: usize,
    after: usize,
    removed: Vec<String>,
}

fn removed_ids(before: &[ClozeInstance], after: &[ClozeInstance]) -> Vec<String> {
    let kept: std::collections::HashSet<&str> = after.iter().map(|i| i.id.as_str()).collect();
    before
        .iter()
        .filter(|i| !kept.contains(i.id.as_str()))
        .map(|i| i.id.clone())
        .collect()
}

pub fn prepare(a: &PrepareArgs) -> Result<()> {
    let run = RunConfig::load(&a.common)?;
    existing(&a.input, "--input")?;
    if a.transforms.contains(&Transform::SeenFilter) && a.train.is_none() {
        return Err(usage("seen-filter needs --train"));
    }
    if a.field_map.is_some() && a.format != InputFormat::Marked {
        return Err(usage("--field-map only applies to --format marked"));
    }
    let train = a
        .train
        .as_deref()
        .map(|p| read_split(p, "--train"))
        .transpose()?;

    let (mut data, dropped) = match a.format {
        InputFormat::Canonical => (read_canonical(&a.input)?, Vec::new()),
        InputFormat::Cbt => {
            let imported = read_cbt(&a.input)?;
            (imported.dataset, imported.dropped)
        }
        InputFormat::Marked => {
            let map: FieldMap = match &a.field_map {
                Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
                    .with_context(|| format!("parsing field map {}", p.display()))?,
                None => FieldMap::default(),
            };
            read_marked_jsonl(&a.input, &map)?
        }
    };
    let mut log = vec![TransformLog {
        transform: "import".into(),
        before: data.len() + dropped.len(),
        after: data.len(),
        removed: dropped,
    }];

    let mut maps: Vec<EntityMap> = Vec::new();
    for t in &a.transforms {
        let next = match t {
            Transform::Anonymize => {
                let (instances, new_maps): (Vec<_>, Vec<_>) = data
                    .iter()
                    .map(|i| {
                        let r = anonymize(i);
                        (r.instance, r.map)
                    })
                    .unzip();
                // A second anonymization maps symbols to symbols; compose so
                // the saved map still leads back to the original text.
                maps = if maps.is_empty() {
                    new_maps
                } else {
                    new_maps
                        .into_iter()
                        .zip(&maps)
                        .map(|(m, old)| EntityMap {
                            mapping: m.mapping.iter().map(|s| old.restore(s)).collect(),
                            ..m
                        })
                        .collect()
                };
                Dataset::new(instances)?
            }
            Transform::Cap(k) => Dataset::new(
                data.iter()
                    .map(|i| cap_candidates(i, *k, run.seed))
                    .collect(),
            )?,
            Transform::SeenFilter => {
                let kept = filter_seen(&data, train.as_ref().expect("checked above"));
                // Keep the maps aligned with the surviving instances.
                if !maps.is_empty() {
                    let ids: std::collections::HashSet<&str> =
                        kept.iter().map(|i| i.id.as_str()).collect();
                    maps.retain(|m| ids.contains(m.id.as_str()));
                }
                kept
            }
        };
        log.push(TransformLog {
            transform: t.to_string(),
            before: data.len(),
            after: next.len(),
            removed: removed_ids(&data, &next),
        });
        data = next;
    }

    let out = out_dir(&a.common)?;
    write_canonical(&data, out.join(&a.output))?;
    write_json(out.join("transforms.json"), &log)?;
    if !maps.is_empty() {
        let mut w = BufWriter::new(fs::File::create(out.join("entity_map.jsonl"))?);
        for m in &maps {
            writeln!(w, "{}", serde_json::to_string(m)?)?;
        }
        w.flush()?;
    }
    let transforms: Vec<String> = a.transforms.iter().map(Transform::to_string).collect();
    resolved(
        &out,
        "prepare",
        json!({
            "seed": run.seed,
            "input": display(&a.input),
            "format": value_name(a.format),
            "transforms": transforms,
            "train": a.train.as_deref().map(display),
            "output": a.output,
        }),
    )?;
    println!(
        "wrote {} instances to {}",
        data.len(),
        out.join(&a.output).display()
    );
    Ok(())
}

/// Builds an untrained model, copying pretrained vectors when given.
/// Returns the vocabulary coverage of the vectors.
fn build_model(
    config: &ModelConfig,
    train: &Dataset,
    embeddings: Option<&Path>,
) -> Result<(MemNet, Option<f64>)> {
    let vocab = build_vocab(config, train);
    let (table, coverage) = match embeddings {
        Some(p) => {
            existing(p, "--embeddings")?;
            let (t, c) = load_embeddings(p, &vocab)?;
            (Some(t), Some(c))
        }
        None => (None, None),
    };
    Ok((
        MemNet::new(config.clone(), vocab, table.as_ref())?,
        coverage,
    ))
}

fn log_epoch(r: &EpochReport) {
    eprintln!(
        "epoch {:>3}  loss {:.4}  dev acc {:.2}  dev f1 {:.2}",
        r.epoch, r.train_loss, r.dev_accuracy, r.dev_f1
    );
}

#[derive(Serialize)]
struct TrainLog<'a> {
    variant: Variant,
    best_epoch: usize,
    dev_score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    embedding_coverage: Option<f64>,
    epochs: &'a [EpochReport],
}

#[derive(Serialize)]
struct TraceLine<'a> {
    id: &'a str,
    prediction: &'a str,
    gold: &'a str,
    /// One attention vector per hop.
    alphas: &'a [Vec<f64>],
    #[serde(skip_serializing_if = "Option::is_none")]
    feature: Option<usize>,
    disagreement: bool,
}

fn write_trace(path: &Path, outputs: &[Output]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for o in outputs {
        let line = TraceLine {
            id: &o.id,
            prediction: &o.prediction,
            gold: &o.gold,
            alphas: &o.trace.alphas,
            feature: o.trace.feature,
            disagreement: o.trace.disagreement,
        };
        writeln!(w, "{}", serde_json::to_string(&line)?)?;
    }
    w.flush()?;
    Ok(())
}

fn predict_all(model: &MemNet, data: &Dataset) -> Result<Vec<Output>> {
    Ok(data
        .iter()
        .map(|i| model.predict_instance(i))
        .collect::<Result<Vec<_>, _>>()?)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut run = RunConfig::load(&a.common)?;
    run.apply_model(&a.model);
    run.apply_optim(&a.optim);
    let train_set = read_split(&a.train, "--train")?;
    let dev = read_split(&a.dev, "--dev")?;
    let (model, coverage) = build_model(&run.model, &train_set, a.embeddings.as_deref())?;
    if let Some(c) = coverage {
        eprintln!(
            "pretrained vectors cover {:.1}% of the vocabulary",
            100.0 * c
        );
    }
    let outcome = train_with(model, &train_set, &dev, &run.train, log_epoch)?;

    let out = out_dir(&a.common)?;
    outcome.checkpoint.save(out.join("model.ckpt"))?;
    write_json(
        out.join("train_log.json"),
        &TrainLog {
            variant: run.model.variant,
            best_epoch: outcome.checkpoint.epoch,
            dev_score: outcome.checkpoint.dev_score,
            embedding_coverage: coverage,
            epochs: &outcome.epochs,
        },
    )?;
    if a.trace {
        write_trace(
            &out.join("trace.jsonl"),
            &predict_all(&outcome.model, &dev)?,
        )?;
    }
    resolved(
        &out,
        "train",
        json!({
            "seed": run.seed,
            "train": display(&a.train),
            "dev": display(&a.dev),
            "embeddings": a.embeddings.as_deref().map(display),
            "trace": a.trace,
            "model_config": run.model,
            "train_config": run.train,
        }),
    )?;
    println!(
        "best epoch {} with dev score {:.2}; checkpoint at {}",
        outcome.checkpoint.epoch,
        outcome.checkpoint.dev_score,
        out.join("model.ckpt").display()
    );
    Ok(())
}

/// Rejects test data that shares no context word with the model vocabulary,
/// which means the checkpoint was trained on a different corpus.
fn check_vocabulary(model: &MemNet, data: &Dataset) -> Result<()> {
    let vocab = model.vocab();
    let known = data
        .iter()
        .flat_map(|i| i.passage.iter().chain(&i.query))
        .any(|t| vocab.contains_token(t) && !Vocabulary::is_reserved(vocab.token_id(t)));
    if !known && !data.is_empty() {
        bail!("vocabulary mismatch: no test token occurs in the checkpoint vocabulary");
    }
    Ok(())
}

fn write_report(out: &Path, preds: &[Prediction], report: &EvalReport) -> Result<()> {
    write_predictions(out.join("predictions.jsonl"), preds)?;
    report.write(out.join("report.json"))?;
    println!(
        "EM {:.2}  F1 {:.2}  over {} instances{}",
        report.em,
        report.f1,
        report.count,
        match (&report.seen, &report.unseen) {
            (Some(s), Some(u)) => format!(
                "  (seen EM {:.2} on {}, unseen EM {:.2} on {})",
                s.em, s.count, u.em, u.count
            ),
            _ => String::new(),
        }
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let run = RunConfig::load(&a.common)?;
    existing(&a.checkpoint, "--checkpoint")?;
    let ck = Checkpoint::load(&a.checkpoint)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let model = ck.to_model()?;
    let test = read_split(&a.test, "--test")?;
    let train_set = a
        .train
        .as_deref()
        .map(|p| read_split(p, "--train"))
        .transpose()?;
    check_vocabulary(&model, &test)?;

    let outputs = predict_all(&model, &test)?;
    let preds: Vec<Prediction> = outputs
        .iter()
        .map(|o| Prediction {
            id: o.id.clone(),
            prediction: o.prediction.clone(),
            alpha: if a.stats {
                o.trace.alphas.last().cloned()
            } else {
                None
            },
        })
        .collect();
    if a.stats && !model.config().variant.uses_memory() {
        eprintln!(
            "note: the {} variant has no attention; no statistics recorded",
            model.config().variant
        );
    }
    let mut report = evaluate(&preds, &test, train_set.as_ref())?;
    if model.config().variant == Variant::Pointer {
        report.pointer_disagreements =
            Some(outputs.iter().filter(|o| o.trace.disagreement).count());
    }
    let out = out_dir(&a.common)?;
    write_report(&out, &preds, &report)?;
    if let Some(stats) = &report.attention {
        println!(
            "mean max attention {:.4}  mean absolute deviation {:.4}",
            stats.mean_max_alpha, stats.mean_abs_deviation
        );
    }
    if let Some(other) = &a.compare {
        existing(other, "--compare")?;
        let base = EvalReport::read(other)?;
        let cmp = compare_runs(&base, &report)?;
        write_json(out.join("comparison.json"), &cmp)?;
        println!(
            "vs {}: EM {:+.2}  F1 {:+.2}  fixed {}  broken {}",
            other.display(),
            cmp.overall.em,
            cmp.overall.f1,
            cmp.fixed.len(),
            cmp.broken.len()
        );
    }
    resolved(
        &out,
        "eval",
        json!({
            "seed": run.seed,
            "checkpoint": display(&a.checkpoint),
            "test": display(&a.test),
            "train": a.train.as_deref().map(display),
            "stats": a.stats,
            "compare": a.compare.as_deref().map(display),
            "model_config": ck.model_config,
        }),
    )
}

pub fn baseline(a: &BaselineArgs) -> Result<()> {
    let mut run = RunConfig::load(&a.common)?;
    run.apply_model(&a.model);
    run.apply_optim(&a.optim);
    let test = read_split(&a.test, "--test")?;
    let train_set = a
        .train
        .as_deref()
        .map(|p| read_split(p, "--train"))
        .transpose()?;
    let out = out_dir(&a.common)?;

    let answer = |i: &ClozeInstance, p: Option<String>| Prediction {
        id: i.id.clone(),
        prediction: p.unwrap_or_default(),
        alpha: None,
    };
    let preds: Vec<Prediction> = match a.kind {
        BaselineKind::Random => test
            .iter()
            .map(|i| answer(i, baseline_random(i, run.seed)))
            .collect(),
        BaselineKind::Maxfreq => test
            .iter()
            .map(|i| answer(i, baseline_maxfreq(i)))
            .collect(),
        BaselineKind::Simwindow => {
            let path = a
                .embeddings
                .as_deref()
                .ok_or_else(|| usage("simwindow needs --embeddings"))?;
            existing(path, "--embeddings")?;
            let table = EmbeddingTable::read(path)?;
            test.iter()
                .map(|i| answer(i, baseline_simwindow(i, &table, run.model.radius)))
                .collect()
        }
        BaselineKind::QueryOnly => {
            let (Some(train_set), Some(dev_path)) = (&train_set, &a.dev) else {
                return Err(usage("query-only needs --train and --dev"));
            };
            let dev = read_split(dev_path, "--dev")?;
            run.model.variant = Variant::QueryOnly;
            let (model, _) = build_model(&run.model, train_set, None)?;
            let outcome = train_with(model, train_set, &dev, &run.train, log_epoch)?;
            outcome.checkpoint.save(out.join("model.ckpt"))?;
            predict_all(&outcome.model, &test)?
                .into_iter()
                .map(|o| Prediction {
                    id: o.id,
                    prediction: o.prediction,
                    alpha: None,
                })
                .collect()
        }
    };
    let report = evaluate(&preds, &test, train_set.as_ref())?;
    write_report(&out, &preds, &report)?;
    let kind = value_name(a.kind);
    let mut body = json!({
        "seed": run.seed,
        "kind": kind,
        "test": display(&a.test),
        "train": a.train.as_deref().map(display),
        "dev": a.dev.as_deref().map(display),
        "embeddings": a.embeddings.as_deref().map(display),
        "radius": run.model.radius,
    });
    if a.kind == BaselineKind::QueryOnly {
        body["model_config"] = serde_json::to_value(&run.model)?;
        body["train_config"] = serde_json::to_value(&run.train)?;
    }
    resolved(&out, "baseline", body)
}

#[derive(Serialize)]
struct GridBest {
    lr: f64,
    dim: usize,
    hops: usize,
    epoch: usize,
    dev_score: f64,
}

#[derive(Serialize)]
struct GridReport<'a> {
    rows: &'a [GridRow],
    best: GridBest,
}

pub fn grid(a: &GridArgs) -> Result<()> {
    let mut run = RunConfig::load(&a.common)?;
    run.apply_model(&a.model);
    run.apply_optim(&a.optim);
    set(&mut run.train.grid_lr, a.grid_lr.clone());
    set(&mut run.train.grid_dim, a.grid_dim.clone());
    set(&mut run.train.grid_hops, a.grid_hops.clone());
    let train_set = read_split(&a.train, "--train")?;
    let dev = read_split(&a.dev, "--dev")?;
    let table = match &a.embeddings {
        Some(p) => {
            existing(p, "--embeddings")?;
            Some(load_embeddings(p, &build_vocab(&run.model, &train_set))?.0)
        }
        None => None,
    };
    let result = grid_search(
        &run.model,
        &run.train,
        &train_set,
        &dev,
        table.as_ref(),
        |r| {
            eprintln!(
                "lr {:<8} dim {:<4} hops {}  dev {:.2} (epoch {})",
                r.lr, r.dim, r.hops, r.dev_score, r.best_epoch
            )
        },
    )?;
    let out = out_dir(&a.common)?;
    let ck = &result.best.checkpoint;
    ck.save(out.join("model.ckpt"))?;
    write_json(
        out.join("grid.json"),
        &GridReport {
            rows: &result.rows,
            best: GridBest {
                lr: ck.train_config.lr,
                dim: ck.model_config.dim,
                hops: ck.model_config.hops,
                epoch: ck.epoch,
                dev_score: ck.dev_score,
            },
        },
    )?;
    resolved(
        &out,
        "grid",
        json!({
            "seed": run.seed,
            "train": display(&a.train),
            "dev": display(&a.dev),
            "embeddings": a.embeddings.as_deref().map(display),
            "model_config": run.model,
            "train_config": run.train,
        }),
    )?;
    println!(
        "best: lr {} dim {} hops {} with dev score {:.2}",
        ck.train_config.lr, ck.model_config.dim, ck.model_config.hops, ck.dev_score
    );
    Ok(())
}
