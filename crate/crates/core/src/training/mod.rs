//! Mini-batch Adam training with dev-set model selection, grid search and
//! checkpoints.

mod adam;
mod checkpoint;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, EmbeddingTable};
use crate::evaluation::{exact_match, token_f1};
use crate::models::{build_vocab, MemNet, ModelConfig, ModelError, Output, Prepared, Variant};
use crate::ndcompute::{ComputeError, Gradients, Tape};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointError, RngState, MAGIC, VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    Accuracy,
    F1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
    pub selection: SelectionMetric,
    pub grid_lr: Vec<f64>,
    pub grid_dim: Vec<usize>,
    pub grid_hops: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            epochs: 10,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 13,
            selection: SelectionMetric::Accuracy,
            grid_lr: vec![0.01, 0.005, 0.001, 0.0005],
            grid_dim: vec![50, 100, 200],
            grid_hops: vec![1, 2, 3],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(TrainError::Config(format!(
                "learning rate {} must be finite and non-negative",
                self.lr
            )));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0} set is empty")]
    EmptySplit(&'static str),
    #[error("no training instance has a target the {0} variant can learn")]
    NoTargets(Variant),
    #[error("non-finite loss {loss} in epoch {epoch}, batch {batch} (instances {first_id}..)")]
    NonFinite {
        epoch: usize,
        batch: usize,
        loss: f64,
        first_id: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Compute(#[from] ComputeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean per-instance training loss over the epoch.
    pub train_loss: f64,
    pub dev_accuracy: f64,
    pub dev_f1: f64,
    pub dev_score: f64,
    pub trained: usize,
    /// Training instances without a learnable target.
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the selected epoch.
    pub model: MemNet,
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochReport>,
}

fn has_target(variant: Variant, p: &Prepared) -> bool {
    match variant {
        Variant::Pointer => p.candidate.is_some(),
        _ => p.label.is_some(),
    }
}

/// Accuracy and F1 (percent) of outputs against their gold answers.
pub fn score_outputs(outputs: &[Output]) -> (f64, f64) {
    if outputs.is_empty() {
        return (0.0, 0.0);
    }
    let n = outputs.len() as f64;
    let em: f64 = outputs
        .iter()
        .map(|o| exact_match(&o.prediction, &o.gold))
        .sum();
    let f1: f64 = outputs
        .iter()
        .map(|o| token_f1(&o.prediction, &o.gold))
        .sum();
    (100.0 * em / n, 100.0 * f1 / n)
}

pub fn train(
    model: MemNet,
    train: &Dataset,
    dev: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_with(model, train, dev, cfg, |_| {})
}

/// Trains for `cfg.epochs` epochs and keeps the parameters with the best dev
/// score (earliest epoch on ties). `on_epoch` sees each epoch's report.
pub fn train_with(
    mut model: MemNet,
    train: &Dataset,
    dev: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit("training"));
    }
    if dev.is_empty() {
        return Err(TrainError::EmptySplit("dev"));
    }
    let variant = model.config().variant;
    let train_inputs = train
        .iter()
        .map(|i| model.prepare(i))
        .collect::<Result<Vec<_>, _>>()?;
    let dev_inputs = dev
        .iter()
        .map(|i| model.prepare(i))
        .collect::<Result<Vec<_>, _>>()?;
    let trainable: Vec<usize> = (0..train_inputs.len())
        .filter(|&i| has_target(variant, &train_inputs[i]))
        .collect();
    if trainable.is_empty() {
        return Err(TrainError::NoTargets(variant));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(model.params());
    let mut grads = Gradients::zeros_like(model.params());
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<Checkpoint> = None;
    for epoch in 1..=cfg.epochs {
        let mut order = trainable.clone();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            grads.zero();
            let (arch, params) = model.split_mut();
            let mut batch_loss = 0.0;
            for &i in batch {
                let mut tape = Tape::new(params);
                let loss = arch
                    .loss(&mut tape, &train_inputs[i])?
                    .expect("trainable instance has a target");
                batch_loss += tape.value(loss).item();
                tape.backward_into(loss, &mut grads)?;
            }
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: b + 1,
                    loss: batch_loss,
                    first_id: train_inputs[batch[0]].id.clone(),
                });
            }
            grads.scale(1.0 / batch.len() as f64);
            adam_step(params, &grads, &mut adam, cfg.lr, &cfg.adam);
            total += batch_loss;
        }

        let outputs = dev_inputs
            .iter()
            .map(|p| model.predict(p))
            .collect::<Result<Vec<_>, _>>()?;
        let (acc, f1) = score_outputs(&outputs);
        let score = match cfg.selection {
            SelectionMetric::Accuracy => acc,
            SelectionMetric::F1 => f1,
        };
        let report = EpochReport {
            epoch,
            train_loss: total / trainable.len() as f64,
            dev_accuracy: acc,
            dev_f1: f1,
            dev_score: score,
            trained: trainable.len(),
            skipped: train_inputs.len() - trainable.len(),
        };
        on_epoch(&report);
        epochs.push(report);
        if best.as_ref().is_none_or(|b| score > b.dev_score) {
            let rng_state = RngState {
                seed: cfg.seed,
                word_pos: rng.get_word_pos(),
            };
            best = Some(Checkpoint::new(
                &model,
                cfg.clone(),
                rng_state,
                epoch,
                score,
            ));
        }
    }
    let checkpoint = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model: checkpoint.to_model()?,
        checkpoint,
        epochs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub lr: f64,
    pub dim: usize,
    pub hops: usize,
    pub dev_score: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    /// Sorted by dev score, best first; ties keep grid order.
    pub rows: Vec<GridRow>,
    pub best: TrainOutcome,
}

/// Trains one model per (lr, dim, hops) combination of the grid lists.
pub fn grid_search(
    base: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &Dataset,
    dev: &Dataset,
    pretrained: Option<&EmbeddingTable>,
    mut on_run: impl FnMut(&GridRow),
) -> Result<GridResult, TrainError> {
    if cfg.grid_lr.is_empty() || cfg.grid_dim.is_empty() || cfg.grid_hops.is_empty() {
        return Err(TrainError::Config("grid lists must be non-empty".into()));
    }
    let vocab = build_vocab(base, train_set);
    let mut rows = Vec::new();
    let mut best: Option<TrainOutcome> = None;
    for &lr in &cfg.grid_lr {
        for &dim in &cfg.grid_dim {
            for &hops in &cfg.grid_hops {
                let mc = ModelConfig {
                    dim,
                    hops,
                    ..base.clone()
                };
                let tc = TrainConfig { lr, ..cfg.clone() };
                let model = MemNet::new(mc, vocab.clone(), pretrained)?;
                let outcome = train(model, train_set, dev, &tc)?;
                let row = GridRow {
                    lr,
                    dim,
                    hops,
                    dev_score: outcome.checkpoint.dev_score,
                    best_epoch: outcome.checkpoint.epoch,
                };
                on_run(&row);
                if best
                    .as_ref()
                    .is_none_or(|b| row.dev_score > b.checkpoint.dev_score)
                {
                    best = Some(outcome);
                }
                rows.push(row);
            }
        }
    }
    rows.sort_by(|a, b| b.dev_score.total_cmp(&a.dev_score));
    Ok(GridResult {
        rows,
        best: best.expect("non-empty grid"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, ClozeInstance, EntitySpan, SyntheticConfig};

    fn one() -> Dataset {
        Dataset::new(vec![ClozeInstance {
            id: "m".into(),
            passage: "a X b c Y d e Z f".split(' ').map(String::from).collect(),
            entities: vec![
                EntitySpan::new(1, 1, "X"),
                EntitySpan::new(4, 4, "Y"),
                EntitySpan::new(7, 7, "Z"),
            ],
            query: "c @gap d".split(' ').map(String::from).collect(),
            answer: "Y".into(),
            candidates: None,
        }])
        .unwrap()
    }

    fn fresh(variant: Variant, data: &Dataset, dim: usize) -> MemNet {
        let config = ModelConfig {
            variant,
            dim,
            ..ModelConfig::default()
        };
        let vocab = build_vocab(&config, data);
        MemNet::new(config, vocab, None).unwrap()
    }

    #[test]
    fn memorizes_a_single_instance() {
        let d = one();
        for variant in [Variant::Vanilla, Variant::AttentionFeat, Variant::QueryOnly] {
            let cfg = TrainConfig {
                lr: 0.05,
                epochs: 300,
                batch_size: 1,
                ..TrainConfig::default()
            };
            let out = train(fresh(variant, &d, 8), &d, &d, &cfg).unwrap();
            let last = out.epochs.last().unwrap();
            assert!(last.train_loss < 0.01, "{variant}: {}", last.train_loss);
            assert_eq!(last.dev_accuracy, 100.0);
        }
    }

    #[test]
    fn same_seed_same_run() {
        let corpus = generate_synthetic(&SyntheticConfig {
            train_size: 60,
            dev_size: 20,
            test_size: 1,
            entity_pool_size: 30,
            distractor_windows: 5,
            entities_per_passage: 4,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            lr: 0.01,
            ..TrainConfig::default()
        };
        let run = || {
            train(
                fresh(Variant::Vanilla, &corpus.train, 10),
                &corpus.train,
                &corpus.dev,
                &cfg,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.epochs, b.epochs);
        assert_eq!(a.checkpoint, b.checkpoint);
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let d = one();
        let model = fresh(Variant::Vanilla, &d, 4);
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 3,
            ..TrainConfig::default()
        };
        let out = train(model.clone(), &d, &d, &cfg).unwrap();
        assert_eq!(out.model.params(), model.params());
        assert!(out
            .epochs
            .iter()
            .all(|e| e.dev_score == out.epochs[0].dev_score));
        assert_eq!(out.checkpoint.epoch, 1);
    }

    #[test]
    fn pointer_reaches_oracle_on_full_overlap_task() {
        let corpus = generate_synthetic(&SyntheticConfig {
            train_size: 400,
            dev_size: 100,
            test_size: 1,
            entity_pool_size: 100,
            distractor_windows: 10,
            entities_per_passage: 8,
            vocab_size: 500,
            overlap: 4,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            lr: 0.005,
            ..TrainConfig::default()
        };
        let out = train(
            fresh(Variant::Pointer, &corpus.train, 50),
            &corpus.train,
            &corpus.dev,
            &cfg,
        )
        .unwrap();
        assert!(out.checkpoint.dev_score >= 95.0, "{:?}", out.epochs);
    }

    #[test]
    fn invalid_configs_and_empty_splits() {
        let d = one();
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(fresh(Variant::Vanilla, &d, 4), &d, &d, &bad),
            Err(TrainError::Config(_))
        ));
        let empty = Dataset::new(vec![]).unwrap();
        assert!(matches!(
            train(
                fresh(Variant::Vanilla, &d, 4),
                &d,
                &empty,
                &TrainConfig::default()
            ),
            Err(TrainError::EmptySplit("dev"))
        ));
    }

    #[test]
    fn exploding_loss_names_the_batch() {
        let d = one();
        let mut model = fresh(Variant::Vanilla, &d, 4);
        let w = model.params().find("W").unwrap();
        model.params_mut().get_mut(w).fill(f64::NAN);
        match train(model, &d, &d, &TrainConfig::default()) {
            Err(TrainError::NonFinite {
                epoch: 1,
                batch: 1,
                first_id,
                ..
            }) => assert_eq!(first_id, "m"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn grid_rows_are_sorted_and_finite() {
        let d = one();
        let cfg = TrainConfig {
            epochs: 2,
            grid_lr: vec![0.01, 0.001],
            grid_dim: vec![4],
            grid_hops: vec![1, 2],
            ..TrainConfig::default()
        };
        let g = grid_search(&ModelConfig::default(), &cfg, &d, &d, None, |_| {}).unwrap();
        assert_eq!(g.rows.len(), 4);
        assert!(g.rows.iter().all(|r| r.dev_score.is_finite()));
        assert!(g.rows.windows(2).all(|w| w[0].dev_score >= w[1].dev_score));
        assert_eq!(g.best.checkpoint.dev_score, g.rows[0].dev_score);
        let single = TrainConfig {
            grid_lr: vec![0.01],
            grid_hops: vec![1],
            ..cfg
        };
        assert_eq!(
            grid_search(&ModelConfig::default(), &single, &d, &d, None, |_| {})
                .unwrap()
                .rows
                .len(),
            1
        );
    }
}
