use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ModelConfig, ModelError, Variant};
use crate::corpus::{
    anonymize, extract_windows, ClozeInstance, Dataset, EmbeddingTable, EntityMap, Vocabulary,
    WindowSet,
};
use crate::ndcompute::{ops, ComputeError, ParamId, ParamStore, Tape, Tensor, Var};

const INIT_RANGE: f64 = 0.1;

/// Builds the vocabulary and answer space a model of this config trains on.
pub fn build_vocab(config: &ModelConfig, train: &Dataset) -> Vocabulary {
    if config.anonymized {
        let anon = train.iter().map(|i| anonymize(i).instance).collect();
        Vocabulary::build(
            &Dataset::new(anon).expect("anonymization keeps instances valid"),
            config.min_count,
        )
    } else {
        Vocabulary::build(train, config.min_count)
    }
}

/// An instance turned into model inputs, with its training targets.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: String,
    pub windows: WindowSet,
    pub has_candidate_list: bool,
    /// Gold answer in the answer space, if it belongs to it.
    pub label: Option<usize>,
    /// Gold answer among the candidates, if some kept window holds it.
    pub candidate: Option<usize>,
    /// Gold answer as written in the original instance.
    pub gold: String,
    pub map: Option<EntityMap>,
}

/// Recorded variables of one forward pass.
#[derive(Debug, Clone)]
pub struct Graph {
    pub queries: Vec<Var>,
    pub alphas: Vec<Var>,
    pub outputs: Vec<Var>,
    /// Answer-space index of the one-hot attention feature.
    pub feature: Option<usize>,
    /// Logits over the answer space, or per-candidate attention mass for the
    /// pointer variant.
    pub scores: Var,
    pub probs: Var,
}

/// Plain values of one forward pass and the resulting decision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForwardTrace {
    pub queries: Vec<Vec<f64>>,
    pub alphas: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    pub feature: Option<usize>,
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
    /// Answer-space label (classifiers) or candidate index (pointer).
    pub predicted: usize,
    /// Pointer only: the summed-mass argmax picks a different candidate than
    /// the most attended window.
    pub disagreement: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Output {
    pub id: String,
    /// Predicted entity text, de-anonymized.
    pub prediction: String,
    pub gold: String,
    pub trace: ForwardTrace,
}

/// One-hot over `num_labels` at the label of the most attended window's
/// candidate; all zeros when that candidate is outside the answer space.
pub fn attention_feature(
    alpha: &[f64],
    window_labels: &[Option<usize>],
    num_labels: usize,
) -> (Vec<f64>, Option<usize>) {
    let mut phi = vec![0.0; num_labels];
    let label = ops::argmax(alpha)
        .and_then(|j| window_labels[j])
        .filter(|&l| l < num_labels);
    if let Some(l) = label {
        phi[l] = 1.0;
    }
    (phi, label)
}

/// Pointer decision: the candidate of the most attended window among the
/// windows accepted by `allowed`, and attention mass summed per candidate.
pub fn pointer_predict(
    alpha: &[f64],
    window_candidates: &[usize],
    num_candidates: usize,
    allowed: impl Fn(usize) -> bool,
) -> (usize, Vec<f64>) {
    let mut mass = vec![0.0; num_candidates];
    for (&c, a) in window_candidates.iter().zip(alpha) {
        mass[c] += a;
    }
    let any_allowed = window_candidates.iter().any(|&c| allowed(c));
    let mut best: Option<usize> = None;
    for (j, &c) in window_candidates.iter().enumerate() {
        if any_allowed && !allowed(c) {
            continue;
        }
        if best.is_none_or(|b| alpha[j] > alpha[b]) {
            best = Some(j);
        }
    }
    (window_candidates[best.expect("at least one window")], mass)
}

/// Parameter layout of a configured model; the forward graph is defined
/// here so it can run against any store with this layout.
#[derive(Debug, Clone)]
pub struct Architecture {
    config: ModelConfig,
    num_labels: usize,
    e: ParamId,
    e_out: Option<ParamId>,
    w: Option<ParamId>,
    b: Option<ParamId>,
}

fn expected_params(
    config: &ModelConfig,
    num_tokens: usize,
    num_labels: usize,
) -> Vec<(&'static str, Vec<usize>)> {
    let d = config.dim;
    let mut out = vec![("E", vec![num_tokens, d])];
    if config.variant.uses_memory() {
        out.push(("E_prime", vec![num_tokens, d]));
    }
    let k = match config.variant {
        Variant::Vanilla | Variant::BestWindow => 4 * d,
        Variant::AttentionFeat => 4 * d + num_labels,
        Variant::AttentionFeatOnly => num_labels,
        Variant::QueryOnly => d,
        Variant::Pointer => return out,
    };
    out.push(("W", vec![num_labels, k]));
    out.push(("b", vec![num_labels]));
    out
}

impl Architecture {
    fn from_store(
        config: &ModelConfig,
        store: &ParamStore,
        num_tokens: usize,
        num_labels: usize,
    ) -> Result<Self, ModelError> {
        let mut ids = Vec::new();
        for (name, shape) in expected_params(config, num_tokens, num_labels) {
            let id = store
                .find(name)
                .ok_or_else(|| ModelError::MissingParam(name.into()))?;
            if store.get(id).shape() != shape.as_slice() {
                return Err(ModelError::ParamShape {
                    name: name.into(),
                    expected: shape,
                    got: store.get(id).shape().to_vec(),
                });
            }
            ids.push(id);
        }
        if store.len() != ids.len() {
            let extra = store
                .iter()
                .find(|(id, _, _)| !ids.contains(id))
                .map(|(_, n, _)| n.to_string());
            return Err(ModelError::Config(format!(
                "unexpected parameter `{}`",
                extra.unwrap_or_default()
            )));
        }
        let find = |n: &str| store.find(n);
        Ok(Self {
            config: config.clone(),
            num_labels,
            e: ids[0],
            e_out: find("E_prime"),
            w: find("W"),
            b: find("b"),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    fn head(&self, tape: &mut Tape<'_>, features: Var) -> Result<(Var, Var), ComputeError> {
        let w = tape.param(self.w.expect("classifier variant has W"));
        let b = tape.param(self.b.expect("classifier variant has b"));
        let logits = tape.linear(w, features, b)?;
        let probs = tape.softmax(logits)?;
        Ok((logits, probs))
    }

    fn interactions(tape: &mut Tape<'_>, o: Var, q: Var) -> Result<Vec<Var>, ComputeError> {
        let sum = tape.add(o, q)?;
        let prod = tape.mul(o, q)?;
        Ok(vec![o, q, sum, prod])
    }

    /// Records the forward pass for one instance.
    pub fn graph(&self, tape: &mut Tape<'_>, ws: &WindowSet) -> Result<Graph, ComputeError> {
        let e = tape.param(self.e);
        let mut q = tape.gather_mean(e, &ws.query)?;
        if self.config.variant == Variant::QueryOnly {
            let (scores, probs) = self.head(tape, q)?;
            return Ok(Graph {
                queries: vec![q],
                alphas: vec![],
                outputs: vec![],
                feature: None,
                scores,
                probs,
            });
        }
        if ws.windows.is_empty() {
            return Err(ComputeError::EmptyInput);
        }
        let e_out = tape.param(self.e_out.expect("memory variant has E_prime"));
        let mut keys = Vec::with_capacity(ws.windows.len());
        let mut values = Vec::with_capacity(ws.windows.len());
        for w in &ws.windows {
            keys.push(tape.gather_mean(e, &w.tokens)?);
            let value_tokens = if self.config.key_value {
                &w.entity_tokens
            } else {
                &w.tokens
            };
            values.push(tape.gather_mean(e_out, value_tokens)?);
        }

        let mut queries = Vec::with_capacity(self.config.hops);
        let mut alphas = Vec::with_capacity(self.config.hops);
        let mut outputs: Vec<Var> = Vec::with_capacity(self.config.hops);
        for hop in 0..self.config.hops {
            if hop > 0 {
                q = tape.add(q, outputs[hop - 1])?;
            }
            let sims = keys
                .iter()
                .map(|&k| tape.cosine(q, k))
                .collect::<Result<Vec<_>, _>>()?;
            let sims = tape.concat(&sims)?;
            let alpha = tape.softmax(sims)?;
            let o = tape.weighted_sum(alpha, &values)?;
            queries.push(q);
            alphas.push(alpha);
            outputs.push(o);
        }
        let alpha = tape
            .value(*alphas.last().expect("hops ≥ 1"))
            .data()
            .to_vec();
        let o = *outputs.last().expect("hops ≥ 1");
        let window_labels: Vec<Option<usize>> = ws
            .windows
            .iter()
            .map(|w| ws.candidates[w.candidate].label)
            .collect();
        let (phi, feature) = attention_feature(&alpha, &window_labels, self.num_labels);

        let (scores, probs) = match self.config.variant {
            Variant::Pointer => {
                let mass = tape.segment_sum(
                    *alphas.last().expect("hops ≥ 1"),
                    &ws.window_candidates(),
                    ws.candidates.len(),
                )?;
                (mass, mass)
            }
            Variant::Vanilla => {
                let parts = Self::interactions(tape, o, q)?;
                let x = tape.concat(&parts)?;
                self.head(tape, x)?
            }
            Variant::BestWindow => {
                let best = ops::argmax(&alpha).expect("non-empty attention");
                let parts = Self::interactions(tape, values[best], q)?;
                let x = tape.concat(&parts)?;
                self.head(tape, x)?
            }
            Variant::AttentionFeat => {
                let mut parts = Self::interactions(tape, o, q)?;
                parts.push(tape.constant(Tensor::vector(phi)));
                let x = tape.concat(&parts)?;
                self.head(tape, x)?
            }
            Variant::AttentionFeatOnly => {
                let x = tape.constant(Tensor::vector(phi));
                self.head(tape, x)?
            }
            Variant::QueryOnly => unreachable!("handled above"),
        };
        Ok(Graph {
            queries,
            alphas,
            outputs,
            feature: if matches!(
                self.config.variant,
                Variant::AttentionFeat | Variant::AttentionFeatOnly
            ) {
                feature
            } else {
                None
            },
            scores,
            probs,
        })
    }

    /// Cross-entropy of the gold answer; `None` when the instance has no
    /// target this variant can score.
    pub fn loss(&self, tape: &mut Tape<'_>, p: &Prepared) -> Result<Option<Var>, ComputeError> {
        let target = match self.config.variant {
            Variant::Pointer => p.candidate,
            _ => p.label,
        };
        let Some(target) = target else {
            return Ok(None);
        };
        let g = self.graph(tape, &p.windows)?;
        Ok(Some(tape.cross_entropy(g.probs, target)?))
    }
}

/// A model with its parameters and vocabulary.
#[derive(Debug, Clone)]
pub struct MemNet {
    arch: Architecture,
    params: ParamStore,
    vocab: Vocabulary,
}

impl MemNet {
    /// Fresh model: embeddings uniform in ±0.1 (rows covered by `pretrained`
    /// copied from it), classifier weights and bias zero.
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        pretrained: Option<&EmbeddingTable>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let (v, c, d) = (vocab.num_tokens(), vocab.num_labels(), config.dim);
        if config.variant.has_head() && c == 0 {
            return Err(ModelError::EmptyLabelSpace {
                variant: config.variant,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        for (name, shape) in expected_params(&config, v, c) {
            let mut t = Tensor::zeros(&shape);
            if name.starts_with('E') {
                t.data_mut()
                    .iter_mut()
                    .for_each(|x| *x = rng.gen_range(-INIT_RANGE..INIT_RANGE));
                if let Some(table) = pretrained.filter(|_| name == "E" || config.pretrained_output)
                {
                    if table.dim() != d {
                        return Err(ModelError::EmbeddingDim {
                            expected: d,
                            got: table.dim(),
                        });
                    }
                    for (i, tok) in vocab.tokens().iter().enumerate() {
                        if let Some(vec) = table.get(tok) {
                            t.row_mut(i).copy_from_slice(vec);
                        }
                    }
                }
            }
            store.insert(name, t);
        }
        Self::from_parts(config, vocab, store)
    }

    /// Reassembles a model, checking every parameter shape.
    pub fn from_parts(
        config: ModelConfig,
        vocab: Vocabulary,
        params: ParamStore,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let arch =
            Architecture::from_store(&config, &params, vocab.num_tokens(), vocab.num_labels())?;
        Ok(Self {
            arch,
            params,
            vocab,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Parameters together with the read-only layout, for gradient checks
    /// and optimizer steps.
    pub fn split_mut(&mut self) -> (&Architecture, &mut ParamStore) {
        (&self.arch, &mut self.params)
    }

    /// Overwrites every parameter with seeded uniform values in ±`scale`.
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<ParamId> = self.params.ids().collect();
        for id in ids {
            self.params
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|x| *x = rng.gen_range(-scale..scale));
        }
    }

    pub fn prepare(&self, instance: &ClozeInstance) -> Result<Prepared, ModelError> {
        let cfg = &self.arch.config;
        let (inst, map) = if cfg.anonymized {
            let a = anonymize(instance);
            (a.instance, Some(a.map))
        } else {
            (instance.clone(), None)
        };
        let windows = extract_windows(&inst, cfg.radius, cfg.memory_size, &self.vocab)?;
        let key = inst.answer_key();
        let candidate = windows
            .candidate_index(&key)
            .filter(|&c| windows.windows.iter().any(|w| w.candidate == c));
        Ok(Prepared {
            id: inst.id.clone(),
            label: self.vocab.label_id(&key),
            candidate,
            has_candidate_list: inst.candidates.is_some(),
            gold: instance.answer.clone(),
            windows,
            map,
        })
    }

    pub fn predict(&self, p: &Prepared) -> Result<Output, ModelError> {
        let mut tape = Tape::new(&self.params);
        let g = self.arch.graph(&mut tape, &p.windows)?;
        let values = |vars: &[Var]| {
            vars.iter()
                .map(|&v| tape.value(v).data().to_vec())
                .collect::<Vec<_>>()
        };
        let alphas = values(&g.alphas);
        let scores = tape.value(g.scores).data().to_vec();
        let probs = tape.value(g.probs).data().to_vec();
        let ws = &p.windows;

        let (predicted, text, disagreement) = if self.arch.config.variant == Variant::Pointer {
            let alpha = alphas.last().expect("hops ≥ 1");
            let allowed = |c: usize| ws.candidates[c].allowed;
            let (cand, mass) =
                pointer_predict(alpha, &ws.window_candidates(), ws.candidates.len(), allowed);
            let present: Vec<usize> = (0..ws.candidates.len())
                .filter(|&c| ws.windows.iter().any(|w| w.candidate == c))
                .collect();
            let pool: Vec<usize> = if present.iter().any(|&c| allowed(c)) {
                present.into_iter().filter(|&c| allowed(c)).collect()
            } else {
                present
            };
            let by_mass = pool
                .iter()
                .copied()
                .reduce(|a, c| if mass[c] > mass[a] { c } else { a });
            (
                cand,
                ws.candidates[cand].text.clone(),
                by_mass != Some(cand),
            )
        } else {
            let domain: Vec<usize> = if p.has_candidate_list {
                let mut d: Vec<usize> = ws
                    .candidates
                    .iter()
                    .filter(|c| c.allowed)
                    .filter_map(|c| c.label)
                    .collect();
                d.sort_unstable();
                d.dedup();
                d
            } else {
                Vec::new()
            };
            let label = if domain.is_empty() {
                ops::argmax(&probs).expect("non-empty answer space")
            } else {
                domain
                    .iter()
                    .copied()
                    .reduce(|a, l| if probs[l] > probs[a] { l } else { a })
                    .expect("non-empty")
            };
            let text = self.vocab.label(label).expect("label in range").to_string();
            (label, text, false)
        };
        let prediction = match &p.map {
            Some(m) => m.restore(&text),
            None => text,
        };
        Ok(Output {
            id: p.id.clone(),
            prediction,
            gold: p.gold.clone(),
            trace: ForwardTrace {
                queries: values(&g.queries),
                outputs: values(&g.outputs),
                alphas,
                feature: g.feature,
                scores,
                probs,
                predicted,
                disagreement,
            },
        })
    }

    pub fn predict_instance(&self, instance: &ClozeInstance) -> Result<Output, ModelError> {
        self.predict(&self.prepare(instance)?)
    }
}
