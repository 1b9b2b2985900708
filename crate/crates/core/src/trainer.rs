//! Mini-batch training with self-adversarial negative sampling.
//!
//! Gradients are accumulated per fixed-size chunk of the batch, chunks run
//! on the rayon pool and are merged in order, so a fixed seed gives the same
//! parameters for any thread count.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, TrainConfig};
use crate::data::{EntityId, FilterIndex, Triple, TripleStore};
use crate::eval::{evaluate, EvalError, Side};
use crate::model::{EmbeddingTable, ModelError};
use crate::optim::{Optimizer, ParamKey};
use crate::rules::{rule_penalty, RuleError, RuleSet};

/// Triples per gradient-accumulation chunk. Fixed so the floating-point
/// summation order does not depend on the number of threads.
const CHUNK: usize = 16;

/// Rejection-sampling attempts per requested filtered negative.
const FILTER_ATTEMPTS: usize = 64;

const TRAIN_STREAM: u64 = 1;
const THETA_STREAM: u64 = 2;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("negative sampling needs at least 2 entities, have {0}")]
    TooFewEntities(usize),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("table ({found}) does not match the configuration ({expected})")]
    TableMismatch { expected: String, found: String },
    #[error("triple {triple} references ids outside the table")]
    OutOfRange { triple: Triple },
    #[error("non-finite loss or gradient at step {step}; batch starts with {}", fmt_triples(.triples))]
    NonFinite { step: usize, triples: Vec<Triple> },
}

fn fmt_triples(ts: &[Triple]) -> String {
    ts.iter()
        .take(5)
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

/// `n` entity ids drawn uniformly from `0..num_entities` without `true_id`.
pub fn sample_negatives<R: Rng + ?Sized>(
    true_id: EntityId,
    n: usize,
    num_entities: usize,
    rng: &mut R,
) -> Result<Vec<EntityId>, TrainError> {
    if num_entities < 2 {
        return Err(TrainError::TooFewEntities(num_entities));
    }
    Ok((0..n)
        .map(|_| {
            let k = rng.gen_range(0..num_entities - 1);
            if k >= true_id {
                k + 1
            } else {
                k
            }
        })
        .collect())
}

/// Like [`sample_negatives`], additionally rejecting candidates that form a
/// known true triple. Gives up after a bounded number of attempts and fills
/// the remainder with unfiltered draws.
pub fn sample_filtered_negatives<R: Rng + ?Sized>(
    triple: &Triple,
    side: Side,
    n: usize,
    num_entities: usize,
    filter: &FilterIndex,
    rng: &mut R,
) -> Result<Vec<EntityId>, TrainError> {
    let (true_id, known) = match side {
        Side::Tail => (triple.tail, filter.tails_of(triple.head, triple.relation)),
        Side::Head => (triple.head, filter.heads_of(triple.tail, triple.relation)),
    };
    let Some(known) = known else {
        return sample_negatives(true_id, n, num_entities, rng);
    };
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n && attempts < n * FILTER_ATTEMPTS {
        let k = sample_negatives(true_id, 1, num_entities, rng)?[0];
        if !known.contains(&k) {
            out.push(k);
        }
        attempts += 1;
    }
    if out.len() < n {
        log::debug!("filtered sampling exhausted for {triple} ({side:?}); padding with unfiltered draws");
        out.extend(sample_negatives(true_id, n - out.len(), num_entities, rng)?);
    }
    Ok(out)
}

/// `softmax(temperature · scores)`; uniform when the temperature is 0.
pub fn adversarial_weights(scores: &[f64], temperature: f64) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let max = scores
        .iter()
        .map(|s| temperature * s)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (temperature * s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)` without overflow for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Loss of one positive against its negatives, with derivatives with respect
/// to each distance. Weights are treated as constants.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerms {
    pub value: f64,
    pub d_positive: f64,
    pub d_negatives: Vec<f64>,
}

/// `−log σ(γ − d⁺) − Σᵢ pᵢ log σ(dᵢ − γ)` over distances `d = −f`.
pub fn negative_sampling_loss(
    positive_distance: f64,
    negative_distances: &[f64],
    weights: &[f64],
    gamma: f64,
) -> LossTerms {
    let mut value = -log_sigmoid(gamma - positive_distance);
    let mut d_negatives = Vec::with_capacity(negative_distances.len());
    for (&d, &p) in negative_distances.iter().zip(weights) {
        value -= p * log_sigmoid(d - gamma);
        d_negatives.push(-p * sigmoid(gamma - d));
    }
    LossTerms {
        value,
        d_positive: sigmoid(positive_distance - gamma),
        d_negatives,
    }
}

/// Negatives drawn for one side of one positive triple.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeBatch {
    pub side: Side,
    pub ids: Vec<EntityId>,
}

impl NegativeBatch {
    pub fn triples(&self, positive: &Triple) -> impl Iterator<Item = Triple> + '_ {
        let p = *positive;
        self.ids.iter().map(move |&e| match self.side {
            Side::Head => Triple::new(e, p.relation, p.tail),
            Side::Tail => Triple::new(p.head, p.relation, e),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Mean negative-sampling loss over the batch.
    pub loss: f64,
    /// `μ ·` soft-rule penalty added to the objective.
    pub rule_penalty: f64,
    pub touched_entities: usize,
    pub touched_relations: usize,
}

type GradMap = BTreeMap<ParamKey, Vec<f64>>;

fn accumulate(map: &mut GradMap, key: ParamKey, grad: &[f64], scale: f64) {
    let acc = map.entry(key).or_insert_with(|| vec![0.0; grad.len()]);
    for (a, g) in acc.iter_mut().zip(grad) {
        *a += scale * g;
    }
}

fn add_triple_grads(map: &mut GradMap, table: &EmbeddingTable, t: &Triple, d_loss_d_distance: f64) {
    // score = −distance, so an upstream of −∂L/∂d yields ∂L/∂θ directly
    let g = table.gradients(t, -d_loss_d_distance);
    accumulate(map, ParamKey::Entity(t.head), &g.head, 1.0);
    accumulate(map, ParamKey::Entity(t.tail), &g.tail, 1.0);
    accumulate(map, ParamKey::Relation(t.relation), &g.relation, 1.0);
}

/// Loss and gradients of one positive with both of its negative sets; the
/// two sides are averaged.
fn triple_objective(
    table: &EmbeddingTable,
    positive: &Triple,
    negatives: &[NegativeBatch; 2],
    gamma: f64,
    temperature: f64,
    scale: f64,
    grads: &mut GradMap,
) -> f64 {
    let d_pos = table.distance(positive);
    let mut loss = 0.0;
    let mut d_pos_total = 0.0;
    for neg in negatives {
        let triples: Vec<Triple> = neg.triples(positive).collect();
        let dists: Vec<f64> = triples.iter().map(|t| table.distance(t)).collect();
        let scores: Vec<f64> = dists.iter().map(|d| -d).collect();
        let weights = adversarial_weights(&scores, temperature);
        let terms = negative_sampling_loss(d_pos, &dists, &weights, gamma);
        loss += 0.5 * terms.value;
        d_pos_total += 0.5 * terms.d_positive;
        for (t, dn) in triples.iter().zip(&terms.d_negatives) {
            add_triple_grads(grads, table, t, 0.5 * dn * scale);
        }
    }
    add_triple_grads(grads, table, positive, d_pos_total * scale);
    loss * scale
}

/// Validation data used for model selection during [`fit`].
#[derive(Debug, Clone, Copy)]
pub struct Validation<'a> {
    pub store: &'a TripleStore,
    pub filter: &'a FilterIndex,
}

pub struct Trainer<'a> {
    config: TrainConfig,
    table: EmbeddingTable,
    rules: RuleSet,
    optimizer: Optimizer,
    rng: ChaCha8Rng,
    filter: Option<&'a FilterIndex>,
    step: usize,
}

impl<'a> Trainer<'a> {
    /// Prepares a table for training: validates shapes and rules, draws
    /// tying angles that are still all zero, derives tied children and puts
    /// every entity on the unit sphere.
    ///
    /// `filter` is consulted only when `filtered_negatives` is set.
    pub fn new(
        config: TrainConfig,
        mut table: EmbeddingTable,
        mut rules: RuleSet,
        filter: Option<&'a FilterIndex>,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if table.kind() != config.scorer || table.dim() != config.dim {
            return Err(TrainError::TableMismatch {
                expected: format!("{} dim {}", config.scorer, config.dim),
                found: format!("{} dim {}", table.kind(), table.dim()),
            });
        }
        if table.num_entities() < 2 {
            return Err(TrainError::TooFewEntities(table.num_entities()));
        }
        rules.validate_for(&table)?;
        table.set_squared_distance(config.squared_distance());

        let mut theta_rng = ChaCha8Rng::seed_from_u64(config.seed);
        theta_rng.set_stream(THETA_STREAM);
        if rules
            .hard()
            .iter()
            .all(|d| d.theta.iter().all(|&x| x == 0.0))
        {
            rules.randomize_thetas(&mut theta_rng);
        }
        rules.apply_all_tying(&mut table);

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(TRAIN_STREAM);
        table.project_all_entities(&mut rng);

        Ok(Trainer {
            optimizer: Optimizer::new(config.optimizer, config.learning_rate),
            config,
            table,
            rules,
            rng,
            filter,
            step: 0,
        })
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Optimizer steps taken so far.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn into_parts(self) -> (EmbeddingTable, RuleSet) {
        (self.table, self.rules)
    }

    fn draw(&mut self, t: &Triple, side: Side) -> Result<NegativeBatch, TrainError> {
        let n = self.config.num_negatives;
        let ne = self.table.num_entities();
        let ids = match self.filter.filter(|_| self.config.filtered_negatives) {
            Some(f) => sample_filtered_negatives(t, side, n, ne, f, &mut self.rng)?,
            None => {
                let true_id = match side {
                    Side::Head => t.head,
                    Side::Tail => t.tail,
                };
                sample_negatives(true_id, n, ne, &mut self.rng)?
            }
        };
        Ok(NegativeBatch { side, ids })
    }

    /// One optimizer step on `batch`.
    ///
    /// The parameters are left untouched when the loss or any gradient is
    /// not finite.
    pub fn train_step(&mut self, batch: &[Triple]) -> Result<StepReport, TrainError> {
        if batch.is_empty() {
            return Err(TrainError::EmptyTrainingSet);
        }
        let (ne, nr) = (self.table.num_entities(), self.table.num_relations());
        if let Some(&triple) = batch
            .iter()
            .find(|t| t.head >= ne || t.tail >= ne || t.relation >= nr)
        {
            return Err(TrainError::OutOfRange { triple });
        }
        let negatives = batch
            .iter()
            .map(|t| Ok([self.draw(t, Side::Head)?, self.draw(t, Side::Tail)?]))
            .collect::<Result<Vec<_>, TrainError>>()?;

        let scale = 1.0 / batch.len() as f64;
        let (gamma, temp) = (self.config.gamma, self.config.adv_temperature);
        let table = &self.table;
        let partials: Vec<(f64, GradMap)> = batch
            .par_chunks(CHUNK)
            .zip(negatives.par_chunks(CHUNK))
            .map(|(ts, negs)| {
                let mut grads = GradMap::new();
                let mut loss = 0.0;
                for (t, n) in ts.iter().zip(negs) {
                    loss += triple_objective(table, t, n, gamma, temp, scale, &mut grads);
                }
                (loss, grads)
            })
            .collect();
        let mut loss = 0.0;
        let mut grads = GradMap::new();
        for (l, g) in partials {
            loss += l;
            for (k, v) in g {
                accumulate(&mut grads, k, &v, 1.0);
            }
        }

        let mu = self.config.rule_weight;
        let mut penalty_value = 0.0;
        if mu > 0.0 && !self.rules.soft.is_empty() {
            let penalty = rule_penalty(&self.table, &self.rules.soft)?;
            penalty_value = mu * penalty.value;
            for (r, g) in penalty.gradients {
                accumulate(&mut grads, ParamKey::Relation(r), &g, mu);
            }
        }

        // tied children are functions of their parent: route their gradient
        // through the tie, deepest first
        for (idx, decl) in self.rules.hard().iter().enumerate().rev() {
            if let Some(g) = grads.remove(&ParamKey::Relation(decl.child)) {
                let (pg, tg) = decl.backprop(&self.table, &g);
                accumulate(&mut grads, ParamKey::Relation(decl.parent), &pg, 1.0);
                accumulate(&mut grads, ParamKey::Theta(idx), &tg, 1.0);
            }
        }

        let finite = loss.is_finite()
            && penalty_value.is_finite()
            && grads.values().all(|g| g.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(TrainError::NonFinite {
                step: self.step,
                triples: batch.to_vec(),
            });
        }

        let mut touched_entities = Vec::new();
        let mut touched_relations = 0;
        for (key, g) in &grads {
            match *key {
                ParamKey::Entity(e) => {
                    self.optimizer.step(*key, self.table.entity_mut(e), g);
                    touched_entities.push(e);
                }
                ParamKey::Relation(r) => {
                    self.optimizer.step(*key, self.table.relation_mut(r), g);
                    touched_relations += 1;
                }
                ParamKey::Theta(i) => {
                    self.optimizer.step(*key, &mut self.rules.hard_mut()[i].theta, g);
                }
            }
        }
        let n_touched = touched_entities.len();
        self.table.project_entities(touched_entities, &mut self.rng);
        self.rules.apply_all_tying(&mut self.table);
        self.step += 1;

        Ok(StepReport {
            loss,
            rule_penalty: penalty_value,
            touched_entities: n_touched,
            touched_relations,
        })
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    /// Mean batch loss since the previous row.
    pub loss: f64,
    pub rule_penalty: f64,
    pub valid_mrr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BestModel {
    pub table: EmbeddingTable,
    pub step: usize,
    pub valid_mrr: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub table: EmbeddingTable,
    pub rules: RuleSet,
    pub steps: usize,
    /// Highest validation MRR seen, when a validation split was given.
    pub best: Option<BestModel>,
    pub log: Vec<LogRow>,
}

/// Trains for `config.max_steps` steps over shuffled epochs of `train`.
///
/// With a validation split, filtered MRR is computed every `eval_every`
/// steps (and after the last step) and the best table is kept.
pub fn fit(
    table: EmbeddingTable,
    train: &TripleStore,
    config: &TrainConfig,
    rules: RuleSet,
    negative_filter: Option<&FilterIndex>,
    validation: Option<Validation<'_>>,
) -> Result<FitOutcome, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let mut trainer = Trainer::new(config.clone(), table, rules, negative_filter)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = Vec::new();
    let mut best: Option<BestModel> = None;
    let (mut loss_acc, mut pen_acc, mut since_log) = (0.0, 0.0, 0usize);
    let mut cursor = order.len();
    let mut batch = Vec::with_capacity(config.batch_size);

    while trainer.step() < config.max_steps {
        if cursor >= order.len() {
            order.shuffle(&mut shuffle_rng);
            cursor = 0;
        }
        let end = (cursor + config.batch_size).min(order.len());
        batch.clear();
        batch.extend(order[cursor..end].iter().map(|&i| train.triples()[i]));
        cursor = end;

        let report = trainer.train_step(&batch)?;
        loss_acc += report.loss;
        pen_acc += report.rule_penalty;
        since_log += 1;

        let step = trainer.step();
        let last = step == config.max_steps;
        let eval_now = validation.is_some()
            && (last || (config.eval_every > 0 && step % config.eval_every == 0));
        if step % config.log_every == 0 || eval_now || last {
            let valid_mrr = match validation.filter(|_| eval_now) {
                Some(v) => {
                    let report =
                        evaluate(trainer.table(), v.store, Some(v.filter), None, config.tie_policy)?;
                    Some(report.overall.both.mrr)
                }
                None => None,
            };
            if let Some(mrr) = valid_mrr {
                if best.as_ref().is_none_or(|b| mrr > b.valid_mrr) {
                    best = Some(BestModel {
                        table: trainer.table().clone(),
                        step,
                        valid_mrr: mrr,
                    });
                }
            }
            let row = LogRow {
                step,
                loss: loss_acc / since_log as f64,
                rule_penalty: pen_acc / since_log as f64,
                valid_mrr,
            };
            log::info!(
                "step {step}: loss {:.6} penalty {:.6}{}",
                row.loss,
                row.rule_penalty,
                valid_mrr.map_or(String::new(), |m| format!(" valid MRR {m:.4}"))
            );
            log.push(row);
            (loss_acc, pen_acc, since_log) = (0.0, 0.0, 0);
        }
    }

    let steps = trainer.step();
    let (table, rules) = trainer.into_parts();
    Ok(FitOutcome {
        table,
        rules,
        steps,
        best,
        log,
    })
}

pub const LOG_HEADER: &str = "step\tloss\trule_penalty\tvalid_mrr";

/// Writes the log as TSV; a missing validation MRR is written as `NaN`.
pub fn write_log_tsv(path: &Path, run_id: Option<&str>, rows: &[LogRow]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    if let Some(id) = run_id {
        writeln!(f, "# run_id={id}")?;
    }
    writeln!(f, "{LOG_HEADER}")?;
    for r in rows {
        writeln!(
            f,
            "{}\t{}\t{}\t{}",
            r.step,
            r.loss,
            r.rule_penalty,
            r.valid_mrr.unwrap_or(f64::NAN)
        )?;
    }
    f.flush()
}
