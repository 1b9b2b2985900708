//! Embedding tables and distance-based scorers.
//!
//! Every scorer is written as `δ = P_head(h) − P_tail(t)` with a
//! relation-specific projection on each side, and the score is `−‖δ‖²`
//! (squared) or `−‖δ‖` (plain):
//!
//! | kind           | relation row                 | P_head(h)     | P_tail(t)     |
//! |----------------|------------------------------|---------------|---------------|
//! | PairRE         | `[r_h ‖ r_t]`, 2d reals      | `h ∘ r_h`     | `t ∘ r_t`     |
//! | TransE         | `r`, d reals                 | `h + r`       | `t`           |
//! | RotatE         | d/2 phase angles             | `h ∘ e^{iφ}`  | `t`           |
//! | RotatePaired   | `[φ_h ‖ φ_t]`, d phase angles | `h ∘ e^{iφ_h}` | `t ∘ e^{iφ_t}` |
//!
//! Complex-valued entity rows store the real parts in the first half and
//! the imaginary parts in the second half.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{EntityId, RelationId, Triple};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("embedding dimension must be at least 1")]
    ZeroDimension,
    #[error("{kind} needs an even embedding dimension, got {dim}")]
    OddDimension { kind: ScorerKind, dim: usize },
    #[error("{what}: expected {expected} values, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("candidate lists have different lengths ({heads} heads, {tails} tails)")]
    CandidateLengthMismatch { heads: usize, tails: usize },
    #[error("at most one side of a batch may sweep all entities")]
    DoubleSweep,
    #[error("unknown scorer `{0}` (expected pairre, transe, rotate or rotate-paired)")]
    UnknownScorer(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScorerKind {
    #[serde(rename = "pairre")]
    PairRE,
    #[serde(rename = "transe")]
    TransE,
    #[serde(rename = "rotate")]
    RotatE,
    #[serde(rename = "rotate-paired")]
    RotatePaired,
}

impl ScorerKind {
    pub const ALL: [ScorerKind; 4] = [
        ScorerKind::PairRE,
        ScorerKind::TransE,
        ScorerKind::RotatE,
        ScorerKind::RotatePaired,
    ];

    /// Number of stored values per relation row for entity dimension `dim`.
    pub fn relation_width(self, dim: usize) -> usize {
        match self {
            ScorerKind::PairRE => 2 * dim,
            ScorerKind::TransE => dim,
            ScorerKind::RotatE => dim / 2,
            ScorerKind::RotatePaired => dim,
        }
    }

    pub fn is_rotation(self) -> bool {
        matches!(self, ScorerKind::RotatE | ScorerKind::RotatePaired)
    }

    /// PairRE scores with the squared norm; the baselines use the plain norm.
    pub fn default_squared_distance(self) -> bool {
        matches!(self, ScorerKind::PairRE)
    }

    pub fn name(self) -> &'static str {
        match self {
            ScorerKind::PairRE => "pairre",
            ScorerKind::TransE => "transe",
            ScorerKind::RotatE => "rotate",
            ScorerKind::RotatePaired => "rotate-paired",
        }
    }

    pub fn validate_dim(self, dim: usize) -> Result<(), ModelError> {
        if dim == 0 {
            return Err(ModelError::ZeroDimension);
        }
        if self.is_rotation() && !dim.is_multiple_of(2) {
            return Err(ModelError::OddDimension { kind: self, dim });
        }
        Ok(())
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScorerKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pairre" => Ok(ScorerKind::PairRE),
            "transe" => Ok(ScorerKind::TransE),
            "rotate" => Ok(ScorerKind::RotatE),
            "rotate-paired" | "rotatepaired" | "rotate+pairrelation" => {
                Ok(ScorerKind::RotatePaired)
            }
            _ => Err(ModelError::UnknownScorer(s.to_owned())),
        }
    }
}

/// One side of a batched scoring request.
#[derive(Debug, Clone, Copy)]
pub enum Candidates<'a> {
    One(EntityId),
    Many(&'a [EntityId]),
    All,
}

/// Gradient of `upstream · f(h, r, t)` restricted to the rows a triple touches.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub head: Vec<f64>,
    pub tail: Vec<f64>,
    /// Full relation row; for PairRE the first half is `∂/∂r_h`, the second `∂/∂r_t`.
    pub relation: Vec<f64>,
}

/// Entity matrix (unit-norm rows) and relation matrix for one scorer kind.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    kind: ScorerKind,
    dim: usize,
    num_entities: usize,
    num_relations: usize,
    squared_distance: bool,
    entities: Vec<f64>,
    relations: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(
        kind: ScorerKind,
        num_entities: usize,
        num_relations: usize,
        dim: usize,
    ) -> Result<Self, ModelError> {
        kind.validate_dim(dim)?;
        Ok(EmbeddingTable {
            kind,
            dim,
            num_entities,
            num_relations,
            squared_distance: kind.default_squared_distance(),
            entities: vec![0.0; num_entities * dim],
            relations: vec![0.0; num_relations * kind.relation_width(dim)],
        })
    }

    /// Entity rows uniform on the unit sphere. Real-valued relation entries
    /// uniform in `[-γ/d, γ/d]`; rotation phases uniform in `[-π, π]`.
    pub fn init(
        kind: ScorerKind,
        num_entities: usize,
        num_relations: usize,
        dim: usize,
        gamma: f64,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let mut table = Self::zeros(kind, num_entities, num_relations, dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for row in table.entities.chunks_exact_mut(dim) {
            random_unit(row, &mut rng);
        }
        let bound = if kind.is_rotation() {
            std::f64::consts::PI
        } else {
            gamma.abs() / dim as f64
        };
        if bound > 0.0 {
            let dist = Uniform::new_inclusive(-bound, bound);
            for x in table.relations.iter_mut() {
                *x = dist.sample(&mut rng);
            }
        }
        Ok(table)
    }

    pub fn from_parts(
        kind: ScorerKind,
        dim: usize,
        squared_distance: bool,
        entities: Vec<f64>,
        relations: Vec<f64>,
    ) -> Result<Self, ModelError> {
        kind.validate_dim(dim)?;
        if !entities.len().is_multiple_of(dim) {
            return Err(ModelError::ShapeMismatch {
                what: "entity matrix",
                expected: (entities.len() / dim + 1) * dim,
                found: entities.len(),
            });
        }
        let width = kind.relation_width(dim);
        if !relations.len().is_multiple_of(width) {
            return Err(ModelError::ShapeMismatch {
                what: "relation matrix",
                expected: (relations.len() / width + 1) * width,
                found: relations.len(),
            });
        }
        Ok(EmbeddingTable {
            kind,
            dim,
            num_entities: entities.len() / dim,
            num_relations: relations.len() / width,
            squared_distance,
            entities,
            relations,
        })
    }

    pub fn kind(&self) -> ScorerKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn relation_width(&self) -> usize {
        self.kind.relation_width(self.dim)
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn squared_distance(&self) -> bool {
        self.squared_distance
    }

    pub fn set_squared_distance(&mut self, squared: bool) {
        self.squared_distance = squared;
    }

    pub fn entity(&self, id: EntityId) -> &[f64] {
        &self.entities[id * self.dim..(id + 1) * self.dim]
    }

    pub fn entity_mut(&mut self, id: EntityId) -> &mut [f64] {
        &mut self.entities[id * self.dim..(id + 1) * self.dim]
    }

    pub fn relation(&self, id: RelationId) -> &[f64] {
        let w = self.relation_width();
        &self.relations[id * w..(id + 1) * w]
    }

    pub fn relation_mut(&mut self, id: RelationId) -> &mut [f64] {
        let w = self.relation_width();
        &mut self.relations[id * w..(id + 1) * w]
    }

    /// `(r_h, r_t)` for paired kinds; `None` for TransE and RotatE.
    pub fn relation_halves(&self, id: RelationId) -> Option<(&[f64], &[f64])> {
        match self.kind {
            ScorerKind::PairRE | ScorerKind::RotatePaired => {
                Some(self.relation(id).split_at(self.relation_width() / 2))
            }
            _ => None,
        }
    }

    pub fn entity_matrix(&self) -> &[f64] {
        &self.entities
    }

    pub fn relation_matrix(&self) -> &[f64] {
        &self.relations
    }

    pub fn entity_norm(&self, id: EntityId) -> f64 {
        norm(self.entity(id))
    }

    /// `‖δ‖²` or `‖δ‖` depending on the distance mode.
    pub fn distance(&self, t: &Triple) -> f64 {
        let rel = self.relation(t.relation);
        let hp = self.project_head(self.entity(t.head), rel);
        let tp = self.project_tail(self.entity(t.tail), rel);
        self.finish(sq_dist(&hp, &tp))
    }

    /// Plausibility score, `−distance`. Higher is more plausible.
    pub fn score(&self, t: &Triple) -> f64 {
        -self.distance(t)
    }

    /// Scores `(head, relation, tail)` pairs. A `One` side is broadcast; two
    /// `Many` sides are zipped and must be the same length.
    pub fn score_batch(
        &self,
        heads: Candidates<'_>,
        relation: RelationId,
        tails: Candidates<'_>,
    ) -> Result<Vec<f64>, ModelError> {
        let rel = self.relation(relation);
        let all: Vec<EntityId>;
        let (heads, tails) = match (heads, tails) {
            (Candidates::All, Candidates::All) => return Err(ModelError::DoubleSweep),
            (Candidates::All, other) => {
                all = (0..self.num_entities).collect();
                (Candidates::Many(&all), other)
            }
            (other, Candidates::All) => {
                all = (0..self.num_entities).collect();
                (other, Candidates::Many(&all))
            }
            pair => pair,
        };
        let out = match (heads, tails) {
            (Candidates::One(h), Candidates::One(t)) => {
                vec![self.score(&Triple::new(h, relation, t))]
            }
            (Candidates::One(h), Candidates::Many(ts)) => {
                let hp = self.project_head(self.entity(h), rel);
                ts.iter()
                    .map(|&t| {
                        -self.finish(sq_dist(&hp, &self.project_tail(self.entity(t), rel)))
                    })
                    .collect()
            }
            (Candidates::Many(hs), Candidates::One(t)) => {
                let tp = self.project_tail(self.entity(t), rel);
                hs.iter()
                    .map(|&h| {
                        -self.finish(sq_dist(&self.project_head(self.entity(h), rel), &tp))
                    })
                    .collect()
            }
            (Candidates::Many(hs), Candidates::Many(ts)) => {
                if hs.len() != ts.len() {
                    return Err(ModelError::CandidateLengthMismatch {
                        heads: hs.len(),
                        tails: ts.len(),
                    });
                }
                hs.iter()
                    .zip(ts)
                    .map(|(&h, &t)| self.score(&Triple::new(h, relation, t)))
                    .collect()
            }
            _ => unreachable!("`All` sides were expanded above"),
        };
        Ok(out)
    }

    /// Scores of `(h, r, e)` for every entity `e`.
    pub fn score_all_tails(&self, head: EntityId, relation: RelationId) -> Vec<f64> {
        self.score_batch(Candidates::One(head), relation, Candidates::All)
            .expect("single head against all tails is always valid")
    }

    /// Scores of `(e, r, t)` for every entity `e`.
    pub fn score_all_heads(&self, tail: EntityId, relation: RelationId) -> Vec<f64> {
        self.score_batch(Candidates::All, relation, Candidates::One(tail))
            .expect("all heads against a single tail is always valid")
    }

    /// Analytic gradient of `upstream · score(t)` w.r.t. the head row, the
    /// tail row and the relation row.
    ///
    /// The plain norm is not differentiable at `δ = 0`; the zero subgradient
    /// is returned there.
    pub fn gradients(&self, t: &Triple, upstream: f64) -> Gradients {
        let d = self.dim;
        let h = self.entity(t.head);
        let tl = self.entity(t.tail);
        let rel = self.relation(t.relation);
        let hp = self.project_head(h, rel);
        let tp = self.project_tail(tl, rel);
        let delta: Vec<f64> = hp.iter().zip(&tp).map(|(a, b)| a - b).collect();

        // g = upstream · ∂score/∂δ
        let scale = if self.squared_distance {
            -2.0 * upstream
        } else {
            let n = norm(&delta);
            if n == 0.0 {
                0.0
            } else {
                -upstream / n
            }
        };
        let g: Vec<f64> = delta.iter().map(|x| x * scale).collect();

        let mut head = vec![0.0; d];
        let mut tail = vec![0.0; d];
        let mut relation = vec![0.0; rel.len()];
        match self.kind {
            ScorerKind::PairRE => {
                let (rh, rt) = rel.split_at(d);
                let (grh, grt) = relation.split_at_mut(d);
                for i in 0..d {
                    head[i] = g[i] * rh[i];
                    tail[i] = -g[i] * rt[i];
                    grh[i] = g[i] * h[i];
                    grt[i] = -g[i] * tl[i];
                }
            }
            ScorerKind::TransE => {
                for i in 0..d {
                    head[i] = g[i];
                    relation[i] = g[i];
                    tail[i] = -g[i];
                }
            }
            ScorerKind::RotatE => {
                rotation_vjp(h, rel, &g, &mut head, &mut relation, 1.0);
                for i in 0..d {
                    tail[i] = -g[i];
                }
            }
            ScorerKind::RotatePaired => {
                let m = d / 2;
                let (ph, pt) = rel.split_at(m);
                let (gph, gpt) = relation.split_at_mut(m);
                rotation_vjp(h, ph, &g, &mut head, gph, 1.0);
                rotation_vjp(tl, pt, &g, &mut tail, gpt, -1.0);
            }
        }
        Gradients {
            head,
            tail,
            relation,
        }
    }

    /// Rescales each listed entity row to unit L2 norm. Zero or non-finite
    /// rows are redrawn uniformly on the unit sphere. Rows already within
    /// rounding of unit norm are left bit-for-bit untouched.
    pub fn project_entities<R: Rng + ?Sized>(
        &mut self,
        ids: impl IntoIterator<Item = EntityId>,
        rng: &mut R,
    ) {
        for id in ids {
            let row = self.entity_mut(id);
            let n = norm(row);
            if n == 0.0 || !n.is_finite() {
                log::warn!("entity {id} has a degenerate norm ({n}); re-initializing");
                random_unit(row, rng);
            } else if (n - 1.0).abs() > UNIT_TOLERANCE {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
    }

    pub fn project_all_entities<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.project_entities(0..self.num_entities, rng);
    }

    fn finish(&self, squared: f64) -> f64 {
        if self.squared_distance {
            squared
        } else {
            squared.sqrt()
        }
    }

    fn project_head(&self, h: &[f64], rel: &[f64]) -> Vec<f64> {
        let d = self.dim;
        match self.kind {
            ScorerKind::PairRE => h.iter().zip(&rel[..d]).map(|(a, b)| a * b).collect(),
            ScorerKind::TransE => h.iter().zip(rel).map(|(a, b)| a + b).collect(),
            ScorerKind::RotatE => rotate(h, rel),
            ScorerKind::RotatePaired => rotate(h, &rel[..d / 2]),
        }
    }

    fn project_tail(&self, t: &[f64], rel: &[f64]) -> Vec<f64> {
        let d = self.dim;
        match self.kind {
            ScorerKind::PairRE => t.iter().zip(&rel[d..]).map(|(a, b)| a * b).collect(),
            ScorerKind::TransE | ScorerKind::RotatE => t.to_vec(),
            ScorerKind::RotatePaired => rotate(t, &rel[d / 2..]),
        }
    }
}

/// Complex Hadamard product of `x` (re ‖ im halves) with unit phasors `e^{iφ}`.
fn rotate(x: &[f64], phases: &[f64]) -> Vec<f64> {
    let m = phases.len();
    let mut out = vec![0.0; 2 * m];
    for k in 0..m {
        let (s, c) = phases[k].sin_cos();
        let (a, b) = (x[k], x[m + k]);
        out[k] = a * c - b * s;
        out[m + k] = a * s + b * c;
    }
    out
}

/// Accumulates `sign · J^T g` of [`rotate`] into the entity and phase gradients.
fn rotation_vjp(
    x: &[f64],
    phases: &[f64],
    g: &[f64],
    grad_x: &mut [f64],
    grad_phase: &mut [f64],
    sign: f64,
) {
    let m = phases.len();
    for k in 0..m {
        let (s, c) = phases[k].sin_cos();
        let (a, b) = (x[k], x[m + k]);
        let (gr, gi) = (sign * g[k], sign * g[m + k]);
        grad_x[k] += gr * c + gi * s;
        grad_x[m + k] += -gr * s + gi * c;
        grad_phase[k] += gr * (-a * s - b * c) + gi * (a * c - b * s);
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

const UNIT_TOLERANCE: f64 = 4.0 * f64::EPSILON;

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Fills `row` with a direction drawn uniformly from the unit sphere.
pub fn random_unit<R: Rng + ?Sized>(row: &mut [f64], rng: &mut R) {
    loop {
        for x in row.iter_mut() {
            *x = StandardNormal.sample(rng);
        }
        let n = norm(row);
        if n > 1e-300 {
            row.iter_mut().for_each(|x| *x /= n);
            return;
        }
    }
}
