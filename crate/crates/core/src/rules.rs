//! Relation rules: hard weight tying and soft approximate-entailment
//! penalties on PairRE relation vectors.
//!
//! Rule files hold one rule per line, fields separated by tabs:
//!
//! ```text
//! subrelation  <r1>  <r2>  <lambda>    # r1 -> r2, one direction
//! equiv        <r1>  <r2>  <lambda>    # r1 -> r2 and r2 -> r1
//! inverse      <r1>  <r2>  <lambda>
//! tie          <r1>  <r2>              # r2 = cos(θ) ∘ r1 on both halves
//! ```
//!
//! Lines without a tab are split on whitespace. Blank lines and lines
//! starting with `#` are ignored.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{RelationId, Vocab};
use crate::model::{EmbeddingTable, ScorerKind};

/// Denominators below this magnitude make a ratio indeterminate.
pub const RATIO_EPSILON: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: unknown relation `{name}`")]
    UnknownRelation {
        path: PathBuf,
        line: usize,
        name: String,
    },
    #[error("rule confidence {lambda} is outside (0, 1]")]
    LambdaOutOfRange { lambda: f64 },
    #[error("inverse rule relates relation {0} to itself")]
    SelfInverse(RelationId),
    #[error("relation {0} is tied to itself")]
    SelfTie(RelationId),
    #[error("relation {child} is tied to more than one parent")]
    MultipleParents { child: RelationId },
    #[error("weight tying forms a cycle through relations {0:?}")]
    TyingCycle(Vec<RelationId>),
    #[error("rules reference relation {relation} but the table has {num_relations}")]
    RelationOutOfRange {
        relation: RelationId,
        num_relations: usize,
    },
    #[error("relation rules need paired real vectors (pairre), not {0}")]
    UnsupportedScorer(ScorerKind),
    #[error("tying parameter has {found} entries, table dimension is {expected}")]
    ThetaLength { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    Subrelation,
    Inverse,
}

/// A soft rule `r1 →λ r2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub kind: RuleKind,
    pub r1: RelationId,
    pub r2: RelationId,
    pub lambda: f64,
}

impl Rule {
    pub fn validate(&self) -> Result<(), RuleError> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(RuleError::LambdaOutOfRange {
                lambda: self.lambda,
            });
        }
        if self.kind == RuleKind::Inverse && self.r1 == self.r2 {
            return Err(RuleError::SelfInverse(self.r1));
        }
        Ok(())
    }
}

/// Hard tying: the child relation is `cos(θ) ∘ parent` on both halves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TyingDecl {
    pub parent: RelationId,
    pub child: RelationId,
    pub theta: Vec<f64>,
}

impl TyingDecl {
    pub fn new(parent: RelationId, child: RelationId, dim: usize) -> Self {
        TyingDecl {
            parent,
            child,
            theta: vec![0.0; dim],
        }
    }

    /// Chain rule through the tie: maps a gradient on the child row to
    /// gradients on the parent row and on θ.
    pub fn backprop(&self, table: &EmbeddingTable, child_grad: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.theta.len();
        let parent = table.relation(self.parent);
        let mut parent_grad = vec![0.0; 2 * d];
        let mut theta_grad = vec![0.0; d];
        for i in 0..d {
            let (s, c) = self.theta[i].sin_cos();
            parent_grad[i] = c * child_grad[i];
            parent_grad[d + i] = c * child_grad[d + i];
            theta_grad[i] = -s * (parent[i] * child_grad[i] + parent[d + i] * child_grad[d + i]);
        }
        (parent_grad, theta_grad)
    }
}

/// Overwrites the child relation with `cos(θ) ∘ parent` on both halves.
pub fn apply_tying(table: &mut EmbeddingTable, decl: &TyingDecl) {
    let d = decl.theta.len();
    let parent = table.relation(decl.parent).to_vec();
    let child = table.relation_mut(decl.child);
    for i in 0..d {
        let c = decl.theta[i].cos();
        child[i] = parent[i] * c;
        child[d + i] = parent[d + i] * c;
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleSet {
    pub soft: Vec<Rule>,
    /// Tying declarations, parents before children.
    hard: Vec<TyingDecl>,
}

impl RuleSet {
    pub fn new(soft: Vec<Rule>, hard: Vec<TyingDecl>) -> Result<Self, RuleError> {
        for rule in &soft {
            rule.validate()?;
        }
        let hard = order_ties(hard)?;
        Ok(RuleSet { soft, hard })
    }

    pub fn is_empty(&self) -> bool {
        self.soft.is_empty() && self.hard.is_empty()
    }

    pub fn hard(&self) -> &[TyingDecl] {
        &self.hard
    }

    pub fn hard_mut(&mut self) -> &mut [TyingDecl] {
        &mut self.hard
    }

    /// Relations derived from a parent rather than trained directly.
    pub fn tied_children(&self) -> HashSet<RelationId> {
        self.hard.iter().map(|d| d.child).collect()
    }

    /// Checks ids, θ lengths and scorer compatibility against a table.
    pub fn validate_for(&self, table: &EmbeddingTable) -> Result<(), RuleError> {
        if self.is_empty() {
            return Ok(());
        }
        if table.kind() != ScorerKind::PairRE {
            return Err(RuleError::UnsupportedScorer(table.kind()));
        }
        let n = table.num_relations();
        let ids = self
            .soft
            .iter()
            .flat_map(|r| [r.r1, r.r2])
            .chain(self.hard.iter().flat_map(|d| [d.parent, d.child]));
        for relation in ids {
            if relation >= n {
                return Err(RuleError::RelationOutOfRange {
                    relation,
                    num_relations: n,
                });
            }
        }
        for decl in &self.hard {
            if decl.theta.len() != table.dim() {
                return Err(RuleError::ThetaLength {
                    expected: table.dim(),
                    found: decl.theta.len(),
                });
            }
        }
        Ok(())
    }

    /// Draws every θ uniformly from `[-π, π]`. θ = 0 is a stationary point
    /// of the tie (its gradient carries a `sin θ` factor).
    pub fn randomize_thetas<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let dist = Uniform::new_inclusive(-std::f64::consts::PI, std::f64::consts::PI);
        for decl in &mut self.hard {
            for x in decl.theta.iter_mut() {
                *x = dist.sample(rng);
            }
        }
    }

    /// Re-derives every tied child, parents first.
    pub fn apply_all_tying(&self, table: &mut EmbeddingTable) {
        for decl in &self.hard {
            apply_tying(table, decl);
        }
    }
}

fn order_ties(hard: Vec<TyingDecl>) -> Result<Vec<TyingDecl>, RuleError> {
    let mut parent_of: HashMap<RelationId, RelationId> = HashMap::new();
    for decl in &hard {
        if decl.parent == decl.child {
            return Err(RuleError::SelfTie(decl.child));
        }
        if parent_of.insert(decl.child, decl.parent).is_some() {
            return Err(RuleError::MultipleParents { child: decl.child });
        }
    }
    // depth = number of tied ancestors; a walk longer than the map is a cycle
    let mut depth = HashMap::new();
    for decl in &hard {
        let mut path = vec![decl.child];
        let mut cur = decl.child;
        while let Some(&p) = parent_of.get(&cur) {
            if path.contains(&p) {
                path.push(p);
                return Err(RuleError::TyingCycle(path));
            }
            path.push(p);
            cur = p;
        }
        depth.insert(decl.child, path.len() - 1);
    }
    let mut hard = hard;
    hard.sort_by_key(|d| depth[&d.child]);
    Ok(hard)
}

/// Parses a rule file, resolving relation names through `vocab`. Tying
/// parameters start at zero; see [`RuleSet::randomize_thetas`].
pub fn parse_rules(path: &Path, vocab: &Vocab, dim: usize) -> Result<RuleSet, RuleError> {
    let text = fs::read_to_string(path).map_err(|e| RuleError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let parse_err = |line: usize, message: String| RuleError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut soft = Vec::new();
    let mut hard = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').map(str::trim).collect()
        } else {
            line.split_whitespace().collect()
        };
        let relation = |name: &str| {
            vocab
                .relation_id(name)
                .ok_or_else(|| RuleError::UnknownRelation {
                    path: path.to_path_buf(),
                    line: line_no,
                    name: name.to_owned(),
                })
        };
        let kind = fields[0].to_ascii_lowercase();
        match kind.as_str() {
            "tie" => {
                if fields.len() != 3 {
                    return Err(parse_err(
                        line_no,
                        format!("`tie` takes 2 relations, found {} fields", fields.len()),
                    ));
                }
                hard.push(TyingDecl::new(relation(fields[1])?, relation(fields[2])?, dim));
            }
            "subrelation" | "equiv" | "inverse" => {
                if fields.len() != 4 {
                    return Err(parse_err(
                        line_no,
                        format!(
                            "`{kind}` takes 2 relations and a confidence, found {} fields",
                            fields.len()
                        ),
                    ));
                }
                let r1 = relation(fields[1])?;
                let r2 = relation(fields[2])?;
                let lambda: f64 = fields[3].parse().map_err(|_| {
                    parse_err(line_no, format!("invalid confidence `{}`", fields[3]))
                })?;
                let rule_kind = if kind == "inverse" {
                    RuleKind::Inverse
                } else {
                    RuleKind::Subrelation
                };
                let rule = Rule {
                    kind: rule_kind,
                    r1,
                    r2,
                    lambda,
                };
                rule.validate().map_err(|e| parse_err(line_no, e.to_string()))?;
                soft.push(rule);
                if kind == "equiv" {
                    soft.push(Rule { r1: r2, r2: r1, ..rule });
                }
            }
            other => {
                return Err(parse_err(line_no, format!("unknown rule kind `{other}`")));
            }
        }
    }
    RuleSet::new(soft, hard)
}

/// Penalty value (without the global weight μ) and per-relation gradients.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RulePenalty {
    pub value: f64,
    pub gradients: BTreeMap<RelationId, Vec<f64>>,
}

/// Residual of one soft rule: `r1_h∘r2_t − r1_t∘r2_h` for subrelation,
/// `r1_h∘r2_h − r1_t∘r2_t` for inverse.
pub fn rule_residual(table: &EmbeddingTable, rule: &Rule) -> Vec<f64> {
    let d = table.dim();
    let (a, b) = (table.relation(rule.r1), table.relation(rule.r2));
    (0..d)
        .map(|i| match rule.kind {
            RuleKind::Subrelation => a[i] * b[d + i] - a[d + i] * b[i],
            RuleKind::Inverse => a[i] * b[i] - a[d + i] * b[d + i],
        })
        .collect()
}

/// `Σ λ · 1ᵀ(residual)²` over the rules, with analytic gradients.
pub fn rule_penalty(table: &EmbeddingTable, rules: &[Rule]) -> Result<RulePenalty, RuleError> {
    if rules.is_empty() {
        return Ok(RulePenalty::default());
    }
    if table.kind() != ScorerKind::PairRE {
        return Err(RuleError::UnsupportedScorer(table.kind()));
    }
    let d = table.dim();
    let mut out = RulePenalty::default();
    for rule in rules {
        let s = rule_residual(table, rule);
        out.value += rule.lambda * s.iter().map(|x| x * x).sum::<f64>();
        let a = table.relation(rule.r1).to_vec();
        let b = table.relation(rule.r2).to_vec();
        let mut ga = vec![0.0; 2 * d];
        let mut gb = vec![0.0; 2 * d];
        for i in 0..d {
            let k = 2.0 * rule.lambda * s[i];
            match rule.kind {
                RuleKind::Subrelation => {
                    ga[i] = k * b[d + i];
                    ga[d + i] = -k * b[i];
                    gb[d + i] = k * a[i];
                    gb[i] = -k * a[d + i];
                }
                RuleKind::Inverse => {
                    ga[i] = k * b[i];
                    ga[d + i] = -k * b[d + i];
                    gb[i] = k * a[i];
                    gb[d + i] = -k * a[d + i];
                }
            }
        }
        for (r, g) in [(rule.r1, ga), (rule.r2, gb)] {
            let acc = out.gradients.entry(r).or_insert_with(|| vec![0.0; 2 * d]);
            acc.iter_mut().zip(g).for_each(|(x, y)| *x += y);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubrelationCheck {
    /// `r2_h / r1_h` per dimension, `None` where indeterminate.
    pub alpha: Vec<Option<f64>>,
    /// `r2_t / r1_t` per dimension, `None` where indeterminate.
    pub alpha_tail: Vec<Option<f64>>,
    /// Dimensions where either `r1` entry is below [`RATIO_EPSILON`].
    pub indeterminate: Vec<usize>,
    /// Largest `|α_h − α_t|` over determinate dimensions.
    pub max_ratio_gap: f64,
    /// Largest `|α|` over determinate dimensions.
    pub max_abs_alpha: f64,
    pub satisfied: bool,
}

/// Tests whether `r2` is an elementwise contraction of `r1` with one shared
/// ratio per dimension on both halves and `|α| ≤ 1`.
pub fn check_subrelation_constraint(
    table: &EmbeddingTable,
    r1: RelationId,
    r2: RelationId,
    tolerance: f64,
) -> SubrelationCheck {
    let d = table.dim();
    let (a, b) = (table.relation(r1), table.relation(r2));
    let mut check = SubrelationCheck {
        alpha: Vec::with_capacity(d),
        alpha_tail: Vec::with_capacity(d),
        indeterminate: Vec::new(),
        max_ratio_gap: 0.0,
        max_abs_alpha: 0.0,
        satisfied: true,
    };
    for i in 0..d {
        if a[i].abs() < RATIO_EPSILON || a[d + i].abs() < RATIO_EPSILON {
            check.alpha.push(None);
            check.alpha_tail.push(None);
            check.indeterminate.push(i);
            continue;
        }
        let ah = b[i] / a[i];
        let at = b[d + i] / a[d + i];
        check.alpha.push(Some(ah));
        check.alpha_tail.push(Some(at));
        check.max_ratio_gap = check.max_ratio_gap.max((ah - at).abs());
        check.max_abs_alpha = check.max_abs_alpha.max(ah.abs()).max(at.abs());
    }
    check.satisfied = check.max_ratio_gap <= tolerance && check.max_abs_alpha <= 1.0 + tolerance;
    check
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn table(nr: usize, d: usize, seed: u64) -> EmbeddingTable {
        EmbeddingTable::init(ScorerKind::PairRE, 4, nr, d, 6.0, seed).unwrap()
    }

    fn vocab(names: &[&str]) -> Vocab {
        let mut v = Vocab::new();
        for n in names {
            v.intern_relation(n);
        }
        v
    }

    #[test]
    fn parses_sports_style_rule() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rules.txt");
        fs::write(&p, "subrelation CoachesTeam PersonBelongsToOrganization 1.0\n").unwrap();
        let v = vocab(&["CoachesTeam", "PersonBelongsToOrganization"]);
        let rs = parse_rules(&p, &v, 4).unwrap();
        assert_eq!(
            rs.soft,
            vec![Rule {
                kind: RuleKind::Subrelation,
                r1: 0,
                r2: 1,
                lambda: 1.0
            }]
        );
        assert!(rs.hard().is_empty());
    }

    #[test]
    fn equiv_expands_both_directions() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rules.tsv");
        fs::write(&p, "equiv\ta\tb\t0.8\ninverse\ta\tc\t0.5\ntie\ta\tc\n").unwrap();
        let rs = parse_rules(&p, &vocab(&["a", "b", "c"]), 3).unwrap();
        assert_eq!(rs.soft.len(), 3);
        assert_eq!((rs.soft[1].r1, rs.soft[1].r2), (1, 0));
        assert_eq!(rs.soft[2].kind, RuleKind::Inverse);
        assert_eq!(rs.hard()[0].theta.len(), 3);
    }

    #[test]
    fn parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let v = vocab(&["r1", "r2", "r3"]);
        let p = dir.path().join("r.txt");

        fs::write(&p, "tie r1 r2\ntie r2 r1\n").unwrap();
        assert!(matches!(parse_rules(&p, &v, 2), Err(RuleError::TyingCycle(_))));

        fs::write(&p, "subrelation r1 nope 1.0\n").unwrap();
        assert!(matches!(
            parse_rules(&p, &v, 2),
            Err(RuleError::UnknownRelation { ref name, .. }) if name == "nope"
        ));

        fs::write(&p, "subrelation r1 r2 1.5\n").unwrap();
        let err = parse_rules(&p, &v, 2).unwrap_err();
        assert!(err.to_string().contains("outside (0, 1]"), "{err}");

        fs::write(&p, "tie r1 r3\ntie r2 r3\n").unwrap();
        assert!(matches!(
            parse_rules(&p, &v, 2),
            Err(RuleError::MultipleParents { child: 2 })
        ));

        fs::write(&p, "inverse r1 r1 0.5\n").unwrap();
        assert!(parse_rules(&p, &v, 2).is_err());

        fs::write(&p, "").unwrap();
        assert!(parse_rules(&p, &v, 2).unwrap().is_empty());
    }

    #[test]
    fn ties_are_ordered_parents_first() {
        let rs = RuleSet::new(
            vec![],
            vec![TyingDecl::new(1, 2, 2), TyingDecl::new(0, 1, 2)],
        )
        .unwrap();
        assert_eq!(rs.hard()[0].child, 1);
        assert_eq!(rs.hard()[1].child, 2);
        assert!(RuleSet::new(vec![], vec![TyingDecl::new(0, 1, 2), TyingDecl::new(1, 2, 2), TyingDecl::new(2, 0, 2)]).is_err());
    }

    #[test]
    fn tying_examples() {
        let mut t = table(2, 5, 3);
        let mut decl = TyingDecl::new(0, 1, 5);
        apply_tying(&mut t, &decl);
        assert_eq!(t.relation(1), t.relation(0));

        decl.theta = vec![PI; 5];
        apply_tying(&mut t, &decl);
        for (c, p) in t.relation(1).iter().zip(t.relation(0)) {
            assert_eq!(*c, -p);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        decl.theta = (0..5).map(|_| rng.gen_range(-PI..PI)).collect();
        apply_tying(&mut t, &decl);
        let once = t.relation(1).to_vec();
        for i in 0..5 {
            let c = decl.theta[i].cos();
            assert!((t.relation(1)[i] / t.relation(0)[i] - c).abs() <= 1e-12);
            assert!((t.relation(1)[5 + i] / t.relation(0)[5 + i] - c).abs() <= 1e-12);
        }
        apply_tying(&mut t, &decl);
        assert_eq!(t.relation(1), &once[..]);

        let check = check_subrelation_constraint(&t, 0, 1, 1e-9);
        assert!(check.satisfied);
    }

    #[test]
    fn penalty_zero_cases() {
        let mut t = table(3, 6, 8);
        let same = Rule {
            kind: RuleKind::Subrelation,
            r1: 0,
            r2: 0,
            lambda: 1.0,
        };
        assert_eq!(rule_penalty(&t, &[same]).unwrap().value, 0.0);

        let r0 = t.relation(0).to_vec();
        let swapped: Vec<f64> = r0[6..].iter().chain(&r0[..6]).copied().collect();
        t.relation_mut(1).copy_from_slice(&swapped);
        let inv = Rule {
            kind: RuleKind::Inverse,
            r1: 0,
            r2: 1,
            lambda: 0.4,
        };
        assert_eq!(rule_penalty(&t, &[inv]).unwrap().value, 0.0);

        let r2 = Rule { r2: 2, ..inv };
        assert!(rule_penalty(&t, &[r2]).unwrap().value > 0.0);
    }

    #[test]
    fn penalty_matches_direct_formula() {
        let t = table(2, 7, 21);
        let (a, b) = (t.relation(0), t.relation(1));
        let sub = Rule {
            kind: RuleKind::Subrelation,
            r1: 0,
            r2: 1,
            lambda: 0.7,
        };
        let inv = Rule {
            kind: RuleKind::Inverse,
            ..sub
        };
        let mut direct = 0.0;
        for i in 0..7 {
            let s = a[i] * b[7 + i] - a[7 + i] * b[i];
            let v = a[i] * b[i] - a[7 + i] * b[7 + i];
            direct += 0.7 * s * s + 0.7 * v * v;
        }
        let got = rule_penalty(&t, &[sub, inv]).unwrap().value;
        assert!((got - direct).abs() <= 1e-12);
    }

    #[test]
    fn penalty_requires_pairre() {
        let t = EmbeddingTable::init(ScorerKind::TransE, 2, 2, 4, 6.0, 0).unwrap();
        let r = Rule {
            kind: RuleKind::Subrelation,
            r1: 0,
            r2: 1,
            lambda: 1.0,
        };
        assert!(matches!(
            rule_penalty(&t, &[r]),
            Err(RuleError::UnsupportedScorer(ScorerKind::TransE))
        ));
    }

    #[test]
    fn subrelation_check_examples() {
        let mut t = table(2, 4, 5);
        let r0 = t.relation(0).to_vec();
        let half: Vec<f64> = r0.iter().map(|x| 0.5 * x).collect();
        t.relation_mut(1).copy_from_slice(&half);
        let c = check_subrelation_constraint(&t, 0, 1, 1e-9);
        assert!(c.satisfied);
        assert!(c.alpha.iter().all(|a| (a.unwrap() - 0.5).abs() < 1e-12));

        let double: Vec<f64> = r0.iter().map(|x| 2.0 * x).collect();
        t.relation_mut(1).copy_from_slice(&double);
        assert!(!check_subrelation_constraint(&t, 0, 1, 1e-9).satisfied);

        let mixed: Vec<f64> = r0
            .iter()
            .enumerate()
            .map(|(i, x)| if i < 4 { 0.5 * x } else { 0.25 * x })
            .collect();
        t.relation_mut(1).copy_from_slice(&mixed);
        let c = check_subrelation_constraint(&t, 0, 1, 1e-9);
        assert!(!c.satisfied);
        assert!((c.max_ratio_gap - 0.25).abs() < 1e-12);

        t.relation_mut(0)[2] = 0.0;
        t.relation_mut(1).copy_from_slice(&half);
        let c = check_subrelation_constraint(&t, 0, 1, 1e-9);
        assert_eq!(c.indeterminate, vec![2]);
        assert!(c.alpha[2].is_none());
    }
}
