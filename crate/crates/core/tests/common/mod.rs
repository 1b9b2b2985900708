//! Shared generators, independent oracles and the criterion checks reused by
//! the acceptance runner.
#![allow(dead_code)]

use std::time::Instant;

use pairre::data::{classify_relations, FilterIndex, RelationCategory, Split, Triple, TripleStore};
use pairre::eval::{evaluate, rank_triple, Side, TiePolicy};
use pairre::model::{EmbeddingTable, ScorerKind};
use pairre::patterns::{pattern_residual, PatternKind};
use pairre::rules::{check_subrelation_constraint, rule_penalty, Rule, RuleKind};
use pairre::trainer::{adversarial_weights, negative_sampling_loss, Trainer};
use pairre::{RuleSet, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Check = Result<String, String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn unit_vec(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v = normal_vec(d, rng);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

pub fn concat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// `−‖h∘r_h − t∘r_t‖²`, written out directly.
pub fn pairre_score_oracle(h: &[f64], rh: &[f64], t: &[f64], rt: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..h.len() {
        let x = h[i] * rh[i] - t[i] * rt[i];
        s += x * x;
    }
    -s
}

pub fn pairre_table(entities: &[Vec<f64>], relations: &[Vec<f64>], squared: bool) -> EmbeddingTable {
    let d = entities[0].len();
    EmbeddingTable::from_parts(
        ScorerKind::PairRE,
        d,
        squared,
        entities.concat(),
        relations.concat(),
    )
    .unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---------------------------------------------------------------- pattern constructions

/// Symmetry: `r_t = s∘r_h` with random signs `s`, and `t = s∘h`.
pub fn pattern_symmetry(samples: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for k in 0..samples {
        let d = rng.gen_range(1..=32);
        let rh = normal_vec(d, &mut rng);
        let s: Vec<f64> = (0..d).map(|_| if rng.gen() { 1.0 } else { -1.0 }).collect();
        let rt = mul(&s, &rh);
        let h = unit_vec(d, &mut rng);
        let t = mul(&s, &h);
        let (a, b) = (unit_vec(d, &mut rng), unit_vec(d, &mut rng));
        let table = pairre_table(&[h, t, a, b], &[concat(&[&rh, &rt])], true);
        let res = pattern_residual(&table, PatternKind::Symmetry, &[0]).unwrap();
        let fwd = table.score(&Triple::new(0, 0, 1));
        let back = table.score(&Triple::new(1, 0, 0));
        let ab = table.score(&Triple::new(2, 0, 3));
        let ba = table.score(&Triple::new(3, 0, 2));
        let err = res.max_abs.max(fwd.abs()).max(back.abs()).max((ab - ba).abs());
        worst = worst.max(err);
        if err > 1e-9 {
            return Err(format!("sample {k} (d={d}): deviation {err:e}"));
        }
    }
    Ok(format!("{samples} samples, max deviation {worst:.2e}"))
}

/// Inverse: `r1 = (t∘a, h∘a)` and `r2` its swapped halves.
pub fn pattern_inverse(samples: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for k in 0..samples {
        let d = rng.gen_range(1..=32);
        let (h, t) = (unit_vec(d, &mut rng), unit_vec(d, &mut rng));
        let a = normal_vec(d, &mut rng);
        let (r1h, r1t) = (mul(&t, &a), mul(&h, &a));
        let r1 = concat(&[&r1h, &r1t]);
        let r2 = concat(&[&r1t, &r1h]);
        let (x, y) = (unit_vec(d, &mut rng), unit_vec(d, &mut rng));
        let table = pairre_table(&[h, t, x, y], &[r1, r2], true);
        let res = pattern_residual(&table, PatternKind::Inverse, &[0, 1]).unwrap();
        let fwd = table.score(&Triple::new(0, 0, 1));
        let back = table.score(&Triple::new(1, 1, 0));
        let xy = table.score(&Triple::new(2, 0, 3));
        let yx = table.score(&Triple::new(3, 1, 2));
        let err = res.max_abs.max(fwd.abs()).max(back.abs()).max((xy - yx).abs());
        worst = worst.max(err);
        if err > 1e-9 {
            return Err(format!("sample {k} (d={d}): deviation {err:e}"));
        }
    }
    Ok(format!("{samples} samples, max deviation {worst:.2e}"))
}

/// Composition on a constructed chain `e1 -r1-> e2 -r2-> e3`, with
/// `r3 = (r1_h∘r2_h, r1_t∘r2_t)`.
pub fn pattern_composition(samples: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for k in 0..samples {
        let d = rng.gen_range(1..=32);
        let (e1, e2, e3) = (unit_vec(d, &mut rng), unit_vec(d, &mut rng), unit_vec(d, &mut rng));
        let (a, b) = (normal_vec(d, &mut rng), normal_vec(d, &mut rng));
        let (r1h, r1t) = (mul(&e2, &a), mul(&e1, &a));
        let (r2h, r2t) = (mul(&e3, &b), mul(&e2, &b));
        let (r3h, r3t) = (mul(&r1h, &r2h), mul(&r1t, &r2t));
        let rels = [concat(&[&r1h, &r1t]), concat(&[&r2h, &r2t]), concat(&[&r3h, &r3t])];
        let table = pairre_table(&[e1, e2, e3], &rels, true);
        let res = pattern_residual(&table, PatternKind::Composition, &[0, 1, 2]).unwrap();
        let s1 = table.score(&Triple::new(0, 0, 1));
        let s2 = table.score(&Triple::new(1, 1, 2));
        let s3 = table.score(&Triple::new(0, 2, 2));
        let err = res.max_abs.max(s1.abs()).max(s2.abs()).max(s3.abs());
        worst = worst.max(err);
        if err > 1e-9 {
            return Err(format!("sample {k} (d={d}): deviation {err:e}"));
        }
    }
    Ok(format!("{samples} samples, max deviation {worst:.2e}"))
}

/// Subrelation: `r2 = α∘r1` on both halves with `|α| ≤ 1`; `r2` must never
/// score below `r1`, for either distance form.
pub fn subrelation_contraction(pairs: usize, entity_pairs: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut min_slack = f64::INFINITY;
    for k in 0..pairs {
        let d = rng.gen_range(1..=64);
        let r1 = normal_vec(2 * d, &mut rng);
        let alpha: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let r2: Vec<f64> = (0..2 * d).map(|i| alpha[i % d] * r1[i]).collect();
        let entities: Vec<Vec<f64>> = (0..2 * entity_pairs).map(|_| unit_vec(d, &mut rng)).collect();
        for squared in [true, false] {
            let table = pairre_table(&entities, &[r1.clone(), r2.clone()], squared);
            let check = check_subrelation_constraint(&table, 0, 1, 1e-9);
            if !check.satisfied {
                return Err(format!("pair {k}: constructed pair fails the constraint check"));
            }
            for p in 0..entity_pairs {
                let (h, t) = (2 * p, 2 * p + 1);
                let slack = table.score(&Triple::new(h, 1, t)) - table.score(&Triple::new(h, 0, t));
                min_slack = min_slack.min(slack);
                if slack < -1e-9 {
                    return Err(format!("pair {k} (d={d}, squared={squared}): slack {slack:e}"));
                }
            }
        }
    }
    Ok(format!(
        "{pairs} relation pairs x {entity_pairs} entity pairs, min slack {min_slack:.2e}"
    ))
}

// ------------------------------------------------------------------ gradients

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOLERANCE: f64 = 1e-4;

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` over the coordinates of one parameter row.
pub fn numeric_gradient(
    table: &mut EmbeddingTable,
    row: Row,
    f: &dyn Fn(&EmbeddingTable) -> f64,
) -> Vec<f64> {
    let len = match row {
        Row::Entity(_) => table.dim(),
        Row::Relation(_) => table.relation_width(),
    };
    (0..len)
        .map(|i| {
            let orig = row.get(table)[i];
            row.get_mut(table)[i] = orig + FD_STEP;
            let plus = f(table);
            row.get_mut(table)[i] = orig - FD_STEP;
            let minus = f(table);
            row.get_mut(table)[i] = orig;
            (plus - minus) / (2.0 * FD_STEP)
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub enum Row {
    Entity(usize),
    Relation(usize),
}

impl Row {
    fn get(self, t: &EmbeddingTable) -> &[f64] {
        match self {
            Row::Entity(e) => t.entity(e),
            Row::Relation(r) => t.relation(r),
        }
    }

    fn get_mut(self, t: &mut EmbeddingTable) -> &mut [f64] {
        match self {
            Row::Entity(e) => t.entity_mut(e),
            Row::Relation(r) => t.relation_mut(r),
        }
    }
}

pub const GRADIENT_DIMS: [usize; 3] = [2, 8, 64];

/// Score gradients of every scorer kind (both distance forms) against
/// central differences, cycling through [`GRADIENT_DIMS`].
pub fn score_gradients(instances: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for kind in ScorerKind::ALL {
        for k in 0..instances {
            let d = GRADIENT_DIMS[k % GRADIENT_DIMS.len()];
            let squared = k % 2 == 0;
            let mut table = EmbeddingTable::init(kind, 3, 2, d, 6.0, rng.gen()).unwrap();
            table.set_squared_distance(squared);
            // wider relation entries than the init range exercise larger gradients
            if !kind.is_rotation() {
                for x in table.relation_mut(1).iter_mut() {
                    *x = rng.sample::<f64, _>(StandardNormal);
                }
            }
            let t = Triple::new(0, rng.gen_range(0..2), 2);
            let g = table.gradients(&t, 1.0);
            let score = |tb: &EmbeddingTable| tb.score(&t);
            for (what, row, analytic) in [
                ("head", Row::Entity(t.head), &g.head),
                ("tail", Row::Entity(t.tail), &g.tail),
                ("relation", Row::Relation(t.relation), &g.relation),
            ] {
                let numeric = numeric_gradient(&mut table, row, &score);
                let err = relative_error(analytic, &numeric);
                worst = worst.max(err);
                if err > FD_TOLERANCE {
                    return Err(format!(
                        "{kind} d={d} squared={squared} instance {k}: {what} relative error {err:e}"
                    ));
                }
            }
        }
    }
    Ok(format!(
        "{} kinds x {instances} instances, max relative error {worst:.2e}",
        ScorerKind::ALL.len()
    ))
}

/// Soft-rule penalty gradients against central differences.
pub fn penalty_gradients(instances: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for k in 0..instances {
        let d = GRADIENT_DIMS[k % GRADIENT_DIMS.len()];
        let mut table = EmbeddingTable::init(ScorerKind::PairRE, 2, 3, d, 6.0, rng.gen()).unwrap();
        for r in 0..3 {
            for x in table.relation_mut(r).iter_mut() {
                *x = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let kinds = [RuleKind::Subrelation, RuleKind::Inverse];
        let rules: Vec<Rule> = (0..3)
            .map(|_| {
                let r1 = rng.gen_range(0..3);
                let r2 = (r1 + rng.gen_range(1..3)) % 3;
                Rule {
                    kind: kinds[rng.gen_range(0..2)],
                    r1,
                    r2,
                    lambda: rng.gen_range(0.05..=1.0),
                }
            })
            .collect();
        let penalty = rule_penalty(&table, &rules).unwrap();
        let value = |tb: &EmbeddingTable| rule_penalty(tb, &rules).unwrap().value;
        for r in 0..3 {
            let analytic = penalty
                .gradients
                .get(&r)
                .cloned()
                .unwrap_or_else(|| vec![0.0; 2 * d]);
            let numeric = numeric_gradient(&mut table, Row::Relation(r), &value);
            let err = relative_error(&analytic, &numeric);
            worst = worst.max(err);
            if err > FD_TOLERANCE {
                return Err(format!("instance {k} d={d} relation {r}: relative error {err:e}"));
            }
        }
    }
    Ok(format!("{instances} instances, max relative error {worst:.2e}"))
}

// -------------------------------------------------------------------- ranking

/// Rank of the target among surviving candidates by sorting: the mean
/// of the first and last sorted positions sharing the target's score.
pub fn sorted_rank(scores: &[(usize, f64)], target: usize, policy: TiePolicy) -> f64 {
    let s = scores.iter().find(|(c, _)| *c == target).unwrap().1;
    let mut sorted: Vec<f64> = scores.iter().map(|(_, x)| *x).collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let first = sorted.iter().position(|&x| x == s).unwrap() + 1;
    let last = sorted.iter().rposition(|&x| x == s).unwrap() + 1;
    match policy {
        TiePolicy::Mean => (first + last) as f64 / 2.0,
        TiePolicy::Optimistic => first as f64,
        TiePolicy::Pessimistic => last as f64,
    }
}

/// Filtered rank by exhaustive enumeration, filtering with a linear scan of
/// `known` rather than an index.
pub fn oracle_rank(
    table: &EmbeddingTable,
    known: &[Triple],
    t: &Triple,
    side: Side,
    policy: TiePolicy,
) -> f64 {
    let mut scores = Vec::new();
    for c in 0..table.num_entities() {
        let cand = match side {
            Side::Head => Triple::new(c, t.relation, t.tail),
            Side::Tail => Triple::new(t.head, t.relation, c),
        };
        let target = match side {
            Side::Head => t.head,
            Side::Tail => t.tail,
        };
        if c != target && known.contains(&cand) {
            continue;
        }
        let score = if table.kind() == ScorerKind::PairRE {
            let d = table.dim();
            let r = table.relation(t.relation);
            pairre_score_oracle(table.entity(cand.head), &r[..d], table.entity(cand.tail), &r[d..])
        } else {
            table.score(&cand)
        };
        scores.push((c, score));
    }
    let target = match side {
        Side::Head => t.head,
        Side::Tail => t.tail,
    };
    sorted_rank(&scores, target, policy)
}

/// A random KG and table; some entity rows are duplicated to force ties.
pub fn random_kg(rng: &mut ChaCha8Rng, kind: ScorerKind) -> (EmbeddingTable, Vec<TripleStore>) {
    let ne = rng.gen_range(2..=12);
    let nr = rng.gen_range(1..=4);
    let n = rng.gen_range(1..=60);
    let d = 2 * rng.gen_range(1..=4);
    let mut table = EmbeddingTable::init(kind, ne, nr, d, 6.0, rng.gen()).unwrap();
    for _ in 0..rng.gen_range(0..=2) {
        let (a, b) = (rng.gen_range(0..ne), rng.gen_range(0..ne));
        let row = table.entity(a).to_vec();
        table.entity_mut(b).copy_from_slice(&row);
    }
    let triples: Vec<Triple> = (0..n)
        .map(|_| Triple::new(rng.gen_range(0..ne), rng.gen_range(0..nr), rng.gen_range(0..ne)))
        .collect();
    let cut1 = rng.gen_range(0..=n);
    let cut2 = rng.gen_range(cut1..=n);
    let stores = vec![
        TripleStore::new(triples[..cut1].iter().copied(), Split::Train),
        TripleStore::new(triples[cut1..cut2].iter().copied(), Split::Valid),
        TripleStore::new(triples[cut2..].iter().copied(), Split::Test),
    ];
    (table, stores)
}

/// `evaluate` on random KGs against [`oracle_rank`]: per-triple ranks,
/// aggregate metrics and category counts must agree exactly.
pub fn ranking_oracle(kgs: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let policies = [TiePolicy::Mean, TiePolicy::Optimistic, TiePolicy::Pessimistic];
    let mut compared = 0;
    for k in 0..kgs {
        let kind = ScorerKind::ALL[k % ScorerKind::ALL.len()];
        let policy = policies[k % policies.len()];
        let (table, stores) = random_kg(&mut rng, kind);
        let test = &stores[2];
        if test.is_empty() {
            continue;
        }
        let known: Vec<Triple> = stores.iter().flat_map(|s| s.iter().copied()).collect();
        let filter = FilterIndex::build(&stores);
        let cats = classify_relations(&stores[0], table.num_relations());

        let mut ranks = Vec::new();
        for t in test {
            for side in [Side::Head, Side::Tail] {
                let got = rank_triple(&table, t, Some(&filter), side, policy);
                let want = oracle_rank(&table, &known, t, side, policy);
                if got != want {
                    return Err(format!("kg {k} ({kind}, {policy}): {t} {side:?} rank {got} != oracle {want}"));
                }
                ranks.push(want);
            }
        }
        let report = evaluate(&table, test, Some(&filter), Some(&cats), policy).unwrap();
        let n = ranks.len() as f64;
        let mr = ranks.iter().sum::<f64>() / n;
        let mrr = ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n;
        let hits10 = ranks.iter().filter(|&&r| r <= 10.0).count() as f64 / n;
        let m = report.overall.both;
        if (m.mr, m.mrr, m.hits_at_10) != (mr, mrr, hits10) {
            return Err(format!(
                "kg {k}: metrics ({}, {}, {}) != oracle ({mr}, {mrr}, {hits10})",
                m.mr, m.mrr, m.hits_at_10
            ));
        }
        let mut per_cat = std::collections::BTreeMap::<RelationCategory, usize>::new();
        for t in test {
            *per_cat.entry(cats[t.relation].category).or_default() += 1;
        }
        let got: Vec<(RelationCategory, usize)> =
            report.categories.iter().map(|(c, m)| (*c, m.triples)).collect();
        if got != per_cat.into_iter().collect::<Vec<_>>() {
            return Err(format!("kg {k}: category counts differ"));
        }
        compared += test.len();
    }
    Ok(format!("{kgs} random KGs, {compared} test triples ranked on both sides"))
}

// ----------------------------------------------------------------------- loss

pub fn loss_unit_value(vectors: usize, seed: u64) -> Check {
    let ln4 = 2.0 * std::f64::consts::LN_2;
    for gamma in [0.5, 6.0, 9.0, 12.0, 24.0] {
        for n in [1usize, 4, 64] {
            let w = vec![1.0 / n as f64; n];
            let l = negative_sampling_loss(gamma, &vec![gamma; n], &w, gamma).value;
            if !close(l, ln4, 1e-12) {
                return Err(format!("γ={gamma} n={n}: L = {l}, expected 2 ln 2"));
            }
            let scores = vec![-gamma; n];
            let w = adversarial_weights(&scores, 1.0);
            let l = negative_sampling_loss(gamma, &vec![gamma; n], &w, gamma).value;
            if !close(l, ln4, 1e-12) {
                return Err(format!("γ={gamma} n={n} (adversarial weights): L = {l}"));
            }
        }
    }
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for k in 0..vectors {
        let n = rng.gen_range(1..=256);
        let spread = 10f64.powi(rng.gen_range(-2..=3));
        let scores: Vec<f64> = (0..n).map(|_| spread * rng.sample::<f64, _>(StandardNormal)).collect();
        let temp = [0.0, 0.5, 1.0, 2.0][k % 4];
        let sum: f64 = adversarial_weights(&scores, temp).iter().sum();
        worst = worst.max((sum - 1.0).abs());
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("vector {k}: weights sum to {sum}"));
        }
    }
    Ok(format!("L = 2 ln 2 to 1e-12; {vectors} weight vectors, max |sum - 1| {worst:.1e}"))
}

// -------------------------------------------------------------- classification

/// `(head/tail pairs, tph, hpt, category)` for one relation.
pub type ClassificationCase = (Vec<(usize, usize)>, f64, f64, RelationCategory);

/// Ten relations over six entities with hand-counted statistics.
pub fn classification_fixture() -> Vec<ClassificationCase> {
    use RelationCategory::*;
    vec![
        (vec![(0, 1)], 1.0, 1.0, OneToOne),
        (vec![(0, 1), (0, 2)], 2.0, 1.0, OneToN),
        (vec![(1, 0), (2, 0)], 1.0, 2.0, NToOne),
        (vec![(1, 3), (2, 3), (1, 4), (2, 4)], 2.0, 2.0, NToN),
        // 3 triples over 2 heads: exactly 1.5 stays on the "1" side
        (vec![(0, 1), (0, 2), (3, 4)], 1.5, 1.0, OneToOne),
        (vec![(1, 0), (2, 0), (4, 3)], 1.0, 1.5, OneToOne),
        (vec![(0, 1), (0, 2), (0, 3), (4, 5)], 2.0, 1.0, OneToN),
        (vec![(0, 5), (1, 5), (2, 5), (3, 5), (4, 5)], 1.0, 5.0, NToOne),
        (vec![(0, 1), (1, 0)], 1.0, 1.0, OneToOne),
        (vec![(0, 1), (0, 2), (1, 1), (1, 2), (2, 3)], 5.0 / 3.0, 5.0 / 3.0, NToN),
    ]
}

pub fn classification() -> Check {
    let fixture = classification_fixture();
    let triples = fixture
        .iter()
        .enumerate()
        .flat_map(|(r, (pairs, ..))| pairs.iter().map(move |&(h, t)| Triple::new(h, r, t)));
    let store = TripleStore::new(triples, Split::Train);
    let stats = classify_relations(&store, fixture.len());
    for (r, (pairs, tph, hpt, cat)) in fixture.iter().enumerate() {
        let s = &stats[r];
        if s.tph != *tph || s.hpt != *hpt || s.category != *cat || s.triples != pairs.len() {
            return Err(format!(
                "relation {r}: got tph={} hpt={} {} ({} triples), expected tph={tph} hpt={hpt} {cat}",
                s.tph, s.hpt, s.category, s.triples
            ));
        }
    }
    Ok(format!("{} relations classified exactly", fixture.len()))
}

// -------------------------------------------------------------------- overfit

/// 200 distinct random triples over 40 entities and 4 relations.
pub fn overfit_kg(seed: u64) -> TripleStore {
    let mut rng = rng(seed);
    let mut seen = std::collections::HashSet::new();
    while seen.len() < 200 {
        seen.insert(Triple::new(rng.gen_range(0..40), rng.gen_range(0..4), rng.gen_range(0..40)));
    }
    let mut triples: Vec<Triple> = seen.into_iter().collect();
    triples.sort();
    TripleStore::new(triples, Split::Train)
}

pub fn overfit_config() -> TrainConfig {
    let mut c = TrainConfig::new(ScorerKind::PairRE, 32, 6.0);
    c.num_negatives = 32;
    c.batch_size = 200;
    c.learning_rate = 0.02;
    c.optimizer = pairre::optim::OptimizerKind::Adam;
    c.max_steps = 2000;
    c.log_every = 2000;
    c.seed = 7;
    c
}

/// Trains on the full toy KG, checking train-set filtered MRR every 100
/// steps; stops at the first check reaching 0.9.
pub fn overfit() -> Check {
    let train = overfit_kg(3);
    let config = overfit_config();
    let start = Instant::now();
    let table = EmbeddingTable::init(config.scorer, 40, 4, config.dim, config.gamma, config.seed).unwrap();
    let filter = FilterIndex::build([&train]);
    let mut trainer = Trainer::new(config.clone(), table, RuleSet::default(), None).map_err(|e| e.to_string())?;
    let mut mrr = 0.0;
    while trainer.step() < config.max_steps {
        trainer.train_step(train.triples()).map_err(|e| e.to_string())?;
        if trainer.step() % 100 == 0 {
            mrr = evaluate(trainer.table(), &train, Some(&filter), None, TiePolicy::Mean)
                .unwrap()
                .overall
                .both
                .mrr;
            if mrr >= 0.9 {
                break;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let msg = format!("train MRR {mrr:.4} after {} steps in {secs:.1} s", trainer.step());
    if mrr >= 0.9 && secs < 60.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}
