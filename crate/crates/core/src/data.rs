//! Triple loading, vocabulary encoding, filter index construction and
//! relation-category statistics.
//!
//! Triple files are UTF-8, one `head<TAB>relation<TAB>tail` fact per line.
//! Header lines are not supported; blank lines are skipped.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type EntityId = usize;
pub type RelationId = usize;

/// File names used when a vocabulary is persisted to a directory.
pub const ENTITY_VOCAB_FILE: &str = "entities.txt";
pub const RELATION_VOCAB_FILE: &str = "relations.txt";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: unknown entity `{name}`")]
    UnknownEntity {
        path: PathBuf,
        line: usize,
        name: String,
    },
    #[error("{path}:{line}: unknown relation `{name}`")]
    UnknownRelation {
        path: PathBuf,
        line: usize,
        name: String,
    },
    #[error("duplicate name `{name}` in vocabulary file {path}")]
    DuplicateName { path: PathBuf, name: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

/// Entity and relation name tables. Ids are contiguous and 0-based in
/// first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    entity_ids: HashMap<String, EntityId>,
    relation_ids: HashMap<String, RelationId>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vocabulary from every triple file in `paths`, in order.
    pub fn from_triple_files<P: AsRef<Path>>(paths: &[P]) -> Result<Self, DataError> {
        let mut vocab = Vocab::new();
        for path in paths {
            let path = path.as_ref();
            for_each_record(path, |_, [h, r, t]| {
                vocab.intern_entity(h);
                vocab.intern_relation(r);
                vocab.intern_entity(t);
                Ok(())
            })?;
        }
        Ok(vocab)
    }

    pub fn intern_entity(&mut self, name: &str) -> EntityId {
        intern(&mut self.entity_names, &mut self.entity_ids, name)
    }

    pub fn intern_relation(&mut self, name: &str) -> RelationId {
        intern(&mut self.relation_names, &mut self.relation_ids, name)
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_ids.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_ids.get(name).copied()
    }

    pub fn entity_name(&self, id: EntityId) -> Option<&str> {
        self.entity_names.get(id).map(String::as_str)
    }

    pub fn relation_name(&self, id: RelationId) -> Option<&str> {
        self.relation_names.get(id).map(String::as_str)
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    /// Writes `entities.txt` and `relations.txt` into `dir`, one name per
    /// line; the line number is the id.
    pub fn save(&self, dir: &Path) -> Result<(), DataError> {
        write_names(&dir.join(ENTITY_VOCAB_FILE), &self.entity_names)?;
        write_names(&dir.join(RELATION_VOCAB_FILE), &self.relation_names)
    }

    pub fn load(dir: &Path) -> Result<Self, DataError> {
        let mut vocab = Vocab::new();
        let entity_path = dir.join(ENTITY_VOCAB_FILE);
        for name in read_names(&entity_path)? {
            if vocab.entity_ids.contains_key(&name) {
                return Err(DataError::DuplicateName {
                    path: entity_path,
                    name,
                });
            }
            vocab.intern_entity(&name);
        }
        let relation_path = dir.join(RELATION_VOCAB_FILE);
        for name in read_names(&relation_path)? {
            if vocab.relation_ids.contains_key(&name) {
                return Err(DataError::DuplicateName {
                    path: relation_path,
                    name,
                });
            }
            vocab.intern_relation(&name);
        }
        Ok(vocab)
    }
}

fn intern(names: &mut Vec<String>, ids: &mut HashMap<String, usize>, name: &str) -> usize {
    if let Some(&id) = ids.get(name) {
        return id;
    }
    let id = names.len();
    names.push(name.to_owned());
    ids.insert(name.to_owned(), id);
    id
}

fn write_names(path: &Path, names: &[String]) -> Result<(), DataError> {
    let file = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for name in names {
        writeln!(out, "{name}").map_err(|e| DataError::io(path, e))?;
    }
    out.flush().map_err(|e| DataError::io(path, e))
}

fn read_names(path: &Path) -> Result<Vec<String>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

/// Calls `f(line_number, [head, relation, tail])` for every non-blank line.
fn for_each_record<F>(path: &Path, mut f: F) -> Result<(), DataError>
where
    F: FnMut(usize, [&str; 3]) -> Result<(), DataError>,
{
    let file = fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    let reader = BufReader::new(file);
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| DataError::io(path, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(DataError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        f(line_no, [fields[0], fields[1], fields[2]])?;
    }
    Ok(())
}

/// The triples of one split, deduplicated, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleStore {
    triples: Vec<Triple>,
    split: Split,
    duplicates: usize,
}

impl TripleStore {
    /// Builds a store from raw triples, dropping repeats after the first.
    pub fn new(triples: impl IntoIterator<Item = Triple>, split: Split) -> Self {
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        let mut duplicates = 0;
        for t in triples {
            if seen.insert(t) {
                kept.push(t);
            } else {
                duplicates += 1;
            }
        }
        TripleStore {
            triples: kept,
            split,
            duplicates,
        }
    }

    /// Loads and encodes a split. Every name must already be in `vocab`.
    pub fn load(path: &Path, vocab: &Vocab, split: Split) -> Result<Self, DataError> {
        let mut raw = Vec::new();
        for_each_record(path, |line, [h, r, t]| {
            let entity = |name: &str| {
                vocab.entity_id(name).ok_or_else(|| DataError::UnknownEntity {
                    path: path.to_path_buf(),
                    line,
                    name: name.to_owned(),
                })
            };
            let head = entity(h)?;
            let relation = vocab
                .relation_id(r)
                .ok_or_else(|| DataError::UnknownRelation {
                    path: path.to_path_buf(),
                    line,
                    name: r.to_owned(),
                })?;
            let tail = entity(t)?;
            raw.push(Triple::new(head, relation, tail));
            Ok(())
        })?;
        let store = TripleStore::new(raw, split);
        if store.duplicates > 0 {
            log::warn!(
                "{}: dropped {} duplicate triple(s)",
                path.display(),
                store.duplicates
            );
        }
        Ok(store)
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Number of repeated lines dropped at construction.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Triple> {
        self.triples.iter()
    }
}

impl<'a> IntoIterator for &'a TripleStore {
    type Item = &'a Triple;
    type IntoIter = std::slice::Iter<'a, Triple>;

    fn into_iter(self) -> Self::IntoIter {
        self.triples.iter()
    }
}

/// Known-true tails per (head, relation) and heads per (tail, relation),
/// over the union of every split handed to [`FilterIndex::build`].
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    tails_of: HashMap<(EntityId, RelationId), HashSet<EntityId>>,
    heads_of: HashMap<(EntityId, RelationId), HashSet<EntityId>>,
}

impl FilterIndex {
    pub fn build<'a>(stores: impl IntoIterator<Item = &'a TripleStore>) -> Self {
        let mut index = FilterIndex::default();
        for store in stores {
            for t in store {
                index.insert(*t);
            }
        }
        index
    }

    pub fn insert(&mut self, t: Triple) {
        self.tails_of
            .entry((t.head, t.relation))
            .or_default()
            .insert(t.tail);
        self.heads_of
            .entry((t.tail, t.relation))
            .or_default()
            .insert(t.head);
    }

    pub fn tails_of(&self, head: EntityId, relation: RelationId) -> Option<&HashSet<EntityId>> {
        self.tails_of.get(&(head, relation))
    }

    pub fn heads_of(&self, tail: EntityId, relation: RelationId) -> Option<&HashSet<EntityId>> {
        self.heads_of.get(&(tail, relation))
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.tails_of(t.head, t.relation)
            .is_some_and(|tails| tails.contains(&t.tail))
    }
}

/// Mapping-cardinality class of a relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationCategory {
    #[serde(rename = "1-to-1")]
    OneToOne,
    #[serde(rename = "1-to-N")]
    OneToN,
    #[serde(rename = "N-to-1")]
    NToOne,
    #[serde(rename = "N-to-N")]
    NToN,
}

impl RelationCategory {
    pub const ALL: [RelationCategory; 4] = [
        RelationCategory::OneToOne,
        RelationCategory::OneToN,
        RelationCategory::NToOne,
        RelationCategory::NToN,
    ];

    /// Threshold separating "1" from "N" on either side.
    pub const THRESHOLD: f64 = 1.5;

    /// Label from tails-per-head and heads-per-tail. Exactly 1.5 counts as "1".
    pub fn from_stats(tph: f64, hpt: f64) -> Self {
        let many_tails = tph > Self::THRESHOLD;
        let many_heads = hpt > Self::THRESHOLD;
        match (many_tails, many_heads) {
            (false, false) => RelationCategory::OneToOne,
            (true, false) => RelationCategory::OneToN,
            (false, true) => RelationCategory::NToOne,
            (true, true) => RelationCategory::NToN,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            RelationCategory::OneToOne => "1-to-1",
            RelationCategory::OneToN => "1-to-N",
            RelationCategory::NToOne => "N-to-1",
            RelationCategory::NToN => "N-to-N",
        }
    }
}

impl fmt::Display for RelationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RelationCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RelationCategory::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| format!("unknown relation category `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationStats {
    pub category: RelationCategory,
    /// Average number of tails per distinct head.
    pub tph: f64,
    /// Average number of heads per distinct tail.
    pub hpt: f64,
    pub triples: usize,
    pub distinct_heads: usize,
    pub distinct_tails: usize,
}

/// Classifies every relation id in `0..num_relations` from training triples.
///
/// Relations without training triples are labeled 1-to-1 with tph = hpt = 1.
pub fn classify_relations(train: &TripleStore, num_relations: usize) -> Vec<RelationStats> {
    let mut counts = vec![0usize; num_relations];
    let mut heads: Vec<HashSet<EntityId>> = vec![HashSet::new(); num_relations];
    let mut tails: Vec<HashSet<EntityId>> = vec![HashSet::new(); num_relations];
    for t in train {
        counts[t.relation] += 1;
        heads[t.relation].insert(t.head);
        tails[t.relation].insert(t.tail);
    }
    (0..num_relations)
        .map(|r| {
            let n = counts[r];
            if n == 0 {
                log::warn!("relation {r} has no training triples; classified as 1-to-1");
                return RelationStats {
                    category: RelationCategory::OneToOne,
                    tph: 1.0,
                    hpt: 1.0,
                    triples: 0,
                    distinct_heads: 0,
                    distinct_tails: 0,
                };
            }
            let tph = n as f64 / heads[r].len() as f64;
            let hpt = n as f64 / tails[r].len() as f64;
            RelationStats {
                category: RelationCategory::from_stats(tph, hpt),
                tph,
                hpt,
                triples: n,
                distinct_heads: heads[r].len(),
                distinct_tails: tails[r].len(),
            }
        })
        .collect()
}
