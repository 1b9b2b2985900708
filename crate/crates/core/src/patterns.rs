//! How closely trained relation vectors satisfy the algebraic conditions
//! under which each relation pattern holds exactly.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::RelationId;
use crate::eval::EvalError;
use crate::model::{EmbeddingTable, ScorerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    Symmetry,
    Antisymmetry,
    Inverse,
    Composition,
    Subrelation,
}

impl PatternKind {
    pub const ALL: [PatternKind; 5] = [
        PatternKind::Symmetry,
        PatternKind::Antisymmetry,
        PatternKind::Inverse,
        PatternKind::Composition,
        PatternKind::Subrelation,
    ];

    /// Number of relations the pattern involves.
    pub fn arity(self) -> usize {
        match self {
            PatternKind::Symmetry | PatternKind::Antisymmetry => 1,
            PatternKind::Inverse | PatternKind::Subrelation => 2,
            PatternKind::Composition => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PatternKind::Symmetry => "symmetry",
            PatternKind::Antisymmetry => "antisymmetry",
            PatternKind::Inverse => "inverse",
            PatternKind::Composition => "composition",
            PatternKind::Subrelation => "subrelation",
        }
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PatternKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PatternKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown pattern `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternResidual {
    pub kind: PatternKind,
    pub relations: Vec<RelationId>,
    /// One entry per embedding dimension; zero everywhere means the pattern
    /// holds exactly.
    pub residual: Vec<f64>,
    pub mean_abs: f64,
    pub max_abs: f64,
}

/// Per-dimension residual of the pattern condition:
///
/// | pattern | residual |
/// |---|---|
/// | symmetry, antisymmetry | `r_h² − r_t²` |
/// | inverse | `r1_h∘r2_h − r1_t∘r2_t` |
/// | composition | `r1_t∘r2_t∘r3_h − r1_h∘r2_h∘r3_t` |
/// | subrelation | `r1_h∘r2_t − r1_t∘r2_h` |
///
/// Antisymmetry shares the symmetry residual: it holds when the residual is
/// nonzero somewhere.
pub fn pattern_residual(
    table: &EmbeddingTable,
    kind: PatternKind,
    relations: &[RelationId],
) -> Result<PatternResidual, EvalError> {
    if table.kind() != ScorerKind::PairRE {
        return Err(EvalError::UnsupportedScorer(table.kind()));
    }
    if relations.len() != kind.arity() {
        return Err(EvalError::Arity {
            kind,
            expected: kind.arity(),
            found: relations.len(),
        });
    }
    let n = table.num_relations();
    if let Some(&relation) = relations.iter().find(|&&r| r >= n) {
        return Err(EvalError::RelationOutOfRange {
            relation,
            num_relations: n,
        });
    }
    let d = table.dim();
    let halves = |r: RelationId| {
        let row = table.relation(r);
        (&row[..d], &row[d..])
    };
    let residual: Vec<f64> = match kind {
        PatternKind::Symmetry | PatternKind::Antisymmetry => {
            let (h, t) = halves(relations[0]);
            (0..d).map(|i| h[i] * h[i] - t[i] * t[i]).collect()
        }
        PatternKind::Inverse => {
            let ((ah, at), (bh, bt)) = (halves(relations[0]), halves(relations[1]));
            (0..d).map(|i| ah[i] * bh[i] - at[i] * bt[i]).collect()
        }
        PatternKind::Composition => {
            let (a, b, c) = (halves(relations[0]), halves(relations[1]), halves(relations[2]));
            (0..d)
                .map(|i| a.1[i] * b.1[i] * c.0[i] - a.0[i] * b.0[i] * c.1[i])
                .collect()
        }
        PatternKind::Subrelation => {
            let ((ah, at), (bh, bt)) = (halves(relations[0]), halves(relations[1]));
            (0..d).map(|i| ah[i] * bt[i] - at[i] * bh[i]).collect()
        }
    };
    let mean_abs = residual.iter().map(|x| x.abs()).sum::<f64>() / d as f64;
    let max_abs = residual.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(PatternResidual {
        kind,
        relations: relations.to_vec(),
        residual,
        mean_abs,
        max_abs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Equal-width histogram over `[min, max]`; the maximum lands in the last
/// bin. A degenerate range is widened to `value ± 0.5`.
pub fn histogram(values: &[f64], bins: usize) -> Result<Vec<HistogramBin>, EvalError> {
    if bins == 0 {
        return Err(EvalError::ZeroBins);
    }
    let (mut lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if values.is_empty() {
        (lo, hi) = (0.0, 0.0);
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            left: lo + width * i as f64,
            right: if i + 1 == bins { hi } else { lo + width * (i + 1) as f64 },
            count: 0,
        })
        .collect();
    for &x in values {
        let idx = (((x - lo) / width) as usize).min(bins - 1);
        out[idx].count += 1;
    }
    Ok(out)
}

/// Writes the residual histogram as `bin_left  bin_right  count` rows.
pub fn export_histogram(
    residual: &PatternResidual,
    bins: usize,
    path: &Path,
) -> Result<Vec<HistogramBin>, EvalError> {
    let hist = histogram(&residual.residual, bins)?;
    let io = |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    writeln!(f, "bin_left\tbin_right\tcount").map_err(io)?;
    for b in &hist {
        writeln!(f, "{}\t{}\t{}", b.left, b.right, b.count).map_err(io)?;
    }
    f.flush().map_err(io)?;
    Ok(hist)
}
