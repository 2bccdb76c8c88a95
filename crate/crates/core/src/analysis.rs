//! Corpus diagnostics for sizing n-gram tables: hit rate, hash collisions and a
//! vocabulary-size rule that steers clear of multiples of the base vocabulary.
//!
//! Collisions are counted by type: `distinct n-grams − distinct buckets`. Bucket
//! ids only change when a new distinct n-gram appears, so the streaming pass
//! hashes each distinct n-gram once per modulus.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::hashing::{horner, HashSpec};
use crate::{TokenId, PAD};

type NgramKey = SmallVec<[TokenId; 8]>;

/// Hit-rate and collision statistics for one `(order, modulus)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub order: usize,
    pub modulus: u64,
    pub hit_rate: f64,
    pub collision_count: u64,
    pub distinct_ngrams: u64,
    pub distinct_buckets: u64,
    pub tokens_processed: u64,
    pub corpus_id: String,
}

pub const CSV_HEADER: &str = "order,modulus,hit_rate,collision_count,tokens_processed";

impl CollisionReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.order, self.modulus, self.hit_rate, self.collision_count, self.tokens_processed
        )
    }
}

pub fn write_csv<W: Write>(mut w: W, reports: &[CollisionReport]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in reports {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
struct OrderStats {
    ngrams_seen: u64,
    ngrams: HashSet<NgramKey>,
    buckets: Vec<(u64, HashSet<u64>)>,
}

/// Streaming accumulator over one or more orders and moduli.
///
/// Shards built from disjoint slices of a corpus can be combined with
/// [`CorpusStats::merge`]; the result does not depend on how the corpus was split.
#[derive(Debug, Clone)]
pub struct CorpusStats {
    base: u64,
    sequences_seen: u64,
    orders: BTreeMap<usize, OrderStats>,
}

impl CorpusStats {
    /// Tracks every `order` in `orders` against every modulus in `moduli`.
    pub fn new(base: u64, orders: &[usize], moduli: &[u64]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for &n in orders {
            for &m in moduli {
                HashSpec::new(n, base, m)?;
            }
            if n < 2 {
                HashSpec::new(n, base, 1)?;
            }
            map.insert(
                n,
                OrderStats {
                    buckets: moduli.iter().map(|&m| (m, HashSet::new())).collect(),
                    ..Default::default()
                },
            );
        }
        Ok(Self { base, sequences_seen: 0, orders: map })
    }

    pub fn observe_sequence(&mut self, seq: &[TokenId]) -> Result<()> {
        if let Some(&t) = seq.iter().find(|&&t| u64::from(t) >= self.base) {
            return Err(Error::TokenOutOfRange { token: t.into(), base: self.base });
        }
        self.sequences_seen += 1;
        let base = self.base;
        for (&n, stats) in &mut self.orders {
            let mut padded: Vec<TokenId> = vec![PAD; n - 1];
            padded.extend_from_slice(seq);
            for window in padded.windows(n) {
                stats.ngrams_seen += 1;
                if stats.ngrams.contains(window) {
                    continue;
                }
                for (m, set) in &mut stats.buckets {
                    set.insert(horner(window, base, *m));
                }
                stats.ngrams.insert(NgramKey::from_slice(window));
            }
        }
        Ok(())
    }

    pub fn observe_corpus(&mut self, corpus: &Corpus) -> Result<()> {
        for seq in &corpus.sequences {
            self.observe_sequence(seq)?;
        }
        Ok(())
    }

    /// Set union of two shards with identical orders and moduli.
    pub fn merge(&mut self, other: CorpusStats) -> Result<()> {
        let same_layout = self.base == other.base
            && self.orders.len() == other.orders.len()
            && self.orders.iter().zip(&other.orders).all(|((a, sa), (b, sb))| {
                a == b
                    && sa.buckets.len() == sb.buckets.len()
                    && sa.buckets.iter().zip(&sb.buckets).all(|(x, y)| x.0 == y.0)
            });
        if !same_layout {
            return Err(Error::config("cannot merge statistics with different layouts"));
        }
        self.sequences_seen += other.sequences_seen;
        for (n, theirs) in other.orders {
            let mine = self.orders.get_mut(&n).expect("layout checked");
            mine.ngrams_seen += theirs.ngrams_seen;
            mine.ngrams.extend(theirs.ngrams);
            for ((_, a), (_, b)) in mine.buckets.iter_mut().zip(theirs.buckets) {
                a.extend(b);
            }
        }
        Ok(())
    }

    pub fn sequences_seen(&self) -> u64 {
        self.sequences_seen
    }

    pub fn ngrams_seen(&self, order: usize) -> Option<u64> {
        self.orders.get(&order).map(|s| s.ngrams_seen)
    }

    pub fn distinct_ngrams(&self, order: usize) -> Option<u64> {
        self.orders.get(&order).map(|s| s.ngrams.len() as u64)
    }

    pub fn distinct_buckets(&self, order: usize, modulus: u64) -> Option<u64> {
        self.orders
            .get(&order)?
            .buckets
            .iter()
            .find(|(m, _)| *m == modulus)
            .map(|(_, s)| s.len() as u64)
    }

    /// One report per `(order, modulus)`, orders ascending, moduli in
    /// construction order.
    pub fn reports(&self, corpus_id: &str) -> Vec<CollisionReport> {
        let mut out = Vec::new();
        for (&n, stats) in &self.orders {
            let distinct = stats.ngrams.len() as u64;
            for (m, set) in &stats.buckets {
                let hit = set.len() as u64;
                out.push(CollisionReport {
                    order: n,
                    modulus: *m,
                    hit_rate: hit as f64 / *m as f64,
                    collision_count: distinct - hit,
                    distinct_ngrams: distinct,
                    distinct_buckets: hit,
                    tokens_processed: stats.ngrams_seen,
                    corpus_id: corpus_id.to_string(),
                });
            }
        }
        out
    }
}

/// Runs [`CorpusStats`] over `shards` contiguous slices of the corpus in parallel
/// and merges the results.
pub fn analyze_sharded(
    corpus: &Corpus,
    base: u64,
    orders: &[usize],
    moduli: &[u64],
    shards: usize,
) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let shards = shards.clamp(1, corpus.sequences.len().max(1));
    let chunk = corpus.sequences.len().div_ceil(shards);
    let parts: Vec<Result<CorpusStats>> = std::thread::scope(|scope| {
        let handles: Vec<_> = corpus
            .sequences
            .chunks(chunk)
            .map(|seqs| {
                scope.spawn(move || {
                    let mut stats = CorpusStats::new(base, orders, moduli)?;
                    for s in seqs {
                        stats.observe_sequence(s)?;
                    }
                    Ok(stats)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("analysis worker panicked")).collect()
    });
    let mut parts = parts.into_iter();
    let mut total = parts.next().expect("non-empty corpus has a shard")?;
    for p in parts {
        total.merge(p?)?;
    }
    Ok(total)
}

fn single(corpus: &Corpus, spec: &HashSpec) -> Result<CollisionReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut stats = CorpusStats::new(spec.base(), &[spec.order()], &[spec.modulus()])?;
    stats.observe_corpus(corpus)?;
    Ok(stats.reports("").remove(0))
}

/// Fraction of the `spec.modulus()` buckets hit at least once.
pub fn compute_hit_rate(corpus: &Corpus, spec: &HashSpec) -> Result<f64> {
    single(corpus, spec).map(|r| r.hit_rate)
}

/// Distinct n-grams minus distinct buckets.
pub fn count_collisions(corpus: &Corpus, spec: &HashSpec) -> Result<u64> {
    single(corpus, spec).map(|r| r.collision_count)
}

/// One report per modulus from a single pass over the corpus.
///
/// `moduli` must be sorted ascending; reports follow the input order.
pub fn sweep_vocab_sizes(
    corpus: &Corpus,
    order: usize,
    base: u64,
    moduli: &[u64],
    corpus_id: &str,
) -> Result<Vec<CollisionReport>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if moduli.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::config("moduli must be sorted ascending"));
    }
    if moduli.is_empty() {
        return Ok(Vec::new());
    }
    let mut stats = CorpusStats::new(base, &[order], moduli)?;
    stats.observe_corpus(corpus)?;
    Ok(stats.reports(corpus_id))
}

/// The table size half-way between the `multiple`-th and next multiple of the
/// base vocabulary, `round((multiple + 1/2) · base)`.
pub fn advise_vocab_size(base: u64, multiple: u64) -> Result<u64> {
    if base < 2 {
        return Err(Error::config("base vocabulary must be at least 2"));
    }
    if multiple < 1 {
        return Err(Error::config("multiple must be at least 1"));
    }
    multiple
        .checked_mul(base)
        .and_then(|x| x.checked_add(base.div_ceil(2)))
        .ok_or_else(|| Error::config("advised size overflows u64"))
}

/// Evenly spaced moduli `start, start+step, ..., <= end`.
pub fn sweep_grid(start: u64, end: u64, step: u64) -> Result<Vec<u64>> {
    if step == 0 || start == 0 || end < start {
        return Err(Error::config(format!("invalid sweep {start}:{end}:{step}")));
    }
    Ok((start..=end).step_by(step as usize).collect())
}
