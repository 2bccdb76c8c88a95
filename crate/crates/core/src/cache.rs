//! Incremental n-gram ids for one decode stream, with snapshot/rollback for
//! draft/verify decoding, and an LRU memo of finished embeddings.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, Ordering};

use lru::LruCache;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::config::NgramConfig;
use crate::embedding::EmbeddingBank;
use crate::error::{Error, Result};
use crate::hashing::{horner, IdSet};
use crate::real::Real;
use crate::TokenId;

pub const DEFAULT_MEMO_CAPACITY: usize = 1 << 16;

static NEXT_OWNER: AtomicU64 = AtomicU64::new(1);

/// Instrumentation counters. Gathers count table rows read (base row plus one
/// per branch); projection MACs count multiply-adds in the branch projections.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheCounters {
    pub appends: u64,
    pub snapshots: u64,
    pub rollbacks: u64,
    pub hits: u64,
    pub misses: u64,
    pub gathers: u64,
    pub projection_macs: u64,
}

impl CacheCounters {
    pub fn merge(&mut self, other: &CacheCounters) {
        self.appends += other.appends;
        self.snapshots += other.snapshots;
        self.rollbacks += other.rollbacks;
        self.hits += other.hits;
        self.misses += other.misses;
        self.gathers += other.gathers;
        self.projection_macs += other.projection_macs;
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("counters serialize")
    }

    fn record_compute(&mut self, config: &NgramConfig) {
        let branches = if config.max_order > 1 { config.branches() } else { 0 };
        self.gathers += 1 + branches as u64;
        if config.has_projections() {
            self.projection_macs += (branches * config.dim * config.sub_dim()) as u64;
        }
    }
}

/// Handle returned by [`SequenceCacheState::snapshot`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Checkpoint {
    owner: u64,
    serial: u64,
    depth: usize,
}

#[derive(Debug, Clone)]
struct Saved {
    serial: u64,
    ring: SmallVec<[TokenId; 8]>,
    head: usize,
    length: u64,
    ids: IdSet,
}

/// Per-stream cache: the last `N - 1` confirmed tokens and the id set of the
/// most recent position. Appending updates each branch id with one rolling
/// step, so the cost does not depend on how many tokens came before.
#[derive(Debug, Clone)]
pub struct SequenceCacheState {
    owner: u64,
    max_order: usize,
    base: u64,
    moduli: SmallVec<[u64; 16]>,
    // base^(n-1) mod V_{n,k}, per branch
    lead_pow: SmallVec<[u64; 16]>,
    ring: SmallVec<[TokenId; 8]>,
    head: usize,
    length: u64,
    ids: IdSet,
    snapshots: Vec<Saved>,
    next_serial: u64,
    counters: CacheCounters,
}

impl SequenceCacheState {
    pub fn new(config: &NgramConfig) -> Result<Self> {
        config.validate()?;
        let branch_keys: Vec<_> = config.branch_keys().collect();
        let moduli: SmallVec<[u64; 16]> = branch_keys.iter().map(|&(n, k)| config.vocab(n, k)).collect();
        let lead_pow = branch_keys
            .iter()
            .zip(&moduli)
            .map(|(&(n, _), &m)| {
                (1..n).fold(1 % m, |acc, _| mul_mod(acc, config.base_vocab, m))
            })
            .collect();
        let ids = IdSet::from_parts(config.sub_tables, SmallVec::from_elem(0, moduli.len()));
        Ok(Self {
            owner: NEXT_OWNER.fetch_add(1, Ordering::Relaxed),
            max_order: config.max_order,
            base: config.base_vocab,
            moduli,
            lead_pow,
            ring: SmallVec::from_elem(0, config.max_order - 1),
            head: 0,
            length: 0,
            ids,
            snapshots: Vec::new(),
            next_serial: 0,
            counters: CacheCounters::default(),
        })
    }

    /// Tokens appended so far.
    pub fn len(&self) -> u64 {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    pub fn snapshot_depth(&self) -> usize {
        self.snapshots.len()
    }

    pub fn counters(&self) -> CacheCounters {
        self.counters
    }

    /// Id set of the most recent position (all zeros before the first append).
    pub fn current_ids(&self) -> &IdSet {
        &self.ids
    }

    /// Last `N - 1` tokens, oldest first, zero padded.
    pub fn trailing_tokens(&self) -> SmallVec<[TokenId; 8]> {
        let w = self.ring.len();
        (0..w).map(|i| self.ring[(self.head + i) % w]).collect()
    }

    // token `back` positions before the one about to be appended (1 = previous)
    fn ring_back(&self, back: usize) -> TokenId {
        let w = self.ring.len();
        self.ring[(self.head + w - back) % w]
    }

    pub fn append(&mut self, token: TokenId) -> Result<IdSet> {
        if u64::from(token) >= self.base {
            return Err(Error::TokenOutOfRange { token: token.into(), base: self.base });
        }
        let n_max = self.max_order;
        let k_count = if n_max > 1 { self.moduli.len() / (n_max - 1) } else { 0 };
        let mut next: SmallVec<[u64; 16]> = SmallVec::with_capacity(self.moduli.len());
        for (b, (&m, &lead)) in self.moduli.iter().zip(&self.lead_pow).enumerate() {
            let n = 2 + b / k_count;
            let id = if n < n_max {
                // drop the oldest token of the previous window, shift, add the new one
                let prev = self.ids.as_slice()[b];
                let leaving = mul_mod(u64::from(self.ring_back(n)), lead, m);
                let kept = (prev + m - leaving) % m;
                ((u128::from(kept) * u128::from(self.base) + u128::from(token)) % u128::from(m)) as u64
            } else {
                // the token leaving the longest window is no longer held
                let mut window: SmallVec<[TokenId; 8]> = self.trailing_tokens();
                window.push(token);
                horner(&window, self.base, m)
            };
            next.push(id);
        }
        if !self.ring.is_empty() {
            self.ring[self.head] = token;
            self.head = (self.head + 1) % self.ring.len();
        }
        self.length += 1;
        self.ids = IdSet::from_parts(self.ids_sub_tables(), next);
        self.counters.appends += 1;
        Ok(self.ids.clone())
    }

    fn ids_sub_tables(&self) -> usize {
        if self.max_order > 1 {
            self.moduli.len() / (self.max_order - 1)
        } else {
            1
        }
    }

    pub fn snapshot(&mut self) -> Checkpoint {
        let serial = self.next_serial;
        self.next_serial += 1;
        self.snapshots.push(Saved {
            serial,
            ring: self.ring.clone(),
            head: self.head,
            length: self.length,
            ids: self.ids.clone(),
        });
        self.counters.snapshots += 1;
        Checkpoint { owner: self.owner, serial, depth: self.snapshots.len() - 1 }
    }

    fn check(&self, handle: Checkpoint) -> Result<()> {
        if handle.owner != self.owner {
            return Err(Error::ForeignSnapshot);
        }
        match self.snapshots.get(handle.depth) {
            Some(s) if s.serial == handle.serial => Ok(()),
            _ => Err(Error::StaleSnapshot),
        }
    }

    /// Restores the state captured by `handle`. The handle and every later
    /// snapshot become stale.
    pub fn rollback(&mut self, handle: Checkpoint) -> Result<()> {
        self.check(handle)?;
        let saved = self.snapshots.drain(handle.depth..).next().expect("checked");
        self.ring = saved.ring;
        self.head = saved.head;
        self.length = saved.length;
        self.ids = saved.ids;
        self.counters.rollbacks += 1;
        Ok(())
    }

    /// Drops `handle` and every later snapshot, keeping the current state.
    pub fn release(&mut self, handle: Checkpoint) -> Result<()> {
        self.check(handle)?;
        self.snapshots.truncate(handle.depth);
        Ok(())
    }

    /// Equality of the observable decode state: trailing tokens, length, the
    /// current ids and the snapshot depth. Owner identity is ignored.
    pub fn same_state(&self, other: &Self) -> bool {
        self.trailing_tokens() == other.trailing_tokens()
            && self.length == other.length
            && self.ids == other.ids
            && self.snapshots.len() == other.snapshots.len()
    }
}

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((u128::from(a) * u128::from(b)) % u128::from(m)) as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct MemoKey {
    token: TokenId,
    sub_tables: usize,
    ids: SmallVec<[u64; 16]>,
}

impl MemoKey {
    fn digest(&self) -> u128 {
        let half = |salt: u64| {
            let mut h = DefaultHasher::new();
            salt.hash(&mut h);
            self.hash(&mut h);
            h.finish()
        };
        (u128::from(half(0x9e37_79b9_7f4a_7c15)) << 64) | u128::from(half(0xc2b2_ae3d_27d4_eb4f))
    }
}

/// LRU memo of final embeddings keyed by the base token and the full id set.
///
/// The full key is kept next to each entry and compared on every hit, so a
/// digest collision degrades to a miss instead of a wrong vector. Share across
/// streams behind a `Mutex`.
#[derive(Debug)]
pub struct EmbeddingMemo<T: Real> {
    entries: LruCache<u128, (MemoKey, Array1<T>)>,
    counters: CacheCounters,
}

impl<T: Real> EmbeddingMemo<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        let cap = NonZeroUsize::new(capacity).ok_or_else(|| Error::config("memo capacity must be at least 1"))?;
        Ok(Self { entries: LruCache::new(cap), counters: CacheCounters::default() })
    }

    pub fn with_default_capacity() -> Self {
        Self::new(DEFAULT_MEMO_CAPACITY).expect("nonzero")
    }

    pub fn capacity(&self) -> usize {
        self.entries.cap().get()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn counters(&self) -> CacheCounters {
        self.counters
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Returns the final embedding for `token` with `ids`, computing and
    /// inserting it on a miss.
    pub fn lookup(&mut self, token: TokenId, ids: &IdSet, bank: &EmbeddingBank<T>) -> Result<Array1<T>> {
        let key = MemoKey { token, sub_tables: bank.config().sub_tables, ids: ids.as_slice().into() };
        let digest = key.digest();
        if let Some((stored, v)) = self.entries.get(&digest) {
            if *stored == key {
                self.counters.hits += 1;
                return Ok(v.clone());
            }
        }
        let v = embed_direct(bank, token, ids, &mut self.counters)?;
        self.counters.misses += 1;
        self.entries.put(digest, (key, v.clone()));
        Ok(v)
    }
}

/// Computes the final embedding without a memo, recording gathers and
/// projection MACs in `counters`.
pub fn embed_direct<T: Real>(
    bank: &EmbeddingBank<T>,
    token: TokenId,
    ids: &IdSet,
    counters: &mut CacheCounters,
) -> Result<Array1<T>> {
    let v = bank.embed_ids(token, ids)?;
    counters.record_compute(bank.config());
    Ok(v)
}

/// Memoized final embedding from precomputed ids (no re-hashing).
pub fn memo_lookup<T: Real>(
    memo: &mut EmbeddingMemo<T>,
    token: TokenId,
    ids: &IdSet,
    bank: &EmbeddingBank<T>,
) -> Result<Array1<T>> {
    memo.lookup(token, ids, bank)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftOptions {
    /// The draft pass embeds with the base table only and does no n-gram
    /// lookups; the verify pass then has nothing memoized to reuse.
    pub conventional_draft_embedding: bool,
}

/// Result of one draft/verify round.
#[derive(Debug, Clone)]
pub struct DraftOutcome<T> {
    /// Final embeddings of the accepted tokens, one row each.
    pub accepted: Array2<T>,
    /// Draft-pass rows (base rows only under `conventional_draft_embedding`).
    pub draft: Array2<T>,
    pub draft_counters: CacheCounters,
    pub verify_counters: CacheCounters,
}

/// Runs one draft/verify round: appends every draft token against a snapshot,
/// embedding each, then keeps the first `accept` tokens and rolls the rest
/// back. Accepted embeddings are served from `memo` when present.
pub fn draft_verify<T: Real>(
    state: &mut SequenceCacheState,
    mut memo: Option<&mut EmbeddingMemo<T>>,
    bank: &EmbeddingBank<T>,
    drafts: &[TokenId],
    accept: usize,
    options: DraftOptions,
) -> Result<DraftOutcome<T>> {
    if accept > drafts.len() {
        return Err(Error::config(format!("accept count {accept} exceeds draft length {}", drafts.len())));
    }
    if let Some(&t) = drafts.iter().find(|&&t| u64::from(t) >= state.base) {
        return Err(Error::TokenOutOfRange { token: t.into(), base: state.base });
    }
    let dim = bank.config().dim;
    let start = state.counters;
    let memo_start = memo.as_ref().map(|m| m.counters).unwrap_or_default();
    let mut direct = CacheCounters::default();

    let mut marks = Vec::with_capacity(drafts.len());
    let mut id_sets = Vec::with_capacity(drafts.len());
    let mut draft = Array2::zeros((drafts.len(), dim));
    for (i, &t) in drafts.iter().enumerate() {
        marks.push(state.snapshot());
        let ids = state.append(t)?;
        let row = if options.conventional_draft_embedding {
            direct.gathers += 1;
            bank.base.row(t as usize).to_owned()
        } else {
            match memo.as_deref_mut() {
                Some(m) => m.lookup(t, &ids, bank)?,
                None => embed_direct(bank, t, &ids, &mut direct)?,
            }
        };
        draft.row_mut(i).assign(&row);
        id_sets.push(ids);
    }
    if accept < drafts.len() {
        state.rollback(marks[accept])?;
    }
    if let Some(&first) = marks.first() {
        if accept > 0 {
            state.release(first)?;
        }
    }
    let draft_counters = diff(state.counters, start, memo.as_ref().map(|m| m.counters), memo_start, direct);

    let verify_start = state.counters;
    let verify_memo_start = memo.as_ref().map(|m| m.counters).unwrap_or_default();
    let mut verify_direct = CacheCounters::default();
    let mut accepted = Array2::zeros((accept, dim));
    for (i, (&t, ids)) in drafts.iter().zip(&id_sets).take(accept).enumerate() {
        let row = match memo.as_deref_mut() {
            Some(m) => m.lookup(t, ids, bank)?,
            None => embed_direct(bank, t, ids, &mut verify_direct)?,
        };
        accepted.row_mut(i).assign(&row);
    }
    let verify_counters =
        diff(state.counters, verify_start, memo.as_ref().map(|m| m.counters), verify_memo_start, verify_direct);
    Ok(DraftOutcome { accepted, draft, draft_counters, verify_counters })
}

fn sub(a: u64, b: u64) -> u64 {
    a - b
}

fn diff(
    state_now: CacheCounters,
    state_then: CacheCounters,
    memo_now: Option<CacheCounters>,
    memo_then: CacheCounters,
    direct: CacheCounters,
) -> CacheCounters {
    let mut out = CacheCounters {
        appends: sub(state_now.appends, state_then.appends),
        snapshots: sub(state_now.snapshots, state_then.snapshots),
        rollbacks: sub(state_now.rollbacks, state_then.rollbacks),
        ..Default::default()
    };
    if let Some(m) = memo_now {
        out.hits = m.hits - memo_then.hits;
        out.misses = m.misses - memo_then.misses;
        out.gathers = m.gathers - memo_then.gathers;
        out.projection_macs = m.projection_macs - memo_then.projection_macs;
    }
    out.merge(&direct);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;
    use crate::hashing::{hash_all_orders, hash_sequence, trailing_window};

    fn config() -> NgramConfig {
        NgramConfig::uniform(Variant::SubtableV2, 3, 2, 50, 8, 97).unwrap()
    }

    #[test]
    fn first_append_hashes_padded_windows() {
        let c = NgramConfig::uniform(Variant::SubtableV2, 3, 1, 10, 4, 1000).unwrap();
        let mut s = SequenceCacheState::new(&c).unwrap();
        let ids = s.append(7).unwrap();
        assert_eq!(ids.get(2, 1), 7);
        assert_eq!(ids.get(3, 1), 7);
        assert_eq!(ids, hash_all_orders(&[0, 0, 7], &c).unwrap());
    }

    #[test]
    fn sequential_appends_equal_batch_hashing() {
        let c = NgramConfig::new(Variant::SubtableV2, 5, 3, 40, 12, 30).unwrap();
        let tokens: Vec<TokenId> = (0..200).map(|i| (i * 7919 % 40) as TokenId).collect();
        let batch = hash_sequence(&tokens, &c).unwrap();
        let mut s = SequenceCacheState::new(&c).unwrap();
        for (t, want) in tokens.iter().zip(&batch) {
            assert_eq!(&s.append(*t).unwrap(), want);
        }
        assert_eq!(s.len(), 200);
    }

    #[test]
    fn rollback_replays_identically() {
        let mut s = SequenceCacheState::new(&config()).unwrap();
        s.append(3).unwrap();
        let h = s.snapshot();
        let first: Vec<_> = [4, 5, 6].iter().map(|&t| s.append(t).unwrap()).collect();
        s.rollback(h).unwrap();
        let second: Vec<_> = [4, 5, 6].iter().map(|&t| s.append(t).unwrap()).collect();
        assert_eq!(first, second);
    }

    #[test]
    fn rollback_to_fresh_state() {
        let c = config();
        let mut s = SequenceCacheState::new(&c).unwrap();
        let h = s.snapshot();
        for t in [1, 2, 3, 4] {
            s.append(t).unwrap();
        }
        s.rollback(h).unwrap();
        assert!(s.same_state(&SequenceCacheState::new(&c).unwrap()));
        assert!(s.is_empty());
    }

    #[test]
    fn stale_and_foreign_handles_are_rejected() {
        let c = config();
        let mut a = SequenceCacheState::new(&c).unwrap();
        let mut b = SequenceCacheState::new(&c).unwrap();
        let h0 = a.snapshot();
        a.append(1).unwrap();
        let h1 = a.snapshot();
        assert!(matches!(b.rollback(h0), Err(Error::ForeignSnapshot)));
        a.rollback(h0).unwrap();
        assert!(matches!(a.rollback(h1), Err(Error::StaleSnapshot)));
        assert!(matches!(a.rollback(h0), Err(Error::StaleSnapshot)));
        // a new snapshot at the same depth does not revive the old handle
        let _h2 = a.snapshot();
        assert!(matches!(a.rollback(h0), Err(Error::StaleSnapshot)));
        assert!(matches!(a.append(50), Err(Error::TokenOutOfRange { .. })));
    }

    #[test]
    fn base_only_state_has_no_ids() {
        let c = NgramConfig::base_only(10, 4).unwrap();
        let mut s = SequenceCacheState::new(&c).unwrap();
        assert!(s.append(9).unwrap().is_empty());
        let bank = EmbeddingBank::<f32>::init(&c, 1).unwrap();
        let mut memo = EmbeddingMemo::new(4).unwrap();
        let v = memo.lookup(9, s.current_ids(), &bank).unwrap();
        assert_eq!(v, bank.base.row(9));
        assert_eq!(memo.counters().gathers, 1);
    }

    #[test]
    fn memo_hits_are_bit_identical() {
        let c = config();
        let bank = EmbeddingBank::<f32>::init(&c, 3).unwrap();
        let mut memo = EmbeddingMemo::new(8).unwrap();
        let ids = hash_all_orders(&[1, 2, 3], &c).unwrap();
        let a = memo.lookup(3, &ids, &bank).unwrap();
        let b = memo.lookup(3, &ids, &bank).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, bank.embed_position(&[1, 2, 3]).unwrap());
        let k = memo.counters();
        assert_eq!((k.hits, k.misses, k.gathers), (1, 1, 5));
        assert_eq!(k.projection_macs, 4 * 8 * 2);
        // same ids with a different base token is a different entry
        memo.lookup(4, &ids, &bank).unwrap();
        assert_eq!(memo.counters().misses, 2);
    }

    #[test]
    fn capacity_one_thrashes() {
        let c = config();
        let bank = EmbeddingBank::<f32>::init(&c, 3).unwrap();
        let mut memo = EmbeddingMemo::new(1).unwrap();
        let a = hash_all_orders(&[1, 2, 3], &c).unwrap();
        let b = hash_all_orders(&[4, 5, 6], &c).unwrap();
        for i in 0..10 {
            if i % 2 == 0 {
                memo.lookup(3, &a, &bank).unwrap();
            } else {
                memo.lookup(6, &b, &bank).unwrap();
            }
        }
        assert_eq!(memo.counters().hits, 0);
        assert_eq!(memo.counters().misses, 10);
        assert_eq!(memo.len(), 1);
        assert!(EmbeddingMemo::<f32>::new(0).is_err());
    }

    #[test]
    fn draft_accept_all_equals_sequential() {
        let c = config();
        let bank = EmbeddingBank::<f32>::init(&c, 5).unwrap();
        let mut s = SequenceCacheState::new(&c).unwrap();
        let mut plain = SequenceCacheState::new(&c).unwrap();
        for t in [9, 8] {
            s.append(t).unwrap();
            plain.append(t).unwrap();
        }
        let mut memo = EmbeddingMemo::with_default_capacity();
        let drafts = [1, 2, 3, 4];
        let out = draft_verify(&mut s, Some(&mut memo), &bank, &drafts, 4, DraftOptions::default()).unwrap();
        for &t in &drafts {
            plain.append(t).unwrap();
        }
        assert!(s.same_state(&plain));
        assert_eq!(out.verify_counters.gathers, 0);
        assert_eq!(out.verify_counters.hits, 4);
        let want = bank.embed_continuation(&[9, 8], &drafts).unwrap();
        assert_eq!(out.accepted, want);
    }

    #[test]
    fn draft_accept_none_leaves_state_unchanged() {
        let c = config();
        let bank = EmbeddingBank::<f32>::init(&c, 5).unwrap();
        let mut s = SequenceCacheState::new(&c).unwrap();
        s.append(11).unwrap();
        let before = s.clone();
        let out = draft_verify(&mut s, None, &bank, &[1, 2, 3], 0, DraftOptions::default()).unwrap();
        assert!(s.same_state(&before));
        assert_eq!(out.accepted.nrows(), 0);
        assert_eq!(out.draft_counters.rollbacks, 1);
        assert!(draft_verify(&mut s, None, &bank, &[1], 2, DraftOptions::default()).is_err());
    }

    #[test]
    fn conventional_draft_defers_gathers_to_verify() {
        let c = config();
        let bank = EmbeddingBank::<f32>::init(&c, 5).unwrap();
        let mut s = SequenceCacheState::new(&c).unwrap();
        let mut memo = EmbeddingMemo::new(16).unwrap();
        let opts = DraftOptions { conventional_draft_embedding: true };
        let out = draft_verify(&mut s, Some(&mut memo), &bank, &[1, 2, 3], 2, opts).unwrap();
        assert_eq!(out.draft_counters.gathers, 3);
        assert_eq!(out.verify_counters.gathers, 2 * 5);
        assert_eq!(out.draft.row(0), bank.base.row(1));
        let tokens = [1, 2];
        for i in 0..2 {
            let w = trailing_window(&tokens, i, 3);
            assert_eq!(out.accepted.row(i), bank.embed_position(&w).unwrap());
        }
    }

    #[test]
    fn counters_export_as_json() {
        let k = CacheCounters { hits: 2, gathers: 7, ..Default::default() };
        let v = k.to_json();
        assert_eq!(v["hits"], 2);
        assert_eq!(v["gathers"], 7);
        assert_eq!(v["rollbacks"], 0);
    }
}
