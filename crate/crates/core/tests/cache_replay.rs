//! The incremental cache checked against recomputation from the confirmed
//! prefix, under random operation schedules.

use ngram_core::cache::{draft_verify, Checkpoint, DraftOptions, EmbeddingMemo, SequenceCacheState};
use ngram_core::config::{NgramConfig, Variant};
use ngram_core::embedding::EmbeddingBank;
use ngram_core::hashing::hash_sequence;
use ngram_core::{Error, TokenId};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
enum Op {
    Append(TokenId),
    Snapshot,
    Rollback(usize),
    Release(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0u32..30).prop_map(Op::Append),
        1 => Just(Op::Snapshot),
        1 => (0usize..8).prop_map(Op::Rollback),
        1 => (0usize..8).prop_map(Op::Release),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn incremental_ids_match_replay(ops in proptest::collection::vec(op(), 0..120), n in 1usize..6, k in 1usize..4) {
        let c = if n == 1 {
            NgramConfig::base_only(30, 4).unwrap()
        } else {
            NgramConfig::new(Variant::SubtableV2, n, k, 30, (n - 1) * k, 3).unwrap()
        };
        let mut state = SequenceCacheState::new(&c).unwrap();
        let mut confirmed: Vec<TokenId> = Vec::new();
        // reference: stack of prefix lengths with their handles
        let mut marks: Vec<(Checkpoint, usize)> = Vec::new();
        let mut stream = Vec::new();
        for op in ops {
            match op {
                Op::Append(t) => {
                    confirmed.push(t);
                    stream.push(state.append(t).unwrap());
                    let replay = hash_sequence(&confirmed, &c).unwrap();
                    prop_assert_eq!(stream.last().unwrap(), replay.last().unwrap());
                }
                Op::Snapshot => marks.push((state.snapshot(), confirmed.len())),
                Op::Rollback(i) if i < marks.len() => {
                    let (h, len) = marks[i];
                    state.rollback(h).unwrap();
                    marks.truncate(i);
                    confirmed.truncate(len);
                    stream.truncate(len);
                    // the handle is spent
                    prop_assert!(matches!(state.rollback(h), Err(Error::StaleSnapshot)));
                }
                Op::Release(i) if i < marks.len() => {
                    state.release(marks[i].0).unwrap();
                    marks.truncate(i);
                }
                _ => {}
            }
            prop_assert_eq!(state.len() as usize, confirmed.len());
            prop_assert_eq!(state.snapshot_depth(), marks.len());
        }
        prop_assert_eq!(stream, hash_sequence(&confirmed, &c).unwrap());
    }

    #[test]
    fn identical_streams_give_identical_states(tokens in proptest::collection::vec(0u32..30, 0..50)) {
        let c = NgramConfig::with_defaults(30, 6).unwrap();
        let mut a = SequenceCacheState::new(&c).unwrap();
        let mut b = SequenceCacheState::new(&c).unwrap();
        for &t in &tokens {
            prop_assert_eq!(a.append(t).unwrap(), b.append(t).unwrap());
        }
        prop_assert!(a.same_state(&b));
    }
}

#[test]
fn random_lookups_match_recomputation() {
    let c = NgramConfig::new(Variant::SubtableV2, 3, 2, 20, 8, 2).unwrap();
    let bank = EmbeddingBank::<f32>::init(&c, 9).unwrap();
    let mut memo = EmbeddingMemo::new(64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let ctx: Vec<TokenId> = (0..3).map(|_| rng.random_range(0..6)).collect();
        let ids = ngram_core::hashing::hash_all_orders(&ctx, &c).unwrap();
        let got = memo.lookup(ctx[2], &ids, &bank).unwrap();
        assert_eq!(got, bank.embed_v2(&ctx).unwrap());
    }
    let k = memo.counters();
    assert_eq!(k.hits + k.misses, 10_000);
    assert!(k.hits > 0 && k.misses > 0);
    assert!(memo.len() <= 64);
}

#[test]
fn draft_rounds_match_memo_free_rounds() {
    let c = NgramConfig::with_defaults(25, 12).unwrap();
    let bank = EmbeddingBank::<f32>::init(&c, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for capacity in [1, 3, 1024] {
        let mut with = SequenceCacheState::new(&c).unwrap();
        let mut without = SequenceCacheState::new(&c).unwrap();
        let mut memo = EmbeddingMemo::new(capacity).unwrap();
        let mut confirmed = Vec::new();
        for _ in 0..200 {
            let drafts: Vec<TokenId> = (0..rng.random_range(0..6)).map(|_| rng.random_range(0..25)).collect();
            let accept = rng.random_range(0..=drafts.len());
            let a = draft_verify(&mut with, Some(&mut memo), &bank, &drafts, accept, DraftOptions::default()).unwrap();
            let b = draft_verify(&mut without, None, &bank, &drafts, accept, DraftOptions::default()).unwrap();
            assert_eq!(a.accepted, b.accepted);
            assert_eq!(a.draft, b.draft);
            let want = bank.embed_continuation(&confirmed, &drafts[..accept]).unwrap();
            assert_eq!(a.accepted, want);
            if capacity >= drafts.len() {
                assert_eq!(a.verify_counters.gathers, 0);
            }
            confirmed.extend_from_slice(&drafts[..accept]);
        }
        assert!(with.same_state(&without));
        assert_eq!(with.len() as usize, confirmed.len());
    }
}

#[test]
fn memo_can_be_shared_across_threads() {
    use std::sync::{Arc, Mutex};
    let c = NgramConfig::with_defaults(25, 12).unwrap();
    let bank = Arc::new(EmbeddingBank::<f32>::init(&c, 4).unwrap());
    let memo = Arc::new(Mutex::new(EmbeddingMemo::new(128).unwrap()));
    std::thread::scope(|s| {
        for seed in 0..4u64 {
            let (bank, memo, c) = (bank.clone(), memo.clone(), c.clone());
            s.spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut state = SequenceCacheState::new(&c).unwrap();
                let mut seq = Vec::new();
                for _ in 0..300 {
                    let t = rng.random_range(0..5);
                    seq.push(t);
                    let ids = state.append(t).unwrap();
                    let v = memo.lock().unwrap().lookup(t, &ids, &bank).unwrap();
                    let want = bank.embed_sequence(&seq).unwrap();
                    assert_eq!(v, want.row(seq.len() - 1));
                }
            });
        }
    });
    assert!(memo.lock().unwrap().counters().hits > 0);
}
