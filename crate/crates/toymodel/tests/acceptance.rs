//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs with `cargo test -p ngram-toymodel --test acceptance`. Criterion numbers
//! given as extra arguments restrict the run, e.g. `-- 1 4 10`.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use ngram_core::analysis::CorpusStats;
use ngram_core::cache::{draft_verify, Checkpoint, DraftOptions, EmbeddingMemo, SequenceCacheState};
use ngram_core::config::{Amplification, NgramConfig, Variant};
use ngram_core::corpus::Corpus;
use ngram_core::embedding::{BudgetReport, EmbeddingBank};
use ngram_core::gradcheck::{check_gradients, Parameters};
use ngram_core::hashing::{hash_sequence, rolling_hash, trailing_window, HashSpec};
use ngram_core::ple::{plne_config, PleLayer, PleSource};
use ngram_core::synth::{bundled_corpus, repeated_sequence, FiveGramLanguage};
use ngram_core::TokenId;
use ngram_toymodel::diagnostic::norm_diagnostic;
use ngram_toymodel::train::{smoothed_final, TrainConfig, Trainer};
use ngram_toymodel::{parameter_matched_baseline, Model, ModelConfig};
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {t:.2?}, limit {limit:?}"))
}

// ---------- 1 ----------

fn big_hash(window: &[TokenId], base: u64, modulus: u64) -> u64 {
    let mut sum = BigUint::from(0u32);
    for (j, &t) in window.iter().rev().enumerate() {
        sum += BigUint::from(t) * BigUint::from(base).pow(j as u32);
    }
    let r = sum % BigUint::from(modulus);
    r.to_u64_digits().first().copied().unwrap_or(0)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples = 100_000;
    for i in 0..samples {
        let base = rng.random_range(2..=1u64 << 17);
        let n = rng.random_range(2..=8usize);
        let modulus = match i % 3 {
            0 => rng.random_range(1..=u64::MAX),
            1 => rng.random_range(1..=1u64 << 32),
            _ => rng.random_range(1..=100_000),
        };
        let window: Vec<TokenId> = (0..n).map(|_| rng.random_range(0..base) as TokenId).collect();
        let spec = HashSpec::new(n, base, modulus).map_err(|e| e.to_string())?;
        let got = rolling_hash(&window, &spec).map_err(|e| e.to_string())?;
        let want = big_hash(&window, base, modulus);
        ensure(got == want, || format!("window {window:?} base {base} modulus {modulus}: {got} != {want}"))?;
    }
    within(start, Duration::from_secs(5))?;
    Ok(format!("{samples} samples exact in {:.2?}", start.elapsed()))
}

// ---------- 2 ----------

fn criterion_2() -> Outcome {
    let (vocab, dim) = (5003, 64);
    let mut counts = Vec::new();
    for (n, k) in [(2, 1), (3, 2), (5, 4)] {
        let c = NgramConfig::uniform(Variant::SubtableV2, n, k, 1000, dim, vocab).map_err(|e| e.to_string())?;
        let bank = EmbeddingBank::<f32>::zeros(&c).map_err(|e| e.to_string())?;
        let sub: usize = bank.sub_tables.iter().map(|t| t.len()).sum();
        let proj: usize = bank.projections.iter().map(|t| t.len()).sum();
        counts.push((n, k, sub, proj, bank.num_params()));
    }
    let first = counts[0];
    for c in &counts {
        ensure(c.2 == first.2 && c.3 == first.3 && c.4 == first.4, || format!("{counts:?}"))?;
    }
    ensure(first.2 as u64 == vocab * dim as u64 && first.3 == dim * dim, || format!("{first:?}"))?;
    Ok(format!("sub-table params {} and projection params {} for every (N,K)", first.2, first.3))
}

// ---------- 3 ----------

fn randomize<M: Parameters<f64>>(m: &mut M, rng: &mut ChaCha8Rng) {
    for s in m.param_slices_mut() {
        for x in s.iter_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
    }
}

fn random_ngram(rng: &mut ChaCha8Rng, variant: Variant, amplification: Amplification) -> NgramConfig {
    let max_order = rng.random_range(2..=5);
    let sub_tables = if variant == Variant::AveragedV1 { 1 } else { rng.random_range(1..=3) };
    let dim = match variant {
        Variant::AveragedV1 => rng.random_range(2..=6),
        Variant::SubtableV2 => (max_order - 1) * sub_tables * rng.random_range(1..=2),
    };
    let base_vocab = rng.random_range(3..=20);
    let sub_vocab =
        (2..=max_order).map(|_| (0..sub_tables).map(|_| rng.random_range(1..=15)).collect()).collect();
    NgramConfig { max_order, sub_tables, base_vocab, dim, sub_vocab, variant, amplification }
}

struct WithInput {
    layer: PleLayer<f64>,
    xs: Array2<f64>,
}

impl Parameters<f64> for WithInput {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.layer.param_slices();
        v.push(self.xs.as_slice().unwrap());
        v
    }
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.layer.param_slices_mut();
        v.push(self.xs.as_slice_mut().unwrap());
        v
    }
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut probes = 0usize;
    let classes = [
        (Variant::AveragedV1, Amplification::None),
        (Variant::AveragedV1, Amplification::ScaleSqrtD),
        (Variant::AveragedV1, Amplification::LayerNorm),
        (Variant::SubtableV2, Amplification::None),
        (Variant::SubtableV2, Amplification::ScaleSqrtD),
        (Variant::SubtableV2, Amplification::LayerNorm),
    ];
    let bank_configs = 120;
    for i in 0..bank_configs {
        let (variant, amp) = classes[i % classes.len()];
        let c = random_ngram(&mut rng, variant, amp);
        let mut bank = EmbeddingBank::<f64>::zeros(&c).map_err(|e| e.to_string())?;
        randomize(&mut bank, &mut rng);
        let len = rng.random_range(1..=6);
        let seq: Vec<TokenId> = (0..len).map(|_| rng.random_range(0..c.base_vocab as TokenId)).collect();
        let up = Array2::from_shape_fn((len, c.dim), |_| rng.random_range(-1.0..1.0));
        let mut grads = bank.clone();
        grads.fill_zero();
        bank.backward_sequence(&seq, up.view(), &mut grads).map_err(|e| e.to_string())?;
        let r = check_gradients(
            &mut bank,
            &grads,
            |b| (&b.embed_sequence(&seq).unwrap() * &up).sum(),
            1e-5,
            1e-3,
            |_, _| true,
        );
        ensure(r.max_rel_error < 1e-6, || format!("{c:?}: {r:?}"))?;
        worst = worst.max(r.max_rel_error);
        probes += r.checked;
    }
    let ple_configs = 120;
    for i in 0..ple_configs {
        let d_model = rng.random_range(1..=5);
        let (layer, n) = if i % 2 == 0 {
            let hidden = rng.random_range(1..=6);
            (PleLayer::<f64>::new_ple(d_model, hidden, rng.random_range(2..=9), i as u64), 1)
        } else {
            let mut g = random_ngram(&mut rng, Variant::SubtableV2, Amplification::None);
            g.dim = g.branches() * rng.random_range(1..=2);
            let lc = plne_config(&g, g.dim).map_err(|e| e.to_string())?;
            (PleLayer::new_plne(d_model, &lc, i as u64).map_err(|e| e.to_string())?, lc.max_order)
        };
        let base = match &layer.source {
            PleSource::Table(t) => t.nrows() as u64,
            PleSource::Ngram(b) => b.config().base_vocab,
        };
        let len = rng.random_range(1..=4);
        let seq: Vec<TokenId> = (0..len).map(|_| rng.random_range(0..base as TokenId)).collect();
        let mut m = WithInput { layer, xs: Array2::zeros((len, d_model)) };
        randomize(&mut m, &mut rng);
        let up = Array2::from_shape_fn((len, d_model), |_| rng.random_range(-1.0..1.0));
        let mut grads = WithInput { layer: m.layer.zeros_like(), xs: Array2::zeros((len, d_model)) };
        for p in 0..len {
            let ctx = trailing_window(&seq, p, n);
            let dx = m.layer.backward(m.xs.row(p), &ctx, up.row(p), &mut grads.layer).map_err(|e| e.to_string())?;
            grads.xs.row_mut(p).assign(&dx);
        }
        let loss = |m: &WithInput| {
            (0..len)
                .map(|p| {
                    let y = m.layer.forward(m.xs.row(p), &trailing_window(&seq, p, n)).unwrap();
                    (&y * &up.row(p)).sum()
                })
                .sum::<f64>()
        };
        let r = check_gradients(&mut m, &grads, loss, 1e-5, 1e-3, |_, _| true);
        ensure(r.max_rel_error < 1e-6, || format!("per-layer case {i}: {r:?}"))?;
        worst = worst.max(r.max_rel_error);
        probes += r.checked;
    }
    within(start, Duration::from_secs(60))?;
    Ok(format!(
        "{} configurations, {probes} probes, worst relative error {worst:.2e}, {:.2?}",
        bank_configs + ple_configs,
        start.elapsed()
    ))
}

// ---------- 4 and 5 ----------

const CRITERION_4_MODULI: [u64; 8] = [997, 4096, 10_007, 30_000, 30_500, 65_537, 200_003, 1_000_003];

/// Distinct n-grams, then distinct buckets per modulus, from exact integer values.
fn two_pass_oracle(corpus: &Corpus, n: usize, base: u64, moduli: &[u64]) -> (u64, Vec<u64>) {
    let mut grams: HashSet<Vec<TokenId>> = HashSet::new();
    for seq in &corpus.sequences {
        for i in 0..seq.len() {
            grams.insert((0..n).map(|j| if i + j + 1 < n { 0 } else { seq[i + j + 1 - n] }).collect());
        }
    }
    let values: Vec<u128> = grams
        .iter()
        .map(|g| g.iter().rev().enumerate().map(|(j, &t)| u128::from(t) * u128::from(base).pow(j as u32)).sum())
        .collect();
    let buckets = moduli
        .iter()
        .map(|&m| values.iter().map(|v| (v % u128::from(m)) as u64).collect::<HashSet<_>>().len() as u64)
        .collect();
    (grams.len() as u64, buckets)
}

fn criterion_4(corpus: &Corpus) -> Outcome {
    let start = Instant::now();
    let base = 1000;
    let orders = [2, 3, 4];
    let mut stats = CorpusStats::new(base, &orders, &CRITERION_4_MODULI).map_err(|e| e.to_string())?;
    stats.observe_corpus(corpus).map_err(|e| e.to_string())?;
    let reports = stats.reports("bundled");
    for &n in &orders {
        let (distinct, buckets) = two_pass_oracle(corpus, n, base, &CRITERION_4_MODULI);
        for (&m, &b) in CRITERION_4_MODULI.iter().zip(&buckets) {
            let r = reports.iter().find(|r| r.order == n && r.modulus == m).ok_or("missing report")?;
            ensure(r.collision_count == distinct - b, || format!("n={n} m={m}: {} vs {}", r.collision_count, distinct - b))?;
            ensure(r.hit_rate == b as f64 / m as f64, || format!("n={n} m={m}: hit rate {}", r.hit_rate))?;
        }
    }
    within(start, Duration::from_secs(30))?;
    Ok(format!("{} (order, modulus) pairs exact over {} tokens, {:.2?}", reports.len(), corpus.num_tokens(), start.elapsed()))
}

// pinned from the brute-force oracle on the bundled corpus
const SPIKE_AT_MULTIPLE: u64 = 455;
const SPIKE_OFF_MULTIPLE: u64 = 266;

fn criterion_5(corpus: &Corpus) -> Outcome {
    let base = 1000;
    let (at, off) = (30 * base, 30 * base + 500);
    let mut stats = CorpusStats::new(base, &[2], &[at, off]).map_err(|e| e.to_string())?;
    stats.observe_corpus(corpus).map_err(|e| e.to_string())?;
    let r = stats.reports("bundled");
    let (c_at, c_off) = (r[0].collision_count, r[1].collision_count);
    let (distinct, buckets) = two_pass_oracle(corpus, 2, base, &[at, off]);
    let oracle = (distinct - buckets[0], distinct - buckets[1]);
    ensure(oracle == (SPIKE_AT_MULTIPLE, SPIKE_OFF_MULTIPLE), || format!("oracle moved: {oracle:?}"))?;
    ensure((c_at, c_off) == oracle, || format!("analyzer {c_at}/{c_off} vs oracle {oracle:?}"))?;
    let ratio = c_at as f64 / c_off as f64;
    ensure(c_at > c_off && ratio >= 1.5, || format!("{c_at} vs {c_off}, ratio {ratio:.3}"))?;
    Ok(format!("collisions {c_at} at {at} vs {c_off} at {off}, ratio {ratio:.3}"))
}

// ---------- 6 and 7 ----------

fn small_cache_config(rng: &mut ChaCha8Rng) -> NgramConfig {
    let n = rng.random_range(1..=5);
    if n == 1 {
        return NgramConfig::base_only(12, 4).unwrap();
    }
    let k = rng.random_range(1..=3);
    let amp = [Amplification::None, Amplification::ScaleSqrtD, Amplification::LayerNorm][rng.random_range(0..3)];
    NgramConfig::new(Variant::SubtableV2, n, k, 12, (n - 1) * k * 2, 2).unwrap().with_amplification(amp)
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let schedules = 10_000;
    let mut ops_run = 0usize;
    let mut banks = Vec::new();
    for seed in 0..8 {
        let c = small_cache_config(&mut rng);
        banks.push(EmbeddingBank::<f32>::init(&c, seed).unwrap());
    }
    for s in 0..schedules {
        let bank = &banks[s % banks.len()];
        let c = bank.config();
        let mut state = SequenceCacheState::new(c).unwrap();
        let mut memo = EmbeddingMemo::new(rng.random_range(1..=32)).unwrap();
        let mut confirmed: Vec<TokenId> = Vec::new();
        let mut ids_stream = Vec::new();
        let mut emb_stream: Vec<Array1<f32>> = Vec::new();
        let mut marks: Vec<(Checkpoint, usize)> = Vec::new();
        for _ in 0..rng.random_range(1..=40) {
            ops_run += 1;
            match rng.random_range(0..10) {
                0..=3 => {
                    let t = rng.random_range(0..12);
                    let ids = state.append(t).unwrap();
                    emb_stream.push(bank.embed_ids(t, &ids).unwrap());
                    ids_stream.push(ids);
                    confirmed.push(t);
                }
                4 => marks.push((state.snapshot(), confirmed.len())),
                5 | 6 if !marks.is_empty() => {
                    let i = rng.random_range(0..marks.len());
                    let (h, len) = marks[i];
                    state.rollback(h).unwrap();
                    marks.truncate(i);
                    confirmed.truncate(len);
                    ids_stream.truncate(len);
                    emb_stream.truncate(len);
                }
                _ => {
                    let drafts: Vec<TokenId> = (0..rng.random_range(0..5)).map(|_| rng.random_range(0..12)).collect();
                    let accept = rng.random_range(0..=drafts.len());
                    let depth = state.snapshot_depth();
                    let out = draft_verify(&mut state, Some(&mut memo), bank, &drafts, accept, DraftOptions::default())
                        .unwrap();
                    ensure(state.snapshot_depth() == depth, || "draft round leaked snapshots".into())?;
                    for (i, &t) in drafts[..accept].iter().enumerate() {
                        confirmed.push(t);
                        let full = hash_sequence(&confirmed, c).unwrap();
                        let ids = full.last().unwrap().clone();
                        ids_stream.push(ids);
                        emb_stream.push(out.accepted.row(i).to_owned());
                    }
                }
            }
            ensure(state.len() as usize == confirmed.len(), || "length drift".into())?;
        }
        let want_ids = hash_sequence(&confirmed, c).unwrap();
        ensure(want_ids == ids_stream, || format!("schedule {s}: id stream differs"))?;
        if let Some(last) = want_ids.last() {
            ensure(state.current_ids() == last, || format!("schedule {s}: state ids differ"))?;
        }
        let want_emb = bank.embed_sequence(&confirmed).unwrap();
        for (i, e) in emb_stream.iter().enumerate() {
            ensure(want_emb.row(i) == e, || format!("schedule {s}: embedding {i} differs"))?;
        }
    }
    within(start, Duration::from_secs(60))?;
    Ok(format!("{schedules} schedules, {ops_run} operations, bit-identical, {:.2?}", start.elapsed()))
}

fn criterion_7() -> Outcome {
    let c = NgramConfig::new(Variant::SubtableV2, 4, 2, 40, 24, 3).unwrap().with_amplification(Amplification::LayerNorm);
    let mut bank = EmbeddingBank::<f32>::init(&c, 7).unwrap();
    bank.norm_gain.mapv_inplace(|g| g * 1.5);
    let mut compared = 0usize;
    for capacity in [1, 2, 5, 64, 1 << 16] {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let mut with = SequenceCacheState::new(&c).unwrap();
        let mut without = SequenceCacheState::new(&c).unwrap();
        let mut memo = EmbeddingMemo::new(capacity).unwrap();
        for _ in 0..500 {
            let drafts: Vec<TokenId> = (0..rng.random_range(0..7)).map(|_| rng.random_range(0..8)).collect();
            let accept = rng.random_range(0..=drafts.len());
            let a = draft_verify(&mut with, Some(&mut memo), &bank, &drafts, accept, DraftOptions::default()).unwrap();
            let b = draft_verify(&mut without, None, &bank, &drafts, accept, DraftOptions::default()).unwrap();
            ensure(a.accepted == b.accepted && a.draft == b.draft, || format!("capacity {capacity}: memo changed output"))?;
            compared += a.accepted.len() + a.draft.len();
            let ids = with.current_ids().clone();
            let t = rng.random_range(0..8);
            ensure(memo.lookup(t, &ids, &bank).unwrap() == bank.embed_ids(t, &ids).unwrap(), || {
                format!("capacity {capacity}: lookup differs")
            })?;
        }
        ensure(memo.len() <= capacity, || "memo over capacity".into())?;
    }
    // fully memoized: capacity covers every draft token
    let mut state = SequenceCacheState::new(&c).unwrap();
    let mut memo = EmbeddingMemo::new(64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut verify_gathers = 0;
    let mut accepted = 0;
    for _ in 0..200 {
        let drafts: Vec<TokenId> = (0..8).map(|_| rng.random_range(0..40)).collect();
        let accept = rng.random_range(0..=8);
        let out = draft_verify(&mut state, Some(&mut memo), &bank, &drafts, accept, DraftOptions::default()).unwrap();
        verify_gathers += out.verify_counters.gathers;
        accepted += accept;
    }
    ensure(verify_gathers == 0, || format!("verify phase gathered {verify_gathers} rows"))?;
    Ok(format!("{compared} embedding values identical across capacities; 0 verify gathers over {accepted} accepted tokens"))
}

// ---------- 8 and 9 ----------

fn criterion_8() -> Outcome {
    let start = Instant::now();
    // memorization
    let config = ModelConfig::new(2, 64, 4, 256, 64, 64).with_seed(1);
    let corpus = repeated_sequence(65, 64, 1, 7);
    let mut t = Trainer::new(Model::new(&config).unwrap(), TrainConfig::new(2000, 1, 64, 3e-3)).unwrap();
    let mut first_below = None;
    let mut last = f64::NAN;
    for step in 1..=2000 {
        last = t.step(&corpus).map_err(|e| e.to_string())?;
        if last < 0.1 && first_below.is_none() {
            first_below = Some(step);
        }
    }
    ensure(last < 0.1, || format!("memorization final loss {last:.4}"))?;

    // n-gram embedding against a parameter-matched baseline on the 5-gram language
    let language = FiveGramLanguage::new(11);
    let data = language.generate(512, 65, 1);
    let ng = NgramConfig::new(Variant::SubtableV2, 5, 1, 64, 64, 16).unwrap();
    let on = ModelConfig::new(2, 64, 4, 128, 64, 64).with_seed(3).with_ngram(ng);
    let off = parameter_matched_baseline(&on).map_err(|e| e.to_string())?;
    let (p_on, p_off) = (on.param_count().unwrap(), off.param_count().unwrap());
    let gap = (p_on as f64 - p_off as f64).abs() / p_on as f64;
    ensure(gap < 0.01, || format!("parameter gap {gap:.4}"))?;
    let run = |c: &ModelConfig| -> Result<f64, String> {
        let mut t = Trainer::new(Model::new(c).unwrap(), TrainConfig::new(600, 8, 64, 3e-3)).unwrap();
        let losses = t.run(&data, 600).map_err(|e| e.to_string())?;
        Ok(smoothed_final(&losses, 50))
    };
    let (l_on, l_off) = std::thread::scope(|s| {
        let a = s.spawn(|| run(&on));
        let b = s.spawn(|| run(&off));
        (a.join().unwrap(), b.join().unwrap())
    });
    let (l_on, l_off) = (l_on?, l_off?);
    ensure(l_on < l_off, || format!("n-gram run {l_on:.4} did not beat baseline {l_off:.4}"))?;
    within(start, Duration::from_secs(600))?;
    Ok(format!(
        "memorization loss {last:.2e} (< 0.1 from step {}); 5-gram smoothed loss {l_on:.4} with n-gram embedding vs {l_off:.4} without ({p_on} vs {p_off} params); {:.1?}",
        first_below.unwrap_or(0),
        start.elapsed()
    ))
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let language = FiveGramLanguage::new(11);
    let data = language.generate(256, 65, 1);
    let probe: Vec<Vec<TokenId>> = data.sequences[..16].iter().map(|s| s[..64].to_vec()).collect();
    let run = |amp: Amplification| -> Result<f64, String> {
        let ng = NgramConfig::new(Variant::SubtableV2, 3, 2, 64, 64, 8).unwrap().with_amplification(amp);
        let c = ModelConfig::new(2, 64, 4, 128, 64, 64).with_seed(3).with_ngram(ng);
        let mut t = Trainer::new(Model::new(&c).unwrap(), TrainConfig::new(500, 8, 64, 3e-3)).unwrap();
        t.run(&data, 500).map_err(|e| e.to_string())?;
        Ok(norm_diagnostic(&t.model, &probe).map_err(|e| e.to_string())?.first_layer_ratio())
    };
    let (plain, scaled) = std::thread::scope(|s| {
        let a = s.spawn(|| run(Amplification::None));
        let b = s.spawn(|| run(Amplification::ScaleSqrtD));
        (a.join().unwrap(), b.join().unwrap())
    });
    let (plain, scaled) = (plain?, scaled?);
    ensure(scaled < plain, || format!("ratio {scaled:.4} with scaling vs {plain:.4} without"))?;
    within(start, Duration::from_secs(300))?;
    Ok(format!("first-layer ratio at step 500: {plain:.4} unscaled vs {scaled:.4} scaled, {:.1?}", start.elapsed()))
}

// ---------- 10 ----------

fn criterion_10() -> Outcome {
    let (emb, total) = (31_400_000_000u64, 68_500_000_000u64);
    let r = BudgetReport::from_counts(emb, total - emb);
    ensure((r.fraction - 0.458).abs() <= 0.005, || format!("fraction {}", r.fraction))?;
    ensure(!r.over_budget, || "flagged over budget".into())?;
    Ok(format!("fraction {:.4}, over_budget {}", r.fraction, r.over_budget))
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let corpus = if run(4) || run(5) { Some(bundled_corpus()) } else { None };
    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, "hash oracle equivalence", Box::new(criterion_1)),
        (2, "parameter invariance", Box::new(criterion_2)),
        (3, "gradient checks", Box::new(criterion_3)),
        (4, "collision analyzer oracle", Box::new(|| criterion_4(corpus.as_ref().unwrap()))),
        (5, "integer-multiple spike", Box::new(|| criterion_5(corpus.as_ref().unwrap()))),
        (6, "cache equivalence", Box::new(criterion_6)),
        (7, "memo transparency", Box::new(criterion_7)),
        (8, "toy training sanity", Box::new(criterion_8)),
        (9, "amplification effect", Box::new(criterion_9)),
        (10, "budget report", Box::new(criterion_10)),
    ];
    let mut failed = Vec::new();
    for (n, name, f) in &criteria {
        if !run(*n) {
            continue;
        }
        match f() {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Err(why) => {
                println!("criterion {n:>2} FAIL  {name}: {why}");
                failed.push(*n);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
