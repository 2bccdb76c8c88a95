//! Replays a draft/verify schedule three ways (memo on, memo off, plain
//! sequential decode) and reports the cache counters of each.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use ngram_core::cache::{draft_verify, embed_direct, CacheCounters, DraftOptions, EmbeddingMemo, SequenceCacheState};
use ngram_core::{EmbeddingBank, NgramConfig, TokenId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{io_at, CliError, CliResult};
use crate::manifest::RunManifest;
use crate::{print_json, read_json};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub ngram: NgramConfig,
    /// Seeds the bank and the token streams.
    #[serde(default)]
    pub seed: u64,
    /// Tokens to decode per stream.
    pub sequence_lengths: Vec<usize>,
    /// Draft length per round, cycled.
    pub draft_lengths: Vec<usize>,
    /// Fraction of each draft that is accepted, cycled.
    pub accept_rates: Vec<f64>,
    pub memo_capacity: usize,
    /// Draft tokens use base rows only.
    #[serde(default)]
    pub conventional_draft_embedding: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Scenario JSON.
    #[arg(long)]
    scenario: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn invalid(msg: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("invalid scenario: {msg}"))
}

impl Scenario {
    fn validate(&self) -> CliResult<()> {
        self.ngram.validate().map_err(invalid)?;
        if self.memo_capacity == 0 {
            return Err(invalid("memo_capacity must be at least 1"));
        }
        if self.sequence_lengths.iter().any(|&l| l > 0) {
            if self.draft_lengths.is_empty() || self.draft_lengths.contains(&0) {
                return Err(invalid("draft_lengths must be non-empty and positive"));
            }
            if self.accept_rates.is_empty() || self.accept_rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(invalid("accept_rates must be non-empty and within [0, 1]"));
            }
        }
        Ok(())
    }
}

struct Round {
    drafts: Vec<TokenId>,
    accept: usize,
    /// Target token emitted by the verifier after a rejection.
    correction: Option<TokenId>,
}

struct Plan {
    targets: Vec<Vec<TokenId>>,
    rounds: Vec<Vec<Round>>,
}

fn plan(s: &Scenario) -> Plan {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed ^ 0x6265_6e63_6800_0000);
    let base = s.ngram.base_vocab;
    let mut targets = Vec::new();
    let mut rounds = Vec::new();
    for &len in &s.sequence_lengths {
        let target: Vec<TokenId> = (0..len).map(|_| rng.random_range(0..base) as TokenId).collect();
        let mut seq_rounds = Vec::new();
        let mut pos = 0;
        let mut r = 0;
        while pos < len {
            let d = s.draft_lengths[r % s.draft_lengths.len()].min(len - pos);
            let rate = s.accept_rates[r % s.accept_rates.len()];
            let accept = ((rate * d as f64).round() as usize).min(d);
            let drafts = (0..d)
                .map(|i| {
                    let t = target[pos + i];
                    if i < accept {
                        t
                    } else {
                        // any token other than the target
                        ((u64::from(t) + rng.random_range(1..base)) % base) as TokenId
                    }
                })
                .collect();
            let correction = (accept < d).then(|| target[pos + accept]);
            pos += accept + usize::from(correction.is_some());
            seq_rounds.push(Round { drafts, accept, correction });
            r += 1;
        }
        targets.push(target);
        rounds.push(seq_rounds);
    }
    Plan { targets, rounds }
}

#[derive(Default)]
struct RunReport {
    draft: CacheCounters,
    verify: CacheCounters,
    total: CacheCounters,
    rows: Vec<f32>,
    seconds: f64,
}

fn speculative(s: &Scenario, bank: &EmbeddingBank<f32>, plan: &Plan, with_memo: bool) -> CliResult<RunReport> {
    let start = Instant::now();
    let mut memo = if with_memo { Some(EmbeddingMemo::<f32>::new(s.memo_capacity)?) } else { None };
    let options = DraftOptions { conventional_draft_embedding: s.conventional_draft_embedding };
    let mut out = RunReport::default();
    for seq_rounds in &plan.rounds {
        let mut state = SequenceCacheState::new(&s.ngram)?;
        for round in seq_rounds {
            let o = draft_verify(&mut state, memo.as_mut(), bank, &round.drafts, round.accept, options)?;
            out.draft.merge(&o.draft_counters);
            out.verify.merge(&o.verify_counters);
            out.rows.extend(o.accepted.iter().copied());
            if let Some(t) = round.correction {
                let ids = state.append(t)?;
                let mut c = CacheCounters { appends: 1, ..Default::default() };
                let row = match memo.as_mut() {
                    Some(m) => {
                        let before = m.counters();
                        let v = m.lookup(t, &ids, bank)?;
                        let after = m.counters();
                        c.hits = after.hits - before.hits;
                        c.misses = after.misses - before.misses;
                        c.gathers = after.gathers - before.gathers;
                        c.projection_macs = after.projection_macs - before.projection_macs;
                        v
                    }
                    None => embed_direct(bank, t, &ids, &mut c)?,
                };
                out.verify.merge(&c);
                out.rows.extend(row.iter().copied());
            }
        }
    }
    out.total = out.draft;
    out.total.merge(&out.verify);
    out.seconds = start.elapsed().as_secs_f64();
    Ok(out)
}

fn sequential(s: &Scenario, bank: &EmbeddingBank<f32>, plan: &Plan) -> CliResult<RunReport> {
    let start = Instant::now();
    let mut memo = EmbeddingMemo::<f32>::new(s.memo_capacity)?;
    let mut out = RunReport::default();
    for target in &plan.targets {
        let mut state = SequenceCacheState::new(&s.ngram)?;
        for &t in target {
            let ids = state.append(t)?;
            out.rows.extend(memo.lookup(t, &ids, bank)?.iter().copied());
        }
        out.total.merge(&state.counters());
    }
    out.total.merge(&memo.counters());
    out.verify = out.total;
    out.seconds = start.elapsed().as_secs_f64();
    Ok(out)
}

fn checksum(rows: &[f32]) -> String {
    let mut h = Sha256::new();
    for v in rows {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn proxy(c: &CacheCounters, dim: usize) -> u64 {
    c.gathers * dim as u64 + c.projection_macs
}

fn run_json(r: &RunReport, dim: usize) -> Value {
    json!({
        "draft": r.draft.to_json(),
        "verify": r.verify.to_json(),
        "total": r.total.to_json(),
        "latency_proxy": {
            "draft": proxy(&r.draft, dim),
            "verify": proxy(&r.verify, dim),
            "total": proxy(&r.total, dim),
        },
        "checksum": checksum(&r.rows),
    })
}

pub fn run_bench(args: BenchArgs) -> CliResult<()> {
    let scenario: Scenario = read_json(&args.scenario).map_err(invalid)?;
    scenario.validate()?;
    let bank = EmbeddingBank::<f32>::init(&scenario.ngram, scenario.seed)?;
    let plan = plan(&scenario);

    let mut reference = Vec::new();
    for t in &plan.targets {
        reference.extend(bank.embed_sequence(t)?.iter().copied());
    }
    let with_memo = speculative(&scenario, &bank, &plan, true)?;
    let without = speculative(&scenario, &bank, &plan, false)?;
    let seq = sequential(&scenario, &bank, &plan)?;

    let expected = checksum(&reference);
    for (name, r) in [("memo", &with_memo), ("no_memo", &without), ("sequential", &seq)] {
        if r.rows != reference {
            return Err(CliError::Numeric(format!(
                "{name} run produced embeddings that differ from direct computation (checksum {} vs {expected})",
                checksum(&r.rows)
            )));
        }
    }

    let dim = scenario.ngram.dim;
    let manifest = RunManifest::new(
        "bench-cache",
        serde_json::to_value(&scenario).expect("scenario serializes"),
        Some(scenario.seed),
    )
    .with_input(&args.scenario)?;
    let report = json!({
        "tokens": plan.targets.iter().map(Vec::len).sum::<usize>(),
        "rounds": plan.rounds.iter().map(Vec::len).sum::<usize>(),
        "transparent": true,
        "checksum": expected,
        "memo": run_json(&with_memo, dim),
        "no_memo": run_json(&without, dim),
        "sequential": run_json(&seq, dim),
        "wall_clock_seconds": {
            "memo": with_memo.seconds,
            "no_memo": without.seconds,
            "sequential": seq.seconds,
        },
        "manifest": manifest.to_json(),
    });
    match &args.out {
        Some(path) => {
            let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
            std::fs::write(path, text).map_err(io_at(path))?;
        }
        None => print_json(&report)?,
    }
    Ok(())
}
