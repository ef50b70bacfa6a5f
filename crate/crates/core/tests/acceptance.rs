//! Acceptance suite. Each criterion runs in isolation, prints one
//! PASS/FAIL line with its wall time, and any failure makes the process exit
//! non-zero.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qchunker_core::chunkers::{fixed_length, semantic_similarity, sentence_window};
use qchunker_core::clients::http::{HttpConfig, CHAT_PATH};
use qchunker_core::clients::{
    embed_batch, generate_n, score_tokens, SamplingParams, StubEmbedder, TokenScores,
};
use qchunker_core::corpus::Chunk;
use qchunker_core::error::ClientError;
use qchunker_core::metrics::correlation::pearson;
use qchunker_core::metrics::independence::{boundary_li, boundary_lis, mean_li};
use qchunker_core::metrics::rouge::rouge_l_tokens;
use qchunker_core::metrics::{
    centered_gram, chunk_score, lambda_sweep, phi_li, phi_sd, sweep_argmax, EmbeddingMatrix, Grid,
};
use qchunker_core::pipeline::{perplexity_pairs, ChunkOutput};
use qchunker_core::{
    run_pipeline, validate_partition, Backend, Document, PipelineConfig, StubBackend, TokenRule, TokenScorer,
};

const ALPHA: f64 = 1e-3;

type Check = fn() -> Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn main() -> ExitCode {
    let criteria: [(&str, Check, Option<Duration>); 11] = [
        ("phi_sd hand-derived oracle", c1_phi_sd_oracle, Some(Duration::from_secs(1))),
        ("eigenvalue form equals log-determinant", c2_eigen_form, Some(Duration::from_secs(5))),
        ("volume property and duplicate penalty", c3_volume, None),
        ("permutation invariance", c4_permutation, None),
        ("phi_li contract", c5_phi_li, None),
        ("phi_cs linearity in lambda", c6_linearity, None),
        ("lambda sweep recovery", c7_sweep, Some(Duration::from_secs(5))),
        ("pipeline end to end on stub backend", c8_pipeline, Some(Duration::from_secs(30))),
        ("rouge-l and pearson oracles", c9_oracles, None),
        ("partition byte round trip", c10_round_trip, None),
        ("http backend conformance", c11_http, None),
    ];
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into())),
        };
        let elapsed = t0.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(()), Some(l)) if elapsed > *l => Err(format!("took {elapsed:?}, limit {l:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(()) => println!("criterion {}: {name} ... PASS ({elapsed:.2?})", i + 1),
            Err(e) => {
                failed += 1;
                println!("criterion {}: {name} ... FAIL ({elapsed:.2?}): {e}", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn matrix(cols: &[Vec<f64>]) -> EmbeddingMatrix {
    EmbeddingMatrix::from_columns(cols).expect("valid columns")
}

fn regularized(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut s = centered_gram_naive(cols);
    for (i, row) in s.iter_mut().enumerate() {
        row[i] += ALPHA;
    }
    s
}

fn c1_phi_sd_oracle() -> Result<(), String> {
    let (r2, r6) = (2f64.sqrt(), 6f64.sqrt());
    let z1 = vec![1.0 / r2, -1.0 / r2, 0.0];
    let z2 = vec![1.0 / r6, 1.0 / r6, -2.0 / r6];
    let v = phi_sd(&matrix(&[z1.clone(), z2]), ALPHA).map_err(|e| e.to_string())?.phi_sd;
    ensure!((v - 1.001f64.ln()).abs() <= 1e-9, "orthonormal pair gave {v}");
    // Σ = [[1,1],[1,1]]: eigenvalues 2 and 0, shifted by α
    let dup = phi_sd(&matrix(&[z1.clone(), z1]), ALPHA).map_err(|e| e.to_string())?.phi_sd;
    let expected = (2.001f64.ln() + 0.001f64.ln()) / 2.0;
    ensure!((dup - expected).abs() <= 1e-9, "duplicate pair gave {dup}, exact {expected}");
    ensure!((dup - -3.107).abs() <= 1e-3, "duplicate pair gave {dup}");
    Ok(())
}

fn c2_eigen_form() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..200 {
        let d = if trial % 2 == 0 { 8 } else { 64 };
        let k = rng.random_range(2..=12);
        let cols = random_unit_columns(&mut rng, d, k);
        let r = phi_sd(&matrix(&cols), ALPHA).map_err(|e| e.to_string())?;
        let logdet = cholesky_logdet(&regularized(&cols)) / k as f64;
        let eig = r.eigenvalues.iter().map(|l| l.ln()).sum::<f64>() / k as f64;
        ensure!((logdet - eig).abs() <= 1e-8, "trial {trial}: logdet {logdet} vs eigen {eig}");
        ensure!((logdet - r.phi_sd).abs() <= 1e-8, "trial {trial}: logdet {logdet} vs phi_sd {}", r.phi_sd);
    }
    Ok(())
}

/// Zero-mean, mutually orthogonal vectors with the given norms.
fn orthogonal_centered(rng: &mut impl Rng, d: usize, norms: &[f64]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = vec![vec![1.0 / (d as f64).sqrt(); d]];
    let mut out = Vec::new();
    for &n in norms {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= len);
        basis.push(v.clone());
        out.push(v.into_iter().map(|x| x * n).collect());
    }
    out
}

fn c3_volume() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..100 {
        let d = rng.random_range(6..=16);
        let k = rng.random_range(2..=5);
        let norms: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..1.5)).collect();
        let cols = orthogonal_centered(&mut rng, d, &norms);
        let sigma = centered_gram(&matrix(&cols)).map_err(|e| e.to_string())?;
        let rows: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| sigma[(i, j)]).collect()).collect();
        let det = lu_det(&rows);
        let product: f64 = norms.iter().map(|n| n * n).product();
        ensure!((det - product).abs() <= 1e-9, "trial {trial}: det {det} vs {product}");
    }
    for trial in 0..100 {
        let d = if trial % 2 == 0 { 16 } else { 64 };
        let k = rng.random_range(2..=8);
        let mut cols = random_unit_columns(&mut rng, d, k);
        let before = phi_sd(&matrix(&cols), ALPHA).map_err(|e| e.to_string())?.phi_sd;
        // same K: one column is overwritten by a copy of another
        let i = rng.random_range(0..k);
        let j = (i + rng.random_range(1..k)) % k;
        cols[j] = cols[i].clone();
        let after = phi_sd(&matrix(&cols), ALPHA).map_err(|e| e.to_string())?.phi_sd;
        ensure!(after < before, "trial {trial}: duplicate raised phi_sd {before} -> {after}");
    }
    Ok(())
}

fn c4_permutation() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for m in 0..50 {
        let d = [8, 16, 64][m % 3];
        let k = rng.random_range(2..=12);
        let z = matrix(&random_unit_columns(&mut rng, d, k));
        let base = phi_sd(&z, ALPHA).map_err(|e| e.to_string())?.phi_sd;
        let mut order: Vec<usize> = (0..k).collect();
        for p in 0..20 {
            order.shuffle(&mut rng);
            let v = phi_sd(&z.permuted(&order), ALPHA).map_err(|e| e.to_string())?.phi_sd;
            ensure!((v - base).abs() <= 1e-10, "matrix {m} permutation {p}: {v} vs {base}");
        }
    }
    Ok(())
}

/// Scorer whose conditional log-probabilities are a fixed multiple of the
/// unconditional ones (−2 per token), so the LI ratio is `exp(2·(factor − 1))`.
struct Skewed {
    factor: f64,
}

impl TokenScorer for Skewed {
    fn max_context_tokens(&self) -> usize {
        1 << 20
    }
    fn score_tokens(&self, context: &str, target: &str) -> Result<TokenScores, ClientError> {
        let n = target.split_whitespace().count();
        let lp = if context.is_empty() { -2.0 } else { -2.0 * self.factor };
        Ok(TokenScores { logprobs: vec![lp; n], truncated: false })
    }
}

fn chunk(text: &str, i: usize) -> Chunk {
    Chunk { start_sentence: i, end_sentence: i + 1, text: text.into() }
}

fn c5_phi_li() -> Result<(), String> {
    let doc = two_topic();
    let backend = StubBackend::new(7);
    let scorer = backend.scorer_for(&doc);
    let whole = validate_partition(&doc, &[]).map_err(|e| e.to_string())?;
    let k1 = phi_li(scorer.as_ref(), &whole).map_err(|e| e.to_string())?;
    ensure!(k1 == 1.0, "K=1 gave {k1}");

    for (values, mean) in [
        (vec![0.2, 0.4, 0.9], 0.5),
        (vec![1.0], 1.0),
        (vec![0.25, 0.75], 0.5),
        (vec![0.1, 0.2, 0.3, 0.4], 0.25),
    ] {
        let m = mean_li(&values);
        ensure!((m - mean).abs() <= 1e-12, "mean of {values:?} gave {m}");
    }
    for b in [vec![2], vec![3, 9], vec![1, 4, 6, 10]] {
        let p = validate_partition(&doc, &b).map_err(|e| e.to_string())?;
        let lis: Vec<f64> = boundary_lis(scorer.as_ref(), &p).map_err(|e| e.to_string())?.iter().map(|x| x.li).collect();
        let hand = lis.iter().sum::<f64>() / lis.len() as f64;
        let v = phi_li(scorer.as_ref(), &p).map_err(|e| e.to_string())?;
        ensure!((v - hand).abs() <= 1e-12, "{b:?}: phi_li {v} vs mean {hand}");
    }

    let (a, b) = (chunk("alpha beta gamma", 0), chunk("delta epsilon zeta eta", 1));
    for factor in [0.0, 0.01, 0.5, 1.0, 1.5, 40.0] {
        let r = boundary_li(&Skewed { factor }, &a, &b).map_err(|e| e.to_string())?;
        let expected_ratio = (2.0 * factor - 2.0).exp();
        ensure!((r.ratio - expected_ratio).abs() <= 1e-9 * expected_ratio.max(1.0), "factor {factor}: ratio {}", r.ratio);
        ensure!((0.0..=1.0).contains(&r.li), "factor {factor}: li {} outside [0,1]", r.li);
        ensure!((r.li - expected_ratio.min(1.0)).abs() <= 1e-12, "factor {factor}: li {} not clamped", r.li);
    }
    // Cache scorer on text with no shared vocabulary: ratio above 1, clamped.
    let unrelated = Document::new("u", "Quartz glows faintly. Otters swim upstream.").map_err(|e| e.to_string())?;
    let s = backend.scorer_for(&unrelated);
    let p = validate_partition(&unrelated, &[1]).map_err(|e| e.to_string())?;
    let r = boundary_li(s.as_ref(), &p.chunks[0], &p.chunks[1]).map_err(|e| e.to_string())?;
    ensure!(r.ratio > 1.0 && r.li == 1.0, "unrelated context: ratio {} li {}", r.ratio, r.li);

    let aligned = phi_li(scorer.as_ref(), &validate_partition(&doc, &[6]).unwrap()).map_err(|e| e.to_string())?;
    let mid = phi_li(scorer.as_ref(), &validate_partition(&doc, &[3]).unwrap()).map_err(|e| e.to_string())?;
    ensure!(aligned > mid, "topic-aligned {aligned} not above mid-topic {mid}");
    Ok(())
}

fn c6_linearity() -> Result<(), String> {
    let doc = two_topic();
    let backend = StubBackend::new(7);
    let scorer = backend.scorer_for(&doc);
    let embedder = backend.embedder();
    for b in [vec![6], vec![3], vec![2, 5, 9]] {
        let p = validate_partition(&doc, &b).map_err(|e| e.to_string())?;
        let cs = |l: f64| chunk_score(&p, scorer.as_ref(), embedder.as_ref(), l, ALPHA);
        let s0 = cs(0.0).map_err(|e| e.to_string())?;
        let s1 = cs(1.0).map_err(|e| e.to_string())?;
        ensure!(s0.phi_cs == s0.phi_sd, "{b:?}: lambda 0 gave {} vs phi_sd {}", s0.phi_cs, s0.phi_sd);
        ensure!(s1.phi_cs == s1.phi_li, "{b:?}: lambda 1 gave {} vs phi_li {}", s1.phi_cs, s1.phi_li);
        for (lo, hi) in [(0.0, 1.0), (0.1, 0.5), (0.2, 0.9)] {
            let a = cs(lo).map_err(|e| e.to_string())?.phi_cs;
            let c = cs(hi).map_err(|e| e.to_string())?.phi_cs;
            let m = cs((lo + hi) / 2.0).map_err(|e| e.to_string())?.phi_cs;
            ensure!((m - (a + c) / 2.0).abs() <= 1e-12, "{b:?}: midpoint of [{lo},{hi}] off by {}", m - (a + c) / 2.0);
        }
    }
    Ok(())
}

fn c7_sweep() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let grid = Grid::new(0.0, 1.0, 0.01).map_err(|e| e.to_string())?;
    for trial in 0..20 {
        let n = rng.random_range(10..=30);
        let schemes: Vec<(f64, f64)> =
            (0..n).map(|_| (rng.random_range(0.0..1.0), rng.random_range(-4.0..0.0))).collect();
        let downstream: Vec<f64> = schemes.iter().map(|&(li, sd)| 0.3 * li + 0.7 * sd).collect();
        let rows = lambda_sweep(&schemes, &downstream, grid).map_err(|e| e.to_string())?;
        let best = rows[sweep_argmax(&rows).ok_or("no defined row")?].lambda;

        let mut oracle = (f64::NEG_INFINITY, f64::NAN);
        for i in 0..=100 {
            let l = i as f64 / 100.0;
            let cs: Vec<f64> = schemes.iter().map(|&(li, sd)| l * li + (1.0 - l) * sd).collect();
            let r = pearson_sums(&cs, &downstream);
            if r > oracle.0 + 1e-12 {
                oracle = (r, l);
            }
        }
        ensure!((best - 0.3).abs() <= 0.01 + 1e-12, "trial {trial}: argmax at {best}");
        ensure!((best - oracle.1).abs() <= 0.01 + 1e-12, "trial {trial}: sweep {best} vs oracle {}", oracle.1);
    }
    Ok(())
}

fn topic_shift() -> usize {
    let line = std::fs::read_to_string(fixtures().join("two_topic.jsonl")).unwrap();
    let v: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    v["meta"]["topic_shift"].as_u64().unwrap() as usize
}

fn c8_pipeline() -> Result<(), String> {
    let doc = two_topic();
    let backend = StubBackend::new(7);
    let cfg = PipelineConfig { seed: 7, p: 5, ..Default::default() };
    let result = run_pipeline(&doc, &backend, &cfg).map_err(|e| e.to_string())?;

    let selected = result.selected();
    ensure!(validate_partition(&doc, &selected.boundaries).ok().as_ref() == Some(selected), "selected partition invalid");
    ensure!(selected.boundaries == vec![topic_shift()], "selected {:?}", selected.boundaries);

    let scorer = backend.scorer_for(&doc);
    let embedder = backend.embedder();
    let mut best: Option<(usize, f64)> = None;
    for (i, cand) in result.candidates.candidates.iter().enumerate() {
        let s = chunk_score(cand, scorer.as_ref(), embedder.as_ref(), cfg.lambda, cfg.alpha).map_err(|e| e.to_string())?;
        let recorded = result.scores[i].as_ref().ok_or("candidate without score")?;
        ensure!((recorded.phi_cs - s.phi_cs).abs() <= 1e-12, "candidate {i}: {} vs rescored {}", recorded.phi_cs, s.phi_cs);
        if best.is_none_or(|(_, b)| s.phi_cs > b) {
            best = Some((i, s.phi_cs));
        }
    }
    ensure!(best.map(|b| b.0) == Some(result.selected_index), "rescoring picks {best:?}, pipeline {}", result.selected_index);

    let mut completed = 0;
    for out in &result.completed {
        if let ChunkOutput::Completed(c) = out {
            completed += 1;
            ensure!(!c.supplements.is_empty(), "completion without supplements");
            for s in &c.supplements {
                let (a, b) = s.evidence_span.ok_or("supplement without evidence")?;
                ensure!(s.grounded, "supplement not marked grounded");
                ensure!(c.original.disjoint_from(a, b), "evidence [{a},{b}) overlaps its chunk");
                let ev = words(&doc.span_text(a, b));
                let desc = words(&s.description);
                let recall = lcs_table(&ev, &desc) as f64 / desc.len() as f64;
                ensure!(recall >= 0.5, "supplement {:?} recall {recall} in evidence", s.description);
            }
        }
    }
    ensure!(completed > 0, "no chunk was completed");

    for pair in perplexity_pairs(&result, scorer.as_ref()).map_err(|e| e.to_string())? {
        ensure!(pair.completed <= pair.original, "chunk {}: ppl {} -> {}", pair.chunk_index, pair.original, pair.completed);
    }

    let again = run_pipeline(&doc, &backend, &cfg).map_err(|e| e.to_string())?;
    let (x, y) = (serde_json::to_string(&result).unwrap(), serde_json::to_string(&again).unwrap());
    ensure!(x == y, "two runs differ");
    let fresh = run_pipeline(&doc, &StubBackend::new(7), &cfg).map_err(|e| e.to_string())?;
    ensure!(serde_json::to_string(&fresh).unwrap() == x, "fresh backend run differs");
    Ok(())
}

fn c9_oracles() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let alphabet = ["a", "b", "c", "d", "e"];
    let seq = |rng: &mut ChaCha8Rng| -> Vec<String> {
        let n = rng.random_range(1..=14);
        (0..n).map(|_| alphabet[rng.random_range(0..alphabet.len())].to_string()).collect()
    };
    for i in 0..100 {
        let (c, r) = (seq(&mut rng), seq(&mut rng));
        let lcs = lcs_table(&c, &r) as f64;
        let got = rouge_l_tokens(&c, &r);
        let (p, rc) = (lcs / c.len() as f64, lcs / r.len() as f64);
        let f = if lcs == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
        ensure!(
            (got.precision - p).abs() <= 1e-12 && (got.recall - rc).abs() <= 1e-12 && (got.f1 - f).abs() <= 1e-12,
            "rouge instance {i}: {got:?} vs p={p} r={rc} f={f}"
        );
    }
    for i in 0..100 {
        let n = rng.random_range(3..=20);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| rng.random_range(-0.5..0.5) * v + rng.random_range(-1.0..1.0)).collect();
        let got = pearson(&x, &y).map_err(|e| e.to_string())?;
        let want = pearson_sums(&x, &y);
        ensure!((got - want).abs() <= 1e-12, "pearson instance {i}: {got} vs {want}");
    }
    Ok(())
}

fn random_document(rng: &mut ChaCha8Rng, id: usize) -> String {
    const WORDS: [&str; 10] = ["stone", "river", "Mr", "e.g", "light", "3.5", "quiet", "数据", "fast", "end"];
    const ENDS: [&str; 6] = [".", "!", "?", "。", "！", "..."];
    const GAPS: [&str; 5] = [" ", "  ", "\n", "\n\n", "\t "];
    let mut s = String::new();
    if id.is_multiple_of(4) {
        s.push_str(GAPS[rng.random_range(0..GAPS.len())]);
    }
    for _ in 0..rng.random_range(1..=15) {
        for w in 0..rng.random_range(1..=8) {
            if w > 0 {
                s.push(' ');
            }
            s.push_str(WORDS[rng.random_range(0..WORDS.len())]);
        }
        if rng.random_bool(0.9) {
            s.push_str(ENDS[rng.random_range(0..ENDS.len())]);
        }
        s.push_str(GAPS[rng.random_range(0..GAPS.len())]);
    }
    if rng.random_bool(0.5) {
        s.truncate(s.trim_end().len());
    }
    s
}

fn c10_round_trip() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let embedder = StubEmbedder::new(10, 64);
    for i in 0..200 {
        let text = random_document(&mut rng, i);
        let doc = Document::new(format!("r{i}"), text.clone()).map_err(|e| e.to_string())?;
        let target = rng.random_range(1..=120);
        let partitions = [
            fixed_length(&doc, target),
            sentence_window(&doc, target / 4 + 1, TokenRule::CjkChar),
            semantic_similarity(&doc, &embedder, rng.random_range(-0.2..0.9)).map_err(|e| e.to_string())?,
        ];
        for (name, p) in ["fixed", "sentence", "semantic"].iter().zip(&partitions) {
            let joined: String = p.chunks.iter().map(|c| c.text.as_str()).collect();
            ensure!(joined.as_bytes() == text.as_bytes(), "doc {i} {name}: round trip differs");
        }
    }
    Ok(())
}

fn c11_http() -> Result<(), String> {
    let (b, t, _) = replay_backend(http_config());
    t.load_fixture(http_fixtures(), "chat_n2").map_err(|e| e.to_string())?;
    let p = SamplingParams { temperature: 0.7, top_p: 0.8, ..SamplingParams::default().with_n(2) };
    let out = generate_n(&b, "Name one river.", &p).map_err(|e| e.to_string())?;
    ensure!(out == ["The Danube.", "The Mekong."], "chat replies {out:?}");
    let headers = &t.requests()[0].headers;
    ensure!(headers.contains(&("Authorization".into(), "Bearer sk-fixture".into())), "bearer header missing");

    for name in ["chat_outline4", "chat_review_complete", "chat_review_missing", "chat_complete_paraphrase"] {
        let raw = std::fs::read_to_string(http_fixtures().join(format!("{name}.response.json"))).unwrap();
        let v: serde_json::Value = serde_json::from_str(&raw).map_err(|e| format!("{name}: {e}"))?;
        let body = &v["body"];
        let replies = qchunker_core::clients::http::parse_chat_response(body).map_err(|e| format!("{name}: {e}"))?;
        ensure!(!replies.is_empty(), "{name}: no choices");
    }

    t.load_fixture(http_fixtures(), "embeddings").map_err(|e| e.to_string())?;
    let z = embed_batch(&b, &["alpha chunk", "beta chunk"]).map_err(|e| e.to_string())?;
    ensure!(z.column(0) == [1.0, 0.0, 0.0, 0.0], "embedding 0 {:?}", z.column(0));
    ensure!(z.column(1) == [0.0, 0.6, 0.0, 0.8], "embedding 1 {:?}", z.column(1));

    t.load_fixture(http_fixtures(), "completions_echo").map_err(|e| e.to_string())?;
    let s = score_tokens(&b, "The cat", "sat on the mat.").map_err(|e| e.to_string())?;
    ensure!(s.logprobs == [-2.5, -0.75, -0.5, -1.75, -0.25] && !s.truncated, "echo scores {s:?}");

    let (b, t, _) = replay_backend(HttpConfig { max_context_tokens: 4, ..http_config() });
    t.push_reply(
        qchunker_core::clients::http::COMPLETIONS_PATH,
        200,
        serde_json::json!({"choices": [{"logprobs": {
            "tokens": ["five", " six", " x", " y"],
            "text_offset": [0, 4, 8, 10],
            "token_logprobs": [null, -1.0, -1.0, -1.0],
        }}]})
        .to_string(),
    );
    let s = score_tokens(&b, "one two three four five six", "x y").map_err(|e| e.to_string())?;
    ensure!(s.truncated && s.logprobs == [-1.0, -1.0], "truncated scores {s:?}");
    ensure!(t.requests()[0].body["prompt"] == "five six x y", "prompt {}", t.requests()[0].body["prompt"]);

    let (b, t, slept) = replay_backend(http_config());
    t.push_reply(CHAT_PATH, 503, "busy").push_transport_failure(CHAT_PATH, "reset").push_reply(CHAT_PATH, 429, "slow");
    t.load_fixture(http_fixtures(), "chat_n2").map_err(|e| e.to_string())?;
    generate_n(&b, "Name one river.", &p).map_err(|e| e.to_string())?;
    let delays = slept.lock().unwrap().clone();
    ensure!(delays.len() == 3, "{} retry sleeps", delays.len());
    for (attempt, d) in delays.iter().enumerate() {
        ensure!(*d <= Duration::from_millis((100u64 << attempt).min(1_000)), "attempt {attempt} slept {d:?}");
    }
    for _ in 0..5 {
        t.push_reply(CHAT_PATH, 500, "boom");
    }
    match b.post(CHAT_PATH, &serde_json::json!({})) {
        Err(ClientError::RetriesExhausted { attempts: 4, .. }) => {}
        other => return Err(format!("unbounded retry: {other:?}")),
    }

    let (b, t, _) = replay_backend(HttpConfig { api_key: None, ..http_config() });
    t.load_fixture(http_fixtures(), "chat_n2").map_err(|e| e.to_string())?;
    generate_n(&b, "Name one river.", &p).map_err(|e| e.to_string())?;
    ensure!(t.requests()[0].headers.iter().all(|(k, _)| k != "Authorization"), "header sent without key");
    Ok(())
}
