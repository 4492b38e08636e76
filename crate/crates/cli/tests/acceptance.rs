//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero when any fails.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use docrag::benchbuild::{build_benchmark, sample_distractors};
use docrag::corpus::{AnswerType, Corpus, Document, QaSample, RunMode, RunRecord};
use docrag::eval::{anlcs, doc_identified, lcs_len, refusal_rate, token_f1, uda_f1};
use docrag::fusion::{run_visdomrag, ConsistencyVerdict, TEXT_BLOCK_LABEL};
use docrag::ingest::chunk::{split_spans, SEPARATORS};
use docrag::ingest::{ingest_corpus, ChunkerConfig, IngestOptions, RasterRenderer, Store, TextChunk, TextLayerExtractor};
use docrag::llm::{GenError, GenRequest, ImageData, ScriptedProvider, REFUSAL_SENTINEL};
use docrag::pipeline::prompt::IMAGE_NOTE;
use docrag::pipeline::{run_textual, run_visual, Query};
use docrag::retrieval::dense::DenseUnit;
use docrag::retrieval::multivector::PageVectors;
use docrag::retrieval::{
    normalize, page_unit_id, Bm25Index, Bm25Params, DenseIndex, Modality, MultiVectorIndex, ScoredHit,
};
use docrag::run::{run_samples, RunOptions};
use docrag::session::{build_index, mock_for_store, open_engine_with, Backend, Needs, SessionOptions};
use docrag::synth::{write_synthetic, PlantedFact, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use tempfile::TempDir;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Option<Duration>, fn() -> Outcome);
type Script = Box<dyn Fn(&GenRequest) -> Result<String, GenError> + Send + Sync>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        match $cond {
            true => {}
            false => return Err(format!($($msg)+)),
        }
    };
}

const SEED: u64 = 20_240_611;

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("metric oracle suite", Some(Duration::from_secs(10)), metric_oracles),
        ("retrieval equivalence", Some(Duration::from_secs(60)), retrieval_equivalence),
        ("chunker properties", Some(Duration::from_secs(10)), chunker_properties),
        ("pipeline determinism and call counts", None, determinism_and_calls),
        ("fusion fallback", None, fusion_fallback),
        ("distractor sampler", None, distractor_sampler),
        ("refusal protocol", None, refusal_protocol),
        ("needle in a haystack", None, needle_in_haystack),
    ];
    let mut failed = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let outcome = match (outcome, budget) {
            (Ok(_), Some(b)) if elapsed > b => Err(format!("took {elapsed:.2?}, budget {b:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{elapsed:.2?}]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{elapsed:.2?}]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- metrics

fn lcs_memo(a: &[char], b: &[char], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if i == a.len() || j == b.len() {
        return 0;
    }
    if let Some(&v) = memo.get(&(i, j)) {
        return v;
    }
    let v = if a[i] == b[j] {
        1 + lcs_memo(a, b, i + 1, j + 1, memo)
    } else {
        lcs_memo(a, b, i + 1, j, memo).max(lcs_memo(a, b, i, j + 1, memo))
    };
    memo.insert((i, j), v);
    v
}

fn lcs_oracle(a: &str, b: &str) -> usize {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    lcs_memo(&a, &b, 0, 0, &mut HashMap::new())
}

fn tokens_oracle(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in s.split_whitespace() {
        let t: String = raw.chars().filter(|c| !c.is_ascii_punctuation()).flat_map(char::to_lowercase).collect();
        if !t.is_empty() && t != "a" && t != "an" && t != "the" {
            out.push(t);
        }
    }
    out
}

fn f1_oracle(pred: &str, gold: &str) -> f64 {
    let p = tokens_oracle(pred);
    let mut g = tokens_oracle(gold);
    if p.is_empty() || g.is_empty() {
        return if p.is_empty() && g.is_empty() { 1.0 } else { 0.0 };
    }
    let (np, ng) = (p.len() as f64, g.len() as f64);
    let mut common = 0.0;
    for t in &p {
        if let Some(pos) = g.iter().position(|x| x == t) {
            g.remove(pos);
            common += 1.0;
        }
    }
    if common == 0.0 {
        return 0.0;
    }
    let (prec, rec) = (common / np, common / ng);
    2.0 * prec * rec / (prec + rec)
}

const WORDS: &[&str] = &[
    "The", "a", "An", "cat", "Cat,", "dog.", "dog", "3.5", "x-ray", "é", "Über", "the", "run", "runs", "(42)", "yes", "no",
];

fn random_phrase(rng: &mut ChaCha8Rng, max: usize) -> String {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

fn random_string(rng: &mut ChaCha8Rng, alphabet: &[char], max: usize) -> String {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
}

fn metric_oracles() -> Outcome {
    const CASES: usize = 250;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let alphabet: Vec<char> = "abcab é中".chars().collect();

    for case in 0..CASES {
        let (p, g) = (random_phrase(&mut rng, 8), random_phrase(&mut rng, 8));
        let (got, want) = (token_f1(&p, &g), f1_oracle(&p, &g));
        ensure!((got - want).abs() <= 1e-9, "token_f1 case {case}: {p:?} vs {g:?}: {got} != {want}");
    }

    let binary: &[(&str, Option<&str>)] = &[
        ("Yes", Some("yes")),
        ("yes.", Some("yes")),
        ("TRUE", Some("yes")),
        ("correct", Some("yes")),
        ("No", Some("no")),
        ("no!", Some("no")),
        ("False", Some("no")),
        ("incorrect", Some("no")),
        ("maybe", None),
        ("yes indeed", None),
    ];
    for case in 0..CASES {
        if case % 2 == 0 {
            let (gold, gv) = binary[rng.random_range(0..8)];
            let (pred, pv) = binary[rng.random_range(0..binary.len())];
            let want = if pv == gv { 1.0 } else { 0.0 };
            let got = uda_f1(pred, gold, AnswerType::Binary).map_err(|e| e.to_string())?;
            ensure!(got == want, "uda_f1 binary case {case}: {pred:?} vs {gold:?}: {got} != {want}");
        } else {
            let (p, g) = (random_phrase(&mut rng, 6), random_phrase(&mut rng, 6));
            let ty = if rng.random_bool(0.5) { AnswerType::ShortText } else { AnswerType::FreeText };
            let got = uda_f1(&p, &g, ty).map_err(|e| e.to_string())?;
            ensure!(got == f1_oracle(&p, &g), "uda_f1 text case {case}: {p:?} vs {g:?}");
        }
    }

    for case in 0..CASES {
        let (a, b) = (random_string(&mut rng, &alphabet, 14), random_string(&mut rng, &alphabet, 14));
        ensure!(lcs_len(&a, &b) == lcs_oracle(&a, &b), "lcs_len case {case}: {a:?} vs {b:?}");
    }

    for case in 0..CASES {
        let retrieved: Vec<String> = (0..rng.random_range(0..4)).map(|_| random_string(&mut rng, &alphabet, 12)).collect();
        let gold: Vec<String> = (0..rng.random_range(1..4)).map(|_| random_string(&mut rng, &alphabet, 10)).collect();
        let want = if retrieved.is_empty() {
            0.0
        } else {
            gold.iter()
                .map(|g| {
                    let gl = g.chars().count();
                    retrieved
                        .iter()
                        .map(|u| if gl == 0 { 0.0 } else { lcs_oracle(g, u) as f64 / gl as f64 })
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / gold.len() as f64
        };
        let r: Vec<&str> = retrieved.iter().map(String::as_str).collect();
        let g: Vec<&str> = gold.iter().map(String::as_str).collect();
        let got = anlcs(&r, &g);
        ensure!((got - want).abs() <= 1e-9, "anlcs case {case}: {got} != {want}");
    }

    for case in 0..CASES {
        let k = rng.random_range(1..=10);
        let hits: Vec<ScoredHit> = (0..rng.random_range(0..=k))
            .map(|i| ScoredHit {
                unit_id: format!("u{i}"),
                score: 1.0 - i as f64 * 0.01,
                modality: Modality::Text,
                doc_id: format!("d{}", rng.random_range(0..5)),
                rank: i as u32 + 1,
                page_no: None,
            })
            .collect();
        let gold: Vec<String> = (0..5).filter(|_| rng.random_bool(0.3)).map(|d| format!("d{d}")).collect();
        let from_gold = hits.iter().filter(|h| gold.contains(&h.doc_id)).count();
        let want = 2 * from_gold >= k;
        ensure!(doc_identified(&hits, &gold, k) == want, "doc_identified case {case}");
    }
    Ok(format!("{CASES} randomized cases each for token_f1, uda_f1, lcs_len, anlcs, doc_identified"))
}

// -------------------------------------------------------------- retrieval

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        if v.iter().any(|x| *x != 0.0) {
            return v;
        }
    }
}

fn dot64(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += f64::from(a[i]) * f64::from(b[i]);
    }
    s
}

/// Full scan: every unit scored, sorted by score then unit id.
fn oracle_top_k(mut scored: Vec<(String, f64)>, k: usize) -> Vec<(String, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

fn same_ranking(hits: &[ScoredHit], oracle: &[(String, f64)]) -> Result<(), String> {
    ensure!(hits.len() == oracle.len(), "length {} != {}", hits.len(), oracle.len());
    for (i, (h, (id, s))) in hits.iter().zip(oracle).enumerate() {
        ensure!(&h.unit_id == id, "rank {}: {} != {id}", i + 1, h.unit_id);
        ensure!((h.score - s).abs() <= 1e-9, "rank {}: score {} != {s}", i + 1, h.score);
        ensure!(h.rank as usize == i + 1, "rank field {} at position {}", h.rank, i + 1);
    }
    Ok(())
}

fn random_scope(rng: &mut ChaCha8Rng, docs: usize) -> Option<HashSet<String>> {
    rng.random_bool(0.5)
        .then(|| (0..docs).filter(|_| rng.random_bool(0.6)).map(|d| format!("d{d:02}")).collect())
}

fn bm25_oracle(texts: &[Vec<String>], query: &[String], k1: f64, b: f64) -> Vec<f64> {
    let n = texts.len() as f64;
    let avgdl = texts.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let avgdl = if avgdl > 0.0 { avgdl } else { 1.0 };
    texts
        .iter()
        .map(|doc| {
            let mut s = 0.0;
            for t in query {
                let df = texts.iter().filter(|d| d.contains(t)).count() as f64;
                let idf = ((n - df + 0.5) / (df + 0.5)).ln().max(0.0);
                let tf = doc.iter().filter(|w| *w == t).count() as f64;
                s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doc.len() as f64 / avgdl));
            }
            s
        })
        .collect()
}

fn chunk(id: String, doc_id: String, text: String) -> TextChunk {
    TextChunk {
        chunk_id: id,
        doc_id,
        page_span: (1, 1),
        char_span: (0, text.chars().count()),
        text,
    }
}

fn retrieval_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut dense_queries = 0;
    for corpus in 0..100 {
        let dim = rng.random_range(1..=32);
        let docs = rng.random_range(1..=20);
        let n = rng.random_range(1..=1000);
        let mut units: Vec<DenseUnit> = Vec::with_capacity(n);
        for i in 0..n {
            let v = match units.last() {
                Some(prev) if rng.random_bool(0.1) => prev.vector.clone(),
                _ => normalize(&random_vector(&mut rng, dim)).expect("non-zero"),
            };
            units.push(DenseUnit {
                unit_id: format!("d{:02}#c{i:04}", rng.random_range(0..docs)),
                doc_id: String::new(),
                vector: v,
            });
            let doc = units[i].unit_id[..3].to_string();
            units[i].doc_id = doc;
        }
        let index = DenseIndex {
            provider_id: "test".into(),
            dim,
            units,
        };
        for _ in 0..3 {
            let q = random_vector(&mut rng, dim);
            let k = rng.random_range(1..=25);
            let scope = random_scope(&mut rng, docs);
            let qn = dot64(&q, &q).sqrt();
            let scored = index
                .units
                .iter()
                .filter(|u| scope.as_ref().is_none_or(|s| s.contains(&u.doc_id)))
                .map(|u| (u.unit_id.clone(), dot64(&q, &u.vector) / qn))
                .collect();
            let hits = index.search(&q, k, scope.as_ref()).map_err(|e| e.to_string())?;
            same_ranking(&hits, &oracle_top_k(scored, k)).map_err(|e| format!("dense corpus {corpus}: {e}"))?;
            dense_queries += 1;
        }
    }

    for corpus in 0..100 {
        let dim = rng.random_range(1..=32);
        let docs = rng.random_range(1..=20);
        let n = rng.random_range(1..=1000);
        let pages: Vec<PageVectors> = (0..n)
            .map(|i| {
                let doc_id = format!("d{:02}", rng.random_range(0..docs));
                let page_no = i as u32 + 1;
                PageVectors {
                    unit_id: page_unit_id(&doc_id, page_no),
                    doc_id,
                    page_no,
                    vectors: (0..rng.random_range(1..=4)).map(|_| random_vector(&mut rng, dim)).collect(),
                }
            })
            .collect();
        let index = MultiVectorIndex {
            provider_id: "test".into(),
            dim,
            pages,
        };
        let q: Vec<Vec<f32>> = (0..rng.random_range(1..=8)).map(|_| random_vector(&mut rng, dim)).collect();
        let k = rng.random_range(1..=25);
        let scope = random_scope(&mut rng, docs);
        let scored: Vec<(String, f64)> = index
            .pages
            .iter()
            .filter(|p| scope.as_ref().is_none_or(|s| s.contains(&p.doc_id)))
            .map(|p| {
                let mut total = 0.0;
                for qv in &q {
                    let mut best = f64::NEG_INFINITY;
                    for pv in &p.vectors {
                        best = best.max(dot64(qv, pv));
                    }
                    total += best;
                }
                (p.unit_id.clone(), total)
            })
            .collect();
        let hits = index.search(&q, k, scope.as_ref()).map_err(|e| e.to_string())?;
        same_ranking(&hits, &oracle_top_k(scored, k)).map_err(|e| format!("multivector corpus {corpus}: {e}"))?;
        for h in &hits {
            ensure!(h.page_no.is_some() && h.modality == Modality::Visual, "visual hit lacks a page");
        }
    }

    let mut bm25_scores = 0;
    for corpus in 0..50 {
        let vocab: Vec<String> = (0..rng.random_range(3..=60)).map(|i| format!("w{i}")).collect();
        let docs = rng.random_range(1..=8);
        let n = rng.random_range(1..=200);
        let texts: Vec<Vec<String>> = (0..n)
            .map(|_| {
                (0..rng.random_range(0..=40))
                    .map(|_| {
                        // skewed toward the first words so some terms are common
                        let r: f64 = rng.random();
                        vocab[((r * r) * vocab.len() as f64) as usize].clone()
                    })
                    .collect()
            })
            .collect();
        let doc_of: Vec<String> = (0..n).map(|_| format!("d{:02}", rng.random_range(0..docs))).collect();
        let chunks: Vec<TextChunk> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| chunk(format!("{}#c{i:04}", doc_of[i]), doc_of[i].clone(), t.join(" ")))
            .collect();
        let params = Bm25Params::default();
        let index = Bm25Index::build(&chunks, params).map_err(|e| e.to_string())?;
        for _ in 0..4 {
            let query: Vec<String> = (0..rng.random_range(1..=6)).map(|_| vocab[rng.random_range(0..vocab.len())].clone()).collect();
            let scope = random_scope(&mut rng, docs).filter(|s| doc_of.iter().any(|d| s.contains(d)));
            let (idx, kept): (Bm25Index, Vec<usize>) = match &scope {
                Some(s) => (index.restrict(s), (0..n).filter(|&i| s.contains(&doc_of[i])).collect()),
                None => (index.clone(), (0..n).collect()),
            };
            let sub: Vec<Vec<String>> = kept.iter().map(|&i| texts[i].clone()).collect();
            let want = bm25_oracle(&sub, &query, params.k1, params.b);
            let got: HashMap<usize, f64> = idx.scores(&query.join(" ")).into_iter().collect();
            for (u, w) in want.iter().enumerate() {
                let g = got.get(&u).copied().unwrap_or(0.0);
                ensure!((g - w).abs() <= 1e-9, "bm25 corpus {corpus} unit {u}: {g} != {w}");
                bm25_scores += 1;
            }
        }
    }
    Ok(format!(
        "100 dense corpora ({dense_queries} queries), 100 multivector corpora, {bm25_scores} bm25 scores on 50 corpora"
    ))
}

// ---------------------------------------------------------------- chunker

fn random_text(rng: &mut ChaCha8Rng, kind: usize) -> String {
    match kind {
        0 => String::new(),
        1 => {
            let alphabet: Vec<char> = "abcdefgxyzé中".chars().collect();
            random_string(rng, &alphabet, 12_000)
        }
        _ => {
            let target = if kind == 2 { rng.random_range(0..3000) } else { rng.random_range(0..15_000) };
            let mut s = String::new();
            while s.chars().count() < target {
                let len = rng.random_range(1..12);
                s.extend((0..len).map(|_| ['a', 'b', 'é', 'q', 'z'][rng.random_range(0..5)]));
                s.push_str(match rng.random_range(0..100) {
                    0..=1 => "\n\n",
                    2..=4 => "\n",
                    5..=10 => ". ",
                    11..=12 => "",
                    _ => " ",
                });
            }
            s
        }
    }
}

fn chunker_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let cfg = ChunkerConfig::default();
    let (size, target) = (cfg.chunk_size, cfg.overlap_target());
    ensure!(size == 3000 && target == 300, "configured {size}/{target}");
    let separators: Vec<Vec<char>> = SEPARATORS.iter().map(|s| s.chars().collect()).collect();
    let mut chunks_seen = 0;
    for case in 0..1000 {
        let kind = case % 4;
        let text = random_text(&mut rng, kind);
        let chars: Vec<char> = text.chars().collect();
        let spans = split_spans(&text, &cfg).map_err(|e| e.to_string())?;
        chunks_seen += spans.len();
        if chars.is_empty() {
            ensure!(spans.is_empty(), "case {case}: empty text gave chunks");
            continue;
        }
        ensure!(spans[0].0 == 0 && spans.last().unwrap().1 == chars.len(), "case {case}: spans do not cover the text");
        let mut rebuilt: String = chars[spans[0].0..spans[0].1].iter().collect();
        for (i, &(s, e)) in spans.iter().enumerate() {
            ensure!(e > s && e - s <= size, "case {case}: chunk {i} has {} chars", e - s);
            let last = i + 1 == spans.len();
            if !last && e - s < size {
                let ends_on_separator = separators.iter().any(|sep| chars[..e].ends_with(sep));
                ensure!(ends_on_separator, "case {case}: short chunk {i} does not end on a separator");
            }
            if kind == 1 && !last {
                ensure!(e - s == size, "case {case}: separator-free chunk {i} has {} chars", e - s);
            }
            if let Some(&(ns, ne)) = spans.get(i + 1) {
                ensure!(ns > s && ns < e, "case {case}: chunk {} does not overlap chunk {i}", i + 1);
                let overlap = e - ns;
                let expected = (e - target..e).find(|&p| matches!(chars[p - 1], ' ' | '\n')).map_or(target, |p| e - p);
                ensure!(overlap == expected, "case {case}: overlap {overlap} != {expected} after chunk {i}");
                if kind == 1 {
                    ensure!(overlap == target, "case {case}: separator-free overlap {overlap}");
                }
                rebuilt.extend(&chars[e..ne]);
            }
        }
        ensure!(rebuilt == text, "case {case}: reconstruction differs");
    }
    Ok(format!("1000 texts, {chunks_seen} chunks: reconstruction, <= {size} chars, overlap <= {target} snapped to word starts"))
}

// ---------------------------------------------------------------- fixtures

struct Fixture {
    _dir: TempDir,
    store: Store,
    facts: Vec<PlantedFact>,
}

fn fixture(documents: usize, samples: usize) -> Result<Fixture, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = SynthConfig {
        documents,
        samples,
        ..SynthConfig::default()
    };
    let synth = write_synthetic(&dir.path().join("src"), &cfg).map_err(|e| e.to_string())?;
    let store = Store::new(dir.path().join("store"));
    ingest_corpus(&synth.manifest, &store, &TextLayerExtractor, &RasterRenderer::default(), &IngestOptions::default())
        .map_err(|e| e.to_string())?;
    let opts = SessionOptions::default();
    let text = opts.text_embedder.connect(opts.timeout, opts.retry).map_err(|e| e.to_string())?;
    let pages = opts.page_embedder.connect(opts.timeout, opts.retry).map_err(|e| e.to_string())?;
    build_index(&store, Backend::Bm25, None).map_err(|e| e.to_string())?;
    build_index(&store, Backend::Dense, Some(&text)).map_err(|e| e.to_string())?;
    build_index(&store, Backend::Multivector, Some(&pages)).map_err(|e| e.to_string())?;
    Ok(Fixture {
        _dir: dir,
        store,
        facts: synth.facts,
    })
}

const ALL: Needs = Needs { text: true, visual: true };

fn unimodal_reply(answer: &str) -> String {
    format!("EVIDENCE: quoted\nREASONING: read it\nANSWER: {answer}")
}

fn fusion_reply(answer: &str) -> String {
    format!("CONSISTENCY: consistent\nREASONING: both agree\nANSWER: {answer}")
}

fn is_fusion(r: &GenRequest) -> bool {
    r.prompt_text().contains(TEXT_BLOCK_LABEL)
}

fn is_visual(r: &GenRequest) -> bool {
    !r.images.is_empty() || r.prompt_text().contains(IMAGE_NOTE)
}

// ---------------------------------------------------- determinism / calls

fn docrag(args: &[&str], cwd: &Path) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_docrag"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    let stderr = String::from_utf8_lossy(&out.stderr).to_string();
    ensure!(out.status.success(), "docrag {}: {}", args.join(" "), stderr.trim());
    Ok(stderr)
}

fn determinism_and_calls() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    docrag(&["synth", "src", "--documents", "10", "--samples", "10"], d)?;
    docrag(&["ingest", "src/manifest.jsonl", "--out", "store"], d)?;
    for b in ["bm25", "dense", "multivector"] {
        docrag(&["index", "store", "--backend", b], d)?;
    }
    let first = docrag(&["run", "store", "--mode", "visdomrag", "--out", "a.jsonl", "--replay-cache", "cache"], d)?;
    let replayed = docrag(
        &["run", "store", "--mode", "visdomrag", "--out", "b.jsonl", "--replay-cache", "cache", "--cache-mode", "replay"],
        d,
    )?;
    docrag(&["run", "store", "--mode", "visdomrag", "--out", "c.jsonl", "--replay-cache", "fresh", "--workers", "1"], d)?;
    let read = |f: &str| fs::read(d.join(f)).map_err(|e| e.to_string());
    let a = read("a.jsonl")?;
    ensure!(a == read("b.jsonl")?, "replayed run differs from the recorded one");
    ensure!(a == read("c.jsonl")?, "fresh-cache run differs");
    ensure!(first.contains("30 generation calls (30 reached"), "recording run: {}", first.trim());
    ensure!(replayed.contains("(0 reached the provider)"), "replay run: {}", replayed.trim());
    let records: Vec<RunRecord> = String::from_utf8_lossy(&a)
        .lines()
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    ensure!(records.len() == 10, "{} records", records.len());
    for r in &records {
        ensure!(r.error.is_none() && !r.degraded && r.usage.llm_calls == 3, "{}: {:?}", r.sample_id, r.usage);
    }

    let store = Store::new(d.join("store"));
    let mut counts = Vec::new();
    for (mode, per_sample) in [
        (RunMode::Visdomrag, 3),
        (RunMode::EarlyFusion, 1),
        (RunMode::TextRag, 1),
        (RunMode::VisualRag, 1),
        (RunMode::LongContext, 1),
    ] {
        let scripted = Arc::new(ScriptedProvider::new(|r, _| {
            Ok(if is_fusion(r) { fusion_reply("x") } else { unimodal_reply("x") })
        }));
        let engine = open_engine_with(&store, &SessionOptions::default(), ALL, scripted.clone()).map_err(|e| e.to_string())?;
        let records = run_samples(&engine, engine.corpus.samples(), mode, &RunOptions::default()).map_err(|e| e.to_string())?;
        ensure!(records.iter().all(|r| r.error.is_none()), "{mode:?} produced errors");
        ensure!(
            scripted.call_count() == 10 * per_sample,
            "{mode:?}: {} calls for 10 samples",
            scripted.call_count()
        );
        counts.push(format!("{}={}", mode.as_str(), scripted.call_count()));
    }
    Ok(format!("3 CLI runs byte-identical; calls over 10 samples: {}", counts.join(" ")))
}

// ------------------------------------------------------------- fallback

fn fusion_fallback() -> Outcome {
    let f = fixture(3, 1)?;
    let sample = f.store.load_corpus().map_err(|e| e.to_string())?.samples()[0].clone();
    let query = Query::from_sample(&sample);
    let injected = || GenError::Content("injected fault".into());
    let run = |script: Script| {
        let provider = Arc::new(ScriptedProvider::new(move |r, _| script(r)));
        let engine = open_engine_with(&f.store, &SessionOptions::default(), ALL, provider.clone()).map_err(|e| e.to_string())?;
        let result = run_visdomrag(&engine, &query).map_err(|e| format!("error escaped: {e}"))?;
        Ok::<_, String>((result, provider.call_count()))
    };

    let (r, calls) = run(Box::new(move |r| {
        if is_visual(r) { Ok(unimodal_reply("VIS")) } else { Err(injected()) }
    }))?;
    ensure!(r.verdict == ConsistencyVerdict::SingleModality && r.degraded, "text fails: {:?}", r.verdict);
    ensure!(r.final_answer == "VIS" && r.contributing == [Modality::Visual] && calls == 2, "text fails: {} via {calls} calls", r.final_answer);

    let (r, calls) = run(Box::new(move |r| {
        if is_visual(r) { Err(injected()) } else { Ok(unimodal_reply("TXT")) }
    }))?;
    ensure!(r.verdict == ConsistencyVerdict::SingleModality && r.degraded, "visual fails: {:?}", r.verdict);
    ensure!(r.final_answer == "TXT" && r.contributing == [Modality::Text] && calls == 2, "visual fails: {} via {calls} calls", r.final_answer);

    let (r, calls) = run(Box::new(move |r| {
        if is_fusion(r) {
            Err(injected())
        } else if is_visual(r) {
            Ok(unimodal_reply("VIS"))
        } else {
            Ok(unimodal_reply("TXT"))
        }
    }))?;
    let text_top = r.text.as_ref().and_then(|o| o.top_score()).unwrap_or(f64::NEG_INFINITY);
    let visual_top = r.visual.as_ref().and_then(|o| o.top_score()).unwrap_or(f64::NEG_INFINITY);
    let expected = if text_top >= visual_top { "TXT" } else { "VIS" };
    ensure!(r.verdict == ConsistencyVerdict::SingleModality && r.degraded && calls == 3, "fusion fails: {:?}", r.verdict);
    ensure!(r.final_answer == expected, "fusion fails: kept {} expected {expected}", r.final_answer);
    ensure!(r.summary().fallback, "fusion fails: fallback flag unset");

    let (r, calls) = run(Box::new(move |r| {
        Ok(if is_fusion(r) { fusion_reply("something") } else { unimodal_reply(REFUSAL_SENTINEL) })
    }))?;
    ensure!(r.refused && r.final_answer == REFUSAL_SENTINEL && calls == 3, "both refuse: {:?} {}", r.refused, r.final_answer);
    ensure!(r.into_record("s", RunMode::Visdomrag).check().is_ok(), "both refuse: record invariant");

    let provider = Arc::new(ScriptedProvider::new(move |_, _| Err(injected())));
    let engine = open_engine_with(&f.store, &SessionOptions::default(), ALL, provider).map_err(|e| e.to_string())?;
    let records = run_samples(&engine, std::slice::from_ref(&sample), RunMode::Visdomrag, &RunOptions::default())
        .map_err(|e| e.to_string())?;
    ensure!(records[0].error.is_some() && records[0].degraded, "all fail: no error record");
    Ok("text fails, visual fails, fusion fails, both refuse, all fail: contracted outcomes".into())
}

// ------------------------------------------------------------ distractors

fn distractor_sampler() -> Outcome {
    let pool: Vec<Document> = (0..40)
        .map(|i| Document {
            doc_id: format!("p{i:02}"),
            source_path: format!("p{i:02}.pdf"),
            page_count: 20,
            title: None,
            pages: vec![],
        })
        .collect();
    let mut counts = [0usize; 9];
    for i in 0..10_000 {
        let sample = QaSample {
            sample_id: format!("s{i:05}"),
            question: "q".into(),
            doc_ids: vec!["p00".into()],
            gold_doc_ids: vec!["p00".into()],
            gold_answer: "a".into(),
            gold_evidence: vec![],
            answer_type: AnswerType::FreeText,
        };
        let out = sample_distractors(&sample, &pool, 20.0, SEED).map_err(|e| e.to_string())?;
        let l = out.doc_ids.len() - 1;
        ensure!((2..=10).contains(&l), "sample {i}: l = {l}");
        let unique: HashSet<&String> = out.doc_ids.iter().collect();
        ensure!(unique.len() == out.doc_ids.len(), "sample {i}: repeated document");
        counts[l - 2] += 1;
    }
    let expected = 10_000.0 / 9.0;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(8.0).map_err(|e| e.to_string())?.cdf(stat);
    ensure!(p > 0.01, "chi-square {stat:.2}, p = {p:.4}, counts {counts:?}");

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let synth = write_synthetic(
        &dir.path().join("src"),
        &SynthConfig {
            documents: 40,
            samples: 8,
            ..SynthConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let (docs, samples) = synth.corpus.into_parts();
    let samples = samples
        .into_iter()
        .map(|mut s| {
            s.doc_ids = s.gold_doc_ids.clone();
            s
        })
        .collect();
    let pool_corpus = Corpus::new(docs, samples);
    let a = build_benchmark(&pool_corpus, 20.0, SEED).map_err(|e| e.to_string())?;
    let b = build_benchmark(&pool_corpus, 20.0, SEED).map_err(|e| e.to_string())?;
    ensure!(a.to_manifest_string() == b.to_manifest_string(), "library rebuild differs");
    pool_corpus.save(&dir.path().join("src/pool.jsonl")).map_err(|e| e.to_string())?;
    for out in ["one.jsonl", "two.jsonl"] {
        docrag(&["bench-build", "src/pool.jsonl", "--p-avg", "20", "--seed", "7", "--out", out], dir.path())?;
    }
    let read = |f: &str| fs::read(dir.path().join(f)).map_err(|e| e.to_string());
    ensure!(read("one.jsonl")? == read("two.jsonl")?, "CLI rebuild differs");
    Ok(format!("l in [2, 10] over 10000 draws, counts {counts:?}, chi-square {stat:.2} (p = {p:.3}); rebuilds byte-identical"))
}

// --------------------------------------------------------------- refusal

fn refusal_protocol() -> Outcome {
    let f = fixture(20, 20)?;
    let corpus = f.store.load_corpus().map_err(|e| e.to_string())?;
    let mut page_text: HashMap<String, String> = HashMap::new();
    for page in corpus.documents().iter().flat_map(|d| d.pages.iter()) {
        let r = page.image_ref.as_deref().ok_or("page was not rendered")?;
        let bytes = fs::read(f.store.resolve(r)).map_err(|e| e.to_string())?;
        page_text.insert(ImageData::from_bytes(r, bytes).sha256, page.text.clone());
    }
    let facts: Vec<(String, String)> = corpus
        .samples()
        .iter()
        .map(|s| (s.question.clone(), s.gold_answer.clone()))
        .collect();
    let page_text = Arc::new(page_text);
    let make_provider = || {
        let (facts, page_text) = (facts.clone(), page_text.clone());
        Arc::new(ScriptedProvider::new(move |r: &GenRequest, images: &[ImageData]| {
            let prompt = r.prompt_text();
            let code = facts.iter().find(|(q, _)| prompt.contains(q.as_str())).map(|(_, c)| c.as_str()).unwrap_or("?");
            let seen = prompt.contains(code)
                || images.iter().any(|i| page_text.get(&i.sha256).is_some_and(|t| t.contains(code)));
            let answer = if seen { code } else { REFUSAL_SENTINEL };
            Ok(if is_fusion(r) { fusion_reply(answer) } else { unimodal_reply(answer) })
        }))
    };
    let mut opts = SessionOptions::default();
    opts.pipeline.allow_refusal = true;
    let mut lines = Vec::new();
    for mode in [RunMode::TextRag, RunMode::VisualRag, RunMode::Visdomrag] {
        let mut rates = Vec::new();
        for remove_oracle in [false, true] {
            let engine = open_engine_with(&f.store, &opts, ALL, make_provider()).map_err(|e| e.to_string())?;
            let run = RunOptions {
                remove_oracle,
                ..RunOptions::default()
            };
            let records = run_samples(&engine, engine.corpus.samples(), mode, &run).map_err(|e| e.to_string())?;
            ensure!(records.iter().all(|r| r.error.is_none()), "{mode:?}: errors in run");
            rates.push(refusal_rate(&records));
        }
        ensure!(rates[0] <= 0.1 && rates[1] >= 0.9, "{}: default {:.2}, oracle removed {:.2}", mode.as_str(), rates[0], rates[1]);
        lines.push(format!("{} {:.2}/{:.2}", mode.as_str(), rates[0], rates[1]));
    }
    Ok(format!("refusal rate default/oracle-removed: {}", lines.join(", ")))
}

// ---------------------------------------------------------------- needle

fn needle_in_haystack() -> Outcome {
    let f = fixture(20, 20)?;
    let mock = Arc::new(mock_for_store(&f.store).map_err(|e| e.to_string())?);
    let engine = open_engine_with(&f.store, &SessionOptions::default(), ALL, mock).map_err(|e| e.to_string())?;
    let (mut text_top, mut visual_top, mut text_id, mut visual_id) = (0, 0, 0, 0);
    let samples = engine.corpus.samples();
    ensure!(samples.len() == 20 && f.facts.len() == 20, "fixture has {} samples", samples.len());
    for (sample, fact) in samples.iter().zip(&f.facts) {
        ensure!(sample.sample_id == fact.sample_id, "fact order");
        let q = Query::from_sample(sample);
        let text = run_textual(&engine, &q);
        let visual = run_visual(&engine, &q);
        if text.hits.first().and_then(|h| engine.unit_text(h)).is_some_and(|t| t.contains(&fact.sentence)) {
            text_top += 1;
        }
        if visual.hits.first().is_some_and(|h| h.doc_id == fact.doc_id && h.page_no == Some(fact.page_no)) {
            visual_top += 1;
        }
        let top5 = |hits: &[ScoredHit]| hits[..hits.len().min(5)].to_vec();
        text_id += usize::from(doc_identified(&top5(&text.hits), &sample.gold_doc_ids, 5));
        visual_id += usize::from(doc_identified(&top5(&visual.hits), &sample.gold_doc_ids, 5));
    }
    let n = samples.len();
    ensure!(text_top == n && visual_top == n, "planted unit at rank 1: text {text_top}/{n}, visual {visual_top}/{n}");
    let need = (0.95 * n as f64).ceil() as usize;
    ensure!(text_id >= need && visual_id >= need, "doc_identified@5: text {text_id}/{n}, visual {visual_id}/{n}");
    Ok(format!("rank 1: text {text_top}/{n}, visual {visual_top}/{n}; doc_identified@5: text {text_id}/{n}, visual {visual_id}/{n}"))
}
