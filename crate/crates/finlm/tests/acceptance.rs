//! Acceptance suite. Runs without the libtest harness so that each criterion
//! prints a single PASS/FAIL line. Pass criterion numbers to run a subset:
//! `cargo test -p finlm --test acceptance -- 4 7`.

use std::collections::{BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use finlm::formats::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, write_loss_log};
use finlm_core::corpus::{extract_sections, CorpusError, Document, FormType, RawFiling, SectionPolicy, Source};
use finlm_core::finetune::*;
use finlm_core::model::*;
use finlm_core::tokenizer::{build_instances, split_words, wordpiece_encode, MaskPolicy, NspLabel};
use finlm_core::vocab::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOY: &str = include_str!("../../core/tests/fixtures/toy_corpus.txt");
const VARIANT_TABLE_GOLDEN: &str = include_str!("fixtures/variant_table_golden.txt");

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn toy_docs() -> Vec<Document> {
    TOY.lines()
        .enumerate()
        .map(|(i, l)| Document::full_text(format!("toy-{i}"), Source::AnalystReports, l).unwrap())
        .collect()
}

fn toy_vocab(docs: &[Document]) -> SubwordVocab {
    train_vocab_from_documents(docs, &VocabTrainConfig::new(200, Casing::Uncased)).unwrap()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

const LABELS: [Sentiment; 3] = [Sentiment::Positive, Sentiment::Neutral, Sentiment::Negative];

// 1

fn gradient_check() -> Outcome {
    let t = Instant::now();
    let r = grad_check(&GradCheckConfig::default()).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    check(
        r.passed && r.max_rel_error <= 1e-2 && r.median_rel_error <= 1e-4 && secs < 60.0,
        format!("max {:.2e} median {:.2e} zero violations {} in {secs:.1}s", r.max_rel_error, r.median_rel_error, r.zero_violations),
    )
}

// 2

fn init_losses() -> Outcome {
    let docs = toy_docs();
    let vocab = toy_vocab(&docs);
    let model = Model::<f32>::init(ModelConfig::toy(vocab.len())).unwrap();
    let mut insts = Vec::new();
    for seed in 0..4 {
        insts.extend(build_instances(&docs, &vocab, 128, &MaskPolicy::with_seed(seed), seed).unwrap());
    }
    insts.truncate(64);
    if insts.len() != 64 {
        return Err(format!("only {} instances", insts.len()));
    }
    let refs: Vec<_> = insts.iter().collect();
    let losses = model.pretrain_forward(&PretrainBatch::from_instances(&refs), None).unwrap().losses;
    // Cross-entropy of a uniform distribution over k classes is ln k.
    let uniform = |k: usize| -(1.0 / k as f64).ln();
    let (nsp0, mlm0) = (uniform(2), uniform(vocab.len()));
    check(
        (losses.nsp - nsp0).abs() <= 0.15 && (losses.mlm - mlm0).abs() <= 0.1 * mlm0,
        format!("nsp {:.4} vs {nsp0:.4}, mlm {:.4} vs {mlm0:.4}", losses.nsp, losses.mlm),
    )
}

// 3

fn overfit() -> Outcome {
    let t = Instant::now();
    let docs = toy_docs();
    let sentences: usize = docs.iter().map(|d| d.sentence_count()).sum();
    if sentences != 32 {
        return Err(format!("toy corpus has {sentences} sentences"));
    }
    let vocab = toy_vocab(&docs);
    let sched = TrainSchedule {
        phase1: PhasePlan { max_len: 128, steps: 2000 },
        ..TrainSchedule::default()
    };
    let policy = MaskPolicy::with_seed(3);
    let opts = PretrainOptions { peak_lr: 1e-3, ..Default::default() };
    let mut tr = Pretrainer::from_scratch(&docs, &vocab, ModelConfig::toy(vocab.len()), sched, &policy, opts).unwrap();
    let mut log = Vec::new();
    let mut reached = None;
    while !tr.is_done() {
        log.extend(tr.run_until(tr.global_step() + 100).unwrap());
        let acc = mlm_accuracy(tr.model(), tr.instances(0), 16).unwrap();
        if acc >= 0.9 && reached.is_none() {
            reached = Some((tr.global_step(), acc));
        }
        if reached.is_some() && tr.global_step() >= 300 {
            break;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let losses: Vec<f64> = log.iter().map(|r| r.mlm_loss).collect();
    let first = mean(&losses[..10]);
    let at300 = mean(&losses[290..300]);
    let detail = match reached {
        Some((step, acc)) => format!("accuracy {acc:.3} at step {step}"),
        None => "accuracy never reached 0.9".to_string(),
    };
    check(
        reached.is_some() && at300 < 0.5 * first && secs < 600.0,
        format!("{detail}; loss {first:.3} -> {at300:.3} by step 300; {secs:.0}s"),
    )
}

// 4

fn reference_segmentation(word: &str, pieces: &HashSet<String>, max_chars: usize) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let unk = vec![SPECIAL_PIECES[UNK_ID as usize].to_string()];
    if chars.len() > max_chars {
        return unk;
    }
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let mut best = None;
        for j in i + 1..=chars.len() {
            let body: String = chars[i..j].iter().collect();
            let cand = if i == 0 { body } else { format!("##{body}") };
            if pieces.contains(&cand) {
                best = Some((j, cand));
            }
        }
        match best {
            Some((j, p)) => {
                out.push(p);
                i = j;
            }
            None => return unk,
        }
    }
    out
}

fn tokenizer_oracle() -> Outcome {
    const ALPHABET: [char; 8] = ['a', 'b', 'c', 'd', 'é', 'ß', '€', '日'];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rand_str = |rng: &mut ChaCha8Rng, n: usize| -> String { (0..n).map(|_| *ALPHABET.choose(rng).unwrap()).collect() };
    let mut mismatches = 0;
    let mut unks = 0;
    let cases = 10_000;
    for case in 0..cases {
        let mut set = BTreeSet::new();
        for &c in &ALPHABET {
            if rng.random_bool(0.95) {
                set.insert(c.to_string());
            }
            if rng.random_bool(0.95) {
                set.insert(format!("##{c}"));
            }
        }
        for _ in 0..rng.random_range(0..25) {
            let len = rng.random_range(2..=5);
            let body = rand_str(&mut rng, len);
            set.insert(if rng.random_bool(0.5) { format!("##{body}") } else { body });
        }
        let vocab = SubwordVocab::from_lines(set.iter().map(String::as_str), Casing::Cased).unwrap();
        let pieces: HashSet<String> = set.into_iter().collect();
        let len = if rng.random_bool(0.02) { rng.random_range(98..=103) } else { rng.random_range(1..=12) };
        let word = rand_str(&mut rng, len);
        let got: Vec<String> = wordpiece_encode(&word, &vocab)
            .into_iter()
            .map(|id| vocab.piece(id).unwrap().to_string())
            .collect();
        let want = reference_segmentation(&word, &pieces, DEFAULT_MAX_WORD_LENGTH);
        if want == ["[UNK]"] {
            unks += 1;
        }
        if got != want {
            if mismatches < 3 {
                eprintln!("  case {case}: {word:?} -> {got:?}, reference {want:?}");
            }
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("{mismatches} mismatches in {cases} cases ({unks} unknown)"))
}

// 5

const WORDS: &[&str] = &[
    "revenue", "margin", "guidance", "quarter", "growth", "decline", "earnings", "dividend", "capital", "liquidity",
    "credit", "loan", "deposit", "interest", "rate", "inflation", "demand", "supply", "pricing", "volume",
    "segment", "region", "outlook", "forecast", "analyst", "investor", "shares", "buyback", "debt", "equity",
    "cash", "flow", "expense", "cost", "savings", "headcount", "software", "hardware", "services", "retail",
    "the", "a", "of", "in", "and", "was", "were", "higher", "lower", "stable",
];

fn synthetic_docs(rng: &mut ChaCha8Rng, n: usize, min_sent: usize, max_sent: usize) -> Vec<Document> {
    (0..n)
        .map(|d| {
            let k = rng.random_range(min_sent..=max_sent);
            let text: Vec<String> = (0..k)
                .map(|_| {
                    let len = rng.random_range(5..=15);
                    let w: Vec<&str> = (0..len).map(|_| *WORDS.choose(rng).unwrap()).collect();
                    capitalize(&w.join(" ")) + "."
                })
                .collect();
            Document::full_text(format!("syn-{d}"), Source::CorporateReports, text.join(" ")).unwrap()
        })
        .collect()
}

fn masking_statistics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let docs = synthetic_docs(&mut rng, 2200, 3, 8);
    let vocab = train_vocab_from_documents(&docs, &VocabTrainConfig::new(300, Casing::Uncased)).unwrap();
    let mut insts = Vec::new();
    let mut seed = 0;
    while insts.len() < 10_000 {
        insts.extend(build_instances(&docs, &vocab, 64, &MaskPolicy::with_seed(seed), seed).unwrap());
        seed += 1;
    }
    insts.truncate(10_000);
    let mut bad_counts = 0;
    let (mut masked, mut random, mut kept, mut not_next) = (0usize, 0usize, 0usize, 0usize);
    for inst in &insts {
        let content = inst.token_ids.iter().filter(|&&t| t != CLS_ID && t != SEP_ID).count();
        let want = ((0.15 * content as f64).round() as usize).clamp(1, content);
        if inst.mlm_positions.len() != want {
            bad_counts += 1;
        }
        for (&p, &label) in inst.mlm_positions.iter().zip(&inst.mlm_labels) {
            let tok = inst.token_ids[p as usize];
            if tok == MASK_ID {
                masked += 1;
            } else if tok == label {
                kept += 1;
            } else {
                random += 1;
            }
        }
        if inst.nsp_label == NspLabel::NotNext {
            not_next += 1;
        }
    }
    let total = (masked + random + kept) as f64;
    let (fm, fr, fk) = (masked as f64 / total, random as f64 / total, kept as f64 / total);
    let fnn = not_next as f64 / insts.len() as f64;
    check(
        bad_counts == 0
            && (fm - 0.8).abs() <= 0.02
            && (fr - 0.1).abs() <= 0.02
            && (fk - 0.1).abs() <= 0.02
            && (fnn - 0.5).abs() <= 0.02,
        format!(
            "{} instances, {bad_counts} off-rule counts, split {fm:.3}/{fr:.3}/{fk:.3}, NotNext {fnn:.3}",
            insts.len()
        ),
    )
}

// 6

fn brute_overlap(a: &[&str], b: &[&str]) -> f64 {
    let specials: BTreeSet<&str> = SPECIAL_PIECES.iter().copied().collect();
    let sa: BTreeSet<&str> = a.iter().copied().filter(|p| !specials.contains(p)).collect();
    let sb: BTreeSet<&str> = b.iter().copied().filter(|p| !specials.contains(p)).collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

fn vocabulary_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut docs = toy_docs();
    docs.extend(synthetic_docs(&mut rng, 60, 2, 5));
    docs.push(Document::full_text("accents", Source::AnalystReports, "Café Zürich naïve Société Générale résumé €5 ÅSE").unwrap());
    let mut problems = Vec::new();

    let mut trained = Vec::new();
    for casing in [Casing::Cased, Casing::Uncased] {
        let cfg = VocabTrainConfig::new(400, casing);
        let a = train_vocab_from_documents(&docs, &cfg).unwrap();
        let b = train_vocab_from_documents(&docs, &cfg).unwrap();
        if a.to_file_string() != b.to_file_string() || a.fingerprint() != b.fingerprint() {
            problems.push(format!("{casing} vocabulary differs between runs"));
        }
        let mut unk_words = 0;
        for doc in &docs {
            for section in doc.sections() {
                let norm = normalize(&section.text, casing);
                for word in split_words(&norm) {
                    if word.chars().count() <= DEFAULT_MAX_WORD_LENGTH && wordpiece_encode(word, &a).contains(&UNK_ID) {
                        unk_words += 1;
                    }
                }
            }
        }
        if unk_words > 0 {
            problems.push(format!("{unk_words} {casing} words encode to [UNK]"));
        }
        trained.push(a);
    }

    let fixtures: [(&[&str], &[&str]); 4] = [
        (&["the", "bank", "loan", "##s", "##ing"], &["the", "bank", "rate", "##ing", "##ed"]),
        (&["a", "b", "c"], &["c", "d"]),
        (&["[UNK]", "x", "##y"], &["x", "##y", "[MASK]"]),
        (&[], &[]),
    ];
    for (a, b) in fixtures {
        let va = SubwordVocab::from_lines(a.iter().copied(), Casing::Cased).unwrap();
        let vb = SubwordVocab::from_lines(b.iter().copied(), Casing::Cased).unwrap();
        let (got, want) = (vocab_overlap(&va, &vb), brute_overlap(a, b));
        if (got - want).abs() > 1e-12 {
            problems.push(format!("overlap {a:?} {b:?}: {got} vs {want}"));
        }
    }
    let pa: Vec<&str> = trained[0].pieces().iter().map(String::as_str).collect();
    let pb: Vec<&str> = trained[1].pieces().iter().map(String::as_str).collect();
    let cross = vocab_overlap(&trained[0], &trained[1]);
    if (cross - brute_overlap(&pa, &pb)).abs() > 1e-12 {
        problems.push(format!("cased/uncased overlap {cross} disagrees with brute force"));
    }
    for v in &trained {
        if vocab_overlap(v, v) != 1.0 {
            problems.push("overlap(V, V) != 1".into());
        }
    }
    let x = SubwordVocab::from_lines(["x", "##x"], Casing::Cased).unwrap();
    let y = SubwordVocab::from_lines(["y", "##y"], Casing::Cased).unwrap();
    if vocab_overlap(&x, &y) != 0.0 {
        problems.push("disjoint overlap != 0".into());
    }
    check(
        problems.is_empty(),
        if problems.is_empty() { format!("cased/uncased overlap {cross:.4}") } else { problems.join("; ") },
    )
}

// 7

enum Gold {
    NoSections,
    Spans(Vec<(String, String)>),
}

fn parse_gold(text: &str) -> (FormType, Gold) {
    let mut lines = text.split('\n');
    let form = match lines.next().unwrap().trim() {
        "form: 10-K" => FormType::TenK,
        "form: 10-Q" => FormType::TenQ,
        other => panic!("bad form line {other:?}"),
    };
    let rest: Vec<&str> = lines.collect();
    if rest.first().map(|l| l.trim()) == Some("error: NoSectionsFound") {
        return (form, Gold::NoSections);
    }
    let mut spans: Vec<(String, Vec<&str>)> = Vec::new();
    for line in rest {
        if line.starts_with('[') && line.ends_with(']') {
            spans.push((line[1..line.len() - 1].to_string(), Vec::new()));
        } else {
            spans.last_mut().expect("text before the first label").1.push(line);
        }
    }
    let spans = spans
        .into_iter()
        .map(|(id, lines)| {
            let mut body = lines.join("\n");
            if body.ends_with('\n') {
                body.pop();
            }
            (id, body)
        })
        .collect();
    (form, Gold::Spans(spans))
}

fn section_extraction() -> Outcome {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/filings");
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter_map(|n| n.strip_suffix(".gold").map(str::to_string))
        .collect();
    names.sort();
    let mut failures = Vec::new();
    for name in &names {
        let body = std::fs::read_to_string(format!("{dir}/{name}.txt")).unwrap();
        let (form, gold) = parse_gold(&std::fs::read_to_string(format!("{dir}/{name}.gold")).unwrap());
        let filing = RawFiling {
            accession_id: name.clone(),
            cik: "0000000000".into(),
            form_type: form,
            period_end: "2020-12-31".into(),
            body,
        };
        let got = extract_sections(&filing, SectionPolicy::Strict);
        let ok = match (&gold, &got) {
            (Gold::NoSections, Err(CorpusError::NoSectionsFound { .. })) => true,
            (Gold::Spans(want), Ok(doc)) => {
                let have: Vec<(String, String)> = doc.sections().iter().map(|s| (s.id.as_str().to_string(), s.text.clone())).collect();
                &have == want
            }
            _ => false,
        };
        if !ok {
            failures.push(name.clone());
        }
    }
    check(
        names.len() == 10 && failures.is_empty(),
        format!("{} fixtures, mismatches: {:?}", names.len(), failures),
    )
}

// 8

fn separable_task() -> TaskSpec {
    let kw = [["surge", "beat", "record", "upgrade"], ["steady", "unchanged", "inline", "hold"], ["plunge", "miss", "loss", "downgrade"]];
    let filler = ["the", "company", "quarter", "shares", "revenue", "guidance", "analyst", "market", "sales", "outlook"];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let examples = (0..200)
        .map(|i| {
            let c = i % 3;
            let mut words: Vec<&str> = (0..6).map(|_| *filler.choose(&mut rng).unwrap()).collect();
            for _ in 0..2 {
                let pos = rng.random_range(0..=words.len());
                words.insert(pos, *kw[c].choose(&mut rng).unwrap());
            }
            LabeledExample::new(words.join(" "), LABELS[c])
        })
        .collect();
    TaskSpec::new(TaskName::AnalystTone, examples).unwrap()
}

fn finetune_protocol() -> Outcome {
    let task = separable_task();
    let docs: Vec<Document> = task
        .examples()
        .chunks(5)
        .enumerate()
        .map(|(i, c)| {
            let text: String = c.iter().map(|e| capitalize(&e.text) + ". ").collect();
            Document::full_text(format!("ex-{i}"), Source::AnalystReports, text).unwrap()
        })
        .collect();
    let vocab = train_vocab_from_documents(&docs, &VocabTrainConfig::new(120, Casing::Uncased)).unwrap();
    let sched = TrainSchedule {
        phase1: PhasePlan { max_len: 64, steps: 0 },
        ..TrainSchedule::default()
    };
    let cfg = ModelConfig { dropout: 0.1, ..ModelConfig::toy(vocab.len()) };
    let ckpt = pretrain(&docs, &vocab, cfg, sched, &MaskPolicy::default(), PretrainOptions::default())
        .unwrap()
        .checkpoint;
    let tag = ModelTag::new("toy", Casing::Uncased);
    let models = [BenchmarkModel { tag: &tag, checkpoint: &ckpt, vocab: &vocab }];
    let plan = SplitPlan::default();
    let ft = FineTuneConfig { epochs: 20, learning_rate: 5e-4, max_len: 32, ..Default::default() };
    let trained = run_benchmark(&models, std::slice::from_ref(&task), &plan, &ft).unwrap();
    let trained_mean = trained.rows[0].mean();

    let untrained = run_benchmark(&models, std::slice::from_ref(&task), &plan, &FineTuneConfig { epochs: 0, ..ft }).unwrap();
    let splits = make_splits(task.len(), &plan).unwrap();
    let n_test: usize = splits.iter().map(|s| s.test.len()).sum();
    let correct: f64 = untrained.rows[0]
        .accuracies
        .iter()
        .zip(&splits)
        .map(|(a, s)| a * s.test.len() as f64)
        .sum();
    let chance_acc = correct / n_test as f64;
    let p = 1.0 / 3.0;
    let sd = (p * (1.0 - p) / n_test as f64).sqrt();

    let partition_ok = splits.len() == 10
        && splits.iter().all(|s| {
            let train: BTreeSet<usize> = s.train.iter().copied().collect();
            let test: BTreeSet<usize> = s.test.iter().copied().collect();
            train.len() == s.train.len()
                && test.len() == s.test.len()
                && train.is_disjoint(&test)
                && train.union(&test).copied().eq(0..task.len())
        });
    check(
        trained.rows[0].accuracies.len() == 10 && trained_mean >= 0.95 && (chance_acc - p).abs() <= 3.0 * sd && partition_ok,
        format!(
            "trained mean {trained_mean:.3}; untrained {chance_acc:.3} (chance {p:.3} ± {:.3}); splits ok {partition_ok}",
            3.0 * sd
        ),
    )
}

// 9

const POS: &[&str] = &[
    "surged", "soared", "jumped", "climbed", "rallied", "advanced", "rebounded", "gained", "expanded", "accelerated",
    "improved", "strengthened", "boosted", "outperformed", "exceeded", "topped", "doubled", "lifted", "raised", "recovered",
];
const NEU: &[&str] = &[
    "held", "remained", "stayed", "maintained", "kept", "matched", "hovered", "idled", "paused", "rested",
    "continued", "persisted", "lingered", "stood", "waited", "settled", "balanced", "equaled", "tracked", "mirrored",
];
const NEG: &[&str] = &[
    "plunged", "slumped", "dropped", "tumbled", "declined", "slipped", "sank", "fell", "shrank", "weakened",
    "deteriorated", "collapsed", "missed", "lagged", "trailed", "halved", "cut", "lowered", "lost", "faltered",
];
const CONTEXT: [&[&str]; 3] = [
    &["strong", "robust", "upbeat", "record", "growth", "optimism"],
    &["flat", "steady", "unchanged", "stable", "neutral", "sideways"],
    &["weak", "poor", "gloomy", "losses", "slump", "pessimism"],
];
const FILLER: &[&str] = &[
    "the", "company", "quarter", "shares", "revenue", "margin", "sales", "profit", "earnings", "guidance", "outlook",
    "firm", "stock", "bank", "segment",
];
const OFF_DOMAIN: &[&str] = &[
    "team", "coach", "match", "goal", "player", "season", "league", "stadium", "referee", "striker", "keeper", "fans",
    "trophy", "pitch", "captain", "scored", "defended", "passed", "kicked", "tackled", "won", "drew", "celebrated",
    "trained", "crossed",
];

fn keywords(c: usize) -> &'static [&'static str] {
    [POS, NEU, NEG][c]
}

fn pick(rng: &mut ChaCha8Rng, words: &[&'static str]) -> &'static str {
    words.choose(rng).unwrap()
}

fn grouped_docs(sentences: &[String], tag: &str) -> Vec<Document> {
    sentences
        .chunks(4)
        .enumerate()
        .map(|(i, c)| Document::full_text(format!("{tag}-{i}"), Source::AnalystReports, c.join(". ") + ".").unwrap())
        .collect()
}

fn domain_replication(rep: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(100 + rep);
    let in_sents: Vec<String> = (0..400)
        .map(|_| {
            let c = rng.random_range(0..3);
            let w = [
                pick(&mut rng, FILLER),
                pick(&mut rng, FILLER),
                pick(&mut rng, keywords(c)),
                "on",
                pick(&mut rng, CONTEXT[c]),
                pick(&mut rng, CONTEXT[c]),
                pick(&mut rng, FILLER),
            ];
            capitalize(&w.join(" "))
        })
        .collect();
    let out_sents: Vec<String> = (0..400)
        .map(|_| {
            let w: Vec<&str> = (0..7).map(|_| pick(&mut rng, OFF_DOMAIN)).collect();
            capitalize(&w.join(" "))
        })
        .collect();
    let in_docs = grouped_docs(&in_sents, "in");
    let out_docs = grouped_docs(&out_sents, "out");
    // Shared vocabulary covering both corpora and every task keyword.
    let mut all = in_docs.clone();
    all.extend(out_docs.iter().cloned());
    let kw: Vec<&str> = POS.iter().chain(NEU).chain(NEG).copied().collect();
    all.push(Document::full_text("keywords", Source::AnalystReports, kw.join(" ")).unwrap());
    let vocab = train_vocab_from_documents(&all, &VocabTrainConfig::new(800, Casing::Uncased)).unwrap();

    let examples: Vec<LabeledExample> = (0..150)
        .map(|i| {
            let c = i % 3;
            let mut w: Vec<&str> = (0..4).map(|_| pick(&mut rng, FILLER)).collect();
            w.insert(rng.random_range(0..=4), pick(&mut rng, keywords(c)));
            LabeledExample::new(w.join(" "), LABELS[c])
        })
        .collect();
    let task = TaskSpec::new(TaskName::PhraseBank, examples).unwrap();

    let cfg = ModelConfig { seed: rep, ..ModelConfig::toy(vocab.len()) };
    let sched = TrainSchedule {
        phase1: PhasePlan { max_len: 64, steps: 1500 },
        ..TrainSchedule::default()
    };
    let opts = PretrainOptions { seed: rep, ..Default::default() };
    let policy = MaskPolicy::with_seed(rep);
    let a = pretrain(&in_docs, &vocab, cfg, sched, &policy, opts).unwrap().checkpoint;
    let b = pretrain(&out_docs, &vocab, cfg, sched, &policy, opts).unwrap().checkpoint;
    let (ta, tb) = (ModelTag::new("in-domain", Casing::Uncased), ModelTag::new("off-domain", Casing::Uncased));
    let models = [
        BenchmarkModel { tag: &ta, checkpoint: &a, vocab: &vocab },
        BenchmarkModel { tag: &tb, checkpoint: &b, vocab: &vocab },
    ];
    let ft = FineTuneConfig { epochs: 20, learning_rate: 1e-3, max_len: 32, seed: rep, ..Default::default() };
    let plan = SplitPlan { repetitions: 5, base_seed: rep * 1000, ..Default::default() };
    let r = run_benchmark(&models, std::slice::from_ref(&task), &plan, &ft).unwrap();
    (r.row(&ta, TaskName::PhraseBank).unwrap().mean(), r.row(&tb, TaskName::PhraseBank).unwrap().mean())
}

fn domain_advantage() -> Outcome {
    let t = Instant::now();
    let mut wins = 0;
    let mut pairs = Vec::new();
    for rep in 0..5 {
        let (a, b) = domain_replication(rep);
        if a >= b {
            wins += 1;
        }
        pairs.push(format!("{a:.3}/{b:.3}"));
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        wins >= 4 && secs < 1800.0,
        format!("{wins}/5 wins (in/off: {}) in {secs:.0}s", pairs.join(" ")),
    )
}

// 10

fn round_trips() -> Outcome {
    let mut problems = Vec::new();
    let dir = tempfile::tempdir().unwrap();
    let docs = toy_docs();
    let vocab = toy_vocab(&docs);
    let cfg = ModelConfig::toy(vocab.len());
    let sched = TrainSchedule {
        phase1: PhasePlan { max_len: 32, steps: 24 },
        phase2: PhasePlan { max_len: 64, steps: 6 },
        batch_size: 4,
        variant: TrainVariant::FromScratch,
    };
    let policy = MaskPolicy::with_seed(9);
    let opts = PretrainOptions { seed: 9, ..Default::default() };

    let full = pretrain(&docs, &vocab, cfg, sched, &policy, opts).unwrap();
    let path = dir.path().join("full.ckpt");
    save_checkpoint(&path, &full.checkpoint).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let bits = |c: &Checkpoint| -> Vec<u32> { c.params.tensors.iter().flat_map(|t| t.data.iter().map(|x| x.to_bits())).collect() };
    if loaded != full.checkpoint || bits(&loaded) != bits(&full.checkpoint) {
        problems.push("checkpoint changed through save/load".to_string());
    }
    if std::fs::read(&path).unwrap() != encode_checkpoint(&loaded) {
        problems.push("re-encoded checkpoint differs from file bytes".into());
    }

    let mut first = Pretrainer::from_scratch(&docs, &vocab, cfg, sched, &policy, opts).unwrap();
    let mut log = first.run_until(13).unwrap();
    let mid = dir.path().join("mid.ckpt");
    save_checkpoint(&mid, &first.checkpoint()).unwrap();
    drop(first);
    let mut second = Pretrainer::resume(load_checkpoint(&mid).unwrap(), &docs, &vocab, sched, &policy, opts).unwrap();
    log.extend(second.run_to_end().unwrap());
    let render = |l: &[LossRecord]| {
        let mut out = Vec::new();
        write_loss_log(&mut out, l).unwrap();
        out
    };
    if log != full.log || render(&log) != render(&full.log) || second.checkpoint() != full.checkpoint {
        problems.push("resumed run diverges from the uninterrupted run".into());
    }
    if decode_checkpoint(&encode_checkpoint(&second.checkpoint())).unwrap() != full.checkpoint {
        problems.push("resumed checkpoint does not round-trip".into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let task = |name: TaskName, rng: &mut ChaCha8Rng| {
        let ex = (0..40)
            .map(|i| {
                let w: Vec<&str> = (0..5).map(|_| *WORDS.choose(rng).unwrap()).collect();
                LabeledExample::new(w.join(" "), LABELS[i % 3])
            })
            .collect();
        TaskSpec::new(name, ex).unwrap()
    };
    let tasks = [task(TaskName::PhraseBank, &mut rng), task(TaskName::AnalystTone, &mut rng)];
    let (t1, t2) = (ModelTag::new("scratch", Casing::Uncased), ModelTag::new("trained", Casing::Uncased).with_corpus("toy"));
    let init = pretrain(&docs, &vocab, cfg, TrainSchedule { phase1: PhasePlan { max_len: 32, steps: 0 }, ..sched }, &policy, opts)
        .unwrap()
        .checkpoint;
    let models = [
        BenchmarkModel { tag: &t1, checkpoint: &init, vocab: &vocab },
        BenchmarkModel { tag: &t2, checkpoint: &full.checkpoint, vocab: &vocab },
    ];
    let plan = SplitPlan { repetitions: 3, ..Default::default() };
    let ft = FineTuneConfig { epochs: 1, learning_rate: 1e-3, max_len: 16, ..Default::default() };
    let report = run_benchmark(&models, &tasks, &plan, &ft).unwrap();
    let tsv = report.to_tsv();
    for line in tsv.lines().skip(1) {
        let fields: Vec<&str> = line.split('\t').collect();
        let stored: f64 = fields[4].parse().unwrap();
        let splits: Vec<f64> = fields[5..].iter().map(|s| s.parse().unwrap()).collect();
        if splits.len() != 3 || (stored - mean(&splits)).abs() > 1e-12 {
            problems.push(format!("report mean disagrees: {line}"));
        }
    }
    if EvalReport::from_tsv(&tsv).ok().as_ref() != Some(&report) {
        problems.push("report does not survive TSV round trip".into());
    }

    let table = published_variant_table().render_variant_table();
    if table != VARIANT_TABLE_GOLDEN {
        problems.push(format!("variant table differs from golden:\n{table}"));
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("checkpoint bit-exact, resume identical over {} steps, {} report rows, table matches", log.len(), report.rows.len())
        } else {
            problems.join("; ")
        },
    )
}

fn published_variant_table() -> EvalReport {
    let cells = [
        ("BERT", [[0.755, 0.835], [0.653, 0.730], [0.840, 0.850]]),
        ("FinBERT-BaseVocab", [[0.856, 0.870], [0.767, 0.796], [0.872, 0.880]]),
        ("FinBERT-FinVocab", [[0.864, 0.872], [0.814, 0.844], [0.876, 0.887]]),
    ];
    let mut rows = Vec::new();
    for (family, by_task) in cells {
        for (ci, casing) in [Casing::Cased, Casing::Uncased].into_iter().enumerate() {
            for (ti, task) in [TaskName::PhraseBank, TaskName::FiQA, TaskName::AnalystTone].into_iter().enumerate() {
                rows.push(ReportRow { tag: ModelTag::new(family, casing), task, accuracies: vec![by_task[ti][ci]] });
            }
        }
    }
    EvalReport { rows }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient check", gradient_check),
        ("initial losses", init_losses),
        ("overfit toy corpus", overfit),
        ("tokenizer oracle", tokenizer_oracle),
        ("masking statistics", masking_statistics),
        ("vocabulary properties", vocabulary_properties),
        ("section extraction", section_extraction),
        ("fine-tune protocol", finetune_protocol),
        ("domain advantage", domain_advantage),
        ("round trips", round_trips),
    ];
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = fmt_elapsed(t.elapsed());
        match outcome {
            Ok(detail) => println!("criterion {n:>2} {name}: PASS ({detail}) [{elapsed}]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} {name}: FAIL ({detail}) [{elapsed}]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn fmt_elapsed(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}
