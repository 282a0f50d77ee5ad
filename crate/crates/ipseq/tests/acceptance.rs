//! Acceptance criteria for the interactive-predictive engine. Prints one
//! PASS/FAIL line per criterion and exits non-zero if any fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

mod common;

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ipseq::checkpoint::Checkpoint;
use ipseq::client::Client;
use ipseq::corpus::ParallelCorpus;
use ipseq::engine::{Engine, Task};
use ipseq::manifest::{discover, TaskManifest, MANIFEST_NAME};
use ipseq::server::ServerHandle;
use ipseq::simulate::{simulate, SimulateOptions, Transport};
use ipseq::training::{load_examples, train_from_split, TrainSetup};
use ipseq_core::decode::{beam_search, constrained_beam_search, make_constraint, BeamParams, Hypothesis};
use ipseq_core::learn::{online_update, Example, OptimizerKind, OptimizerState, TrainConfig};
use ipseq_core::model::{Modality, ModelConfig, Seq2Seq, SourceObject};
use ipseq_core::session::{ModelPredictor, Predictor, Session, SessionReport};
use ipseq_core::sim::{simulate_sample, InteractiveBackend, LocalBackend};
use ipseq_core::vocab::{normalize_prefix, Tokenization, Vocabulary};
use ipseq_core::Result as CoreResult;
use support::*;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

// Criterion 1 ---------------------------------------------------------------

const OOV_CHARS: [char; 4] = ['z', 'ß', 'ü', 'Q'];

fn random_prefix(rng: &mut Lcg, vocab: &Vocabulary) -> String {
    let symbols: Vec<u32> = (4..vocab.len() as u32).collect();
    let n = rng.below(7);
    let ids: Vec<u32> = (0..n).map(|_| *rng.pick(&symbols)).collect();
    let mut text = random_cut(rng, &vocab.detokenize(&ids));
    if !text.is_empty() && !text.ends_with(' ') && rng.below(5) == 0 {
        text.push(' ');
    }
    if rng.below(5) == 0 {
        let at = rng.below(text.chars().count() + 1);
        let mut chars: Vec<char> = text.chars().collect();
        chars.insert(at, *rng.pick(&OOV_CHARS));
        text = chars.into_iter().collect();
    }
    normalize_prefix(&text)
}

fn prefix_postcondition() -> Outcome {
    const TRIALS: usize = 10_000;
    let start = Instant::now();
    let mut rng = Lcg(0x5eed_0001);
    let mut failures = 0;
    let mut spliced = 0;
    let mut first_failure = None;
    for trial in 0..TRIALS {
        let mode = if rng.below(2) == 0 { Tokenization::Char } else { Tokenization::Word };
        let size = 2 + rng.below(4);
        let vocab = random_vocab(&mut rng, mode, size);
        let max_len = 3 + rng.below(6);
        let features = trial % 4 == 3;
        let (model, source) = if features {
            let config = ModelConfig {
                src_vocab_size: 0,
                modality: Modality::Features,
                feature_dim: Some(3),
                ..small_config(1, vocab.len(), max_len)
            };
            let mut m = Seq2Seq::new(config, rng.next_u64()).unwrap();
            randomize(&mut m, &mut rng, 1.5);
            let t = 1 + rng.below(4);
            (m, SourceObject::Features(random_features(&mut rng, t, 3)))
        } else {
            let m = random_model(&mut rng, 7, &vocab, max_len, 1.5);
            (m, random_source(&mut rng, 7))
        };
        let prefix = random_prefix(&mut rng, &vocab);
        let predictor = ModelPredictor {
            model: &model,
            vocab: &vocab,
            beam: BeamParams::new(1 + rng.below(4), max_len),
        };
        let h = predictor.predict(&source, Some(&prefix)).unwrap();
        spliced += usize::from(h.spliced);
        if !h.surface.starts_with(&prefix) {
            failures += 1;
            first_failure.get_or_insert_with(|| format!("prefix {prefix:?} got {:?}", h.surface));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures == 0 && elapsed < Duration::from_secs(120),
        format!(
            "{TRIALS} trials, {failures} failures, {spliced} spliced, {:.1} s{}",
            elapsed.as_secs_f64(),
            first_failure.map(|f| format!(", first failure: {f}")).unwrap_or_default()
        ),
    )
}

// Criterion 2 ---------------------------------------------------------------

fn oracle_equivalence() -> Outcome {
    const INSTANCES: usize = 240;
    let mut rng = Lcg(0x5eed_0002);
    let mut mismatches = Vec::new();
    let mut worst_gap = 0.0f64;
    let mut constrained_checked = 0;
    for i in 0..INSTANCES {
        let mode = if i % 2 == 0 { Tokenization::Char } else { Tokenization::Word };
        // Emittable symbols: the corpus tokens plus EOS, at most five.
        let tokens = 1 + rng.below(4);
        let vocab = random_vocab(&mut rng, mode, tokens);
        let max_len = 1 + rng.below(5);
        let model = random_model(&mut rng, 6, &vocab, max_len, 2.0);
        let source = random_source(&mut rng, 6);
        let enc = model.encode(&source).unwrap();
        let all = enumerate(&model, &vocab, &enc, max_len);
        let width = all.len();
        let params = BeamParams::new(width, max_len);

        let free = beam_search(&model, &vocab, &enc, &params).unwrap().remove(0);
        let best = argmax(&all).unwrap();
        worst_gap = worst_gap.max((free.logprob - best.logprob).abs());
        if free.token_ids != best.tokens || (free.logprob - best.logprob).abs() > 1e-10 {
            mismatches.push(format!("instance {i} unconstrained"));
        }

        let reference = vocab.detokenize(&rng.pick(&all).tokens.clone());
        let prefix = normalize_prefix(&random_cut(&mut rng, &reference));
        let constraint = make_constraint(&prefix, &vocab);
        let got = constrained_beam_search(&model, &vocab, &enc, &constraint, &params).unwrap().remove(0);
        let Some(expect) = constrained_argmax(&all, &vocab, &prefix) else {
            mismatches.push(format!("instance {i}: oracle found nothing for {prefix:?}"));
            continue;
        };
        constrained_checked += 1;
        worst_gap = worst_gap.max((got.logprob - expect.logprob).abs());
        if got.spliced || got.token_ids != expect.tokens || (got.logprob - expect.logprob).abs() > 1e-10 {
            mismatches.push(format!("instance {i} prefix {prefix:?}"));
        }
    }
    outcome(
        mismatches.is_empty() && constrained_checked >= 200,
        format!(
            "{INSTANCES} unconstrained + {constrained_checked} constrained instances, {} mismatches, worst score gap {worst_gap:.1e}{}",
            mismatches.len(),
            mismatches.first().map(|m| format!(", first: {m}")).unwrap_or_default()
        ),
    )
}

// Criterion 3 ---------------------------------------------------------------

fn gradient_correctness() -> Outcome {
    let config = ModelConfig {
        src_vocab_size: 14,
        tgt_vocab_size: 12,
        embedding_dim: 8,
        encoder_hidden_dim: 10,
        decoder_hidden_dim: 16,
        attention_dim: 10,
        modality: Modality::Text,
        feature_dim: None,
        max_output_len: 12,
    };
    let mut rng = Lcg(0x5eed_0003);
    let mut model = Seq2Seq::new(config, 17).unwrap();
    randomize(&mut model, &mut rng, 0.4);
    let count = model.params().scalar_count();
    let examples = vec![
        (SourceObject::Tokens(vec![4, 9, 13, 6, 2]), vec![5, 11, 7, 2]),
        (SourceObject::Tokens(vec![12, 5, 2]), vec![8, 4, 10, 9, 2]),
    ];
    let report = model_grad_check(&mut model, &examples, 1e-4, 1e-4);
    let worst = report
        .params
        .iter()
        .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
        .unwrap();
    outcome(
        report.passed() && count <= 10_000,
        format!(
            "{count} scalars in {} tensors, max relative error {:.2e} (in {})",
            report.params.len(),
            worst.max_relative_error,
            worst.name
        ),
    )
}

// Criterion 4 ---------------------------------------------------------------

fn lr_zero_safety() -> Outcome {
    let mut rng = Lcg(0x5eed_0004);
    let tgt = random_vocab(&mut rng, Tokenization::Word, 5);
    let src = Vocabulary::from_tokens(Tokenization::Char, ["a", "b", "c"]);
    let config = ModelConfig {
        embedding_dim: 6,
        encoder_hidden_dim: 6,
        decoder_hidden_dim: 8,
        attention_dim: 6,
        ..small_config(src.len(), tgt.len(), 10)
    };
    let model = Seq2Seq::new(config, 5).unwrap();
    let random_example = |rng: &mut Lcg| Example {
        source: random_source(rng, src.len()),
        target: {
            let n = 1 + rng.below(5);
            let mut t: Vec<u32> = (0..n).map(|_| 4 + rng.below(tgt.len() - 4) as u32).collect();
            t.push(ipseq_core::vocab::EOS);
            t
        },
    };

    let mut frozen = Checkpoint {
        model: model.clone(),
        src_vocab: Some(src.clone()),
        tgt_vocab: tgt.clone(),
        optimizer: Some(OptimizerState::new(OptimizerKind::Sgd, model.params())),
    };
    let before = frozen.to_bytes();
    let mut zero_equal_losses = true;
    for _ in 0..100 {
        let ex = random_example(&mut rng);
        let opt = frozen.optimizer.as_mut().unwrap();
        let r = online_update(&mut frozen.model, opt, &ex, 0.0, Some(5.0)).unwrap();
        zero_equal_losses &= r.loss_before.to_bits() == r.loss_after.to_bits();
    }
    let identical = frozen.to_bytes() == before;

    let mut live = model;
    let mut opt = OptimizerState::new(OptimizerKind::Sgd, live.params());
    let mut decreased = 0;
    for _ in 0..100 {
        let ex = random_example(&mut rng);
        let r = online_update(&mut live, &mut opt, &ex, 0.05, Some(5.0)).unwrap();
        decreased += usize::from(r.loss_after < r.loss_before);
    }
    outcome(
        identical && zero_equal_losses && decreased >= 95,
        format!(
            "lr 0: checkpoint bit-identical {identical} over 100 updates; lr 0.05: loss decreased on {decreased}/100 samples"
        ),
    )
}

// Criterion 5 ---------------------------------------------------------------

const DIGIT_WORDS: [&str; 10] = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"];

fn digit_pairs(rng: &mut Lcg, count: usize, exclude: &[String]) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    while out.len() < count {
        let len = 1 + rng.below(5);
        let digits: Vec<usize> = (0..len).map(|_| rng.below(10)).collect();
        let src: String = digits.iter().map(|d| char::from(b'0' + *d as u8)).collect();
        if exclude.contains(&src) || out.iter().any(|(s, _)| *s == src) {
            continue;
        }
        let tgt = digits.iter().map(|&d| DIGIT_WORDS[d]).collect::<Vec<_>>().join(" ");
        out.push((src, tgt));
    }
    out
}

fn save_pairs(stem: &Path, pairs: &[(String, String)]) {
    ParallelCorpus {
        sources: pairs.iter().map(|p| p.0.clone()).collect(),
        targets: pairs.iter().map(|p| p.1.clone()).collect(),
    }
    .save_split(stem)
    .unwrap();
}

fn greedy_exact_match(ckpt: &Checkpoint, stem: &Path) -> (usize, usize) {
    let examples = load_examples(stem, Modality::Text, ckpt.src_vocab.as_ref(), &ckpt.tgt_vocab).unwrap();
    let greedy = BeamParams::new(1, ckpt.model.config().max_output_len);
    let correct = examples
        .iter()
        .filter(|ex| {
            let enc = ckpt.model.encode(&ex.source).unwrap();
            beam_search(&ckpt.model, &ckpt.tgt_vocab, &enc, &greedy).unwrap()[0].token_ids == ex.target
        })
        .count();
    (correct, examples.len())
}

fn desk_scale_convergence() -> Outcome {
    const MAX_RESTARTS: u64 = 6;
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let task_dir = dir.path().join("digits");
    std::fs::create_dir_all(&task_dir).unwrap();
    let mut rng = Lcg(0x5eed_0005);
    let train = digit_pairs(&mut rng, 200, &[]);
    let mut seen: Vec<String> = train.iter().map(|p| p.0.clone()).collect();
    let dev = digit_pairs(&mut rng, 30, &seen);
    seen.extend(dev.iter().map(|p| p.0.clone()));
    let held_out = digit_pairs(&mut rng, 50, &seen);
    save_pairs(&task_dir.join("train"), &train);
    save_pairs(&task_dir.join("dev"), &dev);
    save_pairs(&task_dir.join("heldout"), &held_out);

    let mut setup = TrainSetup::new(Modality::Text, Some(Tokenization::Char), Tokenization::Word);
    setup.max_output_len = 8;
    setup.train = TrainConfig {
        optimizer: OptimizerKind::Adadelta,
        learning_rate: 0.5,
        batch_size: 4,
        epochs: 100,
        clip_norm: Some(5.0),
        seed: 0,
    };
    // Some initializations memorize the training pairs without learning the
    // digit alignment; restart with a new seed and select on the dev split.
    let mut best: Option<(usize, u64, Checkpoint, f64)> = None;
    for seed in 1..=MAX_RESTARTS {
        setup.train.seed = seed;
        let (ckpt, curve) = train_from_split(&task_dir.join("train"), &setup, |_| {}).unwrap();
        let (dev_correct, dev_total) = greedy_exact_match(&ckpt, &task_dir.join("dev"));
        let loss = curve.last().map_or(f64::NAN, |p| p.loss);
        if best.as_ref().is_none_or(|b| dev_correct > b.0) {
            best = Some((dev_correct, seed, ckpt, loss));
        }
        if dev_correct as f64 >= 0.95 * dev_total as f64 {
            break;
        }
    }
    let (dev_correct, seed, ckpt, final_loss) = best.unwrap();
    let (correct, total) = greedy_exact_match(&ckpt, &task_dir.join("heldout"));
    let accuracy = correct as f64 / total as f64;

    ckpt.save(&task_dir.join("model.ckpt")).unwrap();
    let mut m = TaskManifest::new("digits", "Digits to words", Modality::Text, Tokenization::Word);
    m.src_tokenization = Some(Tokenization::Char);
    m.samples = "heldout".into();
    m.max_len = 8;
    m.save(&task_dir.join(MANIFEST_NAME)).unwrap();
    let report = simulate(&SimulateOptions {
        transport: Transport::InProcess,
        ..SimulateOptions::new(dir.path(), "digits", &task_dir.join("heldout"))
    })
    .unwrap();
    let s = &report.summary;
    let elapsed = start.elapsed();
    outcome(
        accuracy >= 0.9
            && s.converged == s.samples
            && s.mean_ksmr < 1.0
            && s.mean_ksmr < s.retype_ksmr
            && elapsed < Duration::from_secs(15 * 60),
        format!(
            "seed {seed} selected (dev {dev_correct}/{}), final train loss {final_loss:.4}, held-out greedy exact match {correct}/{total} ({:.0}%), converged {}/{}, mean ksmr {:.3} vs retype {:.3}, {:.1} s",
            dev.len(),
            100.0 * accuracy,
            s.converged,
            s.samples,
            s.mean_ksmr,
            s.retype_ksmr,
            elapsed.as_secs_f64()
        ),
    )
}

// Criterion 6 ---------------------------------------------------------------

const CAPTION_STEPS: [&str; 4] = [
    "A group of football players in red uniforms.",
    "A football player in a red uniform is holding a football.",
    "A football player in a red uniform is wearing a football.",
    "A football player in a red uniform is wearing a helmet.",
];

struct Scripted(std::cell::Cell<usize>);

impl Predictor for Scripted {
    fn predict(&self, _: &SourceObject, _: Option<&str>) -> CoreResult<Hypothesis> {
        let i = self.0.get();
        self.0.set(i + 1);
        Ok(Hypothesis {
            token_ids: Vec::new(),
            logprob: 0.0,
            surface: CAPTION_STEPS[i.min(3)].to_string(),
            spliced: false,
            capped: false,
        })
    }
}

fn protocol_replay() -> Outcome {
    let expected = [
        "A f",
        "A football player in a red uniform is w",
        "A football player in a red uniform is wearing a h",
    ];
    let mock = Scripted(Default::default());
    let mut backend = LocalBackend {
        session: Session::new(1, SourceObject::Tokens(vec![2])),
        predictor: &mock,
    };
    let run = simulate_sample(&mut backend, CAPTION_STEPS[3], 1).unwrap();
    let history_ok = backend.session.feedback_history() == expected;
    let passed = run.prefixes == expected
        && history_ok
        && run.final_text == CAPTION_STEPS[3]
        && run.converged
        && run.keystrokes == 3
        && run.iterations == 4;
    outcome(
        passed,
        format!(
            "{} corrections {:?}, final {:?}, keystrokes {}, mouse actions {}, ksmr {:.4}",
            run.prefixes.len(),
            run.prefixes,
            run.final_text,
            run.keystrokes,
            run.mouse_actions,
            run.ksmr
        ),
    )
}

// Criterion 7 ---------------------------------------------------------------

enum Step {
    Predict,
    Feedback(&'static str, usize, bool),
    Validate,
}

const SCRIPT: [Step; 20] = [
    Step::Predict,
    Step::Feedback("a", 1, true),
    Step::Feedback("a ", 1, false),
    Step::Feedback("a b", 1, false),
    Step::Feedback("b", 1, true),
    Step::Feedback("b a", 2, false),
    Step::Feedback("b a .", 2, false),
    Step::Feedback("", 0, true),
    Step::Feedback("c a b", 5, true),
    Step::Feedback("zz", 2, true),
    Step::Feedback("c a b .", 2, true),
    Step::Feedback("a b c . a", 9, true),
    Step::Feedback("é", 1, true),
    Step::Feedback("a  b", 3, true),
    Step::Feedback("ab", 2, true),
    Step::Feedback("c a", 3, true),
    Step::Feedback("c a b . c", 6, false),
    Step::Feedback("b b", 3, true),
    Step::Feedback("b b .", 2, false),
    Step::Validate,
];

#[derive(Debug, PartialEq)]
struct Trace {
    hypotheses: Vec<String>,
    report: (String, u64, u64, u64, u64),
}

fn trace(mut backend: impl InteractiveBackend<Error = impl std::fmt::Debug>) -> Trace {
    let mut hypotheses = Vec::new();
    let mut report: Option<SessionReport> = None;
    for step in &SCRIPT {
        match *step {
            Step::Predict => hypotheses.push(backend.predict().unwrap()),
            Step::Feedback(p, n, moved) => hypotheses.push(backend.feedback(p, n, moved).unwrap()),
            Step::Validate => report = Some(backend.validate(None).unwrap()),
        }
    }
    let r = report.unwrap();
    Trace {
        hypotheses,
        report: (
            r.final_text,
            r.effort.keystrokes,
            r.effort.mouse_actions,
            r.effort.iterations,
            r.ksmr.to_bits(),
        ),
    }
}

fn wire_fidelity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    common::text_task(dir.path(), "toy", &common::PAIRS, 21, 0.0);

    let manifest = discover(dir.path()).unwrap().remove(0);
    let task = Task::load(manifest, None).unwrap();
    let direct = trace(LocalBackend {
        session: Session::new(1, task.samples[3].source.clone()),
        predictor: &task,
    });

    let engine = Arc::new(Engine::load_dir(dir.path()).unwrap());
    let (id, _) = engine.start_session("toy", 3).unwrap();
    let in_process = trace(ipseq::engine::EngineSession {
        engine: &engine,
        session_id: id,
        learn: false,
    });

    let server = ServerHandle::spawn(Arc::new(Engine::load_dir(dir.path()).unwrap()), "127.0.0.1:0".parse().unwrap())
        .unwrap();
    let client = Client::new(&server.url());
    let (id, _) = client.start_session("toy", 3).unwrap();
    let http = trace(ipseq::client::HttpSession {
        client: &client,
        session_id: id,
        learn: false,
    });

    let all_prefixed = SCRIPT.iter().zip(&http.hypotheses[..]).all(|(s, h)| match s {
        Step::Feedback(p, _, _) => h.starts_with(&normalize_prefix(p)),
        _ => true,
    });
    let (text, ks, ma, it, _) = &http.report;
    outcome(
        http == in_process && http == direct && all_prefixed && http.hypotheses.len() == 19,
        format!(
            "{} steps, HTTP equals in-process engine {} and bare session {}, final {text:?}, keystrokes {ks}, mouse actions {ma}, iterations {it}",
            SCRIPT.len(),
            http == in_process,
            http == direct
        ),
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 7] = [
        ("prefix postcondition", prefix_postcondition),
        ("oracle equivalence", oracle_equivalence),
        ("gradient correctness", gradient_correctness),
        ("learning-rate-zero safety", lr_zero_safety),
        ("desk-scale convergence", desk_scale_convergence),
        ("protocol replay", protocol_replay),
        ("wire fidelity", wire_fidelity),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!result.passed);
        println!(
            "criterion {} {}: {} ({})",
            i + 1,
            if result.passed { "PASS" } else { "FAIL" },
            name,
            result.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
