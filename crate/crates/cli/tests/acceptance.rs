//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails. Every tolerance is pinned below.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use emphscore_core::align::{train_ibm1, Aligner, AlignerSpec};
use emphscore_core::audio::{FrameSpec, Waveform, SAMPLE_RATE};
use emphscore_core::classifier::{aggregate_to_words, gradient, objective, AggregationConfig, LabeledFrames};
use emphscore_core::features::{estimate_f0, FrameFeatureMatrix, PitchConfig, FEATURE_DIM};
use emphscore_core::pipeline::{load_manifest, load_outputs, read_jsonl};
use emphscore_core::segment::WordSpan;
use emphscore_core::synth::GoldAlignment;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const TOPLINE_MAX_SECS: u64 = 30;
const TRAINED_MAX_SECS: u64 = 300;
const TRAINED_MIN_F1: f64 = 0.90;
const TRANSLATION_MIN_F1: f64 = 0.85;
const TRANSLATION_MIN_LINK_ACCURACY: f64 = 0.95;
const GRADIENT_SEEDS: u64 = 50;
const FD_EPS: f64 = 1e-5;
const GRADIENT_MAX_REL_ERR: f64 = 1e-4;
/// Relative errors are taken against max(|analytic|, |numeric|, this floor).
const GRADIENT_REL_FLOOR: f64 = 1e-6;
const AGGREGATION_MAX_LEN: usize = 12;
const PITCH_MAX_MEDIAN_ERR_HZ: f64 = 2.0;
const PITCH_MIN_VOICED_FRACTION: f64 = 0.9;
const EM_ITERATIONS: usize = 5;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

fn cli(args: &[&str]) -> Result<String, String> {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("emphscore").chain(args.iter().copied());
    let code = emphscore_cli::run(argv, &mut out, &mut err);
    if code == 0 {
        Ok(String::from_utf8_lossy(&out).into_owned())
    } else {
        Err(format!("`{}` exited {code}: {}", args.join(" "), String::from_utf8_lossy(&err).trim()))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// Paths of everything criteria 1-3 produce in one working directory.
struct Run {
    topline_report: PathBuf,
    trained_report: PathBuf,
    translation_report: PathBuf,
    model: PathBuf,
    loss: PathBuf,
    sim_dir: PathBuf,
    topline_secs: Duration,
    trained_secs: Duration,
}

fn run_pipeline(root: &Path) -> Result<Run, String> {
    let topline_dir = root.join("topline");
    let train_dir = root.join("train");
    let heldout_dir = root.join("heldout");
    let sim_dir = root.join("sim");
    let model = root.join("model.json");
    let loss = root.join("loss.txt");
    let topline_report = root.join("topline_report.json");
    let trained_report = root.join("trained_report.json");
    let translation_report = root.join("translation_report.json");

    let t = Instant::now();
    cli(&["gen-data", "--n", "25", "--seed", "11", "--out-dir", p(&topline_dir)])?;
    cli(&[
        "evaluate",
        "--manifest",
        p(&topline_dir.join("manifest.jsonl")),
        "--outputs",
        p(&topline_dir.join("outputs_topline.jsonl")),
        "--oracle",
        "--aligner",
        "identity",
        "--jobs",
        "1",
        "--report-out",
        p(&topline_report),
    ])?;
    let topline_secs = t.elapsed();

    let t = Instant::now();
    cli(&["gen-data", "--n", "50", "--seed", "1", "--out-dir", p(&train_dir)])?;
    cli(&["gen-data", "--n", "25", "--seed", "2", "--out-dir", p(&heldout_dir)])?;
    cli(&[
        "train",
        "--manifest",
        p(&train_dir.join("manifest.jsonl")),
        "--model-out",
        p(&model),
        "--loss-out",
        p(&loss),
    ])?;
    cli(&[
        "evaluate",
        "--manifest",
        p(&heldout_dir.join("manifest.jsonl")),
        "--outputs",
        p(&heldout_dir.join("outputs_topline.jsonl")),
        "--model",
        p(&model),
        "--aligner",
        "identity",
        "--report-out",
        p(&trained_report),
    ])?;
    let trained_secs = t.elapsed();

    cli(&[
        "gen-data",
        "--n",
        "25",
        "--vocab",
        "10",
        "--seed",
        "3",
        "--sim-lang",
        "5",
        "--parallel-lines",
        "500",
        "--out-dir",
        p(&sim_dir),
    ])?;
    let lexicon = format!("lexicon:{}", p(&sim_dir.join("parallel.txt")));
    cli(&[
        "evaluate",
        "--manifest",
        p(&sim_dir.join("manifest.jsonl")),
        "--outputs",
        p(&sim_dir.join("outputs_translation.jsonl")),
        "--model",
        p(&model),
        "--aligner",
        &lexicon,
        "--report-out",
        p(&translation_report),
    ])?;

    Ok(Run { topline_report, trained_report, translation_report, model, loss, sim_dir, topline_secs, trained_secs })
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).expect("report readable")).expect("report is JSON")
}

fn micro(report: &Value) -> (f64, usize, usize) {
    let m = &report["micro"];
    (
        m["f1"].as_f64().unwrap(),
        report["counts"]["evaluated"].as_u64().unwrap() as usize,
        report["counts"]["outputs"].as_u64().unwrap() as usize,
    )
}

fn criterion_1(run: &Run) -> Outcome {
    let report = read_json(&run.topline_report);
    let (f1, evaluated, outputs) = micro(&report);
    let secs = run.topline_secs.as_secs_f64();
    Outcome::new(
        f1 == 1.0 && evaluated == 100 && outputs == 100 && run.topline_secs <= Duration::from_secs(TOPLINE_MAX_SECS),
        format!("micro F1 {f1:.3} over {evaluated}/{outputs} utterances in {secs:.1}s (need 1.000 over 100, <= {TOPLINE_MAX_SECS}s)"),
    )
}

fn criterion_2(run: &Run) -> Outcome {
    let report = read_json(&run.trained_report);
    let (f1, evaluated, _) = micro(&report);
    let trace: Vec<f64> = std::fs::read_to_string(&run.loss).unwrap().lines().map(|l| l.parse().unwrap()).collect();
    let monotone = trace.windows(2).all(|w| w[1] <= w[0]);
    let secs = run.trained_secs.as_secs_f64();
    Outcome::new(
        f1 >= TRAINED_MIN_F1
            && evaluated == 100
            && monotone
            && run.model.exists()
            && run.trained_secs <= Duration::from_secs(TRAINED_MAX_SECS),
        format!(
            "held-out word micro F1 {f1:.3} over {evaluated} utterances (need >= {TRAINED_MIN_F1}), \
             loss {:.4} -> {:.4} non-increasing={monotone}, {secs:.1}s (<= {TRAINED_MAX_SECS}s)",
            trace[0],
            trace[trace.len() - 1]
        ),
    )
}

fn criterion_3(run: &Run) -> Outcome {
    let report = read_json(&run.translation_report);
    let (f1, evaluated, _) = micro(&report);

    let manifest = load_manifest(run.sim_dir.join("manifest.jsonl")).unwrap();
    let outputs = load_outputs(run.sim_dir.join("outputs_translation.jsonl")).unwrap();
    let gold: Vec<GoldAlignment> = read_jsonl(run.sim_dir.join("gold_alignment.jsonl")).unwrap();
    let gold: BTreeMap<String, Vec<(usize, usize)>> = gold.into_iter().map(|g| (g.id, g.links)).collect();
    let aligner = Aligner::from_spec(&AlignerSpec::Lexicon(run.sim_dir.join("parallel.txt"))).unwrap();
    let (mut correct, mut total) = (0usize, 0usize);
    for (src, out) in manifest.iter().zip(&outputs) {
        assert_eq!(src.id, out.id);
        let (links, _) = aligner.align(&src.src_sentence, &out.transcript, &src.id).unwrap();
        let predicted: BTreeMap<usize, usize> = links.iter().map(|l| (l.src, l.tgt)).collect();
        for &(s, t) in &gold[&src.id] {
            total += 1;
            if predicted.get(&s) == Some(&t) {
                correct += 1;
            }
        }
    }
    let accuracy = correct as f64 / total as f64;
    Outcome::new(
        f1 >= TRANSLATION_MIN_F1 && evaluated == 100 && accuracy >= TRANSLATION_MIN_LINK_ACCURACY,
        format!(
            "micro F1 {f1:.3} over {evaluated} pairs (need >= {TRANSLATION_MIN_F1}), links match gold on \
             {correct}/{total} = {accuracy:.3} of words (need >= {TRANSLATION_MIN_LINK_ACCURACY})"
        ),
    )
}

/// Mean cross-entropy plus l2/2 * |w|^2, written out independently of the library.
fn reference_loss(data: &[(Vec<Vec<f64>>, Vec<bool>)], w: &[f64], b: f64, l2: f64) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for (rows, labels) in data {
        for (x, &y) in rows.iter().zip(labels) {
            let z: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
            // -[y log s(z) + (1-y) log(1 - s(z))] = softplus(z) - y z
            let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
            total += softplus - if y { z } else { 0.0 };
            n += 1;
        }
    }
    total / n as f64 + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

fn criterion_4() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut loss_gap: f64 = 0.0;
    for seed in 0..GRADIENT_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let utterances = rng.gen_range(1..=3);
        let mut raw = Vec::new();
        for _ in 0..utterances {
            let n = rng.gen_range(2..=20);
            let rows: Vec<Vec<f64>> =
                (0..n).map(|_| (0..FEATURE_DIM).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            raw.push((rows, labels));
        }
        let data: Vec<LabeledFrames> = raw
            .iter()
            .map(|(rows, labels)| {
                LabeledFrames::new(FrameFeatureMatrix::from_rows(rows, FEATURE_DIM).unwrap(), labels.clone()).unwrap()
            })
            .collect();
        let w: Vec<f64> = (0..FEATURE_DIM).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let b = rng.gen_range(-0.5..0.5);
        let l2 = if seed % 2 == 0 { 1e-4 } else { rng.gen_range(0.0..0.1) };

        loss_gap = loss_gap.max((objective(&data, &w, b, l2) - reference_loss(&raw, &w, b, l2)).abs());
        let (gw, gb) = gradient(&data, &w, b, l2);
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(GRADIENT_REL_FLOOR);
        for k in 0..=FEATURE_DIM {
            let numeric = if k < FEATURE_DIM {
                let mut hi = w.clone();
                let mut lo = w.clone();
                hi[k] += FD_EPS;
                lo[k] -= FD_EPS;
                (reference_loss(&raw, &hi, b, l2) - reference_loss(&raw, &lo, b, l2)) / (2.0 * FD_EPS)
            } else {
                (reference_loss(&raw, &w, b + FD_EPS, l2) - reference_loss(&raw, &w, b - FD_EPS, l2)) / (2.0 * FD_EPS)
            };
            let analytic = if k < FEATURE_DIM { gw[k] } else { gb };
            worst = worst.max(rel(analytic, numeric));
        }
    }
    Outcome::new(
        worst <= GRADIENT_MAX_REL_ERR && loss_gap <= 1e-12,
        format!(
            "max relative error {worst:.2e} over {GRADIENT_SEEDS} seeds, eps {FD_EPS:e} (need <= {GRADIENT_MAX_REL_ERR:e}); \
             objective vs reference loss gap {loss_gap:.1e}"
        ),
    )
}

fn criterion_5() -> Outcome {
    let cfg = AggregationConfig::default();
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    for len in 1..=AGGREGATION_MAX_LEN {
        for pattern in 0u32..(1 << len) {
            let probs: Vec<f64> = (0..len).map(|i| if pattern >> i & 1 == 1 { 0.9 } else { 0.1 }).collect();
            let ones = pattern.count_ones() as usize;
            let brute = 2 * ones > len;
            // One word covering the pattern, preceded and followed by a padding frame.
            let mut padded = vec![0.9];
            padded.extend(&probs);
            padded.push(0.9);
            let spans = [WordSpan::new(0, 1, len + 1)];
            let decision = aggregate_to_words(&padded, &spans, &cfg).unwrap()[0];
            checked += 1;
            if decision.emphasized != brute || decision.fraction != ones as f64 / len as f64 {
                mismatches += 1;
            }
        }
    }
    Outcome::new(
        mismatches == 0,
        format!("{mismatches} mismatches over {checked} patterns of length 1-{AGGREGATION_MAX_LEN}"),
    )
}

fn criterion_6() -> Outcome {
    let spec = FrameSpec::default();
    let pitch = PitchConfig::default();
    let mut worst: f64 = 0.0;
    let mut worst_voiced: f64 = 1.0;
    for f in (80..=400).step_by(20) {
        let f = f as f64;
        let samples: Vec<f64> = (0..SAMPLE_RATE)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * f * i as f64 / SAMPLE_RATE as f64).sin())
            .collect();
        let track = estimate_f0(&Waveform::new(samples, SAMPLE_RATE).unwrap(), &spec, &pitch).unwrap();
        let mut errors: Vec<f64> = track.iter().filter(|t| t.voiced).map(|t| (t.f0 - f).abs()).collect();
        worst_voiced = worst_voiced.min(errors.len() as f64 / track.len() as f64);
        if errors.is_empty() {
            worst = f64::INFINITY;
            continue;
        }
        errors.sort_by(f64::total_cmp);
        let m = errors.len();
        let median = if m % 2 == 1 { errors[m / 2] } else { 0.5 * (errors[m / 2 - 1] + errors[m / 2]) };
        worst = worst.max(median);
    }
    Outcome::new(
        worst <= PITCH_MAX_MEDIAN_ERR_HZ && worst_voiced >= PITCH_MIN_VOICED_FRACTION,
        format!(
            "worst per-tone median error {worst:.3} Hz (need <= {PITCH_MAX_MEDIAN_ERR_HZ}), \
             lowest voiced fraction {worst_voiced:.2} (need >= {PITCH_MIN_VOICED_FRACTION})"
        ),
    )
}

fn criterion_7() -> Outcome {
    let toks = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
    let corpus = vec![(toks("das Haus"), toks("the house")), (toks("das Buch"), toks("the book"))];
    let em = train_ibm1(&corpus, EM_ITERATIONS).unwrap();
    let t = em.lexicon.prob("das", "the");
    let ll = &em.log_likelihood;
    let monotone = ll.windows(2).all(|w| w[1] >= w[0]);
    Outcome::new(
        t > 0.5 && monotone,
        format!(
            "t(the|das) = {t:.4} after {EM_ITERATIONS} iterations (need > 0.5), log-likelihood {:.4} -> {:.4} non-decreasing={monotone}",
            ll[0],
            ll[ll.len() - 1]
        ),
    )
}

/// Re-derives micro P/R/F1 from the per-utterance counts of a report.
fn recount_matches(report: &Value) -> Result<(), String> {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for u in report["per_utterance"].as_array().ok_or("per_utterance missing")? {
        tp += u["tp"].as_u64().ok_or("tp missing")?;
        fp += u["fp"].as_u64().ok_or("fp missing")?;
        fn_ += u["fn"].as_u64().ok_or("fn missing")?;
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    let m = &report["micro"];
    let same = m["tp"].as_u64() == Some(tp)
        && m["fp"].as_u64() == Some(fp)
        && m["fn"].as_u64() == Some(fn_)
        && m["precision"].as_f64() == Some(precision)
        && m["recall"].as_f64() == Some(recall)
        && m["f1"].as_f64() == Some(f1);
    if same {
        Ok(())
    } else {
        Err(format!("report micro {m} != recount tp={tp} fp={fp} fn={fn_} p={precision} r={recall} f1={f1}"))
    }
}

fn criterion_8(reports: &[PathBuf]) -> Outcome {
    let failures: Vec<String> = reports
        .iter()
        .filter_map(|path| recount_matches(&read_json(path)).err().map(|e| format!("{}: {e}", path.display())))
        .collect();
    Outcome::new(
        failures.is_empty(),
        if failures.is_empty() { format!("{} reports recount exactly", reports.len()) } else { failures.join("; ") },
    )
}

fn criterion_9(a: &Run, b: &Run) -> Outcome {
    let pairs = [
        ("topline report", &a.topline_report, &b.topline_report),
        ("trained report", &a.trained_report, &b.trained_report),
        ("translation report", &a.translation_report, &b.translation_report),
        ("model", &a.model, &b.model),
    ];
    let differing: Vec<&str> = pairs
        .iter()
        .filter(|(_, x, y)| std::fs::read(x).unwrap() != std::fs::read(y).unwrap())
        .map(|(name, _, _)| *name)
        .collect();
    Outcome::new(
        differing.is_empty(),
        if differing.is_empty() {
            "reports and model byte-identical across two runs".to_string()
        } else {
            format!("differs between runs: {}", differing.join(", "))
        },
    )
}

fn main() {
    let first_dir = tempfile::tempdir().expect("temp dir");
    let second_dir = tempfile::tempdir().expect("temp dir");
    let first = run_pipeline(first_dir.path());
    let second = run_pipeline(second_dir.path());

    let mut outcomes: Vec<(u32, &str, Outcome)> = Vec::new();
    match (&first, &second) {
        (Ok(a), Ok(b)) => {
            outcomes.push((1, "oracle topline exactness", criterion_1(a)));
            outcomes.push((2, "trained classifier on held-out self-pairs", criterion_2(a)));
            outcomes.push((3, "simulated translation end to end", criterion_3(a)));
            outcomes.push((4, "gradient vs finite differences", criterion_4()));
            outcomes.push((5, "strict majority aggregation", criterion_5()));
            outcomes.push((6, "pitch accuracy on pure tones", criterion_6()));
            outcomes.push((7, "IBM-1 EM sanity", criterion_7()));
            let reports: Vec<PathBuf> = [a, b]
                .iter()
                .flat_map(|r| [r.topline_report.clone(), r.trained_report.clone(), r.translation_report.clone()])
                .collect();
            outcomes.push((8, "report recount", criterion_8(&reports)));
            outcomes.push((9, "determinism", criterion_9(a, b)));
        }
        _ => {
            let err = first.err().or(second.err()).unwrap_or_default();
            for (n, name) in [
                (1, "oracle topline exactness"),
                (2, "trained classifier"),
                (3, "simulated translation"),
                (8, "report recount"),
                (9, "determinism"),
            ] {
                outcomes.push((n, name, Outcome::new(false, format!("pipeline failed: {err}"))));
            }
            outcomes.push((4, "gradient vs finite differences", criterion_4()));
            outcomes.push((5, "strict majority aggregation", criterion_5()));
            outcomes.push((6, "pitch accuracy on pure tones", criterion_6()));
            outcomes.push((7, "IBM-1 EM sanity", criterion_7()));
            outcomes.sort_by_key(|o| o.0);
        }
    }

    let mut failed = 0;
    for (n, name, o) in &outcomes {
        println!("[{}] criterion {n}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
