use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use emphscore_core::align::{similarity_matrix, Aligner, AlignerSpec, Scorer};
use emphscore_core::audio::{frame_count, read_wav, FrameSpec, SAMPLE_RATE};
use emphscore_core::classifier::{
    aggregate_to_words, evaluate_classifier, predict_frames, train, AggregationConfig, ClassifierModel, LabeledFrames,
    LabeledUtterance, TrainConfig,
};
use emphscore_core::features::{build_features, feature_fingerprint, PitchConfig};
use emphscore_core::pipeline::{
    evaluate_dataset, label_path_for, load_manifest, load_outputs, read_labels, EmphasisDetector, EvalConfig,
    GoldOracle, ModelDetector, UtteranceRecord,
};
use emphscore_core::segment::{segment_by_silence, spans_from_timestamps, SilenceConfig, TimedWord, WordSpan};
use emphscore_core::synth::{builtin_vocab, gen_dataset, gen_translation_set, SynthConfig, VOICES};

use crate::{AlignArgs, ClassifyArgs, Cli, Command, EvaluateArgs, Failure, GenDataArgs, Overlay, TrainArgs};

type CmdResult = Result<String, Failure>;

pub(crate) fn dispatch(cli: &Cli, err: &mut dyn Write) -> CmdResult {
    let overlay = Overlay::load(cli.config.as_deref())?;
    match &cli.command {
        Command::GenData(a) => gen_data(a, &overlay),
        Command::Train(a) => train_cmd(a, &pitch_config(cli, &overlay)?, &overlay, err),
        Command::Evaluate(a) => evaluate(a, &pitch_config(cli, &overlay)?, &overlay),
        Command::Classify(a) => classify(a, &pitch_config(cli, &overlay)?),
        Command::Align(a) => align(a, &overlay),
    }
}

fn pitch_config(cli: &Cli, overlay: &Overlay) -> Result<PitchConfig, Failure> {
    let d = PitchConfig::default();
    let pitch = PitchConfig {
        f0_min: overlay.pick(cli.f0_min, "f0-min", d.f0_min)?,
        f0_max: overlay.pick(cli.f0_max, "f0-max", d.f0_max)?,
        yin_threshold: overlay.pick(cli.yin_threshold, "yin-threshold", d.yin_threshold)?,
    };
    pitch.validate(SAMPLE_RATE)?;
    Ok(pitch)
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure::internal(format!("cannot write {}: {e}", path.display())))
}

fn load_vocab(spec: &str) -> Result<Vec<String>, Failure> {
    if let Ok(n) = spec.parse::<usize>() {
        return Ok(builtin_vocab(n)?);
    }
    let text = std::fs::read_to_string(spec).map_err(|e| Failure::invalid(format!("--vocab {spec}: {e}")))?;
    Ok(text.split_whitespace().map(str::to_string).collect())
}

fn gen_data(a: &GenDataArgs, overlay: &Overlay) -> CmdResult {
    let n: usize = overlay.pick(a.n, "n", 25)?;
    if n < 2 {
        return Err(Failure::invalid(format!("--n must be at least 2, got {n}")));
    }
    let vocab = load_vocab(&overlay.pick(a.vocab.clone(), "vocab", "20".to_string())?)?;
    let seed = overlay.pick(a.seed, "seed", 0u64)?;
    let sim_lang: Option<u64> = match a.sim_lang {
        Some(s) => Some(s),
        None => overlay.get("sim-lang")?,
    };
    let parallel_lines = overlay.pick(a.parallel_lines, "parallel-lines", 500usize)?;
    if sim_lang.is_some() && parallel_lines == 0 {
        return Err(Failure::invalid("--parallel-lines must be at least 1"));
    }

    let cfg = SynthConfig::default();
    let dataset = gen_dataset(n, &vocab, &cfg, seed, &a.out_dir)?;
    let words: usize = dataset.records.iter().map(|r| r.src_sentence.len()).sum();
    let emphasized: usize = dataset.records.iter().map(|r| r.gold_emphasis.len()).sum();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "generated {} utterances ({n} transcripts x {} voices, {words} words, {emphasized} emphasized) in {}",
        dataset.records.len(),
        VOICES.len(),
        a.out_dir.display()
    );
    if let Some(lang_seed) = sim_lang {
        let set = gen_translation_set(&dataset, &vocab, &cfg, lang_seed, parallel_lines, &a.out_dir)?;
        let _ = writeln!(s, "simulated language: {} outputs, {} parallel lines", set.outputs.len(), set.parallel.len());
    }
    Ok(s)
}

/// Features and labelled spans of one manifest record. Spans come from the
/// `.lab` sidecar when present, otherwise from silence segmentation.
fn labeled_utterance(r: &UtteranceRecord, spec: &FrameSpec, pitch: &PitchConfig) -> Result<LabeledUtterance, Failure> {
    let audio =
        r.audio_path.as_deref().ok_or_else(|| Failure::invalid(format!("record {} has no audio_path", r.id)))?;
    let waveform = read_wav(audio)?;
    let n_frames = frame_count(waveform.len(), spec)?;
    let lab = label_path_for(audio);
    let spans = if lab.exists() {
        let labels = read_labels(&lab)?;
        if labels.len() != r.src_sentence.len() {
            return Err(Failure::invalid(format!(
                "{}: {} labelled words, transcript has {}",
                lab.display(),
                labels.len(),
                r.src_sentence.len()
            )));
        }
        let timed: Vec<TimedWord> = labels.iter().map(|l| TimedWord::new(l.token.clone(), l.start, l.end)).collect();
        spans_from_timestamps(&timed, spec, n_frames)?
    } else {
        segment_by_silence(&waveform, r.src_sentence.len(), spec, &SilenceConfig::default())?
    };
    let emphasized: Vec<bool> = (0..r.src_sentence.len()).map(|i| r.gold_emphasis.contains(&i)).collect();
    let features = build_features(&waveform, spec, pitch)?;
    Ok(LabeledUtterance::new(features, spans, emphasized)?)
}

fn train_cmd(a: &TrainArgs, pitch: &PitchConfig, overlay: &Overlay, err: &mut dyn Write) -> CmdResult {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: overlay.pick(a.lr, "lr", d.learning_rate)?,
        epochs: overlay.pick(a.epochs, "epochs", d.epochs)?,
        l2: overlay.pick(a.l2, "l2", d.l2)?,
        seed: overlay.pick(a.seed, "seed", d.seed)?,
        full_batch: !overlay.switch(a.mini_batch, "mini-batch")?,
    };
    cfg.validate()?;
    if cfg.epochs == 0 {
        let _ = writeln!(err, "warning: --epochs 0 leaves every weight at zero; all frames will score 0.5");
    }

    let spec = FrameSpec::default();
    let records = load_manifest(&a.manifest)?;
    if records.is_empty() {
        return Err(Failure::invalid(format!("{} has no records", a.manifest.display())));
    }
    let set = records
        .iter()
        .map(|r| {
            labeled_utterance(r, &spec, pitch).map_err(|f| Failure { message: format!("{}: {}", r.id, f.message), ..f })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let frames: Vec<LabeledFrames> = set.iter().map(|u| u.frames.clone()).collect();
    let trained = train(&frames, &cfg, &feature_fingerprint(&spec, pitch))?;
    let eval = evaluate_classifier(&trained.model, &set, &AggregationConfig::default())?;

    write_file(&a.model_out, &trained.model.to_json())?;
    if let Some(path) = &a.loss_out {
        let trace: String = trained.loss_trace.iter().map(|l| format!("{l:.10}\n")).collect();
        write_file(path, &trace)?;
    }

    let n_frames: usize = frames.iter().map(|f| f.labels.len()).sum();
    let mut s = String::new();
    let _ = writeln!(s, "trained on {} utterances ({n_frames} frames), {} epochs", set.len(), cfg.epochs);
    let _ = writeln!(s, "final loss {:.6}", trained.loss_trace.last().copied().unwrap_or(f64::NAN));
    let _ = writeln!(s, "{:<8}{:>10}{:>10}{:>10}", "", "precision", "recall", "f1");
    for (name, level) in [("frame", eval.frame), ("word", eval.word)] {
        let _ = writeln!(
            s,
            "{name:<8}{:>10.3}{:>10.3}{:>10.3}",
            level.scores.precision, level.scores.recall, level.scores.f1
        );
    }
    let _ = writeln!(s, "model written to {}", a.model_out.display());
    Ok(s)
}

fn parse_aligner(spec: &str) -> Result<Aligner, Failure> {
    let spec: AlignerSpec = spec.parse()?;
    Ok(Aligner::from_spec(&spec)?)
}

fn evaluate(a: &EvaluateArgs, pitch: &PitchConfig, overlay: &Overlay) -> CmdResult {
    let aligner = parse_aligner(&overlay.pick(a.aligner.clone(), "aligner", "identity".to_string())?)?;
    let jobs = overlay.pick(a.jobs, "jobs", 1usize)?;
    if jobs == 0 {
        return Err(Failure::invalid("--jobs must be at least 1"));
    }
    let cfg = EvalConfig {
        frame_spec: FrameSpec::default(),
        silence: SilenceConfig::default(),
        fail_fast: overlay.switch(a.fail_fast, "fail-fast")?,
        jobs,
    };
    let detector: Box<dyn EmphasisDetector> = match &a.model {
        Some(path) => {
            let fp = feature_fingerprint(&cfg.frame_spec, pitch);
            let model = ClassifierModel::load(path, &fp)?;
            Box::new(ModelDetector::new(model, cfg.frame_spec, *pitch)?)
        }
        None => Box::new(GoldOracle),
    };
    let manifest = load_manifest(&a.manifest)?;
    let outputs = load_outputs(&a.outputs)?;
    let report = evaluate_dataset(&manifest, &outputs, detector.as_ref(), &aligner, &cfg)?;
    write_file(&a.report_out, &report.to_json())?;

    let mut s = report.summary_table();
    for skipped in &report.skipped {
        let _ = writeln!(s, "skipped {}: {}", skipped.id, skipped.error);
    }
    let _ = writeln!(s, "report written to {}", a.report_out.display());
    Ok(s)
}

fn classify(a: &ClassifyArgs, pitch: &PitchConfig) -> CmdResult {
    let spec = FrameSpec::default();
    let model = ClassifierModel::load(&a.model, &feature_fingerprint(&spec, pitch))?;
    let waveform = read_wav(&a.wav)?;
    let features = build_features(&waveform, &spec, pitch)?;
    if let Some(path) = &a.dump_features {
        write_file(path, &features.to_tsv())?;
    }
    let probs = predict_frames(&model, &features)?;
    let agg = AggregationConfig::default();

    let mut s = String::new();
    let n = probs.len();
    let above = probs.iter().filter(|&&p| p > agg.decision_cutoff).count();
    let mean = probs.iter().sum::<f64>() / n as f64;
    let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let _ = writeln!(
        s,
        "frames={n} mean_prob={mean:.3} max_prob={max:.3} emphasized_frames={above} ({:.1}%)",
        100.0 * above as f64 / n as f64
    );
    if a.frames {
        let _ = writeln!(s, "frame\ttime\tprob");
        for (i, p) in probs.iter().enumerate() {
            let _ = writeln!(s, "{i}\t{:.2}\t{p:.4}", i as f64 * spec.hop_secs());
        }
    }
    if let Some(path) = &a.spans {
        let labels = read_labels(path)?;
        let timed: Vec<TimedWord> = labels.iter().map(|l| TimedWord::new(l.token.clone(), l.start, l.end)).collect();
        let spans: Vec<WordSpan> = spans_from_timestamps(&timed, &spec, n)?;
        let decisions = aggregate_to_words(&probs, &spans, &agg)?;
        let _ = writeln!(s, "word\ttoken\tframes\tfraction\tdecision");
        for ((i, label), (span, d)) in labels.iter().enumerate().zip(spans.iter().zip(&decisions)) {
            let _ = writeln!(
                s,
                "{i}\t{}\t{}-{}\t{:.3}\t{}",
                label.token,
                span.start_frame,
                span.end_frame,
                d.fraction,
                if d.emphasized { "EMPHASIZED" } else { "-" }
            );
        }
    }
    Ok(s)
}

fn align(a: &AlignArgs, overlay: &Overlay) -> CmdResult {
    let aligner = parse_aligner(&overlay.pick(a.aligner.clone(), "aligner", "chargram".to_string())?)?;
    let src: Vec<&str> = a.src.split_whitespace().collect();
    let tgt: Vec<&str> = a.tgt.split_whitespace().collect();
    if src.is_empty() || tgt.is_empty() {
        return Err(Failure::invalid("--src and --tgt must each contain at least one token"));
    }
    if let Some(path) = &a.lexicon_out {
        match aligner.scorer() {
            Scorer::Lexicon(lex) => write_file(path, &lex.to_tsv())?,
            _ => return Err(Failure::invalid("--lexicon-out needs a lexicon:PATH aligner")),
        }
    }
    let (links, identity) = aligner.align(&src, &tgt, &a.pair_id)?;

    let mut s = String::new();
    if identity {
        let _ = writeln!(s, "identical after normalization; diagonal links");
    } else {
        let m = similarity_matrix(&src, &tgt, aligner.scorer(), &a.pair_id)?;
        let _ = write!(s, "{:<12}", "");
        for t in &tgt {
            let _ = write!(s, "{t:>12}");
        }
        s.push('\n');
        for (i, w) in src.iter().enumerate() {
            let _ = write!(s, "{w:<12}");
            for j in 0..tgt.len() {
                let _ = write!(s, "{:>12.3}", m.get(i, j));
            }
            s.push('\n');
        }
    }
    for l in &links {
        let _ = writeln!(s, "{} {} -> {} {} ({:.3})", l.src, src[l.src], l.tgt, tgt[l.tgt], l.score);
    }
    let _ = writeln!(s, "{} links", links.len());
    Ok(s)
}
