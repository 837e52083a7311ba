//! Plain-Rust side of the browser demo, kept free of wasm types so it can be
//! tested natively.

use std::sync::OnceLock;

use emphscore_core::align::{expected_emphasis, train_ibm1, Aligner, Lexicon, Scorer};
use emphscore_core::audio::{frame_count, FrameSpec, Waveform};
use emphscore_core::classifier::{
    aggregate_to_words, predict_frames, train, AggregationConfig, ClassifierModel, LabeledFrames, LabeledUtterance,
    TrainConfig,
};
use emphscore_core::features::{
    build_features, estimate_f0, feature_fingerprint, rms_energy_db, FrameFeatureMatrix, PitchConfig,
};
use emphscore_core::segment::{spans_from_timestamps, TimedWord, WordSpan};
use emphscore_core::synth::{
    builtin_vocab, gen_parallel_corpus, gen_utterance, plan_transcripts, render_dataset, seeded_permutation,
    translation_with_permutation, GeneratedUtterance, SimLang, SynthConfig, VOICES,
};
use emphscore_core::{Error, Result};
use serde::Serialize;

/// Vocabulary of the demo's simulated language and its training corpus.
pub const DEMO_VOCAB: usize = 20;
const LANG_SEED: u64 = 5;
const TRAIN_TRANSCRIPTS: usize = 16;
const PARALLEL_LINES: usize = 500;

fn spec() -> FrameSpec {
    FrameSpec::default()
}

fn timed(u: &GeneratedUtterance) -> Vec<TimedWord> {
    u.words.iter().map(|w| TimedWord::new(w.token.clone(), w.start, w.end)).collect()
}

fn word_spans(u: &GeneratedUtterance) -> Result<Vec<WordSpan>> {
    spans_from_timestamps(&timed(u), &spec(), frame_count(u.waveform.len(), &spec())?)
}

/// The classifier every demo call shares, trained on first use.
pub fn model() -> Result<&'static ClassifierModel> {
    static MODEL: OnceLock<ClassifierModel> = OnceLock::new();
    if let Some(m) = MODEL.get() {
        return Ok(m);
    }
    let pitch = PitchConfig::default();
    let vocab = builtin_vocab(DEMO_VOCAB)?;
    let utterances = render_dataset(&plan_transcripts(TRAIN_TRANSCRIPTS, &vocab, 1)?, &SynthConfig::default())?;
    let mut frames: Vec<LabeledFrames> = Vec::with_capacity(utterances.len());
    for u in &utterances {
        let emphasized: Vec<bool> = u.words.iter().map(|w| w.emphasized).collect();
        let features = build_features(&u.waveform, &spec(), &pitch)?;
        frames.push(LabeledUtterance::new(features, word_spans(u)?, emphasized)?.frames);
    }
    let trained = train(&frames, &TrainConfig::default(), &feature_fingerprint(&spec(), &pitch))?;
    Ok(MODEL.get_or_init(|| trained.model))
}

struct Lang {
    lang: SimLang,
    lexicon: Lexicon,
}

fn lang() -> Result<&'static Lang> {
    static LANG: OnceLock<Lang> = OnceLock::new();
    if let Some(l) = LANG.get() {
        return Ok(l);
    }
    let vocab = builtin_vocab(DEMO_VOCAB)?;
    let lang = SimLang::generate(&vocab, LANG_SEED)?;
    let corpus = gen_parallel_corpus(PARALLEL_LINES, &vocab, &lang, LANG_SEED + 1)?;
    let lexicon = train_ibm1(&corpus, 10)?.lexicon;
    Ok(LANG.get_or_init(|| Lang { lang, lexicon }))
}

pub fn tokenize(sentence: &str) -> Vec<String> {
    sentence.split_whitespace().map(str::to_string).collect()
}

fn voice_index(voice: &str) -> Result<usize> {
    VOICES
        .iter()
        .position(|v| *v == voice)
        .ok_or_else(|| Error::InvalidInput(format!("unknown voice {voice:?}; expected one of {}", VOICES.join(", "))))
}

#[derive(Debug, Serialize)]
pub struct Vocabulary {
    pub words: Vec<String>,
    pub simlang: Vec<(String, String)>,
    pub voices: Vec<&'static str>,
}

pub fn vocabulary() -> Result<Vocabulary> {
    let l = lang()?;
    let words = builtin_vocab(DEMO_VOCAB)?;
    let simlang = words.iter().map(|w| Ok((w.clone(), l.lang.translate(w)?.to_string()))).collect::<Result<_>>()?;
    Ok(Vocabulary { words, simlang, voices: VOICES.to_vec() })
}

#[derive(Debug, Serialize)]
pub struct WordView {
    pub token: String,
    pub start_frame: usize,
    pub end_frame: usize,
    pub emphasized: bool,
    pub fraction: f64,
    pub predicted: bool,
}

/// Contours and classifier output for one utterance.
#[derive(Debug, Serialize)]
pub struct Analysis {
    pub hop_secs: f64,
    pub f0: Vec<f64>,
    pub energy_db: Vec<f64>,
    pub probability: Vec<f64>,
    pub words: Vec<WordView>,
}

fn analyze_utterance(u: &GeneratedUtterance) -> Result<Analysis> {
    let pitch = PitchConfig::default();
    let features: FrameFeatureMatrix = build_features(&u.waveform, &spec(), &pitch)?;
    let probability = predict_frames(model()?, &features)?;
    let spans = word_spans(u)?;
    let decisions = aggregate_to_words(&probability, &spans, &AggregationConfig::default())?;
    let words = u
        .words
        .iter()
        .zip(spans.iter().zip(&decisions))
        .map(|(w, (s, d))| WordView {
            token: w.token.clone(),
            start_frame: s.start_frame,
            end_frame: s.end_frame,
            emphasized: w.emphasized,
            fraction: d.fraction,
            predicted: d.emphasized,
        })
        .collect();
    Ok(Analysis {
        hop_secs: spec().hop_secs(),
        f0: estimate_f0(&u.waveform, &spec(), &pitch)?.iter().map(|p| p.f0).collect(),
        energy_db: rms_energy_db(&u.waveform, &spec())?,
        probability,
        words,
    })
}

fn render(sentence: &str, emphasized: usize, voice: &str) -> Result<GeneratedUtterance> {
    gen_utterance("demo", &tokenize(sentence), &[emphasized], voice_index(voice)?, &SynthConfig::default())
}

/// Synthesizes `sentence` with one emphasized word and runs the classifier over it.
pub fn analyze(sentence: &str, emphasized: usize, voice: &str) -> Result<Analysis> {
    analyze_utterance(&render(sentence, emphasized, voice)?)
}

/// Raw samples of the same rendition, for playback.
pub fn samples(sentence: &str, emphasized: usize, voice: &str) -> Result<Waveform> {
    Ok(render(sentence, emphasized, voice)?.waveform)
}

#[derive(Debug, Serialize)]
pub struct AlignmentView {
    pub identity: bool,
    pub matrix: Vec<Vec<f64>>,
    pub links: Vec<(usize, usize, f64)>,
}

fn scorer(name: &str) -> Result<Scorer> {
    match name {
        "chargram" => Ok(Scorer::Chargram),
        "lexicon" => Ok(Scorer::Lexicon(lang()?.lexicon.clone())),
        other => Err(Error::UnknownScorer(other.to_string())),
    }
}

/// Similarity heat map and mutual-argmax links for a sentence pair.
pub fn align(src: &str, tgt: &str, scorer_name: &str) -> Result<AlignmentView> {
    let (src, tgt) = (tokenize(src), tokenize(tgt));
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::InvalidInput("both sentences need at least one word".into()));
    }
    let s = scorer(scorer_name)?;
    let matrix = emphscore_core::align::similarity_matrix(&src, &tgt, &s, "demo")?.to_rows();
    let (links, identity) = Aligner::new(s).align(&src, &tgt, "demo")?;
    Ok(AlignmentView { identity, matrix, links: links.iter().map(|l| (l.src, l.tgt, l.score)).collect() })
}

/// One simulated translation scored end to end.
#[derive(Debug, Serialize)]
pub struct TranslationView {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub target_voice: &'static str,
    pub links: Vec<(usize, usize, f64)>,
    pub expected: Vec<usize>,
    pub predicted: Vec<usize>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub analysis: Analysis,
}

/// Translates into the simulated language with a seeded word order, renders the
/// target, and scores whether the emphasis survived.
pub fn translate(sentence: &str, emphasized: usize, voice: &str, order_seed: u64) -> Result<TranslationView> {
    let l = lang()?;
    let source = render(sentence, emphasized, voice)?;
    let perm = seeded_permutation(source.words.len(), order_seed);
    let pair = translation_with_permutation(&source, &l.lang, &perm, &SynthConfig::default())?;
    let src_tokens = source.record.src_sentence.clone();
    let target = pair.output.transcript.clone();

    let (links, _) = Aligner::new(Scorer::Lexicon(l.lexicon.clone())).align(&src_tokens, &target, "demo")?;
    let expected: Vec<usize> =
        expected_emphasis(&source.record.gold_emphasis, &links, src_tokens.len())?.into_iter().collect();
    let analysis = analyze_utterance(&pair.target)?;
    let predicted: Vec<usize> =
        analysis.words.iter().enumerate().filter(|(_, w)| w.predicted).map(|(i, _)| i).collect();
    let tp = predicted.iter().filter(|p| expected.contains(p)).count();
    let target_voice = VOICES[voice_index(&pair.target.record.voice)?];
    Ok(TranslationView {
        source: src_tokens,
        target,
        target_voice,
        links: links.iter().map(|k| (k.src, k.tgt, k.score)).collect(),
        fp: predicted.len() - tp,
        fn_: expected.len() - tp,
        tp,
        expected,
        predicted,
        analysis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analysis_shapes_line_up() {
        let a = analyze("river garden music", 1, "v2").unwrap();
        assert_eq!(a.f0.len(), a.energy_db.len());
        assert_eq!(a.f0.len(), a.probability.len());
        assert_eq!(a.words.len(), 3);
        assert!(a.words[1].emphasized && !a.words[0].emphasized);
        assert!(a.words.windows(2).all(|w| w[0].end_frame <= w[1].start_frame));
        assert!(a.words.last().unwrap().end_frame <= a.f0.len());
    }

    #[test]
    fn bad_requests_are_errors() {
        assert!(analyze("", 0, "v1").is_err());
        assert!(analyze("river garden", 2, "v1").is_err());
        assert!(analyze("river garden", 0, "v9").is_err());
        assert!(align("a", "b", "bert").is_err());
        assert!(translate("river unknownword", 0, "v1", 1).is_err());
    }

    #[test]
    fn identical_sentences_take_the_fast_path() {
        let v = align("The cat", "the cat.", "chargram").unwrap();
        assert!(v.identity);
        assert_eq!(v.links.iter().map(|l| (l.0, l.1)).collect::<Vec<_>>(), vec![(0, 0), (1, 1)]);
    }
}
