//! Deterministic speech-like test material with known emphasis.
//!
//! Words are harmonic tones separated by silence. An emphasized word is
//! higher, longer and louder than it would otherwise be. Each token gets a
//! hashed pitch offset so absolute pitch alone does not give emphasis away.
//! A simulated language (a bijective token map plus a seeded word-order
//! permutation) stands in for translation with exact gold alignments.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::align::SentencePair;
use crate::audio::{write_wav, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::pipeline::{format_labels, label_path_for, to_jsonl, OutputRecord, UtteranceRecord, WordLabel};

pub const VOICES: [&str; 4] = ["v1", "v2", "v3", "v4"];

const HARMONICS: [f64; 3] = [1.0, 0.5, 0.25];
const ATTACK: f64 = 0.015;
const RELEASE: f64 = 0.030;
const EDGE_SILENCE: f64 = 0.10;
const AMP_JITTER_DB: f64 = 0.2;
const F0_JITTER: f64 = 0.005;

/// Built-in vocabulary, sliced by `--vocab N`.
pub const BUILTIN_VOCAB: [&str; 40] = [
    "time", "water", "people", "house", "river", "garden", "music", "window", "yellow", "morning", "paper", "winter",
    "silver", "market", "island", "doctor", "letter", "forest", "summer", "coffee", "mountain", "orange", "picture",
    "station", "teacher", "village", "animal", "basket", "candle", "dinner", "engine", "finger", "guitar", "hammer",
    "jacket", "kitten", "lemon", "marble", "needle", "pencil",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub base_f0: [f64; 4],
    pub word_duration: f64,
    pub gap: f64,
    pub f0_factor: f64,
    pub duration_factor: f64,
    pub gain_db: f64,
    /// Peak amplitude of an unemphasized word.
    pub amplitude: f64,
    /// Half-width of the hashed per-token pitch offset, as a fraction.
    pub f0_spread: f64,
    pub jitter_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            base_f0: [110.0, 150.0, 200.0, 260.0],
            word_duration: 0.25,
            gap: 0.08,
            f0_factor: 1.3,
            duration_factor: 1.4,
            gain_db: 6.0,
            amplitude: 0.25,
            f0_spread: 0.15,
            jitter_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.f0_factor > 1.0
            && self.duration_factor > 1.0
            && self.gain_db > 0.0
            && self.word_duration > ATTACK + RELEASE
            && self.gap >= 0.05
            && self.amplitude > 0.0
            && self.amplitude * 10f64.powf(self.gain_db / 20.0) * 10f64.powf(AMP_JITTER_DB / 20.0) <= 1.0
            && (0.0..1.0).contains(&self.f0_spread)
            && self.base_f0.iter().all(|f| *f > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid synthesis config {self:?}")))
        }
    }
}

/// FNV-1a, stable across platforms and releases.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Multiplicative pitch offset of a token, in `[1 - spread, 1 + spread]`.
pub fn token_f0_offset(token: &str, spread: f64) -> f64 {
    let u = (stable_hash(token.as_bytes()) % 2001) as f64 / 1000.0 - 1.0;
    1.0 + u * spread
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordMeta {
    pub token: String,
    pub start: f64,
    pub end: f64,
    pub emphasized: bool,
    /// Nominal (pre-jitter) fundamental of the word in Hz.
    pub f0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedUtterance {
    pub waveform: Waveform,
    pub words: Vec<WordMeta>,
    pub record: UtteranceRecord,
}

impl GeneratedUtterance {
    pub fn labels(&self) -> Vec<WordLabel> {
        self.words
            .iter()
            .map(|w| WordLabel { token: w.token.clone(), start: w.start, end: w.end, emphasized: w.emphasized })
            .collect()
    }

    pub fn word_times(&self) -> Vec<[f64; 2]> {
        self.words.iter().map(|w| [w.start, w.end]).collect()
    }
}

fn raised_cosine(x: f64) -> f64 {
    0.5 - 0.5 * (PI * x.clamp(0.0, 1.0)).cos()
}

/// Renders one utterance. Identical arguments give bit-identical audio.
pub fn gen_utterance(
    id: &str,
    tokens: &[String],
    emphasized: &[usize],
    voice: usize,
    cfg: &SynthConfig,
) -> Result<GeneratedUtterance> {
    cfg.validate()?;
    if tokens.is_empty() {
        return Err(Error::InvalidInput("cannot render an empty sentence".into()));
    }
    if emphasized.is_empty() {
        return Err(Error::InvalidInput("at least one word must be emphasized".into()));
    }
    if let Some(&index) = emphasized.iter().find(|&&i| i >= tokens.len()) {
        return Err(Error::InvalidIndex { index, len: tokens.len() });
    }
    if voice >= VOICES.len() {
        return Err(Error::InvalidInput(format!("voice {voice} out of range 0..{}", VOICES.len())));
    }

    let mut key = format!("{voice}|{emphasized:?}|");
    for t in tokens {
        key.push_str(t);
        key.push('\u{1f}');
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(key.as_bytes()) ^ cfg.jitter_seed);

    let sr = SAMPLE_RATE as f64;
    let secs = |n: usize| n as f64 / sr;
    let edge = (EDGE_SILENCE * sr).round() as usize;
    let gap = (cfg.gap * sr).round() as usize;
    let mut samples = vec![0.0; edge];
    let mut words = Vec::with_capacity(tokens.len());

    for (i, token) in tokens.iter().enumerate() {
        if i > 0 {
            samples.extend(std::iter::repeat_n(0.0, gap));
        }
        let emph = emphasized.contains(&i);
        let dur = cfg.word_duration * if emph { cfg.duration_factor } else { 1.0 };
        let n = (dur * sr).round() as usize;
        let f0 = cfg.base_f0[voice] * token_f0_offset(token, cfg.f0_spread) * if emph { cfg.f0_factor } else { 1.0 };
        let gain_db = if emph { cfg.gain_db } else { 0.0 } + rng.gen_range(-AMP_JITTER_DB..=AMP_JITTER_DB);
        let amp = cfg.amplitude * 10f64.powf(gain_db / 20.0);
        let detune = 1.0 + rng.gen_range(-F0_JITTER..=F0_JITTER);
        let vib_phase = rng.gen_range(0.0..2.0 * PI);
        let norm: f64 = HARMONICS.iter().sum();

        let start = samples.len();
        let mut phase = 0.0f64;
        for k in 0..n {
            let t = k as f64 / sr;
            let u = k as f64 / n as f64;
            // gentle rise-fall contour plus slow vibrato
            let contour = 1.0 + 0.02 * ((PI * u).sin() - 0.5) + F0_JITTER * (2.0 * PI * 5.0 * t + vib_phase).sin();
            let inst = f0 * detune * contour;
            let env = raised_cosine(t / ATTACK) * raised_cosine((dur - t) / RELEASE);
            let value: f64 =
                HARMONICS.iter().enumerate().map(|(h, a)| a * ((h + 1) as f64 * phase).sin()).sum::<f64>() / norm;
            samples.push(amp * env * value);
            phase = (phase + 2.0 * PI * inst / sr) % (2.0 * PI * 4.0);
        }
        words.push(WordMeta {
            token: token.clone(),
            start: secs(start),
            end: secs(samples.len()),
            emphasized: emph,
            f0,
        });
    }
    samples.extend(std::iter::repeat_n(0.0, edge));

    let record = UtteranceRecord {
        id: id.to_string(),
        src_sentence: tokens.to_vec(),
        gold_emphasis: {
            let set: BTreeSet<usize> = emphasized.iter().copied().collect();
            set.into_iter().collect()
        },
        voice: VOICES[voice].to_string(),
        audio_path: None,
    };
    Ok(GeneratedUtterance { waveform: Waveform::new(samples, SAMPLE_RATE)?, words, record })
}

/// One transcript of the dataset: a sentence and its emphasized position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    pub tokens: Vec<String>,
    pub emphasized: Vec<usize>,
}

fn sample_sentence(rng: &mut ChaCha8Rng, vocab: &[String]) -> Vec<String> {
    let max_len = vocab.len().min(8);
    let len = rng.gen_range(3..=max_len);
    vocab.choose_multiple(rng, len).cloned().collect()
}

fn check_vocab(vocab: &[String]) -> Result<()> {
    let unique: BTreeSet<&String> = vocab.iter().collect();
    if vocab.len() < 5 || unique.len() != vocab.len() {
        return Err(Error::InvalidInput(format!(
            "vocabulary needs at least 5 distinct tokens, got {} ({} distinct)",
            vocab.len(),
            unique.len()
        )));
    }
    Ok(())
}

/// Draws `n` transcripts in groups that share one sentence but emphasize
/// distinct positions (two per group, three in the last group when `n` is odd).
pub fn plan_transcripts(n: usize, vocab: &[String], seed: u64) -> Result<Vec<Transcript>> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 sentences, got {n}")));
    }
    check_vocab(vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = n / 2;
    let mut used: BTreeSet<Vec<String>> = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    for g in 0..groups {
        let size = if g + 1 == groups { n - 2 * (groups - 1) } else { 2 };
        let mut sentence = sample_sentence(&mut rng, vocab);
        for _ in 0..100 {
            if !used.contains(&sentence) {
                break;
            }
            sentence = sample_sentence(&mut rng, vocab);
        }
        used.insert(sentence.clone());
        let positions: Vec<usize> = (0..sentence.len()).collect();
        for &p in positions.choose_multiple(&mut rng, size) {
            out.push(Transcript { tokens: sentence.clone(), emphasized: vec![p] });
        }
    }
    Ok(out)
}

pub fn utterance_id(transcript: usize, voice: usize) -> String {
    format!("utt{transcript:04}_{}", VOICES[voice])
}

/// Every transcript rendered in every voice, in manifest order.
pub fn render_dataset(transcripts: &[Transcript], cfg: &SynthConfig) -> Result<Vec<GeneratedUtterance>> {
    let mut out = Vec::with_capacity(transcripts.len() * VOICES.len());
    for (i, t) in transcripts.iter().enumerate() {
        for v in 0..VOICES.len() {
            out.push(gen_utterance(&utterance_id(i, v), &t.tokens, &t.emphasized, v, cfg)?);
        }
    }
    Ok(out)
}

fn write_utterance(u: &GeneratedUtterance, dir: &Path, rel: &str) -> Result<()> {
    let path = dir.join(rel);
    write_wav(&path, &u.waveform)?;
    std::fs::write(label_path_for(&path), format_labels(&u.labels()))?;
    Ok(())
}

/// What [`gen_dataset`] wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<UtteranceRecord>,
    pub topline_outputs: Vec<OutputRecord>,
    pub utterances: Vec<GeneratedUtterance>,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const TOPLINE_OUTPUTS_FILE: &str = "outputs_topline.jsonl";

/// Writes `wav/*.wav` with `.lab` sidecars, `manifest.jsonl`, and
/// `outputs_topline.jsonl` (each input posing as its own output). Paths in
/// the JSONL files are relative to `out_dir`.
pub fn gen_dataset(n: usize, vocab: &[String], cfg: &SynthConfig, seed: u64, out_dir: &Path) -> Result<Dataset> {
    let transcripts = plan_transcripts(n, vocab, seed)?;
    let mut utterances = render_dataset(&transcripts, cfg)?;
    std::fs::create_dir_all(out_dir.join("wav"))?;
    let mut records = Vec::with_capacity(utterances.len());
    let mut topline = Vec::with_capacity(utterances.len());
    for u in &mut utterances {
        let rel = format!("wav/{}.wav", u.record.id);
        write_utterance(u, out_dir, &rel)?;
        u.record.audio_path = Some(rel.clone());
        topline.push(OutputRecord {
            id: u.record.id.clone(),
            audio_path: rel,
            transcript: u.record.src_sentence.clone(),
            word_times: Some(u.word_times()),
        });
        records.push(u.record.clone());
    }
    std::fs::write(out_dir.join(MANIFEST_FILE), to_jsonl(&records))?;
    std::fs::write(out_dir.join(TOPLINE_OUTPUTS_FILE), to_jsonl(&topline))?;
    Ok(Dataset { records, topline_outputs: topline, utterances })
}

/// Bijective source-to-target token map of a made-up language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimLang {
    map: BTreeMap<String, String>,
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

impl SimLang {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let map: BTreeMap<String, String> = pairs.into_iter().collect();
        let targets: BTreeSet<&String> = map.values().collect();
        if targets.len() != map.len() {
            return Err(Error::InvalidInput("simulated-language map is not bijective".into()));
        }
        Ok(SimLang { map })
    }

    /// Invents a distinct consonant-vowel word for every vocabulary token.
    pub fn generate(vocab: &[String], seed: u64) -> Result<Self> {
        check_vocab(vocab)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut taken: BTreeSet<String> = vocab.iter().cloned().collect();
        let mut map = BTreeMap::new();
        for tok in vocab {
            loop {
                let syllables = rng.gen_range(2..=3);
                let mut word = String::new();
                for _ in 0..syllables {
                    word.push(*CONSONANTS.choose(&mut rng).expect("non-empty") as char);
                    word.push(*VOWELS.choose(&mut rng).expect("non-empty") as char);
                }
                if taken.insert(word.clone()) {
                    map.insert(tok.clone(), word);
                    break;
                }
            }
        }
        Ok(SimLang { map })
    }

    pub fn translate(&self, token: &str) -> Result<&str> {
        self.map.get(token).map(String::as_str).ok_or_else(|| Error::UnmappedToken(token.to_string()))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (s, t) in &self.map {
            let _ = writeln!(out, "{s}\t{t}");
        }
        out
    }

    pub fn from_tsv(text: &str, origin: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let Some((s, t)) = line.split_once('\t') else {
                return Err(Error::parse(origin, n + 1, "expected source<TAB>target"));
            };
            pairs.push((s.trim().to_string(), t.trim().to_string()));
        }
        SimLang::from_pairs(pairs)
    }

    /// Maps and reorders a sentence. `perm[i]` is the target position of source word `i`.
    pub fn translate_sentence(&self, tokens: &[String], perm: &[usize]) -> Result<Vec<String>> {
        let mut out = vec![String::new(); tokens.len()];
        for (i, tok) in tokens.iter().enumerate() {
            out[perm[i]] = self.translate(tok)?.to_string();
        }
        Ok(out)
    }
}

pub fn seeded_permutation(len: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationPair {
    /// Audio path left empty; the caller decides where the target audio lives.
    pub output: OutputRecord,
    pub target: GeneratedUtterance,
    /// `(source index, target index)` for every source word.
    pub gold_links: Vec<(usize, usize)>,
    pub parallel: SentencePair,
}

/// Renders the simulated translation of `source` in the next voice, with
/// emphasis moved along with the words.
pub fn gen_translation_pair(
    source: &GeneratedUtterance,
    lang: &SimLang,
    perm_seed: u64,
    cfg: &SynthConfig,
) -> Result<TranslationPair> {
    let rec = &source.record;
    let perm = seeded_permutation(rec.src_sentence.len(), perm_seed ^ stable_hash(rec.id.as_bytes()));
    translation_with_permutation(source, lang, &perm, cfg)
}

pub fn translation_with_permutation(
    source: &GeneratedUtterance,
    lang: &SimLang,
    perm: &[usize],
    cfg: &SynthConfig,
) -> Result<TranslationPair> {
    let rec = &source.record;
    let target_tokens = lang.translate_sentence(&rec.src_sentence, perm)?;
    let target_emph: Vec<usize> = rec.gold_emphasis.iter().map(|&g| perm[g]).collect();
    let voice = VOICES.iter().position(|v| *v == rec.voice).unwrap_or(0);
    let target = gen_utterance(&rec.id, &target_tokens, &target_emph, (voice + 1) % VOICES.len(), cfg)?;
    let output = OutputRecord {
        id: rec.id.clone(),
        audio_path: String::new(),
        transcript: target_tokens.clone(),
        word_times: Some(target.word_times()),
    };
    Ok(TranslationPair {
        output,
        target,
        gold_links: perm.iter().enumerate().map(|(i, &j)| (i, j)).collect(),
        parallel: (rec.src_sentence.clone(), target_tokens),
    })
}

/// Random sentence pairs for lexicon training.
pub fn gen_parallel_corpus(n_lines: usize, vocab: &[String], lang: &SimLang, seed: u64) -> Result<Vec<SentencePair>> {
    check_vocab(vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_lines)
        .map(|_| {
            let src = sample_sentence(&mut rng, vocab);
            let perm = seeded_permutation(src.len(), rng.gen());
            let tgt = lang.translate_sentence(&src, &perm)?;
            Ok((src, tgt))
        })
        .collect()
}

pub const SIMLANG_FILE: &str = "simlang.tsv";
pub const PARALLEL_FILE: &str = "parallel.txt";
pub const TRANSLATION_OUTPUTS_FILE: &str = "outputs_translation.jsonl";
pub const GOLD_ALIGNMENT_FILE: &str = "gold_alignment.jsonl";

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GoldAlignment {
    pub id: String,
    pub links: Vec<(usize, usize)>,
}

/// What [`gen_translation_set`] wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationSet {
    pub lang: SimLang,
    pub outputs: Vec<OutputRecord>,
    pub gold: Vec<GoldAlignment>,
    pub parallel: Vec<SentencePair>,
}

/// Writes simulated-language outputs for every utterance of `dataset`
/// (`translation/*.wav` + sidecars, `outputs_translation.jsonl`,
/// `gold_alignment.jsonl`), the token map, and a parallel corpus of
/// `parallel_lines` random sentence pairs.
pub fn gen_translation_set(
    dataset: &Dataset,
    vocab: &[String],
    cfg: &SynthConfig,
    seed: u64,
    parallel_lines: usize,
    out_dir: &Path,
) -> Result<TranslationSet> {
    let lang = SimLang::generate(vocab, seed)?;
    std::fs::create_dir_all(out_dir.join("translation"))?;
    let mut outputs = Vec::with_capacity(dataset.utterances.len());
    let mut gold = Vec::with_capacity(dataset.utterances.len());
    for u in &dataset.utterances {
        let mut pair = gen_translation_pair(u, &lang, seed, cfg)?;
        let rel = format!("translation/{}.wav", u.record.id);
        write_utterance(&pair.target, out_dir, &rel)?;
        pair.output.audio_path = rel;
        gold.push(GoldAlignment { id: u.record.id.clone(), links: pair.gold_links });
        outputs.push(pair.output);
    }
    let parallel = gen_parallel_corpus(parallel_lines, vocab, &lang, seed.wrapping_add(1))?;
    let mut text = String::new();
    for (s, t) in &parallel {
        text.push_str(&crate::align::format_parallel_line(s, t));
        text.push('\n');
    }
    std::fs::write(out_dir.join(SIMLANG_FILE), lang.to_tsv())?;
    std::fs::write(out_dir.join(PARALLEL_FILE), text)?;
    std::fs::write(out_dir.join(TRANSLATION_OUTPUTS_FILE), to_jsonl(&outputs))?;
    std::fs::write(out_dir.join(GOLD_ALIGNMENT_FILE), to_jsonl(&gold))?;
    Ok(TranslationSet { lang, outputs, gold, parallel })
}

/// First `n` built-in vocabulary words.
pub fn builtin_vocab(n: usize) -> Result<Vec<String>> {
    if n > BUILTIN_VOCAB.len() {
        return Err(Error::InvalidInput(format!(
            "built-in vocabulary has {} words, {n} requested",
            BUILTIN_VOCAB.len()
        )));
    }
    Ok(BUILTIN_VOCAB[..n].iter().map(|s| s.to_string()).collect())
}
