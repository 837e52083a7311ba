//! End-to-end emphasis transfer scoring.
//!
//! For each output utterance: obtain word spans (supplied timestamps or
//! silence segmentation), detect which output words are emphasized, project
//! the source's gold emphasis through a word alignment, and count
//! TP/FP/FN. Dataset scores pool the counts (micro) and average per-utterance
//! scores (macro).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::align::{expected_emphasis, Aligner};
use crate::audio::{frame_count, read_wav, FrameSpec, Waveform};
use crate::classifier::{aggregate_to_words, predict_frames, AggregationConfig, ClassifierModel};
use crate::error::{Error, Result};
use crate::features::{build_features, feature_fingerprint, PitchConfig};
use crate::metrics::{Counts, Prf};
use crate::segment::{segment_by_silence, spans_from_timestamps, SilenceConfig, TimedWord, WordSpan};

/// One source utterance of the benchmark manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub src_sentence: Vec<String>,
    pub gold_emphasis: Vec<usize>,
    pub voice: String,
    #[serde(default)]
    pub audio_path: Option<String>,
}

impl UtteranceRecord {
    pub fn validate(&self) -> Result<()> {
        if self.gold_emphasis.is_empty() {
            return Err(Error::InvalidInput(format!("{}: gold_emphasis is empty", self.id)));
        }
        if let Some(&index) = self.gold_emphasis.iter().find(|&&g| g >= self.src_sentence.len()) {
            return Err(Error::IndexOutOfBounds { index, len: self.src_sentence.len() });
        }
        Ok(())
    }
}

/// What the system under test produced for one source utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub id: String,
    pub audio_path: String,
    pub transcript: Vec<String>,
    #[serde(default)]
    pub word_times: Option<Vec<[f64; 2]>>,
}

impl OutputRecord {
    pub fn validate(&self) -> Result<()> {
        if self.transcript.is_empty() {
            return Err(Error::InvalidInput(format!("{}: empty transcript", self.id)));
        }
        if let Some(times) = &self.word_times {
            if times.len() != self.transcript.len() {
                return Err(Error::InvalidInput(format!(
                    "{}: {} word_times for {} transcript tokens",
                    self.id,
                    times.len(),
                    self.transcript.len()
                )));
            }
            for (i, t) in times.iter().enumerate() {
                if !(t[0].is_finite() && t[1].is_finite() && t[0] >= 0.0 && t[1] >= t[0]) {
                    return Err(Error::NegativeTime(i));
                }
                if i > 0 && t[0] < times[i - 1][1] {
                    return Err(Error::OverlappingTimestamps(i));
                }
            }
        }
        Ok(())
    }

    pub fn timed_words(&self) -> Option<Vec<TimedWord>> {
        self.word_times.as_ref().map(|times| {
            self.transcript.iter().zip(times).map(|(tok, t)| TimedWord::new(tok.clone(), t[0], t[1])).collect()
        })
    }
}

fn resolve(base: &Path, p: &str) -> String {
    let path = Path::new(p);
    if path.is_absolute() {
        p.to_string()
    } else {
        base.join(path).to_string_lossy().into_owned()
    }
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value =
            serde_json::from_str(&line).map_err(|e| Error::parse(path.display().to_string(), n + 1, e.to_string()))?;
        out.push(value);
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("record serializes"));
        out.push('\n');
    }
    out
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Loads and validates a manifest; relative audio paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<UtteranceRecord>> {
    let path = path.as_ref();
    let base = base_dir(path);
    let mut records: Vec<UtteranceRecord> = read_jsonl(path)?;
    for (n, r) in records.iter_mut().enumerate() {
        r.validate().map_err(|e| Error::parse(path.display().to_string(), n + 1, e.to_string()))?;
        if let Some(p) = &r.audio_path {
            r.audio_path = Some(resolve(&base, p));
        }
    }
    Ok(records)
}

/// Loads and validates output records; relative audio paths resolve against
/// the file's directory.
pub fn load_outputs(path: impl AsRef<Path>) -> Result<Vec<OutputRecord>> {
    let path = path.as_ref();
    let base = base_dir(path);
    let mut records: Vec<OutputRecord> = read_jsonl(path)?;
    for (n, r) in records.iter_mut().enumerate() {
        r.validate().map_err(|e| Error::parse(path.display().to_string(), n + 1, e.to_string()))?;
        r.audio_path = resolve(&base, &r.audio_path);
    }
    Ok(records)
}

/// One line of a word label sidecar: `start<TAB>end<TAB>token<TAB>0|1`.
#[derive(Debug, Clone, PartialEq)]
pub struct WordLabel {
    pub token: String,
    pub start: f64,
    pub end: f64,
    pub emphasized: bool,
}

/// Sidecar label file that sits next to an audio file.
pub fn label_path_for(audio: impl AsRef<Path>) -> PathBuf {
    audio.as_ref().with_extension("lab")
}

pub fn format_labels(words: &[WordLabel]) -> String {
    let mut out = String::new();
    for w in words {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", w.start, w.end, w.token, u8::from(w.emphasized));
    }
    out
}

pub fn parse_labels(text: &str, origin: &str) -> Result<Vec<WordLabel>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 {
            return Err(Error::parse(origin, n + 1, "expected start<TAB>end<TAB>token[<TAB>0|1]"));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::parse(origin, n + 1, format!("bad time {s:?}")));
        let emphasized = match cols.get(3).map(|s| s.trim()) {
            None | Some("0") => false,
            Some("1") => true,
            Some(other) => return Err(Error::parse(origin, n + 1, format!("bad emphasis flag {other:?}"))),
        };
        out.push(WordLabel { start: num(cols[0])?, end: num(cols[1])?, token: cols[2].to_string(), emphasized });
    }
    Ok(out)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<WordLabel>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    parse_labels(&text, &path.display().to_string())
}

/// What a detector sees for one output utterance.
pub struct DetectionInput<'a> {
    pub audio_path: &'a Path,
    pub waveform: &'a Waveform,
    pub spans: &'a [WordSpan],
}

/// Decides, per word span, whether the word is emphasized.
pub trait EmphasisDetector: Sync {
    fn detect(&self, input: &DetectionInput<'_>) -> Result<Vec<bool>>;
}

/// Trained frame classifier plus the frame-to-word rule.
#[derive(Debug, Clone)]
pub struct ModelDetector {
    pub model: ClassifierModel,
    pub frame_spec: FrameSpec,
    pub pitch: PitchConfig,
    pub aggregation: AggregationConfig,
}

impl ModelDetector {
    /// Fails if the model was trained on a different feature setup.
    pub fn new(model: ClassifierModel, frame_spec: FrameSpec, pitch: PitchConfig) -> Result<Self> {
        let runtime = feature_fingerprint(&frame_spec, &pitch);
        if model.fingerprint() != runtime {
            return Err(Error::FingerprintMismatch { model: model.fingerprint().to_string(), runtime });
        }
        Ok(ModelDetector { model, frame_spec, pitch, aggregation: AggregationConfig::default() })
    }

    pub fn frame_probabilities(&self, waveform: &Waveform) -> Result<Vec<f64>> {
        let features = build_features(waveform, &self.frame_spec, &self.pitch)?;
        predict_frames(&self.model, &features)
    }
}

impl EmphasisDetector for ModelDetector {
    fn detect(&self, input: &DetectionInput<'_>) -> Result<Vec<bool>> {
        let probs = self.frame_probabilities(input.waveform)?;
        Ok(aggregate_to_words(&probs, input.spans, &self.aggregation)?.iter().map(|d| d.emphasized).collect())
    }
}

/// Reads the true emphasis of each word from the audio's label sidecar.
#[derive(Debug, Clone, Copy, Default)]
pub struct GoldOracle;

impl EmphasisDetector for GoldOracle {
    fn detect(&self, input: &DetectionInput<'_>) -> Result<Vec<bool>> {
        let labels = read_labels(label_path_for(input.audio_path))?;
        if labels.len() != input.spans.len() {
            return Err(Error::InvalidInput(format!(
                "label sidecar has {} words, utterance has {}",
                labels.len(),
                input.spans.len()
            )));
        }
        Ok(labels.iter().map(|l| l.emphasized).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Flag {
    Unaligned,
    SegmentFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceResult {
    pub id: String,
    pub expected: Vec<usize>,
    pub predicted: Vec<usize>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub flags: Vec<Flag>,
}

impl UtteranceResult {
    fn new(id: String, expected: BTreeSet<usize>, predicted: BTreeSet<usize>, flags: BTreeSet<Flag>) -> Self {
        let tp = expected.intersection(&predicted).count();
        let fp = predicted.difference(&expected).count();
        let fn_ = expected.difference(&predicted).count();
        UtteranceResult {
            id,
            expected: expected.into_iter().collect(),
            predicted: predicted.into_iter().collect(),
            tp,
            fp,
            fn_,
            flags: flags.into_iter().collect(),
        }
    }

    pub fn counts(&self) -> Counts {
        Counts { tp: self.tp, fp: self.fp, fn_: self.fn_ }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub frame_spec: FrameSpec,
    pub silence: SilenceConfig,
    /// Abort on the first failing utterance instead of skipping it.
    pub fail_fast: bool,
    pub jobs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { frame_spec: FrameSpec::default(), silence: SilenceConfig::default(), fail_fast: false, jobs: 1 }
    }
}

/// Word spans of an output utterance and whether silence segmentation was needed.
pub fn output_spans(out: &OutputRecord, waveform: &Waveform, cfg: &EvalConfig) -> Result<(Vec<WordSpan>, bool)> {
    match out.timed_words() {
        Some(words) => {
            let n = frame_count(waveform.len(), &cfg.frame_spec)?;
            Ok((spans_from_timestamps(&words, &cfg.frame_spec, n)?, false))
        }
        None => Ok((segment_by_silence(waveform, out.transcript.len(), &cfg.frame_spec, &cfg.silence)?, true)),
    }
}

/// Scores one output utterance against its source.
pub fn evaluate_utterance(
    src: &UtteranceRecord,
    out: &OutputRecord,
    detector: &dyn EmphasisDetector,
    aligner: &Aligner,
    cfg: &EvalConfig,
) -> Result<UtteranceResult> {
    if src.id != out.id {
        return Err(Error::IdMismatch(out.id.clone(), src.id.clone()));
    }
    src.validate()?;
    out.validate()?;
    let audio_path = Path::new(&out.audio_path);
    let waveform = read_wav(audio_path)?;
    let (spans, fallback) = output_spans(out, &waveform, cfg)?;
    let decisions = detector.detect(&DetectionInput { audio_path, waveform: &waveform, spans: &spans })?;
    let predicted: BTreeSet<usize> = decisions.iter().enumerate().filter(|(_, &d)| d).map(|(i, _)| i).collect();

    let (links, _) = aligner.align(&src.src_sentence, &out.transcript, &src.id)?;
    let expected = expected_emphasis(&src.gold_emphasis, &links, src.src_sentence.len())?;

    let mut flags = BTreeSet::new();
    if fallback {
        flags.insert(Flag::SegmentFallback);
    }
    if src.gold_emphasis.iter().any(|g| !links.iter().any(|l| l.src == *g)) {
        flags.insert(Flag::Unaligned);
    }
    Ok(UtteranceResult::new(src.id.clone(), expected, predicted, flags))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Utterances entering the average (those with at least one count).
    pub utterances: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub outputs: usize,
    pub evaluated: usize,
    pub skipped: usize,
    pub unaligned: usize,
    pub segment_fallback: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedUtterance {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro: MicroScores,
    #[serde(rename = "macro")]
    pub macro_: MacroScores,
    pub counts: ReportCounts,
    pub per_utterance: Vec<UtteranceResult>,
    pub skipped: Vec<SkippedUtterance>,
}

impl EvalReport {
    /// Assembles the report; results are ordered by id before any summation.
    pub fn from_results(mut results: Vec<UtteranceResult>, mut skipped: Vec<SkippedUtterance>) -> Self {
        results.sort_by(|a, b| a.id.cmp(&b.id));
        skipped.sort_by(|a, b| a.id.cmp(&b.id));
        let mut total = Counts::default();
        for r in &results {
            total.add(r.counts());
        }
        let micro = total.prf();

        let scored: Vec<Prf> = results.iter().filter(|r| !r.counts().is_empty()).map(|r| r.counts().prf()).collect();
        let mean = |f: fn(&Prf) -> f64| {
            if scored.is_empty() {
                0.0
            } else {
                scored.iter().map(f).sum::<f64>() / scored.len() as f64
            }
        };
        let macro_ = MacroScores {
            precision: mean(|p| p.precision),
            recall: mean(|p| p.recall),
            f1: mean(|p| p.f1),
            utterances: scored.len(),
        };
        let counts = ReportCounts {
            outputs: results.len() + skipped.len(),
            evaluated: results.len(),
            skipped: skipped.len(),
            unaligned: results.iter().filter(|r| r.flags.contains(&Flag::Unaligned)).count(),
            segment_fallback: results.iter().filter(|r| r.flags.contains(&Flag::SegmentFallback)).count(),
        };
        EvalReport {
            micro: MicroScores {
                precision: micro.precision,
                recall: micro.recall,
                f1: micro.f1,
                tp: total.tp,
                fp: total.fp,
                fn_: total.fn_,
            },
            macro_,
            counts,
            per_utterance: results,
            skipped,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8}{:>10}{:>10}{:>10}", "", "precision", "recall", "f1");
        let _ = writeln!(
            out,
            "{:<8}{:>10.3}{:>10.3}{:>10.3}",
            "micro", self.micro.precision, self.micro.recall, self.micro.f1
        );
        let _ = writeln!(
            out,
            "{:<8}{:>10.3}{:>10.3}{:>10.3}",
            "macro", self.macro_.precision, self.macro_.recall, self.macro_.f1
        );
        let c = &self.counts;
        let _ = writeln!(
            out,
            "outputs={} evaluated={} skipped={} unaligned={} segment_fallback={} (tp={} fp={} fn={})",
            c.outputs,
            c.evaluated,
            c.skipped,
            c.unaligned,
            c.segment_fallback,
            self.micro.tp,
            self.micro.fp,
            self.micro.fn_
        );
        out
    }
}

/// Scores every output against the manifest.
pub fn evaluate_dataset(
    manifest: &[UtteranceRecord],
    outputs: &[OutputRecord],
    detector: &dyn EmphasisDetector,
    aligner: &Aligner,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if outputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut by_id: BTreeMap<&str, &UtteranceRecord> = BTreeMap::new();
    for r in manifest {
        if by_id.insert(&r.id, r).is_some() {
            return Err(Error::DuplicateId(r.id.clone()));
        }
    }
    let mut seen = BTreeSet::new();
    let mut jobs: Vec<(&UtteranceRecord, &OutputRecord)> = Vec::with_capacity(outputs.len());
    for o in outputs {
        let src = by_id.get(o.id.as_str()).ok_or_else(|| Error::UnknownId(o.id.clone()))?;
        if !seen.insert(o.id.as_str()) {
            return Err(Error::DuplicateId(o.id.clone()));
        }
        jobs.push((src, o));
    }
    jobs.sort_by(|a, b| a.1.id.cmp(&b.1.id));

    let run = |(src, out): &(&UtteranceRecord, &OutputRecord)| evaluate_utterance(src, out, detector, aligner, cfg);
    let results: Vec<Result<UtteranceResult>> = if cfg.jobs <= 1 {
        jobs.iter().map(run).collect()
    } else {
        let chunk = jobs.len().div_ceil(cfg.jobs);
        std::thread::scope(|scope| {
            let handles: Vec<_> =
                jobs.chunks(chunk).map(|part| scope.spawn(move || part.iter().map(run).collect::<Vec<_>>())).collect();
            handles.into_iter().flat_map(|h| h.join().expect("evaluation worker panicked")).collect()
        })
    };

    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for ((_, out), r) in jobs.iter().zip(results) {
        match r {
            Ok(r) => ok.push(r),
            Err(e) if cfg.fail_fast => return Err(e),
            Err(e) => skipped.push(SkippedUtterance { id: out.id.clone(), error: e.to_string() }),
        }
    }
    Ok(EvalReport::from_results(ok, skipped))
}
