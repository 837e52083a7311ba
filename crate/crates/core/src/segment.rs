//! Word spans on the frame clock, from timestamps or from silence gaps.

use serde::{Deserialize, Serialize};

use crate::audio::{frame_count, FrameSpec, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::features::ENERGY_FLOOR_DB;

/// Half-open frame interval attributed to one word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordSpan {
    pub token_index: usize,
    pub token: Option<String>,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl WordSpan {
    pub fn new(token_index: usize, start_frame: usize, end_frame: usize) -> Self {
        WordSpan { token_index, token: None, start_frame, end_frame }
    }

    pub fn len(&self) -> usize {
        self.end_frame.saturating_sub(self.start_frame)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frames(&self) -> std::ops::Range<usize> {
        self.start_frame..self.end_frame
    }
}

/// A word with start and end times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedWord {
    pub token: String,
    pub start: f64,
    pub end: f64,
}

impl TimedWord {
    pub fn new(token: impl Into<String>, start: f64, end: f64) -> Self {
        TimedWord { token: token.into(), start, end }
    }
}

fn secs_to_sample(t: f64) -> usize {
    (t * SAMPLE_RATE as f64).round() as usize
}

/// Quantizes word times onto frames.
///
/// Each span starts at `floor(start / hop)` and ends at `floor(end / hop)`,
/// widened to at least one frame. A span bumped into its successor pushes the
/// successor's start forward so spans never overlap. Spans are clipped to
/// `n_frames`; a word starting past the last frame is out of range.
pub fn spans_from_timestamps(words: &[TimedWord], spec: &FrameSpec, n_frames: usize) -> Result<Vec<WordSpan>> {
    let mut spans: Vec<WordSpan> = Vec::with_capacity(words.len());
    let mut prev_end_time = 0.0f64;
    let mut prev_end_frame = 0usize;
    for (i, w) in words.iter().enumerate() {
        let valid = w.start.is_finite() && w.end.is_finite() && w.start >= 0.0 && w.end >= w.start;
        if !valid {
            return Err(Error::NegativeTime(i));
        }
        if i > 0 && w.start < prev_end_time - 1e-9 {
            return Err(Error::OverlappingTimestamps(i));
        }
        prev_end_time = w.end;

        let mut start = secs_to_sample(w.start) / spec.hop;
        let mut end = secs_to_sample(w.end) / spec.hop;
        start = start.max(prev_end_frame);
        end = end.max(start + 1);
        if start >= n_frames {
            return Err(Error::SpanOutOfRange { index: i, start, end, frames: n_frames });
        }
        end = end.min(n_frames);
        prev_end_frame = end;
        spans.push(WordSpan { token_index: i, token: Some(w.token.clone()), start_frame: start, end_frame: end });
    }
    Ok(spans)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SilenceConfig {
    /// Activity gate relative to the loudest frame, in dB.
    pub gate_db: f64,
    /// Shortest silence (seconds) that separates two words.
    pub min_gap: f64,
}

impl Default for SilenceConfig {
    fn default() -> Self {
        SilenceConfig { gate_db: -40.0, min_gap: 0.050 }
    }
}

/// Energy in dB of each frame's hop-sized block `[i * hop, (i + 1) * hop)`.
///
/// Blocks, not overlapping windows, so that activity lines up with the same
/// frame indices that timestamps quantize to.
pub fn block_energy_db(waveform: &Waveform, spec: &FrameSpec) -> Result<Vec<f64>> {
    let n = frame_count(waveform.len(), spec)?;
    let s = waveform.samples();
    Ok((0..n)
        .map(|i| {
            let block = &s[i * spec.hop..(i + 1) * spec.hop];
            let power = block.iter().map(|x| x * x).sum::<f64>() / block.len() as f64;
            let db = 10.0 * power.log10();
            if db.is_finite() {
                db.max(ENERGY_FLOOR_DB)
            } else {
                ENERGY_FLOOR_DB
            }
        })
        .collect())
}

/// Splits the utterance into words at silences of at least `min_gap`.
/// Returned spans carry no tokens.
pub fn segment_by_silence(
    waveform: &Waveform,
    expected_words: usize,
    spec: &FrameSpec,
    cfg: &SilenceConfig,
) -> Result<Vec<WordSpan>> {
    if expected_words == 0 {
        return Err(Error::InvalidInput("expected word count must be at least 1".into()));
    }
    let energy = block_energy_db(waveform, spec)?;
    let peak = energy.iter().copied().fold(ENERGY_FLOOR_DB, f64::max);
    let active: Vec<bool> = if peak <= ENERGY_FLOOR_DB {
        vec![false; energy.len()]
    } else {
        energy.iter().map(|&e| e > peak + cfg.gate_db).collect()
    };
    let min_gap_frames = secs_to_sample(cfg.min_gap).div_ceil(spec.hop).max(1);

    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < active.len() {
        if !active[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < active.len() && active[i] {
            i += 1;
        }
        match runs.last_mut() {
            Some(last) if start - last.1 < min_gap_frames => last.1 = i,
            _ => runs.push((start, i)),
        }
    }
    if runs.len() != expected_words {
        return Err(Error::SegmentCountMismatch { found: runs.len(), expected: expected_words });
    }
    Ok(runs.into_iter().enumerate().map(|(k, (s, e))| WordSpan::new(k, s, e)).collect())
}
