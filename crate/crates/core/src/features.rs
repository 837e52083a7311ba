//! Per-frame prosodic features: pitch, voicing, loudness and their local shape.
//!
//! Pitch comes from a YIN-style estimator (cumulative-mean-normalized
//! difference function, absolute threshold, parabolic refinement). Both pitch
//! and energy are z-scored per utterance so that only relative prominence
//! survives, which is what separates an emphasized word from its neighbours.

use std::fmt::Write as _;

use crate::audio::{frame_count, frames, FrameSpec, Waveform};
use crate::error::{Error, Result};

/// Energy floor applied to every frame, in dB.
pub const ENERGY_FLOOR_DB: f64 = -80.0;

/// Number of per-frame base features before context stacking.
pub const BASE_DIM: usize = 5;

/// Frames of context on each side.
pub const CONTEXT: usize = 2;

/// Final feature dimension.
pub const FEATURE_DIM: usize = BASE_DIM * (2 * CONTEXT + 1);

const STD_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchConfig {
    pub f0_min: f64,
    pub f0_max: f64,
    pub yin_threshold: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        PitchConfig { f0_min: 60.0, f0_max: 400.0, yin_threshold: 0.10 }
    }
}

impl PitchConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        let ok = self.f0_min > 0.0
            && self.f0_min < self.f0_max
            && self.f0_max < nyquist
            && self.yin_threshold.is_finite()
            && self.yin_threshold > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "pitch config needs 0 < f0_min < f0_max < {nyquist} and a positive threshold, got {self:?}"
            )))
        }
    }

    pub fn fingerprint(&self) -> String {
        format!("f0={}-{};yin={}", self.f0_min, self.f0_max, self.yin_threshold)
    }
}

/// Fingerprint of everything that shapes the feature vector.
pub fn feature_fingerprint(spec: &FrameSpec, pitch: &PitchConfig) -> String {
    format!("{};{};ctx={CONTEXT};dim={FEATURE_DIM}", spec.fingerprint(), pitch.fingerprint())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchFrame {
    /// Hz, 0 when unvoiced.
    pub f0: f64,
    pub voiced: bool,
}

impl PitchFrame {
    const UNVOICED: PitchFrame = PitchFrame { f0: 0.0, voiced: false };
}

/// YIN pitch track, one estimate per analysis frame.
pub fn estimate_f0(waveform: &Waveform, spec: &FrameSpec, cfg: &PitchConfig) -> Result<Vec<PitchFrame>> {
    cfg.validate(waveform.sample_rate())?;
    let sr = waveform.sample_rate() as f64;
    let mut yin = Yin::new(spec.window, sr, cfg);
    Ok(frames(waveform.samples(), spec)?.map(|f| yin.estimate(f)).collect())
}

struct Yin {
    sample_rate: f64,
    tau_min: usize,
    tau_max: usize,
    integration: usize,
    cfg: PitchConfig,
    diff: Vec<f64>,
    cmnd: Vec<f64>,
}

impl Yin {
    fn new(window: usize, sample_rate: f64, cfg: &PitchConfig) -> Self {
        let tau_min = ((sample_rate / cfg.f0_max).floor() as usize).max(2);
        // The difference function needs tau_max + 1 lags past an integration
        // window that is at least as long as the longest lag searched.
        let tau_max = ((sample_rate / cfg.f0_min).ceil() as usize).min(window.saturating_sub(2) / 2);
        let integration = window - (tau_max + 1);
        Yin {
            sample_rate,
            tau_min,
            tau_max,
            integration,
            cfg: *cfg,
            diff: vec![0.0; tau_max + 2],
            cmnd: vec![1.0; tau_max + 2],
        }
    }

    fn estimate(&mut self, frame: &[f64]) -> PitchFrame {
        if self.tau_max <= self.tau_min {
            return PitchFrame::UNVOICED;
        }
        let w = self.integration;
        for tau in 0..self.diff.len() {
            self.diff[tau] = frame[..w].iter().zip(&frame[tau..tau + w]).map(|(a, b)| (a - b) * (a - b)).sum();
        }
        self.cmnd[0] = 1.0;
        let mut running = 0.0;
        for tau in 1..self.diff.len() {
            running += self.diff[tau];
            self.cmnd[tau] = if running > 0.0 { self.diff[tau] * tau as f64 / running } else { 1.0 };
        }

        let mut found = None;
        let mut tau = self.tau_min;
        while tau <= self.tau_max {
            if self.cmnd[tau] < self.cfg.yin_threshold {
                while tau < self.tau_max && self.cmnd[tau + 1] < self.cmnd[tau] {
                    tau += 1;
                }
                found = Some(tau);
                break;
            }
            tau += 1;
        }
        let Some(tau) = found else {
            return PitchFrame::UNVOICED;
        };

        let (a, b, c) = (self.cmnd[tau - 1], self.cmnd[tau], self.cmnd[tau + 1]);
        let denom = a - 2.0 * b + c;
        let shift = if denom.abs() > f64::EPSILON { (0.5 * (a - c) / denom).clamp(-1.0, 1.0) } else { 0.0 };
        let f0 = (self.sample_rate / (tau as f64 + shift)).clamp(self.cfg.f0_min, self.cfg.f0_max);
        PitchFrame { f0, voiced: true }
    }
}

/// Loudness of each Hann-windowed frame in dB, normalized by the window's own
/// RMS gain and floored at [`ENERGY_FLOOR_DB`].
pub fn rms_energy_db(waveform: &Waveform, spec: &FrameSpec) -> Result<Vec<f64>> {
    let window = spec.window_coefficients();
    let gain: f64 = window.iter().map(|w| w * w).sum();
    Ok(frames(waveform.samples(), spec)?
        .map(|f| {
            let power: f64 = f.iter().zip(&window).map(|(x, w)| (x * w) * (x * w)).sum();
            let db = 10.0 * (power / gain).log10();
            if db.is_finite() {
                db.max(ENERGY_FLOOR_DB)
            } else {
                ENERGY_FLOOR_DB
            }
        })
        .collect())
}

/// Columns of the unstacked per-frame feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum BaseFeature {
    F0Z = 0,
    Voicing = 1,
    EnergyZ = 2,
    DeltaF0 = 3,
    DeltaEnergy = 4,
}

/// Row-major per-frame feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatureMatrix {
    data: Vec<f64>,
    n_frames: usize,
    dim: usize,
}

impl FrameFeatureMatrix {
    pub fn from_rows(rows: &[Vec<f64>], dim: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::InvalidInput(format!("row {i} has {} columns, expected {dim}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(FrameFeatureMatrix { data, n_frames: rows.len(), dim })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.n_frames)
    }

    /// Un-shifted (centre context) value of a base feature.
    pub fn base(&self, frame: usize, feature: BaseFeature) -> f64 {
        self.row(frame)[CONTEXT * BASE_DIM + feature as usize]
    }

    pub fn base_column(&self, feature: BaseFeature) -> Vec<f64> {
        (0..self.n_frames).map(|i| self.base(i, feature)).collect()
    }

    /// Tab-separated dump, one frame per line, with a header row.
    pub fn to_tsv(&self) -> String {
        let names = ["f0_z", "voicing", "energy_z", "delta_f0", "delta_energy"];
        let mut out = String::from("frame");
        if self.dim == FEATURE_DIM {
            for off in -(CONTEXT as i64)..=CONTEXT as i64 {
                for n in names {
                    let _ = write!(out, "\t{n}[{off:+}]");
                }
            }
        } else {
            for j in 0..self.dim {
                let _ = write!(out, "\tx{j}");
            }
        }
        out.push('\n');
        for (i, r) in self.rows().enumerate() {
            let _ = write!(out, "{i}");
            for v in r {
                let _ = write!(out, "\t{v:.6}");
            }
            out.push('\n');
        }
        out
    }
}

/// Z-scores `values` using statistics over entries where `include` holds.
/// Returns `None` when nothing is included.
fn zscore(values: &[f64], include: &[bool]) -> Option<Vec<f64>> {
    let n = include.iter().filter(|&&b| b).count();
    if n == 0 {
        return None;
    }
    let mean = values.iter().zip(include).filter(|(_, &b)| b).map(|(v, _)| v).sum::<f64>() / n as f64;
    let var =
        values.iter().zip(include).filter(|(_, &b)| b).map(|(v, _)| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    Some(values.iter().map(|v| if std < STD_EPS { 0.0 } else { (v - mean) / std }).collect())
}

fn first_difference(values: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for i in 1..values.len() {
        out[i] = values[i] - values[i - 1];
    }
    out
}

/// Assembles the 25-column feature matrix for one utterance.
///
/// Frames sitting on the energy floor do not enter the energy statistics and
/// take the lowest z-score of the frames that did.
pub fn build_features(waveform: &Waveform, spec: &FrameSpec, pitch: &PitchConfig) -> Result<FrameFeatureMatrix> {
    let n = frame_count(waveform.len(), spec)?;
    let track = estimate_f0(waveform, spec, pitch)?;
    let energy = rms_energy_db(waveform, spec)?;

    let voiced: Vec<bool> = track.iter().map(|p| p.voiced).collect();
    let log_f0: Vec<f64> = track.iter().map(|p| if p.voiced { p.f0.ln() } else { 0.0 }).collect();
    let above_floor: Vec<bool> = energy.iter().map(|&e| e > ENERGY_FLOOR_DB).collect();

    let f0_z = zscore(&log_f0, &voiced);
    let energy_z = zscore(&energy, &above_floor);
    if f0_z.is_none() && energy_z.is_none() {
        return Err(Error::DegenerateUtterance);
    }
    let f0_z: Vec<f64> = match f0_z {
        Some(z) => z.iter().zip(&voiced).map(|(&v, &b)| if b { v } else { 0.0 }).collect(),
        None => vec![0.0; n],
    };
    let energy_z: Vec<f64> = match energy_z {
        Some(z) => {
            let lowest = z.iter().zip(&above_floor).filter(|(_, &b)| b).map(|(&v, _)| v).fold(f64::INFINITY, f64::min);
            z.iter().zip(&above_floor).map(|(&v, &b)| if b { v } else { lowest }).collect()
        }
        None => vec![0.0; n],
    };
    let delta_f0 = first_difference(&f0_z);
    let delta_energy = first_difference(&energy_z);

    let base: Vec<[f64; BASE_DIM]> = (0..n)
        .map(|i| [f0_z[i], if voiced[i] { 1.0 } else { 0.0 }, energy_z[i], delta_f0[i], delta_energy[i]])
        .collect();

    let mut data = Vec::with_capacity(n * FEATURE_DIM);
    for i in 0..n {
        for off in -(CONTEXT as isize)..=CONTEXT as isize {
            let j = (i as isize + off).clamp(0, n as isize - 1) as usize;
            data.extend_from_slice(&base[j]);
        }
    }
    Ok(FrameFeatureMatrix { data, n_frames: n, dim: FEATURE_DIM })
}
