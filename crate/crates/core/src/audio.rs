//! Waveform I/O and the shared frame clock.
//!
//! Every acoustic stage agrees on one framing: frame `i` covers samples
//! `[i * hop, i * hop + window)`, and word spans are expressed in the same
//! frame indices.

use std::path::Path;

use crate::error::{Error, Result};

/// The only sample rate accepted by the pipeline.
pub const SAMPLE_RATE: u32 = 16_000;

const PCM16_SCALE: f64 = 32768.0;

/// Mono PCM audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::UnsupportedFormat(format!("rate={sample_rate}")));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::InvalidInput(format!("sample {i} = {} outside [-1, 1]", samples[i])));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowFunction {
    Hann,
}

/// Analysis framing, stored in whole samples at 16 kHz.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameSpec {
    pub hop: usize,
    pub window: usize,
    pub window_function: WindowFunction,
}

impl Default for FrameSpec {
    /// 20 ms hop, 40 ms Hann window.
    fn default() -> Self {
        FrameSpec { hop: 320, window: 640, window_function: WindowFunction::Hann }
    }
}

impl FrameSpec {
    pub fn from_millis(hop_ms: u32, window_ms: u32) -> Result<Self> {
        let per_ms = SAMPLE_RATE / 1000;
        let spec = FrameSpec {
            hop: (hop_ms * per_ms) as usize,
            window: (window_ms * per_ms) as usize,
            window_function: WindowFunction::Hann,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.window < self.hop {
            return Err(Error::InvalidInput(format!(
                "frame spec needs 0 < hop <= window (hop={}, window={})",
                self.hop, self.window
            )));
        }
        Ok(())
    }

    pub fn hop_secs(&self) -> f64 {
        self.hop as f64 / SAMPLE_RATE as f64
    }

    pub fn window_coefficients(&self) -> Vec<f64> {
        match self.window_function {
            WindowFunction::Hann => hann(self.window),
        }
    }

    /// Short stable description used to tie models to their feature setup.
    pub fn fingerprint(&self) -> String {
        let wf = match self.window_function {
            WindowFunction::Hann => "hann",
        };
        format!("hop={};win={};{}", self.hop, self.window, wf)
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len).map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()).collect()
}

/// Number of full analysis frames in a signal of `n_samples`.
pub fn frame_count(n_samples: usize, spec: &FrameSpec) -> Result<usize> {
    if n_samples < spec.window {
        return Err(Error::TooShort { samples: n_samples, required: spec.window });
    }
    Ok((n_samples - spec.window) / spec.hop + 1)
}

/// Iterator over the raw (unwindowed) sample slices of every frame.
pub fn frames<'a>(samples: &'a [f64], spec: &FrameSpec) -> Result<impl ExactSizeIterator<Item = &'a [f64]> + 'a> {
    let n = frame_count(samples.len(), spec)?;
    let (hop, window) = (spec.hop, spec.window);
    Ok((0..n).map(move |i| &samples[i * hop..i * hop + window]))
}

fn hound_err(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) if e.kind() == std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        hound::Error::IoError(e) => Error::Io(e),
        hound::Error::FormatError(msg) => Error::UnsupportedFormat(msg.to_string()),
        hound::Error::Unsupported => Error::UnsupportedFormat("unsupported wav encoding".into()),
        other => Error::UnsupportedFormat(other.to_string()),
    }
}

/// Reads a 16-bit PCM, mono, 16 kHz RIFF/WAVE file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let mut reader = hound::WavReader::open(path).map_err(|e| hound_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!("channels={}", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::UnsupportedFormat("format=float".into()));
    }
    if spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat(format!("bits={}", spec.bits_per_sample)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedFormat(format!("rate={}", spec.sample_rate)));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / PCM16_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| hound_err(path, e))?;
    if samples.is_empty() {
        return Err(Error::InvalidInput(format!("{} contains no samples", path.display())));
    }
    Waveform::new(samples, spec.sample_rate)
}

/// Writes the waveform as 16-bit PCM, rounding to the nearest step.
pub fn write_wav(path: impl AsRef<Path>, waveform: &Waveform) -> Result<()> {
    let path = path.as_ref();
    if waveform.is_empty() {
        return Err(Error::InvalidInput("cannot write an empty waveform".into()));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: waveform.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| hound_err(path, e))?;
    for &s in &waveform.samples {
        let q = (s * PCM16_SCALE).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(|e| hound_err(path, e))?;
    }
    writer.finalize().map_err(|e| hound_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, channels: u16, rate: u32, n: usize) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for i in 0..n * channels as usize {
            w.write_sample((i % 100) as i16).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn one_second_reads_16000_samples() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_raw(&p, 1, 16_000, 16_000);
        let w = read_wav(&p).unwrap();
        assert_eq!(w.len(), 16_000);
        assert!(w.samples().iter().all(|s| s.abs() <= 1.0));
    }

    #[test]
    fn rejects_stereo_and_other_rates() {
        let dir = tempfile::tempdir().unwrap();
        let stereo = dir.path().join("s.wav");
        write_raw(&stereo, 2, 16_000, 100);
        match read_wav(&stereo) {
            Err(Error::UnsupportedFormat(m)) => assert_eq!(m, "channels=2"),
            other => panic!("{other:?}"),
        }
        let cd = dir.path().join("cd.wav");
        write_raw(&cd, 1, 44_100, 100);
        match read_wav(&cd) {
            Err(Error::UnsupportedFormat(m)) => assert_eq!(m, "rate=44100"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_wav(dir.path().join("nope.wav")), Err(Error::NotFound(_))));
    }

    #[test]
    fn round_trip_within_one_step() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ramp.wav");
        let ramp: Vec<f64> = (0..100).map(|i| -1.0 + 2.0 * i as f64 / 99.0).collect();
        let w = Waveform::new(ramp.clone(), SAMPLE_RATE).unwrap();
        write_wav(&p, &w).unwrap();
        let back = read_wav(&p).unwrap();
        let err = ramp.iter().zip(back.samples()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1.0 / 32768.0, "max error {err}");
    }

    #[test]
    fn write_errors() {
        let w = Waveform::new(vec![0.0; 10], SAMPLE_RATE).unwrap();
        assert!(matches!(write_wav("/nonexistent-dir/x/y.wav", &w), Err(Error::Io(_)) | Err(Error::NotFound(_))));
        let empty = Waveform::new(vec![], SAMPLE_RATE).unwrap();
        assert!(matches!(write_wav("/tmp/never.wav", &empty), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn frame_count_examples() {
        let spec = FrameSpec::default();
        assert_eq!(frame_count(16_000, &spec).unwrap(), 49);
        assert_eq!(frame_count(640, &spec).unwrap(), 1);
        assert!(matches!(frame_count(500, &spec), Err(Error::TooShort { .. })));
    }

    #[test]
    fn frames_tile_with_fixed_stride() {
        let spec = FrameSpec::default();
        let s: Vec<f64> = (0..2000).map(|i| i as f64 / 2000.0).collect();
        let fr: Vec<_> = frames(&s, &spec).unwrap().collect();
        assert_eq!(fr.len(), frame_count(2000, &spec).unwrap());
        for (i, f) in fr.iter().enumerate() {
            assert_eq!(f.len(), spec.window);
            assert_eq!(f[0], s[i * spec.hop]);
        }
    }

    proptest::proptest! {
        #[test]
        fn frame_count_monotone(n in 640usize..100_000) {
            let spec = FrameSpec::default();
            proptest::prop_assert!(frame_count(n + 1, &spec).unwrap() >= frame_count(n, &spec).unwrap());
        }
    }
}
