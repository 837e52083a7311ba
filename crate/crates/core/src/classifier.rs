//! Frame-level emphasis classifier and the frame-to-word decision rule.
//!
//! The model is logistic regression over the prosodic feature vector, trained
//! by full-batch gradient descent on mean cross-entropy with an L2 penalty.
//! Word decisions come from hard frame decisions: a word is emphasized when
//! strictly more than `threshold` of its frames are.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FrameFeatureMatrix;
use crate::metrics::{Counts, Prf};
use crate::segment::WordSpan;

pub const MODEL_FORMAT_VERSION: u32 = 1;

const MINI_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    /// Full-batch gradient descent; otherwise shuffled mini-batches of 256.
    pub full_batch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 0.1, epochs: 200, l2: 1e-4, seed: 0, full_batch: true }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidInput(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::InvalidInput(format!("l2 must be non-negative, got {}", self.l2)));
        }
        Ok(())
    }
}

/// Frames of one utterance with their 0/1 emphasis labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrames {
    pub features: FrameFeatureMatrix,
    pub labels: Vec<bool>,
}

impl LabeledFrames {
    pub fn new(features: FrameFeatureMatrix, labels: Vec<bool>) -> Result<Self> {
        if labels.len() != features.n_frames() {
            return Err(Error::InvalidInput(format!("{} labels for {} frames", labels.len(), features.n_frames())));
        }
        Ok(LabeledFrames { features, labels })
    }

    /// Labels a frame 1 iff it lies inside the span of an emphasized word.
    pub fn from_spans(features: FrameFeatureMatrix, spans: &[WordSpan], emphasized: &[bool]) -> Result<Self> {
        let n = features.n_frames();
        validate_spans(spans, n)?;
        let mut labels = vec![false; n];
        for (span, &e) in spans.iter().zip(emphasized) {
            if e {
                labels[span.frames()].iter_mut().for_each(|l| *l = true);
            }
        }
        LabeledFrames::new(features, labels)
    }
}

/// An utterance with frame labels plus the word spans and word labels needed
/// for word-level scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledUtterance {
    pub frames: LabeledFrames,
    pub spans: Vec<WordSpan>,
    pub emphasized: Vec<bool>,
}

impl LabeledUtterance {
    pub fn new(features: FrameFeatureMatrix, spans: Vec<WordSpan>, emphasized: Vec<bool>) -> Result<Self> {
        if spans.len() != emphasized.len() {
            return Err(Error::InvalidInput(format!("{} spans for {} word labels", spans.len(), emphasized.len())));
        }
        let frames = LabeledFrames::from_spans(features, &spans, &emphasized)?;
        Ok(LabeledUtterance { frames, spans, emphasized })
    }
}

/// Trained logistic frame classifier. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    format_version: u32,
    fingerprint: String,
    weights: Vec<f64>,
    bias: f64,
}

impl ClassifierModel {
    pub fn new(weights: Vec<f64>, bias: f64, fingerprint: impl Into<String>) -> Self {
        ClassifierModel { format_version: MODEL_FORMAT_VERSION, fingerprint: fingerprint.into(), weights, bias }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    /// Parses a model and checks it was trained on the runtime feature setup.
    pub fn from_json(text: &str, expected_fingerprint: &str) -> Result<Self> {
        let model: ClassifierModel = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelVersion(model.format_version));
        }
        if model.fingerprint != expected_fingerprint {
            return Err(Error::FingerprintMismatch {
                model: model.fingerprint,
                runtime: expected_fingerprint.to_string(),
            });
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, expected_fingerprint: &str) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_json(&text, expected_fingerprint)
    }

    fn logit(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn check_dim(data: &[LabeledFrames], dim: usize) -> Result<()> {
    for d in data {
        if d.features.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: d.features.dim() });
        }
    }
    Ok(())
}

/// Mean cross-entropy plus `l2 * |w|^2 / 2` over every frame in `data`.
pub fn objective(data: &[LabeledFrames], weights: &[f64], bias: f64, l2: f64) -> f64 {
    objective_and_gradient(data.iter().flat_map(frame_iter), weights, bias, l2).0
}

/// Analytic gradient of [`objective`] with respect to weights and bias.
pub fn gradient(data: &[LabeledFrames], weights: &[f64], bias: f64, l2: f64) -> (Vec<f64>, f64) {
    let (_, gw, gb) = objective_and_gradient(data.iter().flat_map(frame_iter), weights, bias, l2);
    (gw, gb)
}

fn frame_iter(d: &LabeledFrames) -> impl Iterator<Item = (&[f64], bool)> {
    d.features.rows().zip(d.labels.iter().copied())
}

fn objective_and_gradient<'a>(
    frames: impl Iterator<Item = (&'a [f64], bool)>,
    weights: &[f64],
    bias: f64,
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let mut loss = 0.0;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    let mut n = 0usize;
    for (x, y) in frames {
        let z = dot(weights, x) + bias;
        let yf = if y { 1.0 } else { 0.0 };
        loss += softplus(z) - yf * z;
        let r = sigmoid(z) - yf;
        for (g, xi) in gw.iter_mut().zip(x) {
            *g += r * xi;
        }
        gb += r;
        n += 1;
    }
    let inv = if n == 0 { 0.0 } else { 1.0 / n as f64 };
    let penalty = 0.5 * l2 * dot(weights, weights);
    for (g, w) in gw.iter_mut().zip(weights) {
        *g = *g * inv + l2 * w;
    }
    (loss * inv + penalty, gw, gb * inv)
}

/// A trained model with the objective value before each update and after the
/// last one (`epochs + 1` entries).
#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub model: ClassifierModel,
    pub loss_trace: Vec<f64>,
}

/// Gradient descent from zero weights.
pub fn train(data: &[LabeledFrames], cfg: &TrainConfig, fingerprint: &str) -> Result<Trained> {
    cfg.validate()?;
    let dim = data.first().map(|d| d.features.dim()).ok_or(Error::EmptyDataset)?;
    check_dim(data, dim)?;
    let positives = data.iter().flat_map(|d| &d.labels).filter(|&&l| l).count();
    let total: usize = data.iter().map(|d| d.labels.len()).sum();
    if positives == 0 || positives == total {
        return Err(Error::SingleClassData);
    }

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    let all: Vec<(&[f64], bool)> = data.iter().flat_map(frame_iter).collect();
    let mut order: Vec<usize> = (0..all.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    for epoch in 0..cfg.epochs {
        if cfg.full_batch {
            let (loss, gw, gb) = objective_and_gradient(all.iter().copied(), &w, b, cfg.l2);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(epoch));
            }
            trace.push(loss);
            step(&mut w, &mut b, &gw, gb, cfg.learning_rate);
        } else {
            trace.push(objective_and_gradient(all.iter().copied(), &w, b, cfg.l2).0);
            order.shuffle(&mut rng);
            for chunk in order.chunks(MINI_BATCH) {
                let (_, gw, gb) = objective_and_gradient(chunk.iter().map(|&i| all[i]), &w, b, cfg.l2);
                step(&mut w, &mut b, &gw, gb, cfg.learning_rate);
            }
        }
        if !w.iter().all(|v| v.is_finite()) || !b.is_finite() {
            return Err(Error::NonFiniteLoss(epoch));
        }
    }
    let final_loss = objective_and_gradient(all.iter().copied(), &w, b, cfg.l2).0;
    if !final_loss.is_finite() {
        return Err(Error::NonFiniteLoss(cfg.epochs));
    }
    trace.push(final_loss);
    Ok(Trained { model: ClassifierModel::new(w, b, fingerprint), loss_trace: trace })
}

fn step(w: &mut [f64], b: &mut f64, gw: &[f64], gb: f64, lr: f64) {
    for (wi, g) in w.iter_mut().zip(gw) {
        *wi -= lr * g;
    }
    *b -= lr * gb;
}

/// Emphasis probability of every frame.
pub fn predict_frames(model: &ClassifierModel, features: &FrameFeatureMatrix) -> Result<Vec<f64>> {
    if features.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), found: features.dim() });
    }
    Ok(features.rows().map(|x| sigmoid(model.logit(x))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationConfig {
    /// Fraction of emphasized frames a word must strictly exceed.
    pub threshold: f64,
    /// A frame is emphasized when its probability strictly exceeds this.
    pub decision_cutoff: f64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig { threshold: 0.5, decision_cutoff: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WordDecision {
    pub emphasized: bool,
    pub fraction: f64,
}

pub(crate) fn validate_spans(spans: &[WordSpan], n_frames: usize) -> Result<()> {
    for (i, s) in spans.iter().enumerate() {
        if s.is_empty() {
            return Err(Error::EmptySpan(i));
        }
        if s.end_frame > n_frames {
            return Err(Error::SpanOutOfRange { index: i, start: s.start_frame, end: s.end_frame, frames: n_frames });
        }
    }
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by_key(|&i| spans[i].start_frame);
    for pair in order.windows(2) {
        if spans[pair[0]].end_frame > spans[pair[1]].start_frame {
            return Err(Error::OverlappingSpans(pair[0], pair[1]));
        }
    }
    Ok(())
}

/// Word decisions from frame probabilities.
pub fn aggregate_to_words(
    frame_probs: &[f64],
    spans: &[WordSpan],
    cfg: &AggregationConfig,
) -> Result<Vec<WordDecision>> {
    validate_spans(spans, frame_probs.len())?;
    Ok(spans
        .iter()
        .map(|s| {
            let hits = frame_probs[s.frames()].iter().filter(|&&p| p > cfg.decision_cutoff).count();
            let fraction = hits as f64 / s.len() as f64;
            WordDecision { emphasized: fraction > cfg.threshold, fraction }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelScores {
    pub counts: Counts,
    pub scores: Prf,
}

impl LevelScores {
    fn from_counts(counts: Counts) -> Self {
        LevelScores { counts, scores: counts.prf() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassifierEval {
    pub frame: LevelScores,
    pub word: LevelScores,
}

/// Frame- and word-level scores of the given frame probabilities, one vector per utterance.
pub fn evaluate_predictions(
    probs: &[Vec<f64>],
    set: &[LabeledUtterance],
    cfg: &AggregationConfig,
) -> Result<ClassifierEval> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut frame = Counts::default();
    let mut word = Counts::default();
    for (p, u) in probs.iter().zip(set) {
        let decided: Vec<bool> = p.iter().map(|&v| v > cfg.decision_cutoff).collect();
        frame.add(Counts::from_decisions(&decided, &u.frames.labels));
        let words: Vec<bool> = aggregate_to_words(p, &u.spans, cfg)?.iter().map(|d| d.emphasized).collect();
        word.add(Counts::from_decisions(&words, &u.emphasized));
    }
    Ok(ClassifierEval { frame: LevelScores::from_counts(frame), word: LevelScores::from_counts(word) })
}

pub fn evaluate_classifier(
    model: &ClassifierModel,
    set: &[LabeledUtterance],
    cfg: &AggregationConfig,
) -> Result<ClassifierEval> {
    let probs = set.iter().map(|u| predict_frames(model, &u.frames.features)).collect::<Result<Vec<_>>>()?;
    evaluate_predictions(&probs, set, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn matrix(rows: Vec<Vec<f64>>) -> FrameFeatureMatrix {
        let dim = rows[0].len();
        FrameFeatureMatrix::from_rows(&rows, dim).unwrap()
    }

    fn blobs(n: usize, seed: u64) -> LabeledFrames {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = i % 2 == 0;
            let centre = if y { 3.0 } else { -3.0 };
            rows.push(vec![centre + noise.sample(&mut rng), noise.sample(&mut rng)]);
            labels.push(y);
        }
        LabeledFrames::new(matrix(rows), labels).unwrap()
    }

    #[test]
    fn separable_blobs_train_to_high_accuracy() {
        let data = vec![blobs(1000, 3)];
        let t = train(&data, &TrainConfig::default(), "test").unwrap();
        let p = predict_frames(&t.model, &data[0].features).unwrap();
        let correct = p.iter().zip(&data[0].labels).filter(|(&p, &y)| (p > 0.5) == y).count();
        assert!(correct as f64 / 1000.0 >= 0.99, "accuracy {correct}/1000");
        for w in t.loss_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn zero_epochs_is_zero_model() {
        let data = vec![blobs(10, 1)];
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let t = train(&data, &cfg, "fp").unwrap();
        assert!(t.model.weights().iter().all(|&w| w == 0.0));
        assert_eq!(t.model.bias(), 0.0);
        assert!(predict_frames(&t.model, &data[0].features).unwrap().iter().all(|&p| p == 0.5));
        assert_eq!(t.loss_trace.len(), 1);
    }

    #[test]
    fn single_class_rejected() {
        let d = LabeledFrames::new(matrix(vec![vec![1.0], vec![2.0]]), vec![true, true]).unwrap();
        assert!(matches!(train(&[d], &TrainConfig::default(), ""), Err(Error::SingleClassData)));
    }

    #[test]
    fn blow_up_is_reported() {
        let d = LabeledFrames::new(matrix(vec![vec![1e200], vec![-1e200]]), vec![true, false]).unwrap();
        let cfg = TrainConfig { learning_rate: 1e150, ..TrainConfig::default() };
        assert!(matches!(train(&[d], &cfg, ""), Err(Error::NonFiniteLoss(_))));
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..10).map(|_| (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let labels: Vec<bool> = (0..10).map(|_| rng.gen_bool(0.5)).collect();
            let data = vec![LabeledFrames::new(matrix(rows), labels).unwrap()];
            let w: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b = rng.gen_range(-1.0..1.0);
            let (gw, gb) = gradient(&data, &w, b, 1e-2);
            let eps = 1e-5;
            for j in 0..6 {
                let (mut up, mut down) = (w.clone(), w.clone());
                up[j] += eps;
                down[j] -= eps;
                let fd = (objective(&data, &up, b, 1e-2) - objective(&data, &down, b, 1e-2)) / (2.0 * eps);
                let rel = (fd - gw[j]).abs() / fd.abs().max(gw[j].abs()).max(1e-6);
                assert!(rel <= 1e-4, "seed {seed} w{j}: {fd} vs {}", gw[j]);
            }
            let fd = (objective(&data, &w, b + eps, 1e-2) - objective(&data, &w, b - eps, 1e-2)) / (2.0 * eps);
            assert!((fd - gb).abs() / fd.abs().max(gb.abs()).max(1e-6) <= 1e-4);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = vec![blobs(200, 9)];
        let a = train(&data, &TrainConfig { epochs: 30, ..Default::default() }, "x").unwrap();
        let b = train(&data, &TrainConfig { epochs: 30, ..Default::default() }, "x").unwrap();
        assert_eq!(a.model.to_json(), b.model.to_json());
        let mb = TrainConfig { epochs: 5, full_batch: false, seed: 4, ..Default::default() };
        assert_eq!(train(&data, &mb, "x").unwrap(), train(&data, &mb, "x").unwrap());
    }

    #[test]
    fn prediction_examples() {
        let mut w = vec![0.0; 3];
        w[0] = 1.0;
        let m = ClassifierModel::new(w, 0.0, "");
        let p = predict_frames(&m, &matrix(vec![vec![0.0; 3], vec![3f64.ln(), 0.0, 0.0]])).unwrap();
        assert_eq!(p[0], 0.5);
        assert!((p[1] - 0.75).abs() < 1e-12);
        assert!(matches!(
            predict_frames(&m, &matrix(vec![vec![0.0; 2]])),
            Err(Error::DimensionMismatch { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn sigmoid_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let neg: Vec<f64> = w.iter().map(|v| -v).collect();
        let pos = ClassifierModel::new(w, 0.7, "");
        let flip = ClassifierModel::new(neg, -0.7, "");
        let x = matrix((0..20).map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect());
        let a = predict_frames(&pos, &x).unwrap();
        let b = predict_frames(&flip, &x).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - (1.0 - q)).abs() < 1e-12);
        }
    }

    fn probs(bits: &[u8]) -> Vec<f64> {
        bits.iter().map(|&b| if b == 1 { 0.9 } else { 0.1 }).collect()
    }

    #[test]
    fn aggregation_rule_is_strict() {
        let cfg = AggregationConfig::default();
        let span = [WordSpan::new(0, 0, 4)];
        let d = aggregate_to_words(&probs(&[1, 1, 1, 0]), &span, &cfg).unwrap();
        assert!(d[0].emphasized);
        assert_eq!(d[0].fraction, 0.75);
        let d = aggregate_to_words(&probs(&[1, 1, 0, 0]), &span, &cfg).unwrap();
        assert!(!d[0].emphasized);
        assert!(matches!(
            aggregate_to_words(&probs(&[1, 1]), &[WordSpan::new(0, 1, 1)], &cfg),
            Err(Error::EmptySpan(0))
        ));
        assert!(matches!(
            aggregate_to_words(&probs(&[1, 1]), &[WordSpan::new(0, 0, 3)], &cfg),
            Err(Error::SpanOutOfRange { .. })
        ));
        assert!(matches!(
            aggregate_to_words(&probs(&[1, 1, 1]), &[WordSpan::new(0, 0, 2), WordSpan::new(1, 1, 3)], &cfg),
            Err(Error::OverlappingSpans(0, 1))
        ));
    }

    #[test]
    fn aggregation_matches_brute_force_up_to_12() {
        let cfg = AggregationConfig::default();
        for len in 1..=12usize {
            for pattern in 0u32..(1 << len) {
                let bits: Vec<u8> = (0..len).map(|i| ((pattern >> i) & 1) as u8).collect();
                let ones = bits.iter().filter(|&&b| b == 1).count();
                let expect = 2 * ones > len;
                let got = aggregate_to_words(&probs(&bits), &[WordSpan::new(0, 0, len)], &cfg).unwrap();
                assert_eq!(got[0].emphasized, expect, "{bits:?}");
            }
        }
    }

    #[test]
    fn perfect_and_silent_predictions() {
        let feats = matrix(vec![vec![0.0]; 6]);
        let spans = vec![WordSpan::new(0, 0, 3), WordSpan::new(1, 3, 6)];
        let u = LabeledUtterance::new(feats, spans, vec![false, true]).unwrap();
        let gold: Vec<f64> = u.frames.labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
        let e = evaluate_predictions(&[gold], std::slice::from_ref(&u), &AggregationConfig::default()).unwrap();
        assert_eq!(e.frame.scores, Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        assert_eq!(e.word.scores, Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        let e = evaluate_predictions(&[vec![0.0; 6]], &[u], &AggregationConfig::default()).unwrap();
        assert_eq!(e.word.scores, Prf::default());
        assert_eq!(e.frame.scores, Prf::default());
        assert!(matches!(evaluate_predictions(&[], &[], &AggregationConfig::default()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn model_json_round_trip_and_fingerprint_guard() {
        let m = ClassifierModel::new(vec![0.25, -1.5], 0.125, "hop=320");
        let back = ClassifierModel::from_json(&m.to_json(), "hop=320").unwrap();
        assert_eq!(m, back);
        assert!(matches!(ClassifierModel::from_json(&m.to_json(), "hop=160"), Err(Error::FingerprintMismatch { .. })));
    }
}
