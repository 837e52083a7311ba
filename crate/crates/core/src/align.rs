//! Word-to-word alignment used to project gold emphasis onto the output.
//!
//! Links come from mutual argmax over a similarity matrix. The matrix is
//! filled by a pluggable scorer: character 3-gram cosine, an IBM Model 1
//! lexicon trained by EM, or externally computed scores.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STRIP: &[char] = &[',', ':', ';', '.', '?', '!', '(', ')'];

/// Lowercases, trims the retained punctuation set from both ends and
/// collapses internal whitespace.
pub fn normalize_token(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.trim_matches(|c: char| STRIP.contains(&c) || c.is_whitespace()).to_lowercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentLink {
    pub src: usize,
    pub tgt: usize,
    pub score: f64,
}

/// Diagonal links when both sides are the same sentence after normalization.
pub fn align_identity<S: AsRef<str>, T: AsRef<str>>(src: &[S], tgt: &[T]) -> Result<Vec<AlignmentLink>> {
    let same = src.len() == tgt.len()
        && src.iter().zip(tgt).all(|(a, b)| normalize_token(a.as_ref()) == normalize_token(b.as_ref()));
    if !same {
        return Err(Error::NotIdentical);
    }
    Ok((0..src.len()).map(|i| AlignmentLink { src: i, tgt: i, score: 1.0 }).collect())
}

/// Word translation table `t(target | source)` over normalized tokens.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Lexicon {
    table: BTreeMap<String, BTreeMap<String, f64>>,
}

impl Lexicon {
    pub fn prob(&self, src: &str, tgt: &str) -> f64 {
        self.table.get(src).and_then(|row| row.get(tgt)).copied().unwrap_or(0.0)
    }

    pub fn row(&self, src: &str) -> Option<&BTreeMap<String, f64>> {
        self.table.get(src)
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.table.keys().map(String::as_str)
    }

    /// Tab-separated `source target probability`, sorted.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (s, row) in &self.table {
            for (t, p) in row {
                let _ = writeln!(out, "{s}\t{t}\t{p}");
            }
        }
        out
    }

    pub fn from_tsv(text: &str, origin: &str) -> Result<Self> {
        let mut table: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [s, t, p] = cols[..] else {
                return Err(Error::parse(origin, n + 1, "expected source<TAB>target<TAB>probability"));
            };
            let p: f64 = p.trim().parse().map_err(|_| Error::parse(origin, n + 1, format!("bad probability {p:?}")))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::parse(origin, n + 1, format!("probability {p} outside [0, 1]")));
            }
            table.entry(s.to_string()).or_default().insert(t.to_string(), p);
        }
        Ok(Lexicon { table })
    }
}

/// Sentence pair of token lists.
pub type SentencePair = (Vec<String>, Vec<String>);

/// Parses `src tokens ||| tgt tokens` lines. Tokens split on any whitespace.
pub fn parse_parallel_corpus(text: &str, origin: &str) -> Result<Vec<SentencePair>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((s, t)) = line.split_once("|||") else {
            return Err(Error::parse(origin, n + 1, "missing ||| separator"));
        };
        let toks = |x: &str| x.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        out.push((toks(s), toks(t)));
    }
    Ok(out)
}

pub fn format_parallel_line(src: &[String], tgt: &[String]) -> String {
    format!("{} ||| {}", src.join(" "), tgt.join(" "))
}

/// IBM Model 1 lexicon plus the corpus log-likelihood before the first
/// iteration and after each one.
#[derive(Debug, Clone, PartialEq)]
pub struct Ibm1 {
    pub lexicon: Lexicon,
    pub log_likelihood: Vec<f64>,
}

struct Interned {
    src_vocab: Vec<String>,
    tgt_vocab: Vec<String>,
    pairs: Vec<(Vec<usize>, Vec<usize>)>,
}

fn intern(corpus: &[SentencePair]) -> Interned {
    let mut src_ids: BTreeMap<String, usize> = BTreeMap::new();
    let mut tgt_ids: BTreeMap<String, usize> = BTreeMap::new();
    let mut src_vocab = Vec::new();
    let mut tgt_vocab = Vec::new();
    let id = |map: &mut BTreeMap<String, usize>, vocab: &mut Vec<String>, tok: &str| {
        let norm = normalize_token(tok);
        *map.entry(norm.clone()).or_insert_with(|| {
            vocab.push(norm);
            vocab.len() - 1
        })
    };
    let pairs = corpus
        .iter()
        .map(|(s, t)| {
            let s: Vec<usize> = s.iter().map(|x| id(&mut src_ids, &mut src_vocab, x)).collect();
            let t: Vec<usize> = t.iter().map(|x| id(&mut tgt_ids, &mut tgt_vocab, x)).collect();
            (s, t)
        })
        .collect();
    Interned { src_vocab, tgt_vocab, pairs }
}

fn log_likelihood(pairs: &[(Vec<usize>, Vec<usize>)], t: &BTreeMap<(usize, usize), f64>) -> f64 {
    let mut ll = 0.0;
    for (src, tgt) in pairs {
        if src.is_empty() {
            continue;
        }
        for &f in tgt {
            let total: f64 = src.iter().map(|&e| t.get(&(e, f)).copied().unwrap_or(0.0)).sum();
            ll += (total / src.len() as f64).ln();
        }
    }
    ll
}

/// Trains `t(target | source)` with expectation-maximization, starting from a
/// uniform distribution over the targets each source token co-occurs with.
pub fn train_ibm1(corpus: &[SentencePair], iterations: usize) -> Result<Ibm1> {
    if corpus.iter().all(|(s, t)| s.is_empty() || t.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    if iterations == 0 {
        return Err(Error::InvalidInput("IBM-1 needs at least one iteration".into()));
    }
    let data = intern(corpus);

    let mut cooc: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (s, t) in &data.pairs {
        for &e in s {
            cooc.entry(e).or_default().extend(t.iter().copied());
        }
    }
    let mut t: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (&e, fs) in &cooc {
        let p = 1.0 / fs.len() as f64;
        for &f in fs {
            t.insert((e, f), p);
        }
    }

    let mut trace = vec![log_likelihood(&data.pairs, &t)];
    for _ in 0..iterations {
        let mut counts: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (src, tgt) in &data.pairs {
            for &f in tgt {
                let denom: f64 = src.iter().map(|&e| t[&(e, f)]).sum();
                if denom <= 0.0 {
                    continue;
                }
                for &e in src {
                    *counts.entry((e, f)).or_insert(0.0) += t[&(e, f)] / denom;
                }
            }
        }
        let mut totals: BTreeMap<usize, f64> = BTreeMap::new();
        for (&(e, _), c) in &counts {
            *totals.entry(e).or_insert(0.0) += c;
        }
        for (&(e, f), c) in &counts {
            t.insert((e, f), c / totals[&e]);
        }
        trace.push(log_likelihood(&data.pairs, &t));
    }

    let mut table: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (&(e, f), &p) in &t {
        table.entry(data.src_vocab[e].clone()).or_default().insert(data.tgt_vocab[f].clone(), p);
    }
    Ok(Ibm1 { lexicon: Lexicon { table }, log_likelihood: trace })
}

/// Similarity scores in `[0, 1]`, rows are source tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::InvalidInput(format!(
                    "similarity row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            if let Some(v) = r.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
                return Err(Error::InvalidInput(format!("similarity {v} outside [0, 1]")));
            }
            data.extend_from_slice(r);
        }
        Ok(SimilarityMatrix { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).take(self.rows).map(<[f64]>::to_vec).collect()
    }
}

/// Precomputed similarity matrices keyed by sentence-pair id.
///
/// Text format: a `>pair-id` line followed by one line per source token with
/// whitespace-separated scores, one per target token.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExternalScores {
    pairs: BTreeMap<String, Vec<Vec<f64>>>,
}

impl ExternalScores {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut pairs: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(id) = line.strip_prefix('>') {
                let id = id.trim().to_string();
                if pairs.insert(id.clone(), Vec::new()).is_some() {
                    return Err(Error::parse(origin, n + 1, format!("duplicate pair id {id:?}")));
                }
                current = Some(id);
                continue;
            }
            let Some(id) = &current else {
                return Err(Error::parse(origin, n + 1, "scores before the first >pair-id line"));
            };
            let row = line
                .split_whitespace()
                .map(|v| match v.parse::<f64>() {
                    Ok(x) if x.is_finite() && (0.0..=1.0).contains(&x) => Ok(x),
                    _ => Err(Error::parse(origin, n + 1, format!("bad score {v:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            pairs.get_mut(id).expect("current id inserted").push(row);
        }
        Ok(ExternalScores { pairs })
    }

    pub fn insert(&mut self, id: impl Into<String>, rows: Vec<Vec<f64>>) {
        self.pairs.insert(id.into(), rows);
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, rows) in &self.pairs {
            let _ = writeln!(out, ">{id}");
            for r in rows {
                let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "{}", cells.join(" "));
            }
        }
        out
    }

    pub fn get(&self, id: &str) -> Option<&Vec<Vec<f64>>> {
        self.pairs.get(id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scorer {
    Chargram,
    Lexicon(Lexicon),
    External(ExternalScores),
}

fn chargrams(token: &str) -> BTreeMap<String, usize> {
    let padded: Vec<char> = "^^".chars().chain(token.chars()).chain("$$".chars()).collect();
    let mut grams = BTreeMap::new();
    for w in padded.windows(3) {
        *grams.entry(w.iter().collect::<String>()).or_insert(0) += 1;
    }
    grams
}

/// Cosine similarity of padded character 3-gram count vectors.
pub fn chargram_similarity(a: &str, b: &str) -> f64 {
    let (a, b) = (normalize_token(a), normalize_token(b));
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    if a == b {
        return 1.0;
    }
    let (ga, gb) = (chargrams(&a), chargrams(&b));
    let dot: usize = ga.iter().map(|(g, c)| c * gb.get(g).copied().unwrap_or(0)).sum();
    let norm = |g: &BTreeMap<String, usize>| (g.values().map(|c| c * c).sum::<usize>() as f64).sqrt();
    (dot as f64 / (norm(&ga) * norm(&gb))).min(1.0)
}

/// Fills the similarity matrix for one sentence pair. Identical non-empty
/// normalized tokens always score 1.
pub fn similarity_matrix<S: AsRef<str>, T: AsRef<str>>(
    src: &[S],
    tgt: &[T],
    scorer: &Scorer,
    pair_id: &str,
) -> Result<SimilarityMatrix> {
    let src_n: Vec<String> = src.iter().map(|s| normalize_token(s.as_ref())).collect();
    let tgt_n: Vec<String> = tgt.iter().map(|t| normalize_token(t.as_ref())).collect();
    let mut rows: Vec<Vec<f64>> = match scorer {
        Scorer::Chargram => src_n.iter().map(|s| tgt_n.iter().map(|t| chargram_similarity(s, t)).collect()).collect(),
        Scorer::Lexicon(lex) => src_n
            .iter()
            .map(|s| {
                let raw: Vec<f64> = tgt_n.iter().map(|t| lex.prob(s, t)).collect();
                let max = raw.iter().copied().fold(0.0, f64::max);
                raw.iter().map(|v| if max > 0.0 { v / max } else { 0.0 }).collect()
            })
            .collect(),
        Scorer::External(ext) => {
            let rows = ext.get(pair_id).ok_or_else(|| Error::MissingExternalScores(pair_id.to_string()))?;
            if rows.len() != src_n.len() || rows.iter().any(|r| r.len() != tgt_n.len()) {
                return Err(Error::InvalidInput(format!(
                    "external scores for {pair_id:?} do not match a {}x{} sentence pair",
                    src_n.len(),
                    tgt_n.len()
                )));
            }
            rows.clone()
        }
    };
    for (i, s) in src_n.iter().enumerate() {
        for (j, t) in tgt_n.iter().enumerate() {
            if !s.is_empty() && s == t {
                rows[i][j] = 1.0;
            }
        }
    }
    if rows.is_empty() {
        return Ok(SimilarityMatrix { rows: 0, cols: tgt_n.len(), data: Vec::new() });
    }
    SimilarityMatrix::from_rows(rows)
}

fn argmax(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Links `(i, j)` where `j` is the best target for row `i` and `i` the best
/// source for column `j`; ties go to the lowest index. Zero-score pairs are
/// never linked.
pub fn align_argmax(m: &SimilarityMatrix) -> Vec<AlignmentLink> {
    let col_best: Vec<Option<usize>> = (0..m.cols()).map(|j| argmax((0..m.rows()).map(|i| m.get(i, j)))).collect();
    (0..m.rows())
        .filter_map(|i| {
            let j = argmax((0..m.cols()).map(|j| m.get(i, j)))?;
            let score = m.get(i, j);
            (col_best[j] == Some(i) && score > 0.0).then_some(AlignmentLink { src: i, tgt: j, score })
        })
        .collect()
}

/// Target indices linked to any gold source index.
pub fn expected_emphasis(gold: &[usize], links: &[AlignmentLink], src_len: usize) -> Result<BTreeSet<usize>> {
    if let Some(&index) = gold.iter().find(|&&g| g >= src_len) {
        return Err(Error::IndexOutOfBounds { index, len: src_len });
    }
    Ok(links.iter().filter(|l| gold.contains(&l.src)).map(|l| l.tgt).collect())
}

/// How an aligner is selected on the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum AlignerSpec {
    Identity,
    Chargram,
    Lexicon(std::path::PathBuf),
    External(std::path::PathBuf),
}

impl std::str::FromStr for AlignerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "identity" => Ok(AlignerSpec::Identity),
            None if s == "chargram" => Ok(AlignerSpec::Chargram),
            Some(("lexicon", p)) if !p.is_empty() => Ok(AlignerSpec::Lexicon(p.into())),
            Some(("external", p)) if !p.is_empty() => Ok(AlignerSpec::External(p.into())),
            _ => Err(Error::UnknownScorer(s.to_string())),
        }
    }
}

/// Sentence aligner: identity fast path, then similarity plus mutual argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Aligner {
    scorer: Scorer,
}

/// IBM-1 iterations used when a lexicon aligner is given a parallel corpus.
pub const DEFAULT_IBM1_ITERATIONS: usize = 10;

impl Aligner {
    pub fn new(scorer: Scorer) -> Self {
        Aligner { scorer }
    }

    pub fn scorer(&self) -> &Scorer {
        &self.scorer
    }

    /// Builds the aligner named by `spec`. A lexicon path may hold either a
    /// lexicon table or a `|||` parallel corpus, which is trained on the spot.
    /// The identity aligner falls back to character 3-grams.
    pub fn from_spec(spec: &AlignerSpec) -> Result<Self> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::NotFound(p.to_path_buf()),
                _ => Error::Io(e),
            })
        };
        let scorer = match spec {
            AlignerSpec::Identity | AlignerSpec::Chargram => Scorer::Chargram,
            AlignerSpec::Lexicon(p) => {
                let text = read(p)?;
                let origin = p.display().to_string();
                if text.contains("|||") {
                    let corpus = parse_parallel_corpus(&text, &origin)?;
                    Scorer::Lexicon(train_ibm1(&corpus, DEFAULT_IBM1_ITERATIONS)?.lexicon)
                } else {
                    Scorer::Lexicon(Lexicon::from_tsv(&text, &origin)?)
                }
            }
            AlignerSpec::External(p) => Scorer::External(ExternalScores::parse(&read(p)?, &p.display().to_string())?),
        };
        Ok(Aligner { scorer })
    }

    /// Returns the links and whether the identity fast path was used.
    pub fn align<S: AsRef<str>, T: AsRef<str>>(
        &self,
        src: &[S],
        tgt: &[T],
        pair_id: &str,
    ) -> Result<(Vec<AlignmentLink>, bool)> {
        match align_identity(src, tgt) {
            Ok(links) => Ok((links, true)),
            Err(Error::NotIdentical) => {
                let m = similarity_matrix(src, tgt, &self.scorer, pair_id)?;
                Ok((align_argmax(&m), false))
            }
            Err(e) => Err(e),
        }
    }
}
