//! A log-linear next-token model over a small vocabulary.
//!
//! Every context feature owns a row of logits; the next-token logits at a
//! position are the sum of the rows of its active features, followed by a
//! softmax. Features are the truncated token history (always) and, when
//! enabled, one feature per distinct token seen so far. Rows that were never
//! trained are implicitly zero, so an empty table is the uniform model.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{
    check_temperature, draw_tempered, BackendKind, Boundary, Capabilities, LmBackend,
    SampleRequest, Sampled, ScoredSequence,
};
use crate::error::{Error, Result};
use crate::tokenize::{detokenize, tokenize, END};

const PAD: &str = "<s>";
const SEP: char = '\u{1f}';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSpec {
    /// Number of trailing tokens forming the history feature.
    pub history: usize,
    /// Add one feature per distinct token already in the context.
    pub bag: bool,
}

impl Default for ContextSpec {
    fn default() -> Self {
        Self {
            history: 2,
            bag: false,
        }
    }
}

/// Running feature set for one left-to-right pass over a token stream.
struct FeatureCursor<'a> {
    spec: ContextSpec,
    history: Vec<&'a str>,
    bag: Vec<String>,
    seen: HashSet<&'a str>,
}

impl<'a> FeatureCursor<'a> {
    fn new(spec: ContextSpec) -> Self {
        Self {
            spec,
            history: Vec::new(),
            bag: Vec::new(),
            seen: HashSet::new(),
        }
    }

    fn push(&mut self, token: &'a str) {
        self.history.push(token);
        if self.spec.bag && self.seen.insert(token) {
            self.bag.push(format!("b:{token}"));
        }
    }

    fn features(&self) -> Vec<String> {
        let n = self.spec.history;
        let mut key = String::from("h:");
        let have = self.history.len().min(n);
        for i in 0..n {
            if i > 0 {
                key.push(SEP);
            }
            if i < n - have {
                key.push_str(PAD);
            } else {
                key.push_str(self.history[self.history.len() + i - n]);
            }
        }
        let mut out = Vec::with_capacity(1 + self.bag.len());
        out.push(key);
        out.extend(self.bag.iter().cloned());
        out
    }
}

/// A prompt/completion pair compiled to per-position features and targets.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub positions: Vec<(Vec<String>, usize)>,
}

/// Sparse gradient (or any update) over feature rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradient {
    pub rows: HashMap<String, Vec<f64>>,
}

impl Gradient {
    pub fn row_mut(&mut self, key: &str, width: usize) -> &mut Vec<f64> {
        if !self.rows.contains_key(key) {
            self.rows.insert(key.to_string(), vec![0.0; width]);
        }
        self.rows.get_mut(key).expect("row just inserted")
    }

    pub fn get(&self, key: &str, token: usize) -> f64 {
        self.rows.get(key).map(|r| r[token]).unwrap_or(0.0)
    }

    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        let mut keys: Vec<&String> = other.rows.keys().collect();
        keys.sort();
        for k in keys {
            let src = &other.rows[k];
            let dst = self.row_mut(k, src.len());
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.rows
            .values()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    id: String,
    context: ContextSpec,
    vocab: Vec<String>,
    features: Vec<String>,
    logits: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxLm {
    id: String,
    spec: ContextSpec,
    vocab: Vec<String>,
    token_index: HashMap<String, usize>,
    features: Vec<String>,
    feature_index: HashMap<String, usize>,
    table: Vec<Vec<f64>>,
}

impl SoftmaxLm {
    /// A uniform model over `vocab` plus the end-of-text token.
    pub fn new<I, S>(vocab: I, spec: ContextSpec) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut words: Vec<String> = vocab.into_iter().map(Into::into).collect();
        words.retain(|w| w != END);
        words.sort();
        words.dedup();
        words.push(END.to_string());
        let token_index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Self {
            id: "softmax".into(),
            spec,
            vocab: words,
            token_index,
            features: Vec::new(),
            feature_index: HashMap::new(),
            table: Vec::new(),
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn spec(&self) -> ContextSpec {
        self.spec
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn token_id(&self, token: &str) -> Option<usize> {
        self.token_index.get(token).copied()
    }

    pub fn feature_keys(&self) -> &[String] {
        &self.features
    }

    /// Logit contributed by `feature` to `token` (zero for untrained rows).
    pub fn param(&self, feature: &str, token: usize) -> f64 {
        self.feature_index
            .get(feature)
            .map(|&r| self.table[r][token])
            .unwrap_or(0.0)
    }

    fn row_for(&mut self, feature: &str) -> usize {
        if let Some(&r) = self.feature_index.get(feature) {
            return r;
        }
        let r = self.features.len();
        self.features.push(feature.to_string());
        self.feature_index.insert(feature.to_string(), r);
        self.table.push(vec![0.0; self.vocab.len()]);
        r
    }

    pub fn set_param(&mut self, feature: &str, token: usize, value: f64) {
        let r = self.row_for(feature);
        self.table[r][token] = value;
    }

    /// Applies `params += scale * update`; new rows are created in sorted
    /// key order so the checkpoint layout is reproducible.
    pub fn apply(&mut self, update: &Gradient, scale: f64) {
        let mut keys: Vec<&String> = update.rows.keys().collect();
        keys.sort();
        for k in keys {
            let r = self.row_for(k);
            for (p, g) in self.table[r].iter_mut().zip(&update.rows[k]) {
                *p += scale * g;
            }
        }
    }

    pub fn params_finite(&self) -> bool {
        self.table.iter().flatten().all(|v| v.is_finite())
    }

    /// Compiles a prompt and completion into positions to be predicted.
    pub fn encode(&self, prompt: &str, completion: &str, boundary: Boundary) -> Result<Encoded> {
        let ptoks = tokenize(prompt);
        let mut ctoks = tokenize(completion);
        if boundary == Boundary::Complete {
            ctoks.push(END.to_string());
        }
        if ctoks.is_empty() {
            return Err(Error::domain("continuation is empty after tokenization"));
        }
        let mut cursor = FeatureCursor::new(self.spec);
        for t in &ptoks {
            cursor.push(t);
        }
        let mut positions = Vec::with_capacity(ctoks.len());
        for t in &ctoks {
            let target = self
                .token_id(t)
                .ok_or_else(|| Error::domain(format!("token {t:?} not in model vocabulary")))?;
            positions.push((cursor.features(), target));
            cursor.push(t);
        }
        Ok(Encoded { positions })
    }

    pub fn logits(&self, features: &[String]) -> Vec<f64> {
        let mut out = vec![0.0; self.vocab.len()];
        for f in features {
            if let Some(&r) = self.feature_index.get(f) {
                for (o, v) in out.iter_mut().zip(&self.table[r]) {
                    *o += v;
                }
            }
        }
        out
    }

    /// Log-softmax of the logits at one position.
    pub fn log_probs(&self, features: &[String]) -> Vec<f64> {
        let logits = self.logits(features);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits.into_iter().map(|l| l - lse).collect()
    }

    /// Per-position log-probabilities of the encoded targets.
    pub fn encoded_logprobs(&self, enc: &Encoded) -> Vec<f64> {
        enc.positions
            .iter()
            .map(|(f, t)| self.log_probs(f)[*t])
            .collect()
    }

    /// Adds `weight * d/dθ log p(targets)` into `grad`; returns the log-probability.
    pub fn accumulate_logprob_grad(&self, enc: &Encoded, weight: f64, grad: &mut Gradient) -> f64 {
        let width = self.vocab.len();
        let mut total = 0.0;
        for (features, target) in &enc.positions {
            let lp = self.log_probs(features);
            total += lp[*target];
            // d log p(t) / d logit_v = 1[v = t] - p(v)
            let delta: Vec<f64> = lp
                .iter()
                .enumerate()
                .map(|(v, l)| weight * (f64::from(u8::from(v == *target)) - l.exp()))
                .collect();
            for f in features {
                let row = grad.row_mut(f, width);
                for (g, d) in row.iter_mut().zip(&delta) {
                    *g += d;
                }
            }
        }
        total
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            id: self.id.clone(),
            context: self.spec,
            vocab: self.vocab.clone(),
            features: self.features.clone(),
            logits: self.table.clone(),
        };
        let body = serde_json::to_vec_pretty(&ck)?;
        crate::io::write_atomic(path, &body)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(bytes)?;
        if ck.vocab.last().map(String::as_str) != Some(END) {
            return Err(Error::data(
                None,
                "checkpoint vocabulary must end with the end token",
            ));
        }
        if ck.features.len() != ck.logits.len()
            || ck.logits.iter().any(|r| r.len() != ck.vocab.len())
        {
            return Err(Error::data(
                None,
                "checkpoint logit table has the wrong shape",
            ));
        }
        let token_index = ck
            .vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        let feature_index = ck
            .features
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Ok(Self {
            id: ck.id,
            spec: ck.context,
            vocab: ck.vocab,
            token_index,
            features: ck.features,
            feature_index,
            table: ck.logits,
        })
    }
}

impl LmBackend for SoftmaxLm {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn kind(&self) -> BackendKind {
        BackendKind::SoftmaxToy
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            can_score: true,
            can_sample: true,
            can_enumerate: false,
        }
    }

    fn score(
        &self,
        prompt: &str,
        continuation: &str,
        boundary: Boundary,
    ) -> Result<ScoredSequence> {
        let enc = self.encode(prompt, continuation, boundary)?;
        let lps = self.encoded_logprobs(&enc);
        let tokens = enc
            .positions
            .iter()
            .map(|(_, t)| self.vocab[*t].clone())
            .collect();
        Ok(ScoredSequence::new(continuation, tokens, lps))
    }

    fn sample(&self, prompt: &str, request: &SampleRequest) -> Result<Sampled> {
        check_temperature(request.temperature)?;
        let ptoks = tokenize(prompt);
        let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
        let mut out: Vec<String> = Vec::new();
        let mut truncated = false;
        let end = self.vocab.len() - 1;
        loop {
            let mut cursor = FeatureCursor::new(self.spec);
            for t in ptoks.iter().chain(out.iter()) {
                cursor.push(t);
            }
            let lp = self.log_probs(&cursor.features());
            let next = draw_tempered(&mut rng, &lp, request.temperature);
            if next == end {
                break;
            }
            if out.len() >= request.max_tokens {
                truncated = true;
                break;
            }
            out.push(self.vocab[next].clone());
        }
        Ok(Sampled {
            text: detokenize(&out),
            tokens: out,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SoftmaxLm {
        SoftmaxLm::new(["a", "b", "c"], ContextSpec::default())
    }

    #[test]
    fn uniform_when_untrained() {
        let m = tiny();
        let s = m.score("x y", "a", Boundary::Prefix).unwrap();
        assert!((s.total + 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn distributions_normalise() {
        let mut m = tiny();
        m.set_param("h:x\u{1f}y", 0, 3.0);
        m.set_param("h:x\u{1f}y", 2, -1.5);
        let enc = m.encode("x y", "a b", Boundary::Complete).unwrap();
        for (f, _) in &enc.positions {
            let s: f64 = m.log_probs(f).iter().map(|l| l.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn history_features_pad_short_contexts() {
        let m = tiny();
        let enc = m.encode("", "a", Boundary::Prefix).unwrap();
        assert_eq!(enc.positions[0].0, vec!["h:<s>\u{1f}<s>".to_string()]);
        let enc = m.encode("z", "a b", Boundary::Prefix).unwrap();
        assert_eq!(enc.positions[1].0, vec!["h:z\u{1f}a".to_string()]);
    }

    #[test]
    fn bag_features_follow_first_appearance() {
        let m = SoftmaxLm::new(
            ["a"],
            ContextSpec {
                history: 1,
                bag: true,
            },
        );
        let enc = m.encode("q r q", "a", Boundary::Prefix).unwrap();
        assert_eq!(enc.positions[0].0, vec!["h:q", "b:q", "b:r"]);
    }

    #[test]
    fn unknown_token_is_a_domain_error() {
        let err = tiny().score("x", "zzz", Boundary::Prefix).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = tiny().with_id("t");
        m.set_param("h:a\u{1f}b", 1, 0.25);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        assert_eq!(SoftmaxLm::load(&p).unwrap(), m);
    }

    #[test]
    fn sampling_is_seeded() {
        let m = tiny();
        let r = SampleRequest::new(1.0, 3, 10);
        assert_eq!(m.sample("x", &r).unwrap(), m.sample("x", &r).unwrap());
    }
}
