//! An exactly enumerable language model over a handful of reviews.
//!
//! For every review the model stores the prior over the two answers and, for
//! each answer, a finite distribution over whole explanations. Token-level
//! conditionals come from a prefix trie over those explanations, so the
//! chain-rule product along any path reproduces the path probability and the
//! joint over (answer, explanation) can be enumerated.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    check_temperature, draw_tempered, BackendKind, Boundary, Capabilities, LmBackend,
    SampleRequest, Sampled, ScoredSequence, ZERO_FLOOR,
};
use crate::error::{Error, Result};
use crate::prompting::{parse_prompt, Label, ParsedPrompt};
use crate::tokenize::{detokenize, tokenize, END};

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Default)]
struct TrieNode {
    mass: f64,
    end: f64,
    children: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
struct Trie {
    nodes: Vec<TrieNode>,
}

impl Trie {
    fn build(paths: &[(Vec<String>, f64)]) -> Self {
        let mut nodes = vec![TrieNode::default()];
        for (tokens, p) in paths {
            let mut at = 0;
            nodes[at].mass += p;
            for tok in tokens {
                let next = match nodes[at].children.get(tok) {
                    Some(&n) => n,
                    None => {
                        nodes.push(TrieNode::default());
                        let n = nodes.len() - 1;
                        nodes[at].children.insert(tok.clone(), n);
                        n
                    }
                };
                at = next;
                nodes[at].mass += p;
            }
            nodes[at].end += p;
        }
        Self { nodes }
    }

    /// Conditional probabilities along `tokens`; `None` marks a step that
    /// leaves the trie.
    fn conditionals(&self, tokens: &[String], complete: bool) -> Vec<f64> {
        let mut out = Vec::with_capacity(tokens.len() + 1);
        let mut at = Some(0usize);
        for tok in tokens {
            match at {
                Some(n) => {
                    let node = &self.nodes[n];
                    match node.children.get(tok) {
                        Some(&c) if node.mass > 0.0 => {
                            out.push(self.nodes[c].mass / node.mass);
                            at = Some(c);
                        }
                        _ => {
                            out.push(0.0);
                            at = None;
                        }
                    }
                }
                None => out.push(0.0),
            }
        }
        if complete {
            out.push(match at {
                Some(n) if self.nodes[n].mass > 0.0 => self.nodes[n].end / self.nodes[n].mass,
                _ => 0.0,
            });
        }
        out
    }
}

/// One review with its answer prior and per-answer explanation distributions.
#[derive(Debug, Clone)]
pub struct TabularQuestion {
    pub review: String,
    /// `[P(Truthful | q), P(Deceptive | q)]`.
    pub prior: [f64; 2],
    /// Explanation token paths with their probabilities, per answer.
    pub paths: [Vec<(Vec<String>, f64)>; 2],
    tries: [Trie; 2],
}

impl TabularQuestion {
    /// `P(e | q, a)` for a complete explanation, read straight from the table.
    pub fn path_probability(&self, answer: Label, explanation: &str) -> f64 {
        let tokens = tokenize(explanation);
        self.paths[answer.index()]
            .iter()
            .filter(|(t, _)| *t == tokens)
            .map(|(_, p)| p)
            .sum()
    }

    /// Every explanation with positive probability under either answer.
    pub fn support(&self) -> Vec<String> {
        let set: BTreeSet<String> = self
            .paths
            .iter()
            .flatten()
            .filter(|(_, p)| *p > 0.0)
            .map(|(t, _)| detokenize(t))
            .collect();
        set.into_iter().collect()
    }
}

#[derive(Debug, Clone)]
pub struct TabularLm {
    id: String,
    questions: Vec<TabularQuestion>,
    by_review: HashMap<String, usize>,
    vocab: BTreeSet<String>,
    allow_zero: bool,
}

type Explanations = [Vec<(String, f64)>; 2];

#[derive(Debug, Default)]
pub struct TabularBuilder {
    id: Option<String>,
    questions: Vec<(String, [f64; 2], Explanations)>,
}

impl TabularBuilder {
    pub fn id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    /// Adds a review with `P(Truthful | q) = prior_truthful` and the given
    /// explanation distributions for each answer.
    pub fn question<S: Into<String>>(
        mut self,
        review: impl Into<String>,
        prior_truthful: f64,
        truthful: Vec<(S, f64)>,
        deceptive: Vec<(S, f64)>,
    ) -> Self {
        let conv = |v: Vec<(S, f64)>| v.into_iter().map(|(s, p)| (s.into(), p)).collect();
        self.questions.push((
            review.into(),
            [prior_truthful, 1.0 - prior_truthful],
            [conv(truthful), conv(deceptive)],
        ));
        self
    }

    pub fn build(self) -> Result<TabularLm> {
        let mut questions = Vec::new();
        let mut by_review = HashMap::new();
        let mut vocab: BTreeSet<String> =
            Label::ALL.iter().map(|l| l.as_str().to_string()).collect();
        for (review, prior, dists) in self.questions {
            if prior.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::domain(format!(
                    "prior {prior:?} is not a distribution"
                )));
            }
            let mut paths: [Vec<(Vec<String>, f64)>; 2] = [Vec::new(), Vec::new()];
            for (slot, dist) in dists.into_iter().enumerate() {
                let mut merged: BTreeMap<Vec<String>, f64> = BTreeMap::new();
                for (text, p) in dist {
                    if !(p.is_finite() && p >= 0.0) {
                        return Err(Error::domain(format!("invalid path probability {p}")));
                    }
                    let tokens = tokenize(&text);
                    if tokens.is_empty() {
                        return Err(Error::domain("empty explanation path"));
                    }
                    vocab.extend(tokens.iter().cloned());
                    *merged.entry(tokens).or_default() += p;
                }
                let total: f64 = merged.values().sum();
                if (total - 1.0).abs() > SUM_TOLERANCE {
                    return Err(Error::domain(format!(
                        "explanation distribution for {:?} sums to {total}",
                        Label::ALL[slot]
                    )));
                }
                paths[slot] = merged.into_iter().collect();
            }
            let tries = [Trie::build(&paths[0]), Trie::build(&paths[1])];
            if by_review.insert(review.clone(), questions.len()).is_some() {
                return Err(Error::domain(format!("duplicate review {review:?}")));
            }
            questions.push(TabularQuestion {
                review,
                prior,
                paths,
                tries,
            });
        }
        Ok(TabularLm {
            id: self.id.unwrap_or_else(|| "tabular".to_string()),
            questions,
            by_review,
            vocab,
            allow_zero: false,
        })
    }
}

impl TabularLm {
    pub fn builder() -> TabularBuilder {
        TabularBuilder::default()
    }

    /// Score zero-probability events as `ln(1e-300)` instead of failing.
    pub fn with_allow_zero(mut self, allow: bool) -> Self {
        self.allow_zero = allow;
        self
    }

    pub fn questions(&self) -> &[TabularQuestion] {
        &self.questions
    }

    pub fn question(&self, review: &str) -> Result<&TabularQuestion> {
        self.by_review
            .get(review)
            .map(|&i| &self.questions[i])
            .ok_or_else(|| Error::domain("review not present in tabular model"))
    }

    pub fn vocab(&self) -> &BTreeSet<String> {
        &self.vocab
    }

    fn parse(&self, prompt: &str) -> Result<ParsedPrompt> {
        parse_prompt(prompt)
            .ok_or_else(|| Error::domain("prompt does not match any known template"))
    }

    fn log_or_fail(&self, p: f64, what: &str) -> Result<f64> {
        if p > 0.0 {
            Ok(p.ln())
        } else if self.allow_zero {
            Ok(ZERO_FLOOR.ln())
        } else {
            Err(Error::domain(format!("zero probability for {what}")))
        }
    }

    /// `P(answer | q, e)` from the joint by Bayes' rule.
    fn posterior(&self, q: &TabularQuestion, explanation: &str) -> [f64; 2] {
        let tokens = tokenize(explanation);
        let joint: Vec<f64> = Label::ALL
            .iter()
            .map(|a| {
                let likelihood: f64 = q.tries[a.index()]
                    .conditionals(&tokens, true)
                    .iter()
                    .product();
                q.prior[a.index()] * likelihood
            })
            .collect();
        let z = joint[0] + joint[1];
        if z > 0.0 {
            [joint[0] / z, joint[1] / z]
        } else {
            [0.0, 0.0]
        }
    }

    fn check_vocab(&self, tokens: &[String]) -> Result<()> {
        match tokens.iter().find(|t| !self.vocab.contains(*t)) {
            Some(t) => Err(Error::domain(format!(
                "token {t:?} absent from tabular vocabulary"
            ))),
            None => Ok(()),
        }
    }

    fn score_label(
        &self,
        dist: [f64; 2],
        continuation: &str,
        tokens: Vec<String>,
        boundary: Boundary,
    ) -> Result<ScoredSequence> {
        let label = match tokens.as_slice() {
            [t] => t.parse::<Label>().ok(),
            _ => None,
        };
        let p = label.map(|l| dist[l.index()]).unwrap_or(0.0);
        let mut lps = vec![self.log_or_fail(p, &format!("answer {continuation:?}"))?];
        let mut toks = tokens;
        if boundary == Boundary::Complete {
            lps.push(0.0);
            toks.push(END.to_string());
        }
        Ok(ScoredSequence::new(continuation, toks, lps))
    }
}

impl LmBackend for TabularLm {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Tabular
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            can_score: true,
            can_sample: true,
            can_enumerate: true,
        }
    }

    fn score(
        &self,
        prompt: &str,
        continuation: &str,
        boundary: Boundary,
    ) -> Result<ScoredSequence> {
        let tokens = tokenize(continuation);
        if tokens.is_empty() {
            return Err(Error::domain("continuation is empty after tokenization"));
        }
        self.check_vocab(&tokens)?;
        let parsed = self.parse(prompt)?;
        let q = self.question(parsed.review())?;
        match parsed {
            ParsedPrompt::Explain { answer, .. } => {
                let complete = boundary == Boundary::Complete;
                let probs = q.tries[answer.index()].conditionals(&tokens, complete);
                let lps = probs
                    .iter()
                    .map(|&p| self.log_or_fail(p, &format!("explanation {continuation:?}")))
                    .collect::<Result<Vec<_>>>()?;
                let mut toks = tokens;
                if complete {
                    toks.push(END.to_string());
                }
                Ok(ScoredSequence::new(continuation, toks, lps))
            }
            ParsedPrompt::Prior { .. } => self.score_label(q.prior, continuation, tokens, boundary),
            ParsedPrompt::Adjusted { explanation, .. } => {
                let post = self.posterior(q, &explanation);
                if post == [0.0, 0.0] && !self.allow_zero {
                    return Err(Error::domain(format!(
                        "explanation {explanation:?} has zero probability under both answers"
                    )));
                }
                self.score_label(post, continuation, tokens, boundary)
            }
        }
    }

    fn sample(&self, prompt: &str, request: &SampleRequest) -> Result<Sampled> {
        check_temperature(request.temperature)?;
        let parsed = self.parse(prompt)?;
        let q = self.question(parsed.review())?;
        let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
        let pick_label = |dist: [f64; 2], rng: &mut ChaCha8Rng| -> Result<Sampled> {
            if dist[0] + dist[1] <= 0.0 {
                return Err(Error::domain("no answer has positive probability"));
            }
            let logs = [dist[0].ln(), dist[1].ln()];
            let label = Label::ALL[draw_tempered(rng, &logs, request.temperature)];
            Ok(Sampled {
                text: label.as_str().to_string(),
                tokens: vec![label.as_str().to_string()],
                truncated: false,
            })
        };
        match parsed {
            ParsedPrompt::Explain { answer, .. } => {
                let trie = &q.tries[answer.index()];
                let mut at = 0usize;
                let mut tokens: Vec<String> = Vec::new();
                let mut truncated = false;
                loop {
                    let node = &trie.nodes[at];
                    if node.mass <= 0.0 {
                        return Err(Error::domain("explanation distribution has no mass"));
                    }
                    let mut options: Vec<(Option<&String>, f64)> = vec![(None, node.end.ln())];
                    for (tok, &child) in &node.children {
                        options.push((Some(tok), trie.nodes[child].mass.ln()));
                    }
                    let logs: Vec<f64> = options.iter().map(|(_, w)| *w).collect();
                    let choice = draw_tempered(&mut rng, &logs, request.temperature);
                    match options[choice].0 {
                        None => break,
                        Some(tok) => {
                            if tokens.len() >= request.max_tokens {
                                truncated = true;
                                break;
                            }
                            tokens.push(tok.clone());
                            at = node.children[tok];
                        }
                    }
                }
                Ok(Sampled {
                    text: detokenize(&tokens),
                    tokens,
                    truncated,
                })
            }
            ParsedPrompt::Prior { .. } => pick_label(q.prior, &mut rng),
            ParsedPrompt::Adjusted { explanation, .. } => {
                pick_label(self.posterior(q, &explanation), &mut rng)
            }
        }
    }
}
