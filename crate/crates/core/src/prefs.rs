//! Preference pairs for DPO from ranked, scored explanations.
//!
//! Per (review, answer) the top and bottom `p` fractions of the ranking form
//! the preferred and dispreferred pools; pairs are drawn without replacement
//! from the eligible (top, bottom) combinations.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::derive_seed;
use crate::io::{read_jsonl, write_json, write_jsonl};
use crate::prompting::Label;
use crate::sampler::Explanation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    /// Fraction of the ranking in each pool.
    pub fraction: f64,
    pub pairs_per_example: usize,
    /// Keep only pairs with chosen > 0 > rejected.
    pub zero_straddle: bool,
    pub seed: u64,
}

impl SelectionPolicy {
    /// Top/bottom 10 %, 8 pairs, zero-straddle filter on.
    pub fn tripadvisor(seed: u64) -> Self {
        Self {
            fraction: 0.10,
            pairs_per_example: 8,
            zero_straddle: true,
            seed,
        }
    }

    /// Top/bottom 5 %, 8 pairs, no zero threshold.
    pub fn amazon(seed: u64) -> Self {
        Self {
            fraction: 0.05,
            pairs_per_example: 8,
            zero_straddle: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 0.5) {
            return Err(Error::domain(format!(
                "pool fraction must lie in (0, 0.5], got {}",
                self.fraction
            )));
        }
        if self.pairs_per_example == 0 {
            return Err(Error::domain("pairs per example must be at least 1"));
        }
        Ok(())
    }

    /// `ceil(p * n)`.
    pub fn pool_size(&self, n: usize) -> usize {
        ((self.fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub review_id: String,
    pub answer: Label,
    /// The explanation prompt `Q(q, a)`.
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub chosen_score: f64,
    pub rejected_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pools {
    pub top: Vec<Explanation>,
    pub bottom: Vec<Explanation>,
    pub warning: Option<String>,
}

/// Splits a descending ranking into its top and bottom pools.
pub fn select_pools(ranked: &[Explanation], policy: &SelectionPolicy) -> Result<Pools> {
    policy.validate()?;
    if ranked.is_empty() {
        return Err(Error::domain("cannot select pools from an empty ranking"));
    }
    let values: Vec<f64> = ranked
        .iter()
        .map(|e| {
            e.score_value()
                .ok_or_else(|| Error::domain("ranking contains an unscored explanation"))
        })
        .collect::<Result<_>>()?;
    if values.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::domain("ranking is not in descending score order"));
    }
    let n = ranked.len();
    let mut k = policy.pool_size(n);
    let mut warning = None;
    if 2 * k > n {
        let cut = n / 2;
        warning = Some(format!(
            "pools of {k} overlap in a ranking of {n}; truncated to {cut} each"
        ));
        k = cut;
    }
    Ok(Pools {
        top: ranked[..k].to_vec(),
        bottom: ranked[n - k..].to_vec(),
        warning,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub pairs: Vec<PreferencePair>,
    pub eligible: usize,
    pub diagnostic: Option<String>,
}

/// Every (top, bottom) index combination that may form a pair, in
/// top-major order.
pub fn eligible_combinations(
    top: &[Explanation],
    bottom: &[Explanation],
    zero_straddle: bool,
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, w) in top.iter().enumerate() {
        for (j, l) in bottom.iter().enumerate() {
            let (Some(sw), Some(sl)) = (w.score_value(), l.score_value()) else {
                continue;
            };
            let contrast = !zero_straddle || (sw > 0.0 && sl < 0.0);
            if sw > sl && contrast && w.explanation != l.explanation {
                out.push((i, j));
            }
        }
    }
    out
}

/// Seed used to shuffle the combinations of one (review, answer).
pub fn example_seed(policy: &SelectionPolicy, review_id: &str, answer: Label) -> u64 {
    derive_seed(&[&policy.seed.to_string(), review_id, answer.as_str()])
}

/// Draws up to `pairs_per_example` distinct eligible combinations.
pub fn build_pairs(
    prompt: &str,
    top: &[Explanation],
    bottom: &[Explanation],
    policy: &SelectionPolicy,
) -> Result<PairOutcome> {
    policy.validate()?;
    let Some(first) = top.first().or(bottom.first()) else {
        return Ok(PairOutcome {
            pairs: Vec::new(),
            eligible: 0,
            diagnostic: Some("both pools are empty".into()),
        });
    };
    let (review_id, answer) = (first.review_id.clone(), first.answer);
    if top
        .iter()
        .chain(bottom)
        .any(|e| e.review_id != review_id || e.answer != answer)
    {
        return Err(Error::domain(
            "pools mix explanations of different examples",
        ));
    }
    if top
        .iter()
        .any(|t| bottom.iter().any(|b| b.sample_index == t.sample_index))
    {
        return Err(Error::domain("top and bottom pools overlap"));
    }
    let mut combos = eligible_combinations(top, bottom, policy.zero_straddle);
    let eligible = combos.len();
    let mut rng = ChaCha8Rng::seed_from_u64(example_seed(policy, &review_id, answer));
    combos.shuffle(&mut rng);
    combos.truncate(policy.pairs_per_example);
    let pairs = combos
        .into_iter()
        .map(|(i, j)| PreferencePair {
            review_id: review_id.clone(),
            answer,
            prompt: prompt.to_string(),
            chosen: top[i].explanation.clone(),
            rejected: bottom[j].explanation.clone(),
            chosen_score: top[i].score_value().expect("eligible implies scored"),
            rejected_score: bottom[j].score_value().expect("eligible implies scored"),
        })
        .collect();
    let diagnostic = (eligible == 0)
        .then(|| format!("no eligible pairs for review {review_id} answer {answer}"));
    Ok(PairOutcome {
        pairs,
        eligible,
        diagnostic,
    })
}

/// One ranked (review, answer) example with its explanation prompt.
#[derive(Debug, Clone)]
pub struct RankedExample {
    pub prompt: String,
    pub ranked: Vec<Explanation>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub examples: usize,
    pub pairs: usize,
    pub examples_without_pairs: usize,
    pub warnings: Vec<String>,
}

/// Builds pairs for every example in order.
pub fn build_dataset(
    examples: &[RankedExample],
    policy: &SelectionPolicy,
) -> Result<(Vec<PreferencePair>, BuildSummary)> {
    let mut pairs = Vec::new();
    let mut summary = BuildSummary {
        examples: examples.len(),
        ..BuildSummary::default()
    };
    for ex in examples {
        let pools = select_pools(&ex.ranked, policy)?;
        summary.warnings.extend(pools.warning);
        let out = build_pairs(&ex.prompt, &pools.top, &pools.bottom, policy)?;
        if out.pairs.is_empty() {
            summary.examples_without_pairs += 1;
        }
        summary.warnings.extend(out.diagnostic);
        pairs.extend(out.pairs);
    }
    summary.pairs = pairs.len();
    Ok((pairs, summary))
}

/// Trainer-facing line: `{"prompt", "chosen", "rejected"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpoLine {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub policy: SelectionPolicy,
    pub count: usize,
    pub examples: usize,
    pub source_runs: Vec<String>,
}

pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest.json");
    p.into()
}

/// Writes the DPO JSONL file and its `.manifest.json` sidecar.
pub fn emit_dataset(
    path: &Path,
    pairs: &[PreferencePair],
    policy: &SelectionPolicy,
    examples: usize,
    source_runs: Vec<String>,
) -> Result<DatasetManifest> {
    for p in pairs {
        if p.chosen_score.partial_cmp(&p.rejected_score) != Some(std::cmp::Ordering::Greater)
            || p.chosen == p.rejected
        {
            return Err(Error::domain(format!(
                "invalid pair for review {}: chosen {} vs rejected {}",
                p.review_id, p.chosen_score, p.rejected_score
            )));
        }
    }
    let lines: Vec<DpoLine> = pairs
        .iter()
        .map(|p| DpoLine {
            prompt: p.prompt.clone(),
            chosen: p.chosen.clone(),
            rejected: p.rejected.clone(),
        })
        .collect();
    write_jsonl(path, &lines)?;
    let manifest = DatasetManifest {
        format: "dpo-jsonl".into(),
        policy: *policy,
        count: pairs.len(),
        examples,
        source_runs,
    };
    write_json(&manifest_path(path), &manifest)?;
    Ok(manifest)
}

pub fn read_dataset(path: &Path) -> Result<Vec<DpoLine>> {
    read_jsonl(path)
}
