//! Plain gradient descent over a fixed data order.

use serde::{Deserialize, Serialize};

use super::model::{Encoded, SoftmaxLm};
use super::objectives::{encode_all, nll_encoded, DpoBatch, LossReport};
use crate::backend::Boundary;
use crate::error::{Error, Result};
use crate::prefs::PreferencePair;
use crate::prompting::parse_student_response;

pub enum Objective<'a> {
    /// (question prompt, answer) pairs.
    Sft(&'a [(String, String)]),
    /// (student prompt, rendered response) pairs.
    Student(&'a [(String, String)]),
    /// (prompt, full text) pairs scored through the end-of-text token, so
    /// the model also learns where to stop.
    Completion(&'a [(String, String)]),
    Dpo {
        reference: &'a SoftmaxLm,
        pairs: &'a [PreferencePair],
        beta: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Examples per step; `None` means full batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub loss: f64,
    pub mean_margin: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: SoftmaxLm,
    /// Full-data objective before each epoch, plus one entry after the last.
    pub trace: Vec<EpochStat>,
}

impl Trained {
    pub fn final_loss(&self) -> f64 {
        self.trace.last().map(|s| s.loss).unwrap_or(f64::NAN)
    }

    /// `epoch,loss,mean_margin` rows.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("epoch,loss,mean_margin\n");
        for s in &self.trace {
            let m = s
                .mean_margin
                .map(|m| format!("{m:.12}"))
                .unwrap_or_default();
            out.push_str(&format!("{},{:.12},{}\n", s.epoch, s.loss, m));
        }
        out
    }
}

/// Training stopped on a non-finite loss; `last_good` holds the parameters
/// from before the offending step.
#[derive(Debug, Clone)]
pub struct Divergence {
    pub epoch: usize,
    pub loss: f64,
    pub last_good: SoftmaxLm,
}

impl From<Divergence> for Error {
    fn from(d: Divergence) -> Self {
        Error::Diverged {
            epoch: d.epoch,
            loss: d.loss,
        }
    }
}

enum Compiled {
    Nll(Vec<Encoded>),
    Dpo(DpoBatch, f64),
}

impl Compiled {
    fn len(&self) -> usize {
        match self {
            Compiled::Nll(v) => v.len(),
            Compiled::Dpo(b, _) => b.len(),
        }
    }

    fn eval(&self, model: &SoftmaxLm, range: std::ops::Range<usize>) -> LossReport {
        match self {
            Compiled::Nll(v) => nll_encoded(model, &v[range]),
            Compiled::Dpo(b, beta) => b.loss_and_grad(model, *beta, range),
        }
    }
}

pub fn train(
    model: SoftmaxLm,
    objective: Objective<'_>,
    config: &TrainConfig,
) -> std::result::Result<Trained, TrainError> {
    if !model.params_finite() {
        return Err(TrainError::Setup(Error::domain(
            "initial parameters are not finite",
        )));
    }
    if !(config.lr.is_finite() && config.lr >= 0.0) {
        return Err(TrainError::Setup(Error::Config(format!(
            "learning rate must be non-negative, got {}",
            config.lr
        ))));
    }
    let compiled = match objective {
        Objective::Student(d) => {
            for (_, response) in d {
                parse_student_response(response).map_err(TrainError::Setup)?;
            }
            Compiled::Nll(encode_all(&model, d, Boundary::Prefix).map_err(TrainError::Setup)?)
        }
        Objective::Sft(d) => {
            Compiled::Nll(encode_all(&model, d, Boundary::Prefix).map_err(TrainError::Setup)?)
        }
        Objective::Completion(d) => {
            Compiled::Nll(encode_all(&model, d, Boundary::Complete).map_err(TrainError::Setup)?)
        }
        Objective::Dpo {
            reference,
            pairs,
            beta,
        } => {
            if !(beta.is_finite() && beta > 0.0) {
                return Err(TrainError::Setup(Error::domain("beta must be positive")));
            }
            Compiled::Dpo(
                DpoBatch::new(reference, pairs).map_err(TrainError::Setup)?,
                beta,
            )
        }
    };
    let n = compiled.len();
    if n == 0 {
        return Err(TrainError::Setup(Error::domain("no training data")));
    }
    let batch = config.batch_size.unwrap_or(n).clamp(1, n);
    let mut model = model;
    let mut trace = Vec::with_capacity(config.epochs + 1);
    for epoch in 0..=config.epochs {
        let full = compiled.eval(&model, 0..n);
        if !full.loss.is_finite() {
            return Err(TrainError::Diverged(Box::new(Divergence {
                epoch,
                loss: full.loss,
                last_good: model,
            })));
        }
        trace.push(EpochStat {
            epoch,
            loss: full.loss,
            mean_margin: full.mean_margin(),
        });
        if epoch == config.epochs {
            break;
        }
        let mut start = 0;
        let mut cached = Some(full);
        while start < n {
            let end = (start + batch).min(n);
            let report = match cached.take() {
                Some(r) if batch == n => r,
                _ => compiled.eval(&model, start..end),
            };
            if !report.loss.is_finite() {
                return Err(TrainError::Diverged(Box::new(Divergence {
                    epoch,
                    loss: report.loss,
                    last_good: model,
                })));
            }
            let before = model.clone();
            model.apply(&report.grad, -config.lr);
            if !model.params_finite() {
                return Err(TrainError::Diverged(Box::new(Divergence {
                    epoch,
                    loss: f64::NAN,
                    last_good: before,
                })));
            }
            start = end;
        }
    }
    Ok(Trained { model, trace })
}

#[derive(Debug)]
pub enum TrainError {
    Setup(Error),
    Diverged(Box<Divergence>),
}

impl From<TrainError> for Error {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Setup(e) => e,
            TrainError::Diverged(d) => (*d).into(),
        }
    }
}

/// Convenience wrapper returning the crate error type.
pub fn train_or_err(
    model: SoftmaxLm,
    objective: Objective<'_>,
    config: &TrainConfig,
) -> Result<Trained> {
    train(model, objective, config).map_err(Error::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::LmBackend;
    use crate::optim::ContextSpec;
    use crate::prompting::Label;

    fn sft_data() -> Vec<(String, String)> {
        let mut d = Vec::new();
        for _ in 0..3 {
            d.push(("x p".to_string(), "a".to_string()));
        }
        d.push(("x p".into(), "b".into()));
        for _ in 0..2 {
            d.push(("y q".into(), "b".into()));
        }
        d
    }

    #[test]
    fn sft_reaches_the_empirical_conditionals() {
        let m = SoftmaxLm::new(["a", "b"], ContextSpec::default());
        let data = sft_data();
        let cfg = TrainConfig {
            lr: 0.1,
            epochs: 1000,
            batch_size: None,
        };
        let t = train(m, Objective::Sft(&data), &cfg).unwrap();
        let pa = t
            .model
            .score("x p", "a", Boundary::Prefix)
            .unwrap()
            .total
            .exp();
        let pb = t
            .model
            .score("y q", "b", Boundary::Prefix)
            .unwrap()
            .total
            .exp();
        assert!((pa - 0.75).abs() < 1e-3);
        assert!(pb > 0.99);
        assert!(t.trace.windows(2).all(|w| w[1].loss <= w[0].loss + 1e-12));
    }

    #[test]
    fn deterministic_sft_goes_to_zero_loss() {
        let spec = ContextSpec {
            history: 2,
            bag: true,
        };
        let m = SoftmaxLm::new(["a", "b"], spec);
        let data = vec![
            (
                "the hotel room was clean and quiet".to_string(),
                "a".to_string(),
            ),
            (
                "my husband loved every single minute there".to_string(),
                "b".to_string(),
            ),
        ];
        let cfg = TrainConfig {
            lr: 0.1,
            epochs: 200,
            batch_size: None,
        };
        let t = train(m, Objective::Sft(&data), &cfg).unwrap();
        assert!(t.final_loss() < 0.01, "loss {}", t.final_loss());
        assert_eq!(t.trace.len(), 201);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let m = SoftmaxLm::new(["a", "b"], ContextSpec::default());
        let data = sft_data();
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 5,
            batch_size: Some(2),
        };
        let t = train(m.clone(), Objective::Sft(&data), &cfg).unwrap();
        assert_eq!(t.model.feature_keys().len(), m.feature_keys().len() + 2);
        assert!(t
            .model
            .feature_keys()
            .iter()
            .all(|k| (0..2).all(|v| t.model.param(k, v) == 0.0)));
    }

    #[test]
    fn dpo_margin_grows() {
        let reference = SoftmaxLm::new(["a", "b", "c"], ContextSpec::default());
        let pairs: Vec<PreferencePair> = ["a", "b"]
            .iter()
            .map(|w| PreferencePair {
                review_id: "r".into(),
                answer: Label::Truthful,
                prompt: "p q".into(),
                chosen: (*w).into(),
                rejected: "c".into(),
                chosen_score: 1.0,
                rejected_score: -1.0,
            })
            .collect();
        let cfg = TrainConfig {
            lr: 1.0,
            epochs: 50,
            batch_size: None,
        };
        let obj = Objective::Dpo {
            reference: &reference,
            pairs: &pairs,
            beta: 0.1,
        };
        let t = train(reference.clone(), obj, &cfg).unwrap();
        let m: Vec<f64> = t.trace.iter().map(|s| s.mean_margin.unwrap()).collect();
        assert_eq!(m[0], 0.0);
        assert!(m.windows(2).all(|w| w[1] > w[0]));
        assert!(t.trace_csv().starts_with("epoch,loss,mean_margin\n0,"));
    }

    #[test]
    fn huge_step_diverges_with_last_good_state() {
        let m = SoftmaxLm::new(["a", "b"], ContextSpec::default());
        let data = sft_data();
        let cfg = TrainConfig {
            lr: 1e308,
            epochs: 3,
            batch_size: None,
        };
        match train(m, Objective::Sft(&data), &cfg) {
            Err(TrainError::Diverged(d)) => assert!(d.last_good.params_finite()),
            other => panic!(
                "expected divergence, got {:?}",
                other.map(|t| t.final_loss())
            ),
        }
    }

    #[test]
    fn student_objective_checks_the_response_format() {
        let m = SoftmaxLm::new(["Truthful"], ContextSpec::default());
        let data = vec![("q".to_string(), "Truthful".to_string())];
        let cfg = TrainConfig {
            lr: 0.1,
            epochs: 1,
            batch_size: None,
        };
        assert!(train(m, Objective::Student(&data), &cfg).is_err());
    }
}
