#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use pex::backend::TabularLm;
use pex::optim::{ContextSpec, SoftmaxLm};
use pex::prompting::Label;

pub const WORDS: [&str; 14] = [
    "clean", "staff", "location", "noisy", "luxury", "husband", "great", "stay", "rude", "view",
    "bed", "towels", "lobby", "price",
];

/// One review of a random tabular model, with the raw probabilities the
/// model was built from.
#[derive(Debug, Clone)]
pub struct FixtureQuestion {
    pub review: String,
    pub prior_truthful: f64,
    /// `(text, P(e | Truthful), P(e | Deceptive))`, all strictly positive.
    pub explanations: Vec<(String, f64, f64)>,
}

impl FixtureQuestion {
    pub fn prior(&self, label: Label) -> f64 {
        match label {
            Label::Truthful => self.prior_truthful,
            Label::Deceptive => 1.0 - self.prior_truthful,
        }
    }

    pub fn likelihood(&self, i: usize, label: Label) -> f64 {
        let (_, t, d) = &self.explanations[i];
        match label {
            Label::Truthful => *t,
            Label::Deceptive => *d,
        }
    }
}

pub struct TabularFixture {
    pub lm: TabularLm,
    pub questions: Vec<FixtureQuestion>,
}

fn normalized(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

fn random_text(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Up to `max_questions` reviews, each with between 1 and `max_explanations`
/// distinct explanations of 1 to 4 words shared by both answers.
pub fn random_tabular(
    rng: &mut ChaCha8Rng,
    max_questions: usize,
    max_explanations: usize,
) -> TabularFixture {
    let mut builder = TabularLm::builder();
    let mut questions = Vec::new();
    for q in 0..rng.gen_range(1..=max_questions) {
        let review = format!("review {q} {}", random_text(rng, 5));
        let n = rng.gen_range(1..=max_explanations);
        let mut texts: Vec<String> = Vec::new();
        while texts.len() < n {
            let len = rng.gen_range(1..=4);
            let t = random_text(rng, len);
            if !texts.contains(&t) {
                texts.push(t);
            }
        }
        let pt = normalized(rng, n);
        let pd = normalized(rng, n);
        let prior_truthful = rng.gen_range(0.05..0.95);
        builder = builder.question(
            review.clone(),
            prior_truthful,
            texts.iter().cloned().zip(pt.iter().copied()).collect(),
            texts.iter().cloned().zip(pd.iter().copied()).collect(),
        );
        questions.push(FixtureQuestion {
            review,
            prior_truthful,
            explanations: texts
                .into_iter()
                .zip(pt)
                .zip(pd)
                .map(|((t, a), b)| (t, a, b))
                .collect(),
        });
    }
    TabularFixture {
        lm: builder.build().expect("random fixture is a valid model"),
        questions,
    }
}

/// Kendall tau-b by direct pair enumeration.
pub fn kendall_oracle(x: &[f64], y: &[f64]) -> f64 {
    let (mut c, mut d, mut tx_only, mut ty_only) = (0i64, 0i64, 0u64, 0u64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            match (dx == 0.0, dy == 0.0) {
                (true, true) => {}
                (true, false) => tx_only += 1,
                (false, true) => ty_only += 1,
                (false, false) => {
                    if (dx > 0.0) == (dy > 0.0) {
                        c += 1
                    } else {
                        d += 1
                    }
                }
            }
        }
    }
    let untied_x = (c + d) as u64 + ty_only;
    let untied_y = (c + d) as u64 + tx_only;
    (c - d) as f64 / ((untied_x as f64) * (untied_y as f64)).sqrt()
}

/// `Γ(n / 2)` by the half-integer recurrence from `Γ(1/2) = √π` and `Γ(1) = 1`.
fn gamma_half(n: u32) -> f64 {
    let (mut g, mut k) = if n.is_multiple_of(2) {
        (1.0, 2)
    } else {
        (std::f64::consts::PI.sqrt(), 1)
    };
    while k < n {
        g *= k as f64 / 2.0;
        k += 2;
    }
    g
}

/// Two-sided Student-t tail by composite Simpson integration of the density
/// over `[0, |t|]`, for integer degrees of freedom up to about 100.
pub fn t_tail_simpson(t: f64, df: u32) -> f64 {
    let nu = df as f64;
    let norm = gamma_half(df + 1) / ((nu * std::f64::consts::PI).sqrt() * gamma_half(df));
    let f = |s: f64| norm * (1.0 + s * s / nu).powf(-(nu + 1.0) / 2.0);
    let n = 200_000;
    let h = t.abs() / n as f64;
    let mut sum = f(0.0) + f(t.abs());
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(i as f64 * h);
    }
    1.0 - 2.0 * sum * h / 3.0
}

/// Upper 1 % points of the chi-square distribution for 1 to 10 degrees of freedom.
pub const CHI2_99: [f64; 10] = [
    6.635, 9.210, 11.345, 13.277, 15.086, 16.812, 18.475, 20.090, 21.666, 23.209,
];

/// A vocabulary-`vocab` model with every parameter of the rows touched by
/// `rows` set to a random value in `[-1.5, 1.5]`.
pub fn randomize(model: &mut SoftmaxLm, rows: &[String], rng: &mut ChaCha8Rng) {
    for r in rows {
        for t in 0..model.vocab_size() {
            model.set_param(r, t, rng.gen_range(-1.5..1.5));
        }
    }
}

pub fn random_spec(rng: &mut ChaCha8Rng) -> ContextSpec {
    ContextSpec {
        history: rng.gen_range(1..=2),
        bag: rng.gen_bool(0.5),
    }
}

pub fn random_words(rng: &mut ChaCha8Rng, vocab: &[&str], lo: usize, hi: usize) -> String {
    let n = rng.gen_range(lo..=hi);
    (0..n)
        .map(|_| *vocab.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

/// A tiny HTTP server answering POSTs with whatever `handler` returns.
pub struct MockServer {
    pub url: String,
    pub requests: Arc<AtomicUsize>,
    pub peak_in_flight: Arc<AtomicUsize>,
}

impl MockServer {
    /// `handler(request_index, body) -> (status, body)`; each response is
    /// delayed by `delay` so concurrent requests overlap.
    pub fn start<F>(delay: Duration, handler: F) -> Self
    where
        F: Fn(usize, &str) -> (u16, String) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/complete", listener.local_addr().unwrap());
        let requests = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let live = Arc::new(AtomicUsize::new(0));
        let handler = Arc::new(handler);
        let (req, pk) = (requests.clone(), peak.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let (req, pk, live, handler) =
                    (req.clone(), pk.clone(), live.clone(), handler.clone());
                thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut length = 0usize;
                    loop {
                        let mut line = String::new();
                        if reader.read_line(&mut line).unwrap_or(0) == 0 {
                            return;
                        }
                        let lower = line.to_ascii_lowercase();
                        if let Some(v) = lower.strip_prefix("content-length:") {
                            length = v.trim().parse().unwrap_or(0);
                        }
                        if line == "\r\n" {
                            break;
                        }
                    }
                    let mut body = vec![0u8; length];
                    reader.read_exact(&mut body).unwrap();
                    let index = req.fetch_add(1, Ordering::SeqCst);
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    pk.fetch_max(now, Ordering::SeqCst);
                    thread::sleep(delay);
                    let (status, reply) = handler(index, &String::from_utf8_lossy(&body));
                    live.fetch_sub(1, Ordering::SeqCst);
                    let _ = write!(
                        stream,
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                        reply.len()
                    );
                });
            }
        });
        Self {
            url,
            requests,
            peak_in_flight: peak,
        }
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }
}
