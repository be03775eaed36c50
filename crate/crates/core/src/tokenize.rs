//! Whitespace tokenizer shared by the tabular and toy softmax backends.
//!
//! Text is split on whitespace and trailing punctuation is peeled into
//! separate tokens, so `"Answer: Truthful."` becomes
//! `["Answer", ":", "Truthful", "."]`.

/// End-of-text token appended when a continuation is scored as complete.
pub const END: &str = "</s>";

const PUNCT: [char; 6] = ['.', ',', '?', '!', ':', ';'];

pub fn is_punct(token: &str) -> bool {
    let mut chars = token.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if PUNCT.contains(&c))
}

pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = chunk;
        let mut tail = Vec::new();
        while let Some(c) = word.chars().last().filter(|c| PUNCT.contains(c)) {
            tail.push(c.to_string());
            word = &word[..word.len() - c.len_utf8()];
        }
        if !word.is_empty() {
            out.push(word.to_string());
        }
        out.extend(tail.into_iter().rev());
    }
    out
}

/// Joins tokens back into text; punctuation attaches to the preceding token.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        let t = t.as_ref();
        if i > 0 && !is_punct(t) {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}
