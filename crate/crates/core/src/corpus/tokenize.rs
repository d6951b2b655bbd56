/// Rule-based tokenizer: split on whitespace, then break every punctuation
/// character out into its own token.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tokenizer {
    pub lowercase: bool,
}

impl Tokenizer {
    pub fn new(lowercase: bool) -> Self {
        Self { lowercase }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut tokens = Vec::new();
        for chunk in text.split_whitespace() {
            let mut word = String::new();
            for ch in chunk.chars() {
                if ch.is_alphanumeric() {
                    word.push(ch);
                } else {
                    if !word.is_empty() {
                        tokens.push(std::mem::take(&mut word));
                    }
                    tokens.push(ch.to_string());
                }
            }
            if !word.is_empty() {
                tokens.push(word);
            }
        }
        if self.lowercase {
            for t in &mut tokens {
                *t = t.to_lowercase();
            }
        }
        tokens
    }
}

/// Tokenize with the default (case-preserving) settings.
pub fn tokenize(text: &str) -> Vec<String> {
    Tokenizer::default().tokenize(text)
}

pub fn is_punctuation(token: &str) -> bool {
    let mut chars = token.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if !c.is_alphanumeric() && !c.is_whitespace())
}

/// Inverse of [`tokenize`] for token lists built by the synthetic generator:
/// punctuation attaches to the previous word.
pub fn detokenize(tokens: &[String]) -> String {
    let mut out = String::new();
    for tok in tokens {
        if !out.is_empty() && !is_punctuation(tok) {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}
