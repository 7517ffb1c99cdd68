//! Character vocabularies, the seeded synthetic corpus and token corruption.

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Reserved character for the generic replacement token.
pub const GENERIC_CHAR: char = '\u{a4}';

const TAG_WORDS: u64 = 0x0d5;
const TAG_CHAIN: u64 = 0xc4a;

/// Sorted character set of a text plus the generic token as the last id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
}

impl Vocab {
    pub fn from_text(text: &str) -> Result<Self> {
        if text.contains(GENERIC_CHAR) {
            return Err(Error::Input(format!("text contains the reserved character {GENERIC_CHAR:?}")));
        }
        let mut chars: Vec<char> = text.chars().collect();
        chars.sort_unstable();
        chars.dedup();
        chars.push(GENERIC_CHAR);
        Ok(Self { chars })
    }

    /// Rebuilds a vocabulary from its codepoints in id order.
    pub fn from_chars(chars: Vec<char>) -> Result<Self> {
        if chars.last() != Some(&GENERIC_CHAR) {
            return Err(Error::Input("vocabulary must end with the generic token".into()));
        }
        Ok(Self { chars })
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn generic_id(&self) -> usize {
        self.chars.len() - 1
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.chars
                    .binary_search(&c)
                    .ok()
                    .filter(|&i| i < self.generic_id())
                    .or_else(|| (c == GENERIC_CHAR).then(|| self.generic_id()))
                    .ok_or_else(|| Error::Input(format!("character {c:?} not in vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.chars.get(i).copied().unwrap_or('?')).collect()
    }
}

/// Encoded text split into a training prefix and an evaluation suffix.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub vocab: Vocab,
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

impl Corpus {
    pub fn from_text(text: &str, eval_fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eval_fraction) {
            return Err(Error::Parameter(format!("eval fraction must be in [0, 1), got {eval_fraction}")));
        }
        let vocab = Vocab::from_text(text)?;
        let ids = vocab.encode(text)?;
        let cut = ids.len() - (ids.len() as f64 * eval_fraction).round() as usize;
        Ok(Self { vocab, eval: ids[cut..].to_vec(), train: ids[..cut].to_vec() })
    }
}

/// `len` characters of `abab…`.
pub fn alternating_text(len: usize) -> String {
    (0..len).map(|i| if i % 2 == 0 { 'a' } else { 'b' }).collect()
}

/// Deterministic pseudo-English: a seeded lexicon of 48 words strung
/// together by a sparse first-order Markov chain, with sentence breaks.
pub fn markov_text(seed: u64, len: usize) -> String {
    const LETTERS: &[u8] = b"etaoinshrdlucmfwypvbgk";
    let mut rng = Rng::derive(seed, &[TAG_WORDS]);
    let words: Vec<String> = (0..48)
        .map(|_| {
            let n = 2 + rng.below(6);
            // Skewed letter choice gives a Zipf-like character distribution.
            (0..n)
                .map(|_| {
                    let u = rng.uniform();
                    LETTERS[((u * u) * LETTERS.len() as f64) as usize] as char
                })
                .collect()
        })
        .collect();
    let successors: Vec<[usize; 3]> = (0..words.len())
        .map(|_| [rng.below(words.len()), rng.below(words.len()), rng.below(words.len())])
        .collect();

    let mut rng = Rng::derive(seed, &[TAG_CHAIN]);
    let mut out = String::with_capacity(len + 16);
    let mut w = 0;
    let mut in_sentence = 0;
    while out.len() < len {
        out.push_str(&words[w]);
        in_sentence += 1;
        if in_sentence >= 4 && rng.bernoulli(0.2) {
            out.push_str(". ");
            in_sentence = 0;
        } else {
            out.push(' ');
        }
        let u = rng.uniform();
        let pick = if u < 0.6 { 0 } else if u < 0.9 { 1 } else { 2 };
        w = successors[w][pick];
    }
    out.truncate(len);
    out
}

/// Replaces each position by `generic_id` independently with probability `rate`.
pub fn corrupt_tokens(tokens: &[usize], rate: f64, generic_id: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Parameter(format!("corruption rate must be in [0, 1], got {rate}")));
    }
    Ok(tokens.iter().map(|&t| if rng.bernoulli(rate) { generic_id } else { t }).collect())
}
