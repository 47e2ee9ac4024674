//! Tokenization and hashing shared by the mapper, the toy LM and the stats.

use alloc::string::String;
use alloc::vec::Vec;

/// A lowercased token with its byte range in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Lowercases and splits on whitespace and punctuation. Runs of
/// alphanumeric characters form one token; every other visible character
/// is a token by itself.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            if word_start.is_none() {
                word_start = Some(i);
            }
            continue;
        }
        if let Some(s) = word_start.take() {
            out.push(token(text, s, i));
        }
        if !ch.is_whitespace() {
            out.push(token(text, i, i + ch.len_utf8()));
        }
    }
    if let Some(s) = word_start {
        out.push(token(text, s, text.len()));
    }
    out
}

fn token(text: &str, start: usize, end: usize) -> Token {
    Token {
        text: text[start..end].to_lowercase(),
        start,
        end,
    }
}

pub fn token_strings(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.text).collect()
}

/// Number of maximal whitespace-delimited runs.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// FNV-1a over `bytes`, seeded by folding `seed` into the offset basis.
pub fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-stage seed derived from a global seed and a stage name.
pub fn stage_seed(global: u64, stage: &str) -> u64 {
    mix64(global ^ fnv1a64(0, stage.as_bytes()))
}

/// `v` rounded to six significant digits, trailing zeros dropped.
pub fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return alloc::format!("{v}");
    }
    let exp = libm::floor(libm::log10(libm::fabs(v))) as i32;
    let decimals = (5 - exp).max(0) as usize;
    let mut s = alloc::format!("{v:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}
