//! Token vocabularies, text normalization and (de)tokenization.
//!
//! Two tokenizations are supported. In [`Tokenization::Char`] every Unicode
//! scalar is a token and detokenization is plain concatenation. In
//! [`Tokenization::Word`] tokens are whitespace-separated words, with the
//! sentence punctuation marks `. , ! ?` split off the end of words and
//! rendered without a preceding space.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

const ATTACHED_PUNCTUATION: [&str; 4] = [".", ",", "!", "?"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tokenization {
    Char,
    Word,
}

impl Tokenization {
    pub fn as_str(self) -> &'static str {
        match self {
            Tokenization::Char => "char",
            Tokenization::Word => "word",
        }
    }
}

impl fmt::Display for Tokenization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tokenization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" => Ok(Tokenization::Char),
            "word" => Ok(Tokenization::Word),
            other => Err(Error::InvalidConfig(alloc::format!("unknown tokenization `{other}`"))),
        }
    }
}

/// NFC, whitespace runs collapsed to one space, leading and trailing whitespace removed.
pub fn normalize(text: &str) -> String {
    let mut out = normalize_prefix(text);
    if out.ends_with(' ') {
        out.pop();
    }
    out
}

/// Like [`normalize`] but keeps a single trailing space, which in a prefix
/// marks a completed word.
pub fn normalize_prefix(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.nfc() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
    }
    if pending_space {
        out.push(' ');
    }
    out
}

fn is_attached(surface: &str) -> bool {
    ATTACHED_PUNCTUATION.contains(&surface)
}

/// Splits normalized text into token surfaces without looking anything up.
pub fn split_surfaces(text: &str, mode: Tokenization) -> Vec<String> {
    match mode {
        Tokenization::Char => text.chars().map(|c| c.to_string()).collect(),
        Tokenization::Word => {
            let mut out = Vec::new();
            for word in text.split(' ').filter(|w| !w.is_empty()) {
                let mut stem = word;
                let mut tail = Vec::new();
                while let Some(last) = stem.chars().last() {
                    let mut buf = [0u8; 4];
                    let s: &str = last.encode_utf8(&mut buf);
                    if is_attached(s) {
                        tail.push(s.to_string());
                        stem = &stem[..stem.len() - last.len_utf8()];
                    } else {
                        break;
                    }
                }
                if !stem.is_empty() {
                    out.push(stem.to_string());
                }
                out.extend(tail.into_iter().rev());
            }
            out
        }
    }
}

/// Bidirectional token ↔ id map. Ids `0..4` are the reserved specials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    mode: Tokenization,
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from corpus-derived token surfaces, in the given order.
    /// Reserved surfaces and duplicates are skipped.
    pub fn from_tokens<I, S>(mode: Tokenization, tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocabulary {
            mode,
            tokens: Vec::new(),
            index: BTreeMap::new(),
        };
        for s in RESERVED {
            v.push(s);
        }
        for t in tokens {
            let t = t.as_ref();
            if !RESERVED.contains(&t) && !t.is_empty() && !v.index.contains_key(t) {
                v.push(t);
            }
        }
        v
    }

    fn push(&mut self, surface: &str) {
        let id = self.tokens.len() as u32;
        self.tokens.push(surface.to_string());
        self.index.insert(surface.to_string(), id);
    }

    /// Frequency-ordered vocabulary over `lines` (descending count, then
    /// lexicographic), keeping at most `max_size` non-reserved tokens.
    pub fn build<'a>(lines: impl IntoIterator<Item = &'a str>, mode: Tokenization, max_size: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for line in lines {
            for s in split_surfaces(&normalize(line), mode) {
                if !RESERVED.contains(&s.as_str()) {
                    *counts.entry(s).or_insert(0) += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        // BTreeMap order already gives the lexicographic tie-break; the sort is stable.
        ranked.sort_by_key(|r| core::cmp::Reverse(r.1));
        ranked.truncate(max_size);
        Self::from_tokens(mode, ranked.into_iter().map(|(s, _)| s))
    }

    pub fn mode(&self) -> Tokenization {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED.len()
    }

    pub fn id(&self, surface: &str) -> Option<u32> {
        self.index.get(surface).copied()
    }

    pub fn id_or_unk(&self, surface: &str) -> u32 {
        self.id(surface).unwrap_or(UNK)
    }

    pub fn surface(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Ids that search may emit: everything except PAD, BOS and UNK.
    pub fn is_generatable(&self, id: u32) -> bool {
        !matches!(id, PAD | BOS | UNK) && (id as usize) < self.tokens.len()
    }

    /// The text inserted before token `id` when it is appended to a
    /// sequence; `first` means nothing has been rendered yet.
    pub fn joiner(&self, first: bool, id: u32) -> &'static str {
        match self.mode {
            Tokenization::Char => "",
            Tokenization::Word if first || is_attached(self.surface(id)) => "",
            Tokenization::Word => " ",
        }
    }

    pub fn is_attached_punctuation(&self, id: u32) -> bool {
        self.mode == Tokenization::Word && is_attached(self.surface(id))
    }

    /// Normalized text to ids, terminated by EOS. Unknown tokens map to UNK.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut ids: Vec<u32> = split_surfaces(&normalize(text), self.mode)
            .iter()
            .map(|s| self.id_or_unk(s))
            .collect();
        ids.push(EOS);
        ids
    }

    /// Renders ids as text. EOS ends the sequence; PAD and BOS are skipped.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        let mut first = true;
        for &id in ids {
            match id {
                EOS => break,
                PAD | BOS => continue,
                _ => {
                    out.push_str(self.joiner(first, id));
                    out.push_str(self.surface(id));
                    first = false;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn normalization_collapses_whitespace() {
        assert_eq!(normalize("  A \t group\n of  "), "A group of");
        assert_eq!(normalize_prefix("  A  f "), "A f ");
        assert_eq!(normalize_prefix("A"), "A");
        // NFC: e + combining acute becomes é
        assert_eq!(normalize("e\u{301}"), "\u{e9}");
    }

    #[test]
    fn word_split_peels_sentence_punctuation() {
        assert_eq!(
            split_surfaces("A group of players in red uniforms.", Tokenization::Word),
            vec!["A", "group", "of", "players", "in", "red", "uniforms", "."]
        );
        assert_eq!(split_surfaces("wait?!", Tokenization::Word), vec!["wait", "?", "!"]);
        assert_eq!(split_surfaces("...", Tokenization::Word), vec![".", ".", "."]);
    }

    #[test]
    fn char_tokenize() {
        let v = Vocabulary::build(["ab"], Tokenization::Char, 100);
        assert_eq!(v.tokenize("ab"), vec![v.id("a").unwrap(), v.id("b").unwrap(), EOS]);
        assert_eq!(v.tokenize("ac"), vec![v.id("a").unwrap(), UNK, EOS]);
    }

    #[test]
    fn word_tokenize() {
        let v = Vocabulary::from_tokens(Tokenization::Word, ["A", "football", "player", "."]);
        assert_eq!(v.tokenize("A football"), vec![4, 5, EOS]);
        assert_eq!(v.detokenize(&[4, 5, 6, 7, EOS]), "A football player.");
    }

    #[test]
    fn frequency_then_lexicographic_order() {
        let v = Vocabulary::build(["aa b"], Tokenization::Char, 100);
        assert_eq!(&v.tokens()[4..], &["a", " ", "b"]);
    }

    #[test]
    fn truncation_drops_rare_tokens() {
        let v = Vocabulary::build(["aaa bb c"], Tokenization::Char, 2);
        assert_eq!(&v.tokens()[4..], &["a", " "]);
        assert_eq!(v.tokenize("c"), vec![UNK, EOS]);
    }

    #[test]
    fn reserved_surfaces_never_become_tokens() {
        let v = Vocabulary::build(["<unk> x </s>"], Tokenization::Word, 100);
        assert_eq!(&v.tokens()[4..], &["x"]);
    }

    #[test]
    fn build_is_deterministic() {
        let lines = ["the cat", "a dog", "the end"];
        assert_eq!(
            Vocabulary::build(lines, Tokenization::Word, 10),
            Vocabulary::build(lines, Tokenization::Word, 10)
        );
    }
}
