//! Byte-level BPE with `[PAD]`, `[SOS]` and `[EOS]` specials.
//!
//! Ids `0..256` are raw bytes, followed by the three specials, followed by
//! merges in the order they were learned. Merges never cross pre-token
//! boundaries (letter/digit runs, punctuation runs, whitespace).

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 256;
pub const SOS: u32 = 257;
pub const EOS: u32 = 258;
const FIRST_MERGE: u32 = 259;
const HEADER: &str = "#bpe-merges v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<u32>,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.len() < 2 || ids[0] != SOS || *ids.last().unwrap() != EOS {
            return Err(Error::Contract(
                "token sequence must start with [SOS] and end with [EOS]".into(),
            ));
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn eos_position(&self) -> usize {
        self.ids.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeTokenizer {
    merges: Vec<(u32, u32)>,
    ranks: HashMap<(u32, u32), u32>,
    vocab: Vec<Vec<u8>>,
}

#[derive(PartialEq, Eq, Clone, Copy)]
enum Class {
    Word,
    Space,
    Other,
}

fn class(c: char) -> Class {
    if c.is_alphanumeric() {
        Class::Word
    } else if c.is_whitespace() {
        Class::Space
    } else {
        Class::Other
    }
}

/// Split into word runs, punctuation runs and whitespace runs; a single
/// space directly before a word or punctuation run is attached to it.
fn pre_tokenize(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let start = chars[i].0;
        let mut j = i;
        let lead_space =
            chars[i].1 == ' ' && i + 1 < chars.len() && class(chars[i + 1].1) != Class::Space;
        if lead_space {
            j += 1;
        }
        let cls = class(chars[j].1);
        j += 1;
        while j < chars.len() && class(chars[j].1) == cls {
            // keep one space for the next piece
            if cls == Class::Space
                && chars[j].1 == ' '
                && j + 1 < chars.len()
                && class(chars[j + 1].1) != Class::Space
            {
                break;
            }
            j += 1;
        }
        let end = chars.get(j).map(|c| c.0).unwrap_or(text.len());
        out.push(&text[start..end]);
        i = j;
    }
    out
}

fn merge_word(word: &mut Vec<u32>, pair: (u32, u32), new_id: u32) {
    let mut i = 0;
    let mut out = Vec::with_capacity(word.len());
    while i < word.len() {
        if i + 1 < word.len() && (word[i], word[i + 1]) == pair {
            out.push(new_id);
            i += 2;
        } else {
            out.push(word[i]);
            i += 1;
        }
    }
    *word = out;
}

impl BpeTokenizer {
    fn base() -> Self {
        let mut vocab: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        vocab.push(b"[PAD]".to_vec());
        vocab.push(b"[SOS]".to_vec());
        vocab.push(b"[EOS]".to_vec());
        Self {
            merges: Vec::new(),
            ranks: HashMap::new(),
            vocab,
        }
    }

    fn push_merge(&mut self, pair: (u32, u32)) -> u32 {
        let id = self.vocab.len() as u32;
        let mut bytes = self.vocab[pair.0 as usize].clone();
        bytes.extend_from_slice(&self.vocab[pair.1 as usize]);
        self.vocab.push(bytes);
        self.ranks.insert(pair, self.merges.len() as u32);
        self.merges.push(pair);
        id
    }

    /// Learn up to `vocab_size - 259` merges. Ties between equally frequent
    /// pairs go to the smallest `(left, right)` id pair; training stops early
    /// once no pair occurs twice.
    pub fn train(corpus: &[String], vocab_size: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Config("empty tokenizer corpus".into()));
        }
        if vocab_size <= FIRST_MERGE as usize {
            return Err(Error::Config(format!(
                "vocab_size must exceed {FIRST_MERGE} (256 bytes + 3 specials), got {vocab_size}"
            )));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for s in corpus {
            for piece in pre_tokenize(s) {
                *counts.entry(piece).or_default() += 1;
            }
        }
        let mut words: Vec<(Vec<u32>, usize)> = counts
            .into_iter()
            .map(|(w, c)| (w.bytes().map(u32::from).collect(), c))
            .collect();
        let mut tok = Self::base();
        while tok.vocab.len() < vocab_size {
            let mut pairs: HashMap<(u32, u32), usize> = HashMap::new();
            for (w, c) in &words {
                for p in w.windows(2) {
                    *pairs.entry((p[0], p[1])).or_default() += c;
                }
            }
            let best = pairs
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)));
            let Some((pair, count)) = best else { break };
            if count < 2 {
                break;
            }
            let id = tok.push_merge(pair);
            for (w, _) in &mut words {
                merge_word(w, pair, id);
            }
        }
        Ok(tok)
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.vocab.get(id as usize).map(Vec::as_slice)
    }

    /// Token ids without specials.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for piece in pre_tokenize(text) {
            let mut word: Vec<u32> = piece.bytes().map(u32::from).collect();
            loop {
                let best = word
                    .windows(2)
                    .filter_map(|p| self.ranks.get(&(p[0], p[1])).map(|r| (*r, (p[0], p[1]))))
                    .min();
                let Some((rank, pair)) = best else { break };
                merge_word(&mut word, pair, FIRST_MERGE + rank);
            }
            out.extend(word);
        }
        out
    }

    /// Concatenate token bytes, skipping specials. Invalid UTF-8 is replaced.
    pub fn decode(&self, ids: &[u32]) -> String {
        let bytes: Vec<u8> = ids
            .iter()
            .filter(|id| !matches!(**id, PAD | SOS | EOS))
            .filter_map(|id| self.vocab.get(*id as usize))
            .flatten()
            .copied()
            .collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }

    /// `[SOS] tokens [EOS]`, cut to `max_len` with `[EOS]` kept last.
    pub fn tokenize(&self, sentence: &str, max_len: usize) -> TokenSequence {
        let max_len = max_len.max(2);
        let mut ids = Vec::with_capacity(max_len);
        ids.push(SOS);
        ids.extend(self.encode(sentence).into_iter().take(max_len - 2));
        ids.push(EOS);
        TokenSequence { ids }
    }

    /// UTF-8 merge list: a header, then one `left right` id pair per line in
    /// rank order, with the readable byte strings after a tab.
    pub fn to_merge_list(&self) -> String {
        let mut s = format!("{HEADER}\n");
        for &(a, b) in &self.merges {
            s.push_str(&format!(
                "{a} {b}\t{} {}\n",
                escape(&self.vocab[a as usize]),
                escape(&self.vocab[b as usize])
            ));
        }
        s
    }

    pub fn from_merge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(HEADER) {
            return Err(Error::Config(
                "tokenizer file lacks the merge-list header".into(),
            ));
        }
        let mut tok = Self::base();
        for (n, line) in lines.enumerate() {
            let ids = line.split('\t').next().unwrap_or("");
            let mut it = ids.split_whitespace().map(str::parse::<u32>);
            let (Some(Ok(a)), Some(Ok(b)), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::Config(format!("bad merge on line {}", n + 2)));
            };
            if a as usize >= tok.vocab.len() || b as usize >= tok.vocab.len() {
                return Err(Error::Config(format!(
                    "merge on line {} uses unknown ids",
                    n + 2
                )));
            }
            tok.push_merge((a, b));
        }
        Ok(tok)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_merge_list()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_merge_list(&text)
    }
}

fn escape(bytes: &[u8]) -> String {
    bytes
        .iter()
        .map(|b| match b {
            b'!'..=b'~' if *b != b'\\' => (*b as char).to_string(),
            _ => format!("\\x{b:02x}"),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus() -> Vec<String> {
        [
            "The sound belongs to Fishboat, which is in close distance, and the channel depth is shallow.",
            "The sound belongs to RORO, which is in far distance.",
            "The sound belongs to Sailboat, and the wind speed is calm.",
            "The sound belongs to Dredger.",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    #[test]
    fn most_frequent_pair_merges_first() {
        let c = vec!["aaaa".to_string(); 5];
        let t = BpeTokenizer::train(&c, 260).unwrap();
        assert_eq!(t.merges(), &[(b'a' as u32, b'a' as u32)]);
    }

    #[test]
    fn small_vocab_is_rejected() {
        assert!(matches!(
            BpeTokenizer::train(&corpus(), 259),
            Err(Error::Config(_))
        ));
        assert!(BpeTokenizer::train(&[], 512).is_err());
    }

    #[test]
    fn corpus_round_trips() {
        let t = BpeTokenizer::train(&corpus(), 512).unwrap();
        for s in corpus() {
            assert_eq!(t.decode(&t.encode(&s)), s);
        }
        assert!(t.encode(&corpus()[0]).len() < corpus()[0].len() / 2);
    }

    #[test]
    fn training_is_deterministic() {
        let a = BpeTokenizer::train(&corpus(), 400).unwrap();
        let b = BpeTokenizer::train(&corpus(), 400).unwrap();
        assert_eq!(a.merges(), b.merges());
    }

    #[test]
    fn empty_sentence_is_sos_eos() {
        let t = BpeTokenizer::train(&corpus(), 300).unwrap();
        assert_eq!(t.tokenize("", 77).ids(), &[SOS, EOS]);
    }

    #[test]
    fn truncation_keeps_eos() {
        let t = BpeTokenizer::train(&corpus(), 300).unwrap();
        let long = corpus().join(" ").repeat(4);
        let seq = t.tokenize(&long, 77);
        assert_eq!(seq.len(), 77);
        assert_eq!(*seq.ids().last().unwrap(), EOS);
        assert_eq!(seq.ids()[0], SOS);
    }

    #[test]
    fn merge_list_round_trip() {
        let t = BpeTokenizer::train(&corpus(), 450).unwrap();
        let back = BpeTokenizer::from_merge_list(&t.to_merge_list()).unwrap();
        assert_eq!(back, t);
        assert!(BpeTokenizer::from_merge_list("nonsense").is_err());
    }

    #[test]
    fn pre_tokenizer_separates_punctuation() {
        assert_eq!(pre_tokenize("to P, which"), vec!["to", " P", ",", " which"]);
        assert_eq!(pre_tokenize("a  b"), vec!["a", " ", " b"]);
    }

    proptest! {
        #[test]
        fn any_string_round_trips(s in "\\PC*") {
            let t = BpeTokenizer::train(&corpus(), 350).unwrap();
            prop_assert_eq!(t.decode(&t.encode(&s)), s.clone());
            let seq = t.tokenize(&s, 16);
            prop_assert_eq!(seq.ids()[0], SOS);
            prop_assert_eq!(*seq.ids().last().unwrap(), EOS);
            prop_assert!(seq.len() <= 16);
        }
    }
}
