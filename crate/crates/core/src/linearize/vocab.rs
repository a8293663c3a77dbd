use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

pub const PAGE_TITLE_OPEN: &str = "<page_title>";
pub const PAGE_TITLE_CLOSE: &str = "</page_title>";
pub const SECTION_TITLE_OPEN: &str = "<section_title>";
pub const SECTION_TITLE_CLOSE: &str = "</section_title>";
pub const TABLE_OPEN: &str = "<table>";
pub const TABLE_CLOSE: &str = "</table>";
pub const CELL_OPEN: &str = "<cell>";
pub const CELL_CLOSE: &str = "</cell>";
pub const HEADER_OPEN: &str = "<header>";
pub const HEADER_CLOSE: &str = "</header>";
pub const SEP: &str = "[SEP]";

/// Reserved tokens, in id order.
pub const RESERVED: [&str; 15] = [
    PAD,
    BOS,
    EOS,
    UNK,
    PAGE_TITLE_OPEN,
    PAGE_TITLE_CLOSE,
    SECTION_TITLE_OPEN,
    SECTION_TITLE_CLOSE,
    TABLE_OPEN,
    TABLE_CLOSE,
    CELL_OPEN,
    CELL_CLOSE,
    HEADER_OPEN,
    HEADER_CLOSE,
    SEP,
];

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;

/// Lowercases and splits on whitespace; every punctuation or symbol character
/// becomes its own token, alphanumeric runs stay whole.
pub fn split_words(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in s.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            cur.push(ch);
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Dense token/id bijection with the reserved tokens at the front.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from raw texts; corpus tokens are sorted so the
    /// result does not depend on text order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = texts
            .into_iter()
            .flat_map(split_words)
            .filter(|w| !RESERVED.contains(&w.as_str()))
            .collect();
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(words)
            .collect();
        Self::from_tokens(tokens).expect("reserved prefix and unique words")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::InvalidVocabulary(
                "reserved tokens must come first and in order".into(),
            ));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidVocabulary(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    /// Parses the one-token-per-line format.
    pub fn from_lines(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_owned).collect())
    }

    pub fn to_lines(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or(UNK, String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Renders ids as a space-joined string, dropping PAD/BOS/EOS.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&i| !matches!(i, PAD_ID | BOS_ID | EOS_ID))
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn tokenize(s: &str, v: &Vocabulary) -> Vec<u32> {
    split_words(s).iter().map(|w| v.id(w)).collect()
}

/// `[BOS] tokens [EOS]`, the decoder-side framing of a target sentence.
pub fn target_ids(s: &str, v: &Vocabulary) -> Vec<u32> {
    let mut out = vec![BOS_ID];
    out.extend(tokenize(s, v));
    out.push(EOS_ID);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitting() {
        assert!(split_words("").is_empty());
        assert_eq!(split_words("Royal Tramp"), ["royal", "tramp"]);
        assert_eq!(split_words("1992"), ["1992"]);
        assert_eq!(split_words("Wai Siu-bo, 1992."), ["wai", "siu", "-", "bo", ",", "1992", "."]);
    }

    #[test]
    fn tokenize_maps_oov_to_unk() {
        let v = Vocabulary::build(["Royal Tramp 1992"]);
        assert!(tokenize("", &v).is_empty());
        let ids = tokenize("Royal Tramp", &v);
        assert_eq!(ids, vec![v.id("royal"), v.id("tramp")]);
        assert_eq!(ids.iter().map(|&i| v.token(i)).collect::<Vec<_>>(), ["royal", "tramp"]);
        assert_eq!(tokenize("1992", &v), vec![v.id("1992")]);
        assert_eq!(tokenize("unseen", &v), vec![UNK_ID]);
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::build(["b a"]);
        assert_eq!(v.id(PAD), PAD_ID);
        assert_eq!(v.id(BOS), BOS_ID);
        assert_eq!(v.id(EOS), EOS_ID);
        assert_eq!(v.id(UNK), UNK_ID);
        assert_eq!(v.id(SEP), 14);
        assert_eq!(v.id("a"), 15);
        assert_eq!(v.id("b"), 16);
    }

    #[test]
    fn file_format_roundtrip() {
        let v = Vocabulary::build(["x y z"]);
        assert_eq!(Vocabulary::from_lines(&v.to_lines()).unwrap(), v);
        assert!(Vocabulary::from_lines("a\nb\n").is_err());
        let mut dup = v.tokens().to_vec();
        dup.push("x".into());
        assert!(Vocabulary::from_tokens(dup).is_err());
    }
}
