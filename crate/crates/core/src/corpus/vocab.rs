use std::fmt;

use serde::{Deserialize, Serialize};

use super::CorpusSpec;
use crate::rng::Prng;

pub type TokenId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Language {
    L1,
    L2,
}

impl Language {
    pub fn other(self) -> Language {
        match self {
            Language::L1 => Language::L2,
            Language::L2 => Language::L1,
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Language::L1 => "L1",
            Language::L2 => "L2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Special,
    L1,
    L2,
}

impl Tag {
    pub fn language(self) -> Option<Language> {
        match self {
            Tag::Special => None,
            Tag::L1 => Some(Language::L1),
            Tag::L2 => Some(Language::L2),
        }
    }
}

impl From<Language> for Tag {
    fn from(l: Language) -> Self {
        match l {
            Language::L1 => Tag::L1,
            Language::L2 => Tag::L2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub tag: Tag,
}

/// Token inventory. Ids are positions in the list: `0` is the CTC blank,
/// `1` the start token, `2` the end token, then L1 tokens, then L2 tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocabulary {
    tokens: Vec<Token>,
}

pub const BLANK: TokenId = 0;
pub const SOS: TokenId = 1;
pub const EOS: TokenId = 2;
const SPECIALS: [&str; 3] = ["<blank>", "<sos>", "<eos>"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VocabError {
    #[error("vocabulary must start with <blank>, <sos>, <eos> tagged special")]
    BadSpecials,
    #[error("token {id} ('{surface}') is tagged special but only ids 0-2 may be")]
    StraySpecial { id: TokenId, surface: String },
    #[error("duplicate surface '{0}'")]
    Duplicate(String),
}

const ONSETS: [&str; 12] = ["k", "t", "p", "m", "n", "s", "l", "r", "d", "g", "b", "h"];
const NUCLEI: [&str; 5] = ["a", "e", "i", "o", "u"];

impl Vocabulary {
    /// Builds `3 + l1 + l2` tokens. Surfaces are two-syllable strings drawn
    /// without replacement from the seed; they carry no meaning.
    pub fn build(spec: &CorpusSpec) -> Vocabulary {
        let mut rng = Prng::derive(spec.seed, "vocabulary");
        let mut syllables: Vec<String> =
            ONSETS.iter().flat_map(|o| NUCLEI.iter().map(move |n| format!("{o}{n}"))).collect();
        rng.shuffle(&mut syllables);
        let mut tokens: Vec<Token> =
            SPECIALS.iter().map(|s| Token { surface: s.to_string(), tag: Tag::Special }).collect();
        let mut counter = 0usize;
        for (lang, count, prefix) in [(Tag::L1, spec.l1_tokens, "x"), (Tag::L2, spec.l2_tokens, "Y")] {
            for _ in 0..count {
                let a = &syllables[counter % syllables.len()];
                let b = &syllables[(counter / syllables.len() + counter * 7 + 3) % syllables.len()];
                let surface = if prefix == "Y" { format!("{a}{b}").to_uppercase() } else { format!("{a}{b}") };
                // The counter suffix keeps surfaces unique for any inventory size.
                tokens.push(Token { surface: format!("{surface}{counter}"), tag: lang });
                counter += 1;
            }
        }
        Vocabulary { tokens }
    }

    pub fn from_tokens(tokens: Vec<Token>) -> Result<Vocabulary, VocabError> {
        if tokens.len() < 3 || tokens.iter().take(3).zip(SPECIALS).any(|(t, s)| t.surface != s || t.tag != Tag::Special)
        {
            return Err(VocabError::BadSpecials);
        }
        let mut seen = std::collections::HashSet::new();
        for (id, t) in tokens.iter().enumerate() {
            if id >= 3 && t.tag == Tag::Special {
                return Err(VocabError::StraySpecial { id, surface: t.surface.clone() });
            }
            if !seen.insert(t.surface.as_str()) {
                return Err(VocabError::Duplicate(t.surface.clone()));
            }
        }
        Ok(Vocabulary { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn contains(&self, id: TokenId) -> bool {
        id < self.tokens.len()
    }

    pub fn tag(&self, id: TokenId) -> Tag {
        self.tokens[id].tag
    }

    pub fn language(&self, id: TokenId) -> Option<Language> {
        self.tokens.get(id).and_then(|t| t.tag.language())
    }

    pub fn surface(&self, id: TokenId) -> &str {
        &self.tokens[id].surface
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.tokens[id].tag == Tag::Special
    }

    /// Ids tagged with `lang`, ascending.
    pub fn language_ids(&self, lang: Language) -> Vec<TokenId> {
        let tag = Tag::from(lang);
        (0..self.tokens.len()).filter(|&i| self.tokens[i].tag == tag).collect()
    }

    /// Ids of all non-special tokens, ascending.
    pub fn lexical_ids(&self) -> Vec<TokenId> {
        (0..self.tokens.len()).filter(|&i| !self.is_special(i)).collect()
    }

    pub fn render(&self, ids: &[TokenId]) -> String {
        ids.iter().map(|&i| self.tokens.get(i).map_or("<?>", |t| t.surface.as_str())).collect::<Vec<_>>().join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(l1: usize, l2: usize) -> CorpusSpec {
        CorpusSpec { l1_tokens: l1, l2_tokens: l2, ..CorpusSpec::default() }
    }

    #[test]
    fn sizes_add_up() {
        let v = Vocabulary::build(&spec(20, 20));
        assert_eq!(v.len(), 43);
        assert_eq!(v.language_ids(Language::L1).len(), 20);
        assert_eq!(v.language_ids(Language::L2).len(), 20);
        let v = Vocabulary::build(&spec(3, 100));
        assert_eq!(v.len(), 106);
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(Vocabulary::build(&spec(20, 20)), Vocabulary::build(&spec(20, 20)));
    }

    #[test]
    fn language_tags_partition_lexical_ids() {
        let v = Vocabulary::build(&spec(7, 5));
        let mut all = v.language_ids(Language::L1);
        all.extend(v.language_ids(Language::L2));
        all.sort_unstable();
        assert_eq!(all, v.lexical_ids());
        for id in [BLANK, SOS, EOS] {
            assert!(v.is_special(id));
            assert_eq!(v.language(id), None);
        }
        assert!(Vocabulary::from_tokens(v.tokens().to_vec()).is_ok());
    }

    #[test]
    fn from_tokens_rejects_bad_layouts() {
        let v = Vocabulary::build(&spec(2, 2));
        let mut toks = v.tokens().to_vec();
        toks[4].tag = Tag::Special;
        assert!(matches!(Vocabulary::from_tokens(toks), Err(VocabError::StraySpecial { id: 4, .. })));
        let mut toks = v.tokens().to_vec();
        toks[5].surface = toks[4].surface.clone();
        assert!(matches!(Vocabulary::from_tokens(toks), Err(VocabError::Duplicate(_))));
        assert_eq!(Vocabulary::from_tokens(v.tokens()[1..].to_vec()), Err(VocabError::BadSpecials));
    }
}
