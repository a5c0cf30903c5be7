//! Tokenization for n-gram scoring.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// How text is split into tokens before n-gram counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenScheme {
    /// Split on Unicode whitespace.
    Whitespace,
    /// Every non-whitespace character is a token.
    CjkChar,
    /// CJK characters are single tokens, other runs split on whitespace.
    #[default]
    Mixed,
}

impl TokenScheme {
    pub const ALL: [TokenScheme; 3] = [TokenScheme::Whitespace, TokenScheme::CjkChar, TokenScheme::Mixed];

    pub fn as_str(self) -> &'static str {
        match self {
            TokenScheme::Whitespace => "whitespace",
            TokenScheme::CjkChar => "cjk_char",
            TokenScheme::Mixed => "mixed",
        }
    }
}

impl fmt::Display for TokenScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TokenScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "whitespace" | "ws" => Ok(TokenScheme::Whitespace),
            "cjk_char" | "cjk-char" | "char" => Ok(TokenScheme::CjkChar),
            "mixed" => Ok(TokenScheme::Mixed),
            other => Err(format!("unknown tokenization scheme `{other}` (whitespace, cjk_char, mixed)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub scheme: TokenScheme,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// CJK Unified Ideographs, Extension A, and CJK Symbols and Punctuation.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32, 0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0x3000..=0x303F)
}

/// Tokenizes `text` after NFC normalization.
///
/// The ideographic space (U+3000) sits in the CJK punctuation block but is
/// whitespace, so it separates tokens rather than becoming one.
pub fn tokenize(text: &str, scheme: TokenScheme) -> TokenSequence {
    let text: String = text.nfc().collect();
    let tokens = match scheme {
        TokenScheme::Whitespace => text.split_whitespace().map(String::from).collect(),
        TokenScheme::CjkChar => text
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(String::from)
            .collect(),
        TokenScheme::Mixed => mixed(&text),
    };
    TokenSequence { tokens, scheme }
}

fn mixed(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_whitespace() || is_cjk(c) {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if !c.is_whitespace() {
                tokens.push(c.to_string());
            }
        } else {
            word.push(c);
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(text: &str, scheme: TokenScheme) -> Vec<String> {
        tokenize(text, scheme).tokens
    }

    #[test]
    fn whitespace_split() {
        assert_eq!(toks("the cat", TokenScheme::Whitespace), ["the", "cat"]);
        assert_eq!(toks("  the\t\ncat ", TokenScheme::Whitespace), ["the", "cat"]);
    }

    #[test]
    fn mixed_splits_cjk_runs() {
        assert_eq!(toks("你好ab 你", TokenScheme::Mixed), ["你", "好", "ab", "你"]);
        assert_eq!(toks("GDP增长了3.5%。", TokenScheme::Mixed), ["GDP", "增", "长", "了", "3.5%", "。"]);
    }

    #[test]
    fn cjk_char_is_per_character() {
        assert_eq!(toks("ab 你", TokenScheme::CjkChar), ["a", "b", "你"]);
    }

    #[test]
    fn empty_input() {
        for scheme in TokenScheme::ALL {
            assert!(tokenize("", scheme).is_empty());
        }
    }

    #[test]
    fn ideographic_space_separates() {
        assert_eq!(toks("甲\u{3000}乙", TokenScheme::Mixed), ["甲", "乙"]);
        assert_eq!(toks("a\u{3000}b", TokenScheme::Mixed), ["a", "b"]);
    }

    #[test]
    fn nfc_applied() {
        // "e" + combining acute composes to U+00E9
        assert_eq!(toks("e\u{301}t\u{e9}", TokenScheme::Whitespace), ["\u{e9}t\u{e9}"]);
    }

    #[test]
    fn scheme_parse() {
        assert_eq!("mixed".parse::<TokenScheme>().unwrap(), TokenScheme::Mixed);
        assert!("bpe".parse::<TokenScheme>().is_err());
    }

    proptest! {
        #[test]
        fn whitespace_retokenize_is_stable(s in "[a-c \\t\\n你好]{0,24}") {
            let first = toks(&s, TokenScheme::Whitespace);
            prop_assert_eq!(toks(&first.join(" "), TokenScheme::Whitespace), first);
        }

        #[test]
        fn only_whitespace_is_lost(s in "[a-c \\t你好。]{0,24}") {
            for scheme in TokenScheme::ALL {
                let joined: String = toks(&s, scheme).concat();
                let stripped: String = s.chars().filter(|c| !c.is_whitespace()).collect();
                prop_assert_eq!(joined, stripped);
            }
        }
    }
}
