use crate::error::{Error, Result};

/// Lowercase letters, space and apostrophe.
pub const DEFAULT_ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz '";

/// Character tokenizer; id 0 is the CTC blank, characters map to `1..=len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    alphabet: Vec<char>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::new(DEFAULT_ALPHABET).expect("default alphabet is valid")
    }
}

impl Tokenizer {
    pub fn new(alphabet: &str) -> Result<Self> {
        let chars: Vec<char> = alphabet.chars().collect();
        for (i, c) in chars.iter().enumerate() {
            if chars[..i].contains(c) {
                return Err(Error::Config(format!("duplicate character {c:?} in alphabet")));
            }
        }
        if chars.is_empty() {
            return Err(Error::Config("empty alphabet".into()));
        }
        Ok(Self { alphabet: chars })
    }

    /// Vocabulary size including the blank.
    pub fn vocab_size(&self) -> usize {
        self.alphabet.len() + 1
    }

    pub fn alphabet(&self) -> String {
        self.alphabet.iter().collect()
    }

    pub fn tokenize(&self, s: &str) -> Result<Vec<usize>> {
        s.chars()
            .enumerate()
            .map(|(pos, ch)| self.alphabet.iter().position(|c| *c == ch).map(|i| i + 1).ok_or(Error::Tokenize { ch, pos }))
            .collect()
    }

    pub fn detokenize(&self, ids: &[usize]) -> Result<String> {
        ids.iter().map(|id| id.checked_sub(1).and_then(|i| self.alphabet.get(i)).copied().ok_or(Error::UnknownToken(*id as u32))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let t = Tokenizer::default();
        assert_eq!(t.tokenize("").unwrap(), Vec::<usize>::new());
        assert_eq!(t.detokenize(&[]).unwrap(), "");
        let ids = t.tokenize("abc").unwrap();
        assert_eq!(ids.len(), 3);
        assert!(ids.iter().all(|i| *i >= 1));
        assert_eq!(t.vocab_size(), 29);
    }

    #[test]
    fn out_of_alphabet_reports_position() {
        let err = Tokenizer::default().tokenize("ab!c").unwrap_err();
        assert!(matches!(err, Error::Tokenize { ch: '!', pos: 2 }));
        assert!(Tokenizer::default().detokenize(&[0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn round_trip(s in "[a-z' ]{0,40}") {
            let t = Tokenizer::default();
            prop_assert_eq!(t.detokenize(&t.tokenize(&s).unwrap()).unwrap(), s);
        }
    }
}
