use serde::{Deserialize, Serialize};

/// Word tokenizer shared by ROUGE-1 and the hashing embedder.
///
/// Tokens are maximal runs of alphanumeric characters (Unicode-aware). A `.`
/// or `,` with a digit on both sides stays inside the token, so `10.2` and
/// `1,000` are single tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tokenizer {
    pub lowercase: bool,
    pub keep_decimals: bool,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self {
            lowercase: true,
            keep_decimals: true,
        }
    }
}

impl Tokenizer {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let chars: Vec<char> = text.chars().collect();
        let mut tokens = Vec::new();
        let mut current = String::new();
        for (i, &c) in chars.iter().enumerate() {
            if c.is_alphanumeric() {
                if self.lowercase {
                    current.extend(c.to_lowercase());
                } else {
                    current.push(c);
                }
                continue;
            }
            let joins_number = self.keep_decimals
                && (c == '.' || c == ',')
                && i > 0
                && chars[i - 1].is_ascii_digit()
                && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
            if joins_number {
                current.push(c);
            } else if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
        tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_punctuation_and_keeps_decimals() {
        let t = Tokenizer::default();
        assert_eq!(t.tokenize("Hb 10.2 g/dL."), ["hb", "10.2", "g", "dl"]);
        assert_eq!(
            t.tokenize("Pt c/o SOB, 1,000 mg"),
            ["pt", "c", "o", "sob", "1,000", "mg"]
        );
        assert_eq!(t.tokenize("end. 3.x"), ["end", "3", "x"]);
        assert!(t.tokenize(" ... ").is_empty());
    }

    #[test]
    fn unicode_and_case() {
        let t = Tokenizer {
            lowercase: false,
            keep_decimals: false,
        };
        assert_eq!(t.tokenize("Ärztin 10.2"), ["Ärztin", "10", "2"]);
        assert_eq!(Tokenizer::default().tokenize("ÄRZTIN"), ["ärztin"]);
    }
}
