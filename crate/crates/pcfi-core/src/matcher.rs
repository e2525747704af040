//! Pattern matching shared by the lexical and policy stages.
//!
//! Two pattern forms exist:
//!
//! * literal phrases, matched case-insensitively with any internal run of
//!   whitespace in the pattern matching any run of whitespace in the subject;
//! * restricted regular expressions, opted into with a `re:` prefix
//!   (alternation, character classes, and bounded repetition only).
//!
//! Literal matching reports a match at every start offset where the phrase
//! occurs, so overlapping occurrences are all reported. Compilation happens
//! once at policy load; nothing is compiled on the request path.

use regex_syntax::hir::{Hir, HirKind};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("pattern is empty")]
    Empty,
    #[error("invalid restricted regex `{pattern}`: {message}")]
    InvalidRegex { pattern: String, message: String },
    #[error("restricted regex `{pattern}` uses unbounded repetition (`*`, `+`, or `{{n,}}`)")]
    UnboundedRepetition { pattern: String },
}

/// A literal phrase split into whitespace-delimited tokens, lowercased.
#[derive(Debug, Clone)]
pub struct PhrasePattern {
    tokens: Vec<String>,
}

impl PhrasePattern {
    pub fn new(phrase: &str) -> Result<Self, PatternError> {
        use unicode_normalization::UnicodeNormalization;
        let normalized: String = phrase.nfc().collect();
        let tokens: Vec<String> = normalized
            .split_whitespace()
            .map(|t| t.to_lowercase())
            .collect();
        if tokens.is_empty() {
            return Err(PatternError::Empty);
        }
        Ok(PhrasePattern { tokens })
    }

    /// All byte spans where the phrase matches, one per start offset.
    /// Whitespace gaps consume the maximal run, so spans are deterministic.
    pub fn find_all(&self, text: &str) -> Vec<(usize, usize)> {
        let mut spans = Vec::new();
        for (i, _) in text.char_indices() {
            if let Some(end) = self.match_at(text, i) {
                spans.push((i, end));
            }
        }
        spans
    }

    fn match_at(&self, text: &str, start: usize) -> Option<usize> {
        let mut pos = start;
        for (k, token) in self.tokens.iter().enumerate() {
            if k > 0 {
                let gap_start = pos;
                while let Some(c) = text[pos..].chars().next() {
                    if !c.is_whitespace() {
                        break;
                    }
                    pos += c.len_utf8();
                }
                if pos == gap_start {
                    return None;
                }
            }
            let mut wanted = token.chars().peekable();
            while wanted.peek().is_some() {
                let c = text[pos..].chars().next()?;
                for folded in c.to_lowercase() {
                    if wanted.next() != Some(folded) {
                        return None;
                    }
                }
                pos += c.len_utf8();
            }
        }
        Some(pos)
    }
}

/// A compiled pattern: literal phrase or restricted regex.
#[derive(Debug, Clone)]
pub enum CompiledPattern {
    Phrase(PhrasePattern),
    Regex(regex::Regex),
}

impl CompiledPattern {
    /// Compile `raw`. A `re:` prefix selects restricted regex syntax,
    /// validated here so invalid rules fail at load time, never per request.
    pub fn compile(raw: &str) -> Result<Self, PatternError> {
        match raw.strip_prefix("re:") {
            Some(expr) => {
                if expr.trim().is_empty() {
                    return Err(PatternError::Empty);
                }
                reject_unbounded(expr)?;
                let re = regex::RegexBuilder::new(expr)
                    .case_insensitive(true)
                    .build()
                    .map_err(|e| PatternError::InvalidRegex {
                        pattern: raw.to_string(),
                        message: e.to_string(),
                    })?;
                Ok(CompiledPattern::Regex(re))
            }
            None => Ok(CompiledPattern::Phrase(PhrasePattern::new(raw)?)),
        }
    }

    pub fn find_all(&self, text: &str) -> Vec<(usize, usize)> {
        match self {
            CompiledPattern::Phrase(p) => p.find_all(text),
            CompiledPattern::Regex(re) => {
                re.find_iter(text).map(|m| (m.start(), m.end())).collect()
            }
        }
    }
}

fn reject_unbounded(expr: &str) -> Result<(), PatternError> {
    let hir = regex_syntax::Parser::new()
        .parse(expr)
        .map_err(|e| PatternError::InvalidRegex {
            pattern: format!("re:{expr}"),
            message: e.to_string(),
        })?;
    if has_unbounded_repetition(&hir) {
        return Err(PatternError::UnboundedRepetition { pattern: format!("re:{expr}") });
    }
    Ok(())
}

fn has_unbounded_repetition(hir: &Hir) -> bool {
    match hir.kind() {
        HirKind::Repetition(rep) => rep.max.is_none() || has_unbounded_repetition(&rep.sub),
        HirKind::Capture(c) => has_unbounded_repetition(&c.sub),
        HirKind::Concat(parts) | HirKind::Alternation(parts) => {
            parts.iter().any(has_unbounded_repetition)
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phrase(p: &str) -> PhrasePattern {
        PhrasePattern::new(p).unwrap()
    }

    #[test]
    fn whitespace_runs_are_flexible() {
        let subject = "Disregard   all\nabove";
        let spans = phrase("disregard all above").find_all(subject);
        assert_eq!(spans, [(0, subject.len())]);
    }

    #[test]
    fn empty_subject_has_no_matches() {
        assert!(phrase("ignore previous instructions").find_all("").is_empty());
    }

    #[test]
    fn matching_is_case_insensitive() {
        let spans = phrase("system override").find_all("a SYSTEM OVERRIDE b");
        assert_eq!(spans, [(2, 17)]);
    }

    #[test]
    fn overlapping_occurrences_all_reported() {
        assert_eq!(phrase("aa").find_all("aaa"), [(0, 2), (1, 3)]);
    }

    #[test]
    fn restricted_regex_alternation_and_optional_group() {
        let p = CompiledPattern::compile("re:reveal (the )?secret").unwrap();
        assert_eq!(p.find_all("reveal secret keys"), [(0, 13)]);
        assert_eq!(p.find_all("reveal the secret"), [(0, 17)]);
    }

    #[test]
    fn unbounded_repetition_rejected() {
        assert!(matches!(
            CompiledPattern::compile("re:a+b"),
            Err(PatternError::UnboundedRepetition { .. })
        ));
        assert!(matches!(
            CompiledPattern::compile("re:a*"),
            Err(PatternError::UnboundedRepetition { .. })
        ));
        assert!(matches!(
            CompiledPattern::compile("re:a{2,}"),
            Err(PatternError::UnboundedRepetition { .. })
        ));
        assert!(CompiledPattern::compile("re:a{2,5}").is_ok());
        assert!(CompiledPattern::compile("re:[abc]?d").is_ok());
    }

    #[test]
    fn invalid_regex_is_a_load_time_error() {
        assert!(matches!(
            CompiledPattern::compile("re:(unclosed"),
            Err(PatternError::InvalidRegex { .. })
        ));
    }

    #[test]
    fn empty_patterns_rejected() {
        assert!(matches!(CompiledPattern::compile("   "), Err(PatternError::Empty)));
        assert!(matches!(CompiledPattern::compile("re:  "), Err(PatternError::Empty)));
    }
}
