//! Rule-based sentence splitting with character-offset spans.
//!
//! A boundary is placed after a run of terminators (`.`, `!`, `?`) plus any
//! closing quotes or brackets when it is followed by whitespace and the next
//! sentence opens (after an optional quote or bracket) with an uppercase
//! letter or a digit. A single `.` closing a known abbreviation never splits.

use std::collections::HashSet;

use super::SentenceSpan;

/// Pluggable segmentation so a tokenizer-specific splitter can replace the
/// built-in rules. Implementations must return sorted, non-overlapping spans
/// that cover every non-whitespace character of `text`.
pub trait SentenceSegmenter: Send + Sync {
    fn segment(&self, text: &str) -> Vec<SentenceSpan>;
}

pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "vs", "gen", "col", "lt", "sgt",
    "capt", "gov", "sen", "rep", "rev", "hon", "inc", "ltd", "co", "corp", "no", "nos", "fig",
    "figs", "e.g", "i.e", "cf", "approx", "dept", "est", "jan", "feb", "mar", "apr", "jun", "jul",
    "aug", "sep", "sept", "oct", "nov", "dec",
];

#[derive(Debug, Clone)]
pub struct RuleSegmenter {
    abbreviations: HashSet<String>,
}

impl Default for RuleSegmenter {
    fn default() -> Self {
        Self::with_abbreviations(DEFAULT_ABBREVIATIONS.iter().copied())
    }
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201D}' | '\u{2019}')
}

fn is_opener(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '\u{201C}' | '\u{2018}')
}

impl RuleSegmenter {
    /// Abbreviations are matched case-insensitively, without the final dot.
    pub fn with_abbreviations<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        Self {
            abbreviations: words.into_iter().map(str::to_lowercase).collect(),
        }
    }

    fn is_abbreviation(&self, chars: &[char], dot: usize) -> bool {
        let mut start = dot;
        while start > 0 && !chars[start - 1].is_whitespace() {
            start -= 1;
        }
        let word: String = chars[start..dot]
            .iter()
            .skip_while(|c| is_opener(**c))
            .collect();
        !word.is_empty() && self.abbreviations.contains(&word.to_lowercase())
    }

    fn opens_sentence(chars: &[char], mut pos: usize) -> bool {
        if pos < chars.len() && is_opener(chars[pos]) {
            pos += 1;
        }
        chars
            .get(pos)
            .is_some_and(|c| c.is_uppercase() || c.is_ascii_digit())
    }
}

impl SentenceSegmenter for RuleSegmenter {
    fn segment(&self, text: &str) -> Vec<SentenceSpan> {
        let chars: Vec<char> = text.chars().collect();
        let n = chars.len();
        let mut spans = Vec::new();
        let mut start: Option<usize> = None;
        let mut i = 0;

        while i < n {
            let c = chars[i];
            if start.is_none() {
                if !c.is_whitespace() {
                    start = Some(i);
                } else {
                    i += 1;
                    continue;
                }
            }
            if !is_terminator(c) {
                i += 1;
                continue;
            }

            let mut end = i + 1;
            while end < n && is_terminator(chars[end]) {
                end += 1;
            }
            while end < n && is_closer(chars[end]) {
                end += 1;
            }
            let single_dot = c == '.' && end == i + 1;
            let mut next = end;
            while next < n && chars[next].is_whitespace() {
                next += 1;
            }
            let splits = next > end
                && next < n
                && Self::opens_sentence(&chars, next)
                && !(single_dot && self.is_abbreviation(&chars, i));

            if splits {
                spans.push(SentenceSpan {
                    index: spans.len(),
                    start: start.take().expect("sentence start set above"),
                    end,
                });
                i = next;
            } else {
                i = end;
            }
        }

        if let Some(s) = start {
            let mut end = n;
            while end > s && chars[end - 1].is_whitespace() {
                end -= 1;
            }
            spans.push(SentenceSpan {
                index: spans.len(),
                start: s,
                end,
            });
        }
        spans
    }
}

/// Segment with the default rule set.
pub fn segment_sentences(context: &str) -> Vec<SentenceSpan> {
    RuleSegmenter::default().segment(context)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairs(text: &str) -> Vec<(usize, usize)> {
        segment_sentences(text)
            .iter()
            .map(|s| (s.start, s.end))
            .collect()
    }

    fn texts(text: &str) -> Vec<String> {
        segment_sentences(text)
            .iter()
            .map(|s| text.chars().skip(s.start).take(s.end - s.start).collect())
            .collect()
    }

    #[test]
    fn two_plain_sentences() {
        assert_eq!(pairs("A dog ran. A cat sat."), vec![(0, 10), (11, 21)]);
    }

    #[test]
    fn no_terminator_is_one_sentence() {
        assert_eq!(pairs("no terminator at all"), vec![(0, 20)]);
    }

    // Golden outputs of the built-in rules; these pin this segmenter, not any
    // external tokenizer.
    #[test]
    fn golden_outputs() {
        assert_eq!(
            texts("Dr. Smith left. He returned."),
            vec!["Dr. Smith left.", "He returned."]
        );
        assert_eq!(texts("A. B. C."), vec!["A.", "B.", "C."]);
        assert_eq!(
            texts("He said \"Stop!\" Then he left. e.g. this stays."),
            vec!["He said \"Stop!\"", "Then he left. e.g. this stays."]
        );
        assert_eq!(
            texts("Costs rose 3.5 percent. In 1990 it fell."),
            vec!["Costs rose 3.5 percent.", "In 1990 it fell."]
        );
        assert_eq!(
            texts("Wait... what? Yes! (Maybe.) Ok"),
            vec!["Wait... what?", "Yes!", "(Maybe.)", "Ok"]
        );
        assert_eq!(
            texts("It ended in the U.S. army. see below."),
            vec!["It ended in the U.S. army. see below."]
        );
    }

    #[test]
    fn surrounding_whitespace_is_excluded() {
        assert_eq!(pairs("  One.   Two.  "), vec![(2, 6), (9, 13)]);
        assert!(segment_sentences("   ").is_empty());
    }

    #[test]
    fn custom_abbreviations() {
        let seg = RuleSegmenter::with_abbreviations(["approx"]);
        assert_eq!(seg.segment("Dr. Who. Approx. Ten.").len(), 3);
    }

    proptest! {
        #[test]
        fn spans_cover_all_non_whitespace(text in "[A-Za-z0-9 .!?\"()\n]{0,80}") {
            let spans = segment_sentences(&text);
            let chars: Vec<char> = text.chars().collect();
            let mut covered = vec![false; chars.len()];
            let mut prev_end = 0;
            for (k, s) in spans.iter().enumerate() {
                prop_assert_eq!(s.index, k);
                prop_assert!(s.start < s.end && s.end <= chars.len());
                prop_assert!(s.start >= prev_end);
                prev_end = s.end;
                for c in covered.iter_mut().take(s.end).skip(s.start) {
                    *c = true;
                }
            }
            for (c, cov) in chars.iter().zip(&covered) {
                prop_assert!(*cov || c.is_whitespace());
            }
        }
    }
}
