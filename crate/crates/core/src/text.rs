//! Character-offset helpers.
//!
//! Every span in this crate is expressed in Unicode scalar values (the same
//! unit SQuAD uses for `answer_start`), not bytes. `CharIndex` caches the byte
//! position of each character so repeated slicing stays cheap.

/// Byte offsets of every character boundary in a string, plus the end.
#[derive(Debug, Clone)]
pub struct CharIndex {
    bytes: Vec<usize>,
}

impl CharIndex {
    pub fn new(text: &str) -> Self {
        let mut bytes: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        bytes.push(text.len());
        Self { bytes }
    }

    /// Number of characters in the indexed text.
    pub fn len(&self) -> usize {
        self.bytes.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn byte_offset(&self, char_offset: usize) -> Option<usize> {
        self.bytes.get(char_offset).copied()
    }

    /// Slice `text` by character offsets `[start, end)`. Returns `None` when
    /// the range is out of bounds or reversed.
    pub fn slice<'a>(&self, text: &'a str, start: usize, end: usize) -> Option<&'a str> {
        if start > end {
            return None;
        }
        let b0 = self.byte_offset(start)?;
        let b1 = self.byte_offset(end)?;
        text.get(b0..b1)
    }
}

/// Character length of a string.
pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Slice by character offsets without a prebuilt index.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    CharIndex::new(text).slice(text, start, end)
}

/// Lowercase a word and strip leading/trailing non-alphanumeric characters.
/// Used for whole-word matching and vocabulary lookup.
pub fn normalize_word(word: &str) -> String {
    word.trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slices_multibyte_text_by_chars() {
        let text = "Dyrrachium—one of the";
        let idx = CharIndex::new(text);
        assert_eq!(idx.len(), 21);
        assert_eq!(idx.slice(text, 10, 11), Some("—"));
        assert_eq!(idx.slice(text, 11, 14), Some("one"));
        assert_eq!(idx.slice(text, 14, 13), None);
        assert_eq!(idx.slice(text, 0, 22), None);
    }

    #[test]
    fn normalizes_punctuation() {
        assert_eq!(normalize_word("France?"), "france");
        assert_eq!(normalize_word("\"Paris.\""), "paris");
        assert_eq!(normalize_word("..."), "");
    }
}
