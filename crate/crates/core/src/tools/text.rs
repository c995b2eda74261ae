//! Word counting and naive sentence splitting.

/// Number of whitespace-separated tokens, and whether it reaches `length`.
pub fn word_count(length: u64, text: &str) -> (u64, bool) {
    let count = text.split_whitespace().count() as u64;
    (count, count >= length)
}

/// Splits after `.`, `!` or `?` when the next character is whitespace or the
/// end of the text. No abbreviation handling.
pub fn split_text(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if matches!(c, '.' | '!' | '?') {
            let at_boundary = iter.peek().is_none_or(|(_, n)| n.is_whitespace());
            if at_boundary {
                let end = i + c.len_utf8();
                push_trimmed(&mut out, &text[start..end]);
                start = end;
            }
        }
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, seg: &str) {
    let seg = seg.trim();
    if !seg.is_empty() {
        out.push(seg.to_string());
    }
}
