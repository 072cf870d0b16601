use super::Vocabulary;

/// Lowercased alphanumeric words of `text`, in order.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Maps `text` to at most `max_len` vocabulary ids; unknown words become id 1.
///
/// No padding is stored; batches pad at assembly time.
pub fn tokenize(text: &str, max_len: usize, vocab: &Vocabulary) -> Vec<u32> {
    words(text)
        .take(max_len)
        .map(|w| vocab.lookup(&w))
        .collect()
}
