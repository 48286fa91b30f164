//! Text preprocessing: lowercase, strip URLs and @-mentions, split on
//! non-alphanumeric runs.

/// Bundled English stopword list, applied after tokenization. Contraction
/// fragments ("aren", "t", ...) are listed separately because the tokenizer
/// splits on apostrophes.
pub const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are",
    "aren", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both",
    "but", "by", "can", "cannot", "could", "couldn", "d", "did", "didn", "do", "does", "doesn",
    "doing", "don", "down", "during", "each", "few", "for", "from", "further", "had", "hadn",
    "has", "hasn", "have", "haven", "having", "he", "her", "here", "hers", "herself", "him",
    "himself", "his", "how", "i", "if", "in", "into", "is", "isn", "it", "its", "itself", "just",
    "ll", "m", "me", "more", "most", "mustn", "my", "myself", "no", "nor", "not", "now", "of",
    "off", "on", "once", "only", "or", "other", "ought", "our", "ours", "ourselves", "out",
    "over", "own", "re", "s", "same", "shan", "she", "should", "shouldn", "so", "some", "such",
    "t", "than", "that", "the", "their", "theirs", "them", "themselves", "then", "there",
    "these", "they", "this", "those", "through", "to", "too", "under", "until", "up", "ve",
    "very", "was", "wasn", "we", "were", "weren", "what", "when", "where", "which", "while",
    "who", "whom", "why", "will", "with", "won", "would", "wouldn", "you", "your", "yours",
    "yourself", "yourselves",
];

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.binary_search(&word).is_ok()
}

fn is_url(token: &str) -> bool {
    let lower = token.to_ascii_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.")
}

/// Tokenize raw text into lowercase alphanumeric word runs. Whitespace
/// tokens that are URLs or @-mentions are dropped before splitting.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        if chunk.starts_with('@') || is_url(chunk) {
            continue;
        }
        let lowered = chunk.to_lowercase();
        let mut current = String::new();
        for ch in lowered.chars() {
            if ch.is_alphanumeric() {
                current.push(ch);
            } else if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopword_list_is_sorted_and_deduped() {
        let mut sorted = STOPWORDS.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted, STOPWORDS, "binary search requires sorted input");
    }

    #[test]
    fn strips_mentions_and_urls() {
        let toks = tokenize("@user wear https://x.co/abc WWW.SPAM.COM Masks&masks!");
        assert_eq!(toks, vec!["wear", "masks", "masks"]);
    }

    #[test]
    fn splits_on_non_alphanumeric_runs() {
        assert_eq!(tokenize("co-vid19...wave2"), vec!["co", "vid19", "wave2"]);
        assert!(tokenize("%%% ---").is_empty());
    }
}
