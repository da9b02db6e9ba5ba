/// Splits text into lowercase search tokens.
///
/// Letters and digits form words; everything else separates them. A `#`
/// directly before a word keeps it as a hashtag token (`#rethink`).
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut hashtag = false;
    let flush = |current: &mut String, hashtag: &mut bool, tokens: &mut Vec<String>| {
        if !current.is_empty() {
            let word = std::mem::take(current);
            tokens.push(if *hashtag { format!("#{word}") } else { word });
        }
        *hashtag = false;
    };
    for c in text.chars() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else {
            flush(&mut current, &mut hashtag, &mut tokens);
            hashtag = c == '#';
        }
    }
    flush(&mut current, &mut hashtag, &mut tokens);
    tokens
}

#[cfg(test)]
mod tests {
    use super::tokenize;

    #[test]
    fn words_are_lowercased_and_split() {
        assert_eq!(tokenize("Alice Deutsche Telekom Berlin"), ["alice", "deutsche", "telekom", "berlin"]);
        assert_eq!(tokenize("Alice+Deutsche+Telekom"), ["alice", "deutsche", "telekom"]);
        assert_eq!(tokenize("www.telekom.de, alice@gmail.com"), ["www", "telekom", "de", "alice", "gmail", "com"]);
    }

    #[test]
    fn empty_and_punctuation_only() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("  ,.;# ").is_empty());
    }

    #[test]
    fn hashtags_survive() {
        assert_eq!(tokenize("#reTHINK #Telekom"), ["#rethink", "#telekom"]);
        assert_eq!(tokenize("go #football!"), ["go", "#football"]);
        assert_eq!(tokenize("##x a#b"), ["#x", "a", "#b"]);
    }

    #[test]
    fn unicode_letters() {
        assert_eq!(tokenize("Müller STRASSE"), ["müller", "strasse"]);
    }

    #[test]
    fn deterministic() {
        let text = "Tango #Paris +49 30 1234, café";
        assert_eq!(tokenize(text), tokenize(text));
        assert_eq!(tokenize(text), ["tango", "#paris", "49", "30", "1234", "café"]);
    }
}
