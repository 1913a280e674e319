use std::collections::{BTreeMap, HashMap};

use super::types::NewsItem;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_INDEX: u32 = 0;
pub const UNK_INDEX: u32 = 1;

/// Token index. PAD is 0, UNK is 1, real tokens start at 2.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

impl Vocabulary {
    /// Builds a vocabulary from real tokens in index order (starting at 2).
    /// Duplicates and the reserved tokens are rejected.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, String>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self {
            tokens: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
            index: HashMap::new(),
        };
        for token in tokens {
            let token = token.into();
            if token == PAD_TOKEN || token == UNK_TOKEN {
                return Err(format!("reserved token `{token}` in vocabulary"));
            }
            let idx = vocab.tokens.len() as u32;
            if vocab.index.insert(token.clone(), idx).is_some() {
                return Err(format!("duplicate token `{token}` in vocabulary"));
            }
            vocab.tokens.push(token);
        }
        Ok(vocab)
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn index_of(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(UNK_INDEX)
    }

    pub fn token(&self, index: u32) -> Option<&str> {
        self.tokens.get(index as usize).map(String::as_str)
    }

    /// All entries including PAD and UNK, in index order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, u32)> {
        self.tokens.iter().enumerate().map(|(i, t)| (t.as_str(), i as u32))
    }
}

/// Counts title tokens and keeps those with frequency `>= min_freq`, ranked by
/// frequency (descending) then token (ascending), capped at `max_size - 2`.
pub fn build_vocabulary<'a, I>(news: I, min_freq: usize, max_size: usize) -> Vocabulary
where
    I: IntoIterator<Item = &'a NewsItem>,
{
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for item in news {
        for token in &item.title_tokens {
            *counts.entry(token.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, n)| n >= min_freq.max(1) && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size.saturating_sub(2));
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t))
        .expect("ranked tokens are unique and not reserved")
}

/// Maps tokens to indices, truncating on the right and padding with PAD to `max_len`.
pub fn encode_tokens<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, max_len: usize) -> Vec<u32> {
    let mut out: Vec<u32> = tokens.iter().take(max_len).map(|t| vocab.index_of(t.as_ref())).collect();
    out.resize(max_len, PAD_INDEX);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn item(id: &str, title: &[&str]) -> NewsItem {
        NewsItem {
            news_id: id.into(),
            category: "c".into(),
            subcategory: "s".into(),
            title_tokens: title.iter().map(|s| s.to_string()).collect(),
            abstract_tokens: vec![],
            entities: None,
        }
    }

    #[test]
    fn ties_break_lexicographically() {
        let news = [item("N1", &["b", "a", "c"]), item("N2", &["a", "b"]), item("N3", &["b", "a"])];
        let vocab = build_vocabulary(&news, 2, 10);
        let entries: Vec<_> = vocab.entries().collect();
        assert_eq!(entries, [("<pad>", 0), ("<unk>", 1), ("a", 2), ("b", 3)]);
    }

    #[test]
    fn max_size_truncates() {
        let news = [item("N1", &["x", "y", "z", "x"])];
        let vocab = build_vocabulary(&news, 1, 3);
        assert_eq!(vocab.size(), 3);
        assert_eq!(vocab.get("x"), Some(2));
        assert_eq!(vocab.get("y"), None);
    }

    #[test]
    fn matches_brute_force_count() {
        let words = ["alpha", "beta", "gamma", "delta", "eps"];
        let news: Vec<NewsItem> = (0..40)
            .map(|i| {
                let title: Vec<&str> = (0..(i % 4 + 1)).map(|j| words[(i * 7 + j * 3) % 5]).collect();
                item(&format!("N{i}"), &title)
            })
            .collect();
        // independent counter
        let mut freq: Vec<(String, usize)> = Vec::new();
        for n in &news {
            for t in &n.title_tokens {
                match freq.iter_mut().find(|(w, _)| w == t) {
                    Some(e) => e.1 += 1,
                    None => freq.push((t.clone(), 1)),
                }
            }
        }
        let expected = freq.iter().filter(|(_, c)| *c >= 10).count() + 2;
        assert_eq!(build_vocabulary(&news, 10, 1000).size(), expected);
    }

    #[test]
    fn encode_pads_and_maps_unknown() {
        let vocab = Vocabulary::from_tokens(["team"]).unwrap();
        assert_eq!(encode_tokens(&["team", "wins"], &vocab, 4), [2, 1, 0, 0]);
        assert_eq!(encode_tokens::<&str>(&[], &vocab, 3), [0, 0, 0]);
        let long: Vec<String> = (0..10).map(|i| if i % 2 == 0 { "team".into() } else { "x".into() }).collect();
        assert_eq!(encode_tokens(&long, &vocab, 5), [2, 1, 2, 1, 2]);
    }

    #[test]
    fn reserved_tokens_rejected() {
        assert!(Vocabulary::from_tokens(["<pad>"]).is_err());
        assert!(Vocabulary::from_tokens(["a", "a"]).is_err());
    }

    proptest! {
        #[test]
        fn encoded_indices_are_in_range_and_pad_is_suffix(
            titles in proptest::collection::vec(proptest::collection::vec("[a-e]{1,2}", 0..8), 1..10),
            probe in proptest::collection::vec("[a-g]{1,2}", 0..12),
            max_len in 1usize..10,
        ) {
            let news: Vec<NewsItem> = titles.iter().enumerate().map(|(i, t)| {
                let t: Vec<&str> = t.iter().map(String::as_str).collect();
                item(&format!("N{i}"), &t)
            }).collect();
            let vocab = build_vocabulary(&news, 1, 20);
            let enc = encode_tokens(&probe, &vocab, max_len);
            prop_assert_eq!(enc.len(), max_len);
            prop_assert!(enc.iter().all(|&i| (i as usize) < vocab.size()));
            let first_pad = enc.iter().position(|&i| i == PAD_INDEX).unwrap_or(max_len);
            prop_assert!(enc[first_pad..].iter().all(|&i| i == PAD_INDEX));
            prop_assert_eq!(first_pad, probe.len().min(max_len));
        }
    }
}
