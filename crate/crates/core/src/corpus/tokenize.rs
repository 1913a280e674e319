/// Lowercases `text` and splits it on runs of non-alphanumeric characters.
pub fn tokenize_text(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_punctuation() {
        assert_eq!(tokenize_text("Team Wins, Final!"), ["team", "wins", "final"]);
    }

    #[test]
    fn empty_input() {
        assert!(tokenize_text("").is_empty());
        assert!(tokenize_text("  ,;- ").is_empty());
    }

    #[test]
    fn dotted_abbreviation() {
        assert_eq!(tokenize_text("U.S.-China trade"), ["u", "s", "china", "trade"]);
    }

    #[test]
    fn unicode_letters_are_kept() {
        assert_eq!(tokenize_text("Ærø Öl–Straße"), ["ærø", "öl", "straße"]);
    }
}
