use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_categories::UnicodeCategories;

/// Recorded in every experiment artifact; bump when any cleaning rule changes.
pub const CLEANING_RULES_VERSION: &str = "clean-v1";

static URL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?x)
        (?:[a-z][a-z0-9+.\-]*://\S*)
        | (?:www\.\S*)
        | (?:\b(?:bit\.ly|t\.co|tinyurl\.com|goo\.gl|ow\.ly|buff\.ly|is\.gd|rb\.gy|cutt\.ly)/\S*)",
    )
    .expect("static url pattern")
});

/// Cleaned text: lowercase, single-spaced, free of URLs and punctuation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CleanText(String);

impl CleanText {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_inner(self) -> String {
        self.0
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.0.split(' ').filter(|w| !w.is_empty())
    }
}

impl fmt::Display for CleanText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for CleanText {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || c.is_punctuation()
}

/// Applies, in order: lowercasing, newline removal, URL removal, punctuation
/// removal, whitespace collapse and trim.
///
/// Characters that remain uppercase after lowercasing (letters without a
/// lowercase mapping) are dropped with the lowercasing step.
pub fn clean_text(raw: &str) -> CleanText {
    let lowered: String = raw.to_lowercase().chars().filter(|c| !c.is_uppercase()).collect();
    let no_newlines = lowered.replace(['\n', '\r'], " ");
    let no_urls = URL.replace_all(&no_newlines, " ");
    let no_punct: String = no_urls.chars().filter(|&c| !is_punctuation(c)).collect();
    let collapsed = no_punct.split_whitespace().collect::<Vec<_>>().join(" ");
    CleanText(collapsed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowercases() {
        assert_eq!(clean_text("Hello World").as_str(), "hello world");
    }

    #[test]
    fn applies_rules_in_order() {
        assert_eq!(
            clean_text("  Breaking!! See https://bit.ly/x now\n").as_str(),
            "breaking see now"
        );
    }

    #[test]
    fn empty_is_fixed_point() {
        assert_eq!(clean_text("").as_str(), "");
    }

    #[test]
    fn removes_www_and_shortener_urls() {
        assert_eq!(clean_text("go www.example.com/a?b=1 or bit.ly/abc").as_str(), "go or");
        assert_eq!(clean_text("HTTP://X.ORG/y done").as_str(), "done");
    }

    #[test]
    fn removes_unicode_punctuation() {
        assert_eq!(clean_text("«quoted» — text… ¿sí?").as_str(), "quoted text sí");
        assert_eq!(clean_text("don't stop").as_str(), "dont stop");
    }

    #[test]
    fn newlines_become_separators() {
        assert_eq!(clean_text("line one\r\nline two").as_str(), "line one line two");
    }

    proptest::proptest! {
        #[test]
        fn idempotent(s in "\\PC*") {
            let once = clean_text(&s);
            proptest::prop_assert_eq!(clean_text(once.as_str()), once);
        }

        #[test]
        fn output_invariants(s in proptest::string::string_regex("(?s).{0,80}").unwrap()) {
            let out = clean_text(&s);
            let v = out.as_str();
            proptest::prop_assert!(!v.chars().any(|c| c.is_uppercase()));
            proptest::prop_assert!(!v.contains('\n'));
            proptest::prop_assert_eq!(v, v.trim());
            proptest::prop_assert!(!v.chars().any(is_punctuation));
            proptest::prop_assert!(!v.contains("://") && !v.contains("www."));
        }
    }
}
