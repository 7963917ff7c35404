//! Caption tokenization and bag-of-words term extraction.
//!
//! Unigrams are kept by lexicon lookup (or by stopword filtering when the
//! lexicon has no content terms). Phrases are approximated as bigrams of two
//! kept unigrams that sit next to each other in the caption.

use std::collections::{BTreeMap, BTreeSet};

use crate::data::{Lexicon, PosTag};

/// Lowercase tokens split on whitespace and on any character that is neither
/// alphanumeric nor a hyphen. Leading/trailing hyphens are trimmed.
pub fn tokenize(caption: &str) -> Vec<String> {
    caption
        .split(|c: char| c.is_whitespace() || !(c.is_alphanumeric() || c == '-'))
        .map(|t| t.trim_matches('-'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Letters, single spaces and hyphens only, with at least one letter.
pub fn is_clean_term(term: &str) -> bool {
    term.chars().any(char::is_alphabetic)
        && term
            .chars()
            .all(|c| c.is_alphabetic() || c == ' ' || c == '-')
}

/// True when `needle` appears as a contiguous run of `haystack`.
pub fn contains_token_run(haystack: &[String], needle: &[&str]) -> bool {
    if needle.is_empty() || needle.len() > haystack.len() {
        return false;
    }
    haystack
        .windows(needle.len())
        .any(|w| w.iter().zip(needle).all(|(a, b)| a == b))
}

#[derive(Debug, Clone, Default, PartialEq)]
struct CaptionEntry {
    tokens: Vec<String>,
    terms: BTreeSet<String>,
}

/// Extracted terms plus, for every caption, its tokens and the terms it
/// contributed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TermBag {
    terms: BTreeSet<String>,
    captions: BTreeMap<usize, CaptionEntry>,
}

impl TermBag {
    pub fn terms(&self) -> &BTreeSet<String> {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn contains(&self, term: &str) -> bool {
        self.terms.contains(term)
    }

    /// Keep only terms matching `keep`; caption tokens are untouched.
    pub fn retain_terms(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.terms.retain(|t| keep(t));
        for entry in self.captions.values_mut() {
            entry.terms.retain(|t| keep(t));
        }
    }

    /// Terms extracted from one caption.
    pub fn caption_terms(&self, caption_id: usize) -> Option<&BTreeSet<String>> {
        self.captions.get(&caption_id).map(|e| &e.terms)
    }

    /// Whether `term` occurs in the caption: a token match for unigrams and a
    /// contiguous token-run match for phrases.
    pub fn occurs(&self, term: &str, caption_id: usize) -> bool {
        let Some(entry) = self.captions.get(&caption_id) else {
            return false;
        };
        let parts: Vec<&str> = term.split(' ').collect();
        contains_token_run(&entry.tokens, &parts)
    }
}

fn keep_unigram(token: &str, lexicon: &Lexicon) -> bool {
    if !is_clean_term(token) || lexicon.discard_terms.contains(token) {
        return false;
    }
    if lexicon.content_terms.is_empty() {
        !lexicon.stopwords.contains(token)
    } else {
        lexicon
            .content_terms
            .get(token)
            .is_some_and(|tag| *tag != PosTag::Phrase)
    }
}

fn keep_phrase(phrase: &str, lexicon: &Lexicon) -> bool {
    is_clean_term(phrase) && !lexicon.discard_terms.contains(phrase)
}

fn caption_entry(text: &str, lexicon: &Lexicon) -> CaptionEntry {
    let tokens = tokenize(text);
    let kept: Vec<bool> = tokens.iter().map(|t| keep_unigram(t, lexicon)).collect();
    let mut terms = BTreeSet::new();
    for (t, &k) in tokens.iter().zip(&kept) {
        if k {
            terms.insert(t.clone());
        }
    }
    for i in 1..tokens.len() {
        if kept[i - 1] && kept[i] {
            let phrase = format!("{} {}", tokens[i - 1], tokens[i]);
            if keep_phrase(&phrase, lexicon) {
                terms.insert(phrase);
            }
        }
    }
    // explicit multiword lexicon entries, whatever their parts' status
    for (phrase, tag) in &lexicon.content_terms {
        if *tag == PosTag::Phrase && keep_phrase(phrase, lexicon) {
            let parts: Vec<&str> = phrase.split(' ').collect();
            if contains_token_run(&tokens, &parts) {
                terms.insert(phrase.clone());
            }
        }
    }
    CaptionEntry { tokens, terms }
}

/// Build a bag from `(caption_id, text)` pairs. Repeated ids are processed
/// once.
pub fn extract_terms<'a>(
    captions: impl IntoIterator<Item = (usize, &'a str)>,
    lexicon: &Lexicon,
) -> TermBag {
    let mut bag = TermBag::default();
    for (id, text) in captions {
        if bag.captions.contains_key(&id) {
            continue;
        }
        let entry = caption_entry(text, lexicon);
        bag.terms.extend(entry.terms.iter().cloned());
        bag.captions.insert(id, entry);
    }
    bag
}

/// [`extract_terms`] over plain strings, numbering captions from zero.
pub fn extract_terms_from_texts<S: AsRef<str>>(captions: &[S], lexicon: &Lexicon) -> TermBag {
    extract_terms(
        captions.iter().enumerate().map(|(i, s)| (i, s.as_ref())),
        lexicon,
    )
}
