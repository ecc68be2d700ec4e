//! Rule-based decomposition of a sentence query into single-verb simple queries.
//!
//! The sentence is tokenized, cut at coordinating words and commas, and every
//! piece that contains a lexicon verb becomes a simple query. Verbless pieces
//! are glued onto the previous simple query (or onto the next one when they
//! lead the sentence).

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::QueryRecord;

/// Environment variable naming a replacement lexicon file.
pub const LEXICON_ENV: &str = "VMR_VERB_LEXICON";

const DEFAULT_LEXICON: &str = include_str!("../data/verbs.txt");

const COORDINATORS: [&str; 6] = ["and", "then", "while", "before", "after", "as"];

/// A lexicon hit right after one of these is read as a noun ("a drink").
const DETERMINERS: [&str; 16] = [
    "a", "an", "the", "this", "that", "these", "those", "his", "her", "their", "its", "my", "your",
    "our", "some", "of",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    lemmas: HashSet<String>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::parse(DEFAULT_LEXICON)
    }
}

impl Lexicon {
    /// Parses one lemma per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Self {
        let lemmas = text
            .lines()
            .map(|line| line.split('#').next().unwrap_or("").trim().to_lowercase())
            .filter(|line| !line.is_empty())
            .collect();
        Self { lemmas }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    /// The lexicon named by [`LEXICON_ENV`], or the built-in list.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os(LEXICON_ENV) {
            Some(path) if !path.is_empty() => Self::load(path),
            _ => Ok(Self::default()),
        }
    }

    pub fn len(&self) -> usize {
        self.lemmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lemmas.is_empty()
    }

    /// True if `word` is a lexicon lemma or a regular inflection of one.
    pub fn matches(&self, word: &str) -> bool {
        let word = word.to_lowercase();
        lemma_candidates(&word).any(|c| self.lemmas.contains(&c))
    }
}

fn undouble(stem: &str) -> Option<String> {
    let bytes = stem.as_bytes();
    let n = bytes.len();
    (n >= 2 && bytes[n - 1] == bytes[n - 2] && !b"aeiou".contains(&bytes[n - 1]))
        .then(|| stem[..n - 1].to_owned())
}

fn lemma_candidates(word: &str) -> impl Iterator<Item = String> {
    let mut out = vec![word.to_owned()];
    if let Some(stem) = word.strip_suffix("ies") {
        out.push(format!("{stem}y"));
    }
    if let Some(stem) = word.strip_suffix("es") {
        out.push(stem.to_owned());
    }
    if let Some(stem) = word.strip_suffix('s') {
        out.push(stem.to_owned());
    }
    if let Some(stem) = word.strip_suffix("ied") {
        out.push(format!("{stem}y"));
    }
    if let Some(stem) = word.strip_suffix("ed") {
        out.push(stem.to_owned());
        out.push(format!("{stem}e"));
        out.extend(undouble(stem));
    }
    if let Some(stem) = word.strip_suffix("ing") {
        out.push(stem.to_owned());
        out.push(format!("{stem}e"));
        out.extend(undouble(stem));
        if let Some(base) = stem.strip_suffix('y') {
            out.push(format!("{base}ie"));
        }
    }
    out.retain(|c| c.len() >= 2);
    out.into_iter()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMethod {
    /// Splits came with the query record.
    Provided,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitResult {
    pub simple_texts: Vec<String>,
    pub method: SplitMethod,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token<'a> {
    Word(&'a str),
    Comma,
}

fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        let is_word = ch.is_alphanumeric() || ch == '\'' || ch == '-';
        match (is_word, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                tokens.push(Token::Word(&text[s..i]));
                start = None;
            }
            _ => {}
        }
        if ch == ',' {
            tokens.push(Token::Comma);
        }
    }
    if let Some(s) = start {
        tokens.push(Token::Word(&text[s..]));
    }
    tokens
}

/// A run of words plus the delimiter that preceded it.
struct Segment<'a> {
    delimiter: Option<Token<'a>>,
    words: Vec<&'a str>,
}

fn append(text: &mut String, delimiter: &Option<Token<'_>>, words: &[&str]) {
    match delimiter {
        Some(Token::Comma) if !text.is_empty() => text.push(','),
        Some(Token::Word(w)) => {
            if !text.is_empty() {
                text.push(' ');
            }
            text.push_str(w);
        }
        _ => {}
    }
    for w in words {
        if !text.is_empty() {
            text.push(' ');
        }
        text.push_str(w);
    }
}

fn has_verb(words: &[&str], lexicon: &Lexicon) -> bool {
    words.iter().enumerate().any(|(i, w)| {
        let after_determiner = i > 0 && DETERMINERS.contains(&words[i - 1].to_lowercase().as_str());
        !after_determiner && lexicon.matches(w)
    })
}

/// Splits `raw_text` into simple queries, each holding one verb phrase.
pub fn split_query(raw_text: &str, lexicon: &Lexicon) -> Result<SplitResult> {
    let trimmed = raw_text.trim();
    if trimmed.is_empty() {
        return Err(Error::usage("cannot split an empty query"));
    }

    let mut segments = vec![Segment {
        delimiter: None,
        words: Vec::new(),
    }];
    for token in tokenize(trimmed) {
        let cut = match token {
            Token::Comma => true,
            Token::Word(w) => COORDINATORS.contains(&w.to_lowercase().as_str()),
        };
        if cut {
            segments.push(Segment {
                delimiter: Some(token),
                words: Vec::new(),
            });
        } else if let Token::Word(w) = token {
            segments.last_mut().expect("non-empty").words.push(w);
        }
    }

    let mut kept: Vec<String> = Vec::new();
    let mut leading = String::new();
    for Segment { delimiter, words } in segments {
        if words.is_empty() {
            continue;
        }
        if has_verb(&words, lexicon) {
            let mut text = std::mem::take(&mut leading);
            let joiner = if text.is_empty() { None } else { delimiter };
            append(&mut text, &joiner, &words);
            kept.push(text);
        } else if let Some(last) = kept.last_mut() {
            append(last, &delimiter, &words);
        } else {
            let joiner = if leading.is_empty() { None } else { delimiter };
            append(&mut leading, &joiner, &words);
        }
    }

    if kept.is_empty() {
        kept.push(trimmed.to_owned());
    }
    Ok(SplitResult {
        simple_texts: kept,
        method: SplitMethod::Heuristic,
    })
}

/// A query record whose `simple_texts` is guaranteed populated.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedQuery {
    pub record: QueryRecord,
    pub method: SplitMethod,
}

impl ResolvedQuery {
    pub fn simple_texts(&self) -> &[String] {
        self.record.simple_texts.as_deref().unwrap_or_default()
    }
}

/// Keeps provided splits verbatim, otherwise runs [`split_query`].
pub fn resolve_splits(record: &QueryRecord, lexicon: &Lexicon) -> Result<ResolvedQuery> {
    if record.provided_splits().is_some() {
        return Ok(ResolvedQuery {
            record: record.clone(),
            method: SplitMethod::Provided,
        });
    }
    let split = split_query(&record.raw_text, lexicon)?;
    let mut record = record.clone();
    record.simple_texts = Some(split.simple_texts);
    Ok(ResolvedQuery {
        record,
        method: split.method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn split(text: &str) -> Vec<String> {
        split_query(text, &Lexicon::default()).unwrap().simple_texts
    }

    #[test]
    fn splits_at_then() {
        assert_eq!(
            split("person opens the door then sits down"),
            ["person opens the door", "sits down"]
        );
    }

    #[test]
    fn single_verb_is_unchanged() {
        assert_eq!(split("a man runs"), ["a man runs"]);
    }

    #[test]
    fn verbless_query_falls_back_to_raw_text() {
        assert_eq!(split("the red door"), ["the red door"]);
        assert_eq!(split("  the red door. "), ["the red door."]);
    }

    #[test]
    fn verbless_pieces_attach_to_neighbours() {
        assert_eq!(
            split("person holds a cup and a drink"),
            ["person holds a cup and a drink"]
        );
        assert_eq!(
            split("the man and the woman walk away"),
            ["the man and the woman walk away"]
        );
        assert_eq!(
            split("a person is laughing, then they put the book down."),
            ["a person is laughing", "they put the book down"]
        );
        assert_eq!(
            split("person takes a towel, a pillow, and closes the door"),
            ["person takes a towel, a pillow", "closes the door"]
        );
    }

    #[test]
    fn inflections_match_lemmas() {
        let lex = Lexicon::default();
        for w in [
            "opens", "washes", "tries", "opened", "closed", "stopped", "cried", "running",
            "taking", "lying", "sitting", "Walks", "took",
        ] {
            assert!(lex.matches(w), "{w}");
        }
        for w in ["door", "the", "bed", "glasses", "is", "table"] {
            assert!(!lex.matches(w), "{w}");
        }
    }

    #[test]
    fn empty_query_is_a_usage_error() {
        assert!(split_query("   ", &Lexicon::default())
            .unwrap_err()
            .is_usage());
    }

    #[test]
    fn lexicon_parsing_skips_comments() {
        let lex = Lexicon::parse("# header\nJump\n\n  skip # trailing\n");
        assert_eq!(lex.len(), 2);
        assert!(lex.matches("jumping") && lex.matches("skipped"));
    }

    fn record(simple: Option<Vec<&str>>) -> QueryRecord {
        QueryRecord {
            query_id: "q".into(),
            video_id: "v".into(),
            raw_text: "person opens the door then sits down".into(),
            simple_texts: simple.map(|s| s.into_iter().map(String::from).collect()),
            gt_begin_s: 0.0,
            gt_end_s: 1.0,
        }
    }

    #[test]
    fn resolve_keeps_provided_splits() {
        let rec = record(Some(vec!["opens door", "sits"]));
        let resolved = resolve_splits(&rec, &Lexicon::default()).unwrap();
        assert_eq!(resolved.method, SplitMethod::Provided);
        assert_eq!(resolved.record, rec);
    }

    #[test]
    fn resolve_splits_missing_or_empty() {
        for rec in [record(None), record(Some(vec![]))] {
            let resolved = resolve_splits(&rec, &Lexicon::default()).unwrap();
            assert_eq!(resolved.method, SplitMethod::Heuristic);
            assert_eq!(
                resolved.simple_texts(),
                ["person opens the door", "sits down"]
            );
        }
    }

    const VOCAB: [&str; 16] = [
        "person", "opens", "the", "door", "then", "and", "sits", "down", ",", "a", "cup", "while",
        "laughing", "red", "walks", "after",
    ];

    proptest! {
        #[test]
        fn split_is_nonempty_deterministic_and_idempotent(
            idx in proptest::collection::vec(0usize..VOCAB.len(), 1..14)
        ) {
            let text = idx.iter().map(|&i| VOCAB[i]).collect::<Vec<_>>().join(" ");
            prop_assume!(!text.trim().is_empty());
            let lex = Lexicon::default();
            let first = split_query(&text, &lex).unwrap();
            prop_assert!(!first.simple_texts.is_empty());
            prop_assert!(first.simple_texts.iter().all(|t| !t.trim().is_empty()));
            prop_assert_eq!(&first, &split_query(&text, &lex).unwrap());
            if first.simple_texts.len() > 1 || first.simple_texts[0] != text.trim() {
                for piece in &first.simple_texts {
                    let again = split_query(piece, &lex).unwrap();
                    prop_assert_eq!(&again.simple_texts, &vec![piece.clone()]);
                }
            }
        }
    }
}
