//! Deterministic controlled-grammar parser for text prompts.
//!
//! ```text
//! prompt   := ["please"] VERB target clause* ["." | "!"]
//! target   := ("this" | "my" ["own"]) MEDIUM           original upload
//!           | QUOTED                                    specific work
//!           | ["a" | "an"] WORD* MEDIUM                 output noun; WORDs are generic modifiers
//! clause   := ("from" | "using" | "based on") source ("and" source)*
//!           | "with" with_item ("and" with_item)*
//!           | "in" in_item | "into" style_phrase | "as" style_phrase
//!           | "for" (PLATFORM [NOUN] | PURPOSE | N UNIT) | "on" PLATFORM
//!           | "at" (N "bpm" | RESOLUTION) | N UNIT ["long"] | "lasting" N UNIT
//!           | FOUNDATION_VERB WORD+
//! source   := ("this" | "my" ["own"]) MEDIUM | QUOTED | "the" ASPECT "of" (QUOTED | "this" MEDIUM)
//! with_item:= NAME POSSESSIVE ASPECT | "the" ASPECT "of" (NAME | QUOTED) | FOUNDATION_ADJ WORD+
//! in_item  := "the style of" (NAME | QUOTED) | NAME POSSESSIVE "style" | KEY ("major" | "minor")
//!           | ["a" | "an"] style_phrase | LEVEL ("resolution" | "quality" | "definition") | RESOLUTION
//! ```
//!
//! Work titles must be quoted. Anything outside the grammar is rejected with
//! [`ParseError::UnrecognizedPattern`]; the parser never guesses.

use super::validate::{DISTRIBUTION_TERMS, PURPOSE_TERMS};
use super::{
    validate_intent, Aspect, Descriptor, EntityRef, EntityType, IntentRequest, Qualifier, QualifierValue,
    Transformation, Violation,
};
use crate::canonical::Digest;

/// Content the user attached to a prompt, bound to "this image", "this song", ...
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attachment {
    pub digest: Digest,
}

impl Attachment {
    pub fn from_bytes(bytes: &[u8]) -> Self {
        Attachment { digest: Digest::of(bytes) }
    }

    pub fn from_digest(digest: Digest) -> Self {
        Attachment { digest }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("empty input")]
    EmptyInput,
    #[error("unrecognized pattern near `{near}`: expected {expected}")]
    UnrecognizedPattern { near: String, expected: String },
    #[error("prompt parsed but is not a valid intent: {0:?}")]
    Invalid(Vec<Violation>),
}

const VERBS: &[&str] = &[
    "create", "make", "generate", "compose", "produce", "write", "render", "draw", "paint", "turn", "sing",
    "remix", "transform", "cover", "design", "record",
];

const MEDIA: &[&str] = &[
    "song", "track", "tune", "image", "picture", "photo", "photograph", "painting", "drawing", "sketch",
    "illustration", "portrait", "video", "clip", "melody", "beat", "poem", "recording", "remix", "cover",
    "ballad", "artwork", "animation", "story", "text", "lyrics", "audio", "piece", "anthem", "jingle",
];

const KEYWORDS: &[&str] = &[
    "from", "with", "in", "into", "for", "on", "at", "and", "using", "based", "as", "lasting", "this", "my",
    "of", "style",
];

const FOUNDATION_VERBS: &[&str] =
    &["increase", "decrease", "boost", "reduce", "raise", "lower", "add", "brighten", "darken", "slow", "speed"];

const FOUNDATION_ADJECTIVES: &[&str] = &[
    "more", "less", "increased", "decreased", "brighter", "darker", "extra", "fewer", "added", "heavier",
    "lighter", "softer", "louder", "slower", "faster", "higher", "lower", "warmer", "cooler", "stronger",
    "reduced", "boosted",
];

/// Capitalized words that still denote a general category, not an entity.
const GENERIC_TERMS: &[&str] = &[
    "baroque", "renaissance", "gothic", "impressionist", "expressionist", "cubist", "surrealist", "romantic",
    "victorian", "jazz", "blues", "pop", "rock", "punk", "anime", "manga", "disco", "funk", "soul", "gospel",
    "latin", "celtic", "african", "asian", "european", "american", "classical", "medieval", "modern",
];

const PLATFORM_NOUNS: &[&str] = &[
    "post", "story", "reel", "video", "short", "feed", "upload", "channel", "page", "profile", "playlist",
    "stream", "release",
];

const STEMS: &[&str] =
    &["guitar", "bass", "drums", "piano", "strings", "synth", "saxophone", "violin", "horns", "keys", "cello"];

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Possessive(String),
    Quoted(String),
    Comma,
    Stop,
}

impl Tok {
    fn text(&self) -> String {
        match self {
            Tok::Word(w) => w.clone(),
            Tok::Possessive(w) => format!("{w}'s"),
            Tok::Quoted(q) => format!("'{q}'"),
            Tok::Comma => ",".into(),
            Tok::Stop => ".".into(),
        }
    }

    fn lower(&self) -> Option<String> {
        match self {
            Tok::Word(w) => Some(w.to_lowercase()),
            _ => None,
        }
    }
}

fn unrecognized(near: impl Into<String>, expected: impl Into<String>) -> ParseError {
    ParseError::UnrecognizedPattern { near: near.into(), expected: expected.into() }
}

fn closing_for(open: char) -> &'static [char] {
    match open {
        '"' | '“' => &['"', '”'],
        _ => &['\'', '’'],
    }
}

fn tokenize(text: &str) -> Result<Vec<Tok>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        match c {
            ',' | ';' => {
                toks.push(Tok::Comma);
                i += 1;
            }
            '.' | '!' => {
                toks.push(Tok::Stop);
                i += 1;
            }
            '"' | '“' | '\'' | '‘' | '`' => {
                let closers = closing_for(c);
                let single = closers.contains(&'\'');
                let start = i + 1;
                let mut j = start;
                let end = loop {
                    if j >= chars.len() {
                        return Err(unrecognized(chars[i..].iter().collect::<String>(), "a closing quote"));
                    }
                    let next_is_word = chars.get(j + 1).is_some_and(|n| n.is_alphanumeric());
                    if closers.contains(&chars[j]) && !(single && next_is_word) {
                        break j;
                    }
                    j += 1;
                };
                let title: String = chars[start..end].iter().collect::<String>().trim().to_string();
                if title.is_empty() {
                    return Err(unrecognized("''", "a non-empty quoted title"));
                }
                toks.push(Tok::Quoted(title));
                i = end + 1;
            }
            c if c.is_alphanumeric() => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_alphanumeric()
                        || matches!(chars[i], '-' | '#' | '&')
                        || (matches!(chars[i], '\'' | '’') && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())))
                {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                let lower = word.to_lowercase();
                if let Some(stem) = lower.strip_suffix("'s").or_else(|| lower.strip_suffix("’s")) {
                    if !stem.is_empty() {
                        toks.push(Tok::Possessive(word[..stem.len()].to_string()));
                        continue;
                    }
                }
                // plural possessive, e.g. "the Beatles' harmony"
                if matches!(chars.get(i), Some('\'' | '’')) && lower.ends_with('s') {
                    i += 1;
                    toks.push(Tok::Possessive(word));
                    continue;
                }
                toks.push(Tok::Word(word));
            }
            other => return Err(unrecognized(other.to_string(), "words, quoted titles or punctuation")),
        }
    }
    Ok(toks)
}

fn is_capitalized(word: &str) -> bool {
    word.chars().next().is_some_and(|c| c.is_uppercase() || c.is_ascii_digit())
}

fn aspect_noun(word: &str) -> Option<Aspect> {
    let w = word.to_lowercase();
    Some(match w.as_str() {
        "voice" | "vocals" | "singing" => Aspect::Voice,
        "style" => Aspect::Style,
        "likeness" | "face" | "look" => Aspect::Likeness,
        "lyrics" | "words" => Aspect::Lyrics,
        "melody" | "tune" => Aspect::Melody,
        "beat" | "beats" => Aspect::Beat,
        "rhythm" | "groove" => Aspect::Rhythm,
        "harmony" | "harmonies" | "chords" => Aspect::Harmony,
        "composition" => Aspect::Composition,
        "recording" => Aspect::Recording,
        s if STEMS.contains(&s) => Aspect::Stem(s.to_string()),
        _ => return None,
    })
}

fn medium_aspect(medium: &str) -> Aspect {
    match medium {
        "melody" => Aspect::Melody,
        "beat" => Aspect::Beat,
        "lyrics" => Aspect::Lyrics,
        "recording" => Aspect::Recording,
        _ => Aspect::Whole,
    }
}

fn name_entity_type(name: &str, default: EntityType) -> EntityType {
    let lower = name.to_lowercase();
    let group_marker = lower.starts_with("studio ")
        || lower.starts_with("the ")
        || ["band", "studios", "orchestra", "records", "choir", "ensemble", "quartet"]
            .iter()
            .any(|s| lower.ends_with(&format!(" {s}")));
    if group_marker {
        EntityType::Group
    } else {
        default
    }
}

fn resolution_value(word: &str) -> Option<f64> {
    let w = word.to_lowercase();
    match w.as_str() {
        "4k" => return Some(2160.0),
        "8k" => return Some(4320.0),
        "2k" => return Some(1440.0),
        _ => {}
    }
    let digits = w.strip_suffix('p')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

fn duration_unit(word: &str) -> Option<f64> {
    match word.to_lowercase().as_str() {
        "second" | "seconds" | "sec" | "secs" | "s" => Some(1.0),
        "minute" | "minutes" | "min" | "mins" => Some(60.0),
        _ => None,
    }
}

fn parse_number(word: &str) -> Option<f64> {
    if word.bytes().all(|b| b.is_ascii_digit() || b == b'.') && word.bytes().any(|b| b.is_ascii_digit()) {
        word.parse().ok()
    } else {
        None
    }
}

fn is_key_note(word: &str) -> bool {
    let w = word.to_lowercase();
    let mut chars = w.chars();
    let Some(first) = chars.next() else { return false };
    if !('a'..='g').contains(&first) {
        return false;
    }
    matches!(chars.as_str(), "" | "#" | "b" | "-flat" | "-sharp")
}

struct Parser<'a> {
    toks: Vec<Tok>,
    pos: usize,
    attachments: &'a [Attachment],
    next_attachment: usize,
    request: IntentRequest,
    has_source: bool,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn peek_at(&self, offset: usize) -> Option<&Tok> {
        self.toks.get(self.pos + offset)
    }

    fn peek_lower(&self) -> Option<String> {
        self.peek().and_then(Tok::lower)
    }

    fn peek_lower_at(&self, offset: usize) -> Option<String> {
        self.peek_at(offset).and_then(Tok::lower)
    }

    fn near(&self) -> String {
        self.peek().map(Tok::text).unwrap_or_else(|| "end of input".into())
    }

    fn fail<T>(&self, expected: &str) -> Result<T, ParseError> {
        Err(unrecognized(self.near(), expected))
    }

    fn eat(&mut self, word: &str) -> bool {
        if self.peek_lower().as_deref() == Some(word) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, word: &str) -> Result<(), ParseError> {
        if self.eat(word) {
            Ok(())
        } else {
            self.fail(&format!("`{word}`"))
        }
    }

    fn eat_article(&mut self) -> bool {
        self.eat("a") || self.eat("an")
    }

    /// Plain words up to the next keyword, punctuation or non-word token.
    fn collect_words(&mut self) -> Vec<String> {
        let mut out = Vec::new();
        while let Some(Tok::Word(w)) = self.peek() {
            if KEYWORDS.contains(&w.to_lowercase().as_str()) {
                break;
            }
            out.push(w.clone());
            self.pos += 1;
        }
        out
    }

    fn original_upload(&mut self) -> Result<Descriptor, ParseError> {
        let medium = match self.peek_lower() {
            Some(m) if MEDIA.contains(&m.as_str()) => m,
            _ => return self.fail("an upload medium such as `image` or `song`"),
        };
        self.pos += 1;
        let aspect = medium_aspect(&medium);
        let digest = self.attachments.get(self.next_attachment).map(|a| a.digest);
        self.next_attachment += 1;
        Ok(Descriptor { payload_digest: digest, ..Descriptor::original(Digest::ZERO, aspect) })
    }

    fn is_upload_start(&self) -> bool {
        matches!(self.peek_lower().as_deref(), Some("this" | "my"))
    }

    fn eat_upload_start(&mut self) -> bool {
        if self.eat("this") {
            return true;
        }
        if self.eat("my") {
            self.eat("own");
            return true;
        }
        false
    }

    /// Capitalized words followed by a possessive, e.g. `Taylor Swift's`.
    fn possessive_name(&mut self) -> Option<String> {
        let mut parts = Vec::new();
        let mut offset = 0;
        loop {
            match self.peek_at(offset) {
                Some(Tok::Word(w)) if is_capitalized(w) && offset < 5 => {
                    parts.push(w.clone());
                    offset += 1;
                }
                Some(Tok::Possessive(p)) => {
                    parts.push(p.clone());
                    self.pos += offset + 1;
                    return Some(parts.join(" "));
                }
                _ => return None,
            }
        }
    }

    /// A run of capitalized words naming an entity.
    fn plain_name(&mut self) -> Option<String> {
        let mut parts = Vec::new();
        while let Some(Tok::Word(w)) = self.peek() {
            if !is_capitalized(w) || KEYWORDS.contains(&w.to_lowercase().as_str()) {
                break;
            }
            parts.push(w.clone());
            self.pos += 1;
        }
        (!parts.is_empty()).then(|| parts.join(" "))
    }

    fn aspect(&mut self) -> Result<Aspect, ParseError> {
        match self.peek().and_then(|t| match t {
            Tok::Word(w) => aspect_noun(w),
            _ => None,
        }) {
            Some(a) => {
                self.pos += 1;
                if matches!(a, Aspect::Stem(_)) {
                    let _ = self.eat("stem") || self.eat("part") || self.eat("track");
                }
                Ok(a)
            }
            None => self.fail("an aspect such as `voice`, `melody` or `style`"),
        }
    }

    fn parse(mut self) -> Result<IntentRequest, ParseError> {
        self.eat("please");
        match self.peek_lower() {
            Some(v) if VERBS.contains(&v.as_str()) => self.pos += 1,
            _ => return self.fail("a generation verb such as `create` or `turn`"),
        }

        let modifiers = self.target()?;

        loop {
            match self.peek() {
                None => break,
                Some(Tok::Stop) => {
                    self.pos += 1;
                    if self.peek().is_some() {
                        return self.fail("end of prompt");
                    }
                    break;
                }
                Some(Tok::Comma) => {
                    self.pos += 1;
                    continue;
                }
                _ => {}
            }
            self.eat("and");
            self.clause()?;
        }

        if !modifiers.is_empty() {
            let (names, generic) = split_style_words(&modifiers)?;
            if let Some(name) = names {
                let ty = name_entity_type(&name, EntityType::Group);
                self.request.transformations.push(Transformation::specific(EntityRef::new(ty, name), Aspect::Style));
            } else if self.has_source {
                self.request.transformations.push(Transformation::generic(generic, Aspect::Style));
            } else {
                self.request.descriptors.push(Descriptor::generic(generic, Aspect::Whole));
            }
        }

        let violations = validate_intent(&self.request);
        if !violations.is_empty() {
            return Err(ParseError::Invalid(violations));
        }
        Ok(self.request)
    }

    /// Returns modifiers of the output noun, if the target was one.
    fn target(&mut self) -> Result<Vec<String>, ParseError> {
        if self.eat_upload_start() {
            let d = self.original_upload()?;
            self.request.descriptors.push(d);
            self.has_source = true;
            return Ok(Vec::new());
        }
        if let Some(Tok::Quoted(title)) = self.peek().cloned() {
            self.pos += 1;
            self.request
                .descriptors
                .push(Descriptor::specific(EntityRef::new(EntityType::Work, title), Aspect::Whole));
            self.has_source = true;
            return Ok(Vec::new());
        }
        self.eat_article();
        let mut words = self.collect_words();
        match words.last().map(|w| w.to_lowercase()) {
            Some(last) if MEDIA.contains(&last.as_str()) => {
                words.pop();
                Ok(words)
            }
            _ => self.fail("an output noun such as `song` or `image`, `this <medium>`, or a quoted title"),
        }
    }

    fn clause(&mut self) -> Result<(), ParseError> {
        let Some(word) = self.peek_lower() else {
            return self.fail("a clause");
        };
        match word.as_str() {
            "from" | "using" => {
                self.pos += 1;
                self.source_list()
            }
            "based" => {
                self.pos += 1;
                self.expect("on")?;
                self.source_list()
            }
            "with" => {
                self.pos += 1;
                self.with_item()?;
                while self.peek_lower().as_deref() == Some("and") && !self.and_starts_clause() {
                    self.pos += 1;
                    self.with_item()?;
                }
                Ok(())
            }
            "in" => {
                self.pos += 1;
                self.in_item()
            }
            "into" | "as" => {
                self.pos += 1;
                self.eat_article();
                self.style_phrase(true)
            }
            "for" => {
                self.pos += 1;
                self.for_item()
            }
            "on" => {
                self.pos += 1;
                self.platform()
            }
            "at" => {
                self.pos += 1;
                self.at_item()
            }
            "lasting" => {
                self.pos += 1;
                self.duration(false)
            }
            w if parse_number(w).is_some() => self.duration(true),
            w if FOUNDATION_VERBS.contains(&w) => {
                let words = self.collect_words();
                self.request.transformations.push(Transformation::foundational(words.join(" "), Aspect::Whole));
                Ok(())
            }
            _ => self.fail("a clause keyword such as `from`, `with`, `in`, `into` or `for`"),
        }
    }

    /// Whether the `and` at the cursor begins a new clause rather than a list item.
    fn and_starts_clause(&self) -> bool {
        match self.peek_lower_at(1) {
            Some(w) => {
                KEYWORDS.contains(&w.as_str()) && w != "this" && w != "my"
                    || FOUNDATION_VERBS.contains(&w.as_str())
                    || parse_number(&w).is_some()
            }
            None => false,
        }
    }

    fn source_list(&mut self) -> Result<(), ParseError> {
        self.source()?;
        while self.peek_lower().as_deref() == Some("and") && !self.and_starts_clause() {
            self.pos += 1;
            self.source()?;
        }
        self.has_source = true;
        Ok(())
    }

    fn source(&mut self) -> Result<(), ParseError> {
        if self.eat_upload_start() {
            let d = self.original_upload()?;
            self.request.descriptors.push(d);
            return Ok(());
        }
        if let Some(Tok::Quoted(title)) = self.peek().cloned() {
            self.pos += 1;
            self.request
                .descriptors
                .push(Descriptor::specific(EntityRef::new(EntityType::Work, title), Aspect::Whole));
            return Ok(());
        }
        if self.eat("the") {
            let aspect = self.aspect()?;
            self.expect("of")?;
            if self.is_upload_start() {
                self.eat_upload_start();
                let mut d = self.original_upload()?;
                d.aspect = aspect;
                self.request.descriptors.push(d);
                return Ok(());
            }
            if let Some(Tok::Quoted(title)) = self.peek().cloned() {
                self.pos += 1;
                self.request.descriptors.push(Descriptor::specific(EntityRef::new(EntityType::Work, title), aspect));
                return Ok(());
            }
            return self.fail("a quoted title or `this <medium>`");
        }
        self.fail("a quoted title, `this <medium>` or `the <aspect> of ...`")
    }

    fn with_item(&mut self) -> Result<(), ParseError> {
        if let Some(name) = self.possessive_name() {
            let aspect = self.aspect()?;
            let ty = name_entity_type(&name, EntityType::Person);
            self.request.transformations.push(Transformation::specific(EntityRef::new(ty, name), aspect));
            return Ok(());
        }
        if self.eat("the") {
            let aspect = self.aspect()?;
            self.expect("of")?;
            if let Some(Tok::Quoted(title)) = self.peek().cloned() {
                self.pos += 1;
                self.request.transformations.push(Transformation::specific(EntityRef::new(EntityType::Work, title), aspect));
                return Ok(());
            }
            if let Some(name) = self.plain_name() {
                let ty = name_entity_type(&name, EntityType::Person);
                self.request.transformations.push(Transformation::specific(EntityRef::new(ty, name), aspect));
                return Ok(());
            }
            return self.fail("a name or quoted title");
        }
        if self.peek_lower().is_some_and(|w| FOUNDATION_ADJECTIVES.contains(&w.as_str())) {
            let words = self.collect_words();
            if words.len() < 2 {
                return self.fail("a described adjustment such as `more blue hues`");
            }
            self.request.transformations.push(Transformation::foundational(words.join(" "), Aspect::Whole));
            return Ok(());
        }
        self.fail("`<Name>'s <aspect>`, `the <aspect> of ...`, or an adjustment such as `more reverb`")
    }

    fn in_item(&mut self) -> Result<(), ParseError> {
        if self.peek_lower().as_deref() == Some("the")
            && self.peek_lower_at(1).as_deref() == Some("style")
            && self.peek_lower_at(2).as_deref() == Some("of")
        {
            self.pos += 3;
            if let Some(Tok::Quoted(title)) = self.peek().cloned() {
                self.pos += 1;
                self.request
                    .transformations
                    .push(Transformation::specific(EntityRef::new(EntityType::Work, title), Aspect::Style));
                return Ok(());
            }
            if let Some(name) = self.plain_name().or_else(|| self.possessive_name()) {
                let ty = name_entity_type(&name, EntityType::Person);
                self.request.transformations.push(Transformation::specific(EntityRef::new(ty, name), Aspect::Style));
                return Ok(());
            }
            return self.fail("a name or quoted title");
        }
        if let Some(name) = self.possessive_name() {
            self.expect("style")?;
            let ty = name_entity_type(&name, EntityType::Person);
            self.request.transformations.push(Transformation::specific(EntityRef::new(ty, name), Aspect::Style));
            return Ok(());
        }
        if let Some(key) = self.key_signature() {
            self.request.transformations.push(Transformation::foundational(key, Aspect::Harmony));
            return Ok(());
        }
        if let Some(w) = self.peek_lower() {
            if let Some(v) = resolution_value(&w) {
                self.pos += 1;
                self.eat("resolution");
                self.request.qualifiers.push(Qualifier::quality("resolution", QualifierValue::Number(v)));
                return Ok(());
            }
            if matches!(w.as_str(), "high" | "low" | "standard" | "ultra" | "medium") {
                if let Some(noun) = self.peek_lower_at(1) {
                    let key = match noun.as_str() {
                        "resolution" | "definition" => Some("resolution"),
                        "quality" => Some("quality"),
                        _ => None,
                    };
                    if let Some(key) = key {
                        self.pos += 2;
                        self.request.qualifiers.push(Qualifier::quality(key, QualifierValue::Text(w)));
                        return Ok(());
                    }
                }
            }
        }
        self.eat_article();
        self.style_phrase(false)
    }

    fn key_signature(&mut self) -> Option<String> {
        let note = self.peek_lower()?;
        if !is_key_note(&note) {
            return None;
        }
        let mut offset = 1;
        let mut text = note;
        if let Some(acc @ ("flat" | "sharp")) = self.peek_lower_at(1).as_deref() {
            text = format!("{text}-{acc}");
            offset += 1;
        }
        match self.peek_lower_at(offset).as_deref() {
            Some(mode @ ("major" | "minor")) => {
                self.pos += offset + 1;
                Some(format!("{text} {mode}"))
            }
            _ => None,
        }
    }

    /// `<words> style` or, when `medium_ok`, `<words> <medium>`.
    fn style_phrase(&mut self, medium_ok: bool) -> Result<(), ParseError> {
        if let Some(Tok::Quoted(title)) = self.peek().cloned() {
            self.pos += 1;
            self.expect("style")?;
            self.request
                .transformations
                .push(Transformation::specific(EntityRef::new(EntityType::Work, title), Aspect::Style));
            return Ok(());
        }
        let words = self.collect_words();
        let ends_with_style = self.eat("style");
        let mut words = words;
        if !ends_with_style {
            match words.last().map(|w| w.to_lowercase()) {
                Some(last) if medium_ok && MEDIA.contains(&last.as_str()) => {
                    words.pop();
                    if words.is_empty() {
                        // plain change of medium, e.g. "into a song"
                        return Ok(());
                    }
                }
                _ => return self.fail("a style phrase ending in `style`"),
            }
        }
        if words.is_empty() {
            return self.fail("a style description");
        }
        let (name, generic) = split_style_words(&words)?;
        match name {
            Some(name) => {
                let ty = name_entity_type(&name, EntityType::Group);
                self.request.transformations.push(Transformation::specific(EntityRef::new(ty, name), Aspect::Style));
            }
            None => self.request.transformations.push(Transformation::generic(generic, Aspect::Style)),
        }
        Ok(())
    }

    fn for_item(&mut self) -> Result<(), ParseError> {
        if self.peek_lower().is_some_and(|w| parse_number(&w).is_some()) {
            return self.duration(false);
        }
        let _ = self.eat_article() || self.eat("my");
        if self.peek_lower().is_some_and(|w| DISTRIBUTION_TERMS.contains(&w.as_str())) {
            return self.platform();
        }
        let words = self.collect_words();
        let mut lowered: Vec<String> = words.iter().map(|w| w.to_lowercase().replace('-', "_")).collect();
        while lowered.last().is_some_and(|w| matches!(w.as_str(), "use" | "purposes" | "purpose")) {
            lowered.pop();
        }
        let joined = lowered.join("_");
        let purpose = match joined.as_str() {
            "noncommercial" => "non_commercial",
            "social_media_sharing" | "sharing_on_social_media" => "social_sharing",
            "advertisement" | "ad" | "advertising_campaign" => "advertising",
            "educational" => "education",
            "private" => "personal",
            other => other,
        };
        if PURPOSE_TERMS.contains(&purpose) {
            self.request.qualifiers.push(Qualifier::purpose(purpose));
            Ok(())
        } else {
            Err(unrecognized(words.join(" "), "a platform, a purpose of use, or a duration"))
        }
    }

    fn platform(&mut self) -> Result<(), ParseError> {
        match self.peek_lower() {
            Some(p) if DISTRIBUTION_TERMS.contains(&p.as_str()) => {
                self.pos += 1;
                if self.peek_lower().is_some_and(|w| PLATFORM_NOUNS.contains(&w.as_str())) {
                    self.pos += 1;
                }
                self.request.qualifiers.push(Qualifier::distribution(p));
                Ok(())
            }
            _ => self.fail("a distribution platform such as `Instagram`"),
        }
    }

    fn at_item(&mut self) -> Result<(), ParseError> {
        if let Some(w) = self.peek_lower() {
            if let Some(n) = parse_number(&w) {
                if self.peek_lower_at(1).as_deref() == Some("bpm") {
                    self.pos += 2;
                    self.request.transformations.push(Transformation::foundational(format!("{n} bpm"), Aspect::Rhythm));
                    return Ok(());
                }
            }
            if let Some(v) = resolution_value(&w) {
                self.pos += 1;
                self.eat("resolution");
                self.request.qualifiers.push(Qualifier::quality("resolution", QualifierValue::Number(v)));
                return Ok(());
            }
        }
        self.fail("a tempo (`120 bpm`) or a resolution (`1080p`, `4k`)")
    }

    fn duration(&mut self, allow_long: bool) -> Result<(), ParseError> {
        let n = self.peek_lower().and_then(|w| parse_number(&w));
        let unit = self.peek_lower_at(1).and_then(|w| duration_unit(&w));
        match (n, unit) {
            (Some(n), Some(unit)) => {
                self.pos += 2;
                if allow_long && !self.eat("long") {
                    return self.fail("`long`");
                }
                self.request.qualifiers.push(Qualifier::quality("duration_s", QualifierValue::Number(n * unit)));
                Ok(())
            }
            _ => self.fail("a duration such as `30 seconds`"),
        }
    }
}

/// Splits style words into an entity name (contiguous capitalized non-generic
/// words) and a generic category (everything else).
fn split_style_words(words: &[String]) -> Result<(Option<String>, String), ParseError> {
    let is_name = |w: &String| is_capitalized(w) && !GENERIC_TERMS.contains(&w.to_lowercase().as_str());
    let name_positions: Vec<usize> = words.iter().enumerate().filter(|(_, w)| is_name(w)).map(|(i, _)| i).collect();
    if let (Some(&first), Some(&last)) = (name_positions.first(), name_positions.last()) {
        if last - first + 1 != name_positions.len() {
            return Err(unrecognized(words.join(" "), "a single entity name"));
        }
        return Ok((Some(words[first..=last].join(" ")), String::new()));
    }
    Ok((None, words.iter().map(|w| w.to_lowercase()).collect::<Vec<_>>().join(" ")))
}

/// Parses a prompt against the controlled grammar. `attachments` bind, in
/// order, to each `this <medium>` / `my <medium>` phrase.
pub fn parse_text_prompt(text: &str, attachments: &[Attachment]) -> Result<IntentRequest, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::EmptyInput);
    }
    let toks = tokenize(text)?;
    let parser = Parser {
        toks,
        pos: 0,
        attachments,
        next_attachment: 0,
        request: IntentRequest { raw_input: Some(text.to_string()), ..Default::default() },
        has_source: false,
    };
    parser.parse()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intent::{ComponentId, DescriptorKind, TransformationKind};

    fn upload() -> Attachment {
        Attachment::from_bytes(b"user upload")
    }

    #[test]
    fn tokenizer_separates_possessives_from_quotes() {
        let toks = tokenize("from 'Rolling in the Deep' with Grimes's voice").unwrap();
        assert_eq!(
            toks,
            vec![
                Tok::Word("from".into()),
                Tok::Quoted("Rolling in the Deep".into()),
                Tok::Word("with".into()),
                Tok::Possessive("Grimes".into()),
                Tok::Word("voice".into()),
            ]
        );
        let toks = tokenize("`Rolling in the Deep'").unwrap();
        assert_eq!(toks, vec![Tok::Quoted("Rolling in the Deep".into())]);
        let toks = tokenize("“Don't Stop” now").unwrap();
        assert_eq!(toks, vec![Tok::Quoted("Don't Stop".into()), Tok::Word("now".into())]);
    }

    #[test]
    fn unterminated_quote_is_rejected() {
        assert!(matches!(parse_text_prompt("Create a song from 'Hello", &[]), Err(ParseError::UnrecognizedPattern { .. })));
    }

    #[test]
    fn rolling_in_the_deep_prompt() {
        let r = parse_text_prompt("Create a song from 'Rolling in the Deep' with Grimes's voice", &[]).unwrap();
        assert_eq!(
            r.descriptors,
            vec![Descriptor::specific(EntityRef::new(EntityType::Work, "Rolling in the Deep"), Aspect::Whole)]
        );
        assert_eq!(r.transformations, vec![Transformation::specific(EntityRef::new(EntityType::Person, "Grimes"), Aspect::Voice)]);
        assert!(r.qualifiers.is_empty());
    }

    #[test]
    fn ghibli_prompt_with_upload() {
        let a = upload();
        let r = parse_text_prompt("Turn this image into a Ghibli anime style", &[a]).unwrap();
        assert_eq!(r.descriptors, vec![Descriptor::original(a.digest, Aspect::Whole)]);
        assert_eq!(r.transformations, vec![Transformation::specific(EntityRef::new(EntityType::Group, "Ghibli"), Aspect::Style)]);
    }

    #[test]
    fn upload_phrase_without_attachment_is_invalid() {
        let err = parse_text_prompt("Turn this image into a Ghibli anime style", &[]).unwrap_err();
        assert_eq!(
            err,
            ParseError::Invalid(vec![Violation::MissingPayloadDigest { component: ComponentId::Descriptor(0) }])
        );
    }

    #[test]
    fn empty_and_out_of_grammar() {
        assert_eq!(parse_text_prompt("", &[]), Err(ParseError::EmptyInput));
        assert_eq!(parse_text_prompt("   \n", &[]), Err(ParseError::EmptyInput));
        assert!(matches!(parse_text_prompt("make something cool", &[]), Err(ParseError::UnrecognizedPattern { .. })));
    }

    #[test]
    fn generic_style_over_upload() {
        let r = parse_text_prompt("Turn this image into an anime style", &[upload()]).unwrap();
        assert_eq!(r.transformations[0].kind, TransformationKind::Generic);
        assert_eq!(r.transformations[0].category.as_deref(), Some("anime"));
    }

    #[test]
    fn bare_output_with_genre_is_generic_descriptor() {
        let r = parse_text_prompt("Create a jazz song", &[]).unwrap();
        assert_eq!(r.descriptors, vec![Descriptor::generic("jazz", Aspect::Whole)]);
    }

    #[test]
    fn qualifiers_are_classified() {
        let r = parse_text_prompt(
            "Turn this image into a watercolor painting in high resolution for an Instagram post",
            &[upload()],
        )
        .unwrap();
        assert_eq!(r.descriptors[0].kind, DescriptorKind::Original);
        assert_eq!(r.transformations, vec![Transformation::generic("watercolor", Aspect::Style)]);
        assert_eq!(
            r.qualifiers,
            vec![
                Qualifier::quality("resolution", QualifierValue::Text("high".into())),
                Qualifier::distribution("instagram"),
            ]
        );
    }

    #[test]
    fn no_token_lands_in_two_lists() {
        let r = parse_text_prompt("Remix 'Hello' with the beat of 'Humble' for commercial use on TikTok", &[]).unwrap();
        assert_eq!(r.descriptors.len(), 1);
        assert_eq!(r.transformations.len(), 1);
        assert_eq!(r.qualifiers, vec![Qualifier::purpose("commercial"), Qualifier::distribution("tiktok")]);
    }
}
