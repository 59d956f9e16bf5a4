//! Praat TextGrid reading and writing (long and short text forms, interval
//! tiers only) and conversion of phone/word tiers to frame-indexed segments.
//!
//! Both text forms carry the same sequence of values; the long form only adds
//! `key =` labels and `item [n]:` markers. The reader therefore tokenizes
//! either form into one stream of numbers, strings and `<exists>` flags and
//! parses that stream once.

use std::fmt::Write as _;

use crate::datamodel::{PhoneSegment, WordSpan};
use crate::error::{Error, Result};

use super::seconds_to_frame;

#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub xmin: f64,
    pub xmax: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalTier {
    pub name: String,
    pub xmin: f64,
    pub xmax: f64,
    pub intervals: Vec<Interval>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextGridDocument {
    pub xmin: f64,
    pub xmax: f64,
    pub tiers: Vec<IntervalTier>,
}

impl TextGridDocument {
    pub fn tier(&self, name: &str) -> Option<&IntervalTier> {
        self.tiers.iter().find(|t| t.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextGridForm {
    Long,
    Short,
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Num(f64),
    Str(String),
    Flag(bool),
}

#[derive(Debug, Clone)]
struct Token {
    value: Value,
    line: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    let mut chars = text.chars().peekable();
    let mut line = 1;
    while let Some(&c) = chars.peek() {
        if c == '\n' {
            line += 1;
            chars.next();
        } else if c.is_whitespace() || c == '\u{feff}' {
            chars.next();
        } else if c == '!' {
            // Comment to end of line.
            while chars.peek().is_some_and(|&c| c != '\n') {
                chars.next();
            }
        } else if c == '"' {
            let start_line = line;
            chars.next();
            let mut s = String::new();
            loop {
                match chars.next() {
                    Some('"') => {
                        if chars.peek() == Some(&'"') {
                            chars.next();
                            s.push('"');
                        } else {
                            break;
                        }
                    }
                    Some(ch) => {
                        if ch == '\n' {
                            line += 1;
                        }
                        s.push(ch);
                    }
                    None => return Err(Error::parse(start_line, "unterminated string")),
                }
            }
            tokens.push(Token { value: Value::Str(s), line: start_line });
        } else {
            let mut word = String::new();
            while let Some(&ch) = chars.peek() {
                if ch.is_whitespace() || ch == '"' {
                    break;
                }
                word.push(ch);
                chars.next();
            }
            let value = match word.as_str() {
                "<exists>" => Some(Value::Flag(true)),
                "<absent>" => Some(Value::Flag(false)),
                w => w.parse::<f64>().ok().filter(|v| v.is_finite()).map(Value::Num),
            };
            // Anything else is a label (`xmin`, `=`, `item`, `[1]:`, ...).
            if let Some(value) = value {
                tokens.push(Token { value, line });
            }
        }
    }
    Ok(tokens)
}

struct Stream {
    tokens: Vec<Token>,
    pos: usize,
    last_line: usize,
}

impl Stream {
    fn next(&mut self, what: &str) -> Result<Token> {
        let tok = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or_else(|| Error::parse(self.last_line, format!("unexpected end of file, expected {what}")))?;
        self.pos += 1;
        self.last_line = tok.line;
        Ok(tok)
    }

    fn num(&mut self, what: &str) -> Result<(f64, usize)> {
        let tok = self.next(what)?;
        match tok.value {
            Value::Num(v) => Ok((v, tok.line)),
            other => Err(Error::parse(tok.line, format!("expected {what}, found {other:?}"))),
        }
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let (v, line) = self.num(what)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::parse(line, format!("{what} must be a non-negative integer, got {v}")));
        }
        Ok(v as usize)
    }

    fn string(&mut self, what: &str) -> Result<(String, usize)> {
        let tok = self.next(what)?;
        match tok.value {
            Value::Str(s) => Ok((s, tok.line)),
            other => Err(Error::parse(tok.line, format!("expected {what}, found {other:?}"))),
        }
    }
}

/// Parse a TextGrid in either text form.
pub fn parse_textgrid(text: &str) -> Result<TextGridDocument> {
    let mut s = Stream { tokens: tokenize(text)?, pos: 0, last_line: 1 };

    let (file_type, line) = s.string("file type")?;
    if !file_type.starts_with("ooTextFile") {
        return Err(Error::parse(line, format!("not a Praat text file: {file_type:?}")));
    }
    let (class, line) = s.string("object class")?;
    if class != "TextGrid" {
        return Err(Error::parse(line, format!("object class {class:?} is not TextGrid")));
    }
    let (xmin, _) = s.num("xmin")?;
    let (xmax, line) = s.num("xmax")?;
    if xmax < xmin {
        return Err(Error::parse(line, format!("grid xmax {xmax} < xmin {xmin}")));
    }
    let tok = s.next("tiers flag")?;
    let has_tiers = match tok.value {
        Value::Flag(f) => f,
        other => return Err(Error::parse(tok.line, format!("expected <exists> or <absent>, found {other:?}"))),
    };
    let mut tiers = Vec::new();
    if has_tiers {
        let n = s.count("tier count")?;
        for _ in 0..n {
            let (class, line) = s.string("tier class")?;
            match class.as_str() {
                "IntervalTier" => {}
                "TextTier" => return Err(Error::parse(line, "point tiers are not supported")),
                other => return Err(Error::parse(line, format!("unknown tier class {other:?}"))),
            }
            let (name, _) = s.string("tier name")?;
            let (txmin, _) = s.num("tier xmin")?;
            let (txmax, line) = s.num("tier xmax")?;
            if txmax < txmin {
                return Err(Error::parse(line, format!("tier {name:?} xmax {txmax} < xmin {txmin}")));
            }
            let count = s.count("interval count")?;
            let mut intervals: Vec<Interval> = Vec::with_capacity(count);
            for _ in 0..count {
                let (a, line_a) = s.num("interval xmin")?;
                let (b, line_b) = s.num("interval xmax")?;
                let (t, _) = s.string("interval text")?;
                if b <= a {
                    return Err(Error::parse(line_b, format!("interval xmax {b} is not greater than xmin {a}")));
                }
                if let Some(prev) = intervals.last() {
                    if a < prev.xmax {
                        return Err(Error::parse(
                            line_a,
                            format!("interval starting at {a} overlaps or precedes previous end {}", prev.xmax),
                        ));
                    }
                }
                intervals.push(Interval { xmin: a, xmax: b, text: t });
            }
            tiers.push(IntervalTier { name, xmin: txmin, xmax: txmax, intervals });
        }
    }
    if let Some(tok) = s.tokens.get(s.pos) {
        return Err(Error::parse(tok.line, "trailing content after last tier"));
    }
    Ok(TextGridDocument { xmin, xmax, tiers })
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

/// Write a document in Praat's long or short text form.
pub fn serialize_textgrid(doc: &TextGridDocument, form: TextGridForm) -> String {
    let mut out = String::new();
    out.push_str("File type = \"ooTextFile\"\nObject class = \"TextGrid\"\n\n");
    let flag = if doc.tiers.is_empty() { "<absent>" } else { "<exists>" };
    match form {
        TextGridForm::Long => {
            let _ = writeln!(out, "xmin = {} ", doc.xmin);
            let _ = writeln!(out, "xmax = {} ", doc.xmax);
            let _ = writeln!(out, "tiers? {flag} ");
            if doc.tiers.is_empty() {
                return out;
            }
            let _ = writeln!(out, "size = {} ", doc.tiers.len());
            out.push_str("item []: \n");
            for (i, tier) in doc.tiers.iter().enumerate() {
                let _ = writeln!(out, "    item [{}]:", i + 1);
                out.push_str("        class = \"IntervalTier\" \n");
                let _ = writeln!(out, "        name = {} ", quote(&tier.name));
                let _ = writeln!(out, "        xmin = {} ", tier.xmin);
                let _ = writeln!(out, "        xmax = {} ", tier.xmax);
                let _ = writeln!(out, "        intervals: size = {} ", tier.intervals.len());
                for (j, iv) in tier.intervals.iter().enumerate() {
                    let _ = writeln!(out, "        intervals [{}]:", j + 1);
                    let _ = writeln!(out, "            xmin = {} ", iv.xmin);
                    let _ = writeln!(out, "            xmax = {} ", iv.xmax);
                    let _ = writeln!(out, "            text = {} ", quote(&iv.text));
                }
            }
        }
        TextGridForm::Short => {
            let _ = writeln!(out, "{}", doc.xmin);
            let _ = writeln!(out, "{}", doc.xmax);
            let _ = writeln!(out, "{flag}");
            if doc.tiers.is_empty() {
                return out;
            }
            let _ = writeln!(out, "{}", doc.tiers.len());
            for tier in &doc.tiers {
                out.push_str("\"IntervalTier\"\n");
                let _ = writeln!(out, "{}", quote(&tier.name));
                let _ = writeln!(out, "{}", tier.xmin);
                let _ = writeln!(out, "{}", tier.xmax);
                let _ = writeln!(out, "{}", tier.intervals.len());
                for iv in &tier.intervals {
                    let _ = writeln!(out, "{}", iv.xmin);
                    let _ = writeln!(out, "{}", iv.xmax);
                    let _ = writeln!(out, "{}", quote(&iv.text));
                }
            }
        }
    }
    out
}

/// Phones and words on the frame grid, without tracks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UtteranceSkeleton {
    pub phones: Vec<PhoneSegment>,
    pub words: Vec<WordSpan>,
}

impl UtteranceSkeleton {
    pub fn num_frames(&self) -> usize {
        self.phones.last().map(PhoneSegment::end_frame).unwrap_or(0)
    }
}

/// Convert a phone tier and a word tier into frame-indexed segments.
///
/// Empty phone labels become `"sil"`; empty word intervals are pauses and
/// produce no word. Word boundaries must match phone boundaries to within one
/// frame shift.
pub fn align_to_utterance(
    doc: &TextGridDocument,
    phone_tier: &str,
    word_tier: &str,
    frame_shift_ms: f64,
) -> Result<UtteranceSkeleton> {
    if !(frame_shift_ms > 0.0) {
        return Err(Error::InvalidInput(format!("frame shift must be positive, got {frame_shift_ms}")));
    }
    let phones_t = doc
        .tier(phone_tier)
        .ok_or_else(|| Error::Alignment(format!("phone tier {phone_tier:?} not found")))?;
    let words_t =
        doc.tier(word_tier).ok_or_else(|| Error::Alignment(format!("word tier {word_tier:?} not found")))?;

    let mut phones: Vec<PhoneSegment> = Vec::with_capacity(phones_t.intervals.len());
    for iv in &phones_t.intervals {
        let start = match phones.last() {
            Some(p) => p.end_frame(),
            None => seconds_to_frame(iv.xmin, frame_shift_ms),
        };
        let end = seconds_to_frame(iv.xmax, frame_shift_ms).max(start + 1);
        let label = if iv.text.trim().is_empty() { "sil".to_string() } else { iv.text.trim().to_string() };
        phones.push(PhoneSegment { label, start_frame: start, num_frames: end - start });
    }

    let tol = frame_shift_ms / 1000.0 + 1e-9;
    let ivs = &phones_t.intervals;
    let mut words = Vec::new();
    let mut covered = vec![false; ivs.len()];
    for w in words_t.intervals.iter().filter(|w| !w.text.trim().is_empty()) {
        let name = w.text.trim();
        let closest = |key: &dyn Fn(&Interval) -> f64, target: f64| {
            ivs.iter()
                .enumerate()
                .map(|(i, iv)| (i, (key(iv) - target).abs()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
        };
        let (first, d0) = closest(&|iv| iv.xmin, w.xmin)
            .ok_or_else(|| Error::Alignment(format!("word {name:?} has no phones to align to")))?;
        let (last, d1) = closest(&|iv| iv.xmax, w.xmax).expect("non-empty tier");
        if d0 > tol || d1 > tol {
            return Err(Error::Alignment(format!(
                "word {name:?} [{}, {}] does not match phone boundaries within one frame",
                w.xmin, w.xmax
            )));
        }
        if last < first {
            return Err(Error::Alignment(format!("word {name:?} covers no phones")));
        }
        if covered[first..=last].iter().any(|&c| c) {
            return Err(Error::Alignment(format!("word {name:?} overlaps the previous word")));
        }
        covered[first..=last].iter_mut().for_each(|c| *c = true);
        words.push(WordSpan { text: name.to_string(), phone_start: first, phone_end: last + 1, emphasized: None });
    }
    for (i, p) in phones.iter().enumerate() {
        if !covered[i] && !crate::datamodel::is_silence_label(&p.label) {
            return Err(Error::Alignment(format!("phone {i} ({:?}) is not inside any word", p.label)));
        }
    }
    Ok(UtteranceSkeleton { phones, words })
}

/// Label every word from an annotation tier: a word is emphasized when the
/// tier interval containing its temporal midpoint has text other than empty
/// or `"0"`. Words the tier does not reach stay unannotated.
pub fn mark_emphasis(doc: &TextGridDocument, tier: &str, skeleton: &mut UtteranceSkeleton, frame_shift_ms: f64) -> Result<()> {
    let t = doc.tier(tier).ok_or_else(|| Error::Alignment(format!("emphasis tier {tier:?} not found")))?;
    for w in &mut skeleton.words {
        let start = skeleton.phones[w.phone_start].start_frame;
        let end = skeleton.phones[w.phone_end - 1].end_frame();
        let mid = (start + end) as f64 / 2.0 * frame_shift_ms / 1000.0;
        w.emphasized = t.intervals.iter().find(|iv| iv.xmin <= mid && mid < iv.xmax).map(|iv| {
            let text = iv.text.trim();
            !text.is_empty() && text != "0"
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const LONG: &str = r#"File type = "ooTextFile"
Object class = "TextGrid"

xmin = 0 
xmax = 0.25 
tiers? <exists> 
size = 2 
item []: 
    item [1]:
        class = "IntervalTier" 
        name = "phones" 
        xmin = 0 
        xmax = 0.25 
        intervals: size = 2 
        intervals [1]:
            xmin = 0 
            xmax = 0.1 
            text = "h" 
        intervals [2]:
            xmin = 0.1 
            xmax = 0.25 
            text = "i ""quoted""" 
    item [2]:
        class = "IntervalTier" 
        name = "words" 
        xmin = 0 
        xmax = 0.25 
        intervals: size = 1 
        intervals [1]:
            xmin = 0 
            xmax = 0.25 
            text = "hi" 
"#;

    const SHORT: &str = r#"File type = "ooTextFile"
Object class = "TextGrid"

0
0.25
<exists>
2
"IntervalTier"
"phones"
0
0.25
2
0
0.1
"h"
0.1
0.25
"i ""quoted"""
"IntervalTier"
"words"
0
0.25
1
0
0.25
"hi"
"#;

    #[test]
    fn minimal_long_form() {
        let text = "File type = \"ooTextFile\"\nObject class = \"TextGrid\"\n\nxmin = 0\nxmax = 1\ntiers? <exists>\nsize = 1\nitem []:\n    item [1]:\n        class = \"IntervalTier\"\n        name = \"w\"\n        xmin = 0\n        xmax = 1\n        intervals: size = 1\n        intervals [1]:\n            xmin = 0\n            xmax = 1\n            text = \"a\"\n";
        let doc = parse_textgrid(text).unwrap();
        assert_eq!(doc.tiers.len(), 1);
        assert_eq!(doc.tiers[0].intervals, vec![Interval { xmin: 0.0, xmax: 1.0, text: "a".into() }]);
    }

    #[test]
    fn long_and_short_forms_agree() {
        let a = parse_textgrid(LONG).unwrap();
        let b = parse_textgrid(SHORT).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.tiers[0].intervals[1].text, "i \"quoted\"");
        assert_eq!(serialize_textgrid(&a, TextGridForm::Long), LONG);
        assert_eq!(serialize_textgrid(&a, TextGridForm::Short), SHORT);
    }

    #[test]
    fn reversed_interval_names_its_line() {
        let bad = SHORT.replacen("0.1\n\"h\"", "-0.1\n\"h\"", 1);
        match parse_textgrid(&bad).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 14),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn point_tiers_and_bad_headers_are_rejected() {
        let point = SHORT.replacen("\"IntervalTier\"", "\"TextTier\"", 1);
        assert!(matches!(parse_textgrid(&point), Err(Error::Parse { line: 8, .. })));
        assert!(parse_textgrid("hello").is_err());
        assert!(parse_textgrid(&SHORT[..SHORT.len() - 10]).is_err());
    }

    #[test]
    fn overlapping_intervals_are_rejected() {
        let bad = SHORT.replacen("0.1\n0.25\n\"i", "0.05\n0.25\n\"i", 1);
        assert!(matches!(parse_textgrid(&bad), Err(Error::Parse { line: 16, .. })));
    }

    fn grid(phones: &[(f64, f64, &str)], words: &[(f64, f64, &str)]) -> TextGridDocument {
        let tier = |name: &str, ivs: &[(f64, f64, &str)]| IntervalTier {
            name: name.into(),
            xmin: 0.0,
            xmax: ivs.last().map(|i| i.1).unwrap_or(0.0),
            intervals: ivs.iter().map(|&(a, b, t)| Interval { xmin: a, xmax: b, text: t.into() }).collect(),
        };
        TextGridDocument { xmin: 0.0, xmax: 1.0, tiers: vec![tier("phones", phones), tier("words", words)] }
    }

    #[test]
    fn boundaries_round_to_frames() {
        let doc = grid(&[(0.0, 0.10, "a"), (0.10, 0.25, "b")], &[(0.0, 0.25, "ab")]);
        let sk = align_to_utterance(&doc, "phones", "words", 10.0).unwrap();
        assert_eq!((sk.phones[0].start_frame, sk.phones[0].num_frames), (0, 10));
        assert_eq!((sk.phones[1].start_frame, sk.phones[1].num_frames), (10, 15));
        assert_eq!(sk.words[0].phone_range(), 0..2);
    }

    #[test]
    fn empty_phone_tier_gives_empty_skeleton() {
        let doc = grid(&[], &[]);
        let sk = align_to_utterance(&doc, "phones", "words", 10.0).unwrap();
        assert_eq!(sk, UtteranceSkeleton::default());
    }

    #[test]
    fn word_boundary_within_one_frame_is_accepted() {
        let doc = grid(
            &[(0.0, 0.1, "a"), (0.1, 0.2, "b"), (0.2, 0.3, "c")],
            &[(0.0, 0.103, "x"), (0.103, 0.3, "y")],
        );
        let sk = align_to_utterance(&doc, "phones", "words", 10.0).unwrap();
        assert_eq!(sk.words[0].phone_range(), 0..1);
        assert_eq!(sk.words[1].phone_range(), 1..3);
    }

    #[test]
    fn word_boundary_mismatch_names_the_word() {
        let doc = grid(&[(0.0, 0.1, "a"), (0.1, 0.2, "b")], &[(0.0, 0.15, "x"), (0.15, 0.2, "y")]);
        match align_to_utterance(&doc, "phones", "words", 10.0).unwrap_err() {
            Error::Alignment(msg) => assert!(msg.contains("\"x\""), "{msg}"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn pauses_become_silence_phones() {
        let doc = grid(&[(0.0, 0.05, ""), (0.05, 0.2, "a")], &[(0.0, 0.05, ""), (0.05, 0.2, "x")]);
        let sk = align_to_utterance(&doc, "phones", "words", 10.0).unwrap();
        assert_eq!(sk.phones[0].label, "sil");
        assert_eq!(sk.words.len(), 1);
        assert_eq!(sk.words[0].phone_range(), 1..2);
    }

    #[test]
    fn emphasis_tier_labels_words() {
        let mut doc = grid(&[(0.0, 0.1, "a"), (0.1, 0.2, "b"), (0.2, 0.3, "c")], &[(0.0, 0.1, "x"), (0.1, 0.3, "y")]);
        doc.tiers.push(IntervalTier {
            name: "emph".into(),
            xmin: 0.0,
            xmax: 0.3,
            intervals: vec![
                Interval { xmin: 0.0, xmax: 0.12, text: "".into() },
                Interval { xmin: 0.12, xmax: 0.3, text: "1".into() },
            ],
        });
        let mut sk = align_to_utterance(&doc, "phones", "words", 10.0).unwrap();
        mark_emphasis(&doc, "emph", &mut sk, 10.0).unwrap();
        assert_eq!(sk.words.iter().map(|w| w.emphasized).collect::<Vec<_>>(), vec![Some(false), Some(true)]);
        assert!(mark_emphasis(&doc, "nope", &mut sk, 10.0).is_err());
    }
}
