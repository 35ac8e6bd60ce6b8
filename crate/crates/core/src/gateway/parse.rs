use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseRule {
    ExactOption,
    LeadingIndex,
    FuzzyPrefix,
    Failed,
}

/// A free-text response mapped onto a slot. `slot == None` is ABSTAIN.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedChoice {
    pub slot: Option<usize>,
    pub raw_text: String,
    pub parse_rule: ParseRule,
}

impl ParsedChoice {
    fn hit(slot: usize, raw: &str, rule: ParseRule) -> Self {
        Self {
            slot: Some(slot),
            raw_text: raw.to_string(),
            parse_rule: rule,
        }
    }
}

const EN_DASH: char = '\u{2013}';

fn strip_decoration(s: &str) -> &str {
    let s = s.trim();
    let s = s.trim_start_matches([EN_DASH, '-', '*']).trim();
    s.trim_matches(['"', '\'', '`']).trim_end_matches('.').trim()
}

/// Map a response onto one of `n` presented options.
///
/// Rules, in order: exact match of a presented option text; a leading letter
/// (`A`, `B.`, `(C)`) or 1-based number within range; a unique
/// case-insensitive prefix match in either direction. Anything else abstains.
pub fn parse_choice(raw: &str, options: &[String], n: usize) -> ParsedChoice {
    let n = n.min(options.len());
    let body = strip_decoration(raw);

    if !body.is_empty() {
        if let Some(slot) = options.iter().take(n).position(|o| o.trim() == body) {
            return ParsedChoice::hit(slot, raw, ParseRule::ExactOption);
        }
    }

    if let Some(slot) = leading_index(raw.trim(), n) {
        return ParsedChoice::hit(slot, raw, ParseRule::LeadingIndex);
    }

    let lower = body.to_lowercase();
    if lower.chars().count() >= 2 {
        let matches: Vec<usize> = options
            .iter()
            .take(n)
            .enumerate()
            .filter(|(_, o)| {
                let o = o.trim().to_lowercase();
                !o.is_empty() && (o.starts_with(&lower) || lower.starts_with(&o))
            })
            .map(|(i, _)| i)
            .collect();
        if let [only] = matches[..] {
            return ParsedChoice::hit(only, raw, ParseRule::FuzzyPrefix);
        }
    }

    ParsedChoice {
        slot: None,
        raw_text: raw.to_string(),
        parse_rule: ParseRule::Failed,
    }
}

fn leading_index(s: &str, n: usize) -> Option<usize> {
    let s = s.strip_prefix('(').unwrap_or(s);
    let mut chars = s.char_indices();
    let (_, first) = chars.next()?;
    if first.is_ascii_digit() {
        let end = s
            .char_indices()
            .find(|(_, c)| !c.is_ascii_digit())
            .map(|(i, _)| i)
            .unwrap_or(s.len());
        let rest = &s[end..];
        if !rest.is_empty() && !rest.starts_with([')', '.', ':', ' ', ',']) {
            return None;
        }
        let k: usize = s[..end].parse().ok()?;
        return (1..=n).contains(&k).then(|| k - 1);
    }
    if first.is_ascii_uppercase() {
        let rest = &s[first.len_utf8()..];
        if rest.is_empty() || rest.starts_with([')', '.', ':']) {
            let k = (first as u8 - b'A') as usize;
            return (k < n).then_some(k);
        }
    }
    None
}
