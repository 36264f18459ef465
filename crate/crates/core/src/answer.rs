//! Answer normalization: mapping raw label strings onto canonical forms that
//! can be compared for exact-match accuracy.
//!
//! Math labels are arithmetic expressions (gold labels often are, e.g.
//! `( ( 6.0 + 7.0 ) + 3.0 )`) evaluated to a number; multiple-choice labels
//! are resolved against the instance's choice list; NLI labels must be one of
//! the three fixed classes; self-evaluation labels go through a small verdict
//! synonym table. Comparisons between numbers use [`MATH_TOLERANCE`].

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::types::{canonicalize_label, TaskInstance, TaskKind, Verdict};

/// Absolute tolerance for numeric label equality.
pub const MATH_TOLERANCE: f64 = 1e-6;

/// A label reduced to comparable form.
#[derive(Debug, Clone, PartialEq)]
pub enum CanonicalLabel {
    Text(String),
    Number(f64),
}

impl CanonicalLabel {
    /// Equality with numeric tolerance. Text and Number never match each other.
    #[must_use]
    pub fn matches(&self, other: &CanonicalLabel) -> bool {
        match (self, other) {
            (CanonicalLabel::Text(a), CanonicalLabel::Text(b)) => a == b,
            (CanonicalLabel::Number(a), CanonicalLabel::Number(b)) => {
                (a - b).abs() <= MATH_TOLERANCE
            }
            _ => false,
        }
    }

    /// Canonical string form; normalizing the rendered form yields the same
    /// label back (numbers print with shortest round-trip formatting).
    #[must_use]
    pub fn render(&self) -> String {
        match self {
            CanonicalLabel::Text(t) => t.clone(),
            CanonicalLabel::Number(n) => {
                let mut s = alloc::format!("{n}");
                // Keep NaN/inf unrepresentable rather than printing them.
                if !n.is_finite() {
                    s = "0".to_string();
                }
                s
            }
        }
    }
}

impl fmt::Display for CanonicalLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NormalizeError {
    UnparseableExpression { raw: String },
    NoChoiceMatch { raw: String },
    MissingChoices,
    UnknownNliLabel { raw: String },
    UnknownVerdict { raw: String },
    EmptyLabel,
}

impl fmt::Display for NormalizeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormalizeError::UnparseableExpression { raw } => {
                write!(f, "cannot evaluate {raw:?} as an arithmetic expression")
            }
            NormalizeError::NoChoiceMatch { raw } => {
                write!(f, "label {raw:?} matches none of the instance's choices")
            }
            NormalizeError::MissingChoices => {
                f.write_str("multiple-choice normalization needs the instance's choices")
            }
            NormalizeError::UnknownNliLabel { raw } => {
                write!(f, "label {raw:?} is not entailment/neutral/contradiction")
            }
            NormalizeError::UnknownVerdict { raw } => {
                write!(f, "label {raw:?} is not a recognized verdict")
            }
            NormalizeError::EmptyLabel => f.write_str("empty label"),
        }
    }
}

impl core::error::Error for NormalizeError {}

/// Reduce a raw label to canonical form under the rules of `task`.
pub fn normalize_answer(
    task: TaskKind,
    raw_label: &str,
    instance: &TaskInstance,
) -> Result<CanonicalLabel, NormalizeError> {
    let trimmed = raw_label.trim();
    if trimmed.is_empty() {
        return Err(NormalizeError::EmptyLabel);
    }
    match task {
        TaskKind::MathWordProblem => {
            let value = eval_math_expression(trimmed).ok_or_else(|| {
                NormalizeError::UnparseableExpression { raw: raw_label.to_string() }
            })?;
            Ok(CanonicalLabel::Number(value))
        }
        TaskKind::CommonsenseQa => {
            let choices = instance.choices.as_deref().ok_or(NormalizeError::MissingChoices)?;
            let canon = canonicalize_label(trimmed);
            // Exact canonical match first, then the longest choice contained in
            // the raw label (covers completions like "the answer is death and decay").
            for c in choices {
                if canonicalize_label(c) == canon {
                    return Ok(CanonicalLabel::Text(canonicalize_label(c)));
                }
            }
            let mut best: Option<String> = None;
            for c in choices {
                let cc = canonicalize_label(c);
                if !cc.is_empty() && canon.contains(cc.as_str()) {
                    let better = match &best {
                        Some(b) => cc.len() > b.len(),
                        None => true,
                    };
                    if better {
                        best = Some(cc);
                    }
                }
            }
            best.map(CanonicalLabel::Text)
                .ok_or_else(|| NormalizeError::NoChoiceMatch { raw: raw_label.to_string() })
        }
        TaskKind::Nli => {
            let canon = canonicalize_label(trimmed);
            match canon.as_str() {
                "entailment" | "neutral" | "contradiction" => Ok(CanonicalLabel::Text(canon)),
                _ => Err(NormalizeError::UnknownNliLabel { raw: raw_label.to_string() }),
            }
        }
        TaskKind::SelfEvaluation => {
            let lex = VerdictLexicon::default();
            match canonical_verdict(trimmed, &lex) {
                Some((v, _)) => Ok(CanonicalLabel::Text(v.as_str().to_string())),
                None => Err(NormalizeError::UnknownVerdict { raw: raw_label.to_string() }),
            }
        }
        TaskKind::Synthetic => Ok(CanonicalLabel::Text(canonicalize_label(trimmed))),
    }
}

/// Mapping from canonical verdict words to verdicts. The defaults cover the
/// literal verdicts plus common yes/no phrasings; deployments with an unusual
/// teacher can extend it.
#[derive(Debug, Clone)]
pub struct VerdictLexicon {
    entries: Vec<(String, Verdict)>,
}

impl Default for VerdictLexicon {
    fn default() -> Self {
        let mut lex = VerdictLexicon { entries: Vec::new() };
        for (word, v) in [
            ("correct", Verdict::Correct),
            ("incorrect", Verdict::Incorrect),
            ("yes", Verdict::Correct),
            ("no", Verdict::Incorrect),
            ("right", Verdict::Correct),
            ("wrong", Verdict::Incorrect),
        ] {
            lex.entries.push((word.to_string(), v));
        }
        lex
    }
}

impl VerdictLexicon {
    /// Extend the default table with additional synonym words.
    #[must_use]
    pub fn with_extra(extra: &[(&str, Verdict)]) -> Self {
        let mut lex = VerdictLexicon::default();
        for (word, v) in extra {
            lex.entries.push((canonicalize_label(word), *v));
        }
        lex
    }

    fn lookup(&self, canon: &str) -> Option<Verdict> {
        self.entries.iter().find(|(w, _)| w == canon).map(|(_, v)| *v)
    }
}

/// Map a raw verdict string to a [`Verdict`]. The second component reports
/// whether a synonym (anything other than the literal verdict words) was used;
/// synonym hits are also logged at debug level.
#[must_use]
pub fn canonical_verdict(raw: &str, lexicon: &VerdictLexicon) -> Option<(Verdict, bool)> {
    let mut canon = canonicalize_label(raw);
    while canon.ends_with('.') || canon.ends_with('!') {
        canon.pop();
    }
    let verdict = lexicon.lookup(&canon)?;
    let via_synonym = canon != "correct" && canon != "incorrect";
    if via_synonym {
        log::debug!("verdict synonym {canon:?} mapped to {verdict}");
    }
    Some((verdict, via_synonym))
}

/// Evaluate an arithmetic expression over `+ - * /` (ASCII or the typographic
/// `− × ÷`), parentheses, and decimal numbers. Returns `None` on any syntax
/// error, trailing garbage, or non-finite result. A single trailing period
/// (sentence punctuation) is tolerated.
#[must_use]
pub fn eval_math_expression(raw: &str) -> Option<f64> {
    let attempt = |s: &str| {
        let tokens = lex_math(s)?;
        let mut p = Parser { tokens: &tokens, pos: 0 };
        let v = p.expr()?;
        if p.pos == p.tokens.len() && v.is_finite() {
            Some(v)
        } else {
            None
        }
    };
    let trimmed = raw.trim();
    attempt(trimmed).or_else(|| {
        trimmed.strip_suffix('.').and_then(|s| attempt(s.trim_end()))
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum MathToken {
    Num(f64),
    Plus,
    Minus,
    Star,
    Slash,
    Open,
    Close,
}

fn lex_math(s: &str) -> Option<Vec<MathToken>> {
    let mut tokens = Vec::new();
    let chars: Vec<char> = s.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                tokens.push(MathToken::Plus);
                i += 1;
            }
            '-' | '\u{2212}' => {
                tokens.push(MathToken::Minus);
                i += 1;
            }
            '*' | '\u{00d7}' => {
                tokens.push(MathToken::Star);
                i += 1;
            }
            '/' | '\u{00f7}' => {
                tokens.push(MathToken::Slash);
                i += 1;
            }
            '(' => {
                tokens.push(MathToken::Open);
                i += 1;
            }
            ')' => {
                tokens.push(MathToken::Close);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                let mut seen_dot = false;
                let mut seen_digit = false;
                while i < chars.len() {
                    match chars[i] {
                        '0'..='9' => {
                            seen_digit = true;
                            i += 1;
                        }
                        '.' if !seen_dot => {
                            // A dot not followed by a digit is punctuation, not
                            // part of the number.
                            if i + 1 >= chars.len() || !chars[i + 1].is_ascii_digit() {
                                break;
                            }
                            seen_dot = true;
                            i += 1;
                        }
                        _ => break,
                    }
                }
                if !seen_digit {
                    return None;
                }
                let text: String = chars[start..i].iter().collect();
                tokens.push(MathToken::Num(text.parse().ok()?));
            }
            ',' => {
                // Thousands separators inside numbers ("1,000") are dropped
                // only when directly between digits.
                let between_digits = i > 0
                    && chars[i - 1].is_ascii_digit()
                    && i + 1 < chars.len()
                    && chars[i + 1].is_ascii_digit();
                if !between_digits {
                    return None;
                }
                // Splice: treat as continuation of the previous number.
                let prev = match tokens.pop()? {
                    MathToken::Num(n) => n,
                    _ => return None,
                };
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                if j == start {
                    return None;
                }
                let digits: String = chars[start..j].iter().collect();
                let combined = alloc::format!("{prev}{digits}");
                tokens.push(MathToken::Num(combined.parse().ok()?));
                i = j;
            }
            _ => return None,
        }
    }
    Some(tokens)
}

struct Parser<'a> {
    tokens: &'a [MathToken],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<MathToken> {
        self.tokens.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<MathToken> {
        let t = self.peek()?;
        self.pos += 1;
        Some(t)
    }

    fn expr(&mut self) -> Option<f64> {
        let mut acc = self.term()?;
        while let Some(op) = self.peek() {
            match op {
                MathToken::Plus => {
                    self.pos += 1;
                    acc += self.term()?;
                }
                MathToken::Minus => {
                    self.pos += 1;
                    acc -= self.term()?;
                }
                _ => break,
            }
        }
        Some(acc)
    }

    fn term(&mut self) -> Option<f64> {
        let mut acc = self.factor()?;
        while let Some(op) = self.peek() {
            match op {
                MathToken::Star => {
                    self.pos += 1;
                    acc *= self.factor()?;
                }
                MathToken::Slash => {
                    self.pos += 1;
                    acc /= self.factor()?;
                }
                _ => break,
            }
        }
        Some(acc)
    }

    fn factor(&mut self) -> Option<f64> {
        match self.bump()? {
            MathToken::Num(n) => Some(n),
            MathToken::Minus => Some(-self.factor()?),
            MathToken::Open => {
                let v = self.expr()?;
                match self.bump()? {
                    MathToken::Close => Some(v),
                    _ => None,
                }
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn math_inst() -> TaskInstance {
        TaskInstance {
            id: "m".to_string(),
            task: TaskKind::MathWordProblem,
            input_text: "x".to_string(),
            human_label: None,
            choices: None,
        }
    }

    #[test]
    fn expressions_evaluate() {
        assert_eq!(eval_math_expression("( ( 6.0 + 7.0 ) + 3.0 )"), Some(16.0));
        assert_eq!(eval_math_expression("(7 + 3)"), Some(10.0));
        assert_eq!(eval_math_expression("2 * 3 + 4"), Some(10.0));
        assert_eq!(eval_math_expression("2 + 3 * 4"), Some(14.0));
        assert_eq!(eval_math_expression("10 / 4"), Some(2.5));
        assert_eq!(eval_math_expression("-3"), Some(-3.0));
        assert_eq!(eval_math_expression("16."), Some(16.0));
        assert_eq!(eval_math_expression("4 \u{00d7} 5 \u{2212} 2"), Some(18.0));
        assert_eq!(eval_math_expression("1,000 + 1"), Some(1001.0));
        assert_eq!(eval_math_expression("abc"), None);
        assert_eq!(eval_math_expression("1 +"), None);
        assert_eq!(eval_math_expression("( 1"), None);
        assert_eq!(eval_math_expression("1 / 0"), None);
        assert_eq!(eval_math_expression(""), None);
    }

    #[test]
    fn math_labels_match_within_tolerance() {
        let inst = math_inst();
        let gold = normalize_answer(TaskKind::MathWordProblem, "( ( 6.0 + 7.0 ) + 3.0 )", &inst)
            .unwrap();
        let pred = normalize_answer(TaskKind::MathWordProblem, "16", &inst).unwrap();
        assert!(gold.matches(&pred));
        let off = normalize_answer(TaskKind::MathWordProblem, "16.0000005", &inst).unwrap();
        assert!(gold.matches(&off));
        let wrong = normalize_answer(TaskKind::MathWordProblem, "16.01", &inst).unwrap();
        assert!(!gold.matches(&wrong));
    }

    #[test]
    fn cqa_resolves_exact_then_substring() {
        let inst = TaskInstance {
            id: "q".to_string(),
            task: TaskKind::CommonsenseQa,
            input_text: "x".to_string(),
            human_label: None,
            choices: Some(vec![
                "change of color".to_string(),
                "death and decay".to_string(),
            ]),
        };
        let exact = normalize_answer(TaskKind::CommonsenseQa, "Death and Decay", &inst).unwrap();
        assert_eq!(exact, CanonicalLabel::Text("death and decay".to_string()));
        let sub =
            normalize_answer(TaskKind::CommonsenseQa, "the answer is death and decay", &inst)
                .unwrap();
        assert_eq!(sub, CanonicalLabel::Text("death and decay".to_string()));
        assert!(matches!(
            normalize_answer(TaskKind::CommonsenseQa, "rebirth", &inst),
            Err(NormalizeError::NoChoiceMatch { .. })
        ));
    }

    #[test]
    fn nli_is_strict() {
        let inst = TaskInstance {
            id: "n".to_string(),
            task: TaskKind::Nli,
            input_text: "x".to_string(),
            human_label: None,
            choices: None,
        };
        assert_eq!(
            normalize_answer(TaskKind::Nli, " Neutral ", &inst).unwrap(),
            CanonicalLabel::Text("neutral".to_string())
        );
        assert!(normalize_answer(TaskKind::Nli, "probably neutral", &inst).is_err());
    }

    #[test]
    fn verdict_synonyms_map() {
        let lex = VerdictLexicon::default();
        assert_eq!(canonical_verdict("Correct", &lex), Some((Verdict::Correct, false)));
        assert_eq!(canonical_verdict("yes.", &lex), Some((Verdict::Correct, true)));
        assert_eq!(canonical_verdict("WRONG", &lex), Some((Verdict::Incorrect, true)));
        assert_eq!(canonical_verdict("dunno", &lex), None);
        let extended = VerdictLexicon::with_extra(&[("valid", Verdict::Correct)]);
        assert_eq!(canonical_verdict("valid", &extended), Some((Verdict::Correct, true)));
    }

    #[test]
    fn render_round_trips() {
        let inst = math_inst();
        for raw in ["16", "2.5", "( 6.0 + 7.0 ) + 3.0", "-4"] {
            let a = normalize_answer(TaskKind::MathWordProblem, raw, &inst).unwrap();
            let b = normalize_answer(TaskKind::MathWordProblem, &a.render(), &inst).unwrap();
            assert!(a.matches(&b), "{raw} failed to round-trip");
        }
    }
}
