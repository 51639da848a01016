//! Answer extraction from free-text model replies.
//!
//! Patterns are tried in order and the first one that fires decides:
//!
//! 1. `Answer:` followed by an optional `(` and a letter or 1-based option
//!    number. When several `Answer:` markers appear, the last one is used,
//!    since replies that reason first put the final answer last.
//! 2. The first standalone capital letter followed by `)`, `.` or `:`.
//! 3. The whole reply equal to one of the choice texts (case-insensitive).
//!
//! A pattern that fires with an option outside the choice range yields `None`.

use std::sync::OnceLock;

use regex::Regex;

fn answer_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\banswer\b[\s*_]*(?:is)?[\s*_]*[:：][\s*_]*(?:option\s*)?\(?\s*([a-z]|\d{1,2})\s*(?:[^a-z0-9]|$)")
            .unwrap()
    })
}

fn letter_clause() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|[^A-Za-z0-9])([A-Z])[).:]").unwrap())
}

/// Extracts a 0-based option index from `text` for a question with `n_choices` options.
pub fn extract_answer(text: &str, n_choices: usize) -> Option<usize> {
    extract(text, n_choices, None)
}

/// Like [`extract_answer`], additionally matching the reply against choice texts.
pub fn extract_answer_with_choices(text: &str, choices: &[String]) -> Option<usize> {
    extract(text, choices.len(), Some(choices))
}

fn extract(text: &str, n_choices: usize, choices: Option<&[String]>) -> Option<usize> {
    let in_range = |i: usize| (i < n_choices).then_some(i);

    if let Some(caps) = answer_marker().captures_iter(text).last() {
        let token = &caps[1];
        let index = match token.parse::<usize>() {
            Ok(0) => return None,
            Ok(n) => n - 1,
            Err(_) => letter_index(token.chars().next()?)?,
        };
        return in_range(index);
    }

    if let Some(caps) = letter_clause().captures(text) {
        return in_range(letter_index(caps[1].chars().next()?)?);
    }

    let choices = choices?;
    let reply = normalize(text);
    if reply.is_empty() {
        return None;
    }
    choices.iter().position(|c| normalize(c) == reply)
}

fn letter_index(c: char) -> Option<usize> {
    let upper = c.to_ascii_uppercase();
    upper
        .is_ascii_uppercase()
        .then(|| (upper as u8 - b'A') as usize)
}

fn normalize(s: &str) -> String {
    s.trim().trim_end_matches('.').trim().to_lowercase()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moderator_final_decision() {
        assert_eq!(
            extract_answer("Answer: (B) The type and exact composition of the chemical.", 4),
            Some(1)
        );
    }

    #[test]
    fn out_of_range_letter() {
        assert_eq!(extract_answer("the answer is E", 4), None);
        assert_eq!(extract_answer("Answer: E", 4), None);
        assert_eq!(extract_answer("Answer: (E)", 5), Some(4));
    }

    #[test]
    fn parenthesised_letter_in_prose() {
        assert_eq!(extract_answer("I believe (C) is correct because...", 4), Some(2));
    }

    #[test]
    fn answer_marker_variants() {
        assert_eq!(extract_answer("answer: d", 4), Some(3));
        assert_eq!(extract_answer("**Answer:** (A)", 4), Some(0));
        assert_eq!(extract_answer("The answer is: C.", 4), Some(2));
        assert_eq!(extract_answer("Answer: 2", 4), Some(1));
        assert_eq!(extract_answer("Answer: 0", 4), None);
        // "Because" is a word, not a letter.
        assert_eq!(extract_answer("Answer: Because it is safest, (D).", 4), Some(3));
    }

    #[test]
    fn last_answer_marker_wins() {
        let trace = "Maybe Answer: (A) at first glance...\nOn reflection the rubra stage fits.\nAnswer: (C)";
        assert_eq!(extract_answer(trace, 4), Some(2));
    }

    #[test]
    fn marker_beats_earlier_letters() {
        let moderator = "**Emergency Room Nurse**: (B) The type.\n**Ophthalmic Nurse**: (A) Pain.\nFinal Decision:\nAnswer: (B) The type and exact composition of the chemical.";
        assert_eq!(extract_answer(moderator, 4), Some(1));
    }

    #[test]
    fn choice_text_match() {
        let choices: Vec<String> = ["Lochia rubra", "Lochia serosa", "Lochia alba", "Lochia sanguineous"]
            .map(String::from)
            .to_vec();
        assert_eq!(extract_answer_with_choices("  lochia SEROSA. ", &choices), Some(1));
        assert_eq!(extract_answer_with_choices("lochia", &choices), None);
        assert_eq!(extract_answer("lochia serosa", 4), None);
    }

    #[test]
    fn nothing_to_extract() {
        assert_eq!(extract_answer("", 4), None);
        assert_eq!(extract_answer("I am not sure.", 4), None);
        assert_eq!(extract_answer("garbage output ###", 4), None);
    }
}
