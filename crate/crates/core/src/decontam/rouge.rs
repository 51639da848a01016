use serde::{Deserialize, Serialize};

/// ROUGE-L F1 between a candidate and a reference token sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub value: f64,
    pub lcs_len: usize,
    pub ref_len: usize,
    pub cand_len: usize,
}

impl SimilarityScore {
    pub fn from_counts(lcs_len: usize, cand_len: usize, ref_len: usize) -> Self {
        SimilarityScore {
            value: f1(lcs_len, cand_len, ref_len),
            lcs_len,
            ref_len,
            cand_len,
        }
    }
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// `2PR / (P + R)` with `P = lcs / cand`, `R = lcs / ref`.
///
/// Evaluated as `2 lcs / (cand + ref)`, which is the same quantity with a
/// single rounding, so scores sitting exactly on a threshold compare exactly.
/// Two empty sequences are identical and score 1; one empty side scores 0.
pub fn f1(lcs: usize, cand_len: usize, ref_len: usize) -> f64 {
    if cand_len == 0 && ref_len == 0 {
        return 1.0;
    }
    if lcs == 0 {
        return 0.0;
    }
    (2 * lcs) as f64 / (cand_len + ref_len) as f64
}

/// Length of the longest common subsequence, two-row DP.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; short.len() + 1];
    let mut cur = vec![0usize; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

pub fn score_tokens<T: PartialEq>(candidate: &[T], reference: &[T]) -> SimilarityScore {
    SimilarityScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

pub fn rouge_l(candidate: &str, reference: &str) -> SimilarityScore {
    score_tokens(&tokenize(candidate), &tokenize(reference))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_disjoint() {
        assert_eq!(rouge_l("The nurse checks vitals", "the NURSE checks vitals!").value, 1.0);
        assert_eq!(rouge_l("alpha beta", "gamma delta").value, 0.0);
    }

    #[test]
    fn one_substitution() {
        let s = rouge_l("the nurse assesses the client", "the nurse monitors the client");
        assert_eq!((s.lcs_len, s.cand_len, s.ref_len), (4, 5, 5));
        assert_eq!(s.value, 0.8);
    }

    #[test]
    fn empty_sides() {
        assert_eq!(rouge_l("", "").value, 1.0);
        assert_eq!(rouge_l("", "x").value, 0.0);
        assert_eq!(rouge_l("?!", "x").value, 0.0);
    }

    #[test]
    fn tokenizer_splits_on_punctuation() {
        assert_eq!(tokenize("GI_GU asessment (e.g., 3-day)"), ["gi", "gu", "asessment", "e", "g", "3", "day"]);
    }

    #[test]
    fn lcs_small_cases() {
        assert_eq!(lcs_len(b"ABCBDAB", b"BDCABA"), 4);
        assert_eq!(lcs_len::<u8>(b"", b"abc"), 0);
    }
}
