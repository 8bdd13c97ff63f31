//! Standard and probability-weighted edit distance, and lexicon search.

use std::io::BufRead;

use crate::decode::ProbTable;
use crate::error::{Error, Result};
use crate::maps::Charset;

/// Costs of the three edit operations when turning a prediction into a
/// candidate word. `position` indexes the predicted string (0-based).
pub trait CostModel {
    fn delete_cost(&self, position: usize, probs: &ProbTable) -> f64;
    fn insert_cost(&self, candidate: char) -> f64;
    fn replace_cost(&self, position: usize, candidate: char, probs: &ProbTable) -> f64;
}

/// Every operation costs 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnitCost;

impl CostModel for UnitCost {
    fn delete_cost(&self, _: usize, _: &ProbTable) -> f64 {
        1.0
    }
    fn insert_cost(&self, _: char) -> f64 {
        1.0
    }
    fn replace_cost(&self, _: usize, _: char, _: &ProbTable) -> f64 {
        1.0
    }
}

/// Costs derived from voted character probabilities:
///
/// * deleting position `i` costs the probability of the symbol decoded there,
/// * inserting costs 1,
/// * replacing position `i` with `b` costs `1 - p_i(b)`.
///
/// Results are clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct VotedCost;

impl CostModel for VotedCost {
    fn delete_cost(&self, position: usize, probs: &ProbTable) -> f64 {
        let e = &probs.entries[position];
        e.prob_of(e.symbol).clamp(0.0, 1.0)
    }
    fn insert_cost(&self, _: char) -> f64 {
        1.0
    }
    fn replace_cost(&self, position: usize, candidate: char, probs: &ProbTable) -> f64 {
        (1.0 - probs.entries[position].prob_of(candidate)).clamp(0.0, 1.0)
    }
}

/// Levenshtein distance over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance from `pred` to `candidate` with operation costs from
/// `costs`. Cells on the table border cost `max(i, j)`.
pub fn weighted_edit_distance(
    pred: &str,
    probs: &ProbTable,
    candidate: &str,
    costs: &dyn CostModel,
) -> Result<f64> {
    let a: Vec<char> = pred.chars().collect();
    let b: Vec<char> = candidate.chars().collect();
    if a.len() != probs.len() {
        return Err(Error::contract(format!(
            "prediction has {} symbols but {} probability entries",
            a.len(),
            probs.len()
        )));
    }
    let insert: Vec<f64> = b.iter().map(|&c| costs.insert_cost(c)).collect();
    let mut prev: Vec<f64> = (0..=b.len()).map(|j| j as f64).collect();
    let mut cur = vec![0.0; b.len() + 1];
    for i in 1..=a.len() {
        let delete = costs.delete_cost(i - 1, probs);
        cur[0] = i as f64;
        for j in 1..=b.len() {
            let replace = if a[i - 1] == b[j - 1] {
                0.0
            } else {
                costs.replace_cost(i - 1, b[j - 1], probs)
            };
            cur[j] = (prev[j] + delete)
                .min(cur[j - 1] + insert[j - 1])
                .min(prev[j - 1] + replace);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[b.len()])
}

/// Candidate words, case-folded and restricted to the charset.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lexicon {
    words: Vec<String>,
}

impl Lexicon {
    /// Folds and filters every word; words left empty are dropped.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            words: words
                .into_iter()
                .map(|w| Charset::filter(w.as_ref()))
                .filter(|w| !w.is_empty())
                .collect(),
        }
    }

    /// One word per line.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let lines = reader.lines().collect::<std::io::Result<Vec<_>>>()?;
        Ok(Self::new(lines))
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LexiconMatch {
    pub word: String,
    pub distance: f64,
}

/// Word with the smallest weighted distance to `pred`. Ties go to the smaller
/// standard edit distance, then to the earlier word. Returns `None` when the
/// best distance exceeds `max_distance`.
pub fn best_match(
    pred: &str,
    probs: &ProbTable,
    lexicon: &Lexicon,
    costs: &dyn CostModel,
    max_distance: Option<f64>,
) -> Result<Option<LexiconMatch>> {
    if lexicon.is_empty() {
        return Err(Error::contract("lexicon is empty"));
    }
    let mut best: Option<(f64, usize, usize)> = None;
    for (idx, word) in lexicon.words.iter().enumerate() {
        let d = weighted_edit_distance(pred, probs, word, costs)?;
        if best.is_some_and(|(bd, _, _)| d > bd) {
            continue;
        }
        let ed = edit_distance(pred, word);
        if best.is_none_or(|(bd, bed, _)| d < bd || ed < bed) {
            best = Some((d, ed, idx));
        }
    }
    let (distance, _, idx) = best.expect("lexicon is nonempty");
    if max_distance.is_some_and(|m| distance > m) {
        return Ok(None);
    }
    Ok(Some(LexiconMatch {
        word: lexicon.words[idx].clone(),
        distance,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::ProbEntry;
    use crate::maps::NUM_CHARS;

    fn entry(pairs: &[(char, f64)]) -> ProbEntry {
        let mut probs = [0.0; NUM_CHARS];
        for &(c, p) in pairs {
            probs[Charset::index_of(c).unwrap()] = p;
        }
        ProbEntry::from_probs(probs)
    }

    #[test]
    fn standard_distance_examples() {
        assert_eq!(edit_distance("", "abc"), 3);
        assert_eq!(edit_distance("abc", "abc"), 0);
        assert_eq!(edit_distance("kitten", "sitting"), 3);
    }

    #[test]
    fn unit_costs_reduce_to_standard() {
        let probs = ProbTable::one_hot("kitten").unwrap();
        let d = weighted_edit_distance("kitten", &probs, "sitting", &UnitCost).unwrap();
        assert_eq!(d, 3.0);
    }

    #[test]
    fn one_hot_self_distance_is_zero() {
        let probs = ProbTable::one_hot("spot").unwrap();
        assert_eq!(weighted_edit_distance("spot", &probs, "spot", &VotedCost).unwrap(), 0.0);
    }

    #[test]
    fn voted_costs_follow_probabilities() {
        let probs = ProbTable {
            entries: vec![entry(&[('a', 0.9)]), entry(&[('b', 0.6), ('c', 0.4)])],
        };
        // replacing b by c costs 1 - 0.4
        let d = weighted_edit_distance("ab", &probs, "ac", &VotedCost).unwrap();
        assert!((d - 0.6).abs() < 1e-12);
        assert!((VotedCost.delete_cost(1, &probs) - 0.6).abs() < 1e-12);
        assert_eq!(VotedCost.replace_cost(0, '#', &probs), 1.0);
    }

    #[test]
    fn length_mismatch_is_contract_error() {
        let probs = ProbTable::one_hot("ab").unwrap();
        assert!(weighted_edit_distance("abc", &probs, "abc", &UnitCost).is_err());
    }

    #[test]
    fn best_match_examples() {
        let lex = Lexicon::new(["hello", "world"]);
        let probs = ProbTable::one_hot("hallo").unwrap();
        let m = best_match("hallo", &probs, &lex, &UnitCost, None).unwrap().unwrap();
        assert_eq!((m.word.as_str(), m.distance), ("hello", 1.0));
        let probs = ProbTable::one_hot("world").unwrap();
        let m = best_match("world", &probs, &lex, &VotedCost, None).unwrap().unwrap();
        assert_eq!((m.word.as_str(), m.distance), ("world", 0.0));
    }

    #[test]
    fn best_match_threshold_and_empty_lexicon() {
        let lex = Lexicon::new(["zzzzzz"]);
        let probs = ProbTable::one_hot("ab").unwrap();
        assert!(best_match("ab", &probs, &lex, &UnitCost, Some(2.0)).unwrap().is_none());
        assert!(best_match("ab", &probs, &Lexicon::default(), &UnitCost, None).is_err());
    }

    #[test]
    fn ties_prefer_lexicon_order() {
        let lex = Lexicon::new(["cat", "bat"]);
        let probs = ProbTable::one_hot("xat").unwrap();
        let m = best_match("xat", &probs, &lex, &UnitCost, None).unwrap().unwrap();
        assert_eq!(m.word, "cat");
    }

    #[test]
    fn lexicon_folds_and_filters() {
        let lex = Lexicon::read("Hello\nit's\n\n!!\n".as_bytes()).unwrap();
        assert_eq!(lex.words(), &["hello".to_string(), "its".to_string()]);
    }
}
