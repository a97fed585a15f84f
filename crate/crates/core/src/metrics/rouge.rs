use std::collections::HashMap;
use std::hash::Hash;

use crate::scalar::Scalar;
use crate::text::Tokenizer;

/// Unigram F1 between two token sequences with multiset overlap. `None` if
/// either side is empty.
pub fn rouge1_f1_tokens<T: Scalar, S: Hash + Eq>(candidate: &[S], reference: &[S]) -> Option<T> {
    if candidate.is_empty() || reference.is_empty() {
        return None;
    }
    let mut counts: HashMap<&S, usize> = HashMap::new();
    for t in reference {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in candidate {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return Some(T::zero());
    }
    let o = T::from_count(overlap);
    let p = o / T::from_count(candidate.len());
    let r = o / T::from_count(reference.len());
    Some(T::two() * p * r / (p + r))
}

pub fn rouge1_f1<T: Scalar>(candidate: &str, reference: &str, tokenizer: &Tokenizer) -> Option<T> {
    rouge1_f1_tokens(
        &tokenizer.tokenize(candidate),
        &tokenizer.tokenize(reference),
    )
}
