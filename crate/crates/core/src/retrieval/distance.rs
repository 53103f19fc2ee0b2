use std::cmp::Ordering;
use std::fmt;

use super::tokenize::match_tokenize;

/// Unit-cost edit distance between two token sequences.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    levenshtein_bounded(a, b, usize::MAX).expect("unbounded distance always completes")
}

/// Edit distance, or `None` as soon as it is certain to exceed `bound`.
///
/// Two-row DP over the shorter sequence. Every row minimum is a lower bound
/// on the final distance, so a row whose minimum exceeds `bound` ends the scan.
pub fn levenshtein_bounded<T: PartialEq>(a: &[T], b: &[T], bound: usize) -> Option<usize> {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if long.len() - short.len() > bound {
        return None;
    }
    if short.is_empty() {
        return Some(long.len());
    }
    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut cur = vec![0usize; short.len() + 1];
    for (i, x) in long.iter().enumerate() {
        cur[0] = i + 1;
        let mut row_min = cur[0];
        for (j, y) in short.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            let del = prev[j + 1] + 1;
            let ins = cur[j] + 1;
            let v = sub.min(del).min(ins);
            cur[j + 1] = v;
            row_min = row_min.min(v);
        }
        if row_min > bound {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let d = prev[short.len()];
    (d <= bound).then_some(d)
}

/// Fuzzy match score `1 - distance / max_len`, kept as the exact ratio so
/// that ranking never depends on float rounding.
#[derive(Clone, Copy, Debug)]
pub struct Fms {
    distance: u32,
    max_len: u32,
}

impl Fms {
    pub const EXACT: Fms = Fms {
        distance: 0,
        max_len: 1,
    };

    /// Two empty sequences count as identical.
    pub fn from_distance(distance: usize, max_len: usize) -> Self {
        assert!(distance <= max_len, "distance {distance} exceeds length {max_len}");
        if max_len == 0 {
            return Self::EXACT;
        }
        Fms {
            distance: distance as u32,
            max_len: max_len as u32,
        }
    }

    pub fn of_tokens<T: PartialEq>(a: &[T], b: &[T]) -> Self {
        Self::from_distance(levenshtein(a, b), a.len().max(b.len()))
    }

    pub fn distance(&self) -> usize {
        self.distance as usize
    }

    pub fn max_len(&self) -> usize {
        self.max_len as usize
    }

    /// Nearest double to the exact ratio, so `0.2` compares equal to `1/5`.
    pub fn value(&self) -> f64 {
        (self.max_len - self.distance) as f64 / self.max_len as f64
    }

    pub fn is_zero(&self) -> bool {
        self.distance == self.max_len
    }

    /// Largest distance a sequence pair with `max_len` may have and still
    /// score at least `self`.
    pub(crate) fn distance_budget(&self, max_len: usize) -> usize {
        (self.distance as u64 * max_len as u64 / self.max_len as u64) as usize
    }
}

impl PartialEq for Fms {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Fms {}

impl PartialOrd for Fms {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Fms {
    fn cmp(&self, other: &Self) -> Ordering {
        // 1 - a/b vs 1 - c/d  <=>  c*b vs a*d
        let lhs = other.distance as u64 * self.max_len as u64;
        let rhs = self.distance as u64 * other.max_len as u64;
        lhs.cmp(&rhs)
    }
}

impl fmt::Display for Fms {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

pub fn fms_exact(x: &str, s: &str) -> Fms {
    let a = match_tokenize(x);
    let b = match_tokenize(s);
    Fms::of_tokens(a.tokens(), b.tokens())
}

/// Word-level fuzzy match score of two sentences, in `[0, 1]`.
pub fn fms(x: &str, s: &str) -> f64 {
    fms_exact(x, s).value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Plain recursive definition; exponential, only for tiny inputs.
    fn ld_oracle(a: &[u8], b: &[u8]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = ld_oracle(ra, rb) + usize::from(x != y);
                sub.min(ld_oracle(ra, b) + 1).min(ld_oracle(a, rb) + 1)
            }
        }
    }

    #[test]
    fn one_substitution() {
        let a = ["i", "have", "an", "apple"];
        let b = ["i", "have", "an", "orange"];
        assert_eq!(levenshtein(&a, &b), 1);
    }

    #[test]
    fn against_empty_and_disjoint() {
        let s = ["a", "b", "c"];
        assert_eq!(levenshtein(&s, &[]), 3);
        assert_eq!(levenshtein(&[], &s), 3);
        assert_eq!(levenshtein(&s, &["x", "y", "z"]), 3);
    }

    #[test]
    fn fms_examples() {
        assert_eq!(fms("I have an apple.", "I have an orange."), 0.75);
        assert_eq!(fms("Das ist gut.", "Das ist gut."), 1.0);
        assert_eq!(fms("alpha beta", "gamma delta"), 0.0);
        assert_eq!(Fms::from_distance(4, 5).value(), 0.2);
        assert_eq!(Fms::from_distance(2, 5).value(), 0.6);
        assert_eq!(fms("", "123 !!"), 1.0);
        assert_eq!(fms("", "word"), 0.0);
    }

    #[test]
    fn fms_ordering_is_exact() {
        assert_eq!(Fms::from_distance(1, 4), Fms::from_distance(2, 8));
        assert!(Fms::from_distance(1, 4) > Fms::from_distance(1, 3));
        assert!(Fms::EXACT > Fms::from_distance(1, 1000));
        assert!(Fms::from_distance(3, 3).is_zero());
        assert_eq!(Fms::from_distance(0, 0), Fms::EXACT);
    }

    fn seq() -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec(0u8..4, 0..7)
    }

    proptest! {
        #[test]
        fn matches_recursive_oracle(a in seq(), b in seq()) {
            prop_assert_eq!(levenshtein(&a, &b), ld_oracle(&a, &b));
        }

        #[test]
        fn metric_laws(a in seq(), b in seq(), c in seq()) {
            let ab = levenshtein(&a, &b);
            prop_assert_eq!(ab, levenshtein(&b, &a));
            prop_assert_eq!(levenshtein(&a, &a), 0);
            prop_assert!(ab <= levenshtein(&a, &c) + levenshtein(&c, &b));
            prop_assert!(a.len().abs_diff(b.len()) <= ab);
            prop_assert!(ab <= a.len().max(b.len()));
        }

        #[test]
        fn bounded_agrees_with_plain(a in seq(), b in seq(), bound in 0usize..8) {
            let d = levenshtein(&a, &b);
            let expected = (d <= bound).then_some(d);
            prop_assert_eq!(levenshtein_bounded(&a, &b, bound), expected);
        }

        #[test]
        fn fms_range_and_symmetry(x in "[a-c ,.0-9]{0,20}", y in "[a-c ,.0-9]{0,20}") {
            let v = fms(&x, &y);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, fms(&y, &x));
            prop_assert_eq!(fms(&x, &x), 1.0);
        }

        #[test]
        fn distance_budget_is_tight(d in 0usize..10, m in 1usize..10, len in 0usize..12) {
            prop_assume!(d <= m);
            let kth = Fms::from_distance(d, m);
            let budget = kth.distance_budget(len);
            if len > 0 {
                if budget <= len {
                    prop_assert!(Fms::from_distance(budget, len) >= kth);
                }
                if budget < len {
                    prop_assert!(Fms::from_distance(budget + 1, len) < kth);
                }
            }
        }
    }
}
