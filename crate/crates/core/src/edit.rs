//! Unit-cost Levenshtein alignment with a deterministic backtrace.

/// One step of an alignment turning `reference` into `hypothesis`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    /// Indices into (reference, hypothesis); equal symbols.
    Match(usize, usize),
    Substitute(usize, usize),
    /// Reference symbol with no hypothesis counterpart.
    Delete(usize),
    /// Hypothesis symbol with no reference counterpart.
    Insert(usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EditCounts {
    pub matches: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

fn table<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Vec<Vec<usize>> {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d
}

pub fn distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    // two-row variant, no backtrace needed
    let m = hypothesis.len();
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// Minimum-cost alignment in left-to-right order.
///
/// Backtrace preference on ties: diagonal (match/substitute), then
/// deletion, then insertion.
pub fn align<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Vec<EditOp> {
    let d = table(reference, hypothesis);
    let (mut i, mut j) = (reference.len(), hypothesis.len());
    let mut ops = Vec::with_capacity(i.max(j));
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if d[i][j] == d[i - 1][j - 1] + usize::from(!same) {
                ops.push(if same {
                    EditOp::Match(i - 1, j - 1)
                } else {
                    EditOp::Substitute(i - 1, j - 1)
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ops.push(EditOp::Delete(i - 1));
            i -= 1;
        } else {
            ops.push(EditOp::Insert(j - 1));
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

pub fn counts(ops: &[EditOp]) -> EditCounts {
    let mut c = EditCounts::default();
    for op in ops {
        match op {
            EditOp::Match(..) => c.matches += 1,
            EditOp::Substitute(..) => c.substitutions += 1,
            EditOp::Delete(_) => c.deletions += 1,
            EditOp::Insert(_) => c.insertions += 1,
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn classic_pairs() {
        assert_eq!(distance(b"kitten", b"sitting"), 3);
        assert_eq!(distance::<u8>(b"", b"abc"), 3);
        assert_eq!(distance::<u8>(b"abc", b""), 3);
        let ops = align(b"ab", b"b");
        assert_eq!(ops, vec![EditOp::Delete(0), EditOp::Match(1, 0)]);
    }

    proptest! {
        #[test]
        fn backtrace_is_consistent(a in prop::collection::vec(0u8..4, 0..10),
                                   b in prop::collection::vec(0u8..4, 0..10)) {
            let ops = align(&a, &b);
            let c = counts(&ops);
            prop_assert_eq!(c.errors(), distance(&a, &b));
            prop_assert_eq!(distance(&a, &b), distance(&b, &a));
            prop_assert_eq!(c.matches + c.substitutions + c.deletions, a.len());
            prop_assert_eq!(c.matches + c.substitutions + c.insertions, b.len());
        }
    }
}
