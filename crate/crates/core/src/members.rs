//! Fixed-width bit sets naming subclasses of a base class by member index.

use std::cmp::Ordering;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Members {
    words: Box<[u64]>,
}

impl Members {
    pub fn empty(n: usize) -> Self {
        Members {
            words: vec![0; n.div_ceil(64)].into_boxed_slice(),
        }
    }

    pub fn full(n: usize) -> Self {
        let mut m = Self::empty(n);
        for i in 0..n {
            m.insert(i);
        }
        m
    }

    pub fn insert(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn and(&self, other: &Members) -> Members {
        Members {
            words: self.words.iter().zip(other.words.iter()).map(|(a, b)| a & b).collect(),
        }
    }

    pub fn or(&self, other: &Members) -> Members {
        Members {
            words: self.words.iter().zip(other.words.iter()).map(|(a, b)| a | b).collect(),
        }
    }

    /// Whether `self & other` is nonempty, without allocating.
    pub fn intersects(&self, other: &Members) -> bool {
        self.words.iter().zip(other.words.iter()).any(|(a, b)| a & b != 0)
    }

    pub fn is_subset(&self, other: &Members) -> bool {
        self.words.iter().zip(other.words.iter()).all(|(a, b)| a & !b == 0)
    }

    /// Member indices in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut rest = w;
            std::iter::from_fn(move || {
                if rest == 0 {
                    None
                } else {
                    let bit = rest.trailing_zeros() as usize;
                    rest &= rest - 1;
                    Some(wi * 64 + bit)
                }
            })
        })
    }

    /// Descending size, then lexicographic on the ascending index list. When
    /// the base class is canonically sorted this is the canonical class order.
    pub fn canonical_cmp(&self, other: &Members) -> Ordering {
        other.len().cmp(&self.len()).then_with(|| self.iter().cmp(other.iter()))
    }
}
