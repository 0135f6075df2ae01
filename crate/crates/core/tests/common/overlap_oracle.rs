//! Independent reference for `phrase_overlap`: explores every order in which
//! tied longest shared phrases can be removed and keeps the best total.
//! Works on liveness bitmasks with a memo of visited states.

use std::collections::HashMap;

/// Full exploration, including every single-token removal order.
pub fn oracle_overlap_unpruned<T: PartialEq>(a: &[T], b: &[T]) -> u64 {
    run(a, b, false)
}

/// As [`oracle_overlap_unpruned`], but once the longest shared phrase has
/// length 1 the result is the multiset intersection of the live tokens:
/// each removal pairs two equal tokens, and no order can strand a symbol
/// while both sides still hold a copy of it.
pub fn oracle_overlap<T: PartialEq>(a: &[T], b: &[T]) -> u64 {
    run(a, b, true)
}

fn run<T: PartialEq>(a: &[T], b: &[T], count_singles: bool) -> u64 {
    assert!(a.len() < 32 && b.len() < 32);
    let mut o = Oracle {
        a,
        b,
        count_singles,
        memo: HashMap::new(),
    };
    o.search((1 << a.len()) - 1, (1 << b.len()) - 1)
}

struct Oracle<'a, T> {
    a: &'a [T],
    b: &'a [T],
    count_singles: bool,
    memo: HashMap<(u32, u32), u64>,
}

impl<T: PartialEq> Oracle<'_, T> {
    fn run_len(&self, la: u32, lb: u32, i: usize, j: usize) -> usize {
        let mut l = 0;
        while i + l < self.a.len()
            && j + l < self.b.len()
            && la >> (i + l) & 1 == 1
            && lb >> (j + l) & 1 == 1
            && self.a[i + l] == self.b[j + l]
        {
            l += 1;
        }
        l
    }

    fn singles(&self, la: u32, mut lb: u32) -> u64 {
        let mut n = 0;
        for i in (0..self.a.len()).filter(|i| la >> i & 1 == 1) {
            if let Some(j) = (0..self.b.len()).find(|&j| lb >> j & 1 == 1 && self.b[j] == self.a[i]) {
                lb &= !(1 << j);
                n += 1;
            }
        }
        n
    }

    fn search(&mut self, la: u32, lb: u32) -> u64 {
        if let Some(&v) = self.memo.get(&(la, lb)) {
            return v;
        }
        let mut longest = 0;
        for i in 0..self.a.len() {
            for j in 0..self.b.len() {
                longest = longest.max(self.run_len(la, lb, i, j));
            }
        }
        let best = if longest == 0 {
            0
        } else if longest == 1 && self.count_singles {
            self.singles(la, lb)
        } else {
            let mask = (1u32 << longest) - 1;
            let mut best = 0;
            for i in 0..self.a.len() {
                for j in 0..self.b.len() {
                    if self.run_len(la, lb, i, j) == longest {
                        let rest = self.search(la & !(mask << i), lb & !(mask << j));
                        best = best.max((longest * longest) as u64 + rest);
                    }
                }
            }
            best
        };
        self.memo.insert((la, lb), best);
        best
    }
}
