//! Ranked enumeration of transitivity paths.
//!
//! A path from `i` to `k` visits a non-empty subset of the other frames in
//! sorted order, so there are `2^(N-2) - 1` of them. They are ranked by
//!
//! 1. all intermediates strictly between `i` and `k` first,
//! 2. smallest maximum hop `|j2 - j1|`,
//! 3. fewest hops,
//! 4. lexicographic order of the intermediates.
//!
//! The enumerator walks the ranking lazily so only the first few paths are
//! ever built, even for long series.

use crate::{Error, Result};

/// Frame indices from start to end, endpoints included.
pub type Path = Vec<usize>;

/// Node expansions allowed per call to [`ranked_paths`].
pub const DEFAULT_WORK_BUDGET: usize = 200_000;

/// Number of distinct paths of two or more hops between two frames.
pub fn candidate_path_count(n: usize) -> u128 {
    if n < 3 {
        return 0;
    }
    (1u128 << (n - 2)) - 1
}

/// The `max_paths` best-ranked paths from `i` to `k`, assuming every
/// element is valid.
pub fn select_paths(i: usize, k: usize, n: usize, max_paths: usize) -> Result<Vec<Path>> {
    if i == k || i >= n || k >= n {
        return Err(Error::InvalidParameter(format!("invalid path endpoints ({i}, {k}) for N = {n}")));
    }
    if max_paths == 0 {
        return Err(Error::InvalidParameter("max_paths must be at least 1".into()));
    }
    Ok(ranked_paths(i, k, n, max_paths, &|_, _| true, DEFAULT_WORK_BUDGET))
}

/// The `max_paths` best-ranked paths from `i` to `k` whose every hop passes
/// `valid`. `valid` must be symmetric. Enumeration stops early once `budget`
/// search nodes have been expanded.
pub fn ranked_paths(
    i: usize,
    k: usize,
    n: usize,
    max_paths: usize,
    valid: &dyn Fn(usize, usize) -> bool,
    budget: usize,
) -> Vec<Path> {
    if i > k {
        let mut paths = ranked_paths(k, i, n, max_paths, valid, budget);
        for p in &mut paths {
            p.reverse();
        }
        return paths;
    }
    let mut search = Search {
        start: i,
        end: k,
        n,
        valid,
        budget,
        out: Vec::new(),
        want: max_paths,
        path: vec![i],
    };
    let span = k - i;
    // intermediates inside the interval
    'inner: for h in 1..span {
        for hops in span.div_ceil(h)..=span {
            search.run(h, hops, true);
            if search.done() {
                break 'inner;
            }
        }
    }
    if !search.done() {
        'outer: for h in 1..n {
            for hops in 2..n {
                search.run(h, hops, false);
                if search.done() {
                    break 'outer;
                }
            }
        }
    }
    search.out
}

struct Search<'a> {
    start: usize,
    end: usize,
    n: usize,
    valid: &'a dyn Fn(usize, usize) -> bool,
    budget: usize,
    out: Vec<Path>,
    want: usize,
    path: Vec<usize>,
}

impl Search<'_> {
    fn done(&self) -> bool {
        self.out.len() >= self.want || self.budget == 0
    }

    fn run(&mut self, h: usize, hops: usize, inside: bool) {
        self.path.truncate(1);
        if inside {
            self.inside(h, hops, false);
        } else {
            self.outside(h, hops, false, false);
        }
    }

    // Monotone paths within (start, end); `hit` records whether a hop of
    // exactly `h` has been taken.
    fn inside(&mut self, h: usize, hops_left: usize, hit: bool) {
        if self.done() {
            return;
        }
        self.budget -= 1;
        let prev = *self.path.last().unwrap();
        if hops_left == 1 {
            let d = self.end - prev;
            if self.path.len() > 1 && d <= h && (hit || d == h) && (self.valid)(prev, self.end) {
                self.emit();
            }
            return;
        }
        let r = hops_left - 1;
        for j in prev + 1..=(prev + h).min(self.end - 1) {
            let rest = self.end - j;
            if rest < r || rest > r * h {
                continue;
            }
            if !(self.valid)(prev, j) {
                continue;
            }
            self.path.push(j);
            self.inside(h, r, hit || j - prev == h);
            self.path.pop();
            if self.done() {
                return;
            }
        }
    }

    // Ascending intermediates anywhere, at least one outside [start, end].
    fn outside(&mut self, h: usize, hops_left: usize, hit: bool, escaped: bool) {
        if self.done() {
            return;
        }
        self.budget -= 1;
        let prev = *self.path.last().unwrap();
        if hops_left == 1 {
            let d = prev.abs_diff(self.end);
            if escaped && self.path.len() > 1 && d <= h && (hit || d == h) && (self.valid)(prev, self.end) {
                self.emit();
            }
            return;
        }
        let r = hops_left - 1;
        let first = if self.path.len() > 1 { prev + 1 } else { 0 };
        let lo = first.max(prev.saturating_sub(h));
        let hi = (prev + h).min(self.n - 1);
        for j in lo..=hi {
            if j == self.start || j == self.end {
                continue;
            }
            if j.abs_diff(self.end) > r * h {
                continue;
            }
            // r - 1 further intermediates must fit above j
            let above = (j + 1..self.n).filter(|&x| x != self.start && x != self.end).count();
            if above < r - 1 {
                continue;
            }
            if !(self.valid)(prev, j) {
                continue;
            }
            self.path.push(j);
            let out = j < self.start || j > self.end;
            self.outside(h, r, hit || prev.abs_diff(j) == h, escaped || out);
            self.path.pop();
            if self.done() {
                return;
            }
        }
    }

    fn emit(&mut self) {
        let mut p = self.path.clone();
        p.push(self.end);
        self.out.push(p);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent oracle: enumerate every subset, sort by the ranking key.
    fn brute_force(i: usize, k: usize, n: usize) -> Vec<Path> {
        let others: Vec<usize> = (0..n).filter(|&x| x != i && x != k).collect();
        let (lo, hi) = (i.min(k), i.max(k));
        let mut all = Vec::new();
        for bits in 1u32..(1 << others.len()) {
            let inter: Vec<usize> = others
                .iter()
                .enumerate()
                .filter(|(b, _)| bits >> b & 1 == 1)
                .map(|(_, &x)| x)
                .collect();
            let mut path = vec![i];
            path.extend(&inter);
            path.push(k);
            let outside = inter.iter().any(|&x| x < lo || x > hi);
            let max_hop = path.windows(2).map(|w| w[0].abs_diff(w[1])).max().unwrap();
            all.push(((outside, max_hop, path.len(), inter), path));
        }
        all.sort();
        all.into_iter().map(|(_, p)| p).collect()
    }

    #[test]
    fn three_frames_have_one_path() {
        assert_eq!(select_paths(0, 2, 3, 5).unwrap(), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn six_frames_top_three() {
        assert_eq!(
            select_paths(0, 5, 6, 3).unwrap(),
            vec![vec![0, 1, 2, 3, 4, 5], vec![0, 1, 3, 5], vec![0, 2, 3, 5]]
        );
    }

    #[test]
    fn candidate_counts() {
        assert_eq!(candidate_path_count(2), 0);
        assert_eq!(candidate_path_count(3), 1);
        assert_eq!(candidate_path_count(6), 15);
        assert_eq!(candidate_path_count(40), (1u128 << 38) - 1);
    }

    #[test]
    fn full_enumeration_matches_oracle() {
        for n in 3..=8 {
            for i in 0..n {
                for k in i + 1..n {
                    let got = ranked_paths(i, k, n, usize::MAX, &|_, _| true, usize::MAX);
                    let want = brute_force(i, k, n);
                    assert_eq!(want.len() as u128, candidate_path_count(n));
                    assert_eq!(got, want, "i={i} k={k} n={n}");
                }
            }
        }
    }

    #[test]
    fn reverse_direction_reverses_paths() {
        let fwd = select_paths(1, 6, 9, 5).unwrap();
        let back = select_paths(6, 1, 9, 5).unwrap();
        for (f, b) in fwd.iter().zip(&back) {
            assert_eq!(f.iter().rev().copied().collect::<Vec<_>>(), *b);
        }
    }

    #[test]
    fn adjacent_frames_route_outside() {
        let p = select_paths(3, 4, 8, 2).unwrap();
        assert_eq!(p, vec![vec![3, 2, 4], vec![3, 5, 4]]);
    }

    #[test]
    fn invalid_hops_are_avoided() {
        let valid = |a: usize, b: usize| !matches!((a.min(b), a.max(b)), (1, 2) | (2, 3));
        let p = ranked_paths(0, 4, 6, 4, &valid, DEFAULT_WORK_BUDGET);
        assert!(!p.is_empty());
        for path in &p {
            assert!(path.windows(2).all(|w| valid(w[0], w[1])));
        }
        assert_eq!(p[0], vec![0, 2, 4]);
    }

    #[test]
    fn long_series_is_fast() {
        let p = select_paths(0, 39, 40, 5).unwrap();
        assert_eq!(p.len(), 5);
        assert_eq!(p[0], (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn bad_arguments() {
        assert!(select_paths(2, 2, 5, 5).is_err());
        assert!(select_paths(0, 5, 5, 5).is_err());
        assert!(select_paths(0, 3, 5, 0).is_err());
    }
}
