//! Replacement of invalid elements by transitivity.

use super::outliers::median_of;
use super::paths::{ranked_paths, DEFAULT_WORK_BUDGET};
use super::ShiftMatrix;
use crate::{Error, Result};

/// Replaces every invalid element with the component-wise median of the sums
/// along up to `max_paths` all-valid paths.
///
/// Elements with the most usable paths are repaired first and then count as
/// valid, so elements that start with no usable path can still be reached
/// through earlier repairs. The returned matrix is fully valid.
pub fn repair_outliers(m: &ShiftMatrix, max_paths: usize) -> Result<ShiftMatrix> {
    if max_paths == 0 {
        return Err(Error::InvalidParameter("max_paths must be at least 1".into()));
    }
    let n = m.len();
    let mut out = m.clone();
    let mut pending = m.invalid_pairs();
    while !pending.is_empty() {
        let candidates: Vec<(usize, Vec<Vec<usize>>)> = pending
            .iter()
            .enumerate()
            .map(|(idx, &(i, k))| {
                let ok = |a: usize, b: usize| out.is_valid(a, b);
                (idx, ranked_paths(i, k, n, max_paths, &ok, DEFAULT_WORK_BUDGET))
            })
            .collect();
        // most paths first, earliest pair on ties
        let Some((idx, paths)) = candidates
            .into_iter()
            .filter(|(_, p)| !p.is_empty())
            .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)))
        else {
            return Err(Error::Unrepairable { pairs: pending });
        };
        let (i, k) = pending.remove(idx);
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for p in &paths {
            let (sx, sy) = p.windows(2).fold((0.0, 0.0), |(sx, sy), w| {
                let r = out.get(w[0], w[1]);
                (sx + r[0], sy + r[1])
            });
            xs.push(sx);
            ys.push(sy);
        }
        out.set(i, k, [median_of(&mut xs), median_of(&mut ys)]);
        out.set_valid(i, k, true);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shiftmatrix::{detect_outliers, OutlierMethod};

    fn positions(n: usize) -> Vec<[f64; 2]> {
        (0..n).map(|i| [(i as f64 * 0.9).sin() * 3.0, i as f64 * 0.37]).collect()
    }

    #[test]
    fn nothing_to_repair() {
        let m = ShiftMatrix::from_positions(&positions(6));
        assert_eq!(repair_outliers(&m, 5).unwrap(), m);
    }

    #[test]
    fn single_hop_repaired_exactly() {
        let ideal = ShiftMatrix::from_positions(&positions(8));
        let mut m = ideal.clone();
        let r = m.get(1, 6);
        m.set(1, 6, [r[0], r[1] + 8.0]);
        m.valid = detect_outliers(&m, OutlierMethod::Transitivity, 2.0, 5).unwrap();
        assert_eq!(m.invalid_pairs(), vec![(1, 6)]);
        let fixed = repair_outliers(&m, 5).unwrap();
        assert!(fixed.is_skew_symmetric());
        let (a, b) = (fixed.get(1, 6), ideal.get(1, 6));
        assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        assert!(fixed.valid.iter().all(|&v| v));
    }

    #[test]
    fn chained_repairs() {
        // frame 0 has no valid element left, so no path can leave it
        let ideal = ShiftMatrix::from_positions(&positions(4));
        let mut m = ideal.clone();
        for (i, j) in [(0, 1), (0, 2), (0, 3)] {
            m.set(i, j, [99.0, 99.0]);
            m.set_valid(i, j, false);
        }
        assert!(matches!(repair_outliers(&m, 5), Err(Error::Unrepairable { .. })));

        let mut m = ideal.clone();
        for (i, j) in [(0, 1), (1, 2)] {
            m.set(i, j, [99.0, 99.0]);
            m.set_valid(i, j, false);
        }
        let fixed = repair_outliers(&m, 5).unwrap();
        for (i, j) in [(0, 1), (1, 2)] {
            let (a, b) = (fixed.get(i, j), ideal.get(i, j));
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn unrepairable_lists_pairs() {
        let mut m = ShiftMatrix::from_positions(&positions(3));
        for (i, j) in [(0, 1), (0, 2)] {
            m.set_valid(i, j, false);
        }
        match repair_outliers(&m, 5) {
            Err(Error::Unrepairable { pairs }) => assert_eq!(pairs, vec![(0, 1), (0, 2)]),
            other => panic!("{other:?}"),
        }
    }
}
