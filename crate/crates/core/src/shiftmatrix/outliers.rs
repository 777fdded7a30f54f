//! Outlier detection and frame exclusion.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::paths::{ranked_paths, Path, DEFAULT_WORK_BUDGET};
use super::ShiftMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutlierMethod {
    /// Disagreement with sums along other paths between the same frames.
    #[default]
    Transitivity,
    /// Distance from the median of the valid 8-neighbours in the matrix.
    Neighbor,
    /// Residual from a cubic polynomial surface fitted to each matrix.
    BackgroundFit,
}

/// 2 px, or half the shortest lattice-plane spacing when a reciprocal basis
/// (cycles/px) is known, whichever is smaller.
pub fn default_threshold(basis: Option<&[[f64; 2]]>) -> f64 {
    let spacing = basis
        .unwrap_or(&[])
        .iter()
        .map(|b| b[0].hypot(b[1]))
        .filter(|&k| k > 0.0)
        .map(|k| 0.5 / k)
        .fold(f64::INFINITY, f64::min);
    spacing.min(2.0)
}

fn path_sum(m: &ShiftMatrix, path: &[usize]) -> [f64; 2] {
    path.windows(2).fold([0.0, 0.0], |acc, w| {
        let r = m.get(w[0], w[1]);
        [acc[0] + r[0], acc[1] + r[1]]
    })
}

/// Mean Euclidean distance between `R_ik` and the sums along `paths`,
/// ignoring paths through invalid elements. `None` when no path is usable.
pub fn transitivity_error(m: &ShiftMatrix, i: usize, k: usize, paths: &[Path]) -> Option<f64> {
    let direct = m.get(i, k);
    let (mut total, mut count) = (0.0, 0usize);
    for p in paths {
        if p.windows(2).all(|w| m.is_valid(w[0], w[1])) {
            let s = path_sum(m, p);
            total += (direct[0] - s[0]).hypot(direct[1] - s[1]);
            count += 1;
        }
    }
    (count > 0).then(|| total / count as f64)
}

/// Validity mask after outlier detection. Elements already invalid stay
/// invalid; the mask is symmetric.
///
/// The transitivity method flags one element at a time and re-scores only
/// the elements whose paths ran through it. A hop corrupts the paths of
/// other elements too, and the top-ranked paths of long-span elements share
/// most of their hops, so the victims of one bad element look as wrong as
/// the element itself. Each step therefore flags the element that sits on
/// the most inconsistent cycles rather than the one with the largest error.
/// Flagged elements whose error falls back within threshold once the
/// remaining outliers are gone are re-admitted. A frame left with most of
/// its row flagged is re-anchored on the largest mutually consistent part
/// of that row, and the procedure runs once more.
pub fn detect_outliers(m: &ShiftMatrix, method: OutlierMethod, threshold: f64, max_paths: usize) -> Result<Array2<bool>> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(Error::InvalidParameter(format!("outlier threshold must be > 0, got {threshold}")));
    }
    if max_paths == 0 {
        return Err(Error::InvalidParameter("max_paths must be at least 1".into()));
    }
    let mut valid = match method {
        OutlierMethod::Transitivity => transitivity_mask(m, threshold, max_paths),
        OutlierMethod::Neighbor => neighbor_mask(m, threshold),
        OutlierMethod::BackgroundFit => background_mask(m, threshold),
    };
    let n = m.len();
    for i in 0..n {
        valid[[i, i]] = true;
        for j in i + 1..n {
            let v = valid[[i, j]] && valid[[j, i]];
            valid[[i, j]] = v;
            valid[[j, i]] = v;
        }
    }
    Ok(valid)
}

struct Scorer<'a> {
    m: &'a ShiftMatrix,
    max_paths: usize,
    threshold: f64,
    pairs: Vec<(usize, usize)>,
    error: Vec<Option<f64>>,
    // paths of each element whose sum misses the direct value by > threshold
    broken: Vec<Vec<Path>>,
    users: HashMap<(usize, usize), Vec<usize>>,
}

impl Scorer<'_> {
    fn score(&mut self, p: usize, valid: &Array2<bool>) {
        let (i, k) = self.pairs[p];
        let ok = |a: usize, b: usize| valid[[a, b]];
        let paths = ranked_paths(i, k, self.m.len(), self.max_paths, &ok, DEFAULT_WORK_BUDGET);
        let direct = self.m.get(i, k);
        let mut broken = Vec::new();
        for path in paths.iter() {
            for w in path.windows(2) {
                self.users.entry((w[0].min(w[1]), w[0].max(w[1]))).or_default().push(p);
            }
            let s = path_sum(self.m, path);
            if (direct[0] - s[0]).hypot(direct[1] - s[1]) > self.threshold {
                broken.push(path.clone());
            }
        }
        self.error[p] = transitivity_error(self.m, i, k, &paths);
        self.broken[p] = broken;
    }

    /// Among the valid elements above threshold, the one lying on the most
    /// inconsistent cycles, each cycle being an element together with one of
    /// its broken paths.
    fn most_blamed(&self, valid: &Array2<bool>) -> Option<usize> {
        let n = self.m.len();
        let mut blame = Array2::<u32>::zeros((n, n));
        for (p, broken) in self.broken.iter().enumerate() {
            let (i, k) = self.pairs[p];
            if !valid[[i, k]] {
                continue;
            }
            for path in broken {
                blame[[i, k]] += 1;
                for w in path.windows(2) {
                    blame[[w[0].min(w[1]), w[0].max(w[1])]] += 1;
                }
            }
        }
        let err = |p: usize| self.error[p].unwrap_or(0.0);
        (0..self.pairs.len())
            .filter(|&p| valid[[self.pairs[p].0, self.pairs[p].1]])
            .filter(|&p| err(p) > self.threshold)
            .max_by(|&a, &b| {
                let (ba, bb) = (blame[[self.pairs[a].0, self.pairs[a].1]], blame[[self.pairs[b].0, self.pairs[b].1]]);
                ba.cmp(&bb).then(err(a).total_cmp(&err(b))).then(b.cmp(&a))
            })
    }
}

fn transitivity_mask(m: &ShiftMatrix, threshold: f64, max_paths: usize) -> Array2<bool> {
    let n = m.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |k| (i, k))).collect();
    let count = pairs.len();
    let mut valid = m.valid.clone();
    let mut flagged = vec![false; count];
    let mut sc = Scorer {
        m,
        max_paths,
        threshold,
        pairs,
        error: vec![None; count],
        broken: vec![Vec::new(); count],
        users: HashMap::new(),
    };

    settle(&mut sc, &mut valid, &mut flagged);
    if rescue_rows(m, threshold, &mut valid, &mut flagged) {
        settle(&mut sc, &mut valid, &mut flagged);
    }
    valid
}

/// Flags the most blamed element until every valid element is within
/// threshold, then re-admits flagged elements that are consistent again.
fn settle(sc: &mut Scorer<'_>, valid: &mut Array2<bool>, flagged: &mut [bool]) {
    let (n, count, threshold, max_paths, m) = (sc.m.len(), sc.pairs.len(), sc.threshold, sc.max_paths, sc.m);
    for _round in 0..10 {
        sc.users.clear();
        for p in 0..count {
            sc.score(p, valid);
        }
        loop {
            let over = (0..count).any(|p| {
                let (i, k) = sc.pairs[p];
                valid[[i, k]] && matches!(sc.error[p], Some(e) if e > threshold)
            });
            if !over {
                break;
            }
            let Some(p) = sc.most_blamed(valid) else { break };
            let (i, k) = sc.pairs[p];
            valid[[i, k]] = false;
            valid[[k, i]] = false;
            flagged[p] = true;
            let mut affected = sc.users.remove(&(i, k)).unwrap_or_default();
            affected.sort_unstable();
            affected.dedup();
            for q in affected {
                sc.score(q, valid);
            }
        }

        let mut readmitted = false;
        for p in 0..count {
            let (i, k) = sc.pairs[p];
            if !flagged[p] || valid[[i, k]] {
                continue;
            }
            let ok = |a: usize, b: usize| valid[[a, b]];
            let paths = ranked_paths(i, k, n, max_paths, &ok, DEFAULT_WORK_BUDGET);
            if matches!(transitivity_error(m, i, k, &paths), Some(e) if e <= threshold) {
                valid[[i, k]] = true;
                valid[[k, i]] = true;
                flagged[p] = false;
                readmitted = true;
            }
        }
        if !readmitted {
            break;
        }
    }
}

/// Re-anchors frames whose row is mostly flagged. The row elements of a
/// frame `a` are compared among themselves through valid off-row elements:
/// `(a, k)` and `(a, l)` agree when `R_ak + R_kl` is within threshold of
/// `R_al`. When more than half of the row agrees with one element, that
/// group becomes the valid part of the row and the rest is flagged.
fn rescue_rows(m: &ShiftMatrix, threshold: f64, valid: &mut Array2<bool>, flagged: &mut [bool]) -> bool {
    let n = m.len();
    let index = |i: usize, k: usize| {
        let (i, k) = (i.min(k), i.max(k));
        i * (2 * n - i - 1) / 2 + (k - i - 1)
    };
    let mut changed = false;
    for a in 0..n {
        let others: Vec<usize> = (0..n).filter(|&k| k != a && m.valid[[a, k]]).collect();
        let kept = others.iter().filter(|&&k| valid[[a, k]]).count();
        if 2 * kept >= others.len() {
            continue;
        }
        let agree = |k: usize, l: usize| {
            if !valid[[k, l]] {
                return false;
            }
            let (ak, kl, al) = (m.get(a, k), m.get(k, l), m.get(a, l));
            (ak[0] + kl[0] - al[0]).hypot(ak[1] + kl[1] - al[1]) <= threshold
        };
        let best = others
            .iter()
            .map(|&k| {
                let group: Vec<usize> = others.iter().copied().filter(|&l| l == k || agree(k, l)).collect();
                group
            })
            .max_by(|x, y| x.len().cmp(&y.len()).then(y.first().cmp(&x.first())));
        let Some(group) = best else { continue };
        if 2 * group.len() <= others.len() || group.len() <= kept {
            continue;
        }
        for &k in &others {
            let keep = group.contains(&k);
            if valid[[a, k]] != keep {
                valid[[a, k]] = keep;
                valid[[k, a]] = keep;
                flagged[index(a, k)] = !keep;
                changed = true;
            }
        }
    }
    changed
}

pub(super) fn median_of(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn neighbor_mask(m: &ShiftMatrix, threshold: f64) -> Array2<bool> {
    let n = m.len();
    let mut valid = m.valid.clone();
    for i in 0..n {
        for j in 0..n {
            if i == j || !m.valid[[i, j]] {
                continue;
            }
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for a in i.saturating_sub(1)..=(i + 1).min(n - 1) {
                for b in j.saturating_sub(1)..=(j + 1).min(n - 1) {
                    if (a, b) != (i, j) && m.valid[[a, b]] {
                        xs.push(m.x[[a, b]]);
                        ys.push(m.y[[a, b]]);
                    }
                }
            }
            if xs.is_empty() {
                continue;
            }
            let (mx, my) = (median_of(&mut xs), median_of(&mut ys));
            if (m.x[[i, j]] - mx).hypot(m.y[[i, j]] - my) > threshold {
                valid[[i, j]] = false;
            }
        }
    }
    valid
}

const POLY_TERMS: usize = 10;

fn cubic_terms(u: f64, v: f64) -> [f64; POLY_TERMS] {
    [1.0, u, v, u * u, u * v, v * v, u * u * u, u * u * v, u * v * v, v * v * v]
}

fn background_mask(m: &ShiftMatrix, threshold: f64) -> Array2<bool> {
    let n = m.len();
    let scale = (n.max(2) - 1) as f64;
    let coords = |i: usize, j: usize| cubic_terms(i as f64 / scale, j as f64 / scale);
    let mut valid = m.valid.clone();
    // refit after each pass so gross outliers stop dragging the surface
    for _ in 0..3 {
        let used: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && valid[[i, j]])
            .collect();
        if used.len() < 2 * POLY_TERMS {
            break;
        }
        let a = DMatrix::from_fn(used.len(), POLY_TERMS, |r, c| coords(used[r].0, used[r].1)[c]);
        let svd = a.svd(true, true);
        let fit = |values: &Array2<f64>| {
            let b = DVector::from_iterator(used.len(), used.iter().map(|&(i, j)| values[[i, j]]));
            svd.solve(&b, 1e-12).ok()
        };
        let (Some(cx), Some(cy)) = (fit(&m.x), fit(&m.y)) else { break };
        let mut changed = false;
        for i in 0..n {
            for j in 0..n {
                if i == j || !m.valid[[i, j]] {
                    continue;
                }
                let t = coords(i, j);
                let px: f64 = t.iter().zip(cx.iter()).map(|(a, b)| a * b).sum();
                let py: f64 = t.iter().zip(cy.iter()).map(|(a, b)| a * b).sum();
                let ok = (m.x[[i, j]] - px).hypot(m.y[[i, j]] - py) <= threshold;
                if ok != valid[[i, j]] {
                    valid[[i, j]] = ok;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    valid
}

/// Frames for which more than `row_outlier_fraction` of the off-diagonal row
/// entries are invalid, in increasing order.
pub fn exclude_bad_frames(valid: &Array2<bool>, row_outlier_fraction: f64) -> Result<Vec<usize>> {
    if !(row_outlier_fraction > 0.0 && row_outlier_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "row outlier fraction must be in (0, 1], got {row_outlier_fraction}"
        )));
    }
    let n = valid.nrows();
    if n < 2 {
        return Ok(Vec::new());
    }
    let excluded: Vec<usize> = (0..n)
        .filter(|&i| {
            let bad = (0..n).filter(|&j| j != i && !valid[[i, j]]).count();
            bad as f64 / (n - 1) as f64 > row_outlier_fraction
        })
        .collect();
    if excluded.len() == n {
        return Err(Error::AllFramesExcluded);
    }
    Ok(excluded)
}
