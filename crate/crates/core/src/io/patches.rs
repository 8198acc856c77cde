//! Sliding-window patch extraction and stratified pool splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::types::{Patch, SceneDataset};

/// Patches are labeled by their center pixel; centers closer than
/// `patch_size / 2` to the edge are discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchExtractionSpec {
    pub patch_size: usize,
}

impl Default for PatchExtractionSpec {
    fn default() -> Self {
        PatchExtractionSpec { patch_size: 15 }
    }
}

impl PatchExtractionSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.patch_size == 0 || self.patch_size % 2 == 0 {
            return Err(DataError::InvalidSpec(format!("patch size {} must be odd", self.patch_size)));
        }
        Ok(())
    }
}

/// `(row, col, label)` of every labeled, non-border center, row-major.
pub fn extract_centers(
    ds: &SceneDataset,
    spec: &PatchExtractionSpec,
) -> Result<Vec<(usize, usize, usize)>, DataError> {
    spec.validate()?;
    let size = spec.patch_size;
    if ds.rows() < size || ds.cols() < size {
        return Err(DataError::SceneTooSmall { rows: ds.rows(), cols: ds.cols(), patch: size });
    }
    let half = size / 2;
    let mut out = Vec::new();
    for r in half..ds.rows() - half {
        for c in half..ds.cols() - half {
            if let Some(l) = ds.label(r, c) {
                out.push((r, c, l));
            }
        }
    }
    Ok(out)
}

pub fn extract_patches(ds: &SceneDataset, spec: &PatchExtractionSpec) -> Result<Vec<Patch>, DataError> {
    Ok(extract_centers(ds, spec)?
        .into_iter()
        .map(|(r, c, _)| ds.patch_at(r, c, spec.patch_size).expect("center is interior and labeled"))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits<T> {
    /// The sampling pool.
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

/// Largest-remainder apportionment of `total` by `weights` (summing to 1).
fn apportion(total: usize, weights: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let quotas: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let fracs: Vec<f64> = quotas.iter().zip(&counts).map(|(q, c)| q - *c as f64).collect();
    let mut left = total.saturating_sub(counts.iter().sum());
    let mut by_frac: Vec<usize> = (0..weights.len()).collect();
    by_frac.sort_by(|&a, &b| fracs[b].total_cmp(&fracs[a]));
    for &i in by_frac.iter().cycle().take(weights.len() * 2) {
        if left == 0 {
            break;
        }
        if weights[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    (counts, fracs)
}

/// Seeded, class-stratified partition into train / validation / test.
///
/// Split sizes are the largest-remainder rounding of `fractions · N`, and
/// every class receives within one sample of its proportional share of each
/// split. Classes must be able to appear in every split with a nonzero
/// fraction.
pub fn split_pools<T: Clone>(
    items: &[T],
    label_of: impl Fn(&T) -> usize,
    fractions: [f64; 3],
    seed: u64,
) -> Result<Splits<T>, DataError> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidSpec(format!("fractions {fractions:?} must be non-negative and sum to 1")));
    }
    let active = fractions.iter().filter(|f| **f > 0.0).count();
    let labels: Vec<usize> = items.iter().map(&label_of).collect();
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }

    let (targets, _) = apportion(items.len(), &fractions);
    let mut alloc: Vec<[usize; 3]> = Vec::with_capacity(classes);
    let mut col_left = targets.clone();
    let mut row_fracs = Vec::with_capacity(classes);
    for m in &members {
        let mut cell = [0usize; 3];
        let mut fr = [0.0; 3];
        for s in 0..3 {
            let q = fractions[s] * m.len() as f64;
            cell[s] = q.floor() as usize;
            fr[s] = q - cell[s] as f64;
            col_left[s] = col_left[s].saturating_sub(cell[s]);
        }
        alloc.push(cell);
        row_fracs.push(fr);
    }
    // Hand out each class's remainder to the splits still short of target.
    for (ci, m) in members.iter().enumerate() {
        let need = m.len() - alloc[ci].iter().sum::<usize>();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            col_left[b]
                .cmp(&col_left[a])
                .then(row_fracs[ci][b].total_cmp(&row_fracs[ci][a]))
                .then(a.cmp(&b))
        });
        let mut given = 0;
        for &s in &order {
            if given == need {
                break;
            }
            if col_left[s] > 0 && fractions[s] > 0.0 {
                alloc[ci][s] += 1;
                col_left[s] -= 1;
                given += 1;
            }
        }
        for &s in order.iter().filter(|&&s| fractions[s] > 0.0).cycle().take(3 * (need - given)) {
            if given == need {
                break;
            }
            alloc[ci][s] += 1;
            given += 1;
        }
    }
    // Every class must reach every active split.
    for (ci, m) in members.iter().enumerate() {
        if m.is_empty() {
            continue;
        }
        if m.len() < active {
            return Err(DataError::InsufficientSamples { class: ci, available: m.len(), splits: active });
        }
        for s in 0..3 {
            if fractions[s] > 0.0 && alloc[ci][s] == 0 {
                let donor = (0..3).max_by_key(|&d| alloc[ci][d]).expect("three splits");
                alloc[ci][donor] -= 1;
                alloc[ci][s] += 1;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: [Vec<usize>; 3] = Default::default();
    for (ci, m) in members.iter().enumerate() {
        let mut shuffled = m.clone();
        shuffled.shuffle(&mut rng);
        let mut rest = shuffled.as_slice();
        for s in 0..3 {
            let (take, tail) = rest.split_at(alloc[ci][s]);
            idx[s].extend_from_slice(take);
            rest = tail;
        }
    }
    let pick = |v: &mut Vec<usize>| {
        v.sort_unstable();
        v.iter().map(|&i| items[i].clone()).collect::<Vec<T>>()
    };
    let [mut a, mut b, mut c] = idx;
    Ok(Splits { train: pick(&mut a), validation: pick(&mut b), test: pick(&mut c) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{generate_scene, SceneSpec};
    use crate::types::{CoherencyMatrix, UNLABELED};
    use proptest::prelude::*;

    fn scene(rows: usize, cols: usize, labels: Vec<u16>) -> SceneDataset {
        SceneDataset::new(rows, cols, vec![CoherencyMatrix::identity(); rows * cols], labels, vec!["a".into(), "b".into()])
            .unwrap()
    }

    #[test]
    fn window_counts() {
        let spec = PatchExtractionSpec { patch_size: 15 };
        let full = scene(15, 15, vec![0; 225]);
        let p = extract_patches(&full, &spec).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].origin(), (7, 7));
        assert_eq!(extract_patches(&scene(17, 17, vec![1; 289]), &spec).unwrap().len(), 9);
        let mut labels = vec![0; 225];
        labels[7 * 15 + 7] = UNLABELED;
        assert!(extract_patches(&scene(15, 15, labels), &spec).unwrap().is_empty());
        assert!(matches!(
            extract_patches(&scene(14, 20, vec![0; 280]), &spec),
            Err(DataError::SceneTooSmall { .. })
        ));
        assert!(extract_patches(&full, &PatchExtractionSpec { patch_size: 4 }).is_err());
    }

    #[test]
    fn count_matches_exhaustive_scan() {
        let ds = generate_scene(&SceneSpec {
            rows: 30,
            cols: 23,
            layout: crate::io::Layout::Regions {
                regions: vec![crate::io::Region { row: 3, col: 2, rows: 20, cols: 15, class: 2 }],
            },
            ..SceneSpec::default()
        })
        .unwrap();
        let spec = PatchExtractionSpec { patch_size: 5 };
        let mut brute = 0;
        for r in 0..ds.rows() {
            for c in 0..ds.cols() {
                let inside = r >= 2 && c >= 2 && r + 2 < ds.rows() && c + 2 < ds.cols();
                if inside && ds.label(r, c).is_some() {
                    brute += 1;
                }
            }
        }
        let patches = extract_patches(&ds, &spec).unwrap();
        assert_eq!(patches.len(), brute);
        for p in &patches {
            assert_eq!(Some(p.label()), ds.label(p.origin().0, p.origin().1));
        }
    }

    #[test]
    fn exact_sizes_on_hundred() {
        let items: Vec<(usize, usize)> = (0..100).map(|i| (i, i % 4)).collect();
        let s = split_pools(&items, |x| x.1, [0.6, 0.2, 0.2], 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (60, 20, 20));
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).map(|x| x.0).collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(s, split_pools(&items, |x| x.1, [0.6, 0.2, 0.2], 1).unwrap());
        assert_ne!(s, split_pools(&items, |x| x.1, [0.6, 0.2, 0.2], 2).unwrap());
    }

    #[test]
    fn insufficient_and_invalid() {
        let items = vec![0usize, 0, 0, 1, 1];
        assert!(matches!(
            split_pools(&items, |x| *x, [0.6, 0.2, 0.2], 0),
            Err(DataError::InsufficientSamples { class: 1, available: 2, splits: 3 })
        ));
        assert!(split_pools(&items, |x| *x, [0.5, 0.2, 0.2], 0).is_err());
        assert!(split_pools(&items, |x| *x, [0.6, 0.4, 0.0], 0).is_ok());
    }

    proptest! {
        #[test]
        fn stratified_partition(counts in proptest::collection::vec(5usize..80, 1..6),
                                a in 0.2f64..0.6, seed in 0u64..1000) {
            let b = (1.0 - a) / 2.0;
            let fr = [a, b, 1.0 - a - b];
            let mut items = Vec::new();
            for (c, &n) in counts.iter().enumerate() {
                items.extend((0..n).map(|_| c));
            }
            let ids: Vec<(usize, usize)> = items.iter().copied().enumerate().collect();
            let s = split_pools(&ids, |x| x.1, fr, seed).unwrap();
            let total = ids.len();
            prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), total);
            let mut seen = vec![false; total];
            for x in s.train.iter().chain(&s.validation).chain(&s.test) {
                prop_assert!(!seen[x.0]);
                seen[x.0] = true;
            }
            for (si, split) in [&s.train, &s.validation, &s.test].into_iter().enumerate() {
                prop_assert!((split.len() as f64 - fr[si] * total as f64).abs() < 1.0 + 1e-9);
                for (c, &n) in counts.iter().enumerate() {
                    let got = split.iter().filter(|x| x.1 == c).count() as f64;
                    let want = fr[si] * n as f64;
                    if want >= 1.0 {
                        prop_assert!((got - want).abs() <= 1.0 + 1e-9, "class {} split {}: {} vs {}", c, si, got, want);
                    }
                    prop_assert!(got >= 1.0);
                }
            }
        }
    }
}
