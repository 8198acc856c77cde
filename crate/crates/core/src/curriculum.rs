//! Patch difficulty scoring and the accumulative batch pacing schedule.
//!
//! A pixel's complexity (PiCC) is its distance from the origin of a
//! transformed H/alpha plane in which the alpha axis peaks at 60 degrees:
//!
//! ```text
//! picc = sqrt(H^2 + (1 - |(alpha_bar - 60) / 60|)^2)
//! ```
//!
//! A patch's complexity (PaCC) is the plain mean of its pixels' PiCC values.
//! Training patches are ranked ascending by PaCC and presented as growing
//! prefixes `B_1 ⊂ B_2 ⊂ … ⊂ B_n` of the ranked list.

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::halpha::{halpha_of_matrix, halpha_of_pixel_with_floor, DecompositionError, HAlpha, PowerFloor};
use crate::types::{Patch, SceneDataset};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurriculumError {
    #[error("cannot rank an empty training set")]
    EmptySet,
    #[error("batch step {k} outside 1..={n}")]
    OutOfRange { k: usize, n: usize },
    #[error(transparent)]
    Decomposition(#[from] DecompositionError),
}

/// Pixel complexity in `[0, √2]`. Invalid (zero-power) pixels score 0.
pub fn picc(h: &HAlpha) -> f64 {
    if !h.valid {
        return 0.0;
    }
    let alpha_term = 1.0 - ((h.alpha_bar - 60.0) / 60.0).abs();
    (h.entropy * h.entropy + alpha_term * alpha_term).sqrt()
}

pub fn pacc(x: &Patch) -> Result<f64, CurriculumError> {
    pacc_with_floor(x, PowerFloor::ABSOLUTE)
}

/// Mean PiCC over every pixel of the patch, summed in row-major order.
pub fn pacc_with_floor(x: &Patch, floor: PowerFloor) -> Result<f64, CurriculumError> {
    let mut sum = 0.0;
    for v in x.pixels() {
        sum += picc(&halpha_of_pixel_with_floor(v, floor)?);
    }
    Ok(sum / x.pixels().len() as f64)
}

/// Stable ascending argsort of `scores`.
pub fn argsort_stable(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    order
}

/// Training patches sorted ascending by PaCC.
#[derive(Debug, Clone)]
pub struct RankedTrainingSet<'a> {
    entries: Vec<(&'a Patch, f64)>,
    order: Vec<usize>,
}

impl<'a> RankedTrainingSet<'a> {
    /// Ranks `patches` using precomputed `scores` (same indexing).
    pub fn from_scores(patches: &[&'a Patch], scores: &[f64]) -> Result<Self, CurriculumError> {
        assert_eq!(patches.len(), scores.len(), "one score per patch");
        if patches.is_empty() {
            return Err(CurriculumError::EmptySet);
        }
        let order = argsort_stable(scores);
        let entries = order.iter().map(|&i| (patches[i], scores[i])).collect();
        Ok(RankedTrainingSet { entries, order })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(&'a Patch, f64)] {
        &self.entries
    }

    /// 0-based indices into the input set, easiest first.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|(_, s)| *s)
    }

    pub fn patches(&self) -> impl Iterator<Item = &'a Patch> + '_ {
        self.entries.iter().map(|(p, _)| *p)
    }

    /// Writes `orig_index,pacc,label` rows in ranked order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "orig_index,pacc,label")?;
        for (&i, (p, s)) in self.order.iter().zip(&self.entries) {
            writeln!(w, "{},{},{}", i, s, p.label())?;
        }
        Ok(())
    }
}

/// Scores every patch and sorts ascending; ties keep input order.
pub fn rank_patches(patches: &[Patch]) -> Result<RankedTrainingSet<'_>, CurriculumError> {
    if patches.is_empty() {
        return Err(CurriculumError::EmptySet);
    }
    let scores = patches
        .par_iter()
        .map(pacc)
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&Patch> = patches.iter().collect();
    RankedTrainingSet::from_scores(&refs, &scores)
}

/// Prefix sizes for the accumulative pacing function over `total` samples
/// split `splits` ways.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSchedule {
    splits: usize,
    total: usize,
}

impl BatchSchedule {
    pub fn new(total: usize, splits: usize) -> Result<Self, CurriculumError> {
        if total == 0 {
            return Err(CurriculumError::EmptySet);
        }
        if splits == 0 {
            return Err(CurriculumError::OutOfRange { k: 0, n: 0 });
        }
        Ok(BatchSchedule { splits, total })
    }

    pub fn splits(&self) -> usize {
        self.splits
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// `floor(k·N/n)`, at least 1, with the last step always covering all `N`.
    pub fn size(&self, k: usize) -> Result<usize, CurriculumError> {
        if k == 0 || k > self.splits {
            return Err(CurriculumError::OutOfRange { k, n: self.splits });
        }
        if k == self.splits {
            return Ok(self.total);
        }
        let m = (k as u128 * self.total as u128 / self.splits as u128) as usize;
        Ok(m.max(1))
    }

    pub fn sizes(&self) -> Vec<usize> {
        (1..=self.splits).map(|k| self.size(k).expect("k in range")).collect()
    }
}

/// The first `m(k)` entries of the ranked set.
pub fn slice_batch<'r, 'a>(
    ranked: &'r RankedTrainingSet<'a>,
    k: usize,
    n: usize,
) -> Result<&'r [(&'a Patch, f64)], CurriculumError> {
    let m = BatchSchedule::new(ranked.len(), n)?.size(k)?;
    Ok(&ranked.entries[..m])
}

/// Per-pixel PiCC values for a whole scene, for fast sliding-window PaCC.
#[derive(Debug, Clone)]
pub struct PiccRaster {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl PiccRaster {
    pub fn compute(ds: &SceneDataset, floor: PowerFloor) -> Result<Self, CurriculumError> {
        let values = ds
            .data()
            .par_iter()
            .map(|t| halpha_of_matrix(t, floor).map(|h| picc(&h)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PiccRaster { rows: ds.rows(), cols: ds.cols(), values })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    /// PaCC of the square window centered on `(r, c)`; identical bits to
    /// [`pacc_with_floor`] on the extracted patch.
    pub fn pacc_at(&self, r: usize, c: usize, size: usize) -> Option<f64> {
        let half = size / 2;
        if size == 0 || r < half || c < half || r + half >= self.rows || c + half >= self.cols {
            return None;
        }
        let mut sum = 0.0;
        for rr in r - half..=r + half {
            for cc in c - half..=c + half {
                sum += self.values[rr * self.cols + cc];
            }
        }
        Some(sum / (size * size) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::CoherencyMatrix;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ha(entropy: f64, alpha_bar: f64) -> HAlpha {
        HAlpha { p: [1.0, 0.0, 0.0], entropy, alphas: [0.0; 3], alpha_bar, valid: true }
    }

    #[test]
    fn picc_boundaries() {
        assert_eq!(picc(&ha(0.0, 0.0)), 0.0);
        assert_eq!(picc(&ha(1.0, 60.0)), std::f64::consts::SQRT_2);
        assert_eq!(picc(&ha(0.0, 90.0)), 0.5);
        assert_eq!(picc(&HAlpha::invalid()), 0.0);
    }

    #[test]
    fn pacc_examples() {
        let id = CoherencyMatrix::identity();
        let p = Patch::uniform(2, &id, 0).unwrap();
        assert_abs_diff_eq!(pacc(&p).unwrap(), std::f64::consts::SQRT_2, epsilon = 1e-12);

        let single = Patch::uniform(1, &CoherencyMatrix::diag(2.0, 1.0, 1.0).unwrap(), 0).unwrap();
        let h = crate::halpha::halpha_of_pixel(&single.pixels()[0]).unwrap();
        assert_eq!(pacc(&single).unwrap(), picc(&h));

        let surf = CoherencyMatrix::diag(1.0, 0.0, 0.0).unwrap().to_vector();
        let mixed = Patch::new(2, 2, vec![id.to_vector(), surf, surf, id.to_vector()], 0, (0, 0))
            .unwrap();
        assert_abs_diff_eq!(pacc(&mixed).unwrap(), 0.707_106_781_186_547_5, epsilon = 1e-12);
    }

    #[test]
    fn ranking_semantics() {
        let order = argsort_stable(&[1.2, 0.3, 0.9]);
        assert_eq!(order, vec![1, 2, 0]);
        assert_eq!(argsort_stable(&[0.5; 6]), (0..6).collect::<Vec<_>>());
        assert_eq!(rank_patches(&[]).unwrap_err(), CurriculumError::EmptySet);
    }

    #[test]
    fn csv_dump() {
        let id = CoherencyMatrix::identity();
        let surf = CoherencyMatrix::diag(1.0, 0.0, 0.0).unwrap();
        let patches = vec![Patch::uniform(1, &id, 1).unwrap(), Patch::uniform(1, &surf, 0).unwrap()];
        let ranked = rank_patches(&patches).unwrap();
        let mut out = Vec::new();
        ranked.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "orig_index,pacc,label");
        assert_eq!(lines[1], "1,0,0");
        assert!(lines[2].starts_with("0,1.414"));
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(BatchSchedule::new(100, 25).unwrap().size(1).unwrap(), 4);
        assert_eq!(BatchSchedule::new(100, 25).unwrap().size(25).unwrap(), 100);
        assert_eq!(BatchSchedule::new(10, 4).unwrap().size(2).unwrap(), 5);
        assert_eq!(BatchSchedule::new(10, 4).unwrap().sizes(), vec![2, 5, 7, 10]);
        // N < n keeps every batch non-empty.
        assert_eq!(BatchSchedule::new(3, 5).unwrap().sizes(), vec![1, 1, 1, 2, 3]);
        assert_eq!(
            BatchSchedule::new(10, 4).unwrap().size(5),
            Err(CurriculumError::OutOfRange { k: 5, n: 4 })
        );
        assert!(BatchSchedule::new(10, 4).unwrap().size(0).is_err());
    }

    #[test]
    fn slice_batch_is_prefix() {
        let id = CoherencyMatrix::identity();
        let patches: Vec<Patch> = (0..10).map(|i| Patch::uniform(1, &id, i % 2).unwrap()).collect();
        let ranked = rank_patches(&patches).unwrap();
        let b2 = slice_batch(&ranked, 2, 4).unwrap();
        let b3 = slice_batch(&ranked, 3, 4).unwrap();
        assert_eq!(b2.len(), 5);
        assert!(std::ptr::eq(b2[0].0, b3[0].0));
        assert_eq!(slice_batch(&ranked, 4, 4).unwrap().len(), 10);
        assert!(slice_batch(&ranked, 0, 4).is_err());
    }

    #[test]
    fn raster_matches_patch_pacc() {
        use num_complex::Complex64;
        let data: Vec<CoherencyMatrix> = (0..49)
            .map(|i| {
                let x = i as f64;
                CoherencyMatrix::new(
                    1.0 + x,
                    0.5 + (x * 0.3).sin().abs(),
                    0.2,
                    Complex64::new(0.1 * (x * 0.7).cos(), 0.05),
                    Complex64::new(0.0, 0.02 * x.sqrt()),
                    Complex64::new(0.01, 0.0),
                )
                .unwrap()
            })
            .collect();
        let ds = SceneDataset::new(7, 7, data, vec![0; 49], vec!["a".into()]).unwrap();
        let raster = PiccRaster::compute(&ds, PowerFloor::ABSOLUTE).unwrap();
        for r in 2..5 {
            for c in 2..5 {
                let p = ds.patch_at(r, c, 5).unwrap();
                assert_eq!(raster.pacc_at(r, c, 5).unwrap().to_bits(), pacc(&p).unwrap().to_bits());
            }
        }
        assert!(raster.pacc_at(1, 3, 5).is_none());
    }

    proptest! {
        #[test]
        fn picc_bounded_and_unimodal(h in 0.0f64..=1.0, a in 0.0f64..=90.0, b in 0.0f64..=90.0) {
            let v = picc(&ha(h, a));
            prop_assert!((0.0..=std::f64::consts::SQRT_2).contains(&v));
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            if hi <= 60.0 {
                prop_assert!(picc(&ha(h, lo)) <= picc(&ha(h, hi)));
            } else if lo >= 60.0 {
                prop_assert!(picc(&ha(h, lo)) >= picc(&ha(h, hi)));
            }
        }

        #[test]
        fn schedule_nested_and_complete(total in 1usize..5000, splits in 1usize..200) {
            let s = BatchSchedule::new(total, splits).unwrap();
            let sizes = s.sizes();
            prop_assert_eq!(*sizes.last().unwrap(), total);
            prop_assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(sizes[0] >= 1);
            if total >= splits {
                prop_assert!(sizes.windows(2).all(|w| w[0] < w[1]));
            }
        }

        #[test]
        fn argsort_sorted_and_idempotent(scores in proptest::collection::vec(0.0f64..1.5, 1..60)) {
            let order = argsort_stable(&scores);
            let sorted: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
            prop_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(argsort_stable(&sorted), (0..sorted.len()).collect::<Vec<_>>());
        }
    }
}
