//! Component masks and mask utilities.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

use super::taxonomy::ComponentTaxonomy;

/// Per-pixel component labels. Pixel values are taxonomy indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentMask {
    labels: Array2<u8>,
}

impl ComponentMask {
    pub fn new(labels: Array2<u8>) -> Self {
        Self { labels }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            labels: Array2::zeros((height, width)),
        }
    }

    pub fn height(&self) -> usize {
        self.labels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.labels.shape()[1]
    }

    pub fn labels(&self) -> &Array2<u8> {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[[y, x]]
    }

    /// Set of distinct labels present, in ascending order.
    pub fn label_set(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in self.labels.iter() {
            seen[l as usize] = true;
        }
        (0..=255u8).filter(|&l| seen[l as usize]).collect()
    }

    /// Number of pixels carrying `label`.
    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Loads from an 8-bit single-channel PNG where the pixel value is the
    /// taxonomy index.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.into_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let labels = Array2::from_shape_vec((h, w), img.into_raw())
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok(Self { labels })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let raw: Vec<u8> = self.labels.iter().copied().collect();
        let img = image::GrayImage::from_raw(self.width() as u32, self.height() as u32, raw)
            .expect("buffer size matches dimensions");
        img.save(path)?;
        Ok(())
    }
}

/// Binary foreground mask; 1 where the source mask is non-background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    data: Array2<u8>,
}

impl BinaryMask {
    pub fn new(data: Array2<u8>) -> Self {
        Self { data }
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn data(&self) -> &Array2<u8> {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[[y, x]]
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Real-valued copy for masked arithmetic.
    pub fn to_f32(&self) -> Array2<f32> {
        self.data.map(|&v| v as f32)
    }
}

/// Validation report for a mask against a taxonomy.
#[derive(Debug, Clone)]
pub struct MaskReport {
    /// Pixel count per label value actually present in the mask.
    pub counts: BTreeMap<u8, usize>,
    /// Label values present in the mask but not in the taxonomy.
    pub out_of_range: Vec<u8>,
}

impl MaskReport {
    /// A mask is valid iff it contains no out-of-range labels.
    pub fn is_valid(&self) -> bool {
        self.out_of_range.is_empty()
    }
}

/// Tallies per-label pixel counts and flags labels outside the taxonomy.
pub fn validate_mask(mask: &ComponentMask, taxonomy: &ComponentTaxonomy) -> MaskReport {
    let mut counts = BTreeMap::new();
    for &l in mask.labels().iter() {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let out_of_range = counts
        .keys()
        .copied()
        .filter(|&l| !taxonomy.contains(l))
        .collect();
    MaskReport {
        counts,
        out_of_range,
    }
}

/// Binary foreground indicator: 1 exactly where the label is non-background.
pub fn object_mask(mask: &ComponentMask) -> BinaryMask {
    BinaryMask::new(mask.labels().map(|&l| u8::from(l != 0)))
}

/// Nearest-neighbor label resampling with corner-aligned sampling.
///
/// Labels are categorical, so the resampler never blends values: the output
/// label set is always a subset of the input label set.
pub fn resize_mask(mask: &ComponentMask, target: (usize, usize)) -> Result<ComponentMask> {
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::InvalidArgument(
            "resize_mask target dimensions must be >= 1".into(),
        ));
    }
    let (sh, sw) = (mask.height(), mask.width());
    let map = |dst: usize, dlen: usize, slen: usize| -> usize {
        if dlen == 1 {
            0
        } else {
            let pos = dst as f64 * (slen - 1) as f64 / (dlen - 1) as f64;
            (pos.round() as usize).min(slen - 1)
        }
    };
    let mut out = Array2::zeros((th, tw));
    for y in 0..th {
        let sy = map(y, th, sh);
        for x in 0..tw {
            let sx = map(x, tw, sw);
            out[[y, x]] = mask.get(sy, sx);
        }
    }
    Ok(ComponentMask::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn default_tax() -> ComponentTaxonomy {
        ComponentTaxonomy::default()
    }

    #[test]
    fn all_zero_mask_is_valid_with_background_count() {
        let mask = ComponentMask::zeros(4, 5);
        let report = validate_mask(&mask, &default_tax());
        assert!(report.is_valid());
        assert_eq!(report.counts.get(&0), Some(&20));
        assert_eq!(report.counts.len(), 1);
    }

    #[test]
    fn out_of_range_label_is_flagged() {
        let mut labels = Array2::zeros((2, 2));
        labels[[0, 1]] = 9;
        let report = validate_mask(&ComponentMask::new(labels), &default_tax());
        assert!(!report.is_valid());
        assert_eq!(report.out_of_range, vec![9]);
    }

    #[test]
    fn counts_match_brute_force_tally() {
        let labels = array![[0, 1, 2, 1], [2, 2, 0, 1], [1, 0, 0, 2], [0, 0, 1, 2]];
        let mask = ComponentMask::new(labels.map(|&v| v as u8));
        let report = validate_mask(&mask, &default_tax());
        assert!(report.is_valid());
        // Brute-force tally over the literal pixel grid.
        let mut expect = BTreeMap::new();
        for &v in mask.labels().iter() {
            *expect.entry(v).or_insert(0usize) += 1;
        }
        assert_eq!(report.counts, expect);
    }

    #[test]
    fn object_mask_trivial_cases() {
        let bg = ComponentMask::zeros(3, 3);
        assert_eq!(object_mask(&bg).count_ones(), 0);

        let fg = ComponentMask::new(Array2::ones((3, 3)));
        assert_eq!(object_mask(&fg).count_ones(), 9);
    }

    #[test]
    fn object_mask_matches_per_pixel_comparison() {
        let mut labels = Array2::zeros((4, 4));
        for x in 0..4 {
            for y in 0..2 {
                labels[[y, x]] = 2;
            }
        }
        let mask = ComponentMask::new(labels);
        let bin = object_mask(&mask);
        for y in 0..4 {
            for x in 0..4 {
                let expect = u8::from(mask.get(y, x) != 0);
                assert_eq!(bin.get(y, x), expect);
            }
        }
    }

    #[test]
    fn object_mask_equals_or_over_labels() {
        // Pixelwise OR of the per-label non-background indicators.
        let labels = array![[0u8, 1, 5], [3, 0, 2], [4, 4, 0]];
        let mask = ComponentMask::new(labels);
        let bin = object_mask(&mask);
        for y in 0..3 {
            for x in 0..3 {
                let mut or = 0u8;
                for l in 1..=5u8 {
                    or |= u8::from(mask.get(y, x) == l);
                }
                assert_eq!(bin.get(y, x), or);
            }
        }
    }

    #[test]
    fn resize_identity() {
        let labels = array![[1u8, 2], [3, 4]];
        let mask = ComponentMask::new(labels);
        let out = resize_mask(&mask, (2, 2)).unwrap();
        assert_eq!(out, mask);
    }

    #[test]
    fn resize_two_by_two_down_to_one_row() {
        let mask = ComponentMask::new(array![[1u8, 2], [1, 2]]);
        let out = resize_mask(&mask, (1, 2)).unwrap();
        assert_eq!(out.labels(), &array![[1u8, 2]]);
    }

    #[test]
    fn resize_upsamples_in_blocks() {
        let mask = ComponentMask::new(array![[1u8, 2], [3, 4]]);
        let out = resize_mask(&mask, (4, 4)).unwrap();
        let expect = array![
            [1u8, 1, 2, 2],
            [1, 1, 2, 2],
            [3, 3, 4, 4],
            [3, 3, 4, 4]
        ];
        assert_eq!(out.labels(), &expect);
    }

    #[test]
    fn resize_rejects_zero_target() {
        let mask = ComponentMask::zeros(2, 2);
        assert!(resize_mask(&mask, (0, 2)).is_err());
        assert!(resize_mask(&mask, (2, 0)).is_err());
    }

    #[test]
    fn resize_never_invents_labels() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let (h, w) = (rng.gen_range(1..12), rng.gen_range(1..12));
            let labels = Array2::from_shape_fn((h, w), |_| rng.gen_range(0..6u8));
            let mask = ComponentMask::new(labels);
            let (th, tw) = (rng.gen_range(1..20), rng.gen_range(1..20));
            let out = resize_mask(&mask, (th, tw)).unwrap();
            let src_set = mask.label_set();
            for l in out.label_set() {
                assert!(src_set.contains(&l), "label {l} invented by resize");
            }
        }
    }
}
