//! Dataset loading, patient-wise splits, paired augmentation and the
//! class-balanced sampler.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::distributions::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Raster, Rect};
use crate::synthgen::{PairSample, Progression, SyntheticCohort};

/// Pairs plus their images, read-only after construction.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: Option<PathBuf>,
    pairs: Vec<PairSample>,
    image_index: BTreeMap<String, usize>,
    images: Vec<Raster>,
    /// Per pair, indices of its two images in `images`.
    pair_images: Vec<[usize; 2]>,
    patient_index: BTreeMap<usize, Vec<usize>>,
}

impl Dataset {
    /// Builds a dataset from pairs and a name → raster store. Images of a
    /// pair must share dimensions; images of differing sizes across pairs
    /// are zero-padded to the largest size.
    pub fn new(pairs: Vec<PairSample>, store: BTreeMap<String, Raster>) -> Result<Self> {
        let mut seen_ids = std::collections::BTreeSet::new();
        for (index, p) in pairs.iter().enumerate() {
            if !seen_ids.insert(p.pair_id) {
                return Err(Error::Record {
                    index,
                    message: format!("duplicate pair_id {}", p.pair_id),
                });
            }
            let a = store.get(&p.img1);
            let b = store.get(&p.img2);
            let (a, b) = match (a, b) {
                (Some(a), Some(b)) => (a, b),
                (None, _) => {
                    return Err(Error::Record {
                        index,
                        message: format!("missing image {}", p.img1),
                    })
                }
                (_, None) => {
                    return Err(Error::Record {
                        index,
                        message: format!("missing image {}", p.img2),
                    })
                }
            };
            if (a.width(), a.height()) != (b.width(), b.height()) {
                return Err(Error::Record {
                    index,
                    message: format!(
                        "dimension mismatch: {} is {}x{}, {} is {}x{}",
                        p.img1,
                        a.width(),
                        a.height(),
                        p.img2,
                        b.width(),
                        b.height()
                    ),
                });
            }
        }

        let max_w = store.values().map(Raster::width).max().unwrap_or(0);
        let max_h = store.values().map(Raster::height).max().unwrap_or(0);
        let mut image_index = BTreeMap::new();
        let mut images = Vec::with_capacity(store.len());
        for (name, raster) in store {
            let raster = if raster.width() != max_w || raster.height() != max_h {
                raster.pad_to(max_w, max_h)?
            } else {
                raster
            };
            image_index.insert(name, images.len());
            images.push(raster);
        }

        let pair_images = pairs
            .iter()
            .map(|p| [image_index[&p.img1], image_index[&p.img2]])
            .collect();
        let mut patient_index: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, p) in pairs.iter().enumerate() {
            patient_index.entry(p.patient_id).or_default().push(i);
        }
        Ok(Self {
            root: None,
            pairs,
            image_index,
            images,
            pair_images,
            patient_index,
        })
    }

    pub fn from_cohort(cohort: &SyntheticCohort) -> Result<Self> {
        let store = cohort
            .images
            .iter()
            .map(|im| (im.name.clone(), im.raster.clone()))
            .collect();
        Dataset::new(cohort.pairs.clone(), store)
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn pairs(&self) -> &[PairSample] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// The two images of the pair at position `i`.
    pub fn pair_images(&self, i: usize) -> (&Raster, &Raster) {
        let [a, b] = self.pair_images[i];
        (&self.images[a], &self.images[b])
    }

    pub fn image(&self, name: &str) -> Option<&Raster> {
        self.image_index.get(name).map(|&i| &self.images[i])
    }

    pub fn image_names(&self) -> impl Iterator<Item = &str> {
        self.image_index.keys().map(String::as_str)
    }

    pub fn image_dims(&self) -> (usize, usize) {
        self.images
            .first()
            .map(|r| (r.width(), r.height()))
            .unwrap_or((0, 0))
    }

    pub fn patients(&self) -> Vec<usize> {
        self.patient_index.keys().copied().collect()
    }

    pub fn patient_pairs(&self, patient: usize) -> &[usize] {
        self.patient_index
            .get(&patient)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Pair positions belonging to any of the given patients, in dataset order.
    pub fn pairs_of_patients(&self, patients: &[usize]) -> Vec<usize> {
        let mut idx: Vec<usize> = patients
            .iter()
            .flat_map(|p| self.patient_pairs(*p).iter().copied())
            .collect();
        idx.sort_unstable();
        idx
    }

    /// Counts per class in `Progression::index` order.
    pub fn label_histogram(&self) -> [usize; 4] {
        let mut h = [0; 4];
        for p in &self.pairs {
            h[p.label.index()] += 1;
        }
        h
    }

    /// Size of a dense table indexed by pair_id.
    pub fn pair_id_bound(&self) -> usize {
        self.pairs.iter().map(|p| p.pair_id + 1).max().unwrap_or(0)
    }
}

/// Reads a JSONL manifest and every image it references (paths relative
/// to the manifest's directory).
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text =
        std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let root = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let mut pairs = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairSample = serde_json::from_str(line).map_err(|e| Error::Record {
            index,
            message: format!("malformed record: {e}"),
        })?;
        pairs.push(rec);
    }
    let mut store = BTreeMap::new();
    for (index, p) in pairs.iter().enumerate() {
        for name in [&p.img1, &p.img2] {
            if store.contains_key(name) {
                continue;
            }
            let path = root.join(name);
            if !path.is_file() {
                return Err(Error::Record {
                    index,
                    message: format!("image file not found: {}", path.display()),
                });
            }
            let raster = Raster::read_pgm(&path).map_err(|e| Error::Record {
                index,
                message: e.to_string(),
            })?;
            store.insert(name.clone(), raster);
        }
    }
    let mut ds = Dataset::new(pairs, store)?;
    ds.root = Some(root);
    Ok(ds)
}

/// Held-out test patients plus cross-validation folds over the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub holdout_frac: f64,
    pub test: Vec<usize>,
    pub folds: Vec<Vec<usize>>,
}

/// Training and validation patients for one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub fold: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

impl SplitPlan {
    pub fn n_folds(&self) -> usize {
        self.folds.len()
    }

    pub fn fold_spec(&self, fold: usize) -> FoldSpec {
        let mut train: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        train.sort_unstable();
        let mut validation = self.folds[fold].clone();
        validation.sort_unstable();
        FoldSpec {
            fold,
            train,
            validation,
        }
    }
}

/// Shuffles the sorted patient list with a seeded ChaCha8 generator, takes
/// the first `round(holdout_frac * n)` patients as test set and deals the
/// remainder round-robin into `n_folds` folds.
pub fn split_patientwise(
    patients: &[usize],
    n_folds: usize,
    holdout_frac: f64,
    seed: u64,
) -> Result<SplitPlan> {
    if n_folds < 2 {
        return Err(Error::Config("n_folds must be at least 2".into()));
    }
    if !(0.0..1.0).contains(&holdout_frac) {
        return Err(Error::Config("holdout_frac must lie in [0, 1)".into()));
    }
    let mut order: Vec<usize> = patients.to_vec();
    order.sort_unstable();
    order.dedup();
    let n_test = (holdout_frac * order.len() as f64).round() as usize;
    if order.len() < n_test + n_folds {
        return Err(Error::Config(format!(
            "too few patients ({}) for {n_test} test patients and {n_folds} folds",
            order.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut test = order[..n_test].to_vec();
    test.sort_unstable();
    let mut folds = vec![Vec::new(); n_folds];
    for (i, &p) in order[n_test..].iter().enumerate() {
        folds[i % n_folds].push(p);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(SplitPlan {
        seed,
        holdout_frac,
        test,
        folds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    pub crop_scale_min: f64,
    pub crop_scale_max: f64,
    pub out_height: usize,
    pub out_width: usize,
    pub hflip_prob: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            crop_scale_min: 0.20,
            crop_scale_max: 1.00,
            out_height: 16,
            out_width: 32,
            hflip_prob: 0.5,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.crop_scale_min > 0.0
            && self.crop_scale_min <= self.crop_scale_max
            && self.crop_scale_max <= 1.0)
        {
            return Err(Error::Config(
                "need 0 < crop_scale_min <= crop_scale_max <= 1".into(),
            ));
        }
        if self.out_height == 0 || self.out_width == 0 {
            return Err(Error::Config("output size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::Config("hflip_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One sampled geometric transform, shared by both images of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairTransform {
    pub crop: Rect,
    pub flip: bool,
}

/// Samples a crop whose area is a `U(min, max)` fraction of the largest
/// output-aspect rectangle fitting the image, at a uniform position.
pub fn sample_transform<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    params: &AugmentParams,
    rng: &mut R,
) -> PairTransform {
    let aspect = params.out_width as f64 / params.out_height as f64;
    let (max_w, max_h) = if width as f64 / height as f64 >= aspect {
        (height as f64 * aspect, height as f64)
    } else {
        (width as f64, width as f64 / aspect)
    };
    let scale = if params.crop_scale_max > params.crop_scale_min {
        rng.gen_range(params.crop_scale_min..=params.crop_scale_max)
    } else {
        params.crop_scale_min
    };
    let side = scale.sqrt();
    let cw = ((max_w * side).ceil() as usize).clamp(1, width);
    let ch = ((max_h * side).ceil() as usize).clamp(1, height);
    let x = rng.gen_range(0..=width - cw);
    let y = rng.gen_range(0..=height - ch);
    let flip = rng.gen::<f64>() < params.hflip_prob;
    PairTransform {
        crop: Rect {
            x,
            y,
            width: cw,
            height: ch,
        },
        flip,
    }
}

pub fn apply_transform(
    image: &Raster,
    t: &PairTransform,
    params: &AugmentParams,
) -> Result<Raster> {
    let mut out = image
        .crop(t.crop)?
        .resize_bilinear(params.out_width, params.out_height);
    if t.flip {
        out = out.flip_horizontal();
    }
    Ok(out)
}

/// Applies one sampled crop/flip to both images.
pub fn augment_pair<R: Rng + ?Sized>(
    img1: &Raster,
    img2: &Raster,
    params: &AugmentParams,
    rng: &mut R,
) -> Result<(Raster, Raster)> {
    if (img1.width(), img1.height()) != (img2.width(), img2.height()) {
        return Err(Error::Invalid("pair images differ in size".into()));
    }
    let t = sample_transform(img1.width(), img1.height(), params, rng);
    Ok((
        apply_transform(img1, &t, params)?,
        apply_transform(img2, &t, params)?,
    ))
}

/// Evaluation-time preprocessing: plain resize, no augmentation.
pub fn resize_only(image: &Raster, params: &AugmentParams) -> Raster {
    image.resize_bilinear(params.out_width, params.out_height)
}

/// Sampling with replacement, each item weighted by the inverse frequency
/// of its class.
#[derive(Debug, Clone)]
pub struct BalancedSampler {
    dist: WeightedIndex<f64>,
    len: usize,
}

impl BalancedSampler {
    pub fn new(labels: &[Progression]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Invalid("balanced sampler needs labels".into()));
        }
        let mut counts = [0usize; 4];
        for l in labels {
            counts[l.index()] += 1;
        }
        let weights: Vec<f64> = labels
            .iter()
            .map(|l| 1.0 / counts[l.index()] as f64)
            .collect();
        let dist = WeightedIndex::new(&weights)
            .map_err(|e| Error::Invalid(format!("sampler weights: {e}")))?;
        Ok(Self {
            dist,
            len: labels.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.sample(&self.dist)
    }

    /// `n` draws with replacement.
    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_twenty_patients() {
        let patients: Vec<usize> = (0..20).collect();
        let plan = split_patientwise(&patients, 5, 0.15, 11).unwrap();
        assert_eq!(plan.test.len(), 3);
        let mut sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(sizes, [4, 4, 3, 3, 3]);

        let mut all: Vec<usize> = plan.test.clone();
        for f in &plan.folds {
            all.extend(f);
        }
        all.sort_unstable();
        assert_eq!(all, patients);
        assert_eq!(plan, split_patientwise(&patients, 5, 0.15, 11).unwrap());
    }

    #[test]
    fn split_errors() {
        let patients: Vec<usize> = (0..4).collect();
        assert!(split_patientwise(&patients, 1, 0.15, 0).is_err());
        assert!(split_patientwise(&patients, 5, 0.0, 0).is_err());
        assert!(split_patientwise(&patients, 4, 0.0, 0).is_ok());
    }

    #[test]
    fn fold_spec_partitions_non_test_patients() {
        let patients: Vec<usize> = (0..12).collect();
        let plan = split_patientwise(&patients, 3, 0.25, 1).unwrap();
        for k in 0..3 {
            let spec = plan.fold_spec(k);
            assert!(spec.train.iter().all(|p| !spec.validation.contains(p)));
            assert!(spec.train.iter().all(|p| !plan.test.contains(p)));
            assert_eq!(spec.train.len() + spec.validation.len(), 9);
        }
    }

    fn noise_image(w: usize, h: usize, seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Raster::from_pixels(w, h, (0..w * h).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn identity_augmentation_is_pure_resize() {
        let params = AugmentParams {
            crop_scale_min: 1.0,
            crop_scale_max: 1.0,
            hflip_prob: 0.0,
            out_height: 16,
            out_width: 32,
        };
        let a = noise_image(64, 32, 1);
        let b = noise_image(64, 32, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (oa, ob) = augment_pair(&a, &b, &params, &mut rng).unwrap();
        assert_eq!(oa, resize_only(&a, &params));
        assert_eq!(ob, resize_only(&b, &params));
    }

    #[test]
    fn identical_inputs_give_identical_outputs() {
        let params = AugmentParams::default();
        let a = noise_image(64, 32, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let (x, y) = augment_pair(&a, &a, &params, &mut rng).unwrap();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn crop_area_within_scale_range() {
        let params = AugmentParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let area = (64 * 32) as f64;
        for _ in 0..100 {
            let t = sample_transform(64, 32, &params, &mut rng);
            let frac = (t.crop.width * t.crop.height) as f64 / area;
            assert!((0.2..=1.0).contains(&frac), "{frac}");
            assert!(t.crop.x + t.crop.width <= 64 && t.crop.y + t.crop.height <= 32);
        }
    }

    #[test]
    fn sampler_balances_skewed_counts() {
        let mut labels = Vec::new();
        for (class, n) in [(0, 90), (1, 5), (2, 4), (3, 1)] {
            labels.extend(std::iter::repeat(Progression::from_index(class).unwrap()).take(n));
        }
        let sampler = BalancedSampler::new(&labels).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut hist = [0usize; 4];
        let draws = 40_000;
        for i in sampler.draw(draws, &mut rng) {
            hist[labels[i].index()] += 1;
        }
        for h in hist {
            let f = h as f64 / draws as f64;
            assert!((f - 0.25).abs() <= 0.02, "{hist:?}");
        }
    }

    #[test]
    fn sampler_single_class_is_uniform() {
        let labels = vec![Progression::Stable; 10];
        let sampler = BalancedSampler::new(&labels).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut hist = [0usize; 10];
        for i in sampler.draw(20_000, &mut rng) {
            hist[i] += 1;
        }
        assert!(hist.iter().all(|&h| (h as f64 / 20_000.0 - 0.1).abs() < 0.015));
        assert!(BalancedSampler::new(&[]).is_err());
    }
}
