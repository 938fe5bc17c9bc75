//! Synthetic cohort generator.
//!
//! Every B-scan carries a latent scalar severity in `[0, SEVERITY_MAX]`.
//! Per patient, visit severities follow a clipped Gaussian random walk and
//! each scan of a visit volume adds independent jitter. Images render the
//! severity as bright elliptical blobs over a fixed layered background, and
//! scans at the same location of consecutive visits form labeled pairs.
//!
//! Convention: higher severity is worse disease. A pair is BETTER when the
//! second visit's severity dropped by at least `tau`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Upper bound of the latent severity scale.
pub const SEVERITY_MAX: f64 = 1.0;
/// Nominal blob area at `SEVERITY_MAX`, as a fraction of the image area.
pub const BLOB_AREA_FRACTION: f64 = 0.12;
/// Severity covered by one blob; the blob count is `ceil(s / SEVERITY_PER_BLOB)`.
pub const SEVERITY_PER_BLOB: f64 = 0.25;
const BLOB_GAIN: f64 = 110.0;

/// Four-way pair label. The discriminant order follows the ordinal scale
/// (worse < stable < better) with OTHER last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Progression {
    Worse,
    Stable,
    Better,
    Other,
}

impl Progression {
    pub const ALL: [Progression; 4] = [
        Progression::Worse,
        Progression::Stable,
        Progression::Better,
        Progression::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// The label of the same pair seen in reversed image order.
    pub fn reversed(self) -> Self {
        match self {
            Progression::Worse => Progression::Better,
            Progression::Better => Progression::Worse,
            other => other,
        }
    }

    pub fn is_progression(self) -> bool {
        self != Progression::Other
    }
}

impl fmt::Display for Progression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Progression::Worse => "WORSE",
            Progression::Stable => "STABLE",
            Progression::Better => "BETTER",
            Progression::Other => "OTHER",
        };
        f.write_str(s)
    }
}

impl FromStr for Progression {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "WORSE" => Ok(Progression::Worse),
            "STABLE" => Ok(Progression::Stable),
            "BETTER" => Ok(Progression::Better),
            "OTHER" => Ok(Progression::Other),
            _ => Err(Error::Invalid(format!("unknown label {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    pub n_patients: usize,
    pub visits_per_patient: usize,
    pub scans_per_volume: usize,
    pub image_height: usize,
    pub image_width: usize,
    /// Half-width of the STABLE band in severity units.
    pub tau: f64,
    /// Label flip probability for non-corrupted pairs.
    pub flip_rate: f64,
    /// Probability that a pair gets one corrupted image and label OTHER.
    pub other_rate: f64,
    pub scan_jitter: f64,
    pub severity_step: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_patients: 40,
            visits_per_patient: 8,
            scans_per_volume: 8,
            image_height: 32,
            image_width: 64,
            tau: 0.1,
            flip_rate: 0.0,
            other_rate: 0.05,
            scan_jitter: 0.03,
            severity_step: 0.15,
            noise_std: 6.0,
            seed: 0,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.n_patients == 0 || self.visits_per_patient == 0 || self.scans_per_volume == 0 {
            return bad("counts must be at least 1");
        }
        if self.image_height < 16 || self.image_width < 16 {
            return bad("image dimensions must be at least 16");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        for (name, p) in [("flip_rate", self.flip_rate), ("other_rate", self.other_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        for (name, v) in [
            ("scan_jitter", self.scan_jitter),
            ("severity_step", self.severity_step),
            ("noise_std", self.noise_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Unobserved disease state of one B-scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub patient_id: usize,
    pub visit_index: usize,
    pub scan_index: usize,
    pub severity: f64,
}

/// Outcome of labeling one pair: the observed label, the noise-free label
/// and which image (if any) was corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProgressionLabel {
    pub label: Progression,
    /// Label implied by the severity difference alone; never OTHER.
    pub clean_label: Progression,
    pub corrupted: Option<usize>,
}

/// One labeled pair as written to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSample {
    pub pair_id: usize,
    pub img1: String,
    pub img2: String,
    pub label: Progression,
    pub clean_label: Progression,
    pub patient_id: usize,
    pub visit_from: usize,
    pub visit_to: usize,
    pub scan_index: usize,
    pub corrupted_flags: [bool; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImage {
    /// Path relative to the dataset root.
    pub name: String,
    pub latent: LatentState,
    pub corrupted: bool,
    pub raster: Raster,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub config: CohortConfig,
    pub images: Vec<SyntheticImage>,
    pub pairs: Vec<PairSample>,
}

impl SyntheticCohort {
    /// Latent severity keyed by image name.
    pub fn severities(&self) -> BTreeMap<String, f64> {
        self.images
            .iter()
            .map(|im| (im.name.clone(), im.latent.severity))
            .collect()
    }
}

/// Clean label from the severity difference `s2 - s1`.
pub fn clean_label(s1: f64, s2: f64, tau: f64) -> Progression {
    let diff = s2 - s1;
    if diff <= -tau {
        Progression::Better
    } else if diff >= tau {
        Progression::Worse
    } else {
        Progression::Stable
    }
}

pub fn label_pair<R: Rng + ?Sized>(
    s1: f64,
    s2: f64,
    config: &CohortConfig,
    rng: &mut R,
) -> ProgressionLabel {
    debug_assert!(s1.is_finite() && s2.is_finite());
    let clean = clean_label(s1, s2, config.tau);
    if rng.gen::<f64>() < config.other_rate {
        let side = rng.gen_range(0..2);
        return ProgressionLabel {
            label: Progression::Other,
            clean_label: clean,
            corrupted: Some(side),
        };
    }
    let mut label = clean;
    if rng.gen::<f64>() < config.flip_rate {
        let others: Vec<Progression> = [Progression::Worse, Progression::Stable, Progression::Better]
            .into_iter()
            .filter(|&c| c != clean)
            .collect();
        label = others[rng.gen_range(0..2)];
    }
    ProgressionLabel {
        label,
        clean_label: clean,
        corrupted: None,
    }
}

/// Number of blobs drawn at a given severity.
pub fn blob_count(severity: f64) -> usize {
    if severity <= 0.0 {
        0
    } else {
        (severity / SEVERITY_PER_BLOB).ceil() as usize
    }
}

/// Nominal total blob area in pixels; linear (hence invertible) in severity.
pub fn blob_area(severity: f64, width: usize, height: usize) -> f64 {
    BLOB_AREA_FRACTION * (width * height) as f64 * severity.max(0.0)
}

/// Background intensity of each row: a fixed stack of retinal-like layers.
fn layer_intensity(y: usize, height: usize) -> f64 {
    let f = (y as f64 + 0.5) / height as f64;
    match f {
        f if f < 0.25 => 20.0,
        f if f < 0.30 => 170.0,
        f if f < 0.50 => 85.0,
        f if f < 0.56 => 55.0,
        f if f < 0.62 => 195.0,
        _ => 105.0,
    }
}

/// Renders one B-scan. Blobs sit in the band between the bright inner
/// layer and the bright outer layer.
pub fn render_bscan<R: Rng + ?Sized>(
    state: &LatentState,
    width: usize,
    height: usize,
    noise_std: f64,
    rng: &mut R,
) -> Raster {
    let mut canvas: Vec<f64> = (0..height)
        .flat_map(|y| std::iter::repeat(layer_intensity(y, height)).take(width))
        .collect();

    let k = blob_count(state.severity);
    if k > 0 {
        let per_blob = blob_area(state.severity, width, height) / k as f64;
        // aspect ratio 2:1, area = pi * rx * ry
        let ry = (per_blob / (2.0 * std::f64::consts::PI)).sqrt();
        let rx = 2.0 * ry;
        let band = (0.30 * height as f64, 0.56 * height as f64);
        for _ in 0..k {
            let cx = rng.gen_range(rx.min(width as f64 / 2.0)..=(width as f64 - rx).max(width as f64 / 2.0));
            let cy = rng.gen_range(band.0..=band.1);
            let y_lo = (cy - ry).floor().max(0.0) as usize;
            let y_hi = ((cy + ry).ceil() as usize).min(height - 1);
            let x_lo = (cx - rx).floor().max(0.0) as usize;
            let x_hi = ((cx + rx).ceil() as usize).min(width - 1);
            for y in y_lo..=y_hi {
                for x in x_lo..=x_hi {
                    let dx = (x as f64 + 0.5 - cx) / rx;
                    let dy = (y as f64 + 0.5 - cy) / ry;
                    if dx * dx + dy * dy <= 1.0 {
                        canvas[y * width + x] += BLOB_GAIN;
                    }
                }
            }
        }
    }

    let noise = Normal::new(0.0, noise_std).expect("noise_std validated");
    let pixels = canvas
        .into_iter()
        .map(|v| (v + noise.sample(rng)).round().clamp(0.0, 255.0) as u8)
        .collect();
    Raster::from_pixels(width, height, pixels).expect("dimensions match")
}

/// Makes an image ungradable: contrast collapse plus heavy salt-and-pepper.
pub fn corrupt<R: Rng + ?Sized>(image: &Raster, rng: &mut R) -> Raster {
    let mut out = image.clone();
    for p in out.pixels_mut() {
        let collapsed = 128.0 + (*p as f64 - 128.0) * 0.15;
        *p = if rng.gen::<f64>() < 0.25 {
            if rng.gen::<bool>() {
                255
            } else {
                0
            }
        } else {
            collapsed.round() as u8
        };
    }
    out
}

fn image_name(patient: usize, visit: usize, scan: usize) -> String {
    format!("images/p{patient:03}_v{visit:02}_s{scan:02}.pgm")
}

fn corrupted_name(patient: usize, visit: usize, scan: usize, pair_visits: (usize, usize)) -> String {
    format!(
        "images/p{patient:03}_v{visit:02}_s{scan:02}_corrupt_v{:02}v{:02}.pgm",
        pair_visits.0, pair_visits.1
    )
}

/// Per-patient RNG stream derived from the master seed.
pub fn patient_rng(seed: u64, patient: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(patient as u64 + 1);
    rng
}

struct PatientOutput {
    images: Vec<SyntheticImage>,
    pairs: Vec<PairSample>,
}

fn gen_patient(config: &CohortConfig, patient: usize) -> PatientOutput {
    let mut rng = patient_rng(config.seed, patient);
    let step = Normal::new(0.0, config.severity_step).expect("validated");
    let jitter = Normal::new(0.0, config.scan_jitter).expect("validated");

    let mut visit_sev = Vec::with_capacity(config.visits_per_patient);
    let mut s = rng.gen_range(0.0..SEVERITY_MAX);
    visit_sev.push(s);
    for _ in 1..config.visits_per_patient {
        s = (s + step.sample(&mut rng)).clamp(0.0, SEVERITY_MAX);
        visit_sev.push(s);
    }

    let scans = config.scans_per_volume;
    let mut images = Vec::with_capacity(config.visits_per_patient * scans);
    for (v, &sv) in visit_sev.iter().enumerate() {
        for scan in 0..scans {
            let severity = if config.scan_jitter > 0.0 {
                (sv + jitter.sample(&mut rng)).max(0.0)
            } else {
                sv
            };
            let latent = LatentState {
                patient_id: patient,
                visit_index: v,
                scan_index: scan,
                severity,
            };
            let raster = render_bscan(
                &latent,
                config.image_width,
                config.image_height,
                config.noise_std,
                &mut rng,
            );
            images.push(SyntheticImage {
                name: image_name(patient, v, scan),
                latent,
                corrupted: false,
                raster,
            });
        }
    }

    let mut pairs = Vec::new();
    let mut extra = Vec::new();
    for v in 0..config.visits_per_patient.saturating_sub(1) {
        for scan in 0..scans {
            let a = &images[v * scans + scan];
            let b = &images[(v + 1) * scans + scan];
            let outcome = label_pair(a.latent.severity, b.latent.severity, config, &mut rng);
            let mut names = [a.name.clone(), b.name.clone()];
            let mut flags = [false; 2];
            if let Some(side) = outcome.corrupted {
                let src = if side == 0 { a } else { b };
                let name = corrupted_name(
                    patient,
                    src.latent.visit_index,
                    scan,
                    (v, v + 1),
                );
                extra.push(SyntheticImage {
                    name: name.clone(),
                    latent: src.latent,
                    corrupted: true,
                    raster: corrupt(&src.raster, &mut rng),
                });
                names[side] = name;
                flags[side] = true;
            }
            let [img1, img2] = names;
            pairs.push(PairSample {
                pair_id: 0,
                img1,
                img2,
                label: outcome.label,
                clean_label: outcome.clean_label,
                patient_id: patient,
                visit_from: v,
                visit_to: v + 1,
                scan_index: scan,
                corrupted_flags: flags,
            });
        }
    }
    images.extend(extra);
    PatientOutput { images, pairs }
}

/// Generates the full cohort. Patients are generated in parallel from
/// independent streams, then concatenated in patient order so pair ids are
/// dense and deterministic.
pub fn gen_cohort(config: &CohortConfig) -> Result<SyntheticCohort> {
    config.validate()?;
    let per_patient: Vec<PatientOutput> = (0..config.n_patients)
        .into_par_iter()
        .map(|p| gen_patient(config, p))
        .collect();
    let mut images = Vec::new();
    let mut pairs = Vec::new();
    for out in per_patient {
        images.extend(out.images);
        pairs.extend(out.pairs);
    }
    for (i, p) in pairs.iter_mut().enumerate() {
        p.pair_id = i;
    }
    Ok(SyntheticCohort {
        config: config.clone(),
        images,
        pairs,
    })
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CONFIG_ECHO_FILE: &str = "cohort_config.json";
pub const LATENTS_FILE: &str = "latents.jsonl";

/// Latent record written next to the manifest for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRecord {
    pub image: String,
    #[serde(flatten)]
    pub latent: LatentState,
    pub corrupted: bool,
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, row)?;
        buf.push(b'\n');
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Writes PGM images, the JSONL manifest, the latent table and a config echo.
pub fn write_dataset(cohort: &SyntheticCohort, dir: &Path) -> Result<PathBuf> {
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    for im in &cohort.images {
        im.raster.write_pgm(&dir.join(&im.name))?;
    }
    let manifest = dir.join(MANIFEST_FILE);
    write_jsonl(&manifest, &cohort.pairs)?;

    let latents: Vec<LatentRecord> = cohort
        .images
        .iter()
        .map(|im| LatentRecord {
            image: im.name.clone(),
            latent: im.latent,
            corrupted: im.corrupted,
        })
        .collect();
    write_jsonl(&dir.join(LATENTS_FILE), &latents)?;

    let echo = dir.join(CONFIG_ECHO_FILE);
    let json = serde_json::to_string_pretty(&cohort.config)?;
    std::fs::write(&echo, json).map_err(|e| Error::io(&echo, e))?;
    Ok(manifest)
}

/// Reads the latent table written by [`write_dataset`].
pub fn read_latents(dir: &Path) -> Result<BTreeMap<String, f64>> {
    let path = dir.join(LATENTS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = BTreeMap::new();
    for (index, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: LatentRecord = serde_json::from_str(line).map_err(|e| Error::Record {
            index,
            message: e.to_string(),
        })?;
        out.insert(rec.image, rec.latent.severity);
    }
    Ok(out)
}

/// Single-image binary set standing in for the activity task: severity
/// above `cutoff` is "active".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActivityConfig {
    pub n_images: usize,
    pub cutoff: f64,
    pub image_height: usize,
    pub image_width: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for ActivityConfig {
    fn default() -> Self {
        Self {
            n_images: 400,
            cutoff: 0.5,
            image_height: 32,
            image_width: 64,
            noise_std: 9.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivityImage {
    pub severity: f64,
    pub active: bool,
    pub raster: Raster,
}

pub fn gen_activity_set(config: &ActivityConfig) -> Result<Vec<ActivityImage>> {
    if config.n_images < 2 {
        return Err(Error::Config("activity set needs at least 2 images".into()));
    }
    if config.image_height < 16 || config.image_width < 16 {
        return Err(Error::Config("image dimensions must be at least 16".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(u64::MAX);
    Ok((0..config.n_images)
        .map(|i| {
            let severity = rng.gen_range(0.0..SEVERITY_MAX);
            let latent = LatentState {
                patient_id: i,
                visit_index: 0,
                scan_index: 0,
                severity,
            };
            ActivityImage {
                severity,
                active: severity > config.cutoff,
                raster: render_bscan(
                    &latent,
                    config.image_width,
                    config.image_height,
                    config.noise_std,
                    &mut rng,
                ),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CohortConfig {
        CohortConfig {
            n_patients: 3,
            visits_per_patient: 4,
            scans_per_volume: 3,
            ..Default::default()
        }
    }

    fn state(severity: f64) -> LatentState {
        LatentState {
            patient_id: 0,
            visit_index: 0,
            scan_index: 0,
            severity,
        }
    }

    #[test]
    fn same_seed_same_cohort() {
        let cfg = CohortConfig { seed: 7, ..small() };
        assert_eq!(gen_cohort(&cfg).unwrap(), gen_cohort(&cfg).unwrap());
        let other = CohortConfig { seed: 8, ..small() };
        assert_ne!(gen_cohort(&cfg).unwrap(), gen_cohort(&other).unwrap());
    }

    #[test]
    fn zero_jitter_shares_visit_severity() {
        let cfg = CohortConfig {
            scan_jitter: 0.0,
            ..small()
        };
        let cohort = gen_cohort(&cfg).unwrap();
        let mut by_visit: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        for im in cohort.images.iter().filter(|im| !im.corrupted) {
            by_visit
                .entry((im.latent.patient_id, im.latent.visit_index))
                .or_default()
                .push(im.latent.severity);
        }
        for sev in by_visit.values() {
            assert!(sev.iter().all(|&s| s == sev[0]));
        }
    }

    #[test]
    fn pair_count_matches_enumeration() {
        let cfg = CohortConfig {
            n_patients: 68,
            visits_per_patient: 10,
            scans_per_volume: 2,
            image_height: 16,
            image_width: 16,
            ..Default::default()
        };
        let cohort = gen_cohort(&cfg).unwrap();
        let mut expected = 0;
        for _patient in 0..68 {
            for _visit_pair in 0..9 {
                for _scan in 0..2 {
                    expected += 1;
                }
            }
        }
        assert_eq!(cohort.pairs.len(), expected);
        assert_eq!(expected, 68 * 9 * 2);
        for (i, p) in cohort.pairs.iter().enumerate() {
            assert_eq!(p.pair_id, i);
        }
    }

    #[test]
    fn zero_severity_renders_background_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = render_bscan(&state(0.0), 64, 32, 0.0, &mut rng);
        for y in 0..32 {
            for x in 0..64 {
                assert_eq!(img.get(x, y) as f64, layer_intensity(y, 32));
            }
        }
        assert_eq!(blob_count(0.0), 0);
        assert_eq!(blob_area(0.0, 64, 32), 0.0);
    }

    #[test]
    fn blob_area_is_monotone() {
        let grid: Vec<f64> = (0..=40).map(|i| i as f64 / 40.0).collect();
        for w in grid.windows(2) {
            assert!(blob_area(w[0], 64, 32) <= blob_area(w[1], 64, 32));
            assert!(blob_count(w[0]) <= blob_count(w[1]));
        }
    }

    #[test]
    fn mean_intensity_increases_with_severity() {
        let mut means = Vec::new();
        for i in 0..10 {
            let s = i as f64 / 10.0;
            let mut total = 0.0;
            for rep in 0..16 {
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + rep);
                total += render_bscan(&state(s), 64, 32, 6.0, &mut rng).mean_intensity();
            }
            means.push(total / 16.0);
        }
        for w in means.windows(2) {
            assert!(w[1] > w[0], "{means:?}");
        }
    }

    #[test]
    fn label_geometry() {
        let cfg = CohortConfig {
            flip_rate: 0.0,
            other_rate: 0.0,
            tau: 0.1,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(label_pair(0.4, 0.4, &cfg, &mut rng).label, Progression::Stable);
        assert_eq!(label_pair(0.5, 0.3, &cfg, &mut rng).label, Progression::Better);
        assert_eq!(label_pair(0.3, 0.5, &cfg, &mut rng).label, Progression::Worse);
    }

    #[test]
    fn forced_flip_leaves_stable() {
        let cfg = CohortConfig {
            flip_rate: 1.0,
            other_rate: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..200 {
            let out = label_pair(0.5, 0.5, &cfg, &mut rng);
            assert_eq!(out.clean_label, Progression::Stable);
            assert_ne!(out.label, Progression::Stable);
            assert_ne!(out.label, Progression::Other);
            seen.insert(out.label);
        }
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn other_iff_corrupted() {
        let cfg = CohortConfig {
            other_rate: 0.3,
            flip_rate: 0.2,
            ..small()
        };
        let cohort = gen_cohort(&cfg).unwrap();
        for p in &cohort.pairs {
            let corrupted = p.corrupted_flags.iter().any(|&f| f);
            assert_eq!(corrupted, p.label == Progression::Other);
            assert!(p.corrupted_flags.iter().filter(|&&f| f).count() <= 1);
            assert_ne!(p.clean_label, Progression::Other);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let cases = [
            CohortConfig { n_patients: 0, ..Default::default() },
            CohortConfig { tau: 0.0, ..Default::default() },
            CohortConfig { flip_rate: 1.5, ..Default::default() },
            CohortConfig { image_width: 8, ..Default::default() },
        ];
        for c in cases {
            assert!(matches!(gen_cohort(&c), Err(Error::Config(_))));
        }
    }

    #[test]
    fn activity_labels_follow_cutoff() {
        let set = gen_activity_set(&ActivityConfig {
            n_images: 50,
            ..Default::default()
        })
        .unwrap();
        assert!(set.iter().all(|a| a.active == (a.severity > 0.5)));
        assert!(set.iter().any(|a| a.active) && set.iter().any(|a| !a.active));
    }
}
