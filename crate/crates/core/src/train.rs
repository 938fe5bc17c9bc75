//! Cross-validated training with class-balanced sampling, AdamW on the
//! network weights and best-validation-loss checkpoint selection.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{prepare, PreparedPair};
use crate::model::{AlphaTable, Checkpoint, EncoderConfig, ModelKind, ModelParams, N_CLASSES};
use crate::objective::{cross_entropy, total_loss, LossItem, TargetEncoding};
use crate::optim::{AdamConfig, AdamW, SparseAdam};
use crate::pipeline::{augment_pair, BalancedSampler, Dataset, FoldSpec, SplitPlan};
use crate::synthgen::Progression;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub lr: f64,
    /// Step size of the per-pair slope table.
    pub alpha_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Learn the per-pair slope exponents; when off they stay at 0.
    pub noise_estimation: bool,
    pub adam: AdamConfig,
    pub encoder: EncoderConfig,
    pub augment: crate::pipeline::AugmentParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Ordinal,
            lr: 1e-4,
            alpha_lr: 0.2,
            epochs: 60,
            batch_size: 32,
            lambda: 0.15,
            weight_decay: 1e-2,
            seed: 0,
            noise_estimation: false,
            adam: AdamConfig::default(),
            encoder: EncoderConfig::default(),
            augment: crate::pipeline::AugmentParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.alpha_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.lambda >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("lambda and weight_decay must be >= 0".into()));
        }
        if self.noise_estimation && self.model == ModelKind::Naive {
            return Err(Error::Config(
                "noise estimation applies to the ordinal model only".into(),
            ));
        }
        self.augment.validate()?;
        let enc = &self.encoder;
        if (enc.in_height, enc.in_width) != (self.augment.out_height, self.augment.out_width) {
            return Err(Error::Config(format!(
                "encoder input {}x{} differs from augmentation output {}x{}",
                enc.in_width, enc.in_height, self.augment.out_width, self.augment.out_height
            )));
        }
        enc.validate()
    }
}

/// Per-epoch record; training terms are means over sampled pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub fold: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub train_other: f64,
    pub train_disease: f64,
    pub train_reg: f64,
    pub val_loss: f64,
    pub val_other: f64,
    pub val_disease: f64,
    pub sampled_worse: usize,
    pub sampled_stable: usize,
    pub sampled_better: usize,
    pub sampled_other: usize,
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub spec: FoldSpec,
    /// Parameters at the epoch with minimal validation loss.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    /// Slope table at the end of training.
    pub final_alpha: AlphaTable,
}

/// Validation loss terms: slope fixed to 1, no slope penalty.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ValidationLoss {
    pub total: f64,
    pub other: f64,
    pub disease: f64,
}

pub fn validation_loss(params: &ModelParams, pairs: &[PreparedPair]) -> Result<ValidationLoss> {
    if pairs.is_empty() {
        return Err(Error::Invalid("empty validation set".into()));
    }
    let per_pair: Vec<Result<(f64, f64)>> = pairs
        .par_iter()
        .map(|p| match params.kind() {
            ModelKind::Ordinal => {
                let pred = params.forward_pair(&p.x1, &p.x2, 0.0)?;
                let item = LossItem {
                    prediction: pred,
                    target: TargetEncoding::from_label(p.label),
                    alpha: 0.0,
                };
                let l = total_loss(&[item], 0.0)?;
                Ok((l.other, l.disease))
            }
            ModelKind::Naive => {
                let logits = params.naive_logits(&p.x1, &p.x2)?;
                Ok((cross_entropy(&logits, p.label.index()).0, 0.0))
            }
        })
        .collect();
    let n = pairs.len() as f64;
    let mut out = ValidationLoss::default();
    for r in per_pair {
        let (o, d) = r?;
        out.other += o / n;
        out.disease += d / n;
    }
    out.total = out.other + out.disease;
    Ok(out)
}

/// Pairs of the given patients, resized for the model without augmentation.
pub fn prepare_pairs(
    dataset: &Dataset,
    patients: &[usize],
    config: &TrainConfig,
) -> Vec<PreparedPair> {
    dataset
        .pairs_of_patients(patients)
        .into_par_iter()
        .map(|i| {
            let (a, b) = dataset.pair_images(i);
            let p = &dataset.pairs()[i];
            PreparedPair {
                index: i,
                pair_id: p.pair_id,
                label: p.label,
                x1: prepare(a, &config.augment),
                x2: prepare(b, &config.augment),
            }
        })
        .collect()
}

fn config_echo(config: &TrainConfig) -> serde_json::Value {
    serde_json::to_value(config).expect("config serializes")
}

/// Trains one fold. Deterministic for a given config seed and fold index.
pub fn train_fold(dataset: &Dataset, spec: &FoldSpec, config: &TrainConfig) -> Result<FoldResult> {
    config.validate()?;
    let train_idx = dataset.pairs_of_patients(&spec.train);
    if train_idx.is_empty() {
        return Err(Error::Invalid(format!("fold {} has no training pairs", spec.fold)));
    }
    let val_pairs = prepare_pairs(dataset, &spec.validation, config);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(spec.fold as u64 + 1);
    let mut params = ModelParams::init(config.model, config.encoder.clone(), &mut rng)?;
    let shapes: Vec<usize> = params.groups().iter().map(|g| g.len()).collect();
    let mut opt = AdamW::new(config.lr, config.weight_decay, config.adam, &shapes);
    let mut alpha = AlphaTable::zeros(dataset.pair_id_bound());
    let mut alpha_opt = SparseAdam::new(config.alpha_lr, config.adam, alpha.len());

    let labels: Vec<Progression> = train_idx.iter().map(|&i| dataset.pairs()[i].label).collect();
    let sampler = BalancedSampler::new(&labels)?;

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<Checkpoint> = None;
    for epoch in 1..=config.epochs {
        let draws = sampler.draw(train_idx.len(), &mut rng);
        let mut sampled = [0usize; N_CLASSES];
        let mut sums = [0.0f64; 4];
        for (batch_no, chunk) in draws.chunks(config.batch_size).enumerate() {
            let mut grads = params.zeros_like();
            let mut alpha_grads = Vec::new();
            let mut batch = Vec::with_capacity(chunk.len());
            for &k in chunk {
                let i = train_idx[k];
                sampled[labels[k].index()] += 1;
                let (a, b) = dataset.pair_images(i);
                let (a, b) = augment_pair(a, b, &config.augment, &mut rng)?;
                batch.push((i, a.to_unit(), b.to_unit()));
            }
            let n = batch.len() as f64;
            match config.model {
                ModelKind::Ordinal => {
                    let mut passes = Vec::with_capacity(batch.len());
                    let mut items = Vec::with_capacity(batch.len());
                    for (i, x1, x2) in &batch {
                        let pair = &dataset.pairs()[*i];
                        let a = alpha.get(pair.pair_id);
                        let pass = params.ordinal_pass(x1, x2, a)?;
                        items.push(LossItem {
                            prediction: pass.prediction,
                            target: TargetEncoding::from_label(pair.label),
                            alpha: a,
                        });
                        passes.push(pass);
                    }
                    let lambda = if config.noise_estimation { config.lambda } else { 0.0 };
                    let loss = total_loss(&items, lambda)?;
                    if !loss.total.is_finite() {
                        return Err(Error::Divergence {
                            epoch,
                            batch: batch_no,
                        });
                    }
                    for ((pass, g), (i, _, _)) in passes.iter().zip(&loss.grads).zip(&batch) {
                        params.ordinal_backward(pass, &g.logits, &mut grads);
                        alpha_grads.push((dataset.pairs()[*i].pair_id, g.d_alpha));
                    }
                    sums[0] += loss.total * n;
                    sums[1] += loss.other * n;
                    sums[2] += loss.disease * n;
                    sums[3] += loss.reg * n;
                }
                ModelKind::Naive => {
                    let mut total = 0.0;
                    for (i, x1, x2) in &batch {
                        let pass = params.naive_pass(x1, x2)?;
                        let (l, mut d) = cross_entropy(&pass.logits, dataset.pairs()[*i].label.index());
                        d.iter_mut().for_each(|v| *v /= n);
                        params.naive_backward(&pass, &d, &mut grads);
                        total += l;
                    }
                    if !total.is_finite() {
                        return Err(Error::Divergence {
                            epoch,
                            batch: batch_no,
                        });
                    }
                    sums[0] += total;
                    sums[1] += total;
                }
            }
            let g: Vec<&Vec<f64>> = grads.groups();
            opt.step(&mut params.groups_mut(), &g);
            if config.noise_estimation {
                alpha_opt.step(alpha.values_mut(), &alpha_grads);
            }
        }

        let val = validation_loss(&params, &val_pairs)?;
        if !val.total.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: usize::MAX,
            });
        }
        let n = draws.len() as f64;
        history.push(EpochRecord {
            fold: spec.fold,
            epoch,
            train_loss: sums[0] / n,
            train_other: sums[1] / n,
            train_disease: sums[2] / n,
            train_reg: sums[3] / n,
            val_loss: val.total,
            val_other: val.other,
            val_disease: val.disease,
            sampled_worse: sampled[0],
            sampled_stable: sampled[1],
            sampled_better: sampled[2],
            sampled_other: sampled[3],
        });
        if best.as_ref().map_or(true, |b| val.total < b.val_loss) {
            best = Some(Checkpoint::new(
                &params,
                &alpha,
                spec.fold,
                epoch,
                val.total,
                config_echo(config),
            ));
        }
    }
    Ok(FoldResult {
        spec: spec.clone(),
        checkpoint: best.expect("at least one epoch"),
        history,
        final_alpha: alpha,
    })
}

/// Runs every fold of the plan; folds are independent and may run on up to
/// `jobs` threads without changing results.
pub fn cross_validate(
    dataset: &Dataset,
    plan: &SplitPlan,
    config: &TrainConfig,
    jobs: usize,
) -> Result<Vec<FoldResult>> {
    let specs: Vec<FoldSpec> = (0..plan.n_folds()).map(|k| plan.fold_spec(k)).collect();
    let run = || -> Vec<Result<FoldResult>> {
        specs
            .par_iter()
            .map(|s| train_fold(dataset, s, config))
            .collect()
    };
    let results = if jobs <= 1 {
        specs.iter().map(|s| train_fold(dataset, s, config)).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run)
    };
    results.into_iter().collect()
}

pub const HISTORY_HEADER: [&str; 13] = [
    "fold",
    "epoch",
    "train_loss",
    "train_other",
    "train_disease",
    "train_reg",
    "val_loss",
    "val_other",
    "val_disease",
    "sampled_worse",
    "sampled_stable",
    "sampled_better",
    "sampled_other",
];

/// One row per (fold, epoch).
pub fn write_history<W: Write>(out: W, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "history.csv".into(),
        source: e,
    })?;
    Ok(())
}

pub fn write_history_file(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_history(f, records)
}

pub fn read_history_file(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{split_patientwise, AugmentParams};
    use crate::synthgen::{gen_cohort, CohortConfig};

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            lr: 3e-3,
            epochs: 2,
            batch_size: 8,
            encoder: EncoderConfig {
                in_height: 8,
                in_width: 16,
                channels: vec![2, 3],
                feature_dim: 4,
            },
            augment: AugmentParams {
                out_height: 8,
                out_width: 16,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn tiny_dataset() -> Dataset {
        let cohort = gen_cohort(&CohortConfig {
            n_patients: 6,
            visits_per_patient: 3,
            scans_per_volume: 3,
            other_rate: 0.2,
            ..Default::default()
        })
        .unwrap();
        Dataset::from_cohort(&cohort).unwrap()
    }

    #[test]
    fn alpha_stays_zero_without_noise_estimation() {
        let ds = tiny_dataset();
        let plan = split_patientwise(&ds.patients(), 2, 0.0, 0).unwrap();
        let r = train_fold(&ds, &plan.fold_spec(0), &tiny_config()).unwrap();
        assert!(r.final_alpha.values().iter().all(|&a| a == 0.0));
        assert_eq!(r.history.len(), 2);
    }

    #[test]
    fn same_seed_same_history() {
        let ds = tiny_dataset();
        let plan = split_patientwise(&ds.patients(), 2, 0.0, 0).unwrap();
        let cfg = TrainConfig {
            noise_estimation: true,
            ..tiny_config()
        };
        let a = train_fold(&ds, &plan.fold_spec(1), &cfg).unwrap();
        let b = train_fold(&ds, &plan.fold_spec(1), &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.checkpoint, b.checkpoint);
        assert!(a.final_alpha.values().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn best_checkpoint_has_minimal_validation_loss() {
        let ds = tiny_dataset();
        let plan = split_patientwise(&ds.patients(), 2, 0.0, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            ..tiny_config()
        };
        let r = train_fold(&ds, &plan.fold_spec(0), &cfg).unwrap();
        for h in &r.history {
            assert!(r.checkpoint.val_loss <= h.val_loss);
        }
        let naive = TrainConfig {
            model: ModelKind::Naive,
            ..cfg
        };
        let r = train_fold(&ds, &plan.fold_spec(0), &naive).unwrap();
        assert_eq!(r.checkpoint.kind, ModelKind::Naive);
    }

    #[test]
    fn history_csv_round_trip() {
        let rec = EpochRecord {
            fold: 1,
            epoch: 3,
            train_loss: 0.5,
            train_other: 0.1,
            train_disease: 0.3,
            train_reg: 0.1,
            val_loss: 0.4,
            val_other: 0.1,
            val_disease: 0.3,
            sampled_worse: 1,
            sampled_stable: 2,
            sampled_better: 3,
            sampled_other: 4,
        };
        let mut buf = Vec::new();
        write_history(&mut buf, &[rec.clone(), rec.clone()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), HISTORY_HEADER.join(","));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn rejects_mismatched_encoder_input() {
        let cfg = TrainConfig {
            augment: AugmentParams::default(),
            ..tiny_config()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = TrainConfig {
            model: ModelKind::Naive,
            noise_estimation: true,
            ..tiny_config()
        };
        assert!(cfg.validate().is_err());
    }
}
