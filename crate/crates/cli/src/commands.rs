use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use ordinal_state::eval::{
    self, delta_scatter, evaluate_split, fewshot::write_curve, fewshot_curve, fit_threshold, gamma_adjacency_report,
    oracle_output, reports::write_csv_rows, FewshotInput, MeanStd, MetricSuite,
};
use ordinal_state::inference::{image_features, image_logits, predict_pairs, prepare, PairOutput};
use ordinal_state::model::{AlphaTable, Checkpoint, ModelKind};
use ordinal_state::pipeline::{load_dataset, split_patientwise, Dataset, SplitPlan};
use ordinal_state::synthgen::{gen_activity_set, gen_cohort, write_dataset, ActivityConfig, CohortConfig, Progression};
use ordinal_state::train::{cross_validate, prepare_pairs, write_history_file, TrainConfig};

use crate::rundir::{self, echo_config, load_config, manifest_path, read_json, write_json, Inputs};
use crate::{CliError, EvalArgs, FewshotArgs, GenArgs, InspectArgs, TrainArgs};

type Res = Result<(), CliError>;

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

pub fn gen(a: GenArgs) -> Res {
    let (mut cfg, raw): (CohortConfig, _) = load_config(a.common.config.as_deref())?;
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.n_patients, a.patients);
    set(&mut cfg.visits_per_patient, a.visits);
    set(&mut cfg.scans_per_volume, a.scans);
    set(&mut cfg.image_height, a.height);
    set(&mut cfg.image_width, a.width);
    set(&mut cfg.tau, a.tau);
    set(&mut cfg.flip_rate, a.flip_rate);
    set(&mut cfg.other_rate, a.other_rate);
    set(&mut cfg.noise_std, a.noise_std);
    cfg.validate()?;

    rundir::create(&a.out, a.common.force)?;
    let cohort = gen_cohort(&cfg)?;
    let manifest = write_dataset(&cohort, &a.out)?;
    let mut inputs = Inputs::default();
    if let Some(raw) = &raw {
        fs::write(a.out.join("config.input.json"), raw).map_err(|e| CliError::io(&a.out, e))?;
        inputs.bytes("config.input.json", raw.as_bytes());
    }
    inputs.file("cohort_config.json", &a.out.join("cohort_config.json"))?;
    inputs.write(&a.out)?;
    let hist = Dataset::from_cohort(&cohort)?.label_histogram();
    println!(
        "wrote {} images and {} pairs to {} (WORSE {}, STABLE {}, BETTER {}, OTHER {})",
        cohort.images.len(),
        cohort.pairs.len(),
        manifest.display(),
        hist[0],
        hist[1],
        hist[2],
        hist[3]
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRun {
    /// Manifest of the training dataset.
    pub data: Option<PathBuf>,
    pub folds: usize,
    pub holdout_frac: f64,
    pub split_seed: u64,
    pub jobs: usize,
    pub train: TrainConfig,
}

impl Default for TrainRun {
    fn default() -> Self {
        Self {
            data: None,
            folds: 5,
            holdout_frac: 0.15,
            split_seed: 0,
            jobs: 1,
            train: TrainConfig::default(),
        }
    }
}

fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    fs::canonicalize(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))
}

fn hash_dataset(inputs: &mut Inputs, ds: &Dataset, manifest: &Path) -> Res {
    inputs.file("manifest.jsonl", manifest)?;
    let root = ds.root().map(Path::to_path_buf).unwrap_or_default();
    for name in ds.image_names() {
        inputs.file(&format!("images:{name}"), &root.join(name))?;
    }
    Ok(())
}

fn fold_dir(run: &Path, fold: usize) -> PathBuf {
    run.join(format!("fold_{fold}"))
}

pub fn train(a: TrainArgs) -> Res {
    let (mut cfg, raw): (TrainRun, _) = load_config(a.common.config.as_deref())?;
    if let Some(d) = &a.data {
        cfg.data = Some(d.clone());
    }
    set(&mut cfg.folds, a.folds);
    set(&mut cfg.holdout_frac, a.holdout);
    set(&mut cfg.split_seed, a.split_seed);
    set(&mut cfg.jobs, a.jobs);
    let t = &mut cfg.train;
    set(&mut t.epochs, a.epochs);
    set(&mut t.lr, a.lr);
    set(&mut t.alpha_lr, a.alpha_lr);
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.lambda, a.lambda);
    set(&mut t.weight_decay, a.weight_decay);
    set(&mut t.seed, a.seed);
    if a.noise_estimation {
        t.noise_estimation = true;
    }
    if a.naive_baseline {
        t.model = ModelKind::Naive;
    }
    t.validate()?;
    let data = cfg.data.clone().ok_or_else(|| CliError::usage("no dataset given (--data)"))?;
    let manifest = absolute(&manifest_path(&data))?;
    cfg.data = Some(manifest.clone());

    let dataset = load_dataset(&manifest)?;
    let plan = split_patientwise(&dataset.patients(), cfg.folds, cfg.holdout_frac, cfg.split_seed)?;
    rundir::create(&a.out, a.common.force)?;
    let mut inputs = Inputs::default();
    echo_config(&a.out, &cfg, raw.as_deref(), &mut inputs)?;
    hash_dataset(&mut inputs, &dataset, &manifest)?;
    inputs.write(&a.out)?;
    write_json(&a.out.join("split.json"), &plan)?;

    let results = cross_validate(&dataset, &plan, &cfg.train, cfg.jobs)?;
    let mut history = Vec::new();
    for r in &results {
        let dir = fold_dir(&a.out, r.spec.fold);
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        r.checkpoint.save(&dir.join("checkpoint.json"))?;
        write_json(&dir.join("alpha_final.json"), &r.final_alpha)?;
        history.extend(r.history.iter().cloned());
        println!(
            "fold {}: best epoch {} validation loss {:.4}",
            r.spec.fold, r.checkpoint.epoch, r.checkpoint.val_loss
        );
    }
    write_history_file(&a.out.join("history.csv"), &history)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub data: Option<PathBuf>,
    pub oracle: bool,
    pub gamma_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            data: None,
            oracle: false,
            gamma_threshold: eval::reports::DEFAULT_GAMMA_THRESHOLD,
        }
    }
}

#[derive(Debug, Serialize)]
struct FoldSummary {
    fold: usize,
    checkpoint_epoch: usize,
    thresholds: Option<eval::DecisionThresholds>,
    confusion: eval::ConfusionMatrix,
    metrics: MetricSuite,
}

#[derive(Debug, Serialize)]
struct EvalSummary {
    run: PathBuf,
    model: ModelKind,
    oracle: bool,
    test_pairs: usize,
    folds: Vec<FoldSummary>,
    mean: [f64; 6],
    std: [f64; 6],
}

fn load_checkpoint(run: &Path, fold: usize) -> Result<(PathBuf, Checkpoint), CliError> {
    let path = fold_dir(run, fold).join("checkpoint.json");
    if !path.is_file() {
        return Err(CliError::usage(format!("missing checkpoint {}", path.display())));
    }
    Ok((path.clone(), Checkpoint::load(&path)?))
}

fn load_run(run: &Path) -> Result<TrainRun, CliError> {
    let cfg = run.join("config.json");
    if !cfg.is_file() {
        return Err(CliError::usage(format!("{} is not a training run directory", run.display())));
    }
    read_json(&cfg)
}

pub fn eval(a: EvalArgs) -> Res {
    let (mut cfg, raw): (EvalConfig, _) = load_config(a.common.config.as_deref())?;
    if let Some(d) = &a.data {
        cfg.data = Some(d.clone());
    }
    if a.oracle {
        cfg.oracle = true;
    }
    set(&mut cfg.gamma_threshold, a.gamma_threshold);

    let run_cfg = load_run(&a.run)?;
    let plan: SplitPlan = read_json(&a.run.join("split.json"))?;
    let checkpoints = (0..plan.n_folds())
        .map(|k| load_checkpoint(&a.run, k))
        .collect::<Result<Vec<_>, _>>()?;
    let data = cfg
        .data
        .clone()
        .or(run_cfg.data.clone())
        .ok_or_else(|| CliError::usage("run records no dataset; pass --data"))?;
    let manifest = manifest_path(&data);
    let dataset = load_dataset(&manifest)?;

    let out = a.out.clone().unwrap_or_else(|| a.run.join("eval"));
    rundir::create(&out, a.common.force)?;
    let mut inputs = Inputs::default();
    echo_config(&out, &cfg, raw.as_deref(), &mut inputs)?;
    inputs.file("run/config.json", &a.run.join("config.json"))?;
    inputs.file("run/split.json", &a.run.join("split.json"))?;
    for (k, (path, _)) in checkpoints.iter().enumerate() {
        inputs.file(&format!("run/fold_{k}/checkpoint.json"), path)?;
    }
    hash_dataset(&mut inputs, &dataset, &manifest)?;
    inputs.write(&out)?;

    let test = prepare_pairs(&dataset, &plan.test, &run_cfg.train);
    let test_labels: Vec<Progression> = test.iter().map(|p| p.label).collect();
    let mut folds = Vec::new();
    for (k, (_, ck)) in checkpoints.iter().enumerate() {
        let spec = plan.fold_spec(k);
        let params = ck.params()?;
        let val = prepare_pairs(&dataset, &spec.validation, &run_cfg.train);
        let val_labels: Vec<Progression> = val.iter().map(|p| p.label).collect();
        let (val_out, test_out): (Vec<PairOutput>, Vec<PairOutput>) = if cfg.oracle {
            (
                val_labels.iter().map(|&l| oracle_output(l)).collect(),
                test_labels.iter().map(|&l| oracle_output(l)).collect(),
            )
        } else {
            (predict_pairs(&params, &val)?, predict_pairs(&params, &test)?)
        };
        let e = evaluate_split(&val_out, &val_labels, &test_out, &test_labels)?;

        if ck.kind == ModelKind::Ordinal && !cfg.oracle {
            let rows = delta_scatter(&params, &dataset, &test)?;
            let p = out.join(format!("delta_scatter_fold_{k}.csv"));
            write_csv_rows(BufWriter::new(File::create(&p).map_err(|e| CliError::io(&p, e))?), &rows)?;

            let alpha_path = fold_dir(&a.run, k).join("alpha_final.json");
            let alpha: AlphaTable = if alpha_path.is_file() {
                read_json(&alpha_path)?
            } else {
                ck.alpha.clone()
            };
            let train = spec.train.clone();
            let report = gamma_adjacency_report(&alpha, &dataset, &|p| train.contains(&p.patient_id), cfg.gamma_threshold)?;
            write_json(&out.join(format!("gamma_report_fold_{k}.json")), &report)?;
        }
        folds.push(FoldSummary {
            fold: k,
            checkpoint_epoch: ck.epoch,
            thresholds: e.thresholds,
            confusion: e.confusion,
            metrics: e.metrics,
        });
    }

    let per_fold: Vec<[f64; 6]> = folds.iter().map(|f| f.metrics.values()).collect();
    let metrics_path = out.join("metrics.csv");
    let mut w = csv_writer(&metrics_path)?;
    w.write_record(MetricSuite::COLUMNS).map_err(core_csv)?;
    for v in &per_fold {
        w.write_record(v.iter().map(|x| x.to_string())).map_err(core_csv)?;
    }
    w.flush().map_err(|e| CliError::io(&metrics_path, e))?;

    let mut mean = [0.0; 6];
    let mut std = [0.0; 6];
    for c in 0..6 {
        let col: Vec<f64> = per_fold.iter().map(|v| v[c]).collect();
        let ms = MeanStd::of(&col)?;
        mean[c] = ms.mean;
        std[c] = ms.std;
    }
    let summary_path = out.join("metrics_summary.csv");
    let mut w = csv_writer(&summary_path)?;
    let mut header = vec!["stat"];
    header.extend(MetricSuite::COLUMNS);
    w.write_record(&header).map_err(core_csv)?;
    for (name, vals) in [("mean", &mean), ("std", &std)] {
        let mut rec = vec![name.to_string()];
        rec.extend(vals.iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(core_csv)?;
    }
    w.flush().map_err(|e| CliError::io(&summary_path, e))?;

    for (name, (m, s)) in MetricSuite::COLUMNS.iter().zip(mean.iter().zip(&std)) {
        println!("{name:>12} {m:.4} ± {s:.4}");
    }
    write_json(
        &out.join("summary.json"),
        &EvalSummary {
            run: a.run.clone(),
            model: checkpoints[0].1.kind,
            oracle: cfg.oracle,
            test_pairs: test.len(),
            folds,
            mean,
            std,
        },
    )
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    csv::Writer::from_path(path).map_err(core_csv)
}

fn core_csv(e: csv::Error) -> CliError {
    CliError::Core(e.into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FewshotConfig {
    pub ours: Option<PathBuf>,
    pub ours_noise: Option<PathBuf>,
    pub naive: Option<PathBuf>,
    pub fold: usize,
    pub ks: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
    pub activity: ActivityConfig,
}

impl Default for FewshotConfig {
    fn default() -> Self {
        Self {
            ours: None,
            ours_noise: None,
            naive: None,
            fold: 0,
            ks: vec![1, 2, 4, 8, 16],
            repetitions: 20,
            seed: 0,
            activity: ActivityConfig::default(),
        }
    }
}

#[derive(Debug, Serialize)]
struct FewshotModelSummary {
    model: String,
    run: PathBuf,
    /// Balanced accuracy of the best threshold fitted on all images (score models only).
    full_data_bal_acc: Option<f64>,
}

pub fn fewshot(a: FewshotArgs) -> Res {
    let (mut cfg, raw): (FewshotConfig, _) = load_config(a.common.config.as_deref())?;
    if a.ours.is_some() {
        cfg.ours = a.ours.clone();
    }
    if a.ours_noise.is_some() {
        cfg.ours_noise = a.ours_noise.clone();
    }
    if a.naive.is_some() {
        cfg.naive = a.naive.clone();
    }
    set(&mut cfg.fold, a.fold);
    set(&mut cfg.ks, a.ks.clone());
    set(&mut cfg.repetitions, a.reps);
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.activity.n_images, a.n_images);
    set(&mut cfg.activity.seed, a.activity_seed);

    let models: Vec<(&str, PathBuf, ModelKind)> = [
        ("ours", cfg.ours.clone(), ModelKind::Ordinal),
        ("ours+noise", cfg.ours_noise.clone(), ModelKind::Ordinal),
        ("naive", cfg.naive.clone(), ModelKind::Naive),
    ]
    .into_iter()
    .filter_map(|(n, p, k)| p.map(|p| (n, p, k)))
    .collect();
    if models.is_empty() {
        return Err(CliError::usage("give at least one of --ours, --ours-noise, --naive"));
    }
    if cfg.ks.is_empty() || cfg.repetitions == 0 {
        return Err(CliError::usage("ks and repetitions must be non-empty"));
    }
    let loaded = models
        .iter()
        .map(|(name, run, kind)| {
            let run_cfg = load_run(run)?;
            let (path, ck) = load_checkpoint(run, cfg.fold)?;
            if ck.kind != *kind {
                return Err(CliError::usage(format!(
                    "{} holds a {:?} model but --{} expects {:?}",
                    run.display(),
                    ck.kind,
                    name.replace('+', "-"),
                    kind
                )));
            }
            Ok((*name, run.clone(), run_cfg, path, ck))
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let images = gen_activity_set(&cfg.activity)?;
    let labels: Vec<bool> = images.iter().map(|im| im.active).collect();

    rundir::create(&a.out, a.common.force)?;
    let mut inputs = Inputs::default();
    echo_config(&a.out, &cfg, raw.as_deref(), &mut inputs)?;
    for (name, _, _, path, _) in &loaded {
        inputs.file(&format!("{name}/checkpoint.json"), path)?;
    }
    inputs.write(&a.out)?;

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (name, run, run_cfg, _, ck) in &loaded {
        let params = ck.params()?;
        let xs: Vec<Vec<f64>> = images.iter().map(|im| prepare(&im.raster, &run_cfg.train.augment)).collect();
        // Identical shot draws for every model.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let full = match ck.kind {
            ModelKind::Ordinal => {
                let scores = image_logits(&params, &xs)?;
                rows.extend(fewshot_curve(name, FewshotInput::Scores(&scores), &labels, &cfg.ks, cfg.repetitions, &mut rng)?);
                Some(fit_threshold(&scores, &labels)?.fit_bal_acc)
            }
            ModelKind::Naive => {
                let feats = image_features(&params, &xs)?;
                rows.extend(fewshot_curve(name, FewshotInput::Features(&feats), &labels, &cfg.ks, cfg.repetitions, &mut rng)?);
                None
            }
        };
        summaries.push(FewshotModelSummary {
            model: name.to_string(),
            run: run.clone(),
            full_data_bal_acc: full,
        });
    }
    let path = a.out.join("fewshot_curve.csv");
    write_curve(BufWriter::new(File::create(&path).map_err(|e| CliError::io(&path, e))?), &rows)?;
    write_json(&a.out.join("summary.json"), &summaries)?;
    for r in &rows {
        println!("{:>10} k={:<3} {:.4} ± {:.4}", r.model, r.k, r.mean, r.std);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct InspectReport<'a> {
    path: &'a Path,
    format_version: u32,
    kind: ModelKind,
    fold: usize,
    epoch: usize,
    val_loss: f64,
    n_params: usize,
    encoder: &'a ordinal_state::model::EncoderConfig,
    alpha_entries: usize,
    alpha_nonzero: usize,
    gamma_min: Option<f64>,
    gamma_max: Option<f64>,
    config: &'a serde_json::Value,
}

pub fn inspect(a: InspectArgs) -> Res {
    let path = if a.checkpoint.is_dir() {
        a.checkpoint.join("checkpoint.json")
    } else {
        a.checkpoint.clone()
    };
    if !path.is_file() {
        return Err(CliError::usage(format!("missing checkpoint {}", path.display())));
    }
    let ck = Checkpoint::load(&path)?;
    let alpha = ck.alpha.values();
    let gammas = alpha.iter().map(|v| v.exp2());
    let report = InspectReport {
        path: &path,
        format_version: ck.format_version,
        kind: ck.kind,
        fold: ck.fold,
        epoch: ck.epoch,
        val_loss: ck.val_loss,
        n_params: ck.n_params,
        encoder: &ck.encoder,
        alpha_entries: alpha.len(),
        alpha_nonzero: alpha.iter().filter(|v| **v != 0.0).count(),
        gamma_min: gammas.clone().reduce(f64::min),
        gamma_max: gammas.reduce(f64::max),
        config: &ck.config,
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    Ok(())
}
