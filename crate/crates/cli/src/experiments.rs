//! The experiment commands: synth1d, pretrain, finetune, sweep-beta.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use ovepg_core::data::{
    gen_1d_synth, load_idx_with, subset_per_class, Dataset, IdxOptions, ImageOrientation,
};
use ovepg_core::models::{
    init_model, load_model_file, save_model_file, Activation, Model, ModelPair, ModelSpec,
};
use ovepg_core::objective::ObjectiveMode;
use ovepg_core::ove::softmax_probability;
use ovepg_core::pg::TruncationPolicy;
use ovepg_core::posterior::OmegaMode;
use ovepg_core::rng::RngState;
use ovepg_core::trainer::{evaluate, train, Schedule, TrainConfig, TrainReport};

use crate::config::{parse_grid, Resolver};
use crate::runio::{write_atomic, write_json, RunDir};
use crate::{CliError, ExitOutcome};

/// Offset between the train seed and the held-out synthetic test seed.
const SYNTH_TEST_SEED_OFFSET: u64 = 0x7e57;

/// Resolve a data path against OVEPG_DATA_DIR when it is relative and does
/// not exist as given.
pub fn resolve_data_path(raw: &str) -> PathBuf {
    let p = PathBuf::from(raw);
    if p.is_absolute() || p.exists() {
        return p;
    }
    match std::env::var_os("OVEPG_DATA_DIR") {
        Some(root) => PathBuf::from(root).join(p),
        None => p,
    }
}

fn train_config_from(resolver: &Resolver) -> Result<TrainConfig<f64>, CliError> {
    let objective: ObjectiveMode = resolver.parse("objective")?;
    let mut cfg = TrainConfig::defaults(objective, resolver.parse("epochs")?, resolver.parse("seed")?);
    cfg.alpha = resolver.parse("alpha")?;
    cfg.beta = resolver.parse("beta")?;
    cfg.chains = resolver.parse("chains")?;
    cfg.lr = resolver.parse("lr")?;
    cfg.schedule = resolver.parse::<Schedule>("schedule")?;
    cfg.batch_size = resolver.parse("batch-size")?;
    cfg.omega_mode = match resolver.get("omega-mode") {
        "mean" => OmegaMode::Mean,
        "sample" => OmegaMode::Sample,
        other => {
            return Err(CliError::parse(format!(
                "unknown omega-mode '{other}' (mean|sample)"
            )))
        }
    };
    cfg.truncation = TruncationPolicy::new(resolver.parse("pg-terms")?, true)
        .map_err(CliError::from_core)?;
    cfg.early_stop = resolver.parse("early-stop")?;
    cfg.validate().map_err(CliError::from_core)?;
    Ok(cfg)
}

fn print_report_line(command: &str, report: &TrainReport, dir: &Path) {
    let mut line = format!(
        "{command} objective={} seed={} epochs={} final_loss={:.6} train_acc={:.4}",
        report.config.objective,
        report.seed,
        report.epochs.len(),
        report.epochs.last().map(|e| e.mean_total).unwrap_or(f64::NAN),
        report.train_accuracy,
    );
    if let Some(t) = report.test_accuracy {
        line.push_str(&format!(" test_acc={t:.4}"));
    }
    if let (Some(s), Some(u), Some(h)) = (
        report.seen_accuracy,
        report.unseen_accuracy,
        report.harmonic_mean,
    ) {
        line.push_str(&format!(" seen={s:.4} unseen={u:.4} hm={h:.4}"));
    }
    line.push_str(&format!(" out={}", dir.display()));
    println!("{line}");
}

// ---------------------------------------------------------------------------
// synth1d
// ---------------------------------------------------------------------------

pub fn synth1d_defaults() -> Vec<(&'static str, String)> {
    vec![
        ("objective", "ove_pg".into()),
        ("alpha", "100".into()),
        ("beta", "0".into()),
        ("chains", "4".into()),
        ("lr", "0.0005".into()),
        ("schedule", "cosine".into()),
        ("epochs", "400".into()),
        ("batch-size", "4".into()),
        ("seed", "1".into()),
        ("omega-mode", "mean".into()),
        ("pg-terms", "200".into()),
        ("early-stop", "false".into()),
        ("n-per-class", "100".into()),
        ("degree", "3".into()),
        ("out-dir", "runs".into()),
    ]
}

/// The 1D three-Gaussian study: train a polynomial-basis pair under the
/// configured objective and emit class-probability curves on the fixed
/// grid x ∈ [−6, 6], step 0.05.
pub fn run_synth1d(resolver: &Resolver) -> Result<ExitOutcome, CliError> {
    let cfg = train_config_from(resolver)?;
    let n_per_class: usize = resolver.parse("n-per-class")?;
    let degree: usize = resolver.parse("degree")?;
    let out_dir = PathBuf::from(resolver.get("out-dir"));

    let data = gen_1d_synth::<f64>(n_per_class, cfg.seed).map_err(CliError::from_core)?;
    let test = gen_1d_synth::<f64>(n_per_class, cfg.seed.wrapping_add(SYNTH_TEST_SEED_OFFSET))
        .map_err(CliError::from_core)?;

    let spec = ModelSpec::Poly { degree, classes: 3 };
    let model = init_model::<f64>(&spec, &RngState::new(cfg.seed)).map_err(CliError::from_core)?;
    let mut pair = ModelPair::freeze_as_prior(model);

    let mut run = RunDir::create(
        &out_dir,
        "synth1d",
        resolver,
        cfg.seed,
        &[],
        &["metrics.jsonl", "report.json", "curves.csv"],
    )?;

    let mut report = train(&mut pair, &data, &cfg).map_err(CliError::from_core)?;
    report.test_accuracy =
        Some(evaluate(pair.tuned(), &test).map_err(CliError::from_core)?);

    let csv = probability_curves_csv(&pair)?;
    write_atomic(&run.path("curves.csv"), csv.as_bytes())?;
    run.write_training_outputs(&report)?;
    print_report_line("synth1d", &report, &run.dir);
    Ok(ExitOutcome::ok())
}

/// Softmax class probabilities of the tuned model over the plotting grid.
fn probability_curves_csv(pair: &ModelPair<f64>) -> Result<String, CliError> {
    let grid = curve_grid();
    let mut x = Array2::zeros((grid.len(), 1));
    for (i, &v) in grid.iter().enumerate() {
        x[(i, 0)] = v;
    }
    let (logits, _) = pair.tuned().forward(&x).map_err(CliError::from_core)?;
    let probs = softmax_probability(&logits);
    let classes = logits.classes();
    let mut csv = String::from("x");
    for c in 0..classes {
        csv.push_str(&format!(",p_class{c}"));
    }
    csv.push('\n');
    for (i, &v) in grid.iter().enumerate() {
        csv.push_str(&format!("{v}"));
        for c in 0..classes {
            csv.push_str(&format!(",{}", probs[(i, c)]));
        }
        csv.push('\n');
    }
    Ok(csv)
}

/// x ∈ [−6, 6] in steps of 0.05: 241 points, exact endpoints.
pub fn curve_grid() -> Vec<f64> {
    (0..=240).map(|i| -6.0 + 0.05 * i as f64).collect()
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

pub fn pretrain_defaults() -> Vec<(&'static str, String)> {
    vec![
        ("objective", "softmax".into()),
        ("alpha", "100".into()),
        ("beta", "0".into()),
        ("chains", "1".into()),
        ("lr", "0.1".into()),
        ("schedule", "cosine".into()),
        ("epochs", "3".into()),
        ("batch-size", "64".into()),
        ("seed", "1".into()),
        ("omega-mode", "mean".into()),
        ("pg-terms", "200".into()),
        ("early-stop", "false".into()),
        ("images", String::new()),
        ("labels", String::new()),
        ("test-images", String::new()),
        ("test-labels", String::new()),
        ("transpose", "false".into()),
        ("hidden", "64".into()),
        ("activation", "relu".into()),
        ("classes", String::new()),
        ("out-dir", "runs".into()),
    ]
}

fn load_pair_of_paths(
    resolver: &Resolver,
    images_key: &str,
    labels_key: &str,
    transpose: bool,
    classes: Option<usize>,
) -> Result<Option<(Dataset<f64>, PathBuf, PathBuf)>, CliError> {
    let images_raw = resolver.get(images_key);
    let labels_raw = resolver.get(labels_key);
    match (images_raw.is_empty(), labels_raw.is_empty()) {
        (true, true) => Ok(None),
        (false, false) => {
            let images = resolve_data_path(images_raw);
            let labels = resolve_data_path(labels_raw);
            let options = IdxOptions {
                orientation: if transpose {
                    ImageOrientation::Transposed
                } else {
                    ImageOrientation::Standard
                },
                expected_classes: classes,
            };
            let data = load_idx_with::<f64>(&images, &labels, options)
                .map_err(CliError::from_core)?;
            Ok(Some((data, images, labels)))
        }
        _ => Err(CliError::parse(format!(
            "--{images_key} and --{labels_key} must be given together"
        ))),
    }
}

/// Train an MLP from scratch (the "pre-trained" model of the protocol) and
/// save its checkpoint.
pub fn run_pretrain(resolver: &Resolver) -> Result<ExitOutcome, CliError> {
    let cfg = train_config_from(resolver)?;
    let transpose: bool = resolver.parse("transpose")?;
    let classes: Option<usize> = resolver.parse_opt("classes")?;
    let (data, images, labels) = load_pair_of_paths(resolver, "images", "labels", transpose, classes)?
        .ok_or_else(|| CliError::parse("--images and --labels are required".into()))?;
    let test = load_pair_of_paths(
        resolver,
        "test-images",
        "test-labels",
        transpose,
        Some(data.class_count()),
    )?;

    let hidden: usize = resolver.parse("hidden")?;
    let activation: Activation = resolver.parse("activation")?;
    let spec = ModelSpec::Mlp {
        layer_sizes: vec![data.width(), hidden, data.class_count()],
        activation,
    };
    let model = init_model::<f64>(&spec, &RngState::new(cfg.seed)).map_err(CliError::from_core)?;
    // Pretraining has no earlier prior; pair against the init so the KL
    // term (beta defaults to 0 here) references something well-defined.
    let mut pair = ModelPair::freeze_as_prior(model);

    let mut inputs: Vec<&Path> = vec![&images, &labels];
    let (test_data, t_img, t_lbl) = match &test {
        Some((d, i, l)) => (Some(d), Some(i.clone()), Some(l.clone())),
        None => (None, None, None),
    };
    if let (Some(i), Some(l)) = (&t_img, &t_lbl) {
        inputs.push(i);
        inputs.push(l);
    }

    let out_dir = PathBuf::from(resolver.get("out-dir"));
    let mut run = RunDir::create(
        &out_dir,
        "pretrain",
        resolver,
        cfg.seed,
        &inputs,
        &["metrics.jsonl", "report.json", "model.ovepg"],
    )?;

    let mut report = train(&mut pair, &data, &cfg).map_err(CliError::from_core)?;
    if let Some(t) = test_data {
        report.test_accuracy = Some(evaluate(pair.tuned(), t).map_err(CliError::from_core)?);
    }
    save_model_file(pair.tuned().model(), &run.path("model.ovepg")).map_err(CliError::from_core)?;
    run.write_training_outputs(&report)?;
    print_report_line("pretrain", &report, &run.dir);
    Ok(ExitOutcome::ok())
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

pub fn finetune_defaults() -> Vec<(&'static str, String)> {
    vec![
        ("objective", "ove_pg".into()),
        ("alpha", "100".into()),
        ("beta", "0.3".into()),
        ("chains", "4".into()),
        ("lr", "0.002".into()),
        ("schedule", "cosine".into()),
        ("epochs", "10".into()),
        ("batch-size", "4".into()),
        ("seed", "1".into()),
        ("omega-mode", "mean".into()),
        ("pg-terms", "200".into()),
        ("early-stop", "false".into()),
        ("model", String::new()),
        ("train-images", String::new()),
        ("train-labels", String::new()),
        ("seen-images", String::new()),
        ("seen-labels", String::new()),
        ("unseen-images", String::new()),
        ("unseen-labels", String::new()),
        ("transpose-train", "false".into()),
        ("transpose-seen", "false".into()),
        ("transpose-unseen", "false".into()),
        ("subset-per-class", "100".into()),
        ("out-dir", "runs".into()),
    ]
}

struct FinetuneData {
    train: Dataset<f64>,
    seen: Option<Dataset<f64>>,
    unseen: Option<Dataset<f64>>,
    input_paths: Vec<PathBuf>,
}

fn load_finetune_data(resolver: &Resolver, classes: usize) -> Result<FinetuneData, CliError> {
    let mut input_paths = Vec::new();
    let (train_full, ti, tl) = load_pair_of_paths(
        resolver,
        "train-images",
        "train-labels",
        resolver.parse("transpose-train")?,
        Some(classes),
    )?
    .ok_or_else(|| CliError::parse("--train-images and --train-labels are required".into()))?;
    input_paths.push(ti);
    input_paths.push(tl);

    let k: usize = resolver.parse("subset-per-class")?;
    let train = subset_per_class(&train_full, k).map_err(CliError::from_core)?;

    let seen = load_pair_of_paths(
        resolver,
        "seen-images",
        "seen-labels",
        resolver.parse("transpose-seen")?,
        Some(classes),
    )?
    .map(|(d, i, l)| {
        input_paths.push(i);
        input_paths.push(l);
        d
    });
    let unseen = load_pair_of_paths(
        resolver,
        "unseen-images",
        "unseen-labels",
        resolver.parse("transpose-unseen")?,
        Some(classes),
    )?
    .map(|(d, i, l)| {
        input_paths.push(i);
        input_paths.push(l);
        d
    });

    Ok(FinetuneData {
        train,
        seen,
        unseen,
        input_paths,
    })
}

fn finetune_once(
    resolver: &Resolver,
    pair: &mut ModelPair<f64>,
    data: &FinetuneData,
    run: &mut RunDir,
) -> Result<TrainReport, CliError> {
    let cfg = train_config_from(resolver)?;
    let mut report = train(pair, &data.train, &cfg).map_err(CliError::from_core)?;
    match (&data.seen, &data.unseen) {
        (Some(seen), Some(unseen)) => {
            let seen_acc = evaluate(pair.tuned(), seen).map_err(CliError::from_core)?;
            let unseen_acc = evaluate(pair.tuned(), unseen).map_err(CliError::from_core)?;
            report
                .set_seen_unseen(seen_acc, unseen_acc)
                .map_err(CliError::from_core)?;
        }
        (Some(seen), None) => {
            report.seen_accuracy =
                Some(evaluate(pair.tuned(), seen).map_err(CliError::from_core)?);
        }
        (None, Some(unseen)) => {
            report.unseen_accuracy =
                Some(evaluate(pair.tuned(), unseen).map_err(CliError::from_core)?);
        }
        (None, None) => {}
    }
    run.write_training_outputs(&report)?;
    Ok(report)
}

/// Fine-tune a pretrained checkpoint: the loaded model freezes into the
/// prior, an identical copy trains on the per-class subset, and accuracy is
/// reported on the seen (pretraining) and unseen (fine-tune) test sets.
pub fn run_finetune(resolver: &Resolver) -> Result<ExitOutcome, CliError> {
    let model_raw = resolver.get("model");
    if model_raw.is_empty() {
        return Err(CliError::parse("--model is required".into()));
    }
    let model_path = resolve_data_path(model_raw);
    let model: Model<f64> = load_model_file(&model_path).map_err(CliError::from_core)?;
    let classes = model.classes();
    let data = load_finetune_data(resolver, classes)?;
    let mut pair = ModelPair::freeze_as_prior(model);

    let seed: u64 = resolver.parse("seed")?;
    let out_dir = PathBuf::from(resolver.get("out-dir"));
    let mut inputs: Vec<&Path> = vec![&model_path];
    inputs.extend(data.input_paths.iter().map(|p| p.as_path()));
    let mut run = RunDir::create(
        &out_dir,
        "finetune",
        resolver,
        seed,
        &inputs,
        &["metrics.jsonl", "report.json"],
    )?;
    let report = finetune_once(resolver, &mut pair, &data, &mut run)?;
    print_report_line("finetune", &report, &run.dir);
    Ok(ExitOutcome::ok())
}

// ---------------------------------------------------------------------------
// sweep-beta
// ---------------------------------------------------------------------------

pub fn sweep_beta_defaults() -> Vec<(&'static str, String)> {
    let mut d = finetune_defaults();
    d.push(("grid", "0.1:0.7:0.1".into()));
    d
}

#[derive(serde::Serialize)]
struct SweepRow {
    beta: f64,
    seen: Option<f64>,
    unseen: Option<f64>,
    harmonic_mean: Option<f64>,
    train_accuracy: f64,
    kl_distance: f64,
    report_dir: String,
}

/// Run finetune across a β grid and emit one report per β plus a summary
/// table with Seen/Unseen/HM columns (percent).
pub fn run_sweep_beta(resolver: &Resolver) -> Result<ExitOutcome, CliError> {
    let grid = parse_grid(resolver.get("grid"))?;
    let model_raw = resolver.get("model");
    if model_raw.is_empty() {
        return Err(CliError::parse("--model is required".into()));
    }
    let model_path = resolve_data_path(model_raw);
    let model: Model<f64> = load_model_file(&model_path).map_err(CliError::from_core)?;
    let classes = model.classes();
    let data = load_finetune_data(resolver, classes)?;

    let seed: u64 = resolver.parse("seed")?;
    let out_dir = PathBuf::from(resolver.get("out-dir"));
    let mut inputs: Vec<&Path> = vec![&model_path];
    inputs.extend(data.input_paths.iter().map(|p| p.as_path()));
    let mut sweep_run = RunDir::create(
        &out_dir,
        "sweep-beta",
        resolver,
        seed,
        &inputs,
        &["summary.json", "summary.csv"],
    )?;

    let sweep_started = std::time::Instant::now();
    let mut rows = Vec::with_capacity(grid.len());
    for &beta in &grid {
        // Children are plain finetune runs: same keys minus the grid, so a
        // standalone `finetune` with these flags lands in the same run dir.
        let mut child = Resolver::new(&finetune_defaults());
        for (k, v) in resolver.entries() {
            if k != "grid" {
                child.set_known(k, v)?;
            }
        }
        child.set_flag("beta", Some(beta));
        let mut pair = ModelPair::freeze_as_prior(model.clone());
        let mut run = RunDir::create(
            &out_dir,
            "finetune",
            &child,
            seed,
            &inputs,
            &["metrics.jsonl", "report.json"],
        )?;
        let report = finetune_once(&child, &mut pair, &data, &mut run)?;
        println!(
            "sweep-beta beta={beta} seen={:?} unseen={:?} hm={:?} out={}",
            report.seen_accuracy,
            report.unseen_accuracy,
            report.harmonic_mean,
            run.dir.display()
        );
        rows.push(SweepRow {
            beta,
            seen: report.seen_accuracy,
            unseen: report.unseen_accuracy,
            harmonic_mean: report.harmonic_mean,
            train_accuracy: report.train_accuracy,
            kl_distance: report.kl_distance,
            report_dir: run.dir.display().to_string(),
        });
    }

    write_json(&sweep_run.path("summary.json"), &rows)?;
    let mut csv = String::from("beta,seen_pct,unseen_pct,hm_pct,train_acc,kl_distance\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.beta,
            row.seen.map(|v| format!("{:.2}", v * 100.0)).unwrap_or_default(),
            row.unseen.map(|v| format!("{:.2}", v * 100.0)).unwrap_or_default(),
            row.harmonic_mean
                .map(|v| format!("{:.2}", v * 100.0))
                .unwrap_or_default(),
            row.train_accuracy,
            row.kl_distance,
        ));
    }
    write_atomic(&sweep_run.path("summary.csv"), csv.as_bytes())?;
    sweep_run.complete(sweep_started.elapsed().as_secs_f64())?;
    println!("sweep-beta grid={:?} out={}", grid, sweep_run.dir.display());
    Ok(ExitOutcome::ok())
}
