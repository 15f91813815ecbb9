//! Diagnostic commands: pg-check, ove-inspect, eval.

use ndarray::{Array1, Array2};
use ovepg_core::data::{load_idx_with, IdxOptions, ImageOrientation};
use ovepg_core::models::{load_model_file, Model, TrackedModel};
use ovepg_core::ove::{
    build_a_tensor, build_kappa, build_psi, ove_log_scores, softmax_probability, Logits,
    OneHotLabels,
};
use ovepg_core::pg::{pg_mean, sample_pg, TruncationPolicy};
use ovepg_core::rng::RngState;
use ovepg_core::trainer::evaluate;

use crate::config::Resolver;
use crate::experiments::resolve_data_path;
use crate::{CliError, ExitOutcome};

// ---------------------------------------------------------------------------
// pg-check
// ---------------------------------------------------------------------------

pub fn pg_check_defaults() -> Vec<(&'static str, String)> {
    vec![
        ("draws", "200000".into()),
        ("threshold", "0.02".into()),
        ("seed", "1".into()),
        ("pg-terms", "200".into()),
    ]
}

/// Moment validation: sample means over the (b, c) grid must sit within
/// `threshold` relative error of the analytic mean b·tanh(c/2)/(2c).
pub fn run_pg_check(resolver: &Resolver) -> Result<ExitOutcome, CliError> {
    let draws: usize = resolver.parse("draws")?;
    let threshold: f64 = resolver.parse("threshold")?;
    let seed: u64 = resolver.parse("seed")?;
    let policy = TruncationPolicy::new(resolver.parse("pg-terms")?, true)
        .map_err(CliError::from_core)?;

    let b_values = [1.0, 2.0];
    let c_values = [0.0, 0.1, 0.5, 1.0, 2.0, 4.0];
    let mut worst: f64 = 0.0;
    let mut failures = 0usize;
    for (bi, &b) in b_values.iter().enumerate() {
        for (ci, &c) in c_values.iter().enumerate() {
            let state = RngState::new(seed).substream(&[bi as u64, ci as u64]);
            let tilts = Array1::from_elem(draws, c);
            let samples = sample_pg(b, &tilts, &policy, &state).map_err(CliError::from_core)?;
            let sample_mean = samples.sum() / draws as f64;
            let analytic = pg_mean(b, c).map_err(CliError::from_core)?;
            let rel = (sample_mean - analytic).abs() / analytic;
            let ok = rel <= threshold;
            if !ok {
                failures += 1;
            }
            worst = worst.max(rel);
            println!(
                "pg-check b={b} c={c} draws={draws} sample_mean={sample_mean:.6} analytic={analytic:.6} rel_err={rel:.5} {}",
                if ok { "ok" } else { "FAIL" }
            );
        }
    }
    if failures > 0 {
        return Err(CliError::numerical(format!(
            "{failures} moment checks exceeded {threshold} relative error (worst {worst:.5})"
        )));
    }
    println!("pg-check all moments within {threshold} (worst rel_err {worst:.5})");
    Ok(ExitOutcome::ok())
}

// ---------------------------------------------------------------------------
// ove-inspect
// ---------------------------------------------------------------------------

pub fn ove_inspect_defaults() -> Vec<(&'static str, String)> {
    vec![
        ("classes", String::new()),
        ("logits", String::new()),
        ("labels", String::new()),
        ("include-diagonal", "false".into()),
    ]
}

/// Parse "1,2,3;4,5,6" into an n×C matrix.
fn parse_matrix(raw: &str) -> Result<Array2<f64>, CliError> {
    let rows: Vec<&str> = raw.split(';').collect();
    let mut values = Vec::new();
    let mut width = None;
    for row in &rows {
        let entries: Vec<f64> = row
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| CliError::parse(format!("bad logit '{v}': {e}")))
            })
            .collect::<Result<_, _>>()?;
        match width {
            None => width = Some(entries.len()),
            Some(w) if w != entries.len() => {
                return Err(CliError::parse("ragged logit rows".into()))
            }
            _ => {}
        }
        values.extend(entries);
    }
    let w = width.unwrap_or(0);
    Array2::from_shape_vec((rows.len(), w), values)
        .map_err(|e| CliError::parse(format!("logit matrix: {e}")))
}

/// Dump the comparison tensor and, when logits/labels are given, ψ, κ,
/// per-class OVE log scores and softmax probabilities, as JSON on stdout.
pub fn run_ove_inspect(resolver: &Resolver) -> Result<ExitOutcome, CliError> {
    let logits_raw = resolver.get("logits");
    let labels_raw = resolver.get("labels");
    let include_diagonal: bool = resolver.parse("include-diagonal")?;

    let logits = if logits_raw.is_empty() {
        None
    } else {
        Some(Logits::new(parse_matrix(logits_raw)?).map_err(CliError::from_core)?)
    };
    let classes: usize = match (resolver.parse_opt::<usize>("classes")?, &logits) {
        (Some(c), Some(l)) if c != l.classes() => {
            return Err(CliError::parse(format!(
                "--classes {c} conflicts with logits width {}",
                l.classes()
            )))
        }
        (Some(c), _) => c,
        (None, Some(l)) => l.classes(),
        (None, None) => {
            return Err(CliError::parse(
                "need --classes or --logits to size the tensors".into(),
            ))
        }
    };
    if classes > 16 {
        return Err(CliError::parse(format!(
            "inspector is for small inputs; {classes} classes is too many (max 16)"
        )));
    }

    let a = build_a_tensor::<f64>(classes).map_err(CliError::from_core)?;
    let mut doc = serde_json::json!({
        "classes": classes,
        "a_tensor": tensor3_json(a.values()),
    });

    if let Some(l) = &logits {
        let psi = build_psi(&l.clone());
        doc["psi"] = tensor3_json(psi.values());
        doc["ove_log_scores"] = matrix_json(&ove_log_scores(&psi, include_diagonal));
        doc["softmax"] = matrix_json(&softmax_probability(l));
    }
    if !labels_raw.is_empty() {
        let class_list: Vec<usize> = labels_raw
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|e| CliError::parse(format!("bad label '{v}': {e}")))
            })
            .collect::<Result<_, _>>()?;
        let labels =
            OneHotLabels::from_classes(&class_list, classes).map_err(CliError::from_core)?;
        if let Some(l) = &logits {
            if labels.samples() != l.samples() {
                return Err(CliError::parse(format!(
                    "{} labels vs {} logit rows",
                    labels.samples(),
                    l.samples()
                )));
            }
        }
        doc["kappa"] = tensor3_json(build_kappa::<f64>(&labels).values());
    }

    println!("{}", serde_json::to_string_pretty(&doc).expect("json"));
    Ok(ExitOutcome::ok())
}

fn tensor3_json(t: &ndarray::Array3<f64>) -> serde_json::Value {
    let (a, b, c) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let nested: Vec<Vec<Vec<f64>>> = (0..a)
        .map(|i| {
            (0..b)
                .map(|j| (0..c).map(|k| t[(i, j, k)]).collect())
                .collect()
        })
        .collect();
    serde_json::json!(nested)
}

fn matrix_json(m: &Array2<f64>) -> serde_json::Value {
    let nested: Vec<Vec<f64>> = m.rows().into_iter().map(|r| r.to_vec()).collect();
    serde_json::json!(nested)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

pub fn eval_defaults() -> Vec<(&'static str, String)> {
    vec![
        ("model", String::new()),
        ("images", String::new()),
        ("labels", String::new()),
        ("transpose", "false".into()),
    ]
}

/// Load a checkpoint, evaluate argmax accuracy on a dataset, print one JSON
/// line.
pub fn run_eval(resolver: &Resolver) -> Result<ExitOutcome, CliError> {
    let model_raw = resolver.get("model");
    let images_raw = resolver.get("images");
    let labels_raw = resolver.get("labels");
    if model_raw.is_empty() || images_raw.is_empty() || labels_raw.is_empty() {
        return Err(CliError::parse("--model, --images and --labels are required".into()));
    }
    let model: Model<f64> =
        load_model_file(&resolve_data_path(model_raw)).map_err(CliError::from_core)?;
    let transpose: bool = resolver.parse("transpose")?;
    let options = IdxOptions {
        orientation: if transpose {
            ImageOrientation::Transposed
        } else {
            ImageOrientation::Standard
        },
        expected_classes: Some(model.classes()),
    };
    let data = load_idx_with::<f64>(
        &resolve_data_path(images_raw),
        &resolve_data_path(labels_raw),
        options,
    )
    .map_err(CliError::from_core)?;
    let tracked = TrackedModel::new(model);
    let accuracy = evaluate(&tracked, &data).map_err(CliError::from_core)?;
    println!(
        "{}",
        serde_json::json!({
            "command": "eval",
            "model": model_raw,
            "images": images_raw,
            "n": data.len(),
            "accuracy": accuracy,
        })
    );
    Ok(ExitOutcome::ok())
}
