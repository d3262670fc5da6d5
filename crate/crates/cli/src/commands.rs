//! Subcommand implementations.

use std::path::PathBuf;

use s3t_core::csp::{apply_filter, fit_ovr_filter};
use s3t_core::io;
use s3t_core::model::{Ablation, ModelConfig, ModelParams};
use s3t_core::preprocess::{bandpass_trial, fit_standardization, segment, standardize, Trial};
use s3t_core::synth::{generate_synthetic, Mixing, SynthClass, SynthSpec};
use s3t_core::train::{evaluate, run_cv, train, CspConfig, CvOutcome, FilteredTrial, TrainConfig};
use s3t_core::{Error, Result};

use crate::args::{parse_band, parse_list, Args};

fn parse_ablation(raw: &str) -> Result<Ablation> {
    let mut ablation = Ablation::none();
    match raw {
        "none" => {}
        "spatial" => ablation.drop_spatial = true,
        "temporal" => ablation.drop_temporal = true,
        "posenc" => ablation.drop_posenc = true,
        "ff" => ablation.drop_ff = true,
        other => {
            return Err(Error::Usage(format!(
                "--drop must be one of spatial|temporal|posenc|ff, got `{other}`"
            )))
        }
    }
    Ok(ablation)
}

/// Model flags shared by train/eval/cv/ablate/sweep/params.
fn model_config_from_flags(
    args: &mut Args,
    n_feature_channels: usize,
    t_samples: usize,
    n_classes: usize,
) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::new(n_feature_channels, t_samples, n_classes);
    cfg.slice_d = args.take_parse("slice", cfg.slice_d)?;
    cfg.n_heads = args.take_parse("heads", cfg.n_heads)?;
    cfg.k_c = args.take_parse("kc", cfg.k_c)?;
    cfg.n_f = args.take_parse("nf", cfg.n_f)?;
    cfg.n_a = args.take_parse("na", cfg.n_a)?;
    cfg.d_k = args.take_parse("dk", cfg.n_heads * cfg.slice_d)?;
    cfg.d_v = args.take_parse("dv", cfg.n_heads * cfg.slice_d)?;
    cfg.dropout_spatial = args.take_parse("dropout-spatial", cfg.dropout_spatial)?;
    cfg.dropout_temporal = args.take_parse("dropout-temporal", cfg.dropout_temporal)?;
    if let Some(drop) = args.take("drop") {
        cfg.ablation = parse_ablation(&drop)?;
    }
    Ok(cfg)
}

fn train_config_from_flags(args: &mut Args) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    cfg.learning_rate = args.take_parse("lr", cfg.learning_rate)?;
    cfg.beta1 = args.take_parse("beta1", cfg.beta1)?;
    cfg.beta2 = args.take_parse("beta2", cfg.beta2)?;
    cfg.batch_size = args.take_parse("batch", cfg.batch_size)?;
    cfg.epochs = args.take_parse("epochs", cfg.epochs)?;
    cfg.seed = args.take_parse("seed", cfg.seed)?;
    cfg.folds = args.take_parse("folds", cfg.folds)?;
    Ok(cfg)
}

fn apply_band(trials: &[Trial], band: Option<(f64, f64)>) -> Result<Vec<Trial>> {
    match band {
        None => Ok(trials.to_vec()),
        Some((lo, hi)) => trials.iter().map(|t| bandpass_trial(t, lo, hi)).collect(),
    }
}

fn to_filtered(filter: &s3t_core::csp::SpatialFilter, trials: &[Trial]) -> Result<Vec<FilteredTrial>> {
    trials
        .iter()
        .map(|t| {
            Ok(FilteredTrial {
                features: apply_filter(filter, t)?,
                label: t.label,
            })
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "n/a".into())
}

fn print_report_table(report: &s3t_core::train::EvalReport) {
    println!("label  Accuracy  Precision  Recall  Specificity  F-score");
    for (k, m) in report.per_class.iter().enumerate() {
        println!(
            "c{k:<5} {:<9} {:<10} {:<7} {:<12} {}",
            fmt_opt(m.accuracy),
            fmt_opt(m.precision),
            fmt_opt(m.recall),
            fmt_opt(m.specificity),
            fmt_opt(m.f_score),
        );
    }
    println!("overall accuracy: {:.2}", report.overall_accuracy);
}

// ── synth ────────────────────────────────────────────────────────────

pub fn cmd_synth(mut args: Args) -> Result<()> {
    let out: PathBuf = args.require("out")?.into();
    let n_classes: usize = args.take_parse("classes", 4)?;
    let trials_per_class: usize = args.take_parse("trials-per-class", 40)?;
    let n_channels: usize = args.take_parse("channels", 8)?;
    let t_samples: usize = args.take_parse("samples", 1000)?;
    let fs: f64 = args.take_parse("fs", 250.0)?;
    let noise: f64 = args.take_parse("noise", 0.7)?;
    let seed: u64 = args.take_parse("seed", 42)?;
    let std_high: f64 = args.take_parse("std-high", 2.2)?;
    let std_low: f64 = args.take_parse("std-low", 0.5)?;
    let mixing = match args.take("mixing").as_deref() {
        None => Mixing::Seeded(77),
        Some("identity") => Mixing::Identity,
        Some(raw) => Mixing::Seeded(raw.parse().map_err(|_| {
            Error::Usage(format!("--mixing must be `identity` or a seed, got `{raw}`"))
        })?),
    };
    let freqs: Vec<f64> = match args.take("freqs") {
        Some(raw) => parse_list(&raw, "--freqs")?,
        None => {
            // Evenly spread rhythms inside the pass band.
            (0..n_classes)
                .map(|k| 7.0 + 20.0 * k as f64 / (n_classes.max(2) - 1) as f64)
                .collect()
        }
    };
    args.finish()?;
    if freqs.len() != n_classes {
        return Err(Error::Usage(format!(
            "--freqs lists {} rhythms for {} classes",
            freqs.len(),
            n_classes
        )));
    }
    if n_channels < n_classes {
        return Err(Error::Usage(format!(
            "need at least one channel per class ({n_channels} channels, {n_classes} classes)"
        )));
    }

    // Class k puts high variance on channels congruent to k modulo N, so
    // every class has a distinct covariance signature.
    let classes: Vec<SynthClass> = freqs
        .iter()
        .enumerate()
        .map(|(k, &rhythm_hz)| SynthClass {
            rhythm_hz,
            source_stds: (0..n_channels)
                .map(|j| if j % n_classes == k { std_high } else { std_low })
                .collect(),
        })
        .collect();
    let spec = SynthSpec {
        n_channels,
        t_samples,
        fs,
        trials_per_class,
        classes,
        mixing,
        noise_sigma: noise,
        seed,
    };
    let trials = generate_synthetic(&spec)?;
    let set = io::TrialSet {
        trials,
        n_classes,
        fs,
    };
    set.validate()?;
    io::write_trial_set(&out, &set)?;
    println!(
        "wrote {} trials ({} classes, {}x{} at {} Hz) to {}",
        set.trials.len(),
        n_classes,
        n_channels,
        t_samples,
        fs,
        out.display()
    );
    Ok(())
}

// ── preprocess ───────────────────────────────────────────────────────

pub fn cmd_preprocess(mut args: Args) -> Result<()> {
    let input: PathBuf = args.require("in")?.into();
    let out: PathBuf = args.require("out")?.into();
    let band = parse_band(&args.take("band").unwrap_or_else(|| "4:40".into()))?;
    let window = match args.take("window") {
        None => None,
        Some(raw) => {
            let parts: Vec<&str> = raw.split(':').collect();
            let parsed = if parts.len() == 2 {
                parts[0].parse::<f64>().ok().zip(parts[1].parse::<f64>().ok())
            } else {
                None
            };
            Some(parsed.ok_or_else(|| {
                Error::Usage(format!("--window must look like `2:6` (seconds), got `{raw}`"))
            })?)
        }
    };
    let stats_out: PathBuf = args
        .take("stats-out")
        .map(Into::into)
        .unwrap_or_else(|| out.with_extension("stats"));
    args.finish()?;

    let set = io::read_trial_set(&input)?;
    let banded = apply_band(&set.trials, band)?;
    // Re-cut each stored trial to the window, filtering first so the cut
    // keeps no filter edge transient.
    let banded = match window {
        None => banded,
        Some((t0, t1)) => banded
            .iter()
            .map(|t| {
                let rec = s3t_core::preprocess::Recording {
                    data: t.data.clone(),
                    fs: t.fs,
                    subject_id: t.subject_id.clone(),
                };
                let cut = segment(&rec, &[(0, t.label)], (t0, t1))?;
                Ok(cut.into_iter().next().expect("one event yields one trial"))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let stats = fit_standardization(&banded, &input.display().to_string())?;
    let standardized: Vec<Trial> = banded
        .iter()
        .map(|t| standardize(t, &stats))
        .collect::<Result<_>>()?;
    let out_set = io::TrialSet::from_trials(standardized, set.n_classes)?;
    io::write_trial_set(&out, &out_set)?;
    io::write_stats(&stats_out, &stats)?;
    match band {
        Some((lo, hi)) => println!(
            "band-passed [{lo}, {hi}] Hz and standardized {} trials -> {}",
            out_set.trials.len(),
            out.display()
        ),
        None => println!(
            "standardized {} trials (no band-pass) -> {}",
            out_set.trials.len(),
            out.display()
        ),
    }
    println!("statistics -> {}", stats_out.display());
    Ok(())
}

// ── fit-csp ──────────────────────────────────────────────────────────

pub fn cmd_fit_csp(mut args: Args) -> Result<()> {
    let input: PathBuf = args.require("in")?.into();
    let out: PathBuf = args.require("out")?.into();
    let set_file = io::read_trial_set(&input)?;
    let n_classes: usize = args.take_parse("classes", set_file.n_classes)?;
    let s_rows: usize = args.require_parse("rows")?;
    args.finish()?;

    let filter = fit_ovr_filter(&set_file.trials, n_classes, s_rows)?;
    io::write_filter(&out, &filter)?;
    println!(
        "fitted OVR-CSP filter: W is {}x{} ({} sub-filters, S = {s_rows}) -> {}",
        filter.n_rows(),
        filter.n_channels(),
        filter.subfilters.len(),
        out.display()
    );
    for sub in &filter.subfilters {
        let vals: Vec<String> = sub.eigvals_one.iter().map(|v| format!("{v:.4}")).collect();
        println!("  class {}: eigenvalues {}", sub.one_class, vals.join(" "));
    }
    Ok(())
}

// ── train ────────────────────────────────────────────────────────────

pub fn cmd_train(mut args: Args) -> Result<()> {
    let input: PathBuf = args.require("in")?.into();
    let csp_path: PathBuf = args.require("csp")?.into();
    let out: PathBuf = args.require("out")?.into();
    let set = io::read_trial_set(&input)?;
    let filter = io::read_filter(&csp_path)?;
    let model_cfg = model_config_from_flags(&mut args, filter.n_rows(), set.samples(), set.n_classes)?;
    let train_cfg = train_config_from_flags(&mut args)?;
    args.finish()?;

    let filtered = to_filtered(&filter, &set.trials)?;
    let (params, losses) = train(&filtered, &model_cfg, &train_cfg)?;
    io::write_checkpoint(&out, &model_cfg, &params)?;
    println!(
        "trained {} epochs on {} trials: loss {:.4} -> {:.4}; {} parameters -> {}",
        train_cfg.epochs,
        filtered.len(),
        losses.first().copied().unwrap_or(f64::NAN),
        losses.last().copied().unwrap_or(f64::NAN),
        params.count_params(),
        out.display()
    );
    Ok(())
}

// ── eval ─────────────────────────────────────────────────────────────

pub fn cmd_eval(mut args: Args) -> Result<()> {
    let input: PathBuf = args.require("in")?.into();
    let csp_path: PathBuf = args.require("csp")?.into();
    let ckpt_path: PathBuf = args.require("ckpt")?.into();
    let out: Option<PathBuf> = args.take("out").map(Into::into);
    args.finish()?;

    let set = io::read_trial_set(&input)?;
    let filter = io::read_filter(&csp_path)?;
    let (model_cfg, params) = io::read_checkpoint(&ckpt_path)?;
    if filter.n_rows() != model_cfg.n_feature_channels {
        return Err(Error::Data(format!(
            "filter provides {} feature channels but the checkpoint expects {}",
            filter.n_rows(),
            model_cfg.n_feature_channels
        )));
    }
    let filtered = to_filtered(&filter, &set.trials)?;
    let report = evaluate(&params, &model_cfg, &filtered)?;
    print_report_table(&report);
    if let Some(path) = out {
        io::write_report(&path, &report)?;
        println!("report -> {}", path.display());
    }
    Ok(())
}

// ── cv ───────────────────────────────────────────────────────────────

struct CvSetup {
    set: io::TrialSet,
    band: Option<(f64, f64)>,
    model_template: ModelConfig,
    train_cfg: TrainConfig,
    csp_cfg: CspConfig,
}

fn cv_setup(args: &mut Args) -> Result<CvSetup> {
    let input: PathBuf = args.require("in")?.into();
    let set = io::read_trial_set(&input)?;
    let band = parse_band(&args.take("band").unwrap_or_else(|| "4:40".into()))?;
    let n_classes: usize = args.take_parse("classes", set.n_classes)?;
    let s_rows: usize = args.take_parse("rows", 2)?;
    let n_sub = if n_classes == 2 { 1 } else { n_classes };
    let model_template =
        model_config_from_flags(args, n_sub * s_rows, set.samples(), n_classes)?;
    let train_cfg = train_config_from_flags(args)?;
    Ok(CvSetup {
        set,
        band,
        model_template,
        train_cfg,
        csp_cfg: CspConfig { n_classes, s_rows },
    })
}

fn cv_execute(setup: &CvSetup, ablation: Ablation) -> Result<CvOutcome> {
    let trials = apply_band(&setup.set.trials, setup.band)?;
    let mut template = setup.model_template.clone();
    template.ablation = ablation;
    run_cv(&trials, &template, &setup.train_cfg, setup.csp_cfg, None)
}

fn print_cv_outcome(outcome: &CvOutcome) {
    for (fold, acc) in outcome.pooled.fold_accuracies.iter().enumerate() {
        println!("fold {fold}: accuracy {acc:.2}");
    }
    println!(
        "mean accuracy {:.2} (std {:.2}) over {} folds",
        outcome.mean_accuracy(),
        outcome.std_accuracy(),
        outcome.pooled.fold_accuracies.len()
    );
    print_report_table(&outcome.pooled);
}

pub fn cmd_cv(mut args: Args) -> Result<()> {
    let out: Option<PathBuf> = args.take("out").map(Into::into);
    let setup = cv_setup(&mut args)?;
    args.finish()?;
    let outcome = cv_execute(&setup, setup.model_template.ablation)?;
    print_cv_outcome(&outcome);
    if let Some(path) = out {
        io::write_report(&path, &outcome.pooled)?;
        println!("report -> {}", path.display());
    }
    Ok(())
}

// ── ablate ───────────────────────────────────────────────────────────

pub fn cmd_ablate(mut args: Args) -> Result<()> {
    let out: Option<PathBuf> = args.take("out").map(Into::into);
    let out_full: Option<PathBuf> = args.take("out-full").map(Into::into);
    let drop_raw = args.require("drop")?;
    let ablation = parse_ablation(&drop_raw)?;
    if ablation == Ablation::none() {
        return Err(Error::Usage(
            "--drop must name a stage: spatial|temporal|posenc|ff".into(),
        ));
    }
    let setup = cv_setup(&mut args)?;
    args.finish()?;

    let full = cv_execute(&setup, Ablation::none())?;
    let ablated = cv_execute(&setup, ablation)?;
    println!(
        "full model:    mean accuracy {:.2} (std {:.2})",
        full.mean_accuracy(),
        full.std_accuracy()
    );
    println!(
        "drop {drop_raw}: mean accuracy {:.2} (std {:.2})",
        ablated.mean_accuracy(),
        ablated.std_accuracy()
    );
    println!(
        "delta: {:+.2}",
        ablated.mean_accuracy() - full.mean_accuracy()
    );
    if let Some(path) = out {
        io::write_report(&path, &ablated.pooled)?;
        println!("ablated report -> {}", path.display());
    }
    if let Some(path) = out_full {
        io::write_report(&path, &full.pooled)?;
        println!("full report -> {}", path.display());
    }
    Ok(())
}

// ── sweep ────────────────────────────────────────────────────────────

pub fn cmd_sweep(mut args: Args) -> Result<()> {
    let out: Option<PathBuf> = args.take("out").map(Into::into);
    let param = args.require("param")?;
    if param != "slice_d" && param != "kc" {
        return Err(Error::Usage(format!(
            "--param must be slice_d or kc, got `{param}`"
        )));
    }
    let values: Vec<usize> = parse_list(&args.require("values")?, "--values")?;
    if values.is_empty() {
        return Err(Error::Usage("--values must list at least one value".into()));
    }
    let setup = cv_setup(&mut args)?;
    args.finish()?;

    let mut rows = Vec::new();
    println!("{param}  mean  std");
    for &value in &values {
        let mut template = setup.model_template.clone();
        match param.as_str() {
            "slice_d" => {
                template.slice_d = value;
                template.d_k = template.n_heads * value;
                template.d_v = template.n_heads * value;
            }
            _ => template.k_c = value,
        }
        let trial_setup = CvSetup {
            set: io::TrialSet {
                trials: setup.set.trials.clone(),
                n_classes: setup.set.n_classes,
                fs: setup.set.fs,
            },
            band: setup.band,
            model_template: template,
            train_cfg: setup.train_cfg.clone(),
            csp_cfg: setup.csp_cfg,
        };
        let outcome = cv_execute(&trial_setup, trial_setup.model_template.ablation)?;
        println!(
            "{value}  {:.2}  {:.2}",
            outcome.mean_accuracy(),
            outcome.std_accuracy()
        );
        rows.push((value, outcome.mean_accuracy(), outcome.std_accuracy()));
    }
    if let Some(path) = out {
        let mut csv = format!("{param},mean_accuracy,std_accuracy\n");
        for (v, mean, std) in &rows {
            csv.push_str(&format!("{v},{mean:.2},{std:.2}\n"));
        }
        std::fs::write(&path, csv)?;
        println!("sweep table -> {}", path.display());
    }
    Ok(())
}

// ── params ───────────────────────────────────────────────────────────

pub fn cmd_params(mut args: Args) -> Result<()> {
    if let Some(ckpt) = args.take("ckpt") {
        args.finish()?;
        let (cfg, params) = io::read_checkpoint(&PathBuf::from(ckpt))?;
        println!(
            "{} trainable parameters ({} feature channels, T = {}, {} classes)",
            params.count_params(),
            cfg.n_feature_channels,
            cfg.t_samples,
            cfg.n_classes
        );
        return Ok(());
    }
    let channels: usize = args.take_parse("channels", 16)?;
    let samples: usize = args.take_parse("samples", 1000)?;
    let classes: usize = args.take_parse("classes", 4)?;
    let cfg = model_config_from_flags(&mut args, channels, samples, classes)?;
    args.finish()?;
    cfg.validate()?;
    let params = ModelParams::init(&cfg, 0);
    println!("{} trainable parameters", params.count_params());
    for (name, tensor) in params.tensors() {
        println!("  {name}: {}x{}", tensor.rows, tensor.cols);
    }
    Ok(())
}
