//! Command-line entry point.
//!
//! Subcommands: `gen-synth`, `train`, `eval`, `infer <image>`, `lbp <image>`,
//! `spectrum <image>`, `params`, `gradcheck`. Settings come from an INI-style
//! config file (sections `[model]`, `[train]`, `[data]`) plus command-line
//! overrides; a flag always wins over the file, and unknown keys are fatal.
//! Exit codes: 0 success, 1 usage/config error, 2 runtime error. Diagnostics
//! go to stderr, results to stdout.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data::{
    balance_undersample, gen_synthetic, load_pgm, load_ppm, normalize, save_pgm, split,
    DatasetManifest,
};
use crate::error::{Error, Result};
use crate::lbp::{lbp_histogram, lbp_map, to_gray, GrayImage};
use crate::models::{load_checkpoint, Arch, Model, ModelConfig};
use crate::nn::Mode;
use crate::spectral::{fft_2d, magnitude_spectrum};
use crate::tensor::{Tape, Tensor};
use crate::train::{evaluate, history_csv, report, train, PaperBaseline, RunSummary, TrainConfig};
use crate::verify::run_verification;

const USAGE: &str = "\
usage: cmvit <subcommand> [options]

subcommands:
  gen-synth   --n <per-class> --size <px> --out <dir> [--seed <u64>]
  train       --data <dir|manifest.csv> [--config <ini>] [--history <csv>]
              [--report <csv>] [model/train/data overrides]
  eval        --checkpoint <ckpt> --data <dir|manifest.csv> [--report <csv>]
  infer       <image.ppm> --checkpoint <ckpt>
  lbp         <image.ppm|pgm> [--out-map <pgm>] [--out-hist <csv>]
  spectrum    <image.ppm|pgm> [--out <pgm>]
  params      [--config <ini>] [model overrides]
  gradcheck   [--seed <u64>]

model overrides: --arch --image-size --patch-size --embed-dim --num-heads
  --num-blocks --mlp-ratio --cmf-channels --cmf-conv-layers --lbp-embed-dim
  --xception-middle-blocks --num-classes
train overrides: --epochs-max --batch-size --patience --min-delta
  --data-seed --init-seed --checkpoint
data overrides:  --val-fraction
";

struct Flags {
    positional: Vec<String>,
    values: BTreeMap<String, String>,
}

fn parse_flags(args: &[String]) -> Result<Flags> {
    let mut positional = Vec::new();
    let mut values = BTreeMap::new();
    let mut i = 0;
    while i < args.len() {
        let a = &args[i];
        if let Some(key) = a.strip_prefix("--") {
            let value = args
                .get(i + 1)
                .ok_or_else(|| Error::Usage(format!("flag --{key} needs a value")))?;
            if values.insert(key.to_string(), value.clone()).is_some() {
                return Err(Error::Usage(format!("flag --{key} given twice")));
            }
            i += 2;
        } else {
            positional.push(a.clone());
            i += 1;
        }
    }
    Ok(Flags { positional, values })
}

impl Flags {
    fn take(&mut self, key: &str) -> Option<String> {
        self.values.remove(key)
    }

    fn take_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Usage(format!("flag --{key}: bad value {v:?}"))),
        }
    }

    fn finish(&self, command: &str) -> Result<()> {
        if let Some(key) = self.values.keys().next() {
            return Err(Error::Usage(format!("unknown flag --{key} for {command}")));
        }
        Ok(())
    }
}

// INI parser: `[section]` headers, `key = value` lines, `#`/`;` comments
fn parse_ini(text: &str) -> Result<BTreeMap<(String, String), String>> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("config line {}: expected key = value", lineno + 1))
        })?;
        if section.is_empty() {
            return Err(Error::Config(format!(
                "config line {}: key outside a [section]",
                lineno + 1
            )));
        }
        out.insert(
            (section.clone(), key.trim().to_string()),
            value.trim().to_string(),
        );
    }
    Ok(out)
}

/// Settings merged from the config file and command-line overrides.
#[derive(Debug)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub val_fraction: f64,
}

fn parse_num<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("[{section}] {key}: bad value {value:?}")))
}

fn build_run_config(flags: &mut Flags) -> Result<RunConfig> {
    let mut file: BTreeMap<(String, String), String> = BTreeMap::new();
    if let Some(path) = flags.take("config") {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("cannot read config {path}: {e}")))?;
        file = parse_ini(&text)?;
    }
    // flags override file settings
    let flag_keys: [(&str, &str, &str); 20] = [
        ("model", "arch", "arch"),
        ("model", "image_size", "image-size"),
        ("model", "patch_size", "patch-size"),
        ("model", "embed_dim", "embed-dim"),
        ("model", "num_heads", "num-heads"),
        ("model", "num_blocks", "num-blocks"),
        ("model", "mlp_ratio", "mlp-ratio"),
        ("model", "cmf_channels", "cmf-channels"),
        ("model", "cmf_conv_layers", "cmf-conv-layers"),
        ("model", "lbp_embed_dim", "lbp-embed-dim"),
        ("model", "xception_middle_blocks", "xception-middle-blocks"),
        ("model", "num_classes", "num-classes"),
        ("train", "epochs_max", "epochs-max"),
        ("train", "batch_size", "batch-size"),
        ("train", "patience", "patience"),
        ("train", "min_delta", "min-delta"),
        ("train", "data_seed", "data-seed"),
        ("train", "init_seed", "init-seed"),
        ("train", "checkpoint", "checkpoint"),
        ("data", "val_fraction", "val-fraction"),
    ];
    for (section, key, flag) in flag_keys {
        if let Some(v) = flags.take(flag) {
            file.insert((section.to_string(), key.to_string()), v);
        }
    }

    let mut model = ModelConfig::desk(Arch::Cmvit);
    let mut train = TrainConfig::default();
    let mut val_fraction = 0.2;
    for ((section, key), value) in &file {
        match (section.as_str(), key.as_str()) {
            ("model", "arch") => model.arch = Arch::parse(value)?,
            ("model", "image_size") => model.image_size = parse_num(section, key, value)?,
            ("model", "patch_size") => model.patch_size = parse_num(section, key, value)?,
            ("model", "embed_dim") => model.embed_dim = parse_num(section, key, value)?,
            ("model", "num_heads") => model.num_heads = parse_num(section, key, value)?,
            ("model", "num_blocks") => model.num_blocks = parse_num(section, key, value)?,
            ("model", "mlp_ratio") => model.mlp_ratio = parse_num(section, key, value)?,
            ("model", "cmf_channels") => model.cmf_channels = parse_num(section, key, value)?,
            ("model", "cmf_conv_layers") => {
                model.cmf_conv_layers = parse_num(section, key, value)?
            }
            ("model", "lbp_embed_dim") => model.lbp_embed_dim = parse_num(section, key, value)?,
            ("model", "xception_middle_blocks") => {
                model.xception_middle_blocks = parse_num(section, key, value)?
            }
            ("model", "num_classes") => model.num_classes = parse_num(section, key, value)?,
            ("train", "epochs_max") => train.epochs_max = parse_num(section, key, value)?,
            ("train", "batch_size") => train.batch_size = parse_num(section, key, value)?,
            ("train", "patience") => train.patience = parse_num(section, key, value)?,
            ("train", "min_delta") => train.min_delta = parse_num(section, key, value)?,
            ("train", "data_seed") => train.data_seed = parse_num(section, key, value)?,
            ("train", "init_seed") => train.init_seed = parse_num(section, key, value)?,
            ("train", "checkpoint") => train.checkpoint_path = Some(PathBuf::from(value)),
            ("data", "val_fraction") => val_fraction = parse_num(section, key, value)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown config key [{section}] {key}"
                )))
            }
        }
    }
    model.validate()?;
    train.validate()?;
    Ok(RunConfig {
        model,
        train,
        val_fraction,
    })
}

fn load_manifest_arg(data: &str) -> Result<DatasetManifest> {
    let path = Path::new(data);
    if path.is_file() {
        DatasetManifest::load_csv(path)
    } else if path.join("manifest.csv").is_file() {
        DatasetManifest::load_csv(&path.join("manifest.csv"))
    } else {
        DatasetManifest::discover(path)
    }
}

// accepts P6 (converted to gray) or P5 input for the feature subcommands
fn load_gray_arg(path: &str) -> Result<GrayImage> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(b"P6") {
        Ok(to_gray(&load_ppm(&bytes)?))
    } else {
        load_pgm(&bytes)
    }
}

fn out_path(input: &str, explicit: Option<String>, suffix: &str) -> PathBuf {
    match explicit {
        Some(p) => PathBuf::from(p),
        None => {
            let p = Path::new(input);
            let stem = p.file_stem().unwrap_or_default().to_string_lossy();
            p.with_file_name(format!("{stem}{suffix}"))
        }
    }
}

fn cmd_gen_synth(mut flags: Flags) -> Result<()> {
    let n: usize = flags
        .take_parsed("n")?
        .ok_or_else(|| Error::Usage("gen-synth needs --n".into()))?;
    let size: usize = flags
        .take_parsed("size")?
        .ok_or_else(|| Error::Usage("gen-synth needs --size".into()))?;
    let out: String = flags
        .take("out")
        .ok_or_else(|| Error::Usage("gen-synth needs --out".into()))?;
    let seed: u64 = flags.take_parsed("seed")?.unwrap_or(0);
    flags.finish("gen-synth")?;
    let manifest = gen_synthetic(n, size, seed, Path::new(&out))?;
    println!(
        "{}",
        Path::new(&out).join("manifest.csv").display()
    );
    eprintln!(
        "generated {} samples per class ({} files) under {out}",
        n,
        manifest.len()
    );
    Ok(())
}

fn cmd_params(mut flags: Flags) -> Result<()> {
    let cfg = build_run_config(&mut flags)?;
    flags.finish("params")?;
    let model = Model::<f32>::new(cfg.model, cfg.train.init_seed)?;
    println!("{}", model.count_parameters());
    Ok(())
}

fn cmd_train(mut flags: Flags) -> Result<()> {
    let data = flags
        .take("data")
        .ok_or_else(|| Error::Usage("train needs --data".into()))?;
    let history_path = flags.take("history").unwrap_or_else(|| "history.csv".into());
    let report_path = flags.take("report");
    let mut cfg = build_run_config(&mut flags)?;
    flags.finish("train")?;
    if cfg.train.checkpoint_path.is_none() {
        cfg.train.checkpoint_path = Some(PathBuf::from("model.ckpt"));
    }

    let manifest = load_manifest_arg(&data)?;
    let balanced = balance_undersample(&manifest, cfg.train.data_seed)?;
    let (train_set, val_set) = split(&balanced, cfg.val_fraction, cfg.train.data_seed)?;
    eprintln!(
        "training {} on {} train / {} val samples",
        cfg.model.arch.name(),
        train_set.len(),
        val_set.len()
    );

    let (_final_model, outcome) = train::<f32>(&cfg.model, &cfg.train, &train_set, &val_set)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    for r in &outcome.history {
        eprintln!(
            "epoch {:>3}: train loss {:.4} acc {:.3} | val loss {:.4} acc {:.3}",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
        );
    }
    std::fs::write(&history_path, history_csv(&outcome.history))?;

    // evaluate the retained best checkpoint
    let ckpt = cfg.train.checkpoint_path.as_ref().unwrap();
    let mut best = load_checkpoint::<f32>(ckpt)?;
    let metrics = evaluate(&mut best, &val_set, cfg.train.batch_size)?;
    let last = outcome.history.last().unwrap();
    if let Some(path) = report_path {
        let summary = RunSummary {
            model_name: cfg.model.arch.name().to_string(),
            trainable_params: best.count_parameters(),
            epochs: outcome.epochs_ran,
            batch_size: cfg.train.batch_size,
            training_loss: last.train_loss,
            training_accuracy: last.train_acc,
            metrics: metrics.clone(),
        };
        std::fs::write(&path, report(&[summary], &PaperBaseline::default()))?;
        eprintln!("report written to {path}");
    }
    println!(
        "{},epochs={},best_epoch={},best_val_loss={:.6},val_acc={:.4},checkpoint={}",
        cfg.model.arch.name(),
        outcome.epochs_ran,
        outcome.best_epoch,
        outcome.best_val_loss,
        metrics.accuracy,
        ckpt.display()
    );
    Ok(())
}

fn cmd_eval(mut flags: Flags) -> Result<()> {
    let ckpt = flags
        .take("checkpoint")
        .ok_or_else(|| Error::Usage("eval needs --checkpoint".into()))?;
    let data = flags
        .take("data")
        .ok_or_else(|| Error::Usage("eval needs --data".into()))?;
    let batch_size: usize = flags.take_parsed("batch-size")?.unwrap_or(64);
    let report_path = flags.take("report");
    flags.finish("eval")?;

    let mut model = load_checkpoint::<f32>(Path::new(&ckpt))?;
    let manifest = load_manifest_arg(&data)?;
    let metrics = evaluate(&mut model, &manifest, batch_size)?;
    println!("accuracy,{:.6}", metrics.accuracy);
    for (c, f1) in metrics.f1_per_class.iter().enumerate() {
        println!("f1_class{c},{f1:.6}");
    }
    println!("mean_loss,{:.6}", metrics.mean_loss);
    println!("time_per_file,{:.6}", metrics.time_per_file);
    if let Some(path) = report_path {
        let summary = RunSummary {
            model_name: model.config.arch.name().to_string(),
            trainable_params: model.count_parameters(),
            epochs: 0,
            batch_size,
            training_loss: f64::NAN,
            training_accuracy: f64::NAN,
            metrics,
        };
        std::fs::write(&path, report(&[summary], &PaperBaseline::default()))?;
        eprintln!("report written to {path}");
    }
    Ok(())
}

fn cmd_infer(mut flags: Flags) -> Result<()> {
    let image_path = flags
        .positional
        .first()
        .cloned()
        .ok_or_else(|| Error::Usage("infer needs an image argument".into()))?;
    let ckpt = flags
        .take("checkpoint")
        .ok_or_else(|| Error::Usage("infer needs --checkpoint".into()))?;
    flags.finish("infer")?;

    let mut model = load_checkpoint::<f32>(Path::new(&ckpt))?;
    let bytes = std::fs::read(&image_path)?;
    let img = load_ppm(&bytes)?;
    let t: Tensor<f32> = normalize(&img);
    let s = model.config.image_size;
    if img.width != s || img.height != s {
        return Err(Error::contract(format!(
            "{image_path}: size {}x{} does not match model image_size {s}",
            img.width, img.height
        )));
    }
    let batch = Tensor::from_vec(&[1, 3, s, s], t.data)?;
    let mut tape = Tape::new();
    let probs = model.forward_probs(&mut tape, &batch, Mode::Eval)?;
    let p = &tape.value(probs).data;
    let label = if p[0] >= p[1] { "real" } else { "fake" };
    println!("{label},{:.6},{:.6}", p[0], p[1]);
    Ok(())
}

fn cmd_lbp(mut flags: Flags) -> Result<()> {
    let image_path = flags
        .positional
        .first()
        .cloned()
        .ok_or_else(|| Error::Usage("lbp needs an image argument".into()))?;
    let map_path = out_path(&image_path, flags.take("out-map"), "_lbp.pgm");
    let hist_path = out_path(&image_path, flags.take("out-hist"), "_lbp_hist.csv");
    flags.finish("lbp")?;

    let gray = load_gray_arg(&image_path)?;
    let map = lbp_map(&gray, &crate::lbp::LBPConfig::default())?;
    std::fs::write(&map_path, save_pgm(&map))?;
    let counts = lbp_histogram(&map, false);
    let total: f64 = counts.iter().sum();
    let mut csv = String::from("code,count,fraction\n");
    for (code, &count) in counts.iter().enumerate() {
        csv.push_str(&format!("{code},{count},{:.6}\n", count / total));
    }
    std::fs::write(&hist_path, csv)?;
    println!("{}", map_path.display());
    println!("{}", hist_path.display());
    Ok(())
}

fn cmd_spectrum(mut flags: Flags) -> Result<()> {
    let image_path = flags
        .positional
        .first()
        .cloned()
        .ok_or_else(|| Error::Usage("spectrum needs an image argument".into()))?;
    let out = out_path(&image_path, flags.take("out"), "_spectrum.pgm");
    flags.finish("spectrum")?;

    let gray = load_gray_arg(&image_path)?;
    // zero-pad to power-of-two extents, as the frequency branch does
    let (h, w) = (
        gray.height.next_power_of_two(),
        gray.width.next_power_of_two(),
    );
    let mut plane = Tensor::<f64>::zeros(&[h, w]);
    for y in 0..gray.height {
        for x in 0..gray.width {
            plane.data[y * w + x] = gray.at(x, y) as f64;
        }
    }
    let mag = magnitude_spectrum(&fft_2d(&plane)?);
    let peak = mag.data.iter().cloned().fold(0.0f64, f64::max).max(1e-12);
    let values: Vec<u8> = mag
        .data
        .iter()
        .map(|v| (v / peak * 255.0).round() as u8)
        .collect();
    let img = GrayImage::new(w, h, values)?;
    std::fs::write(&out, save_pgm(&img))?;
    println!("{}", out.display());
    Ok(())
}

fn cmd_gradcheck(mut flags: Flags) -> Result<()> {
    let seed: u64 = flags.take_parsed("seed")?.unwrap_or(17);
    flags.finish("gradcheck")?;
    let checks = run_verification(seed)?;
    let mut failures = 0;
    for c in &checks {
        let status = if c.passed() { "ok  " } else { "FAIL" };
        println!(
            "{status} {:<28} max_rel_err={:.3e} tol={:.0e}",
            c.name, c.max_rel_err, c.tolerance
        );
        if !c.passed() {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(Error::contract(format!("{failures} gradient checks failed")));
    }
    eprintln!("all {} checks passed", checks.len());
    Ok(())
}

/// Dispatches one CLI invocation; returns the process exit code.
pub fn run_cli(args: &[String]) -> i32 {
    let Some(command) = args.first() else {
        eprint!("{USAGE}");
        return 1;
    };
    if command == "--help" || command == "help" {
        print!("{USAGE}");
        return 0;
    }
    let flags = match parse_flags(&args[1..]) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            eprint!("{USAGE}");
            return 1;
        }
    };
    let result = match command.as_str() {
        "gen-synth" => cmd_gen_synth(flags),
        "train" => cmd_train(flags),
        "eval" => cmd_eval(flags),
        "infer" => cmd_infer(flags),
        "lbp" => cmd_lbp(flags),
        "spectrum" => cmd_spectrum(flags),
        "params" => cmd_params(flags),
        "gradcheck" => cmd_gradcheck(flags),
        other => {
            eprintln!("error: unknown subcommand {other:?}");
            eprint!("{USAGE}");
            return 1;
        }
    };
    match result {
        Ok(()) => 0,
        Err(e @ (Error::Usage(_) | Error::Config(_))) => {
            eprintln!("error: {e}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ini_parsing() {
        let text = "# comment\n[model]\narch = xception\nembed_dim = 24\n\n[train]\nepochs_max = 3\n";
        let map = parse_ini(text).unwrap();
        assert_eq!(
            map[&("model".to_string(), "arch".to_string())],
            "xception"
        );
        assert_eq!(map[&("train".to_string(), "epochs_max".to_string())], "3");
        assert!(parse_ini("key = 1\n").is_err(), "key outside section");
        assert!(parse_ini("[model]\nbroken line\n").is_err());
    }

    #[test]
    fn unknown_config_key_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ini");
        std::fs::write(&path, "[model]\nnumber_of_heads = 4\n").unwrap();
        let mut flags = parse_flags(&["--config".to_string(), path.display().to_string()]).unwrap();
        let err = build_run_config(&mut flags).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("number_of_heads"));
    }

    #[test]
    fn flag_overrides_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.ini");
        std::fs::write(&path, "[model]\narch = cmvit\nembed_dim = 32\n").unwrap();
        let mut flags = parse_flags(&[
            "--config".to_string(),
            path.display().to_string(),
            "--embed-dim".to_string(),
            "16".to_string(),
        ])
        .unwrap();
        let cfg = build_run_config(&mut flags).unwrap();
        assert_eq!(cfg.model.embed_dim, 16);
        assert_eq!(cfg.model.arch, Arch::Cmvit);
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        let mut flags = parse_flags(&["--frobnicate".to_string(), "1".to_string()]).unwrap();
        let _ = build_run_config(&mut flags);
        assert!(flags.finish("params").is_err());
    }
}
