use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use svdcnn::architecture::{
    closed_form_params, count_params, gap_head_weights, kmax_head_weights, reconcile, reduction_percent, round2,
    standard_block_weights, storage_size, tdsc_block_weights, ArchitectureSpec, Family, GoldenTable, Model,
    ParamReport, Verdict, DEFAULT_GOLDEN,
};
use svdcnn::bench::{format_table, latency_ratio, measure_latency, BenchConfig, LatencyStats};
use svdcnn::data::{load_csv, quantize, synth_dataset, Dataset, Vocabulary};
use svdcnn::ops::softmax;
use svdcnn::training::{load_checkpoint, save_checkpoint, train_with_callback, TrainConfig};

use crate::{BenchArgs, TrainArgs};

fn report_rows(a: &ParamReport, b: &ParamReport) -> String {
    let mut out = format!("{:<12} {:>14} {:>14}\n", "category", "enumerated", "closed form");
    for (name, x, y) in [
        ("embedding", a.embedding, b.embedding),
        ("conv", a.conv, b.conv),
        ("batchnorm", a.batchnorm, b.batchnorm),
        ("fc", a.fc, b.fc),
        ("total", a.total, b.total),
    ] {
        out.push_str(&format!("{name:<12} {x:>14} {y:>14}\n"));
    }
    out.push_str(&format!(
        "{:<12} {:>14.2} {:>14.2}\n",
        "storage MB", a.storage_mb, b.storage_mb
    ));
    out
}

pub fn describe(spec: &ArchitectureSpec, json: bool) -> Result<bool> {
    let closed = closed_form_params(spec)?;
    let counted = count_params(&Model::<f32>::build(spec, 0)?);
    let head_weights = match spec.family {
        Family::Vdcnn => kmax_head_weights(spec.k, spec.fc_hidden, spec.n_classes),
        Family::Svdcnn => gap_head_weights(spec.k, spec.n_classes),
    };
    if json {
        let value = serde_json::json!({
            "spec": spec,
            "enumerated": counted,
            "closed_form": closed,
            "classifier_weights": head_weights,
        });
        println!("{}", serde_json::to_string_pretty(&value)?);
    } else {
        println!(
            "{}-{} with {} classes, s = {}, k = {}",
            spec.family, spec.depth, spec.n_classes, spec.seq_len, spec.k
        );
        print!("{}", report_rows(&counted, &closed));
        println!("classifier weights without biases: {head_weights}");
        println!(
            "total {:.2}M parameters, {:.2} MB at 32 bits",
            counted.total as f64 / 1e6,
            round2(counted.storage_mb)
        );
    }
    ensure!(
        counted.same_counts(&closed),
        "enumerated and closed-form counts disagree"
    );
    Ok(true)
}

fn check_line(ok: bool, what: &str, detail: String) -> bool {
    println!("{} {what}: {detail}", if ok { "ok  " } else { "FAIL" });
    ok
}

pub fn verify(golden: Option<&Path>, tolerance: f64) -> Result<bool> {
    ensure!(
        tolerance.is_finite() && tolerance >= 0.0,
        "tolerance must be a non-negative number"
    );
    let table = match golden {
        Some(path) => {
            ensure!(path.is_file(), "reference table {} not found", path.display());
            GoldenTable::load(path).with_context(|| format!("reading {}", path.display()))?
        }
        None => GoldenTable::parse(DEFAULT_GOLDEN)?,
    };
    ensure!(!table.rows.is_empty(), "reference table has no rows");
    let mut all_ok = true;

    let (std_block, sep_block) = (standard_block_weights(128, 256), tdsc_block_weights(128, 256));
    let block_red = reduction_percent(std_block, sep_block);
    all_ok &= check_line(
        std_block == 294_912,
        "standard block 128->256",
        format!("{std_block} weights"),
    );
    all_ok &= check_line(
        sep_block == 99_456,
        "separable block 128->256",
        format!("{sep_block} weights"),
    );
    all_ok &= check_line(block_red == 66.28, "block reduction", format!("{block_red:.2}%"));
    let (kmax, gap) = (kmax_head_weights(8, 2048, 4), gap_head_weights(8, 4));
    all_ok &= check_line(kmax == 12_591_104, "k-max classifier", format!("{kmax} weights"));
    all_ok &= check_line(gap == 16_384, "pooled classifier", format!("{gap} weights"));
    let mb = round2(storage_size(1_580_000));
    all_ok &= check_line(mb == 6.03, "storage of 1.58M parameters", format!("{mb:.2} MB"));

    println!();
    println!(
        "{:<10} {:<8} {:>9} {:>9} {:>8}  verdict",
        "model", "category", "measured", "reference", "diff"
    );
    let mut flagged = Vec::new();
    for row in &table.rows {
        let spec = ArchitectureSpec::new(row.family, row.depth, 4);
        let closed = match closed_form_params(&spec) {
            Ok(r) => r,
            Err(e) => {
                println!("{}-{}: {e}", row.family, row.depth);
                all_ok = false;
                continue;
            }
        };
        let counted = count_params(&Model::<f32>::build(&spec, 0)?);
        all_ok &= check_line(
            counted.same_counts(&closed),
            &format!("{}-{} enumeration", row.family, row.depth),
            format!("{} parameters", counted.total),
        );
        let rec = reconcile(&counted, row, tolerance);
        for d in &rec.diffs {
            let verdict = match d.verdict {
                Verdict::Pass => "pass",
                Verdict::Flagged => "FLAGGED",
                Verdict::Fail => "FAIL",
            };
            println!(
                "{:<10} {:<8} {:>9.2} {:>9.2} {:>+7.1}%  {verdict}",
                format!("{}-{}", row.family, row.depth),
                d.category,
                d.measured,
                d.reference,
                100.0 * d.relative
            );
            if d.verdict == Verdict::Flagged {
                flagged.push(format!("{}-{} {}", row.family, row.depth, d.category));
            }
        }
        all_ok &= rec.ok();
    }
    if !flagged.is_empty() {
        println!(
            "\nflagged (known to disagree with the layer description): {}",
            flagged.join(", ")
        );
    }
    println!(
        "\n{}",
        if all_ok {
            "verification passed"
        } else {
            "verification FAILED"
        }
    );
    Ok(all_ok)
}

fn history_path(args: &TrainArgs) -> PathBuf {
    args.history.clone().unwrap_or_else(|| {
        let mut name = args.out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".history.jsonl");
        args.out.with_file_name(name)
    })
}

fn check_writable_dir(path: &Path) -> Result<()> {
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    ensure!(parent.is_dir(), "output directory {} does not exist", parent.display());
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<bool> {
    let spec = args.model.spec();
    spec.validate()?;
    let cfg = TrainConfig {
        lr: args.lr,
        momentum: args.momentum,
        weight_decay: args.weight_decay,
        batch_size: args.batch,
        max_epochs: args.epochs,
        seed: args.seed,
        eval_every: args.eval_every,
    };
    cfg.validate()?;
    for p in [&args.csv, &args.val].into_iter().flatten() {
        ensure!(p.is_file(), "dataset {} not found", p.display());
    }
    let history_file = history_path(args);
    check_writable_dir(&args.out)?;
    check_writable_dir(&history_file)?;

    let (train_set, val_set): (Dataset, Dataset) = match (&args.csv, &args.val) {
        (Some(csv), Some(val)) => {
            let vocab = Vocabulary::default();
            (
                load_csv(csv, spec.n_classes, &vocab, spec.seq_len)?,
                load_csv(val, spec.n_classes, &vocab, spec.seq_len)?,
            )
        }
        _ => (
            synth_dataset(args.train_size, spec.n_classes, spec.seq_len, args.seed)?,
            synth_dataset(args.val_size, spec.n_classes, spec.seq_len, args.seed.wrapping_add(1))?,
        ),
    };
    println!(
        "training {}-{} on {} samples ({} validation): lr={} momentum={} wd={} batch={} epochs={} seed={}",
        spec.family,
        spec.depth,
        train_set.len(),
        val_set.len(),
        cfg.lr,
        cfg.momentum,
        cfg.weight_decay,
        cfg.batch_size,
        cfg.max_epochs,
        cfg.seed
    );

    let mut model = Model::<f32>::build(&spec, args.seed)?;
    let mut history =
        BufWriter::new(File::create(&history_file).with_context(|| format!("creating {}", history_file.display()))?);
    let mut write_err = None;
    let outcome = train_with_callback(&mut model, &train_set, &val_set, &cfg, |r| {
        match r.val_accuracy {
            Some(a) => println!("epoch {:>3}  loss {:.4}  val acc {:.4}", r.epoch, r.train_loss, a),
            None => println!("epoch {:>3}  loss {:.4}", r.epoch, r.train_loss),
        }
        let line = serde_json::to_string(r).map_err(anyhow::Error::from);
        if let Err(e) = line.and_then(|l| {
            writeln!(history, "{l}")
                .and_then(|_| history.flush())
                .map_err(Into::into)
        }) {
            write_err.get_or_insert(e);
        }
    });
    if let Some(e) = write_err {
        return Err(e.context(format!("writing {}", history_file.display())));
    }
    let outcome = outcome.context("training aborted")?;
    save_checkpoint(&model, outcome.best_epoch, &outcome.history, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "best val acc {:.4} at epoch {}; checkpoint {}; history {}",
        outcome.best_val_accuracy,
        outcome.best_epoch,
        args.out.display(),
        history_file.display()
    );
    Ok(true)
}

pub fn predict(checkpoint: &Path, text: &str, json: bool) -> Result<bool> {
    let ckpt = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let model = ckpt.model;
    let input = quantize(text, &Vocabulary::default(), model.spec.seq_len);
    let probs = softmax(&model.predict(&input, 1)?);
    let probs = probs.data();
    let class = (0..probs.len()).fold(0, |best, c| if probs[c] > probs[best] { c } else { best });
    // Classes are reported 1-based, matching the CSV labels.
    if json {
        let value = serde_json::json!({ "class": class + 1, "probabilities": probs });
        println!("{value}");
    } else {
        println!("class {}", class + 1);
        for (c, p) in probs.iter().enumerate() {
            println!("  {:>3}  {p:.6}", c + 1);
        }
    }
    Ok(true)
}

fn read_stats(path: &Path) -> Result<LatencyStats> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn bench(args: &BenchArgs) -> Result<bool> {
    if let Some(paths) = &args.compare {
        let [a, b] = paths.as_slice() else {
            bail!("--compare takes exactly two files");
        };
        let (a, b) = (read_stats(a)?, read_stats(b)?);
        print!("{}", format_table(&[a.clone(), b.clone()]));
        println!("ratio {} / {} = {:.2}", a.model, b.model, latency_ratio(&a, &b)?);
        return Ok(true);
    }
    if let Some(json) = &args.json {
        check_writable_dir(json)?;
    }
    let model = match &args.checkpoint {
        Some(path) => {
            load_checkpoint(path)
                .with_context(|| format!("loading {}", path.display()))?
                .model
        }
        None => Model::<f32>::build(&args.model.spec(), args.seed)?,
    };
    let sample = synth_dataset(1, 1, model.spec.seq_len, args.seed)?;
    let input: Vec<usize> = sample.samples[0].indices.iter().map(|&i| usize::from(i)).collect();
    let cfg = BenchConfig {
        reps: args.reps,
        warmup: args.warmup,
        ..BenchConfig::default()
    };
    let stats = measure_latency(&model, &input, &cfg)?;
    print!("{}", format_table(std::slice::from_ref(&stats)));
    if let Some(json) = &args.json {
        std::fs::write(json, serde_json::to_string_pretty(&stats)?)
            .with_context(|| format!("writing {}", json.display()))?;
    }
    Ok(true)
}
