//! Command-line driver: prepare data, train, sweep the ablation grid,
//! compute diagnostics and export trees.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde::Serialize;

use rae::analysis::{
    default_reversers, export_dot, height_stats, period_adjacency_rate, reverser_reversal_rate,
    sample_annotations, tree_record, write_trees_jsonl, TreeRecord,
};
use rae::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use rae::config::{ResolvedConfig, RunConfig};
use rae::corpus::{load_polarity, split_corpus, LabeledCorpus, Vocab};
use rae::lbfgs::StopReason;
use rae::model::Cutoff;
use rae::pipeline::{build_forests, run_ablation, AblationInputs};
use rae::training::{finite_diff_check, random_check_instance, train};
use rae::RaeError;

#[derive(Parser)]
#[command(
    name = "rae",
    version,
    about = "Recursive autoencoder for sentence sentiment"
)]
struct Cli {
    /// Run configuration file (TOML); required by every command except
    /// grad-check.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory from the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 picks one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, split and summarize the corpus.
    Prepare,
    /// Train the model and write a checkpoint plus iteration log.
    Train,
    /// Run the ablation grid against a trained checkpoint.
    Ablate {
        /// Checkpoint path (default: <out_dir>/checkpoint.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Tree diagnostics and seeded annotation samples.
    Analyze {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Export trees as DOT files and structured records.
    ExportTrees {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// How many sentences to export (default from the config).
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Compare analytic gradients against finite differences on random
    /// small instances; needs no config.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        let code = err
            .downcast_ref::<RaeError>()
            .map_or(2, RaeError::exit_code);
        std::process::exit(code);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("building the thread pool")?;
    }
    if let Command::GradCheck {
        instances,
        epsilon,
        tolerance,
        seed,
    } = &cli.command
    {
        return cmd_grad_check(*instances, *epsilon, *tolerance, *seed);
    }

    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| RaeError::Config("--config is required for this command".into()))?;
    let resolved = RunConfig::load(config_path)?.resolve(cli.seed, cli.out.clone());
    resolved.validate()?;
    fs::create_dir_all(&resolved.out_dir).map_err(|e| RaeError::io(&resolved.out_dir, e))?;

    match cli.command {
        Command::Prepare => cmd_prepare(&resolved),
        Command::Train => cmd_train(&resolved),
        Command::Ablate { checkpoint } => cmd_ablate(&resolved, checkpoint),
        Command::Analyze { checkpoint } => cmd_analyze(&resolved, checkpoint),
        Command::ExportTrees { checkpoint, limit } => {
            cmd_export_trees(&resolved, checkpoint, limit)
        }
        Command::GradCheck { .. } => unreachable!("handled above"),
    }
}

struct Prepared {
    train_corpus: LabeledCorpus,
    test_corpus: LabeledCorpus,
    full_corpus: LabeledCorpus,
    skipped_lines: usize,
}

fn prepare_data(resolved: &ResolvedConfig) -> anyhow::Result<Prepared> {
    let load = load_polarity(&resolved.data.positive, &resolved.data.negative)?;
    let (train_corpus, test_corpus) = split_corpus(
        &load.corpus,
        resolved.data.split_fraction,
        resolved.split_seed,
    )?;
    Ok(Prepared {
        train_corpus,
        test_corpus,
        full_corpus: load.corpus,
        skipped_lines: load.skipped_lines,
    })
}

fn write_manifest(resolved: &ResolvedConfig, command: &str) -> anyhow::Result<()> {
    #[derive(Serialize)]
    struct Manifest<'a> {
        command: &'a str,
        config_hash: String,
        config: &'a ResolvedConfig,
    }
    let path = resolved.out_dir.join(format!("manifest-{command}.json"));
    write_json(
        &path,
        &Manifest {
            command,
            config_hash: resolved.hash(),
            config: resolved,
        },
    )
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let file = File::create(path).map_err(|e| RaeError::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value).map_err(RaeError::from)?;
    Ok(())
}

fn cmd_prepare(resolved: &ResolvedConfig) -> anyhow::Result<()> {
    let prepared = prepare_data(resolved)?;
    let stats = prepared.full_corpus.stats();
    let vocab = Vocab::build(&prepared.train_corpus)?;

    println!(
        "sentences: {} (positive {}, negative {})",
        stats.sentences, stats.label_counts[1], stats.label_counts[0]
    );
    println!("mean length: {:.2}", stats.mean_length);
    println!("max length: {}", stats.max_length);
    println!("skipped empty lines: {}", prepared.skipped_lines);
    println!(
        "train split: {} sentences, test split: {} sentences",
        prepared.train_corpus.len(),
        prepared.test_corpus.len()
    );
    println!("vocabulary: {} words (incl. unknown)", vocab.len());

    let train_path = resolved.out_dir.join("train.jsonl");
    let test_path = resolved.out_dir.join("test.jsonl");
    let vocab_path = resolved.out_dir.join("vocab.json");
    prepared
        .train_corpus
        .write_jsonl(File::create(&train_path).map_err(|e| RaeError::io(&train_path, e))?)?;
    prepared
        .test_corpus
        .write_jsonl(File::create(&test_path).map_err(|e| RaeError::io(&test_path, e))?)?;
    write_json(&vocab_path, &vocab)?;

    #[derive(Serialize)]
    struct PrepareSummary<'a> {
        config_hash: String,
        stats: &'a rae::corpus::CorpusStats,
        train_sentences: usize,
        test_sentences: usize,
        vocab_size: usize,
        skipped_lines: usize,
    }
    write_json(
        &resolved.out_dir.join("prepare.json"),
        &PrepareSummary {
            config_hash: resolved.hash(),
            stats: &stats,
            train_sentences: prepared.train_corpus.len(),
            test_sentences: prepared.test_corpus.len(),
            vocab_size: vocab.len(),
            skipped_lines: prepared.skipped_lines,
        },
    )?;
    write_manifest(resolved, "prepare")?;
    println!(
        "wrote {}, {}, {}",
        train_path.display(),
        test_path.display(),
        vocab_path.display()
    );
    Ok(())
}

fn stop_reason_text(reason: StopReason) -> &'static str {
    match reason {
        StopReason::Converged => "converged",
        StopReason::MaxIterations => "iteration budget reached",
        StopReason::LineSearchFailed => "line search stalled (best point kept)",
    }
}

fn cmd_train(resolved: &ResolvedConfig) -> anyhow::Result<()> {
    let prepared = prepare_data(resolved)?;
    let vocab = Vocab::build(&prepared.train_corpus)?;
    let encoded = vocab.encode_corpus(&prepared.train_corpus);
    println!(
        "training on {} sentences, vocabulary {}, h {}",
        encoded.len(),
        vocab.len(),
        resolved.train.h
    );

    let outcome = train(&encoded, vocab.len(), &resolved.train)?;
    println!(
        "stop: {} after {} iterations ({} evaluations)",
        stop_reason_text(outcome.stop),
        outcome.log.len(),
        outcome.n_evals
    );
    println!(
        "final objective: {:.6} (grad norm {:.3e})",
        outcome.value, outcome.grad_norm
    );

    let log_path = resolved.out_dir.join("train_log.jsonl");
    let mut log_file =
        BufWriter::new(File::create(&log_path).map_err(|e| RaeError::io(&log_path, e))?);
    for record in &outcome.log {
        serde_json::to_writer(&mut log_file, record).map_err(RaeError::from)?;
        log_file
            .write_all(b"\n")
            .map_err(|e| RaeError::io(&log_path, e))?;
    }
    log_file.flush().map_err(|e| RaeError::io(&log_path, e))?;

    let ckpt_path = resolved.out_dir.join("checkpoint.json");
    let checkpoint = Checkpoint::new(resolved.train.clone(), vocab, outcome.store, outcome.params);
    save_checkpoint(&ckpt_path, &checkpoint)?;
    write_manifest(resolved, "train")?;
    println!("checkpoint: {}", ckpt_path.display());
    println!("iteration log: {}", log_path.display());
    Ok(())
}

fn checkpoint_path(resolved: &ResolvedConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| resolved.out_dir.join("checkpoint.json"))
}

fn cmd_ablate(resolved: &ResolvedConfig, checkpoint: Option<PathBuf>) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(checkpoint_path(resolved, checkpoint))?;
    let prepared = prepare_data(resolved)?;
    // the checkpoint's vocabulary defines the model's word indices
    let train_encoded = ckpt.vocab.encode_corpus(&prepared.train_corpus);
    let test_encoded = ckpt.vocab.encode_corpus(&prepared.test_corpus);

    let inputs = AblationInputs {
        store: &ckpt.store,
        params: &ckpt.params,
        train_sentences: &train_encoded,
        test_sentences: &test_encoded,
        vocab_size: ckpt.vocab.len(),
        train_config: &ckpt.train_config,
    };
    let table = run_ablation(&inputs, &resolved.ablation)?;

    let tsv = table.to_tsv();
    print!("{tsv}");
    for cell in &table.cells {
        if let Some(err) = &cell.error {
            eprintln!("cell {} failed: {err}", cell.spec);
        }
    }

    let tsv_path = resolved.out_dir.join("ablation.tsv");
    fs::write(&tsv_path, &tsv).map_err(|e| RaeError::io(&tsv_path, e))?;
    #[derive(Serialize)]
    struct AblationOut<'a> {
        config_hash: String,
        table: &'a rae::pipeline::ResultTable,
    }
    write_json(
        &resolved.out_dir.join("ablation.json"),
        &AblationOut {
            config_hash: resolved.hash(),
            table: &table,
        },
    )?;
    write_manifest(resolved, "ablate")?;
    println!("table: {}", tsv_path.display());
    Ok(())
}

fn cmd_analyze(resolved: &ResolvedConfig, checkpoint: Option<PathBuf>) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(checkpoint_path(resolved, checkpoint))?;
    let prepared = prepare_data(resolved)?;
    let encoded = ckpt.vocab.encode_corpus(&prepared.full_corpus);
    let forests = build_forests(&ckpt.store, &ckpt.params, &encoded, true, Cutoff::Unbounded)?;

    let reversers = default_reversers();
    let reverser = reverser_reversal_rate(&forests, &ckpt.params, &ckpt.vocab, &reversers);
    let period = period_adjacency_rate(&forests, &ckpt.vocab);
    let heights = height_stats(&forests);

    println!("trees: {}", forests.len());
    match reverser.rate {
        Some(rate) => println!(
            "reverser occurrences: {}, reversals: {}, rate: {:.4}",
            reverser.occurrences, reverser.reversals, rate
        ),
        None => println!("reverser occurrences: 0 (rate undefined)"),
    }
    match period.rate {
        Some(rate) => println!(
            "period occurrences: {}, directly adjoined: {}, rate: {:.4}",
            period.occurrences, period.adjacent, rate
        ),
        None => println!("period occurrences: 0 (rate undefined)"),
    }
    println!("tree height: mean {:.2}, max {}", heights.mean, heights.max);

    let items = sample_annotations(
        &forests,
        &ckpt.params,
        &ckpt.vocab,
        resolved.analysis.n_per_category,
        resolved.sampler_seed,
    );
    let ann_dir = resolved.out_dir.join("annotations");
    let mut sampled_records: Vec<TreeRecord> = Vec::new();
    for item in &items {
        let dir = ann_dir.join(item.category.as_str());
        fs::create_dir_all(&dir).map_err(|e| RaeError::io(&dir, e))?;
        let dot = export_dot(&forests[item.sentence], &ckpt.params, &ckpt.vocab);
        let path = dir.join(format!("tree_{:05}.dot", item.sentence));
        fs::write(&path, dot).map_err(|e| RaeError::io(&path, e))?;
        sampled_records.push(tree_record(
            &forests[item.sentence],
            &ckpt.params,
            &ckpt.vocab,
            item.sentence,
            Some(encoded[item.sentence].label),
        ));
    }
    let records_path = ann_dir.join("sampled_trees.jsonl");
    if !items.is_empty() {
        write_trees_jsonl(
            File::create(&records_path).map_err(|e| RaeError::io(&records_path, e))?,
            &sampled_records,
        )?;
    }

    let reverser_records_path = resolved.out_dir.join("reverser_records.jsonl");
    let mut rec_file = BufWriter::new(
        File::create(&reverser_records_path)
            .map_err(|e| RaeError::io(&reverser_records_path, e))?,
    );
    for record in &reverser.records {
        serde_json::to_writer(&mut rec_file, record).map_err(RaeError::from)?;
        rec_file
            .write_all(b"\n")
            .map_err(|e| RaeError::io(&reverser_records_path, e))?;
    }
    rec_file
        .flush()
        .map_err(|e| RaeError::io(&reverser_records_path, e))?;

    #[derive(Serialize)]
    struct AnalysisOut<'a> {
        config_hash: String,
        trees: usize,
        reverser_occurrences: usize,
        reverser_reversals: usize,
        reverser_rate: Option<f64>,
        period_occurrences: usize,
        period_adjacent: usize,
        period_rate: Option<f64>,
        height_mean: f64,
        height_max: u32,
        annotation_items: &'a [rae::analysis::AnnotationItem],
    }
    write_json(
        &resolved.out_dir.join("analysis.json"),
        &AnalysisOut {
            config_hash: resolved.hash(),
            trees: forests.len(),
            reverser_occurrences: reverser.occurrences,
            reverser_reversals: reverser.reversals,
            reverser_rate: reverser.rate,
            period_occurrences: period.occurrences,
            period_adjacent: period.adjacent,
            period_rate: period.rate,
            height_mean: heights.mean,
            height_max: heights.max,
            annotation_items: &items,
        },
    )?;
    write_manifest(resolved, "analyze")?;
    println!(
        "annotation samples: {} (under {})",
        items.len(),
        ann_dir.display()
    );
    Ok(())
}

fn cmd_export_trees(
    resolved: &ResolvedConfig,
    checkpoint: Option<PathBuf>,
    limit: Option<usize>,
) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(checkpoint_path(resolved, checkpoint))?;
    let prepared = prepare_data(resolved)?;
    let encoded = ckpt.vocab.encode_corpus(&prepared.full_corpus);
    let n = limit
        .unwrap_or(resolved.analysis.export_trees)
        .min(encoded.len());
    let slice = &encoded[..n];
    let forests = build_forests(&ckpt.store, &ckpt.params, slice, true, Cutoff::Unbounded)?;

    let tree_dir = resolved.out_dir.join("trees");
    fs::create_dir_all(&tree_dir).map_err(|e| RaeError::io(&tree_dir, e))?;
    let mut records = Vec::with_capacity(n);
    for (i, forest) in forests.iter().enumerate() {
        let dot = export_dot(forest, &ckpt.params, &ckpt.vocab);
        let path = tree_dir.join(format!("tree_{i:05}.dot"));
        fs::write(&path, dot).map_err(|e| RaeError::io(&path, e))?;
        records.push(tree_record(
            forest,
            &ckpt.params,
            &ckpt.vocab,
            i,
            Some(slice[i].label),
        ));
    }
    let records_path = resolved.out_dir.join("trees.jsonl");
    write_trees_jsonl(
        File::create(&records_path).map_err(|e| RaeError::io(&records_path, e))?,
        &records,
    )?;
    write_manifest(resolved, "export-trees")?;
    println!(
        "exported {n} trees to {} and {}",
        tree_dir.display(),
        records_path.display()
    );
    Ok(())
}

fn cmd_grad_check(instances: usize, epsilon: f64, tolerance: f64, seed: u64) -> anyhow::Result<()> {
    if instances == 0 {
        return Err(anyhow!(RaeError::InvalidArgument(
            "need at least one instance".into()
        )));
    }
    let mut worst = 0.0f64;
    for i in 0..instances {
        let (store, params, sentences, config) =
            random_check_instance(seed.wrapping_add(i as u64), 5, 5)?;
        let report = finite_diff_check(&store, &params, &sentences, &config, epsilon, None, seed)?;
        println!(
            "instance {i}: max rel dev {:.3e} over {} coordinates (worst at {})",
            report.max_rel_dev, report.n_checked, report.worst_coord
        );
        worst = worst.max(report.max_rel_dev);
    }
    if worst < tolerance {
        println!(
            "grad-check: PASS (worst {worst:.3e} < {tolerance:.1e} over {instances} instances)"
        );
        Ok(())
    } else {
        Err(anyhow!(RaeError::Numeric(format!(
            "gradient check failed: worst relative deviation {worst:.3e} >= {tolerance:.1e}"
        ))))
    }
}
