use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Arg, ArgAction, ArgMatches, Command};

use docaug::corpus::{class_stats, load_corpus, low_resource_labels, stratified_folds};
use docaug::eval::{Provenance, TrainingExample};
use docaug::pipeline::{
    augment_corpus, augmented_input, classifier_input, compare_runs, ingest_native, load_augmented,
    run_experiment, summarizer_for, train_text_classifier, Augmentation, ExperimentConfig,
    PipelineError,
};

fn config_args(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("key = value configuration file; flags below override it"),
    );
    ExperimentConfig::KEYS.iter().fold(cmd, |cmd, key| {
        cmd.arg(
            Arg::new(*key)
                .long(key.replace('_', "-"))
                .alias(*key)
                .value_name("VALUE")
                .help_heading("Configuration"),
        )
    })
}

fn cli() -> Command {
    Command::new("docaug")
        .about("Summarization-based augmentation for document-level event classification")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("ingest")
                .about("Convert a native dataset split into the JSON Lines corpus format")
                .arg(Arg::new("input").required(true))
                .arg(Arg::new("output").required(true))
                .arg(Arg::new("split").long("split").default_value("train")),
        )
        .subcommand(
            config_args(Command::new("stats").about("Class statistics and the low-resource pool"))
                .arg(Arg::new("json").long("json").action(ArgAction::SetTrue)),
        )
        .subcommand(
            config_args(Command::new("folds").about("Write the stratified fold assignment as TSV"))
                .arg(Arg::new("output").long("output").short('o')),
        )
        .subcommand(
            config_args(
                Command::new("summarize").about("Generate summaries of low-resource documents"),
            )
            .arg(Arg::new("output").long("output").short('o')),
        )
        .subcommand(config_args(
            Command::new("train").about("Fit the vectorizer and SVM on the whole training split"),
        ))
        .subcommand(config_args(
            Command::new("eval").about("Cross-validate one setup and write its report"),
        ))
        .subcommand(
            Command::new("compare")
                .about("Combine run reports into one table")
                .arg(Arg::new("runs").required(true).num_args(1..))
                .arg(Arg::new("output").long("output").short('o')),
        )
}

fn resolve_config(m: &ArgMatches) -> Result<ExperimentConfig> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for key in ExperimentConfig::KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_or_print(output: Option<&String>, content: &str) -> Result<()> {
    match output {
        Some(path) => fs::write(path, content).with_context(|| format!("writing {path}")),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn stats(m: &ArgMatches) -> Result<()> {
    let cfg = resolve_config(m)?;
    let corpus = load_corpus(&cfg.train_path)?;
    let stats = class_stats(&corpus, cfg.low_resource_threshold);
    let low = low_resource_labels(&stats);
    if m.get_flag("json") {
        let v = serde_json::json!({
            "documents": stats.total(),
            "classes": stats.counts.len(),
            "max_class_count": stats.max_count(),
            "threshold": cfg.low_resource_threshold,
            "classes_above_threshold": stats.classes_above(cfg.low_resource_threshold),
            "low_resource_classes": low.len(),
            "low_resource_documents": stats.low_resource_documents(),
            "counts": stats.counts,
        });
        println!("{}", serde_json::to_string_pretty(&v)?);
        return Ok(());
    }
    println!("documents\t{}", stats.total());
    println!("classes\t{}", stats.counts.len());
    println!("max_class_count\t{}", stats.max_count());
    println!(
        "classes_above_{}\t{}",
        cfg.low_resource_threshold,
        stats.classes_above(cfg.low_resource_threshold)
    );
    println!("low_resource_classes\t{}", low.len());
    println!("low_resource_documents\t{}", stats.low_resource_documents());
    let mut counts: Vec<_> = stats.counts.iter().collect();
    counts.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
    for (label, n) in counts {
        let tag = if low.contains(label) { "low" } else { "" };
        println!("{label}\t{n}\t{tag}");
    }
    Ok(())
}

fn folds(m: &ArgMatches) -> Result<()> {
    let cfg = resolve_config(m)?;
    let corpus = load_corpus(&cfg.train_path)?;
    let folds = stratified_folds(&corpus, cfg.folds, cfg.seed)?;
    let mut out = String::from("id\tlabel\tfold\n");
    for d in corpus.documents() {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            d.id,
            d.label,
            folds.fold(&d.id).expect("every document has a fold")
        ));
    }
    write_or_print(m.get_one("output"), &out)
}

fn summarize(m: &ArgMatches) -> Result<()> {
    let cfg = resolve_config(m)?;
    if cfg.augmentation == Augmentation::None {
        bail!(PipelineError::Config(
            "summarize needs --augmentation other than `none`".into()
        ));
    }
    let output = m
        .get_one::<String>("output")
        .map(PathBuf::from)
        .or_else(|| cfg.augmented_path.clone())
        .unwrap_or_else(|| cfg.output_dir.join("augmented.jsonl"));
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let corpus = load_corpus(&cfg.train_path)?;
    let low = low_resource_labels(&class_stats(&corpus, cfg.low_resource_threshold));
    let backend = summarizer_for(&cfg)?;
    let outcome = augment_corpus(&corpus, &low, &cfg, backend.as_ref(), Some(&output))?;
    println!(
        "{} summaries of {} low-resource documents ({} distinctness drops) -> {}",
        outcome.examples.len(),
        outcome.source_documents,
        outcome.distinctness_drops,
        output.display()
    );
    Ok(())
}

fn train(m: &ArgMatches) -> Result<()> {
    let cfg = resolve_config(m)?;
    let corpus = load_corpus(&cfg.train_path)?;
    let mut examples: Vec<TrainingExample> = corpus
        .documents()
        .iter()
        .map(|d| TrainingExample {
            text: classifier_input(d, cfg.title_mode),
            label: d.label.clone(),
            provenance: Provenance::Original(d.id.clone()),
        })
        .collect();
    if cfg.augmentation != Augmentation::None {
        let path = cfg
            .augmented_path
            .clone()
            .unwrap_or_else(|| cfg.output_dir.join("augmented.jsonl"));
        for ex in load_augmented(&path)? {
            let Some(doc) = corpus.get(&ex.source_id) else {
                bail!(PipelineError::Config(format!(
                    "{}: unknown source `{}`",
                    path.display(),
                    ex.source_id
                )));
            };
            examples.push(TrainingExample {
                text: augmented_input(&doc.title, &ex.summary, cfg.title_mode),
                label: ex.label,
                provenance: Provenance::Augmented {
                    source_id: ex.source_id,
                    variant: ex.variant,
                },
            });
        }
    }
    let model = train_text_classifier(&examples, &cfg.tfidf_config(), &cfg.train_config())?;
    fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    model.tfidf.save(cfg.output_dir.join("tfidf.json"))?;
    model.svm.save(cfg.output_dir.join("svm.json"))?;
    fs::write(cfg.output_dir.join("config.txt"), cfg.to_kv())?;
    println!(
        "trained on {} examples: {} features, {} classes -> {}",
        examples.len(),
        model.tfidf.dim(),
        model.svm.class_names.len(),
        cfg.output_dir.display()
    );
    Ok(())
}

fn eval(m: &ArgMatches) -> Result<()> {
    let cfg = resolve_config(m)?;
    let result = run_experiment(&cfg)?;
    print!("{}", fs::read_to_string(cfg.output_dir.join("report.txt"))?);
    log::info!("timings: {:?}", result.manifest.timings);
    Ok(())
}

fn compare(m: &ArgMatches) -> Result<()> {
    let dirs: Vec<PathBuf> = m
        .get_many::<String>("runs")
        .expect("required")
        .map(PathBuf::from)
        .collect();
    let (table, tsv) = compare_runs(&dirs)?;
    print!("{table}");
    if let Some(out) = m.get_one::<String>("output") {
        fs::write(out, tsv).with_context(|| format!("writing {out}"))?;
    }
    Ok(())
}

fn run(m: &ArgMatches) -> Result<()> {
    match m.subcommand() {
        Some(("ingest", m)) => {
            let input = Path::new(m.get_one::<String>("input").expect("required"));
            let output = Path::new(m.get_one::<String>("output").expect("required"));
            let corpus = ingest_native(
                input,
                output,
                m.get_one::<String>("split").expect("defaulted"),
            )?;
            println!(
                "{} documents, {} labels -> {}",
                corpus.len(),
                corpus.label_set().len(),
                output.display()
            );
            Ok(())
        }
        Some(("stats", m)) => stats(m),
        Some(("folds", m)) => folds(m),
        Some(("summarize", m)) => summarize(m),
        Some(("train", m)) => train(m),
        Some(("eval", m)) => eval(m),
        Some(("compare", m)) => compare(m),
        _ => unreachable!("subcommand required"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let backend = e
                .downcast_ref::<PipelineError>()
                .is_some_and(PipelineError::is_backend_failure);
            ExitCode::from(if backend { 2 } else { 1 })
        }
    }
}
