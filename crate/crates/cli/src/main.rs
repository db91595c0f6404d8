//! `tml` — command-line surface over the metric-learning engine.
//!
//! One-shot subcommands, each mapping onto one library operation. Results
//! go to stdout, diagnostics and the echoed effective configuration go to
//! stderr. Exit codes: 0 success, 1 user error (bad flags, bad files,
//! impossible requests), 2 internal error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use clap::parser::ValueSource;

use tml_core::data::ppm::encode_ppm;
use tml_core::data::{load_dataset_dir, load_image, Dataset};
use tml_core::model_file::{load_model, save_model, EmbedderModel, Model};
use tml_core::optim::HeadConfig;
use tml_core::{
    benchmark_inference, calibrate_static, enroll_dataset, eval, evaluate_model,
    fewshot_enroll_eval, generate_synthetic, mlp_predict, pca_project, quantize_net,
    repeated_splits, train_classifier_head, train_embedder, AdamConfig, ClassifierKind,
    EmbedderConfig, Error, Mining, QuantMode, SyntheticSpec, Tensor, TrainConfig, TripletConfig,
};

// ------------------------------------------------------------- error model

enum CliError {
    /// Bad input from the operator: flags, config files, data files.
    User(String),
    /// A bug or broken invariant inside the engine.
    Internal(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Contract(_) => CliError::Internal(e.to_string()),
            _ => CliError::User(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn user(msg: impl Into<String>) -> CliError {
    CliError::User(msg.into())
}

// ----------------------------------------------------------- option tables

struct Opt {
    name: &'static str,
    default: Option<&'static str>,
    required: bool,
    switch: bool,
    help: &'static str,
}

const fn opt(name: &'static str, default: &'static str, help: &'static str) -> Opt {
    Opt {
        name,
        default: Some(default),
        required: false,
        switch: false,
        help,
    }
}

const fn req(name: &'static str, help: &'static str) -> Opt {
    Opt {
        name,
        default: None,
        required: true,
        switch: false,
        help,
    }
}

const fn maybe(name: &'static str, help: &'static str) -> Opt {
    Opt {
        name,
        default: None,
        required: false,
        switch: false,
        help,
    }
}

const fn flag(name: &'static str, help: &'static str) -> Opt {
    Opt {
        name,
        default: None,
        required: false,
        switch: true,
        help,
    }
}

const SYNTH: &[Opt] = &[
    req("out", "directory to write the dataset into"),
    opt("classes", "5", "number of texture classes"),
    opt("per-class", "40", "images per class"),
    opt("size", "32", "image height and width in pixels"),
    opt("noise", "0.1", "per-pixel gaussian noise sigma"),
    opt("seed", "0", "generator seed"),
];

const TRAIN_EMBEDDER: &[Opt] = &[
    req("data", "training dataset directory (one subdirectory per class)"),
    req("out", "model file to write"),
    opt("epochs", "300", "training epochs"),
    opt("batch", "32", "batch size; must equal P*K"),
    opt("p", "8", "classes sampled per batch (P)"),
    opt("k", "4", "images sampled per class (K)"),
    opt("lr", "0.001", "Adam learning rate"),
    opt("margin", "0.2", "triplet hinge margin"),
    opt("mining", "batch-hard", "triplet mining: batch-hard or batch-all"),
    opt("embed-dim", "64", "embedding dimensionality"),
    opt("channels", "8,16", "conv channels per block, comma separated"),
    opt("seed", "0", "seed for init and batch sampling"),
    flag("no-normalize", "skip final L2 normalization of embeddings"),
    flag("no-enroll", "do not store a nearest-neighbor index of the training set"),
];

const TRAIN_HEAD: &[Opt] = &[
    req("model", "model file holding the trained float embedder"),
    req("data", "training dataset directory"),
    req("out", "model file to write (embedder plus classifier head)"),
    opt("head-epochs", "40", "classifier head training epochs"),
    opt("hidden", "64", "hidden layer width"),
    opt("lr", "0.001", "Adam learning rate"),
    opt("batch", "32", "head training batch size"),
    opt("seed", "0", "seed for head init and shuffling"),
];

const EVALUATE: &[Opt] = &[
    req("model", "model file"),
    req("data", "test dataset directory"),
    opt("classifier", "knn", "classifier to drive: knn or mlp"),
    opt("k", "1", "neighbors for the knn classifier"),
    maybe("out", "write the confusion matrix to this CSV file"),
];

const REPEATED_EVAL: &[Opt] = &[
    req("data", "dataset directory"),
    opt("runs", "16", "number of fresh-split runs"),
    opt("split", "0.8", "train fraction per split"),
    opt("epochs", "50", "training epochs per run"),
    opt("batch", "32", "batch size; must equal P*K"),
    opt("p", "8", "classes sampled per batch (P)"),
    opt("k", "4", "images sampled per class (K)"),
    opt("lr", "0.001", "Adam learning rate"),
    opt("margin", "0.2", "triplet hinge margin"),
    opt("mining", "batch-hard", "triplet mining: batch-hard or batch-all"),
    opt("embed-dim", "64", "embedding dimensionality"),
    opt("channels", "8,16", "conv channels per block, comma separated"),
    opt("seed", "0", "base seed; run i uses seed+i"),
    maybe("out", "write the run summary to this CSV file"),
    flag("no-normalize", "skip final L2 normalization of embeddings"),
];

const ENROLL_EVAL: &[Opt] = &[
    req("model", "model file holding the trained float embedder"),
    req("novel", "directory of novel classes to enroll and test"),
    maybe("base", "directory of base classes enrolled in full"),
    opt("shots", "1", "images enrolled per novel class"),
];

const QUANTIZE: &[Opt] = &[
    req("model", "float model file to quantize"),
    req("out", "quantized model file to write"),
    opt("mode", "static", "quantization mode: static or dynamic"),
    maybe("calib", "calibration dataset directory (required for static)"),
];

const BENCHMARK: &[Opt] = &[
    req("model", "float model file"),
    req("data", "directory of images to cycle through"),
    opt("repeats", "3", "timing repeats; totals are medians"),
    maybe("quantized", "quantized model file (defaults to dynamic quantization)"),
];

const EMBED: &[Opt] = &[
    req("model", "model file"),
    req("data", "dataset directory to embed"),
    maybe("out", "write embeddings CSV here instead of stdout"),
];

const PREDICT: &[Opt] = &[
    req("model", "model file"),
    req("image", "image file to classify"),
    opt("classifier", "knn", "classifier to drive: knn or mlp"),
    opt("k", "1", "neighbors for the knn classifier"),
];

const PROJECT: &[Opt] = &[
    req("model", "model file"),
    req("data", "dataset directory to embed and project"),
    req("out", "CSV file for the 2-D projection"),
];

const COMMANDS: &[(&str, &str, &[Opt])] = &[
    ("synth", "generate a synthetic striped-texture dataset", SYNTH),
    ("train-embedder", "train the embedder with a triplet loss", TRAIN_EMBEDDER),
    ("train-head", "train an MLP classifier head on frozen embeddings", TRAIN_HEAD),
    ("evaluate", "accuracy and confusion matrix on a labeled directory", EVALUATE),
    ("repeated-eval", "train/evaluate across repeated fresh splits", REPEATED_EVAL),
    ("enroll-eval", "enroll novel classes from a few shots and evaluate", ENROLL_EVAL),
    ("quantize", "post-training int8 quantization of a model", QUANTIZE),
    ("benchmark", "time 100 single-image inferences, float vs int8", BENCHMARK),
    ("embed", "write embeddings of a dataset as CSV", EMBED),
    ("predict", "classify one image; prints `class<TAB>confidence`", PREDICT),
    ("project", "2-D principal-component projection of a dataset", PROJECT),
];

fn build_cli() -> Command {
    let mut root = Command::new("tml")
        .about("metric-learning image classifier: train, enroll, quantize, predict")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about, table) in COMMANDS {
        let mut cmd = Command::new(*name).about(*about);
        cmd = cmd.arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key=value file supplying defaults for any flag"),
        );
        for o in *table {
            let mut arg = Arg::new(o.name).long(o.name).help(o.help);
            if o.switch {
                arg = arg.action(ArgAction::SetTrue);
            } else {
                arg = arg.value_name("VALUE");
                if let Some(d) = o.default {
                    arg = arg.default_value(d);
                }
            }
            cmd = cmd.arg(arg);
        }
        root = root.subcommand(cmd);
    }
    root
}

// ------------------------------------------------- config file + resolution

fn parse_config_file(path: &str, table: &[Opt]) -> CliResult<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| user(format!("config file {path}: {e}")))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| user(format!("{path}:{}: expected key=value", i + 1)))?;
        let key = key.trim();
        let value = value.trim();
        if !table.iter().any(|o| o.name == key) {
            let known: Vec<&str> = table.iter().map(|o| o.name).collect();
            return Err(user(format!(
                "{path}:{}: unknown config key {key:?} (known keys: {})",
                i + 1,
                known.join(", ")
            )));
        }
        if out.insert(key.to_string(), value.to_string()).is_some() {
            return Err(user(format!("{path}:{}: duplicate key {key:?}", i + 1)));
        }
    }
    Ok(out)
}

/// Flag values after merging: command line beats config file beats default.
struct Cfg {
    command: &'static str,
    values: BTreeMap<&'static str, Option<String>>,
}

fn resolve(command: &'static str, matches: &ArgMatches, table: &'static [Opt]) -> CliResult<Cfg> {
    let file = match matches.get_one::<String>("config") {
        Some(path) => parse_config_file(path, table)?,
        None => BTreeMap::new(),
    };
    let mut values = BTreeMap::new();
    for o in table {
        let from_cli = matches.value_source(o.name) == Some(ValueSource::CommandLine);
        let v: Option<String> = if o.switch {
            let set = if from_cli {
                matches.get_flag(o.name)
            } else if let Some(raw) = file.get(o.name) {
                match raw.as_str() {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(user(format!(
                            "config key {}: expected true or false, got {other:?}",
                            o.name
                        )))
                    }
                }
            } else {
                false
            };
            Some(set.to_string())
        } else if from_cli {
            matches.get_one::<String>(o.name).cloned()
        } else if let Some(raw) = file.get(o.name) {
            Some(raw.clone())
        } else {
            matches.get_one::<String>(o.name).cloned()
        };
        if o.required && v.is_none() {
            return Err(user(format!(
                "missing required value for --{} (flag or config key)",
                o.name
            )));
        }
        values.insert(o.name, v);
    }
    let cfg = Cfg { command, values };
    cfg.echo();
    Ok(cfg)
}

impl Cfg {
    /// The reproducibility contract: every run states its full settings.
    fn echo(&self) {
        eprintln!("# effective configuration: {}", self.command);
        for (k, v) in &self.values {
            if let Some(v) = v {
                eprintln!("# {k}={v}");
            }
        }
    }

    fn str(&self, key: &str) -> &str {
        self.values[key].as_deref().expect("required or defaulted")
    }

    fn opt_str(&self, key: &str) -> Option<&str> {
        self.values[key].as_deref()
    }

    fn usize(&self, key: &str) -> CliResult<usize> {
        self.str(key)
            .parse()
            .map_err(|_| user(format!("--{key}: {:?} is not a non-negative integer", self.str(key))))
    }

    fn u64(&self, key: &str) -> CliResult<u64> {
        self.str(key)
            .parse()
            .map_err(|_| user(format!("--{key}: {:?} is not a non-negative integer", self.str(key))))
    }

    fn f32(&self, key: &str) -> CliResult<f32> {
        self.str(key)
            .parse()
            .map_err(|_| user(format!("--{key}: {:?} is not a number", self.str(key))))
    }

    fn f64(&self, key: &str) -> CliResult<f64> {
        self.str(key)
            .parse()
            .map_err(|_| user(format!("--{key}: {:?} is not a number", self.str(key))))
    }

    fn bool(&self, key: &str) -> bool {
        self.str(key) == "true"
    }

    fn channels(&self) -> CliResult<Vec<usize>> {
        let raw = self.str("channels");
        let parsed: Result<Vec<usize>, _> = raw.split(',').map(|s| s.trim().parse()).collect();
        match parsed {
            Ok(v) if !v.is_empty() && !v.contains(&0) => Ok(v),
            _ => Err(user(format!(
                "--channels: {raw:?} must be comma-separated positive integers like 8,16"
            ))),
        }
    }

    fn mining(&self) -> CliResult<Mining> {
        match self.str("mining") {
            "batch-hard" => Ok(Mining::BatchHard),
            "batch-all" => Ok(Mining::BatchAll),
            other => Err(user(format!(
                "--mining: {other:?} is not batch-hard or batch-all"
            ))),
        }
    }
}

// ------------------------------------------------------------ shared steps

fn load_dir(path: &str, target: Option<(usize, usize)>) -> CliResult<Dataset> {
    load_dataset_dir(Path::new(path), target).map_err(Into::into)
}

/// Input geometry for datasets feeding a saved model.
fn model_target(config: &EmbedderConfig) -> Option<(usize, usize)> {
    Some((config.input_h, config.input_w))
}

fn require_float<'a>(model: &'a Model, verb: &str) -> CliResult<&'a tml_core::EmbedderNet> {
    match &model.embedder {
        EmbedderModel::Float(net) => Ok(net),
        EmbedderModel::Quantized(_) => Err(user(format!(
            "cannot {verb} with a quantized model; use the original float model file"
        ))),
    }
}

fn embedder_config_from(cfg: &Cfg, dataset: &Dataset, seed: u64) -> CliResult<EmbedderConfig> {
    let [c, h, w] = dataset
        .image_shape()
        .ok_or_else(|| user("dataset is empty"))?;
    Ok(EmbedderConfig {
        input_h: h,
        input_w: w,
        input_c: c,
        conv_channels: cfg.channels()?,
        embedding_dim: cfg.usize("embed-dim")?,
        normalize: !cfg.bool("no-normalize"),
        init_seed: seed,
    })
}

fn train_config_from(cfg: &Cfg, seed: u64) -> CliResult<TrainConfig> {
    Ok(TrainConfig {
        epochs: cfg.usize("epochs")?,
        batch: cfg.usize("batch")?,
        p: cfg.usize("p")?,
        k: cfg.usize("k")?,
        seed,
        triplet: TripletConfig {
            margin: cfg.f32("margin")?,
            mining: cfg.mining()?,
        },
        adam: AdamConfig {
            lr: cfg.f32("lr")?,
            ..AdamConfig::default()
        },
    })
}

// --------------------------------------------------------------- commands

fn cmd_synth(cfg: &Cfg) -> CliResult<()> {
    let spec = SyntheticSpec {
        classes: cfg.usize("classes")?,
        per_class: cfg.usize("per-class")?,
        size: cfg.usize("size")?,
        noise: cfg.f32("noise")?,
        seed: cfg.u64("seed")?,
    };
    let dataset = generate_synthetic(&spec)?;
    let root = PathBuf::from(cfg.str("out"));
    let mut counters = vec![0usize; dataset.class_names().len()];
    for i in 0..dataset.len() {
        let im = dataset.image(i);
        let dir = root.join(&dataset.class_names()[im.label]);
        std::fs::create_dir_all(&dir).map_err(|e| user(format!("{}: {e}", dir.display())))?;
        let path = dir.join(format!("img_{:03}.ppm", counters[im.label]));
        counters[im.label] += 1;
        let bytes = encode_ppm(&im.pixels)?;
        std::fs::write(&path, bytes).map_err(|e| user(format!("{}: {e}", path.display())))?;
    }
    eprintln!(
        "wrote {} images across {} classes under {}",
        dataset.len(),
        dataset.class_names().len(),
        root.display()
    );
    Ok(())
}

fn cmd_train_embedder(cfg: &Cfg) -> CliResult<()> {
    let dataset = load_dir(cfg.str("data"), None)?;
    let seed = cfg.u64("seed")?;
    let embed_cfg = embedder_config_from(cfg, &dataset, seed)?;
    let train_cfg = train_config_from(cfg, seed)?;
    let (net, history) = train_embedder(&dataset, &embed_cfg, &train_cfg)?;
    if let (Some(loss), Some(active)) =
        (history.epoch_loss.last(), history.active_fraction.last())
    {
        eprintln!(
            "trained {} epochs; final loss {loss:.6}, active triplet fraction {active:.4}",
            history.epoch_loss.len()
        );
    }
    let mut model = Model::float(net);
    if !cfg.bool("no-enroll") {
        if let EmbedderModel::Float(net) = &model.embedder {
            model.index = Some(enroll_dataset(net, &dataset)?);
        }
    }
    save_model(cfg.str("out"), &model)?;
    eprintln!("wrote {}", cfg.str("out"));
    Ok(())
}

fn cmd_train_head(cfg: &Cfg) -> CliResult<()> {
    let mut model = load_model(cfg.str("model"))?;
    let net = require_float(&model, "train a classifier head")?;
    let dataset = load_dir(cfg.str("data"), model_target(&net.config))?;
    let head_cfg = HeadConfig {
        hidden: cfg.usize("hidden")?,
        epochs: cfg.usize("head-epochs")?,
        seed: cfg.u64("seed")?,
        adam: AdamConfig {
            lr: cfg.f32("lr")?,
            ..AdamConfig::default()
        },
    };
    let head = train_classifier_head(net, &dataset, &head_cfg, cfg.usize("batch")?)?;
    model.head = Some(head);
    save_model(cfg.str("out"), &model)?;
    eprintln!("wrote {}", cfg.str("out"));
    Ok(())
}

fn classifier_of<'a>(cfg: &Cfg, model: &'a Model) -> CliResult<ClassifierKind<'a>> {
    match cfg.str("classifier") {
        "knn" => {
            let index = model.index.as_ref().ok_or_else(|| {
                user("model holds no nearest-neighbor index (train-embedder stores one unless --no-enroll)")
            })?;
            Ok(ClassifierKind::Knn {
                index,
                k: cfg.usize("k")?,
            })
        }
        "mlp" => {
            let head = model
                .head
                .as_ref()
                .ok_or_else(|| user("model holds no classifier head (run train-head first)"))?;
            Ok(ClassifierKind::Mlp { head })
        }
        other => Err(user(format!("--classifier: {other:?} is not knn or mlp"))),
    }
}

fn cmd_evaluate(cfg: &Cfg) -> CliResult<()> {
    let model = load_model(cfg.str("model"))?;
    let dataset = load_dir(cfg.str("data"), model_target(model.embedder.config()))?;
    let classifier = classifier_of(cfg, &model)?;
    let report = evaluate_model(&model.embedder, classifier, &dataset)?;
    if let Some(out) = cfg.opt_str("out") {
        eval::export_confusion_csv(&report, Path::new(out))?;
        eprintln!("wrote {out}");
    }
    println!("accuracy={}", report.accuracy);
    Ok(())
}

fn cmd_repeated_eval(cfg: &Cfg) -> CliResult<()> {
    let dataset = load_dir(cfg.str("data"), None)?;
    let runs = cfg.usize("runs")?;
    if runs == 0 {
        return Err(user("--runs must be at least 1"));
    }
    let base_seed = cfg.u64("seed")?;
    let embed_cfg = embedder_config_from(cfg, &dataset, base_seed)?;
    let train_cfg = train_config_from(cfg, base_seed)?;
    let seeds: Vec<u64> = (0..runs as u64).map(|i| base_seed + i).collect();
    let summary = repeated_splits(&dataset, &embed_cfg, &train_cfg, cfg.f64("split")?, &seeds)?;
    if let Some(out) = cfg.opt_str("out") {
        eval::export_summary_csv(&summary, Path::new(out))?;
        eprintln!("wrote {out}");
    }
    println!(
        "runs={} mean={} max={}",
        summary.runs(),
        summary.mean,
        summary.max
    );
    Ok(())
}

fn cmd_enroll_eval(cfg: &Cfg) -> CliResult<()> {
    let model = load_model(cfg.str("model"))?;
    let net = require_float(&model, "embed enrollment shots")?;
    let target = model_target(&net.config);
    let novel = load_dir(cfg.str("novel"), target)?;
    let base = match cfg.opt_str("base") {
        Some(dir) => Some(load_dir(dir, target)?),
        None => None,
    };
    let report = fewshot_enroll_eval(net, base.as_ref(), &novel, cfg.usize("shots")?)?;
    println!("accuracy={}", report.accuracy);
    Ok(())
}

fn cmd_quantize(cfg: &Cfg) -> CliResult<()> {
    let model = load_model(cfg.str("model"))?;
    let net = require_float(&model, "quantize")?;
    let qnet = match cfg.str("mode") {
        "static" => {
            let calib_dir = cfg
                .opt_str("calib")
                .ok_or_else(|| user("static quantization needs --calib DATASET_DIR"))?;
            let calib = load_dir(calib_dir, model_target(&net.config))?;
            let ranges = calibrate_static(net, &calib)?;
            quantize_net(net, QuantMode::Static, Some(&ranges))?
        }
        "dynamic" => quantize_net(net, QuantMode::Dynamic, None)?,
        other => Err(user(format!("--mode: {other:?} is not static or dynamic")))?,
    };
    let out_model = Model {
        embedder: EmbedderModel::Quantized(qnet),
        head: model.head.clone(),
        index: model.index.clone(),
    };
    save_model(cfg.str("out"), &out_model)?;
    let before = std::fs::metadata(cfg.str("model")).map(|m| m.len()).unwrap_or(0);
    let after = std::fs::metadata(cfg.str("out")).map(|m| m.len()).unwrap_or(0);
    if before > 0 && after > 0 {
        eprintln!(
            "wrote {} ({} -> {} bytes, ratio {:.3})",
            cfg.str("out"),
            before,
            after,
            after as f64 / before as f64
        );
    }
    Ok(())
}

fn cmd_benchmark(cfg: &Cfg) -> CliResult<()> {
    let model = load_model(cfg.str("model"))?;
    let net = require_float(&model, "benchmark")?;
    let qnet = match cfg.opt_str("quantized") {
        Some(path) => match load_model(path)?.embedder {
            EmbedderModel::Quantized(q) => {
                if q.config != net.config {
                    return Err(user(
                        "the quantized model's topology differs from the float model",
                    ));
                }
                q
            }
            EmbedderModel::Float(_) => {
                return Err(user("--quantized must point at a quantized model file"))
            }
        },
        None => quantize_net(net, QuantMode::Dynamic, None)?,
    };
    let dataset = load_dir(cfg.str("data"), model_target(&net.config))?;
    let all: Vec<usize> = (0..dataset.len()).collect();
    let images = dataset.batch_tensor(&all)?;
    let report = benchmark_inference(net, &qnet, &images, cfg.usize("repeats")?)?;
    println!("{report}");
    Ok(())
}

fn cmd_embed(cfg: &Cfg) -> CliResult<()> {
    let model = load_model(cfg.str("model"))?;
    let dataset = load_dir(cfg.str("data"), model_target(model.embedder.config()))?;
    if dataset.is_empty() {
        return Err(user("dataset is empty"));
    }
    let dim = model.embedder.config().embedding_dim;
    let mut csv = String::from("image,class");
    for d in 0..dim {
        let _ = write!(csv, ",e{d}");
    }
    csv.push('\n');
    let all: Vec<usize> = (0..dataset.len()).collect();
    for chunk in all.chunks(64) {
        let e = model.embedder.embed(&dataset.batch_tensor(chunk)?)?;
        for (row, &i) in chunk.iter().enumerate() {
            let im = dataset.image(i);
            let name = im
                .source
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| format!("image_{i}"));
            let _ = write!(csv, "{name},{}", dataset.class_names()[im.label]);
            for v in e.row(row) {
                let _ = write!(csv, ",{v}");
            }
            csv.push('\n');
        }
    }
    match cfg.opt_str("out") {
        Some(out) => {
            std::fs::write(out, csv).map_err(|e| user(format!("{out}: {e}")))?;
            eprintln!("wrote {out}");
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_predict(cfg: &Cfg) -> CliResult<()> {
    let model = load_model(cfg.str("model"))?;
    let config = model.embedder.config().clone();
    if config.input_c != 3 {
        return Err(user(format!(
            "model expects {}-channel input, image files decode to 3 channels",
            config.input_c
        )));
    }
    let pixels = load_image(cfg.str("image"), Some((config.input_h, config.input_w)))?;
    let batch = pixels.reshaped(vec![1, 3, config.input_h, config.input_w])?;
    let e = model.embedder.embed(&batch)?;
    let (name, confidence) = match classifier_of(cfg, &model)? {
        ClassifierKind::Knn { index, k } => {
            let pred = index.predict(&e, k)?;
            (
                index.name_of(pred.labels[0]).to_string(),
                pred.confidences[0],
            )
        }
        ClassifierKind::Mlp { head } => {
            let (label, conf) = mlp_predict(head, &e)?[0];
            (head.class_names[label].clone(), conf)
        }
    };
    // the machine-readable contract: exactly one line, nothing else on stdout
    println!("{name}\t{confidence}");
    Ok(())
}

fn cmd_project(cfg: &Cfg) -> CliResult<()> {
    let model = load_model(cfg.str("model"))?;
    let dataset = load_dir(cfg.str("data"), model_target(model.embedder.config()))?;
    if dataset.len() < 3 {
        return Err(user(format!(
            "projection needs at least 3 images, the dataset has {}",
            dataset.len()
        )));
    }
    let dim = model.embedder.config().embedding_dim;
    let all: Vec<usize> = (0..dataset.len()).collect();
    let mut data = Vec::with_capacity(dataset.len() * dim);
    for chunk in all.chunks(64) {
        data.extend_from_slice(model.embedder.embed(&dataset.batch_tensor(chunk)?)?.data());
    }
    let embeddings = Tensor::new(vec![dataset.len(), dim], data)?;
    let projection = pca_project(&embeddings, &dataset.labels())?;
    eval::export_projection_csv(&projection, dataset.class_names(), Path::new(cfg.str("out")))?;
    eprintln!("wrote {}", cfg.str("out"));
    println!(
        "explained={},{}",
        projection.explained[0], projection.explained[1]
    );
    Ok(())
}

// ------------------------------------------------------------------- main

fn dispatch(matches: &ArgMatches) -> CliResult<()> {
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let (cmd_name, _, table) = COMMANDS
        .iter()
        .find(|(n, _, _)| *n == name)
        .expect("subcommands come from the table");
    let cfg = resolve(cmd_name, sub, table)?;
    match name {
        "synth" => cmd_synth(&cfg),
        "train-embedder" => cmd_train_embedder(&cfg),
        "train-head" => cmd_train_head(&cfg),
        "evaluate" => cmd_evaluate(&cfg),
        "repeated-eval" => cmd_repeated_eval(&cfg),
        "enroll-eval" => cmd_enroll_eval(&cfg),
        "quantize" => cmd_quantize(&cfg),
        "benchmark" => cmd_benchmark(&cfg),
        "embed" => cmd_embed(&cfg),
        "predict" => cmd_predict(&cfg),
        "project" => cmd_project(&cfg),
        _ => unreachable!("subcommand table is exhaustive"),
    }
}

fn main() -> ExitCode {
    let matches = match build_cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match dispatch(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(2)
        }
    }
}
