//! Accuracy/confusion evaluation, the repeated-split protocol, few-shot
//! enrollment testing, embedding-separation statistics, and CSV export.

use std::io::Write;
use std::path::Path;

use crate::classifier::{mlp_predict, KnnIndex, MlpHead};
use crate::data::Dataset;
use crate::embedder::{EmbedderConfig, EmbedderNet};
use crate::error::{Error, Result};
use crate::optim::{embed_dataset, split_stratified, train_embedder, TrainConfig};
use crate::pca::Projection2D;
use crate::tensor::Tensor;

/// Confusion-matrix evaluation result. Rows are true classes, columns are
/// predictions; `accuracy` is exactly trace/total.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub class_names: Vec<String>,
}

impl EvalReport {
    pub fn from_confusion(confusion: Vec<Vec<usize>>, class_names: Vec<String>) -> Result<Self> {
        let n = class_names.len();
        if confusion.len() != n || confusion.iter().any(|row| row.len() != n) {
            return Err(Error::Contract(format!(
                "confusion matrix must be {n}x{n} to match the class list"
            )));
        }
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Contract("confusion matrix holds no images".into()));
        }
        let trace: usize = (0..n).map(|i| confusion[i][i]).sum();
        Ok(EvalReport {
            accuracy: trace as f64 / total as f64,
            confusion,
            class_names,
        })
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

/// The classifier to drive during evaluation.
#[derive(Debug, Clone, Copy)]
pub enum ClassifierKind<'a> {
    Knn { index: &'a KnnIndex, k: usize },
    Mlp { head: &'a MlpHead },
}

impl ClassifierKind<'_> {
    fn class_names(&self) -> &[String] {
        match self {
            ClassifierKind::Knn { index, .. } => index.class_names(),
            ClassifierKind::Mlp { head } => &head.class_names,
        }
    }
}

/// Embeds the test set, predicts with the classifier, and tallies the
/// confusion matrix over the classifier's class universe. Every test class
/// with images must be known to the classifier.
pub fn evaluate(
    net: &EmbedderNet,
    classifier: ClassifierKind<'_>,
    test: &Dataset,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Dataset("evaluate on an empty test set".into()));
    }
    let all: Vec<usize> = (0..test.len()).collect();
    let embeddings = embed_dataset(net, test, &all)?;
    tally(&embeddings, classifier, test)
}

/// `evaluate` over a saved embedder, float or quantized.
pub fn evaluate_model(
    embedder: &crate::model_file::EmbedderModel,
    classifier: ClassifierKind<'_>,
    test: &Dataset,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Dataset("evaluate on an empty test set".into()));
    }
    let d = embedder.config().embedding_dim;
    let mut data = Vec::with_capacity(test.len() * d);
    let all: Vec<usize> = (0..test.len()).collect();
    for chunk in all.chunks(64) {
        let images = test.batch_tensor(chunk)?;
        data.extend_from_slice(embedder.embed(&images)?.data());
    }
    let embeddings = Tensor::new(vec![test.len(), d], data)?;
    tally(&embeddings, classifier, test)
}

fn tally(
    embeddings: &Tensor,
    classifier: ClassifierKind<'_>,
    test: &Dataset,
) -> Result<EvalReport> {
    let names = classifier.class_names().to_vec();
    // test-registry label -> classifier universe label
    let mapping: Vec<Option<usize>> = test
        .class_names()
        .iter()
        .map(|n| names.iter().position(|m| m == n))
        .collect();

    let predictions: Vec<usize> = match classifier {
        ClassifierKind::Knn { index, k } => index.predict(embeddings, k)?.labels,
        ClassifierKind::Mlp { head } => mlp_predict(head, embeddings)?
            .into_iter()
            .map(|(c, _)| c)
            .collect(),
    };

    let n = names.len();
    let mut confusion = vec![vec![0usize; n]; n];
    for (i, &pred) in predictions.iter().enumerate() {
        let true_label = test.label(i);
        let mapped = mapping[true_label].ok_or_else(|| {
            Error::Config(format!(
                "test class {:?} unknown to the classifier",
                test.class_names()[true_label]
            ))
        })?;
        confusion[mapped][pred] += 1;
    }
    EvalReport::from_confusion(confusion, names)
}

/// Accuracies across repeated fresh-split runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSummary {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub max: f64,
}

impl SplitSummary {
    pub fn new(accuracies: Vec<f64>) -> Result<Self> {
        if accuracies.is_empty() {
            return Err(Error::Contract("summary of zero runs".into()));
        }
        if accuracies.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Contract("accuracy outside [0,1]".into()));
        }
        let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
        let max = accuracies.iter().cloned().fold(0.0, f64::max);
        Ok(SplitSummary {
            accuracies,
            mean,
            max,
        })
    }

    pub fn runs(&self) -> usize {
        self.accuracies.len()
    }
}

/// One full train-and-evaluate pass per seed: stratified split, embedder
/// trained from scratch, train images enrolled into a 1-NN index, held-out
/// split evaluated. Each run's seed drives its split, its weight
/// initialization, and its batch sampling.
pub fn repeated_splits(
    dataset: &Dataset,
    embed_cfg: &EmbedderConfig,
    train_cfg: &TrainConfig,
    ratio: f64,
    seeds: &[u64],
) -> Result<SplitSummary> {
    if seeds.is_empty() {
        return Err(Error::Config("repeated_splits needs at least 1 run".into()));
    }
    let mut accuracies = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let (train, test) = split_stratified(dataset, ratio, seed)?;
        let run_embed = EmbedderConfig {
            init_seed: seed,
            ..embed_cfg.clone()
        };
        let run_train = TrainConfig {
            seed,
            ..train_cfg.clone()
        };
        let (net, _) = train_embedder(&train, &run_embed, &run_train)?;
        let index = enroll_dataset(&net, &train)?;
        let report = evaluate(&net, ClassifierKind::Knn { index: &index, k: 1 }, &test)?;
        accuracies.push(report.accuracy);
    }
    SplitSummary::new(accuracies)
}

/// Builds a KNN index holding every image of `dataset`, class by class.
pub fn enroll_dataset(net: &EmbedderNet, dataset: &Dataset) -> Result<KnnIndex> {
    let mut index = KnnIndex::new(net.config.embedding_dim);
    for (c, name) in dataset.class_names().iter().enumerate() {
        let members = dataset.class_members(c);
        if members.is_empty() {
            continue;
        }
        let e = embed_dataset(net, dataset, members)?;
        index.enroll(&e, name)?;
    }
    Ok(index)
}

/// Enrolls the first `shots` images of each novel class (plus every image
/// of `base`, when given) into a fresh 1-NN index, then evaluates on the
/// remaining novel images.
pub fn fewshot_enroll_eval(
    net: &EmbedderNet,
    base: Option<&Dataset>,
    novel: &Dataset,
    shots: usize,
) -> Result<EvalReport> {
    if shots == 0 {
        return Err(Error::Config("enrollment needs at least 1 shot".into()));
    }
    let mut index = KnnIndex::new(net.config.embedding_dim);
    if let Some(base) = base {
        for (c, name) in base.class_names().iter().enumerate() {
            let members = base.class_members(c);
            if !members.is_empty() {
                let e = embed_dataset(net, base, members)?;
                index.enroll(&e, name)?;
            }
        }
    }
    let mut held_out = Vec::new();
    for (c, name) in novel.class_names().iter().enumerate() {
        let members = novel.class_members(c);
        if members.len() <= shots {
            return Err(Error::Contract(format!(
                "class {name:?} has {} images; {shots} shots would leave nothing held out",
                members.len()
            )));
        }
        if members.len() < 2 * shots {
            return Err(Error::Dataset(format!(
                "class {name:?} has {} images, fewer than 2x{shots} shots",
                members.len()
            )));
        }
        let e = embed_dataset(net, novel, &members[..shots])?;
        index.enroll(&e, name)?;
        held_out.extend_from_slice(&members[shots..]);
    }
    held_out.sort_unstable();
    let test = novel.subset(&held_out)?;
    evaluate(net, ClassifierKind::Knn { index: &index, k: 1 }, &test)
}

/// (mean inter-class distance) / (mean intra-class distance), Euclidean.
pub fn separation_ratio(embeddings: &Tensor, labels: &[usize]) -> Result<f64> {
    let n = embeddings.shape()[0];
    if n != labels.len() {
        return Err(Error::Contract(format!(
            "separation_ratio: {n} rows vs {} labels",
            labels.len()
        )));
    }
    let (mut intra, mut n_intra) = (0.0f64, 0usize);
    let (mut inter, mut n_inter) = (0.0f64, 0usize);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (Tensor::sq_dist(embeddings.row(i), embeddings.row(j)) as f64).sqrt();
            if labels[i] == labels[j] {
                intra += d;
                n_intra += 1;
            } else {
                inter += d;
                n_inter += 1;
            }
        }
    }
    if n_intra == 0 || n_inter == 0 {
        return Err(Error::DegenerateData(
            "separation_ratio needs both same-class and cross-class pairs".into(),
        ));
    }
    let mean_intra = intra / n_intra as f64;
    if mean_intra < 1e-18 {
        return Err(Error::DegenerateData(
            "all same-class embeddings identical; ratio undefined".into(),
        ));
    }
    Ok((inter / n_inter as f64) / mean_intra)
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    f.write_all(content.as_bytes())
        .map_err(|e| Error::io(path.to_path_buf(), e))
}

/// Header row of class names, then one row per true class prefixed by its
/// name.
pub fn export_confusion_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push(',');
    out.push_str(&report.class_names.join(","));
    out.push('\n');
    for (name, row) in report.class_names.iter().zip(&report.confusion) {
        out.push_str(name);
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    write_file(path, &out)
}

/// `run,accuracy` rows, then `mean` and `max` footer rows.
pub fn export_summary_csv(summary: &SplitSummary, path: &Path) -> Result<()> {
    let mut out = String::from("run,accuracy\n");
    for (i, a) in summary.accuracies.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, a));
    }
    out.push_str(&format!("mean,{}\n", summary.mean));
    out.push_str(&format!("max,{}\n", summary.max));
    write_file(path, &out)
}

/// `x,y,label` rows; labels go out as class names.
pub fn export_projection_csv(
    projection: &Projection2D,
    class_names: &[String],
    path: &Path,
) -> Result<()> {
    let mut out = String::from("x,y,label\n");
    for (&(x, y), &label) in projection.points.iter().zip(&projection.labels) {
        let name = class_names
            .get(label)
            .ok_or_else(|| Error::Contract(format!("label {label} has no class name")))?;
        out.push_str(&format!("{x},{y},{name}\n"));
    }
    write_file(path, &out)
}
