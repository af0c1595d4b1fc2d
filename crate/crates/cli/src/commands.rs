//! Command implementations. Each returns a structured summary; the binary
//! only parses flags, prints and maps errors to exit codes.

use std::fs;
use std::path::{Path, PathBuf};

use bnn_mcmc::augmentation::{augment_dataset, augment_image, AugmentPolicy};
use bnn_mcmc::data::{
    apply_standardizer, encode_pgm, fit_standardizer, format_f64, load_csv, load_image_dir,
    read_pgm, save_csv, standardize_row, stratified_split, synth_blobs, SplitSpec,
    StandardizationParams, TrainSplit,
};
use bnn_mcmc::diagnostics::{acceptance_rate, chain_diagnostics, ChainDiagnostics, MIN_ESS_SAMPLES};
use bnn_mcmc::evaluation::{
    confusion_matrix, macro_auc, metrics_from_confusion, one_vs_rest_roc, ConfusionMatrix,
    MetricsReport,
};
use bnn_mcmc::features::{ConvStack, ConvStackSpec, Image};
use bnn_mcmc::rng::{derive_seed, normal_vector, stream_rng};
use bnn_mcmc::samplers::{argmax, entropy, posterior_mean_probs, run_chains, Prediction};
use bnn_mcmc::{BayesianModel, Chain, Dataset, NetworkSpec};
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    chain_meta_path, chain_table_path, encode_chain_table, encode_roc_table, find_chain_tables,
    read_chain, read_json, read_run_chains, write_atomic, write_json, ChainMeta, Manifest,
    ModelArtifact, MODEL_FILE,
};
use crate::config::{InitMode, RunConfig, Source};
use crate::error::{CliError, CliResult};

/// Divergence rate above which a warning is attached to the report.
pub const DIVERGENCE_WARNING_RATE: f64 = 0.5;
pub const RHAT_THRESHOLD: f64 = 1.1;

/// Standardised train/test data ready for the sampler.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub standardizer: StandardizationParams,
    pub features: Option<ConvStackSpec>,
    pub class_names: Vec<String>,
    /// Source rows of the training split, before augmentation.
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

fn split_spec(cfg: &RunConfig) -> SplitSpec {
    SplitSpec {
        test_fraction: cfg.split.test_fraction,
        seed: cfg.split.seed.unwrap_or_else(|| derive_seed(cfg.seed, "split")),
        stratified: cfg.split.stratified,
    }
}

fn featurize(stack: &ConvStack, images: &[Image], labels: Vec<usize>, k: usize) -> CliResult<Dataset> {
    let rows = images
        .iter()
        .map(|im| stack.extract(im))
        .collect::<bnn_mcmc::Result<Vec<_>>>()?;
    Ok(Dataset::new(rows, labels, k)?)
}

/// Ingests, splits, augments the training images, extracts features and
/// standardises with statistics of the training split.
pub fn prepare(cfg: &RunConfig) -> CliResult<Prepared> {
    let split = split_spec(cfg);
    let (train, test, features, class_names, train_indices, test_indices) = match cfg.data.source {
        Source::Csv => {
            let data = load_csv(cfg.data_path())?;
            let s = stratified_split(&data, &split)?;
            let names = (0..data.n_classes()).map(|k| k.to_string()).collect();
            (s.train.0, s.test.0, None, names, s.train_indices, s.test_indices)
        }
        Source::Images => {
            let folder = load_image_dir(cfg.data_path())?;
            let k = folder.class_names.len();
            let index_rows: Vec<Vec<f64>> = (0..folder.images.len()).map(|i| vec![i as f64]).collect();
            let index_data = Dataset::new(index_rows, folder.labels.clone(), k)?;
            let s = stratified_split(&index_data, &split)?;
            let pick = |idx: &[usize]| -> (Vec<Image>, Vec<usize>) {
                idx.iter()
                    .map(|&i| (folder.images[i].clone(), folder.labels[i]))
                    .unzip()
            };
            let (mut train_images, mut train_labels) = pick(&s.train_indices);
            let (test_images, test_labels) = pick(&s.test_indices);
            if let Some(policy) = &cfg.augmentation {
                (train_images, train_labels) = augment_dataset(&train_images, &train_labels, policy)?;
            }
            let spec = cfg.data.features.clone().unwrap_or_default();
            let stack = ConvStack::new(spec.clone())?;
            let train = featurize(&stack, &train_images, train_labels, k)?;
            let test = featurize(&stack, &test_images, test_labels, k)?;
            (train, test, Some(spec), folder.class_names, s.train_indices, s.test_indices)
        }
    };
    let standardizer = fit_standardizer(&TrainSplit(train.clone()));
    Ok(Prepared {
        train: apply_standardizer(&standardizer, &train)?,
        test: apply_standardizer(&standardizer, &test)?,
        standardizer,
        features,
        class_names,
        train_indices,
        test_indices,
    })
}

/// Network spec of the run, checked against the prepared data.
pub fn network_spec(cfg: &RunConfig, data: &Dataset) -> CliResult<NetworkSpec> {
    let d = data.n_features();
    let k = data.n_classes();
    let mut errs = Vec::new();
    if let Some(i) = cfg.network.input_dim.filter(|&i| i != d) {
        errs.push(format!("network.input_dim: {i} does not match the {d} features of the data"));
    }
    if let Some(n) = cfg.network.n_classes.filter(|&n| n != k) {
        errs.push(format!("network.n_classes: {n} does not match the {k} classes of the data"));
    }
    if !errs.is_empty() {
        return Err(CliError {
            kind: crate::error::Failure::Config,
            messages: errs,
        });
    }
    Ok(NetworkSpec::new(d, cfg.network.hidden_dims.clone(), k, cfg.network.activation)?)
}

/// Starting points: `N(0, init_scale^2)` per weight.
pub fn initial_states(cfg: &RunConfig, dim: usize) -> Vec<Vec<f64>> {
    let seed = derive_seed(cfg.seed, "init");
    let n = cfg.chains.n_chains;
    match cfg.chains.init {
        InitMode::Shared => {
            let w = normal_vector(&mut stream_rng(seed, 0), dim, cfg.chains.init_scale);
            vec![w; n]
        }
        InitMode::Independent => (0..n)
            .map(|i| normal_vector(&mut stream_rng(seed, i as u64), dim, cfg.chains.init_scale))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    #[serde(flatten)]
    pub chains: ChainDiagnostics,
    pub fraction_rhat_below_threshold: f64,
    pub rhat_threshold: f64,
    /// `None` when the chains are too short for ESS and R-hat.
    pub max_rhat: Option<f64>,
    pub min_ess: Option<f64>,
    pub degenerate: bool,
    pub warnings: Vec<String>,
}

impl DiagnosticsReport {
    pub fn new(chains: &[Chain]) -> CliResult<Self> {
        let shortest = chains.iter().map(Chain::len).min().unwrap_or(0);
        let mut warnings = Vec::new();
        let diag = if shortest < MIN_ESS_SAMPLES {
            warnings.push(format!(
                "too few retained samples ({shortest}) per chain for ESS and R-hat; need {MIN_ESS_SAMPLES}"
            ));
            rates_only(chains)?
        } else {
            chain_diagnostics(chains)?
        };
        if diag.divergence_rate > DIVERGENCE_WARNING_RATE {
            warnings.push(format!(
                "divergence rate {:.2} exceeds {:.2}; reduce the step size",
                diag.divergence_rate, DIVERGENCE_WARNING_RATE
            ));
        }
        if diag.any_degenerate() {
            warnings.push("some dimensions have no variation; ESS and R-hat are not informative".into());
        }
        Ok(Self {
            fraction_rhat_below_threshold: diag.fraction_rhat_below(RHAT_THRESHOLD),
            rhat_threshold: RHAT_THRESHOLD,
            max_rhat: diag.dimensions.iter().map(|d| d.split_rhat).reduce(f64::max),
            min_ess: diag.dimensions.iter().map(|d| d.ess).reduce(f64::min),
            degenerate: diag.any_degenerate(),
            warnings,
            chains: diag,
        })
    }
}

/// Acceptance and divergence rates without per-dimension summaries.
fn rates_only(chains: &[Chain]) -> CliResult<ChainDiagnostics> {
    if chains.is_empty() {
        return Err(CliError::data("no chains to diagnose"));
    }
    let proposed: usize = chains.iter().map(|c| c.n_proposed).sum();
    let ratio = |a: usize| if proposed == 0 { 0.0 } else { a as f64 / proposed as f64 };
    Ok(ChainDiagnostics {
        n_chains: chains.len(),
        n_retained: chains.iter().map(Chain::len).sum(),
        acceptance_rate: ratio(chains.iter().map(|c| c.n_accepted).sum()),
        per_chain_acceptance: chains.iter().map(acceptance_rate).collect(),
        divergence_rate: ratio(chains.iter().map(|c| c.n_divergent).sum()),
        dimensions: Vec::new(),
    })
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub n_train: usize,
    pub n_test: usize,
    pub n_params: usize,
    pub diagnostics: DiagnosticsReport,
}

pub fn train(cfg: &RunConfig) -> CliResult<TrainSummary> {
    cfg.validate()?;
    let prepared = prepare(cfg)?;
    let spec = network_spec(cfg, &prepared.train)?;
    let model = BayesianModel::new(spec.clone(), prepared.train.clone(), cfg.prior)?;
    let inits = initial_states(cfg, spec.param_count());
    let controls = cfg.controls();
    let chains = run_chains(&model, &cfg.sampler, &inits, &controls, derive_seed(cfg.seed, "chains"))?;

    let out = cfg.out_dir();
    fs::create_dir_all(&out)?;
    let mut manifest = Manifest::new("train", cfg.hash(), cfg.seed);
    for (i, chain) in chains.iter().enumerate() {
        let table = chain_table_path(&out, i);
        let meta = chain_meta_path(&out, i);
        write_atomic(&table, encode_chain_table(chain).as_bytes())?;
        write_json(&meta, &ChainMeta::new(i, chain, controls))?;
        manifest.record(&out, &format!("chain_{i}.csv"))?;
        manifest.record(&out, &format!("chain_{i}.json"))?;
    }
    let artifact = ModelArtifact {
        network: spec.clone(),
        prior: cfg.prior,
        sampler: cfg.sampler,
        standardizer: prepared.standardizer.clone(),
        features: prepared.features.clone(),
        class_names: prepared.class_names.clone(),
        n_chains: chains.len(),
    };
    write_json(&out.join(MODEL_FILE), &artifact)?;
    manifest.record(&out, MODEL_FILE)?;
    let diagnostics = DiagnosticsReport::new(&chains)?;
    write_json(&out.join("diagnostics.json"), &diagnostics)?;
    manifest.record(&out, "diagnostics.json")?;
    write_json(&out.join("train_manifest.json"), &manifest)?;

    Ok(TrainSummary {
        out_dir: out,
        n_train: prepared.train.n_samples(),
        n_test: prepared.test.n_samples(),
        n_params: spec.param_count(),
        diagnostics,
    })
}

fn load_run(dir: &Path) -> CliResult<(ModelArtifact, Vec<Chain>)> {
    let model: ModelArtifact = read_json(&dir.join(MODEL_FILE))?;
    let chains = read_run_chains(dir, model.n_chains)?;
    let p = model.network.param_count();
    for (i, c) in chains.iter().enumerate() {
        if c.dim() != p {
            return Err(CliError::data(format!(
                "chain_{i}.csv has {} weights per sample but the network has {p} parameters",
                c.dim()
            )));
        }
        if c.is_empty() {
            return Err(CliError::data(format!("chain_{i}.csv holds no samples")));
        }
    }
    Ok((model, chains))
}

fn pooled_samples(chains: &[Chain]) -> Vec<&[f64]> {
    chains.iter().flat_map(|c| c.samples.iter().map(Vec::as_slice)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAuc {
    pub class: usize,
    pub name: String,
    /// Absent when the split lacks positives or negatives for this class.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub split: EvalSplit,
    pub n_samples: usize,
    pub n_posterior_samples: usize,
    pub class_names: Vec<String>,
    pub confusion_matrix: ConfusionMatrix,
    pub metrics: MetricsReport,
    pub auc: Vec<ClassAuc>,
    pub macro_auc: Option<f64>,
    pub mean_entropy: f64,
    pub roc_tables: Vec<String>,
}

pub fn evaluate(cfg: &RunConfig, split: EvalSplit) -> CliResult<EvaluationReport> {
    cfg.validate()?;
    let out = cfg.out_dir();
    let (model, chains) = load_run(&out)?;
    let prepared = prepare(cfg)?;
    if prepared.standardizer != model.standardizer {
        return Err(CliError::data(
            "prepared training data differs from the run that produced these chains".to_string(),
        ));
    }
    let data = match split {
        EvalSplit::Train => &prepared.train,
        EvalSplit::Test => &prepared.test,
    };
    if data.n_features() != model.network.input_dim {
        return Err(CliError::data(format!(
            "data has {} features but the network expects {}",
            data.n_features(),
            model.network.input_dim
        )));
    }
    let samples = pooled_samples(&chains);
    let k = model.network.n_classes;
    let probs = data
        .rows()
        .map(|x| posterior_mean_probs(&model.network, &samples, x))
        .collect::<bnn_mcmc::Result<Vec<_>>>()?;
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let cm = confusion_matrix(data.labels(), &preds, k)?;
    let metrics = metrics_from_confusion(&cm)?;
    let curves = one_vs_rest_roc(&probs, data.labels(), k)?;

    let prefix = match split {
        EvalSplit::Train => "train_",
        EvalSplit::Test => "",
    };
    let mut manifest = Manifest::new("evaluate", cfg.hash(), cfg.seed);
    // two classes share one curve: class 1 against class 0
    let emitted: Vec<usize> = if k == 2 { vec![1] } else { (0..k).collect() };
    let mut roc_tables = Vec::new();
    for &c in &emitted {
        if let Some(curve) = &curves[c] {
            let name = format!("{prefix}roc_class{c}.csv");
            write_atomic(&out.join(&name), encode_roc_table(curve).as_bytes())?;
            manifest.record(&out, &name)?;
            roc_tables.push(name);
        }
    }

    let mut table = String::from("index,label,predicted,entropy");
    for c in 0..k {
        table.push_str(&format!(",p{c}"));
    }
    table.push('\n');
    for (i, p) in probs.iter().enumerate() {
        table.push_str(&format!("{i},{},{},{}", data.labels()[i], preds[i], format_f64(entropy(p))));
        for v in p {
            table.push(',');
            table.push_str(&format_f64(*v));
        }
        table.push('\n');
    }
    let pred_name = format!("{prefix}predictions.csv");
    write_atomic(&out.join(&pred_name), table.as_bytes())?;
    manifest.record(&out, &pred_name)?;

    let report = EvaluationReport {
        split,
        n_samples: data.n_samples(),
        n_posterior_samples: samples.len(),
        class_names: model.class_names.clone(),
        auc: curves
            .iter()
            .enumerate()
            .map(|(c, curve)| ClassAuc {
                class: c,
                name: model.class_names.get(c).cloned().unwrap_or_default(),
                auc: curve.as_ref().map(|r| r.auc),
            })
            .collect(),
        macro_auc: macro_auc(&curves),
        mean_entropy: probs.iter().map(|p| entropy(p)).sum::<f64>() / probs.len() as f64,
        confusion_matrix: cm,
        metrics,
        roc_tables,
    };
    let metrics_name = format!("{prefix}metrics.json");
    write_json(&out.join(&metrics_name), &report)?;
    manifest.record(&out, &metrics_name)?;
    write_json(&out.join(format!("{prefix}evaluate_manifest.json")), &manifest)?;
    Ok(report)
}

pub enum PredictInput {
    Vector(Vec<f64>),
    Image(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub class: usize,
    pub class_name: String,
    pub probabilities: Vec<f64>,
    /// Entropy of the mean predictive distribution, in nats.
    pub entropy: f64,
    pub n_posterior_samples: usize,
}

pub fn predict(run_dir: &Path, input: &PredictInput) -> CliResult<PredictionReport> {
    let (model, chains) = load_run(run_dir)?;
    let mut x = match input {
        PredictInput::Vector(v) => v.clone(),
        PredictInput::Image(path) => {
            let spec = model.features.clone().ok_or_else(|| {
                CliError::data("this run was trained on vectors; pass --input instead of --image")
            })?;
            ConvStack::new(spec)?.extract(&read_pgm(path)?)?
        }
    };
    if x.len() != model.network.input_dim {
        return Err(CliError::data(format!(
            "input has {} features but the network expects {}",
            x.len(),
            model.network.input_dim
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CliError::data("input contains non-finite values"));
    }
    standardize_row(&model.standardizer, &mut x);
    let samples = pooled_samples(&chains);
    let Prediction {
        class,
        probabilities,
        entropy,
    } = bnn_mcmc::samplers::posterior_predict(&model.network, &samples, &x)?;
    Ok(PredictionReport {
        class,
        class_name: model.class_names.get(class).cloned().unwrap_or_default(),
        probabilities,
        entropy,
        n_posterior_samples: samples.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub n_input: usize,
    pub n_output: usize,
    pub class_names: Vec<String>,
}

/// Copies every image of `input` into `output` byte for byte and writes
/// `per_image_count` transformed copies next to each as `<stem>_aug<j>.pgm`.
pub fn augment(input: &Path, output: &Path, policy: &AugmentPolicy) -> CliResult<AugmentSummary> {
    policy.validate()?;
    let folder = load_image_dir(input)?;
    let mut n_output = 0;
    for (index, (image, path)) in folder.images.iter().zip(&folder.paths).enumerate() {
        let class = &folder.class_names[folder.labels[index]];
        let dir = output.join(class);
        let file_name = path
            .file_name()
            .ok_or_else(|| CliError::data(format!("{} has no file name", path.display())))?;
        write_atomic(&dir.join(file_name), &fs::read(path)?)?;
        n_output += 1;
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        for (j, copy) in augment_image(image, index, policy)?.iter().enumerate() {
            write_atomic(&dir.join(format!("{stem}_aug{j}.pgm")), &encode_pgm(copy))?;
            n_output += 1;
        }
    }
    Ok(AugmentSummary {
        n_input: folder.images.len(),
        n_output,
        class_names: folder.class_names,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_per_class: usize,
    pub n_classes: usize,
    pub dim: usize,
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
}

pub fn synth(params: &SynthParams, path: &Path) -> CliResult<Dataset> {
    let data = synth_blobs(
        params.n_per_class,
        params.n_classes,
        params.dim,
        params.separation,
        params.noise,
        params.seed,
    )?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp",
        path.file_name().unwrap_or_default().to_string_lossy()
    ));
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_csv(&data, &tmp)?;
    fs::rename(&tmp, path)?;
    Ok(data)
}

/// Diagnostics over chain tables. Directories expand to their
/// `chain_<i>.csv` files.
pub fn diagnose(paths: &[PathBuf]) -> CliResult<DiagnosticsReport> {
    let mut tables = Vec::new();
    for p in paths {
        if p.is_dir() {
            tables.extend(find_chain_tables(p)?);
        } else {
            tables.push(p.clone());
        }
    }
    if tables.is_empty() {
        return Err(CliError::data("no chain tables found"));
    }
    let chains = tables.iter().map(|t| read_chain(t)).collect::<CliResult<Vec<_>>>()?;
    DiagnosticsReport::new(&chains)
}
