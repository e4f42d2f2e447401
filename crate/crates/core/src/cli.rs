//! The `connlab` command line.
//!
//! Every subcommand resolves its settings from built-in defaults, then an
//! optional `--config` JSON file, then flags, validates them before doing any
//! work, and writes `run_manifest.json` next to its outputs. See `docs/cli.md`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::{
    back_project_ranked, export_pattern, pair_loss, rank_features, truncated_metrics,
    ExpansionPolicy, KPairs,
};
use crate::baselines::{linear_accuracy, train_linear_svm, LinearModel, SvmConfig};
use crate::bayesian::{
    build_subset_suite, dropout_rate_sweep, uncertainty_sweep, DropoutPolicy, MixStage,
    DEFAULT_PASSES,
};
use crate::connectivity::{
    dataset_files, generate_synthetic, load_dataset, save_dataset, Dataset, SyntheticConfig,
    MANIFEST_FILE,
};
use crate::error::{Error, Result};
use crate::harness::{
    holdout_split, permuted_cv_spec, repeatability_study, sha256_hex, structure_sweep, CvConfig,
    ModelSpec, SweepCell, SweepReport,
};
use crate::network::{train, BatchMode, Network, NetworkSpec, Regularization, TrainConfig};
use crate::table::{Cell, Table};

pub const SEED_ENV: &str = "CONNLAB_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "connlab",
    version,
    about = "Connectivity classification, attribution and MC dropout experiments"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// JSON settings file for the subcommand; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed (default: $CONNLAB_SEED, else 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Also write whitespace-separated .dat files for gnuplot.
    #[arg(long, global = true)]
    gnuplot: bool,
    /// More logging (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Train a network (or linear SVM) on a dataset.
    Train(TrainArgs),
    /// Score a saved model on a dataset.
    Eval(EvalArgs),
    /// Permuted k-fold cross-validation, optionally over a structure grid.
    Cv(CvArgs),
    /// Rank last-layer features, back-project them and test truncated models.
    Rank(RankArgs),
    /// MC dropout rate sweep and mixed-subset uncertainty sweep.
    Mcdrop(McdropArgs),
    /// Repeatability of the top back-projected features across CV folds.
    Repeat(RepeatArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    timepoints: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    effect: Option<f64>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    noise: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    All,
    Train,
    Test,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset manifest or the directory containing it.
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Label strings for classes 0 and 1 (default: dataset.json).
    #[arg(long, value_delimiter = ',', num_args = 2, value_name = "NAME")]
    class_names: Option<Vec<String>>,
    /// Use only one half of a seeded 2-fold split.
    #[arg(long, value_enum)]
    split: Option<Split>,
    /// Seed of that split (default: the master seed).
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct NetArgs {
    /// Hidden layer counts; sizes follow the halving rule.
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    /// First hidden layer sizes.
    #[arg(long, value_delimiter = ',')]
    neurons: Option<Vec<usize>>,
    /// Explicit hidden sizes, e.g. 200,100,100.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["layers", "neurons"])]
    hidden: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
struct TrainFlags {
    #[arg(long, allow_negative_numbers = true)]
    lr: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    l1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    l2: Option<f64>,
    /// Dropout rate on the last hidden layer during training.
    #[arg(long, allow_negative_numbers = true)]
    dropout: Option<f64>,
    /// Mini-batch size (default: full batch).
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Debug, Args)]
struct SvmFlags {
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct CvFlags {
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    stratified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[default]
    Dnn,
    LinearSvm,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    svm: SvmFlags,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Network or linear-SVM JSON.
    #[arg(long, value_name = "FILE")]
    model_file: PathBuf,
}

#[derive(Debug, Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    /// Add a linear-SVM row to a DNN sweep.
    #[arg(long)]
    with_svm: bool,
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    cv: CvFlags,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    svm: SvmFlags,
}

#[derive(Debug, Args)]
struct RankArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_name = "FILE")]
    model_file: PathBuf,
    /// all | threshold:T | top:K
    #[arg(long)]
    policy: Option<ExpansionPolicy>,
    /// Patterns exported per class.
    #[arg(long)]
    patterns: Option<usize>,
    /// Deepest rank for the pair-loss table.
    #[arg(long)]
    max_rank: Option<usize>,
    /// Feature-pair counts for the truncation table ("all" is always added).
    #[arg(long, value_delimiter = ',')]
    k_pairs: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
struct McdropArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_name = "FILE")]
    model_file: PathBuf,
    /// Stochastic passes per input.
    #[arg(long = "T", visible_alias = "passes", value_name = "T")]
    passes: Option<usize>,
    /// Policies of the rate sweep, e.g. rate:0.2,rate:0.5,R2.
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<DropoutPolicy>>,
    /// Policy of the mixed-subset uncertainty sweep.
    #[arg(long)]
    policy: Option<DropoutPolicy>,
    /// Inputs per subset (default: min(100, smaller class)).
    #[arg(long)]
    subset_size: Option<usize>,
    #[arg(long, value_enum)]
    mix_stage: Option<MixStage>,
}

#[derive(Debug, Args)]
struct RepeatArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    cv: CvFlags,
    #[command(flatten)]
    train: TrainFlags,
    /// Expansion policy for the back-projection.
    #[arg(long)]
    policy: Option<ExpansionPolicy>,
}

// Resolved settings. These are what `--config` files contain and what
// `run_manifest.json` records.

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DataSel {
    class_names: Option<[String; 2]>,
    split: Split,
    split_seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CvSettings {
    n_permutations: usize,
    n_folds: usize,
    stratified: bool,
}

impl Default for CvSettings {
    fn default() -> Self {
        let d = CvConfig::default();
        Self {
            n_permutations: d.n_permutations,
            n_folds: d.n_folds,
            stratified: d.stratified,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenDataRun {
    seed: Option<u64>,
    synthetic: SyntheticConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainRun {
    seed: Option<u64>,
    data: DataSel,
    model: ModelKind,
    hidden_sizes: Vec<usize>,
    train: TrainConfig,
    svm: SvmConfig,
}

impl Default for TrainRun {
    fn default() -> Self {
        Self {
            seed: None,
            data: DataSel::default(),
            model: ModelKind::Dnn,
            hidden_sizes: vec![20],
            train: TrainConfig::default(),
            svm: SvmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalRun {
    seed: Option<u64>,
    data: DataSel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CvRun {
    seed: Option<u64>,
    data: DataSel,
    model: ModelKind,
    layers: Vec<usize>,
    neurons: Vec<usize>,
    /// Explicit hidden sizes; replaces the layers × neurons grid.
    hidden_sizes: Option<Vec<usize>>,
    with_svm: bool,
    cv: CvSettings,
    train: TrainConfig,
    svm: SvmConfig,
}

impl Default for CvRun {
    fn default() -> Self {
        Self {
            seed: None,
            data: DataSel::default(),
            model: ModelKind::Dnn,
            layers: vec![1],
            neurons: vec![20],
            hidden_sizes: None,
            with_svm: false,
            cv: CvSettings::default(),
            train: TrainConfig::default(),
            svm: SvmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RankRun {
    seed: Option<u64>,
    data: DataSel,
    policy: ExpansionPolicy,
    patterns: usize,
    max_rank: usize,
    k_pairs: Vec<usize>,
}

impl Default for RankRun {
    fn default() -> Self {
        Self {
            seed: None,
            data: DataSel::default(),
            policy: ExpansionPolicy::All,
            patterns: 5,
            max_rank: 10,
            k_pairs: vec![1, 2, 5, 10],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct McdropRun {
    seed: Option<u64>,
    data: DataSel,
    passes: usize,
    rates: Vec<DropoutPolicy>,
    policy: DropoutPolicy,
    subset_size: Option<usize>,
    mix_stage: MixStage,
}

impl Default for McdropRun {
    fn default() -> Self {
        Self {
            seed: None,
            data: DataSel::default(),
            passes: DEFAULT_PASSES,
            rates: vec![
                DropoutPolicy::rate(0.0),
                DropoutPolicy::rate(0.2),
                DropoutPolicy::rate(0.5),
                DropoutPolicy::rate(0.8),
                DropoutPolicy::retain_exact(2),
            ],
            policy: DropoutPolicy::rate(0.5),
            subset_size: None,
            mix_stage: MixStage::Normalized,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RepeatRun {
    seed: Option<u64>,
    data: DataSel,
    hidden_sizes: Vec<usize>,
    cv: CvSettings,
    train: TrainConfig,
    policy: ExpansionPolicy,
}

impl Default for RepeatRun {
    fn default() -> Self {
        Self {
            seed: None,
            data: DataSel::default(),
            hidden_sizes: vec![20],
            cv: CvSettings::default(),
            train: TrainConfig::default(),
            policy: ExpansionPolicy::All,
        }
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn load_settings<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", p.display())))
        }
    }
}

/// Flag, then config, then `$CONNLAB_SEED`, then 0.
fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| {
            Error::InvalidArgument(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
        }),
        Err(_) => Ok(0),
    }
}

impl DataArgs {
    fn apply(&self, sel: &mut DataSel) -> Result<()> {
        if let Some(names) = &self.class_names {
            let [a, b] = <[String; 2]>::try_from(names.clone()).map_err(|_| {
                Error::InvalidArgument("--class-names takes exactly two names".into())
            })?;
            sel.class_names = Some([a, b]);
        }
        set(&mut sel.split, self.split);
        if self.split_seed.is_some() {
            sel.split_seed = self.split_seed;
        }
        Ok(())
    }

    fn manifest(&self) -> PathBuf {
        if self.data.is_dir() {
            self.data.join(MANIFEST_FILE)
        } else {
            self.data.clone()
        }
    }
}

impl TrainFlags {
    fn apply(&self, cfg: &mut TrainConfig) {
        set(&mut cfg.learning_rate, self.lr);
        set(&mut cfg.iterations, self.iterations);
        set(&mut cfg.l1_weight, self.l1);
        set(&mut cfg.l2_weight, self.l2);
        set(&mut cfg.dropout_rate, self.dropout);
        if let Some(size) = self.batch_size {
            cfg.batch_mode = BatchMode::MiniBatch { size };
        }
    }
}

impl SvmFlags {
    fn apply(&self, cfg: &mut SvmConfig) {
        set(&mut cfg.lambda, self.lambda);
        set(&mut cfg.epochs, self.epochs);
    }
}

impl CvFlags {
    fn apply(&self, cv: &mut CvSettings) {
        set(&mut cv.n_permutations, self.permutations);
        set(&mut cv.n_folds, self.folds);
        if self.stratified {
            cv.stratified = true;
        }
    }
}

impl CvSettings {
    fn to_config(&self, seed: u64, jobs: usize) -> CvConfig {
        CvConfig {
            n_permutations: self.n_permutations,
            n_folds: self.n_folds,
            master_seed: seed,
            jobs,
            stratified: self.stratified,
        }
    }
}

/// A single hidden-size list from `--hidden` or one `--layers`/`--neurons` pair.
fn single_hidden(net: &NetArgs, current: &mut Vec<usize>) -> Result<()> {
    if let Some(h) = &net.hidden {
        *current = h.clone();
        return Ok(());
    }
    let one = |v: &Option<Vec<usize>>, what: &str| -> Result<Option<usize>> {
        match v.as_deref() {
            None => Ok(None),
            Some([x]) => Ok(Some(*x)),
            Some(_) => Err(Error::InvalidArgument(format!(
                "--{what} takes a single value here"
            ))),
        }
    };
    let layers = one(&net.layers, "layers")?;
    let neurons = one(&net.neurons, "neurons")?;
    if layers.is_some() || neurons.is_some() {
        let l = layers.unwrap_or(current.len().max(1));
        let n = neurons.unwrap_or_else(|| current.first().copied().unwrap_or(20));
        *current = NetworkSpec::halving_sizes(l, n);
    }
    Ok(())
}

fn check_hidden(sizes: &[usize]) -> Result<()> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "hidden sizes must be positive, got {sizes:?}"
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct InputRecord {
    role: String,
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    seed: u64,
    config: serde_json::Value,
    inputs: Vec<InputRecord>,
    outputs: Vec<String>,
}

/// Output directory plus the list of artifacts written so far.
struct Sink {
    dir: PathBuf,
    gnuplot: bool,
    outputs: Vec<String>,
    inputs: Vec<InputRecord>,
}

impl Sink {
    fn new(dir: &Path, gnuplot: bool) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            gnuplot,
            outputs: Vec::new(),
            inputs: Vec::new(),
        })
    }

    fn path(&mut self, rel: &str) -> PathBuf {
        self.outputs.push(rel.to_string());
        self.dir.join(rel)
    }

    fn table(&mut self, stem: &str, t: &Table) -> Result<()> {
        let p = self.path(&format!("{stem}.csv"));
        t.write_csv(&p)?;
        if self.gnuplot {
            let p = self.path(&format!("{stem}.dat"));
            t.write_gnuplot(&p)?;
        }
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let p = self.path(rel);
        fs::write(&p, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(&p, e))
    }

    fn hash_file(&mut self, role: &str, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push(InputRecord {
            role: role.into(),
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    /// One digest over every file of the dataset, in manifest order.
    fn hash_dataset(&mut self, manifest: &Path) -> Result<()> {
        let mut h = Sha256::new();
        for f in dataset_files(manifest)? {
            let bytes = fs::read(&f).map_err(|e| Error::io(&f, e))?;
            h.update(sha256_hex(&bytes).as_bytes());
            h.update(b"\n");
        }
        self.inputs.push(InputRecord {
            role: "dataset".into(),
            path: manifest.display().to_string(),
            sha256: hex::encode(h.finalize()),
        });
        Ok(())
    }

    fn finish<T: Serialize>(mut self, command: &str, seed: u64, config: &T) -> Result<()> {
        self.outputs.sort();
        let manifest = RunManifest {
            tool: "connlab",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config: serde_json::to_value(config)?,
            inputs: std::mem::take(&mut self.inputs),
            outputs: self.outputs.clone(),
        };
        let p = self.dir.join("run_manifest.json");
        fs::write(&p, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&p, e))
    }
}

/// Loads the dataset and applies the requested half of the split.
fn load_selected(args: &DataArgs, sel: &DataSel, seed: u64, sink: &mut Sink) -> Result<Dataset> {
    let manifest = args.manifest();
    let data = load_dataset(&manifest, sel.class_names.as_ref())?;
    sink.hash_dataset(&manifest)?;
    select_split(data, sel, seed)
}

fn select_split(data: Dataset, sel: &DataSel, seed: u64) -> Result<Dataset> {
    if sel.split == Split::All {
        return Ok(data);
    }
    let labels: Vec<usize> = data.records().iter().map(|r| r.label).collect();
    let (train, test) = holdout_split(&labels, sel.split_seed.unwrap_or(seed));
    data.subset(if sel.split == Split::Train {
        &train
    } else {
        &test
    })
}

enum Model {
    Dnn(Network),
    Svm(LinearModel),
}

fn load_model(path: &Path, sink: &mut Sink) -> Result<Model> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    sink.hash_file("model", path)?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    match v.get("format").and_then(|f| f.as_str()) {
        Some("connlab-network") => Ok(Model::Dnn(Network::from_json(&text)?)),
        Some("connlab-linear-svm") => Ok(Model::Svm(LinearModel::from_json(&text)?)),
        other => Err(Error::Format(format!(
            "{}: unknown model format {other:?}",
            path.display()
        ))),
    }
}

fn load_network(path: &Path, sink: &mut Sink) -> Result<Network> {
    match load_model(path, sink)? {
        Model::Dnn(n) => Ok(n),
        Model::Svm(_) => Err(Error::Unsupported(format!(
            "{} is a linear SVM; a network is required",
            path.display()
        ))),
    }
}

enum Failure {
    Usage(Error),
    Runtime(Error),
}

type Step<T> = std::result::Result<T, Failure>;

fn usage<T>(r: Result<T>) -> Step<T> {
    r.map_err(Failure::Usage)
}

fn runtime<T>(r: Result<T>) -> Step<T> {
    r.map_err(Failure::Runtime)
}

/// Parses `args` (including the program name) and runs the command. Returns
/// the process exit code: 0 success, 1 runtime failure, 2 usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            report(&e);
            2
        }
        Err(Failure::Runtime(e)) => {
            report(&e);
            1
        }
    }
}

fn report(e: &Error) {
    let msg = e.to_string().replace('\n', " ");
    eprintln!("error: {}: {msg}", e.kind());
}

fn dispatch(cli: Cli) -> Step<()> {
    let g = &cli.global;
    match &cli.command {
        Command::GenData(a) => gen_data(g, a),
        Command::Train(a) => train_cmd(g, a),
        Command::Eval(a) => eval_cmd(g, a),
        Command::Cv(a) => cv_cmd(g, a),
        Command::Rank(a) => rank_cmd(g, a),
        Command::Mcdrop(a) => mcdrop_cmd(g, a),
        Command::Repeat(a) => repeat_cmd(g, a),
    }
}

fn gen_data(g: &Global, a: &GenDataArgs) -> Step<()> {
    let mut run: GenDataRun = usage(load_settings(g.config.as_deref()))?;
    let s = &mut run.synthetic;
    set(&mut s.n_nodes, a.nodes);
    set(&mut s.n_subjects, a.subjects);
    set(&mut s.n_timepoints, a.timepoints);
    set(&mut s.class_effect_size, a.effect);
    set(&mut s.n_effect_blocks, a.blocks);
    set(&mut s.noise_sd, a.noise);
    let seed = usage(resolve_seed(g.seed, run.seed))?;
    run.seed = Some(seed);
    usage(run.synthetic.validate())?;

    let mut sink = runtime(Sink::new(&g.out, g.gnuplot))?;
    let data = runtime(generate_synthetic(&run.synthetic, seed))?;
    runtime(save_dataset(&data, &g.out))?;
    sink.outputs
        .extend(["manifest.csv", "dataset.json", "matrices/"].map(String::from));
    runtime(sink.finish("gen-data", seed, &run))
}

fn train_cmd(g: &Global, a: &TrainArgs) -> Step<()> {
    let mut run: TrainRun = usage(load_settings(g.config.as_deref()))?;
    usage(a.data.apply(&mut run.data))?;
    set(&mut run.model, a.model);
    usage(single_hidden(&a.net, &mut run.hidden_sizes))?;
    a.train.apply(&mut run.train);
    a.svm.apply(&mut run.svm);
    let seed = usage(resolve_seed(g.seed, run.seed))?;
    run.seed = Some(seed);
    run.train.seed = seed;
    run.svm.seed = seed;
    usage(check_hidden(&run.hidden_sizes))?;
    usage(run.train.validate())?;
    usage(run.svm.validate())?;

    let mut sink = runtime(Sink::new(&g.out, g.gnuplot))?;
    let data = runtime(load_selected(&a.data, &run.data, seed, &mut sink))?;
    let f = runtime(data.features())?;
    match run.model {
        ModelKind::Dnn => {
            let spec = NetworkSpec::new(
                f.input_dim(),
                run.hidden_sizes.clone(),
                2,
                run.train.dropout_rate,
            );
            let net = runtime(Network::init(spec, seed))?;
            let out = runtime(train(&net, &f, &run.train))?;
            let p = sink.path("model.json");
            runtime(crate::network::save_network(&out.network, &p))?;
            let mut t = Table::new(["iteration", "loss"]);
            for (i, l) in out.loss_trace.iter().enumerate() {
                t.push(vec![(i + 1).into(), (*l).into()]);
            }
            runtime(sink.table("loss_trace", &t))?;
            let probs = runtime(out.network.predict_batch(f.inputs.view()))?;
            let loss = runtime(
                out.network
                    .loss(f.inputs.view(), &f.labels, Regularization::NONE),
            )?;
            let summary = serde_json::json!({
                "n_train": f.len(),
                "final_trace_loss": out.loss_trace.last(),
                "reached_target": out.reached_target,
                "train_accuracy": crate::attribution::accuracy_of(&probs, &f.labels),
                "train_cross_entropy": loss.data_loss,
            });
            runtime(sink.json("training.json", &summary))?;
        }
        ModelKind::LinearSvm => {
            let out = runtime(train_linear_svm(&f, &run.svm))?;
            let p = sink.path("model.json");
            runtime(out.model.save(&p))?;
            let mut t = Table::new(["epoch", "objective"]);
            for (i, o) in out.objective_trace.iter().enumerate() {
                t.push(vec![(i + 1).into(), (*o).into()]);
            }
            runtime(sink.table("objective_trace", &t))?;
            let summary = serde_json::json!({
                "n_train": f.len(),
                "train_accuracy": runtime(linear_accuracy(&out.model, &f))?,
            });
            runtime(sink.json("training.json", &summary))?;
        }
    }
    runtime(sink.finish("train", seed, &run))
}

fn eval_cmd(g: &Global, a: &EvalArgs) -> Step<()> {
    let mut run: EvalRun = usage(load_settings(g.config.as_deref()))?;
    usage(a.data.apply(&mut run.data))?;
    let seed = usage(resolve_seed(g.seed, run.seed))?;
    run.seed = Some(seed);

    let mut sink = runtime(Sink::new(&g.out, g.gnuplot))?;
    let model = runtime(load_model(&a.model_file, &mut sink))?;
    let data = runtime(load_selected(&a.data, &run.data, seed, &mut sink))?;
    let f = runtime(data.features())?;
    let (summary, table) = match &model {
        Model::Dnn(net) => {
            let probs = runtime(net.predict_batch(f.inputs.view()))?;
            let mut t = Table::new(["subject_id", "label", "predicted", "p0", "p1"]);
            for (i, row) in probs.rows().into_iter().enumerate() {
                let pred = crate::network::argmax(row.as_slice().expect("contiguous"));
                t.push(vec![
                    f.ids[i].as_str().into(),
                    f.labels[i].into(),
                    pred.into(),
                    row[0].into(),
                    row[1].into(),
                ]);
            }
            let s = serde_json::json!({
                "model": "dnn",
                "n": f.len(),
                "accuracy": crate::attribution::accuracy_of(&probs, &f.labels),
                "cross_entropy": Network::cross_entropy(&probs, &f.labels),
            });
            (s, t)
        }
        Model::Svm(m) => {
            let mut t = Table::new(["subject_id", "label", "predicted", "decision"]);
            let mut correct = 0;
            for (i, row) in f.inputs.rows().into_iter().enumerate() {
                let d = runtime(m.decision(row))?;
                let pred = usize::from(d > 0.0);
                correct += usize::from(pred == f.labels[i]);
                t.push(vec![
                    f.ids[i].as_str().into(),
                    f.labels[i].into(),
                    pred.into(),
                    d.into(),
                ]);
            }
            let s = serde_json::json!({
                "model": "linear-svm",
                "n": f.len(),
                "accuracy": correct as f64 / f.len() as f64,
            });
            (s, t)
        }
    };
    runtime(sink.json("eval.json", &summary))?;
    runtime(sink.table("predictions", &table))?;
    runtime(sink.finish("eval", seed, &run))
}

fn cv_cmd(g: &Global, a: &CvArgs) -> Step<()> {
    let mut run: CvRun = usage(load_settings(g.config.as_deref()))?;
    usage(a.data.apply(&mut run.data))?;
    set(&mut run.model, a.model);
    if a.with_svm {
        run.with_svm = true;
    }
    if let Some(h) = &a.net.hidden {
        run.hidden_sizes = Some(h.clone());
    }
    set(&mut run.layers, a.net.layers.clone());
    set(&mut run.neurons, a.net.neurons.clone());
    a.cv.apply(&mut run.cv);
    a.train.apply(&mut run.train);
    a.svm.apply(&mut run.svm);
    let seed = usage(resolve_seed(g.seed, run.seed))?;
    run.seed = Some(seed);
    usage(run.train.validate())?;
    usage(run.svm.validate())?;
    if let Some(h) = &run.hidden_sizes {
        usage(check_hidden(h))?;
    } else if run.layers.contains(&0) || run.neurons.contains(&0) {
        return Err(Failure::Usage(Error::InvalidArgument(
            "layers and neurons must be positive".into(),
        )));
    }
    let cv = run.cv.to_config(seed, g.jobs);
    if cv.n_folds < 2 || cv.n_permutations == 0 {
        return Err(Failure::Usage(Error::InvalidArgument(
            "need --folds >= 2 and --permutations >= 1".into(),
        )));
    }

    let mut sink = runtime(Sink::new(&g.out, g.gnuplot))?;
    let data = runtime(load_selected(&a.data, &run.data, seed, &mut sink))?;
    let f = runtime(data.features())?;
    let svm_cell = |f| -> Result<SweepCell> {
        Ok(SweepCell {
            layers: 0,
            neurons: 0,
            hidden_sizes: vec![],
            report: permuted_cv_spec(f, &cv, &ModelSpec::LinearSvm(run.svm.clone()))?,
        })
    };
    let sweep = match (run.model, &run.hidden_sizes) {
        (ModelKind::LinearSvm, _) => SweepReport {
            cells: vec![runtime(svm_cell(&f))?],
        },
        (ModelKind::Dnn, Some(h)) => {
            let mut cells = vec![SweepCell {
                layers: h.len(),
                neurons: h[0],
                hidden_sizes: h.clone(),
                report: runtime(permuted_cv_spec(
                    &f,
                    &cv,
                    &ModelSpec::dnn(h.clone(), run.train.clone()),
                ))?,
            }];
            if run.with_svm {
                cells.push(runtime(svm_cell(&f))?);
            }
            SweepReport { cells }
        }
        (ModelKind::Dnn, None) => runtime(structure_sweep(
            &f,
            &run.layers,
            &run.neurons,
            &run.train,
            run.with_svm.then_some(&run.svm),
            &cv,
        ))?,
    };
    for c in &sweep.cells {
        for p in c.report.failures() {
            log::warn!(
                "cell {:?}: permutation {} failed: {}",
                c.hidden_sizes,
                p.permutation,
                p.error.as_deref().unwrap_or("")
            );
        }
    }
    sink.outputs
        .extend(["report.json".to_string(), "summary.csv".to_string()]);
    runtime(sweep.write(&g.out))?;
    if g.gnuplot {
        let p = sink.path("summary.dat");
        runtime(sweep.summary().write_gnuplot(&p))?;
    }
    runtime(sink.finish("cv", seed, &run))
}

fn rank_cmd(g: &Global, a: &RankArgs) -> Step<()> {
    let mut run: RankRun = usage(load_settings(g.config.as_deref()))?;
    usage(a.data.apply(&mut run.data))?;
    set(&mut run.policy, a.policy);
    set(&mut run.patterns, a.patterns);
    set(&mut run.max_rank, a.max_rank);
    set(&mut run.k_pairs, a.k_pairs.clone());
    let seed = usage(resolve_seed(g.seed, run.seed))?;
    run.seed = Some(seed);
    if run.k_pairs.contains(&0) {
        return Err(Failure::Usage(Error::InvalidArgument(
            "k_pairs must be >= 1".into(),
        )));
    }

    let mut sink = runtime(Sink::new(&g.out, g.gnuplot))?;
    let net = runtime(load_network(&a.model_file, &mut sink))?;
    let net_hash = sink
        .inputs
        .last()
        .map(|i| i.sha256.clone())
        .unwrap_or_default();
    let data = runtime(load_selected(&a.data, &run.data, seed, &mut sink))?;
    let f = runtime(data.features())?;
    let ranking = runtime(rank_features(&net))?;
    runtime(sink.table("ranking", &ranking.to_table()))?;

    let deepest = run
        .max_rank
        .min(ranking.class0.len())
        .min(ranking.class1.len());
    let mut t = Table::new(["rank", "loss"]);
    for r in 1..=deepest {
        t.push(vec![r.into(), runtime(pair_loss(&net, &f, r))?.into()]);
    }
    runtime(sink.table("pair_loss", &t))?;

    let mut t = Table::new(["k_pairs", "accuracy", "cross_entropy"]);
    let ks = run
        .k_pairs
        .iter()
        .map(|&k| KPairs::Top(k))
        .chain([KPairs::All]);
    for k in ks {
        let (acc, ce) = runtime(truncated_metrics(&net, &f, k))?;
        t.push(vec![k.to_string().into(), acc.into(), ce.into()]);
    }
    runtime(sink.table("truncation", &t))?;

    let pdir = g.out.join("patterns");
    runtime(fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e)))?;
    for class in 0..2 {
        for feat in ranking.class(class).iter().take(run.patterns) {
            let p = runtime(back_project_ranked(&net, feat, run.policy))?;
            let stem = format!("{}_{:02}", f.class_names[class], feat.rank_within_class);
            runtime(export_pattern(&p, &net_hash, Some(feat), &pdir, &stem))?;
            sink.outputs.push(format!("patterns/{stem}.csv"));
            sink.outputs.push(format!("patterns/{stem}.json"));
        }
    }
    runtime(sink.finish("rank", seed, &run))
}

fn mcdrop_cmd(g: &Global, a: &McdropArgs) -> Step<()> {
    let mut run: McdropRun = usage(load_settings(g.config.as_deref()))?;
    usage(a.data.apply(&mut run.data))?;
    set(&mut run.passes, a.passes);
    set(&mut run.rates, a.rates.clone());
    set(&mut run.policy, a.policy);
    if a.subset_size.is_some() {
        run.subset_size = a.subset_size;
    }
    set(&mut run.mix_stage, a.mix_stage);
    let seed = usage(resolve_seed(g.seed, run.seed))?;
    run.seed = Some(seed);
    if run.passes == 0 {
        return Err(Failure::Usage(Error::InvalidArgument(
            "--T must be >= 1".into(),
        )));
    }

    let mut sink = runtime(Sink::new(&g.out, g.gnuplot))?;
    let net = runtime(load_network(&a.model_file, &mut sink))?;
    let data = runtime(load_selected(&a.data, &run.data, seed, &mut sink))?;
    let f = runtime(data.features())?;
    let sweep = runtime(dropout_rate_sweep(
        &net,
        f.inputs.view(),
        &f.labels,
        &run.rates,
        run.passes,
        seed,
    ))?;
    runtime(sink.table("rate_sweep", &sweep.to_table()))?;

    let counts = data.class_counts();
    let n = run
        .subset_size
        .unwrap_or_else(|| 100.min(counts[0]).min(counts[1]));
    let suite = runtime(build_subset_suite(&data, n, seed, run.mix_stage))?;
    let unc = runtime(uncertainty_sweep(
        &net,
        &suite,
        run.passes,
        &run.policy,
        seed,
    ))?;
    runtime(sink.table("uncertainty", &unc.to_table()))?;
    let doc = serde_json::json!({
        "rate_sweep": sweep,
        "uncertainty": unc,
        "subsets": suite.subsets,
    });
    runtime(sink.json("mcdrop.json", &doc))?;
    runtime(sink.finish("mcdrop", seed, &run))
}

fn repeat_cmd(g: &Global, a: &RepeatArgs) -> Step<()> {
    let mut run: RepeatRun = usage(load_settings(g.config.as_deref()))?;
    usage(a.data.apply(&mut run.data))?;
    usage(single_hidden(&a.net, &mut run.hidden_sizes))?;
    a.cv.apply(&mut run.cv);
    a.train.apply(&mut run.train);
    set(&mut run.policy, a.policy);
    let seed = usage(resolve_seed(g.seed, run.seed))?;
    run.seed = Some(seed);
    usage(check_hidden(&run.hidden_sizes))?;
    usage(run.train.validate())?;
    let cv = run.cv.to_config(seed, g.jobs);

    let mut sink = runtime(Sink::new(&g.out, g.gnuplot))?;
    let data = runtime(load_selected(&a.data, &run.data, seed, &mut sink))?;
    let f = runtime(data.features())?;
    let rep = runtime(repeatability_study(
        &f,
        &run.hidden_sizes,
        &run.train,
        run.policy,
        &cv,
    ))?;
    let mut t = Table::new([
        "class",
        "n_patterns",
        "n_pairs",
        "n_undefined",
        "min",
        "q1",
        "median",
        "q3",
        "max",
    ]);
    for (name, s) in [
        (&f.class_names[0], &rep.class0),
        (&f.class_names[1], &rep.class1),
    ] {
        t.push(vec![
            Cell::Text(name.clone()),
            s.n_patterns.into(),
            s.n_pairs.into(),
            s.n_undefined.into(),
            s.min.into(),
            s.q1.into(),
            s.median.into(),
            s.q3.into(),
            s.max.into(),
        ]);
    }
    runtime(sink.table("correlation_summary", &t))?;
    runtime(sink.json("repeatability.json", &rep))?;
    runtime(sink.finish("repeat", seed, &run))
}
