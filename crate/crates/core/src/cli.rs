//! Command-line interface: `gen`, `fit`, `eval`, `regime` and `check`.
//!
//! Every file written embeds the parsed command line under `config`, so a
//! run can be reproduced from any of its outputs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::acceptance;
use crate::error::{Error, Result};
use crate::eval::{self, GridSpec, PluginClassifier, SweepSpec};
use crate::gaussian::{self, GaussianParams, LabeledDataset};
use crate::io::{self, fmt_f64, ParamsFile};
use crate::linalg::{self, Matrix, Vector};
use crate::projections::{self, AutoMode, Frame, Method, ProjectionResult, RegimeReport, Warning};
use crate::refine::{self, AscentOptions, StopReason};
use crate::synth::{self, ChannelSpec, SpdSpec};

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "kldproj",
    version,
    about = "KL-divergence-preserving linear projections for Gaussian classes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Generate class parameters, channel records and sample datasets.
    Gen(GenArgs),
    /// Fit a projection from parameter files or a labeled dataset.
    Fit(FitArgs),
    /// Sweeps, classification, density grids and scatter output.
    Eval(EvalArgs),
    /// Report the mean/covariance divergence split and method choice.
    Regime(RegimeArgs),
    /// Run the built-in acceptance checks.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenArgs {
    /// Seed for every random draw (required).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ambient dimension.
    #[arg(long)]
    pub d: usize,
    /// Signal dimension; enables the channel construction `x = Hs + z`.
    #[arg(long)]
    pub t: Option<usize>,
    /// Channel noise variance.
    #[arg(long, default_value_t = 1.0)]
    pub noise_var: f64,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Samples per class; writes `dataset.csv`.
    #[arg(long)]
    pub n: Option<usize>,
    /// Held-out samples per class; writes `test.csv`.
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub eig_min: f64,
    #[arg(long, default_value_t = 10.0)]
    pub eig_max: f64,
    /// Scale of the standard-normal class means.
    #[arg(long, default_value_t = 1.0)]
    pub mean_scale: f64,
    /// Rescale the class-2 mean so that D_mu / D_sigma equals this value.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Share one covariance across all classes.
    #[arg(long)]
    pub common_cov: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Auto,
    Alg1,
    Alg2,
    Lda,
    Mclda,
    Lol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Rule,
    Compare,
}

impl From<ModeArg> for AutoMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Rule => AutoMode::Rule,
            ModeArg::Compare => AutoMode::Compare,
        }
    }
}

/// Class inputs shared by `fit`, `eval` and `regime`.
#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Parameter files, one per class, in class order.
    #[arg(long, num_args = 1..)]
    pub params: Vec<PathBuf>,
    /// Labeled dataset CSV; class parameters are estimated from it.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Ridge added to estimated covariances, relative to their mean
    /// eigenvalue.
    #[arg(long, default_value_t = 1e-8)]
    pub ridge: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AscentArgs {
    /// Refine closed-form results by gradient ascent.
    #[arg(long)]
    pub refine: bool,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 50)]
    pub patience: usize,
}

impl AscentArgs {
    fn options(&self) -> Option<AscentOptions> {
        self.refine.then(|| AscentOptions {
            learning_rate: self.lr,
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
            patience: self.patience,
            ..AscentOptions::default()
        })
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub r: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Rule)]
    pub mode: ModeArg,
    #[command(flatten)]
    #[serde(flatten)]
    pub ascent: AscentArgs,
    #[arg(long, default_value = "projection.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// Projection file written by `fit`.
    #[arg(long)]
    pub projection: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    /// Held-out dataset for classification; defaults to `--data`.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Values of r to sweep: `a..b` (inclusive) or a comma list.
    #[arg(long)]
    pub sweep_r: Option<String>,
    /// Methods for sweeps and classification.
    #[arg(long, value_delimiter = ',', default_values_t = vec!["alg1".to_string(), "alg2".to_string(), "lol".to_string()])]
    pub methods: Vec<String>,
    /// Dimension for classification without a projection file.
    #[arg(long)]
    pub r: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub ascent: AscentArgs,
    /// Plug-in classifier accuracy per method.
    #[arg(long)]
    pub classify: bool,
    /// Analytic density grid of the projected classes (needs r = 2).
    #[arg(long)]
    pub density_grid: bool,
    #[arg(long, default_value_t = 200)]
    pub grid_resolution: usize,
    /// Projected samples of `--data`.
    #[arg(long)]
    pub scatter: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RegimeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub r: usize,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CheckArgs {
    /// Run only these criteria (1-11).
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<usize>,
}

/// What a successful command produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// Whether every check passed (always true outside `check`).
    pub success: bool,
}

pub fn config_value(cmd: &Command) -> Value {
    json!({
        "tool": "kldproj",
        "version": env!("CARGO_PKG_VERSION"),
        "args": serde_json::to_value(cmd).unwrap_or(Value::Null),
    })
}

/// Parses `args` (including the program name) and runs the command,
/// writing human-readable progress to `out`.
pub fn run<I, S>(args: I, out: &mut dyn Write) -> Result<Outcome>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    execute(&cli.command, out)
}

pub fn execute(cmd: &Command, out: &mut dyn Write) -> Result<Outcome> {
    let config = config_value(cmd);
    let outcome = match cmd {
        Command::Gen(a) => cmd_gen(a, &config)?,
        Command::Fit(a) => cmd_fit(a, &config)?,
        Command::Eval(a) => cmd_eval(a, &config)?,
        Command::Regime(a) => cmd_regime(a, &config, out)?,
        Command::Check(a) => cmd_check(a, out)?,
    };
    for f in &outcome.files {
        writeln!(out, "wrote {}", f.display())?;
    }
    Ok(outcome)
}

fn cmd_gen(a: &GenArgs, config: &Value) -> Result<Outcome> {
    let seed = a
        .seed
        .ok_or_else(|| Error::InvalidArgument("--seed is required for gen".into()))?;
    if a.classes < 2 {
        return Err(Error::InvalidArgument(
            "--classes must be at least 2".into(),
        ));
    }
    if a.d == 0 {
        return Err(Error::InvalidArgument("--d must be positive".into()));
    }
    let seeds = synth::derive_seeds(seed, 4);
    let mut files = Vec::new();

    let params: Vec<GaussianParams> = if let Some(t) = a.t {
        if a.classes != 2 {
            return Err(Error::InvalidArgument(
                "the channel construction has exactly 2 classes".into(),
            ));
        }
        let chan = ChannelSpec {
            d: a.d,
            t,
            noise_var: a.noise_var,
            seed: seeds[0],
        };
        let inst = synth::channel_instance(&chan, (a.eig_min, a.eig_max), a.mean_scale, a.ratio)?;
        let record = json!({
            "d": a.d,
            "t": t,
            "noise_var": a.noise_var,
            "seed": chan.seed,
            "h": io::matrix_to_rows(&inst.h),
            "signal": [
                ParamsFile::new(1, &inst.signal1, Value::Null),
                ParamsFile::new(2, &inst.signal2, Value::Null),
            ],
            "config": config,
        });
        let path = a.out.join("channel.json");
        io::write_json(&path, &record)?;
        files.push(path);
        vec![inst.x1, inst.x2]
    } else {
        let cov_seeds = synth::derive_seeds(seeds[1], a.classes);
        let mean_seeds = synth::derive_seeds(seeds[2], a.classes);
        let spec = |s| SpdSpec {
            dim: a.d,
            eig_min: a.eig_min,
            eig_max: a.eig_max,
            seed: s,
        };
        let common = if a.common_cov {
            Some(synth::random_spd(&spec(cov_seeds[0]))?)
        } else {
            None
        };
        let mut params = (0..a.classes)
            .map(|k| {
                let cov = match &common {
                    Some(c) => c.clone(),
                    None => synth::random_spd(&spec(cov_seeds[k]))?,
                };
                GaussianParams::new(synth::random_mean(a.d, a.mean_scale, mean_seeds[k]), cov)
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(ratio) = a.ratio {
            if a.classes != 2 {
                return Err(Error::InvalidArgument(
                    "--ratio needs exactly 2 classes".into(),
                ));
            }
            params[1] = synth::scale_to_ratio(&params[0], &params[1], ratio)?;
        }
        params
    };

    for (k, p) in params.iter().enumerate() {
        let path = a.out.join(format!("class{}.json", k + 1));
        io::write_json(&path, &ParamsFile::new(k + 1, p, config.clone()))?;
        files.push(path);
    }

    let sample_seeds = synth::derive_seeds(seeds[3], 2 * a.classes);
    for (n, name, offset) in [(a.n, "dataset.csv", 0), (a.n_test, "test.csv", a.classes)] {
        let Some(n) = n else { continue };
        let blocks = params
            .iter()
            .enumerate()
            .map(|(k, p)| synth::sample(p, n, sample_seeds[offset + k]))
            .collect::<Result<Vec<_>>>()?;
        let data = LabeledDataset::from_classes(&blocks)?;
        let path = a.out.join(name);
        io::write_atomic(&path, io::dataset_csv(&data, config)?.as_bytes())?;
        files.push(path);
    }
    Ok(Outcome {
        files,
        success: true,
    })
}

/// Class parameters plus what is needed for LoL and multiclass LDA.
struct Classes {
    params: Vec<GaussianParams>,
    /// Pooled within-class covariance (sample-based when a dataset is given).
    pooled: Matrix,
    data: Option<LabeledDataset>,
}

fn load_classes(input: &InputArgs) -> Result<Classes> {
    match (&input.data, input.params.is_empty()) {
        (Some(_), false) => Err(Error::InvalidArgument(
            "give either --params or --data, not both".into(),
        )),
        (None, true) => Err(Error::InvalidArgument(
            "one of --params or --data is required".into(),
        )),
        (Some(path), true) => {
            let data = io::read_dataset(path)?;
            let params = data
                .classes()
                .into_iter()
                .map(|c| gaussian::estimate_params(&data, c, input.ridge))
                .collect::<Result<Vec<_>>>()?;
            let pooled = gaussian::pooled_covariance(&data)?;
            Ok(Classes {
                params,
                pooled,
                data: Some(data),
            })
        }
        (None, false) => {
            let params = input
                .params
                .iter()
                .map(|p| io::read_params(p))
                .collect::<Result<Vec<_>>>()?;
            let d = params[0].dim();
            if params.iter().any(|p| p.dim() != d) {
                return Err(Error::DimensionMismatch(
                    "parameter files differ in dimension".into(),
                ));
            }
            let pooled = params
                .iter()
                .fold(Matrix::zeros(d, d), |acc, p| acc + p.covariance())
                / params.len() as f64;
            Ok(Classes {
                params,
                pooled,
                data: None,
            })
        }
    }
}

fn two_classes(c: &Classes) -> Result<(&GaussianParams, &GaussianParams)> {
    match c.params.as_slice() {
        [p1, p2] => Ok((p1, p2)),
        other => Err(Error::InvalidArgument(format!(
            "this method needs exactly 2 classes, got {}",
            other.len()
        ))),
    }
}

fn fit_method(method: MethodArg, mode: ModeArg, c: &Classes, r: usize) -> Result<ProjectionResult> {
    if method == MethodArg::Mclda || (method == MethodArg::Auto && c.params.len() > 2) {
        let common = c.data.as_ref().map(|_| &c.pooled);
        let res = projections::multiclass_lda(&c.params, common)?;
        if res.rank() != r {
            return Err(Error::InvalidArgument(format!(
                "multiclass LDA yields {} directions, --r is {r}",
                res.rank()
            )));
        }
        return Ok(res);
    }
    let (p1, p2) = two_classes(c)?;
    match method {
        MethodArg::Auto => projections::fit_auto(p1, p2, r, mode.into()),
        MethodArg::Alg1 => projections::algorithm1(p1, p2, r),
        MethodArg::Alg2 => projections::algorithm2(p1, p2, r),
        MethodArg::Lol => projections::lol_projection(p1, p2, r, &c.pooled),
        MethodArg::Lda => {
            if r != 1 {
                return Err(Error::InvalidArgument(
                    "lda yields a single direction; use --r 1".into(),
                ));
            }
            projections::lda_direction(p1, p2)
        }
        MethodArg::Mclda => unreachable!("handled above"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedReport {
    pub initial_kld: f64,
    pub final_kld: f64,
    pub iterations_run: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
    /// Orthonormalized final iterate, original frame.
    pub matrix: Vec<Vec<f64>>,
}

/// Projection file written by `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionFile {
    pub method: Method,
    pub requested_method: MethodArg,
    pub frame: Frame,
    pub r: usize,
    pub d: usize,
    /// Row-major, in `frame`.
    pub matrix: Vec<Vec<f64>>,
    /// Rows acting on original coordinates after subtracting `center`.
    pub original_rows: Vec<Vec<f64>>,
    pub center: Option<Vec<f64>>,
    pub achieved_kld: f64,
    /// Divergence of the pair of classes (two-class fits) or the sum over
    /// class pairs (multiclass fits).
    pub full_kld: f64,
    pub component_scores: Option<Vec<f64>>,
    pub warnings: Vec<Warning>,
    pub regime: Option<RegimeReport>,
    pub refined: Option<RefinedReport>,
    /// Projected over full divergence for every ordered class pair.
    pub pairwise_ratios: Option<Vec<Vec<f64>>>,
    pub config: Value,
}

impl ProjectionFile {
    pub fn original_rows(&self) -> Result<Matrix> {
        io::rows_to_matrix(&self.original_rows)
    }

    pub fn center(&self) -> Option<Vector> {
        self.center.clone().map(Vector::from_vec)
    }
}

fn full_divergence(params: &[GaussianParams]) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..params.len() {
        for j in (i + 1)..params.len() {
            total += gaussian::kld(&params[i], &params[j])?;
        }
    }
    Ok(total)
}

fn cmd_fit(a: &FitArgs, config: &Value) -> Result<Outcome> {
    let classes = load_classes(&a.input)?;
    let res = fit_method(a.method, a.mode, &classes, a.r)?;
    let multiclass = res.method == Method::MulticlassLda;

    let regime = if classes.params.len() == 2 {
        let (p1, p2) = two_classes(&classes)?;
        Some(projections::select_regime(p1, p2, a.r)?)
    } else {
        None
    };
    let refined = match a.ascent.options() {
        Some(opts) if !multiclass => {
            let (p1, p2) = two_classes(&classes)?;
            let trace = refine::gradient_ascent(&res.original_rows, p1, p2, &opts)?;
            Some(RefinedReport {
                initial_kld: trace.initial_kld(),
                final_kld: trace.final_kld,
                iterations_run: trace.iterations_run,
                converged: trace.converged,
                stop_reason: trace.stop_reason,
                matrix: io::matrix_to_rows(&linalg::orthonormalize_rows(&trace.final_matrix)?),
            })
        }
        Some(_) => {
            return Err(Error::InvalidArgument(
                "--refine applies to two-class fits only".into(),
            ));
        }
        None => None,
    };
    let pairwise_ratios = if multiclass {
        Some(io::matrix_to_rows(&eval::pairwise_preservation(
            &classes.params,
            &res.original_rows,
        )?))
    } else {
        None
    };

    let file = ProjectionFile {
        method: res.method,
        requested_method: a.method,
        frame: res.frame,
        r: res.rank(),
        d: res.dim(),
        matrix: io::matrix_to_rows(&res.matrix),
        original_rows: io::matrix_to_rows(&res.original_rows),
        center: res.center.as_ref().map(|c| c.iter().copied().collect()),
        achieved_kld: res.achieved_kld,
        full_kld: full_divergence(&classes.params)?,
        component_scores: res.component_scores.clone(),
        warnings: res.warnings.clone(),
        regime,
        refined,
        pairwise_ratios,
        config: config.clone(),
    };
    io::write_json(&a.out, &file)?;
    Ok(Outcome {
        files: vec![a.out.clone()],
        success: true,
    })
}

/// Parses `a..b` (inclusive) or `a,b,c`.
pub fn parse_r_values(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidArgument(format!("cannot parse r values '{s}'"));
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        if lo > hi {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| bad()))
        .collect()
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    names.iter().map(|n| n.parse()).collect()
}

#[derive(Debug, Clone, Serialize)]
struct Accuracy {
    method: String,
    r: usize,
    accuracy: f64,
}

fn cmd_eval(a: &EvalArgs, config: &Value) -> Result<Outcome> {
    let classes = load_classes(&a.input)?;
    let projection: Option<ProjectionFile> =
        a.projection.as_deref().map(io::read_json).transpose()?;
    if let Some(p) = &projection {
        if p.d != classes.params[0].dim() {
            return Err(Error::DimensionMismatch(format!(
                "projection acts on dimension {}, classes have dimension {}",
                p.d,
                classes.params[0].dim()
            )));
        }
    }
    let methods = parse_methods(&a.methods)?;
    let mut files = Vec::new();
    let mut report = serde_json::Map::new();
    report.insert("full_kld".into(), json!(full_divergence(&classes.params)?));

    if let Some(spec) = &a.sweep_r {
        let (p1, p2) = two_classes(&classes)?;
        let mut metadata = BTreeMap::new();
        metadata.insert("config".into(), io::to_json_compact(config)?);
        let table = eval::sweep_r(
            p1,
            p2,
            &SweepSpec {
                methods: methods.clone(),
                r_values: parse_r_values(spec)?,
                refine: a.ascent.options(),
                pooled_cov: Some(classes.pooled.clone()),
                metadata,
            },
        )?;
        let rows: Vec<Vec<String>> = table
            .rows
            .iter()
            .map(|row| vec![row.method.clone(), row.r.to_string(), fmt_f64(row.kld)])
            .collect();
        let path = a.out_dir.join("sweep.csv");
        io::write_atomic(
            &path,
            io::table_csv(config, &["method", "r", "kld"], &rows)?.as_bytes(),
        )?;
        files.push(path);
        report.insert(
            "sweep_invariants".into(),
            json!(table
                .check_invariants(p1.dim())
                .err()
                .unwrap_or_else(|| "ok".into())),
        );
    }

    if a.classify {
        let train = classes
            .data
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("--classify needs --data".into()))?;
        let test = match &a.test {
            Some(p) => io::read_dataset(p)?,
            None => train.clone(),
        };
        let r = a
            .r
            .or(projection.as_ref().map(|p| p.r))
            .ok_or_else(|| Error::InvalidArgument("--classify needs --r or --projection".into()))?;
        let mut acc = Vec::new();
        if let Some(p) = &projection {
            let clf = PluginClassifier::train(train, &p.original_rows()?, p.center().as_ref())?;
            acc.push(Accuracy {
                method: format!("projection_{}", p.method),
                r: p.r,
                accuracy: clf.accuracy(&test)?,
            });
        }
        for &m in &methods {
            let arg = match m {
                Method::Alg1 => MethodArg::Alg1,
                Method::Alg2 => MethodArg::Alg2,
                Method::Lol => MethodArg::Lol,
                Method::Lda => MethodArg::Lda,
                Method::MulticlassLda => MethodArg::Mclda,
                Method::Refined => {
                    return Err(Error::InvalidArgument(
                        "'refined' is not a classification method".into(),
                    ));
                }
            };
            let res = fit_method(arg, ModeArg::Rule, &classes, r)?;
            let clf = PluginClassifier::train(train, &res.original_rows, res.center.as_ref())?;
            acc.push(Accuracy {
                method: m.tag().into(),
                r,
                accuracy: clf.accuracy(&test)?,
            });
        }
        report.insert(
            "classification".into(),
            serde_json::to_value(&acc).map_err(|e| Error::Parse(e.to_string()))?,
        );
    }

    if a.density_grid {
        let p = projection
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("--density-grid needs --projection".into()))?;
        let (p1, p2) = two_classes(&classes)?;
        let spec = GridSpec {
            resolution: a.grid_resolution,
            ..GridSpec::default()
        };
        let grid = eval::density_grid(&p.original_rows()?, p.center().as_ref(), p1, p2, &spec)?;
        let mut rows = Vec::with_capacity(2 * spec.resolution * spec.resolution);
        for (class, values) in [(1, &grid.values_class1), (2, &grid.values_class2)] {
            for (i, x) in grid.x_axis.iter().enumerate() {
                for (j, y) in grid.y_axis.iter().enumerate() {
                    rows.push(vec![
                        fmt_f64(*x),
                        fmt_f64(*y),
                        class.to_string(),
                        fmt_f64(values[(i, j)]),
                    ]);
                }
            }
        }
        let path = a.out_dir.join("density.csv");
        io::write_atomic(
            &path,
            io::table_csv(config, &["x", "y", "class", "density"], &rows)?.as_bytes(),
        )?;
        files.push(path);
        report.insert(
            "density".into(),
            json!({
                "peaks": grid.peaks,
                "contour_levels": grid.contour_levels,
                "contour_level_fraction": grid.contour_level_fraction,
            }),
        );
    }

    if a.scatter {
        let p = projection
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("--scatter needs --projection".into()))?;
        let data = classes
            .data
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("--scatter needs --data".into()))?;
        let projected = data.project(&p.original_rows()?, p.center().as_ref())?;
        let rows: Vec<Vec<String>> = projected
            .samples()
            .row_iter()
            .zip(projected.labels())
            .map(|(z, label)| {
                let y = if z.len() > 1 { z[1] } else { 0.0 };
                vec![fmt_f64(z[0]), fmt_f64(y), label.to_string()]
            })
            .collect();
        let path = a.out_dir.join("scatter.csv");
        io::write_atomic(
            &path,
            io::table_csv(config, &["x", "y", "class"], &rows)?.as_bytes(),
        )?;
        files.push(path);
    }

    report.insert("config".into(), config.clone());
    let path = a.out_dir.join("report.json");
    io::write_json(&path, &Value::Object(report))?;
    files.push(path);
    Ok(Outcome {
        files,
        success: true,
    })
}

fn cmd_regime(a: &RegimeArgs, config: &Value, out: &mut dyn Write) -> Result<Outcome> {
    let classes = load_classes(&a.input)?;
    let (p1, p2) = two_classes(&classes)?;
    let report = projections::select_regime(p1, p2, a.r)?;
    let mut value = serde_json::to_value(&report).map_err(|e| Error::Parse(e.to_string()))?;
    value["config"] = config.clone();
    let text = io::to_json(&value)?;
    out.write_all(text.as_bytes())?;
    let mut files = Vec::new();
    if let Some(path) = &a.out {
        io::write_atomic(path, text.as_bytes())?;
        files.push(path.clone());
    }
    Ok(Outcome {
        files,
        success: true,
    })
}

fn cmd_check(a: &CheckArgs, out: &mut dyn Write) -> Result<Outcome> {
    let mut success = true;
    for id in 1..=acceptance::CRITERIA {
        if !a.only.is_empty() && !a.only.contains(&id) {
            continue;
        }
        let report = acceptance::run(id);
        success &= report.passed;
        writeln!(out, "{report}")?;
    }
    Ok(Outcome {
        files: Vec::new(),
        success,
    })
}

/// Structured error record printed by the binary.
pub fn error_json(e: &Error) -> String {
    json!({"error": {"code": e.code(), "message": e.to_string()}}).to_string()
}

/// Runs the command line and maps the outcome to a process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(&cli.command, &mut lock) {
        Ok(o) if o.success => 0,
        Ok(_) => 3,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            e.exit_code()
        }
    }
}
