//! Batch front end: configuration, delimited-file ingestion, candidate
//! selection runs and Monte Carlo experiments with tabular reports.

pub mod config;
pub mod ingest;
mod report;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

pub use config::{CandidateRule, ColumnRef, RunConfig, TEMPLATE};
pub use ingest::{ingest, write_frame, Assignment, ColumnSchema, Regressors};
pub use report::{read_report_values, SelectReport};

use crate::criteria::CriterionKind;
use crate::error::{Error, Result};
use crate::model::{ContrastSpec, ModelTriple, OutcomeConditionalFamily, OutcomeKind, PropensityModel, TargetPopulation, TreatmentFrame};
use crate::model::ConditionalKind;
use crate::parallel::Execution;
use crate::select::{all_subsets, argmin_per_criterion, evaluate_candidates, fit_nuisance, EstimatorMode, SelectionSettings};
use crate::sim::{mc_bias, selection_experiment, ExperimentSpec};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INGEST: i32 = 3;
pub const EXIT_FIT: i32 = 4;

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Ingest { .. } | Error::Data { .. } | Error::Io(_) | Error::Csv(_) => EXIT_INGEST,
        Error::NonConvergence { .. } | Error::RankDeficient { .. } | Error::Experiment(_) => EXIT_FIT,
    }
}

#[derive(Debug, Parser)]
#[command(name = "msmic", version, about = "Information criteria for marginal structural models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a commented configuration template.
    Init {
        #[arg(default_value = "msmic.toml")]
        path: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Read the data input and echo row and arm counts.
    IngestCheck(RunArgs),
    /// Evaluate the criteria for every candidate structure.
    Select(RunArgs),
    /// Repeat candidate selection on frames drawn from the DGP.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Also write one generated frame to this file.
        #[arg(long)]
        emit_data: Option<PathBuf>,
    },
    /// Compare the analytic penalty with the Monte Carlo optimism bias.
    BiasMatch(RunArgs),
}

/// Flags overriding config fields.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(short, long, default_value = "msmic.toml")]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, value_parser = parse_estimator)]
    pub estimator: Option<EstimatorMode>,
    /// Comma-separated criterion names.
    #[arg(long, value_delimiter = ',')]
    pub criteria: Option<Vec<CriterionKind>>,
    /// Comma-separated target multipliers.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub target: Option<Vec<f64>>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub sequential: bool,
}

fn parse_estimator(s: &str) -> std::result::Result<EstimatorMode, String> {
    match s {
        "ipw-known" => Ok(EstimatorMode::IpwKnown),
        "ipw-unknown" => Ok(EstimatorMode::IpwUnknown),
        "dr" => Ok(EstimatorMode::Dr),
        "cb" => Ok(EstimatorMode::Cb),
        _ => Err(format!("unknown estimator {s:?}")),
    }
}

impl RunArgs {
    pub fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        self.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.output_dir {
            cfg.output_dir = o.clone();
        }
        if let Some(e) = self.estimator {
            cfg.estimator = e;
        }
        if let Some(c) = &self.criteria {
            cfg.criteria = Some(c.clone());
        }
        if let Some(t) = &self.target {
            cfg.target = Some(t.clone());
        }
        if let Some(d) = &self.data {
            cfg.input.data = Some(d.clone());
            cfg.input.dgp = None;
        }
        if let Some(n) = self.n {
            cfg.input.n = Some(n);
        }
        if let Some(m) = self.replications {
            cfg.simulation.replications = m;
        }
        if self.sequential {
            cfg.execution = Execution::Sequential;
        }
    }
}

/// Runs one command and returns the process exit status.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Init { path, force } => init(&path, force).map(|()| 0),
        Command::IngestCheck(args) => args.load().and_then(|c| ingest_check(&c)).map(|()| 0),
        Command::Select(args) => args.load().and_then(|c| run_select(&c)).map(|r| {
            println!("{}", r.table());
            println!("seed: {}", r.seed);
            if r.any_failed() {
                EXIT_FIT
            } else {
                0
            }
        }),
        Command::Simulate { run, emit_data } => run.load().and_then(|c| simulate(&c, emit_data.as_deref())).map(|()| 0),
        Command::BiasMatch(args) => args.load().and_then(|c| bias_match(&c)).map(|()| 0),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        exit_code(&e)
    })
}

pub fn init(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::config(format!("{} exists; pass --force to overwrite", path.display())));
    }
    std::fs::write(path, TEMPLATE)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// The frame named by the input section: ingested, or generated with the seed.
pub fn load_frame(cfg: &RunConfig) -> Result<TreatmentFrame> {
    match (&cfg.input.data, &cfg.input.dgp) {
        (Some(path), _) => {
            let schema = cfg.schema.as_ref().ok_or_else(|| Error::config("missing [schema]"))?;
            let delim = u8::try_from(cfg.input.delimiter).map_err(|_| Error::config("delimiter must be one byte"))?;
            ingest(path, schema, delim)
        }
        (None, Some(dgp)) => dgp.generate(cfg.input.n.unwrap_or(0), cfg.seed),
        (None, None) => Err(Error::config("no input")),
    }
}

fn regressor_names(cfg: &RunConfig, dim_x: usize) -> Vec<String> {
    match &cfg.schema {
        Some(s) if cfg.input.data.is_some() => s.regressor_names(),
        _ => (1..=dim_x).map(|j| format!("x{j}")).collect(),
    }
}

pub fn ingest_check(cfg: &RunConfig) -> Result<()> {
    let frame = load_frame(cfg)?;
    println!("rows: {}", frame.len());
    for (h, c) in frame.arm_counts().iter().enumerate() {
        println!("arm {}: {c}", h + 1);
    }
    println!("regressors: {}", regressor_names(cfg, frame.dim_x()).join(", "));
    println!("confounders: {}", frame.dim_z());
    println!("seed: {}", cfg.seed);
    Ok(())
}

/// Candidate column sets, resolved against the regressor names.
pub fn resolve_candidates(rule: &CandidateRule, names: &[String]) -> Result<Vec<Vec<usize>>> {
    let dim_x = names.len();
    match rule {
        CandidateRule::Full => Ok(vec![(0..dim_x).collect()]),
        CandidateRule::AllSubsets { max_size } => all_subsets(dim_x, *max_size),
        CandidateRule::Explicit { sets } => {
            if sets.is_empty() {
                return Err(Error::config("explicit candidate list is empty"));
            }
            sets.iter()
                .map(|set| {
                    if set.is_empty() {
                        return Err(Error::config("empty candidate set"));
                    }
                    set.iter()
                        .map(|c| match c {
                            ColumnRef::Index(i) if *i < dim_x => Ok(*i),
                            ColumnRef::Index(i) => Err(Error::config(format!("regressor index {i} out of range"))),
                            ColumnRef::Name(n) => names
                                .iter()
                                .position(|m| m == n)
                                .ok_or_else(|| Error::config(format!("unknown regressor {n:?}"))),
                        })
                        .collect()
                })
                .collect()
        }
    }
}

fn target(cfg: &RunConfig, arms: usize) -> Result<TargetPopulation> {
    match &cfg.target {
        None => Ok(TargetPopulation::all(arms)),
        Some(d) if d.len() != arms => Err(Error::config(format!("target has {} entries for {arms} arms", d.len()))),
        Some(d) => TargetPopulation::new(d.clone()),
    }
}

/// Models and settings for a selection run on a frame with `arms` arms and
/// `dim_z` confounders.
pub fn selection_settings(cfg: &RunConfig, arms: usize, dim_z: usize) -> Result<SelectionSettings> {
    let criteria = cfg.criteria();
    let family = cfg.family();
    let mut propensity = match &cfg.propensity.mask {
        Some(m) => PropensityModel::new(arms, dim_z, m.clone())?,
        None => PropensityModel::full(arms, dim_z),
    };
    if cfg.propensity.floor > 0.0 {
        propensity = propensity.with_floor(cfg.propensity.floor)?;
    }
    let conditional = if criteria.contains(&CriterionKind::Dric) {
        let kind = cfg.conditional.kind.unwrap_or(match family.kind {
            OutcomeKind::GaussianLinear => ConditionalKind::GaussianLinear,
            OutcomeKind::BernoulliLogit => ConditionalKind::BernoulliLogit,
        });
        let mask = cfg.conditional.mask.clone().unwrap_or_else(|| (0..dim_z).collect());
        let mut c = OutcomeConditionalFamily::new(kind, arms, dim_z, mask)?;
        if let Some(nodes) = cfg.conditional.quadrature_nodes {
            c = c.with_quadrature(nodes)?;
        }
        c
    } else {
        OutcomeConditionalFamily::null(arms, dim_z)
    };
    let models = ModelTriple::new(family, propensity, conditional)?;
    let mut settings = SelectionSettings::new(models, target(cfg, arms)?);
    settings.known_alpha = match (&cfg.known_alpha, &cfg.input.dgp) {
        (Some(a), _) => Some(DVector::from_vec(a.clone())),
        (None, Some(d)) if cfg.input.data.is_none() && settings.models.propensity.mask().len() == dim_z => Some(d.true_alpha()),
        _ => None,
    };
    settings.contrast = match &cfg.contrast {
        Some(c) => Some(ContrastSpec::new(c.clone())?),
        None if arms == 2 && criteria.contains(&CriterionKind::CbIc) => Some(ContrastSpec::new(vec![1.0, -1.0])?),
        None => None,
    };
    settings.solver = cfg.solver;
    settings.cb_form = cfg.cb_form;
    settings.dric_fit_weight = cfg.dric_fit_weight;
    settings.check(&criteria)?;
    Ok(settings)
}

/// Evaluates every (candidate, criterion) pair and writes `report.csv` and
/// `report.txt` to the output directory.
pub fn run_select(cfg: &RunConfig) -> Result<SelectReport> {
    if let (Some(arms), Some(t)) = (cfg.declared_arms(), &cfg.target) {
        if t.len() != arms {
            return Err(Error::config(format!("target has {} entries for {arms} arms", t.len())));
        }
    }
    let frame = load_frame(cfg)?;
    let criteria = cfg.criteria();
    let settings = selection_settings(cfg, frame.arms(), frame.dim_z())?;
    let names = regressor_names(cfg, frame.dim_x());
    let candidates = resolve_candidates(&cfg.candidates, &names)?;
    let nuisance = fit_nuisance(&frame, &settings, &criteria)?;
    let results = evaluate_candidates(&frame, &candidates, &criteria, &settings, &nuisance, cfg.execution);
    let best = argmin_per_criterion(&results, &criteria);
    let report = SelectReport {
        seed: cfg.seed,
        names,
        criteria,
        results,
        best,
    };
    std::fs::create_dir_all(&cfg.output_dir)?;
    report.write_csv(&cfg.output_dir.join("report.csv"))?;
    std::fs::write(cfg.output_dir.join("report.txt"), report.table())?;
    Ok(report)
}

/// Experiment description for `simulate` and `bias-match`.
pub fn experiment_spec(cfg: &RunConfig, columns: Option<Vec<usize>>) -> Result<ExperimentSpec> {
    let dgp = cfg
        .input
        .dgp
        .clone()
        .ok_or_else(|| Error::config("Monte Carlo commands need a DGP input"))?;
    let arms = dgp.arms;
    let mut spec = ExperimentSpec::new(dgp, cfg.recipe(), cfg.input.n.unwrap_or(0), cfg.simulation.replications, cfg.seed);
    spec.family = Some(cfg.family());
    spec.conditional = cfg.conditional.kind;
    spec.columns = columns;
    spec.target = Some(target(cfg, arms)?);
    spec.contrast = cfg.contrast.clone().map(ContrastSpec::new).transpose()?;
    spec.pilot_n = cfg.simulation.pilot_n;
    spec.copy_scale = cfg.simulation.copy_scale;
    spec.solver = cfg.solver;
    spec.execution = cfg.execution;
    spec.cb_form = cfg.cb_form;
    spec.dric_fit_weight = cfg.dric_fit_weight;
    Ok(spec)
}

pub fn simulate(cfg: &RunConfig, emit_data: Option<&Path>) -> Result<()> {
    let spec = experiment_spec(cfg, None)?;
    if let Some(path) = emit_data {
        let frame = spec.dgp.generate(spec.n, spec.seed)?;
        write_frame(&frame, path)?;
        println!("wrote {} records to {}", frame.len(), path.display());
    }
    let names = regressor_names(cfg, spec.dgp.dim_x());
    let candidates = resolve_candidates(&cfg.candidates, &names)?;
    let table = selection_experiment(&spec, &candidates, &cfg.criteria())?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let text = report::selection_table(&table, &names);
    report::write_selection_csv(&table, &names, &cfg.output_dir.join("selection.csv"))?;
    println!("{text}");
    println!("seed: {}", cfg.seed);
    Ok(())
}

/// Runs [`mc_bias`] for every candidate.
pub fn bias_match(cfg: &RunConfig) -> Result<()> {
    let names = regressor_names(cfg, cfg.input.dgp.as_ref().map_or(0, |d| d.dim_x()));
    let candidates = resolve_candidates(&cfg.candidates, &names)?;
    let mut reports = Vec::with_capacity(candidates.len());
    for cols in &candidates {
        let r = mc_bias(&experiment_spec(cfg, Some(cols.clone()))?)?;
        println!("candidate {{{}}}: {}", report::column_list(cols, &names), report::bias_summary(&r));
        reports.push(r);
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    report::write_bias_csv(&reports, &candidates, &names, &cfg.output_dir.join("bias_match.csv"))?;
    println!("seed: {}", cfg.seed);
    Ok(())
}
