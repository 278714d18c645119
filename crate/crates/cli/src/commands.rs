use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use duocascade::calibration::{auto_select, find_lambda_star, CascadeConfig};
use duocascade::cascade::{CascadeEngine, ReplayClassifier, Sample};
use duocascade::complementarity::{complementarity_matrix, pick_best_pair};
use duocascade::metering::{aggregate, compare, duplication_experiment, EngineSetup, RunReport, Transform};
use duocascade::phash::{dhash, moments_fingerprint, MemoryMethod};
use duocascade::records::{
    align_records, load_image_pnm, parse_prediction_records, CostProfile, ImageBuffer, PredictionRecord,
};
use duocascade::ScoreFunctionKind;

use crate::{
    CalibrateArgs, ComplementarityArgs, DataArgs, DuplicationArgs, HashArgs, HashMethod, ReportArgs,
    ReportFormat, RunArgs, ScoreChoice,
};

/// Failure of a subcommand. Usage errors exit with 2, everything else with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => f.write_str(msg),
            CliError::Data(e) if f.alternate() => write!(f, "{e:#}"),
            CliError::Data(e) => write!(f, "{e}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Data(e)
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn load_records(path: &Path) -> anyhow::Result<Vec<PredictionRecord>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    parse_prediction_records(BufReader::new(file)).with_context(|| format!("in {}", path.display()))
}

fn load_config(path: &Path) -> anyhow::Result<CascadeConfig> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    CascadeConfig::from_reader(BufReader::new(file)).with_context(|| format!("in {}", path.display()))
}

fn load_costs(path: &Path) -> anyhow::Result<CostProfile> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    CostProfile::from_reader(BufReader::new(file)).with_context(|| format!("in {}", path.display()))
}

fn load_image(path: &Path) -> anyhow::Result<ImageBuffer> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    load_image_pnm(&bytes).with_context(|| format!("in {}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

pub fn complementarity(args: ComplementarityArgs) -> Result<()> {
    let models = args
        .records
        .iter()
        .map(|p| Ok((stem(p), load_records(p)?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let matrix = complementarity_matrix(&models).map_err(anyhow::Error::from)?;
    write_file(&args.out, &matrix.to_csv())?;
    let (i, j) = pick_best_pair(&matrix).map_err(anyhow::Error::from)?;
    print!("{}", matrix.display_scaled());
    println!(
        "best pair: {},{} score={:.4}",
        matrix.names[i],
        matrix.names[j],
        matrix.get(i, j) * 10.0
    );
    Ok(())
}

pub fn calibrate(args: CalibrateArgs) -> Result<()> {
    if args.no_post_check && args.score == ScoreChoice::Auto {
        return Err(usage("--no-post-check cannot be combined with --score auto"));
    }
    let a = load_records(&args.records_a)?;
    let b = load_records(&args.records_b)?;
    let (name_a, name_b) = (stem(&args.records_a), stem(&args.records_b));
    if name_a == name_b {
        return Err(usage(format!(
            "both record files are named {name_a}; model names come from file stems and must differ"
        )));
    }
    let paired = align_records(&a, &b)
        .with_context(|| format!("cannot align {name_a} with {name_b}"))?
        .with_names(name_a, name_b);
    let kind = match args.score {
        ScoreChoice::Max => Some(ScoreFunctionKind::MaxProbability),
        ScoreChoice::Diff => Some(ScoreFunctionKind::Difference),
        ScoreChoice::Entropy => Some(ScoreFunctionKind::EntropyNormalized),
        ScoreChoice::Auto => None,
    };
    let result = match kind {
        Some(kind) => find_lambda_star(&paired, kind, !args.no_post_check),
        None => auto_select(&paired),
    }
    .map_err(anyhow::Error::from)?;

    write_file(&args.out, &(result.config.to_json_pretty() + "\n"))?;
    if let Some(curve) = &args.curve {
        write_file(curve, &result.curve_csv())?;
    }
    let c = &result.config;
    println!(
        "first={} second={} score={} lambda={} accuracy={:.4} usage={:.4}",
        c.first_model,
        c.second_model.as_deref().unwrap_or("-"),
        c.score_fn,
        c.lambda,
        result.accuracy,
        result.second_model_usage
    );
    Ok(())
}

/// Records, costs and samples behind one cascade config.
struct Prepared {
    config: CascadeConfig,
    first: Vec<PredictionRecord>,
    second: Option<Vec<PredictionRecord>>,
    costs: CostProfile,
}

impl Prepared {
    fn engine(&self) -> std::result::Result<CascadeEngine, duocascade::cascade::EngineError> {
        let first = ReplayClassifier::new(self.config.first_model.clone(), &self.first);
        let second = match (&self.config.second_model, &self.second) {
            (Some(name), Some(records)) => Some(Box::new(ReplayClassifier::new(name.clone(), records)) as _),
            _ => None,
        };
        CascadeEngine::new(&self.config, Box::new(first), second)
    }
}

/// Matches the record files to the config's models: by file stem when the
/// stems name the models in reverse, by position otherwise.
fn prepare(config: CascadeConfig, data: &DataArgs, profile: &CostProfile) -> Result<Prepared> {
    if config.memory != MemoryMethod::None && data.images.is_none() {
        return Err(usage(format!("memory method {} requires --images", config.memory)));
    }
    let (mut path_a, mut path_b) = (data.records_a.clone(), data.records_b.clone());
    if let (Some(second), Some(b)) = (&config.second_model, &path_b) {
        if stem(b) == config.first_model && stem(&path_a) == *second {
            std::mem::swap(&mut path_a, path_b.as_mut().unwrap());
        }
    }
    let second = match (&config.second_model, &path_b) {
        (Some(name), None) => {
            return Err(usage(format!(
                "config uses second model {name}; pass its records with --records-b"
            )))
        }
        (Some(_), Some(b)) => Some(load_records(b)?),
        (None, _) => None,
    };
    let first = load_records(&path_a)?;
    let costs = profile.resolve(&config.first_model, config.second_model.as_deref(), config.memory);
    Ok(Prepared {
        config,
        first,
        second,
        costs,
    })
}

fn samples(records: &[PredictionRecord], data: &DataArgs, need_images: bool) -> Result<Vec<Sample>> {
    records
        .iter()
        .map(|r| {
            let mut sample = Sample::new(r.id.clone());
            if data.labels {
                sample.label = Some(r.label);
            }
            if let (true, Some(dir)) = (need_images, &data.images) {
                sample.image = Some(find_image(dir, &r.id)?);
            }
            Ok(sample)
        })
        .collect()
}

fn find_image(dir: &Path, id: &str) -> anyhow::Result<ImageBuffer> {
    for ext in ["pgm", "ppm"] {
        let path = dir.join(format!("{id}.{ext}"));
        if path.is_file() {
            return load_image(&path);
        }
    }
    Err(anyhow!("no image {id}.pgm or {id}.ppm in {}", dir.display()))
}

pub fn run(args: RunArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let profile = load_costs(&args.data.costs)?;
    let prepared = prepare(config, &args.data, &profile)?;
    let samples = samples(&prepared.first, &args.data, prepared.config.memory != MemoryMethod::None)?;
    let mut engine = prepared.engine().map_err(|e| usage(e.to_string()))?;
    let outcome = engine.run_batch(&samples).map_err(anyhow::Error::from)?;
    let report = aggregate(&outcome.traces, &prepared.costs, Some(&prepared.config))
        .map_err(anyhow::Error::from)?;

    match args.format {
        ReportFormat::Json => write_file(&args.report, &(report.to_json_pretty() + "\n"))?,
        ReportFormat::Csv => write_file(&args.report, &report.to_csv())?,
    }
    if let Some(path) = &args.traces {
        write_traces(path, &outcome.traces)?;
    }
    println!("{}", report.summary_line());
    Ok(())
}

fn write_traces(path: &PathBuf, traces: &[duocascade::cascade::StageTrace]) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut out = BufWriter::new(file);
    for trace in traces {
        serde_json::to_writer(&mut out, trace)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn hash(args: HashArgs) -> Result<()> {
    let image = load_image(&args.image)?;
    match args.method {
        HashMethod::Dhash => {
            let h = dhash(&image).map_err(anyhow::Error::from)?;
            println!("dhash: {h:016x}");
        }
        HashMethod::Moments => {
            let (fp, inv) = moments_fingerprint(&image).map_err(anyhow::Error::from)?;
            let key = match &fp {
                duocascade::Fingerprint::Moments(key) => key.clone(),
                other => other.to_string(),
            };
            let phi: Vec<String> = inv.phi.iter().map(|v| format!("{v:e}")).collect();
            println!("moments: {key} phi=[{}]", phi.join(", "));
        }
    }
    Ok(())
}

pub fn duplication(args: DuplicationArgs) -> Result<()> {
    let transform: Transform = args.transform.parse().map_err(|e| usage(format!("{e}")))?;
    let profile = load_costs(&args.data.costs)?;
    let mut prepared = Vec::new();
    for path in &args.config {
        let config = load_config(path)?;
        prepared.push((stem(path), prepare(config, &args.data, &profile)?));
    }
    let need_images =
        transform != Transform::Identity || prepared.iter().any(|(_, p)| p.config.memory != MemoryMethod::None);
    if need_images && args.data.images.is_none() {
        return Err(usage(format!("transform {transform} requires --images")));
    }
    let base = samples(&prepared[0].1.first, &args.data, need_images)?;
    let setups: Vec<EngineSetup<'_>> = prepared
        .iter()
        .map(|(name, p)| EngineSetup {
            name: name.clone(),
            costs: p.costs.clone(),
            build: Box::new(move || p.engine()),
        })
        .collect();
    let curve = duplication_experiment(&base, &args.ratios, transform, args.seed, &setups)
        .map_err(anyhow::Error::from)?;
    write_file(&args.out, &curve.to_csv())?;
    for p in &curve.points {
        println!(
            "{} ratio={} samples={} hits={} energy={:.6}Wh",
            p.engine, p.ratio, p.samples, p.hits, p.total_energy_wh
        );
    }
    Ok(())
}

fn load_report(path: &Path) -> anyhow::Result<RunReport> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    RunReport::from_json(&text).with_context(|| format!("in {}", path.display()))
}

pub fn report(args: ReportArgs) -> Result<()> {
    let baseline = load_report(&args.baseline)?;
    let candidate = load_report(&args.candidate)?;
    let reduction = compare(&baseline, &candidate).map_err(anyhow::Error::from)?;
    print!("{}", reduction.to_table());
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&reduction).context("serializing reductions")?;
        write_file(out, &(json + "\n"))?;
    }
    Ok(())
}
