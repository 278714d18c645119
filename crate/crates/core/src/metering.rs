//! Energy and latency accounting over stage traces, plus the comparative
//! experiments built on it.
//!
//! Costs are linear: every executed stage adds its profile energy and
//! latency. Totals are computed from stage counts, multiplied once per stage.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::CascadeConfig;
use crate::cascade::{
    CascadeEngine, ClassificationMetrics, EngineError, Path, PathCounts, Sample, StageTrace,
};
use crate::records::{CostProfile, Stage};

#[derive(Debug, Error)]
pub enum MeteringError {
    #[error("cannot aggregate an empty trace list")]
    Empty,
    #[error("reports cover different sample counts: {baseline} vs {candidate}")]
    SampleCountMismatch { baseline: usize, candidate: usize },
    #[error("baseline {0} is zero")]
    ZeroBaseline(&'static str),
    #[error("duplication ratio {0} is outside [0, 1]")]
    InvalidRatio(f64),
    #[error("transform {transform} needs an image for sample {id}")]
    MissingImage { id: String, transform: Transform },
    #[error("engine {name}: {source}")]
    Engine {
        name: String,
        #[source]
        source: EngineError,
    },
}

/// Energy (Wh) and latency (ms) of one trace.
pub fn cost_of(trace: &StageTrace, costs: &CostProfile) -> (f64, f64) {
    trace.stages.iter().fold((0.0, 0.0), |(e, t), &stage| {
        let c = costs.stage(stage);
        (e + c.energy_wh, t + c.latency_ms)
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub memory_lookup: u64,
    pub memory_insert: u64,
    pub model_a: u64,
    pub model_b: u64,
}

impl StageCounts {
    pub fn from_traces(traces: &[StageTrace]) -> Self {
        let mut counts = StageCounts::default();
        for stage in traces.iter().flat_map(|t| &t.stages) {
            *counts.get_mut(*stage) += 1;
        }
        counts
    }

    pub fn get(&self, stage: Stage) -> u64 {
        match stage {
            Stage::MemoryLookup => self.memory_lookup,
            Stage::MemoryInsert => self.memory_insert,
            Stage::ModelA => self.model_a,
            Stage::ModelB => self.model_b,
        }
    }

    fn get_mut(&mut self, stage: Stage) -> &mut u64 {
        match stage {
            Stage::MemoryLookup => &mut self.memory_lookup,
            Stage::MemoryInsert => &mut self.memory_insert,
            Stage::ModelA => &mut self.model_a,
            Stage::ModelB => &mut self.model_b,
        }
    }

    /// `Σ count × energy`, one multiplication per stage.
    pub fn energy_wh(&self, costs: &CostProfile) -> f64 {
        Stage::ALL
            .iter()
            .map(|&s| self.get(s) as f64 * costs.stage(s).energy_wh)
            .sum()
    }

    /// `Σ count × current`, or `None` if a stage that ran has no current.
    pub fn current_mah(&self, costs: &CostProfile) -> Option<f64> {
        Stage::ALL
            .iter()
            .filter(|&&s| self.get(s) > 0)
            .map(|&s| costs.stage(s).current_mah.map(|c| self.get(s) as f64 * c))
            .sum()
    }
}

/// Nearest-rank percentile of an ascending list: the value at 1-based rank
/// `ceil(p * n / 100)`, clamped to `[1, n]`.
///
/// # Panics
/// If `sorted` is empty.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "percentile of an empty list");
    let rank = (p * n as f64 / 100.0).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Aggregated metering of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub samples: usize,
    pub paths: PathCounts,
    pub stage_counts: StageCounts,
    pub total_energy_wh: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_current_mah: Option<f64>,
    pub mean_latency_ms: f64,
    pub p95_latency_ms: f64,
    pub p99_latency_ms: f64,
    /// Fraction of samples that invoked the second model.
    pub second_model_usage: f64,
    pub metrics: Option<ClassificationMetrics>,
    pub config: Option<CascadeConfig>,
    /// Per-sample latency in input order.
    pub latencies_ms: Vec<f64>,
}

const CSV_HEADER: &str = "samples,memory_hit,model_a_only,model_ab,\
memory_lookup,memory_insert,model_a,model_b,total_energy_wh,total_current_mah,\
mean_latency_ms,p95_latency_ms,p99_latency_ms,second_model_usage,\
accuracy,precision,recall,f1";

impl RunReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Header plus one summary row; absent optional values are empty cells.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let m = self.metrics;
        format!(
            "{CSV_HEADER}\n{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            self.samples,
            self.paths.memory_hit,
            self.paths.model_a_only,
            self.paths.model_ab,
            self.stage_counts.memory_lookup,
            self.stage_counts.memory_insert,
            self.stage_counts.model_a,
            self.stage_counts.model_b,
            self.total_energy_wh,
            opt(self.total_current_mah),
            self.mean_latency_ms,
            self.p95_latency_ms,
            self.p99_latency_ms,
            self.second_model_usage,
            opt(m.map(|m| m.accuracy)),
            opt(m.map(|m| m.precision)),
            opt(m.map(|m| m.recall)),
            opt(m.map(|m| m.f1)),
        )
    }

    pub fn summary_line(&self) -> String {
        let acc = self
            .metrics
            .map(|m| format!("accuracy={:.4} ", m.accuracy))
            .unwrap_or_default();
        format!(
            "{acc}energy={:.6}Wh mean={:.3}ms p95={:.3}ms p99={:.3}ms",
            self.total_energy_wh, self.mean_latency_ms, self.p95_latency_ms, self.p99_latency_ms
        )
    }
}

/// Totals, latency statistics and (when traces carry labels) metrics.
pub fn aggregate(
    traces: &[StageTrace],
    costs: &CostProfile,
    config: Option<&CascadeConfig>,
) -> Result<RunReport, MeteringError> {
    if traces.is_empty() {
        return Err(MeteringError::Empty);
    }
    let n = traces.len();
    let stage_counts = StageCounts::from_traces(traces);
    let paths = PathCounts::from_traces(traces);
    let latencies: Vec<f64> = traces.iter().map(|t| cost_of(t, costs).1).collect();
    let mut sorted = latencies.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(RunReport {
        samples: n,
        paths,
        stage_counts,
        total_energy_wh: stage_counts.energy_wh(costs),
        total_current_mah: stage_counts.current_mah(costs),
        mean_latency_ms: latencies.iter().sum::<f64>() / n as f64,
        p95_latency_ms: nearest_rank(&sorted, 95.0),
        p99_latency_ms: nearest_rank(&sorted, 99.0),
        second_model_usage: traces.iter().filter(|t| t.path == Path::ModelAB).count() as f64
            / n as f64,
        metrics: ClassificationMetrics::from_pairs(
            traces.iter().filter_map(|t| t.label.map(|l| (t.predicted, l))),
        ),
        config: config.cloned(),
        latencies_ms: latencies,
    })
}

/// Percentage reductions of a candidate against a baseline,
/// `100 × (base − cand) / base`. Negative means the candidate is worse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub energy_pct: f64,
    pub mean_latency_pct: f64,
    pub p95_latency_pct: f64,
    pub p99_latency_pct: f64,
}

impl Reduction {
    pub fn to_table(&self) -> String {
        let mut out = String::from("quantity      reduction\n");
        for (name, v) in [
            ("energy", self.energy_pct),
            ("mean latency", self.mean_latency_pct),
            ("p95 latency", self.p95_latency_pct),
            ("p99 latency", self.p99_latency_pct),
        ] {
            writeln!(out, "{name:<13} {v:>8.2}%").unwrap();
        }
        out
    }
}

fn pct(what: &'static str, base: f64, cand: f64) -> Result<f64, MeteringError> {
    if base == 0.0 {
        return Err(MeteringError::ZeroBaseline(what));
    }
    Ok(100.0 * (base - cand) / base)
}

pub fn compare(baseline: &RunReport, candidate: &RunReport) -> Result<Reduction, MeteringError> {
    if baseline.samples != candidate.samples {
        return Err(MeteringError::SampleCountMismatch {
            baseline: baseline.samples,
            candidate: candidate.samples,
        });
    }
    Ok(Reduction {
        energy_pct: pct("energy", baseline.total_energy_wh, candidate.total_energy_wh)?,
        mean_latency_pct: pct("mean latency", baseline.mean_latency_ms, candidate.mean_latency_ms)?,
        p95_latency_pct: pct("p95 latency", baseline.p95_latency_ms, candidate.p95_latency_ms)?,
        p99_latency_pct: pct("p99 latency", baseline.p99_latency_ms, candidate.p99_latency_ms)?,
    })
}

/// Energy overhead, in percent, of a memory-enabled run over the same run
/// without memory.
pub fn memory_overhead(plain: &RunReport, with_memory: &RunReport) -> Result<f64, MeteringError> {
    Ok(-compare(plain, with_memory)?.energy_pct)
}

/// Alteration applied to duplicated samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    Rot90,
    Rot180,
    MirrorH,
    MirrorV,
    /// Per duplicate, one of rot90, rot180, mirror_h, mirror_v drawn from a
    /// seeded generator.
    Random,
}

impl Transform {
    const RANDOM_POOL: [Transform; 4] = [
        Transform::Rot90,
        Transform::Rot180,
        Transform::MirrorH,
        Transform::MirrorV,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::Rot90 => "rot90",
            Transform::Rot180 => "rot180",
            Transform::MirrorH => "mirror_h",
            Transform::MirrorV => "mirror_v",
            Transform::Random => "random",
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown transform {0:?}; expected identity, rot90, rot180, mirror_h, mirror_v or random")]
pub struct UnknownTransform(pub String);

impl FromStr for Transform {
    type Err = UnknownTransform;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "identity" => Transform::Identity,
            "rot90" => Transform::Rot90,
            "rot180" => Transform::Rot180,
            "mirror_h" => Transform::MirrorH,
            "mirror_v" => Transform::MirrorV,
            "random" | "random_of_these" => Transform::Random,
            other => return Err(UnknownTransform(other.to_string())),
        })
    }
}

/// Input stream with the first `floor(ratio × N)` samples each followed
/// directly by a transformed duplicate carrying the same id and label.
///
/// `Identity` copies the sample as is, so it needs no image. Every other
/// transform does.
pub fn duplicate_stream(
    samples: &[Sample],
    ratio: f64,
    transform: Transform,
    seed: u64,
) -> Result<Vec<Sample>, MeteringError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(MeteringError::InvalidRatio(ratio));
    }
    let dups = (ratio * samples.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stream = Vec::with_capacity(samples.len() + dups);
    for (i, sample) in samples.iter().enumerate() {
        stream.push(sample.clone());
        if i >= dups {
            continue;
        }
        let t = match transform {
            Transform::Random => Transform::RANDOM_POOL[rng.random_range(0..4)],
            t => t,
        };
        let mut dup = sample.clone();
        if t != Transform::Identity {
            let image = sample.image.as_ref().ok_or_else(|| MeteringError::MissingImage {
                id: sample.id.clone(),
                transform,
            })?;
            dup.image = Some(match t {
                Transform::Rot90 => image.rotate90(),
                Transform::Rot180 => image.rotate180(),
                Transform::MirrorH => image.mirror_horizontal(),
                Transform::MirrorV => image.mirror_vertical(),
                Transform::Identity | Transform::Random => unreachable!(),
            });
        }
        stream.push(dup);
    }
    Ok(stream)
}

/// One engine configuration in a duplication experiment. `build` is called
/// once per ratio so every point starts from an empty memory.
pub struct EngineSetup<'a> {
    pub name: String,
    pub costs: CostProfile,
    pub build: Box<dyn Fn() -> Result<CascadeEngine, EngineError> + 'a>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicationPoint {
    pub ratio: f64,
    pub engine: String,
    pub total_energy_wh: f64,
    pub hits: usize,
    pub samples: usize,
}

/// Points grouped by engine, ratios ascending within each engine.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DuplicationCurve {
    pub points: Vec<DuplicationPoint>,
}

impl DuplicationCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("ratio,engine,total_energy_wh,hits\n");
        for p in &self.points {
            writeln!(out, "{},{},{},{}", p.ratio, p.engine, p.total_energy_wh, p.hits).unwrap();
        }
        out
    }

    pub fn for_engine<'s>(&'s self, name: &'s str) -> impl Iterator<Item = &'s DuplicationPoint> + 's {
        self.points.iter().filter(move |p| p.engine == name)
    }
}

/// Runs every engine over the duplicated stream at every ratio.
/// Ratios are sorted and deduplicated first.
pub fn duplication_experiment(
    samples: &[Sample],
    ratios: &[f64],
    transform: Transform,
    seed: u64,
    engines: &[EngineSetup<'_>],
) -> Result<DuplicationCurve, MeteringError> {
    if let Some(&bad) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(MeteringError::InvalidRatio(bad));
    }
    let mut ratios = ratios.to_vec();
    ratios.sort_by(f64::total_cmp);
    ratios.dedup();

    let streams = ratios
        .iter()
        .map(|&r| duplicate_stream(samples, r, transform, seed))
        .collect::<Result<Vec<_>, _>>()?;

    let mut curve = DuplicationCurve::default();
    for setup in engines {
        let engine_err = |source| MeteringError::Engine {
            name: setup.name.clone(),
            source,
        };
        for (&ratio, stream) in ratios.iter().zip(&streams) {
            let mut engine = (setup.build)().map_err(engine_err)?;
            let outcome = engine.run_batch(stream).map_err(engine_err)?;
            let report = aggregate(&outcome.traces, &setup.costs, None)?;
            curve.points.push(DuplicationPoint {
                ratio,
                engine: setup.name.clone(),
                total_energy_wh: report.total_energy_wh,
                hits: report.paths.memory_hit,
                samples: report.samples,
            });
        }
    }
    Ok(curve)
}
