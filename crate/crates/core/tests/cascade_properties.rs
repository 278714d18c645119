use duocascade::calibration::{accuracy_at, cascade_decide_offline};
use duocascade::cascade::{CascadeEngine, Chosen, Path, ReplayClassifier, Sample, StageTrace};
use duocascade::metering::{duplication_experiment, EngineSetup, Transform};
use duocascade::phash::MemoryMethod;
use duocascade::records::{align_records, CostProfile, PredictionRecord, Stage, StageCost, StageCosts};
use duocascade::synthetic::random_images;
use duocascade::{CascadeConfig, ScoreFunctionKind};
use proptest::prelude::*;

fn kinds() -> impl Strategy<Value = ScoreFunctionKind> {
    prop_oneof![
        Just(ScoreFunctionKind::MaxProbability),
        Just(ScoreFunctionKind::Difference),
        Just(ScoreFunctionKind::EntropyNormalized),
    ]
}

/// Paired records over `n` samples with `k` classes.
fn pairs(max_n: usize) -> impl Strategy<Value = (Vec<PredictionRecord>, Vec<PredictionRecord>)> {
    (2usize..6, 1..max_n).prop_flat_map(|(k, n)| {
        let row = prop::collection::vec(-6.0f64..6.0, k);
        (
            prop::collection::vec((0..k, row.clone(), row), n).prop_map(move |rows| {
                let mk = |i: usize, label: usize, logits: &Vec<f64>| PredictionRecord {
                    id: format!("s{i:04}"),
                    label,
                    logits: logits.clone(),
                };
                let a = rows.iter().enumerate().map(|(i, (l, za, _))| mk(i, *l, za)).collect();
                let b = rows.iter().enumerate().map(|(i, (l, _, zb))| mk(i, *l, zb)).collect();
                (a, b)
            }),
        )
            .prop_map(|(x,)| x)
    })
}

fn engine(config: &CascadeConfig, a: &[PredictionRecord], b: &[PredictionRecord]) -> CascadeEngine {
    CascadeEngine::new(
        config,
        Box::new(ReplayClassifier::new("a", a)),
        Some(Box::new(ReplayClassifier::new("b", b))),
    )
    .unwrap()
}

fn stages_fit_path(t: &StageTrace, memory: bool) -> bool {
    let s = &t.stages;
    let has = |x: Stage| s.contains(&x);
    let path_ok = match t.path {
        Path::MemoryHit => s == &[Stage::MemoryLookup] && t.chosen == Chosen::Memory,
        Path::ModelAOnly => has(Stage::ModelA) && !has(Stage::ModelB) && t.chosen == Chosen::A,
        Path::ModelAB => has(Stage::ModelA) && has(Stage::ModelB) && t.chosen != Chosen::Memory,
    };
    let insert_ok = has(Stage::MemoryInsert) == (memory && t.path != Path::MemoryHit && t.memory_error.is_none());
    path_ok && insert_ok
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn engine_matches_offline((a, b) in pairs(60), kind in kinds(), lambda in 0.0f64..1.0, post in any::<bool>()) {
        let config = CascadeConfig::pair("a", "b", kind, lambda).with_post_check(post);
        let mut e = engine(&config, &a, &b);
        let samples: Vec<Sample> = a.iter().map(|r| Sample::new(r.id.clone()).with_label(r.label)).collect();
        let outcome = e.run_batch(&samples).unwrap();
        for (t, (ra, rb)) in outcome.traces.iter().zip(a.iter().zip(&b)) {
            let d = cascade_decide_offline(&ra.logits, &rb.logits, kind, lambda, post).unwrap();
            prop_assert_eq!(t.predicted, d.predicted);
            prop_assert_eq!(t.path == Path::ModelAB, d.used_second);
            prop_assert!(stages_fit_path(t, false));
        }
        let paired = align_records(&a, &b).unwrap();
        let offline = accuracy_at(&paired, kind, lambda, post).unwrap();
        let used = outcome.summary.paths.model_ab as f64 / samples.len() as f64;
        prop_assert_eq!(used, offline.usage);
        prop_assert_eq!(outcome.summary.metrics.unwrap().accuracy, offline.accuracy);
    }

    #[test]
    fn second_pass_hits_memory(
        (a, b) in pairs(40),
        kind in kinds(),
        lambda in 0.0f64..1.0,
        moments in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let method = if moments { MemoryMethod::Moments } else { MemoryMethod::Dhash };
        let config = CascadeConfig::pair("a", "b", kind, lambda).with_memory(method);
        let mut e = engine(&config, &a, &b);
        let samples: Vec<Sample> = a
            .iter()
            .zip(random_images(a.len(), 16, seed))
            .map(|(r, im)| Sample::new(r.id.clone()).with_image(im))
            .collect();
        let first = e.run_batch(&samples).unwrap().traces;
        let distinct = e.store().unwrap().len() == samples.len();
        let second = e.run_batch(&samples).unwrap().traces;
        for (x, y) in first.iter().zip(&second) {
            prop_assert!(stages_fit_path(x, true) && stages_fit_path(y, true));
            if distinct {
                prop_assert_eq!(y.path, Path::MemoryHit);
                prop_assert_eq!(x.predicted, y.predicted);
            }
        }
    }

    #[test]
    fn duplication_curve_is_flat_with_memory((a, b) in pairs(30), lookup in 0.0f64..1e-5) {
        let costs = CostProfile::new(StageCosts {
            memory_lookup: StageCost::new(lookup, 0.1),
            memory_insert: StageCost::new(lookup / 2.0, 0.1),
            model_a: StageCost::new(2.5e-5, 22.3),
            model_b: StageCost::new(4.1e-5, 42.4),
        });
        let config = CascadeConfig::pair("a", "b", ScoreFunctionKind::Difference, 0.5).with_memory(MemoryMethod::Dhash);
        let samples: Vec<Sample> = a
            .iter()
            .zip(random_images(a.len(), 16, 3))
            .map(|(r, im)| Sample::new(r.id.clone()).with_image(im))
            .collect();
        let setups = [EngineSetup {
            name: "memory".into(),
            costs,
            build: Box::new(|| {
                CascadeEngine::new(
                    &config,
                    Box::new(ReplayClassifier::new("a", &a)),
                    Some(Box::new(ReplayClassifier::new("b", &b))),
                )
            }),
        }];
        let curve = duplication_experiment(&samples, &[0.0, 0.25, 0.5, 0.75, 1.0], Transform::Identity, 0, &setups).unwrap();
        for w in curve.points.windows(2) {
            let added = (w[1].samples - w[0].samples) as f64;
            let slope = w[1].total_energy_wh - w[0].total_energy_wh;
            prop_assert!(slope >= -1e-18);
            prop_assert!(slope <= added * lookup + 1e-15);
            prop_assert!(w[0].ratio < w[1].ratio);
        }
    }
}

#[test]
fn rotated_duplicates_hit_moments_memory() {
    let n = 30;
    let recs: Vec<PredictionRecord> = (0..n)
        .map(|i| PredictionRecord {
            id: format!("s{i:02}"),
            label: i % 3,
            logits: vec![(i % 3) as f64, 1.0, 0.5],
        })
        .collect();
    let samples: Vec<Sample> = recs
        .iter()
        .zip(random_images(n, 20, 8))
        .map(|(r, im)| Sample::new(r.id.clone()).with_image(im))
        .collect();
    let costs = CostProfile::default();
    let build = |memory: MemoryMethod| {
        let config = CascadeConfig::pair("a", "b", ScoreFunctionKind::Difference, 0.5).with_memory(memory);
        let recs = recs.clone();
        Box::new(move || {
            CascadeEngine::new(
                &config,
                Box::new(ReplayClassifier::new("a", &recs)),
                Some(Box::new(ReplayClassifier::new("b", &recs))),
            )
        })
    };
    let setups = [
        EngineSetup { name: "moments".into(), costs: costs.clone(), build: build(MemoryMethod::Moments) },
        EngineSetup { name: "dhash".into(), costs, build: build(MemoryMethod::Dhash) },
    ];
    for transform in [Transform::Rot90, Transform::Rot180, Transform::MirrorH, Transform::MirrorV, Transform::Random] {
        let curve = duplication_experiment(&samples, &[1.0], transform, 11, &setups).unwrap();
        let hits = |name: &str| curve.for_engine(name).next().unwrap().hits;
        assert_eq!(hits("moments"), n, "{transform}");
        assert!(hits("dhash") < n / 3, "{transform}: dhash hits {}", hits("dhash"));
    }
}
