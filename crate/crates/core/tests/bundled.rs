//! Checked-in data files agree with the code that describes them.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use duocascade::cascade::{CascadeEngine, ReplayClassifier, Sample};
use duocascade::metering::{aggregate, memory_overhead};
use duocascade::phash::MemoryMethod;
use duocascade::records::{parse_prediction_records, CostProfile, PredictionRecord, Stage};
use duocascade::synthetic::{generate, SyntheticParams};
use duocascade::{CascadeConfig, ScoreFunctionKind};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn profile(name: &str) -> CostProfile {
    CostProfile::from_reader(File::open(root().join("costs").join(name)).unwrap()).unwrap()
}

#[test]
fn synthetic_files_match_generator() {
    let (a, b) = generate(&SyntheticParams::default());
    for (file, expected) in [("model_a.jsonl", a), ("model_b.jsonl", b)] {
        let path = root().join("data/synthetic").join(file);
        let parsed = parse_prediction_records(BufReader::new(File::open(path).unwrap())).unwrap();
        assert_eq!(parsed, expected, "{file} is stale; regenerate with the gen_synthetic example");
    }
}

/// Per 10,000 samples: (energy Wh, mean latency ms, current mAh).
const CIFAR: [(&str, f64, f64, f64); 5] = [
    ("resnet20", 0.25, 22.3, 48.0),
    ("mobilenetv2_x0_5", 0.41, 42.4, 81.0),
    ("repvgg_a0", 0.64, 51.9, 125.0),
    ("repvgg_a2", 1.20, 64.8, 225.0),
    ("shufflenetv2_x1_0_distilled", 0.75, 53.0, 40.0),
];

const IMAGENET: [(&str, f64, f64, f64); 4] = [
    ("mnasnet1_3", 0.88, 46.6, 165.0),
    ("densenet121", 2.12, 131.0, 398.0),
    ("regnet_x_800mf", 1.50, 118.4, 283.0),
    ("regnet_x_8gf", 4.50, 235.1, 845.0),
];

#[test]
fn catalogs_are_per_sample_table_values() {
    for (file, table) in [("cifar10.json", &CIFAR[..]), ("imagenet.json", &IMAGENET[..])] {
        let p = profile(file);
        assert_eq!(p.models.len(), table.len(), "{file}");
        for &(name, wh, ms, mah) in table {
            let m = &p.models[name];
            assert!((m.energy_wh * 10_000.0 - wh).abs() < 1e-12, "{file} {name}");
            assert_eq!(m.latency_ms, ms, "{file} {name}");
            assert!((m.current_mah.unwrap() * 10_000.0 - mah).abs() < 1e-9, "{file} {name}");
        }
        assert!(p.comments.as_deref().unwrap_or("").contains("10,000"));
        assert_eq!(p.stage(Stage::MemoryLookup).energy_wh, 0.0);
    }
}

fn overhead(file: &str, first: &str, second: &str, method: MemoryMethod) -> f64 {
    let p = profile(file);
    let n = 200;
    let recs: Vec<PredictionRecord> = (0..n)
        .map(|i| PredictionRecord {
            id: format!("s{i:03}"),
            label: 0,
            logits: vec![9.0, 0.0],
        })
        .collect();
    let images = duocascade::synthetic::random_images(n, 12, 1);
    let run = |memory: MemoryMethod| {
        let config = CascadeConfig::pair(first, second, ScoreFunctionKind::Difference, 0.5).with_memory(memory);
        let mut engine = CascadeEngine::new(
            &config,
            Box::new(ReplayClassifier::new(first, &recs)),
            Some(Box::new(ReplayClassifier::new(second, &recs))),
        )
        .unwrap();
        let samples: Vec<Sample> = recs
            .iter()
            .zip(&images)
            .map(|(r, im)| Sample::new(r.id.clone()).with_image(im.clone()))
            .collect();
        let traces = engine.run_batch(&samples).unwrap().traces;
        aggregate(&traces, &p.resolve(first, Some(second), memory), None).unwrap()
    };
    memory_overhead(&run(MemoryMethod::None), &run(method)).unwrap()
}

#[test]
fn memory_overheads_on_unduplicated_runs() {
    // every sample stays on the first model, so overhead is the memory
    // fraction of the first model's energy
    let cases = [
        ("cifar10.json", "resnet20", "mobilenetv2_x0_5", MemoryMethod::Dhash, 1.9),
        ("cifar10.json", "resnet20", "mobilenetv2_x0_5", MemoryMethod::Moments, 30.9),
        ("imagenet.json", "mnasnet1_3", "densenet121", MemoryMethod::Dhash, 1.0),
        ("imagenet.json", "mnasnet1_3", "densenet121", MemoryMethod::Moments, 5.8),
    ];
    for (file, a, b, method, expected) in cases {
        let got = overhead(file, a, b, method);
        assert!((got - expected).abs() < 1e-9, "{file} {method}: {got}");
    }
}
