//! File formats and model persistence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segqual::classifier::{fit_gbdt, train_logistic, Classifier, Dataset, GbdtConfig, GbdtParams, LogisticConfig};
use segqual::maps::{
    read_feature_tensor, read_mask, read_probability_map, write_feature_tensor, write_mask, write_probability_map,
};
use segqual::npy::{self, NpyData};
use segqual::pipeline;
use segqual::synth::{generate_corpus, SynthConfig};
use segqual::{
    DatasetManifest, Error, FeatureSetKind, FeatureSetSpec, FeatureTable, FeatureTensor, ManifestEntry, MetaModel,
    ProbabilityMap, SegmentationMask,
};

fn random_probs(rng: &mut ChaCha8Rng) -> ProbabilityMap {
    let (h, w, n) = (rng.random_range(1..20), rng.random_range(1..20), rng.random_range(2..10));
    let mut values = Vec::with_capacity(h * w * n);
    for _ in 0..h * w {
        let raw: Vec<f32> = (0..n).map(|_| rng.random::<f32>() + 1e-3).collect();
        let t: f32 = raw.iter().sum();
        values.extend(raw.iter().map(|v| v / t));
    }
    ProbabilityMap::new(h, w, n, values).unwrap()
}

#[test]
fn probability_maps_round_trip_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 0..100 {
        let p = random_probs(&mut rng);
        let path = dir.path().join(format!("{k}.npy"));
        write_probability_map(&path, &p).unwrap();
        let q = read_probability_map(&path).unwrap();
        let bits = |m: &ProbabilityMap| m.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p), bits(&q));
        assert_eq!((p.height(), p.width(), p.num_classes()), (q.height(), q.width(), q.num_classes()));
    }
}

#[test]
fn masks_and_tensors_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in 0..50 {
        let (h, w) = (rng.random_range(1..30), rng.random_range(1..30));
        let m = SegmentationMask::new(h, w, (0..h * w).map(|_| rng.random_range(0..300)).collect()).unwrap();
        for ext in ["npy", "png"] {
            let path = dir.path().join(format!("m{k}.{ext}"));
            write_mask(&path, &m).unwrap();
            assert_eq!(read_mask(&path, 300).unwrap(), m);
        }
        let t = FeatureTensor::new(h, w, 3, (0..h * w * 3).map(|_| rng.random_range(-1e3..1e3)).collect()).unwrap();
        let path = dir.path().join(format!("t{k}.npy"));
        write_feature_tensor(&path, &t).unwrap();
        assert_eq!(read_feature_tensor(&path).unwrap(), t);
    }
}

#[test]
fn png_and_npy_masks_agree() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for classes in [8u16, 1000] {
        let m = SegmentationMask::new(17, 23, (0..17 * 23).map(|_| rng.random_range(0..classes)).collect()).unwrap();
        let (a, b) = (dir.path().join("a.png"), dir.path().join("a.npy"));
        write_mask(&a, &m).unwrap();
        write_mask(&b, &m).unwrap();
        assert_eq!(read_mask(&a, classes as usize).unwrap(), read_mask(&b, classes as usize).unwrap());
    }
}

#[test]
fn npy_header_is_aligned_and_numpy_shaped() {
    let bytes = npy::encode(&[2, 3], &NpyData::U16(vec![1, 2, 3, 4, 5, 6])).unwrap();
    assert_eq!(&bytes[..6], b"\x93NUMPY");
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    assert_eq!((10 + header_len) % 64, 0);
    let text = std::str::from_utf8(&bytes[10..10 + header_len]).unwrap();
    assert!(text.starts_with("{'descr': '<u2', 'fortran_order': False, 'shape': (2, 3), }"));
    assert!(text.ends_with('\n'));
    assert_eq!(npy::decode(&bytes).unwrap().data, NpyData::U16(vec![1, 2, 3, 4, 5, 6]));
}

#[test]
fn malformed_inputs_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.npy");
    std::fs::write(&p, b"not an npy file").unwrap();
    assert!(matches!(read_probability_map(&p), Err(Error::Format(_))));
    let m = dir.path().join("mask.npy");
    npy::write(&m, &[2, 2], &NpyData::F32(vec![0.0; 4])).unwrap();
    assert!(matches!(read_mask(&m, 4), Err(Error::Format(_))));
    assert!(matches!(read_probability_map(dir.path().join("missing.npy")), Err(Error::Io { .. })));
}

#[test]
fn unnormalized_probabilities_are_rejected() {
    assert!(matches!(
        ProbabilityMap::new(1, 1, 2, vec![0.7, 0.7]),
        Err(Error::Validation(_))
    ));
}

#[test]
fn manifest_preserves_order_and_rejects_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        image_size: 16,
        ..SynthConfig::default()
    };
    let m = generate_corpus(&cfg, 5, dir.path()).unwrap();
    let loaded = DatasetManifest::load(dir.path().join("manifest.json")).unwrap();
    let ids: Vec<&str> = loaded.entries.iter().map(|e| e.image_id.as_str()).collect();
    assert_eq!(ids, ["img_0000", "img_0001", "img_0002", "img_0003", "img_0004"]);
    let mut dup = m.clone();
    let first: ManifestEntry = dup.entries[0].clone();
    dup.entries.push(first);
    dup.save(dir.path().join("dup.json")).unwrap();
    assert!(matches!(DatasetManifest::load(dir.path().join("dup.json")), Err(Error::Validation(_))));
}

#[test]
fn feature_tables_round_trip_through_csv_and_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        image_size: 32,
        ..SynthConfig::default()
    };
    let m = generate_corpus(&cfg, 4, dir.path().join("c")).unwrap();
    let table = pipeline::extract_table(&m, FeatureSetKind::All, 0.5).unwrap();
    for name in ["t.csv", "t.jsonl"] {
        let path = dir.path().join(name);
        table.save(&path).unwrap();
        assert_eq!(FeatureTable::load(&path).unwrap(), table, "{name}");
    }
}

fn random_dataset(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Dataset {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        labels.push(x[0] * x[1] + 0.3 * x[2] + rng.random_range(-0.5..0.5) > 0.0);
        values.extend(x);
    }
    Dataset::new(d, values, labels).unwrap()
}

fn models() -> Vec<MetaModel> {
    let spec = FeatureSetSpec::new(FeatureSetKind::UncertaintyOnly, 4, true);
    let d = spec.len();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = random_dataset(&mut rng, d, 400);
    let params = GbdtParams {
        num_trees: 40,
        subsample: 0.8,
        ..Default::default()
    };
    let (gbdt, _) = fit_gbdt(&data, &params, &GbdtConfig::default(), 9).unwrap();
    let (lr, _) = train_logistic(&data, &LogisticConfig::default()).unwrap();
    vec![
        MetaModel::new(spec.clone(), 0.5, Classifier::Gbdt(gbdt)).unwrap(),
        MetaModel::new(spec, 0.5, Classifier::Logistic(lr)).unwrap(),
    ]
}

#[test]
fn models_round_trip_with_identical_scores() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (k, model) in models().into_iter().enumerate() {
        let path = dir.path().join(format!("m{k}.json"));
        model.save(&path).unwrap();
        let back = MetaModel::load(&path).unwrap();
        assert_eq!(back, model);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..model.feature_set.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
            assert_eq!(model.score_vector(&x).to_bits(), back.score_vector(&x).to_bits());
        }
    }
}

#[test]
fn batch_scoring_equals_single_scoring() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        image_size: 48,
        ..SynthConfig::default()
    };
    let m = generate_corpus(&cfg, 8, dir.path()).unwrap();
    let table = pipeline::extract_table(&m, FeatureSetKind::Reduced, 0.5).unwrap();
    let spec = pipeline::manifest_feature_spec(&m, FeatureSetKind::Reduced).unwrap();
    for kind in [pipeline::ModelKind::Logistic, pipeline::ModelKind::Gbdt] {
        let options = pipeline::TrainOptions {
            model: kind,
            grid: vec![GbdtParams::default()],
            folds: 3,
            ..Default::default()
        };
        let (model, _) = pipeline::train_model(&table.records, &spec, &options).unwrap();
        let batch = model.score_batch(&table.records).unwrap();
        for (r, b) in table.records.iter().zip(&batch) {
            assert_eq!(model.score(r).unwrap().to_bits(), b.to_bits());
            assert!((0.0..=1.0).contains(b));
        }
    }
}

#[test]
fn unsupported_model_version_is_reported() {
    let model = models().remove(1);
    let text = model.to_json().unwrap().replacen("\"version\": 1", "\"version\": 7", 1);
    let err = MetaModel::from_json(&text).unwrap_err();
    assert!(matches!(err, Error::Format(_)));
    assert!(err.to_string().contains("version 7"), "{err}");
}

#[test]
fn corpus_generation_is_byte_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        image_size: 32,
        seed: 42,
        ..SynthConfig::default()
    };
    generate_corpus(&cfg, 6, a.path()).unwrap();
    generate_corpus(&cfg, 6, b.path()).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 6 * 3 + 1);
    for n in names {
        assert_eq!(std::fs::read(a.path().join(&n)).unwrap(), std::fs::read(b.path().join(&n)).unwrap());
    }
}
