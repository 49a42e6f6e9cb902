use std::fs;
use std::path::PathBuf;

use focusdrop::checkpoint::{load_checkpoint, save_checkpoint};
use focusdrop::cifar::{load_cifar, load_cifar_files};
use focusdrop::export::{
    export_heatmap, read_heatmap_csv, read_pgm, write_mask_csv, write_mask_meta, write_mask_pgm,
};
use focusdrop::metrics::{read_metrics, CsvLog, MetricsRow, METRICS_SCHEMA};
use focusdrop::snapshot::{load_tensor, read_tensor, save_tensor, write_tensor};
use focusdrop_core::analysis::CamMap;
use focusdrop_core::data::{make_synthetic, CifarVariant};
use focusdrop_core::focus::{build_focus_mask, FeatureStack};
use focusdrop_core::nn::{build_model, ModelSpec};
use focusdrop_core::Tensor;
use proptest::prelude::*;

proptest! {
    #[test]
    fn snapshot_round_trip(shape in prop::collection::vec(1usize..5, 1..5), seed in any::<u32>()) {
        let t = Tensor::<f32>::from_fn(&shape, |i| (i as f32 + seed as f32).sin() * 1e3);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        prop_assert_eq!(buf.len(), 8 + 4 * shape.len() + 4 * t.len());
        prop_assert_eq!(read_tensor(&mut buf.as_slice()).unwrap(), t);
    }
}

#[test]
fn snapshot_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.fnt");
    let t = Tensor::new(&[2, 2], vec![0.5f32, -1.0, f32::MIN_POSITIVE, 3.25]).unwrap();
    save_tensor(&p, &t).unwrap();
    assert_eq!(load_tensor(&p).unwrap(), t);
    assert!(load_tensor(&dir.path().join("missing")).is_err());
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_synthetic(3, 4, 16, 3).unwrap();
    for spec in [ModelSpec::tiny_cnn(3), ModelSpec::resnet(8, 3)] {
        let spec = ModelSpec { input_size: 16, ..spec };
        let model = build_model::<f32>(&spec, 7).unwrap();
        let ck = dir.path().join(&spec.architecture);
        save_checkpoint(&ck, &model, data.normalization(), 4, 0.75).unwrap();
        let loaded = load_checkpoint(&ck).unwrap();
        assert_eq!(loaded.epoch, 4);
        assert_eq!(loaded.test_acc, 0.75);
        assert_eq!(&loaded.normalization, data.normalization());
        assert_eq!(loaded.model.named_tensors(), model.named_tensors());
        let (x, _) = data.batch::<f32, rand_core_rng::Rng>(&[0, 1, 2], None).unwrap();
        assert_eq!(loaded.model.predict(&x).unwrap(), model.predict(&x).unwrap());
    }
}

mod rand_core_rng {
    pub type Rng = focusdrop_core::rng::StreamRng;
}

#[test]
fn checkpoint_detects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_synthetic(3, 2, 16, 3).unwrap();
    let model = build_model::<f32>(&ModelSpec::tiny_cnn(3), 7).unwrap();
    save_checkpoint(dir.path(), &model, data.normalization(), 0, 0.0).unwrap();
    let bin = dir.path().join("tensors.bin");
    let bytes = fs::read(&bin).unwrap();
    fs::write(&bin, &bytes[..bytes.len() - 3]).unwrap();
    assert!(load_checkpoint(dir.path()).is_err());
}

fn write_records(path: &PathBuf, n: usize, label: impl Fn(usize) -> u8, variant: CifarVariant) {
    let mut bytes = Vec::new();
    for i in 0..n {
        if variant == CifarVariant::Cifar100 {
            bytes.push(0);
        }
        bytes.push(label(i));
        bytes.extend(std::iter::repeat_n((i % 256) as u8, 3072));
    }
    fs::write(path, bytes).unwrap();
}

#[test]
fn cifar_files_with_offsets_in_errors() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.bin");
    let test = dir.path().join("test.bin");
    write_records(&train, 5, |i| (i % 10) as u8, CifarVariant::Cifar10);
    write_records(&test, 2, |_| 9, CifarVariant::Cifar10);
    let (tr, te) = load_cifar_files(&[train.clone()], &[test.clone()], CifarVariant::Cifar10, Some((5, 2))).unwrap();
    assert_eq!((tr.len(), te.len()), (5, 2));
    assert_eq!(te.normalization(), tr.normalization());
    assert!(load_cifar_files(&[train.clone()], &[test.clone()], CifarVariant::Cifar10, Some((6, 2))).is_err());

    let bytes = fs::read(&train).unwrap();
    fs::write(&train, &bytes[..3073 * 2 + 100]).unwrap();
    let msg = load_cifar_files(&[train], &[test], CifarVariant::Cifar10, None).unwrap_err().to_string();
    assert!(msg.contains("6146"), "{msg}");
}

#[test]
fn cifar_directory_layout_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("cifar-100-binary");
    fs::create_dir(&root).unwrap();
    write_records(&root.join("train.bin"), 100, |i| i as u8, CifarVariant::Cifar100);
    write_records(&root.join("test.bin"), 100, |i| i as u8, CifarVariant::Cifar100);
    let msg = load_cifar(dir.path(), CifarVariant::Cifar100).unwrap_err().to_string();
    assert!(msg.contains("expected 50000"), "{msg}");
    let (tr, _) = load_cifar_files(
        &[root.join("train.bin")],
        &[root.join("test.bin")],
        CifarVariant::Cifar100,
        None,
    )
    .unwrap();
    let mut labels = tr.labels().to_vec();
    labels.dedup();
    assert_eq!(labels.len(), 100);
}

#[test]
fn heatmap_pixels_and_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (pgm, csv) = (dir.path().join("h.pgm"), dir.path().join("h.csv"));
    let map = CamMap::from_raw(0, 2, 2, &[0.0, 1.0, 0.5, 0.25]).unwrap();
    export_heatmap(&map, &pgm, &csv).unwrap();
    let (w, h, max, px) = read_pgm(&pgm).unwrap();
    assert_eq!((w, h, max), (2, 2, 255));
    // 127.5 and 63.75 under round-half-even.
    assert_eq!(px, vec![0, 255, 128, 64]);
    let first = fs::read(&pgm).unwrap();
    export_heatmap(&map, &pgm, &csv).unwrap();
    assert_eq!(fs::read(&pgm).unwrap(), first);

    let raw: Vec<f64> = (0..12).map(|i| (i as f64 * 0.377).sin()).collect();
    let m = CamMap::from_raw(2, 3, 4, &raw).unwrap();
    export_heatmap(&m, &pgm, &csv).unwrap();
    assert_eq!(read_heatmap_csv(&csv).unwrap(), (m.values.clone(), 3, 4));

    let flat = CamMap::from_raw(0, 2, 3, &[7.0; 6]).unwrap();
    export_heatmap(&flat, &pgm, &csv).unwrap();
    assert_eq!(read_pgm(&pgm).unwrap().3, vec![0; 6]);
}

#[test]
fn mask_exports() {
    let dir = tempfile::tempdir().unwrap();
    let v = [0.0, 3.0, 1.0, 2.0, 0.5, 0.0];
    let m = build_focus_mask(&FeatureStack::new(&v, 1, 2, 3).unwrap(), 0.5);
    write_mask_pgm(&dir.path().join("m.pgm"), &m).unwrap();
    assert_eq!(read_pgm(&dir.path().join("m.pgm")).unwrap(), (3, 2, 1, vec![0, 1, 0, 1, 0, 0]));
    write_mask_csv(&dir.path().join("m.csv"), &m).unwrap();
    assert_eq!(fs::read_to_string(dir.path().join("m.csv")).unwrap(), "0,1,0\n1,0,0\n");
    write_mask_meta(&dir.path().join("meta.csv"), &[m.clone(), m]).unwrap();
    let text = fs::read_to_string(dir.path().join("meta.csv")).unwrap();
    assert!(text.starts_with("# schema: focusdrop-mask-meta v1\n"));
    assert!(text.contains("\n0,0,0.5,1.5,0,1,3.0,"), "{text}");
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn metrics_schema_and_blank_mask_columns() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("metrics.csv");
    let rows = vec![
        MetricsRow {
            epoch: 0,
            train_loss: 1.25,
            train_acc: 0.5,
            test_acc: 0.625,
            lr: 0.1,
            active_batches: 0,
            total_batches: 10,
            dropped_fraction: None,
            retained_fraction: None,
        },
        MetricsRow {
            epoch: 1,
            train_loss: 0.75,
            train_acc: 0.8,
            test_acc: 0.9,
            lr: 0.1,
            active_batches: 2,
            total_batches: 10,
            dropped_fraction: Some(0.8),
            retained_fraction: Some(0.2),
        },
    ];
    let mut log = CsvLog::create(&p, METRICS_SCHEMA).unwrap();
    for r in &rows {
        log.write(r).unwrap();
    }
    drop(log);
    let text = fs::read_to_string(&p).unwrap();
    assert!(text.starts_with(
        "# schema: focusdrop-metrics v1\nepoch,train_loss,train_acc,test_acc,lr,active_batches,total_batches,dropped_fraction,retained_fraction\n0,1.25,0.5,0.625,0.1,0,10,,\n"
    ));
    assert_eq!(read_metrics(&p).unwrap(), rows);
    fs::write(&p, text.replacen("v1", "v0", 1)).unwrap();
    assert!(read_metrics(&p).is_err());
}
