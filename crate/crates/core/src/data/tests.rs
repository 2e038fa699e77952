use super::*;

fn spec(task: Task, n_train: usize, n_eval: usize, seed: u64) -> DatasetSpec {
    DatasetSpec {
        task,
        resolution: 32,
        n_train,
        n_eval,
        seed,
        hue_offset: 180.0,
        data_a: None,
        data_b: None,
        paired: true,
    }
}

#[test]
fn paired_generation_is_deterministic_and_in_range() {
    let s = spec(Task::PairedEdges2blobs, 2, 1, 7);
    let a = build_datasets(&s).unwrap();
    let b = build_datasets(&s).unwrap();
    assert_eq!(a, b);
    let other = build_datasets(&spec(Task::PairedEdges2blobs, 2, 1, 8)).unwrap();
    assert_ne!(a.train.b, other.train.b);
    for (x, y) in a.train.a.iter().zip(&a.train.b) {
        assert_eq!(x.shape(), &[3, 32, 32]);
        assert!(x.data().iter().all(|&v| v == 1.0 || v == -1.0));
        assert!(x.data().contains(&1.0));
        let (lo, hi) = y.min_max();
        assert!(lo >= -1.0 && hi <= 1.0);
    }
}

#[test]
fn blank_canvas_has_no_edges() {
    let e = edge_map(&Scene::default().labels(16), 16);
    assert!(e.data().iter().all(|&v| v == -1.0));
}

#[test]
fn unpaired_domains_differ_by_the_hue_offset() {
    for offset in [180.0, 120.0] {
        let s = DatasetSpec { hue_offset: offset, ..spec(Task::UnpairedPaletteShift, 128, 128, 3) };
        let d = build_datasets(&s).unwrap();
        let circ_mean = |items: Vec<&Tensor>| {
            let (mut x, mut y) = (0.0, 0.0);
            for t in items {
                let h = mean_hue_degrees(t).to_radians();
                x += h.cos();
                y += h.sin();
            }
            y.atan2(x).to_degrees()
        };
        let ha = circ_mean(d.train.a.iter().chain(&d.eval.a).collect());
        let hb = circ_mean(d.train.b.iter().chain(&d.eval.b).collect());
        let diff = (hb - ha).rem_euclid(360.0);
        assert!((diff - offset).abs() < 5.0, "offset {offset}: measured {diff}");
        assert!(!d.train.paired);
    }
}

#[test]
fn unpaired_minimal_eval_split() {
    let s = spec(Task::UnpairedPaletteShift, 2, 1, 1);
    let d = build_datasets(&s).unwrap();
    assert_eq!((d.eval.a.len(), d.eval.b.len()), (1, 1));
    assert_eq!(d, build_datasets(&s).unwrap());
}

#[test]
fn byte_mapping_endpoints() {
    assert_eq!(byte_to_unit(255), 1.0);
    assert_eq!(byte_to_unit(0), -1.0);
    assert_eq!(127.5 / 127.5 - 1.0, 0.0);
    for v in 0..=255u8 {
        assert_eq!(unit_to_byte(byte_to_unit(v)), v);
    }
}

#[test]
fn written_dataset_reloads_exactly_as_folder_task() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(Task::PairedEdges2blobs, 3, 2, 11);
    let splits = build_datasets(&s).unwrap();
    let manifest = write_dataset(dir.path(), &s, &splits).unwrap();
    assert_eq!(manifest.files.len(), 10);
    let again = write_dataset(&dir.path().join("copy"), &s, &splits).unwrap();
    assert_eq!(manifest.digest, again.digest);

    let folder = DatasetSpec {
        task: Task::Folder,
        data_a: Some(dir.path().join("a")),
        data_b: Some(dir.path().join("b")),
        ..s.clone()
    };
    let loaded = build_datasets(&folder).unwrap();
    assert_eq!(loaded.train.a, splits.train.a);
    assert_eq!(loaded.eval.b, splits.eval.b);
    assert_eq!(build_datasets(&folder).unwrap(), loaded);

    let too_many = DatasetSpec { n_train: 10, ..folder };
    assert!(matches!(build_datasets(&too_many), Err(Error::Config(_))));
}

#[test]
fn folder_loading_resizes_and_reports_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_image_folder(dir.path(), 8), Err(Error::Config(_))));
    write_png(&dir.path().join("a.png"), &Tensor::full(&[3, 16, 16], 1.0)).unwrap();
    let items = load_image_folder(dir.path(), 8).unwrap();
    assert_eq!(items[0].shape(), &[3, 8, 8]);
    assert!(items[0].data().iter().all(|&v| v == 1.0));

    fs::write(dir.path().join("b.png"), b"not an image").unwrap();
    match load_image_folder(dir.path(), 8) {
        Err(Error::Image { path, .. }) => assert!(path.ends_with("b.png")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn batching_drops_remainder_and_reshuffles_per_epoch() {
    let e0 = batch_iterator(10, 4, RngSeed(1), 0).unwrap();
    assert_eq!(e0.len(), 2);
    assert!(e0.iter().all(|b| b.len() == 4));
    assert_eq!(e0, batch_iterator(10, 4, RngSeed(1), 0).unwrap());
    let e1 = batch_iterator(10, 4, RngSeed(1), 1).unwrap();
    assert_ne!(e0, e1);
    let mut seen: Vec<usize> = batch_iterator(8, 2, RngSeed(3), 0).unwrap().concat();
    seen.sort();
    assert_eq!(seen, (0..8).collect::<Vec<_>>());
    assert!(batch_iterator(3, 4, RngSeed(1), 0).is_err());
    assert!(batch_iterator(3, 0, RngSeed(1), 0).is_err());
}
