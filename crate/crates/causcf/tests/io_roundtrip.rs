use causcf::io::{dataset_manifest, load_dataset, save_dataset, sha256_file, LogFormat};
use causcf_core::data::Dataset;
use causcf_core::synth::{generate_world, simulate_log, SynthConfig};

fn world_log() -> Dataset {
    let cfg = SynthConfig {
        n_users: 120,
        n_items: 50,
        max_position: 20,
        rho: 0.2,
        segment_shift: 0.4,
        ..SynthConfig::default()
    };
    let world = generate_world(&cfg).unwrap();
    simulate_log(&world, 600).unwrap()
}

/// Records keyed by external ids. Loading renumbers users and items in
/// order of first appearance, so internal indices are not comparable.
fn by_id(ds: &Dataset) -> Vec<String> {
    ds.records()
        .iter()
        .map(|r| {
            format!(
                "{:?} {:?} {} {} {:?} {:?} {:?} {:?} {:?} {:?}",
                ds.users().id(r.user),
                ds.items().id(r.item),
                r.treatment,
                r.outcome,
                r.position,
                r.leave_position,
                r.session,
                r.timestamp,
                ds.user_features(r.user),
                ds.item_features(r.item),
            )
        })
        .collect()
}

#[test]
fn csv_and_jsonl_reproduce_every_record() {
    let ds = world_log();
    assert!(ds.len() >= 10_000, "only {} records", ds.len());
    let dir = tempfile::tempdir().unwrap();
    for (name, format) in [("log.csv", LogFormat::Csv), ("log.jsonl", LogFormat::Jsonl)] {
        let path = dir.path().join(name);
        save_dataset(&ds, &path, None).unwrap();
        assert_eq!(LogFormat::from_path(&path), format);
        let back = load_dataset(&path, None).unwrap();
        assert_eq!(back.schema(), ds.schema());
        assert_eq!(by_id(&back), by_id(&ds), "{name}");
        // a second save of the reloaded log is byte-identical
        let again = dir.path().join(format!("again.{}", format.extension()));
        save_dataset(&back, &again, Some(format)).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }
}

#[test]
fn manifest_describes_the_file() {
    let ds = world_log();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    save_dataset(&ds, &path, None).unwrap();
    let m = dataset_manifest(&ds, &path, LogFormat::Csv).unwrap();
    assert_eq!(m.records, ds.len());
    assert_eq!((m.n_users, m.n_items), (ds.n_users(), ds.n_items()));
    assert_eq!(m.sha256, sha256_file(&path).unwrap());
}

#[test]
fn malformed_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "user_id,item_id\nu0,i0\n").unwrap();
    assert!(load_dataset(&bad, None).is_err());
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"not\": \"a header\"}\n").unwrap();
    assert!(load_dataset(&bad, None).is_err());
    assert!(load_dataset(&dir.path().join("missing.csv"), None).is_err());
}
