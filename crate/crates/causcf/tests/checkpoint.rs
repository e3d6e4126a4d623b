use causcf::checkpoint::Checkpoint;
use causcf::config::{Encoder, ModelSettings};
use causcf_core::model::{init_factors, train};
use causcf_core::synth::{generate_world, simulate_log, SynthConfig};

fn trained(encoder: Encoder) -> (causcf_core::data::Dataset, Checkpoint) {
    let world = generate_world(&SynthConfig {
        n_users: 60,
        n_items: 30,
        max_position: 15,
        rho: 0.2,
        ..SynthConfig::default()
    })
    .unwrap();
    let ds = simulate_log(&world, 400).unwrap();
    let model = ModelSettings {
        k: 3,
        epochs: 3,
        encoder,
        ..ModelSettings::default()
    };
    let cfg = model.to_core();
    let mut fs = init_factors(&cfg, &ds).unwrap();
    train(&mut fs, &ds, &cfg).unwrap();
    let ck = Checkpoint::new(model, &ds, fs);
    (ds, ck)
}

#[test]
fn save_then_load_predicts_bit_exactly() {
    for encoder in [Encoder::Id, Encoder::Features] {
        let (ds, ck) = trained(encoder);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        back.check_dataset(&ds).unwrap();
        for u in 0..ds.n_users() as u32 {
            for i in 0..ds.n_items() as u32 {
                for t in 0..2u8 {
                    let a = ck.factors.predict_score(u, i, t).unwrap();
                    let b = back.factors.predict_score(u, i, t).unwrap();
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }
}

#[test]
fn edited_checkpoints_fail_the_checksum() {
    let (_, ck) = trained(Encoder::Id);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.json");
    ck.save(&path).unwrap();
    let mut json: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    json["body"]["k"] = serde_json::json!(4);
    std::fs::write(&path, serde_json::to_vec(&json).unwrap()).unwrap();
    let err = Checkpoint::load(&path).unwrap_err();
    assert!(err.to_string().contains("checksum mismatch"), "{err}");
}

#[test]
fn a_different_log_is_a_schema_mismatch() {
    let (_, ck) = trained(Encoder::Id);
    let other = simulate_log(
        &generate_world(&SynthConfig {
            n_users: 40,
            n_items: 30,
            max_position: 15,
            ..SynthConfig::default()
        })
        .unwrap(),
        100,
    )
    .unwrap();
    let err = ck.check_dataset(&other).unwrap_err();
    assert!(err.to_string().contains("schema mismatch"), "{err}");
}
