use std::fs;
use std::path::Path;

use coldbundle::checkpoint::{checkpoint_hash, load_checkpoint, round_to_stored, save_checkpoint, MANIFEST_FILE};
use coldbundle::config::{Config, SplitName};
use coldbundle::dataset::load_dataset;
use coldbundle::model::init_embeddings;
use coldbundle::pipeline::{mine_relations, prepare};
use coldbundle::run::{cmd_eval, cmd_mine, cmd_synth, cmd_train, EvalRequest, RelationSource, RunManifest};
use coldbundle::synthetic::PlantedSpec;
use coldbundle::Error;

fn small_spec() -> PlantedSpec {
    PlantedSpec {
        communities: 3,
        users_per_community: 10,
        items_per_community: 12,
        warm_bundles_per_community: 5,
        cold_bundles_per_community: 3,
        items_per_bundle: 5,
        items_per_user: 6,
        warm_bundles_per_user: 3,
        ..PlantedSpec::default()
    }
}

fn config() -> Config {
    let mut c = Config::default();
    c.dim = 8;
    c.min_item_freq = 1;
    c.epochs = 3;
    c.batch_size = 32;
    c.lr = 0.01;
    c
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ds = cmd_synth(&small_spec(), 3, &data).unwrap();
    let cfg = config();
    let (_, rel) = mine_relations(&ds, &cfg).unwrap();
    let prep = prepare(&ds, &rel, &cfg).unwrap();
    let state = init_embeddings(&ds.spaces, &prep.graphs.warm_bundles, 8, 1).unwrap();
    let ck = dir.path().join("ck");
    let h = save_checkpoint(&ck, &state, &ds.spaces, &cfg, &rel).unwrap();
    assert_eq!(h, checkpoint_hash(&ck).unwrap());

    let back = load_checkpoint(&ck).unwrap();
    assert_eq!(back.state, round_to_stored(&state));
    assert_eq!(back.config, cfg);
    assert_eq!(back.relations().unwrap().to_tsv(), rel.to_tsv());
    assert_eq!(back.manifest.coalesce_scale, 1.0 / 3.0);
    back.manifest.check_dataset(&ds, &prep.graphs.warm_bundles).unwrap();

    // truncated table
    let f = ck.join("item_warm.f32");
    let bytes = fs::read(&f).unwrap();
    fs::write(&f, &bytes[..bytes.len() - 4]).unwrap();
    let e = load_checkpoint(&ck).unwrap_err();
    assert!(matches!(e, Error::Mismatch(_)), "{e}");
    assert_eq!(e.exit_code(), 3);
    fs::write(&f, &bytes).unwrap();

    // manifest claiming a different user count
    let m = fs::read_to_string(ck.join(MANIFEST_FILE)).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&m).unwrap();
    v["n_users"] = serde_json::json!(31);
    fs::write(ck.join(MANIFEST_FILE), v.to_string()).unwrap();
    let e = load_checkpoint(&ck).unwrap_err();
    assert_eq!(e.exit_code(), 3, "{e}");
}

#[test]
fn eval_rejects_a_checkpoint_for_other_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    cmd_synth(&small_spec(), 1, &a).unwrap();
    let other = PlantedSpec {
        users_per_community: 11,
        ..small_spec()
    };
    cmd_synth(&other, 1, &b).unwrap();
    let ck = dir.path().join("ck");
    let mut cfg = config();
    cfg.epochs = 0;
    cmd_train(&a, &cfg, RelationSource::Inline, &ck).unwrap();
    let e = cmd_eval(&b, &ck, &EvalRequest::default(), None).unwrap_err();
    assert_eq!(e.exit_code(), 3);
    assert!(e.to_string().contains("users"), "{e}");
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn mine_train_eval_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_synth(&small_spec(), 5, &data).unwrap();
    let cfg = config();
    let m1 = dir.path().join("m1");
    let m2 = dir.path().join("m2");
    let run = cmd_mine(&data, &cfg, &m1).unwrap();
    cmd_mine(&data, &cfg, &m2).unwrap();
    for f in ["relations.tsv", "popularity.tsv", "thresholds.json", "run.json"] {
        assert!(m1.join(f).is_file(), "{f}");
    }
    for f in ["relations.tsv", "popularity.tsv", "thresholds.json"] {
        assert_eq!(read(&m1.join(f)), read(&m2.join(f)), "{f}");
    }
    assert_eq!(run.config().unwrap(), cfg);
    let on_disk: RunManifest = serde_json::from_slice(&read(&m1.join("run.json"))).unwrap();
    assert_eq!(on_disk.config().unwrap().hash(), cfg.hash());
    assert_eq!(on_disk.inputs.len(), 6);

    let ck = dir.path().join("ck");
    let summary = cmd_train(&data, &cfg, RelationSource::Mined(m1.clone()), &ck).unwrap();
    let log = fs::read_to_string(ck.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), summary.epochs.len());
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["loss"]["total"].is_number());
    }
    assert!(ck.join("best.json").is_file());

    let req = EvalRequest {
        ks: vec![20],
        splits: vec![SplitName::Cold],
        ..EvalRequest::default()
    };
    let out = dir.path().join("report.json");
    let r = cmd_eval(&data, &ck, &req, Some(&out)).unwrap();
    assert_eq!(r.cold.as_ref().unwrap().len(), 1);
    assert!(r.warm.is_none() && r.all.is_none());
    assert_eq!(r.checkpoint_hash, summary.checkpoint_hash);
    let v: serde_json::Value = serde_json::from_slice(&read(&out)).unwrap();
    assert!(v["cold"]["20"]["recall"].is_number());
    assert!(dir.path().join("report.json.run.json").is_file());
}

#[test]
fn train_without_mined_dir_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_synth(&small_spec(), 5, &data).unwrap();
    let e = cmd_train(&data, &config(), RelationSource::Mined(dir.path().join("nope")), &dir.path().join("ck")).unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn missing_dataset_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_synth(&small_spec(), 5, &data).unwrap();
    fs::remove_file(data.join("bundle_item.txt")).unwrap();
    let e = load_dataset(&data).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    assert!(e.to_string().contains("bundle_item.txt"));
}
