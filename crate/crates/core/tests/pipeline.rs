use std::sync::OnceLock;

use gpn_core::eval::{
    load_dataset, make_synthetic_benchmark, run_shift_sweep, save_dataset, stratified_split, train_on_split,
    Dataset, ShiftKind, SplitRatios, SplitSpec, SyntheticConfig, UncertaintyModel,
};
use gpn_core::model::{Gpn, GpnConfig};
use gpn_core::training::{load_checkpoint, save_checkpoint, TrainConfig};

const LEVELS: [f64; 4] = [0.0, 0.2, 0.5, 0.8];

struct Trained {
    ds: Dataset,
    split: SplitSpec,
    model: Gpn,
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let ds = make_synthetic_benchmark(&SyntheticConfig::new(100, 3, 16, 0.8, 4)).unwrap();
        let split = stratified_split(&ds, SplitRatios::default(), 4).unwrap();
        let cfg = TrainConfig { seed: 4, ..TrainConfig::default() };
        let fit = train_on_split(&ds, &ds.labels, &split, GpnConfig::new(16, 3), &cfg).unwrap();
        Trained { ds, split, model: fit.model }
    })
}

fn inversions(xs: &[f64], increasing: bool) -> usize {
    xs.windows(2).filter(|w| if increasing { w[1] < w[0] } else { w[1] > w[0] }).count()
}

#[test]
fn checkpoint_reload_predicts_identically() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &t.model, 4, Some(&TrainConfig::default())).unwrap();
    let (back, header) = load_checkpoint(&path).unwrap();
    assert_eq!(header.seed, 4);
    let a = t.model.predict(&t.ds).unwrap();
    let b = back.predict(&t.ds).unwrap();
    assert_eq!(a.posterior, b.posterior);
    assert_eq!(a.evidence, b.evidence);
}

#[test]
fn dataset_round_trip_keeps_predictions() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &t.ds).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(t.model.predict(&back).unwrap().posterior, t.model.predict(&t.ds).unwrap().posterior);
}

#[test]
fn epistemic_confidence_falls_with_feature_noise() {
    let t = trained();
    let recs = run_shift_sweep(&t.model, &t.ds, &t.split, ShiftKind::FeatureNormal, &LEVELS, 11).unwrap();
    let conf: Vec<f64> = recs.iter().map(|r| r.get("epist_conf").unwrap()).collect();
    assert!(inversions(&conf, false) <= 1, "{conf:?}");
    assert!(conf[3] < conf[0], "{conf:?}");
}

#[test]
fn aleatoric_entropy_rises_with_random_edges() {
    let t = trained();
    let recs = run_shift_sweep(&t.model, &t.ds, &t.split, ShiftKind::EdgesRandom, &LEVELS, 12).unwrap();
    let ent: Vec<f64> = recs.iter().map(|r| r.get("alea_entropy").unwrap()).collect();
    assert!(inversions(&ent, true) <= 1, "{ent:?}");
    assert!(ent[3] > ent[0], "{ent:?}");
}
