mod common;

use common::{graph, ref_cell};
use coop_mtsp::costmodel::{build_cost_matrix, pair_cost, CostOracle, MatrixSource, PairQuery};
use coop_mtsp::graph::{apply_joint_action, Action, JointAction};
use coop_mtsp::predictor::{
    encode_query, evaluate_predictor, sample_predictor_dataset, train_predictor, PredictorArch, PredictorMeta,
    PredictorModel, PredictorTrainConfig, QUERY_FEATURES,
};

fn quick() -> PredictorTrainConfig {
    PredictorTrainConfig { epochs: 4, batch: 64, split: 0.2, ..PredictorTrainConfig::default() }
}

#[test]
fn dataset_is_deterministic_and_mixed() {
    let o = CostOracle::default();
    let a = sample_predictor_dataset(2000, &o, 5).unwrap();
    assert_eq!(a, sample_predictor_dataset(2000, &o, 5).unwrap());
    assert_ne!(a, sample_predictor_dataset(2000, &o, 6).unwrap());
    let infeasible = a.iter().filter(|s| !s.feasible()).count() as f64 / a.len() as f64;
    assert!(infeasible > 0.02 && infeasible < 0.5, "infeasible share {infeasible}");
    for s in &a {
        let x = encode_query(&s.query);
        assert_eq!(x.len(), QUERY_FEATURES);
        assert!(x.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn labels_agree_with_the_reference_cell() {
    let o = CostOracle::default();
    let g = graph(6, 12);
    for i in 0..6 {
        for j in 0..6 {
            if i == j {
                continue;
            }
            let e = o.evaluate_pair(&PairQuery::from_graph(&g, i, j));
            let (mv, tf, ok) = ref_cell(&g, i, j, &o);
            assert_eq!(e.feasible(), ok);
            if ok {
                assert!((e.c_mv - mv).abs() < 1e-9 && (e.c_tf - tf).abs() < 1e-9);
            }
            assert_eq!(e.cell(), pair_cost(&g, Action::Task(i), Action::Task(j), &o).unwrap());
        }
    }
}

#[test]
fn short_training_lowers_the_loss() {
    let o = CostOracle::default();
    let data = sample_predictor_dataset(3000, &o, 1).unwrap();
    let run = train_predictor(&data, PredictorArch::small(), o, &quick(), |_| {}).unwrap();
    assert_eq!(run.curve.len(), 4);
    assert!(run.curve[3].train_loss < run.curve[0].train_loss, "{:?}", run.curve);
    let share = data[2400..].iter().filter(|s| s.feasible()).count() as f64 / 600.0;
    assert!(run.held_out.mask_accuracy >= share.min(1.0 - share) - 1e-12);
    assert_eq!(run.held_out, evaluate_predictor(&run.model, &data[2400..]).unwrap());
}

#[test]
fn predicted_matrices_keep_structural_rules() {
    let o = CostOracle::default();
    let model = PredictorModel::new(PredictorArch::small(), o, 3).unwrap();
    let g0 = graph(6, 30);
    let exact = build_cost_matrix(&g0, &o);
    let c = (0..exact.cells().len()).find(|&c| exact.cells()[c].feasible).unwrap();
    let g = apply_joint_action(&g0, JointAction::from_cell(c, 6).unwrap(), &exact.cells()[c]).unwrap();
    let predicted = model.cost_matrix(&g).unwrap();
    let truth = build_cost_matrix(&g, &o);
    let m = 7;
    for i in 0..m {
        for j in 0..m {
            let structural = i == j || i == 6 || j == 6 || g.is_done(i) || g.is_done(j);
            if structural {
                assert_eq!(predicted.get(i, j), truth.get(i, j), "({i}, {j})");
            }
        }
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = CostOracle::default();
    let model = PredictorModel::new(PredictorArch::small(), o, 9).unwrap();
    let meta = PredictorMeta {
        arch: model.arch.clone(),
        oracle: o,
        dataset_seed: 1,
        dataset_size: 0,
        metrics: Default::default(),
    };
    model.save(dir.path().join("pred"), &meta).unwrap();
    let (back, m) = PredictorModel::load(dir.path().join("pred")).unwrap();
    assert_eq!(m, meta);
    let g = graph(10, 2);
    assert_eq!(model.cost_matrix(&g).unwrap(), back.cost_matrix(&g).unwrap());
    assert!(PredictorModel::load(dir.path().join("nothing")).is_err());
}
