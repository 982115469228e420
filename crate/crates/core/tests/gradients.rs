mod support;

use josnc_core::diffmath::Tensor;
use josnc_core::embedqueue::Neighbor;
use josnc_core::labeler::{make_lsr_target, make_negative_target, make_pll_target, PllTemperatures};
use josnc_core::objective::{
    classification_loss, feature_consistency_loss, neighbor_consistency_loss, neighbor_mixture,
    self_consistency_loss, total_loss, LossParts, LossWeights,
};
use josnc_core::{ProbVec, TrainingTarget};
use support::{dirichlet, gradcheck, micro_network, random_matrix, random_queue, rng, unit_vector};

const BATCH: usize = 5;
const TOL: f64 = 1e-4;

fn inputs(seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut r = rng(seed);
    (random_matrix(&mut r, BATCH, 8), random_matrix(&mut r, BATCH, 8))
}

fn mixed_targets(seed: u64) -> Vec<TrainingTarget> {
    let mut r = rng(seed);
    let teacher = |r: &mut _| ProbVec::new(dirichlet(r, 3, 1.0)).unwrap();
    vec![
        make_lsr_target(0, 3, 0.6).unwrap(),
        make_pll_target(&teacher(&mut r), 2, PllTemperatures::default()).unwrap(),
        make_negative_target(&teacher(&mut r)),
        make_lsr_target(2, 3, 0.6).unwrap(),
        make_negative_target(&teacher(&mut r)),
    ]
}

fn check(name: &str, err: f64) {
    println!("{name}: max relative error {err:.3e}");
    assert!(err < TOL, "{name}: {err}");
}

#[test]
fn classification_smoothed_labels() {
    let (x1, x2) = inputs(1);
    let targets: Vec<_> = (0..BATCH).map(|i| make_lsr_target(i % 3, 3, 0.6).unwrap()).collect();
    check("lsr", gradcheck(&micro_network(11), &x1, &x2, &|o1, _| classification_loss(o1.probs, &targets).unwrap()));
}

#[test]
fn classification_partial_labels() {
    let (x1, x2) = inputs(2);
    let mut r = rng(20);
    let targets: Vec<_> = (0..BATCH)
        .map(|_| make_pll_target(&ProbVec::new(dirichlet(&mut r, 3, 1.0)).unwrap(), 2, PllTemperatures::default()).unwrap())
        .collect();
    check("pll", gradcheck(&micro_network(12), &x1, &x2, &|o1, _| classification_loss(o1.probs, &targets).unwrap()));
}

#[test]
fn classification_negative_labels() {
    let (x1, x2) = inputs(3);
    let targets: Vec<_> = (0..BATCH).map(|i| TrainingTarget::Negative { class: i % 3, num_classes: 3 }).collect();
    check("nl", gradcheck(&micro_network(13), &x1, &x2, &|o1, _| classification_loss(o1.probs, &targets).unwrap()));
}

#[test]
fn classification_mixed_batch() {
    let (x1, x2) = inputs(4);
    let targets = mixed_targets(40);
    check("mixed", gradcheck(&micro_network(14), &x1, &x2, &|o1, _| classification_loss(o1.probs, &targets).unwrap()));
}

#[test]
fn self_consistency() {
    let (x1, x2) = inputs(5);
    let mask = [true, false, true, true, false];
    check(
        "self-consistency",
        gradcheck(&micro_network(15), &x1, &x2, &|o1, o2| self_consistency_loss(o1.probs, o2.probs, &mask).unwrap()),
    );
}

#[test]
fn neighbor_consistency() {
    let (x1, x2) = inputs(6);
    let mut r = rng(60);
    let queue = random_queue(&mut r, 30, 4, 3);
    let mixtures: Vec<Option<ProbVec>> = (0..BATCH)
        .map(|i| {
            if i == 3 {
                return None;
            }
            let nn: Vec<Neighbor<'_, f64>> = queue.knn(&unit_vector(&mut r, 4), 4, None).unwrap();
            Some(neighbor_mixture(&nn).unwrap())
        })
        .collect();
    let mask = [true, true, false, true, true];
    check(
        "neighbor-consistency",
        gradcheck(&micro_network(16), &x1, &x2, &|o1, _| neighbor_consistency_loss(o1.probs, &mixtures, &mask).unwrap()),
    );
}

#[test]
fn feature_consistency() {
    let (x1, x2) = inputs(7);
    let mut r = rng(70);
    let pool_rows: Vec<f64> = (0..12).flat_map(|_| unit_vector(&mut r, 4)).collect();
    let pool = Tensor::matrix(12, 4, pool_rows).unwrap();
    let positives = [0usize, 1, 2, 3, 4];
    check(
        "feature-consistency",
        gradcheck(&micro_network(17), &x1, &x2, &|o1, _| {
            feature_consistency_loss(o1.embeddings, &pool, &positives, 0.1).unwrap()
        }),
    );
}

#[test]
fn joint_objective() {
    let (x1, x2) = inputs(8);
    let targets = mixed_targets(80);
    let mut r = rng(81);
    let queue = random_queue(&mut r, 20, 4, 3);
    let mixtures: Vec<Option<ProbVec>> =
        (0..BATCH).map(|_| Some(neighbor_mixture(&queue.knn(&unit_vector(&mut r, 4), 3, None).unwrap()).unwrap())).collect();
    let pool = Tensor::matrix(20, 4, queue.iter().flat_map(|e| e.key_embedding.clone()).collect()).unwrap();
    let mask = [true, true, false, true, false];
    let weights = LossWeights { alpha: 0.3, beta: 0.1, gamma: 0.5 };
    check(
        "joint",
        gradcheck(&micro_network(18), &x1, &x2, &|o1, o2| {
            let parts = LossParts {
                cls: classification_loss(o1.probs, &targets).unwrap(),
                con_s: Some(self_consistency_loss(o1.probs, o2.probs, &mask).unwrap()),
                con_n: Some(neighbor_consistency_loss(o1.probs, &mixtures, &mask).unwrap()),
                con_f: Some(feature_consistency_loss(o1.embeddings, &pool, &[0, 5, 9, 2, 7], 0.1).unwrap()),
            };
            total_loss(parts, weights).unwrap().0
        }),
    );
}
