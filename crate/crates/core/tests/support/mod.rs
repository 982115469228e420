//! Independent oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use josnc_core::diffmath::{Tape, Tensor, Var};
use josnc_core::embedqueue::{EmbedQueue, QueueEntry};
use josnc_core::network::{ForwardVars, ModelConfig, Network};
use josnc_core::ProbVec;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Symmetric Dirichlet(α) draw through normalized Gamma variates.
pub fn dirichlet(rng: &mut impl Rng, c: usize, alpha: f64) -> Vec<f64> {
    let g = Gamma::new(alpha, 1.0).unwrap();
    let mut v: Vec<f64> = (0..c).map(|_| g.sample(rng).max(1e-300)).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

pub fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// Random 3-class, 8-dim network with one hidden layer and a 4-dim embedding.
pub fn micro_network(seed: u64) -> Network<f64> {
    Network::new(8, 3, &ModelConfig { hidden: vec![6], embed_dim: 4 }, &mut rng(seed)).unwrap()
}

/// Loss as a function of the two forward passes (views 1 and 2).
pub type LossFn<'a> = dyn for<'t> Fn(ForwardVars<'t, f64>, ForwardVars<'t, f64>) -> Var<'t, f64> + 'a;

fn evaluate(net: &Network<f64>, x1: &Tensor<f64>, x2: &Tensor<f64>, loss: &LossFn<'_>, grads: bool) -> (f64, Vec<Vec<f64>>) {
    let tape = Tape::new();
    let bound = net.bind(&tape);
    let o1 = bound.forward(tape.constant(x1.clone())).unwrap();
    let o2 = bound.forward(tape.constant(x2.clone())).unwrap();
    let l = loss(o1, o2);
    let value = l.item();
    if !grads {
        return (value, Vec::new());
    }
    let g = tape.backward(l).unwrap();
    let per_param = bound
        .params()
        .iter()
        .map(|&p| g.get(p).map_or_else(|| vec![0.0; p.value().numel()], |t| t.data().to_vec()))
        .collect();
    (value, per_param)
}

/// Largest relative error between analytic and central-difference gradients
/// over every parameter entry. Entries where both are below `1e-8` in
/// magnitude are compared absolutely instead.
pub fn gradcheck(net: &Network<f64>, x1: &Tensor<f64>, x2: &Tensor<f64>, loss: &LossFn<'_>) -> f64 {
    let (_, analytic) = evaluate(net, x1, x2, loss, true);
    let mut worst: f64 = 0.0;
    let n_params = net.named_params().len();
    for p in 0..n_params {
        for j in 0..analytic[p].len() {
            let mut plus = net.clone();
            plus.params_mut()[p].data_mut()[j] += FD_STEP;
            let mut minus = net.clone();
            minus.params_mut()[p].data_mut()[j] -= FD_STEP;
            let numeric = (evaluate(&plus, x1, x2, loss, false).0 - evaluate(&minus, x1, x2, loss, false).0) / (2.0 * FD_STEP);
            let a = analytic[p][j];
            let scale = a.abs().max(numeric.abs());
            let err = if scale < 1e-8 { (a - numeric).abs() } else { (a - numeric).abs() / scale };
            worst = worst.max(err);
        }
    }
    worst
}

/// Queue of `n` random unit keys with random labels and predictions.
pub fn random_queue(rng: &mut impl Rng, n: usize, dim: usize, classes: usize) -> EmbedQueue<f64> {
    let mut q = EmbedQueue::new(n, dim);
    let entries = (0..n as u64)
        .map(|id| QueueEntry {
            key_embedding: unit_vector(rng, dim),
            observed_label: rng.random_range(0..classes),
            p_clean_at_enqueue: rng.random(),
            pred_at_enqueue: ProbVec::new(dirichlet(rng, classes, 1.0)).unwrap(),
            sample_id: id,
        })
        .collect();
    q.enqueue(entries).unwrap();
    q
}

/// Exhaustive scan: sort every non-excluded entry by similarity, newest first on ties.
pub fn brute_force_knn(queue: &EmbedQueue<f64>, query: &[f64], k: usize, exclude: Option<u64>) -> Option<Vec<(u64, f64)>> {
    let mut all: Vec<(usize, u64, f64)> = queue
        .iter()
        .enumerate()
        .filter(|(_, e)| Some(e.sample_id) != exclude)
        .map(|(pos, e)| (pos, e.sample_id, e.key_embedding.iter().zip(query).map(|(a, b)| a * b).sum()))
        .collect();
    if all.len() < k {
        return None;
    }
    all.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(b.0.cmp(&a.0)));
    Some(all.into_iter().take(k).map(|(_, id, s)| (id, s)).collect())
}

/// `|τ^t − m|` for an EMA with constant target `m`.
pub fn ema_gap(tau0: f64, m: f64, omega: f64, t: i32) -> f64 {
    omega.powi(t) * (tau0 - m).abs()
}
