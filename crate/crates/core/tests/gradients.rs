mod common;

use common::{check, loss_gradient_reports, lstm_report, random, GRAD_TOLERANCE};
use dcrn_core::autodiff::{Graph, NodeId, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Checks `f(a, b)` summed through a fixed random projection, so every
/// output element carries a distinct weight.
fn binary(name: &str, shapes: [(usize, usize); 2], positive: bool, f: impl Fn(&mut Graph, NodeId, NodeId) -> NodeId) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64);
    let mut s = ParamStore::new("p");
    let make = |rng: &mut ChaCha8Rng, (r, c): (usize, usize)| {
        let t = random(rng, r, c, 1.0);
        if positive {
            t.map(|v| v.abs() + 0.2)
        } else {
            t
        }
    };
    let a = s.insert("a", make(&mut rng, shapes[0]));
    let b = s.insert("b", make(&mut rng, shapes[1]));
    let probe_seed = name.len() as u64 + 100;
    let report = check(&s, |g, s| {
        let (a, b) = (g.param(s, a), g.param(s, b));
        let y = f(g, a, b);
        let shape = g.value(y).shape().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
        let probe = random(&mut rng, shape[0], shape[1], 1.0);
        let weighted = g.mul_const(y, probe).unwrap();
        g.sum(weighted)
    });
    assert!(report.max_rel_error < GRAD_TOLERANCE, "{name}: {report:?}");
}

fn unary(name: &str, positive: bool, f: impl Fn(&mut Graph, NodeId) -> NodeId) {
    binary(name, [(3, 4), (1, 1)], positive, |g, a, _| f(g, a));
}

#[test]
fn elementwise_ops() {
    unary("sigmoid", false, |g, a| g.sigmoid(a));
    unary("tanh", false, |g, a| g.tanh(a));
    unary("relu", false, |g, a| g.relu(a));
    unary("abs", false, |g, a| g.abs(a));
    unary("exp", false, |g, a| g.exp(a));
    unary("log", true, |g, a| g.log(a).unwrap());
    unary("square", false, |g, a| g.square(a));
    unary("clamp", false, |g, a| g.clamp(a, -0.5, 0.5));
    unary("scale", false, |g, a| g.scale(a, -2.5));
    unary("add_scalar", false, |g, a| g.add_scalar(a, 0.7));
}

#[test]
fn binary_ops() {
    binary("matmul", [(3, 4), (4, 2)], false, |g, a, b| g.matmul(a, b).unwrap());
    binary("add", [(3, 4), (3, 4)], false, |g, a, b| g.add(a, b).unwrap());
    binary("sub", [(3, 4), (3, 4)], false, |g, a, b| g.sub(a, b).unwrap());
    binary("mul", [(3, 4), (3, 4)], false, |g, a, b| g.mul(a, b).unwrap());
    binary("add_row", [(3, 4), (1, 4)], false, |g, a, b| g.add_row(a, b).unwrap());
    binary("concat", [(3, 4), (3, 2)], false, |g, a, b| g.concat(&[a, b, a]).unwrap());
}

#[test]
fn shape_ops_and_reductions() {
    unary("slice_cols", false, |g, a| g.slice_cols(a, 1, 3).unwrap());
    unary("transpose", false, |g, a| g.transpose(a));
    unary("row_mean", false, |g, a| g.row_mean(a));
    unary("sum", false, |g, a| g.sum(a));
    unary("mean", false, |g, a| g.mean(a));
    unary("rbf", false, |g, a| {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        g.weighted_rbf_sum(a, random(&mut rng, 3, 3, 1.0), 0.8).unwrap()
    });
}

#[test]
fn lstm_cell_unrolled_twice() {
    let report = lstm_report();
    assert!(report.max_rel_error < GRAD_TOLERANCE, "{report:?}");
}

#[test]
fn loss_components_and_full_objective() {
    for (name, report) in loss_gradient_reports() {
        assert!(report.max_rel_error < GRAD_TOLERANCE, "{name}: {report:?}");
        assert!(report.coords_checked > 0);
    }
}

#[test]
fn detached_inputs_receive_nothing() {
    let mut s = ParamStore::new("p");
    let a = s.insert("a", Tensor::row(vec![0.3, -1.2]));
    let mut g = Graph::new();
    let x = g.param(&s, a);
    let d = g.detach(x);
    let y = g.square(d);
    let y = g.sum(y);
    let grads = g.backward(y).unwrap().for_store(&s);
    assert!(grads.get(a).values().iter().all(|&v| v == 0.0));
}
