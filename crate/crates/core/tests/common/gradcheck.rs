use std::sync::Arc;

use enspost::nnet::{
    CompositeLossConfig, Groups, LayerSpec, Loss, Mode, Neighbors, Network, NetworkSpec, Tape, Tensor, SMOOTHING_EPS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{fd_gradient, vec_rel_err};

const H: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerCase {
    SageConv,
    Dense,
    BatchNorm,
    Relu,
    Dropout,
    GraphSage,
}

impl LayerCase {
    pub const ALL: [LayerCase; 6] = [
        LayerCase::SageConv,
        LayerCase::Dense,
        LayerCase::BatchNorm,
        LayerCase::Relu,
        LayerCase::Dropout,
        LayerCase::GraphSage,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossCase {
    Crps,
    Energy,
    Variogram,
    Composite,
    NonNegative,
}

impl LossCase {
    pub const ALL: [LossCase; 5] = [
        LossCase::Crps,
        LossCase::Energy,
        LossCase::Variogram,
        LossCase::Composite,
        LossCase::NonNegative,
    ];
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn random_tensor<R: Rng>(rng: &mut R, r: usize, c: usize) -> Tensor {
    Tensor::from_fn(r, c, |_, _| normal(rng))
}

fn random_graph<R: Rng>(rng: &mut R, n: usize) -> Neighbors {
    Arc::new(
        (0..n)
            .map(|i| (0..n).filter(|&j| j != i && rng.random_bool(0.5)).collect())
            .collect(),
    )
}

fn spec(case: LayerCase, f: usize, h: usize, k: usize) -> NetworkSpec {
    use LayerSpec::*;
    let layers = match case {
        LayerCase::SageConv => vec![SageConv { input: f, output: k }],
        LayerCase::Dense => vec![Dense { input: f, output: k }],
        LayerCase::BatchNorm => vec![Dense { input: f, output: k }, BatchNorm { dim: k }],
        LayerCase::Relu => vec![Dense { input: f, output: h }, Relu, Dense { input: h, output: k }],
        LayerCase::Dropout => vec![Dense { input: f, output: h }, Dropout { rate: 0.3 }, Dense { input: h, output: k }],
        LayerCase::GraphSage => return NetworkSpec::graphsage(f, &[h], k, 0.25),
    };
    NetworkSpec {
        layers,
        output_members: k,
    }
}

/// Linear scalar head `sum(C * out)`, smooth in the network output.
fn head(tape: &mut Tape, out: enspost::nnet::Var, c: &Tensor) -> enspost::nnet::Var {
    let (n, k) = c.shape();
    let cv = tape.leaf(c.clone());
    let weighted = tape.mul(out, cv).unwrap();
    let left = tape.leaf(Tensor::filled(1, n, 1.0));
    let right = tape.leaf(Tensor::filled(k, 1, 1.0));
    let row = tape.matmul(left, weighted).unwrap();
    tape.matmul(row, right).unwrap()
}

/// Relative error between taped and finite-difference parameter gradients
/// of one random instance.
pub fn layer_instance(case: LayerCase, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..7);
    let f = rng.random_range(1..5);
    let h = rng.random_range(2..7);
    let k = rng.random_range(1..5);
    let features = random_tensor(&mut rng, n, f);
    let neighbors = random_graph(&mut rng, n);
    let c = random_tensor(&mut rng, n, k);
    let mut net = Network::init(spec(case, f, h, k), seed).unwrap();
    for p in net.params_mut() {
        for v in p.data_mut() {
            *v += 0.5 * normal(&mut rng);
        }
    }
    let mask_seed = rng.random::<u64>();

    let eval = |net: &Network| -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let mut mask = ChaCha8Rng::seed_from_u64(mask_seed);
        let fw = net.forward(&mut tape, features.clone(), &neighbors, Mode::Train, &mut mask).unwrap();
        let loss = head(&mut tape, fw.output, &c);
        let grads = tape.backward(loss).unwrap();
        let g = fw
            .params
            .iter()
            .flat_map(|p| grads.get(*p).unwrap().data().to_vec())
            .collect();
        (tape.value(loss).unwrap().item(), g)
    };
    let (_, analytic) = eval(&net);
    let flat: Vec<f64> = net.params().iter().flat_map(|p| p.data().to_vec()).collect();
    let shapes: Vec<usize> = net.params().iter().map(|p| p.data().len()).collect();
    let mut probe = net.clone();
    let numeric = fd_gradient(
        &mut |x: &[f64]| {
            let mut off = 0;
            for (p, len) in probe.params_mut().iter_mut().zip(&shapes) {
                p.data_mut().copy_from_slice(&x[off..off + len]);
                off += len;
            }
            eval(&probe).0
        },
        &flat,
        H,
    );
    vec_rel_err(&analytic, &numeric)
}

/// Relative error between taped and finite-difference input gradients of
/// a loss on one random batch of graphs.
pub fn loss_instance(case: LossCase, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graphs = rng.random_range(1..4);
    let d = rng.random_range(1..5);
    let k = rng.random_range(2..7);
    let n = graphs * d;
    let x = random_tensor(&mut rng, n, k);
    let y: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let groups: Groups = Arc::new((0..graphs).map(|g| (g * d, d)).collect());
    let composite = Loss::Composite(CompositeLossConfig::new(0.6, 0.3, 1.0).unwrap());

    let eval = |x: &Tensor| -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let loss = match case {
            LossCase::Crps => tape.crps_loss(xv, &y).unwrap(),
            LossCase::Energy => tape.energy_loss(xv, &y, groups.clone(), SMOOTHING_EPS).unwrap(),
            LossCase::Variogram => tape.variogram_loss(xv, &y, groups.clone(), 0.5, SMOOTHING_EPS).unwrap(),
            LossCase::Composite => composite.record(&mut tape, xv, &y, &groups).unwrap(),
            LossCase::NonNegative => tape.negative_part(xv).unwrap(),
        };
        let grads = tape.backward(loss).unwrap();
        (tape.value(loss).unwrap().item(), grads.get(xv).unwrap().data().to_vec())
    };
    let (_, analytic) = eval(&x);
    let numeric = fd_gradient(
        &mut |v: &[f64]| eval(&Tensor::from_vec(n, k, v.to_vec()).unwrap()).0,
        x.data(),
        H,
    );
    vec_rel_err(&analytic, &numeric)
}
