//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use igan::tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

/// Reduce any output to a scalar through fixed pseudo-random weights, so
/// that no gradient component is hidden by symmetry (a plain sum would zero
/// out every batchnorm input gradient).
pub fn project(graph: &mut Graph, out: Var) -> Var {
    let shape = graph.shape(out).to_vec();
    if shape.iter().product::<usize>() == 1 {
        return out;
    }
    let w = uniform(&mut rng(0x5eed), &shape, -1.0, 1.0);
    let wv = graph.constant(w);
    let prod = graph.mul(out, wv).unwrap();
    graph.sum(prod)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Norm-wise relative error `|a - n| / max(|a|, |n|)`; zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Worst relative error between backpropagated gradients and central finite
/// differences, over every input of `build`.
pub fn gradient_error<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |values: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars);
        let s = project(&mut g, out);
        g.value(s).data()[0]
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &vars);
    let loss = project(&mut g, out);
    g.backward(loss).unwrap();

    let mut worst = 0.0_f64;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = g.grad(vars[i]).unwrap().data().to_vec();
        let mut numeric = vec![0.0; input.len()];
        let mut values = inputs.to_vec();
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = input.data()[j];
            values[i].data_mut()[j] = orig + FD_STEP;
            let up = eval(&values);
            values[i].data_mut()[j] = orig - FD_STEP;
            let down = eval(&values);
            values[i].data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// One primitive gradient check on shapes drawn from `seed`.
pub type PrimitiveCase = fn(u64) -> f64;

fn small(r: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    r.random_range(lo..=hi)
}

fn random_shape(r: &mut ChaCha8Rng) -> Vec<usize> {
    let rank = small(r, 1, 3);
    (0..rank).map(|_| small(r, 1, 4)).collect()
}

fn unary_case(seed: u64, lo: f64, hi: f64, op: fn(&mut Graph, Var) -> Var) -> f64 {
    let mut r = rng(seed);
    let shape = random_shape(&mut r);
    let x = uniform(&mut r, &shape, lo, hi);
    gradient_error(&[x], |g, v| op(g, v[0]))
}

fn binary_case(seed: u64, op: fn(&mut Graph, Var, Var) -> igan::Result<Var>) -> f64 {
    let mut r = rng(seed);
    let shape = random_shape(&mut r);
    let a = uniform(&mut r, &shape, -2.0, 2.0);
    let b = uniform(&mut r, &shape, -2.0, 2.0);
    gradient_error(&[a, b], |g, v| op(g, v[0], v[1]).unwrap())
}

fn conv_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (b, ci, co) = (small(&mut r, 1, 2), small(&mut r, 1, 3), small(&mut r, 1, 3));
    let (k, stride, pad) = (small(&mut r, 1, 3), small(&mut r, 1, 2), small(&mut r, 0, 1));
    // Input extents that the window tiles exactly.
    let extent = |r: &mut ChaCha8Rng| loop {
        let out = small(r, 1, 3);
        if let Some(e) = ((out - 1) * stride + k).checked_sub(2 * pad).filter(|&e| e > 0) {
            return e;
        }
    };
    let (h, w) = (extent(&mut r), extent(&mut r));
    let x = uniform(&mut r, &[b, ci, h, w], -2.0, 2.0);
    let kern = uniform(&mut r, &[co, ci, k, k], -2.0, 2.0);
    gradient_error(&[x, kern], |g, v| g.conv2d(v[0], v[1], stride, pad).unwrap())
}

fn conv_transposed_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (b, ci, co) = (small(&mut r, 1, 2), small(&mut r, 1, 3), small(&mut r, 1, 3));
    let stride = small(&mut r, 1, 2);
    // k = stride + 2 * pad keeps the output extent an exact multiple.
    let pad = small(&mut r, 0, 1);
    let k = stride + 2 * pad;
    let (h, w) = (small(&mut r, 1, 3), small(&mut r, 1, 3));
    let x = uniform(&mut r, &[b, ci, h, w], -2.0, 2.0);
    let kern = uniform(&mut r, &[ci, co, k, k], -2.0, 2.0);
    gradient_error(&[x, kern], |g, v| g.conv2d_transposed(v[0], v[1], stride, pad).unwrap())
}

fn batchnorm_case(seed: u64) -> f64 {
    use igan::tensor::{BatchNormMode, RunningStats};
    let mut r = rng(seed);
    let c = small(&mut r, 1, 3);
    let shape = if r.random_bool(0.5) {
        vec![small(&mut r, 3, 6), c]
    } else {
        vec![small(&mut r, 2, 3), c, small(&mut r, 2, 3), small(&mut r, 1, 3)]
    };
    let mode = if r.random_bool(0.75) {
        BatchNormMode::Train
    } else {
        BatchNormMode::Eval
    };
    let x = uniform(&mut r, &shape, -2.0, 2.0);
    let gamma = uniform(&mut r, &[c], 0.5, 2.0);
    let beta = uniform(&mut r, &[c], -1.0, 1.0);
    let stats = RunningStats {
        mean: uniform(&mut r, &[c], -0.5, 0.5).into_data(),
        var: uniform(&mut r, &[c], 0.5, 2.0).into_data(),
    };
    gradient_error(&[x, gamma, beta], |g, v| {
        let mut s = stats.clone();
        g.batchnorm(v[0], v[1], v[2], &mut s, mode).unwrap()
    })
}

/// Every differentiable primitive with a generator of random cases.
pub fn primitive_cases() -> Vec<(&'static str, PrimitiveCase)> {
    vec![
        ("matmul", |s| {
            let mut r = rng(s);
            let (m, k, n) = (small(&mut r, 1, 5), small(&mut r, 1, 5), small(&mut r, 1, 5));
            let a = uniform(&mut r, &[m, k], -2.0, 2.0);
            let b = uniform(&mut r, &[k, n], -2.0, 2.0);
            gradient_error(&[a, b], |g, v| g.matmul(v[0], v[1]).unwrap())
        }),
        ("add_bias", |s| {
            let mut r = rng(s);
            let c = small(&mut r, 1, 4);
            let shape = if r.random_bool(0.5) {
                vec![small(&mut r, 1, 4), c]
            } else {
                vec![small(&mut r, 1, 3), c, small(&mut r, 1, 3), small(&mut r, 1, 3)]
            };
            let x = uniform(&mut r, &shape, -2.0, 2.0);
            let b = uniform(&mut r, &[c], -2.0, 2.0);
            gradient_error(&[x, b], |g, v| g.add_bias(v[0], v[1]).unwrap())
        }),
        ("add", |s| binary_case(s, Graph::add)),
        ("sub", |s| binary_case(s, Graph::sub)),
        ("mul", |s| binary_case(s, Graph::mul)),
        ("mse", |s| binary_case(s, Graph::mse)),
        ("affine", |s| unary_case(s, -2.0, 2.0, |g, x| g.affine(x, -1.7, 0.3))),
        ("relu", |s| unary_case(s, -2.0, 2.0, Graph::relu)),
        ("sigmoid", |s| unary_case(s, -2.0, 2.0, Graph::sigmoid)),
        ("tanh", |s| unary_case(s, -2.0, 2.0, Graph::tanh)),
        ("log", |s| unary_case(s, 0.5, 2.0, Graph::log)),
        ("clamp", |s| unary_case(s, -2.0, 2.0, |g, x| g.clamp(x, -0.5, 0.5))),
        ("sum", |s| unary_case(s, -2.0, 2.0, Graph::sum)),
        ("mean", |s| unary_case(s, -2.0, 2.0, Graph::mean)),
        ("reshape", |s| {
            unary_case(s, -2.0, 2.0, |g, x| {
                let n = g.shape(x).iter().product::<usize>();
                g.reshape(x, &[1, n]).unwrap()
            })
        }),
        ("concat", |s| {
            let mut r = rng(s);
            let mut sa = random_shape(&mut r);
            let axis = r.random_range(0..sa.len());
            let mut sb = sa.clone();
            sb[axis] = small(&mut r, 1, 3);
            sa[axis] = small(&mut r, 1, 3);
            let a = uniform(&mut r, &sa, -2.0, 2.0);
            let b = uniform(&mut r, &sb, -2.0, 2.0);
            gradient_error(&[a, b], |g, v| g.concat(v[0], v[1], axis).unwrap())
        }),
        ("conv2d", conv_case),
        ("conv2d_transposed", conv_transposed_case),
        ("batchnorm", batchnorm_case),
    ]
}

/// Gradient errors of the two group losses of a small toy model, with
/// respect to every trainable parameter of every network.
pub fn composite_loss_errors(seed: u64) -> (usize, f64, f64) {
    use igan::loss::{forward_couples, loss_dfh, loss_eg, LossConfig};
    use igan::networks::{build_model, ArchConfig, NetKind};
    use igan::tensor::BatchNormMode;

    let arch = ArchConfig {
        base_channels: 4,
        secondary_latent_dim: 4,
        omit_h: false,
        ..ArchConfig::toy(2, 2)
    };
    let mut model = build_model(&arch, seed).unwrap();
    // Scale weights up from the small init so every layer carries signal.
    let mut r = rng(seed + 1);
    for kind in model.kinds() {
        for e in &mut model.network_mut(kind).unwrap().params.entries {
            let shape = e.tensor.shape().to_vec();
            e.tensor = uniform(&mut r, &shape, -1.0, 1.0);
        }
    }
    let params = model.trainable_count();
    let x = uniform(&mut r, &[6, 2], -1.0, 1.0);
    let z = uniform(&mut r, &[6, 2], -2.0, 2.0);
    let cfg = LossConfig {
        data_cycle_weight: 0.5,
        real_latent_weight: 0.25,
        ..LossConfig::default()
    };

    // Flatten every trainable tensor into the input list, in model order.
    let mut slots = Vec::new();
    let mut inputs = Vec::new();
    for kind in model.kinds() {
        for (i, e) in model.network(kind).unwrap().params.entries.iter().enumerate() {
            if e.trainable {
                slots.push((kind, i));
                inputs.push(e.tensor.clone());
            }
        }
    }
    let group_loss = |dfh: bool| {
        let (model, slots, x, z) = (&model, &slots, &x, &z);
        gradient_error(&inputs, move |g, vars| {
            let mut m = model.clone();
            let bound = m.bind(g, &[]);
            // Swap the bound constants for the differentiable inputs.
            let mut bound = bound;
            for (&(kind, i), &v) in slots.iter().zip(vars) {
                let list = match kind {
                    NetKind::E => &mut bound.e,
                    NetKind::G => &mut bound.g,
                    NetKind::F => &mut bound.f,
                    NetKind::H => bound.h.as_mut().unwrap(),
                    NetKind::D => &mut bound.d,
                };
                list[i] = v;
            }
            let xv = g.constant(x.clone());
            let zv = g.constant(z.clone());
            let cb = forward_couples(&mut m, g, &bound, xv, zv, BatchNormMode::Train).unwrap();
            let (loss, _) = if dfh {
                loss_dfh(&mut m, g, &bound, &cb, &cfg, BatchNormMode::Train).unwrap()
            } else {
                loss_eg(&mut m, g, &bound, &cb, &cfg, BatchNormMode::Train).unwrap()
            };
            loss
        })
    };
    (params, group_loss(true), group_loss(false))
}

/// Hash of every parameter and statistics buffer of one network.
pub fn network_digest(model: &igan::networks::IganModel, kind: igan::networks::NetKind) -> u64 {
    use std::hash::{DefaultHasher, Hash, Hasher};
    let mut h = DefaultHasher::new();
    if let Some(net) = model.network(kind) {
        for e in &net.params.entries {
            e.name.hash(&mut h);
            for v in e.tensor.data() {
                v.to_bits().hash(&mut h);
            }
        }
    }
    h.finish()
}

/// A small toy model on the 8-mode ring with a matching dataset.
pub fn toy_ring(hidden: usize, omit_h: bool, seed: u64) -> (igan::networks::IganModel, igan::data::Dataset) {
    use igan::data::{sample_mixture, GaussianMixtureSpec};
    use igan::networks::{build_model, ArchConfig};
    let arch = ArchConfig {
        base_channels: hidden,
        secondary_latent_dim: hidden,
        omit_h,
        ..ArchConfig::toy(2, 2)
    };
    let data = sample_mixture(&GaussianMixtureSpec::ring(8, 2.0, 0.05), 512, seed).unwrap();
    (build_model(&arch, seed).unwrap(), data)
}
