//! Central finite differences against the reverse-mode tape.

use iqssl::encoder::{Encoder, EncoderConfig, ProjectionHead};
use iqssl::numerics::{Graph, Tensor, Var};
use iqssl::signal::IqTensor;
use iqssl::ssl::contrastive_step;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TRIALS: u64 = 20;
pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Values bounded away from zero so a ReLU kink never sits inside the
/// difference stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

type Build = dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Var;
type Make = fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>;

fn loss_of(inputs: &[Tensor<f64>], build: &Build) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
    let loss = build(&mut g, &vars);
    g.value(loss).unwrap().data()[0]
}

/// Worst relative error over every input coordinate.
fn check(inputs: Vec<Tensor<f64>>, build: &Build) -> f64 {
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
        let loss = build(&mut g, &vars);
        let grads = g.backward(loss).unwrap();
        vars.iter()
            .zip(&inputs)
            .map(|(&v, t)| grads.get(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
            .collect()
    };
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= STEP;
            let numeric = (loss_of(&plus, build) - loss_of(&minus, build)) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic[i][j], numeric));
        }
    }
    worst
}

fn tensor(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape, data).unwrap().requiring_grad()
}

/// Reduces any output to a scalar through fixed random weights.
fn contract(g: &mut Graph<'_, f64>, out: Var, seed: u64) -> Var {
    let shape = g.value(out).unwrap().shape().to_vec();
    let n = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = g.input(Tensor::new(shape, random(&mut rng, n)).unwrap());
    let prod = g.mul(out, r).unwrap();
    g.sum(prod).unwrap()
}

pub struct Case {
    pub name: &'static str,
    make: Make,
    build: Box<Build>,
}

impl Case {
    /// Worst relative error over `trials` random draws.
    pub fn worst(&self, trials: u64) -> f64 {
        (0..trials)
            .map(|trial| {
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
                check((self.make)(&mut rng), &*self.build)
            })
            .fold(0.0, f64::max)
    }
}

pub fn kernel_cases() -> Vec<Case> {
    let mut cases = vec![
        Case {
            name: "linear",
            make: |rng| {
                vec![
                    tensor(vec![3, 5], random(rng, 15)),
                    tensor(vec![4, 5], random(rng, 20)),
                    tensor(vec![4], random(rng, 4)),
                ]
            },
            build: Box::new(|g, v| {
                let y = g.linear(v[0], v[1], Some(v[2])).unwrap();
                contract(g, y, 1)
            }),
        },
        Case {
            name: "conv2d",
            make: |rng| {
                vec![
                    tensor(vec![3, 2, 11], random(rng, 66)),
                    tensor(vec![4, 3, 2, 3], random(rng, 72)),
                    tensor(vec![4], random(rng, 4)),
                ]
            },
            build: Box::new(|g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), (1, 2), (0, 1)).unwrap();
                contract(g, y, 2)
            }),
        },
        Case {
            name: "relu",
            make: |rng| vec![tensor(vec![2, 7], away_from_zero(rng, 14))],
            build: Box::new(|g, v| {
                let y = g.relu(v[0]).unwrap();
                contract(g, y, 3)
            }),
        },
        Case {
            name: "global_avg_pool",
            make: |rng| vec![tensor(vec![3, 2, 5], random(rng, 30))],
            build: Box::new(|g, v| {
                let y = g.global_avg_pool(v[0]).unwrap();
                contract(g, y, 4)
            }),
        },
        Case {
            name: "l2_normalize",
            make: |rng| vec![tensor(vec![6], random(rng, 6))],
            build: Box::new(|g, v| {
                let y = g.l2_normalize(v[0]).unwrap();
                contract(g, y, 5)
            }),
        },
        Case {
            name: "matmul/add/mul/scale/reshape",
            make: |rng| {
                vec![
                    tensor(vec![3, 4], random(rng, 12)),
                    tensor(vec![4, 2], random(rng, 8)),
                    tensor(vec![3, 2], random(rng, 6)),
                ]
            },
            build: Box::new(|g, v| {
                let p = g.matmul(v[0], v[1]).unwrap();
                let s = g.add(p, v[2]).unwrap();
                let m = g.mul(s, v[2]).unwrap();
                let c = g.scale(m, -0.7).unwrap();
                let r = g.reshape(c, vec![6]).unwrap();
                contract(g, r, 6)
            }),
        },
        Case {
            name: "softmax_cross_entropy",
            make: |rng| vec![tensor(vec![4, 5], random(rng, 20))],
            build: Box::new(|g, v| g.softmax_cross_entropy(v[0], vec![0, 3, 4, 3]).unwrap()),
        },
    ];
    for (name, tau) in [("info_nce(0.12)", 0.12), ("info_nce(0.5)", 0.5), ("info_nce(1.5)", 1.5)] {
        cases.push(Case {
            name,
            make: |rng| vec![tensor(vec![6, 4], random(rng, 24))],
            build: Box::new(move |g, v| g.info_nce(v[0], tau).unwrap()),
        });
    }
    cases
}

fn small_config() -> EncoderConfig {
    EncoderConfig {
        antennas: 2,
        time: 24,
        widths: vec![3, 4],
        strides: vec![2, 2],
        kernel: 3,
        blocks_per_stage: 1,
        embedding_dim: 5,
        projection_hidden: 4,
        projection_dim: 3,
        per_sample_norm: false,
    }
}

/// Encoder, projection head and InfoNCE loss together: a few random
/// coordinates of every parameter tensor per trial. Returns the worst error
/// and the number of coordinates checked.
pub fn composed_worst(trials: u64) -> (f64, usize) {
    let config = small_config();
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + trial);
        let mut encoder = Encoder::<f64>::new(config.clone(), trial).unwrap();
        let mut head = ProjectionHead::<f64>::new(&config, trial).unwrap();
        // Zero-initialized biases can leave every projection at the origin;
        // random biases keep the test away from that degenerate point.
        for p in encoder.params_mut().iter_mut().chain(head.params_mut().iter_mut()) {
            if p.name.ends_with("bias") {
                let n = p.tensor.numel();
                p.tensor.data_mut().copy_from_slice(&random(&mut rng, n));
            }
        }
        let views: Vec<IqTensor<f64>> = (0..4)
            .map(|_| IqTensor::new(2, 24, random(&mut rng, 2 * 2 * 24)).unwrap())
            .collect();
        let tau = 0.5;
        let (_, grads) = contrastive_step(&encoder, &head, &views, tau).unwrap();
        let n_enc = encoder.params().len();
        for slot in 0..grads.len() {
            let numel = grads[slot].len();
            for _ in 0..3 {
                let j = rng.gen_range(0..numel);
                let mut eval = |delta: f64| {
                    let p = if slot < n_enc {
                        &mut encoder.params_mut()[slot]
                    } else {
                        &mut head.params_mut()[slot - n_enc]
                    };
                    p.tensor.data_mut()[j] += delta;
                    let loss = contrastive_step(&encoder, &head, &views, tau).unwrap().0;
                    let p = if slot < n_enc {
                        &mut encoder.params_mut()[slot]
                    } else {
                        &mut head.params_mut()[slot - n_enc]
                    };
                    p.tensor.data_mut()[j] -= delta;
                    loss
                };
                let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
                worst = worst.max(rel_err(grads[slot][j], numeric));
                checked += 1;
            }
        }
    }
    (worst, checked)
}
