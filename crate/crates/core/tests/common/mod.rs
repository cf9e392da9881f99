//! Shared test oracles: central finite differences over every autodiff
//! primitive and both losses, plus brute-force reference implementations.

#![allow(dead_code)]

use bioaug_core::autodiff::{Graph, Tensor, Var};
use bioaug_core::contrastive::info_nce;
use bioaug_core::rl::policy_loss;
use bioaug_core::rng::rng_from;
use bioaug_core::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A differentiable function of several tensors with a fixed output shape.
pub struct Instance {
    pub inputs: Vec<Tensor>,
    pub f: Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>,
}

pub struct Case {
    pub name: &'static str,
    pub build: fn(&mut ChaCha8Rng) -> Instance,
}

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    uniform(rng, shape, -1.5, 1.5)
}

/// Values bounded away from zero so no probe crosses a kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.5);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn sh(rng: &mut ChaCha8Rng, offsets: &[usize]) -> Vec<usize> {
    offsets.iter().map(|o| dim(rng) + o).collect()
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(1..=4)
}

fn run(inst: &Instance, inputs: &[Tensor], weights: Option<&Tensor>) -> Result<(f64, Vec<Tensor>, Tensor)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = (inst.f)(&mut g, &vars)?;
    let out_value = g.value(out).clone();
    let w = match weights {
        Some(w) => w.clone(),
        None => return Ok((0.0, vec![], out_value)),
    };
    let wv = g.constant(w);
    let prod = g.mul(out, wv)?;
    let loss = g.sum_all(prod)?;
    let value = g.value(loss).item()?;
    g.backward(loss)?;
    let grads = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();
    Ok((value, grads, out_value))
}

/// Norm-wise relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`
/// of the gradient of `Σ f(x) ⊙ w` for random fixed weights `w`.
pub fn check_instance(inst: &Instance, rng: &mut ChaCha8Rng) -> Result<f64> {
    let (_, _, out) = run(inst, &inst.inputs, None)?;
    let weights = normal(rng, out.shape());
    let (_, analytic, _) = run(inst, &inst.inputs, Some(&weights))?;
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for (i, t) in inst.inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let mut probe = inst.inputs.clone();
            probe[i].data_mut()[j] = t.data()[j] + FD_STEP;
            let up = run(inst, &probe, Some(&weights))?.0;
            probe[i].data_mut()[j] = t.data()[j] - FD_STEP;
            let down = run(inst, &probe, Some(&weights))?.0;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[i].data()[j];
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
    }
    let scale = na.sqrt().max(nn.sqrt());
    Ok(if scale == 0.0 { 0.0 } else { diff.sqrt() / scale })
}

/// Worst relative error over `n` random instances of a case.
pub fn check_case(case: &Case, n: usize, seed: u64) -> Result<f64> {
    let mut rng = rng_from(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let inst = (case.build)(&mut rng);
        worst = worst.max(check_instance(&inst, &mut rng)?);
    }
    Ok(worst)
}

pub fn gradient_cases() -> Vec<Case> {
    vec![
        Case {
            name: "add (broadcast)",
            build: |r| {
                let (m, n) = (dim(r), dim(r));
                Instance {
                    inputs: vec![normal(r, &[m, n]), normal(r, &[n])],
                    f: Box::new(|g, v| g.add(v[0], v[1])),
                }
            },
        },
        Case {
            name: "sub (broadcast)",
            build: |r| {
                let (b, m, n) = (dim(r), dim(r), dim(r));
                Instance {
                    inputs: vec![normal(r, &[b, m, n]), normal(r, &[m, 1])],
                    f: Box::new(|g, v| g.sub(v[0], v[1])),
                }
            },
        },
        Case {
            name: "mul (broadcast)",
            build: |r| {
                let (m, n) = (dim(r), dim(r));
                Instance {
                    inputs: vec![normal(r, &[m, n]), normal(r, &[m, 1])],
                    f: Box::new(|g, v| g.mul(v[0], v[1])),
                }
            },
        },
        Case {
            name: "scale",
            build: |r| {
                let c = r.gen_range(-3.0..3.0);
                Instance {
                    inputs: vec![{ let s = sh(r, &[0, 0]); normal(r, &s) }],
                    f: Box::new(move |g, v| g.scale(v[0], c)),
                }
            },
        },
        Case {
            name: "relu",
            build: |r| Instance {
                inputs: vec![{ let s = sh(r, &[0, 2]); away_from_zero(r, &s) }],
                f: Box::new(|g, v| g.relu(v[0])),
            },
        },
        Case {
            name: "exp",
            build: |r| Instance {
                inputs: vec![{ let s = sh(r, &[0, 0]); normal(r, &s) }],
                f: Box::new(|g, v| g.exp(v[0])),
            },
        },
        Case {
            name: "log",
            build: |r| Instance {
                inputs: vec![{ let s = sh(r, &[0, 0]); uniform(r, &s, 0.2, 3.0) }],
                f: Box::new(|g, v| g.log(v[0])),
            },
        },
        Case {
            name: "log_clamped",
            build: |r| {
                let (m, n) = (dim(r), dim(r) + 1);
                let data = (0..m * n)
                    .map(|_| if r.gen_bool(0.3) { r.gen_range(0.001..0.05) } else { r.gen_range(0.2..3.0) })
                    .collect();
                Instance {
                    inputs: vec![Tensor::new(vec![m, n], data).unwrap()],
                    f: Box::new(|g, v| g.log_clamped(v[0], 0.1)),
                }
            },
        },
        Case {
            name: "matmul [m,k]x[k,n]",
            build: |r| {
                let (m, k, n) = (dim(r), dim(r), dim(r));
                Instance {
                    inputs: vec![normal(r, &[m, k]), normal(r, &[k, n])],
                    f: Box::new(|g, v| g.matmul(v[0], v[1])),
                }
            },
        },
        Case {
            name: "matmul [b,m,k]x[k,n]",
            build: |r| {
                let (b, m, k, n) = (dim(r), dim(r), dim(r), dim(r));
                Instance {
                    inputs: vec![normal(r, &[b, m, k]), normal(r, &[k, n])],
                    f: Box::new(|g, v| g.matmul(v[0], v[1])),
                }
            },
        },
        Case {
            name: "matmul [b,m,k]x[b,k,n]",
            build: |r| {
                let (b, m, k, n) = (dim(r), dim(r), dim(r), dim(r));
                Instance {
                    inputs: vec![normal(r, &[b, m, k]), normal(r, &[b, k, n])],
                    f: Box::new(|g, v| g.matmul(v[0], v[1])),
                }
            },
        },
        Case {
            name: "conv1d",
            build: |r| {
                let (b, ci, co) = (r.gen_range(1..=2), dim(r), dim(r));
                let k = r.gen_range(1..=5);
                let len = r.gen_range(k..=k + 8);
                let stride = r.gen_range(1..=2);
                let pad = r.gen_range(0..=k / 2);
                Instance {
                    inputs: vec![normal(r, &[b, ci, len]), normal(r, &[co, ci, k])],
                    f: Box::new(move |g, v| g.conv1d(v[0], v[1], stride, pad)),
                }
            },
        },
        Case {
            name: "sum_all",
            build: |r| Instance {
                inputs: vec![{ let s = sh(r, &[0, 0, 0]); normal(r, &s) }],
                f: Box::new(|g, v| g.sum_all(v[0])),
            },
        },
        Case {
            name: "mean_all",
            build: |r| Instance {
                inputs: vec![{ let s = sh(r, &[0, 0]); normal(r, &s) }],
                f: Box::new(|g, v| g.mean_all(v[0])),
            },
        },
        Case {
            name: "sum_axis",
            build: |r| {
                let axis = r.gen_range(0..3);
                let keep = r.gen_bool(0.5);
                Instance {
                    inputs: vec![{ let s = sh(r, &[0, 0, 0]); normal(r, &s) }],
                    f: Box::new(move |g, v| g.sum_axis(v[0], axis, keep)),
                }
            },
        },
        Case {
            name: "mean_axis",
            build: |r| {
                let axis = r.gen_range(0..3);
                let keep = r.gen_bool(0.5);
                Instance {
                    inputs: vec![{ let s = sh(r, &[0, 0, 0]); normal(r, &s) }],
                    f: Box::new(move |g, v| g.mean_axis(v[0], axis, keep)),
                }
            },
        },
        Case {
            name: "softmax",
            build: |r| {
                let axis = r.gen_range(0..3);
                Instance {
                    inputs: vec![{ let s = sh(r, &[0, 1, 0]); normal(r, &s) }],
                    f: Box::new(move |g, v| g.softmax(v[0], axis)),
                }
            },
        },
        Case {
            name: "layer_norm",
            build: |r| Instance {
                inputs: vec![{ let s = sh(r, &[0, 1]); normal(r, &s) }],
                f: Box::new(|g, v| g.layer_norm(v[0], 1e-5)),
            },
        },
        Case {
            name: "l2_normalize",
            build: |r| Instance {
                inputs: vec![{ let s = sh(r, &[0, 1]); away_from_zero(r, &s) }],
                f: Box::new(|g, v| g.l2_normalize(v[0], 1e-12)),
            },
        },
        Case {
            name: "embedding",
            build: |r| {
                let (vocab, d) = (dim(r) + 1, dim(r));
                let ids: Vec<usize> = (0..r.gen_range(1..=6)).map(|_| r.gen_range(0..vocab)).collect();
                Instance {
                    inputs: vec![normal(r, &[vocab, d])],
                    f: Box::new(move |g, v| g.embedding(v[0], &ids)),
                }
            },
        },
        Case {
            name: "concat",
            build: |r| {
                let axis = r.gen_range(0..2);
                let (m, n) = (dim(r), dim(r));
                let other = if axis == 0 { [dim(r), n] } else { [m, dim(r)] };
                Instance {
                    inputs: vec![normal(r, &[m, n]), normal(r, &other)],
                    f: Box::new(move |g, v| g.concat(&[v[0], v[1]], axis)),
                }
            },
        },
        Case {
            name: "transpose",
            build: |r| Instance {
                inputs: vec![{ let s = sh(r, &[0, 0, 0]); normal(r, &s) }],
                f: Box::new(|g, v| g.transpose(v[0])),
            },
        },
        Case {
            name: "reshape",
            build: |r| {
                let (a, b) = (dim(r), dim(r));
                Instance {
                    inputs: vec![normal(r, &[a, b, 2])],
                    f: Box::new(move |g, v| g.reshape(v[0], &[2 * b, a])),
                }
            },
        },
        Case {
            name: "info_nce loss",
            build: |r| {
                let (n, d) = (r.gen_range(2..=4), r.gen_range(2..=5));
                let tau = r.gen_range(0.1..1.0);
                Instance {
                    inputs: vec![away_from_zero(r, &[n, d]), away_from_zero(r, &[n, d])],
                    f: Box::new(move |g, v| {
                        let a = g.l2_normalize(v[0], 1e-12)?;
                        let b = g.l2_normalize(v[1], 1e-12)?;
                        info_nce(g, a, b, tau)
                    }),
                }
            },
        },
        Case {
            name: "policy loss",
            build: |r| {
                let (b, n) = (r.gen_range(1..=4), r.gen_range(2..=5));
                let chosen: Vec<usize> = (0..b).map(|_| r.gen_range(0..n)).collect();
                let adv: Vec<f64> = (0..b).map(|_| r.gen_range(-1.0..1.0)).collect();
                let (beta, gamma) = (r.gen_range(0.1..1.0), r.gen_range(0.0..0.5));
                Instance {
                    inputs: vec![normal(r, &[b, n])],
                    f: Box::new(move |g, v| {
                        let p = g.softmax(v[0], 1)?;
                        Ok(policy_loss(g, p, &chosen, &adv, beta, gamma)?.loss)
                    }),
                }
            },
        },
    ]
}

/// Direct, loop-based symmetric InfoNCE over unit rows (`2N` anchors).
pub fn brute_info_nce(weak: &[Vec<f64>], strong: &[Vec<f64>], tau: f64) -> f64 {
    let z: Vec<&Vec<f64>> = weak.iter().chain(strong).collect();
    let m = z.len();
    let n = weak.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut total = 0.0;
    for i in 0..m {
        let pos = (i + n) % m;
        let mut denom = 0.0;
        for j in 0..m {
            if j != i {
                denom += (dot(z[i], z[j]) / tau).exp();
            }
        }
        total += -((dot(z[i], z[pos]) / tau).exp() / denom).ln();
    }
    total / m as f64
}

/// Direct Soft-KNN class probabilities with cosine similarity.
pub fn brute_soft_knn(z: &[f64], refs: &[Vec<f64>], labels: &[usize], n_classes: usize, k: usize, tau: f64) -> Vec<f64> {
    let norm = |a: &[f64]| a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let sims: Vec<f64> = refs
        .iter()
        .map(|r| r.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() / (norm(r) * norm(z)))
        .collect();
    let mut idx: Vec<usize> = (0..refs.len()).collect();
    // Selection by repeated maximum, lowest index first among equals.
    let mut chosen = Vec::new();
    for _ in 0..k {
        let (pos, _) = idx
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bp, bv), (p, &j)| if sims[j] > bv { (p, sims[j]) } else { (bp, bv) });
        chosen.push(idx.remove(pos));
    }
    let mut probs = vec![0.0; n_classes];
    let total: f64 = chosen.iter().map(|&j| (sims[j] / tau).exp()).sum();
    for &j in &chosen {
        probs[labels[j]] += (sims[j] / tau).exp() / total;
    }
    probs
}

use bioaug_core::augment::{apply_action, time_flip, weak_view, ActionKind, ActionParams, AugmentationAction, Epoch, StrongParams, WeakParams};

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Random epoch with no exact zeros, so masked samples are identifiable.
pub fn random_epoch(rng: &mut ChaCha8Rng, len: usize) -> Epoch {
    let samples = (0..len)
        .map(|_| {
            let m = rng.gen_range(0.01..3.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Epoch::new(samples, Some(rng.gen_range(0..4)), rng.gen_range(0..100))
}

pub fn random_strong_params(rng: &mut ChaCha8Rng, len: usize) -> StrongParams {
    StrongParams {
        mask_ratio: rng.gen_range(0.01..=1.0),
        n_segments: rng.gen_range(1..=len.min(12)),
        crop_fraction: rng.gen_range(0.05..=1.0),
        warp_knots: rng.gen_range(2..=8),
        warp_max_speed: rng.gen_range(1.0..4.0),
    }
}

/// Exact augmentation invariants on `n` random instances; one entry per property.
pub fn augmentation_invariants(n: usize, seed: u64) -> Vec<(&'static str, bool)> {
    let mut rng = rng_from(seed);
    let mut ok = [true; 7];
    for _ in 0..n {
        let len = rng.gen_range(2..200);
        let x = random_epoch(&mut rng, len);
        let p = random_strong_params(&mut rng, len);
        let s: u64 = rng.gen();

        // flip involution
        ok[0] &= bits(&time_flip(&time_flip(&x)).samples) == bits(&x.samples);

        // permutation multiset and segment structure
        let y = apply_action(&x, ActionKind::TimePermutation, &p, s).unwrap();
        let (mut a, mut b) = (bits(&x.samples), bits(&y.samples));
        a.sort_unstable();
        b.sort_unstable();
        ok[1] &= a == b;

        // mask span exactness
        let act = AugmentationAction::sample(ActionKind::TimeMasking, len, &p, s).unwrap();
        let y = act.apply(&x).unwrap();
        if let ActionParams::Mask { start, len: span } = act.params {
            let expect = (p.mask_ratio * len as f64).floor() as usize;
            ok[2] &= span == expect
                && y.samples.iter().filter(|v| **v == 0.0).count() == expect
                && (0..len).all(|i| {
                    if (start..start + span).contains(&i) {
                        y.samples[i] == 0.0
                    } else {
                        y.samples[i].to_bits() == x.samples[i].to_bits()
                    }
                });
        } else {
            ok[2] = false;
        }

        // crop and warp fix constants
        let c = Epoch::new(vec![x.samples[0]; len], x.label, x.subject_id);
        for kind in [ActionKind::CropResize, ActionKind::TimeWarp] {
            let y = apply_action(&c, kind, &p, s).unwrap();
            ok[3] &= bits(&y.samples) == bits(&c.samples);
        }

        // length and metadata preservation
        for kind in ActionKind::ALL {
            let y = apply_action(&x, kind, &p, s).unwrap();
            ok[4] &= y.len() == len && y.label == x.label && y.subject_id == x.subject_id;
        }
        let w = weak_view(&x, &WeakParams::default(), s).unwrap();
        ok[4] &= w.len() == len;

        // seed determinism
        for kind in ActionKind::ALL {
            let y1 = apply_action(&x, kind, &p, s).unwrap();
            let y2 = apply_action(&x, kind, &p, s).unwrap();
            ok[5] &= bits(&y1.samples) == bits(&y2.samples);
        }
        ok[5] &= bits(&weak_view(&x, &WeakParams::default(), s).unwrap().samples) == bits(&w.samples);

        // degenerate intensities are identities
        let id = StrongParams {
            mask_ratio: p.mask_ratio,
            n_segments: 1,
            crop_fraction: 1.0,
            warp_knots: p.warp_knots,
            warp_max_speed: 1.0,
        };
        for kind in [ActionKind::TimePermutation, ActionKind::CropResize, ActionKind::TimeWarp] {
            ok[6] &= bits(&apply_action(&x, kind, &id, s).unwrap().samples) == bits(&x.samples);
        }
    }
    vec![
        ("flip involution", ok[0]),
        ("permutation multiset", ok[1]),
        ("mask span exactness", ok[2]),
        ("crop/warp constant fixpoint", ok[3]),
        ("length preservation", ok[4]),
        ("seed determinism", ok[5]),
        ("identity at degenerate intensity", ok[6]),
    ]
}
