//! Reference implementations shared by the integration tests.
#![allow(dead_code)]

use swinir::attention::WindowAttentionParams;
use swinir::rng::SeededRng;
use swinir::{Graph, Result, Scalar, Tensor, Var};

pub const OP_STEP: f32 = 1e-2;

pub type OpFn = Box<dyn Fn(&mut Graph<f32>, &[Var]) -> Result<Var>>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f32>>,
    pub f: OpFn,
}

pub fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut SeededRng) -> Tensor<f32> {
    Tensor::from_fn(shape.to_vec(), |_| rng.uniform_range(lo, hi) as f32).unwrap()
}

/// Values in `±[lo, hi]`, away from zero.
pub fn away_from_zero(shape: &[usize], lo: f64, hi: f64, rng: &mut SeededRng) -> Tensor<f32> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.uniform_range(lo, hi);
        (if rng.uniform() < 0.5 { -m } else { m }) as f32
    })
    .unwrap()
}

fn case(
    name: &'static str,
    inputs: Vec<Tensor<f32>>,
    f: impl Fn(&mut Graph<f32>, &[Var]) -> Result<Var> + 'static,
) -> OpCase {
    OpCase {
        name,
        inputs,
        f: Box::new(f),
    }
}

/// Every differentiable graph op on small random inputs. Inputs to `abs`
/// and `leaky_relu` avoid the kink and `sqrt` gets positive values.
pub fn op_cases() -> Vec<OpCase> {
    let mut rng = SeededRng::new(1);
    let r = &mut rng;
    let a = random(&[3, 4], -1.0, 1.0, r);
    let b = random(&[3, 4], -1.0, 1.0, r);
    let pos = random(&[3, 4], 0.5, 2.0, r);
    let nz = away_from_zero(&[3, 4], 0.1, 1.0, r);
    let row = random(&[1, 4], -1.0, 1.0, r);
    let a3 = random(&[2, 3, 4], -1.0, 1.0, r);
    let table = random(&[5, 2], -1.0, 1.0, r);
    let img = random(&[1, 8, 3, 2], -1.0, 1.0, r);
    let big = random(&[1, 2, 4, 6], -1.0, 1.0, r);
    let x = random(&[2, 3, 5, 4], -1.0, 1.0, r);
    let w = random(&[4, 3, 3, 3], -0.5, 0.5, r);
    let cb = random(&[4], -0.5, 0.5, r);
    let w1 = random(&[2, 3, 1, 1], -0.5, 0.5, r);
    let lw = random(&[4, 5], -0.5, 0.5, r);
    let lb = random(&[5], -0.5, 0.5, r);
    let gamma = random(&[4], 0.5, 1.5, r);
    let beta = random(&[4], -0.5, 0.5, r);
    let bm = random(&[2, 4, 5], -1.0, 1.0, r);
    let bt = random(&[2, 5, 4], -1.0, 1.0, r);
    vec![
        case("add", vec![a.clone(), b.clone()], |g, v| g.add(v[0], v[1])),
        case("sub", vec![a.clone(), b.clone()], |g, v| g.sub(v[0], v[1])),
        case("mul", vec![a.clone(), b], |g, v| g.mul(v[0], v[1])),
        case("add_broadcast", vec![a.clone(), row], |g, v| {
            g.add_broadcast(v[0], v[1])
        }),
        case("scale", vec![a.clone()], |g, v| g.scale(v[0], 1.7)),
        case("add_scalar", vec![a.clone()], |g, v| g.add_scalar(v[0], -0.3)),
        case("square", vec![a.clone()], |g, v| g.square(v[0])),
        case("sqrt", vec![pos], |g, v| g.sqrt(v[0])),
        case("abs", vec![nz.clone()], |g, v| g.abs(v[0])),
        case("gelu", vec![a.clone()], |g, v| g.gelu(v[0])),
        case("leaky_relu", vec![nz], |g, v| g.leaky_relu(v[0], 0.01)),
        case("softmax", vec![a], |g, v| g.softmax(v[0])),
        case("sum", vec![a3.clone()], |g, v| g.sum(v[0])),
        case("mean", vec![a3.clone()], |g, v| g.mean(v[0])),
        case("reshape", vec![a3.clone()], |g, v| g.reshape(v[0], &[6, 4])),
        case("permute", vec![a3.clone()], |g, v| g.permute(v[0], &[2, 0, 1])),
        case("slice", vec![a3.clone()], |g, v| g.slice(v[0], 2, 1, 2)),
        case("reflect_pad", vec![a3.clone()], |g, v| g.reflect_pad(v[0], 2, 3)),
        case("roll", vec![a3.clone()], |g, v| g.roll(v[0], 1, 2)),
        case("index_select", vec![table], |g, v| {
            g.index_select(v[0], &[0, 3, 3, 1, 4, 0])
        }),
        case("pixel_shuffle", vec![img], |g, v| g.pixel_shuffle(v[0], 2)),
        case("pixel_unshuffle", vec![big], |g, v| g.pixel_unshuffle(v[0], 2)),
        case("conv2d", vec![x.clone(), w, cb], |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), 1)
        }),
        case("conv2d_1x1_unpadded", vec![x, w1], |g, v| g.conv2d(v[0], v[1], None, 0)),
        case("linear", vec![a3.clone(), lw, lb], |g, v| {
            g.linear(v[0], v[1], Some(v[2]))
        }),
        case("layer_norm", vec![a3.clone(), gamma, beta], |g, v| {
            g.layer_norm(v[0], v[1], v[2], 1e-5)
        }),
        case("matmul", vec![a3.clone(), bm], |g, v| g.matmul(v[0], v[1], false)),
        case("matmul_transposed", vec![a3, bt], |g, v| g.matmul(v[0], v[1], true)),
    ]
}

fn forward(inputs: &[Tensor<f32>], f: &OpFn, trainable: bool) -> (Graph<f32>, Vec<Var>, Var) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        })
        .collect();
    let y = f(&mut g, &vars).unwrap();
    (g, vars, y)
}

/// Largest scale-relative gradient error over all inputs of an op, with
/// loss `Σ w ⊙ op(inputs)` for fixed random `w`, accumulated in f64.
pub fn op_error(c: &OpCase) -> f64 {
    let mut rng = SeededRng::new(99);
    let (mut g, vars, y) = forward(&c.inputs, &c.f, true);
    let w = random(g.shape(y), -1.0, 1.0, &mut rng);
    let wv = g.constant(w.clone());
    let prod = g.mul(y, wv).unwrap();
    let loss = g.sum(prod).unwrap();
    g.backward(loss).unwrap();
    let weights: Vec<f64> = w.data().iter().map(|&v| v as f64).collect();
    let eval = |xs: &[Tensor<f32>]| -> f64 {
        let (g, _, y) = forward(xs, &c.f, false);
        g.value(y).data().iter().zip(&weights).map(|(&a, b)| a as f64 * b).sum()
    };
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let n = c.inputs[k].numel();
        let analytic = g.grad(*v).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; n]);
        let mut diff = 0.0f64;
        let mut scale = 0.0f64;
        for (i, &an) in analytic.iter().enumerate() {
            let mut xs = c.inputs.clone();
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + OP_STEP;
            let plus = eval(&xs);
            xs[k].data_mut()[i] = orig - OP_STEP;
            let minus = eval(&xs);
            let numeric = (plus - minus) / (2.0 * OP_STEP as f64);
            diff = diff.max((an as f64 - numeric).abs());
            scale = scale.max((an as f64).abs()).max(numeric.abs());
        }
        worst = worst.max(diff / scale.max(1e-6));
    }
    worst
}

/// Dense multi-head attention over one window, `x: [M², C]`, with the bias
/// for token pair `(i, j)` read from the table at their coordinate offset.
pub fn dense_attention<T: Scalar>(x: &Tensor<T>, p: &WindowAttentionParams<T>, window: usize) -> Vec<f64> {
    let f = |t: &Tensor<T>| t.data().iter().map(|v| v.to_f64c()).collect::<Vec<f64>>();
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let h = p.num_heads;
    let d = c / h;
    let xs = f(x);
    let project = |w: &Tensor<T>, b: &Tensor<T>, input: &[f64]| -> Vec<f64> {
        let (w, b) = (f(w), f(b));
        let mut out = vec![0.0; n * c];
        for t in 0..n {
            for o in 0..c {
                out[t * c + o] = b[o] + (0..c).map(|i| input[t * c + i] * w[i * c + o]).sum::<f64>();
            }
        }
        out
    };
    let q = project(&p.q_weight, &p.q_bias, &xs);
    let k = project(&p.k_weight, &p.k_bias, &xs);
    let v = project(&p.v_weight, &p.v_bias, &xs);
    let table = f(&p.bias_table);
    let span = 2 * window - 1;
    let mut heads = vec![0.0; n * c];
    for head in 0..h {
        for i in 0..n {
            let (yi, xi) = ((i / window) as isize, (i % window) as isize);
            let logits: Vec<f64> = (0..n)
                .map(|j| {
                    let (yj, xj) = ((j / window) as isize, (j % window) as isize);
                    let dot: f64 = (0..d).map(|e| q[i * c + head * d + e] * k[j * c + head * d + e]).sum();
                    let dy = (yi - yj + window as isize - 1) as usize;
                    let dx = (xi - xj + window as isize - 1) as usize;
                    dot / (d as f64).sqrt() + table[(dy * span + dx) * h + head]
                })
                .collect();
            let top = logits.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let z: f64 = e.iter().sum();
            for o in 0..d {
                heads[i * c + head * d + o] = (0..n).map(|j| e[j] / z * v[j * c + head * d + o]).sum();
            }
        }
    }
    project(&p.proj_weight, &p.proj_bias, &heads)
}

/// Attention parameters drawn from `U(-0.5, 0.5)` so the logits carry
/// structure.
pub fn attention_params<T: Scalar>(c: usize, h: usize, m: usize, seed: u64) -> WindowAttentionParams<T> {
    let mut rng = SeededRng::new(seed);
    let mut p = WindowAttentionParams::<T>::zeros(c, h, m).unwrap();
    for t in [
        &mut p.q_weight,
        &mut p.k_weight,
        &mut p.v_weight,
        &mut p.proj_weight,
        &mut p.q_bias,
        &mut p.k_bias,
        &mut p.v_bias,
        &mut p.proj_bias,
        &mut p.bias_table,
    ] {
        for v in t.data_mut() {
            *v = T::of(rng.uniform_range(-0.5, 0.5));
        }
    }
    p
}

pub fn tokens<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = SeededRng::new(seed);
    Tensor::from_fn(shape.to_vec(), |_| T::of(rng.uniform_range(-1.0, 1.0))).unwrap()
}

pub fn max_diff<A: Scalar>(a: &[A], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.to_f64c() - y).abs())
        .fold(0.0, f64::max)
}
