//! Tensor-level wrappers around the graph operators, for callers that do
//! not need gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};

fn eval<T: Scalar>(inputs: &[&Tensor<T>], f: impl FnOnce(&mut Graph<T>, &[Var]) -> Result<Var>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant((*t).clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).clone())
}

pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    padding: usize,
) -> Result<Tensor<T>> {
    match bias {
        Some(b) => eval(&[input, weight, b], |g, v| g.conv2d(v[0], v[1], Some(v[2]), padding)),
        None => eval(&[input, weight], |g, v| g.conv2d(v[0], v[1], None, padding)),
    }
}

pub fn linear<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    match bias {
        Some(b) => eval(&[input, weight, b], |g, v| g.linear(v[0], v[1], Some(v[2]))),
        None => eval(&[input, weight], |g, v| g.linear(v[0], v[1], None)),
    }
}

pub fn layer_norm<T: Scalar>(input: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    eval(&[input, gamma, beta], |g, v| g.layer_norm(v[0], v[1], v[2], eps))
}

pub fn gelu<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    eval(&[input], |g, v| g.gelu(v[0]))
}

pub fn softmax<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    eval(&[input], |g, v| g.softmax(v[0]))
}

pub fn pixel_shuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    eval(&[input], |g, v| g.pixel_shuffle(v[0], r))
}

pub fn pixel_unshuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    eval(&[input], |g, v| g.pixel_unshuffle(v[0], r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_1x1() {
        let x = Tensor::<f32>::from_fn([1, 3, 4, 5], |i| i as f32 * 0.1).unwrap();
        let w = Tensor::from_fn([3, 3, 1, 1], |i| if i % 4 == 0 { 1.0 } else { 0.0 }).unwrap();
        let b = Tensor::zeros([3]).unwrap();
        assert_eq!(conv2d(&x, &w, Some(&b), 0).unwrap(), x);
    }

    #[test]
    fn conv_all_ones_kernel() {
        let x = Tensor::<f32>::ones([1, 1, 4, 4]).unwrap();
        let w = Tensor::ones([1, 1, 3, 3]).unwrap();
        let y = conv2d(&x, &w, None, 1).unwrap();
        assert_eq!(y.at(&[0, 0, 0, 0]), 4.0);
        assert_eq!(y.at(&[0, 0, 3, 3]), 4.0);
        assert_eq!(y.at(&[0, 0, 0, 1]), 6.0);
        assert_eq!(y.at(&[0, 0, 1, 1]), 9.0);
        assert_eq!(y.at(&[0, 0, 2, 2]), 9.0);
    }

    #[test]
    fn conv_errors() {
        let x = Tensor::<f32>::ones([1, 2, 4, 4]).unwrap();
        let w = Tensor::ones([1, 3, 3, 3]).unwrap();
        assert!(conv2d(&x, &w, None, 1).is_err());
        let small = Tensor::<f32>::ones([1, 1, 2, 2]).unwrap();
        let big_k = Tensor::ones([1, 1, 5, 5]).unwrap();
        assert!(conv2d(&small, &big_k, None, 0).is_err());
    }

    #[test]
    fn delta_kernel_is_bit_identical() {
        let x = Tensor::<f32>::from_fn([2, 1, 5, 6], |i| (i as f32 * 0.731).sin()).unwrap();
        let mut w = Tensor::zeros([1, 1, 3, 3]).unwrap();
        w.data_mut()[4] = 1.0;
        let b = Tensor::zeros([1]).unwrap();
        assert_eq!(conv2d(&x, &w, Some(&b), 1).unwrap(), x);
    }

    #[test]
    fn linear_examples() {
        let x = Tensor::<f32>::new([1, 2], vec![1.0, 2.0]).unwrap();
        let eye = Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(linear(&x, &eye, None).unwrap(), x);
        let w = Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        let b = Tensor::new([2], vec![1.0, 1.0]).unwrap();
        assert_eq!(linear(&x, &w, Some(&b)).unwrap().data(), &[2.0, 5.0]);
        let bad = Tensor::ones([3, 2]).unwrap();
        assert!(linear(&x, &bad, None).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let gamma = Tensor::<f64>::ones([2]).unwrap();
        let beta = Tensor::zeros([2]).unwrap();
        let c = Tensor::new([1, 2], vec![3.0, 3.0]).unwrap();
        assert!(layer_norm(&c, &gamma, &beta, 1e-5)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let x = Tensor::new([1, 2], vec![1.0, -1.0]).unwrap();
        let y = layer_norm(&x, &gamma, &beta, 1e-5).unwrap();
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] - expect).abs() < 1e-12);
        assert!((y.data()[0] - 0.999995).abs() < 1e-6);
        assert!((y.data()[1] + expect).abs() < 1e-12);
    }

    #[test]
    fn gelu_examples() {
        let x = Tensor::<f64>::new([3], vec![0.0, 1.0, 8.0]).unwrap();
        let y = gelu(&x).unwrap();
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 0.841345).abs() < 1e-6);
        assert!((y.data()[2] / 8.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_examples() {
        let x = Tensor::<f64>::new([3, 2], vec![0.0, 0.0, 2f64.ln(), 0.0, -100.0, 0.0]).unwrap();
        let y = softmax(&x).unwrap();
        assert_eq!(&y.data()[..2], &[0.5, 0.5]);
        assert!((y.data()[2] - 2.0 / 3.0).abs() < 1e-12);
        assert!((y.data()[3] - 1.0 / 3.0).abs() < 1e-12);
        assert!(y.data()[4] < 1e-8);
    }

    #[test]
    fn pixel_shuffle_examples() {
        let x = Tensor::<f32>::new([1, 4, 1, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[0.0, 1.0, 2.0, 3.0]);
        let z = Tensor::<f32>::from_fn([2, 3, 2, 3], |i| i as f32).unwrap();
        assert_eq!(pixel_shuffle(&z, 1).unwrap(), z);
        assert!(pixel_shuffle(&z, 2).is_err());
    }

    #[test]
    fn pixel_shuffle_index_map() {
        let (n, c, r, h, w) = (2, 3, 3, 2, 4);
        let x = Tensor::<f32>::from_fn([n, c * r * r, h, w], |i| i as f32).unwrap();
        let y = pixel_shuffle(&x, r).unwrap();
        for ni in 0..n {
            for ci in 0..c {
                for a in 0..r {
                    for b in 0..r {
                        for i in 0..h {
                            for j in 0..w {
                                assert_eq!(
                                    y.at(&[ni, ci, i * r + a, j * r + b]),
                                    x.at(&[ni, ci * r * r + a * r + b, i, j])
                                );
                            }
                        }
                    }
                }
            }
        }
        assert_eq!(pixel_unshuffle(&y, r).unwrap(), x);
    }
}
