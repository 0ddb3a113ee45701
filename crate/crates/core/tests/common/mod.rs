#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nnmon_core::{FeedforwardNetwork, IntervalVector};
use rand::Rng;

/// Extremes of a one-hidden-layer network over a box, by enumerating every
/// vertex of the hyperplane arrangement (box faces and neuron switching
/// surfaces). The network is piecewise linear, so its extremes sit on such
/// vertices. Returns `(min, max)` per output.
pub fn vertex_extremes(net: &FeedforwardNetwork, input: &IntervalVector) -> Vec<(f64, f64)> {
    assert_eq!(net.num_layers(), 2, "oracle handles a single hidden layer");
    let n = net.input_dim();
    let w = &net.weights()[0];
    let b = &net.biases()[0];
    let mut planes: Vec<(DVector<f64>, f64)> = Vec::new();
    for i in 0..n {
        let e = DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
        planes.push((e.clone(), input.lower()[i]));
        planes.push((e, input.upper()[i]));
    }
    for k in 0..w.nrows() {
        planes.push((w.row(k).transpose(), -b[k]));
    }
    let m = net.output_dim();
    let mut ext = vec![(f64::INFINITY, f64::NEG_INFINITY); m];
    let mut combo: Vec<usize> = (0..n).collect();
    loop {
        let a = DMatrix::from_fn(n, n, |r, c| planes[combo[r]].0[c]);
        let rhs = DVector::from_fn(n, |r, _| planes[combo[r]].1);
        if let Some(x) = a.clone().lu().solve(&rhs) {
            let residual = (&a * &x - &rhs).amax();
            let inside = (0..n).all(|i| x[i] >= input.lower()[i] - 1e-9 && x[i] <= input.upper()[i] + 1e-9);
            if residual < 1e-9 && inside {
                let x = DVector::from_fn(n, |i, _| x[i].clamp(input.lower()[i], input.upper()[i]));
                let f = net.forward(&x).unwrap();
                for j in 0..m {
                    ext[j].0 = ext[j].0.min(f[j]);
                    ext[j].1 = ext[j].1.max(f[j]);
                }
            }
        }
        // Next n-combination of the planes.
        let mut i = n;
        loop {
            if i == 0 {
                return ext;
            }
            i -= 1;
            if combo[i] < planes.len() - n + i {
                combo[i] += 1;
                for k in i + 1..n {
                    combo[k] = combo[k - 1] + 1;
                }
                break;
            }
        }
    }
}

pub fn random_box<R: Rng>(rng: &mut R, dim: usize, center: f64, max_radius: f64) -> IntervalVector {
    let c: Vec<f64> = (0..dim).map(|_| rng.random_range(-center..=center)).collect();
    let r: Vec<f64> = (0..dim).map(|_| rng.random_range(0.01..=max_radius)).collect();
    let lo: Vec<f64> = c.iter().zip(&r).map(|(c, r)| c - r).collect();
    let hi: Vec<f64> = c.iter().zip(&r).map(|(c, r)| c + r).collect();
    IntervalVector::from_slices(&lo, &hi).unwrap()
}

pub fn sample_in<R: Rng>(rng: &mut R, b: &IntervalVector) -> DVector<f64> {
    DVector::from_fn(b.dim(), |i, _| {
        let (l, u) = b.component(i);
        if l == u {
            l
        } else {
            rng.random_range(l..=u)
        }
    })
}
