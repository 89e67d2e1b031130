//! A second, matrix-based implementation of the steering network used as an
//! oracle for the hand-written forward pass.

use cogdrive_core::neuro::{forward, forward_sequence, FlatMap, LstmParams, INPUT_DIM, SEQ_LEN};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Output of the seed-42 network on the seed-42 sequence, recorded from the
/// reference implementation below.
const GOLDEN_SEED_42: f64 = 0.036_797_821_114_388_13;

fn sequence(seed: u64) -> Vec<FlatMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..SEQ_LEN)
        .map(|_| {
            let mut v = [0.0; INPUT_DIM];
            v.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
            FlatMap(v)
        })
        .collect()
}

fn sigmoid(v: DVector<f64>) -> DVector<f64> {
    v.map(|x| 1.0 / (1.0 + (-x).exp()))
}

fn reference(p: &LstmParams, seq: &[FlatMap]) -> f64 {
    let d = &p.dense_in;
    let w_in = DMatrix::from_row_slice(d.n_out, d.n_in, &d.w);
    let b_in = DVector::from_column_slice(&d.b);
    let mut xs: Vec<DVector<f64>> = seq
        .iter()
        .map(|m| &w_in * DVector::from_column_slice(&m.0) + &b_in)
        .collect();
    for layer in &p.lstm {
        let h_dim = layer.hidden;
        let w = DMatrix::from_row_slice(4 * h_dim, layer.n_in, &layer.w);
        let u = DMatrix::from_row_slice(4 * h_dim, h_dim, &layer.u);
        let b = DVector::from_column_slice(&layer.b);
        let mut h = DVector::zeros(h_dim);
        let mut c = DVector::zeros(h_dim);
        let mut out = Vec::with_capacity(xs.len());
        for x in &xs {
            let z = &w * x + &u * &h + &b;
            let i = sigmoid(z.rows(0, h_dim).into_owned());
            let f = sigmoid(z.rows(h_dim, h_dim).into_owned());
            let o = sigmoid(z.rows(2 * h_dim, h_dim).into_owned());
            let g = z.rows(3 * h_dim, h_dim).map(f64::tanh);
            c = f.component_mul(&c) + i.component_mul(&g);
            h = o.component_mul(&c.map(f64::tanh));
            out.push(h.clone());
        }
        xs = out;
    }
    let w_out = DVector::from_column_slice(&p.dense_out.w);
    w_out.dot(xs.last().unwrap()) + p.dense_out.b[0]
}

#[test]
fn forward_matches_matrix_reference() {
    for seed in [1, 2, 3, 42] {
        let p = LstmParams::init(seed);
        let s = sequence(seed);
        let ours = forward(&p, &s).unwrap();
        let theirs = reference(&p, &s);
        assert!((ours - theirs).abs() < 1e-12, "seed {seed}: {ours} vs {theirs}");
    }
}

#[test]
fn seed_42_golden_value() {
    let out = forward(&LstmParams::init(42), &sequence(42)).unwrap();
    assert!((out - GOLDEN_SEED_42).abs() < 1e-12, "{out:.17}");
}

#[test]
fn readout_formulations_agree() {
    for seed in 0..5 {
        let p = LstmParams::init(seed);
        let s = sequence(seed + 100);
        assert_eq!(*forward_sequence(&p, &s).last().unwrap(), forward(&p, &s).unwrap());
    }
}

#[test]
fn forward_is_pure() {
    let p = LstmParams::init(8);
    let s = sequence(8);
    let copy = p.clone();
    let a = forward(&p, &s).unwrap();
    let b = forward(&p, &s).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(p, copy);
}
