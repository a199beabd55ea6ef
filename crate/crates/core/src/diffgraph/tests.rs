use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

/// Compares analytic gradients of `build` against central differences (h = 1e-5).
fn check_gradients(inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[NodeId]) -> NodeId) {
    let eval = |ts: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = ts.iter().map(|t| g.param(t.clone())).collect();
        let loss = build(&mut g, &ids);
        g.value(loss).get(0, 0)
    };
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &ids);
    g.backward(loss).unwrap();

    let h = 1e-5;
    for (k, id) in ids.iter().enumerate() {
        let analytic = g.grad(*id).map(|s| s.to_vec()).unwrap_or(vec![0.0; inputs[k].len()]);
        for i in 0..inputs[k].len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic[i];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (a - numeric).abs() / denom < 1e-4 || (a - numeric).abs() < 1e-8,
                "input {k} entry {i}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

#[test]
fn matmul_examples() {
    let mut g = Graph::new();
    let i2 = g.constant(Tensor::identity(2));
    let m = g.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let out = g.matmul(i2, m).unwrap();
    assert_eq!(g.value(out), g.value(m));

    let col = g.constant(t(&[&[5.0], &[6.0]]));
    let out = g.matmul(m, col).unwrap();
    assert_eq!(g.value(out).data(), &[17.0, 39.0]);

    let zero = g.constant(Tensor::zeros(2, 3));
    let out = g.matmul(m, zero).unwrap();
    assert!(g.value(out).data().iter().all(|&v| v == 0.0));

    assert!(matches!(g.matmul(col, col), Err(Error::Shape(_))));
}

#[test]
fn large_matmul_matches_naive() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_tensor(&mut rng, 70, 40);
    let b = random_tensor(&mut rng, 40, 50);
    let mut g = Graph::new();
    let (ia, ib) = (g.constant(a.clone()), g.constant(b.clone()));
    let out = g.matmul(ia, ib).unwrap();
    for i in 0..70 {
        for j in 0..50 {
            let expect: f64 = (0..40).map(|p| a.get(i, p) * b.get(p, j)).sum();
            assert!((g.value(out).get(i, j) - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn glu_examples() {
    let mut g = Graph::new();
    let x = g.constant(t(&[&[2.0, 0.0], &[0.0, 0.0], &[3.0, 40.0]]));
    let y = g.glu(x).unwrap();
    let v = g.value(y).data();
    assert_eq!(v[0], 1.0);
    assert_eq!(v[1], 0.0);
    assert!((v[2] - 3.0).abs() < 1e-9);
    let odd = g.constant(Tensor::zeros(1, 3));
    assert!(matches!(g.glu(odd), Err(Error::Shape(_))));
}

#[test]
fn batchnorm_examples() {
    let mut g = Graph::new();
    let ones = g.constant(Tensor::filled(1, 1, 1.0));
    let zeros = g.constant(Tensor::zeros(1, 1));

    let constant = g.constant(t(&[&[4.0], &[4.0], &[4.0]]));
    let mut state = BatchNormState::new(1, 0.3);
    let out = g.batchnorm(constant, ones, zeros, &mut state, Mode::Train).unwrap();
    assert!(g.value(out).data().iter().all(|&v| v == 0.0));

    let x = g.constant(t(&[&[0.0], &[2.0]]));
    let mut state = BatchNormState::new(1, 0.3);
    state.epsilon = 1e-15;
    let out = g.batchnorm(x, ones, zeros, &mut state, Mode::Train).unwrap();
    let v = g.value(out).data();
    assert!((v[0] + 1.0).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);

    let batch = g.constant(t(&[&[9.0], &[11.0]]));
    let mut state = BatchNormState::new(1, 0.3);
    g.batchnorm(batch, ones, zeros, &mut state, Mode::Train).unwrap();
    assert!((state.running_mean[0] - 3.0).abs() < 1e-12);
}

#[test]
fn batchnorm_infer_requires_statistics() {
    let mut g = Graph::new();
    let x = g.constant(t(&[&[1.0]]));
    let ones = g.constant(Tensor::filled(1, 1, 1.0));
    let zeros = g.constant(Tensor::zeros(1, 1));
    let mut state = BatchNormState::new(1, 0.3);
    assert!(matches!(
        g.batchnorm(x, ones, zeros, &mut state, Mode::Infer),
        Err(Error::UninitializedStats)
    ));
}

#[test]
fn batchnorm_train_output_is_standardised() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_tensor(&mut rng, 64, 5);
    let mut g = Graph::new();
    let xi = g.constant(x);
    let ones = g.constant(Tensor::filled(1, 5, 1.0));
    let zeros = g.constant(Tensor::zeros(1, 5));
    let mut state = BatchNormState::new(5, 0.3);
    let out = g.batchnorm(xi, ones, zeros, &mut state, Mode::Train).unwrap();
    let y = g.value(out);
    for j in 0..5 {
        let col: Vec<f64> = (0..64).map(|i| y.get(i, j)).collect();
        let mean = col.iter().sum::<f64>() / 64.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-3);
    }
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = g.param(Tensor::scalar(5.0));
    let p = g.mul(x, y).unwrap();
    g.backward(p).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[5.0]);
    assert_eq!(g.grad(y).unwrap(), &[3.0]);

    let mut g = Graph::new();
    let x = g.param(t(&[&[1.0, 2.0]]));
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);

    assert!(matches!(g.backward(sq), Err(Error::Contract(_))));
}

#[test]
fn softmax_and_cross_entropy_examples() {
    let mut g = Graph::new();
    let u = g.constant(Tensor::filled(1, 5, 0.3));
    let p = g.softmax(u).unwrap();
    assert!(g.value(p).data().iter().all(|&v| (v - 0.2).abs() < 1e-15));

    let z = g.constant(t(&[&[2f64.ln(), 0.0]]));
    let p = g.softmax(z).unwrap();
    assert!((g.value(p).get(0, 0) - 2.0 / 3.0).abs() < 1e-15);

    let sure = g.constant(t(&[&[1000.0, 0.0, 0.0]]));
    let ce = g.cross_entropy(sure, &[0]).unwrap();
    assert_eq!(g.value(ce).get(0, 0), 0.0);
    assert!(matches!(g.cross_entropy(sure, &[3]), Err(Error::Contract(_))));
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut g = Graph::new();
    let x = g.constant(random_tensor(&mut rng, 50, 7));
    let p = g.softmax(x).unwrap();
    for r in g.value(p).iter_rows() {
        assert!(r.iter().all(|&v| v >= 0.0));
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn gradient_check_primitives() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random_tensor(&mut rng, 4, 3);
    let b = random_tensor(&mut rng, 3, 6);
    let bias = random_tensor(&mut rng, 1, 6);
    let w = random_tensor(&mut rng, 4, 6);
    check_gradients(vec![a, b, bias, w], |g, ids| {
        let m = g.matmul(ids[0], ids[1]).unwrap();
        let m = g.add_bias(m, ids[2]).unwrap();
        let gl = g.glu(m).unwrap();
        let s = g.sigmoid(gl);
        let r = g.relu(m);
        let r = g.mul(r, ids[3]).unwrap();
        let r = g.scale_shift(r, 0.7, 0.1);
        let sl = g.slice_cols(r, 1, 3).unwrap();
        let both = g.add(sl, s).unwrap();
        g.sum(both)
    });
}

#[test]
fn gradient_check_batchnorm_and_heads() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_tensor(&mut rng, 6, 4);
    let gamma = random_tensor(&mut rng, 1, 4);
    let beta = random_tensor(&mut rng, 1, 4);
    check_gradients(vec![x.clone(), gamma.clone(), beta.clone()], |g, ids| {
        let mut st = BatchNormState::new(4, 0.3);
        let y = g.batchnorm(ids[0], ids[1], ids[2], &mut st, Mode::Train).unwrap();
        g.cross_entropy(y, &[0, 1, 2, 3, 0, 1]).unwrap()
    });
    check_gradients(vec![x.clone(), gamma, beta], |g, ids| {
        let mut st = BatchNormState::new(4, 0.3);
        st.update(&[0.1, -0.2, 0.3, 0.0], &[1.5, 0.5, 2.0, 1.0]);
        let y = g.batchnorm(ids[0], ids[1], ids[2], &mut st, Mode::Infer).unwrap();
        let p = g.softmax(y).unwrap();
        let sq = g.mul(p, p).unwrap();
        g.mean(sq)
    });
}

#[test]
fn gradient_check_projections_and_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random_tensor(&mut rng, 3, 5);
    let w = random_tensor(&mut rng, 3, 5);
    for proj in [Projection::Softmax, Projection::Entmax(1.5)] {
        check_gradients(vec![x.clone(), w.clone()], move |g, ids| {
            let p = g.project_rows(ids[0], proj).unwrap();
            let e = g.mask_entropy(p);
            let pw = g.mul(p, ids[1]).unwrap();
            let s = g.sum(pw);
            g.add(s, e).unwrap()
        });
    }
}

#[test]
fn replay_is_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random_tensor(&mut rng, 5, 4);
        let w = random_tensor(&mut rng, 4, 4);
        let mut g = Graph::new();
        let xi = g.constant(x);
        let wi = g.param(w);
        let m = g.matmul(xi, wi).unwrap();
        let p = g.project_rows(m, Projection::Entmax(1.5)).unwrap();
        let l = g.mask_entropy(p);
        g.backward(l).unwrap();
        (g.value(p).clone(), g.grad(wi).unwrap().to_vec())
    };
    assert_eq!(run(), run());
}
