//! Analytic adjoints against central finite differences, 100 random
//! instances per differentiable op.

use rand::Rng as _;
use rtpipe::numerics::{Rng, RngStream, Tape, Tensor, Var};

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;

type Build<'a> = dyn Fn(&mut Tape, &[Var]) -> Var + 'a;

fn random(rng: &mut Rng, m: usize, n: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(vec![m, n], (0..m * n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Loss = Σ op(inputs) ⊙ R with a fixed random R so every output entry
/// carries a distinct adjoint.
fn loss_value(build: &Build<'_>, inputs: &[Tensor], weights: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    tape.value(out).mul(weights).unwrap().sum()
}

fn check(name: &str, build: &Build<'_>, inputs: Vec<Tensor>, rng: &mut Rng) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let shape = tape.value(out).shape().to_vec();
    let weights = random(rng, shape[0], shape[1], -1.0, 1.0);
    let w = tape.leaf(weights.clone());
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum(prod).unwrap();
    let grads = tape.backward(loss).unwrap();

    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]);
        let mut numeric = vec![0.0; input.len()];
        for j in 0..input.len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= H;
            numeric[j] = (loss_value(build, &plus, &weights) - loss_value(build, &minus, &weights))
                / (2.0 * H);
        }
        let numeric = Tensor::new(input.shape().to_vec(), numeric).unwrap();
        let err = analytic.sub(&numeric).unwrap().norm()
            / analytic.norm().max(numeric.norm()).max(1e-8);
        assert!(err < TOL, "{name}: input {i} relative error {err}");
    }
}

fn away_from(rng: &mut Rng, m: usize, n: usize, points: &[f64]) -> Tensor {
    let mut t = random(rng, m, n, -2.0, 2.0);
    for v in t.data_mut() {
        while points.iter().any(|p| (*v - p).abs() < 1e-3) {
            *v = rng.random_range(-2.0..2.0);
        }
    }
    t
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = RngStream::new(2024).rng();
    for _ in 0..100 {
        let (m, k, n) =
            (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
        let a = random(&mut rng, m, k, -2.0, 2.0);
        let b = random(&mut rng, k, n, -2.0, 2.0);
        check("matmul", &|t, v| t.matmul(v[0], v[1]).unwrap(), vec![a.clone(), b], &mut rng);

        let x = random(&mut rng, m, k, -2.0, 2.0);
        let y = random(&mut rng, m, k, -2.0, 2.0);
        check("add", &|t, v| t.add(v[0], v[1]).unwrap(), vec![x.clone(), y.clone()], &mut rng);
        check("sub", &|t, v| t.sub(v[0], v[1]).unwrap(), vec![x.clone(), y.clone()], &mut rng);
        check("mul", &|t, v| t.mul(v[0], v[1]).unwrap(), vec![x.clone(), y.clone()], &mut rng);
        let bias = random(&mut rng, 1, k, -1.0, 1.0);
        check("add_row", &|t, v| t.add_row(v[0], v[1]).unwrap(), vec![x.clone(), bias], &mut rng);
        check("scale", &|t, v| t.scale(v[0], -1.7).unwrap(), vec![x.clone()], &mut rng);
        check("add_scalar", &|t, v| t.add_scalar(v[0], 0.3).unwrap(), vec![x.clone()], &mut rng);
        check("tanh", &|t, v| t.tanh(v[0]).unwrap(), vec![x.clone()], &mut rng);
        check("exp", &|t, v| t.exp(v[0]).unwrap(), vec![x.clone()], &mut rng);
        check("softplus", &|t, v| t.softplus(v[0]).unwrap(), vec![x.clone()], &mut rng);
        check("square", &|t, v| t.square(v[0]).unwrap(), vec![x.clone()], &mut rng);
        let pos = random(&mut rng, m, k, 0.2, 3.0);
        check("log", &|t, v| t.log(v[0]).unwrap(), vec![pos], &mut rng);
        check("softmax_rows", &|t, v| t.softmax_rows(v[0]).unwrap(), vec![x.clone()], &mut rng);
        check(
            "log_softmax_rows",
            &|t, v| t.log_softmax_rows(v[0]).unwrap(),
            vec![x.clone()],
            &mut rng,
        );
        check("sum", &|t, v| t.sum(v[0]).unwrap(), vec![x.clone()], &mut rng);
        check("mean", &|t, v| t.mean(v[0]).unwrap(), vec![x.clone()], &mut rng);
        check("sum_cols", &|t, v| t.sum_cols(v[0]).unwrap(), vec![x.clone()], &mut rng);
        check(
            "concat_cols",
            &|t, v| t.concat_cols(&[v[0], v[1], v[0]]).unwrap(),
            vec![x.clone(), y.clone()],
            &mut rng,
        );
        let (s, e) = {
            let s = rng.random_range(0..k);
            (s, rng.random_range(s + 1..=k))
        };
        check("slice_cols", &|t, v| t.slice_cols(v[0], s, e).unwrap(), vec![x.clone()], &mut rng);
        let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
        check("gather_cols", &|t, v| t.gather_cols(v[0], &idx).unwrap(), vec![x.clone()], &mut rng);

        let kinked = away_from(&mut rng, m, k, &[0.0, -0.8, 0.9]);
        check("relu", &|t, v| t.relu(v[0]).unwrap(), vec![kinked.clone()], &mut rng);
        check("clamp", &|t, v| t.clamp(v[0], -0.8, 0.9).unwrap(), vec![kinked], &mut rng);
        let mut y2 = y.clone();
        for (a, b) in y2.data_mut().iter_mut().zip(x.data()) {
            if (*a - b).abs() < 1e-3 {
                *a += 0.01;
            }
        }
        check("minimum", &|t, v| t.minimum(v[0], v[1]).unwrap(), vec![x, y2], &mut rng);
    }
}

#[test]
fn traced_replay_is_bit_identical() {
    let run = || {
        let mut rng = RngStream::new(99).rng();
        let a = random(&mut rng, 6, 5, -1.0, 1.0);
        let w = random(&mut rng, 5, 3, -1.0, 1.0);
        let mut tape = Tape::new();
        let av = tape.leaf(a);
        let wv = tape.leaf(w);
        let h = tape.matmul(av, wv).unwrap();
        let h = tape.tanh(h).unwrap();
        let s = tape.log_softmax_rows(h).unwrap();
        let loss = tape.sum(s).unwrap();
        let g = tape.backward(loss).unwrap();
        (tape.value(loss).clone(), g.get(wv))
    };
    let (l1, g1) = run();
    let (l2, g2) = run();
    assert_eq!(l1.data()[0].to_bits(), l2.data()[0].to_bits());
    assert!(g1.data().iter().zip(g2.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}
