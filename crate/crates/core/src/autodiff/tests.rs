use super::*;

fn assert_close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
}

#[test]
fn relu_backward_gates_negative_inputs() {
    let g = Graph::new();
    let x = g.leaf(Tensor::vector(vec![-1.0, 2.0]));
    let y = g.relu(x);
    let s0 = g.select(y, 0).unwrap();
    let s1 = g.select(y, 1).unwrap();
    let loss = g.sum_many(&[s0, s1]).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0]);
}

#[test]
fn softmax_of_equal_scores_is_uniform() {
    let g = Graph::new();
    let x = g.leaf(Tensor::vector(vec![0.0, 0.0]));
    let y = g.softmax(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 0.5]);
}

#[test]
fn sum_of_parameter_has_unit_gradient() {
    let g = Graph::new();
    let p = g.leaf(Tensor::vector(vec![1.0, -2.0, 0.5]));
    let parts: Vec<_> = (0..3).map(|i| g.select(p, i).unwrap()).collect();
    let loss = g.sum_many(&parts).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(p).unwrap().data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn zero_scaled_loss_has_zero_gradient() {
    let g = Graph::new();
    let p = g.leaf(Tensor::vector(vec![1.0, -2.0]));
    let s = g.select(p, 0).unwrap();
    let loss = g.scale(s, 0.0);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(p).unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let g = Graph::new();
    let p = g.leaf(Tensor::vector(vec![1.0, 2.0]));
    assert!(g.backward(p).is_err());
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let g = Graph::new();
    let a = g.leaf(Tensor::vector(vec![1.0, 2.0]));
    let b = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let err = g.add(a, b).unwrap_err().to_string();
    assert!(err.contains("[2]") && err.contains("[3]"), "{}", err);
}

#[test]
fn repeated_backward_accumulates() {
    let g = Graph::new();
    let p = g.leaf(Tensor::vector(vec![4.0]));
    let loss = g.select(p, 0).unwrap();
    g.backward(loss).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(p).unwrap().data(), &[2.0]);
}

/// Central-difference gradient of a scalar function of a flat input.
fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut hi = x.to_vec();
            let mut lo = x.to_vec();
            hi[i] += h;
            lo[i] -= h;
            (f(&hi) - f(&lo)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn mix_value_and_eta_gradient_match_finite_differences() {
    let rows = vec![0.0, 0.0, 2.0, 4.0];
    let eta0 = [0.0, 0.0];
    let eval = |eta: &[f64], coord: usize| -> f64 {
        let g = Graph::new();
        let emb = g.leaf(Tensor::matrix(2, 2, rows.clone()).unwrap());
        let e = g.leaf(Tensor::vector(eta.to_vec()));
        let v = g.mix(emb, e, &[0, 1], u32::MAX).unwrap();
        g.value(v).data()[coord]
    };
    // Value at eta = (0,0) is the midpoint (1,2).
    assert_close(eval(&eta0, 0), 1.0, 1e-12);
    assert_close(eval(&eta0, 1), 2.0, 1e-12);

    for coord in 0..2 {
        let g = Graph::new();
        let emb = g.leaf(Tensor::matrix(2, 2, rows.clone()).unwrap());
        let e = g.leaf(Tensor::vector(eta0.to_vec()));
        let v = g.mix(emb, e, &[0, 1], u32::MAX).unwrap();
        let loss = g.select(v, coord).unwrap();
        g.backward(loss).unwrap();
        let analytic = g.grad(e).unwrap();
        let numeric = fd_grad(|eta| eval(eta, coord), &eta0, 1e-5);
        for (a, n) in analytic.data().iter().zip(&numeric) {
            assert_close(*a, *n, 1e-8);
        }
    }
}

#[test]
fn two_layer_network_gradients_match_finite_differences() {
    use rand::Rng;
    let mut rng = crate::seeding::rng(1234);
    let dims = (3usize, 4usize, 2usize); // in, hidden, out
    let n_w1 = dims.0 * dims.1;
    let n_w2 = dims.1 * dims.2;
    let mut theta: Vec<f64> = (0..n_w1 + dims.1 + n_w2 + dims.2 + dims.0)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    // Avoid relu kinks near zero for the finite-difference probe.
    for t in &mut theta {
        if t.abs() < 1e-3 {
            *t += 2e-3;
        }
    }
    let eval = |theta: &[f64]| -> f64 {
        let (w1, rest) = theta.split_at(n_w1);
        let (b1, rest) = rest.split_at(dims.1);
        let (w2, rest) = rest.split_at(n_w2);
        let (b2, x) = rest.split_at(dims.2);
        let g = Graph::new();
        let xn = g.leaf(Tensor::vector(x.to_vec()));
        let w1n = g.leaf(Tensor::matrix(dims.0, dims.1, w1.to_vec()).unwrap());
        let b1n = g.leaf(Tensor::vector(b1.to_vec()));
        let w2n = g.leaf(Tensor::matrix(dims.1, dims.2, w2.to_vec()).unwrap());
        let b2n = g.leaf(Tensor::vector(b2.to_vec()));
        let h = g.matmul(xn, w1n).unwrap();
        let h = g.add(h, b1n).unwrap();
        let h = g.relu(h);
        let o = g.matmul(h, w2n).unwrap();
        let o = g.add(o, b2n).unwrap();
        let p = g.softmax(o).unwrap();
        let l = g.log(p);
        let s = g.select(l, 0).unwrap();
        g.value(g.scale(s, -1.0)).item()
    };

    // Analytic gradients via one graph over all leaves.
    let (w1, rest) = theta.split_at(n_w1);
    let (b1, rest) = rest.split_at(dims.1);
    let (w2, rest) = rest.split_at(n_w2);
    let (b2, x) = rest.split_at(dims.2);
    let g = Graph::new();
    let xn = g.leaf(Tensor::vector(x.to_vec()));
    let w1n = g.leaf(Tensor::matrix(dims.0, dims.1, w1.to_vec()).unwrap());
    let b1n = g.leaf(Tensor::vector(b1.to_vec()));
    let w2n = g.leaf(Tensor::matrix(dims.1, dims.2, w2.to_vec()).unwrap());
    let b2n = g.leaf(Tensor::vector(b2.to_vec()));
    let h = g.matmul(xn, w1n).unwrap();
    let h = g.add(h, b1n).unwrap();
    let h = g.relu(h);
    let o = g.matmul(h, w2n).unwrap();
    let o = g.add(o, b2n).unwrap();
    let p = g.softmax(o).unwrap();
    let l = g.log(p);
    let s = g.select(l, 0).unwrap();
    let loss = g.scale(s, -1.0);
    g.backward(loss).unwrap();

    let mut analytic = Vec::new();
    for n in [w1n, b1n, w2n, b2n, xn] {
        analytic.extend_from_slice(g.grad(n).unwrap().data());
    }
    // fd_grad perturbs the flat theta; reorder to match (w1,b1,w2,b2,x).
    let numeric = fd_grad(eval, &theta, 1e-5);
    for (a, n) in analytic.iter().zip(&numeric) {
        let rel = (a - n).abs() / f64::max(1.0, a.abs());
        assert!(rel < 1e-4, "analytic {} vs fd {}", a, n);
    }
}

/// Brute-force oracle: the gradient of a DAG output w.r.t. a leaf equals the
/// sum over all paths of the product of local partials. Recursion without
/// memoization enumerates exactly those paths.
#[test]
fn shared_subexpression_gradient_equals_path_sum() {
    #[derive(Clone)]
    struct Edge {
        child: usize,
        partial: f64,
    }
    // consumers[n] = edges from n upward toward the loss
    fn path_sum(n: usize, loss: usize, consumers: &[Vec<Edge>]) -> f64 {
        if n == loss {
            return 1.0;
        }
        consumers[n]
            .iter()
            .map(|e| e.partial * path_sum(e.child, loss, consumers))
            .sum()
    }

    // Graph: a, b leaves; c = a*b; d = c+c; e = d*c; loss = e
    let (av, bv) = (2.0, 3.0);
    let g = Graph::new();
    let a = g.leaf(Tensor::scalar(av));
    let b = g.leaf(Tensor::scalar(bv));
    let c = g.mul(a, b).unwrap();
    let d = g.add(c, c).unwrap();
    let e = g.mul(d, c).unwrap();
    g.backward(e).unwrap();

    let cv = av * bv;
    let dv = 2.0 * cv;
    // node ids: a=0 b=1 c=2 d=3 e=4
    let mut consumers: Vec<Vec<Edge>> = vec![Vec::new(); 5];
    consumers[0].push(Edge { child: 2, partial: bv });
    consumers[1].push(Edge { child: 2, partial: av });
    consumers[2].push(Edge { child: 3, partial: 1.0 }); // two parallel edges c -> d
    consumers[2].push(Edge { child: 3, partial: 1.0 });
    consumers[2].push(Edge { child: 4, partial: dv }); // e = d*c
    consumers[3].push(Edge { child: 4, partial: cv });

    assert_close(g.grad(a).unwrap().item(), path_sum(0, 4, &consumers), 1e-12);
    assert_close(g.grad(b).unwrap().item(), path_sum(1, 4, &consumers), 1e-12);
    assert_close(g.grad(c).unwrap().item(), path_sum(2, 4, &consumers), 1e-12);
    assert_close(g.grad(d).unwrap().item(), path_sum(3, 4, &consumers), 1e-12);
}

#[test]
fn gather_skips_pad_row_gradient() {
    let g = Graph::new();
    let emb = g.leaf(Tensor::matrix(3, 2, vec![0.0, 0.0, 1.0, 2.0, 3.0, 4.0]).unwrap());
    let seq = g.gather(emb, &[0, 2], 0).unwrap();
    let pooled = g.mean_seq(seq, &[true, true]).unwrap();
    let loss = g.select(pooled, 0).unwrap();
    g.backward(loss).unwrap();
    let grad = g.grad(emb).unwrap();
    assert_eq!(grad.row(0), &[0.0, 0.0]); // PAD row masked
    assert_eq!(grad.row(2), &[0.5, 0.0]);
}

#[test]
fn max_pool_routes_gradient_to_argmax() {
    let g = Graph::new();
    let x = g.leaf(Tensor::matrix(3, 2, vec![1.0, 9.0, 5.0, 2.0, 4.0, 7.0]).unwrap());
    let pooled = g.max_pool_seq(x, &[true, true, false]).unwrap();
    assert_eq!(g.value(pooled).data(), &[5.0, 9.0]); // masked position 2 ignored
    let s0 = g.select(pooled, 0).unwrap();
    let s1 = g.select(pooled, 1).unwrap();
    let loss = g.sum_many(&[s0, s1]).unwrap();
    g.backward(loss).unwrap();
    let grad = g.grad(x).unwrap();
    assert_eq!(grad.data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
}
