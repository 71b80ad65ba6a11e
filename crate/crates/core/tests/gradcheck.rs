//! Finite-difference oracles for every differentiable operation.
//!
//! Each test scalarizes the op output with a fixed random weighting (so
//! misrouted gradients cannot cancel), computes the analytic gradient
//! with one backward pass, and compares against central differences.
//! The checker only evaluates forward passes, so these oracles are
//! independent of the backward rules they verify.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempagg::tensor::gradcheck::{check_gradients, random_tensor};
use tempagg::tensor::{Graph, Tensor, TensorError, Var};

const SIMPLE_TOL: f64 = 1e-5;
const COMPOSITE_TOL: f64 = 1e-4;

/// `sum(flatten(out) . w)` with fixed weights.
fn scalarize(g: &mut Graph<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var, TensorError> {
    let n = g.value(out).numel();
    let flat = g.reshape(out, vec![1, n])?;
    let w = g.leaf(weights, false);
    let s = g.matmul(flat, w)?;
    Ok(g.sum(s))
}

/// Runs the oracle for one op: `build` maps leaf vars (one per input
/// tensor, all requiring grad) to the op output.
fn assert_op_gradients<B>(
    name: &str,
    inputs: Vec<Tensor<f64>>,
    build: B,
    tol: f64,
    seed: u64,
) where
    B: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Forward once to size the weights, then freeze them.
    let weights = {
        let mut g: Graph<f64> = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t, true)).collect();
        let out = build(&mut g, &vars).expect("forward");
        random_tensor(vec![g.value(out).numel(), 1], 1.0, &mut rng)
    };

    // Analytic gradients.
    let mut g: Graph<f64> = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t, true)).collect();
    let out = build(&mut g, &vars).expect("forward");
    let loss = scalarize(&mut g, out, &weights).expect("scalarize");
    g.backward(loss).expect("backward");
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| {
            g.take_grad(v)
                .unwrap_or_else(|| vec![0.0; g.value(v).numel()])
        })
        .collect();
    drop(g);

    let names: Vec<String> = (0..inputs.len()).map(|i| format!("{name}[{i}]")).collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut tensors = inputs;
    let loss_fn = |ts: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut g: Graph<f64> = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.leaf(t, true)).collect();
        let out = build(&mut g, &vars)?;
        let loss = scalarize(&mut g, out, &weights)?;
        Ok(g.value(loss).data()[0])
    };
    let report = check_gradients(&name_refs, &mut tensors, &analytic, loss_fn, 0, &mut rng)
        .expect("finite differences");
    assert!(
        report.max_rel_err < tol,
        "{name}: max rel err {:.3e} at {:?} over {} coords",
        report.max_rel_err,
        report.worst,
        report.coords_checked
    );
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn matmul_gradients_match_finite_differences() {
    let mut r = rng(10);
    let a = random_tensor(vec![3, 4], 1.0, &mut r);
    let b = random_tensor(vec![4, 2], 1.0, &mut r);
    assert_op_gradients("matmul", vec![a, b], |g, v| g.matmul(v[0], v[1]), SIMPLE_TOL, 11);
}

#[test]
fn transpose_gradients_match_finite_differences() {
    let mut r = rng(12);
    let x = random_tensor(vec![3, 5], 1.0, &mut r);
    assert_op_gradients("transpose", vec![x], |g, v| g.transpose(v[0]), SIMPLE_TOL, 13);
}

#[test]
fn softmax_rows_gradients_match_finite_differences() {
    let mut r = rng(14);
    let x = random_tensor(vec![2, 5], 2.0, &mut r);
    assert_op_gradients("softmax_rows", vec![x], |g, v| g.softmax_rows(v[0]), SIMPLE_TOL, 15);
}

#[test]
fn softmax_rows_sum_to_one_on_random_inputs() {
    let mut r = rng(16);
    for _ in 0..100 {
        let x = random_tensor(vec![2, 5], 50.0, &mut r);
        let mut g: Graph<f64> = Graph::new();
        let xv = g.leaf(&x, false);
        let y = g.softmax_rows(xv).unwrap();
        for row in 0..2 {
            let sum: f64 = g.value(y).data()[row * 5..(row + 1) * 5].iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn softmax_rows_shift_invariant_per_row() {
    let mut r = rng(17);
    let x = random_tensor(vec![3, 4], 3.0, &mut r);
    let shifted = Tensor::new(
        vec![3, 4],
        x.data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + 17.5 * ((i / 4) as f64 + 1.0))
            .collect(),
    )
    .unwrap();
    let mut g: Graph<f64> = Graph::new();
    let a = g.leaf(&x, false);
    let b = g.leaf(&shifted, false);
    let ya = g.softmax_rows(a).unwrap();
    let yb = g.softmax_rows(b).unwrap();
    for (p, q) in g.value(ya).data().iter().zip(g.value(yb).data()) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn relu_gradients_match_finite_differences() {
    // Keep values away from the kink at zero.
    let data: Vec<f64> = vec![1.5, -0.5, 0.3, -2.0, 0.9, -0.4];
    let x = Tensor::new(vec![2, 3], data).unwrap();
    assert_op_gradients("relu", vec![x], |g, v| Ok(g.relu(v[0])), SIMPLE_TOL, 19);
}

#[test]
fn add_gradients_match_finite_differences() {
    let mut r = rng(20);
    let a = random_tensor(vec![3, 3], 1.0, &mut r);
    let b = random_tensor(vec![3, 3], 1.0, &mut r);
    assert_op_gradients("add", vec![a, b], |g, v| g.add(v[0], v[1]), SIMPLE_TOL, 21);
}

#[test]
fn add_bias_gradients_match_finite_differences() {
    let mut r = rng(22);
    let x = random_tensor(vec![4, 3], 1.0, &mut r);
    let bias = random_tensor(vec![3], 1.0, &mut r);
    assert_op_gradients("add_bias", vec![x, bias], |g, v| g.add_bias(v[0], v[1]), SIMPLE_TOL, 23);
}

#[test]
fn concat_gradients_match_finite_differences() {
    let mut r = rng(24);
    let a = random_tensor(vec![2, 3], 1.0, &mut r);
    let b = random_tensor(vec![2, 3], 1.0, &mut r);
    let c = random_tensor(vec![1, 3], 1.0, &mut r);
    assert_op_gradients(
        "concat_axis0",
        vec![a.clone(), b.clone(), c],
        |g, v| g.concat(v, 0),
        SIMPLE_TOL,
        25,
    );
    let d = random_tensor(vec![2, 2], 1.0, &mut r);
    assert_op_gradients(
        "concat_axis1",
        vec![a, b, d],
        |g, v| g.concat(v, 1),
        SIMPLE_TOL,
        26,
    );
}

#[test]
fn scale_gradients_match_finite_differences() {
    let mut r = rng(27);
    let x = random_tensor(vec![2, 4], 1.0, &mut r);
    assert_op_gradients("scale", vec![x], |g, v| Ok(g.scale(v[0], -1.7)), SIMPLE_TOL, 28);
}

#[test]
fn max_over_axis_gradients_match_finite_differences() {
    // Continuous random draws: ties have probability zero and entries
    // are separated enough for the epsilon perturbation.
    let mut r = rng(29);
    for axis in 0..3 {
        let x = random_tensor(vec![3, 4, 2], 5.0, &mut r);
        assert_op_gradients(
            "max_over_axis",
            vec![x],
            move |g, v| g.max_over_axis(v[0], axis),
            SIMPLE_TOL,
            30 + axis as u64,
        );
    }
}

#[test]
fn max_over_axis_matches_brute_force_on_random_tensors() {
    use rand::Rng;
    let mut r = rng(33);
    for _ in 0..200 {
        let rank = r.random_range(1..=3usize);
        let shape: Vec<usize> = (0..rank).map(|_| r.random_range(1..5usize)).collect();
        let x = random_tensor(shape.clone(), 3.0, &mut r);
        let axis = r.random_range(0..rank);

        let mut g: Graph<f64> = Graph::new();
        let xv = g.leaf(&x, false);
        let y = g.max_over_axis(xv, axis).unwrap();

        // Brute-force loop oracle over every output coordinate.
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let extent = shape[axis];
        let mut expect = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = f64::NEG_INFINITY;
                for k in 0..extent {
                    best = best.max(x.data()[o * extent * inner + k * inner + i]);
                }
                expect.push(best);
            }
        }
        assert_eq!(g.value(y).data(), expect.as_slice());
    }
}

#[test]
fn dropout_gradients_match_finite_differences_with_frozen_mask() {
    let mut r = rng(34);
    let x = random_tensor(vec![4, 4], 1.0, &mut r);
    // Recreate the same mask on every forward evaluation.
    assert_op_gradients(
        "dropout",
        vec![x],
        |g, v| {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(77);
            g.dropout(v[0], 0.3, true, &mut mask_rng)
        },
        SIMPLE_TOL,
        35,
    );
}

#[test]
fn cross_entropy_gradients_match_finite_differences() {
    let mut r = rng(36);
    let logits = random_tensor(vec![3, 5], 2.0, &mut r);
    let labels = vec![0usize, 4, 2];
    // Cross-entropy is already scalar; check it directly without the
    // scalarizer.
    let mut g: Graph<f64> = Graph::new();
    let lv = g.leaf(&logits, true);
    let loss = g.cross_entropy(lv, &labels).unwrap();
    g.backward(loss).unwrap();
    let analytic = vec![g.take_grad(lv).unwrap()];
    drop(g);

    let mut tensors = vec![logits];
    let labels_for_closure = labels.clone();
    let loss_fn = |ts: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut g: Graph<f64> = Graph::new();
        let lv = g.leaf(&ts[0], true);
        let loss = g.cross_entropy(lv, &labels_for_closure)?;
        Ok(g.value(loss).data()[0])
    };
    let report = check_gradients(&["logits"], &mut tensors, &analytic, loss_fn, 0, &mut r).unwrap();
    assert!(report.max_rel_err < SIMPLE_TOL, "{:?}", report);
}

#[test]
fn sum_and_reshape_gradients_match_finite_differences() {
    let mut r = rng(38);
    let x = random_tensor(vec![2, 6], 1.0, &mut r);
    assert_op_gradients(
        "reshape",
        vec![x.clone()],
        |g, v| g.reshape(v[0], vec![3, 4]),
        SIMPLE_TOL,
        39,
    );

    // sum: gradient is all ones.
    let mut g: Graph<f64> = Graph::new();
    let xv = g.leaf(&x, true);
    let s = g.sum(xv);
    g.backward(s).unwrap();
    assert_eq!(g.take_grad(xv).unwrap(), vec![1.0; 12]);
}

#[test]
fn nlb_composite_gradients_match_finite_differences() {
    // Full non-local block (q=2, k=5, d=8) checked end to end through
    // the model's own forward, perturbing the block parameters.
    use tempagg::model::{gradcheck_config, nlb_forward, ModelParams};

    let config = gradcheck_config();
    let params = ModelParams::<f64>::init(config, 42).unwrap();
    let mut r = rng(43);
    let query = random_tensor(vec![2, 8], 1.0, &mut r);
    let context = random_tensor(vec![5, 8], 1.0, &mut r);
    let weights = random_tensor(vec![16, 1], 1.0, &mut r);

    let forward = |model: &ModelParams<f64>| -> Result<(Graph<f64>, Var, Vec<Var>), TensorError> {
        let mut g: Graph<f64> = Graph::new();
        let bound = model.bind(&mut g, true);
        let q = g.leaf(&query, false);
        let c = g.leaf(&context, false);
        let mut mask_rng = ChaCha8Rng::seed_from_u64(7);
        let nlb = &bound.tabs[0].couplers[0].span_self;
        let out = nlb_forward(&mut g, nlb, q, c, 0.3, true, &mut mask_rng).map_err(|e| match e {
            tempagg::model::ModelError::Tensor(t) => t,
            other => panic!("unexpected model error {other}"),
        })?;
        let loss = scalarize(&mut g, out.out, &weights)?;
        Ok((g, loss, bound.params))
    };

    let (mut g, loss, vars) = forward(&params).unwrap();
    g.backward(loss).unwrap();
    // Only the first NLB's eight tensors carry gradient; check those.
    let named = params.named_tensors();
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    let mut analytic = Vec::new();
    for (i, (name, t)) in named.iter().enumerate() {
        if name.starts_with("tab0.cb0.span_self") {
            names.push(name.clone());
            tensors.push((*t).clone());
            analytic.push(
                g.take_grad(vars[i])
                    .unwrap_or_else(|| vec![0.0; t.numel()]),
            );
        }
    }
    assert_eq!(tensors.len(), 8);
    drop(g);

    let template = params.clone();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let loss_fn = |ts: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut model = template.clone();
        {
            let nlb = &mut model.tabs[0].couplers[0].span_self;
            let slots = [
                &mut nlb.query.weight,
                &mut nlb.query.bias,
                &mut nlb.key.weight,
                &mut nlb.key.bias,
                &mut nlb.value.weight,
                &mut nlb.value.bias,
                &mut nlb.output.weight,
                &mut nlb.output.bias,
            ];
            for (slot, t) in slots.into_iter().zip(ts) {
                *slot = t.clone();
            }
        }
        let (g, loss, _) = forward(&model)?;
        Ok(g.value(loss).data()[0])
    };
    let report =
        check_gradients(&name_refs, &mut tensors, &analytic, loss_fn, 0, &mut r).unwrap();
    assert!(
        report.max_rel_err < COMPOSITE_TOL,
        "NLB composite: {:.3e} at {:?}",
        report.max_rel_err,
        report.worst
    );
}

#[test]
fn full_model_gradcheck_is_tight() {
    let report = tempagg::model::gradcheck_model(3, 6).unwrap();
    assert!(
        report.max_rel_err < COMPOSITE_TOL,
        "max rel err {:.3e} at {:?}",
        report.max_rel_err,
        report.worst
    );
    assert!(report.coords_checked >= 50);
}
