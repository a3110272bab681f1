//! Jacobian-vector products of every differentiable op against central
//! finite differences, plus softmax and determinism properties.

use eckpn::tensor::{Graph, Var};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Build = fn(&mut Graph, &[Var]) -> Var;

struct OpCase {
    name: &'static str,
    /// Input shapes given a base (rows, cols).
    shapes: fn(usize, usize) -> Vec<(usize, usize)>,
    /// Maps raw uniform samples into the op's smooth domain.
    domain: fn(f64) -> f64,
    build: Build,
}

fn unrestricted(x: f64) -> f64 {
    x
}
fn positive(x: f64) -> f64 {
    0.5 + x.abs()
}
fn off_zero(x: f64) -> f64 {
    if x >= 0.0 {
        x + 0.05
    } else {
        x - 0.05
    }
}
fn inside_clamp(x: f64) -> f64 {
    // Keeps values away from the [-0.5, 0.5] clamp edges.
    if x.abs() < 0.45 {
        x
    } else {
        x.signum() * (0.55 + x.abs())
    }
}

fn same(r: usize, c: usize) -> Vec<(usize, usize)> {
    vec![(r, c)]
}
fn pair(r: usize, c: usize) -> Vec<(usize, usize)> {
    vec![(r, c), (r, c)]
}

fn cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            shapes: |r, c| vec![(r, c), (c, r + 1)],
            domain: unrestricted,
            build: |g, x| g.matmul(x[0], x[1]).unwrap(),
        },
        OpCase {
            name: "transpose",
            shapes: same,
            domain: unrestricted,
            build: |g, x| g.transpose(x[0]),
        },
        OpCase {
            name: "add",
            shapes: pair,
            domain: unrestricted,
            build: |g, x| g.add(x[0], x[1]).unwrap(),
        },
        OpCase {
            name: "sub",
            shapes: pair,
            domain: unrestricted,
            build: |g, x| g.sub(x[0], x[1]).unwrap(),
        },
        OpCase {
            name: "mul",
            shapes: pair,
            domain: unrestricted,
            build: |g, x| g.mul(x[0], x[1]).unwrap(),
        },
        OpCase {
            name: "square",
            shapes: same,
            domain: unrestricted,
            build: |g, x| g.square(x[0]),
        },
        OpCase {
            name: "scale",
            shapes: same,
            domain: unrestricted,
            build: |g, x| g.scale(x[0], -1.7),
        },
        OpCase {
            name: "add_scalar",
            shapes: same,
            domain: unrestricted,
            build: |g, x| g.add_scalar(x[0], 0.3),
        },
        OpCase {
            name: "one_minus",
            shapes: same,
            domain: unrestricted,
            build: |g, x| g.one_minus(x[0]),
        },
        OpCase {
            name: "concat_cols",
            shapes: |r, c| vec![(r, c), (r, 1), (r, c + 1)],
            domain: unrestricted,
            build: |g, x| g.concat_cols(x).unwrap(),
        },
        OpCase {
            name: "slice_cols",
            shapes: |r, c| vec![(r, c + 2)],
            domain: unrestricted,
            build: |g, x| {
                let c = g.shape(x[0]).1;
                g.slice_cols(x[0], 1, c - 1).unwrap()
            },
        },
        OpCase {
            name: "row_softmax",
            shapes: same,
            domain: unrestricted,
            build: |g, x| g.row_softmax(x[0]),
        },
        OpCase {
            name: "sigmoid",
            shapes: same,
            domain: unrestricted,
            build: |g, x| g.sigmoid(x[0]),
        },
        OpCase {
            name: "leaky_relu",
            shapes: same,
            domain: off_zero,
            build: |g, x| g.leaky_relu(x[0], 0.2),
        },
        OpCase {
            name: "ln",
            shapes: same,
            domain: positive,
            build: |g, x| g.ln(x[0]).unwrap(),
        },
        OpCase {
            name: "sum",
            shapes: same,
            domain: unrestricted,
            build: |g, x| g.sum(x[0]),
        },
        OpCase {
            name: "mean",
            shapes: same,
            domain: unrestricted,
            build: |g, x| g.mean(x[0]),
        },
        OpCase {
            name: "row_sum",
            shapes: same,
            domain: unrestricted,
            build: |g, x| g.row_sum(x[0]),
        },
        OpCase {
            name: "add_row",
            shapes: |r, c| vec![(r, c), (1, c)],
            domain: unrestricted,
            build: |g, x| g.add_row(x[0], x[1]).unwrap(),
        },
        OpCase {
            name: "col_normalize",
            shapes: |r, c| vec![(r + 1, c), (1, c), (1, c)],
            domain: unrestricted,
            build: |g, x| g.col_normalize(x[0], x[1], x[2]).unwrap(),
        },
        OpCase {
            name: "mask",
            shapes: same,
            domain: unrestricted,
            build: |g, x| {
                let (r, c) = g.shape(x[0]);
                let m = Array2::from_shape_fn((r, c), |(i, j)| if (i + j) % 3 == 0 { -1.0 } else { 1.0 });
                g.mask(x[0], &m).unwrap()
            },
        },
        OpCase {
            name: "pair_diff",
            shapes: same,
            domain: unrestricted,
            build: |g, x| g.pair_diff(x[0]),
        },
        OpCase {
            name: "reshape",
            shapes: |r, c| vec![(r, 2 * c)],
            domain: unrestricted,
            build: |g, x| {
                let (r, c) = g.shape(x[0]);
                g.reshape(x[0], 2 * r, c / 2).unwrap()
            },
        },
        OpCase {
            name: "clamp",
            shapes: same,
            domain: inside_clamp,
            build: |g, x| g.clamp(x[0], -0.5, 0.5),
        },
        OpCase {
            name: "affine",
            shapes: |r, c| vec![(r, c), (c, 2), (1, 2)],
            domain: unrestricted,
            build: |g, x| g.affine(x[0], x[1], x[2]).unwrap(),
        },
    ]
}

fn random(rng: &mut ChaCha8Rng, shape: (usize, usize), domain: fn(f64) -> f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || domain(rng.random_range(-2.0..2.0)))
}

/// `<W, f(X)>` for fixed cotangent `W`.
fn contracted(case: &OpCase, inputs: &[Array2<f64>], cotangent: &Array2<f64>) -> (Graph, Var, Vec<Var>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.variable(x.clone())).collect();
    let y = (case.build)(&mut g, &vars);
    let w = g.constant(cotangent.clone());
    let prod = g.mul(y, w).unwrap();
    let s = g.sum(prod);
    (g, s, vars)
}

fn jvp_rel_error(case: &OpCase, seed: u64, rows: usize, cols: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = (case.shapes)(rows, cols);
    let inputs: Vec<Array2<f64>> = shapes.iter().map(|&s| random(&mut rng, s, case.domain)).collect();
    let dirs: Vec<Array2<f64>> = shapes
        .iter()
        .map(|&s| Array2::from_shape_simple_fn(s, || rng.random_range(-1.0..1.0)))
        .collect();
    let out_shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|x| g.variable(x.clone())).collect();
        let y = (case.build)(&mut g, &vars);
        g.shape(y)
    };
    let cot = Array2::from_shape_simple_fn(out_shape, || rng.random_range(-1.0..1.0));

    let (g, root, vars) = contracted(case, &inputs, &cot);
    let grads = g.backward(root).unwrap();
    let analytic: f64 = vars
        .iter()
        .zip(&dirs)
        .map(|(v, u)| (grads.get(*v).unwrap() * u).sum())
        .sum();

    let h = 1e-6;
    let shifted = |sign: f64| -> f64 {
        let moved: Vec<Array2<f64>> = inputs.iter().zip(&dirs).map(|(x, u)| x + &(u * (sign * h))).collect();
        let (g, root, _) = contracted(case, &moved, &cot);
        g.item(root)
    };
    let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * h);
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn every_op_jvp_matches_finite_differences(seed in any::<u64>(), rows in 1usize..5, cols in 1usize..5) {
        for case in cases() {
            let err = jvp_rel_error(&case, seed, rows, cols);
            prop_assert!(err <= 1e-4, "{}: relative error {err:e}", case.name);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-10.0..10.0));
        let mut g = Graph::new();
        let v = g.constant(x);
        let s = g.row_softmax(v);
        for row in g.value(s).rows() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&p| p > 0.0 && p < 1.0 || cols == 1 && p == 1.0));
        }
    }

    #[test]
    fn leaky_relu_is_exact(x in -1e6f64..1e6, slope in 0.0f64..1.0) {
        let mut g = Graph::new();
        let v = g.constant(Array2::from_elem((1, 1), x));
        let y = g.leaky_relu(v, slope);
        let expect = if x >= 0.0 { x } else { slope * x };
        prop_assert_eq!(g.item(y), expect);
    }
}

#[test]
fn each_op_checked_on_one_hundred_seeds() {
    for case in cases() {
        for seed in 0..100u64 {
            let rows = 1 + (seed % 4) as usize;
            let cols = 1 + (seed / 4 % 4) as usize;
            let err = jvp_rel_error(&case, seed, rows, cols);
            assert!(err <= 1e-4, "{} seed {seed}: {err:e}", case.name);
        }
    }
}

#[test]
fn backward_is_bit_identical_across_runs() {
    let case = &cases()[19]; // col_normalize
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs: Vec<Array2<f64>> = (case.shapes)(4, 3).iter().map(|&s| random(&mut rng, s, unrestricted)).collect();
    let cot = Array2::from_shape_simple_fn((5, 3), || rng.random_range(-1.0..1.0));
    let run = || {
        let (g, root, vars) = contracted(case, &inputs, &cot);
        let grads = g.backward(root).unwrap();
        vars.iter().map(|v| grads.get(*v).unwrap().clone()).collect::<Vec<_>>()
    };
    let (a, b) = (run(), run());
    for (x, y) in a.iter().zip(&b) {
        assert!(x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
