//! Finite-difference cases shared by the gradient tests and the acceptance run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wcr::diff::{grad_check, Tape, Tensor, Unary, Var};
use wcr::renderer::EaComposite;
use wcr::Result;

pub const STEP: f64 = 1e-5;

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

pub struct Case {
    pub name: String,
    pub build: Build,
    pub inputs: Vec<Tensor>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Away from zero on either side, so kinks stay out of reach of the step.
fn signed(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut t = uniform(rng, shape, lo, hi);
    for v in t.data_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Contracts the output with fixed random weights so every adjoint entry
/// differs.
fn probe(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let w = uniform(&mut ChaCha8Rng::seed_from_u64(seed), &shape, 0.5, 1.5);
    let w = tape.constant(w);
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

fn case(name: impl Into<String>, inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> Case {
    let name = name.into();
    let seed = name.bytes().map(u64::from).sum();
    Case {
        name,
        inputs,
        build: Box::new(move |tape, v| {
            let out = f(tape, v)?;
            probe(tape, out, seed)
        }),
    }
}

fn unary(name: &'static str, kind: Unary, x: Tensor) -> Case {
    case(name, vec![x], move |t, v| t.unary(kind, v[0]))
}

/// One case per differentiable primitive, with broadcast variants of the
/// binary ops.
pub fn primitive_cases(seed: u64) -> Vec<Case> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut r;
    let mut cases = Vec::new();
    let ops: [(&str, fn(&mut Tape, Var, Var) -> Result<Var>); 4] = [
        ("add", Tape::add),
        ("sub", Tape::sub),
        ("mul", Tape::mul),
        ("div", Tape::div),
    ];
    for (name, op) in ops {
        for (suffix, b_shape) in [("", [3, 4]), ("_row", [1, 4]), ("_col", [3, 1]), ("_scalar", [1, 1])] {
            let a = signed(r, &[3, 4], 0.2, 2.0);
            let b = signed(r, &b_shape, 0.5, 2.0);
            cases.push(case(format!("{name}{suffix}"), vec![a, b], move |t, v| op(t, v[0], v[1])));
        }
    }
    cases.push(unary("neg", Unary::Neg, signed(r, &[2, 5], 0.1, 2.0)));
    cases.push(unary("sin", Unary::Sin, uniform(r, &[2, 5], -3.0, 3.0)));
    cases.push(unary("cos", Unary::Cos, uniform(r, &[2, 5], -3.0, 3.0)));
    cases.push(unary("exp", Unary::Exp, uniform(r, &[2, 5], -2.0, 2.0)));
    cases.push(unary("log", Unary::Log, uniform(r, &[2, 5], 0.2, 3.0)));
    cases.push(unary("sqrt", Unary::Sqrt, uniform(r, &[2, 5], 0.2, 3.0)));
    cases.push(unary("square", Unary::Square, signed(r, &[2, 5], 0.1, 2.0)));
    cases.push(unary("sigmoid", Unary::Sigmoid, uniform(r, &[2, 5], -4.0, 4.0)));
    cases.push(unary("softplus", Unary::Softplus, uniform(r, &[2, 5], -4.0, 4.0)));
    cases.push(unary("squareplus", Unary::Squareplus, uniform(r, &[2, 5], -4.0, 4.0)));
    cases.push(unary("relu", Unary::Relu, signed(r, &[2, 5], 0.1, 2.0)));
    cases.push(unary("affine", Unary::Affine(-1.7, 0.3), uniform(r, &[2, 5], -2.0, 2.0)));
    // Inside and outside the band, never near its edges.
    let clamp_in = Tensor::new(vec![2, 3], vec![-1.4, -0.5, 0.2, 0.9, 1.3, 2.2]).unwrap();
    cases.push(unary("clamp", Unary::Clamp(-1.0, 1.0), clamp_in));

    cases.push(case("matmul", vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4, 2], -1.0, 1.0)], |t, v| t.matmul(v[0], v[1])));
    cases.push(case(
        "linear",
        vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4, 2], -1.0, 1.0), uniform(r, &[1, 2], -1.0, 1.0)],
        |t, v| t.linear(v[0], v[1], v[2]),
    ));
    cases.push(case("sum", vec![uniform(r, &[3, 4], -1.0, 1.0)], |t, v| t.sum(v[0])));
    cases.push(case("mean", vec![uniform(r, &[3, 4], -1.0, 1.0)], |t, v| t.mean(v[0])));
    cases.push(case("sum_rows", vec![uniform(r, &[3, 4], -1.0, 1.0)], |t, v| t.sum_axis(v[0], 0)));
    cases.push(case("sum_cols", vec![uniform(r, &[3, 4], -1.0, 1.0)], |t, v| t.sum_axis(v[0], 1)));
    cases.push(case(
        "concat_cols",
        vec![uniform(r, &[3, 2], -1.0, 1.0), uniform(r, &[3, 3], -1.0, 1.0)],
        |t, v| t.concat_cols(&[v[0], v[1]]),
    ));
    cases.push(case(
        "concat_rows",
        vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[1, 3], -1.0, 1.0)],
        |t, v| t.concat_rows(&[v[0], v[1]]),
    ));
    cases.push(case("slice_cols", vec![uniform(r, &[3, 5], -1.0, 1.0)], |t, v| t.slice_cols(v[0], 1, 4)));
    cases.push(case("gather_rows", vec![uniform(r, &[4, 2], -1.0, 1.0)], |t, v| t.gather_rows(v[0], vec![3, 0, 3, 1])));
    cases.push(case("reshape", vec![uniform(r, &[3, 4], -1.0, 1.0)], |t, v| t.reshape(v[0], [2, 6])));
    cases.push(case("normalize_rows", vec![signed(r, &[3, 3], 0.2, 1.5)], |t, v| t.normalize_rows(v[0])));

    // Coordinates kept off the integer grid, where bilinear weights kink.
    let coords = {
        let mut c = uniform(r, &[5, 2], 0.1, 3.9);
        for v in c.data_mut() {
            let f = v.fract();
            *v = v.floor() + 0.1 + 0.8 * f;
        }
        c
    };
    cases.push(case(
        "bilinear_sample",
        vec![uniform(r, &[5, 5, 2], -1.0, 1.0), coords],
        |t, v| t.bilinear_sample(v[0], v[1]),
    ));
    cases.push(case(
        "conv2d",
        vec![uniform(r, &[6, 6, 2], -1.0, 1.0), uniform(r, &[3, 4, 4, 2], -0.5, 0.5)],
        |t, v| t.conv2d(v[0], v[1], 2, 1),
    ));
    cases.push(case("resize_up", vec![uniform(r, &[3, 3, 2], -1.0, 1.0)], |t, v| t.resize(v[0], 5, 7)));
    cases.push(case("resize_down", vec![uniform(r, &[6, 5, 2], -1.0, 1.0)], |t, v| t.resize(v[0], 3, 2)));

    let (rays, n) = (3, 5);
    let deltas: Vec<f64> = (0..rays * n).map(|_| r.gen_range(0.05..0.4)).collect();
    cases.push(case(
        "ea_composite",
        vec![uniform(r, &[rays * n, 3], 0.0, 1.0), uniform(r, &[rays * n, 1], 0.0, 5.0)],
        move |t, v| t.apply(EaComposite { samples: n, deltas: deltas.clone() }, &[v[0], v[1]]),
    ));
    cases
}

/// Worst entrywise relative error of `case` at the shared step.
pub fn check(case: &Case) -> f64 {
    grad_check(&case.build, &case.inputs, STEP).unwrap().max_rel_error
}

/// Worst error of `case` relative to each input's largest gradient entry.
#[allow(dead_code)]
pub fn check_normwise(case: &Case) -> f64 {
    grad_check(&case.build, &case.inputs, STEP).unwrap().max_normwise_error
}
