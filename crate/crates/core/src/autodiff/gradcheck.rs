use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Primitive, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of one gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub points: usize,
    pub max_rel_error: f64,
}

impl GradCheck {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

fn eval_scalar<F>(f: &F, input: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let y = f(&mut g, x)?;
    let v = g.value(y);
    if v.numel() != 1 {
        return Err(Error::NotScalar(v.shape().to_vec()));
    }
    Ok(v.data()[0])
}

/// Largest `|analytic - central difference| / max(1, |analytic|)` over every
/// coordinate of `input`.
pub fn finite_diff_check<F>(f: F, input: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.param(input.clone());
    let y = f(&mut g, x)?;
    let analytic = g.backward(y)?.get(x);

    let mut worst = 0.0f64;
    let mut probe = input.clone();
    for i in 0..input.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect())
        .expect("shape and data agree")
}

/// Reduce any tensor to a scalar through a fixed random weighting so every
/// output coordinate contributes a distinct amount.
fn weighted_sum(g: &mut Graph, y: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone());
    let flat = g.reshape(y, &[g.value(y).numel()])?;
    let prod = g.mul(flat, w)?;
    g.sum(prod)
}

type Builder = Box<dyn Fn(&mut Graph, Var, &Tensor) -> Result<Var>>;

struct Case {
    name: &'static str,
    input_shape: Vec<usize>,
    range: (f64, f64),
    output_len: usize,
    build: Builder,
    other_shape: Vec<usize>,
}

fn unary(name: &'static str, shape: &[usize], range: (f64, f64), prim: Primitive) -> Case {
    let out = match &prim {
        Primitive::Sum(None) | Primitive::Mean(None) => 1,
        _ => shape.iter().product(),
    };
    Case {
        name,
        input_shape: shape.to_vec(),
        range,
        output_len: out,
        other_shape: vec![],
        build: Box::new(move |g, x, _| g.apply(prim.clone(), &[x])),
    }
}

fn binary(name: &'static str, x_shape: &[usize], other: &[usize], out: usize, prim: Primitive, x_first: bool) -> Case {
    Case {
        name,
        input_shape: x_shape.to_vec(),
        range: (-1.5, 1.5),
        output_len: out,
        other_shape: other.to_vec(),
        build: Box::new(move |g, x, o| {
            let c = g.constant(o.clone());
            if x_first {
                g.apply(prim.clone(), &[x, c])
            } else {
                g.apply(prim.clone(), &[c, x])
            }
        }),
    }
}

fn cases() -> Vec<Case> {
    vec![
        binary("matmul/lhs", &[3, 4], &[4, 2], 6, Primitive::MatMul, true),
        binary("matmul/rhs", &[4, 2], &[3, 4], 6, Primitive::MatMul, false),
        binary("add/same", &[3, 4], &[3, 4], 12, Primitive::Add, true),
        binary("add/row-broadcast", &[4], &[3, 4], 12, Primitive::Add, false),
        binary("mul/same", &[3, 4], &[3, 4], 12, Primitive::Mul, true),
        binary("mul/row-broadcast", &[4], &[3, 4], 12, Primitive::Mul, false),
        binary("mul/scalar-broadcast", &[], &[2, 3], 6, Primitive::Mul, false),
        unary("scale", &[5], (-2.0, 2.0), Primitive::Scale(-1.7)),
        unary("sum/all", &[3, 4], (-2.0, 2.0), Primitive::Sum(None)),
        Case {
            name: "sum/axis0",
            input_shape: vec![3, 4],
            range: (-2.0, 2.0),
            output_len: 4,
            other_shape: vec![],
            build: Box::new(|g, x, _| g.sum_axis(x, 0)),
        },
        Case {
            name: "sum/axis1",
            input_shape: vec![3, 4],
            range: (-2.0, 2.0),
            output_len: 3,
            other_shape: vec![],
            build: Box::new(|g, x, _| g.sum_axis(x, 1)),
        },
        unary("mean/all", &[3, 4], (-2.0, 2.0), Primitive::Mean(None)),
        Case {
            name: "mean/axis0",
            input_shape: vec![3, 4],
            range: (-2.0, 2.0),
            output_len: 4,
            other_shape: vec![],
            build: Box::new(|g, x, _| g.mean_axis(x, 0)),
        },
        binary("concat/first", &[2, 3], &[1, 3], 9, Primitive::Concat, true),
        binary("concat/second", &[2, 3], &[1, 3], 9, Primitive::Concat, false),
        unary("embedding", &[5, 3], (-1.0, 1.0), Primitive::Embedding(vec![0, 2, 2, 4])).with_output(12),
        unary("softmax", &[2, 4], (-2.0, 2.0), Primitive::Softmax),
        unary("sigmoid", &[5], (-3.0, 3.0), Primitive::Sigmoid),
        unary("tanh", &[5], (-2.0, 2.0), Primitive::Tanh),
        Case {
            name: "masked_fill+softmax",
            input_shape: vec![5],
            range: (-2.0, 2.0),
            output_len: 5,
            other_shape: vec![],
            build: Box::new(|g, x, _| {
                let m = g.masked_fill(x, &[false, true, false, false, true])?;
                g.softmax(m)
            }),
        },
        Case {
            name: "cosine",
            input_shape: vec![4],
            range: (-1.5, 1.5),
            output_len: 1,
            other_shape: vec![4],
            build: Box::new(|g, x, o| {
                let c = g.constant(o.clone());
                g.cosine(x, c)
            }),
        },
        unary("log", &[5], (0.3, 3.0), Primitive::Log),
        unary("exp", &[5], (-2.0, 2.0), Primitive::Exp),
        unary("softplus", &[5], (-4.0, 4.0), Primitive::Softplus),
        unary("select", &[6], (-2.0, 2.0), Primitive::Select(vec![5, 1, 1])).with_output(3),
        unary("reshape", &[2, 3], (-2.0, 2.0), Primitive::Reshape(vec![3, 2])),
    ]
}

impl Case {
    fn with_output(mut self, n: usize) -> Self {
        self.output_len = n;
        self
    }
}

/// Check every primitive at `points` random inputs. Each case draws its
/// own input, fixed second operand and output weighting from `seed`.
pub fn primitive_suite(seed: u64, points: usize) -> Result<Vec<GradCheck>> {
    cases()
        .iter()
        .enumerate()
        .map(|(i, case)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((i as u64 + 1) << 32));
            let mut worst = 0.0f64;
            for _ in 0..points {
                let err = check_case(case, &mut rng)?;
                worst = worst.max(err);
            }
            Ok(GradCheck {
                name: case.name.to_string(),
                points,
                max_rel_error: worst,
            })
        })
        .collect()
}

/// Check a single primitive by name at one random point.
pub fn check_primitive(name: &str, rng: &mut impl Rng) -> Result<f64> {
    let all = cases();
    let case = all
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| Error::Invalid(format!("unknown primitive check `{name}`")))?;
    check_case(case, rng)
}

fn check_case(case: &Case, rng: &mut impl Rng) -> Result<f64> {
    let (lo, hi) = case.range;
    let input = random_tensor(rng, &case.input_shape, lo, hi);
    let other = random_tensor(rng, &case.other_shape, -1.5, 1.5);
    let weights = random_tensor(rng, &[case.output_len], -1.0, 1.0);
    finite_diff_check(
        |g, x| {
            let y = (case.build)(g, x, &other)?;
            weighted_sum(g, y, &weights)
        },
        &input,
        1e-5,
    )
}
