//! One finite-difference case per tape primitive.

use super::{grad_check, project, random_tensor};
use wmtransfer_core::{RngStream, Tape, Tensor};

#[derive(Clone, Copy, Debug)]
pub enum PrimOp {
    Add,
    Sub,
    Mul,
    Div,
    MulScalar,
    Tanh,
    Sigmoid,
    Elu,
    Exp,
    Log,
    Softplus,
    Square,
    Neg,
    Scale,
    ClampMin,
    MatMul,
    AddBias,
    SumCols,
    Mean,
    ConcatCols,
    SliceCols,
    ConcatRows,
    SliceRows,
    Sample,
    Kl,
}

pub const PRIM_OPS: [PrimOp; 25] = [
    PrimOp::Add,
    PrimOp::Sub,
    PrimOp::Mul,
    PrimOp::Div,
    PrimOp::MulScalar,
    PrimOp::Tanh,
    PrimOp::Sigmoid,
    PrimOp::Elu,
    PrimOp::Exp,
    PrimOp::Log,
    PrimOp::Softplus,
    PrimOp::Square,
    PrimOp::Neg,
    PrimOp::Scale,
    PrimOp::ClampMin,
    PrimOp::MatMul,
    PrimOp::AddBias,
    PrimOp::SumCols,
    PrimOp::Mean,
    PrimOp::ConcatCols,
    PrimOp::SliceCols,
    PrimOp::ConcatRows,
    PrimOp::SliceRows,
    PrimOp::Sample,
    PrimOp::Kl,
];

/// Inputs and a scalar-valued closure exercising one primitive.
pub fn primitive_case(op: PrimOp, rows: usize, cols: usize, seed: u64) -> f64 {
    let mut rng = RngStream::new(seed, "prim");
    let pos = |rng: &mut RngStream, shape: &[usize]| {
        let mut t = random_tensor(shape, 1.0, rng);
        t.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.5);
        t
    };
    let x = random_tensor(&[rows, cols], 1.5, &mut rng);
    let y = random_tensor(&[rows, cols], 1.5, &mut rng);
    let p = pos(&mut rng, &[rows, cols]);
    let q = pos(&mut rng, &[rows, cols]);
    let w = random_tensor(&[cols, 3], 1.0, &mut rng);
    let bias = random_tensor(&[cols], 1.0, &mut rng);
    let s = Tensor::scalar(rng.uniform(0.5, 1.5));
    let stream = rng.split("sample");

    let unary = |f: fn(&mut Tape, wmtransfer_core::Var) -> wmtransfer_core::Var, input: Tensor| {
        let mut r = rng.clone();
        grad_check(
            &[input],
            move |t, v| {
                let o = f(t, v[0]);
                project(t, o, seed)
            },
            usize::MAX,
            &mut r,
        )
    };
    let mut r = rng.clone();
    match op {
        PrimOp::Add => grad_check(
            &[x, y],
            |t, v| {
                let o = t.add(v[0], v[1]).unwrap();
                project(t, o, seed)
            },
            usize::MAX,
            &mut r,
        ),
        PrimOp::Sub => grad_check(
            &[x, y],
            |t, v| {
                let o = t.sub(v[0], v[1]).unwrap();
                project(t, o, seed)
            },
            usize::MAX,
            &mut r,
        ),
        PrimOp::Mul => grad_check(
            &[x, y],
            |t, v| {
                let o = t.mul(v[0], v[1]).unwrap();
                project(t, o, seed)
            },
            usize::MAX,
            &mut r,
        ),
        PrimOp::Div => grad_check(
            &[x, p],
            |t, v| {
                let o = t.div(v[0], v[1]).unwrap();
                project(t, o, seed)
            },
            usize::MAX,
            &mut r,
        ),
        PrimOp::MulScalar => grad_check(
            &[x, s],
            |t, v| {
                let o = t.mul(v[0], v[1]).unwrap();
                project(t, o, seed)
            },
            usize::MAX,
            &mut r,
        ),
        PrimOp::Tanh => unary(|t, v| t.tanh(v), x),
        PrimOp::Sigmoid => unary(|t, v| t.sigmoid(v), x),
        PrimOp::Elu => unary(|t, v| t.elu(v), x),
        PrimOp::Exp => unary(|t, v| t.exp(v), x),
        PrimOp::Log => unary(|t, v| t.log(v), p),
        PrimOp::Softplus => unary(|t, v| t.softplus(v), x),
        PrimOp::Square => unary(|t, v| t.square(v), x),
        PrimOp::Neg => unary(|t, v| t.neg(v), x),
        PrimOp::Scale => unary(|t, v| t.scale(v, -2.5), x),
        PrimOp::ClampMin => unary(|t, v| t.clamp_min(v, 0.1), x),
        PrimOp::MatMul => grad_check(
            &[x, w],
            |t, v| {
                let o = t.matmul(v[0], v[1]).unwrap();
                project(t, o, seed)
            },
            usize::MAX,
            &mut r,
        ),
        PrimOp::AddBias => grad_check(
            &[x, bias],
            |t, v| {
                let o = t.add_bias(v[0], v[1]).unwrap();
                project(t, o, seed)
            },
            usize::MAX,
            &mut r,
        ),
        PrimOp::SumCols => unary(|t, v| t.sum_cols(v).unwrap(), x),
        PrimOp::Mean => grad_check(
            &[x],
            |t, v| {
                let o = t.square(v[0]);
                t.mean(o)
            },
            usize::MAX,
            &mut r,
        ),
        PrimOp::ConcatCols => grad_check(
            &[x, y],
            |t, v| {
                let o = t.concat_cols(&[v[0], v[1], v[0]]).unwrap();
                project(t, o, seed)
            },
            usize::MAX,
            &mut r,
        ),
        PrimOp::SliceCols => unary(
            |t, v| {
                let n = t.shape(v)[1];
                t.slice_cols(v, n / 2, n).unwrap()
            },
            x,
        ),
        PrimOp::ConcatRows => grad_check(
            &[x, y],
            |t, v| {
                let o = t.concat_rows(&[v[1], v[0]]).unwrap();
                project(t, o, seed)
            },
            usize::MAX,
            &mut r,
        ),
        PrimOp::SliceRows => unary(
            |t, v| {
                let n = t.shape(v)[0];
                t.slice_rows(v, 0, n.div_ceil(2)).unwrap()
            },
            x,
        ),
        PrimOp::Sample => grad_check(
            &[x, p],
            move |t, v| {
                let mut s = stream.clone();
                let o = t.gaussian_sample(v[0], v[1], &mut s).unwrap();
                project(t, o, seed)
            },
            usize::MAX,
            &mut r,
        ),
        PrimOp::Kl => grad_check(
            &[x, p, y, q],
            |t, v| t.gaussian_kl(v[0], v[1], v[2], v[3]).unwrap(),
            usize::MAX,
            &mut r,
        ),
    }
}
