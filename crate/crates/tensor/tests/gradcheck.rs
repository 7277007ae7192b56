use cloudvol_tensor::gradcheck::{check_fn, grad_check, OpKind};
use cloudvol_tensor::Tensor;

const TOL: f64 = 1e-4;
const H: f64 = 1e-5;

fn cases() -> Vec<(OpKind, Vec<Vec<usize>>)> {
    vec![
        (OpKind::Add, vec![vec![3, 4], vec![3, 4]]),
        (OpKind::Add, vec![vec![2, 3, 4], vec![4]]),
        (OpKind::Sub, vec![vec![4], vec![2, 4]]),
        (OpKind::Mul, vec![vec![3, 4], vec![3, 4]]),
        (OpKind::Mul, vec![vec![2, 3, 4], vec![3, 4]]),
        (OpKind::Scale(-1.7), vec![vec![5]]),
        (OpKind::Matmul, vec![vec![2, 3], vec![3, 4]]),
        (OpKind::Matmul, vec![vec![2, 3, 3], vec![3, 2]]),
        (OpKind::Matmul, vec![vec![2, 2, 3], vec![2, 3, 4]]),
        (OpKind::MatmulT, vec![vec![2, 2, 3], vec![2, 4, 3]]),
        (OpKind::MatmulT, vec![vec![5, 3], vec![2, 3]]),
        (
            OpKind::Conv2d { stride: 1, padding: 1 },
            vec![vec![2, 2, 5, 5], vec![3, 2, 3, 3], vec![3]],
        ),
        (
            OpKind::Conv2d { stride: 2, padding: 1 },
            vec![vec![1, 2, 6, 6], vec![2, 2, 3, 3]],
        ),
        (
            OpKind::Conv2d { stride: 1, padding: 0 },
            vec![vec![2, 3, 3, 3], vec![2, 3, 1, 1], vec![2]],
        ),
        (
            OpKind::ConvTranspose2d { stride: 2, padding: 0 },
            vec![vec![2, 3, 3, 3], vec![3, 2, 2, 2], vec![2]],
        ),
        (
            OpKind::ConvTranspose2d { stride: 2, padding: 1 },
            vec![vec![1, 2, 3, 3], vec![2, 2, 3, 3]],
        ),
        (OpKind::Relu, vec![vec![4, 5]]),
        (OpKind::Gelu, vec![vec![4, 5]]),
        (OpKind::Log, vec![vec![6]]),
        (OpKind::Softmax, vec![vec![3, 5]]),
        (OpKind::LayerNorm, vec![vec![8, 16], vec![16], vec![16]]),
        (OpKind::Reshape(vec![6, 2]), vec![vec![3, 4]]),
        (OpKind::Transpose(vec![2, 0, 1]), vec![vec![2, 3, 4]]),
        (OpKind::WindowPartition(2), vec![vec![1, 4, 4, 3]]),
        (OpKind::WindowMerge { ws: 2, h: 4, w: 6 }, vec![vec![12, 4, 2]]),
        (OpKind::Roll(-1, 2), vec![vec![2, 3, 4, 2]]),
        (OpKind::Concat(1), vec![vec![2, 2, 3], vec![2, 1, 3]]),
        (
            OpKind::Slice {
                axis: 1,
                start: 1,
                len: 2,
            },
            vec![vec![2, 4, 3]],
        ),
        (OpKind::Mean, vec![vec![3, 4]]),
        (OpKind::Sum, vec![vec![3, 4]]),
        (OpKind::EmbeddingLookup(vec![0, 2, 2, 1]), vec![vec![3, 4]]),
        (OpKind::Expand(vec![2, 3, 4]), vec![vec![2, 1, 4]]),
    ]
}

#[test]
fn every_op_passes_ten_seeds() {
    for (op, shapes) in cases() {
        for seed in 0..10 {
            let err = grad_check(&op, &shapes, seed, H).unwrap();
            assert!(err < TOL, "{op:?} {shapes:?} seed {seed}: rel err {err:e}");
        }
    }
}

#[test]
fn quadratic_is_exact_under_central_difference() {
    let x = Tensor::scalar(3.0);
    let err = check_fn(&[x], 1e-3, |tape, v| tape.mul(v[0], v[0])).unwrap();
    assert!(err < 1e-9, "{err:e}");
}

#[test]
fn softmax_cross_entropy_composite() {
    let logits = Tensor::new(vec![4], vec![0.2, -1.3, 0.7, 2.0]).unwrap();
    let onehot = Tensor::new(vec![4], vec![0.0, 0.0, 1.0, 0.0]).unwrap();
    let err = check_fn(&[logits], 1e-5, |tape, v| {
        let p = tape.softmax(v[0])?;
        let lp = tape.log(p)?;
        let y = tape.constant(onehot.clone());
        let picked = tape.mul(lp, y)?;
        let s = tape.sum(picked)?;
        tape.scale(s, -1.0)
    })
    .unwrap();
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn layer_norm_8x16() {
    let shapes = vec![vec![8, 16], vec![16], vec![16]];
    let err = grad_check(&OpKind::LayerNorm, &shapes, 7, 1e-5).unwrap();
    assert!(err < 1e-5, "{err:e}");
}
