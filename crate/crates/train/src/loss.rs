//! Masked mean-squared error over the valid cells of a target.

use std::sync::atomic::{AtomicUsize, Ordering};

use cloudvol_core::norm::is_valid;
use cloudvol_tensor::{Real, Tape, Tensor, Var};

use crate::Result;

static EMPTY_LOSS_GROUPS: AtomicUsize = AtomicUsize::new(0);

/// How many loss groups have had no valid cell since process start.
pub fn empty_loss_warnings() -> usize {
    EMPTY_LOSS_GROUPS.load(Ordering::Relaxed)
}

/// Target and per-cell weights of a masked MSE.
///
/// The channel axis of a `[B, C, H, W]` target is split into `groups`
/// equal blocks (one per variable). Each group contributes the mean squared
/// error over its cells that are selected and hold a valid target, and the
/// loss is the sum over groups. Excluded cells get weight exactly zero.
#[derive(Clone, Debug)]
pub struct MaskedTarget<T> {
    pub target: Tensor<T>,
    pub weights: Tensor<T>,
    /// Valid cells per group.
    pub counts: Vec<usize>,
}

impl<T: Real> MaskedTarget<T> {
    /// `select(b, c, pixel)` picks the cells that may enter the loss;
    /// sentinel or non-finite targets are dropped regardless.
    pub fn new(
        target: &[f32],
        shape: [usize; 4],
        groups: usize,
        select: impl Fn(usize, usize, usize) -> bool,
    ) -> Result<Self> {
        let [b, c, h, w] = shape;
        let hw = h * w;
        if target.len() != b * c * hw || groups == 0 || c % groups != 0 {
            return Err(crate::TrainError::Config(format!(
                "target of {} values does not fit {shape:?} in {groups} groups",
                target.len()
            )));
        }
        let per = c / groups;
        let mut keep = vec![false; target.len()];
        let mut counts = vec![0usize; groups];
        for bi in 0..b {
            for ch in 0..c {
                for p in 0..hw {
                    let k = (bi * c + ch) * hw + p;
                    if select(bi, ch, p) && is_valid(target[k]) {
                        keep[k] = true;
                        counts[ch / per] += 1;
                    }
                }
            }
        }
        for (g, &n) in counts.iter().enumerate() {
            if n == 0 {
                EMPTY_LOSS_GROUPS.fetch_add(1, Ordering::Relaxed);
                log::warn!("loss group {g} has no valid cells; it contributes 0");
            }
        }
        let mut t = Vec::with_capacity(target.len());
        let mut wt = Vec::with_capacity(target.len());
        for (k, &v) in target.iter().enumerate() {
            let g = (k / hw) % c / per;
            if keep[k] {
                t.push(T::of(v as f64));
                wt.push(T::of(1.0 / counts[g] as f64));
            } else {
                t.push(T::zero());
                wt.push(T::zero());
            }
        }
        Ok(Self {
            target: Tensor::new(shape.to_vec(), t)?,
            weights: Tensor::new(shape.to_vec(), wt)?,
            counts,
        })
    }

    pub fn shape(&self) -> &[usize] {
        self.target.shape()
    }

    pub fn groups(&self) -> usize {
        self.counts.len()
    }

    /// Loss value without a tape, accumulated in f64, plus the summed squared
    /// error and cell count per group.
    pub fn evaluate(&self, pred: &[T]) -> (f64, Vec<(f64, usize)>) {
        let c = self.target.shape()[1];
        let hw = self.target.shape()[2] * self.target.shape()[3];
        let per = c / self.groups();
        let mut sse = vec![0.0f64; self.groups()];
        for (k, ((&p, &t), &w)) in pred.iter().zip(self.target.data()).zip(self.weights.data()).enumerate() {
            if w != T::zero() {
                let d = p.as_f64() - t.as_f64();
                sse[(k / hw) % c / per] += d * d;
            }
        }
        let loss = sse
            .iter()
            .zip(&self.counts)
            .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
            .sum();
        (loss, sse.into_iter().zip(self.counts.iter().copied()).collect())
    }
}

/// `sum_g mean_{valid cells of g} (pred - target)^2` on the tape.
pub fn masked_mse_loss<T: Real>(tape: &mut Tape<T>, pred: Var, mt: &MaskedTarget<T>) -> Result<Var> {
    let t = tape.constant(mt.target.clone());
    let w = tape.constant(mt.weights.clone());
    let d = tape.sub(pred, t)?;
    let d2 = tape.mul(d, d)?;
    let wd = tape.mul(d2, w)?;
    Ok(tape.sum(wd)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cloudvol_core::norm::SENTINEL;

    fn value(pred: &[f64], mt: &MaskedTarget<f64>) -> f64 {
        let mut tape = Tape::new();
        let p = tape.input(Tensor::new(mt.shape().to_vec(), pred.to_vec()).unwrap());
        let l = masked_mse_loss(&mut tape, p, mt).unwrap();
        tape.value(l).item()
    }

    #[test]
    fn exact_prediction_is_zero() {
        let t: Vec<f32> = (0..32).map(|i| (i as f32 / 40.0) - 0.3).collect();
        let mt = MaskedTarget::<f64>::new(&t, [1, 2, 4, 4], 1, |_, _, p| p % 3 == 0).unwrap();
        let pred: Vec<f64> = t.iter().map(|&v| v as f64).collect();
        assert_eq!(value(&pred, &mt), 0.0);
    }

    #[test]
    fn unit_offset_gives_one_for_any_mask_size() {
        let t = vec![0.25f32; 2 * 9];
        for k in 1..=9 {
            let mt = MaskedTarget::<f64>::new(&t, [2, 1, 3, 3], 1, |b, _, p| b == 0 && p < k).unwrap();
            let pred: Vec<f64> = t.iter().map(|&v| v as f64 + 1.0).collect();
            assert!((value(&pred, &mt) - 1.0).abs() < 1e-15);
            assert_eq!(mt.counts, vec![k]);
        }
    }

    #[test]
    fn empty_mask_gives_zero_and_warns() {
        let before = empty_loss_warnings();
        let t = vec![0.5f32; 8];
        let mt = MaskedTarget::<f64>::new(&t, [1, 2, 2, 2], 2, |_, _, _| false).unwrap();
        assert_eq!(value(&[3.0; 8], &mt), 0.0);
        assert!(empty_loss_warnings() >= before + 2);
    }

    #[test]
    fn sentinel_targets_are_excluded() {
        let t = vec![0.0, SENTINEL, 0.0, SENTINEL];
        let mt = MaskedTarget::<f64>::new(&t, [1, 1, 2, 2], 1, |_, _, _| true).unwrap();
        assert_eq!(mt.counts, vec![2]);
        assert_eq!(value(&[1.0, 100.0, 1.0, -7.0], &mt), 1.0);
        let (v, per) = mt.evaluate(&[1.0, 100.0, 1.0, -7.0]);
        assert_eq!((v, per), (1.0, vec![(2.0, 2)]));
    }

    #[test]
    fn bad_layout_is_rejected() {
        assert!(MaskedTarget::<f32>::new(&[0.0; 12], [1, 3, 2, 2], 2, |_, _, _| true).is_err());
        assert!(MaskedTarget::<f32>::new(&[0.0; 11], [1, 3, 2, 2], 3, |_, _, _| true).is_err());
    }
}
