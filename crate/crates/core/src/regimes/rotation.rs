use ssdn_engine::{Real, Tensor};

use crate::error::{contract, Result};

/// Rotation by `index · 90°` counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RotationLabel(u8);

impl RotationLabel {
    pub const ALL: [RotationLabel; 4] = [RotationLabel(0), RotationLabel(1), RotationLabel(2), RotationLabel(3)];

    pub fn new(index: usize) -> Result<Self> {
        if index < 4 {
            Ok(RotationLabel(index as u8))
        } else {
            Err(contract(format!("rotation label {index} outside 0..4")))
        }
    }

    pub fn index(self) -> usize {
        usize::from(self.0)
    }

    pub fn degrees(self) -> u32 {
        90 * u32::from(self.0)
    }
}

/// Rotates `images` consecutive `S×S` planes from `src` into `dst`.
/// 90°: `out[i][j] = in[j][S−1−i]`.
fn rotate_planes<T: Copy>(src: &[T], dst: &mut [T], s: usize, label: RotationLabel) {
    let plane = s * s;
    for (sp, dp) in src.chunks_exact(plane).zip(dst.chunks_exact_mut(plane)) {
        for i in 0..s {
            for j in 0..s {
                let (r, c) = match label.0 {
                    0 => (i, j),
                    1 => (j, s - 1 - i),
                    2 => (s - 1 - i, s - 1 - j),
                    _ => (s - 1 - j, i),
                };
                dp[i * s + j] = sp[r * s + c];
            }
        }
    }
}

fn square_side(shape: &[usize], rank: usize) -> Result<usize> {
    if shape.len() != rank || shape[rank - 1] != shape[rank - 2] {
        return Err(contract(format!("rotation needs square rank-{rank} input, got {shape:?}")));
    }
    Ok(shape[rank - 1])
}

/// Rotates one `[C,H,W]` image.
pub fn rotate_image<T: Real>(x: &Tensor<T>, label: RotationLabel) -> Result<Tensor<T>> {
    let s = square_side(x.shape(), 3)?;
    let mut out = x.clone();
    rotate_planes(x.data(), out.data_mut(), s, label);
    Ok(out)
}

/// Rotates each image of an `[N,C,H,W]` batch by its own label.
pub fn rotate_batch<T: Real>(x: &Tensor<T>, labels: &[RotationLabel]) -> Result<Tensor<T>> {
    let s = square_side(x.shape(), 4)?;
    if labels.len() != x.shape()[0] {
        return Err(contract(format!("{} rotation labels for batch of {}", labels.len(), x.shape()[0])));
    }
    let per = x.numel() / labels.len().max(1);
    let mut out = x.clone();
    for (n, &label) in labels.iter().enumerate() {
        rotate_planes(&x.data()[n * per..(n + 1) * per], &mut out.data_mut()[n * per..(n + 1) * per], s, label);
    }
    Ok(out)
}

/// The four rotations of a `[C,H,W]` (or `[1,C,H,W]`) image, labels `[0,1,2,3]`.
pub fn make_rotation_batch<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, [usize; 4])> {
    let shape = match x.shape() {
        [1, c, h, w] => vec![*c, *h, *w],
        s => s.to_vec(),
    };
    let s = square_side(&shape, 3)?;
    let per = x.numel();
    let mut data = vec![T::zero(); 4 * per];
    for (k, label) in RotationLabel::ALL.into_iter().enumerate() {
        rotate_planes(x.data(), &mut data[k * per..(k + 1) * per], s, label);
    }
    Ok((Tensor::new([4, shape[0], s, s], data)?, [0, 1, 2, 3]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn quarter_turn_convention() {
        // [[a,b],[c,d]] -> [[b,d],[a,c]]
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let r = rotate_image(&x, RotationLabel::ALL[1]).unwrap();
        assert_eq!(r.data(), &[2.0, 4.0, 1.0, 3.0]);
        assert!(rotate_image(&x, RotationLabel::ALL[0]).unwrap().bitwise_eq(&x));
    }

    #[test]
    fn compositions() {
        let x = t(&[2, 3, 3], &(0..18).map(f64::from).collect::<Vec<_>>());
        let r1 = |v: &Tensor<f64>| rotate_image(v, RotationLabel::ALL[1]).unwrap();
        let half = rotate_image(&x, RotationLabel::ALL[2]).unwrap();
        assert!(half.bitwise_eq(&r1(&r1(&x))));
        assert!(rotate_image(&half, RotationLabel::ALL[2]).unwrap().bitwise_eq(&x));
        assert!(rotate_image(&x, RotationLabel::ALL[3]).unwrap().bitwise_eq(&r1(&half)));
    }

    #[test]
    fn non_square_is_rejected() {
        assert!(rotate_image(&Tensor::<f64>::zeros([1, 2, 3]), RotationLabel::ALL[1]).is_err());
        assert!(RotationLabel::new(4).is_err());
    }

    #[test]
    fn rotation_batch_slots() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let (b, labels) = make_rotation_batch(&x).unwrap();
        assert_eq!(labels, [0, 1, 2, 3]);
        assert_eq!(&b.data()[..4], x.data());
        for k in 0..4 {
            let r = rotate_image(&x, RotationLabel::ALL[k]).unwrap();
            assert_eq!(&b.data()[4 * k..4 * k + 4], r.data());
        }
        let (c, _) = make_rotation_batch(&Tensor::<f64>::full([3, 4, 4], 0.5)).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn batch_rotation_uses_each_label() {
        let x = t(&[2, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]);
        let r = rotate_batch(&x, &[RotationLabel::ALL[0], RotationLabel::ALL[1]]).unwrap();
        assert_eq!(r.data(), &[1.0, 2.0, 3.0, 4.0, 2.0, 4.0, 1.0, 3.0]);
    }
}
