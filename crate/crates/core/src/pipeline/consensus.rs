use ndarray::{Array3, Zip};

use crate::error::{Error, Result};
use crate::volume::BinaryMask;

/// Combines one to three annotator masks.
///
/// One mask is returned unchanged, two are intersected, three are majority-voted
/// (a voxel is foreground when at least two annotators marked it).
pub fn consensus_mask(masks: &[BinaryMask]) -> Result<BinaryMask> {
    let first = match masks {
        [] => return Err(Error::InvalidArgument("consensus needs at least one mask".into())),
        m if m.len() > 3 => {
            return Err(Error::InvalidArgument(format!(
                "consensus takes at most 3 masks, got {}",
                m.len()
            )))
        }
        [first, ..] => first,
    };
    for m in &masks[1..] {
        if m.shape() != first.shape() || m.spacing() != first.spacing() {
            return Err(Error::Mismatch(format!(
                "annotator masks differ: {:?}/{:?} vs {:?}/{:?}",
                first.shape(),
                first.spacing(),
                m.shape(),
                m.spacing()
            )));
        }
    }
    if masks.len() == 1 {
        return Ok(first.clone());
    }
    // Two votes out of two is the intersection; two out of three is the majority.
    let need = 2;
    let mut votes = Array3::<u8>::zeros(first.data().raw_dim());
    for m in masks {
        Zip::from(&mut votes).and(m.data()).for_each(|v, &x| *v += x);
    }
    BinaryMask::new(votes.mapv(|v| u8::from(v >= need)), first.spacing())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(bits: &[u8]) -> BinaryMask {
        BinaryMask::new(
            Array3::from_shape_vec((bits.len(), 1, 1), bits.to_vec()).unwrap(),
            [1.0; 3],
        )
        .unwrap()
    }

    #[test]
    fn rule_by_count() {
        let a = mask(&[1, 1, 0, 0]);
        let b = mask(&[1, 0, 1, 0]);
        let c = mask(&[0, 1, 1, 0]);
        assert_eq!(consensus_mask(std::slice::from_ref(&a)).unwrap(), a);
        assert_eq!(consensus_mask(&[a.clone(), a.clone()]).unwrap(), a);
        assert_eq!(consensus_mask(&[a.clone(), b.clone()]).unwrap(), mask(&[1, 0, 0, 0]));
        assert_eq!(consensus_mask(&[a.clone(), b.clone(), c]).unwrap(), mask(&[1, 1, 1, 0]));
        // {1},{0},{1} at a voxel
        let v = consensus_mask(&[mask(&[1]), mask(&[0]), mask(&[1])]).unwrap();
        assert_eq!(v, mask(&[1]));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(consensus_mask(&[]).is_err());
        let a = mask(&[1, 0]);
        assert!(consensus_mask(&[a.clone(), a.clone(), a.clone(), a.clone()]).is_err());
        assert!(matches!(
            consensus_mask(&[a, mask(&[1, 0, 1])]),
            Err(Error::Mismatch(_))
        ));
    }

    proptest! {
        #[test]
        fn majority_is_permutation_invariant_and_and_is_subset(
            bits in proptest::collection::vec(0u8..2, 3 * 64),
        ) {
            let m = |k: usize| BinaryMask::new(
                Array3::from_shape_vec((4, 4, 4), bits[k * 64..(k + 1) * 64].to_vec()).unwrap(),
                [1.0; 3],
            ).unwrap();
            let (a, b, c) = (m(0), m(1), m(2));
            let abc = consensus_mask(&[a.clone(), b.clone(), c.clone()]).unwrap();
            prop_assert_eq!(&abc, &consensus_mask(&[c.clone(), a.clone(), b.clone()]).unwrap());
            prop_assert_eq!(&abc, &consensus_mask(&[b.clone(), c.clone(), a.clone()]).unwrap());
            let and = consensus_mask(&[a.clone(), b.clone()]).unwrap();
            for ((x, y), z) in and.data().iter().zip(a.data().iter()).zip(b.data().iter()) {
                prop_assert!(*x <= *y && *x <= *z);
            }
            // brute-force vote
            for i in 0..64 {
                let votes = bits[i] + bits[64 + i] + bits[128 + i];
                prop_assert_eq!(abc.data().as_slice().unwrap()[i], u8::from(votes >= 2));
            }
        }
    }
}
