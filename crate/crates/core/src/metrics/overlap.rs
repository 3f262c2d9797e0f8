use crate::error::{Error, Result};
use crate::volume::BinaryMask;

fn counts(a: &BinaryMask, b: &BinaryMask) -> Result<(usize, usize, usize)> {
    if a.shape() != b.shape() {
        return Err(Error::Mismatch(format!(
            "mask shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (mut inter, mut na, mut nb) = (0, 0, 0);
    for (&x, &y) in a.data().iter().zip(b.data().iter()) {
        inter += usize::from(x & y);
        na += usize::from(x);
        nb += usize::from(y);
    }
    Ok((inter, na, nb))
}

/// `2|A∩B| / (|A| + |B|)`, or 1 when both masks are empty.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, na, nb) = counts(a, b)?;
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// `|A∩B| / |A∪B|`, or 1 when both masks are empty.
pub fn jaccard(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, na, nb) = counts(a, b)?;
    let union = na + nb - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}
