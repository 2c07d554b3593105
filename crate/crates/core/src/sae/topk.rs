use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::linalg::Scalar;

/// Total order used for selection: larger value first, lower index on ties.
#[inline]
fn rank<T: Scalar>(v: &[T], a: usize, b: usize) -> Ordering {
    v[b].partial_cmp(&v[a])
        .unwrap_or(Ordering::Equal)
        .then(a.cmp(&b))
}

/// Indices (ascending) of the `k` largest entries of `v` among those allowed
/// by `mask`. Returns every allowed index when fewer than `k` are allowed.
pub fn topk_indices_masked<T: Scalar>(
    v: &[T],
    mask: Option<&[bool]>,
    k: usize,
    out: &mut Vec<usize>,
) {
    out.clear();
    if k == 0 {
        return;
    }
    match mask {
        Some(m) => out.extend((0..v.len()).filter(|&i| m[i])),
        None if k.saturating_mul(CHUNK) <= v.len() => {
            // Split the entries into strided groups {l, l+g, l+2g, ...}. The
            // k-th largest group maximum is a lower bound on the k-th largest
            // entry, so only entries at or above it can be selected. Group
            // maxima update lane-wise, which vectorizes.
            let g = v.len() / CHUNK;
            let mut maxima = v[..g].to_vec();
            for block in v[g..].chunks(g) {
                for (m, &x) in maxima.iter_mut().zip(block) {
                    *m = if x > *m { x } else { *m };
                }
            }
            let mut order: Vec<usize> = (0..g).collect();
            order.select_nth_unstable_by(k - 1, |&a, &b| rank(&maxima, a, b));
            let cut = maxima[order[k - 1]];
            out.resize(v.len(), 0);
            let mut len = 0;
            for (b, block) in v.chunks(CHUNK).enumerate() {
                if block.iter().fold(0u32, |a, &x| a + (x >= cut) as u32) == 0 {
                    continue;
                }
                for (o, &x) in block.iter().enumerate() {
                    out[len] = b * CHUNK + o;
                    len += (x >= cut) as usize;
                }
            }
            out.truncate(len);
        }
        None => out.extend(0..v.len()),
    }
    if out.len() > k {
        out.select_nth_unstable_by(k - 1, |&a, &b| rank(v, a, b));
        out.truncate(k);
    }
    out.sort_unstable();
}

const CHUNK: usize = 16;

/// Indices (ascending) of the `k` largest entries of `v`.
pub fn topk_indices<T: Scalar>(v: &[T], k: usize, out: &mut Vec<usize>) {
    topk_indices_masked(v, None, k, out)
}

/// `v` with everything outside its `k` largest entries set to zero.
pub fn topk<T: Scalar>(v: &[T], k: usize) -> Result<Vec<T>> {
    if k > v.len() {
        return Err(Error::invalid(format!("k={k} exceeds vector length {}", v.len())));
    }
    let mut idx = Vec::with_capacity(k);
    topk_indices(v, k, &mut idx);
    let mut out = vec![T::zero(); v.len()];
    for i in idx {
        out[i] = v[i];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn oracle(v: &[f32], k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap().then(a.cmp(&b)));
        let mut top = idx[..k.min(v.len())].to_vec();
        top.sort();
        top
    }

    #[test]
    fn examples() {
        assert_eq!(topk(&[3.0f32, -1.0, 2.0, 5.0], 2).unwrap(), vec![3.0, 0.0, 0.0, 5.0]);
        let v = [0.5f32, -2.0, 7.0];
        assert_eq!(topk(&v, 3).unwrap(), v.to_vec());
        assert_eq!(topk(&v, 0).unwrap(), vec![0.0; 3]);
        assert!(topk(&v, 4).is_err());
    }

    #[test]
    fn ties_prefer_lower_index() {
        let mut out = Vec::new();
        topk_indices(&[1.0f32, 2.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 2, &mut out);
        assert_eq!(out, vec![1, 2]);
        topk_indices(&[2.0f32, 2.0, 2.0], 2, &mut out);
        assert_eq!(out, vec![0, 1]);
    }

    #[test]
    fn masked_selection() {
        let v = [5.0f32, 4.0, 3.0, 2.0, 1.0];
        let mask = [false, true, false, true, true];
        let mut out = Vec::new();
        topk_indices_masked(&v, Some(&mask), 2, &mut out);
        assert_eq!(out, vec![1, 3]);
        topk_indices_masked(&v, Some(&mask), 10, &mut out);
        assert_eq!(out, vec![1, 3, 4]);
    }

    proptest! {
        #[test]
        fn agrees_with_full_sort(
            v in proptest::collection::vec(-4i8..4, 1..200),
            k in 0usize..200,
        ) {
            // coarse integer values force plenty of ties
            let v: Vec<f32> = v.into_iter().map(|x| x as f32 * 0.5).collect();
            let k = k.min(v.len());
            let mut got = Vec::new();
            topk_indices(&v, k, &mut got);
            prop_assert_eq!(got, oracle(&v, k));
        }
    }
}
