use serde::{Deserialize, Serialize};

use super::brief::Descriptor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Match {
    pub query: usize,
    pub train: usize,
    pub distance: u32,
}

/// Brute-force Hamming matching with Lowe's ratio test and a mutual-best
/// cross-check. Ties on distance resolve to the lower index.
pub fn match_descriptors(query: &[Descriptor], train: &[Descriptor], ratio: f64) -> Result<Vec<Match>> {
    if query.is_empty() || train.is_empty() {
        return Err(Error::EmptyDescriptorList);
    }
    let m = train.len();
    let dist: Vec<u32> = query
        .iter()
        .flat_map(|q| train.iter().map(move |t| q.hamming(t)))
        .collect();

    let mut best_query_for_train = vec![(u32::MAX, usize::MAX); m];
    for (qi, row) in dist.chunks_exact(m).enumerate() {
        for (ti, &d) in row.iter().enumerate() {
            if d < best_query_for_train[ti].0 {
                best_query_for_train[ti] = (d, qi);
            }
        }
    }

    let mut out = Vec::new();
    for (qi, row) in dist.chunks_exact(m).enumerate() {
        let (mut best, mut best_i, mut second) = (u32::MAX, usize::MAX, u32::MAX);
        for (ti, &d) in row.iter().enumerate() {
            if d < best {
                second = best;
                best = d;
                best_i = ti;
            } else if d < second {
                second = d;
            }
        }
        if second != u32::MAX && (second == 0 || best as f64 >= ratio * second as f64) {
            continue;
        }
        if best_query_for_train[best_i].1 != qi {
            continue;
        }
        out.push(Match {
            query: qi,
            train: best_i,
            distance: best,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_lists_match_identity() {
        let d: Vec<Descriptor> = (0..8u64)
            .map(|i| Descriptor([i * 0x0101_0101, !i, i << 7, i.wrapping_mul(0x9E37_79B9)]))
            .collect();
        let m = match_descriptors(&d, &d, 0.75).unwrap();
        assert_eq!(m.len(), 8);
        for (i, mm) in m.iter().enumerate() {
            assert_eq!((mm.query, mm.train, mm.distance), (i, i, 0));
        }
    }

    #[test]
    fn equidistant_is_rejected() {
        let q = [Descriptor([0b11, 0, 0, 0])];
        let t = [Descriptor([0b01, 0, 0, 0]), Descriptor([0b10, 0, 0, 0])];
        assert!(match_descriptors(&q, &t, 0.75).unwrap().is_empty());
    }

    #[test]
    fn empty_lists() {
        let d = [Descriptor([0; 4])];
        assert!(matches!(match_descriptors(&[], &d, 0.75), Err(Error::EmptyDescriptorList)));
        assert!(matches!(match_descriptors(&d, &[], 0.75), Err(Error::EmptyDescriptorList)));
    }
}
