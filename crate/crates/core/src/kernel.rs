//! Gaussian-kernel helpers shared by the differentiable MMD loss and the
//! alignment diagnostics.

use crate::nn::Matrix;

/// Squared Euclidean distances between all rows of `z`.
pub fn squared_distances(z: &Matrix) -> Matrix {
    let n = z.nrows();
    let mut d = Matrix::zeros((n, n));
    for i in 0..n {
        let zi = z.row(i);
        for j in (i + 1)..n {
            let s: f64 = zi.iter().zip(z.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            d[[i, j]] = s;
            d[[j, i]] = s;
        }
    }
    d
}

/// The pair(s) of rows whose distance defines the median heuristic.
///
/// `pairs` holds `(row_a, row_b, weight)`; the bandwidth is the weighted sum of
/// the listed pair distances (one pair with weight 1, or the two middle pairs
/// with weight 1/2 each).
#[derive(Debug, Clone, PartialEq)]
pub struct MedianDistance {
    pub value: f64,
    pub pairs: Vec<(usize, usize, f64)>,
}

/// Median of the pairwise (i < j) Euclidean distances. `None` with fewer than
/// two rows.
pub fn median_distance(sq: &Matrix) -> Option<MedianDistance> {
    let n = sq.nrows();
    if n < 2 {
        return None;
    }
    let mut all: Vec<(f64, usize, usize)> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            all.push((sq[[i, j]].sqrt(), i, j));
        }
    }
    let cmp =
        |a: &(f64, usize, usize), b: &(f64, usize, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2));
    let p = all.len();
    let mid = p / 2;
    let (lower, upper, _) = all.select_nth_unstable_by(mid, cmp);
    let upper = *upper;
    if p % 2 == 1 {
        return Some(MedianDistance {
            value: upper.0,
            pairs: vec![(upper.1, upper.2, 1.0)],
        });
    }
    let below = *lower
        .iter()
        .max_by(|a, b| cmp(a, b))
        .expect("even pair count leaves a non-empty lower half");
    Some(MedianDistance {
        value: 0.5 * (below.0 + upper.0),
        pairs: vec![(below.1, below.2, 0.5), (upper.1, upper.2, 0.5)],
    })
}

/// Stack two matrices with equal column counts on top of each other.
pub fn stack_rows(x: &Matrix, y: &Matrix) -> Matrix {
    ndarray::concatenate(ndarray::Axis(0), &[x.view(), y.view()]).expect("callers check column counts")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn median_of_odd_pair_count() {
        // three rows on a line: distances 1, 2, 3
        let z = array![[0.0], [1.0], [3.0]];
        let m = median_distance(&squared_distances(&z)).unwrap();
        assert_eq!(m.value, 2.0);
        assert_eq!(m.pairs, vec![(1, 2, 1.0)]);
    }

    #[test]
    fn median_of_even_pair_count_averages() {
        // four rows: distances 1,2,3,1,2,1 -> sorted 1,1,1,2,2,3 -> (1+2)/2
        let z = array![[0.0], [1.0], [2.0], [3.0]];
        let m = median_distance(&squared_distances(&z)).unwrap();
        assert_eq!(m.value, 1.5);
        assert_eq!(m.pairs.len(), 2);
    }

    #[test]
    fn single_row_has_no_median() {
        let z = array![[1.0, 2.0]];
        assert!(median_distance(&squared_distances(&z)).is_none());
    }
}
