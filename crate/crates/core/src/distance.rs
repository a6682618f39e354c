//! Euclidean distance helpers. Every metric in the engine is Euclidean.

#[inline]
pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_euclidean(a, b).sqrt()
}

/// Index of the nearest candidate row; ties go to the lowest index.
///
/// Returns `None` when there are no candidates.
pub fn nearest<'a, I>(point: &[f64], candidates: I) -> Option<(usize, f64)>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut best: Option<(usize, f64)> = None;
    for (j, c) in candidates.into_iter().enumerate() {
        let d = squared_euclidean(point, c);
        match best {
            Some((_, bd)) if d >= bd => {}
            _ => best = Some((j, d)),
        }
    }
    best.map(|(j, d)| (j, d.sqrt()))
}

/// Mean distance from `point` to each member of `set`; 0 for an empty set.
pub fn mean_distance<'a, I>(point: &[f64], set: I) -> f64
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in set {
        sum += euclidean(point, p);
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pythagorean_triple() {
        assert_eq!(euclidean(&[0.0, 0.0], &[3.0, 4.0]), 5.0);
    }

    #[test]
    fn nearest_breaks_ties_low() {
        let c: Vec<Vec<f64>> = vec![vec![1.0], vec![-1.0], vec![1.0]];
        let (j, d) = nearest(&[0.0], c.iter().map(|v| v.as_slice())).unwrap();
        assert_eq!((j, d), (0, 1.0));
        assert!(nearest(&[0.0], std::iter::empty()).is_none());
    }
}
