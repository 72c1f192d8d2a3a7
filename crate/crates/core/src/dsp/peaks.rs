use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MinHeight {
    None,
    Absolute(f64),
    /// Fraction of the highest candidate peak in the call.
    FractionOfMax(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakConstraints {
    /// Seconds.
    pub min_distance: f64,
    pub min_height: MinHeight,
}

impl PeakConstraints {
    pub fn new(min_distance: f64, min_height: MinHeight) -> Result<Self> {
        if !(min_distance >= 0.0) {
            return Err(Error::arg("min_distance", "must be non-negative"));
        }
        if let MinHeight::FractionOfMax(f) = min_height {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::arg("min_height", format!("fraction {f} not in (0, 1]")));
            }
        }
        Ok(PeakConstraints {
            min_distance,
            min_height,
        })
    }
}

/// True when indices `i` and `j` are at least `min_distance` seconds apart.
pub fn far_enough(i: usize, j: usize, rate: f64, min_distance: f64) -> bool {
    i.abs_diff(j) as f64 / rate >= min_distance
}

/// Local maxima `x[i-1] < x[i] >= x[i+1]` passing the height rule, thinned so
/// that no two survivors are closer than `min_distance`. Taller peaks claim
/// their neighbourhood first; among equal heights the earlier index wins.
/// Returned indices are ascending.
pub fn find_peaks(x: &[f64], rate: f64, c: &PeakConstraints) -> Vec<usize> {
    let n = x.len();
    if n < 3 {
        return Vec::new();
    }
    let mut cand: Vec<usize> = (1..n - 1).filter(|&i| x[i - 1] < x[i] && x[i] >= x[i + 1]).collect();
    if cand.is_empty() {
        return cand;
    }
    let threshold = match c.min_height {
        MinHeight::None => f64::NEG_INFINITY,
        MinHeight::Absolute(h) => h,
        MinHeight::FractionOfMax(f) => f * cand.iter().map(|&i| x[i]).fold(f64::NEG_INFINITY, f64::max),
    };
    cand.retain(|&i| x[i] >= threshold);

    let mut order: Vec<usize> = (0..cand.len()).collect();
    order.sort_by(|&a, &b| x[cand[b]].total_cmp(&x[cand[a]]).then(a.cmp(&b)));
    let mut removed = vec![false; cand.len()];
    let mut keep = vec![false; cand.len()];
    for &p in &order {
        if removed[p] {
            continue;
        }
        keep[p] = true;
        let here = cand[p];
        for q in (0..p).rev() {
            if far_enough(cand[q], here, rate, c.min_distance) {
                break;
            }
            removed[q] = true;
        }
        for q in p + 1..cand.len() {
            if far_enough(cand[q], here, rate, c.min_distance) {
                break;
            }
            removed[q] = true;
        }
    }
    cand.into_iter().zip(keep).filter_map(|(i, k)| k.then_some(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn no_height(d: f64) -> PeakConstraints {
        PeakConstraints::new(d, MinHeight::None).unwrap()
    }

    /// Exhaustive oracle: among all subsets with pairwise spacing, the greedy
    /// rule picks the one whose heights, sorted descending, are
    /// lexicographically largest (earlier index first on ties).
    fn brute(x: &[f64], rate: f64, d: f64) -> Vec<usize> {
        let cand: Vec<usize> = (1..x.len() - 1)
            .filter(|&i| x[i - 1] < x[i] && x[i] >= x[i + 1])
            .collect();
        // (sort key, picked indices)
        type Choice = (Vec<(f64, i64)>, Vec<usize>);
        let mut best: Option<Choice> = None;
        for mask in 0u32..(1 << cand.len()) {
            let pick: Vec<usize> = (0..cand.len())
                .filter(|b| mask & (1 << b) != 0)
                .map(|b| cand[b])
                .collect();
            let ok = pick.windows(2).all(|w| far_enough(w[0], w[1], rate, d));
            if !ok {
                continue;
            }
            let mut key: Vec<(f64, i64)> = pick.iter().map(|&i| (x[i], -(i as i64))).collect();
            key.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let better = match &best {
                None => true,
                Some((bk, _)) => key.partial_cmp(bk) == Some(std::cmp::Ordering::Greater),
            };
            if better {
                best = Some((key, pick));
            }
        }
        best.map(|b| b.1).unwrap_or_default()
    }

    #[test]
    fn triangular_bump() {
        let x = [0.0, 1.0, 2.0, 3.0, 2.0, 1.0, 0.0];
        assert_eq!(find_peaks(&x, 1.0, &no_height(0.0)), vec![3]);
    }

    #[test]
    fn equal_peaks_closer_than_min_distance() {
        // peaks 0.2 s apart at 10 Hz
        let x = [0.0, 1.0, 0.0, 1.0, 0.0];
        assert_eq!(find_peaks(&x, 10.0, &no_height(0.3)), vec![1]);
        assert_eq!(brute(&x, 10.0, 0.3), vec![1]);
        assert_eq!(find_peaks(&x, 10.0, &no_height(0.2)), vec![1, 3]);
    }

    #[test]
    fn fractional_height() {
        let x = [0.0, 1.0, 0.0, 0.01, 0.0];
        let c = PeakConstraints::new(0.0, MinHeight::FractionOfMax(0.02)).unwrap();
        assert_eq!(find_peaks(&x, 1.0, &c), vec![1]);
        let c = PeakConstraints::new(0.0, MinHeight::FractionOfMax(0.01)).unwrap();
        assert_eq!(find_peaks(&x, 1.0, &c), vec![1, 3]);
        assert!(PeakConstraints::new(0.0, MinHeight::FractionOfMax(0.0)).is_err());
        assert!(PeakConstraints::new(-1.0, MinHeight::None).is_err());
    }

    #[test]
    fn plateaus_report_their_first_sample() {
        let x = [0.0, 2.0, 2.0, 2.0, 0.0];
        assert_eq!(find_peaks(&x, 1.0, &no_height(0.0)), vec![1]);
    }

    proptest! {
        #[test]
        fn greedy_matches_exhaustive_search(
            x in prop::collection::vec(0u8..6, 3..16),
            d in 0usize..5,
        ) {
            let x: Vec<f64> = x.into_iter().map(f64::from).collect();
            prop_assert_eq!(find_peaks(&x, 1.0, &no_height(d as f64)), brute(&x, 1.0, d as f64));
        }

        #[test]
        fn spacing_and_scale_invariance(
            x in prop::collection::vec(-1.0f64..1.0, 3..500),
            d in 0.0f64..0.5,
            scale in 0.01f64..100.0,
        ) {
            let c = PeakConstraints::new(d, MinHeight::FractionOfMax(0.02)).unwrap();
            let p = find_peaks(&x, 100.0, &c);
            for w in p.windows(2) {
                prop_assert!(w[0] < w[1]);
                prop_assert!(far_enough(w[0], w[1], 100.0, d));
            }
            let sx: Vec<f64> = x.iter().map(|v| v * scale).collect();
            prop_assert_eq!(find_peaks(&sx, 100.0, &c), p);
        }
    }
}
