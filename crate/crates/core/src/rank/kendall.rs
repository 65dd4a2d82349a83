use crate::error::{Error, Result};

/// Kendall's tau-a of two rank vectors restricted to `rows`.
///
/// A pair is concordant iff `(a_i - a_j)(b_i - b_j) > 0`; exact zeros count
/// as neither, and the denominator is always `m(m-1)/2`.
pub fn kendall_tau(r1: &[f64], r2: &[f64], rows: &[usize]) -> Result<f64> {
    let a: Vec<f64> = rows.iter().map(|&i| r1[i]).collect();
    let b: Vec<f64> = rows.iter().map(|&i| r2[i]).collect();
    kendall_tau_values(&a, &b)
}

/// Kendall's tau-a of two aligned vectors, O(m log m).
pub fn kendall_tau_values(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let m = a.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "kendall tau needs at least 2 rows, got {m}"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_unstable_by(|&i, &j| a[i].total_cmp(&a[j]).then(b[i].total_cmp(&b[j])));
    Ok(tau_from_sorted(&order, a, b))
}

/// Knight's algorithm over an index order sorted by `(a, b)`.
pub(super) fn tau_from_sorted(order: &[usize], a: &[f64], b: &[f64]) -> f64 {
    let m = order.len();
    let n0 = (m as i64) * (m as i64 - 1) / 2;
    let mut n1 = 0i64;
    let mut n3 = 0i64;
    let mut run_a = 1i64;
    let mut run_ab = 1i64;
    for w in order.windows(2) {
        let (p, q) = (w[0], w[1]);
        if a[p] == a[q] {
            run_a += 1;
            if b[p] == b[q] {
                run_ab += 1;
            } else {
                n3 += run_ab * (run_ab - 1) / 2;
                run_ab = 1;
            }
        } else {
            n1 += run_a * (run_a - 1) / 2;
            n3 += run_ab * (run_ab - 1) / 2;
            run_a = 1;
            run_ab = 1;
        }
    }
    n1 += run_a * (run_a - 1) / 2;
    n3 += run_ab * (run_ab - 1) / 2;

    let mut seq: Vec<f64> = order.iter().map(|&i| b[i]).collect();
    let swaps = merge_count(&mut seq) as i64;

    let mut n2 = 0i64;
    let mut run = 1i64;
    for w in seq.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            n2 += run * (run - 1) / 2;
            run = 1;
        }
    }
    n2 += run * (run - 1) / 2;

    let s = n0 - n1 - n2 + n3 - 2 * swaps;
    s as f64 / n0 as f64
}

/// Sorts `v` ascending and returns the number of strict inversions.
fn merge_count(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mut buf = v.to_vec();
    let mut swaps = 0u64;
    let mut width = 1;
    let mut src_is_v = true;
    while width < n {
        {
            let (src, dst): (&[f64], &mut [f64]) = if src_is_v {
                (&*v, &mut buf[..])
            } else {
                (&buf[..], &mut *v)
            };
            let mut start = 0;
            while start < n {
                let mid = (start + width).min(n);
                let end = (start + 2 * width).min(n);
                let (mut i, mut j, mut k) = (start, mid, start);
                while i < mid && j < end {
                    if src[j] < src[i] {
                        dst[k] = src[j];
                        swaps += (mid - i) as u64;
                        j += 1;
                    } else {
                        dst[k] = src[i];
                        i += 1;
                    }
                    k += 1;
                }
                dst[k..k + mid - i].copy_from_slice(&src[i..mid]);
                k += mid - i;
                dst[k..k + end - j].copy_from_slice(&src[j..end]);
                start = end;
            }
        }
        src_is_v = !src_is_v;
        width *= 2;
    }
    if !src_is_v {
        v.copy_from_slice(&buf);
    }
    swaps
}

/// Quadratic pair count, kept as a reference implementation.
pub fn kendall_tau_brute(a: &[f64], b: &[f64]) -> f64 {
    let m = a.len();
    let mut s = 0i64;
    for i in 0..m {
        for j in i + 1..m {
            let prod = (a[i] - a[j]) * (b[i] - b[j]);
            if prod > 0.0 {
                s += 1;
            } else if prod < 0.0 {
                s -= 1;
            }
        }
    }
    s as f64 / (m * (m - 1) / 2) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let all = [0, 1, 2];
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &all).unwrap(), 1.0);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0], &all).unwrap(), -1.0);
        let t = kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0], &all).unwrap();
        assert_eq!(t, kendall_tau_brute(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]));
        assert!((t - 1.0 / 3.0).abs() < 1e-15);
        assert!(kendall_tau(&[1.0, 2.0], &[1.0, 2.0], &[0]).is_err());
    }

    #[test]
    fn subset_selects_rows() {
        let r1 = [1.0, 9.0, 2.0, 3.0];
        let r2 = [1.0, -9.0, 2.0, 3.0];
        assert_eq!(kendall_tau(&r1, &r2, &[0, 2, 3]).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn knight_matches_brute_force(
            pairs in prop::collection::vec((-4i8..4, -4i8..4), 2..80)
        ) {
            // Small integer ranges force many ties in both coordinates.
            let a: Vec<f64> = pairs.iter().map(|p| p.0 as f64 * 0.5).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            let fast = kendall_tau_values(&a, &b).unwrap();
            let slow = kendall_tau_brute(&a, &b);
            prop_assert!((fast - slow).abs() < 1e-12, "{} vs {}", fast, slow);
        }

        #[test]
        fn knight_matches_brute_force_continuous(
            pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..200)
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            prop_assert!((kendall_tau_values(&a, &b).unwrap() - kendall_tau_brute(&a, &b)).abs() < 1e-12);
        }
    }
}
