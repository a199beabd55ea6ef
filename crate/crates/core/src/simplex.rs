//! Sparse mappings onto the probability simplex.
//!
//! `entmax(z, α)` solves `p_i = [(α−1)·z_i − τ]_+^{1/(α−1)}` with `Σ p = 1`. It is softmax at
//! α = 1 and sparsemax at α = 2. Sparsemax also has a dedicated sort-and-threshold routine;
//! `entmax(·, 2)` deliberately goes through the bisection path instead so the two can be checked
//! against each other.
//!
//! All backward rules share one form: with `s_i = p_i^{2−α}` on the support (zero elsewhere),
//! `∂L/∂z = s ⊙ v − s · (s·v)/Σs`.

use crate::{Error, Result};

/// Bisection stops once the bracket on τ is narrower than this.
pub const BISECTION_TOL: f64 = 1e-12;

const MAX_BISECTION_ITERS: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct SimplexOutput {
    pub probabilities: Vec<f64>,
    /// Indices with strictly positive probability, ascending.
    pub support: Vec<usize>,
}

impl SimplexOutput {
    fn from_probabilities(probabilities: Vec<f64>) -> Self {
        let support = probabilities
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| i)
            .collect();
        Self {
            probabilities,
            support,
        }
    }
}

fn check_input(z: &[f64]) -> Result<()> {
    if z.is_empty() {
        return Err(Error::Contract("simplex mapping of an empty vector".into()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("simplex mapping input".into()));
    }
    Ok(())
}

/// Order of indices by descending value; equal values keep index order.
fn descending_order(z: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..z.len()).collect();
    order.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
    order
}

/// Euclidean projection onto the simplex.
pub fn sparsemax(z: &[f64]) -> Result<SimplexOutput> {
    check_input(z)?;
    let order = descending_order(z);
    let mut cumsum = 0.0;
    let mut k = 0;
    let mut k_sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        cumsum += z[i];
        let r = (rank + 1) as f64;
        if 1.0 + r * z[i] > cumsum {
            k = rank + 1;
            k_sum = cumsum;
        }
    }
    let mut p = vec![0.0; z.len()];
    if k == 2 {
        // Two-element support has the closed form (z_a − z_b + 1)/2.
        let (a, b) = (order[0], order[1]);
        p[a] = (z[a] - z[b] + 1.0) / 2.0;
        p[b] = (z[b] - z[a] + 1.0) / 2.0;
    } else {
        let tau = (k_sum - 1.0) / k as f64;
        for &i in &order[..k] {
            p[i] = (z[i] - tau).max(0.0);
        }
    }
    Ok(SimplexOutput::from_probabilities(p))
}

pub fn sparsemax_backward(output: &SimplexOutput, upstream: &[f64]) -> Result<Vec<f64>> {
    entmax_backward(output, 2.0, upstream)
}

/// Row softmax with max-subtraction.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    check_input(z)?;
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    Ok(p)
}

/// α-entmax for α ∈ [1, 2].
pub fn entmax(z: &[f64], alpha: f64) -> Result<SimplexOutput> {
    if !(1.0..=2.0).contains(&alpha) {
        return Err(Error::Contract(format!(
            "entmax alpha must lie in [1, 2], got {alpha}"
        )));
    }
    check_input(z)?;
    if alpha == 1.0 {
        return Ok(SimplexOutput::from_probabilities(softmax(z)?));
    }

    let am1 = alpha - 1.0;
    let exponent = 1.0 / am1;
    let a: Vec<f64> = z.iter().map(|v| v * am1).collect();
    let a_max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mass = |tau: f64| -> f64 {
        a.iter()
            .map(|&ai| {
                let d = ai - tau;
                if d > 0.0 {
                    d.powf(exponent)
                } else {
                    0.0
                }
            })
            .sum()
    };

    // mass(lo) >= 1 and mass(hi) <= 1.
    let n = a.len() as f64;
    let mut lo = a_max - 1.0;
    let mut hi = a_max - (1.0 / n).powf(am1);
    for _ in 0..MAX_BISECTION_ITERS {
        if hi - lo <= BISECTION_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mass(mid) >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);

    // Tighten τ on the identified support where a closed form exists.
    let support: Vec<usize> = (0..a.len()).filter(|&i| a[i] > tau).collect();
    let exact_tau = closed_form_tau(&a, &support, alpha).filter(|&t| {
        (0..a.len()).all(|i| {
            if support.contains(&i) {
                a[i] > t
            } else {
                a[i] <= t
            }
        })
    });

    let p = match exact_tau {
        Some(t) => a
            .iter()
            .map(|&ai| if ai > t { (ai - t).powf(exponent) } else { 0.0 })
            .collect(),
        None => {
            let mut p: Vec<f64> = a
                .iter()
                .map(|&ai| {
                    if ai > tau {
                        (ai - tau).powf(exponent)
                    } else {
                        0.0
                    }
                })
                .collect();
            let total: f64 = p.iter().sum();
            for v in &mut p {
                *v /= total;
            }
            p
        }
    };
    Ok(SimplexOutput::from_probabilities(p))
}

/// τ solving Σ_{i∈S} (a_i − τ)^{1/(α−1)} = 1 in closed form, for α ∈ {1.5, 2}.
fn closed_form_tau(a: &[f64], support: &[usize], alpha: f64) -> Option<f64> {
    if support.is_empty() {
        return None;
    }
    let k = support.len() as f64;
    let s1: f64 = support.iter().map(|&i| a[i]).sum();
    if alpha == 2.0 {
        Some((s1 - 1.0) / k)
    } else if alpha == 1.5 {
        let s2: f64 = support.iter().map(|&i| a[i] * a[i]).sum();
        let disc = s1 * s1 - k * (s2 - 1.0);
        if disc < 0.0 {
            return None;
        }
        Some((s1 - disc.sqrt()) / k)
    } else {
        None
    }
}

/// Vector-Jacobian product of α-entmax at `output`.
pub fn entmax_backward(output: &SimplexOutput, alpha: f64, upstream: &[f64]) -> Result<Vec<f64>> {
    let p = &output.probabilities;
    if upstream.len() != p.len() {
        return Err(Error::Shape(format!(
            "upstream gradient has length {}, output has {}",
            upstream.len(),
            p.len()
        )));
    }
    let mut g = vec![0.0; p.len()];
    entmax_backward_into(p, alpha, upstream, &mut g);
    Ok(g)
}

pub(crate) fn entmax_backward_into(p: &[f64], alpha: f64, upstream: &[f64], out: &mut [f64]) {
    let weight = |pi: f64| -> f64 {
        if pi <= 0.0 {
            0.0
        } else if alpha == 2.0 {
            1.0
        } else if alpha == 1.5 {
            pi.sqrt()
        } else {
            pi.powf(2.0 - alpha)
        }
    };
    let mut s_sum = 0.0;
    let mut sv_sum = 0.0;
    for (&pi, &vi) in p.iter().zip(upstream) {
        let s = weight(pi);
        s_sum += s;
        sv_sum += s * vi;
    }
    let q = if s_sum > 0.0 { sv_sum / s_sum } else { 0.0 };
    for ((o, &pi), &vi) in out.iter_mut().zip(p).zip(upstream) {
        let s = weight(pi);
        *o = s * (vi - q);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn on_simplex(p: &[f64]) -> bool {
        p.iter().all(|&v| v >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-9
    }

    #[test]
    fn sparsemax_examples() {
        let out = sparsemax(&[3.0; 4]).unwrap();
        for &p in &out.probabilities {
            assert!((p - 0.25).abs() < 1e-15);
        }
        assert_eq!(sparsemax(&[2.0, 0.0]).unwrap().probabilities, vec![1.0, 0.0]);
        let p = sparsemax(&[0.2, 0.0]).unwrap().probabilities;
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.4).abs() < 1e-15);
        assert!(sparsemax(&[]).is_err());
    }

    #[test]
    fn sparsemax_support_matches_probabilities() {
        let out = sparsemax(&[1.5, 0.1, 1.2, -3.0]).unwrap();
        assert_eq!(out.support, vec![0, 2]);
        assert!(on_simplex(&out.probabilities));
    }

    #[test]
    fn sparsemax_backward_examples() {
        let full = sparsemax(&[0.1, 0.2, 0.15]).unwrap();
        assert_eq!(full.support.len(), 3);
        let g = sparsemax_backward(&full, &[2.0, 2.0, 2.0]).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));

        let one_hot = sparsemax(&[5.0, 0.0, 0.0]).unwrap();
        let g = sparsemax_backward(&one_hot, &[1.0, -2.0, 3.0]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn entmax_examples() {
        for alpha in [1.0, 1.2, 1.5, 1.8, 2.0] {
            let p = entmax(&[0.0, 0.0], alpha).unwrap().probabilities;
            assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12, "{alpha}");
        }
        let p = entmax(&[10.0, 0.0], 1.5).unwrap().probabilities;
        assert!((p[0] - 1.0).abs() < 1e-9 && p[1].abs() < 1e-9);
        assert!(entmax(&[1.0], 2.5).is_err());
        assert!(entmax(&[1.0], 0.5).is_err());
    }

    #[test]
    fn entmax_one_is_softmax() {
        let z = [0.3, -1.0, 2.0];
        let a = entmax(&z, 1.0).unwrap().probabilities;
        let b = softmax(&z).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn softmax_closed_form() {
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = softmax(&[0.7; 5]).unwrap();
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    /// Sort-based exact entmax-1.5, written independently of the bisection routine.
    fn entmax15_sorted(z: &[f64]) -> Vec<f64> {
        let a: Vec<f64> = z.iter().map(|v| v / 2.0).collect();
        let mut sorted = a.clone();
        sorted.sort_by(|x, y| y.total_cmp(x));
        let mut tau_star = 0.0;
        let (mut s1, mut s2) = (0.0, 0.0);
        for (k0, &v) in sorted.iter().enumerate() {
            let k = (k0 + 1) as f64;
            s1 += v;
            s2 += v * v;
            let mean = s1 / k;
            let ss = s2 / k;
            let delta = (1.0 - k * (ss - mean * mean)) / k;
            if delta < 0.0 {
                break;
            }
            let tau = mean - delta.sqrt();
            if tau <= v {
                tau_star = tau;
            }
        }
        a.iter().map(|&ai| (ai - tau_star).max(0.0).powi(2)).collect()
    }

    fn finite_difference_vjp(
        f: impl Fn(&[f64]) -> Vec<f64>,
        z: &[f64],
        v: &[f64],
    ) -> Vec<f64> {
        let h = 1e-6;
        (0..z.len())
            .map(|i| {
                let mut zp = z.to_vec();
                let mut zm = z.to_vec();
                zp[i] += h;
                zm[i] -= h;
                let fp = f(&zp);
                let fm = f(&zm);
                fp.iter()
                    .zip(&fm)
                    .zip(v)
                    .map(|((a, b), w)| w * (a - b) / (2.0 * h))
                    .sum()
            })
            .collect()
    }

    proptest! {
        #[test]
        fn entmax15_matches_sorted_oracle(z in prop::collection::vec(-3.0f64..3.0, 1..12)) {
            let p = entmax(&z, 1.5).unwrap().probabilities;
            let q = entmax15_sorted(&z);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9, "{p:?} vs {q:?}");
            }
        }

        #[test]
        fn translation_invariance(
            z in prop::collection::vec(-3.0f64..3.0, 1..10),
            c in -50.0f64..50.0,
            alpha in prop::sample::select(vec![1.0, 1.5, 2.0]),
        ) {
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let p = entmax(&z, alpha).unwrap().probabilities;
            let q = entmax(&shifted, alpha).unwrap().probabilities;
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn argmax_is_preserved(
            z in prop::collection::vec(-3.0f64..3.0, 1..10),
            alpha in prop::sample::select(vec![1.0, 1.3, 1.5, 2.0]),
        ) {
            let p = entmax(&z, alpha).unwrap();
            let imax = descending_order(&z)[0];
            prop_assert!(p.support.contains(&imax));
            let pmax = p.probabilities.iter().copied().fold(0.0, f64::max);
            prop_assert_eq!(p.probabilities[imax], pmax);
        }

        #[test]
        fn sparsemax_support_not_larger_than_entmax15(z in prop::collection::vec(-3.0f64..3.0, 1..10)) {
            let s2 = sparsemax(&z).unwrap().support.len();
            let s15 = entmax(&z, 1.5).unwrap().support.len();
            prop_assert!(s2 <= s15);
        }

        #[test]
        fn backward_matches_finite_differences(
            z in prop::collection::vec(-2.0f64..2.0, 6),
            v in prop::collection::vec(-2.0f64..2.0, 6),
            alpha in prop::sample::select(vec![1.0, 1.5, 2.0]),
        ) {
            let out = entmax(&z, alpha).unwrap();
            // Skip points within reach of a support change.
            let margin_ok = {
                let h = 1e-4;
                (0..z.len()).all(|i| {
                    let mut zp = z.clone();
                    zp[i] += h;
                    let mut zm = z.clone();
                    zm[i] -= h;
                    entmax(&zp, alpha).unwrap().support == out.support
                        && entmax(&zm, alpha).unwrap().support == out.support
                })
            };
            prop_assume!(margin_ok);
            let g = entmax_backward(&out, alpha, &v).unwrap();
            let fd = finite_difference_vjp(|x| entmax(x, alpha).unwrap().probabilities, &z, &v);
            for (a, b) in g.iter().zip(&fd) {
                prop_assert!((a - b).abs() <= 1e-4 * (1.0 + b.abs()), "{g:?} vs {fd:?}");
            }
        }
    }
}
