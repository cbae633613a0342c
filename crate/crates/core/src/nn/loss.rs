use crate::error::{Error, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

fn check_dims(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    Ok(())
}

/// `1 − cos(u, v)`, in [0, 2].
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims(u, v)?;
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let cos = (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}

/// Cosine distance with its gradients with respect to `u` and `v`.
pub fn cosine_distance_grad(u: &[f64], v: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_dims(u, v)?;
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let uv = dot(u, v);
    let cos = uv / (nu * nv);
    // d cos / du = v/(|u||v|) − cos·u/|u|²
    let du = u
        .iter()
        .zip(v)
        .map(|(&a, &b)| -(b / (nu * nv) - cos * a / (nu * nu)))
        .collect();
    let dv = u
        .iter()
        .zip(v)
        .map(|(&a, &b)| -(a / (nu * nv) - cos * b / (nv * nv)))
        .collect();
    Ok((1.0 - cos, du, dv))
}

/// `max(0, D(a,p) − D(a,n) + margin)` with cosine distance `D`.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> Result<f64> {
    let dp = cosine_distance(anchor, positive)?;
    let dn = cosine_distance(anchor, negative)?;
    Ok((dp - dn + margin).max(0.0))
}

#[derive(Debug, Clone)]
pub struct TripletGrad {
    pub loss: f64,
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

pub fn triplet_loss_grad(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    margin: f64,
) -> Result<TripletGrad> {
    let (dp, da_p, dpos) = cosine_distance_grad(anchor, positive)?;
    let (dn, da_n, dneg) = cosine_distance_grad(anchor, negative)?;
    let raw = dp - dn + margin;
    if raw <= 0.0 {
        let zeros = vec![0.0; anchor.len()];
        return Ok(TripletGrad {
            loss: 0.0,
            anchor: zeros.clone(),
            positive: zeros.clone(),
            negative: zeros,
        });
    }
    Ok(TripletGrad {
        loss: raw,
        anchor: da_p.iter().zip(&da_n).map(|(p, n)| p - n).collect(),
        positive: dpos,
        negative: dneg.into_iter().map(|g| -g).collect(),
    })
}

fn smoothed_targets(k: usize, target: usize, smoothing: f64) -> Result<Vec<f64>> {
    if target >= k {
        return Err(Error::IndexOutOfRange {
            index: target,
            size: k,
        });
    }
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::InvalidConfig(format!(
            "label smoothing {smoothing} not in [0, 1)"
        )));
    }
    let base = smoothing / k as f64;
    let mut q = vec![base; k];
    q[target] += 1.0 - smoothing;
    Ok(q)
}

/// `−Σ q_k log p_k` with `q = (1−s)·onehot + s/K`.
pub fn smoothed_cross_entropy(probs: &[f64], target: usize, smoothing: f64) -> Result<f64> {
    let q = smoothed_targets(probs.len(), target, smoothing)?;
    Ok(-q
        .iter()
        .zip(probs)
        .filter(|(&qk, _)| qk > 0.0)
        .map(|(qk, pk)| qk * pk.ln())
        .sum::<f64>())
}

/// Smoothed cross-entropy evaluated from logits, with its logit gradient `p − q`.
pub fn smoothed_cross_entropy_logits(
    logits: &[f64],
    target: usize,
    smoothing: f64,
) -> Result<(f64, Vec<f64>)> {
    let q = smoothed_targets(logits.len(), target, smoothing)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    let loss = -q
        .iter()
        .zip(logits)
        .map(|(qk, z)| qk * (z - log_sum))
        .sum::<f64>();
    let grad = logits
        .iter()
        .zip(&q)
        .map(|(z, qk)| (z - log_sum).exp() - qk)
        .collect();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0, 0.0]);
        p.iter().for_each(|&v| assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15));
        assert_eq!(softmax(&[1000.0, 1000.0]), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]);
        assert_abs_diff_eq!(p[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn cosine_examples() {
        assert_abs_diff_eq!(cosine_distance(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 2.0);
        assert!(matches!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn triplet_examples() {
        assert_eq!(triplet_loss(&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], 1.0).unwrap(), 0.0);
        assert_eq!(triplet_loss(&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], 1.0).unwrap(), 1.0);
        assert_eq!(triplet_loss(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], 1.0).unwrap(), 2.0);
    }

    #[test]
    fn smoothed_ce_examples() {
        let k = 30;
        let uniform = vec![1.0 / k as f64; k];
        for target in [0, 7, 29] {
            assert_abs_diff_eq!(
                smoothed_cross_entropy(&uniform, target, 0.1).unwrap(),
                (30f64).ln(),
                epsilon = 1e-12
            );
        }
        // hand evaluation: −(0.9·ln 0.75 + 0.1·ln 0.25)
        let expected = -(0.9 * 0.75f64.ln() + 0.1 * 0.25f64.ln());
        let got = smoothed_cross_entropy(&[0.75, 0.25], 0, 0.2).unwrap();
        assert_abs_diff_eq!(got, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(got, 0.3975, epsilon = 1e-4);

        let near_one_hot = [1.0 - 1e-9, 1e-9];
        assert!(smoothed_cross_entropy(&near_one_hot, 0, 0.0).unwrap() < 1e-8);
        assert!(matches!(
            smoothed_cross_entropy(&[0.5, 0.5], 2, 0.1),
            Err(Error::IndexOutOfRange { index: 2, size: 2 })
        ));
    }

    #[test]
    fn logits_form_matches_probability_form() {
        let logits = [0.3, -1.2, 2.0, 0.0];
        let (loss, _) = smoothed_cross_entropy_logits(&logits, 2, 0.1).unwrap();
        let direct = smoothed_cross_entropy(&softmax(&logits), 2, 0.1).unwrap();
        assert_abs_diff_eq!(loss, direct, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            logits in prop::collection::vec(-50.0f64..50.0, 1..20),
            shift in -100.0f64..100.0,
        ) {
            let p = softmax(&logits);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| v > 0.0));
            let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
            let q = softmax(&shifted);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn triplet_is_nonnegative_and_zero_past_margin(
            a in prop::collection::vec(-1.0f64..1.0, 4),
            p in prop::collection::vec(-1.0f64..1.0, 4),
            n in prop::collection::vec(-1.0f64..1.0, 4),
            margin in 0.01f64..2.0,
        ) {
            prop_assume!(a.iter().any(|v| v.abs() > 1e-3));
            prop_assume!(p.iter().any(|v| v.abs() > 1e-3));
            prop_assume!(n.iter().any(|v| v.abs() > 1e-3));
            let loss = triplet_loss(&a, &p, &n, margin).unwrap();
            prop_assert!(loss >= 0.0);
            let dp = cosine_distance(&a, &p).unwrap();
            let dn = cosine_distance(&a, &n).unwrap();
            if dn >= dp + margin {
                prop_assert_eq!(loss, 0.0);
            }
        }
    }
}
