//! Small numeric helpers shared across modules.

/// Logistic function, evaluated without overflow for large `|x|`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`, stable for large `|x|`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// Binary cross-entropy of a logit against a 0/1 label:
/// `-(y ln σ(z) + (1-y) ln(1-σ(z)))`.
#[inline]
pub fn bce_with_logit(logit: f64, label: f64) -> f64 {
    // -ln σ(z) = softplus(-z), -ln(1-σ(z)) = softplus(z)
    label * softplus(-logit) + (1.0 - label) * softplus(logit)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Pearson correlation; `None` when either side is constant or the slices
/// are shorter than two.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let ma = mean(a)?;
    let mb = mean(b)?;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / libm::sqrt(saa * sbb))
}

/// Weighted mean `Σ w·v / Σ w`; `None` when the weights sum to zero.
pub fn weighted_mean<I>(pairs: I) -> Option<f64>
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let (mut num, mut den) = (0.0, 0.0);
    for (w, v) in pairs {
        num += w * v;
        den += w;
    }
    (den > 0.0).then(|| num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_symmetric_and_bounded() {
        assert_eq!(sigmoid(0.0), 0.5);
        for x in [-800.0, -30.0, -1.0, 0.3, 12.0, 800.0] {
            let s = sigmoid(x);
            assert!((0.0..=1.0).contains(&s));
            assert!((s + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bce_matches_direct_formula() {
        for z in [-3.0, -0.2, 0.0, 1.7] {
            let p = sigmoid(z);
            assert!((bce_with_logit(z, 1.0) + libm::log(p)).abs() < 1e-12);
            assert!((bce_with_logit(z, 0.0) + libm::log(1.0 - p)).abs() < 1e-12);
        }
        // no overflow at saturation
        assert!(bce_with_logit(1000.0, 1.0) < 1e-300);
        assert!((bce_with_logit(-1000.0, 1.0) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn pearson_edge_cases() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]), Some(1.0));
        assert!(pearson(&[1.0, 1.0], &[0.0, 1.0]).is_none());
        assert!(pearson(&[1.0], &[1.0]).is_none());
    }
}
