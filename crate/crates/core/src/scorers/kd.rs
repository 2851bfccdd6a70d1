//! Knowledge-distillation losses (batch teacher, streaming student).

use crate::error::{Error, Result};

const NORM_TOLERANCE: f64 = 1e-6;

/// Cross-entropy `-Σ q(y) log p(y)` of a student log-distribution against a
/// teacher distribution.
///
/// Returns `+∞` when the student puts zero mass on a token the teacher
/// supports; tokens with zero teacher mass contribute nothing.
///
/// ```
/// let q = [0.25; 4];
/// let p = [0.25f64.ln(); 4];
/// let loss = blocksync::scorers::kd_loss(&q, &p).unwrap();
/// assert!((loss - 4f64.ln()).abs() < 1e-12);
/// ```
pub fn kd_loss(teacher: &[f64], student_log: &[f64]) -> Result<f64> {
    if teacher.len() != student_log.len() {
        return Err(Error::Shape(format!(
            "teacher has {} entries, student {}",
            teacher.len(),
            student_log.len()
        )));
    }
    let sum: f64 = teacher.iter().sum();
    if teacher.iter().any(|&q| q < 0.0) || (sum - 1.0).abs() > NORM_TOLERANCE {
        return Err(Error::NotNormalized(sum));
    }
    let mut loss = 0.0;
    for (&q, &lp) in teacher.iter().zip(student_log) {
        if q == 0.0 {
            continue;
        }
        if lp == f64::NEG_INFINITY {
            return Ok(f64::INFINITY);
        }
        loss -= q * lp;
    }
    Ok(loss)
}

/// `(1 - λ) l_att + λ l_kd`, exact at both endpoints.
pub fn kd_combined_loss(l_att: f64, l_kd: f64, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::WeightOutOfRange {
            name: "kd weight",
            value: lambda,
        });
    }
    Ok(if lambda == 0.0 {
        l_att
    } else if lambda == 1.0 {
        l_kd
    } else {
        (1.0 - lambda) * l_att + lambda * l_kd
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_match_is_zero() {
        let q = [0.0, 1.0, 0.0];
        let p = [f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY];
        assert_eq!(kd_loss(&q, &p).unwrap(), 0.0);
    }

    #[test]
    fn missing_support_is_infinite() {
        let q = [0.5, 0.5];
        let p = [0.0, f64::NEG_INFINITY];
        assert_eq!(kd_loss(&q, &p).unwrap(), f64::INFINITY);
    }

    #[test]
    fn teacher_must_be_normalized() {
        assert!(matches!(kd_loss(&[0.5, 0.4], &[0.0, 0.0]), Err(Error::NotNormalized(_))));
    }

    #[test]
    fn combined() {
        assert_eq!(kd_combined_loss(2.0, 4.0, 0.5).unwrap(), 3.0);
        assert_eq!(kd_combined_loss(2.0, f64::INFINITY, 0.0).unwrap(), 2.0);
        assert_eq!(kd_combined_loss(2.0, 4.0, 1.0).unwrap(), 4.0);
        assert!(kd_combined_loss(2.0, 4.0, 1.5).is_err());
        assert!(kd_combined_loss(2.0, 4.0, -0.1).is_err());
    }
}
