use crate::error::{Error, Result};

/// `out[i] = rec_grad[i] + w[i] * wm_grad[i]`, per primitive and channel.
pub fn routed_gradient(rec_grad: &[Vec<f64>], wm_grad: &[Vec<f64>], w: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = rec_grad.len();
    for (context, len) in [("routing watermark gradient", wm_grad.len()), ("routing weights", w.len())] {
        if len != n {
            return Err(Error::LengthMismatch { context, expected: n, actual: len });
        }
    }
    if let Some(bad) = w.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::param("w", format!("gate weights must lie in [0, 1], got {bad}")));
    }
    rec_grad
        .iter()
        .zip(wm_grad)
        .zip(w)
        .map(|((r, m), &wi)| {
            if r.len() != m.len() {
                return Err(Error::LengthMismatch { context: "routing channels", expected: r.len(), actual: m.len() });
            }
            Ok(r.iter().zip(m).map(|(a, b)| a + wi * b).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let rec = vec![vec![0.2], vec![0.2], vec![0.2]];
        let wm = vec![vec![0.4], vec![0.4], vec![0.4]];
        let out = routed_gradient(&rec, &wm, &[0.0, 1.0, 0.5]).unwrap();
        assert_eq!(out[0], vec![0.2]);
        assert!((out[1][0] - 0.6).abs() < 1e-15);
        assert!((out[2][0] - 0.4).abs() < 1e-15);
        assert!(routed_gradient(&rec, &wm, &[0.0]).is_err());
        assert!(routed_gradient(&rec, &wm, &[0.0, 1.5, 0.0]).is_err());
    }
}
