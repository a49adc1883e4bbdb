use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tape::Var;

/// Mean over the batch of `−log softmax(logits)[label]`. `logits` is N×K.
pub fn cross_entropy<'t, T: Real>(logits: Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::dim(format!("cross entropy needs N×K logits for {} labels, got {s:?}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= s[1]) {
        return Err(Error::contract(format!("label {bad} out of range for {} classes", s[1])));
    }
    Ok(logits.log_softmax(1)?.pick(labels)?.mean().scale(-T::one()))
}

/// Positive-class probability `softmax(row)[1]` for each row of N×2 logits.
pub fn positive_probabilities<T: Real>(logits: &crate::tensor::Tensor<T>) -> Vec<f64> {
    logits
        .data()
        .chunks(2)
        .map(|r| {
            let (a, b) = (r[0].as_f64(), r[1].as_f64());
            // softmax(b) = 1 / (1 + e^(a − b)), stable for either sign.
            1.0 / (1.0 + (a - b).exp())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use crate::tensor::Tensor;

    fn loss(logits: &[f64], labels: &[usize]) -> f64 {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_f64(&[labels.len(), 2], logits).unwrap());
        cross_entropy(x, labels).unwrap().value().data()[0]
    }

    #[test]
    fn examples() {
        assert!((loss(&[0.0, 0.0], &[1]) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(loss(&[20.0, -20.0], &[0]) < 1e-8);
        // −log(e² / (e + e²)) = log(1 + e^(−1))
        let want = (1.0 + (-1.0f64).exp()).ln();
        assert!((loss(&[1.0, 2.0], &[1]) - want).abs() < 1e-12);
        assert!((want - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn bad_label_is_contract_error() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2]).unwrap());
        assert!(matches!(cross_entropy(x, &[2]), Err(Error::Contract(_))));
    }

    #[test]
    fn probabilities_are_softmax() {
        let p = positive_probabilities(&Tensor::<f64>::from_f64(&[2, 2], &[0.0, 0.0, 1.0, 2.0]).unwrap());
        assert_eq!(p[0], 0.5);
        let e = 1f64.exp();
        assert!((p[1] - e * e / (e + e * e)).abs() < 1e-15);
    }
}
