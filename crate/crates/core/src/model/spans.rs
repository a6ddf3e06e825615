use super::ModelError;

/// Start/end token distributions from an extractive QA head.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanDistributions {
    pub p_start: Vec<f64>,
    pub p_end: Vec<f64>,
    /// True for positions inside the context (not question, CLS, or padding).
    pub context_mask: Vec<bool>,
}

impl SpanDistributions {
    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.p_start.len();
        if self.p_end.len() != n || self.context_mask.len() != n {
            return Err(ModelError::InvalidDistribution(format!(
                "lengths differ: start {n}, end {}, mask {}",
                self.p_end.len(),
                self.context_mask.len()
            )));
        }
        for (name, v) in [("p_start", &self.p_start), ("p_end", &self.p_end)] {
            if v.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(ModelError::InvalidDistribution(format!(
                    "{name} has a negative or non-finite entry"
                )));
            }
            let total: f64 = v.iter().sum();
            if (total - 1.0).abs() > 1e-6 {
                return Err(ModelError::InvalidDistribution(format!(
                    "{name} sums to {total}"
                )));
            }
        }
        Ok(())
    }
}

/// Probability that the predicted span is a valid answer inside the context:
/// the mass of all start/end pairs `i <= j` with both ends in the context.
/// Everything else (reversed spans, spans touching the question or control
/// tokens) counts as "no answer".
pub fn answerability_from_spans(d: &SpanDistributions) -> Result<f64, ModelError> {
    d.validate()?;
    let mut start_mass = 0.0;
    let mut total = 0.0;
    for j in 0..d.p_start.len() {
        if d.context_mask[j] {
            start_mass += d.p_start[j];
            total += d.p_end[j] * start_mass;
        }
    }
    Ok(total.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(p_start: &[f64], p_end: &[f64], mask: &[bool]) -> SpanDistributions {
        SpanDistributions {
            p_start: p_start.to_vec(),
            p_end: p_end.to_vec(),
            context_mask: mask.to_vec(),
        }
    }

    /// Enumerate every (start, end) pair directly.
    fn brute_force(d: &SpanDistributions) -> f64 {
        let n = d.p_start.len();
        let mut total = 0.0;
        for i in 0..n {
            for j in i..n {
                if d.context_mask[i] && d.context_mask[j] {
                    total += d.p_start[i] * d.p_end[j];
                }
            }
        }
        total
    }

    #[test]
    fn single_valid_span() {
        let d = dist(&[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0], &[false, true, true]);
        assert_eq!(answerability_from_spans(&d).unwrap(), 1.0);
    }

    #[test]
    fn start_on_control_token() {
        let d = dist(&[1.0, 0.0], &[0.0, 1.0], &[false, true]);
        assert_eq!(answerability_from_spans(&d).unwrap(), 0.0);
    }

    #[test]
    fn half_mass_on_control() {
        let d = dist(&[0.5, 0.5], &[0.5, 0.5], &[false, true]);
        assert_eq!(brute_force(&d), 0.25);
        assert_eq!(answerability_from_spans(&d).unwrap(), 0.25);
    }

    #[test]
    fn empty_mask_is_zero() {
        let d = dist(&[0.5, 0.5], &[0.5, 0.5], &[false, false]);
        assert_eq!(answerability_from_spans(&d).unwrap(), 0.0);
    }

    #[test]
    fn rejects_unnormalized() {
        let d = dist(&[0.5, 0.4], &[0.5, 0.5], &[true, true]);
        assert!(answerability_from_spans(&d).is_err());
        let d = dist(&[1.0], &[0.5, 0.5], &[true, true]);
        assert!(answerability_from_spans(&d).is_err());
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, n).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    fn instance() -> impl Strategy<Value = SpanDistributions> {
        (2usize..9).prop_flat_map(|n| {
            (
                simplex(n),
                simplex(n),
                prop::collection::vec(any::<bool>(), n),
            )
                .prop_map(|(s, e, m)| dist(&s, &e, &m))
        })
    }

    proptest! {
        #[test]
        fn matches_pair_enumeration(d in instance()) {
            let p = answerability_from_spans(&d).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert!((p - brute_force(&d)).abs() < 1e-12);
        }

        #[test]
        fn moving_start_mass_into_context_never_hurts(d in instance(), from in 0usize..9, to in 0usize..9, frac in 0.0f64..1.0) {
            let n = d.p_start.len();
            let (from, to) = (from % n, to % n);
            prop_assume!(from != to);
            let mut d = d;
            d.context_mask[from] = false;
            d.context_mask[to] = true;
            let mut moved = d.clone();
            let amount = moved.p_start[from] * frac;
            moved.p_start[from] -= amount;
            moved.p_start[to] += amount;
            let before = answerability_from_spans(&d).unwrap();
            let after = answerability_from_spans(&moved).unwrap();
            prop_assert!(after >= before - 1e-12);
        }
    }
}
