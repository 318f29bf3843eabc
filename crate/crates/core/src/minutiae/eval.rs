use alloc::vec::Vec;

use super::MinutiaeError;

/// Error-rate curves over a threshold grid.
///
/// FAR is the false match rate (FMR) and FRR the false non-match rate (FNMR).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Distinct observed scores plus 0 and 1, ascending.
    pub thresholds: Vec<f64>,
    /// Fraction of impostor scores `>= t`.
    pub far: Vec<f64>,
    /// Fraction of genuine scores `< t`.
    pub frr: Vec<f64>,
    pub eer: f64,
}

impl EvalReport {
    pub fn fmr(&self) -> &[f64] {
        &self.far
    }

    pub fn fnmr(&self) -> &[f64] {
        &self.frr
    }
}

/// Sweeps every distinct score as a threshold and locates the equal error
/// rate where the FAR and FRR curves cross, interpolating linearly between
/// neighbouring thresholds. If FAR still exceeds FRR at the last threshold
/// the curves are extended to the reject-everything point (FAR 0, FRR 1).
pub fn evaluate(genuine: &[f64], impostor: &[f64]) -> Result<EvalReport, MinutiaeError> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(MinutiaeError::EmptyScores);
    }
    if let Some(&bad) = genuine.iter().chain(impostor).find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(MinutiaeError::ScoreOutOfRange(bad));
    }

    let mut thresholds: Vec<f64> = genuine.iter().chain(impostor).copied().chain([0.0, 1.0]).collect();
    thresholds.sort_by(f64::total_cmp);
    // PartialEq dedup also folds -0.0 into 0.0
    thresholds.dedup();

    let mut g = genuine.to_vec();
    let mut i = impostor.to_vec();
    g.sort_by(f64::total_cmp);
    i.sort_by(f64::total_cmp);
    let (ng, ni) = (g.len() as f64, i.len() as f64);

    let mut far = Vec::with_capacity(thresholds.len());
    let mut frr = Vec::with_capacity(thresholds.len());
    for &t in &thresholds {
        let impostor_below = i.partition_point(|&s| s < t);
        let genuine_below = g.partition_point(|&s| s < t);
        far.push((i.len() - impostor_below) as f64 / ni);
        frr.push(genuine_below as f64 / ng);
    }

    let eer = crossing(&far, &frr);
    Ok(EvalReport { thresholds, far, frr, eer })
}

fn crossing(far: &[f64], frr: &[f64]) -> f64 {
    let gap = |k: usize| far[k] - frr[k];
    for k in 0..far.len() {
        let d = gap(k);
        if d == 0.0 {
            return far[k];
        }
        if d < 0.0 {
            // far[0] = 1 and frr[0] = 0, so k > 0 here
            let prev = gap(k - 1);
            let alpha = prev / (prev - d);
            return far[k - 1] + alpha * (far[k] - far[k - 1]);
        }
    }
    let last = far.len() - 1;
    let prev = gap(last);
    let alpha = prev / (prev + 1.0);
    far[last] - alpha * far[last]
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn separable_scores_have_zero_eer() {
        let r = evaluate(&[0.9, 0.8], &[0.1, 0.2]).unwrap();
        assert_eq!(r.eer, 0.0);
        assert_eq!(r.thresholds, vec![0.0, 0.1, 0.2, 0.8, 0.9, 1.0]);
        assert_eq!(r.far, vec![1.0, 1.0, 0.5, 0.0, 0.0, 0.0]);
        assert_eq!(r.frr, vec![0.0, 0.0, 0.0, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn identical_scores_give_half() {
        assert_eq!(evaluate(&[0.5], &[0.5]).unwrap().eer, 0.5);
    }

    #[test]
    fn all_perfect_scores_cross_past_last_threshold() {
        let r = evaluate(&[1.0], &[1.0]).unwrap();
        assert_eq!(r.thresholds, vec![0.0, 1.0]);
        assert_eq!(r.eer, 0.5);
    }

    #[test]
    fn empty_lists_are_rejected() {
        assert_eq!(evaluate(&[], &[0.1]), Err(MinutiaeError::EmptyScores));
        assert_eq!(evaluate(&[0.1], &[]), Err(MinutiaeError::EmptyScores));
        assert_eq!(evaluate(&[1.5], &[0.1]), Err(MinutiaeError::ScoreOutOfRange(1.5)));
    }

    #[test]
    fn aliases_point_at_the_same_curves() {
        let r = evaluate(&[0.7, 0.3], &[0.4]).unwrap();
        assert_eq!(r.fmr(), &r.far[..]);
        assert_eq!(r.fnmr(), &r.frr[..]);
    }
}
