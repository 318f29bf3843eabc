use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_6, PI};

use super::{angle_difference, Minutia, MinutiaeError, Template};

/// Pairing tolerances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams {
    /// Maximum distance in pixels between paired minutiae.
    pub r0: f64,
    /// Maximum angular difference in radians.
    pub a0: f64,
    /// Only pair minutiae of the same kind.
    pub kind_strict: bool,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self { r0: 10.0, a0: FRAC_PI_6, kind_strict: true }
    }
}

impl MatchParams {
    pub fn new(r0: f64, a0: f64, kind_strict: bool) -> Result<Self, MinutiaeError> {
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(MinutiaeError::BadParams("distance tolerance must be positive"));
        }
        if !(a0 > 0.0 && a0 <= PI) {
            return Err(MinutiaeError::BadParams("angle tolerance must lie in (0, π]"));
        }
        Ok(Self { r0, a0, kind_strict })
    }
}

/// `p' = R(rotation) · p + (dx, dy)`, with minutia angles shifted by `rotation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub dx: f64,
    pub dy: f64,
    pub rotation: f64,
}

impl RigidTransform {
    pub const IDENTITY: Self = Self { dx: 0.0, dy: 0.0, rotation: 0.0 };

    pub fn apply(&self, m: &Minutia) -> Minutia {
        let (s, c) = libm::sincos(self.rotation);
        Minutia::new(
            c * m.x - s * m.y + self.dx,
            s * m.x + c * m.y + self.dy,
            m.theta + self.rotation,
            m.kind,
        )
    }

    /// The motion that puts `from` exactly onto `onto`, position and angle.
    fn aligning(from: &Minutia, onto: &Minutia) -> Self {
        let rotation = onto.theta - from.theta;
        let (s, c) = libm::sincos(rotation);
        Self {
            dx: onto.x - (c * from.x - s * from.y),
            dy: onto.y - (s * from.x + c * from.y),
            rotation,
        }
    }

    fn inverse(&self) -> Self {
        let (s, c) = libm::sincos(-self.rotation);
        Self {
            dx: -(c * self.dx - s * self.dy),
            dy: -(s * self.dx + c * self.dy),
            rotation: -self.rotation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    /// `2m / (n1 + n2)`, or 0 when both templates are empty.
    pub score: f64,
    pub matched_pairs: usize,
    pub n1: usize,
    pub n2: usize,
    /// Best motion taking the second template onto the first.
    pub transform: RigidTransform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Accept,
    Reject,
}

/// Accepts iff `score >= threshold`.
pub fn decide(result: &MatchResult, threshold: f64) -> Result<Decision, MinutiaeError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(MinutiaeError::BadThreshold(threshold));
    }
    Ok(if result.score >= threshold { Decision::Accept } else { Decision::Reject })
}

/// Scores two templates by exhaustive reference-pair alignment.
///
/// Every (fixed, moving) minutia pair proposes the rigid motion that lays the
/// moving one on the fixed one; the motion is applied to the whole moving
/// template and minutiae are greedily paired nearest-first. Both templates
/// take a turn as the fixed one, which makes the score symmetric.
pub fn match_templates(a: &Template, b: &Template, params: &MatchParams) -> MatchResult {
    let (n1, n2) = (a.len(), b.len());
    let forward = best_alignment(&a.minutiae, &b.minutiae, params);
    let backward = best_alignment(&b.minutiae, &a.minutiae, params);
    let (matched_pairs, transform) = match (forward, backward) {
        (Some(f), Some(r)) if r.0 > f.0 => (r.0, r.1.inverse()),
        (Some(f), _) => f,
        (None, Some(r)) => (r.0, r.1.inverse()),
        (None, None) => (0, RigidTransform::IDENTITY),
    };
    let score = if n1 + n2 == 0 { 0.0 } else { 2.0 * matched_pairs as f64 / (n1 + n2) as f64 };
    MatchResult { score, matched_pairs, n1, n2, transform }
}

/// Largest pair count over all hypotheses moving `moving` onto `fixed`, with
/// the first hypothesis reaching it.
fn best_alignment(
    fixed: &[Minutia],
    moving: &[Minutia],
    params: &MatchParams,
) -> Option<(usize, RigidTransform)> {
    let mut best: Option<(usize, RigidTransform)> = None;
    let mut moved = Vec::with_capacity(moving.len());
    let mut candidates = Vec::new();
    let ceiling = fixed.len().min(moving.len());
    for reference in fixed {
        for anchor in moving {
            if params.kind_strict && reference.kind != anchor.kind {
                continue;
            }
            let t = RigidTransform::aligning(anchor, reference);
            moved.clear();
            moved.extend(moving.iter().map(|m| t.apply(m)));
            let m = greedy_pairs(fixed, &moved, params, &mut candidates);
            if best.map_or(true, |(bm, _)| m > bm) {
                best = Some((m, t));
                if m == ceiling {
                    return best;
                }
            }
        }
    }
    best
}

/// Pairs nearest-first; equal distances go to the lower fixed index, then the
/// lower moving index.
fn greedy_pairs(
    fixed: &[Minutia],
    moved: &[Minutia],
    params: &MatchParams,
    candidates: &mut Vec<(f64, usize, usize)>,
) -> usize {
    candidates.clear();
    let r2 = params.r0 * params.r0;
    for (i, f) in fixed.iter().enumerate() {
        for (j, m) in moved.iter().enumerate() {
            if params.kind_strict && f.kind != m.kind {
                continue;
            }
            let (dx, dy) = (f.x - m.x, f.y - m.y);
            let d2 = dx * dx + dy * dy;
            if d2 <= r2 && angle_difference(f.theta, m.theta) <= params.a0 {
                candidates.push((d2, i, j));
            }
        }
    }
    candidates.sort_unstable_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut fixed_used = vec![false; fixed.len()];
    let mut moved_used = vec![false; moved.len()];
    let mut pairs = 0;
    for &(_, i, j) in candidates.iter() {
        if !fixed_used[i] && !moved_used[j] {
            fixed_used[i] = true;
            moved_used[j] = true;
            pairs += 1;
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::super::MinutiaKind;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_template(rng: &mut ChaCha8Rng, n: usize) -> Template {
        let minutiae = (0..n)
            .map(|_| {
                let kind = if rng.gen_bool(0.5) { MinutiaKind::Termination } else { MinutiaKind::Bifurcation };
                Minutia::new(rng.gen_range(0.0..400.0), rng.gen_range(0.0..400.0), rng.gen_range(0.0..6.28), kind)
            })
            .collect();
        Template::new("t", minutiae)
    }

    #[test]
    fn self_match_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_template(&mut rng, 20);
        let r = match_templates(&a, &a, &MatchParams::default());
        assert_eq!(r.score, 1.0);
        assert_eq!(r.matched_pairs, 20);
        assert_eq!(r.transform, RigidTransform::IDENTITY);
    }

    #[test]
    fn recovers_rotation_and_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_template(&mut rng, 20);
        let motion = RigidTransform { dx: 50.0, dy: -20.0, rotation: 30f64.to_radians() };
        let b = a.transformed(&motion);
        let r = match_templates(&a, &b, &MatchParams::default());
        assert_eq!(r.score, 1.0);
        // the reported motion takes b back onto a
        let inv = motion.inverse();
        assert!((r.transform.dx - inv.dx).abs() < 1e-6);
        assert!((r.transform.dy - inv.dy).abs() < 1e-6);
        assert!(angle_difference(r.transform.rotation, inv.rotation) < 1e-9);
    }

    #[test]
    fn empty_templates_score_zero() {
        let empty = Template::default();
        let r = match_templates(&empty, &empty, &MatchParams::default());
        assert_eq!((r.score, r.matched_pairs), (0.0, 0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_template(&mut rng, 5);
        assert_eq!(match_templates(&a, &empty, &MatchParams::default()).score, 0.0);
    }

    #[test]
    fn incompatible_constellations_score_at_most_reference_pair() {
        // Ten minutiae spaced 1000 px apart on a line vs. ten on a far-away
        // column with other spacing: any hypothesis pairs only its reference.
        let a = Template::new(
            "a",
            (0..10).map(|i| Minutia::new(i as f64 * 1000.0, 0.0, 0.0, MinutiaKind::Termination)).collect(),
        );
        let b = Template::new(
            "b",
            (0..10)
                .map(|i| Minutia::new(50_000.0, 50_000.0 + i as f64 * 1733.0, 1.0, MinutiaKind::Termination))
                .collect(),
        );
        let r = match_templates(&a, &b, &MatchParams::default());
        assert!(r.score <= 0.1, "score {}", r.score);
        assert_eq!(r.matched_pairs, 1);
    }

    #[test]
    fn kind_strict_blocks_cross_kind_pairs() {
        let a = Template::new("a", vec![Minutia::new(0.0, 0.0, 0.0, MinutiaKind::Termination)]);
        let b = Template::new("b", vec![Minutia::new(0.0, 0.0, 0.0, MinutiaKind::Bifurcation)]);
        assert_eq!(match_templates(&a, &b, &MatchParams::default()).score, 0.0);
        let loose = MatchParams { kind_strict: false, ..MatchParams::default() };
        assert_eq!(match_templates(&a, &b, &loose).score, 1.0);
    }

    #[test]
    fn greedy_prefers_nearest_then_lower_index() {
        let p = MatchParams::default();
        let fixed = [
            Minutia::new(0.0, 0.0, 0.0, MinutiaKind::Termination),
            Minutia::new(6.0, 0.0, 0.0, MinutiaKind::Termination),
        ];
        // one moving minutia equidistant from both fixed ones
        let moved = [Minutia::new(3.0, 0.0, 0.0, MinutiaKind::Termination)];
        let mut buf = Vec::new();
        assert_eq!(greedy_pairs(&fixed, &moved, &p, &mut buf), 1);
        buf.sort_unstable_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        assert_eq!(buf[0].1, 0);
    }

    #[test]
    fn decide_boundary_is_inclusive() {
        let mut r = match_templates(&Template::default(), &Template::default(), &MatchParams::default());
        r.score = 0.4;
        assert_eq!(decide(&r, 0.4), Ok(Decision::Accept));
        r.score = 0.0;
        assert_eq!(decide(&r, 0.4), Ok(Decision::Reject));
        r.score = 1.0;
        assert_eq!(decide(&r, 0.4), Ok(Decision::Accept));
        assert_eq!(decide(&r, 1.0), Err(MinutiaeError::BadThreshold(1.0)));
        assert_eq!(decide(&r, 0.0), Err(MinutiaeError::BadThreshold(0.0)));
    }

    #[test]
    fn params_are_validated() {
        assert!(MatchParams::new(0.0, 0.5, true).is_err());
        assert!(MatchParams::new(10.0, 0.0, true).is_err());
        assert!(MatchParams::new(10.0, PI + 0.1, true).is_err());
        assert!(MatchParams::new(10.0, PI, false).is_ok());
    }
}
