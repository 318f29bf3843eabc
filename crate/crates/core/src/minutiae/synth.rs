use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_4, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Minutia, MinutiaKind, MinutiaeError, RigidTransform, Template};

/// How a genuine probe deviates from its enrolled template.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenuineNoise {
    pub position_sigma: f64,
    pub angle_sigma: f64,
    /// Probability that any single minutia is missing from the probe; < 1.
    pub deletion_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    pub seed: u64,
    pub n_templates: usize,
    pub minutiae_per_template: usize,
    pub width: f64,
    pub height: f64,
    pub noise: GenuineNoise,
    pub probes_per_template: usize,
    /// Probes are rotated about the field centre by up to ± this many radians.
    pub max_rotation: f64,
    /// ...and shifted by up to ± this many pixels on each axis.
    pub max_translation: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            seed: 7,
            n_templates: 50,
            minutiae_per_template: 20,
            width: 400.0,
            height: 400.0,
            noise: GenuineNoise { position_sigma: 2.0, angle_sigma: 0.1, deletion_rate: 0.1 },
            probes_per_template: 1,
            max_rotation: FRAC_PI_4,
            max_translation: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSubject {
    pub enrolled: Template,
    pub genuine: Vec<Template>,
}

/// Subjects with enrolled templates and genuine probes. Impostor probes for a
/// subject are the enrolled templates of every other subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub subjects: Vec<SyntheticSubject>,
}

impl SyntheticDataset {
    /// Every `(enrolled, probe, is_genuine)` comparison, genuine first per subject.
    pub fn comparisons(&self) -> impl Iterator<Item = (&Template, &Template, bool)> + '_ {
        self.subjects.iter().enumerate().flat_map(move |(i, s)| {
            let genuine = s.genuine.iter().map(move |p| (&s.enrolled, p, true));
            let impostor = self
                .subjects
                .iter()
                .enumerate()
                .filter(move |(j, _)| *j != i)
                .map(move |(_, other)| (&s.enrolled, &other.enrolled, false));
            genuine.chain(impostor)
        })
    }
}

/// Deterministic for a fixed parameter set.
pub fn generate_synthetic(params: &SyntheticParams) -> Result<SyntheticDataset, MinutiaeError> {
    let noise = params.noise;
    if params.n_templates < 2 {
        return Err(MinutiaeError::BadParams("need at least two templates to form impostor pairs"));
    }
    if params.minutiae_per_template == 0 || params.probes_per_template == 0 {
        return Err(MinutiaeError::BadParams("templates and probe sets must be non-empty"));
    }
    if !(params.width > 0.0 && params.height > 0.0 && params.width.is_finite() && params.height.is_finite()) {
        return Err(MinutiaeError::BadParams("field must have positive finite size"));
    }
    if !(0.0..1.0).contains(&noise.deletion_rate) {
        return Err(MinutiaeError::BadParams("deletion rate must lie in [0, 1)"));
    }
    if !(noise.position_sigma >= 0.0 && noise.angle_sigma >= 0.0) {
        return Err(MinutiaeError::BadParams("jitter sigmas must be non-negative"));
    }
    let position = Normal::new(0.0, noise.position_sigma)
        .map_err(|_| MinutiaeError::BadParams("position jitter must be a finite non-negative sigma"))?;
    let angle = Normal::new(0.0, noise.angle_sigma)
        .map_err(|_| MinutiaeError::BadParams("angle jitter must be a finite non-negative sigma"))?;
    if !(params.max_rotation >= 0.0 && params.max_translation >= 0.0) {
        return Err(MinutiaeError::BadParams("probe motion bounds must be non-negative"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let templates: Vec<Template> = (0..params.n_templates)
        .map(|i| {
            let minutiae = (0..params.minutiae_per_template)
                .map(|_| {
                    let kind = if rng.gen_bool(0.5) { MinutiaKind::Termination } else { MinutiaKind::Bifurcation };
                    Minutia::new(
                        rng.gen::<f64>() * params.width,
                        rng.gen::<f64>() * params.height,
                        rng.gen::<f64>() * TAU,
                        kind,
                    )
                })
                .collect();
            Template::new(format!("synthetic-{i}"), minutiae)
        })
        .collect();

    let (cx, cy) = (params.width / 2.0, params.height / 2.0);
    let mut subjects = Vec::with_capacity(templates.len());
    for (i, enrolled) in templates.into_iter().enumerate() {
        let genuine = (0..params.probes_per_template)
            .map(|k| {
                let rotation = (rng.gen::<f64>() * 2.0 - 1.0) * params.max_rotation;
                let shift = (
                    (rng.gen::<f64>() * 2.0 - 1.0) * params.max_translation,
                    (rng.gen::<f64>() * 2.0 - 1.0) * params.max_translation,
                );
                let motion = about_point(rotation, cx, cy, shift);
                let mut kept: Vec<Minutia> = Vec::with_capacity(enrolled.len());
                for m in &enrolled.minutiae {
                    let deleted = rng.gen::<f64>() < noise.deletion_rate;
                    let jittered = Minutia::new(
                        m.x + position.sample(&mut rng),
                        m.y + position.sample(&mut rng),
                        m.theta + angle.sample(&mut rng),
                        m.kind,
                    );
                    if !deleted {
                        kept.push(motion.apply(&jittered));
                    }
                }
                if kept.is_empty() {
                    let pick = rng.gen_range(0..enrolled.len());
                    kept.push(motion.apply(&enrolled.minutiae[pick]));
                }
                Template::new(format!("synthetic-{i}-g{k}"), kept)
            })
            .collect();
        subjects.push(SyntheticSubject { enrolled, genuine });
    }
    Ok(SyntheticDataset { subjects })
}

fn about_point(rotation: f64, cx: f64, cy: f64, (tx, ty): (f64, f64)) -> RigidTransform {
    let (s, c) = libm::sincos(rotation);
    RigidTransform {
        dx: cx - (c * cx - s * cy) + tx,
        dy: cy - (s * cx + c * cy) + ty,
        rotation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minutiae::{match_templates, MatchParams};

    #[test]
    fn same_seed_same_dataset() {
        let p = SyntheticParams { n_templates: 5, ..SyntheticParams::default() };
        assert_eq!(generate_synthetic(&p).unwrap(), generate_synthetic(&p).unwrap());
        let other = SyntheticParams { seed: 8, ..p.clone() };
        assert_ne!(generate_synthetic(&p).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn noiseless_probes_match_perfectly() {
        let p = SyntheticParams {
            n_templates: 6,
            noise: GenuineNoise { position_sigma: 0.0, angle_sigma: 0.0, deletion_rate: 0.0 },
            ..SyntheticParams::default()
        };
        let data = generate_synthetic(&p).unwrap();
        for (enrolled, probe, genuine) in data.comparisons() {
            if genuine {
                assert_eq!(match_templates(enrolled, probe, &MatchParams::default()).score, 1.0);
            }
        }
    }

    #[test]
    fn comparison_counts() {
        let p = SyntheticParams { n_templates: 4, probes_per_template: 2, ..SyntheticParams::default() };
        let data = generate_synthetic(&p).unwrap();
        let genuine = data.comparisons().filter(|c| c.2).count();
        let impostor = data.comparisons().filter(|c| !c.2).count();
        assert_eq!((genuine, impostor), (8, 12));
    }

    #[test]
    fn bad_params_are_rejected() {
        let full_deletion = SyntheticParams {
            noise: GenuineNoise { position_sigma: 2.0, angle_sigma: 0.1, deletion_rate: 1.0 },
            ..SyntheticParams::default()
        };
        assert!(matches!(generate_synthetic(&full_deletion), Err(MinutiaeError::BadParams(_))));
        let lonely = SyntheticParams { n_templates: 1, ..SyntheticParams::default() };
        assert!(generate_synthetic(&lonely).is_err());
        let negative = SyntheticParams {
            noise: GenuineNoise { position_sigma: -1.0, angle_sigma: 0.1, deletion_rate: 0.1 },
            ..SyntheticParams::default()
        };
        assert!(generate_synthetic(&negative).is_err());
    }

    #[test]
    fn probes_are_never_empty() {
        let p = SyntheticParams {
            n_templates: 10,
            minutiae_per_template: 2,
            noise: GenuineNoise { position_sigma: 1.0, angle_sigma: 0.1, deletion_rate: 0.99 },
            ..SyntheticParams::default()
        };
        let data = generate_synthetic(&p).unwrap();
        assert!(data.subjects.iter().all(|s| s.genuine.iter().all(|g| !g.is_empty())));
    }
}
