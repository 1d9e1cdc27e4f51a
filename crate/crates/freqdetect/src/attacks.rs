//! L∞ attacks against the small net: FGSM, PGD with cross-entropy loss, a
//! simplified square-patch black-box random search, and the sequential
//! cascade that hands failed samples to the next attack.
//!
//! Every outcome satisfies ‖adv − orig‖_∞ ≤ ε and adv ∈ [0,1]; randomness is
//! per-sample, derived from (budget seed, sample id), so runs are
//! reproducible and order-independent.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Image;
use crate::error::{Error, Result};
use crate::smallnet::Network;

/// L∞ attack budget.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackBudget {
    /// Perturbation radius in normalized pixel units, in (0,1].
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
    /// Uniform random start inside the ε-ball (PGD only).
    pub random_start: bool,
}

impl AttackBudget {
    /// PGD-style defaults for one ε: 40 steps of ε/4 with random start.
    pub fn for_epsilon(epsilon: f64, seed: u64) -> Self {
        AttackBudget { epsilon, steps: 40, step_size: epsilon / 4.0, seed, random_start: true }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config(format!("epsilon {} not in (0,1]", self.epsilon)));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.step_size <= 0.0 {
            return Err(Error::Config("step_size must be positive".into()));
        }
        Ok(())
    }
}

/// Per-sample attack result.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub original: Image,
    pub adversarial: Image,
    /// Prediction changed away from the true label.
    pub success: bool,
    pub attack_name: String,
    pub queries_or_steps: usize,
    pub sample_id: usize,
    pub true_label: usize,
    pub epsilon: f64,
}

/// The implemented attack methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Fgsm,
    Pgd,
    Square,
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
            AttackKind::Square => "square",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fgsm" => Ok(AttackKind::Fgsm),
            "pgd" => Ok(AttackKind::Pgd),
            "square" => Ok(AttackKind::Square),
            other => Err(Error::Config(format!("unknown attack '{other}' (fgsm, pgd, square)"))),
        }
    }

    pub fn run(
        &self,
        net: &Network,
        image: &Image,
        label: usize,
        budget: &AttackBudget,
        sample_id: usize,
    ) -> Result<AttackOutcome> {
        match self {
            AttackKind::Fgsm => fgsm(net, image, label, budget, sample_id),
            AttackKind::Pgd => pgd(net, image, label, budget, sample_id),
            AttackKind::Square => square_attack(net, image, label, budget, sample_id),
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Per-sample rng stream, independent of evaluation order.
fn sample_rng(budget: &AttackBudget, sample_id: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(budget.seed).wrapping_add(splitmix64(sample_id as u64)))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn finalize(
    net: &Network,
    original: &Image,
    adversarial: Image,
    label: usize,
    name: &str,
    queries: usize,
    sample_id: usize,
    epsilon: f64,
) -> Result<AttackOutcome> {
    debug_assert!(original.linf_distance(&adversarial) <= epsilon + 1e-9);
    debug_assert!(adversarial.pixels.iter().all(|&p| (0.0..=1.0).contains(&p)));
    let success = net.predict(&adversarial)? != label;
    Ok(AttackOutcome {
        original: original.clone(),
        adversarial,
        success,
        attack_name: name.to_string(),
        queries_or_steps: queries,
        sample_id,
        true_label: label,
        epsilon,
    })
}

/// Single-step sign-gradient attack: x' = clip(x + ε·sign(∇_x loss)).
pub fn fgsm(
    net: &Network,
    image: &Image,
    label: usize,
    budget: &AttackBudget,
    sample_id: usize,
) -> Result<AttackOutcome> {
    budget.validate()?;
    let grad = net.input_gradient(image, label)?;
    let pixels = image
        .pixels
        .iter()
        .zip(&grad.data)
        .map(|(p, g)| (p + budget.epsilon * sign(*g)).clamp(0.0, 1.0))
        .collect();
    let adv = Image { channels: image.channels, height: image.height, width: image.width, pixels };
    finalize(net, image, adv, label, "fgsm", 1, sample_id, budget.epsilon)
}

/// Iterative sign-gradient ascent with per-step projection onto the ε-ball
/// and [0,1] clipping; optional uniform random start; early exit on first
/// misclassification.
pub fn pgd(
    net: &Network,
    image: &Image,
    label: usize,
    budget: &AttackBudget,
    sample_id: usize,
) -> Result<AttackOutcome> {
    budget.validate()?;
    let eps = budget.epsilon;
    let mut x = image.clone();
    if budget.random_start {
        let mut rng = sample_rng(budget, sample_id);
        for (p, orig) in x.pixels.iter_mut().zip(&image.pixels) {
            *p = (orig + rng.gen_range(-eps..=eps)).clamp(0.0, 1.0);
        }
    }
    let mut steps_used = 0;
    for _ in 0..budget.steps {
        if net.predict(&x)? != label {
            break;
        }
        let grad = net.input_gradient(&x, label)?;
        for ((p, g), orig) in x.pixels.iter_mut().zip(&grad.data).zip(&image.pixels) {
            let stepped = *p + budget.step_size * sign(*g);
            *p = stepped.clamp(orig - eps, orig + eps).clamp(0.0, 1.0);
        }
        steps_used += 1;
        debug_assert!(image.linf_distance(&x) <= eps + 1e-9);
    }
    finalize(net, image, x, label, "pgd", steps_used, sample_id, eps)
}

/// Simplified square attack: propose solid ±ε square patches (per-channel
/// sign), accept a proposal only when the cross-entropy loss increases.
/// Forward-only; the square side starts at ⌈0.3·W⌉ and halves every steps/5
/// proposals.
pub fn square_attack(
    net: &Network,
    image: &Image,
    label: usize,
    budget: &AttackBudget,
    sample_id: usize,
) -> Result<AttackOutcome> {
    budget.validate()?;
    let eps = budget.epsilon;
    let mut rng = sample_rng(budget, sample_id);
    let mut x = image.clone();
    let mut best_loss = net.loss(&x, label)?;
    let mut queries = 1;
    let shrink_every = (budget.steps / 5).max(1);
    let mut side = ((0.3 * image.width as f64).ceil() as usize).clamp(1, image.width);
    for step in 0..budget.steps {
        if net.predict(&x)? != label {
            break;
        }
        if step > 0 && step % shrink_every == 0 {
            side = (side / 2).max(1);
        }
        let y0 = rng.gen_range(0..=image.height - side.min(image.height));
        let x0 = rng.gen_range(0..=image.width - side.min(image.width));
        let signs: Vec<f64> =
            (0..image.channels).map(|_| if rng.gen_bool(0.5) { eps } else { -eps }).collect();
        let mut proposal = x.clone();
        let area = image.height * image.width;
        for c in 0..image.channels {
            for yy in y0..(y0 + side).min(image.height) {
                for xx in x0..(x0 + side).min(image.width) {
                    let idx = c * area + yy * image.width + xx;
                    proposal.pixels[idx] = (image.pixels[idx] + signs[c]).clamp(0.0, 1.0);
                }
            }
        }
        let loss = net.loss(&proposal, label)?;
        queries += 1;
        if loss > best_loss {
            best_loss = loss;
            x = proposal;
        }
    }
    finalize(net, image, x, label, "square", queries, sample_id, eps)
}

/// Sequential cascade: each sample takes the outcome of the first succeeding
/// attack, or the last attack's failed outcome. Samples the clean net already
/// misclassifies are marked success with zero perturbation and attack name
/// "clean-error".
pub fn standard_cascade(
    net: &Network,
    images: &[Image],
    labels: &[usize],
    attacks: &[AttackKind],
    budget: &AttackBudget,
) -> Result<Vec<AttackOutcome>> {
    if attacks.is_empty() {
        return Err(Error::Config("cascade needs at least one attack".into()));
    }
    if images.len() != labels.len() {
        return Err(Error::Data("images/labels length mismatch".into()));
    }
    budget.validate()?;
    let mut outcomes = Vec::with_capacity(images.len());
    for (sample_id, (image, &label)) in images.iter().zip(labels).enumerate() {
        if net.predict(image)? != label {
            outcomes.push(AttackOutcome {
                original: image.clone(),
                adversarial: image.clone(),
                success: true,
                attack_name: "clean-error".to_string(),
                queries_or_steps: 0,
                sample_id,
                true_label: label,
                epsilon: budget.epsilon,
            });
            continue;
        }
        let mut last = None;
        for kind in attacks {
            let outcome = kind.run(net, image, label, budget, sample_id)?;
            let done = outcome.success;
            last = Some(outcome);
            if done {
                break;
            }
        }
        outcomes.push(last.expect("attacks is non-empty"));
    }
    Ok(outcomes)
}

// ---- outcome dumps: binary record file plus CSV index ----

const OUTCOME_MAGIC: &[u8; 6] = b"SSATK1";

pub fn save_outcomes<W: Write>(w: &mut W, outcomes: &[AttackOutcome], budget: &AttackBudget) -> Result<()> {
    w.write_all(OUTCOME_MAGIC)?;
    w.write_all(&budget.epsilon.to_le_bytes())?;
    w.write_all(&(budget.steps as u32).to_le_bytes())?;
    w.write_all(&budget.seed.to_le_bytes())?;
    w.write_all(&(outcomes.len() as u32).to_le_bytes())?;
    for o in outcomes {
        let img = &o.original;
        w.write_all(&(o.sample_id as u32).to_le_bytes())?;
        w.write_all(&(o.true_label as u32).to_le_bytes())?;
        w.write_all(&[u8::from(o.success)])?;
        let name = o.attack_name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(o.queries_or_steps as u32).to_le_bytes())?;
        w.write_all(&o.epsilon.to_le_bytes())?;
        for dim in [img.channels, img.height, img.width] {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        for v in img.pixels.iter().chain(&o.adversarial.pixels) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_outcomes<R: Read>(r: &mut R) -> Result<(Vec<AttackOutcome>, AttackBudget)> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != OUTCOME_MAGIC {
        return Err(Error::Format("bad magic, not a SSATK1 outcome file".into()));
    }
    let mut f64buf = [0u8; 8];
    let mut u32buf = [0u8; 4];
    let mut u16buf = [0u8; 2];
    let mut u8buf = [0u8; 1];
    r.read_exact(&mut f64buf)?;
    let epsilon = f64::from_le_bytes(f64buf);
    r.read_exact(&mut u32buf)?;
    let steps = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut f64buf)?;
    let seed = u64::from_le_bytes(f64buf);
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let budget = AttackBudget { epsilon, steps, step_size: epsilon / 4.0, seed, random_start: true };
    let mut outcomes = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u32buf)?;
        let sample_id = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf)?;
        let true_label = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u8buf)?;
        let success = u8buf[0] != 0;
        r.read_exact(&mut u16buf)?;
        let mut name = vec![0u8; u16::from_le_bytes(u16buf) as usize];
        r.read_exact(&mut name)?;
        let attack_name =
            String::from_utf8(name).map_err(|_| Error::Format("attack name not UTF-8".into()))?;
        r.read_exact(&mut u32buf)?;
        let queries_or_steps = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut f64buf)?;
        let rec_eps = f64::from_le_bytes(f64buf);
        let mut dims = [0usize; 3];
        for d in &mut dims {
            r.read_exact(&mut u32buf)?;
            *d = u32::from_le_bytes(u32buf) as usize;
        }
        let n = dims[0] * dims[1] * dims[2];
        let mut read_image = |r: &mut R| -> Result<Image> {
            let mut pixels = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut f64buf)?;
                pixels.push(f64::from_le_bytes(f64buf));
            }
            Ok(Image { channels: dims[0], height: dims[1], width: dims[2], pixels })
        };
        let original = read_image(r)?;
        let adversarial = read_image(r)?;
        outcomes.push(AttackOutcome {
            original,
            adversarial,
            success,
            attack_name,
            queries_or_steps,
            sample_id,
            true_label,
            epsilon: rec_eps,
        });
    }
    Ok((outcomes, budget))
}

/// CSV index: sample id, attack name, success, achieved L∞ distance.
pub fn outcomes_csv(outcomes: &[AttackOutcome]) -> String {
    let mut out = String::from("sample_id,attack,success,linf\n");
    for o in outcomes {
        out.push_str(&format!(
            "{},{},{},{:.9}\n",
            o.sample_id,
            o.attack_name,
            o.success,
            o.original.linf_distance(&o.adversarial)
        ));
    }
    out
}

pub fn save_outcomes_file(
    path: &Path,
    outcomes: &[AttackOutcome],
    budget: &AttackBudget,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    save_outcomes(&mut f, outcomes, budget)?;
    f.flush()?;
    std::fs::write(path.with_extension("csv"), outcomes_csv(outcomes))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smallnet::{Architecture, LayerSpec};
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_arch() -> Architecture {
        Architecture {
            input: (1, 8, 8),
            layers: vec![
                LayerSpec::Conv2d { in_ch: 1, out_ch: 4, kernel: 3, stride: 1, pad: 1 },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { inputs: 4, outputs: 2 },
            ],
        }
    }

    fn tiny_net(seed: u64) -> Network {
        Network::new(tiny_arch(), seed).unwrap()
    }

    fn zero_net() -> Network {
        tiny_net(0).zeroed()
    }

    fn random_image(seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(1, 8, 8, (0..64).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    fn budget(eps: f64, steps: usize, seed: u64) -> AttackBudget {
        AttackBudget { epsilon: eps, steps, step_size: eps / 4.0, seed, random_start: true }
    }

    #[test]
    fn fgsm_on_zero_gradient_net_is_identity() {
        let net = zero_net();
        let img = random_image(1);
        let out = fgsm(&net, &img, 0, &budget(8.0 / 255.0, 1, 0), 0).unwrap();
        assert_eq!(out.adversarial.pixels, img.pixels);
    }

    #[test]
    fn outcome_invariants_hold() {
        let net = tiny_net(3);
        for seed in 0..10 {
            let img = random_image(seed);
            for kind in [AttackKind::Fgsm, AttackKind::Pgd, AttackKind::Square] {
                let out = kind.run(&net, &img, 0, &budget(0.05, 10, seed), seed as usize).unwrap();
                assert!(out.original.linf_distance(&out.adversarial) <= 0.05 + 1e-9);
                assert!(out.adversarial.pixels.iter().all(|&p| (0.0..=1.0).contains(&p)));
            }
        }
    }

    #[test]
    fn pgd_single_step_no_restart_equals_fgsm() {
        let net = tiny_net(5);
        let eps = 8.0 / 255.0;
        let b = AttackBudget { epsilon: eps, steps: 1, step_size: eps, seed: 9, random_start: false };
        for seed in 0..5 {
            let img = random_image(100 + seed);
            // pick the predicted class so pgd does not early-exit before stepping
            let label = net.predict(&img).unwrap();
            let a = fgsm(&net, &img, label, &b, 0).unwrap();
            let p = pgd(&net, &img, label, &b, 0).unwrap();
            assert_eq!(a.adversarial.pixels, p.adversarial.pixels);
        }
    }

    #[test]
    fn attacks_are_deterministic_per_seed() {
        let net = tiny_net(7);
        let img = random_image(8);
        let b = budget(0.03, 12, 42);
        for kind in [AttackKind::Pgd, AttackKind::Square] {
            let x = kind.run(&net, &img, 0, &b, 5).unwrap();
            let y = kind.run(&net, &img, 0, &b, 5).unwrap();
            assert_eq!(x.adversarial.pixels, y.adversarial.pixels);
        }
    }

    #[test]
    fn square_rejected_proposals_leave_image_unchanged() {
        // zero net: constant loss, proposals never accepted
        let net = zero_net();
        let img = random_image(9);
        let out = square_attack(&net, &img, 0, &budget(0.05, 1, 3), 0).unwrap();
        assert_eq!(out.adversarial.pixels, img.pixels);
        assert!(!out.success);
    }

    #[test]
    fn cascade_single_attack_matches_direct_run() {
        let net = tiny_net(11);
        let imgs: Vec<Image> = (0..6).map(|i| random_image(200 + i)).collect();
        let labels: Vec<usize> = imgs.iter().map(|i| net.predict(i).unwrap()).collect();
        let b = budget(0.05, 8, 3);
        let cascade = standard_cascade(&net, &imgs, &labels, &[AttackKind::Pgd], &b).unwrap();
        for (i, out) in cascade.iter().enumerate() {
            let direct = pgd(&net, &imgs[i], labels[i], &b, i).unwrap();
            assert_eq!(out.adversarial.pixels, direct.adversarial.pixels);
        }
    }

    #[test]
    fn cascade_marks_clean_errors() {
        let net = tiny_net(13);
        let img = random_image(14);
        let wrong = 1 - net.predict(&img).unwrap();
        let out =
            standard_cascade(&net, &[img], &[wrong], &[AttackKind::Fgsm], &budget(0.05, 1, 0))
                .unwrap();
        assert!(out[0].success);
        assert_eq!(out[0].attack_name, "clean-error");
        assert_eq!(out[0].original.pixels, out[0].adversarial.pixels);
    }

    #[test]
    fn cascade_success_set_dominates_individual_attacks() {
        let net = tiny_net(17);
        let imgs: Vec<Image> = (0..20).map(|i| random_image(300 + i)).collect();
        let labels: Vec<usize> = imgs.iter().map(|i| net.predict(i).unwrap()).collect();
        let b = budget(0.06, 10, 5);
        let kinds = [AttackKind::Fgsm, AttackKind::Square];
        let cascade = standard_cascade(&net, &imgs, &labels, &kinds, &b).unwrap();
        let cascade_successes = cascade.iter().filter(|o| o.success).count();
        for kind in kinds {
            let solo = standard_cascade(&net, &imgs, &labels, &[kind], &b).unwrap();
            assert!(cascade_successes >= solo.iter().filter(|o| o.success).count());
        }
    }

    #[test]
    fn outcome_dump_round_trips() {
        let net = tiny_net(19);
        let imgs: Vec<Image> = (0..3).map(|i| random_image(400 + i)).collect();
        let labels: Vec<usize> = imgs.iter().map(|i| net.predict(i).unwrap()).collect();
        let b = budget(0.04, 6, 21);
        let outcomes = standard_cascade(&net, &imgs, &labels, &[AttackKind::Pgd], &b).unwrap();
        let mut buf = Vec::new();
        save_outcomes(&mut buf, &outcomes, &b).unwrap();
        let (loaded, lb) = load_outcomes(&mut buf.as_slice()).unwrap();
        assert_eq!(loaded, outcomes);
        assert_eq!(lb.epsilon, b.epsilon);
        let mut buf2 = Vec::new();
        save_outcomes(&mut buf2, &loaded, &b).unwrap();
        assert_eq!(buf, buf2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn prop_linf_and_range_invariants(
            eps in 0.005f64..0.2,
            steps in 1usize..8,
            seed in 0u64..500,
        ) {
            let net = tiny_net(23);
            let img = random_image(seed);
            let b = AttackBudget { epsilon: eps, steps, step_size: eps / 3.0, seed, random_start: true };
            for kind in [AttackKind::Fgsm, AttackKind::Pgd, AttackKind::Square] {
                let out = kind.run(&net, &img, 0, &b, seed as usize).unwrap();
                prop_assert!(out.original.linf_distance(&out.adversarial) <= eps + 1e-9);
                prop_assert!(out.adversarial.pixels.iter().all(|&p| (0.0..=1.0).contains(&p)));
            }
        }
    }
}
