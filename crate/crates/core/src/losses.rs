//! Adversarial, classification, cycle, inspector, and feature-matching
//! losses, and the composite objectives of both training modes.

use serde::{Deserialize, Serialize};

use crate::chargrid::CharIndicator;
use crate::error::{Error, Result};
use crate::tensor::{self, Float, Tensor};

/// Floor applied to probabilities inside every logarithm.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Character-conditioned generator with inspector and feature matching.
    Vispgan,
    /// Word-conditioned baseline: adversarial, classification, and cycle
    /// terms only.
    Stargan3d,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Vispgan => "vispgan",
            Mode::Stargan3d => "stargan3d",
        }
    }

    pub fn uses_inspector(self) -> bool {
        self == Mode::Vispgan
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vispgan" => Ok(Mode::Vispgan),
            "stargan3d" => Ok(Mode::Stargan3d),
            _ => Err(Error::invalid(format!(
                "unknown mode {s:?} (expected vispgan or stargan3d)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub cls: f64,
    pub cyc: f64,
    pub insp: f64,
    pub fm: f64,
    pub gp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cls: 1.0,
            cyc: 50.0,
            insp: 1.0,
            fm: 50.0,
            gp: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("cls", self.cls),
            ("cyc", self.cyc),
            ("insp", self.insp),
            ("fm", self.fm),
            ("gp", self.gp),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "loss weight {name} must be a nonnegative number, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        LossWeights {
            cls: self.cls * c,
            cyc: self.cyc * c,
            insp: self.insp * c,
            fm: self.fm * c,
            gp: self.gp * c,
        }
    }
}

fn nonempty<F: Float>(x: &Tensor<F>, what: &str) -> Result<usize> {
    if x.rank() == 0 || x.dim(0) == 0 {
        return Err(Error::invalid(format!("{what}: empty batch")));
    }
    Ok(x.dim(0))
}

/// Mean over every non-batch axis, giving one score per sample `[N, 1]`.
pub fn per_sample_mean<F: Float>(scores: &Tensor<F>) -> Tensor<F> {
    let n = scores.dim(0);
    let per = scores.numel() / n.max(1);
    scores.reshape(&[n, per]).mean_axes_keepdim(&[1])
}

/// Points on the segments between real and fake samples:
/// `alpha[n] * real[n] + (1 - alpha[n]) * fake[n]`, detached from both and
/// tracking its own gradient.
pub fn interpolate<F: Float>(
    real: &Tensor<F>,
    fake: &Tensor<F>,
    alpha: &[f64],
) -> Result<Tensor<F>> {
    if real.shape() != fake.shape() {
        return Err(Error::shape(format!(
            "real {:?} vs fake {:?}",
            real.shape(),
            fake.shape()
        )));
    }
    let n = nonempty(real, "interpolate")?;
    if alpha.len() != n {
        return Err(Error::shape(format!(
            "{} mixing weights for {n} samples",
            alpha.len()
        )));
    }
    let per = real.numel() / n;
    let (r, f) = (real.data(), fake.data());
    let data = (0..real.numel())
        .map(|i| {
            let a = F::num(alpha[i / per]);
            a * r[i] + (F::one() - a) * f[i]
        })
        .collect();
    Ok(Tensor::leaf(data, real.shape()))
}

/// Batch mean of `(‖∇ critic(x)‖₂ − 1)²` at the given points, one gradient
/// norm per sample over the whole input. Differentiable in the critic's
/// parameters.
pub fn gradient_penalty<F: Float>(
    critic: &dyn Fn(&Tensor<F>) -> Result<Tensor<F>>,
    points: &Tensor<F>,
) -> Result<Tensor<F>> {
    let n = nonempty(points, "gradient penalty")?;
    let x = if points.is_leaf() && points.requires_grad() {
        points.clone()
    } else {
        points.detach_leaf()
    };
    let scores = per_sample_mean(&critic(&x)?).sum_all();
    let g = tensor::grad(&scores, &[&x], true).remove(0);
    let norms = g
        .square()
        .reshape(&[n, x.numel() / n])
        .sum_axes_keepdim(&[1])
        .sqrt();
    Ok(norms.add_scalar(-1.0).square().mean_all())
}

/// Critic-side Wasserstein estimate `E[D(real)] − E[D(fake)]` from score
/// volumes.
pub fn wasserstein_gap<F: Float>(
    real_scores: &Tensor<F>,
    fake_scores: &Tensor<F>,
) -> Result<Tensor<F>> {
    nonempty(real_scores, "wasserstein gap")?;
    nonempty(fake_scores, "wasserstein gap")?;
    Ok(real_scores.mean_all().sub(&fake_scores.mean_all()))
}

/// Generator adversarial term `−E[D(fake)]`.
pub fn generator_adversarial_loss<F: Float>(fake_scores: &Tensor<F>) -> Result<Tensor<F>> {
    nonempty(fake_scores, "generator adversarial loss")?;
    Ok(fake_scores.mean_all().neg())
}

#[derive(Clone, Debug)]
pub struct AdversarialTerms<F: Float> {
    /// `−E[D(real)] + E[D(fake)] + λ_GP · GP`.
    pub critic_loss: Tensor<F>,
    /// `−E[D(fake)]`.
    pub generator_loss: Tensor<F>,
    pub gap: Tensor<F>,
    pub penalty: Tensor<F>,
}

pub fn adversarial_terms<F: Float>(
    critic: &dyn Fn(&Tensor<F>) -> Result<Tensor<F>>,
    real: &Tensor<F>,
    fake: &Tensor<F>,
    alpha: &[f64],
    lambda_gp: f64,
) -> Result<AdversarialTerms<F>> {
    let real_scores = critic(real)?;
    let fake_scores = critic(fake)?;
    let gap = wasserstein_gap(&real_scores, &fake_scores)?;
    let penalty = gradient_penalty(critic, &interpolate(&real.detach(), &fake.detach(), alpha)?)?;
    Ok(AdversarialTerms {
        critic_loss: gap.neg().add(&penalty.mul_scalar(lambda_gp)),
        generator_loss: generator_adversarial_loss(&fake_scores)?,
        gap,
        penalty,
    })
}

fn one_hot<F: Float>(targets: &[usize], classes: usize) -> Result<Tensor<F>> {
    let mut data = vec![F::zero(); targets.len() * classes];
    for (i, &t) in targets.iter().enumerate() {
        if t >= classes {
            return Err(Error::IndexOutOfRange {
                index: t,
                size: classes,
            });
        }
        data[i * classes + t] = F::one();
    }
    Ok(Tensor::from_vec(data, &[targets.len(), classes]))
}

/// Batch mean of `−ln p[n, target[n]]` for `[N, L]` probabilities. Used for
/// both real clips with their true word and fakes with the target word.
pub fn classification_loss<F: Float>(probs: &Tensor<F>, targets: &[usize]) -> Result<Tensor<F>> {
    let n = nonempty(probs, "classification loss")?;
    if probs.rank() != 2 || targets.len() != n {
        return Err(Error::shape(format!(
            "{} targets for probabilities {:?}",
            targets.len(),
            probs.shape()
        )));
    }
    let picked = probs
        .mul(&one_hot(targets, probs.dim(1))?)
        .sum_axes_keepdim(&[1]);
    Ok(picked.clamp(PROB_EPS, 1.0).ln().neg().mean_all())
}

/// Mean absolute difference over all elements.
pub fn cycle_loss<F: Float>(reconstructed: &Tensor<F>, original: &Tensor<F>) -> Result<Tensor<F>> {
    if reconstructed.shape() != original.shape() {
        return Err(Error::shape(format!(
            "reconstruction {:?} vs original {:?}",
            reconstructed.shape(),
            original.shape()
        )));
    }
    nonempty(original, "cycle loss")?;
    Ok(reconstructed.sub(original).abs().mean_all())
}

pub fn indicator_targets<F: Float>(indicators: &[CharIndicator]) -> Tensor<F> {
    let a = indicators.first().map_or(0, |z| z.bits.len());
    let data = indicators
        .iter()
        .flat_map(|z| z.bits.iter().map(|&b| F::num(b as f64)))
        .collect();
    Tensor::from_vec(data, &[indicators.len(), a])
}

/// Sum over symbols of the binary cross-entropy between `[N, A]` presence
/// probabilities and 0/1 targets, averaged over the batch.
pub fn inspector_loss<F: Float>(probs: &Tensor<F>, targets: &Tensor<F>) -> Result<Tensor<F>> {
    let n = nonempty(probs, "inspector loss")?;
    if probs.shape() != targets.shape() || probs.rank() != 2 {
        return Err(Error::shape(format!(
            "predictions {:?} vs targets {:?}",
            probs.shape(),
            targets.shape()
        )));
    }
    if let Some(p) = probs
        .data()
        .iter()
        .find(|p| !(p.as_f64() >= 0.0 && p.as_f64() <= 1.0))
    {
        return Err(Error::invalid(format!(
            "inspector prediction {p} outside [0, 1]"
        )));
    }
    let pos = probs.clamp(PROB_EPS, 1.0).ln();
    let neg = probs.neg().add_scalar(1.0).clamp(PROB_EPS, 1.0).ln();
    let not_t = targets.neg().add_scalar(1.0);
    let ll = targets.mul(&pos).add(&not_t.mul(&neg));
    Ok(ll.sum_all().neg().mul_scalar(1.0 / n as f64))
}

/// Mean absolute difference between paired feature rows. Pairing is per
/// sample: row n of `fake` is compared with row n of `reference`.
pub fn feature_matching_loss<F: Float>(
    fake: &Tensor<F>,
    reference: &Tensor<F>,
) -> Result<Tensor<F>> {
    if fake.shape() != reference.shape() {
        return Err(Error::shape(format!(
            "features {:?} vs {:?}",
            fake.shape(),
            reference.shape()
        )));
    }
    nonempty(fake, "feature matching")?;
    Ok(fake.sub(&reference.detach()).abs().mean_all())
}

/// Terms of the generator objective. `insp_fake` and `fm` are required in
/// character mode and ignored in word mode.
#[derive(Clone, Debug)]
pub struct GeneratorTerms<F: Float> {
    pub adv: Tensor<F>,
    pub cls_fake: Tensor<F>,
    pub cyc: Tensor<F>,
    pub insp_fake: Option<Tensor<F>>,
    pub fm: Option<Tensor<F>>,
}

pub fn generator_objective<F: Float>(
    terms: &GeneratorTerms<F>,
    w: &LossWeights,
    mode: Mode,
) -> Result<Tensor<F>> {
    let base = terms
        .adv
        .add(&terms.cls_fake.mul_scalar(w.cls))
        .add(&terms.cyc.mul_scalar(w.cyc));
    match mode {
        Mode::Stargan3d => Ok(base),
        Mode::Vispgan => {
            let insp = terms
                .insp_fake
                .as_ref()
                .ok_or_else(|| Error::invalid("missing inspector term"))?;
            let fm = terms
                .fm
                .as_ref()
                .ok_or_else(|| Error::invalid("missing feature-matching term"))?;
            Ok(base.add(&insp.mul_scalar(w.insp)).add(&fm.mul_scalar(w.fm)))
        }
    }
}

#[derive(Clone, Debug)]
pub struct CriticTerms<F: Float> {
    /// `E[D(real)] − E[D(fake)] − λ_GP · GP`.
    pub adv: Tensor<F>,
    pub cls_real: Option<Tensor<F>>,
    pub insp_real: Option<Tensor<F>>,
}

#[derive(Clone, Debug)]
pub struct CriticObjectives<F: Float> {
    pub critic: Tensor<F>,
    pub classifier: Option<Tensor<F>>,
    pub inspector: Option<Tensor<F>>,
}

/// Critic minimizes `−L_adv`; the classifier and inspector minimize their
/// real-clip losses unchanged.
pub fn critic_objectives<F: Float>(
    terms: &CriticTerms<F>,
    mode: Mode,
) -> Result<CriticObjectives<F>> {
    if mode.uses_inspector() && terms.insp_real.is_none() {
        return Err(Error::invalid("missing inspector term"));
    }
    Ok(CriticObjectives {
        critic: terms.adv.neg(),
        classifier: terms.cls_real.clone(),
        inspector: if mode.uses_inspector() {
            terms.insp_real.clone()
        } else {
            None
        },
    })
}
