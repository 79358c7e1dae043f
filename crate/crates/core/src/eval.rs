//! Evaluation with an independently trained auxiliary word classifier:
//! accuracy on translated clips and Fréchet distance between the
//! classifier's recurrent features of real and generated clips.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::clip::VideoClip;
use crate::error::{Error, Result};
use crate::losses::Mode;
use crate::rng;
use crate::synthcorpus::{Corpus, LabeledClip, Split};
use crate::trainer::{
    train_classifier, ClassifierTrainConfig, MetricsSink, TrainedClassifier, TrainedGenerator,
};

/// Trains the evaluation classifier on `aux-train`, which must share no clip
/// with `gan-train`, `val`, or `test`.
pub fn train_auxiliary_classifier(
    corpus: &Corpus,
    config: &ClassifierTrainConfig,
    diagnostic_dir: Option<&Path>,
    sink: &mut dyn MetricsSink,
) -> Result<TrainedClassifier> {
    for other in [Split::GanTrain, Split::Val, Split::Test] {
        corpus.check_disjoint(Split::AuxTrain, other)?;
    }
    let train = corpus.load_split(Split::AuxTrain)?;
    let val = corpus.load_split(Split::Val)?;
    train_classifier(
        &train,
        Some(&val),
        corpus.vocabulary(),
        config,
        diagnostic_dir,
        sink,
    )
}

/// Mean and unbiased covariance of feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub count: usize,
}

impl FeatureStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn compute_feature_stats(features: &[Vec<f64>]) -> Result<FeatureStats> {
    let n = features.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "feature statistics need at least 2 samples, got {n}"
        )));
    }
    let d = features[0].len();
    if let Some(f) = features.iter().find(|f| f.len() != d) {
        return Err(Error::shape(format!(
            "feature dims {d} and {} mixed",
            f.len()
        )));
    }
    let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let mean = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
    let mut centered = x;
    for j in 0..d {
        centered.column_mut(j).add_scalar_mut(-mean[j]);
    }
    let mut covariance = centered.transpose() * &centered / (n - 1) as f64;
    covariance = (&covariance + covariance.transpose()) * 0.5;
    Ok(FeatureStats {
        mean,
        covariance,
        count: n,
    })
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `‖μr − μf‖² + Tr(Σr + Σf − 2 (Σr Σf)^½)`. The trace of the square root
/// is computed from the eigenvalues of the symmetric `Σr^½ Σf Σr^½`, which
/// is similar to `Σr Σf`; small negative eigenvalues are clamped to zero.
pub fn fid_score(real: &FeatureStats, fake: &FeatureStats) -> Result<f64> {
    if real.dim() != fake.dim() {
        return Err(Error::shape(format!(
            "feature dims {} vs {}",
            real.dim(),
            fake.dim()
        )));
    }
    let diff = &real.mean - &fake.mean;
    let root = psd_sqrt(&real.covariance);
    let inner = &root * &fake.covariance * &root;
    let eig = SymmetricEigen::new((&inner + inner.transpose()) * 0.5);
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let fid =
        diff.norm_squared() + real.covariance.trace() + fake.covariance.trace() - 2.0 * tr_sqrt;
    if !fid.is_finite() {
        return Err(Error::NonFinite {
            what: "FID".into(),
            step: 0,
        });
    }
    Ok(fid.max(0.0))
}

/// Mean and sample standard deviation of the FID over `resamples`
/// bootstrap draws (with replacement) of the fake features.
pub fn fid_bootstrap(
    real: &FeatureStats,
    fake: &[Vec<f64>],
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if resamples == 0 {
        return Err(Error::invalid("bootstrap needs at least one resample"));
    }
    let mut r = rng::stream(seed, &[0xb007]);
    let mut scores = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let draw: Vec<Vec<f64>> = (0..fake.len())
            .map(|_| fake[r.random_range(0..fake.len())].clone())
            .collect();
        scores.push(fid_score(real, &compute_feature_stats(&draw)?)?);
    }
    let mean = scores.iter().sum::<f64>() / resamples as f64;
    let var = if resamples > 1 {
        scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (resamples - 1) as f64
    } else {
        0.0
    };
    Ok((mean, var.sqrt()))
}

/// Anything that maps clips to target words.
pub trait Translator {
    fn translate_batch(&self, clips: &[&VideoClip], targets: &[usize]) -> Result<Vec<VideoClip>>;
}

impl Translator for TrainedGenerator {
    fn translate_batch(&self, clips: &[&VideoClip], targets: &[usize]) -> Result<Vec<VideoClip>> {
        TrainedGenerator::translate_batch(self, clips, targets)
    }
}

/// Returns its input unchanged; the chance-level reference.
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate_batch(&self, clips: &[&VideoClip], _targets: &[usize]) -> Result<Vec<VideoClip>> {
        Ok(clips.iter().map(|&c| c.clone()).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FakeProtocol {
    /// Fakes generated per target word.
    pub per_target: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Draw sources only from clips whose word differs from the target.
    #[serde(default = "default_true")]
    pub exclude_source_word: bool,
}

fn default_true() -> bool {
    true
}

impl FakeProtocol {
    /// 50 fakes per word for a ten-word vocabulary gives 500.
    pub fn desk() -> Self {
        FakeProtocol {
            per_target: 50,
            batch_size: 25,
            seed: 0,
            exclude_source_word: true,
        }
    }
}

/// Source clip and target word of every fake, in generation order.
pub fn plan_fakes(
    test: &[LabeledClip],
    vocab_size: usize,
    protocol: &FakeProtocol,
) -> Result<Vec<(usize, usize)>> {
    if test.is_empty() {
        return Err(Error::invalid("test split is empty"));
    }
    let mut plan = Vec::with_capacity(vocab_size * protocol.per_target);
    for target in 0..vocab_size {
        let mut pool: Vec<usize> = (0..test.len())
            .filter(|&i| !protocol.exclude_source_word || test[i].word_index != target)
            .collect();
        if pool.is_empty() {
            // one-word vocabulary: every clip already utters the target
            pool = (0..test.len()).collect();
        }
        if pool.len() < protocol.per_target {
            return Err(Error::invalid(format!(
                "{} fakes per target need as many test clips of other words, only {} available",
                protocol.per_target,
                pool.len()
            )));
        }
        let mut r = rng::stream(protocol.seed, &[0xfa6e, target as u64]);
        let mut picked: Vec<usize> = sample(&mut r, pool.len(), protocol.per_target)
            .into_iter()
            .map(|k| pool[k])
            .collect();
        picked.sort_unstable();
        plan.extend(picked.into_iter().map(|i| (i, target)));
    }
    Ok(plan)
}

#[derive(Clone, Debug)]
pub struct FakeEvaluation {
    pub plan: Vec<(usize, usize)>,
    pub fakes: Vec<VideoClip>,
    pub predictions: Vec<usize>,
    pub accuracy: f64,
    /// One-sided binomial tail `P(X >= hits)` under chance `1 / N_l`.
    pub p_value: f64,
}

/// Translates planned test clips and scores how often the auxiliary
/// classifier recognizes the target word.
pub fn accuracy_on_fakes(
    translator: &dyn Translator,
    aux: &TrainedClassifier,
    test: &[LabeledClip],
    protocol: &FakeProtocol,
) -> Result<FakeEvaluation> {
    if protocol.batch_size == 0 || protocol.per_target == 0 {
        return Err(Error::invalid(
            "fake protocol needs positive batch size and count",
        ));
    }
    let vocab_size = aux.vocabulary.len();
    let plan = plan_fakes(test, vocab_size, protocol)?;
    let mut fakes = Vec::with_capacity(plan.len());
    for chunk in plan.chunks(protocol.batch_size) {
        let clips: Vec<&VideoClip> = chunk.iter().map(|&(i, _)| &test[i].clip).collect();
        let targets: Vec<usize> = chunk.iter().map(|&(_, t)| t).collect();
        fakes.extend(translator.translate_batch(&clips, &targets)?);
    }
    let refs: Vec<&VideoClip> = fakes.iter().collect();
    let predictions = aux.predict(&refs)?;
    let hits = predictions
        .iter()
        .zip(&plan)
        .filter(|(p, (_, t))| **p == *t)
        .count();
    let n = plan.len();
    Ok(FakeEvaluation {
        accuracy: hits as f64 / n as f64,
        p_value: binomial_upper_tail(hits, n, 1.0 / vocab_size as f64)?,
        plan,
        fakes,
        predictions,
    })
}

/// `P(X >= k)` for `X ~ Binomial(n, p)`.
pub fn binomial_upper_tail(k: usize, n: usize, p: f64) -> Result<f64> {
    if k == 0 {
        return Ok(1.0);
    }
    let b = Binomial::new(p, n as u64).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(b.sf(k as u64 - 1))
}

/// Clips of independent uniform noise in `[-1, 1]`, the FID reference for
/// an uninformative generator.
pub fn noise_clips(count: usize, dims: [usize; 4], seed: u64) -> Vec<VideoClip> {
    let mut r = rng::stream(seed, &[0x0015e]);
    let [t, h, w, c] = dims;
    (0..count)
        .map(|_| {
            let data = (0..t * h * w * c)
                .map(|_| r.random_range(-1.0f32..=1.0))
                .collect();
            VideoClip::new(t, h, w, c, data).expect("noise stays in range")
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub mode: Mode,
    pub checkpoint: String,
    pub accuracy: f64,
    pub accuracy_p_value: f64,
    pub fid_mean: f64,
    pub fid_std: f64,
    pub fakes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub vocab_size: usize,
    pub chance: f64,
    pub aux_test_accuracy: f64,
    pub identity_accuracy: f64,
    pub fid_noise: f64,
    pub real_test_clips: usize,
    pub fid_resamples: usize,
    pub protocol: FakeProtocol,
    pub models: Vec<ModelReport>,
    /// Present when both a character-conditioned and a word-conditioned
    /// model were evaluated.
    pub ablation: Option<AblationCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCheck {
    pub vispgan_accuracy: f64,
    pub stargan3d_accuracy: f64,
    /// Character conditioning matches or beats word conditioning.
    pub vispgan_at_least_stargan3d: bool,
}

impl AblationCheck {
    /// Compares the best model of each mode.
    pub fn from_models(models: &[ModelReport]) -> Option<Self> {
        let best = |mode: Mode| {
            models
                .iter()
                .filter(|m| m.mode == mode)
                .map(|m| m.accuracy)
                .fold(None, |acc: Option<f64>, a| {
                    Some(acc.map_or(a, |b| b.max(a)))
                })
        };
        let (v, s) = (best(Mode::Vispgan)?, best(Mode::Stargan3d)?);
        Some(AblationCheck {
            vispgan_accuracy: v,
            stargan3d_accuracy: s,
            vispgan_at_least_stargan3d: v >= s,
        })
    }
}

pub const FID_RESAMPLES: usize = 10;

/// Scores each generator against the real test split, alongside the
/// identity and noise references.
pub fn evaluate_generators(
    generators: &[(&str, &TrainedGenerator)],
    aux: &TrainedClassifier,
    test: &[LabeledClip],
    protocol: &FakeProtocol,
) -> Result<EvalReport> {
    let refs: Vec<&VideoClip> = test.iter().map(|c| &c.clip).collect();
    let real = compute_feature_stats(&aux.features(&refs)?)?;
    let noise = noise_clips(test.len().max(2), aux.clip_dims, protocol.seed);
    let noise_refs: Vec<&VideoClip> = noise.iter().collect();
    let fid_noise = fid_score(&real, &compute_feature_stats(&aux.features(&noise_refs)?)?)?;
    // Excluding the source word would pin the identity map at zero; drawing
    // sources from every word measures what copying the input achieves.
    let identity_protocol = FakeProtocol {
        exclude_source_word: false,
        ..protocol.clone()
    };
    let identity = accuracy_on_fakes(&IdentityTranslator, aux, test, &identity_protocol)?;
    let mut models = Vec::with_capacity(generators.len());
    for (name, g) in generators {
        let eval = accuracy_on_fakes(*g, aux, test, protocol)?;
        let fake_refs: Vec<&VideoClip> = eval.fakes.iter().collect();
        let (fid_mean, fid_std) = fid_bootstrap(
            &real,
            &aux.features(&fake_refs)?,
            FID_RESAMPLES,
            protocol.seed,
        )?;
        log::info!(
            "{name}: accuracy {:.3} (p = {:.2e}), FID {fid_mean:.4} ± {fid_std:.4}",
            eval.accuracy,
            eval.p_value
        );
        models.push(ModelReport {
            mode: g.mode,
            checkpoint: name.to_string(),
            accuracy: eval.accuracy,
            accuracy_p_value: eval.p_value,
            fid_mean,
            fid_std,
            fakes: eval.fakes.len(),
        });
    }
    Ok(EvalReport {
        vocab_size: aux.vocabulary.len(),
        chance: 1.0 / aux.vocabulary.len() as f64,
        aux_test_accuracy: aux.accuracy(test)?,
        identity_accuracy: identity.accuracy,
        fid_noise,
        real_test_clips: test.len(),
        fid_resamples: FID_RESAMPLES,
        protocol: protocol.clone(),
        ablation: AblationCheck::from_models(&models),
        models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mean: Vec<f64>, cov: Vec<f64>) -> FeatureStats {
        let d = mean.len();
        FeatureStats {
            mean: DVector::from_vec(mean),
            covariance: DMatrix::from_row_slice(d, d, &cov),
            count: 10,
        }
    }

    #[test]
    fn one_dimensional_closed_form() {
        let a = stats(vec![0.0], vec![1.0]);
        let b = stats(vec![2.0], vec![1.0]);
        assert!((fid_score(&a, &b).unwrap() - 4.0).abs() < 1e-12);
        let c = stats(vec![0.0], vec![4.0]);
        // (σr − σf)² = (1 − 2)²
        assert!((fid_score(&a, &c).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn repeated_vectors_have_zero_covariance() {
        let s = compute_feature_stats(&vec![vec![1.0, -2.0, 3.0]; 5]).unwrap();
        assert_eq!(s.count, 5);
        assert!(s.covariance.iter().all(|&v| v == 0.0));
        assert!(compute_feature_stats(&[vec![1.0]]).is_err());
        assert!(compute_feature_stats(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let a = stats(vec![0.0], vec![1.0]);
        let b = stats(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]);
        assert!(fid_score(&a, &b).is_err());
    }

    #[test]
    fn binomial_tail_values() {
        assert_eq!(binomial_upper_tail(0, 10, 0.1).unwrap(), 1.0);
        assert!((binomial_upper_tail(10, 10, 0.5).unwrap() - 0.5f64.powi(10)).abs() < 1e-15);
        assert!((binomial_upper_tail(1, 1, 0.3).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn plan_avoids_source_word_and_is_seeded() {
        let test: Vec<LabeledClip> = (0..12)
            .map(|i| LabeledClip {
                clip_id: format!("c{i}"),
                word_index: i % 3,
                clip: VideoClip::zeros(1, 1, 1, 1),
            })
            .collect();
        let p = FakeProtocol {
            per_target: 5,
            batch_size: 2,
            seed: 4,
            exclude_source_word: true,
        };
        let plan = plan_fakes(&test, 3, &p).unwrap();
        assert_eq!(plan.len(), 15);
        assert!(plan.iter().all(|&(i, t)| test[i].word_index != t));
        for t in 0..3 {
            let mut src: Vec<usize> = plan.iter().filter(|x| x.1 == t).map(|x| x.0).collect();
            src.dedup();
            assert_eq!(src.len(), 5, "sampled without replacement");
        }
        assert_eq!(plan, plan_fakes(&test, 3, &p).unwrap());
        assert!(plan_fakes(
            &test,
            3,
            &FakeProtocol {
                per_target: 9,
                ..p.clone()
            }
        )
        .is_err());
        assert!(plan_fakes(&[], 3, &p).is_err());
        let all = FakeProtocol {
            per_target: 12,
            exclude_source_word: false,
            ..p.clone()
        };
        assert_eq!(plan_fakes(&test, 3, &all).unwrap().len(), 36);
    }
}
