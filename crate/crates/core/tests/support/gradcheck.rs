//! Finite-difference checks of every training loss. The analytic gradient
//! is computed at the precision under test; the finite-difference oracle
//! always runs at 64 bits on the same (possibly rounded) point.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use vispgan::chargrid::{char_indicator, expand_characters, Alphabet, Conditioning};
use vispgan::losses::{
    adversarial_terms, classification_loss, cycle_loss, feature_matching_loss,
    generator_adversarial_loss, generator_objective, gradient_penalty, indicator_targets,
    inspector_loss, GeneratorTerms, LossWeights, Mode,
};
use vispgan::nets::{
    Classifier, ClassifierConfig, CriticConfig, Discriminator, Generator, GeneratorConfig,
    Inspector, ParamStore, RecurrentBackend,
};
use vispgan::tensor::{self, no_grad};
use vispgan::{Float, Tensor};

pub const TOL_F32: f64 = 1e-3;
pub const TOL_F64: f64 = 1e-5;
const H: f64 = 1e-6;
const DIRECTIONS: usize = 4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(seed: u64, n: usize, std: f64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            std * z
        })
        .collect()
}

/// A scalar function of a list of flat parameter blocks.
trait Objective {
    fn theta(&self) -> Vec<(Vec<f64>, Vec<usize>)>;
    /// Loss and the leaves it was built from, in `theta` order.
    fn eval<F: Float>(&self, theta: &[Vec<F>]) -> (Tensor<F>, Vec<Tensor<F>>);
}

fn leaves<F: Float>(theta: &[Vec<F>], shapes: &[Vec<usize>]) -> Vec<Tensor<F>> {
    theta
        .iter()
        .zip(shapes)
        .map(|(d, s)| Tensor::leaf(d.clone(), s))
        .collect()
}

fn cast<F: Float>(theta: &[Vec<f64>]) -> Vec<Vec<F>> {
    theta
        .iter()
        .map(|b| b.iter().map(|&v| F::num(v)).collect())
        .collect()
}

/// Relative error `‖an − fd‖ / ‖fd‖` over several random directions.
fn directional_error<F: Float, O: Objective>(o: &O, seed: u64) -> f64 {
    let blocks = o.theta();
    let base64: Vec<Vec<f64>> = blocks.iter().map(|(d, _)| d.clone()).collect();
    let point: Vec<Vec<F>> = cast(&base64);
    let (loss, xs) = o.eval::<F>(&point);
    let refs: Vec<&Tensor<F>> = xs.iter().collect();
    let g: Vec<f64> = tensor::grad(&loss, &refs, false)
        .iter()
        .flat_map(|t| t.to_f64_vec())
        .collect();
    let at: Vec<Vec<f64>> = point
        .iter()
        .map(|b| b.iter().map(|v| v.as_f64()).collect())
        .collect();
    let total: usize = at.iter().map(Vec::len).sum();
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..DIRECTIONS {
        let mut v = randn(seed * 100 + k as u64, total, 1.0);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let shifted = |s: f64| {
            let mut i = 0;
            let moved: Vec<Vec<f64>> = at
                .iter()
                .map(|b| {
                    b.iter()
                        .map(|&x| {
                            i += 1;
                            x + s * v[i - 1]
                        })
                        .collect()
                })
                .collect();
            o.eval::<f64>(&moved).0.item()
        };
        let fd = (shifted(H) - shifted(-H)) / (2.0 * H);
        let an: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
        num += (an - fd).powi(2);
        den += fd * fd;
    }
    assert!(den > 1e-20, "degenerate gradient");
    (num / den).sqrt()
}

/// Relative errors `(32-bit, 64-bit)` of one objective.
fn errors<O: Objective>(o: &O, seed: u64) -> (f64, f64) {
    (
        directional_error::<f32, _>(o, seed),
        directional_error::<f64, _>(o, seed),
    )
}

/// Two-layer tanh critic `tanh(x W) w` on `[N, d]` inputs.
fn mlp_critic<F: Float>(
    w1: &Tensor<F>,
    w2: &Tensor<F>,
) -> impl Fn(&Tensor<F>) -> vispgan::Result<Tensor<F>> {
    let (w1, w2) = (w1.clone(), w2.clone());
    move |x: &Tensor<F>| Ok(x.matmul(&w1).tanh().matmul(&w2))
}

struct CriticLossMlp {
    real: Vec<f64>,
    fake: Vec<f64>,
    alpha: Vec<f64>,
}

impl Objective for CriticLossMlp {
    fn theta(&self) -> Vec<(Vec<f64>, Vec<usize>)> {
        vec![
            (randn(1, 15, 0.6), vec![5, 3]),
            (randn(2, 3, 0.6), vec![3, 1]),
        ]
    }
    fn eval<F: Float>(&self, theta: &[Vec<F>]) -> (Tensor<F>, Vec<Tensor<F>>) {
        let xs = leaves(theta, &[vec![5, 3], vec![3, 1]]);
        let critic = mlp_critic(&xs[0], &xs[1]);
        let real = Tensor::from_f64_slice(&self.real, &[4, 5]);
        let fake = Tensor::from_f64_slice(&self.fake, &[4, 5]);
        let t = adversarial_terms(&critic, &real, &fake, &self.alpha, 10.0).unwrap();
        (t.critic_loss, xs)
    }
}

struct GeneratorAdversarial;

impl Objective for GeneratorAdversarial {
    fn theta(&self) -> Vec<(Vec<f64>, Vec<usize>)> {
        vec![(randn(5, 12, 0.5), vec![3, 4])]
    }
    fn eval<F: Float>(&self, theta: &[Vec<F>]) -> (Tensor<F>, Vec<Tensor<F>>) {
        let xs = leaves(theta, &[vec![3, 4]]);
        let w1 = Tensor::from_f64_slice(&randn(6, 8, 0.7), &[4, 2]);
        let w2 = Tensor::from_f64_slice(&randn(7, 2, 0.7), &[2, 1]);
        let scores = mlp_critic(&w1, &w2)(&xs[0]).unwrap();
        (generator_adversarial_loss(&scores).unwrap(), xs)
    }
}

struct PenaltyOnly;

impl Objective for PenaltyOnly {
    fn theta(&self) -> Vec<(Vec<f64>, Vec<usize>)> {
        vec![
            (randn(8, 12, 0.6), vec![4, 3]),
            (randn(9, 3, 0.6), vec![3, 1]),
        ]
    }
    fn eval<F: Float>(&self, theta: &[Vec<F>]) -> (Tensor<F>, Vec<Tensor<F>>) {
        let xs = leaves(theta, &[vec![4, 3], vec![3, 1]]);
        let points = Tensor::from_f64_slice(&randn(10, 8, 0.8), &[2, 4]);
        (
            gradient_penalty(&mlp_critic(&xs[0], &xs[1]), &points).unwrap(),
            xs,
        )
    }
}

/// Row softmax of `[N, L]` logits built from primitive ops.
fn softmax<F: Float>(logits: &Tensor<F>) -> Tensor<F> {
    let e = logits.exp();
    e.div(&e.sum_axes_keepdim(&[1]))
}

struct Classification;

impl Objective for Classification {
    fn theta(&self) -> Vec<(Vec<f64>, Vec<usize>)> {
        vec![(randn(13, 15, 1.0), vec![3, 5])]
    }
    fn eval<F: Float>(&self, theta: &[Vec<F>]) -> (Tensor<F>, Vec<Tensor<F>>) {
        let xs = leaves(theta, &[vec![3, 5]]);
        (
            classification_loss(&softmax(&xs[0]), &[0, 4, 2]).unwrap(),
            xs,
        )
    }
}

struct Cycle {
    original: Vec<f64>,
}

impl Objective for Cycle {
    fn theta(&self) -> Vec<(Vec<f64>, Vec<usize>)> {
        vec![(randn(14, 24, 0.5), vec![2, 3, 4])]
    }
    fn eval<F: Float>(&self, theta: &[Vec<F>]) -> (Tensor<F>, Vec<Tensor<F>>) {
        let xs = leaves(theta, &[vec![2, 3, 4]]);
        // through tanh so the abs kink is not hit by the raw leaf values
        let rec = xs[0].tanh();
        (
            cycle_loss(&rec, &Tensor::from_f64_slice(&self.original, &[2, 3, 4])).unwrap(),
            xs,
        )
    }
}

struct InspectorBce;

impl Objective for InspectorBce {
    fn theta(&self) -> Vec<(Vec<f64>, Vec<usize>)> {
        vec![(randn(16, 16, 1.5), vec![2, 8])]
    }
    fn eval<F: Float>(&self, theta: &[Vec<F>]) -> (Tensor<F>, Vec<Tensor<F>>) {
        let xs = leaves(theta, &[vec![2, 8]]);
        let a = Alphabet::new("abdeilot").unwrap();
        let z = [
            char_indicator("tide", &a).unwrap(),
            char_indicator("bolt", &a).unwrap(),
        ];
        (
            inspector_loss(&xs[0].sigmoid(), &indicator_targets(&z)).unwrap(),
            xs,
        )
    }
}

struct FeatureMatching {
    reference: Vec<f64>,
}

impl Objective for FeatureMatching {
    fn theta(&self) -> Vec<(Vec<f64>, Vec<usize>)> {
        vec![(randn(17, 12, 1.0), vec![3, 4])]
    }
    fn eval<F: Float>(&self, theta: &[Vec<F>]) -> (Tensor<F>, Vec<Tensor<F>>) {
        let xs = leaves(theta, &[vec![3, 4]]);
        let reference = Tensor::from_f64_slice(&self.reference, &[3, 4]);
        (feature_matching_loss(&xs[0], &reference).unwrap(), xs)
    }
}

struct Weighted(Mode);

impl Objective for Weighted {
    fn theta(&self) -> Vec<(Vec<f64>, Vec<usize>)> {
        (0..5).map(|i| (randn(20 + i, 1, 1.0), vec![1])).collect()
    }
    fn eval<F: Float>(&self, theta: &[Vec<F>]) -> (Tensor<F>, Vec<Tensor<F>>) {
        let xs = leaves(theta, &vec![vec![1]; 5]);
        let sq = |t: &Tensor<F>| t.square().sum_all();
        let terms = GeneratorTerms {
            adv: xs[0].sum_all(),
            cls_fake: sq(&xs[1]),
            cyc: sq(&xs[2]),
            insp_fake: Some(sq(&xs[3])),
            fm: Some(xs[4].tanh().sum_all()),
        };
        (
            generator_objective(&terms, &LossWeights::default(), self.0).unwrap(),
            xs,
        )
    }
}

fn tiny_critic_config() -> CriticConfig {
    CriticConfig {
        base_width: 2,
        max_width: 4,
        ..CriticConfig::desk(3)
    }
}

fn tiny_classifier_config(classes: usize) -> ClassifierConfig {
    ClassifierConfig {
        front_width: 2,
        stage_widths: vec![2, 4],
        stage_blocks: vec![1, 1],
        stage_strides: vec![1, 2],
        hidden: 4,
        recurrent_layers: 1,
        backend: RecurrentBackend::Lstm,
        ..ClassifierConfig::desk_word(3, classes)
    }
}

const DIMS: [usize; 5] = [2, 3, 8, 16, 16];

fn video(seed: u64) -> Vec<f64> {
    randn(seed, DIMS.iter().product(), 0.5)
        .into_iter()
        .map(|v| v.clamp(-1.0, 1.0))
        .collect()
}

fn store_theta(ps: &ParamStore<f64>) -> Vec<(Vec<f64>, Vec<usize>)> {
    ps.values()
        .iter()
        .map(|t| (t.to_vec(), t.shape().to_vec()))
        .collect()
}

fn rebuild<F: Float>(template: &ParamStore<f64>, theta: &[Vec<F>]) -> ParamStore<F> {
    let mut ps = ParamStore::new();
    for (id, d) in template.ids().zip(theta) {
        ps.add(template.name(id), d.clone(), template.get(id).shape());
    }
    ps
}

fn cast_store<F: Float>(ps: &ParamStore<f64>) -> ParamStore<F> {
    let theta: Vec<Vec<f64>> = ps.values().iter().map(|t| t.to_vec()).collect();
    rebuild(ps, &cast::<F>(&theta)).frozen()
}

/// Full critic loss, penalty included, in the parameters of a real patch
/// critic.
struct PatchCritic {
    net: Discriminator,
    params: ParamStore<f64>,
    real: Vec<f64>,
    fake: Vec<f64>,
}

impl Objective for PatchCritic {
    fn theta(&self) -> Vec<(Vec<f64>, Vec<usize>)> {
        store_theta(&self.params)
    }
    fn eval<F: Float>(&self, theta: &[Vec<F>]) -> (Tensor<F>, Vec<Tensor<F>>) {
        let ps = rebuild(&self.params, theta);
        let critic = |x: &Tensor<F>| self.net.forward(&ps, x);
        let real = Tensor::from_f64_slice(&self.real, &DIMS);
        let fake = Tensor::from_f64_slice(&self.fake, &DIMS);
        let t = adversarial_terms(&critic, &real, &fake, &[0.3, 0.8], 10.0).unwrap();
        (t.critic_loss, ps.values().to_vec())
    }
}

/// Generator objective in generator parameters, through the frozen critic,
/// word classifier and inspector.
struct FullGenerator {
    mode: Mode,
    g: Generator,
    g_params: ParamStore<f64>,
    d: Discriminator,
    d_params: ParamStore<f64>,
    cls: Classifier,
    cls_params: ParamStore<f64>,
    insp: Inspector,
    insp_params: ParamStore<f64>,
    x: Vec<f64>,
    reference: Vec<f64>,
}

const WORDS: [&str; 3] = ["tide", "bolt", "lid"];

impl FullGenerator {
    fn new(mode: Mode) -> Self {
        let a = Alphabet::new("abdeilot").unwrap();
        let labels = match mode {
            Mode::Vispgan => a.len(),
            Mode::Stargan3d => WORDS.len(),
        };
        let gcfg = GeneratorConfig {
            base_width: 2,
            max_width: 4,
            res_blocks: 1,
            ..GeneratorConfig::desk(3, labels)
        };
        let mut g_params = ParamStore::new();
        let g = Generator::new(gcfg, &mut g_params, &mut rng(40)).unwrap();
        let mut d_params = ParamStore::new();
        let d = Discriminator::new(tiny_critic_config(), &mut d_params, &mut rng(41)).unwrap();
        let mut cls_params = ParamStore::new();
        let cls = Classifier::new(
            tiny_classifier_config(WORDS.len()),
            &mut cls_params,
            &mut rng(42),
        )
        .unwrap();
        let mut insp_params = ParamStore::new();
        let insp = Inspector::new(
            tiny_critic_config(),
            a.len(),
            [8, 16, 16],
            &mut insp_params,
            &mut rng(43),
        )
        .unwrap();
        FullGenerator {
            mode,
            g,
            g_params,
            d,
            d_params,
            cls,
            cls_params,
            insp,
            insp_params,
            x: video(44),
            reference: video(45),
        }
    }

    fn conditioning(&self, words: &[usize]) -> Conditioning {
        let a = Alphabet::new("abdeilot").unwrap();
        match self.mode {
            Mode::Vispgan => Conditioning::Characters(
                words
                    .iter()
                    .map(|&w| expand_characters(WORDS[w], DIMS[2], &a).unwrap())
                    .collect(),
            ),
            Mode::Stargan3d => Conditioning::Words {
                indices: words.to_vec(),
                vocab_size: WORDS.len(),
            },
        }
    }
}

impl Objective for FullGenerator {
    fn theta(&self) -> Vec<(Vec<f64>, Vec<usize>)> {
        store_theta(&self.g_params)
    }
    fn eval<F: Float>(&self, theta: &[Vec<F>]) -> (Tensor<F>, Vec<Tensor<F>>) {
        let (sources, targets) = ([0, 1], [2, 0]);
        let gp = rebuild(&self.g_params, theta);
        let x = Tensor::from_f64_slice(&self.x, &DIMS);
        let fake = self
            .g
            .forward(&gp, &x, &self.conditioning(&targets))
            .unwrap();
        let rec = self
            .g
            .forward(&gp, &fake, &self.conditioning(&sources))
            .unwrap();
        let adv = generator_adversarial_loss(
            &self
                .d
                .forward(&cast_store::<F>(&self.d_params), &fake)
                .unwrap(),
        )
        .unwrap();
        let cls_ps = cast_store::<F>(&self.cls_params);
        let out = self.cls.forward(&cls_ps, &fake).unwrap();
        let cls_fake = classification_loss(&out.probs, &targets).unwrap();
        let cyc = cycle_loss(&rec, &x).unwrap();
        let (insp_fake, fm) = match self.mode {
            Mode::Vispgan => {
                let a = Alphabet::new("abdeilot").unwrap();
                let z: Vec<_> = targets
                    .iter()
                    .map(|&w| char_indicator(WORDS[w], &a).unwrap())
                    .collect();
                let probs = self
                    .insp
                    .forward(&cast_store::<F>(&self.insp_params), &fake)
                    .unwrap();
                let reference = Tensor::from_f64_slice(&self.reference, &DIMS);
                let ref_features = no_grad(|| self.cls.features(&cls_ps, &reference)).unwrap();
                (
                    Some(inspector_loss(&probs, &indicator_targets(&z)).unwrap()),
                    Some(feature_matching_loss(&out.features, &ref_features).unwrap()),
                )
            }
            Mode::Stargan3d => (None, None),
        };
        let terms = GeneratorTerms {
            adv,
            cls_fake,
            cyc,
            insp_fake,
            fm,
        };
        (
            generator_objective(&terms, &LossWeights::default(), self.mode).unwrap(),
            gp.values().to_vec(),
        )
    }
}

pub const CASES: [&str; 12] = [
    "critic loss",
    "generator adversarial",
    "gradient penalty",
    "classification",
    "cycle",
    "inspector",
    "feature matching",
    "objective vispgan",
    "objective stargan3d",
    "patch critic",
    "generator vispgan",
    "generator stargan3d",
];

/// Relative errors `(32-bit, 64-bit)` of the named case.
pub fn case(name: &str) -> (f64, f64) {
    match name {
        "critic loss" => errors(
            &CriticLossMlp {
                real: randn(3, 20, 0.5),
                fake: randn(4, 20, 0.5),
                alpha: vec![0.1, 0.4, 0.7, 0.95],
            },
            10,
        ),
        "generator adversarial" => errors(&GeneratorAdversarial, 11),
        "gradient penalty" => errors(&PenaltyOnly, 12),
        "classification" => errors(&Classification, 13),
        "cycle" => errors(
            &Cycle {
                original: randn(15, 24, 0.5),
            },
            14,
        ),
        "inspector" => errors(&InspectorBce, 16),
        "feature matching" => errors(
            &FeatureMatching {
                reference: randn(18, 12, 1.0),
            },
            17,
        ),
        "objective vispgan" => errors(&Weighted(Mode::Vispgan), 20),
        "objective stargan3d" => errors(&Weighted(Mode::Stargan3d), 21),
        "patch critic" => {
            let mut params = ParamStore::new();
            let net = Discriminator::new(tiny_critic_config(), &mut params, &mut rng(30)).unwrap();
            errors(
                &PatchCritic {
                    net,
                    params,
                    real: video(31),
                    fake: video(32),
                },
                30,
            )
        }
        "generator vispgan" => errors(&FullGenerator::new(Mode::Vispgan), 40),
        "generator stargan3d" => errors(&FullGenerator::new(Mode::Stargan3d), 41),
        other => panic!("unknown gradient case {other}"),
    }
}
