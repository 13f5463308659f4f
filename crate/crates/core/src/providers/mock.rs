//! Deterministic stand-ins for the four model providers.
//!
//! A [`MockWorld`] assigns every object a hidden ground truth (category,
//! colour, material, ...). The generator writes captions from that truth with
//! seeded attribute errors; wrong attributes get low token log-probabilities.
//! Embedders map words to hash-seeded unit vectors and sum them, so texts
//! sharing words are close:
//!
//! * clustering embedder: every word weighs 1;
//! * joint image/text embedder: category words weigh [`CATEGORY_WEIGHT`],
//!   other vocabulary words 1, filler words [`FILLER_WEIGHT`]; an image embeds
//!   as the true caption of its view;
//! * cloud embedder: the joint-space vector of the object's geometric category
//!   plus a small cloud-dependent perturbation.
//!
//! An object whose `cloud_category` differs from its visual category therefore
//! gates far below any sensible threshold.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    cloud_digest, CandidateGenerator, CloudEmbedder, CloudRequest, GenerateRequest, ImageRequest,
    ImageTextEmbedder, ProviderError, Providers, RawCandidate, TextEmbedder,
};
use crate::model::{EmbeddingVector, ObjectManifest, PointCloud, Viewpoint};
use crate::seed::stable_seed;

pub const MOCK_DIM: usize = 64;
pub const CATEGORY_WEIGHT: f64 = 3.0;
pub const FILLER_WEIGHT: f64 = 0.15;

pub const CATEGORIES: &[&str] = &[
    "mug", "chair", "lamp", "car", "bottle", "teapot", "backpack", "guitar", "sofa", "clock",
    "helmet", "vase",
];
pub const COLORS: &[&str] = &[
    "red", "blue", "green", "black", "white", "yellow", "orange", "grey", "brown", "purple",
];
pub const MATERIALS: &[&str] = &[
    "ceramic", "wooden", "metal", "plastic", "leather", "glass", "fabric", "stone",
];
pub const PARTS: &[&str] = &[
    "handle", "lid", "spout", "strap", "wheel", "cushion", "knob", "leg",
];
pub const FINISHES: &[&str] = &["glossy", "matte", "textured", "smooth", "polished", "worn"];
pub const SHAPES: &[&str] = &["round", "square", "oval", "flat", "curved", "tapered"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Category,
    Color,
    Material,
    Part,
    Finish,
    Shape,
}

impl Slot {
    fn vocab(self) -> &'static [&'static str] {
        match self {
            Slot::Category => CATEGORIES,
            Slot::Color => COLORS,
            Slot::Material => MATERIALS,
            Slot::Part => PARTS,
            Slot::Finish => FINISHES,
            Slot::Shape => SHAPES,
        }
    }
}

enum Piece {
    Lit(&'static str),
    Slot(Slot),
}

fn template(view: Viewpoint) -> Vec<Piece> {
    use Piece::{Lit, Slot as S};
    use Slot::*;
    match view {
        Viewpoint::Front => vec![
            Lit("A"), S(Color), S(Material), S(Category), Lit("."),
            Lit("It has a"), S(Finish), Lit("surface."),
        ],
        Viewpoint::Back => vec![
            Lit("The back of the"), S(Category), Lit("shows a"), S(Color), S(Part), Lit("."),
        ],
        Viewpoint::Left => vec![
            Lit("From the left the"), S(Category), Lit("has a"), S(Finish), S(Material),
            Lit("body with a"), S(Part), Lit("."),
        ],
        Viewpoint::Right => vec![
            Lit("The right side shows a"), S(Shape), Lit("profile and a"), S(Color), S(Part), Lit("."),
        ],
        Viewpoint::Top => vec![
            Lit("Seen from above the"), S(Category), Lit("has a"), S(Shape), S(Material), Lit("top."),
        ],
        Viewpoint::Bottom => vec![
            Lit("The bottom is a"), S(Shape), S(Finish), Lit("base."),
        ],
    }
}

/// Hidden attributes of one synthetic object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectTruth {
    pub category: String,
    pub color: String,
    pub material: String,
    pub part: String,
    pub finish: String,
    pub shape: String,
    /// Category the point cloud's geometry encodes; equals `category` for a
    /// consistent object.
    pub cloud_category: String,
}

impl ObjectTruth {
    /// Truth derived from the object id alone.
    pub fn derive(object_id: &str) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(&["truth", object_id]));
        let mut pick = |v: &[&str]| v.choose(&mut rng).expect("non-empty vocab").to_string();
        let category = pick(CATEGORIES);
        Self {
            cloud_category: category.clone(),
            category,
            color: pick(COLORS),
            material: pick(MATERIALS),
            part: pick(PARTS),
            finish: pick(FINISHES),
            shape: pick(SHAPES),
        }
    }

    /// Truth from manifest metadata keys `category`, `color`, `material`,
    /// `part`, `finish`, `shape`, `cloud_category`, falling back to
    /// [`ObjectTruth::derive`] for absent keys.
    pub fn from_manifest(m: &ObjectManifest) -> Self {
        let mut t = Self::derive(&m.object_id);
        let get = |k: &str| m.metadata.get(k).and_then(|v| v.as_str()).map(str::to_string);
        if let Some(c) = get("category") {
            t.cloud_category = c.clone();
            t.category = c;
        }
        for (key, slot) in [
            ("color", &mut t.color),
            ("material", &mut t.material),
            ("part", &mut t.part),
            ("finish", &mut t.finish),
            ("shape", &mut t.shape),
            ("cloud_category", &mut t.cloud_category),
        ] {
            if let Some(v) = get(key) {
                *slot = v;
            }
        }
        t
    }

    fn slot(&self, s: Slot) -> &str {
        match s {
            Slot::Category => &self.category,
            Slot::Color => &self.color,
            Slot::Material => &self.material,
            Slot::Part => &self.part,
            Slot::Finish => &self.finish,
            Slot::Shape => &self.shape,
        }
    }

    /// Error-free caption for one view.
    pub fn caption(&self, view: Viewpoint) -> String {
        render(template(view).iter().map(|p| match p {
            Piece::Lit(s) => s.to_string(),
            Piece::Slot(s) => self.slot(*s).to_string(),
        }))
    }
}

fn render(words: impl Iterator<Item = String>) -> String {
    let mut out = String::new();
    for w in words {
        if !out.is_empty() && !w.starts_with('.') {
            out.push(' ');
        }
        out.push_str(&w);
    }
    out
}

/// Knobs for the synthetic caption generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MockQuality {
    /// Per-candidate error scale is drawn from `U(min_error, max_error)`,
    /// then multiplied by `temperature / 0.7`.
    pub min_error: f64,
    pub max_error: f64,
    /// Category words are corrupted at this fraction of the slot error rate.
    pub category_error_scale: f64,
    /// Probability that a candidate arrives without token log-probabilities.
    pub missing_logprob_rate: f64,
}

impl Default for MockQuality {
    fn default() -> Self {
        Self {
            min_error: 0.05,
            max_error: 0.6,
            category_error_scale: 0.3,
            missing_logprob_rate: 0.0,
        }
    }
}

/// Ground truth for a corpus plus the run seed.
#[derive(Debug, Clone)]
pub struct MockWorld {
    seed: u64,
    quality: MockQuality,
    truths: BTreeMap<String, ObjectTruth>,
    /// Objects whose provider calls fail with `ProviderUnavailable`.
    unavailable: Vec<String>,
}

impl MockWorld {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            quality: MockQuality::default(),
            truths: BTreeMap::new(),
            unavailable: Vec::new(),
        }
    }

    pub fn from_corpus(corpus: &[ObjectManifest], seed: u64) -> Self {
        let mut w = Self::new(seed);
        for m in corpus {
            w.truths.insert(m.object_id.clone(), ObjectTruth::from_manifest(m));
        }
        w
    }

    pub fn with_quality(mut self, quality: MockQuality) -> Self {
        self.quality = quality;
        self
    }

    pub fn with_truth(mut self, object_id: &str, truth: ObjectTruth) -> Self {
        self.truths.insert(object_id.to_string(), truth);
        self
    }

    pub fn with_unavailable(mut self, object_id: &str) -> Self {
        self.unavailable.push(object_id.to_string());
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn truth(&self, object_id: &str) -> ObjectTruth {
        self.truths
            .get(object_id)
            .cloned()
            .unwrap_or_else(|| ObjectTruth::derive(object_id))
    }

    fn check_available(&self, object_id: &str) -> Result<(), ProviderError> {
        if self.unavailable.iter().any(|o| o == object_id) {
            return Err(ProviderError::ProviderUnavailable(format!(
                "mock provider refuses {object_id}"
            )));
        }
        Ok(())
    }

    /// Samples `n` captions for one view.
    pub fn sample_captions(
        &self,
        object_id: &str,
        view: Viewpoint,
        n: usize,
        temperature: f64,
    ) -> Vec<RawCandidate> {
        let truth = self.truth(object_id);
        let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(&[
            "generate",
            &self.seed.to_string(),
            object_id,
            view.as_str(),
            &format!("{temperature:.6}"),
        ]));
        let q = self.quality;
        let temp_scale = (temperature / 0.7).clamp(0.0, 2.0);
        (0..n)
            .map(|_| {
                let err = (rng.random_range(q.min_error..=q.max_error) * temp_scale).clamp(0.0, 0.95);
                let mut words = Vec::new();
                let mut logprobs = Vec::new();
                for piece in template(view) {
                    match piece {
                        Piece::Lit(s) => {
                            for w in s.split_whitespace() {
                                words.push(w.to_string());
                                logprobs.push(-rng.random_range(0.0..0.15));
                            }
                        }
                        Piece::Slot(slot) => {
                            let p = if slot == Slot::Category { err * q.category_error_scale } else { err };
                            let right = truth.slot(slot);
                            if rng.random::<f64>() < p {
                                let wrong: Vec<&str> =
                                    slot.vocab().iter().copied().filter(|w| *w != right).collect();
                                words.push(wrong.choose(&mut rng).expect("vocab > 1").to_string());
                                logprobs.push(-rng.random_range(1.0..3.5));
                            } else {
                                words.push(right.to_string());
                                logprobs.push(-rng.random_range(0.02..0.4));
                            }
                        }
                    }
                }
                let missing = rng.random::<f64>() < q.missing_logprob_rate;
                RawCandidate {
                    text: render(words.into_iter()),
                    token_logprobs: (!missing).then_some(logprobs),
                }
            })
            .collect()
    }
}

fn word_vector(space: &str, word: &str) -> Vec<f64> {
    thread_local! {
        static MEMO: RefCell<HashMap<(String, String), Vec<f64>>> = RefCell::new(HashMap::new());
    }
    let key = (space.to_string(), word.to_string());
    if let Some(v) = MEMO.with(|m| m.borrow().get(&key).cloned()) {
        return v;
    }
    let v = fresh_word_vector(space, word);
    MEMO.with(|m| m.borrow_mut().insert(key, v.clone()));
    v
}

fn fresh_word_vector(space: &str, word: &str) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(&["word", space, word]));
    let v: Vec<f64> = (0..MOCK_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

fn accumulate(space: &str, weighted: impl Iterator<Item = (String, f64)>) -> Result<EmbeddingVector, ProviderError> {
    let mut acc = vec![0.0; MOCK_DIM];
    let mut any = false;
    for (w, k) in weighted {
        any = true;
        for (a, x) in acc.iter_mut().zip(word_vector(space, &w)) {
            *a += k * x;
        }
    }
    if !any {
        return Err(ProviderError::EmptyInput);
    }
    EmbeddingVector::new(acc).map_err(|e| ProviderError::MalformedProviderResponse(e.to_string()))
}

fn joint_weight(word: &str) -> f64 {
    if CATEGORIES.contains(&word) {
        CATEGORY_WEIGHT
    } else if [COLORS, MATERIALS, PARTS, FINISHES, SHAPES]
        .iter()
        .any(|v| v.contains(&word))
    {
        1.0
    } else {
        FILLER_WEIGHT
    }
}

/// Bag-of-words embedding in the joint image/text space.
pub fn joint_text_embedding(text: &str) -> Result<EmbeddingVector, ProviderError> {
    accumulate("joint", words(text).map(|w| {
        let k = joint_weight(&w);
        (w, k)
    }))
}

/// Bag-of-words embedding in the clustering space.
pub fn sentence_embedding(text: &str) -> Result<EmbeddingVector, ProviderError> {
    accumulate("sentence", words(text).map(|w| (w, 1.0)))
}

/// Two unit vectors in `dim` dimensions with cosine exactly `cos` (up to
/// rounding), seeded for reproducibility.
pub fn pair_at_cosine(dim: usize, cos: f64, seed: u64) -> (EmbeddingVector, EmbeddingVector) {
    assert!(dim >= 2 && (-1.0..=1.0).contains(&cos));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || -> Vec<f64> { (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let unit = |v: Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<_>>()
    };
    let a = unit(gauss());
    let r = gauss();
    let proj: f64 = r.iter().zip(&a).map(|(x, y)| x * y).sum();
    let b_perp = unit(r.iter().zip(&a).map(|(x, y)| x - proj * y).collect());
    let s = (1.0 - cos * cos).max(0.0).sqrt();
    let b = a.iter().zip(&b_perp).map(|(x, y)| cos * x + s * y).collect();
    (EmbeddingVector::new(a).unwrap(), EmbeddingVector::new(b).unwrap())
}

/// Shared call counter across a suite's providers.
#[derive(Debug, Default)]
pub struct CallCounter {
    generate: AtomicU64,
    text: AtomicU64,
    image: AtomicU64,
    joint_text: AtomicU64,
    cloud: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub generate: u64,
    pub embed_text: u64,
    pub embed_image: u64,
    pub embed_joint_text: u64,
    pub embed_cloud: u64,
}

impl CallCounts {
    pub fn total(&self) -> u64 {
        self.generate + self.embed_text + self.embed_image + self.embed_joint_text + self.embed_cloud
    }
}

impl CallCounter {
    pub fn snapshot(&self) -> CallCounts {
        CallCounts {
            generate: self.generate.load(Ordering::Relaxed),
            embed_text: self.text.load(Ordering::Relaxed),
            embed_image: self.image.load(Ordering::Relaxed),
            embed_joint_text: self.joint_text.load(Ordering::Relaxed),
            embed_cloud: self.cloud.load(Ordering::Relaxed),
        }
    }
}

fn bump(c: &AtomicU64) {
    c.fetch_add(1, Ordering::Relaxed);
}

pub struct MockGenerator {
    world: Arc<MockWorld>,
    calls: Arc<CallCounter>,
    model_id: String,
}

impl CandidateGenerator for MockGenerator {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn generate(&self, req: &GenerateRequest<'_>) -> Result<Vec<RawCandidate>, ProviderError> {
        bump(&self.calls.generate);
        self.world.check_available(req.object_id)?;
        Ok(self.world.sample_captions(
            req.object_id,
            req.view,
            req.cfg.num_candidates,
            req.cfg.temperature,
        ))
    }
}

pub struct MockTextEmbedder {
    calls: Arc<CallCounter>,
}

impl MockTextEmbedder {
    pub fn standalone() -> Self {
        Self {
            calls: Arc::default(),
        }
    }
}

impl TextEmbedder for MockTextEmbedder {
    fn model_id(&self) -> &str {
        "mock-sentence"
    }

    fn dim(&self) -> usize {
        MOCK_DIM
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        bump(&self.calls.text);
        sentence_embedding(text)
    }
}

pub struct MockJointEmbedder {
    world: Arc<MockWorld>,
    calls: Arc<CallCounter>,
}

impl ImageTextEmbedder for MockJointEmbedder {
    fn model_id(&self) -> &str {
        "mock-joint"
    }

    fn dim(&self) -> usize {
        MOCK_DIM
    }

    fn embed_image(&self, req: &ImageRequest<'_>) -> Result<EmbeddingVector, ProviderError> {
        bump(&self.calls.image);
        self.world.check_available(req.object_id)?;
        joint_text_embedding(&self.world.truth(req.object_id).caption(req.view))
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        bump(&self.calls.joint_text);
        joint_text_embedding(text)
    }
}

pub struct MockCloudEmbedder {
    world: Arc<MockWorld>,
    calls: Arc<CallCounter>,
}

/// Magnitude of the cloud-dependent perturbation relative to the category
/// direction.
const CLOUD_JITTER: f64 = 0.05;

impl CloudEmbedder for MockCloudEmbedder {
    fn model_id(&self) -> &str {
        "mock-cloud"
    }

    fn dim(&self) -> usize {
        MOCK_DIM
    }

    fn embed_cloud(&self, req: &CloudRequest<'_>) -> Result<EmbeddingVector, ProviderError> {
        bump(&self.calls.cloud);
        self.world.check_available(req.object_id)?;
        if req.cloud.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let truth = self.world.truth(req.object_id);
        let base = word_vector("joint", &truth.cloud_category);
        let jitter = fresh_word_vector("cloud", &cloud_digest(req.cloud));
        let v = base
            .iter()
            .zip(jitter)
            .map(|(b, j)| b + CLOUD_JITTER * j)
            .collect();
        EmbeddingVector::new(v).map_err(|e| ProviderError::MalformedProviderResponse(e.to_string()))
    }
}

/// All four mock providers over one world, with a shared call counter.
#[derive(Clone)]
pub struct MockSuite {
    world: Arc<MockWorld>,
    calls: Arc<CallCounter>,
}

impl MockSuite {
    pub fn new(world: MockWorld) -> Self {
        Self {
            world: Arc::new(world),
            calls: Arc::default(),
        }
    }

    pub fn world(&self) -> &MockWorld {
        &self.world
    }

    pub fn calls(&self) -> CallCounts {
        self.calls.snapshot()
    }

    pub fn providers(&self) -> Providers {
        Providers {
            generator: Arc::new(MockGenerator {
                world: self.world.clone(),
                calls: self.calls.clone(),
                model_id: format!("mock-vlm@{}", self.world.seed),
            }),
            text: Arc::new(MockTextEmbedder {
                calls: self.calls.clone(),
            }),
            clip: Arc::new(MockJointEmbedder {
                world: self.world.clone(),
                calls: self.calls.clone(),
            }),
            cloud: Arc::new(MockCloudEmbedder {
                world: self.world.clone(),
                calls: self.calls.clone(),
            }),
        }
    }
}

/// A small point cloud whose layout depends on the object id.
pub fn synthetic_cloud(object_id: &str, points: usize) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(&["cloud-points", object_id]));
    let pts = (0..points)
        .map(|_| {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let z: f64 = rng.random_range(-1.0..1.0);
            let r = (1.0 - z * z).sqrt();
            // round so the PLY text form reproduces the values exactly
            let q = |x: f64| (x * 1e4).round() / 1e4;
            [q(r * theta.cos()), q(r * theta.sin()), q(z)]
        })
        .collect();
    PointCloud::new(pts).expect("finite points")
}

/// Builds `n` manifests `obj-000 .. obj-{n-1}`. Objects whose index is in
/// `mismatched` get a point cloud of a different category than their images.
pub fn synthetic_corpus(n: usize, mismatched: &[usize], points: usize) -> Vec<ObjectManifest> {
    (0..n)
        .map(|i| {
            let object_id = format!("obj-{i:03}");
            let truth = ObjectTruth::derive(&object_id);
            let mut metadata = BTreeMap::new();
            metadata.insert("category".to_string(), serde_json::json!(truth.category));
            if mismatched.contains(&i) {
                let pos = CATEGORIES.iter().position(|c| *c == truth.category).unwrap();
                let other = CATEGORIES[(pos + 1 + i % (CATEGORIES.len() - 1)) % CATEGORIES.len()];
                metadata.insert("cloud_category".to_string(), serde_json::json!(other));
            }
            ObjectManifest {
                view_images: Viewpoint::ALL
                    .iter()
                    .map(|v| (*v, format!("{v}.png")))
                    .collect(),
                point_cloud_ref: "cloud.ply".to_string(),
                point_cloud: synthetic_cloud(&object_id, points),
                metadata,
                object_id,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::cosine_similarity;
    use crate::providers::GenerationConfig;

    #[test]
    fn generator_is_deterministic() {
        let suite = MockSuite::new(MockWorld::new(42));
        let p = suite.providers();
        let cfg = GenerationConfig::default();
        let req = GenerateRequest {
            object_id: "obj-1",
            view: Viewpoint::Front,
            image: "front.png",
            cfg: &cfg,
        };
        let a = p.generator.generate(&req).unwrap();
        let b = p.generator.generate(&req).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
        assert_eq!(suite.calls().generate, 2);
    }

    #[test]
    fn seeds_change_samples() {
        let a = MockWorld::new(1).sample_captions("o", Viewpoint::Left, 5, 0.7);
        let b = MockWorld::new(2).sample_captions("o", Viewpoint::Left, 5, 0.7);
        assert_ne!(a, b);
    }

    #[test]
    fn single_candidate() {
        assert_eq!(MockWorld::new(0).sample_captions("o", Viewpoint::Top, 1, 0.7).len(), 1);
    }

    #[test]
    fn same_text_same_vector() {
        let e = MockTextEmbedder::standalone();
        assert_eq!(
            e.embed_text("A red mug.").unwrap(),
            e.embed_text("A red mug.").unwrap()
        );
        assert!(matches!(e.embed_text(""), Err(ProviderError::EmptyInput)));
        assert!(matches!(e.embed_text(" .. "), Err(ProviderError::EmptyInput)));
    }

    #[test]
    fn fixture_pair_hits_requested_cosine() {
        for (cos, seed) in [(0.9, 1), (0.0, 2), (-0.3, 3), (0.557, 4)] {
            let (a, b) = pair_at_cosine(32, cos, seed);
            assert!((cosine_similarity(&a, &b).unwrap() - cos).abs() < 1e-6);
        }
    }

    #[test]
    fn truthful_caption_gates_high_and_mismatch_low() {
        let corpus = synthetic_corpus(6, &[2], 64);
        let world = MockWorld::from_corpus(&corpus, 0);
        let suite = MockSuite::new(world);
        let p = suite.providers();
        for (i, m) in corpus.iter().enumerate() {
            let t = suite.world().truth(&m.object_id);
            let text = format!("{} {}", t.caption(Viewpoint::Front), t.caption(Viewpoint::Left));
            let te = p.clip.embed_text(&text).unwrap();
            let ce = p
                .cloud
                .embed_cloud(&CloudRequest {
                    object_id: &m.object_id,
                    cloud: &m.point_cloud,
                })
                .unwrap();
            let s = cosine_similarity(&te, &ce).unwrap();
            if i == 2 {
                assert!(s < 0.4, "mismatched object scored {s}");
            } else {
                assert!(s > 0.7, "consistent object scored {s}");
            }
        }
    }

    #[test]
    fn truth_caption_matches_image_best() {
        let world = MockWorld::new(3);
        let t = world.truth("x");
        let img = joint_text_embedding(&t.caption(Viewpoint::Front)).unwrap();
        let good = joint_text_embedding(&t.caption(Viewpoint::Front)).unwrap();
        let mut wrong = t.clone();
        wrong.color = COLORS.iter().find(|c| **c != t.color).unwrap().to_string();
        let bad = joint_text_embedding(&wrong.caption(Viewpoint::Front)).unwrap();
        assert!(cosine_similarity(&img, &good).unwrap() > cosine_similarity(&img, &bad).unwrap());
    }

    #[test]
    fn missing_logprobs_injected() {
        let w = MockWorld::new(5).with_quality(MockQuality {
            missing_logprob_rate: 1.0,
            ..Default::default()
        });
        assert!(w
            .sample_captions("o", Viewpoint::Back, 3, 0.7)
            .iter()
            .all(|c| c.token_logprobs.is_none()));
    }

    #[test]
    fn unavailable_objects_fail() {
        let suite = MockSuite::new(MockWorld::new(0).with_unavailable("bad"));
        let cfg = GenerationConfig::default();
        let err = suite
            .providers()
            .generator
            .generate(&GenerateRequest {
                object_id: "bad",
                view: Viewpoint::Front,
                image: "f.png",
                cfg: &cfg,
            })
            .unwrap_err();
        assert!(err.is_retryable());
    }
}
