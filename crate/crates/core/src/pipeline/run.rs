//! Per-object orchestration and corpus runs.
//!
//! Each object goes through generation, scoring, per-view selection, fusion
//! and gating in that order. Objects are independent, so a corpus is mapped
//! over an [`Exec`] and the results sorted by object id.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{ConfigError, PipelineConfig, ProviderSettings};
use crate::bandit::{compute_reward, BanditError, Selector, StrategyKind};
use crate::clustering::{dbscan_cluster, select_canonical, ClusterAssignment, ClusterError};
use crate::confidence::{normalize_confidence, ConfidenceError};
use crate::gating::{gate, FlaggedExport, FlaggedRecord, GatingDecision, GatingError};
use crate::model::{
    ingest_manifest, CandidateDescription, ConfidenceSource, EmbeddingVector, IngestOptions, ModelError,
    ObjectManifest, Viewpoint,
};
use crate::par::Exec;
use crate::providers::cache::{CacheStats, ResponseCache};
use crate::providers::mock::{CallCounts, MockSuite, MockWorld};
use crate::providers::{
    generate_candidates, CloudRequest, GenerateRequest, ImageRequest, ProviderError, Providers,
};
use crate::scoring::{composite_score, softmax, ScoredCandidate, ScoringError};
use crate::seed::stable_seed;
use crate::synthesis::{assemble_global, GlobalAnnotation, SynthesisError, ViewSelection};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("ingestion: {0}")]
    Ingest(#[from] ModelError),
    #[error("provider: {0}")]
    Provider(#[from] ProviderError),
    #[error("confidence: {0}")]
    Confidence(#[from] ConfidenceError),
    #[error("clustering: {0}")]
    Cluster(#[from] ClusterError),
    #[error("scoring: {0}")]
    Scoring(#[from] ScoringError),
    #[error("bandit: {0}")]
    Bandit(#[from] BanditError),
    #[error("synthesis: {0}")]
    Synthesis(#[from] SynthesisError),
    #[error("gating: {0}")]
    Gating(#[from] GatingError),
    #[error("manifest lacks an image for {0}")]
    MissingImage(Viewpoint),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("output {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl PipelineError {
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Ingest(_) | PipelineError::MissingImage(_) => "ingest",
            PipelineError::Provider(_) | PipelineError::Confidence(_) => "generation",
            PipelineError::Cluster(_) | PipelineError::Scoring(_) | PipelineError::Bandit(_) => "aggregation",
            PipelineError::Synthesis(_) => "synthesis",
            PipelineError::Gating(_) => "gating",
            PipelineError::Config(_) | PipelineError::Output { .. } => "run",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditStep {
    pub round: usize,
    pub arm: usize,
    pub candidate_index: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditTrace {
    pub strategy: StrategyKind,
    /// Candidate index behind each arm.
    pub arms: Vec<usize>,
    pub steps: Vec<BanditStep>,
    pub pulls: Vec<u64>,
    pub means: Vec<f64>,
    pub selected_arm: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub view: Viewpoint,
    pub image: String,
    pub candidates: Vec<ScoredCandidate>,
    pub confidence_sources: Vec<ConfidenceSource>,
    pub clusters: Vec<ClusterAssignment>,
    pub bandit: BanditTrace,
    pub selection: ViewSelection,
}

/// The two vectors the gate compared, kept so the decision can be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateEmbeddings {
    pub text: EmbeddingVector,
    pub cloud: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub object_id: String,
    pub views: Vec<ViewRecord>,
    pub fb_weight: f64,
    pub global: GlobalAnnotation,
    pub gating: GatingDecision,
    pub gate_embeddings: GateEmbeddings,
}

impl AnnotationRecord {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("record serializes");
        s.push('\n');
        s
    }

    /// Recomputes fusion and gating from the record alone.
    pub fn replay(&self) -> Result<(GlobalAnnotation, GatingDecision), PipelineError> {
        let selections: Vec<ViewSelection> = self.views.iter().map(|v| v.selection.clone()).collect();
        let global = assemble_global(&selections, self.fb_weight)?;
        let gating = gate(
            &self.gate_embeddings.text,
            &self.gate_embeddings.cloud,
            self.gating.threshold,
        )?;
        Ok((global, gating))
    }

    pub fn flagged_record(&self) -> Option<FlaggedRecord> {
        (!self.gating.passed).then(|| FlaggedRecord {
            object_id: self.object_id.clone(),
            similarity: self.gating.similarity,
            threshold: self.gating.threshold,
            annotation: self.global.full_text.clone(),
        })
    }
}

/// Wall-clock milliseconds per stage for one object.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub generation_ms: f64,
    pub aggregation_ms: f64,
    pub synthesis_ms: f64,
    pub gating_ms: f64,
}

impl StageTimings {
    fn add(&mut self, o: &StageTimings) {
        self.generation_ms += o.generation_ms;
        self.aggregation_ms += o.aggregation_ms;
        self.synthesis_ms += o.synthesis_ms;
        self.gating_ms += o.gating_ms;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectFailure {
    pub object_id: String,
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    /// Sorted by object id.
    pub records: Vec<AnnotationRecord>,
    pub failures: Vec<ObjectFailure>,
    pub timings: BTreeMap<String, StageTimings>,
    pub wall_time_ms: f64,
}

impl RunResult {
    pub fn flagged(&self) -> Vec<FlaggedRecord> {
        self.records.iter().filter_map(AnnotationRecord::flagged_record).collect()
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Scored candidates, cluster assignments and canonical indices of one view.
pub type ScoredView = (Vec<ScoredCandidate>, Vec<ClusterAssignment>, Vec<usize>);

/// Scores one view's candidates: clustering on the text embedder,
/// preliminary relevance over all candidates to rank cluster members, then
/// relevance renormalized over the canonical representatives.
pub fn score_view(
    candidates: &[CandidateDescription],
    text_embs: &[EmbeddingVector],
    image_emb: &EmbeddingVector,
    joint_embs: &[EmbeddingVector],
    cfg: &PipelineConfig,
) -> Result<ScoredView, PipelineError> {
    let clusters = dbscan_cluster(text_embs, cfg.dbscan)?;
    let sims = joint_embs
        .iter()
        .map(|t| crate::clustering::cosine_similarity(image_emb, t))
        .collect::<Result<Vec<_>, _>>()?;
    let norm = candidates
        .iter()
        .map(|c| normalize_confidence(c.raw_confidence))
        .collect::<Result<Vec<_>, _>>()?;
    let all_weights = softmax(&sims);
    let prelim = norm
        .iter()
        .zip(&all_weights)
        .map(|(n, w)| composite_score(*n, *w, cfg.blend_ratio))
        .collect::<Result<Vec<_>, _>>()?;
    let reps = select_canonical(&clusters, &prelim)?.representatives;
    let rep_weights = softmax(&reps.iter().map(|&i| sims[i]).collect::<Vec<_>>());

    let mut scored = Vec::with_capacity(candidates.len());
    for (i, c) in candidates.iter().enumerate() {
        let (relevance, composite, canonical) = match reps.iter().position(|&r| r == i) {
            Some(k) => (
                rep_weights[k],
                composite_score(norm[i], rep_weights[k], cfg.blend_ratio)?,
                true,
            ),
            None => (all_weights[i], prelim[i], false),
        };
        scored.push(ScoredCandidate {
            index: i,
            text: c.text.clone(),
            raw_confidence: c.raw_confidence,
            normalized_confidence: norm[i],
            relevance_similarity: sims[i],
            relevance,
            composite,
            cluster: clusters[i].cluster,
            canonical,
        });
    }
    Ok((scored, clusters, reps))
}

/// Runs the configured bandit over the canonical representatives for
/// `rounds` rounds and picks the most-pulled arm.
pub fn select_by_bandit(
    scored: &[ScoredCandidate],
    reps: &[usize],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<BanditTrace, PipelineError> {
    let mut sel = Selector::new(reps.len(), cfg.bandit, seed)?;
    let mut steps = Vec::with_capacity(cfg.bandit_rounds);
    for round in 0..cfg.bandit_rounds {
        let arm = sel.select()?;
        let reward = compute_reward(&scored[reps[arm]], cfg.blend_ratio);
        sel.observe(arm, reward)?;
        steps.push(BanditStep {
            round,
            arm,
            candidate_index: reps[arm],
            reward: reward.value(),
        });
    }
    let state = sel.state();
    Ok(BanditTrace {
        strategy: cfg.bandit.strategy,
        arms: reps.to_vec(),
        steps,
        pulls: state.pulls().to_vec(),
        means: state.means().to_vec(),
        selected_arm: state.most_pulled(),
    })
}

fn view_seed(cfg: &PipelineConfig, object_id: &str, view: Viewpoint) -> u64 {
    stable_seed(&["bandit", &cfg.seed.to_string(), object_id, view.as_str()])
}

/// Runs every stage for one object.
pub fn process_object(
    m: &ObjectManifest,
    cfg: &PipelineConfig,
    p: &Providers,
) -> Result<(AnnotationRecord, StageTimings), PipelineError> {
    let mut t = StageTimings::default();
    let mut views = Vec::with_capacity(Viewpoint::ALL.len());
    for view in Viewpoint::ALL {
        let image = m.view_images.get(&view).ok_or(PipelineError::MissingImage(view))?;
        let start = Instant::now();
        let req = GenerateRequest {
            object_id: &m.object_id,
            view,
            image,
            cfg: &cfg.generation,
        };
        let candidates = generate_candidates(p.generator.as_ref(), &req)?;
        let text_embs = candidates
            .iter()
            .map(|c| p.text.embed_text(&c.text))
            .collect::<Result<Vec<_>, _>>()?;
        let image_emb = p.clip.embed_image(&ImageRequest {
            object_id: &m.object_id,
            view,
            image,
        })?;
        let joint_embs = candidates
            .iter()
            .map(|c| p.clip.embed_text(&c.text))
            .collect::<Result<Vec<_>, _>>()?;
        t.generation_ms += ms(start);

        let start = Instant::now();
        let (scored, clusters, reps) = score_view(&candidates, &text_embs, &image_emb, &joint_embs, cfg)?;
        let bandit = select_by_bandit(&scored, &reps, cfg, view_seed(cfg, &m.object_id, view))?;
        let chosen = &scored[bandit.arms[bandit.selected_arm]];
        let selection = ViewSelection {
            view,
            text: chosen.text.clone(),
            score: chosen.composite,
        };
        t.aggregation_ms += ms(start);
        views.push(ViewRecord {
            view,
            image: image.clone(),
            confidence_sources: candidates.iter().map(|c| c.confidence_source).collect(),
            candidates: scored,
            clusters,
            bandit,
            selection,
        });
    }

    let start = Instant::now();
    let selections: Vec<ViewSelection> = views.iter().map(|v| v.selection.clone()).collect();
    let global = assemble_global(&selections, cfg.fb_weight)?;
    t.synthesis_ms = ms(start);

    let start = Instant::now();
    let text = p.clip.embed_text(&global.full_text)?;
    let cloud = p.cloud.embed_cloud(&CloudRequest {
        object_id: &m.object_id,
        cloud: &m.point_cloud,
    })?;
    let gating = gate(&text, &cloud, cfg.gate_threshold)?;
    t.gating_ms = ms(start);

    Ok((
        AnnotationRecord {
            object_id: m.object_id.clone(),
            views,
            fb_weight: cfg.fb_weight,
            global,
            gating,
            gate_embeddings: GateEmbeddings { text, cloud },
        },
        t,
    ))
}

/// Runs the pipeline over `corpus`. Per-object errors become failure entries;
/// only an invalid config aborts. Flagged objects are appended to `flagged`
/// when given.
pub fn run_pipeline(
    corpus: &[ObjectManifest],
    cfg: &PipelineConfig,
    providers: &Providers,
    exec: Exec,
    flagged: Option<&FlaggedExport>,
) -> Result<RunResult, PipelineError> {
    cfg.validate()?;
    let start = Instant::now();
    let outcomes = exec.map(corpus, |m| {
        let r = process_object(m, cfg, providers);
        if let (Ok((rec, _)), Some(sink)) = (&r, flagged) {
            if let Some(f) = rec.flagged_record() {
                if let Err(e) = sink.append(&f) {
                    log::error!("cannot append {} to flagged export: {e}", rec.object_id);
                }
            }
        }
        (m.object_id.clone(), r)
    });
    let mut result = RunResult {
        records: Vec::new(),
        failures: Vec::new(),
        timings: BTreeMap::new(),
        wall_time_ms: 0.0,
    };
    for (object_id, r) in outcomes {
        match r {
            Ok((rec, t)) => {
                result.timings.insert(object_id, t);
                result.records.push(rec);
            }
            Err(e) => {
                log::warn!("{object_id} failed at {}: {e}", e.stage());
                result.failures.push(ObjectFailure {
                    object_id,
                    stage: e.stage().to_string(),
                    error: e.to_string(),
                });
            }
        }
    }
    result.records.sort_by(|a, b| a.object_id.cmp(&b.object_id));
    result.failures.sort_by(|a, b| a.object_id.cmp(&b.object_id));
    if let Some(sink) = flagged {
        sink.flush()?;
    }
    result.wall_time_ms = ms(start);
    Ok(result)
}

/// Manifest files of a corpus directory: `<dir>/*.json` and
/// `<dir>/*/manifest.json`, sorted by path.
pub fn discover_manifests(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let io = |source| PipelineError::Output {
        path: dir.to_path_buf(),
        source,
    };
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_dir() {
            let m = path.join("manifest.json");
            if m.is_file() {
                out.push(m);
            }
        } else if path.extension().is_some_and(|e| e == "json") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Object id for a manifest that could not be parsed: its directory name for
/// `*/manifest.json`, otherwise the file stem.
fn fallback_id(path: &Path) -> String {
    let name = if path.file_name().is_some_and(|n| n == "manifest.json") {
        path.parent().and_then(|p| p.file_name())
    } else {
        path.file_stem()
    };
    name.map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Ingests every manifest in `dir`; unreadable ones become failures.
pub fn load_corpus(dir: &Path, point_budget: usize) -> Result<(Vec<ObjectManifest>, Vec<ObjectFailure>), PipelineError> {
    let opts = IngestOptions { point_budget };
    let mut corpus = Vec::new();
    let mut failures = Vec::new();
    for path in discover_manifests(dir)? {
        match ingest_manifest(&path, opts) {
            Ok(m) => corpus.push(m),
            Err(e) => {
                let e = PipelineError::from(e);
                failures.push(ObjectFailure {
                    object_id: fallback_id(&path),
                    stage: e.stage().to_string(),
                    error: e.to_string(),
                })
            }
        }
    }
    Ok((corpus, failures))
}

/// Builds providers from the config. Mock providers are seeded by the run
/// seed and learn each object's ground truth from the corpus metadata.
pub fn build_providers(
    cfg: &PipelineConfig,
    corpus: &[ObjectManifest],
) -> Result<(Providers, Option<MockSuite>), PipelineError> {
    let (providers, suite) = match &cfg.providers {
        ProviderSettings::Mock { quality } => {
            let suite = MockSuite::new(MockWorld::from_corpus(corpus, cfg.seed).with_quality(*quality));
            (suite.providers(), Some(suite))
        }
        #[cfg(feature = "http")]
        ProviderSettings::Http(h) => {
            use crate::providers::http::{HttpEmbedder, HttpGenerator, HttpJointEmbedder};
            let providers = Providers {
                generator: Arc::new(HttpGenerator::new(h.generator.clone())?),
                text: Arc::new(HttpEmbedder::new(h.text.clone())?),
                clip: Arc::new(HttpJointEmbedder {
                    image: HttpEmbedder::new(h.image.clone())?,
                    text: HttpEmbedder::new(h.joint_text.clone())?,
                }),
                cloud: Arc::new(HttpEmbedder::new(h.cloud.clone())?),
            };
            (providers, None)
        }
    };
    Ok((providers, suite))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub objects: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub passed_gate: usize,
    pub flagged: usize,
    pub seed: u64,
    pub workers: usize,
    pub wall_time_ms: f64,
    pub objects_per_hour: f64,
    pub stage_totals_ms: StageTimings,
    pub per_object_ms: BTreeMap<String, StageTimings>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache: Option<CacheStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provider_calls: Option<CallCounts>,
    pub failures: Vec<ObjectFailure>,
}

/// Everything an `annotate` run produced.
pub struct AnnotateOutput {
    pub result: RunResult,
    pub summary: RunSummary,
    pub cache_stats: Option<CacheStats>,
    pub provider_calls: Option<CallCounts>,
}

/// Loads a corpus directory, runs the pipeline and, when `out` is given,
/// writes `<object_id>.json` per record, `flagged.jsonl` and
/// `run_summary.json` there.
pub fn annotate_corpus(
    corpus_dir: &Path,
    cfg: &PipelineConfig,
    out: Option<&Path>,
) -> Result<AnnotateOutput, PipelineError> {
    cfg.validate()?;
    let (corpus, ingest_failures) = load_corpus(corpus_dir, cfg.point_budget)?;
    let (mut providers, suite) = build_providers(cfg, &corpus)?;
    let cache = match &cfg.cache_dir {
        Some(dir) => {
            let c = Arc::new(ResponseCache::open(dir)?);
            providers = providers.with_cache(c.clone());
            Some(c)
        }
        None => None,
    };
    let exec = Exec::from_workers(cfg.workers);
    let mut result = run_pipeline(&corpus, cfg, &providers, exec, None)?;
    result.failures.extend(ingest_failures);
    result.failures.sort_by(|a, b| a.object_id.cmp(&b.object_id));

    let mut totals = StageTimings::default();
    for t in result.timings.values() {
        totals.add(t);
    }
    let total = result.records.len() + result.failures.len();
    let flagged = result.flagged();
    let cache_stats = cache.as_ref().map(|c| c.stats());
    let provider_calls = suite.as_ref().map(MockSuite::calls);
    let summary = RunSummary {
        objects: total,
        succeeded: result.records.len(),
        failed: result.failures.len(),
        passed_gate: result.records.len() - flagged.len(),
        flagged: flagged.len(),
        seed: cfg.seed,
        workers: exec.threads(),
        wall_time_ms: result.wall_time_ms,
        objects_per_hour: if result.wall_time_ms > 0.0 {
            result.records.len() as f64 / (result.wall_time_ms / 3.6e6)
        } else {
            0.0
        },
        stage_totals_ms: totals,
        per_object_ms: result.timings.clone(),
        cache: cache_stats,
        provider_calls,
        failures: result.failures.clone(),
    };

    if let Some(out) = out {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| PipelineError::Output { path, source }
        };
        std::fs::create_dir_all(out).map_err(io(out))?;
        let records_dir = out.join("records");
        std::fs::create_dir_all(&records_dir).map_err(io(&records_dir))?;
        for rec in &result.records {
            let path = records_dir.join(format!("{}.json", sanitize(&rec.object_id)));
            std::fs::write(&path, rec.to_json()).map_err(io(&path))?;
        }
        let flagged_path = out.join("flagged.jsonl");
        if flagged_path.exists() {
            std::fs::remove_file(&flagged_path).map_err(io(&flagged_path))?;
        }
        let sink = FlaggedExport::create(&flagged_path)?;
        for f in &flagged {
            sink.append(f)?;
        }
        sink.flush()?;
        let summary_path = out.join("run_summary.json");
        let body = serde_json::to_string_pretty(&summary).expect("summary serializes");
        std::fs::write(&summary_path, body + "\n").map_err(io(&summary_path))?;
    }

    Ok(AnnotateOutput {
        result,
        summary,
        cache_stats,
        provider_calls,
    })
}

/// Object ids become file names; anything but `[A-Za-z0-9._-]` is replaced.
fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect()
}

/// Mean composite score of bandit-selected versus uniformly random
/// representatives, for one seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrial {
    pub seed: u64,
    pub bandit_mean: f64,
    pub random_mean: f64,
    /// Mean paired difference over its standard deviation.
    pub effect_size: f64,
}

/// Compares bandit selection with uniform random choice among the same
/// canonical representatives, on `objects` mock objects per seed, every view.
pub fn selection_experiment(
    objects: usize,
    seeds: &[u64],
    cfg: &PipelineConfig,
    exec: Exec,
) -> Result<Vec<SelectionTrial>, PipelineError> {
    let trials = exec.map(seeds, |&seed| -> Result<SelectionTrial, PipelineError> {
        let cfg = PipelineConfig { seed, ..cfg.clone() };
        let world = match &cfg.providers {
            ProviderSettings::Mock { quality } => MockWorld::new(seed).with_quality(*quality),
            #[cfg(feature = "http")]
            ProviderSettings::Http(_) => MockWorld::new(seed),
        };
        let p = MockSuite::new(world).providers();
        let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(&["uniform", &seed.to_string()]));
        let mut diffs = Vec::new();
        let (mut b_sum, mut r_sum) = (0.0, 0.0);
        for i in 0..objects {
            let object_id = format!("sel-{i:04}");
            for view in Viewpoint::ALL {
                let image = format!("{view}.png");
                let req = GenerateRequest {
                    object_id: &object_id,
                    view,
                    image: &image,
                    cfg: &cfg.generation,
                };
                let candidates = generate_candidates(p.generator.as_ref(), &req)?;
                let text_embs = candidates
                    .iter()
                    .map(|c| p.text.embed_text(&c.text))
                    .collect::<Result<Vec<_>, _>>()?;
                let image_emb = p.clip.embed_image(&ImageRequest {
                    object_id: &object_id,
                    view,
                    image: &image,
                })?;
                let joint = candidates
                    .iter()
                    .map(|c| p.clip.embed_text(&c.text))
                    .collect::<Result<Vec<_>, _>>()?;
                let (scored, _, reps) = score_view(&candidates, &text_embs, &image_emb, &joint, &cfg)?;
                let trace = select_by_bandit(&scored, &reps, &cfg, view_seed(&cfg, &object_id, view))?;
                let b = scored[trace.arms[trace.selected_arm]].composite;
                let r = scored[reps[rng.random_range(0..reps.len())]].composite;
                b_sum += b;
                r_sum += r;
                diffs.push(b - r);
            }
        }
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Ok(SelectionTrial {
            seed,
            bandit_mean: b_sum / n,
            random_mean: r_sum / n,
            effect_size: if var > 0.0 { mean / var.sqrt() } else { 0.0 },
        })
    });
    trials.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::synthetic_corpus;

    fn cfg() -> PipelineConfig {
        PipelineConfig {
            seed: 42,
            workers: 1,
            ..Default::default()
        }
    }

    #[test]
    fn one_object_is_deterministic_and_replays() {
        let corpus = synthetic_corpus(1, &[], 32);
        let c = cfg();
        let run = || {
            let (p, _) = build_providers(&c, &corpus).unwrap();
            run_pipeline(&corpus, &c, &p, Exec::Sequential, None).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.records.len(), 1);
        assert_eq!(a.records[0].to_json(), b.records[0].to_json());
        let rec = &a.records[0];
        let (g, d) = rec.replay().unwrap();
        assert_eq!(g, rec.global);
        assert_eq!(d, rec.gating);
        for v in &rec.views {
            assert_eq!(v.bandit.steps.len(), 50);
            assert_eq!(v.bandit.pulls.iter().sum::<u64>(), 50);
            assert!(v.candidates.iter().filter(|c| c.canonical).count() == v.bandit.arms.len());
        }
    }

    #[test]
    fn provider_failure_is_recorded_not_thrown() {
        let corpus = synthetic_corpus(3, &[], 16);
        let c = cfg();
        let suite = MockSuite::new(MockWorld::from_corpus(&corpus, 42).with_unavailable("obj-001"));
        let r = run_pipeline(&corpus, &c, &suite.providers(), Exec::Sequential, None).unwrap();
        assert_eq!(r.records.len(), 2);
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.failures[0].object_id, "obj-001");
        assert_eq!(r.failures[0].stage, "generation");
    }

    #[test]
    fn single_candidate_degrades_to_no_choice() {
        let corpus = synthetic_corpus(1, &[], 16);
        let mut c = cfg();
        c.generation.num_candidates = 1;
        let (p, _) = build_providers(&c, &corpus).unwrap();
        let r = run_pipeline(&corpus, &c, &p, Exec::Sequential, None).unwrap();
        for v in &r.records[0].views {
            assert_eq!(v.bandit.arms, vec![0]);
            assert_eq!(v.selection.text, v.candidates[0].text);
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let corpus = synthetic_corpus(6, &[1], 16);
        let c = cfg();
        let (p, _) = build_providers(&c, &corpus).unwrap();
        let a = run_pipeline(&corpus, &c, &p, Exec::Sequential, None).unwrap();
        let b = run_pipeline(&corpus, &c, &p, Exec::Parallel { threads: 3 }, None).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn sanitize_ids() {
        assert_eq!(sanitize("a/b c.1"), "a_b_c.1");
    }
}
