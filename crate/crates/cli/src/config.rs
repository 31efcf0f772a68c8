use std::path::{Path, PathBuf};

use clinret::concepts::{builtin_query_sets, static_query_sets};
use clinret::embedding::EmbedderSpec;
use clinret::llm::LlmSpec;
use clinret::prompts::PromptTemplates;
use clinret::synth::{SynthSpec, TemplateBank};
use clinret::{ChunkingConfig, Error, PerConcept, QuerySets, Registry, Result};
use serde::Deserialize;

/// Pipeline configuration. Secrets never live here: API keys come from
/// `LLM_API_KEY` and `EMBED_API_KEY`.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub embedder: EmbedderSpec,
    pub llm: LlmSpec,
    pub chunking: ChunkingConfig,
    pub per_concept_k: usize,
    pub parallel_requests: usize,
    pub rng_seed: u64,
    pub query_count: usize,
    pub label_batch_size: usize,
    pub scorer_threshold: f64,
    pub synth: SynthConfig,
    /// Directory relative paths are resolved against; the config file's
    /// directory when loaded from disk.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            embedder: EmbedderSpec::default(),
            llm: LlmSpec::default(),
            chunking: ChunkingConfig::default(),
            per_concept_k: 5000,
            parallel_requests: 4,
            rng_seed: 42,
            query_count: 30,
            label_batch_size: 32,
            scorer_threshold: 0.5,
            synth: SynthConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

/// Every stage file. Unset entries default to a fixed name under `work_dir`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub work_dir: Option<PathBuf>,
    pub notes: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub chunks: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub gold_candidates: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub training: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub reports: Option<PathBuf>,
    /// Optional overrides of shipped data.
    pub registry: Option<PathBuf>,
    pub query_sets: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum PlantRate {
    Uniform(f64),
    PerConcept(PerConcept<f64>),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub notes_per_patient: usize,
    pub plant_rate: PlantRate,
    pub distractor_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 20,
            notes_per_patient: 5,
            plant_rate: PlantRate::Uniform(0.3),
            distractor_rate: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn spec(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            n_patients: self.n_patients,
            notes_per_patient: self.notes_per_patient,
            plant_rate: match &self.plant_rate {
                PlantRate::Uniform(p) => PerConcept::from_fn(|_| *p),
                PlantRate::PerConcept(m) => m.clone(),
            },
            distractor_rate: self.distractor_rate,
            rng_seed: seed,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks values and that explicitly referenced data files exist.
    pub fn validate(&self) -> Result<()> {
        if self.per_concept_k == 0 || self.parallel_requests == 0 || self.query_count == 0 || self.label_batch_size == 0 {
            return Err(Error::Config(
                "per_concept_k, parallel_requests, query_count and label_batch_size must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.scorer_threshold) {
            return Err(Error::Config(format!("scorer_threshold {} outside [0, 1]", self.scorer_threshold)));
        }
        self.embedder.validate()?;
        for p in [&self.paths.registry, &self.paths.query_sets, &self.paths.prompts, &self.paths.templates]
            .into_iter()
            .flatten()
        {
            let resolved = self.resolve(p);
            if !resolved.exists() {
                return Err(Error::Config(format!("referenced path {} does not exist", resolved.display())));
            }
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn work_dir(&self) -> PathBuf {
        self.resolve(self.paths.work_dir.as_deref().unwrap_or(Path::new("work")))
    }

    fn path_or(&self, p: &Option<PathBuf>, default: &str) -> PathBuf {
        match p {
            Some(p) => self.resolve(p),
            None => self.work_dir().join(default),
        }
    }

    pub fn notes(&self) -> PathBuf {
        self.path_or(&self.paths.notes, "notes.jsonl")
    }
    pub fn truth(&self) -> PathBuf {
        self.path_or(&self.paths.truth, "truth.jsonl")
    }
    pub fn chunks(&self) -> PathBuf {
        self.path_or(&self.paths.chunks, "chunks.jsonl")
    }
    pub fn gold(&self) -> PathBuf {
        self.path_or(&self.paths.gold, "gold.jsonl")
    }
    pub fn gold_candidates(&self) -> PathBuf {
        self.path_or(&self.paths.gold_candidates, "gold_candidates.jsonl")
    }
    pub fn index(&self) -> PathBuf {
        self.path_or(&self.paths.index, "index.bin")
    }
    pub fn candidates(&self) -> PathBuf {
        self.path_or(&self.paths.candidates, "candidates.jsonl")
    }
    pub fn labels(&self) -> PathBuf {
        self.path_or(&self.paths.labels, "labels.jsonl")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.path_or(&self.paths.checkpoint, "labels.checkpoint.jsonl")
    }
    pub fn training(&self) -> PathBuf {
        self.path_or(&self.paths.training, "train.jsonl")
    }
    pub fn predictions(&self) -> PathBuf {
        self.path_or(&self.paths.predictions, "predictions.jsonl")
    }
    pub fn reports(&self) -> PathBuf {
        self.path_or(&self.paths.reports, "reports")
    }
    /// Where `expand` writes: the configured query-set path or the work dir.
    pub fn query_sets_output(&self) -> PathBuf {
        self.path_or(&self.paths.query_sets, "query_sets.jsonl")
    }

    pub fn registry(&self) -> Result<Registry> {
        match &self.paths.registry {
            Some(p) => Registry::load(&self.resolve(p)),
            None => Ok(Registry::builtin()),
        }
    }

    /// Configured query sets, else an expanded set in the work dir, else the
    /// shipped curated sets.
    pub fn query_sets(&self) -> Result<(QuerySets, String)> {
        let out = self.query_sets_output();
        if self.paths.query_sets.is_some() || out.exists() {
            return Ok((static_query_sets(&out)?, out.display().to_string()));
        }
        Ok((builtin_query_sets(), "builtin".into()))
    }

    pub fn prompts(&self) -> Result<PromptTemplates> {
        match &self.paths.prompts {
            Some(p) => PromptTemplates::from_dir(&self.resolve(p)),
            None => Ok(PromptTemplates::default()),
        }
    }

    pub fn templates(&self) -> Result<TemplateBank> {
        let bank = match &self.paths.templates {
            Some(p) => TemplateBank::load(&self.resolve(p))?,
            None => TemplateBank::builtin(),
        };
        bank.validate(&self.registry()?)?;
        Ok(bank)
    }
}
