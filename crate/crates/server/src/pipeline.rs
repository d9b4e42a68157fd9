//! Pipeline stages over one working directory.
//!
//! Every stage writes a stamp holding the hash of its configuration and of
//! its inputs' stamps; a stage whose stamp matches is loaded instead of rerun.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use neurosim::agent::{
    random_rollouts, record_policy, train_agent, AgentConfig, Policy, RandomPolicyConfig,
};
use neurosim::autoencoder::{finetune_decoder, train_autoencoder, Codec, CodecConfig};
use neurosim::checkpoint::{config_hash, LoadOptions};
use neurosim::dataset::{Dataset, DatasetWriter};
use neurosim::diffusion::{
    distill, train_denoiser, Denoiser, DenoiserConfig, DistillConfig, LatentCorpus, SamplerConfig,
};
use neurosim::env::Frame;
use neurosim::eval::ablations::{
    self, ContextRow, DataPolicyResult, ModelCache, NoiseAugResult, SizeCurve, StepsRow,
};
use neurosim::eval::human::{
    make_human_eval_pairs, read_ratings, score_ratings, Manifest, RatingScore, ScoringKey,
    KEY_FILE, MANIFEST_FILE,
};
use neurosim::eval::report::{append_jsonl, plot_curves, Curve};
use neurosim::eval::{
    eval_autoregressive, eval_teacher_forced, AutoregressiveReport, EvalSet, TeacherForcedReport,
    EVAL_MIN_INDEX,
};
use neurosim::rng::derive_seed;
use neurosim::simulation::{
    ground_truth_context, rollout, write_rollout_dump, ActionSource, ContextSource, RolloutConfig,
    RolloutMeta,
};
use neurosim::{Error, Result};

use crate::engine::{CODEC_FILE, DENOISER_FILE};
use crate::server::ServeConfig;

/// Episode id bases keeping the three stores disjoint.
pub const RANDOM_EPISODE_BASE: u64 = 10_000_000;
pub const EVAL_EPISODE_BASE: u64 = 20_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Agent,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub teacher_forced_windows: usize,
    pub autoregressive_windows: usize,
    pub autoregressive_steps: usize,
    pub sampling_steps: Vec<usize>,
    pub context_lens: Vec<usize>,
    /// Training steps for each ablation model.
    pub ablation_train_steps: usize,
    pub ablation_windows: usize,
    pub policy_windows: usize,
    /// Frames until the "3 second" comparison point.
    pub policy_horizon: usize,
    pub dataset_sizes: Vec<usize>,
    pub dataset_size_train_steps: usize,
    pub dataset_size_eval_every: usize,
    pub dataset_size_windows: usize,
    pub human_pairs: usize,
    pub clip_lens: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            teacher_forced_windows: 512,
            autoregressive_windows: 128,
            autoregressive_steps: 64,
            sampling_steps: vec![1, 2, 4, 8, 16, 32],
            context_lens: vec![1, 2, 4, 8, 16],
            ablation_train_steps: 20_000,
            ablation_windows: 512,
            policy_windows: 256,
            policy_horizon: 60,
            dataset_sizes: vec![10_000, 50_000, 100_000],
            dataset_size_train_steps: 20_000,
            dataset_size_eval_every: 1_000,
            dataset_size_windows: 256,
            human_pairs: 20,
            clip_lens: vec![32, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub workdir: PathBuf,
    pub seed: u64,
    pub random_frames: usize,
    pub eval_frames: usize,
    /// Frames sampled (evenly) from the training stores for the codec.
    pub codec_train_frames: usize,
    pub denoiser_source: DataSource,
    pub agent: AgentConfig,
    pub codec: CodecConfig,
    pub denoiser: DenoiserConfig,
    pub distill: DistillConfig,
    pub sampler: SamplerConfig,
    pub eval: EvalConfig,
    pub serve: ServeConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut c = PipelineConfig {
            workdir: PathBuf::from("work"),
            seed: 0,
            random_frames: 500_000,
            eval_frames: 50_000,
            codec_train_frames: 100_000,
            denoiser_source: DataSource::Agent,
            agent: AgentConfig {
                total_env_steps: 500_000,
                ..Default::default()
            },
            codec: CodecConfig::default(),
            denoiser: DenoiserConfig::default(),
            distill: DistillConfig::default(),
            sampler: SamplerConfig::default(),
            eval: EvalConfig::default(),
            serve: ServeConfig::default(),
        };
        c.set_seed(0);
        c
    }
}

impl PipelineConfig {
    /// Sets the top-level seed and derives every stage seed from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.agent.seed = derive_seed(seed, 1);
        self.codec.seed = derive_seed(seed, 2);
        self.denoiser.seed = derive_seed(seed, 3);
        self.distill.seed = derive_seed(seed, 4);
    }

    /// Reads a JSON config. Unknown keys are errors; stage seeds not given
    /// explicitly derive from the top-level `seed`.
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn from_json(raw: serde_json::Value) -> Result<Self> {
        let mut config: PipelineConfig = serde_json::from_value(raw.clone())?;
        unknown_keys(&raw, &serde_json::to_value(&config)?, "")?;
        let explicit: Vec<u64> = ["agent", "codec", "denoiser", "distill"]
            .iter()
            .map(|s| {
                raw.get(s)
                    .and_then(|v| v.get("seed"))
                    .and_then(|v| v.as_u64())
            })
            .map(|v| v.unwrap_or(u64::MAX))
            .collect();
        config.set_seed(config.seed);
        let slots = [
            &mut config.agent.seed,
            &mut config.codec.seed,
            &mut config.denoiser.seed,
            &mut config.distill.seed,
        ];
        for (slot, &e) in slots.into_iter().zip(&explicit) {
            if e != u64::MAX {
                *slot = e;
            }
        }
        Ok(config)
    }

    /// Applies `a.b.c=value` overrides; `value` is parsed as JSON, else taken as a string.
    pub fn with_overrides(self, overrides: &[String]) -> Result<Self> {
        let mut v = serde_json::to_value(&self)?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let value = serde_json::from_str(raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            let mut slot = &mut v;
            for part in key.split('.') {
                slot = slot
                    .get_mut(part)
                    .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
            }
            *slot = value;
        }
        Ok(serde_json::from_value(v)?)
    }
}

fn unknown_keys(raw: &serde_json::Value, known: &serde_json::Value, prefix: &str) -> Result<()> {
    let (Some(raw), Some(known)) = (raw.as_object(), known.as_object()) else {
        return Ok(());
    };
    for (k, v) in raw {
        let key = format!("{prefix}{k}");
        let slot = known
            .get(k)
            .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        unknown_keys(v, slot, &format!("{key}."))?;
    }
    Ok(())
}

/// Stage outputs inside the working directory.
#[derive(Debug, Clone)]
pub struct Workdir {
    pub root: PathBuf,
}

impl Workdir {
    pub fn data(&self, name: &str) -> PathBuf {
        self.root.join("data").join(name)
    }
    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }
    pub fn agent(&self) -> PathBuf {
        self.root.join("agent")
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
    pub fn cache(&self) -> PathBuf {
        self.root.join("cache")
    }
    pub fn human_eval(&self) -> PathBuf {
        self.root.join("human_eval")
    }
    fn stamp(&self, name: &str) -> PathBuf {
        self.root.join("stamps").join(format!("{name}.json"))
    }
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub dir: Workdir,
    /// Rerun stages even when their stamps match.
    pub force: bool,
}

#[derive(Serialize)]
struct Key<'a, T: Serialize> {
    stage: &'a str,
    config: T,
    inputs: Vec<String>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, force: bool) -> Result<Self> {
        let dir = Workdir {
            root: config.workdir.clone(),
        };
        for d in [
            dir.models(),
            dir.agent(),
            dir.reports(),
            dir.cache(),
            dir.root.join("stamps"),
            dir.root.join("data"),
        ] {
            fs::create_dir_all(d)?;
        }
        Ok(Pipeline { config, dir, force })
    }

    fn key<T: Serialize>(&self, stage: &str, config: T, inputs: Vec<String>) -> String {
        config_hash(&Key {
            stage,
            config,
            inputs,
        })
    }

    fn fresh(&self, stage: &str, key: &str) -> bool {
        !self.force && fs::read_to_string(self.dir.stamp(stage)).is_ok_and(|s| s.trim() == key)
    }

    fn stamp(&self, stage: &str, key: &str) -> Result<()> {
        fs::write(self.dir.stamp(stage), key)?;
        Ok(())
    }

    fn fresh_store(&self, stage: &str, key: &str, dir: &Path) -> Result<bool> {
        if self.fresh(stage, key) {
            return Ok(true);
        }
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        Ok(false)
    }

    pub fn random_key(&self) -> String {
        self.key(
            "random",
            (
                self.config.random_frames,
                self.config.seed,
                RandomPolicyConfig::default(),
            ),
            vec![],
        )
    }

    /// Uniform random play.
    pub fn random_data(&self) -> Result<Dataset> {
        let key = self.random_key();
        let path = self.dir.data("random");
        if !self.fresh_store("random", &key, &path)? {
            let policy = RandomPolicyConfig {
                first_episode_id: RANDOM_EPISODE_BASE,
                ..Default::default()
            };
            let mut w = DatasetWriter::create(&path)?;
            for t in random_rollouts(
                self.config.random_frames,
                derive_seed(self.config.seed, 10),
                &policy,
            )? {
                w.write(&t)?;
            }
            log::info!("random data: {} frames", w.frames_written());
            self.stamp("random", &key)?;
        }
        Dataset::open(&path)
    }

    pub fn agent_key(&self) -> String {
        self.key("agent", &self.config.agent, vec![])
    }

    /// Trains the agent, recording everything it plays.
    pub fn collect(&self) -> Result<Dataset> {
        let key = self.agent_key();
        let path = self.dir.data("agent");
        if !self.fresh_store("agent", &key, &path)? {
            let mut w = DatasetWriter::create(&path)?;
            let (_, log) = train_agent(&self.config.agent, Some(&mut w), Some(&self.dir.agent()))?;
            fs::write(
                self.dir.reports().join("agent_log.json"),
                serde_json::to_vec_pretty(&log)?,
            )?;
            log::info!(
                "agent data: {} frames over {} episodes",
                log.records_written,
                log.episodes
            );
            self.stamp("agent", &key)?;
        }
        Dataset::open(&path)
    }

    pub fn policy(&self) -> Result<Policy> {
        Ok(Policy::load(
            &self.dir.agent().join("agent_final.ckpt"),
            LoadOptions::default(),
        )?
        .0)
    }

    pub fn eval_key(&self) -> String {
        self.key(
            "eval",
            (self.config.eval_frames, self.config.seed),
            vec![self.agent_key()],
        )
    }

    /// Held-out episodes played by the final policy.
    pub fn eval_data(&self) -> Result<Dataset> {
        self.collect()?;
        let key = self.eval_key();
        let path = self.dir.data("eval");
        if !self.fresh_store("eval", &key, &path)? {
            let policy = self.policy()?;
            let trajs = record_policy(
                Some(&policy),
                &self.config.agent,
                self.config.eval_frames,
                derive_seed(self.config.seed, 11),
                EVAL_EPISODE_BASE,
            )?;
            let mut w = DatasetWriter::create(&path)?;
            for t in &trajs {
                w.write(t)?;
            }
            self.stamp("eval", &key)?;
        }
        Dataset::open(&path)
    }

    fn codec_base_key(&self) -> String {
        self.key(
            "codec_base",
            (&self.config.codec, self.config.codec_train_frames),
            vec![self.agent_key(), self.random_key()],
        )
    }

    pub fn codec_key(&self) -> String {
        self.key("codec", (), vec![self.codec_base_key()])
    }

    /// Frames sampled evenly from both training stores.
    fn codec_frames(&self) -> Result<Vec<Frame>> {
        let stores = [self.collect()?, self.random_data()?];
        let total: usize = stores.iter().map(|d| d.total_frames()).sum();
        let stride = total.div_ceil(self.config.codec_train_frames.max(1)).max(1);
        let mut out = Vec::new();
        let mut k = 0usize;
        for d in &stores {
            for e in &d.entries {
                let t = d.load(e)?;
                for f in t.frames {
                    if k % stride == 0 {
                        out.push(f);
                    }
                    k += 1;
                }
            }
        }
        Ok(out)
    }

    /// Trains the codec (before decoder fine-tuning).
    pub fn train_ae(&self) -> Result<Codec> {
        let key = self.codec_base_key();
        let path = self.dir.models().join("codec_base.ckpt");
        if self.fresh("codec_base", &key) && path.exists() {
            return Codec::load(&path, LoadOptions::default());
        }
        let frames = self.codec_frames()?;
        let (codec, log) =
            train_autoencoder(&frames.iter().collect::<Vec<_>>(), &self.config.codec)?;
        codec.save(&path)?;
        fs::write(
            self.dir.reports().join("codec_log.json"),
            serde_json::to_vec(&log)?,
        )?;
        self.stamp("codec_base", &key)?;
        Ok(codec)
    }

    /// Fine-tunes the decoder; the result is the codec every later stage uses.
    pub fn finetune_decoder(&self) -> Result<Codec> {
        let key = self.codec_key();
        let path = self.dir.models().join(CODEC_FILE);
        if self.fresh("codec", &key) && path.exists() {
            return Codec::load(&path, LoadOptions::default());
        }
        let mut codec = self.train_ae()?;
        let frames = self.codec_frames()?;
        finetune_decoder(
            &mut codec,
            &frames.iter().collect::<Vec<_>>(),
            &self.config.codec,
        )?;
        codec.save(&path)?;
        self.stamp("codec", &key)?;
        Ok(codec)
    }

    pub fn codec(&self) -> Result<Codec> {
        self.finetune_decoder()
    }

    /// Encoded store, cached per codec.
    pub fn corpus(&self, codec: &Codec, source: &str) -> Result<LatentCorpus> {
        let path = self
            .dir
            .cache()
            .join(format!("corpus-{source}-{}.pt", codec.hash()));
        if path.exists() && !self.force {
            return LatentCorpus::load(&path);
        }
        let dataset = match source {
            "agent" => self.collect()?,
            "random" => self.random_data()?,
            "eval" => self.eval_data()?,
            other => return Err(Error::Config(format!("unknown data source {other:?}"))),
        };
        let corpus = LatentCorpus::encode_dataset(codec, &dataset)?;
        corpus.save(&path)?;
        Ok(corpus)
    }

    pub fn train_corpus(&self, codec: &Codec) -> Result<LatentCorpus> {
        match self.config.denoiser_source {
            DataSource::Agent => self.corpus(codec, "agent"),
            DataSource::Random => self.corpus(codec, "random"),
        }
    }

    pub fn eval_set(&self, codec: &Codec) -> Result<EvalSet> {
        let trajs = self.eval_data()?.load_all()?;
        let corpus = self.corpus(codec, "eval")?;
        Ok(EvalSet {
            trajectories: trajs,
            corpus,
        })
    }

    pub fn denoiser_key(&self) -> String {
        self.key(
            "denoiser",
            (&self.config.denoiser, self.config.denoiser_source),
            vec![self.codec_key()],
        )
    }

    pub fn train_denoiser(&self) -> Result<Denoiser> {
        let key = self.denoiser_key();
        let path = self.dir.models().join(DENOISER_FILE);
        let codec = self.codec()?;
        if self.fresh("denoiser", &key) && path.exists() {
            return Denoiser::load(&path, Some(&codec.hash()), LoadOptions::default());
        }
        let corpus = self.train_corpus(&codec)?;
        let (model, log) = train_denoiser(&corpus, &codec.hash(), &self.config.denoiser)?;
        model.save(&path)?;
        fs::write(
            self.dir.reports().join("denoiser_log.json"),
            serde_json::to_vec(&log)?,
        )?;
        self.stamp("denoiser", &key)?;
        Ok(model)
    }

    pub fn distill(&self) -> Result<Denoiser> {
        let key = self.key("distilled", &self.config.distill, vec![self.denoiser_key()]);
        let path = self.dir.models().join("distilled.ckpt");
        let codec = self.codec()?;
        if self.fresh("distilled", &key) && path.exists() {
            return Denoiser::load(&path, Some(&codec.hash()), LoadOptions::default());
        }
        let teacher = self.train_denoiser()?;
        let corpus = self.train_corpus(&codec)?;
        let (model, log) = distill(&teacher, &corpus, &self.config.distill)?;
        model.save(&path)?;
        fs::write(
            self.dir.reports().join("distill_log.json"),
            serde_json::to_vec(&log)?,
        )?;
        self.stamp("distilled", &key)?;
        Ok(model)
    }

    fn eval_seed(&self, stream: u64) -> u64 {
        derive_seed(self.config.seed, 100 + stream)
    }

    fn train_ids(&self) -> Result<std::collections::BTreeSet<u64>> {
        let mut ids = self.collect()?.episode_ids();
        ids.extend(self.random_data()?.episode_ids());
        Ok(ids)
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        let path = self.dir.reports().join(format!("{name}.json"));
        fs::write(&path, serde_json::to_vec_pretty(value)?)?;
        Ok(path)
    }

    pub fn eval_teacher_forced(&self) -> Result<TeacherForcedReport> {
        let codec = self.codec()?;
        let model = self.train_denoiser()?;
        let set = self.eval_set(&codec)?;
        let windows = set.select_windows(
            self.config.eval.teacher_forced_windows,
            1,
            EVAL_MIN_INDEX,
            self.eval_seed(1),
        )?;
        let r = eval_teacher_forced(
            &codec,
            &model,
            &set,
            &windows,
            &self.config.sampler,
            self.eval_seed(2),
            Some(&self.train_ids()?),
        )?;
        append_jsonl(
            &self.dir.reports().join("teacher_forced.jsonl"),
            &[&r.psnr, &r.pdist, &r.copy_last_psnr],
        )?;
        Ok(r)
    }

    pub fn eval_autoregressive(&self) -> Result<AutoregressiveReport> {
        let codec = self.codec()?;
        let model = self.train_denoiser()?;
        let set = self.eval_set(&codec)?;
        let steps = self.config.eval.autoregressive_steps;
        let windows = set.select_windows(
            self.config.eval.autoregressive_windows,
            steps,
            EVAL_MIN_INDEX,
            self.eval_seed(3),
        )?;
        let r = eval_autoregressive(
            &codec,
            &model,
            &set,
            &windows,
            steps,
            &self.config.sampler,
            self.eval_seed(4),
        )?;
        self.write_json("autoregressive", &r)?;
        Ok(r)
    }

    fn ablation_base(&self, steps: usize) -> DenoiserConfig {
        DenoiserConfig {
            train_steps: steps,
            ..self.config.denoiser.clone()
        }
    }

    fn model_cache(&self) -> ModelCache {
        ModelCache::new(self.dir.cache())
    }

    pub fn ablate_sampling_steps(&self, with_distilled: bool) -> Result<Vec<StepsRow>> {
        let codec = self.codec()?;
        let model = self.train_denoiser()?;
        let distilled = if with_distilled {
            Some(self.distill()?)
        } else {
            None
        };
        let set = self.eval_set(&codec)?;
        let windows = set.select_windows(
            self.config.eval.teacher_forced_windows,
            1,
            EVAL_MIN_INDEX,
            self.eval_seed(1),
        )?;
        let (table, rows) = ablations::ablate_sampling_steps(
            &codec,
            &model,
            distilled.as_ref(),
            &set,
            &windows,
            &self.config.eval.sampling_steps,
            &self.config.sampler,
            self.eval_seed(5),
        )?;
        table.write_csv(&self.dir.reports().join("sampling_steps.csv"))?;
        self.write_json("sampling_steps", &rows)?;
        Ok(rows)
    }

    pub fn ablate_context_lengths(&self) -> Result<Vec<ContextRow>> {
        let codec = self.codec()?;
        let set = self.eval_set(&codec)?;
        let windows = set.select_windows(
            self.config.eval.ablation_windows,
            1,
            EVAL_MIN_INDEX,
            self.eval_seed(6),
        )?;
        let (table, rows) = ablations::ablate_context_lengths(
            &self.config.eval.context_lens,
            &self.train_corpus(&codec)?,
            &codec,
            &self.ablation_base(self.config.eval.ablation_train_steps),
            &set,
            &windows,
            &self.config.sampler,
            self.eval_seed(7),
            &self.model_cache(),
        )?;
        table.write_csv(&self.dir.reports().join("context_lengths.csv"))?;
        self.write_json("context_lengths", &rows)?;
        Ok(rows)
    }

    pub fn ablate_noise_aug(&self) -> Result<NoiseAugResult> {
        let codec = self.codec()?;
        let set = self.eval_set(&codec)?;
        let steps = self.config.eval.autoregressive_steps;
        let windows = set.select_windows(
            self.config.eval.autoregressive_windows,
            steps,
            EVAL_MIN_INDEX,
            self.eval_seed(3),
        )?;
        let r = ablations::ablate_noise_aug(
            &self.train_corpus(&codec)?,
            &codec,
            &self.ablation_base(self.config.eval.ablation_train_steps),
            &set,
            &windows,
            steps,
            &self.config.sampler,
            self.eval_seed(8),
            &self.model_cache(),
        )?;
        self.write_json("noise_aug", &r)?;
        Ok(r)
    }

    pub fn ablate_data_policy(&self) -> Result<DataPolicyResult> {
        let codec = self.codec()?;
        let set = self.eval_set(&codec)?;
        let agent = self.corpus(&codec, "agent")?;
        let random = self.corpus(&codec, "random")?;
        let n = agent.frames().min(random.frames());
        let horizon = self.config.eval.policy_horizon;
        let windows = set.select_windows(
            self.config.eval.policy_windows,
            horizon,
            EVAL_MIN_INDEX,
            self.eval_seed(9),
        )?;
        let (table, r) = ablations::ablate_data_policy(
            &agent.take_frames(n),
            &random.take_frames(n),
            &codec,
            &self.ablation_base(self.config.eval.ablation_train_steps),
            &set,
            &windows,
            horizon,
            &self.config.sampler,
            self.eval_seed(10),
            &self.model_cache(),
        )?;
        table.write_csv(&self.dir.reports().join("data_policy.csv"))?;
        self.write_json("data_policy", &r)?;
        Ok(r)
    }

    pub fn ablate_dataset_size(&self) -> Result<Vec<SizeCurve>> {
        let codec = self.codec()?;
        let set = self.eval_set(&codec)?;
        let windows = set.select_windows(
            self.config.eval.dataset_size_windows,
            1,
            EVAL_MIN_INDEX,
            self.eval_seed(11),
        )?;
        let curves = ablations::ablate_dataset_size(
            &self.config.eval.dataset_sizes,
            &self.train_corpus(&codec)?,
            &codec,
            &self.ablation_base(self.config.eval.dataset_size_train_steps),
            &set,
            &windows,
            self.config.eval.dataset_size_eval_every,
            &self.model_cache(),
        )?;
        self.write_json("dataset_size", &curves)?;
        Ok(curves)
    }

    /// Rolls the model out from a held-out episode's ground-truth context with
    /// its recorded actions and writes a dump to `out`.
    pub fn rollout(&self, out: &Path, length: usize, seed: u64) -> Result<RolloutMeta> {
        let codec = self.codec()?;
        let model = self.train_denoiser()?;
        let set = self.eval_set(&codec)?;
        let (e, i) = set.select_windows(1, length, EVAL_MIN_INDEX, seed)?[0];
        let traj = &set.trajectories[e];
        let init = ground_truth_context(traj, i, &codec, model.context_len())?;
        let config = RolloutConfig {
            length,
            sampler: self.config.sampler,
            seed,
            context_source: ContextSource::GroundTruthInit,
            action_source: ActionSource::Recorded,
        };
        let actions = traj.actions[i - 1..].iter().copied();
        let (r, _) = rollout(&init, actions, &config, &codec, &model)?;
        let meta = RolloutMeta {
            config,
            codec_hash: codec.hash(),
            denoiser_hash: model.hash(),
            len: r.frames.len(),
            truncated: r.truncated,
        };
        write_rollout_dump(out, &meta, &r)?;
        Ok(meta)
    }

    /// Blinded pairs for human raters, written to `human_eval/`.
    pub fn human_pairs(&self) -> Result<(Manifest, ScoringKey)> {
        let codec = self.codec()?;
        let model = self.train_denoiser()?;
        let set = self.eval_set(&codec)?;
        make_human_eval_pairs(
            &codec,
            &model,
            &set,
            &self.config.eval.clip_lens,
            self.config.eval.human_pairs,
            &self.config.sampler,
            self.eval_seed(12),
            &self.dir.human_eval(),
        )
    }

    pub fn score(&self, ratings: &Path) -> Result<RatingScore> {
        let dir = self.dir.human_eval();
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
        let key: ScoringKey = serde_json::from_slice(&fs::read(dir.join(KEY_FILE))?)?;
        let score = score_ratings(&manifest, &key, &read_ratings(ratings)?)?;
        self.write_json("human_eval_score", &score)?;
        Ok(score)
    }

    /// Renders SVG plots for whichever curve reports exist.
    pub fn plot(&self) -> Result<Vec<PathBuf>> {
        let reports = self.dir.reports();
        let mut out = Vec::new();
        let read = |name: &str| fs::read(reports.join(format!("{name}.json"))).ok();
        let per_step = |label: &str, s: &[neurosim::eval::Summary]| Curve {
            label: label.into(),
            points: s
                .iter()
                .enumerate()
                .map(|(k, v)| ((k + 1) as f64, v.mean))
                .collect(),
        };
        if let Some(b) = read("autoregressive") {
            let r: AutoregressiveReport = serde_json::from_slice(&b)?;
            let p = reports.join("autoregressive_psnr.svg");
            plot_curves(
                &p,
                "Autoregressive PSNR",
                "step",
                "PSNR (dB)",
                &[per_step("model", &r.psnr)],
            )?;
            out.push(p);
            let p = reports.join("autoregressive_pdist.svg");
            plot_curves(
                &p,
                "Autoregressive pdist",
                "step",
                "pdist",
                &[per_step("model", &r.pdist)],
            )?;
            out.push(p);
        }
        if let Some(b) = read("noise_aug") {
            let r: NoiseAugResult = serde_json::from_slice(&b)?;
            let p = reports.join("noise_aug_pdist.svg");
            plot_curves(
                &p,
                "Noise augmentation",
                "step",
                "pdist",
                &[
                    per_step("aug", &r.aug.pdist),
                    per_step("no aug", &r.no_aug.pdist),
                ],
            )?;
            out.push(p);
            let p = reports.join("noise_aug_psnr.svg");
            plot_curves(
                &p,
                "Noise augmentation",
                "step",
                "PSNR (dB)",
                &[
                    per_step("aug", &r.aug.psnr),
                    per_step("no aug", &r.no_aug.psnr),
                ],
            )?;
            out.push(p);
        }
        if let Some(b) = read("dataset_size") {
            let r: Vec<SizeCurve> = serde_json::from_slice(&b)?;
            let curves: Vec<Curve> = r
                .iter()
                .map(|c| Curve {
                    label: format!("{} frames", c.frames),
                    points: c.curve.iter().map(|&(s, p)| (s as f64, p)).collect(),
                })
                .collect();
            let p = reports.join("dataset_size.svg");
            plot_curves(
                &p,
                "Held-out PSNR by dataset size",
                "training step",
                "PSNR (dB)",
                &curves,
            )?;
            out.push(p);
        }
        Ok(out)
    }
}
