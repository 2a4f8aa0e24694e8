//! Experiment configuration: TOML sections with dotted-path overrides.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result, Violation};
use crate::schedule::ScheduleSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { height: 16, width: 16 }
    }
}

/// Shape and seed of the analytic target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub components: usize,
    pub detail_bases: usize,
    pub layers: usize,
    pub within_std: f64,
    /// Base patterns live on radial frequencies in (0, base_cutoff].
    pub base_cutoff: f64,
    /// Detail patterns live on radial frequencies in (detail_cutoff, 1].
    pub detail_cutoff: f64,
    pub detail_scale: f64,
    pub selector_scale: f64,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            components: 3,
            detail_bases: 8,
            layers: 8,
            within_std: 0.1,
            base_cutoff: 0.3,
            detail_cutoff: 0.5,
            detail_scale: 0.05,
            selector_scale: 0.3,
            seed: 1,
        }
    }
}

/// Synthetic prompt pair generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptSpec {
    pub embed_dim: usize,
    pub semantic_tokens: usize,
    pub padding_tokens: usize,
    pub jitter: f64,
    pub null_scale: f64,
    pub seed: u64,
}

impl Default for PromptSpec {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            semantic_tokens: 4,
            padding_tokens: 4,
            jitter: 0.5,
            null_scale: 0.3,
            seed: 101,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Ode,
    Sde,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub steps: usize,
    /// Noise level of the first grid point; the grid runs uniformly down to 0.
    pub t_max: f64,
    pub eta: f64,
    pub mode: SampleMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { steps: 64, t_max: 0.9, eta: 1.0, mode: SampleMode::Sde }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    pub cfg_scale: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { cfg_scale: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RedrawPolicy {
    OnceAtStart,
    PerSdeStep,
    PerResample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbConfig {
    /// Unconditional-branch magnitude, in embedding-std units.
    pub w1: ScheduleSpec,
    /// Conditional-branch magnitude, in embedding-std units.
    pub w2: ScheduleSpec,
    pub k: usize,
    pub shallow_scale: f64,
    pub deep_scale: f64,
    pub rho_sem: f64,
    pub rho_pad: f64,
    pub redraw: RedrawPolicy,
    /// Restricts perturbation to steps in `[start, end)`; used by sweeps.
    #[serde(skip)]
    pub window: Option<(usize, usize)>,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            w1: ScheduleSpec::linear(0.0, 0.8),
            w2: ScheduleSpec::linear(0.0, 0.15),
            k: 4,
            shallow_scale: 1.5,
            deep_scale: 0.5,
            rho_sem: 0.25,
            rho_pad: 1.0,
            redraw: RedrawPolicy::OnceAtStart,
            window: None,
        }
    }
}

impl PerturbConfig {
    pub fn zero() -> Self {
        Self { w1: ScheduleSpec::zero(), w2: ScheduleSpec::zero(), ..Self::default() }
    }

    pub fn is_zero(&self, steps: usize) -> bool {
        self.w1.is_zero(steps) && self.w2.is_zero(steps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseShapeConfig {
    pub enabled: bool,
    /// Kept fraction of the radial band per step.
    pub cutoff: ScheduleSpec,
}

impl Default for NoiseShapeConfig {
    fn default() -> Self {
        Self { enabled: true, cutoff: ScheduleSpec::linear(1.0, 0.6) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    BestOfN,
    ZeroOrder,
    Particle,
    SearchOverPaths,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::BestOfN => "best_of_n",
            Strategy::ZeroOrder => "zero_order",
            Strategy::Particle => "particle",
            Strategy::SearchOverPaths => "search_over_paths",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    GreedyTopk,
    Importance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub strategy: Strategy,
    pub n: usize,
    pub particles: usize,
    pub children: usize,
    pub block: usize,
    pub selection: Selection,
    /// Importance temperature as a fraction of the observed reward range.
    pub temperature: f64,
    pub zo_radius: f64,
    pub zo_rounds: usize,
    pub sop_rounds: usize,
    /// Re-noise depth in steps; 0 means a quarter of the step count.
    pub sop_depth: usize,
    pub sop_topk: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::BestOfN,
            n: 16,
            particles: 4,
            children: 4,
            block: 4,
            selection: Selection::GreedyTopk,
            temperature: 0.1,
            zo_radius: 0.5,
            zo_rounds: 4,
            sop_rounds: 3,
            sop_depth: 0,
            sop_topk: 4,
        }
    }
}

impl SearchConfig {
    pub fn resolved_sop_depth(&self, steps: usize) -> usize {
        if self.sop_depth == 0 {
            (steps / 4).max(1)
        } else {
            self.sop_depth
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Loglik,
    BandMatch,
    Composite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub kind: RewardKind,
    /// Weights of (per-pixel loglik, band match) in the composite.
    pub weights: [f64; 2],
    /// Target energy fraction per equal-width radial band.
    pub band_profile: Vec<f64>,
    pub projector_dim: usize,
    pub projector_seed: u64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            kind: RewardKind::Loglik,
            weights: [0.5, 0.5],
            band_profile: vec![0.85, 0.1, 0.04, 0.01],
            projector_dim: 64,
            projector_seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Radial cutoff separating the low and high bands in probes.
    pub band_cutoff: f64,
    /// Kept fraction used by band-attenuation sweeps.
    pub attenuation_cutoff: f64,
    /// CFG scale used by the diversity sweep when no list is given.
    pub diversity_cfg: Vec<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { band_cutoff: 0.4, attenuation_cutoff: 0.5, diversity_cfg: vec![1.0, 2.0, 5.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub grid: GridSpec,
    pub model: ModelSpec,
    pub prompt: PromptSpec,
    pub sampler: SamplerConfig,
    pub guidance: GuidanceConfig,
    pub tep: PerturbConfig,
    pub noiseshape: NoiseShapeConfig,
    pub search: SearchConfig,
    pub reward: RewardConfig,
    pub analysis: AnalysisConfig,
}


impl ExperimentConfig {
    /// Same config with spatial randomness only: no embedding perturbation,
    /// no noise shaping.
    pub fn spatial_baseline(&self) -> Self {
        let mut c = self.clone();
        c.tep.w1 = ScheduleSpec::zero();
        c.tep.w2 = ScheduleSpec::zero();
        c.noiseshape.enabled = false;
        c
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the resolved TOML text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(self) -> Result<Self> {
        validate_config(self)
    }
}

fn check(v: &mut Vec<Violation>, ok: bool, path: &str, msg: impl Into<String>) {
    if !ok {
        v.push(Violation::new(path, msg));
    }
}

fn schedule_values(path: &str, s: &ScheduleSpec, steps: usize, v: &mut Vec<Violation>) -> Option<Vec<f64>> {
    if steps == 0 {
        return None;
    }
    let vals = s.values(steps);
    check(v, vals.iter().all(|x| x.is_finite()), path, "schedule must be finite");
    Some(vals)
}

/// Returns the config unchanged if every invariant holds, else every violation.
pub fn validate_config(cfg: ExperimentConfig) -> Result<ExperimentConfig> {
    let mut v = Vec::new();
    let steps = cfg.sampler.steps;

    check(&mut v, cfg.grid.height >= 4 && cfg.grid.width >= 4, "grid", "grid must be at least 4x4");

    let m = &cfg.model;
    check(&mut v, m.components >= 1, "model.components", "must be at least 1");
    check(&mut v, m.detail_bases >= 1, "model.detail_bases", "must be at least 1");
    check(&mut v, m.layers >= 1, "model.layers", "must be at least 1");
    check(&mut v, m.within_std.is_finite() && m.within_std >= 0.0, "model.within_std", "must be finite and >= 0");
    check(
        &mut v,
        m.base_cutoff > 0.0 && m.base_cutoff < m.detail_cutoff && m.detail_cutoff < 1.0,
        "model.base_cutoff",
        "need 0 < base_cutoff < detail_cutoff < 1",
    );
    check(&mut v, m.detail_scale.is_finite(), "model.detail_scale", "must be finite");
    check(&mut v, m.selector_scale.is_finite(), "model.selector_scale", "must be finite");

    let p = &cfg.prompt;
    check(&mut v, p.embed_dim >= 1, "prompt.embed_dim", "must be at least 1");
    check(&mut v, p.semantic_tokens >= 1, "prompt.semantic_tokens", "need at least one semantic token");
    check(&mut v, p.padding_tokens >= 1, "prompt.padding_tokens", "need at least one token at or after eos");
    check(&mut v, p.jitter.is_finite() && p.jitter >= 0.0, "prompt.jitter", "must be finite and >= 0");
    check(&mut v, p.null_scale.is_finite(), "prompt.null_scale", "must be finite");

    let s = &cfg.sampler;
    check(&mut v, s.steps >= 1, "sampler.steps", "must be at least 1");
    check(&mut v, s.t_max > 0.0 && s.t_max < 1.0, "sampler.t_max", "must lie in (0, 1)");
    check(&mut v, (0.0..=1.0).contains(&s.eta), "sampler.eta", "must lie in [0, 1]");

    let w = cfg.guidance.cfg_scale;
    check(&mut v, w.is_finite() && w >= 0.0, "guidance.cfg_scale", "must be finite and >= 0");

    let t = &cfg.tep;
    check(&mut v, t.k <= m.layers, "tep.k", format!("k = {} exceeds layer count {}", t.k, m.layers));
    check(&mut v, t.shallow_scale > t.deep_scale, "tep.shallow_scale", "shallow_scale must exceed deep_scale");
    check(&mut v, t.deep_scale >= 0.0, "tep.deep_scale", "must be >= 0");
    check(&mut v, (0.0..=1.0).contains(&t.rho_sem), "tep.rho_sem", "must lie in [0, 1]");
    check(&mut v, (0.0..=1.0).contains(&t.rho_pad), "tep.rho_pad", "must lie in [0, 1]");
    check(&mut v, t.rho_sem <= t.rho_pad, "tep.rho_sem", "rho_sem must not exceed rho_pad");
    let w1 = schedule_values("tep.w1", &t.w1, steps, &mut v);
    let w2 = schedule_values("tep.w2", &t.w2, steps, &mut v);
    if let (Some(w1), Some(w2)) = (w1, w2) {
        check(&mut v, w1.iter().chain(&w2).all(|x| *x >= 0.0), "tep.w1", "magnitudes must be >= 0");
        // strict dominance wherever anything is perturbed
        let dominated = w1
            .iter()
            .zip(&w2)
            .all(|(a, b)| b * t.rho_pad < *a || (*a == 0.0 && *b == 0.0));
        check(&mut v, dominated, "tep.w2", "w1 must dominate w2");
    }

    let ns = &cfg.noiseshape;
    if let Some(pv) = schedule_values("noiseshape.cutoff", &ns.cutoff, steps, &mut v) {
        check(
            &mut v,
            pv.iter().all(|x| *x > 0.0 && *x <= 1.0),
            "noiseshape.cutoff",
            "cutoff must lie in (0, 1] at every step",
        );
        if ns.enabled && cfg.grid.height >= 1 && cfg.grid.width >= 1 {
            // Below the first non-DC radius the filtered noise is constant.
            let floor = crate::noiseshape::radial_frequency(cfg.grid.height, cfg.grid.width)
                .into_iter()
                .filter(|r| *r > 0.0)
                .fold(f64::INFINITY, f64::min);
            check(
                &mut v,
                pv.iter().all(|x| *x + 1e-12 >= floor),
                "noiseshape.cutoff",
                format!("cutoff keeps only the mean below {floor:.4} on this grid"),
            );
        }
    }

    let sc = &cfg.search;
    for (path, val) in [
        ("search.n", sc.n),
        ("search.particles", sc.particles),
        ("search.children", sc.children),
        ("search.block", sc.block),
        ("search.zo_rounds", sc.zo_rounds),
        ("search.sop_topk", sc.sop_topk),
    ] {
        check(&mut v, val >= 1, path, "must be at least 1");
    }
    check(&mut v, sc.temperature > 0.0 && sc.temperature.is_finite(), "search.temperature", "must be > 0");
    check(&mut v, sc.zo_radius > 0.0 && sc.zo_radius <= 1.0, "search.zo_radius", "must lie in (0, 1]");

    let r = &cfg.reward;
    check(
        &mut v,
        r.weights.iter().all(|x| *x >= 0.0) && (r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9,
        "reward.weights",
        "weights must be non-negative and sum to 1",
    );
    check(
        &mut v,
        !r.band_profile.is_empty()
            && r.band_profile.iter().all(|x| *x >= 0.0)
            && (r.band_profile.iter().sum::<f64>() - 1.0).abs() < 1e-9,
        "reward.band_profile",
        "fractions must be non-negative and sum to 1",
    );
    check(&mut v, r.projector_dim >= 1, "reward.projector_dim", "must be at least 1");
    if r.kind != crate::config::RewardKind::BandMatch {
        check(&mut v, m.within_std > 0.0, "model.within_std", "log-likelihood reward needs within_std > 0");
    }

    let a = &cfg.analysis;
    check(&mut v, a.band_cutoff > 0.0 && a.band_cutoff < 1.0, "analysis.band_cutoff", "must lie in (0, 1)");
    check(
        &mut v,
        a.attenuation_cutoff > 0.0 && a.attenuation_cutoff <= 1.0,
        "analysis.attenuation_cutoff",
        "must lie in (0, 1]",
    );

    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(v))
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn merge(base: &mut toml::Table, over: toml::Table, prefix: &str, unknown: &mut Vec<Violation>) {
    for (k, val) in over {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (base.get_mut(&k), val) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o, &path, unknown),
            (Some(slot), val) => *slot = val,
            (None, _) => unknown.push(Violation::new(path, "unknown key")),
        }
    }
}

fn set_path(root: &mut toml::Table, path: &str, value: toml::Value) -> std::result::Result<(), Violation> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Violation::new(path, "malformed path"));
    }
    let mut table = root;
    for (i, part) in parts.iter().enumerate() {
        if i + 1 == parts.len() {
            return match table.get_mut(*part) {
                Some(toml::Value::Table(_)) => Err(Violation::new(path, "cannot assign a whole section")),
                Some(slot) => {
                    *slot = value;
                    Ok(())
                }
                None => Err(Violation::new(path, "unknown key")),
            };
        }
        table = match table.get_mut(*part) {
            Some(toml::Value::Table(t)) => t,
            _ => return Err(Violation::new(path, "unknown key")),
        };
    }
    unreachable!("loop returns on the last part")
}

/// Resolve a config from optional TOML text and `path=value` overrides.
/// Later overrides win. The result is validated.
pub fn resolve_config(text: Option<&str>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut base = toml::Table::try_from(ExperimentConfig::default())
        .map_err(|e| Error::ConfigParse(e.to_string()))?;
    let mut problems = Vec::new();
    if let Some(text) = text {
        let file: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::ConfigParse(e.to_string()))?;
        merge(&mut base, file, "", &mut problems);
    }
    for ov in overrides {
        match ov.split_once('=') {
            Some((path, raw)) => {
                if let Err(e) = set_path(&mut base, path.trim(), parse_override_value(raw.trim())) {
                    problems.push(e);
                }
            }
            None => problems.push(Violation::new(ov.as_str(), "override must look like path=value")),
        }
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let cfg: ExperimentConfig = toml::Value::Table(base)
        .try_into()
        .map_err(|e: toml::de::Error| Error::ConfigParse(e.to_string()))?;
    validate_config(cfg)
}
