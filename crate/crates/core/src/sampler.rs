//! Variance-preserving coefficients, reverse ODE/SDE steps and trajectory runs.
//!
//! Steps are Euler (ODE) and Euler-Maruyama (SDE) updates written in the
//! scaled variables `x / alpha` against `lambda = sigma / alpha`, on a grid of
//! noise levels uniform in `t` from `t_max` down to 0.

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, PerturbConfig, RedrawPolicy, SampleMode};
use crate::embedding::ConditionPair;
use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::guidance::{guided_epsilon, GuidanceInputs};
use crate::noiseshape::{attenuate, raw_noise, renormalize, shape_noise, Band};
use crate::rng::RngStream;
use crate::tep::{prepare_step_state, Lineage, StrategyEvent, TepState};
use crate::toymodel::ToyModel;

/// `(alpha, sigma)` of the cosine schedule at noise level `t`.
pub fn vp_schedule(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        return (1.0, 0.0);
    }
    if t >= 1.0 {
        return (0.0, 1.0);
    }
    let a = std::f64::consts::FRAC_PI_2 * t;
    (a.cos(), a.sin())
}

/// Noise levels `t_0 > t_1 > ... > t_T = 0`, uniform in `t`.
pub fn time_levels(steps: usize, t_max: f64) -> Vec<f64> {
    (0..=steps).map(|i| t_max * (1.0 - i as f64 / steps as f64)).collect()
}

pub fn predict_x0(x: &LatentGrid, eps: &LatentGrid, t: f64) -> Result<LatentGrid> {
    let (alpha, sigma) = vp_schedule(t);
    if alpha == 0.0 {
        return Err(Error::ZeroAlpha);
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    x.zip_map(eps, |xv, e| (xv - sigma * e) / alpha)
}

fn lambda(alpha: f64, sigma: f64) -> f64 {
    sigma / alpha
}

/// Deterministic update from level `t` to `t_next`.
pub fn ode_update(x: &LatentGrid, eps: &LatentGrid, t: f64, t_next: f64) -> Result<LatentGrid> {
    let (a, s) = vp_schedule(t);
    let (an, sn) = vp_schedule(t_next);
    if a == 0.0 {
        return Err(Error::ZeroAlpha);
    }
    let dl = lambda(an, sn) - lambda(a, s);
    x.zip_map(eps, |xv, e| an * (xv / a + dl * e))
}

/// Euler-Maruyama update with churn `eta` and injected noise `z`.
pub fn sde_update(
    x: &LatentGrid,
    eps: &LatentGrid,
    z: &LatentGrid,
    t: f64,
    t_next: f64,
    eta: f64,
) -> Result<LatentGrid> {
    let (a, s) = vp_schedule(t);
    let (an, sn) = vp_schedule(t_next);
    if a == 0.0 {
        return Err(Error::ZeroAlpha);
    }
    x.check_shape(z)?;
    let (l, ln) = (lambda(a, s), lambda(an, sn));
    let drift = (1.0 + eta * eta) * (ln - l);
    let diffusion = eta * (2.0 * l * (l - ln)).max(0.0).sqrt();
    let mut out = x.zip_map(eps, |xv, e| xv / a + drift * e)?;
    for (o, zv) in out.values_mut().iter_mut().zip(z.values()) {
        *o = an * (*o + diffusion * zv);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub mode: SampleMode,
    pub x0_reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub latent: LatentGrid,
    pub step: usize,
    pub modes: Vec<SampleMode>,
    pub lineage: Lineage,
    /// Intermediate rewards recorded by search strategies.
    pub rewards: Vec<(usize, f64)>,
    pub records: Vec<StepRecord>,
    pub tep: TepState,
    /// Denoiser evaluations spent on this trajectory.
    pub nfe: usize,
}

/// Band removal applied to the SDE noise at selected steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Attenuation {
    pub band: Band,
    pub cutoff: f64,
    pub steps: Vec<usize>,
}

#[derive(Clone)]
pub struct Sampler<'a> {
    pub model: &'a ToyModel,
    pub pair: &'a ConditionPair,
    pub config: &'a ExperimentConfig,
    perturb: PerturbConfig,
    levels: Vec<f64>,
    unit: f64,
    attenuation: Option<Attenuation>,
    recorder: Option<&'a (dyn Fn(&LatentGrid) -> Result<f64> + Sync)>,
}

impl<'a> Sampler<'a> {
    pub fn new(model: &'a ToyModel, pair: &'a ConditionPair, config: &'a ExperimentConfig) -> Self {
        Self {
            model,
            pair,
            config,
            perturb: config.tep.clone(),
            levels: time_levels(config.sampler.steps, config.sampler.t_max),
            unit: pair.embedding_scale(),
            attenuation: None,
            recorder: None,
        }
    }

    /// Same sampler with a different redraw policy for embedding perturbation.
    pub fn with_redraw(mut self, policy: RedrawPolicy) -> Self {
        self.perturb.redraw = policy;
        self
    }

    pub fn with_perturb(mut self, perturb: PerturbConfig) -> Self {
        self.perturb = perturb;
        self
    }

    pub fn perturb(&self) -> &PerturbConfig {
        &self.perturb
    }

    pub fn with_attenuation(mut self, a: Attenuation) -> Self {
        self.attenuation = Some(a);
        self
    }

    /// Score the x0 prediction at every step into the trajectory records.
    pub fn with_recorder(mut self, f: &'a (dyn Fn(&LatentGrid) -> Result<f64> + Sync)) -> Self {
        self.recorder = Some(f);
        self
    }

    pub fn steps(&self) -> usize {
        self.config.sampler.steps
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn level(&self, step: usize) -> f64 {
        self.levels[step]
    }

    fn shapes(&self) -> ((usize, usize), (usize, usize)) {
        (self.pair.uncond.shape(), self.pair.cond.shape())
    }

    fn inputs(&self) -> GuidanceInputs<'_> {
        GuidanceInputs {
            model: self.model,
            pair: self.pair,
            perturb: &self.perturb,
            unit: self.unit,
            cfg_scale: self.config.guidance.cfg_scale,
            steps: self.steps(),
        }
    }

    /// Guided epsilon at grid point `step` under the given perturbation state.
    pub fn epsilon(&self, x: &LatentGrid, step: usize, state: &TepState) -> Result<LatentGrid> {
        guided_epsilon(&self.inputs(), x, step, self.levels[step], state)
    }

    pub fn initial_latent(&self, lineage: &Lineage) -> LatentGrid {
        let mut rng = lineage.stream("init", 0);
        raw_noise(self.model.height(), self.model.width(), &mut rng)
    }

    pub fn start(&self, latent: LatentGrid, lineage: Lineage) -> Trajectory {
        let tep = prepare_step_state(
            &self.perturb,
            TepState::none(),
            0,
            StrategyEvent::TrajectoryStart,
            self.shapes(),
            &lineage,
        );
        Trajectory {
            latent,
            step: 0,
            modes: Vec::new(),
            lineage,
            rewards: Vec::new(),
            records: Vec::new(),
            tep,
            nfe: 0,
        }
    }

    /// Start at `step` from a given latent; used after re-noising.
    pub fn start_at(&self, latent: LatentGrid, step: usize, lineage: Lineage, tep: TepState) -> Trajectory {
        Trajectory { latent, step, modes: Vec::new(), lineage, rewards: Vec::new(), records: Vec::new(), tep, nfe: 0 }
    }

    /// Apply a strategy event to the trajectory's perturbation state.
    pub fn tep_event(&self, traj: &mut Trajectory, event: StrategyEvent) {
        let state = std::mem::take(&mut traj.tep);
        traj.tep = prepare_step_state(&self.perturb, state, traj.step, event, self.shapes(), &traj.lineage);
    }

    fn record(&self, traj: &mut Trajectory, mode: SampleMode, x0: &LatentGrid) -> Result<()> {
        let x0_reward = match self.recorder {
            Some(f) => Some(f(x0)?),
            None => None,
        };
        traj.records.push(StepRecord { step: traj.step, mode, x0_reward });
        Ok(())
    }

    fn check_step(&self, step: usize) -> Result<()> {
        if step >= self.steps() {
            Err(Error::StepOutOfRange { step, steps: self.steps() })
        } else {
            Ok(())
        }
    }

    pub fn ode_step(&self, mut traj: Trajectory) -> Result<Trajectory> {
        let step = traj.step;
        self.check_step(step)?;
        let (t, tn) = (self.levels[step], self.levels[step + 1]);
        let eps = self.epsilon(&traj.latent, step, &traj.tep)?;
        traj.nfe += 1;
        if self.recorder.is_some() {
            let x0 = predict_x0(&traj.latent, &eps, t)?;
            self.record(&mut traj, SampleMode::Ode, &x0)?;
        }
        traj.latent = ode_update(&traj.latent, &eps, t, tn)?;
        traj.modes.push(SampleMode::Ode);
        traj.step += 1;
        Ok(traj)
    }

    /// Noise injected at `step`: shaped per config, or band-attenuated when
    /// an attenuation covers the step.
    pub fn sde_noise(&self, step: usize, lineage: &Lineage) -> Result<LatentGrid> {
        let mut rng: RngStream = lineage.stream("sde", step);
        let (h, w) = (self.model.height(), self.model.width());
        if let Some(att) = &self.attenuation {
            if att.steps.contains(&step) {
                let z = raw_noise(h, w, &mut rng);
                return renormalize(&attenuate(&z, att.band, att.cutoff)?);
            }
        }
        shape_noise(step, self.steps(), &self.config.noiseshape, h, w, &mut rng)
    }

    pub fn sde_step(&self, mut traj: Trajectory) -> Result<Trajectory> {
        let eta = self.config.sampler.eta;
        if eta == 0.0 {
            return self.ode_step(traj);
        }
        let step = traj.step;
        self.check_step(step)?;
        self.tep_event(&mut traj, StrategyEvent::SdeStep);
        let (t, tn) = (self.levels[step], self.levels[step + 1]);
        let eps = self.epsilon(&traj.latent, step, &traj.tep)?;
        traj.nfe += 1;
        if self.recorder.is_some() {
            let x0 = predict_x0(&traj.latent, &eps, t)?;
            self.record(&mut traj, SampleMode::Sde, &x0)?;
        }
        let z = self.sde_noise(step, &traj.lineage)?;
        traj.latent = sde_update(&traj.latent, &eps, &z, t, tn, eta)?;
        traj.modes.push(SampleMode::Sde);
        traj.step += 1;
        Ok(traj)
    }

    pub fn step(&self, traj: Trajectory, mode: SampleMode) -> Result<Trajectory> {
        match mode {
            SampleMode::Ode => self.ode_step(traj),
            SampleMode::Sde => self.sde_step(traj),
        }
    }

    /// Run steps per `plan` until `until` (exclusive).
    pub fn advance(&self, mut traj: Trajectory, plan: &[SampleMode], until: usize) -> Result<Trajectory> {
        if plan.len() != self.steps() {
            return Err(Error::Invalid(format!("mode plan has {} entries, expected {}", plan.len(), self.steps())));
        }
        while traj.step < until.min(self.steps()) {
            let mode = plan[traj.step];
            traj = self.step(traj, mode)?;
            if !traj.latent.is_finite() {
                return Err(Error::Invalid(format!("latent became non-finite at step {}", traj.step)));
            }
        }
        Ok(traj)
    }

    /// Full trajectory from the lineage's initial noise.
    pub fn run_trajectory(&self, plan: &[SampleMode], lineage: Lineage) -> Result<Trajectory> {
        let init = self.initial_latent(&lineage);
        let traj = self.start(init, lineage);
        self.advance(traj, plan, self.steps())
    }

    /// x0 prediction at the trajectory's current step, unperturbed guidance.
    pub fn lookahead_x0(&self, traj: &Trajectory) -> Result<(LatentGrid, usize)> {
        if traj.step >= self.steps() {
            return Ok((traj.latent.clone(), 0));
        }
        let eps = self.epsilon(&traj.latent, traj.step, &TepState::none())?;
        Ok((predict_x0(&traj.latent, &eps, self.levels[traj.step])?, 1))
    }

    /// Re-noise from grid point `from_step` back to the noisier `to_step`.
    pub fn forward_noise(
        &self,
        x: &LatentGrid,
        from_step: usize,
        to_step: usize,
        rng: &mut RngStream,
    ) -> Result<LatentGrid> {
        if to_step > from_step || from_step > self.steps() {
            return Err(Error::StepOrder { from: from_step, to: to_step });
        }
        forward_noise(x, self.levels[from_step], self.levels[to_step], rng)
    }
}

/// `x' = (a_to / a_from) x + sqrt(s_to^2 - (a_to / a_from)^2 s_from^2) z`.
pub fn forward_noise(x: &LatentGrid, t_from: f64, t_to: f64, rng: &mut RngStream) -> Result<LatentGrid> {
    if t_to == t_from {
        return Ok(x.clone());
    }
    if t_to < t_from {
        return Err(Error::Invalid(format!("re-noising must move to a noisier level ({t_from} -> {t_to})")));
    }
    let (af, sf) = vp_schedule(t_from);
    let (at, st) = vp_schedule(t_to);
    let ratio = at / af;
    let disc = st * st - ratio * ratio * sf * sf;
    assert!(disc > -1e-12, "negative re-noise variance {disc}");
    let coef = disc.max(0.0).sqrt();
    Ok(x.map(|v| ratio * v + coef * rng.normal()))
}

pub fn uniform_plan(mode: SampleMode, steps: usize) -> Vec<SampleMode> {
    vec![mode; steps]
}

/// SDE before `switch`, ODE from `switch` on.
pub fn switch_plan(switch: usize, steps: usize) -> Vec<SampleMode> {
    (0..steps).map(|i| if i < switch { SampleMode::Sde } else { SampleMode::Ode }).collect()
}
