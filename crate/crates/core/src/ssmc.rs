//! Substochastic Monte Carlo.
//!
//! Each row of I − H Δt is read as the transition law of a walker: hop to a
//! neighbouring weight, die, or stay, with an extra clone when the diagonal
//! entry exceeds one. The diagonal is offset by an adaptive threshold E_T so
//! the population hovers near its target size while its shape follows the
//! instantaneous ground state.
//!
//! Walkers are stored either as Hamming weights (the symmetric reduction) or as
//! explicit bit strings; both go through the same [`WalkerPosition`] interface.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::HammingDistribution;
use crate::model::{AnnealPoint, ProblemInstance, Schedule};
use crate::seed::rng_from_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SsmcError {
    #[error("{which} = {value} is outside [0, 1]; reduce dt")]
    NotSubstochastic { which: &'static str, value: f64 },
    #[error("p_up + p_down + p_death = {0} exceeds 1; reduce dt")]
    RowSumExceedsOne(f64),
    #[error("population is empty")]
    EmptyPopulation,
    #[error("population went extinct at step {0}")]
    Extinct(usize),
    #[error("walker count must be at least 1")]
    NoWalkers,
    #[error("dt = {0} must be positive and finite")]
    InvalidDt(f64),
    #[error("threshold became non-finite")]
    NonFiniteThreshold,
    #[error("weight {w} outside [0, {n}]")]
    WeightOutOfRange { w: usize, n: usize },
    #[error("histogram covers n = {got}, distribution covers n = {expected}")]
    SizeMismatch { got: usize, expected: usize },
}

pub const DEFAULT_FEEDBACK_GAIN: f64 = 0.1;
/// Bound on dt·|V − E_T| and on the total hop probability used by [`default_dt`].
pub const DT_SAFETY: f64 = 0.5;
const DT_SCAN_POINTS: usize = 101;
/// Half-width of the initial weight window, in binomial standard deviations.
const INIT_WINDOW_SIGMAS: f64 = 5.0;

/// One-step branch probabilities for a walker at a given weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepProbabilities {
    pub up: f64,
    pub down: f64,
    pub death: f64,
    pub spawn: f64,
    pub stay: f64,
}

/// Row of I − HΔt at weight `w`, split into walker branches.
pub fn substochastic_probabilities(
    w: usize,
    s: AnnealPoint,
    instance: &ProblemInstance,
    threshold: f64,
    dt: f64,
) -> Result<StepProbabilities, SsmcError> {
    let n = instance.n();
    if w > n {
        return Err(SsmcError::WeightOutOfRange { w, n });
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(SsmcError::InvalidDt(dt));
    }
    if !threshold.is_finite() {
        return Err(SsmcError::NonFiniteThreshold);
    }
    let c = instance.hopping_scale(s.value());
    let up = dt * c * (n - w) as f64;
    let down = dt * c * w as f64;
    let offset = instance.potential(w, s.value()) - threshold;
    let death = dt * offset.max(0.0);
    let spawn = dt * (-offset).max(0.0);
    for (which, value) in [
        ("p_up", up),
        ("p_down", down),
        ("p_death", death),
        ("p_spawn", spawn),
    ] {
        if !(0.0..=1.0).contains(&value) {
            return Err(SsmcError::NotSubstochastic { which, value });
        }
    }
    let moved = up + down + death;
    if moved > 1.0 {
        return Err(SsmcError::RowSumExceedsOne(moved));
    }
    Ok(StepProbabilities {
        up,
        down,
        death,
        spawn,
        stay: 1.0 - moved,
    })
}

/// A walker's location on the hypercube.
pub trait WalkerPosition: Clone {
    fn weight(&self) -> usize;
    /// Flips a uniformly chosen zero bit.
    fn step_up(&mut self, rng: &mut ChaCha8Rng);
    /// Flips a uniformly chosen one bit.
    fn step_down(&mut self, rng: &mut ChaCha8Rng);
    /// Uniformly random bit string of length `n`.
    fn random(n: usize, rng: &mut ChaCha8Rng) -> Self;
}

fn random_words(n: usize, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let mut words: Vec<u64> = (0..n.div_ceil(64)).map(|_| rng.gen()).collect();
    if !n.is_multiple_of(64) {
        if let Some(last) = words.last_mut() {
            *last &= (1u64 << (n % 64)) - 1;
        }
    }
    words
}

/// Symmetric mode: only the Hamming weight is kept.
impl WalkerPosition for u32 {
    #[inline]
    fn weight(&self) -> usize {
        *self as usize
    }

    #[inline]
    fn step_up(&mut self, _: &mut ChaCha8Rng) {
        *self += 1;
    }

    #[inline]
    fn step_down(&mut self, _: &mut ChaCha8Rng) {
        *self -= 1;
    }

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Self {
        random_words(n, rng).iter().map(|x| x.count_ones()).sum()
    }
}

/// Generic mode: an explicit n-bit string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitString {
    n: usize,
    words: Vec<u64>,
    ones: usize,
}

impl BitString {
    pub fn zeros(n: usize) -> Self {
        BitString {
            n,
            words: vec![0; n.div_ceil(64)],
            ones: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn flip(&mut self, i: usize) {
        assert!(i < self.n, "bit {i} out of range for length {}", self.n);
        self.words[i / 64] ^= 1 << (i % 64);
        if self.get(i) {
            self.ones += 1;
        } else {
            self.ones -= 1;
        }
    }

    /// Flips the `k`-th bit (in index order) whose value is `value`.
    fn flip_kth(&mut self, value: bool, k: usize) {
        let i = (0..self.n)
            .filter(|&i| self.get(i) == value)
            .nth(k)
            .expect("k below the count of matching bits");
        self.flip(i);
    }
}

impl WalkerPosition for BitString {
    fn weight(&self) -> usize {
        self.ones
    }

    fn step_up(&mut self, rng: &mut ChaCha8Rng) {
        let k = rng.gen_range(0..self.n - self.ones);
        self.flip_kth(false, k);
    }

    fn step_down(&mut self, rng: &mut ChaCha8Rng) {
        let k = rng.gen_range(0..self.ones);
        self.flip_kth(true, k);
    }

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let words = random_words(n, rng);
        let ones = words.iter().map(|x| x.count_ones() as usize).sum();
        BitString { n, words, ones }
    }
}

/// Histogram over weights plus the controller state at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSnapshot {
    pub step: usize,
    pub s: f64,
    pub histogram: Vec<u64>,
    pub size: usize,
    pub threshold: f64,
}

impl PopulationSnapshot {
    pub fn n(&self) -> usize {
        self.histogram.len() - 1
    }
}

/// Per-weight cumulative branch thresholds for one value of s.
struct StepTable {
    potential: Vec<f64>,
    up: Vec<f64>,
    up_down: Vec<f64>,
    move_or_die: Vec<f64>,
    spawn: Vec<f64>,
    saturated: Vec<bool>,
}

impl StepTable {
    fn new(n: usize) -> Self {
        StepTable {
            potential: vec![0.0; n + 1],
            up: vec![0.0; n + 1],
            up_down: vec![0.0; n + 1],
            move_or_die: vec![0.0; n + 1],
            spawn: vec![0.0; n + 1],
            saturated: vec![false; n + 1],
        }
    }

    fn fill_potential(&mut self, instance: &ProblemInstance, s: f64) {
        instance.fill_potential(s, &mut self.potential);
    }

    /// Fills the branch table. Death saturates at 1 − hop mass and spawn at
    /// 1; `saturated[w]` marks weights where either clamp was active.
    fn fill_branches(&mut self, c: f64, threshold: f64, dt: f64) {
        let n = self.potential.len() - 1;
        for w in 0..=n {
            let up = dt * c * (n - w) as f64;
            let down = dt * c * w as f64;
            let offset = self.potential[w] - threshold;
            let hop = up + down;
            let raw_death = dt * offset.max(0.0);
            let raw_spawn = dt * (-offset).max(0.0);
            let death = raw_death.min(1.0 - hop);
            let spawn = raw_spawn.min(1.0);
            self.saturated[w] = death < raw_death || spawn < raw_spawn;
            self.up[w] = up;
            self.up_down[w] = hop;
            self.move_or_die[w] = hop + death;
            self.spawn[w] = spawn;
        }
    }
}

/// The walker multiset with its controller state.
#[derive(Debug, Clone)]
pub struct WalkerPopulation<P: WalkerPosition = u32> {
    walkers: Vec<P>,
    threshold: f64,
    dt: f64,
    target_size: usize,
    feedback_gain: f64,
    rng: ChaCha8Rng,
    steps_taken: usize,
}

impl<P: WalkerPosition> WalkerPopulation<P> {
    /// `target_size` walkers at uniformly random bit strings; the threshold
    /// starts at the population's mean energy under V(·, s).
    pub fn random(
        instance: &ProblemInstance,
        s: AnnealPoint,
        target_size: usize,
        dt: f64,
        seed: u64,
    ) -> Result<Self, SsmcError> {
        if target_size == 0 {
            return Err(SsmcError::NoWalkers);
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(SsmcError::InvalidDt(dt));
        }
        let mut rng = rng_from_seed(seed);
        let n = instance.n();
        let walkers: Vec<P> = (0..target_size).map(|_| P::random(n, &mut rng)).collect();
        let mut pop = WalkerPopulation {
            walkers,
            threshold: 0.0,
            dt,
            target_size,
            feedback_gain: DEFAULT_FEEDBACK_GAIN,
            rng,
            steps_taken: 0,
        };
        pop.threshold = pop.mean_energy(instance, s)?;
        Ok(pop)
    }

    /// Population with explicit walkers and threshold.
    pub fn from_walkers(
        walkers: Vec<P>,
        threshold: f64,
        target_size: usize,
        dt: f64,
        seed: u64,
    ) -> Result<Self, SsmcError> {
        if walkers.is_empty() {
            return Err(SsmcError::EmptyPopulation);
        }
        if target_size == 0 {
            return Err(SsmcError::NoWalkers);
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(SsmcError::InvalidDt(dt));
        }
        if !threshold.is_finite() {
            return Err(SsmcError::NonFiniteThreshold);
        }
        Ok(WalkerPopulation {
            walkers,
            threshold,
            dt,
            target_size,
            feedback_gain: DEFAULT_FEEDBACK_GAIN,
            rng: rng_from_seed(seed),
            steps_taken: 0,
        })
    }

    pub fn with_feedback_gain(mut self, eta: f64) -> Self {
        self.feedback_gain = eta;
        self
    }

    pub fn walkers(&self) -> &[P] {
        &self.walkers
    }

    pub fn size(&self) -> usize {
        self.walkers.len()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn set_threshold(&mut self, threshold: f64) {
        self.threshold = threshold;
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn target_size(&self) -> usize {
        self.target_size
    }

    pub fn histogram(&self, n: usize) -> Vec<u64> {
        let mut h = vec![0u64; n + 1];
        for p in &self.walkers {
            h[p.weight()] += 1;
        }
        h
    }

    pub fn snapshot(&self, n: usize, step: usize, s: f64) -> PopulationSnapshot {
        PopulationSnapshot {
            step,
            s,
            histogram: self.histogram(n),
            size: self.size(),
            threshold: self.threshold,
        }
    }

    fn mean_energy(&self, instance: &ProblemInstance, s: AnnealPoint) -> Result<f64, SsmcError> {
        if self.walkers.is_empty() {
            return Err(SsmcError::EmptyPopulation);
        }
        let total: f64 = self
            .walkers
            .iter()
            .map(|p| instance.potential(p.weight(), s.value()))
            .sum();
        Ok(total / self.walkers.len() as f64)
    }

    /// E_T = ⟨V⟩ + (η/dt) ln(target / size). Stores and returns the value.
    pub fn update_threshold(
        &mut self,
        instance: &ProblemInstance,
        s: AnnealPoint,
    ) -> Result<f64, SsmcError> {
        let mean = self.mean_energy(instance, s)?;
        let e = controller(
            mean,
            self.size(),
            self.target_size,
            self.feedback_gain,
            self.dt,
        );
        if !e.is_finite() {
            return Err(SsmcError::NonFiniteThreshold);
        }
        self.threshold = e;
        Ok(e)
    }

    /// One checked step followed by a threshold update. Errors if any branch
    /// probability at an occupied weight leaves [0, 1], or if every walker dies.
    pub fn step(&mut self, instance: &ProblemInstance, s: AnnealPoint) -> Result<(), SsmcError> {
        let occupied = self.histogram(instance.n());
        for (w, _) in occupied.iter().enumerate().filter(|(_, &c)| c > 0) {
            substochastic_probabilities(w, s, instance, self.threshold, self.dt)?;
        }
        let mut table = StepTable::new(instance.n());
        table.fill_potential(instance, s.value());
        table.fill_branches(instance.hopping_scale(s.value()), self.threshold, self.dt);
        self.advance(&table);
        if self.walkers.is_empty() {
            return Err(SsmcError::Extinct(self.steps_taken));
        }
        self.update_threshold(instance, s)?;
        Ok(())
    }

    /// Moves every walker in index order. Returns (mean potential of the new
    /// population, number of walkers that sat on a saturated weight).
    fn advance(&mut self, table: &StepTable) -> (f64, u64) {
        self.steps_taken += 1;
        let mut next = Vec::with_capacity(self.walkers.len() + self.walkers.len() / 8 + 1);
        let mut energy = 0.0;
        let mut saturated = 0u64;
        for mut p in std::mem::take(&mut self.walkers) {
            let w = p.weight();
            if table.saturated[w] {
                saturated += 1;
            }
            let spawn = table.spawn[w];
            if spawn > 0.0 && self.rng.gen::<f64>() < spawn {
                energy += table.potential[w];
                next.push(p.clone());
            }
            let u: f64 = self.rng.gen();
            if u < table.up[w] {
                p.step_up(&mut self.rng);
            } else if u < table.up_down[w] {
                p.step_down(&mut self.rng);
            } else if u < table.move_or_die[w] {
                continue;
            }
            energy += table.potential[p.weight()];
            next.push(p);
        }
        self.walkers = next;
        let mean = if self.walkers.is_empty() {
            f64::NAN
        } else {
            energy / self.walkers.len() as f64
        };
        (mean, saturated)
    }
}

/// Symmetric mode with exchangeable walkers stored as counts per weight.
/// Each step draws, per occupied weight, how many walkers spawn, hop up, hop
/// down, die and stay; the induced law on histograms is the same as moving
/// the walkers one by one, at a cost independent of the population size.
#[derive(Debug, Clone)]
pub struct CountPopulation {
    counts: Vec<u64>,
    size: u64,
    threshold: f64,
    dt: f64,
    target_size: usize,
    feedback_gain: f64,
    rng: ChaCha8Rng,
}

fn binomial(rng: &mut ChaCha8Rng, trials: u64, p: f64) -> u64 {
    if trials == 0 || p <= 0.0 {
        0
    } else if p >= 1.0 {
        trials
    } else {
        Binomial::new(trials, p)
            .expect("probability checked to lie in (0, 1)")
            .sample(rng)
    }
}

impl CountPopulation {
    /// Same initial law and random stream as [`WalkerPopulation::random`].
    pub fn random(
        instance: &ProblemInstance,
        s: AnnealPoint,
        target_size: usize,
        dt: f64,
        seed: u64,
    ) -> Result<Self, SsmcError> {
        let walkers = WalkerPopulation::<u32>::random(instance, s, target_size, dt, seed)?;
        let counts = walkers.histogram(instance.n());
        Ok(CountPopulation {
            counts,
            size: target_size as u64,
            threshold: walkers.threshold,
            dt,
            target_size,
            feedback_gain: walkers.feedback_gain,
            rng: walkers.rng,
        })
    }

    pub fn with_feedback_gain(mut self, eta: f64) -> Self {
        self.feedback_gain = eta;
        self
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

/// Operations shared by both symmetric-mode representations.
trait Population {
    fn advance(&mut self, table: &StepTable) -> (f64, u64);
    fn len(&self) -> usize;
    fn weights_histogram(&self, n: usize) -> Vec<u64>;
    fn add_to(&self, acc: &mut [u64]);
    fn controller_state(&mut self) -> (&mut f64, usize, f64, f64);
}

impl<P: WalkerPosition> Population for WalkerPopulation<P> {
    fn advance(&mut self, table: &StepTable) -> (f64, u64) {
        WalkerPopulation::advance(self, table)
    }

    fn len(&self) -> usize {
        self.walkers.len()
    }

    fn weights_histogram(&self, n: usize) -> Vec<u64> {
        self.histogram(n)
    }

    fn add_to(&self, acc: &mut [u64]) {
        for p in &self.walkers {
            acc[p.weight()] += 1;
        }
    }

    fn controller_state(&mut self) -> (&mut f64, usize, f64, f64) {
        (
            &mut self.threshold,
            self.target_size,
            self.feedback_gain,
            self.dt,
        )
    }
}

impl Population for CountPopulation {
    fn advance(&mut self, table: &StepTable) -> (f64, u64) {
        let n = self.counts.len() - 1;
        let mut next = vec![0u64; n + 1];
        let mut saturated = 0;
        for w in 0..=n {
            let c = self.counts[w];
            if c == 0 {
                continue;
            }
            if table.saturated[w] {
                saturated += c;
            }
            let rng = &mut self.rng;
            next[w] += binomial(rng, c, table.spawn[w]);
            let up = binomial(rng, c, table.up[w]);
            let mut rest = c - up;
            let p_down = table.up_down[w] - table.up[w];
            let down = binomial(rng, rest, (p_down / (1.0 - table.up[w])).min(1.0));
            rest -= down;
            let p_death = table.move_or_die[w] - table.up_down[w];
            let death = binomial(rng, rest, (p_death / (1.0 - table.up_down[w])).min(1.0));
            rest -= death;
            next[w] += rest;
            if up > 0 {
                next[w + 1] += up;
            }
            if down > 0 {
                next[w - 1] += down;
            }
        }
        self.counts = next;
        self.size = self.counts.iter().sum();
        if self.size == 0 {
            return (f64::NAN, saturated);
        }
        let energy: f64 = self
            .counts
            .iter()
            .zip(&table.potential)
            .map(|(&c, v)| c as f64 * v)
            .sum();
        (energy / self.size as f64, saturated)
    }

    fn len(&self) -> usize {
        self.size as usize
    }

    fn weights_histogram(&self, _n: usize) -> Vec<u64> {
        self.counts.clone()
    }

    fn add_to(&self, acc: &mut [u64]) {
        for (a, c) in acc.iter_mut().zip(&self.counts) {
            *a += c;
        }
    }

    fn controller_state(&mut self) -> (&mut f64, usize, f64, f64) {
        (
            &mut self.threshold,
            self.target_size,
            self.feedback_gain,
            self.dt,
        )
    }
}

/// Applies the controller after a step; `None` on extinction.
fn after_step<Pop: Population>(pop: &mut Pop, mean: f64) -> Result<Option<()>, SsmcError> {
    let size = pop.len();
    if size == 0 {
        return Ok(None);
    }
    let (threshold, target, eta, dt) = pop.controller_state();
    *threshold = controller(mean, size, target, eta, dt);
    if !threshold.is_finite() {
        return Err(SsmcError::NonFiniteThreshold);
    }
    Ok(Some(()))
}

/// The threshold controller.
pub fn controller(mean_energy: f64, size: usize, target: usize, eta: f64, dt: f64) -> f64 {
    mean_energy + eta / dt * (target as f64 / size as f64).ln()
}

/// Outcome of one anneal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub n: usize,
    pub problem: String,
    pub walkers: usize,
    pub timesteps: usize,
    pub dt: f64,
    pub seed: u64,
    #[serde(default)]
    pub mode: WalkerMode,
    pub success: bool,
    pub extinct: bool,
    /// Step at which the last walker died.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extinct_step: Option<usize>,
    pub target_site: usize,
    /// Walker-steps taken at weights where the death or spawn probability
    /// had to be clamped to keep the step substochastic.
    pub saturated_steps: u64,
    pub final_histogram: Vec<u64>,
    pub snapshots: Vec<PopulationSnapshot>,
}

/// How symmetric-mode walkers are stored and stepped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkerMode {
    /// One weight per walker, moved in index order.
    Walkers,
    /// Counts per weight, moved with binomial draws.
    #[default]
    Counts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealOptions {
    pub walkers: usize,
    pub seed: u64,
    /// Record a snapshot every this many steps (0 = none). Step 0 is included.
    pub snapshot_stride: usize,
    pub feedback_gain: f64,
    pub mode: WalkerMode,
}

impl AnnealOptions {
    pub fn new(walkers: usize, seed: u64) -> Self {
        AnnealOptions {
            walkers,
            seed,
            snapshot_stride: 0,
            feedback_gain: DEFAULT_FEEDBACK_GAIN,
            mode: WalkerMode::default(),
        }
    }

    pub fn with_snapshot_stride(mut self, stride: usize) -> Self {
        self.snapshot_stride = stride;
        self
    }

    pub fn with_mode(mut self, mode: WalkerMode) -> Self {
        self.mode = mode;
        self
    }
}

fn check_hop_mass(
    instance: &ProblemInstance,
    dt: f64,
    s_values: impl Iterator<Item = f64>,
) -> Result<(), SsmcError> {
    let n = instance.n() as f64;
    for s in s_values {
        let hop = dt * instance.hopping_scale(s) * n;
        if hop > 1.0 {
            return Err(SsmcError::NotSubstochastic {
                which: "p_up + p_down",
                value: hop,
            });
        }
    }
    Ok(())
}

/// Anneals s from 0 to 1 along `schedule`. Step t (1-based) evolves under
/// H(s_t); success means some walker sits on the target site after step T.
/// Extinction ends the trial early as a failure.
pub fn run_anneal(
    instance: &ProblemInstance,
    schedule: &Schedule,
    opts: &AnnealOptions,
) -> Result<TrialRecord, SsmcError> {
    match opts.mode {
        WalkerMode::Walkers => run_anneal_generic::<u32>(instance, schedule, opts),
        WalkerMode::Counts => {
            check_hop_mass(
                instance,
                schedule.dt(),
                (0..=schedule.total_steps()).map(|t| schedule.s_at(t)),
            )?;
            let pop = CountPopulation::random(
                instance,
                AnnealPoint::START,
                opts.walkers,
                schedule.dt(),
                opts.seed,
            )?
            .with_feedback_gain(opts.feedback_gain);
            anneal_loop(instance, schedule, opts, pop)
        }
    }
}

/// [`run_anneal`] with one stored position per walker, of any position type.
pub fn run_anneal_generic<P: WalkerPosition>(
    instance: &ProblemInstance,
    schedule: &Schedule,
    opts: &AnnealOptions,
) -> Result<TrialRecord, SsmcError> {
    check_hop_mass(
        instance,
        schedule.dt(),
        (0..=schedule.total_steps()).map(|t| schedule.s_at(t)),
    )?;
    let pop = WalkerPopulation::<P>::random(
        instance,
        AnnealPoint::START,
        opts.walkers,
        schedule.dt(),
        opts.seed,
    )?
    .with_feedback_gain(opts.feedback_gain);
    anneal_loop(instance, schedule, opts, pop)
}

fn anneal_loop<Pop: Population>(
    instance: &ProblemInstance,
    schedule: &Schedule,
    opts: &AnnealOptions,
    mut pop: Pop,
) -> Result<TrialRecord, SsmcError> {
    let n = instance.n();
    let dt = schedule.dt();
    let total = schedule.total_steps();
    let stride = opts.snapshot_stride;
    let snapshot = |pop: &mut Pop, step: usize, s: f64| {
        let histogram = pop.weights_histogram(n);
        let size = pop.len();
        PopulationSnapshot {
            step,
            s,
            histogram,
            size,
            threshold: *pop.controller_state().0,
        }
    };
    let mut snapshots = Vec::new();
    if stride > 0 {
        snapshots.push(snapshot(&mut pop, 0, schedule.s_at(0)));
    }
    let mut table = StepTable::new(n);
    let mut saturated_steps = 0;
    let mut extinct_step = None;
    for t in 1..=total {
        let s = schedule.s_at(t);
        table.fill_potential(instance, s);
        let threshold = *pop.controller_state().0;
        table.fill_branches(instance.hopping_scale(s), threshold, dt);
        let (mean, sat) = pop.advance(&table);
        saturated_steps += sat;
        if after_step(&mut pop, mean)?.is_none() {
            extinct_step = Some(t);
            break;
        }
        if stride > 0 && t % stride == 0 {
            snapshots.push(snapshot(&mut pop, t, s));
        }
    }
    let target_site = instance.target_site();
    let final_histogram = pop.weights_histogram(n);
    Ok(TrialRecord {
        n,
        problem: instance.kind().as_str().to_string(),
        walkers: opts.walkers,
        timesteps: total,
        dt,
        seed: opts.seed,
        mode: opts.mode,
        success: extinct_step.is_none() && final_histogram[target_site] > 0,
        extinct: extinct_step.is_some(),
        extinct_step,
        target_site,
        saturated_steps,
        final_histogram,
        snapshots,
    })
}

/// Result of holding s fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedRun {
    pub s: f64,
    pub dt: f64,
    pub steps: usize,
    pub burn_in: usize,
    /// Walker counts summed over every step after burn-in.
    pub accumulated_histogram: Vec<u64>,
    /// Population size after each step.
    pub sizes: Vec<usize>,
    pub final_snapshot: PopulationSnapshot,
}

/// Runs `steps` steps at constant `s`, accumulating the weight histogram
/// over the steps after `burn_in`.
pub fn run_fixed(
    instance: &ProblemInstance,
    s: AnnealPoint,
    dt: f64,
    steps: usize,
    burn_in: usize,
    opts: &AnnealOptions,
) -> Result<FixedRun, SsmcError> {
    check_hop_mass(instance, dt, std::iter::once(s.value()))?;
    match opts.mode {
        WalkerMode::Walkers => {
            let pop = WalkerPopulation::<u32>::random(instance, s, opts.walkers, dt, opts.seed)?
                .with_feedback_gain(opts.feedback_gain);
            fixed_loop(instance, s, dt, steps, burn_in, pop)
        }
        WalkerMode::Counts => {
            let pop = CountPopulation::random(instance, s, opts.walkers, dt, opts.seed)?
                .with_feedback_gain(opts.feedback_gain);
            fixed_loop(instance, s, dt, steps, burn_in, pop)
        }
    }
}

fn fixed_loop<Pop: Population>(
    instance: &ProblemInstance,
    s: AnnealPoint,
    dt: f64,
    steps: usize,
    burn_in: usize,
    mut pop: Pop,
) -> Result<FixedRun, SsmcError> {
    let n = instance.n();
    let mut table = StepTable::new(n);
    table.fill_potential(instance, s.value());
    let c = instance.hopping_scale(s.value());
    let mut accumulated = vec![0u64; n + 1];
    let mut sizes = Vec::with_capacity(steps);
    for t in 1..=steps {
        let threshold = *pop.controller_state().0;
        table.fill_branches(c, threshold, dt);
        let (mean, _) = pop.advance(&table);
        if after_step(&mut pop, mean)?.is_none() {
            return Err(SsmcError::Extinct(t));
        }
        sizes.push(pop.len());
        if t > burn_in {
            pop.add_to(&mut accumulated);
        }
    }
    let final_snapshot = PopulationSnapshot {
        step: steps,
        s: s.value(),
        histogram: pop.weights_histogram(n),
        size: pop.len(),
        threshold: *pop.controller_state().0,
    };
    Ok(FixedRun {
        s: s.value(),
        dt,
        steps,
        burn_in,
        accumulated_histogram: accumulated,
        sizes,
        final_snapshot,
    })
}

/// Total-variation distance between two weight histograms (normalised here).
pub fn tv_distance_counts(a: &[u64], b: &[f64]) -> Result<f64, SsmcError> {
    if a.len() != b.len() {
        return Err(SsmcError::SizeMismatch {
            got: a.len().saturating_sub(1),
            expected: b.len().saturating_sub(1),
        });
    }
    let total: u64 = a.iter().sum();
    if total == 0 {
        return Err(SsmcError::EmptyPopulation);
    }
    let bt: f64 = b.iter().sum();
    let d: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 / total as f64 - y / bt).abs())
        .sum();
    Ok((0.5 * d).clamp(0.0, 1.0))
}

/// ½ Σ_w |empirical(w) − D(w)|.
pub fn tv_distance(a: &PopulationSnapshot, b: &HammingDistribution) -> Result<f64, SsmcError> {
    tv_distance_counts(&a.histogram, b.probabilities())
}

/// Weight window the walkers are expected to occupy: the initial binomial
/// bulk plus every minimum of V the anneal moves through.
fn occupied_window(instance: &ProblemInstance) -> (usize, usize) {
    let n = instance.n();
    let nf = n as f64;
    let half_width = INIT_WINDOW_SIGMAS * nf.sqrt() / 2.0;
    let (lo, hi) = match instance.double_well_params() {
        Some(p) => (
            p.left_well_position() - half_width,
            p.right_well_position().max(instance.target_site() as f64) + half_width,
        ),
        None => (0.0, nf / 2.0 + half_width),
    };
    (lo.floor().max(0.0) as usize, (hi.ceil() as usize).min(n))
}

/// Largest dt with dt·(max V − min V) ≤ 1/2 over the occupied weight window
/// and a grid of s, and with total hop probability ≤ 1/2. The spread of V
/// bounds |V − E_T| whenever E_T lies between the window's extremes.
pub fn default_dt(instance: &ProblemInstance) -> f64 {
    let (lo, hi) = occupied_window(instance);
    let n = instance.n() as f64;
    let mut spread: f64 = 0.0;
    let mut hop: f64 = 0.0;
    for i in 0..DT_SCAN_POINTS {
        let s = i as f64 / (DT_SCAN_POINTS - 1) as f64;
        let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for w in lo..=hi {
            let v = instance.potential(w, s);
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
        spread = spread.max(vmax - vmin);
        hop = hop.max(instance.hopping_scale(s) * n);
    }
    let by_potential = if spread > 0.0 {
        DT_SAFETY / spread
    } else {
        f64::INFINITY
    };
    by_potential.min(DT_SAFETY / hop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DoubleWellParams;
    use crate::potentials::SpikeParams;
    use proptest::prelude::*;
    use rand::Rng;

    fn dw(n: usize) -> ProblemInstance {
        ProblemInstance::double_well(DoubleWellParams::default_for(n).unwrap())
    }

    #[test]
    fn zero_offset_has_no_birth_or_death() {
        let inst = dw(20);
        let s = AnnealPoint::new(0.3).unwrap();
        let v = inst.potential(7, 0.3);
        let p = substochastic_probabilities(7, s, &inst, v, 0.01).unwrap();
        assert_eq!(p.death, 0.0);
        assert_eq!(p.spawn, 0.0);
    }

    #[test]
    fn hop_mass_equals_dt() {
        for n in [4usize, 10, 33, 100] {
            let inst = dw(n);
            for w in 0..=n {
                let e = inst.potential(w, 0.5);
                let p = substochastic_probabilities(w, AnnealPoint::HALF, &inst, e, 0.1).unwrap();
                // n neighbours, each reached with probability dt/n.
                let oracle: f64 = (0..n).map(|_| 0.1 / n as f64).sum();
                assert!((p.up + p.down - oracle).abs() < 1e-15);
                assert!((p.up + p.down - 0.1).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn death_probability_direct() {
        let inst = dw(20);
        let v = inst.potential(10, 0.5);
        let p = substochastic_probabilities(10, AnnealPoint::HALF, &inst, v - 0.5, 0.1).unwrap();
        assert!((p.death - 0.05).abs() < 1e-15);
        assert!((p.up + p.down + p.death + p.stay - 1.0).abs() < 1e-15);
        let p = substochastic_probabilities(10, AnnealPoint::HALF, &inst, v + 0.5, 0.1).unwrap();
        assert!((p.spawn - 0.05).abs() < 1e-15);
    }

    #[test]
    fn oversized_dt_is_rejected() {
        let inst = dw(100);
        let err = substochastic_probabilities(0, AnnealPoint::START, &inst, 0.0, 0.01).unwrap_err();
        assert!(
            matches!(
                err,
                SsmcError::NotSubstochastic {
                    which: "p_death",
                    ..
                }
            ),
            "{err}"
        );
        assert!(substochastic_probabilities(50, AnnealPoint::START, &inst, 0.0, 2.0).is_err());
        assert!(substochastic_probabilities(101, AnnealPoint::START, &inst, 0.0, 0.01).is_err());
    }

    #[test]
    fn boundary_walkers_stay_in_range() {
        let inst = dw(20);
        let at_zero =
            substochastic_probabilities(0, AnnealPoint::HALF, &inst, inst.potential(0, 0.5), 0.1)
                .unwrap();
        assert_eq!(at_zero.down, 0.0);
        let at_n =
            substochastic_probabilities(20, AnnealPoint::HALF, &inst, inst.potential(20, 0.5), 0.1)
                .unwrap();
        assert_eq!(at_n.up, 0.0);
        // A flat potential lets a single walker wander without ever leaving [0, n].
        let flat = ProblemInstance::spike(SpikeParams::new(20, 0.0).unwrap());
        for start in [0u32, 20] {
            let mut pop = WalkerPopulation::from_walkers(vec![start], 0.0, 1, 0.02, 5).unwrap();
            for _ in 0..2000 {
                pop.step(&flat, AnnealPoint::START).unwrap();
                assert!(pop.walkers().iter().all(|&w| w <= 20));
            }
        }
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn controller_values() {
        assert_eq!(controller(1.25, 100, 100, 0.1, 0.1), 1.25);
        assert!((controller(1.25, 50, 100, 0.1, 0.1) - (1.25 + 2f64.ln())).abs() < 1e-15);
        assert!((controller(1.25, 200, 100, 0.1, 0.1) - (1.25 - 0.6931)).abs() < 1e-4);
    }

    #[test]
    fn update_threshold_rejects_empty() {
        let inst = dw(20);
        let mut pop = WalkerPopulation::from_walkers(vec![3u32], 0.0, 1, 0.1, 1).unwrap();
        pop.walkers.clear();
        assert_eq!(
            pop.update_threshold(&inst, AnnealPoint::HALF),
            Err(SsmcError::EmptyPopulation)
        );
    }

    #[test]
    fn flat_potential_size_is_martingale() {
        // With Ṽ = 0 no walker dies or spawns; pin the threshold to V = 0.
        let flat = ProblemInstance::spike(SpikeParams::new(20, 0.0).unwrap());
        let mut pop =
            WalkerPopulation::<u32>::random(&flat, AnnealPoint::START, 500, 0.02, 9).unwrap();
        pop.set_threshold(0.0);
        let mut table = StepTable::new(20);
        table.fill_potential(&flat, 0.0);
        table.fill_branches(flat.hopping_scale(0.0), 0.0, 0.02);
        for _ in 0..10_000 {
            pop.advance(&table);
        }
        assert_eq!(pop.size(), 500);
    }

    #[test]
    fn tv_examples() {
        let snap = PopulationSnapshot {
            step: 0,
            s: 0.0,
            histogram: vec![3, 1],
            size: 4,
            threshold: 0.0,
        };
        let half = HammingDistribution::from_weights(&[0.5, 0.5]).unwrap();
        assert!((tv_distance(&snap, &half).unwrap() - 0.25).abs() < 1e-15);
        let same = HammingDistribution::from_weights(&[3.0, 1.0]).unwrap();
        assert!(tv_distance(&snap, &same).unwrap() < 1e-15);
        let point = HammingDistribution::from_weights(&[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(
            tv_distance_counts(&[5, 0, 0], point.probabilities()).unwrap(),
            1.0
        );
        assert!(tv_distance_counts(&[1, 1], point.probabilities()).is_err());
    }

    #[test]
    fn bit_string_flips_track_weight() {
        let mut rng = rng_from_seed(3);
        let mut b = BitString::random(130, &mut rng);
        let count = |b: &BitString| (0..130).filter(|&i| b.get(i)).count();
        assert_eq!(b.weight(), count(&b));
        for _ in 0..500 {
            let w = b.weight();
            if w < 130 && rng.gen::<bool>() {
                b.step_up(&mut rng);
                assert_eq!(b.weight(), w + 1);
            } else if w > 0 {
                b.step_down(&mut rng);
                assert_eq!(b.weight(), w - 1);
            }
            assert_eq!(b.weight(), count(&b));
        }
        let z = BitString::zeros(70);
        assert_eq!(z.weight(), 0);
        assert_eq!(z.len(), 70);
    }

    #[test]
    fn random_weight_is_binomial_mean() {
        let mut rng = rng_from_seed(11);
        let m = 20_000;
        let total: u64 = (0..m)
            .map(|_| <u32 as WalkerPosition>::random(100, &mut rng) as u64)
            .sum();
        let mean = total as f64 / m as f64;
        // Binomial(100, 1/2): sd of the sample mean is 5/√m.
        assert!((mean - 50.0).abs() < 4.0 * 5.0 / (m as f64).sqrt());
    }

    #[test]
    fn anneal_is_deterministic() {
        let inst = dw(30);
        let sch = Schedule::linear(300, default_dt(&inst)).unwrap();
        let opts = AnnealOptions::new(200, 77).with_snapshot_stride(50);
        let a = run_anneal(&inst, &sch, &opts).unwrap();
        let b = run_anneal(&inst, &sch, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(a.snapshots.len(), 7);
        for snap in &a.snapshots {
            assert_eq!(snap.histogram.iter().sum::<u64>() as usize, snap.size);
        }
        let c = run_anneal(&inst, &sch, &AnnealOptions::new(200, 78)).unwrap();
        assert_ne!(a.final_histogram, c.final_histogram);
    }

    #[test]
    fn extinction_is_recorded() {
        // A lone walker with a large dt dies whenever it hops uphill.
        let inst = dw(100);
        let sch = Schedule::linear(400, 0.5).unwrap();
        let rec = (0..20)
            .map(|seed| run_anneal(&inst, &sch, &AnnealOptions::new(1, seed)).unwrap())
            .find(|r| r.extinct)
            .expect("some seed goes extinct");
        assert!(!rec.success);
        assert!(rec.extinct_step.is_some());
        assert_eq!(rec.final_histogram.iter().sum::<u64>(), 0);
    }

    #[test]
    fn checked_step_reports_extinction_step() {
        let inst = dw(100);
        let mut pop = WalkerPopulation::from_walkers(vec![50u32], 0.0, 1, 1e-5, 1).unwrap();
        pop.set_threshold(-1e6);
        let err = (0..100).find_map(|_| pop.step(&inst, AnnealPoint::HALF).err());
        assert!(matches!(err, Some(SsmcError::NotSubstochastic { .. })));
        let mut pop = WalkerPopulation::from_walkers(vec![50u32], 0.0, 1, 0.01, 1).unwrap();
        pop.set_threshold(inst.potential(50, 0.5) - 98.5);
        let err = (0..1000).find_map(|_| pop.step(&inst, AnnealPoint::HALF).err());
        assert!(
            matches!(err, Some(SsmcError::Extinct(k)) if k >= 1),
            "{err:?}"
        );
    }

    #[test]
    fn hop_bound_checked_at_run_start() {
        let inst = ProblemInstance::spike(SpikeParams::new(64, 0.4).unwrap());
        let sch = Schedule::linear(10, 0.1).unwrap();
        assert!(matches!(
            run_anneal(&inst, &sch, &AnnealOptions::new(10, 1)),
            Err(SsmcError::NotSubstochastic { .. })
        ));
    }

    #[test]
    fn default_dt_satisfies_bounds_in_window() {
        for inst in [
            dw(40),
            dw(100),
            ProblemInstance::spike(SpikeParams::new(80, 0.4).unwrap()),
        ] {
            let dt = default_dt(&inst);
            let (lo, hi) = occupied_window(&inst);
            for i in 0..=20 {
                let s = i as f64 / 20.0;
                let vals: Vec<f64> = (lo..=hi).map(|w| inst.potential(w, s)).collect();
                let e = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                for w in lo..=hi {
                    let p =
                        substochastic_probabilities(w, AnnealPoint::new(s).unwrap(), &inst, e, dt)
                            .unwrap();
                    assert!(p.death <= 0.5 + 1e-12 && p.up + p.down <= 0.5 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn generic_mode_matches_symmetric_statistics() {
        // Same process, different bookkeeping: compare mean final weight over
        // many short anneals at n = 12.
        let inst = dw(12);
        let sch = Schedule::linear(200, default_dt(&inst)).unwrap();
        let mean_weight = |generic: bool| {
            let mut sum = 0.0;
            let mut count = 0.0;
            for seed in 0..60u64 {
                let opts = AnnealOptions::new(100, seed);
                let rec = if generic {
                    run_anneal_generic::<BitString>(&inst, &sch, &opts).unwrap()
                } else {
                    run_anneal(&inst, &sch, &opts).unwrap()
                };
                for (w, c) in rec.final_histogram.iter().enumerate() {
                    sum += (w as u64 * c) as f64;
                    count += *c as f64;
                }
            }
            sum / count
        };
        let a = mean_weight(false);
        let b = mean_weight(true);
        assert!((a - b).abs() < 0.15, "{a} vs {b}");
    }

    proptest! {
        #[test]
        fn non_spawn_branches_sum_to_one(
            n in 4usize..200,
            wf in 0.0f64..=1.0,
            s in 0.0f64..=1.0,
            offset in -5.0f64..5.0,
        ) {
            let inst = dw(n);
            let w = ((n as f64) * wf) as usize;
            let e = inst.potential(w, s) - offset;
            let dt = 0.05;
            let p = substochastic_probabilities(w, AnnealPoint::new(s).unwrap(), &inst, e, dt).unwrap();
            for v in [p.up, p.down, p.death, p.spawn, p.stay] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!((p.up + p.down + p.death + p.stay - 1.0).abs() < 1e-12);
            prop_assert!(p.death == 0.0 || p.spawn == 0.0);
        }

        #[test]
        fn tv_is_a_distance(
            a in proptest::collection::vec(0u64..50, 6),
            b in proptest::collection::vec(0.0f64..1.0, 6),
        ) {
            prop_assume!(a.iter().sum::<u64>() > 0 && b.iter().sum::<f64>() > 0.0);
            let d = tv_distance_counts(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
        }
    }
}
