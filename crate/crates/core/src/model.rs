//! The two-patch host–vector net and the mapping from latent coefficients
//! and covariates to daily transition rates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covariates::{BasisDaily, BasisDay, MigrationKernelParams};
use crate::petri::{DayRates, HazardLaw, Marking, PetriNet, TransitionSpec};
use crate::{Error, Result};

pub const N_PATCHES: usize = 2;
pub const N_COEFFICIENTS: usize = 13;

/// Place kinds in per-patch order. The net lists patch 1's seven places,
/// then patch 2's.
pub const PLACE_KINDS: [&str; 7] = ["S_H", "I_H", "R_H", "S_M", "I_M", "D_H", "D_M"];

pub fn place_name(kind: &str, patch: usize) -> String {
    format!("{kind}_{}", patch + 1)
}

pub fn place_names() -> Vec<String> {
    (0..N_PATCHES)
        .flat_map(|p| PLACE_KINDS.iter().map(move |k| place_name(k, p)))
        .collect()
}

pub fn is_human_place(kind: &str) -> bool {
    matches!(kind, "S_H" | "I_H" | "R_H" | "D_H")
}

/// Rate family of a latent coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// Mosquito-to-human transmission.
    MosquitoToHuman,
    /// Human-to-mosquito transmission.
    HumanToMosquito,
    /// Mosquito mortality.
    Mortality,
}

/// Coefficient order: λ₁..₃, γ₁..₃, δ₁..₃, η₁..₃, ρ₁.
pub const COEFFICIENT_NAMES: [&str; N_COEFFICIENTS] = [
    "lambda_1", "lambda_2", "lambda_3", "gamma_1", "gamma_2", "gamma_3", "delta_1", "delta_2",
    "delta_3", "eta_1", "eta_2", "eta_3", "rho_1",
];

pub fn coefficient_family(k: usize) -> Family {
    match k {
        0..=2 | 6..=8 => Family::MosquitoToHuman,
        3..=5 | 9..=11 => Family::HumanToMosquito,
        _ => Family::Mortality,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRange {
    pub min: f64,
    pub max: f64,
}

impl RateRange {
    pub fn gain(&self) -> f64 {
        self.max - self.min
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }
}

/// Entomological rate ranges; each family's gain is `max − min`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoefficientBounds {
    pub beta_mh: RateRange,
    pub beta_hm: RateRange,
    pub mu_m: RateRange,
}

impl Default for CoefficientBounds {
    fn default() -> Self {
        Self {
            beta_mh: RateRange { min: 0.01, max: 0.80 },
            beta_hm: RateRange { min: 0.072, max: 0.64 },
            mu_m: RateRange { min: 0.05, max: 0.33 },
        }
    }
}

impl CoefficientBounds {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("beta_MH", self.beta_mh), ("beta_HM", self.beta_hm), ("mu_M", self.mu_m)] {
            if !(r.min.is_finite() && r.max.is_finite() && r.min >= 0.0 && r.min <= r.max) {
                return Err(Error::Config(format!(
                    "{name} bounds [{}, {}] are invalid",
                    r.min, r.max
                )));
            }
        }
        Ok(())
    }

    pub fn range(&self, family: Family) -> RateRange {
        match family {
            Family::MosquitoToHuman => self.beta_mh,
            Family::HumanToMosquito => self.beta_hm,
            Family::Mortality => self.mu_m,
        }
    }

    pub fn gain(&self, k: usize) -> f64 {
        self.range(coefficient_family(k)).gain()
    }

    pub fn gains(&self) -> [f64; N_COEFFICIENTS] {
        std::array::from_fn(|k| self.gain(k))
    }
}

/// The 13 latent coefficients. Intercepts are the family minima and are not
/// stored here.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector(pub [f64; N_COEFFICIENTS]);

impl CoefficientVector {
    pub fn lambda(&self) -> [f64; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }
    pub fn gamma(&self) -> [f64; 3] {
        [self.0[3], self.0[4], self.0[5]]
    }
    pub fn delta(&self) -> [f64; 3] {
        [self.0[6], self.0[7], self.0[8]]
    }
    pub fn eta(&self) -> [f64; 3] {
        [self.0[9], self.0[10], self.0[11]]
    }
    pub fn rho(&self) -> f64 {
        self.0[12]
    }
}

/// Each coefficient independently `Uniform[0, ξ_family]`.
pub fn sample_coefficients<R: Rng + ?Sized>(bounds: &CoefficientBounds, rng: &mut R) -> CoefficientVector {
    CoefficientVector(std::array::from_fn(|k| {
        let gain = bounds.gain(k);
        if gain > 0.0 {
            rng.random_range(0.0..=gain)
        } else {
            0.0
        }
    }))
}

/// Within- and between-patch transmission rates seen by patch `i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransmissionRates {
    pub mh_within: f64,
    pub hm_within: f64,
    pub mh_between: f64,
    pub hm_between: f64,
}

fn linear_response(intercept: f64, c: [f64; 3], b: &BasisDay) -> f64 {
    intercept + c[0] * b.bb + c[1] * b.l + c[2] * (b.bb * b.l)
}

/// Within-patch rates use patch `i`'s covariates, between-patch rates use
/// patch `j`'s. Results are clamped to the family range.
pub fn compute_transmission_rates(
    theta: &CoefficientVector,
    bounds: &CoefficientBounds,
    local: &BasisDay,
    remote: &BasisDay,
) -> TransmissionRates {
    let mh = bounds.beta_mh;
    let hm = bounds.beta_hm;
    TransmissionRates {
        mh_within: mh.clamp(linear_response(mh.min, theta.lambda(), local)),
        hm_within: hm.clamp(linear_response(hm.min, theta.gamma(), local)),
        mh_between: mh.clamp(linear_response(mh.min, theta.delta(), remote)),
        hm_between: hm.clamp(linear_response(hm.min, theta.eta(), remote)),
    }
}

pub fn compute_mortality_rate(theta: &CoefficientVector, bounds: &CoefficientBounds, e: f64) -> f64 {
    bounds.mu_m.clamp(bounds.mu_m.min + theta.rho() * e)
}

/// `(α^(S), α^(I))` from the source patch's covariates.
pub fn compute_migration_rates(kernel_weights: (f64, f64), source: &BasisDay) -> (f64, f64) {
    let drive = source.bm * source.l;
    (kernel_weights.0 * drive, kernel_weights.1 * drive)
}

/// How infection hazards scale with the interacting populations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IncidenceLaw {
    /// `β · S · I / N_H` with `N_H` the living humans of the reference patch.
    #[default]
    FrequencyDependent,
    /// `β · S · I`.
    MassAction,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialPopulation {
    pub s_h: u64,
    pub i_h: u64,
    pub r_h: u64,
    pub s_m: u64,
    pub i_m: u64,
}

impl Default for InitialPopulation {
    fn default() -> Self {
        Self {
            s_h: 4000,
            i_h: 20,
            r_h: 20,
            s_m: 2000,
            i_m: 10,
        }
    }
}

impl InitialPopulation {
    pub fn humans(&self) -> u64 {
        self.s_h + self.i_h + self.r_h
    }

    pub fn mosquitoes(&self) -> u64 {
        self.s_m + self.i_m
    }
}

/// Constants shared by every sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedParams {
    pub sigma: f64,
    pub mu_h: f64,
    pub phi_s: f64,
    pub phi_i: f64,
    pub phi_r: f64,
    pub initial: InitialPopulation,
    /// Constant-rate defaults used only by [`constant_schedule`].
    pub constant: ConstantRates,
}

impl Default for FixedParams {
    fn default() -> Self {
        Self {
            sigma: 0.10,
            mu_h: 0.01,
            phi_s: 3.51e-4,
            phi_i: 3.50e-4,
            phi_r: 3.49e-4,
            initial: InitialPopulation::default(),
            constant: ConstantRates::default(),
        }
    }
}

impl FixedParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma", self.sigma),
            ("mu_H", self.mu_h),
            ("phi_S", self.phi_s),
            ("phi_I", self.phi_i),
            ("phi_R", self.phi_r),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} = {v} must be non-negative")));
            }
        }
        Ok(())
    }
}

/// Non-functional rate values for a constant-rate debug run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstantRates {
    pub beta_mh_within: f64,
    pub beta_hm_within: f64,
    pub beta_mh_between: f64,
    pub beta_hm_between: f64,
    pub mu_m: f64,
    pub alpha_s: f64,
    pub alpha_i: f64,
}

impl Default for ConstantRates {
    fn default() -> Self {
        Self {
            beta_mh_within: 0.30,
            beta_hm_within: 0.40,
            beta_mh_between: 0.20,
            beta_hm_between: 0.25,
            mu_m: 0.02,
            alpha_s: 3.40e-4,
            alpha_i: 3.40e-4,
        }
    }
}

/// Everything needed to turn coefficients into a simulated trajectory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub fixed: FixedParams,
    pub bounds: CoefficientBounds,
    pub kernel: MigrationKernelParams,
    pub incidence: IncidenceLaw,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.fixed.validate()?;
        self.bounds.validate()?;
        self.kernel.validate()?;
        if self.kernel.patch_points.len() != N_PATCHES {
            return Err(Error::Config(format!(
                "the model has {N_PATCHES} patches but the kernel lists {}",
                self.kernel.patch_points.len()
            )));
        }
        Ok(())
    }
}

pub mod rate_names {
    pub fn beta_mh(i: usize, j: usize) -> String {
        format!("beta_MH_{}{}", i + 1, j + 1)
    }
    pub fn beta_hm(i: usize, j: usize) -> String {
        format!("beta_HM_{}{}", i + 1, j + 1)
    }
    pub fn mu_m(i: usize) -> String {
        format!("mu_M_{}", i + 1)
    }
    pub fn alpha_s(i: usize, j: usize) -> String {
        format!("alpha_S_{}{}", i + 1, j + 1)
    }
    pub fn alpha_i(i: usize, j: usize) -> String {
        format!("alpha_I_{}{}", i + 1, j + 1)
    }
    pub const SIGMA: &str = "sigma";
    pub const MU_H: &str = "mu_H";
    pub const PHI_S: &str = "phi_S";
    pub const PHI_I: &str = "phi_I";
    pub const PHI_R: &str = "phi_R";
}

/// Fifteen transitions per patch: four infection routes, recovery, three
/// human and two mosquito deaths, three human and two mosquito migrations.
pub fn build_two_patch_net(fixed: &FixedParams, incidence: IncidenceLaw) -> Result<PetriNet> {
    let place = |kind: &str, p: usize| place_name(kind, p);
    let living = |p: usize| vec![place("S_H", p), place("I_H", p), place("R_H", p)];
    let infection = |left: String, right: String, norm_patch: usize| match incidence {
        IncidenceLaw::FrequencyDependent => HazardLaw::NormalizedBilinear {
            left,
            right,
            denominator: living(norm_patch),
        },
        IncidenceLaw::MassAction => HazardLaw::MassAction { left, right },
    };
    let per_capita = |kind: &str, p: usize| HazardLaw::PerCapita {
        place: place(kind, p),
    };

    let mut ts = Vec::with_capacity(15 * N_PATCHES);
    for i in 0..N_PATCHES {
        let j = 1 - i;
        let n = i + 1;
        ts.push(
            TransitionSpec::new(
                format!("infect_H_within_{n}"),
                rate_names::beta_mh(i, i),
                infection(place("S_H", i), place("I_M", i), i),
            )
            .moves(place("S_H", i), place("I_H", i))
            .reads(place("I_M", i)),
        );
        ts.push(
            TransitionSpec::new(
                format!("infect_H_between_{n}"),
                rate_names::beta_mh(i, j),
                infection(place("S_H", i), place("I_M", j), i),
            )
            .moves(place("S_H", i), place("I_H", i))
            .reads(place("I_M", j)),
        );
        ts.push(
            TransitionSpec::new(
                format!("infect_M_within_{n}"),
                rate_names::beta_hm(i, i),
                infection(place("S_M", i), place("I_H", i), i),
            )
            .moves(place("S_M", i), place("I_M", i))
            .reads(place("I_H", i)),
        );
        ts.push(
            TransitionSpec::new(
                format!("infect_M_between_{n}"),
                rate_names::beta_hm(i, j),
                infection(place("S_M", i), place("I_H", j), j),
            )
            .moves(place("S_M", i), place("I_M", i))
            .reads(place("I_H", j)),
        );
        ts.push(
            TransitionSpec::new(format!("recover_{n}"), rate_names::SIGMA, per_capita("I_H", i))
                .moves(place("I_H", i), place("R_H", i)),
        );
        for kind in ["S_H", "I_H", "R_H"] {
            ts.push(
                TransitionSpec::new(format!("die_{kind}_{n}"), rate_names::MU_H, per_capita(kind, i))
                    .moves(place(kind, i), place("D_H", i)),
            );
        }
        for kind in ["S_M", "I_M"] {
            ts.push(
                TransitionSpec::new(format!("die_{kind}_{n}"), rate_names::mu_m(i), per_capita(kind, i))
                    .moves(place(kind, i), place("D_M", i)),
            );
        }
        for (kind, rate) in [
            ("S_H", rate_names::PHI_S),
            ("I_H", rate_names::PHI_I),
            ("R_H", rate_names::PHI_R),
        ] {
            ts.push(
                TransitionSpec::new(format!("migrate_{kind}_{n}{}", j + 1), rate, per_capita(kind, i))
                    .moves(place(kind, i), place(kind, j)),
            );
        }
        ts.push(
            TransitionSpec::new(format!("migrate_S_M_{n}{}", j + 1), rate_names::alpha_s(i, j), per_capita("S_M", i))
                .moves(place("S_M", i), place("S_M", j)),
        );
        ts.push(
            TransitionSpec::new(format!("migrate_I_M_{n}{}", j + 1), rate_names::alpha_i(i, j), per_capita("I_M", i))
                .moves(place("I_M", i), place("I_M", j)),
        );
    }

    let init = &fixed.initial;
    let per_patch = [init.s_h, init.i_h, init.r_h, init.s_m, init.i_m, 0, 0];
    let initial = Marking::new(per_patch.iter().copied().cycle().take(7 * N_PATCHES).collect());
    PetriNet::new(place_names(), ts, initial)
}

fn fixed_rates(rates: &mut DayRates, fixed: &FixedParams) {
    rates
        .set(rate_names::SIGMA, fixed.sigma)
        .set(rate_names::MU_H, fixed.mu_h)
        .set(rate_names::PHI_S, fixed.phi_s)
        .set(rate_names::PHI_I, fixed.phi_i)
        .set(rate_names::PHI_R, fixed.phi_r);
}

/// One day's rates for both patches and both directions.
pub fn day_rates(
    theta: &CoefficientVector,
    config: &ModelConfig,
    basis: [&BasisDay; N_PATCHES],
) -> DayRates {
    let mut rates = DayRates::new();
    fixed_rates(&mut rates, &config.fixed);
    for i in 0..N_PATCHES {
        let j = 1 - i;
        let tr = compute_transmission_rates(theta, &config.bounds, basis[i], basis[j]);
        let (a_s, a_i) = compute_migration_rates(config.kernel.weights(i, j), basis[i]);
        rates
            .set(rate_names::beta_mh(i, i), tr.mh_within)
            .set(rate_names::beta_hm(i, i), tr.hm_within)
            .set(rate_names::beta_mh(i, j), tr.mh_between)
            .set(rate_names::beta_hm(i, j), tr.hm_between)
            .set(rate_names::mu_m(i), compute_mortality_rate(theta, &config.bounds, basis[i].e))
            .set(rate_names::alpha_s(i, j), a_s)
            .set(rate_names::alpha_i(i, j), a_i);
    }
    rates
}

pub type RateSchedule = Vec<DayRates>;

pub fn make_rate_schedule(
    theta: &CoefficientVector,
    basis: &[BasisDaily],
    config: &ModelConfig,
    horizon: usize,
) -> Result<RateSchedule> {
    if basis.len() != N_PATCHES {
        return Err(Error::Config(format!(
            "expected basis series for {N_PATCHES} patches, got {}",
            basis.len()
        )));
    }
    if let Some(short) = basis.iter().find(|b| b.len() < horizon) {
        return Err(Error::Config(format!(
            "patch `{}` covers {} days, horizon is {horizon}",
            short.patch,
            short.len()
        )));
    }
    Ok((0..horizon)
        .map(|d| day_rates(theta, config, [&basis[0].days[d], &basis[1].days[d]]))
        .collect())
}

/// Table-default constant rates on every day; no covariate dependence.
pub fn constant_schedule(fixed: &FixedParams, horizon: usize) -> RateSchedule {
    let c = fixed.constant;
    let mut rates = DayRates::new();
    fixed_rates(&mut rates, fixed);
    for i in 0..N_PATCHES {
        let j = 1 - i;
        rates
            .set(rate_names::beta_mh(i, i), c.beta_mh_within)
            .set(rate_names::beta_hm(i, i), c.beta_hm_within)
            .set(rate_names::beta_mh(i, j), c.beta_mh_between)
            .set(rate_names::beta_hm(i, j), c.beta_hm_between)
            .set(rate_names::mu_m(i), c.mu_m)
            .set(rate_names::alpha_s(i, j), c.alpha_s)
            .set(rate_names::alpha_i(i, j), c.alpha_i);
    }
    vec![rates; horizon]
}
