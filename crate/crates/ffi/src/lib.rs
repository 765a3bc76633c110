//! C ABI over `spn-core`: basis functions, a trajectory simulator and an
//! MC-dropout predictor.
//!
//! Every fallible call returns an [`SpnStatus`]. On failure the message is
//! kept per thread and can be copied out with [`spn_last_error_message`].
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use spn_core::covariates::{
    briere, briere_diurnal_avg, compute_basis, eyring, logistic_rh, rh_diurnal_logistic_avg, BasisDaily,
};
use spn_core::dataset::{feature_scale, normalize_targets, simulate_observation};
use spn_core::model::{
    build_two_patch_net, make_rate_schedule, place_names, sample_coefficients, CoefficientVector, N_COEFFICIENTS,
};
use spn_core::nn::{load_checkpoint, Checkpoint};
use spn_core::petri::PetriNet;
use spn_core::pipeline::{covariate_series, RunConfig};
use spn_core::uq::{mc_dropout_predict, UqConfig};
use spn_core::{seed, Error};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Numeric = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> SpnStatus {
    match err {
        Error::Io { .. } | Error::Load { .. } => SpnStatus::Io,
        Error::Numeric(_) => SpnStatus::Numeric,
        _ => SpnStatus::InvalidArgument,
    }
}

fn fail(status: SpnStatus, msg: impl Into<String>) -> SpnStatus {
    set_error(msg);
    status
}

/// Run `f`, turning errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), (SpnStatus, String)>) -> SpnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SpnStatus::Ok
        }
        Ok(Err((s, m))) => fail(s, m),
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(SpnStatus::Panic, msg)
        }
    }
}

fn core_err(e: Error) -> (SpnStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SpnStatus, String) {
    (SpnStatus::NullPointer, format!("{what} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (SpnStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (SpnStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, need: usize, what: &str) -> Result<&'a mut [T], (SpnStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err((SpnStatus::BufferTooSmall, format!("{what} holds {len}, need {need}")));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to fit). Returns the full message length plus one.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn spn_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len() + 1
    })
}

#[no_mangle]
pub extern "C" fn spn_briere(t: f64, a: f64, t_min: f64, t_max: f64) -> f64 {
    briere(t, a, t_min, t_max)
}

#[no_mangle]
pub extern "C" fn spn_briere_diurnal_avg(t_mean: f64, t_lo: f64, t_hi: f64, a: f64, t_min: f64, t_max: f64) -> f64 {
    briere_diurnal_avg(t_mean, t_lo, t_hi, a, t_min, t_max)
}

#[no_mangle]
pub extern "C" fn spn_eyring(t: f64, psi_ad: f64, ae_ad: f64, r_gas: f64) -> f64 {
    eyring(t, psi_ad, ae_ad, r_gas)
}

#[no_mangle]
pub extern "C" fn spn_logistic_rh(rh: f64, k: f64, rh_opt: f64) -> f64 {
    logistic_rh(rh, k, rh_opt)
}

#[no_mangle]
pub extern "C" fn spn_rh_diurnal_logistic_avg(rh_lo: f64, rh_hi: f64, k: f64, rh_opt: f64) -> f64 {
    rh_diurnal_logistic_avg(rh_lo, rh_hi, k, rh_opt)
}

/// Two-patch net with covariates resolved from a run configuration.
pub struct SpnSimulator {
    config: RunConfig,
    net: PetriNet,
    basis: Vec<BasisDaily>,
    scale: Vec<f64>,
}

impl SpnSimulator {
    fn new(config: RunConfig) -> spn_core::Result<Self> {
        config.validate()?;
        let basis = covariate_series(&config)?
            .iter()
            .map(|s| compute_basis(s, &config.covariates.basis))
            .collect();
        let net = build_two_patch_net(&config.model.fixed, config.model.incidence)?;
        let scale = feature_scale(&config.model);
        Ok(Self { config, net, basis, scale })
    }

    fn horizon(&self) -> usize {
        self.config.dataset.horizon
    }
}

/// Build a simulator from a JSON run configuration (null for defaults).
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn spn_simulator_new(config_json: *const c_char, out: *mut *mut SpnSimulator) -> SpnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let config = if config_json.is_null() {
            RunConfig::default()
        } else {
            serde_json::from_str(c_str(config_json, "config_json")?)
                .map_err(|e| (SpnStatus::InvalidArgument, format!("config: {e}")))?
        };
        let sim = SpnSimulator::new(config).map_err(core_err)?;
        *out = Box::into_raw(Box::new(sim));
        Ok(())
    })
}

/// # Safety
/// `sim` must be null or a handle from [`spn_simulator_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spn_simulator_free(sim: *mut SpnSimulator) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Days per trajectory, or 0 for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spn_simulator_horizon(sim: *const SpnSimulator) -> usize {
    sim.as_ref().map_or(0, SpnSimulator::horizon)
}

#[no_mangle]
pub extern "C" fn spn_n_places() -> usize {
    place_names().len()
}

#[no_mangle]
pub extern "C" fn spn_n_coefficients() -> usize {
    N_COEFFICIENTS
}

/// Draw a coefficient vector from the configured prior with `seed`.
///
/// # Safety
/// `sim` must be a live handle and `theta_out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn spn_simulator_sample_theta(
    sim: *const SpnSimulator,
    seed_value: u64,
    theta_out: *mut f64,
    len: usize,
) -> SpnStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        let out = out_slice(theta_out, len, N_COEFFICIENTS, "theta_out")?;
        let theta = sample_coefficients(&sim.config.model.bounds, &mut seed::rng(seed_value));
        out.copy_from_slice(&theta.0);
        Ok(())
    })
}

/// Simulate one observed run for `theta` (rate units) with `run_seed` and
/// write the normalised `horizon × places` matrix, row-major, to `x_out`.
///
/// # Safety
/// `sim` must be a live handle, `theta` valid for `n_theta` doubles and
/// `x_out` for `x_len` floats.
#[no_mangle]
pub unsafe extern "C" fn spn_simulator_run(
    sim: *const SpnSimulator,
    theta: *const f64,
    n_theta: usize,
    run_seed: u64,
    x_out: *mut f32,
    x_len: usize,
) -> SpnStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        if theta.is_null() {
            return Err(null("theta"));
        }
        if n_theta != N_COEFFICIENTS {
            return Err((
                SpnStatus::InvalidArgument,
                format!("theta has {n_theta} values, expected {N_COEFFICIENTS}"),
            ));
        }
        let out = out_slice(x_out, x_len, sim.horizon() * sim.scale.len(), "x_out")?;
        let mut coeffs = [0.0; N_COEFFICIENTS];
        coeffs.copy_from_slice(std::slice::from_raw_parts(theta, n_theta));
        let theta = CoefficientVector(coeffs);
        normalize_targets(&theta, &sim.config.model.bounds).map_err(core_err)?;
        let schedule =
            make_rate_schedule(&theta, &sim.basis, &sim.config.model, sim.horizon()).map_err(core_err)?;
        let x = simulate_observation(&sim.net, &schedule, &sim.config.dataset.dropout, &sim.scale, run_seed)
            .map_err(core_err)?;
        out.copy_from_slice(&x);
        Ok(())
    })
}

/// A trained network with its checkpoint metadata.
pub struct SpnPredictor {
    ckpt: Checkpoint,
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn spn_predictor_load(path: *const c_char, out: *mut *mut SpnPredictor) -> SpnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let path = c_str(path, "path")?;
        let ckpt = load_checkpoint(Path::new(path), None).map_err(core_err)?;
        if ckpt.meta.gains.len() != ckpt.model.config().d_out {
            return Err((SpnStatus::Io, format!("{path}: checkpoint has no gains")));
        }
        *out = Box::into_raw(Box::new(SpnPredictor { ckpt }));
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a handle from [`spn_predictor_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spn_predictor_free(p: *mut SpnPredictor) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Input length (`horizon × places`) the network expects, or 0 for null.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spn_predictor_input_len(p: *const SpnPredictor) -> usize {
    p.as_ref().map_or(0, |p| {
        let c = p.ckpt.model.config();
        c.horizon * c.d_in
    })
}

/// MC-dropout posterior mean and standard deviation in rate units for one
/// normalised trajectory, using `passes` stochastic passes.
///
/// # Safety
/// `p` must be a live handle, `x` valid for `x_len` floats and the outputs
/// for `n_out` doubles each.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn spn_predictor_predict(
    p: *const SpnPredictor,
    x: *const f32,
    x_len: usize,
    passes: u32,
    seed_value: u64,
    mean_out: *mut f64,
    std_out: *mut f64,
    n_out: usize,
) -> SpnStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("predictor"))?;
        if x.is_null() {
            return Err(null("x"));
        }
        let cfg = p.ckpt.model.config();
        if x_len != cfg.horizon * cfg.d_in {
            return Err((
                SpnStatus::InvalidArgument,
                format!("x has {x_len} values, expected {}", cfg.horizon * cfg.d_in),
            ));
        }
        let mean = out_slice(mean_out, n_out, cfg.d_out, "mean_out")?;
        let std = out_slice(std_out, n_out, cfg.d_out, "std_out")?;
        let uq = UqConfig {
            passes: passes as usize,
            ..UqConfig::default()
        };
        let post = mc_dropout_predict(&p.ckpt.model, std::slice::from_raw_parts(x, x_len), &uq, seed_value)
            .map_err(core_err)?;
        for (k, g) in p.ckpt.meta.gains.iter().enumerate() {
            mean[k] = post.mean[k] * g;
            std[k] = post.std[k] * g;
        }
        Ok(())
    })
}
