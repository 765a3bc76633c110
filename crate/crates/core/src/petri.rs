//! Stochastic Petri nets and exact stochastic simulation.
//!
//! A net is a set of places holding tokens and a set of transitions that
//! consume tokens from input places and produce tokens in output places.
//! Each transition carries a hazard law bound by name to a daily rate, so
//! the same net can be driven by a schedule of piecewise-constant rates.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Token counts, indexed in the order of the owning net's places.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Marking {
    counts: Vec<u64>,
}

impl Marking {
    pub fn new(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    pub fn zeros(n: usize) -> Self {
        Self { counts: vec![0; n] }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, place: usize) -> u64 {
        self.counts[place]
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self, places: &[usize]) -> u64 {
        places.iter().map(|&p| self.counts[p]).sum()
    }
}

/// Closed set of hazard laws. The multiplying rate is looked up by name in
/// [`DayRates`]; places are referenced by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum HazardLaw {
    /// `r`
    Constant,
    /// `r · X`
    PerCapita { place: String },
    /// `r · X · Y`
    MassAction { left: String, right: String },
    /// `r · X · Y / N` where `N` sums the listed places; zero when `N = 0`.
    NormalizedBilinear {
        left: String,
        right: String,
        denominator: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionSpec {
    pub id: String,
    /// Consumption multiset.
    pub inputs: Vec<(String, u32)>,
    /// Production multiset.
    pub outputs: Vec<(String, u32)>,
    pub law: HazardLaw,
    /// Name of the bound rate in [`DayRates`].
    pub rate: String,
}

impl TransitionSpec {
    pub fn new(id: impl Into<String>, rate: impl Into<String>, law: HazardLaw) -> Self {
        Self {
            id: id.into(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            law,
            rate: rate.into(),
        }
    }

    pub fn input(mut self, place: impl Into<String>, n: u32) -> Self {
        self.inputs.push((place.into(), n));
        self
    }

    pub fn output(mut self, place: impl Into<String>, n: u32) -> Self {
        self.outputs.push((place.into(), n));
        self
    }

    /// Token move `from → to`.
    pub fn moves(self, from: impl Into<String>, to: impl Into<String>) -> Self {
        self.input(from, 1).output(to, 1)
    }

    /// Read arc: consumed and produced back, so the count is unchanged but
    /// the place must be marked for the transition to be enabled.
    pub fn reads(self, place: impl Into<String>) -> Self {
        let place = place.into();
        self.input(place.clone(), 1).output(place, 1)
    }
}

#[derive(Clone, Debug)]
enum CompiledLaw {
    Constant,
    PerCapita(usize),
    MassAction(usize, usize),
    NormalizedBilinear(usize, usize, Vec<usize>),
}

#[derive(Clone, Debug)]
struct CompiledTransition {
    inputs: Vec<(usize, u64)>,
    /// Net token change per place, zero entries omitted.
    delta: Vec<(usize, i64)>,
    law: CompiledLaw,
}

/// Places, transitions and an initial marking.
#[derive(Clone, Debug)]
pub struct PetriNet {
    places: Vec<String>,
    transitions: Vec<TransitionSpec>,
    initial: Marking,
    place_index: HashMap<String, usize>,
    transition_index: HashMap<String, usize>,
    compiled: Vec<CompiledTransition>,
}

impl PetriNet {
    /// Validates identifier uniqueness and that every arc and hazard refers to
    /// a declared place.
    pub fn new(
        places: Vec<String>,
        transitions: Vec<TransitionSpec>,
        initial: Marking,
    ) -> Result<Self> {
        let mut place_index = HashMap::with_capacity(places.len());
        for (i, p) in places.iter().enumerate() {
            if place_index.insert(p.clone(), i).is_some() {
                return Err(Error::Structure(format!("duplicate place `{p}`")));
            }
        }
        if initial.len() != places.len() {
            return Err(Error::Structure(format!(
                "initial marking has {} entries for {} places",
                initial.len(),
                places.len()
            )));
        }
        let lookup = |name: &str, t: &str| {
            place_index.get(name).copied().ok_or_else(|| {
                Error::Structure(format!("transition `{t}` references unknown place `{name}`"))
            })
        };

        let mut transition_index = HashMap::with_capacity(transitions.len());
        let mut compiled = Vec::with_capacity(transitions.len());
        for (k, t) in transitions.iter().enumerate() {
            if transition_index.insert(t.id.clone(), k).is_some() {
                return Err(Error::Structure(format!("duplicate transition `{}`", t.id)));
            }
            let mut inputs: BTreeMap<usize, u64> = BTreeMap::new();
            let mut delta: BTreeMap<usize, i64> = BTreeMap::new();
            for (p, n) in &t.inputs {
                let i = lookup(p, &t.id)?;
                *inputs.entry(i).or_default() += u64::from(*n);
                *delta.entry(i).or_default() -= i64::from(*n);
            }
            for (p, n) in &t.outputs {
                let i = lookup(p, &t.id)?;
                *delta.entry(i).or_default() += i64::from(*n);
            }
            let law = match &t.law {
                HazardLaw::Constant => CompiledLaw::Constant,
                HazardLaw::PerCapita { place } => CompiledLaw::PerCapita(lookup(place, &t.id)?),
                HazardLaw::MassAction { left, right } => {
                    CompiledLaw::MassAction(lookup(left, &t.id)?, lookup(right, &t.id)?)
                }
                HazardLaw::NormalizedBilinear {
                    left,
                    right,
                    denominator,
                } => CompiledLaw::NormalizedBilinear(
                    lookup(left, &t.id)?,
                    lookup(right, &t.id)?,
                    denominator
                        .iter()
                        .map(|d| lookup(d, &t.id))
                        .collect::<Result<_>>()?,
                ),
            };
            compiled.push(CompiledTransition {
                inputs: inputs.into_iter().filter(|&(_, n)| n > 0).collect(),
                delta: delta.into_iter().filter(|&(_, d)| d != 0).collect(),
                law,
            });
        }

        Ok(Self {
            places,
            transitions,
            initial,
            place_index,
            transition_index,
            compiled,
        })
    }

    pub fn places(&self) -> &[String] {
        &self.places
    }

    pub fn transitions(&self) -> &[TransitionSpec] {
        &self.transitions
    }

    pub fn initial(&self) -> &Marking {
        &self.initial
    }

    pub fn place(&self, name: &str) -> Option<usize> {
        self.place_index.get(name).copied()
    }

    pub fn transition(&self, id: &str) -> Result<usize> {
        self.transition_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::Structure(format!("unknown transition `{id}`")))
    }

    /// Names of every rate referenced by a hazard, sorted and deduplicated.
    pub fn rate_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.transitions.iter().map(|t| t.rate.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        names
    }

    /// `m(p) ≥ I(t)(p)` for every place.
    pub fn enabled(&self, m: &Marking, id: &str) -> Result<bool> {
        let k = self.transition(id)?;
        Ok(self.enabled_at(m.counts(), k))
    }

    fn enabled_at(&self, counts: &[u64], k: usize) -> bool {
        self.compiled[k]
            .inputs
            .iter()
            .all(|&(p, n)| counts[p] >= n)
    }

    /// Returns `m'` with `m'(p) = m(p) − I(t)(p) + O(t)(p)`; `m` is left as is.
    pub fn fire(&self, m: &Marking, id: &str) -> Result<Marking> {
        let k = self.transition(id)?;
        if !self.enabled_at(m.counts(), k) {
            return Err(Error::NotEnabled(id.to_string()));
        }
        let mut next = m.clone();
        self.apply(&mut next.counts, k);
        Ok(next)
    }

    fn apply(&self, counts: &mut [u64], k: usize) {
        for &(p, d) in &self.compiled[k].delta {
            counts[p] = counts[p].wrapping_add_signed(d);
        }
    }

    /// Applies transition `k`'s token change, flooring every place at zero.
    /// Used to replay partially observed event logs.
    pub fn apply_saturating(&self, counts: &mut [u64], k: usize) {
        for &(p, d) in &self.compiled[k].delta {
            counts[p] = counts[p].saturating_add_signed(d);
        }
    }

    /// Resolve each transition's rate name against `rates`.
    pub fn bind(&self, rates: &DayRates) -> Result<Vec<f64>> {
        self.transitions
            .iter()
            .map(|t| {
                let r = rates.get(&t.rate).ok_or_else(|| {
                    Error::Config(format!(
                        "rate `{}` required by transition `{}` is not bound",
                        t.rate, t.id
                    ))
                })?;
                if !r.is_finite() || r < 0.0 {
                    return Err(Error::Numeric(format!(
                        "rate `{}` = {r} for transition `{}`",
                        t.rate, t.id
                    )));
                }
                Ok(r)
            })
            .collect()
    }

    fn hazard(&self, counts: &[u64], k: usize, rate: f64) -> f64 {
        if !self.enabled_at(counts, k) {
            return 0.0;
        }
        let x = |p: usize| counts[p] as f64;
        match &self.compiled[k].law {
            CompiledLaw::Constant => rate,
            CompiledLaw::PerCapita(p) => rate * x(*p),
            CompiledLaw::MassAction(a, b) => rate * x(*a) * x(*b),
            CompiledLaw::NormalizedBilinear(a, b, den) => {
                let n: u64 = den.iter().map(|&p| counts[p]).sum();
                if n == 0 {
                    0.0
                } else {
                    rate * x(*a) * x(*b) / n as f64
                }
            }
        }
    }

    fn fill_hazards(&self, counts: &[u64], bound: &[f64], out: &mut [f64]) -> Result<f64> {
        let mut total = 0.0;
        for (k, h) in out.iter_mut().enumerate() {
            *h = self.hazard(counts, k, bound[k]);
            if !h.is_finite() || *h < 0.0 {
                return Err(Error::Numeric(format!(
                    "hazard of `{}` evaluated to {h}",
                    self.transitions[k].id
                )));
            }
            total += *h;
        }
        Ok(total)
    }

    /// Total hazard `Λ = Σ_t h_t(m)`.
    pub fn total_hazard(&self, m: &Marking, rates: &DayRates) -> Result<f64> {
        let bound = self.bind(rates)?;
        let mut h = vec![0.0; self.transitions.len()];
        self.fill_hazards(m.counts(), &bound, &mut h)
    }
}

/// One day's rate values, keyed by rate name, in day⁻¹.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DayRates(BTreeMap<String, f64>);

impl DayRates {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: impl Into<String>, value: f64) -> &mut Self {
        self.0.insert(name.into(), value);
        self
    }

    pub fn with(mut self, name: impl Into<String>, value: f64) -> Self {
        self.set(name, value);
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(String, f64)> for DayRates {
    fn from_iter<I: IntoIterator<Item = (String, f64)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// A single firing: absolute time in days and transition index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub transition: usize,
}

/// Gillespie direct method over `[t0, t1)` with constant rates.
///
/// Returns the marking at `t1` (or at extinction of all hazards) and, when
/// `record` is set, the list of fired events.
pub fn ssa_day<R: Rng + ?Sized>(
    net: &PetriNet,
    m0: &Marking,
    rates: &DayRates,
    t0: f64,
    t1: f64,
    rng: &mut R,
    record: bool,
) -> Result<(Marking, Vec<Event>)> {
    if !(t1 > t0) {
        return Err(Error::Validation(format!("empty interval [{t0}, {t1})")));
    }
    let bound = net.bind(rates)?;
    let mut counts = m0.counts().to_vec();
    let mut events = Vec::new();
    let mut hazards = vec![0.0; net.transitions.len()];
    advance(net, &mut counts, &bound, &mut hazards, t0, t1, rng, |e| {
        if record {
            events.push(e)
        }
    })?;
    Ok((Marking::new(counts), events))
}

#[allow(clippy::too_many_arguments)]
fn advance<R: Rng + ?Sized>(
    net: &PetriNet,
    counts: &mut [u64],
    bound: &[f64],
    hazards: &mut [f64],
    t0: f64,
    t1: f64,
    rng: &mut R,
    mut on_event: impl FnMut(Event),
) -> Result<()> {
    let mut t = t0;
    loop {
        let total = net.fill_hazards(counts, bound, hazards)?;
        if total <= 0.0 {
            return Ok(());
        }
        // 1 - U lies in (0, 1], so the logarithm is finite.
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / total;
        if t >= t1 {
            return Ok(());
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (k, &h) in hazards.iter().enumerate() {
            if h > 0.0 {
                acc += h;
                chosen = Some(k);
                if target < acc {
                    break;
                }
            }
        }
        // `chosen` is the last positive-hazard transition if rounding left
        // `target` just above the accumulated sum.
        let k = chosen.expect("positive total hazard has a positive term");
        net.apply(counts, k);
        on_event(Event {
            time: t,
            transition: k,
        });
    }
}

/// End-of-day snapshots over a horizon of `T` days.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub n_places: usize,
    /// Row-major `T × n_places`; row `d` is the marking at the end of day `d + 1`.
    pub states: Vec<u64>,
    pub initial: Marking,
    pub events: Option<Vec<Event>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        if self.n_places == 0 {
            0
        } else {
            self.states.len() / self.n_places
        }
    }

    pub fn row(&self, d: usize) -> &[u64] {
        &self.states[d * self.n_places..(d + 1) * self.n_places]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.states.chunks_exact(self.n_places.max(1))
    }
}

/// Chains [`ssa_day`] over `schedule`, day `d` covering `[d, d + 1)`.
pub fn simulate_horizon<R: Rng + ?Sized>(
    net: &PetriNet,
    schedule: &[DayRates],
    rng: &mut R,
    record: bool,
) -> Result<Trajectory> {
    let n = net.places.len();
    let mut counts = net.initial.counts().to_vec();
    let mut states = Vec::with_capacity(schedule.len() * n);
    let mut events = record.then(Vec::new);
    let mut hazards = vec![0.0; net.transitions.len()];
    for (d, rates) in schedule.iter().enumerate() {
        let bound = net.bind(rates)?;
        let t0 = d as f64;
        advance(net, &mut counts, &bound, &mut hazards, t0, t0 + 1.0, rng, |e| {
            if let Some(log) = events.as_mut() {
                log.push(e)
            }
        })?;
        states.extend_from_slice(&counts);
    }
    Ok(Trajectory {
        n_places: n,
        states,
        initial: net.initial.clone(),
        events,
    })
}
