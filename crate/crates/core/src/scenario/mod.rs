//! Two-city pandemic scenario: weather, behavior, mixing and SEIR city
//! models.
//!
//! The functional forms are illustrative; every tunable constant lives in
//! [`ScenarioConstants`].

pub mod seir;

use crate::engine::{Invocation, ModelError, ModelOutput, ModelRegistry, ModelState, RunConfig, RunConfigFile};
use crate::model::FlowGraph;
use crate::scalar::Scalar;
use crate::series::SeriesWindow;
use crate::window::TickWindow;
use crate::Series;

pub use seir::{integrate, Divergence, Forcing, SeirRates, SeirState};

/// Shape constants of the scenario functions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenarioConstants {
    /// Seasonal period of the weather, ticks.
    pub period: f64,
    /// Temperature range mapped onto half a cosine by the behavior response.
    pub temp_lo: f64,
    pub temp_hi: f64,
    /// Amplitude of the temperature response `g`.
    pub temp_response: f64,
    /// Damping rates of `h` for risk-averse (posture 0) and risk-tolerant
    /// (posture 1) populations.
    pub damping_averse: f64,
    pub damping_tolerant: f64,
    /// Contacts per tick treated as "one unit" by the mixing model.
    pub contact_norm: f64,
    pub mixing_scale: f64,
    pub mixing_cap: f64,
}

pub const CONSTANTS: ScenarioConstants = ScenarioConstants {
    period: 365.0,
    temp_lo: 0.0,
    temp_hi: 40.0,
    temp_response: 0.2,
    damping_averse: 30.0,
    damping_tolerant: 8.0,
    contact_norm: 10.0,
    mixing_scale: 0.05,
    mixing_cap: 0.25,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeatherParams<T = f64> {
    pub baseline: T,
    pub amplitude: T,
    pub offset: T,
}

/// `baseline + amplitude·sin(2πt/period) + offset`, sampled at the first
/// tick of each bucket.
pub fn weather_step<T: Scalar>(p: &WeatherParams<T>, window: TickWindow, resolution: u64) -> SeriesWindow<T> {
    let period = T::lit(CONSTANTS.period);
    let tau = T::lit(std::f64::consts::TAU);
    SeriesWindow::from_fn("temperature", window, resolution, |t| {
        p.baseline + p.amplitude * (tau * T::lit(t as f64) / period).sin() + p.offset
    })
    .expect("caller supplies a valid scope")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BehaviorParams<T = f64> {
    pub beta: T,
    pub contact: T,
    /// 0 = risk-averse, 1 = risk-tolerant.
    pub posture: u8,
}

/// Temperature response `g(T) = 1 + a·cos(π(T − lo)/(hi − lo))`; equals 1 at
/// the midpoint of the range.
pub fn temperature_response<T: Scalar>(temp: T) -> T {
    let c = &CONSTANTS;
    let x = (temp - T::lit(c.temp_lo)) / T::lit(c.temp_hi - c.temp_lo);
    T::one() + T::lit(c.temp_response) * (T::lit(std::f64::consts::PI) * x).cos()
}

/// Damping `h(i) = exp(−k·i)`, with a larger `k` for risk-averse populations.
pub fn risk_damping<T: Scalar>(infected_fraction: T, posture: u8) -> T {
    let k = if posture == 0 { CONSTANTS.damping_averse } else { CONSTANTS.damping_tolerant };
    (-T::lit(k) * infected_fraction.max(T::zero())).exp()
}

/// Effective contacts `c·g(T)·h(i)` for one tick.
pub fn effective_contact<T: Scalar>(p: &BehaviorParams<T>, temp: T, infected_fraction: T) -> T {
    (p.contact * temperature_response(temp) * risk_damping(infected_fraction, p.posture)).max(T::zero())
}

/// Row-stochastic 2×2 mixing matrix, row-major.
pub fn mixing_matrix<T: Scalar>(contact_a: T, contact_b: T) -> [T; 4] {
    let c = &CONSTANTS;
    let norm = T::lit(c.contact_norm);
    let raw = T::lit(c.mixing_scale) * (contact_a / norm) * (contact_b / norm);
    let m = raw.max(T::zero()).min(T::lit(c.mixing_cap));
    let row = T::one() + m;
    [T::one() / row, m / row, m / row, T::one() / row]
}

fn num(inv: &Invocation<'_>, name: &str) -> Result<f64, ModelError> {
    inv.param(name)
}

fn on_grid(inv: &Invocation<'_>, name: &str) -> Result<Series, ModelError> {
    inv.input_on_output_grid(name)
}

fn series(inv: &Invocation<'_>, name: &str, values: Vec<f64>) -> Result<Series, ModelError> {
    Series::new(name, inv.windows.output, inv.model.output_scope.resolution, values)
        .map_err(|e| ModelError(e.to_string()))
}

/// `weather`: params `baseline`, `amplitude`, `offset`; output `temperature`.
pub fn weather(inv: &Invocation<'_>) -> Result<ModelOutput, ModelError> {
    let p = WeatherParams {
        baseline: num(inv, "baseline")?,
        amplitude: num(inv, "amplitude")?,
        offset: num(inv, "offset")?,
    };
    if p.amplitude < 0.0 {
        return Err("amplitude must be non-negative".into());
    }
    let t = weather_step(&p, inv.windows.output, inv.model.output_scope.resolution);
    Ok(ModelOutput { outputs: vec![t], state: None })
}

/// `behavior`: params `beta`, `contact`, `posture`; inputs `temperature`,
/// `infected` (fraction); outputs `contact` (effective contacts), `force`
/// (β times effective contacts) and `risk` (share of contacts avoided).
pub fn behavior(inv: &Invocation<'_>) -> Result<ModelOutput, ModelError> {
    let p =
        BehaviorParams { beta: num(inv, "beta")?, contact: num(inv, "contact")?, posture: num(inv, "posture")? as u8 };
    if p.beta < 0.0 || p.contact < 0.0 {
        return Err("beta and contact must be non-negative".into());
    }
    let temp = on_grid(inv, "temperature")?;
    let infected = on_grid(inv, "infected")?;
    let mut contact = Vec::with_capacity(temp.values().len());
    let mut risk = Vec::with_capacity(temp.values().len());
    for (&t, &i) in temp.values().iter().zip(infected.values()) {
        contact.push(effective_contact(&p, t, i));
        risk.push(1.0 - risk_damping(i, p.posture));
    }
    let force = contact.iter().map(|c| c * p.beta).collect();
    Ok(ModelOutput {
        outputs: vec![series(inv, "contact", contact)?, series(inv, "force", force)?, series(inv, "risk", risk)?],
        state: None,
    })
}

/// `mixing`: inputs `contact_a`, `contact_b`; output `mixing` (vector of 4,
/// row-major).
pub fn mixing(inv: &Invocation<'_>) -> Result<ModelOutput, ModelError> {
    let a = on_grid(inv, "contact_a")?;
    let b = on_grid(inv, "contact_b")?;
    let values: Vec<f64> = a.values().iter().zip(b.values()).flat_map(|(&x, &y)| mixing_matrix(x, y)).collect();
    let out = Series::with_width("mixing", inv.windows.output, inv.model.output_scope.resolution, 4, values)
        .map_err(|e| ModelError(e.to_string()))?;
    Ok(ModelOutput { outputs: vec![out], state: None })
}

/// `seir_city` (stateful): params `population`, `initial_infected`, `sigma`,
/// `gamma`, `city` (row of the mixing matrix, 0 or 1); inputs `force`,
/// `mixing`, `other_infected` (fraction); outputs `S`, `E`, `I`, `R` and
/// `infected_fraction`.
pub fn seir_city(inv: &Invocation<'_>) -> Result<ModelOutput, ModelError> {
    let n = num(inv, "population")?;
    let rates = SeirRates { sigma: num(inv, "sigma")?, gamma: num(inv, "gamma")?, population: n };
    if n <= 0.0 || rates.sigma < 0.0 || rates.gamma < 0.0 {
        return Err("population must be positive and rates non-negative".into());
    }
    let city = num(inv, "city")? as usize;
    if city > 1 {
        return Err("city must be 0 or 1".into());
    }
    let start = match inv.state {
        Some(ModelState(v)) => SeirState::from_slice(v).ok_or("SEIR state must hold 4 values")?,
        None => SeirState::seeded(n, num(inv, "initial_infected")?),
    };
    let force = on_grid(inv, "force")?;
    let mix = on_grid(inv, "mixing")?;
    let other = on_grid(inv, "other_infected")?;
    let forcing: Vec<Forcing<f64>> = (0..force.sample_count())
        .map(|j| {
            let m = mix.sample(j);
            let (intra, inter) = if city == 0 { (m[0], m[1]) } else { (m[3], m[2]) };
            Forcing { beta_c: force.values()[j], intra, external: inter * other.values()[j] }
        })
        .collect();
    let res = inv.model.output_scope.resolution;
    let (samples, end) =
        integrate(start, inv.windows.output.lo, res, &forcing, &rates).map_err(|e| ModelError(e.to_string()))?;
    let pick = |f: &dyn Fn(&SeirState<f64>) -> f64| samples.iter().map(f).collect::<Vec<_>>();
    let outputs = vec![
        series(inv, "S", pick(&|s| s.s))?,
        series(inv, "E", pick(&|s| s.e))?,
        series(inv, "I", pick(&|s| s.i))?,
        series(inv, "R", pick(&|s| s.r))?,
        series(inv, "infected_fraction", pick(&|s| s.i / n))?,
    ];
    Ok(ModelOutput { outputs, state: Some(ModelState(end.to_array().to_vec())) })
}

/// Built-in functions plus the scenario functions.
pub fn registry() -> ModelRegistry {
    let mut r = ModelRegistry::with_builtins();
    r.register("weather", weather)
        .register("behavior", behavior)
        .register("mixing", mixing)
        .register("seir_city", seir_city);
    r
}

/// The six-model demo flow.
pub const DEMO_FLOW: &str = include_str!("../../demo/flow.toml");
/// Demo run settings: 56 ticks, two instances per model and step.
pub const DEMO_RUN: &str = include_str!("../../demo/run.toml");

pub fn demo_flow() -> FlowGraph {
    FlowGraph::from_toml_str(DEMO_FLOW).expect("demo flow parses")
}

pub fn demo_config() -> RunConfig {
    RunConfigFile::from_toml_str(DEMO_RUN)
        .expect("demo run config parses")
        .into_config(demo_flow())
        .expect("demo run config matches the flow")
}
