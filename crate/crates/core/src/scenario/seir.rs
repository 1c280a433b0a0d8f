//! SEIR compartment model with a fixed-step RK4 integrator.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeirState<T = f64> {
    pub s: T,
    pub e: T,
    pub i: T,
    pub r: T,
}

impl<T: Scalar> SeirState<T> {
    /// Everyone susceptible except `infected` infectious people.
    pub fn seeded(population: T, infected: T) -> Self {
        Self { s: population - infected, e: T::zero(), i: infected, r: T::zero() }
    }

    pub fn total(&self) -> T {
        self.s + self.e + self.i + self.r
    }

    pub fn is_nonnegative(&self) -> bool {
        self.s >= T::zero() && self.e >= T::zero() && self.i >= T::zero() && self.r >= T::zero()
    }

    pub fn to_array(self) -> [T; 4] {
        [self.s, self.e, self.i, self.r]
    }

    pub fn from_slice(v: &[T]) -> Option<Self> {
        match v {
            [s, e, i, r] => Some(Self { s: *s, e: *e, i: *i, r: *r }),
            _ => None,
        }
    }

    fn axpy(self, h: T, d: Self) -> Self {
        Self { s: self.s + h * d.s, e: self.e + h * d.e, i: self.i + h * d.i, r: self.r + h * d.r }
    }
}

/// Rates held constant over one integration interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Forcing<T = f64> {
    /// β·c_eff: transmissions per infectious contact-weighted tick.
    pub beta_c: T,
    /// Share of contacts made within the city.
    pub intra: T,
    /// Share of contacts with the other city times its infected fraction.
    pub external: T,
}

impl<T: Scalar> Forcing<T> {
    /// A single isolated city.
    pub fn isolated(beta_c: T) -> Self {
        Self { beta_c, intra: T::one(), external: T::zero() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeirRates<T = f64> {
    pub sigma: T,
    pub gamma: T,
    pub population: T,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("SEIR integration diverged at tick {tick}: no step down to 2^-{halvings} of the base step stays non-negative")]
pub struct Divergence {
    pub tick: i64,
    pub halvings: u32,
}

/// Maximum number of step halvings before giving up.
pub const MAX_HALVINGS: u32 = 30;

fn derivative<T: Scalar>(y: SeirState<T>, f: &Forcing<T>, rates: &SeirRates<T>) -> SeirState<T> {
    let lambda = f.beta_c * (f.intra * y.i / rates.population + f.external);
    let infection = lambda * y.s;
    let onset = rates.sigma * y.e;
    let recovery = rates.gamma * y.i;
    SeirState { s: -infection, e: infection - onset, i: onset - recovery, r: recovery }
}

/// One classical RK4 step of length `h`.
pub fn rk4<T: Scalar>(y: SeirState<T>, h: T, f: &Forcing<T>, rates: &SeirRates<T>) -> SeirState<T> {
    let two = T::lit(2.0);
    let half = h / two;
    let k1 = derivative(y, f, rates);
    let k2 = derivative(y.axpy(half, k1), f, rates);
    let k3 = derivative(y.axpy(half, k2), f, rates);
    let k4 = derivative(y.axpy(h, k3), f, rates);
    let sum = SeirState {
        s: k1.s + two * k2.s + two * k3.s + k4.s,
        e: k1.e + two * k2.e + two * k3.e + k4.e,
        i: k1.i + two * k2.i + two * k3.i + k4.i,
        r: k1.r + two * k2.r + two * k3.r + k4.r,
    };
    y.axpy(h / T::lit(6.0), sum)
}

/// Advances `y` by `h`, halving the step whenever a step would leave a
/// compartment negative.
fn advance<T: Scalar>(
    y: SeirState<T>,
    h: T,
    f: &Forcing<T>,
    rates: &SeirRates<T>,
    depth: u32,
) -> Result<SeirState<T>, u32> {
    let next = rk4(y, h, f, rates);
    if next.is_nonnegative() {
        return Ok(next);
    }
    if depth >= MAX_HALVINGS {
        return Err(depth);
    }
    let half = h / T::lit(2.0);
    let mid = advance(y, half, f, rates, depth + 1)?;
    advance(mid, half, f, rates, depth + 1)
}

/// Integrates from `start` at tick `t0`, one RK4 step of `resolution` ticks
/// per forcing entry.
///
/// Returns the state at the start of every step, then the state at the end
/// of the last step.
pub fn integrate<T: Scalar>(
    start: SeirState<T>,
    t0: i64,
    resolution: u64,
    forcing: &[Forcing<T>],
    rates: &SeirRates<T>,
) -> Result<(Vec<SeirState<T>>, SeirState<T>), Divergence> {
    let h = T::lit(resolution as f64);
    let mut y = start;
    let mut samples = Vec::with_capacity(forcing.len());
    for (j, f) in forcing.iter().enumerate() {
        samples.push(y);
        y = advance(y, h, f, rates, 0)
            .map_err(|halvings| Divergence { tick: t0 + (j as u64 * resolution) as i64, halvings })?;
    }
    Ok((samples, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rates(n: f64) -> SeirRates<f64> {
        SeirRates { sigma: 0.2, gamma: 0.1, population: n }
    }

    #[test]
    fn disease_free_is_constant() {
        let y0 = SeirState { s: 1000.0, e: 0.0, i: 0.0, r: 0.0 };
        let (samples, end) = integrate(y0, 0, 1, &[Forcing::isolated(0.5); 50], &rates(1000.0)).unwrap();
        assert!(samples.iter().all(|s| *s == y0));
        assert_eq!(end, y0);
    }

    #[test]
    fn no_transmission_keeps_s() {
        let y0 = SeirState { s: 900.0, e: 100.0, i: 0.0, r: 0.0 };
        let (samples, end) = integrate(y0, 0, 1, &[Forcing::isolated(0.0); 400], &rates(1000.0)).unwrap();
        assert!(samples.iter().all(|s| s.s == 900.0));
        assert!((end.r - 100.0).abs() < 1e-6, "{end:?}");
    }

    #[test]
    fn pathological_rates_diverge_or_stay_nonnegative() {
        let y0 = SeirState::seeded(1000.0, 10.0);
        let r = SeirRates { sigma: 50.0, gamma: 80.0, population: 1000.0 };
        match integrate(y0, 0, 1, &[Forcing::isolated(40.0); 20], &r) {
            Ok((samples, end)) => assert!(samples.iter().chain([&end]).all(|s| s.is_nonnegative())),
            Err(d) => assert_eq!(d.halvings, MAX_HALVINGS),
        }
    }

    #[test]
    fn f32_matches_f64_roughly() {
        let f64_run =
            integrate(SeirState::seeded(1e4, 10.0), 0, 1, &[Forcing::isolated(0.3); 100], &rates(1e4)).unwrap();
        let r32 = SeirRates { sigma: 0.2f32, gamma: 0.1, population: 1e4 };
        let f32_run =
            integrate(SeirState::seeded(1e4f32, 10.0), 0, 1, &[Forcing::isolated(0.3f32); 100], &r32).unwrap();
        assert!((f64_run.1.i - f32_run.1.i as f64).abs() / f64_run.1.i < 1e-3);
    }

    proptest! {
        #[test]
        fn conserves_and_stays_nonnegative(beta in 0.0f64..2.0, sigma in 0.01f64..1.0, gamma in 0.01f64..1.0, i0 in 1.0f64..500.0, ext in 0.0f64..0.1) {
            let n = 10_000.0;
            let r = SeirRates { sigma, gamma, population: n };
            let f = Forcing { beta_c: beta, intra: 0.8, external: ext };
            let (samples, end) = integrate(SeirState::seeded(n, i0), 0, 1, &[f; 200], &r).unwrap();
            let mut last_r = 0.0;
            for s in samples.iter().chain([&end]) {
                prop_assert!((s.total() - n).abs() <= 1e-9 * n);
                prop_assert!(s.is_nonnegative());
                prop_assert!(s.r >= last_r);
                last_r = s.r;
            }
        }
    }
}
