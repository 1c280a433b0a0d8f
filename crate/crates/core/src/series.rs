//! Windowed numeric series and input alignment.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::window::{Tick, TickWindow};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SeriesError {
    #[error("series `{variable}`: empty window [{t_start}, {t_end})")]
    EmptyWindow { variable: String, t_start: Tick, t_end: Tick },
    #[error("series `{variable}`: resolution {resolution} does not divide window length {len}")]
    Resolution { variable: String, resolution: u64, len: u64 },
    #[error("series `{variable}`: expected {expected} values, got {got}")]
    Length { variable: String, expected: usize, got: usize },
    #[error("series `{variable}`: width must be at least 1")]
    Width { variable: String },
}

/// Samples of one variable over `[t_start, t_end)`.
///
/// Each sample spans `resolution` ticks and holds `width` components
/// (1 for scalars). `values` is sample-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSeries<T>", into = "RawSeries<T>", bound = "T: Scalar")]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[cfg_attr(feature = "schema", schemars(with = "RawSeries<T>", bound = "T: schemars::JsonSchema"))]
pub struct SeriesWindow<T = f64> {
    variable: String,
    t_start: Tick,
    t_end: Tick,
    resolution: u64,
    width: usize,
    values: Vec<T>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct RawSeries<T> {
    pub variable: String,
    pub t_start: Tick,
    pub t_end: Tick,
    pub resolution: u64,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub width: usize,
    pub values: Vec<T>,
}

fn one() -> usize {
    1
}

fn is_one(w: &usize) -> bool {
    *w == 1
}

impl<T: Scalar> TryFrom<RawSeries<T>> for SeriesWindow<T> {
    type Error = SeriesError;

    fn try_from(raw: RawSeries<T>) -> Result<Self, Self::Error> {
        SeriesWindow::with_width(
            raw.variable,
            TickWindow::new(raw.t_start, raw.t_end),
            raw.resolution,
            raw.width,
            raw.values,
        )
    }
}

impl<T> From<SeriesWindow<T>> for RawSeries<T> {
    fn from(s: SeriesWindow<T>) -> Self {
        RawSeries {
            variable: s.variable,
            t_start: s.t_start,
            t_end: s.t_end,
            resolution: s.resolution,
            width: s.width,
            values: s.values,
        }
    }
}

impl<T: Scalar> SeriesWindow<T> {
    /// Scalar series.
    pub fn new(
        variable: impl Into<String>,
        window: TickWindow,
        resolution: u64,
        values: Vec<T>,
    ) -> Result<Self, SeriesError> {
        Self::with_width(variable, window, resolution, 1, values)
    }

    pub fn with_width(
        variable: impl Into<String>,
        window: TickWindow,
        resolution: u64,
        width: usize,
        values: Vec<T>,
    ) -> Result<Self, SeriesError> {
        let variable = variable.into();
        if window.is_empty() {
            return Err(SeriesError::EmptyWindow { variable, t_start: window.lo, t_end: window.hi });
        }
        if resolution == 0 || !window.len().is_multiple_of(resolution) {
            return Err(SeriesError::Resolution { variable, resolution, len: window.len() });
        }
        if width == 0 {
            return Err(SeriesError::Width { variable });
        }
        let expected = (window.len() / resolution) as usize * width;
        if values.len() != expected {
            return Err(SeriesError::Length { variable, expected, got: values.len() });
        }
        Ok(Self { variable, t_start: window.lo, t_end: window.hi, resolution, width, values })
    }

    /// Series holding `value` in every component of every sample.
    pub fn constant(
        variable: impl Into<String>,
        window: TickWindow,
        resolution: u64,
        width: usize,
        value: T,
    ) -> Result<Self, SeriesError> {
        let n = window.len().checked_div(resolution).unwrap_or(0) as usize * width;
        Self::with_width(variable, window, resolution, width, vec![value; n])
    }

    /// Scalar series sampled from `f(t)` at each sample's first tick.
    pub fn from_fn(
        variable: impl Into<String>,
        window: TickWindow,
        resolution: u64,
        f: impl Fn(Tick) -> T,
    ) -> Result<Self, SeriesError> {
        let res = resolution.max(1) as Tick;
        let values = (0..window.len() as Tick / res).map(|i| f(window.lo + i * res)).collect();
        Self::new(variable, window, resolution, values)
    }

    pub fn variable(&self) -> &str {
        &self.variable
    }

    pub fn window(&self) -> TickWindow {
        TickWindow::new(self.t_start, self.t_end)
    }

    pub fn resolution(&self) -> u64 {
        self.resolution
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn sample_count(&self) -> usize {
        self.values.len() / self.width
    }

    pub fn sample(&self, i: usize) -> &[T] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    /// Index of the sample covering tick `t`, if inside the window.
    pub fn sample_index_at(&self, t: Tick) -> Option<usize> {
        self.window().contains(t).then(|| ((t - self.t_start) as u64 / self.resolution) as usize)
    }

    /// Same data, relabelled.
    pub fn renamed(mut self, variable: impl Into<String>) -> Self {
        self.variable = variable.into();
        self
    }

    /// Same samples moved `by` ticks along the time axis.
    pub fn shifted(mut self, by: Tick) -> Self {
        self.t_start += by;
        self.t_end += by;
        self
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> SeriesWindow<U> {
        SeriesWindow {
            variable: self.variable.clone(),
            t_start: self.t_start,
            t_end: self.t_end,
            resolution: self.resolution,
            width: self.width,
            values: self.values.iter().copied().map(f).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Target of an alignment: one variable over one window at one resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignTarget {
    pub variable: String,
    pub window: TickWindow,
    pub resolution: u64,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum AlignError {
    #[error("coverage gap for `{variable}`: tick {tick} of {window} is not covered by any available window")]
    CoverageGap { variable: String, window: TickWindow, tick: Tick },
    #[error("`{variable}`: available windows disagree on sample width")]
    WidthMismatch { variable: String },
    #[error(transparent)]
    Target(#[from] SeriesError),
}

/// Resamples the `available` windows onto `required`.
///
/// Where windows overlap a tick, the one later in `available` wins. The
/// result is built tick by tick: every source sample is held across the
/// ticks it spans, then each target bucket takes the arithmetic mean of its
/// ticks (so coarser targets average and finer targets repeat). A bucket
/// whose ticks all carry bit-identical values keeps that value verbatim.
pub fn align_inputs<T: Scalar>(
    required: &AlignTarget,
    available: &[SeriesWindow<T>],
) -> Result<SeriesWindow<T>, AlignError> {
    let window = required.window;
    let res = required.resolution;
    if window.is_empty() || res == 0 || !window.len().is_multiple_of(res) {
        return Err(SeriesError::Resolution {
            variable: required.variable.clone(),
            resolution: res,
            len: window.len(),
        }
        .into());
    }
    let width = match available.first() {
        Some(s) => s.width,
        None => 1,
    };
    if available.iter().any(|s| s.width != width) {
        return Err(AlignError::WidthMismatch { variable: required.variable.clone() });
    }

    // Per tick of the target window: (source, sample) that owns it.
    let mut owner: Vec<Option<(usize, usize)>> = vec![None; window.len() as usize];
    for (src, series) in available.iter().enumerate() {
        let Some(overlap) = series.window().intersection(&window) else { continue };
        for t in overlap.ticks() {
            let sample = ((t - series.t_start) as u64 / series.resolution) as usize;
            owner[(t - window.lo) as usize] = Some((src, sample));
        }
    }
    if let Some(gap) = owner.iter().position(Option::is_none) {
        return Err(AlignError::CoverageGap {
            variable: required.variable.clone(),
            window,
            tick: window.lo + gap as Tick,
        });
    }

    let buckets = (window.len() / res) as usize;
    let mut values = Vec::with_capacity(buckets * width);
    for b in 0..buckets {
        let ticks = &owner[b * res as usize..(b + 1) * res as usize];
        for c in 0..width {
            let comp = |o: &Option<(usize, usize)>| {
                let (src, sample) = o.expect("coverage checked");
                available[src].sample(sample)[c]
            };
            let first = comp(&ticks[0]);
            if ticks.iter().all(|o| same_value(comp(o), first)) {
                values.push(first);
            } else {
                let sum = ticks.iter().fold(T::zero(), |acc, o| acc + comp(o));
                values.push(sum / T::lit(ticks.len() as f64));
            }
        }
    }
    Ok(SeriesWindow::with_width(required.variable.clone(), window, res, width, values)?)
}

// NaN counts as equal to itself so a NaN bucket is copied, not averaged.
fn same_value<T: Scalar>(a: T, b: T) -> bool {
    a == b || (a.is_nan() && b.is_nan())
}
