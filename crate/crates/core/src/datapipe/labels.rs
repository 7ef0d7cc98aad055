use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const HYPOTENSION_MAP_MMHG: f64 = 65.0;
/// A qualifying event must last strictly longer than this.
pub const HYPOTENSION_MIN_DURATION_S: f64 = 60.0;
pub const HYPOTENSION_HORIZON_S: f64 = 300.0;

pub const SV_MIN_ML: f64 = 20.0;
pub const SV_MAX_ML: f64 = 200.0;

/// Mean arterial pressure samples. Each value holds from its timestamp until
/// the next one (step interpolation); the last value holds indefinitely.
#[derive(Debug, Clone, PartialEq)]
pub struct MapTrace {
    timestamps: Vec<f64>,
    map_values: Vec<f64>,
}

impl MapTrace {
    pub fn new(timestamps: Vec<f64>, map_values: Vec<f64>) -> Result<Self> {
        if timestamps.len() != map_values.len() {
            return Err(Error::Data(format!(
                "map trace has {} timestamps but {} values",
                timestamps.len(),
                map_values.len()
            )));
        }
        if timestamps.is_empty() {
            return Err(Error::Data("map trace is empty".into()));
        }
        if timestamps.iter().chain(&map_values).any(|v| !v.is_finite()) {
            return Err(Error::Data("map trace contains non-finite values".into()));
        }
        if let Some(w) = timestamps.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Data(format!("map trace timestamps not strictly increasing at {} -> {}", w[0], w[1])));
        }
        Ok(Self { timestamps, map_values })
    }

    /// A trace sampled every second starting at `start`.
    pub fn at_1hz(start: f64, map_values: Vec<f64>) -> Result<Self> {
        let timestamps = (0..map_values.len()).map(|i| start + i as f64).collect();
        Self::new(timestamps, map_values)
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn map_values(&self) -> &[f64] {
        &self.map_values
    }
}

/// 1 if MAP stays at or below 65 mmHg for a contiguous stretch longer than
/// 60 s inside `(segment_end, segment_end + 300]`, else 0.
///
/// The trace must have a sample at or before `segment_end` and one at or after
/// the end of the horizon.
pub fn label_hypotension(trace: &MapTrace, segment_end: f64) -> Result<u8> {
    let horizon_end = segment_end + HYPOTENSION_HORIZON_S;
    let ts = &trace.timestamps;
    let (first, last) = (ts[0], ts[ts.len() - 1]);
    if first > segment_end || last < horizon_end {
        return Err(Error::Data(format!(
            "map trace [{first}, {last}] s does not cover the horizon ({segment_end}, {horizon_end}] s"
        )));
    }
    // Pieces are [t_i, t_{i+1}) clipped to the horizon; adjacent low pieces merge.
    let mut run = 0.0;
    for (i, (&t, &map)) in ts.iter().zip(&trace.map_values).enumerate() {
        let next = ts.get(i + 1).copied().unwrap_or(f64::INFINITY);
        let lo = t.max(segment_end);
        let hi = next.min(horizon_end);
        if hi <= lo {
            continue;
        }
        if map <= HYPOTENSION_MAP_MMHG {
            run += hi - lo;
            if run > HYPOTENSION_MIN_DURATION_S {
                return Ok(1);
            }
        } else {
            run = 0.0;
        }
    }
    Ok(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BsaFormula {
    #[default]
    DuBois,
    Mosteller,
}

impl BsaFormula {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::DuBois => "dubois",
            Self::Mosteller => "mosteller",
        }
    }
}

impl fmt::Display for BsaFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BsaFormula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dubois" | "du_bois" => Ok(Self::DuBois),
            "mosteller" => Ok(Self::Mosteller),
            _ => Err(Error::Config(format!("unknown BSA formula {s:?} (expected dubois|mosteller)"))),
        }
    }
}

/// Body surface area in m² from height (cm) and weight (kg).
pub fn body_surface_area(height_cm: f64, weight_kg: f64, formula: BsaFormula) -> Result<f64> {
    if !(height_cm > 0.0 && height_cm.is_finite() && weight_kg > 0.0 && weight_kg.is_finite()) {
        return Err(Error::Data(format!("height {height_cm} cm / weight {weight_kg} kg must be positive")));
    }
    Ok(match formula {
        BsaFormula::DuBois => 0.007184 * weight_kg.powf(0.425) * height_cm.powf(0.725),
        BsaFormula::Mosteller => (height_cm * weight_kg / 3600.0).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HemoPoint {
    /// L/min
    pub co: f64,
    /// beats/min
    pub hr: f64,
    /// cm
    pub height: f64,
    /// kg
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SviOutcome {
    Keep { sv_ml: f64, bsa: f64, svi: f64 },
    /// Stroke volume outside [20, 200] mL.
    Drop { sv_ml: f64 },
}

impl SviOutcome {
    pub fn svi(&self) -> Option<f64> {
        match *self {
            Self::Keep { svi, .. } => Some(svi),
            Self::Drop { .. } => None,
        }
    }
}

fn stroke_volume(p: &HemoPoint) -> Result<f64> {
    if !(p.hr > 0.0 && p.hr.is_finite()) || !(p.co > 0.0 && p.co.is_finite()) {
        return Err(Error::Data(format!("hr ({}) and co ({}) must be positive", p.hr, p.co)));
    }
    Ok(p.co * 1000.0 / p.hr)
}

pub fn compute_svi(p: &HemoPoint, formula: BsaFormula) -> Result<SviOutcome> {
    let bsa = body_surface_area(p.height, p.weight, formula)?;
    compute_svi_with_bsa(p, bsa)
}

/// As [`compute_svi`] with a given BSA; height and weight are ignored.
pub fn compute_svi_with_bsa(p: &HemoPoint, bsa: f64) -> Result<SviOutcome> {
    let sv_ml = stroke_volume(p)?;
    if !(bsa > 0.0 && bsa.is_finite()) {
        return Err(Error::Data(format!("bsa {bsa} must be positive")));
    }
    if !(SV_MIN_ML..=SV_MAX_ML).contains(&sv_ml) {
        return Ok(SviOutcome::Drop { sv_ml });
    }
    Ok(SviOutcome::Keep {
        sv_ml,
        bsa,
        svi: sv_ml / bsa,
    })
}
