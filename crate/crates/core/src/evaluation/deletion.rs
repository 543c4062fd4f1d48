use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionResult, MaskingBaseline};
use crate::error::{Error, Result};
use crate::players::PlayerSet;
use crate::predictors::Predictor;
use crate::window::Window;

/// Guards `floor(r·T·D)` against grid fractions stored just below a multiple
/// of `1/(T·D)`.
const FLOOR_EPS: f64 = 1e-9;
const MIN_PROB: f64 = 1e-12;

/// Cell-level attribution at the window's resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceMap {
    t_len: usize,
    d_len: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImportanceMapDoc {
    #[serde(rename = "T")]
    t_len: usize,
    #[serde(rename = "D")]
    d_len: usize,
    values: Vec<Vec<f64>>,
}

impl ImportanceMap {
    pub fn new(t_len: usize, d_len: usize, values: Vec<f64>) -> Result<Self> {
        let w = Window::new(t_len, d_len, values)?;
        Ok(Self { t_len, d_len, values: w.as_slice().to_vec() })
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn d_len(&self) -> usize {
        self.d_len
    }

    /// Row-major values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, t: usize, d: usize) -> f64 {
        self.values[t * self.d_len + d]
    }

    /// Cell indices by descending value; ties keep row-major order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]).then(a.cmp(&b)));
        order
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One row per time step, one column per variable, with a header row.
    pub fn to_csv(&self, variable_names: &[String]) -> Result<String> {
        if variable_names.len() != self.d_len {
            return Err(Error::shape(format!("{} variable names", self.d_len), variable_names.len()));
        }
        let mut out = variable_names.join(",");
        out.push('\n');
        for row in self.values.chunks(self.d_len) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        Ok(out)
    }
}

impl Serialize for ImportanceMap {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        ImportanceMapDoc {
            t_len: self.t_len,
            d_len: self.d_len,
            values: self.values.chunks(self.d_len.max(1)).map(<[f64]>::to_vec).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ImportanceMap {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = ImportanceMapDoc::deserialize(deserializer)?;
        let map = Window::from_rows(&doc.values)
            .and_then(|w| ImportanceMap::new(w.t_len(), w.d_len(), w.as_slice().to_vec()))
            .map_err(serde::de::Error::custom)?;
        if (map.t_len, map.d_len) != (doc.t_len, doc.d_len) {
            return Err(serde::de::Error::custom("importance map shape disagrees with T and D"));
        }
        Ok(map)
    }
}

/// Spreads each player's value uniformly over its cells.
pub fn project_to_cells(result: &AttributionResult, players: &PlayerSet) -> Result<ImportanceMap> {
    if result.phi.len() != players.len() {
        return Err(Error::shape(format!("{} attributions", players.len()), result.phi.len()));
    }
    let shares: Vec<f64> = players
        .players()
        .iter()
        .zip(&result.phi)
        .map(|(p, phi)| phi / p.cell_count() as f64)
        .collect();
    let values = players.owners().iter().map(|&o| shares[o]).collect();
    ImportanceMap::new(players.t_len(), players.d_len(), values)
}

/// `i/20` for `i = 0..=20`.
pub fn default_fractions() -> Vec<f64> {
    (0..=20).map(|i| f64::from(i) / 20.0).collect()
}

/// Number of cells masked at deletion fraction `fraction`.
pub fn masked_count(fraction: f64, cells: usize) -> usize {
    ((fraction * cells as f64 + FLOOR_EPS).floor() as usize).min(cells)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// `(f(masked) − f(original))²`.
    #[default]
    OutputDeviation,
    /// `(f(masked) − label)²`.
    SquaredError,
    /// `−ln f(masked)` for a predictor that returns the class probability.
    NegLogProb,
}

impl LossMode {
    fn loss(self, output: f64, original: f64, label: Option<f64>) -> Result<f64> {
        match self {
            LossMode::OutputDeviation => Ok((output - original).powi(2)),
            LossMode::SquaredError => {
                let y = label.ok_or_else(|| Error::invalid("squared_error loss needs a label"))?;
                Ok((output - y).powi(2))
            }
            LossMode::NegLogProb => {
                if !(0.0..=1.0).contains(&output) {
                    return Err(Error::Predictor(format!(
                        "neg_log_prob loss needs probabilities, got {output}"
                    )));
                }
                Ok(-output.max(MIN_PROB).ln())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeletionCurve {
    pub fractions: Vec<f64>,
    pub delta_loss: Vec<f64>,
}

impl DeletionCurve {
    pub fn new(fractions: Vec<f64>, delta_loss: Vec<f64>) -> Result<Self> {
        check_fractions(&fractions)?;
        if delta_loss.len() != fractions.len() {
            return Err(Error::shape(format!("{} losses", fractions.len()), delta_loss.len()));
        }
        if delta_loss.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("delta losses must be finite and non-negative"));
        }
        Ok(Self { fractions, delta_loss })
    }

    /// Δloss at a grid fraction, matched within 1e-12.
    pub fn at(&self, fraction: f64) -> Option<f64> {
        self.fractions
            .iter()
            .position(|f| (f - fraction).abs() <= 1e-12)
            .map(|i| self.delta_loss[i])
    }

    /// Pointwise mean of curves on a common grid.
    pub fn mean(curves: &[DeletionCurve]) -> Result<Self> {
        let first = curves.first().ok_or_else(|| Error::invalid("no curves to average"))?;
        if curves.iter().any(|c| c.fractions != first.fractions) {
            return Err(Error::invalid("curves use different fraction grids"));
        }
        let n = curves.len() as f64;
        let delta_loss = (0..first.fractions.len())
            .map(|i| curves.iter().map(|c| c.delta_loss[i]).sum::<f64>() / n)
            .collect();
        Ok(Self { fractions: first.fractions.clone(), delta_loss })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,delta_loss\n");
        for (f, v) in self.fractions.iter().zip(&self.delta_loss) {
            out.push_str(&format!("{f},{v}\n"));
        }
        out
    }
}

fn check_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.first() != Some(&0.0) {
        return Err(Error::invalid("deletion fractions must start at 0"));
    }
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::invalid(format!("deletion fraction {f} outside [0, 1]")));
    }
    if fractions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("deletion fractions must be strictly ascending"));
    }
    Ok(())
}

/// Masks the top-ranked cells of `map` at each fraction and records the loss
/// increase over the unmasked window, clipped at zero.
pub fn deletion_curve<P: Predictor + ?Sized>(
    predictor: &P,
    window: &Window,
    map: &ImportanceMap,
    fractions: &[f64],
    baseline: &MaskingBaseline,
    loss_mode: LossMode,
    label: Option<f64>,
) -> Result<DeletionCurve> {
    check_fractions(fractions)?;
    if (map.t_len, map.d_len) != (window.t_len(), window.d_len()) {
        return Err(Error::shape(
            format!("{}x{} map", window.t_len(), window.d_len()),
            format!("{}x{}", map.t_len, map.d_len),
        ));
    }
    let fill = baseline.fill(window.t_len(), window.d_len())?;
    let cells = map.values.len();
    let ranking = map.ranking();
    let mut current = window.clone();
    let mut done = 0;
    let mut batch = Vec::with_capacity(fractions.len());
    for &r in fractions {
        let target = masked_count(r, cells);
        for &c in &ranking[done..target] {
            current.as_mut_slice()[c] = fill.as_slice()[c];
        }
        done = target;
        batch.push(current.clone());
    }
    let outputs = predictor.predict(&batch)?;
    if outputs.len() != batch.len() || outputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Predictor("predictor returned a bad deletion batch".into()));
    }
    let original = predictor.predict(std::slice::from_ref(window))?;
    let original = *original
        .first()
        .ok_or_else(|| Error::Predictor("predictor returned no output".into()))?;
    let losses = outputs
        .iter()
        .map(|&y| loss_mode.loss(y, original, label))
        .collect::<Result<Vec<_>>>()?;
    let delta_loss = losses.iter().map(|l| (l - losses[0]).max(0.0)).collect();
    DeletionCurve::new(fractions.to_vec(), delta_loss)
}

/// Trapezoidal area under Δloss over the fraction grid.
pub fn delta_auc(curve: &DeletionCurve) -> f64 {
    curve
        .fractions
        .windows(2)
        .zip(curve.delta_loss.windows(2))
        .map(|(f, v)| (f[1] - f[0]) * (v[0] + v[1]) / 2.0)
        .sum()
}
