use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{checkpoint, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layer {
    /// First convolution, each channel averaged over space.
    EncoderEarly,
    /// Encoder output `z`.
    Latent,
    /// Output of the transition network.
    TOutput,
}

impl Layer {
    pub fn tag(self) -> &'static str {
        match self {
            Layer::EncoderEarly => "encoder-early",
            Layer::Latent => "z",
            Layer::TOutput => "t-output",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "encoder-early" => Some(Layer::EncoderEarly),
            "z" => Some(Layer::Latent),
            "t-output" => Some(Layer::TOutput),
            _ => None,
        }
    }
}

/// Mean activation of every unit in every state (and condition), with the
/// occupancy of each state during the rollout that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationDump {
    pub layer: Layer,
    pub n_units: usize,
    pub n_states: usize,
    pub conditions: Vec<String>,
    /// Row-major `[unit, state, condition]`.
    pub values: Vec<f64>,
    /// Visit fraction per state; sums to 1 over visited states.
    pub occupancy: Vec<f64>,
    /// `(x, y)` of each state (ring states use `(index, 0)`).
    pub coords: Vec<(usize, usize)>,
}

impl ActivationDump {
    pub fn new(
        layer: Layer,
        n_units: usize,
        conditions: Vec<String>,
        coords: Vec<(usize, usize)>,
        values: Vec<f64>,
        occupancy: Vec<f64>,
    ) -> Result<Self> {
        let n_states = coords.len();
        if conditions.is_empty() {
            return Err(Error::Contract(
                "a dump needs at least one condition".into(),
            ));
        }
        if values.len() != n_units * n_states * conditions.len() || occupancy.len() != n_states {
            return Err(Error::shape(
                "activation dump",
                format!(
                    "{} values and {} occupancies for {n_units} units x {n_states} states x {} conditions",
                    values.len(),
                    occupancy.len(),
                    conditions.len()
                ),
            ));
        }
        let total: f64 = occupancy.iter().sum();
        if total <= 0.0 || occupancy.iter().any(|p| *p < 0.0) {
            return Err(Error::Contract(
                "occupancy must be nonnegative with positive total".into(),
            ));
        }
        let occupancy = occupancy.iter().map(|p| p / total).collect();
        Ok(ActivationDump {
            layer,
            n_units,
            n_states,
            conditions,
            values,
            occupancy,
            coords,
        })
    }

    pub fn n_conditions(&self) -> usize {
        self.conditions.len()
    }

    pub fn condition_index(&self, label: &str) -> Option<usize> {
        self.conditions.iter().position(|c| c == label)
    }

    pub fn get(&self, unit: usize, state: usize, condition: usize) -> f64 {
        self.values[(unit * self.n_states + state) * self.n_conditions() + condition]
    }

    /// Activations of one unit across states for a condition.
    pub fn unit_profile(&self, unit: usize, condition: usize) -> Vec<f64> {
        (0..self.n_states)
            .map(|s| self.get(unit, s, condition))
            .collect()
    }

    /// Population vector in one state and condition.
    pub fn population(&self, state: usize, condition: usize) -> Vec<f64> {
        (0..self.n_units)
            .map(|u| self.get(u, state, condition))
            .collect()
    }

    pub fn state_of(&self, coord: (usize, usize)) -> Option<usize> {
        self.coords.iter().position(|c| *c == coord)
    }

    fn records(&self) -> Result<Vec<(String, Tensor<f32>)>> {
        let nc = self.n_conditions();
        let mut out = vec![
            (
                format!("activations:{}", self.layer.tag()),
                Tensor::new(
                    vec![self.n_units, self.n_states, nc],
                    self.values.iter().map(|v| *v as f32).collect(),
                )?,
            ),
            (
                "occupancy".to_string(),
                Tensor::new(
                    vec![self.n_states],
                    self.occupancy.iter().map(|v| *v as f32).collect(),
                )?,
            ),
            (
                "coords".to_string(),
                Tensor::new(
                    vec![self.n_states, 2],
                    self.coords
                        .iter()
                        .flat_map(|(x, y)| [*x as f32, *y as f32])
                        .collect(),
                )?,
            ),
        ];
        for (i, c) in self.conditions.iter().enumerate() {
            out.push((format!("condition:{c}"), Tensor::scalar(i as f32)));
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let records = self.records()?;
        Ok(checkpoint::encode(
            records.iter().map(|(n, t)| (n.as_str(), t)),
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let records = self.records()?;
        checkpoint::save(path, records.iter().map(|(n, t)| (n.as_str(), t)))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let records = checkpoint::load(path)?;
        let bad = |d: &str| Error::Format {
            path: path.to_path_buf(),
            detail: d.to_string(),
        };
        let mut acts = None;
        let mut occupancy = None;
        let mut coords = None;
        let mut conditions: Vec<(usize, String)> = Vec::new();
        for (name, t) in records {
            if let Some(tag) = name.strip_prefix("activations:") {
                let layer =
                    Layer::from_tag(tag).ok_or_else(|| bad(&format!("unknown layer tag {tag}")))?;
                acts = Some((layer, t));
            } else if name == "occupancy" {
                occupancy = Some(t);
            } else if name == "coords" {
                coords = Some(t);
            } else if let Some(label) = name.strip_prefix("condition:") {
                conditions.push((t.item() as usize, label.to_string()));
            }
        }
        let (layer, acts) = acts.ok_or_else(|| bad("no activations record"))?;
        let occupancy = occupancy.ok_or_else(|| bad("no occupancy record"))?;
        let coords = coords.ok_or_else(|| bad("no coords record"))?;
        if acts.rank() != 3 || coords.rank() != 2 {
            return Err(bad("activation or coordinate record has the wrong rank"));
        }
        conditions.sort();
        let conditions: Vec<String> = conditions.into_iter().map(|(_, c)| c).collect();
        let coords = coords
            .data()
            .chunks(2)
            .map(|c| (c[0] as usize, c[1] as usize))
            .collect();
        ActivationDump::new(
            layer,
            acts.shape()[0],
            conditions,
            coords,
            acts.data().iter().map(|v| *v as f64).collect(),
            occupancy.data().iter().map(|v| *v as f64).collect(),
        )
        .map_err(|e| bad(&e.to_string()))
    }
}
