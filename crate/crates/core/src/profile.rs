//! Layer-wise model profile.
//!
//! Workload and size columns are cumulative over layers `1..=j`, so a cut at
//! layer `j` reads them directly. Gradient statistics are stored per layer
//! and their prefix sums are derived on construction.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants for one cut position `j`. All sizes are per data sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    /// FLOPs to forward-propagate layers `1..=j`.
    pub fp_flops_cum: f64,
    /// FLOPs to back-propagate layers `1..=j`.
    pub bp_flops_cum: f64,
    /// Bits of activations emitted at cut `j`.
    pub act_bits: f64,
    /// Bits of activation gradients returned at cut `j`.
    pub grad_bits: f64,
    /// Bits of the client sub-model holding layers `1..=j`.
    pub param_bits_cum: f64,
    /// Bounded stochastic-gradient variance of layer `j`.
    pub grad_var: f64,
    /// Bounded stochastic-gradient second moment of layer `j`.
    pub grad_sq_moment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelProfile {
    layers: Vec<LayerStats>,
    g_cum: Vec<f64>,
    sigma_total: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileRow {
    layer: usize,
    fp_flops_cum: f64,
    bp_flops_cum: f64,
    act_bits: f64,
    grad_bits: f64,
    param_bits_cum: f64,
    sigma_sq: f64,
    g_sq: f64,
}

impl ModelProfile {
    pub fn new(layers: Vec<LayerStats>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyProfile);
        }
        for (idx, l) in layers.iter().enumerate() {
            let layer = idx + 1;
            let cols = [
                ("fp_flops_cum", l.fp_flops_cum),
                ("bp_flops_cum", l.bp_flops_cum),
                ("act_bits", l.act_bits),
                ("grad_bits", l.grad_bits),
                ("param_bits_cum", l.param_bits_cum),
                ("sigma_sq", l.grad_var),
                ("g_sq", l.grad_sq_moment),
            ];
            for (column, v) in cols {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::NegativeEntry { column, layer });
                }
            }
            if l.grad_sq_moment < l.grad_var {
                return Err(Error::MomentBelowVariance { layer });
            }
        }
        for (idx, pair) in layers.windows(2).enumerate() {
            let layer = idx + 2;
            let (a, b) = (&pair[0], &pair[1]);
            if b.fp_flops_cum <= a.fp_flops_cum {
                return Err(Error::NonMonotone {
                    column: "fp_flops_cum",
                    layer,
                });
            }
            if b.bp_flops_cum <= a.bp_flops_cum {
                return Err(Error::NonMonotone {
                    column: "bp_flops_cum",
                    layer,
                });
            }
            if b.param_bits_cum <= a.param_bits_cum {
                return Err(Error::NonMonotone {
                    column: "param_bits_cum",
                    layer,
                });
            }
        }

        let mut g_cum = Vec::with_capacity(layers.len());
        let mut acc = 0.0;
        for l in &layers {
            acc += l.grad_sq_moment;
            g_cum.push(acc);
        }
        let sigma_total = layers.iter().map(|l| l.grad_var).sum();
        Ok(Self {
            layers,
            g_cum,
            sigma_total,
        })
    }

    /// Number of layers `L`.
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[LayerStats] {
        &self.layers
    }

    /// Stats for cut `cut` (1-based). Panics when out of range.
    pub fn at(&self, cut: usize) -> &LayerStats {
        &self.layers[cut - 1]
    }

    /// The last layer, i.e. the whole model.
    pub fn full(&self) -> &LayerStats {
        &self.layers[self.layers.len() - 1]
    }

    /// Prefix sums of `grad_sq_moment`, index `j - 1` holds the sum over `1..=j`.
    pub fn g_cum(&self) -> &[f64] {
        &self.g_cum
    }

    pub fn sigma_total(&self) -> f64 {
        self.sigma_total
    }

    pub fn check_cut(&self, cut: usize) -> Result<()> {
        if cut == 0 || cut > self.layers.len() {
            return Err(Error::CutOutOfRange {
                device: 0,
                cut,
                layers: self.layers.len(),
            });
        }
        Ok(())
    }

    /// Sum of per-layer second moments over layers `1..=cut`.
    pub fn cumulative_moment(&self, cut: usize) -> Result<f64> {
        self.check_cut(cut)?;
        Ok(self.g_cum[cut - 1])
    }

    /// Returns a copy with the gradient statistics replaced, e.g. by
    /// estimates measured during training.
    pub fn with_statistics(&self, sigma_sq: &[f64], g_sq: &[f64]) -> Result<Self> {
        let l = self.layers.len();
        if sigma_sq.len() != l || g_sq.len() != l {
            return Err(Error::InvalidArgument(format!(
                "expected {l} per-layer statistics, got {} / {}",
                sigma_sq.len(),
                g_sq.len()
            )));
        }
        let layers = self
            .layers
            .iter()
            .zip(sigma_sq.iter().zip(g_sq))
            .map(|(stats, (&s, &g))| LayerStats {
                grad_var: s,
                grad_sq_moment: g,
                ..*stats
            })
            .collect();
        Self::new(layers)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut layers = Vec::new();
        for (idx, row) in rdr.deserialize::<ProfileRow>().enumerate() {
            let row = row?;
            if row.layer != idx + 1 {
                return Err(Error::LayerOrder {
                    expected: idx + 1,
                    found: row.layer,
                });
            }
            layers.push(LayerStats {
                fp_flops_cum: row.fp_flops_cum,
                bp_flops_cum: row.bp_flops_cum,
                act_bits: row.act_bits,
                grad_bits: row.grad_bits,
                param_bits_cum: row.param_bits_cum,
                grad_var: row.sigma_sq,
                grad_sq_moment: row.g_sq,
            });
        }
        Self::new(layers)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for (idx, l) in self.layers.iter().enumerate() {
            wtr.serialize(ProfileRow {
                layer: idx + 1,
                fp_flops_cum: l.fp_flops_cum,
                bp_flops_cum: l.bp_flops_cum,
                act_bits: l.act_bits,
                grad_bits: l.grad_bits,
                param_bits_cum: l.param_bits_cum,
                sigma_sq: l.grad_var,
                g_sq: l.grad_sq_moment,
            })?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.to_writer(file)
    }
}

/// Loads and validates a profile CSV.
pub fn load_profile(path: impl AsRef<Path>) -> Result<ModelProfile> {
    ModelProfile::load(path)
}
