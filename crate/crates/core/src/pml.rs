//! Absorption profiles for the perfectly matched layer.
//!
//! The environment uses a fixed cubic ramp per axis. The latent dynamics use a
//! trainable profile: a handful of raw parameters, linearly interpolated onto
//! the latent grid and passed through a softplus so the damping rate can never
//! go negative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_grid::{Field1D, Grid1D};

/// Damping rate along one axis, in 1/s.
#[derive(Clone, Debug, PartialEq)]
pub struct PmlProfile1D {
    pub grid: Grid1D,
    pub sigma: Vec<f64>,
    pub thickness_cells: usize,
    pub scale: f64,
}

impl PmlProfile1D {
    /// Profile that damps nothing; used for closed-box control runs.
    pub fn none(grid: Grid1D) -> Self {
        Self {
            grid,
            sigma: vec![0.0; grid.n_cells()],
            thickness_cells: 0,
            scale: 0.0,
        }
    }

    pub fn as_field(&self) -> Field1D {
        Field1D {
            grid: self.grid,
            values: self.sigma.clone(),
        }
    }

    pub fn max(&self) -> f64 {
        self.sigma.iter().cloned().fold(0.0, f64::max)
    }
}

/// Cubic ramp `scale * ((T - d) / T)^3` at depth `d < T` from either boundary.
pub fn build_ramp(grid: Grid1D, thickness_cells: usize, scale: f64) -> Result<PmlProfile1D> {
    let n = grid.n_cells();
    if thickness_cells == 0 || 2 * thickness_cells >= n {
        return Err(Error::Parameter(format!(
            "PML thickness must be in 1..{} cells, got {thickness_cells}",
            n.div_ceil(2)
        )));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Parameter(format!(
            "PML scale must be positive, got {scale}"
        )));
    }
    let t = thickness_cells as f64;
    let sigma = (0..n)
        .map(|i| {
            let depth = i.min(n - 1 - i);
            if depth < thickness_cells {
                scale * ((t - depth as f64) / t).powi(3)
            } else {
                0.0
            }
        })
        .collect();
    Ok(PmlProfile1D {
        grid,
        sigma,
        thickness_cells,
        scale,
    })
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for positive arguments.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Raw, unconstrained parameters of the latent damping profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentPmlParams {
    pub raw: Vec<f64>,
    pub grid: Grid1D,
    /// Damping rate (1/s) corresponding to one unit of softplus output.
    pub scale: f64,
}

/// Linear interpolation stencil from `p` control points to `n` nodes:
/// node `i` takes `(1 - w) * raw[k] + w * raw[k + 1]`.
#[derive(Clone, Debug)]
pub struct Interp {
    taps: Vec<(usize, f64)>,
    p: usize,
}

impl Interp {
    pub fn new(p: usize, n: usize) -> Self {
        let taps = (0..n)
            .map(|i| {
                if p == 1 {
                    return (0, 0.0);
                }
                let pos = i as f64 / (n - 1) as f64 * (p - 1) as f64;
                let k = (pos.floor() as usize).min(p - 2);
                (k, pos - k as f64)
            })
            .collect();
        Self { taps, p }
    }

    pub fn apply(&self, raw: &[f64], out: &mut [f64]) {
        debug_assert_eq!(raw.len(), self.p);
        for (o, &(k, w)) in out.iter_mut().zip(&self.taps) {
            *o = if self.p == 1 {
                raw[0]
            } else {
                (1.0 - w) * raw[k] + w * raw[k + 1]
            };
        }
    }

    /// Accumulates the transpose into `raw_grad`.
    pub fn apply_transpose(&self, node_grad: &[f64], raw_grad: &mut [f64]) {
        for (g, &(k, w)) in node_grad.iter().zip(&self.taps) {
            if self.p == 1 {
                raw_grad[0] += g;
            } else {
                raw_grad[k] += (1.0 - w) * g;
                raw_grad[k + 1] += w * g;
            }
        }
    }
}

impl LatentPmlParams {
    pub fn new(raw: Vec<f64>, grid: Grid1D, scale: f64) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Parameter(
                "latent PML needs at least one parameter".into(),
            ));
        }
        Ok(Self { raw, grid, scale })
    }

    pub fn realize(&self) -> Field1D {
        let values = realize_profile(&self.raw, self.grid.n_cells(), self.scale);
        Field1D {
            grid: self.grid,
            values,
        }
    }

    /// Gradient with respect to `raw` given the gradient with respect to the
    /// realized profile.
    pub fn backward(&self, sigma_grad: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.raw.len()];
        realize_profile_backward(&self.raw, self.scale, sigma_grad, &mut out);
        out
    }
}

pub fn realize_latent_pml(params: &LatentPmlParams) -> Field1D {
    params.realize()
}

pub(crate) fn realize_profile(raw: &[f64], n: usize, scale: f64) -> Vec<f64> {
    let interp = Interp::new(raw.len(), n);
    let mut z = vec![0.0; n];
    interp.apply(raw, &mut z);
    z.iter().map(|&v| scale * softplus(v)).collect()
}

/// Accumulates into `raw_grad`.
pub(crate) fn realize_profile_backward(
    raw: &[f64],
    scale: f64,
    sigma_grad: &[f64],
    raw_grad: &mut [f64],
) {
    let n = sigma_grad.len();
    let interp = Interp::new(raw.len(), n);
    let mut z = vec![0.0; n];
    interp.apply(raw, &mut z);
    let dz: Vec<f64> = z
        .iter()
        .zip(sigma_grad)
        .map(|(&zi, &g)| g * scale * sigmoid(zi))
        .collect();
    interp.apply_transpose(&dz, raw_grad);
}
