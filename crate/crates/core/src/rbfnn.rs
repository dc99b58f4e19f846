//! Gaussian radial-basis-function networks with a norm-capped projection
//! adaptive law, plus the `tanh` robustifying term.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance for "on the cap" in the projection case split.
pub const CAP_TOLERANCE: f64 = 1e-9;

/// Centers and widths of a Gaussian RBF layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfBasis {
    /// `q × input_dim`, one center per row.
    centers: DMatrix<f64>,
    widths: Vec<f64>,
}

impl RbfBasis {
    pub fn new(centers: DMatrix<f64>, widths: Vec<f64>) -> Result<Self> {
        if centers.nrows() == 0 {
            return Err(Error::InvalidScenario("RBF network needs at least one neuron".into()));
        }
        if widths.len() != centers.nrows() {
            return Err(Error::DimensionMismatch {
                expected: centers.nrows(),
                got: widths.len(),
                context: "one width per RBF center",
            });
        }
        if let Some(w) = widths.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidScenario(format!("RBF width must be positive, got {w}")));
        }
        Ok(Self { centers, widths })
    }

    /// Scalar centers `c_k` placed on the diagonal of the input space,
    /// `μ_k = c_k·𝟙`, all with the same width.
    pub fn diagonal(scalar_centers: &[f64], input_dim: usize, width: f64) -> Result<Self> {
        let q = scalar_centers.len();
        let centers = DMatrix::from_fn(q, input_dim, |k, _| scalar_centers[k]);
        Self::new(centers, vec![width; q])
    }

    pub fn n_neurons(&self) -> usize {
        self.centers.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn centers(&self) -> &DMatrix<f64> {
        &self.centers
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    /// `s_k(z) = exp(−‖z − μ_k‖² / ρ_k²)`.
    pub fn activation(&self, z: &[f64]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.n_neurons());
        self.activation_into(z, out.as_mut_slice())?;
        Ok(out)
    }

    pub fn activation_into(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        if z.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: z.len(),
                context: "RBF input",
            });
        }
        for (k, s) in out.iter_mut().enumerate() {
            let dist2: f64 = z
                .iter()
                .enumerate()
                .map(|(c, zc)| (zc - self.centers[(k, c)]).powi(2))
                .sum();
            *s = (-dist2 / (self.widths[k] * self.widths[k])).exp();
        }
        Ok(())
    }
}

/// Adaptation and robustification constants shared by every player.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbfParams {
    /// Cap on `trace(ŴᵀŴ)`.
    pub w_max: f64,
    /// Learning rate of the adaptive law.
    pub beta: f64,
    /// Amplitude of the damping term.
    pub delta: f64,
    /// Sharpness of the damping term.
    pub epsilon: f64,
}

impl Default for RbfParams {
    fn default() -> Self {
        Self {
            w_max: 500.0,
            beta: 100.0,
            delta: 10.0,
            epsilon: 0.01,
        }
    }
}

impl RbfParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w_max", self.w_max),
            ("beta", self.beta),
            ("delta", self.delta),
            ("epsilon", self.epsilon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidScenario(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// A network together with its current weight estimate `Ŵ` (`q × d_out`).
#[derive(Debug, Clone)]
pub struct RbfNetwork {
    pub basis: RbfBasis,
    pub weights: DMatrix<f64>,
    pub params: RbfParams,
}

impl RbfNetwork {
    /// Network with `Ŵ = 0`.
    pub fn new(basis: RbfBasis, output_dim: usize, params: RbfParams) -> Self {
        let q = basis.n_neurons();
        Self {
            basis,
            weights: DMatrix::zeros(q, output_dim),
            params,
        }
    }

    /// `ŴᵀS(z)`.
    pub fn approximate(&self, z: &[f64]) -> Result<DVector<f64>> {
        let s = self.basis.activation(z)?;
        Ok(self.weights.tr_mul(&s))
    }

    pub fn weight_norm_sq(&self) -> f64 {
        self.weights.norm_squared()
    }

    pub fn weight_derivative(&self, s: &[f64], e: &[f64]) -> Result<DMatrix<f64>> {
        weight_derivative(&self.weights, s, e, self.params.beta, self.params.w_max)
    }
}

/// Projection adaptive law `dŴ/dt` for activation `s` and regulation signal `e`.
///
/// Inside the cap, or on it with `eᵀŴᵀS < 0`, this is `β S eᵀ`. On the cap
/// with `eᵀŴᵀS ≥ 0` the radial component is removed:
/// `β S eᵀ − β (eᵀŴᵀS / tr(ŴᵀŴ)) Ŵ`, so `⟨Ŵ, dŴ/dt⟩ = 0`.
pub fn weight_derivative(
    weights: &DMatrix<f64>,
    s: &[f64],
    e: &[f64],
    beta: f64,
    w_max: f64,
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(weights.nrows(), weights.ncols());
    weight_derivative_into(weights.as_slice(), weights.nrows(), s, e, beta, w_max, out.as_mut_slice())?;
    Ok(out)
}

/// Slice form of [`weight_derivative`]: `weights` and `out` are column-major
/// `q × d_out` buffers.
pub fn weight_derivative_into(
    weights: &[f64],
    q: usize,
    s: &[f64],
    e: &[f64],
    beta: f64,
    w_max: f64,
    out: &mut [f64],
) -> Result<()> {
    projection_law(weights, q, s, e, beta, w_max, true, out)
}

/// Like [`weight_derivative_into`] but treats weights beyond the cap as on
/// it instead of failing. Runge–Kutta stage states may overshoot the cap by
/// `O(dt)`; only committed states are required to respect it.
pub fn stage_weight_derivative_into(
    weights: &[f64],
    q: usize,
    s: &[f64],
    e: &[f64],
    beta: f64,
    w_max: f64,
    out: &mut [f64],
) -> Result<()> {
    projection_law(weights, q, s, e, beta, w_max, false, out)
}

#[allow(clippy::too_many_arguments)]
fn projection_law(
    weights: &[f64],
    q: usize,
    s: &[f64],
    e: &[f64],
    beta: f64,
    w_max: f64,
    strict: bool,
    out: &mut [f64],
) -> Result<()> {
    let d_out = e.len();
    if s.len() != q || weights.len() != q * d_out || out.len() != q * d_out {
        return Err(Error::DimensionMismatch {
            expected: q * d_out,
            got: weights.len(),
            context: "weight matrix / activation / regulation signal",
        });
    }
    let trace: f64 = weights.iter().map(|w| w * w).sum();
    if strict && trace > w_max * (1.0 + CAP_TOLERANCE) {
        return Err(Error::CapViolated { trace, w_max });
    }
    for c in 0..d_out {
        for k in 0..q {
            out[c * q + k] = beta * s[k] * e[c];
        }
    }
    if trace >= w_max * (1.0 - CAP_TOLERANCE) {
        // eᵀ Ŵᵀ S
        let mut drive = 0.0;
        for c in 0..d_out {
            let col: f64 = (0..q).map(|k| weights[c * q + k] * s[k]).sum();
            drive += e[c] * col;
        }
        if drive >= 0.0 {
            let scale = beta * drive / trace;
            for (o, w) in out.iter_mut().zip(weights) {
                *o -= scale * w;
            }
        }
    }
    Ok(())
}

/// Radially rescales `weights` back onto the cap if integration drifted past it.
/// Returns whether a rescale happened.
pub fn clamp_to_cap(weights: &mut [f64], w_max: f64) -> bool {
    let trace: f64 = weights.iter().map(|w| w * w).sum();
    if trace > w_max {
        let scale = (w_max / trace).sqrt();
        weights.iter_mut().for_each(|w| *w *= scale);
        true
    } else {
        false
    }
}

/// The constant `𝒦` solving `𝒦 = e^{−(𝒦+1)}` (≈ 0.2785).
///
/// It is the sharpest constant with `0 ≤ |η| − η·tanh(η/ε) ≤ 𝒦ε`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct TanhConstant(f64);

impl TanhConstant {
    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn tanh_kappa() -> TanhConstant {
    // The map is a contraction with slope −𝒦 at the fixed point; the damping
    // factor brings the iteration's slope close to zero.
    let damping = 1.0 / 1.28;
    let mut k = 0.25f64;
    for _ in 0..200 {
        let next = (1.0 - damping) * k + damping * (-(k + 1.0)).exp();
        let done = (next - k).abs() < 1e-16;
        k = next;
        if done {
            break;
        }
    }
    TanhConstant(k)
}

/// `φ = δ·tanh(𝒦 δ e / ε)` component-wise.
pub fn damping_phi(e: &[f64], delta: f64, epsilon: f64, kappa: TanhConstant) -> Vec<f64> {
    let mut out = vec![0.0; e.len()];
    damping_phi_into(e, delta, epsilon, kappa, &mut out);
    out
}

pub fn damping_phi_into(e: &[f64], delta: f64, epsilon: f64, kappa: TanhConstant, out: &mut [f64]) {
    let gain = kappa.value() * delta / epsilon;
    for (o, ei) in out.iter_mut().zip(e) {
        *o = delta * (gain * ei).tanh();
    }
}
