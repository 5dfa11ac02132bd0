//! Control problems: coefficients `(b, σ, q, φ)` over a finite control grid.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::spectral::{SpectralOperator, StateVec};

/// Coefficients of the controlled state equation and the cost functional.
///
/// Controls are passed as the control label `u` (a value of the problem's
/// control grid). `z` in [`Dynamics::running`] has the noise dimension.
pub trait Dynamics: Send + Sync {
    fn drift(&self, t: f64, x: &StateVec, u: f64) -> StateVec;

    /// `N × M` diffusion block.
    fn diffusion(&self, t: f64, x: &StateVec, u: f64) -> DMatrix<f64>;

    /// `σ(t,x,u) w`; override when the product is cheaper than the matrix.
    fn diffusion_apply(&self, t: f64, x: &StateVec, u: f64, w: &[f64]) -> StateVec {
        let s = self.diffusion(t, x, u);
        let v = s * DVector::from_column_slice(w);
        StateVec::from_vec(v.as_slice().to_vec())
    }

    fn running(&self, t: f64, x: &StateVec, y: f64, z: &[f64], u: f64) -> f64;

    fn terminal(&self, x: &StateVec) -> f64;
}

#[derive(Clone)]
pub struct ControlProblem {
    pub name: String,
    pub op: SpectralOperator,
    pub controls: Vec<f64>,
    pub noise_dim: usize,
    pub dynamics: Arc<dyn Dynamics>,
    /// Declared Lipschitz/growth constant `L`.
    pub lip_const: f64,
    pub horizon: f64,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("name", &self.name)
            .field("dim", &self.op.dim())
            .field("noise_dim", &self.noise_dim)
            .field("controls", &self.controls)
            .field("lip_const", &self.lip_const)
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl ControlProblem {
    pub fn new(
        name: impl Into<String>,
        op: SpectralOperator,
        controls: Vec<f64>,
        noise_dim: usize,
        dynamics: Arc<dyn Dynamics>,
        lip_const: f64,
        horizon: f64,
    ) -> Result<Self> {
        if controls.is_empty() {
            return Err(Error::Argument("control grid is empty".into()));
        }
        if controls.iter().any(|u| !u.is_finite()) {
            return Err(Error::Argument("control grid contains non-finite labels".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        if !(lip_const > 0.0 && lip_const.is_finite()) {
            return Err(Error::Argument(format!("Lipschitz constant must be positive, got {lip_const}")));
        }
        if noise_dim == 0 {
            return Err(Error::Argument("noise dimension must be at least 1".into()));
        }
        Ok(Self {
            name: name.into(),
            op,
            controls,
            noise_dim,
            dynamics,
            lip_const,
            horizon,
        })
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn b(&self, t: f64, x: &StateVec, u: f64) -> StateVec {
        self.dynamics.drift(t, x, u)
    }

    pub fn sigma(&self, t: f64, x: &StateVec, u: f64) -> DMatrix<f64> {
        self.dynamics.diffusion(t, x, u)
    }

    pub fn q(&self, t: f64, x: &StateVec, y: f64, z: &[f64], u: f64) -> f64 {
        self.dynamics.running(t, x, y, z, u)
    }

    pub fn phi(&self, x: &StateVec) -> f64 {
        self.dynamics.terminal(x)
    }

    /// Same coefficients on a different generator (e.g. a Yosida approximation).
    pub fn with_operator(&self, op: SpectralOperator) -> Result<Self> {
        check_dim(self.op.dim(), op.dim())?;
        Ok(Self { op, ..self.clone() })
    }

    /// Same problem restricted to a subset of its control grid.
    pub fn with_controls(&self, controls: Vec<f64>) -> Result<Self> {
        if controls.is_empty() {
            return Err(Error::Argument("control grid is empty".into()));
        }
        Ok(Self {
            controls,
            ..self.clone()
        })
    }
}

type DriftFn = dyn Fn(f64, &StateVec, f64) -> StateVec + Send + Sync;
type DiffusionFn = dyn Fn(f64, &StateVec, f64) -> DMatrix<f64> + Send + Sync;
type RunningFn = dyn Fn(f64, &StateVec, f64, &[f64], f64) -> f64 + Send + Sync;
type TerminalFn = dyn Fn(&StateVec) -> f64 + Send + Sync;

/// Closure-backed [`Dynamics`]; unset coefficients are zero.
pub struct FnDynamics {
    dim: usize,
    noise_dim: usize,
    drift: Option<Box<DriftFn>>,
    diffusion: Option<Box<DiffusionFn>>,
    running: Option<Box<RunningFn>>,
    terminal: Option<Box<TerminalFn>>,
}

impl FnDynamics {
    pub fn new(dim: usize, noise_dim: usize) -> Self {
        Self {
            dim,
            noise_dim,
            drift: None,
            diffusion: None,
            running: None,
            terminal: None,
        }
    }

    pub fn drift(mut self, f: impl Fn(f64, &StateVec, f64) -> StateVec + Send + Sync + 'static) -> Self {
        self.drift = Some(Box::new(f));
        self
    }

    pub fn diffusion(mut self, f: impl Fn(f64, &StateVec, f64) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.diffusion = Some(Box::new(f));
        self
    }

    pub fn running(mut self, f: impl Fn(f64, &StateVec, f64, &[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        self.running = Some(Box::new(f));
        self
    }

    pub fn terminal(mut self, f: impl Fn(&StateVec) -> f64 + Send + Sync + 'static) -> Self {
        self.terminal = Some(Box::new(f));
        self
    }
}

impl Dynamics for FnDynamics {
    fn drift(&self, t: f64, x: &StateVec, u: f64) -> StateVec {
        match &self.drift {
            Some(f) => f(t, x, u),
            None => StateVec::zeros(self.dim),
        }
    }

    fn diffusion(&self, t: f64, x: &StateVec, u: f64) -> DMatrix<f64> {
        match &self.diffusion {
            Some(f) => f(t, x, u),
            None => DMatrix::zeros(self.dim, self.noise_dim),
        }
    }

    fn diffusion_apply(&self, t: f64, x: &StateVec, u: f64, w: &[f64]) -> StateVec {
        match &self.diffusion {
            Some(f) => {
                let v = f(t, x, u) * DVector::from_column_slice(w);
                StateVec::from_vec(v.as_slice().to_vec())
            }
            None => StateVec::zeros(self.dim),
        }
    }

    fn running(&self, t: f64, x: &StateVec, y: f64, z: &[f64], u: f64) -> f64 {
        self.running.as_ref().map_or(0.0, |f| f(t, x, y, z, u))
    }

    fn terminal(&self, x: &StateVec) -> f64 {
        self.terminal.as_ref().map_or(0.0, |f| f(x))
    }
}

/// Rule selecting a control index along a path.
pub trait Policy: Send + Sync {
    /// `step` counts from the start of the simulation at time `t0`.
    fn control_index(&self, step: usize, t: f64, x: &StateVec) -> usize;
}

/// The same control at every time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConstantPolicy(pub usize);

impl Policy for ConstantPolicy {
    fn control_index(&self, _step: usize, _t: f64, _x: &StateVec) -> usize {
        self.0
    }
}

impl<F> Policy for F
where
    F: Fn(usize, f64, &StateVec) -> usize + Send + Sync,
{
    fn control_index(&self, step: usize, t: f64, x: &StateVec) -> usize {
        self(step, t, x)
    }
}
