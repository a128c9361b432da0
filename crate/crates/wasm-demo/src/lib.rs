use wasm_bindgen::prelude::*;

use growth_spde::dynamics::{FullStepper, IntegratorConfig};
use growth_spde::ergodicity::{phi_construct, ConcaveMoment};
use growth_spde::noise::{NoisePath, NoiseSpec};
use growth_spde::spectral::quadratic_term;
use growth_spde::{Error, Grid, SpectralField};

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A surface evolving under the growth equation, stepped from the page.
#[wasm_bindgen]
pub struct Surface {
    h: SpectralField,
    path: NoisePath,
    stepper: FullStepper,
    step: u64,
    dt: f64,
}

impl Surface {
    pub fn create(n: usize, length: f64, dt: f64, seed: u64, amplitude: f64, unstable: bool) -> Result<Surface, Error> {
        let grid = Grid::new(length, n)?;
        let spec = NoiseSpec::from_amplitudes(vec![amplitude; grid.modes()], None)?;
        let path = NoisePath::new(&grid, spec, seed, dt)?;
        let cfg = IntegratorConfig::new(dt, dt, unstable)?;
        let stepper = FullStepper::new(&path, &cfg)?;
        Ok(Surface { h: SpectralField::zeros(&grid), path, stepper, step: 0, dt })
    }

    pub fn advance(&mut self, steps: u32) -> Result<(), Error> {
        for _ in 0..steps {
            let normals = self.path.step_normals(self.step);
            self.h = self.stepper.step_with(&self.h, Some(&normals), self.step as f64 * self.dt)?;
            self.step += 1;
        }
        Ok(())
    }
}

#[wasm_bindgen]
impl Surface {
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, length: f64, dt: f64, seed: u64, amplitude: f64, unstable: bool) -> Result<Surface, JsError> {
        Surface::create(n, length, dt, seed, amplitude, unstable).map_err(js)
    }

    pub fn step(&mut self, steps: u32) -> Result<(), JsError> {
        self.advance(steps).map_err(js)
    }

    /// Heights on the `N` grid points.
    pub fn heights(&self) -> Vec<f64> {
        self.h.synthesize()
    }

    /// `|c_k|` for `k = 1..K`.
    pub fn spectrum(&self) -> Vec<f64> {
        self.h.coeffs().iter().map(|c| c.norm()).collect()
    }

    #[wasm_bindgen(getter)]
    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    #[wasm_bindgen(getter)]
    pub fn h1_norm(&self) -> f64 {
        self.h.h1_norm_sq().sqrt()
    }

    pub fn reset(&mut self) {
        self.h = SpectralField::zeros(self.h.grid());
        self.step = 0;
    }
}

/// `<(u_x^2)_xx, u> / (|u|_L2 |(u_x^2)_xx|_L2)` for a random `u`.
pub fn cancellation(n: usize, seed: u64) -> Result<f64, Error> {
    let grid = Grid::new(2.0 * std::f64::consts::PI, n)?;
    let path = NoisePath::new(&grid, NoiseSpec::white(&grid), seed, 1.0)?;
    let u = path.sample_increment(0);
    let b = quadratic_term(&u);
    Ok(b.inner_product(&u, (0, 0))? / (b.norm_sq_l2() * u.norm_sq_l2()).sqrt())
}

#[wasm_bindgen(js_name = cancellationResidual)]
pub fn cancellation_residual(n: usize, seed: u64) -> Result<f64, JsError> {
    cancellation(n, seed).map_err(js)
}

/// Concave moment function built from positive samples.
#[wasm_bindgen]
pub struct MomentCurve {
    inner: ConcaveMoment,
}

impl MomentCurve {
    pub fn build(samples: &[f64], knots: usize) -> Result<MomentCurve, Error> {
        Ok(MomentCurve { inner: phi_construct(samples, knots)? })
    }
}

#[wasm_bindgen]
impl MomentCurve {
    #[wasm_bindgen(constructor)]
    pub fn new(samples: Vec<f64>, knots: usize) -> Result<MomentCurve, JsError> {
        MomentCurve::build(&samples, knots).map_err(js)
    }

    pub fn knots(&self) -> Vec<f64> {
        self.inner.knots.clone()
    }

    pub fn values(&self) -> Vec<f64> {
        self.inner.values.clone()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.inner.eval(x)
    }

    #[wasm_bindgen(getter)]
    pub fn concave(&self) -> bool {
        self.inner.is_concave() && self.inner.is_nondecreasing()
    }
}
