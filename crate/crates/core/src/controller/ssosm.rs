//! Suboptimal second-order sliding mode law with sampled peak detection.

use nalgebra::DVector;

use super::ControllerConfig;

/// Per-area memory of the switching law.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaSsosm {
    /// Latest detected extremal value of σ.
    pub xi_max: f64,
    /// σ_{k-2}, σ_{k-1}.
    history: [f64; 2],
    pub alpha: f64,
}

impl AreaSsosm {
    pub fn new(sigma0: f64) -> Self {
        Self {
            xi_max: sigma0,
            history: [sigma0, sigma0],
            alpha: 1.0,
        }
    }

    /// Consumes one σ sample and returns w. Reads only this area's data.
    pub fn step(&mut self, sigma: f64, w_max: f64, alpha_star: f64, peak_epsilon: f64) -> f64 {
        let [s2, s1] = self.history;
        if (s1 - s2) * (sigma - s1) < 0.0 && (s1 - self.xi_max).abs() > peak_epsilon {
            self.xi_max = s1;
        }
        self.history = [s1, sigma];

        let half = 0.5 * self.xi_max;
        self.alpha = if (sigma - half) * (self.xi_max - sigma) > 0.0 {
            alpha_star
        } else {
            1.0
        };
        -self.alpha * w_max * sgn(sigma - half)
    }
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Memory of all areas together with the integrated control u.
#[derive(Debug, Clone, PartialEq)]
pub struct SsosmMemory {
    pub areas: Vec<AreaSsosm>,
    pub u: DVector<f64>,
}

impl SsosmMemory {
    pub fn new(sigma0: &DVector<f64>, u0: DVector<f64>) -> Self {
        assert_eq!(sigma0.len(), u0.len());
        Self {
            areas: sigma0.iter().map(|&s| AreaSsosm::new(s)).collect(),
            u: u0,
        }
    }

    pub fn xi_max(&self) -> DVector<f64> {
        DVector::from_iterator(self.areas.len(), self.areas.iter().map(|a| a.xi_max))
    }
}

/// One controller sample: updates the extremal values and α per area,
/// returns w and integrates u ← u + w·dt.
pub fn ssosm_step(
    sigma: &DVector<f64>,
    memory: &mut SsosmMemory,
    dt: f64,
    cfg: &ControllerConfig,
) -> DVector<f64> {
    let n = memory.areas.len();
    assert_eq!(sigma.len(), n);
    let w = DVector::from_iterator(
        n,
        memory.areas.iter_mut().enumerate().map(|(i, area)| {
            area.step(sigma[i], cfg.w_max[i], cfg.alpha_star[i], cfg.peak_epsilon)
        }),
    );
    memory.u.axpy(dt, &w, 1.0);
    w
}
