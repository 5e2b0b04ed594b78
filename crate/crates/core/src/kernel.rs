//! Radially symmetric, compactly supported bivariate kernels.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre_on;

/// Probability mass of the standard bivariate normal kept inside the
/// truncation disk by default.
pub const DEFAULT_COVERAGE: f64 = 0.95;

/// Radial profile of the kernel before truncation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Standard bivariate normal density `exp(−r²/2) / 2π`.
    #[default]
    Gaussian,
}

impl Profile {
    #[inline]
    fn density(self, r2: f64) -> f64 {
        match self {
            Profile::Gaussian => (-0.5 * r2).exp() / (2.0 * PI),
        }
    }

    /// Mass of the untruncated profile inside the disk of squared radius `r2`.
    fn mass_within(self, r2: f64) -> f64 {
        match self {
            Profile::Gaussian => -(-0.5 * r2).exp_m1(),
        }
    }
}

/// Truncated radial kernel `K(u, v) = c·φ(u, v)·1(u² + v² ≤ r²)`.
///
/// `c` renormalizes the truncated profile so that `K` integrates to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    profile: Profile,
    truncation_radius: f64,
    normalizer: f64,
}

impl Default for Kernel {
    fn default() -> Self {
        Kernel::truncated_gaussian(DEFAULT_COVERAGE).expect("default coverage is valid")
    }
}

impl Kernel {
    /// Standard bivariate normal truncated to the disk holding probability
    /// `coverage`, renormalized to a density.
    pub fn truncated_gaussian(coverage: f64) -> Result<Self> {
        if !(coverage > 0.0 && coverage < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "kernel coverage must lie in (0, 1), got {coverage}"
            )));
        }
        // χ²₂ quantile in closed form
        let r2 = -2.0 * (-coverage).ln_1p();
        Self::with_radius(Profile::Gaussian, r2.sqrt())
    }

    pub fn with_radius(profile: Profile, truncation_radius: f64) -> Result<Self> {
        if !(truncation_radius.is_finite() && truncation_radius > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "truncation radius must be positive, got {truncation_radius}"
            )));
        }
        let mass = profile.mass_within(truncation_radius * truncation_radius);
        Ok(Kernel {
            profile,
            truncation_radius,
            normalizer: 1.0 / mass,
        })
    }

    /// Same support, different constant in front. Only useful for checking
    /// that estimates do not depend on the overall weight scale.
    pub fn with_normalizer(mut self, normalizer: f64) -> Self {
        assert!(normalizer > 0.0);
        self.normalizer = normalizer;
        self
    }

    pub fn profile(&self) -> Profile {
        self.profile
    }

    pub fn truncation_radius(&self) -> f64 {
        self.truncation_radius
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// `K(u, v)`; zero outside the truncation disk.
    #[inline]
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        let r2 = u * u + v * v;
        if r2 > self.truncation_radius * self.truncation_radius {
            0.0
        } else {
            self.normalizer * self.profile.density(r2)
        }
    }

    /// Bandwidth-scaled weight `h⁻² K((τ − t0)/h, (s − s0)/h)`.
    #[inline]
    pub fn weight(&self, dt: f64, ds: f64, h: f64) -> f64 {
        self.eval(dt / h, ds / h) / (h * h)
    }

    /// Moments of the kernel by product Gauss–Legendre quadrature in polar
    /// coordinates over the support disk (`quadrature_n` nodes per axis).
    pub fn moments(&self, quadrature_n: usize) -> Result<KernelMoments> {
        if quadrature_n < 64 {
            return Err(Error::InvalidArgument(format!(
                "quadrature_n must be at least 64, got {quadrature_n}"
            )));
        }
        let r_max = self.truncation_radius;
        let (radii, w_r) = gauss_legendre_on(quadrature_n, 0.0, r_max);
        // the angular integrand is a trigonometric polynomial; use an
        // equispaced rule, which is exact for it
        let n_theta = quadrature_n;
        let d_theta = 2.0 * PI / n_theta as f64;

        let mut mass = 0.0;
        let mut mu0 = 0.0;
        let mut m1 = [0.0; 2];
        let mut m2 = [[0.0; 2]; 2];
        for (&r, &wr) in radii.iter().zip(&w_r) {
            let k = self.eval(r, 0.0);
            let jac = wr * r * d_theta;
            for a in 0..n_theta {
                let theta = (a as f64 + 0.5) * d_theta;
                let (y, x) = {
                    let (s, c) = theta.sin_cos();
                    (r * s, r * c)
                };
                let w = jac * k;
                mass += w;
                mu0 += jac * k * k;
                m1[0] += w * x;
                m1[1] += w * y;
                m2[0][0] += w * x * x;
                m2[0][1] += w * x * y;
                m2[1][1] += w * y * y;
            }
        }
        m2[1][0] = m2[0][1];
        Ok(KernelMoments {
            mass,
            mu0,
            mu1: m1,
            mu2: m2,
        })
    }
}

/// Quadrature diagnostics of a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelMoments {
    /// `∬ K`.
    pub mass: f64,
    /// `∬ K²`.
    pub mu0: f64,
    /// First moments `(∬ xK, ∬ yK)`.
    pub mu1: [f64; 2],
    /// Second-moment matrix `∬ (x, y)ᵀ(x, y) K`.
    pub mu2: [[f64; 2]; 2],
}
