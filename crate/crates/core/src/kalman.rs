//! Constant-velocity Kalman filter over `(cx, cy, a, h)` box measurements.
//!
//! The state is `(cx, cy, a, h, vcx, vcy, va, vh)`. Process and measurement
//! noise for the position and height terms scale with the current box height,
//! so the filter behaves the same for near and far objects. The aspect ratio
//! terms use small fixed deviations instead.

use nalgebra::{Cholesky, SMatrix, SVector};

use crate::error::{Error, Result};
use crate::geometry::Xyah;

pub type StateVec = SVector<f64, 8>;
pub type StateCov = SMatrix<f64, 8, 8>;
pub type MeasCov = SMatrix<f64, 4, 4>;

/// 0.95 quantile of the chi-square distribution with 4 degrees of freedom.
pub const CHI2_95_4DOF: f64 = 9.4877;

const ASPECT_STD: f64 = 1e-2;
const ASPECT_VEL_STD: f64 = 1e-5;
const ASPECT_MEAS_STD: f64 = 1e-1;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVec,
    pub cov: StateCov,
}

impl KalmanState {
    pub fn measurement(&self) -> Xyah {
        self.mean.fixed_rows::<4>(0).into_owned()
    }
}

/// Filter parameters. The filter itself is stateless; every operation maps
/// a [`KalmanState`] to a new one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanFilter {
    pub std_weight_position: f64,
    pub std_weight_velocity: f64,
}

impl Default for KalmanFilter {
    fn default() -> Self {
        KalmanFilter {
            std_weight_position: 1.0 / 20.0,
            std_weight_velocity: 1.0 / 160.0,
        }
    }
}

fn transition() -> StateCov {
    let mut f = StateCov::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

fn observation() -> SMatrix<f64, 4, 8> {
    SMatrix::<f64, 4, 8>::identity()
}

impl KalmanFilter {
    pub fn new(std_weight_position: f64, std_weight_velocity: f64) -> Self {
        KalmanFilter {
            std_weight_position,
            std_weight_velocity,
        }
    }

    /// Starts a track from a single measurement with zero velocity.
    pub fn initiate(&self, z: &Xyah) -> Result<KalmanState> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite measurement {z:?}")));
        }
        let h = z[3];
        let wp = self.std_weight_position;
        let wv = self.std_weight_velocity;
        let std = [
            2.0 * wp * h,
            2.0 * wp * h,
            ASPECT_STD,
            2.0 * wp * h,
            10.0 * wv * h,
            10.0 * wv * h,
            ASPECT_VEL_STD,
            10.0 * wv * h,
        ];
        let mut mean = StateVec::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from(z);
        Ok(KalmanState {
            mean,
            cov: StateCov::from_diagonal(&SVector::from(std.map(|s| s * s))),
        })
    }

    fn process_noise(&self, h: f64) -> StateCov {
        let wp = self.std_weight_position;
        let wv = self.std_weight_velocity;
        let std = [
            wp * h,
            wp * h,
            ASPECT_STD,
            wp * h,
            wv * h,
            wv * h,
            ASPECT_VEL_STD,
            wv * h,
        ];
        StateCov::from_diagonal(&SVector::from(std.map(|s| s * s)))
    }

    fn measurement_noise(&self, h: f64) -> MeasCov {
        let wp = self.std_weight_position;
        let std = [wp * h, wp * h, ASPECT_MEAS_STD, wp * h];
        MeasCov::from_diagonal(&SVector::from(std.map(|s| s * s)))
    }

    /// One-frame constant-velocity prediction.
    pub fn predict(&self, s: &KalmanState) -> KalmanState {
        let f = transition();
        let q = self.process_noise(s.mean[3]);
        let mean = f * s.mean;
        let cov = symmetrize(f * s.cov * f.transpose() + q);
        KalmanState { mean, cov }
    }

    /// Projects the state into measurement space: `(H x, H P Hᵀ + R)`.
    pub fn project(&self, s: &KalmanState) -> (Xyah, MeasCov) {
        let h = observation();
        let r = self.measurement_noise(s.mean[3]);
        let cov = symmetrize(h * s.cov * h.transpose() + r);
        (s.measurement(), cov)
    }

    /// Kalman correction with measurement `z`.
    ///
    /// The covariance uses the Joseph form so it stays symmetric positive
    /// semi-definite under long update streams.
    pub fn update(&self, s: &KalmanState, z: &Xyah) -> Result<KalmanState> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite measurement {z:?}")));
        }
        let (proj_mean, proj_cov) = self.project(s);
        let chol = Cholesky::new(proj_cov).ok_or_else(|| {
            Error::Numerical("innovation covariance is not positive definite".into())
        })?;
        let h = observation();
        // K = P Hᵀ S⁻¹, solved as S Kᵀ = H P.
        let pht = s.cov * h.transpose();
        let gain = chol.solve(&pht.transpose()).transpose();
        let innovation = z - proj_mean;
        let mean = s.mean + gain * innovation;

        let i_kh = StateCov::identity() - gain * h;
        let r = self.measurement_noise(s.mean[3]);
        let cov = i_kh * s.cov * i_kh.transpose() + gain * r * gain.transpose();
        Ok(KalmanState {
            mean,
            cov: symmetrize(cov),
        })
    }

    /// Squared Mahalanobis distance of each measurement under the projected
    /// state distribution.
    pub fn gating_distance(&self, s: &KalmanState, zs: &[Xyah]) -> Result<Vec<f64>> {
        let (mean, cov) = self.project(s);
        squared_mahalanobis(&mean, &cov, zs)
    }
}

pub fn squared_mahalanobis(mean: &Xyah, cov: &MeasCov, zs: &[Xyah]) -> Result<Vec<f64>> {
    let chol = Cholesky::new(*cov)
        .ok_or_else(|| Error::Numerical("projected covariance is not positive definite".into()))?;
    let l = chol.l();
    Ok(zs
        .iter()
        .map(|z| {
            let d = z - mean;
            let y = l
                .solve_lower_triangular(&d)
                .expect("cholesky factor has a positive diagonal");
            y.norm_squared()
        })
        .collect())
}

fn symmetrize<const N: usize>(m: SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}
