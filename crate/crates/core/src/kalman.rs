//! Constant-velocity Kalman filter over `(cx, cy, aspect, h)` box state.
//!
//! The state is `(cx, cy, a, h, vcx, vcy, va, vh)`. Position and velocity noise
//! are proportional to the box height, so the filter behaves the same for
//! near and far objects. `dt` is one tracker step.

use nalgebra::{Cholesky, SMatrix, SVector};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Xyah};

pub type StateVector = SVector<f64, 8>;
pub type StateMatrix = SMatrix<f64, 8, 8>;
pub type MeasurementVector = SVector<f64, 4>;
pub type MeasurementMatrix = SMatrix<f64, 4, 4>;

/// 95% quantile of the chi-square distribution with 4 degrees of freedom.
pub const CHI2_95_4DOF: f64 = 9.4877;

// Fixed noise terms on the aspect ratio, which is not height-scaled.
const ASPECT_INIT_STD: f64 = 1e-2;
const ASPECT_VEL_INIT_STD: f64 = 1e-5;
const ASPECT_PROCESS_STD: f64 = 1e-2;
const ASPECT_VEL_PROCESS_STD: f64 = 1e-5;
const ASPECT_MEASUREMENT_STD: f64 = 1e-1;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseProfile {
    pub std_weight_position: f64,
    pub std_weight_velocity: f64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        NoiseProfile {
            std_weight_position: 1.0 / 20.0,
            std_weight_velocity: 1.0 / 160.0,
        }
    }
}

impl NoiseProfile {
    pub fn validate(&self) -> Result<()> {
        if self.std_weight_position > 0.0 && self.std_weight_velocity > 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "noise weights must be strictly positive, got {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVector,
    pub covariance: StateMatrix,
}

impl KalmanState {
    pub fn measurement(&self) -> Xyah {
        Xyah::from_array([self.mean[0], self.mean[1], self.mean[2], self.mean[3]])
    }

    pub fn to_bbox(&self) -> BoundingBox {
        BoundingBox::from_xyah(self.measurement())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KalmanFilter {
    pub noise: NoiseProfile,
}

fn check_height(z: &Xyah) -> Result<()> {
    if z.h > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "measurement height must be positive, got {}",
            z.h
        )))
    }
}

fn symmetrize(m: &StateMatrix) -> StateMatrix {
    (m + m.transpose()) * 0.5
}

fn diag8(std: [f64; 8]) -> StateMatrix {
    StateMatrix::from_diagonal(&StateVector::from_iterator(std.iter().map(|s| s * s)))
}

fn transition() -> StateMatrix {
    let mut f = StateMatrix::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

fn observation() -> SMatrix<f64, 4, 8> {
    SMatrix::<f64, 4, 8>::identity()
}

impl KalmanFilter {
    pub fn new(noise: NoiseProfile) -> Result<Self> {
        noise.validate()?;
        Ok(KalmanFilter { noise })
    }

    /// Start a track from an unassociated measurement; velocities are zero.
    pub fn initiate(&self, z: Xyah) -> Result<KalmanState> {
        check_height(&z)?;
        let (wp, wv, h) = (
            self.noise.std_weight_position,
            self.noise.std_weight_velocity,
            z.h,
        );
        let mut mean = StateVector::zeros();
        mean.fixed_rows_mut::<4>(0)
            .copy_from(&MeasurementVector::from(z.to_array()));
        let covariance = diag8([
            2.0 * wp * h,
            2.0 * wp * h,
            ASPECT_INIT_STD,
            2.0 * wp * h,
            10.0 * wv * h,
            10.0 * wv * h,
            ASPECT_VEL_INIT_STD,
            10.0 * wv * h,
        ]);
        Ok(KalmanState { mean, covariance })
    }

    fn process_noise(&self, h: f64) -> StateMatrix {
        let (wp, wv) = (
            self.noise.std_weight_position,
            self.noise.std_weight_velocity,
        );
        diag8([
            wp * h,
            wp * h,
            ASPECT_PROCESS_STD,
            wp * h,
            wv * h,
            wv * h,
            ASPECT_VEL_PROCESS_STD,
            wv * h,
        ])
    }

    fn measurement_noise(&self, h: f64) -> MeasurementMatrix {
        let wp = self.noise.std_weight_position;
        let std = [wp * h, wp * h, ASPECT_MEASUREMENT_STD, wp * h];
        MeasurementMatrix::from_diagonal(&MeasurementVector::from(std.map(|s| s * s)))
    }

    pub fn predict(&self, s: &KalmanState) -> KalmanState {
        let f = transition();
        let mean = f * s.mean;
        let covariance =
            symmetrize(&(f * s.covariance * f.transpose() + self.process_noise(s.mean[3])));
        KalmanState { mean, covariance }
    }

    /// Projected measurement mean and innovation covariance `S = H P Hᵀ + R`.
    pub fn project(&self, s: &KalmanState) -> (MeasurementVector, MeasurementMatrix) {
        let h = observation();
        let mean = h * s.mean;
        let cov = h * s.covariance * h.transpose() + self.measurement_noise(s.mean[3]);
        (mean, (cov + cov.transpose()) * 0.5)
    }

    pub fn update(&self, s: &KalmanState, z: Xyah) -> Result<KalmanState> {
        check_height(&z)?;
        let (proj_mean, proj_cov) = self.project(s);
        let chol = cholesky(proj_cov)?;
        let h = observation();
        // K = P Hᵀ S⁻¹, obtained by solving S Kᵀ = H P.
        let pht = s.covariance * h.transpose();
        let gain = chol.solve(&pht.transpose()).transpose();
        let innovation = MeasurementVector::from(z.to_array()) - proj_mean;
        let mean = s.mean + gain * innovation;
        // Joseph form keeps the covariance positive semidefinite.
        let ikh = StateMatrix::identity() - gain * h;
        let r = self.measurement_noise(s.mean[3]);
        let covariance =
            symmetrize(&(ikh * s.covariance * ikh.transpose() + gain * r * gain.transpose()));
        Ok(KalmanState { mean, covariance })
    }

    /// Squared Mahalanobis distance of each measurement to the projected state.
    pub fn gating_distance(&self, s: &KalmanState, zs: &[Xyah]) -> Result<Vec<f64>> {
        for z in zs {
            check_height(z)?;
        }
        let (mean, cov) = self.project(s);
        let diffs: Vec<MeasurementVector> = zs
            .iter()
            .map(|z| MeasurementVector::from(z.to_array()) - mean)
            .collect();
        squared_mahalanobis(&cov, &diffs)
    }
}

fn cholesky(s: MeasurementMatrix) -> Result<Cholesky<f64, nalgebra::Const<4>>> {
    Cholesky::new(s)
        .ok_or_else(|| Error::Numeric("innovation covariance is not positive definite".to_string()))
}

/// `dᵀ S⁻¹ d` for each `d`, through a Cholesky factor of `S`.
pub fn squared_mahalanobis(s: &MeasurementMatrix, diffs: &[MeasurementVector]) -> Result<Vec<f64>> {
    let chol = cholesky(*s)?;
    let l = chol.l();
    Ok(diffs
        .iter()
        .map(|d| {
            let y = l
                .solve_lower_triangular(d)
                .expect("Cholesky factor has a positive diagonal");
            y.norm_squared()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn kf() -> KalmanFilter {
        KalmanFilter::default()
    }

    fn z(cx: f64, cy: f64, a: f64, h: f64) -> Xyah {
        Xyah::from_array([cx, cy, a, h])
    }

    fn head(s: &KalmanState) -> [f64; 4] {
        [s.mean[0], s.mean[1], s.mean[2], s.mean[3]]
    }

    #[test]
    fn chi2_cutoff_matches_quantile() {
        let q = ChiSquared::new(4.0).unwrap().inverse_cdf(0.95);
        assert!((q - CHI2_95_4DOF).abs() < 1e-4, "{q}");
    }

    #[test]
    fn initiate_examples() {
        let s = kf().initiate(z(5.0, 5.0, 1.0, 10.0)).unwrap();
        assert_eq!(
            s.mean.as_slice(),
            &[5.0, 5.0, 1.0, 10.0, 0.0, 0.0, 0.0, 0.0]
        );
        for i in 0..8 {
            for j in 0..8 {
                if i != j {
                    assert_eq!(s.covariance[(i, j)], 0.0);
                }
            }
        }
        let d = kf().gating_distance(&s, &[s.measurement()]).unwrap();
        assert!(d[0].abs() < 1e-9);
        assert!(kf().initiate(z(0.0, 0.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn predict_examples() {
        let s = kf().initiate(z(5.0, 5.0, 1.0, 10.0)).unwrap();
        let p = kf().predict(&s);
        assert_eq!(head(&p), [5.0, 5.0, 1.0, 10.0]);
        assert!(p.covariance.trace() > s.covariance.trace());

        let mut moving = s.clone();
        moving.mean[4] = 2.0;
        moving.mean[5] = -1.0;
        assert_eq!(head(&kf().predict(&moving)), [7.0, 4.0, 1.0, 10.0]);
    }

    #[test]
    fn update_with_projected_mean_is_fixed_point() {
        let s = kf().predict(&kf().initiate(z(5.0, 5.0, 1.0, 10.0)).unwrap());
        let u = kf().update(&s, s.measurement()).unwrap();
        for (a, b) in head(&u).iter().zip(head(&s)) {
            assert!((a - b).abs() < 1e-9);
        }
        let pos_trace = |st: &KalmanState| (0..4).map(|i| st.covariance[(i, i)]).sum::<f64>();
        assert!(pos_trace(&u) <= pos_trace(&s));
    }

    #[test]
    fn repeated_update_converges_and_matches_information_form() {
        // Prior with grown uncertainty: 200 steps without a measurement.
        let mut s = kf().initiate(z(100.0, 50.0, 0.5, 10.0)).unwrap();
        for _ in 0..200 {
            s = kf().predict(&s);
        }
        let target = z(101.5, 49.0, 0.5, 10.4);
        let mut it = s.clone();
        for _ in 0..50 {
            it = kf().update(&it, target).unwrap();
        }
        for (a, b) in head(&it).iter().zip(target.to_array()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }

        // Oracle: fifty identical corrections equal one correction with R / 50,
        // solved here with an explicit inverse.
        let h = observation();
        let r = kf().measurement_noise(s.mean[3]) / 50.0;
        let sm = h * s.covariance * h.transpose() + r;
        let gain = s.covariance * h.transpose() * sm.try_inverse().unwrap();
        let oracle = s.mean + gain * (MeasurementVector::from(target.to_array()) - h * s.mean);
        for i in 0..8 {
            assert!((oracle[i] - it.mean[i]).abs() < 1e-6 * oracle[i].abs().max(1.0));
        }
    }

    #[test]
    fn mahalanobis_scales_inversely() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = MeasurementMatrix::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let s = a * a.transpose() + MeasurementMatrix::identity() * 0.5;
        let diffs: Vec<_> = (0..5)
            .map(|_| MeasurementVector::from_fn(|_, _| rng.random_range(-3.0..3.0)))
            .collect();
        let base = squared_mahalanobis(&s, &diffs).unwrap();
        for k in [0.1, 2.0, 37.5] {
            let scaled = squared_mahalanobis(&(s * k), &diffs).unwrap();
            for (b, sc) in base.iter().zip(&scaled) {
                assert!((sc - b / k).abs() <= 1e-9 * (b / k).abs());
            }
        }
    }

    #[test]
    fn singular_innovation_is_numeric_error() {
        let s = MeasurementMatrix::zeros();
        assert!(matches!(
            squared_mahalanobis(&s, &[MeasurementVector::zeros()]),
            Err(Error::Numeric(_))
        ));
        assert!(KalmanFilter::new(NoiseProfile {
            std_weight_position: 0.0,
            std_weight_velocity: 1.0
        })
        .is_err());
    }

    #[test]
    fn tracks_noiseless_constant_velocity() {
        let (mut x, mut y, h) = (100.0, 200.0, 80.0);
        let (vx, vy) = (3.0, -1.5);
        let mut s = kf().initiate(z(x, y, 0.4, h)).unwrap();
        for _ in 0..30 {
            x += vx;
            y += vy;
            s = kf().predict(&s);
            s = kf().update(&s, z(x, y, 0.4, h)).unwrap();
        }
        let err = ((s.mean[0] - x).powi(2) + (s.mean[1] - y).powi(2)).sqrt();
        assert!(err < 1e-3 * h, "{err}");
    }
}
