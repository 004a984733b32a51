//! Kriged Kalman filtering of time-varying shadowing. The field at sensor n
//! is `s(x,t) = ψ(x)ᵀα(t) + ν(x,t)`: a low-dimensional state tracked by a
//! Kalman filter plus a spatially correlated innovation estimated by kriging.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Grid, Location};
use crate::linalg::{cholesky_with_jitter, pinv, symmetrize};
use crate::simulator::ShadowingParams;

/// Gaussian bumps on a coarse subgrid, orthonormalized on a dense grid so
/// that `Σ_g ψ(x_g) ψ(x_g)ᵀ = I`.
#[derive(Clone, Debug)]
pub struct SpatialBasis {
    centers: Vec<Location>,
    width: f64,
    // ψ(x) = transform · φ(x) with φ the raw bumps.
    transform: DMatrix<f64>,
}

impl SpatialBasis {
    pub fn gaussian_bumps(dense: &Grid, coarse_counts: &[usize], width: f64) -> Result<Self> {
        if !(width > 0.0) || !width.is_finite() {
            return invalid("bump width must be positive");
        }
        let coarse = Grid::new(dense.region().clone(), coarse_counts.to_vec())?;
        let centers = coarse.points();
        if centers.len() > dense.len() {
            return invalid("more basis functions than dense grid points");
        }
        let mut basis = Self { centers, width, transform: DMatrix::identity(coarse.len(), coarse.len()) };
        let phi = basis.raw_matrix(&dense.points());
        let gram = phi.tr_mul(&phi);
        let chol = Cholesky::new(gram)
            .ok_or_else(|| Error::Singular("spatial basis functions are not linearly independent on the grid".into()))?;
        let l = chol.l();
        basis.transform = l
            .solve_lower_triangular(&DMatrix::identity(l.nrows(), l.nrows()))
            .ok_or_else(|| Error::Singular("basis Gram factor is singular".into()))?;
        Ok(basis)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[Location] {
        &self.centers
    }

    fn raw(&self, x: &Location) -> DVector<f64> {
        let s2 = 2.0 * self.width * self.width;
        DVector::from_iterator(self.centers.len(), self.centers.iter().map(|c| (-c.distance(x).powi(2) / s2).exp()))
    }

    fn raw_matrix(&self, locs: &[Location]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(locs.len(), self.centers.len());
        for (i, x) in locs.iter().enumerate() {
            m.set_row(i, &self.raw(x).transpose());
        }
        m
    }

    pub fn eval(&self, x: &Location) -> DVector<f64> {
        &self.transform * self.raw(x)
    }

    /// Rows ψ(x_i)ᵀ.
    pub fn matrix(&self, locs: &[Location]) -> DMatrix<f64> {
        self.raw_matrix(locs) * self.transform.transpose()
    }
}

/// State dynamics at the sensors: `s(t) = B α(t−1) + η(t)` restricted to the
/// sensor locations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dynamics {
    /// `B = ρ Ψ`
    Ar1 { rho: f64 },
    /// Explicit `B` (sensors × K).
    Matrix { b: Vec<Vec<f64>> },
}

#[derive(Clone, Debug)]
pub struct KkfModel {
    basis: SpatialBasis,
    sensors: Vec<Location>,
    psi: DMatrix<f64>,
    transition: DMatrix<f64>,
    process_cov: DMatrix<f64>,
    innovation: ShadowingParams,
    innovation_cov: DMatrix<f64>,
    noise_variance: f64,
    // Cholesky of C_ν + σ_z² I, absent when that matrix is zero.
    measurement_factor: Option<Cholesky<f64, Dyn>>,
}

impl KkfModel {
    /// `process_cov` is `C_η` over the sensors; the state process noise is
    /// `Ψ† C_η Ψ†ᵀ`.
    pub fn new(
        basis: SpatialBasis,
        sensors: Vec<Location>,
        dynamics: Dynamics,
        process_cov: DMatrix<f64>,
        innovation: ShadowingParams,
        noise_variance: f64,
    ) -> Result<Self> {
        let j = sensors.len();
        if j == 0 {
            return invalid("at least one sensor is required");
        }
        if !(noise_variance >= 0.0) {
            return invalid("noise variance must be non-negative");
        }
        innovation.validate()?;
        if process_cov.shape() != (j, j) {
            return Err(Error::DimensionMismatch { expected: j, found: process_cov.nrows() });
        }
        let psi = basis.matrix(&sensors);
        let psi_pinv = pinv(&psi);
        let b = match &dynamics {
            Dynamics::Ar1 { rho } => {
                if !rho.is_finite() {
                    return invalid("AR(1) coefficient must be finite");
                }
                &psi * *rho
            }
            Dynamics::Matrix { b } => {
                if b.len() != j || b.iter().any(|r| r.len() != basis.len()) {
                    return invalid("dynamics matrix must be sensors × basis size");
                }
                DMatrix::from_fn(j, basis.len(), |r, c| b[r][c])
            }
        };
        let transition = &psi_pinv * b;
        let mut q = &psi_pinv * &process_cov * psi_pinv.transpose();
        symmetrize(&mut q);
        let innovation_cov = DMatrix::from_fn(j, j, |a, b| innovation.covariance(sensors[a].distance(&sensors[b])));
        let mut r = innovation_cov.clone();
        for i in 0..j {
            r[(i, i)] += noise_variance;
        }
        let measurement_factor = if r.iter().all(|v| *v == 0.0) { None } else { Some(cholesky_with_jitter(&r)?.0) };
        Ok(Self {
            basis,
            sensors,
            psi,
            transition,
            process_cov: q,
            innovation,
            innovation_cov,
            noise_variance,
            measurement_factor,
        })
    }

    pub fn basis(&self) -> &SpatialBasis {
        &self.basis
    }

    pub fn sensors(&self) -> &[Location] {
        &self.sensors
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn process_noise(&self) -> &DMatrix<f64> {
        &self.process_cov
    }

    pub fn innovation_cov(&self) -> &DMatrix<f64> {
        &self.innovation_cov
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// `C_ν + σ_z² I`
    pub fn measurement_cov(&self) -> DMatrix<f64> {
        let mut r = self.innovation_cov.clone();
        for i in 0..r.nrows() {
            r[(i, i)] += self.noise_variance;
        }
        r
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KkfState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl KkfState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.shape() != (mean.len(), mean.len()) {
            return Err(Error::DimensionMismatch { expected: mean.len(), found: cov.nrows() });
        }
        Ok(Self { mean, cov })
    }
}

pub fn kkf_predict(model: &KkfModel, state: &KkfState) -> KkfState {
    let f = &model.transition;
    let mean = f * &state.mean;
    let mut cov = f * &state.cov * f.transpose() + &model.process_cov;
    symmetrize(&mut cov);
    KkfState { mean, cov }
}

/// Kalman update with measurement matrix Ψ and measurement covariance
/// `C_ν + σ_z² I`, in Joseph form.
pub fn kkf_update(model: &KkfModel, state: &KkfState, y: &DVector<f64>) -> Result<KkfState> {
    let j = model.sensors.len();
    if y.len() != j {
        return Err(Error::DimensionMismatch { expected: j, found: y.len() });
    }
    let psi = &model.psi;
    let r = model.measurement_cov();
    let ps = &state.cov * psi.transpose();
    let mut s = psi * &ps + &r;
    symmetrize(&mut s);
    let (chol, _) = cholesky_with_jitter(&s)
        .map_err(|_| Error::Singular("innovation covariance is singular".into()))?;
    // K = Σ Ψᵀ S⁻¹
    let gain = chol.solve(&ps.transpose()).transpose();
    let mean = &state.mean + &gain * (y - psi * &state.mean);
    let k = state.mean.len();
    let ikh = DMatrix::identity(k, k) - &gain * psi;
    let mut cov = &ikh * &state.cov * ikh.transpose() + &gain * r * gain.transpose();
    symmetrize(&mut cov);
    Ok(KkfState { mean, cov })
}

/// Sequential filter: state plus the kriging weights `R⁻¹ (y − Ψ α̂(t|t))`
/// of the latest update.
#[derive(Clone, Debug)]
pub struct KrigedKalmanFilter {
    model: KkfModel,
    state: KkfState,
    weights: Option<DVector<f64>>,
    time: usize,
}

impl KrigedKalmanFilter {
    pub fn new(model: KkfModel, initial: KkfState) -> Result<Self> {
        if initial.mean.len() != model.basis.len() {
            return Err(Error::DimensionMismatch { expected: model.basis.len(), found: initial.mean.len() });
        }
        Ok(Self { model, state: initial, weights: None, time: 0 })
    }

    pub fn model(&self) -> &KkfModel {
        &self.model
    }

    pub fn state(&self) -> &KkfState {
        &self.state
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn predict(&mut self) {
        self.state = kkf_predict(&self.model, &self.state);
        self.time += 1;
    }

    pub fn update(&mut self, y: &DVector<f64>) -> Result<()> {
        self.state = kkf_update(&self.model, &self.state, y)?;
        let residual = y - &self.model.psi * &self.state.mean;
        self.weights = self.model.measurement_factor.as_ref().map(|c| c.solve(&residual));
        Ok(())
    }

    /// One time step: predict then update.
    pub fn step(&mut self, y: &DVector<f64>) -> Result<()> {
        self.predict();
        self.update(y)
    }

    /// `ψ(x)ᵀ α̂(t|t)` plus the kriged innovation at x.
    pub fn estimate_shadowing(&self, x: &Location) -> f64 {
        let base = self.model.basis.eval(x).dot(&self.state.mean);
        let correction = match &self.weights {
            Some(w) => self
                .model
                .sensors
                .iter()
                .zip(w.iter())
                .map(|(s, wi)| self.model.innovation.covariance(s.distance(x)) * wi)
                .sum(),
            None => 0.0,
        };
        base + correction
    }

    /// Gain map value `l(x) − ŝ(x,t)` given the path-loss term `l(x)` in dB.
    pub fn estimate_gain_db(&self, x: &Location, path_loss_db: f64) -> f64 {
        path_loss_db - self.estimate_shadowing(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Region;
    use crate::linalg::min_eigenvalue;
    use crate::simulator::{seeded_rng, standard_normals};

    fn dense() -> Grid {
        Grid::new(Region::rect(0.0, 0.0, 10.0, 10.0).unwrap(), vec![20, 20]).unwrap()
    }

    fn basis() -> SpatialBasis {
        SpatialBasis::gaussian_bumps(&dense(), &[3, 3], 2.0).unwrap()
    }

    fn sensors(n: usize, seed: u64) -> Vec<Location> {
        let z = standard_normals(&mut seeded_rng(seed, 9), 2 * n);
        (0..n).map(|i| Location::xy(5.0 + 2.0 * z[2 * i], 5.0 + 2.0 * z[2 * i + 1])).collect()
    }

    fn random_spd(k: usize, seed: u64) -> DMatrix<f64> {
        let z = standard_normals(&mut seeded_rng(seed, 8), k * k);
        let a = DMatrix::from_vec(k, k, z);
        &a * a.transpose() + DMatrix::identity(k, k) * 0.1
    }

    #[test]
    fn basis_is_orthonormal_on_grid() {
        let b = basis();
        let psi = b.matrix(&dense().points());
        let gram = psi.tr_mul(&psi);
        assert!((gram - DMatrix::identity(9, 9)).amax() < 1e-8);
    }

    #[test]
    fn static_dynamics_leave_state_unchanged() {
        let s = sensors(12, 1);
        let m = KkfModel::new(basis(), s, Dynamics::Ar1 { rho: 1.0 }, DMatrix::zeros(12, 12), ShadowingParams::none(), 0.1)
            .unwrap();
        let st = KkfState::new(DVector::from_fn(9, |i, _| i as f64), random_spd(9, 2)).unwrap();
        let p = kkf_predict(&m, &st);
        assert!((p.mean - &st.mean).amax() < 1e-10);
        assert!((p.cov - &st.cov).amax() < 1e-10);
        let z = KkfState::new(DVector::zeros(9), DMatrix::zeros(9, 9)).unwrap();
        assert_eq!(kkf_predict(&m, &z).cov, DMatrix::zeros(9, 9));
    }

    #[test]
    fn predict_matches_textbook() {
        let s = sensors(12, 3);
        let cov = random_spd(12, 4);
        let m = KkfModel::new(basis(), s, Dynamics::Ar1 { rho: 0.8 }, cov.clone(), ShadowingParams::none(), 0.1).unwrap();
        let st = KkfState::new(DVector::from_fn(9, |i, _| (i as f64).sin()), random_spd(9, 5)).unwrap();
        let p = kkf_predict(&m, &st);
        let pp = pinv(m.psi());
        let f = &pp * (m.psi() * 0.8);
        let q = &pp * &cov * pp.transpose();
        assert!((p.mean - &f * &st.mean).amax() < 1e-12);
        assert!((p.cov - (&f * &st.cov * f.transpose() + q)).amax() < 1e-12);
    }

    #[test]
    fn exact_measurements_recover_state() {
        let b = basis();
        let s = sensors(9, 6);
        let m = KkfModel::new(b, s, Dynamics::Ar1 { rho: 1.0 }, DMatrix::zeros(9, 9), ShadowingParams::none(), 0.0).unwrap();
        let truth = DVector::from_fn(9, |i, _| 1.0 + i as f64 * 0.3);
        let y = m.psi() * &truth;
        let st = KkfState::new(DVector::zeros(9), DMatrix::identity(9, 9) * 4.0).unwrap();
        let post = kkf_update(&m, &st, &y).unwrap();
        assert!((post.mean - truth).amax() < 1e-8);
    }

    #[test]
    fn huge_noise_keeps_prior() {
        let s = sensors(12, 7);
        let m = KkfModel::new(basis(), s, Dynamics::Ar1 { rho: 1.0 }, DMatrix::zeros(12, 12), ShadowingParams::none(), 1e12)
            .unwrap();
        let st = KkfState::new(DVector::from_element(9, 1.0), DMatrix::identity(9, 9)).unwrap();
        let post = kkf_update(&m, &st, &DVector::from_element(12, 50.0)).unwrap();
        assert!((&post.mean - &st.mean).amax() / st.mean.amax() < 1e-4);
        assert!((&post.cov - &st.cov).amax() < 1e-4);
    }

    #[test]
    fn update_matches_textbook_and_stays_psd() {
        let s = sensors(12, 10);
        let nu = ShadowingParams::new(0.5, 3.0, 0.0).unwrap();
        let m = KkfModel::new(basis(), s, Dynamics::Ar1 { rho: 0.9 }, random_spd(12, 11), nu, 0.2).unwrap();
        let st = KkfState::new(DVector::from_fn(9, |i, _| i as f64 * 0.1), random_spd(9, 12)).unwrap();
        let y = DVector::from_fn(12, |i, _| (i as f64).cos());
        let post = kkf_update(&m, &st, &y).unwrap();
        let h = m.psi();
        let r = m.measurement_cov();
        let s_mat = h * &st.cov * h.transpose() + &r;
        let k = &st.cov * h.transpose() * s_mat.clone().try_inverse().unwrap();
        let mean = &st.mean + &k * (&y - h * &st.mean);
        let cov = &st.cov - &k * h * &st.cov;
        assert!((post.mean - mean).amax() < 1e-9);
        assert!((&post.cov - cov).amax() < 1e-9);
        assert!(min_eigenvalue(&post.cov) >= -1e-10);
    }

    #[test]
    fn no_innovation_means_no_correction() {
        let s = sensors(12, 13);
        let m = KkfModel::new(basis(), s, Dynamics::Ar1 { rho: 1.0 }, DMatrix::zeros(12, 12), ShadowingParams::none(), 0.3)
            .unwrap();
        let mut f = KrigedKalmanFilter::new(m, KkfState::new(DVector::zeros(9), DMatrix::identity(9, 9)).unwrap()).unwrap();
        f.step(&DVector::from_fn(12, |i, _| i as f64)).unwrap();
        let x = Location::xy(3.3, 4.4);
        let base = f.model().basis().eval(&x).dot(&f.state().mean);
        assert_eq!(f.estimate_shadowing(&x), base);
    }

    #[test]
    fn far_point_correction_vanishes() {
        let s = sensors(12, 14);
        let nu = ShadowingParams::new(1.0, 0.5, 0.0).unwrap();
        let m = KkfModel::new(basis(), s, Dynamics::Ar1 { rho: 1.0 }, DMatrix::zeros(12, 12), nu, 0.1).unwrap();
        let mut f = KrigedKalmanFilter::new(m, KkfState::new(DVector::zeros(9), DMatrix::identity(9, 9)).unwrap()).unwrap();
        f.step(&DVector::from_fn(12, |i, _| (i as f64).sin() * 3.0)).unwrap();
        let x = Location::xy(500.0, 500.0);
        let base = f.model().basis().eval(&x).dot(&f.state().mean);
        assert!((f.estimate_shadowing(&x) - base).abs() < 1e-12);
    }
}
