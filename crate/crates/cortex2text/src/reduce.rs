//! Kernel-PCA denoising of the feature space (polynomial kernel) and
//! delta / delta-delta augmentation.
//!
//! The fit double-centers the landmark Gram matrix, eigendecomposes it,
//! and scales the retained dual coefficients by 1/sqrt(lambda) so that
//! projections are orthonormal in feature space. New frames are projected
//! out-of-sample with the training centering statistics.

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const REDUCED_DIM: usize = 30;
pub const FINAL_DIM: usize = 3 * REDUCED_DIM;
pub const DEFAULT_MAX_LANDMARKS: usize = 2000;

/// Polynomial kernel k(x, y) = (gamma * <x, y> + offset)^degree.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams {
    pub degree: u32,
    pub gamma: f64,
    pub offset: f64,
}

impl KernelParams {
    /// Degree-3 kernel with gamma = 1/dim and offset 1.
    pub fn polynomial3(input_dim: usize) -> Self {
        KernelParams {
            degree: 3,
            gamma: 1.0 / input_dim as f64,
            offset: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree < 1 {
            return Err(Error::InvalidConfig("kernel degree must be >= 1".into()));
        }
        if self.gamma <= 0.0 {
            return Err(Error::InvalidConfig("kernel gamma must be > 0".into()));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        (self.gamma * dot + self.offset).powi(self.degree as i32)
    }
}

/// Fitted kernel-PCA state.
#[derive(Clone, Debug)]
pub struct KpcaModel {
    landmarks: Tensor,
    params: KernelParams,
    /// Full spectrum of the centered Gram matrix, non-increasing.
    eigenvalues: Vec<f64>,
    /// Dual coefficients, landmark-major (M x n_components), columns
    /// scaled by 1/sqrt(lambda).
    alphas: Tensor,
    /// Per-landmark Gram column means and the grand mean, for centering
    /// out-of-sample kernel vectors.
    col_means: Vec<f64>,
    grand_mean: f64,
    n_components: usize,
    /// Projections of the landmarks themselves, recorded at fit time.
    train_projections: Tensor,
}

/// Fit kernel PCA on training frames.
///
/// If `frames` holds more rows than `max_landmarks`, a seeded uniform
/// subsample is used to build the Gram matrix. Retained eigenvalues must
/// exceed 1e-10 times the largest; fewer than `n_components` of them is a
/// rank-deficiency error.
pub fn fit_kpca(
    frames: &Tensor,
    params: KernelParams,
    n_components: usize,
    max_landmarks: usize,
    seed: u64,
) -> Result<KpcaModel> {
    params.validate()?;
    let n = frames.rows();
    let dim = frames.cols();
    if n_components == 0 || n_components > max_landmarks {
        return Err(Error::InvalidConfig(format!(
            "n_components {n_components} must be in 1..=max_landmarks ({max_landmarks})"
        )));
    }
    if n < n_components {
        return Err(Error::InvalidConfig(format!(
            "{n} training frames < {n_components} components"
        )));
    }

    let landmarks = if n > max_landmarks {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, n, max_landmarks).into_vec();
        picked.sort_unstable();
        let mut data = Vec::with_capacity(max_landmarks * dim);
        for &i in &picked {
            data.extend_from_slice(frames.row(i));
        }
        Tensor::matrix(max_landmarks, dim, data)?
    } else {
        frames.clone()
    };

    let m = landmarks.rows();
    let mut gram = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let k = params.eval(landmarks.row(i), landmarks.row(j));
            gram[i * m + j] = k;
            gram[j * m + i] = k;
        }
    }

    let col_means: Vec<f64> = (0..m)
        .map(|j| (0..m).map(|i| gram[i * m + j]).sum::<f64>() / m as f64)
        .collect();
    let grand_mean = col_means.iter().sum::<f64>() / m as f64;
    let mut centered = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            centered[(i, j)] = gram[i * m + j] - col_means[i] - col_means[j] + grand_mean;
        }
    }

    let eig = centered.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    let floor = 1e-10 * eigenvalues[0].max(0.0);
    let usable = eigenvalues.iter().take_while(|&&l| l > floor).count();
    if usable < n_components {
        return Err(Error::RankDeficient);
    }

    let mut alphas = vec![0.0; m * n_components];
    for (c, &src) in order.iter().take(n_components).enumerate() {
        let scale = 1.0 / eigenvalues[c].sqrt();
        for i in 0..m {
            alphas[i * n_components + c] = eig.eigenvectors[(i, src)] * scale;
        }
    }
    let alphas = Tensor::matrix(m, n_components, alphas)?;

    // Projections of the landmarks: centered Gram times dual coefficients.
    let mut train_projections = vec![0.0; m * n_components];
    for i in 0..m {
        for c in 0..n_components {
            let mut acc = 0.0;
            for j in 0..m {
                acc += centered[(i, j)] * alphas.at(j, c);
            }
            train_projections[i * n_components + c] = acc;
        }
    }

    Ok(KpcaModel {
        landmarks,
        params,
        eigenvalues,
        alphas,
        col_means,
        grand_mean,
        n_components,
        train_projections: Tensor::matrix(m, n_components, train_projections)?,
    })
}

impl KpcaModel {
    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn input_dim(&self) -> usize {
        self.landmarks.cols()
    }

    pub fn landmarks(&self) -> &Tensor {
        &self.landmarks
    }

    pub fn params(&self) -> KernelParams {
        self.params
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn train_projections(&self) -> &Tensor {
        &self.train_projections
    }

    /// Project frames onto the retained components.
    pub fn transform(&self, frames: &Tensor) -> Result<Tensor> {
        let dim = self.landmarks.cols();
        if frames.cols() != dim {
            return Err(Error::ShapeMismatch(format!(
                "kpca transform: {} columns, model fitted on {dim}",
                frames.cols()
            )));
        }
        let m = self.landmarks.rows();
        let t = frames.rows();
        let k = self.n_components;
        let mut out = vec![0.0; t * k];
        let mut kvec = vec![0.0; m];
        for r in 0..t {
            let x = frames.row(r);
            for (j, kv) in kvec.iter_mut().enumerate() {
                *kv = self.params.eval(x, self.landmarks.row(j));
            }
            let row_mean = kvec.iter().sum::<f64>() / m as f64;
            for c in 0..k {
                let mut acc = 0.0;
                for j in 0..m {
                    let centered = kvec[j] - row_mean - self.col_means[j] + self.grand_mean;
                    acc += centered * self.alphas.at(j, c);
                }
                out[r * k + c] = acc;
            }
        }
        Tensor::matrix(t, k, out)
    }

    /// Eigenvalue share of each positive eigenvalue, non-increasing,
    /// summing to 1.
    pub fn explained_variance_ratios(&self) -> Vec<f64> {
        let floor = 1e-14 * self.eigenvalues[0].max(0.0);
        let positive: Vec<f64> = self
            .eigenvalues
            .iter()
            .copied()
            .take_while(|&l| l > floor)
            .collect();
        let total: f64 = positive.iter().sum();
        positive.iter().map(|l| l / total).collect()
    }

    /// Cumulative explained-variance curve over the positive spectrum.
    pub fn cumulative_explained_variance(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.explained_variance_ratios()
            .iter()
            .map(|r| {
                acc += r;
                acc
            })
            .collect()
    }

    /// Serialize as named arrays for the checkpoint container.
    pub fn to_entries(&self) -> Vec<(String, Tensor)> {
        vec![
            ("kpca.landmarks".into(), self.landmarks.clone()),
            ("kpca.alphas".into(), self.alphas.clone()),
            ("kpca.eigenvalues".into(), Tensor::vector(self.eigenvalues.clone())),
            ("kpca.col_means".into(), Tensor::vector(self.col_means.clone())),
            ("kpca.grand_mean".into(), Tensor::scalar(self.grand_mean)),
            (
                "kpca.kernel".into(),
                Tensor::vector(vec![self.params.degree as f64, self.params.gamma, self.params.offset]),
            ),
            ("kpca.n_components".into(), Tensor::scalar(self.n_components as f64)),
            ("kpca.train_projections".into(), self.train_projections.clone()),
        ]
    }

    pub fn from_entries(entries: &[(String, Tensor)]) -> Result<Self> {
        let find = |name: &str| -> Result<&Tensor> {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::MalformedFile {
                    path: "<kpca entries>".into(),
                    detail: format!("missing {name}"),
                })
        };
        let kernel = find("kpca.kernel")?.data();
        Ok(KpcaModel {
            landmarks: find("kpca.landmarks")?.clone(),
            params: KernelParams {
                degree: kernel[0] as u32,
                gamma: kernel[1],
                offset: kernel[2],
            },
            eigenvalues: find("kpca.eigenvalues")?.data().to_vec(),
            alphas: find("kpca.alphas")?.clone(),
            col_means: find("kpca.col_means")?.data().to_vec(),
            grand_mean: find("kpca.grand_mean")?.item(),
            n_components: find("kpca.n_components")?.item() as usize,
            train_projections: find("kpca.train_projections")?.clone(),
        })
    }
}

/// Append delta and delta-delta coefficients: `T x d -> T x 3d`, columns
/// ordered `[static | delta | delta-delta]`.
///
/// Delta is the regression estimate over a +-2 frame window with
/// replicate edge padding; delta-delta applies the same operator to the
/// deltas.
pub fn append_deltas(seq: &Tensor) -> Tensor {
    let (t, d) = (seq.rows(), seq.cols());
    let delta = delta_coefficients(seq);
    let delta2 = delta_coefficients(&delta);
    let mut out = vec![0.0; t * 3 * d];
    for r in 0..t {
        out[r * 3 * d..r * 3 * d + d].copy_from_slice(seq.row(r));
        out[r * 3 * d + d..r * 3 * d + 2 * d].copy_from_slice(delta.row(r));
        out[r * 3 * d + 2 * d..r * 3 * d + 3 * d].copy_from_slice(delta2.row(r));
    }
    Tensor::matrix(t, 3 * d, out).expect("shape by construction")
}

fn delta_coefficients(seq: &Tensor) -> Tensor {
    let (t, d) = (seq.rows(), seq.cols());
    let clamp = |i: isize| -> usize { i.clamp(0, t as isize - 1) as usize };
    // Denominator 2 * (1^2 + 2^2) = 10.
    let mut out = vec![0.0; t * d];
    for r in 0..t as isize {
        for j in 0..d {
            let mut acc = 0.0;
            for n in 1..=2isize {
                acc += n as f64 * (seq.at(clamp(r + n), j) - seq.at(clamp(r - n), j));
            }
            out[r as usize * d + j] = acc / 10.0;
        }
    }
    Tensor::matrix(t, d, out).expect("shape by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::matrix(rows, cols, data).unwrap()
    }

    /// Cyclic Jacobi eigensolver for small symmetric matrices; the
    /// independent oracle for the linear-kernel equivalence checks.
    fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = a.len();
        let mut m: Vec<Vec<f64>> = a.to_vec();
        let mut v = vec![vec![0.0; n]; n];
        for (i, row) in v.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for _sweep in 0..200 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += m[i][j] * m[i][j];
                }
            }
            if off < 1e-28 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if m[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (mkp, mkq) = (m[k][p], m[k][q]);
                        m[k][p] = c * mkp - s * mkq;
                        m[k][q] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let (mpk, mqk) = (m[p][k], m[q][k]);
                        m[p][k] = c * mpk - s * mqk;
                        m[q][k] = s * mpk + c * mqk;
                    }
                    for k in 0..n {
                        let (vkp, vkq) = (v[k][p], v[k][q]);
                        v[k][p] = c * vkp - s * vkq;
                        v[k][q] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let evals: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
        (evals, v)
    }

    /// Linear PCA oracle: center, eigendecompose the covariance with
    /// Jacobi, project.
    fn pca_scores(data: &Tensor, n_components: usize) -> (Vec<f64>, Tensor) {
        let (n, d) = (data.rows(), data.cols());
        let mean: Vec<f64> = (0..d)
            .map(|j| (0..n).map(|i| data.at(i, j)).sum::<f64>() / n as f64)
            .collect();
        let mut cov = vec![vec![0.0; d]; d];
        for i in 0..n {
            for a in 0..d {
                for b in 0..d {
                    cov[a][b] += (data.at(i, a) - mean[a]) * (data.at(i, b) - mean[b]);
                }
            }
        }
        let (evals, evecs) = jacobi_eigen(&cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&x, &y| evals[y].partial_cmp(&evals[x]).unwrap());
        let mut scores = vec![0.0; n * n_components];
        for i in 0..n {
            for (c, &src) in order.iter().take(n_components).enumerate() {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += (data.at(i, j) - mean[j]) * evecs[j][src];
                }
                scores[i * n_components + c] = acc;
            }
        }
        (mean, Tensor::matrix(n, n_components, scores).unwrap())
    }

    fn matches_up_to_sign(a: &Tensor, b: &Tensor, tol: f64) -> bool {
        assert_eq!(a.shape(), b.shape());
        let (n, k) = (a.rows(), a.cols());
        for c in 0..k {
            let mut same = 0.0_f64;
            let mut flip = 0.0_f64;
            for i in 0..n {
                same = same.max((a.at(i, c) - b.at(i, c)).abs());
                flip = flip.max((a.at(i, c) + b.at(i, c)).abs());
            }
            if same.min(flip) > tol {
                return false;
            }
        }
        true
    }

    fn linear_kernel() -> KernelParams {
        KernelParams {
            degree: 1,
            gamma: 1.0,
            offset: 0.0,
        }
    }

    #[test]
    fn linear_kernel_matches_pca_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        let data = rand_matrix(&mut rng, 200, 10);
        let model = fit_kpca(&data, linear_kernel(), 5, 200, 0).unwrap();
        let projections = model.transform(&data).unwrap();
        let (_, scores) = pca_scores(&data, 5);
        assert!(matches_up_to_sign(&projections, &scores, 1e-8));
    }

    #[test]
    fn linear_kernel_out_of_sample_matches_pca_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(304);
        let train = rand_matrix(&mut rng, 150, 8);
        let test = rand_matrix(&mut rng, 40, 8);
        let model = fit_kpca(&train, linear_kernel(), 4, 150, 0).unwrap();
        let got = model.transform(&test).unwrap();

        let (mean, _) = pca_scores(&train, 4);
        // Oracle out-of-sample projection: center by the training mean,
        // project on the training covariance eigenvectors.
        let (n, d) = (train.rows(), train.cols());
        let mut cov = vec![vec![0.0; d]; d];
        for i in 0..n {
            for a in 0..d {
                for b in 0..d {
                    cov[a][b] += (train.at(i, a) - mean[a]) * (train.at(i, b) - mean[b]);
                }
            }
        }
        let (evals, evecs) = jacobi_eigen(&cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&x, &y| evals[y].partial_cmp(&evals[x]).unwrap());
        let mut expect = vec![0.0; test.rows() * 4];
        for i in 0..test.rows() {
            for (c, &src) in order.iter().take(4).enumerate() {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += (test.at(i, j) - mean[j]) * evecs[j][src];
                }
                expect[i * 4 + c] = acc;
            }
        }
        let expect = Tensor::matrix(test.rows(), 4, expect).unwrap();
        assert!(matches_up_to_sign(&got, &expect, 1e-8));
    }

    #[test]
    fn transforming_landmarks_reproduces_training_projections() {
        let mut rng = ChaCha8Rng::seed_from_u64(305);
        let data = rand_matrix(&mut rng, 80, 12);
        let model = fit_kpca(&data, KernelParams::polynomial3(12), 6, 80, 0).unwrap();
        let again = model.transform(model.landmarks()).unwrap();
        let stored = model.train_projections();
        for (a, b) in again.data().iter().zip(stored.data()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn training_projections_have_zero_mean_per_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(306);
        let data = rand_matrix(&mut rng, 90, 7);
        let model = fit_kpca(&data, KernelParams::polynomial3(7), 5, 90, 0).unwrap();
        let p = model.train_projections();
        for c in 0..5 {
            let mean: f64 = (0..p.rows()).map(|i| p.at(i, c)).sum::<f64>() / p.rows() as f64;
            assert!(mean.abs() < 1e-8, "component {c} mean {mean}");
        }
    }

    #[test]
    fn transform_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(307);
        let data = rand_matrix(&mut rng, 60, 6);
        let model = fit_kpca(&data, KernelParams::polynomial3(6), 4, 40, 9).unwrap();
        let a = model.transform(&data).unwrap();
        let b = model.transform(&data).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn explained_variance_curve_is_monotone_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(308);
        let data = rand_matrix(&mut rng, 120, 9);
        let model = fit_kpca(&data, KernelParams::polynomial3(9), 5, 120, 0).unwrap();
        let ratios = model.explained_variance_ratios();
        for pair in ratios.windows(2) {
            assert!(pair[0] >= pair[1] - 1e-15);
        }
        assert!(ratios.iter().all(|&r| (0.0..=1.0).contains(&r)));
        let curve = model.cumulative_explained_variance();
        for pair in curve.windows(2) {
            assert!(pair[1] >= pair[0]);
        }
        let last = *curve.last().unwrap();
        assert!((last - 1.0).abs() < 1e-9, "cumulative ends at {last}");
    }

    #[test]
    fn production_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(309);
        let data = rand_matrix(&mut rng, 200, 155);
        let model = fit_kpca(&data, KernelParams::polynomial3(155), 30, 150, 1).unwrap();
        assert_eq!(model.input_dim(), 155);
        assert_eq!(model.n_components(), 30);
        let out = model.transform(&data).unwrap();
        assert_eq!(out.shape(), &[200, 30]);
    }

    #[test]
    fn rank_deficient_fit_is_rejected() {
        // Linear kernel on 5-dimensional data: the centered Gram has rank
        // at most 5, so 30 components cannot exist.
        let mut rng = ChaCha8Rng::seed_from_u64(310);
        let data = rand_matrix(&mut rng, 100, 5);
        let err = fit_kpca(&data, linear_kernel(), 30, 100, 0);
        assert!(matches!(err, Err(Error::RankDeficient)));
    }

    #[test]
    fn landmark_subsampling_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(311);
        let data = rand_matrix(&mut rng, 100, 6);
        let a = fit_kpca(&data, KernelParams::polynomial3(6), 4, 50, 7).unwrap();
        let b = fit_kpca(&data, KernelParams::polynomial3(6), 4, 50, 7).unwrap();
        let c = fit_kpca(&data, KernelParams::polynomial3(6), 4, 50, 8).unwrap();
        assert_eq!(a.landmarks().data(), b.landmarks().data());
        assert_ne!(a.landmarks().data(), c.landmarks().data());
        assert_eq!(a.landmarks().rows(), 50);
    }

    #[test]
    fn serialization_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(312);
        let data = rand_matrix(&mut rng, 40, 6);
        let model = fit_kpca(&data, KernelParams::polynomial3(6), 3, 40, 0).unwrap();
        let restored = KpcaModel::from_entries(&model.to_entries()).unwrap();
        assert_eq!(restored.n_components(), model.n_components());
        assert_eq!(restored.params(), model.params());
        let a = model.transform(&data).unwrap();
        let b = restored.transform(&data).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn deltas_of_constant_sequence_are_zero() {
        let seq = Tensor::matrix(6, 30, vec![2.5; 180]).unwrap();
        let out = append_deltas(&seq);
        assert_eq!(out.shape(), &[6, 90]);
        for r in 0..6 {
            assert_eq!(&out.row(r)[..30], seq.row(r));
            assert!(out.row(r)[30..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn deltas_of_linear_ramp() {
        // x_t = t: interior deltas are exactly 1, delta-deltas 0.
        let t = 9;
        let seq = Tensor::matrix(t, 2, (0..t).flat_map(|i| [i as f64, 2.0 * i as f64]).collect())
            .unwrap();
        let out = append_deltas(&seq);
        for r in 2..t - 2 {
            assert!((out.at(r, 2) - 1.0).abs() < 1e-12);
            assert!((out.at(r, 3) - 2.0).abs() < 1e-12);
        }
        for r in 4..t - 4 {
            assert!(out.at(r, 4).abs() < 1e-12);
            assert!(out.at(r, 5).abs() < 1e-12);
        }
    }

    #[test]
    fn deltas_match_direct_regression_formula() {
        // Independent oracle: literally pad the sequence, then evaluate
        // the regression window.
        let mut rng = ChaCha8Rng::seed_from_u64(313);
        let seq = rand_matrix(&mut rng, 50, 3);
        let out = append_deltas(&seq);

        let (t, d) = (seq.rows(), seq.cols());
        let mut padded = Vec::with_capacity(t + 4);
        padded.push(seq.row(0).to_vec());
        padded.push(seq.row(0).to_vec());
        for r in 0..t {
            padded.push(seq.row(r).to_vec());
        }
        padded.push(seq.row(t - 1).to_vec());
        padded.push(seq.row(t - 1).to_vec());
        let oracle_delta = |rows: &[Vec<f64>], r: usize, j: usize| -> f64 {
            (1.0 * (rows[r + 1][j] - rows[r - 1][j]) + 2.0 * (rows[r + 2][j] - rows[r - 2][j]))
                / (2.0 * (1.0 + 4.0))
        };
        for r in 0..t {
            for j in 0..d {
                let expect = oracle_delta(&padded, r + 2, j);
                assert!((out.at(r, d + j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn delta_anticommutes_with_reversal_on_interior_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(314);
        let seq = rand_matrix(&mut rng, 20, 4);
        let reversed = {
            let mut rows: Vec<Vec<f64>> = (0..20).map(|r| seq.row(r).to_vec()).collect();
            rows.reverse();
            Tensor::from_rows(&rows).unwrap()
        };
        let d_fwd = append_deltas(&seq);
        let d_rev = append_deltas(&reversed);
        let t = 20;
        for r in 2..t - 2 {
            for j in 0..4 {
                let a = d_rev.at(r, 4 + j);
                let b = -d_fwd.at(t - 1 - r, 4 + j);
                assert!((a - b).abs() < 1e-12, "row {r} col {j}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn single_frame_sequence() {
        let seq = Tensor::matrix(1, 30, vec![1.0; 30]).unwrap();
        let out = append_deltas(&seq);
        assert_eq!(out.shape(), &[1, 90]);
        assert!(out.row(0)[30..].iter().all(|&v| v == 0.0));
    }
}
