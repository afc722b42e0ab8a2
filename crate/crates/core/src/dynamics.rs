//! Learned vector fields, with and without the conservation projection.
//!
//! The projected model removes from `f(x)` its component along the span of
//! the invariant gradients `G = ∇ₓH(x)`:
//!
//! ```text
//! f̃ = f − Σᵢ (qᵢ·f) qᵢ,   q = Gram-Schmidt(G)
//! ```
//!
//! so `dH/dt = Gᵀf̃ = 0` along the continuous flow. The invariant net is
//! frozen, which makes `dL/df = P·dL/df̃` with `P = I − QQᵀ` exact.

use std::path::{Component, Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    adam_step, init_params, input_jacobian_batch, mlp_eval, mlp_forward_batch, AdamState,
    Checkpoint, MlpParams, MlpSpec,
};
use crate::conservation::ConservationNet;
use crate::linalg::{dot, Matrix};
use crate::rng::{derive_rng, derive_seed};
use crate::systems::Dataset;
use crate::{Error, Result};

/// Default column drop tolerance, relative to the largest column norm.
pub const DEFAULT_DROP_TOL: f64 = 1e-8;
const DROP_TOL_FLOOR: f64 = 1e-12;

/// Absolute drop tolerance for `g` given a relative one.
pub fn absolute_drop_tol(g: &Matrix, rel: f64) -> f64 {
    let max_norm = (0..g.cols())
        .map(|c| (0..g.rows()).map(|r| g.get(r, c).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    (rel * max_norm).max(DROP_TOL_FLOOR)
}

/// Orthonormal basis for the columns of the `n × m` matrix `g`.
///
/// Classical Gram-Schmidt with a second orthogonalisation pass. A column
/// whose residual norm falls below `drop_tol` (absolute) is skipped, so a
/// rank-deficient `g` yields fewer than `m` vectors.
pub fn gram_schmidt(g: &Matrix, drop_tol: f64) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(g.cols());
    for c in 0..g.cols() {
        let mut v = g.column(c);
        for _ in 0..2 {
            let coeffs: Vec<f64> = basis.iter().map(|q| dot(q, &v)).collect();
            for (q, a) in basis.iter().zip(coeffs) {
                v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= a * qi);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm >= drop_tol && norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

/// Removes the components of `f` along an orthonormal basis.
pub fn project_onto_complement(f: &mut [f64], basis: &[Vec<f64>]) {
    for q in basis {
        let a = dot(q, f);
        f.iter_mut().zip(q).for_each(|(fi, qi)| *fi -= a * qi);
    }
}

/// `f̃ = f − Σ (qᵢ·f) qᵢ` over the Gram-Schmidt vectors of `g` (`n × m`).
pub fn project_field(f: &[f64], g: &Matrix, drop_tol: f64) -> Result<Vec<f64>> {
    if g.rows() != f.len() {
        return Err(Error::DimensionMismatch {
            context: "projection gradient rows",
            expected: f.len(),
            got: g.rows(),
        });
    }
    let mut out = f.to_vec();
    project_onto_complement(&mut out, &gram_schmidt(g, drop_tol));
    Ok(out)
}

/// Unconstrained network `f_θ: Rⁿ → Rⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsNet {
    params: MlpParams,
}

impl DynamicsNet {
    pub fn new(params: MlpParams) -> Result<Self> {
        let spec = params.spec();
        if spec.input_dim() != spec.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "dynamics net output",
                expected: spec.input_dim(),
                got: spec.output_dim(),
            });
        }
        Ok(DynamicsNet { params })
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.spec().input_dim()
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        mlp_eval(&self.params, x)
    }
}

/// Dynamics net followed by the projection layer of a frozen invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedDynamics {
    pub dynamics: DynamicsNet,
    pub invariant: ConservationNet,
    /// Relative to the largest gradient column norm at each state.
    pub drop_tol: f64,
}

impl ProjectedDynamics {
    pub fn new(dynamics: DynamicsNet, invariant: ConservationNet) -> Result<Self> {
        if invariant.input_dim() != dynamics.dim() {
            return Err(Error::DimensionMismatch {
                context: "invariant net input",
                expected: dynamics.dim(),
                got: invariant.input_dim(),
            });
        }
        Ok(ProjectedDynamics {
            dynamics,
            invariant,
            drop_tol: DEFAULT_DROP_TOL,
        })
    }

    /// Orthonormal basis of `span ∇H(x)`.
    pub fn basis(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let g = self.invariant.gradient_matrix(x)?;
        Ok(gram_schmidt(&g, absolute_drop_tol(&g, self.drop_tol)))
    }
}

pub fn projected_eval(pd: &ProjectedDynamics, x: &[f64]) -> Result<Vec<f64>> {
    let mut f = pd.dynamics.eval(x)?;
    project_onto_complement(&mut f, &pd.basis(x)?);
    Ok(f)
}

/// A trained vector field: the baseline or the projected model.
#[derive(Debug, Clone, PartialEq)]
pub enum DynamicsModel {
    Baseline(DynamicsNet),
    Projected(ProjectedDynamics),
}

impl DynamicsModel {
    pub fn dim(&self) -> usize {
        self.dynamics().dim()
    }

    pub fn dynamics(&self) -> &DynamicsNet {
        match self {
            DynamicsModel::Baseline(d) => d,
            DynamicsModel::Projected(p) => &p.dynamics,
        }
    }

    pub fn is_projected(&self) -> bool {
        matches!(self, DynamicsModel::Projected(_))
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            DynamicsModel::Baseline(d) => d.eval(x),
            DynamicsModel::Projected(p) => projected_eval(p, x),
        }
    }

    /// Projection bases for a batch of states, or `None` for the baseline.
    pub fn bases(&self, xs: &Matrix) -> Result<Option<Vec<Vec<Vec<f64>>>>> {
        let DynamicsModel::Projected(p) = self else {
            return Ok(None);
        };
        let jacs = input_jacobian_batch(p.invariant.params(), xs.clone())?;
        Ok(Some(
            jacs.iter()
                .map(|j| {
                    let g = j.transpose();
                    gram_schmidt(&g, absolute_drop_tol(&g, p.drop_tol))
                })
                .collect(),
        ))
    }

    /// Writes the dynamics weights. A projected model also records
    /// `invariant_path` (stored as given, resolved against the checkpoint's
    /// directory when relative) and the SHA-256 of that file.
    pub fn save(&self, path: &Path, seed: u64, invariant_path: Option<&Path>) -> Result<()> {
        let mut ck = Checkpoint::new(self.dynamics().params(), seed)
            .with_meta("projected", self.is_projected());
        if let DynamicsModel::Projected(p) = self {
            let rel = invariant_path.ok_or_else(|| {
                Error::InvalidInput("projected checkpoint needs the invariant path".into())
            })?;
            let resolved = resolve_relative(path, rel);
            ck = ck
                .with_meta("invariant_path", rel.to_string_lossy().into_owned())
                .with_meta("invariant_sha256", crate::io::sha256_file(&resolved)?)
                .with_meta("drop_tol", p.drop_tol);
        }
        ck.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let dynamics = DynamicsNet::new(ck.to_params()?)?;
        let Some(rel) = ck.metadata.get("invariant_path").and_then(|v| v.as_str()) else {
            return Ok(DynamicsModel::Baseline(dynamics));
        };
        let inv_path = resolve_relative(path, Path::new(rel));
        if !inv_path.exists() {
            return Err(Error::MissingArtifact {
                path: inv_path,
                what: "invariant checkpoint referenced by projected dynamics".into(),
            });
        }
        let expected = ck
            .metadata
            .get("invariant_sha256")
            .and_then(|v| v.as_str())
            .unwrap_or_default()
            .to_string();
        let found = crate::io::sha256_file(&inv_path)?;
        if found != expected {
            return Err(Error::HashMismatch {
                path: inv_path,
                expected,
                found,
            });
        }
        let mut pd = ProjectedDynamics::new(dynamics, ConservationNet::load(&inv_path)?)?;
        if let Some(t) = ck.metadata.get("drop_tol").and_then(|v| v.as_f64()) {
            pd.drop_tol = t;
        }
        Ok(DynamicsModel::Projected(pd))
    }
}

fn resolve_relative(checkpoint: &Path, rel: &Path) -> PathBuf {
    if rel.is_absolute() {
        return rel.to_path_buf();
    }
    let joined = checkpoint
        .parent()
        .map(|d| d.join(rel))
        .unwrap_or_else(|| rel.to_path_buf());
    // Lexical, so the checkpoint's own directory need not exist yet.
    let mut out = PathBuf::new();
    for c in joined.components() {
        match c {
            Component::ParentDir if matches!(out.components().next_back(), Some(Component::Normal(_))) => {
                out.pop();
            }
            Component::CurDir => {}
            other => out.push(other),
        }
    }
    out
}

/// Mean over batch and coordinates of the squared derivative error.
pub fn dynamics_loss(model: &DynamicsModel, xs: &[Vec<f64>], xdots: &[Vec<f64>]) -> Result<f64> {
    check_batch(model.dim(), xs, xdots)?;
    let mut sum = 0.0;
    for (x, xd) in xs.iter().zip(xdots) {
        let f = model.eval(x)?;
        sum += f.iter().zip(xd).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(sum / (xs.len() * model.dim()) as f64)
}

fn check_batch(n: usize, xs: &[Vec<f64>], xdots: &[Vec<f64>]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::InvalidInput("empty dynamics batch".into()));
    }
    if xs.len() != xdots.len() {
        return Err(Error::DimensionMismatch {
            context: "derivative count",
            expected: xs.len(),
            got: xdots.len(),
        });
    }
    for v in xs.iter().chain(xdots) {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                context: "dynamics batch state",
                expected: n,
                got: v.len(),
            });
        }
    }
    Ok(())
}

/// Loss and gradient with respect to the dynamics parameters for a batch
/// with precomputed projection bases (`None` for the baseline).
pub fn dynamics_loss_and_grad(
    params: &MlpParams,
    xs: &Matrix,
    xdots: &Matrix,
    bases: Option<&[&[Vec<f64>]]>,
) -> Result<(f64, Vec<f64>)> {
    let graph = mlp_forward_batch(params, xs.clone())?;
    let mut f = graph.output().clone();
    let n = f.cols();
    let b = f.rows();
    if xdots.rows() != b || xdots.cols() != n {
        return Err(Error::DimensionMismatch {
            context: "derivative batch",
            expected: b * n,
            got: xdots.rows() * xdots.cols(),
        });
    }
    if let Some(bases) = bases {
        for (k, basis) in bases.iter().enumerate() {
            project_onto_complement(f.row_mut(k), basis);
        }
    }
    let scale = 1.0 / (b * n) as f64;
    let mut loss = 0.0;
    let mut seed = Matrix::zeros(b, n);
    for k in 0..b {
        let row = seed.row_mut(k);
        for (j, (p, t)) in f.row(k).iter().zip(xdots.row(k)).enumerate() {
            let r = p - t;
            loss += r * r;
            row[j] = 2.0 * r * scale;
        }
    }
    if let Some(bases) = bases {
        for (k, basis) in bases.iter().enumerate() {
            project_onto_complement(seed.row_mut(k), basis);
        }
    }
    let grads = graph.backward(&seed)?;
    Ok((loss * scale, grads.params))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsTraining {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for DynamicsTraining {
    fn default() -> Self {
        DynamicsTraining {
            hidden: vec![100],
            epochs: 1000,
            batch_size: 100,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedDynamics {
    pub model: DynamicsModel,
    /// Mean minibatch loss per epoch.
    pub history: Vec<f64>,
}

/// Fits a vector field to the dataset's `(x, ẋ)` pairs.
///
/// With an invariant the projected model is trained through the projection;
/// without, the baseline. Initial weights and minibatch order depend only on
/// `seed`, so both variants see identical batches.
pub fn train_dynamics(
    dataset: &Dataset,
    invariant: Option<&ConservationNet>,
    cfg: &DynamicsTraining,
    seed: u64,
) -> Result<TrainedDynamics> {
    if dataset.n_pairs() == 0 {
        return Err(Error::InvalidInput("dataset has no (x, xdot) pairs".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("dynamics batch_size must be positive".into()));
    }
    let n = dataset.dim;
    let spec = MlpSpec::with_hidden(n, &cfg.hidden, n)?;
    let mut params = init_params(&spec, derive_seed(seed, "dynamics-init", 0));
    let frame = match invariant {
        Some(inv) => DynamicsModel::Projected(ProjectedDynamics::new(
            DynamicsNet::new(params.clone())?,
            inv.clone(),
        )?),
        None => DynamicsModel::Baseline(DynamicsNet::new(params.clone())?),
    };

    let (xs, xdots): (Vec<&[f64]>, Vec<&[f64]>) = dataset.pairs().unzip();
    let all_x = Matrix::from_rows(&xs)?;
    let all_xd = Matrix::from_rows(&xdots)?;
    let bases = frame.bases(&all_x)?;

    let mut adam = AdamState::new(params.len());
    let mut rng = derive_rng(seed, "dynamics-shuffle", 0);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let bx = gather(&all_x, idx);
            let bxd = gather(&all_xd, idx);
            let bb: Option<Vec<&[Vec<f64>]>> = bases
                .as_ref()
                .map(|b| idx.iter().map(|&i| b[i].as_slice()).collect());
            let (loss, grads) = dynamics_loss_and_grad(&params, &bx, &bxd, bb.as_deref())?;
            adam_step(&mut params, &grads, &mut adam, cfg.lr)?;
            epoch_loss += loss;
            batches += 1;
        }
        history.push(epoch_loss / batches as f64);
    }
    let dynamics = DynamicsNet::new(params)?;
    let model = match frame {
        DynamicsModel::Projected(p) => DynamicsModel::Projected(ProjectedDynamics {
            dynamics,
            ..p
        }),
        DynamicsModel::Baseline(_) => DynamicsModel::Baseline(dynamics),
    };
    Ok(TrainedDynamics { model, history })
}

fn gather(m: &Matrix, idx: &[usize]) -> Matrix {
    let c = m.cols();
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        data.extend_from_slice(m.row(i));
    }
    Matrix::from_vec(idx.len(), c, data).expect("gathered rows keep their width")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{generate_dataset, DatasetParams, System};
    use proptest::prelude::*;
    use rand::Rng as _;

    fn cols(c: &[&[f64]]) -> Matrix {
        let rows = c[0].len();
        let mut m = Matrix::zeros(rows, c.len());
        for (j, col) in c.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                m.set(i, j, *v);
            }
        }
        m
    }

    fn tol(g: &Matrix) -> f64 {
        absolute_drop_tol(g, DEFAULT_DROP_TOL)
    }

    #[test]
    fn gram_schmidt_examples() {
        let g = cols(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        assert_eq!(gram_schmidt(&g, tol(&g)), vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let g = cols(&[&[2.0, 2.0]]);
        let q = gram_schmidt(&g, tol(&g));
        let h = 1.0 / 2f64.sqrt();
        assert!((q[0][0] - h).abs() < 1e-15 && (q[0][1] - h).abs() < 1e-15);
        let g = cols(&[&[1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(gram_schmidt(&g, tol(&g)), vec![vec![1.0, 0.0]]);
        assert!(gram_schmidt(&Matrix::zeros(3, 2), 1e-12).is_empty());
    }

    #[test]
    fn project_examples() {
        let p = project_field(&[3.0, 4.0], &cols(&[&[2.0, 0.0]]), 1e-12).unwrap();
        assert_eq!(p, vec![0.0, 4.0]);
        let p = project_field(&[5.0, 0.0], &cols(&[&[0.0, 1.0]]), 1e-12).unwrap();
        assert_eq!(p, vec![5.0, 0.0]);
        let g = cols(&[&[1.0, 0.0, 0.0], &[1.0, 1.0, 0.0]]);
        let p = project_field(&[1.0, 2.0, 3.0], &g, tol(&g)).unwrap();
        // Normal-equation form: GᵀG = [[1,1],[1,2]], inverse [[2,-1],[-1,1]].
        let gtf = [1.0, 3.0];
        let coef = [2.0 * gtf[0] - gtf[1], -gtf[0] + gtf[1]];
        let oracle = [1.0 - coef[0] - coef[1], 2.0 - coef[1], 3.0];
        for (a, b) in p.iter().zip(oracle) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(project_field(&[1.0], &cols(&[&[1.0, 0.0]]), 1e-12).is_err());
        assert_eq!(project_field(&[1.0, 2.0], &Matrix::zeros(2, 1), 1e-12).unwrap(), vec![1.0, 2.0]);
    }

    fn random_g(rng: &mut crate::rng::Rng, n: usize, m: usize, rank_deficient: bool) -> Matrix {
        let mut g = Matrix::zeros(n, m);
        for v in g.as_mut_slice() {
            *v = rng.gen_range(-3.0..3.0);
        }
        if rank_deficient && m >= 2 {
            let s = rng.gen_range(-2.0..2.0);
            for r in 0..n {
                let v = g.get(r, 0) * s;
                g.set(r, m - 1, v);
            }
        }
        g
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]
        #[test]
        fn projection_properties(seed in 0u64..u64::MAX, n in 2usize..8, m in 1usize..=3, deficient: bool) {
            let mut rng = crate::rng::derive_rng(seed, "proj", 0);
            let m = m.min(n);
            let g = random_g(&mut rng, n, m, deficient);
            let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let t = tol(&g);
            let p = project_field(&f, &g, t).unwrap();
            let pp = project_field(&p, &g, t).unwrap();
            for (a, b) in p.iter().zip(&pp) {
                prop_assert!((a - b).abs() < 1e-10);
            }
            prop_assert!(dot(&p, &p).sqrt() <= dot(&f, &f).sqrt() + 1e-12);
            for c in 0..m {
                prop_assert!(dot(&g.column(c), &p).abs() < 1e-9);
            }
            let q = gram_schmidt(&g, t);
            for (i, a) in q.iter().enumerate() {
                for (j, b) in q.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((dot(a, b) - want).abs() < 1e-10);
                }
            }
            if deficient && m >= 2 {
                prop_assert!(q.len() < m);
            }
        }
    }

    fn random_invariant() -> ConservationNet {
        let spec = MlpSpec::new(vec![2, 8, 1]).unwrap();
        ConservationNet::new(init_params(&spec, 5), true)
    }

    #[test]
    fn projected_output_orthogonal_to_gradient() {
        let mut rng = crate::rng::derive_rng(2, "proj-eval", 0);
        for k in 0..100 {
            let spec = MlpSpec::new(vec![3, 6, 2]).unwrap();
            let inv = ConservationNet::new(init_params(&spec, k), true);
            let dy = DynamicsNet::new(init_params(&MlpSpec::new(vec![3, 7, 3]).unwrap(), 100 + k)).unwrap();
            let pd = ProjectedDynamics::new(dy, inv.clone()).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let out = projected_eval(&pd, &x).unwrap();
            let g = inv.gradient_matrix(&x).unwrap();
            for c in 0..2 {
                assert!(dot(&g.column(c), &out).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_dynamics_gives_zero() {
        let dy = DynamicsNet::new(MlpParams::zeros(MlpSpec::new(vec![2, 4, 2]).unwrap())).unwrap();
        let pd = ProjectedDynamics::new(dy, random_invariant()).unwrap();
        assert_eq!(projected_eval(&pd, &[0.3, -1.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn non_square_dynamics_rejected() {
        let p = MlpParams::zeros(MlpSpec::new(vec![2, 3]).unwrap());
        assert!(DynamicsNet::new(p).is_err());
    }

    #[test]
    fn loss_examples() {
        let zero = DynamicsModel::Baseline(
            DynamicsNet::new(MlpParams::zeros(MlpSpec::new(vec![2, 2]).unwrap())).unwrap(),
        );
        let l = dynamics_loss(&zero, &[vec![0.5, 0.5]], &[vec![1.0, 1.0]]).unwrap();
        assert_eq!(l, 1.0);
        let l2 = dynamics_loss(&zero, &[vec![0.5, 0.5]], &[vec![2.0, 2.0]]).unwrap();
        assert_eq!(l2, 4.0 * l);
        assert_eq!(dynamics_loss(&zero, &[vec![1.0, 1.0]], &[vec![0.0, 0.0]]).unwrap(), 0.0);
        assert!(dynamics_loss(&zero, &[], &[]).is_err());
        assert!(dynamics_loss(&zero, &[vec![1.0]], &[vec![0.0, 0.0]]).is_err());
    }

    #[test]
    fn batched_loss_matches_pointwise_and_fd() {
        let mut rng = crate::rng::derive_rng(3, "dyn-fd", 0);
        let inv = ConservationNet::new(init_params(&MlpSpec::new(vec![2, 5, 1]).unwrap(), 4), true);
        let params = init_params(&MlpSpec::new(vec![2, 6, 2]).unwrap(), 8);
        let xs: Vec<Vec<f64>> = (0..7).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let xds: Vec<Vec<f64>> = (0..7).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let bx = Matrix::from_rows(&xs).unwrap();
        let bxd = Matrix::from_rows(&xds).unwrap();
        let model = DynamicsModel::Projected(
            ProjectedDynamics::new(DynamicsNet::new(params.clone()).unwrap(), inv.clone()).unwrap(),
        );
        let bases = model.bases(&bx).unwrap().unwrap();
        let refs: Vec<&[Vec<f64>]> = bases.iter().map(Vec::as_slice).collect();
        let (loss, grad) = dynamics_loss_and_grad(&params, &bx, &bxd, Some(&refs)).unwrap();
        assert!((loss - dynamics_loss(&model, &xs, &xds).unwrap()).abs() < 1e-14);

        let loss_at = |p: &MlpParams| {
            let m = DynamicsModel::Projected(
                ProjectedDynamics::new(DynamicsNet::new(p.clone()).unwrap(), inv.clone()).unwrap(),
            );
            dynamics_loss(&m, &xs, &xds).unwrap()
        };
        let h = 1e-6;
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = params.clone();
            minus.as_mut_slice()[i] -= h;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-5 * grad[i].abs().max(1e-4), "{i}: {fd} vs {}", grad[i]);
        }
    }

    fn small_dataset() -> Dataset {
        let p = DatasetParams {
            n_traj: 4,
            points_per_traj: 25,
            duration: 5.0,
            noise_std: 0.0,
        };
        generate_dataset(&System::spring_mass(), &p, 2).unwrap()
    }

    #[test]
    fn epochs_zero_returns_init_and_baseline_projected_share_init() {
        let ds = small_dataset();
        let cfg = DynamicsTraining {
            epochs: 0,
            ..Default::default()
        };
        let a = train_dynamics(&ds, None, &cfg, 7).unwrap();
        let b = train_dynamics(&ds, Some(&random_invariant()), &cfg, 7).unwrap();
        assert_eq!(a.model.dynamics(), b.model.dynamics());
        let spec = MlpSpec::new(vec![2, 100, 2]).unwrap();
        assert_eq!(a.model.dynamics().params(), &init_params(&spec, derive_seed(7, "dynamics-init", 0)));
        assert!(!a.model.is_projected() && b.model.is_projected());
    }

    #[test]
    fn training_descends_and_is_deterministic() {
        let ds = small_dataset();
        let cfg = DynamicsTraining {
            epochs: 30,
            batch_size: 20,
            ..Default::default()
        };
        let a = train_dynamics(&ds, None, &cfg, 1).unwrap();
        let b = train_dynamics(&ds, None, &cfg, 1).unwrap();
        assert_eq!(a.model, b.model);
        assert!(a.history.last().unwrap() < &a.history[0]);
        let p = train_dynamics(&ds, Some(&random_invariant()), &cfg, 1).unwrap();
        assert!(p.history.last().unwrap() < &p.history[0]);
    }

    #[test]
    fn checkpoint_round_trip_and_hash_check() {
        let dir = tempfile::tempdir().unwrap();
        let inv = random_invariant();
        let inv_path = dir.path().join("conservation/model.json");
        inv.checkpoint(0).save(&inv_path).unwrap();
        let dy = DynamicsNet::new(init_params(&MlpSpec::new(vec![2, 4, 2]).unwrap(), 1)).unwrap();
        let model = DynamicsModel::Projected(ProjectedDynamics::new(dy.clone(), inv).unwrap());
        let path = dir.path().join("dynamics/concernet.json");
        let rel = Path::new("../conservation/model.json");
        model.save(&path, 0, Some(rel)).unwrap();
        assert_eq!(DynamicsModel::load(&path).unwrap(), model);

        let base = DynamicsModel::Baseline(dy);
        let bpath = dir.path().join("dynamics/baseline.json");
        base.save(&bpath, 0, None).unwrap();
        assert_eq!(DynamicsModel::load(&bpath).unwrap(), base);

        let other = ConservationNet::new(init_params(&MlpSpec::new(vec![2, 8, 1]).unwrap(), 6), true);
        other.checkpoint(0).save(&inv_path).unwrap();
        assert!(matches!(DynamicsModel::load(&path), Err(Error::HashMismatch { .. })));
        std::fs::remove_file(&inv_path).unwrap();
        assert!(matches!(DynamicsModel::load(&path), Err(Error::MissingArtifact { .. })));
    }
}
