//! Contrastive discovery of conserved quantities.
//!
//! States from one trajectory share a class. The square ratio loss averages,
//! over every anchor point, the ratio of squared latent distances to its own
//! trajectory over squared latent distances to every point in the batch:
//!
//! ```text
//! L = 1/A Σ_anchors  Σ_{same traj} ‖H(a) − H(b)‖²  /  (Σ_{all} ‖H(a) − H(c)‖² + ε)
//! ```

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    adam_step, init_params, mlp_eval_batch, mlp_forward_batch, AdamState, Checkpoint, MlpParams,
    MlpSpec,
};
use crate::linalg::Matrix;
use crate::rng::derive_rng;
use crate::systems::Dataset;
use crate::{Error, Result};

/// Added to every denominator so that an all-equal batch gives loss 0.
pub const SRL_DENOMINATOR_EPS: f64 = 1e-12;

/// Trained invariant map `H: R^n → R^m`, immutable after training.
#[derive(Debug, Clone, PartialEq)]
pub struct ConservationNet {
    params: MlpParams,
    trained: bool,
}

impl ConservationNet {
    pub fn new(params: MlpParams, trained: bool) -> Self {
        ConservationNet { params, trained }
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn spec(&self) -> &MlpSpec {
        self.params.spec()
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn input_dim(&self) -> usize {
        self.spec().input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.spec().output_dim()
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        crate::autodiff::mlp_eval(&self.params, x)
    }

    pub fn eval_batch(&self, xs: Matrix) -> Result<Matrix> {
        mlp_eval_batch(&self.params, xs)
    }

    /// `n × m` matrix `G = ∇ₓH(x)`, one column per latent output.
    pub fn gradient_matrix(&self, x: &[f64]) -> Result<Matrix> {
        Ok(crate::autodiff::input_jacobian(&self.params, x)?.transpose())
    }

    pub fn checkpoint(&self, seed: u64) -> Checkpoint {
        Checkpoint::new(&self.params, seed).with_meta("trained", self.trained)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let trained = ck
            .metadata
            .get("trained")
            .and_then(serde_json::Value::as_bool)
            .unwrap_or(true);
        Ok(ConservationNet::new(ck.to_params()?, trained))
    }
}

/// Square ratio loss of latent groups, each `T_i × m` (one group per
/// trajectory).
pub fn srl_loss(groups: &[Matrix]) -> Result<f64> {
    srl_loss_and_grad(groups).map(|(l, _)| l)
}

/// Loss and its gradient with respect to every latent value.
///
/// Pair sums are evaluated through centred moments,
/// `Σ_b ‖h_a − h_b‖² = T‖h_a − μ‖² + Σ_b ‖h_b − μ‖²`, which keeps the cost
/// linear in the batch size.
pub fn srl_loss_and_grad(groups: &[Matrix]) -> Result<(f64, Vec<Matrix>)> {
    let m = check_groups(groups)?;
    let total: usize = groups.iter().map(Matrix::rows).sum();
    let n_total = total as f64;

    let mu = mean_rows(groups.iter(), m, total);
    let centred: Vec<Matrix> = groups
        .iter()
        .map(|g| {
            let mut c = g.clone();
            for r in c.as_mut_slice().chunks_exact_mut(m) {
                r.iter_mut().zip(&mu).for_each(|(v, mu)| *v -= mu);
            }
            c
        })
        .collect();
    let s2_all: f64 = centred.iter().map(|g| sq_sum(g.as_slice())).sum();

    let mut loss = 0.0;
    let mut alpha = Vec::with_capacity(groups.len());
    let mut beta = Vec::with_capacity(groups.len());
    let mut group_mu = Vec::with_capacity(groups.len());
    for g in &centred {
        let t = g.rows() as f64;
        let gmu = mean_rows(std::iter::once(g), m, g.rows());
        let s2_group: f64 = g
            .iter_rows()
            .map(|r| r.iter().zip(&gmu).map(|(v, mu)| (v - mu).powi(2)).sum::<f64>())
            .sum();
        let mut a = Vec::with_capacity(g.rows());
        let mut b = Vec::with_capacity(g.rows());
        for h in g.iter_rows() {
            let d_group: f64 = h.iter().zip(&gmu).map(|(v, mu)| (v - mu).powi(2)).sum();
            let num = t * d_group + s2_group;
            let den = n_total * sq_sum(h) + s2_all + SRL_DENOMINATOR_EPS;
            loss += num / den;
            a.push(1.0 / den);
            b.push(num / (den * den));
        }
        alpha.push(a);
        beta.push(b);
        group_mu.push(gmu);
    }
    loss /= n_total;

    // ∂L/∂h_c = 2/A [ α_c T (h_c − μ_g) − β_c N h_c
    //                 − Σ_{a∈g} α_a (h_a − h_c) + Σ_a β_a (h_a − h_c) ]
    let beta_sum: f64 = beta.iter().flatten().sum();
    let mut beta_h = vec![0.0; m];
    for (g, b) in centred.iter().zip(&beta) {
        for (h, &bv) in g.iter_rows().zip(b) {
            beta_h.iter_mut().zip(h).for_each(|(acc, v)| *acc += bv * v);
        }
    }
    let scale = 2.0 / n_total;
    let grads = centred
        .iter()
        .zip(alpha.iter().zip(&beta))
        .zip(&group_mu)
        .map(|((g, (a, b)), gmu)| {
            let t = g.rows() as f64;
            let alpha_sum: f64 = a.iter().sum();
            let mut alpha_h = vec![0.0; m];
            for (h, &av) in g.iter_rows().zip(a) {
                alpha_h.iter_mut().zip(h).for_each(|(acc, v)| *acc += av * v);
            }
            let mut out = Matrix::zeros(g.rows(), m);
            for (k, h) in g.iter_rows().enumerate() {
                let row = out.row_mut(k);
                for j in 0..m {
                    row[j] = scale
                        * (a[k] * t * (h[j] - gmu[j]) - b[k] * n_total * h[j]
                            - (alpha_h[j] - alpha_sum * h[j])
                            + (beta_h[j] - beta_sum * h[j]));
                }
            }
            out
        })
        .collect();
    Ok((loss, grads))
}

fn check_groups(groups: &[Matrix]) -> Result<usize> {
    if groups.is_empty() || groups.iter().all(|g| g.rows() == 0) {
        return Err(Error::InvalidInput("square ratio loss of an empty batch".into()));
    }
    if groups.len() < 2 {
        return Err(Error::InvalidInput(
            "square ratio loss needs at least 2 trajectory groups".into(),
        ));
    }
    if let Some(g) = groups.iter().find(|g| g.rows() == 0) {
        return Err(Error::InvalidInput(format!(
            "empty trajectory group ({} columns)",
            g.cols()
        )));
    }
    let m = groups[0].cols();
    for g in groups {
        if g.cols() != m {
            return Err(Error::DimensionMismatch {
                context: "latent dimension across groups",
                expected: m,
                got: g.cols(),
            });
        }
    }
    Ok(m)
}

fn mean_rows<'a>(groups: impl Iterator<Item = &'a Matrix>, m: usize, total: usize) -> Vec<f64> {
    let mut mu = vec![0.0; m];
    for g in groups {
        for r in g.iter_rows() {
            mu.iter_mut().zip(r).for_each(|(acc, v)| *acc += v);
        }
    }
    mu.iter_mut().for_each(|v| *v /= total as f64);
    mu
}

fn sq_sum(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// States of `B ≥ 2` whole trajectories, one group per trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    groups: Vec<Matrix>,
}

impl ContrastiveBatch {
    pub fn new(groups: Vec<Matrix>) -> Result<Self> {
        check_groups(&groups)?;
        Ok(ContrastiveBatch { groups })
    }

    pub fn groups(&self) -> &[Matrix] {
        &self.groups
    }

    /// Loss and parameter gradient of `net` on this batch.
    pub fn loss_and_param_grad(&self, params: &MlpParams) -> Result<(f64, Vec<f64>)> {
        let refs: Vec<&Matrix> = self.groups.iter().collect();
        contrastive_step(params, &refs)
    }
}

/// Hyperparameters for invariant training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConservationTraining {
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub epochs: usize,
    /// Whole trajectories per contrastive batch.
    pub batch_traj: usize,
    pub lr: f64,
}

impl Default for ConservationTraining {
    fn default() -> Self {
        ConservationTraining {
            hidden: vec![100],
            latent_dim: 1,
            epochs: 1000,
            batch_traj: 10,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedConservation {
    pub net: ConservationNet,
    /// Mean batch loss per epoch.
    pub history: Vec<f64>,
}

/// Trains `H` on a dataset whose trajectories are the contrastive classes.
///
/// Each epoch shuffles the trajectory order and walks it in groups of
/// `batch_traj` (a trailing group with a single trajectory is merged into
/// the previous one), taking one Adam step per group.
pub fn train_conservation(
    dataset: &Dataset,
    cfg: &ConservationTraining,
    seed: u64,
) -> Result<TrainedConservation> {
    let n_traj = dataset.trajectories.len();
    if cfg.batch_traj < 2 {
        return Err(Error::InvalidConfig(format!(
            "contrastive batches need at least 2 trajectories, got {}",
            cfg.batch_traj
        )));
    }
    if n_traj < cfg.batch_traj {
        return Err(Error::InvalidInput(format!(
            "dataset has {n_traj} trajectories, fewer than the batch size {}",
            cfg.batch_traj
        )));
    }
    let spec = MlpSpec::with_hidden(dataset.dim, &cfg.hidden, cfg.latent_dim)?;
    let mut params = init_params(&spec, crate::rng::derive_seed(seed, "conservation-init", 0));
    let mut adam = AdamState::new(params.len());
    let mut rng = derive_rng(seed, "conservation-shuffle", 0);
    let inputs: Vec<Matrix> = dataset
        .trajectories
        .iter()
        .map(|t| Matrix::from_rows(&t.states))
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..n_traj).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut bounds: Vec<(usize, usize)> = (0..n_traj)
            .step_by(cfg.batch_traj)
            .map(|s| (s, (s + cfg.batch_traj).min(n_traj)))
            .collect();
        if bounds.len() > 1 && bounds.last().map_or(false, |&(s, e)| e - s < 2) {
            let (_, e) = bounds.pop().unwrap();
            bounds.last_mut().unwrap().1 = e;
        }
        let mut epoch_loss = 0.0;
        for &(s, e) in &bounds {
            let group: Vec<&Matrix> = order[s..e].iter().map(|&i| &inputs[i]).collect();
            let (loss, grads) = contrastive_step(&params, &group)?;
            adam_step(&mut params, &grads, &mut adam, cfg.lr)?;
            epoch_loss += loss;
        }
        history.push(epoch_loss / bounds.len() as f64);
    }
    Ok(TrainedConservation {
        net: ConservationNet::new(params, cfg.epochs > 0),
        history,
    })
}

/// Loss and parameter gradient for one group of trajectories.
fn contrastive_step(params: &MlpParams, group: &[&Matrix]) -> Result<(f64, Vec<f64>)> {
    let n = params.spec().input_dim();
    let mut stacked = Vec::new();
    let mut sizes = Vec::with_capacity(group.len());
    for g in group {
        if g.cols() != n {
            return Err(Error::DimensionMismatch {
                context: "contrastive batch state dimension",
                expected: n,
                got: g.cols(),
            });
        }
        stacked.extend_from_slice(g.as_slice());
        sizes.push(g.rows());
    }
    let total: usize = sizes.iter().sum();
    let graph = mlp_forward_batch(params, Matrix::from_vec(total, n, stacked)?)?;
    let out = graph.output();
    let m = out.cols();
    let mut latents = Vec::with_capacity(sizes.len());
    let mut row = 0;
    for &s in &sizes {
        latents.push(Matrix::from_vec(s, m, out.as_slice()[row * m..(row + s) * m].to_vec())?);
        row += s;
    }
    let (loss, lat_grads) = srl_loss_and_grad(&latents)?;
    let seed_data: Vec<f64> = lat_grads.into_iter().flat_map(Matrix::into_vec).collect();
    let grads = graph.backward(&Matrix::from_vec(total, m, seed_data)?)?;
    Ok((loss, grads.params))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct R2 {
    pub r2: f64,
    /// Set when the regressor was constant and R² was defined as 0.
    pub degenerate: bool,
}

/// Coefficient of determination of the least-squares fit `g ≈ a·h + b`.
pub fn r2_regression(h: &[f64], g: &[f64]) -> Result<R2> {
    if h.len() != g.len() {
        return Err(Error::DimensionMismatch {
            context: "r2 regression",
            expected: h.len(),
            got: g.len(),
        });
    }
    if h.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "R² needs at least 3 points, got {}",
            h.len()
        )));
    }
    let n = h.len() as f64;
    let mh = h.iter().sum::<f64>() / n;
    let mg = g.iter().sum::<f64>() / n;
    let shh: f64 = h.iter().map(|v| (v - mh).powi(2)).sum();
    let sgg: f64 = g.iter().map(|v| (v - mg).powi(2)).sum();
    let shg: f64 = h.iter().zip(g).map(|(a, b)| (a - mh) * (b - mg)).sum();
    if shh == 0.0 || sgg == 0.0 {
        log::warn!("degenerate R² regression (constant regressor or response)");
        return Ok(R2 {
            r2: 0.0,
            degenerate: true,
        });
    }
    let slope = shg / shh;
    let intercept = mg - slope * mh;
    let ss_res: f64 = h
        .iter()
        .zip(g)
        .map(|(a, b)| (b - (slope * a + intercept)).powi(2))
        .sum();
    Ok(R2 {
        r2: 1.0 - ss_res / sgg,
        degenerate: false,
    })
}

/// Outcome of the needle-pair perturbation of the discretised integral loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleProbe {
    pub cells: usize,
    pub epsilon: f64,
    /// The two perturbed cells (`+δ` on the first, `−δ` on the second).
    pub pair: (usize, usize),
    pub baseline: f64,
    /// `(δ, loss)`, starting with `(0, baseline)`.
    pub rows: Vec<(f64, f64)>,
    /// Least-squares fit `loss(δ) − loss(0) ≈ c1·δ + c2·δ²`; `None` with
    /// fewer than two non-zero deltas.
    pub linear_coef: Option<f64>,
    pub quadratic_coef: Option<f64>,
}

/// Integral square ratio loss of `h` on a uniform grid of `[0, 1]` with the
/// preimage neighbourhoods `{x′ : |g(x′) − g(x)| ≤ ε}` taken from `g`.
pub fn discrete_isrl(h: &[f64], g: &[f64], epsilon: f64) -> f64 {
    let n = h.len();
    let w = 1.0 / n as f64;
    // Grid spacings that divide ε exactly must not fall out of the window
    // through rounding, or the window loses its symmetry.
    let reach = epsilon * (1.0 + 1e-9);
    (0..n)
        .map(|i| {
            let (mut num, mut den) = (0.0, 0.0);
            for k in 0..n {
                let d = (h[i] - h[k]).powi(2);
                den += d;
                if (g[k] - g[i]).abs() <= reach {
                    num += d;
                }
            }
            if den == 0.0 {
                0.0
            } else {
                num / den
            }
        })
        .sum::<f64>()
        * w
}

/// Perturbs `h = g` by a `+δ/−δ` needle pair inside one preimage and
/// evaluates the discretised integral loss for every δ.
///
/// The pair is the middle cell and the cell whose `g` value is closest to
/// it (lowest index on ties), which must lie within `ε`.
pub fn isrl_needle_probe<G: Fn(f64) -> f64>(
    g: G,
    cells: usize,
    epsilon: f64,
    deltas: &[f64],
) -> Result<NeedleProbe> {
    if cells < 100 {
        return Err(Error::InvalidInput(format!(
            "probe grid needs at least 100 cells, got {cells}"
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon must be positive, got {epsilon}")));
    }
    let gv: Vec<f64> = (0..cells).map(|k| g((k as f64 + 0.5) / cells as f64)).collect();
    let (lo, hi) = gv
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !(hi > lo) {
        return Err(Error::InvalidInput(
            "the probed function must be non-constant on the grid".into(),
        ));
    }
    let anchor = cells / 2;
    let partner = (0..cells)
        .filter(|&k| k != anchor)
        .min_by(|&a, &b| {
            let da = (gv[a] - gv[anchor]).abs();
            let db = (gv[b] - gv[anchor]).abs();
            da.total_cmp(&db).then(a.cmp(&b))
        })
        .unwrap();
    if (gv[partner] - gv[anchor]).abs() > epsilon {
        return Err(Error::InvalidInput(format!(
            "no preimage of diameter {epsilon} holds two cells; increase epsilon"
        )));
    }
    let pair = (partner.min(anchor), partner.max(anchor));
    let baseline = discrete_isrl(&gv, &gv, epsilon);
    let mut rows = vec![(0.0, baseline)];
    let mut h = gv.clone();
    for &d in deltas {
        h[pair.0] = gv[pair.0] + d;
        h[pair.1] = gv[pair.1] - d;
        rows.push((d, discrete_isrl(&h, &gv, epsilon)));
    }
    let (linear_coef, quadratic_coef) = fit_linear_quadratic(&rows[1..], baseline);
    Ok(NeedleProbe {
        cells,
        epsilon,
        pair,
        baseline,
        rows,
        linear_coef,
        quadratic_coef,
    })
}

/// Least squares for `y − y0 ≈ c1·δ + c2·δ²` (no constant term).
fn fit_linear_quadratic(rows: &[(f64, f64)], y0: f64) -> (Option<f64>, Option<f64>) {
    let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.0 != 0.0).map(|&(d, y)| (d, y - y0)).collect();
    if pts.len() < 2 {
        return (None, None);
    }
    let (mut s11, mut s12, mut s22, mut s1y, mut s2y) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(d, y) in &pts {
        let d2 = d * d;
        s11 += d * d;
        s12 += d * d2;
        s22 += d2 * d2;
        s1y += d * y;
        s2y += d2 * y;
    }
    let det = s11 * s22 - s12 * s12;
    if det == 0.0 {
        return (None, None);
    }
    (Some((s1y * s22 - s2y * s12) / det), Some((s11 * s2y - s12 * s1y) / det))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn col(v: &[f64]) -> Matrix {
        Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    /// Direct enumeration of every pair.
    fn srl_pairwise(groups: &[Matrix]) -> f64 {
        let all: Vec<(usize, &[f64])> = groups
            .iter()
            .enumerate()
            .flat_map(|(i, g)| g.iter_rows().map(move |r| (i, r)))
            .collect();
        let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        all.iter()
            .map(|&(ga, ha)| {
                let num: f64 = all.iter().filter(|(gb, _)| *gb == ga).map(|(_, hb)| d2(ha, hb)).sum();
                let den: f64 = all.iter().map(|(_, hb)| d2(ha, hb)).sum();
                num / (den + SRL_DENOMINATOR_EPS)
            })
            .sum::<f64>()
            / all.len() as f64
    }

    fn random_groups(rng: &mut crate::rng::Rng, b: usize, t: usize, m: usize) -> Vec<Matrix> {
        (0..b)
            .map(|_| {
                let data = (0..t * m).map(|_| rng.gen_range(-2.0..2.0)).collect();
                Matrix::from_vec(t, m, data).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_intra_class_spread() {
        let l = srl_loss(&[col(&[0.0, 0.0]), col(&[1.0, 1.0])]).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn hand_enumerated_half() {
        let groups = [col(&[0.0, 1.0]), col(&[0.0, 1.0])];
        assert!((srl_loss(&groups).unwrap() - 0.5).abs() < 1e-12);
        assert!((srl_pairwise(&groups) - 0.5).abs() < 1e-12);
        let shifted = [col(&[3.0, 13.0]), col(&[3.0, 13.0])];
        assert!((srl_loss(&shifted).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn all_equal_is_zero_not_nan() {
        let l = srl_loss(&[col(&[2.0, 2.0]), col(&[2.0])]).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn errors() {
        assert!(srl_loss(&[]).is_err());
        assert!(srl_loss(&[col(&[1.0, 2.0])]).is_err());
        assert!(srl_loss(&[col(&[1.0]), Matrix::zeros(0, 1)]).is_err());
        let two = Matrix::zeros(2, 2);
        assert!(matches!(
            srl_loss(&[col(&[1.0, 2.0]), two]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn moments_match_pairwise_enumeration() {
        let mut rng = derive_rng(0, "srl", 0);
        for m in 1..=3 {
            let g = random_groups(&mut rng, 4, 7, m);
            let a = srl_loss(&g).unwrap();
            let b = srl_pairwise(&g);
            assert!((a - b).abs() < 1e-12 * b.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = derive_rng(1, "srl", 0);
        for m in 1..=2 {
            let groups = random_groups(&mut rng, 3, 5, m);
            let (_, grads) = srl_loss_and_grad(&groups).unwrap();
            let h = 1e-6;
            for gi in 0..groups.len() {
                for k in 0..groups[gi].as_slice().len() {
                    let mut plus = groups.clone();
                    plus[gi].as_mut_slice()[k] += h;
                    let mut minus = groups.clone();
                    minus[gi].as_mut_slice()[k] -= h;
                    let fd = (srl_pairwise(&plus) - srl_pairwise(&minus)) / (2.0 * h);
                    let an = grads[gi].as_slice()[k];
                    assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{fd} vs {an}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn affine_invariance_and_range(
            seed in 0u64..1000,
            a in prop_oneof![-50.0..-0.1f64, 0.1..50.0f64],
            b in -100.0..100.0f64,
        ) {
            let mut rng = derive_rng(seed, "srl-prop", 0);
            let groups = random_groups(&mut rng, 3, 6, 1);
            let l = srl_loss(&groups).unwrap();
            let mapped: Vec<Matrix> = groups
                .iter()
                .map(|g| {
                    let mut g = g.clone();
                    g.as_mut_slice().iter_mut().for_each(|v| *v = a * *v + b);
                    g
                })
                .collect();
            let lm = srl_loss(&mapped).unwrap();
            prop_assert!((l - lm).abs() <= 1e-10 * l, "{} vs {}", l, lm);
            prop_assert!((0.0..1.0).contains(&l));
        }
    }

    #[test]
    fn r2_cases() {
        let g = [1.0, 2.0, 4.0, 8.0];
        assert_eq!(r2_regression(&g, &g).unwrap().r2, 1.0);
        let h: Vec<f64> = g.iter().map(|v| 3.0 * v + 2.0).collect();
        assert!((r2_regression(&h, &g).unwrap().r2 - 1.0).abs() < 1e-15);
        let r = r2_regression(&[1.0, -1.0, 1.0, -1.0], &[1.0, 1.0, -1.0, -1.0]).unwrap();
        assert!(r.r2.abs() < 1e-15);
        let d = r2_regression(&[2.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!(d.degenerate && d.r2 == 0.0);
        assert!(r2_regression(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn needle_probe_linear_g() {
        let deltas: Vec<f64> = (1..=10).map(|k| k as f64 * 1e-3).collect();
        let p = isrl_needle_probe(|x| x, 200, 0.02, &deltas).unwrap();
        assert_eq!(p.rows[0], (0.0, p.baseline));
        assert_eq!(p.pair, (99, 100));
        assert!(p.rows[1..].iter().all(|&(_, l)| l > p.baseline), "{:?} {p:?}", p.baseline);
        let (c1, c2) = (p.linear_coef.unwrap(), p.quadratic_coef.unwrap());
        assert!(c2 > 0.0);
        assert!(c1.abs() < 1e-3 * c2 * 1e-2, "c1 {c1} c2 {c2}");
    }

    #[test]
    fn needle_probe_errors() {
        assert!(isrl_needle_probe(|_| 1.0, 200, 0.02, &[1e-3]).is_err());
        assert!(isrl_needle_probe(|x| x, 200, 1e-6, &[1e-3]).is_err());
        assert!(isrl_needle_probe(|x| x, 50, 0.02, &[1e-3]).is_err());
        let p = isrl_needle_probe(|x| x, 200, 0.02, &[]).unwrap();
        assert_eq!(p.rows.len(), 1);
        assert!(p.linear_coef.is_none());
    }

    #[test]
    fn epochs_zero_returns_init() {
        let sys = crate::systems::System::spring_mass();
        let p = crate::systems::DatasetParams {
            n_traj: 4,
            points_per_traj: 10,
            duration: 1.0,
            noise_std: 0.0,
        };
        let ds = crate::systems::generate_dataset(&sys, &p, 0).unwrap();
        let cfg = ConservationTraining {
            epochs: 0,
            batch_traj: 2,
            ..Default::default()
        };
        let a = train_conservation(&ds, &cfg, 3).unwrap();
        let spec = MlpSpec::new(vec![2, 100, 1]).unwrap();
        let init = init_params(&spec, crate::rng::derive_seed(3, "conservation-init", 0));
        assert_eq!(a.net.params(), &init);
        assert!(!a.net.is_trained());
        assert!(a.history.is_empty());
    }

    #[test]
    fn short_training_reduces_loss() {
        let sys = crate::systems::System::spring_mass();
        let p = crate::systems::DatasetParams {
            n_traj: 10,
            points_per_traj: 20,
            duration: 6.0,
            noise_std: 0.0,
        };
        let ds = crate::systems::generate_dataset(&sys, &p, 1).unwrap();
        let cfg = ConservationTraining {
            epochs: 150,
            batch_traj: 5,
            lr: 3e-3,
            ..Default::default()
        };
        let t = train_conservation(&ds, &cfg, 0).unwrap();
        assert!(t.history.last().unwrap() < &(0.5 * t.history[0]), "{:?}", &t.history[..3]);
    }
}
