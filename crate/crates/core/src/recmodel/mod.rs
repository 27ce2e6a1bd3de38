//! Embedding recommender: dot-product scoring trained with BPR.

pub mod checkpoint;
pub mod metrics;

pub use checkpoint::{read_checkpoint, read_checkpoint_file, write_checkpoint, write_checkpoint_file, Checkpoint, MODEL_MAGIC};
pub use metrics::{evaluate, evaluate_users, hr_at_k, ndcg_at_k, per_user_metrics, test_rank, RankingMetrics, DEFAULT_K};

use crate::error::{Error, Result};
use crate::numeric::{dot, log_sigmoid, sigmoid, Matrix, SimRng};

/// Standard deviation of the Gaussian embedding initialisation.
pub const INIT_STD: f64 = 0.01;
pub const DEFAULT_DIM: usize = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct RecModel {
    users: Matrix,
    items: Matrix,
}

impl RecModel {
    pub fn new(num_users: usize, num_items: usize, dim: usize, rng: &mut SimRng) -> Self {
        let mut init = |_, _| rng.gaussian(0.0, INIT_STD);
        let users = Matrix::from_fn(num_users, dim, &mut init);
        let items = Matrix::from_fn(num_items, dim, &mut init);
        RecModel { users, items }
    }

    pub fn zeros(num_users: usize, num_items: usize, dim: usize) -> Self {
        RecModel {
            users: Matrix::zeros(num_users, dim),
            items: Matrix::zeros(num_items, dim),
        }
    }

    pub fn from_tables(users: Matrix, items: Matrix) -> Result<Self> {
        if users.cols() != items.cols() {
            return Err(Error::dim(format!(
                "user dim {} != item dim {}",
                users.cols(),
                items.cols()
            )));
        }
        if !users.is_finite() || !items.is_finite() {
            return Err(Error::state("embedding tables contain non-finite values"));
        }
        Ok(RecModel { users, items })
    }

    pub fn dim(&self) -> usize {
        self.users.cols()
    }

    pub fn num_users(&self) -> usize {
        self.users.rows()
    }

    pub fn num_items(&self) -> usize {
        self.items.rows()
    }

    pub fn user(&self, u: usize) -> &[f64] {
        self.users.row(u)
    }

    pub fn item(&self, i: usize) -> &[f64] {
        self.items.row(i)
    }

    pub fn user_mut(&mut self, u: usize) -> &mut [f64] {
        self.users.row_mut(u)
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [f64] {
        self.items.row_mut(i)
    }

    pub fn user_table(&self) -> &Matrix {
        &self.users
    }

    pub fn item_table(&self) -> &Matrix {
        &self.items
    }

    pub fn is_finite(&self) -> bool {
        self.users.is_finite() && self.items.is_finite()
    }

    fn check_user(&self, u: usize) -> Result<()> {
        if u >= self.num_users() {
            return Err(Error::Index(format!("user {u} of {}", self.num_users())));
        }
        Ok(())
    }

    fn check_item(&self, i: usize) -> Result<()> {
        if i >= self.num_items() {
            return Err(Error::Index(format!("item {i} of {}", self.num_items())));
        }
        Ok(())
    }

    /// Predicted preference `⟨e_u, e_i⟩`.
    pub fn score(&self, u: usize, i: usize) -> Result<f64> {
        self.check_user(u)?;
        self.check_item(i)?;
        Ok(dot(self.user(u), self.item(i)))
    }

    fn check_triple(&self, t: &BprTriple) -> Result<()> {
        self.check_user(t.user)?;
        self.check_item(t.pos)?;
        self.check_item(t.neg)
    }
}

/// A user, one of their positives and a sampled negative.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BprTriple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BprGradients {
    pub user: Vec<f64>,
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
}

/// `-ln σ(⟨u,i⟩ - ⟨u,j⟩)`.
pub fn bpr_loss_vectors(user: &[f64], pos: &[f64], neg: &[f64]) -> f64 {
    -log_sigmoid(dot(user, pos) - dot(user, neg))
}

pub fn bpr_gradients_vectors(user: &[f64], pos: &[f64], neg: &[f64]) -> BprGradients {
    let s = sigmoid(dot(user, neg) - dot(user, pos));
    BprGradients {
        user: neg.iter().zip(pos).map(|(j, i)| s * (j - i)).collect(),
        pos: user.iter().map(|u| -s * u).collect(),
        neg: user.iter().map(|u| s * u).collect(),
    }
}

pub fn bpr_loss(model: &RecModel, t: &BprTriple) -> Result<f64> {
    model.check_triple(t)?;
    Ok(bpr_loss_vectors(model.user(t.user), model.item(t.pos), model.item(t.neg)))
}

pub fn bpr_gradients(model: &RecModel, t: &BprTriple) -> Result<BprGradients> {
    model.check_triple(t)?;
    Ok(bpr_gradients_vectors(model.user(t.user), model.item(t.pos), model.item(t.neg)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{axpy, l2_norm};

    fn model_with(user: &[f64], items: &[&[f64]]) -> RecModel {
        let d = user.len();
        let users = Matrix::from_vec(1, d, user.to_vec()).unwrap();
        let items = Matrix::from_vec(items.len(), d, items.concat()).unwrap();
        RecModel::from_tables(users, items).unwrap()
    }

    #[test]
    fn score_examples() {
        let m = model_with(&[1.0, 0.0], &[&[0.0, 1.0]]);
        assert_eq!(m.score(0, 0).unwrap(), 0.0);
        let m = model_with(&[1.0, 1.0], &[&[1.0, 1.0]]);
        assert_eq!(m.score(0, 0).unwrap(), 2.0);
        let m = RecModel::zeros(3, 5, 4);
        assert!((0..5).all(|i| m.score(1, i).unwrap() == 0.0));
        assert!(matches!(m.score(3, 0), Err(Error::Index(_))));
        assert!(matches!(m.score(0, 5), Err(Error::Index(_))));
    }

    #[test]
    fn score_is_bilinear_in_user() {
        let mut rng = SimRng::new(1);
        let m = RecModel::new(1, 4, 8, &mut rng);
        let mut scaled = m.clone();
        for v in scaled.user_mut(0) {
            *v *= -3.5;
        }
        for i in 0..4 {
            let a = scaled.score(0, i).unwrap();
            let b = -3.5 * m.score(0, i).unwrap();
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    #[test]
    fn bpr_loss_examples() {
        let t = BprTriple { user: 0, pos: 0, neg: 1 };
        let m = model_with(&[1.0, 2.0], &[&[0.5, 0.5], &[0.5, 0.5]]);
        assert!((bpr_loss(&m, &t).unwrap() - 2f64.ln()).abs() < 1e-15);
        let m = model_with(&[1.0], &[&[50.0], &[0.0]]);
        assert!(bpr_loss(&m, &t).unwrap() < 1e-20);
        let m = model_with(&[1.0], &[&[0.0], &[50.0]]);
        assert!((bpr_loss(&m, &t).unwrap() - 50.0).abs() < 1e-12);
        let m = model_with(&[1.0], &[&[0.0], &[1000.0]]);
        assert!(bpr_loss(&m, &t).unwrap().is_finite());
    }

    #[test]
    fn zero_embeddings_have_zero_gradients() {
        let m = RecModel::zeros(1, 2, 3);
        let g = bpr_gradients(&m, &BprTriple { user: 0, pos: 0, neg: 1 }).unwrap();
        assert!(g.user.iter().chain(&g.pos).chain(&g.neg).all(|&v| v == 0.0));
    }

    #[test]
    fn swapped_pair_losses_bound() {
        let mut rng = SimRng::new(2);
        for _ in 0..50 {
            let m = RecModel::new(1, 2, 6, &mut rng);
            let a = bpr_loss(&m, &BprTriple { user: 0, pos: 0, neg: 1 }).unwrap();
            let b = bpr_loss(&m, &BprTriple { user: 0, pos: 1, neg: 0 }).unwrap();
            assert!(a + b >= 2.0 * 2f64.ln() - 1e-15);
        }
    }

    #[test]
    fn bpr_gradients_match_finite_differences() {
        let mut rng = SimRng::new(3);
        let h = 1e-4;
        for _ in 0..100 {
            let d = 1 + rng.index(12);
            let draw = |rng: &mut SimRng| (0..d).map(|_| rng.gaussian(0.0, 1.0)).collect::<Vec<_>>();
            let (u, i, j) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let g = bpr_gradients_vectors(&u, &i, &j);
            let fd = |which: usize| -> Vec<f64> {
                (0..d)
                    .map(|k| {
                        let mut vs = [u.clone(), i.clone(), j.clone()];
                        vs[which][k] += h;
                        let fp = bpr_loss_vectors(&vs[0], &vs[1], &vs[2]);
                        vs[which][k] -= 2.0 * h;
                        let fm = bpr_loss_vectors(&vs[0], &vs[1], &vs[2]);
                        (fp - fm) / (2.0 * h)
                    })
                    .collect()
            };
            for (which, analytic) in [&g.user, &g.pos, &g.neg].into_iter().enumerate() {
                let numeric = fd(which);
                let mut diff = analytic.clone();
                axpy(-1.0, &numeric, &mut diff);
                let rel = l2_norm(&diff) / l2_norm(analytic).max(l2_norm(&numeric)).max(1e-300);
                assert!(rel <= 1e-5, "group {which}: rel {rel}");
            }
        }
    }

    #[test]
    fn small_sgd_step_decreases_triple_loss() {
        let mut rng = SimRng::new(4);
        for _ in 0..100 {
            let m = RecModel::new(1, 2, 16, &mut rng);
            let t = BprTriple { user: 0, pos: 0, neg: 1 };
            let before = bpr_loss(&m, &t).unwrap();
            let g = bpr_gradients(&m, &t).unwrap();
            for lr in [0.1, 0.01] {
                let mut stepped = m.clone();
                axpy(-lr, &g.user, stepped.user_mut(0));
                axpy(-lr, &g.pos, stepped.item_mut(0));
                axpy(-lr, &g.neg, stepped.item_mut(1));
                assert!(bpr_loss(&stepped, &t).unwrap() < before);
            }
        }
    }
}
