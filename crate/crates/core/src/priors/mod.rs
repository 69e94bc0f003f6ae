//! Regularizers for the ADMM w-update.
//!
//! [`ProxOp`] gives closed-form proximity operators for the classical
//! penalties; [`Denoiser`] is the plug-and-play replacement.

mod denoise;

pub use denoise::{
    external_denoise, gaussian_smooth, median3, rof_objective, total_variation, tv_chambolle,
    Denoiser, DenoiserKind, ExternalDenoiser,
};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxKind {
    /// `g = 0`.
    Zero,
    /// `g(u) = ||u||_1`.
    L1,
    /// `g(u) = 1/2 ||u||^2`.
    SqL2,
}

/// `weight * g` for one of the closed-form penalties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxOp {
    pub kind: ProxKind,
    #[serde(default)]
    pub weight: f64,
}

impl ProxOp {
    pub fn zero() -> Self {
        Self { kind: ProxKind::Zero, weight: 0.0 }
    }

    pub fn l1(weight: f64) -> Self {
        Self { kind: ProxKind::L1, weight }
    }

    pub fn sq_l2(weight: f64) -> Self {
        Self { kind: ProxKind::SqL2, weight }
    }

    /// Penalty value `weight * g(u)`.
    pub fn value(&self, u: &DVector<f64>) -> f64 {
        match self.kind {
            ProxKind::Zero => 0.0,
            ProxKind::L1 => self.weight * u.lp_norm(1),
            ProxKind::SqL2 => 0.5 * self.weight * u.norm_squared(),
        }
    }

    /// `argmin_u  scale * weight * g(u) + 1/2 ||u - v||^2`.
    pub fn prox(&self, v: &DVector<f64>, scale: f64) -> DVector<f64> {
        let t = self.weight * scale;
        match self.kind {
            ProxKind::Zero => v.clone(),
            ProxKind::L1 => v.map(|x| soft_threshold(x, t)),
            ProxKind::SqL2 => v / (1.0 + t),
        }
    }
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn prox_examples() {
        let v = DVector::from_vec(vec![2.0, -0.3, 0.0]);
        let out = ProxOp::l1(0.5).prox(&v, 1.0);
        assert_eq!(out.as_slice(), &[1.5, 0.0, 0.0]);
        assert_eq!(ProxOp::zero().prox(&v, 3.0), v);
        let out = ProxOp::sq_l2(1.0).prox(&DVector::from_vec(vec![4.0]), 1.0);
        assert_eq!(out[0], 2.0);
        // Scale multiplies the weight.
        let out = ProxOp::l1(0.25).prox(&DVector::from_vec(vec![2.0]), 2.0);
        assert_eq!(out[0], 1.5);
    }

    #[test]
    fn values() {
        let u = DVector::from_vec(vec![1.0, -2.0]);
        assert_eq!(ProxOp::zero().value(&u), 0.0);
        assert_eq!(ProxOp::l1(0.5).value(&u), 1.5);
        assert_eq!(ProxOp::sq_l2(2.0).value(&u), 5.0);
    }

    #[test]
    fn config_shape() {
        let op: ProxOp = serde_json::from_str(r#"{"kind": "l1", "weight": 0.1}"#).unwrap();
        assert_eq!(op, ProxOp::l1(0.1));
        let op: ProxOp = serde_json::from_str(r#"{"kind": "zero"}"#).unwrap();
        assert_eq!(op, ProxOp::zero());
    }

    fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..12).prop_flat_map(|n| {
            (
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(-5.0f64..5.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn prox_is_firmly_nonexpansive((u, v) in vec_pair(), w in 0.0f64..3.0, s in 0.01f64..3.0) {
            let u = DVector::from_vec(u);
            let v = DVector::from_vec(v);
            for op in [ProxOp::zero(), ProxOp::l1(w), ProxOp::sq_l2(w)] {
                let pu = op.prox(&u, s);
                let pv = op.prox(&v, s);
                let d = &pu - &pv;
                // ||Pu - Pv||^2 <= <Pu - Pv, u - v>
                prop_assert!(d.norm_squared() <= d.dot(&(&u - &v)) + 1e-12);
                prop_assert!(d.norm() <= (&u - &v).norm() + 1e-12);
            }
        }

        #[test]
        fn soft_threshold_optimality(x in -5.0f64..5.0, t in 0.0f64..3.0) {
            // 0 in (u - x) + t * subdiff|u|
            let u = soft_threshold(x, t);
            if u != 0.0 {
                prop_assert!((u - x + t * u.signum()).abs() < 1e-12);
            } else {
                prop_assert!((x - u).abs() <= t + 1e-12);
            }
        }

        #[test]
        fn sq_l2_prox_minimizes(x in -5.0f64..5.0, w in 0.0f64..3.0, s in 0.01f64..3.0) {
            let v = DVector::from_element(1, x);
            let u = ProxOp::sq_l2(w).prox(&v, s)[0];
            // derivative s*w*u + (u - x) vanishes.
            prop_assert!((s * w * u + u - x).abs() < 1e-12);
        }
    }
}
