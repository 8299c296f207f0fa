//! Loss terms and their analytic gradients.
//!
//! Each function returns the loss value together with gradients with respect
//! to its matrix inputs. Cosine similarities use `x / max(‖x‖, ε)` so a zero
//! row has zero similarity with everything and a well-defined gradient.

use rand::Rng;

use crate::matrix::{dot, norm, Matrix};
use crate::relations::RelationTable;

const NORM_EPS: f64 = 1e-12;
/// Score differences are clamped to this magnitude inside the BPR log-sigmoid.
pub const BPR_CLAMP: f64 = 40.0;

/// Row-normalized copy and the row norms used (floored at ε).
fn normalize_rows(m: &Matrix) -> (Matrix, Vec<f64>) {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let n = norm(m.row(r)).max(NORM_EPS);
        out.row_mut(r).iter_mut().for_each(|x| *x /= n);
        norms.push(n);
    }
    (out, norms)
}

/// Pulls a gradient with respect to `x̂ = x / max(‖x‖, ε)` back to `x`.
fn normalize_backward(unit: &[f64], n: f64, g_unit: &[f64], out: &mut [f64]) {
    if n > NORM_EPS {
        let proj = dot(unit, g_unit);
        for ((o, &g), &u) in out.iter_mut().zip(g_unit).zip(unit) {
            *o += (g - u * proj) / n;
        }
    } else {
        for (o, &g) in out.iter_mut().zip(g_unit) {
            *o += g / NORM_EPS;
        }
    }
}

/// Row-wise unit directions with positive uniform components.
pub fn noise_directions<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let row = m.row_mut(r);
        for x in row.iter_mut() {
            *x = rng.gen::<f64>() + f64::MIN_POSITIVE;
        }
        let n = norm(row);
        row.iter_mut().for_each(|x| *x /= n);
    }
    m
}

/// `e + eps·sign(e) ⊙ dir`. The Jacobian with respect to `e` is the identity
/// wherever `e ≠ 0`.
pub fn perturb_with(e: &Matrix, dirs: &Matrix, eps: f64) -> Matrix {
    let mut out = e.clone();
    for (o, &d) in out.as_mut_slice().iter_mut().zip(dirs.as_slice()) {
        let s = if *o > 0.0 {
            1.0
        } else if *o < 0.0 {
            -1.0
        } else {
            0.0
        };
        *o += eps * s * d;
    }
    out
}

/// Two independent noise-injected views of `e`.
pub fn perturb<R: Rng>(e: &Matrix, eps: f64, rng: &mut R) -> (Matrix, Matrix) {
    let d1 = noise_directions(e.rows(), e.cols(), rng);
    let d2 = noise_directions(e.rows(), e.cols(), rng);
    (perturb_with(e, &d1, eps), perturb_with(e, &d2, eps))
}

fn log_sigmoid_neg(x: f64) -> f64 {
    // −ln σ(x) = ln(1 + e^{−x})
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean of `−ln σ(y⁺ − y⁻)`. Returns the loss and `∂L/∂y⁺` per triple
/// (the gradient for `y⁻` is its negation).
pub fn bpr_loss(y_pos: &[f64], y_neg: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(y_pos.len(), y_neg.len(), "score lists differ in length");
    let n = y_pos.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n);
    for (&p, &q) in y_pos.iter().zip(y_neg) {
        let d = p - q;
        let dc = d.clamp(-BPR_CLAMP, BPR_CLAMP);
        loss += log_sigmoid_neg(dc);
        let g = if d.abs() < BPR_CLAMP { -sigmoid(-d) } else { 0.0 };
        grad.push(g / n as f64);
    }
    (loss / n as f64, grad)
}

/// Gradients of an InfoNCE term with respect to its query and key rows.
#[derive(Clone, Debug)]
pub struct InfoNceGrads {
    pub query: Matrix,
    pub key: Matrix,
}

/// `(1/n)·Σ_a −log softmax_v(cos(q_a, k_v)/τ)[a]` over the `n` rows.
pub fn info_nce(query: &Matrix, key: &Matrix, tau: f64) -> (f64, InfoNceGrads) {
    assert_eq!(query.rows(), key.rows());
    assert_eq!(query.cols(), key.cols());
    let n = query.rows();
    let d = query.cols();
    let mut gq = Matrix::zeros(n, d);
    let mut gk = Matrix::zeros(n, d);
    if n == 0 {
        return (0.0, InfoNceGrads { query: gq, key: gk });
    }
    let (qh, qn) = normalize_rows(query);
    let (kh, kn) = normalize_rows(key);
    let mut g_qh = Matrix::zeros(n, d);
    let mut g_kh = Matrix::zeros(n, d);
    let mut loss = 0.0;
    let mut logits = vec![0.0; n];
    for a in 0..n {
        let qa = qh.row(a);
        for (v, l) in logits.iter_mut().enumerate() {
            *l = dot(qa, kh.row(v)) / tau;
        }
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        let lse = m + z.ln();
        loss += lse - logits[a];
        for v in 0..n {
            let p = (logits[v] - lse).exp();
            let coeff = (p - if v == a { 1.0 } else { 0.0 }) / (tau * n as f64);
            if coeff == 0.0 {
                continue;
            }
            for (g, &x) in g_qh.row_mut(a).iter_mut().zip(kh.row(v)) {
                *g += coeff * x;
            }
            for (g, &x) in g_kh.row_mut(v).iter_mut().zip(qa) {
                *g += coeff * x;
            }
        }
    }
    for r in 0..n {
        normalize_backward(qh.row(r), qn[r], g_qh.row(r), gq.row_mut(r));
        normalize_backward(kh.row(r), kn[r], g_kh.row(r), gk.row_mut(r));
    }
    (loss / n as f64, InfoNceGrads { query: gq, key: gk })
}

/// User and bundle terms of the noise-augmentation contrastive loss; the
/// positive of each row is the same entity in the other augmented view.
pub fn infonce_ub(
    users_a: &Matrix,
    users_b: &Matrix,
    bundles_a: &Matrix,
    bundles_b: &Matrix,
    tau: f64,
) -> (f64, InfoNceGrads, InfoNceGrads) {
    let (lu, gu) = info_nce(users_a, users_b, tau);
    let (lb, gb) = info_nce(bundles_a, bundles_b, tau);
    (lu + lb, gu, gb)
}

/// Cross-scenario contrastive loss: warm embedding as query, cold embedding
/// of the same entity as positive key.
pub fn scenario_loss(
    users_warm: &Matrix,
    users_cold: &Matrix,
    bundles_warm: &Matrix,
    bundles_cold: &Matrix,
    tau: f64,
) -> (f64, InfoNceGrads, InfoNceGrads) {
    infonce_ub(users_warm, users_cold, bundles_warm, bundles_cold, tau)
}

/// Item-pair contrastive loss against each item's R4 negatives:
/// `−(1/n)·Σ_i log(e^{1/τ} / (e^{1/τ} + Σ_k e^{cos(e_i, e_k)/τ}))` with `n` the
/// number of item rows. Items without negatives contribute zero.
pub fn item_pair_loss(items: &Matrix, relations: &RelationTable, tau: f64) -> (f64, Matrix) {
    let n = items.rows();
    let mut grad = Matrix::zeros(n, items.cols());
    if n == 0 {
        return (0.0, grad);
    }
    assert_eq!(relations.n_items(), n, "relation table and item table disagree");
    let (unit, norms) = normalize_rows(items);
    let mut g_unit = Matrix::zeros(n, items.cols());
    let mut loss = 0.0;
    let mut s = Vec::new();
    for i in 0..n {
        let negs = relations.r4_negatives(i);
        if negs.is_empty() {
            continue;
        }
        let ei = unit.row(i);
        s.clear();
        // e^{(c−1)/τ} ≤ 1 since c ≤ 1
        s.extend(negs.iter().map(|&k| ((dot(ei, unit.row(k as usize)) - 1.0) / tau).exp()));
        let total: f64 = s.iter().sum();
        loss += total.ln_1p();
        for (&k, &sk) in negs.iter().zip(&s) {
            let coeff = sk / (tau * (1.0 + total) * n as f64);
            let k = k as usize;
            for c in 0..items.cols() {
                let (xi, xk) = (unit.get(i, c), unit.get(k, c));
                g_unit.set(i, c, g_unit.get(i, c) + coeff * xk);
                g_unit.set(k, c, g_unit.get(k, c) + coeff * xi);
            }
        }
    }
    for r in 0..n {
        normalize_backward(unit.row(r), norms[r], g_unit.row(r), grad.row_mut(r));
    }
    (loss / n as f64, grad)
}
