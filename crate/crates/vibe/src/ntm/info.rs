//! Interaction information over discrete joint distributions.
//!
//! Used as a test oracle for the regularizer identities: the two conditional
//! decompositions of I(X;Y;Z) must agree on every valid joint table.

use ndarray::{Array2, Array3};

use crate::error::{Result, VibeError};

fn log2_ratio(num: f64, den: f64) -> f64 {
    (num / den).log2()
}

fn mutual_information(joint2: &Array2<f64>) -> f64 {
    let px: Vec<f64> = joint2.rows().into_iter().map(|r| r.sum()).collect();
    let pz: Vec<f64> = joint2.columns().into_iter().map(|c| c.sum()).collect();
    let mut mi = 0.0;
    for ((i, k), &p) in joint2.indexed_iter() {
        if p > 0.0 {
            mi += p * log2_ratio(p, px[i] * pz[k]);
        }
    }
    mi
}

/// I(A;C|B) from a joint table laid out as (A, B, C).
fn conditional_mutual_information(joint: &Array3<f64>) -> f64 {
    let (na, nb, nc) = joint.dim();
    let mut pb = vec![0.0; nb];
    let mut pab = Array2::<f64>::zeros((na, nb));
    let mut pbc = Array2::<f64>::zeros((nb, nc));
    for ((i, j, k), &p) in joint.indexed_iter() {
        pb[j] += p;
        pab[[i, j]] += p;
        pbc[[j, k]] += p;
    }
    let mut cmi = 0.0;
    for ((i, j, k), &p) in joint.indexed_iter() {
        if p > 0.0 {
            cmi += p * log2_ratio(p * pb[j], pab[[i, j]] * pbc[[j, k]]);
        }
    }
    cmi
}

/// Interaction information I(X;Y;Z), in bits, computed by exact enumeration
/// through both conditional decompositions:
///
/// ```text
/// I(X;Y;Z) = I(X;Z) − I(X;Z|Y) = I(Y;Z) − I(Y;Z|X)
/// ```
///
/// The joint is laid out as (X, Y, Z) and must sum to 1. The two forms are
/// required to agree within 1e-12; their midpoint is returned. The value can
/// be negative (e.g. −1 bit when Z is the XOR of two independent fair bits).
pub fn interaction_information_discrete(joint: &Array3<f64>) -> Result<f64> {
    if joint.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(VibeError::InvalidInput("joint table has negative or non-finite mass".into()));
    }
    let total: f64 = joint.sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(VibeError::InvalidInput(format!("joint table sums to {total}, not 1")));
    }
    let (nx, ny, nz) = joint.dim();

    let mut pxz = Array2::<f64>::zeros((nx, nz));
    let mut pyz = Array2::<f64>::zeros((ny, nz));
    for ((i, j, k), &p) in joint.indexed_iter() {
        pxz[[i, k]] += p;
        pyz[[j, k]] += p;
    }
    // I(X;Z) − I(X;Z|Y): condition on Y, the middle axis.
    let form_x = mutual_information(&pxz) - conditional_mutual_information(joint);
    // I(Y;Z) − I(Y;Z|X): swap axes so X becomes the conditioning axis.
    let swapped = joint.clone().permuted_axes([1, 0, 2]).as_standard_layout().to_owned();
    let form_y = mutual_information(&pyz) - conditional_mutual_information(&swapped);

    if (form_x - form_y).abs() > 1e-12 {
        return Err(VibeError::InvalidInput(format!(
            "interaction-information forms disagree: {form_x} vs {form_y}"
        )));
    }
    Ok(0.5 * (form_x + form_y))
}
