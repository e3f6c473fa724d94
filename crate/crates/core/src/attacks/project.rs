use crate::tensor::Tensor;

/// Coordinate-wise clamp onto `{x : |x - origin|_inf <= tau} ∩ [0, 1]^d`,
/// which is the Euclidean projection onto that box.
pub fn project_linf_and_box(candidate: &Tensor, origin: &Tensor, tau: f64) -> Tensor {
    let mut out = candidate.clone();
    project_in_place(out.data_mut(), origin.data(), tau);
    out
}

pub fn project_in_place(x: &mut [f64], origin: &[f64], tau: f64) {
    for (xi, &oi) in x.iter_mut().zip(origin) {
        let lo = (oi - tau).max(0.0);
        let hi = (oi + tau).min(1.0);
        *xi = xi.clamp(lo, hi);
    }
}
