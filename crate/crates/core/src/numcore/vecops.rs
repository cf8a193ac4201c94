//! Vector primitives shared by the editor and the model.

use alloc::vec::Vec;

use super::tensor::dot;
use super::Real;

/// Orthogonal projection of `v` onto `span(b)`: `((v . b) / |b|^2) b`.
///
/// A zero-norm basis projects to the zero vector.
pub fn project_onto<T: Real>(v: &[T], b: &[T]) -> Vec<T> {
    assert_eq!(v.len(), b.len(), "project_onto: length mismatch");
    let bb = dot(b, b);
    if bb == T::zero() {
        return alloc::vec![T::zero(); v.len()];
    }
    let coeff = dot(v, b) / bb;
    b.iter().map(|&bi| coeff * bi).collect()
}

/// `v - project_onto(v, b)`. Returns `v` unchanged when `b` has zero norm.
pub fn orthogonal_component<T: Real>(v: &[T], b: &[T]) -> Vec<T> {
    let p = project_onto(v, b);
    v.iter().zip(&p).map(|(&vi, &pi)| vi - pi).collect()
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place<T: Real>(x: &mut [T]) {
    let max = x.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in x.iter_mut() {
        *v /= total;
    }
}

/// Affine rescale onto `[0, 1]`. Constant input maps to all zeros.
pub fn minmax_normalize<T: Real>(x: &[T]) -> Vec<T> {
    let lo = x.iter().fold(T::infinity(), |m, &v| m.min(v));
    let hi = x.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let range = hi - lo;
    if !(range > T::zero()) {
        return alloc::vec![T::zero(); x.len()];
    }
    x.iter().map(|&v| (v - lo) / range).collect()
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
pub fn norm<T: Real>(v: &[T]) -> T {
    dot(v, v).sqrt()
}
