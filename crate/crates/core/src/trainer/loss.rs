use crate::scalar::Scalar;

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Binary cross-entropy between `Sig(pred/τ_s)` and `Sig(gt/τ_s)`.
///
/// Returns the loss and its derivative with respect to `pred`,
/// `(o_pred − o_gt) / τ_s`.
#[inline]
pub fn bce_loss<T: Scalar>(sdf_pred: T, sdf_gt: T, sigmoid_scale: T) -> (T, T) {
    let x = sdf_pred / sigmoid_scale;
    let o_gt = sigmoid(sdf_gt / sigmoid_scale);
    // logits form: softplus(x) − o_gt·x, exact even where Sig(x) rounds to 0 or 1
    let softplus = x.max(T::zero()) + (-x.abs()).exp().ln_1p();
    let loss = softplus - o_gt * x;
    (loss, (sigmoid(x) - o_gt) / sigmoid_scale)
}
