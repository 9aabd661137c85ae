use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Mean of `|pred − target|` over the batch and the three angles.
pub fn mae_loss<E: Element>(pred: &Tensor<E>, target: &Tensor<E>) -> Result<Tensor<E>> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} and target {:?} differ",
            pred.shape(),
            target.shape()
        )));
    }
    pred.sub(target)?.abs()?.mean_all()
}
