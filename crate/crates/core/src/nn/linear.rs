use super::params::{Initializer, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Affine map on the last dimension: `x [..., in] · weight [in, out] + bias [out]`.
pub fn linear<E: Element>(x: &Tensor<E>, weight: &Tensor<E>, bias: Option<&Tensor<E>>) -> Result<Tensor<E>> {
    let last = *x.shape().last().expect("non-empty shape");
    if weight.ndim() != 2 || weight.shape()[0] != last {
        return Err(Error::shape(format!(
            "linear: input {:?} with weight {:?}",
            x.shape(),
            weight.shape()
        )));
    }
    let y = if x.ndim() == 1 {
        x.reshape(&[1, last])?.matmul(weight)?.reshape(&[weight.shape()[1]])?
    } else {
        x.matmul(weight)?
    };
    match bias {
        Some(b) => y.add(b),
        None => Ok(y),
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub bias: bool,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        Linear {
            name: name.into(),
            in_dim,
            out_dim,
            bias,
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + if self.bias { self.out_dim } else { 0 }
    }

    pub fn register<E: Element>(&self, ps: &mut ParamStore<E>, init: &mut Initializer) -> Result<()> {
        ps.insert(
            format!("{}.weight", self.name),
            init.fan_in_uniform(&[self.in_dim, self.out_dim], self.in_dim),
        )?;
        if self.bias {
            ps.insert(format!("{}.bias", self.name), init.constant(&[self.out_dim], 0.0))?;
        }
        Ok(())
    }

    pub fn forward<E: Element>(&self, ps: &ParamStore<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        let w = ps.get(&format!("{}.weight", self.name))?;
        let b = if self.bias {
            Some(ps.get(&format!("{}.bias", self.name))?)
        } else {
            None
        };
        linear(x, w, b)
    }
}
