use serde::{Deserialize, Serialize};

use crate::dcore::Tensor;
use crate::error::{Error, Result};

/// How a grouped tensor maps back onto frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLayout {
    pub group_size: usize,
    /// Channels per frame before grouping.
    pub frame_channels: usize,
    /// Frame count before padding.
    pub original_length: usize,
}

impl GroupLayout {
    pub fn groups(&self) -> usize {
        self.original_length.div_ceil(self.group_size)
    }

    pub fn width(&self) -> usize {
        self.group_size * self.frame_channels
    }
}

/// Grouped model input `[⌈T/N⌉ × N·D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInputTensor {
    pub values: Tensor,
    pub layout: GroupLayout,
}

/// Frame index feeding each grouped slot; the trailing partial group
/// repeats the last frame.
pub fn group_frame_index(len: usize, group_size: usize) -> Vec<usize> {
    let g = len.div_ceil(group_size);
    (0..g * group_size).map(|i| i.min(len - 1)).collect()
}

/// Concatenates every `N` consecutive frames of `x: [T×D]` channel-wise.
pub fn group(x: &Tensor, group_size: usize) -> Result<ModelInputTensor> {
    if group_size == 0 {
        return Err(Error::Config("group size must be positive".into()));
    }
    let (t, d) = (x.rows(), x.cols());
    if t == 0 || x.numel() == 0 {
        return Err(Error::EmptySequence("cannot group an empty sequence"));
    }
    let layout = GroupLayout {
        group_size,
        frame_channels: d,
        original_length: t,
    };
    let mut data = Vec::with_capacity(layout.groups() * layout.width());
    for i in group_frame_index(t, group_size) {
        data.extend_from_slice(x.row_slice(i));
    }
    Ok(ModelInputTensor {
        values: Tensor::matrix(layout.groups(), layout.width(), data)?,
        layout,
    })
}

/// Inverse of [`group`], truncated to the original length.
pub fn ungroup(g: &ModelInputTensor) -> Result<Tensor> {
    let l = &g.layout;
    if l.group_size == 0 || g.values.rows() != l.groups() || g.values.cols() != l.width() {
        return Err(Error::Format(format!(
            "grouped values {:?} do not match layout {:?}",
            g.values.shape(),
            l
        )));
    }
    let data = g.values.data()[..l.original_length * l.frame_channels].to_vec();
    Tensor::matrix(l.original_length, l.frame_channels, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_pairs() {
        let x = Tensor::matrix(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = group(&x, 2).unwrap();
        assert_eq!(g.values.shape(), &[2, 2]);
        assert_eq!(g.values.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn pads_with_last_frame() {
        let x = Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let g = group(&x, 2).unwrap();
        assert_eq!(g.values.data(), &[1.0, 2.0, 3.0, 3.0]);
        assert_eq!(g.layout.original_length, 3);
        assert_eq!(ungroup(&g).unwrap(), x);
    }

    #[test]
    fn group_size_one_is_identity() {
        let x = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(group(&x, 1).unwrap().values, x);
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert!(matches!(
            group(&Tensor::zeros(&[0, 2]), 2),
            Err(Error::EmptySequence(_))
        ));
        let mut g = group(&Tensor::zeros(&[4, 2]), 2).unwrap();
        g.layout.frame_channels = 3;
        assert!(matches!(ungroup(&g), Err(Error::Format(_))));
    }
}
