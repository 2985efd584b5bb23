//! Paired datasets in the tensor-archive format.
//!
//! Entries `hr.{i}`, `lr.{i}` and `kernel.{i}` (flattened weights); kernel
//! parameters live in metadata as `kernel.{i}.size`, `.lambda1`, `.lambda2`,
//! `.theta`, plus a global `scale`.

use crate::degradation::{GaussianKernel, PairedDataset};
use crate::tensor::Tensor;
use crate::{Error, Result};

use super::archive::TensorArchive;

pub fn dataset_to_archive(ds: &PairedDataset) -> Result<TensorArchive> {
    let mut a = TensorArchive::new();
    a.set_meta("kind", "paired-dataset")?;
    a.set_meta("scale", ds.scale)?;
    a.set_meta("count", ds.len())?;
    for (i, ((hr, lr), k)) in ds.hr.iter().zip(&ds.lr).zip(&ds.kernels).enumerate() {
        a.insert(format!("hr.{i}"), hr.clone())?;
        a.insert(format!("lr.{i}"), lr.clone())?;
        let w = Tensor::new(vec![k.size(), k.size()], k.weights().iter().map(|&v| v as f32).collect())?;
        a.insert(format!("kernel.{i}"), w)?;
        a.set_meta(format!("kernel.{i}.size"), k.size())?;
        a.set_meta(format!("kernel.{i}.lambda1"), k.lambda1())?;
        a.set_meta(format!("kernel.{i}.lambda2"), k.lambda2())?;
        a.set_meta(format!("kernel.{i}.theta"), k.theta())?;
    }
    Ok(a)
}

/// Rebuild a dataset; kernels are regenerated from their stored parameters.
pub fn dataset_from_archive(a: &TensorArchive) -> Result<PairedDataset> {
    if a.meta("kind") != Some("paired-dataset") {
        return Err(Error::Invalid("archive is not a paired dataset".into()));
    }
    let n: usize = a.meta_parse("count")?;
    let mut ds = PairedDataset { hr: Vec::new(), lr: Vec::new(), kernels: Vec::new(), scale: a.meta_parse("scale")? };
    for i in 0..n {
        ds.hr.push(a.require(&format!("hr.{i}"))?.clone());
        ds.lr.push(a.require(&format!("lr.{i}"))?.clone());
        ds.kernels.push(GaussianKernel::new(
            a.meta_parse(&format!("kernel.{i}.size"))?,
            a.meta_parse(&format!("kernel.{i}.lambda1"))?,
            a.meta_parse(&format!("kernel.{i}.lambda2"))?,
            a.meta_parse(&format!("kernel.{i}.theta"))?,
        )?);
    }
    Ok(ds)
}
