use std::path::PathBuf;

use clap::Args;
use lifmixer::model::checkpoint::Checkpoint;
use lifmixer::{DType, Real, Tensor4};

use crate::{CmdResult, Global};

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Model input as a LIFT tensor of shape (n, 3, h, w), already normalised.
    #[arg(long)]
    pub image: PathBuf,
    /// Activation name, e.g. stage0.block0.lif_out.
    #[arg(long)]
    pub layer: String,
    #[arg(long)]
    pub out: PathBuf,
}

fn export_typed<T: Real>(a: &ExportArgs) -> CmdResult {
    let model = Checkpoint::<T>::load(&a.checkpoint)?.to_model()?;
    let img = Tensor4::<T>::load_lift(&a.image)?;
    let f = model.feature(&img, &a.layer)?;
    f.save_lift(&a.out)?;
    println!("{} {} -> {}", a.layer, f.shape(), a.out.display());
    Ok(())
}

pub fn run(g: &Global, a: &ExportArgs) -> CmdResult {
    match g.dtype.unwrap_or(DType::F32) {
        DType::F32 => export_typed::<f32>(a),
        DType::F64 => export_typed::<f64>(a),
    }
}
