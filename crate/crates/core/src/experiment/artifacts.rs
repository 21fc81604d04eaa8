use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::run::write_text;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{matmul, Matrix, Rng};
use crate::nn::Network;
use crate::rnn::{train_sine, RnnConfig, RnnRun};

pub const IMAGE_SIDE: usize = 28;

/// `W_layer · … · W_1` (`width_layer x input_dim`), with `layer` counted from 1.
///
/// Each row maps a unit of `layer` back to input space, ignoring nonlinearities.
pub fn linearize_filters(net: &Network, layer: usize) -> Result<Matrix> {
    if layer == 0 || layer > net.layers.len() {
        return Err(Error::Argument(format!(
            "layer {layer} out of range 1..={}",
            net.layers.len()
        )));
    }
    let mut acc = net.layers[0].weights.clone();
    for l in &net.layers[1..layer] {
        acc = matmul(&l.weights, &acc)?;
    }
    Ok(acc)
}

/// Binary PGM (P5) of a row-major 8-bit image.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Min-max rescales `values` to `0..=255`; a constant row maps to all zeros.
pub fn to_gray(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    values
        .iter()
        .map(|&v| {
            if range > 0.0 && range.is_finite() {
                ((v - lo) / range * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect()
}

/// Writes `filters_layer<l>_unit<j>.pgm` for every unit of `layer`.
///
/// Requires a 784-wide input so each filter is a 28x28 image.
pub fn write_filters(net: &Network, layer: usize, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if net.input_dim() != IMAGE_SIDE * IMAGE_SIDE {
        return Err(Error::Config(format!(
            "filters need {} inputs to form {IMAGE_SIDE}x{IMAGE_SIDE} images, network has {}",
            IMAGE_SIDE * IMAGE_SIDE,
            net.input_dim()
        )));
    }
    let filters = linearize_filters(net, layer)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut paths = Vec::with_capacity(filters.rows());
    for (j, row) in filters.row_iter().enumerate() {
        let p = out_dir.join(format!("filters_layer{layer}_unit{j}.pgm"));
        fs::write(&p, encode_pgm(IMAGE_SIDE, IMAGE_SIDE, &to_gray(row)))
            .map_err(|e| Error::io(&p, e))?;
        paths.push(p);
    }
    Ok(paths)
}

/// Writes `reps_layer<l>.csv` for every layer: one `label,z*_1,...` line per example.
///
/// Stochastic layers are sampled once per example from `rng`.
pub fn export_representations(
    net: &Network,
    ds: &Dataset,
    out_dir: &Path,
    rng: &mut Rng,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut texts = vec![String::new(); net.layers.len()];
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(1000) {
        let trace = net.forward(&ds.images.select_rows(chunk), rng)?;
        for (l, lt) in trace.layers.iter().enumerate() {
            for (r, &i) in chunk.iter().enumerate() {
                let text = &mut texts[l];
                write!(text, "{}", ds.labels[i]).expect("string write");
                for v in lt.output.row(r) {
                    write!(text, ",{v}").expect("string write");
                }
                text.push('\n');
            }
        }
    }
    let mut paths = Vec::with_capacity(texts.len());
    for (l, text) in texts.iter().enumerate() {
        let p = out_dir.join(format!("reps_layer{}.csv", l + 1));
        write_text(&p, text)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Trains the sine-wave RNN and writes `rnn_metrics.csv` (`epoch,mse`) when `out_dir` is given.
pub fn rnn_train(cfg: &RnnConfig, out_dir: Option<&Path>) -> Result<RnnRun> {
    let run = train_sine(cfg)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut text = String::from("epoch,mse\n");
        for (e, m) in run.mse.iter().enumerate() {
            writeln!(text, "{e},{m}").expect("string write");
        }
        write_text(&dir.join("rnn_metrics.csv"), &text)?;
    }
    Ok(run)
}
