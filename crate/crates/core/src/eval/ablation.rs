use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{evaluate_cell, Method};
use crate::classifier::Classifier;
use crate::data::LabeledImages;
use crate::error::{Error, Result};
use crate::quantizer::{QuantizerConfig, QuantizerNetwork};

/// A trained quantizer under a label such as `full` or `no-regularizer`.
pub struct AblationVariant<'a> {
    pub name: String,
    pub network: &'a QuantizerNetwork,
    pub config: &'a QuantizerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub gamma: f64,
    pub xi: f64,
    pub accuracy: f64,
    pub mean_distinct_colors: f64,
    pub mean_bpp: f64,
}

/// Evaluates each variant's hard pass and writes a Markdown table to `out`.
pub fn ablation_table(
    classifier: &Classifier,
    data: &LabeledImages,
    variants: &[AblationVariant<'_>],
    batch_size: usize,
    out: impl AsRef<Path>,
) -> Result<Vec<AblationRow>> {
    let Some(first) = variants.first() else {
        return Err(Error::Config("no ablation variants".into()));
    };
    let depth = first.config.bit_depth;
    if let Some(v) = variants.iter().find(|v| v.config.bit_depth != depth) {
        return Err(Error::Config(format!("variant {} uses {} bits, expected {depth}", v.name, v.config.bit_depth)));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let record = evaluate_cell(&Method::Learned(v.network, v.config), depth, classifier, data, batch_size, 0, None)?;
        rows.push(AblationRow {
            variant: v.name.clone(),
            gamma: v.config.gamma,
            xi: v.config.xi,
            accuracy: record.accuracy,
            mean_distinct_colors: record.mean_distinct_colors,
            mean_bpp: record.mean_bpp,
        });
    }
    let mut text = format!("{depth}-bit quantization, {} images\n\n", data.len());
    text.push_str("| variant | gamma | xi | accuracy (%) | colors/image | bits/pixel |\n|---|---|---|---|---|---|\n");
    for r in &rows {
        writeln!(
            text,
            "| {} | {} | {} | {:.1} | {:.2} | {:.3} |",
            r.variant,
            r.gamma,
            r.xi,
            r.accuracy * 100.0,
            r.mean_distinct_colors,
            r.mean_bpp
        )
        .expect("string write");
    }
    if let Some(parent) = out.as_ref().parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(out, text)?;
    Ok(rows)
}
