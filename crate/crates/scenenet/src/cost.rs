//! Static cost analysis: multiply-accumulate and parameter counting.
//!
//! Conventions: one multiply-accumulate counts as one FLOP; batch norm,
//! activations, pooling and softmax count as zero; batch-norm running
//! statistics are not parameters. Convolution cost is
//! `oh*ow*out_c*(in_c*kh*kw)` at the resolution the kernel slides over,
//! and a linear layer costs `in*out`.

use crate::arch::{LayerSummary, Network};
use crate::error::Result;
use crate::scalar::Scalar;

/// Per-layer and total cost figures for one network at one input size.
#[derive(Debug, Clone)]
pub struct CostReport {
    pub model: String,
    pub input_size: (usize, usize),
    pub per_layer: Vec<LayerSummary>,
    pub total_macs: u128,
    pub total_params: usize,
}

impl CostReport {
    /// Total multiply-accumulates in units of 1e9.
    pub fn total_gflops(&self) -> f64 {
        self.total_macs as f64 / 1e9
    }

    /// Total parameters in millions.
    pub fn total_params_m(&self) -> f64 {
        self.total_params as f64 / 1e6
    }

    /// Single summary line: `<model> <gflops> <params_m>`, both figures
    /// rounded half-up to two decimals.
    pub fn summary_line(&self) -> String {
        format!(
            "{} {} {}",
            self.model,
            round2(self.total_gflops()),
            round2(self.total_params_m())
        )
    }

    /// CSV body: `layer,macs,params` rows followed by a totals row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,macs,params\n");
        for row in &self.per_layer {
            out.push_str(&format!("{},{},{}\n", row.path, row.macs, row.params));
        }
        out.push_str(&format!("total,{},{}\n", self.total_macs, self.total_params));
        out
    }

    /// MAC subtotal of convolution layers only (the classifier and
    /// everything cost-free excluded).
    pub fn conv_macs(&self) -> u128 {
        self.per_layer
            .iter()
            .filter(|r| r.path != "fc")
            .map(|r| r.macs)
            .sum()
    }

    /// Parameter subtotal of convolution weights only.
    pub fn conv_params(&self) -> usize {
        self.per_layer
            .iter()
            .filter(|r| r.kind.contains("conv"))
            .map(|r| r.params)
            .sum()
    }
}

/// Round half-up to two decimals, formatted with exactly two decimals.
/// The tiny bias keeps exact .xx5 inputs from falling just under the
/// boundary after the binary representation error.
fn round2(v: f64) -> String {
    let scaled = (v * 100.0 + 0.5 + 1e-9).floor() / 100.0;
    format!("{scaled:.2}")
}

/// Counts every learned parameter: convolution weights, batch-norm
/// gamma/beta, linear weights and bias. Running statistics excluded.
pub fn count_params<S: Scalar>(net: &Network<S>) -> usize {
    net.param_count()
}

/// Total multiply-accumulates for a single image of the given size.
pub fn count_flops<S: Scalar>(net: &Network<S>, input_size: (usize, usize)) -> Result<u128> {
    Ok(report(net, input_size)?.total_macs)
}

/// Assembles the full per-layer report.
pub fn report<S: Scalar>(net: &Network<S>, input_size: (usize, usize)) -> Result<CostReport> {
    let per_layer = net.layer_summaries(input_size)?;
    let total_macs = per_layer.iter().map(|r| r.macs).sum();
    let total_params = per_layer.iter().map(|r| r.params).sum();
    debug_assert_eq!(total_params, net.param_count());
    Ok(CostReport {
        model: net.spec.model_label(),
        input_size,
        per_layer,
        total_macs,
        total_params,
    })
}
