//! Checkpoints: a plain-text manifest plus one binary tensor file per
//! named parameter and running statistic.
//!
//! Everything written is a deterministic function of the network state,
//! so two identical training runs produce byte-identical checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::arch::{build, ArchSpec, Network};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use crate::tensor_io;
use crate::train::dataset::Normalization;

const MANIFEST: &str = "manifest.txt";
const TENSOR_DIR: &str = "tensors";

pub fn save<S: Scalar>(
    dir: &Path,
    net: &Network<S>,
    norm: &Normalization,
    epoch: usize,
) -> Result<()> {
    let tensors_dir = dir.join(TENSOR_DIR);
    fs::create_dir_all(&tensors_dir).map_err(|e| Error::io(tensors_dir.display().to_string(), e))?;

    let mut manifest = String::from("scenenet-checkpoint v1\n");
    manifest.push_str(&crate::arch::config::to_text(&net.spec));
    manifest.push_str(&format!("epoch = {epoch}\n"));
    manifest.push_str(&format!(
        "mean = {},{},{}\n",
        norm.mean[0], norm.mean[1], norm.mean[2]
    ));
    manifest.push_str(&format!(
        "std = {},{},{}\n",
        norm.std[0], norm.std[1], norm.std[2]
    ));

    let mut failure: Option<Error> = None;
    let mut dump = |name: &str, tensor: &Tensor4<S>| {
        if failure.is_some() {
            return;
        }
        let s = tensor.shape();
        manifest.push_str(&format!(
            "tensor {name} {} {} {} {} {}\n",
            match S::DTYPE {
                crate::scalar::Dtype::F32 => "f32",
                crate::scalar::Dtype::F64 => "f64",
            },
            s.n,
            s.c,
            s.h,
            s.w
        ));
        if let Err(e) = tensor_io::write_file(&tensors_dir.join(format!("{name}.tnsr")), tensor) {
            failure = Some(e);
        }
    };
    net.visit_params(&mut |name, t| dump(name, t));
    net.visit_buffers(&mut |name, t| dump(name, t));
    if let Some(e) = failure {
        return Err(e);
    }
    fs::write(dir.join(MANIFEST), manifest)
        .map_err(|e| Error::io(dir.join(MANIFEST).display().to_string(), e))
}

pub struct Checkpoint<S: Scalar> {
    pub net: Network<S>,
    pub norm: Normalization,
    pub epoch: usize,
}

fn parse_triple(value: &str, key: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = value.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Format(format!("manifest {key}: expected 3 values")));
    }
    let mut out = [0.0; 3];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("manifest {key}: bad float '{part}'")))?;
    }
    Ok(out)
}

pub fn load<S: Scalar>(dir: &Path) -> Result<Checkpoint<S>> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("scenenet-checkpoint v1") => {}
        other => {
            return Err(Error::Format(format!(
                "unsupported checkpoint header {other:?}"
            )))
        }
    }
    let mut arch_lines = Vec::new();
    let mut epoch = 0usize;
    let mut mean = [0.0f64; 3];
    let mut std = [1.0f64; 3];
    let mut tensor_names = Vec::new();
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("tensor ") {
            let name = rest
                .split_whitespace()
                .next()
                .ok_or_else(|| Error::Format("manifest: empty tensor row".into()))?;
            tensor_names.push(name.to_string());
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("manifest: bad line '{line}'")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "epoch" => {
                epoch = value
                    .parse()
                    .map_err(|_| Error::Format(format!("manifest epoch: '{value}'")))?
            }
            "mean" => mean = parse_triple(value, "mean")?,
            "std" => std = parse_triple(value, "std")?,
            _ => arch_lines.push(line.to_string()),
        }
    }
    let spec: ArchSpec = crate::arch::config::from_text(&arch_lines.join("\n"))?;
    let mut net: Network<S> = build(&spec, 0)?;

    let tensors_dir = dir.join(TENSOR_DIR);
    let mut loaded: BTreeMap<String, Tensor4<S>> = BTreeMap::new();
    for name in &tensor_names {
        let tensor = tensor_io::read_file(&tensors_dir.join(format!("{name}.tnsr")))?;
        loaded.insert(name.clone(), tensor);
    }

    let mut missing = Vec::new();
    let mut assign = |name: &str, slot: &mut Tensor4<S>, missing: &mut Vec<String>| {
        match loaded.remove(name) {
            Some(tensor) if tensor.shape() == slot.shape() => *slot = tensor,
            Some(tensor) => missing.push(format!(
                "{name}: shape {} does not match {}",
                tensor.shape(),
                slot.shape()
            )),
            None => missing.push(format!("{name}: absent from checkpoint")),
        }
    };
    net.visit_params_mut(&mut |name, value, _| assign(name, value, &mut missing));
    net.visit_buffers_mut(&mut |name, value| assign(name, value, &mut missing));
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "checkpoint does not match architecture: {}",
            missing.join("; ")
        )));
    }
    if !loaded.is_empty() {
        let extras: Vec<String> = loaded.keys().cloned().collect();
        return Err(Error::Validation(format!(
            "checkpoint has tensors the architecture does not: {}",
            extras.join(", ")
        )));
    }
    Ok(Checkpoint {
        net,
        norm: Normalization { mean, std },
        epoch,
    })
}
