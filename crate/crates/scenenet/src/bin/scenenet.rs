//! Command-line entry point: build/describe networks, count their cost,
//! filter images spectrally, sweep filter sizes against a checkpoint,
//! train and evaluate desk-scale models, and generate synthetic data.
//!
//! Exit codes: 0 success, 2 validation/configuration error, 3 numeric
//! failure (non-finite loss).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scenenet::arch::{build, config as arch_config, Network};
use scenenet::cost;
use scenenet::error::Error;
use scenenet::freq::{self, FilterKind, FilterSpec};
use scenenet::image_io::{read_image, write_image, RgbImage};
use scenenet::tensor::{Shape, Tensor4};
use scenenet::train::checkpoint::{self, Checkpoint};
use scenenet::train::dataset::{
    load_image_folder, synthetic_dataset, write_image_folder, Dataset, DatasetSource,
    SyntheticSpec,
};
use scenenet::train::{self, EvalOptions, TrainConfig, Trainer};

#[derive(Parser)]
#[command(
    name = "scenenet",
    about = "Deterministic CNN engine: deep-narrow residual networks, dilated pooling, cost analysis and spectral filtering",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the layer listing of an architecture.
    Describe {
        /// Architecture config: a file path or inline `key=value,...`.
        #[arg(long)]
        arch: String,
        /// Human-aligned table instead of CSV.
        #[arg(long)]
        pretty: bool,
    },
    /// Static cost report (multiply-accumulates and parameters).
    Cost {
        #[arg(long)]
        arch: String,
        /// Square input side.
        #[arg(long, default_value_t = 224)]
        input: usize,
        /// Write the per-layer CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        pretty: bool,
    },
    /// Filter one image in the frequency domain.
    Filter {
        /// low or high.
        #[arg(long)]
        kind: String,
        /// Filter size in [0, N].
        #[arg(long)]
        size: usize,
        /// Input image (ppm/pgm/png).
        #[arg(long)]
        data: PathBuf,
        /// Output image path.
        #[arg(long)]
        out: PathBuf,
        /// Also dump the binary mask as an image.
        #[arg(long)]
        mask_out: Option<PathBuf>,
    },
    /// Accuracy vs filter size over a dataset, using a trained checkpoint.
    Sweep {
        /// Checkpoint directory.
        #[arg(long)]
        ckpt: PathBuf,
        /// Image-folder dataset root.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Synthetic dataset spec `classes=..,side=..,per_class=..,sigma=..`.
        #[arg(long)]
        synthetic: Option<String>,
        #[arg(long)]
        kind: String,
        /// Comma-separated sizes, e.g. `0,56,112,168,224`.
        #[arg(long)]
        sizes: String,
        /// Write the CSV here as well as stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        /// Randomly sample this many classes (seeded) from an image folder.
        #[arg(long)]
        classes_subset: Option<usize>,
        /// Force fully serial execution.
        #[arg(long)]
        strict: bool,
    },
    /// Train a model.
    Train {
        #[arg(long)]
        arch: String,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        synthetic: Option<String>,
        /// Separate validation folder; training data is reused when absent.
        #[arg(long)]
        val_data: Option<PathBuf>,
        /// Checkpoint output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 256)]
        batch: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        classes_subset: Option<usize>,
    },
    /// Evaluate a checkpoint, optionally through a spectral filter.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        synthetic: Option<String>,
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        classes_subset: Option<usize>,
        #[arg(long)]
        strict: bool,
    },
    /// Generate a synthetic grating dataset as an image folder.
    GenData {
        #[arg(long)]
        synthetic: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn worker_count(strict: bool) -> usize {
    if strict {
        return 1;
    }
    std::env::var("SCENENET_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

fn load_dataset(
    data: Option<&Path>,
    synthetic: Option<&str>,
    seed: u64,
    classes_subset: Option<usize>,
) -> Result<Dataset, Error> {
    let source = match (data, synthetic) {
        (Some(root), None) => DatasetSource::Folder {
            root: root.to_path_buf(),
            class_subset: classes_subset.map(|k| (k, seed)),
        },
        (None, Some(spec)) => DatasetSource::Synthetic(SyntheticSpec::parse(spec)?),
        (Some(_), Some(_)) => {
            return Err(Error::Validation(
                "--data and --synthetic are mutually exclusive".into(),
            ))
        }
        (None, None) => {
            return Err(Error::Validation(
                "one of --data or --synthetic is required".into(),
            ))
        }
    };
    source.load(seed)
}

fn parse_sizes(text: &str) -> Result<Vec<usize>, Error> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Validation(format!("bad size '{s}'")))
        })
        .collect()
}

fn image_to_unit_tensor(image: &RgbImage) -> Tensor4<f64> {
    Tensor4::from_fn(Shape::new(1, 3, image.height, image.width), |_, c, k, l| {
        image.pixels[(k * image.width + l) * 3 + c] as f64 / 255.0
    })
}

fn unit_tensor_to_image(t: &Tensor4<f64>) -> RgbImage {
    let s = t.shape();
    let mut pixels = Vec::with_capacity(s.h * s.w * 3);
    for k in 0..s.h {
        for l in 0..s.w {
            for c in 0..3 {
                pixels.push((t.at(0, c, k, l).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    RgbImage::new(s.w, s.h, pixels).expect("constructed buffer matches dims")
}

fn maybe_write(path: Option<&Path>, contents: &str) -> Result<(), Error> {
    if let Some(path) = path {
        std::fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Describe { arch, pretty } => {
            let spec = arch_config::load(&arch)?;
            let net: Network<f32> = build(&spec, 0)?;
            let rows = net.layer_summaries(spec.input_size)?;
            if pretty {
                println!(
                    "{:<28} {:<26} {:<20} {:>12} {:>14}",
                    "layer", "type", "output", "macs", "params"
                );
                for row in &rows {
                    println!(
                        "{:<28} {:<26} {:<20} {:>12} {:>14}",
                        row.path,
                        row.kind,
                        row.output.to_string(),
                        row.macs,
                        row.params
                    );
                }
            } else {
                println!("layer,type,output,macs,params");
                for row in &rows {
                    println!(
                        "{},{},{}x{}x{}x{},{},{}",
                        row.path,
                        row.kind,
                        row.output.n,
                        row.output.c,
                        row.output.h,
                        row.output.w,
                        row.macs,
                        row.params
                    );
                }
            }
            println!(
                "# weighted_layers={} params={}",
                net.weighted_depth(),
                net.param_count()
            );
        }
        Command::Cost {
            arch,
            input,
            out,
            pretty,
        } => {
            let spec = arch_config::load(&arch)?;
            let net: Network<f32> = build(&spec, 0)?;
            let report = cost::report(&net, (input, input))?;
            maybe_write(out.as_deref(), &report.to_csv())?;
            if pretty {
                println!("{:<28} {:>14} {:>12}", "layer", "macs", "params");
                for row in &report.per_layer {
                    println!("{:<28} {:>14} {:>12}", row.path, row.macs, row.params);
                }
                println!(
                    "total: {:.4} GFLOPs, {:.4}M params at {}x{}",
                    report.total_gflops(),
                    report.total_params_m(),
                    input,
                    input
                );
            }
            println!("{}", report.summary_line());
        }
        Command::Filter {
            kind,
            size,
            data,
            out,
            mask_out,
        } => {
            let kind = FilterKind::parse(&kind)?;
            let image = read_image(&data)?;
            if image.width != image.height {
                return Err(Error::Validation(format!(
                    "input image must be square, got {}x{}",
                    image.width, image.height
                )));
            }
            let filter = FilterSpec::new(kind, size);
            filter.validate(image.width)?;
            let tensor = image_to_unit_tensor(&image);
            let filtered = freq::apply_filter(&tensor, &filter)?;
            write_image(&out, &unit_tensor_to_image(&filtered))?;
            if let Some(mask_path) = mask_out {
                let mask = freq::make_mask(&filter, image.width)?;
                let gray = freq::mask_to_gray(&mask);
                let rgb = RgbImage::from_gray(image.width, image.width, &gray)?;
                write_image(&mask_path, &rgb)?;
            }
        }
        Command::Sweep {
            ckpt,
            data,
            synthetic,
            kind,
            sizes,
            out,
            seed,
            batch,
            classes_subset,
            strict,
        } => {
            let kind = FilterKind::parse(&kind)?;
            let sizes = parse_sizes(&sizes)?;
            let loaded: Checkpoint<f32> = checkpoint::load(&ckpt)?;
            let dataset = load_dataset(data.as_deref(), synthetic.as_deref(), seed, classes_subset)?;
            let opts = EvalOptions {
                batch_size: batch,
                workers: worker_count(strict),
            };
            let rows = freq::sweep(&loaded.net, &dataset, &loaded.norm, kind, &sizes, opts)?;
            let mut csv = String::from(freq::sweep_csv_header());
            csv.push('\n');
            for row in &rows {
                csv.push_str(&row.to_csv_row());
                csv.push('\n');
            }
            print!("{csv}");
            maybe_write(out.as_deref(), &csv)?;
        }
        Command::Train {
            arch,
            data,
            synthetic,
            val_data,
            out,
            epochs,
            batch,
            lr,
            seed,
            strict,
            classes_subset,
        } => {
            let spec = arch_config::load(&arch)?;
            let dataset = load_dataset(data.as_deref(), synthetic.as_deref(), seed, classes_subset)?;
            if dataset.num_classes() != spec.num_classes {
                return Err(Error::Validation(format!(
                    "architecture expects {} classes but the dataset has {}",
                    spec.num_classes,
                    dataset.num_classes()
                )));
            }
            let val = match val_data {
                Some(root) => Some(load_image_folder(&root, None)?),
                None => None,
            };
            let net: Network<f32> = build(&spec, seed)?;
            let cfg = TrainConfig {
                base_lr: lr,
                batch_size: batch,
                epochs,
                seed,
                strict_determinism: strict,
                ..TrainConfig::default()
            };
            let mut trainer = Trainer::new(net, dataset, val, cfg)?;
            let mut log_csv = String::from(train::epoch_log_csv_header());
            log_csv.push('\n');
            println!("{}", train::epoch_log_csv_header());
            for _ in 0..epochs {
                let log = trainer.run_epoch()?;
                let row = log.to_csv_row();
                println!("{row}");
                log_csv.push_str(&row);
                log_csv.push('\n');
            }
            checkpoint::save(&out, &trainer.net, &trainer.norm, trainer.epochs_run())?;
            std::fs::write(out.join("train_log.csv"), log_csv)
                .map_err(|e| Error::io(out.join("train_log.csv").display().to_string(), e))?;
        }
        Command::Eval {
            ckpt,
            data,
            synthetic,
            kind,
            size,
            batch,
            seed,
            classes_subset,
            strict,
        } => {
            let loaded: Checkpoint<f32> = checkpoint::load(&ckpt)?;
            let dataset = load_dataset(data.as_deref(), synthetic.as_deref(), seed, classes_subset)?;
            let filter = match (kind, size) {
                (Some(kind), Some(size)) => Some(FilterSpec::new(FilterKind::parse(&kind)?, size)),
                (None, None) => None,
                _ => {
                    return Err(Error::Validation(
                        "--kind and --size must be given together".into(),
                    ))
                }
            };
            let opts = EvalOptions {
                batch_size: batch,
                workers: worker_count(strict),
            };
            let metrics = train::evaluate(&loaded.net, &dataset, &loaded.norm, filter.as_ref(), opts)?;
            println!("top1,top5,mean_loss,n");
            println!(
                "{},{},{},{}",
                metrics.top1, metrics.top5, metrics.mean_loss, metrics.n
            );
        }
        Command::GenData { synthetic, seed, out } => {
            let spec = SyntheticSpec::parse(&synthetic)?;
            let dataset = synthetic_dataset(&spec, seed)?;
            write_image_folder(&dataset, &out)?;
            println!(
                "wrote {} images ({} classes, side {}) under {}",
                dataset.len(),
                dataset.num_classes(),
                dataset.side,
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::NonFinite { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
