use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ddsm_core::data::{SampleConfig, SampleGenerator};
use ddsm_core::dsm::{picard_index, spectral_decomposition, DsmSolver, NormExponents};
use ddsm_core::geometry::{rasterize_mask, sample_inclusions_with, SamplingOptions};
use ddsm_core::model::{evaluate, HeadActivation};
use ddsm_core::store::{self, Dataset, ExportFormat};
use ddsm_core::{Error, Network, NetworkConfig, Result, Sample, ScalarField};
use rayon::prelude::*;
use serde::Serialize;

use crate::{DsmArgs, GenerateArgs, PicardArgs, ReconstructArgs, TrainArgs};

fn print_config(args: &impl Serialize) -> Result<()> {
    println!("config: {}", serde_json::to_string(args)?);
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn export_both(field: &ScalarField, prefix: &Path, name: &str) -> Result<()> {
    store::export_field(field, with_suffix(prefix, &format!(".{name}.pgm")), ExportFormat::Pgm)?;
    store::export_field(field, with_suffix(prefix, &format!(".{name}.csv")), ExportFormat::Csv)
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    print_config(&a)?;
    if a.noise > 0.0 && !a.train_noise {
        return Err(Error::Parameter(
            "noise is meant for test data: use `reconstruct --noise`, or pass --train-noise \
             to add it to training samples"
                .into(),
        ));
    }
    if a.jobs == 0 {
        return Err(Error::Parameter("--jobs must be positive".into()));
    }
    let config = SampleConfig {
        scenario: a.scenario,
        grid: a.grid,
        n_pairs: a.n_pairs,
        mu0: a.mu0,
        mu1: a.mu1,
        s: a.s,
        noise: a.noise,
        limited: a.limited,
        sampling: SamplingOptions {
            count: a.primitives,
            vary_count: a.vary_count,
        },
    };
    let start = Instant::now();
    let gen = SampleGenerator::new(config.clone())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| Error::Parameter(e.to_string()))?;
    let total = a.samples;
    let samples: Vec<Sample> = pool.install(|| {
        (0..total)
            .into_par_iter()
            .map(|i| {
                let seed = a.seed.wrapping_add(i as u64);
                let s = gen.generate(seed)?;
                let s = if config.noise > 0.0 { gen.with_noise(&s, config.noise, seed)? } else { s };
                eprintln!("sample {}/{total} (seed {seed})", i + 1);
                Ok(s)
            })
            .collect::<Result<_>>()
    })?;
    let ds = Dataset {
        config,
        base_seed: a.seed,
        samples,
    };
    store::save_dataset(&a.out, &ds)?;
    println!(
        "wrote {} samples with {} pairs to {} in {:.2?}",
        ds.len(),
        a.n_pairs,
        a.out.display(),
        start.elapsed()
    );
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let ds = store::load_dataset(&a.data)?;
    let grid = vec![ds.config.grid; ds.config.scenario.dim()];
    let mut cfg = NetworkConfig::from_preset(&a.preset, &grid, ds.config.n_pairs)?;
    cfg.seed = a.seed;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.momentum {
        cfg.momentum = v;
    }
    if let Some(v) = a.batch {
        cfg.batch = v;
    }
    if let Some(v) = &a.widths {
        cfg.widths = v.clone();
    }
    if let Some(h) = &a.head {
        cfg.head = match h.as_str() {
            "sigmoid" => HeadActivation::Sigmoid,
            "relu" => HeadActivation::Relu,
            _ => return Err(Error::Parameter(format!("unknown head `{h}` (sigmoid, relu)"))),
        };
    }
    cfg.validate()?;
    print_config(&a)?;
    println!("network: {}", serde_json::to_string(&cfg)?);
    if cfg.lr == 0.0 {
        eprintln!("warning: learning rate 0 leaves the weights unchanged");
    }
    let loss_path = a.loss.clone().unwrap_or_else(|| a.out.with_extension("loss.csv"));
    let mut net = Network::new(cfg)?;
    println!("{} parameters, {} samples", net.param_count(), ds.len());
    let start = Instant::now();
    let history = net.train_with(&ds.samples, |epoch, loss| {
        eprintln!("epoch {epoch}: loss {loss:.6} ({:.1?})", start.elapsed());
    })?;
    store::save_model(&a.out, &net)?;
    let mut w = BufWriter::new(File::create(&loss_path)?);
    writeln!(w, "epoch,loss")?;
    for (i, l) in history.iter().enumerate() {
        writeln!(w, "{},{l}", i + 1)?;
    }
    w.flush()?;
    println!(
        "wrote {} and {} in {:.2?}",
        a.out.display(),
        loss_path.display(),
        start.elapsed()
    );
    Ok(())
}

pub fn reconstruct(a: ReconstructArgs) -> Result<()> {
    print_config(&a)?;
    let net = store::load_model(&a.model)?;
    let ncfg = net.config();
    let (gen, sample) = match (&a.data, a.index) {
        (Some(path), Some(index)) => {
            let ds = store::load_dataset(path)?;
            let stored = ds
                .samples
                .get(index)
                .ok_or_else(|| Error::Parameter(format!("index {index} is outside 0..{}", ds.len())))?;
            let mut config = ds.config.clone();
            config.mu0 = a.mu0.unwrap_or(config.mu0);
            config.mu1 = a.mu1.unwrap_or(config.mu1);
            config.limited = a.limited.or(config.limited);
            let changed = config != ds.config;
            let gen = SampleGenerator::new(config)?;
            let sample = if changed {
                gen.from_mask(stored.mask.clone(), stored.seed)?
            } else {
                stored.clone()
            };
            (gen, sample)
        }
        (None, None) => {
            if ncfg.grid.iter().any(|&n| n != ncfg.grid[0]) || ncfg.dims() != a.scenario.dim() {
                return Err(Error::Parameter("the model grid does not fit the scenario".into()));
            }
            let config = SampleConfig {
                scenario: a.scenario,
                grid: ncfg.grid[0],
                n_pairs: ncfg.n_pairs,
                mu0: a.mu0.unwrap_or(0.0),
                mu1: a.mu1.unwrap_or(50.0),
                limited: a.limited,
                ..SampleConfig::default()
            };
            let gen = SampleGenerator::new(config)?;
            let sample = gen.generate(a.seed)?;
            (gen, sample)
        }
        _ => return Err(Error::Parameter("--data and --index go together".into())),
    };
    let sample = if a.noise > 0.0 { gen.with_noise(&sample, a.noise, sample.seed)? } else { sample };
    let pred = net.reconstruct_sample(&sample)?;
    let m = evaluate(&pred, &sample.mask)?;
    export_both(&pred, &a.out, "pred")?;
    export_both(&sample.mask, &a.out, "truth")?;
    println!(
        "metrics: noise={} mse={:.6} dice={:.4} iou={:.4} argmax_inside={}",
        a.noise, m.mse, m.dice, m.iou, m.argmax_inside
    );
    Ok(())
}

pub fn dsm(a: DsmArgs) -> Result<()> {
    print_config(&a)?;
    if a.omega == 0 || a.omega > a.n_pairs {
        return Err(Error::Parameter(format!("--omega must lie in 1..={}", a.n_pairs)));
    }
    let gen = SampleGenerator::new(SampleConfig {
        scenario: a.scenario,
        grid: a.grid,
        n_pairs: a.n_pairs,
        mu0: a.mu0,
        mu1: a.mu1,
        s: a.s,
        ..SampleConfig::default()
    })?;
    let sample = gen.generate(a.seed)?;
    let sample = if a.noise > 0.0 { gen.with_noise(&sample, a.noise, a.seed)? } else { sample };
    let solver = DsmSolver::new(gen.grid(), a.mu0)?;
    let index = solver.index(&sample.pairs[a.omega - 1], a.s, NormExponents::default())?;
    export_both(&index, &a.out, "index")?;
    export_both(&sample.mask, &a.out, "truth")?;
    let inside = sample.mask.values()[index.argmax()] >= 0.5;
    println!("metrics: noise={} argmax_inside={inside}", a.noise);
    Ok(())
}

pub fn picard(a: PicardArgs) -> Result<()> {
    print_config(&a)?;
    let config = SampleConfig {
        scenario: a.scenario,
        grid: a.grid,
        ..SampleConfig::default()
    };
    let grid = config.make_grid()?;
    let incl = sample_inclusions_with(a.scenario, a.seed, SamplingOptions::default(), a.mu0, a.mu1)?;
    let spec = spectral_decomposition(&grid, &incl, a.n_pairs, a.oversample)?;
    let field = picard_index(&spec, a.k.unwrap_or(a.n_pairs))?;
    let mask = rasterize_mask(&incl, &grid);
    export_both(&field, &a.out, "picard")?;
    export_both(&mask, &a.out, "truth")?;
    let median = |inside: bool| {
        let mut v: Vec<f64> = grid
            .interior_nodes()
            .filter(|&i| (mask.values()[i] >= 0.5) == inside)
            .map(|i| field.values()[i])
            .collect();
        v.sort_by(f64::total_cmp);
        v.get(v.len() / 2).copied().unwrap_or(f64::NAN)
    };
    println!(
        "metrics: eigenvalue_max={:.4e} median_inside={:.4e} median_outside={:.4e}",
        spec.eigenvalues[0],
        median(true),
        median(false)
    );
    Ok(())
}
