use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use gnlaw_core::analysis::{self, MessageTable};
use gnlaw_core::gn::{read_checkpoint, write_checkpoint, Checkpoint};
use gnlaw_core::sim::{generate_dataset, read_dataset, write_dataset, TrajectoryDataset};
use gnlaw_core::symreg::{search, select_best, SymDataset};
use gnlaw_core::{fmt17, train as trainer};
use tempfile::NamedTempFile;

use crate::config::{RunConfig, GENERALIZE_SEED, SIMULATE_SEED};
use crate::Failure;

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::Runtime(format!("cannot open {}: {e}", path.display())))
}

fn in_file<T>(path: &Path, r: gnlaw_core::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn load_dataset(path: &Path) -> Result<TrajectoryDataset, Failure> {
    in_file(path, read_dataset(open(path)?))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    in_file(path, read_checkpoint(open(path)?))
}

/// Writes every file to a temporary sibling first and renames them into place
/// only once all of them were written, so a failure leaves no partial output.
fn write_outputs(dir: &Path, files: Vec<(&str, Vec<u8>)>) -> Result<Vec<PathBuf>, Failure> {
    let fail = |what: &str, e: std::io::Error| Failure::Runtime(format!("{what} {}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(|e| fail("cannot create output directory", e))?;
    let mut staged = Vec::new();
    for (name, bytes) in files {
        let mut tmp = NamedTempFile::new_in(dir).map_err(|e| fail("cannot write into", e))?;
        tmp.write_all(&bytes).map_err(|e| fail("cannot write into", e))?;
        staged.push((tmp, dir.join(name)));
    }
    let mut written = Vec::new();
    for (tmp, dest) in staged {
        tmp.persist(&dest)
            .map_err(|e| Failure::Runtime(format!("cannot write {}: {}", dest.display(), e.error)))?;
        written.push(dest);
    }
    Ok(written)
}

fn bytes(f: impl FnOnce(&mut Vec<u8>) -> gnlaw_core::Result<()>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub fn simulate(cfg: &RunConfig) -> Result<(), Failure> {
    let env = cfg.experiment()?.env(cfg.simulate.bodies);
    let sims = cfg.simulate.sims;
    let data = generate_dataset(&env, sims, cfg.simulate.steps, cfg.seed.wrapping_add(SIMULATE_SEED))?;
    let out = write_outputs(
        &cfg.out_dir(),
        vec![("dataset.jsonl", bytes(|b| write_dataset(&data, b))?)],
    )?;
    println!("wrote {}", out[0].display());
    println!("records: {} from {sims} simulations", data.records.len());
    println!("baseline mean |dv|: {}", fmt17::format(data.mean_abs_dv()?));
    Ok(())
}

pub fn train(cfg: &RunConfig, dataset: &Path, init: Option<&Path>) -> Result<(), Failure> {
    let data = load_dataset(dataset)?;
    let config = cfg.train_config();
    config.validate()?;
    let (outcome, prior_steps) = match init {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            (trainer::train_from(&data, ckpt.params, &config)?, ckpt.steps)
        }
        None => {
            let model = cfg.model.model(data.env.dim);
            model.validate()?;
            (trainer::train(&data, &model, &config)?, 0)
        }
    };
    let ckpt = Checkpoint {
        params: outcome.params,
        seed: config.seed,
        steps: prior_steps + config.steps,
    };
    let out = write_outputs(
        &cfg.out_dir(),
        vec![
            ("checkpoint.json", bytes(|b| write_checkpoint(&ckpt, b))?),
            ("loss.csv", bytes(|b| trainer::write_loss_csv(&outcome.curve, b))?),
        ],
    )?;
    for path in &out {
        println!("wrote {}", path.display());
    }
    if let (Some(first), Some(last)) = (outcome.curve.first(), outcome.curve.last()) {
        let eval = |p: Option<f64>| p.map_or("n/a".to_string(), fmt17::format);
        println!(
            "train loss {} -> {}; held-out loss {} -> {}",
            fmt17::format(first.train_loss),
            fmt17::format(last.train_loss),
            eval(first.eval_loss),
            eval(last.eval_loss)
        );
    }
    Ok(())
}

pub fn analyze(cfg: &RunConfig, checkpoint: &Path, dataset: &Path) -> Result<(), Failure> {
    let ckpt = load_checkpoint(checkpoint)?;
    let data = load_dataset(dataset)?;
    let table = analysis::record_messages(&ckpt.params, &data, cfg.analyze.max_rows)?;
    let report = analysis::linear_fit(&table)?;
    let out = write_outputs(
        &cfg.out_dir(),
        vec![
            ("messages.csv", bytes(|b| table.write_csv(b))?),
            ("linear_fit.csv", bytes(|b| report.write_csv(b))?),
        ],
    )?;
    for path in &out {
        println!("wrote {}", path.display());
    }
    println!("{} edges recorded", table.rows.len());
    for (i, c) in report.components.iter().enumerate() {
        println!("msg{i} R^2 = {}", fmt17::format(c.r_squared));
    }
    Ok(())
}

pub fn symreg(cfg: &RunConfig, messages: &Path, component: usize) -> Result<(), Failure> {
    let table = in_file(messages, MessageTable::read_csv(open(messages)?))?;
    if component >= table.message_dim {
        return Err(Failure::Usage(format!(
            "component {component} out of range: {} has {} message components",
            messages.display(),
            table.message_dim
        )));
    }
    let total = table.rows.len();
    let take = cfg.symreg.max_rows.min(total);
    let picked: Vec<_> = (0..take).map(|i| &table.rows[i * total / take]).collect();
    let rows: Vec<Vec<f64>> = picked.iter().map(|r| MessageTable::features(r)).collect();
    let target = picked.iter().map(|r| r.message[component]).collect();
    let names = table.feature_names();
    let data = SymDataset::from_rows(names.clone(), &rows, target)?;
    let front = search(&data, &cfg.gp_config())?;
    let best = select_best(&front)
        .ok_or_else(|| Failure::Runtime("search produced no finite-error expression".into()))?;
    let selected = format!("{}\n", best.expr.display(&names));
    let front_name = format!("front_msg{component}.csv");
    let selected_name = format!("selected_msg{component}.txt");
    let out = write_outputs(
        &cfg.out_dir(),
        vec![
            (front_name.as_str(), bytes(|b| front.write_csv(&names, b))?),
            (selected_name.as_str(), selected.clone().into_bytes()),
        ],
    )?;
    for path in &out {
        println!("wrote {}", path.display());
    }
    println!("complexity  mse");
    for e in front.entries() {
        println!("{:>10}  {}  {}", e.complexity, fmt17::format(e.mse), e.expr.display(&names));
    }
    println!(
        "selected (complexity {}, mse {}): {}",
        best.complexity,
        fmt17::format(best.mse),
        selected.trim_end()
    );
    Ok(())
}

pub fn generalize(cfg: &RunConfig, checkpoints: &[PathBuf]) -> Result<(), Failure> {
    let env = cfg.experiment()?.env(None);
    let models = checkpoints
        .iter()
        .map(|p| load_checkpoint(p).map(|c| c.params))
        .collect::<Result<Vec<_>, _>>()?;
    let g = &cfg.generalize;
    let sweep = analysis::generalization_sweep(
        &models,
        &env,
        &g.body_counts,
        g.sims,
        g.steps,
        cfg.seed.wrapping_add(GENERALIZE_SEED),
    )?;
    let labels: Vec<String> = checkpoints.iter().map(|p| p.display().to_string()).collect();
    let csv = bytes(|b| sweep.write_csv(&labels, b))?;
    let out = write_outputs(&cfg.out_dir(), vec![("sweep.csv", csv.clone())])?;
    println!("wrote {}", out[0].display());
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}
