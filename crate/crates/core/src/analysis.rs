//! Inspecting trained models: message tables, linear fits of messages
//! against true forces, and the body-count generalization sweep.

use std::io::{BufRead, Write};

use crate::gn::{self, GNParams};
use crate::sim::{generate_dataset, pairwise_force, EnvConfig, TrajectoryDataset};
use crate::{fmt17, train, Error, Result};

/// One edge of one snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageRow {
    pub record: usize,
    pub receiver: usize,
    pub sender: usize,
    /// `x_sender − x_receiver`.
    pub delta: Vec<f64>,
    pub r: f64,
    /// Receiver mass.
    pub m1: f64,
    /// Sender mass.
    pub m2: f64,
    pub message: Vec<f64>,
    /// True force per unit receiver mass.
    pub force: Vec<f64>,
}

/// Recorded messages with their pair features and true forces.
///
/// CSV columns: `record,receiver,sender,dx,dy[,dz],r,m1,m2,msg0..,f0..`.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageTable {
    pub dim: usize,
    pub message_dim: usize,
    pub rows: Vec<MessageRow>,
}

const AXES: [&str; 3] = ["dx", "dy", "dz"];

impl MessageTable {
    /// Names of the pair features usable as regression inputs.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names: Vec<String> = AXES[..self.dim].iter().map(|s| s.to_string()).collect();
        names.extend(["r", "m1", "m2"].map(String::from));
        names
    }

    /// Feature values of `row` in [`MessageTable::feature_names`] order.
    pub fn features(row: &MessageRow) -> Vec<f64> {
        let mut f = row.delta.clone();
        f.extend([row.r, row.m1, row.m2]);
        f
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["record", "receiver", "sender"].map(String::from).to_vec();
        h.extend(self.feature_names());
        h.extend((0..self.message_dim).map(|i| format!("msg{i}")));
        h.extend((0..self.dim).map(|i| format!("f{i}")));
        h
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.header().join(","))?;
        for row in &self.rows {
            let mut fields = vec![
                row.record.to_string(),
                row.receiver.to_string(),
                row.sender.to_string(),
            ];
            fields.extend(
                Self::features(row)
                    .iter()
                    .chain(&row.message)
                    .chain(&row.force)
                    .map(|&x| fmt17::format(x)),
            );
            writeln!(out, "{}", fields.join(","))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("message table is empty".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        let dim = cols.iter().filter(|c| AXES.contains(c)).count();
        let message_dim = cols.iter().filter(|c| c.starts_with("msg")).count();
        let mut table = MessageTable {
            dim,
            message_dim,
            rows: Vec::new(),
        };
        if !(dim == 2 || dim == 3) || message_dim == 0 || cols != table.header() {
            return Err(Error::Format(format!("unrecognized message table header: {header}")));
        }
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |what: String| Error::Format(format!("line {}: {what}", lineno + 2));
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != cols.len() {
                return Err(bad(format!("{} fields, expected {}", fields.len(), cols.len())));
            }
            let int = |i: usize| fields[i].parse::<usize>().map_err(|e| bad(format!("{}: {e}", cols[i])));
            let float = |i: usize| fields[i].parse::<f64>().map_err(|e| bad(format!("{}: {e}", cols[i])));
            let floats = |range: std::ops::Range<usize>| range.map(float).collect::<Result<Vec<f64>>>();
            let base = 3 + dim;
            let msg = base + 3;
            table.rows.push(MessageRow {
                record: int(0)?,
                receiver: int(1)?,
                sender: int(2)?,
                delta: floats(3..base)?,
                r: float(base)?,
                m1: float(base + 1)?,
                m2: float(base + 2)?,
                message: floats(msg..msg + message_dim)?,
                force: floats(msg + message_dim..msg + message_dim + dim)?,
            });
        }
        Ok(table)
    }
}

/// Messages of up to `max_rows` edges picked at a fixed stride across all
/// edges of all records (record order, then edge order).
pub fn record_messages(
    params: &GNParams,
    dataset: &TrajectoryDataset,
    max_rows: usize,
) -> Result<MessageTable> {
    let env = &dataset.env;
    if env.dim != params.config.dim {
        return Err(Error::Dimension(format!(
            "dataset is {}D but the model is {}D",
            env.dim, params.config.dim
        )));
    }
    let graphs: Vec<_> = dataset
        .records
        .iter()
        .map(|rec| gn::build_graph(&rec.state, env))
        .collect();
    let total: usize = graphs.iter().map(|(g, _)| g.edges.len()).sum();
    let take = max_rows.min(total);
    let mut wanted = (0..take).map(|i| i * total / take).peekable();

    let mut table = MessageTable {
        dim: env.dim,
        message_dim: params.config.message_dim,
        rows: Vec::with_capacity(take),
    };
    let mut offset = 0;
    for (idx, (rec, (graph, attrs))) in dataset.records.iter().zip(&graphs).enumerate() {
        let end = offset + graph.edges.len();
        if wanted.peek().is_some_and(|&w| w < end) {
            let out = gn::forward(params, graph, attrs)?;
            while let Some(&w) = wanted.peek().filter(|&&w| w < end) {
                wanted.next();
                let k = w - offset;
                let (r, s) = graph.edges[k];
                let (recv, send) = (rec.state.body(r), rec.state.body(s));
                let delta: Vec<f64> = send
                    .position
                    .iter()
                    .zip(recv.position)
                    .map(|(a, b)| a - b)
                    .collect();
                table.rows.push(MessageRow {
                    record: idx,
                    receiver: r,
                    sender: s,
                    r: delta.iter().map(|x| x * x).sum::<f64>().sqrt(),
                    delta,
                    m1: recv.mass,
                    m2: send.mass,
                    message: out.messages.row(k).to_vec(),
                    force: pairwise_force(env, recv, send)?,
                });
            }
        }
        offset = end;
    }
    Ok(table)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub r_squared: f64,
    pub residual_rms: f64,
}

impl OlsFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(x)
                .map(|(c, v)| c * v)
                .sum::<f64>()
    }

    pub fn mse(&self) -> f64 {
        self.residual_rms * self.residual_rms
    }
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    let scale = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty");
        if !(a[pivot][col].abs() > 1e-12 * scale) {
            return Err(Error::DegenerateFit(format!(
                "design matrix is rank deficient (column {col} has pivot {:e} against scale {scale:e})",
                a[pivot][col]
            )));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let rest: f64 = (col + 1..n).map(|k| a[col][k] * x[k]).sum();
        x[col] = (b[col] - rest) / a[col][col];
    }
    Ok(x)
}

/// Ordinary least squares of `y` on the columns of `x` (one row per
/// sample) through the normal equations. With an intercept, features and
/// targets are centered first.
pub fn least_squares(x: &[Vec<f64>], y: &[f64], intercept: bool) -> Result<OlsFit> {
    let n = y.len();
    let p = x.first().map_or(0, Vec::len);
    if x.len() != n || x.iter().any(|row| row.len() != p) {
        return Err(Error::Shape("least_squares: ragged design matrix".into()));
    }
    let min_rows = p + usize::from(intercept) + 1;
    if n < min_rows {
        return Err(Error::DegenerateFit(format!(
            "{n} rows for {p} regressors; need at least {min_rows}"
        )));
    }
    let mean = |f: &dyn Fn(usize) -> f64| (0..n).map(f).sum::<f64>() / n as f64;
    let x_mean: Vec<f64> = if intercept {
        (0..p).map(|j| mean(&|i| x[i][j])).collect()
    } else {
        vec![0.0; p]
    };
    let y_mean = mean(&|i| y[i]);
    let y_center = if intercept { y_mean } else { 0.0 };

    let mut gram = vec![vec![0.0; p]; p];
    let mut rhs = vec![0.0; p];
    for i in 0..n {
        let xc: Vec<f64> = (0..p).map(|j| x[i][j] - x_mean[j]).collect();
        let yc = y[i] - y_center;
        for a in 0..p {
            rhs[a] += xc[a] * yc;
            for b in 0..p {
                gram[a][b] += xc[a] * xc[b];
            }
        }
    }
    let coefficients = if p == 0 { Vec::new() } else { solve(gram, rhs)? };
    let icpt = if intercept {
        y_mean - coefficients.iter().zip(&x_mean).map(|(c, m)| c * m).sum::<f64>()
    } else {
        0.0
    };
    let fit = OlsFit {
        coefficients,
        intercept: icpt,
        r_squared: 0.0,
        residual_rms: 0.0,
    };
    let ss_res: f64 = (0..n).map(|i| (y[i] - fit.predict(&x[i])).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
    Ok(OlsFit {
        r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 },
        residual_rms: (ss_res / n as f64).sqrt(),
        ..fit
    })
}

/// Per message component: `msg_i ≈ Σ_j c_ij f_j + b_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearFitReport {
    pub components: Vec<OlsFit>,
}

impl LinearFitReport {
    pub fn min_r_squared(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.r_squared)
            .fold(f64::INFINITY, f64::min)
    }

    /// Header `component,c_f0,..,intercept,r_squared,residual_rms`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let dim = self.components.first().map_or(0, |c| c.coefficients.len());
        let mut header = vec!["component".to_string()];
        header.extend((0..dim).map(|j| format!("c_f{j}")));
        header.extend(["intercept", "r_squared", "residual_rms"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        for (i, c) in self.components.iter().enumerate() {
            let mut fields = vec![i.to_string()];
            fields.extend(c.coefficients.iter().map(|&v| fmt17::format(v)));
            fields.extend([c.intercept, c.r_squared, c.residual_rms].map(fmt17::format));
            writeln!(out, "{}", fields.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Fits every message component against the true force components plus an
/// intercept and reports R² for each.
pub fn linear_fit(table: &MessageTable) -> Result<LinearFitReport> {
    if table.rows.len() < table.dim + 2 {
        return Err(Error::DegenerateFit(format!(
            "{} rows; need at least {}",
            table.rows.len(),
            table.dim + 2
        )));
    }
    let x: Vec<Vec<f64>> = table.rows.iter().map(|r| r.force.clone()).collect();
    let components = (0..table.message_dim)
        .map(|i| {
            let y: Vec<f64> = table.rows.iter().map(|r| r.message[i]).collect();
            least_squares(&x, &y, true).map_err(|e| match e {
                Error::DegenerateFit(msg) => {
                    Error::DegenerateFit(format!("message component {i}: {msg}"))
                }
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LinearFitReport { components })
}

/// Loss of each model (rows) at each body count (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct SweepMatrix {
    pub body_counts: Vec<usize>,
    pub losses: Vec<Vec<f64>>,
}

impl SweepMatrix {
    /// Header `model,<n1>,<n2>,..`, one row per model label.
    pub fn write_csv<W: Write>(&self, labels: &[String], mut out: W) -> Result<()> {
        if labels.len() != self.losses.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} models",
                labels.len(),
                self.losses.len()
            )));
        }
        let mut header = vec!["model".to_string()];
        header.extend(self.body_counts.iter().map(|n| n.to_string()));
        writeln!(out, "{}", header.join(","))?;
        for (label, row) in labels.iter().zip(&self.losses) {
            let mut fields = vec![label.clone()];
            fields.extend(row.iter().map(|&v| fmt17::format(v)));
            writeln!(out, "{}", fields.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Evaluates every model on freshly simulated systems of each body count.
/// Each column's dataset is generated once from `seed` and shared by all
/// models.
pub fn generalization_sweep(
    models: &[GNParams],
    env: &EnvConfig,
    body_counts: &[usize],
    eval_sims: usize,
    n_steps: usize,
    seed: u64,
) -> Result<SweepMatrix> {
    if let Some(n) = body_counts.iter().find(|&&n| n < 2) {
        return Err(Error::Config(format!("body counts must be at least 2, got {n}")));
    }
    if let Some(m) = models.iter().find(|m| m.config.dim != env.dim) {
        return Err(Error::Dimension(format!(
            "environment is {}D but a model is {}D",
            env.dim, m.config.dim
        )));
    }
    let mut losses = vec![Vec::with_capacity(body_counts.len()); models.len()];
    for &n in body_counts {
        let data = generate_dataset(&env.with_bodies(n), eval_sims, n_steps, seed)?;
        for (row, model) in losses.iter_mut().zip(models) {
            row.push(train::evaluate(model, &data)?);
        }
    }
    Ok(SweepMatrix {
        body_counts: body_counts.to_vec(),
        losses,
    })
}
