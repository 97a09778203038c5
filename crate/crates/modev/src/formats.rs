//! Plain-text and CSV file formats.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use modev_core::linalg::Mat;
use modev_core::mdp_limit::CellPath;
use modev_core::prm::{ControlField, Event, PointRealization};
use modev_core::rate::RateSolution;
use modev_core::{MarkMeasure, PathGrid};

/// Parses a measure file: one `mark_1 … mark_m weight` row per atom,
/// separated by whitespace or commas. Blank lines and `#` comments are skipped.
pub fn read_measure(reader: impl Read) -> Result<MarkMeasure> {
    let mut atoms: Vec<(Vec<f64>, f64)> = Vec::new();
    for (no, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let nums = body
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .with_context(|| format!("line {}: bad number {s:?}", no + 1))
            })
            .collect::<Result<Vec<f64>>>()?;
        ensure!(
            nums.len() >= 2,
            "line {}: need at least one mark component and a weight",
            no + 1
        );
        let (mark, w) = nums.split_at(nums.len() - 1);
        ensure!(w[0] >= 0.0, "line {}: weight {} is negative", no + 1, w[0]);
        atoms.push((mark.to_vec(), w[0]));
    }
    Ok(MarkMeasure::new(atoms)?)
}

pub fn write_measure(nu: &MarkMeasure, mut w: impl Write) -> Result<()> {
    for k in 0..nu.len() {
        let mut row: Vec<String> = nu.mark(k).iter().map(|v| format!("{v:?}")).collect();
        row.push(format!("{:?}", nu.weight(k)));
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

/// `time,atom_index` rows.
pub fn write_realization(real: &PointRealization, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["time", "atom_index"])?;
    for e in &real.events {
        out.write_record([format!("{:?}", e.time), e.atom.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_realization(r: impl Read, horizon: f64, base_rate: f64, n_atoms: usize) -> Result<PointRealization> {
    let mut rd = csv::Reader::from_reader(r);
    let mut events = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        ensure!(rec.len() == 2, "expected `time,atom_index` rows");
        events.push(Event {
            time: rec[0].trim().parse()?,
            atom: rec[1].trim().parse()?,
        });
    }
    Ok(PointRealization::new(events, horizon, base_rate, n_atoms)?)
}

/// Header `n_atoms,n_cells,T,a_eps`, one row with those values, then one row
/// of `n_cells` values of `ψ` per atom.
pub fn write_control(ctrl: &ControlField, w: impl Write) -> Result<()> {
    let mut out = csv::WriterBuilder::new().flexible(true).from_writer(w);
    out.write_record(["n_atoms", "n_cells", "T", "a_eps"])?;
    out.write_record([
        ctrl.n_atoms().to_string(),
        ctrl.n_cells().to_string(),
        format!("{:?}", ctrl.horizon()),
        format!("{:?}", ctrl.a_eps()),
    ])?;
    for k in 0..ctrl.n_atoms() {
        out.write_record((0..ctrl.n_cells()).map(|c| format!("{:?}", ctrl.psi(k, c))))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_control(r: impl Read) -> Result<ControlField> {
    let mut rd = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    let header = rd.headers()?.clone();
    ensure!(
        header.iter().map(str::trim).eq(["n_atoms", "n_cells", "T", "a_eps"]),
        "control header must be `n_atoms,n_cells,T,a_eps`"
    );
    let mut recs = rd.records();
    let dims = recs.next().context("missing dimension row")??;
    ensure!(dims.len() == 4, "dimension row needs four fields");
    let n_atoms: usize = dims[0].trim().parse()?;
    let n_cells: usize = dims[1].trim().parse()?;
    let horizon: f64 = dims[2].trim().parse()?;
    let a_eps: f64 = dims[3].trim().parse()?;
    let mut psi = Vec::with_capacity(n_atoms * n_cells);
    for rec in recs {
        let rec = rec?;
        ensure!(rec.len() == n_cells, "each atom row needs {n_cells} values");
        for v in rec.iter() {
            psi.push(v.trim().parse::<f64>()?);
        }
    }
    ensure!(psi.len() == n_atoms * n_cells, "expected {n_atoms} atom rows");
    Ok(ControlField::new(psi, n_atoms, n_cells, horizon, a_eps)?)
}

/// `t,x_1,…,x_d` rows.
pub fn write_path(path: &PathGrid, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((1..=path.dim()).map(|i| format!("x_{i}")));
    out.write_record(&header)?;
    for i in 0..=path.n_steps() {
        let mut row = vec![format!("{:?}", path.time(i))];
        row.extend(path.value(i).iter().map(|v| format!("{v:?}")));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_path(r: impl Read) -> Result<PathGrid> {
    let mut rd = csv::Reader::from_reader(r);
    let dim = rd.headers()?.len().checked_sub(1).context("empty header")?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        ensure!(rec.len() == dim + 1, "row width differs from header");
        times.push(rec[0].trim().parse::<f64>()?);
        for v in rec.iter().skip(1) {
            values.push(v.trim().parse::<f64>()?);
        }
    }
    ensure!(times.len() >= 2, "a path needs at least two nodes");
    let n_steps = times.len() - 1;
    let horizon = times[n_steps];
    let grid = PathGrid::new(horizon, n_steps, dim, values)?;
    for (i, t) in times.iter().enumerate() {
        if (grid.time(i) - t).abs() > 1e-9 * horizon.max(1.0) {
            bail!("row {i}: time {t} is off the uniform grid");
        }
    }
    Ok(grid)
}

/// Long-form matrix blocks: `cell,t_mid,name,row,col,value`.
pub fn write_matrix_blocks(blocks: &[(&str, &[Mat])], horizon: f64, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["cell", "t_mid", "name", "row", "col", "value"])?;
    for (name, mats) in blocks {
        let dt = horizon / mats.len().max(1) as f64;
        for (c, m) in mats.iter().enumerate() {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    out.write_record([
                        c.to_string(),
                        format!("{:?}", (c as f64 + 0.5) * dt),
                        name.to_string(),
                        i.to_string(),
                        j.to_string(),
                        format!("{:?}", m[(i, j)]),
                    ])?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// `cell,t_start,t_end,u_1,…,u_d` rows.
pub fn write_cell_path(u: &CellPath, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["cell".to_string(), "t_start".into(), "t_end".into()];
    header.extend((1..=u.dim()).map(|i| format!("u_{i}")));
    out.write_record(&header)?;
    let dt = u.dt();
    for k in 0..u.n_cells() {
        let mut row = vec![
            k.to_string(),
            format!("{:?}", k as f64 * dt),
            format!("{:?}", (k + 1) as f64 * dt),
        ];
        row.extend(u.cell(k).iter().map(|v| format!("{v:?}")));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `rate.csv` (value and residual), `u_opt.csv`, `psi_opt.csv` and
/// `eta.csv` into `dir`.
pub fn write_rate_solution(sol: &RateSolution, n_atoms: usize, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut out = csv::Writer::from_path(dir.join("rate.csv"))?;
    out.write_record(["rate", "finite", "residual"])?;
    out.write_record([
        format!("{:?}", sol.rate.as_f64()),
        sol.rate.is_finite().to_string(),
        format!("{:?}", sol.residual),
    ])?;
    out.flush()?;
    write_cell_path(&sol.u_opt, File::create(dir.join("u_opt.csv"))?)?;
    let n_cells = sol.u_opt.n_cells();
    let mut out = csv::Writer::from_path(dir.join("psi_opt.csv"))?;
    out.write_record(["cell", "atom", "psi"])?;
    for c in 0..n_cells {
        for a in 0..n_atoms {
            out.write_record([
                c.to_string(),
                a.to_string(),
                format!("{:?}", sol.psi_opt[a * n_cells + c]),
            ])?;
        }
    }
    out.flush()?;
    write_path(&sol.eta, File::create(dir.join("eta.csv"))?)
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub eps: f64,
    pub a_eps: f64,
    pub b_eps: f64,
    pub p_hat: f64,
    pub se: f64,
    /// `−b(ε) log p̂`; `None` when `p̂ = 0`.
    pub neg_b_log_p: Option<f64>,
    pub predicted_rate: f64,
    pub estimator: Estimator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    PlainMc,
    ImportanceSampling,
}

impl Estimator {
    pub fn label(self) -> &'static str {
        match self {
            Estimator::PlainMc => "plain_mc",
            Estimator::ImportanceSampling => "is",
        }
    }
}

impl EstimateRow {
    pub fn degenerate(&self) -> bool {
        self.neg_b_log_p.is_none()
    }
}

pub const SUMMARY_HEADER: [&str; 9] = [
    "eps",
    "a_eps",
    "b_eps",
    "p_hat",
    "se",
    "neg_b_log_p",
    "predicted_rate",
    "estimator",
    "flag",
];

pub fn write_summary(rows: &[EstimateRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_HEADER)?;
    for r in rows {
        out.write_record([
            format!("{:?}", r.eps),
            format!("{:?}", r.a_eps),
            format!("{:?}", r.b_eps),
            format!("{:?}", r.p_hat),
            format!("{:?}", r.se),
            r.neg_b_log_p.map(|v| format!("{v:?}")).unwrap_or_default(),
            format!("{:?}", r.predicted_rate),
            r.estimator.label().to_string(),
            if r.degenerate() {
                "degenerate".into()
            } else {
                String::new()
            },
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `rows` of displayable cells under `header` to `path`.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    out.write_record(header)?;
    for r in rows {
        out.write_record(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Shortest round-tripping decimal form of a float.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}
