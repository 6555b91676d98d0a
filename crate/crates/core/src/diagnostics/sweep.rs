use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::metrics::{format_value, MetricsTable};
use super::DiagError;
use crate::trainer::{train_run, TrainConfig, METRICS_FILE};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const ERROR_FILE: &str = "error.txt";

/// Cartesian grid of trade-off factors, model update counts and seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    /// A single cell holding the base config's own values.
    pub fn from_base(base: &TrainConfig) -> Self {
        Self {
            alphas: vec![base.agent.alpha],
            betas: vec![base.agent.beta],
            ks: vec![base.model.update_per_collect],
            seeds: base.schedule.seeds.clone(),
        }
    }

    pub fn cells(&self) -> Vec<SweepCell> {
        let mut out = Vec::new();
        for &alpha in &self.alphas {
            for &beta in &self.betas {
                for &k in &self.ks {
                    out.push(SweepCell { alpha, beta, k });
                }
            }
        }
        out
    }

    fn check(&self) -> Result<(), DiagError> {
        if self.alphas.is_empty() || self.betas.is_empty() || self.ks.is_empty() || self.seeds.is_empty() {
            return Err(DiagError::EmptyInput("sweep grid"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub alpha: f64,
    pub beta: f64,
    pub k: usize,
}

impl SweepCell {
    pub fn dir_name(&self) -> String {
        format!("alpha{}_beta{}_k{}", self.alpha, self.beta, self.k)
    }

    pub fn run_dir(&self, root: &Path, seed: u64) -> PathBuf {
        root.join(self.dir_name()).join(format!("seed{seed}"))
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.agent.alpha = self.alpha;
        cfg.agent.beta = self.beta;
        cfg.model.update_per_collect = self.k;
        cfg
    }
}

/// Final and best evaluation return of one cell, averaged over the seeds
/// whose runs completed.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub cell: SweepCell,
    pub completed: usize,
    pub failed: usize,
    pub final_return: f64,
    pub best_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub cells: Vec<CellSummary>,
}

impl SweepSummary {
    /// Cell with the highest mean final return.
    pub fn best_cell(&self) -> Option<&CellSummary> {
        self.cells
            .iter()
            .filter(|c| c.final_return.is_finite())
            .fold(None, |best: Option<&CellSummary>, c| match best {
                Some(b) if b.final_return >= c.final_return => Some(b),
                _ => Some(c),
            })
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DiagError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "alpha,beta,k,completed,failed,final_return,best_return")?;
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.cell.alpha,
                c.cell.beta,
                c.cell.k,
                c.completed,
                c.failed,
                format_value(c.final_return),
                format_value(c.best_return)
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Rebuilds the summary from the metrics files under `root`. A seed counts
/// as failed when its directory holds an error file or no metrics rows.
pub fn summarize(root: &Path, grid: &SweepGrid) -> Result<SweepSummary, DiagError> {
    let mut cells = Vec::new();
    for cell in grid.cells() {
        let (mut finals, mut bests, mut failed) = (Vec::new(), Vec::new(), 0);
        for &seed in &grid.seeds {
            let dir = cell.run_dir(root, seed);
            let metrics = dir.join(METRICS_FILE);
            if dir.join(ERROR_FILE).exists() || !metrics.exists() {
                failed += 1;
                continue;
            }
            let returns: Vec<f64> = MetricsTable::read(&metrics)?
                .column("eval_return_mean")?
                .into_iter()
                .filter(|r| r.is_finite())
                .collect();
            match returns.last() {
                Some(&last) => {
                    finals.push(last);
                    bests.push(returns.iter().copied().fold(f64::NEG_INFINITY, f64::max));
                }
                None => failed += 1,
            }
        }
        cells.push(CellSummary {
            cell,
            completed: finals.len(),
            failed,
            final_return: mean(&finals),
            best_return: mean(&bests),
        });
    }
    Ok(SweepSummary { cells })
}

/// Trains every cell and seed of `grid` under `root` using up to `workers`
/// threads. A failing run leaves its message in the run directory and the
/// sweep carries on.
pub fn sweep(base: &TrainConfig, grid: &SweepGrid, root: &Path, workers: usize) -> Result<SweepSummary, DiagError> {
    grid.check()?;
    std::fs::create_dir_all(root)?;
    let jobs: Vec<(SweepCell, u64)> = grid
        .cells()
        .into_iter()
        .flat_map(|c| grid.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let next = AtomicUsize::new(0);
    let io_error: Mutex<Option<std::io::Error>> = Mutex::new(None);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(cell, seed)) = jobs.get(i) else { break };
        let dir = cell.run_dir(root, seed);
        let _ = std::fs::remove_file(dir.join(ERROR_FILE));
        if let Err(e) = train_run(&cell.apply(base), seed, &dir, None) {
            let written = std::fs::create_dir_all(&dir).and_then(|_| std::fs::write(dir.join(ERROR_FILE), e.to_string()));
            if let Err(io) = written {
                io_error.lock().expect("lock").get_or_insert(io);
            }
        }
    };
    let workers = workers.clamp(1, jobs.len().max(1));
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(work);
            }
        });
    }
    if let Some(e) = io_error.into_inner().expect("lock") {
        return Err(e.into());
    }
    let summary = summarize(root, grid)?;
    summary.write_csv(&root.join(SUMMARY_FILE))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_are_the_cartesian_product() {
        let g = SweepGrid {
            alphas: vec![0.5, 0.8],
            betas: vec![0.2, 0.5, 1.0],
            ks: vec![1, 20],
            seeds: vec![0],
        };
        let cells = g.cells();
        assert_eq!(cells.len(), 12);
        assert_eq!(cells[0], SweepCell { alpha: 0.5, beta: 0.2, k: 1 });
        assert_eq!(cells[11], SweepCell { alpha: 0.8, beta: 1.0, k: 20 });
    }

    #[test]
    fn empty_grid_is_rejected() {
        let base = TrainConfig::preset("cartpole").unwrap();
        let mut g = SweepGrid::from_base(&base);
        g.ks.clear();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(sweep(&base, &g, dir.path(), 1), Err(DiagError::EmptyInput(_))));
    }

    #[test]
    fn apply_sets_only_grid_fields() {
        let base = TrainConfig::preset("acrobot").unwrap();
        let cfg = SweepCell { alpha: 0.3, beta: 0.1, k: 5 }.apply(&base);
        assert_eq!((cfg.agent.alpha, cfg.agent.beta, cfg.model.update_per_collect), (0.3, 0.1, 5));
        assert_eq!(cfg.q, base.q);
    }

    #[test]
    fn best_cell_picks_highest_final() {
        let c = |alpha, final_return| CellSummary {
            cell: SweepCell { alpha, beta: 0.5, k: 1 },
            completed: 1,
            failed: 0,
            final_return,
            best_return: final_return,
        };
        let s = SweepSummary {
            cells: vec![c(0.2, 10.0), c(0.8, f64::NAN), c(0.5, 30.0)],
        };
        assert_eq!(s.best_cell().unwrap().cell.alpha, 0.5);
    }
}
