//! Cycle-level replay of the sparse Hadamard pipeline: groups of `P_o`
//! multipliers share one input-channel activation map held in `R` replicas,
//! one index-table row is served per cycle, and each multiplier reads through
//! its `R`-to-1 MUX when its `valid` bit is set.
//!
//! The model is transaction-accurate at row granularity; BRAM latency and
//! pipeline fill/drain are zero. Output-channel groups execute sequentially
//! on the same multipliers, batch lanes run in parallel across `P_b`.

use ndarray::{Array4, ArrayView4};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::par;
use crate::sparse::{self, ScheduledTables, SparseSpectralKernelSet};
use crate::spectral::{self, ConvLayerSpec};

#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    /// batch parallelism
    pub p_b: usize,
    /// output-channel parallelism (group width)
    pub p_o: usize,
    /// activation replicas per bank
    pub r: usize,
    /// channel tile factor of the kernel buffer
    pub c: usize,
    /// FFT size
    pub n: usize,
    /// batch size
    pub b: usize,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || self.r > self.p_o {
            return Err(Error::Config(format!("R = {} outside [1, P_o = {}]", self.r, self.p_o)));
        }
        if self.p_b == 0 || self.b == 0 || self.n == 0 || self.c == 0 {
            return Err(Error::Config("all simulator dimensions must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SimReport {
    pub cycles: u64,
    pub useful_macs: u64,
    /// useful MACs / (P_b * P_o * cycles)
    pub utilization: f64,
    /// mean schedule overhead over the replayed (group, channel) pairs
    pub lambda_bar: f64,
}

/// Build the per-(group, input channel) schedules for a kernel set. The final
/// group is padded by repeating the last output channel's maps.
pub fn schedule_kernel_set(
    set: &SparseSpectralKernelSet,
    p_o: usize,
    r: usize,
) -> Result<Vec<Vec<ScheduledTables>>> {
    let n_groups = set.c_out.div_ceil(p_o);
    par::try_map_indexed(n_groups, |g| {
        (0..set.c_in)
            .map(|i| {
                let maps: Vec<_> = (0..p_o)
                    .map(|slot| set.map((g * p_o + slot).min(set.c_out - 1), i))
                    .collect();
                sparse::build_group_schedule(&maps, r)
            })
            .collect::<Result<Vec<_>>>()
    })
}

/// Replay the schedules against one spectral activation tile of shape
/// `(b, c_in, n, n)`. Returns the cycle/utilization report and the
/// accumulated spectral outputs `(b, c_out, n, n)`.
///
/// `tables[g][i]` is the schedule of output-channel group `g` against input
/// channel `i`; `c_out` is the real channel count (slots past it in a padded
/// final group are replayed for cycle accounting but not accumulated).
pub fn simulate_tile(
    tables: &[Vec<ScheduledTables>],
    c_out: usize,
    act_tile: &ArrayView4<'_, Complex64>,
    cfg: &SimConfig,
) -> Result<(SimReport, Array4<Complex64>)> {
    cfg.validate()?;
    let (b, c_in, n, n2) = act_tile.dim();
    if n != cfg.n || n2 != cfg.n {
        return Err(Error::Shape(format!("activation tile is {n}x{n2}, config n = {}", cfg.n)));
    }
    if b != cfg.b {
        return Err(Error::Shape("batch size disagrees with config".into()));
    }
    for group in tables {
        if group.len() != c_in {
            return Err(Error::Shape("schedule count disagrees with input channels".into()));
        }
        for t in group {
            if t.p_o != cfg.p_o || t.r != cfg.r {
                return Err(Error::Config("tables built with different (P_o, R)".into()));
            }
        }
    }

    let p_o = cfg.p_o;
    let n_groups = tables.len();
    let mut out = Array4::<Complex64>::zeros((b, c_out, n, n));
    let mut useful_macs = 0u64;
    let mut rows_total = 0u64;
    let mut lambda_sum = 0.0;
    let mut lambda_count = 0usize;

    for (g, group) in tables.iter().enumerate() {
        for (i, table) in group.iter().enumerate() {
            rows_total += table.rows as u64;
            lambda_sum += table.lambda();
            lambda_count += 1;
            for row in 0..table.rows {
                // one cycle: one index-table row broadcast to the group
                for m in 0..p_o {
                    let e = table.value_tables[m][row];
                    if !e.valid {
                        continue;
                    }
                    if (e.sel as usize) >= table.r {
                        return Err(Error::Format("sel exceeds replica count".into()));
                    }
                    let addr = table.address(row, e.sel as usize) as usize;
                    let j = g * p_o + m;
                    if j >= c_out {
                        continue; // padding slot of the final group
                    }
                    for k in 0..b {
                        let x = act_tile[[k, i, addr / n, addr % n]];
                        out[[k, j, addr / n, addr % n]] += x * e.value;
                    }
                    useful_macs += b as u64;
                }
            }
        }
    }
    let _ = n_groups;

    let batch_passes = b.div_ceil(cfg.p_b) as u64;
    let cycles = batch_passes * rows_total;
    let p = (cfg.p_b * cfg.p_o) as u64;
    let report = SimReport {
        cycles,
        useful_macs,
        utilization: useful_macs as f64 / (p * cycles) as f64,
        lambda_bar: lambda_sum / lambda_count as f64,
    };
    Ok((report, out))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepRow {
    pub p_o: usize,
    pub r: usize,
    pub utilization: f64,
    pub lambda_bar: f64,
}

/// Analytic utilization grid over `(P_o, R)` from the schedule statistics.
/// Agreement with the replayed simulator is checked by the acceptance suite.
pub fn utilization_sweep(
    set: &SparseSpectralKernelSet,
    p_o_list: &[usize],
    r_list: &[usize],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &p_o in p_o_list {
        for &r in r_list {
            if r > p_o {
                continue;
            }
            let stats = sparse::lambda_stats(set, p_o, r)?;
            rows.push(SweepRow { p_o, r, utilization: stats.utilization(), lambda_bar: stats.lambda_bar });
        }
    }
    Ok(rows)
}

/// Simulate a full convolutional layer: iterate the OaA tiles, replay each
/// through the sparse Hadamard pipeline, then IFFT, overlap-add, and
/// crop/stride into the layer output. Cycle counts aggregate over tiles.
pub fn simulate_layer(
    set: &SparseSpectralKernelSet,
    x: &ArrayView4<'_, f64>,
    layer: &ConvLayerSpec,
    cfg: &SimConfig,
) -> Result<(SimReport, Array4<f64>)> {
    cfg.validate()?;
    if set.c_in != layer.c_in || set.c_out != layer.c_out || set.n != layer.n {
        return Err(Error::Shape("kernel set disagrees with layer spec".into()));
    }
    let (b, _, h, _) = x.dim();
    if b != cfg.b {
        return Err(Error::Shape("batch size disagrees with config".into()));
    }
    let tiles = spectral::fft_tiles(x, layer)?;
    let t_count = tiles.t_count;
    let n = layer.n;
    let m = layer.tile_step();
    let h_full = h + layer.h_krn - 1;

    let schedules = schedule_kernel_set(set, cfg.p_o, cfg.r)?;

    let mut cycles = 0u64;
    let mut useful_macs = 0u64;
    let mut lambda_bar = 0.0;
    // per (k, j): the spatial output tiles awaiting overlap-add
    let mut out_tiles: Vec<Vec<ndarray::Array2<f64>>> =
        vec![Vec::with_capacity(t_count * t_count); b * set.c_out];

    for t in 0..t_count {
        for s in 0..t_count {
            let mut act = Array4::<Complex64>::zeros((b, set.c_in, n, n));
            for k in 0..b {
                for i in 0..set.c_in {
                    act.slice_mut(ndarray::s![k, i, .., ..]).assign(tiles.get(k, i, t, s));
                }
            }
            let (report, spec_out) = simulate_tile(&schedules, set.c_out, &act.view(), cfg)?;
            cycles += report.cycles;
            useful_macs += report.useful_macs;
            lambda_bar = report.lambda_bar; // identical across tiles
            let spatial = par::try_map_indexed(b * set.c_out, |kj| {
                let (k, j) = (kj / set.c_out, kj % set.c_out);
                let tile = spec_out.slice(ndarray::s![k, j, .., ..]).to_owned();
                Ok::<_, Error>(spectral::ifft2(&tile.view())?.mapv(|v| v.re))
            })?;
            for (kj, tile) in spatial.into_iter().enumerate() {
                out_tiles[kj].push(tile);
            }
        }
    }

    let h_out = layer.output_size(h);
    let mut y = Array4::<f64>::zeros((b, set.c_out, h_out, h_out));
    for k in 0..b {
        for j in 0..set.c_out {
            let full = spectral::overlap_add(&out_tiles[k * set.c_out + j], t_count, m, n, h_full);
            let cropped = spectral::crop_stride(&full.view(), layer, h);
            y.slice_mut(ndarray::s![k, j, .., ..]).assign(&cropped);
        }
    }

    let p = (cfg.p_b * cfg.p_o) as u64;
    let report = SimReport {
        cycles,
        useful_macs,
        utilization: useful_macs as f64 / (p * cycles) as f64,
        lambda_bar,
    };
    Ok((report, y))
}
