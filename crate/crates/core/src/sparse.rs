//! Sparse spectral kernel representation, the offline request-grouping
//! scheduler that produces the hardware index/value tables, and the overhead
//! statistics behind the DSP utilization figure `1/lambda`.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::par;

/// One pruned `n x n` spectral map: flat indices in `[0, n^2)` sorted strictly
/// ascending, with the retained complex values in matching order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMap {
    pub indices: Vec<u32>,
    pub values: Vec<Complex64>,
}

impl SparseMap {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Reconstruct the dense `n x n` map.
    pub fn to_dense(&self, n: usize) -> Array2<Complex64> {
        let mut out = Array2::<Complex64>::zeros((n, n));
        for (&idx, &v) in self.indices.iter().zip(&self.values) {
            let idx = idx as usize;
            out[[idx / n, idx % n]] = v;
        }
        out
    }
}

/// Per-(output, input)-channel-pair sparse spectral kernels of one layer,
/// each map holding exactly `k = floor(n^2 / alpha)` non-zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSpectralKernelSet {
    pub c_out: usize,
    pub c_in: usize,
    pub n: usize,
    pub k: usize,
    /// row-major over (j, i)
    pub maps: Vec<SparseMap>,
}

impl SparseSpectralKernelSet {
    pub fn map(&self, j: usize, i: usize) -> &SparseMap {
        &self.maps[j * self.c_in + i]
    }

    /// Check the format invariants: map count, exact per-map non-zero count,
    /// strictly increasing in-range indices, no stored zeros.
    pub fn validate(&self) -> Result<()> {
        if self.maps.len() != self.c_out * self.c_in {
            return Err(Error::Format(format!(
                "expected {} maps, found {}",
                self.c_out * self.c_in,
                self.maps.len()
            )));
        }
        let n2 = (self.n * self.n) as u32;
        for (mi, map) in self.maps.iter().enumerate() {
            if map.nnz() != self.k || map.values.len() != self.k {
                return Err(Error::Format(format!(
                    "map {mi}: {} non-zeros, expected {}",
                    map.nnz(),
                    self.k
                )));
            }
            for w in map.indices.windows(2) {
                if w[1] <= w[0] {
                    return Err(Error::Format(format!("map {mi}: indices not strictly increasing")));
                }
            }
            if map.indices.last().is_some_and(|&i| i >= n2) {
                return Err(Error::Format(format!("map {mi}: index out of range")));
            }
            if map.values.iter().any(|v| v.norm() == 0.0) {
                return Err(Error::Format(format!("map {mi}: stored zero value")));
            }
        }
        Ok(())
    }
}

/// Per-map non-zero budget for pruning rate `alpha`.
pub fn nnz_per_map(n: usize, alpha: f64) -> usize {
    ((n * n) as f64 / alpha).floor() as usize
}

/// Keep the `k` entries of largest complex modulus of an `n x n` map, zeroing
/// the rest. Ties in modulus are broken toward the lower flat index, so the
/// result is deterministic and exactly `k` entries are kept.
pub fn project_topk(map: &ArrayView2<'_, Complex64>, k: usize) -> Result<SparseMap> {
    let (n, n2) = map.dim();
    if n != n2 {
        return Err(Error::Shape("project_topk needs a square map".into()));
    }
    let total = n * n;
    if k > total {
        return Err(Error::Shape(format!("k = {k} exceeds map size {total}")));
    }
    let mut order: Vec<u32> = (0..total as u32).collect();
    order.sort_by(|&a, &b| {
        let (au, bu) = (a as usize, b as usize);
        let ma = map[[au / n, au % n]].norm_sqr();
        let mb = map[[bu / n, bu % n]].norm_sqr();
        mb.partial_cmp(&ma).unwrap().then(a.cmp(&b))
    });
    let mut kept: Vec<u32> = order[..k].to_vec();
    kept.sort_unstable();
    let values = kept
        .iter()
        .map(|&idx| map[[idx as usize / n, idx as usize % n]])
        .collect();
    Ok(SparseMap { indices: kept, values })
}

/// One value-table row of a single multiplier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueEntry {
    pub value: Complex64,
    /// replica column id in `[0, R)`; meaningful only when `valid`
    pub sel: u8,
    pub valid: bool,
}

/// Hardware-facing tables for one (input channel, P_o output channels) group:
/// a `rows x R` index table of input-buffer addresses and a per-multiplier
/// value table of `(value, sel, valid)` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledTables {
    pub p_o: usize,
    pub r: usize,
    pub rows: usize,
    /// nonzeros per stream
    pub k: usize,
    /// row-major `rows x R`; short rows repeat the last address
    pub index_table: Vec<u32>,
    /// `p_o` tables, each of length `rows`
    pub value_tables: Vec<Vec<ValueEntry>>,
    /// unique-address count per lockstep step
    pub q_per_step: Vec<usize>,
}

impl ScheduledTables {
    /// Overhead coefficient: scheduled rows per non-zero.
    pub fn lambda(&self) -> f64 {
        self.rows as f64 / self.k as f64
    }

    pub fn address(&self, row: usize, col: usize) -> u32 {
        self.index_table[row * self.r + col]
    }
}

/// Build the lockstep schedule for one group of `P_o` equal-length sparse
/// streams served by `R` activation replicas. Step `s` collects the `s`-th
/// non-zero index of every stream; its `Q_s` unique addresses are packed into
/// `ceil(Q_s / R)` index-table rows, and each multiplier is valid exactly in
/// the row carrying its address.
pub fn build_group_schedule(maps: &[&SparseMap], r: usize) -> Result<ScheduledTables> {
    let p_o = maps.len();
    if p_o == 0 {
        return Err(Error::Format("empty group".into()));
    }
    if r == 0 || r > p_o {
        return Err(Error::Format(format!("R = {r} outside [1, P_o = {p_o}]")));
    }
    let k = maps[0].nnz();
    if maps.iter().any(|m| m.nnz() != k) {
        return Err(Error::Format("unequal non-zero counts across the group".into()));
    }

    let mut index_table = Vec::new();
    let mut value_tables = vec![Vec::new(); p_o];
    let mut q_per_step = Vec::with_capacity(k);

    for s in 0..k {
        let mut unique: Vec<u32> = maps.iter().map(|m| m.indices[s]).collect();
        unique.sort_unstable();
        unique.dedup();
        let q = unique.len();
        q_per_step.push(q);
        let rows_s = q.div_ceil(r);
        for row in 0..rows_s {
            let chunk = &unique[row * r..(row * r + r).min(q)];
            for col in 0..r {
                index_table.push(*chunk.get(col).unwrap_or(chunk.last().expect("non-empty chunk")));
            }
            for (m, map) in maps.iter().enumerate() {
                let addr = map.indices[s];
                match chunk.iter().position(|&a| a == addr) {
                    Some(col) => value_tables[m].push(ValueEntry {
                        value: map.values[s],
                        sel: col as u8,
                        valid: true,
                    }),
                    None => value_tables[m].push(ValueEntry {
                        value: Complex64::new(0.0, 0.0),
                        sel: 0,
                        valid: false,
                    }),
                }
            }
        }
    }

    let rows = index_table.len() / r;
    Ok(ScheduledTables { p_o, r, rows, k, index_table, value_tables, q_per_step })
}

/// Overhead statistics over all (input channel, output-channel group) pairs
/// of a kernel set.
#[derive(Debug, Clone)]
pub struct GroupScheduleStats {
    /// lambda per (i, group), groups in channel-block order
    pub lambdas: Vec<f64>,
    pub lambda_bar: f64,
    /// histogram of unique-address counts Q_s over all steps
    pub q_histogram: Vec<u64>,
}

impl GroupScheduleStats {
    pub fn utilization(&self) -> f64 {
        1.0 / self.lambda_bar
    }
}

/// Partition the output channels of `set` into contiguous blocks of `p_o`
/// (the final block padded by repeating the last map) and schedule each block
/// against every input channel. Padding maps only duplicate addresses already
/// present, so they never inflate `Q_s`.
pub fn lambda_stats(set: &SparseSpectralKernelSet, p_o: usize, r: usize) -> Result<GroupScheduleStats> {
    if set.maps.is_empty() || set.c_out == 0 {
        return Err(Error::Format("empty kernel set".into()));
    }
    let n_groups = set.c_out.div_ceil(p_o);
    let jobs: Vec<(usize, usize)> = (0..set.c_in)
        .flat_map(|i| (0..n_groups).map(move |g| (i, g)))
        .collect();
    let per_group = par::try_map_indexed(jobs.len(), |idx| {
        let (i, g) = jobs[idx];
        let maps: Vec<&SparseMap> = (0..p_o)
            .map(|slot| set.map((g * p_o + slot).min(set.c_out - 1), i))
            .collect();
        let sched = build_group_schedule(&maps, r)?;
        Ok::<_, Error>((sched.lambda(), sched.q_per_step))
    })?;

    let mut lambdas = Vec::with_capacity(per_group.len());
    let mut q_histogram = vec![0u64; p_o + 1];
    for (lambda, qs) in per_group {
        lambdas.push(lambda);
        for q in qs {
            q_histogram[q] += 1;
        }
    }
    let lambda_bar = lambdas.iter().sum::<f64>() / lambdas.len() as f64;
    Ok(GroupScheduleStats { lambdas, lambda_bar, q_histogram })
}

const KERNEL_MAGIC: &[u8; 4] = b"SPK1";
const TABLE_MAGIC: &[u8; 4] = b"SPT1";

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| Error::Format("truncated file".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(|_| Error::Format("truncated file".into()))?;
    Ok(f64::from_le_bytes(buf))
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut buf = [0u8; 1];
    r.read_exact(&mut buf).map_err(|_| Error::Format("truncated file".into()))?;
    Ok(buf[0])
}

/// Write a multi-layer kernel file: magic `SPK1`, layer count, then per layer
/// the dims and the `(index, re, im)` triples of every map in row-major order.
pub fn write_kernel_file(w: &mut impl Write, layers: &[SparseSpectralKernelSet]) -> Result<()> {
    w.write_all(KERNEL_MAGIC)?;
    write_u32(w, layers.len() as u32)?;
    for set in layers {
        write_u32(w, set.c_out as u32)?;
        write_u32(w, set.c_in as u32)?;
        write_u32(w, set.n as u32)?;
        write_u32(w, set.k as u32)?;
        for map in &set.maps {
            for (&idx, &val) in map.indices.iter().zip(&map.values) {
                write_u32(w, idx)?;
                write_f64(w, val.re)?;
                write_f64(w, val.im)?;
            }
        }
    }
    Ok(())
}

pub fn read_kernel_file(r: &mut impl Read) -> Result<Vec<SparseSpectralKernelSet>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("truncated file".into()))?;
    if &magic != KERNEL_MAGIC {
        return Err(Error::Format("bad magic, not an SPK1 kernel file".into()));
    }
    let n_layers = read_u32(r)?;
    let mut layers = Vec::with_capacity(n_layers as usize);
    for _ in 0..n_layers {
        let c_out = read_u32(r)? as usize;
        let c_in = read_u32(r)? as usize;
        let n = read_u32(r)? as usize;
        let k = read_u32(r)? as usize;
        let mut maps = Vec::with_capacity(c_out * c_in);
        for _ in 0..c_out * c_in {
            let mut indices = Vec::with_capacity(k);
            let mut values = Vec::with_capacity(k);
            for _ in 0..k {
                indices.push(read_u32(r)?);
                values.push(Complex64::new(read_f64(r)?, read_f64(r)?));
            }
            maps.push(SparseMap { indices, values });
        }
        let set = SparseSpectralKernelSet { c_out, c_in, n, k, maps };
        set.validate()?;
        layers.push(set);
    }
    Ok(layers)
}

/// Write one scheduled-table file: magic `SPT1`, `P_o`, `R`, row count, the
/// index table, then the per-multiplier value tables.
pub fn write_table_file(w: &mut impl Write, t: &ScheduledTables) -> Result<()> {
    w.write_all(TABLE_MAGIC)?;
    write_u32(w, t.p_o as u32)?;
    write_u32(w, t.r as u32)?;
    write_u32(w, t.rows as u32)?;
    for &addr in &t.index_table {
        write_u32(w, addr)?;
    }
    for table in &t.value_tables {
        for e in table {
            write_f64(w, e.value.re)?;
            write_f64(w, e.value.im)?;
            w.write_all(&[e.sel, e.valid as u8])?;
        }
    }
    Ok(())
}

pub fn read_table_file(r: &mut impl Read) -> Result<ScheduledTables> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("truncated file".into()))?;
    if &magic != TABLE_MAGIC {
        return Err(Error::Format("bad magic, not an SPT1 table file".into()));
    }
    let p_o = read_u32(r)? as usize;
    let rr = read_u32(r)? as usize;
    let rows = read_u32(r)? as usize;
    let mut index_table = Vec::with_capacity(rows * rr);
    for _ in 0..rows * rr {
        index_table.push(read_u32(r)?);
    }
    let mut value_tables = Vec::with_capacity(p_o);
    let mut k = 0usize;
    for m in 0..p_o {
        let mut table = Vec::with_capacity(rows);
        let mut valid_count = 0usize;
        for _ in 0..rows {
            let re = read_f64(r)?;
            let im = read_f64(r)?;
            let sel = read_u8(r)?;
            let valid = read_u8(r)? != 0;
            if valid {
                valid_count += 1;
                if (sel as usize) >= rr {
                    return Err(Error::Format("sel column out of range".into()));
                }
            }
            table.push(ValueEntry { value: Complex64::new(re, im), sel, valid });
        }
        if m == 0 {
            k = valid_count;
        } else if valid_count != k {
            return Err(Error::Format("unequal valid counts across multipliers".into()));
        }
        value_tables.push(table);
    }
    // q_per_step is derivable but not stored; leave empty on load
    Ok(ScheduledTables { p_o, r: rr, rows, k, index_table, value_tables, q_per_step: Vec::new() })
}
