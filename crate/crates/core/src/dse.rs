//! Analytic throughput model and constrained design-space exploration, plus
//! the per-model workload calculator that converts throughput into frames per
//! second.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral;

/// Bytes per complex word in the modeled datapath (16-bit fixed-point
/// real/imag pair).
pub const COMPLEX_WORD_BYTES: f64 = 4.0;

/// Available resources of the target platform.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PlatformSpec {
    /// complex multiplier-adders
    pub s_dsp: u64,
    /// 36x1K BRAM blocks
    pub s_bram: f64,
    /// external bandwidth, complex words per cycle
    pub s_bw: f64,
    /// clock frequency, Hz
    pub f_hz: f64,
}

impl PlatformSpec {
    /// Virtex-7 XC7VX690T class device at 200 MHz with 21 GB/s peak external
    /// bandwidth.
    pub fn virtex7_690t() -> Self {
        Self {
            s_dsp: 3600,
            s_bram: 1470.0,
            s_bw: 21.0e9 / COMPLEX_WORD_BYTES / 200.0e6,
            f_hz: 200.0e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.s_dsp == 0 || self.s_bram <= 0.0 || self.s_bw <= 0.0 || self.f_hz <= 0.0 {
            return Err(Error::Config("platform resources must be positive".into()));
        }
        Ok(())
    }

    pub fn peak_bandwidth_bytes(&self) -> f64 {
        self.s_bw * COMPLEX_WORD_BYTES * self.f_hz
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConvLayerDims {
    pub c_in: usize,
    pub c_out: usize,
    pub h_act: usize,
    pub h_krn: usize,
}

/// Workload of one CNN model under a fixed FFT size and pruning rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub layers: Vec<ConvLayerDims>,
    pub n: usize,
    pub alpha: f64,
}

impl WorkloadSpec {
    /// The 13 convolutional layers of VGG16 on 224x224 inputs.
    pub fn vgg16(n: usize, alpha: f64) -> Self {
        let dims = [
            (3, 64, 224),
            (64, 64, 224),
            (64, 128, 112),
            (128, 128, 112),
            (128, 256, 56),
            (256, 256, 56),
            (256, 256, 56),
            (256, 512, 28),
            (512, 512, 28),
            (512, 512, 28),
            (512, 512, 14),
            (512, 512, 14),
            (512, 512, 14),
        ];
        let layers = dims
            .iter()
            .map(|&(c_in, c_out, h_act)| ConvLayerDims { c_in, c_out, h_act, h_krn: 3 })
            .collect();
        Self { layers, n, alpha }
    }

    pub fn nnz_per_map(&self) -> usize {
        crate::sparse::nnz_per_map(self.n, self.alpha)
    }

    /// Non-zero Hadamard MACs per image: sum over layers of
    /// `tiles^2 * c_in * c_out * k`.
    pub fn nonzero_macs_per_image(&self) -> u64 {
        let k = self.nnz_per_map() as u64;
        self.layers
            .iter()
            .map(|l| {
                let m = self.n - l.h_krn + 1;
                let tiles = l.h_act.div_ceil(m) as u64;
                tiles * tiles * (l.c_in * l.c_out) as u64 * k
            })
            .sum()
    }

    /// Dense spectral complex-MAC count per image (unpruned Hadamard work).
    pub fn spectral_cmacs_per_image(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| spectral::spectral_cmac_count(l.c_in, l.c_out, l.h_act, l.h_krn, self.n))
            .sum()
    }

    /// Direct spatial MAC count per image at stride 1, "same" padding.
    pub fn spatial_macs_per_image(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| {
                spectral::spatial_mac_count(l.c_in, l.c_out, l.h_act, l.h_krn, 1, (l.h_krn - 1) / 2)
            })
            .sum()
    }
}

/// One candidate configuration with its modeled performance and resource use.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DesignPoint {
    pub r: usize,
    pub p_b: usize,
    pub p_o: usize,
    pub lambda_bar: f64,
    /// multiplications + additions per second
    pub t_sys: f64,
    pub fps: f64,
    /// required bandwidth, complex words per cycle
    pub s_bw_req: f64,
    pub dsp_used: u64,
    pub bram_used: f64,
    pub feasible: bool,
}

/// Required external bandwidth in complex words per cycle: the FFT module
/// must stream `2 * P_b * n^2` words per Hadamard interval of
/// `Omega_H = c * lambda * k` cycles (with the channel tile factor `c = P_o`,
/// stall cycles included).
pub fn required_bandwidth(p_b: usize, p_o: usize, lambda_bar: f64, n: usize, k: usize) -> f64 {
    let omega_h = p_o as f64 * lambda_bar * k as f64;
    2.0 * p_b as f64 * (n * n) as f64 / omega_h
}

/// Overall throughput in multiplication/additions per second:
/// `(1/lambda) * P_o * P_b * 2 * min{1, (1/2) * S_BW / S_BW_req} * F`.
pub fn t_sys(
    p_b: usize,
    p_o: usize,
    lambda_bar: f64,
    s_bw_req: f64,
    plat: &PlatformSpec,
) -> Result<f64> {
    if lambda_bar < 1.0 {
        return Err(Error::Config(format!("lambda_bar = {lambda_bar} < 1")));
    }
    let compute = (1.0 / lambda_bar) * (p_o * p_b * 2) as f64;
    let bw_term = (0.5 * plat.s_bw / s_bw_req).min(1.0);
    Ok(compute * bw_term * plat.f_hz)
}

/// Frames per second: `T_sys / (2 * non-zero MACs per image)`.
pub fn fps(t_sys: f64, wl: &WorkloadSpec) -> Result<f64> {
    let macs = wl.nonzero_macs_per_image();
    if macs == 0 {
        return Err(Error::Config("zero workload".into()));
    }
    Ok(t_sys / (2.0 * macs as f64))
}

/// Measured (or supplied) utilization table mapping `(P_o, R)` to
/// `lambda_bar`. Exploration enumerates exactly the pairs present here.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LambdaTable {
    pub entries: Vec<(usize, usize, f64)>,
}

impl LambdaTable {
    pub fn from_utilization(entries: &[(usize, usize, f64)]) -> Self {
        Self { entries: entries.iter().map(|&(p, r, u)| (p, r, 1.0 / u)).collect() }
    }
}

fn evaluate(
    p_b: usize,
    p_o: usize,
    r: usize,
    lambda_bar: f64,
    plat: &PlatformSpec,
    wl: &WorkloadSpec,
) -> Result<DesignPoint> {
    let s_bw_req = required_bandwidth(p_b, p_o, lambda_bar, wl.n, wl.nnz_per_map());
    let t = t_sys(p_b, p_o, lambda_bar, s_bw_req, plat)?;
    let dsp_used = (p_b * p_o) as u64;
    let bram_used = (p_b * (r + p_o)) as f64 + 1.5 * p_o as f64;
    let feasible = dsp_used <= plat.s_dsp && bram_used <= plat.s_bram;
    Ok(DesignPoint {
        r,
        p_b,
        p_o,
        lambda_bar,
        t_sys: t,
        fps: fps(t, wl)?,
        s_bw_req,
        dsp_used,
        bram_used,
        feasible,
    })
}

/// Enumerate every `(P_b, P_o, R)` candidate, return the feasible point of
/// maximum throughput (ties broken by smaller BRAM usage, then smaller R) and
/// the full frontier table.
pub fn explore(
    plat: &PlatformSpec,
    wl: &WorkloadSpec,
    table: &LambdaTable,
    p_b_options: &[usize],
) -> Result<(DesignPoint, Vec<DesignPoint>)> {
    plat.validate()?;
    if table.entries.is_empty() || p_b_options.is_empty() {
        return Err(Error::Config("empty candidate set".into()));
    }
    let mut frontier = Vec::new();
    for &p_b in p_b_options {
        for &(p_o, r, lambda_bar) in &table.entries {
            frontier.push(evaluate(p_b, p_o, r, lambda_bar, plat, wl)?);
        }
    }
    let best = frontier
        .iter()
        .filter(|d| d.feasible)
        .copied()
        .max_by(|a, b| {
            a.t_sys
                .partial_cmp(&b.t_sys)
                .unwrap()
                .then(b.bram_used.partial_cmp(&a.bram_used).unwrap())
                .then(b.r.cmp(&a.r))
        })
        .ok_or(Error::Infeasible)?;
    Ok((best, frontier))
}
