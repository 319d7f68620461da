//! Closed-form MAC and memory-peak model comparing plain non-local
//! attention against its same-size-divided region-level variant, plus an
//! instrumented crosscheck against the running kernels.
//!
//! Counts follow the `C1 = C` convention of the analysis: three embedding
//! convolutions cost `3 W H C^2`, the two attention products `2 H^2 W^2 C`;
//! dividing into `ceil(H/P) * ceil(W/P)` blocks of extent P turns those
//! into `3 ceil(W/P) ceil(H/P) P^2 C^2 + 2 ceil(W/P) ceil(H/P) P^4 C`.

use crate::blocks::{nonlocal_block, srnl_forward, ConvNodes, MacCounter, NonLocalNodes};
use crate::error::Result;
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

const GIB: f64 = (1u64 << 30) as f64;

fn ceil_div(a: u128, b: u128) -> u128 {
    a.div_ceil(b)
}

/// MACs of one plain non-local pass over an `H x W x C` map (`C1 = C`).
pub fn mac_nonlocal(h: usize, w: usize, c: usize) -> u128 {
    let (h, w, c) = (h as u128, w as u128, c as u128);
    3 * w * h * c * c + 2 * h * h * w * w * c
}

/// MACs of one SRNL pass with division size `P`.
pub fn mac_srnl(h: usize, w: usize, c: usize, p: usize) -> u128 {
    let blocks = ceil_div(w as u128, p as u128) * ceil_div(h as u128, p as u128);
    let (p, c) = (p as u128, c as u128);
    blocks * (3 * p * p * c * c + 2 * p * p * p * p * c)
}

/// Attention-matrix memory peak of plain non-local: `(HW)^2` floats.
pub fn memory_peak_nonlocal_bytes(h: usize, w: usize) -> u128 {
    let hw = (h as u128) * (w as u128);
    hw * hw * 4
}

/// Attention-matrix memory peak of SRNL: one `P^2 x P^2` matrix per block.
pub fn memory_peak_srnl_bytes(h: usize, w: usize, p: usize) -> u128 {
    let blocks = ceil_div(w as u128, p as u128) * ceil_div(h as u128, p as u128);
    let p = p as u128;
    blocks * p * p * p * p * 4
}

pub fn bytes_to_gib(bytes: u128) -> f64 {
    bytes as f64 / GIB
}

/// Everything the `cost` command reports for one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub p: usize,
    pub mac_nl: u128,
    pub mac_srnl: u128,
    pub ratio: f64,
    pub mem_nl_bytes: u128,
    pub mem_srnl_bytes: u128,
}

impl CostReport {
    pub fn new(h: usize, w: usize, c: usize, p: usize) -> CostReport {
        let mac_nl = mac_nonlocal(h, w, c);
        let mac_s = mac_srnl(h, w, c, p);
        CostReport {
            h,
            w,
            c,
            p,
            mac_nl,
            mac_srnl: mac_s,
            ratio: mac_nl as f64 / mac_s as f64,
            mem_nl_bytes: memory_peak_nonlocal_bytes(h, w),
            mem_srnl_bytes: memory_peak_srnl_bytes(h, w, p),
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "h,w,c,p,mac_nonlocal,mac_srnl,ratio,mem_nonlocal_bytes,mem_srnl_bytes\n{},{},{},{},{},{},{:.4},{},{}\n",
            self.h,
            self.w,
            self.c,
            self.p,
            self.mac_nl,
            self.mac_srnl,
            self.ratio,
            self.mem_nl_bytes,
            self.mem_srnl_bytes
        )
    }

    pub fn to_table(&self) -> String {
        format!(
            "input {}x{} channels {} division {}\n\
             {:<26} {:>22}\n\
             {:<26} {:>22}\n\
             {:<26} {:>22.2}\n\
             {:<26} {:>19.3} GiB\n\
             {:<26} {:>19.3} GiB\n",
            self.w,
            self.h,
            self.c,
            self.p,
            "non-local MACs",
            self.mac_nl,
            "SRNL MACs",
            self.mac_srnl,
            "ratio (NL / SRNL)",
            self.ratio,
            "non-local memory peak",
            bytes_to_gib(self.mem_nl_bytes),
            "SRNL memory peak",
            bytes_to_gib(self.mem_srnl_bytes),
        )
    }
}

/// Instrumented counters from a real SRNL run, next to the closed-form
/// terms they must reproduce, with the unmodeled terms itemized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacCrosscheck {
    pub counted_embed: u64,
    pub formula_embed: u64,
    pub counted_attention: u64,
    pub formula_attention: u64,
    pub unmodeled_out_conv: u64,
    pub unmodeled_residual_adds: u64,
}

impl MacCrosscheck {
    pub fn modeled_terms_match(&self) -> bool {
        self.counted_embed == self.formula_embed
            && self.counted_attention == self.formula_attention
    }
}

/// Run SRNL (non-local when `p >= max(h, w)`) with instrumented kernels at
/// `C1 = C` and compare the counters against the closed forms.
pub fn measured_mac_crosscheck(h: usize, w: usize, c: usize, p: usize) -> Result<MacCrosscheck> {
    let mut rng = Rng::from_seed(0x5EED);
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(
        Tensor::generate(&[c, h, w], || rng.uniform_in(-1.0, 1.0) as f32),
        false,
    );
    let mut leaf = |shape: &[usize]| {
        let t = Tensor::generate(shape, || rng.uniform_in(-0.3, 0.3) as f32);
        tape.leaf(t, false)
    };
    let conv = |w: crate::tape::NodeId| ConvNodes {
        weight: w,
        bias: None,
    };
    let (tw, pw, gw, ow) = (
        leaf(&[c, c, 1, 1]),
        leaf(&[c, c, 1, 1]),
        leaf(&[c, c, 1, 1]),
        leaf(&[c, c, 1, 1]),
    );
    let nodes = NonLocalNodes {
        theta: conv(tw),
        phi: conv(pw),
        g: conv(gw),
        out: conv(ow),
        residual: true,
    };
    let mut counter = MacCounter::default();
    if p >= h.max(w) {
        nonlocal_block(&mut tape, x, &nodes, Some(&mut counter))?;
    } else {
        srnl_forward(&mut tape, x, p, &nodes, Some(&mut counter))?;
    }
    let blocks = (h.div_ceil(p) * w.div_ceil(p)) as u64;
    let pe = p.min(h.max(w)) as u64; // blocks are P x P for these shapes
    let (formula_embed, formula_attention) = if p >= h.max(w) {
        (
            3 * (h * w * c * c) as u64,
            2 * ((h * w) * (h * w) * c) as u64,
        )
    } else {
        (
            3 * blocks * pe * pe * (c * c) as u64,
            2 * blocks * pe * pe * pe * pe * c as u64,
        )
    };
    Ok(MacCrosscheck {
        counted_embed: counter.embed_macs,
        formula_embed,
        counted_attention: counter.attention_macs,
        formula_attention,
        unmodeled_out_conv: counter.out_conv_macs,
        unmodeled_residual_adds: counter.residual_adds,
    })
}
