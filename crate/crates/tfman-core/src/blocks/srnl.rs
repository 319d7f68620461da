use super::{nonlocal_block, MacCounter, NonLocalNodes};
use crate::error::{Error, Result};
use crate::ops::Rect;
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};

/// How a feature map is divided into same-size blocks for region-level
/// non-local attention, and in what order the results cover each other.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SrnlLayout {
    pub h: usize,
    pub w: usize,
    pub p: usize,
    /// Strip counts: `l = ceil(H/P) - 1`, `m = ceil(W/P) - 1`.
    pub l: usize,
    pub m: usize,
    /// Source rectangles in cover order; a later block overwrites earlier
    /// ones wherever they overlap.
    pub blocks: Vec<Rect>,
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// Divide an `H x W` map for SRNL.
///
/// Four overlapping large blocks — top-left `(lP, mP)`, bottom strip
/// `(P, mP)`, right strip `(lP, P)` and bottom-right `(P, P)` — are each
/// split into non-overlapping `P x P` small blocks. When `P` exceeds an
/// extent, the strips clamp to the full extent, so the division never
/// fails; with `H = W = P` it is exactly one block.
pub fn srnl_divide(h: usize, w: usize, p: usize) -> Result<SrnlLayout> {
    if h == 0 || w == 0 || p == 0 {
        return Err(Error::config("srnl_divide extents must be >= 1"));
    }
    let l = ceil_div(h, p) - 1;
    let m = ceil_div(w, p) - 1;
    let ph = p.min(h);
    let pw = p.min(w);
    let mut blocks = Vec::with_capacity((l + 1) * (m + 1));
    // Large block A: rows [0, lP) x cols [0, mP), split into l*m blocks.
    for i in 0..l {
        for j in 0..m {
            blocks.push(Rect {
                r0: i * p,
                r1: (i + 1) * p,
                c0: j * p,
                c1: (j + 1) * p,
            });
        }
    }
    // Large block B: bottom strip, m blocks.
    for j in 0..m {
        blocks.push(Rect {
            r0: h - ph,
            r1: h,
            c0: j * p,
            c1: (j + 1) * p,
        });
    }
    // Large block C: right strip, l blocks.
    for i in 0..l {
        blocks.push(Rect {
            r0: i * p,
            r1: (i + 1) * p,
            c0: w - pw,
            c1: w,
        });
    }
    // Large block D: bottom-right corner.
    blocks.push(Rect {
        r0: h - ph,
        r1: h,
        c0: w - pw,
        c1: w,
    });
    Ok(SrnlLayout {
        h,
        w,
        p,
        l,
        m,
        blocks,
    })
}

/// Region-level non-local: run non-local attention independently on each
/// small block of the division, then write the results back in cover order.
pub fn srnl_forward<T: Scalar>(
    tape: &mut Tape<T>,
    input: NodeId,
    p: usize,
    nodes: &NonLocalNodes,
    mut counter: Option<&mut MacCounter>,
) -> Result<NodeId> {
    let shape = tape.value(input).shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::config("srnl_forward expects a [C, h, w] input"));
    }
    let (h, w) = (shape[1], shape[2]);
    let layout = srnl_divide(h, w, p)?;
    let mut outputs = Vec::with_capacity(layout.blocks.len());
    for rect in &layout.blocks {
        let block = tape.crop3(input, *rect)?;
        let out = nonlocal_block(tape, block, nodes, counter.as_deref_mut())?;
        outputs.push(out);
    }
    tape.paste_seq(&outputs, &layout.blocks, h, w)
}
