//! One gradient-check case per differentiable primitive. Input generators
//! keep points at least `KINK_MARGIN` away from relu kinks, max ties and
//! clip boundaries.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const KINK_MARGIN: f64 = 1e-3;

pub struct PrimitiveCase {
    pub name: &'static str,
    pub inputs: fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    pub forward: fn(&mut Tape, &[Var]) -> Var,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect())
}

fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let mag = rng.gen_range(KINK_MARGIN * 10.0..1.5);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(rows, cols, data)
}

/// Columns hold distinct values spaced at least 0.1 apart.
fn tie_free(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let mut t = Tensor::zeros(rows, cols);
    for c in 0..cols {
        let mut levels: Vec<usize> = (0..rows).collect();
        levels.shuffle(rng);
        for (r, l) in levels.into_iter().enumerate() {
            t.set(r, c, l as f64 * 0.1 + rng.gen_range(0.0..0.05) - 0.5);
        }
    }
    t
}

fn positive_ratios(rng: &mut ChaCha8Rng, rows: usize) -> Tensor {
    // Keep clear of 0.8 and 1.2, the clip edges for eps = 0.2.
    let data = (0..rows)
        .map(|_| loop {
            let r: f64 = rng.gen_range(0.5..1.5);
            if (r - 0.8).abs() > 10.0 * KINK_MARGIN && (r - 1.2).abs() > 10.0 * KINK_MARGIN {
                break r;
            }
        })
        .collect();
    Tensor::new(rows, 1, data)
}

const SEGMENTS: [&[usize]; 4] = [&[0, 2, 4], &[1], &[], &[3, 4, 0, 1]];
const GATHER: [usize; 5] = [2, 0, 2, 1, 3];
const PICK: [usize; 4] = [1, 0, 2, 2];
const ADVANTAGES: [f64; 6] = [1.0, -0.5, 2.0, -1.5, 0.3, -0.2];

pub fn primitive_suite() -> Vec<PrimitiveCase> {
    vec![
        PrimitiveCase {
            name: "matmul",
            inputs: |r| vec![uniform(r, 3, 4), uniform(r, 4, 2)],
            forward: |t, x| t.matmul(x[0], x[1]),
        },
        PrimitiveCase {
            name: "add",
            inputs: |r| vec![uniform(r, 3, 2), uniform(r, 3, 2)],
            forward: |t, x| t.add(x[0], x[1]),
        },
        PrimitiveCase {
            name: "sub",
            inputs: |r| vec![uniform(r, 3, 2), uniform(r, 3, 2)],
            forward: |t, x| t.sub(x[0], x[1]),
        },
        PrimitiveCase {
            name: "add_row",
            inputs: |r| vec![uniform(r, 3, 4), uniform(r, 1, 4)],
            forward: |t, x| t.add_row(x[0], x[1]),
        },
        PrimitiveCase {
            name: "mul",
            inputs: |r| vec![uniform(r, 3, 2), uniform(r, 3, 2)],
            forward: |t, x| t.mul(x[0], x[1]),
        },
        PrimitiveCase {
            name: "mul_row",
            inputs: |r| vec![uniform(r, 3, 4), uniform(r, 1, 4)],
            forward: |t, x| t.mul_row(x[0], x[1]),
        },
        PrimitiveCase {
            name: "scale",
            inputs: |r| vec![uniform(r, 2, 3)],
            forward: |t, x| t.scale(x[0], -1.7),
        },
        PrimitiveCase {
            name: "add_scalar",
            inputs: |r| vec![uniform(r, 2, 3)],
            forward: |t, x| t.add_scalar(x[0], 0.4),
        },
        PrimitiveCase {
            name: "transpose",
            inputs: |r| vec![uniform(r, 2, 3)],
            forward: |t, x| t.transpose(x[0]),
        },
        PrimitiveCase {
            name: "concat_cols",
            inputs: |r| vec![uniform(r, 3, 2), uniform(r, 3, 1), uniform(r, 3, 3)],
            forward: |t, x| t.concat_cols(x),
        },
        PrimitiveCase {
            name: "concat_rows",
            inputs: |r| vec![uniform(r, 2, 3), uniform(r, 1, 3)],
            forward: |t, x| t.concat_rows(x),
        },
        PrimitiveCase {
            name: "slice_cols",
            inputs: |r| vec![uniform(r, 3, 5)],
            forward: |t, x| t.slice_cols(x[0], 1, 3),
        },
        PrimitiveCase {
            name: "slice_rows",
            inputs: |r| vec![uniform(r, 5, 2)],
            forward: |t, x| t.slice_rows(x[0], 2, 2),
        },
        PrimitiveCase {
            name: "relu",
            inputs: |r| vec![away_from_zero(r, 3, 4)],
            forward: |t, x| t.relu(x[0]),
        },
        PrimitiveCase {
            name: "sigmoid",
            inputs: |r| vec![uniform(r, 3, 4)],
            forward: |t, x| t.sigmoid(x[0]),
        },
        PrimitiveCase {
            name: "exp",
            inputs: |r| vec![uniform(r, 3, 2)],
            forward: |t, x| t.exp(x[0]),
        },
        PrimitiveCase {
            name: "softmax",
            inputs: |r| vec![uniform(r, 3, 4)],
            forward: |t, x| t.softmax(x[0]),
        },
        PrimitiveCase {
            name: "log_softmax",
            inputs: |r| vec![uniform(r, 3, 4)],
            forward: |t, x| t.log_softmax(x[0]),
        },
        PrimitiveCase {
            name: "layer_norm",
            inputs: |r| vec![uniform(r, 3, 5), uniform(r, 1, 5), uniform(r, 1, 5)],
            forward: |t, x| t.layer_norm(x[0], x[1], x[2]),
        },
        PrimitiveCase {
            name: "segment_max",
            inputs: |r| vec![tie_free(r, 5, 3)],
            forward: |t, x| {
                let segments: Vec<Vec<usize>> = SEGMENTS.iter().map(|s| s.to_vec()).collect();
                t.segment_max(x[0], &segments)
            },
        },
        PrimitiveCase {
            name: "gather_rows",
            inputs: |r| vec![uniform(r, 4, 3)],
            forward: |t, x| t.gather_rows(x[0], &GATHER),
        },
        PrimitiveCase {
            name: "mean_rows",
            inputs: |r| vec![uniform(r, 4, 3)],
            forward: |t, x| t.mean_rows(x[0]),
        },
        PrimitiveCase {
            name: "row_sums",
            inputs: |r| vec![uniform(r, 4, 3)],
            forward: |t, x| t.row_sums(x[0]),
        },
        PrimitiveCase {
            name: "sum_all",
            inputs: |r| vec![uniform(r, 2, 3)],
            forward: |t, x| t.sum_all(x[0]),
        },
        PrimitiveCase {
            name: "mean_all",
            inputs: |r| vec![uniform(r, 2, 3)],
            forward: |t, x| t.mean_all(x[0]),
        },
        PrimitiveCase {
            name: "pick",
            inputs: |r| vec![uniform(r, 4, 3)],
            forward: |t, x| t.pick(x[0], &PICK),
        },
        PrimitiveCase {
            name: "clipped_surrogate",
            inputs: |r| vec![positive_ratios(r, 6)],
            forward: |t, x| t.clipped_surrogate(x[0], &ADVANTAGES, 0.2),
        },
        PrimitiveCase {
            name: "scaled_dot_attention",
            inputs: |r| vec![uniform(r, 3, 4), uniform(r, 5, 4), uniform(r, 5, 2)],
            forward: |t, x| {
                let mask = Tensor::new(3, 5, (0..15).map(|i| if i % 4 == 3 { -1e9 } else { 0.0 }).collect());
                t.scaled_dot_attention(x[0], x[1], x[2], Some(&mask)).0
            },
        },
    ]
}
