//! Input-gradient saliency maps and their rendering.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::ndnum::{NumError, Real, Tape, Tensor};
use crate::nn::{Mode, Network, NnError};

#[derive(Debug, Error)]
pub enum SaliencyError {
    #[error("target class {class} out of range for {n_classes} classes")]
    ClassOutOfRange { class: usize, n_classes: usize },
    #[error("non-finite input features")]
    NonFinite,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io(path: &Path, source: std::io::Error) -> SaliencyError {
    SaliencyError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaliencyTarget {
    Class(usize),
    /// The argmax of the posterior.
    Predicted,
}

impl std::str::FromStr for SaliencyTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "predicted" {
            return Ok(SaliencyTarget::Predicted);
        }
        s.parse()
            .map(SaliencyTarget::Class)
            .map_err(|_| format!("saliency target `{s}` is neither a class index nor `predicted`"))
    }
}

/// Gradient of the target class's pre-softmax logit with respect to every
/// input cell, in inference mode. Returns the gradient and the resolved class.
pub fn input_gradients<T: Real, N: Network<T, Input = Tensor<T>>>(
    net: &N,
    features: &Tensor<T>,
    target: SaliencyTarget,
) -> Result<(Tensor<T>, usize), SaliencyError> {
    if !features.all_finite() {
        return Err(SaliencyError::NonFinite);
    }
    let k = net.n_classes();
    let mut tape = Tape::new();
    let params: Vec<_> = net.named_params().into_iter().map(|(_, t)| tape.constant(t.clone())).collect();
    let fwd = net.forward(&mut tape, &params, &[features], Mode::Infer, true)?;
    let class = match target {
        SaliencyTarget::Class(c) if c >= k => return Err(SaliencyError::ClassOutOfRange { class: c, n_classes: k }),
        SaliencyTarget::Class(c) => c,
        SaliencyTarget::Predicted => {
            let row = tape.value(fwd.logits).row(0);
            (0..k).fold(0, |b, i| if row[i] > row[b] { i } else { b })
        }
    };
    let logit = tape.pick(fwd.logits, class)?;
    let g = tape.backward(logit)?;
    Ok((g.get(fwd.inputs[0]), class))
}

/// Absolute input gradients with per-frame Euclidean norms.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    /// T×F, non-negative.
    pub values: Tensor<f64>,
    pub target_class: usize,
    /// Length T.
    pub frame_scores: Vec<f64>,
}

impl SaliencyMap {
    pub fn from_gradients<T: Real>(grad: &Tensor<T>, target_class: usize) -> Self {
        let values = grad.cast::<f64>().map(f64::abs);
        let frame_scores = (0..values.rows())
            .map(|t| values.row(t).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        SaliencyMap {
            values,
            target_class,
            frame_scores,
        }
    }

    /// Values divided by their maximum (unchanged when the map is all zero).
    pub fn normalized(&self) -> Tensor<f64> {
        let m = self.values.max_abs();
        if m > 0.0 {
            self.values.map(|v| v / m)
        } else {
            self.values.clone()
        }
    }

    /// Share of the total per-frame score that falls in frames `[a, b]`.
    pub fn mass_in(&self, a: usize, b: usize) -> f64 {
        let total: f64 = self.frame_scores.iter().sum();
        if total == 0.0 {
            return 0.0;
        }
        self.frame_scores[a..=b.min(self.frame_scores.len() - 1)].iter().sum::<f64>() / total
    }

    /// One row per frame: F saliency columns, then the frame score.
    pub fn to_csv(&self) -> String {
        let (t, f) = self.values.dims2();
        let mut s = String::new();
        for m in 0..f {
            write!(s, "mel{m},").unwrap();
        }
        s.push_str("frame_score\n");
        for i in 0..t {
            for v in self.values.row(i) {
                write!(s, "{v:e},").unwrap();
            }
            writeln!(s, "{:e}", self.frame_scores[i]).unwrap();
        }
        s
    }
}

pub fn make_saliency<T: Real, N: Network<T, Input = Tensor<T>>>(
    net: &N,
    features: &Tensor<T>,
    target: SaliencyTarget,
) -> Result<SaliencyMap, SaliencyError> {
    let (g, class) = input_gradients(net, features, target)?;
    Ok(SaliencyMap::from_gradients(&g, class))
}

/// Binary PGM (P5, maxval 255) of a T×F matrix: time runs left to right and
/// mel bin 0 is the bottom row. Linear min-max scaling; a constant matrix
/// renders as mid-gray.
pub fn encode_pgm(m: &Tensor<f64>) -> Vec<u8> {
    let (t, f) = m.dims2();
    let lo = m.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{t} {f}\n255\n").into_bytes();
    for y in 0..f {
        let bin = f - 1 - y;
        for x in 0..t {
            let v = m.get2(x, bin);
            let px = if hi > lo {
                (255.0 * (v - lo) / (hi - lo)).round() as u8
            } else {
                128
            };
            out.push(px);
        }
    }
    out
}

/// Writes `<prefix>.features.pgm`, `<prefix>.saliency.pgm` and
/// `<prefix>.saliency.csv`.
pub fn render_saliency(map: &SaliencyMap, features: &Tensor<f64>, prefix: &Path) -> Result<(), SaliencyError> {
    if map.values.shape() != features.shape() {
        return Err(NumError::Dimension {
            op: "render_saliency",
            left: map.values.shape().to_vec(),
            right: features.shape().to_vec(),
        }
        .into());
    }
    if let Some(dir) = prefix.parent() {
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    let with = |ext: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(ext);
        std::path::PathBuf::from(s)
    };
    for (path, bytes) in [
        (with(".features.pgm"), encode_pgm(features)),
        (with(".saliency.pgm"), encode_pgm(&map.values)),
        (with(".saliency.csv"), map.to_csv().into_bytes()),
    ] {
        fs::write(&path, bytes).map_err(|e| io(&path, e))?;
    }
    Ok(())
}
