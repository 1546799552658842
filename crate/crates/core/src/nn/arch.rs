//! Architecture descriptors: layer specs, the descriptor string grammar, and
//! shape/parameter planning.

use std::fmt;

use super::NnError;

/// One layer of the network.
///
/// Convolutions are fixed at 3×3 kernels, stride 1, zero padding 1, so they
/// preserve spatial shape; pooling is a parameter-free 2×2 max pool with
/// stride 2. ReLU follows every Conv and Dense; the Output layer is a plain
/// affine map whose softmax lives inside the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv3x3 { filters: usize },
    MaxPool2x2,
    Dense { neurons: usize },
    Output { classes: usize },
}

/// Network architecture: an input shape plus an ordered layer list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchDescriptor {
    /// (frequency bins, time frames, channels).
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

/// Shape of the tensor flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TensorShape {
    /// Channel-major feature map: (channels, height, width).
    Map(usize, usize, usize),
    /// Flattened vector.
    Flat(usize),
}

impl TensorShape {
    pub(crate) fn len(&self) -> usize {
        match *self {
            TensorShape::Map(c, h, w) => c * h * w,
            TensorShape::Flat(n) => n,
        }
    }
}

/// A validated layer with resolved shapes and its slice of the flat
/// parameter vector (weights at `w_off..w_off+w_len`, then biases).
#[derive(Debug, Clone)]
pub(crate) struct PlannedLayer {
    pub spec: LayerSpec,
    pub in_shape: TensorShape,
    pub out_shape: TensorShape,
    pub w_off: usize,
    pub w_len: usize,
    pub b_off: usize,
    pub b_len: usize,
}

impl ArchDescriptor {
    pub fn new(input_shape: (usize, usize, usize), layers: Vec<LayerSpec>) -> Self {
        ArchDescriptor {
            input_shape,
            layers,
        }
    }

    /// Number of output classes. Valid architectures end in exactly one
    /// Output layer; unvalidated ones fall back to 0.
    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Output { classes }) => *classes,
            _ => 0,
        }
    }

    /// Total parameter count of the validated architecture.
    pub fn param_count(&self) -> Result<usize, NnError> {
        Ok(self.plan()?.last().map_or(0, |l| l.b_off + l.b_len))
    }

    /// Validate the architecture and resolve per-layer shapes and parameter
    /// offsets.
    pub(crate) fn plan(&self) -> Result<Vec<PlannedLayer>, NnError> {
        let (h, w, c) = self.input_shape;
        if h == 0 || w == 0 || c == 0 {
            return Err(NnError::InvalidArch(format!(
                "input shape {h}x{w}x{c} has a zero dimension"
            )));
        }
        if self.layers.is_empty() {
            return Err(NnError::InvalidArch("architecture has no layers".into()));
        }
        let outputs = self
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Output { .. }))
            .count();
        if outputs != 1 {
            return Err(NnError::InvalidArch(format!(
                "expected exactly one Output layer, found {outputs}"
            )));
        }
        if !matches!(self.layers.last(), Some(LayerSpec::Output { .. })) {
            return Err(NnError::InvalidArch("Output layer must be last".into()));
        }

        let mut plan = Vec::with_capacity(self.layers.len());
        let mut shape = TensorShape::Map(c, h, w);
        let mut offset = 0usize;
        for (idx, spec) in self.layers.iter().enumerate() {
            let (out_shape, w_len, b_len) = match *spec {
                LayerSpec::Conv3x3 { filters } => {
                    if filters == 0 {
                        return Err(NnError::InvalidArch(format!(
                            "layer {idx}: conv filter count must be at least 1"
                        )));
                    }
                    let TensorShape::Map(ci, hi, wi) = shape else {
                        return Err(NnError::InvalidArch(format!(
                            "layer {idx}: conv after the network was flattened by a dense layer"
                        )));
                    };
                    (TensorShape::Map(filters, hi, wi), 9 * ci * filters, filters)
                }
                LayerSpec::MaxPool2x2 => {
                    let TensorShape::Map(ci, hi, wi) = shape else {
                        return Err(NnError::InvalidArch(format!(
                            "layer {idx}: pool after the network was flattened by a dense layer"
                        )));
                    };
                    let (ho, wo) = (hi / 2, wi / 2);
                    if ho == 0 || wo == 0 {
                        return Err(NnError::InvalidArch(format!(
                            "layer {idx}: 2x2 pool underflows {hi}x{wi} spatial dims"
                        )));
                    }
                    (TensorShape::Map(ci, ho, wo), 0, 0)
                }
                LayerSpec::Dense { neurons } => {
                    if neurons == 0 {
                        return Err(NnError::InvalidArch(format!(
                            "layer {idx}: dense neuron count must be at least 1"
                        )));
                    }
                    let fan_in = shape.len();
                    (TensorShape::Flat(neurons), fan_in * neurons, neurons)
                }
                LayerSpec::Output { classes } => {
                    if classes < 2 {
                        return Err(NnError::InvalidArch(format!(
                            "layer {idx}: output needs at least 2 classes, got {classes}"
                        )));
                    }
                    let fan_in = shape.len();
                    (TensorShape::Flat(classes), fan_in * classes, classes)
                }
            };
            plan.push(PlannedLayer {
                spec: *spec,
                in_shape: shape,
                out_shape,
                w_off: offset,
                w_len,
                b_off: offset + w_len,
                b_len,
            });
            offset += w_len + b_len;
            shape = out_shape;
        }
        Ok(plan)
    }

    /// Parse the descriptor grammar:
    /// `in:<H>x<W>x<C>;` followed by `-`-joined tokens `c3x<filters>`, `p2`,
    /// `fc<neurons>`, `out<classes>`.
    pub fn parse(text: &str) -> Result<Self, NnError> {
        let text = text.trim();
        let rest = text
            .strip_prefix("in:")
            .ok_or_else(|| NnError::BadDescriptor("descriptor must start with `in:`".into()))?;
        let (shape_part, layers_part) = rest.split_once(';').ok_or_else(|| {
            NnError::BadDescriptor("missing `;` between input shape and layers".into())
        })?;
        let dims: Vec<&str> = shape_part.split('x').collect();
        if dims.len() != 3 {
            return Err(NnError::BadDescriptor(format!(
                "input shape `{shape_part}` must be <H>x<W>x<C>"
            )));
        }
        let parse_dim = |s: &str| -> Result<usize, NnError> {
            s.parse::<usize>()
                .map_err(|_| NnError::BadDescriptor(format!("bad dimension `{s}`")))
        };
        let input_shape = (
            parse_dim(dims[0])?,
            parse_dim(dims[1])?,
            parse_dim(dims[2])?,
        );

        let mut layers = Vec::new();
        for token in layers_part.split('-') {
            let layer = if let Some(n) = token.strip_prefix("c3x") {
                LayerSpec::Conv3x3 {
                    filters: parse_dim(n)?,
                }
            } else if token == "p2" {
                LayerSpec::MaxPool2x2
            } else if let Some(n) = token.strip_prefix("fc") {
                LayerSpec::Dense {
                    neurons: parse_dim(n)?,
                }
            } else if let Some(n) = token.strip_prefix("out") {
                LayerSpec::Output {
                    classes: parse_dim(n)?,
                }
            } else {
                return Err(NnError::BadDescriptor(format!(
                    "unknown layer token `{token}`"
                )));
            };
            layers.push(layer);
        }
        Ok(ArchDescriptor {
            input_shape,
            layers,
        })
    }
}

impl fmt::Display for ArchDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (h, w, c) = self.input_shape;
        write!(f, "in:{h}x{w}x{c};")?;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                write!(f, "-")?;
            }
            match layer {
                LayerSpec::Conv3x3 { filters } => write!(f, "c3x{filters}")?,
                LayerSpec::MaxPool2x2 => write!(f, "p2")?,
                LayerSpec::Dense { neurons } => write!(f, "fc{neurons}")?,
                LayerSpec::Output { classes } => write!(f, "out{classes}")?,
            }
        }
        Ok(())
    }
}
