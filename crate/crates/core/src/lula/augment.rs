use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::io::{fmt_f64, Lines};
use crate::network::{Gradients, Layer, Network};
use crate::numerics::{Matrix, Rng};

pub const MASK_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "lula-lab-mask";

/// Standard deviation of the Gaussian the free blocks are drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitStd {
    /// `scale · √(2 / fan_in)` per layer, with `fan_in` the original width
    /// of the layer's input.
    FanIn { scale: f64 },
    Fixed(f64),
}

impl Default for InitStd {
    fn default() -> Self {
        InitStd::FanIn { scale: 0.1 }
    }
}

impl InitStd {
    fn resolve(&self, fan_in: usize) -> f64 {
        match *self {
            InitStd::FanIn { scale } => scale * (2.0 / fan_in as f64).sqrt(),
            InitStd::Fixed(s) => s,
        }
    }
}

/// Free-parameter pattern of one layer. `true` marks a trainable entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMask {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `rows * cols`.
    pub weight: Vec<bool>,
    pub bias: Vec<bool>,
}

impl LayerMask {
    pub fn free_count(&self) -> usize {
        self.weight.iter().chain(&self.bias).filter(|&&b| b).count()
    }
}

/// Record of how a network was augmented.
///
/// Layer `l < L` of the augmented network has weight
/// `[[W, 0], [Ŵ, 0]]` and bias `[b; b̂]`, where the zero column block has
/// width `m_{l-1}` (the units added to the previous layer) and `Ŵ`, `b̂` are
/// the free blocks. The output layer becomes `[W, 0]` with its bias unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct LulaAugmentation {
    /// Layer widths of the original network, input first.
    pub base_widths: Vec<usize>,
    /// Added units per hidden layer.
    pub unit_counts: Vec<usize>,
    /// Standard deviation each hidden layer's free blocks were drawn with.
    pub init_std: Vec<f64>,
    pub masks: Vec<LayerMask>,
}

fn build_masks(base: &[usize], counts: &[usize]) -> Vec<LayerMask> {
    let depth = base.len() - 1;
    (0..depth)
        .map(|l| {
            let added_in = if l == 0 { 0 } else { counts[l - 1] };
            let added_out = if l + 1 < depth { counts[l] } else { 0 };
            let (rows, cols) = (base[l + 1] + added_out, base[l] + added_in);
            let weight = (0..rows * cols).map(|i| i / cols >= base[l + 1] && i % cols < base[l]).collect();
            let bias = (0..rows).map(|r| r >= base[l + 1]).collect();
            LayerMask { rows, cols, weight, bias }
        })
        .collect()
}

impl LulaAugmentation {
    pub fn depth(&self) -> usize {
        self.masks.len()
    }

    pub fn free_count(&self) -> usize {
        self.masks.iter().map(LayerMask::free_count).sum()
    }

    /// Widths of the augmented network, input first.
    pub fn augmented_widths(&self) -> Vec<usize> {
        let mut w = vec![self.base_widths[0]];
        w.extend(self.masks.iter().map(|m| m.rows));
        w
    }

    /// Positions of the free entries in the flattened parameter vector of the
    /// augmented network, ascending.
    pub fn free_indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.free_count());
        let mut offset = 0;
        for m in &self.masks {
            out.extend(m.weight.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| offset + i));
            offset += m.weight.len();
            out.extend(m.bias.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| offset + i));
            offset += m.bias.len();
        }
        out
    }

    fn check_shape(&self, net: &Network) -> Result<()> {
        let ok = net.depth() == self.depth()
            && net.layers().iter().zip(&self.masks).all(|(l, m)| l.weight.shape() == (m.rows, m.cols) && l.bias.len() == m.rows);
        if ok {
            Ok(())
        } else {
            Err(Error::dims("network does not match the augmentation layout"))
        }
    }

    /// Zeroes every gradient entry outside the free blocks.
    pub fn mask_gradient(&self, grads: &Gradients) -> Result<Gradients> {
        let shapes_match = grads.layers.len() == self.depth()
            && grads.layers.iter().zip(&self.masks).all(|((w, b), m)| w.shape() == (m.rows, m.cols) && b.len() == m.rows);
        if !shapes_match {
            return Err(Error::dims("gradient does not match the augmentation layout"));
        }
        let layers = grads
            .layers
            .iter()
            .zip(&self.masks)
            .map(|((w, b), m)| {
                let wm: Vec<f64> = w.as_slice().iter().zip(&m.weight).map(|(&g, &f)| if f { g } else { 0.0 }).collect();
                let bm = b.iter().zip(&m.bias).map(|(&g, &f)| if f { g } else { 0.0 }).collect();
                (Matrix::from_vec(m.rows, m.cols, wm).expect("shape"), bm)
            })
            .collect();
        Ok(Gradients { layers })
    }

    /// Recovers the original network by dropping the added rows and columns.
    pub fn strip(&self, net: &Network) -> Result<Network> {
        self.check_shape(net)?;
        let b = &self.base_widths;
        let layers = net
            .layers()
            .iter()
            .enumerate()
            .map(|(l, layer)| Layer {
                weight: Matrix::from_fn(b[l + 1], b[l], |i, j| layer.weight[(i, j)]),
                bias: layer.bias[..b[l + 1]].to_vec(),
                activation: layer.activation,
            })
            .collect();
        Network::new(layers)
    }

    /// Checks that the non-free entries of `augmented` are exactly those of
    /// `original` and that the structural blocks are exactly zero.
    pub fn structure_preserved(&self, original: &Network, augmented: &Network) -> Result<bool> {
        self.check_shape(augmented)?;
        if original.depth() != self.depth() {
            return Ok(false);
        }
        for ((o, a), m) in original.layers().iter().zip(augmented.layers()).zip(&self.masks) {
            let (r0, c0) = o.weight.shape();
            for i in 0..m.rows {
                for j in 0..m.cols {
                    if m.weight[i * m.cols + j] {
                        continue;
                    }
                    let expected = if i < r0 && j < c0 { o.weight[(i, j)] } else { 0.0 };
                    if a.weight[(i, j)].to_bits() != expected.to_bits() {
                        return Ok(false);
                    }
                }
                if !m.bias[i] && a.bias[i].to_bits() != o.bias[i].to_bits() {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        let join = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
        writeln!(out, "format {MAGIC}")?;
        writeln!(out, "version {MASK_FORMAT_VERSION}")?;
        writeln!(out, "layer_count {}", self.depth())?;
        writeln!(out, "base_widths {}", join(&self.base_widths))?;
        writeln!(out, "unit_counts {}", join(&self.unit_counts))?;
        let stds: Vec<String> = self.init_std.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(out, "init_std {}", stds.join(" "))?;
        for (l, m) in self.masks.iter().enumerate() {
            writeln!(out, "layer {}", l + 1)?;
            writeln!(out, "weight_mask {} {}", m.rows, m.cols)?;
            for r in m.weight.chunks(m.cols.max(1)) {
                writeln!(out, "{}", bits(r))?;
            }
            writeln!(out, "bias_mask {}", m.rows)?;
            writeln!(out, "{}", bits(&m.bias))?;
        }
        writeln!(out, "end")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read_from(File::open(path).map_err(|e| Error::io(path, e))?)
    }

    /// Parses a mask file and checks the stored masks against the layout
    /// implied by the widths and counts.
    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut lines = Lines::new(r);
        if lines.keyed("format")?.first().map(String::as_str) != Some(MAGIC) {
            return Err(Error::Format(format!("not a {MAGIC} file")));
        }
        let version = lines.keyed_usizes("version", 1)?[0];
        if version != MASK_FORMAT_VERSION as usize {
            return Err(Error::Format(format!("version {version} is not supported (expected {MASK_FORMAT_VERSION})")));
        }
        let depth = lines.keyed_usizes("layer_count", 1)?[0];
        if depth < 1 {
            return Err(Error::Malformed("layer_count must be positive".into()));
        }
        let base_widths = lines.keyed_usizes("base_widths", depth + 1)?;
        let unit_counts = lines.keyed_usizes("unit_counts", depth - 1)?;
        let init_std = lines.keyed("init_std")?;
        if init_std.len() != depth - 1 {
            return Err(Error::Malformed(format!("init_std needs {} values", depth - 1)));
        }
        let init_std =
            init_std.iter().map(|v| v.parse().map_err(|_| Error::Malformed(format!("bad number `{v}`")))).collect::<Result<Vec<f64>>>()?;
        let mut masks = Vec::with_capacity(depth);
        for l in 0..depth {
            if lines.keyed_usizes("layer", 1)?[0] != l + 1 {
                return Err(Error::Malformed(format!("mask layer {} out of order", l + 1)));
            }
            let shape = lines.keyed_usizes("weight_mask", 2)?;
            let (rows, cols) = (shape[0], shape[1]);
            let mut weight = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                weight.extend(parse_bits(&lines.next_line()?, cols)?);
            }
            let nb = lines.keyed_usizes("bias_mask", 1)?[0];
            let bias = parse_bits(&lines.next_line()?, nb)?;
            masks.push(LayerMask { rows, cols, weight, bias });
        }
        lines.keyed("end")?;
        if masks != build_masks(&base_widths, &unit_counts) {
            return Err(Error::Malformed("stored masks disagree with the widths and unit counts".into()));
        }
        Ok(Self { base_widths, unit_counts, init_std, masks })
    }
}

fn bits(v: &[bool]) -> String {
    v.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

fn parse_bits(line: &str, n: usize) -> Result<Vec<bool>> {
    if line.len() != n {
        return Err(Error::Malformed(format!("mask row of length {} (expected {n})", line.len())));
    }
    line.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(Error::Malformed(format!("bad mask character `{other}`"))),
        })
        .collect()
}

/// Adds `counts[l]` units to hidden layer `l + 1`, drawing the free blocks
/// from `N(0, std²)`.
///
/// The augmented network computes the same function as `net` for every
/// input and every draw of the free blocks.
pub fn augment(net: &Network, counts: &[usize], rng: &mut Rng, init_std: InitStd) -> Result<(Network, LulaAugmentation)> {
    let depth = net.depth();
    if counts.len() + 1 != depth {
        return Err(Error::invalid(format!(
            "need one unit count per hidden layer ({}), got {}; the input and output layers cannot be augmented",
            depth - 1,
            counts.len()
        )));
    }
    let base: Vec<usize> = std::iter::once(net.input_dim()).chain(net.layers().iter().map(|l| l.weight.rows())).collect();
    let masks = build_masks(&base, counts);
    let mut stds = Vec::with_capacity(depth - 1);
    let mut layers = Vec::with_capacity(depth);
    for (l, (layer, m)) in net.layers().iter().zip(&masks).enumerate() {
        let std = if l + 1 < depth { init_std.resolve(base[l]) } else { 0.0 };
        if l + 1 < depth {
            if !(std >= 0.0) || !std.is_finite() {
                return Err(Error::invalid(format!("initial standard deviation must be non-negative, got {std}")));
            }
            stds.push(std);
        }
        let (r0, c0) = layer.weight.shape();
        let mut weight = Matrix::zeros(m.rows, m.cols);
        let mut bias = vec![0.0; m.rows];
        for i in 0..m.rows {
            for j in 0..m.cols {
                weight[(i, j)] = if i < r0 && j < c0 {
                    layer.weight[(i, j)]
                } else if m.weight[i * m.cols + j] {
                    std * rng.normal()
                } else {
                    0.0
                };
            }
            bias[i] = if i < r0 { layer.bias[i] } else { std * rng.normal() };
        }
        layers.push(Layer { weight, bias, activation: layer.activation });
    }
    let aug = LulaAugmentation { base_widths: base, unit_counts: counts.to_vec(), init_std: stds, masks };
    Ok((Network::new(layers)?, aug))
}

/// Unit counts that put `m` units on the last hidden layer only.
pub fn penultimate_counts(net: &Network, m: usize) -> Vec<usize> {
    let mut c = vec![0; net.depth().saturating_sub(1)];
    if let Some(last) = c.last_mut() {
        *last = m;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Activation;

    fn net(widths: &[usize], seed: u64) -> Network {
        Network::random(&Network::mlp_specs(widths, Activation::Relu), &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn block_shapes() {
        let n = net(&[2, 3, 1], 0);
        let (a, aug) = augment(&n, &[2], &mut Rng::new(1), InitStd::default()).unwrap();
        assert_eq!(a.layers()[0].weight.shape(), (5, 2));
        assert_eq!(a.layers()[1].weight.shape(), (1, 5));
        assert_eq!(&a.layers()[1].weight.row(0)[3..], &[0.0, 0.0]);
        assert_eq!(aug.free_count(), 2 * 2 + 2);
        assert_eq!(aug.augmented_widths(), vec![2, 5, 1]);
        assert!(aug.masks[1].weight.iter().all(|&b| !b));
    }

    #[test]
    fn zero_counts_are_a_no_op() {
        let n = net(&[3, 4, 5, 2], 2);
        let (a, aug) = augment(&n, &[0, 0], &mut Rng::new(3), InitStd::default()).unwrap();
        assert_eq!(a, n);
        assert_eq!(aug.free_count(), 0);
    }

    #[test]
    fn masks_cover_exactly_the_free_blocks() {
        let n = net(&[3, 4, 5, 2], 4);
        let (a, aug) = augment(&n, &[2, 3], &mut Rng::new(5), InitStd::Fixed(1.0)).unwrap();
        // layer 2: rows 5..8 and columns 0..4 are free; columns 4..6 are structural zeros
        let m = &aug.masks[1];
        assert_eq!((m.rows, m.cols), (8, 6));
        for i in 0..8 {
            for j in 0..6 {
                assert_eq!(m.weight[i * 6 + j], i >= 5 && j < 4);
                if j >= 4 {
                    assert_eq!(a.layers()[1].weight[(i, j)], 0.0);
                }
            }
        }
        assert!(aug.structure_preserved(&n, &a).unwrap());
        assert_eq!(aug.strip(&a).unwrap(), n);
        assert_eq!(aug.free_indices().len(), aug.free_count());
    }

    #[test]
    fn outputs_are_unchanged() {
        let n = net(&[3, 6, 6, 2], 6);
        let (a, _) = augment(&n, &[4, 5], &mut Rng::new(7), InitStd::Fixed(3.0)).unwrap();
        let mut rng = Rng::new(8);
        let x = Matrix::from_fn(20, 3, |_, _| rng.uniform(-5.0, 5.0));
        assert_eq!(n.predict(&x).unwrap(), a.predict(&x).unwrap());
    }

    #[test]
    fn rejects_bad_counts() {
        let n = net(&[2, 3, 1], 0);
        assert!(augment(&n, &[1, 1], &mut Rng::new(0), InitStd::default()).is_err());
        assert!(augment(&n, &[], &mut Rng::new(0), InitStd::default()).is_err());
        assert!(augment(&n, &[1], &mut Rng::new(0), InitStd::Fixed(-1.0)).is_err());
    }

    #[test]
    fn gradient_masking() {
        let n = net(&[2, 3, 3, 2], 1);
        let (a, aug) = augment(&n, &[1, 2], &mut Rng::new(0), InitStd::default()).unwrap();
        let mut ones = Gradients::zeros_like(&a);
        for (w, b) in &mut ones.layers {
            w.as_mut_slice().fill(1.0);
            b.fill(1.0);
        }
        let masked = aug.mask_gradient(&ones).unwrap();
        let flat = masked.to_flat();
        let free = aug.free_indices();
        for (i, v) in flat.iter().enumerate() {
            assert_eq!(*v, if free.binary_search(&i).is_ok() { 1.0 } else { 0.0 });
        }
        let zero = Gradients::zeros_like(&a);
        assert_eq!(aug.mask_gradient(&zero).unwrap(), zero);
        assert!(aug.mask_gradient(&Gradients::zeros_like(&n)).is_err());
    }

    #[test]
    fn mask_file_round_trip() {
        let n = net(&[3, 4, 5, 2], 9);
        let (_, aug) = augment(&n, &[2, 3], &mut Rng::new(1), InitStd::default()).unwrap();
        let mut buf = Vec::new();
        aug.write_to(&mut buf).unwrap();
        let back = LulaAugmentation::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, aug);
        let text = String::from_utf8(buf).unwrap();
        let tampered = text.replacen("unit_counts 2 3", "unit_counts 2 4", 1);
        assert!(LulaAugmentation::read_from(tampered.as_bytes()).is_err());
        let truncated: String = text.lines().take(8).collect::<Vec<_>>().join("\n");
        assert!(matches!(LulaAugmentation::read_from(truncated.as_bytes()), Err(Error::Malformed(_))));
    }
}
