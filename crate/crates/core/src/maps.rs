//! Score-map grids, the 38-channel mask stack, the character set, and the
//! MTSR binary tensor format.
//!
//! Stack channel layout:
//!
//! | channel | content                                  |
//! |---------|------------------------------------------|
//! | 0       | global text instance map                 |
//! | 1..=36  | character maps, charset index `c` at `c+1` |
//! | 37      | background map of characters             |
//!
//! MTSR layout (all integers little-endian):
//!
//! ```text
//! "MTSR" | 0x01 | rank: u32 | dims: rank x u32 | values: prod(dims) x f32
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const NUM_CHARS: usize = 36;
pub const NUM_CHANNELS: usize = 38;
pub const GLOBAL_CHANNEL: usize = 0;
pub const BACKGROUND_CHANNEL: usize = 37;

pub const MTSR_MAGIC: &[u8; 4] = b"MTSR";
pub const MTSR_VERSION: u8 = 0x01;
const MTSR_HEADER_FIXED: usize = 4 + 1 + 4;

/// Map channel for a charset index.
pub const fn char_channel(charset_index: usize) -> usize {
    charset_index + 1
}

/// The 36-symbol alphabet: `0`-`9` at indices 0..=9, `a`-`z` at 10..=35.
/// Uppercase input folds to lowercase before lookup.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Charset;

impl Charset {
    pub const SYMBOLS: [char; NUM_CHARS] = [
        '0', '1', '2', '3', '4', '5', '6', '7', '8', '9', 'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h',
        'i', 'j', 'k', 'l', 'm', 'n', 'o', 'p', 'q', 'r', 's', 't', 'u', 'v', 'w', 'x', 'y', 'z',
    ];

    pub fn index_of(ch: char) -> Option<usize> {
        match ch.to_ascii_lowercase() {
            d @ '0'..='9' => Some(d as usize - '0' as usize),
            l @ 'a'..='z' => Some(l as usize - 'a' as usize + 10),
            _ => None,
        }
    }

    pub fn symbol(index: usize) -> Option<char> {
        Self::SYMBOLS.get(index).copied()
    }

    pub fn contains(ch: char) -> bool {
        Self::index_of(ch).is_some()
    }

    /// Lowercases `text` and drops every symbol outside the alphabet.
    pub fn filter(text: &str) -> String {
        text.chars()
            .filter_map(|c| Self::index_of(c).map(|i| Self::SYMBOLS[i]))
            .collect()
    }

    /// True when every symbol of `text` is in the alphabet (after folding).
    pub fn is_valid_word(text: &str) -> bool {
        text.chars().all(Self::contains)
    }
}

fn check_unit_range(values: &[f32]) -> Result<()> {
    if let Some((i, v)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::contract(format!(
            "score value {v} at index {i} outside [0, 1]"
        )));
    }
    Ok(())
}

/// A single H x W grid of scores in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl ScoreMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::contract("score map dimensions must be positive"));
        }
        if values.len() != height * width {
            return Err(Error::contract(format!(
                "score map {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        check_unit_range(&values)?;
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0.0; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// The 38-channel output of a mask branch for one region of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskStack {
    height: usize,
    width: usize,
    // channel-major, then row-major
    data: Vec<f32>,
}

impl MaskStack {
    /// Builds a stack from contiguous channel-major data.
    pub fn from_data(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::contract("stack dimensions must be positive"));
        }
        let expected = NUM_CHANNELS * height * width;
        if data.len() != expected {
            return Err(Error::contract(format!(
                "stack {NUM_CHANNELS}x{height}x{width} needs {expected} values, got {}",
                data.len()
            )));
        }
        check_unit_range(&data)?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds a stack from exactly 38 maps of identical size.
    pub fn from_channels(channels: Vec<ScoreMap>) -> Result<Self> {
        if channels.len() != NUM_CHANNELS {
            return Err(Error::contract(format!(
                "stack needs exactly {NUM_CHANNELS} channels, got {}",
                channels.len()
            )));
        }
        let (h, w) = (channels[0].height, channels[0].width);
        if channels.iter().any(|c| c.height != h || c.width != w) {
            return Err(Error::contract("stack channels differ in size"));
        }
        let data = channels.into_iter().flat_map(ScoreMap::into_values).collect();
        Ok(Self {
            height: h,
            width: w,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::from_data(height, width, vec![0.0; NUM_CHANNELS * height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Mutable channel access. Callers must keep values inside `[0, 1]`.
    pub(crate) fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn channel_map(&self, c: usize) -> ScoreMap {
        ScoreMap {
            height: self.height,
            width: self.width,
            values: self.channel(c).to_vec(),
        }
    }

    pub fn global(&self) -> ScoreMap {
        self.channel_map(GLOBAL_CHANNEL)
    }

    pub fn background(&self) -> ScoreMap {
        self.channel_map(BACKGROUND_CHANNEL)
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[(c * self.height + row) * self.width + col]
    }
}

/// A raw MTSR record: dimensions plus row-major f32 payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    pub values: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<u32>, values: Vec<f32>) -> Result<Self> {
        let expected = dims.iter().map(|&d| d as usize).product::<usize>();
        if dims.is_empty() || values.len() != expected {
            return Err(Error::contract(format!(
                "tensor with dims {dims:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self { dims, values })
    }
}

pub fn write_tensor<W: Write>(tensor: &Tensor, mut sink: W) -> Result<()> {
    let mut buf = Vec::with_capacity(MTSR_HEADER_FIXED + 4 * (tensor.dims.len() + tensor.values.len()));
    buf.extend_from_slice(MTSR_MAGIC);
    buf.push(MTSR_VERSION);
    buf.extend_from_slice(&(tensor.dims.len() as u32).to_le_bytes());
    for d in &tensor.dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in &tensor.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(())
}

fn le_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(offset, "truncated header"))
}

/// Parses one MTSR record occupying all of `bytes`.
pub fn parse_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 4 || &bytes[..4] != MTSR_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"MTSR\""));
    }
    match bytes.get(4) {
        None => return Err(Error::format(4, "truncated header")),
        Some(&MTSR_VERSION) => {}
        Some(v) => return Err(Error::format(4, format!("unsupported version {v:#04x}"))),
    }
    let rank = le_u32(bytes, 5)? as usize;
    if rank == 0 {
        return Err(Error::format(5, "rank must be at least 1"));
    }
    let mut dims = Vec::with_capacity(rank.min(16));
    let mut offset = MTSR_HEADER_FIXED;
    let mut count: usize = 1;
    for _ in 0..rank {
        let d = le_u32(bytes, offset)?;
        count = count
            .checked_mul(d as usize)
            .ok_or_else(|| Error::format(offset, "dimension product overflows"))?;
        dims.push(d);
        offset += 4;
    }
    let payload = &bytes[offset..];
    let expected = count
        .checked_mul(4)
        .ok_or_else(|| Error::format(offset, "payload size overflows"))?;
    if payload.len() < expected {
        return Err(Error::format(
            bytes.len(),
            format!(
                "truncated payload: expected {expected} bytes, found {}",
                payload.len()
            ),
        ));
    }
    if payload.len() > expected {
        return Err(Error::format(
            offset + expected,
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(Tensor { dims, values })
}

pub fn read_tensor<R: Read>(mut source: R) -> Result<Tensor> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    parse_tensor(&bytes)
}

/// Writes `stack` as a rank-3 MTSR record `[38, H, W]`.
pub fn save_map_stack<W: Write>(stack: &MaskStack, sink: W) -> Result<()> {
    let tensor = Tensor {
        dims: vec![
            NUM_CHANNELS as u32,
            stack.height as u32,
            stack.width as u32,
        ],
        values: stack.data.clone(),
    };
    write_tensor(&tensor, sink)
}

/// Reads a rank-3 `[38, H, W]` MTSR record.
pub fn load_map_stack<R: Read>(source: R) -> Result<MaskStack> {
    let tensor = read_tensor(source)?;
    if tensor.dims.len() != 3 {
        return Err(Error::format(
            5,
            format!("stack must have rank 3, found {}", tensor.dims.len()),
        ));
    }
    if tensor.dims[0] as usize != NUM_CHANNELS {
        return Err(Error::format(
            MTSR_HEADER_FIXED,
            format!(
                "stack must have {NUM_CHANNELS} channels, found {}",
                tensor.dims[0]
            ),
        ));
    }
    let (h, w) = (tensor.dims[1] as usize, tensor.dims[2] as usize);
    if h == 0 || w == 0 {
        return Err(Error::format(MTSR_HEADER_FIXED + 4, "zero spatial dimension"));
    }
    let payload_start = MTSR_HEADER_FIXED + 12;
    if let Some(i) = tensor.values.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::format(
            payload_start + 4 * i,
            format!("score {} outside [0, 1]", tensor.values[i]),
        ));
    }
    Ok(MaskStack {
        height: h,
        width: w,
        data: tensor.values,
    })
}
