//! Plain-text network checkpoints.
//!
//! ```text
//! camproj-mtl 1
//! topology=mn
//! feature_width=96
//! hidden=64,32
//! array head_offset 13
//! 1.2000000000000000e1
//! ...
//! ```
//!
//! Values are written with 17 significant digits, so loading restores the
//! network bit for bit. Writes go through a temporary file in the target
//! directory and are renamed into place.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use super::{HeadScaling, MtlNet, Topology};
use crate::cpl::N_COMPONENTS;
use crate::error::{Error, Result};

const MAGIC: &str = "camproj-mtl 1";

fn push_array(out: &mut String, name: &str, values: &[f64]) {
    out.push_str(&format!("array {name} {}\n", values.len()));
    for v in values {
        out.push_str(&format!("{v:.16e}\n"));
    }
}

pub fn to_string(net: &MtlNet) -> String {
    let hidden: Vec<String> = net.hidden_widths().iter().map(usize::to_string).collect();
    let mut out = format!(
        "{MAGIC}\ntopology={}\nfeature_width={}\nhidden={}\n",
        net.topology.name(),
        net.feature_width,
        hidden.join(",")
    );
    push_array(&mut out, "head_offset", &net.scaling.offset);
    push_array(&mut out, "head_scale", &net.scaling.scale);
    let constant: Vec<f64> = net
        .scaling
        .constant
        .iter()
        .map(|&c| if c { 1.0 } else { 0.0 })
        .collect();
    push_array(&mut out, "head_constant", &constant);
    for (i, t) in net.trunks.iter().enumerate() {
        push_array(&mut out, &format!("norm{i}_mean"), &t.norm.mean);
        push_array(&mut out, &format!("norm{i}_scale"), &t.norm.scale);
    }
    push_array(&mut out, "params", &net.flatten());
    out
}

pub fn save(net: &MtlNet, path: &Path) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(to_string(net).as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn from_str(text: &str) -> Result<MtlNet> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, MAGIC)) => {}
        _ => return Err(Error::parse(1, format!("expected `{MAGIC}`"))),
    }
    let mut header = HashMap::new();
    let mut arrays: HashMap<String, Vec<f64>> = HashMap::new();
    while let Some((ln, line)) = lines.next() {
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("array ") {
            let mut parts = rest.split_whitespace();
            let (Some(name), Some(len), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::parse(ln, "expected `array <name> <len>`"));
            };
            let len: usize = len
                .parse()
                .map_err(|_| Error::parse(ln, "bad array length"))?;
            let mut values = Vec::with_capacity(len);
            for _ in 0..len {
                let (vl, v) = lines
                    .next()
                    .ok_or_else(|| Error::parse(ln, "truncated array"))?;
                values.push(
                    v.parse()
                        .map_err(|_| Error::parse(vl, format!("bad number `{v}`")))?,
                );
            }
            arrays.insert(name.to_string(), values);
        } else if let Some((k, v)) = line.split_once('=') {
            header.insert(k.to_string(), (ln, v.to_string()));
        } else {
            return Err(Error::parse(ln, format!("unexpected line `{line}`")));
        }
    }

    let field = |k: &str| {
        header
            .get(k)
            .ok_or_else(|| Error::parse(0, format!("missing `{k}`")))
    };
    let (ln, topo) = field("topology")?;
    let topology = Topology::parse(topo).map_err(|e| Error::parse(*ln, e.to_string()))?;
    let (ln, fw) = field("feature_width")?;
    let feature_width: usize = fw
        .parse()
        .map_err(|_| Error::parse(*ln, "bad feature_width"))?;
    let (ln, hidden) = field("hidden")?;
    let hidden = hidden
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::parse(*ln, "bad hidden widths"))?;

    let mut take = |name: &str, len: usize| -> Result<Vec<f64>> {
        let v = arrays
            .remove(name)
            .ok_or_else(|| Error::parse(0, format!("missing array `{name}`")))?;
        if v.len() != len {
            return Err(Error::ShapeMismatch {
                expected: len,
                got: v.len(),
            });
        }
        Ok(v)
    };
    let mut scaling = HeadScaling::identity();
    scaling
        .offset
        .copy_from_slice(&take("head_offset", N_COMPONENTS)?);
    scaling
        .scale
        .copy_from_slice(&take("head_scale", N_COMPONENTS)?);
    for (c, v) in scaling
        .constant
        .iter_mut()
        .zip(take("head_constant", N_COMPONENTS)?)
    {
        *c = v != 0.0;
    }
    let mut net = MtlNet::new(topology, feature_width, &hidden, scaling, 0)?;
    for i in 0..net.trunks.len() {
        let w = net.trunks[i].norm.mean.len();
        net.trunks[i].norm.mean = take(&format!("norm{i}_mean"), w)?;
        net.trunks[i].norm.scale = take(&format!("norm{i}_scale"), w)?;
    }
    let params = take("params", net.param_count())?;
    net.load_flat(&params)?;
    Ok(net)
}

pub fn load(path: &Path) -> Result<MtlNet> {
    from_str(&std::fs::read_to_string(path)?)
}
