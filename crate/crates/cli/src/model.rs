//! Loading models and networks from `key = value` files.

use std::path::Path;

use margattn::attention::{cross_attention_mrf, self_attention_mrf};
use margattn::io::KeyValues;
use margattn::mechanisms::{BlockSlotConfig, SlotConfig, SlotInit};
use margattn::{
    EdgePriorMode, EdgeVariable, Edge, Error, Mat, NodePotential, NodeSet, PairwiseMrf, PcnLayer,
    PcnNetwork, PotentialSpec, Result, StructuralPrior, ValueSpec,
};

/// An MRF with the value map used to read out attention outputs.
#[derive(Debug, Clone)]
pub struct Model {
    pub mrf: PairwiseMrf,
    pub values: ValueSpec,
}

/// `beta` is a number or `scaled` for `1/√d`.
fn beta(kv: &KeyValues, d: usize) -> Result<f64> {
    match kv.get("beta") {
        Some("scaled") => Ok(1.0 / (d as f64).sqrt()),
        _ => kv.f64_or("beta", 1.0),
    }
}

fn matrix_or_identity(kv: &KeyValues, key: &str, d: usize) -> Result<Mat> {
    Ok(kv.matrix_opt(key)?.unwrap_or_else(|| Mat::identity(d)))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let kv = KeyValues::read(path)?;
    let kind = kv.require("kind")?;
    let mrf = match kind {
        "cross" => {
            let keys = kv.matrix("keys")?;
            let queries = kv.matrix("queries")?;
            let d = keys.cols();
            cross_attention_mrf(
                &queries,
                &keys,
                &matrix_or_identity(&kv, "wq", d)?,
                &matrix_or_identity(&kv, "wk", d)?,
                beta(&kv, d)?,
            )?
        }
        "self" => {
            let x = kv.matrix("inputs")?;
            let d = x.cols();
            self_attention_mrf(
                &x,
                &matrix_or_identity(&kv, "wq", d)?,
                &matrix_or_identity(&kv, "wk", d)?,
                beta(&kv, d)?,
            )?
        }
        "slot" => {
            let cfg = slot_config(&kv)?;
            cfg.mrf(&cfg.initial_slots())?
        }
        "block-slot" => {
            let cfg = block_slot_config(&kv)?;
            cfg.mrf(&cfg.slots.initial_slots())?
        }
        "custom" => custom_mrf(&kv)?,
        other => {
            return Err(Error::Parse(format!(
                "unknown kind '{other}' (expected cross, self, slot, block-slot or custom)"
            )))
        }
    };
    let values = ValueSpec::new(matrix_or_identity(&kv, "wv", mrf.dim())?);
    Ok(Model { mrf, values })
}

/// Keys: `inputs`, `num_slots` (or the row count of `slots`), `w`, `beta`,
/// and either `slots` (initial means) or `seed`.
pub fn slot_config(kv: &KeyValues) -> Result<SlotConfig> {
    let inputs = kv.matrix("inputs")?;
    let d = inputs.cols();
    let given = kv.matrix_opt("slots")?;
    let num_slots = match &given {
        Some(m) => kv.usize_or("num_slots", m.rows())?,
        None => kv.usize_or("num_slots", 0).and_then(|m| {
            if m == 0 {
                Err(Error::Parse("missing key 'num_slots'".into()))
            } else {
                Ok(m)
            }
        })?,
    };
    let init = match given {
        Some(m) => SlotInit::Given(m),
        None => SlotInit::Seeded(kv.usize_or("seed", 0)? as u64),
    };
    let w = matrix_or_identity(kv, "w", d)?;
    SlotConfig::new(inputs, num_slots, w, beta(kv, d)?, init)
}

/// Slot keys plus `blocks` (widths), `memories` (one CSV per block, `none`
/// for an empty bank) and optional `memory_beta`.
pub fn block_slot_config(kv: &KeyValues) -> Result<BlockSlotConfig> {
    let slots = slot_config(kv)?;
    let blocks = kv
        .list("blocks")
        .iter()
        .map(|s| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad block width '{s}'"))))
        .collect::<Result<Vec<_>>>()?;
    let blocks = if blocks.is_empty() { vec![slots.dim()] } else { blocks };
    let files = kv.list("memories");
    let memories = if files.is_empty() {
        vec![Mat::zeros(0, 0); blocks.len()]
    } else {
        files
            .iter()
            .map(|f| match *f {
                "none" => Ok(Mat::zeros(0, 0)),
                f => margattn::io::read_csv_matrix(&kv.path(f), false),
            })
            .collect::<Result<Vec<_>>>()?
    };
    let memory_beta = kv
        .get("memory_beta")
        .map(|v| v.parse::<f64>().map_err(|_| Error::Parse(format!("bad memory_beta '{v}'"))))
        .transpose()?;
    BlockSlotConfig::new(slots, blocks, memories, memory_beta)
}

/// Keys: `observed`, optional `latent`, optional `coupling` (identity),
/// `node = none | quadratic`, `edges` (rows `var, source, target`, optionally
/// with a `weight` column on every row; variables numbered from 0 in order)
/// and `coupling.<var>` overrides.
fn custom_mrf(kv: &KeyValues) -> Result<PairwiseMrf> {
    let observed = kv.matrix("observed")?;
    let latent = kv.matrix_opt("latent")?;
    let d = observed.cols();
    let nodes = NodeSet::new(
        observed.to_rows(),
        latent.map(|m| m.to_rows()).unwrap_or_default(),
    )?;
    let node = match kv.get("node").unwrap_or("quadratic") {
        "none" => NodePotential::None,
        "quadratic" => NodePotential::Quadratic,
        other => return Err(Error::Parse(format!("unknown node potential '{other}'"))),
    };
    let table = kv.matrix("edges")?;
    if !(3..=4).contains(&table.cols()) {
        return Err(Error::Parse("edge rows must be var,source,target[,weight]".into()));
    }
    let as_index = |x: f64, what: &str| -> Result<usize> {
        if x >= 0.0 && x.fract() == 0.0 {
            Ok(x as usize)
        } else {
            Err(Error::Parse(format!("{what} must be a non-negative integer, got {x}")))
        }
    };
    let mut groups: Vec<(Vec<Edge>, Vec<f64>)> = Vec::new();
    for r in 0..table.rows() {
        let row = table.row(r);
        let var = as_index(row[0], "edge variable")?;
        if var == groups.len() {
            groups.push((Vec::new(), Vec::new()));
        } else if var + 1 != groups.len() {
            return Err(Error::Parse(format!(
                "edge row {}: variables must be numbered 0, 1, ... in order",
                r + 1
            )));
        }
        let g = groups.last_mut().unwrap();
        g.0.push(Edge::new(as_index(row[1], "source")?, as_index(row[2], "target")?));
        g.1.push(row.get(3).copied().unwrap_or(1.0));
    }
    let mut prior = StructuralPrior::default();
    for (i, (cands, weights)) in groups.into_iter().enumerate() {
        let mut ev = EdgeVariable::from_weights(cands, &weights)?;
        if let Some(w) = kv.matrix_opt(&format!("coupling.{i}"))? {
            ev = ev.with_coupling(w);
        }
        prior.push(ev);
    }
    let coupling = matrix_or_identity(kv, "coupling", d)?;
    PairwiseMrf::new(nodes, prior, PotentialSpec::new(node, coupling), beta(kv, d)?)
}

fn number_list(kv: &KeyValues, key: &str) -> Result<Option<Vec<f64>>> {
    if kv.get(key).is_none() {
        return Ok(None);
    }
    kv.list(key)
        .iter()
        .map(|s| s.parse::<f64>().map_err(|_| Error::Parse(format!("key '{key}': bad number '{s}'"))))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Keys: `layers` (sizes), `mode = marginalized | baseline`, `beta`, and per
/// layer `l ≥ 1`: `weights.l` (CSV), optional `precisions.l` and
/// `values.l` (comma lists; default 1 and 0) and `senders.l` (per receiver,
/// `;`-separated lists of space-separated sender indices).
pub fn load_network(path: &Path) -> Result<PcnNetwork> {
    let kv = KeyValues::read(path)?;
    let sizes = kv
        .list("layers")
        .iter()
        .map(|s| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad layer size '{s}'"))))
        .collect::<Result<Vec<_>>>()?;
    if sizes.is_empty() {
        return Err(Error::Parse("missing key 'layers'".into()));
    }
    let mode = match kv.get("mode").unwrap_or("marginalized") {
        "marginalized" => EdgePriorMode::Marginalized,
        "baseline" => EdgePriorMode::DenseBaseline,
        other => return Err(Error::Parse(format!("unknown mode '{other}'"))),
    };
    let mut layers = Vec::with_capacity(sizes.len());
    for (l, &size) in sizes.iter().enumerate() {
        let values = number_list(&kv, &format!("values.{l}"))?.unwrap_or_else(|| vec![0.0; size]);
        if values.len() != size {
            return Err(Error::Shape(format!("values.{l} has {} entries for {size} nodes", values.len())));
        }
        if l == 0 {
            layers.push(PcnLayer::input(values));
            continue;
        }
        let w = kv.matrix(&format!("weights.{l}"))?;
        let k = number_list(&kv, &format!("precisions.{l}"))?.unwrap_or_else(|| vec![1.0; size]);
        let mut layer = PcnLayer::hidden(values, k, w);
        if let Some(spec) = kv.get(&format!("senders.{l}")) {
            let lists = spec
                .split(';')
                .map(|group| {
                    group
                        .split_whitespace()
                        .map(|s| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad sender '{s}'"))))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            layer = layer.with_senders(lists);
        }
        layers.push(layer);
    }
    PcnNetwork::new(layers, mode, kv.f64_or("beta", 1.0)?)
}
