//! JSON input formats and report serialization.
//!
//! Numbers may be given as JSON numbers or as strings such as `"2/7"`; in
//! rational mode decimals are read exactly.

use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use crate::markets::{AvarLevels, Region, SolvencyProcess};
use crate::polyhedra::LiftedSet;
use crate::riskcore::{AcceptanceSystem, DualPair};
use crate::scalar::{Ext, Num, Scalar};
use crate::timeconsistency::{MovingScalarization, MptcReport};
use crate::tree::{AdaptedVector, MeasureVector, RawNode, RawTree, ScenarioTree, TerminalClaim};

/// Input error naming the source and the offending field.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{source_name}: {field}: {message}")]
pub struct IoError {
    pub source_name: String,
    pub field: String,
    pub message: String,
}

fn err(source: &str, field: impl Into<String>, message: impl Into<String>) -> IoError {
    IoError { source_name: source.to_string(), field: field.into(), message: message.into() }
}

pub fn parse_json(text: &str, source: &str) -> Result<Value, IoError> {
    serde_json::from_str(text).map_err(|e| err(source, "<document>", format!("invalid JSON: {e}")))
}

fn get<'a>(v: &'a Value, key: &str, field: &str, source: &str) -> Result<&'a Value, IoError> {
    v.get(key).ok_or_else(|| err(source, format!("{field}.{key}").trim_start_matches('.').to_string(), "missing"))
}

fn as_array<'a>(v: &'a Value, field: &str, source: &str) -> Result<&'a Vec<Value>, IoError> {
    v.as_array().ok_or_else(|| err(source, field, "expected an array"))
}

fn as_int(v: &Value, field: &str, source: &str) -> Result<i64, IoError> {
    v.as_i64().ok_or_else(|| err(source, field, "expected an integer"))
}

fn as_usize(v: &Value, field: &str, source: &str) -> Result<usize, IoError> {
    v.as_u64().map(|x| x as usize).ok_or_else(|| err(source, field, "expected a nonnegative integer"))
}

pub fn as_scalar<S: Scalar>(v: &Value, field: &str, source: &str) -> Result<S, IoError> {
    let text = match v {
        Value::Number(n) => n.to_string(),
        Value::String(s) => s.clone(),
        _ => return Err(err(source, field, "expected a number")),
    };
    S::parse(&text).ok_or_else(|| err(source, field, format!("cannot read {text:?} as a number")))
}

fn as_vector<S: Scalar>(v: &Value, len: usize, field: &str, source: &str) -> Result<Vec<S>, IoError> {
    let items = as_array(v, field, source)?;
    if items.len() != len {
        return Err(err(source, field, format!("expected {len} entries, got {}", items.len())));
    }
    items.iter().enumerate().map(|(i, x)| as_scalar(x, &format!("{field}[{i}]"), source)).collect()
}

fn node_index<S: Scalar>(tree: &ScenarioTree<S>, v: &Value, field: &str, source: &str) -> Result<usize, IoError> {
    let id = as_int(v, field, source)?;
    tree.index_of(id).ok_or_else(|| err(source, field, format!("unknown node id {id}")))
}

fn leaf_position<S: Scalar>(tree: &ScenarioTree<S>, v: &Value, field: &str, source: &str) -> Result<usize, IoError> {
    let id = as_int(v, field, source)?;
    let n = tree.index_of(id).ok_or_else(|| err(source, field, format!("unknown leaf id {id}")))?;
    if tree.time(n) != tree.horizon() {
        return Err(err(source, field, format!("node {id} is not a leaf")));
    }
    Ok(tree.node(n).layer_pos)
}

pub fn parse_tree<S: Scalar>(text: &str, source: &str) -> Result<ScenarioTree<S>, IoError> {
    let v = parse_json(text, source)?;
    let d = as_usize(get(&v, "d", "", source)?, "d", source)?;
    let m = as_usize(get(&v, "m", "", source)?, "m", source)?;
    let horizon = as_usize(get(&v, "T", "", source)?, "T", source)?;
    let nodes = as_array(get(&v, "nodes", "", source)?, "nodes", source)?
        .iter()
        .enumerate()
        .map(|(k, node)| {
            let field = format!("nodes[{k}]");
            let parent = match get(node, "parent", &field, source)? {
                Value::Null => None,
                p => Some(as_int(p, &format!("{field}.parent"), source)?),
            };
            Ok(RawNode {
                id: as_int(get(node, "id", &field, source)?, &format!("{field}.id"), source)?,
                time: as_usize(get(node, "time", &field, source)?, &format!("{field}.time"), source)?,
                parent,
                prob: as_scalar(get(node, "prob", &field, source)?, &format!("{field}.prob"), source)?,
            })
        })
        .collect::<Result<Vec<_>, IoError>>()?;
    ScenarioTree::from_raw(RawTree { d, m, horizon, nodes }).map_err(|e| err(source, "nodes", e.to_string()))
}

pub fn tree_to_json<S: Scalar>(tree: &ScenarioTree<S>) -> Value {
    let raw = tree.to_raw();
    json!({
        "d": raw.d,
        "m": raw.m,
        "T": raw.horizon,
        "nodes": raw.nodes.iter().map(|n| json!({
            "id": n.id,
            "time": n.time,
            "parent": n.parent,
            "prob": num(&n.prob),
        })).collect::<Vec<_>>(),
    })
}

/// Reads `{"values":[{"leaf":id,"v":[…]}]}`; every leaf must appear once.
pub fn parse_claim<S: Scalar>(tree: &ScenarioTree<S>, text: &str, source: &str) -> Result<TerminalClaim<S>, IoError> {
    let v = parse_json(text, source)?;
    let mut values: Vec<Option<Vec<S>>> = vec![None; tree.num_leaves()];
    for (k, entry) in as_array(get(&v, "values", "", source)?, "values", source)?.iter().enumerate() {
        let field = format!("values[{k}]");
        let pos = leaf_position(tree, get(entry, "leaf", &field, source)?, &format!("{field}.leaf"), source)?;
        if values[pos].is_some() {
            return Err(err(source, format!("{field}.leaf"), format!("leaf {} listed twice", tree.id(tree.leaves()[pos]))));
        }
        values[pos] = Some(as_vector(get(entry, "v", &field, source)?, tree.d(), &format!("{field}.v"), source)?);
    }
    let missing: Vec<i64> = values.iter().enumerate().filter(|(_, v)| v.is_none()).map(|(k, _)| tree.id(tree.leaves()[k])).collect();
    if !missing.is_empty() {
        return Err(err(source, "values", format!("no value for leaves {missing:?}")));
    }
    Ok(TerminalClaim { values: values.into_iter().map(Option::unwrap).collect() })
}

pub fn claim_to_json<S: Scalar>(tree: &ScenarioTree<S>, x: &TerminalClaim<S>) -> Value {
    json!({
        "values": x.values.iter().enumerate().map(|(k, v)| json!({
            "leaf": tree.id(tree.leaves()[k]),
            "v": nums(v),
        })).collect::<Vec<_>>(),
    })
}

/// Reads `{"components":[{"asset":i,"masses":[{"leaf":id,"q":x}]}]}` with
/// 1-based asset indices; unlisted leaves carry zero mass.
pub fn parse_measure<S: Scalar>(tree: &ScenarioTree<S>, text: &str, source: &str) -> Result<MeasureVector<S>, IoError> {
    let v = parse_json(text, source)?;
    let d = tree.d();
    let mut masses: Vec<Option<Vec<S>>> = vec![None; d];
    for (k, comp) in as_array(get(&v, "components", "", source)?, "components", source)?.iter().enumerate() {
        let field = format!("components[{k}]");
        let asset = as_usize(get(comp, "asset", &field, source)?, &format!("{field}.asset"), source)?;
        if asset == 0 || asset > d {
            return Err(err(source, format!("{field}.asset"), format!("asset {asset} outside 1..={d}")));
        }
        let mut row = vec![S::zero(); tree.num_leaves()];
        for (j, entry) in as_array(get(comp, "masses", &field, source)?, &format!("{field}.masses"), source)?.iter().enumerate() {
            let f = format!("{field}.masses[{j}]");
            let pos = leaf_position(tree, get(entry, "leaf", &f, source)?, &format!("{f}.leaf"), source)?;
            row[pos] = as_scalar(get(entry, "q", &f, source)?, &format!("{f}.q"), source)?;
        }
        if masses[asset - 1].replace(row).is_some() {
            return Err(err(source, format!("{field}.asset"), format!("asset {asset} listed twice")));
        }
    }
    let missing: Vec<usize> = masses.iter().enumerate().filter(|(_, m)| m.is_none()).map(|(i, _)| i + 1).collect();
    if !missing.is_empty() {
        return Err(err(source, "components", format!("missing assets {missing:?}")));
    }
    let q = MeasureVector { masses: masses.into_iter().map(Option::unwrap).collect() };
    q.validate(tree).map_err(|e| err(source, "components", e.to_string()))?;
    Ok(q)
}

pub fn measure_to_json<S: Scalar>(tree: &ScenarioTree<S>, q: &MeasureVector<S>) -> Value {
    json!({
        "components": q.masses.iter().enumerate().map(|(i, row)| json!({
            "asset": i + 1,
            "masses": row.iter().enumerate().map(|(k, x)| json!({"leaf": tree.id(tree.leaves()[k]), "q": num(x)})).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    })
}

fn parse_vectors<S: Scalar>(v: &Value, d: usize, field: &str, source: &str) -> Result<Vec<Vec<S>>, IoError> {
    as_array(v, field, source)?.iter().enumerate().map(|(k, g)| as_vector(g, d, &format!("{field}[{k}]"), source)).collect()
}

/// Reads a list of `{"node":id,"cone":[[…]]}` or
/// `{"node":id,"region":{"generators":[[…]],"points":[[…]]}}`, one per node.
pub fn parse_solvency<S: Scalar>(tree: &ScenarioTree<S>, text: &str, source: &str) -> Result<SolvencyProcess<S>, IoError> {
    let v = parse_json(text, source)?;
    let d = tree.d();
    let mut regions: Vec<Option<Region<S>>> = vec![None; tree.len()];
    for (k, entry) in as_array(&v, "<document>", source)?.iter().enumerate() {
        let field = format!("[{k}]");
        let n = node_index(tree, get(entry, "node", &field, source)?, &format!("{field}.node"), source)?;
        let region = match (entry.get("cone"), entry.get("region")) {
            (Some(c), None) => Region::Cone { generators: parse_vectors(c, d, &format!("{field}.cone"), source)? },
            (None, Some(r)) => Region::Convex {
                generators: parse_vectors(get(r, "generators", &format!("{field}.region"), source)?, d, &format!("{field}.region.generators"), source)?,
                points: parse_vectors(get(r, "points", &format!("{field}.region"), source)?, d, &format!("{field}.region.points"), source)?,
            },
            _ => return Err(err(source, field, "expected exactly one of \"cone\" or \"region\"")),
        };
        if regions[n].replace(region).is_some() {
            return Err(err(source, format!("{field}.node"), format!("node {} listed twice", tree.id(n))));
        }
    }
    let missing: Vec<i64> = regions.iter().enumerate().filter(|(_, r)| r.is_none()).map(|(n, _)| tree.id(n)).collect();
    if !missing.is_empty() {
        return Err(err(source, "<document>", format!("no region for nodes {missing:?}")));
    }
    let solvency = SolvencyProcess { regions: regions.into_iter().map(Option::unwrap).collect() };
    solvency.validate(tree).map_err(|e| err(source, "<document>", e.to_string()))?;
    Ok(solvency)
}

pub fn solvency_to_json<S: Scalar>(tree: &ScenarioTree<S>, solvency: &SolvencyProcess<S>) -> Value {
    Value::Array(
        solvency
            .regions
            .iter()
            .enumerate()
            .map(|(n, r)| match r {
                Region::Cone { generators } => json!({"node": tree.id(n), "cone": generators.iter().map(|g| nums(g)).collect::<Vec<_>>()}),
                Region::Convex { generators, points } => json!({
                    "node": tree.id(n),
                    "region": {
                        "generators": generators.iter().map(|g| nums(g)).collect::<Vec<_>>(),
                        "points": points.iter().map(|g| nums(g)).collect::<Vec<_>>(),
                    },
                }),
            })
            .collect(),
    )
}

/// Reads `{"epsilon":x,"levels":[{"time":t,"lambda":[…]}]}`. An entry with
/// a `"node"` id instead of a `"time"` overrides the level at that node.
pub fn parse_avar<S: Scalar>(tree: &ScenarioTree<S>, text: &str, source: &str) -> Result<AvarLevels<S>, IoError> {
    let v = parse_json(text, source)?;
    let epsilon = match v.get("epsilon") {
        Some(e) => as_scalar(e, "epsilon", source)?,
        None => AvarLevels::<S>::default_epsilon(),
    };
    let mut lambda: Vec<Option<Vec<S>>> = vec![None; tree.len()];
    let mut overrides = Vec::new();
    for (k, entry) in as_array(get(&v, "levels", "", source)?, "levels", source)?.iter().enumerate() {
        let field = format!("levels[{k}]");
        let l: Vec<S> = as_vector(get(entry, "lambda", &field, source)?, tree.d(), &format!("{field}.lambda"), source)?;
        if let Some(node) = entry.get("node") {
            overrides.push((node_index(tree, node, &format!("{field}.node"), source)?, l));
            continue;
        }
        let t = as_usize(get(entry, "time", &field, source)?, &format!("{field}.time"), source)?;
        if t >= tree.horizon() {
            return Err(err(source, format!("{field}.time"), format!("time {t} has no step (horizon {})", tree.horizon())));
        }
        for &n in tree.nodes_at(t) {
            lambda[n] = Some(l.clone());
        }
    }
    for (n, l) in overrides {
        if tree.time(n) == tree.horizon() {
            return Err(err(source, "levels", format!("node {} is a leaf", tree.id(n))));
        }
        lambda[n] = Some(l);
    }
    let levels = AvarLevels { epsilon, lambda };
    levels.validate(tree).map_err(|e| err(source, "levels", e.to_string()))?;
    Ok(levels)
}

/// Reads a list of `{"node":id,"generators":[g, …]}` with one entry per
/// node. A generator is a `d`-vector (held on every leaf of the subtree) or
/// a list of `{"leaf":id,"v":[…]}` (other leaves zero). The orthant of the
/// subtree is added unless `"orthant": false`. Stepped sets are `A_t ∩ M_s`.
pub fn parse_cone_system<S: Scalar>(tree: &ScenarioTree<S>, text: &str, source: &str) -> Result<AcceptanceSystem<S>, IoError> {
    let v = parse_json(text, source)?;
    let d = tree.d();
    let mut sets: Vec<Option<LiftedSet<S>>> = vec![None; tree.len()];
    for (k, entry) in as_array(&v, "<document>", source)?.iter().enumerate() {
        let field = format!("[{k}]");
        let n = node_index(tree, get(entry, "node", &field, source)?, &format!("{field}.node"), source)?;
        let range = tree.leaf_range(n);
        let mut gens = Vec::new();
        for (j, g) in as_array(get(entry, "generators", &field, source)?, &format!("{field}.generators"), source)?.iter().enumerate() {
            let f = format!("{field}.generators[{j}]");
            let items = as_array(g, &f, source)?;
            if items.iter().all(|x| x.is_object()) {
                let mut claim = vec![vec![S::zero(); d]; range.len()];
                for (i, item) in items.iter().enumerate() {
                    let fi = format!("{f}[{i}]");
                    let pos = leaf_position(tree, get(item, "leaf", &fi, source)?, &format!("{fi}.leaf"), source)?;
                    if !range.contains(&pos) {
                        return Err(err(source, format!("{fi}.leaf"), format!("leaf outside the subtree of node {}", tree.id(n))));
                    }
                    claim[pos - range.start] = as_vector(get(item, "v", &fi, source)?, d, &format!("{fi}.v"), source)?;
                }
                gens.push(claim);
            } else {
                let vec: Vec<S> = as_vector(g, d, &f, source)?;
                gens.push(vec![vec; range.len()]);
            }
        }
        let orthant = entry.get("orthant").map(|o| o.as_bool().unwrap_or(true)).unwrap_or(true);
        let set = LiftedSet::cone(tree, n, &gens, orthant).map_err(|e| err(source, field.clone(), e.to_string()))?;
        if sets[n].replace(set).is_some() {
            return Err(err(source, format!("{field}.node"), format!("node {} listed twice", tree.id(n))));
        }
    }
    let missing: Vec<i64> = sets.iter().enumerate().filter(|(_, s)| s.is_none()).map(|(n, _)| tree.id(n)).collect();
    if !missing.is_empty() {
        return Err(err(source, "<document>", format!("no acceptance set for nodes {missing:?}")));
    }
    let sets: Vec<LiftedSet<S>> = sets.into_iter().map(Option::unwrap).collect();
    let mut stepped = BTreeMap::new();
    for n in 0..tree.len() {
        for s in tree.time(n) + 1..=tree.horizon() {
            stepped.insert((n, s), sets[n].restrict_measurable(tree, s));
        }
    }
    AcceptanceSystem::new(tree.clone(), sets, stepped, "supplied cones").map_err(|e| err(source, "<document>", e.to_string()))
}

/// Inline weights: a comma-separated `d`-vector applied at every time-`t`
/// node, canonicalized onto the eligible space.
pub fn parse_inline_weight<S: Scalar>(tree: &ScenarioTree<S>, t: usize, text: &str, source: &str) -> Result<AdaptedVector<S>, IoError> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != tree.d() {
        return Err(err(source, "w", format!("expected {} comma-separated entries, got {}", tree.d(), parts.len())));
    }
    let v: Vec<S> = parts
        .iter()
        .enumerate()
        .map(|(i, p)| S::parse(p).ok_or_else(|| err(source, format!("w[{i}]"), format!("cannot read {p:?} as a number"))))
        .collect::<Result<_, _>>()?;
    let m = tree.m();
    let canon: Vec<S> = v.iter().enumerate().map(|(i, x)| if i < m { x.clone() } else { S::zero() }).collect();
    Ok(AdaptedVector::constant(tree, t, &canon))
}

/// Weights per node: `{"time":t,"weights":[{"node":id,"w":[…]}]}`; every
/// time-`t` node must be listed.
pub fn parse_weights<S: Scalar>(tree: &ScenarioTree<S>, text: &str, source: &str) -> Result<AdaptedVector<S>, IoError> {
    let v = parse_json(text, source)?;
    let t = as_usize(get(&v, "time", "", source)?, "time", source)?;
    if t > tree.horizon() {
        return Err(err(source, "time", format!("time {t} beyond horizon {}", tree.horizon())));
    }
    let mut values: Vec<Option<Vec<S>>> = vec![None; tree.nodes_at(t).len()];
    for (k, entry) in as_array(get(&v, "weights", "", source)?, "weights", source)?.iter().enumerate() {
        let field = format!("weights[{k}]");
        let n = node_index(tree, get(entry, "node", &field, source)?, &format!("{field}.node"), source)?;
        if tree.time(n) != t {
            return Err(err(source, format!("{field}.node"), format!("node {} is not at time {t}", tree.id(n))));
        }
        values[tree.node(n).layer_pos] = Some(as_vector(get(entry, "w", &field, source)?, tree.d(), &format!("{field}.w"), source)?);
    }
    let missing: Vec<i64> = values.iter().enumerate().filter(|(_, v)| v.is_none()).map(|(k, _)| tree.id(tree.nodes_at(t)[k])).collect();
    if !missing.is_empty() {
        return Err(err(source, "weights", format!("no weight for nodes {missing:?}")));
    }
    Ok(AdaptedVector { time: t, values: values.into_iter().map(Option::unwrap).collect() })
}

pub fn num<S: Scalar>(x: &S) -> Value {
    serde_json::to_value(Num(x.clone())).expect("scalar serializes")
}

pub fn nums<S: Scalar>(v: &[S]) -> Value {
    Value::Array(v.iter().map(num).collect())
}

pub fn ext<S: Scalar>(x: &Ext<S>) -> Value {
    serde_json::to_value(x).expect("extended value serializes")
}

pub fn weights_to_json<S: Scalar>(tree: &ScenarioTree<S>, w: &AdaptedVector<S>) -> Value {
    json!({
        "time": w.time,
        "weights": w.values.iter().enumerate().map(|(k, v)| json!({
            "node": tree.id(tree.nodes_at(w.time)[k]),
            "w": nums(v),
        })).collect::<Vec<_>>(),
    })
}

pub fn pair_to_json<S: Scalar>(tree: &ScenarioTree<S>, pair: &DualPair<S>) -> Value {
    json!({
        "q": measure_to_json(tree, &pair.q),
        "m_perp": weights_to_json(tree, &pair.m_perp),
    })
}

/// Values per node at time `t`.
pub fn node_values<S: Scalar>(tree: &ScenarioTree<S>, t: usize, values: &[Ext<S>]) -> Value {
    Value::Array(
        values
            .iter()
            .enumerate()
            .map(|(k, v)| json!({"id": tree.id(tree.nodes_at(t)[k]), "value": ext(v)}))
            .collect(),
    )
}

pub fn mptc_report_to_json<S: Scalar>(tree: &ScenarioTree<S>, report: &MptcReport<S>) -> Value {
    let nodes: Vec<Value> = report
        .nodes
        .iter()
        .map(|r| {
            let mut obj = Map::new();
            obj.insert("id".into(), json!(tree.id(r.node)));
            obj.insert("mode".into(), json!(r.mode));
            obj.insert("verdict".into(), json!(r.verdict));
            obj.insert("probes".into(), json!(r.probes));
            if let Some(w) = &r.witness {
                let leaves = &tree.leaves()[tree.leaf_range(r.node)];
                let claim = |c: &Vec<Vec<S>>| {
                    c.iter().enumerate().map(|(l, v)| json!({"leaf": tree.id(leaves[l]), "v": nums(v)})).collect::<Vec<_>>()
                };
                obj.insert(
                    "witness".into(),
                    json!({
                        "kind": w.kind,
                        "claim": w.claim.as_ref().map(claim),
                        "direction": w.direction.as_ref().map(claim),
                        "left_support": w.left_support.as_ref().map(ext),
                        "right_support": w.right_support.as_ref().map(ext),
                    }),
                );
            }
            Value::Object(obj)
        })
        .collect();
    json!({
        "t": report.t,
        "s": report.s,
        "requested_mode": report.requested,
        "mode": report.mode,
        "verdict": report.verdict,
        "battery_size": report.battery_size,
        "note": report.note(),
        "nodes": nodes,
    })
}

pub fn moving_to_json<S: Scalar>(tree: &ScenarioTree<S>, mv: &MovingScalarization<S>) -> Value {
    let steps: Vec<Value> = (0..mv.weights.len())
        .map(|t| {
            let mut obj = Map::new();
            obj.insert("time".into(), json!(t));
            obj.insert("weights".into(), weights_to_json(tree, &mv.weights[t])["weights"].clone());
            obj.insert("rho".into(), node_values(tree, t, &mv.rho[t]));
            obj.insert("chain".into(), node_values(tree, t, &mv.chain[t]));
            if t < mv.pairs.len() {
                obj.insert("pair".into(), pair_to_json(tree, &mv.pairs[t]));
                obj.insert("step_value".into(), node_values(tree, t, &mv.step_values[t]));
            }
            Value::Object(obj)
        })
        .collect();
    json!({
        "steps": steps,
        "transport_consistent": mv.transport_consistent,
        "telescopes": mv.telescopes(),
    })
}
