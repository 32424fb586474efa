//! JSON documents for devices and decompositions.
//!
//! A complex scalar is `[re, im]`, a matrix is an array of rows. A device is
//!
//! ```json
//! {"type": "povm" | "effect" | "channel" | "instrument",
//!  "d_in": 2, "d_out": 1,
//!  "outcomes": [{"label": "0", "choi": [[[1,0],[0,0]],[[0,0],[0,0]]]}]}
//! ```
//!
//! with exactly one of `"kraus"` (list of `d_out × d_in` matrices) or `"choi"`
//! (`d_in·d_out` square, input ⊗ output order) per outcome. For `povm` and
//! `effect` documents `"effect"` is accepted in place of `"choi"` and holds
//! the POVM element itself; the writer always emits `"choi"`, which for these
//! kinds is the transposed element. An `effect` document has one outcome.
//! Parsing checks shapes only; positivity and normalization are left to
//! [`crate::devices::validate`].

use serde::{Deserialize, Serialize};

use crate::decompose::{reconstruct, DiscreteDecomposition};
use crate::devices::{
    choi_distance, choi_from_kraus, Channel, CpBranch, Device, DeviceKind, Effect, Instrument,
    KrausSet, Povm, EFFECT_LABEL,
};
use crate::error::{Error, Result};
use crate::matcore::{ComplexMatrix, C64};

pub type MatrixDoc = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindDoc {
    Effect,
    Povm,
    Channel,
    Instrument,
}

impl From<DeviceKind> for KindDoc {
    fn from(k: DeviceKind) -> Self {
        match k {
            DeviceKind::Effect => KindDoc::Effect,
            DeviceKind::Povm => KindDoc::Povm,
            DeviceKind::Channel => KindDoc::Channel,
            DeviceKind::Instrument => KindDoc::Instrument,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeDoc {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kraus: Option<Vec<MatrixDoc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choi: Option<MatrixDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effect: Option<MatrixDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceDoc {
    #[serde(rename = "type")]
    pub kind: KindDoc,
    pub d_in: usize,
    pub d_out: usize,
    pub outcomes: Vec<OutcomeDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDoc {
    pub weight: f64,
    pub device: DeviceDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaDoc {
    pub strategy: String,
    pub steps: usize,
    pub max_depth: usize,
    pub leaves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionDoc {
    pub components: Vec<ComponentDoc>,
    pub reconstruction_error: f64,
    pub meta: MetaDoc,
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        message: message.into(),
    }
}

pub fn matrix_to_doc(m: &ComplexMatrix) -> MatrixDoc {
    m.to_rows()
        .into_iter()
        .map(|row| row.into_iter().map(|z| [z.re, z.im]).collect())
        .collect()
}

fn matrix_from_doc(doc: &MatrixDoc, rows: usize, cols: usize, path: &str) -> Result<ComplexMatrix> {
    if doc.len() != rows {
        return Err(schema(
            path,
            format!("expected {rows} rows, found {}", doc.len()),
        ));
    }
    let mut out = Vec::with_capacity(rows);
    for (r, row) in doc.iter().enumerate() {
        if row.len() != cols {
            return Err(schema(
                format!("{path}[{r}]"),
                format!("expected {cols} entries, found {}", row.len()),
            ));
        }
        let mut entries = Vec::with_capacity(cols);
        for (c, &[re, im]) in row.iter().enumerate() {
            if !(re.is_finite() && im.is_finite()) {
                return Err(schema(format!("{path}[{r}][{c}]"), "entry is not finite"));
            }
            entries.push(C64::new(re, im));
        }
        out.push(entries);
    }
    ComplexMatrix::from_rows(&out).map_err(|e| schema(path, e.to_string()))
}

fn branch_from_doc(
    doc: &OutcomeDoc,
    kind: KindDoc,
    d_in: usize,
    d_out: usize,
    path: &str,
) -> Result<CpBranch> {
    let n = d_in * d_out;
    let present = [
        doc.kraus.is_some(),
        doc.choi.is_some(),
        doc.effect.is_some(),
    ];
    if present.iter().filter(|&&p| p).count() != 1 {
        return Err(schema(
            path,
            "exactly one of `kraus`, `choi` or `effect` is required",
        ));
    }
    if let Some(ops) = &doc.kraus {
        if ops.is_empty() {
            return Err(schema(format!("{path}.kraus"), "empty Kraus list"));
        }
        let ops = ops
            .iter()
            .enumerate()
            .map(|(k, m)| matrix_from_doc(m, d_out, d_in, &format!("{path}.kraus[{k}]")))
            .collect::<Result<Vec<_>>>()?;
        let set = KrausSet::new(d_in, d_out, ops)
            .map_err(|e| schema(format!("{path}.kraus"), e.to_string()))?;
        return Ok(choi_from_kraus(&set));
    }
    if let Some(m) = &doc.choi {
        let choi = matrix_from_doc(m, n, n, &format!("{path}.choi"))?;
        return CpBranch::new(d_in, d_out, choi)
            .map_err(|e| schema(format!("{path}.choi"), e.to_string()));
    }
    let m = doc.effect.as_ref().expect("one field is present");
    if !matches!(kind, KindDoc::Povm | KindDoc::Effect) {
        return Err(schema(
            format!("{path}.effect"),
            "`effect` is only allowed for povm and effect documents",
        ));
    }
    let e = matrix_from_doc(m, d_in, d_in, &format!("{path}.effect"))?;
    CpBranch::new(d_in, 1, e.transpose())
        .map_err(|err| schema(format!("{path}.effect"), err.to_string()))
}

pub fn device_from_doc(doc: &DeviceDoc) -> Result<Device> {
    let (d_in, d_out) = (doc.d_in, doc.d_out);
    if d_in == 0 || d_out == 0 {
        return Err(schema("", "dimensions must be positive"));
    }
    if matches!(doc.kind, KindDoc::Povm | KindDoc::Effect) && d_out != 1 {
        return Err(schema("d_out", "povm and effect documents have d_out = 1"));
    }
    if doc.outcomes.is_empty() {
        return Err(schema("outcomes", "at least one outcome is required"));
    }
    let mut branches = Vec::with_capacity(doc.outcomes.len());
    for (k, o) in doc.outcomes.iter().enumerate() {
        let path = format!("outcomes[{k}]");
        branches.push((
            o.label.clone(),
            branch_from_doc(o, doc.kind, d_in, d_out, &path)?,
        ));
    }
    match doc.kind {
        KindDoc::Effect => {
            if branches.len() != 1 {
                return Err(schema(
                    "outcomes",
                    "an effect document has exactly one outcome",
                ));
            }
            Ok(Device::Effect(Effect::new(branches[0].1.effect())?))
        }
        KindDoc::Povm => Ok(Device::Povm(
            Povm::new(
                d_in,
                branches.into_iter().map(|(l, b)| (l, b.effect())).collect(),
            )
            .map_err(|e| schema("outcomes", e.to_string()))?,
        )),
        KindDoc::Channel => {
            let inst = Instrument::new(d_in, d_out, branches)
                .map_err(|e| schema("outcomes", e.to_string()))?;
            Ok(Device::Channel(
                Channel::new(inst).map_err(|e| schema("outcomes", e.to_string()))?,
            ))
        }
        KindDoc::Instrument => Ok(Device::Instrument(
            Instrument::new(d_in, d_out, branches)
                .map_err(|e| schema("outcomes", e.to_string()))?,
        )),
    }
}

pub fn device_to_doc(dev: &Device) -> DeviceDoc {
    let outcome = |label: &str, choi: &ComplexMatrix| OutcomeDoc {
        label: label.to_string(),
        kraus: None,
        choi: Some(matrix_to_doc(choi)),
        effect: None,
    };
    let outcomes = match dev {
        Device::Effect(e) => vec![outcome(EFFECT_LABEL, &e.matrix().transpose())],
        Device::Povm(p) => p
            .outcomes()
            .iter()
            .map(|(l, m)| outcome(l, &m.transpose()))
            .collect(),
        Device::Channel(c) => c
            .instrument()
            .branches()
            .iter()
            .map(|(l, b)| outcome(l, b.choi()))
            .collect(),
        Device::Instrument(i) => i
            .branches()
            .iter()
            .map(|(l, b)| outcome(l, b.choi()))
            .collect(),
    };
    DeviceDoc {
        kind: dev.kind().into(),
        d_in: dev.d_in(),
        d_out: dev.d_out(),
        outcomes,
    }
}

fn parse<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema(
            if path == "." { String::new() } else { path },
            e.into_inner().to_string(),
        )
    })
}

pub fn device_from_json(text: &str) -> Result<Device> {
    device_from_doc(&parse::<DeviceDoc>(text)?)
}

pub fn device_to_json(dev: &Device) -> String {
    serde_json::to_string_pretty(&device_to_doc(dev)).expect("device documents serialize")
}

pub fn decomposition_to_doc(
    d: &DiscreteDecomposition,
    original: &Device,
) -> Result<DecompositionDoc> {
    let meta = d.meta();
    Ok(DecompositionDoc {
        components: d
            .components()
            .iter()
            .map(|c| ComponentDoc {
                weight: c.weight,
                device: device_to_doc(&c.device),
            })
            .collect(),
        reconstruction_error: choi_distance(&reconstruct(d)?, original)?,
        meta: MetaDoc {
            strategy: meta.strategy.clone(),
            steps: meta.steps,
            max_depth: meta.max_depth,
            leaves: meta.leaves,
        },
    })
}

pub fn decomposition_from_json(text: &str) -> Result<DiscreteDecomposition> {
    let doc: DecompositionDoc = parse(text)?;
    let mut components = Vec::with_capacity(doc.components.len());
    for (k, c) in doc.components.iter().enumerate() {
        let device = device_from_doc(&c.device).map_err(|e| match e {
            Error::Schema { path, message } => {
                schema(format!("components[{k}].device.{path}"), message)
            }
            other => other,
        })?;
        components.push(crate::decompose::Component {
            weight: c.weight,
            device,
        });
    }
    DiscreteDecomposition::new(
        components,
        crate::decompose::DecompositionMeta {
            strategy: doc.meta.strategy,
            steps: doc.meta.steps,
            max_depth: doc.meta.max_depth,
            leaves: doc.meta.leaves,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::pauli;

    #[test]
    fn kraus_and_choi_forms_agree() {
        let kraus = r#"{"type":"channel","d_in":2,"d_out":2,"outcomes":[
            {"label":"0","kraus":[[[[0,0],[1,0]],[[1,0],[0,0]]]]}]}"#;
        let dev = device_from_json(kraus).unwrap();
        let again = device_from_json(&device_to_json(&dev)).unwrap();
        assert_eq!(choi_distance(&dev, &again).unwrap(), 0.0);
        let Device::Channel(c) = dev else {
            panic!("kind")
        };
        let rho = ComplexMatrix::from_real_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let out = c.branch().apply(&rho).unwrap();
        assert!((&out - &(&(&pauli(1) * &rho) * &pauli(1))).max_abs() < 1e-15);
    }

    #[test]
    fn povm_effect_field() {
        let text = r#"{"type":"povm","d_in":2,"d_out":1,"outcomes":[
            {"label":"up","effect":[[[1,0],[0,0]],[[0,0],[0,0]]]},
            {"label":"down","effect":[[[0,0],[0,0]],[[0,0],[1,0]]]}]}"#;
        let Device::Povm(p) = device_from_json(text).unwrap() else {
            panic!("kind")
        };
        assert_eq!(p.outcomes()[0].0, "up");
        assert_eq!(p.outcomes()[0].1[(0, 0)], C64::new(1.0, 0.0));
    }

    #[test]
    fn schema_errors_carry_paths() {
        let missing = r#"{"type":"povm","d_in":2,"d_out":1,"outcomes":[{"label":"a"}]}"#;
        assert!(
            matches!(device_from_json(missing), Err(Error::Schema { path, .. }) if path == "outcomes[0]")
        );
        let bad_row = r#"{"type":"povm","d_in":2,"d_out":1,"outcomes":[{"label":"a","choi":[[[1,0]],[[0,0],[1,0]]]}]}"#;
        assert!(
            matches!(device_from_json(bad_row), Err(Error::Schema { path, .. }) if path == "outcomes[0].choi[0]")
        );
        let bad_type = r#"{"type":"gadget","d_in":2,"d_out":1,"outcomes":[]}"#;
        assert!(
            matches!(device_from_json(bad_type), Err(Error::Schema { path, .. }) if path == "type")
        );
        let bad_entry =
            r#"{"type":"povm","d_in":1,"d_out":1,"outcomes":[{"label":"a","choi":[[[1,"x"]]]}]}"#;
        assert!(
            matches!(device_from_json(bad_entry), Err(Error::Schema { path, .. }) if path.starts_with("outcomes[0].choi[0][0]"))
        );
        assert!(device_from_json("{").is_err());
    }
}
