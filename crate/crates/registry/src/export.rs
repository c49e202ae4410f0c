//! JSON:API and SensorML documents for a device.

use std::fmt::Write as _;

use chrono::{DateTime, SecondsFormat, Utc};
use serde_json::{json, Value};

use crate::model::{Device, Mount};

pub fn rfc3339(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Serializes with object keys in lexicographic order at every level,
/// independent of how the map was built.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(v, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

pub fn mount_resource(m: &Mount) -> Value {
    json!({
        "type": "mount",
        "id": m.id.to_string(),
        "attributes": {
            "device_id": m.device_id,
            "configuration_label": m.configuration_label,
            "begin": rfc3339(&m.begin),
            "end": m.end.as_ref().map(rfc3339),
            "offset_x": m.offset_x,
            "offset_y": m.offset_y,
            "offset_z": m.offset_z,
            "begin_description": m.begin_description,
        },
        "relationships": {
            "device": {"data": {"type": "device", "id": m.device_id.to_string()}}
        }
    })
}

fn contact_id(device_id: u64, index: usize) -> String {
    format!("{device_id}-{index}")
}

/// The `data` resource object of a device.
pub fn device_resource(device: &Device, mounts: &[Mount]) -> Value {
    json!({
        "type": "device",
        "id": device.id.to_string(),
        "attributes": {
            "pid": device.pid,
            "short_name": device.short_name,
            "manufacturer": device.manufacturer,
            "model": device.model,
            "serial_number": device.serial_number,
            "device_type": device.device_type,
            "description": device.description,
            "properties": device.properties,
            "contacts": device.contacts,
            "archived": device.archived,
            "created_at": rfc3339(&device.created_at),
            "updated_at": rfc3339(&device.updated_at),
        },
        "relationships": {
            "contacts": {"data": (0..device.contacts.len())
                .map(|i| json!({"type": "contact", "id": contact_id(device.id, i)}))
                .collect::<Vec<_>>()},
            "mounts": {"data": mounts.iter()
                .map(|m| json!({"type": "mount", "id": m.id.to_string()}))
                .collect::<Vec<_>>()},
        },
        "links": {"pid": format!("/pid/{}", device.pid)},
    })
}

/// Full document with contacts and mounts as included resources.
pub fn jsonapi_document(device: &Device, mounts: &[Mount]) -> String {
    let mut included: Vec<Value> = device
        .contacts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            json!({
                "type": "contact",
                "id": contact_id(device.id, i),
                "attributes": c,
            })
        })
        .collect();
    included.extend(mounts.iter().map(mount_resource));
    canonical_json(&json!({
        "data": device_resource(device, mounts),
        "included": included,
        "jsonapi": {"version": "1.0"},
    }))
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if (c as u32) < 0x20 && !matches!(c, '\t' | '\n' | '\r') => {
                let _ = write!(out, "&#x{:X};", c as u32);
            }
            c => out.push(c),
        }
    }
    out
}

/// NCName for an output: non-alphanumerics become `_`, a leading digit gets
/// a `q` prefix, and repeats get the position index appended.
fn output_names(device: &Device) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for q in &device.properties {
        let mut n: String = q
            .name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
            .collect();
        if !n.starts_with(|c: char| c.is_ascii_alphabetic() || c == '_') {
            n.insert(0, 'q');
        }
        if names.contains(&n) {
            n = format!("{n}_{}", q.position_index);
        }
        names.push(n);
    }
    names
}

pub const SML_NS: &str = "http://www.opengis.net/sensorml/2.0";
pub const GML_NS: &str = "http://www.opengis.net/gml/3.2";
pub const SWE_NS: &str = "http://www.opengis.net/swe/2.0";

pub fn sensorml_document(device: &Device) -> String {
    let mut x = String::new();
    x.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        x,
        "<sml:PhysicalSystem xmlns:sml=\"{SML_NS}\" xmlns:gml=\"{GML_NS}\" xmlns:swe=\"{SWE_NS}\" gml:id=\"device-{}\">",
        device.id
    );
    let _ = writeln!(x, "  <gml:description>{}</gml:description>", escape(&device.description));
    let _ = writeln!(
        x,
        "  <gml:identifier codeSpace=\"uniqueID\">{}</gml:identifier>",
        escape(&device.pid)
    );
    let _ = writeln!(x, "  <gml:name>{}</gml:name>", escape(&device.short_name));
    x.push_str("  <sml:classification>\n    <sml:ClassifierList>\n      <sml:classifier>\n");
    x.push_str("        <sml:Term definition=\"device_type\">\n");
    x.push_str("          <sml:label>Device Type</sml:label>\n");
    let _ = writeln!(x, "          <sml:value>{}</sml:value>", escape(&device.device_type));
    x.push_str("        </sml:Term>\n      </sml:classifier>\n    </sml:ClassifierList>\n  </sml:classification>\n");
    x.push_str("  <sml:outputs>\n    <sml:OutputList>\n");
    for (q, name) in device.properties.iter().zip(output_names(device)) {
        let _ = writeln!(x, "      <sml:output name=\"{name}\">");
        x.push_str("        <swe:Quantity>\n");
        let _ = writeln!(x, "          <swe:label>{}</swe:label>", escape(&q.name));
        let _ = writeln!(x, "          <swe:uom code=\"{}\"/>", escape(&q.unit));
        x.push_str("        </swe:Quantity>\n      </sml:output>\n");
    }
    x.push_str("    </sml:OutputList>\n  </sml:outputs>\n</sml:PhysicalSystem>\n");
    x
}

/// Fields recoverable from a SensorML export.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorMlSummary {
    pub pid: String,
    pub short_name: String,
    pub device_type: String,
    /// (label, unit code) in document order.
    pub outputs: Vec<(String, String)>,
}

pub fn extract_sensorml(xml: &str) -> Result<SensorMlSummary, String> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| e.to_string())?;
    let root = doc.root_element();
    if !root.has_tag_name((SML_NS, "PhysicalSystem")) {
        return Err("root is not sml:PhysicalSystem".into());
    }
    let text_of = |tag: (&str, &str)| {
        root.descendants()
            .find(|n| n.has_tag_name(tag))
            .map(|n| n.text().unwrap_or("").to_string())
            .ok_or_else(|| format!("missing {}", tag.1))
    };
    let pid = text_of((GML_NS, "identifier"))?;
    let short_name = text_of((GML_NS, "name"))?;
    let device_type = root
        .descendants()
        .filter(|n| n.has_tag_name((SML_NS, "Term")))
        .find(|n| n.attribute("definition") == Some("device_type"))
        .and_then(|t| t.children().find(|c| c.has_tag_name((SML_NS, "value"))))
        .map(|v| v.text().unwrap_or("").to_string())
        .ok_or("missing device_type classifier")?;
    let outputs = root
        .descendants()
        .filter(|n| n.has_tag_name((SML_NS, "output")))
        .map(|o| {
            let label = o
                .descendants()
                .find(|n| n.has_tag_name((SWE_NS, "label")))
                .and_then(|n| n.text())
                .unwrap_or("")
                .to_string();
            let unit = o
                .descendants()
                .find(|n| n.has_tag_name((SWE_NS, "uom")))
                .and_then(|n| n.attribute("code"))
                .unwrap_or("")
                .to_string();
            (label, unit)
        })
        .collect();
    Ok(SensorMlSummary {
        pid,
        short_name,
        device_type,
        outputs,
    })
}
