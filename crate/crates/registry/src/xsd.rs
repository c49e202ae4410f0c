//! A validator for the small XML Schema subset used by the shipped SensorML
//! profile: named complex types with a single `xs:sequence`, attributes,
//! `xs:simpleContent` extensions and `minLength` string restrictions.
//! Names are compared by local name.

use std::collections::HashMap;

use roxmltree::{Document, Node};
use thiserror::Error;

const XS: &str = "http://www.w3.org/2001/XMLSchema";

pub const SENSORML_MIN_XSD: &str = include_str!("../schema/sensorml-min.xsd");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("schema unusable: {0}")]
    Schema(String),
    #[error("document is not well-formed: {0}")]
    NotWellFormed(String),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

#[derive(Debug)]
struct Particle {
    name: String,
    type_ref: String,
    min: usize,
    max: Option<usize>,
}

#[derive(Debug)]
struct Attribute {
    name: String,
    type_ref: String,
    required: bool,
}

#[derive(Debug, Default)]
struct ComplexType {
    sequence: Vec<Particle>,
    attributes: Vec<Attribute>,
    simple_base: Option<String>,
}

#[derive(Debug)]
pub struct Schema {
    roots: HashMap<String, String>,
    complex: HashMap<String, ComplexType>,
    /// Named simple types: minimum length.
    simple: HashMap<String, usize>,
}

fn xs_children<'a, 'i>(n: Node<'a, 'i>, local: &'static str) -> impl Iterator<Item = Node<'a, 'i>> {
    n.children().filter(move |c| c.has_tag_name((XS, local)))
}

fn schema_err(msg: impl Into<String>) -> SchemaError {
    SchemaError::Schema(msg.into())
}

fn required_attr<'a>(n: Node<'a, '_>, name: &str) -> Result<&'a str, SchemaError> {
    n.attribute(name)
        .ok_or_else(|| schema_err(format!("<{}> without {name}", n.tag_name().name())))
}

fn parse_attributes(n: Node) -> Result<Vec<Attribute>, SchemaError> {
    xs_children(n, "attribute")
        .map(|a| {
            Ok(Attribute {
                name: required_attr(a, "name")?.to_string(),
                type_ref: a.attribute("type").unwrap_or("xs:string").to_string(),
                required: a.attribute("use") == Some("required"),
            })
        })
        .collect()
}

fn parse_occurs(v: Option<&str>, default: usize) -> Result<Option<usize>, SchemaError> {
    match v {
        None => Ok(Some(default)),
        Some("unbounded") => Ok(None),
        Some(s) => s
            .parse()
            .map(Some)
            .map_err(|_| schema_err(format!("bad occurrence bound {s:?}"))),
    }
}

impl Schema {
    pub fn sensorml_min() -> Self {
        Self::parse(SENSORML_MIN_XSD).expect("shipped schema is valid")
    }

    pub fn parse(xsd: &str) -> Result<Self, SchemaError> {
        let doc = Document::parse(xsd).map_err(|e| schema_err(e.to_string()))?;
        let root = doc.root_element();
        if !root.has_tag_name((XS, "schema")) {
            return Err(schema_err("root is not xs:schema"));
        }
        let mut schema = Schema {
            roots: HashMap::new(),
            complex: HashMap::new(),
            simple: HashMap::new(),
        };
        for e in xs_children(root, "element") {
            schema.roots.insert(
                required_attr(e, "name")?.to_string(),
                required_attr(e, "type")?.to_string(),
            );
        }
        for st in xs_children(root, "simpleType") {
            let name = required_attr(st, "name")?;
            let restriction = xs_children(st, "restriction")
                .next()
                .ok_or_else(|| schema_err("simpleType without restriction"))?;
            let min_len = xs_children(restriction, "minLength")
                .next()
                .map(|m| required_attr(m, "value")?.parse().map_err(|_| schema_err("bad minLength")))
                .transpose()?
                .unwrap_or(0);
            schema.simple.insert(name.to_string(), min_len);
        }
        for ct in xs_children(root, "complexType") {
            let name = required_attr(ct, "name")?;
            let mut ty = ComplexType {
                attributes: parse_attributes(ct)?,
                ..ComplexType::default()
            };
            if let Some(seq) = xs_children(ct, "sequence").next() {
                for e in xs_children(seq, "element") {
                    let min = parse_occurs(e.attribute("minOccurs"), 1)?
                        .ok_or_else(|| schema_err("minOccurs cannot be unbounded"))?;
                    ty.sequence.push(Particle {
                        name: required_attr(e, "name")?.to_string(),
                        type_ref: required_attr(e, "type")?.to_string(),
                        min,
                        max: parse_occurs(e.attribute("maxOccurs"), 1)?,
                    });
                }
            }
            if let Some(sc) = xs_children(ct, "simpleContent").next() {
                let ext = xs_children(sc, "extension")
                    .next()
                    .ok_or_else(|| schema_err("simpleContent without extension"))?;
                ty.simple_base = Some(required_attr(ext, "base")?.to_string());
                ty.attributes.extend(parse_attributes(ext)?);
            }
            schema.complex.insert(name.to_string(), ty);
        }
        for ty in schema.complex.values() {
            let refs = ty
                .sequence
                .iter()
                .map(|p| &p.type_ref)
                .chain(ty.attributes.iter().map(|a| &a.type_ref))
                .chain(ty.simple_base.iter());
            for r in refs {
                if !schema.is_known_type(r) {
                    return Err(schema_err(format!("unknown type {r}")));
                }
            }
        }
        Ok(schema)
    }

    fn is_known_type(&self, t: &str) -> bool {
        matches!(t, "xs:string" | "xs:ID" | "xs:NCName")
            || self.simple.contains_key(t)
            || self.complex.contains_key(t)
    }

    pub fn validate(&self, xml: &str) -> Result<(), SchemaError> {
        let doc = Document::parse(xml).map_err(|e| SchemaError::NotWellFormed(e.to_string()))?;
        let root = doc.root_element();
        let name = root.tag_name().name();
        let ty = self.roots.get(name).ok_or_else(|| SchemaError::Invalid {
            path: format!("/{name}"),
            message: "not a declared root element".into(),
        })?;
        self.check_element(root, ty, &format!("/{name}"))
    }

    fn check_simple(&self, t: &str, text: &str, path: &str) -> Result<(), SchemaError> {
        let ok = match t {
            "xs:string" => true,
            "xs:ID" | "xs:NCName" => is_ncname(text),
            named => text.chars().count() >= self.simple[named],
        };
        if ok {
            Ok(())
        } else {
            Err(SchemaError::Invalid {
                path: path.to_string(),
                message: format!("value {text:?} is not a valid {t}"),
            })
        }
    }

    fn check_element(&self, el: Node, type_ref: &str, path: &str) -> Result<(), SchemaError> {
        let invalid = |message: String| SchemaError::Invalid {
            path: path.to_string(),
            message,
        };
        let children: Vec<Node> = el.children().filter(|c| c.is_element()).collect();
        let text: String = el
            .children()
            .filter(|c| c.is_text())
            .filter_map(|c| c.text())
            .collect();

        let Some(ty) = self.complex.get(type_ref) else {
            if !children.is_empty() || el.attributes().len() > 0 {
                return Err(invalid("simple-typed element has children or attributes".into()));
            }
            return self.check_simple(type_ref, &text, path);
        };

        for a in el.attributes() {
            let decl = ty
                .attributes
                .iter()
                .find(|d| d.name == a.name())
                .ok_or_else(|| invalid(format!("undeclared attribute {}", a.name())))?;
            self.check_simple(&decl.type_ref, a.value(), &format!("{path}/@{}", a.name()))?;
        }
        for d in ty.attributes.iter().filter(|d| d.required) {
            if !el.attributes().any(|a| a.name() == d.name) {
                return Err(invalid(format!("missing required attribute {}", d.name)));
            }
        }

        if let Some(base) = &ty.simple_base {
            if !children.is_empty() {
                return Err(invalid("element children in simple content".into()));
            }
            return self.check_simple(base, &text, path);
        }
        if !text.trim().is_empty() {
            return Err(invalid("text in element-only content".into()));
        }
        let mut rest = children.as_slice();
        for p in &ty.sequence {
            let n = rest
                .iter()
                .take_while(|c| c.tag_name().name() == p.name)
                .count();
            if n < p.min {
                return Err(invalid(format!("expected {} <{}>, found {n}", p.min, p.name)));
            }
            if p.max.is_some_and(|m| n > m) {
                return Err(invalid(format!("too many <{}>", p.name)));
            }
            for (i, c) in rest[..n].iter().enumerate() {
                self.check_element(*c, &p.type_ref, &format!("{path}/{}[{}]", p.name, i + 1))?;
            }
            rest = &rest[n..];
        }
        if let Some(extra) = rest.first() {
            return Err(invalid(format!("unexpected <{}>", extra.tag_name().name())));
        }
        Ok(())
    }
}

fn is_ncname(s: &str) -> bool {
    let mut chars = s.chars();
    chars
        .next()
        .is_some_and(|c| c.is_alphabetic() || c == '_')
        && chars.all(|c| c.is_alphanumeric() || matches!(c, '_' | '-' | '.'))
}
