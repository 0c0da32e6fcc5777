use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LABEL_SLOT: &str = "label";

/// Annotations attached to one recording. Only the vessel type is mandatory.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub vessel_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wind: Option<String>,
    /// Any other annotation, addressable from templates by key.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

impl AnnotationRecord {
    pub fn new(vessel_type: impl Into<String>) -> Self {
        Self {
            vessel_type: vessel_type.into(),
            ..Self::default()
        }
    }

    pub fn with(mut self, field: &str, value: impl Into<String>) -> Self {
        let value = Some(value.into());
        match field {
            "distance" => self.distance = value,
            "depth" => self.depth = value,
            "location" => self.location = value,
            "wind" => self.wind = value,
            other => {
                self.extra
                    .insert(other.to_string(), value.unwrap_or_default());
            }
        }
        self
    }

    pub fn without(mut self, field: &str) -> Self {
        match field {
            "distance" => self.distance = None,
            "depth" => self.depth = None,
            "location" => self.location = None,
            "wind" => self.wind = None,
            other => {
                self.extra.remove(other);
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.vessel_type.trim().is_empty() {
            return Err(Error::Contract("annotation without a vessel type".into()));
        }
        let empty = [&self.distance, &self.depth, &self.location, &self.wind]
            .into_iter()
            .flatten()
            .chain(self.extra.values())
            .any(|v| v.trim().is_empty());
        if empty {
            return Err(Error::Contract(format!(
                "annotation for `{}` has an empty optional field; omit it instead",
                self.vessel_type
            )));
        }
        Ok(())
    }

    /// Value for a template slot. `label` resolves to the vessel type.
    pub fn field(&self, slot: &str) -> Option<&str> {
        match slot {
            LABEL_SLOT | "vessel_type" => Some(&self.vessel_type),
            "distance" => self.distance.as_deref(),
            "depth" => self.depth.as_deref(),
            "location" => self.location.as_deref(),
            "wind" => self.wind.as_deref(),
            other => self.extra.get(other).map(String::as_str),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    /// Clause text; the slot, if any, appears as `{name}`.
    pub text: String,
    pub slot: Option<String>,
}

impl Clause {
    pub fn parse(line: &str) -> Result<Self> {
        let text = line.trim();
        let open = text.matches('{').count();
        let close = text.matches('}').count();
        if open != close || open > 1 {
            return Err(Error::Config(format!(
                "clause `{text}` must contain at most one `{{slot}}`"
            )));
        }
        if open == 0 {
            return Ok(Self {
                text: text.to_string(),
                slot: None,
            });
        }
        let (start, end) = (text.find('{').unwrap(), text.find('}').unwrap());
        if end < start {
            return Err(Error::Config(format!("malformed slot in `{text}`")));
        }
        let name = text[start + 1..end].trim();
        // an anonymous slot is the label slot of a test template
        let name = if name.is_empty() { LABEL_SLOT } else { name };
        Ok(Self {
            text: format!("{}{{{name}}}{}", &text[..start], &text[end + 1..]),
            slot: Some(name.to_string()),
        })
    }

    fn render(&self, value: Option<&str>) -> Option<String> {
        match (&self.slot, value) {
            (None, _) => Some(self.text.clone()),
            (Some(slot), Some(v)) => Some(self.text.replace(&format!("{{{slot}}}"), v)),
            (Some(_), None) => None,
        }
    }
}

/// An ordered list of clauses joined by `", "` and closed with a period.
/// Clauses whose slot has no value are dropped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSpec {
    clauses: Vec<Clause>,
}

impl TemplateSpec {
    pub fn new(clauses: Vec<Clause>) -> Result<Self> {
        let labels = clauses
            .iter()
            .filter(|c| c.slot.as_deref() == Some(LABEL_SLOT))
            .count();
        if labels != 1 {
            return Err(Error::Config(format!(
                "a template needs exactly one `{{label}}` clause, found {labels}"
            )));
        }
        Ok(Self { clauses })
    }

    /// One clause per non-empty line.
    pub fn parse(text: &str) -> Result<Self> {
        let clauses = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(Clause::parse)
            .collect::<Result<Vec<_>>>()?;
        Self::new(clauses)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s: String = self
            .clauses
            .iter()
            .map(|c| c.text.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        s.push('\n');
        s
    }

    /// Label clause followed by distance, depth, location and wind clauses.
    pub fn default_training() -> Self {
        Self::parse(
            "The sound belongs to {label}\n\
             which is in {distance} distance\n\
             and the channel depth is {depth}\n\
             and the location is {location}\n\
             and the wind speed is {wind}\n",
        )
        .expect("built-in template is valid")
    }

    /// Label clause only.
    pub fn label_only() -> Self {
        Self::parse("The sound belongs to {label}\n").expect("built-in template is valid")
    }

    /// Keep only the label clause and clauses whose slot is in `slots`
    /// (slot-free clauses are kept too).
    pub fn restricted_to(&self, slots: &[&str]) -> Self {
        Self {
            clauses: self
                .clauses
                .iter()
                .filter(|c| match c.slot.as_deref() {
                    None | Some(LABEL_SLOT) => true,
                    Some(s) => slots.contains(&s),
                })
                .cloned()
                .collect(),
        }
    }

    /// Drop every clause that references `slot`. The label clause stays.
    pub fn without_slot(&self, slot: &str) -> Self {
        Self {
            clauses: self
                .clauses
                .iter()
                .filter(|c| c.slot.as_deref() != Some(slot) || slot == LABEL_SLOT)
                .cloned()
                .collect(),
        }
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn slots(&self) -> impl Iterator<Item = &str> {
        self.clauses.iter().filter_map(|c| c.slot.as_deref())
    }

    pub fn render(&self, record: &AnnotationRecord) -> Result<String> {
        record.validate()?;
        let parts: Vec<String> = self
            .clauses
            .iter()
            .filter_map(|c| c.render(c.slot.as_deref().and_then(|s| record.field(s))))
            .filter(|s| !s.is_empty())
            .collect();
        Ok(format!("{}.", parts.join(", ")))
    }
}

/// Render `template` once per label, in order.
pub fn candidate_queue(test_template: &TemplateSpec, labels: &[String]) -> Result<Vec<String>> {
    if labels.is_empty() {
        return Err(Error::Config("empty label set".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for l in labels {
        if !seen.insert(l.as_str()) {
            return Err(Error::Config(format!("duplicate label `{l}`")));
        }
    }
    labels
        .iter()
        .map(|l| test_template.render(&AnnotationRecord::new(l.clone())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const OPTIONAL: [&str; 4] = ["distance", "depth", "location", "wind"];

    fn three_clause() -> TemplateSpec {
        TemplateSpec::parse(
            "The sound belongs to {label}\nwhich is in {distance} distance\nand the channel depth is {depth}\n",
        )
        .unwrap()
    }

    #[test]
    fn renders_the_reference_sentence() {
        let r = AnnotationRecord::new("Fishboat")
            .with("distance", "close")
            .with("depth", "shallow");
        assert_eq!(
            three_clause().render(&r).unwrap(),
            "The sound belongs to Fishboat, which is in close distance, and the channel depth is shallow."
        );
    }

    #[test]
    fn label_only_record() {
        let r = AnnotationRecord::new("Fishboat");
        assert_eq!(
            three_clause().render(&r).unwrap(),
            "The sound belongs to Fishboat."
        );
        assert_eq!(
            TemplateSpec::default_training().render(&r).unwrap(),
            "The sound belongs to Fishboat."
        );
    }

    #[test]
    fn missing_label_clause_is_rejected() {
        assert!(matches!(
            TemplateSpec::parse("which is in {distance} distance"),
            Err(Error::Config(_))
        ));
        assert!(TemplateSpec::parse("{label}\n{label}").is_err());
    }

    #[test]
    fn anonymous_slot_is_the_label() {
        let t = TemplateSpec::parse("The sound belongs to { }").unwrap();
        let q = candidate_queue(&t, &["Fishboat".into(), "RORO".into()]).unwrap();
        assert_eq!(
            q,
            vec![
                "The sound belongs to Fishboat.",
                "The sound belongs to RORO."
            ]
        );
    }

    #[test]
    fn candidate_queue_rules() {
        let t = TemplateSpec::label_only();
        assert_eq!(candidate_queue(&t, &["A".into()]).unwrap().len(), 1);
        assert!(candidate_queue(&t, &["A".into(), "A".into()]).is_err());
        assert!(candidate_queue(&t, &[]).is_err());
        let nine: Vec<String> = [
            "Dredger",
            "Fishboat",
            "Motorboat",
            "Musselboat",
            "Naturalnoise",
            "Oceanliner",
            "Passengers",
            "RORO",
            "Sailboat",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        assert_eq!(candidate_queue(&t, &nine).unwrap().len(), 9);
    }

    #[test]
    fn clause_deletion_equivalence_over_power_set() {
        let t = TemplateSpec::default_training();
        let full = AnnotationRecord::new("Motorboat")
            .with("distance", "far")
            .with("depth", "deep")
            .with("location", "harbour")
            .with("wind", "breezy");
        for mask in 0u32..16 {
            let mut r = full.clone();
            let mut reduced = t.clone();
            for (i, f) in OPTIONAL.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    r = r.without(f);
                    reduced = reduced.without_slot(f);
                }
            }
            let a = t.render(&r).unwrap();
            assert_eq!(a, reduced.render(&r).unwrap(), "mask {mask}");
            assert_eq!(a, reduced.render(&full).unwrap(), "mask {mask}");
            assert!(a.contains("Motorboat") && a.ends_with('.'));
        }
    }

    #[test]
    fn empty_optional_value_is_invalid() {
        let r = AnnotationRecord::new("RORO").with("wind", "");
        assert!(TemplateSpec::default_training().render(&r).is_err());
        assert!(AnnotationRecord::new(" ").validate().is_err());
    }

    #[test]
    fn text_round_trip() {
        let t = TemplateSpec::default_training();
        assert_eq!(TemplateSpec::parse(&t.to_text()).unwrap(), t);
    }
}
