use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Vessel type to evaluation class. Types the map does not list score as
/// themselves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap {
    pub map: BTreeMap<String, String>,
}

impl Default for ClassMap {
    /// The five-class merge of the nine Shipsear vessel types.
    fn default() -> Self {
        let groups: [(&str, &[&str]); 5] = [
            ("A", &["Fishboat", "Musselboat", "Dredger"]),
            ("B", &["Motorboat", "Sailboat"]),
            ("C", &["Passengers"]),
            ("D", &["Oceanliner", "RORO"]),
            ("E", &["Naturalnoise"]),
        ];
        let map = groups
            .iter()
            .flat_map(|(class, types)| {
                types
                    .iter()
                    .map(move |t| (t.to_string(), class.to_string()))
            })
            .collect();
        Self { map }
    }
}

impl ClassMap {
    pub fn identity() -> Self {
        Self {
            map: BTreeMap::new(),
        }
    }

    pub fn class_of<'a>(&'a self, vessel_type: &'a str) -> &'a str {
        self.map
            .get(vessel_type)
            .map_or(vessel_type, String::as_str)
    }

    pub fn same_class(&self, a: &str, b: &str) -> bool {
        self.class_of(a) == self.class_of(b)
    }

    /// Sorted evaluation classes reached by `types`.
    pub fn classes_of<'a>(&self, types: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        types
            .into_iter()
            .map(|t| self.class_of(t).to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}
