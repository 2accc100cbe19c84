use std::collections::HashMap;

/// Label id ↔ name mapping with an optional hierarchy derived from
/// path-style names such as `/person/artist`.
///
/// Ids are dense (0..N-1) and assigned in lexicographic name order, so the
/// same label set always yields the same ids.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
    parents: Vec<Option<usize>>,
    missing_parents: Vec<(usize, String)>,
}

/// Path components of a label name; a name without separators is a single
/// component.
fn components(name: &str) -> Vec<&str> {
    name.split('/').filter(|c| !c.is_empty()).collect()
}

fn parent_path(name: &str) -> Option<String> {
    let comps = components(name);
    if comps.len() < 2 {
        return None;
    }
    let prefix = if name.starts_with('/') { "/" } else { "" };
    Some(format!("{prefix}{}", comps[..comps.len() - 1].join("/")))
}

impl LabelVocab {
    /// Build from an arbitrary collection of names. Duplicates collapse,
    /// order is normalized to lexicographic.
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut names: Vec<String> = names.into_iter().map(Into::into).collect();
        names.sort();
        names.dedup();
        let index: HashMap<String, usize> =
            names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let mut parents = Vec::with_capacity(names.len());
        let mut missing_parents = Vec::new();
        for (id, name) in names.iter().enumerate() {
            match parent_path(name) {
                Some(path) => match index.get(&path) {
                    Some(&pid) => parents.push(Some(pid)),
                    None => {
                        missing_parents.push((id, path));
                        parents.push(None);
                    }
                },
                None => parents.push(None),
            }
        }
        LabelVocab { names, index, parents, missing_parents }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.parents[id]
    }

    /// Number of path components in the label name; top-level labels have
    /// depth 1.
    pub fn depth(&self, id: usize) -> usize {
        components(&self.names[id]).len()
    }

    /// True when at least one label sits below another (depth > 1 with a
    /// resolvable parent).
    pub fn has_hierarchy(&self) -> bool {
        self.parents.iter().any(Option::is_some)
    }

    /// Labels whose path-derived parent does not exist in the vocabulary;
    /// the hierarchy is partial when this is non-empty.
    pub fn missing_parents(&self) -> &[(usize, String)] {
        &self.missing_parents
    }
}
