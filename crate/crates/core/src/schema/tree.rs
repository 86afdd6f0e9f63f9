use serde::Serialize;

use super::{EndpointSpec, Verb};

/// A declared path template and the declared paths directly beneath it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PathNode {
    pub template: String,
    pub children: Vec<String>,
    pub endpoints: Vec<Verb>,
}

/// Proper ancestors of `path`, root first. `/` counts as an ancestor of
/// every other path; a trailing empty segment is kept as part of the path
/// itself, so `/a/b/` has ancestors `/`, `/a`, `/a/b`.
pub(crate) fn ancestors(path: &str) -> Vec<String> {
    if path == "/" {
        return Vec::new();
    }
    let segments: Vec<&str> = path.trim_start_matches('/').split('/').collect();
    let mut out = vec!["/".to_string()];
    for i in 1..segments.len() {
        out.push(format!("/{}", segments[..i].join("/")));
    }
    out
}

pub(crate) fn build(endpoints: &[EndpointSpec]) -> Vec<PathNode> {
    let mut nodes: Vec<PathNode> = Vec::new();
    for e in endpoints {
        match nodes.iter_mut().find(|n| n.template == e.id.path) {
            Some(n) => {
                if !n.endpoints.contains(&e.id.verb) {
                    n.endpoints.push(e.id.verb);
                }
            }
            None => nodes.push(PathNode {
                template: e.id.path.clone(),
                children: Vec::new(),
                endpoints: vec![e.id.verb],
            }),
        }
    }
    let templates: Vec<String> = nodes.iter().map(|n| n.template.clone()).collect();
    for t in &templates {
        let parent = ancestors(t)
            .into_iter()
            .rev()
            .find(|a| templates.contains(a));
        if let Some(parent) = parent {
            let node = nodes.iter_mut().find(|n| n.template == parent).unwrap();
            node.children.push(t.clone());
        }
    }
    nodes
}
