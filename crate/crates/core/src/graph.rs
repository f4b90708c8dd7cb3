//! Hierarchical node forest used to decide which scene a component belongs to.
//!
//! A component's scene is the first scene found by walking up from its node
//! and, at each ancestor, searching that ancestor's subtree depth-first in
//! pre-order with children in insertion order.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone, PartialEq)]
pub enum Attachment<S> {
    Component(String),
    Scene(S),
}

#[derive(Debug)]
struct Node<S> {
    name: String,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    attachments: Vec<Attachment<S>>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("no scene reachable from node {0:?}")]
    Unresolved(NodeId),
    #[error("unknown node {0:?}")]
    UnknownNode(NodeId),
}

/// Arena-backed forest. Nodes can only be added under existing nodes, so the
/// graph can never contain a cycle.
#[derive(Debug)]
pub struct SceneGraph<S> {
    nodes: Vec<Node<S>>,
}

impl<S> Default for SceneGraph<S> {
    fn default() -> Self {
        Self { nodes: Vec::new() }
    }
}

impl<S: Clone> SceneGraph<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_root(&mut self, name: impl Into<String>) -> NodeId {
        self.push(name.into(), None)
    }

    pub fn add_child(&mut self, parent: NodeId, name: impl Into<String>) -> Result<NodeId, GraphError> {
        self.check(parent)?;
        let id = self.push(name.into(), Some(parent));
        self.nodes[parent.0].children.push(id);
        Ok(id)
    }

    fn push(&mut self, name: String, parent: Option<NodeId>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { name, parent, children: Vec::new(), attachments: Vec::new() });
        id
    }

    fn check(&self, node: NodeId) -> Result<(), GraphError> {
        if node.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(GraphError::UnknownNode(node))
        }
    }

    pub fn attach_scene(&mut self, node: NodeId, scene: S) -> Result<(), GraphError> {
        self.check(node)?;
        self.nodes[node.0].attachments.push(Attachment::Scene(scene));
        Ok(())
    }

    pub fn attach_component(&mut self, node: NodeId, name: impl Into<String>) -> Result<(), GraphError> {
        self.check(node)?;
        self.nodes[node.0].attachments.push(Attachment::Component(name.into()));
        Ok(())
    }

    pub fn name(&self, node: NodeId) -> Option<&str> {
        self.nodes.get(node.0).map(|n| n.name.as_str())
    }

    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        self.nodes.get(node.0).and_then(|n| n.parent)
    }

    pub fn attachments(&self, node: NodeId) -> &[Attachment<S>] {
        self.nodes.get(node.0).map(|n| n.attachments.as_slice()).unwrap_or(&[])
    }

    /// The scene that serves components attached at `node`.
    pub fn resolve_scene(&self, node: NodeId) -> Result<S, GraphError> {
        self.check(node)?;
        let mut ancestor = Some(node);
        while let Some(a) = ancestor {
            if let Some(scene) = self.first_scene_in_subtree(a) {
                return Ok(scene);
            }
            ancestor = self.nodes[a.0].parent;
        }
        Err(GraphError::Unresolved(node))
    }

    fn first_scene_in_subtree(&self, root: NodeId) -> Option<S> {
        let mut stack = vec![root];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n.0];
            for a in &node.attachments {
                if let Attachment::Scene(s) = a {
                    return Some(s.clone());
                }
            }
            stack.extend(node.children.iter().rev());
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn own_node_scene_wins() {
        let mut g = SceneGraph::new();
        let root = g.add_root("root");
        g.attach_scene(root, "outer").unwrap();
        let n = g.add_child(root, "n").unwrap();
        g.attach_scene(n, "own").unwrap();
        g.attach_component(n, "c").unwrap();
        assert_eq!(g.resolve_scene(n).unwrap(), "own");
    }

    #[test]
    fn sibling_subtree_one_level_up() {
        // root
        // ├── network (scene)
        // └── avatar
        //     └── head
        let mut g = SceneGraph::new();
        let root = g.add_root("root");
        let network = g.add_child(root, "network").unwrap();
        g.attach_scene(network, "scene").unwrap();
        let avatar = g.add_child(root, "avatar").unwrap();
        let head = g.add_child(avatar, "head").unwrap();
        assert_eq!(g.resolve_scene(head).unwrap(), "scene");
    }

    /// Reference traversal: enumerate pre-order positions of every node and
    /// pick, for each ancestor in turn, the scene with the lowest position
    /// inside that ancestor's subtree.
    fn oracle(g: &SceneGraph<&'static str>, node: NodeId) -> Option<&'static str> {
        fn preorder(g: &SceneGraph<&'static str>, n: NodeId, out: &mut Vec<NodeId>) {
            out.push(n);
            for c in &g.nodes[n.0].children {
                preorder(g, *c, out);
            }
        }
        let mut a = Some(node);
        while let Some(anc) = a {
            let mut order = Vec::new();
            preorder(g, anc, &mut order);
            let found = order.iter().find_map(|n| {
                g.attachments(*n).iter().find_map(|x| match x {
                    Attachment::Scene(s) => Some(*s),
                    _ => None,
                })
            });
            if found.is_some() {
                return found;
            }
            a = g.parent(anc);
        }
        None
    }

    #[test]
    fn two_branches_resolve_independently() {
        // Six-node fixture: one process hosting two peers.
        // world
        // ├── peer-a
        // │   ├── scene-a (scene A)
        // │   └── thing-a
        // └── peer-b
        //     └── scene-b (scene B)
        let mut g = SceneGraph::new();
        let world = g.add_root("world");
        let pa = g.add_child(world, "peer-a").unwrap();
        let sa = g.add_child(pa, "scene-a").unwrap();
        let ta = g.add_child(pa, "thing-a").unwrap();
        let pb = g.add_child(world, "peer-b").unwrap();
        let sb = g.add_child(pb, "scene-b").unwrap();
        g.attach_scene(sa, "A").unwrap();
        g.attach_scene(sb, "B").unwrap();
        assert_eq!(g.resolve_scene(ta).unwrap(), "A");
        assert_eq!(g.resolve_scene(pb).unwrap(), "B");
        assert_eq!(g.resolve_scene(sb).unwrap(), "B");
        // From the shared root the first pre-order hit is A.
        assert_eq!(g.resolve_scene(world).unwrap(), "A");
        for n in [world, pa, sa, ta, pb, sb] {
            assert_eq!(g.resolve_scene(n).ok(), oracle(&g, n));
        }
    }

    #[test]
    fn unresolved_without_any_scene() {
        let mut g: SceneGraph<&str> = SceneGraph::new();
        let r = g.add_root("lonely");
        let c = g.add_child(r, "child").unwrap();
        assert_eq!(g.resolve_scene(c), Err(GraphError::Unresolved(c)));
        let other = g.add_root("other");
        g.attach_scene(other, "elsewhere").unwrap();
        // Scenes in a different tree of the forest are never reached.
        assert_eq!(g.resolve_scene(c), Err(GraphError::Unresolved(c)));
    }

    #[test]
    fn resolution_is_deterministic() {
        let build = || {
            let mut g = SceneGraph::new();
            let r = g.add_root("r");
            let mut last = r;
            for i in 0..20 {
                let n = g.add_child(if i % 3 == 0 { r } else { last }, format!("n{i}")).unwrap();
                if i % 7 == 3 {
                    g.attach_scene(n, i).unwrap();
                }
                last = n;
            }
            g
        };
        let (g1, g2) = (build(), build());
        for i in 0..21 {
            assert_eq!(g1.resolve_scene(NodeId(i)), g2.resolve_scene(NodeId(i)));
        }
    }
}
