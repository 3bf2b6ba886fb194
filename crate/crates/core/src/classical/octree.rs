use crate::error::Result;
use crate::imaging::{to_u8, IndexMap, Palette, QuantResult, Rgb, RgbImage};

const MAX_DEPTH: u8 = 8;

#[derive(Debug, Clone)]
pub struct OctreeNode {
    pub depth: u8,
    pub children: [Option<usize>; 8],
    pub pixel_count: usize,
    pub color_sum: [f64; 3],
    leaf: bool,
}

impl OctreeNode {
    fn new(depth: u8) -> Self {
        Self {
            depth,
            children: [None; 8],
            pixel_count: 0,
            color_sum: [0.0; 3],
            leaf: depth == MAX_DEPTH,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.leaf
    }

    pub fn mean(&self) -> Rgb {
        let n = self.pixel_count as f64;
        self.color_sum.map(|s| (s / n) as f32)
    }
}

fn child_slot(rgb8: [u8; 3], depth: u8) -> usize {
    let bit = 7 - depth;
    (((rgb8[0] >> bit) & 1) << 2 | ((rgb8[1] >> bit) & 1) << 1 | ((rgb8[2] >> bit) & 1)) as usize
}

/// Gervautz–Purgathofer octree over 8-bit colors.
struct Octree {
    nodes: Vec<OctreeNode>,
    leaves: usize,
}

impl Octree {
    fn build(pixels: &[Rgb]) -> Self {
        let mut tree = Octree {
            nodes: vec![OctreeNode::new(0)],
            leaves: 0,
        };
        for &p in pixels {
            let key = p.map(to_u8);
            let mut node = 0;
            loop {
                let n = &mut tree.nodes[node];
                n.pixel_count += 1;
                for k in 0..3 {
                    n.color_sum[k] += p[k] as f64;
                }
                if n.leaf {
                    break;
                }
                let depth = n.depth;
                let slot = child_slot(key, depth);
                node = match tree.nodes[node].children[slot] {
                    Some(child) => child,
                    None => {
                        let child = tree.nodes.len();
                        let fresh = OctreeNode::new(depth + 1);
                        if fresh.leaf {
                            tree.leaves += 1;
                        }
                        tree.nodes.push(fresh);
                        tree.nodes[node].children[slot] = Some(child);
                        child
                    }
                };
            }
        }
        tree
    }

    /// Merges reducible nodes until at most `max_leaves` leaves remain. The
    /// deepest internal level goes first; within it the node with the fewest
    /// pixels, then the earliest created.
    fn reduce(&mut self, max_leaves: usize) {
        let mut by_level: Vec<Vec<usize>> = vec![Vec::new(); MAX_DEPTH as usize];
        for (id, n) in self.nodes.iter().enumerate() {
            if !n.leaf {
                by_level[n.depth as usize].push(id);
            }
        }
        while self.leaves > max_leaves {
            let Some(level) = by_level.iter_mut().rev().find(|l| !l.is_empty()) else {
                break;
            };
            let (pos, &id) = level
                .iter()
                .enumerate()
                .min_by_key(|(_, &id)| (self.nodes[id].pixel_count, id))
                .expect("level is non-empty");
            level.remove(pos);
            let removed = self.nodes[id].children.iter().flatten().count();
            self.nodes[id].children = [None; 8];
            self.nodes[id].leaf = true;
            self.leaves = self.leaves + 1 - removed;
        }
    }

    fn leaf_for(&self, rgb8: [u8; 3]) -> usize {
        let mut node = 0;
        while !self.nodes[node].leaf {
            let slot = child_slot(rgb8, self.nodes[node].depth);
            node = self.nodes[node].children[slot].expect("every pixel color was inserted");
        }
        node
    }
}

/// Octree color quantization to at most `num_colors` colors; palette entries
/// are the mean colors of the surviving leaves.
pub fn octree_quantize(image: &RgbImage, num_colors: usize) -> Result<QuantResult> {
    assert!(num_colors >= 1, "octree quantization needs at least one color");
    let pixels: Vec<Rgb> = image.pixels().collect();
    let mut tree = Octree::build(&pixels);
    tree.reduce(num_colors);

    let mut slot_of = vec![u32::MAX; tree.nodes.len()];
    let mut colors = Vec::new();
    let mut indices = Vec::with_capacity(pixels.len());
    for &p in &pixels {
        let leaf = tree.leaf_for(p.map(to_u8));
        if slot_of[leaf] == u32::MAX {
            slot_of[leaf] = colors.len() as u32;
            colors.push(tree.nodes[leaf].mean());
        }
        indices.push(slot_of[leaf]);
    }
    let index_map = IndexMap::new(image.height(), image.width(), indices)?;
    QuantResult::from_parts(Palette::new(colors), index_map)
}
