use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{squared_distance, Descriptor};
use crate::error::{Error, Result};

/// Index of a leaf of the tree, i.e. a visual word.
pub type WordId = u32;

const MAX_LLOYD_ITERATIONS: usize = 50;

#[derive(Clone, Debug, PartialEq)]
struct Node {
    centroid: Vec<f64>,
    first_child: u32,
    child_count: u32,
    word: Option<WordId>,
}

/// Per-word IDF and the normalized signature of every database image.
#[derive(Clone, Debug, PartialEq)]
struct Weights {
    idf: Vec<f64>,
    signatures: BTreeMap<u64, Vec<(WordId, f64)>>,
}

/// Hierarchical k-means quantizer with an inverted-file image database.
///
/// Images are scored by the L1 distance between L1-normalized TF-IDF
/// signatures, so lower scores are better and an image queried with its own
/// descriptors scores 0.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VocabularyTree {
    k: usize,
    depth: usize,
    dim: usize,
    nodes: Vec<Node>,
    /// `leaves[w]` is the node index of word `w`.
    leaves: Vec<u32>,
    /// Per word: image id → term count.
    inverted: Vec<BTreeMap<u64, u32>>,
    /// Per image: word → term count.
    images: BTreeMap<u64, BTreeMap<WordId, u32>>,
    /// Cached weights; cleared whenever the database changes.
    weights: Option<Weights>,
}

impl VocabularyTree {
    /// Trains a tree with branching factor `k` and at most `depth` levels below the root.
    ///
    /// Each node clusters its descriptors with seeded k-means++ followed by at
    /// most 50 Lloyd iterations; a node with fewer than `k` descriptors, or at
    /// the last level, becomes a leaf.
    pub fn build(descriptors: &[Descriptor], k: usize, depth: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidConfig("branching factor must be at least 2"));
        }
        if depth < 1 {
            return Err(Error::InvalidConfig("tree depth must be at least 1"));
        }
        if descriptors.len() < k {
            return Err(Error::TooFewDescriptors {
                needed: k,
                got: descriptors.len(),
            });
        }
        let dim = descriptors[0].len();
        if let Some(bad) = descriptors.iter().find(|d| d.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        let data: Vec<&[f64]> = descriptors.iter().map(|d| d.as_slice()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nodes = alloc::vec![Node {
            centroid: mean(&data, &(0..data.len()).collect::<Vec<_>>(), dim),
            first_child: 0,
            child_count: 0,
            word: None,
        }];
        // Breadth-first so the random stream is consumed in a fixed order.
        let mut queue: alloc::collections::VecDeque<(usize, Vec<usize>, usize)> = alloc::collections::VecDeque::new();
        queue.push_back((0, (0..data.len()).collect(), 0));
        while let Some((node, members, level)) = queue.pop_front() {
            if level == depth || members.len() < k {
                continue;
            }
            let (centroids, assignment) = kmeans(&data, &members, k, dim, &mut rng);
            let first = nodes.len();
            nodes[node].first_child = first as u32;
            nodes[node].child_count = k as u32;
            let mut groups: Vec<Vec<usize>> = alloc::vec![Vec::new(); k];
            for (&m, &a) in members.iter().zip(&assignment) {
                groups[a].push(m);
            }
            for (j, (centroid, group)) in centroids.into_iter().zip(groups).enumerate() {
                nodes.push(Node {
                    centroid,
                    first_child: 0,
                    child_count: 0,
                    word: None,
                });
                queue.push_back((first + j, group, level + 1));
            }
        }
        let mut leaves = Vec::new();
        for (i, node) in nodes.iter_mut().enumerate() {
            if node.child_count == 0 {
                node.word = Some(leaves.len() as WordId);
                leaves.push(i as u32);
            }
        }
        let inverted = alloc::vec![BTreeMap::new(); leaves.len()];
        Ok(VocabularyTree {
            k,
            depth,
            dim,
            nodes,
            leaves,
            inverted,
            images: BTreeMap::new(),
            weights: None,
        })
    }

    pub fn is_trained(&self) -> bool {
        !self.nodes.is_empty()
    }

    pub fn branching(&self) -> usize {
        self.k
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn word_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn word_centroid(&self, word: WordId) -> Option<&[f64]> {
        let node = *self.leaves.get(word as usize)?;
        Some(&self.nodes[node as usize].centroid)
    }

    /// Children of node `node` as node indices, empty for leaves. Node 0 is the root.
    pub fn children(&self, node: usize) -> core::ops::Range<usize> {
        let n = &self.nodes[node];
        n.first_child as usize..(n.first_child + n.child_count) as usize
    }

    pub fn node_centroid(&self, node: usize) -> &[f64] {
        &self.nodes[node].centroid
    }

    pub fn node_word(&self, node: usize) -> Option<WordId> {
        self.nodes[node].word
    }

    /// Visual word of `d`: greedy descent to the nearest child at each level,
    /// ties going to the lowest child index.
    pub fn quantize(&self, d: &Descriptor) -> Result<WordId> {
        if !self.is_trained() {
            return Err(Error::UntrainedTree);
        }
        if d.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: d.len(),
            });
        }
        let mut node = 0usize;
        loop {
            let n = &self.nodes[node];
            if let Some(w) = n.word {
                return Ok(w);
            }
            let mut best = (usize::MAX, f64::INFINITY);
            for c in self.children(node) {
                let dist = squared_distance(d.as_slice(), &self.nodes[c].centroid);
                if dist < best.1 {
                    best = (c, dist);
                }
            }
            node = best.0;
        }
    }

    fn word_counts(&self, descriptors: &[Descriptor]) -> Result<BTreeMap<WordId, u32>> {
        let mut counts = BTreeMap::new();
        for d in descriptors {
            *counts.entry(self.quantize(d)?).or_insert(0) += 1;
        }
        Ok(counts)
    }

    /// Adds (or replaces) database image `image_id`.
    pub fn add_image(&mut self, image_id: u64, descriptors: &[Descriptor]) -> Result<()> {
        if !self.is_trained() {
            return Err(Error::UntrainedTree);
        }
        let counts = self.word_counts(descriptors)?;
        if let Some(old) = self.images.remove(&image_id) {
            for w in old.keys() {
                self.inverted[*w as usize].remove(&image_id);
            }
        }
        for (&w, &c) in &counts {
            self.inverted[w as usize].insert(image_id, c);
        }
        self.images.insert(image_id, counts);
        self.weights = None;
        Ok(())
    }

    /// Recomputes and caches IDF weights and database signatures. Queries work
    /// without this call but then recompute the weights each time.
    pub fn refresh_weights(&mut self) {
        if self.weights.is_none() {
            self.weights = Some(self.compute_weights());
        }
    }

    /// IDF of `word`: `ln(N / n_w)`, or 0 for a word no image contains.
    pub fn idf(&self, word: WordId) -> f64 {
        let n = self.images.len() as f64;
        match self.inverted.get(word as usize).map(|m| m.len()) {
            Some(c) if c > 0 => libm::log(n / c as f64),
            _ => 0.0,
        }
    }

    fn compute_weights(&self) -> Weights {
        let idf: Vec<f64> = (0..self.leaves.len() as WordId).map(|w| self.idf(w)).collect();
        let signatures = self
            .images
            .iter()
            .map(|(&id, counts)| (id, signature(counts, &idf)))
            .collect();
        Weights { idf, signatures }
    }

    /// Database images ranked by ascending score (ties by image id), at most `top_n`.
    pub fn query_image(&self, descriptors: &[Descriptor], top_n: usize) -> Result<Vec<(u64, f64)>> {
        if !self.is_trained() {
            return Err(Error::UntrainedTree);
        }
        if self.images.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        let fresh;
        let weights = match &self.weights {
            Some(w) => w,
            None => {
                fresh = self.compute_weights();
                &fresh
            }
        };
        let query = signature(&self.word_counts(descriptors)?, &weights.idf);
        let query_mass: f64 = query.iter().map(|(_, v)| v).sum();

        // Σ|q−d| = |q| + |d| + Σ_{shared words} (|q_i − d_i| − q_i − d_i)
        let mut correction: BTreeMap<u64, f64> = BTreeMap::new();
        for &(w, q) in &query {
            for &image in self.inverted[w as usize].keys() {
                let sig = &weights.signatures[&image];
                if let Ok(pos) = sig.binary_search_by_key(&w, |&(sw, _)| sw) {
                    let d = sig[pos].1;
                    *correction.entry(image).or_insert(0.0) += (q - d).abs() - q - d;
                }
            }
        }
        let mut scored: Vec<(u64, f64)> = weights
            .signatures
            .iter()
            .map(|(&id, sig)| {
                let mass: f64 = sig.iter().map(|(_, v)| v).sum();
                let score = query_mass + mass + correction.get(&id).copied().unwrap_or(0.0);
                (id, score.max(0.0))
            })
            .collect();
        scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        scored.truncate(top_n);
        Ok(scored)
    }
}

/// Free-function form of [`VocabularyTree::build`].
pub fn build_vocabulary(descriptors: &[Descriptor], k: usize, depth: usize, seed: u64) -> Result<VocabularyTree> {
    VocabularyTree::build(descriptors, k, depth, seed)
}

/// L1-normalized IDF-weighted term vector, sorted by word. All-zero when no
/// word carries weight.
fn signature(counts: &BTreeMap<WordId, u32>, idf: &[f64]) -> Vec<(WordId, f64)> {
    let weighted: Vec<(WordId, f64)> = counts
        .iter()
        .map(|(&w, &c)| (w, c as f64 * idf[w as usize]))
        .filter(|&(_, v)| v > 0.0)
        .collect();
    let total: f64 = weighted.iter().map(|(_, v)| v).sum();
    if total > 0.0 {
        weighted.into_iter().map(|(w, v)| (w, v / total)).collect()
    } else {
        Vec::new()
    }
}

fn mean(data: &[&[f64]], members: &[usize], dim: usize) -> Vec<f64> {
    let mut m = alloc::vec![0.0; dim];
    if members.is_empty() {
        return m;
    }
    for &i in members {
        for (a, v) in m.iter_mut().zip(data[i]) {
            *a += v;
        }
    }
    let inv = 1.0 / members.len() as f64;
    m.iter_mut().for_each(|a| *a *= inv);
    m
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Greedy k-means++ seeding: each new center is the best of a few D²-sampled
/// candidates by resulting potential.
fn seed_centers(data: &[&[f64]], members: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let trials = 2 + libm::log(k as f64) as usize;
    let first = members[rng.random_range(0..members.len())];
    let mut centers = alloc::vec![data[first].to_vec()];
    let mut closest: Vec<f64> = members.iter().map(|&i| squared_distance(data[i], data[first])).collect();
    while centers.len() < k {
        let potential: f64 = closest.iter().sum();
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for _ in 0..trials {
            let pick = if potential > 0.0 {
                let target = rng.random_range(0.0..potential);
                let mut acc = 0.0;
                let mut pick = members.len() - 1;
                for (pos, &d) in closest.iter().enumerate() {
                    acc += d;
                    if acc > target {
                        pick = pos;
                        break;
                    }
                }
                pick
            } else {
                rng.random_range(0..members.len())
            };
            let candidate = data[members[pick]];
            let updated: Vec<f64> = members
                .iter()
                .zip(&closest)
                .map(|(&i, &c)| c.min(squared_distance(data[i], candidate)))
                .collect();
            let total: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|(_, t, _)| total < *t) {
                best = Some((pick, total, updated));
            }
        }
        let (pick, _, updated) = best.expect("at least one trial");
        centers.push(data[members[pick]].to_vec());
        closest = updated;
    }
    centers
}

/// Lloyd iterations from a k-means++ start. Returns centroids and the cluster
/// of each member.
fn kmeans(data: &[&[f64]], members: &[usize], k: usize, dim: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut centroids = seed_centers(data, members, k, rng);
    let mut assignment: Vec<usize> = alloc::vec![usize::MAX; members.len()];
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut changed = false;
        let mut dists = alloc::vec![0.0; members.len()];
        for (pos, &i) in members.iter().enumerate() {
            let (j, d) = nearest(data[i], &centroids);
            dists[pos] = d;
            if assignment[pos] != j {
                assignment[pos] = j;
                changed = true;
            }
        }
        // Empty clusters take the point farthest from its own centroid.
        let mut sizes = alloc::vec![0usize; k];
        assignment.iter().for_each(|&a| sizes[a] += 1);
        for j in 0..k {
            if sizes[j] > 0 {
                continue;
            }
            let mut far: Option<usize> = None;
            for pos in 0..members.len() {
                if sizes[assignment[pos]] > 1 && far.is_none_or(|f| dists[pos] > dists[f]) {
                    far = Some(pos);
                }
            }
            if let Some(pos) = far {
                sizes[assignment[pos]] -= 1;
                assignment[pos] = j;
                sizes[j] = 1;
                dists[pos] = 0.0;
                changed = true;
            }
        }
        let mut groups: Vec<Vec<usize>> = alloc::vec![Vec::new(); k];
        for (pos, &a) in assignment.iter().enumerate() {
            groups[a].push(members[pos]);
        }
        for (j, g) in groups.iter().enumerate() {
            if !g.is_empty() {
                centroids[j] = mean(data, g, dim);
            }
        }
        if !changed {
            break;
        }
    }
    (centroids, assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand_distr::{Distribution, Normal};

    fn d(v: &[f64]) -> Descriptor {
        Descriptor::new(v.to_vec()).unwrap()
    }

    fn gaussian(rng: &mut ChaCha8Rng, center: &[f64], sigma: f64) -> Descriptor {
        let n = Normal::new(0.0, sigma).unwrap();
        d(&center.iter().map(|c| c + n.sample(rng)).collect::<Vec<_>>())
    }

    #[test]
    fn rectangle_splits_along_long_axis() {
        // Exhaustive 2-means oracle: the optimal split of a 4 × 1 rectangle
        // separates the two short sides.
        let pts = [[0.5, 0.5], [4.5, 0.5], [0.5, 1.5], [4.5, 1.5]];
        let descs: Vec<Descriptor> = pts.iter().map(|p| d(p)).collect();
        let mut best = (f64::INFINITY, 0u32);
        for mask in 1..(1u32 << 3) {
            // point 3 always in group 0, so every 2-partition appears once
            let sse: f64 = [0, 1]
                .iter()
                .map(|&g| {
                    let members: Vec<usize> = (0..4).filter(|&i| (i < 3 && (mask >> i) & 1 == g) || (i == 3 && g == 0)).collect();
                    let data: Vec<&[f64]> = pts.iter().map(|p| &p[..]).collect();
                    let m = mean(&data, &members, 2);
                    members.iter().map(|&i| squared_distance(&pts[i], &m)).sum::<f64>()
                })
                .sum();
            if sse < best.0 {
                best = (sse, mask);
            }
        }
        let oracle_same = |a: usize, b: usize| {
            let g = |i: usize| if i == 3 { 0 } else { (best.1 >> i) & 1 };
            g(a) == g(b)
        };
        for seed in 0..20 {
            let tree = VocabularyTree::build(&descs, 2, 1, seed).unwrap();
            assert_eq!(tree.word_count(), 2);
            let words: Vec<WordId> = descs.iter().map(|x| tree.quantize(x).unwrap()).collect();
            for a in 0..4 {
                for b in 0..4 {
                    assert_eq!(words[a] == words[b], oracle_same(a, b), "seed {seed}");
                }
            }
            assert_eq!(words[0], words[2]);
            assert_ne!(words[0], words[1]);
        }
    }

    #[test]
    fn well_separated_clusters_are_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let centers: Vec<Vec<f64>> = (0..64)
            .map(|i| {
                // hypercube corners, jittered
                (0..6)
                    .map(|b| if (i >> b) & 1 == 1 { 10.0 } else { 0.0 } + rng.random_range(-1.0..1.0))
                    .collect::<Vec<_>>()
            })
            .collect();
        let mut descs = Vec::new();
        let mut labels = Vec::new();
        for (i, c) in centers.iter().enumerate() {
            for _ in 0..6 {
                descs.push(gaussian(&mut rng, c, 0.05));
                labels.push(i);
            }
        }
        let tree = VocabularyTree::build(&descs, 2, 3, 3).unwrap();
        let mut word_of_cluster: BTreeMap<usize, WordId> = BTreeMap::new();
        for (x, &l) in descs.iter().zip(&labels) {
            let w = tree.quantize(x).unwrap();
            assert_eq!(*word_of_cluster.entry(l).or_insert(w), w, "cluster {l} split");
        }
    }

    #[test]
    fn too_few_descriptors() {
        assert_eq!(
            VocabularyTree::build(&[d(&[1.0, 2.0])], 2, 1, 0),
            Err(Error::TooFewDescriptors { needed: 2, got: 1 })
        );
    }

    fn trained(seed: u64) -> (VocabularyTree, Vec<Descriptor>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let descs: Vec<Descriptor> = (0..300).map(|_| d(&(0..8).map(|_| n.sample(&mut rng)).collect::<Vec<_>>())).collect();
        (VocabularyTree::build(&descs, 3, 3, seed).unwrap(), descs)
    }

    /// Oracle: a leaf is the answer iff at every level of its path the chosen
    /// child is strictly closer than lower-index siblings and no farther than
    /// higher-index ones.
    fn path_oracle(tree: &VocabularyTree, x: &Descriptor) -> WordId {
        let mut parent = vec![usize::MAX; tree.nodes.len()];
        for p in 0..tree.nodes.len() {
            for c in tree.children(p) {
                parent[c] = p;
            }
        }
        let dist = |n: usize| squared_distance(x.as_slice(), tree.node_centroid(n));
        let valid: Vec<WordId> = (0..tree.word_count() as WordId)
            .filter(|&w| {
                let mut node = tree.leaves[w as usize] as usize;
                while parent[node] != usize::MAX {
                    let p = parent[node];
                    for s in tree.children(p) {
                        if (s < node && dist(s) <= dist(node)) || (s > node && dist(s) < dist(node)) {
                            return false;
                        }
                    }
                    node = p;
                }
                true
            })
            .collect();
        assert_eq!(valid.len(), 1);
        valid[0]
    }

    #[test]
    fn quantize_matches_path_oracle() {
        let (tree, _) = trained(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = Normal::new(0.0, 1.2).unwrap();
        for _ in 0..1000 {
            let x = d(&(0..8).map(|_| n.sample(&mut rng)).collect::<Vec<_>>());
            assert_eq!(tree.quantize(&x).unwrap(), path_oracle(&tree, &x));
        }
        for w in 0..tree.word_count() as WordId {
            let c = tree.word_centroid(w).unwrap();
            if c.iter().any(|&v| v != 0.0) {
                assert_eq!(tree.quantize(&d(c)).unwrap(), path_oracle(&tree, &d(c)));
            }
        }
    }

    #[test]
    fn sibling_midpoint_goes_to_lower_index() {
        let descs = vec![d(&[0.0, 1.0]), d(&[0.0, 1.1]), d(&[4.0, 1.0]), d(&[4.0, 1.1])];
        let tree = VocabularyTree::build(&descs, 2, 1, 1).unwrap();
        let a = tree.node_centroid(1).to_vec();
        let b = tree.node_centroid(2).to_vec();
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        assert_eq!(squared_distance(&mid, &a), squared_distance(&mid, &b));
        assert_eq!(tree.quantize(&d(&mid)).unwrap(), tree.node_word(1).unwrap());
        assert_eq!(tree.quantize(&d(&a)).unwrap(), tree.node_word(1).unwrap());
        assert_eq!(tree.quantize(&d(&b)).unwrap(), tree.node_word(2).unwrap());
    }

    #[test]
    fn build_is_reproducible() {
        assert_eq!(trained(9).0, trained(9).0);
    }

    /// Dense TF-IDF scores computed from word counts without the inverted file.
    pub(crate) fn dense_scores(tree: &VocabularyTree, db: &[(u64, Vec<Descriptor>)], query: &[Descriptor]) -> Vec<(u64, f64)> {
        let words = tree.word_count();
        let hist = |ds: &[Descriptor]| {
            let mut h = vec![0.0f64; words];
            for x in ds {
                h[tree.quantize(x).unwrap() as usize] += 1.0;
            }
            h
        };
        let hists: Vec<Vec<f64>> = db.iter().map(|(_, ds)| hist(ds)).collect();
        let n = db.len() as f64;
        let idf: Vec<f64> = (0..words)
            .map(|w| {
                let c = hists.iter().filter(|h| h[w] > 0.0).count();
                if c == 0 { 0.0 } else { libm::log(n / c as f64) }
            })
            .collect();
        let normalize = |h: &[f64]| {
            let v: Vec<f64> = h.iter().zip(&idf).map(|(a, b)| a * b).collect();
            let s: f64 = v.iter().sum();
            if s > 0.0 { v.iter().map(|x| x / s).collect() } else { vec![0.0; words] }
        };
        let q = normalize(&hist(query));
        let mut out: Vec<(u64, f64)> = db
            .iter()
            .zip(&hists)
            .map(|((id, _), h)| (*id, normalize(h).iter().zip(&q).map(|(a, b)| (a - b).abs()).sum()))
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    fn logo_database(seed: u64, count: usize) -> (VocabularyTree, Vec<(u64, Vec<Descriptor>)>, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let db: Vec<(u64, Vec<Descriptor>)> = (0..count as u64)
            .map(|id| (id, (0..30).map(|_| d(&(0..16).map(|_| n.sample(&mut rng)).collect::<Vec<_>>())).collect()))
            .collect();
        let all: Vec<Descriptor> = db.iter().flat_map(|(_, ds)| ds.iter().cloned()).collect();
        let mut tree = VocabularyTree::build(&all, 4, 4, seed).unwrap();
        for (id, ds) in &db {
            tree.add_image(*id, ds).unwrap();
        }
        (tree, db, rng)
    }

    #[test]
    fn self_query_scores_zero() {
        let (tree, db, _) = logo_database(20, 10);
        let res = tree.query_image(&db[4].1, 3).unwrap();
        assert_eq!(res[0].0, 4);
        assert!(res[0].1.abs() < 1e-9);
        assert_eq!(res.len(), 3);
    }

    #[test]
    fn noisy_logo_ranks_first_and_matches_oracle() {
        let (mut tree, db, mut rng) = logo_database(21, 10);
        let query: Vec<Descriptor> = db[3].1.iter().map(|x| gaussian(&mut rng, x.as_slice(), 0.05)).collect();
        let res = tree.query_image(&query, 10).unwrap();
        assert_eq!(res[0].0, 3);
        let oracle = dense_scores(&tree, &db, &query);
        for (a, b) in res.iter().zip(&oracle) {
            assert_eq!(a.0, b.0);
            assert!((a.1 - b.1).abs() < 1e-9);
        }
        tree.refresh_weights();
        assert_eq!(tree.query_image(&query, 10).unwrap(), res);
    }

    #[test]
    fn insertion_order_does_not_change_scores() {
        let (tree, db, mut rng) = logo_database(22, 8);
        let mut other = VocabularyTree { images: BTreeMap::new(), inverted: vec![BTreeMap::new(); tree.word_count()], weights: None, ..tree.clone() };
        for (id, ds) in db.iter().rev() {
            other.add_image(*id, ds).unwrap();
        }
        let query: Vec<Descriptor> = db[5].1.iter().map(|x| gaussian(&mut rng, x.as_slice(), 0.2)).collect();
        assert_eq!(tree.query_image(&query, 8).unwrap(), other.query_image(&query, 8).unwrap());
        assert!(tree.query_image(&query, 8).unwrap().iter().all(|&(_, s)| s >= 0.0));
    }

    #[test]
    fn database_errors() {
        let (tree, descs) = trained(23);
        assert_eq!(tree.query_image(&descs[..3], 1), Err(Error::EmptyDatabase));
        let untrained = VocabularyTree::default();
        assert_eq!(untrained.query_image(&descs[..3], 1), Err(Error::UntrainedTree));
        let mut untrained = untrained;
        assert_eq!(untrained.add_image(0, &descs[..3]), Err(Error::UntrainedTree));
    }
}
