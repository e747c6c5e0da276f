//! Encode-process-decode graph network scoring the action edges of a feature
//! graph, with a hand-written backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureGraph, FG_EDGE_FEATURES, FG_NODE_FEATURES};

/// Two-layer perceptron shape: `input -> hidden (ReLU) -> output`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl MlpShape {
    pub fn len(&self) -> usize {
        self.hidden * self.input + self.hidden + self.output * self.hidden + self.output
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the hidden pre-activations and the output for input `x`.
    fn forward(&self, p: &[f64], x: &[f64], pre: &mut [f64], out: &mut [f64]) {
        let (w1, rest) = p.split_at(self.hidden * self.input);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.output * self.hidden);
        for h in 0..self.hidden {
            let row = &w1[h * self.input..(h + 1) * self.input];
            pre[h] = b1[h] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        for o in 0..self.output {
            let row = &w2[o * self.hidden..(o + 1) * self.hidden];
            out[o] = b2[o] + row.iter().zip(pre.iter()).map(|(w, h)| w * h.max(0.0)).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients into `g` and, when given, the input
    /// gradient into `gx`.
    fn backward(&self, p: &[f64], x: &[f64], pre: &[f64], g_out: &[f64], g: &mut [f64], gx: Option<&mut [f64]>) {
        let (w1, rest) = p.split_at(self.hidden * self.input);
        let (_, rest) = rest.split_at(self.hidden);
        let (w2, _) = rest.split_at(self.output * self.hidden);
        let (gw1, grest) = g.split_at_mut(self.hidden * self.input);
        let (gb1, grest) = grest.split_at_mut(self.hidden);
        let (gw2, gb2) = grest.split_at_mut(self.output * self.hidden);
        let mut g_hidden = vec![0.0; self.hidden];
        for o in 0..self.output {
            let go = g_out[o];
            if go == 0.0 {
                continue;
            }
            gb2[o] += go;
            for h in 0..self.hidden {
                gw2[o * self.hidden + h] += go * pre[h].max(0.0);
                g_hidden[h] += go * w2[o * self.hidden + h];
            }
        }
        let mut gx = gx;
        for h in 0..self.hidden {
            if pre[h] <= 0.0 || g_hidden[h] == 0.0 {
                continue;
            }
            let gh = g_hidden[h];
            gb1[h] += gh;
            for i in 0..self.input {
                gw1[h * self.input + i] += gh * x[i];
            }
            if let Some(gx) = gx.as_deref_mut() {
                for i in 0..self.input {
                    gx[i] += gh * w1[h * self.input + i];
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNetShape {
    pub latent: usize,
    pub hidden: usize,
    pub steps: usize,
}

impl Default for GraphNetShape {
    fn default() -> Self {
        GraphNetShape {
            latent: 16,
            hidden: 16,
            steps: 3,
        }
    }
}

impl GraphNetShape {
    /// Edge encoder, node encoder, edge processor, node processor, decoder.
    pub fn mlps(&self) -> [MlpShape; 5] {
        let (l, h) = (self.latent, self.hidden);
        let mlp = |input, output| MlpShape {
            input,
            hidden: h,
            output,
        };
        [
            mlp(FG_EDGE_FEATURES, l),
            mlp(FG_NODE_FEATURES, l),
            mlp(3 * l, l),
            mlp(2 * l, l),
            mlp(l, 1),
        ]
    }

    fn offsets(&self) -> [usize; 6] {
        let mut o = [0; 6];
        for (i, m) in self.mlps().iter().enumerate() {
            o[i + 1] = o[i] + m.len();
        }
        o
    }

    pub fn param_len(&self) -> usize {
        self.offsets()[5]
    }
}

const EDGE_ENC: usize = 0;
const NODE_ENC: usize = 1;
const EDGE_PROC: usize = 2;
const NODE_PROC: usize = 3;
const DEC: usize = 4;

/// Weights of one network, stored flat in the order of [`GraphNetShape::mlps`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphNetParams {
    pub shape: GraphNetShape,
    pub data: Vec<f64>,
}

impl GraphNetParams {
    pub fn zeros(shape: GraphNetShape) -> Self {
        GraphNetParams {
            shape,
            data: vec![0.0; shape.param_len()],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(shape: GraphNetShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(shape.param_len());
        for m in shape.mlps() {
            let l1 = (6.0 / (m.input + m.hidden) as f64).sqrt();
            data.extend((0..m.hidden * m.input).map(|_| rng.gen_range(-l1..l1)));
            data.extend(std::iter::repeat_n(0.0, m.hidden));
            let l2 = (6.0 / (m.hidden + m.output) as f64).sqrt();
            data.extend((0..m.output * m.hidden).map(|_| rng.gen_range(-l2..l2)));
            data.extend(std::iter::repeat_n(0.0, m.output));
        }
        GraphNetParams { shape, data }
    }

    pub fn check(&self) -> Result<()> {
        if self.data.len() != self.shape.param_len() {
            return Err(Error::param(format!(
                "graph net expects {} parameters, got {}",
                self.shape.param_len(),
                self.data.len()
            )));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("graph net parameter {i}")));
        }
        Ok(())
    }
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Latents before each processor step and after the last: `steps + 1` entries.
    edge_latent: Vec<Vec<f64>>,
    node_latent: Vec<Vec<f64>>,
    edge_enc_pre: Vec<f64>,
    node_enc_pre: Vec<f64>,
    /// Per step: edge processor inputs and pre-activations.
    edge_in: Vec<Vec<f64>>,
    edge_pre: Vec<Vec<f64>>,
    node_in: Vec<Vec<f64>>,
    node_pre: Vec<Vec<f64>>,
    dec_pre: Vec<f64>,
    /// Incoming edges of every node, ordered by edge key.
    incoming: Vec<Vec<usize>>,
}

fn incoming_by_key(fg: &FeatureGraph) -> Vec<Vec<usize>> {
    let mut incoming = vec![Vec::new(); fg.nodes.len()];
    for (i, e) in fg.edges.iter().enumerate() {
        incoming[e.receiver].push(i);
    }
    for list in incoming.iter_mut() {
        list.sort_by_key(|&i| fg.edges[i].key);
    }
    incoming
}

/// One score per action, in action-map order.
pub fn forward(params: &[f64], shape: GraphNetShape, fg: &FeatureGraph) -> Result<Vec<f64>> {
    Ok(forward_cached(params, shape, fg)?.0)
}

pub fn forward_cached(params: &[f64], shape: GraphNetShape, fg: &FeatureGraph) -> Result<(Vec<f64>, ForwardCache)> {
    if fg.action_map.is_empty() {
        return Err(Error::Policy("graph net called without actions".into()));
    }
    if params.len() != shape.param_len() {
        return Err(Error::param("graph net parameter length mismatch"));
    }
    let mlps = shape.mlps();
    let off = shape.offsets();
    let p = |i: usize| &params[off[i]..off[i + 1]];
    let (l, h) = (shape.latent, shape.hidden);
    let (ne, nv) = (fg.edges.len(), fg.nodes.len());

    let mut edge_enc_pre = vec![0.0; ne * h];
    let mut e = vec![0.0; ne * l];
    for (i, edge) in fg.edges.iter().enumerate() {
        mlps[EDGE_ENC].forward(
            p(EDGE_ENC),
            &edge.features,
            &mut edge_enc_pre[i * h..(i + 1) * h],
            &mut e[i * l..(i + 1) * l],
        );
    }
    let mut node_enc_pre = vec![0.0; nv * h];
    let mut v = vec![0.0; nv * l];
    for (j, x) in fg.node_features.iter().enumerate() {
        mlps[NODE_ENC].forward(p(NODE_ENC), x, &mut node_enc_pre[j * h..(j + 1) * h], &mut v[j * l..(j + 1) * l]);
    }

    let incoming = incoming_by_key(fg);
    let mut cache = ForwardCache {
        edge_latent: vec![e],
        node_latent: vec![v],
        edge_enc_pre,
        node_enc_pre,
        edge_in: Vec::new(),
        edge_pre: Vec::new(),
        node_in: Vec::new(),
        node_pre: Vec::new(),
        dec_pre: Vec::new(),
        incoming,
    };
    let mut delta = vec![0.0; l];
    for _ in 0..shape.steps {
        let e = cache.edge_latent.last().expect("latent");
        let v = cache.node_latent.last().expect("latent");
        let mut edge_in = vec![0.0; ne * 3 * l];
        let mut edge_pre = vec![0.0; ne * h];
        let mut e_next = e.clone();
        for (i, edge) in fg.edges.iter().enumerate() {
            let input = &mut edge_in[i * 3 * l..(i + 1) * 3 * l];
            input[..l].copy_from_slice(&e[i * l..(i + 1) * l]);
            input[l..2 * l].copy_from_slice(&v[edge.sender * l..(edge.sender + 1) * l]);
            input[2 * l..].copy_from_slice(&v[edge.receiver * l..(edge.receiver + 1) * l]);
            mlps[EDGE_PROC].forward(p(EDGE_PROC), input, &mut edge_pre[i * h..(i + 1) * h], &mut delta);
            for (a, d) in e_next[i * l..(i + 1) * l].iter_mut().zip(&delta) {
                *a += d;
            }
        }
        let mut node_in = vec![0.0; nv * 2 * l];
        let mut node_pre = vec![0.0; nv * h];
        let mut v_next = v.clone();
        for j in 0..nv {
            let input = &mut node_in[j * 2 * l..(j + 1) * 2 * l];
            input[..l].copy_from_slice(&v[j * l..(j + 1) * l]);
            for &i in &cache.incoming[j] {
                for (a, b) in input[l..].iter_mut().zip(&e_next[i * l..(i + 1) * l]) {
                    *a += b;
                }
            }
            mlps[NODE_PROC].forward(p(NODE_PROC), input, &mut node_pre[j * h..(j + 1) * h], &mut delta);
            for (a, d) in v_next[j * l..(j + 1) * l].iter_mut().zip(&delta) {
                *a += d;
            }
        }
        cache.edge_in.push(edge_in);
        cache.edge_pre.push(edge_pre);
        cache.node_in.push(node_in);
        cache.node_pre.push(node_pre);
        cache.edge_latent.push(e_next);
        cache.node_latent.push(v_next);
    }

    let e = cache.edge_latent.last().expect("latent");
    let mut out = Vec::with_capacity(fg.action_map.len());
    let mut dec_pre = vec![0.0; fg.action_map.len() * h];
    let mut score = [0.0];
    for (a, &(i, _)) in fg.action_map.iter().enumerate() {
        mlps[DEC].forward(p(DEC), &e[i * l..(i + 1) * l], &mut dec_pre[a * h..(a + 1) * h], &mut score);
        out.push(score[0]);
    }
    cache.dec_pre = dec_pre;
    Ok((out, cache))
}

/// Adds `sum_a upstream[a] * d score_a / d params` to `grad`.
pub fn backward(
    params: &[f64],
    shape: GraphNetShape,
    fg: &FeatureGraph,
    cache: &ForwardCache,
    upstream: &[f64],
    grad: &mut [f64],
) {
    let mlps = shape.mlps();
    let off = shape.offsets();
    let p = |i: usize| &params[off[i]..off[i + 1]];
    let (l, h) = (shape.latent, shape.hidden);
    let (ne, nv) = (fg.edges.len(), fg.nodes.len());
    if upstream.iter().all(|&u| u == 0.0) {
        return;
    }
    let (g_enc_e, rest) = grad.split_at_mut(off[1]);
    let (g_enc_v, rest) = rest.split_at_mut(off[2] - off[1]);
    let (g_proc_e, rest) = rest.split_at_mut(off[3] - off[2]);
    let (g_proc_v, g_dec) = rest.split_at_mut(off[4] - off[3]);

    let mut ge = vec![0.0; ne * l];
    let mut gv = vec![0.0; nv * l];
    let e_final = cache.edge_latent.last().expect("latent");
    for (a, &(i, _)) in fg.action_map.iter().enumerate() {
        if upstream[a] == 0.0 {
            continue;
        }
        mlps[DEC].backward(
            p(DEC),
            &e_final[i * l..(i + 1) * l],
            &cache.dec_pre[a * h..(a + 1) * h],
            &[upstream[a]],
            g_dec,
            Some(&mut ge[i * l..(i + 1) * l]),
        );
    }

    for s in (0..shape.steps).rev() {
        // Node update: v' = v + f([v, sum of incoming e']).
        let mut ge_next = ge.clone();
        let mut gv_prev = gv.clone();
        let mut g_in = vec![0.0; 2 * l];
        for j in 0..nv {
            let g_out = &gv[j * l..(j + 1) * l];
            if g_out.iter().all(|&x| x == 0.0) {
                continue;
            }
            g_in.iter_mut().for_each(|x| *x = 0.0);
            mlps[NODE_PROC].backward(
                p(NODE_PROC),
                &cache.node_in[s][j * 2 * l..(j + 1) * 2 * l],
                &cache.node_pre[s][j * h..(j + 1) * h],
                g_out,
                g_proc_v,
                Some(&mut g_in),
            );
            for (a, b) in gv_prev[j * l..(j + 1) * l].iter_mut().zip(&g_in[..l]) {
                *a += b;
            }
            for &i in &cache.incoming[j] {
                for (a, b) in ge_next[i * l..(i + 1) * l].iter_mut().zip(&g_in[l..]) {
                    *a += b;
                }
            }
        }
        // Edge update: e' = e + f([e, v_sender, v_receiver]).
        let mut ge_prev = ge_next.clone();
        let mut g_in = vec![0.0; 3 * l];
        for (i, edge) in fg.edges.iter().enumerate() {
            let g_out = &ge_next[i * l..(i + 1) * l];
            if g_out.iter().all(|&x| x == 0.0) {
                continue;
            }
            g_in.iter_mut().for_each(|x| *x = 0.0);
            mlps[EDGE_PROC].backward(
                p(EDGE_PROC),
                &cache.edge_in[s][i * 3 * l..(i + 1) * 3 * l],
                &cache.edge_pre[s][i * h..(i + 1) * h],
                g_out,
                g_proc_e,
                Some(&mut g_in),
            );
            for (a, b) in ge_prev[i * l..(i + 1) * l].iter_mut().zip(&g_in[..l]) {
                *a += b;
            }
            for (a, b) in gv_prev[edge.sender * l..(edge.sender + 1) * l].iter_mut().zip(&g_in[l..2 * l]) {
                *a += b;
            }
            for (a, b) in gv_prev[edge.receiver * l..(edge.receiver + 1) * l]
                .iter_mut()
                .zip(&g_in[2 * l..])
            {
                *a += b;
            }
        }
        ge = ge_prev;
        gv = gv_prev;
    }

    for (i, edge) in fg.edges.iter().enumerate() {
        let g_out = &ge[i * l..(i + 1) * l];
        if g_out.iter().any(|&x| x != 0.0) {
            mlps[EDGE_ENC].backward(
                p(EDGE_ENC),
                &edge.features,
                &cache.edge_enc_pre[i * h..(i + 1) * h],
                g_out,
                g_enc_e,
                None,
            );
        }
    }
    for (j, x) in fg.node_features.iter().enumerate() {
        let g_out = &gv[j * l..(j + 1) * l];
        if g_out.iter().any(|&x| x != 0.0) {
            mlps[NODE_ENC].backward(
                p(NODE_ENC),
                x,
                &cache.node_enc_pre[j * h..(j + 1) * h],
                g_out,
                g_enc_v,
                None,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sizes() {
        let shape = GraphNetShape::default();
        let m = shape.mlps();
        assert_eq!((m[0].input, m[2].input, m[3].input, m[4].output), (11, 48, 32, 1));
        assert_eq!(GraphNetParams::init(shape, 1).data.len(), shape.param_len());
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let shape = MlpShape {
            input: 3,
            hidden: 4,
            output: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p: Vec<f64> = (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = [0.3, -0.7, 1.1];
        let up = [0.4, -1.3];
        let f = |p: &[f64]| {
            let mut pre = [0.0; 4];
            let mut out = [0.0; 2];
            shape.forward(p, &x, &mut pre, &mut out);
            out[0] * up[0] + out[1] * up[1]
        };
        let mut pre = [0.0; 4];
        let mut out = [0.0; 2];
        shape.forward(&p, &x, &mut pre, &mut out);
        let mut g = vec![0.0; shape.len()];
        shape.backward(&p, &x, &pre, &up, &mut g, None);
        for i in 0..p.len() {
            let mut a = p.clone();
            let mut b = p.clone();
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (f(&a) - f(&b)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6, "param {i}: {fd} vs {}", g[i]);
        }
    }
}
