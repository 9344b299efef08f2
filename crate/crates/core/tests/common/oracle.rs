//! Plain nested-loop forward pass over the same named parameters, with no
//! use of the tape, the matmul kernel, or any layer code.

use mtss::data::{BatchInputs, EncodedBatch};
use mtss::{Mode, Model, Task};

pub struct OracleOutput {
    pub loss: f64,
    pub pol: Option<Vec<Vec<f64>>>,
    pub subj: Option<Vec<Vec<f64>>>,
}

struct P<'a> {
    model: &'a Model<f64>,
}

impl P<'_> {
    fn get(&self, name: &str) -> &[f64] {
        let id = self.model.store.id(name).unwrap_or_else(|| panic!("no parameter {name}"));
        self.model.store.value(id).data()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn act(name: &str, x: f64) -> f64 {
    match name {
        "tanh" => x.tanh(),
        "relu" => x.max(0.0),
        _ => x,
    }
}

/// `y[j] = act(Σ_i x[i] w[i][j] + b[j])`, `w` row-major `n_in × n_out`.
fn dense(x: &[f64], w: &[f64], b: &[f64], activation: &str) -> Vec<f64> {
    let n_out = b.len();
    (0..n_out)
        .map(|j| {
            let mut z = b[j];
            for (i, xi) in x.iter().enumerate() {
                z += xi * w[i * n_out + j];
            }
            act(activation, z)
        })
        .collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// One direction of the peephole LSTM over `xs`; outputs stay aligned with
/// input positions.
fn lstm(p: &P, prefix: &str, xs: &[Vec<f64>], reverse: bool) -> Vec<Vec<f64>> {
    let g = |name: &str| p.get(&format!("{prefix}.{name}"));
    let h_dim = g("b_i").len();
    let d_in = xs[0].len();
    let gate_in = |gate: &str, x: &[f64], h: &[f64], k: usize| {
        let (wx, wh, b) = (g(&format!("w_x{gate}")), g(&format!("w_h{gate}")), g(&format!("b_{gate}")));
        let mut z = b[k];
        for i in 0..d_in {
            z += x[i] * wx[i * h_dim + k];
        }
        for i in 0..h_dim {
            z += h[i] * wh[i * h_dim + k];
        }
        z
    };
    let (wci, wcf, wco) = (g("w_ci"), g("w_cf"), g("w_co"));
    let mut h = vec![0.0; h_dim];
    let mut c = vec![0.0; h_dim];
    let mut out = vec![Vec::new(); xs.len()];
    let order: Vec<usize> = if reverse { (0..xs.len()).rev().collect() } else { (0..xs.len()).collect() };
    for t in order {
        let x = &xs[t];
        let mut h_new = vec![0.0; h_dim];
        let mut c_new = vec![0.0; h_dim];
        for k in 0..h_dim {
            let i = sigmoid(gate_in("i", x, &h, k) + wci[k] * c[k]);
            let f = sigmoid(gate_in("f", x, &h, k) + wcf[k] * c[k]);
            let cand = gate_in("c", x, &h, k).tanh();
            c_new[k] = f * c[k] + i * cand;
            let o = sigmoid(gate_in("o", x, &h, k) + wco[k] * c_new[k]);
            h_new[k] = o * c_new[k].tanh();
        }
        h = h_new;
        c = c_new;
        out[t] = h.clone();
    }
    out
}

/// `(Fn, X)` for every row of `batch`.
fn encode(p: &P, model: &Model<f64>, task: Task, batch: &EncodedBatch<f64>) -> Vec<(Vec<f64>, Vec<f64>)> {
    let cfg = &model.config;
    let a = cfg.activation.name();
    let pre = task.name();
    let g = |name: &str| p.get(&format!("{pre}.{name}"));
    let (l, d) = (batch.max_len, cfg.d_emb);
    (0..batch.batch)
        .map(|b| {
            let xs: Vec<Vec<f64>> = (0..l)
                .map(|t| match &batch.inputs {
                    BatchInputs::Tokens(ids) => {
                        let id = ids[b * l + t];
                        g("embedding")[id * d..(id + 1) * d].to_vec()
                    }
                    BatchInputs::Embeddings(e) => e.data()[(b * l + t) * d..(b * l + t + 1) * d].to_vec(),
                })
                .collect();
            let fw = lstm(p, &format!("{pre}.lstm.fwd"), &xs, false);
            let bw = lstm(p, &format!("{pre}.lstm.bwd"), &xs, true);
            let f: Vec<Vec<f64>> = (0..l)
                .map(|t| {
                    let h: Vec<f64> = fw[t].iter().chain(&bw[t]).copied().collect();
                    dense(&h, g("tdfc.w"), g("tdfc.b"), a)
                })
                .collect();

            let mask = batch.mask_row(b);
            let w_att = g("att.w");
            let w_alpha = g("att.alpha");
            let score: Vec<f64> = (0..l)
                .map(|t| {
                    let z: f64 = f[t].iter().zip(w_att).map(|(x, w)| x * w).sum();
                    let s = z.tanh();
                    if cfg.attention_mask && mask[t] == 0 {
                        0.0
                    } else {
                        s
                    }
                })
                .collect();
            let logits: Vec<f64> = (0..l)
                .map(|j| {
                    let z: f64 = (0..l).map(|t| score[t] * w_alpha[t * l + j]).sum();
                    if cfg.attention_mask && mask[j] == 0 {
                        z - 1e9
                    } else {
                        z
                    }
                })
                .collect();
            let alpha = softmax(&logits);
            let s: Vec<f64> = (0..cfg.d_f).map(|k| (0..l).map(|t| alpha[t] * f[t][k]).sum()).collect();
            let fn_ = dense(&s, g("fc.w"), g("fc.b"), a);
            let x = dense(&fn_, g("out.w"), g("out.b"), a);
            (fn_, x)
        })
        .collect()
}

fn ntn(p: &P, s1: &[f64], s2: &[f64]) -> Vec<f64> {
    let (t, w, b) = (p.get("ntn.t"), p.get("ntn.w"), p.get("ntn.b"));
    let k_dim = b.len();
    let d = s1.len();
    let cat: Vec<f64> = s1.iter().chain(s2).copied().collect();
    (0..k_dim)
        .map(|k| {
            let mut z = b[k];
            for i in 0..d {
                for j in 0..d {
                    z += s1[i] * t[(k * d + i) * d + j] * s2[j];
                }
            }
            for (i, c) in cat.iter().enumerate() {
                z += c * w[i * k_dim + k];
            }
            z.tanh()
        })
        .collect()
}

fn head(p: &P, task: Task, x: &[f64], n: Option<&[f64]>) -> Vec<f64> {
    let w = p.get(&format!("{}.head.w", task.name()));
    let b = p.get(&format!("{}.head.b", task.name()));
    let input: Vec<f64> = x.iter().chain(n.unwrap_or(&[])).copied().collect();
    let z: Vec<f64> = (0..2)
        .map(|c| b[c] + input.iter().enumerate().map(|(i, v)| v * w[i * 2 + c]).sum::<f64>())
        .collect();
    softmax(&z)
}

fn xent(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    -probs.iter().zip(labels).map(|(p, &y)| p[y].max(1e-12).ln()).sum::<f64>() / labels.len() as f64
}

pub fn forward(
    model: &Model<f64>,
    mode: Mode,
    pol: Option<&EncodedBatch<f64>>,
    subj: Option<&EncodedBatch<f64>>,
) -> OracleOutput {
    let p = P { model };
    let cfg = &model.config;
    match mode {
        Mode::Mtl => {
            let (pb, sb) = (pol.unwrap(), subj.unwrap());
            let ep = encode(&p, model, Task::Pol, pb);
            let es = encode(&p, model, Task::Subj, sb);
            let mut pp = Vec::new();
            let mut ps = Vec::new();
            for b in 0..pb.batch {
                let n = if cfg.ntn_ablate { vec![0.0; cfg.d_ntn] } else { ntn(&p, &es[b].0, &ep[b].0) };
                pp.push(head(&p, Task::Pol, &ep[b].1, Some(&n)));
                ps.push(head(&p, Task::Subj, &es[b].1, Some(&n)));
            }
            let loss = cfg.w_subj * xent(&ps, &sb.labels) + cfg.w_pol * xent(&pp, &pb.labels);
            OracleOutput { loss, pol: Some(pp), subj: Some(ps) }
        }
        single => {
            let task = single.tasks()[0];
            let batch = if task == Task::Pol { pol.unwrap() } else { subj.unwrap() };
            let probs: Vec<Vec<f64>> = encode(&p, model, task, batch).iter().map(|(_, x)| head(&p, task, x, None)).collect();
            let loss = xent(&probs, &batch.labels);
            let (pol, subj) = if task == Task::Pol { (Some(probs), None) } else { (None, Some(probs)) };
            OracleOutput { loss, pol, subj }
        }
    }
}
