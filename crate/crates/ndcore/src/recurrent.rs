use rand::Rng;

use crate::params::ParameterSet;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::{NdError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    Gru,
    Lstm,
}

#[derive(Clone, Copy, Debug)]
pub struct RecurrentCellConfig {
    pub kind: CellKind,
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl RecurrentCellConfig {
    pub fn new(kind: CellKind, input: usize, hidden: usize, layers: usize) -> Result<Self> {
        if input < 1 || hidden < 1 || layers < 1 {
            return Err(NdError::Contract(format!(
                "recurrent sizes must be >= 1, got input {input}, hidden {hidden}, layers {layers}"
            )));
        }
        Ok(RecurrentCellConfig {
            kind,
            input,
            hidden,
            layers,
        })
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input
        } else {
            self.hidden
        }
    }
}

/// Gate parameter names for one GRU layer: x-weights U, state-weights W, bias b.
const GRU_GATES: [&str; 3] = ["z", "r", "h"];
/// Gate parameter names for one LSTM layer: input, forget, output, candidate.
const LSTM_GATES: [&str; 4] = ["i", "f", "o", "g"];

fn gate_names(kind: CellKind) -> &'static [&'static str] {
    match kind {
        CellKind::Gru => &GRU_GATES,
        CellKind::Lstm => &LSTM_GATES,
    }
}

/// Register fresh parameters for a whole stack under `prefix`.
/// Weights are uniform in [-1/sqrt(hidden), 1/sqrt(hidden)]; biases start at 0.
pub fn init_stack<R: Rng>(
    ps: &mut ParameterSet,
    cfg: &RecurrentCellConfig,
    prefix: &str,
    rng: &mut R,
) -> Result<()> {
    let bound = 1.0 / (cfg.hidden as f64).sqrt();
    for l in 0..cfg.layers {
        let inp = cfg.layer_input(l);
        for gate in gate_names(cfg.kind) {
            ps.insert_uniform(
                &format!("{prefix}.l{l}.u_{gate}"),
                &[inp, cfg.hidden],
                bound,
                rng,
            )?;
            ps.insert_uniform(
                &format!("{prefix}.l{l}.w_{gate}"),
                &[cfg.hidden, cfg.hidden],
                bound,
                rng,
            )?;
            ps.insert(&format!("{prefix}.l{l}.b_{gate}"), Tensor::zeros(&[1, cfg.hidden]))?;
        }
    }
    Ok(())
}

/// Parameter vars for one layer, bound to a specific tape.
pub struct LayerVars {
    pub u: Vec<Var>,
    pub w: Vec<Var>,
    pub b: Vec<Var>,
}

/// All layer parameter vars of a stack, bound to a specific tape.
pub struct StackVars {
    pub layers: Vec<LayerVars>,
    pub cfg: RecurrentCellConfig,
}

/// Bind every stack parameter onto `tape`; the result drives `stack_step`.
pub fn bind_stack(
    tape: &mut Tape,
    ps: &ParameterSet,
    cfg: &RecurrentCellConfig,
    prefix: &str,
) -> StackVars {
    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let mut u = Vec::new();
        let mut w = Vec::new();
        let mut b = Vec::new();
        for gate in gate_names(cfg.kind) {
            u.push(tape.param(ps, &format!("{prefix}.l{l}.u_{gate}")));
            w.push(tape.param(ps, &format!("{prefix}.l{l}.w_{gate}")));
            b.push(tape.param(ps, &format!("{prefix}.l{l}.b_{gate}")));
        }
        layers.push(LayerVars { u, w, b });
    }
    StackVars { layers, cfg: *cfg }
}

/// Recurrent state of a stack on one tape: hidden per layer, plus the cell
/// column for LSTM layers.
pub struct StackState {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
}

/// Zero state for a batch of `batch` rows.
pub fn zero_state(tape: &mut Tape, cfg: &RecurrentCellConfig, batch: usize) -> StackState {
    let h = (0..cfg.layers)
        .map(|_| tape.constant(Tensor::zeros(&[batch, cfg.hidden])))
        .collect();
    let c = (0..cfg.layers)
        .map(|_| tape.constant(Tensor::zeros(&[batch, cfg.hidden])))
        .collect();
    StackState { h, c }
}

fn gate_preact(tape: &mut Tape, x: Var, s: Var, lv: &LayerVars, gi: usize) -> Var {
    let xu = tape.matmul(x, lv.u[gi]);
    let sw = tape.matmul(s, lv.w[gi]);
    let lin = tape.add(xu, sw);
    tape.add_row(lin, lv.b[gi])
}

/// One GRU step: z and r are sigmoid gates, h~ mixes the reset state, and the
/// new state is the convex combination (1-z)*h~ + z*s_prev.
pub fn gru_step(tape: &mut Tape, x: Var, s_prev: Var, lv: &LayerVars) -> Result<Var> {
    check_step_shapes(tape, x, s_prev, lv)?;
    let z_pre = gate_preact(tape, x, s_prev, lv, 0);
    let z = tape.sigmoid(z_pre);
    let r_pre = gate_preact(tape, x, s_prev, lv, 1);
    let r = tape.sigmoid(r_pre);
    let sr = tape.mul(s_prev, r);
    let h_pre = gate_preact(tape, x, sr, lv, 2);
    let h = tape.tanh(h_pre);
    let ones = {
        let shape = tape.value(z).shape().to_vec();
        tape.constant(Tensor::filled(&shape, 1.0))
    };
    let one_minus_z = tape.sub(ones, z);
    let a = tape.mul(one_minus_z, h);
    let b = tape.mul(z, s_prev);
    Ok(tape.add(a, b))
}

/// One LSTM step; returns (h, c). c is unbounded, h stays in (-1, 1).
pub fn lstm_step(
    tape: &mut Tape,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    lv: &LayerVars,
) -> Result<(Var, Var)> {
    check_step_shapes(tape, x, h_prev, lv)?;
    let i_pre = gate_preact(tape, x, h_prev, lv, 0);
    let i = tape.sigmoid(i_pre);
    let f_pre = gate_preact(tape, x, h_prev, lv, 1);
    let f = tape.sigmoid(f_pre);
    let o_pre = gate_preact(tape, x, h_prev, lv, 2);
    let o = tape.sigmoid(o_pre);
    let g_pre = gate_preact(tape, x, h_prev, lv, 3);
    let g = tape.tanh(g_pre);
    let fc = tape.mul(f, c_prev);
    let ig = tape.mul(i, g);
    let c = tape.add(fc, ig);
    let ct = tape.tanh(c);
    let h = tape.mul(o, ct);
    Ok((h, c))
}

fn check_step_shapes(tape: &Tape, x: Var, s: Var, lv: &LayerVars) -> Result<()> {
    let xs = tape.value(x).shape();
    let ss = tape.value(s).shape();
    let us = tape.value(lv.u[0]).shape();
    let ws = tape.value(lv.w[0]).shape();
    if xs.len() != 2 || ss.len() != 2 || xs[0] != ss[0] {
        return Err(NdError::Shape(format!(
            "batch mismatch: x {xs:?} vs state {ss:?}"
        )));
    }
    if xs[1] != us[0] {
        return Err(NdError::Shape(format!(
            "input width {} does not match U rows {}",
            xs[1], us[0]
        )));
    }
    if ss[1] != ws[0] {
        return Err(NdError::Shape(format!(
            "state width {} does not match W rows {}",
            ss[1], ws[0]
        )));
    }
    Ok(())
}

/// Advance a whole stack one step; `state` is updated in place and the top
/// layer's hidden var is returned.
pub fn stack_step(
    tape: &mut Tape,
    sv: &StackVars,
    state: &mut StackState,
    x: Var,
) -> Result<Var> {
    let mut inp = x;
    for (l, lv) in sv.layers.iter().enumerate() {
        match sv.cfg.kind {
            CellKind::Gru => {
                let s = gru_step(tape, inp, state.h[l], lv)?;
                state.h[l] = s;
                inp = s;
            }
            CellKind::Lstm => {
                let (h, c) = lstm_step(tape, inp, state.h[l], state.c[l], lv)?;
                state.h[l] = h;
                state.c[l] = c;
                inp = h;
            }
        }
    }
    Ok(inp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = 1.0e-12;

    fn zero_layer(tape: &mut Tape, kind: CellKind, inp: usize, hid: usize) -> LayerVars {
        let gates = gate_names(kind).len();
        LayerVars {
            u: (0..gates)
                .map(|_| tape.constant(Tensor::zeros(&[inp, hid])))
                .collect(),
            w: (0..gates)
                .map(|_| tape.constant(Tensor::zeros(&[hid, hid])))
                .collect(),
            b: (0..gates)
                .map(|_| tape.constant(Tensor::zeros(&[1, hid])))
                .collect(),
        }
    }

    // Scalar-loop oracle for one GRU step, written directly against the gate
    // equations with no shared code with the tape ops.
    fn gru_oracle(
        x: &[Vec<f64>],
        s: &[Vec<f64>],
        u: &[Vec<Vec<f64>>],
        w: &[Vec<Vec<f64>>],
        b: &[Vec<f64>],
    ) -> Vec<Vec<f64>> {
        let bsz = x.len();
        let hid = s[0].len();
        let inp = x[0].len();
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let mut out = vec![vec![0.0; hid]; bsz];
        for r in 0..bsz {
            for j in 0..hid {
                let mut zp = b[0][j];
                for k in 0..inp {
                    zp += x[r][k] * u[0][k][j];
                }
                for k in 0..hid {
                    zp += s[r][k] * w[0][k][j];
                }
                let z = sig(zp);
                // reset acts elementwise on the state columns feeding the
                // candidate, so each k gets its own reset value.
                let mut hp = b[2][j];
                for k in 0..inp {
                    hp += x[r][k] * u[2][k][j];
                }
                for k in 0..hid {
                    let mut rpk = b[1][k];
                    for kk in 0..inp {
                        rpk += x[r][kk] * u[1][kk][k];
                    }
                    for kk in 0..hid {
                        rpk += s[r][kk] * w[1][kk][k];
                    }
                    hp += s[r][k] * sig(rpk) * w[2][k][j];
                }
                let h = hp.tanh();
                out[r][j] = (1.0 - z) * h + z * s[r][j];
            }
        }
        out
    }

    #[test]
    fn zero_everything_gives_zero_state() {
        // sigmoid(0) = 0.5 for both gates, tanh(0) = 0, so s' = 0.5 * 0 + 0.5 * 0.
        let mut tape = Tape::new();
        let lv = zero_layer(&mut tape, CellKind::Gru, 3, 4);
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        let s = tape.constant(Tensor::zeros(&[2, 4]));
        let out = gru_step(&mut tape, x, s, &lv).expect("shapes conform");
        assert!(tape.value(out).values().iter().all(|v| v.abs() < EPS));
    }

    #[test]
    fn saturated_update_gate_is_identity_on_state() {
        let mut tape = Tape::new();
        let mut lv = zero_layer(&mut tape, CellKind::Gru, 2, 3);
        // push the z pre-activation to +40: sigmoid saturates to 1.
        lv.b[0] = tape.constant(Tensor::filled(&[1, 3], 40.0));
        let x = tape.constant(Tensor::from_vec(&[1, 2], vec![0.3, -1.2]).expect("shape"));
        let s = tape.constant(Tensor::from_vec(&[1, 3], vec![0.5, -0.25, 2.0]).expect("shape"));
        let out = gru_step(&mut tape, x, s, &lv).expect("shapes conform");
        for (o, want) in tape.value(out).values().iter().zip([0.5, -0.25, 2.0]) {
            assert!((o - want).abs() < 1e-12);
        }
    }

    #[test]
    fn random_gru_step_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (bsz, inp, hid) = (2, 3, 4);
        let mut ps = ParameterSet::new();
        let cfg = RecurrentCellConfig::new(CellKind::Gru, inp, hid, 1).expect("valid sizes");
        init_stack(&mut ps, &cfg, "g", &mut rng).expect("init");
        // overwrite biases with nonzero values so they participate.
        for gate in GRU_GATES {
            *ps.value_mut(&format!("g.l0.b_{gate}")).expect("exists") =
                Tensor::uniform(&[1, hid], 0.5, &mut rng);
        }
        let x = Tensor::uniform(&[bsz, inp], 1.0, &mut rng);
        let s = Tensor::uniform(&[bsz, hid], 1.0, &mut rng);

        let mut tape = Tape::new();
        let sv = bind_stack(&mut tape, &ps, &cfg, "g");
        let xv = tape.constant(x.clone());
        let sv0 = tape.constant(s.clone());
        let out = gru_step(&mut tape, xv, sv0, &sv.layers[0]).expect("shapes conform");

        let grab2 = |t: &Tensor| -> Vec<Vec<f64>> {
            (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
        };
        let grab3 = |name: &str| -> Vec<Vec<f64>> {
            grab2(ps.value(name).expect("exists"))
        };
        let u: Vec<_> = GRU_GATES.iter().map(|g| grab3(&format!("g.l0.u_{g}"))).collect();
        let w: Vec<_> = GRU_GATES.iter().map(|g| grab3(&format!("g.l0.w_{g}"))).collect();
        let b: Vec<Vec<f64>> = GRU_GATES
            .iter()
            .map(|g| ps.value(&format!("g.l0.b_{g}")).expect("exists").values().to_vec())
            .collect();
        let want = gru_oracle(&grab2(&x), &grab2(&s), &u, &w, &b);
        for r in 0..bsz {
            for j in 0..hid {
                assert!(
                    (tape.value(out).at(r, j) - want[r][j]).abs() < EPS,
                    "mismatch at ({r},{j})"
                );
            }
        }
    }

    // Scalar-loop oracle for one LSTM step.
    fn lstm_oracle(
        x: &[Vec<f64>],
        h: &[Vec<f64>],
        c: &[Vec<f64>],
        u: &[Vec<Vec<f64>>],
        w: &[Vec<Vec<f64>>],
        b: &[Vec<f64>],
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let bsz = x.len();
        let hid = h[0].len();
        let inp = x[0].len();
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let mut ho = vec![vec![0.0; hid]; bsz];
        let mut co = vec![vec![0.0; hid]; bsz];
        for r in 0..bsz {
            for j in 0..hid {
                let mut pre = [b[0][j], b[1][j], b[2][j], b[3][j]];
                for (gi, p) in pre.iter_mut().enumerate() {
                    for k in 0..inp {
                        *p += x[r][k] * u[gi][k][j];
                    }
                    for k in 0..hid {
                        *p += h[r][k] * w[gi][k][j];
                    }
                }
                let (i, f, o, g) = (sig(pre[0]), sig(pre[1]), sig(pre[2]), pre[3].tanh());
                let cj = f * c[r][j] + i * g;
                co[r][j] = cj;
                ho[r][j] = o * cj.tanh();
            }
        }
        (ho, co)
    }

    #[test]
    fn zero_lstm_gives_zero_h_and_c() {
        let mut tape = Tape::new();
        let lv = zero_layer(&mut tape, CellKind::Lstm, 3, 4);
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        let h = tape.constant(Tensor::zeros(&[2, 4]));
        let c = tape.constant(Tensor::zeros(&[2, 4]));
        let (h2, c2) = lstm_step(&mut tape, x, h, c, &lv).expect("shapes conform");
        assert!(tape.value(h2).values().iter().all(|v| v.abs() < EPS));
        assert!(tape.value(c2).values().iter().all(|v| v.abs() < EPS));
    }

    #[test]
    fn saturated_forget_and_closed_input_carry_cell_through() {
        let mut tape = Tape::new();
        let mut lv = zero_layer(&mut tape, CellKind::Lstm, 2, 3);
        lv.b[1] = tape.constant(Tensor::filled(&[1, 3], 40.0)); // forget -> 1
        lv.b[0] = tape.constant(Tensor::filled(&[1, 3], -40.0)); // input -> 0
        let x = tape.constant(Tensor::from_vec(&[1, 2], vec![1.0, -1.0]).expect("shape"));
        let h = tape.constant(Tensor::zeros(&[1, 3]));
        let c = tape.constant(Tensor::from_vec(&[1, 3], vec![0.7, -1.5, 3.0]).expect("shape"));
        let (_, c2) = lstm_step(&mut tape, x, h, c, &lv).expect("shapes conform");
        for (got, want) in tape.value(c2).values().iter().zip([0.7, -1.5, 3.0]) {
            assert!((got - want).abs() < EPS);
        }
    }

    #[test]
    fn random_lstm_step_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (bsz, inp, hid) = (2, 3, 4);
        let mut ps = ParameterSet::new();
        let cfg = RecurrentCellConfig::new(CellKind::Lstm, inp, hid, 1).expect("valid sizes");
        init_stack(&mut ps, &cfg, "m", &mut rng).expect("init");
        for gate in LSTM_GATES {
            *ps.value_mut(&format!("m.l0.b_{gate}")).expect("exists") =
                Tensor::uniform(&[1, hid], 0.5, &mut rng);
        }
        let x = Tensor::uniform(&[bsz, inp], 1.0, &mut rng);
        let h = Tensor::uniform(&[bsz, hid], 1.0, &mut rng);
        let c = Tensor::uniform(&[bsz, hid], 1.0, &mut rng);

        let mut tape = Tape::new();
        let sv = bind_stack(&mut tape, &ps, &cfg, "m");
        let xv = tape.constant(x.clone());
        let hv = tape.constant(h.clone());
        let cv = tape.constant(c.clone());
        let (h2, c2) = lstm_step(&mut tape, xv, hv, cv, &sv.layers[0]).expect("shapes conform");

        let grab2 = |t: &Tensor| -> Vec<Vec<f64>> {
            (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
        };
        let u: Vec<_> = LSTM_GATES
            .iter()
            .map(|g| grab2(ps.value(&format!("m.l0.u_{g}")).expect("exists")))
            .collect();
        let w: Vec<_> = LSTM_GATES
            .iter()
            .map(|g| grab2(ps.value(&format!("m.l0.w_{g}")).expect("exists")))
            .collect();
        let b: Vec<Vec<f64>> = LSTM_GATES
            .iter()
            .map(|g| ps.value(&format!("m.l0.b_{g}")).expect("exists").values().to_vec())
            .collect();
        let (hw, cw) = lstm_oracle(&grab2(&x), &grab2(&h), &grab2(&c), &u, &w, &b);
        for r in 0..bsz {
            for j in 0..hid {
                assert!((tape.value(h2).at(r, j) - hw[r][j]).abs() < EPS);
                assert!((tape.value(c2).at(r, j) - cw[r][j]).abs() < EPS);
            }
        }
    }

    #[test]
    fn h_stays_inside_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParameterSet::new();
        let cfg = RecurrentCellConfig::new(CellKind::Lstm, 2, 3, 2).expect("valid sizes");
        init_stack(&mut ps, &cfg, "s", &mut rng).expect("init");
        let mut tape = Tape::new();
        let sv = bind_stack(&mut tape, &ps, &cfg, "s");
        let mut st = zero_state(&mut tape, &cfg, 4);
        for _ in 0..6 {
            let x = Tensor::uniform(&[4, 2], 5.0, &mut rng);
            let xv = tape.constant(x);
            let top = stack_step(&mut tape, &sv, &mut st, xv).expect("shapes conform");
            assert!(tape
                .value(top)
                .values()
                .iter()
                .all(|v| v.abs() < 1.0 && v.is_finite()));
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut tape = Tape::new();
        let lv = zero_layer(&mut tape, CellKind::Gru, 3, 4);
        let x = tape.constant(Tensor::zeros(&[2, 5]));
        let s = tape.constant(Tensor::zeros(&[2, 4]));
        assert!(matches!(
            gru_step(&mut tape, x, s, &lv),
            Err(NdError::Shape(_))
        ));
    }
}
