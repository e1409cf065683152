use hydrodiff::data::{ConditioningTuple, SeqDims};
use hydrodiff::diffusion::VelocityModel;
use hydrodiff::lstm::{lstm_cell, lstm_param_count, LstmArch, LstmBackbone, LstmConfig, LstmParams};
use hydrodiff::numerics::dense::sigmoid;
use hydrodiff::numerics::gradcheck::check_gradients;
use hydrodiff::numerics::{gaussian_sample, RngStream};

fn toy_dims() -> SeqDims {
    SeqDims {
        past_len: 16,
        future_len: 7,
        n_forcings: 5,
        n_static: 3,
    }
}

fn toy_config() -> LstmConfig {
    LstmConfig {
        hidden_size: 8,
        dropout: 0.0,
        time_embed_dim: 4,
        ..LstmConfig::default()
    }
}

fn tuple(dims: &SeqDims, seed: u64) -> ConditioningTuple {
    ConditioningTuple {
        past: gaussian_sample(&[dims.past_len, dims.n_forcings], seed),
        future: gaussian_sample(&[dims.future_len, dims.n_forcings], seed + 1),
        statics: RngStream::new(seed, 5).normals(dims.n_static),
    }
}

const ARCHS: [LstmArch; 2] = [LstmArch::EncoderDecoder, LstmArch::DecoderOnly];

#[test]
fn cell_with_forget_bias_only() {
    let hs = 3;
    let mut bias = vec![0.0; 4 * hs];
    bias[hs..2 * hs].iter_mut().for_each(|b| *b = 3.0);
    let p = LstmParams {
        input_size: 2,
        hidden_size: hs,
        w_ih: vec![0.0; 2 * 4 * hs],
        w_hh: vec![0.0; hs * 4 * hs],
        bias,
    };
    let c_prev = [0.5, -1.0, 2.0];
    let (h, c) = lstm_cell(&[1.0, -2.0], &[0.3, 0.1, -0.2], &c_prev, &p);
    for j in 0..hs {
        let want_c = sigmoid(3.0) * c_prev[j];
        assert!((c[j] - want_c).abs() < 1e-15);
        assert!((h[j] - 0.5 * want_c.tanh()).abs() < 1e-15);
    }
    // Zero input and state: g = tanh(0) = 0, so the state stays at zero.
    let (h0, c0) = lstm_cell(&[0.0, 0.0], &[0.0; 3], &[0.0; 3], &p);
    assert_eq!(h0, vec![0.0; 3]);
    assert_eq!(c0, vec![0.0; 3]);
}

#[test]
fn default_state_width_is_256() {
    let bb = LstmBackbone::new(LstmArch::DecoderOnly, LstmConfig::default(), SeqDims::default()).unwrap();
    let p = bb.init_params(&mut RngStream::new(1, 0));
    let block = p.expect("lstm.w_hh");
    assert_eq!(block.shape(), [256, 1024]);
    let bias = p.expect("lstm.bias").data();
    assert!(bias[256..512].iter().all(|b| *b == 3.0));
    assert!(bias[..256].iter().all(|b| *b == 0.0));
}

#[test]
fn parameter_counts_follow_gate_arithmetic() {
    let dims = SeqDims::default();
    let cfg = LstmConfig::default();
    let (h, e, d_in) = (256, 32, 33);
    let enc = LstmBackbone::new(LstmArch::EncoderDecoder, cfg.clone(), dims).unwrap();
    let p = enc.init_params(&mut RngStream::new(1, 0));
    let want = lstm_param_count(32, h) + lstm_param_count(d_in, h) + (e * 2 * h + 2 * h) + (h + 1);
    assert_eq!(p.scalar_count(), want);
    let dec = LstmBackbone::new(LstmArch::DecoderOnly, cfg, dims).unwrap();
    let p = dec.init_params(&mut RngStream::new(1, 0));
    assert_eq!(p.scalar_count(), lstm_param_count(d_in, h) + (e * d_in + d_in) + (h + 1));
    assert_eq!(lstm_param_count(33, 256), 4 * 256 * (33 + 256) + 4 * 256);
}

#[test]
fn output_shape_determinism_and_past_sensitivity() {
    let dims = SeqDims::default();
    let cfg = LstmConfig {
        hidden_size: 8,
        ..LstmConfig::default()
    };
    for arch in ARCHS {
        let bb = LstmBackbone::new(arch, cfg.clone(), dims).unwrap();
        let p = bb.init_params(&mut RngStream::new(2, 0));
        let c = tuple(&dims, 3);
        let x = vec![0.1; 8];
        let a = bb.predict(&p, &[&c], &[&x], &[0.4]).unwrap();
        assert_eq!(a.shape(), [1, 8]);
        assert_eq!(a, bb.predict(&p, &[&c], &[&x], &[0.4]).unwrap());
        let mut moved = c.clone();
        moved.past.data_mut()[360 * 5] += 1.0;
        let b = bb.predict(&p, &[&moved], &[&x], &[0.4]).unwrap();
        assert_ne!(a, b, "{arch:?} ignores the past window");
    }
}

#[test]
fn gradients_match_finite_differences() {
    let dims = toy_dims();
    for arch in ARCHS {
        let bb = LstmBackbone::new(arch, toy_config(), dims).unwrap();
        let params = bb.init_params(&mut RngStream::new(7, 0));
        let tuples = [tuple(&dims, 1), tuple(&dims, 9)];
        let xs = [vec![0.3, -0.2, 0.5, 1.0, -0.7, 0.2, 0.1, -0.4], vec![0.9; 8]];
        let target: Vec<f64> = (0..16).map(|i| (i as f64 * 0.3).cos()).collect();
        let report = check_gradients(
            &params,
            |t, v| {
                let inputs = bb.batch_input(&[&tuples[0], &tuples[1]], &[&xs[0], &xs[1]])?;
                let out = bb.forward(t, v, inputs, &[0.2, 0.7], None)?;
                Ok(t.mse(out, &target))
            },
            1e-4,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{arch:?}: {report:?}");
    }
}

#[test]
fn cached_velocity_matches_full_forward() {
    let dims = SeqDims::default();
    let cfg = LstmConfig {
        hidden_size: 12,
        ..LstmConfig::default()
    };
    for arch in ARCHS {
        let bb = LstmBackbone::new(arch, cfg.clone(), dims).unwrap();
        let p = bb.init_params(&mut RngStream::new(4, 0));
        let c = tuple(&dims, 6);
        let cached = bb.condition(&p, &c).unwrap();
        let xs: Vec<Vec<f64>> = (0..2).map(|s| RngStream::new(s, 2).normals(8)).collect();
        for tau in [0.0, 0.6] {
            let fast = cached.velocity_batch(&xs, tau).unwrap();
            for (x, v) in xs.iter().zip(&fast) {
                let full = bb.predict(&p, &[&c], &[x], &[tau]).unwrap();
                for (a, b) in full.data().iter().zip(v) {
                    assert!((a - b).abs() < 1e-10, "{arch:?}: {a} vs {b}");
                }
            }
        }
    }
}
