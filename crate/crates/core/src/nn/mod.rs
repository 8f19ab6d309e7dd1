//! Minimal reverse-mode autodiff and the layers built on it.
//!
//! Training, inference and the gradient-check oracles all run through one
//! tape implementation, so the differentiated forward pass is exactly the
//! forward pass the pipeline ships.

mod adam;
mod graph;
mod kernels;
mod layers;

pub use adam::{Adam, AdamState};
pub use graph::{Tape, Var};
pub use kernels::{conv2d_out_dim, convt2d_out_dim};
pub use layers::{Conv2d, ConvT2d, FilmLayer, Linear, ParamGroup, ResBlock, LRELU_SLOPE};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_tensor, stream_rng};
    use crate::tensor::Tensor;

    /// Central finite-difference check of every parameter gradient of a
    /// scalar-valued graph builder. `build` must be a pure function of the
    /// bound parameter values.
    fn check_grads(
        params: &mut Vec<(String, Tensor<f64>)>,
        build: &dyn Fn(&mut Tape<f64>, &[(String, Tensor<f64>)]) -> Var,
    ) {
        let mut tape = Tape::new();
        let loss = build(&mut tape, params);
        let grads = tape.backward(loss);
        let h = 1e-5;
        for pi in 0..params.len() {
            let name = params[pi].0.clone();
            let g = grads
                .get(&name)
                .unwrap_or_else(|| panic!("no grad for {name}"));
            for idx in 0..params[pi].1.numel() {
                let orig = params[pi].1.data()[idx];
                params[pi].1.data_mut()[idx] = orig + h;
                let mut tp = Tape::new();
                let lv = build(&mut tp, params);
                let lp = tp.scalar(lv);
                params[pi].1.data_mut()[idx] = orig - h;
                let mut tm = Tape::new();
                let lv = build(&mut tm, params);
                let lm = tm.scalar(lv);
                params[pi].1.data_mut()[idx] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = g.data()[idx];
                let denom = an.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (an - fd).abs() / denom < 1e-4,
                    "{name}[{idx}]: analytic {an} vs fd {fd}"
                );
            }
        }
    }

    fn rt(shape: &[usize], seed: u64) -> Tensor<f64> {
        normal_tensor(shape, &mut stream_rng(seed, 0))
    }

    #[test]
    fn conv2d_gradients() {
        let mut params = vec![
            ("x".to_string(), rt(&[2, 3, 5, 5], 1)),
            ("w".to_string(), rt(&[4, 3, 3, 3], 2).map(|v| v * 0.2)),
            ("b".to_string(), rt(&[4], 3)),
        ];
        let target = rt(&[2, 4, 5, 5], 4);
        check_grads(&mut params, &|t, p| {
            let x = t.bind("x", &p[0].1);
            let w = t.bind("w", &p[1].1);
            let b = t.bind("b", &p[2].1);
            let y = t.conv2d(x, w, b, 1, 1);
            let tgt = t.input(target.clone());
            t.mse(y, tgt)
        });
    }

    #[test]
    fn strided_conv2d_gradients() {
        let mut params = vec![
            ("x".to_string(), rt(&[1, 2, 6, 6], 5)),
            ("w".to_string(), rt(&[3, 2, 3, 3], 6).map(|v| v * 0.2)),
            ("b".to_string(), rt(&[3], 7)),
        ];
        let target = rt(&[1, 3, 3, 3], 8);
        check_grads(&mut params, &|t, p| {
            let x = t.bind("x", &p[0].1);
            let w = t.bind("w", &p[1].1);
            let b = t.bind("b", &p[2].1);
            let y = t.conv2d(x, w, b, 2, 1);
            let tgt = t.input(target.clone());
            t.mse(y, tgt)
        });
    }

    #[test]
    fn convt2d_gradients() {
        let mut params = vec![
            ("x".to_string(), rt(&[1, 3, 4, 4], 9)),
            ("w".to_string(), rt(&[3, 2, 4, 4], 10).map(|v| v * 0.2)),
            ("b".to_string(), rt(&[2], 11)),
        ];
        let target = rt(&[1, 2, 8, 8], 12);
        check_grads(&mut params, &|t, p| {
            let x = t.bind("x", &p[0].1);
            let w = t.bind("w", &p[1].1);
            let b = t.bind("b", &p[2].1);
            let y = t.convt2d(x, w, b, 2, 1);
            let tgt = t.input(target.clone());
            t.mse(y, tgt)
        });
    }

    #[test]
    fn composite_graph_gradients() {
        // conv -> lrelu -> film -> pool -> linear -> l1, with the conv weight
        // reused twice to exercise gradient accumulation across bindings.
        let mut params = vec![
            ("x".to_string(), rt(&[2, 3, 4, 4], 20)),
            ("w".to_string(), rt(&[3, 3, 3, 3], 21).map(|v| v * 0.3)),
            ("b".to_string(), rt(&[3], 22)),
            ("gb".to_string(), rt(&[2, 6], 23).map(|v| v * 0.3)),
            ("lw".to_string(), rt(&[2, 3], 24).map(|v| v * 0.3)),
            ("lb".to_string(), rt(&[2], 25)),
        ];
        let target = rt(&[2, 2], 26);
        check_grads(&mut params, &|t, p| {
            let x = t.bind("x", &p[0].1);
            let w = t.bind("w", &p[1].1);
            let b = t.bind("b", &p[2].1);
            let gb = t.bind("gb", &p[3].1);
            let lw = t.bind("lw", &p[4].1);
            let lb = t.bind("lb", &p[5].1);
            let y = t.conv2d(x, w, b, 1, 1);
            let y = t.leaky_relu(y, LRELU_SLOPE);
            let y = t.conv2d(y, w, b, 1, 1); // shared weights
            let y = t.film(y, gb);
            let y = t.global_avg_pool(y);
            let y = t.linear(y, lw, lb);
            let tgt = t.input(target.clone());
            t.l1(y, tgt)
        });
    }

    #[test]
    fn upsample_concat_bias_gradients() {
        let mut params = vec![
            ("a".to_string(), rt(&[1, 2, 3, 3], 30)),
            ("b".to_string(), rt(&[1, 1, 6, 6], 31)),
            ("v".to_string(), rt(&[1, 3], 32)),
        ];
        let target = rt(&[1, 3, 6, 6], 33);
        check_grads(&mut params, &|t, p| {
            let a = t.bind("a", &p[0].1);
            let b = t.bind("b", &p[1].1);
            let v = t.bind("v", &p[2].1);
            let up = t.upsample_nearest(a, 2);
            let cat = t.concat_ch(up, b);
            let out = t.add_bias_ch(cat, v);
            let tgt = t.input(target.clone());
            t.mse(out, tgt)
        });
    }

    #[test]
    fn triplet_gradients() {
        let mut params = vec![
            ("a".to_string(), rt(&[1, 6], 40)),
            ("p0".to_string(), rt(&[1, 6], 41)),
            ("p1".to_string(), rt(&[1, 6], 42)),
            ("n0".to_string(), rt(&[1, 6], 43)),
            ("n1".to_string(), rt(&[1, 6], 44)),
        ];
        check_grads(&mut params, &|t, p| {
            let a = t.bind("a", &p[0].1);
            let p0 = t.bind("p0", &p[1].1);
            let p1 = t.bind("p1", &p[2].1);
            let n0 = t.bind("n0", &p[3].1);
            let n1 = t.bind("n1", &p[4].1);
            // Large margin keeps every hinge active so the gradient is
            // smooth around the evaluation point.
            t.triplet(a, &[p0, p1], &[n0, n1], 10.0)
        });
    }

    #[test]
    fn slice_rows_and_scale_gradients() {
        let mut params = vec![("x".to_string(), rt(&[4, 3], 50))];
        let target = rt(&[2, 3], 51);
        check_grads(&mut params, &|t, p| {
            let x = t.bind("x", &p[0].1);
            let s = t.slice_rows(x, 1, 2);
            let s = t.scale(s, 1.7);
            let tgt = t.input(target.clone());
            t.mse(s, tgt)
        });
    }

    #[test]
    fn film_identity_when_projection_is_zero() {
        let x = rt(&[1, 4, 3, 3], 60);
        let gb = Tensor::<f64>::zeros(&[1, 8]);
        let mut t = Tape::new();
        let xv = t.input(x.clone());
        let gbv = t.input(gb);
        let y = t.film(xv, gbv);
        assert_eq!(t.value(y), &x);
    }
}
