use omnicap::numerics::gradcheck::{check_inputs, GradCheckConfig, GradCheckReport};
use omnicap::numerics::{Array, Graph, Var};
use omnicap::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 20;
const TOL: f64 = 1e-6;

fn rand_arr(shape: &[usize], rng: &mut ChaCha8Rng) -> Array<f64> {
    Array::random_normal(shape, 1.0, rng)
}

/// Projects a tensor to a scalar with fixed random weights so every output
/// entry gets a distinct upstream gradient.
fn project(g: &mut Graph<f64>, x: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let w = Array::random_normal(g.shape(x), 1.0, &mut rng);
    let y = g.mul_const(x, &w)?;
    Ok(g.sum_all(y))
}

fn run<F>(name: &str, shapes: &[&[usize]], f: F)
where
    F: Fn(&mut Graph<f64>, &[Var], u64) -> Result<Var>,
{
    let cfg = GradCheckConfig { tolerance: TOL, ..Default::default() };
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Array<f64>> = shapes.iter().map(|s| rand_arr(s, &mut rng)).collect();
        let report: GradCheckReport = check_inputs(name, &inputs, |g, v| f(g, v, seed), &cfg).unwrap();
        assert!(report.passed, "{name} seed {seed}: {report:?}");
    }
}

#[test]
fn elementwise_ops() {
    run("add", &[&[2, 3], &[2, 3]], |g, v, s| {
        let y = g.add(v[0], v[1])?;
        project(g, y, s)
    });
    run("sub", &[&[2, 3], &[2, 3]], |g, v, s| {
        let y = g.sub(v[0], v[1])?;
        project(g, y, s)
    });
    run("mul", &[&[4], &[4]], |g, v, s| {
        let y = g.mul(v[0], v[1])?;
        project(g, y, s)
    });
    run("scale", &[&[5]], |g, v, s| {
        let y = g.scale(v[0], -1.7);
        project(g, y, s)
    });
    run("gelu", &[&[3, 4]], |g, v, s| {
        let y = g.gelu(v[0]);
        project(g, y, s)
    });
}

#[test]
fn dense_ops() {
    run("linear", &[&[2, 3, 4], &[4, 5], &[5]], |g, v, s| {
        let y = g.linear(v[0], v[1], Some(v[2]))?;
        project(g, y, s)
    });
    run("add_bias", &[&[3, 4], &[4]], |g, v, s| {
        let y = g.add_bias(v[0], v[1])?;
        project(g, y, s)
    });
    run("conv2d_s2", &[&[2, 5, 6, 3], &[3, 3, 3, 4], &[4]], |g, v, s| {
        let y = g.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
        project(g, y, s)
    });
    run("conv2d_1x1", &[&[1, 3, 3, 2], &[1, 1, 2, 3]], |g, v, s| {
        let y = g.conv2d(v[0], v[1], None, 1, 0)?;
        project(g, y, s)
    });
}

#[test]
fn normalization_and_softmax() {
    run("layer_norm", &[&[3, 6], &[6], &[6]], |g, v, s| {
        let y = g.layer_norm(v[0], Some(v[1]), Some(v[2]))?;
        project(g, y, s)
    });
    run("layer_norm_plain", &[&[2, 2, 5]], |g, v, s| {
        let y = g.layer_norm(v[0], None, None)?;
        project(g, y, s)
    });
    run("softmax", &[&[3, 4]], |g, v, s| {
        let y = g.softmax(v[0]);
        project(g, y, s)
    });
}

#[test]
fn resampling_and_pooling() {
    run("resize_up", &[&[1, 3, 4, 2]], |g, v, s| {
        let y = g.bilinear_resize(v[0], 5, 7)?;
        project(g, y, s)
    });
    run("resize_down", &[&[2, 6, 6, 1]], |g, v, s| {
        let y = g.bilinear_resize(v[0], 3, 2)?;
        project(g, y, s)
    });
    run("global_avg_pool", &[&[2, 3, 4, 5]], |g, v, s| {
        let y = g.global_avg_pool(v[0])?;
        project(g, y, s)
    });
    run("mean_last", &[&[3, 4]], |g, v, s| {
        let y = g.mean_last(v[0])?;
        project(g, y, s)
    });
    run("mean_all", &[&[3, 4]], |g, v, _| Ok(g.mean_all(v[0])));
    run("sum_axis1", &[&[2, 4, 3]], |g, v, s| {
        let y = g.sum_axis1(v[0])?;
        project(g, y, s)
    });
}

#[test]
fn structural_ops() {
    run("concat", &[&[2, 3], &[2, 1], &[2, 2]], |g, v, s| {
        let y = g.concat(&[v[0], v[1], v[2]])?;
        project(g, y, s)
    });
    run("reshape", &[&[2, 6]], |g, v, s| {
        let y = g.reshape(v[0], &[3, 4])?;
        project(g, y, s)
    });
    run("stack", &[&[2, 3], &[2, 3]], |g, v, s| {
        let y = g.stack(&[v[0], v[1]])?;
        project(g, y, s)
    });
    run("gated_sum", &[&[2, 3, 4], &[2, 3]], |g, v, s| {
        let y = g.gated_sum(v[0], v[1])?;
        project(g, y, s)
    });
    run("select_rows", &[&[4, 3]], |g, v, s| {
        let y = g.select_rows(v[0], &[3, 1, 1])?;
        project(g, y, s)
    });
    run("scale_rows", &[&[4, 3], &[4]], |g, v, s| {
        let y = g.scale_rows(v[0], v[1])?;
        project(g, y, s)
    });
}

#[test]
fn attention_ops() {
    // The 1×8×6×6 configuration with a 3×3 neighborhood and 2 heads.
    run("neighborhood_attention", &[&[1, 6, 6, 8], &[1, 6, 6, 8], &[1, 6, 6, 8]], |g, v, s| {
        let y = g.neighborhood_attention(v[0], v[1], v[2], 3, 2)?;
        project(g, y, s)
    });
    run("full_attention", &[&[1, 3, 2, 4], &[1, 3, 2, 4], &[1, 3, 2, 4]], |g, v, s| {
        let y = g.full_attention(v[0], v[1], v[2], 2)?;
        project(g, y, s)
    });
}

#[test]
fn loss_ops() {
    run("nll", &[&[3, 4]], |g, v, _| {
        let p = g.softmax(v[0]);
        g.nll(p, &[0, 3, 2], 1e-7)
    });
    for gamma in [1, 2] {
        run("norm_in_norm", &[&[6]], move |g, v, _| g.norm_in_norm(v[0], &[1.0, 2.5, 1.2, 3.0, 2.0, 1.7], gamma));
    }
    run("mean_abs_error", &[&[4]], |g, v, _| g.mean_abs_error(v[0], &[0.1, -0.3, 2.0, 0.5]));
}
