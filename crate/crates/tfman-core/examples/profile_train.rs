use std::time::Instant;
use tfman_core::net::{Model, TfmanConfig};
use tfman_core::rng::Rng;
use tfman_core::tape::Tape;
use tfman_core::tensor::Tensor;

fn main() {
    let cfg = TfmanConfig::toy();
    let model = Model::<f32>::build(&cfg, 1).unwrap();
    let mut rng = Rng::from_seed(2);
    let x = Tensor::<f32>::generate(&[3, 48, 48], || rng.uniform() as f32);
    let target = Tensor::<f32>::generate(&[3, 96, 96], || rng.uniform() as f32);

    for rep in 0..3 {
        let t0 = Instant::now();
        let mut tape = Tape::<f32>::new();
        let bound = model.bind(&mut tape, true);
        let xn = tape.leaf(x.clone(), false);
        let pred = model.forward_on_tape(&mut tape, &bound, xn, false, None).unwrap();
        let loss = tape.l1_loss(pred, target.clone()).unwrap();
        let t1 = Instant::now();
        tape.backward(loss).unwrap();
        let t2 = Instant::now();
        let _grads: Vec<_> = model.store.iter().map(|(id, _)| tape.grad(bound.node(id)).cloned()).collect();
        let t3 = Instant::now();
        println!(
            "rep {rep}: forward {:>6.1} ms | backward {:>6.1} ms | collect {:>5.1} ms | nodes {}",
            (t1 - t0).as_secs_f64() * 1e3,
            (t2 - t1).as_secs_f64() * 1e3,
            (t3 - t2).as_secs_f64() * 1e3,
            tape.len()
        );
    }
}
