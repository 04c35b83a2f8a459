//! Compare analytic gradients of both models with central differences.
//!
//! `cargo run --example gradient_check`

use cdk::extract::Turn;
use cdk::textmodel::{context_key, RnnConfig, SequenceModel, TabularModel, TinyRnnLm, Vocab};

fn check<M: SequenceModel + Clone>(name: &str, model: &M, dh: &[Turn], x: &Turn, y: &Turn) {
    let h = 1e-5;
    let g = model.grad_logprob(dh, x, y).unwrap();
    let (mut ok, mut n) = (0, 0);
    for i in 0..model.num_params() {
        let (mut a, mut b) = (model.clone(), model.clone());
        a.params_mut()[i] += h;
        b.params_mut()[i] -= h;
        let fd = (a.logprob(dh, x, y).unwrap() - b.logprob(dh, x, y).unwrap()) / (2.0 * h);
        // near-zero coordinates are dominated by rounding in the difference
        if g.0[i].abs() > 1e-8 {
            n += 1;
            if (fd - g.0[i]).abs() / fd.abs().max(g.0[i].abs()) <= 1e-4 {
                ok += 1;
            }
        }
    }
    println!(
        "{name}: {} params, |grad| = {:.4}, {ok}/{n} coordinates within 1e-4 relative error",
        model.num_params(),
        g.norm()
    );
}

fn main() {
    let x = Turn::new("Ann", "are you coming tonight");
    let y = Turn::new("Bo", "only if you cook");
    let dh = [Turn::new("Bo", "what is the plan")];

    let responses = vec![y.clone(), Turn::new("Bo", "no"), Turn::new("Bo", "maybe later")];
    let mut tab = TabularModel::new(vec![context_key(&dh, &x)], responses);
    tab.params_mut().iter_mut().enumerate().for_each(|(i, p)| *p = 0.3 * i as f64 - 0.4);
    check("tabular", &tab, &dh, &x, &y);

    let vocab = Vocab::from_tokens("what is the plan are you coming tonight only if cook ann bo :".split(' '));
    let rnn = TinyRnnLm::new(
        vocab,
        RnnConfig {
            embed_dim: 6,
            hidden_dim: 8,
            max_context: 32,
        },
        3,
    );
    check("recurrent", &rnn, &dh, &x, &y);
}
