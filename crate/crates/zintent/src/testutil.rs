use crate::corpus::{Corpus, Split, Utterance};
use crate::numerics::Matrix;
use crate::rng::StreamRng;

/// Small separable corpus for unit tests: every intent owns two keyword
/// tokens, four filler tokens are shared, and frames are per-token
/// prototypes plus noise. Splits follow the 70/10/20 share layout.
pub(crate) fn tiny_corpus(n_intents: usize, per_intent: usize, d_raw: usize, seed: u64) -> Corpus {
    let vocab = n_intents * 2 + 4;
    let rng = StreamRng::new(seed);
    let protos: Vec<Matrix> = (0..vocab)
        .map(|t| Matrix::randn(2, d_raw, 1.0, &mut rng.split(&format!("tok/{t}"))))
        .collect();

    let mut utterances = Vec::new();
    for intent in 0..n_intents {
        for j in 0..per_intent {
            let id = intent * per_intent + j;
            let mut srng = rng.split(&format!("sentence/{id}"));
            let mut tokens = vec![
                2 * intent,
                2 * intent + 1,
                n_intents * 2 + srng.below(4),
                n_intents * 2 + srng.below(4),
            ];
            srng.shuffle(&mut tokens);
            let mut rows: Vec<Vec<f64>> = Vec::new();
            for &t in &tokens {
                for r in 0..2 {
                    rows.push(protos[t].row(r).iter().map(|&v| v + 0.3 * srng.normal()).collect());
                }
            }
            let split = if j * 10 < per_intent * 7 {
                Split::Train
            } else if j * 10 < per_intent * 8 {
                Split::Dev
            } else {
                Split::Test
            };
            utterances.push(Utterance {
                id,
                frames: Matrix::from_rows(&rows).unwrap(),
                tokens,
                intent,
                split,
            });
        }
    }
    Corpus {
        utterances,
        seen: (0..n_intents).collect(),
        unseen: Vec::new(),
        vocab_size: vocab,
        d_raw,
    }
}
