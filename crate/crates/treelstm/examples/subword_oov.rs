//! Character n-gram extraction and out-of-vocabulary composition: an
//! unseen inflected form gets a vector by summing the vectors of its
//! known character n-grams.
//!
//!     cargo run --example subword_oov

use treelstm::embeddings::{extract_ngrams, EmbeddingStore, OovPolicy, SubwordTable};

fn main() {
    for form in ["kot", "kotem", "chodziłam"] {
        println!("n-grams of {form:?}: {:?}", extract_ngrams(form));
    }

    // A toy store: one known word and a few gram vectors. The dimension
    // is 2 so the sums are easy to follow.
    let mut store = EmbeddingStore::empty(2, OovPolicy::Random, 0);
    let mut grams = SubwordTable::new(3, 6);
    grams.insert("<ko".into(), vec![1.0, 0.0]);
    grams.insert("kot".into(), vec![0.0, 1.0]);
    grams.insert("tem>".into(), vec![0.5, 0.5]);
    store.attach_subword(grams).unwrap();

    println!();
    for form in ["kot", "kotem", "pies"] {
        let v = store.lookup(form);
        let known: Vec<String> = extract_ngrams(form)
            .into_iter()
            .filter(|g| store.subword().unwrap().get(g).is_some())
            .collect();
        println!("lookup({form:?}) = {v:?}   known grams: {known:?}");
    }
    println!("\n(an OOV form with no known grams composes to the zero vector)");
}
