//! Text normalization, vocabulary building and fixed-length encoding.

use etma::embed::{normalize_text, StopWords, Vocabulary};

fn main() {
    let docs = [
        "The storm hit the NORTH-WEST coast last night!",
        "Officials say the south-east coast is safe.",
        "A quiet night on the coast.",
    ];
    let stop = StopWords::default();
    for d in &docs {
        println!("{:<48} -> {:?}", d, normalize_text(d, &stop));
    }

    let words: Vec<Vec<String>> = docs.iter().map(|d| normalize_text(d, &stop)).collect();
    let vocab = Vocabulary::build(words.iter().map(|w| w.as_slice()), 1);
    println!("vocabulary size {}", vocab.size());

    let (ids, mask) = vocab.encode("storm on the unknown coast", &stop, 8);
    let shown: Vec<&str> = ids.iter().map(|&i| vocab.token(i).unwrap_or("?")).collect();
    println!("ids  {ids:?}");
    println!("toks {shown:?}");
    println!("mask {mask:?}");
}
