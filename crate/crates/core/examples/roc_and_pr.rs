//! ROC and precision-recall curves for a hand-made score list, with the
//! trapezoidal AUC checked against the pairwise definition.

use etma::metrics::{pairwise_auc, pr_auc, pr_curve, roc_auc, roc_curve};

fn main() -> etma::Result<()> {
    let scores = [0.95, 0.9, 0.8, 0.8, 0.7, 0.55, 0.5, 0.4, 0.3, 0.1];
    let positive = [true, true, false, true, true, false, true, false, false, false];

    let roc = roc_curve(&scores, &positive)?;
    print!("{}", roc.to_csv());
    println!("roc auc      {:.4}", roc_auc(&scores, &positive)?);
    println!("pairwise auc {:.4}", pairwise_auc(&scores, &positive)?);

    let pr = pr_curve(&scores, &positive)?;
    print!("{}", pr.to_csv());
    println!("pr auc       {:.4}", pr_auc(&scores, &positive)?);
    Ok(())
}
