//! Apply every corruption type at every severity to one image and print
//! how far each output drifts from the original.

use bnadapt::corruptions::{corrupt, CorruptionLabel, Severity};
use bnadapt::dataio::gen_synthetic;

fn main() {
    let img = gen_synthetic(1, 3).images.remove(0);
    println!("{:15} {:>8} {:>8} {:>8} {:>8} {:>8}", "corruption", "s1", "s2", "s3", "s4", "s5");
    for label in CorruptionLabel::ALL {
        print!("{:15}", label.name());
        for s in Severity::ALL {
            let out = corrupt(&img, label, s, 11);
            let mse: f64 = out
                .data()
                .iter()
                .zip(img.data())
                .map(|(&a, &b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
                / img.data().len() as f64;
            print!(" {:8.5}", mse);
        }
        println!();
    }
    println!("\nvalues are mean squared deviation from the clean image");
}
