//! DARE merge of two parameter files.
//!
//!     cargo run --example dare_merge [drop_rate] [weight]

use nurseforge::merge::{dare_merge, keep_mask, MergeSpec, ParameterMap, Tensor};

fn main() {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<f64>().expect("number"));
    let spec = MergeSpec {
        drop_rate: args.next().unwrap_or(0.5),
        weight: args.next().unwrap_or(0.6),
        seed: 42,
    };

    let mut base = ParameterMap::new();
    let mut ft = ParameterMap::new();
    base.insert("layer.weight", Tensor::new(vec![2, 4], vec![0.0; 8]).unwrap());
    ft.insert("layer.weight", Tensor::new(vec![2, 4], (1..=8).map(|i| i as f32).collect()).unwrap());
    base.insert("layer.bias", Tensor::vector(vec![1.0, 1.0]));
    ft.insert("layer.bias", Tensor::vector(vec![2.0, 0.0]));

    let merged = dare_merge(&base, &ft, &spec).unwrap();
    for (name, t) in merged.iter() {
        let mask: String = keep_mask(name, t.len(), &spec).iter().map(|k| if *k { '1' } else { '0' }).collect();
        println!("{name:<13} mask {mask:<8} -> {:?}", t.values());
    }

    let path = std::env::temp_dir().join("nurseforge-example-merged.npk");
    merged.save(&path).unwrap();
    let back = ParameterMap::load(&path).unwrap();
    assert_eq!(back, merged);
    println!("wrote {} ({} bytes)", path.display(), merged.to_npk_bytes().len());
}
