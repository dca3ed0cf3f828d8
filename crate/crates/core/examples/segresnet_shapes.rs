//! Prints the layer graph and encoder/decoder shapes of the default SegResNet on a
//! 200×448 frame.

use fibcap::tensornet::{build_segresnet, SegModelConfig};

fn main() -> fibcap::Result<()> {
    for cfg in [SegModelConfig::default(), SegModelConfig::reduced()] {
        let model = build_segresnet::<f32>(cfg.clone(), 0)?;
        let shapes = model.infer_shapes([1, 1, 200, 448])?;
        println!(
            "levels {} init_filters {}: {} layers, {} parameters",
            cfg.levels,
            cfg.init_filters,
            model.layers().len(),
            model.params().num_values()
        );
        for &id in model.encoder_outputs() {
            println!("  encoder node {id:>3}: {:?}", shapes[id]);
        }
        println!("  output: {:?}", shapes.last().expect("non-empty graph"));
    }
    Ok(())
}
