//! The nine models in layer notation, their parameter counts, and a custom
//! architecture parsed from a string.
//!
//! cargo run --example architectures -- ["CONV(16)-FC(1)"]

use cryptostock::archdsl::{build_model, parse_arch, render, InputShape, ModelName};

fn main() -> cryptostock::Result<()> {
    let shape = InputShape::new(391, 1);
    for name in ModelName::ALL {
        let model = build_model(name, shape, 0, None)?;
        println!("{:<12} {:>9} params  {}", name.to_string(), model.parameter_count(), model.notation());
    }

    let custom = std::env::args().nth(1).unwrap_or_else(|| "CONV(16)-CONV(32)-FC(16)-FC(1)".into());
    let specs = parse_arch(&custom)?;
    println!("\nparsed  {custom}\nrender  {}", render(&specs));
    let model = build_model(ModelName::Cnn, shape, 0, Some(&custom))?;
    println!("as CNN: {} params", model.parameter_count());

    // Width lists swap only the layer sizes of a model's own layout.
    let widths = ModelName::ResNet.expand_widths("32-32-32-32")?;
    println!("ResNet 32-32-32-32 -> {widths}");
    Ok(())
}
