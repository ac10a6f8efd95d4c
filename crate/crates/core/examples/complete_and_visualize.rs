//! Complete one synthetic frame with a briefly trained network and write
//! colour-mapped depth, error and confidence images.
//!
//! cargo run --release --example complete_and_visualize [out_dir]

use depthfill::metrics::evaluate;
use depthfill::network::Variant;
use depthfill::synth::{generate_dataset, SynthConfig};
use depthfill::train::{predict, train, TrainConfig};
use depthfill::viz::{write_confidence_viz, write_depth_viz};

fn main() -> depthfill::Result<()> {
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("depthfill_viz"));
    let data = generate_dataset(&SynthConfig { scenes: 30, ..SynthConfig::default() })?;
    let mut cfg = TrainConfig::desk(Variant::Full);
    cfg.epochs = 4;
    let net = train(&data.train, &data.val, &cfg)?.best.net;

    let sample = &data.test[0];
    let d_max = cfg.network.guidance.d_max;
    let out_maps = net.forward(&sample.color, &sample.sparse)?;
    let dense = predict(&net, sample)?;
    println!("{}", evaluate(&dense, sample.gt.depth())?.to_text());

    write_depth_viz(sample.sparse.depth(), d_max, out.join("sparse_input.png"))?;
    write_depth_viz(&out_maps.d_c, d_max, out.join("coarse.png"))?;
    write_depth_viz(&dense, d_max, out.join("final.png"))?;
    if let Some(b) = &out_maps.branches {
        write_confidence_viz(&b.c_cr_adj, out.join("colour_confidence.png"))?;
        write_confidence_viz(&b.c_dr_adj, out.join("depth_confidence.png"))?;
    }
    println!("images written to {}", out.display());
    Ok(())
}
