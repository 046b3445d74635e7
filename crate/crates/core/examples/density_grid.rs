//! Projects a channel instance to the plane and writes both class densities
//! on a grid as CSV (x,y,class,density) to stdout.

use kldproj::eval::{self, GridSpec};
use kldproj::projections;
use kldproj::synth::{self, ChannelSpec};

fn main() -> kldproj::Result<()> {
    let chan = ChannelSpec {
        d: 50,
        t: 5,
        noise_var: 1.0,
        seed: 11,
    };
    let inst = synth::channel_instance(&chan, (0.1, 10.0), 1.0, Some(0.05))?;
    let res = projections::algorithm2(&inst.x1, &inst.x2, 2)?;
    let spec = GridSpec {
        resolution: 60,
        ..Default::default()
    };
    let grid = eval::density_grid(
        &res.original_rows,
        res.center.as_ref(),
        &inst.x1,
        &inst.x2,
        &spec,
    )?;

    eprintln!(
        "peaks {:.4e} / {:.4e}, contour levels {:.4e} / {:.4e}",
        grid.peaks[0], grid.peaks[1], grid.contour_levels[0], grid.contour_levels[1]
    );
    println!("x,y,class,density");
    for (i, x) in grid.x_axis.iter().enumerate() {
        for (j, y) in grid.y_axis.iter().enumerate() {
            println!("{x},{y},1,{}", grid.values_class1[(i, j)]);
            println!("{x},{y},2,{}", grid.values_class2[(i, j)]);
        }
    }
    Ok(())
}
