//! Derive relative humidity from dew-point and air temperature, resample a
//! coarse raster onto the model grid, and assemble a design matrix.
//!
//! Run with: cargo run --example derive_humidity

use spatial_hurdle::climate::{
    bilinear_resample, build_design, relative_humidity, saturation_vapor_pressure,
};
use spatial_hurdle::grid::Raster;

fn main() -> spatial_hurdle::Result<()> {
    println!("saturation vapor pressure (Buck):");
    for t in [250.0, 273.16, 290.0, 310.0] {
        println!("  e_sat({t:>6.2} K) = {:>10.3} Pa", saturation_vapor_pressure(t)?);
    }

    println!("\nrelative humidity for air at 295 K:");
    for dew in [275.0, 285.0, 293.0, 295.0] {
        println!(
            "  T_dew = {dew:>5.1} K -> RH = {:.4}",
            relative_humidity(dew, 295.0)?
        );
    }

    // A 3x3 coarse temperature field resampled to the 6x6 model grid.
    let coarse = Raster {
        n_rows: 3,
        n_cols: 3,
        values: vec![
            Some(288.0),
            Some(290.0),
            Some(291.5),
            Some(289.0),
            Some(292.0),
            Some(294.0),
            Some(290.5),
            Some(293.0),
            Some(296.0),
        ],
    };
    let fine = bilinear_resample(&coarse, 6, 6)?;
    println!("\n3x3 temperature raster resampled to 6x6 (K):");
    for r in 0..6 {
        let row: Vec<String> = (0..6)
            .map(|c| match fine.get(r, c) {
                Some(v) => format!("{v:>7.2}"),
                None => "     NA".to_string(),
            })
            .collect();
        println!("  {}", row.join(" "));
    }

    // Assemble the standard design: temperature, humidity, elevation, tree
    // cover, and the temperature-humidity interaction.
    let n = 36;
    let rh = Raster::constant(6, 6, 0.55);
    let elev = Raster::constant(6, 6, 0.3);
    let mut ptc = Raster::constant(6, 6, 0.7);
    ptc.values[14] = None; // one cell lacks tree-cover data
    let build = build_design(&fine, &rh, &elev, &ptc)?;
    println!(
        "\ndesign matrix: {} rows x {} columns (one cell masked of {n}), columns: intercept, {}",
        build.design.n_rows(),
        build.design.n_cols(),
        build.covariate_names.join(", ")
    );
    let row = build.design.row(0);
    println!(
        "first row: [{}]",
        row.iter()
            .map(|v| format!("{v:.3}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(())
}
