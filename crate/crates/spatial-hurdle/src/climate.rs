//! Covariate preparation: relative humidity from dew-point and air
//! temperature via the Buck saturation-vapor-pressure formula, bilinear
//! raster resampling, and assembly of the regression design matrix.

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Raster};
use crate::hurdle_model::DesignMatrix;

/// Buck (1981) saturation-vapor-pressure constants over liquid water.
pub struct BuckConstants;

impl BuckConstants {
    /// Reference temperature, kelvin.
    pub const T0: f64 = 273.16;
    /// Scale, pascal.
    pub const A1: f64 = 611.21;
    /// Exponent numerator coefficient, dimensionless.
    pub const A3: f64 = 17.502;
    /// Exponent denominator offset, kelvin.
    pub const A4: f64 = 32.19;
}

/// Physical floor on input temperatures. The formula has a pole at
/// T = 32.19 K; anything below 150 K is a unit mistake, not weather.
pub const MIN_TEMPERATURE_K: f64 = 150.0;

/// e_sat(T) = a1 · exp(a3 (T − T0) / (T − a4)), pascal, for T in kelvin.
pub fn saturation_vapor_pressure(temp_k: f64) -> Result<f64> {
    if !temp_k.is_finite() || temp_k < MIN_TEMPERATURE_K {
        return Err(Error::Invalid(format!(
            "temperature {temp_k} K is below the {MIN_TEMPERATURE_K} K floor"
        )));
    }
    Ok(BuckConstants::A1
        * (BuckConstants::A3 * (temp_k - BuckConstants::T0) / (temp_k - BuckConstants::A4)).exp())
}

/// RH = e_sat(T_dew)/e_sat(T_air), clamped to 1 when reanalysis rounding
/// puts the dew point above the air temperature. Use
/// [`derive_rh_raster`] to also count how often the clamp fired.
pub fn relative_humidity(t_dew_k: f64, t_air_k: f64) -> Result<f64> {
    let ratio = saturation_vapor_pressure(t_dew_k)? / saturation_vapor_pressure(t_air_k)?;
    Ok(if ratio > 1.0 { 1.0 } else { ratio })
}

pub fn kelvin_to_celsius(temp_k: f64) -> f64 {
    temp_k - 273.15
}

/// Per-cell relative humidity from dew-point and air-temperature rasters
/// (both kelvin). Missing cells stay missing; the second return is the
/// number of supersaturated cells clamped to 1.
pub fn derive_rh_raster(t_dew: &Raster, t_air: &Raster) -> Result<(Raster, usize)> {
    if t_dew.n_rows != t_air.n_rows || t_dew.n_cols != t_air.n_cols {
        return Err(Error::Dimension {
            context: "air-temperature raster cells",
            expected: t_dew.values.len(),
            got: t_air.values.len(),
        });
    }
    let mut values = Vec::with_capacity(t_dew.values.len());
    let mut clamped = 0usize;
    for (dew, air) in t_dew.values.iter().zip(&t_air.values) {
        match (dew, air) {
            (Some(d), Some(a)) => {
                let ratio = saturation_vapor_pressure(*d)? / saturation_vapor_pressure(*a)?;
                if ratio > 1.0 {
                    clamped += 1;
                    values.push(Some(1.0));
                } else {
                    values.push(Some(ratio));
                }
            }
            _ => values.push(None),
        }
    }
    Ok((
        Raster {
            n_rows: t_dew.n_rows,
            n_cols: t_dew.n_cols,
            values,
        },
        clamped,
    ))
}

/// Bilinear resampling onto a new shape, mapping cell centers through the
/// shared unit square. Interior points interpolate between the four
/// surrounding source centers; points outside the source-center hull
/// extrapolate linearly from the nearest cell pair, so constant fields are
/// reproduced exactly and linear ramps to rounding error. A destination cell
/// is missing if any source cell in its stencil is missing.
pub fn bilinear_resample(src: &Raster, dst_rows: usize, dst_cols: usize) -> Result<Raster> {
    if src.n_rows == 0 || src.n_cols == 0 || dst_rows == 0 || dst_cols == 0 {
        return Err(Error::Invalid("raster dimensions must be positive".into()));
    }
    // Fractional source index of a destination center, with the base index
    // clamped so a two-cell stencil always exists (collapsing to cell 0 when
    // the source has a single row/column).
    let locate = |dst_idx: usize, dst_n: usize, src_n: usize| -> (usize, f64) {
        if src_n == 1 {
            return (0, 0.0);
        }
        let x = (dst_idx as f64 + 0.5) * src_n as f64 / dst_n as f64 - 0.5;
        let base = (x.floor() as isize).clamp(0, src_n as isize - 2) as usize;
        (base, x - base as f64)
    };

    let mut values = Vec::with_capacity(dst_rows * dst_cols);
    for r in 0..dst_rows {
        let (r0, fy) = locate(r, dst_rows, src.n_rows);
        let r1 = (r0 + 1).min(src.n_rows - 1);
        for c in 0..dst_cols {
            let (c0, fx) = locate(c, dst_cols, src.n_cols);
            let c1 = (c0 + 1).min(src.n_cols - 1);
            let stencil = (
                src.get(r0, c0),
                src.get(r0, c1),
                src.get(r1, c0),
                src.get(r1, c1),
            );
            let v = match stencil {
                (Some(v00), Some(v01), Some(v10), Some(v11)) => {
                    // Incremental form: differences vanish for constant
                    // fields, so those reproduce bitwise.
                    Some(
                        v00 + fx * (v01 - v00)
                            + fy * (v10 - v00)
                            + fx * fy * (v11 - v01 - v10 + v00),
                    )
                }
                _ => None,
            };
            values.push(v);
        }
    }
    Ok(Raster {
        n_rows: dst_rows,
        n_cols: dst_cols,
        values,
    })
}

/// A design matrix over the active cells of a grid, ready to pair with
/// counts.
#[derive(Debug, Clone)]
pub struct DesignBuild {
    pub grid: GridSpec,
    pub design: DesignMatrix,
    pub covariate_names: Vec<String>,
}

/// Assemble the regression design from covariate rasters on the model grid:
/// columns [1, temp °C, RH, elevation, tree cover, temp·RH]. Temperature
/// arrives in kelvin and is converted for the design only. Cells with any
/// missing covariate are masked out of the grid.
pub fn build_design(
    temp_k: &Raster,
    rh: &Raster,
    elev: &Raster,
    ptc: &Raster,
) -> Result<DesignBuild> {
    let rows = temp_k.n_rows;
    let cols = temp_k.n_cols;
    for (name, raster) in [("humidity", rh), ("elevation", elev), ("tree-cover", ptc)] {
        if raster.n_rows != rows || raster.n_cols != cols {
            return Err(Error::Invalid(format!(
                "{name} raster is {}x{}, expected {rows}x{cols}",
                raster.n_rows, raster.n_cols
            )));
        }
    }

    let mut mask = Vec::with_capacity(rows * cols);
    let mut rows_out: Vec<Vec<f64>> = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            match (temp_k.get(r, c), rh.get(r, c), elev.get(r, c), ptc.get(r, c)) {
                (Some(t), Some(h), Some(e), Some(p)) => {
                    let t_c = kelvin_to_celsius(t);
                    let row = vec![1.0, t_c, h, e, p, t_c * h];
                    assert_eq!(row[5], row[1] * row[2], "interaction column identity");
                    mask.push(true);
                    rows_out.push(row);
                }
                _ => mask.push(false),
            }
        }
    }
    let grid = GridSpec::with_mask(rows, cols, mask)?;
    let design = DesignMatrix::from_rows(rows_out)?;
    Ok(DesignBuild {
        grid,
        design,
        covariate_names: vec![
            "temp".into(),
            "rh".into(),
            "elev".into(),
            "ptc".into(),
            "temp_rh".into(),
        ],
    })
}
