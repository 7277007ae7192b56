use std::f64::consts::TAU;

use cloudvol_core::geo::Geometry;

pub const METADATA_DIM: usize = 13;

/// Acquisition context fed to the metadata embedding.
///
/// Layout: `sin/cos` of fraction of day, `sin/cos` of fraction of year,
/// latitude / 90, `sin/cos` of longitude, solar zenith / 180, `sin/cos` of
/// solar azimuth, satellite zenith / 180, `sin/cos` of satellite azimuth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetadataVector(pub [f64; METADATA_DIM]);

fn cyc(fraction: f64) -> [f64; 2] {
    [(TAU * fraction).sin(), (TAU * fraction).cos()]
}

impl MetadataVector {
    pub fn from_geometry(g: &Geometry) -> Self {
        let [d0, d1] = cyc(g.fraction_of_day());
        let [y0, y1] = cyc(g.fraction_of_year());
        let [l0, l1] = cyc(g.lon / 360.0);
        let [s0, s1] = cyc(g.solar_azimuth / 360.0);
        let [v0, v1] = cyc(g.sat_azimuth / 360.0);
        Self([
            d0,
            d1,
            y0,
            y1,
            g.lat / 90.0,
            l0,
            l1,
            g.solar_zenith / 180.0,
            s0,
            s1,
            g.sat_zenith / 180.0,
            v0,
            v1,
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cloudvol_core::channels::Satellite;

    #[test]
    fn features_are_bounded_and_cyclic() {
        let a = Geometry::compute(1_595_656_800, 10.0, 179.9, Satellite::Himawari);
        let mut b = a;
        b.lon = -180.1;
        let (va, vb) = (MetadataVector::from_geometry(&a), MetadataVector::from_geometry(&b));
        assert!(va.0.iter().all(|v| v.abs() <= 1.0));
        // longitudes either side of the date line land close together
        assert!((va.0[5] - vb.0[5]).abs() < 0.01 && (va.0[6] - vb.0[6]).abs() < 0.01);
        for k in [0usize, 2, 5, 8, 11] {
            let r = va.0[k].hypot(va.0[k + 1]);
            assert!((r - 1.0).abs() < 1e-12);
        }
        assert!((0.0..=1.0).contains(&va.0[7]) && (0.0..=1.0).contains(&va.0[10]));
    }
}
