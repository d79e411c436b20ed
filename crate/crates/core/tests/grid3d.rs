use proptest::prelude::*;
use smlm_core::grid3d::*;
use smlm_core::optics::Emitter;

fn spec() -> GridSpec {
    GridSpec { voxel_xy: 27.5, voxel_z: 33.0, depth: 16, height: 24, width: 24, origin: [0.0, 0.0, -264.0] }
}

/// Independent peak definition: visit every voxel and compare against the
/// whole grid, keeping neighbours within the Chebyshev radius.
fn brute_force_peaks(grid: &Grid3D, threshold: f64, radius: usize) -> Vec<(usize, usize, usize)> {
    let v = &grid.values;
    let (d, h, w) = v.dim();
    let idx = |a: usize, b: usize, c: usize| (a * h + b) * w + c;
    let mut out = Vec::new();
    for a in 0..d {
        for b in 0..h {
            for c in 0..w {
                let x = v[[a, b, c]];
                if x <= threshold {
                    continue;
                }
                let dominated = (0..d).any(|p| {
                    (0..h).any(|q| {
                        (0..w).any(|r| {
                            let near = p.abs_diff(a) <= radius && q.abs_diff(b) <= radius && r.abs_diff(c) <= radius;
                            let y = v[[p, q, r]];
                            near && (y > x || (y == x && idx(p, q, r) < idx(a, b, c)))
                        })
                    })
                });
                if !dominated {
                    out.push((a, b, c));
                }
            }
        }
    }
    out
}

#[test]
fn two_separated_impulses_give_two_peaks() {
    let s = spec();
    let (x1, y1, z1) = s.voxel_center(5, 6, 4);
    let (x2, y2, z2) = s.voxel_center(5, 6, 14);
    let emitters = [Emitter::new(x1, y1, z1, 1.0), Emitter::new(x2, y2, z2, 1.0)];
    let grid = positions_to_grid(&emitters, &s, 1.0, GridWeight::Unit).unwrap().grid;
    let peaks = extract_peaks(&grid, 0.2, 2, 0);
    let oracle = brute_force_peaks(&grid, 0.2, 2);
    assert_eq!(peaks.len(), 2);
    assert_eq!(oracle, vec![(5, 6, 4), (5, 6, 14)]);
}

fn emitter_in(s: GridSpec) -> impl Strategy<Value = Emitter> {
    let xmax = s.width as f64 * s.voxel_xy;
    let ymax = s.height as f64 * s.voxel_xy;
    let zmin = s.origin[2];
    let zmax = zmin + s.depth as f64 * s.voxel_z;
    (0.0..xmax, 0.0..ymax, zmin..zmax, 1.0..1e4f64).prop_map(|(x, y, z, n)| Emitter::new(x, y, z, n))
}

proptest! {
    #[test]
    fn round_trip_stays_within_half_a_voxel(e in emitter_in(spec())) {
        let s = spec();
        let grid = positions_to_grid(&[e], &s, 0.0, GridWeight::Unit).unwrap().grid;
        let peaks = extract_peaks(&grid, 0.5, 1, 0);
        prop_assert_eq!(peaks.len(), 1);
        let p = peaks[0];
        prop_assert!((p.x - e.x).abs() <= 13.75);
        prop_assert!((p.y - e.y).abs() <= 13.75);
        prop_assert!((p.z - e.z).abs() <= 16.5);
    }

    #[test]
    fn peak_count_is_bounded_and_monotone_in_threshold(
        cells in prop::collection::vec((0usize..6, 0usize..8, 0usize..8, 0.0..1.0f64), 0..40),
        t1 in 0.01..0.9f64,
        dt in 0.0..0.5f64,
        radius in 1usize..3,
    ) {
        let s = GridSpec { voxel_xy: 27.5, voxel_z: 33.0, depth: 6, height: 8, width: 8, origin: [0.0; 3] };
        let mut grid = Grid3D::zeros(s);
        for (d, i, j, v) in cells {
            grid.values[[d, i, j]] = v;
        }
        let low = extract_peaks(&grid, t1, radius, 0);
        let high = extract_peaks(&grid, t1 + dt, radius, 0);
        let above = grid.values.iter().filter(|&&v| v > t1).count();
        prop_assert!(low.len() <= above);
        prop_assert!(high.len() <= low.len());
        prop_assert_eq!(low.len(), brute_force_peaks(&grid, t1, radius).len());
    }
}
