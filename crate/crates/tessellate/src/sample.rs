use roadnet::{Link, LinkId, RoadNetwork};

use crate::partition::CellPartition;
use crate::sequence::{to_cell_sequence, CellSequence};
use crate::{Result, TessError};

/// Evenly spaced points along the link, both endpoints included, spacing at
/// most `step`. Opposite-direction links yield the same point set in reverse
/// order, which is what lets a coarse partition merge the two directions.
pub fn link_polyline(link: &Link, step: f64) -> Vec<(f64, f64)> {
    let (x0, y0) = link.from_xy;
    let (x1, y1) = link.to_xy;
    let n = (link.length_m / step).ceil().max(1.0) as usize;
    (0..=n)
        .map(|k| {
            let t = k as f64 / n as f64;
            (x0 + t * (x1 - x0), y0 + t * (y1 - y0))
        })
        .collect()
}

/// Point cloud for partition building: every link's polyline at R/3 spacing,
/// in link id order.
pub fn network_points(net: &RoadNetwork, r: f64) -> Result<Vec<(f64, f64)>> {
    if !(r > 0.0) {
        return Err(TessError::BadInput(format!("radius {r} not positive")));
    }
    let step = r / 3.0;
    let mut out = Vec::new();
    for link in net.links() {
        out.extend(link_polyline(link, step));
    }
    Ok(out)
}

/// Ordered points traced by a trip: each visited link's polyline from its
/// upstream end. Shared intersection points repeat; the cell conversion
/// collapses them.
pub fn trajectory_points(
    net: &RoadNetwork,
    links: &[LinkId],
    r: f64,
) -> Result<Vec<(f64, f64)>> {
    if links.is_empty() {
        return Err(TessError::BadInput("empty trajectory".into()));
    }
    if !(r > 0.0) {
        return Err(TessError::BadInput(format!("radius {r} not positive")));
    }
    let step = r / 3.0;
    let mut out = Vec::new();
    for &l in links {
        if l.0 >= net.link_count() {
            return Err(TessError::BadInput(format!("unknown link {}", l.0)));
        }
        out.extend(link_polyline(net.link(l), step));
    }
    Ok(out)
}

pub fn trajectory_cell_sequence(
    net: &RoadNetwork,
    links: &[LinkId],
    part: &CellPartition,
) -> Result<CellSequence> {
    let pts = trajectory_points(net, links, part.radius())?;
    to_cell_sequence(&pts, part)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::cluster_points;
    use roadnet::build_grid;

    #[test]
    fn polyline_spacing_and_endpoints() {
        let net = build_grid(3, 3, 100.0).expect("valid grid");
        let link = net.link(roadnet::LinkId(0));
        let pts = link_polyline(link, 30.0);
        // 100 m at max 30 m spacing: 4 segments, 5 points
        assert_eq!(pts.len(), 5);
        assert_eq!(pts[0], link.from_xy);
        assert_eq!(pts[4], link.to_xy);
        for w in pts.windows(2) {
            let d = ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
            assert!((d - 25.0).abs() < 1e-9);
        }
    }

    #[test]
    fn opposite_links_share_their_point_set() {
        let net = build_grid(3, 3, 100.0).expect("valid grid");
        // find an interior link and its reverse
        let fwd = net
            .links()
            .iter()
            .find(|l| l.kind == roadnet::LinkKind::Interior)
            .expect("interior link");
        let rev = net
            .links()
            .iter()
            .find(|l| l.from_xy == fwd.to_xy && l.to_xy == fwd.from_xy)
            .expect("reverse link");
        let a = link_polyline(fwd, 33.0);
        let mut b = link_polyline(rev, 33.0);
        b.reverse();
        for (p, q) in a.iter().zip(&b) {
            assert!((p.0 - q.0).abs() < 1e-9 && (p.1 - q.1).abs() < 1e-9);
        }
    }

    #[test]
    fn network_partition_covers_every_trip() {
        let net = build_grid(4, 4, 200.0).expect("valid grid");
        let pts = network_points(&net, 100.0).expect("samples");
        let part = cluster_points(&pts, 100.0).expect("clusters");
        assert!(part.len() > 4);
        let entry = net.entry_at(1, 0).expect("entry");
        let exit = net.exit_at(3, 2).expect("exit");
        let routes = roadnet::enumerate_routes(&net, entry, exit, 0, 10).expect("routes");
        for route in &routes {
            let seq = trajectory_cell_sequence(&net, route, &part).expect("converts");
            assert!(seq.cells().len() >= 2);
            // every sampled point within the hard 2R bound of its cell
            let pts = trajectory_points(&net, route, 100.0).expect("samples");
            for p in pts {
                let c = part.centroids()[part.nearest(p)];
                let d = ((p.0 - c.0).powi(2) + (p.1 - c.1).powi(2)).sqrt();
                assert!(d <= 200.0 + 1e-9);
            }
        }
    }

    #[test]
    fn direction_pairs_merge_under_a_coarse_partition() {
        let net = build_grid(4, 4, 200.0).expect("valid grid");
        let pts = network_points(&net, 100.0).expect("samples");
        let part = cluster_points(&pts, 100.0).expect("clusters");
        // a west-east trip and its east-west mirror visit the same cells in
        // reverse order
        let e_in = net.entry_at(1, 0).expect("entry");
        let e_out = net.exit_at(1, 3).expect("exit");
        let fwd = roadnet::enumerate_routes(&net, e_in, e_out, 0, 1).expect("routes")[0]
            .clone();
        let w_in = net.entry_at(1, 3).expect("entry");
        let w_out = net.exit_at(1, 0).expect("exit");
        let bwd = roadnet::enumerate_routes(&net, w_in, w_out, 0, 1).expect("routes")[0]
            .clone();
        let a = trajectory_cell_sequence(&net, &fwd, &part).expect("converts");
        let mut b = trajectory_cell_sequence(&net, &bwd, &part)
            .expect("converts")
            .cells();
        b.reverse();
        assert_eq!(a.cells(), b);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let net = build_grid(3, 3, 100.0).expect("valid grid");
        assert!(network_points(&net, 0.0).is_err());
        assert!(trajectory_points(&net, &[], 10.0).is_err());
        assert!(trajectory_points(&net, &[roadnet::LinkId(999)], 10.0).is_err());
    }
}
