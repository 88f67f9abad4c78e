//! Exhaustive transition-table sweeps on every grid size up to 10x10.

use roadnet::{build_grid, Action, Obs, RoadError};

const ALL: [Action; 4] = [
    Action::Straight,
    Action::Left,
    Action::Right,
    Action::Terminate,
];

#[test]
fn every_pair_respects_its_mask() {
    for rows in 2..=10 {
        for cols in 2..=10 {
            let net = build_grid(rows, cols, 100.0).expect("valid grid");
            for link in net.links() {
                let o = Obs::Link(link.id);
                let mask = net.action_mask(o);
                for a in ALL {
                    let res = net.next_observation(o, a);
                    if mask[a.index()] {
                        let succ = res.expect("unmasked pair succeeds");
                        match succ {
                            Obs::Link(m) => assert!(m.0 < net.link_count()),
                            Obs::End => assert!(net.is_exit(link.id)),
                            Obs::Start => panic!("Start can never be a successor"),
                        }
                    } else {
                        assert!(
                            matches!(res, Err(RoadError::InvalidAction(_))),
                            "masked pair must error on {rows}x{cols} link {}",
                            link.id.0
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn terminate_exactly_on_exit_links() {
    for rows in 2..=10 {
        for cols in [2, 5, 10] {
            let net = build_grid(rows, cols, 100.0).expect("valid grid");
            for link in net.links() {
                let can_end = net.action_mask(Obs::Link(link.id))[Action::Terminate.index()];
                assert_eq!(can_end, net.is_exit(link.id));
            }
        }
    }
}

#[test]
fn stub_counts_follow_the_boundary() {
    for rows in 2..=10 {
        for cols in 2..=10 {
            let net = build_grid(rows, cols, 100.0).expect("valid grid");
            let boundary = 2 * (rows + cols) - 4;
            assert_eq!(net.entry_links().len(), boundary);
            assert_eq!(net.exit_links().len(), boundary);
            assert_eq!(net.od_pairs().len(), boundary * boundary - boundary);
        }
    }
}

#[test]
fn validation_accepts_every_built_grid() {
    for rows in 2..=10 {
        for cols in 2..=10 {
            build_grid(rows, cols, 100.0)
                .expect("valid grid")
                .validate()
                .expect("builder output validates");
        }
    }
}
