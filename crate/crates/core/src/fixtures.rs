//! Small named graphs used throughout the tests and documentation. The same
//! graphs ship as TSV files under `crates/core/fixtures/`.

use crate::graph::Graph;

/// Single unit edge between vertices 0 and 1.
pub fn k2() -> Graph {
    Graph::from_pairs(2, &[(0, 1)]).unwrap()
}

/// Unit triangle on {0, 1, 2}.
pub fn triangle() -> Graph {
    Graph::from_pairs(3, &[(0, 1), (0, 2), (1, 2)]).unwrap()
}

/// Path 0 - 1 - 2.
pub fn path3() -> Graph {
    Graph::from_pairs(3, &[(0, 1), (1, 2)]).unwrap()
}

/// Two unit triangles {0,1,2} and {3,4,5} joined by the bridge (2, 3).
pub fn barbell6() -> Graph {
    Graph::from_pairs(
        6,
        &[(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (3, 5), (4, 5)],
    )
    .unwrap()
}
