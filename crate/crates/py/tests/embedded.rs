// Import the module into an embedded interpreter and drive it from Python.
use pyo3::prelude::*;

use divsel::divsel;

#[test]
fn module_runs_in_embedded_interpreter() {
    pyo3::append_to_inittab!(divsel);
    Python::initialize();
    Python::attach(|py| {
        py.run(
            cr#"
import math, divsel
assert abs(divsel.entropy([0.5, 0.5, 0.0, 0.0]) - math.log(2)) < 1e-12
feats, labels = divsel.synthetic_mixture(per_domain=20, dim=8)
assert len(divsel.diversity_scores(feats, labels, "intra")) == 80
assert divsel.overlap(["a", "b"], ["b", "c"]) == 0.5
assert divsel.select_top_fraction(["a", "b", "c", "d"], [0.1, 0.4, 0.4, 0.2], 0.5) == ["b", "c"]
try:
    divsel.diversity_scores(feats, labels, "sideways")
except ValueError:
    pass
else:
    raise AssertionError
"#,
            None,
            None,
        )
        .map_err(|e| {
            e.print(py);
            e
        })
        .unwrap();
    });
}
