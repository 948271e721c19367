"""Regenerate the bundled observable documents in src/nilflow_lab/data."""
import json
import pathlib

from nilflow_lab.heis import LatticeSpec, stable_generator
from nilflow_lab.norms import smooth_family
from nilflow_lab.observables import Observable, ThetaAtom

OUT = pathlib.Path(__file__).resolve().parents[1] / "src" / "nilflow_lab" / "data"


def main():
    A = stable_generator(2, 1, 3, 2)
    atom = ThetaAtom((0.3, 0.6), ((1.0, 0.2), (0.2, 0.8)), 1 + 0.5j)
    g0 = Observable.trig({(1, 0): 0.7, (0, 1): -0.4j, (1, -2): 0.3 + 0.1j, (2, 1): 0.2})
    docs = {
        "theta_n1": Observable.theta(1, [atom]),
        "coboundary_g0": g0,
        "coboundary_trig": g0.w_derivative(A),
        "toral_n0": Observable.trig({(1, 0): 1.0, (0, 1): 0.5j, (1, 1): 0.3}),
        "obstruction_e2": Observable.theta(1, [atom], LatticeSpec(2)),
        "smooth_atom": smooth_family(1),
    }
    for name, obs in docs.items():
        (OUT / f"{name}.json").write_text(json.dumps(obs.to_dict(), indent=2) + "\n")
        print("wrote", name)


if __name__ == "__main__":
    main()
