"""Regenerate tests/baselines.json from the current build (run by hand)."""

import json
import sys
from pathlib import Path

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE))

from conftest import certificate, flat_to_hemisphere  # noqa: E402
from diskpsc.isotopy import spectral_sweep  # noqa: E402
from diskpsc.moser import moser_flow  # noqa: E402


def summary(cert):
    return {
        "A": cert.A,
        "min_R_g": cert.min_R_g,
        "margins": {c.name: c.margin for c in cert.checks},
    }


def main():
    out = {
        "warped_fh_conformal": summary(certificate("warped_fh", "weak-min", "conformal")),
        "warped_fh_moser": summary(certificate("warped_fh", "weak-min", "moser")),
        "outward_constant_0.05": summary(certificate("outward", "outward-bent", "constant", 0.05)),
        "outward_fh_0.02": summary(certificate("outward", "outward-bent", "fh", 0.02)),
        "product_strong_min": summary(certificate("product", "strong-min")),
        "sweep_fh_lambda_star": spectral_sweep(flat_to_hemisphere()).lambda_star,
        "moser_fh_max_volume_drift": moser_flow(flat_to_hemisphere()).max_volume_drift,
    }
    (HERE / "baselines.json").write_text(json.dumps(out, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
