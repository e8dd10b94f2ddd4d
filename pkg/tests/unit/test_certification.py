import numpy as np
import pytest

from app.network import certification
from app.network.certification import KINK_MARGIN, MODULES, SUITES, breakpoint_margin, certify, draw_case
from app.utils.error import InvalidInputError


class TestCertification:
    """Finite-difference certification suites."""

    @pytest.mark.parametrize("module", ["ops", "dfn", "loss"])
    def test_suite_passes(self, module):
        """Every case of the suite stays under the relative tolerance at eps 1e-3."""
        reports = certify(module, points=1)
        assert reports
        assert all(r.passed for r in reports), [(r.op, r.max_rel_error) for r in reports if not r.passed]
        assert all(r.op.startswith(f"{module}/") for r in reports)

    def test_step_size(self):
        """Certification uses the documented central-difference step."""
        assert certification.EPS == 1e-3

    @pytest.mark.parametrize("suite", ["ops", "head", "decoder"])
    def test_drawn_points_keep_clear_of_kinks(self, suite):
        """Drawn cases keep every ReLU, max and clamp input away from its breakpoint."""
        for index, _ in enumerate(SUITES[suite](np.random.default_rng(0))):
            assert breakpoint_margin(draw_case(suite, index, seed=0, point=0)) >= KINK_MARGIN

    def test_points_multiply_cases(self):
        """Each extra point adds one report per case."""
        single = certify("loss", points=1)
        assert len(certify("loss", points=2)) == 2 * len(single)

    def test_unknown_module(self):
        """Unknown module names are rejected."""
        with pytest.raises(InvalidInputError):
            certify("optimizer")

    def test_modules(self):
        """The CLI module list mirrors the suites."""
        assert MODULES == ("all", *SUITES)
        assert set(SUITES) == {"ops", "encoder", "dfn", "decoder", "head", "loss"}

    @pytest.mark.slow
    def test_full_certification(self):
        """All suites pass at three points each."""
        assert all(r.passed for r in certify("all"))
