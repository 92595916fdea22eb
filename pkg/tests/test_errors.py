"""Exception taxonomy and its mapping to user-facing failure classes."""

import pytest

from hopfrom.exceptions import (AmbiguousModeError, ConfigError,
                                CycleNotFoundError, EigenSolveError,
                                HopfRomError, NumericalError,
                                SingularSystemError)


class TestHierarchy:
    def test_config_and_numerical_are_package_errors(self):
        assert issubclass(ConfigError, HopfRomError)
        assert issubclass(NumericalError, HopfRomError)

    def test_config_is_not_numerical(self):
        # the CLI maps ConfigError to exit 2 and everything else to exit 3,
        # so the two branches must be disjoint
        assert not issubclass(ConfigError, NumericalError)
        assert not issubclass(NumericalError, ConfigError)

    def test_specialized_numerical_errors(self):
        for exc in (EigenSolveError, SingularSystemError, CycleNotFoundError):
            assert issubclass(exc, NumericalError)
        assert issubclass(AmbiguousModeError, EigenSolveError)


class TestRaisingPaths:
    def test_nonpositive_re_is_config(self, cheap_fem):
        from hopfrom.fem import steady_solve
        with pytest.raises(ConfigError):
            steady_solve(cheap_fem, -5.0)

    def test_point_outside_mesh_is_config(self, cheap_fem):
        with pytest.raises(ConfigError):
            cheap_fem.locate((10.0, 10.0))

    def test_bad_mesh_text_is_config(self):
        from hopfrom.fem.mesh import parse_mesh_text
        with pytest.raises(ConfigError):
            parse_mesh_text("not a mesh file")

    def test_graph_artifact_in_polar_api_is_config(self, cheap_rom5_graph):
        from hopfrom.reduced import to_polar
        with pytest.raises(ConfigError):
            to_polar(cheap_rom5_graph)

    def test_missing_cycle_is_numerical(self, cheap_rom5):
        from hopfrom.reduced import mean_tke
        with pytest.raises(CycleNotFoundError):
            mean_tke(cheap_rom5, 30.0)  # far below critical: no cycle
