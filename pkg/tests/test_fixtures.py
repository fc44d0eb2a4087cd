import numpy as np
import pytest

from ldif.fixtures import KINDS, analytic_inside, box, chair, icosphere, make_fixture, torus
from ldif.geom import InsideTester, distance_to_mesh


class TestShapes:
    def test_icosphere_counts(self):
        assert len(icosphere(3).triangles) == 20 * 4 ** 3
        assert np.allclose(np.linalg.norm(icosphere(2).vertices, axis=1), 1.0)

    def test_unit_box_volume(self):
        assert box().signed_volume() == pytest.approx(1.0, abs=1e-9)

    def test_torus_genus_one(self):
        t = torus()
        assert t.euler_characteristic() == 0
        assert t.is_watertight()

    def test_torus_volume(self):
        # 2 pi^2 R r^2, less the polygonal shrinkage
        t = torus(1.0, 0.25, 128, 64)
        assert t.signed_volume() == pytest.approx(2 * np.pi ** 2 * 0.25 ** 2, rel=0.01)

    def test_chair_volume_and_symmetry(self):
        c = chair()
        assert c.signed_volume() == pytest.approx(0.352, abs=1e-9)
        lo, hi = c.bounds()
        assert np.allclose(lo[0], -hi[0])

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_fixture("teapot")


@pytest.mark.parametrize("kind", KINDS)
class TestFixtureContract:
    def test_watertight_oriented_connected(self, kind):
        mesh = make_fixture(kind)
        assert mesh.is_watertight()
        assert mesh.signed_volume() > 0
        assert mesh.connected_components() == 1

    def test_parity_agrees_with_analytic_membership(self, kind):
        mesh = make_fixture(kind)
        lo, hi = mesh.bounds()
        pad = 0.1 * (hi - lo)
        p = np.random.default_rng(0).uniform(lo - pad, hi + pad, (10_000, 3))
        # polygonal fixtures differ from their ideal shape only very close to the surface
        far = distance_to_mesh(mesh, p) > 0.03
        got = InsideTester(mesh).contains(p)
        assert np.array_equal(got[far], analytic_inside(kind, p[far]))
