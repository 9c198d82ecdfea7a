import numpy as np
import pytest

from vosub import kernels
from vosub._jit import HAVE_NUMBA
from vosub.geometry import build_disk_mesh

pytestmark = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")


@pytest.fixture(scope="module")
def mesh():
    return build_disk_mesh(3)


def test_element_stiffness_paths_agree(mesh):
    s = np.linspace(0.5, 2.0, mesh.n_triangles)
    a1, K1 = kernels.element_stiffness_numpy(mesh.vertices, mesh.triangles, s)
    a2, K2 = kernels.element_stiffness_numba(mesh.vertices, mesh.triangles, s)
    assert np.allclose(a1, a2, rtol=1e-14)
    assert np.allclose(K1, K2, rtol=1e-13, atol=1e-14)


def test_reference_triangle_stiffness():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    t = np.array([[0, 1, 2]])
    ref = np.array([[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]])
    for fn in (kernels.element_stiffness_numpy, kernels.element_stiffness_numba):
        a, K = fn(v, t, np.ones(1))
        assert a[0] == pytest.approx(0.5)
        assert np.allclose(K[0], ref)


def test_corner_lump_paths_agree(mesh, rng):
    cv = rng.random((mesh.n_triangles, 3))
    b1 = kernels.corner_lump_numpy(mesh.triangles, mesh.areas, cv, mesh.n_vertices)
    b2 = kernels.corner_lump_numba(mesh.triangles, mesh.areas, cv, mesh.n_vertices)
    assert np.allclose(b1, b2, rtol=1e-13)


def test_history_dot_paths_agree(rng):
    w = rng.random(37)
    D = rng.standard_normal((37, 50))
    o1 = kernels.history_dot_numpy(w, D, np.empty(50))
    o2 = kernels.history_dot_numba(w, D, np.empty(50))
    assert np.allclose(o1, o2, rtol=1e-12)
    assert np.allclose(o1, w @ D)


def test_numpy_fallback_flag():
    import subprocess
    import sys
    code = "import vosub._jit as j, vosub.kernels as k; print(j.backend(), k.history_dot.__name__)"
    out = subprocess.run([sys.executable, "-c", code], env={"VOSUB_NO_NUMBA": "1", "PATH": ""},
                         capture_output=True, text=True, check=True).stdout.split()
    assert out == ["numpy", "history_dot_numpy"]
