from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings

from loopsoup import energy as en
from loopsoup.energy import (
    DELTA,
    Current,
    EnergyForm,
    InvalidEnergyForm,
    SingularEnergyForm,
    build_energy,
)
from loopsoup.exact import logdet

from .conftest import energy_forms
from .oracles import frac_inverse, neumann_hitting, schur_trace

TOL = 1e-12


def _exact_green(e):
    return np.array([[float(v) for v in row] for row in frac_inverse(e.operator.tolist())])


class TestConstruction:
    def test_lam_and_operator(self, K3):
        np.testing.assert_array_equal(K3.lam, [3.0, 3.0, 3.0])
        np.testing.assert_array_equal(K3.operator, [[3, -1, -1], [-1, 3, -1], [-1, -1, 3]])

    def test_arrays_are_read_only(self, G2):
        with pytest.raises(ValueError):
            G2.conductance[0, 1] = 5.0

    @pytest.mark.parametrize(
        "C, kappa, match",
        [
            ([[0, -1], [-1, 0]], [1, 1], "negative"),
            ([[0, 1], [2, 0]], [1, 1], "asymmetric"),
            ([[1, 1], [1, 0]], [1, 1], "diagonal"),
            ([[0, 1], [1, 0]], [-1, 1], "negative"),
            ([[0, np.nan], [np.nan, 0]], [1, 1], "non-finite"),
            ([[0, 1], [1, 0]], [1, 1, 1], "shape"),
        ],
    )
    def test_invalid_forms(self, C, kappa, match):
        with pytest.raises(InvalidEnergyForm, match=match):
            EnergyForm.from_matrices(C, kappa, ["a", "b"] if len(kappa) == 2 else None)

    def test_no_killing_is_singular(self):
        with pytest.raises(SingularEnergyForm):
            build_energy(["a", "b"], [("a", "b", 1.0)], {})

    def test_disconnected_component_without_killing_is_singular(self):
        with pytest.raises(SingularEnergyForm):
            build_energy(["a", "b", "c"], [("a", "b", 1.0)], {"a": 1.0})

    @pytest.mark.parametrize("names", [["a", "a"], ["a", DELTA]])
    def test_bad_vertex_names(self, names):
        with pytest.raises(InvalidEnergyForm):
            EnergyForm.from_matrices([[0, 1], [1, 0]], [1, 1], names)

    def test_duplicate_edge(self):
        with pytest.raises(InvalidEnergyForm, match="duplicate"):
            build_energy(["a", "b"], [("a", "b", 1.0), ("b", "a", 2.0)], {"a": 1})

    def test_mapping_input(self, G2):
        e = build_energy(["a", "b"], {("a", "b"): 1.0}, {"a": 1.0, "b": 1.0})
        np.testing.assert_array_equal(e.operator, G2.operator)

    def test_energy_value(self, G2):
        # e(f) = 1/2 sum C (f_x - f_y)^2 over ordered pairs + sum kappa f^2
        assert G2.energy([1.0, 0.0]) == pytest.approx(2.0)
        assert G2.energy([1.0, 1.0]) == pytest.approx(2.0)
        assert G2.energy([1.0, -1.0]) == pytest.approx(6.0)


class TestGreen:
    def test_g2_exact(self, G2):
        np.testing.assert_allclose(G2.green_matrix, [[2 / 3, 1 / 3], [1 / 3, 2 / 3]], rtol=TOL)

    def test_k3_exact(self, K3):
        G = K3.green_matrix
        np.testing.assert_allclose(np.diag(G), 0.5, rtol=TOL)
        assert G[0, 1] == pytest.approx(0.25, rel=TOL)
        assert frac_inverse(K3.operator.tolist())[0][1] == Fraction(1, 4)

    @pytest.mark.parametrize("name", ["G2", "K3", "SQ1", "GRID3"])
    def test_matches_rational_inverse(self, name, request):
        e = request.getfixturevalue(name)
        np.testing.assert_allclose(e.green_matrix, _exact_green(e), rtol=1e-12)

    def test_kernel_lookup_by_name(self, K3):
        assert en.green(K3)["a", "c"] == pytest.approx(0.25)

    def test_green_chi(self, G2):
        np.testing.assert_allclose(en.green_chi(G2, [1, 1]).matrix, [[3 / 8, 1 / 8], [1 / 8, 3 / 8]], rtol=TOL)
        d = np.linalg.det(np.eye(2) + G2.green_matrix @ np.diag([0.7, 0.0]))
        assert d == pytest.approx(1.4666666666666666, rel=TOL)

    def test_green_chi_mapping_and_bad_input(self, G2):
        assert en.green_chi(G2, {"a": 1, "b": 1})["a", "b"] == pytest.approx(1 / 8)
        with pytest.raises(ValueError):
            en.green_chi(G2, [-1, 0])
        with pytest.raises(ValueError):
            en.green_chi(G2, [1, 0, 0])

    def test_killed_determinant_ratio(self, K3):
        # D = {a, b}: det(G^D) = det(G) / det(G restricted to {c})
        GD = en.green_killed(K3, ["a", "b"]).matrix
        assert np.linalg.det(GD) == pytest.approx(1 / 8, rel=TOL)
        G = K3.green_matrix
        assert np.linalg.det(GD) == pytest.approx(np.linalg.det(G) / G[2, 2], rel=TOL)

    def test_killed_needs_nonempty(self, K3):
        with pytest.raises(ValueError):
            en.green_killed(K3, [])


class TestHitting:
    def test_k3(self, K3):
        H = en.hitting_matrix(K3, ["a", "b"])
        assert H[2, 0] == pytest.approx(1 / 3, rel=TOL)
        np.testing.assert_array_equal(H[:2], np.eye(2))

    def test_g2(self, G2):
        assert en.hitting_matrix(G2, ["a"])[1, 0] == pytest.approx(0.5, rel=TOL)

    @pytest.mark.parametrize("F", [["a"], ["a", "c"], ["b", "d"], ["a", "b", "c"]])
    def test_against_neumann_series(self, SQ1, F):
        f = SQ1.idx(F)
        np.testing.assert_allclose(
            en.hitting_matrix(SQ1, F), neumann_hitting(SQ1.conductance, SQ1.killing, f), atol=1e-12
        )

    def test_rejects_cemetery_and_empty(self, G2):
        with pytest.raises(ValueError):
            en.hitting_matrix(G2, [DELTA])
        with pytest.raises(ValueError):
            en.hitting_matrix(G2, [])


class TestResurrected:
    def test_dipole_ab(self, G2):
        np.testing.assert_allclose(en.resurrected_green(G2, {"a": 1, "b": -1}), [1 / 3, -1 / 3, 0], atol=TOL)

    def test_dipole_a_cemetery(self, G2):
        v = en.resurrected_green(G2, {"a": 1, DELTA: -1})
        assert v[2] == pytest.approx(-1 / 3, rel=TOL)

    def test_nonzero_charge_rejected(self, G2):
        with pytest.raises(ValueError, match="charge"):
            en.resurrected_green(G2, {"a": 1})


class TestTransfer:
    def test_fixture_values(self, G2, K3):
        assert en.transfer_entries(G2, [(0, 1)])[0, 0] == pytest.approx(2 / 3, rel=TOL)
        assert en.transfer_entries(K3, [(0, 1)])[0, 0] == pytest.approx(0.5, rel=TOL)
        assert en.transfer_entries(K3, [(0, 1), (1, 2)])[0, 1] == pytest.approx(-0.25, rel=TOL)

    @pytest.mark.parametrize("name", ["G2", "K3", "SQ1", "GRID3"])
    def test_gram_psd_and_resurrected_route(self, name, request):
        e = request.getfixturevalue(name)
        T = en.transfer_matrix(e)
        K = T.matrix
        np.testing.assert_allclose(K, K.T, atol=1e-14)
        assert np.linalg.eigvalsh(K).min() > -1e-12
        np.testing.assert_allclose(en.transfer_via_resurrected(e, list(T.links)), K, atol=1e-12)

    def test_orientation_flips_sign(self, K3):
        K = en.transfer_entries(K3, [(0, 1), (1, 0), (1, 2)])
        np.testing.assert_allclose(K[0], -K[1], atol=1e-15)

    def test_oriented_listing(self, K3):
        T = en.transfer_matrix(K3, oriented=True)
        assert len(T.links) == 3 + 3 + 3


class TestTwisted:
    def test_zero_current_is_green(self, K3):
        np.testing.assert_allclose(en.twisted_green(K3, Current.zero(K3)).matrix, K3.green_matrix, atol=1e-15)

    def test_k3_pi_cycle(self, K3):
        w = Current.from_entries(K3, [("a", "b", np.pi), ("b", "c", np.pi), ("c", "a", np.pi)])
        d = np.linalg.det(en.twisted_operator(K3, w))
        assert d.real == pytest.approx(20.0, rel=TOL)
        assert abs(d.imag) < 1e-12

    @pytest.mark.parametrize("theta", [0.3, 1.7, np.pi])
    def test_g2_any_current(self, G2, theta):
        w = Current.from_entries(G2, [("a", "b", theta)])
        assert np.linalg.det(en.twisted_operator(G2, w)).real == pytest.approx(3.0, rel=TOL)

    def test_current_validation(self, G2):
        with pytest.raises(ValueError, match="antisymmetric"):
            Current(np.ones((3, 3)), G2)
        e = build_energy(["a", "b", "c"], [("a", "b", 1.0)], {"a": 1, "b": 1, "c": 1})
        with pytest.raises(ValueError, match="outside"):
            Current.from_entries(e, [("a", "c", 1.0)])


class TestTrace:
    def test_k3(self, K3):
        t = en.trace_energy(K3, ["a", "b"])
        assert t.conductance[0, 1] == pytest.approx(4 / 3, rel=TOL)
        assert t.lam[0] == pytest.approx(8 / 3, rel=TOL)

    def test_g2(self, G2):
        t = en.trace_energy(G2, ["a"])
        assert t.lam[0] == pytest.approx(1.5, rel=TOL)
        assert t.green_matrix[0, 0] == pytest.approx(2 / 3, rel=TOL)

    @pytest.mark.parametrize("F", [["a"], ["a", "c"], ["a", "b", "c"]])
    def test_schur_complement(self, SQ1, F):
        f = SQ1.idx(F)
        t = en.trace_energy(SQ1, F)
        np.testing.assert_allclose(t.operator, schur_trace(SQ1.conductance, SQ1.killing, f), atol=1e-12)

    def test_full_set_is_identity(self, K3):
        t = en.trace_energy(K3, K3.vertices)
        np.testing.assert_array_equal(t.operator, K3.operator)


class TestRelabelRestrict:
    def test_relabel_keeps_matrices(self, G2):
        r = G2.relabel({"a": "x", "b": "y"})
        assert r.vertices == ("x", "y")
        np.testing.assert_array_equal(r.operator, G2.operator)

    def test_restrict_adds_lost_conductance_to_killing(self, K3):
        r = K3.restrict(["a", "b"])
        np.testing.assert_allclose(r.operator, K3.operator[:2, :2])


@settings(max_examples=60, deadline=None)
@given(energy_forms())
def test_green_inverts_operator(e):
    G = e.green_matrix
    np.testing.assert_allclose(G @ e.operator, np.eye(e.n), atol=1e-9)
    # G kappa is the probability of eventual killing, which is 1 on a connected form
    np.testing.assert_allclose(G @ e.killing, 1.0, atol=1e-9)
    assert np.all(G > 0)


@settings(max_examples=40, deadline=None)
@given(energy_forms(max_n=7))
def test_trace_green_is_restriction(e):
    F = list(e.vertices[: max(1, e.n // 2)])
    f = e.idx(F)
    t = en.trace_energy(e, F)
    np.testing.assert_allclose(t.green_matrix, e.green_matrix[np.ix_(f, f)], rtol=1e-9)
    # Z_e = Z_{e^D} * Z_{e^F}
    d = [i for i in range(e.n) if i not in f]
    lhs = -logdet(e.operator)
    rhs = -logdet(t.operator) - (logdet(e.operator[np.ix_(d, d)]) if d else 0.0)
    assert lhs == pytest.approx(rhs, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(energy_forms(max_n=7))
def test_transfer_psd_and_orientation(e):
    links = e.links()
    K = en.transfer_entries(e, links)
    assert np.linalg.eigvalsh(K).min() > -1e-9
    flipped = [(b, a) for a, b in links]
    np.testing.assert_allclose(en.transfer_entries(e, flipped), K, atol=1e-10)
