import numpy as np
import pytest

from kocp.errors import BlockNotPSDError, InputError, SizeCapExceededError
from kocp.polynomial import (
    GramCertificate,
    Polynomial,
    basis_for,
    certify_kddsos,
    gram_to_poly,
    monomial_basis,
    motzkin,
    verify_certificate,
)
from kocp.structures import Decomposition

from conftest import sample_nonnegative, square_sum
from oracles import is_sos

SQUARE = Polynomial(2, {(2, 0): 1.0, (1, 1): 2.0, (0, 2): 1.0})


def test_monomial_basis_sizes_and_order():
    assert monomial_basis(2, 1).monomials == ((0, 0), (1, 0), (0, 1))
    assert monomial_basis(1, 2).monomials == ((0,), (1,), (2,))
    assert len(monomial_basis(3, 2)) == 10
    assert len(monomial_basis(3, 3, homogeneous=True)) == 10
    degs = [sum(e) for e in monomial_basis(3, 3).monomials]
    assert degs == sorted(degs)
    with pytest.raises(SizeCapExceededError):
        monomial_basis(10, 5)
    with pytest.raises(InputError):
        monomial_basis(0, 2)


def test_gram_to_poly_examples():
    basis = monomial_basis(2, 1, homogeneous=True)
    assert gram_to_poly([[1, 1], [1, 1]], basis).terms == SQUARE.terms
    full = monomial_basis(2, 1)
    assert gram_to_poly(np.eye(3), full).terms == {(0, 0): 1.0, (2, 0): 1.0, (0, 2): 1.0}
    assert gram_to_poly(np.zeros((3, 3)), full).is_zero


def test_gram_to_poly_is_linear(rng):
    basis = monomial_basis(2, 2)
    h = len(basis)
    for _ in range(10):
        # dyadic entries keep every sum exact in floating point
        A = rng.integers(-64, 64, (h, h)) / 8.0
        B = rng.integers(-64, 64, (h, h)) / 16.0
        A, B = A + A.T, B + B.T
        assert gram_to_poly(A + B, basis).terms == (gram_to_poly(A, basis) + gram_to_poly(B, basis)).terms


def test_polynomial_basics():
    p = Polynomial(2, {(1, 0): 1.0, (0, 0): 0.0})
    assert p.terms == {(1, 0): 1.0}
    assert SQUARE.degree == 2 and SQUARE.is_homogeneous
    assert SQUARE.evaluate(np.array([[1.0, 1.0]]))[0] == pytest.approx(4.0)
    back = Polynomial.from_json(SQUARE.to_json())
    assert back.terms == SQUARE.terms
    with pytest.raises(InputError):
        Polynomial(2, {(1,): 1.0})
    with pytest.raises(InputError):
        Polynomial.from_json({"nvars": 1, "terms": [{"exp": [-1], "coef": 1.0}]})


def test_perfect_square_needs_order_two():
    ok1, cert1 = certify_kddsos(SQUARE, 1)
    assert not ok1 and cert1 is None
    ok2, cert2 = certify_kddsos(SQUARE, 2)
    assert ok2
    assert np.allclose(cert2.gram(), [[1, 1], [1, 1]], atol=1e-6)
    valid, err = verify_certificate(SQUARE, cert2)
    assert valid and err <= 1e-7


def test_sdd_gram():
    p = Polynomial(2, {(2, 0): 1.0, (1, 1): -1.0, (0, 2): 1.0})
    ok, cert = certify_kddsos(p, 2)
    assert ok and verify_certificate(p, cert)[0]
    ok1, _ = certify_kddsos(p, 1)
    assert not ok1


@pytest.mark.parametrize("k", [1, 2, 4, 10])
def test_motzkin_is_never_certified(k):
    assert certify_kddsos(motzkin(), k) == (False, None)


def test_motzkin_full_sdp_oracle():
    p = motzkin()
    assert not is_sos(p.terms, 3, 3)


def test_edge_cases():
    zero = Polynomial(2, {})
    ok, cert = certify_kddsos(zero, 1)
    assert ok and len(cert.decomposition.blocks) == 0
    assert verify_certificate(zero, cert) == (True, 0.0)
    assert certify_kddsos(Polynomial(1, {(3,): 1.0}), 1) == (False, None)
    assert certify_kddsos(Polynomial(1, {(0,): -1.0}), 1) == (False, None)
    ok, cert = certify_kddsos(Polynomial(1, {(0,): 2.0}), 1)
    assert ok and verify_certificate(Polynomial(1, {(0,): 2.0}), cert)[0]


def test_perturbed_certificate_fails():
    _, cert = certify_kddsos(SQUARE, 2)
    t, block = cert.decomposition.blocks[0]
    bumped = GramCertificate(cert.basis, Decomposition(2, [(t, block + 1e-3 * np.eye(2))]))
    valid, err = verify_certificate(SQUARE, bumped)
    assert not valid and 5e-4 <= err <= 5e-3
    bad = GramCertificate(cert.basis, Decomposition(2, [(t, -np.eye(2))]))
    with pytest.raises(BlockNotPSDError):
        verify_certificate(SQUARE, bad)


def test_certificate_json_roundtrip():
    _, cert = certify_kddsos(SQUARE, 2)
    back = GramCertificate.from_json(cert.to_json())
    assert back.basis.monomials == cert.basis.monomials
    assert verify_certificate(SQUARE, back)[0]


def test_nonhomogeneous_and_hierarchy(rng):
    p = Polynomial(2, {(0, 0): 1.0, (2, 0): 1.0, (0, 2): 1.0, (4, 0): 1.0, (2, 2): 1.0, (0, 4): 1.0})
    verdicts = []
    for k in range(1, 4):
        ok, cert = certify_kddsos(p, k)
        verdicts.append(ok)
        if ok:
            assert verify_certificate(p, cert)[0]
            assert sample_nonnegative(p, rng)
    assert verdicts[0]
    for lo, hi in zip(verdicts, verdicts[1:]):
        assert hi or not lo


def test_random_sos_agree_with_sdp_oracle():
    rng = np.random.default_rng(2024)
    for trial in range(20):
        nvars = int(rng.integers(1, 4))
        half = int(rng.integers(1, 3))
        p = square_sum(rng, nvars, half, count=2)
        h = len(basis_for(p))
        ok, cert = certify_kddsos(p, h)
        assert ok == is_sos(p.terms, nvars, half) == True  # noqa: E712
        valid, err = verify_certificate(p, cert)
        assert valid and err <= 1e-7 * max(1.0, p.max_abs_coef())
        assert sample_nonnegative(p, rng)


def test_non_sos_agree_with_sdp_oracle():
    rng = np.random.default_rng(77)
    for _ in range(5):
        p = square_sum(rng, 2, 2, count=2)
        shifted = p - Polynomial(2, {(2, 2): 10.0 * p.max_abs_coef()})
        h = len(basis_for(shifted))
        assert certify_kddsos(shifted, h)[0] == is_sos(shifted.terms, 2, 2) == False  # noqa: E712


def test_pruned_and_full_bases_agree():
    p = square_sum(np.random.default_rng(3), 2, 2, count=1)
    p = Polynomial(2, {e: c for e, c in p.terms.items() if sum(e) == 4})
    if p.is_zero:
        pytest.skip("degenerate draw")
    full = certify_kddsos(p, len(monomial_basis(2, 2)), prune=False)[0]
    pruned = certify_kddsos(p, len(basis_for(p)))[0]
    assert full == pruned
