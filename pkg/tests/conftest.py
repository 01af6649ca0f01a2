import numpy as np
import pytest

from covsel import (
    CandidateFamily,
    ClassBounds,
    DataLaw,
    ModelSpec,
    PopulationTarget,
    complexity,
)

BOUNDS = ClassBounds(psi_min=0.25, psi_max=4.0, loading_radius=3.0)


def dense_family(p: int, q_max: int, error="diag", bounds=BOUNDS) -> CandidateFamily:
    models = [ModelSpec.dense(p, q, error, bounds) for q in range(q_max + 1)]
    return CandidateFamily(models, [complexity(m, "dense_gauge") for m in models])


def one_factor_target(p: int = 4, load: float = 0.8) -> PopulationTarget:
    lam = np.full((p, 1), load)
    return PopulationTarget(np.zeros(p), lam @ lam.T + np.eye(p))


@pytest.fixture
def target4() -> PopulationTarget:
    return one_factor_target()


@pytest.fixture
def family4() -> CandidateFamily:
    return dense_family(4, 3)


@pytest.fixture
def law4(target4) -> DataLaw:
    return DataLaw.gaussian(target4.mean, target4.cov)


def random_spd(rng: np.random.Generator, p: int, lo: float = 0.3, hi: float = 4.0) -> np.ndarray:
    """Well-conditioned random SPD matrix with eigenvalues in [lo, hi]."""
    a = rng.standard_normal((p, p))
    basis, _ = np.linalg.qr(a)
    eigs = rng.uniform(lo, hi, size=p)
    return (basis * eigs) @ basis.T


def random_admissible_point(rng: np.random.Generator, spec: ModelSpec):
    """Uniform draw strictly inside the class constraints."""
    from covsel import FactorPoint

    pat, b = spec.pattern, spec.bounds
    lam = np.zeros((pat.p, pat.q))
    rows, cols = pat.index_arrays()
    if rows.size:
        raw = rng.uniform(-1.0, 1.0, size=rows.size)
        norm = np.linalg.norm(raw)
        scale = rng.uniform(0.1, 0.9) * b.loading_radius / max(norm, 1e-12)
        lam[rows, cols] = raw * scale
    size = pat.p if spec.error_type == "diagonal" else 1
    uni = rng.uniform(b.psi_min * 1.05, b.psi_max * 0.95, size=size)
    return FactorPoint(lam, uni)
