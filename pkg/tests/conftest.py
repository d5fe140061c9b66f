import numpy as np
import pytest

from coexpress.matrix import ExpressionMatrix
from coexpress.normalize import NormalizationScheme, normalize_matrix
from coexpress.synthetic import SynthSpec, generate

# Planted fixture shared across tests: 3 balanced classes, 60 samples,
# 50 background + 10 planted genes per class, 3-sigma effect.
PLANTED_SPEC = SynthSpec(
    samples_per_class={"A": 20, "B": 20, "C": 20},
    background_genes=50,
    planted_per_class=10,
    effect_size=3.0,
    seed=0,
)


@pytest.fixture(scope="session")
def planted_bundle():
    return generate(PLANTED_SPEC)


@pytest.fixture(scope="session")
def planted_rank(planted_bundle):
    m, planted, blocks = planted_bundle
    return normalize_matrix(m, NormalizationScheme("rank")), planted


@pytest.fixture
def tiny_matrix():
    return ExpressionMatrix(
        gene_ids=("g1", "g2", "g3"),
        sample_ids=("s1", "s2", "s3", "s4"),
        labels=("LN", "LN", "Bone", "Bone"),
        values=np.array(
            [
                [1.0, 2.0, 3.0, 4.0],
                [4.0, 3.0, 2.0, 1.0],
                [1.0, 1.0, 5.0, 5.0],
            ]
        ),
    )
