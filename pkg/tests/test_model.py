import numpy as np
import pytest

from qrsim import synthetic
from qrsim.lob import InvalidParameterError
from qrsim.model import IntensityTable, QRModel, SizeDistribution, parse_channel, saqr_channels


def test_size_distribution_basics():
    d = SizeDistribution.from_sample([1, 1, 2])
    assert d.as_dict() == pytest.approx({1: 2 / 3, 2: 1 / 3})
    assert d.mean() == pytest.approx(4 / 3)
    assert np.allclose(d.cdf_row(3), [0, 2 / 3, 1, 1])
    assert SizeDistribution.from_json(d.to_json()).as_dict() == d.as_dict()
    x = d.sample(np.random.default_rng(0), 1000)
    assert set(np.unique(x)) <= {1, 2}


def test_table_validation():
    with pytest.raises(InvalidParameterError):
        IntensityTable.from_rates(1, {"L": [-1.0, 1.0]})
    t = IntensityTable.from_rates(1, {"L": [1.0, 2.0], "C": [0.0, 1.0], "M": [0.0, 0.5]})
    assert t.n_max == 1 and t.rate("L", 5) == 2.0
    assert np.array_equal(t.marginal("M"), [0.0, 0.5])


def test_channels():
    assert saqr_channels(2) == ("L:1", "L:2", "C:1", "C:2", "M:1", "M:2")
    e, s = parse_channel("M:3")
    assert e.name == "M" and s == 3


@pytest.mark.parametrize("make", [synthetic.bund_like_model, synthetic.saqr_ground_truth])
def test_model_json_roundtrip(tmp_path, make):
    m = make()
    m.save(tmp_path / "m.json")
    back = QRModel.load(tmp_path / "m.json")
    assert back.dumps() == m.dumps()
    assert back.variant == m.variant and back.K == m.K


def test_birth_death_stationary_law():
    pi = synthetic.birth_death_stationary([3.0, 1.5, 1.5], [0.0, 1.0, 1.2], [0.0, 1.0, 0.8], n_states=50)
    assert pi.sum() == pytest.approx(1.0)
    assert pi[1] / pi[0] == pytest.approx(3.0 / 2.0)
    assert pi[3] / pi[2] == pytest.approx(1.5 / 2.0)
