import pytest
import torch

from torchformation.errors import WeightsFormatError
from torchformation.knode.io import load_weights, save_weights
from torchformation.knode.nn import Mlp
from torchformation.utils.torch import DTYPE


@pytest.fixture
def mlp():
    net = Mlp([8, 32, 32, 3])
    generator = torch.Generator().manual_seed(11)
    with torch.no_grad():
        for p in net.parameters():
            p.copy_(torch.randn(p.shape, generator=generator, dtype=DTYPE))
    return net


def test_round_trip_is_exact(mlp, tmp_path):
    path = save_weights(mlp, tmp_path / "knode.txt")
    loaded = load_weights(path)

    assert loaded.sizes == mlp.sizes
    for p, q in zip(mlp.parameters(), loaded.parameters()):
        assert torch.equal(p, q)

    x = torch.randn(20, 8, dtype=DTYPE)
    assert torch.equal(mlp(x), loaded(x))


def test_truncated_file(mlp, tmp_path):
    path = save_weights(mlp, tmp_path / "knode.txt")
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:10]) + "\n")

    with pytest.raises(WeightsFormatError) as excinfo:
        load_weights(path)
    assert excinfo.value.line == 11


def test_sizes_disagree_with_body(mlp, tmp_path):
    path = save_weights(mlp, tmp_path / "knode.txt")
    text = path.read_text().replace("sizes 8 32 32 3", "sizes 8 32 16 3")
    path.write_text(text)

    with pytest.raises(WeightsFormatError) as excinfo:
        load_weights(path)
    assert excinfo.value.field == "dimension"
    assert excinfo.value.line is not None


def test_extra_rows(mlp, tmp_path):
    path = save_weights(mlp, tmp_path / "knode.txt")
    text = path.read_text().replace("\nend\n", "\n0 0 0\nend\n")
    path.write_text(text)

    with pytest.raises(WeightsFormatError) as excinfo:
        load_weights(path)
    assert excinfo.value.field == "dimension"


def test_bad_value_names_line(mlp, tmp_path):
    path = save_weights(mlp, tmp_path / "knode.txt")
    lines = path.read_text().splitlines()
    lines[5] = " ".join(["nope"] * 8)
    path.write_text("\n".join(lines) + "\n")

    with pytest.raises(WeightsFormatError) as excinfo:
        load_weights(path)
    assert excinfo.value.line == 6
    assert "layer 0 weight" in str(excinfo.value)


def test_unsupported_version(mlp, tmp_path):
    path = save_weights(mlp, tmp_path / "knode.txt")
    path.write_text(path.read_text().replace("version 1", "version 2"))

    with pytest.raises(WeightsFormatError) as excinfo:
        load_weights(path)
    assert excinfo.value.field == "version"
