import numpy as np
import pytest

from errors import WeightsError
from models import MrmConfig
from net.weights import (
    format_weights,
    identity_net_weights,
    parse_weights,
    random_net_weights,
    read_weights,
    weight_sections,
    write_weights,
)

CFG = MrmConfig(C=2, T=2, L=2)


def test_weights_file_round_trip(tmp_path):
    weights = random_net_weights(CFG, seed=3)
    path = write_weights(weights, tmp_path / "w.mrmw")
    loaded = read_weights(path, expected=CFG)
    original, restored = weight_sections(weights), weight_sections(loaded)
    assert list(original) == list(restored)
    for name in original:
        np.testing.assert_array_equal(original[name], restored[name])


def test_random_weights_are_seeded():
    a = weight_sections(random_net_weights(CFG, seed=1))
    b = weight_sections(random_net_weights(CFG, seed=1))
    c = weight_sections(random_net_weights(CFG, seed=2))
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not all(np.array_equal(a[k], c[k]) for k in a)


def test_section_shapes():
    sections = weight_sections(identity_net_weights(CFG))
    n = CFG.N
    assert sections["mrm.fuse.kernel"].shape == (1, 1, n, 2 * n)
    assert sections["mrm.semantic.q_dw.kernel"].shape == (1, n, 3, 3)
    assert sections["esem.spatial_pw.bias"].shape == (1, 1, 1, 1)
    assert sections["esem.fuse_pw.kernel"].shape == (1, 1, 2 * n, 2 * n)


def _drop_section(text: str, name: str) -> str:
    lines = text.splitlines()
    start = lines.index(f"@ {name}")
    end = start + 1
    while end < len(lines) and not lines[end].startswith("@"):
        end += 1
    return "\n".join(lines[:start] + lines[end:]) + "\n"


def test_missing_section_rejected():
    text = _drop_section(format_weights(identity_net_weights(CFG)), "msem.gate_pw.bias")
    with pytest.raises(WeightsError, match="missing weight section msem.gate_pw.bias"):
        parse_weights(text)


def test_extra_section_rejected():
    text = format_weights(identity_net_weights(CFG)) + "@ extra.thing\nT4 1 1 1 1\n0.0\n"
    with pytest.raises(WeightsError, match="unknown weight sections: extra.thing"):
        parse_weights(text)


def test_duplicate_section_rejected():
    text = format_weights(identity_net_weights(CFG))
    text += "@ mrm.fuse.bias\nT4 1 1 1 4\n0 0 0 0\n"
    with pytest.raises(WeightsError, match="duplicate"):
        parse_weights(text)


def test_misshapen_section_rejected():
    text = format_weights(identity_net_weights(CFG)).replace(
        "@ mrm.fuse.bias\nT4 1 1 1 4\n", "@ mrm.fuse.bias\nT4 1 1 2 2\n"
    )
    with pytest.raises(WeightsError, match="mrm.fuse.bias"):
        parse_weights(text)


def test_header_checks(tmp_path):
    with pytest.raises(WeightsError, match="MRMW1"):
        parse_weights("T4 1 1 1 1 0\n")
    with pytest.raises(WeightsError, match="config header"):
        parse_weights("MRMW1 3 2 2\n")
    path = write_weights(identity_net_weights(CFG), tmp_path / "w.mrmw")
    with pytest.raises(WeightsError, match="expected C=2 T=6 L=1"):
        read_weights(path, expected=MrmConfig(C=2, T=6, L=1))
