import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msrcomplete.forward import WaveContext
from msrcomplete.geometry import Kite, circle, random_shape
from msrcomplete.msr import (
    PHASED,
    PHASELESS,
    SUBSAMPLED,
    BlockPartition,
    DirectionGrid,
    LimitedInput,
    MsrMatrix,
    assemble_msr,
    assemble_retrieved,
    dataset_header_size,
    iter_dataset,
    make_limited_input,
    partition,
    read_dataset,
    read_dataset_header,
    reassemble,
    subsample_indices,
    write_dataset,
)

CTX = WaveContext(5.0, 128)


def index_matrix(n):
    i, j = np.indices((n, n))
    return (10 * i + j).astype(complex)


def test_grid_negation():
    g = DirectionGrid(8)
    assert np.allclose(g.directions[g.negate(np.arange(8))], -g.directions)
    with pytest.raises(ValueError):
        DirectionGrid(7)


def test_disk_matrix_is_circulant():
    F = assemble_msr(circle(1.0), CTX, DirectionGrid(16)).entries
    for i in range(16):
        assert np.allclose(np.roll(F[i], -i), F[0], rtol=1e-10, atol=1e-12)


def test_reciprocity_index_identity():
    M = assemble_msr(random_shape(11), CTX, DirectionGrid(32))
    assert M.reciprocity_residual() <= 1e-8


def test_assembly_is_deterministic():
    a = assemble_msr(Kite(), CTX, DirectionGrid(32)).entries
    b = assemble_msr(Kite(), CTX, DirectionGrid(32)).entries
    assert np.array_equal(a, b)


def test_msr_matrix_is_read_only():
    M = MsrMatrix(np.eye(4), DirectionGrid(4), 1.0)
    with pytest.raises(ValueError):
        M.entries[0, 0] = 2.0
    with pytest.raises(ValueError):
        MsrMatrix(np.eye(3), DirectionGrid(4), 1.0)


def test_partition_bookkeeping():
    F11, F12, F21, F22 = partition(index_matrix(4), 2)
    assert np.array_equal(F12, [[2, 3], [12, 13]])
    assert np.array_equal(F21, [[20, 21], [30, 31]])


def test_partition_edge_case():
    F22 = partition(index_matrix(6), 5)[3]
    assert F22.shape == (1, 1)
    with pytest.raises(ValueError):
        BlockPartition(6, 6)


@settings(max_examples=30, deadline=None)
@given(half=st.integers(1, 8), data=st.data())
def test_partition_round_trip(half, data):
    n = 2 * half
    m1 = data.draw(st.integers(1, n - 1))
    F = np.random.default_rng(n + m1).standard_normal((n, n)) + 0j
    assert np.array_equal(reassemble(*partition(F, m1)), F)


def test_phaseless_of_unimodular_is_ones():
    phi = np.random.default_rng(0).uniform(0, 6, (8, 8))
    inp = make_limited_input(np.exp(1j * phi), 4, PHASELESS)
    assert np.allclose(inp.payload, 1.0)
    assert inp.channels.shape == (4, 4, 1)


def test_phased_channels():
    F = index_matrix(4) * (1 + 2j)
    inp = make_limited_input(F, 2, PHASED)
    assert np.array_equal(inp.channels[..., 0], F[:2, 2:].real)
    assert np.array_equal(inp.channels[..., 1], F[:2, 2:].imag)


def test_subsample_full_width_is_identity():
    F = index_matrix(8)
    inp = make_limited_input(F, 4, SUBSAMPLED, subsample_p=4, seed=5)
    assert inp.rows == (0, 1, 2, 3) and inp.cols == (0, 1, 2, 3)
    assert np.array_equal(inp.payload, F[:4, 4:])


def test_subsample_seeded():
    assert subsample_indices(16, 16, 10, 3) == subsample_indices(16, 16, 10, 3)
    assert subsample_indices(16, 16, 10, 3) != subsample_indices(16, 16, 10, 4)
    with pytest.raises(ValueError):
        subsample_indices(4, 4, 5, 0)


def test_assemble_with_true_blocks_is_exact():
    F = np.random.default_rng(1).standard_normal((8, 8)) * (1 + 1j)
    for mode in (PHASED, PHASELESS):
        inp = make_limited_input(F, 3, mode)
        assert np.array_equal(assemble_retrieved(inp, *partition(F, 3)), F)


def test_zero_predictions_keep_true_f12():
    F = index_matrix(6) + 1
    inp = make_limited_input(F, 3, PHASED)
    R = assemble_retrieved(inp, *[np.zeros((3, 3))] * 4)
    assert np.array_equal(R[:3, 3:], F[:3, 3:])
    R[:3, 3:] = 0
    assert not R.any()


def test_subsampled_overwrite_count():
    F = index_matrix(8) + 1
    inp = make_limited_input(F, 4, SUBSAMPLED, subsample_p=2, seed=0)
    R = assemble_retrieved(inp, *[np.zeros((4, 4))] * 4)
    assert np.count_nonzero(R[:4, 4:] == F[:4, 4:]) == 4
    assert np.count_nonzero(R) == 4


def test_limited_input_rejects_negative_moduli():
    with pytest.raises(ValueError):
        LimitedInput(PHASELESS, -np.ones((2, 2)), 4, 2)


def test_dataset_round_trip(tmp_path):
    recs = []
    for i in range(3):
        s = random_shape(2, index=i)
        recs.append((s, assemble_msr(s, CTX, DirectionGrid(8)).entries))
    path = tmp_path / "d.msrd"
    write_dataset(path, 5.0, 8, recs)
    k, two_m, back = read_dataset(path)
    assert (k, two_m) == (5.0, 8)
    for (s, F), (s2, F2) in zip(recs, back):
        assert s == s2 and np.array_equal(F, F2)
    assert read_dataset_header(path.read_bytes()) == (5.0, 8, 3)
    expected = dataset_header_size() + 3 * (37 + 16 * 5 + 8 * 8 * 16)
    assert path.stat().st_size == expected


def test_dataset_truncated_file_fails(tmp_path):
    recs = [(circle(1.0), np.eye(4, dtype=complex))]
    path = tmp_path / "d.msrd"
    write_dataset(path, 1.0, 4, recs)
    raw = path.read_bytes()
    (tmp_path / "cut.msrd").write_bytes(raw[:-5])
    with pytest.raises(Exception):
        list(iter_dataset(tmp_path / "cut.msrd"))
    (tmp_path / "bad.msrd").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        read_dataset(tmp_path / "bad.msrd")
