"""Index file round-trips and the disk-resident read path."""

import logging
import struct

import numpy as np
import pytest

from lidann import (
    BuildParams,
    IndexFormatError,
    MemorySource,
    ParameterError,
    RecordSizeError,
    VectorDataset,
    beam_search,
    build,
    load_index,
    open_disk_index,
    save_index,
    uniform_alphas,
)
from lidann.disk import DEFAULT_BLOCK_SIZE, _record_size


def _make_index(tmp_path, n=200, dim=8, seed=0, max_degree=8, elements="float32"):
    rng = np.random.default_rng(seed)
    if elements == "float32":
        vals = rng.standard_normal((n, dim)).astype(np.float32)
        ds = VectorDataset.from_array(vals)
    else:
        vals = rng.integers(0, 256, size=(n, dim)).astype(np.uint8)
        ds = VectorDataset(count=n, dim=dim, elements="uint8",
                           values=vals.astype(np.float32))
    alphas = rng.uniform(1.0, 1.5, n)
    g = build(ds, BuildParams(max_degree=max_degree, beam_build=20, seed=seed), alphas)
    path = tmp_path / "test.mcgi"
    save_index(g, ds, alphas, path)
    return g, ds, alphas, path


class TestRoundTrip:
    def test_save_load_identity(self, tmp_path):
        g, ds, alphas, path = _make_index(tmp_path)
        g2, ds2, alphas2 = load_index(path)
        assert g2.n == g.n
        assert g2.entry_point == g.entry_point
        assert g2.max_degree == g.max_degree
        for a, b in zip(g.neighbors, g2.neighbors):
            assert np.array_equal(np.asarray(a), b)
        assert ds2.values.tobytes() == ds.values.tobytes()
        assert np.array_equal(alphas2, alphas)

    def test_uint8_round_trip(self, tmp_path):
        g, ds, alphas, path = _make_index(tmp_path, elements="uint8", dim=16)
        g2, ds2, alphas2 = load_index(path)
        assert ds2.elements == "uint8"
        assert ds2.values.tobytes() == ds.values.tobytes()
        # uint8 records store one byte per element
        assert _record_size(16, "uint8", 8) == 16 + 8 + 4 + 64

    def test_file_is_block_aligned(self, tmp_path):
        g, ds, alphas, path = _make_index(tmp_path, n=50)
        assert path.stat().st_size == DEFAULT_BLOCK_SIZE * 51

    def test_empty_graph_rejected(self, tmp_path):
        from lidann import Graph
        g = Graph(n=0, entry_point=0, neighbors=[], max_degree=4)
        ds = VectorDataset(count=0, dim=2, elements="float32",
                           values=np.empty((0, 2), np.float32))
        with pytest.raises(ParameterError):
            save_index(g, ds, np.empty(0), tmp_path / "e.mcgi")


class TestSizing:
    def test_gist_like_record_overflows_default_block(self, tmp_path):
        """960 float32 dims plus adjacency cannot fit 4096 bytes."""
        rng = np.random.default_rng(1)
        ds = VectorDataset.from_array(rng.standard_normal((4, 960)).astype(np.float32))
        from lidann import Graph
        g = Graph(n=4, entry_point=0, max_degree=64,
                  neighbors=[np.array([v for v in range(4) if v != u], np.int32)
                             for u in range(4)])
        with pytest.raises(RecordSizeError) as exc:
            save_index(g, ds, uniform_alphas(4, 1.2), tmp_path / "g.mcgi")
        assert exc.value.required_block_size == 8192
        save_index(g, ds, uniform_alphas(4, 1.2), tmp_path / "g.mcgi", block_size=8192)
        g2, ds2, _ = load_index(tmp_path / "g.mcgi")
        assert ds2.values.tobytes() == ds.values.tobytes()

    def test_bad_block_size(self, tmp_path):
        g, ds, alphas, path = _make_index(tmp_path, n=10)
        with pytest.raises(ParameterError, match="power of two"):
            save_index(g, ds, alphas, tmp_path / "b.mcgi", block_size=3000)


class TestFormatErrors:
    def test_bad_magic(self, tmp_path):
        _, _, _, path = _make_index(tmp_path, n=10)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(IndexFormatError, match="magic"):
            load_index(path)

    def test_truncation_reports_offset(self, tmp_path):
        _, _, _, path = _make_index(tmp_path, n=10)
        raw = path.read_bytes()
        path.write_bytes(raw[:-100])
        with pytest.raises(IndexFormatError, match="truncated"):
            load_index(path)

    def test_corrupt_degree_names_node(self, tmp_path):
        g, ds, alphas, path = _make_index(tmp_path, n=20, dim=4, max_degree=6)
        raw = bytearray(path.read_bytes())
        # degree field of node 7 sits after the vector and alpha
        offset = DEFAULT_BLOCK_SIZE * (1 + 7) + 4 * 4 + 8
        struct.pack_into("<I", raw, offset, 9999)
        path.write_bytes(bytes(raw))
        with pytest.raises(IndexFormatError, match="node 7"):
            load_index(path)

    def test_corrupt_block_detected_by_reader(self, tmp_path):
        g, ds, alphas, path = _make_index(tmp_path, n=20, dim=4, max_degree=6)
        reader = open_disk_index(path)
        raw = bytearray(path.read_bytes())
        offset = DEFAULT_BLOCK_SIZE * (1 + 3) + 4 * 4 + 8
        struct.pack_into("<I", raw, offset, 7777)
        path.write_bytes(bytes(raw))
        with pytest.raises(IndexFormatError, match="node 3"):
            reader.neighbor_ids(3)
        reader.close()


class TestDiskSearchEquivalence:
    def test_disk_matches_memory_mode(self, tmp_path):
        g, ds, alphas, path = _make_index(tmp_path, n=300, dim=8, seed=3)
        mem = MemorySource(g, ds)
        rng = np.random.default_rng(4)
        with open_disk_index(path) as disk:
            for _ in range(25):
                q = rng.standard_normal(8)
                a = beam_search(mem, q, beam=20, k=5)
                b = beam_search(disk, q, beam=20, k=5)
                assert a.ids.tolist() == b.ids.tolist()
                np.testing.assert_array_equal(a.distances, b.distances)
                assert a.stats.nodes_read == b.stats.nodes_read

    def test_one_block_read_per_expansion(self, tmp_path):
        g, ds, alphas, path = _make_index(tmp_path, n=150, dim=4, seed=5)
        with open_disk_index(path) as disk:
            res = beam_search(disk, np.zeros(4, np.float32), beam=15, k=3)
            assert res.stats.nodes_read == res.stats.hops

    def test_unbuffered_mode_works_or_falls_back(self, tmp_path, caplog):
        g, ds, alphas, path = _make_index(tmp_path, n=100, dim=4, seed=6)
        with caplog.at_level(logging.WARNING):
            reader = open_disk_index(path, mode="unbuffered")
        if not reader.unbuffered_active:
            # fallback must be announced, never silent
            assert any("buffered" in r.message for r in caplog.records)
        mem = MemorySource(g, ds)
        rng = np.random.default_rng(7)
        for _ in range(10):
            q = rng.standard_normal(4)
            a = beam_search(mem, q, beam=10, k=3)
            b = beam_search(reader, q, beam=10, k=3)
            assert a.ids.tolist() == b.ids.tolist()
        reader.close()

    def test_concurrent_readers(self, tmp_path):
        from concurrent.futures import ThreadPoolExecutor
        g, ds, alphas, path = _make_index(tmp_path, n=200, dim=6, seed=8)
        rng = np.random.default_rng(9)
        queries = rng.standard_normal((40, 6))
        mem = MemorySource(g, ds)
        expected = [beam_search(mem, q, beam=15, k=3).ids.tolist() for q in queries]
        with open_disk_index(path) as disk:
            with ThreadPoolExecutor(max_workers=8) as pool:
                got = list(pool.map(
                    lambda q: beam_search(disk, q, beam=15, k=3).ids.tolist(), queries
                ))
        assert got == expected

    def test_uncapped_graph_refused(self, tmp_path):
        rng = np.random.default_rng(10)
        ds = VectorDataset.from_array(rng.standard_normal((50, 4)).astype(np.float32))
        p = BuildParams(max_degree=4, beam_build=30, seed=0, degree_uncapped=True)
        g = build(ds, p, uniform_alphas(50, 1.2))
        if max(len(nb) for nb in g.neighbors) > 4:
            with pytest.raises(ParameterError, match="uncapped"):
                save_index(g, ds, uniform_alphas(50, 1.2), tmp_path / "u.mcgi")
