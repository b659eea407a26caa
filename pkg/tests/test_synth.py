import json
from pathlib import Path

import numpy as np
import pytest

from misattrib.errors import ConfigError
from misattrib.fairness import maui, tally_table
from misattrib.geometry import centroid, distances_to_centroid
from misattrib.ranking import rank_batch
from misattrib.store import ALL, build_haystack, load_store, sample_queries, write_store
from misattrib.synth import (
    Band,
    IsotropicGaussian,
    PlantedHubs,
    PopulationSpec,
    RadiusBands,
    generate,
    planted_unfairness,
)

FIXTURES = Path(__file__).parent / "fixtures"


def small(**kw):
    args = dict(n_authors=30, docs_per_author=4, dimension=8, seed=1)
    args.update(kw)
    return PopulationSpec(**args)


def maui10(store):
    hay = build_haystack(store)
    table = rank_batch(sample_queries(store, store.authors, 1, ALL, seed=0), hay)
    return maui(tally_table(table, 10))


class TestGenerate:
    def test_noiseless_docs_identical(self):
        store = generate(small(doc_noise_sigma=0.0))
        for a in store.authors:
            docs = store.vectors_of(a, store.doc_ids(a))
            assert np.all(docs == docs[0])

    def test_same_seed_byte_identical_files(self, tmp_path):
        for fmt, suffix in (("jsonl", ".jsonl"), ("binary-matrix", ".json")):
            paths = []
            for name in ("x", "y"):
                paths.append(write_store(generate(small()), tmp_path / name / f"s{suffix}", fmt))
            for p, q in zip(*paths):
                assert p.read_bytes() == q.read_bytes()

    def test_different_seed_differs(self):
        assert not np.array_equal(generate(small(seed=1)).vectors, generate(small(seed=2)).vectors)

    def test_store_invariants(self, tmp_path):
        store = generate(small(docs_per_author=6, query_docs=2))
        assert store.is_split and len(store.authors) == 30 and store.dimension == 8
        np.testing.assert_allclose(np.linalg.norm(store.vectors, axis=1), 1.0, atol=1e-6)
        for a in store.authors:
            sp = store.split_of(a)
            assert len(sp.haystack) == 4 and len(sp.query) == 2
            assert not set(sp.haystack) & set(sp.query)
        write_store(store, tmp_path / "s.jsonl", "jsonl")
        back = load_store(tmp_path / "s.jsonl", "jsonl")
        assert back.rows == store.rows and back.splits == store.splits
        np.testing.assert_allclose(back.vectors, store.vectors, atol=1e-7)

    def test_spec_round_trip(self):
        spec = small(generator=RadiusBands((Band(0.25, 0.0, 0.1), Band(0.75, 0.5, 0.2))))
        back = PopulationSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
        assert back.to_dict() == spec.to_dict() and back.generator == spec.generator

    @pytest.mark.parametrize("kw", [
        dict(n_authors=1),
        dict(dimension=1),
        dict(docs_per_author=4, query_docs=4),
        dict(generator=IsotropicGaussian(sigma=0.0)),
        dict(generator=RadiusBands((Band(0.5, 0.0, 0.1), Band(0.4, 0.5, 0.1)))),
        dict(generator=PlantedHubs(0, 0.5)),
        dict(generator=PlantedHubs(3, 0.0)),
    ])
    def test_invalid_spec(self, kw):
        with pytest.raises(ConfigError):
            small(**kw)

    def test_unknown_generator(self):
        with pytest.raises(ConfigError):
            PopulationSpec.from_dict({"n_authors": 5, "docs_per_author": 2, "dimension": 3,
                                      "generator": {"kind": "uniform"}})


class TestRadiusBands:
    def test_bimodal_fixture(self):
        fx = json.loads((FIXTURES / "radius_bands.json").read_text())
        p = fx["params"]
        spec = PopulationSpec(p["n_authors"], p["docs_per_author"], p["dimension"],
                              RadiusBands(tuple(Band(*b) for b in p["bands"])),
                              doc_noise_sigma=p["doc_noise_sigma"], seed=p["seed"], query_docs=p["query_docs"])
        hay = build_haystack(generate(spec))
        mat = np.stack([a.vector for a in hay])
        d = distances_to_centroid(mat, centroid(mat))
        counts, _ = np.histogram(d, bins=p["n_bins"])
        padded = np.r_[-1, counts, -1]
        maxima = [i - 1 for i in range(1, len(padded) - 1)
                  if padded[i] > padded[i - 1] and padded[i] >= padded[i + 1]]
        assert maxima == fx["local_maxima"] and len(maxima) == 2
        assert counts.tolist() == fx["histogram"]


class TestPlantedHubs:
    def test_full_pull_puts_hubs_nearest_centroid(self):
        spec = small(n_authors=200, dimension=16, doc_noise_sigma=0.0, generator=IsotropicGaussian(1.0, 0.5))
        store, hubs = planted_unfairness(spec, 0.05, 1.0)
        assert len(hubs) == 10
        hay = build_haystack(store)
        mat = np.stack([a.vector for a in hay])
        d = distances_to_centroid(mat, centroid(mat))
        is_hub = np.isin([a.author_id for a in hay], hubs)
        # all hubs share one latent, so they tie at the population minimum
        assert np.ptp(d[is_hub]) < 1e-6
        assert d[is_hub].max() <= d[~is_hub].min()

    def test_tiny_pull_is_indistinguishable(self):
        spec = small(n_authors=400, dimension=16, generator=IsotropicGaussian(1.0, 0.5), seed=3)
        store, hubs = planted_unfairness(spec, 0.1, 1e-9)
        base = generate(PopulationSpec(**{**spec.__dict__, "generator": PlantedHubs(40, 1e-9)}))
        np.testing.assert_allclose(store.vectors, base.vectors)
        hay = build_haystack(store)
        mat = np.stack([a.vector for a in hay])
        d = distances_to_centroid(mat, centroid(mat))
        is_hub = np.isin([a.author_id for a in hay], hubs)
        gap = abs(d[is_hub].mean() - d[~is_hub].mean())
        assert gap < 3 * d.std() / np.sqrt(is_hub.sum())

    def test_hub_list_in_metadata(self):
        store, hubs = planted_unfairness(small(n_authors=40), 0.1, 0.5)
        assert hubs == sorted(hubs) == store.metadata["hub_authors"] and len(hubs) == 4

    def test_rejects_bad_fraction(self):
        with pytest.raises(ConfigError):
            planted_unfairness(small(), 0.0, 0.5)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_isotropic_maui_below_planted_hubs(seed):
    spec = PopulationSpec(300, 6, 24, IsotropicGaussian(1.0, 0.5), doc_noise_sigma=0.3, seed=seed, query_docs=3)
    hub_store, _ = planted_unfairness(spec, 0.05, 0.9)
    assert maui10(generate(spec)) < maui10(hub_store)
