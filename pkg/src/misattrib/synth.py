"""Synthetic embedding populations with controlled geometry.

Each author gets a latent direction drawn from one of three generators; each
document is the unit latent plus isotropic Gaussian noise, re-normalized.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence, Union

import numpy as np

from ._rng import derive_rng
from .errors import ConfigError, DegenerateError
from .store import EmbeddingStore, Split


@dataclass(frozen=True)
class IsotropicGaussian:
    mean_norm: float = 1.0
    sigma: float = 0.5
    mean_direction: tuple[float, ...] | None = None
    kind: str = field(default="isotropic_gaussian", init=False)


@dataclass(frozen=True)
class Band:
    fraction: float
    radial_offset: float
    sigma: float


@dataclass(frozen=True)
class RadiusBands:
    """Latent = mean direction + radial_offset * (random orthogonal unit) + sigma * noise."""

    bands: tuple[Band, ...]
    mean_direction: tuple[float, ...] | None = None
    kind: str = field(default="radius_bands", init=False)


@dataclass(frozen=True)
class PlantedHubs:
    """Isotropic population whose first-drawn ``n_hubs`` authors are pulled toward the mean direction."""

    n_hubs: int
    hub_pull: float
    mean_norm: float = 1.0
    sigma: float = 0.5
    mean_direction: tuple[float, ...] | None = None
    kind: str = field(default="planted_hubs", init=False)


Generator = Union[IsotropicGaussian, RadiusBands, PlantedHubs]


@dataclass(frozen=True)
class PopulationSpec:
    n_authors: int
    docs_per_author: int
    dimension: int
    generator: Generator = field(default_factory=IsotropicGaussian)
    doc_noise_sigma: float = 0.3
    seed: int = 0
    query_docs: int | None = None

    def __post_init__(self):
        if self.n_authors < 2:
            raise ConfigError("n_authors must be >= 2")
        if self.docs_per_author < 1:
            raise ConfigError("docs_per_author must be >= 1")
        if self.dimension < 2:
            raise ConfigError("dimension must be >= 2")
        if self.doc_noise_sigma < 0:
            raise ConfigError("doc_noise_sigma must be >= 0")
        if not 0 <= self.n_query_docs < self.docs_per_author:
            raise ConfigError("query_docs must leave at least one haystack document")
        g = self.generator
        if isinstance(g, (IsotropicGaussian, PlantedHubs)) and g.sigma <= 0:
            raise ConfigError("sigma must be > 0")
        if isinstance(g, RadiusBands):
            if not g.bands:
                raise ConfigError("radius_bands needs at least one band")
            if not math.isclose(sum(b.fraction for b in g.bands), 1.0, abs_tol=1e-9):
                raise ConfigError("band fractions must sum to 1")
            if any(b.sigma <= 0 or b.fraction < 0 for b in g.bands):
                raise ConfigError("band sigmas must be > 0 and fractions >= 0")
        if isinstance(g, PlantedHubs):
            if not 0 < g.n_hubs < self.n_authors:
                raise ConfigError("n_hubs must be in (0, n_authors)")
            if not 0 < g.hub_pull <= 1:
                raise ConfigError("hub_pull must be in (0, 1]")
        if g.mean_direction is not None and len(g.mean_direction) != self.dimension:
            raise ConfigError("mean_direction length must equal dimension")

    @property
    def n_query_docs(self) -> int:
        return self.docs_per_author // 2 if self.query_docs is None else self.query_docs

    def to_dict(self) -> dict:
        d = asdict(self)
        d["query_docs"] = self.n_query_docs
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "PopulationSpec":
        data = dict(data)
        gen = dict(data.pop("generator", {"kind": "isotropic_gaussian"}))
        kind = gen.pop("kind", "isotropic_gaussian")
        if gen.get("mean_direction") is not None:
            gen["mean_direction"] = tuple(gen["mean_direction"])
        try:
            if kind == "isotropic_gaussian":
                generator = IsotropicGaussian(**gen)
            elif kind == "radius_bands":
                gen["bands"] = tuple(
                    Band(**b) if isinstance(b, dict) else Band(*b) for b in gen["bands"]
                )
                generator = RadiusBands(**gen)
            elif kind == "planted_hubs":
                generator = PlantedHubs(**gen)
            else:
                raise ConfigError(f"unknown generator kind {kind!r}")
            return cls(generator=generator, **data)
        except TypeError as exc:
            raise ConfigError(f"invalid population spec: {exc}") from None


def _unit(v: np.ndarray, what: str) -> np.ndarray:
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm <= 1e-12):
        raise DegenerateError(f"degenerate spec: zero-norm {what}")
    return v / norm


def _mean_direction(g: Generator, d: int) -> np.ndarray:
    if g.mean_direction is None:
        e = np.zeros(d)
        e[0] = 1.0
        return e
    return _unit(np.asarray(g.mean_direction, dtype=np.float64), "mean_direction")


def _band_sizes(fractions: Sequence[float], n: int) -> list[int]:
    raw = [f * n for f in fractions]
    sizes = [math.floor(r) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def _latents(spec: PopulationSpec, rng: np.random.Generator) -> tuple[np.ndarray, list[int]]:
    g, n, d = spec.generator, spec.n_authors, spec.dimension
    mu = _mean_direction(g, d)
    hubs: list[int] = []
    if isinstance(g, RadiusBands):
        assignment = np.repeat(np.arange(len(g.bands)), _band_sizes([b.fraction for b in g.bands], n))
        assignment = rng.permutation(assignment)
        offsets = np.array([g.bands[i].radial_offset for i in assignment])
        sigmas = np.array([g.bands[i].sigma for i in assignment])
        raw = rng.standard_normal((n, d))
        perp = raw - np.outer(raw @ mu, mu)
        perp = _unit(perp, "orthogonal direction")
        noise = rng.standard_normal((n, d))
        lat = mu + offsets[:, None] * perp + sigmas[:, None] * noise
        return _unit(lat, "latent"), hubs

    lat = _unit(g.mean_norm * mu + g.sigma * rng.standard_normal((n, d)), "latent")
    if isinstance(g, PlantedHubs):
        hubs = sorted(rng.choice(n, size=g.n_hubs, replace=False).tolist())
        pop_dir = _unit(lat.mean(axis=0), "population mean direction")
        lat[hubs] = _unit((1.0 - g.hub_pull) * lat[hubs] + g.hub_pull * pop_dir, "hub latent")
    return lat, hubs


def generate(spec: PopulationSpec) -> EmbeddingStore:
    """Draw a pre-split store; a pure function of ``spec`` (including its seed)."""
    rng = derive_rng(spec.seed, "synth")
    latents, hubs = _latents(spec, rng)
    n, m, d = spec.n_authors, spec.docs_per_author, spec.dimension
    noise = rng.standard_normal((n, m, d)) * spec.doc_noise_sigma
    docs = _unit(latents[:, None, :] + noise, "document vector")

    aw = len(str(n - 1))
    dw = len(str(m - 1))
    author_ids = [f"author{i:0{aw}d}" for i in range(n)]
    doc_ids = [f"d{j:0{dw}d}" for j in range(m)]
    n_hay = m - spec.n_query_docs
    splits = {a: Split(tuple(doc_ids[:n_hay]), tuple(doc_ids[n_hay:])) for a in author_ids}
    return EmbeddingStore(
        [a for a in author_ids for _ in range(m)],
        doc_ids * n,
        docs.reshape(n * m, d),
        splits=splits,
        source="synthetic",
        metadata={
            "synthetic_spec": spec.to_dict(),
            "hub_authors": [author_ids[i] for i in hubs],
        },
    )


def planted_unfairness(
    spec: PopulationSpec, hub_fraction: float, hub_pull: float
) -> tuple[EmbeddingStore, list[str]]:
    """Generate ``spec``'s isotropic population with a planted hub group.

    Returns the store and the sorted hub author ids.
    """
    if not 0 < hub_fraction < 1:
        raise ConfigError("hub_fraction must be in (0, 1)")
    base = spec.generator
    if not isinstance(base, (IsotropicGaussian, PlantedHubs)):
        raise ConfigError("planted_unfairness needs an isotropic base generator")
    n_hubs = max(1, round(hub_fraction * spec.n_authors))
    hub_spec = PopulationSpec(
        n_authors=spec.n_authors,
        docs_per_author=spec.docs_per_author,
        dimension=spec.dimension,
        generator=PlantedHubs(n_hubs, hub_pull, base.mean_norm, base.sigma, base.mean_direction),
        doc_noise_sigma=spec.doc_noise_sigma,
        seed=spec.seed,
        query_docs=spec.query_docs,
    )
    store = generate(hub_spec)
    return store, list(store.metadata["hub_authors"])
