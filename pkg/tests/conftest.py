"""Shared fixtures: deterministic synthetic-image pools reused across the
module tests and the acceptance suite so heavyweight rendering happens once
per session."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from padforge import imageio, matcher, synthgen


@dataclasses.dataclass
class HdPool:
    """Matched genuine/impostor material from the synthesizer.

    One template pair per identity (same identity, two appearance seeds) plus
    the polar unwraps of the first template of each identity.
    """

    templates_a: list
    templates_b: list
    polars_a: list
    genuine_hd: np.ndarray
    impostor_hd: np.ndarray
    impostor_pairs: list[tuple[int, int]]


N_IDENTITIES = 100
N_IMPOSTOR_PAIRS = 200


@pytest.fixture(scope="session")
def hd_pool() -> HdPool:
    rng = np.random.default_rng(0x5EED)
    templates_a, templates_b, polars_a = [], [], []
    for _ in range(N_IDENTITIES):
        identity = int(rng.integers(0, 2**63))
        app_a = int(rng.integers(0, 2**63))
        app_b = int(rng.integers(0, 2**63))
        img_a, geom_a = synthgen.synthesize_notcl(identity, app_a)
        img_b, geom_b = synthgen.synthesize_notcl(identity, app_b)
        polar_a = matcher.normalize(img_a, geom_a)
        polars_a.append(polar_a)
        templates_a.append(matcher.encode(polar_a))
        templates_b.append(matcher.build_template(img_b, geom_b))

    genuine = np.array(
        [matcher.match(a, b).hd for a, b in zip(templates_a, templates_b)]
    )
    pairs = []
    while len(pairs) < N_IMPOSTOR_PAIRS:
        i, j = rng.integers(0, N_IDENTITIES, size=2)
        if i != j:
            pairs.append((int(i), int(j)))
    impostor = np.array(
        [matcher.match(templates_a[i], templates_a[j]).hd for i, j in pairs]
    )
    return HdPool(
        templates_a=templates_a,
        templates_b=templates_b,
        polars_a=polars_a,
        genuine_hd=genuine,
        impostor_hd=impostor,
        impostor_pairs=pairs,
    )


@dataclasses.dataclass
class LeakPool:
    """Image pool for randomized leakage-filter runs.

    `gallery` maps identity -> (record, path dir); `leaks[identity]` holds
    genuine-pair records of that identity; `clean` holds fresh-identity
    records.  Records carry paths relative to `root`.
    """

    root: object
    gallery: list[imageio.SampleRecord]
    leaks: dict[str, list[imageio.SampleRecord]]
    clean: list[imageio.SampleRecord]


LEAK_POOL_GALLERY = 100
LEAKS_PER_IDENTITY = 20
LEAK_POOL_CLEAN = 2000


@pytest.fixture(scope="session")
def leak_pool(tmp_path_factory) -> LeakPool:
    root = tmp_path_factory.mktemp("leakpool")
    rng = np.random.default_rng(0xB10B)

    def emit(name, identity, appearance):
        img, geom = synthgen.synthesize_notcl(identity, appearance)
        rel = f"images/{name}.png"
        imageio.save_image(img, root / rel)
        return imageio.SampleRecord(
            id=name,
            path=rel,
            label="BF",
            source="synthetic",
            identity_tag=str(identity),
            geometry=geom,
        )

    gallery = []
    leaks: dict[str, list[imageio.SampleRecord]] = {}
    for g in range(LEAK_POOL_GALLERY):
        identity = int(rng.integers(0, 2**63))
        gallery.append(emit(f"gal_{g:03d}", identity, int(rng.integers(0, 2**63))))
        leaks[str(identity)] = [
            emit(f"leak_{g:03d}_{k:02d}", identity, int(rng.integers(0, 2**63)))
            for k in range(LEAKS_PER_IDENTITY)
        ]
    clean = [
        emit(f"clean_{i:04d}", int(rng.integers(0, 2**63)), int(rng.integers(0, 2**63)))
        for i in range(LEAK_POOL_CLEAN)
    ]
    return LeakPool(root=root, gallery=gallery, leaks=leaks, clean=clean)
